//! ASCII raw-file reading and writing.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ParseError {
    /// 1-based line number; 0 when the input is empty.
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        line,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: String,
}

/// One analysis block. `data[v][p]` is variable `v` at point `p`; complex
/// values are stored as magnitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct Plot {
    pub title: String,
    pub name: String,
    pub flags: String,
    pub complex: bool,
    pub variables: Vec<Variable>,
    pub data: Vec<Vec<f64>>,
}

impl Plot {
    pub fn n_points(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    /// Column for `name`, case-insensitive.
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.variables
            .iter()
            .position(|v| v.name.eq_ignore_ascii_case(name))
            .map(|i| self.data[i].as_slice())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTables {
    pub plots: Vec<Plot>,
}

impl SimTables {
    /// First plot whose name matches, case-insensitive.
    pub fn plot(&self, name: &str) -> Option<&Plot> {
        self.plots.iter().find(|p| p.name.eq_ignore_ascii_case(name))
    }
}

struct Lines<'a> {
    lines: Vec<&'a str>,
    pos: usize,
}

impl<'a> Lines<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.lines.get(self.pos).copied()
    }

    fn next(&mut self) -> Option<(usize, &'a str)> {
        let l = self.lines.get(self.pos).copied()?;
        self.pos += 1;
        Some((self.pos, l))
    }

    fn last_line(&self) -> usize {
        self.lines.len()
    }
}

fn header(line: &str) -> Option<(&str, &str)> {
    let (k, v) = line.split_once(':')?;
    Some((k.trim(), v.trim()))
}

fn parse_count(v: &str, line: usize, what: &str) -> Result<usize, ParseError> {
    v.parse()
        .or_else(|_| err(line, format!("invalid {what}: {v:?}")))
}

fn parse_value(tok: &str, complex: bool, line: usize) -> Result<f64, ParseError> {
    let bad = || ParseError {
        line,
        message: format!("invalid value {tok:?}"),
    };
    match tok.split_once(',') {
        Some((re, im)) => {
            let re: f64 = re.parse().map_err(|_| bad())?;
            let im: f64 = im.parse().map_err(|_| bad())?;
            Ok(re.hypot(im))
        }
        None if complex => err(line, format!("expected re,im pair, got {tok:?}")),
        None => tok.parse().map_err(|_| bad()),
    }
}

/// Parses every plot in an ASCII raw file.
///
/// Each plot needs `Plotname:`, `Flags:`, `No. Variables:`, `No. Points:`,
/// a `Variables:` block and a `Values:` block; `Title:` is optional and
/// other header lines are skipped. Input that ends before the declared
/// number of points is reported at its last line.
pub fn parse_ascii_raw(text: &str) -> Result<SimTables, ParseError> {
    if text.trim().is_empty() {
        return err(0, "empty input");
    }
    let mut lines = Lines {
        lines: text.lines().collect(),
        pos: 0,
    };
    let mut plots = Vec::new();
    loop {
        while matches!(lines.peek(), Some(l) if l.trim().is_empty()) {
            lines.next();
        }
        if lines.peek().is_none() {
            break;
        }
        plots.push(parse_plot(&mut lines)?);
    }
    Ok(SimTables { plots })
}

fn parse_plot(lines: &mut Lines) -> Result<Plot, ParseError> {
    let start = lines.pos + 1;
    let mut title = String::new();
    let mut name = None;
    let mut flags = None;
    let mut n_vars = None;
    let mut n_points = None;
    loop {
        let Some((ln, line)) = lines.next() else {
            return err(lines.last_line(), "header ended before Variables:");
        };
        let Some((key, value)) = header(line) else {
            if line.trim().is_empty() {
                continue;
            }
            return err(ln, format!("expected a header line, got {line:?}"));
        };
        match key {
            "Title" => title = value.to_string(),
            "Plotname" => name = Some(value.to_string()),
            "Flags" => flags = Some(value.to_string()),
            "No. Variables" => {
                let n = parse_count(value, ln, "variable count")?;
                if n == 0 {
                    return err(ln, "a plot needs at least one variable");
                }
                n_vars = Some(n);
            }
            "No. Points" => n_points = Some(parse_count(value, ln, "point count")?),
            "Binary" => return err(ln, "binary raw files are not supported"),
            "Values" => return err(ln, "Values: before Variables:"),
            "Variables" => {
                let missing = [
                    ("Plotname", name.is_none()),
                    ("Flags", flags.is_none()),
                    ("No. Variables", n_vars.is_none()),
                    ("No. Points", n_points.is_none()),
                ];
                if let Some((field, _)) = missing.iter().find(|(_, m)| *m) {
                    return err(ln, format!("missing {field} in header starting at line {start}"));
                }
                if !value.is_empty() {
                    return err(ln, "unexpected text after Variables:");
                }
                break;
            }
            _ => {}
        }
    }
    let (name, flags) = (name.unwrap(), flags.unwrap());
    let (n_vars, n_points) = (n_vars.unwrap(), n_points.unwrap());
    let complex = flags.split_whitespace().any(|f| f.eq_ignore_ascii_case("complex"));

    let mut variables = Vec::with_capacity(n_vars);
    for i in 0..n_vars {
        let Some((ln, line)) = lines.next() else {
            return err(lines.last_line(), format!("expected {n_vars} variables, found {i}"));
        };
        let mut tok = line.split_whitespace();
        let idx = tok.next().and_then(|t| t.parse::<usize>().ok());
        let (Some(idx), Some(vname), Some(kind)) = (idx, tok.next(), tok.next()) else {
            return err(ln, format!("malformed variable line {line:?}"));
        };
        if idx != i {
            return err(ln, format!("variable index {idx}, expected {i}"));
        }
        if variables.iter().any(|v: &Variable| v.name == vname) {
            return err(ln, format!("duplicate variable {vname}"));
        }
        variables.push(Variable {
            name: vname.to_string(),
            kind: kind.to_string(),
        });
    }
    match lines.next() {
        Some((_, l)) if header(l).is_some_and(|(k, v)| k == "Values" && v.is_empty()) => {}
        Some((ln, l)) => return err(ln, format!("expected Values:, got {l:?}")),
        None => return err(lines.last_line(), "missing Values:"),
    }

    let mut data = vec![Vec::with_capacity(n_points); n_vars];
    // Each point is its index followed by one token per variable, spread
    // over any number of lines.
    let mut point = 0;
    let mut var = 0;
    let mut expect_index = true;
    while point < n_points {
        let Some((ln, line)) = lines.next() else {
            return err(
                lines.last_line(),
                format!("data ends after {point} of {n_points} points"),
            );
        };
        for tok in line.split_whitespace() {
            if point == n_points {
                return err(ln, "more values than declared points");
            }
            if expect_index {
                match tok.parse::<usize>() {
                    Ok(idx) if idx == point => expect_index = false,
                    _ => return err(ln, format!("expected point index {point}, got {tok:?}")),
                }
                continue;
            }
            data[var].push(parse_value(tok, complex, ln)?);
            var += 1;
            if var == n_vars {
                var = 0;
                point += 1;
                expect_index = true;
            }
        }
    }
    Ok(Plot {
        title,
        name,
        flags,
        complex,
        variables,
        data,
    })
}

/// Writes tables in the layout [`parse_ascii_raw`] reads. Complex plots get a
/// zero imaginary part.
pub fn write_ascii_raw(tables: &SimTables) -> String {
    let mut out = String::new();
    for p in &tables.plots {
        let _ = writeln!(out, "Title: {}", p.title);
        let _ = writeln!(out, "Plotname: {}", p.name);
        let _ = writeln!(out, "Flags: {}", p.flags);
        let _ = writeln!(out, "No. Variables: {}", p.variables.len());
        let _ = writeln!(out, "No. Points: {}", p.n_points());
        let _ = writeln!(out, "Variables:");
        for (i, v) in p.variables.iter().enumerate() {
            let _ = writeln!(out, "\t{i}\t{}\t{}", v.name, v.kind);
        }
        let _ = writeln!(out, "Values:");
        for k in 0..p.n_points() {
            for (i, col) in p.data.iter().enumerate() {
                let v = if p.complex {
                    format!("{:.17e},{:.17e}", col[k], 0.0)
                } else {
                    format!("{:.17e}", col[k])
                };
                if i == 0 {
                    let _ = writeln!(out, " {k}\t{v}");
                } else {
                    let _ = writeln!(out, "\t{v}");
                }
            }
        }
    }
    out
}
