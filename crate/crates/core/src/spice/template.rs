use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TemplateError {
    #[error("no value for placeholder {{{0}}}")]
    Unmapped(String),
    #[error("malformed placeholder at byte {0}")]
    Malformed(usize),
    #[error("value for {name} is not finite: {value}")]
    NonFinite { name: String, value: f64 },
}

/// Netlist text with `{name}` placeholders.
#[derive(Debug, Clone, PartialEq)]
pub struct NetlistTemplate {
    text: String,
    /// Literal text and placeholder names, alternating from a literal.
    pieces: Vec<Piece>,
    required: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
enum Piece {
    Text(String),
    Slot(String),
}

fn is_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl NetlistTemplate {
    /// Scans `text` for placeholders; any `{` or `}` outside a well-formed
    /// placeholder is rejected.
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut pieces = Vec::new();
        let mut required = BTreeSet::new();
        let mut literal = String::new();
        let mut rest = text;
        let mut offset = 0;
        while let Some(open) = rest.find(['{', '}']) {
            if rest.as_bytes()[open] == b'}' {
                return Err(TemplateError::Malformed(offset + open));
            }
            let close = rest[open..]
                .find('}')
                .map(|c| open + c)
                .ok_or(TemplateError::Malformed(offset + open))?;
            let name = &rest[open + 1..close];
            if !is_name(name) {
                return Err(TemplateError::Malformed(offset + open));
            }
            literal.push_str(&rest[..open]);
            pieces.push(Piece::Text(std::mem::take(&mut literal)));
            pieces.push(Piece::Slot(name.to_string()));
            required.insert(name.to_string());
            offset += close + 1;
            rest = &rest[close + 1..];
        }
        literal.push_str(rest);
        pieces.push(Piece::Text(literal));
        Ok(NetlistTemplate {
            text: text.to_string(),
            pieces,
            required,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn required_params(&self) -> &BTreeSet<String> {
        &self.required
    }

    /// Substitutes placeholder values formatted with SI suffixes.
    pub fn render(&self, values: &BTreeMap<String, f64>) -> Result<String, TemplateError> {
        let mut out = String::with_capacity(self.text.len());
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(name) => {
                    let v = *values
                        .get(name)
                        .ok_or_else(|| TemplateError::Unmapped(name.clone()))?;
                    if !v.is_finite() {
                        return Err(TemplateError::NonFinite {
                            name: name.clone(),
                            value: v,
                        });
                    }
                    out.push_str(&si_format(v));
                }
            }
        }
        Ok(out)
    }

    /// Renders a design point: `mapping` sends parameter names to
    /// placeholder names.
    pub fn render_point(
        &self,
        names: &[&str],
        values: &[f64],
        mapping: &BTreeMap<String, String>,
    ) -> Result<String, TemplateError> {
        let mut by_slot = BTreeMap::new();
        for (name, v) in names.iter().zip(values) {
            if let Some(slot) = mapping.get(*name) {
                by_slot.insert(slot.clone(), *v);
            }
        }
        self.render(&by_slot)
    }
}

const SUFFIXES: [(i32, &str); 10] = [
    (-15, "f"),
    (-12, "p"),
    (-9, "n"),
    (-6, "u"),
    (-3, "m"),
    (0, ""),
    (3, "k"),
    (6, "meg"),
    (9, "g"),
    (12, "t"),
];

/// SPICE number with the SI suffix that puts the mantissa in `[1, 1000)`,
/// up to 9 significant digits. Magnitudes beyond the suffix table fall back
/// to exponent notation.
pub fn si_format(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let sign = if v < 0.0 { "-" } else { "" };
    let a = v.abs();
    let exp3 = ((a.log10() / 3.0).floor() as i32) * 3;
    let Some(idx) = SUFFIXES.iter().position(|(e, _)| *e == exp3) else {
        return format!("{v:e}");
    };
    let mut idx = idx;
    let mut mantissa = a / 10f64.powi(SUFFIXES[idx].0);
    // Guard against log10 landing one decade off at exact powers.
    if mantissa < 1.0 && idx > 0 {
        idx -= 1;
        mantissa = a / 10f64.powi(SUFFIXES[idx].0);
    }
    let digits = |m: f64| -> usize {
        if m >= 100.0 {
            6
        } else if m >= 10.0 {
            7
        } else {
            8
        }
    };
    let mut text = format!("{:.*}", digits(mantissa), mantissa);
    if text.parse::<f64>().unwrap_or(0.0) >= 1000.0 && idx + 1 < SUFFIXES.len() {
        idx += 1;
        mantissa = a / 10f64.powi(SUFFIXES[idx].0);
        text = format!("{:.*}", digits(mantissa), mantissa);
    }
    let text = if text.contains('.') {
        text.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        text
    };
    format!("{sign}{text}{}", SUFFIXES[idx].1)
}
