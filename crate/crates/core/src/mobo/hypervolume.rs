//! Exact dominated hypervolume (minimization) by WFG-style recursion.
//!
//! Points are processed in descending order of the last objective. Every
//! later point is then no worse in that objective, so the exclusive volume of
//! point `p` factors into its depth along the last axis times an exclusive
//! volume one dimension down, computed from the limit set of later points.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HvError {
    #[error("point {index} has {found} objectives, reference has {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("reference point has no objectives")]
    EmptyReference,
}

/// Volume dominated by `front` and bounded by `reference`. Coordinates worse
/// than the reference are clipped to it.
pub fn hypervolume(front: &[Vec<f64>], reference: &[f64]) -> Result<f64, HvError> {
    let m = reference.len();
    if m == 0 {
        return Err(HvError::EmptyReference);
    }
    let mut flat = Vec::with_capacity(front.len() * m);
    for (index, p) in front.iter().enumerate() {
        if p.len() != m {
            return Err(HvError::DimensionMismatch {
                index,
                expected: m,
                found: p.len(),
            });
        }
        flat.extend(p.iter().zip(reference).map(|(v, r)| v.min(*r)));
    }
    Ok(wfg(&nondominated(&flat, m), m, reference))
}

/// Volume dominated by `point` but by none of `others` (flat, stride
/// `reference.len()`, already clipped).
pub(crate) fn exclusive_contribution(point: &[f64], others: &[f64], reference: &[f64]) -> f64 {
    let m = reference.len();
    let base = box_volume(point, reference);
    if base <= 0.0 {
        return 0.0;
    }
    if others
        .chunks_exact(m)
        .any(|q| q.iter().zip(point).all(|(a, b)| a <= b))
    {
        return 0.0;
    }
    SCRATCH.with(|cell| {
        let mut scratch = cell.borrow_mut();
        let mut top = std::mem::take(&mut scratch.top);
        top.limit.clear();
        for q in others.chunks_exact(m) {
            top.limit.extend(q.iter().zip(point).map(|(a, b)| a.max(*b)));
        }
        nondominated_into(&top.limit, m, &mut top.reduced, &mut top.order);
        let covered = wfg_with(&top.reduced, m, reference, &mut scratch.levels);
        scratch.top = top;
        (base - covered).max(0.0)
    })
}

fn box_volume(p: &[f64], reference: &[f64]) -> f64 {
    p.iter()
        .zip(reference)
        .map(|(v, r)| (r - v).max(0.0))
        .product()
}

/// Drops every point weakly dominated by another (first of duplicates kept).
pub(crate) fn nondominated(pts: &[f64], d: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(pts.len());
    nondominated_into(pts, d, &mut out, &mut Vec::new());
    out
}

/// A weak dominator precedes its victim in lexicographic order, so one pass
/// against the points already kept suffices. Output is in that order.
fn nondominated_into(pts: &[f64], d: usize, out: &mut Vec<f64>, order: &mut Vec<usize>) {
    let n = pts.len() / d;
    order.clear();
    order.extend(0..n);
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&pts[a * d..(a + 1) * d], &pts[b * d..(b + 1) * d]);
        pa.iter()
            .zip(pb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    out.clear();
    for &i in order.iter() {
        let p = &pts[i * d..(i + 1) * d];
        let dominated = out
            .chunks_exact(d)
            .any(|q| q.iter().zip(p).all(|(a, b)| a <= b));
        if !dominated {
            out.extend_from_slice(p);
        }
    }
}

#[derive(Default)]
struct Level {
    order: Vec<usize>,
    sorted: Vec<f64>,
    limit: Vec<f64>,
    reduced: Vec<f64>,
}

/// Reusable buffers: one level per recursion depth plus one for the caller.
#[derive(Default)]
struct Scratch {
    top: Level,
    levels: Vec<Level>,
}

thread_local! {
    static SCRATCH: std::cell::RefCell<Scratch> = std::cell::RefCell::new(Scratch::default());
}

fn wfg(pts: &[f64], d: usize, reference: &[f64]) -> f64 {
    SCRATCH.with(|cell| wfg_with(pts, d, reference, &mut cell.borrow_mut().levels))
}

fn wfg_with(pts: &[f64], d: usize, reference: &[f64], levels: &mut Vec<Level>) -> f64 {
    let n = pts.len() / d;
    match (n, d) {
        (0, _) => 0.0,
        (1, _) => box_volume(pts, reference),
        (_, 1) => reference[0] - pts.iter().copied().fold(f64::INFINITY, f64::min),
        (_, 2) => hv2d(pts, reference),
        (_, 3) => hv3d(pts, reference),
        _ => {
            if levels.len() <= d {
                levels.resize_with(d + 1, Level::default);
            }
            let mut lvl = std::mem::take(&mut levels[d]);
            let last = d - 1;
            lvl.order.clear();
            lvl.order.extend(0..n);
            lvl.order.sort_by(|&a, &b| {
                pts[b * d + last]
                    .total_cmp(&pts[a * d + last])
                    .then(a.cmp(&b))
            });
            lvl.sorted.clear();
            for &i in &lvl.order {
                lvl.sorted.extend_from_slice(&pts[i * d..(i + 1) * d]);
            }
            let sub_ref = &reference[..last];
            let mut total = 0.0;
            for k in 0..n {
                let p = &lvl.sorted[k * d..(k + 1) * d];
                let depth = reference[last] - p[last];
                let base = box_volume(&p[..last], sub_ref);
                if depth <= 0.0 || base <= 0.0 {
                    continue;
                }
                lvl.limit.clear();
                for q in lvl.sorted[(k + 1) * d..].chunks_exact(d) {
                    lvl.limit
                        .extend(q[..last].iter().zip(&p[..last]).map(|(a, b)| a.max(*b)));
                }
                nondominated_into(&lvl.limit, last, &mut lvl.reduced, &mut lvl.order);
                total += depth * (base - wfg_with(&lvl.reduced, last, sub_ref, levels));
            }
            levels[d] = lvl;
            total
        }
    }
}

fn hv2d(pts: &[f64], reference: &[f64]) -> f64 {
    let mut pairs: Vec<(f64, f64)> = pts.chunks_exact(2).map(|p| (p[0], p[1])).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut volume = 0.0;
    let mut ceiling = reference[1];
    for (x, y) in pairs {
        if y < ceiling {
            volume += (reference[0] - x) * (ceiling - y);
            ceiling = y;
        }
    }
    volume
}

/// Sweep upward in the third objective, keeping the 2-D staircase of all
/// points seen so far (sorted by first objective, second strictly falling).
fn hv3d(pts: &[f64], reference: &[f64]) -> f64 {
    let mut order: Vec<usize> = (0..pts.len() / 3).collect();
    order.sort_by(|&a, &b| pts[a * 3 + 2].total_cmp(&pts[b * 3 + 2]));
    let mut stairs: Vec<(f64, f64)> = Vec::with_capacity(order.len());
    let mut area = 0.0;
    let mut volume = 0.0;
    for (k, &i) in order.iter().enumerate() {
        let (x, y) = (pts[i * 3], pts[i * 3 + 1]);
        // First staircase point with first objective > x.
        let pos = stairs.partition_point(|s| s.0 <= x);
        let covered = pos > 0 && stairs[pos - 1].1 <= y;
        if !covered {
            let mut end = pos;
            while end < stairs.len() && stairs[end].1 >= y {
                end += 1;
            }
            stairs.splice(pos..end, std::iter::once((x, y)));
            area = 0.0;
            let mut ceiling = reference[1];
            for &(sx, sy) in &stairs {
                area += (reference[0] - sx) * (ceiling - sy);
                ceiling = sy;
            }
        }
        let next = order.get(k + 1).map_or(reference[2], |&j| pts[j * 3 + 2]);
        volume += area * (next - pts[i * 3 + 2]);
    }
    volume
}
