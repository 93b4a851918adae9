//! Locale-independent number formatting shared by all CSV writers.

/// Nine significant digits in scientific notation, `.` as decimal separator.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.8e}")
    }
}
