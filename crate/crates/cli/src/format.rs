//! Number formatting shared by every output.

/// `v` with 9 significant digits: fixed notation for magnitudes in
/// [1e−4, 1e9), scientific otherwise.
pub fn sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let e = v.abs().log10().floor() as i32;
    if (-4..9).contains(&e) {
        let decimals = (8 - e) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.8e}")
    }
}

/// `v` rounded to 9 significant digits, for JSON output.
pub fn round9(v: f64) -> f64 {
    if v.is_finite() {
        sig9(v).parse().unwrap_or(v)
    } else {
        v
    }
}

pub fn csv_row(values: &[f64]) -> String {
    values.iter().map(|&v| sig9(v)).collect::<Vec<_>>().join(",")
}
