//! Writing embedding and impact matrices to CSV or the tensor container.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::container::write_container;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Formats `v` with 6 significant digits, like C's `%.6g`.
pub fn format_g6(v: f32) -> String {
    let v = v as f64;
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".into() } else { v.to_string() };
    }
    let exp = v.abs().log10().floor() as i32;
    // rounding can carry into the next power of ten
    let rounded: f64 = format!("{v:.5e}").parse().unwrap();
    let exp = if rounded.abs() >= 10f64.powi(exp + 1) { exp + 1 } else { exp };
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        let s = format!("{v:.5e}");
        let (mantissa, e) = s.split_once('e').unwrap();
        let e: i32 = e.parse().unwrap();
        let sign = if e < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa.to_string()), e.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

/// One line per row, comma-separated.
pub fn matrix_to_csv(m: &Tensor) -> String {
    let mut out = String::new();
    for row in m.iter_rows() {
        let cells: Vec<String> = row.iter().map(|&v| format_g6(v)).collect();
        writeln!(out, "{}", cells.join(",")).unwrap();
    }
    out
}

pub fn write_matrix_csv(path: impl AsRef<Path>, m: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, matrix_to_csv(m)).map_err(|e| Error::io(path, e))
}

/// Stores `m` under `name` with string metadata.
pub fn write_matrix_container(
    path: impl AsRef<Path>,
    name: &str,
    m: &Tensor,
    metadata: &BTreeMap<String, String>,
) -> Result<()> {
    let tensors = BTreeMap::from([(name.to_string(), m.clone())]);
    write_container(path, &tensors, metadata)
}
