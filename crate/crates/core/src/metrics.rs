//! Correlations and embedding-space geometry.
//!
//! Everything is accumulated in f64. Pairwise statistics sum per-row partials
//! in row order so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{cosine_slices, l2_norm, Tensor};

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "correlation",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "correlation needs at least 2 pairs, got {}",
            a.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::UndefinedCorrelation("input contains NaN or Inf".into()));
    }
    Ok(())
}

/// Product-moment correlation.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::UndefinedCorrelation("one input is constant".into()));
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    pearson(&average_ranks(a), &average_ranks(b))
}

fn unit(v: &[f32]) -> Result<Vec<f64>> {
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::DegenerateVector(format!("cannot normalize vector with norm {norm}")));
    }
    Ok(v.iter().map(|&x| x as f64 / norm).collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn unit_rows(m: &Tensor) -> Result<Vec<Vec<f64>>> {
    if m.shape().len() != 2 || m.rows() < 2 {
        return Err(Error::InsufficientData(format!(
            "need a matrix with at least 2 rows, got shape {:?}",
            m.shape()
        )));
    }
    m.iter_rows().map(unit).collect()
}

/// Mean of `‖x − y‖²` over positive pairs, after L2 normalization.
pub fn alignment<A: AsRef<[f32]>>(pairs: &[(A, A)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData("alignment needs at least one pair".into()));
    }
    let mut total = 0.0;
    for (x, y) in pairs {
        let (x, y) = (x.as_ref(), y.as_ref());
        if x.len() != y.len() {
            return Err(Error::Shape {
                op: "alignment",
                left: vec![x.len()],
                right: vec![y.len()],
            });
        }
        total += sq_dist(&unit(x)?, &unit(y)?);
    }
    Ok(total / pairs.len() as f64)
}

/// Sum of `f(i, j)` over unordered pairs `i < j`, with per-row partials summed
/// in row order.
fn pair_sum(rows: &[Vec<f64>], f: impl Fn(&[f64], &[f64]) -> f64 + Sync) -> f64 {
    let partials: Vec<f64> = (0..rows.len())
        .into_par_iter()
        .map(|i| rows[i + 1..].iter().map(|r| f(&rows[i], r)).sum())
        .collect();
    partials.iter().sum()
}

fn n_pairs(n: usize) -> f64 {
    (n * (n - 1) / 2) as f64
}

/// `log` of the mean of `exp(−2‖x − y‖²)` over distinct unordered pairs of
/// normalized rows.
pub fn uniformity(m: &Tensor) -> Result<f64> {
    let rows = unit_rows(m)?;
    let total = pair_sum(&rows, |a, b| (-2.0 * sq_dist(a, b)).exp());
    Ok((total / n_pairs(rows.len())).ln())
}

/// Mean cosine similarity over distinct unordered pairs of rows.
pub fn avg_cosine(m: &Tensor) -> Result<f64> {
    let rows = unit_rows(m)?;
    let total = pair_sum(&rows, |a, b| a.iter().zip(b).map(|(x, y)| x * y).sum());
    Ok(total / n_pairs(rows.len()))
}

/// Cosine similarity of each row of `a` with the same row of `b`.
pub fn row_cosines(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "row_cosines",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    a.iter_rows()
        .zip(b.iter_rows())
        .map(|(x, y)| cosine_slices(x, y))
        .collect()
}
