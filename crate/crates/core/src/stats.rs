//! Contingency tests for occupancy counts.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Smallest expected count a cell may carry before it is pooled.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Cells remaining after pooling.
    pub cells: usize,
}

/// Two-sample chi-square test of homogeneity on paired count vectors.
///
/// Cells whose smaller expected count is below [`MIN_EXPECTED`] are merged
/// into one pooled cell; a pooled cell that is still too small is merged into
/// the smallest remaining cell.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> ChiSquareResult {
    assert_eq!(a.len(), b.len(), "count vectors differ in length");
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let total = (na + nb) as f64;
    let degenerate = ChiSquareResult {
        statistic: 0.0,
        dof: 0,
        p_value: 1.0,
        cells: 1,
    };
    if na == 0 || nb == 0 {
        return degenerate;
    }
    let (fa, fb) = (na as f64 / total, nb as f64 / total);
    let expected_min = |ca: u64, cb: u64| (ca + cb) as f64 * fa.min(fb);

    let mut cells: Vec<(u64, u64)> = Vec::new();
    let mut pooled = (0u64, 0u64);
    for (&ca, &cb) in a.iter().zip(b) {
        if ca + cb == 0 {
            continue;
        }
        if expected_min(ca, cb) < MIN_EXPECTED {
            pooled.0 += ca;
            pooled.1 += cb;
        } else {
            cells.push((ca, cb));
        }
    }
    if pooled.0 + pooled.1 > 0 {
        if expected_min(pooled.0, pooled.1) >= MIN_EXPECTED || cells.is_empty() {
            cells.push(pooled);
        } else {
            let smallest = (0..cells.len())
                .min_by_key(|&i| cells[i].0 + cells[i].1)
                .expect("non-empty");
            cells[smallest].0 += pooled.0;
            cells[smallest].1 += pooled.1;
        }
    }
    if cells.len() < 2 {
        return degenerate;
    }
    let statistic: f64 = cells
        .iter()
        .map(|&(ca, cb)| {
            let row = (ca + cb) as f64;
            let (ea, eb) = (row * fa, row * fb);
            (ca as f64 - ea).powi(2) / ea + (cb as f64 - eb).powi(2) / eb
        })
        .sum();
    let dof = cells.len() - 1;
    let p_value = ChiSquared::new(dof as f64)
        .map(|d| d.sf(statistic))
        .unwrap_or(f64::NAN);
    ChiSquareResult {
        statistic,
        dof,
        p_value,
        cells: cells.len(),
    }
}

/// Multinomial z-scores of observed counts against cell probabilities.
pub fn multinomial_z(counts: &[u64], probs: &[f64]) -> Vec<f64> {
    let n: u64 = counts.iter().sum();
    let n = n as f64;
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let var = n * p * (1.0 - p);
            let dev = c as f64 - n * p;
            if var > 0.0 {
                dev / var.sqrt()
            } else if dev.abs() < 0.5 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect()
}

pub fn bonferroni(alpha: f64, tests: usize) -> f64 {
    alpha / tests.max(1) as f64
}
