//! Numerical rank of sampled field families.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Default relative singular-value threshold.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Singular values at or below this count as zero whatever their relative
/// size. Sampled fields are evaluated on the indicatrix where genuine
/// curvature is of order one, while round-off in an identically vanishing
/// family stays near 1e-14. A purely relative test would report full rank
/// for such noise.
pub const ABSOLUTE_FLOOR: f64 = 1e-10;

/// Gap ratio the acceptance checks demand on top of the rank threshold.
pub const REQUIRED_GAP: f64 = 1e4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanReport {
    /// One description per field (row).
    pub fields: Vec<String>,
    /// Base point the fibers were sampled over.
    pub base_point: Vec<f64>,
    /// Fiber sample points (columns come in blocks of `m` per point).
    pub sample_points: Vec<Vec<f64>>,
    /// Rows are fields, columns are sample-point components.
    #[serde(skip)]
    pub matrix: Vec<Vec<f64>>,
    /// Nonincreasing.
    pub singular_values: Vec<f64>,
    pub tolerance: f64,
    /// See [`ABSOLUTE_FLOOR`].
    pub absolute_floor: f64,
    pub rank: usize,
    /// `σ_rank / σ_{rank+1}`; `None` when the ratio is unbounded.
    pub gap_ratio: Option<f64>,
    pub stabilized: bool,
}

impl SpanReport {
    pub fn from_matrix(
        fields: Vec<String>,
        base_point: Vec<f64>,
        sample_points: Vec<Vec<f64>>,
        matrix: Vec<Vec<f64>>,
        tolerance: f64,
    ) -> SpanReport {
        let singular_values = singular_values(&matrix);
        let rank = numerical_rank(&singular_values, tolerance);
        let gap_ratio = gap_ratio(&singular_values, rank);
        SpanReport {
            fields,
            base_point,
            sample_points,
            matrix,
            singular_values,
            tolerance,
            absolute_floor: ABSOLUTE_FLOOR,
            rank,
            gap_ratio,
            stabilized: true,
        }
    }

    /// Whether the rank decision is separated by at least `threshold`.
    pub fn gap_at_least(&self, threshold: f64) -> bool {
        self.gap_ratio.is_none_or(|g| g > threshold)
    }
}

pub fn singular_values(rows: &[Vec<f64>]) -> Vec<f64> {
    let nr = rows.len();
    let nc = rows.first().map_or(0, Vec::len);
    if nr == 0 || nc == 0 {
        return Vec::new();
    }
    let mat = DMatrix::from_fn(nr, nc, |i, j| rows[i][j]);
    let mut sv: Vec<f64> = mat.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Threshold a singular value must exceed to count toward the rank.
fn cutoff(sv: &[f64], tol: f64) -> f64 {
    (tol * sv.first().copied().unwrap_or(0.0)).max(ABSOLUTE_FLOOR)
}

/// `#{σ > max(tol·σ_max, ABSOLUTE_FLOOR)}`.
pub fn numerical_rank(sv: &[f64], tol: f64) -> usize {
    let c = cutoff(sv, tol);
    sv.iter().filter(|&&s| s > c).count()
}

fn gap_ratio(sv: &[f64], rank: usize) -> Option<f64> {
    if rank == 0 || rank >= sv.len() || sv[rank] == 0.0 {
        return None;
    }
    Some(sv[rank - 1] / sv[rank])
}

/// Indices of a maximal independent subset, chosen greedily in row order.
pub fn independent_rows(rows: &[Vec<f64>], tol: f64) -> Vec<usize> {
    let all = singular_values(rows);
    let total = numerical_rank(&all, tol);
    let floor = cutoff(&all, tol);
    let mut chosen: Vec<usize> = Vec::new();
    for k in 0..rows.len() {
        if chosen.len() == total {
            break;
        }
        let mut trial: Vec<Vec<f64>> = chosen.iter().map(|&i| rows[i].clone()).collect();
        trial.push(rows[k].clone());
        let sv = singular_values(&trial);
        if sv.len() == trial.len() && sv[sv.len() - 1] > floor {
            chosen.push(k);
        }
    }
    chosen
}

/// Least-squares coefficients `c` minimizing `‖Σ_k c_k basis[k] − target‖`
/// and the residual max-norm.
pub fn least_squares(basis: &[Vec<f64>], target: &[f64]) -> Result<(Vec<f64>, f64)> {
    if basis.is_empty() {
        let r = target.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        return Ok((Vec::new(), r));
    }
    let n = target.len();
    if basis.iter().any(|b| b.len() != n) {
        return Err(Error::Dimension {
            expected: n,
            found: basis.iter().map(Vec::len).find(|&l| l != n).unwrap(),
        });
    }
    let a = DMatrix::from_fn(n, basis.len(), |i, k| basis[k][i]);
    let svd = a.clone().svd(true, true);
    let b = DVector::from_column_slice(target);
    let eps = svd.singular_values.max() * 1e-12;
    let c = svd
        .solve(&b, eps)
        .map_err(|e| Error::IllConditioned(e.to_string()))?;
    let r = (&a * &c - &b).amax();
    Ok((c.iter().copied().collect(), r))
}

/// Max-norm distance from `target` to the span of the numerically
/// independent rows of `family`.
pub fn projection_residual(family: &[Vec<f64>], target: &[f64], tol: f64) -> Result<f64> {
    let basis: Vec<Vec<f64>> = independent_rows(family, tol)
        .into_iter()
        .map(|k| family[k].clone())
        .collect();
    Ok(least_squares(&basis, target)?.1)
}
