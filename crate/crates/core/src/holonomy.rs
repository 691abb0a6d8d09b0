//! Curvature fields, the C^k filtration, the curvature algebra at a point and
//! the span of parallel-translated curvature fields.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::field::VerticalField;
use crate::geometry::FinslerSpace;
use crate::rank::{projection_residual, SpanReport};
use crate::sampling::SampleSpec;
use crate::transport::{rho, rho_differential, TransportOptions};

/// `R(∂_i, ∂_j)` as a field over the whole slit bundle.
pub fn curvature_field(i: usize, j: usize) -> VerticalField {
    VerticalField::curvature(i, j)
}

/// All `R(∂_j, ∂_l)` with `j < l`.
pub fn curvature_generators(m: usize) -> Vec<VerticalField> {
    let mut out = Vec::new();
    for j in 0..m {
        for l in j + 1..m {
            out.push(curvature_field(j, l));
        }
    }
    out
}

/// `|∇_i∇_jV − ∇_j∇_iV − [V, R(∂_i, ∂_j)]|_∞` at `(x, u)`.
pub fn curvature_identity_residual(
    space: &FinslerSpace,
    x: &[f64],
    u: &[f64],
    i: usize,
    j: usize,
    v: &VerticalField,
    cap: usize,
) -> Result<f64> {
    let nij = VerticalField::nabla(i, &VerticalField::nabla(j, v, cap)?, cap)?;
    let nji = VerticalField::nabla(j, &VerticalField::nabla(i, v, cap)?, cap)?;
    let br = VerticalField::bracket(v, &curvature_field(i, j), cap)?;
    let a = nij.eval_f64(space, x, u)?;
    let b = nji.eval_f64(space, x, u)?;
    let c = br.eval_f64(space, x, u)?;
    Ok((0..a.len())
        .map(|k| (a[k] - b[k] - c[k]).abs())
        .fold(0.0, f64::max))
}

/// Generators of `C^k`, grouped by the number of ∇ applications
/// (`0 ..= k − 2`).
pub fn ck_levels(m: usize, k: usize, cap: usize) -> Result<Vec<Vec<VerticalField>>> {
    if k < 2 {
        return Err(Error::config("k", "the filtration starts at k = 2"));
    }
    if k > cap {
        return Err(Error::DepthCap { requested: k, cap });
    }
    let mut levels = vec![curvature_generators(m)];
    for _ in 2..k {
        let prev = levels.last().unwrap();
        let mut next = Vec::with_capacity(prev.len() * m);
        for i in 0..m {
            for v in prev {
                next.push(VerticalField::nabla(i, v, cap)?);
            }
        }
        levels.push(next);
    }
    Ok(levels)
}

/// All fields `∇_{i_1}…∇_{i_n} R(∂_j, ∂_l)` with `n ≤ k − 2` and `j < l`.
pub fn ck_generators(m: usize, k: usize, cap: usize) -> Result<Vec<VerticalField>> {
    Ok(ck_levels(m, k, cap)?.into_iter().flatten().collect())
}

/// Evaluates each field on the sampled indicatrix over `x`; one row per field.
pub fn evaluate_rows(
    space: &FinslerSpace,
    fields: &[VerticalField],
    x: &[f64],
    us: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>> {
    fields
        .par_iter()
        .map(|f| {
            let mut row = Vec::with_capacity(us.len() * space.dim());
            for u in us {
                row.extend(f.eval_f64(space, x, u)?);
            }
            Ok(row)
        })
        .collect()
}

pub fn span_dimension(
    space: &FinslerSpace,
    fields: &[VerticalField],
    x: &[f64],
    sample: &SampleSpec,
    tol: f64,
) -> Result<SpanReport> {
    if fields.is_empty() {
        return Err(Error::config("fields", "span needs at least one field"));
    }
    let us = sample.indicatrix_points(space, x)?;
    let rows = evaluate_rows(space, fields, x, &us)?;
    Ok(SpanReport::from_matrix(
        fields.iter().map(ToString::to_string).collect(),
        x.to_vec(),
        us,
        rows,
        tol,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiltrationStep {
    pub k: usize,
    pub generators: usize,
    pub report: SpanReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Filtration {
    pub steps: Vec<FiltrationStep>,
    /// First `k` at which the rank had been unchanged for two consecutive
    /// increments of `k`.
    pub stabilized_at: Option<usize>,
}

impl Filtration {
    pub fn rank(&self) -> usize {
        self.steps.last().map_or(0, |s| s.report.rank)
    }

    pub fn final_report(&self) -> &SpanReport {
        &self.steps.last().expect("filtration has at least one step").report
    }
}

/// Ranks of `C^2, C^3, …` at `x`, stopping once the rank is unchanged over
/// two consecutive steps or `k` reaches the cap.
pub fn ck_filtration(space: &FinslerSpace, x: &[f64], sample: &SampleSpec, tol: f64, cap: usize) -> Result<Filtration> {
    let m = space.dim();
    let us = sample.indicatrix_points(space, x)?;
    let mut level = curvature_generators(m);
    let mut names: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut steps: Vec<FiltrationStep> = Vec::new();
    let mut stabilized_at = None;
    for k in 2..=cap {
        if k > 2 {
            let mut next = Vec::with_capacity(level.len() * m);
            for i in 0..m {
                for v in &level {
                    next.push(VerticalField::nabla(i, v, cap)?);
                }
            }
            level = next;
        }
        rows.extend(evaluate_rows(space, &level, x, &us)?);
        names.extend(level.iter().map(ToString::to_string));
        let mut report = SpanReport::from_matrix(names.clone(), x.to_vec(), us.clone(), rows.clone(), tol);
        let n = steps.len();
        let stable = n >= 2 && steps[n - 1].report.rank == report.rank && steps[n - 2].report.rank == report.rank;
        report.stabilized = stable;
        steps.push(FiltrationStep {
            k,
            generators: names.len(),
            report,
        });
        if stable {
            stabilized_at = Some(k);
            break;
        }
    }
    Ok(Filtration {
        steps,
        stabilized_at,
    })
}

/// Lie algebra generated by the curvature fields over `x`: brackets of the
/// current independent set are added until the rank stops growing.
pub fn curvature_algebra_dimension(
    space: &FinslerSpace,
    x: &[f64],
    bracket_depth_cap: usize,
    sample: &SampleSpec,
    tol: f64,
    cap: usize,
) -> Result<(SpanReport, usize)> {
    if bracket_depth_cap == 0 {
        return Err(Error::config("bracket_depth_cap", "must be at least 1"));
    }
    let us = sample.indicatrix_points(space, x)?;
    let mut fields = curvature_generators(space.dim());
    let mut rows = evaluate_rows(space, &fields, x, &us)?;
    let report_of = |fields: &[VerticalField], rows: &[Vec<f64>]| {
        SpanReport::from_matrix(
            fields.iter().map(ToString::to_string).collect(),
            x.to_vec(),
            us.clone(),
            rows.to_vec(),
            tol,
        )
    };
    let mut report = report_of(&fields, &rows);
    for depth in 1..=bracket_depth_cap {
        let basis: Vec<VerticalField> = crate::rank::independent_rows(&rows, tol)
            .into_iter()
            .map(|k| fields[k].clone())
            .collect();
        let mut fresh = Vec::new();
        for a in 0..basis.len() {
            for b in a + 1..basis.len() {
                fresh.push(VerticalField::bracket(&basis[a], &basis[b], cap)?);
            }
        }
        // a single generator still gets [V, V] evaluated, so that the
        // abelian case is confirmed numerically rather than assumed
        if basis.len() == 1 {
            fresh.push(VerticalField::bracket(&basis[0], &basis[0], cap)?);
        }
        let before = report.rank;
        rows.extend(evaluate_rows(space, &fresh, x, &us)?);
        fields.extend(fresh);
        report = report_of(&fields, &rows);
        if report.rank == before {
            report.stabilized = true;
            return Ok((report, depth));
        }
    }
    report.stabilized = false;
    Ok((report, bracket_depth_cap))
}

/// Default curves ending at `x`: straight segments from 8 seeded base points,
/// then 4 two-leg polylines.
pub fn default_curve_family(space: &FinslerSpace, x: &[f64], seed: u64) -> Vec<Curve> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut curves: Vec<Curve> = (0..8)
        .map(|_| Curve::random_path_to(space, &mut rng, x, 1))
        .collect();
    curves.extend((0..4).map(|_| Curve::random_path_to(space, &mut rng, x, 2)));
    curves
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslatedSpan {
    pub report: SpanReport,
    pub curves_used: usize,
    /// Curves whose transport failed and were left out.
    pub skipped: usize,
    pub failures: Vec<String>,
}

/// Span at `x` of `R_x(e_i, e_j)` together with the translates
/// `ρ_{c*} R_y(e_i, e_j)` along each curve `c` from `y` to `x`.
pub fn translated_curvature_span(
    space: &FinslerSpace,
    x: &[f64],
    curves: &[Curve],
    sample: &SampleSpec,
    tol: f64,
    opts: &TransportOptions,
) -> Result<TranslatedSpan> {
    let m = space.dim();
    let us = sample.indicatrix_points(space, x)?;
    let gens = curvature_generators(m);
    let mut names: Vec<String> = gens.iter().map(ToString::to_string).collect();
    let mut rows = evaluate_rows(space, &gens, x, &us)?;
    for (k, c) in curves.iter().enumerate() {
        let end = c.end();
        if end.iter().zip(x).any(|(a, b)| (a - b).abs() > 1e-12) {
            return Err(Error::config(format!("curves[{k}]"), "curve must end at the base point"));
        }
    }
    let per_curve: Vec<Result<Vec<Vec<f64>>>> = curves
        .par_iter()
        .map(|c| {
            let back = c.reversed();
            let y = c.start();
            let mut curve_rows = vec![Vec::with_capacity(us.len() * m); gens.len()];
            for u in &us {
                let w = rho(space, &back, u, opts)?.point;
                for (g, row) in gens.iter().zip(curve_rows.iter_mut()) {
                    let r = g.eval_f64(space, &y, &w)?;
                    let moved = rho_differential(space, c, &w, &r, 1.0, opts)?;
                    row.extend(moved.vector.unwrap());
                }
            }
            Ok(curve_rows)
        })
        .collect();
    let mut skipped = 0;
    let mut failures = Vec::new();
    for (k, res) in per_curve.into_iter().enumerate() {
        match res {
            Ok(cr) => {
                for (g, row) in gens.iter().zip(cr) {
                    names.push(format!("curve{k}:{g}"));
                    rows.push(row);
                }
            }
            Err(e) => {
                skipped += 1;
                failures.push(format!("curve {k}: {e}"));
            }
        }
    }
    Ok(TranslatedSpan {
        report: SpanReport::from_matrix(names, x.to_vec(), us, rows, tol),
        curves_used: curves.len() - skipped,
        skipped,
        failures,
    })
}

/// Truncation residual of the covariant Taylor expansion along the affine
/// curve `c(s) = x + s·w`:
/// `max |V_{c(t)} − ρ_{c*}|₀ᵗ Σ_{r ≤ N} tʳ/r! (∇_wʳ V)_x|` over fiber samples
/// at `c(t)`.
#[allow(clippy::too_many_arguments)]
pub fn taylor_transport_check(
    space: &FinslerSpace,
    x: &[f64],
    w: &[f64],
    v: &VerticalField,
    order: usize,
    t: f64,
    sample: &SampleSpec,
    opts: &TransportOptions,
    cap: usize,
) -> Result<f64> {
    let mut terms = vec![(1.0, v.clone())];
    let mut current = v.clone();
    let mut coeff = 1.0;
    for r in 1..=order {
        current = VerticalField::nabla_along(w, &current, cap)?;
        coeff *= t / r as f64;
        terms.push((coeff, current.clone()));
    }
    let series = VerticalField::combination(terms);
    let tw: Vec<f64> = w.iter().map(|c| c * t).collect();
    let c = Curve::affine(x, &tw)?;
    let y = c.end();
    let back = c.reversed();
    let us = sample.indicatrix_points(space, &y)?;
    let residuals: Vec<Result<f64>> = us
        .par_iter()
        .map(|u| {
            let w0 = rho(space, &back, u, opts)?.point;
            let s = series.eval_f64(space, x, &w0)?;
            let moved = rho_differential(space, &c, &w0, &s, 1.0, opts)?;
            let target = v.eval_f64(space, &y, &moved.point)?;
            let vec = moved.vector.unwrap();
            Ok(target
                .iter()
                .zip(&vec)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max))
        })
        .collect();
    residuals
        .into_iter()
        .try_fold(0.0f64, |acc, r| Ok(acc.max(r?)))
}

/// Largest distance of `[U, W]` (for `U ∈ C^k`, `W ∈ C^l` generators) from
/// the sampled span of the `C^{k+l}` generators.
pub fn grading_residual(
    space: &FinslerSpace,
    x: &[f64],
    k: usize,
    l: usize,
    sample: &SampleSpec,
    tol: f64,
    cap: usize,
) -> Result<f64> {
    let m = space.dim();
    let us = sample.indicatrix_points(space, x)?;
    let target = ck_generators(m, k + l, cap)?;
    let family = evaluate_rows(space, &target, x, &us)?;
    let left = ck_generators(m, k, cap)?;
    let right = ck_generators(m, l, cap)?;
    let mut brackets = Vec::new();
    for a in &left {
        for b in &right {
            brackets.push(VerticalField::bracket(a, b, cap)?);
        }
    }
    let rows = evaluate_rows(space, &brackets, x, &us)?;
    let mut worst: f64 = 0.0;
    for r in &rows {
        worst = worst.max(projection_residual(&family, r, tol)?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::DEFAULT_DEPTH_CAP as CAP;
    use crate::rank::DEFAULT_RANK_TOL as TOL;

    #[test]
    fn generator_counts() {
        assert_eq!(ck_generators(2, 2, CAP).unwrap().len(), 1);
        assert_eq!(ck_generators(2, 3, CAP).unwrap().len(), 3);
        assert_eq!(ck_generators(3, 4, CAP).unwrap().len(), 3 + 9 + 27);
        assert!(ck_generators(2, 7, CAP).is_err());
    }

    #[test]
    fn euclidean_filtration_is_zero() {
        let e = FinslerSpace::builtin("euclidean").unwrap();
        let f = ck_filtration(&e, &[0.1, 0.2], &SampleSpec::standard(2), TOL, CAP).unwrap();
        assert_eq!(f.rank(), 0);
        assert_eq!(f.stabilized_at, Some(4));
    }

    #[test]
    fn sphere_filtration_has_rank_one() {
        let s = FinslerSpace::builtin("sphere2").unwrap();
        let f = ck_filtration(&s, &[1.0, 2.0], &SampleSpec::standard(2), TOL, CAP).unwrap();
        assert_eq!(f.rank(), 1);
        assert_eq!(f.stabilized_at, Some(4));
        assert!(f.final_report().gap_at_least(1e6), "{:?}", f.final_report().singular_values);
    }

    #[test]
    fn constant_curves_add_nothing() {
        let s = FinslerSpace::builtin("sphere2").unwrap();
        let x = [1.2, 2.5];
        let curves = vec![Curve::constant(&x).unwrap()];
        let t = translated_curvature_span(&s, &x, &curves, &SampleSpec::standard(2), TOL, &Default::default())
            .unwrap();
        assert_eq!(t.report.rank, 1);
        assert_eq!(t.skipped, 0);
    }

    #[test]
    fn curvature_identity_on_sphere() {
        let s = FinslerSpace::builtin("sphere2").unwrap();
        let v = curvature_field(0, 1);
        let r = curvature_identity_residual(&s, &[1.1, 0.7], &[0.4, 0.6], 0, 1, &v, CAP).unwrap();
        assert!(r < 1e-7, "{r}");
        let z = curvature_identity_residual(&s, &[1.1, 0.7], &[0.4, 0.6], 0, 1, &VerticalField::zero(), CAP).unwrap();
        assert!(z < 1e-12);
    }
}
