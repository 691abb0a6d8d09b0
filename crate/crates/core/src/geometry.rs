//! Connection data derived from a Finsler function `F`.
//!
//! Conventions, fixed once for the whole crate:
//!
//! * `g_ab = ½ ∂²F²/∂u^a∂u^b`
//! * `G^i = ¼ g^{il} (u^k ∂²F²/∂u^l∂x^k − ∂F²/∂x^l)`, so that for a Riemannian
//!   metric `2G^i = Γ^i_{jk} u^j u^k` with the Christoffel symbols
//! * `Γ^i_j = ∂G^i/∂u^j`, `Γ^i_{jk} = ∂Γ^i_j/∂u^k`
//! * horizontal coordinate fields `H_i = ∂_i − Γ^j_i ∂/∂u^j`
//!
//! Every quantity is computed from `F` by nested forward-mode derivatives and
//! can itself be evaluated at carrier arguments. That is what lets curvature
//! fields and everything built from them be differentiated again.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::autodiff::{constants, jvp, values, DiffScalar as D};
use crate::error::{Error, Result};
use crate::metric::{check_homogeneity, HomogeneitySample, Metric, MetricSpec};
use crate::sampling::fiber_directions;

/// A vertical (fiber) vector field given by its components at `(x, u)`,
/// evaluable on carriers so that its u-derivatives are available.
pub trait FiberField: Sync {
    fn eval(&self, x: &[D], u: &[D]) -> Result<Vec<D>>;
}

impl<F> FiberField for F
where
    F: Fn(&[D], &[D]) -> Result<Vec<D>> + Sync,
{
    fn eval(&self, x: &[D], u: &[D]) -> Result<Vec<D>> {
        self(x, u)
    }
}

/// Connection quantities at one point of the slit tangent bundle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConnectionData {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub g_inv: Vec<Vec<f64>>,
    pub spray: Vec<f64>,
    /// `gamma[i][j] = Γ^i_j`
    pub gamma: Vec<Vec<f64>>,
    /// `berwald[i][j][k] = Γ^i_{jk}`
    pub berwald: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone)]
pub struct FinslerSpace {
    metric: Metric,
}

pub(crate) fn zeros(m: usize) -> Vec<D> {
    vec![D::zero(); m]
}

pub(crate) fn unit(m: usize, i: usize) -> Vec<D> {
    let mut e = zeros(m);
    e[i] = D::constant(1.0);
    e
}

fn concat(a: &[D], b: &[D]) -> Vec<D> {
    a.iter().chain(b).cloned().collect()
}

/// Jacobian-vector product of a function of `(x, u)` along `(dx, du)`.
pub(crate) fn d_along<F>(f: F, x: &[D], u: &[D], dx: &[D], du: &[D]) -> Result<(Vec<D>, Vec<D>)>
where
    F: FnOnce(&[D], &[D]) -> Result<Vec<D>>,
{
    let m = x.len();
    jvp(
        |p| f(&p[..m], &p[m..]),
        &concat(x, u),
        &concat(dx, du),
    )
}

/// Solves `a·z = b` over carriers by Gaussian elimination with partial
/// pivoting on the real parts.
pub(crate) fn solve(mut a: Vec<Vec<D>>, mut b: Vec<D>) -> Option<Vec<D>> {
    let n = b.len();
    let scale = a
        .iter()
        .flatten()
        .map(|v| v.value().abs())
        .fold(0.0, f64::max);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r, &s| a[r][col].value().abs().total_cmp(&a[s][col].value().abs()))
            .unwrap();
        if !(a[piv][col].value().abs() > 1e-14 * scale) {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        let inv = a[col][col].recip();
        for r in col + 1..n {
            if a[r][col].is_zero() {
                continue;
            }
            let factor = &a[r][col] * &inv;
            for c in col + 1..n {
                let t = &factor * &a[col][c];
                a[r][c] = &a[r][c] - &t;
            }
            let t = &factor * &b[col];
            b[r] = &b[r] - &t;
        }
    }
    let mut z = zeros(n);
    for r in (0..n).rev() {
        let mut acc = b[r].clone();
        for c in r + 1..n {
            acc = &acc - &(&a[r][c] * &z[c]);
        }
        z[r] = &acc / &a[r][r];
    }
    Some(z)
}

fn to_f64_matrix(a: &[Vec<D>]) -> Vec<Vec<f64>> {
    a.iter().map(|row| values(row)).collect()
}

impl FinslerSpace {
    /// Builds a space after checking 1-homogeneity and positive-definiteness
    /// of the fundamental tensor on a deterministic grid of the sampling box.
    pub fn new(metric: Metric) -> Result<FinslerSpace> {
        let space = FinslerSpace { metric };
        space.validate()?;
        Ok(space)
    }

    pub fn from_spec(spec: &MetricSpec) -> Result<FinslerSpace> {
        FinslerSpace::new(spec.resolve()?)
    }

    /// Catalog shortcut used throughout tests and examples.
    pub fn builtin(name: &str) -> Result<FinslerSpace> {
        FinslerSpace::from_spec(&MetricSpec::builtin(name))
    }

    /// Skips construction-time validation.
    pub fn new_unchecked(metric: Metric) -> FinslerSpace {
        FinslerSpace { metric }
    }

    pub fn dim(&self) -> usize {
        self.metric.dimension
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn name(&self) -> &str {
        &self.metric.name
    }

    /// Deterministic validation grid: 3 points per axis of the sampling box
    /// times the standard fiber directions.
    pub fn validation_grid(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let m = self.dim();
        let ticks = [0.1, 0.5, 0.9];
        let dirs = fiber_directions(m);
        let mut out = Vec::new();
        for idx in 0..ticks.len().pow(m as u32) {
            let s: Vec<f64> = (0..m)
                .map(|k| ticks[(idx / ticks.len().pow(k as u32)) % ticks.len()])
                .collect();
            let x = self.metric.sample_box.lerp(&s);
            if !self.metric.in_chart(&x) {
                continue;
            }
            for d in &dirs {
                out.push((x.clone(), d.clone()));
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let grid = self.validation_grid();
        let mut samples = Vec::with_capacity(2 * grid.len());
        for (x, u) in &grid {
            for lambda in [0.5, 3.0] {
                samples.push(HomogeneitySample {
                    x: x.clone(),
                    u: u.clone(),
                    lambda,
                });
            }
        }
        for s in &samples {
            let residual = check_homogeneity(&self.metric, std::slice::from_ref(s))?;
            let scale = 1.0 + s.lambda * self.f(&s.x, &s.u)?.abs();
            if residual > 1e-10 * scale {
                return Err(Error::geometry(
                    format!("F is not positively 1-homogeneous (residual {residual:.3e}, lambda {})", s.lambda),
                    &s.x,
                    &s.u,
                ));
            }
        }
        for (x, u) in &grid {
            self.fundamental_tensor(x, u)?;
        }
        Ok(())
    }

    /// Fails unless `x` is in the chart and `u` is a nonzero vector with `F > 0`.
    pub fn check_point(&self, x: &[f64], u: &[f64]) -> Result<()> {
        let m = self.dim();
        if x.len() != m {
            return Err(Error::Dimension { expected: m, found: x.len() });
        }
        if u.len() != m {
            return Err(Error::Dimension { expected: m, found: u.len() });
        }
        if !self.metric.in_chart(x) {
            return Err(Error::geometry("base point outside the chart domain", x, u));
        }
        if u.iter().all(|&v| v == 0.0) {
            return Err(Error::geometry("fiber point is the zero vector", x, u));
        }
        if !(self.f(x, u)? > 0.0) {
            return Err(Error::geometry("F is not positive", x, u));
        }
        Ok(())
    }

    pub fn f(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        self.metric.eval(x, u)
    }

    pub fn f_ad(&self, x: &[D], u: &[D]) -> Result<D> {
        self.metric.eval(x, u)
    }

    fn f2_ad(&self, x: &[D], u: &[D]) -> Result<Vec<D>> {
        let f = self.f_ad(x, u)?;
        Ok(vec![&f * &f])
    }

    /// Mixed second derivative of `F²` along `(dx1, du1)` then `(dx2, du2)`.
    fn f2_second(&self, x: &[D], u: &[D], d1: (&[D], &[D]), d2: (&[D], &[D])) -> Result<D> {
        let (_, outer) = d_along(
            |x, u| Ok(d_along(|x, u| self.f2_ad(x, u), x, u, d1.0, d1.1)?.1),
            x,
            u,
            d2.0,
            d2.1,
        )?;
        Ok(outer.into_iter().next().unwrap())
    }

    /// `g_ab` at carrier arguments.
    pub fn g_ad(&self, x: &[D], u: &[D]) -> Result<Vec<Vec<D>>> {
        let m = self.dim();
        let z = zeros(m);
        let mut g = vec![zeros(m); m];
        for a in 0..m {
            for b in a..m {
                let h = self.f2_second(x, u, (&z, &unit(m, a)), (&z, &unit(m, b)))? * 0.5;
                g[b][a] = h.clone();
                g[a][b] = h;
            }
        }
        Ok(g)
    }

    fn singular(&self, x: &[D], u: &[D]) -> Error {
        Error::geometry("fundamental tensor is singular", &values(x), &values(u))
    }

    /// Spray coefficients `G^i` at carrier arguments.
    pub fn spray_ad(&self, x: &[D], u: &[D]) -> Result<Vec<D>> {
        let m = self.dim();
        let z = zeros(m);
        let g = self.g_ad(x, u)?;
        let mut rhs = Vec::with_capacity(m);
        for l in 0..m {
            let mixed = self.f2_second(x, u, (u, &z), (&z, &unit(m, l)))?;
            let (_, dx) = d_along(|x, u| self.f2_ad(x, u), x, u, &unit(m, l), &z)?;
            rhs.push(mixed - &dx[0]);
        }
        let sol = solve(g, rhs).ok_or_else(|| self.singular(x, u))?;
        Ok(sol.into_iter().map(|v| v * 0.25).collect())
    }

    /// `Γ^i_j w^j` at carrier arguments.
    pub fn connection_ad(&self, x: &[D], u: &[D], w: &[D]) -> Result<Vec<D>> {
        Ok(d_along(|x, u| self.spray_ad(x, u), x, u, &zeros(self.dim()), w)?.1)
    }

    /// `Γ^i_{jk} v^j w^k` at carrier arguments.
    pub fn berwald_ad(&self, x: &[D], u: &[D], v: &[D], w: &[D]) -> Result<Vec<D>> {
        let z = zeros(self.dim());
        Ok(d_along(|x, u| self.connection_ad(x, u, v), x, u, &z, w)?.1)
    }

    /// `(Γ_w, Γ^i_{jk} w^j v^k)` from a single evaluation.
    pub fn connection_with_berwald_ad(&self, x: &[D], u: &[D], w: &[D], v: &[D]) -> Result<(Vec<D>, Vec<D>)> {
        let z = zeros(self.dim());
        d_along(|x, u| self.connection_ad(x, u, w), x, u, &z, v)
    }

    /// Horizontal lift of the base vector `w`: the ambient vector `(w, −Γ_w)`.
    pub fn horizontal_ad(&self, x: &[D], u: &[D], w: &[D]) -> Result<Vec<D>> {
        Ok(self.connection_ad(x, u, w)?.into_iter().map(|v| -v).collect())
    }

    pub fn fundamental_tensor(&self, x: &[f64], u: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_point(x, u)?;
        let g = to_f64_matrix(&self.g_ad(&constants(x), &constants(u))?);
        let m = self.dim();
        let mat = DMatrix::from_fn(m, m, |i, j| g[i][j]);
        if mat.cholesky().is_none() {
            return Err(Error::geometry("fundamental tensor is not positive-definite", x, u));
        }
        Ok(g)
    }

    pub fn spray(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x, u)?;
        Ok(values(&self.spray_ad(&constants(x), &constants(u))?))
    }

    /// `Γ^i_j` as `gamma[i][j]`.
    pub fn nonlinear_connection(&self, x: &[f64], u: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_point(x, u)?;
        let m = self.dim();
        let (xs, us) = (constants(x), constants(u));
        let mut gamma = vec![vec![0.0; m]; m];
        for j in 0..m {
            let col = self.connection_ad(&xs, &us, &unit(m, j))?;
            for i in 0..m {
                gamma[i][j] = col[i].value();
            }
        }
        Ok(gamma)
    }

    /// `Γ^i_{jk}` as `berwald[i][j][k]`.
    pub fn berwald_coefficients(&self, x: &[f64], u: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        self.check_point(x, u)?;
        let m = self.dim();
        let (xs, us) = (constants(x), constants(u));
        let mut out = vec![vec![vec![0.0; m]; m]; m];
        for j in 0..m {
            for k in j..m {
                let v = self.berwald_ad(&xs, &us, &unit(m, j), &unit(m, k))?;
                for i in 0..m {
                    out[i][j][k] = v[i].value();
                    out[i][k][j] = v[i].value();
                }
            }
        }
        Ok(out)
    }

    pub fn connection_data(&self, x: &[f64], u: &[f64]) -> Result<ConnectionData> {
        let g = self.fundamental_tensor(x, u)?;
        let m = self.dim();
        let inv = DMatrix::from_fn(m, m, |i, j| g[i][j])
            .try_inverse()
            .ok_or_else(|| Error::geometry("fundamental tensor is singular", x, u))?;
        Ok(ConnectionData {
            x: x.to_vec(),
            u: u.to_vec(),
            g_inv: (0..m).map(|i| (0..m).map(|j| inv[(i, j)]).collect()).collect(),
            g,
            spray: self.spray(x, u)?,
            gamma: self.nonlinear_connection(x, u)?,
            berwald: self.berwald_coefficients(x, u)?,
        })
    }

    /// Rescales `d` onto the indicatrix over `x`.
    pub fn indicatrix_point(&self, x: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        if d.iter().all(|&v| v == 0.0) {
            return Err(Error::geometry("direction must be nonzero", x, d));
        }
        let f = self.f(x, d)?;
        if !(f > 0.0) {
            return Err(Error::geometry("F(x, d) is not positive", x, d));
        }
        Ok(d.iter().map(|v| v / f).collect())
    }

    /// `(∇_X g)(V, W)` with `V`, `W` extended as u-constant coordinate fields.
    pub fn landsberg_residual(&self, x: &[f64], u: &[f64], bx: &[f64], v: &[f64], w: &[f64]) -> Result<f64> {
        self.check_point(x, u)?;
        let m = self.dim();
        let (xs, us, xv) = (constants(x), constants(u), constants(bx));
        let h = self.horizontal_ad(&xs, &us, &xv)?;
        let (g, dg) = d_along(
            |x, u| Ok(self.g_ad(x, u)?.concat()),
            &xs,
            &us,
            &xv,
            &h,
        )?;
        let (g, dg) = (values(&g), values(&dg));
        // Γ^k_{ia} X^i V^a and Γ^k_{ib} X^i W^b
        let gv = values(&self.berwald_ad(&xs, &us, &xv, &constants(v))?);
        let gw = values(&self.berwald_ad(&xs, &us, &xv, &constants(w))?);
        let mut total = 0.0;
        for a in 0..m {
            for b in 0..m {
                total += v[a] * w[b] * dg[a * m + b];
            }
        }
        for k in 0..m {
            for b in 0..m {
                total -= gv[k] * g[k * m + b] * w[b];
                total -= v[b] * g[b * m + k] * gw[k];
            }
        }
        Ok(total)
    }

    /// Pointwise residual of the infinitesimal isometry equation for the
    /// ambient vector `ξ^i ∂_i + η^c ∂/∂u^c`.
    pub fn isometry_residual(&self, x: &[f64], u: &[f64], xi: &[f64], eta: &dyn FiberField) -> Result<f64> {
        self.check_point(x, u)?;
        let m = self.dim();
        let (xs, us) = (constants(x), constants(u));
        let eta0 = eta.eval(&xs, &us)?;
        let (g, dg) = d_along(|x, u| Ok(self.g_ad(x, u)?.concat()), &xs, &us, &constants(xi), &eta0)?;
        let g = values(&g);
        // deta[a][c] = ∂η^c/∂u^a
        let mut deta = Vec::with_capacity(m);
        for a in 0..m {
            let (_, d) = d_along(|x, u| eta.eval(x, u), &xs, &us, &zeros(m), &unit(m, a))?;
            deta.push(values(&d));
        }
        let mut worst: f64 = 0.0;
        for a in 0..m {
            for b in 0..m {
                let mut r = dg[a * m + b].value();
                for c in 0..m {
                    r += g[c * m + b] * deta[a][c] + g[a * m + c] * deta[b][c];
                }
                worst = worst.max(r.abs());
            }
        }
        Ok(worst)
    }

    /// `max |∂Γ^i_{jk}/∂u^l|`; vanishes exactly when the Berwald
    /// coefficients are fiber-constant near `(x, u)`.
    pub fn berwald_residual(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        self.check_point(x, u)?;
        let m = self.dim();
        let (xs, us, z) = (constants(x), constants(u), zeros(m));
        let mut worst: f64 = 0.0;
        for j in 0..m {
            for k in j..m {
                for l in 0..m {
                    let (_, d) = d_along(
                        |x, u| self.berwald_ad(x, u, &unit(m, j), &unit(m, k)),
                        &xs,
                        &us,
                        &z,
                        &unit(m, l),
                    )?;
                    worst = d.iter().fold(worst, |w, v| w.max(v.value().abs()));
                }
            }
        }
        Ok(worst)
    }

    /// `max |∂g_ab/∂u^c|`, zero exactly for Riemannian metrics.
    pub fn cartan_residual(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        self.check_point(x, u)?;
        let m = self.dim();
        let (xs, us, z) = (constants(x), constants(u), zeros(m));
        let mut worst: f64 = 0.0;
        for c in 0..m {
            let (_, d) = d_along(|x, u| Ok(self.g_ad(x, u)?.concat()), &xs, &us, &z, &unit(m, c))?;
            worst = d.iter().fold(worst, |w, v| w.max(v.value().abs()));
        }
        Ok(worst)
    }
}

/// The vertical part `−Γ_ξ` of the horizontal lift of a constant base vector.
pub struct HorizontalLiftVertical<'a> {
    pub space: &'a FinslerSpace,
    pub xi: Vec<f64>,
}

impl FiberField for HorizontalLiftVertical<'_> {
    fn eval(&self, x: &[D], u: &[D]) -> Result<Vec<D>> {
        self.space.horizontal_ad(x, u, &constants(&self.xi))
    }
}

pub(crate) fn mat_vec_f64(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| row.iter().zip(v).map(|(p, q)| p * q).sum())
        .collect()
}

/// `g(V, W)` with the tensor given as a matrix.
pub fn inner(g: &[Vec<f64>], v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(mat_vec_f64(g, w)).map(|(p, q)| p * q).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn sphere() -> FinslerSpace {
        FinslerSpace::builtin("sphere2").unwrap()
    }

    fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn euclidean_tensor_is_identity_and_connection_vanishes() {
        let e = FinslerSpace::builtin("euclidean").unwrap();
        let (x, u) = ([0.3, -0.2], [0.7, 1.9]);
        let g = e.fundamental_tensor(&x, &u).unwrap();
        assert!(max_abs_diff(&g, &[vec![1.0, 0.0], vec![0.0, 1.0]]) < 1e-14);
        assert!(e.spray(&x, &u).unwrap().iter().all(|v| v.abs() < 1e-14));
        let gamma = e.nonlinear_connection(&x, &u).unwrap();
        assert!(gamma.iter().flatten().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn sphere_tensor_on_equator() {
        let g = sphere().fundamental_tensor(&[FRAC_PI_2, 0.1], &[0.3, -2.0]).unwrap();
        assert!(max_abs_diff(&g, &[vec![1.0, 0.0], vec![0.0, 1.0]]) < 1e-14);
    }

    #[test]
    fn quartic_tensor_matches_finite_difference_hessian() {
        let q = FinslerSpace::builtin("minkowski-quartic").unwrap();
        let (x, u) = ([0.0, 0.0], [1.0, 1.0]);
        let g = q.fundamental_tensor(&x, &u).unwrap();
        let f2 = |u: [f64; 2]| q.f(&x, &u).unwrap().powi(2);
        let h = 1e-4;
        for a in 0..2 {
            for b in 0..2 {
                let shift = |sa: f64, sb: f64| {
                    let mut p = u;
                    p[a] += sa * h;
                    p[b] += sb * h;
                    f2(p)
                };
                let fd = (shift(1.0, 1.0) - shift(1.0, -1.0) - shift(-1.0, 1.0) + shift(-1.0, -1.0))
                    / (4.0 * h * h);
                assert!((g[a][b] - 0.5 * fd).abs() < 1e-6, "{a}{b}: {} vs {}", g[a][b], 0.5 * fd);
            }
        }
    }

    #[test]
    fn sphere_spray_matches_christoffel_oracle() {
        // the metric is φ-independent; φ = π keeps the point inside the open chart
        let (x, u) = ([FRAC_PI_4, PI], [0.0, 1.0]);
        let s = sphere().spray(&x, &u).unwrap();
        // 2G^θ = Γ^θ_φφ (u^φ)² = −sinθ cosθ
        let expected = -0.5 * x[0].sin() * x[0].cos();
        assert!((s[0] - expected).abs() < 1e-14, "{s:?}");
        assert!(s[1].abs() < 1e-14);
    }

    #[test]
    fn sphere_connection_and_berwald_match_christoffels() {
        let sp = sphere();
        for (x, u) in [([0.7f64, 1.0], [0.4, -1.3]), ([2.1, 4.0], [-1.0, 0.2])] {
            let (s, c) = (x[0].sin(), x[0].cos());
            // chr[i][j][k]
            let mut chr = vec![vec![vec![0.0; 2]; 2]; 2];
            chr[0][1][1] = -s * c;
            chr[1][0][1] = c / s;
            chr[1][1][0] = c / s;
            let b = sp.berwald_coefficients(&x, &u).unwrap();
            let gamma = sp.nonlinear_connection(&x, &u).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let oracle: f64 = (0..2).map(|k| chr[i][j][k] * u[k]).sum();
                    assert!((gamma[i][j] - oracle).abs() < 1e-9);
                    for k in 0..2 {
                        assert!((b[i][j][k] - chr[i][j][k]).abs() < 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn poincare_connection_vanishes_at_origin() {
        let p = FinslerSpace::builtin("poincare-disk").unwrap();
        for u in [[1.0, 0.0], [0.3, -0.8], [-2.0, 5.0]] {
            let gamma = p.nonlinear_connection(&[0.0, 0.0], &u).unwrap();
            assert!(gamma.iter().flatten().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn euler_identities_hold() {
        for name in ["sphere2", "poincare-disk", "randers"] {
            let sp = FinslerSpace::builtin(name).unwrap();
            let (x, u) = ([0.5, 0.3], [0.8, -0.6]);
            let d = sp.connection_data(&x, &u).unwrap();
            for i in 0..2 {
                let gu: f64 = (0..2).map(|j| d.gamma[i][j] * u[j]).sum();
                assert!((gu - 2.0 * d.spray[i]).abs() < 1e-9, "{name}");
                for j in 0..2 {
                    let bu: f64 = (0..2).map(|k| d.berwald[i][j][k] * u[k]).sum();
                    assert!((bu - d.gamma[i][j]).abs() < 1e-9, "{name}");
                }
            }
            let inv = mat_vec_f64(&d.g_inv, &mat_vec_f64(&d.g, &[1.0, 0.0]));
            assert!((inv[0] - 1.0).abs() < 1e-12 && inv[1].abs() < 1e-12);
        }
    }

    #[test]
    fn indicatrix_points() {
        let e = FinslerSpace::builtin("euclidean").unwrap();
        let u = e.indicatrix_point(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((u[0] - 0.6).abs() < 1e-15 && (u[1] - 0.8).abs() < 1e-15);
        let u = sphere().indicatrix_point(&[FRAC_PI_2, 0.0], &[0.0, 2.0]).unwrap();
        assert_eq!(u, vec![0.0, 1.0]);
        assert!(e.indicatrix_point(&[0.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn isometry_residual_examples() {
        let e = FinslerSpace::builtin("euclidean").unwrap();
        let (x, u) = ([0.1, 0.2], [0.6, 0.8]);
        let rotation = |_: &[D], u: &[D]| Ok(vec![-u[1].clone(), u[0].clone()]);
        let dilation = |_: &[D], u: &[D]| Ok(u.to_vec());
        assert!(e.isometry_residual(&x, &u, &[0.0, 0.0], &rotation).unwrap() < 1e-12);
        let r = e.isometry_residual(&x, &u, &[0.0, 0.0], &dilation).unwrap();
        assert!((r - 2.0).abs() < 1e-12);
        let sp = sphere();
        let lift = HorizontalLiftVertical { space: &sp, xi: vec![0.3, -1.1] };
        let r = sp.isometry_residual(&[1.0, 2.0], &[0.5, 0.7], &lift.xi, &lift).unwrap();
        assert!(r < 1e-8, "{r}");
    }

    #[test]
    fn landsberg_residual_is_multilinear_and_detects_randers() {
        let sp = sphere();
        let (x, u) = ([0.9, 1.4], [0.3, 0.5]);
        let r = sp.landsberg_residual(&x, &u, &[1.0, 0.5], &[1.0, 0.0], &[0.2, 1.0]).unwrap();
        assert!(r.abs() < 1e-8);
        let ra = FinslerSpace::builtin("randers").unwrap();
        let r1 = ra.landsberg_residual(&[0.2, 0.1], &u, &[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        let r2 = ra.landsberg_residual(&[0.2, 0.1], &u, &[0.0, 2.0], &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((r2 - 2.0 * r1).abs() < 1e-12);
    }

    #[test]
    fn berwald_residual_examples() {
        assert!(sphere().berwald_residual(&[1.0, 1.0], &[0.3, 0.9]).unwrap() < 1e-9);
        let q = FinslerSpace::builtin("minkowski-quartic").unwrap();
        assert!(q.berwald_residual(&[0.0, 0.0], &[0.3, 0.9]).unwrap() < 1e-12);
        assert!(sphere().cartan_residual(&[1.0, 1.0], &[0.3, 0.9]).unwrap() < 1e-12);
        assert!(q.cartan_residual(&[0.0, 0.0], &[0.3, 0.9]).unwrap() > 1e-2);
    }

    #[test]
    fn non_homogeneous_expression_is_rejected() {
        let spec = MetricSpec::Expression {
            text: "u1^2 + u2^2".into(),
            dimension: 2,
            domain: vec![[-1.0, 1.0]; 2],
            base_constraint: None,
            sample_box: None,
        };
        assert!(matches!(FinslerSpace::from_spec(&spec), Err(Error::Geometry { .. })));
    }
}
