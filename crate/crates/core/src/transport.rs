//! Nonlinear parallel transport along base curves.
//!
//! The horizontal lift of `c` through `u0` solves `u̇^i = −ċ^j Γ^i_j(c, u)`.
//! Its differential transports a vertical vector by the Berwald connection,
//! `V̇^i = −Γ^i_{jk}(c, u) ċ^j V^k`, integrated jointly with the lift. Each
//! curve segment is integrated separately and the state is handed across
//! joints unchanged. The lift is never projected back onto the indicatrix:
//! the drift of `F` is reported as an accuracy certificate.

use serde::Serialize;

use crate::autodiff::{constants, values};
use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::geometry::{inner, FinslerSpace};
use crate::ode::{integrate_weighted, OdeOptions, Solution, StepStats};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransportOptions {
    pub ode: OdeOptions,
    /// Dense-output samples per curve segment used by the drift diagnostic.
    pub dense_samples: usize,
}

impl Default for TransportOptions {
    fn default() -> Self {
        TransportOptions {
            ode: OdeOptions::default(),
            dense_samples: 32,
        }
    }
}

impl TransportOptions {
    pub fn with_tol(tol: f64) -> Self {
        TransportOptions {
            ode: OdeOptions::with_tol(tol),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransportResult {
    /// Endpoint of the horizontal lift.
    pub point: Vec<f64>,
    /// Transported vertical vector, when one was supplied.
    pub vector: Option<Vec<f64>>,
    /// `max |F(c(t), u(t)) − F(c(0), u0)|` over dense-output samples.
    pub f_drift: f64,
    pub stats: StepStats,
}

/// Dense solution of a transport problem, segment by segment.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pieces: Vec<Solution>,
    m: usize,
    with_vector: bool,
}

impl Trajectory {
    fn state(&self, t: f64) -> Vec<f64> {
        let k = self
            .pieces
            .iter()
            .position(|p| t <= *p.t.last().unwrap())
            .unwrap_or(self.pieces.len() - 1);
        self.pieces[k].eval(t)
    }

    pub fn point_at(&self, t: f64) -> Vec<f64> {
        self.state(t)[..self.m].to_vec()
    }

    pub fn vector_at(&self, t: f64) -> Option<Vec<f64>> {
        self.with_vector.then(|| self.state(t)[self.m..].to_vec())
    }

    pub fn final_state(&self) -> &[f64] {
        self.pieces.last().unwrap().final_state()
    }

    pub fn stats(&self) -> StepStats {
        let mut s = StepStats::default();
        for p in &self.pieces {
            s.absorb(&p.stats);
        }
        s
    }
}

fn check_vector(space: &FinslerSpace, v: &[f64]) -> Result<()> {
    if v.len() != space.dim() {
        return Err(Error::Dimension {
            expected: space.dim(),
            found: v.len(),
        });
    }
    Ok(())
}

/// Integrates the lift (and optionally a vertical vector) from `t = 0` to `t_end`.
pub fn trajectory(
    space: &FinslerSpace,
    c: &Curve,
    u0: &[f64],
    v0: Option<&[f64]>,
    t_end: f64,
    opts: &TransportOptions,
) -> Result<Trajectory> {
    if !(0.0..=1.0).contains(&t_end) {
        return Err(Error::config("t", "curve parameter must lie in [0, 1]"));
    }
    c.check_in_chart(space)?;
    space.check_point(&c.start(), u0)?;
    if let Some(v) = v0 {
        check_vector(space, v)?;
    }
    let m = space.dim();
    let mut state: Vec<f64> = u0.to_vec();
    let mut weights = vec![1.0; m];
    if let Some(v) = v0 {
        state.extend_from_slice(v);
        // tolerance relative to the size of V keeps the transport exactly
        // linear under power-of-two scalings
        let norm = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        weights.extend(std::iter::repeat_n(if norm > 0.0 { norm } else { 1.0 }, m));
    }
    let mut pieces = Vec::new();
    for k in 0..c.segment_count() {
        let (a, b) = c.segment_interval(k);
        if a >= t_end && k > 0 {
            break;
        }
        let b = b.min(t_end);
        let rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
            let (p, vel) = c.eval_on(k, t)?;
            let (x, u, w) = (constants(&p), constants(&y[..m]), constants(&vel));
            if y.len() == m {
                let gamma = space.connection_ad(&x, &u, &w)?;
                Ok(gamma.iter().map(|g| -g.value()).collect())
            } else {
                let (gamma, berwald) = space.connection_with_berwald_ad(&x, &u, &w, &constants(&y[m..]))?;
                Ok(values(&gamma)
                    .into_iter()
                    .chain(values(&berwald))
                    .map(|g| -g)
                    .collect())
            }
        };
        let sol = integrate_weighted(rhs, a, b, &state, &opts.ode, &weights)?;
        state = sol.final_state().to_vec();
        pieces.push(sol);
    }
    Ok(Trajectory {
        pieces,
        m,
        with_vector: v0.is_some(),
    })
}

fn drift(space: &FinslerSpace, c: &Curve, traj: &Trajectory, f0: f64, samples: usize) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (k, piece) in traj.pieces.iter().enumerate() {
        for (t, y) in piece.sample(samples.max(1)) {
            let x = c.eval_on(k, t)?.0;
            let f = space.f(&x, &y[..traj.m])?;
            worst = worst.max((f - f0).abs());
        }
    }
    Ok(worst)
}

fn finish(space: &FinslerSpace, c: &Curve, u0: &[f64], traj: Trajectory, opts: &TransportOptions) -> Result<TransportResult> {
    let f0 = space.f(&c.start(), u0)?;
    let f_drift = drift(space, c, &traj, f0, opts.dense_samples)?;
    let end = traj.final_state();
    Ok(TransportResult {
        point: end[..traj.m].to_vec(),
        vector: traj.with_vector.then(|| end[traj.m..].to_vec()),
        f_drift,
        stats: traj.stats(),
    })
}

/// Horizontal lift of `c` through `u0`, evaluated at parameter `t`.
pub fn horizontal_lift(space: &FinslerSpace, c: &Curve, u0: &[f64], t: f64, opts: &TransportOptions) -> Result<TransportResult> {
    let traj = trajectory(space, c, u0, None, t, opts)?;
    finish(space, c, u0, traj, opts)
}

/// Nonlinear parallel transport `ρ_c(u0)`.
pub fn rho(space: &FinslerSpace, c: &Curve, u0: &[f64], opts: &TransportOptions) -> Result<TransportResult> {
    horizontal_lift(space, c, u0, 1.0, opts)
}

/// `ρ_c(t)_* V0`: the differential of the transport applied to `V0` at `u0`.
pub fn rho_differential(
    space: &FinslerSpace,
    c: &Curve,
    u0: &[f64],
    v0: &[f64],
    t: f64,
    opts: &TransportOptions,
) -> Result<TransportResult> {
    let traj = trajectory(space, c, u0, Some(v0), t, opts)?;
    finish(space, c, u0, traj, opts)
}

/// Transports several vectors at the same fiber point along `c`.
pub fn rho_differential_many(
    space: &FinslerSpace,
    c: &Curve,
    u0: &[f64],
    vs: &[Vec<f64>],
    opts: &TransportOptions,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut point = None;
    let mut out = Vec::with_capacity(vs.len());
    for v in vs {
        let r = rho_differential(space, c, u0, v, 1.0, opts)?;
        point.get_or_insert(r.point);
        out.push(r.vector.unwrap());
    }
    let point = match point {
        Some(p) => p,
        None => rho(space, c, u0, opts)?.point,
    };
    Ok((point, out))
}

/// `max |g_y(ρ_* V, ρ_* W) − g_x(V, W)|` over the given pairs.
pub fn isometry_check(
    space: &FinslerSpace,
    c: &Curve,
    u0: &[f64],
    pairs: &[(Vec<f64>, Vec<f64>)],
    opts: &TransportOptions,
) -> Result<f64> {
    let g0 = space.fundamental_tensor(&c.start(), u0)?;
    let mut worst: f64 = 0.0;
    for (v, w) in pairs {
        let rv = rho_differential(space, c, u0, v, 1.0, opts)?;
        let rw = rho_differential(space, c, u0, w, 1.0, opts)?;
        let g1 = space.fundamental_tensor(&c.end(), &rv.point)?;
        let after = inner(&g1, rv.vector.as_ref().unwrap(), rw.vector.as_ref().unwrap());
        worst = worst.max((after - inner(&g0, v, w)).abs());
    }
    Ok(worst)
}

/// `(ρ_loop(u0) − u0)/ε²` for the coordinate square at `x` in the `(i, j)`
/// plane traversed `+e_i, +e_j, −e_i, −e_j`. As `ε → 0` this tends to
/// `[H_i, H_j](u0) = −R(∂_i, ∂_j)(u0)`.
pub fn loop_holonomy_displacement(
    space: &FinslerSpace,
    x: &[f64],
    i: usize,
    j: usize,
    eps: f64,
    u0: &[f64],
    opts: &TransportOptions,
) -> Result<Vec<f64>> {
    let m = space.dim();
    if i >= m || j >= m {
        return Err(Error::config("loop", "plane index out of range"));
    }
    if i == j {
        return Ok(vec![0.0; m]);
    }
    let c = Curve::square_loop(x, i, j, eps)?;
    let end = rho(space, &c, u0, opts)?.point;
    Ok(end.iter().zip(u0).map(|(a, b)| (a - b) / (eps * eps)).collect())
}

/// Largest deviation of `F` from its initial value along the lift.
pub fn f_drift(space: &FinslerSpace, c: &Curve, u0: &[f64], opts: &TransportOptions) -> Result<f64> {
    Ok(rho(space, c, u0, opts)?.f_drift)
}

/// Signed angle from `from` to `to` in a two-dimensional fiber, measured in
/// the `g_{(x, from)}`-orthonormal frame whose first vector is along `from`
/// and whose orientation agrees with the coordinate one.
pub fn fiber_rotation_angle(space: &FinslerSpace, x: &[f64], from: &[f64], to: &[f64]) -> Result<f64> {
    if space.dim() != 2 {
        return Err(Error::Dimension {
            expected: 2,
            found: space.dim(),
        });
    }
    let g = space.fundamental_tensor(x, from)?;
    let n1 = inner(&g, from, from).sqrt();
    let e1: Vec<f64> = from.iter().map(|c| c / n1).collect();
    let turned = [-e1[1], e1[0]];
    let k = inner(&g, &turned, &e1);
    let raw = [turned[0] - k * e1[0], turned[1] - k * e1[1]];
    let n2 = inner(&g, &raw, &raw).sqrt();
    let e2 = [raw[0] / n2, raw[1] / n2];
    Ok(inner(&g, to, &e2).atan2(inner(&g, to, &e1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn euclidean_transport_is_identity() {
        let e = FinslerSpace::builtin("euclidean").unwrap();
        let c = Curve::polyline(&[vec![0.0, 0.0], vec![0.5, 0.2], vec![-0.3, 0.6]]).unwrap();
        let r = rho_differential(&e, &c, &[1.0, 0.0], &[0.3, -0.7], 1.0, &Default::default()).unwrap();
        assert_eq!(r.point, vec![1.0, 0.0]);
        assert_eq!(r.vector.unwrap(), vec![0.3, -0.7]);
        assert_eq!(r.f_drift, 0.0);
    }

    #[test]
    fn equator_is_a_geodesic() {
        let s = FinslerSpace::builtin("sphere2").unwrap();
        let c = Curve::coordinate_arc(&[FRAC_PI_2, 1.0], 1, FRAC_PI_2).unwrap();
        let r = rho(&s, &c, &[0.0, 1.0], &Default::default()).unwrap();
        assert!(dist(&r.point, &[0.0, 1.0]) < 1e-12);
        assert!(r.f_drift < 1e-9);
    }

    #[test]
    fn constant_curve_is_identity() {
        let s = FinslerSpace::builtin("sphere2").unwrap();
        let c = Curve::constant(&[1.0, 2.0]).unwrap();
        let r = rho(&s, &c, &[0.3, 0.4], &Default::default()).unwrap();
        assert!(dist(&r.point, &[0.3, 0.4]) < 1e-12);
    }

    #[test]
    fn reverse_curve_inverts_transport() {
        for name in ["sphere2", "poincare-disk", "randers"] {
            let s = FinslerSpace::builtin(name).unwrap();
            let c = Curve::polyline(&[vec![0.3, 0.2], vec![0.5, 0.5], vec![0.1, 0.6]]).unwrap();
            let opts = TransportOptions::default();
            let u0 = s.indicatrix_point(&[0.3, 0.2], &[0.6, -0.8]).unwrap();
            let there = rho(&s, &c, &u0, &opts).unwrap().point;
            let back = rho(&s, &c.reversed(), &there, &opts).unwrap().point;
            assert!(dist(&back, &u0) < 1e-8, "{name}");
        }
    }

    #[test]
    fn differential_is_linear_and_matches_finite_differences() {
        let s = FinslerSpace::builtin("randers").unwrap();
        let c = Curve::polyline(&[vec![0.1, 0.2], vec![0.5, -0.1]]).unwrap();
        let opts = TransportOptions::default();
        let u0 = [0.8, 0.3];
        let v = [0.2, -0.5];
        let r1 = rho_differential(&s, &c, &u0, &v, 1.0, &opts).unwrap().vector.unwrap();
        let r2 = rho_differential(&s, &c, &u0, &[0.4, -1.0], 1.0, &opts).unwrap().vector.unwrap();
        assert!(dist(&r2, &[2.0 * r1[0], 2.0 * r1[1]]) < 1e-12);
        let base = rho(&s, &c, &u0, &opts).unwrap().point;
        let mut errs = Vec::new();
        for h in [1e-3, 1e-4] {
            let shifted = [u0[0] + h * v[0], u0[1] + h * v[1]];
            let p = rho(&s, &c, &shifted, &opts).unwrap().point;
            let fd = [(p[0] - base[0]) / h, (p[1] - base[1]) / h];
            errs.push(dist(&fd, &r1));
        }
        assert!(errs[0] < 1e-2 && errs[1] < errs[0] * 0.2, "{errs:?}");
    }

    #[test]
    fn square_loop_on_flat_space_closes() {
        let e = FinslerSpace::builtin("minkowski-quartic").unwrap();
        let d = loop_holonomy_displacement(&e, &[0.0, 0.0], 0, 1, 0.1, &[0.6, 0.8], &Default::default()).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sphere_isometry_along_a_curve() {
        let s = FinslerSpace::builtin("sphere2").unwrap();
        let c = Curve::polyline(&[vec![1.0, 2.0], vec![1.4, 2.3], vec![1.2, 2.8]]).unwrap();
        let pairs = vec![(vec![1.0, 0.0], vec![0.0, 1.0]), (vec![0.3, 0.5], vec![0.3, 0.5])];
        let r = isometry_check(&s, &c, &[0.2, 0.9], &pairs, &Default::default()).unwrap();
        assert!(r < 1e-7, "{r}");
    }
}
