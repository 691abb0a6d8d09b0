//! Adaptive Dormand–Prince 5(4) integrator with continuous output.
//!
//! Step-size control follows the classic PI controller; the embedded
//! fourth-order solution supplies the local error estimate. Dense output is
//! the standard fifth-order-consistent quartic interpolant, so solutions can
//! be sampled anywhere on the integrated interval.

use serde::Serialize;

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

pub const DEFAULT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: DEFAULT_TOL,
            atol: DEFAULT_TOL,
            max_steps: 200_000,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions {
            rtol: tol,
            atol: tol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepStats {
    pub steps: usize,
    pub rejected: usize,
    pub evaluations: usize,
    /// Largest max-norm local error estimate over accepted steps.
    pub max_error: f64,
}

impl StepStats {
    pub fn absorb(&mut self, other: &StepStats) {
        self.steps += other.steps;
        self.rejected += other.rejected;
        self.evaluations += other.evaluations;
        self.max_error = self.max_error.max(other.max_error);
    }
}

#[derive(Debug, Clone)]
struct DenseStep {
    t0: f64,
    h: f64,
    r: [Vec<f64>; 5],
}

impl DenseStep {
    fn eval(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        (0..self.r[0].len())
            .map(|i| {
                let r = |k: usize| self.r[k][i];
                r(0) + th * (r(1) + th1 * (r(2) + th * (r(3) + th1 * r(4))))
            })
            .collect()
    }

    fn derivative(&self, t: f64) -> Vec<f64> {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        (0..self.r[0].len())
            .map(|i| {
                let r = |k: usize| self.r[k][i];
                (r(1) + (1.0 - 2.0 * th) * r(2)
                    + (2.0 * th - 3.0 * th * th) * r(3)
                    + (2.0 * th * th1 * th1 - 2.0 * th * th * th1) * r(4))
                    / self.h
            })
            .collect()
    }
}

/// Accepted steps of one integration with continuous output.
#[derive(Debug, Clone)]
pub struct Solution {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub stats: StepStats,
    dense: Vec<DenseStep>,
}

impl Solution {
    pub fn final_state(&self) -> &[f64] {
        self.y.last().expect("solution has at least the initial state")
    }

    fn step_index(&self, t: f64) -> Option<usize> {
        if self.dense.is_empty() {
            return None;
        }
        let forward = self.dense[0].h > 0.0;
        let idx = self.t[1..].partition_point(|&tk| if forward { tk < t } else { tk > t });
        Some(idx.min(self.dense.len() - 1))
    }

    /// Interpolated state; exact at step endpoints.
    pub fn eval(&self, t: f64) -> Vec<f64> {
        match self.step_index(t) {
            Some(i) => self.dense[i].eval(t),
            None => self.y[0].clone(),
        }
    }

    /// Time derivative of the interpolant.
    pub fn derivative(&self, t: f64) -> Vec<f64> {
        match self.step_index(t) {
            Some(i) => self.dense[i].derivative(t),
            None => vec![0.0; self.y[0].len()],
        }
    }

    /// `n + 1` equally spaced samples of the dense output, endpoints included.
    pub fn sample(&self, n: usize) -> Vec<(f64, Vec<f64>)> {
        let (a, b) = (self.t[0], *self.t.last().unwrap());
        (0..=n)
            .map(|k| {
                let t = if k == n { b } else { a + (b - a) * k as f64 / n as f64 };
                (t, self.eval(t))
            })
            .collect()
    }
}

fn axpy(y: &[f64], terms: &[(f64, &[f64])], h: f64) -> Vec<f64> {
    let mut out = y.to_vec();
    for (c, k) in terms {
        if *c != 0.0 {
            for (o, v) in out.iter_mut().zip(k.iter()) {
                *o += h * c * v;
            }
        }
    }
    out
}

fn check_finite(t: f64, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Integration {
            t,
            message: "right-hand side produced a non-finite value".into(),
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn initial_step<F>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    k1: &[f64],
    dir: f64,
    span: f64,
    opts: &OdeOptions,
    weights: &[f64],
) -> Result<f64>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    let sk: Vec<f64> = y0
        .iter()
        .zip(weights)
        .map(|(v, w)| opts.atol * w + opts.rtol * v.abs())
        .collect();
    let norm = |v: &[f64]| {
        (v.iter().zip(&sk).map(|(a, s)| (a / s).powi(2)).sum::<f64>() / v.len().max(1) as f64).sqrt()
    };
    let (dnf, dny) = (norm(k1), norm(y0));
    let mut h = if dnf <= 1e-10 || dny <= 1e-10 { 1e-6 } else { 0.01 * dny / dnf };
    h = h.min(span);
    let y1 = axpy(y0, &[(1.0, k1)], dir * h);
    let k2 = f(t0 + dir * h, &y1)?;
    check_finite(t0 + dir * h, &k2)?;
    let diff: Vec<f64> = k2.iter().zip(k1).map(|(a, b)| a - b).collect();
    let der2 = norm(&diff) / h;
    let der12 = der2.max(dnf.max(0.0));
    let h1 = if der12 <= 1e-15 {
        (1e-6f64).max(h * 1e-3)
    } else {
        (0.01 / der12).powf(0.2)
    };
    Ok((100.0 * h).min(h1).min(span))
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction).
pub fn integrate<F>(f: F, t0: f64, t1: f64, y0: &[f64], opts: &OdeOptions) -> Result<Solution>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    integrate_weighted(f, t0, t1, y0, opts, &vec![1.0; y0.len()])
}

/// Like [`integrate`], with the absolute tolerance of component `i` scaled
/// by `weights[i]`. Scaling a block of linear components together with its
/// weights by a power of two then reproduces the step sequence exactly.
pub fn integrate_weighted<F>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: &[f64],
    opts: &OdeOptions,
    weights: &[f64],
) -> Result<Solution>
where
    F: FnMut(f64, &[f64]) -> Result<Vec<f64>>,
{
    if weights.len() != y0.len() {
        return Err(Error::Dimension {
            expected: y0.len(),
            found: weights.len(),
        });
    }
    let mut sol = Solution {
        t: vec![t0],
        y: vec![y0.to_vec()],
        stats: StepStats::default(),
        dense: Vec::new(),
    };
    let span = (t1 - t0).abs();
    if span == 0.0 || y0.is_empty() {
        return Ok(sol);
    }
    let dir = (t1 - t0).signum();
    let n = y0.len();
    let mut t = t0;
    let mut y = y0.to_vec();
    let mut k1 = f(t, &y)?;
    check_finite(t, &k1)?;
    sol.stats.evaluations += 1;
    let mut h = initial_step(&mut f, t, &y, &k1, dir, span, opts, weights)?;
    sol.stats.evaluations += 1;
    let mut facold: f64 = 1e-4;
    let mut last_rejected = false;
    let (beta, safe, fac_min, fac_max): (f64, f64, f64, f64) = (0.04, 0.9, 0.2, 10.0);
    let expo = 0.2 - beta * 0.75;

    loop {
        if sol.stats.steps + sol.stats.rejected >= opts.max_steps {
            return Err(Error::Integration {
                t,
                message: format!("step budget of {} exhausted", opts.max_steps),
            });
        }
        let remaining = (t1 - t).abs();
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(Error::Integration {
                t,
                message: format!("step size underflow (h = {h:.3e})"),
            });
        }
        let hs = dir * h;
        let y2 = axpy(&y, &[(A21, &k1)], hs);
        let k2 = f(t + C2 * hs, &y2)?;
        let y3 = axpy(&y, &[(A31, &k1), (A32, &k2)], hs);
        let k3 = f(t + C3 * hs, &y3)?;
        let y4 = axpy(&y, &[(A41, &k1), (A42, &k2), (A43, &k3)], hs);
        let k4 = f(t + C4 * hs, &y4)?;
        let y5 = axpy(&y, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)], hs);
        let k5 = f(t + C5 * hs, &y5)?;
        let y6 = axpy(&y, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)], hs);
        let tnew = if last { t1 } else { t + hs };
        let k6 = f(tnew, &y6)?;
        let ynew = axpy(&y, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)], hs);
        let k7 = f(tnew, &ynew)?;
        sol.stats.evaluations += 6;
        for (k, s) in [(&k2, C2), (&k3, C3), (&k4, C4), (&k5, C5), (&k6, 1.0), (&k7, 1.0)] {
            check_finite(t + s * hs, k)?;
        }

        let mut err_sq = 0.0;
        let mut err_max: f64 = 0.0;
        for i in 0..n {
            let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sk = opts.atol * weights[i] + opts.rtol * y[i].abs().max(ynew[i].abs());
            err_sq += (e / sk).powi(2);
            err_max = err_max.max(e.abs());
        }
        let err = (err_sq / n as f64).sqrt();
        let fac11 = err.powf(expo);

        if err <= 1.0 {
            let mut fac = fac11 / facold.powf(beta);
            fac = (1.0 / fac_max).max((1.0 / fac_min).min(fac / safe));
            let mut hnew = h / fac;
            if last_rejected {
                hnew = hnew.min(h);
            }
            facold = err.max(1e-4);

            let ydiff: Vec<f64> = ynew.iter().zip(&y).map(|(a, b)| a - b).collect();
            let bspl: Vec<f64> = (0..n).map(|i| hs * k1[i] - ydiff[i]).collect();
            let r4: Vec<f64> = (0..n).map(|i| ydiff[i] - hs * k7[i] - bspl[i]).collect();
            let r5: Vec<f64> = (0..n)
                .map(|i| {
                    hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
                })
                .collect();
            sol.dense.push(DenseStep {
                t0: t,
                h: tnew - t,
                r: [y.clone(), ydiff, bspl, r4, r5],
            });
            sol.stats.steps += 1;
            sol.stats.max_error = sol.stats.max_error.max(err_max);
            t = tnew;
            y = ynew;
            k1 = k7;
            sol.t.push(t);
            sol.y.push(y.clone());
            if last {
                return Ok(sol);
            }
            h = hnew.min((t1 - t).abs());
            last_rejected = false;
        } else {
            sol.stats.rejected += 1;
            h /= (1.0 / fac_min).min(fac11 / safe);
            last_rejected = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let sol = integrate(|_, y| Ok(vec![-y[0]]), 0.0, 2.0, &[1.0], &OdeOptions::default()).unwrap();
        assert!((sol.final_state()[0] - (-2.0f64).exp()).abs() < 1e-9);
        assert!(sol.stats.steps > 0);
        for k in 0..=40 {
            let t = k as f64 * 0.05;
            assert!((sol.eval(t)[0] - (-t).exp()).abs() < 1e-9, "t={t}");
            assert!((sol.derivative(t)[0] + (-t).exp()).abs() < 1e-7, "t={t}");
        }
    }

    #[test]
    fn harmonic_oscillator_backwards() {
        let f = |_: f64, y: &[f64]| Ok(vec![y[1], -y[0]]);
        let sol = integrate(f, 1.0, -2.0, &[1f64.cos(), -1f64.sin()], &OdeOptions::default()).unwrap();
        let y = sol.final_state();
        assert!((y[0] - (-2f64).cos()).abs() < 1e-9);
        assert!((y[1] + (-2f64).sin()).abs() < 1e-9);
        let mid = sol.eval(0.3);
        assert!((mid[0] - 0.3f64.cos()).abs() < 1e-9);
    }

    #[test]
    fn coarse_tolerance_takes_fewer_steps() {
        let f = |t: f64, y: &[f64]| Ok(vec![y[0] * t.cos()]);
        let fine = integrate(f, 0.0, 10.0, &[1.0], &OdeOptions::default()).unwrap();
        let coarse = integrate(f, 0.0, 10.0, &[1.0], &OdeOptions::with_tol(1e-4)).unwrap();
        assert!(coarse.stats.steps < fine.stats.steps);
        let exact = 10f64.sin().exp();
        assert!((fine.final_state()[0] - exact).abs() < 1e-8);
    }

    #[test]
    fn non_finite_rhs_is_an_error() {
        // y = 1/(1 - t) blows up at t = 1
        let r = integrate(|_, y| Ok(vec![y[0] * y[0]]), 0.0, 2.0, &[1.0], &OdeOptions::default());
        assert!(matches!(r, Err(Error::Integration { .. })));
    }
}
