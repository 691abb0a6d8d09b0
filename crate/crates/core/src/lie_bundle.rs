//! Finite-dimensional Lie algebra bundles over a coordinate box, with a
//! linear connection given by coefficient matrices per base direction.
//!
//! Index conventions: `structure[c][a][b] = C^c_ab` and
//! `connection[i][b][a] = (K_i)^b_a`, so that `∇_{∂_i} e_a = (K_i)^b_a e_b`.
//! Along a curve the frame matrix obeys `dΛ^b_a/dt + Λ^c_a K^b_c(ċ) = 0`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::autodiff::{constants, jvp, DiffScalar};
use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use crate::field::VerticalField;
use crate::geometry::FinslerSpace;
use crate::metric::DomainBox;
use crate::ode::{integrate, OdeOptions, Solution, StepStats};
use crate::rank::{independent_rows, least_squares, SpanReport, REQUIRED_GAP};
use crate::sampling::SampleSpec;
use crate::holonomy::evaluate_rows;

/// Points per segment used to check that a curve stays in the model domain.
const DOMAIN_SAMPLES: usize = 64;

/// Frames whose matrix determinant falls below this are treated as singular.
const SINGULAR_DET: f64 = 1e-10;

pub const SCALAR_DEFAULT_K: f64 = 0.7;

/// Integrator tolerance for frames whose covariant-derivative residual is
/// checked. The residual differentiates the dense interpolant, whose defect
/// is about three orders of magnitude above the step tolerance.
pub const FRAME_TOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LieModelSpec {
    Builtin {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
    Expression {
        name: String,
        domain: Vec<[f64; 2]>,
        fiber_dimension: usize,
        /// `structure[c][a][b] = C^c_ab(x)`.
        structure: Vec<Vec<Vec<String>>>,
        /// `connection[i][b][a] = (K_i)^b_a(x)`.
        connection: Vec<Vec<Vec<String>>>,
    },
}

impl LieModelSpec {
    pub fn builtin(name: &str) -> LieModelSpec {
        LieModelSpec::Builtin {
            name: name.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn build(&self) -> Result<LieAlgebraBundleModel> {
        match self {
            LieModelSpec::Builtin { name, params } => builtin_model(name, params),
            LieModelSpec::Expression {
                name,
                domain,
                fiber_dimension,
                structure,
                connection,
            } => {
                let lo = domain.iter().map(|r| r[0]).collect();
                let hi = domain.iter().map(|r| r[1]).collect();
                LieAlgebraBundleModel::new(
                    name,
                    DomainBox::new(lo, hi)?,
                    *fiber_dimension,
                    &nested_strs(structure),
                    &nested_strs(connection),
                )
            }
        }
    }
}

fn nested_strs(v: &[Vec<Vec<String>>]) -> Vec<Vec<Vec<&str>>> {
    v.iter()
        .map(|m| m.iter().map(|r| r.iter().map(String::as_str).collect()).collect())
        .collect()
}

pub const BUILTIN_MODELS: [&str; 5] = ["scalar", "flat-so3", "so3-ad", "so3-nonderivation", "abelian-rotation"];

fn levi_civita(a: usize, b: usize, c: usize) -> i32 {
    match (a, b, c) {
        (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1,
        (0, 2, 1) | (2, 1, 0) | (1, 0, 2) => -1,
        _ => 0,
    }
}

fn so3_structure() -> Vec<Vec<Vec<String>>> {
    (0..3)
        .map(|c| {
            (0..3)
                .map(|a| (0..3).map(|b| levi_civita(a, b, c).to_string()).collect())
                .collect()
        })
        .collect()
}

/// `(ad ξ)^b_a = ξ^d ε_dab` for a vector of component expressions.
fn ad_matrix(xi: [&str; 3]) -> Vec<Vec<String>> {
    (0..3)
        .map(|b| {
            (0..3)
                .map(|a| {
                    let terms: Vec<String> = (0..3)
                        .filter_map(|d| match levi_civita(d, a, b) {
                            0 => None,
                            s => Some(format!("{}({})", if s > 0 { "+" } else { "-" }, xi[d])),
                        })
                        .collect();
                    match terms.concat() {
                        t if t.is_empty() => "0".into(),
                        t => format!("0{t}"),
                    }
                })
                .collect()
        })
        .collect()
}

fn zero_matrix(n: usize) -> Vec<Vec<String>> {
    vec![vec!["0".to_string(); n]; n]
}

fn builtin_model(name: &str, params: &BTreeMap<String, f64>) -> Result<LieAlgebraBundleModel> {
    let unknown = params.keys().find(|k| !(name == "scalar" && *k == "k"));
    if let Some(k) = unknown {
        return Err(Error::config(format!("lie_model.params.{k}"), "unknown parameter"));
    }
    let square = DomainBox::uniform(2, -1.5, 1.5);
    let (domain, n, structure, connection) = match name {
        // one-dimensional fiber with the constant connection coefficient k
        "scalar" => {
            let k = params.get("k").copied().unwrap_or(SCALAR_DEFAULT_K);
            (
                DomainBox::uniform(1, -2.0, 2.0),
                1,
                vec![vec![vec!["0".to_string()]]],
                vec![vec![vec![format!("{k:e}")]]],
            )
        }
        "flat-so3" => (square, 3, so3_structure(), vec![zero_matrix(3), zero_matrix(3)]),
        "so3-ad" => (
            square,
            3,
            so3_structure(),
            vec![ad_matrix(["1", "x2", "0.5*x1"]), ad_matrix(["x1*x2", "0", "1 + 0.3*x1"])],
        ),
        "so3-nonderivation" => {
            let mut k1 = zero_matrix(3);
            k1[0][0] = "1".into();
            (square, 3, so3_structure(), vec![k1, zero_matrix(3)])
        }
        // abelian fiber rotated about the third axis along x1 and about the
        // first axis along x2
        "abelian-rotation" => {
            let mut k1 = zero_matrix(3);
            k1[1][0] = "1".into();
            k1[0][1] = "-1".into();
            let mut k2 = zero_matrix(3);
            k2[2][1] = "1".into();
            k2[1][2] = "-1".into();
            (
                square,
                3,
                vec![zero_matrix(3), zero_matrix(3), zero_matrix(3)],
                vec![k1, k2],
            )
        }
        other => {
            return Err(Error::config(
                "lie_model.name",
                format!("unknown model '{other}'; known: {}", BUILTIN_MODELS.join(", ")),
            ))
        }
    };
    LieAlgebraBundleModel::new(name, domain, n, &nested_strs(&structure), &nested_strs(&connection))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LieAlgebraBundleModel {
    pub name: String,
    pub domain: DomainBox,
    pub fiber_dim: usize,
    structure: Vec<Vec<Vec<Expr>>>,
    connection: Vec<Vec<Vec<Expr>>>,
}

impl LieAlgebraBundleModel {
    /// Parses and validates the model: shapes, base-only dependence,
    /// antisymmetry and the Jacobi identity at sampled points.
    pub fn new(
        name: &str,
        domain: DomainBox,
        n: usize,
        structure: &[Vec<Vec<&str>>],
        connection: &[Vec<Vec<&str>>],
    ) -> Result<LieAlgebraBundleModel> {
        let m = domain.dim();
        let parse = |path: String, s: &str| -> Result<Expr> {
            let e = Expr::parse(s).map_err(|e| Error::config(path.clone(), e.to_string()))?;
            let usage = e.usage();
            if usage.max_u > 0 || usage.uses_t || usage.max_x > m {
                return Err(Error::config(path, format!("may only use x1..x{m}")));
            }
            Ok(e)
        };
        let cube = |label: &str, data: &[Vec<Vec<&str>>], outer: usize| -> Result<Vec<Vec<Vec<Expr>>>> {
            if data.len() != outer || data.iter().any(|s| s.len() != n || s.iter().any(|r| r.len() != n)) {
                return Err(Error::config(label, format!("expected shape {outer}×{n}×{n}")));
            }
            data.iter()
                .enumerate()
                .map(|(p, s)| {
                    s.iter()
                        .enumerate()
                        .map(|(q, r)| {
                            r.iter()
                                .enumerate()
                                .map(|(k, e)| parse(format!("{label}[{p}][{q}][{k}]"), e))
                                .collect()
                        })
                        .collect()
                })
                .collect()
        };
        let model = LieAlgebraBundleModel {
            name: name.into(),
            domain,
            fiber_dim: n,
            structure: cube("structure", structure, n)?,
            connection: cube("connection", connection, m)?,
        };
        for x in model.validation_points() {
            let c = model.structure_constants(&x)?;
            for a in 0..n {
                for b in 0..n {
                    for k in 0..n {
                        if (c[k][a][b] + c[k][b][a]).abs() > 1e-12 {
                            return Err(Error::config(
                                "structure",
                                format!("C^{k}_{a}{b} is not antisymmetric at x = {x:?}"),
                            ));
                        }
                    }
                }
            }
            let j = jacobi_residual(&c);
            if j > 1e-10 {
                return Err(Error::config("structure", format!("Jacobi identity fails by {j:e} at x = {x:?}")));
            }
        }
        Ok(model)
    }

    pub fn base_dim(&self) -> usize {
        self.domain.dim()
    }

    fn validation_points(&self) -> Vec<Vec<f64>> {
        let m = self.base_dim();
        let ticks = [0.2, 0.5, 0.8];
        let mut out = Vec::new();
        for k in 0..3usize.pow(m as u32) {
            let s: Vec<f64> = (0..m).map(|d| ticks[(k / 3usize.pow(d as u32)) % 3]).collect();
            out.push(self.domain.lerp(&s));
        }
        out
    }

    fn eval_cube<S: crate::autodiff::Scalar>(cube: &[Vec<Vec<Expr>>], x: &[S]) -> Result<Vec<Vec<Vec<S>>>> {
        let env = Env::xu(x, &[]);
        cube.iter()
            .map(|s| s.iter().map(|r| r.iter().map(|e| e.eval(&env)).collect()).collect())
            .collect()
    }

    /// `C^c_ab(x)` indexed `[c][a][b]`.
    pub fn structure_constants(&self, x: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        Self::eval_cube(&self.structure, x)
    }

    /// `(K_i)^b_a(x)` indexed `[i][b][a]`.
    pub fn connection_coefficients(&self, x: &[f64]) -> Result<Vec<Vec<Vec<f64>>>> {
        Self::eval_cube(&self.connection, x)
    }

    /// Fiber bracket `[v, w]^c = C^c_ab v^a w^b` at `x`.
    pub fn bracket(&self, x: &[f64], v: &[f64], w: &[f64]) -> Result<Vec<f64>> {
        let c = self.structure_constants(x)?;
        Ok(bracket_with(&c, v, w))
    }

    /// `K^b_a(ċ) = ċ^i (K_i)^b_a`.
    fn contracted_connection(&self, x: &[f64], velocity: &[f64]) -> Result<Vec<Vec<f64>>> {
        let k = self.connection_coefficients(x)?;
        let n = self.fiber_dim;
        let mut out = vec![vec![0.0; n]; n];
        for (ki, vi) in k.iter().zip(velocity) {
            for b in 0..n {
                for a in 0..n {
                    out[b][a] += vi * ki[b][a];
                }
            }
        }
        Ok(out)
    }

    fn check_curve(&self, c: &Curve) -> Result<()> {
        if c.dim() != self.base_dim() {
            return Err(Error::Dimension {
                expected: self.base_dim(),
                found: c.dim(),
            });
        }
        let total = DOMAIN_SAMPLES * c.segment_count();
        for k in 0..=total {
            let t = k as f64 / total as f64;
            let p = c.point(t)?;
            if !self.domain.contains(&p) {
                return Err(Error::config("curve", format!("leaves the model domain at t = {t}: {p:?}")));
            }
        }
        Ok(())
    }
}

fn bracket_with(c: &[Vec<Vec<f64>>], v: &[f64], w: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|k| {
            let mut s = 0.0;
            for a in 0..n {
                for b in 0..n {
                    s += c[k][a][b] * v[a] * w[b];
                }
            }
            s
        })
        .collect()
}

/// Max over `(a, b, c, e)` of the cyclic sum `C^d_ab C^e_dc + C^d_bc C^e_da + C^d_ca C^e_db`.
pub fn jacobi_residual(c: &[Vec<Vec<f64>>]) -> f64 {
    let n = c.len();
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in 0..n {
            for cc in 0..n {
                for e in 0..n {
                    let mut s = 0.0;
                    for d in 0..n {
                        s += c[d][a][b] * c[e][d][cc] + c[d][b][cc] * c[e][d][a] + c[d][cc][a] * c[e][d][b];
                    }
                    worst = worst.max(s.abs());
                }
            }
        }
    }
    worst
}

/// Parallel frame along a curve: `η_a(t) = Λ^b_a(t) ξ_b(t)` composed with the
/// initial frame.
#[derive(Debug, Clone)]
pub struct ParallelFrame {
    curve: Curve,
    pieces: Vec<Solution>,
    n: usize,
    /// Columns are the initial frame vectors.
    frame0: Vec<Vec<f64>>,
}

impl ParallelFrame {
    fn piece_for(&self, t: f64) -> usize {
        (0..self.pieces.len())
            .find(|&k| t <= self.curve.segment_interval(k).1)
            .unwrap_or(self.pieces.len() - 1)
    }

    /// `Λ(t)` with `Λ(0) = I`, as `[b][a]`.
    pub fn lambda_at(&self, t: f64) -> Vec<Vec<f64>> {
        let y = self.pieces[self.piece_for(t)].eval(t);
        unflatten(&y, self.n)
    }

    /// Frame vectors at `t`, one per initial vector, in components along `ξ`.
    pub fn frame_at(&self, t: f64) -> Vec<Vec<f64>> {
        let l = self.lambda_at(t);
        self.frame0
            .iter()
            .map(|f| (0..self.n).map(|b| (0..self.n).map(|a| l[b][a] * f[a]).sum()).collect())
            .collect()
    }

    pub fn final_lambda(&self) -> Vec<Vec<f64>> {
        self.lambda_at(1.0)
    }

    pub fn stats(&self) -> StepStats {
        let mut s = StepStats::default();
        for p in &self.pieces {
            s.absorb(&p.stats);
        }
        s
    }

    /// `max |Λ̇^b_a + Λ^c_a K^b_c(ċ)|` over `samples` points per segment, with
    /// `Λ̇` taken from the derivative of the dense interpolant.
    pub fn nabla_residual(&self, model: &LieAlgebraBundleModel, samples: usize) -> Result<f64> {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for k in 0..self.pieces.len() {
            let (a, b) = self.curve.segment_interval(k);
            for s in 0..=samples {
                let t = a + (b - a) * s as f64 / samples as f64;
                let (x, vel) = self.curve.eval_on(k, t)?;
                let kc = model.contracted_connection(&x, &vel)?;
                let l = self.pieces[k].eval(t);
                let l = unflatten(&l, n);
                let dl = unflatten(&self.pieces[k].derivative(t), n);
                for bb in 0..n {
                    for aa in 0..n {
                        let r: f64 = dl[bb][aa] + (0..n).map(|c| l[c][aa] * kc[bb][c]).sum::<f64>();
                        worst = worst.max(r.abs());
                    }
                }
            }
        }
        Ok(worst)
    }

    /// Structure constants of the bracket written in the parallel frame at `t`
    /// (for a Lie connection these do not depend on `t`).
    pub fn structure_in_frame(&self, model: &LieAlgebraBundleModel, t: f64) -> Result<Vec<Vec<Vec<f64>>>> {
        let n = self.n;
        let x = self.curve.point(t)?;
        let c = model.structure_constants(&x)?;
        let frame = self.frame_at(t);
        let mat = DMatrix::from_fn(n, n, |b, a| frame[a][b]);
        let inv = mat
            .try_inverse()
            .ok_or_else(|| Error::IllConditioned(format!("parallel frame is singular at t = {t}")))?;
        let mut out = vec![vec![vec![0.0; n]; n]; n];
        for a in 0..n {
            for b in 0..n {
                let br = bracket_with(&c, &frame[a], &frame[b]);
                for k in 0..n {
                    out[k][a][b] = (0..n).map(|d| inv[(k, d)] * br[d]).sum();
                }
            }
        }
        Ok(out)
    }
}

fn unflatten(y: &[f64], n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|b| y[b * n..(b + 1) * n].to_vec()).collect()
}

fn determinant(l: &[Vec<f64>]) -> f64 {
    let n = l.len();
    DMatrix::from_fn(n, n, |i, j| l[i][j]).determinant()
}

/// Integrates the frame ODE along `c`. `frame0` holds the initial frame
/// vectors in components along `ξ`.
pub fn parallel_frame(
    model: &LieAlgebraBundleModel,
    c: &Curve,
    frame0: &[Vec<f64>],
    opts: &OdeOptions,
) -> Result<ParallelFrame> {
    let n = model.fiber_dim;
    if frame0.len() != n || frame0.iter().any(|f| f.len() != n) {
        return Err(Error::Dimension {
            expected: n,
            found: frame0.len(),
        });
    }
    let f0: Vec<Vec<f64>> = (0..n).map(|b| (0..n).map(|a| frame0[a][b]).collect()).collect();
    if determinant(&f0).abs() < SINGULAR_DET {
        return Err(Error::config("frame0", "initial frame is linearly dependent"));
    }
    model.check_curve(c)?;
    let mut state: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect();
    let mut pieces = Vec::with_capacity(c.segment_count());
    for k in 0..c.segment_count() {
        let (a, b) = c.segment_interval(k);
        let rhs = |t: f64, y: &[f64]| -> Result<Vec<f64>> {
            let (x, vel) = c.eval_on(k, t)?;
            let kc = model.contracted_connection(&x, &vel)?;
            let mut out = vec![0.0; n * n];
            for bb in 0..n {
                for aa in 0..n {
                    out[bb * n + aa] = -(0..n).map(|cc| y[cc * n + aa] * kc[bb][cc]).sum::<f64>();
                }
            }
            Ok(out)
        };
        let sol = integrate(rhs, a, b, &state, opts)?;
        for (t, y) in sol.t.iter().zip(&sol.y) {
            let det = determinant(&unflatten(y, n));
            if det.abs() < SINGULAR_DET {
                return Err(Error::Integration {
                    t: *t,
                    message: format!("frame matrix degenerates (det = {det:e}); the frame is valid only before this point"),
                });
            }
        }
        state = sol.final_state().to_vec();
        pieces.push(sol);
    }
    Ok(ParallelFrame {
        curve: c.clone(),
        pieces,
        n,
        frame0: frame0.to_vec(),
    })
}

/// Identity frame `ξ_1, …, ξ_n`.
pub fn standard_frame(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|a| (0..n).map(|b| if a == b { 1.0 } else { 0.0 }).collect()).collect()
}

/// Frame at `x` obtained by transporting `frame0` along the straight ray from
/// `origin`; the building block of the local trivialization by rays.
pub fn ray_frame(
    model: &LieAlgebraBundleModel,
    origin: &[f64],
    x: &[f64],
    frame0: &[Vec<f64>],
    opts: &OdeOptions,
) -> Result<Vec<Vec<f64>>> {
    let w: Vec<f64> = x.iter().zip(origin).map(|(a, b)| a - b).collect();
    let ray = Curve::affine(origin, &w)?;
    Ok(parallel_frame(model, &ray, frame0, opts)?.frame_at(1.0))
}

/// `max |∂_i C^c_ab + C^d_ab (K_i)^c_d − C^c_db (K_i)^d_a − C^c_ad (K_i)^d_b|`.
/// Zero exactly when `∇_{∂_i}` is a derivation of the bracket at `x`.
pub fn lie_connection_residual(model: &LieAlgebraBundleModel, x: &[f64], i: usize) -> Result<f64> {
    let m = model.base_dim();
    if i >= m {
        return Err(Error::Dimension { expected: m, found: i + 1 });
    }
    let n = model.fiber_dim;
    let dir: Vec<f64> = (0..m).map(|k| if k == i { 1.0 } else { 0.0 }).collect();
    let (_, dc) = jvp(
        |p| {
            let cube = LieAlgebraBundleModel::eval_cube(&model.structure, p)?;
            Ok(cube.into_iter().flatten().flatten().collect::<Vec<DiffScalar>>())
        },
        &constants(x),
        &constants(&dir),
    )?;
    let c = model.structure_constants(x)?;
    let k = &model.connection_coefficients(x)?[i];
    let mut worst: f64 = 0.0;
    for cc in 0..n {
        for a in 0..n {
            for b in 0..n {
                let mut r = dc[(cc * n + a) * n + b].value();
                for d in 0..n {
                    r += c[d][a][b] * k[cc][d] - c[cc][d][b] * k[d][a] - c[cc][a][d] * k[d][b];
                }
                worst = worst.max(r.abs());
            }
        }
    }
    Ok(worst)
}

/// `max |τ_c[e_a, e_b] − [τ_c e_a, τ_c e_b]|` over the given index pairs (all
/// pairs `a < b` when empty).
pub fn transport_bracket_check(
    model: &LieAlgebraBundleModel,
    c: &Curve,
    pairs: &[(usize, usize)],
    opts: &OdeOptions,
) -> Result<f64> {
    let n = model.fiber_dim;
    let pf = parallel_frame(model, c, &standard_frame(n), opts)?;
    let tau = pf.final_lambda();
    let cx = model.structure_constants(&c.start())?;
    let cy = model.structure_constants(&c.end())?;
    let column = |a: usize| -> Vec<f64> { (0..n).map(|b| tau[b][a]).collect() };
    let all: Vec<(usize, usize)>;
    let pairs = if pairs.is_empty() {
        all = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
        &all[..]
    } else {
        pairs
    };
    let mut worst: f64 = 0.0;
    for &(a, b) in pairs {
        if a >= n || b >= n {
            return Err(Error::Dimension { expected: n, found: a.max(b) + 1 });
        }
        let lhs: Vec<f64> = (0..n)
            .map(|d| (0..n).map(|k| cx[k][a][b] * tau[d][k]).sum())
            .collect();
        let rhs = bracket_with(&cy, &column(a), &column(b));
        for d in 0..n {
            worst = worst.max((lhs[d] - rhs[d]).abs());
        }
    }
    Ok(worst)
}

/// Basis of a sampled field span and the bracket structure constants fitted
/// in that basis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HolonomyFrame {
    /// Indices into the input field list.
    pub basis: Vec<usize>,
    /// `structure[c][a][b]` with `[V_a, V_b] ≈ C^c_ab V_c`.
    pub structure: Vec<Vec<Vec<f64>>>,
    /// Largest least-squares residual over all fitted brackets.
    pub residual: f64,
    pub span: SpanReport,
}

pub fn frame_from_holonomy(
    space: &FinslerSpace,
    x: &[f64],
    fields: &[VerticalField],
    sample: &SampleSpec,
    tol: f64,
    cap: usize,
) -> Result<HolonomyFrame> {
    let span = crate::holonomy::span_dimension(space, fields, x, sample, tol)?;
    if !span.gap_at_least(REQUIRED_GAP) {
        return Err(Error::IllConditioned(format!(
            "rank {} is not separated (gap ratio {:?}); use more fiber samples or a different tolerance",
            span.rank, span.gap_ratio
        )));
    }
    let basis = independent_rows(&span.matrix, tol);
    let r = basis.len();
    let rows: Vec<Vec<f64>> = basis.iter().map(|&k| span.matrix[k].clone()).collect();
    let mut brackets = Vec::new();
    for &a in &basis {
        for &b in &basis {
            brackets.push(VerticalField::bracket(&fields[a], &fields[b], cap)?);
        }
    }
    let us = &span.sample_points;
    let evaluated = evaluate_rows(space, &brackets, x, us)?;
    let mut fit = vec![vec![vec![0.0; r]; r]; r];
    let mut residual: f64 = 0.0;
    for a in 0..r {
        for b in 0..r {
            let (coef, res) = least_squares(&rows, &evaluated[a * r + b])?;
            residual = residual.max(res);
            for c in 0..r {
                fit[c][a][b] = coef[c];
            }
        }
    }
    let mut structure = vec![vec![vec![0.0; r]; r]; r];
    for c in 0..r {
        for a in 0..r {
            for b in 0..r {
                structure[c][a][b] = 0.5 * (fit[c][a][b] - fit[c][b][a]);
            }
        }
    }
    Ok(HolonomyFrame {
        basis,
        structure,
        residual,
        span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts() -> OdeOptions {
        OdeOptions::default()
    }

    #[test]
    fn builtins_validate() {
        for name in BUILTIN_MODELS {
            LieModelSpec::builtin(name).build().unwrap();
        }
        assert!(LieModelSpec::builtin("nope").build().is_err());
    }

    #[test]
    fn jacobi_violation_is_rejected() {
        // a non-Lie bracket on ℝ³: [e1, e2] = e1, [e2, e3] = e2, [e1, e3] = e3
        let z = "0";
        let mut s = vec![vec![vec![z; 3]; 3]; 3];
        s[0][0][1] = "1";
        s[0][1][0] = "-1";
        s[1][1][2] = "1";
        s[1][2][1] = "-1";
        s[2][0][2] = "1";
        s[2][2][0] = "-1";
        let k = vec![vec![vec![z; 3]; 3]];
        let err = LieAlgebraBundleModel::new("bad", DomainBox::uniform(1, -1.0, 1.0), 3, &s, &k).unwrap_err();
        assert!(err.to_string().contains("Jacobi"), "{err}");
    }

    #[test]
    fn zero_connection_keeps_identity() {
        let m = LieModelSpec::builtin("flat-so3").build().unwrap();
        let c = Curve::polyline(&[vec![0.0, 0.0], vec![0.7, -0.3], vec![0.2, 0.9]]).unwrap();
        let pf = parallel_frame(&m, &c, &standard_frame(3), &opts()).unwrap();
        assert_eq!(pf.final_lambda(), standard_frame(3));
        assert_eq!(lie_connection_residual(&m, &[0.1, 0.2], 1).unwrap(), 0.0);
    }

    #[test]
    fn scalar_model_decays_exponentially() {
        let m = LieModelSpec::builtin("scalar").build().unwrap();
        let c = Curve::affine(&[0.0], &[1.0]).unwrap();
        let pf = parallel_frame(&m, &c, &standard_frame(1), &opts()).unwrap();
        for t in [0.0, 0.3, 0.5, 1.0] {
            let l = pf.lambda_at(t)[0][0];
            assert!((l - (-SCALAR_DEFAULT_K * t).exp()).abs() < 1e-10, "{t}: {l}");
        }
    }

    #[test]
    fn ad_connection_is_lie() {
        let m = LieModelSpec::builtin("so3-ad").build().unwrap();
        for x in [[0.1, -0.4], [0.9, 0.6]] {
            for i in 0..2 {
                assert!(lie_connection_residual(&m, &x, i).unwrap() < 1e-12);
            }
        }
        let c = Curve::polyline(&[vec![-0.5, 0.2], vec![0.4, 0.8], vec![1.0, -0.6]]).unwrap();
        assert!(transport_bracket_check(&m, &c, &[], &opts()).unwrap() < 1e-8);
        let pf = parallel_frame(&m, &c, &standard_frame(3), &opts()).unwrap();
        // the residual measures the defect of the continuous extension, which
        // shrinks like tol^0.8; the default tolerance leaves it near 4e-7
        let tight = parallel_frame(&m, &c, &standard_frame(3), &OdeOptions::with_tol(FRAME_TOL)).unwrap();
        assert!(tight.nabla_residual(&m, 40).unwrap() < 1e-9);
        assert!(pf.nabla_residual(&m, 40).unwrap() > 1e-8);
        let c0 = pf.structure_in_frame(&m, 0.0).unwrap();
        for t in [0.25, 0.6, 1.0] {
            let ct = pf.structure_in_frame(&m, t).unwrap();
            let d = c0.iter().flatten().flatten().zip(ct.iter().flatten().flatten()).map(|(a, b)| (a - b).abs());
            assert!(d.fold(0.0, f64::max) < 1e-8);
        }
    }

    #[test]
    fn non_derivation_fails_both_ways() {
        let m = LieModelSpec::builtin("so3-nonderivation").build().unwrap();
        assert!(lie_connection_residual(&m, &[0.0, 0.0], 0).unwrap() >= 1.0);
        let c = Curve::affine(&[-0.5, 0.0], &[1.0, 0.0]).unwrap();
        assert!(transport_bracket_check(&m, &c, &[], &opts()).unwrap() > 1e-3);
    }

    #[test]
    fn reverse_frame_returns() {
        let m = LieModelSpec::builtin("so3-ad").build().unwrap();
        let c = Curve::polyline(&[vec![0.0, 0.0], vec![0.5, 0.5], vec![-0.3, 0.9]]).unwrap();
        let f0 = vec![vec![1.0, 0.2, 0.0], vec![0.0, 1.0, -0.5], vec![0.3, 0.0, 1.0]];
        let fwd = parallel_frame(&m, &c, &f0, &opts()).unwrap().frame_at(1.0);
        let back = parallel_frame(&m, &c.reversed(), &fwd, &opts()).unwrap().frame_at(1.0);
        for (a, b) in back.iter().flatten().zip(f0.iter().flatten()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn dependent_initial_frame_is_rejected() {
        let m = LieModelSpec::builtin("so3-ad").build().unwrap();
        let c = Curve::affine(&[0.0, 0.0], &[0.1, 0.1]).unwrap();
        let f0 = vec![vec![1.0, 0.0, 0.0], vec![2.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert!(parallel_frame(&m, &c, &f0, &opts()).is_err());
    }

    #[test]
    fn constant_curve_preserves_brackets() {
        let m = LieModelSpec::builtin("so3-nonderivation").build().unwrap();
        let c = Curve::constant(&[0.2, 0.2]).unwrap();
        assert_eq!(transport_bracket_check(&m, &c, &[], &opts()).unwrap(), 0.0);
    }

    fn rotation(k: usize) -> VerticalField {
        // e_k × u
        VerticalField::custom(
            &format!("rot{k}"),
            0,
            std::sync::Arc::new(move |_x: &[DiffScalar], u: &[DiffScalar]| {
                let e = |i: usize| if i == k { 1.0 } else { 0.0 };
                Ok((0..3)
                    .map(|i| {
                        let (j, l) = ((i + 1) % 3, (i + 2) % 3);
                        &(&u[l] * e(j)) - &(&u[j] * e(l))
                    })
                    .collect())
            }),
        )
    }

    #[test]
    fn rotation_fields_recover_so3() {
        let space = FinslerSpace::from_spec(&crate::metric::MetricSpec::Builtin {
            name: "euclidean".into(),
            dimension: Some(3),
            params: BTreeMap::new(),
        })
        .unwrap();
        let fields: Vec<VerticalField> = (0..3).map(rotation).collect();
        let x = [0.1, 0.2, 0.3];
        let hf = frame_from_holonomy(&space, &x, &fields, &SampleSpec::standard(3), 1e-8, 6).unwrap();
        assert_eq!(hf.basis, vec![0, 1, 2]);
        assert!(hf.residual < 1e-10);
        for c in 0..3 {
            for a in 0..3 {
                for b in 0..3 {
                    // vector-field brackets reverse the sign of the cross product algebra
                    let expected = -f64::from(levi_civita(a, b, c));
                    assert!((hf.structure[c][a][b] - expected).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn sphere_holonomy_is_abelian() {
        let space = FinslerSpace::builtin("sphere2").unwrap();
        let fields = crate::holonomy::ck_generators(2, 3, 6).unwrap();
        let hf = frame_from_holonomy(&space, &[1.0, 2.0], &fields, &SampleSpec::standard(2), 1e-8, 6).unwrap();
        assert_eq!(hf.basis.len(), 1);
        assert!(hf.structure[0][0][0].abs() < 1e-8 && hf.residual < 1e-8);
        let flat = FinslerSpace::builtin("euclidean").unwrap();
        let hf = frame_from_holonomy(&flat, &[0.0, 0.0], &fields, &SampleSpec::standard(2), 1e-8, 6).unwrap();
        assert!(hf.basis.is_empty() && hf.structure.is_empty());
    }
}
