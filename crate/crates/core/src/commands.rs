//! The four CLI commands as library functions returning a serialized report
//! plus CSV side tables.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::curve::Curve;
use crate::error::{Error, Result};
use crate::field::{BoundField, VerticalField};
use crate::geometry::FinslerSpace;
use crate::holonomy::{
    ck_filtration, curvature_algebra_dimension, curvature_generators, curvature_identity_residual,
    default_curve_family, taylor_transport_check, translated_curvature_span, Filtration, TranslatedSpan,
};
use crate::lie_bundle::{
    lie_connection_residual, parallel_frame, standard_frame, transport_bracket_check, LieAlgebraBundleModel,
    LieModelSpec, FRAME_TOL, SCALAR_DEFAULT_K,
};
use crate::metric::{check_homogeneity, HomogeneitySample, MetricSpec, CATALOG};
use crate::ode::{OdeOptions, StepStats};
use crate::rank::SpanReport;
use crate::report::{write_file, Report, Table, Verdict};
use crate::sampling::{fiber_directions, grid_base_points, random_indicatrix_sample, SampleSpec};
use crate::transport::{fiber_rotation_angle, isometry_check, loop_holonomy_displacement, rho, TransportOptions};

pub const EXIT_SUCCESS: i32 = 0;
pub const EXIT_VALIDATION_FAILURE: i32 = 1;
pub const EXIT_CONFIG_ERROR: i32 = 2;
pub const EXIT_NUMERICAL_FAILURE: i32 = 3;

/// Tolerance used by the F-drift ablation self-test.
pub const COARSE_TOL: f64 = 1e-4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. }
        | Error::Syntax { .. }
        | Error::UnknownIdentifier { .. }
        | Error::Arity { .. }
        | Error::UnboundVariable(_)
        | Error::Dimension { .. } => EXIT_CONFIG_ERROR,
        _ => EXIT_NUMERICAL_FAILURE,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Classify,
    Transport,
    Holonomy,
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Classify => "classify",
            Command::Transport => "transport",
            Command::Holonomy => "holonomy",
            Command::Validate => "validate",
        }
    }
}

/// Rendered report with its side tables. `exit_code` is what the CLI returns.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub json: String,
    pub tables: Vec<Table>,
    pub exit_code: i32,
}

impl Outcome {
    /// Writes the report and tables when the config names an output path.
    pub fn write(&self, config: &ExperimentConfig) -> Result<()> {
        if let Some(path) = &config.out {
            write_file(path, &self.json)?;
            for t in &self.tables {
                write_file(&t.path_next_to(path), &t.render())?;
            }
        }
        Ok(())
    }
}

pub fn run(command: Command, config: &ExperimentConfig) -> Result<Outcome> {
    config.validate()?;
    let started = Instant::now();
    let (results, tables, exit_code) = match command {
        Command::Classify => {
            let r = classify(config)?;
            (to_value(&r), Vec::new(), EXIT_SUCCESS)
        }
        Command::Transport => {
            let (r, t) = transport(config)?;
            let code = if r.failures > 0 { EXIT_NUMERICAL_FAILURE } else { EXIT_SUCCESS };
            (to_value(&r), t, code)
        }
        Command::Holonomy => {
            let (r, t) = holonomy(config)?;
            let code = if r.points.iter().any(|p| p.ambrose_singer.verdict == "fail") {
                EXIT_VALIDATION_FAILURE
            } else {
                EXIT_SUCCESS
            };
            (to_value(&r), t, code)
        }
        Command::Validate => {
            let (r, t) = validate(config)?;
            let code = if r.failed > 0 { EXIT_VALIDATION_FAILURE } else { EXIT_SUCCESS };
            (to_value(&r), t, code)
        }
    };
    let report = Report::new(command.name(), config.clone(), results, started.elapsed().as_secs_f64());
    Ok(Outcome {
        json: report.to_json(),
        tables,
        exit_code,
    })
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("results serialize to JSON")
}

fn build_space(spec: &MetricSpec) -> Result<FinslerSpace> {
    FinslerSpace::from_spec(spec).map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config("metric", other.to_string()),
    })
}

fn transport_options(config: &ExperimentConfig, tol: f64) -> TransportOptions {
    TransportOptions {
        ode: OdeOptions::with_tol(tol),
        dense_samples: config.dense_samples,
    }
}

fn unit(m: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; m];
    e[i] = 1.0;
    e
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |w, (p, q)| w.max((p - q).abs()))
}

// ---------------------------------------------------------------- classify

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub metric: String,
    pub base_points: Vec<Vec<f64>>,
    pub fiber_directions: usize,
    /// `max |(∇_X g)(V, W)|` over coordinate `X, V, W`.
    pub landsberg_residual: f64,
    pub berwald_residual: f64,
    pub cartan_residual: f64,
    pub landsberg: Verdict,
    pub berwald: Verdict,
    pub riemannian_like: Verdict,
    /// Every class whose defining property holds, most specific first.
    pub labels: Vec<&'static str>,
    pub verdict: &'static str,
}

/// Residual scan over `grid_points` base points times the standard fiber
/// directions.
pub fn classify_space(space: &FinslerSpace, grid_points: usize) -> Result<Classification> {
    let m = space.dim();
    let xs = grid_base_points(space, grid_points);
    let dirs = fiber_directions(m);
    let per_point: Vec<Result<(f64, f64, f64)>> = xs
        .par_iter()
        .map(|x| {
            let (mut l, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64);
            for d in &dirs {
                let u = space.indicatrix_point(x, d)?;
                for i in 0..m {
                    for a in 0..m {
                        for bb in a..m {
                            let r = space.landsberg_residual(x, &u, &unit(m, i), &unit(m, a), &unit(m, bb))?;
                            l = l.max(r.abs());
                        }
                    }
                }
                b = b.max(space.berwald_residual(x, &u)?);
                c = c.max(space.cartan_residual(x, &u)?);
            }
            Ok((l, b, c))
        })
        .collect();
    let (mut l, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64);
    for r in per_point {
        let (pl, pb, pc) = r?;
        l = l.max(pl);
        b = b.max(pb);
        c = c.max(pc);
    }
    let (lv, bv, cv) = (Verdict::from_residual(l), Verdict::from_residual(b), Verdict::from_residual(c));
    let mut labels = Vec::new();
    if cv == Verdict::Holds {
        labels.push("riemannian-like");
    }
    if bv == Verdict::Holds {
        labels.push("berwald");
    }
    if lv == Verdict::Holds {
        labels.push("landsberg");
    }
    if lv == Verdict::Fails {
        labels.push("general");
    }
    let verdict = labels.first().copied().unwrap_or("inconclusive");
    Ok(Classification {
        metric: space.name().to_string(),
        base_points: xs,
        fiber_directions: dirs.len(),
        landsberg_residual: l,
        berwald_residual: b,
        cartan_residual: c,
        landsberg: lv,
        berwald: bv,
        riemannian_like: cv,
        labels,
        verdict,
    })
}

pub fn classify(config: &ExperimentConfig) -> Result<Classification> {
    let space = build_space(config.require_metric()?)?;
    classify_space(&space, config.sampling.grid_points)
}

// --------------------------------------------------------------- transport

#[derive(Debug, Clone, Serialize)]
pub struct CurveOutcome {
    pub index: usize,
    /// `config` or `random`.
    pub origin: &'static str,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    /// Vertices of seeded random polylines.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vertices: Option<Vec<Vec<f64>>>,
    pub u0: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_drift: Option<f64>,
    /// `max |g(ρ_*e_a, ρ_*e_b) − g(e_a, e_b)|`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isometry_residual: Option<f64>,
    /// `|ρ_{c̄}(ρ_c(u0)) − u0|_∞`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roundtrip_error: Option<f64>,
    /// Rotation of `u0` for closed curves in dimension two.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holonomy_angle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stats: Option<StepStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoopRow {
    pub eps: f64,
    pub displacement: Vec<f64>,
    /// Distance from `−R(∂_i, ∂_j)(u0)`.
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoopOutcome {
    pub point: Vec<f64>,
    pub plane: [usize; 2],
    pub u0: Vec<f64>,
    /// The limit `−R(∂_i, ∂_j)(u0)` the displacements approach.
    pub limit: Vec<f64>,
    pub rows: Vec<LoopRow>,
    /// `error(ε_k) / error(ε_{k+1})`.
    pub ratios: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TransportSection {
    pub metric: String,
    pub curves: Vec<CurveOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub square_loop: Option<LoopOutcome>,
    pub failures: usize,
}

/// Fills the diagnostics of `out` for one transported curve.
fn transport_into(out: &mut CurveOutcome, space: &FinslerSpace, c: &Curve, u0: &[f64], opts: &TransportOptions) -> Result<()> {
    let m = space.dim();
    let r = rho(space, c, u0, opts)?;
    let mut pairs = Vec::new();
    for a in 0..m {
        for b in a..m {
            pairs.push((unit(m, a), unit(m, b)));
        }
    }
    out.isometry_residual = Some(isometry_check(space, c, u0, &pairs, opts)?);
    let back = rho(space, &c.reversed(), &r.point, opts)?;
    out.roundtrip_error = Some(dist(&back.point, u0));
    if m == 2 && dist(&c.start(), &c.end()) < 1e-12 {
        out.holonomy_angle = Some(fiber_rotation_angle(space, &c.start(), u0, &r.point)?);
    }
    out.f_drift = Some(r.f_drift);
    out.stats = Some(r.stats);
    out.endpoint = Some(r.point);
    Ok(())
}

pub fn transport(config: &ExperimentConfig) -> Result<(TransportSection, Vec<Table>)> {
    let space = build_space(config.require_metric()?)?;
    let m = space.dim();
    let opts = transport_options(config, config.tol_ode);
    let mut curves: Vec<(&'static str, Curve)> = Vec::new();
    for (k, spec) in config.curves.iter().enumerate() {
        let c = spec.build().map_err(|e| Error::config(format!("curves[{k}]"), e.to_string()))?;
        if c.dim() != m {
            return Err(Error::config(format!("curves[{k}]"), format!("expected dimension {m}")));
        }
        curves.push(("config", c));
    }
    if config.sampling.random_curves > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.require_seed("sampling.random_curves")?);
        for _ in 0..config.sampling.random_curves {
            curves.push(("random", Curve::random_polyline(&space, &mut rng, 2, 0.5)));
        }
    }
    if let Some(u) = &config.u0 {
        if u.len() != m {
            return Err(Error::config("u0", format!("expected {m} components")));
        }
    }
    let outcomes: Vec<CurveOutcome> = curves
        .par_iter()
        .enumerate()
        .map(|(index, (origin, c))| {
            let start = c.start();
            let u0 = match &config.u0 {
                Some(u) => Ok(u.clone()),
                None => space.indicatrix_point(&start, &fiber_directions(m)[0]),
            };
            let mut out = CurveOutcome {
                index,
                origin,
                start,
                end: c.end(),
                vertices: (*origin == "random").then(|| c.vertices()),
                u0: u0.clone().unwrap_or_default(),
                endpoint: None,
                f_drift: None,
                isometry_residual: None,
                roundtrip_error: None,
                holonomy_angle: None,
                stats: None,
                error: None,
            };
            if let Err(e) = u0.and_then(|u| transport_into(&mut out, &space, c, &u, &opts)) {
                out.error = Some(e.to_string());
            }
            out
        })
        .collect();
    let failures = outcomes.iter().filter(|o| o.error.is_some()).count();
    let mut tables = Vec::new();
    let square_loop = match &config.square_loop {
        None => None,
        Some(l) => {
            let [i, j] = l.plane;
            if l.point.len() != m || l.u0.len() != m || i >= m || j >= m {
                return Err(Error::config("square_loop", format!("point, u0 and plane must fit dimension {m}")));
            }
            if !space.metric().in_chart(&l.point) {
                return Err(Error::config("square_loop.point", "point is not in the chart"));
            }
            let r = VerticalField::curvature(i, j).eval_f64(&space, &l.point, &l.u0)?;
            let limit: Vec<f64> = r.iter().map(|v| -v).collect();
            let rows: Vec<LoopRow> = l
                .eps
                .iter()
                .map(|&eps| {
                    let d = loop_holonomy_displacement(&space, &l.point, i, j, eps, &l.u0, &opts)?;
                    let error = d.iter().zip(&limit).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    Ok(LoopRow {
                        eps,
                        displacement: d,
                        error,
                    })
                })
                .collect::<Result<_>>()?;
            let ratios = rows.windows(2).map(|w| w[0].error / w[1].error).collect();
            let mut t = Table::new("loop", &["eps", "error"]);
            for r in &rows {
                t.push(vec![r.eps.to_string(), r.error.to_string()]);
            }
            tables.push(t);
            Some(LoopOutcome {
                point: l.point.clone(),
                plane: l.plane,
                u0: l.u0.clone(),
                limit,
                rows,
                ratios,
            })
        }
    };
    Ok((
        TransportSection {
            metric: space.name().to_string(),
            curves: outcomes,
            square_loop,
            failures,
        },
        tables,
    ))
}

// ---------------------------------------------------------------- holonomy

#[derive(Debug, Clone, Serialize)]
pub struct AmbroseSinger {
    pub ck_rank: usize,
    pub translated_rank: usize,
    pub algebra_rank: usize,
    pub stabilized: bool,
    /// `pass`, `fail`, or `warning` when the filtration did not stabilize.
    pub verdict: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct HolonomyAtPoint {
    pub base_point: Vec<f64>,
    /// Landsberg screen over the fiber at the base point.
    pub landsberg_residual: f64,
    pub filtration: Filtration,
    pub curvature_algebra: SpanReport,
    pub algebra_bracket_depth: usize,
    pub translated: TranslatedSpan,
    /// Vertices of the seeded curve family ending at the base point.
    pub curve_vertices: Vec<Vec<Vec<f64>>>,
    pub ambrose_singer: AmbroseSinger,
}

#[derive(Debug, Clone, Serialize)]
pub struct HolonomySection {
    pub metric: String,
    pub curve_seed: u64,
    pub points: Vec<HolonomyAtPoint>,
}

fn landsberg_screen(space: &FinslerSpace, x: &[f64]) -> Result<f64> {
    let m = space.dim();
    let mut worst: f64 = 0.0;
    for u in SampleSpec::standard(m).indicatrix_points(space, x)? {
        for i in 0..m {
            for a in 0..m {
                for b in a..m {
                    let r = space.landsberg_residual(x, &u, &unit(m, i), &unit(m, a), &unit(m, b))?;
                    worst = worst.max(r.abs());
                }
            }
        }
    }
    Ok(worst)
}

pub fn holonomy_at(space: &FinslerSpace, x: &[f64], config: &ExperimentConfig, seed: u64) -> Result<HolonomyAtPoint> {
    let m = space.dim();
    let sample = SampleSpec::standard(m);
    let tol = config.tol_rank;
    let filtration = ck_filtration(space, x, &sample, tol, config.depth_cap)?;
    let (algebra, depth) =
        curvature_algebra_dimension(space, x, config.bracket_depth_cap, &sample, tol, config.depth_cap)?;
    let curves = default_curve_family(space, x, seed);
    let translated = translated_curvature_span(space, x, &curves, &sample, tol, &transport_options(config, config.tol_ode))?;
    let screen = landsberg_screen(space, x)?;
    let stabilized = filtration.stabilized_at.is_some() && algebra.stabilized;
    let ck_rank = filtration.rank();
    let verdict = if !stabilized {
        "warning"
    } else if ck_rank == translated.report.rank {
        "pass"
    } else {
        "fail"
    };
    let mut notes = Vec::new();
    if Verdict::from_residual(screen) != Verdict::Holds {
        notes.push(format!(
            "Landsberg residual {screen:e} at the base point: the metric is not Landsberg here, so the translated span is not claimed to equal the holonomy algebra"
        ));
    }
    if translated.skipped > 0 {
        notes.push(format!("{} curve(s) skipped after transport failures", translated.skipped));
    }
    Ok(HolonomyAtPoint {
        base_point: x.to_vec(),
        landsberg_residual: screen,
        ambrose_singer: AmbroseSinger {
            ck_rank,
            translated_rank: translated.report.rank,
            algebra_rank: algebra.rank,
            stabilized,
            verdict,
            note: (!notes.is_empty()).then(|| notes.join("; ")),
        },
        filtration,
        curvature_algebra: algebra,
        algebra_bracket_depth: depth,
        translated,
        curve_vertices: curves.iter().map(Curve::vertices).collect(),
    })
}

pub fn holonomy(config: &ExperimentConfig) -> Result<(HolonomySection, Vec<Table>)> {
    let space = build_space(config.require_metric()?)?;
    let seed = config.require_seed("holonomy (curve family)")?;
    let m = space.dim();
    let points = if config.base_points.is_empty() {
        vec![space.metric().sample_box.lerp(&vec![0.5; m])]
    } else {
        config.base_points.clone()
    };
    for (k, x) in points.iter().enumerate() {
        if x.len() != m || !space.metric().in_chart(x) {
            return Err(Error::config(format!("base_points[{k}]"), "point is not in the chart"));
        }
    }
    let results: Vec<HolonomyAtPoint> = points
        .iter()
        .map(|x| holonomy_at(&space, x, config, seed))
        .collect::<Result<_>>()?;
    let mut t = Table::new("ranks", &["point", "k", "rank", "gap_ratio"]);
    for (p, r) in results.iter().enumerate() {
        for s in &r.filtration.steps {
            let gap = s.report.gap_ratio.map_or_else(|| "inf".to_string(), |g| g.to_string());
            t.push(vec![p.to_string(), s.k.to_string(), s.report.rank.to_string(), gap]);
        }
    }
    Ok((
        HolonomySection {
            metric: space.name().to_string(),
            curve_seed: seed,
            points: results,
        },
        vec![t],
    ))
}

// ---------------------------------------------------------------- validate

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Expect {
    Below,
    Above,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub group: &'static str,
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    pub value: f64,
    pub expect: Expect,
    pub threshold: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Check {
    fn new(group: &'static str, name: &str, metric: Option<&str>, value: Result<f64>, expect: Expect, threshold: f64) -> Check {
        let (value, detail) = match value {
            Ok(v) => (v, None),
            Err(e) => (f64::NAN, Some(e.to_string())),
        };
        let passed = match expect {
            Expect::Below => value < threshold,
            Expect::Above => value > threshold,
        };
        Check {
            group,
            name: name.to_string(),
            metric: metric.map(str::to_string),
            value,
            expect,
            threshold,
            passed,
            detail,
        }
    }

    fn with_detail(mut self, d: String) -> Check {
        self.detail = Some(match self.detail.take() {
            Some(e) => format!("{d}; {e}"),
            None => d,
        });
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateSection {
    pub metrics: Vec<String>,
    pub checks: Vec<Check>,
    pub passed: usize,
    pub failed: usize,
}

struct PointSample {
    x: Vec<f64>,
    u: Vec<f64>,
    i: usize,
    j: usize,
    field: usize,
}

fn max_of(values: Vec<Result<f64>>) -> Result<f64> {
    values.into_iter().try_fold(0.0f64, |a, v| Ok(a.max(v?)))
}

/// Fitted exponent `p` in `residual ∝ t^p` between consecutive entries.
pub fn observed_orders(t: &[f64], residuals: &[f64]) -> Vec<f64> {
    (1..t.len())
        .map(|k| (residuals[k - 1] / residuals[k]).ln() / (t[k - 1] / t[k]).ln())
        .collect()
}

fn validate_metric(
    spec: &MetricSpec,
    label: &str,
    config: &ExperimentConfig,
    seed: u64,
    checks: &mut Vec<Check>,
    taylor_table: &mut Table,
) {
    let metric = Some(label);
    let space = match FinslerSpace::from_spec(spec) {
        Ok(s) => s,
        Err(e) => {
            checks.push(Check::new("metric", "construction", metric, Err(e), Expect::Below, 0.0));
            return;
        }
    };
    let m = space.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = config.sampling.point_samples;

    let samples: Vec<HomogeneitySample> = (0..n)
        .map(|_| {
            let x = crate::sampling::random_base_point(&space, &mut rng);
            let u: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            HomogeneitySample {
                x,
                u,
                lambda: rng.gen_range(0.1..5.0),
            }
        })
        .collect();
    checks.push(Check::new(
        "metric",
        "homogeneity",
        metric,
        check_homogeneity(space.metric(), &samples),
        Expect::Below,
        1e-10,
    ));

    // F stays constant along horizontal lifts
    let curve_count = if config.sampling.random_curves > 0 { config.sampling.random_curves } else { 20 };
    let curves: Vec<(Curve, Vec<f64>)> = (0..curve_count)
        .map(|_| {
            let c = Curve::random_polyline(&space, &mut rng, 2, 0.5);
            let d = crate::sampling::random_direction(m, &mut rng);
            (c, d)
        })
        .collect();
    let drift_at = |tol: f64| -> Result<f64> {
        let opts = transport_options(config, tol);
        max_of(
            curves
                .par_iter()
                .map(|(c, d)| {
                    let u0 = space.indicatrix_point(&c.start(), d)?;
                    Ok(rho(&space, c, &u0, &opts)?.f_drift)
                })
                .collect(),
        )
    };
    checks.push(Check::new("transport", "f-drift", metric, drift_at(config.tol_ode), Expect::Below, 1e-8));
    let connection_size = max_of(
        curves
            .iter()
            .take(4)
            .map(|(c, d)| {
                let x = c.start();
                let u = space.indicatrix_point(&x, d)?;
                Ok(space.nonlinear_connection(&x, &u)?.iter().map(|r| max_abs(r)).fold(0.0, f64::max))
            })
            .collect(),
    );
    if matches!(connection_size, Ok(s) if s > 1e-8) && config.tol_ode < COARSE_TOL {
        checks.push(
            Check::new("transport", "f-drift-ablation", metric, drift_at(COARSE_TOL), Expect::Above, 1e-6)
                .with_detail(format!("integrator tolerance loosened to {COARSE_TOL:e}; the drift diagnostic must notice")),
        );
    }

    // curvature identity at random (x, u, V)
    let fields = [
        VerticalField::curvature(0, 1),
        VerticalField::coordinate(0),
        VerticalField::scale_by("1 + x1^2", &VerticalField::curvature(0, 1)).expect("fixed expression parses"),
    ];
    // one base direction pair per sample; a 1-dimensional base has no planes
    let points: Vec<Result<PointSample>> = (0..n)
        .map(|k| {
            let (x, u) = random_indicatrix_sample(&space, &mut rng)?;
            let i = rng.gen_range(0..m);
            let j = if m > 1 { (i + 1 + rng.gen_range(0..m - 1)) % m } else { i };
            Ok(PointSample { x, u, i, j, field: k % fields.len() })
        })
        .collect();
    let identity = max_of(
        points
            .par_iter()
            .map(|p| {
                let p = p.as_ref().map_err(Clone::clone)?;
                if p.i == p.j {
                    return Ok(0.0);
                }
                curvature_identity_residual(&space, &p.x, &p.u, p.i, p.j, &fields[p.field], config.depth_cap)
            })
            .collect(),
    );
    checks.push(Check::new("curvature", "curvature-identity", metric, identity, Expect::Below, 1e-7));

    let class = classify_space(&space, config.sampling.grid_points);
    let is_landsberg = matches!(&class, Ok(c) if c.landsberg == Verdict::Holds);
    if is_landsberg {
        let gens = curvature_generators(m);
        let membership = max_of(
            points
                .par_iter()
                .map(|p| {
                    let p = p.as_ref().map_err(Clone::clone)?;
                    let mut w: f64 = 0.0;
                    for g in &gens {
                        let b = BoundField { space: &space, field: g };
                        w = w.max(space.isometry_residual(&p.x, &p.u, &vec![0.0; m], &b)?);
                    }
                    Ok(w)
                })
                .collect(),
        );
        checks.push(Check::new("curvature", "curvature-is-infinitesimal-isometry", metric, membership, Expect::Below, 1e-7));
        let opts = transport_options(config, config.tol_ode);
        let iso = max_of(
            curves
                .par_iter()
                .take(10)
                .map(|(c, d)| {
                    let u0 = space.indicatrix_point(&c.start(), d)?;
                    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..4)
                        .map(|k| {
                            let a = fiber_directions(m)[(3 * k) % fiber_directions(m).len()].clone();
                            let b = fiber_directions(m)[(5 * k + 1) % fiber_directions(m).len()].clone();
                            (a, b)
                        })
                        .collect();
                    isometry_check(&space, c, &u0, &pairs, &opts)
                })
                .collect(),
        );
        checks.push(Check::new("transport", "transport-isometry", metric, iso, Expect::Below, 1e-7));
    } else {
        let detail = match &class {
            Ok(c) => format!("verdict {}; Landsberg-only checks skipped", c.verdict),
            Err(e) => e.to_string(),
        };
        checks.push(
            Check::new("metric", "landsberg-screen", metric, class.map(|c| c.landsberg_residual), Expect::Above, 0.0)
                .with_detail(detail),
        );
    }

    // covariant Taylor expansion along an affine curve
    let tay = &config.taylor;
    if tay.direction.len() == m && tay.t.len() >= 2 {
        let x = space.metric().sample_box.lerp(&vec![0.3; m]);
        let opts = transport_options(config, config.tol_ode);
        let v = VerticalField::curvature(0, 1);
        for &order in &tay.orders {
            let residuals: Result<Vec<f64>> = tay
                .t
                .iter()
                .map(|&t| {
                    taylor_transport_check(&space, &x, &tay.direction, &v, order, t, &SampleSpec::standard(m), &opts, config.depth_cap)
                })
                .collect();
            let name = format!("taylor-order-{order}");
            let check = match residuals {
                Err(e) => Check::new("curvature", &name, metric, Err(e), Expect::Below, 0.5),
                Ok(r) => {
                    for (t, res) in tay.t.iter().zip(&r) {
                        taylor_table.push(vec![label.to_string(), order.to_string(), t.to_string(), res.to_string()]);
                    }
                    if max_abs(&r) < 1e-11 {
                        Check::new("curvature", &name, metric, Ok(max_abs(&r)), Expect::Below, 1e-11)
                            .with_detail("expansion is exact here".into())
                    } else {
                        let orders = observed_orders(&tay.t, &r);
                        let target = order as f64 + 1.0;
                        let worst = orders.iter().map(|p| (p - target).abs()).fold(0.0, f64::max);
                        Check::new("curvature", &name, metric, Ok(worst), Expect::Below, 0.5)
                            .with_detail(format!("observed orders {orders:?}, expected {target}"))
                    }
                }
            };
            checks.push(check);
        }
    }
}

/// Straight polylines through random interior points of the model domain.
fn random_model_curve(model: &LieAlgebraBundleModel, rng: &mut ChaCha8Rng, legs: usize) -> Curve {
    let b = &model.domain;
    let vertices: Vec<Vec<f64>> = (0..=legs)
        .map(|_| {
            let s: Vec<f64> = (0..b.dim()).map(|_| rng.gen_range(0.1..0.9)).collect();
            b.lerp(&s)
        })
        .collect();
    Curve::polyline(&vertices).expect("vertices have a common dimension")
}

fn model_residuals(model: &LieAlgebraBundleModel, rng: &mut ChaCha8Rng, opts: &OdeOptions) -> (Result<f64>, Result<f64>) {
    let m = model.base_dim();
    let points: Vec<Vec<f64>> = (0..5)
        .map(|_| {
            let s: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..0.9)).collect();
            model.domain.lerp(&s)
        })
        .collect();
    let conn = max_of(
        points
            .iter()
            .flat_map(|x| (0..m).map(move |i| lie_connection_residual(model, x, i)))
            .collect(),
    );
    let curves: Vec<Curve> = (0..4).map(|_| random_model_curve(model, rng, 2)).collect();
    let bracket = max_of(curves.iter().map(|c| transport_bracket_check(model, c, &[], opts)).collect());
    (conn, bracket)
}

fn validate_lie(config: &ExperimentConfig, seed: u64, checks: &mut Vec<Check>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = OdeOptions::with_tol(config.tol_ode);
    let build = |name: &str| LieModelSpec::builtin(name).build();

    let scalar = build("scalar").and_then(|m| {
        let c = Curve::affine(&[0.0], &[1.0])?;
        let pf = parallel_frame(&m, &c, &standard_frame(1), &opts)?;
        Ok((0..=20)
            .map(|k| {
                let t = k as f64 / 20.0;
                (pf.lambda_at(t)[0][0] - (-SCALAR_DEFAULT_K * t).exp()).abs()
            })
            .fold(0.0, f64::max))
    });
    checks.push(Check::new("lie-bundle", "scalar-frame-exp", Some("scalar"), scalar, Expect::Below, 1e-10));

    match build("so3-ad") {
        Err(e) => checks.push(Check::new("lie-bundle", "construction", Some("so3-ad"), Err(e), Expect::Below, 0.0)),
        Ok(model) => {
            let tight = OdeOptions::with_tol(FRAME_TOL);
            let curves: Vec<Curve> = (0..3).map(|_| random_model_curve(&model, &mut rng, 2)).collect();
            let frame = max_of(
                curves
                    .iter()
                    .map(|c| parallel_frame(&model, c, &standard_frame(3), &tight)?.nabla_residual(&model, 40))
                    .collect(),
            );
            checks.push(
                Check::new("lie-bundle", "parallel-frame-residual", Some("so3-ad"), frame, Expect::Below, 1e-9)
                    .with_detail(format!("frame ODE integrated at {FRAME_TOL:e}")),
            );
            let (conn, bracket) = model_residuals(&model, &mut rng, &opts);
            checks.push(Check::new("lie-bundle", "lie-connection-residual", Some("so3-ad"), conn, Expect::Below, 1e-12));
            checks.push(Check::new("lie-bundle", "transport-bracket", Some("so3-ad"), bracket, Expect::Below, 1e-8));
        }
    }

    match build("so3-nonderivation") {
        Err(e) => checks.push(Check::new("lie-bundle", "construction", Some("so3-nonderivation"), Err(e), Expect::Below, 0.0)),
        Ok(model) => {
            let (conn, bracket) = model_residuals(&model, &mut rng, &opts);
            checks.push(
                Check::new("lie-bundle", "lie-connection-residual", Some("so3-nonderivation"), conn, Expect::Above, 1e-3)
                    .with_detail("non-derivation fixture: the residual must be large".into()),
            );
            checks.push(
                Check::new("lie-bundle", "transport-bracket", Some("so3-nonderivation"), bracket, Expect::Above, 1e-3)
                    .with_detail("non-derivation fixture: transport must break brackets".into()),
            );
        }
    }

    for (k, spec) in config.lie_models.iter().enumerate() {
        let label = match spec {
            LieModelSpec::Builtin { name, .. } | LieModelSpec::Expression { name, .. } => name.clone(),
        };
        let model = match spec.build() {
            Ok(m) => m,
            Err(e) => {
                checks.push(Check::new("lie-bundle", &format!("lie_models[{k}] construction"), Some(&label), Err(e), Expect::Below, 0.0));
                continue;
            }
        };
        let (conn, bracket) = model_residuals(&model, &mut rng, &opts);
        let value = match (&conn, &bracket) {
            (Ok(a), Ok(b)) => Ok(if Verdict::from_residual(*a) == Verdict::from_residual(*b) { 0.0 } else { 1.0 }),
            (Err(e), _) | (_, Err(e)) => Err(e.clone()),
        };
        let detail = format!("connection residual {conn:?}, bracket residual {bracket:?}");
        checks.push(
            Check::new("lie-bundle", &format!("lie_models[{k}] equivalence"), Some(&label), value, Expect::Below, 0.5)
                .with_detail(detail),
        );
    }
}

pub fn validate(config: &ExperimentConfig) -> Result<(ValidateSection, Vec<Table>)> {
    let seed = config.require_seed("validate")?;
    let specs: Vec<(String, MetricSpec)> = match &config.metric {
        Some(spec) => {
            let label = match spec {
                MetricSpec::Builtin { name, .. } => name.clone(),
                MetricSpec::Expression { .. } => "expression".to_string(),
            };
            vec![(label, spec.clone())]
        }
        None => CATALOG.iter().map(|n| (n.to_string(), MetricSpec::builtin(n))).collect(),
    };
    let mut checks = Vec::new();
    let mut taylor = Table::new("taylor", &["metric", "order", "t", "residual"]);
    for (k, (label, spec)) in specs.iter().enumerate() {
        let metric_seed = seed.wrapping_add((k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        validate_metric(spec, label, config, metric_seed, &mut checks, &mut taylor);
    }
    validate_lie(config, seed ^ 0x11e, &mut checks);
    let failed = checks.iter().filter(|c| !c.passed).count();
    Ok((
        ValidateSection {
            metrics: specs.into_iter().map(|(l, _)| l).collect(),
            passed: checks.len() - failed,
            failed,
            checks,
        },
        vec![taylor],
    ))
}
