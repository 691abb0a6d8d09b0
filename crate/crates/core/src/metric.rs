//! Finsler functions: the builtin catalog and user expressions.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};
use crate::expr::{Env, Expr};

/// Coordinate box; bounds may be infinite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DomainBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<DomainBox> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension {
                expected: lo.len(),
                found: hi.len(),
            });
        }
        if lo.iter().zip(&hi).any(|(a, b)| !(a < b)) {
            return Err(Error::config("domain", "box must have lo < hi in every coordinate"));
        }
        Ok(DomainBox { lo, hi })
    }

    pub fn uniform(m: usize, lo: f64, hi: f64) -> DomainBox {
        DomainBox {
            lo: vec![lo; m],
            hi: vec![hi; m],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Open-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.lo.len()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (a, b))| *a < *v && *v < *b)
    }

    /// Maps a point of the unit cube into the box.
    pub fn lerp(&self, s: &[f64]) -> Vec<f64> {
        s.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(t, (a, b))| a + t * (b - a))
            .collect()
    }
}

/// How a Finsler function is specified in a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MetricSpec {
    Builtin {
        name: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dimension: Option<usize>,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        params: BTreeMap<String, f64>,
    },
    Expression {
        text: String,
        dimension: usize,
        /// One `[lo, hi]` pair per coordinate.
        domain: Vec<[f64; 2]>,
        /// Optional expression in `x` that must be positive on the chart.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base_constraint: Option<String>,
        /// Box used for random sampling; defaults to a shrunken chart box.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sample_box: Option<Vec<[f64; 2]>>,
    },
}

impl MetricSpec {
    pub fn builtin(name: &str) -> MetricSpec {
        MetricSpec::Builtin {
            name: name.into(),
            dimension: None,
            params: BTreeMap::new(),
        }
    }

    pub fn resolve(&self) -> Result<Metric> {
        match self {
            MetricSpec::Builtin {
                name,
                dimension,
                params,
            } => builtin(name, *dimension, params),
            MetricSpec::Expression {
                text,
                dimension,
                domain,
                base_constraint,
                sample_box,
            } => {
                let m = *dimension;
                if m < 2 {
                    return Err(Error::config("metric.dimension", "dimension must be at least 2"));
                }
                if domain.len() != m {
                    return Err(Error::config(
                        "metric.domain",
                        format!("expected {m} intervals, found {}", domain.len()),
                    ));
                }
                let expr = Expr::parse(text)?;
                expr.check_closed(m)
                    .map_err(|e| Error::config("metric.text", e.to_string()))?;
                let chart = to_box(domain, "metric.domain")?;
                let sample = match sample_box {
                    Some(b) => to_box(b, "metric.sample_box")?,
                    None => shrink(&chart),
                };
                let constraint = base_constraint
                    .as_deref()
                    .map(Expr::parse)
                    .transpose()?;
                Ok(Metric {
                    name: "expression".into(),
                    dimension: m,
                    expr,
                    chart,
                    sample_box: sample,
                    base_constraint: constraint,
                })
            }
        }
    }
}

fn to_box(intervals: &[[f64; 2]], path: &str) -> Result<DomainBox> {
    DomainBox::new(
        intervals.iter().map(|i| i[0]).collect(),
        intervals.iter().map(|i| i[1]).collect(),
    )
    .map_err(|e| Error::config(path, e.to_string()))
}

fn shrink(b: &DomainBox) -> DomainBox {
    let (lo, hi) = b
        .lo
        .iter()
        .zip(&b.hi)
        .map(|(&a, &c)| {
            if a.is_finite() && c.is_finite() {
                let w = 0.1 * (c - a);
                (a + w, c - w)
            } else {
                (a.max(-1.0), c.min(1.0))
            }
        })
        .unzip();
    DomainBox { lo, hi }
}

/// Names accepted by [`MetricSpec::Builtin`].
pub const CATALOG: [&str; 5] = [
    "euclidean",
    "minkowski-quartic",
    "sphere2",
    "poincare-disk",
    "randers",
];

/// Default coefficient of the Randers one-form `c·x2·du1`.
pub const RANDERS_DEFAULT_C: f64 = 0.1;

fn builtin(name: &str, dimension: Option<usize>, params: &BTreeMap<String, f64>) -> Result<Metric> {
    let fixed_two = |n: &str| -> Result<usize> {
        match dimension {
            None | Some(2) => Ok(2),
            Some(d) => Err(Error::config(
                "metric.dimension",
                format!("{n} is two-dimensional, got {d}"),
            )),
        }
    };
    let allowed: &[&str] = if name == "randers" { &["c"] } else { &[] };
    if let Some(key) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::config(
            format!("metric.params.{key}"),
            format!("unknown parameter for {name}"),
        ));
    }
    let (text, m, chart, sample, constraint) = match name {
        "euclidean" | "minkowski-quartic" => {
            let m = dimension.unwrap_or(2);
            if m < 2 {
                return Err(Error::config("metric.dimension", "dimension must be at least 2"));
            }
            let text = if name == "euclidean" {
                let terms: Vec<String> = (1..=m).map(|i| format!("u{i}^2")).collect();
                format!("sqrt({})", terms.join(" + "))
            } else {
                let terms: Vec<String> = (1..=m).map(|i| format!("u{i}^4")).collect();
                format!("({})^(1/4)", terms.join(" + "))
            };
            (
                text,
                m,
                DomainBox::uniform(m, f64::NEG_INFINITY, f64::INFINITY),
                DomainBox::uniform(m, -1.0, 1.0),
                None,
            )
        }
        "sphere2" => (
            "sqrt(u1^2 + sin(x1)^2*u2^2)".to_string(),
            fixed_two(name)?,
            DomainBox::new(vec![0.0, 0.0], vec![PI, 2.0 * PI])?,
            DomainBox::new(vec![0.4, 0.6], vec![PI - 0.4, 2.0 * PI - 0.6])?,
            None,
        ),
        "poincare-disk" => (
            "2*sqrt(u1^2 + u2^2)/(1 - x1^2 - x2^2)".to_string(),
            fixed_two(name)?,
            DomainBox::uniform(2, -1.0, 1.0),
            DomainBox::uniform(2, -0.6, 0.6),
            Some("1 - x1^2 - x2^2"),
        ),
        "randers" => {
            let c = params.get("c").copied().unwrap_or(RANDERS_DEFAULT_C);
            if !(c.abs() < 1.0) || c == 0.0 {
                return Err(Error::config(
                    "metric.params.c",
                    "randers coefficient must satisfy 0 < |c| < 1",
                ));
            }
            (
                format!("sqrt(u1^2 + u2^2) + {}*x2*u1", Expr::Const(c)),
                fixed_two(name)?,
                DomainBox::uniform(2, -1.0, 1.0),
                DomainBox::uniform(2, -0.8, 0.8),
                None,
            )
        }
        other => {
            return Err(Error::config(
                "metric.name",
                format!("unknown builtin `{other}`; expected one of {CATALOG:?}"),
            ))
        }
    };
    Ok(Metric {
        name: name.into(),
        dimension: m,
        expr: Expr::parse(&text)?,
        chart,
        sample_box: sample,
        base_constraint: constraint.map(Expr::parse).transpose()?,
    })
}

/// A resolved Finsler function with its chart data.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub name: String,
    pub dimension: usize,
    pub expr: Expr,
    pub chart: DomainBox,
    pub sample_box: DomainBox,
    pub base_constraint: Option<Expr>,
}

impl Metric {
    pub fn eval<S: Scalar>(&self, x: &[S], u: &[S]) -> Result<S> {
        self.expr.eval(&Env::xu(x, u))
    }

    /// Whether `x` lies in the chart (box and optional positivity constraint).
    pub fn in_chart(&self, x: &[f64]) -> bool {
        if !self.chart.contains(x) {
            return false;
        }
        match &self.base_constraint {
            Some(c) => c.eval(&Env::xu(x, &[])).is_ok_and(|v: f64| v > 0.0),
            None => true,
        }
    }
}

/// One homogeneity probe at `(x, u)` with a positive scale `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct HomogeneitySample {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub lambda: f64,
}

/// Largest `|F(x, λu) − λ F(x, u)|` over the samples.
pub fn check_homogeneity(metric: &Metric, samples: &[HomogeneitySample]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for s in samples {
        if !(s.lambda > 0.0) {
            return Err(Error::config("lambda", "homogeneity scale must be positive"));
        }
        let scaled: Vec<f64> = s.u.iter().map(|v| v * s.lambda).collect();
        let lhs = metric.eval(&s.x, &scaled)?;
        let rhs = s.lambda * metric.eval(&s.x, &s.u)?;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}
