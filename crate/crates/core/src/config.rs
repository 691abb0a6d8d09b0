//! Experiment configuration, loaded from TOML. Command-line flags override
//! the top-level keys of the same name.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::DEFAULT_DEPTH_CAP;
use crate::curve::CurveSpec;
use crate::error::{Error, Result};
use crate::lie_bundle::LieModelSpec;
use crate::metric::MetricSpec;
use crate::rank::DEFAULT_RANK_TOL;

fn default_tol_rank() -> f64 {
    DEFAULT_RANK_TOL
}
fn default_tol_ode() -> f64 {
    1e-10
}
fn default_depth_cap() -> usize {
    DEFAULT_DEPTH_CAP
}
fn default_bracket_depth_cap() -> usize {
    3
}
fn default_dense_samples() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Required by every command that draws random samples.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Report path; CSV files are written next to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default = "default_tol_rank")]
    pub tol_rank: f64,
    #[serde(default = "default_tol_ode")]
    pub tol_ode: f64,
    #[serde(default = "default_depth_cap")]
    pub depth_cap: usize,
    #[serde(default = "default_bracket_depth_cap")]
    pub bracket_depth_cap: usize,
    #[serde(default = "default_dense_samples")]
    pub dense_samples: usize,
    /// Optional for `validate`, which then runs the whole catalog.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricSpec>,
    /// Base points for `holonomy`; the centre of the sampling box when empty.
    #[serde(default)]
    pub base_points: Vec<Vec<f64>>,
    /// Initial fiber point for `transport`; the first indicatrix sample when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
    #[serde(default)]
    pub curves: Vec<CurveSpec>,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub square_loop: Option<SquareLoop>,
    #[serde(default)]
    pub taylor: Taylor,
    /// Lie bundle fixtures for `validate`; the built-in set when empty.
    #[serde(default)]
    pub lie_models: Vec<LieModelSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Sampling {
    /// Base points of the classification grid (each with the standard fiber
    /// directions).
    pub grid_points: usize,
    /// Seeded random polylines added to the configured curves.
    pub random_curves: usize,
    /// Random `(x, u)` samples for pointwise identities.
    pub point_samples: usize,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            grid_points: 10,
            random_curves: 0,
            point_samples: 50,
        }
    }
}

/// Small coordinate-square loops whose displacement is compared with the
/// curvature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SquareLoop {
    pub point: Vec<f64>,
    pub plane: [usize; 2],
    pub u0: Vec<f64>,
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Taylor {
    pub direction: Vec<f64>,
    pub orders: Vec<usize>,
    pub t: Vec<f64>,
}

impl Default for Taylor {
    fn default() -> Self {
        Taylor {
            direction: vec![0.6, 0.8],
            orders: vec![0, 1, 2],
            t: vec![0.2, 0.1, 0.05],
        }
    }
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tol_rank: Option<f64>,
    pub tol_ode: Option<f64>,
    pub depth_cap: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: None,
            out: None,
            tol_rank: default_tol_rank(),
            tol_ode: default_tol_ode(),
            depth_cap: default_depth_cap(),
            bracket_depth_cap: default_bracket_depth_cap(),
            dense_samples: default_dense_samples(),
            metric: None,
            base_points: Vec::new(),
            u0: None,
            curves: Vec::new(),
            sampling: Sampling::default(),
            square_loop: None,
            taylor: Taylor::default(),
            lie_models: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| {
            let span = e.span().map(|s| format!(" (bytes {}..{})", s.start, s.end)).unwrap_or_default();
            Error::config("<config>", format!("{}{span}", e.message()))
        })
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
        if let Some(t) = o.tol_rank {
            self.tol_rank = t;
        }
        if let Some(t) = o.tol_ode {
            self.tol_ode = t;
        }
        if let Some(d) = o.depth_cap {
            self.depth_cap = d;
        }
    }

    /// Checks value ranges; chart membership is checked once the metric is
    /// resolved.
    pub fn validate(&self) -> Result<()> {
        let positive = |path: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(path, "must be a positive finite number"))
            }
        };
        positive("tol_rank", self.tol_rank)?;
        positive("tol_ode", self.tol_ode)?;
        if self.tol_rank >= 1.0 {
            return Err(Error::config("tol_rank", "must be below 1"));
        }
        if !(2..=crate::autodiff::MAX_LEVELS - 2).contains(&self.depth_cap) {
            return Err(Error::config(
                "depth_cap",
                format!("must lie in 2..={}", crate::autodiff::MAX_LEVELS - 2),
            ));
        }
        if self.bracket_depth_cap == 0 {
            return Err(Error::config("bracket_depth_cap", "must be at least 1"));
        }
        if self.dense_samples == 0 {
            return Err(Error::config("dense_samples", "must be at least 1"));
        }
        if self.sampling.grid_points == 0 {
            return Err(Error::config("sampling.grid_points", "must be at least 1"));
        }
        for (k, &t) in self.taylor.t.iter().enumerate() {
            positive(&format!("taylor.t[{k}]"), t)?;
        }
        if let Some(l) = &self.square_loop {
            for (k, &e) in l.eps.iter().enumerate() {
                positive(&format!("square_loop.eps[{k}]"), e)?;
            }
            if l.plane[0] == l.plane[1] {
                return Err(Error::config("square_loop.plane", "needs two distinct axes"));
            }
        }
        Ok(())
    }

    pub fn require_seed(&self, what: &str) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::config("seed", format!("{what} draws random samples and needs a seed")))
    }

    pub fn require_metric(&self) -> Result<&MetricSpec> {
        self.metric
            .as_ref()
            .ok_or_else(|| Error::config("metric", "this command needs a metric"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 11
tol_ode = 1e-9

[metric]
kind = "builtin"
name = "sphere2"

[[curves]]
kind = "polyline"
vertices = [[1.0, 2.0], [1.2, 2.3]]

[square_loop]
point = [1.0, 2.0]
plane = [0, 1]
u0 = [0.0, 1.0]
eps = [0.1, 0.05]
"#;

    #[test]
    fn parses_and_round_trips() {
        let c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.seed, Some(11));
        assert_eq!(c.tol_ode, 1e-9);
        assert_eq!(c.tol_rank, DEFAULT_RANK_TOL);
        assert_eq!(c.curves.len(), 1);
        c.validate().unwrap();
        let again = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml("sed = 3").unwrap_err();
        assert!(matches!(err, Error::Config { .. }), "{err:?}");
    }

    #[test]
    fn overrides_win() {
        let mut c = ExperimentConfig::from_toml(SAMPLE).unwrap();
        c.apply(&Overrides {
            seed: Some(5),
            depth_cap: Some(4),
            ..Default::default()
        });
        assert_eq!((c.seed, c.depth_cap), (Some(5), 4));
        c.depth_cap = 1;
        assert!(c.validate().is_err());
    }
}
