//! Piecewise-smooth base curves parameterized on `[0, 1]`.
//!
//! A curve with `n` segments gives each segment an equal share `1/n` of the
//! global parameter. Velocities are reported with respect to the global
//! parameter.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{jvp, DiffScalar};
use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use crate::geometry::FinslerSpace;

/// Allowed gap between consecutive segment endpoints.
pub const JOINT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
enum Shape {
    /// Straight segment traversed with the smoothstep profile `3s² − 2s³`,
    /// so velocity vanishes at both ends and polylines are C¹.
    Smoothed { a: Vec<f64>, b: Vec<f64> },
    /// Straight segment with constant velocity `b − a`.
    Affine { a: Vec<f64>, b: Vec<f64> },
    /// Analytic segment `s ↦ (e_1(s), …, e_m(s))`.
    Analytic { components: Vec<Expr> },
}

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    shape: Shape,
    reversed: bool,
}

impl Segment {
    /// Position and local velocity at local parameter `s ∈ [0, 1]`.
    fn eval(&self, s: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (s, sign) = if self.reversed { (1.0 - s, -1.0) } else { (s, 1.0) };
        let (p, v): (Vec<f64>, Vec<f64>) = match &self.shape {
            Shape::Smoothed { a, b } => {
                let w = s * s * (3.0 - 2.0 * s);
                let dw = 6.0 * s * (1.0 - s);
                (
                    a.iter().zip(b).map(|(p, q)| p + w * (q - p)).collect(),
                    a.iter().zip(b).map(|(p, q)| dw * (q - p)).collect(),
                )
            }
            Shape::Affine { a, b } => (
                a.iter().zip(b).map(|(p, q)| p + s * (q - p)).collect(),
                a.iter().zip(b).map(|(p, q)| q - p).collect(),
            ),
            Shape::Analytic { components } => {
                let (val, der) = jvp(
                    |t| {
                        components
                            .iter()
                            .map(|e| e.eval(&Env::time(&t[0])))
                            .collect::<Result<Vec<DiffScalar>>>()
                    },
                    &[DiffScalar::constant(s)],
                    &[DiffScalar::constant(1.0)],
                )?;
                (
                    val.iter().map(DiffScalar::value).collect(),
                    der.iter().map(DiffScalar::value).collect(),
                )
            }
        };
        Ok((p, v.into_iter().map(|c| sign * c).collect()))
    }

    fn reversed(&self) -> Segment {
        Segment {
            shape: self.shape.clone(),
            reversed: !self.reversed,
        }
    }

    fn is_affine(&self) -> bool {
        matches!(self.shape, Shape::Affine { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    segments: Vec<Segment>,
    dim: usize,
}

impl Curve {
    fn from_segments(segments: Vec<Segment>) -> Result<Curve> {
        let first = segments
            .first()
            .ok_or_else(|| Error::config("curve", "a curve needs at least one segment"))?;
        let dim = first.eval(0.0)?.0.len();
        let curve = Curve { segments, dim };
        for k in 0..curve.segments.len() {
            let (p, v) = curve.segments[k].eval(0.0)?;
            let q = curve.segments[k].eval(1.0)?.0;
            if p.len() != dim || q.len() != dim || v.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    found: p.len(),
                });
            }
            if k > 0 {
                let prev = curve.segments[k - 1].eval(1.0)?.0;
                let gap = prev.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                if gap > JOINT_TOLERANCE {
                    return Err(Error::config(
                        format!("curve.segments[{k}]"),
                        format!("segment does not start where the previous one ends (gap {gap:.3e})"),
                    ));
                }
            }
        }
        Ok(curve)
    }

    /// Piecewise-linear path through `vertices` with smoothed segments.
    pub fn polyline(vertices: &[Vec<f64>]) -> Result<Curve> {
        if vertices.len() < 2 {
            return Err(Error::config("curve.vertices", "a polyline needs at least two vertices"));
        }
        Curve::from_segments(
            vertices
                .windows(2)
                .map(|w| Segment {
                    shape: Shape::Smoothed {
                        a: w[0].clone(),
                        b: w[1].clone(),
                    },
                    reversed: false,
                })
                .collect(),
        )
    }

    /// Constant-velocity segment `x + t·w`.
    pub fn affine(x: &[f64], w: &[f64]) -> Result<Curve> {
        Curve::from_segments(vec![Segment {
            shape: Shape::Affine {
                a: x.to_vec(),
                b: x.iter().zip(w).map(|(p, q)| p + q).collect(),
            },
            reversed: false,
        }])
    }

    /// Constant curve at `x`.
    pub fn constant(x: &[f64]) -> Result<Curve> {
        Curve::affine(x, &vec![0.0; x.len()])
    }

    /// Coordinate arc: `x^axis` runs from its value at `x` by `delta`.
    pub fn coordinate_arc(x: &[f64], axis: usize, delta: f64) -> Result<Curve> {
        if axis >= x.len() {
            return Err(Error::config("curve.axis", "axis index out of range"));
        }
        let mut w = vec![0.0; x.len()];
        w[axis] = delta;
        Curve::affine(x, &w)
    }

    /// Analytic curve given by one expression in `t` per coordinate.
    pub fn expression(components: &[&str]) -> Result<Curve> {
        let exprs = components
            .iter()
            .map(|c| {
                let e = Expr::parse(c)?;
                let usage = e.usage();
                if usage.max_x > 0 || usage.max_u > 0 {
                    return Err(Error::config(
                        "curve.components",
                        format!("`{c}` may only depend on t"),
                    ));
                }
                Ok(e)
            })
            .collect::<Result<Vec<_>>>()?;
        Curve::from_segments(vec![Segment {
            shape: Shape::Analytic { components: exprs },
            reversed: false,
        }])
    }

    /// Closed loop around the coordinate square with corner `x` and side `eps`
    /// in the `(i, j)` plane: `+e_i, +e_j, −e_i, −e_j`.
    pub fn square_loop(x: &[f64], i: usize, j: usize, eps: f64) -> Result<Curve> {
        let mut p1 = x.to_vec();
        p1[i] += eps;
        let mut p2 = p1.clone();
        p2[j] += eps;
        let mut p3 = x.to_vec();
        p3[j] += eps;
        Curve::polyline(&[x.to_vec(), p1, p2, p3, x.to_vec()])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Whether every segment has constant velocity (so `c̈ = 0`).
    pub fn is_affine(&self) -> bool {
        self.segments.iter().all(Segment::is_affine)
    }

    /// Global parameter interval of segment `k`.
    pub fn segment_interval(&self, k: usize) -> (f64, f64) {
        let n = self.segments.len() as f64;
        (k as f64 / n, (k + 1) as f64 / n)
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.segments.len();
        let k = ((t * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize;
        (k, t * n as f64 - k as f64)
    }

    /// Position and global-parameter velocity on segment `k` at global `t`.
    pub fn eval_on(&self, k: usize, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.segments.len() as f64;
        let (p, v) = self.segments[k].eval(t * n - k as f64)?;
        Ok((p, v.into_iter().map(|c| c * n).collect()))
    }

    pub fn eval(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let (k, _) = self.locate(t);
        self.eval_on(k, t)
    }

    pub fn point(&self, t: f64) -> Result<Vec<f64>> {
        Ok(self.eval(t)?.0)
    }

    pub fn start(&self) -> Vec<f64> {
        self.segments[0].eval(0.0).expect("validated at construction").0
    }

    pub fn end(&self) -> Vec<f64> {
        self.segments
            .last()
            .unwrap()
            .eval(1.0)
            .expect("validated at construction")
            .0
    }

    /// Segment endpoints in order, so a random polyline can be logged and
    /// rebuilt.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let mut v: Vec<Vec<f64>> = self
            .segments
            .iter()
            .map(|s| s.eval(0.0).expect("validated at construction").0)
            .collect();
        v.push(self.end());
        v
    }

    /// `c̄(t) = c(1 − t)`.
    pub fn reversed(&self) -> Curve {
        Curve {
            segments: self.segments.iter().rev().map(Segment::reversed).collect(),
            dim: self.dim,
        }
    }

    /// Traverses `self` first, then `next`. Transport satisfies
    /// `ρ_{self.then(next)} = ρ_next ∘ ρ_self`.
    pub fn then(&self, next: &Curve) -> Result<Curve> {
        let mut segments = self.segments.clone();
        segments.extend(next.segments.iter().cloned());
        Curve::from_segments(segments)
    }

    /// Fails unless the image (sampled densely) stays inside the chart.
    pub fn check_in_chart(&self, space: &FinslerSpace) -> Result<()> {
        if self.dim != space.dim() {
            return Err(Error::Dimension {
                expected: space.dim(),
                found: self.dim,
            });
        }
        let samples = 64 * self.segments.len();
        for k in 0..=samples {
            let t = k as f64 / samples as f64;
            let p = self.point(t)?;
            if !space.metric().in_chart(&p) {
                return Err(Error::geometry(
                    format!("curve leaves the chart domain at t = {t}"),
                    &p,
                    &[],
                ));
            }
        }
        Ok(())
    }

    /// Random polyline with `segments` legs of coordinate length `leg`,
    /// starting at a random point of the sampling box and staying inside it.
    pub fn random_polyline(space: &FinslerSpace, rng: &mut ChaCha8Rng, segments: usize, leg: f64) -> Curve {
        let m = space.dim();
        let sample_box = &space.metric().sample_box;
        loop {
            let start = crate::sampling::random_base_point(space, rng);
            let mut vertices = vec![start];
            for _ in 0..segments {
                let d = crate::sampling::random_direction(m, rng);
                let last = vertices.last().unwrap();
                vertices.push(last.iter().zip(&d).map(|(p, q)| p + leg * q).collect());
            }
            if vertices.iter().all(|v| sample_box.contains(v) && space.metric().in_chart(v)) {
                return Curve::polyline(&vertices).expect("vertices have a common dimension");
            }
        }
    }

    /// Random polyline through one intermediate point ending at `x`.
    pub fn random_path_to(space: &FinslerSpace, rng: &mut ChaCha8Rng, x: &[f64], legs: usize) -> Curve {
        let mut vertices: Vec<Vec<f64>> = (0..legs)
            .map(|_| crate::sampling::random_base_point(space, rng))
            .collect();
        vertices.push(x.to_vec());
        Curve::polyline(&vertices).expect("vertices have a common dimension")
    }
}

/// Serializable curve description used in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CurveSpec {
    Polyline { vertices: Vec<Vec<f64>> },
    CoordinateArc { start: Vec<f64>, axis: usize, delta: f64 },
    Expression { components: Vec<String> },
    Constant { point: Vec<f64> },
}

impl CurveSpec {
    pub fn build(&self) -> Result<Curve> {
        match self {
            CurveSpec::Polyline { vertices } => Curve::polyline(vertices),
            CurveSpec::CoordinateArc { start, axis, delta } => Curve::coordinate_arc(start, *axis, *delta),
            CurveSpec::Expression { components } => {
                let refs: Vec<&str> = components.iter().map(String::as_str).collect();
                Curve::expression(&refs)
            }
            CurveSpec::Constant { point } => Curve::constant(point),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyline_is_continuous_with_vanishing_joint_velocity() {
        let c = Curve::polyline(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![1.0, 2.0]]).unwrap();
        let (p, v) = c.eval(0.5).unwrap();
        assert_eq!(p, vec![1.0, 0.0]);
        assert!(v.iter().all(|x| x.abs() < 1e-15));
        let (_, v) = c.eval(0.25).unwrap();
        // smoothstep peak velocity 1.5 · 2 segments · length 1
        assert!((v[0] - 3.0).abs() < 1e-12);
        assert_eq!(c.end(), vec![1.0, 2.0]);
    }

    #[test]
    fn reversal_and_concatenation() {
        let c = Curve::expression(&["t^2", "sin(t)"]).unwrap();
        let r = c.reversed();
        let (p, v) = r.eval(0.3).unwrap();
        let (q, w) = c.eval(0.7).unwrap();
        assert_eq!(p, q);
        assert!((v[0] + w[0]).abs() < 1e-15 && (v[1] + w[1]).abs() < 1e-15);
        let back = c.then(&r).unwrap();
        assert_eq!(back.start(), back.end());
        let gap = Curve::affine(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(gap.then(&gap).is_err());
    }

    #[test]
    fn expression_velocity_uses_ad() {
        let c = Curve::expression(&["exp(t)", "3*t"]).unwrap();
        let (_, v) = c.eval(0.5).unwrap();
        assert!((v[0] - 0.5f64.exp()).abs() < 1e-15);
        assert_eq!(v[1], 3.0);
        assert!(Curve::expression(&["x1 + t"]).is_err());
    }
}
