//! Deterministic fiber sampling and seeded base-point sampling.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::geometry::FinslerSpace;

/// Directions per fiber for a plane fiber.
pub const PLANE_DIRECTIONS: usize = 16;
/// Directions per fiber for a three-dimensional fiber.
pub const LATTICE_DIRECTIONS: usize = 64;

/// Standard unit directions in `R^m`.
///
/// For `m = 2`, 16 equally spaced angles offset by half a step so that no
/// direction lies on a coordinate axis (the quartic Minkowski norm has a
/// degenerate fundamental tensor there). For `m = 3`, a 64-point Fibonacci
/// lattice with the same half-step offset in longitude. Higher dimensions
/// use 16·m normalized Gaussian vectors from a fixed seed.
pub fn fiber_directions(m: usize) -> Vec<Vec<f64>> {
    match m {
        2 => (0..PLANE_DIRECTIONS)
            .map(|k| {
                let a = (k as f64 + 0.5) * 2.0 * PI / PLANE_DIRECTIONS as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let n = LATTICE_DIRECTIONS;
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|i| {
                    let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = (i as f64 + 0.5) * golden;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            (0..16 * m)
                .map(|_| {
                    let v: Vec<f64> = (0..m)
                        .map(|_| {
                            // Box–Muller
                            let a: f64 = rng.gen_range(f64::EPSILON..1.0);
                            let b: f64 = rng.gen();
                            (-2.0 * a.ln()).sqrt() * (2.0 * PI * b).cos()
                        })
                        .collect();
                    let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
                    v.into_iter().map(|c| c / n).collect()
                })
                .collect()
        }
    }
}

/// Which fiber points a span or fit is evaluated on.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec {
    pub directions: Vec<Vec<f64>>,
}

impl SampleSpec {
    pub fn standard(m: usize) -> SampleSpec {
        SampleSpec {
            directions: fiber_directions(m),
        }
    }

    /// Points of the indicatrix over `x` in the sampled directions.
    pub fn indicatrix_points(&self, space: &FinslerSpace, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        if self.directions.is_empty() {
            return Err(Error::EmptySample);
        }
        self.directions
            .iter()
            .map(|d| space.indicatrix_point(x, d))
            .collect()
    }
}

/// `n` quasi-uniform points of the sampling box (an additive recurrence with
/// the generalized golden ratio), skipping any that leave the chart.
pub fn grid_base_points(space: &FinslerSpace, n: usize) -> Vec<Vec<f64>> {
    let b = &space.metric().sample_box;
    let d = b.dim();
    // root of g^(d+1) = g + 1
    let mut g: f64 = 2.0;
    for _ in 0..64 {
        g = (1.0 + g).powf(1.0 / (d as f64 + 1.0));
    }
    let alpha: Vec<f64> = (1..=d).map(|j| g.powi(-(j as i32))).collect();
    let mut out = Vec::with_capacity(n);
    let mut k = 0usize;
    while out.len() < n && k < 64 * n {
        let s: Vec<f64> = alpha.iter().map(|a| (0.5 + a * k as f64).fract()).collect();
        let x = b.lerp(&s);
        if space.metric().in_chart(&x) {
            out.push(x);
        }
        k += 1;
    }
    out
}

/// Uniform point of the metric's sampling box that lies in the chart.
pub fn random_base_point(space: &FinslerSpace, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let b = &space.metric().sample_box;
    loop {
        let s: Vec<f64> = (0..b.dim()).map(|_| rng.gen::<f64>()).collect();
        let x = b.lerp(&s);
        if space.metric().in_chart(&x) {
            return x;
        }
    }
}

/// Uniform unit vector in `R^m`.
pub fn random_direction(m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.into_iter().map(|c| c / n).collect();
        }
    }
}

/// Random `(x, u)` with `u` on the indicatrix over `x`.
pub fn random_indicatrix_sample(space: &FinslerSpace, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Vec<f64>)> {
    let x = random_base_point(space, rng);
    let d = random_direction(space.dim(), rng);
    let u = space.indicatrix_point(&x, &d)?;
    Ok((x, u))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_deterministic_and_inside() {
        let s = FinslerSpace::builtin("poincare-disk").unwrap();
        let a = grid_base_points(&s, 10);
        assert_eq!(a, grid_base_points(&s, 10));
        assert_eq!(a.len(), 10);
        assert!(a.iter().all(|x| s.metric().in_chart(x)));
    }

    #[test]
    fn plane_directions_avoid_axes() {
        let d = fiber_directions(2);
        assert_eq!(d.len(), 16);
        assert!(d.iter().all(|v| v[0].abs() > 0.1 && v[1].abs() > 0.1));
        assert!(d.iter().all(|v| (v[0].hypot(v[1]) - 1.0).abs() < 1e-15));
    }

    #[test]
    fn lattice_is_unit_and_off_axis() {
        let d = fiber_directions(3);
        assert_eq!(d.len(), 64);
        for v in &d {
            let n: f64 = v.iter().map(|c| c * c).sum();
            assert!((n - 1.0).abs() < 1e-14);
            assert!(v.iter().all(|c| c.abs() > 1e-6));
        }
    }
}
