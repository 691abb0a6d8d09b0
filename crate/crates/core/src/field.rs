//! Vertical vector fields as evaluable construction trees.
//!
//! A field is built from curvature generators `R(∂_i, ∂_j)`, coordinate
//! fields, the covariant derivative `∇_i V = [H_i, V]`, fiberwise brackets,
//! linear combinations and multiplication by base functions. Evaluation is
//! generic over the AD carrier, so any field can be differentiated again;
//! that is all ∇ and the bracket need.
//!
//! Curvature uses the convention `R(∂_i, ∂_j) := −[H_i, H_j]`, whose
//! components are `H_i(Γ^k_j) − H_j(Γ^k_i)`.

use std::fmt;
use std::sync::Arc;

use crate::autodiff::{constants, values, DiffScalar as D};
use crate::error::{Error, Result};
use crate::expr::{Env, Expr};
use crate::geometry::{d_along, unit, zeros, FiberField, FinslerSpace};

/// Infinitesimal levels consumed by one curvature evaluation: two inside
/// the spray, one for `Γ`, one for the horizontal derivative.
const CURVATURE_LEVELS: usize = 4;

/// Orders are counted from the curvature, which has order 2.
const ORDER_OFFSET: usize = 2;

/// A user-supplied fiber field with a declared number of AD levels it
/// consumes internally.
#[derive(Clone)]
pub struct CustomField {
    pub name: String,
    pub levels: usize,
    pub field: Arc<dyn FiberField + Send>,
}

#[derive(Clone)]
enum Node {
    Zero,
    /// `∂/∂u^a`, extended with constant components.
    Coordinate(usize),
    Curvature(usize, usize),
    Nabla(usize, VerticalField),
    Bracket(VerticalField, VerticalField),
    Combination(Vec<(f64, VerticalField)>),
    /// `f(x)·V` for a base function `f`.
    ScaleBy(Arc<Expr>, VerticalField),
    Custom(CustomField),
}

#[derive(Clone)]
pub struct VerticalField {
    node: Arc<Node>,
    levels: usize,
}

impl fmt::Debug for VerticalField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "VerticalField({self})")
    }
}

impl fmt::Display for VerticalField {
    /// Human-readable description with one-based indices.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &*self.node {
            Node::Zero => write!(f, "0"),
            Node::Coordinate(a) => write!(f, "du{}", a + 1),
            Node::Curvature(i, j) => write!(f, "R({},{})", i + 1, j + 1),
            Node::Nabla(i, v) => write!(f, "N{}{}", i + 1, v),
            Node::Bracket(v, w) => write!(f, "[{v},{w}]"),
            Node::Combination(terms) => {
                write!(f, "(")?;
                for (k, (c, v)) in terms.iter().enumerate() {
                    if k > 0 {
                        write!(f, " + ")?;
                    }
                    write!(f, "{c}*{v}")?;
                }
                write!(f, ")")
            }
            Node::ScaleBy(e, v) => write!(f, "({e})*{v}"),
            Node::Custom(c) => write!(f, "{}", c.name),
        }
    }
}

fn check_cap(levels: usize, cap: usize) -> Result<()> {
    let order = levels.saturating_sub(ORDER_OFFSET);
    if order > cap {
        return Err(Error::DepthCap {
            requested: order,
            cap,
        });
    }
    Ok(())
}

impl VerticalField {
    fn new(node: Node, levels: usize) -> VerticalField {
        VerticalField {
            node: Arc::new(node),
            levels,
        }
    }

    pub fn zero() -> VerticalField {
        VerticalField::new(Node::Zero, 0)
    }

    pub fn coordinate(a: usize) -> VerticalField {
        VerticalField::new(Node::Coordinate(a), 0)
    }

    /// `R(∂_i, ∂_j)`; the zero field when `i == j`.
    pub fn curvature(i: usize, j: usize) -> VerticalField {
        if i == j {
            return VerticalField::zero();
        }
        VerticalField::new(Node::Curvature(i, j), CURVATURE_LEVELS)
    }

    /// `∇_{∂_i} V = [H_i, V]`.
    pub fn nabla(i: usize, v: &VerticalField, cap: usize) -> Result<VerticalField> {
        let levels = (v.levels + 1).max(CURVATURE_LEVELS);
        check_cap(levels, cap)?;
        Ok(VerticalField::new(Node::Nabla(i, v.clone()), levels))
    }

    /// `∇_w V = Σ_i w^i ∇_i V` for a constant base vector `w`.
    pub fn nabla_along(w: &[f64], v: &VerticalField, cap: usize) -> Result<VerticalField> {
        let terms = w
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, c)| Ok((*c, VerticalField::nabla(i, v, cap)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(VerticalField::combination(terms))
    }

    /// Fiberwise bracket `[V, W]^a = V^b ∂W^a/∂u^b − W^b ∂V^a/∂u^b`.
    pub fn bracket(v: &VerticalField, w: &VerticalField, cap: usize) -> Result<VerticalField> {
        let levels = v.levels.max(w.levels) + 1;
        check_cap(levels, cap)?;
        Ok(VerticalField::new(Node::Bracket(v.clone(), w.clone()), levels))
    }

    pub fn combination(terms: Vec<(f64, VerticalField)>) -> VerticalField {
        let levels = terms.iter().map(|(_, v)| v.levels).max().unwrap_or(0);
        if terms.is_empty() {
            return VerticalField::zero();
        }
        VerticalField::new(Node::Combination(terms), levels)
    }

    pub fn scaled(&self, c: f64) -> VerticalField {
        VerticalField::combination(vec![(c, self.clone())])
    }

    /// `f(x)·V` where `f` is an expression in the base coordinates only.
    pub fn scale_by(f: &str, v: &VerticalField) -> Result<VerticalField> {
        let e = Expr::parse(f)?;
        let usage = e.usage();
        if usage.max_u > 0 || usage.uses_t {
            return Err(Error::config("field.scale", "scale factor may only depend on x"));
        }
        Ok(VerticalField::new(Node::ScaleBy(Arc::new(e), v.clone()), v.levels))
    }

    pub fn custom(name: &str, levels: usize, field: Arc<dyn FiberField + Send>) -> VerticalField {
        VerticalField::new(
            Node::Custom(CustomField {
                name: name.into(),
                levels,
                field,
            }),
            levels,
        )
    }

    /// AD levels one evaluation consumes.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Derivative order, counting the curvature as order 2; this is the
    /// quantity bounded by the depth cap.
    pub fn order(&self) -> usize {
        self.levels.saturating_sub(ORDER_OFFSET)
    }

    pub fn is_structurally_zero(&self) -> bool {
        matches!(&*self.node, Node::Zero)
    }

    pub fn eval(&self, space: &FinslerSpace, x: &[D], u: &[D]) -> Result<Vec<D>> {
        let m = space.dim();
        match &*self.node {
            Node::Zero => Ok(zeros(m)),
            Node::Coordinate(a) => Ok(unit(m, *a)),
            Node::Curvature(i, j) => curvature_bracket_route(space, *i, *j, x, u),
            Node::Nabla(i, v) => {
                let e = unit(m, *i);
                let h = space.horizontal_ad(x, u, &e)?;
                let (v0, dv) = d_along(|x, u| v.eval(space, x, u), x, u, &e, &h)?;
                let (_, dg) = d_along(|x, u| space.connection_ad(x, u, &e), x, u, &zeros(m), &v0)?;
                Ok(dv.iter().zip(&dg).map(|(a, b)| a + b).collect())
            }
            Node::Bracket(v, w) => {
                let v0 = v.eval(space, x, u)?;
                let (w0, dw) = d_along(|x, u| w.eval(space, x, u), x, u, &zeros(m), &v0)?;
                let (_, dv) = d_along(|x, u| v.eval(space, x, u), x, u, &zeros(m), &w0)?;
                Ok(dw.iter().zip(&dv).map(|(a, b)| a - b).collect())
            }
            Node::Combination(terms) => {
                let mut acc = zeros(m);
                for (c, v) in terms {
                    for (a, b) in acc.iter_mut().zip(v.eval(space, x, u)?) {
                        *a = &*a + &(b * *c);
                    }
                }
                Ok(acc)
            }
            Node::ScaleBy(f, v) => {
                let s: D = f.eval(&Env::xu(x, &[]))?;
                Ok(v.eval(space, x, u)?.iter().map(|c| &s * c).collect())
            }
            Node::Custom(c) => c.field.eval(x, u),
        }
    }

    pub fn eval_f64(&self, space: &FinslerSpace, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        Ok(values(&self.eval(space, &constants(x), &constants(u))?))
    }

    /// `|V(F)|` at `(x, u)`: zero when the field is tangent to the indicatrix.
    pub fn tangency_residual(&self, space: &FinslerSpace, x: &[f64], u: &[f64]) -> Result<f64> {
        let (xs, us) = (constants(x), constants(u));
        let v = self.eval(space, &xs, &us)?;
        let (_, df) = d_along(|x, u| Ok(vec![space.f_ad(x, u)?]), &xs, &us, &zeros(space.dim()), &v)?;
        Ok(df[0].value().abs())
    }
}

/// Bracket of two ambient vector fields on the `2m`-dimensional `(x, u)` space.
fn ambient_bracket<X, Y>(x: &[D], u: &[D], fx: X, fy: Y) -> Result<Vec<D>>
where
    X: Fn(&[D], &[D]) -> Result<Vec<D>>,
    Y: Fn(&[D], &[D]) -> Result<Vec<D>>,
{
    let m = x.len();
    let xv = fx(x, u)?;
    let yv = fy(x, u)?;
    let (_, dy) = d_along(&fy, x, u, &xv[..m], &xv[m..])?;
    let (_, dx) = d_along(&fx, x, u, &yv[..m], &yv[m..])?;
    Ok(dy.iter().zip(&dx).map(|(a, b)| a - b).collect())
}

fn horizontal_field(space: &FinslerSpace, i: usize) -> impl Fn(&[D], &[D]) -> Result<Vec<D>> + '_ {
    move |x: &[D], u: &[D]| {
        let e = unit(space.dim(), i);
        let h = space.horizontal_ad(x, u, &e)?;
        Ok(e.into_iter().chain(h).collect())
    }
}

/// `−[H_i, H_j]` via the generic ambient bracket; returns the vertical part.
fn curvature_bracket_route(space: &FinslerSpace, i: usize, j: usize, x: &[D], u: &[D]) -> Result<Vec<D>> {
    let m = space.dim();
    let b = ambient_bracket(x, u, horizontal_field(space, i), horizontal_field(space, j))?;
    Ok(b[m..].iter().map(|c| -c).collect())
}

/// Independent component route for the curvature:
/// `∂_iΓ^k_j − ∂_jΓ^k_i − Γ^a_i Γ^k_{ja} + Γ^a_j Γ^k_{ia}`.
pub fn curvature_components(space: &FinslerSpace, i: usize, j: usize, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let m = space.dim();
    let (xs, us) = (constants(x), constants(u));
    let (ei, ej) = (unit(m, i), unit(m, j));
    let z = zeros(m);
    let (gj, dgj) = d_along(|x, u| space.connection_ad(x, u, &ej), &xs, &us, &ei, &z)?;
    let (gi, dgi) = d_along(|x, u| space.connection_ad(x, u, &ei), &xs, &us, &ej, &z)?;
    let bj = space.berwald_ad(&xs, &us, &ej, &gi)?;
    let bi = space.berwald_ad(&xs, &us, &ei, &gj)?;
    Ok((0..m)
        .map(|k| (dgj[k].value() - dgi[k].value()) - bj[k].value() + bi[k].value())
        .collect())
}

/// A vertical field bound to its space, usable wherever a [`FiberField`] is.
pub struct BoundField<'a> {
    pub space: &'a FinslerSpace,
    pub field: &'a VerticalField,
}

impl FiberField for BoundField<'_> {
    fn eval(&self, x: &[D], u: &[D]) -> Result<Vec<D>> {
        self.field.eval(self.space, x, u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::DEFAULT_DEPTH_CAP as CAP;

    fn sphere() -> FinslerSpace {
        FinslerSpace::builtin("sphere2").unwrap()
    }

    #[test]
    fn curvature_routes_agree() {
        for name in ["sphere2", "poincare-disk", "randers"] {
            let sp = FinslerSpace::builtin(name).unwrap();
            let (x, u) = ([0.4, 0.3], [0.7, -0.2]);
            let a = VerticalField::curvature(0, 1).eval_f64(&sp, &x, &u).unwrap();
            let b = curvature_components(&sp, 0, 1, &x, &u).unwrap();
            for k in 0..2 {
                assert!((a[k] - b[k]).abs() < 1e-9, "{name}: {a:?} vs {b:?}");
            }
            let c = VerticalField::curvature(1, 0).eval_f64(&sp, &x, &u).unwrap();
            assert!((a[0] + c[0]).abs() < 1e-12 && (a[1] + c[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_curvature_rotates_the_fiber() {
        // Riemannian oracle: R(∂_θ,∂_φ)u has components R^k_{lθφ}u^l with
        // R^θ_{φθφ} = sin²θ and R^φ_{θθφ} = −1, up to the sign convention
        let sp = sphere();
        let x = [std::f64::consts::FRAC_PI_2, 1.0];
        let r = VerticalField::curvature(0, 1).eval_f64(&sp, &x, &[1.0, 0.0]).unwrap();
        assert!(r[0].abs() < 1e-12);
        assert!((r[1].abs() - 1.0).abs() < 1e-9, "{r:?}");
        let t = VerticalField::curvature(0, 1).tangency_residual(&sp, &[1.1, 2.0], &[0.3, 0.8]).unwrap();
        assert!(t < 1e-8);
    }

    #[test]
    fn nabla_of_coordinate_field_on_sphere() {
        let sp = sphere();
        let f = VerticalField::nabla(0, &VerticalField::coordinate(1), CAP).unwrap();
        for (x, u) in [([0.8, 1.0], [0.2, 0.5]), ([2.0, 4.0], [-1.0, 0.3])] {
            let v = f.eval_f64(&sp, &x, &u).unwrap();
            assert!(v[0].abs() < 1e-9);
            assert!((v[1] - 1.0 / x[0].tan()).abs() < 1e-9);
        }
        let e = FinslerSpace::builtin("euclidean").unwrap();
        let f = VerticalField::nabla(0, &VerticalField::coordinate(0), CAP).unwrap();
        assert_eq!(f.eval_f64(&e, &[0.0, 0.0], &[1.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn nabla_obeys_leibniz_over_base_functions() {
        let sp = FinslerSpace::builtin("randers").unwrap();
        let v = VerticalField::curvature(0, 1);
        let fv = VerticalField::scale_by("x1^2 + 2*x2", &v).unwrap();
        let (x, u) = ([0.3, -0.2], [0.5, 0.6]);
        let lhs = VerticalField::nabla(0, &fv, CAP).unwrap().eval_f64(&sp, &x, &u).unwrap();
        let nv = VerticalField::nabla(0, &v, CAP).unwrap().eval_f64(&sp, &x, &u).unwrap();
        let v0 = v.eval_f64(&sp, &x, &u).unwrap();
        let f = x[0] * x[0] + 2.0 * x[1];
        for k in 0..2 {
            let rhs = 2.0 * x[0] * v0[k] + f * nv[k];
            assert!((lhs[k] - rhs).abs() < 1e-9);
        }
    }

    #[test]
    fn brackets_of_flat_fields() {
        let e = FinslerSpace::builtin("euclidean").unwrap();
        let rot = VerticalField::custom(
            "rot",
            0,
            Arc::new(|_: &[D], u: &[D]| Ok(vec![-u[1].clone(), u[0].clone()])),
        );
        let dil = VerticalField::custom("dil", 0, Arc::new(|_: &[D], u: &[D]| Ok(u.to_vec())));
        let b = VerticalField::bracket(&rot, &dil, CAP).unwrap();
        let v = b.eval_f64(&e, &[0.0, 0.0], &[0.3, 0.9]).unwrap();
        assert!(v.iter().all(|c| c.abs() < 1e-15));
        let s = VerticalField::bracket(&rot, &rot, CAP).unwrap();
        assert!(s.eval_f64(&e, &[0.0, 0.0], &[0.3, 0.9]).unwrap().iter().all(|c| *c == 0.0));
    }

    #[test]
    fn depth_cap_is_enforced() {
        let mut v = VerticalField::curvature(0, 1);
        for _ in 0..4 {
            v = VerticalField::nabla(0, &v, CAP).unwrap();
        }
        assert_eq!(v.order(), 6);
        assert!(matches!(VerticalField::nabla(1, &v, CAP), Err(Error::DepthCap { requested: 7, cap: 6 })));
        assert!(VerticalField::bracket(&v, &v, CAP).is_err());
    }
}
