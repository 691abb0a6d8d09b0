//! Nested forward-mode automatic differentiation.
//!
//! A [`DiffScalar`] stores one coefficient per subset of the active
//! infinitesimals ε_0, …, ε_{d-1}, each nilpotent (ε_k² = 0). Bit `k` of a
//! coefficient index marks the presence of ε_k, so a scalar of depth `d`
//! holds `2^d` reals. Splitting on the top bit gives the first-order tower
//! `a + b·ε_{d-1}` with `a`, `b` of depth `d-1`; every elementary function is
//! evaluated by recursing down that tower.
//!
//! Seeding a new direction always uses the level just above the deepest
//! input, so nested derivative requests never confuse their perturbations.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Default cap on the number of nested directional derivatives.
pub const DEFAULT_DEPTH_CAP: usize = 6;

/// Hard ceiling on simultaneously active infinitesimal levels.
pub const MAX_LEVELS: usize = 12;

#[derive(Clone, PartialEq)]
pub struct DiffScalar {
    parts: Vec<f64>,
}

impl fmt::Debug for DiffScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.parts.len() == 1 {
            write!(f, "DiffScalar({})", self.parts[0])
        } else {
            write!(f, "DiffScalar{:?}", self.parts)
        }
    }
}

impl DiffScalar {
    pub fn constant(value: f64) -> Self {
        DiffScalar { parts: vec![value] }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    /// `value + ε_level`.
    pub fn variable(value: f64, level: usize) -> Self {
        let mut parts = vec![0.0; 1 << (level + 1)];
        parts[0] = value;
        parts[1 << level] = 1.0;
        DiffScalar { parts }
    }

    /// Builds a scalar from raw coefficients; the length must be a power of two.
    pub fn from_parts(parts: Vec<f64>) -> Self {
        assert!(
            parts.len().is_power_of_two(),
            "coefficient count must be a power of two"
        );
        DiffScalar { parts }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.parts[0]
    }

    #[inline]
    pub fn depth(&self) -> usize {
        self.parts.len().trailing_zeros() as usize
    }

    pub fn parts(&self) -> &[f64] {
        &self.parts
    }

    /// Coefficient of the product of the infinitesimals selected by `mask`.
    pub fn coefficient(&self, mask: usize) -> f64 {
        self.parts.get(mask).copied().unwrap_or(0.0)
    }

    pub fn is_zero(&self) -> bool {
        self.parts.iter().all(|&p| p == 0.0)
    }

    /// Embeds the scalar at a larger depth (constant in the new levels).
    pub fn promote(&self, depth: usize) -> Self {
        let n = 1usize << depth;
        if n <= self.parts.len() {
            return self.clone();
        }
        let mut parts = Vec::with_capacity(n);
        parts.extend_from_slice(&self.parts);
        parts.resize(n, 0.0);
        DiffScalar { parts }
    }

    /// `re + eps·ε_level`, where both parts have depth at most `level`.
    pub fn tower(re: &Self, eps: &Self, level: usize) -> Self {
        debug_assert!(re.depth() <= level && eps.depth() <= level);
        let h = 1usize << level;
        let mut parts = vec![0.0; 2 * h];
        parts[..re.parts.len()].copy_from_slice(&re.parts);
        parts[h..h + eps.parts.len()].copy_from_slice(&eps.parts);
        DiffScalar { parts }
    }

    /// Inverse of [`DiffScalar::tower`]: returns the parts without and with ε_level.
    pub fn split_at_level(&self, level: usize) -> (Self, Self) {
        let d = self.depth();
        if d <= level {
            return (self.clone(), Self::zero());
        }
        debug_assert_eq!(d, level + 1, "scalar carries levels above the split");
        let h = 1usize << level;
        (
            DiffScalar {
                parts: self.parts[..h].to_vec(),
            },
            DiffScalar {
                parts: self.parts[h..].to_vec(),
            },
        )
    }

    fn split_top(&self) -> (Self, Self) {
        self.split_at_level(self.depth() - 1)
    }

    fn map_tower(&self, f: impl Fn(&Self) -> (Self, Self) + Copy) -> Self {
        // f(a) returns (value, derivative) at the lower level
        let (a, b) = self.split_top();
        let (fa, dfa) = f(&a);
        let level = self.depth() - 1;
        Self::tower(&fa, &(&dfa * &b), level)
    }

    pub fn recip(&self) -> Self {
        if self.depth() == 0 {
            return Self::constant(1.0 / self.value());
        }
        let (a, b) = self.split_top();
        let ra = a.recip();
        let eps = -(&(&ra * &ra) * &b);
        Self::tower(&ra, &eps, self.depth() - 1)
    }

    pub fn sqrt(&self) -> Self {
        if self.depth() == 0 {
            return Self::constant(self.value().sqrt());
        }
        self.map_tower(|a| {
            let s = a.sqrt();
            let d = (&s * 2.0).recip();
            (s, d)
        })
    }

    pub fn exp(&self) -> Self {
        if self.depth() == 0 {
            return Self::constant(self.value().exp());
        }
        self.map_tower(|a| {
            let e = a.exp();
            (e.clone(), e)
        })
    }

    pub fn ln(&self) -> Self {
        if self.depth() == 0 {
            return Self::constant(self.value().ln());
        }
        self.map_tower(|a| (a.ln(), a.recip()))
    }

    pub fn atan(&self) -> Self {
        if self.depth() == 0 {
            return Self::constant(self.value().atan());
        }
        self.map_tower(|a| (a.atan(), (&(a * a) + 1.0).recip()))
    }

    /// Principal arc cosine; the argument must lie in `(−1, 1)`.
    pub fn acos(&self) -> Self {
        if self.depth() == 0 {
            return Self::constant(self.value().acos());
        }
        self.map_tower(|a| {
            let one_minus = -(&(a * a) + -1.0);
            (a.acos(), -one_minus.sqrt().recip())
        })
    }

    pub fn sin_cos(&self) -> (Self, Self) {
        if self.depth() == 0 {
            let (s, c) = self.value().sin_cos();
            return (Self::constant(s), Self::constant(c));
        }
        let (a, b) = self.split_top();
        let (sa, ca) = a.sin_cos();
        let level = self.depth() - 1;
        let s = Self::tower(&sa, &(&ca * &b), level);
        let c = Self::tower(&ca, &(-(&sa * &b)), level);
        (s, c)
    }

    pub fn sin(&self) -> Self {
        self.sin_cos().0
    }

    pub fn cos(&self) -> Self {
        self.sin_cos().1
    }

    /// Integer power by repeated squaring; valid for any base.
    pub fn powi(&self, n: i32) -> Self {
        if n < 0 {
            return self.powi(-n).recip();
        }
        let mut result = Self::constant(1.0);
        let mut base = self.clone();
        let mut k = n as u32;
        while k > 0 {
            if k & 1 == 1 {
                result = &result * &base;
            }
            k >>= 1;
            if k > 0 {
                base = &base * &base;
            }
        }
        result
    }

    /// Real power on the principal branch; the base must be positive.
    pub fn powf(&self, r: f64) -> Self {
        if self.depth() == 0 {
            return Self::constant(self.value().powf(r));
        }
        self.map_tower(|a| {
            let p = a.powf(r);
            let d = &(&p * a.recip()) * r;
            (p, d)
        })
    }
}

fn all_zero(x: &[f64]) -> bool {
    x.iter().all(|&v| v == 0.0)
}

// Truncated product of two equal-length towers; `scratch` has the same length.
fn mul_same(a: &[f64], b: &[f64], out: &mut [f64], scratch: &mut [f64]) {
    let n = a.len();
    match n {
        1 => {
            out[0] = a[0] * b[0];
        }
        2 => {
            out[0] = a[0] * b[0];
            out[1] = a[0] * b[1] + a[1] * b[0];
        }
        _ => {
            let h = n / 2;
            let (a0, a1) = a.split_at(h);
            let (b0, b1) = b.split_at(h);
            let (o0, o1) = out.split_at_mut(h);
            let (s0, s1) = scratch.split_at_mut(h);
            mul_same(a0, b0, o0, s0);
            match (all_zero(a1), all_zero(b1)) {
                (true, true) => o1.fill(0.0),
                (true, false) => mul_same(a0, b1, o1, s0),
                (false, true) => mul_same(a1, b0, o1, s0),
                (false, false) => {
                    mul_same(a0, b1, o1, s0);
                    mul_same(a1, b0, s1, s0);
                    for (o, s) in o1.iter_mut().zip(s1.iter()) {
                        *o += *s;
                    }
                }
            }
        }
    }
}

fn mul_parts(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.len() == 1 {
        return b.iter().map(|&v| v * a[0]).collect();
    }
    if b.len() == 1 {
        return a.iter().map(|&v| v * b[0]).collect();
    }
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let n = short.len();
    let mut out = vec![0.0; long.len()];
    let mut scratch = vec![0.0; n];
    // the shorter factor is constant in the extra levels, so multiply blockwise
    for (block, o) in long.chunks(n).zip(out.chunks_mut(n)) {
        if !all_zero(block) {
            mul_same(short, block, o, &mut scratch);
        }
    }
    out
}

fn add_parts(a: &[f64], b: &[f64], sign: f64) -> Vec<f64> {
    let n = a.len().max(b.len());
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x = a.get(i).copied().unwrap_or(0.0);
        let y = b.get(i).copied().unwrap_or(0.0);
        out.push(x + sign * y);
    }
    out
}

impl<'a> Add<&'a DiffScalar> for &'a DiffScalar {
    type Output = DiffScalar;
    fn add(self, rhs: &DiffScalar) -> DiffScalar {
        DiffScalar {
            parts: add_parts(&self.parts, &rhs.parts, 1.0),
        }
    }
}

impl<'a> Sub<&'a DiffScalar> for &'a DiffScalar {
    type Output = DiffScalar;
    fn sub(self, rhs: &DiffScalar) -> DiffScalar {
        DiffScalar {
            parts: add_parts(&self.parts, &rhs.parts, -1.0),
        }
    }
}

impl<'a> Mul<&'a DiffScalar> for &'a DiffScalar {
    type Output = DiffScalar;
    fn mul(self, rhs: &DiffScalar) -> DiffScalar {
        DiffScalar {
            parts: mul_parts(&self.parts, &rhs.parts),
        }
    }
}

impl<'a> Div<&'a DiffScalar> for &'a DiffScalar {
    type Output = DiffScalar;
    fn div(self, rhs: &DiffScalar) -> DiffScalar {
        if rhs.depth() == 0 {
            let r = rhs.value();
            return DiffScalar {
                parts: self.parts.iter().map(|v| v / r).collect(),
            };
        }
        self * &rhs.recip()
    }
}

impl Neg for &DiffScalar {
    type Output = DiffScalar;
    fn neg(self) -> DiffScalar {
        DiffScalar {
            parts: self.parts.iter().map(|v| -v).collect(),
        }
    }
}

impl Neg for DiffScalar {
    type Output = DiffScalar;
    fn neg(mut self) -> DiffScalar {
        self.parts.iter_mut().for_each(|v| *v = -*v);
        self
    }
}

impl Mul<f64> for &DiffScalar {
    type Output = DiffScalar;
    fn mul(self, rhs: f64) -> DiffScalar {
        DiffScalar {
            parts: self.parts.iter().map(|v| v * rhs).collect(),
        }
    }
}

impl Add<f64> for &DiffScalar {
    type Output = DiffScalar;
    fn add(self, rhs: f64) -> DiffScalar {
        let mut parts = self.parts.clone();
        parts[0] += rhs;
        DiffScalar { parts }
    }
}

macro_rules! owned_binop {
    ($tr:ident, $method:ident) => {
        impl $tr<DiffScalar> for DiffScalar {
            type Output = DiffScalar;
            fn $method(self, rhs: DiffScalar) -> DiffScalar {
                (&self).$method(&rhs)
            }
        }
        impl<'a> $tr<&'a DiffScalar> for DiffScalar {
            type Output = DiffScalar;
            fn $method(self, rhs: &'a DiffScalar) -> DiffScalar {
                (&self).$method(rhs)
            }
        }
        impl<'a> $tr<DiffScalar> for &'a DiffScalar {
            type Output = DiffScalar;
            fn $method(self, rhs: DiffScalar) -> DiffScalar {
                self.$method(&rhs)
            }
        }
    };
}

owned_binop!(Add, add);
owned_binop!(Sub, sub);
owned_binop!(Mul, mul);
owned_binop!(Div, div);

impl Mul<f64> for DiffScalar {
    type Output = DiffScalar;
    fn mul(mut self, rhs: f64) -> DiffScalar {
        self.parts.iter_mut().for_each(|v| *v *= rhs);
        self
    }
}

impl From<f64> for DiffScalar {
    fn from(v: f64) -> Self {
        DiffScalar::constant(v)
    }
}

/// Arithmetic shared by plain reals and [`DiffScalar`], so that expression
/// evaluation can run over either carrier.
pub trait Scalar:
    Clone
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sqrt(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn atan(&self) -> Self;
    fn acos(&self) -> Self;
    fn powi(&self, n: i32) -> Self;
    fn powf(&self, r: f64) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(&self) -> f64 {
        *self
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn atan(&self) -> Self {
        f64::atan(*self)
    }
    fn acos(&self) -> Self {
        f64::acos(*self)
    }
    fn powi(&self, n: i32) -> Self {
        // same multiplication order as DiffScalar::powi so both carriers agree bit-for-bit
        if n < 0 {
            return 1.0 / Scalar::powi(self, -n);
        }
        let mut result = 1.0;
        let mut base = *self;
        let mut k = n as u32;
        while k > 0 {
            if k & 1 == 1 {
                result *= base;
            }
            k >>= 1;
            if k > 0 {
                base *= base;
            }
        }
        result
    }
    fn powf(&self, r: f64) -> Self {
        f64::powf(*self, r)
    }
}

impl Scalar for DiffScalar {
    fn from_f64(v: f64) -> Self {
        DiffScalar::constant(v)
    }
    fn value(&self) -> f64 {
        DiffScalar::value(self)
    }
    fn sqrt(&self) -> Self {
        DiffScalar::sqrt(self)
    }
    fn sin(&self) -> Self {
        DiffScalar::sin(self)
    }
    fn cos(&self) -> Self {
        DiffScalar::cos(self)
    }
    fn exp(&self) -> Self {
        DiffScalar::exp(self)
    }
    fn ln(&self) -> Self {
        DiffScalar::ln(self)
    }
    fn atan(&self) -> Self {
        DiffScalar::atan(self)
    }
    fn acos(&self) -> Self {
        DiffScalar::acos(self)
    }
    fn powi(&self, n: i32) -> Self {
        DiffScalar::powi(self, n)
    }
    fn powf(&self, r: f64) -> Self {
        DiffScalar::powf(self, r)
    }
}

pub fn constants(values: &[f64]) -> Vec<DiffScalar> {
    values.iter().map(|&v| DiffScalar::constant(v)).collect()
}

pub fn values(xs: &[DiffScalar]) -> Vec<f64> {
    xs.iter().map(DiffScalar::value).collect()
}

fn max_depth<'a>(xs: impl IntoIterator<Item = &'a DiffScalar>) -> usize {
    xs.into_iter().map(DiffScalar::depth).max().unwrap_or(0)
}

/// Jacobian-vector product.
///
/// Evaluates `f` at `p + s·dir` on a fresh infinitesimal level and returns
/// `(f(p), d/ds f(p + s·dir)|_{s=0})`. Both `p` and `dir` may themselves be
/// carriers, which is how derivatives nest.
pub fn jvp<F>(f: F, p: &[DiffScalar], dir: &[DiffScalar]) -> Result<(Vec<DiffScalar>, Vec<DiffScalar>)>
where
    F: FnOnce(&[DiffScalar]) -> Result<Vec<DiffScalar>>,
{
    if p.len() != dir.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            found: dir.len(),
        });
    }
    let level = max_depth(p.iter().chain(dir.iter()));
    if level + 1 > MAX_LEVELS {
        return Err(Error::DepthCap {
            requested: level + 1,
            cap: MAX_LEVELS,
        });
    }
    let seeded: Vec<DiffScalar> = p
        .iter()
        .zip(dir)
        .map(|(pi, di)| DiffScalar::tower(pi, di, level))
        .collect();
    let out = f(&seeded)?;
    Ok(out.iter().map(|o| o.split_at_level(level)).unzip())
}

/// Derivative-only form of [`jvp`].
pub fn derivative<F>(f: F, p: &[DiffScalar], dir: &[DiffScalar]) -> Result<Vec<DiffScalar>>
where
    F: FnOnce(&[DiffScalar]) -> Result<Vec<DiffScalar>>,
{
    jvp(f, p, dir).map(|(_, d)| d)
}

/// Mixed directional derivative `∂_{dirs[k-1]} … ∂_{dirs[0]} f(p)`.
///
/// All directions are seeded on independent levels in a single evaluation;
/// the result is the coefficient of ε_0 ε_1 … ε_{k-1}.
pub fn directional_derivative<F>(f: F, p: &[f64], dirs: &[Vec<f64>], cap: usize) -> Result<f64>
where
    F: FnOnce(&[DiffScalar]) -> Result<DiffScalar>,
{
    let k = dirs.len();
    if k > cap || k > MAX_LEVELS {
        return Err(Error::DepthCap {
            requested: k,
            cap: cap.min(MAX_LEVELS),
        });
    }
    let n = 1usize << k;
    let mut point = Vec::with_capacity(p.len());
    for (i, &pi) in p.iter().enumerate() {
        let mut parts = vec![0.0; n];
        parts[0] = pi;
        for (level, d) in dirs.iter().enumerate() {
            if d.len() != p.len() {
                return Err(Error::Dimension {
                    expected: p.len(),
                    found: d.len(),
                });
            }
            parts[1 << level] = d[i];
        }
        point.push(DiffScalar::from_parts(parts));
    }
    let out = f(&point)?;
    Ok(out.coefficient(n - 1))
}

/// Dense Jacobian of a vector function; entry `[i][j] = ∂f^i/∂p^j`.
pub fn jacobian<F>(f: F, p: &[f64]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[DiffScalar]) -> Result<Vec<DiffScalar>>,
{
    let point = constants(p);
    let mut columns = Vec::with_capacity(p.len());
    for j in 0..p.len() {
        let mut dir = vec![DiffScalar::zero(); p.len()];
        dir[j] = DiffScalar::constant(1.0);
        let d = derivative(&f, &point, &dir)?;
        columns.push(values(&d));
    }
    let rows = columns.first().map_or(0, Vec::len);
    Ok((0..rows)
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect())
}
