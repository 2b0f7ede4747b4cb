//! Phase spaces, points and the built-in diffeomorphism families.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, TangentMatrix};
use crate::scalar::{Dual, Jet, Scalar};

const TAU: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    Torus,
    Box,
}

/// A flat torus `T^d = R^d / Z^d` or a rectangular box in `R^d`, `d ≤ 3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpace {
    pub kind: SpaceKind,
    pub dim: usize,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl PhaseSpace {
    pub fn torus(dim: usize) -> Self {
        assert!((1..=3).contains(&dim), "dimension must be 1, 2 or 3");
        Self { kind: SpaceKind::Torus, dim, lo: [0.0; 3], hi: [1.0; 3] }
    }

    pub fn boxed(lo: &[f64], hi: &[f64]) -> Self {
        let dim = lo.len();
        assert!((1..=3).contains(&dim) && hi.len() == dim);
        let mut l = [0.0; 3];
        let mut h = [0.0; 3];
        l[..dim].copy_from_slice(lo);
        h[..dim].copy_from_slice(hi);
        Self { kind: SpaceKind::Box, dim, lo: l, hi: h }
    }

    pub fn id(&self) -> String {
        match self.kind {
            SpaceKind::Torus => format!("T{}", self.dim),
            SpaceKind::Box => {
                let sides: Vec<String> =
                    (0..self.dim).map(|i| format!("[{},{}]", self.lo[i], self.hi[i])).collect();
                format!("box{}", sides.join("x"))
            }
        }
    }

    pub fn extent(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    pub fn contains(&self, c: &[f64]) -> bool {
        match self.kind {
            SpaceKind::Torus => c.iter().all(|v| v.is_finite()),
            SpaceKind::Box => (0..self.dim).all(|i| c[i] >= self.lo[i] && c[i] <= self.hi[i]),
        }
    }

    /// Builds a point, reducing torus coordinates into `[0,1)`.
    pub fn point(&self, coords: &[f64]) -> Result<Point> {
        if coords.len() != self.dim {
            return Err(Error::DomainMismatch {
                expected: self.id(),
                found: format!("{} coordinates", coords.len()),
            });
        }
        if !self.contains(coords) {
            return Err(Error::OutsideDomain { coords: coords.to_vec() });
        }
        let mut c = [0.0; 3];
        c[..self.dim].copy_from_slice(coords);
        if self.kind == SpaceKind::Torus {
            for v in c.iter_mut().take(self.dim) {
                *v = wrap(*v);
            }
        }
        Ok(Point { coords: c, dim: self.dim, kind: self.kind })
    }

    /// Minimal-image displacement `b − a`.
    pub fn displacement(&self, a: &Point, b: &Point) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..self.dim {
            let mut v = b.coords[i] - a.coords[i];
            if self.kind == SpaceKind::Torus {
                v -= v.round();
            }
            out[i] = v;
        }
        out
    }

    pub fn distance(&self, a: &Point, b: &Point) -> f64 {
        linalg::vec_norm(&self.displacement(a, b)[..self.dim])
    }

    /// Radius below which the identity chart is injective (1/2 on tori).
    pub fn injectivity_radius(&self) -> f64 {
        match self.kind {
            SpaceKind::Torus => 0.5,
            SpaceKind::Box => (0..self.dim).map(|i| 0.5 * self.extent(i)).fold(f64::INFINITY, f64::min),
        }
    }

    pub fn diameter(&self) -> f64 {
        match self.kind {
            SpaceKind::Torus => (self.dim as f64).sqrt() * 0.5,
            SpaceKind::Box => (0..self.dim).map(|i| self.extent(i).powi(2)).sum::<f64>().sqrt(),
        }
    }

    pub fn check(&self, p: &Point) -> Result<()> {
        if p.dim != self.dim || p.kind != self.kind {
            return Err(Error::DomainMismatch { expected: self.id(), found: p.space_label() });
        }
        if !self.contains(p.coords()) {
            return Err(Error::OutsideDomain { coords: p.coords().to_vec() });
        }
        Ok(())
    }
}

#[inline]
pub fn wrap(v: f64) -> f64 {
    let w = v - v.floor();
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub coords: [f64; 3],
    pub dim: usize,
    pub kind: SpaceKind,
}

impl Point {
    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    fn space_label(&self) -> String {
        match self.kind {
            SpaceKind::Torus => format!("T{}", self.dim),
            SpaceKind::Box => format!("box{}", self.dim),
        }
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.coords().iter().map(|v| format!("{v:.6}")).collect();
        write!(f, "({})", parts.join(", "))
    }
}

/// Built-in map families, as written in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MapFamily {
    Identity { dim: usize },
    /// Integer matrix with `|det| = 1`, acting on `T^d`.
    Toral { matrix: Vec<Vec<i64>> },
    /// Chirikov standard map on `T^2`.
    Standard { k: f64 },
    /// Hénon map on the box `[-2,2]^2`.
    Henon { a: f64, b: f64 },
    /// `x ↦ x + eps·sin(2πx)` on `T^1`, invertible for `2π|eps| < 1`.
    CircleSine { eps: f64 },
    /// `x ↦ 2x` on `T^1`; not invertible.
    Doubling,
    Translation { shift: Vec<f64> },
    /// A 2D base map times a circle rotation by `rotation`.
    Product { base: Box<MapFamily>, rotation: f64 },
    /// `S_t ∘ base` with the shear `S_t(u) = (u0 + t·sin(2πu1)/(2π), u1, ...)`.
    Sheared { base: Box<MapFamily>, t: f64 },
}

impl MapFamily {
    pub fn cat() -> Self {
        MapFamily::Toral { matrix: vec![vec![2, 1], vec![1, 1]] }
    }

    pub fn dim(&self) -> usize {
        match self {
            MapFamily::Identity { dim } => *dim,
            MapFamily::Toral { matrix } => matrix.len(),
            MapFamily::Standard { .. } | MapFamily::Henon { .. } => 2,
            MapFamily::CircleSine { .. } | MapFamily::Doubling => 1,
            MapFamily::Translation { shift } => shift.len(),
            MapFamily::Product { .. } => 3,
            MapFamily::Sheared { base, .. } => base.dim(),
        }
    }

    pub fn space(&self) -> PhaseSpace {
        match self {
            MapFamily::Henon { .. } => PhaseSpace::boxed(&[-2.0, -2.0], &[2.0, 2.0]),
            other => PhaseSpace::torus(other.dim()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            MapFamily::Identity { dim } => format!("identity{dim}"),
            MapFamily::Toral { matrix } => {
                let rows: Vec<String> = matrix
                    .iter()
                    .map(|r| r.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","))
                    .collect();
                format!("toral[{}]", rows.join(";"))
            }
            MapFamily::Standard { k } => format!("standard(K={k})"),
            MapFamily::Henon { a, b } => format!("henon(a={a},b={b})"),
            MapFamily::CircleSine { eps } => format!("circle_sine(eps={eps})"),
            MapFamily::Doubling => "doubling".into(),
            MapFamily::Translation { shift } => format!("translation{shift:?}"),
            MapFamily::Product { base, rotation } => format!("{}xrot({rotation})", base.label()),
            MapFamily::Sheared { base, t } => format!("shear(t={t})o{}", base.label()),
        }
    }

    fn compile(&self) -> Result<Kernel> {
        Ok(match self {
            MapFamily::Identity { dim } => {
                if !(1..=3).contains(dim) {
                    return Err(Error::InvalidArgument(format!("identity dimension {dim}")));
                }
                Kernel::Identity
            }
            MapFamily::Toral { matrix } => {
                let d = matrix.len();
                if !(1..=3).contains(&d) || matrix.iter().any(|r| r.len() != d) {
                    return Err(Error::InvalidArgument("toral matrix must be square, d ≤ 3".into()));
                }
                let mut m = [[0.0; 3]; 3];
                for i in 0..d {
                    for j in 0..d {
                        m[i][j] = matrix[i][j] as f64;
                    }
                }
                let det = DMatrix::from_fn(d, d, |i, j| m[i][j]).determinant().round();
                if det.abs() != 1.0 {
                    return Err(Error::InvalidArgument(format!("toral matrix has det {det}, need ±1")));
                }
                let inv = DMatrix::from_fn(d, d, |i, j| m[i][j]).try_inverse().expect("unimodular");
                let mut mi = [[0.0; 3]; 3];
                for i in 0..d {
                    for j in 0..d {
                        mi[i][j] = inv[(i, j)].round();
                    }
                }
                Kernel::Linear { m, inv: mi }
            }
            MapFamily::Standard { k } => Kernel::Standard { k: *k },
            MapFamily::Henon { a, b } => {
                if *b == 0.0 {
                    return Err(Error::InvalidArgument("Hénon b must be nonzero".into()));
                }
                Kernel::Henon { a: *a, b: *b }
            }
            MapFamily::CircleSine { eps } => {
                if TAU * eps.abs() >= 1.0 {
                    return Err(Error::InvalidArgument("circle sine map needs 2π|eps| < 1".into()));
                }
                Kernel::CircleSine { eps: *eps }
            }
            MapFamily::Doubling => Kernel::Doubling,
            MapFamily::Translation { shift } => {
                if !(1..=3).contains(&shift.len()) {
                    return Err(Error::InvalidArgument("translation dimension".into()));
                }
                let mut v = [0.0; 3];
                v[..shift.len()].copy_from_slice(shift);
                Kernel::Translation { v }
            }
            MapFamily::Product { base, rotation } => {
                if base.dim() != 2 {
                    return Err(Error::InvalidArgument("product base must be two-dimensional".into()));
                }
                if base.space().kind != SpaceKind::Torus {
                    return Err(Error::InvalidArgument("product base must act on T2".into()));
                }
                Kernel::Product { base: Box::new(base.compile()?), rot: *rotation }
            }
            MapFamily::Sheared { base, t } => {
                if base.dim() < 2 {
                    return Err(Error::InvalidArgument("shear needs dimension ≥ 2".into()));
                }
                Kernel::Sheared { base: Box::new(base.compile()?), t: *t }
            }
        })
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    Identity,
    Linear { m: Mat3, inv: Mat3 },
    Standard { k: f64 },
    Henon { a: f64, b: f64 },
    CircleSine { eps: f64 },
    Doubling,
    Translation { v: [f64; 3] },
    Product { base: Box<Kernel>, rot: f64 },
    Sheared { base: Box<Kernel>, t: f64 },
}

#[inline]
fn lin<S: Scalar>(m: &Mat3, x: &[S; 3], d: usize) -> [S; 3] {
    let mut out = [S::cst(0.0); 3];
    for i in 0..d {
        let mut acc = S::cst(0.0);
        for j in 0..d {
            if m[i][j] != 0.0 {
                acc = acc + x[j].scale(m[i][j]);
            }
        }
        out[i] = acc;
    }
    out
}

impl Kernel {
    fn forward<S: Scalar>(&self, x: [S; 3], d: usize) -> [S; 3] {
        match self {
            Kernel::Identity => x,
            Kernel::Linear { m, .. } => lin(m, &x, d),
            Kernel::Standard { k } => {
                let kick = x[0].scale(TAU).sin().scale(k / TAU);
                let y = x[1] + kick;
                [x[0] + y, y, x[2]]
            }
            Kernel::Henon { a, b } => {
                [S::cst(1.0) - (x[0] * x[0]).scale(*a) + x[1], x[0].scale(*b), x[2]]
            }
            Kernel::CircleSine { eps } => [x[0] + x[0].scale(TAU).sin().scale(*eps), x[1], x[2]],
            Kernel::Doubling => [x[0].scale(2.0), x[1], x[2]],
            Kernel::Translation { v } => [x[0] + S::cst(v[0]), x[1] + S::cst(v[1]), x[2] + S::cst(v[2])],
            Kernel::Product { base, rot } => {
                let b = base.forward(x, 2);
                [b[0], b[1], x[2] + S::cst(*rot)]
            }
            Kernel::Sheared { base, t } => {
                let mut y = base.forward(x, d);
                y[0] = y[0] + y[1].scale(TAU).sin().scale(t / TAU);
                y
            }
        }
    }

    fn inverse<S: Scalar>(&self, x: [S; 3], d: usize) -> Option<[S; 3]> {
        Some(match self {
            Kernel::Identity => x,
            Kernel::Linear { inv, .. } => lin(inv, &x, d),
            Kernel::Standard { k } => {
                let x0 = x[0] - x[1];
                let y0 = x[1] - x0.scale(TAU).sin().scale(k / TAU);
                [x0, y0, x[2]]
            }
            Kernel::Henon { a, b } => {
                let x0 = x[1].scale(1.0 / b);
                [x0, x[0] - S::cst(1.0) + (x0 * x0).scale(*a), x[2]]
            }
            Kernel::CircleSine { eps } => {
                // contraction x ↦ y − eps·sin(2πx), rate 2π|eps| < 1
                let mut z = x[0];
                for _ in 0..120 {
                    z = x[0] - z.scale(TAU).sin().scale(*eps);
                }
                [z, x[1], x[2]]
            }
            Kernel::Doubling => return None,
            Kernel::Translation { v } => [x[0] - S::cst(v[0]), x[1] - S::cst(v[1]), x[2] - S::cst(v[2])],
            Kernel::Product { base, rot } => {
                let b = base.inverse(x, 2)?;
                [b[0], b[1], x[2] - S::cst(*rot)]
            }
            Kernel::Sheared { base, t } => {
                let mut y = x;
                y[0] = y[0] - y[1].scale(TAU).sin().scale(t / TAU);
                base.inverse(y, d)?
            }
        })
    }

    fn has_inverse(&self) -> bool {
        match self {
            Kernel::Doubling => false,
            Kernel::Product { base, .. } | Kernel::Sheared { base, .. } => base.has_inverse(),
            _ => true,
        }
    }
}

/// Analytic sup-norm data: `||Df||_0`, `||Df^{-1}||_0` and Lipschitz
/// constants of `Df` and `Df^{-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub df: f64,
    pub df_inv: f64,
    pub lip_df: f64,
    pub lip_df_inv: f64,
}

impl NormBounds {
    fn swap(self) -> Self {
        Self { df: self.df_inv, df_inv: self.df, lip_df: self.lip_df_inv, lip_df_inv: self.lip_df }
    }

    /// α-Hölder constants from Lipschitz constants on a space of the given diameter.
    pub fn holder(&self, alpha: f64, diameter: f64) -> (f64, f64) {
        let h = |lip: f64| lip * diameter.powf(1.0 - alpha);
        (h(self.lip_df), h(self.lip_df_inv))
    }
}

fn norm2(rows: [[f64; 2]; 2]) -> f64 {
    let mut m = [[0.0; 3]; 3];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = rows[i][j];
        }
    }
    linalg::op_norm(&m, 2)
}

impl Kernel {
    fn bounds(&self, d: usize) -> NormBounds {
        match self {
            Kernel::Identity | Kernel::Translation { .. } => {
                NormBounds { df: 1.0, df_inv: 1.0, lip_df: 0.0, lip_df_inv: 0.0 }
            }
            Kernel::Linear { m, inv } => NormBounds {
                df: linalg::op_norm(m, d),
                df_inv: linalg::op_norm(inv, d),
                lip_df: 0.0,
                lip_df_inv: 0.0,
            },
            Kernel::Standard { k } => {
                // Df is affine in c = cos 2πx ∈ [-1,1]; the norm is convex in c
                let df = [-1.0, 1.0].iter().map(|c| norm2([[1.0 + k * c, 1.0], [k * c, 1.0]])).fold(0.0, f64::max);
                let di = [-1.0, 1.0].iter().map(|c| norm2([[1.0, -1.0], [-k * c, 1.0 + k * c]])).fold(0.0, f64::max);
                let lip = std::f64::consts::SQRT_2 * k.abs() * TAU;
                NormBounds { df, df_inv: di, lip_df: lip, lip_df_inv: lip }
            }
            Kernel::Henon { a, b } => {
                let df = [-2.0, 2.0].iter().map(|x| norm2([[-2.0 * a * x, 1.0], [*b, 0.0]])).fold(0.0, f64::max);
                let di = [-2.0, 2.0]
                    .iter()
                    .map(|x| norm2([[0.0, 1.0 / b], [1.0, 2.0 * a * x / b]]))
                    .fold(0.0, f64::max);
                NormBounds { df, df_inv: di, lip_df: 2.0 * a.abs(), lip_df_inv: 2.0 * a.abs() / b.abs().powi(2) }
            }
            Kernel::CircleSine { eps } => {
                let s = TAU * eps.abs();
                NormBounds {
                    df: 1.0 + s,
                    df_inv: 1.0 / (1.0 - s),
                    lip_df: TAU * s,
                    lip_df_inv: TAU * s / (1.0 - s).powi(3),
                }
            }
            Kernel::Doubling => NormBounds { df: 2.0, df_inv: 0.5, lip_df: 0.0, lip_df_inv: 0.0 },
            Kernel::Product { base, .. } => {
                let b = base.bounds(2);
                NormBounds { df: b.df.max(1.0), df_inv: b.df_inv.max(1.0), lip_df: b.lip_df, lip_df_inv: b.lip_df_inv }
            }
            Kernel::Sheared { base, t } => {
                let b = base.bounds(d);
                let s = norm2([[1.0, t.abs()], [0.0, 1.0]]);
                let lip_s = TAU * t.abs();
                let df = s * b.df;
                let df_inv = s * b.df_inv;
                let lip_df = lip_s * b.df * b.df + s * b.lip_df;
                NormBounds { df, df_inv, lip_df, lip_df_inv: lip_df * df_inv.powi(3) }
            }
        }
    }
}

/// Regularity and norm metadata declared for a map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    pub r: u32,
    pub alpha: f64,
}

impl Default for Regularity {
    fn default() -> Self {
        Self { r: 1, alpha: 1.0 }
    }
}

/// Scenario-file description of a map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSpec {
    #[serde(flatten)]
    pub family: MapFamily,
    #[serde(default)]
    pub perturbation: Option<f64>,
    #[serde(default)]
    pub r: Option<u32>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub upsilon: Option<f64>,
}

impl MapSpec {
    pub fn build(&self) -> Result<Diffeomorphism> {
        let family = match self.perturbation {
            Some(t) if t != 0.0 => MapFamily::Sheared { base: Box::new(self.family.clone()), t },
            _ => self.family.clone(),
        };
        let reg = Regularity { r: self.r.unwrap_or(1), alpha: self.alpha.unwrap_or(1.0) };
        let mut map = Diffeomorphism::with_regularity(family, reg)?;
        if let Some(u) = self.upsilon {
            map.upsilon = u;
        }
        Ok(map)
    }
}

/// An immutable map with exact derivative rules.
#[derive(Debug, Clone)]
pub struct Diffeomorphism {
    pub family: MapFamily,
    pub space: PhaseSpace,
    pub regularity: Regularity,
    /// Declared cap on `||Df||`, `||Df^{-1}||` and their Hölder constants.
    pub upsilon: f64,
    inverted: bool,
    kernel: Kernel,
}

impl Diffeomorphism {
    pub fn new(family: MapFamily) -> Result<Self> {
        Self::with_regularity(family, Regularity::default())
    }

    pub fn with_regularity(family: MapFamily, regularity: Regularity) -> Result<Self> {
        if regularity.r == 0 || !(regularity.alpha > 0.0 && regularity.alpha <= 1.0) {
            return Err(Error::InvalidArgument("need r ≥ 1 and α in (0,1]".into()));
        }
        let kernel = family.compile()?;
        let space = family.space();
        let mut map = Self { family, space, regularity, upsilon: 1.0, inverted: false, kernel };
        map.upsilon = map.default_upsilon();
        Ok(map)
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(MapFamily::Identity { dim }).expect("valid identity")
    }

    pub fn cat() -> Self {
        Self::new(MapFamily::cat()).expect("valid cat map")
    }

    pub fn toral(matrix: Vec<Vec<i64>>) -> Result<Self> {
        Self::new(MapFamily::Toral { matrix })
    }

    pub fn standard(k: f64) -> Self {
        Self::new(MapFamily::Standard { k }).expect("valid standard map")
    }

    pub fn henon(a: f64, b: f64) -> Self {
        Self::new(MapFamily::Henon { a, b }).expect("valid Hénon map")
    }

    pub fn dim(&self) -> usize {
        self.space.dim
    }

    pub fn name(&self) -> String {
        if self.inverted {
            format!("inverse({})", self.family.label())
        } else {
            self.family.label()
        }
    }

    pub fn is_inverted(&self) -> bool {
        self.inverted
    }

    pub fn has_inverse(&self) -> bool {
        self.kernel.has_inverse()
    }

    /// Analytic derivative bounds (over the whole phase space).
    pub fn norm_bounds(&self) -> NormBounds {
        let b = self.kernel.bounds(self.dim());
        if self.inverted {
            b.swap()
        } else {
            b
        }
    }

    fn default_upsilon(&self) -> f64 {
        let b = self.norm_bounds();
        let (h, hi) = b.holder(self.regularity.alpha, self.space.diameter());
        let mut u = b.df.max(h);
        if self.has_inverse() {
            u = u.max(b.df_inv).max(hi);
        }
        if self.regularity.r >= 2 {
            u = u.max(b.lip_df).max(b.lip_df_inv);
        }
        u.max(1.0) * 1.01
    }

    pub fn inverse(&self) -> Result<Diffeomorphism> {
        if !self.has_inverse() {
            return Err(Error::NoInverse(self.name()));
        }
        let mut inv = self.clone();
        inv.inverted = !self.inverted;
        inv.upsilon = self.upsilon;
        Ok(inv)
    }

    /// The raw rule on lifted coordinates, for any scalar type.
    pub fn apply<S: Scalar>(&self, x: [S; 3]) -> [S; 3] {
        let d = self.dim();
        if self.inverted {
            self.kernel.inverse(x, d).expect("inverse checked at construction")
        } else {
            self.kernel.forward(x, d)
        }
    }

    /// Rule of the inverse map on lifted coordinates.
    pub fn apply_inverse<S: Scalar>(&self, x: [S; 3]) -> Result<[S; 3]> {
        let d = self.dim();
        if self.inverted {
            Ok(self.kernel.forward(x, d))
        } else {
            self.kernel.inverse(x, d).ok_or_else(|| Error::NoInverse(self.name()))
        }
    }

    pub fn evaluate(&self, p: &Point) -> Result<Point> {
        self.space.check(p)?;
        Ok(self.step(p))
    }

    /// `evaluate` without the domain check.
    #[inline]
    pub fn step(&self, p: &Point) -> Point {
        let y = self.apply(p.coords);
        self.finish(y)
    }

    fn finish(&self, mut y: [f64; 3]) -> Point {
        if self.space.kind == SpaceKind::Torus {
            for v in y.iter_mut().take(self.dim()) {
                *v = wrap(*v);
            }
        }
        for v in y.iter_mut().skip(self.dim()) {
            *v = 0.0;
        }
        Point { coords: y, dim: self.dim(), kind: self.space.kind }
    }

    pub fn evaluate_inverse(&self, p: &Point) -> Result<Point> {
        self.space.check(p)?;
        let y = self.apply_inverse(p.coords)?;
        Ok(self.finish(y))
    }

    /// Exact `D_p f` by forward-mode differentiation of the rule.
    #[inline]
    pub fn jacobian_raw(&self, p: &Point) -> Mat3 {
        let d = self.dim();
        let mut out = [[0.0; 3]; 3];
        for j in 0..d {
            let mut x = [Dual::new(0.0, 0.0); 3];
            for i in 0..3 {
                x[i] = Dual::new(p.coords[i], if i == j { 1.0 } else { 0.0 });
            }
            let y = self.apply(x);
            for i in 0..d {
                out[i][j] = y[i].d;
            }
        }
        out
    }

    pub fn jacobian(&self, p: &Point) -> Result<TangentMatrix> {
        self.space.check(p)?;
        Ok(linalg::to_tangent(&self.jacobian_raw(p), self.dim()))
    }

    /// Jets of the image along a curve given by coordinate jets (lifted).
    pub fn apply_jet(&self, x: [Jet; 3]) -> [Jet; 3] {
        self.apply(x)
    }

    pub fn orbit_points(&self, p: &Point, n: usize) -> Vec<Point> {
        let mut out = Vec::with_capacity(n + 1);
        let mut x = *p;
        out.push(x);
        for _ in 0..n {
            x = self.step(&x);
            out.push(x);
        }
        out
    }

    pub fn iterate(&self, p: &Point, n: usize) -> Result<Orbit> {
        self.iterate_with(p, n, IterateOptions::default())
    }

    /// Orbit of `p` with the tangent cocycle accumulated in log-scaled form.
    /// Raw products are formed over `qr_stride` steps before each QR.
    pub fn iterate_with(&self, p: &Point, n: usize, opts: IterateOptions) -> Result<Orbit> {
        self.space.check(p)?;
        let d = self.dim();
        let stride = opts.qr_stride.max(1);
        let mut points = Vec::with_capacity(n + 1);
        points.push(*p);
        let mut q = DMatrix::<f64>::identity(d, d);
        let mut log_r = vec![0.0; d];
        let mut product = ScaledMatrix::identity(d);
        let mut pending = DMatrix::<f64>::identity(d, d);
        let mut pending_steps = 0;
        let mut x = *p;
        for k in 0..n {
            let j = linalg::to_dmatrix(&self.jacobian_raw(&x), d);
            product.left_mul(&j);
            pending = &j * pending;
            pending_steps += 1;
            x = self.step(&x);
            points.push(x);
            if pending_steps == stride || k + 1 == n {
                let a = &pending * &q;
                let scale = a.amax();
                if !scale.is_finite() || scale > 1e300 {
                    return Err(Error::CocycleOverflow { steps: k + 1, log_scale: scale.ln() });
                }
                let (qn, r) = linalg::qr_positive(&a);
                for i in 0..d {
                    let v = r[(i, i)];
                    if !(v > 1e-300) || !v.is_finite() {
                        return Err(Error::DegenerateQr(k));
                    }
                    log_r[i] += v.ln();
                }
                q = qn;
                pending = DMatrix::identity(d, d);
                pending_steps = 0;
            }
        }
        Ok(Orbit { base: *p, points, q, log_r, product, stride })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterateOptions {
    pub qr_stride: usize,
}

impl Default for IterateOptions {
    fn default() -> Self {
        Self { qr_stride: 1 }
    }
}

/// `e^{log_scale} · m` with `m` kept at unit max-entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledMatrix {
    pub log_scale: f64,
    pub m: DMatrix<f64>,
}

impl ScaledMatrix {
    pub fn identity(d: usize) -> Self {
        Self { log_scale: 0.0, m: DMatrix::identity(d, d) }
    }

    pub fn left_mul(&mut self, a: &DMatrix<f64>) {
        self.m = a * &self.m;
        self.normalize();
    }

    pub fn compose(&self, earlier: &ScaledMatrix) -> ScaledMatrix {
        let mut out = ScaledMatrix { log_scale: self.log_scale + earlier.log_scale, m: &self.m * &earlier.m };
        out.normalize();
        out
    }

    fn normalize(&mut self) {
        let s = self.m.amax();
        if s > 0.0 && s.is_finite() {
            self.m /= s;
            self.log_scale += s.ln();
        }
    }

    /// `log ||·||` of the represented matrix.
    pub fn log_norm(&self) -> f64 {
        self.log_scale + linalg::spectral_norm(&self.m).ln()
    }
}

#[derive(Debug, Clone)]
pub struct Orbit {
    pub base: Point,
    /// `points[k] = f^k(base)`, `k = 0..=n`.
    pub points: Vec<Point>,
    /// Current orthonormal frame of the QR cocycle.
    pub q: DMatrix<f64>,
    /// Cumulative `log R_ii`.
    pub log_r: Vec<f64>,
    /// `D_base f^n` in log-scaled form.
    pub product: ScaledMatrix,
    pub stride: usize,
}

impl Orbit {
    pub fn len(&self) -> usize {
        self.points.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn end(&self) -> Point {
        *self.points.last().expect("orbit has a base point")
    }
}

/// Central finite differences with step `h`, second-order accurate.
pub fn finite_difference_jacobian(map: &Diffeomorphism, p: &Point, h: f64) -> Result<TangentMatrix> {
    map.space.check(p)?;
    let d = map.dim();
    let mut out = [[0.0; 3]; 3];
    for j in 0..d {
        let mut plus = p.coords;
        let mut minus = p.coords;
        plus[j] += h;
        minus[j] -= h;
        if plus[j] == p.coords[j] || minus[j] == p.coords[j] {
            return Err(Error::StepUnderflow(h));
        }
        let fp: [f64; 3] = map.apply(plus);
        let fm: [f64; 3] = map.apply(minus);
        for i in 0..d {
            out[i][j] = (fp[i] - fm[i]) / (plus[j] - minus[j]);
        }
    }
    Ok(linalg::to_tangent(&out, d))
}

/// Sampled `C^{1,α}` data of a map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    /// Grid spacing actually used (dyadic).
    pub resolution: f64,
    pub alpha: f64,
    pub sup_df: f64,
    pub sup_df_inv: f64,
    pub holder_df: f64,
    /// `max{||Df||_0, ||Df||_α}`.
    pub norm: f64,
}

const HOLDER_MAX_NODES: usize = 1 << 20;

/// Lower estimate of `||f||_{C^{1,α}}` on a dyadic grid.
///
/// Hölder quotients are taken over axis-aligned node pairs at every dyadic
/// scale down to the grid spacing, so refining the grid only adds pairs and
/// the estimate is monotone.
pub fn holder_norm(map: &Diffeomorphism, grid_resolution: f64) -> Result<HolderEstimate> {
    if !(grid_resolution > 0.0) {
        return Err(Error::InvalidArgument("grid resolution must be positive".into()));
    }
    let d = map.dim();
    let alpha = map.regularity.alpha;
    let mut levels = (1.0 / grid_resolution).log2().ceil().max(0.0) as u32;
    while levels > 0 && (1usize << (levels as usize * d)) > HOLDER_MAX_NODES {
        levels -= 1;
    }
    let per_axis = 1usize << levels;
    let torus = map.space.kind == SpaceKind::Torus;
    let nodes_axis = if torus { per_axis } else { per_axis + 1 };
    let total = nodes_axis.pow(d as u32);
    let spacing: Vec<f64> = (0..d).map(|i| map.space.extent(i) / per_axis as f64).collect();
    let coords_of = |idx: usize| -> [f64; 3] {
        let mut c = [0.0; 3];
        let mut rest = idx;
        for i in 0..d {
            c[i] = map.space.lo[i] + (rest % nodes_axis) as f64 * spacing[i];
            rest /= nodes_axis;
        }
        c
    };
    let jac: Vec<Mat3> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let c = coords_of(idx);
            map.jacobian_raw(&Point { coords: c, dim: d, kind: map.space.kind })
        })
        .collect();
    let sup_df = jac.par_iter().map(|m| linalg::op_norm(m, d)).reduce(|| 0.0, f64::max);
    let sup_df_inv = if map.has_inverse() {
        jac.par_iter().map(|m| linalg::op_norm(&linalg::inverse3(m, d), d)).reduce(|| 0.0, f64::max)
    } else {
        f64::NAN
    };
    let holder_df = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut best = 0.0f64;
            let mut stride_axis = 1usize;
            for axis in 0..d {
                let pos = (idx / stride_axis) % nodes_axis;
                for s in 0..levels {
                    let step = 1usize << s;
                    let other = if torus {
                        idx - pos * stride_axis + ((pos + step) % nodes_axis) * stride_axis
                    } else if pos + step < nodes_axis {
                        idx + step * stride_axis
                    } else {
                        continue;
                    };
                    let diff = linalg::sub3(&jac[idx], &jac[other]);
                    let dist = step as f64 * spacing[axis];
                    best = best.max(linalg::op_norm(&diff, d) / dist.powf(alpha));
                }
                stride_axis *= nodes_axis;
            }
            best
        })
        .reduce(|| 0.0, f64::max);
    Ok(HolderEstimate {
        resolution: spacing.iter().copied().fold(0.0, f64::max),
        alpha,
        sup_df,
        sup_df_inv,
        holder_df,
        norm: sup_df.max(holder_df),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn torus_reduction_stays_in_unit_interval() {
        let s = PhaseSpace::torus(2);
        let p = s.point(&[-1e-18, 3.25]).unwrap();
        assert!(p.coords().iter().all(|v| (0.0..1.0).contains(v)));
        assert_eq!(p.coords()[1], 0.25);
    }

    #[test]
    fn box_rejects_outside_points() {
        let h = Diffeomorphism::henon(1.4, 0.3);
        assert!(matches!(h.space.point(&[2.5, 0.0]), Err(Error::OutsideDomain { .. })));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let cat = Diffeomorphism::cat();
        let p = PhaseSpace::torus(3).point(&[0.1, 0.2, 0.3]).unwrap();
        assert!(matches!(cat.evaluate(&p), Err(Error::DomainMismatch { .. })));
    }

    #[test]
    fn exact_jacobians_match_finite_differences() {
        let maps = [
            Diffeomorphism::standard(0.9),
            Diffeomorphism::henon(1.4, 0.3),
            Diffeomorphism::new(MapFamily::Sheared { base: Box::new(MapFamily::cat()), t: 0.05 }).unwrap(),
            Diffeomorphism::new(MapFamily::CircleSine { eps: 0.1 }).unwrap(),
        ];
        for map in &maps {
            let coords = [0.31, 0.17, 0.0];
            let p = map.space.point(&coords[..map.dim()]).unwrap();
            let exact = map.jacobian(&p).unwrap();
            let fd = finite_difference_jacobian(map, &p, 1e-5).unwrap();
            assert!((exact.0 - fd.0).abs().max() < 1e-8, "{}", map.name());
        }
    }

    #[test]
    fn inverse_rules_round_trip() {
        let maps = [
            Diffeomorphism::standard(1.3),
            Diffeomorphism::henon(1.4, 0.3),
            Diffeomorphism::new(MapFamily::CircleSine { eps: 0.1 }).unwrap(),
            Diffeomorphism::new(MapFamily::Product { base: Box::new(MapFamily::Standard { k: 0.5 }), rotation: 0.3 })
                .unwrap(),
            Diffeomorphism::new(MapFamily::Sheared {
                base: Box::new(MapFamily::Toral { matrix: vec![vec![1, 1, 0], vec![1, 2, 1], vec![0, 1, 2]] }),
                t: 0.1,
            })
            .unwrap(),
        ];
        for map in &maps {
            let inv = map.inverse().unwrap();
            let coords = [0.42, 0.13, 0.77];
            let p = map.space.point(&coords[..map.dim()]).unwrap();
            let back = inv.evaluate(&map.evaluate(&p).unwrap()).unwrap();
            assert!(map.space.distance(&p, &back) < 1e-10, "{}", map.name());
        }
    }

    #[test]
    fn doubling_has_no_inverse() {
        let m = Diffeomorphism::new(MapFamily::Doubling).unwrap();
        assert!(matches!(m.inverse(), Err(Error::NoInverse(_))));
    }

    #[test]
    fn non_unimodular_matrix_is_rejected() {
        assert!(Diffeomorphism::toral(vec![vec![2, 0], vec![0, 1]]).is_err());
    }

    #[test]
    fn stride_too_large_overflows() {
        let cat = Diffeomorphism::cat();
        let p = cat.space.point(&[0.1, 0.2]).unwrap();
        let err = cat.iterate_with(&p, 2000, IterateOptions { qr_stride: 2000 }).unwrap_err();
        assert!(matches!(err, Error::CocycleOverflow { .. }));
    }

    #[test]
    fn spec_roundtrip_through_toml_like_tree() {
        let spec: MapSpec = serde_json::from_str(r#"{"family":"standard","k":0.5,"r":2}"#).unwrap();
        let m = spec.build().unwrap();
        assert_eq!(m.regularity.r, 2);
        assert!(m.upsilon >= m.norm_bounds().df);
    }
}
