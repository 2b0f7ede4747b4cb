//! Curves, affine reparametrizations and boundedness certificates.

use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap, Diffeomorphism, PhaseSpace, Point, SpaceKind};
use crate::error::{Error, Result};
use crate::poly::Poly;
use crate::scalar::{factorial, Jet, JET_LEN};

const AFFINE_TOL: f64 = 1e-12;

/// `t ↦ a + b t` on `[−1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub a: f64,
    pub b: f64,
}

impl AffineMap {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        let m = Self { a, b };
        if !m.is_valid() {
            return Err(Error::InvalidArgument(format!("affine map ({a}, {b}) leaves [-1, 1]")));
        }
        Ok(m)
    }

    pub const fn identity() -> Self {
        Self { a: 0.0, b: 1.0 }
    }

    pub fn is_valid(&self) -> bool {
        self.a.is_finite()
            && self.b.is_finite()
            && self.b.abs() <= 1.0
            && self.a - self.b.abs() >= -1.0 - AFFINE_TOL
            && self.a + self.b.abs() <= 1.0 + AFFINE_TOL
    }

    #[inline]
    pub fn apply(&self, t: f64) -> f64 {
        self.a + self.b * t
    }

    /// `self ∘ inner`; the contraction is the product of contractions.
    pub fn compose(&self, inner: &AffineMap) -> AffineMap {
        AffineMap { a: self.a + self.b * inner.a, b: self.b * inner.b }
    }

    pub fn image(&self) -> (f64, f64) {
        (self.a - self.b.abs(), self.a + self.b.abs())
    }

    pub fn contains(&self, t: f64) -> bool {
        (t - self.a).abs() <= self.b.abs() * (1.0 + 1e-12)
    }
}

/// A parametrized curve `[−1, 1] → R^d` (lifted coordinates) with
/// Taylor jets at every parameter.
pub trait Curve: Sync {
    fn dim(&self) -> usize;

    /// `c[k] = σ^{(k)}(t) / k!` per coordinate.
    fn jets(&self, t: f64) -> [Jet; 3];

    fn label(&self) -> String;

    /// `sup ‖σ'‖` over `[lo, hi]`.
    fn speed_sup(&self, lo: f64, hi: f64) -> f64 {
        let n = 64;
        (0..=n)
            .map(|i| {
                let t = lo + (hi - lo) * i as f64 / n as f64;
                jet_norm(&self.jets(t), self.dim(), 1)
            })
            .fold(0.0, f64::max)
    }

    /// Boundedness verdict; exact for polynomial curves, grid-sampled otherwise.
    fn certify(&self, r: u32, alpha: f64, epsilon: Option<f64>) -> BoundednessCertificate {
        check_bounded_sampled(self, r, alpha, epsilon, DEFAULT_RESOLUTION, 1.0)
    }
}

/// `‖D^k‖` from the jets of a curve.
pub fn jet_norm(j: &[Jet; 3], d: usize, k: usize) -> f64 {
    let f = factorial(k);
    (0..d).map(|i| (j[i].c[k] * f).powi(2)).sum::<f64>().sqrt()
}

/// Piecewise-polynomial curve `σ(t) = origin + p_i(t)` on `[knot_i, knot_{i+1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCurve {
    pub id: String,
    pub space: PhaseSpace,
    pub origin: [f64; 3],
    pub knots: Vec<f64>,
    /// One polynomial per coordinate and piece, in the global parameter.
    pub pieces: Vec<Vec<Poly>>,
    pub r: u32,
    pub alpha: f64,
}

impl ParamCurve {
    pub fn new(
        id: &str,
        space: PhaseSpace,
        origin: [f64; 3],
        knots: Vec<f64>,
        pieces: Vec<Vec<Poly>>,
        r: u32,
        alpha: f64,
    ) -> Result<Self> {
        let d = space.dim;
        if knots.len() != pieces.len() + 1
            || knots.first() != Some(&-1.0)
            || knots.last() != Some(&1.0)
            || knots.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::InvalidArgument("knots must increase from -1 to 1, one more than pieces".into()));
        }
        if pieces.iter().any(|p| p.len() != d) {
            return Err(Error::InvalidArgument(format!("each piece needs {d} coordinate polynomials")));
        }
        if r == 0 || !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidArgument("need r ≥ 1 and α in (0, 1]".into()));
        }
        for i in 1..pieces.len() {
            let t = knots[i];
            for k in 0..d {
                let jump = (pieces[i - 1][k].eval(t) - pieces[i][k].eval(t)).abs();
                if jump > 1e-12 {
                    return Err(Error::InvalidArgument(format!("curve jumps by {jump:e} at knot {t}")));
                }
            }
        }
        Ok(Self { id: id.into(), space, origin, knots, pieces, r, alpha })
    }

    /// `σ(t) = p + t v`.
    pub fn segment(p: &Point, v: &[f64], r: u32, alpha: f64) -> Result<Self> {
        Self::quadratic(p, v, &vec![0.0; v.len()], r, alpha)
    }

    /// `σ(t) = p + t v + t² w`.
    pub fn quadratic(p: &Point, v: &[f64], w: &[f64], r: u32, alpha: f64) -> Result<Self> {
        let d = p.dim;
        if v.len() != d || w.len() != d {
            return Err(Error::InvalidArgument("direction dimension mismatch".into()));
        }
        let space = match p.kind {
            SpaceKind::Torus => PhaseSpace::torus(d),
            SpaceKind::Box => return Err(Error::InvalidArgument("curves live on tori".into())),
        };
        let polys = (0..d).map(|i| Poly::new(vec![0.0, v[i], w[i]])).collect();
        let kind = if w.iter().all(|x| *x == 0.0) { "segment" } else { "quadratic" };
        Self::new(kind, space, p.coords, vec![-1.0, 1.0], vec![polys], r, alpha)
    }

    fn piece_at(&self, t: f64) -> usize {
        let n = self.pieces.len();
        (0..n).find(|&i| t <= self.knots[i + 1]).unwrap_or(n - 1)
    }

    pub fn point(&self, t: f64) -> Point {
        let j = self.jets(t);
        let mut c = [0.0; 3];
        for i in 0..self.space.dim {
            c[i] = if self.space.kind == SpaceKind::Torus { wrap(j[i].c[0]) } else { j[i].c[0] };
        }
        Point { coords: c, dim: self.space.dim, kind: self.space.kind }
    }

    /// `σ ∘ θ` as a polynomial curve.
    pub fn reparametrized(&self, theta: &AffineMap) -> Result<ParamCurve> {
        let (lo, hi) = theta.image();
        let (lo, hi) = (lo.max(-1.0), hi.min(1.0));
        let mut knots = vec![-1.0];
        let mut pieces = Vec::new();
        for i in 0..self.pieces.len() {
            let (a, b) = (self.knots[i].max(lo), self.knots[i + 1].min(hi));
            if b <= a {
                continue;
            }
            let s_hi = ((b - theta.a) / theta.b).clamp(-1.0, 1.0);
            if s_hi <= *knots.last().unwrap() {
                continue;
            }
            knots.push(s_hi);
            pieces.push(self.pieces[i].iter().map(|p| p.compose_affine(theta.a, theta.b)).collect());
        }
        *knots.last_mut().unwrap() = 1.0;
        let id = format!("{}∘({:.6e},{:.6e})", self.id, theta.a, theta.b);
        Self::new(&id, self.space, self.origin, knots, pieces, self.r, self.alpha)
    }

    /// Polynomial `‖D^s σ‖²` on piece `i`.
    fn derivative_norm_sq(&self, i: usize, s: usize) -> Poly {
        self.pieces[i].iter().fold(Poly::zero(), |acc, p| {
            let d = p.nth_derivative(s);
            acc.add(&d.mul(&d))
        })
    }

    fn sup_derivative(&self, s: usize) -> f64 {
        (0..self.pieces.len())
            .map(|i| self.derivative_norm_sq(i, s).max_on(self.knots[i], self.knots[i + 1]).max(0.0).sqrt())
            .fold(0.0, f64::max)
    }

    /// Hölder bound for `D^r σ`: `sup ‖D^{r+1}σ‖ · 2^{1−α}`, zero when
    /// every piece has degree ≤ r, infinite when `D^r σ` jumps at a knot.
    fn holder_bound(&self, r: usize, alpha: f64) -> f64 {
        for i in 1..self.pieces.len() {
            let t = self.knots[i];
            for k in 0..self.space.dim {
                let l = self.pieces[i - 1][k].nth_derivative(r).eval(t);
                let rr = self.pieces[i][k].nth_derivative(r).eval(t);
                if (l - rr).abs() > 1e-9 * (1.0 + l.abs()) {
                    return f64::INFINITY;
                }
            }
        }
        let top = self.sup_derivative(r + 1);
        if top == 0.0 {
            0.0
        } else {
            top * 2f64.powf(1.0 - alpha)
        }
    }
}

impl Curve for ParamCurve {
    fn dim(&self) -> usize {
        self.space.dim
    }

    fn jets(&self, t: f64) -> [Jet; 3] {
        let i = self.piece_at(t);
        let mut out = [Jet::constant(0.0); 3];
        for (k, p) in self.pieces[i].iter().enumerate() {
            let mut c = [0.0; JET_LEN];
            let mut d = p.clone();
            for (m, slot) in c.iter_mut().enumerate() {
                *slot = d.eval(t) / factorial(m);
                d = d.derivative();
            }
            c[0] += self.origin[k];
            out[k] = Jet { c };
        }
        out
    }

    fn label(&self) -> String {
        self.id.clone()
    }

    fn speed_sup(&self, lo: f64, hi: f64) -> f64 {
        (0..self.pieces.len())
            .filter_map(|i| {
                let (a, b) = (self.knots[i].max(lo), self.knots[i + 1].min(hi));
                (b >= a).then(|| self.derivative_norm_sq(i, 1).max_on(a, b).max(0.0).sqrt())
            })
            .fold(0.0, f64::max)
    }

    fn certify(&self, r: u32, alpha: f64, epsilon: Option<f64>) -> BoundednessCertificate {
        check_bounded(self, r, alpha, epsilon)
    }
}

/// Maps whose rule can be pushed through curve jets.
pub trait JetMap: Sync {
    fn dim(&self) -> usize;
    fn apply_jet(&self, x: [Jet; 3]) -> [Jet; 3];
    fn label(&self) -> String;
    fn space(&self) -> PhaseSpace;
    /// Declared cap `Ω` on derivative norms.
    fn upsilon(&self) -> f64;
}

impl JetMap for Diffeomorphism {
    fn dim(&self) -> usize {
        Diffeomorphism::dim(self)
    }

    fn apply_jet(&self, x: [Jet; 3]) -> [Jet; 3] {
        self.apply(x)
    }

    fn label(&self) -> String {
        self.name()
    }

    fn space(&self) -> PhaseSpace {
        self.space
    }

    fn upsilon(&self) -> f64 {
        self.upsilon
    }
}

/// `f^q`, reducing base values mod 1 between steps on tori (the lifted
/// rules commute with integer translations).
#[derive(Debug, Clone)]
pub struct Power<'a> {
    pub map: &'a Diffeomorphism,
    pub q: usize,
}

impl JetMap for Power<'_> {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn apply_jet(&self, mut x: [Jet; 3]) -> [Jet; 3] {
        let torus = self.map.space.kind == SpaceKind::Torus;
        for _ in 0..self.q {
            x = self.map.apply(x);
            if torus {
                for v in x.iter_mut().take(self.map.dim()) {
                    v.c[0] -= v.c[0].floor();
                }
            }
        }
        x
    }

    fn label(&self) -> String {
        format!("{}^{}", self.map.name(), self.q)
    }

    fn space(&self) -> PhaseSpace {
        self.map.space
    }

    fn upsilon(&self) -> f64 {
        self.map.upsilon.powi(self.q as i32)
    }
}

/// `g ∘ σ ∘ θ`.
pub struct Composite<'a> {
    pub map: &'a dyn JetMap,
    pub curve: &'a dyn Curve,
    pub theta: AffineMap,
}

/// Jets of `σ ∘ θ` at `s`.
pub fn reparam_jets(curve: &dyn Curve, theta: &AffineMap, s: f64) -> [Jet; 3] {
    let mut x = curve.jets(theta.apply(s));
    let mut pow = 1.0;
    for k in 1..JET_LEN {
        pow *= theta.b;
        for v in x.iter_mut() {
            v.c[k] *= pow;
        }
    }
    x
}

impl Curve for Composite<'_> {
    fn dim(&self) -> usize {
        self.curve.dim()
    }

    fn jets(&self, s: f64) -> [Jet; 3] {
        self.map.apply_jet(reparam_jets(self.curve, &self.theta, s))
    }

    fn label(&self) -> String {
        format!("{}∘{}∘({:e},{:e})", self.map.label(), self.curve.label(), self.theta.a, self.theta.b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Neither,
    Bounded,
    StronglyBounded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundednessCertificate {
    pub curve: String,
    pub r: u32,
    pub alpha: f64,
    pub epsilon: Option<f64>,
    /// `‖Dσ‖_0`.
    pub d1: f64,
    /// `sup_{2≤s≤r} ‖D^sσ‖_0` (zero for `r = 1`).
    pub higher: f64,
    /// `‖D^rσ‖_α`.
    pub holder: f64,
    /// Grid spacing when sampled; `None` when exact.
    pub resolution: Option<f64>,
    /// Slack factor on the 1/6 constants.
    pub margin: f64,
    pub verdict: Verdict,
}

impl BoundednessCertificate {
    fn decide(
        curve: String,
        r: u32,
        alpha: f64,
        epsilon: Option<f64>,
        d1: f64,
        higher: f64,
        holder: f64,
        resolution: Option<f64>,
        margin: f64,
    ) -> Self {
        let mut c = Self { curve, r, alpha, epsilon, d1, higher, holder, resolution, margin, verdict: Verdict::Neither };
        c.verdict = c.expected_verdict();
        c
    }

    /// Verdict implied by the recorded quantities.
    pub fn expected_verdict(&self) -> Verdict {
        let cap = self.margin * self.d1 / 6.0;
        let bounded = self.holder <= cap && (self.r < 2 || self.higher <= cap);
        match (bounded, self.epsilon) {
            (true, Some(e)) if self.d1 <= e => Verdict::StronglyBounded,
            (true, _) => Verdict::Bounded,
            _ => Verdict::Neither,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.verdict == self.expected_verdict()
    }

    pub fn is_bounded(&self) -> bool {
        self.verdict != Verdict::Neither
    }
}

pub const DEFAULT_RESOLUTION: f64 = 1e-3;

/// Exact certificate of a polynomial curve.
pub fn check_bounded(curve: &ParamCurve, r: u32, alpha: f64, epsilon: Option<f64>) -> BoundednessCertificate {
    let r_us = r as usize;
    let d1 = curve.sup_derivative(1);
    let higher = (2..=r_us).map(|s| curve.sup_derivative(s)).fold(0.0, f64::max);
    let holder = curve.holder_bound(r_us, alpha);
    BoundednessCertificate::decide(curve.id.clone(), r, alpha, epsilon, d1, higher, holder, None, 1.0)
}

/// Grid certificate: derivatives sampled every `resolution`, Hölder part
/// from `sup ‖D^{r+1}‖ · 2^{1−α}`.
pub fn check_bounded_sampled<C: Curve + ?Sized>(
    curve: &C,
    r: u32,
    alpha: f64,
    epsilon: Option<f64>,
    resolution: f64,
    margin: f64,
) -> BoundednessCertificate {
    let d = curve.dim();
    let r_us = r as usize;
    let n = (2.0 / resolution).ceil().max(1.0) as usize;
    let mut sup = vec![0.0f64; r_us + 2];
    for i in 0..=n {
        let t = (-1.0 + 2.0 * i as f64 / n as f64).min(1.0);
        let j = curve.jets(t);
        for (k, slot) in sup.iter_mut().enumerate().skip(1) {
            *slot = slot.max(jet_norm(&j, d, k));
        }
    }
    let higher = (2..=r_us).map(|s| sup[s]).fold(0.0, f64::max);
    let top = sup[r_us + 1];
    let holder = if top == 0.0 { 0.0 } else { top * 2f64.powf(1.0 - alpha) };
    BoundednessCertificate::decide(curve.label(), r, alpha, epsilon, sup[1], higher, holder, Some(2.0 / n as f64), margin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin() -> Point {
        PhaseSpace::torus(2).point(&[0.3, 0.4]).unwrap()
    }

    #[test]
    fn straight_segment_is_strongly_bounded() {
        let s = ParamCurve::segment(&origin(), &[0.006, 0.008], 2, 1.0).unwrap();
        let c = check_bounded(&s, 2, 1.0, Some(0.01));
        assert_eq!(c.verdict, Verdict::StronglyBounded);
        assert!((c.d1 - 0.01).abs() < 1e-15);
        assert_eq!((c.higher, c.holder), (0.0, 0.0));
    }

    #[test]
    fn parabola_is_not_bounded() {
        let s = ParamCurve::quadratic(&origin(), &[1.0, 0.0], &[0.0, 1.0], 1, 1.0).unwrap();
        let c = check_bounded(&s, 1, 1.0, None);
        assert!((c.d1 - 5f64.sqrt()).abs() < 1e-9);
        assert!((c.holder - 2.0).abs() < 1e-12);
        assert_eq!(c.verdict, Verdict::Neither);
    }

    #[test]
    fn verdict_is_scale_invariant() {
        for w in [0.01, 0.1, 1.0] {
            let base = ParamCurve::quadratic(&origin(), &[1.0, 0.5], &[0.0, w], 2, 0.5).unwrap();
            let v0 = check_bounded(&base, 2, 0.5, None).verdict;
            for c in [1e-3, 0.5, 7.0] {
                let s = ParamCurve::quadratic(&origin(), &[c, 0.5 * c], &[0.0, w * c], 2, 0.5).unwrap();
                assert_eq!(check_bounded(&s, 2, 0.5, None).verdict, v0);
            }
        }
    }

    #[test]
    fn jets_match_divided_differences() {
        let s = ParamCurve::quadratic(&origin(), &[0.2, -0.1], &[0.05, 0.3], 2, 1.0).unwrap();
        let h = 1e-5;
        for t in [-0.7, 0.0, 0.4] {
            let j = s.jets(t);
            let (p, m) = (s.jets(t + h), s.jets(t - h));
            for k in 0..2 {
                let fd = (p[k].c[0] - m[k].c[0]) / (2.0 * h);
                assert!((fd - j[k].derivative(1)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn reparametrized_curve_matches_composite_jets() {
        let s = ParamCurve::quadratic(&origin(), &[0.2, -0.1], &[0.05, 0.3], 2, 1.0).unwrap();
        let th = AffineMap::new(0.25, 0.5).unwrap();
        let rs = s.reparametrized(&th).unwrap();
        for t in [-1.0, -0.2, 0.9] {
            let a = rs.jets(t);
            let b = reparam_jets(&s, &th, t);
            for k in 0..2 {
                for m in 0..4 {
                    assert!((a[k].c[m] - b[k].c[m]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn composition_multiplies_contractions() {
        let a = AffineMap::new(0.5, 0.25).unwrap();
        let b = AffineMap::new(-0.5, 0.5).unwrap();
        let c = a.compose(&b);
        assert_eq!(c.b, a.b * b.b);
        assert!(c.is_valid());
        assert_eq!(c.apply(0.3), a.apply(b.apply(0.3)));
        assert!(AffineMap::new(0.9, 0.2).is_err());
    }

    #[test]
    fn sampled_and_exact_certificates_agree_on_polynomials() {
        let s = ParamCurve::quadratic(&origin(), &[0.2, -0.1], &[0.01, 0.02], 2, 1.0).unwrap();
        let exact = check_bounded(&s, 2, 1.0, None);
        let grid = check_bounded_sampled(&s, 2, 1.0, None, 1e-3, 1.0);
        assert!((exact.d1 - grid.d1).abs() < 1e-6);
        assert!((exact.higher - grid.higher).abs() < 1e-12);
        assert_eq!(exact.verdict, grid.verdict);
    }
}
