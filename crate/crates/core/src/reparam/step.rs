//! One subdivision step: affine reparametrizations of a bounded curve
//! whose images under `g` are again bounded.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curve::{jet_norm, reparam_jets, AffineMap, Composite, Curve, JetMap, ParamCurve, Verdict};
use crate::error::{Error, Result};
use crate::linalg;
use crate::poly::Poly;
use crate::scalar::Jet;

/// Scans up to this many base pieces one by one.
pub const EXHAUSTIVE_LIMIT: u64 = 1 << 16;
const SAMPLE_COUNT: u64 = 1 << 12;
const MAX_CLASSIFIED: usize = 1 << 20;
const MAX_BASE_PIECES: f64 = (1u64 << 50) as f64;
const BAND_WIDTH: f64 = 1e-9;
const CERT_GRID: usize = 256;
/// Largest family size we represent exactly.
const MAX_FAMILY: f64 = 1e36;

/// Constants of the step: composition (`c_b`), Kolmogorov–Landau (`c_k`),
/// Leibniz (`c_l`) and the interval count of the band decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepConstants {
    pub c_b: f64,
    pub c_k: f64,
    pub c_l: f64,
    pub c_bezout: u32,
}

impl StepConstants {
    pub fn new(r: u32, c_b: f64, c_k: f64, c_l: f64) -> Self {
        Self { c_b, c_k, c_l, c_bezout: 2 * r - 1 }
    }

    /// `ln b` for the exponent gap `gap = χ⁺ − χ`.
    pub fn log_b(&self, r: u32, alpha: f64, gap: i64) -> f64 {
        -((3.0 * self.c_b).ln() + gap as f64 + 10.0) / (r as f64 - 1.0 + alpha)
    }

    pub fn b(&self, r: u32, alpha: f64, gap: i64) -> f64 {
        self.log_b(r, alpha, gap).exp()
    }

    /// `(1000 e⁵ C_K)^{2/α}`.
    pub fn split_base(&self, alpha: f64) -> f64 {
        (1000.0 * 5f64.exp() * self.c_k).powf(2.0 / alpha)
    }

    /// Equal parts per band interval.
    pub fn parts(&self, alpha: f64) -> f64 {
        self.split_base(alpha).ceil() + 1.0
    }

    /// `C_{r,α}` such that `|Θ| ≤ C_{r,α}·exp((χ⁺−χ)/(r+α−1))`.
    pub fn c_r_alpha(&self, r: u32, alpha: f64) -> f64 {
        (1.0 / self.b(r, alpha, 0) + 2.0) * self.c_bezout as f64 * (self.split_base(alpha) + 2.0)
    }

    pub fn log_bound(&self, r: u32, alpha: f64, gap: i64) -> f64 {
        self.c_r_alpha(r, alpha).ln() + gap as f64 / (r as f64 + alpha - 1.0)
    }
}

/// Upper limit on the curve scale: `2(Ω+2)ε < min(1, r(M))`.
pub fn epsilon_admissible(g: &dyn JetMap) -> f64 {
    g.space().injectivity_radius().min(1.0) / (2.0 * (g.upsilon() + 2.0))
}

/// Sufficient `ε_Ω` found by halving until `(2ε)^s |D^s g(x')[v^s]| ≤ 3ε‖D_x g‖`
/// holds on a grid of base points, unit directions and offsets. Heuristic.
pub fn epsilon_omega(g: &dyn JetMap, r: u32, grid: usize) -> f64 {
    let space = g.space();
    let d = space.dim;
    let grid = grid.max(2);
    let total = grid.pow(d as u32);
    let dirs: Vec<[f64; 3]> = (0..8)
        .map(|k| {
            let a = std::f64::consts::PI * k as f64 / 8.0;
            let mut v = [0.0; 3];
            v[0] = a.cos();
            if d > 1 {
                v[1] = a.sin();
            }
            if d > 2 {
                v = [a.cos() / 2f64.sqrt(), a.sin() / 2f64.sqrt(), 1.0 / 2f64.sqrt()];
            }
            if d == 1 {
                v[0] = 1.0;
            }
            v
        })
        .collect();
    let top = (r as usize).max(2);
    let holds = |eps: f64| {
        (0..total).into_par_iter().all(|idx| {
            let mut x = [0.0; 3];
            let mut rest = idx;
            for (i, xi) in x.iter_mut().enumerate().take(d) {
                *xi = space.lo[i] + (rest % grid) as f64 / grid as f64 * space.extent(i);
                rest /= grid;
            }
            let dx = linalg::op_norm(&map_jacobian(g, x), d);
            dirs.iter().all(|v| {
                [-1.0, 0.0, 1.0].iter().all(|o| {
                    let mut base = [Jet::constant(0.0); 3];
                    for i in 0..d {
                        base[i] = Jet::from_coeffs(&[x[i] + 2.0 * eps * o * v[i], v[i]]);
                    }
                    let y = g.apply_jet(base);
                    (2..=top).all(|s| (2.0 * eps).powi(s as i32) * jet_norm(&y, d, s) <= 3.0 * eps * dx)
                })
            })
        })
    };
    let mut eps = 0.5 * space.injectivity_radius().min(1.0);
    for _ in 0..200 {
        if holds(eps) {
            return eps;
        }
        eps *= 0.5;
    }
    0.0
}

/// `D_x g` from first-order jets.
pub fn map_jacobian(g: &dyn JetMap, x: [f64; 3]) -> linalg::Mat3 {
    let d = g.dim();
    let mut out = [[0.0; 3]; 3];
    for j in 0..d {
        let mut v = [Jet::constant(0.0); 3];
        for i in 0..3 {
            v[i] = if i == j { Jet::variable(x[i]) } else { Jet::constant(x[i]) };
        }
        let y = g.apply_jet(v);
        for i in 0..d {
            out[i][j] = y[i].c[1];
        }
    }
    out
}

/// `(⌈log‖D_{σ(t)} g‖⌉, ⌈log‖D_{σ(t)} g|_{Tσ}‖⌉)`.
pub fn chi_class(g: &dyn JetMap, sigma: &dyn Curve, t: f64) -> (i64, i64) {
    let d = sigma.dim();
    let x = sigma.jets(t);
    let m = map_jacobian(g, [x[0].c[0], x[1].c[0], x[2].c[0]]);
    let y = g.apply_jet(x);
    let speed = jet_norm(&x, d, 1);
    let image = jet_norm(&y, d, 1);
    (linalg::op_norm(&m, d).ln().ceil() as i64, (image / speed).ln().ceil() as i64)
}

#[derive(Debug, Clone, PartialEq)]
enum Class {
    Empty,
    Full,
    Partial(Vec<(f64, f64)>),
}

impl Class {
    fn uniform(&self) -> bool {
        !matches!(self, Class::Partial(_))
    }
}

/// Sufficient data for every member of a block to be bounded:
/// `w^{s−1} S_s ≤ m₁/6` for `2 ≤ s ≤ r` and `w^r S_{r+1} 2^{1−α} ≤ m₁/6`,
/// with `S_s`, `m₁` grid extrema of `g∘σ∘γ` over the block interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCertificate {
    pub half_width: f64,
    pub min_speed: f64,
    /// `S_s` for `s = 2..=r+1`.
    pub sups: Vec<f64>,
    pub r: u32,
    pub alpha: f64,
    pub pieces_checked: Vec<u64>,
    pub holds: bool,
}

impl BlockCertificate {
    fn verdict(&self) -> bool {
        let cap = self.min_speed / 6.0;
        let r = self.r as usize;
        let w = self.half_width;
        let higher = (2..=r).all(|s| w.powi(s as i32 - 1) * self.sups[s - 2] <= cap);
        let top = w.powi(r as i32) * self.sups[r - 1] * 2f64.powf(1.0 - self.alpha);
        higher && top <= cap
    }

    pub fn is_consistent(&self) -> bool {
        self.holds == self.verdict() && self.sups.len() == self.r as usize
    }
}

/// `parts` equal subdivisions of `interval` on each of `count` consecutive
/// base pieces starting at `first_piece`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReparamBlock {
    pub first_piece: u64,
    pub count: u64,
    pub interval: (f64, f64),
    pub parts: u128,
    pub certificate: BlockCertificate,
}

impl ReparamBlock {
    pub fn len(&self) -> u128 {
        self.count as u128 * self.parts
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanMode {
    Exhaustive,
    /// Uniform runs between agreeing samples were not classified piece by piece.
    Sampled { samples: u64, classified: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepContext {
    pub map: String,
    pub upsilon: f64,
    pub curve: ParamCurve,
    pub chi_plus: i64,
    pub chi: i64,
    pub epsilon: f64,
    pub r: u32,
    pub alpha: f64,
    pub b: f64,
    pub base_pieces: u64,
    pub spacing: f64,
    pub parts: u128,
    pub constants: StepConstants,
}

impl StepContext {
    /// Base piece `γ_j(s) = c_j + b s`.
    pub fn base(&self, j: u64) -> AffineMap {
        AffineMap { a: -1.0 + self.b + j as f64 * self.spacing, b: self.b }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReparamFamily {
    pub context: StepContext,
    pub blocks: Vec<ReparamBlock>,
    /// `C_{r,α}·exp((χ⁺−χ)/(r+α−1))`.
    pub bound: f64,
    pub log_bound: f64,
    pub scan: ScanMode,
    /// Explicit `(a, b)` pairs for small families.
    pub pairs: Option<Vec<(f64, f64)>>,
}

const PAIRS_LIMIT: u128 = 4096;

impl ReparamFamily {
    pub fn len(&self) -> u128 {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn log_len(&self) -> f64 {
        (self.len() as f64).ln()
    }

    pub fn within_bound(&self) -> bool {
        (self.len() as f64) <= self.bound
    }

    pub fn certificates_hold(&self) -> bool {
        self.blocks.iter().all(|b| b.certificate.holds && b.certificate.is_consistent())
    }

    /// Member `i` in block order.
    pub fn member(&self, mut i: u128) -> Option<AffineMap> {
        for blk in &self.blocks {
            if i < blk.len() {
                let piece = blk.first_piece + (i / blk.parts) as u64;
                let k = (i % blk.parts) as f64;
                let (lo, hi) = blk.interval;
                let w = (hi - lo) / (2.0 * blk.parts as f64);
                let part = AffineMap { a: lo + (2.0 * k + 1.0) * w, b: w };
                return Some(self.context.base(piece).compose(&part));
            }
            i -= blk.len();
        }
        None
    }

    /// Whether some member's image contains `t`. Parts tile each block
    /// interval, so membership is decided in the base-piece coordinate.
    pub fn contains(&self, t: f64) -> bool {
        let ctx = &self.context;
        let tol = 1e-9 + 8.0 * f64::EPSILON / ctx.b;
        let guess = ((t + 1.0 - ctx.b) / ctx.spacing).round();
        self.blocks.iter().any(|blk| {
            let last = blk.first_piece + blk.count - 1;
            (-1i64..=1).any(|o| {
                let j = guess + o as f64;
                if j < blk.first_piece as f64 || j > last as f64 {
                    return false;
                }
                let g = ctx.base(j as u64);
                let s = (t - g.a) / g.b;
                s >= blk.interval.0 - tol && s <= blk.interval.1 + tol
            })
        })
    }

    /// `n` members spread evenly over the family (first and last included).
    pub fn spread(&self, n: usize) -> Vec<AffineMap> {
        let len = self.len();
        if len == 0 || n == 0 {
            return Vec::new();
        }
        let n = (n as u128).min(len);
        (0..n)
            .filter_map(|k| {
                let i = if n == 1 { 0 } else { k * (len - 1) / (n - 1) };
                self.member(i)
            })
            .collect()
    }
}

struct Setup<'a> {
    g: &'a dyn JetMap,
    sigma: &'a ParamCurve,
    ctx: StepContext,
}

impl Setup<'_> {
    fn classify(&self, j: u64) -> Class {
        let gamma = self.ctx.base(j);
        let r = self.ctx.r as usize;
        let d = self.sigma.dim();
        let h = self.g.apply_jet(reparam_jets(self.sigma, &gamma, 0.0));
        let mut q = Poly::zero();
        for hi in h.iter().take(d) {
            let p = Poly::new((0..r).map(|k| (k + 1) as f64 * hi.c[k + 1]).collect());
            q = q.add(&p.mul(&p));
        }
        let (lo, hi) = gamma.image();
        let big_b = self.ctx.b * self.sigma.speed_sup(lo.max(-1.0), hi.min(1.0));
        let center = (2.0 * self.ctx.chi as f64).exp() * big_b * big_b;
        let band = q.band_intervals((-6.0f64).exp() * center, 6f64.exp() * center, -1.0, 1.0, BAND_WIDTH);
        match band.as_slice() {
            [] => Class::Empty,
            [(a, b)] if *a <= -1.0 && *b >= 1.0 => Class::Full,
            _ => Class::Partial(band),
        }
    }

    fn certify(&self, pieces: &[u64], interval: (f64, f64)) -> BlockCertificate {
        let r = self.ctx.r as usize;
        let d = self.sigma.dim();
        let (lo, hi) = interval;
        let mut sups = vec![0.0f64; r];
        let mut min_speed = f64::INFINITY;
        for &j in pieces {
            let comp = Composite { map: self.g, curve: self.sigma, theta: self.ctx.base(j) };
            for i in 0..=CERT_GRID {
                let s = lo + (hi - lo) * i as f64 / CERT_GRID as f64;
                let jets = comp.jets(s);
                min_speed = min_speed.min(jet_norm(&jets, d, 1));
                for (k, slot) in sups.iter_mut().enumerate() {
                    *slot = slot.max(jet_norm(&jets, d, k + 2));
                }
            }
        }
        let mut c = BlockCertificate {
            half_width: (hi - lo) / (2.0 * self.ctx.parts as f64),
            min_speed,
            sups,
            r: self.ctx.r,
            alpha: self.ctx.alpha,
            pieces_checked: pieces.to_vec(),
            holds: false,
        };
        c.holds = c.verdict();
        c
    }
}

/// Runs of base pieces with a common class.
fn runs_from(classified: &BTreeMap<u64, Class>) -> Vec<(u64, u64, Class)> {
    let mut runs: Vec<(u64, u64, Class)> = Vec::new();
    for (&j, c) in classified {
        if let Some(last) = runs.last_mut() {
            if c.uniform() && last.2 == *c {
                last.1 = j;
                continue;
            }
        }
        runs.push((j, j, c.clone()));
    }
    runs
}

fn scan(setup: &Setup<'_>) -> Result<(BTreeMap<u64, Class>, ScanMode)> {
    let n = setup.ctx.base_pieces;
    if n <= EXHAUSTIVE_LIMIT {
        let classes: Vec<Class> = (0..n).into_par_iter().map(|j| setup.classify(j)).collect();
        return Ok(((0..n).zip(classes).collect(), ScanMode::Exhaustive));
    }
    let idx: Vec<u64> = (0..SAMPLE_COUNT).map(|i| (i as u128 * (n - 1) as u128 / (SAMPLE_COUNT - 1) as u128) as u64).collect();
    let classes: Vec<Class> = idx.par_iter().map(|&j| setup.classify(j)).collect();
    let mut known: BTreeMap<u64, Class> = idx.iter().copied().zip(classes).collect();
    let mut stack: Vec<(u64, u64)> = idx.windows(2).map(|w| (w[0], w[1])).collect();
    while let Some((a, b)) = stack.pop() {
        if b <= a + 1 {
            continue;
        }
        let (ca, cb) = (&known[&a], &known[&b]);
        if ca.uniform() && ca == cb {
            continue;
        }
        if known.len() >= MAX_CLASSIFIED {
            return Err(Error::TooManyPieces(n as u128));
        }
        let m = a + (b - a) / 2;
        let c = setup.classify(m);
        known.insert(m, c);
        stack.push((m, b));
        stack.push((a, m));
    }
    let classified = known.len() as u64;
    Ok((known, ScanMode::Sampled { samples: SAMPLE_COUNT, classified }))
}

/// One reparametrization step for `g` along the strongly ε-bounded `σ`
/// at exponent classes `(χ⁺, χ)`.
pub fn reparametrize_step(
    g: &dyn JetMap,
    sigma: &ParamCurve,
    chi_plus: i64,
    chi: i64,
    epsilon: f64,
    constants: &StepConstants,
) -> Result<ReparamFamily> {
    if chi_plus < chi {
        return Err(Error::InconsistentChi { chi_plus, chi });
    }
    if g.dim() != sigma.dim() {
        return Err(Error::DomainMismatch { expected: g.space().id(), found: sigma.space.id() });
    }
    let (r, alpha) = (sigma.r, sigma.alpha);
    if r as usize + 1 >= crate::scalar::JET_LEN {
        return Err(Error::InvalidArgument(format!("r = {r} exceeds the jet order")));
    }
    let admissible = epsilon_admissible(g);
    if !(epsilon > 0.0) || epsilon >= admissible {
        return Err(Error::EpsilonTooLarge { epsilon, epsilon_omega: admissible });
    }
    let cert = sigma.certify(r, alpha, Some(epsilon));
    if cert.verdict != Verdict::StronglyBounded || cert.d1 == 0.0 {
        return Err(Error::NotStronglyBounded(epsilon));
    }
    let gap = chi_plus - chi;
    let b = constants.b(r, alpha, gap);
    let inv_b = (1.0 / b).ceil();
    let parts_f = constants.parts(alpha);
    if inv_b + 1.0 > MAX_BASE_PIECES || (inv_b + 1.0) * parts_f * constants.c_bezout as f64 > MAX_FAMILY {
        return Err(Error::TooManyPieces(((inv_b + 1.0) * parts_f).min(u128::MAX as f64) as u128));
    }
    let base_pieces = inv_b as u64 + 1;
    let parts = parts_f as u128;
    let log_bound = constants.log_bound(r, alpha, gap);
    let setup = Setup {
        g,
        sigma,
        ctx: StepContext {
            map: g.label(),
            upsilon: g.upsilon(),
            curve: sigma.clone(),
            chi_plus,
            chi,
            epsilon,
            r,
            alpha,
            b,
            base_pieces,
            spacing: (2.0 - 2.0 * b) / (base_pieces - 1) as f64,
            parts,
            constants: *constants,
        },
    };
    let (classified, scan_mode) = scan(&setup)?;
    let mut blocks = Vec::new();
    for (first, last, class) in runs_from(&classified) {
        match class {
            Class::Empty => {}
            Class::Full => {
                let pieces: Vec<u64> = {
                    let mut v = vec![first, first + (last - first) / 2, last];
                    v.dedup();
                    v
                };
                let certificate = setup.certify(&pieces, (-1.0, 1.0));
                blocks.push(ReparamBlock { first_piece: first, count: last - first + 1, interval: (-1.0, 1.0), parts, certificate });
            }
            Class::Partial(intervals) => {
                for iv in intervals {
                    let certificate = setup.certify(&[first], iv);
                    blocks.push(ReparamBlock { first_piece: first, count: 1, interval: iv, parts, certificate });
                }
            }
        }
    }
    let mut family = ReparamFamily {
        context: setup.ctx,
        blocks,
        bound: log_bound.exp(),
        log_bound,
        scan: scan_mode,
        pairs: None,
    };
    if family.len() <= PAIRS_LIMIT {
        let n = family.len();
        family.pairs = Some((0..n).filter_map(|i| family.member(i)).map(|m| (m.a, m.b)).collect());
    }
    Ok(family)
}
