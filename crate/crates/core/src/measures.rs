//! Empirical measures, weak-* comparison, grid partitions and itinerary
//! entropies, discretization into ergodic-like components, and the
//! exponent-signature split of a sample.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{wrap, Diffeomorphism, Orbit, PhaseSpace, Point, SpaceKind};
use crate::error::{Error, Result};
use crate::lyapunov::ExponentSpectrum;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Orbit { map: Option<String>, burn_in: usize },
    Synthetic { label: String },
}

/// Weighted point cloud standing in for an invariant measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalMeasure {
    pub space: PhaseSpace,
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub provenance: Provenance,
}

impl EmpiricalMeasure {
    /// Weights are normalized to sum to one.
    pub fn new(space: PhaseSpace, points: Vec<Point>, weights: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::InvalidArgument("points and weights differ in length".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("weights must be finite and nonnegative".into()));
        }
        for p in &points {
            space.check(p)?;
        }
        let total = stats::pairwise_sum(&weights);
        if !points.is_empty() && !(total > 0.0) {
            return Err(Error::InvalidArgument("total mass is zero".into()));
        }
        let weights = if (total - 1.0).abs() <= 1e-12 { weights } else { weights.iter().map(|w| w / total).collect() };
        Ok(Self { space, points, weights, provenance })
    }

    pub fn uniform(space: PhaseSpace, points: Vec<Point>, provenance: Provenance) -> Result<Self> {
        let n = points.len();
        Self::new(space, points, vec![1.0 / n.max(1) as f64; n], provenance)
    }

    pub fn point_mass(space: PhaseSpace, p: Point) -> Result<Self> {
        Self::new(space, vec![p], vec![1.0], Provenance::Synthetic { label: "dirac".into() })
    }

    /// Stratified volume sample of size `n`.
    pub fn volume_sample(space: &PhaseSpace, n: usize, rng: &mut impl Rng) -> Result<Self> {
        let pts = stats::uniform_points(space, n, rng);
        Self::uniform(space.clone(), pts, Provenance::Synthetic { label: "volume".into() })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        stats::pairwise_sum(&self.weights)
    }

    pub fn integrate<F>(&self, f: F) -> f64
    where
        F: Fn(&Point) -> f64 + Sync,
    {
        let terms: Vec<f64> = self.points.par_iter().zip(self.weights.par_iter()).map(|(p, w)| w * f(p)).collect();
        stats::pairwise_sum(&terms)
    }

    /// `Σ c_i μ_i` for nonnegative coefficients.
    pub fn mixture(parts: &[(f64, &EmpiricalMeasure)]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("empty mixture".into()))?;
        let space = first.1.space.clone();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (c, m) in parts {
            if m.space != space {
                return Err(Error::SpaceMismatch);
            }
            points.extend_from_slice(&m.points);
            weights.extend(m.weights.iter().map(|w| w * c));
        }
        Self::new(space, points, weights, Provenance::Synthetic { label: "mixture".into() })
    }

    /// Image measure `f_* μ`.
    pub fn push_forward(&self, map: &Diffeomorphism) -> Result<Self> {
        if map.space != self.space {
            return Err(Error::SpaceMismatch);
        }
        let points = self.points.par_iter().map(|p| map.step(p)).collect();
        Ok(Self { space: self.space.clone(), points, weights: self.weights.clone(), provenance: self.provenance.clone() })
    }

    /// Columnar text: `weight,x0,x1,...`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("weight");
        for i in 0..self.space.dim {
            let _ = write!(s, ",x{i}");
        }
        s.push('\n');
        for (p, w) in self.points.iter().zip(&self.weights) {
            let _ = write!(s, "{w:e}");
            for c in p.coords() {
                let _ = write!(s, ",{c:e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(space: PhaseSpace, text: &str) -> Result<Self> {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
            let vals = vals.map_err(|e| Error::InvalidArgument(format!("line {}: {e}", lineno + 1)))?;
            if vals.len() != space.dim + 1 {
                return Err(Error::InvalidArgument(format!("line {}: expected {} columns", lineno + 1, space.dim + 1)));
            }
            weights.push(vals[0]);
            points.push(space.point(&vals[1..])?);
        }
        Self::new(space, points, weights, Provenance::Synthetic { label: "csv".into() })
    }

    /// Merges exactly repeated points.
    fn compacted(self) -> Self {
        let mut index: HashMap<[u64; 3], usize> = HashMap::new();
        let mut points = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (p, w) in self.points.iter().zip(&self.weights) {
            let key = [p.coords[0].to_bits(), p.coords[1].to_bits(), p.coords[2].to_bits()];
            match index.get(&key) {
                Some(&i) => weights[i] += w,
                None => {
                    index.insert(key, points.len());
                    points.push(*p);
                    weights.push(*w);
                }
            }
        }
        let total = stats::pairwise_sum(&weights);
        let weights = weights.iter().map(|w| w / total).collect();
        Self { space: self.space, points, weights, provenance: self.provenance }
    }
}

/// Uniform weights on `x_{burn_in}, …, x_{n-1}` of an orbit of length `n`.
/// Repeated points are merged, so a fixed point gives a single atom.
pub fn empirical_from_orbit(orbit: &Orbit, burn_in: usize) -> Result<EmpiricalMeasure> {
    let n = orbit.len();
    if n <= burn_in {
        return Err(Error::InvalidArgument(format!("orbit length {n} does not exceed burn-in {burn_in}")));
    }
    let pts = &orbit.points[burn_in..n];
    let space = space_of(&orbit.base);
    let w = 1.0 / pts.len() as f64;
    let m = EmpiricalMeasure {
        space,
        points: pts.to_vec(),
        weights: vec![w; pts.len()],
        provenance: Provenance::Orbit { map: None, burn_in },
    };
    Ok(m.compacted())
}

/// `(1/n) Σ_{i<n} δ_{f^i x}` without the cocycle bookkeeping of [`Orbit`].
pub fn orbit_measure(map: &Diffeomorphism, x: &Point, n: usize) -> Result<EmpiricalMeasure> {
    map.space.check(x)?;
    let mut pts = map.orbit_points(x, n);
    pts.pop();
    let w = 1.0 / n as f64;
    let m = EmpiricalMeasure {
        space: map.space.clone(),
        weights: vec![w; pts.len()],
        points: pts,
        provenance: Provenance::Orbit { map: Some(map.name()), burn_in: 0 },
    };
    Ok(m.compacted())
}

fn space_of(p: &Point) -> PhaseSpace {
    match p.kind {
        SpaceKind::Torus => PhaseSpace::torus(p.dim),
        // box orbits only come from the Hénon family
        SpaceKind::Box => PhaseSpace::boxed(&[-2.0, -2.0][..p.dim.min(2)], &[2.0, 2.0][..p.dim.min(2)]),
    }
}

pub const DICTIONARY_LEN: usize = 64;

/// The fixed test-function dictionary `g_1, …, g_64` of a phase space.
#[derive(Debug, Clone)]
pub struct Dictionary {
    space: PhaseSpace,
    /// Torus: frequency vectors (each gives cos and sin). Box: Chebyshev
    /// multi-degrees.
    indices: Vec<[i64; 3]>,
    max_index: usize,
}

fn ordered_indices(d: usize, nonneg: bool, needed: usize) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    let mut radius = 1i64;
    while out.len() < needed {
        let lo = if nonneg { 0 } else { -radius };
        let mut shell = Vec::new();
        let mut k = [0i64; 3];
        let span = (radius - lo + 1) as usize;
        for idx in 0..span.pow(d as u32) {
            let mut rest = idx;
            for v in k.iter_mut().take(d) {
                *v = lo + (rest % span) as i64;
                rest /= span;
            }
            let norm = k.iter().take(d).map(|v| v.abs()).max().unwrap_or(0);
            if norm != radius {
                continue;
            }
            if !nonneg {
                // half-space: first nonzero component positive
                match k.iter().take(d).find(|v| **v != 0) {
                    Some(v) if *v > 0 => {}
                    _ => continue,
                }
            }
            shell.push(k);
        }
        shell.sort();
        out.extend(shell);
        radius += 1;
    }
    out.truncate(needed);
    out
}

impl Dictionary {
    pub fn new(space: &PhaseSpace) -> Self {
        let d = space.dim;
        let indices = match space.kind {
            SpaceKind::Torus => ordered_indices(d, false, DICTIONARY_LEN / 2),
            SpaceKind::Box => ordered_indices(d, true, DICTIONARY_LEN),
        };
        let max_index = indices.iter().flat_map(|k| k.iter().map(|v| v.unsigned_abs() as usize)).max().unwrap_or(1);
        Self { space: space.clone(), indices, max_index }
    }

    /// `(g_1(p), …, g_64(p))`.
    pub fn evaluate(&self, p: &Point) -> [f64; DICTIONARY_LEN] {
        let d = self.space.dim;
        let mut out = [0.0; DICTIONARY_LEN];
        match self.space.kind {
            SpaceKind::Torus => {
                // powers e^{2πi m x_j}, m = 0..=max_index
                let mut pw = vec![[(1.0, 0.0); 3]; self.max_index + 1];
                for j in 0..d {
                    let (s, c) = (TAU * p.coords[j]).sin_cos();
                    for m in 1..=self.max_index {
                        let (re, im) = pw[m - 1][j];
                        pw[m][j] = (re * c - im * s, re * s + im * c);
                    }
                }
                for (i, k) in self.indices.iter().enumerate() {
                    let (mut re, mut im) = (1.0, 0.0);
                    for j in 0..d {
                        let (a, mut b) = pw[k[j].unsigned_abs() as usize][j];
                        if k[j] < 0 {
                            b = -b;
                        }
                        let nr = re * a - im * b;
                        im = re * b + im * a;
                        re = nr;
                    }
                    out[2 * i] = re;
                    out[2 * i + 1] = im;
                }
            }
            SpaceKind::Box => {
                let mut cheb = vec![[0.0; 3]; self.max_index + 1];
                for j in 0..d {
                    let u = (2.0 * (p.coords[j] - self.space.lo[j]) / self.space.extent(j) - 1.0).clamp(-1.0, 1.0);
                    cheb[0][j] = 1.0;
                    if self.max_index >= 1 {
                        cheb[1][j] = u;
                    }
                    for m in 2..=self.max_index {
                        cheb[m][j] = 2.0 * u * cheb[m - 1][j] - cheb[m - 2][j];
                    }
                }
                for (i, k) in self.indices.iter().enumerate() {
                    out[i] = (0..d).map(|j| cheb[k[j] as usize][j]).product();
                }
            }
        }
        out
    }

    /// `∫ g_k dμ` for every dictionary entry.
    pub fn integrals(&self, mu: &EmpiricalMeasure) -> Result<[f64; DICTIONARY_LEN]> {
        if mu.space != self.space {
            return Err(Error::SpaceMismatch);
        }
        let mut out = [0.0; DICTIONARY_LEN];
        let rows: Vec<[f64; DICTIONARY_LEN]> = mu.points.par_iter().map(|p| self.evaluate(p)).collect();
        let mut col = vec![0.0; rows.len()];
        for (k, slot) in out.iter_mut().enumerate() {
            for (i, r) in rows.iter().enumerate() {
                col[i] = r[k] * mu.weights[i];
            }
            *slot = stats::pairwise_sum(&col);
        }
        Ok(out)
    }
}

/// `Σ_k 2^{-k} |a_k − b_k|`.
pub fn dictionary_distance(a: &[f64; DICTIONARY_LEN], b: &[f64; DICTIONARY_LEN]) -> f64 {
    let mut w = 0.5;
    let mut acc = 0.0;
    for k in 0..DICTIONARY_LEN {
        acc += w * (a[k] - b[k]).abs();
        w *= 0.5;
    }
    acc
}

/// Bounded weak-* metric from the fixed 64-function dictionary.
pub fn weak_star_distance(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.space != nu.space {
        return Err(Error::SpaceMismatch);
    }
    let dict = Dictionary::new(&mu.space);
    Ok(dictionary_distance(&dict.integrals(mu)?, &dict.integrals(nu)?))
}

/// A translated rectangular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinitePartition {
    pub space: PhaseSpace,
    pub dims: Vec<usize>,
    /// Per-axis translation in `[0, cell width)`.
    pub offset: Vec<f64>,
    pub diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ItineraryCode(pub Vec<u32>);

impl FinitePartition {
    pub fn grid(space: &PhaseSpace, dims: &[usize], offset: &[f64]) -> Result<Self> {
        let d = space.dim;
        if dims.len() != d || offset.len() != d || dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidArgument("grid needs one positive size and offset per axis".into()));
        }
        let mut diam2 = 0.0;
        for i in 0..d {
            let w = space.extent(i) / dims[i] as f64;
            if !(offset[i] >= 0.0 && offset[i] < w) {
                return Err(Error::InvalidArgument(format!("offset {} outside [0, {w})", offset[i])));
            }
            diam2 += w * w;
        }
        Ok(Self { space: space.clone(), dims: dims.to_vec(), offset: offset.to_vec(), diameter: diam2.sqrt() })
    }

    /// Grid with cells of side at most `cell` and a uniformly random offset.
    pub fn random_grid(space: &PhaseSpace, cell: f64, rng: &mut impl Rng) -> Result<Self> {
        if !(cell > 0.0) {
            return Err(Error::InvalidArgument("cell size must be positive".into()));
        }
        let dims: Vec<usize> = (0..space.dim).map(|i| (space.extent(i) / cell - 1e-9).ceil().max(1.0) as usize).collect();
        Self::random_with_dims(space, &dims, rng)
    }

    pub fn random_with_dims(space: &PhaseSpace, dims: &[usize], rng: &mut impl Rng) -> Result<Self> {
        let offset: Vec<f64> = dims
            .iter()
            .enumerate()
            .map(|(i, &n)| rng.gen::<f64>() * space.extent(i) / n as f64)
            .collect();
        Self::grid(space, dims, &offset)
    }

    pub fn trivial(space: &PhaseSpace) -> Self {
        Self::grid(space, &vec![1; space.dim], &vec![0.0; space.dim]).expect("valid trivial grid")
    }

    fn axis_cells(&self, i: usize) -> usize {
        match self.space.kind {
            SpaceKind::Torus => self.dims[i],
            SpaceKind::Box => self.dims[i] + 1,
        }
    }

    pub fn cell_count(&self) -> usize {
        (0..self.space.dim).map(|i| self.axis_cells(i)).product()
    }

    /// Cell index of `p`.
    #[inline]
    pub fn code(&self, p: &Point) -> u32 {
        let mut idx = 0usize;
        let mut radix = 1usize;
        for i in 0..self.space.dim {
            let n = self.dims[i];
            let cell = match self.space.kind {
                SpaceKind::Torus => {
                    let u = wrap(p.coords[i] - self.offset[i]);
                    ((u * n as f64) as usize).min(n - 1)
                }
                SpaceKind::Box => {
                    let w = self.space.extent(i) / n as f64;
                    let u = (p.coords[i] - self.space.lo[i] + self.offset[i]) / w;
                    (u.max(0.0) as usize).min(n)
                }
            };
            idx += cell * radix;
            radix *= self.axis_cells(i);
        }
        idx as u32
    }
}

/// `(code(p), code(f p), …, code(f^{n-1} p))`.
pub fn refine_code(partition: &FinitePartition, map: &Diffeomorphism, p: &Point, n: usize) -> Result<ItineraryCode> {
    if map.space != partition.space {
        return Err(Error::SpaceMismatch);
    }
    map.space.check(p)?;
    let mut out = Vec::with_capacity(n);
    let mut x = *p;
    for k in 0..n {
        out.push(partition.code(&x));
        if k + 1 < n {
            x = map.step(&x);
        }
    }
    Ok(ItineraryCode(out))
}

/// A partition or one of its dynamical refinements `P^n`.
#[derive(Debug, Clone, Copy)]
pub enum PartitionView<'a> {
    Grid(&'a FinitePartition),
    Refined { partition: &'a FinitePartition, map: &'a Diffeomorphism, depth: usize },
}

impl<'a> From<&'a FinitePartition> for PartitionView<'a> {
    fn from(p: &'a FinitePartition) -> Self {
        PartitionView::Grid(p)
    }
}

impl PartitionView<'_> {
    fn code(&self, p: &Point) -> Vec<u32> {
        match self {
            PartitionView::Grid(part) => vec![part.code(p)],
            PartitionView::Refined { partition, map, depth } => {
                let mut out = Vec::with_capacity(*depth);
                let mut x = *p;
                for k in 0..*depth {
                    out.push(partition.code(&x));
                    if k + 1 < *depth {
                        x = map.step(&x);
                    }
                }
                out
            }
        }
    }

    fn space(&self) -> &PhaseSpace {
        match self {
            PartitionView::Grid(p) => &p.space,
            PartitionView::Refined { partition, .. } => &partition.space,
        }
    }
}

/// `−Σ m log m` over the masses of the given labels.
pub fn label_entropy<K: Ord>(labels: impl IntoIterator<Item = (K, f64)>) -> f64 {
    let mut masses: BTreeMap<K, f64> = BTreeMap::new();
    for (k, w) in labels {
        *masses.entry(k).or_insert(0.0) += w;
    }
    let terms: Vec<f64> = masses.values().filter(|m| **m > 0.0).map(|m| -m * m.ln()).collect();
    stats::pairwise_sum(&terms).max(0.0)
}

fn codes_for<'a>(mu: &EmpiricalMeasure, view: &PartitionView<'a>) -> Result<Vec<Vec<u32>>> {
    if view.space() != &mu.space {
        return Err(Error::SpaceMismatch);
    }
    Ok(mu.points.par_iter().map(|p| view.code(p)).collect())
}

/// `H_μ(P)` in nats.
pub fn static_entropy<'a>(mu: &EmpiricalMeasure, partition: impl Into<PartitionView<'a>>) -> Result<f64> {
    let codes = codes_for(mu, &partition.into())?;
    Ok(label_entropy(codes.into_iter().zip(mu.weights.iter().copied())))
}

/// `H_μ(P | Q) = H_μ(P ∨ Q) − H_μ(Q)`.
pub fn conditional_entropy<'a, 'b>(
    mu: &EmpiricalMeasure,
    p: impl Into<PartitionView<'a>>,
    q: impl Into<PartitionView<'b>>,
) -> Result<f64> {
    let cp = codes_for(mu, &p.into())?;
    let cq = codes_for(mu, &q.into())?;
    let joint = label_entropy(cp.into_iter().zip(cq.iter().cloned()).zip(mu.weights.iter().copied()));
    let base = label_entropy(cq.into_iter().zip(mu.weights.iter().copied()));
    Ok((joint - base).max(0.0))
}

/// `R_0`: the smallest integer strictly above `log Υ`.
pub fn r_zero(upsilon: f64) -> f64 {
    upsilon.ln().floor().max(0.0) + 1.0
}

#[derive(Debug, Clone, Copy)]
pub struct DiscretizeOptions {
    /// Length of the orbit defining each point's empirical measure.
    pub orbit_len: usize,
}

impl Default for DiscretizeOptions {
    fn default() -> Self {
        Self { orbit_len: 2000 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Component {
    /// Mass of the bin.
    pub weight: f64,
    /// The input measure restricted to the bin, renormalized.
    pub measure: EmpiricalMeasure,
    /// Estimates at the bin representative.
    pub entropy: f64,
    pub lambda_plus: f64,
    #[serde(skip)]
    pub integrals: [f64; DICTIONARY_LEN],
}

/// The three discretization guarantees, each as `(observed, bound)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationChecks {
    pub weak_star: (f64, f64),
    pub entropy: (f64, f64),
    pub lambda_plus: (f64, f64),
}

impl DiscretizationChecks {
    pub fn passed(&self) -> bool {
        self.weak_star.0 <= self.weak_star.1 && self.entropy.0 <= self.entropy.1 && self.lambda_plus.0 <= self.lambda_plus.1
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Discretization {
    pub bins: usize,
    pub r0: f64,
    pub components: Vec<Component>,
    /// Mass dropped because an estimator failed.
    pub dropped_mass: f64,
    pub checks: DiscretizationChecks,
}

struct PointData {
    h: f64,
    lambda: f64,
    integrals: [f64; DICTIONARY_LEN],
}

/// Bins the support of `mu` by (entropy, `λ^+`, rounded dictionary
/// integrals) of each point's orbit-empirical measure, with `L` bins per
/// scalar axis and resolution `1/L` on the integrals.
pub fn discretize_measure<H, Lf>(
    mu: &EmpiricalMeasure,
    map: &Diffeomorphism,
    bins: usize,
    entropy_est: H,
    exponent_est: Lf,
    opts: DiscretizeOptions,
) -> Result<Discretization>
where
    H: Fn(&Point, &EmpiricalMeasure) -> Result<f64> + Sync,
    Lf: Fn(&Point, &EmpiricalMeasure) -> Result<f64> + Sync,
{
    if bins == 0 || mu.is_empty() {
        return Err(Error::InvalidArgument("need L ≥ 1 and a nonempty measure".into()));
    }
    if map.space != mu.space {
        return Err(Error::SpaceMismatch);
    }
    let d = mu.space.dim as f64;
    let r0 = r_zero(map.upsilon);
    let l = bins as f64;
    let dict = Dictionary::new(&mu.space);
    let data: Vec<Option<PointData>> = mu
        .points
        .par_iter()
        .map(|x| {
            let nu = orbit_measure(map, x, opts.orbit_len).ok()?;
            let h = entropy_est(x, &nu);
            let lam = exponent_est(x, &nu);
            match (h, lam) {
                (Ok(h), Ok(lambda)) => Some(PointData { h, lambda, integrals: dict.integrals(&nu).ok()? }),
                (h, lam) => {
                    log::warn!("dropping support point {x}: {:?} {:?}", h.err(), lam.err());
                    None
                }
            }
        })
        .collect();

    let mut dropped = Vec::new();
    let mut groups: BTreeMap<Vec<i64>, Vec<usize>> = BTreeMap::new();
    for (i, pd) in data.iter().enumerate() {
        let Some(pd) = pd else {
            dropped.push(mu.weights[i]);
            continue;
        };
        let hb = ((pd.h / (d * r0) * l).floor() as i64).clamp(0, bins as i64 - 1);
        let lb = (((pd.lambda + r0) / (2.0 * r0) * l).floor() as i64).clamp(0, bins as i64 - 1);
        let mut key = vec![hb, lb];
        key.extend(pd.integrals.iter().map(|v| (v * l).round() as i64));
        groups.entry(key).or_default().push(i);
    }
    let dropped_mass = stats::pairwise_sum(&dropped);
    let kept = 1.0 - dropped_mass;
    if !(kept > 0.0) {
        return Err(Error::Estimator("every support point failed".into()));
    }

    let mut groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups.sort_by_key(|g| g[0]);
    let mut components = Vec::with_capacity(groups.len());
    for members in &groups {
        let rep = data[members[0]].as_ref().expect("kept point");
        let w: Vec<f64> = members.iter().map(|&i| mu.weights[i]).collect();
        let mass = stats::pairwise_sum(&w);
        let measure = EmpiricalMeasure {
            space: mu.space.clone(),
            points: members.iter().map(|&i| mu.points[i]).collect(),
            weights: w.iter().map(|v| v / mass).collect(),
            provenance: Provenance::Synthetic { label: "component".into() },
        };
        components.push(Component {
            weight: mass / kept,
            measure,
            entropy: rep.h,
            lambda_plus: rep.lambda,
            integrals: rep.integrals,
        });
    }

    // reference: Σ_x w_x ν_x over kept points
    let kept_idx: Vec<usize> = (0..data.len()).filter(|&i| data[i].is_some()).collect();
    let avg = |f: &dyn Fn(&PointData) -> f64| {
        let t: Vec<f64> = kept_idx.iter().map(|&i| mu.weights[i] / kept * f(data[i].as_ref().unwrap())).collect();
        stats::pairwise_sum(&t)
    };
    let mix = |f: &dyn Fn(&Component) -> f64| {
        let t: Vec<f64> = components.iter().map(|c| c.weight * f(c)).collect();
        stats::pairwise_sum(&t)
    };
    let mut ref_int = [0.0; DICTIONARY_LEN];
    let mut mix_int = [0.0; DICTIONARY_LEN];
    for k in 0..DICTIONARY_LEN {
        ref_int[k] = avg(&|p| p.integrals[k]);
        mix_int[k] = mix(&|c| c.integrals[k]);
    }
    let checks = DiscretizationChecks {
        weak_star: (dictionary_distance(&ref_int, &mix_int), 1.0 / l),
        entropy: ((avg(&|p| p.h) - mix(&|c| c.entropy)).abs(), d * r0 / l),
        lambda_plus: ((avg(&|p| p.lambda) - mix(&|c| c.lambda_plus)).abs(), 2.0 * r0 / l),
    };
    Ok(Discretization { bins, r0, components, dropped_mass, checks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignatureClass {
    /// Exactly one positive exponent (3D) / hyperbolic saddle (2D).
    One,
    /// Two positive and one negative exponent.
    Two,
    Other,
}

/// `μ = β μ¹ + γ μ² + (1−β−γ) μ⁰`, realized as a partition of the sample.
#[derive(Debug, Clone, Serialize)]
pub struct SignatureDecomposition {
    pub beta: f64,
    pub gamma: f64,
    pub mu1: Option<EmpiricalMeasure>,
    pub mu2: Option<EmpiricalMeasure>,
    pub mu0: Option<EmpiricalMeasure>,
    pub classes: Vec<SignatureClass>,
    /// Points whose spectrum estimate failed (assigned to `μ⁰`).
    pub failures: usize,
    pub zeta: f64,
}

impl SignatureDecomposition {
    /// Reassembles the input measure from the components.
    pub fn recombine(&self) -> Result<EmpiricalMeasure> {
        let mut parts = Vec::new();
        let rest = 1.0 - self.beta - self.gamma;
        for (c, m) in [(self.beta, &self.mu1), (self.gamma, &self.mu2), (rest, &self.mu0)] {
            if let Some(m) = m {
                parts.push((c, m));
            }
        }
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("empty decomposition".into()))?.1;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut cursor = [0usize; 3];
        for class in &self.classes {
            let slot = match class {
                SignatureClass::One => 0,
                SignatureClass::Two => 1,
                SignatureClass::Other => 2,
            };
            let (coef, m) = [(self.beta, &self.mu1), (self.gamma, &self.mu2), (rest, &self.mu0)][slot];
            let m = m.as_ref().expect("class present");
            points.push(m.points[cursor[slot]]);
            weights.push(coef * m.weights[cursor[slot]]);
            cursor[slot] += 1;
        }
        Ok(EmpiricalMeasure {
            space: first.space.clone(),
            points,
            weights,
            provenance: Provenance::Synthetic { label: "recombined".into() },
        })
    }
}

pub const DEFAULT_ZETA: f64 = 0.02;

fn classify(spec: &ExponentSpectrum, zeta: f64) -> SignatureClass {
    let (pos, _zero, neg) = spec.signature(zeta);
    match spec.dim() {
        3 if pos == 1 => SignatureClass::One,
        3 if pos == 2 && neg == 1 => SignatureClass::Two,
        2 if pos == 1 && neg == 1 => SignatureClass::One,
        _ => SignatureClass::Other,
    }
}

/// Splits the sample by the spectrum of each point's own orbit. For `d = 3`
/// the classes are "one positive exponent" (`μ¹`) and "two positive, one
/// negative" (`μ²`); for `d = 2` `μ¹` collects the hyperbolic points and
/// `μ²` is always empty.
pub fn signature_decomposition<S>(
    mu: &EmpiricalMeasure,
    map: &Diffeomorphism,
    spectrum_est: S,
    zeta: f64,
) -> Result<SignatureDecomposition>
where
    S: Fn(&Diffeomorphism, &Point) -> Result<ExponentSpectrum> + Sync,
{
    let d = mu.space.dim;
    if d != 2 && d != 3 {
        return Err(Error::InvalidArgument("signature split needs d ∈ {2, 3}".into()));
    }
    if mu.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let results: Vec<Option<SignatureClass>> = mu
        .points
        .par_iter()
        .map(|p| match spectrum_est(map, p) {
            Ok(s) => Some(classify(&s, zeta)),
            Err(e) => {
                log::warn!("spectrum estimate failed at {p}: {e}");
                None
            }
        })
        .collect();
    let failures = results.iter().filter(|r| r.is_none()).count();
    let classes: Vec<SignatureClass> = results.into_iter().map(|r| r.unwrap_or(SignatureClass::Other)).collect();
    let part = |want: SignatureClass| -> (f64, Option<EmpiricalMeasure>) {
        let idx: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == want).collect();
        if idx.is_empty() {
            return (0.0, None);
        }
        let w: Vec<f64> = idx.iter().map(|&i| mu.weights[i]).collect();
        let mass = stats::pairwise_sum(&w);
        let m = EmpiricalMeasure {
            space: mu.space.clone(),
            points: idx.iter().map(|&i| mu.points[i]).collect(),
            weights: w.iter().map(|v| v / mass).collect(),
            provenance: Provenance::Synthetic { label: format!("{want:?}").to_lowercase() },
        };
        (mass, Some(m))
    };
    let (beta, mu1) = part(SignatureClass::One);
    let (gamma, mu2) = part(SignatureClass::Two);
    let (_, mu0) = part(SignatureClass::Other);
    Ok(SignatureDecomposition { beta, gamma, mu1, mu2, mu0, classes, failures, zeta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::benettin_spectrum;
    use crate::stats::stream_rng;

    fn torus_point(x: f64, y: f64) -> Point {
        PhaseSpace::torus(2).point(&[x, y]).unwrap()
    }

    #[test]
    fn orbit_measures_of_periodic_points() {
        let cat = Diffeomorphism::cat();
        let fixed = cat.iterate(&torus_point(0.0, 0.0), 50).unwrap();
        let m = empirical_from_orbit(&fixed, 5).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.weights, vec![1.0]);

        let shift = Diffeomorphism::new(crate::dynamics::MapFamily::Translation { shift: vec![0.5, 0.0] }).unwrap();
        let orb = shift.iterate(&torus_point(0.25, 0.2), 40).unwrap();
        let m = empirical_from_orbit(&orb, 0).unwrap();
        assert_eq!(m.len(), 2);
        assert!(m.weights.iter().all(|w| (w - 0.5).abs() < 1e-15));
    }

    #[test]
    fn burn_in_longer_than_orbit_is_rejected() {
        let cat = Diffeomorphism::cat();
        let orb = cat.iterate(&torus_point(0.1, 0.2), 5).unwrap();
        assert!(empirical_from_orbit(&orb, 5).is_err());
    }

    #[test]
    fn static_entropy_examples() {
        let sp = PhaseSpace::torus(2);
        let grid = FinitePartition::grid(&sp, &[2, 2], &[0.0, 0.0]).unwrap();
        let pm = EmpiricalMeasure::point_mass(sp.clone(), torus_point(0.3, 0.3)).unwrap();
        assert_eq!(static_entropy(&pm, &grid).unwrap(), 0.0);
        let pts = vec![torus_point(0.1, 0.1), torus_point(0.6, 0.1), torus_point(0.1, 0.6), torus_point(0.6, 0.6)];
        let u = EmpiricalMeasure::uniform(sp.clone(), pts.clone(), Provenance::Synthetic { label: "t".into() }).unwrap();
        assert!((static_entropy(&u, &grid).unwrap() - 4f64.ln()).abs() < 1e-15);
        let w = EmpiricalMeasure::new(sp.clone(), pts[..3].to_vec(), vec![0.5, 0.25, 0.25], Provenance::Synthetic { label: "t".into() })
            .unwrap();
        assert!((static_entropy(&w, &grid).unwrap() - 1.5 * 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn conditional_entropy_examples() {
        let sp = PhaseSpace::torus(2);
        let mut rng = stream_rng(3, 0);
        let mu = EmpiricalMeasure::volume_sample(&sp, 4096, &mut rng).unwrap();
        let fine = FinitePartition::grid(&sp, &[4, 2], &[0.0, 0.0]).unwrap();
        let coarse = FinitePartition::grid(&sp, &[2, 2], &[0.0, 0.0]).unwrap();
        let trivial = FinitePartition::trivial(&sp);
        assert!(conditional_entropy(&mu, &fine, &fine).unwrap().abs() < 1e-12);
        let h = static_entropy(&mu, &fine).unwrap();
        assert!((conditional_entropy(&mu, &fine, &trivial).unwrap() - h).abs() < 1e-12);
        // jittered grid puts exactly equal mass in each half
        assert!((conditional_entropy(&mu, &fine, &coarse).unwrap() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn refine_code_of_cat_map() {
        let sp = PhaseSpace::torus(2);
        let cat = Diffeomorphism::cat();
        let grid = FinitePartition::grid(&sp, &[2, 2], &[0.0, 0.0]).unwrap();
        let p = torus_point(0.1, 0.1);
        let code = refine_code(&grid, &cat, &p, 2).unwrap();
        assert_eq!(code.0, vec![0, grid.code(&torus_point(0.3, 0.2))]);
        assert_eq!(refine_code(&grid, &cat, &p, 1).unwrap().0, vec![grid.code(&p)]);
        let id = Diffeomorphism::identity(2);
        let c = refine_code(&grid, &id, &torus_point(0.7, 0.2), 6).unwrap();
        assert!(c.0.iter().all(|&v| v == c.0[0]));
    }

    #[test]
    fn box_partition_codes_are_total() {
        let sp = PhaseSpace::boxed(&[-2.0, -2.0], &[2.0, 2.0]);
        let mut rng = stream_rng(5, 1);
        let grid = FinitePartition::random_grid(&sp, 0.5, &mut rng).unwrap();
        for c in [[-2.0, -2.0], [2.0, 2.0], [0.0, 1.99]] {
            assert!((grid.code(&sp.point(&c).unwrap()) as usize) < grid.cell_count());
        }
    }

    #[test]
    fn dictionary_is_bounded_and_ordered() {
        let sp = PhaseSpace::torus(2);
        let dict = Dictionary::new(&sp);
        assert_eq!(dict.indices.len(), 32);
        assert_eq!(dict.indices[0][..2], [0, 1]);
        let v = dict.evaluate(&torus_point(0.0, 0.0));
        for k in 0..32 {
            assert!((v[2 * k] - 1.0).abs() < 1e-12 && v[2 * k + 1].abs() < 1e-12);
        }
        let b = Dictionary::new(&PhaseSpace::boxed(&[-1.0], &[1.0]));
        assert!(b.evaluate(&PhaseSpace::boxed(&[-1.0], &[1.0]).point(&[0.3]).unwrap()).iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn weak_star_examples() {
        let sp = PhaseSpace::torus(2);
        let a = EmpiricalMeasure::point_mass(sp.clone(), torus_point(0.2, 0.4)).unwrap();
        assert_eq!(weak_star_distance(&a, &a).unwrap(), 0.0);
        let mut last = f64::INFINITY;
        for s in [0.1, 0.05, 0.02, 0.01, 0.0] {
            let b = EmpiricalMeasure::point_mass(sp.clone(), torus_point(0.2 + s, 0.4 + s)).unwrap();
            let dist = weak_star_distance(&a, &b).unwrap();
            assert!(dist <= last);
            last = dist;
        }
        assert_eq!(last, 0.0);
        let other = EmpiricalMeasure::point_mass(PhaseSpace::torus(1), PhaseSpace::torus(1).point(&[0.1]).unwrap()).unwrap();
        assert!(weak_star_distance(&a, &other).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let sp = PhaseSpace::torus(2);
        let m = EmpiricalMeasure::new(
            sp.clone(),
            vec![torus_point(0.1, 0.2), torus_point(0.3, 0.9)],
            vec![0.25, 0.75],
            Provenance::Synthetic { label: "x".into() },
        )
        .unwrap();
        let back = EmpiricalMeasure::from_csv(sp, &m.to_csv()).unwrap();
        assert_eq!(back.points, m.points);
        assert_eq!(back.weights, m.weights);
    }

    #[test]
    fn product_map_sample_is_one_positive_class() {
        let m = Diffeomorphism::new(crate::dynamics::MapFamily::Product {
            base: Box::new(crate::dynamics::MapFamily::cat()),
            rotation: 0.1,
        })
        .unwrap();
        let mut rng = stream_rng(7, 0);
        let mu = EmpiricalMeasure::volume_sample(&m.space, 27, &mut rng).unwrap();
        let dec = signature_decomposition(&mu, &m, |f, p| benettin_spectrum(f, p, 5000), DEFAULT_ZETA).unwrap();
        assert!((dec.beta - 1.0).abs() < 1e-12 && dec.gamma == 0.0);
        let back = dec.recombine().unwrap();
        assert_eq!(back.points, mu.points);
        for (a, b) in back.weights.iter().zip(&mu.weights) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn rotations_land_in_the_remainder() {
        let m = Diffeomorphism::new(crate::dynamics::MapFamily::Translation { shift: vec![0.1, 0.2, 0.3] }).unwrap();
        let mut rng = stream_rng(8, 0);
        let mu = EmpiricalMeasure::volume_sample(&m.space, 8, &mut rng).unwrap();
        let dec = signature_decomposition(&mu, &m, |f, p| benettin_spectrum(f, p, 1000), DEFAULT_ZETA).unwrap();
        assert_eq!((dec.beta, dec.gamma), (0.0, 0.0));
        assert!(dec.mu0.is_some());
    }
}
