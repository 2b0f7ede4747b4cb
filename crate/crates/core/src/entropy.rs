//! Entropy rates from itinerary statistics, the entropy upper bounds with
//! their explicit error terms, Ruelle residuals, Young's dimension formula
//! and the perturbation (semicontinuity) experiment.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Diffeomorphism, PhaseSpace, Point};
use crate::error::{Error, Result};
use crate::lyapunov::{self, benettin_spectrum, ExponentSpectrum};
use crate::measures::{self, EmpiricalMeasure, FinitePartition, Provenance, SignatureClass};
use crate::reparam;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Every window lying inside an orbit.
    #[default]
    Sliding,
    /// Orbits are read as cyclic words, which makes the window
    /// distribution exactly shift-invariant.
    Cyclic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyOptions {
    /// A depth is trusted while `distinct itineraries ≤ windows / guard_ratio`.
    pub guard_ratio: f64,
    pub mode: WindowMode,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        Self { guard_ratio: 10.0, mode: WindowMode::Sliding }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSummary {
    pub dims: Vec<usize>,
    pub offset: Vec<f64>,
    pub diameter: f64,
    pub cells: usize,
}

impl From<&FinitePartition> for PartitionSummary {
    fn from(p: &FinitePartition) -> Self {
        Self { dims: p.dims.clone(), offset: p.offset.clone(), diameter: p.diameter, cells: p.cell_count() }
    }
}

/// Entropy-rate estimate of a partition along an orbit ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub partition: PartitionSummary,
    pub requested_depth: usize,
    /// Deepest depth passing the undersampling guard.
    pub max_trusted_depth: usize,
    /// `H(P^n)` for `n = 1..=max_trusted_depth`.
    pub block_entropy: Vec<f64>,
    /// `H(P^n)/n`.
    pub per_depth: Vec<f64>,
    /// `H(P^n) − H(P^{n−1})`, with `H(P^0) = 0`.
    pub increments: Vec<f64>,
    pub distinct: Vec<usize>,
    pub windows: Vec<usize>,
    /// Minimum increment over the tail window `[n/2, n]`.
    pub rate: f64,
    pub std_err: f64,
}

struct Blocks {
    h: Vec<f64>,
    distinct: Vec<usize>,
    windows: Vec<usize>,
    /// Number of leading depths that passed the guard.
    trusted: usize,
}

fn window_count(len: usize, n: usize, mode: WindowMode) -> usize {
    match mode {
        WindowMode::Sliding => (len + 1).saturating_sub(n),
        WindowMode::Cyclic => {
            if len == 0 {
                0
            } else {
                len
            }
        }
    }
}

/// Block entropies `H(P^n)` of the empirical window distribution, with
/// itineraries interned incrementally as `(id at depth n−1, next cell)`.
fn block_entropies(codes: &[&[u32]], weights: &[f64], n_max: usize, mode: WindowMode, guard: f64) -> Blocks {
    let mut ids: Vec<Vec<u32>> = codes.iter().map(|c| vec![u32::MAX; c.len()]).collect();
    let mut out = Blocks { h: Vec::new(), distinct: Vec::new(), windows: Vec::new(), trusted: 0 };
    let mut passing = true;
    for n in 1..=n_max {
        let mut intern: HashMap<u64, u32> = HashMap::new();
        let mut masses: Vec<f64> = Vec::new();
        let mut total_windows = 0usize;
        let mut live_weight = 0.0;
        for (o, c) in codes.iter().enumerate() {
            let len = c.len();
            let count = window_count(len, n, mode);
            if count == 0 {
                continue;
            }
            total_windows += count;
            live_weight += weights[o];
            let w = weights[o] / count as f64;
            let row = &mut ids[o];
            for s in 0..count {
                let cell = c[(s + n - 1) % len];
                let key = ((row[s] as u64) << 32) | cell as u64;
                let next = intern.len() as u32;
                let id = *intern.entry(key).or_insert(next);
                if id as usize == masses.len() {
                    masses.push(0.0);
                }
                masses[id as usize] += w;
                row[s] = id;
            }
        }
        if total_windows == 0 || !(live_weight > 0.0) {
            break;
        }
        let terms: Vec<f64> = masses
            .iter()
            .map(|m| m / live_weight)
            .filter(|m| *m > 0.0)
            .map(|m| -m * m.ln())
            .collect();
        out.h.push(stats::pairwise_sum(&terms).max(0.0));
        out.distinct.push(intern.len());
        out.windows.push(total_windows);
        if passing && (intern.len() as f64) <= total_windows as f64 / guard {
            out.trusted = n;
        } else {
            passing = false;
        }
    }
    out
}

fn tail_rate(increments: &[f64], cells: usize) -> f64 {
    let n = increments.len();
    let start = n.div_ceil(2).max(1);
    let m = increments[start - 1..].iter().copied().fold(f64::INFINITY, f64::min);
    m.clamp(0.0, (cells as f64).ln())
}

fn increments_of(h: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    h.iter()
        .map(|&v| {
            let d = v - prev;
            prev = v;
            d
        })
        .collect()
}

/// `h_μ(f, P)` from the windows of an orbit ensemble.
pub fn partition_entropy_rate(
    ensemble: &[Vec<Point>],
    weights: Option<&[f64]>,
    partition: &FinitePartition,
    n_max: usize,
) -> Result<EntropyEstimate> {
    partition_entropy_rate_with(ensemble, weights, partition, n_max, EntropyOptions::default())
}

pub fn partition_entropy_rate_with(
    ensemble: &[Vec<Point>],
    weights: Option<&[f64]>,
    partition: &FinitePartition,
    n_max: usize,
    opts: EntropyOptions,
) -> Result<EntropyEstimate> {
    if ensemble.is_empty() || ensemble.iter().all(|o| o.is_empty()) {
        return Err(Error::InvalidArgument("empty orbit ensemble".into()));
    }
    if n_max < 2 {
        return Err(Error::InvalidArgument("depth must be at least 2".into()));
    }
    let uniform;
    let weights = match weights {
        Some(w) if w.len() == ensemble.len() => w,
        Some(_) => return Err(Error::InvalidArgument("one weight per orbit".into())),
        None => {
            uniform = vec![1.0 / ensemble.len() as f64; ensemble.len()];
            &uniform[..]
        }
    };
    for o in ensemble {
        if let Some(p) = o.first() {
            partition.space.check(p)?;
        }
    }
    let codes: Vec<Vec<u32>> = ensemble.par_iter().map(|o| o.iter().map(|p| partition.code(p)).collect()).collect();
    let refs: Vec<&[u32]> = codes.iter().map(|c| &c[..]).collect();
    let blocks = block_entropies(&refs, weights, n_max, opts.mode, opts.guard_ratio);
    if blocks.trusted == 0 {
        return Err(Error::Undersampled { max_trusted_depth: 0 });
    }
    let depth = blocks.trusted;
    let block_entropy = blocks.h[..depth].to_vec();
    let increments = increments_of(&block_entropy);
    let cells = partition.cell_count();
    let rate = tail_rate(&increments, cells);
    let std_err = batch_std_err(&refs, weights, depth, opts.mode);
    Ok(EntropyEstimate {
        partition: partition.into(),
        requested_depth: n_max,
        max_trusted_depth: depth,
        per_depth: block_entropy.iter().enumerate().map(|(i, h)| h / (i + 1) as f64).collect(),
        block_entropy,
        increments,
        distinct: blocks.distinct[..depth].to_vec(),
        windows: blocks.windows[..depth].to_vec(),
        rate,
        std_err,
    })
}

/// Spread of the final increment across ten batches of the ensemble (or
/// ten segments of a single orbit).
fn batch_std_err(codes: &[&[u32]], weights: &[f64], depth: usize, mode: WindowMode) -> f64 {
    const BATCHES: usize = 10;
    let mut batches: Vec<(Vec<&[u32]>, Vec<f64>)> = Vec::new();
    if codes.len() >= 2 {
        let b = BATCHES.min(codes.len());
        for k in 0..b {
            let idx: Vec<usize> = (k..codes.len()).step_by(b).collect();
            batches.push((idx.iter().map(|&i| codes[i]).collect(), idx.iter().map(|&i| weights[i]).collect()));
        }
    } else {
        let c = codes[0];
        let chunk = c.len() / BATCHES;
        if chunk <= depth {
            return f64::NAN;
        }
        for k in 0..BATCHES {
            batches.push((vec![&c[k * chunk..(k + 1) * chunk]], vec![1.0]));
        }
    }
    let vals: Vec<f64> = batches
        .par_iter()
        .filter_map(|(c, w)| {
            let b = block_entropies(c, w, depth, mode, f64::INFINITY);
            (b.h.len() == depth).then(|| {
                let prev = if depth >= 2 { b.h[depth - 2] } else { 0.0 };
                b.h[depth - 1] - prev
            })
        })
        .collect();
    stats::std_err(&vals)
}

/// Orbits of length `len` (points `x, f x, …, f^{len−1} x`) from each start.
pub fn orbit_ensemble(map: &Diffeomorphism, starts: &[Point], len: usize) -> Vec<Vec<Point>> {
    starts
        .par_iter()
        .map(|p| {
            let mut o = map.orbit_points(p, len.saturating_sub(1));
            o.truncate(len);
            o
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Bound through `f^q` and `λ^+`.
    Forward,
    /// Bound through `f^{−q}` and `λ^−`.
    Inverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundOptions {
    pub tolerance: f64,
    /// Fail instead of flagging when the partition is coarser than `ε_{Υ,q}`.
    pub strict: bool,
    /// Windows per support point for the partition entropy.
    pub entropy_orbit_len: usize,
    pub depth: usize,
    /// Support points used for the exponent integrals (evenly strided).
    pub exponent_points: usize,
    /// Cap on the depth of the `λ^±` running infimum.
    pub max_lambda_depth: usize,
    pub benettin_steps: usize,
    pub precondition_points: usize,
    pub zeta: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            tolerance: 0.05,
            strict: false,
            entropy_orbit_len: 12,
            depth: 12,
            exponent_points: 256,
            max_lambda_depth: 256,
            benettin_steps: 2000,
            precondition_points: 8,
            zeta: measures::DEFAULT_ZETA,
        }
    }
}

/// Every term of the entropy upper bound, as named scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub direction: Direction,
    pub q: usize,
    pub r: u32,
    pub alpha: f64,
    pub upsilon: f64,
    pub c: f64,
    /// `h_μ(f, Q)`.
    pub partition_entropy: f64,
    /// `(1/q) ∫ log ||D_x f^{±q}|| dμ`.
    pub block_average: f64,
    /// `λ^+(μ, f)` forward, `λ^+(μ, f^{−1}) = −λ^−(μ, f)` inverse.
    pub lambda: f64,
    pub bracket: f64,
    pub extra: f64,
    pub regularity_factor: f64,
    pub constant_term: f64,
    pub total: f64,
    /// Best lower estimate of `h_μ(f)` (finest trusted partition).
    pub lhs: f64,
    pub tolerance: f64,
    pub bound_holds: bool,
    pub epsilon: f64,
    pub diameter: f64,
    pub diameter_admissible: bool,
    pub warnings: Vec<String>,
}

impl BoundReport {
    pub fn reconstruct(&self) -> f64 {
        self.partition_entropy + self.regularity_factor * (self.bracket + self.extra) + self.constant_term
    }

    /// Same report with a different bracket value, total and verdict recomputed.
    pub fn with_bracket(&self, bracket: f64) -> BoundReport {
        let mut r = self.clone();
        r.bracket = bracket;
        r.total = r.reconstruct();
        r.bound_holds = r.lhs <= r.total + r.tolerance;
        r
    }
}

/// `log(2qΥC)/q`.
pub fn constant_term(q: usize, upsilon: f64, c: f64) -> f64 {
    (2.0 * q as f64 * upsilon * c).ln() / q as f64
}

/// `ε_{Υ,q} = min{1, r(M)} / (2(Ω + 2))` with `Ω = Υ^q`.
pub fn epsilon_upsilon_q(space: &PhaseSpace, upsilon: f64, q: usize) -> f64 {
    let log_omega = q as f64 * upsilon.max(1.0).ln();
    // log(Ω + 2) without overflow
    let log_den = log_omega.max(2f64.ln()) + (-(log_omega - 2f64.ln()).abs()).exp().ln_1p();
    let rm = space.injectivity_radius().min(1.0);
    (rm.ln() - 2f64.ln() - log_den).exp()
}

/// `C_{r,α}` from the calibrated reparametrization constants.
pub fn default_c(r: u32, alpha: f64) -> f64 {
    reparam::StepConstants::calibrated(r, alpha).c_r_alpha(r, alpha)
}

fn subsample(mu: &EmpiricalMeasure, k: usize) -> EmpiricalMeasure {
    if mu.len() <= k {
        return mu.clone();
    }
    let stride = mu.len() as f64 / k as f64;
    let idx: Vec<usize> = (0..k).map(|i| (i as f64 * stride) as usize).collect();
    let w: Vec<f64> = idx.iter().map(|&i| mu.weights[i]).collect();
    let total = stats::pairwise_sum(&w);
    EmpiricalMeasure {
        space: mu.space,
        points: idx.iter().map(|&i| mu.points[i]).collect(),
        weights: w.iter().map(|v| v / total).collect(),
        provenance: mu.provenance.clone(),
    }
}

fn check_signature(f: &Diffeomorphism, mu: &EmpiricalMeasure, direction: Direction, opts: &BoundOptions) -> Result<()> {
    let probe = subsample(mu, opts.precondition_points.max(1));
    let counts: Vec<Result<(usize, usize, usize)>> =
        probe.points.par_iter().map(|p| benettin_spectrum(f, p, opts.benettin_steps).map(|s| s.signature(opts.zeta))).collect();
    for (p, c) in probe.points.iter().zip(counts) {
        let (pos, _, neg) = c?;
        let bad = match direction {
            Direction::Forward => pos > 1,
            Direction::Inverse => neg > 1,
        };
        if bad {
            return Err(Error::Signature(format!(
                "{pos} positive and {neg} negative exponents at {p}; at most one {} allowed",
                if direction == Direction::Forward { "positive" } else { "negative" }
            )));
        }
    }
    Ok(())
}

/// Forward bound through `f^q`, entropy from orbits started on `μ`'s support.
pub fn theorem_bound(
    f: &Diffeomorphism,
    mu: &EmpiricalMeasure,
    partition: &FinitePartition,
    q: usize,
    c: f64,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    let ensemble = orbit_ensemble(f, &mu.points, opts.entropy_orbit_len);
    bound_from_ensemble(Direction::Forward, f, mu, &ensemble, Some(&mu.weights), partition, q, c, opts)
}

/// Mirror of [`theorem_bound`] through `f^{−q}` and `λ^−`.
pub fn inverse_theorem_bound(
    f: &Diffeomorphism,
    mu: &EmpiricalMeasure,
    partition: &FinitePartition,
    q: usize,
    c: f64,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    let ensemble = orbit_ensemble(f, &mu.points, opts.entropy_orbit_len);
    bound_from_ensemble(Direction::Inverse, f, mu, &ensemble, Some(&mu.weights), partition, q, c, opts)
}

/// Bound evaluation with a caller-supplied orbit ensemble for the entropy
/// terms. `h_μ(f^{−1}, Q) = h_μ(f, Q)`, so both directions code forward orbits.
#[allow(clippy::too_many_arguments)]
pub fn bound_from_ensemble(
    direction: Direction,
    f: &Diffeomorphism,
    mu: &EmpiricalMeasure,
    ensemble: &[Vec<Point>],
    ensemble_weights: Option<&[f64]>,
    partition: &FinitePartition,
    q: usize,
    c: f64,
    opts: &BoundOptions,
) -> Result<BoundReport> {
    if q == 0 || !(c >= 1.0) {
        return Err(Error::InvalidArgument("need q ≥ 1 and C ≥ 1".into()));
    }
    if f.space != mu.space || f.space != partition.space {
        return Err(Error::SpaceMismatch);
    }
    let epsilon = epsilon_upsilon_q(&f.space, f.upsilon, q);
    let diameter_admissible = partition.diameter < epsilon;
    let mut warnings = Vec::new();
    if !diameter_admissible {
        if opts.strict {
            return Err(Error::PartitionTooCoarse { diameter: partition.diameter, epsilon });
        }
        warnings.push(format!("partition diameter {:.3e} ≥ ε_(Υ,q) = {epsilon:.3e}", partition.diameter));
    }
    check_signature(f, mu, direction, opts)?;

    let h = partition_entropy_rate(ensemble, ensemble_weights, partition, opts.depth)?;
    let finer_dims: Vec<usize> = partition.dims.iter().map(|n| 2 * n).collect();
    // the offset reduced mod the finer width keeps every original cut
    let finer_offset: Vec<f64> = (0..finer_dims.len())
        .map(|i| partition.offset[i] % (partition.space.extent(i) / finer_dims[i] as f64))
        .collect();
    let finer = FinitePartition::grid(&partition.space, &finer_dims, &finer_offset)?;
    let lhs = match partition_entropy_rate(ensemble, ensemble_weights, &finer, opts.depth) {
        Ok(e) => e.rate.max(h.rate),
        Err(Error::Undersampled { .. }) => {
            warnings.push("refined partition undersampled; LHS uses Q only".into());
            h.rate
        }
        Err(e) => return Err(e),
    };

    let sample = subsample(mu, opts.exponent_points);
    let report = match direction {
        Direction::Forward => lyapunov::block_norms_with(f, &sample, q, opts.max_lambda_depth)?,
        Direction::Inverse => lyapunov::block_norms_with(&f.inverse()?, &sample, q, opts.max_lambda_depth)?,
    };
    let (r, alpha) = (f.regularity.r, f.regularity.alpha);
    let mut out = BoundReport {
        direction,
        q,
        r,
        alpha,
        upsilon: f.upsilon,
        c,
        partition_entropy: h.rate,
        block_average: report.block_log,
        lambda: report.lambda_plus,
        bracket: report.block_log - report.lambda_plus,
        extra: 1.0 / q as f64,
        regularity_factor: 1.0 / (r as f64 - 1.0 + alpha),
        constant_term: constant_term(q, f.upsilon, c),
        total: 0.0,
        lhs,
        tolerance: opts.tolerance,
        bound_holds: false,
        epsilon,
        diameter: partition.diameter,
        diameter_admissible,
        warnings,
    };
    out.total = out.reconstruct();
    out.bound_holds = out.lhs <= out.total + out.tolerance;
    Ok(out)
}

/// `λ_Σ^+ − h`: nonnegative up to estimator noise.
pub fn ruelle_check(h: &EntropyEstimate, s: &ExponentSpectrum) -> f64 {
    s.lambda_sigma_plus() - h.rate
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YoungDimension {
    pub value: f64,
    pub clamped: bool,
}

/// `h (1/λ^+ − 1/λ^−)`, clamped to `[0, 2]`.
pub fn young_dimension(h: f64, lambda_plus: f64, lambda_minus: f64) -> Result<YoungDimension> {
    if !(lambda_plus > 0.0) || !(lambda_minus < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need λ^+ > 0 > λ^−, got {lambda_plus} and {lambda_minus}"
        )));
    }
    let raw = h / lambda_plus - h / lambda_minus;
    let value = raw.clamp(0.0, 2.0);
    Ok(YoungDimension { value, clamped: value != raw })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureSource {
    /// Orbits start on a stratified volume sample.
    Volume,
    /// Orbits are consecutive segments of one orbit of `start`.
    Orbit { start: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub t_schedule: Vec<f64>,
    pub source: MeasureSource,
    pub orbits: usize,
    pub orbit_len: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub grid_dims: Vec<usize>,
    pub depth: usize,
    /// Support points for spectra, signatures and `λ_Σ^+`.
    pub exponent_points: usize,
    pub sigma_schedule: Vec<usize>,
    pub benettin_steps: usize,
    pub q: usize,
    pub c: Option<f64>,
    pub zeta: f64,
    pub bounds: bool,
    pub max_lambda_depth: usize,
    pub entropy_tolerance: f64,
    pub lambda_tolerance: f64,
    pub ruelle_tolerance: f64,
    pub tail_threshold: f64,
    pub guard_ratio: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            t_schedule: vec![0.1, 0.05, 0.02, 0.01, 0.0],
            source: MeasureSource::Volume,
            orbits: 40,
            orbit_len: 20_000,
            burn_in: 0,
            seed: 1,
            grid_dims: vec![10, 10],
            depth: 12,
            exponent_points: 32,
            sigma_schedule: vec![8, 16, 32, 64],
            benettin_steps: 2000,
            q: 50,
            c: None,
            zeta: measures::DEFAULT_ZETA,
            bounds: true,
            max_lambda_depth: 256,
            entropy_tolerance: 0.05,
            lambda_tolerance: 0.02,
            ruelle_tolerance: 0.05,
            tail_threshold: 0.02,
            guard_ratio: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub t: f64,
    pub map: String,
    pub weak_star_to_base: Option<f64>,
    pub lambda_sigma_plus: Option<f64>,
    pub lambda_plus: Option<f64>,
    pub lambda_minus: Option<f64>,
    pub lambda_center: Option<f64>,
    pub entropy: Option<f64>,
    pub entropy_std_err: Option<f64>,
    pub entropy_depth: Option<usize>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    /// Mean `λ^+` over the `μ¹` class.
    pub component_lambda_plus: Option<f64>,
    pub ruelle_residual: Option<f64>,
    pub bound: Option<BoundReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub inequality: String,
    pub margin: f64,
    pub passed: bool,
    /// No rows were eligible; counts as a pass.
    pub vacuous: bool,
}

impl Verdict {
    fn new(name: &str, inequality: &str, margin: Option<f64>) -> Self {
        match margin {
            Some(m) => Self { name: name.into(), inequality: inequality.into(), margin: m, passed: m >= 0.0, vacuous: false },
            None => Self { name: name.into(), inequality: inequality.into(), margin: 0.0, passed: true, vacuous: true },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentTable {
    pub rows: Vec<ExperimentRow>,
    pub verdicts: Vec<Verdict>,
    pub partition: PartitionSummary,
}

impl ExperimentTable {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }

    pub fn warning_count(&self) -> usize {
        self.rows.iter().map(|r| r.warnings.len()).sum()
    }
}

struct RowInputs<'a> {
    cfg: &'a ExperimentConfig,
    partition: &'a FinitePartition,
    starts: Option<&'a [Point]>,
}

fn sample_starts(space: &PhaseSpace, cfg: &ExperimentConfig) -> Vec<Point> {
    let mut rng = stats::stream_rng(cfg.seed, 0);
    stats::uniform_points(space, cfg.orbits, &mut rng)
}

fn run_row(map: &Diffeomorphism, t: f64, inp: &RowInputs<'_>) -> (ExperimentRow, Option<EmpiricalMeasure>) {
    let cfg = inp.cfg;
    let mut row = ExperimentRow {
        t,
        map: map.name(),
        weak_star_to_base: None,
        lambda_sigma_plus: None,
        lambda_plus: None,
        lambda_minus: None,
        lambda_center: None,
        entropy: None,
        entropy_std_err: None,
        entropy_depth: None,
        beta: None,
        gamma: None,
        component_lambda_plus: None,
        ruelle_residual: None,
        bound: None,
        warnings: Vec::new(),
    };
    let ensemble: Vec<Vec<Point>> = match (&cfg.source, inp.starts) {
        (MeasureSource::Volume, Some(starts)) => {
            let burned: Vec<Point> = starts.iter().map(|p| map.orbit_points(p, cfg.burn_in)[cfg.burn_in]).collect();
            orbit_ensemble(map, &burned, cfg.orbit_len)
        }
        (MeasureSource::Orbit { start }, _) => match map.space.point(start) {
            Ok(p) => {
                let total = cfg.burn_in + cfg.orbits * cfg.orbit_len;
                let pts = map.orbit_points(&p, total);
                if pts.iter().any(|x| !map.space.contains(x.coords())) {
                    row.warnings.push("orbit left the phase space".into());
                    return (row, None);
                }
                pts[cfg.burn_in..cfg.burn_in + cfg.orbits * cfg.orbit_len].chunks(cfg.orbit_len).map(|c| c.to_vec()).collect()
            }
            Err(e) => {
                row.warnings.push(format!("start point: {e}"));
                return (row, None);
            }
        },
        (MeasureSource::Volume, None) => unreachable!("volume starts are drawn up front"),
    };
    let all: Vec<Point> = ensemble.iter().flatten().copied().collect();
    let mu = match EmpiricalMeasure::uniform(map.space, all, Provenance::Orbit { map: Some(map.name()), burn_in: cfg.burn_in }) {
        Ok(m) => m,
        Err(e) => {
            row.warnings.push(format!("measure: {e}"));
            return (row, None);
        }
    };
    let sample = subsample(&mu, cfg.exponent_points.max(1));

    let eopts = EntropyOptions { guard_ratio: cfg.guard_ratio, mode: WindowMode::Sliding };
    let entropy = match partition_entropy_rate_with(&ensemble, None, inp.partition, cfg.depth, eopts) {
        Ok(e) => {
            row.entropy = Some(e.rate);
            row.entropy_std_err = Some(e.std_err);
            row.entropy_depth = Some(e.max_trusted_depth);
            Some(e)
        }
        Err(e) => {
            row.warnings.push(format!("entropy: {e}"));
            None
        }
    };

    match lyapunov::lambda_sigma_plus(map, &sample, &cfg.sigma_schedule) {
        Ok(est) => {
            row.lambda_sigma_plus = Some(est.estimate);
            row.warnings.extend(est.warnings);
        }
        Err(e) => row.warnings.push(format!("lambda_sigma_plus: {e}")),
    }

    let spectra: Vec<Result<ExponentSpectrum>> =
        sample.points.par_iter().map(|p| benettin_spectrum(map, p, cfg.benettin_steps)).collect();
    let good: Vec<(usize, &ExponentSpectrum)> =
        spectra.iter().enumerate().filter_map(|(i, s)| s.as_ref().ok().map(|s| (i, s))).collect();
    if good.len() < spectra.len() {
        row.warnings.push(format!("{} spectrum estimates failed", spectra.len() - good.len()));
    }
    if !good.is_empty() {
        let d = map.dim();
        let mut mean = vec![0.0; d];
        let mut wsum = 0.0;
        for (i, s) in &good {
            for k in 0..d {
                mean[k] += sample.weights[*i] * s.exponents[k];
            }
            wsum += sample.weights[*i];
        }
        mean.iter_mut().for_each(|v| *v /= wsum);
        let spec = ExponentSpectrum::from_exponents(mean, lyapunov::DEFAULT_CLUSTER_GAP);
        row.lambda_plus = Some(spec.exponents[0]);
        row.lambda_minus = Some(spec.exponents[d - 1]);
        if d == 3 {
            row.lambda_center = lyapunov::lambda_center(&spec).ok();
        }
        if let Some(e) = &entropy {
            let sigma = row.lambda_sigma_plus.unwrap_or_else(|| spec.lambda_sigma_plus());
            row.ruelle_residual = Some(sigma - e.rate);
        }
        if d == 2 || d == 3 {
            let classes: Vec<(f64, SignatureClass, f64)> = good
                .iter()
                .map(|(i, s)| {
                    let (pos, _, neg) = s.signature(cfg.zeta);
                    let class = match (d, pos, neg) {
                        (3, 1, _) | (2, 1, 1) => SignatureClass::One,
                        (3, 2, 1) => SignatureClass::Two,
                        _ => SignatureClass::Other,
                    };
                    (sample.weights[*i], class, s.exponents[0])
                })
                .collect();
            let mass = |c: SignatureClass| classes.iter().filter(|x| x.1 == c).map(|x| x.0).fold(0.0, |a, w| a + w) / wsum;
            let beta = mass(SignatureClass::One);
            row.beta = Some(beta);
            row.gamma = Some(mass(SignatureClass::Two));
            if beta > 0.0 {
                let (num, den) = classes
                    .iter()
                    .filter(|x| x.1 == SignatureClass::One)
                    .fold((0.0, 0.0), |(a, b), x| (a + x.0 * x.2, b + x.0));
                row.component_lambda_plus = Some(num / den);
            }
        }
    }

    if cfg.bounds {
        let c = cfg.c.unwrap_or_else(|| default_c(map.regularity.r, map.regularity.alpha));
        let bopts = BoundOptions {
            depth: cfg.depth,
            exponent_points: cfg.exponent_points,
            benettin_steps: cfg.benettin_steps,
            max_lambda_depth: cfg.max_lambda_depth,
            zeta: cfg.zeta,
            ..BoundOptions::default()
        };
        match bound_from_ensemble(Direction::Forward, map, &mu, &ensemble, None, inp.partition, cfg.q, c, &bopts) {
            Ok(b) => {
                row.warnings.extend(b.warnings.iter().cloned());
                row.bound = Some(b);
            }
            Err(e) => row.warnings.push(format!("bound: {e}")),
        }
    }
    (row, Some(mu))
}

/// Runs every `t` of the schedule on `family(t)` and compares the tail of
/// the schedule against `t = 0`.
pub fn semicontinuity_experiment<F>(family: F, cfg: &ExperimentConfig) -> Result<ExperimentTable>
where
    F: Fn(f64) -> Result<Diffeomorphism> + Sync,
{
    if cfg.t_schedule.is_empty() || cfg.orbits == 0 || cfg.orbit_len == 0 {
        return Err(Error::InvalidArgument("empty schedule or sample".into()));
    }
    let base = family(0.0)?;
    if cfg.grid_dims.len() != base.dim() {
        return Err(Error::InvalidArgument(format!("grid needs {} sizes", base.dim())));
    }
    let mut rng = stats::stream_rng(cfg.seed, 1);
    let partition = FinitePartition::random_with_dims(&base.space, &cfg.grid_dims, &mut rng)?;
    let starts = matches!(cfg.source, MeasureSource::Volume).then(|| sample_starts(&base.space, cfg));
    let inputs = RowInputs { cfg, partition: &partition, starts: starts.as_deref() };

    let mut ts = cfg.t_schedule.clone();
    let has_zero = ts.iter().any(|t| *t == 0.0);
    if !has_zero {
        ts.push(0.0);
    }
    let results: Vec<(ExperimentRow, Option<EmpiricalMeasure>)> = ts
        .par_iter()
        .map(|&t| match family(t) {
            Ok(map) => run_row(&map, t, &inputs),
            Err(e) => {
                let mut row = run_row_failed(t);
                row.warnings.push(format!("family: {e}"));
                (row, None)
            }
        })
        .collect();
    let base_idx = ts.iter().position(|t| *t == 0.0).expect("t = 0 present");
    let base_mu = results[base_idx].1.clone();
    let mut rows: Vec<ExperimentRow> = results
        .into_iter()
        .map(|(mut row, mu)| {
            if let (Some(a), Some(b)) = (&mu, &base_mu) {
                row.weak_star_to_base = measures::weak_star_distance(a, b).ok();
            }
            row
        })
        .collect();
    let base_row = rows[base_idx].clone();
    if !has_zero {
        rows.pop();
    }
    let verdicts = verdicts(&rows, &base_row, cfg);
    Ok(ExperimentTable { rows, verdicts, partition: (&partition).into() })
}

fn run_row_failed(t: f64) -> ExperimentRow {
    ExperimentRow {
        t,
        map: String::new(),
        weak_star_to_base: None,
        lambda_sigma_plus: None,
        lambda_plus: None,
        lambda_minus: None,
        lambda_center: None,
        entropy: None,
        entropy_std_err: None,
        entropy_depth: None,
        beta: None,
        gamma: None,
        component_lambda_plus: None,
        ruelle_residual: None,
        bound: None,
        warnings: Vec::new(),
    }
}

fn min_margin(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut out: Option<f64> = None;
    for v in values {
        let v = v.unwrap_or(f64::NEG_INFINITY);
        out = Some(out.map_or(v, |m: f64| m.min(v)));
    }
    out
}

/// Tail and Ruelle verdicts of `rows` against the `t = 0` row.
pub fn verdicts(rows: &[ExperimentRow], base: &ExperimentRow, cfg: &ExperimentConfig) -> Vec<Verdict> {
    let tail: Vec<&ExperimentRow> = rows.iter().filter(|r| r.t.abs() <= cfg.tail_threshold).collect();
    let mut out = Vec::new();
    let h0 = base.entropy;
    out.push(Verdict::new(
        "entropy_semicontinuity",
        &format!("h_t <= h_0 + {} for |t| <= {}", cfg.entropy_tolerance, cfg.tail_threshold),
        min_margin(tail.iter().map(|r| Some(h0? + cfg.entropy_tolerance - r.entropy?))),
    ));
    let s0 = base.lambda_sigma_plus;
    out.push(Verdict::new(
        "lambda_sigma_continuity",
        &format!("|lambda_sigma_t - lambda_sigma_0| <= {} for |t| <= {}", cfg.lambda_tolerance, cfg.tail_threshold),
        min_margin(tail.iter().map(|r| Some(cfg.lambda_tolerance - (r.lambda_sigma_plus? - s0?).abs()))),
    ));
    out.push(Verdict::new(
        "ruelle",
        &format!("lambda_sigma - h >= -{}", cfg.ruelle_tolerance),
        min_margin(rows.iter().filter(|r| r.entropy.is_some()).map(|r| Some(r.ruelle_residual? + cfg.ruelle_tolerance))),
    ));
    let comp = if base.beta.unwrap_or(0.0) > 0.0 {
        min_margin(
            tail.iter()
                .filter(|r| r.beta.unwrap_or(0.0) > 0.0)
                .map(|r| Some(cfg.entropy_tolerance - (r.component_lambda_plus? - base.component_lambda_plus?).abs())),
        )
    } else {
        None
    };
    out.push(Verdict::new(
        "component_exponents",
        &format!("|lambda+(mu1_t) - lambda+(mu1_0)| <= {} when beta > 0", cfg.entropy_tolerance),
        comp,
    ));
    if cfg.bounds {
        out.push(Verdict::new(
            "entropy_bound",
            "lhs <= rhs + tolerance",
            min_margin(rows.iter().map(|r| r.bound.as_ref().map(|b| b.total + b.tolerance - b.lhs))),
        ));
    }
    out
}
