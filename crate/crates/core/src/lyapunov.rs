//! Lyapunov spectra, exterior-power exponent sums and derived scalars.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Diffeomorphism, Point};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat3, TangentMatrix};
use crate::measures::EmpiricalMeasure;
use crate::stats;

/// Exponents closer than this are reported as one multiple exponent.
pub const DEFAULT_CLUSTER_GAP: f64 = 0.05;

/// Operator norm of `∧^k m`: the product of the `k` largest singular values.
pub fn exterior_norm(m: &TangentMatrix, k: usize) -> Result<f64> {
    let d = m.dim();
    if k == 0 || k > d {
        return Err(Error::InvalidArgument(format!("grade {k} outside 1..={d}")));
    }
    Ok(m.singular_values().iter().take(k).product())
}

fn binom(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// k-th compound of a `d ≤ 3` matrix in fixed storage.
fn compound3(m: &Mat3, d: usize, k: usize) -> Mat3 {
    if k == 1 {
        return *m;
    }
    let c = linalg::compound(&linalg::to_dmatrix(m, d), k);
    linalg::from_dmatrix(&c)
}

/// Products `∧^k D_x f^n`, `k = 1..=d`, each kept as a unit-max-entry
/// matrix times `e^{log_scale}`.
#[derive(Debug, Clone)]
pub struct ExteriorCocycle {
    d: usize,
    mats: Vec<(Mat3, f64, usize)>,
}

impl ExteriorCocycle {
    pub fn new(d: usize) -> Self {
        let mats = (1..=d)
            .map(|k| {
                let size = binom(d, k);
                let mut id = [[0.0; 3]; 3];
                for (i, row) in id.iter_mut().enumerate().take(size) {
                    row[i] = 1.0;
                }
                (id, 0.0, size)
            })
            .collect();
        Self { d, mats }
    }

    /// Left-multiplies every grade by the compound of `jac`.
    pub fn push(&mut self, jac: &Mat3) {
        for (k, (m, log_scale, size)) in self.mats.iter_mut().enumerate() {
            let c = compound3(jac, self.d, k + 1);
            let mut prod = linalg::mul3(&c, m, *size);
            let s = prod.iter().take(*size).flat_map(|r| r.iter().take(*size)).fold(0.0f64, |a, v| a.max(v.abs()));
            if s > 0.0 {
                for row in prod.iter_mut().take(*size) {
                    for v in row.iter_mut().take(*size) {
                        *v /= s;
                    }
                }
                *log_scale += s.ln();
            }
            *m = prod;
        }
    }

    /// `log ||∧^k||` for `k = 1..=d`.
    pub fn log_norms(&self) -> Vec<f64> {
        self.mats.iter().map(|(m, s, size)| s + linalg::op_norm(m, *size).ln()).collect()
    }

    /// `max_k log⁺ ||∧^k||`.
    pub fn phi(&self) -> f64 {
        self.log_norms().into_iter().fold(0.0, |acc, v| acc.max(v.max(0.0)))
    }
}

/// `φ_n(p) = max_{1≤k≤d} log⁺ ||∧^k D_p f^n||`, computed without forming
/// the raw product.
pub fn phi_n(map: &Diffeomorphism, p: &Point, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidArgument("phi_n needs n ≥ 1".into()));
    }
    map.space.check(p)?;
    Ok(phi_along(map, p, &[n])[0])
}

/// `φ_n(p)` for every depth in the (increasing) schedule, in one pass.
pub fn phi_along(map: &Diffeomorphism, p: &Point, schedule: &[usize]) -> Vec<f64> {
    let mut cocycle = ExteriorCocycle::new(map.dim());
    let mut out = Vec::with_capacity(schedule.len());
    let mut x = *p;
    let mut done = 0;
    for &n in schedule {
        while done < n {
            cocycle.push(&map.jacobian_raw(&x));
            x = map.step(&x);
            done += 1;
        }
        out.push(cocycle.phi());
    }
    out
}

/// Kingman-type estimate `inf_n (1/n) ∫ φ_n dμ` over a depth schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubadditiveEstimate {
    pub depths: Vec<usize>,
    /// `a_n = (1/n) ∫ φ_n dμ`.
    pub averages: Vec<f64>,
    pub std_errs: Vec<f64>,
    pub running_inf: Vec<f64>,
    pub estimate: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

const DRIFT_TOL: f64 = 1e-2;

fn check_schedule(schedule: &[usize]) -> Result<()> {
    if schedule.is_empty() || schedule[0] == 0 || schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("depth schedule must be positive and increasing".into()));
    }
    Ok(())
}

fn ensemble<F>(sample: &EmpiricalMeasure, per_point: F) -> Vec<Vec<f64>>
where
    F: Fn(&Point) -> Vec<f64> + Sync,
{
    sample.points.par_iter().map(|p| per_point(p)).collect()
}

fn weighted_columns(rows: &[Vec<f64>], weights: &[f64], col: usize) -> (f64, f64) {
    let xs: Vec<f64> = rows.iter().map(|r| r[col]).collect();
    let wx: Vec<f64> = xs.iter().zip(weights).map(|(x, w)| x * w).collect();
    let m = stats::pairwise_sum(&wx);
    (m, stats::std_err(&xs))
}

/// Estimate of `λ_Σ^+(μ, f)` from the exterior-power subadditive formula.
pub fn lambda_sigma_plus(
    map: &Diffeomorphism,
    sample: &EmpiricalMeasure,
    schedule: &[usize],
) -> Result<SubadditiveEstimate> {
    check_schedule(schedule)?;
    if sample.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let rows = ensemble(sample, |p| phi_along(map, p, schedule));
    let mut averages = Vec::new();
    let mut std_errs = Vec::new();
    for (i, &n) in schedule.iter().enumerate() {
        let (m, se) = weighted_columns(&rows, &sample.weights, i);
        averages.push(m / n as f64);
        std_errs.push(se / n as f64);
    }
    Ok(finish_estimate(schedule.to_vec(), averages, std_errs))
}

fn finish_estimate(depths: Vec<usize>, averages: Vec<f64>, std_errs: Vec<f64>) -> SubadditiveEstimate {
    let mut running_inf = Vec::with_capacity(averages.len());
    let mut inf = f64::INFINITY;
    for &a in &averages {
        inf = inf.min(a);
        running_inf.push(inf);
    }
    debug_assert!(running_inf.windows(2).all(|w| w[1] <= w[0]));
    let mut warnings = Vec::new();
    let ups = averages.windows(2).any(|w| w[1] > w[0] + DRIFT_TOL);
    let downs = averages.windows(2).any(|w| w[1] < w[0] - DRIFT_TOL);
    if ups && downs {
        let msg = "ensemble average drifts both ways across depths; sample may not be invariant".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let converged = running_inf.len() >= 2 && {
        let k = running_inf.len();
        (running_inf[k - 2] - running_inf[k - 1]).abs() <= DRIFT_TOL
    };
    SubadditiveEstimate { estimate: inf, depths, averages, std_errs, running_inf, converged, warnings }
}

/// Ordered Lyapunov exponents (nats per iterate) with cluster multiplicities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentSpectrum {
    /// `d` values, descending.
    pub exponents: Vec<f64>,
    /// Sizes of the clusters of `exponents`, in order; they sum to `d`.
    pub multiplicities: Vec<usize>,
    pub steps: usize,
    /// Time average of `log |det Df|` along the orbit used.
    pub log_det_mean: f64,
}

impl ExponentSpectrum {
    pub fn from_exponents(mut exponents: Vec<f64>, cluster_gap: f64) -> Self {
        exponents.sort_by(|a, b| b.total_cmp(a));
        let mut multiplicities = Vec::new();
        let mut run = 0usize;
        for i in 0..exponents.len() {
            if i > 0 && exponents[i - 1] - exponents[i] > cluster_gap {
                multiplicities.push(run);
                run = 0;
            }
            run += 1;
        }
        if run > 0 {
            multiplicities.push(run);
        }
        let log_det_mean = exponents.iter().sum();
        Self { exponents, multiplicities, steps: 0, log_det_mean }
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    /// Distinct exponents (cluster means) with multiplicities.
    pub fn distinct(&self) -> Vec<(f64, usize)> {
        let mut out = Vec::new();
        let mut start = 0;
        for &m in &self.multiplicities {
            let slice = &self.exponents[start..start + m];
            out.push((slice.iter().sum::<f64>() / m as f64, m));
            start += m;
        }
        out
    }

    pub fn lambda_plus(&self) -> f64 {
        self.exponents.first().copied().unwrap_or(0.0).max(0.0)
    }

    pub fn lambda_minus(&self) -> f64 {
        self.exponents.last().copied().unwrap_or(0.0).min(0.0)
    }

    pub fn lambda_sigma_plus(&self) -> f64 {
        self.exponents.iter().map(|v| v.max(0.0)).sum()
    }

    pub fn lambda_sigma_minus(&self) -> f64 {
        self.exponents.iter().map(|v| v.min(0.0)).sum()
    }

    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }

    /// Exponents above / below `±zeta`, counted with multiplicity.
    pub fn signature(&self, zeta: f64) -> (usize, usize, usize) {
        let pos = self.exponents.iter().filter(|&&v| v > zeta).count();
        let neg = self.exponents.iter().filter(|&&v| v < -zeta).count();
        (pos, self.dim() - pos - neg, neg)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenettinOptions {
    pub cluster_gap: f64,
}

impl Default for BenettinOptions {
    fn default() -> Self {
        Self { cluster_gap: DEFAULT_CLUSTER_GAP }
    }
}

/// Modified Gram–Schmidt with one re-orthogonalization pass. Returns the
/// orthonormal frame and the (positive) diagonal of R.
fn mgs(a: &Mat3, d: usize) -> Option<(Mat3, [f64; 3])> {
    let mut q = [[0.0; 3]; 3];
    let mut diag = [0.0; 3];
    for j in 0..d {
        let mut v = [a[0][j], a[1][j], a[2][j]];
        let mut rjj = 0.0;
        for _pass in 0..2 {
            for k in 0..j {
                let dot: f64 = (0..d).map(|i| q[i][k] * v[i]).sum();
                for i in 0..d {
                    v[i] -= dot * q[i][k];
                }
            }
        }
        for &vi in v.iter().take(d) {
            rjj += vi * vi;
        }
        let rjj = rjj.sqrt();
        if !(rjj > 1e-300) || !rjj.is_finite() {
            return None;
        }
        for i in 0..d {
            q[i][j] = v[i] / rjj;
        }
        diag[j] = rjj;
    }
    Some((q, diag))
}

pub fn benettin_spectrum(map: &Diffeomorphism, p: &Point, n: usize) -> Result<ExponentSpectrum> {
    benettin_spectrum_with(map, p, n, BenettinOptions::default())
}

/// QR (Benettin) estimate of the full spectrum along the orbit of `p`.
pub fn benettin_spectrum_with(
    map: &Diffeomorphism,
    p: &Point,
    n: usize,
    opts: BenettinOptions,
) -> Result<ExponentSpectrum> {
    if n < 100 {
        return Err(Error::InvalidArgument("Benettin estimate needs n ≥ 100".into()));
    }
    map.space.check(p)?;
    let (sums, log_det) = benettin_raw(map, p, n)?;
    let exps: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let mut spec = ExponentSpectrum::from_exponents(exps, opts.cluster_gap);
    spec.steps = n;
    spec.log_det_mean = log_det / n as f64;
    Ok(spec)
}

fn benettin_raw(map: &Diffeomorphism, p: &Point, n: usize) -> Result<(Vec<f64>, f64)> {
    let d = map.dim();
    let mut q: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut sums = vec![0.0; d];
    let mut log_det = Vec::with_capacity(n);
    let mut x = *p;
    for k in 0..n {
        let j = map.jacobian_raw(&x);
        let a = linalg::mul3(&j, &q, d);
        let (qn, diag) = mgs(&a, d).ok_or(Error::DegenerateQr(k))?;
        for i in 0..d {
            sums[i] += diag[i].ln();
        }
        log_det.push(diag.iter().take(d).map(|v| v.ln()).sum::<f64>());
        q = qn;
        x = map.step(&x);
    }
    Ok((sums, stats::pairwise_sum(&log_det)))
}

/// `|Σ λ_i − ∫ log|det Df| dμ|`.
pub fn jacobian_identity_residual(
    spectrum: &ExponentSpectrum,
    map: &Diffeomorphism,
    sample: &EmpiricalMeasure,
) -> f64 {
    let d = map.dim();
    let logs: Vec<f64> = sample
        .points
        .par_iter()
        .zip(sample.weights.par_iter())
        .map(|(p, w)| w * linalg::to_dmatrix(&map.jacobian_raw(p), d).determinant().abs().ln())
        .collect();
    (spectrum.sum() - stats::pairwise_sum(&logs)).abs()
}

/// Middle exponent of a three-dimensional spectrum. When the spectrum is
/// hyperbolic at both ends this is `lim (1/n) log Jac(D f^n) − λ^+ − λ^-`.
pub fn lambda_center(spectrum: &ExponentSpectrum) -> Result<f64> {
    if spectrum.dim() != 3 {
        return Err(Error::InvalidArgument("centre exponent needs d = 3".into()));
    }
    Ok(spectrum.exponents[1])
}

/// Per-depth `(1/n) ∫ log⁺ ||D f^n|| dμ` and, when asked, the plain-log
/// average at one extra block length.
fn top_norm_averages(
    map: &Diffeomorphism,
    sample: &EmpiricalMeasure,
    depths: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let d = map.dim();
    let rows = ensemble(sample, |p| {
        let mut out = Vec::with_capacity(2 * depths.len());
        let mut m = crate::dynamics::ScaledMatrix::identity(d);
        let mut x = *p;
        let mut done = 0;
        for &n in depths {
            while done < n {
                m.left_mul(&linalg::to_dmatrix(&map.jacobian_raw(&x), d));
                x = map.step(&x);
                done += 1;
            }
            let l = m.log_norm();
            out.push(l.max(0.0));
            out.push(l);
        }
        out
    });
    let plus = (0..depths.len()).map(|i| weighted_columns(&rows, &sample.weights, 2 * i).0 / depths[i] as f64).collect();
    let plain =
        (0..depths.len()).map(|i| weighted_columns(&rows, &sample.weights, 2 * i + 1).0 / depths[i] as f64).collect();
    (plus, plain)
}

fn gap_schedule(q: usize, max_depth: usize) -> Vec<usize> {
    let cap = max_depth.max(q);
    let mut s: Vec<usize> = (0..=8).map(|i| 1usize << i).filter(|&n| n <= cap).collect();
    while *s.last().unwrap() < 2 * q && s.last().unwrap() * 2 <= cap {
        let next = s.last().unwrap() * 2;
        s.push(next);
    }
    if !s.contains(&q) {
        s.push(q);
        s.sort_unstable();
    }
    s
}

/// Block averages of `log‖Df^q‖` next to the exponent they approximate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockNormReport {
    pub q: usize,
    /// `(1/q) ∫ log⁺ ||D f^q|| dμ`.
    pub block_plus: f64,
    /// `(1/q) ∫ log ||D f^q|| dμ`.
    pub block_log: f64,
    /// Running-infimum estimate of `λ^+(μ, f)`.
    pub lambda_plus: f64,
}

impl BlockNormReport {
    pub fn gap(&self) -> f64 {
        self.block_plus - self.lambda_plus
    }
}

pub fn block_norms(map: &Diffeomorphism, sample: &EmpiricalMeasure, q: usize) -> Result<BlockNormReport> {
    block_norms_with(map, sample, q, usize::MAX)
}

/// As [`block_norms`], with the `λ^+` depth schedule capped at `max_depth`
/// (never below `q`). Needed where long orbits lose accuracy, e.g. the
/// inverse of a dissipative map.
pub fn block_norms_with(
    map: &Diffeomorphism,
    sample: &EmpiricalMeasure,
    q: usize,
    max_depth: usize,
) -> Result<BlockNormReport> {
    if q == 0 {
        return Err(Error::InvalidArgument("block length must be ≥ 1".into()));
    }
    if sample.is_empty() {
        return Err(Error::InvalidArgument("empty sample".into()));
    }
    let depths = gap_schedule(q, max_depth);
    let (plus, plain) = top_norm_averages(map, sample, &depths);
    let idx = depths.iter().position(|&n| n == q).expect("q in schedule");
    Ok(BlockNormReport {
        q,
        block_plus: plus[idx],
        block_log: plain[idx],
        lambda_plus: plus.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// `(1/q) ∫ log⁺ ||D f^q|| dμ − λ^+(μ, f)`.
pub fn exponent_quantity_gap(map: &Diffeomorphism, sample: &EmpiricalMeasure, q: usize) -> Result<f64> {
    Ok(block_norms(map, sample, q)?.gap())
}

/// One JSON row of spectrum output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumRow {
    pub scenario: String,
    pub t: f64,
    pub depth: usize,
    pub lambda_i: Vec<f64>,
    pub lambda_sigma_plus: f64,
    pub residuals: BTreeMap<String, f64>,
}

impl SpectrumRow {
    pub fn new(scenario: &str, t: f64, spectrum: &ExponentSpectrum) -> Self {
        Self {
            scenario: scenario.to_string(),
            t,
            depth: spectrum.steps,
            lambda_i: spectrum.exponents.clone(),
            lambda_sigma_plus: spectrum.lambda_sigma_plus(),
            residuals: BTreeMap::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::MapFamily;
    use nalgebra::DMatrix;

    fn golden() -> f64 {
        ((3.0 + 5f64.sqrt()) / 2.0).ln()
    }

    #[test]
    fn exterior_norm_examples() {
        let d = TangentMatrix(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 1.0])));
        assert!((exterior_norm(&d, 2).unwrap() - 6.0).abs() < 1e-12);
        let id = TangentMatrix::identity(3);
        for k in 1..=3 {
            assert!((exterior_norm(&id, k).unwrap() - 1.0).abs() < 1e-12);
        }
        let cat = TangentMatrix::from_rows(&[&[2.0, 1.0], &[1.0, 1.0]]);
        assert!((exterior_norm(&cat, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!(exterior_norm(&cat, 3).is_err());
    }

    #[test]
    fn phi_of_identity_vanishes() {
        let id = Diffeomorphism::identity(3);
        let p = id.space.point(&[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(phi_n(&id, &p, 17).unwrap(), 0.0);
    }

    #[test]
    fn phi_of_cat_is_linear_in_n() {
        let cat = Diffeomorphism::cat();
        let p = cat.space.point(&[0.3, 0.6]).unwrap();
        let sv = TangentMatrix::from_rows(&[&[2.0, 1.0], &[1.0, 1.0]]).norm().ln();
        assert!((phi_n(&cat, &p, 1).unwrap() - sv).abs() < 1e-12);
        for n in [5, 40, 300] {
            assert!((phi_n(&cat, &p, n).unwrap() - n as f64 * golden()).abs() < 1.0);
        }
    }

    #[test]
    fn spectrum_of_identity_is_zero() {
        let id = Diffeomorphism::identity(2);
        let s = benettin_spectrum(&id, &id.space.point(&[0.5, 0.5]).unwrap(), 200).unwrap();
        assert!(s.exponents.iter().all(|v| v.abs() < 1e-15));
        assert_eq!(s.multiplicities, vec![2]);
    }

    #[test]
    fn integrable_standard_map_has_zero_exponents() {
        let m = Diffeomorphism::standard(0.0);
        let s = benettin_spectrum(&m, &m.space.point(&[0.2, 0.3]).unwrap(), 20_000).unwrap();
        assert!(s.exponents.iter().all(|v| v.abs() < 1e-2), "{:?}", s.exponents);
    }

    #[test]
    fn short_orbits_are_rejected() {
        let cat = Diffeomorphism::cat();
        assert!(benettin_spectrum(&cat, &cat.space.point(&[0.1, 0.1]).unwrap(), 50).is_err());
    }

    #[test]
    fn centre_exponent_is_middle_entry() {
        let s = ExponentSpectrum::from_exponents(vec![1.0, 0.3, -1.3], 0.05);
        assert_eq!(lambda_center(&s).unwrap(), 0.3);
        let s = ExponentSpectrum::from_exponents(vec![0.5, -0.2, -0.9], 0.05);
        assert_eq!(lambda_center(&s).unwrap(), -0.2);
        let s2 = ExponentSpectrum::from_exponents(vec![0.5, -0.5], 0.05);
        assert!(lambda_center(&s2).is_err());
    }

    #[test]
    fn multiplicities_cluster_close_exponents() {
        let s = ExponentSpectrum::from_exponents(vec![0.01, 0.5, -0.02], 0.05);
        assert_eq!(s.exponents, vec![0.5, 0.01, -0.02]);
        assert_eq!(s.multiplicities, vec![1, 2]);
        assert!(s.lambda_sigma_plus() >= s.lambda_plus());
    }

    #[test]
    fn product_map_centre_exponent_vanishes() {
        let m = Diffeomorphism::new(MapFamily::Product { base: Box::new(MapFamily::cat()), rotation: 0.1 }).unwrap();
        let s = benettin_spectrum(&m, &m.space.point(&[0.13, 0.71, 0.4]).unwrap(), 5000).unwrap();
        assert!(lambda_center(&s).unwrap().abs() < 1e-2);
    }

    #[test]
    fn spectrum_row_serializes() {
        let s = ExponentSpectrum::from_exponents(vec![0.9, -0.9], 0.05);
        let row = SpectrumRow::new("cat", 0.0, &s);
        let json = serde_json::to_string(&row).unwrap();
        assert!(json.contains("\"lambda_sigma_plus\":0.9"));
    }
}
