//! Iterated reparametrization along an orbit: covers of `σ_* ∩ B_n(y, ε)`
//! and their growth rate.
//!
//! The curve is followed in the first-order chart of `y`'s orbit: the
//! surviving union is the segment `δ + W u`, `u ∈ [−1, 1]`, and every member
//! of the cover maps to a segment of half-vector `w`.

use serde::{Deserialize, Serialize};

use super::curve::{AffineMap, Curve, ParamCurve, Power, Verdict};
use super::step::{epsilon_admissible, reparametrize_step, StepConstants};
use crate::dynamics::{Diffeomorphism, Point};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CoverMode {
    /// Run the subdivision step at every level.
    #[default]
    Construction,
    /// Skip the step when the image of a member is already strongly ε-bounded.
    Economical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct BowenOptions {
    pub mode: CoverMode,
    /// Constants of the step; calibrated values when absent.
    pub constants: Option<StepConstants>,
    /// Length `c < q` of the initial block; chosen from the orbit when absent.
    pub offset: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    /// Time at the end of the level.
    pub time: usize,
    pub length: usize,
    pub log_count: f64,
    /// `log` of the number of children per member.
    pub log_f: f64,
    pub chi_plus: i64,
    pub chi: i64,
    /// `log ‖D f^length‖` at the level's base point.
    pub log_norm: f64,
    /// `log (‖D f^length w‖ / ‖w‖)` along the member direction.
    pub log_rate: f64,
    /// Surviving fraction of the union parameter.
    pub survival: f64,
    /// `log ‖w‖` after the level.
    pub log_member: f64,
    /// Affine map selecting the representative child.
    pub theta: AffineMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowenCover {
    pub map: String,
    pub n: usize,
    pub q: usize,
    pub offset: usize,
    pub epsilon: f64,
    pub r: u32,
    pub alpha: f64,
    pub upsilon: f64,
    pub mode: CoverMode,
    pub constants: StepConstants,
    pub levels: Vec<LevelRecord>,
    pub log_count: f64,
    /// `log` of the representative member's contraction.
    pub log_contraction: f64,
    /// `max_{j<n} log ‖D(f^j∘σ∘γ)‖` for the representative member.
    pub item2_log_max: f64,
}

impl BowenCover {
    /// `(time, log count)` per level.
    pub fn history(&self) -> Vec<(usize, f64)> {
        self.levels.iter().map(|l| (l.time, l.log_count)).collect()
    }

    /// Tail levels used for rates: the full-length levels in the second half.
    fn tail(&self) -> &[LevelRecord] {
        let full: usize = if self.offset > 0 { 1 } else { 0 };
        let levels = &self.levels[full.min(self.levels.len())..];
        &levels[levels.len() / 2..]
    }

    pub fn growth(&self) -> GrowthReport {
        let hist = self.history();
        let rate = growth_rate(&hist[hist.len().saturating_sub(self.tail().len() + 1)..]);
        let naive = naive_rate(&hist);
        let tail = self.tail();
        let q = self.q as f64;
        let ra = self.r as f64 - 1.0 + self.alpha;
        let c = self.constants.c_r_alpha(self.r, self.alpha);
        let log_term = (2.0 * q * self.upsilon * c).ln() / q;
        let m = tail.len().max(1) as f64;
        let gap = tail.iter().map(|l| (l.chi_plus - l.chi) as f64).sum::<f64>() / m;
        let a_q = tail.iter().map(|l| l.log_norm).sum::<f64>() / m / q;
        let lam = tail.iter().map(|l| l.log_rate).sum::<f64>() / m / q;
        GrowthReport {
            q: self.q,
            rate,
            naive,
            chi_ceiling: gap / (ra * q) + log_term,
            formula_ceiling: (a_q - lam + 1.0 / q) / ra + log_term,
        }
    }

    /// The representative member, composed from the per-level maps.
    pub fn representative(&self) -> AffineMap {
        self.levels.iter().fold(AffineMap::identity(), |acc, l| acc.compose(&l.theta))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub q: usize,
    /// Slope of `log |Γ_n|` over the tail.
    pub rate: f64,
    /// `max (1/n) log |Γ_n|` over the tail.
    pub naive: f64,
    /// Ceiling from the recorded per-level classes.
    pub chi_ceiling: f64,
    /// Ceiling from the block average of `log ‖Df^q‖` and the curve rate.
    pub formula_ceiling: f64,
}

/// Slope of `log count` against time between the first and last entries.
pub fn growth_rate(history: &[(usize, f64)]) -> f64 {
    match history {
        [] => 0.0,
        [(t, l)] => {
            if *t == 0 {
                0.0
            } else {
                l / *t as f64
            }
        }
        [first, .., last] => (last.1 - first.1) / (last.0 - first.0) as f64,
    }
}

/// `max (1/n) log count` over the second half of the history.
pub fn naive_rate(history: &[(usize, f64)]) -> f64 {
    history[history.len() / 2..]
        .iter()
        .filter(|(t, _)| *t > 0)
        .map(|(t, l)| l / *t as f64)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn vec_of(v: &[f64; 3]) -> f64 {
    linalg::vec_norm(v)
}

fn add(a: &[f64; 3], b: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

fn scale(a: &[f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// `{u ∈ [−1, 1] : |p + u v| < ε}`.
fn survival_window(p: &[f64; 3], v: &[f64; 3], eps: f64) -> Option<(f64, f64)> {
    let vv = dot(v, v);
    if vv == 0.0 {
        return (vec_of(p) < eps).then_some((-1.0, 1.0));
    }
    let center = -dot(p, v) / vv;
    let disc = center * center - (dot(p, p) - eps * eps) / vv;
    if disc <= 0.0 {
        return None;
    }
    let half = disc.sqrt();
    let (lo, hi) = ((center - half).max(-1.0), (center + half).min(1.0));
    (lo < hi).then_some((lo, hi))
}

/// `log`-space count of children meeting a window of relative size `frac`.
fn log_survivors(log_total: f64, frac: f64) -> f64 {
    let x = log_total + frac.ln();
    let kept = if x > 30.0 { x } else { (x.exp().ceil() + 1.0).ln() };
    kept.min(log_total)
}

fn identity3() -> Mat3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

/// `D f^len` along the orbit from `orbit[start]`.
fn block_jacobian(f: &Diffeomorphism, orbit: &[Point], start: usize, len: usize) -> Mat3 {
    let d = f.dim();
    let mut m = identity3();
    for p in &orbit[start..start + len] {
        m = linalg::mul3(&f.jacobian_raw(p), &m, d);
    }
    m
}

/// `c ∈ [0, q)` minimizing the average `log ‖D f^q‖` over blocks starting at `c + jq`.
fn choose_offset(f: &Diffeomorphism, orbit: &[Point], n: usize, q: usize) -> usize {
    let d = f.dim();
    let mut best = (f64::INFINITY, 0);
    for c in 0..q.min(n) {
        let m = (n - c) / q;
        if m == 0 {
            continue;
        }
        let avg = (0..m).map(|j| linalg::op_norm(&block_jacobian(f, orbit, c + j * q, q), d).ln()).sum::<f64>() / m as f64;
        if avg < best.0 - 1e-12 {
            best = (avg, c);
        }
    }
    best.1
}

/// Cover of the part of `σ` that stays `ε`-close to the first `n` iterates of `y`.
pub fn bowen_cover(
    f: &Diffeomorphism,
    sigma: &ParamCurve,
    y: &Point,
    n: usize,
    q: usize,
    epsilon: f64,
    opts: &BowenOptions,
) -> Result<BowenCover> {
    if q == 0 || n < q {
        return Err(Error::InvalidArgument(format!("need 1 ≤ q ≤ n, got q = {q}, n = {n}")));
    }
    f.space.check(y)?;
    let (r, alpha) = (sigma.r, sigma.alpha);
    let cert = sigma.certify(r, alpha, Some(epsilon));
    if cert.verdict != Verdict::StronglyBounded {
        return Err(Error::NotStronglyBounded(epsilon));
    }
    let admissible = epsilon_admissible(&Power { map: f, q });
    if epsilon >= admissible {
        return Err(Error::EpsilonTooLarge { epsilon, epsilon_omega: admissible });
    }
    let constants = opts.constants.unwrap_or_else(|| StepConstants::calibrated(r, alpha));
    let d = f.dim();
    let orbit = f.orbit_points(y, n);
    let offset = match opts.offset {
        Some(c) if c < q => c,
        Some(c) => return Err(Error::InvalidArgument(format!("offset {c} must be below q = {q}"))),
        None => choose_offset(f, &orbit, n, q),
    };

    let jets0 = sigma.jets(0.0);
    let mut delta = f.space.displacement(y, &sigma.point(0.0));
    let mut union_w = [jets0[0].c[1], jets0[1].c[1], jets0[2].c[1]];
    let mut member = union_w;
    let mut log_count = 0.0;
    let mut log_contraction = 0.0;
    let mut item2 = f64::NEG_INFINITY;
    let mut prev_theta = AffineMap::identity();
    let mut levels = Vec::new();

    let mut lengths = Vec::new();
    if offset > 0 {
        lengths.push(offset);
    }
    lengths.extend(std::iter::repeat(q).take((n - offset) / q));
    let mut time = 0;
    for len in lengths {
        let base = &orbit[time];
        // item (2): derivatives of f^j along the member for j inside the level
        let mut m = identity3();
        for p in &orbit[time..time + len] {
            item2 = item2.max(vec_of(&linalg::apply3(&m, &member, d)).ln());
            m = linalg::mul3(&f.jacobian_raw(p), &m, d);
        }
        let a = m;
        let log_norm = linalg::op_norm(&a, d).ln();
        let image = linalg::apply3(&a, &member, d);
        let log_rate = vec_of(&image).ln() - vec_of(&member).ln();
        let (chi_plus, chi) = (log_norm.ceil() as i64, log_rate.ceil() as i64);

        let (log_f, theta) = if opts.mode == CoverMode::Economical && vec_of(&image) <= epsilon {
            (0.0, AffineMap::identity())
        } else {
            let x = f.space.point(&add(&base.coords, &delta, 1.0)[..d])?;
            let seg = ParamCurve::segment(&x, &member[..d], r, alpha)?;
            let fam = reparametrize_step(&Power { map: f, q: len }, &seg, chi_plus, chi.min(chi_plus), epsilon, &constants)?;
            if fam.is_empty() {
                return Err(Error::Estimator("reparametrization step returned no members".into()));
            }
            let theta = fam.member(fam.len() / 2).expect("nonempty family");
            // members are bounded, not strongly ε-bounded; cut them down to speed ε
            let speed = vec_of(&image) * theta.b.abs();
            let cuts = if speed > epsilon { (speed / epsilon * (1.0 + 1e-12)).ceil() } else { 1.0 };
            let theta = theta.compose(&AffineMap { a: 1.0 / cuts - 1.0, b: 1.0 / cuts });
            (fam.log_len() + cuts.ln(), theta)
        };

        let composed = prev_theta.compose(&theta);
        assert_eq!(composed.b, prev_theta.b * theta.b, "affine composition must multiply contractions");
        prev_theta = theta;
        log_contraction += theta.b.abs().ln();

        let a_delta = linalg::apply3(&a, &delta, d);
        let a_w = linalg::apply3(&a, &union_w, d);
        let (survival, window) = match survival_window(&a_delta, &a_w, epsilon) {
            Some((lo, hi)) => ((hi - lo) / 2.0, (lo, hi)),
            None => (0.0, (0.0, 0.0)),
        };
        log_count = log_survivors(log_count + log_f, survival);
        let mid = 0.5 * (window.0 + window.1);
        delta = add(&a_delta, &a_w, mid);
        union_w = scale(&a_w, survival);
        member = scale(&image, theta.b.abs());
        time += len;
        levels.push(LevelRecord {
            time,
            length: len,
            log_count,
            log_f,
            chi_plus,
            chi,
            log_norm,
            log_rate,
            survival,
            log_member: vec_of(&member).ln(),
            theta,
        });
    }

    Ok(BowenCover {
        map: f.name(),
        n,
        q,
        offset,
        epsilon,
        r,
        alpha,
        upsilon: f.upsilon,
        mode: opts.mode,
        constants,
        levels,
        log_count,
        log_contraction,
        item2_log_max: item2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::PhaseSpace;

    #[test]
    fn geometric_counts_give_log_ratio_over_q() {
        let q = 10;
        let hist: Vec<(usize, f64)> = (1..=8).map(|m| (m * q, 2f64.ln() + m as f64 * 7f64.ln())).collect();
        assert!((growth_rate(&hist) - 7f64.ln() / q as f64).abs() < 1e-12);
        let flat: Vec<(usize, f64)> = (1..=8).map(|m| (m * q, 3f64.ln())).collect();
        assert_eq!(growth_rate(&flat), 0.0);
    }

    #[test]
    fn survival_window_solves_the_ball_condition() {
        let (lo, hi) = survival_window(&[0.0, 0.0, 0.0], &[4.0, 0.0, 0.0], 1.0).unwrap();
        assert!((lo + 0.25).abs() < 1e-15 && (hi - 0.25).abs() < 1e-15);
        assert!(survival_window(&[2.0, 0.0, 0.0], &[0.0, 1.0, 0.0], 1.0).is_none());
    }

    #[test]
    fn identity_cover_is_constant() {
        let id = Diffeomorphism::identity(2);
        let y = PhaseSpace::torus(2).point(&[0.4, 0.4]).unwrap();
        let s = ParamCurve::segment(&y, &[1e-3, 0.0], 1, 1.0).unwrap();
        let opts = BowenOptions { mode: CoverMode::Economical, offset: Some(0), ..Default::default() };
        let cov = bowen_cover(&id, &s, &y, 50, 5, 2e-3, &opts).unwrap();
        assert_eq!(cov.levels.len(), 10);
        assert!(cov.levels.iter().all(|l| l.log_count == 0.0));
        assert_eq!(cov.growth().rate, 0.0);
    }
}
