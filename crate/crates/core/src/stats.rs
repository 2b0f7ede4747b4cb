//! Deterministic reductions and random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dynamics::{PhaseSpace, Point, SpaceKind};

/// Pairwise (cascade) summation; the split points depend only on the
/// length, so the result is independent of thread scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

pub fn weighted_mean(xs: &[f64], w: &[f64]) -> f64 {
    let prod: Vec<f64> = xs.iter().zip(w).map(|(x, w)| x * w).collect();
    pairwise_sum(&prod) / pairwise_sum(w)
}

/// Standard error of the mean.
pub fn std_err(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    (pairwise_sum(&sq) / (n - 1) as f64 / n as f64).sqrt()
}

/// Independent stream `stream` of the generator keyed by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `n` points distributed like normalized volume on `space`.
///
/// The largest `m^d ≤ n` points form a jittered grid (one uniform point per
/// cell); the remainder are plain uniform draws.
pub fn uniform_points(space: &PhaseSpace, n: usize, rng: &mut impl Rng) -> Vec<Point> {
    let d = space.dim;
    let mut m = (n as f64).powf(1.0 / d as f64).floor() as usize;
    while (m + 1).pow(d as u32) <= n {
        m += 1;
    }
    while m > 0 && m.pow(d as u32) > n {
        m -= 1;
    }
    let cells = if m == 0 { 0 } else { m.pow(d as u32) };
    let mut out = Vec::with_capacity(n);
    let draw = |offsets: Option<[usize; 3]>, rng: &mut dyn rand::RngCore| {
        let mut c = [0.0; 3];
        for i in 0..d {
            let u: f64 = rng.gen();
            let unit = match offsets {
                Some(o) => (o[i] as f64 + u) / m as f64,
                None => u,
            };
            c[i] = space.lo[i] + unit * space.extent(i);
            if space.kind == SpaceKind::Torus && c[i] >= 1.0 {
                c[i] = 0.0;
            }
        }
        Point { coords: c, dim: d, kind: space.kind }
    };
    for idx in 0..cells {
        let mut o = [0usize; 3];
        let mut rest = idx;
        for v in o.iter_mut().take(d) {
            *v = rest % m;
            rest /= m;
        }
        out.push(draw(Some(o), rng));
    }
    for _ in cells..n {
        out.push(draw(None, rng));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 5050.0);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream_rng(7, 1).gen();
        let b: u64 = stream_rng(7, 1).gen();
        let c: u64 = stream_rng(7, 2).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn jittered_grid_fills_every_cell() {
        let space = PhaseSpace::torus(2);
        let pts = uniform_points(&space, 100, &mut stream_rng(3, 0));
        let mut seen = [false; 100];
        for p in &pts {
            let i = (p.coords[0] * 10.0) as usize + 10 * (p.coords[1] * 10.0) as usize;
            seen[i] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
