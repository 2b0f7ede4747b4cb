//! Univariate real polynomials with Descartes-rule root isolation.
//!
//! Isolation works on dyadic subdivisions of the search interval: each
//! candidate `[a, b]` is mapped onto `(0, 1)`, sent through the Möbius
//! transform `x ↦ 1/(x+1)` and the sign variations of the result bound the
//! number of roots inside. Zero variations prune, one variation certifies a
//! single simple root which is then bisected down to the target width.

use serde::{Deserialize, Serialize};

/// Coefficients in ascending order: `c[0] + c[1] x + ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poly {
    pub c: Vec<f64>,
}

impl Poly {
    pub fn new(mut c: Vec<f64>) -> Self {
        while c.len() > 1 && *c.last().unwrap() == 0.0 {
            c.pop();
        }
        if c.is_empty() {
            c.push(0.0);
        }
        Self { c }
    }

    pub fn zero() -> Self {
        Self { c: vec![0.0] }
    }

    pub fn constant(v: f64) -> Self {
        Self { c: vec![v] }
    }

    pub fn degree(&self) -> usize {
        self.c.len() - 1
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|&v| v == 0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
    }

    pub fn derivative(&self) -> Poly {
        if self.c.len() <= 1 {
            return Poly::zero();
        }
        Poly::new(self.c.iter().enumerate().skip(1).map(|(k, &a)| a * k as f64).collect())
    }

    pub fn nth_derivative(&self, n: usize) -> Poly {
        (0..n).fold(self.clone(), |p, _| p.derivative())
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let n = self.c.len().max(o.c.len());
        Poly::new(
            (0..n)
                .map(|i| self.c.get(i).copied().unwrap_or(0.0) + o.c.get(i).copied().unwrap_or(0.0))
                .collect(),
        )
    }

    pub fn sub(&self, o: &Poly) -> Poly {
        self.add(&o.scale(-1.0))
    }

    pub fn scale(&self, k: f64) -> Poly {
        Poly::new(self.c.iter().map(|a| a * k).collect())
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut out = vec![0.0; self.c.len() + o.c.len() - 1];
        for (i, a) in self.c.iter().enumerate() {
            for (j, b) in o.c.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly::new(out)
    }

    /// `s ↦ p(a + b s)`.
    pub fn compose_affine(&self, a: f64, b: f64) -> Poly {
        let lin = Poly::new(vec![a, b]);
        let mut acc = Poly::zero();
        for &coef in self.c.iter().rev() {
            acc = acc.mul(&lin).add(&Poly::constant(coef));
        }
        acc
    }

    /// Roots in `[lo, hi]`, each reported as an enclosing interval of width
    /// at most `width`. Clusters that cannot be separated at that width are
    /// reported as one interval.
    pub fn isolate_roots(&self, lo: f64, hi: f64, width: f64) -> Vec<(f64, f64)> {
        let p = self.trimmed();
        if p.degree() == 0 || lo > hi {
            return Vec::new();
        }
        let mut out: Vec<(f64, f64)> = Vec::new();
        let mut stack = vec![(lo, hi)];
        while let Some((a, b)) = stack.pop() {
            let local = p.compose_affine(a, b - a);
            let v = descartes_bound(&local);
            if v == 0 {
                continue;
            }
            if v == 1 && p.eval(a).signum() * p.eval(b).signum() < 0.0 {
                out.push(refine_sign_change(&p, a, b, width));
                continue;
            }
            if b - a <= width {
                out.push((a, b));
                continue;
            }
            let m = 0.5 * (a + b);
            if p.eval(m) == 0.0 {
                out.push(((m - 0.5 * width).max(a), (m + 0.5 * width).min(b)));
            }
            stack.push((m, b));
            stack.push((a, m));
        }
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
        merge_touching(out)
    }

    /// Drops leading coefficients that are negligible relative to the rest.
    pub fn trimmed(&self) -> Poly {
        let scale = self.c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut c = self.c.clone();
        while c.len() > 1 && c.last().unwrap().abs() <= 1e-14 * scale {
            c.pop();
        }
        Poly::new(c)
    }

    /// Maximum of `p` over `[lo, hi]` via critical points.
    pub fn max_on(&self, lo: f64, hi: f64) -> f64 {
        let mut best = self.eval(lo).max(self.eval(hi));
        for (a, b) in self.derivative().isolate_roots(lo, hi, 1e-12) {
            best = best.max(self.eval(a)).max(self.eval(b)).max(self.eval(0.5 * (a + b)));
        }
        best
    }

    pub fn min_on(&self, lo: f64, hi: f64) -> f64 {
        -self.scale(-1.0).max_on(lo, hi)
    }

    /// `sup |p|` over `[lo, hi]`.
    pub fn sup_abs(&self, lo: f64, hi: f64) -> f64 {
        self.max_on(lo, hi).abs().max(self.min_on(lo, hi).abs())
    }

    /// Maximal open sub-intervals of `[lo, hi]` where `low < p < high`,
    /// endpoints snapped outward by the root enclosures.
    pub fn band_intervals(&self, low: f64, high: f64, lo: f64, hi: f64, width: f64) -> Vec<(f64, f64)> {
        let p = self.trimmed();
        if p.degree() == 0 {
            let v = p.c[0];
            return if v > low && v < high { vec![(lo, hi)] } else { Vec::new() };
        }
        let mut cuts: Vec<(f64, f64)> = Vec::new();
        cuts.extend(p.sub(&Poly::constant(low)).isolate_roots(lo, hi, width));
        cuts.extend(p.sub(&Poly::constant(high)).isolate_roots(lo, hi, width));
        cuts.sort_by(|x, y| x.0.total_cmp(&y.0));
        let cuts = merge_touching(cuts);
        // pieces between consecutive root enclosures have constant membership
        let mut bounds = vec![(lo, lo)];
        bounds.extend(cuts.iter().copied());
        bounds.push((hi, hi));
        let mut out: Vec<(f64, f64)> = Vec::new();
        for w in bounds.windows(2) {
            let (left_enc, right_enc) = (w[0], w[1]);
            let a = left_enc.1;
            let b = right_enc.0;
            let probe = if b > a { 0.5 * (a + b) } else { a };
            let v = p.eval(probe);
            if v > low && v < high {
                let start = left_enc.0;
                let end = right_enc.1;
                match out.last_mut() {
                    Some(last) if last.1 >= start => last.1 = last.1.max(end),
                    _ => out.push((start, end)),
                }
            }
        }
        out
    }
}

/// Upper bound on the number of roots of `p` in `(0, 1)` (Descartes).
fn descartes_bound(p: &Poly) -> usize {
    let n = p.degree();
    // q(x) = (x+1)^n p(1/(x+1)): reverse then shift by one
    let mut q: Vec<f64> = p.c.iter().rev().copied().collect();
    for i in 0..n {
        for j in (i..n).rev() {
            q[j] += q[j + 1];
        }
    }
    let scale = q.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-13 * scale;
    let mut last = 0.0f64;
    let mut changes = 0;
    for &v in &q {
        if v.abs() <= tol {
            continue;
        }
        if last != 0.0 && v.signum() != last.signum() {
            changes += 1;
        }
        last = v;
    }
    changes
}

fn refine_sign_change(p: &Poly, mut a: f64, mut b: f64, width: f64) -> (f64, f64) {
    let mut fa = p.eval(a);
    for _ in 0..200 {
        if b - a <= width {
            break;
        }
        let m = 0.5 * (a + b);
        let fm = p.eval(m);
        if fm == 0.0 {
            let h = 0.25 * width;
            return ((m - h).max(a), (m + h).min(b));
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    (a, b)
}

fn merge_touching(v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_roots(roots: &[f64]) -> Poly {
        roots.iter().fold(Poly::constant(1.0), |p, r| p.mul(&Poly::new(vec![-r, 1.0])))
    }

    #[test]
    fn isolates_known_roots() {
        let p = from_roots(&[-0.7, -0.1, 0.25, 0.9]);
        let iv = p.isolate_roots(-1.0, 1.0, 1e-9);
        assert_eq!(iv.len(), 4);
        for (r, (a, b)) in [-0.7, -0.1, 0.25, 0.9].iter().zip(&iv) {
            assert!(a <= r && r <= b && b - a <= 1e-9, "{r} not in [{a},{b}]");
        }
    }

    #[test]
    fn no_roots_for_positive_poly() {
        let p = Poly::new(vec![1.0, 0.0, 1.0]);
        assert!(p.isolate_roots(-1.0, 1.0, 1e-9).is_empty());
    }

    #[test]
    fn close_roots_are_separated() {
        let p = from_roots(&[0.3, 0.3 + 1e-6]);
        let iv = p.isolate_roots(-1.0, 1.0, 1e-9);
        assert_eq!(iv.len(), 2);
    }

    #[test]
    fn sup_norm_of_quadratic() {
        let p = Poly::new(vec![0.0, 1.0, -1.0]); // t - t^2, max 1/4 at t=1/2, min -2 at t=-1
        assert!((p.max_on(-1.0, 1.0) - 0.25).abs() < 1e-12);
        assert!((p.sup_abs(-1.0, 1.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn band_of_parabola() {
        let p = Poly::new(vec![0.0, 0.0, 1.0]); // t^2 in (0.25, 4) on [-1,1] -> [-1,-0.5) ∪ (0.5, 1]
        let iv = p.band_intervals(0.25, 4.0, -1.0, 1.0, 1e-9);
        assert_eq!(iv.len(), 2);
        assert!((iv[0].0 + 1.0).abs() < 1e-12 && (iv[0].1 + 0.5).abs() < 1e-8);
        assert!((iv[1].0 - 0.5).abs() < 1e-8 && (iv[1].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn compose_affine_matches_eval() {
        let p = Poly::new(vec![1.0, -2.0, 0.5, 3.0]);
        let q = p.compose_affine(0.2, -0.5);
        for &s in &[-1.0, -0.3, 0.0, 0.8] {
            assert!((q.eval(s) - p.eval(0.2 - 0.5 * s)).abs() < 1e-13);
        }
    }
}
