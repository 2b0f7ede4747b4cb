use ergolab::lyapunov::phi_n;
use ergolab::measures::{
    conditional_entropy, static_entropy, weak_star_distance, EmpiricalMeasure, FinitePartition, PartitionView,
};
use ergolab::stats::stream_rng;
use ergolab::{Diffeomorphism, PhaseSpace, Point};
use proptest::prelude::*;

fn torus_point() -> impl Strategy<Value = Point> {
    (0.0..1.0f64, 0.0..1.0f64).prop_map(|(x, y)| PhaseSpace::torus(2).point(&[x, y]).unwrap())
}

fn sample(seed: u64, n: usize) -> EmpiricalMeasure {
    EmpiricalMeasure::volume_sample(&PhaseSpace::torus(2), n, &mut stream_rng(seed, 0)).unwrap()
}

/// Central differences, unwrapped across the torus seam.
fn numeric_jacobian(f: &Diffeomorphism, p: &Point) -> [[f64; 2]; 2] {
    let h = 1e-6;
    let mut out = [[0.0; 2]; 2];
    for j in 0..2 {
        let mut a = *p;
        let mut b = *p;
        a.coords[j] = (a.coords[j] + h).rem_euclid(1.0);
        b.coords[j] = (b.coords[j] - h).rem_euclid(1.0);
        let (fa, fb) = (f.step(&a), f.step(&b));
        for i in 0..2 {
            let d = fa.coords[i] - fb.coords[i];
            out[i][j] = (d - d.round()) / (2.0 * h);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn phi_is_subadditive(x in torus_point(), k in 0.0..3.0f64, n in 1usize..60, m in 1usize..60) {
        let f = Diffeomorphism::standard(k);
        let y = f.orbit_points(&x, n)[n];
        let lhs = phi_n(&f, &x, n + m).unwrap();
        let rhs = phi_n(&f, &x, n).unwrap() + phi_n(&f, &y, m).unwrap();
        prop_assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
    }

    #[test]
    fn inverse_undoes_step(x in torus_point(), k in 0.0..3.0f64) {
        let f = Diffeomorphism::standard(k);
        let back = f.inverse().unwrap().step(&f.step(&x));
        for i in 0..2 {
            let d = back.coords[i] - x.coords[i];
            prop_assert!((d - d.round()).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences(x in torus_point(), k in 0.0..3.0f64) {
        let f = Diffeomorphism::standard(k);
        let exact = f.jacobian_raw(&x);
        let approx = numeric_jacobian(&f, &x);
        for i in 0..2 {
            for j in 0..2 {
                prop_assert!((exact[i][j] - approx[i][j]).abs() < 1e-6);
            }
        }
        let det = exact[0][0] * exact[1][1] - exact[0][1] * exact[1][0];
        prop_assert!((det - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weak_star_is_a_pseudometric(a in 0u64..1000, b in 0u64..1000, c in 0u64..1000) {
        let (mu, nu, rho) = (sample(a, 50), sample(b, 50), sample(c, 50));
        let d = |p: &EmpiricalMeasure, q: &EmpiricalMeasure| weak_star_distance(p, q).unwrap();
        prop_assert!(d(&mu, &mu).abs() < 1e-15);
        prop_assert!((d(&mu, &nu) - d(&nu, &mu)).abs() < 1e-15);
        prop_assert!(d(&mu, &rho) <= d(&mu, &nu) + d(&nu, &rho) + 1e-12);
    }

    #[test]
    fn refined_entropy_grows_and_chains(seed in 0u64..1000, n in 1usize..6) {
        let f = Diffeomorphism::cat();
        let mu = sample(seed, 300);
        let grid = FinitePartition::grid(&f.space, &[3, 3], &[0.0, 0.0]).unwrap();
        let at = |depth| PartitionView::Refined { partition: &grid, map: &f, depth };
        let h_n = static_entropy(&mu, at(n)).unwrap();
        let h_next = static_entropy(&mu, at(n + 1)).unwrap();
        prop_assert!(h_next >= h_n - 1e-12);
        // P^{n+1} refines P^n, so the joint is P^{n+1} itself
        let cond = conditional_entropy(&mu, at(n + 1), at(n)).unwrap();
        prop_assert!((cond - (h_next - h_n)).abs() < 1e-9);
        prop_assert!(h_n <= (mu.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn refined_entropy_is_subadditive(seed in 0u64..1000, n in 1usize..4, m in 1usize..4) {
        let f = Diffeomorphism::cat();
        let mu = sample(seed, 300);
        let grid = FinitePartition::grid(&f.space, &[3, 3], &[0.0, 0.0]).unwrap();
        let at = |depth| PartitionView::Refined { partition: &grid, map: &f, depth };
        let mut shifted = mu.clone();
        for _ in 0..n {
            shifted = shifted.push_forward(&f).unwrap();
        }
        let whole = static_entropy(&mu, at(n + m)).unwrap();
        let parts = static_entropy(&mu, at(n)).unwrap() + static_entropy(&shifted, at(m)).unwrap();
        prop_assert!(whole <= parts + 1e-9, "{whole} > {parts}");
    }
}
