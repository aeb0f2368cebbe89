//! Invariants over random inputs.

use approx::assert_relative_eq;
use proptest::prelude::*;
use punctum::bubbles::{alpha_n, BubbleParams};
use punctum::config::parse_config;
use punctum::hopf::{hopf_map, HopfMapSpec, KElement};
use punctum::runner::fit_line;

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

fn algebra_pair() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    prop::sample::select(vec![1usize, 2, 4, 8]).prop_flat_map(|k| (Just(k), point(k), point(k)))
}

proptest! {
    #[test]
    fn bubble_rescaling(n in 3usize..=7, delta in 0.05..5.0f64, seed in point(7), y in point(7)) {
        let xi = seed[..n].to_vec();
        let y = &y[..n];
        let b = BubbleParams::new(n, delta, xi.clone()).unwrap();
        let unit = BubbleParams::centered(n, 1.0);
        let x: Vec<f64> = xi.iter().zip(y).map(|(c, v)| c + delta * v).collect();
        let scaled = delta.powf(-(n as f64 - 2.0) / 2.0) * unit.eval(y);
        assert_relative_eq!(b.eval(&x), scaled, max_relative = 1e-12);
    }

    #[test]
    fn bubble_solves_critical_equation(n in 3usize..=7, delta in 0.05..5.0f64, x in point(7)) {
        let b = BubbleParams::new(n, delta, vec![0.0; n]).unwrap();
        let x = &x[..n];
        let u = b.eval(x);
        let residual = b.laplacian(x) + u.powf(b.p());
        prop_assert!(residual.abs() <= 1e-12 * b.laplacian_scale(x), "{residual}");
        prop_assert!(u > 0.0 && u <= b.eval(&vec![0.0; n]) * (1.0 + 1e-15));
    }

    #[test]
    fn kernel_functions_solve_linearized_equation(n in 3usize..=6, j in 0usize..=6, delta in 0.1..3.0f64, x in point(6)) {
        prop_assume!(j <= n);
        let b = BubbleParams::new(n, delta, vec![0.1; n]).unwrap();
        let x = &x[..n];
        let lin = b.psi_laplacian(j, x).unwrap() + b.p() * b.eval(x).powf(b.p() - 1.0) * b.psi(j, x).unwrap();
        prop_assert!(lin.abs() <= 1e-12 * b.psi_laplacian_scale(j, x).unwrap(), "{lin}");
    }

    #[test]
    fn norms_are_multiplicative((k, a, b) in algebra_pair()) {
        let (a, b) = (KElement::new(a).unwrap(), KElement::new(b).unwrap());
        let ab = a.mul(&b).unwrap();
        assert_relative_eq!(ab.norm(), a.norm() * b.norm(), max_relative = 1e-12, epsilon = 1e-300);
        prop_assert_eq!(ab.dim(), k);
    }

    #[test]
    fn hopf_map_norm_is_scaled_square((k, a, b) in algebra_pair(), s in 0.1..2.0f64) {
        let spec = HopfMapSpec::with_scale(k, s).unwrap();
        let (z1, z2) = (KElement::new(a).unwrap(), KElement::new(b).unwrap());
        let h = hopf_map(&spec, &z1, &z2).unwrap();
        prop_assert_eq!(h.len(), k + 1);
        let hn = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_relative_eq!(hn, s * (z1.norm_sqr() + z2.norm_sqr()), max_relative = 1e-12, epsilon = 1e-300);
    }

    #[test]
    fn line_fit_recovers_exact_lines(slope in -5.0..5.0f64, icpt in -5.0..5.0f64, xs in prop::collection::btree_set(-1000i32..1000, 2..20)) {
        let x: Vec<f64> = xs.into_iter().map(|v| v as f64 / 100.0).collect();
        let y: Vec<f64> = x.iter().map(|v| slope * v + icpt).collect();
        let (s, i) = fit_line(&x, &y);
        prop_assert!((s - slope).abs() <= 1e-9 && (i - icpt).abs() <= 1e-9, "{s} {i}");
    }

    #[test]
    fn canonical_config_reparses_to_itself(seed in any::<u64>(), inv in 8u32..128, d in 0.1..3.0f64, kappa in -3.0..3.0f64) {
        let text = format!("experiment = reduced-energy-sweep\nseed = {seed}\nh = 1/{inv}\nd = {d}\nq = tilt\nq_kappa = {kappa}\nepsilon = 4e-3, 2e-3, 1e-3, 5e-4\n");
        let a = parse_config(&text).unwrap();
        let b = parse_config(&a.canonical).unwrap();
        prop_assert_eq!(&a.canonical, &b.canonical);
        prop_assert_eq!(b.seed, seed);
        prop_assert!((b.h - 1.0 / inv as f64).abs() < 1e-15);
    }
}

#[test]
fn peak_constant() {
    assert_relative_eq!(alpha_n(6), 24.0, max_relative = 1e-15);
}
