use plimit_core::calculus::{energy_gradient, p_dirichlet_energy};
use plimit_core::measure::mollify;
use plimit_core::measure::Kernel;
use plimit_core::solver::{generalized_mean, normalization_residual, normalize_generalized_mean};
use plimit_core::spectral::{rayleigh_lambda_p, EigenOptions};
use plimit_core::transport::{kr_norm, verify_kr_sandwich, w1_geodesic};
use plimit_core::{GridDomain, ScalarField, SignedMeasure, Stencil};
use proptest::prelude::*;

fn balanced(mut w: Vec<f64>) -> SignedMeasure {
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter_mut().for_each(|x| *x -= mean);
    SignedMeasure::new(w)
}

fn square() -> GridDomain {
    GridDomain::unit_square(6, Stencil::Diagonal).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn energy_gradient_matches_central_differences(
        slopes in prop::collection::vec(-1.5f64..1.5, 9),
        p in prop::sample::select(vec![2.0, 4.0, 10.0]),
    ) {
        let dom = GridDomain::interval(0.0, 1.0, 10).unwrap();
        let h = dom.h();
        let mut acc = 0.0;
        let mut values = vec![0.0];
        for s in &slopes {
            acc += s * h;
            values.push(acc);
        }
        let u = ScalarField::new(values);
        let g = energy_gradient(&dom, &u, p);
        let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assume!(scale > 1e-8);
        for i in 0..10 {
            let step = 1e-5 * h;
            let mut up = u.clone();
            let mut dn = u.clone();
            up.values[i] += step;
            dn.values[i] -= step;
            let fd = (p_dirichlet_energy(&dom, &up, p).unwrap() - p_dirichlet_energy(&dom, &dn, p).unwrap()) / (2.0 * step);
            prop_assert!((fd - g[i]).abs() <= 1e-5 * scale, "node {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn flow_conserves_mass_exactly(w in prop::collection::vec(-1.0f64..1.0, 36)) {
        let dom = square();
        let mu = balanced(w);
        let r = w1_geodesic(&dom, &mu).unwrap();
        prop_assert_eq!(r.conservation_defect(&dom), 0);
        prop_assert_eq!(r.supply.iter().sum::<i64>(), 0);
        let k = kr_norm(&dom, &mu).unwrap();
        prop_assert_eq!(k.conservation_defect(&dom), 0);
    }

    #[test]
    fn flow_is_self_dual(w in prop::collection::vec(-1.0f64..1.0, 36)) {
        let dom = square();
        let r = w1_geodesic(&dom, &balanced(w)).unwrap();
        prop_assert!(r.gap.abs() <= 1e-9 * r.value.max(1e-300));
        prop_assert!(r.dual_infeasibility(&dom) <= 1e-12);
    }

    #[test]
    fn w1_is_symmetric_and_subadditive(
        a in prop::collection::vec(-1.0f64..1.0, 36),
        b in prop::collection::vec(-1.0f64..1.0, 36),
    ) {
        let dom = square();
        let (mu, nu) = (balanced(a), balanced(b));
        let w = |m: &SignedMeasure| w1_geodesic(&dom, m).unwrap().value;
        let (wm, wn) = (w(&mu), w(&nu));
        prop_assert!((w(&mu.negated()) - wm).abs() <= 1e-12 * wm.max(1.0));
        let sum = SignedMeasure::new(mu.weights.iter().zip(&nu.weights).map(|(x, y)| x + y).collect());
        prop_assert!(w(&sum) <= wm + wn + 1e-12 * (wm + wn).max(1.0));
    }

    #[test]
    fn kr_sandwich_holds(w in prop::collection::vec(-1.0f64..1.0, 36), scale in 0.01f64..100.0) {
        let dom = square();
        let s = verify_kr_sandwich(&dom, &balanced(w).scaled(scale)).unwrap();
        prop_assert!(s.lhs_ok && s.rhs_ok, "{s:?}");
        prop_assert!(s.max_relative_gap <= 1e-9);
    }

    #[test]
    fn normalization_root_is_unique(
        values in prop::collection::vec(-5.0f64..5.0, 21),
        shift in -10.0f64..10.0,
        p in 1.2f64..80.0,
    ) {
        let dom = GridDomain::interval(-1.0, 1.0, 21).unwrap();
        let u = ScalarField::new(values);
        let v = normalize_generalized_mean(&dom, &u, p, 1e-13).unwrap();
        prop_assert!(normalization_residual(&dom, &v, p).abs() <= 1e-12);
        // shifting the input shifts the root by exactly the same amount
        let c = generalized_mean(&dom, &u.values, p, 1e-13).unwrap();
        let d = generalized_mean(&dom, &u.shifted(shift).values, p, 1e-13).unwrap();
        prop_assert!((d - c - shift).abs() <= 1e-12 * (1.0 + shift.abs() + c.abs()));
    }

    #[test]
    fn mollify_keeps_mass(w in prop::collection::vec(-1.0f64..1.0, 36), k in 1usize..3) {
        let dom = square();
        let mu = SignedMeasure::new(w);
        let m = mollify(&dom, &mu, k as f64 * dom.h(), Kernel::Quartic).unwrap();
        prop_assert!((m.total_mass() - mu.total_mass()).abs() <= 1e-12 * mu.total_variation().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn eigen_estimates_repeat_under_seed(seed in 0u64..1000) {
        let dom = GridDomain::unit_square(6, Stencil::Diagonal).unwrap();
        let opts = EigenOptions { seed, ..Default::default() };
        let a = rayleigh_lambda_p(&dom, 3.0, &opts).unwrap();
        let b = rayleigh_lambda_p(&dom, 3.0, &opts).unwrap();
        prop_assert_eq!(a.value, b.value);
        prop_assert_eq!(a.minimizer, b.minimizer);
    }
}
