use approx::assert_abs_diff_eq;
use plimit_core::acceptance::{dipole_instance, sign_instance};
use plimit_core::calculus::{lipschitz_constant, p_dirichlet_energy_with, GradientScheme};
use plimit_core::measure::poisson_learning_measure;
use plimit_core::solver::{analytic_1d_solution, continuation_sweep, solve_p_poisson, MeasureFamily, SolveOptions};
use plimit_core::transport::{kantorovich_gap, w1_geodesic};
use plimit_core::viscosity::{classify_measure, Region};
use plimit_core::{GridDomain, ScalarField, Stencil};

#[test]
fn p2_line_solution_is_nodally_exact() {
    let (dom, mu) = sign_instance(101).unwrap();
    let opts = SolveOptions { grad_tol: Some(1e-13), ..Default::default() };
    let r = solve_p_poisson(&dom, &mu, 2.0, &opts).unwrap();
    assert!(r.converged);
    for i in 0..dom.num_nodes() {
        assert_abs_diff_eq!(r.u.values[i], analytic_1d_solution(dom.coords(i)[0], 2.0), epsilon = 1e-9);
    }
}

#[test]
fn dipole_solution_is_odd_under_reflection() {
    let (dom, mu) = dipole_instance(17, Stencil::Knight).unwrap();
    let r = solve_p_poisson(&dom, &mu, 6.0, &SolveOptions::default()).unwrap();
    assert!(r.converged);
    let n = 17;
    for iy in 0..n {
        for ix in 0..n {
            let a = dom.node_at(ix, iy).unwrap();
            let b = dom.node_at(n - 1 - ix, iy).unwrap();
            let c = dom.node_at(ix, n - 1 - iy).unwrap();
            assert_abs_diff_eq!(r.u.values[a], -r.u.values[b], epsilon = 1e-9);
            assert_abs_diff_eq!(r.u.values[a], r.u.values[c], epsilon = 1e-9);
        }
    }
}

#[test]
fn symmetric_energy_is_reflection_invariant() {
    let dom = GridDomain::unit_square(7, Stencil::Axis).unwrap();
    let u = ScalarField::from_fn(&dom, |x| (3.0 * x[0]).sin() + x[1] * x[1] * x[0]);
    let flipped = ScalarField::from_fn(&dom, |x| (3.0 * (1.0 - x[0])).sin() + x[1] * x[1] * (1.0 - x[0]));
    for p in [2.0, 3.5, 9.0] {
        let e = p_dirichlet_energy_with(&dom, &u, p, GradientScheme::Symmetric).unwrap();
        let f = p_dirichlet_energy_with(&dom, &flipped, p, GradientScheme::Symmetric).unwrap();
        assert_abs_diff_eq!(e, f, epsilon = 1e-12 * e);
    }
}

#[test]
fn l_shape_sweep_approaches_transport_value() {
    let dom = GridDomain::l_shape(17, Stencil::Diagonal).unwrap();
    let (a, b) = (dom.nearest_node([1.0, 0.25]), dom.nearest_node([0.25, 1.0]));
    let mu = plimit_core::SignedMeasure::dirac_pair(dom.num_nodes(), a, b);
    let sweep = continuation_sweep(&dom, &MeasureFamily::Fixed(mu.clone()), &[2.0, 4.0, 8.0, 16.0, 32.0], &SolveOptions::default()).unwrap();
    let w1 = w1_geodesic(&dom, &mu).unwrap().value;
    let pairings: Vec<f64> = sweep.iter().map(|e| e.duality_pairing).collect();
    assert!(pairings.windows(2).all(|w| w[1] < w[0]), "{pairings:?}");
    let last = sweep.last().unwrap();
    assert!(last.report.converged);
    assert!((last.duality_pairing - w1).abs() <= 0.1 * w1);
    assert!(lipschitz_constant(&dom, &last.report.u) <= 1.15);
}

#[test]
fn poisson_learning_pair_matches_distance() {
    let dom = GridDomain::unit_square(17, Stencil::Knight).unwrap();
    let (x, y) = (dom.nearest_node([0.2, 0.3]), dom.nearest_node([0.8, 0.6]));
    let mu = poisson_learning_measure(&dom, &[(x, 1.0), (y, -1.0)]).unwrap();
    let sweep = continuation_sweep(&dom, &MeasureFamily::Fixed(mu.clone()), &[2.0, 4.0, 8.0, 16.0, 32.0, 64.0], &SolveOptions::default()).unwrap();
    let gap = kantorovich_gap(&dom, &sweep.last().unwrap().report.u, &mu).unwrap();
    assert!(gap.relative_gap.abs() <= 0.05, "{gap:?}");
}

#[test]
fn dipole_regions_are_separated() {
    let (dom, mu) = dipole_instance(33, Stencil::Knight).unwrap();
    let labels = classify_measure(&dom, &mu).unwrap();
    let pos = labels.nodes(Region::Positive);
    let neg = labels.nodes(Region::Negative);
    assert!(!pos.is_empty() && !neg.is_empty());
    assert!(pos.iter().all(|&i| dom.coords(i)[0] > 0.5));
    assert!(neg.iter().all(|&i| dom.coords(i)[0] < 0.5));
    // far-zero nodes keep at least eps + dilation away from both centers
    let reach = 6.0 * dom.h() - 1e-12;
    for i in labels.nodes(Region::FarZero) {
        let c = dom.coords(i);
        for centre in [[0.25, 0.5], [0.75, 0.5]] {
            assert!((c[0] - centre[0]).hypot(c[1] - centre[1]) > reach);
        }
    }
}
