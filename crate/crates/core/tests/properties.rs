use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use soc_icnn::curvature::{hessian, local_gradient, min_eigenvalue};
use soc_icnn::dual::{
    canonical, check_feasible, extreme_branches, is_optimal, psi, readout, sample_optimal_branches,
    DualBranch, FEASIBILITY_SLACK, OPTIMALITY_TOL,
};
use soc_icnn::geometry::{canonical_subgradient, directional_derivative, support_margin};
use soc_icnn::model::{
    build_degenerate_2d, build_random, Architecture, DegeneracySpec, DEFAULT_TAU,
};
use soc_icnn::oracle::{convexity_probe, fd_directional};
use soc_icnn::{SocIcnnParams, Vector};

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn arch_strategy() -> impl Strategy<Value = Architecture> {
    (
        1usize..6,
        1usize..8,
        1usize..4,
        0usize..3,
        0usize..3,
        1usize..5,
    )
        .prop_map(|(d0, width, depth, h, g, k)| Architecture::uniform(d0, width, depth, h, g, k))
}

fn model_and_point() -> impl Strategy<Value = (SocIcnnParams, Vector)> {
    (any::<u64>(), arch_strategy(), any::<u64>()).prop_map(|(seed, arch, xs)| {
        let p = build_random(seed, &arch).unwrap();
        let x = gaussian(&mut ChaCha8Rng::seed_from_u64(xs), arch.input_dim);
        (p, x)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_branch_is_feasible_and_tight((p, x) in model_and_point()) {
        let t = p.forward(&x).unwrap();
        let b = canonical(&p, &t, DEFAULT_TAU);
        prop_assert!(check_feasible(&p, &b, FEASIBILITY_SLACK).is_ok());
        let v = psi(&p, &x, &b).unwrap();
        prop_assert!((v - t.value).abs() <= 1e-12 * t.value.abs().max(1.0));
    }

    #[test]
    fn canonical_slope_supports_the_function((p, x) in model_and_point(), ys in any::<u64>()) {
        let g = canonical_subgradient(&p, &x, DEFAULT_TAU).unwrap();
        let f0 = p.value(&x).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(ys);
        for _ in 0..20 {
            let y = &x + gaussian(&mut rng, x.len());
            prop_assert!(support_margin(&p, f0, &x, &g, &y).unwrap() >= -1e-10);
        }
    }

    #[test]
    fn readout_matches_local_branch((p, x) in model_and_point()) {
        let t = p.forward(&x).unwrap();
        if t.min_relu_margin() > 1e-6 && t.min_conic_norm() > 1e-6 {
            let g = readout(&p, &canonical(&p, &t, DEFAULT_TAU)).unwrap();
            let l = local_gradient(&p, &x, DEFAULT_TAU).unwrap();
            prop_assert!((&g - &l).norm() <= 1e-12 * g.norm().max(1.0));
            let h = hessian(&p, &x, DEFAULT_TAU).unwrap();
            prop_assert!(h.min_eigenvalue >= -1e-10);
            prop_assert!(min_eigenvalue(&h.hessian) >= -1e-10);
        }
    }

    #[test]
    fn directional_derivative_is_positively_homogeneous(
        (p, x) in model_and_point(),
        s in 0.1f64..10.0,
        ds in any::<u64>(),
    ) {
        let d = gaussian(&mut ChaCha8Rng::seed_from_u64(ds), x.len());
        let a = directional_derivative(&p, &x, &d, DEFAULT_TAU, 8, 0).unwrap();
        let b = directional_derivative(&p, &x, &(&d * s), DEFAULT_TAU, 8, 0).unwrap();
        let scale = a.primal.abs().max(1.0) * s;
        prop_assert!((b.primal - s * a.primal).abs() <= 1e-12 * scale);
        prop_assert!((b.dual_max - s * a.dual_max).abs() <= 1e-12 * scale);
    }
}

#[test]
fn random_models_are_convex() {
    for seed in 0..5 {
        let p = build_random(seed, &Architecture::uniform(6, 16, 3, 2, 2, 6)).unwrap();
        let worst = convexity_probe(|x| p.value(x).unwrap(), 6, 1000, seed + 100, 1.0);
        assert!(worst <= 1e-10, "seed {seed}: {worst}");
    }
}

#[test]
fn canonical_objective_equals_value_on_many_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..1000u64 {
        let arch = Architecture::uniform(
            rng.random_range(1..8),
            rng.random_range(1..12),
            rng.random_range(1..4),
            rng.random_range(0..3),
            rng.random_range(0..3),
            rng.random_range(1..6),
        );
        let p = build_random(i, &arch).unwrap();
        let x = gaussian(&mut rng, arch.input_dim);
        let t = p.forward(&x).unwrap();
        let v = psi(&p, &x, &canonical(&p, &t, DEFAULT_TAU)).unwrap();
        assert!(
            (v - t.value).abs() <= 1e-12 * t.value.abs().max(1.0),
            "pair {i}"
        );
    }
}

fn degenerate_branches() -> (SocIcnnParams, Vector, Vec<DualBranch>) {
    let (p, x0) = build_degenerate_2d(DegeneracySpec::default());
    let t = p.forward(&x0).unwrap();
    let mut all = sample_optimal_branches(&p, &t, DEFAULT_TAU, 500, 4);
    all.extend(extreme_branches(&p, &t, DEFAULT_TAU, 16, 5).unwrap());
    (p, x0, all)
}

#[test]
fn every_emitted_branch_supports_the_function() {
    let (p, x0, branches) = degenerate_branches();
    let f0 = p.value(&x0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let probes: Vec<Vector> = (0..100).map(|_| &x0 + gaussian(&mut rng, 2)).collect();
    for b in &branches {
        let g = readout(&p, b).unwrap();
        for y in &probes {
            assert!(support_margin(&p, f0, &x0, &g, y).unwrap() >= -1e-10);
        }
    }
}

#[test]
fn blockwise_mixing_stays_optimal() {
    let (p, x0, branches) = degenerate_branches();
    let t = p.forward(&x0).unwrap();
    for pair in branches.windows(2) {
        let mixed = pair[0].with_conic_from(&pair[1]);
        assert!(check_feasible(&p, &mixed, FEASIBILITY_SLACK).is_ok());
        assert!(is_optimal(&p, &t, &mixed, OPTIMALITY_TOL));
        let swapped = pair[1].with_conic_from(&pair[0]);
        assert!(is_optimal(&p, &t, &swapped, OPTIMALITY_TOL));
    }
}

#[test]
fn canonical_is_the_minimum_norm_branch() {
    let (p, x0, branches) = degenerate_branches();
    let t = p.forward(&x0).unwrap();
    let canon = canonical(&p, &t, DEFAULT_TAU);
    for b in &branches {
        if *b != canon {
            assert!(canon.norm() < b.norm());
        }
    }
}

#[test]
fn directional_oracles_agree_at_every_degenerate_layout() {
    for layer in 0..2 {
        for coord in 0..2 {
            for cone_module in 0..2 {
                let (p, x0) = build_degenerate_2d(DegeneracySpec {
                    layer,
                    coord,
                    cone_module,
                });
                let mut rng = ChaCha8Rng::seed_from_u64(layer as u64 * 4 + coord as u64);
                for _ in 0..50 {
                    let d = gaussian(&mut rng, 2).normalize();
                    let r = directional_derivative(&p, &x0, &d, DEFAULT_TAU, 64, 0).unwrap();
                    assert!((r.dual_max - r.primal).abs() <= 1e-12);
                    let fd = fd_directional(|y| p.value(y).unwrap(), &x0, &d, 1e-7).unwrap();
                    assert!((fd - r.primal).abs() <= 2e-7);
                    assert!(r.canonical_value <= r.dual_max + 1e-12);
                }
            }
        }
    }
}

#[test]
fn outer_semicontinuity_near_degeneracy() {
    // Gradients at nearby smooth points must support f at the kink up to O(|x - x0|).
    let (p, x0) = build_degenerate_2d(DegeneracySpec::default());
    let f0 = p.value(&x0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let probes: Vec<Vector> = (0..100).map(|_| &x0 + gaussian(&mut rng, 2)).collect();
    for _ in 0..50 {
        let x = &x0 + gaussian(&mut rng, 2) * 1e-9;
        let g = canonical_subgradient(&p, &x, DEFAULT_TAU).unwrap();
        for y in &probes {
            assert!(support_margin(&p, f0, &x0, &g, y).unwrap() >= -1e-7);
        }
    }
}
