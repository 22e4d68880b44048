//! First-order geometry: gradients, subgradient samples and directional derivatives.
//!
//! Directional derivatives are computed two ways. The dual route maximizes the readout
//! slope along `d` over extreme points of the optimal multiplier set. The primal route
//! pushes `d` through the network with one-sided activation derivatives. They agree up to
//! rounding, and both are checked against one-sided finite differences in the tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dual::{
    canonical, extreme_branches, extreme_branches_for_direction, readout, sample_optimal_branches,
};
use crate::error::{Error, Result};
use crate::model::{degeneracy_report, ForwardTrace, SocIcnnParams};
use crate::Vector;

/// Sphere design size used when callers do not pick one.
pub const DEFAULT_BRANCH_BUDGET: usize = 64;

/// Threshold above which `dual_max` counts as strictly larger than the canonical slope.
pub const CANONICAL_GAP_THRESHOLD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalDerivativeResult {
    /// Unit-normalized query direction.
    pub direction: Vector,
    /// Maximum readout slope along the query over the optimal multiplier set.
    pub dual_max: f64,
    /// One-sided forward recursion value.
    pub primal: f64,
    /// Canonical readout slope along the query.
    pub canonical_value: f64,
}

fn nondegenerate_trace(params: &SocIcnnParams, x: &Vector, tau: f64) -> Result<ForwardTrace> {
    let trace = params.forward(x)?;
    let report = degeneracy_report(&trace, tau);
    if !report.is_nondegenerate {
        return Err(Error::DegenerateInput {
            tau,
            relu: report.relu_zero_coords.len(),
            conic: report.conic_zero_modules.len(),
        });
    }
    Ok(trace)
}

/// Gradient at a nondegenerate input, read out from the canonical multipliers.
pub fn gradient(params: &SocIcnnParams, x: &Vector, tau: f64) -> Result<Vector> {
    let trace = nondegenerate_trace(params, x, tau)?;
    readout(params, &canonical(params, &trace, tau))
}

/// Canonical readout at any input; a valid subgradient even at degenerate points.
pub fn canonical_subgradient(params: &SocIcnnParams, x: &Vector, tau: f64) -> Result<Vector> {
    let trace = params.forward(x)?;
    readout(params, &canonical(params, &trace, tau))
}

/// Readouts of `n` sampled optimal branches followed by the extreme branches.
pub fn subdifferential_sample(
    params: &SocIcnnParams,
    x: &Vector,
    tau: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<Vector>> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let trace = params.forward(x)?;
    let sampled = sample_optimal_branches(params, &trace, tau, n, seed);
    let extreme = extreme_branches(params, &trace, tau, DEFAULT_BRANCH_BUDGET, seed ^ 0x5eed)?;
    sampled
        .iter()
        .chain(&extreme)
        .map(|b| readout(params, b))
        .collect()
}

/// Support margin `f(y) - f(x) - g.(y - x)`; nonnegative for every probe iff `g` is a
/// subgradient at `x`.
pub fn support_margin(
    params: &SocIcnnParams,
    x_value: f64,
    x: &Vector,
    g: &Vector,
    y: &Vector,
) -> Result<f64> {
    Ok(params.value(y)? - x_value - g.dot(&(y - x)))
}

/// One-sided directional derivative by forward propagation of `d`.
///
/// Active units pass the perturbation, inactive units block it, and units within `tau` of
/// zero pass only its positive part. Conic modules with a vanishing residual contribute
/// `lambda |A d|`.
pub fn primal_directional(
    params: &SocIcnnParams,
    trace: &ForwardTrace,
    d: &Vector,
    tau: f64,
) -> f64 {
    let mut dz = Vector::zeros(0);
    for (layer, a) in params.layers.iter().zip(&trace.a) {
        let da = &layer.w * d + &layer.u * &dz;
        dz = da.zip_map(a, |di, ai| {
            if ai > tau {
                di
            } else if ai < -tau {
                0.0
            } else {
                di.max(0.0)
            }
        });
    }
    let mut value = params.c.dot(&dz) + params.v.dot(d);
    for (m, q) in params.quad.iter().zip(&trace.q) {
        value += m.alpha * q.dot(&(&m.b * d));
    }
    for (m, u) in params.cone.iter().zip(&trace.u) {
        let ad = &m.a * d;
        let n = u.norm();
        value += if n > tau {
            m.lambda * u.dot(&ad) / n
        } else {
            m.lambda * ad.norm()
        };
    }
    value
}

/// Directional derivative along `d` by the dual max formula and the primal recursion.
///
/// The computation runs on the unit direction and the results are scaled back by `|d|`,
/// so both values are positively homogeneous in `d`.
pub fn directional_derivative(
    params: &SocIcnnParams,
    x: &Vector,
    d: &Vector,
    tau: f64,
    branch_budget: usize,
    seed: u64,
) -> Result<DirectionalDerivativeResult> {
    let trace = params.forward(x)?;
    directional_derivative_at(params, &trace, d, tau, branch_budget, seed)
}

/// [`directional_derivative`] on a precomputed trace.
pub fn directional_derivative_at(
    params: &SocIcnnParams,
    trace: &ForwardTrace,
    d: &Vector,
    tau: f64,
    branch_budget: usize,
    seed: u64,
) -> Result<DirectionalDerivativeResult> {
    if d.len() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "direction has length {}, expected {}",
            d.len(),
            params.input_dim()
        )));
    }
    let scale = d.norm();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(
            "direction must be nonzero and finite".into(),
        ));
    }
    let unit = d / scale;

    let branches = extreme_branches_for_direction(params, trace, tau, branch_budget, seed, &unit)?;
    let mut dual_max = f64::NEG_INFINITY;
    for b in &branches {
        dual_max = dual_max.max(readout(params, b)?.dot(&unit));
    }
    let canonical_value = readout(params, &canonical(params, trace, tau))?.dot(&unit);
    let primal = primal_directional(params, trace, &unit, tau);

    Ok(DirectionalDerivativeResult {
        direction: unit,
        dual_max: dual_max * scale,
        primal: primal * scale,
        canonical_value: canonical_value * scale,
    })
}

/// Random unit directions drawn from a seeded isotropic Gaussian.
pub fn random_unit_directions(dim: usize, count: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| loop {
            let v = Vector::from_iterator(dim, (0..dim).map(|_| rng.sample(StandardNormal)));
            let n = v.norm();
            if n > 1e-12 {
                break v / n;
            }
        })
        .collect()
}

/// Fraction of random unit directions along which the canonical slope falls strictly
/// (by more than [`CANONICAL_GAP_THRESHOLD`]) below the directional derivative.
pub fn canonical_gap_fraction(
    params: &SocIcnnParams,
    x0: &Vector,
    directions: usize,
    tau: f64,
    seed: u64,
) -> Result<f64> {
    if directions == 0 {
        return Ok(0.0);
    }
    let trace = params.forward(x0)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let dirs = random_unit_directions(params.input_dim(), directions, seeds.random());
    let mut gaps = 0usize;
    for d in &dirs {
        let r = directional_derivative_at(
            params,
            &trace,
            d,
            tau,
            DEFAULT_BRANCH_BUDGET,
            seeds.random(),
        )?;
        if r.dual_max - r.canonical_value > CANONICAL_GAP_THRESHOLD {
            gaps += 1;
        }
    }
    Ok(gaps as f64 / directions as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        build_degenerate_2d, build_random, Architecture, ConeModule, DegeneracySpec, Layer,
        QuadModule, DEFAULT_TAU,
    };
    use crate::oracle::fd_gradient;
    use nalgebra::{DMatrix, DVector};

    fn squared_norm_model() -> SocIcnnParams {
        SocIcnnParams {
            layers: vec![Layer {
                w: DMatrix::zeros(1, 2),
                u: DMatrix::zeros(1, 0),
                b: DVector::from_element(1, -1.0),
            }],
            c: DVector::zeros(1),
            v: DVector::zeros(2),
            b0: 0.0,
            quad: vec![QuadModule {
                alpha: 2.0,
                b: DMatrix::identity(2, 2),
                e: DVector::zeros(2),
            }],
            cone: vec![],
            seed: None,
        }
    }

    fn conic_only(lambda: f64) -> (SocIcnnParams, Vector) {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.3, 2.0, 0.7, 0.1]);
        let x0 = DVector::from_vec(vec![0.2, -0.6]);
        let d = -(&a * &x0);
        let p = SocIcnnParams {
            layers: vec![Layer {
                w: DMatrix::zeros(1, 2),
                u: DMatrix::zeros(1, 0),
                b: DVector::from_element(1, -1.0),
            }],
            c: DVector::zeros(1),
            v: DVector::zeros(2),
            b0: 0.0,
            quad: vec![],
            cone: vec![ConeModule { lambda, a, d }],
            seed: None,
        };
        (p, x0)
    }

    #[test]
    fn gradient_of_squared_norm_model() {
        let g = gradient(
            &squared_norm_model(),
            &DVector::from_vec(vec![1.0, 1.0]),
            DEFAULT_TAU,
        )
        .unwrap();
        assert_eq!(g, DVector::from_vec(vec![2.0, 2.0]));
    }

    #[test]
    fn gradient_of_constant_network_is_v() {
        let mut p = build_random(4, &Architecture::uniform(3, 4, 2, 0, 0, 1)).unwrap();
        for l in &mut p.layers {
            l.w.fill(0.0);
            l.u.fill(0.0);
            l.b.fill(-1.0);
        }
        let g = gradient(&p, &DVector::from_vec(vec![0.3, 0.1, -2.0]), DEFAULT_TAU).unwrap();
        assert_eq!(g, p.v);
    }

    #[test]
    fn gradient_rejects_degenerate_input() {
        let (p, x0) = build_degenerate_2d(DegeneracySpec::default());
        assert!(matches!(
            gradient(&p, &x0, DEFAULT_TAU),
            Err(Error::DegenerateInput {
                relu: 1,
                conic: 1,
                ..
            })
        ));
    }

    #[test]
    fn gradient_matches_fd_on_random_model() {
        let p = build_random(0, &Architecture::uniform(6, 10, 3, 1, 2, 4)).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.5, 1.2, 0.05, -0.8, 0.4]);
        let g = gradient(&p, &x, DEFAULT_TAU).unwrap();
        let fd = fd_gradient(|y| p.value(y).unwrap(), &x, 1e-6).unwrap();
        assert!((g - fd).amax() <= 1e-6);
    }

    #[test]
    fn nondegenerate_subdifferential_is_singleton() {
        let p = build_random(2, &Architecture::uniform(3, 5, 2, 1, 1, 2)).unwrap();
        let x = DVector::from_vec(vec![0.4, 0.1, -0.7]);
        let g = gradient(&p, &x, DEFAULT_TAU).unwrap();
        let s = subdifferential_sample(&p, &x, DEFAULT_TAU, 8, 1).unwrap();
        assert_eq!(s.len(), 9);
        assert!(s.iter().all(|v| *v == g));
    }

    #[test]
    fn degenerate_subdifferential_is_set_valued_and_valid() {
        let (p, x0) = build_degenerate_2d(DegeneracySpec::default());
        let f0 = p.value(&x0).unwrap();
        let s = subdifferential_sample(&p, &x0, DEFAULT_TAU, 200, 3).unwrap();
        let spread = s
            .iter()
            .flat_map(|a| s.iter().map(move |b| (a - b).norm()))
            .fold(0.0, f64::max);
        assert!(spread > 1e-6);
        let probes = random_unit_directions(2, 200, 77);
        for g in &s {
            for (k, d) in probes.iter().enumerate() {
                let y = &x0 + d * (0.01 + k as f64 * 0.01);
                assert!(support_margin(&p, f0, &x0, g, &y).unwrap() >= -1e-10);
            }
        }
    }

    #[test]
    fn nondegenerate_directional_is_gradient_dot() {
        let p = build_random(2, &Architecture::uniform(3, 5, 2, 1, 1, 2)).unwrap();
        let x = DVector::from_vec(vec![0.4, 0.1, -0.7]);
        let g = gradient(&p, &x, DEFAULT_TAU).unwrap();
        let d = DVector::from_vec(vec![0.2, -0.4, 0.3]);
        let r = directional_derivative(&p, &x, &d, DEFAULT_TAU, 8, 0).unwrap();
        let expected = g.dot(&d);
        assert!((r.dual_max - expected).abs() <= 1e-12);
        assert!((r.primal - expected).abs() <= 1e-12);
        assert!((r.canonical_value - expected).abs() <= 1e-12);
    }

    #[test]
    fn conic_kink_directional() {
        let (p, x0) = conic_only(0.8);
        for d in random_unit_directions(2, 20, 1) {
            let r = directional_derivative(&p, &x0, &d, DEFAULT_TAU, 16, 2).unwrap();
            let exact = 0.8 * (&p.cone[0].a * &d).norm();
            assert!((r.primal - exact).abs() <= 1e-15);
            assert!((r.dual_max - exact).abs() <= 1e-12);
            assert_eq!(r.canonical_value, 0.0);
        }
        assert_eq!(
            canonical_gap_fraction(&p, &x0, 50, DEFAULT_TAU, 3).unwrap(),
            1.0
        );
    }

    #[test]
    fn homogeneity() {
        let (p, x0) = build_degenerate_2d(DegeneracySpec::default());
        let d = DVector::from_vec(vec![-0.3, 0.9]);
        let r1 = directional_derivative(&p, &x0, &d, DEFAULT_TAU, 32, 4).unwrap();
        let r2 = directional_derivative(&p, &x0, &(&d * 3.5), DEFAULT_TAU, 32, 4).unwrap();
        assert!((r2.dual_max - 3.5 * r1.dual_max).abs() <= 1e-12);
        assert!((r2.primal - 3.5 * r1.primal).abs() <= 1e-12);
        assert!((r2.canonical_value - 3.5 * r1.canonical_value).abs() <= 1e-12);
        assert!(directional_derivative(&p, &x0, &DVector::zeros(2), DEFAULT_TAU, 4, 0).is_err());
    }

    #[test]
    fn nondegenerate_gap_fraction_is_zero() {
        let p = build_random(2, &Architecture::uniform(3, 5, 2, 1, 1, 2)).unwrap();
        let x = DVector::from_vec(vec![0.4, 0.1, -0.7]);
        assert_eq!(
            canonical_gap_fraction(&p, &x, 30, DEFAULT_TAU, 0).unwrap(),
            0.0
        );
    }
}
