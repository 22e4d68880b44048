//! Local second-order structure around nondegenerate inputs.
//!
//! Near a nondegenerate anchor the ReLU activation pattern is frozen, so the backbone is a
//! fixed affine map and
//!
//! ```text
//! f(x) = a.x + b + sum_h (alpha_h / 2) |q_h(x)|^2 + sum_g lambda_g |u_g(x)|
//! grad f(x) = a + sum_h alpha_h B_h^T q_h + sum_g lambda_g A_g^T u_g / |u_g|
//! hess f(x) = sum_h alpha_h B_h^T B_h + sum_g lambda_g A_g^T (I - uu^T/|u|^2) A_g / |u_g|
//! ```
//!
//! The slope `a` is built here by forward composition of the masked layer maps, which is a
//! separate code path from the backward multiplier recursion in [`crate::dual`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dual::{canonical, readout};
use crate::error::{Error, Result};
use crate::model::{degeneracy_report, ForwardTrace, SocIcnnParams};
use crate::{Matrix, Vector};

/// ReLU activation pattern plus which conic residuals are nonzero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchSignature {
    pub relu_active: Vec<Vec<bool>>,
    pub conic_nonzero: Vec<bool>,
}

impl BranchSignature {
    pub fn of(trace: &ForwardTrace, tau: f64) -> Self {
        BranchSignature {
            relu_active: trace
                .a
                .iter()
                .map(|a| a.iter().map(|&v| v > tau).collect())
                .collect(),
            conic_nonzero: trace.u.iter().map(|u| u.norm() > tau).collect(),
        }
    }
}

/// Local gradient and Hessian at a nondegenerate anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureModel {
    pub anchor: Vector,
    pub gradient: Vector,
    pub hessian: Matrix,
    pub signature: BranchSignature,
    pub min_eigenvalue: f64,
}

fn require_nondegenerate(trace: &ForwardTrace, tau: f64) -> Result<()> {
    let report = degeneracy_report(trace, tau);
    if report.is_nondegenerate {
        Ok(())
    } else {
        Err(Error::DegenerateInput {
            tau,
            relu: report.relu_zero_coords.len(),
            conic: report.conic_zero_modules.len(),
        })
    }
}

/// Smallest eigenvalue of the symmetrized matrix `(M + M^T) / 2`.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.min()
}

/// Curvature of the quadratic and conic modules at a trace. Conic modules whose residual
/// is within `tau` of zero are left out.
pub fn hessian_matrix(params: &SocIcnnParams, trace: &ForwardTrace, tau: f64) -> Matrix {
    let n = params.input_dim();
    let mut h = DMatrix::zeros(n, n);
    for m in &params.quad {
        h += m.b.tr_mul(&m.b) * m.alpha;
    }
    for (m, u) in params.cone.iter().zip(&trace.u) {
        let norm = u.norm();
        if norm <= tau {
            continue;
        }
        let dir = u / norm;
        let proj = m.a.tr_mul(&dir);
        let gram = m.a.tr_mul(&m.a);
        h += (gram - &proj * proj.transpose()) * (m.lambda / norm);
    }
    (&h + h.transpose()) * 0.5
}

/// Exact Hessian and canonical gradient at a nondegenerate input.
pub fn hessian(params: &SocIcnnParams, x: &Vector, tau: f64) -> Result<CurvatureModel> {
    let trace = params.forward(x)?;
    require_nondegenerate(&trace, tau)?;
    let hessian = hessian_matrix(params, &trace, tau);
    let gradient = readout(params, &canonical(params, &trace, tau))?;
    Ok(CurvatureModel {
        anchor: x.clone(),
        gradient,
        min_eigenvalue: min_eigenvalue(&hessian),
        hessian,
        signature: BranchSignature::of(&trace, tau),
    })
}

/// Slope and intercept of the frozen ReLU branch, including `v.x + b0`.
pub fn local_affine_constants(
    params: &SocIcnnParams,
    x_bar: &Vector,
    tau: f64,
) -> Result<(Vector, f64)> {
    let trace = params.forward(x_bar)?;
    require_nondegenerate(&trace, tau)?;
    Ok(affine_branch(params, &trace, tau))
}

/// Composes `z_l = D_l (W_l x + U_l z_{l-1} + b_l)` into `z_L = M x + m` with the masks
/// `D_l` frozen at the trace.
fn affine_branch(params: &SocIcnnParams, trace: &ForwardTrace, tau: f64) -> (Vector, f64) {
    let d0 = params.input_dim();
    let mut slope: Matrix = DMatrix::zeros(0, d0);
    let mut offset: Vector = DVector::zeros(0);
    for (layer, a) in params.layers.iter().zip(&trace.a) {
        let mut next_slope = &layer.w + &layer.u * &slope;
        let mut next_offset = &layer.u * &offset + &layer.b;
        for (i, &ai) in a.iter().enumerate() {
            if ai <= tau {
                next_slope.row_mut(i).fill(0.0);
                next_offset[i] = 0.0;
            }
        }
        slope = next_slope;
        offset = next_offset;
    }
    let a_bar = &params.v + slope.tr_mul(&params.c);
    let b_bar = params.b0 + params.c.dot(&offset);
    (a_bar, b_bar)
}

/// Gradient from the local affine-curvature decomposition.
pub fn local_gradient(params: &SocIcnnParams, x: &Vector, tau: f64) -> Result<Vector> {
    let trace = params.forward(x)?;
    require_nondegenerate(&trace, tau)?;
    let (mut g, _) = affine_branch(params, &trace, tau);
    for (m, q) in params.quad.iter().zip(&trace.q) {
        g += m.b.tr_mul(q) * m.alpha;
    }
    for (m, u) in params.cone.iter().zip(&trace.u) {
        g += m.a.tr_mul(u) * (m.lambda / u.norm());
    }
    Ok(g)
}

/// Outcome of perturbing an anchor on a sphere of fixed radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticModelStats {
    pub trials: usize,
    pub retained: usize,
    pub retained_rate: f64,
    /// Mean of `|f(x+d) - f(x) - g.d - d^T H d / 2|` over retained perturbations.
    pub mean_abs_residual: f64,
}

/// Second-order Taylor residual of the local model at `x_bar` over random perturbations
/// of norm `radius`. A perturbation is retained when it stays nondegenerate with the same
/// branch signature as the anchor.
pub fn quadratic_model_residual(
    params: &SocIcnnParams,
    x_bar: &Vector,
    radius: f64,
    trials: usize,
    tau: f64,
    seed: u64,
) -> Result<QuadraticModelStats> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "radius must be positive, got {radius}"
        )));
    }
    let model = hessian(params, x_bar, tau)?;
    let f0 = params.value(x_bar)?;
    let d0 = params.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut retained = 0usize;
    let mut total = 0.0;
    for _ in 0..trials {
        let dir = loop {
            let v =
                DVector::from_iterator(d0, (0..d0).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let n = v.norm();
            if n > 1e-12 {
                break v / n;
            }
        };
        let delta = dir * radius;
        let trace = params.forward(&(x_bar + &delta))?;
        if !degeneracy_report(&trace, tau).is_nondegenerate
            || BranchSignature::of(&trace, tau) != model.signature
        {
            continue;
        }
        retained += 1;
        let predicted =
            f0 + model.gradient.dot(&delta) + 0.5 * delta.dot(&(&model.hessian * &delta));
        total += (trace.value - predicted).abs();
    }
    Ok(QuadraticModelStats {
        trials,
        retained,
        retained_rate: if trials == 0 {
            0.0
        } else {
            retained as f64 / trials as f64
        },
        mean_abs_residual: if retained == 0 {
            f64::NAN
        } else {
            total / retained as f64
        },
    })
}
