//! Finite-difference and sampling oracles.
//!
//! Everything here treats the function under test as a black box; nothing reaches into the
//! multiplier or curvature code, so the oracles stay independent of what they check.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

pub const DEFAULT_GRADIENT_STEP: f64 = 1e-6;
pub const DEFAULT_HESSIAN_STEP: f64 = 1e-5;
pub const DEFAULT_DIRECTIONAL_STEP: f64 = 1e-7;

fn check_step(step: f64) -> Result<()> {
    if step > 0.0 && step.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )))
    }
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteEvaluation)
    }
}

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn fd_gradient<F>(f: F, x: &Vector, step: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> f64,
{
    check_step(step)?;
    let mut g = DVector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let fp = finite(f(&probe))?;
        probe[i] = x[i] - step;
        let fm = finite(f(&probe))?;
        probe[i] = x[i];
        g[i] = (fp - fm) / (2.0 * step);
    }
    Ok(g)
}

/// One-sided directional difference `(f(x + h d) - f(x)) / h`.
pub fn fd_directional<F>(f: F, x: &Vector, d: &Vector, step: f64) -> Result<f64>
where
    F: Fn(&Vector) -> f64,
{
    check_step(step)?;
    let f0 = finite(f(x))?;
    let f1 = finite(f(&(x + d * step)))?;
    Ok((f1 - f0) / step)
}

/// Central differences of a gradient field, symmetrized.
pub fn fd_hessian<G>(grad: G, x: &Vector, step: f64) -> Result<Matrix>
where
    G: Fn(&Vector) -> Vector,
{
    check_step(step)?;
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut probe = x.clone();
    for i in 0..n {
        probe[i] = x[i] + step;
        let gp = grad(&probe);
        probe[i] = x[i] - step;
        let gm = grad(&probe);
        probe[i] = x[i];
        if gp.len() != n || gm.len() != n {
            return Err(Error::DimensionMismatch(
                "gradient field returned a vector of the wrong length".into(),
            ));
        }
        for j in 0..n {
            h[(i, j)] = finite((gp[j] - gm[j]) / (2.0 * step))?;
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Largest convexity violation `f(t x + (1-t) y) - t f(x) - (1-t) f(y)` over random triples,
/// clamped below at zero. Points are Gaussian with standard deviation `scale`.
pub fn convexity_probe<F>(f: F, dim: usize, n_triples: usize, seed: u64, scale: f64) -> f64
where
    F: Fn(&Vector) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_triples {
        let x = DVector::from_iterator(
            dim,
            (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)),
        );
        let y = DVector::from_iterator(
            dim,
            (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)),
        );
        let t: f64 = rng.random();
        let mid = &x * t + &y * (1.0 - t);
        let gap = f(&mid) - t * f(&x) - (1.0 - t) * f(&y);
        worst = worst.max(gap);
    }
    worst
}
