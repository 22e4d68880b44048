//! White-box downstream inference.
//!
//! Solves `min_x F_y(x) = f(x) + (beta/2) |x - y|^2` by gradient descent or damped Newton
//! with Armijo backtracking. The white-box variants take derivatives from the canonical
//! multipliers and the closed-form local Hessian; the baselines run the same update rules
//! on finite-difference derivatives.

use std::time::Instant;

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};

use crate::curvature::{hessian_matrix, local_gradient, min_eigenvalue};
use crate::dual::{canonical, readout};
use crate::error::{Error, Result};
use crate::model::{degeneracy_report, SocIcnnParams, DEFAULT_TAU};
use crate::oracle::{fd_gradient, fd_hessian, DEFAULT_GRADIENT_STEP, DEFAULT_HESSIAN_STEP};
use crate::{Matrix, Vector};

/// Armijo backtracking parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LineSearch {
    pub armijo: f64,
    pub shrink: f64,
    pub max_backtracks: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        LineSearch {
            armijo: 1e-4,
            shrink: 0.5,
            max_backtracks: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    /// Weight of the proximal term; `F_y` is `beta`-strongly convex.
    pub beta: f64,
    /// Newton damping added to the diagonal.
    pub damping: f64,
    pub line_search: LineSearch,
    /// Iteration cap for gradient descent.
    pub max_iters_gd: usize,
    /// Iteration cap for Newton.
    pub max_iters_newton: usize,
    /// Stop once the gradient norm is at most this.
    pub grad_tol: f64,
    /// Stop once an accepted step decreases the objective by at most this.
    pub progress_tol: f64,
    pub tau: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            beta: 10.0,
            damping: 1e-6,
            line_search: LineSearch::default(),
            max_iters_gd: 2000,
            max_iters_newton: 200,
            grad_tol: 1e-4,
            progress_tol: 1e-12,
            tau: DEFAULT_TAU,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        let ls = &self.line_search;
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.damping > 0.0 && self.damping.is_finite()) {
            return bad("damping must be positive");
        }
        if !(ls.shrink > 0.0 && ls.shrink < 1.0) {
            return bad("shrink must lie in (0, 1)");
        }
        if !(ls.armijo > 0.0 && ls.armijo < 1.0) {
            return bad("armijo constant must lie in (0, 1)");
        }
        if !(self.grad_tol >= 0.0 && self.progress_tol >= 0.0 && self.tau >= 0.0) {
            return bad("tolerances must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "whitebox-gd")]
    WhiteboxGd,
    #[serde(rename = "whitebox-newton")]
    WhiteboxNewton,
    #[serde(rename = "fd-gd")]
    FdGd,
    #[serde(rename = "fd-newton")]
    FdNewton,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::WhiteboxGd,
        Method::WhiteboxNewton,
        Method::FdGd,
        Method::FdNewton,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::WhiteboxGd => "whitebox-gd",
            Method::WhiteboxNewton => "whitebox-newton",
            Method::FdGd => "fd-gd",
            Method::FdNewton => "fd-newton",
        }
    }

    pub fn is_newton(self) -> bool {
        matches!(self, Method::WhiteboxNewton | Method::FdNewton)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub objective: f64,
    pub grad_norm: f64,
}

/// Trajectory summary of one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceReport {
    pub method: Method,
    pub x: Vector,
    pub objective: f64,
    /// Objective minus the best objective any method reached on the same query; NaN until
    /// [`assign_gaps`] runs.
    pub gap_to_best: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub backtracks: usize,
    pub wall_time_ms: f64,
    /// Time spent constructing gradients and Hessians.
    pub derivative_time_ms: f64,
    /// Objective and gradient norm at every iterate, starting with the initial point.
    pub trace: Vec<IterationRecord>,
    pub line_search_failed: bool,
    /// Newton iterations whose Hessian was not positive definite and fell back to `-grad`.
    pub hessian_fallbacks: usize,
}

/// `F_y(x)` and its canonical (sub)gradient.
pub fn objective(
    params: &SocIcnnParams,
    y: &Vector,
    beta: f64,
    x: &Vector,
    tau: f64,
) -> Result<(f64, Vector)> {
    let trace = params.forward(x)?;
    let diff = x - y;
    let value = trace.value + 0.5 * beta * diff.norm_squared();
    let g = readout(params, &canonical(params, &trace, tau))? + diff * beta;
    Ok((value, g))
}

fn objective_value(params: &SocIcnnParams, y: &Vector, beta: f64, x: &Vector) -> Result<f64> {
    Ok(params.value(x)? + 0.5 * beta * (x - y).norm_squared())
}

/// Hessian of `F_y`: module curvature plus `beta I`. At a degenerate iterate the vanishing
/// conic modules are dropped, which is the curvature of the adjacent nondegenerate branch.
pub fn objective_hessian(
    params: &SocIcnnParams,
    beta: f64,
    x: &Vector,
    tau: f64,
) -> Result<Matrix> {
    let trace = params.forward(x)?;
    let n = x.len();
    Ok(hessian_matrix(params, &trace, tau) + DMatrix::identity(n, n) * beta)
}

enum Derivatives<'a> {
    WhiteBox,
    FiniteDifference(&'a dyn Fn(&Vector) -> f64),
}

struct Problem<'a> {
    params: &'a SocIcnnParams,
    y: &'a Vector,
    config: &'a InferenceConfig,
}

impl Problem<'_> {
    fn value(&self, x: &Vector) -> Result<f64> {
        objective_value(self.params, self.y, self.config.beta, x)
    }

    fn gradient(&self, src: &Derivatives, x: &Vector) -> Result<Vector> {
        match src {
            Derivatives::WhiteBox => {
                Ok(objective(self.params, self.y, self.config.beta, x, self.config.tau)?.1)
            }
            Derivatives::FiniteDifference(f) => fd_gradient(f, x, DEFAULT_GRADIENT_STEP),
        }
    }

    fn hessian(&self, src: &Derivatives, x: &Vector) -> Result<Matrix> {
        match src {
            Derivatives::WhiteBox => {
                objective_hessian(self.params, self.config.beta, x, self.config.tau)
            }
            Derivatives::FiniteDifference(f) => fd_hessian(
                |z| fd_gradient(f, z, DEFAULT_GRADIENT_STEP).unwrap_or_else(|_| z * f64::NAN),
                x,
                DEFAULT_HESSIAN_STEP,
            ),
        }
    }
}

fn run(
    params: &SocIcnnParams,
    y: &Vector,
    config: &InferenceConfig,
    method: Method,
) -> Result<InferenceReport> {
    config.validate()?;
    if y.len() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "query has length {}, expected {}",
            y.len(),
            params.input_dim()
        )));
    }
    let start = Instant::now();
    let problem = Problem { params, y, config };
    let value_fn = |x: &Vector| problem.value(x).unwrap_or(f64::NAN);
    let src = match method {
        Method::WhiteboxGd | Method::WhiteboxNewton => Derivatives::WhiteBox,
        Method::FdGd | Method::FdNewton => Derivatives::FiniteDifference(&value_fn),
    };
    let max_iters = if method.is_newton() {
        config.max_iters_newton
    } else {
        config.max_iters_gd
    };
    let ls = config.line_search;

    let mut x = y.clone();
    let mut f = problem.value(&x)?;
    let mut deriv_time = 0.0;
    let mut timed = |t0: Instant| deriv_time += t0.elapsed().as_secs_f64() * 1e3;

    let t0 = Instant::now();
    let mut g = problem.gradient(&src, &x)?;
    timed(t0);
    let mut trace = vec![IterationRecord {
        objective: f,
        grad_norm: g.norm(),
    }];
    let mut iterations = 0;
    let mut backtracks = 0;
    let mut line_search_failed = false;
    let mut hessian_fallbacks = 0;

    while iterations < max_iters && g.norm() > config.grad_tol {
        let mut dir = if method.is_newton() {
            let t0 = Instant::now();
            let mut h = problem.hessian(&src, &x)?;
            timed(t0);
            let n = x.len();
            for i in 0..n {
                h[(i, i)] += config.damping;
            }
            match Cholesky::new(h) {
                Some(chol) => -chol.solve(&g),
                None if matches!(src, Derivatives::WhiteBox) => {
                    return Err(Error::SolveFailure(
                        "damped Hessian is not positive definite".into(),
                    ))
                }
                None => {
                    hessian_fallbacks += 1;
                    -&g
                }
            }
        } else {
            -&g
        };
        let mut slope = g.dot(&dir);
        if slope >= 0.0 || slope.is_nan() {
            // Not a descent direction (possible with finite-difference curvature).
            hessian_fallbacks += 1;
            dir = -&g;
            slope = -g.norm_squared();
        }

        let mut eta = 1.0;
        let mut accepted = None;
        for _ in 0..=ls.max_backtracks {
            let candidate = &x + &dir * eta;
            let fc = problem.value(&candidate)?;
            if fc <= f + ls.armijo * eta * slope {
                accepted = Some((candidate, fc));
                break;
            }
            backtracks += 1;
            eta *= ls.shrink;
        }
        let Some((x_new, f_new)) = accepted else {
            line_search_failed = true;
            break;
        };

        let progress = f - f_new;
        x = x_new;
        f = f_new;
        iterations += 1;
        let t0 = Instant::now();
        g = problem.gradient(&src, &x)?;
        timed(t0);
        trace.push(IterationRecord {
            objective: f,
            grad_norm: g.norm(),
        });
        if progress <= config.progress_tol {
            break;
        }
    }

    Ok(InferenceReport {
        method,
        x,
        objective: f,
        gap_to_best: f64::NAN,
        grad_norm: g.norm(),
        iterations,
        backtracks,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
        derivative_time_ms: deriv_time,
        trace,
        line_search_failed,
        hessian_fallbacks,
    })
}

/// Gradient descent with canonical readout gradients.
pub fn whitebox_gd(
    params: &SocIcnnParams,
    y: &Vector,
    config: &InferenceConfig,
) -> Result<InferenceReport> {
    run(params, y, config, Method::WhiteboxGd)
}

/// Damped Newton with readout gradients and the closed-form local Hessian.
pub fn whitebox_newton(
    params: &SocIcnnParams,
    y: &Vector,
    config: &InferenceConfig,
) -> Result<InferenceReport> {
    run(params, y, config, Method::WhiteboxNewton)
}

/// Gradient descent on central-difference gradients.
pub fn baseline_fd_gd(
    params: &SocIcnnParams,
    y: &Vector,
    config: &InferenceConfig,
) -> Result<InferenceReport> {
    run(params, y, config, Method::FdGd)
}

/// Damped Newton on finite-difference gradients and Hessians.
pub fn baseline_fd_newton(
    params: &SocIcnnParams,
    y: &Vector,
    config: &InferenceConfig,
) -> Result<InferenceReport> {
    run(params, y, config, Method::FdNewton)
}

pub fn solve(
    params: &SocIcnnParams,
    y: &Vector,
    config: &InferenceConfig,
    method: Method,
) -> Result<InferenceReport> {
    run(params, y, config, method)
}

/// Sets `gap_to_best` on reports that solved the same query.
pub fn assign_gaps(reports: &mut [InferenceReport]) {
    let best = reports
        .iter()
        .map(|r| r.objective)
        .fold(f64::INFINITY, f64::min);
    for r in reports {
        r.gap_to_best = r.objective - best;
    }
}

/// Derivative consistency and structural margins at a solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutDiagnostics {
    /// `|dual readout - local branch gradient|`.
    pub gradient_error: f64,
    pub gradient_rel_error: f64,
    /// Frobenius distance between the closed-form Hessian and central differences of the
    /// readout gradient.
    pub hessian_error: f64,
    pub hessian_rel_error: f64,
    pub min_relu_margin: f64,
    pub min_conic_norm: f64,
}

/// Diagnostics at a nondegenerate point. The finite-difference step is capped at a tenth
/// of the smallest ReLU margin so the stencil stays on the local branch.
pub fn readout_diagnostics(
    params: &SocIcnnParams,
    x: &Vector,
    tau: f64,
) -> Result<ReadoutDiagnostics> {
    let trace = params.forward(x)?;
    let report = degeneracy_report(&trace, tau);
    if !report.is_nondegenerate {
        return Err(Error::DegenerateInput {
            tau,
            relu: report.relu_zero_coords.len(),
            conic: report.conic_zero_modules.len(),
        });
    }
    let g_dual = readout(params, &canonical(params, &trace, tau))?;
    let g_local = local_gradient(params, x, tau)?;
    let h = hessian_matrix(params, &trace, tau);
    let margin = trace.min_relu_margin();
    let step = DEFAULT_HESSIAN_STEP.min(0.1 * margin);
    let h_fd = fd_hessian(
        |z| {
            params
                .forward(z)
                .and_then(|t| readout(params, &canonical(params, &t, tau)))
                .unwrap_or_else(|_| z * f64::NAN)
        },
        x,
        step,
    )?;
    let gradient_error = (&g_dual - &g_local).norm();
    let hessian_error = (&h - &h_fd).norm();
    debug_assert!(min_eigenvalue(&h) >= -1e-10);
    Ok(ReadoutDiagnostics {
        gradient_error,
        gradient_rel_error: gradient_error / g_local.norm().max(f64::MIN_POSITIVE),
        hessian_error,
        hessian_rel_error: hessian_error / h.norm().max(f64::MIN_POSITIVE),
        min_relu_margin: margin,
        min_conic_norm: trace.min_conic_norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_random, Architecture, Layer, QuadModule};
    use nalgebra::DVector;

    /// `f(x) = |x|^2 / 2` with an inactive ReLU unit.
    fn half_squared_norm(d: usize) -> SocIcnnParams {
        SocIcnnParams {
            layers: vec![Layer {
                w: DMatrix::zeros(1, d),
                u: DMatrix::zeros(1, 0),
                b: DVector::from_element(1, -1.0),
            }],
            c: DVector::zeros(1),
            v: DVector::zeros(d),
            b0: 0.0,
            quad: vec![QuadModule {
                alpha: 1.0,
                b: DMatrix::identity(d, d),
                e: DVector::zeros(d),
            }],
            cone: vec![],
            seed: None,
        }
    }

    #[test]
    fn objective_closed_form() {
        let p = half_squared_norm(2);
        let y = DVector::from_vec(vec![2.0, 0.0]);
        let (v, g) = objective(&p, &y, 1.0, &DVector::zeros(2), DEFAULT_TAU).unwrap();
        assert_eq!(v, 2.0);
        assert_eq!(g, DVector::from_vec(vec![-2.0, 0.0]));
        let (_, g) = objective(&p, &y, 1.0, &y, DEFAULT_TAU).unwrap();
        assert_eq!(g, y);
    }

    #[test]
    fn gd_and_newton_reach_closed_form_minimizer() {
        let p = half_squared_norm(3);
        let y = DVector::from_vec(vec![0.7, -1.2, 2.5]);
        let beta = 10.0;
        let cfg = InferenceConfig {
            beta,
            ..Default::default()
        };
        let x_star = &y * (beta / (1.0 + beta));
        let gd = whitebox_gd(&p, &y, &cfg).unwrap();
        assert!(gd.grad_norm <= cfg.grad_tol);
        assert!((&gd.x - &x_star).norm() <= gd.grad_norm / (1.0 + beta) + 1e-15);
        let nt = whitebox_newton(&p, &y, &cfg).unwrap();
        assert_eq!(nt.iterations, 1);
        assert!((&nt.x - &x_star).norm() <= 1e-6);
        // Strong convexity bound from the final gradient.
        assert!((&nt.x - &x_star).norm() <= nt.grad_norm / beta + 1e-15);
    }

    #[test]
    fn zero_iteration_budget() {
        let p = half_squared_norm(2);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let cfg = InferenceConfig {
            max_iters_gd: 0,
            ..Default::default()
        };
        let r = whitebox_gd(&p, &y, &cfg).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.x, y);
        assert_eq!(r.objective, objective_value(&p, &y, cfg.beta, &y).unwrap());
        assert_eq!(r.trace.len(), 1);
    }

    #[test]
    fn fd_baselines_track_whitebox_on_smooth_problem() {
        let p = half_squared_norm(3);
        let y = DVector::from_vec(vec![0.7, -1.2, 2.5]);
        let cfg = InferenceConfig::default();
        for (wb, fd) in [
            (
                whitebox_gd(&p, &y, &cfg).unwrap(),
                baseline_fd_gd(&p, &y, &cfg).unwrap(),
            ),
            (
                whitebox_newton(&p, &y, &cfg).unwrap(),
                baseline_fd_newton(&p, &y, &cfg).unwrap(),
            ),
        ] {
            assert!((&wb.x - &fd.x).norm() <= 1e-5);
            assert!((wb.objective - fd.objective).abs() <= 1e-8);
        }
    }

    #[test]
    fn descent_is_monotone_on_random_model() {
        let p = build_random(3, &Architecture::uniform(6, 12, 3, 1, 2, 4)).unwrap();
        let y = DVector::from_vec(vec![0.5, -0.3, 1.1, -0.9, 0.2, 0.4]);
        let cfg = InferenceConfig::default();
        for method in Method::ALL {
            let r = solve(&p, &y, &cfg, method).unwrap();
            for w in r.trace.windows(2) {
                assert!(w[1].objective <= w[0].objective + 1e-14, "{method:?}");
            }
        }
    }

    #[test]
    fn newton_system_is_strongly_convex() {
        let p = build_random(3, &Architecture::uniform(6, 12, 3, 1, 2, 4)).unwrap();
        let cfg = InferenceConfig::default();
        let x = DVector::from_vec(vec![0.5, -0.3, 1.1, -0.9, 0.2, 0.4]);
        let mut h = objective_hessian(&p, cfg.beta, &x, cfg.tau).unwrap();
        for i in 0..6 {
            h[(i, i)] += cfg.damping;
        }
        assert!(min_eigenvalue(&h) >= cfg.beta + cfg.damping - 1e-10);
    }

    #[test]
    fn config_validation() {
        let ok = InferenceConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            InferenceConfig { beta: 0.0, ..ok },
            InferenceConfig { damping: 0.0, ..ok },
            InferenceConfig {
                line_search: LineSearch {
                    shrink: 1.0,
                    ..ok.line_search
                },
                ..ok
            },
            InferenceConfig {
                line_search: LineSearch {
                    armijo: 0.0,
                    ..ok.line_search
                },
                ..ok
            },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn gaps_are_relative_to_best() {
        let p = half_squared_norm(2);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let cfg = InferenceConfig::default();
        let mut rs: Vec<_> = Method::ALL
            .iter()
            .map(|&m| solve(&p, &y, &cfg, m).unwrap())
            .collect();
        assign_gaps(&mut rs);
        assert!(rs.iter().all(|r| r.gap_to_best >= 0.0));
        assert!(rs.iter().any(|r| r.gap_to_best == 0.0));
    }
}
