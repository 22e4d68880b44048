//! The four experiment runners.
//!
//! Each runner returns a typed result that renders to tables and evaluates its own
//! pass/fail thresholds. Random streams are derived from the config seed and a fixed
//! stream index, so adding samples never reshuffles earlier ones.

use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use soc_icnn::curvature::{
    local_gradient, min_eigenvalue, quadratic_model_residual, QuadraticModelStats,
};
use soc_icnn::dual::{canonical, readout, sample_optimal_branches};
use soc_icnn::geometry::{
    canonical_subgradient, directional_derivative_at, random_unit_directions, support_margin,
    CANONICAL_GAP_THRESHOLD,
};
use soc_icnn::inference::{assign_gaps, readout_diagnostics, solve, InferenceReport, Method};
use soc_icnn::model::{build_degenerate_2d, build_random, degeneracy_report, ForwardTrace};
use soc_icnn::oracle::{fd_directional, fd_gradient, fd_hessian};
use soc_icnn::{SocIcnnParams, Vector};

use crate::config::{Exp1Config, Exp2Config, Exp3Config, Exp4Config};
use crate::error::CliError;
use crate::table::Table;

/// Seed of stream `stream` under `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    DVector::from_iterator(
        n,
        (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)),
    )
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn cosine(a: &Vector, b: &Vector) -> f64 {
    a.dot(b) / (a.norm() * b.norm())
}

/// One thresholded outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn at_most(name: &str, value: f64, limit: f64) -> Self {
        Check::new(name, value <= limit, format!("{value:e} <= {limit:e}"))
    }

    fn at_least(name: &str, value: f64, limit: f64) -> Self {
        Check::new(name, value >= limit, format!("{value:e} >= {limit:e}"))
    }
}

fn min_margin(trace: &ForwardTrace) -> f64 {
    trace.min_relu_margin().min(trace.min_conic_norm())
}

// ---------------------------------------------------------------------------------------

/// Gradient agreement between two code paths over the retained samples.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientComparison {
    pub comparison: &'static str,
    pub l2_err: f64,
    pub rel_err: f64,
    /// Smallest cosine similarity over the samples.
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp1Result {
    pub trials: usize,
    pub retained: usize,
    pub comparisons: Vec<GradientComparison>,
    /// Total canonical readout time over retained samples.
    pub readout_ms: f64,
    pub total_ms: f64,
}

impl Exp1Result {
    pub fn retained_rate(&self) -> f64 {
        if self.trials == 0 {
            f64::NAN
        } else {
            self.retained as f64 / self.trials as f64
        }
    }

    pub fn comparison(&self, name: &str) -> Option<&GradientComparison> {
        self.comparisons.iter().find(|c| c.comparison == name)
    }

    pub fn tables(&self) -> Vec<Table> {
        let mut t = Table::new(
            "exp1",
            &[
                "comparison",
                "trials",
                "retained_rate",
                "grad_l2_err",
                "grad_rel_err",
                "cosine_sim",
                "runtime_ms",
            ],
        );
        for c in &self.comparisons {
            t.push(vec![
                c.comparison.into(),
                self.trials.into(),
                self.retained_rate().into(),
                c.l2_err.into(),
                c.rel_err.into(),
                c.cosine.into(),
                self.readout_ms.into(),
            ]);
        }
        vec![t]
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut out = vec![Check::at_least(
            "exp1.retained_rate",
            self.retained_rate(),
            1.0,
        )];
        let Some(exact) = self.comparison("readout_vs_local") else {
            out.push(Check::new(
                "exp1.samples",
                false,
                "no retained samples".into(),
            ));
            return out;
        };
        out.push(Check::at_most("exp1.exact_l2", exact.l2_err, 1e-12));
        out.push(Check::at_least(
            "exp1.exact_cosine",
            exact.cosine,
            1.0 - 1e-12,
        ));
        for name in ["readout_vs_fd", "local_vs_fd"] {
            if let Some(c) = self.comparison(name) {
                out.push(Check::at_most(&format!("exp1.{name}_l2"), c.l2_err, 1e-5));
            }
        }
        out
    }
}

pub fn run_exp1(cfg: &Exp1Config) -> Result<Exp1Result, CliError> {
    let start = Instant::now();
    let params = build_random(cfg.seed, &cfg.arch.architecture())?;
    let d0 = params.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut retained = 0;
    let mut readout_ms = 0.0;
    let mut pairs: [Vec<(f64, f64, f64)>; 3] = Default::default();
    for _ in 0..cfg.samples {
        let x = gaussian(&mut rng, d0, cfg.input_scale);
        let trace = params.forward(&x)?;
        if !degeneracy_report(&trace, cfg.tau).is_nondegenerate {
            continue;
        }
        retained += 1;
        let t0 = Instant::now();
        let g_dual = readout(&params, &canonical(&params, &trace, cfg.tau))?;
        readout_ms += ms(t0);
        let g_local = local_gradient(&params, &x, cfg.tau)?;
        let g_fd = fd_gradient(|y| params.value(y).unwrap_or(f64::NAN), &x, cfg.fd_step)?;
        for (slot, (a, b)) in
            pairs
                .iter_mut()
                .zip([(&g_dual, &g_local), (&g_dual, &g_fd), (&g_local, &g_fd)])
        {
            let err = (a - b).norm();
            slot.push((err, err / b.norm(), cosine(a, b)));
        }
    }
    let names = ["readout_vs_local", "readout_vs_fd", "local_vs_fd"];
    let comparisons = if retained == 0 {
        Vec::new()
    } else {
        names
            .iter()
            .zip(&pairs)
            .map(|(&comparison, v)| GradientComparison {
                comparison,
                l2_err: mean(&v.iter().map(|e| e.0).collect::<Vec<_>>()),
                rel_err: mean(&v.iter().map(|e| e.1).collect::<Vec<_>>()),
                cosine: v.iter().map(|e| e.2).fold(f64::INFINITY, f64::min),
            })
            .collect()
    };
    Ok(Exp1Result {
        trials: cfg.samples,
        retained,
        comparisons,
        readout_ms,
        total_ms: ms(start),
    })
}

// ---------------------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Exp2Result {
    pub trials: usize,
    pub attempts: usize,
    /// Local formula vs canonical readout.
    pub grad_l2_err: f64,
    pub grad_rel_err: f64,
    /// Local formula vs central differences.
    pub grad_fd_err: f64,
    pub hess_fro_err: f64,
    pub hess_rel_err: f64,
    pub min_eig_formula: f64,
    pub min_eig_fd: f64,
    /// Smallest formula eigenvalue over all retained points.
    pub min_eig_formula_worst: f64,
    pub formula_ms: f64,
    pub quad: Vec<(f64, QuadraticModelStats)>,
    pub quad_ms: f64,
}

impl Exp2Result {
    pub fn tables(&self) -> Vec<Table> {
        let mut a = Table::new(
            "exp2_formula",
            &[
                "trials",
                "attempts",
                "grad_l2_err",
                "grad_rel_err",
                "grad_fd_err",
                "hess_fro_err",
                "hess_rel_err",
                "min_eig_formula",
                "min_eig_fd",
                "min_eig_formula_worst",
                "runtime_ms",
            ],
        );
        a.push(vec![
            self.trials.into(),
            self.attempts.into(),
            self.grad_l2_err.into(),
            self.grad_rel_err.into(),
            self.grad_fd_err.into(),
            self.hess_fro_err.into(),
            self.hess_rel_err.into(),
            self.min_eig_formula.into(),
            self.min_eig_fd.into(),
            self.min_eig_formula_worst.into(),
            self.formula_ms.into(),
        ]);
        let mut b = Table::new(
            "exp2_quad",
            &["radius", "trials", "retained_rate", "quad_approx_err"],
        );
        for (r, s) in &self.quad {
            b.push(vec![
                (*r).into(),
                s.trials.into(),
                s.retained_rate.into(),
                s.mean_abs_residual.into(),
            ]);
        }
        vec![a, b]
    }

    /// Hessian checks only.
    pub fn formula_checks(&self) -> Vec<Check> {
        vec![
            Check::new(
                "exp2.trials",
                self.trials > 0,
                format!("{} retained points", self.trials),
            ),
            Check::at_most("exp2.hess_fro_err", self.hess_fro_err, 1e-5),
            Check::at_least(
                "exp2.min_eig_formula_worst",
                self.min_eig_formula_worst,
                -1e-10,
            ),
        ]
    }

    /// Quadratic-model checks; the residual limits apply to the reference radii.
    pub fn quad_checks(&self) -> Vec<Check> {
        let limits = [(1e-4, 1e-12), (3e-4, 1e-11), (1e-3, 1e-9)];
        let mut out = Vec::new();
        for (r, s) in &self.quad {
            out.push(Check::at_least(
                &format!("exp2.retained_rate[{r:e}]"),
                s.retained_rate,
                1.0,
            ));
            if let Some(&(_, lim)) = limits.iter().find(|(lr, _)| lr == r) {
                out.push(Check::at_most(
                    &format!("exp2.quad_err[{r:e}]"),
                    s.mean_abs_residual,
                    lim,
                ));
            }
        }
        let res: Vec<f64> = self.quad.iter().map(|q| q.1.mean_abs_residual).collect();
        out.push(Check::new(
            "exp2.quad_err_increasing",
            res.windows(2).all(|w| w[0] < w[1]),
            format!("{res:?}"),
        ));
        if let (Some(first), Some(last)) = (self.quad.first(), self.quad.last()) {
            if first.0 == 1e-4 && last.0 == 1e-3 {
                let ratio = last.1.mean_abs_residual / first.1.mean_abs_residual;
                out.push(Check::new(
                    "exp2.quad_err_ratio",
                    (1e2..=1e4).contains(&ratio),
                    format!("{ratio:e} in [1e2, 1e4]"),
                ));
            }
        }
        out
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut c = self.formula_checks();
        c.extend(self.quad_checks());
        c
    }
}

pub fn run_exp2(cfg: &Exp2Config) -> Result<Exp2Result, CliError> {
    let params = build_random(cfg.seed, &cfg.arch.architecture())?;
    let d0 = params.input_dim();
    let tau = cfg.tau;
    let grad = |y: &Vector| -> Vector {
        params
            .forward(y)
            .and_then(|t| readout(&params, &canonical(&params, &t, tau)))
            .unwrap_or_else(|_| y * f64::NAN)
    };

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut attempts = 0;
    let (mut g_err, mut g_rel, mut g_fd) = (vec![], vec![], vec![]);
    let (mut h_err, mut h_rel, mut eig, mut eig_fd) = (vec![], vec![], vec![], vec![]);
    while eig.len() < cfg.samples && attempts < cfg.max_attempts {
        attempts += 1;
        let x = gaussian(&mut rng, d0, cfg.input_scale);
        let trace = params.forward(&x)?;
        if min_margin(&trace) < cfg.min_margin.max(tau) {
            continue;
        }
        let local = local_gradient(&params, &x, tau)?;
        let dual = readout(&params, &canonical(&params, &trace, tau))?;
        let fd = fd_gradient(
            |y| params.value(y).unwrap_or(f64::NAN),
            &x,
            cfg.fd_gradient_step,
        )?;
        g_err.push((&local - &dual).norm());
        g_rel.push((&local - &dual).norm() / dual.norm());
        g_fd.push((&local - &fd).norm());
        let h = soc_icnn::curvature::hessian_matrix(&params, &trace, tau);
        let h_fd = fd_hessian(grad, &x, cfg.fd_hessian_step)?;
        h_err.push((&h - &h_fd).norm());
        h_rel.push((&h - &h_fd).norm() / h_fd.norm());
        eig.push(min_eigenvalue(&h));
        eig_fd.push(min_eigenvalue(&h_fd));
    }
    let formula_ms = ms(start);

    let start = Instant::now();
    let mut anchor_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let mut anchor = None;
    for _ in 0..cfg.max_attempts {
        let x = gaussian(&mut anchor_rng, d0, cfg.input_scale);
        if min_margin(&params.forward(&x)?) >= cfg.anchor_margin.max(tau) {
            anchor = Some(x);
            break;
        }
    }
    let anchor = anchor.ok_or_else(|| {
        CliError::Config(format!(
            "no anchor with margin {} found in {} draws",
            cfg.anchor_margin, cfg.max_attempts
        ))
    })?;
    let quad = cfg
        .radii
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            quadratic_model_residual(
                &params,
                &anchor,
                r,
                cfg.perturbations,
                tau,
                derive_seed(cfg.seed, 100 + i as u64),
            )
            .map(|s| (r, s))
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(Exp2Result {
        trials: eig.len(),
        attempts,
        grad_l2_err: mean(&g_err),
        grad_rel_err: mean(&g_rel),
        grad_fd_err: mean(&g_fd),
        hess_fro_err: mean(&h_err),
        hess_rel_err: mean(&h_rel),
        min_eig_formula: mean(&eig),
        min_eig_fd: mean(&eig_fd),
        min_eig_formula_worst: eig.iter().copied().fold(f64::INFINITY, f64::min),
        formula_ms,
        quad,
        quad_ms: ms(start),
    })
}

// ---------------------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Exp3Result {
    pub directions: usize,
    pub branches: usize,
    pub probes: usize,
    pub fd_mean_err: f64,
    pub fd_max_err: f64,
    pub primal_mean_err: f64,
    pub primal_max_err: f64,
    pub canonical_gap_frac: f64,
    /// Largest amount by which a sampled branch slope exceeds the directional maximum,
    /// clamped at zero.
    pub max_violation: f64,
    pub min_support_margin: f64,
    pub canonical_norm: f64,
    pub min_branch_norm: f64,
    /// Sampled branches different from the canonical one whose norm is not strictly larger.
    pub min_norm_ties: usize,
    pub runtime_ms: f64,
}

impl Exp3Result {
    pub fn tables(&self) -> Vec<Table> {
        let mut t = Table::new(
            "exp3",
            &[
                "directions",
                "branches",
                "probes",
                "fd_mean_err",
                "fd_max_err",
                "primal_mean_err",
                "primal_max_err",
                "canonical_gap_frac",
                "max_violation",
                "min_support_margin",
                "canonical_norm",
                "min_branch_norm",
                "min_norm_ties",
                "runtime_ms",
            ],
        );
        t.push(vec![
            self.directions.into(),
            self.branches.into(),
            self.probes.into(),
            self.fd_mean_err.into(),
            self.fd_max_err.into(),
            self.primal_mean_err.into(),
            self.primal_max_err.into(),
            self.canonical_gap_frac.into(),
            self.max_violation.into(),
            self.min_support_margin.into(),
            self.canonical_norm.into(),
            self.min_branch_norm.into(),
            self.min_norm_ties.into(),
            self.runtime_ms.into(),
        ]);
        vec![t]
    }

    pub fn directional_checks(&self) -> Vec<Check> {
        vec![
            Check::at_most("exp3.fd_mean_err", self.fd_mean_err, 5e-8),
            Check::at_most("exp3.fd_max_err", self.fd_max_err, 2e-7),
            Check::at_most("exp3.primal_mean_err", self.primal_mean_err, 1e-11),
        ]
    }

    pub fn validity_checks(&self) -> Vec<Check> {
        vec![
            Check::at_most("exp3.max_violation", self.max_violation, 1e-9),
            Check::at_least("exp3.min_support_margin", self.min_support_margin, -1e-10),
            Check::new(
                "exp3.min_support_margin_positive",
                self.min_support_margin > 0.0,
                format!("{:e} > 0", self.min_support_margin),
            ),
        ]
    }

    pub fn gap_checks(&self) -> Vec<Check> {
        vec![Check::at_least(
            "exp3.canonical_gap_frac",
            self.canonical_gap_frac,
            1.0,
        )]
    }

    pub fn min_norm_checks(&self) -> Vec<Check> {
        vec![Check::new(
            "exp3.min_norm_strict",
            self.min_norm_ties == 0 && self.canonical_norm < self.min_branch_norm,
            format!(
                "canonical {:e} < min sampled {:e}, {} ties",
                self.canonical_norm, self.min_branch_norm, self.min_norm_ties
            ),
        )]
    }

    pub fn checks(&self) -> Vec<Check> {
        let mut c = self.directional_checks();
        c.extend(self.validity_checks());
        c.extend(self.gap_checks());
        c.extend(self.min_norm_checks());
        c
    }
}

pub fn run_exp3(cfg: &Exp3Config) -> Result<Exp3Result, CliError> {
    let start = Instant::now();
    let (params, x0) = build_degenerate_2d(cfg.degeneracy.into());
    let trace = params.forward(&x0)?;
    let tau = cfg.tau;
    let value = |y: &Vector| params.value(y).unwrap_or(f64::NAN);

    let dirs = random_unit_directions(params.input_dim(), cfg.directions, derive_seed(cfg.seed, 1));
    let (mut fd_err, mut primal_err, mut dual_max) = (vec![], vec![], vec![]);
    let mut gaps = 0usize;
    for (i, d) in dirs.iter().enumerate() {
        let r = directional_derivative_at(
            &params,
            &trace,
            d,
            tau,
            cfg.branch_budget,
            derive_seed(cfg.seed, 1000 + i as u64),
        )?;
        let fd = fd_directional(value, &x0, d, cfg.fd_step)?;
        fd_err.push((fd - r.dual_max).abs());
        primal_err.push((r.primal - r.dual_max).abs());
        if r.dual_max - r.canonical_value > CANONICAL_GAP_THRESHOLD {
            gaps += 1;
        }
        dual_max.push(r.dual_max);
    }

    let canon = canonical(&params, &trace, tau);
    let branches =
        sample_optimal_branches(&params, &trace, tau, cfg.branches, derive_seed(cfg.seed, 2));
    let mut max_violation = 0.0f64;
    let mut min_branch_norm = f64::INFINITY;
    let mut ties = 0usize;
    for b in &branches {
        let g = readout(&params, b)?;
        for (d, m) in dirs.iter().zip(&dual_max) {
            max_violation = max_violation.max(g.dot(d) - m);
        }
        if *b != canon {
            let n = b.norm();
            min_branch_norm = min_branch_norm.min(n);
            if n <= canon.norm() {
                ties += 1;
            }
        }
    }

    let g_can = canonical_subgradient(&params, &x0, tau)?;
    let mut probe_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3));
    let mut min_support = f64::INFINITY;
    for _ in 0..cfg.probes {
        let y = &x0 + gaussian(&mut probe_rng, x0.len(), cfg.probe_scale);
        min_support = min_support.min(support_margin(&params, trace.value, &x0, &g_can, &y)?);
    }

    Ok(Exp3Result {
        directions: cfg.directions,
        branches: cfg.branches,
        probes: cfg.probes,
        fd_mean_err: mean(&fd_err),
        fd_max_err: max(&fd_err),
        primal_mean_err: mean(&primal_err),
        primal_max_err: max(&primal_err),
        canonical_gap_frac: if cfg.directions == 0 {
            f64::NAN
        } else {
            gaps as f64 / cfg.directions as f64
        },
        max_violation,
        min_support_margin: min_support,
        canonical_norm: canon.norm(),
        min_branch_norm,
        min_norm_ties: ties,
        runtime_ms: ms(start),
    })
}

// ---------------------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub gap_to_best: f64,
    pub grad_norm: f64,
    pub iterations: f64,
    pub backtracks: f64,
    pub time_ms: f64,
    pub derivative_time_ms: f64,
    pub line_search_failures: usize,
    pub hessian_fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exp4Result {
    /// Reports per query, in [`Method::ALL`] order.
    pub reports: Vec<Vec<InferenceReport>>,
    pub summaries: Vec<MethodSummary>,
    pub gradient_error: f64,
    pub gradient_rel_error: f64,
    pub hessian_error: f64,
    pub hessian_rel_error: f64,
    pub mean_min_relu_margin: f64,
    pub mean_min_conic_norm: f64,
    /// Newton solutions at which the diagnostics were skipped as degenerate.
    pub degenerate_solutions: usize,
    /// Largest per-query objective difference between white-box and baseline GD.
    pub gd_objective_diff: f64,
    pub newton_objective_diff: f64,
    pub total_ms: f64,
}

impl Exp4Result {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn tables(&self) -> Vec<Table> {
        let mut a = Table::new(
            "exp4_methods",
            &[
                "method",
                "queries",
                "gap_to_best",
                "grad_norm",
                "iters",
                "backtracks",
                "line_search_failures",
                "hessian_fallbacks",
                "time_ms",
                "derivative_time_ms",
            ],
        );
        for s in &self.summaries {
            a.push(vec![
                s.method.name().into(),
                self.reports.len().into(),
                s.gap_to_best.into(),
                s.grad_norm.into(),
                s.iterations.into(),
                s.backtracks.into(),
                s.line_search_failures.into(),
                s.hessian_fallbacks.into(),
                s.time_ms.into(),
                s.derivative_time_ms.into(),
            ]);
        }
        let mut q = Table::new(
            "exp4_queries",
            &[
                "method",
                "query_id",
                "objective",
                "gap",
                "grad_norm",
                "iters",
                "backtracks",
                "time_ms",
            ],
        );
        for m in Method::ALL {
            for (i, rs) in self.reports.iter().enumerate() {
                let r = rs
                    .iter()
                    .find(|r| r.method == m)
                    .expect("every method runs");
                q.push(vec![
                    m.name().into(),
                    i.into(),
                    r.objective.into(),
                    r.gap_to_best.into(),
                    r.grad_norm.into(),
                    r.iterations.into(),
                    r.backtracks.into(),
                    r.wall_time_ms.into(),
                ]);
            }
        }
        let mut d = Table::new(
            "exp4_diagnostics",
            &[
                "queries",
                "gradient_error",
                "gradient_rel_error",
                "hessian_error",
                "hessian_rel_error",
                "mean_min_relu_margin",
                "mean_min_conic_norm",
                "degenerate_solutions",
                "gd_objective_diff",
                "newton_objective_diff",
            ],
        );
        d.push(vec![
            self.reports.len().into(),
            self.gradient_error.into(),
            self.gradient_rel_error.into(),
            self.hessian_error.into(),
            self.hessian_rel_error.into(),
            self.mean_min_relu_margin.into(),
            self.mean_min_conic_norm.into(),
            self.degenerate_solutions.into(),
            self.gd_objective_diff.into(),
            self.newton_objective_diff.into(),
        ]);
        vec![a, q, d]
    }

    pub fn checks(&self) -> Vec<Check> {
        let (Some(gd), Some(nt)) = (
            self.summary(Method::WhiteboxGd),
            self.summary(Method::WhiteboxNewton),
        ) else {
            return vec![Check::new("exp4.queries", false, "no queries".into())];
        };
        vec![
            Check::at_most("exp4.newton_gap", nt.gap_to_best, 5e-4),
            Check::at_most("exp4.gd_gap", gd.gap_to_best, 1e-4),
            Check::new(
                "exp4.newton_iteration_ratio",
                nt.iterations <= 0.2 * gd.iterations,
                format!("{} <= 0.2 * {}", nt.iterations, gd.iterations),
            ),
            Check::at_most("exp4.gd_objective_diff", self.gd_objective_diff, 1e-3),
            Check::at_most(
                "exp4.newton_objective_diff",
                self.newton_objective_diff,
                1e-3,
            ),
            Check::at_least("exp4.mean_min_conic_norm", self.mean_min_conic_norm, 0.1),
        ]
    }
}

pub fn run_exp4(cfg: &Exp4Config) -> Result<Exp4Result, CliError> {
    let start = Instant::now();
    let params: SocIcnnParams = build_random(cfg.seed, &cfg.arch.architecture())?;
    let d0 = params.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let tau = cfg.inference.tau;

    let mut reports = Vec::with_capacity(cfg.queries);
    let mut diag = Vec::new();
    let mut degenerate = 0;
    for _ in 0..cfg.queries {
        let y = gaussian(&mut rng, d0, cfg.query_scale);
        let mut rs = Method::ALL
            .iter()
            .map(|&m| solve(&params, &y, &cfg.inference, m))
            .collect::<Result<Vec<_>, _>>()?;
        assign_gaps(&mut rs);
        match readout_diagnostics(&params, &rs[1].x, tau) {
            Ok(d) => diag.push(d),
            Err(soc_icnn::Error::DegenerateInput { .. }) => degenerate += 1,
            Err(e) => return Err(e.into()),
        }
        reports.push(rs);
    }

    let summaries = if reports.is_empty() {
        Vec::new()
    } else {
        Method::ALL
            .iter()
            .enumerate()
            .map(|(k, &method)| {
                let col = |f: &dyn Fn(&InferenceReport) -> f64| {
                    mean(&reports.iter().map(|rs| f(&rs[k])).collect::<Vec<_>>())
                };
                MethodSummary {
                    method,
                    gap_to_best: col(&|r| r.gap_to_best),
                    grad_norm: col(&|r| r.grad_norm),
                    iterations: col(&|r| r.iterations as f64),
                    backtracks: col(&|r| r.backtracks as f64),
                    time_ms: col(&|r| r.wall_time_ms),
                    derivative_time_ms: col(&|r| r.derivative_time_ms),
                    line_search_failures: reports
                        .iter()
                        .filter(|rs| rs[k].line_search_failed)
                        .count(),
                    hessian_fallbacks: reports.iter().map(|rs| rs[k].hessian_fallbacks).sum(),
                }
            })
            .collect()
    };
    let diff = |a: usize, b: usize| {
        max(&reports
            .iter()
            .map(|rs| (rs[a].objective - rs[b].objective).abs())
            .collect::<Vec<_>>())
    };
    let dmean = |f: &dyn Fn(&soc_icnn::inference::ReadoutDiagnostics) -> f64| {
        mean(&diag.iter().map(f).collect::<Vec<_>>())
    };
    Ok(Exp4Result {
        gradient_error: dmean(&|d| d.gradient_error),
        gradient_rel_error: dmean(&|d| d.gradient_rel_error),
        hessian_error: dmean(&|d| d.hessian_error),
        hessian_rel_error: dmean(&|d| d.hessian_rel_error),
        mean_min_relu_margin: dmean(&|d| d.min_relu_margin),
        mean_min_conic_norm: dmean(&|d| d.min_conic_norm),
        degenerate_solutions: degenerate,
        gd_objective_diff: diff(0, 2),
        newton_objective_diff: diff(1, 3),
        summaries,
        reports,
        total_ms: ms(start),
    })
}
