//! Dual multipliers of the value-function representation.
//!
//! A branch `(nu, p, r)` is feasible when `0 <= nu_L <= c`,
//! `0 <= nu_l <= U_{l+1}^T nu_{l+1}` and `|r_g| <= lambda_g`. Every feasible branch defines
//! an affine minorant
//!
//! ```text
//! psi(x) = v.x + b0 + sum_l nu_l.(W_l x + b_l)
//!        + sum_h [p_h.q_h(x) - |p_h|^2 / (2 alpha_h)] + sum_g r_g.u_g(x)
//! ```
//!
//! whose slope is the readout `v + sum W^T nu + sum B^T p + sum A^T r`. The optimal set at
//! `x` factorizes blockwise: the quadratic block is the single point `alpha_h q_h(x)`, each
//! conic block is `lambda u/|u|` or the whole ball when `u = 0`, and the ReLU block is
//! described coordinatewise by [`ReluBranchBox`].

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardTrace, SocIcnnParams};
use crate::Vector;

/// Feasibility slack applied to the box and ball constraints.
pub const FEASIBILITY_SLACK: f64 = 1e-12;

/// Relative tolerance on `|psi(x; xi) - f(x)|` for a branch to count as optimal.
pub const OPTIMALITY_TOL: f64 = 1e-10;

/// Maximum number of free ReLU coordinates [`extreme_branches`] will enumerate.
pub const MAX_FREE_COORDS: usize = 16;

const MAX_EXTREME_BRANCHES: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Canonical,
    Sampled,
    Extreme,
}

/// One multiplier triple.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBranch {
    /// ReLU multipliers, one vector per layer.
    pub nu: Vec<Vector>,
    /// Quadratic multipliers, one vector per quadratic module.
    pub p: Vec<Vector>,
    /// Conic multipliers, one vector per conic module.
    pub r: Vec<Vector>,
    pub provenance: Provenance,
}

impl DualBranch {
    pub fn zeros(params: &SocIcnnParams) -> Self {
        DualBranch {
            nu: params
                .layers
                .iter()
                .map(|l| DVector::zeros(l.width()))
                .collect(),
            p: params
                .quad
                .iter()
                .map(|m| DVector::zeros(m.e.len()))
                .collect(),
            r: params
                .cone
                .iter()
                .map(|m| DVector::zeros(m.d.len()))
                .collect(),
            provenance: Provenance::Sampled,
        }
    }

    /// Squared Euclidean norm of the concatenated triple.
    pub fn norm_squared(&self) -> f64 {
        self.nu
            .iter()
            .chain(&self.p)
            .chain(&self.r)
            .map(|v| v.norm_squared())
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Takes the ReLU and quadratic blocks from `self` and the conic block from `other`.
    pub fn with_conic_from(&self, other: &DualBranch) -> DualBranch {
        DualBranch {
            nu: self.nu.clone(),
            p: self.p.clone(),
            r: other.r.clone(),
            provenance: Provenance::Sampled,
        }
    }

    pub fn to_document(&self) -> BranchDocument {
        let rows = |vs: &[Vector]| vs.iter().map(|v| v.iter().copied().collect()).collect();
        BranchDocument {
            provenance: self.provenance,
            nu: rows(&self.nu),
            p: rows(&self.p),
            r: rows(&self.r),
        }
    }
}

/// JSON form of a [`DualBranch`] for diagnostic dumps.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchDocument {
    pub provenance: Provenance,
    pub nu: Vec<Vec<f64>>,
    pub p: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

impl From<BranchDocument> for DualBranch {
    fn from(doc: BranchDocument) -> Self {
        let vecs = |vs: Vec<Vec<f64>>| vs.into_iter().map(DVector::from_vec).collect();
        DualBranch {
            nu: vecs(doc.nu),
            p: vecs(doc.p),
            r: vecs(doc.r),
            provenance: doc.provenance,
        }
    }
}

fn check_shapes(params: &SocIcnnParams, branch: &DualBranch) -> Result<()> {
    let ok = branch.nu.len() == params.layers.len()
        && branch.p.len() == params.quad.len()
        && branch.r.len() == params.cone.len()
        && branch
            .nu
            .iter()
            .zip(&params.layers)
            .all(|(n, l)| n.len() == l.width())
        && branch
            .p
            .iter()
            .zip(&params.quad)
            .all(|(p, m)| p.len() == m.e.len())
        && branch
            .r
            .iter()
            .zip(&params.cone)
            .all(|(r, m)| r.len() == m.d.len());
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(
            "dual branch shape does not match the network".into(),
        ))
    }
}

/// ReLU upper bounds `ub_l(nu)`: `c` for the last layer, `U_{l+1}^T nu_{l+1}` otherwise.
pub fn relu_upper_bounds(params: &SocIcnnParams, nu: &[Vector]) -> Vec<Vector> {
    let depth = params.layers.len();
    (0..depth)
        .map(|l| {
            if l + 1 == depth {
                params.c.clone()
            } else {
                params.layers[l + 1].u.tr_mul(&nu[l + 1])
            }
        })
        .collect()
}

/// Checks the box and ball constraints with slack `slack * (1 + |bound|)`.
pub fn check_feasible(params: &SocIcnnParams, branch: &DualBranch, slack: f64) -> Result<()> {
    check_shapes(params, branch)?;
    let ub = relu_upper_bounds(params, &branch.nu);
    for (l, (nu, ub)) in branch.nu.iter().zip(&ub).enumerate() {
        for (i, (&n, &u)) in nu.iter().zip(ub.iter()).enumerate() {
            if n < -slack || n > u + slack * (1.0 + u.abs()) {
                return Err(Error::InfeasibleBranch(format!(
                    "nu[{l}][{i}] = {n} outside [0, {u}]"
                )));
            }
        }
    }
    for (g, (r, m)) in branch.r.iter().zip(&params.cone).enumerate() {
        let n = r.norm();
        if n > m.lambda + slack * (1.0 + m.lambda) {
            return Err(Error::InfeasibleBranch(format!(
                "|r[{g}]| = {n} exceeds lambda = {}",
                m.lambda
            )));
        }
    }
    Ok(())
}

/// Dual objective `psi(x; nu, p, r)` for a feasible branch.
pub fn psi(params: &SocIcnnParams, x: &Vector, branch: &DualBranch) -> Result<f64> {
    if x.len() != params.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "input has length {}, expected {}",
            x.len(),
            params.input_dim()
        )));
    }
    check_feasible(params, branch, FEASIBILITY_SLACK)?;
    let mut value = params.v.dot(x) + params.b0;
    for (layer, nu) in params.layers.iter().zip(&branch.nu) {
        value += nu.dot(&(&layer.w * x + &layer.b));
    }
    for (m, p) in params.quad.iter().zip(&branch.p) {
        let q = &m.b * x + &m.e;
        value += p.dot(&q) - p.norm_squared() / (2.0 * m.alpha);
    }
    for (m, r) in params.cone.iter().zip(&branch.r) {
        value += r.dot(&(&m.a * x + &m.d));
    }
    Ok(value)
}

/// Slope of the affine minorant defined by a branch.
pub fn readout(params: &SocIcnnParams, branch: &DualBranch) -> Result<Vector> {
    check_shapes(params, branch)?;
    let mut g = params.v.clone();
    for (layer, nu) in params.layers.iter().zip(&branch.nu) {
        g += layer.w.tr_mul(nu);
    }
    for (m, p) in params.quad.iter().zip(&branch.p) {
        g += m.b.tr_mul(p);
    }
    for (m, r) in params.cone.iter().zip(&branch.r) {
        g += m.a.tr_mul(r);
    }
    Ok(g)
}

/// Canonical branch: masked backward recursion for `nu`, `alpha q` for the quadratic
/// block and the normalized residual (or zero) for the conic block.
pub fn canonical(params: &SocIcnnParams, trace: &ForwardTrace, tau: f64) -> DualBranch {
    let depth = params.layers.len();
    let mut nu: Vec<Vector> = vec![DVector::zeros(0); depth];
    for l in (0..depth).rev() {
        let upstream = if l + 1 == depth {
            params.c.clone()
        } else {
            params.layers[l + 1].u.tr_mul(&nu[l + 1])
        };
        nu[l] = upstream.zip_map(&trace.a[l], |w, a| if a > tau { w } else { 0.0 });
    }
    let p = params
        .quad
        .iter()
        .zip(&trace.q)
        .map(|(m, q)| q * m.alpha)
        .collect();
    let r = params
        .cone
        .iter()
        .zip(&trace.u)
        .map(|(m, u)| {
            let n = u.norm();
            if n > tau {
                u * (m.lambda / n)
            } else {
                DVector::zeros(u.len())
            }
        })
        .collect();
    DualBranch {
        nu,
        p,
        r,
        provenance: Provenance::Canonical,
    }
}

/// Whether `|psi(x; branch) - f(x)| <= rel_tol * max(1, |f(x)|)`.
pub fn is_optimal(
    params: &SocIcnnParams,
    trace: &ForwardTrace,
    branch: &DualBranch,
    rel_tol: f64,
) -> bool {
    match psi(params, &trace.x, branch) {
        Ok(v) => (v - trace.value).abs() <= rel_tol * trace.value.abs().max(1.0),
        Err(_) => false,
    }
}

/// Optimality status of one ReLU multiplier coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordStatus {
    /// `a < 0`: the multiplier is zero.
    ForcedZero,
    /// `a > 0`: the multiplier equals its upper bound.
    ForcedUpper,
    /// `a = 0`: any value in `[0, ub]` is optimal.
    FreeInterval,
}

/// Coordinatewise description of the optimal ReLU multiplier set at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluBranchBox {
    pub status: Vec<Vec<CoordStatus>>,
}

impl ReluBranchBox {
    /// Free coordinates in top-down order (last layer first).
    pub fn free_coords(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for l in (0..self.status.len()).rev() {
            for (i, s) in self.status[l].iter().enumerate() {
                if *s == CoordStatus::FreeInterval {
                    out.push((l, i));
                }
            }
        }
        out
    }

    /// Builds `nu` top-down, choosing the value of each free coordinate with `pick(l, i, ub)`.
    fn assemble<F>(&self, params: &SocIcnnParams, mut pick: F) -> Vec<Vector>
    where
        F: FnMut(usize, usize, f64) -> f64,
    {
        let depth = self.status.len();
        let mut nu: Vec<Vector> = vec![DVector::zeros(0); depth];
        for l in (0..depth).rev() {
            let ub = if l + 1 == depth {
                params.c.clone()
            } else {
                params.layers[l + 1].u.tr_mul(&nu[l + 1])
            };
            nu[l] = DVector::from_iterator(
                ub.len(),
                self.status[l].iter().enumerate().map(|(i, s)| match s {
                    CoordStatus::ForcedZero => 0.0,
                    CoordStatus::ForcedUpper => ub[i],
                    CoordStatus::FreeInterval => pick(l, i, ub[i]),
                }),
            );
        }
        nu
    }
}

/// Classifies every ReLU coordinate by the sign of its preactivation.
pub fn branch_box(params: &SocIcnnParams, trace: &ForwardTrace, tau: f64) -> ReluBranchBox {
    debug_assert_eq!(params.layers.len(), trace.a.len());
    let status = trace
        .a
        .iter()
        .map(|a| {
            a.iter()
                .map(|&v| {
                    if v > tau {
                        CoordStatus::ForcedUpper
                    } else if v < -tau {
                        CoordStatus::ForcedZero
                    } else {
                        CoordStatus::FreeInterval
                    }
                })
                .collect()
        })
        .collect();
    ReluBranchBox { status }
}

fn zero_conic_modules(trace: &ForwardTrace, tau: f64) -> Vec<usize> {
    trace
        .u
        .iter()
        .enumerate()
        .filter(|(_, u)| u.norm() <= tau)
        .map(|(g, _)| g)
        .collect()
}

fn gaussian_unit(rng: &mut ChaCha8Rng, k: usize) -> Vector {
    loop {
        let v = DVector::from_iterator(k, (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = v.norm();
        if n > 1e-300 {
            return v / n;
        }
    }
}

/// Draws `n` optimal branches at `trace.x`.
///
/// Free ReLU coordinates are uniform on `[0, ub]` with `ub` evaluated top-down from the
/// values already drawn downstream; conic multipliers of zero-residual modules are uniform
/// in the `lambda_g` ball; every other block equals the canonical choice.
pub fn sample_optimal_branches(
    params: &SocIcnnParams,
    trace: &ForwardTrace,
    tau: f64,
    n: usize,
    seed: u64,
) -> Vec<DualBranch> {
    let bbox = branch_box(params, trace, tau);
    let canon = canonical(params, trace, tau);
    let zero_modules = zero_conic_modules(trace, tau);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let nu = bbox.assemble(params, |_, _, ub| rng.random::<f64>() * ub);
            let mut r = canon.r.clone();
            for &g in &zero_modules {
                let k = r[g].len();
                let dir = gaussian_unit(&mut rng, k);
                let radius = params.cone[g].lambda * rng.random::<f64>().powf(1.0 / k as f64);
                r[g] = dir * radius;
            }
            DualBranch {
                nu,
                p: canon.p.clone(),
                r,
                provenance: Provenance::Sampled,
            }
        })
        .collect()
}

/// Candidate unit directions for the conic multiplier of a zero-residual module: a
/// quasi-uniform sphere design plus the signed eigenvectors of `A A^T`.
fn sphere_design(a: &DMatrix<f64>, samples: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    let k = a.nrows();
    let mut dirs = Vec::with_capacity(samples + 2 * k);
    match k {
        1 => {
            dirs.push(DVector::from_element(1, 1.0));
            dirs.push(DVector::from_element(1, -1.0));
        }
        2 => {
            let offset: f64 = rng.random();
            for j in 0..samples {
                let theta = std::f64::consts::TAU * (j as f64 + offset) / samples as f64;
                dirs.push(DVector::from_vec(vec![theta.cos(), theta.sin()]));
            }
        }
        _ => {
            for _ in 0..samples {
                dirs.push(gaussian_unit(rng, k));
            }
        }
    }
    let gram = a * a.transpose();
    let eig = SymmetricEigen::new(gram);
    for j in 0..k {
        let e = eig.eigenvectors.column(j).into_owned();
        dirs.push(e.clone());
        dirs.push(-e);
    }
    dirs
}

/// Extreme points of the optimal set used as the oracle for directional maxima.
///
/// Enumerates all `{0, ub}` endpoint choices of the free ReLU coordinates crossed with
/// conic multipliers on the `lambda_g` sphere (see [`extreme_branches_for_direction`] for
/// the per-query exact maximizer). With no degeneracies this is the canonical branch.
pub fn extreme_branches(
    params: &SocIcnnParams,
    trace: &ForwardTrace,
    tau: f64,
    sphere_samples: usize,
    seed: u64,
) -> Result<Vec<DualBranch>> {
    extreme_branches_impl(params, trace, tau, sphere_samples, seed, None)
}

/// [`extreme_branches`] augmented, for each zero-residual module, with the conic multiplier
/// `lambda A d / |A d|` that maximizes the readout along `direction`.
pub fn extreme_branches_for_direction(
    params: &SocIcnnParams,
    trace: &ForwardTrace,
    tau: f64,
    sphere_samples: usize,
    seed: u64,
    direction: &Vector,
) -> Result<Vec<DualBranch>> {
    extreme_branches_impl(params, trace, tau, sphere_samples, seed, Some(direction))
}

fn extreme_branches_impl(
    params: &SocIcnnParams,
    trace: &ForwardTrace,
    tau: f64,
    sphere_samples: usize,
    seed: u64,
    direction: Option<&Vector>,
) -> Result<Vec<DualBranch>> {
    let bbox = branch_box(params, trace, tau);
    let free = bbox.free_coords();
    if free.len() > MAX_FREE_COORDS {
        return Err(Error::TooManyDegeneracies {
            found: free.len(),
            limit: MAX_FREE_COORDS,
        });
    }
    let canon = canonical(params, trace, tau);
    let zero_modules = zero_conic_modules(trace, tau);
    if free.is_empty() && zero_modules.is_empty() {
        return Ok(vec![canon]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let conic_options: Vec<(usize, Vec<Vector>)> = zero_modules
        .iter()
        .map(|&g| {
            let m = &params.cone[g];
            let mut dirs = sphere_design(&m.a, sphere_samples, &mut rng);
            if let Some(d) = direction {
                let ad = &m.a * d;
                let n = ad.norm();
                if n > 0.0 {
                    dirs.push(ad / n);
                }
            }
            let opts = dirs.into_iter().map(|u| u * m.lambda).collect();
            (g, opts)
        })
        .collect();

    let relu_count = 1usize << free.len();
    let total = conic_options
        .iter()
        .try_fold(relu_count, |acc, (_, o)| acc.checked_mul(o.len().max(1)));
    match total {
        Some(t) if t <= MAX_EXTREME_BRANCHES => {}
        _ => {
            return Err(Error::TooManyDegeneracies {
                found: free.len() + zero_modules.len(),
                limit: MAX_FREE_COORDS,
            })
        }
    }

    let relu_parts: Vec<Vec<Vector>> = (0..relu_count)
        .map(|bits| {
            bbox.assemble(params, |l, i, ub| {
                let pos = free.iter().position(|&c| c == (l, i)).unwrap();
                if bits >> pos & 1 == 1 {
                    ub
                } else {
                    0.0
                }
            })
        })
        .collect();

    let mut conic_parts: Vec<Vec<Vector>> = vec![canon.r.clone()];
    for (g, opts) in &conic_options {
        let mut next = Vec::with_capacity(conic_parts.len() * opts.len());
        for base in &conic_parts {
            for o in opts {
                let mut r = base.clone();
                r[*g] = o.clone();
                next.push(r);
            }
        }
        conic_parts = next;
    }

    let mut out = Vec::with_capacity(relu_parts.len() * conic_parts.len());
    for nu in &relu_parts {
        for r in &conic_parts {
            out.push(DualBranch {
                nu: nu.clone(),
                p: canon.p.clone(),
                r: r.clone(),
                provenance: Provenance::Extreme,
            });
        }
    }
    Ok(out)
}
