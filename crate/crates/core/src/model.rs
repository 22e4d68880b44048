//! SOC-ICNN parameters, forward evaluation and degeneracy classification.
//!
//! The network is
//!
//! ```text
//! a_l = W_l x + U_l z_{l-1} + b_l,   z_l = max(a_l, 0),   z_0 = 0
//! f(x) = c.z_L + v.x + b0 + sum_h (alpha_h / 2) |B_h x + e_h|^2 + sum_g lambda_g |A_g x + d_g|
//! ```
//!
//! Convexity in `x` holds when `U_l >= 0` for `l >= 2`, `c >= 0`, `alpha_h > 0` and
//! `lambda_g >= 0`. The first layer carries a `U_1` with zero columns so every layer
//! follows the same recursion.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Default tolerance used to decide whether a preactivation or conic residual is zero.
pub const DEFAULT_TAU: f64 = 1e-9;

/// One ReLU layer `z = max(W x + U z_prev + b, 0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vector,
}

impl Layer {
    pub fn width(&self) -> usize {
        self.b.len()
    }

    /// `W x + U z_prev`, without the bias.
    ///
    /// Both the forward pass and the degenerate constructor go through this function so
    /// that a bias set to the exact negation of this value yields an exact zero.
    pub(crate) fn pre_bias(&self, x: &Vector, z_prev: &Vector) -> Vector {
        &self.w * x + &self.u * z_prev
    }

    pub(crate) fn preactivation(&self, x: &Vector, z_prev: &Vector) -> Vector {
        self.pre_bias(x, z_prev) + &self.b
    }
}

/// Weighted squared-norm module `(alpha / 2) |B x + e|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadModule {
    pub alpha: f64,
    pub b: Matrix,
    pub e: Vector,
}

/// Weighted Euclidean-norm module `lambda |A x + d|`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeModule {
    pub lambda: f64,
    pub a: Matrix,
    pub d: Vector,
}

/// All parameters of a second-order-cone input convex network.
#[derive(Debug, Clone, PartialEq)]
pub struct SocIcnnParams {
    pub layers: Vec<Layer>,
    pub c: Vector,
    pub v: Vector,
    pub b0: f64,
    pub quad: Vec<QuadModule>,
    pub cone: Vec<ConeModule>,
    /// Seed the parameters were drawn from, if any.
    pub seed: Option<u64>,
}

/// Architecture descriptor for [`build_random`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub quad_dims: Vec<usize>,
    pub cone_dims: Vec<usize>,
}

impl Architecture {
    /// Constant-width backbone with `quad_count` quadratic and `cone_count` conic modules
    /// of the same output dimension.
    pub fn uniform(
        input_dim: usize,
        width: usize,
        depth: usize,
        quad_count: usize,
        cone_count: usize,
        module_dim: usize,
    ) -> Self {
        Architecture {
            input_dim,
            widths: vec![width; depth],
            quad_dims: vec![module_dim; quad_count],
            cone_dims: vec![module_dim; cone_count],
        }
    }
}

/// Structural record of one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub x: Vector,
    /// Preactivations `a_l(x)`, one vector per layer.
    pub a: Vec<Vector>,
    /// Activations `z_l(x) = max(a_l(x), 0)`.
    pub z: Vec<Vector>,
    /// Quadratic residuals `q_h(x) = B_h x + e_h`.
    pub q: Vec<Vector>,
    /// Conic residuals `u_g(x) = A_g x + d_g`.
    pub u: Vec<Vector>,
    pub value: f64,
}

impl ForwardTrace {
    /// Smallest `|a_{l,i}(x)|` over all ReLU coordinates.
    pub fn min_relu_margin(&self) -> f64 {
        self.a
            .iter()
            .flat_map(|a| a.iter())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Smallest `|u_g(x)|` over all conic modules (infinity when there are none).
    pub fn min_conic_norm(&self) -> f64 {
        self.u.iter().fold(f64::INFINITY, |m, u| m.min(u.norm()))
    }
}

/// Zero preactivations and zero conic residuals at an input.
#[derive(Debug, Clone, PartialEq)]
pub struct DegeneracyReport {
    /// `(layer, coordinate)` pairs with `|a_{l,i}| <= tau`, zero-based.
    pub relu_zero_coords: Vec<(usize, usize)>,
    /// Conic modules with `|u_g| <= tau`, zero-based.
    pub conic_zero_modules: Vec<usize>,
    pub tolerance: f64,
    pub is_nondegenerate: bool,
}

impl SocIcnnParams {
    pub fn input_dim(&self) -> usize {
        self.v.len()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(Layer::width).collect()
    }

    /// Checks the shape and convexity invariants, reporting the first violation.
    pub fn validate(&self) -> Result<()> {
        let d0 = self.input_dim();
        if d0 == 0 {
            return Err(Error::DimensionMismatch("input dimension is zero".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::DimensionMismatch("network has no layers".into()));
        }
        if !self.b0.is_finite() {
            return Err(Error::NonFiniteParameter("b0".into()));
        }
        check_finite_vec(&self.v, "v")?;

        let mut prev_width = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let width = layer.width();
            if width == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l} has zero width"
                )));
            }
            if layer.w.shape() != (width, d0) {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l}: W is {:?}, expected {:?}",
                    layer.w.shape(),
                    (width, d0)
                )));
            }
            if layer.u.shape() != (width, prev_width) {
                return Err(Error::DimensionMismatch(format!(
                    "layer {l}: U is {:?}, expected {:?}",
                    layer.u.shape(),
                    (width, prev_width)
                )));
            }
            check_finite_mat(&layer.w, &format!("layer {l} W"))?;
            check_finite_mat(&layer.u, &format!("layer {l} U"))?;
            check_finite_vec(&layer.b, &format!("layer {l} b"))?;
            if let Some(&value) = layer.u.iter().find(|&&x| x < 0.0) {
                return Err(Error::Negativity {
                    what: format!("layer {l} U"),
                    value,
                });
            }
            prev_width = width;
        }

        if self.c.len() != prev_width {
            return Err(Error::DimensionMismatch(format!(
                "c has length {}, last layer width is {prev_width}",
                self.c.len()
            )));
        }
        check_finite_vec(&self.c, "c")?;
        if let Some(&value) = self.c.iter().find(|&&x| x < 0.0) {
            return Err(Error::Negativity {
                what: "c".into(),
                value,
            });
        }

        for (h, m) in self.quad.iter().enumerate() {
            if m.b.ncols() != d0 || m.b.nrows() != m.e.len() || m.e.is_empty() {
                return Err(Error::DimensionMismatch(format!(
                    "quadratic module {h}: B is {:?}, e has length {}",
                    m.b.shape(),
                    m.e.len()
                )));
            }
            check_finite_mat(&m.b, &format!("quadratic module {h} B"))?;
            check_finite_vec(&m.e, &format!("quadratic module {h} e"))?;
            if !m.alpha.is_finite() {
                return Err(Error::NonFiniteParameter(format!(
                    "quadratic module {h} alpha"
                )));
            }
            if m.alpha <= 0.0 {
                return Err(Error::NonPositiveAlpha {
                    module: h,
                    value: m.alpha,
                });
            }
        }

        for (g, m) in self.cone.iter().enumerate() {
            if m.a.ncols() != d0 || m.a.nrows() != m.d.len() || m.d.is_empty() {
                return Err(Error::DimensionMismatch(format!(
                    "conic module {g}: A is {:?}, d has length {}",
                    m.a.shape(),
                    m.d.len()
                )));
            }
            check_finite_mat(&m.a, &format!("conic module {g} A"))?;
            check_finite_vec(&m.d, &format!("conic module {g} d"))?;
            if !m.lambda.is_finite() {
                return Err(Error::NonFiniteParameter(format!(
                    "conic module {g} lambda"
                )));
            }
            if m.lambda < 0.0 {
                return Err(Error::NegativeLambda {
                    module: g,
                    value: m.lambda,
                });
            }
        }
        Ok(())
    }

    /// Forward pass recording preactivations, activations and module residuals.
    pub fn forward(&self, x: &Vector) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "input has length {}, expected {}",
                x.len(),
                self.input_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }

        let mut a = Vec::with_capacity(self.layers.len());
        let mut z = Vec::with_capacity(self.layers.len());
        let mut z_prev = DVector::zeros(0);
        for layer in &self.layers {
            let a_l = layer.preactivation(x, &z_prev);
            let z_l = a_l.map(|v| v.max(0.0));
            a.push(a_l);
            z_prev = z_l.clone();
            z.push(z_l);
        }

        let q: Vec<Vector> = self.quad.iter().map(|m| &m.b * x + &m.e).collect();
        let u: Vec<Vector> = self.cone.iter().map(|m| &m.a * x + &m.d).collect();

        let mut value = self.c.dot(&z_prev) + self.v.dot(x) + self.b0;
        for (m, q_h) in self.quad.iter().zip(&q) {
            value += 0.5 * m.alpha * q_h.norm_squared();
        }
        for (m, u_g) in self.cone.iter().zip(&u) {
            value += m.lambda * u_g.norm();
        }

        Ok(ForwardTrace {
            x: x.clone(),
            a,
            z,
            q,
            u,
            value,
        })
    }

    /// Network value `f(x)`.
    pub fn value(&self, x: &Vector) -> Result<f64> {
        Ok(self.forward(x)?.value)
    }
}

fn check_finite_vec(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteParameter(what.into()))
    }
}

fn check_finite_mat(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteParameter(what.into()))
    }
}

/// Lists the coordinates and modules that sit within `tau` of zero.
pub fn degeneracy_report(trace: &ForwardTrace, tau: f64) -> DegeneracyReport {
    let relu_zero_coords: Vec<(usize, usize)> = trace
        .a
        .iter()
        .enumerate()
        .flat_map(|(l, a)| {
            a.iter()
                .enumerate()
                .filter(move |(_, v)| v.abs() <= tau)
                .map(move |(i, _)| (l, i))
        })
        .collect();
    let conic_zero_modules: Vec<usize> = trace
        .u
        .iter()
        .enumerate()
        .filter(|(_, u)| u.norm() <= tau)
        .map(|(g, _)| g)
        .collect();
    let is_nondegenerate = relu_zero_coords.is_empty() && conic_zero_modules.is_empty();
    DegeneracyReport {
        relu_zero_coords,
        conic_zero_modules,
        tolerance: tau,
        is_nondegenerate,
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    // Row-major draw order so the stream maps onto the serialized layout.
    let mut m = DMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            let g: f64 = rng.sample(StandardNormal);
            m[(i, j)] = g * scale;
        }
    }
    m
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vector {
    DVector::from_iterator(
        len,
        (0..len).map(|_| rng.sample::<f64, _>(StandardNormal) * scale),
    )
}

/// Draws a random valid network.
///
/// Signed weights and offsets are Gaussian scaled by `1/sqrt(fan_in)`; `U_l` and `c` are
/// absolute Gaussians scaled by `1/fan_in` so that the nonnegative sums stay O(1) with
/// depth; `alpha_h` and `lambda_g` are uniform in `[0.5, 1.5]`.
pub fn build_random(seed: u64, arch: &Architecture) -> Result<SocIcnnParams> {
    if arch.input_dim == 0 {
        return Err(Error::InvalidDescriptor("input dimension is zero".into()));
    }
    if arch.widths.is_empty() {
        return Err(Error::InvalidDescriptor("no hidden layers".into()));
    }
    if arch.widths.contains(&0) {
        return Err(Error::InvalidDescriptor("zero layer width".into()));
    }
    if arch.quad_dims.contains(&0) || arch.cone_dims.contains(&0) {
        return Err(Error::InvalidDescriptor("zero module dimension".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d0 = arch.input_dim;
    let in_scale = 1.0 / (d0 as f64).sqrt();

    let mut layers = Vec::with_capacity(arch.widths.len());
    let mut prev = 0usize;
    for &width in &arch.widths {
        let w = gaussian_matrix(&mut rng, width, d0, in_scale);
        let u = if prev == 0 {
            DMatrix::zeros(width, 0)
        } else {
            gaussian_matrix(&mut rng, width, prev, 1.0 / prev as f64).abs()
        };
        let b = gaussian_vector(&mut rng, width, in_scale);
        layers.push(Layer { w, u, b });
        prev = width;
    }
    let c = gaussian_vector(&mut rng, prev, 1.0 / prev as f64).abs();
    let v = gaussian_vector(&mut rng, d0, in_scale);
    let b0: f64 = rng.sample::<f64, _>(StandardNormal) * in_scale;

    let quad = arch
        .quad_dims
        .iter()
        .map(|&m| QuadModule {
            alpha: rng.random_range(0.5..=1.5),
            b: gaussian_matrix(&mut rng, m, d0, in_scale),
            e: gaussian_vector(&mut rng, m, in_scale),
        })
        .collect();
    let cone = arch
        .cone_dims
        .iter()
        .map(|&k| ConeModule {
            lambda: rng.random_range(0.5..=1.5),
            a: gaussian_matrix(&mut rng, k, d0, in_scale),
            d: gaussian_vector(&mut rng, k, in_scale),
        })
        .collect();

    let params = SocIcnnParams {
        layers,
        c,
        v,
        b0,
        quad,
        cone,
        seed: Some(seed),
    };
    params.validate()?;
    Ok(params)
}

/// Which ReLU coordinate and which conic module [`build_degenerate_2d`] zeroes out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DegeneracySpec {
    /// Zero-based layer index (0 or 1).
    pub layer: usize,
    /// Zero-based coordinate within the layer.
    pub coord: usize,
    /// Zero-based conic module index (0 or 1).
    pub cone_module: usize,
}

impl Default for DegeneracySpec {
    fn default() -> Self {
        DegeneracySpec {
            layer: 0,
            coord: 1,
            cone_module: 0,
        }
    }
}

/// Hand-crafted two-input network with exactly one zero preactivation and one zero conic
/// residual at the returned point `x0`.
///
/// The backbone has widths `(3, 2)`, one quadratic module and two conic modules with
/// invertible `2x2` maps. Every other preactivation sits at a target of magnitude at least
/// 0.5 and the other conic residual has norm 1.5. Out-of-range indices are clamped.
pub fn build_degenerate_2d(spec: DegeneracySpec) -> (SocIcnnParams, Vector) {
    let x0 = DVector::from_vec(vec![0.4, -0.3]);
    let layer_idx = spec.layer.min(1);
    let widths = [3usize, 2];
    let coord = spec.coord.min(widths[layer_idx] - 1);
    let cone_idx = spec.cone_module.min(1);

    let weights = [
        DMatrix::from_row_slice(3, 2, &[1.0, 0.5, -0.7, 1.2, 0.4, -0.9]),
        DMatrix::from_row_slice(2, 2, &[0.6, -0.4, 0.3, 0.8]),
    ];
    let couplings = [
        DMatrix::zeros(3, 0),
        DMatrix::from_row_slice(2, 3, &[0.5, 0.7, 0.2, 0.9, 0.3, 0.6]),
    ];
    let targets: [Vec<f64>; 2] = [vec![0.8, 0.6, -0.7], vec![0.9, 0.5]];

    let mut layers = Vec::with_capacity(2);
    let mut z_prev = DVector::zeros(0);
    for l in 0..2 {
        let mut layer = Layer {
            w: weights[l].clone(),
            u: couplings[l].clone(),
            b: DVector::zeros(widths[l]),
        };
        let s = layer.pre_bias(&x0, &z_prev);
        for i in 0..widths[l] {
            layer.b[i] = if l == layer_idx && i == coord {
                -s[i]
            } else {
                targets[l][i] - s[i]
            };
        }
        z_prev = layer.preactivation(&x0, &z_prev).map(|v| v.max(0.0));
        layers.push(layer);
    }

    let cone_maps = [
        (0.7, DMatrix::from_row_slice(2, 2, &[1.0, 0.3, -0.2, 0.8])),
        (0.5, DMatrix::from_row_slice(2, 2, &[0.6, -0.5, 0.4, 0.9])),
    ];
    let cone = cone_maps
        .into_iter()
        .enumerate()
        .map(|(g, (lambda, a))| {
            let ax = &a * &x0;
            let d = if g == cone_idx {
                -ax
            } else {
                DVector::from_vec(vec![1.2, -0.9]) - ax
            };
            ConeModule { lambda, a, d }
        })
        .collect();

    let params = SocIcnnParams {
        layers,
        c: DVector::from_vec(vec![1.0, 0.8]),
        v: DVector::from_vec(vec![0.2, -0.1]),
        b0: 0.3,
        quad: vec![QuadModule {
            alpha: 0.5,
            b: DMatrix::identity(2, 2) * 0.5,
            e: DVector::from_vec(vec![0.1, -0.2]),
        }],
        cone,
        seed: None,
    };
    (params, x0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_only() -> SocIcnnParams {
        SocIcnnParams {
            layers: vec![Layer {
                w: DMatrix::zeros(1, 2),
                u: DMatrix::zeros(1, 0),
                b: DVector::zeros(1),
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

    fn small_random() -> SocIcnnParams {
        build_random(3, &Architecture::uniform(4, 5, 3, 1, 1, 3)).unwrap()
    }

    #[test]
    fn validate_accepts_nonnegative_c() {
        let mut p = build_random(0, &Architecture::uniform(3, 3, 2, 1, 1, 2)).unwrap();
        p.c = DVector::from_vec(vec![1.0, 0.0, 2.0]);
        assert!(p.validate().is_ok());
    }

    #[test]
    fn validate_rejects_negative_coupling() {
        let mut p = small_random();
        p.layers[1].u[(0, 0)] = -0.1;
        assert!(matches!(p.validate(), Err(Error::Negativity { .. })));
    }

    #[test]
    fn validate_rejects_bad_module_weights() {
        let mut p = small_random();
        p.quad[0].alpha = 0.0;
        assert!(matches!(
            p.validate(),
            Err(Error::NonPositiveAlpha { module: 0, .. })
        ));

        let mut p = small_random();
        p.cone[0].lambda = -1e-3;
        assert!(matches!(
            p.validate(),
            Err(Error::NegativeLambda { module: 0, .. })
        ));

        let mut p = small_random();
        p.c[0] = -1.0;
        assert!(matches!(p.validate(), Err(Error::Negativity { .. })));
    }

    #[test]
    fn validate_rejects_shape_errors() {
        let mut p = small_random();
        p.layers[1].u = DMatrix::zeros(5, 4);
        assert!(matches!(p.validate(), Err(Error::DimensionMismatch(_))));

        let mut p = small_random();
        p.layers[0].u = DMatrix::zeros(5, 1);
        assert!(matches!(p.validate(), Err(Error::DimensionMismatch(_))));

        let mut p = small_random();
        p.cone[0].d = DVector::zeros(2);
        assert!(matches!(p.validate(), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn validate_rejects_non_finite() {
        let mut p = small_random();
        p.layers[0].w[(0, 0)] = f64::NAN;
        assert!(matches!(p.validate(), Err(Error::NonFiniteParameter(_))));
    }

    #[test]
    fn random_build_is_deterministic_and_valid() {
        let arch = Architecture::uniform(20, 64, 4, 2, 2, 20);
        let p1 = build_random(0, &arch).unwrap();
        let p2 = build_random(0, &arch).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(p1.widths(), vec![64; 4]);
        assert_eq!(p1.quad.len(), 2);
        assert_eq!(p1.cone.len(), 2);
        assert!(p1.quad.iter().all(|m| (0.5..=1.5).contains(&m.alpha)));
        assert!(p1.cone.iter().all(|m| (0.5..=1.5).contains(&m.lambda)));
        let p3 = build_random(1, &arch).unwrap();
        assert_ne!(p1, p3);
    }

    #[test]
    fn random_build_rejects_zero_dims() {
        assert!(matches!(
            build_random(0, &Architecture::uniform(0, 4, 2, 1, 1, 2)),
            Err(Error::InvalidDescriptor(_))
        ));
        assert!(matches!(
            build_random(0, &Architecture::uniform(3, 0, 2, 1, 1, 2)),
            Err(Error::InvalidDescriptor(_))
        ));
        assert!(matches!(
            build_random(0, &Architecture::uniform(3, 4, 2, 1, 1, 0)),
            Err(Error::InvalidDescriptor(_))
        ));
    }

    #[test]
    fn constant_network() {
        let mut p = small_random();
        for l in &mut p.layers {
            l.w.fill(0.0);
            l.u.fill(0.0);
            l.b.fill(0.0);
        }
        p.c.fill(0.0);
        p.v.fill(0.0);
        p.quad.clear();
        p.cone.clear();
        p.b0 = 3.5;
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5, 7.0]);
        assert_eq!(p.value(&x).unwrap(), 3.5);
    }

    #[test]
    fn squared_norm_network() {
        let p = quadratic_only();
        let x = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(p.value(&x).unwrap(), 2.0);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = quadratic_only();
        assert!(matches!(
            p.forward(&DVector::from_vec(vec![f64::NAN, 0.0])),
            Err(Error::NonFiniteInput)
        ));
        assert!(matches!(
            p.forward(&DVector::zeros(3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn forward_trace_invariants() {
        let p = small_random();
        let x = DVector::from_vec(vec![0.3, -1.1, 0.7, 0.2]);
        let t = p.forward(&x).unwrap();
        for (a, z) in t.a.iter().zip(&t.z) {
            for (ai, zi) in a.iter().zip(z.iter()) {
                assert_eq!(*zi, ai.max(0.0));
            }
        }
        let relu = p.c.dot(t.z.last().unwrap()) + p.v.dot(&x) + p.b0;
        let mods: f64 = p
            .quad
            .iter()
            .zip(&t.q)
            .map(|(m, q)| 0.5 * m.alpha * q.norm_squared())
            .sum::<f64>()
            + p.cone
                .iter()
                .zip(&t.u)
                .map(|(m, u)| m.lambda * u.norm())
                .sum::<f64>();
        assert!(((t.value - relu) - mods).abs() <= 1e-12 * (1.0 + mods.abs()));
        assert_eq!(t, p.forward(&x).unwrap());
    }

    #[test]
    fn degenerate_construction_is_exact() {
        let (p, x0) = build_degenerate_2d(DegeneracySpec::default());
        p.validate().unwrap();
        let t = p.forward(&x0).unwrap();
        assert_eq!(t.a[0][1], 0.0);
        assert_eq!(t.u[0], DVector::zeros(2));

        let report = degeneracy_report(&t, 0.0);
        assert_eq!(report.relu_zero_coords, vec![(0, 1)]);
        assert_eq!(report.conic_zero_modules, vec![0]);
        assert!(!report.is_nondegenerate);

        for (l, a) in t.a.iter().enumerate() {
            for (i, v) in a.iter().enumerate() {
                if (l, i) != (0, 1) {
                    assert!(v.abs() >= 0.1, "margin at ({l},{i}) is {v}");
                }
            }
        }
        assert!(t.u[1].norm() >= 0.1);

        let shifted = &x0 + DVector::from_vec(vec![0.5, 0.5]);
        let r = degeneracy_report(&p.forward(&shifted).unwrap(), DEFAULT_TAU);
        assert!(r.is_nondegenerate);
    }

    #[test]
    fn degenerate_construction_other_choices() {
        let spec = DegeneracySpec {
            layer: 1,
            coord: 0,
            cone_module: 1,
        };
        let (p, x0) = build_degenerate_2d(spec);
        p.validate().unwrap();
        let r = degeneracy_report(&p.forward(&x0).unwrap(), 0.0);
        assert_eq!(r.relu_zero_coords, vec![(1, 0)]);
        assert_eq!(r.conic_zero_modules, vec![1]);
    }

    #[test]
    fn degeneracy_tolerance_monotone() {
        let p = small_random();
        let x = DVector::from_vec(vec![0.5, 0.1, -0.3, 0.9]);
        let t = p.forward(&x).unwrap();
        let tight = degeneracy_report(&t, DEFAULT_TAU);
        assert!(tight.is_nondegenerate);
        let loose = degeneracy_report(&t, 1e300);
        let n_relu: usize = p.widths().iter().sum();
        assert_eq!(loose.relu_zero_coords.len(), n_relu);
        assert_eq!(loose.conic_zero_modules.len(), p.cone.len());
    }
}
