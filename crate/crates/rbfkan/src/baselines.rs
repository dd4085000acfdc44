//! Comparison models trained by the same loop as the adaptive RBF-KAN:
//! a FastKAN with frozen shape parameter, a B-spline KAN, a Chebyshev
//! polynomial KAN, and a plain MLP.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kan::{
    hidden_layernorm, layernorm_backward, layernorm_forward, silu, silu_deriv, KanLayer,
    LayerGrads, LayerTrace, ModelConfig, RbfKanModel,
};
use crate::rng::SeededRng;
use crate::training::{BackpropResult, Trainable};

/// Shape parameter of the fixed-h FastKAN baseline.
pub const FIXED_SHAPE_H: f64 = 0.5714;

// ---------------------------------------------------------------------------
// Fixed-shape FastKAN
// ---------------------------------------------------------------------------

/// An [`RbfKanModel`] whose `theta` is frozen: the optimizer never sees it
/// because it is excluded from the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedShapeKan {
    pub inner: RbfKanModel,
}

impl FixedShapeKan {
    pub fn init(config: &ModelConfig, h: f64) -> Result<Self> {
        Ok(FixedShapeKan {
            inner: RbfKanModel::init(config, h)?,
        })
    }
}

impl Trainable for FixedShapeKan {
    fn input_dim(&self) -> usize {
        self.inner.config.widths[0]
    }

    fn output_dim(&self) -> usize {
        *self.inner.config.widths.last().unwrap()
    }

    fn params(&self) -> Vec<f64> {
        self.inner.params()[1..].to_vec()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let mut full = Vec::with_capacity(params.len() + 1);
        full.push(self.inner.theta);
        full.extend_from_slice(params);
        self.inner.set_params(&full)
    }

    fn forward(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        Ok(self.inner.forward(inputs, n)?.0)
    }

    fn backprop(
        &self,
        inputs: &[f64],
        n: usize,
        output_grads: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<BackpropResult> {
        let (outputs, trace) = self.inner.forward(inputs, n)?;
        let og = output_grads(&outputs);
        let grads = self.inner.backward(&trace, &og)?.to_flat();
        Ok(BackpropResult {
            outputs,
            grads: grads[1..].to_vec(),
        })
    }

    fn shape_param(&self) -> Option<f64> {
        Some(self.inner.h())
    }
}

// ---------------------------------------------------------------------------
// Shared edge-network machinery (spline and Chebyshev KANs)
// ---------------------------------------------------------------------------

fn init_edge_layers(
    widths: &[usize],
    nb: usize,
    use_residual: bool,
    use_layernorm: bool,
    seed: u64,
    init_scale: f64,
) -> Vec<KanLayer> {
    let mut rng = SeededRng::new(seed);
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for layer_idx in 0..widths.len() - 1 {
        let in_dim = widths[layer_idx];
        let out_dim = widths[layer_idx + 1];
        let coefficients = (0..out_dim * in_dim * nb)
            .map(|_| rng.normal() * init_scale)
            .collect();
        let residual_weights = if use_residual {
            vec![1.0; out_dim * in_dim]
        } else {
            Vec::new()
        };
        let (ln_gain, ln_bias) = if hidden_layernorm(use_layernorm, layer_idx, in_dim) {
            (vec![1.0; in_dim], vec![0.0; in_dim])
        } else {
            (Vec::new(), Vec::new())
        };
        layers.push(KanLayer {
            in_dim,
            out_dim,
            coefficients,
            residual_weights,
            ln_gain,
            ln_bias,
        });
    }
    layers
}

fn edge_net_forward(
    layers: &[KanLayer],
    inputs: &[f64],
    n: usize,
    d0: usize,
    nb: usize,
    basis: &dyn Fn(f64, &mut [f64]),
) -> Result<(Vec<f64>, Vec<LayerTrace>)> {
    if n == 0 {
        return Err(Error::domain("forward needs a nonempty batch"));
    }
    if inputs.len() != n * d0 {
        return Err(Error::domain(format!(
            "batch of {n} samples with input dim {d0} needs {} values, got {}",
            n * d0,
            inputs.len()
        )));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("forward inputs must be finite"));
    }
    let mut traces = Vec::with_capacity(layers.len());
    let mut cur = inputs.to_vec();
    for (layer_idx, layer) in layers.iter().enumerate() {
        let din = layer.in_dim;
        let dout = layer.out_dim;
        let ln = !layer.ln_gain.is_empty();

        let mut z = if ln { vec![0.0; n * din] } else { cur.clone() };
        let mut mean = if ln { vec![0.0; n] } else { Vec::new() };
        let mut inv_std = if ln { vec![0.0; n] } else { Vec::new() };
        if ln {
            for s in 0..n {
                let x = &cur[s * din..(s + 1) * din];
                let (m, is) = layernorm_forward(
                    x,
                    &layer.ln_gain,
                    &layer.ln_bias,
                    &mut z[s * din..(s + 1) * din],
                );
                mean[s] = m;
                inv_std[s] = is;
            }
        }

        let mut bas = vec![0.0; n * din * nb];
        for s in 0..n {
            for ni in 0..din {
                basis(
                    z[s * din + ni],
                    &mut bas[(s * din + ni) * nb..(s * din + ni + 1) * nb],
                );
            }
        }

        let mut out = vec![0.0; n * dout];
        for s in 0..n {
            for m in 0..dout {
                let mut acc = 0.0;
                for ni in 0..din {
                    let coefs = &layer.coefficients[(m * din + ni) * nb..(m * din + ni + 1) * nb];
                    let row = &bas[(s * din + ni) * nb..(s * din + ni + 1) * nb];
                    for j in 0..nb {
                        acc += coefs[j] * row[j];
                    }
                    if !layer.residual_weights.is_empty() {
                        acc += layer.residual_weights[m * din + ni] * silu(z[s * din + ni]);
                    }
                }
                out[s * dout + m] = acc;
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::diverged(format!(
                "non-finite activation after layer {layer_idx}"
            )));
        }
        traces.push(LayerTrace {
            input: cur,
            z,
            mean,
            inv_std,
            basis: bas,
        });
        cur = out;
    }
    Ok((cur, traces))
}

fn edge_net_backward(
    layers: &[KanLayer],
    traces: &[LayerTrace],
    n: usize,
    nb: usize,
    output_grads: &[f64],
    basis_deriv: &dyn Fn(f64, &mut [f64]),
) -> Vec<LayerGrads> {
    let mut layer_grads: Vec<LayerGrads> = layers
        .iter()
        .map(|l| LayerGrads {
            coefficients: vec![0.0; l.coefficients.len()],
            residual_weights: vec![0.0; l.residual_weights.len()],
            ln_gain: vec![0.0; l.ln_gain.len()],
            ln_bias: vec![0.0; l.ln_bias.len()],
        })
        .collect();

    let mut grad = output_grads.to_vec();
    let mut derivs = vec![0.0; nb];
    for layer_idx in (0..layers.len()).rev() {
        let layer = &layers[layer_idx];
        let lt = &traces[layer_idx];
        let din = layer.in_dim;
        let dout = layer.out_dim;
        let lg = &mut layer_grads[layer_idx];
        let mut dz = vec![0.0; n * din];

        for s in 0..n {
            let gout = &grad[s * dout..(s + 1) * dout];
            for m in 0..dout {
                let gm = gout[m];
                if gm == 0.0 {
                    continue;
                }
                for ni in 0..din {
                    let cg = &mut lg.coefficients[(m * din + ni) * nb..(m * din + ni + 1) * nb];
                    let row = &lt.basis[(s * din + ni) * nb..(s * din + ni + 1) * nb];
                    for j in 0..nb {
                        cg[j] += gm * row[j];
                    }
                    if !layer.residual_weights.is_empty() {
                        lg.residual_weights[m * din + ni] += gm * silu(lt.z[s * din + ni]);
                    }
                }
            }
            for ni in 0..din {
                let zv = lt.z[s * din + ni];
                basis_deriv(zv, &mut derivs);
                let mut acc = 0.0;
                for m in 0..dout {
                    let gm = gout[m];
                    if gm == 0.0 {
                        continue;
                    }
                    let coefs = &layer.coefficients[(m * din + ni) * nb..(m * din + ni + 1) * nb];
                    let mut d_edge = 0.0;
                    for j in 0..nb {
                        d_edge += coefs[j] * derivs[j];
                    }
                    if !layer.residual_weights.is_empty() {
                        d_edge += layer.residual_weights[m * din + ni] * silu_deriv(zv);
                    }
                    acc += gm * d_edge;
                }
                dz[s * din + ni] = acc;
            }
        }

        if !layer.ln_gain.is_empty() {
            let mut dx = vec![0.0; n * din];
            for s in 0..n {
                layernorm_backward(
                    &dz[s * din..(s + 1) * din],
                    &lt.input[s * din..(s + 1) * din],
                    lt.mean[s],
                    lt.inv_std[s],
                    &layer.ln_gain,
                    &mut dx[s * din..(s + 1) * din],
                    &mut lg.ln_gain,
                    &mut lg.ln_bias,
                );
            }
            grad = dx;
        } else {
            grad = dz;
        }
    }
    layer_grads
}

fn flatten_layer_params(layers: &[KanLayer]) -> Vec<f64> {
    let mut out = Vec::new();
    for l in layers {
        out.extend_from_slice(&l.coefficients);
        out.extend_from_slice(&l.residual_weights);
        out.extend_from_slice(&l.ln_gain);
        out.extend_from_slice(&l.ln_bias);
    }
    out
}

fn unflatten_layer_params(layers: &mut [KanLayer], params: &[f64]) -> Result<()> {
    let expected: usize = layers
        .iter()
        .map(|l| l.coefficients.len() + l.residual_weights.len() + l.ln_gain.len() + l.ln_bias.len())
        .sum();
    if params.len() != expected {
        return Err(Error::domain(format!(
            "expected {expected} parameters, got {}",
            params.len()
        )));
    }
    let mut pos = 0;
    let take = |dst: &mut [f64], pos: &mut usize| {
        dst.copy_from_slice(&params[*pos..*pos + dst.len()]);
        *pos += dst.len();
    };
    for l in layers {
        take(&mut l.coefficients, &mut pos);
        take(&mut l.residual_weights, &mut pos);
        take(&mut l.ln_gain, &mut pos);
        take(&mut l.ln_bias, &mut pos);
    }
    Ok(())
}

fn flatten_layer_grads(grads: &[LayerGrads]) -> Vec<f64> {
    let mut out = Vec::new();
    for g in grads {
        out.extend_from_slice(&g.coefficients);
        out.extend_from_slice(&g.residual_weights);
        out.extend_from_slice(&g.ln_gain);
        out.extend_from_slice(&g.ln_bias);
    }
    out
}

// ---------------------------------------------------------------------------
// B-spline KAN
// ---------------------------------------------------------------------------

/// Clamped uniform knot vector: degree+1 copies of each endpoint around
/// `intervals - 1` interior knots.
pub fn clamped_knots(intervals: usize, degree: usize, domain: (f64, f64)) -> Vec<f64> {
    let (a, b) = domain;
    let mut knots = Vec::with_capacity(intervals + 2 * degree + 1);
    for _ in 0..=degree {
        knots.push(a);
    }
    for i in 1..intervals {
        knots.push(a + (b - a) * i as f64 / intervals as f64);
    }
    for _ in 0..=degree {
        knots.push(b);
    }
    knots
}

fn degree_zero(x: f64, knots: &[f64], j: usize) -> f64 {
    let last = *knots.last().unwrap();
    let inside = knots[j] <= x && x < knots[j + 1];
    let at_right_end = x == last && knots[j] < knots[j + 1] && knots[j + 1] == last;
    if inside || at_right_end {
        1.0
    } else {
        0.0
    }
}

/// Cox-de Boor evaluation of a single basis function `B_{j,degree}(x)`.
pub fn bspline_basis(x: f64, knots: &[f64], j: usize, degree: usize) -> f64 {
    if degree == 0 {
        return degree_zero(x, knots, j);
    }
    let mut value = 0.0;
    let left_den = knots[j + degree] - knots[j];
    if left_den > 0.0 {
        value += (x - knots[j]) / left_den * bspline_basis(x, knots, j, degree - 1);
    }
    let right_den = knots[j + degree + 1] - knots[j + 1];
    if right_den > 0.0 {
        value += (knots[j + degree + 1] - x) / right_den * bspline_basis(x, knots, j + 1, degree - 1);
    }
    value
}

/// All `num_basis` degree-`degree` values at once (triangular recurrence).
fn bspline_values(x: f64, knots: &[f64], degree: usize, num_basis: usize, out: &mut [f64]) {
    let m = knots.len() - 1;
    let mut b = vec![0.0; m];
    for j in 0..m {
        b[j] = degree_zero(x, knots, j);
    }
    for d in 1..=degree {
        for j in 0..m - d {
            let mut v = 0.0;
            let left_den = knots[j + d] - knots[j];
            if left_den > 0.0 {
                v += (x - knots[j]) / left_den * b[j];
            }
            let right_den = knots[j + d + 1] - knots[j + 1];
            if right_den > 0.0 {
                v += (knots[j + d + 1] - x) / right_den * b[j + 1];
            }
            b[j] = v;
        }
    }
    out.copy_from_slice(&b[..num_basis]);
}

/// Derivatives `B'_{j,degree}(x)` from the degree-1 recurrence
/// `B' = degree * (B_{j,d-1}/den_l - B_{j+1,d-1}/den_r)`.
fn bspline_derivs(x: f64, knots: &[f64], degree: usize, num_basis: usize, out: &mut [f64]) {
    debug_assert!(degree >= 1);
    let m = knots.len() - 1;
    let mut b = vec![0.0; m];
    for j in 0..m {
        b[j] = degree_zero(x, knots, j);
    }
    for d in 1..degree {
        for j in 0..m - d {
            let mut v = 0.0;
            let left_den = knots[j + d] - knots[j];
            if left_den > 0.0 {
                v += (x - knots[j]) / left_den * b[j];
            }
            let right_den = knots[j + d + 1] - knots[j + 1];
            if right_den > 0.0 {
                v += (knots[j + d + 1] - x) / right_den * b[j + 1];
            }
            b[j] = v;
        }
    }
    let df = degree as f64;
    for j in 0..num_basis {
        let mut v = 0.0;
        let left_den = knots[j + degree] - knots[j];
        if left_den > 0.0 {
            v += df * b[j] / left_den;
        }
        let right_den = knots[j + degree + 1] - knots[j + 1];
        if right_den > 0.0 {
            v -= df * b[j + 1] / right_den;
        }
        out[j] = v;
    }
}

/// Settings for [`SplineKanModel`]. The defaults mirror the original KAN
/// convention: 5 grid intervals, cubic splines on `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplineKanConfig {
    pub widths: Vec<usize>,
    pub grid_intervals: usize,
    pub degree: usize,
    pub domain: (f64, f64),
    pub use_layernorm: bool,
    pub use_residual: bool,
    pub seed: u64,
}

impl Default for SplineKanConfig {
    fn default() -> Self {
        SplineKanConfig {
            widths: vec![2, 5, 5, 1],
            grid_intervals: 5,
            degree: 3,
            domain: (-1.0, 1.0),
            use_layernorm: true,
            use_residual: true,
            seed: 0,
        }
    }
}

impl SplineKanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::domain("widths must be >= 1 with at least two layers"));
        }
        if self.grid_intervals < 1 {
            return Err(Error::domain("grid_intervals must be >= 1"));
        }
        if self.degree < 1 {
            return Err(Error::domain("spline degree must be >= 1"));
        }
        let (a, b) = self.domain;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::domain("spline domain must be a finite increasing pair"));
        }
        Ok(())
    }

    pub fn num_basis(&self) -> usize {
        self.grid_intervals + self.degree
    }
}

/// KAN with B-spline edge functions (plus the SiLU residual branch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineKanModel {
    pub config: SplineKanConfig,
    pub knots: Vec<f64>,
    pub layers: Vec<KanLayer>,
}

impl SplineKanModel {
    pub fn init(config: &SplineKanConfig) -> Result<Self> {
        config.validate()?;
        let nb = config.num_basis();
        let layers = init_edge_layers(
            &config.widths,
            nb,
            config.use_residual,
            config.use_layernorm,
            config.seed,
            1.0 / (nb as f64).sqrt(),
        );
        Ok(SplineKanModel {
            config: config.clone(),
            knots: clamped_knots(config.grid_intervals, config.degree, config.domain),
            layers,
        })
    }
}

impl Trainable for SplineKanModel {
    fn input_dim(&self) -> usize {
        self.config.widths[0]
    }

    fn output_dim(&self) -> usize {
        *self.config.widths.last().unwrap()
    }

    fn params(&self) -> Vec<f64> {
        flatten_layer_params(&self.layers)
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        unflatten_layer_params(&mut self.layers, params)
    }

    fn forward(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        let nb = self.config.num_basis();
        let basis =
            |x: f64, out: &mut [f64]| bspline_values(x, &self.knots, self.config.degree, nb, out);
        Ok(edge_net_forward(&self.layers, inputs, n, self.input_dim(), nb, &basis)?.0)
    }

    fn backprop(
        &self,
        inputs: &[f64],
        n: usize,
        output_grads: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<BackpropResult> {
        let nb = self.config.num_basis();
        let basis =
            |x: f64, out: &mut [f64]| bspline_values(x, &self.knots, self.config.degree, nb, out);
        let (outputs, traces) =
            edge_net_forward(&self.layers, inputs, n, self.input_dim(), nb, &basis)?;
        let og = output_grads(&outputs);
        let deriv =
            |x: f64, out: &mut [f64]| bspline_derivs(x, &self.knots, self.config.degree, nb, out);
        let grads = edge_net_backward(&self.layers, &traces, n, nb, &og, &deriv);
        Ok(BackpropResult {
            outputs,
            grads: flatten_layer_grads(&grads),
        })
    }
}

// ---------------------------------------------------------------------------
// Chebyshev KAN
// ---------------------------------------------------------------------------

/// Chebyshev values `T_0..T_degree` at `t` by the three-term recurrence.
fn chebyshev_values(t: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = t;
    }
    for j in 2..out.len() {
        out[j] = 2.0 * t * out[j - 1] - out[j - 2];
    }
}

/// Settings for [`ChebKanModel`]: polynomial degree and a fixed tanh
/// squash that maps unbounded activations into the Chebyshev domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChebKanConfig {
    pub widths: Vec<usize>,
    pub degree: usize,
    pub use_layernorm: bool,
    pub seed: u64,
}

impl Default for ChebKanConfig {
    fn default() -> Self {
        ChebKanConfig {
            widths: vec![2, 8, 1],
            degree: 4,
            use_layernorm: true,
            seed: 0,
        }
    }
}

impl ChebKanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.iter().any(|&w| w == 0) {
            return Err(Error::domain("widths must be >= 1 with at least two layers"));
        }
        if self.degree < 1 {
            return Err(Error::domain("chebyshev degree must be >= 1"));
        }
        Ok(())
    }
}

/// KAN with Chebyshev polynomial edges `sum_j c_j T_j(tanh x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebKanModel {
    pub config: ChebKanConfig,
    pub layers: Vec<KanLayer>,
}

impl ChebKanModel {
    pub fn init(config: &ChebKanConfig) -> Result<Self> {
        config.validate()?;
        let nb = config.degree + 1;
        let layers = init_edge_layers(
            &config.widths,
            nb,
            false,
            config.use_layernorm,
            config.seed,
            1.0 / (nb as f64).sqrt(),
        );
        Ok(ChebKanModel {
            config: config.clone(),
            layers,
        })
    }
}

impl Trainable for ChebKanModel {
    fn input_dim(&self) -> usize {
        self.config.widths[0]
    }

    fn output_dim(&self) -> usize {
        *self.config.widths.last().unwrap()
    }

    fn params(&self) -> Vec<f64> {
        flatten_layer_params(&self.layers)
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        unflatten_layer_params(&mut self.layers, params)
    }

    fn forward(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        let basis = |x: f64, out: &mut [f64]| chebyshev_values(x.tanh(), out);
        let nb = self.config.degree + 1;
        Ok(edge_net_forward(&self.layers, inputs, n, self.input_dim(), nb, &basis)?.0)
    }

    fn backprop(
        &self,
        inputs: &[f64],
        n: usize,
        output_grads: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<BackpropResult> {
        let nb = self.config.degree + 1;
        let basis = |x: f64, out: &mut [f64]| chebyshev_values(x.tanh(), out);
        let (outputs, traces) =
            edge_net_forward(&self.layers, inputs, n, self.input_dim(), nb, &basis)?;
        let og = output_grads(&outputs);
        // d/dx T_j(tanh x): T' by recurrence, times sech^2 = 1 - tanh^2.
        let deriv = |x: f64, out: &mut [f64]| {
            let t = x.tanh();
            let sech2 = 1.0 - t * t;
            let mut values = vec![0.0; out.len()];
            chebyshev_values(t, &mut values);
            out[0] = 0.0;
            if out.len() > 1 {
                out[1] = sech2;
            }
            let mut dprev = 0.0;
            let mut dcur = 1.0;
            for j in 2..out.len() {
                let dnext = 2.0 * values[j - 1] + 2.0 * t * dcur - dprev;
                out[j] = dnext * sech2;
                dprev = dcur;
                dcur = dnext;
            }
        };
        let grads = edge_net_backward(&self.layers, &traces, n, nb, &og, &deriv);
        Ok(BackpropResult {
            outputs,
            grads: flatten_layer_grads(&grads),
        })
    }
}

// ---------------------------------------------------------------------------
// MLP
// ---------------------------------------------------------------------------

/// Fixed nonlinearity applied between the affine maps of an [`MlpModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    #[inline]
    fn deriv(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpConfig {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            widths: vec![2, 128, 128, 128, 1],
            activation: Activation::Relu,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `[out_dim][in_dim]`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Plain fully connected network with a fixed activation between layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub config: MlpConfig,
    pub layers: Vec<AffineLayer>,
}

impl MlpModel {
    pub fn init(config: &MlpConfig) -> Result<Self> {
        if config.widths.len() < 2 || config.widths.iter().any(|&w| w == 0) {
            return Err(Error::domain("widths must be >= 1 with at least two layers"));
        }
        let mut rng = SeededRng::new(config.seed);
        let mut layers = Vec::with_capacity(config.widths.len() - 1);
        for k in 0..config.widths.len() - 1 {
            let in_dim = config.widths[k];
            let out_dim = config.widths[k + 1];
            // He scaling for ReLU, Xavier for tanh.
            let scale = match config.activation {
                Activation::Relu => (2.0 / in_dim as f64).sqrt(),
                Activation::Tanh => (1.0 / in_dim as f64).sqrt(),
            };
            let weights = (0..out_dim * in_dim).map(|_| rng.normal() * scale).collect();
            layers.push(AffineLayer {
                in_dim,
                out_dim,
                weights,
                biases: vec![0.0; out_dim],
            });
        }
        Ok(MlpModel {
            config: config.clone(),
            layers,
        })
    }

    fn forward_traced(&self, inputs: &[f64], n: usize) -> Result<(Vec<f64>, MlpTrace)> {
        let d0 = self.config.widths[0];
        if n == 0 {
            return Err(Error::domain("forward needs a nonempty batch"));
        }
        if inputs.len() != n * d0 {
            return Err(Error::domain(format!(
                "batch of {n} samples with input dim {d0} needs {} values, got {}",
                n * d0,
                inputs.len()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("forward inputs must be finite"));
        }
        let last = self.layers.len() - 1;
        let mut activations = vec![inputs.to_vec()];
        let mut pres = Vec::with_capacity(last);
        for (k, layer) in self.layers.iter().enumerate() {
            let a = activations.last().unwrap();
            let din = layer.in_dim;
            let dout = layer.out_dim;
            let mut pre = vec![0.0; n * dout];
            for s in 0..n {
                let x = &a[s * din..(s + 1) * din];
                for m in 0..dout {
                    let w = &layer.weights[m * din..(m + 1) * din];
                    let mut acc = layer.biases[m];
                    for i in 0..din {
                        acc += w[i] * x[i];
                    }
                    pre[s * dout + m] = acc;
                }
            }
            if pre.iter().any(|v| !v.is_finite()) {
                return Err(Error::diverged(format!("non-finite activation after layer {k}")));
            }
            if k < last {
                let act: Vec<f64> = pre.iter().map(|&v| self.config.activation.apply(v)).collect();
                pres.push(pre);
                activations.push(act);
            } else {
                activations.push(pre);
            }
        }
        let outputs = activations.last().unwrap().clone();
        Ok((
            outputs,
            MlpTrace {
                activations,
                pres,
            },
        ))
    }
}

struct MlpTrace {
    /// Inputs to each affine layer (`activations[k]`) plus the final output.
    activations: Vec<Vec<f64>>,
    /// Pre-activation values for every hidden layer.
    pres: Vec<Vec<f64>>,
}

impl Trainable for MlpModel {
    fn input_dim(&self) -> usize {
        self.config.widths[0]
    }

    fn output_dim(&self) -> usize {
        *self.config.widths.last().unwrap()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        let expected: usize = self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum();
        if params.len() != expected {
            return Err(Error::domain(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        let mut pos = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[pos..pos + nw]);
            pos += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&params[pos..pos + nb]);
            pos += nb;
        }
        Ok(())
    }

    fn forward(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        Ok(self.forward_traced(inputs, n)?.0)
    }

    fn backprop(
        &self,
        inputs: &[f64],
        n: usize,
        output_grads: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<BackpropResult> {
        let (outputs, trace) = self.forward_traced(inputs, n)?;
        let og = output_grads(&outputs);

        let mut dw: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
        let mut db: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect();

        let mut grad = og;
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let din = layer.in_dim;
            let dout = layer.out_dim;
            let a = &trace.activations[k];
            let mut dx = vec![0.0; n * din];
            for s in 0..n {
                let g = &grad[s * dout..(s + 1) * dout];
                let x = &a[s * din..(s + 1) * din];
                for m in 0..dout {
                    let gm = g[m];
                    if gm == 0.0 {
                        continue;
                    }
                    db[k][m] += gm;
                    let wrow = &layer.weights[m * din..(m + 1) * din];
                    let dwrow = &mut dw[k][m * din..(m + 1) * din];
                    for i in 0..din {
                        dwrow[i] += gm * x[i];
                        dx[s * din + i] += gm * wrow[i];
                    }
                }
            }
            if k > 0 {
                let pre = &trace.pres[k - 1];
                for (v, p) in dx.iter_mut().zip(pre.iter()) {
                    *v *= self.config.activation.deriv(*p);
                }
            }
            grad = dx;
        }

        let mut flat = Vec::new();
        for k in 0..self.layers.len() {
            flat.extend_from_slice(&dw[k]);
            flat.extend_from_slice(&db[k]);
        }
        Ok(BackpropResult {
            outputs,
            grads: flat,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{mse_loss, Trainable};
    use proptest::prelude::*;

    #[test]
    fn degree_zero_is_an_indicator() {
        let knots = clamped_knots(2, 0, (0.0, 1.0));
        // knots = [0, 0.5, 1]
        assert_eq!(bspline_basis(0.25, &knots, 0, 0), 1.0);
        assert_eq!(bspline_basis(0.25, &knots, 1, 0), 0.0);
        assert_eq!(bspline_basis(0.75, &knots, 1, 0), 1.0);
        assert_eq!(bspline_basis(1.0, &knots, 1, 0), 1.0); // right end closed
        assert_eq!(bspline_basis(1.5, &knots, 1, 0), 0.0);
    }

    #[test]
    fn linear_hat_peaks_at_one() {
        let knots = clamped_knots(2, 1, (-1.0, 1.0));
        // B_{1,1} is the hat centered at the interior knot 0.
        assert_eq!(bspline_basis(0.0, &knots, 1, 1), 1.0);
        assert!((bspline_basis(-0.5, &knots, 1, 1) - 0.5).abs() < 1e-15);
        assert_eq!(bspline_basis(-1.0, &knots, 1, 1), 0.0);
    }

    #[test]
    fn partition_of_unity_inside_grid() {
        let cfg = SplineKanConfig::default(); // H=5, J=3 on [-1, 1]
        let knots = clamped_knots(cfg.grid_intervals, cfg.degree, cfg.domain);
        let nb = cfg.num_basis();
        let mut rng = crate::rng::SeededRng::new(2);
        let mut values = vec![0.0; nb];
        for _ in 0..1000 {
            let x = -1.0 + 2.0 * rng.uniform01();
            bspline_values(x, &knots, cfg.degree, nb, &mut values);
            let sum: f64 = values.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "sum {sum} at x = {x}");
            // The vectorized path agrees with the single-function recursion.
            for j in 0..nb {
                let single = bspline_basis(x, &knots, j, cfg.degree);
                assert!((values[j] - single).abs() < 1e-13);
            }
        }
        // Endpoints included.
        bspline_values(1.0, &knots, cfg.degree, nb, &mut values);
        assert!((values.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn spline_derivs_match_finite_differences() {
        let cfg = SplineKanConfig::default();
        let knots = clamped_knots(cfg.grid_intervals, cfg.degree, cfg.domain);
        let nb = cfg.num_basis();
        let mut d = vec![0.0; nb];
        let mut up = vec![0.0; nb];
        let mut dn = vec![0.0; nb];
        for i in 0..50 {
            let x = -0.99 + 1.98 * i as f64 / 49.0;
            bspline_derivs(x, &knots, cfg.degree, nb, &mut d);
            bspline_values(x + 1e-6, &knots, cfg.degree, nb, &mut up);
            bspline_values(x - 1e-6, &knots, cfg.degree, nb, &mut dn);
            for j in 0..nb {
                let fd = (up[j] - dn[j]) / 2e-6;
                assert!((fd - d[j]).abs() < 1e-6 * fd.abs().max(1.0), "j={j} x={x}");
            }
        }
    }

    #[test]
    fn zero_coefficient_spline_kan_outputs_zero() {
        let cfg = SplineKanConfig {
            widths: vec![2, 3, 1],
            use_residual: false,
            ..SplineKanConfig::default()
        };
        let mut m = SplineKanModel::init(&cfg).unwrap();
        let zeros = vec![0.0; m.params().len()];
        m.set_params(&zeros).unwrap();
        // Layernorm gains are parameters too; zeroing them also zeroes the
        // normalized activations, so the output is exactly 0.
        let out = m.forward(&[0.3, 0.4, 0.9, 0.2], 2).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn chebyshev_identity_edge_returns_squashed_input() {
        let cfg = ChebKanConfig {
            widths: vec![1, 1],
            degree: 4,
            use_layernorm: false,
            seed: 0,
        };
        let mut m = ChebKanModel::init(&cfg).unwrap();
        let mut p = vec![0.0; m.params().len()];
        p[1] = 1.0; // c_1 only: psi(x) = T_1(tanh x) = tanh x
        m.set_params(&p).unwrap();
        for x in [-2.0, -0.3, 0.0, 1.1, 4.0] {
            let out = m.forward(&[x], 1).unwrap();
            assert!((out[0] - x.tanh()).abs() < 1e-15);
        }
    }

    proptest! {
        // cos(j arccos t) equals the three-term recurrence on [-1, 1].
        #[test]
        fn chebyshev_recurrence_matches_cos_form(t in -1.0_f64..=1.0) {
            let mut values = vec![0.0; 9];
            chebyshev_values(t, &mut values);
            for (j, v) in values.iter().enumerate() {
                let direct = (j as f64 * t.acos()).cos();
                prop_assert!((v - direct).abs() <= 1e-12, "j={} v={} direct={}", j, v, direct);
            }
        }
    }

    #[test]
    fn mlp_matches_hand_computed_chain() {
        let cfg = MlpConfig {
            widths: vec![2, 2, 1],
            activation: Activation::Relu,
            seed: 0,
        };
        let mut m = MlpModel::init(&cfg).unwrap();
        // W0 = I, b0 = (0.5, -0.25); W1 = [1, 2], b1 = 0.
        m.set_params(&[1.0, 0.0, 0.0, 1.0, 0.5, -0.25, 1.0, 2.0, 0.0])
            .unwrap();
        let out = m.forward(&[0.3, 0.1, -1.0, 0.5], 2).unwrap();
        assert!((out[0] - 0.8).abs() < 1e-15);
        assert!((out[1] - 0.5).abs() < 1e-15);
    }

    fn gradcheck<M: Trainable>(model: &mut M, inputs: &[f64], n: usize, targets: &[f64]) {
        let analytic = model
            .backprop(inputs, n, &mut |outs: &[f64]| {
                let scale = 2.0 / n as f64;
                outs.iter().zip(targets).map(|(o, t)| scale * (o - t)).collect()
            })
            .unwrap()
            .grads;
        let params = model.params();
        let step = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += step;
            model.set_params(&p).unwrap();
            let up = mse_loss(&model.forward(inputs, n).unwrap(), targets).unwrap();
            p[i] -= 2.0 * step;
            model.set_params(&p).unwrap();
            let dn = mse_loss(&model.forward(inputs, n).unwrap(), targets).unwrap();
            let fd = (up - dn) / (2.0 * step);
            let tol = 1e-8_f64.max(1e-5 * fd.abs().max(analytic[i].abs()));
            assert!(
                (fd - analytic[i]).abs() <= tol,
                "param {i}: fd={fd} analytic={}",
                analytic[i]
            );
        }
        model.set_params(&params).unwrap();
    }

    #[test]
    fn baseline_gradients_match_finite_differences() {
        let mut rng = crate::rng::SeededRng::new(31);
        let n = 5;
        let inputs: Vec<f64> = (0..n * 2).map(|_| rng.uniform01()).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.normal()).collect();

        let mut spline = SplineKanModel::init(&SplineKanConfig {
            widths: vec![2, 3, 1],
            seed: 1,
            ..SplineKanConfig::default()
        })
        .unwrap();
        gradcheck(&mut spline, &inputs, n, &targets);

        let mut cheb = ChebKanModel::init(&ChebKanConfig {
            widths: vec![2, 3, 1],
            seed: 2,
            ..ChebKanConfig::default()
        })
        .unwrap();
        gradcheck(&mut cheb, &inputs, n, &targets);

        let mut mlp = MlpModel::init(&MlpConfig {
            widths: vec![2, 8, 4, 1],
            activation: Activation::Relu,
            seed: 3,
        })
        .unwrap();
        gradcheck(&mut mlp, &inputs, n, &targets);

        let mut fixed = FixedShapeKan::init(
            &ModelConfig {
                widths: vec![2, 3, 1],
                num_centers: 4,
                seed: 4,
                ..ModelConfig::default()
            },
            FIXED_SHAPE_H,
        )
        .unwrap();
        gradcheck(&mut fixed, &inputs, n, &targets);
    }

    #[test]
    fn fixed_shape_theta_never_moves() {
        let mut fixed = FixedShapeKan::init(&ModelConfig::default(), FIXED_SHAPE_H).unwrap();
        let theta_before = fixed.inner.theta;
        let p: Vec<f64> = fixed.params().iter().map(|v| v + 0.1).collect();
        fixed.set_params(&p).unwrap();
        assert_eq!(fixed.inner.theta, theta_before);
        assert_eq!(fixed.shape_param().unwrap(), fixed.inner.h());
        assert!((fixed.inner.h() - FIXED_SHAPE_H).abs() < 1e-12);
    }
}
