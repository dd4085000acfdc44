//! The adaptive RBF-KAN model.
//!
//! Every edge of the network carries a univariate function
//! `psi(x) = sum_j c_j phi(|x - c_j|; h) + w * SiLU(x)` over one shared
//! grid of centers, with a single global shape parameter trained in log
//! space (`theta = ln h`, so `h = e^theta` stays positive no matter how the
//! optimizer moves `theta`). Layer normalization (with learnable gain and
//! bias) is applied to the inputs of hidden layers; the raw network input
//! is never normalized, because per-sample normalization of a 2-feature
//! vector collapses it to `sign(x - y)` and destroys the input.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::rng::SeededRng;
use crate::training::{BackpropResult, Trainable};

pub(crate) const LN_EPS: f64 = 1e-5;

/// SiLU activation `x * sigmoid(x)`, the residual branch of each edge.
#[inline]
pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
pub(crate) fn silu_deriv(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Normalize one sample in place: `z = gain * (x - mean) / std + bias`.
/// Returns `(mean, inv_std)` for the backward pass.
pub(crate) fn layernorm_forward(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    z: &mut [f64],
) -> (f64, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv_std = 1.0 / (var + LN_EPS).sqrt();
    for i in 0..x.len() {
        z[i] = gain[i] * (x[i] - mean) * inv_std + bias[i];
    }
    (mean, inv_std)
}

/// Reverse-mode layer normalization for one sample. Accumulates gain/bias
/// gradients and writes the input gradient.
pub(crate) fn layernorm_backward(
    dz: &[f64],
    x: &[f64],
    mean: f64,
    inv_std: f64,
    gain: &[f64],
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    let d = x.len();
    let df = d as f64;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for i in 0..d {
        let xhat = (x[i] - mean) * inv_std;
        let dxhat = dz[i] * gain[i];
        dgain[i] += dz[i] * xhat;
        dbias[i] += dz[i];
        m1 += dxhat;
        m2 += dxhat * xhat;
    }
    m1 /= df;
    m2 /= df;
    for i in 0..d {
        let xhat = (x[i] - mean) * inv_std;
        let dxhat = dz[i] * gain[i];
        dx[i] = inv_std * (dxhat - m1 - xhat * m2);
    }
}

/// Architecture and initialization settings for [`RbfKanModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Layer widths `[d_0, ..., d_L]`.
    pub widths: Vec<usize>,
    pub kernel: KernelKind,
    /// Number of grid centers per edge.
    pub num_centers: usize,
    /// Inclusive range covered by the equally spaced centers.
    pub center_range: (f64, f64),
    pub use_layernorm: bool,
    pub use_residual: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            widths: vec![2, 8, 1],
            kernel: KernelKind::Ga,
            num_centers: 8,
            center_range: (-2.0, 2.0),
            use_layernorm: true,
            use_residual: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(Error::domain("widths must list at least input and output"));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::domain("all layer widths must be >= 1"));
        }
        if self.num_centers < 2 {
            return Err(Error::domain("num_centers must be >= 2"));
        }
        let (lo, hi) = self.center_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::domain("center_range must be a finite increasing pair"));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Per-layer parameters. Vectors are empty when the corresponding feature
/// is disabled for the layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KanLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Edge coefficients, `[out_dim][in_dim][num_centers]` flattened.
    pub coefficients: Vec<f64>,
    /// Residual SiLU weights, `[out_dim][in_dim]` flattened.
    pub residual_weights: Vec<f64>,
    /// Layernorm gain per input feature (hidden layers only).
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
}

impl KanLayer {
    #[inline]
    fn coef(&self, m: usize, n: usize, k: usize, j: usize) -> f64 {
        self.coefficients[(m * self.in_dim + n) * k + j]
    }

    fn has_layernorm(&self) -> bool {
        !self.ln_gain.is_empty()
    }
}

/// Adaptive RBF Kolmogorov-Arnold network with a single global log-space
/// shape parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfKanModel {
    pub config: ModelConfig,
    /// Grid centers, strictly increasing, shared by every edge.
    pub centers: Vec<f64>,
    pub layers: Vec<KanLayer>,
    /// `theta = ln h`.
    pub theta: f64,
}

/// Cached intermediate values from one forward pass, consumed by
/// [`RbfKanModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub n: usize,
    pub layers: Vec<LayerTrace>,
    pub outputs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Pre-normalization activations, `n x in_dim`.
    pub input: Vec<f64>,
    /// Post-normalization activations (aliases `input` values when the
    /// layer has no normalization), `n x in_dim`.
    pub z: Vec<f64>,
    /// Per-sample normalization statistics (empty without layernorm).
    pub mean: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Kernel values per `(sample, input, center)`, `n x in_dim x K`.
    pub basis: Vec<f64>,
}

/// Exact partials of a traced loss path with respect to every parameter.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub theta: f64,
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub coefficients: Vec<f64>,
    pub residual_weights: Vec<f64>,
    pub ln_gain: Vec<f64>,
    pub ln_bias: Vec<f64>,
}

impl Gradients {
    /// Flatten in the same order as [`RbfKanModel::params`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = vec![self.theta];
        for l in &self.layers {
            out.extend_from_slice(&l.coefficients);
            out.extend_from_slice(&l.residual_weights);
            out.extend_from_slice(&l.ln_gain);
            out.extend_from_slice(&l.ln_bias);
        }
        out
    }
}

impl RbfKanModel {
    /// Build a model with `theta = ln(h_init)`.
    ///
    /// Coefficients are drawn from a seeded normal scaled by `1/sqrt(K)`
    /// (layer by layer, then output, input, center index); residual weights
    /// start at 1, layernorm gains at 1 and biases at 0.
    pub fn init(config: &ModelConfig, h_init: f64) -> Result<Self> {
        config.validate()?;
        if !(h_init.is_finite() && h_init > 0.0) {
            return Err(Error::domain(format!(
                "h_init must be finite and positive, got {h_init}"
            )));
        }
        let k = config.num_centers;
        let (lo, hi) = config.center_range;
        let centers: Vec<f64> = (0..k)
            .map(|j| lo + (hi - lo) * j as f64 / (k - 1) as f64)
            .collect();
        let mut rng = SeededRng::new(config.seed);
        let scale = 1.0 / (k as f64).sqrt();
        let mut layers = Vec::with_capacity(config.num_layers());
        for layer_idx in 0..config.num_layers() {
            let in_dim = config.widths[layer_idx];
            let out_dim = config.widths[layer_idx + 1];
            let coefficients = (0..out_dim * in_dim * k)
                .map(|_| rng.normal() * scale)
                .collect();
            let residual_weights = if config.use_residual {
                vec![1.0; out_dim * in_dim]
            } else {
                Vec::new()
            };
            let (ln_gain, ln_bias) = if hidden_layernorm(config.use_layernorm, layer_idx, in_dim) {
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
        Ok(RbfKanModel {
            config: config.clone(),
            centers,
            layers,
            theta: h_init.ln(),
        })
    }

    /// Current shape parameter `h = e^theta`; positive by construction.
    pub fn h(&self) -> f64 {
        self.theta.exp()
    }

    /// Evaluate a single edge function at `x` (kernel expansion plus the
    /// optional SiLU residual). `x` is the edge's input, i.e. the value
    /// after any layer normalization.
    pub fn edge_eval(&self, layer: usize, m: usize, n: usize, x: f64) -> f64 {
        let l = &self.layers[layer];
        let k = self.centers.len();
        let h = self.h();
        let mut acc = 0.0;
        for (j, &c) in self.centers.iter().enumerate() {
            acc += l.coef(m, n, k, j) * self.config.kernel.profile((x - c).abs() / h);
        }
        if !l.residual_weights.is_empty() {
            acc += l.residual_weights[m * l.in_dim + n] * silu(x);
        }
        acc
    }

    /// Batched forward pass; returns outputs (`n x d_L`, row-major) and the
    /// trace needed for [`backward`](Self::backward).
    pub fn forward(&self, inputs: &[f64], n: usize) -> Result<(Vec<f64>, ForwardTrace)> {
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

        let k = self.centers.len();
        let h = self.h();
        let inv_h = 1.0 / h;
        let kernel = self.config.kernel;

        let mut traces = Vec::with_capacity(self.layers.len());
        let mut cur = inputs.to_vec();
        for (layer_idx, layer) in self.layers.iter().enumerate() {
            let din = layer.in_dim;
            let dout = layer.out_dim;
            let ln = layer.has_layernorm();

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

            let mut basis = vec![0.0; n * din * k];
            for s in 0..n {
                for ni in 0..din {
                    let zv = z[s * din + ni];
                    let row = &mut basis[(s * din + ni) * k..(s * din + ni + 1) * k];
                    for (j, &c) in self.centers.iter().enumerate() {
                        row[j] = kernel.profile((zv - c).abs() * inv_h);
                    }
                }
            }

            let mut out = vec![0.0; n * dout];
            for s in 0..n {
                for m in 0..dout {
                    let mut acc = 0.0;
                    for ni in 0..din {
                        let coefs =
                            &layer.coefficients[(m * din + ni) * k..(m * din + ni + 1) * k];
                        let bas = &basis[(s * din + ni) * k..(s * din + ni + 1) * k];
                        let mut dot = 0.0;
                        for j in 0..k {
                            dot += coefs[j] * bas[j];
                        }
                        acc += dot;
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
                basis,
            });
            cur = out;
        }

        let trace = ForwardTrace {
            n,
            layers: traces,
            outputs: cur.clone(),
        };
        Ok((cur, trace))
    }

    /// Reverse-mode gradients of the traced loss path. `output_grads` is
    /// `dLoss/dOutputs` (`n x d_L`, row-major). The `theta` partial
    /// accumulates `h * dphi/dh` through `h = e^theta`.
    pub fn backward(&self, trace: &ForwardTrace, output_grads: &[f64]) -> Result<Gradients> {
        let n = trace.n;
        let d_last = self.config.widths[self.config.num_layers()];
        if trace.layers.len() != self.layers.len() {
            return Err(Error::domain("trace does not match model depth"));
        }
        if output_grads.len() != n * d_last {
            return Err(Error::domain(format!(
                "output_grads needs {} values, got {}",
                n * d_last,
                output_grads.len()
            )));
        }

        let k = self.centers.len();
        let h = self.h();
        let inv_h = 1.0 / h;
        let kernel = self.config.kernel;

        let mut theta_grad = 0.0;
        let mut layer_grads: Vec<LayerGrads> = self
            .layers
            .iter()
            .map(|l| LayerGrads {
                coefficients: vec![0.0; l.coefficients.len()],
                residual_weights: vec![0.0; l.residual_weights.len()],
                ln_gain: vec![0.0; l.ln_gain.len()],
                ln_bias: vec![0.0; l.ln_bias.len()],
            })
            .collect();

        let mut grad = output_grads.to_vec();
        let mut gprof = vec![0.0; k];
        for layer_idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[layer_idx];
            let lt = &trace.layers[layer_idx];
            let din = layer.in_dim;
            let dout = layer.out_dim;
            let lg = &mut layer_grads[layer_idx];
            let mut dz = vec![0.0; n * din];

            for s in 0..n {
                let gout = &grad[s * dout..(s + 1) * dout];

                // Coefficient and residual-weight gradients.
                for m in 0..dout {
                    let gm = gout[m];
                    if gm == 0.0 {
                        continue;
                    }
                    for ni in 0..din {
                        let cg = &mut lg.coefficients[(m * din + ni) * k..(m * din + ni + 1) * k];
                        let bas = &lt.basis[(s * din + ni) * k..(s * din + ni + 1) * k];
                        for j in 0..k {
                            cg[j] += gm * bas[j];
                        }
                        if !layer.residual_weights.is_empty() {
                            lg.residual_weights[m * din + ni] += gm * silu(lt.z[s * din + ni]);
                        }
                    }
                }

                // Input and theta gradients.
                for ni in 0..din {
                    let zv = lt.z[s * din + ni];
                    for (j, &c) in self.centers.iter().enumerate() {
                        gprof[j] = kernel.profile_deriv((zv - c).abs() * inv_h);
                    }
                    let mut dz_acc = 0.0;
                    for m in 0..dout {
                        let gm = gout[m];
                        if gm == 0.0 {
                            continue;
                        }
                        let coefs =
                            &layer.coefficients[(m * din + ni) * k..(m * din + ni + 1) * k];
                        let mut d_edge = 0.0;
                        let mut d_theta = 0.0;
                        for (j, &c) in self.centers.iter().enumerate() {
                            let dr = zv - c;
                            let sign = if dr >= 0.0 { 1.0 } else { -1.0 };
                            let t = dr.abs() * inv_h;
                            // dphi/dz = g'(t) * sign / h ; dphi/dtheta = -t g'(t)
                            d_edge += coefs[j] * gprof[j] * sign;
                            d_theta -= coefs[j] * t * gprof[j];
                        }
                        dz_acc += gm * d_edge * inv_h;
                        theta_grad += gm * d_theta;
                        if !layer.residual_weights.is_empty() {
                            dz_acc += gm * layer.residual_weights[m * din + ni] * silu_deriv(zv);
                        }
                    }
                    dz[s * din + ni] = dz_acc;
                }
            }

            // Through the normalization, if the layer has one.
            if layer.has_layernorm() {
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

        Ok(Gradients {
            theta: theta_grad,
            layers: layer_grads,
        })
    }

    /// Flat parameter vector: `theta`, then per layer the coefficients,
    /// residual weights and layernorm gain/bias (where present).
    pub fn params(&self) -> Vec<f64> {
        let mut out = vec![self.theta];
        for l in &self.layers {
            out.extend_from_slice(&l.coefficients);
            out.extend_from_slice(&l.residual_weights);
            out.extend_from_slice(&l.ln_gain);
            out.extend_from_slice(&l.ln_bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|l| {
                l.coefficients.len() + l.residual_weights.len() + l.ln_gain.len() + l.ln_bias.len()
            })
            .sum::<usize>()
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        self.theta = params[0];
        let mut pos = 1;
        let take = |dst: &mut [f64], pos: &mut usize| {
            dst.copy_from_slice(&params[*pos..*pos + dst.len()]);
            *pos += dst.len();
        };
        for l in &mut self.layers {
            take(&mut l.coefficients, &mut pos);
            take(&mut l.residual_weights, &mut pos);
            take(&mut l.ln_gain, &mut pos);
            take(&mut l.ln_bias, &mut pos);
        }
        Ok(())
    }

    /// Write the model as a versioned, self-describing JSON document.
    /// Round-trips are value-exact for every f64.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = SavedRbfKan {
            schema_version: 1,
            model: self.clone(),
        };
        let text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::Config(format!("model serialization failed: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: SavedRbfKan = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("model parse failed: {e}")))?;
        if file.schema_version != 1 {
            return Err(Error::Config(format!(
                "unsupported model schema version {}",
                file.schema_version
            )));
        }
        file.model.validate_shapes()?;
        Ok(file.model)
    }

    fn validate_shapes(&self) -> Result<()> {
        self.config.validate()?;
        let k = self.config.num_centers;
        if self.centers.len() != k || self.centers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("centers must be strictly increasing".into()));
        }
        if self.layers.len() != self.config.num_layers() {
            return Err(Error::Config("layer count does not match widths".into()));
        }
        if !self.theta.is_finite() {
            return Err(Error::Config("theta must be finite".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let din = self.config.widths[i];
            let dout = self.config.widths[i + 1];
            if l.in_dim != din || l.out_dim != dout {
                return Err(Error::Config(format!("layer {i} dims do not match widths")));
            }
            if l.coefficients.len() != dout * din * k {
                return Err(Error::Config(format!("layer {i} coefficient shape is wrong")));
            }
            if !l.residual_weights.is_empty() && l.residual_weights.len() != dout * din {
                return Err(Error::Config(format!("layer {i} residual shape is wrong")));
            }
            if !l.ln_gain.is_empty() && (l.ln_gain.len() != din || l.ln_bias.len() != din) {
                return Err(Error::Config(format!("layer {i} layernorm shape is wrong")));
            }
        }
        Ok(())
    }
}

/// Hidden-layer normalization policy shared by all KAN-style models here:
/// normalize layer inputs except the raw network input, and only when the
/// layer is at least two features wide.
pub(crate) fn hidden_layernorm(use_layernorm: bool, layer_idx: usize, in_dim: usize) -> bool {
    use_layernorm && layer_idx > 0 && in_dim >= 2
}

#[derive(Serialize, Deserialize)]
struct SavedRbfKan {
    schema_version: u32,
    model: RbfKanModel,
}

impl Trainable for RbfKanModel {
    fn input_dim(&self) -> usize {
        self.config.widths[0]
    }

    fn output_dim(&self) -> usize {
        *self.config.widths.last().unwrap()
    }

    fn params(&self) -> Vec<f64> {
        RbfKanModel::params(self)
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        RbfKanModel::set_params(self, params)
    }

    fn forward(&self, inputs: &[f64], n: usize) -> Result<Vec<f64>> {
        Ok(RbfKanModel::forward(self, inputs, n)?.0)
    }

    fn backprop(
        &self,
        inputs: &[f64],
        n: usize,
        output_grads: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<BackpropResult> {
        let (outputs, trace) = RbfKanModel::forward(self, inputs, n)?;
        let og = output_grads(&outputs);
        let grads = self.backward(&trace, &og)?;
        Ok(BackpropResult {
            outputs,
            grads: grads.to_flat(),
        })
    }

    fn shape_param(&self) -> Option<f64> {
        Some(self.h())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::mse_loss;

    fn tiny_config(kernel: KernelKind, widths: Vec<usize>, seed: u64) -> ModelConfig {
        ModelConfig {
            widths,
            kernel,
            num_centers: 4,
            center_range: (-2.0, 2.0),
            use_layernorm: true,
            use_residual: true,
            seed,
        }
    }

    #[test]
    fn theta_initialization() {
        let cfg = ModelConfig::default();
        assert_eq!(RbfKanModel::init(&cfg, 1.0).unwrap().theta, 0.0);
        let m = RbfKanModel::init(&cfg, std::f64::consts::E).unwrap();
        assert!((m.theta - 1.0).abs() < 1e-15);
        assert!(RbfKanModel::init(&cfg, 0.0).is_err());
        assert!(RbfKanModel::init(&cfg, -1.0).is_err());
    }

    #[test]
    fn tensor_shapes_follow_widths() {
        let cfg = ModelConfig::default(); // [2, 8, 1], K = 8
        let m = RbfKanModel::init(&cfg, 0.5).unwrap();
        assert_eq!(m.layers[0].coefficients.len(), 8 * 2 * 8);
        assert_eq!(m.layers[1].coefficients.len(), 1 * 8 * 8);
        assert_eq!(m.layers[0].residual_weights.len(), 16);
        // Input layer is never normalized; the hidden layer is.
        assert!(m.layers[0].ln_gain.is_empty());
        assert_eq!(m.layers[1].ln_gain.len(), 8);
        assert_eq!(m.num_params(), RbfKanModel::params(&m).len());
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = ModelConfig::default();
        let a = RbfKanModel::init(&cfg, 0.5).unwrap();
        let b = RbfKanModel::init(&cfg, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn edge_eval_examples() {
        let mut cfg = tiny_config(KernelKind::Ga, vec![1, 1], 0);
        cfg.use_residual = false;
        cfg.num_centers = 2;
        cfg.center_range = (-1.0, 1.0);

        // All coefficients zero -> 0 everywhere.
        let mut m = RbfKanModel::init(&cfg, 1.0).unwrap();
        m.layers[0].coefficients = vec![0.0, 0.0];
        assert_eq!(m.edge_eval(0, 0, 0, 0.37), 0.0);

        // Single effective center at 0 via a [-0, ...]: use centers [-1, 1]
        // with coefficient on the first only and x = -1.
        m.layers[0].coefficients = vec![1.0, 0.0];
        assert_eq!(m.edge_eval(0, 0, 0, -1.0), 1.0);

        // Both distances hit the W2 support radius exactly.
        let mut cfg_w = cfg.clone();
        cfg_w.kernel = KernelKind::W2;
        let mut mw = RbfKanModel::init(&cfg_w, 1.0).unwrap();
        mw.layers[0].coefficients = vec![1.0, 1.0];
        assert_eq!(mw.edge_eval(0, 0, 0, 0.0), 0.0);
    }

    #[test]
    fn zero_model_outputs_zero() {
        let mut cfg = ModelConfig::default();
        cfg.use_residual = false;
        cfg.use_layernorm = false;
        let mut m = RbfKanModel::init(&cfg, 0.5).unwrap();
        for l in &mut m.layers {
            l.coefficients.iter_mut().for_each(|c| *c = 0.0);
        }
        let (out, _) = m.forward(&[0.3, 0.9, 0.1, 0.2], 2).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn single_edge_forward_equals_edge_eval() {
        let cfg = tiny_config(KernelKind::M4, vec![1, 1], 3);
        let m = RbfKanModel::init(&cfg, 0.8).unwrap();
        for x in [-1.5, -0.2, 0.0, 0.7, 2.2] {
            let (out, _) = m.forward(&[x], 1).unwrap();
            assert!((out[0] - m.edge_eval(0, 0, 0, x)).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_shape_contract() {
        let m = RbfKanModel::init(&ModelConfig::default(), 0.3).unwrap();
        let mut rng = SeededRng::new(17);
        let inputs: Vec<f64> = (0..1600 * 2).map(|_| rng.uniform01()).collect();
        let (out, trace) = m.forward(&inputs, 1600).unwrap();
        assert_eq!(out.len(), 1600);
        assert_eq!(trace.outputs.len(), 1600);
        assert_eq!(trace.layers.len(), 2);
    }

    #[test]
    fn forward_is_pure() {
        let m = RbfKanModel::init(&ModelConfig::default(), 0.4).unwrap();
        let batch = [0.1, 0.9, 0.4, 0.3];
        let (a, _) = m.forward(&batch, 2).unwrap();
        let (b, _) = m.forward(&batch, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_output_grads_give_zero_gradients() {
        let m = RbfKanModel::init(&tiny_config(KernelKind::W6, vec![2, 3, 1], 5), 0.6).unwrap();
        let (_, trace) = m.forward(&[0.2, 0.4, 0.9, 0.1], 2).unwrap();
        let g = m.backward(&trace, &[0.0, 0.0]).unwrap();
        assert_eq!(g.theta, 0.0);
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn theta_gradient_vanishes_at_a_center() {
        // Single GA edge evaluated exactly at a center: dphi/dh(0) = 0.
        let mut cfg = tiny_config(KernelKind::Ga, vec![1, 1], 0);
        cfg.use_residual = false;
        cfg.num_centers = 2;
        cfg.center_range = (0.0, 5.0);
        let mut m = RbfKanModel::init(&cfg, 1.0).unwrap();
        m.layers[0].coefficients = vec![1.0, 0.0];
        let (_, trace) = m.forward(&[0.0], 1).unwrap();
        let g = m.backward(&trace, &[1.0]).unwrap();
        assert!(g.theta.abs() < 1e-15, "theta grad {}", g.theta);
    }

    /// Central finite differences of the MSE loss against a fixed batch.
    fn finite_difference_check(model: &mut RbfKanModel, inputs: &[f64], n: usize, targets: &[f64]) {
        let analytic = model
            .backprop(inputs, n, &mut |outs: &[f64]| {
                let scale = 2.0 / n as f64;
                outs.iter()
                    .zip(targets)
                    .map(|(o, t)| scale * (o - t))
                    .collect()
            })
            .unwrap()
            .grads;
        let params = RbfKanModel::params(model);
        let step = 1e-6;
        for i in 0..params.len() {
            let mut p = params.clone();
            p[i] += step;
            model.set_params(&p).unwrap();
            let up = mse_loss(&Trainable::forward(model, inputs, n).unwrap(), targets).unwrap();
            p[i] -= 2.0 * step;
            model.set_params(&p).unwrap();
            let dn = mse_loss(&Trainable::forward(model, inputs, n).unwrap(), targets).unwrap();
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
    fn gradients_match_finite_differences() {
        for seed in 0..4 {
            for kernel in [KernelKind::Ga, KernelKind::W2, KernelKind::M6] {
                let cfg = tiny_config(kernel, vec![2, 3, 1], seed);
                let mut model = RbfKanModel::init(&cfg, 0.9).unwrap();
                let mut rng = SeededRng::new(100 + seed);
                let n = 6;
                let inputs: Vec<f64> = (0..n * 2).map(|_| rng.uniform01()).collect();
                let targets: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
                finite_difference_check(&mut model, &inputs, n, &targets);
            }
        }
    }

    #[test]
    fn h_stays_positive_under_updates() {
        let mut m = RbfKanModel::init(&ModelConfig::default(), 0.2).unwrap();
        let mut p = RbfKanModel::params(&m);
        for step in [-50.0, 30.0, -200.0, 7.0] {
            p[0] += step;
            m.set_params(&p).unwrap();
            assert!(m.h() > 0.0);
        }
    }

    #[test]
    fn wendland_coefficients_act_locally() {
        // Perturbing c_j changes the edge only within |x - c_j| < h.
        let mut cfg = tiny_config(KernelKind::W2, vec![1, 1], 2);
        cfg.use_residual = false;
        cfg.num_centers = 5;
        cfg.center_range = (-2.0, 2.0);
        let m = RbfKanModel::init(&cfg, 0.5).unwrap();
        let mut perturbed = m.clone();
        let j = 2; // center at 0
        perturbed.layers[0].coefficients[j] += 1.0;
        for x in [-1.9_f64, -0.7, -0.4, 0.0, 0.3, 0.9, 1.6] {
            let delta = (perturbed.edge_eval(0, 0, 0, x) - m.edge_eval(0, 0, 0, x)).abs();
            if x.abs() < 0.5 {
                assert!(delta > 0.0, "inside support at {x}");
            } else {
                assert_eq!(delta, 0.0, "outside support at {x}");
            }
        }
    }

    #[test]
    fn save_load_round_trip_is_value_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut m = RbfKanModel::init(&ModelConfig::default(), 0.12345678901234567).unwrap();
        // Make the values maximally awkward.
        let mut p = RbfKanModel::params(&m);
        for (i, v) in p.iter_mut().enumerate() {
            *v += (i as f64) * 1e-13 + 0.1 / (i + 1) as f64;
        }
        m.set_params(&p).unwrap();
        m.save(&path).unwrap();
        let back = RbfKanModel::load(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn divergence_carries_layer_context() {
        let mut m = RbfKanModel::init(&ModelConfig::default(), 0.5).unwrap();
        // Two huge coefficients on adjacent centers overflow the edge sum
        // when the input sits on the first center.
        m.layers[0].coefficients[0] = 1.7e308;
        m.layers[0].coefficients[1] = 1.7e308;
        let err = m.forward(&[-2.0, -2.0], 1);
        match err {
            Err(Error::NumericalDivergence { context, .. }) => {
                assert!(context.contains("layer 0"), "{context}")
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_trace_is_rejected() {
        let m = RbfKanModel::init(&ModelConfig::default(), 0.5).unwrap();
        let (_, trace) = m.forward(&[0.1, 0.2], 1).unwrap();
        assert!(m.backward(&trace, &[1.0, 2.0]).is_err());
    }
}
