//! Encoder/decoder stacks with a hand-written backward pass.
//!
//! Layer layout inside [`VaeParams::layers`]:
//!
//! ```text
//! [enc_0 .. enc_{k-1}] [z_mean head] [z_log_var head] [dec_0 .. dec_{k-1}] [output]
//! ```
//!
//! Encoder layers use the hidden widths in order, the decoder uses them
//! reversed, so a `[256, 128, 100]` stack decodes through `[100, 128, 256]`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{self, BCE_CLAMP};
use super::VaeError;

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `inputs x outputs`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { weights: Array2::zeros((inputs, outputs)), bias: Array1::zeros(outputs) }
    }

    /// Uniform fan-in initialization with limit sqrt(3 / fan_in) (unit
    /// variance preserving for unit-variance inputs); zero bias.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let limit = (3.0 / inputs as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((inputs, outputs), || rng.random_range(-limit..limit));
        Self { weights, bias: Array1::zeros(outputs) }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        x.dot(&self.weights) + &self.bias
    }
}

/// Serialized form of a dense layer: row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseRecord {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<&Dense> for DenseRecord {
    fn from(d: &Dense) -> Self {
        Self {
            inputs: d.inputs(),
            outputs: d.outputs(),
            weights: d.weights.iter().copied().collect(),
            bias: d.bias.to_vec(),
        }
    }
}

impl TryFrom<DenseRecord> for Dense {
    type Error = String;

    fn try_from(r: DenseRecord) -> Result<Self, Self::Error> {
        if r.bias.len() != r.outputs {
            return Err(format!("bias has {} entries, expected {}", r.bias.len(), r.outputs));
        }
        let weights = Array2::from_shape_vec((r.inputs, r.outputs), r.weights)
            .map_err(|e| format!("weight shape: {e}"))?;
        if weights.iter().chain(&r.bias).any(|v| !v.is_finite()) {
            return Err("non-finite parameter".into());
        }
        Ok(Self { weights, bias: Array1::from(r.bias) })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub layers: Vec<Dense>,
}

fn relu(mut a: Array2<f64>) -> Array2<f64> {
    a.mapv_inplace(|v| v.max(0.0));
    a
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Everything the backward pass needs from one forward pass.
pub struct ForwardCache {
    /// Inputs to each encoder layer followed by the final hidden activation.
    enc_acts: Vec<Array2<f64>>,
    pub z_mean: Array2<f64>,
    pub z_log_var: Array2<f64>,
    pub epsilon: Array2<f64>,
    pub z: Array2<f64>,
    /// Inputs to each decoder layer followed by the input to the output layer.
    dec_acts: Vec<Array2<f64>>,
    pub x_decoded: Array2<f64>,
}

/// Per-batch loss summary; all values are means over the batch rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub vae: f64,
    pub xent: f64,
    pub kl: f64,
    pub mse: f64,
}

impl VaeParams {
    pub fn new_random<R: Rng>(input_dim: usize, hidden_dims: &[usize], latent_dim: usize, rng: &mut R) -> Self {
        let mut layers = Vec::new();
        let mut width = input_dim;
        for &h in hidden_dims {
            layers.push(Dense::init(width, h, rng));
            width = h;
        }
        layers.push(Dense::init(width, latent_dim, rng));
        layers.push(Dense::init(width, latent_dim, rng));
        let mut width = latent_dim;
        for &h in hidden_dims.iter().rev() {
            layers.push(Dense::init(width, h, rng));
            width = h;
        }
        layers.push(Dense::init(width, input_dim, rng));
        Self { input_dim, hidden_dims: hidden_dims.to_vec(), latent_dim, layers }
    }

    /// Same architecture with every weight and bias zero.
    pub fn zeros(input_dim: usize, hidden_dims: &[usize], latent_dim: usize) -> Self {
        let mut p = Self::new_random(input_dim, hidden_dims, latent_dim, &mut crate::seed::rng(0));
        for l in &mut p.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
        p
    }

    /// Check that the layer shapes chain as the architecture requires.
    pub fn validate(&self) -> Result<(), VaeError> {
        let k = self.hidden_dims.len();
        let mut expect = Vec::new();
        let mut width = self.input_dim;
        for &h in &self.hidden_dims {
            expect.push((width, h));
            width = h;
        }
        expect.push((width, self.latent_dim));
        expect.push((width, self.latent_dim));
        let mut width = self.latent_dim;
        for &h in self.hidden_dims.iter().rev() {
            expect.push((width, h));
            width = h;
        }
        expect.push((width, self.input_dim));
        let got: Vec<_> = self.layers.iter().map(|l| (l.inputs(), l.outputs())).collect();
        if got != expect || self.layers.len() != 2 * k + 3 {
            return Err(VaeError::ShapeMismatch(format!("layer shapes {got:?}, expected {expect:?}")));
        }
        Ok(())
    }

    fn n_hidden(&self) -> usize {
        self.hidden_dims.len()
    }

    pub fn mean_head(&self) -> &Dense {
        &self.layers[self.n_hidden()]
    }

    pub fn logvar_head(&self) -> &Dense {
        &self.layers[self.n_hidden() + 1]
    }

    pub fn encoder_layers(&self) -> &[Dense] {
        &self.layers[..self.n_hidden()]
    }

    pub fn decoder_layers(&self) -> &[Dense] {
        let k = self.n_hidden();
        &self.layers[k + 2..2 * k + 2]
    }

    pub fn output_layer(&self) -> &Dense {
        &self.layers[2 * self.n_hidden() + 2]
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn encode_hidden(&self, x: ArrayView2<'_, f64>, acts: &mut Vec<Array2<f64>>) -> Array2<f64> {
        let mut h = x.to_owned();
        for l in self.encoder_layers() {
            let next = relu(l.forward(h.view()));
            acts.push(h);
            h = next;
        }
        h
    }

    /// `(z_mean, z_log_var)` for a batch of rows.
    pub fn encode_batch(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>), VaeError> {
        if x.ncols() != self.input_dim {
            return Err(VaeError::ShapeMismatch(format!("input has {} columns, model expects {}", x.ncols(), self.input_dim)));
        }
        let h = self.encode_hidden(x, &mut Vec::new());
        Ok((self.mean_head().forward(h.view()), self.logvar_head().forward(h.view())))
    }

    /// Sigmoid reconstruction for a batch of latent rows.
    pub fn decode_batch(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>, VaeError> {
        if z.ncols() != self.latent_dim {
            return Err(VaeError::ShapeMismatch(format!("latent has {} columns, model expects {}", z.ncols(), self.latent_dim)));
        }
        Ok(self.decode_hidden(z, &mut Vec::new()))
    }

    fn decode_hidden(&self, z: ArrayView2<'_, f64>, acts: &mut Vec<Array2<f64>>) -> Array2<f64> {
        let mut h = z.to_owned();
        for l in self.decoder_layers() {
            let next = relu(l.forward(h.view()));
            acts.push(h);
            h = next;
        }
        let mut out = self.output_layer().forward(h.view());
        acts.push(h);
        out.mapv_inplace(sigmoid);
        out
    }

    /// Full forward pass with the given standard-normal noise.
    pub fn forward(&self, x: ArrayView2<'_, f64>, epsilon: Array2<f64>) -> ForwardCache {
        let mut enc_acts = Vec::with_capacity(self.n_hidden() + 1);
        let h = self.encode_hidden(x, &mut enc_acts);
        let z_mean = self.mean_head().forward(h.view());
        let z_log_var = self.logvar_head().forward(h.view());
        enc_acts.push(h);
        let z = sample_z_batch(&z_mean, &z_log_var, &epsilon);
        let mut dec_acts = Vec::with_capacity(self.n_hidden() + 1);
        let x_decoded = self.decode_hidden(z.view(), &mut dec_acts);
        ForwardCache { enc_acts, z_mean, z_log_var, epsilon, z, dec_acts, x_decoded }
    }

    pub fn batch_loss(&self, x: ArrayView2<'_, f64>, cache: &ForwardCache) -> BatchLoss {
        let n = x.nrows() as f64;
        let (mut xent, mut kl, mut mse) = (0.0, 0.0, 0.0);
        for i in 0..x.nrows() {
            let row = x.row(i);
            let dec = cache.x_decoded.row(i);
            xent += loss::xent_loss(row.iter().copied(), dec.iter().copied());
            kl += loss::kl_loss(cache.z_mean.row(i).iter().copied(), cache.z_log_var.row(i).iter().copied());
            mse += row.iter().zip(dec.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / row.len() as f64;
        }
        BatchLoss { vae: (xent + kl) / n, xent: xent / n, kl: kl / n, mse: mse / n }
    }

    /// Gradient of the batch-mean VAE loss with respect to every layer,
    /// in the same layout as `layers`.
    pub fn backward(&self, x: ArrayView2<'_, f64>, cache: &ForwardCache) -> Vec<Dense> {
        let n = x.nrows() as f64;
        let k = self.n_hidden();
        let mut grads: Vec<Dense> = self.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect();

        // Sigmoid + BCE: d/dlogit = x_hat - x, zero where the clamp is active.
        let mut delta = Array2::zeros(cache.x_decoded.raw_dim());
        ndarray::Zip::from(&mut delta).and(&cache.x_decoded).and(x).for_each(|d, &p, &t| {
            *d = if !(BCE_CLAMP..=1.0 - BCE_CLAMP).contains(&p) { 0.0 } else { (p - t) / n };
        });

        // Output layer, then decoder hidden layers in reverse.
        let mut layer_idx = 2 * k + 2;
        for act in cache.dec_acts.iter().rev() {
            let layer = &self.layers[layer_idx];
            grads[layer_idx].weights = act.t().dot(&delta);
            grads[layer_idx].bias = delta.sum_axis(Axis(0));
            let mut upstream = delta.dot(&layer.weights.t());
            if layer_idx > k + 2 {
                // `act` is a ReLU output.
                ndarray::Zip::from(&mut upstream).and(act).for_each(|u, &a| {
                    if a <= 0.0 {
                        *u = 0.0;
                    }
                });
            }
            delta = upstream;
            layer_idx -= 1;
        }
        let dz = delta;

        // Reparameterization and KL terms.
        let mut d_mean = dz.clone();
        let mut d_logvar = dz;
        ndarray::Zip::from(&mut d_mean).and(&cache.z_mean).for_each(|d, &m| *d += m / n);
        ndarray::Zip::from(&mut d_logvar)
            .and(&cache.z_log_var)
            .and(&cache.epsilon)
            .for_each(|d, &lv, &e| *d = *d * 0.5 * (0.5 * lv).exp() * e + 0.5 * (lv.exp() - 1.0) / n);

        let h = &cache.enc_acts[k];
        grads[k].weights = h.t().dot(&d_mean);
        grads[k].bias = d_mean.sum_axis(Axis(0));
        grads[k + 1].weights = h.t().dot(&d_logvar);
        grads[k + 1].bias = d_logvar.sum_axis(Axis(0));
        let mut delta = d_mean.dot(&self.layers[k].weights.t()) + d_logvar.dot(&self.layers[k + 1].weights.t());

        for idx in (0..k).rev() {
            let out_act = &cache.enc_acts[idx + 1];
            ndarray::Zip::from(&mut delta).and(out_act).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            let input = &cache.enc_acts[idx];
            grads[idx].weights = input.t().dot(&delta);
            grads[idx].bias = delta.sum_axis(Axis(0));
            if idx > 0 {
                delta = delta.dot(&self.layers[idx].weights.t());
            }
        }
        grads
    }
}

/// `z = z_mean + exp(0.5 * z_log_var) * epsilon`, elementwise.
pub fn sample_z(z_mean: &[f64], z_log_var: &[f64], epsilon: &[f64]) -> Vec<f64> {
    assert!(z_mean.len() == z_log_var.len() && z_mean.len() == epsilon.len(), "length mismatch");
    z_mean
        .iter()
        .zip(z_log_var)
        .zip(epsilon)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

fn sample_z_batch(z_mean: &Array2<f64>, z_log_var: &Array2<f64>, epsilon: &Array2<f64>) -> Array2<f64> {
    let mut z = z_mean.clone();
    ndarray::Zip::from(&mut z)
        .and(z_log_var)
        .and(epsilon)
        .for_each(|z, &lv, &e| *z += (0.5 * lv).exp() * e);
    z
}

/// Single-row encoder.
pub fn encode(x: &[f64], p: &VaeParams) -> Result<(Vec<f64>, Vec<f64>), VaeError> {
    let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    let (m, lv) = p.encode_batch(view)?;
    Ok((m.row(0).to_vec(), lv.row(0).to_vec()))
}

/// Single-row decoder.
pub fn decode(z: &[f64], p: &VaeParams) -> Result<Vec<f64>, VaeError> {
    let view = ArrayView2::from_shape((1, z.len()), z).expect("row view");
    Ok(p.decode_batch(view)?.row(0).to_vec())
}
