//! Variational autoencoder over normalized feature rows.
//!
//! Encoder `input -> 256 -> 128 -> 100` (ReLU) with two affine heads for
//! `z_mean` and `z_log_var`; decoder mirrors the stack and ends in a sigmoid.
//! The objective per sample is the feature-summed binary cross-entropy plus
//! the Gaussian KL term, averaged over the batch. Downstream models consume
//! `z_mean` only.

pub mod loss;
pub mod network;
pub mod normalize;

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::features::FeatureMatrix;
use crate::modelfile::{self, ModelFileError, ModelKind};
use crate::seed;

pub use loss::{kl_loss, vae_losses, xent_loss};
pub use network::{decode, encode, sample_z, BatchLoss, Dense, VaeParams};
pub use normalize::Normalizer;

#[derive(Debug, thiserror::Error)]
pub enum VaeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("column mismatch: {0}")]
    ColumnMismatch(String),
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error(transparent)]
    ModelFile(#[from] ModelFileError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeConfig {
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            hidden_dims: vec![256, 128, 100],
            latent_dim: 100,
            epochs: 50,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<(), VaeError> {
        let bad = |m: &str| Err(VaeError::InvalidConfig(m.into()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive");
        }
        if self.hidden_dims.contains(&0) {
            return bad("hidden widths must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_vae: f64,
    pub val_vae: f64,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_vae,val_vae,train_mse,val_mse\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.train_vae, e.val_vae, e.train_mse, e.val_mse));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), VaeError> {
        fs::File::create(path)?.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// A trained model ready to encode feature matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub columns: Vec<String>,
    pub normalizer: Normalizer,
    pub params: VaeParams,
}

#[derive(Serialize, Deserialize)]
struct VaeRecord {
    config: VaeConfig,
    columns: Vec<String>,
    normalizer: Normalizer,
    input_dim: usize,
    hidden_dims: Vec<usize>,
    latent_dim: usize,
    layers: Vec<network::DenseRecord>,
}

impl VaeModel {
    pub fn to_json(&self) -> String {
        let record = VaeRecord {
            config: self.config.clone(),
            columns: self.columns.clone(),
            normalizer: self.normalizer.clone(),
            input_dim: self.params.input_dim,
            hidden_dims: self.params.hidden_dims.clone(),
            latent_dim: self.params.latent_dim,
            layers: self.params.layers.iter().map(Into::into).collect(),
        };
        modelfile::to_string(ModelKind::Vae, &record)
    }

    pub fn from_json(text: &str) -> Result<Self, VaeError> {
        let r: VaeRecord = modelfile::from_str(text, ModelKind::Vae)?;
        let corrupt = |m: String| VaeError::ModelFile(ModelFileError::CorruptModel(m));
        let layers = r
            .layers
            .into_iter()
            .map(Dense::try_from)
            .collect::<Result<Vec<_>, _>>()
            .map_err(corrupt)?;
        let params = VaeParams { input_dim: r.input_dim, hidden_dims: r.hidden_dims, latent_dim: r.latent_dim, layers };
        params.validate().map_err(|e| corrupt(e.to_string()))?;
        if r.columns.len() != params.input_dim || r.normalizer.dim() != params.input_dim {
            return Err(corrupt("column/normalizer width disagrees with input_dim".into()));
        }
        Ok(Self { config: r.config, columns: r.columns, normalizer: r.normalizer, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), VaeError> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, VaeError> {
        Self::from_json(&modelfile::read(path)?)
    }
}

struct Adam {
    m: Vec<Dense>,
    v: Vec<Dense>,
    t: i32,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(params: &VaeParams, cfg: &VaeConfig) -> Self {
        let zeros = || params.layers.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_epsilon,
        }
    }

    fn step(&mut self, params: &mut VaeParams, grads: &[Dense]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let (lr, eps) = (self.lr, self.eps);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, g), m), v) in params.layers.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            ndarray::Zip::from(&mut layer.weights)
                .and(&mut m.weights)
                .and(&mut v.weights)
                .and(&g.weights)
                .for_each(|p, m, v, &g| update(p, m, v, g));
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .and(&g.bias)
                .for_each(|p, m, v, &g| update(p, m, v, g));
        }
    }
}

fn standard_normal(rows: usize, cols: usize, rng: &mut impl rand::Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

/// Mean batch loss over `x` with `z = z_mean`.
fn evaluate(params: &VaeParams, x: &Array2<f64>, batch: usize) -> (f64, f64) {
    if x.nrows() == 0 {
        return (f64::NAN, f64::NAN);
    }
    let (mut vae, mut mse) = (0.0, 0.0);
    for chunk in x.axis_chunks_iter(Axis(0), batch) {
        let eps = Array2::zeros((chunk.nrows(), params.latent_dim));
        let cache = params.forward(chunk, eps);
        let l = params.batch_loss(chunk, &cache);
        vae += l.vae * chunk.nrows() as f64;
        mse += l.mse * chunk.nrows() as f64;
    }
    (vae / x.nrows() as f64, mse / x.nrows() as f64)
}

/// Train on every row of `m` (labels are ignored).
///
/// A seeded `validation_fraction` of rows is held out for the per-epoch
/// validation losses, which are computed with `z = z_mean`. Training losses
/// are sample-weighted means over the epoch's batches, with one noise draw
/// per sample per forward pass.
pub fn train(m: &FeatureMatrix, cfg: &VaeConfig) -> Result<(VaeModel, TrainHistory), VaeError> {
    cfg.validate()?;
    if m.values.iter().any(|v| !v.is_finite()) {
        return Err(VaeError::NonFiniteInput);
    }
    if m.nrows() == 0 {
        return Err(VaeError::ShapeMismatch("no rows to train on".into()));
    }
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.shuffle(&mut seed::rng(seed::derive_named(cfg.seed, "vae-holdout")));
    let n_val = ((m.nrows() as f64 * cfg.validation_fraction).round() as usize).min(m.nrows() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();

    let raw_train = m.values.select(Axis(0), &train_idx);
    let normalizer = Normalizer::fit(raw_train.view());
    let x_train = normalizer.apply(raw_train.view());
    let x_val = normalizer.apply(m.values.select(Axis(0), &val_idx).view());

    let mut init_rng = seed::rng(seed::derive_named(cfg.seed, "vae-init"));
    let mut params = VaeParams::new_random(m.ncols(), &cfg.hidden_dims, cfg.latent_dim, &mut init_rng);
    let mut adam = Adam::new(&params, cfg);
    let mut shuffle_rng = seed::rng(seed::derive_named(cfg.seed, "vae-shuffle"));
    let mut noise_rng = seed::rng(seed::derive_named(cfg.seed, "vae-noise"));

    let n_train = x_train.nrows();
    let mut perm: Vec<usize> = (0..n_train).collect();
    let mut history = TrainHistory::default();
    for epoch in 1..=cfg.epochs {
        perm.shuffle(&mut shuffle_rng);
        let (mut vae_sum, mut mse_sum) = (0.0, 0.0);
        for batch in perm.chunks(cfg.batch_size) {
            let xb = x_train.select(Axis(0), batch);
            let eps = standard_normal(batch.len(), cfg.latent_dim, &mut noise_rng);
            let cache = params.forward(xb.view(), eps);
            debug_assert!({
                let z = network::sample_z(
                    cache.z_mean.as_slice().unwrap(),
                    cache.z_log_var.as_slice().unwrap(),
                    cache.epsilon.as_slice().unwrap(),
                );
                z.iter().zip(cache.z.iter()).all(|(a, b)| a == b)
            });
            let loss = params.batch_loss(xb.view(), &cache);
            if !loss.vae.is_finite() {
                return Err(VaeError::NonFiniteLoss { epoch });
            }
            let grads = params.backward(xb.view(), &cache);
            adam.step(&mut params, &grads);
            vae_sum += loss.vae * batch.len() as f64;
            mse_sum += loss.mse * batch.len() as f64;
        }
        let (val_vae, val_mse) = evaluate(&params, &x_val, cfg.batch_size);
        history.epochs.push(EpochRecord {
            epoch,
            train_vae: vae_sum / n_train as f64,
            val_vae,
            train_mse: mse_sum / n_train as f64,
            val_mse,
        });
        log::debug!("vae epoch {epoch}: train {:.4} val {:.4}", vae_sum / n_train as f64, val_vae);
    }
    let model = VaeModel { config: cfg.clone(), columns: m.column_names.clone(), normalizer, params };
    Ok((model, history))
}

/// Replace every row by its `z_mean`; labels and row metadata carry over.
pub fn transform(m: &FeatureMatrix, model: &VaeModel) -> Result<FeatureMatrix, VaeError> {
    if m.column_names != model.columns {
        let missing: Vec<_> = model.columns.iter().filter(|c| !m.column_names.contains(c)).take(5).collect();
        return Err(VaeError::ColumnMismatch(format!(
            "matrix has {} columns, model was trained on {} (missing e.g. {missing:?})",
            m.ncols(),
            model.columns.len()
        )));
    }
    let x = model.normalizer.apply(m.values.view());
    let (z_mean, _) = model.params.encode_batch(x.view())?;
    let names = (0..model.params.latent_dim).map(|i| format!("z_{i:03}")).collect();
    Ok(FeatureMatrix::new(names, z_mean, m.row_meta.clone(), m.row_labels.clone()))
}
