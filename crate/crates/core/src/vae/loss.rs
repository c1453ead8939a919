//! Reconstruction and KL terms of the VAE objective.

/// Predictions are clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]` before the log.
pub const BCE_CLAMP: f64 = 1e-7;

pub fn bce(x: f64, x_hat: f64) -> f64 {
    let p = x_hat.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
    -(x * p.ln() + (1.0 - x) * (1.0 - p).ln())
}

/// Binary cross-entropy summed over features (input_dim times the mean).
pub fn xent_loss(x: impl Iterator<Item = f64>, x_hat: impl Iterator<Item = f64>) -> f64 {
    x.zip(x_hat).map(|(a, b)| bce(a, b)).sum()
}

/// `-0.5 * sum(1 + log_var - mean^2 - exp(log_var))`.
pub fn kl_loss(z_mean: impl Iterator<Item = f64>, z_log_var: impl Iterator<Item = f64>) -> f64 {
    -0.5 * z_mean
        .zip(z_log_var)
        .map(|(m, lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// `(xent_loss, kl_loss, xent_loss + kl_loss)` for one sample.
pub fn vae_losses(x: &[f64], x_decoded_mean: &[f64], z_mean: &[f64], z_log_var: &[f64]) -> (f64, f64, f64) {
    let xent = xent_loss(x.iter().copied(), x_decoded_mean.iter().copied());
    let kl = kl_loss(z_mean.iter().copied(), z_log_var.iter().copied());
    (xent, kl, xent + kl)
}

/// Batch VAE loss: mean over samples of `xent + kl`.
pub fn batch_vae_loss(samples: &[(&[f64], &[f64], &[f64], &[f64])]) -> f64 {
    samples.iter().map(|(x, d, m, lv)| vae_losses(x, d, m, lv).2).sum::<f64>() / samples.len() as f64
}
