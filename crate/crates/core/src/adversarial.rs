//! Standard non-saturating GAN losses on discriminator logits, with their
//! gradients.

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Generator loss `mean softplus(-fake)`.
pub fn generator_loss(fake: &[f32]) -> f64 {
    fake.iter().map(|&v| softplus(-(v as f64))).sum::<f64>() / fake.len() as f64
}

/// d(generator_loss)/d(fake logits), scaled by `scale`.
pub fn generator_loss_grad(fake: &[f32], scale: f64) -> Vec<f32> {
    let n = fake.len() as f64;
    fake.iter().map(|&v| (-scale * sigmoid(-(v as f64)) / n) as f32).collect()
}

/// Discriminator loss `mean softplus(-real) + mean softplus(fake)`.
pub fn discriminator_loss(real: &[f32], fake: &[f32]) -> f64 {
    let r = real.iter().map(|&v| softplus(-(v as f64))).sum::<f64>() / real.len() as f64;
    let f = fake.iter().map(|&v| softplus(v as f64)).sum::<f64>() / fake.len() as f64;
    r + f
}

/// Gradients of [`discriminator_loss`] with respect to the real and fake
/// logits, scaled by `scale`.
pub fn discriminator_loss_grad(real: &[f32], fake: &[f32], scale: f64) -> (Vec<f32>, Vec<f32>) {
    let nr = real.len() as f64;
    let nf = fake.len() as f64;
    let dr = real.iter().map(|&v| (-scale * sigmoid(-(v as f64)) / nr) as f32).collect();
    let df = fake.iter().map(|&v| (scale * sigmoid(v as f64) / nf) as f32).collect();
    (dr, df)
}

/// `mean (a - b)^2`.
pub fn mean_squared(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>() / a.len() as f64
}

/// d(mean_squared)/d(a), scaled by `scale`.
pub fn mean_squared_grad(a: &[f32], b: &[f32], scale: f64) -> Vec<f32> {
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (scale * 2.0 * (x - y) as f64 / n) as f32).collect()
}
