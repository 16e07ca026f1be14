//! Content, edge and adversarial losses.

use cmrlab_autodiff::{AutodiffError, Tape, Tensor, Var};
use cmrlab_core::metrics::SOBEL_X;

use crate::config::LossWeights;

/// Fixed `[2C, C, 3, 3]` kernel: per input channel a horizontal then a vertical Sobel response.
pub fn sobel_kernel(channels: usize) -> Tensor {
    let mut k = Tensor::zeros([2 * channels, channels, 3, 3]);
    let d = k.data_mut();
    for c in 0..channels {
        for i in 0..3 {
            for j in 0..3 {
                d[((2 * c) * channels + c) * 9 + i * 3 + j] = SOBEL_X[i][j];
                d[((2 * c + 1) * channels + c) * 9 + i * 3 + j] = SOBEL_X[j][i];
            }
        }
    }
    k
}

/// Sobel responses as a non-trainable zero-padded convolution.
pub fn sobel_layer(t: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
    let xs = t.shape(x);
    if xs[2] < 3 || xs[3] < 3 {
        return Err(AutodiffError::Shape {
            op: "sobel_layer",
            detail: format!("input {xs:?} is smaller than 3x3"),
        });
    }
    t.conv2d_fixed(x, &sobel_kernel(xs[1]), 1, 1)
}

/// Mean absolute error over every pixel of the batch.
pub fn content_loss(t: &mut Tape, restored: Var, target: Var) -> Result<Var, AutodiffError> {
    t.mean_abs_diff(restored, target)
}

/// Mean absolute difference between the Sobel maps of both images.
pub fn edge_loss(t: &mut Tape, restored: Var, target: Var) -> Result<Var, AutodiffError> {
    if t.shape(restored) != t.shape(target) {
        return Err(AutodiffError::Shape {
            op: "edge_loss",
            detail: format!("{:?} vs {:?}", t.shape(restored), t.shape(target)),
        });
    }
    let a = sobel_layer(t, restored)?;
    let b = sobel_layer(t, target)?;
    t.mean_abs_diff(a, b)
}

/// `(d_loss, g_loss)` with `d_loss = -mean[ln d_real] - mean[ln(1 - d_fake)]` and
/// the non-saturating `g_loss = -mean[ln d_fake]`.
pub fn gan_losses(t: &mut Tape, d_real: Var, d_fake: Var, clamp: bool) -> Result<(Var, Var), AutodiffError> {
    let real = t.bce(d_real, 1.0, clamp)?;
    let fake = t.bce(d_fake, 0.0, clamp)?;
    let d_loss = t.add(real, fake)?;
    let g_loss = t.bce(d_fake, 1.0, clamp)?;
    Ok((d_loss, g_loss))
}

/// `content + lambda_gan * gan_g + lambda_edge * edge` on the tape.
pub fn total_loss(t: &mut Tape, content: Var, gan_g: Var, edge: Var, w: &LossWeights) -> Result<Var, AutodiffError> {
    let g = t.scale(gan_g, w.lambda_gan)?;
    let e = t.scale(edge, w.lambda_edge)?;
    let ge = t.add(g, e)?;
    t.add(content, ge)
}

/// Same combination on plain numbers.
pub fn combine_losses(content: f64, gan_g: f64, edge: f64, w: &LossWeights) -> f64 {
    content + w.lambda_gan * gan_g + w.lambda_edge * edge
}

/// The literal minimax generator value `mean[ln(1 - d_fake)]`, for reporting only.
pub fn minimax_generator_value(d_fake: &[f64]) -> f64 {
    d_fake.iter().map(|p| (1.0 - p).ln()).sum::<f64>() / d_fake.len() as f64
}
