//! The full gradient-check suite: every autodiff op, the Sobel layer, the
//! losses, the discriminator score and the end-to-end training objective.

use cmrlab_autodiff::suite::{op_checks, LayerCheck};
use cmrlab_autodiff::{grad_check, AutodiffError, GradCheckOptions, GradCheckReport, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DiscriminatorConfig, GeneratorConfig, LossWeights};
use crate::loss::{content_loss, edge_loss, gan_losses, sobel_layer, total_loss};
use crate::model::{discriminator_layout, Discriminator, Generator, Init};

/// Worst result of one named check across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub checked: usize,
    /// Coordinates, summed over seeds, whose finite difference straddled a kink.
    pub kink_crossings: usize,
}

pub const SUITE_TOLERANCE: f64 = 1e-4;

/// Parameter tensors of the tiny generator whose gradients the end-to-end check covers.
pub const END_TO_END_PARAMS: [&str; 4] = ["g.in.conv.w", "g.res0.a.conv.w", "g.up2.conv.w", "g.out.conv.w"];

/// Coordinates sampled from each larger tensor in the end-to-end check.
const END_TO_END_COORDS: usize = 48;

/// Evaluation points drawn per model check before giving up on finding one
/// where no coordinate's `x ± h` straddles a kink.
pub const MAX_DRAWS: usize = 16;

/// Weight scale of the discriminator in its input-gradient check. At the
/// training init (0.02) the input gradients sit near 1e-9, where finite
/// differences are all roundoff.
const DISC_CHECK_WEIGHT_STD: f64 = 0.3;

/// Amplitude of the images in the edge-loss check. The loss is positively
/// homogeneous, so its gradient does not depend on this scale, while the
/// roundoff in `f(x + h) - f(x - h)` shrinks with it. Coordinates whose
/// subgradients cancel exactly then compare 0 against well under 1e-12.
const EDGE_CHECK_AMPLITUDE: f64 = 0.01;

fn check(name: &str, seed: u64, report: GradCheckReport) -> LayerCheck {
    LayerCheck {
        name: name.to_string(),
        seed,
        report,
    }
}

/// Runs `draw` with successive points from `rng` until one yields a check
/// free of kink crossings; otherwise returns the last attempt as is.
fn smooth_point(
    rng: &mut ChaCha8Rng,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> Result<GradCheckReport, AutodiffError>,
) -> Result<GradCheckReport, AutodiffError> {
    let mut last = draw(rng)?;
    for _ in 1..MAX_DRAWS {
        if last.kink_crossings == 0 {
            break;
        }
        last = draw(rng)?;
    }
    Ok(last)
}

fn model_checks(seed: u64, opts: &GradCheckOptions) -> Result<Vec<LayerCheck>, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
    let mut out = Vec::new();
    let img = |rng: &mut ChaCha8Rng, h: usize| Tensor::uniform([1, 1, h, h], 0.1, 0.9, rng);

    let x = img(&mut rng, 6);
    let r = Tensor::uniform([1, 2, 6, 6], -1.0, 1.0, &mut rng);
    let rep = grad_check(&[x], opts, |t, v| {
        let s = sobel_layer(t, v[0])?;
        t.inner(s, &r)
    })?;
    out.push(check("sobel layer", seed, rep));

    let rep = smooth_point(&mut rng, |rng| {
        let (a, target) = (img(rng, 8), img(rng, 8));
        grad_check(&[a], opts, |t, v| {
            let y = t.leaf(target.clone());
            content_loss(t, v[0], y)
        })
    })?;
    out.push(check("content loss", seed, rep));

    let rep = smooth_point(&mut rng, |rng| {
        let a = Tensor::uniform([1, 1, 8, 8], 0.0, EDGE_CHECK_AMPLITUDE, rng);
        let target = Tensor::uniform([1, 1, 8, 8], 0.0, EDGE_CHECK_AMPLITUDE, rng);
        grad_check(&[a], opts, |t, v| {
            let y = t.leaf(target.clone());
            edge_loss(t, v[0], y)
        })
    })?;
    out.push(check("edge loss", seed, rep));

    let pr = Tensor::uniform([3, 1, 1, 1], 0.05, 0.95, &mut rng);
    let pf = Tensor::uniform([3, 1, 1, 1], 0.05, 0.95, &mut rng);
    let rep = grad_check(&[pr, pf], opts, |t, v| {
        let (d, g) = gan_losses(t, v[0], v[1], false)?;
        let g2 = t.scale(g, 0.7)?;
        t.add(d, g2)
    })?;
    out.push(check("gan losses", seed, rep));

    let mut init = ChaCha8Rng::seed_from_u64(seed);
    let disc = check_discriminator(&mut init);
    let rep = smooth_point(&mut rng, |rng| {
        let xd = Tensor::uniform([2, 1, 32, 32], 0.0, 1.0, rng);
        let rd = Tensor::uniform([2, 1, 1, 1], -1.0, 1.0, rng);
        grad_check(&[xd], opts, |t, v| {
            let dv = disc.bind(t);
            let p = disc.forward(t, &dv, v[0])?;
            t.inner(p, &rd)
        })
    })?;
    out.push(check("discriminator score", seed, rep));

    out.push(check("end-to-end total loss", seed, end_to_end(seed, opts)?));
    Ok(out)
}

/// A 2-channel discriminator with weights drawn at [`DISC_CHECK_WEIGHT_STD`]
/// and biases and norm gains jittered off their init so they matter too.
fn check_discriminator(rng: &mut ChaCha8Rng) -> Discriminator {
    let cfg = DiscriminatorConfig { base_channels: 2 };
    let tensors = discriminator_layout(&cfg)
        .into_iter()
        .map(|slot| match slot.init {
            Init::Normal | Init::Small => Tensor::randn(slot.shape, DISC_CHECK_WEIGHT_STD, rng),
            Init::Zero => Tensor::randn(slot.shape, 0.1, rng),
            Init::One => {
                let mut t = Tensor::randn(slot.shape, 0.1, rng);
                t.data_mut().iter_mut().for_each(|v| *v += 1.0);
                t
            }
        })
        .collect();
    Discriminator::from_tensors(cfg, tensors).expect("layout matches config")
}

/// Gradient of the full objective (content + gan + edge, default weights)
/// w.r.t. a slice of generator parameters of a 2-channel, 1-block network.
fn end_to_end(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gen = Generator::new(
        GeneratorConfig {
            base_channels: 2,
            n_resblocks: 1,
            global_skip: true,
        },
        &mut rng,
    )
    .expect("valid config");
    let disc = Discriminator::new(DiscriminatorConfig { base_channels: 2 }, &mut rng).expect("valid config");
    let size = 32;
    let weights = LossWeights::default();

    let picked: Vec<usize> = END_TO_END_PARAMS
        .iter()
        .map(|n| gen.params().iter().position(|p| p.name() == *n).expect("parameter exists"))
        .collect();
    let inputs: Vec<Tensor> = picked.iter().map(|&i| gen.params()[i].value().clone()).collect();
    let opts = GradCheckOptions {
        max_coords_per_input: Some(opts.max_coords_per_input.unwrap_or(END_TO_END_COORDS)),
        ..*opts
    };
    smooth_point(&mut rng, |rng| {
        let blurred = Tensor::from_fn([1, 1, size, size], |_| rng.random_range(0.2..0.8));
        let sharp = Tensor::from_fn([1, 1, size, size], |_| rng.random_range(0.2..0.8));
        grad_check(&inputs, &opts, |t, v| {
            let mut gv = gen.bind(t);
            for (&slot, &var) in picked.iter().zip(v) {
                gv[slot] = var;
            }
            let x = t.leaf(blurred.clone());
            let y = t.leaf(sharp.clone());
            let fake = gen.forward(t, &gv, x)?;
            let dv: Vec<Var> = disc.bind(t);
            let p = disc.forward(t, &dv, fake)?;
            let gan = t.bce(p, 1.0, true)?;
            let content = content_loss(t, fake, y)?;
            let edge = edge_loss(t, fake, y)?;
            total_loss(t, content, gan, edge, &weights)
        })
    })
}

/// Runs everything for each seed and keeps, per check name, the worst seed.
pub fn gradient_suite(seeds: &[u64], opts: &GradCheckOptions) -> Result<Vec<SuiteEntry>, AutodiffError> {
    let mut entries: Vec<SuiteEntry> = Vec::new();
    for &seed in seeds {
        let mut all = op_checks(seed, opts)?;
        all.extend(model_checks(seed, opts)?);
        for c in all {
            match entries.iter_mut().find(|e| e.name == c.name) {
                Some(e) => {
                    e.checked += c.report.checked;
                    e.kink_crossings += c.report.kink_crossings;
                    if c.report.max_rel_error > e.max_rel_error {
                        e.max_rel_error = c.report.max_rel_error;
                        e.worst_seed = seed;
                    }
                }
                None => entries.push(SuiteEntry {
                    name: c.name,
                    max_rel_error: c.report.max_rel_error,
                    worst_seed: seed,
                    checked: c.report.checked,
                    kink_crossings: c.report.kink_crossings,
                }),
            }
        }
    }
    Ok(entries)
}
