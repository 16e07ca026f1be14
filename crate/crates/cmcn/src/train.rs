//! Adversarial training loop.

use cmrlab_autodiff::{lr_schedule, Adam, AdamConfig, AutodiffError, Tape, Tensor};
use cmrlab_core::image::read_image;
use cmrlab_core::manifest::Manifest;
use cmrlab_core::Image;
use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::loss::{content_loss, edge_loss, gan_losses, total_loss};
use crate::model::{Discriminator, Generator};
use crate::CmcnError;

/// One (degraded, sharp) training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub blurred: Image,
    pub sharp: Image,
}

/// Loss values observed at one optimizer step (1-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub content: f64,
    pub edge: f64,
    pub gan_g: f64,
    pub d_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<StepRecord>,
}

pub const HISTORY_HEADER: &str = "step,epoch,lr,content,edge,gan_g,d_loss";

pub fn history_csv(history: &[StepRecord]) -> String {
    let mut s = String::from(HISTORY_HEADER);
    s.push('\n');
    for r in history {
        s.push_str(&format!(
            "{},{},{:e},{:.10e},{:.10e},{:.10e},{:.10e}\n",
            r.step, r.epoch, r.lr, r.content, r.edge, r.gan_g, r.d_loss
        ));
    }
    s
}

/// Trailing moving average: entry `i` averages `values[i + 1 - window ..= i]`
/// (fewer at the start).
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Decodes every pair of a manifest, requiring one common size divisible by 4.
pub fn load_pairs(manifest: &Manifest) -> Result<Vec<TrainPair>, CmcnError> {
    if manifest.records.is_empty() {
        return Err(CmcnError::EmptyDataset);
    }
    let mut pairs = Vec::with_capacity(manifest.records.len());
    for rec in &manifest.records {
        let load = |rel: &str| {
            let path = manifest.resolve(rel);
            read_image(&path).map_err(|e| CmcnError::Data(format!("{}: {e}", path.display())))
        };
        pairs.push(TrainPair {
            blurred: load(&rec.blur_path)?,
            sharp: load(&rec.sharp_path)?,
        });
    }
    check_pairs(&pairs)?;
    Ok(pairs)
}

fn check_pairs(pairs: &[TrainPair]) -> Result<(usize, usize), CmcnError> {
    let first = pairs.first().ok_or(CmcnError::EmptyDataset)?;
    let (h, w) = (first.sharp.height(), first.sharp.width());
    if h % 4 != 0 || w % 4 != 0 || h < 16 || w < 16 {
        return Err(CmcnError::Shape(format!(
            "training images are {h}x{w}; sides must be multiples of 4 and at least 16"
        )));
    }
    for (i, p) in pairs.iter().enumerate() {
        for img in [&p.blurred, &p.sharp] {
            if img.height() != h || img.width() != w {
                return Err(CmcnError::Shape(format!(
                    "pair {i} is {}x{}, expected {h}x{w} like pair 0",
                    img.height(),
                    img.width()
                )));
            }
        }
    }
    Ok((h, w))
}

fn batch_tensor(images: &[&Image]) -> Result<Tensor, AutodiffError> {
    let (h, w) = (images[0].height(), images[0].width());
    let planes: Vec<&[f64]> = images.iter().map(|i| i.data()).collect();
    Tensor::stack(&planes, 1, h, w)
}

/// Fresh networks drawn from `seed`: generator first, then discriminator.
pub fn initialize(config: &TrainConfig) -> Result<(Generator, Discriminator, ChaCha8Rng), CmcnError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let g = Generator::new(config.generator, &mut rng)?;
    let d = Discriminator::new(config.discriminator, &mut rng)?;
    Ok((g, d, rng))
}

pub fn train(pairs: &[TrainPair], config: &TrainConfig) -> Result<TrainOutcome, CmcnError> {
    train_with(pairs, config, |_| {})
}

/// Runs `config.total_epochs()` epochs over `pairs`, calling `observe` after every step.
///
/// Per step: generator forward; one discriminator update on real targets
/// versus detached restorations; one generator update on the three-term loss
/// using fresh discriminator scores. Both use Adam at the epoch's scheduled rate.
/// Batch order comes from the seeded stream, so a run is reproducible bit for bit.
pub fn train_with(
    pairs: &[TrainPair],
    config: &TrainConfig,
    mut observe: impl FnMut(&StepRecord),
) -> Result<TrainOutcome, CmcnError> {
    let (mut gen, mut disc, mut rng) = initialize(config)?;
    check_pairs(pairs)?;
    let adam_cfg = AdamConfig {
        beta1: config.adam_beta1,
        beta2: config.adam_beta2,
        ..AdamConfig::default()
    };
    let (mut adam_g, mut adam_d) = (Adam::new(adam_cfg), Adam::new(adam_cfg));
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step = 0usize;
    info!(
        "training {} pairs, {} epochs, batch {}, lr {:e}, lambda_gan {}, lambda_edge {}",
        pairs.len(),
        config.total_epochs(),
        config.batch,
        config.lr0,
        config.weights.lambda_gan,
        config.weights.lambda_edge
    );
    for epoch in 0..config.total_epochs() {
        let lr = lr_schedule(epoch, config.epochs_constant, config.epochs_decay, config.lr0);
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch) {
            step += 1;
            let blurred: Vec<&Image> = chunk.iter().map(|&i| &pairs[i].blurred).collect();
            let sharp: Vec<&Image> = chunk.iter().map(|&i| &pairs[i].sharp).collect();
            let mut seen = [f64::NAN; 4];
            let res = train_step(
                &mut gen,
                &mut disc,
                (&mut adam_g, &mut adam_d),
                (&blurred, &sharp),
                config,
                lr,
                &mut seen,
            );
            let [content, edge, gan_g, d_loss] = seen;
            let non_finite = || CmcnError::NonFinite {
                step,
                content,
                edge,
                gan_g,
                d_loss,
            };
            match res {
                Err(AutodiffError::NonFinite { .. }) => return Err(non_finite()),
                Err(e) => return Err(e.into()),
                Ok(()) if seen.iter().any(|v| !v.is_finite()) => return Err(non_finite()),
                Ok(()) => {}
            }
            let rec = StepRecord {
                step,
                epoch,
                lr,
                content,
                edge,
                gan_g,
                d_loss,
            };
            debug!(
                "step {step} content {content:.5} edge {edge:.5} gan_g {gan_g:.5} d_loss {d_loss:.5}"
            );
            observe(&rec);
            history.push(rec);
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            generator: gen,
            discriminator: disc,
            step: step as u64,
        },
        history,
    })
}

/// `seen` receives `[content, edge, gan_g, d_loss]` as each becomes known.
fn train_step(
    gen: &mut Generator,
    disc: &mut Discriminator,
    (adam_g, adam_d): (&mut Adam, &mut Adam),
    (blurred, sharp): (&[&Image], &[&Image]),
    config: &TrainConfig,
    lr: f64,
    seen: &mut [f64; 4],
) -> Result<(), AutodiffError> {
    let x = batch_tensor(blurred)?;
    let y = batch_tensor(sharp)?;

    let mut tg = Tape::new();
    let gv = gen.bind(&mut tg);
    let xv = tg.leaf(x);
    let fake = gen.forward(&mut tg, &gv, xv)?;

    // discriminator update on detached restorations
    let mut td = Tape::new();
    let dv = disc.bind(&mut td);
    let real = td.leaf(y.clone());
    let fake_d = td.leaf(tg.value(fake).clone());
    let p_real = disc.forward(&mut td, &dv, real)?;
    let p_fake = disc.forward(&mut td, &dv, fake_d)?;
    let (d_loss, _) = gan_losses(&mut td, p_real, p_fake, true)?;
    seen[3] = td.value(d_loss).item();
    td.backward(d_loss)?;
    disc.load_grads(&td, &dv)?;
    adam_d.step(disc.params_mut(), lr);

    // generator update against the refreshed discriminator
    let dv2 = disc.bind(&mut tg);
    let p_fake2 = disc.forward(&mut tg, &dv2, fake)?;
    let gan_g = tg.bce(p_fake2, 1.0, true)?;
    let yv = tg.leaf(y);
    let content = content_loss(&mut tg, fake, yv)?;
    let edge = edge_loss(&mut tg, fake, yv)?;
    seen[0] = tg.value(content).item();
    seen[1] = tg.value(edge).item();
    seen[2] = tg.value(gan_g).item();
    let total = total_loss(&mut tg, content, gan_g, edge, &config.weights)?;
    tg.backward(total)?;
    gen.load_grads(&tg, &gv)?;
    adam_g.step(gen.params_mut(), lr);
    Ok(())
}
