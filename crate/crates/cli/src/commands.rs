use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cmrlab_autodiff::GradCheckOptions;
use cmrlab_cmcn::train::history_csv;
use cmrlab_cmcn::verify::{gradient_suite, SUITE_TOLERANCE};
use cmrlab_cmcn::{
    correct_with, load_pairs, train_with, Checkpoint, DiscriminatorConfig, Generator, GeneratorConfig, LossWeights,
    TrainConfig,
};
use cmrlab_core::deconv::{richardson_lucy, RlConfig};
use cmrlab_core::image::{read_image, write_image};
use cmrlab_core::kspace::{make_interleaved_schedule_along, simulate_segmented_acquisition};
use cmrlab_core::manifest::Manifest;
use cmrlab_core::metrics::evaluate_report;
use cmrlab_core::phantom::{disk_ring_family, shapes_phantom};
use cmrlab_core::synth::{synth_dataset, Boundary, Psf, SynthConfig, TrajectoryParams};
use cmrlab_core::{write_atomic, Image};
use log::info;
use rayon::prelude::*;

use crate::failure::{CliResult, Failure};
use crate::{
    AxisArg, BoundaryArg, CorrectArgs, EvalArgs, GradcheckArgs, KspaceArgs, Method, PhantomArgs, PhantomKind,
    SynthArgs, TrainArgs,
};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| Failure::io(format!("creating {}", dir.display()), e))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, bytes).map_err(|e| Failure::io(format!("writing {}", path.display()), e))
}

pub fn synth(a: &SynthArgs) -> CliResult<()> {
    let config = SynthConfig {
        trajectory: TrajectoryParams {
            steps: a.steps,
            ..TrajectoryParams::default()
        },
        kernel_size: a.kernel_size,
        noise_sigma: a.sigma,
        count_per_image: a.count,
        base_seed: a.seed,
        boundary: match a.boundary {
            BoundaryArg::Circular => Boundary::Circular,
            BoundaryArg::Replicate => Boundary::Replicate,
        },
    };
    if !(a.sigma >= 0.0) {
        return Err(Failure::config(format!("--sigma must be >= 0, got {}", a.sigma)));
    }
    let manifest = synth_dataset(&a.input_dir, &a.out_dir, &config)?;
    println!(
        "wrote {} pairs to {} (seed {}, kernel {}, steps {}, sigma {})",
        manifest.records.len(),
        a.out_dir.join("manifest.jsonl").display(),
        a.seed,
        a.kernel_size,
        a.steps,
        a.sigma
    );
    Ok(())
}

pub fn kspace_sim(a: &KspaceArgs) -> CliResult<()> {
    let image = read_image(&a.input)?;
    let axis = match a.axis {
        AxisArg::X => [1.0, 0.0],
        AxisArg::Y => [0.0, 1.0],
    };
    let schedule = make_interleaved_schedule_along(image.height(), a.cycles, a.max_shift, axis, a.seed)?;
    let out = simulate_segmented_acquisition(&image, &schedule)?;
    write_image(&a.output, &out)?;
    let shifts: Vec<String> = schedule
        .displacements
        .iter()
        .map(|(dx, dy)| format!("({dx}, {dy})"))
        .collect();
    println!(
        "wrote {} ({} cycles, seed {}, displacements {})",
        a.output.display(),
        a.cycles,
        a.seed,
        shifts.join(" ")
    );
    Ok(())
}

fn history_path(a: &TrainArgs) -> PathBuf {
    a.history.clone().unwrap_or_else(|| {
        let mut s = OsString::from(a.out.as_os_str());
        s.push(".history.csv");
        PathBuf::from(s)
    })
}

pub fn train(a: &TrainArgs) -> CliResult<()> {
    let config = TrainConfig {
        epochs_constant: a.epochs_const,
        epochs_decay: a.epochs_decay,
        lr0: a.lr,
        batch: a.batch,
        seed: a.seed,
        weights: LossWeights {
            lambda_gan: a.lambda_gan,
            lambda_edge: a.lambda_edge,
        },
        generator: GeneratorConfig {
            base_channels: a.base_channels,
            n_resblocks: a.resblocks,
            global_skip: !a.no_skip,
        },
        discriminator: DiscriminatorConfig {
            base_channels: a.disc_channels,
        },
        ..TrainConfig::default()
    };
    config.validate()?;
    let manifest = Manifest::read(&a.manifest)?;
    let pairs = load_pairs(&manifest)?;
    let steps_per_epoch = pairs.len().div_ceil(a.batch);
    println!(
        "train: {} pairs, epochs {}+{} ({} steps), batch {}, lr {:e}, lambda_gan {}, lambda_edge {}, generator {}ch/{} blocks{}, discriminator {}ch, seed {}",
        pairs.len(),
        a.epochs_const,
        a.epochs_decay,
        steps_per_epoch * config.total_epochs(),
        a.batch,
        a.lr,
        a.lambda_gan,
        a.lambda_edge,
        a.base_channels,
        a.resblocks,
        if a.no_skip { ", no skip" } else { "" },
        a.disc_channels,
        a.seed
    );
    let start = Instant::now();
    let outcome = train_with(&pairs, &config, |r| {
        if a.log_every > 0 && r.step % a.log_every == 0 {
            println!(
                "step {:>6} epoch {:>4} lr {:.3e} content {:.5} edge {:.5} gan_g {:.5} d_loss {:.5} ({:.1}s)",
                r.step,
                r.epoch,
                r.lr,
                r.content,
                r.edge,
                r.gan_g,
                r.d_loss,
                start.elapsed().as_secs_f64()
            );
        }
    })
    .map_err(|e| Failure::from(e).context("training failed"))?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    outcome.checkpoint.save(&a.out)?;
    let hist = history_path(a);
    write_file(&hist, history_csv(&outcome.history).as_bytes())?;
    println!(
        "saved {} after {} steps; history in {}",
        a.out.display(),
        outcome.checkpoint.step,
        hist.display()
    );
    Ok(())
}

enum Corrector {
    Cmcn(Box<Generator>),
    Rl { psf: Option<Psf>, config: RlConfig },
}

impl Corrector {
    fn restore(&self, manifest: &Manifest, index: usize, blurred: &Image) -> CliResult<Image> {
        match self {
            Corrector::Cmcn(g) => Ok(correct_with(blurred, g)?),
            Corrector::Rl { psf, config } => {
                let own;
                let psf = match psf {
                    Some(p) => p,
                    None => {
                        let rel = manifest.records[index].psf_path.as_deref().ok_or_else(|| {
                            Failure::config(format!("record {index} has no psf_path; pass --psf"))
                        })?;
                        own = Psf::read(&manifest.resolve(rel))?;
                        &own
                    }
                };
                Ok(richardson_lucy(blurred, psf, config)?)
            }
        }
    }
}

pub fn correct(a: &CorrectArgs) -> CliResult<()> {
    let corrector = match a.method {
        Method::Cmcn => {
            let path = a
                .model
                .as_ref()
                .ok_or_else(|| Failure::config("--method cmcn needs --model"))?;
            Corrector::Cmcn(Box::new(Checkpoint::load(path)?.generator))
        }
        Method::Rl => Corrector::Rl {
            psf: a.psf.as_deref().map(Psf::read).transpose()?,
            config: RlConfig {
                iterations: a.iters,
                ..RlConfig::default()
            },
        },
    };
    let manifest = Manifest::read(&a.manifest)?;
    if manifest.records.is_empty() {
        return Err(Failure::config(format!("{} has no records", a.manifest.display())));
    }
    create_dir(&a.out_dir.join("restored"))?;
    let restored: Vec<String> = manifest
        .records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| -> CliResult<String> {
            let blurred = read_image(&manifest.resolve(&rec.blur_path))?;
            let out = corrector
                .restore(&manifest, i, &blurred)
                .map_err(|f| f.context(format!("record {i} ({})", rec.blur_path)))?;
            let stem = Path::new(&rec.blur_path)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let rel = format!("restored/{i:04}_{stem}.png");
            write_image(&a.out_dir.join(&rel), &out)?;
            Ok(rel)
        })
        .collect::<CliResult<_>>()?;

    let mut copy = manifest.rebased(&a.out_dir);
    for (rec, rel) in copy.records.iter_mut().zip(restored) {
        rec.restored_path = Some(rel);
    }
    let path = a.out_dir.join(&a.manifest_name);
    copy.write(&path)?;
    info!("restored {} images", copy.records.len());
    println!(
        "restored {} images with {:?}; manifest {}",
        copy.records.len(),
        a.method,
        path.display()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> CliResult<()> {
    let manifest = Manifest::read(&a.manifest)?;
    let report = evaluate_report(&manifest)?;
    print!("{}", report.render_text());
    if let Some(out) = &a.out {
        write_file(out, report.to_csv().as_bytes())?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    if a.seeds == 0 {
        return Err(Failure::config("--seeds must be >= 1"));
    }
    let opts = GradCheckOptions {
        corrupt: a.corrupt,
        ..GradCheckOptions::default()
    };
    let start = Instant::now();
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let entries = gradient_suite(&seeds, &opts)?;
    println!(
        "{:<28} {:>14} {:>6} {:>8} {:>6}",
        "layer", "max rel error", "seed", "coords", "status"
    );
    let mut failed = 0;
    for e in &entries {
        let ok = e.max_rel_error <= SUITE_TOLERANCE;
        failed += usize::from(!ok);
        println!(
            "{:<28} {:>14.3e} {:>6} {:>8} {:>6}",
            e.name,
            e.max_rel_error,
            e.worst_seed,
            e.checked,
            if ok { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{} of {} checks within {:e} over {} seeds ({:.1}s)",
        entries.len() - failed,
        entries.len(),
        SUITE_TOLERANCE,
        a.seeds,
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        return Err(Failure::numeric(format!("{failed} gradient check(s) exceed {SUITE_TOLERANCE:e}")));
    }
    Ok(())
}

pub fn phantoms(a: &PhantomArgs) -> CliResult<()> {
    if a.size < 8 {
        return Err(Failure::config(format!("--size must be >= 8, got {}", a.size)));
    }
    create_dir(&a.out_dir)?;
    for i in 0..a.count {
        let img = match a.kind {
            PhantomKind::Shapes => shapes_phantom(a.size, a.seed.wrapping_add(i as u64)),
            PhantomKind::DiskRing => disk_ring_family(a.size, i % 10),
        };
        write_image(&a.out_dir.join(format!("phantom_{i:04}.png")), &img)?;
    }
    println!("wrote {} phantoms to {}", a.count, a.out_dir.display());
    Ok(())
}
