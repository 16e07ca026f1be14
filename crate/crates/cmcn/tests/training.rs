use cmrlab_cmcn::checkpoint::MAGIC;
use cmrlab_cmcn::train::{history_csv, initialize, HISTORY_HEADER};
use cmrlab_cmcn::{
    correct, smoothed, train, train_with, Checkpoint, CmcnError, DiscriminatorConfig, GeneratorConfig, TrainConfig,
    TrainPair, CHECKPOINT_VERSION,
};
use cmrlab_core::phantom::shapes_phantom;
use cmrlab_core::synth::{synthesize_pair, SynthConfig};
use cmrlab_core::Image;

fn pairs(n: usize, size: usize) -> Vec<TrainPair> {
    let cfg = SynthConfig {
        kernel_size: 7,
        ..SynthConfig::default()
    };
    (0..n as u64)
        .map(|i| {
            let sharp = shapes_phantom(size, i);
            let (blurred, _) = synthesize_pair(&sharp, &cfg, 100 + i).unwrap();
            TrainPair { blurred, sharp }
        })
        .collect()
}

fn tiny_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs_constant: epochs,
        epochs_decay: 0,
        batch: 2,
        seed: 11,
        generator: GeneratorConfig {
            base_channels: 2,
            n_resblocks: 1,
            global_skip: true,
        },
        discriminator: DiscriminatorConfig { base_channels: 2 },
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_the_initial_networks() {
    let cfg = tiny_config(0);
    let out = train(&pairs(3, 16), &cfg).unwrap();
    let (g, d, _) = initialize(&cfg).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.checkpoint.step, 0);
    assert_eq!(out.checkpoint.generator, g);
    assert_eq!(out.checkpoint.discriminator, d);
}

#[test]
fn training_is_bit_reproducible() {
    let data = pairs(5, 32);
    let cfg = tiny_config(2);
    let a = train(&data, &cfg).unwrap();
    let b = train(&data, &cfg).unwrap();
    assert_eq!(a.history.len(), 6);
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.history, b.history);
    let other = train(&data, &TrainConfig { seed: 12, ..cfg }).unwrap();
    assert_ne!(a.checkpoint.to_bytes(), other.checkpoint.to_bytes());
}

#[test]
fn history_steps_and_rates() {
    let data = pairs(4, 16);
    let cfg = TrainConfig {
        epochs_constant: 1,
        epochs_decay: 3,
        lr0: 1e-3,
        ..tiny_config(1)
    };
    let mut seen = 0;
    let out = train_with(&data, &cfg, |_| seen += 1).unwrap();
    assert_eq!(seen, 8);
    let steps: Vec<usize> = out.history.iter().map(|r| r.step).collect();
    assert_eq!(steps, (1..=8).collect::<Vec<_>>());
    let rates: Vec<f64> = out.history.iter().step_by(2).map(|r| r.lr).collect();
    assert_eq!(rates, vec![1e-3, 1e-3, 5e-4, 0.0]);
    for r in &out.history {
        assert!(r.content.is_finite() && r.edge.is_finite() && r.gan_g.is_finite() && r.d_loss.is_finite());
    }
    let csv = history_csv(&out.history);
    assert!(csv.starts_with(HISTORY_HEADER));
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn training_rejects_bad_data() {
    assert!(matches!(train(&[], &tiny_config(1)), Err(CmcnError::EmptyDataset)));
    let odd = vec![TrainPair {
        blurred: Image::zeros(18, 18),
        sharp: Image::zeros(18, 18),
    }];
    assert!(matches!(train(&odd, &tiny_config(1)), Err(CmcnError::Shape(_))));
    let mut mixed = pairs(2, 16);
    mixed[1].sharp = Image::zeros(20, 20);
    assert!(matches!(train(&mixed, &tiny_config(1)), Err(CmcnError::Shape(_))));
    let bad = TrainConfig {
        batch: 0,
        ..tiny_config(1)
    };
    assert!(matches!(train(&pairs(2, 16), &bad), Err(CmcnError::Config(_))));
}

#[test]
fn smoothing_is_a_trailing_mean() {
    assert_eq!(smoothed(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.0, 1.5, 2.5, 3.5]);
    assert_eq!(smoothed(&[1.0, 2.0, 3.0], 10), vec![1.0, 1.5, 2.0]);
    assert!(smoothed(&[], 3).is_empty());
}

fn trained_checkpoint() -> Checkpoint {
    train(&pairs(2, 16), &tiny_config(1)).unwrap().checkpoint
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let ck = trained_checkpoint();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.cmcn");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    // values only: optimizer moments are not part of the format
    assert_eq!(back.to_bytes(), ck.to_bytes());
    assert_eq!(back.to_bytes(), std::fs::read(&path).unwrap());
    assert_eq!(back.step, ck.step);
    let x = shapes_phantom(16, 40);
    let (a, b) = (correct(&x, &ck).unwrap(), correct(&x, &back).unwrap());
    assert_eq!(a.data(), b.data());
}

#[test]
fn checkpoint_header_and_rejections() {
    let bytes = trained_checkpoint().to_bytes();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), CHECKPOINT_VERSION);

    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(Checkpoint::from_bytes(&future), Err(CmcnError::UnsupportedVersion(2))));

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad_magic), Err(CmcnError::Checkpoint(_))));

    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
    let mut longer = bytes.clone();
    longer.push(0);
    assert!(Checkpoint::from_bytes(&longer).is_err());
    assert!(Checkpoint::from_bytes(&[]).is_err());
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let err = Checkpoint::load(std::path::Path::new("/nonexistent/model.cmcn")).unwrap_err();
    assert!(matches!(err, CmcnError::Io { .. }));
}
