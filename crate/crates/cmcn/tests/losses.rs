use std::f64::consts::LN_2;

use cmrlab_autodiff::{Adam, AdamConfig, GradCheckOptions, Tape, Tensor};
use cmrlab_cmcn::loss::{
    combine_losses, content_loss, edge_loss, gan_losses, minimax_generator_value, sobel_layer, total_loss,
};
use cmrlab_cmcn::verify::{gradient_suite, SUITE_TOLERANCE};
use cmrlab_cmcn::{Discriminator, DiscriminatorConfig, LossWeights};
use cmrlab_core::metrics::sobel;
use cmrlab_core::phantom::shapes_phantom;
use cmrlab_core::Image;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scalar(f: impl FnOnce(&mut Tape) -> cmrlab_autodiff::Var) -> f64 {
    let mut t = Tape::new();
    let v = f(&mut t);
    t.value(v).item()
}

fn leaf(t: &mut Tape, img: &Image) -> cmrlab_autodiff::Var {
    t.leaf(Tensor::new([1, 1, img.height(), img.width()], img.data().to_vec()).unwrap())
}

#[test]
fn sobel_layer_matches_metrics_on_interior() {
    let img = shapes_phantom(32, 3);
    let reference = sobel(&img).unwrap();
    let mut t = Tape::new();
    let x = leaf(&mut t, &img);
    let s = sobel_layer(&mut t, x).unwrap();
    let out = t.value(s);
    assert_eq!(out.shape(), [1, 2, 32, 32]);
    let plane = 32 * 32;
    for r in 1..31 {
        for c in 1..31 {
            let i = r * 32 + c;
            assert!((out.data()[i] - reference.gx[i]).abs() < 1e-12);
            assert!((out.data()[plane + i] - reference.gy[i]).abs() < 1e-12);
        }
    }
}

#[test]
fn edge_loss_of_step_edge() {
    // 4x4, left half 0 and right half 1, against black; zero padding.
    // |gx| sums to 42 and |gy| to 14 over 32 responses.
    let step = Image::from_fn(4, 4, |_, c| if c >= 2 { 1.0 } else { 0.0 });
    let v = scalar(|t| {
        let a = leaf(t, &step);
        let b = leaf(t, &Image::zeros(4, 4));
        edge_loss(t, a, b).unwrap()
    });
    assert!((v - 1.75).abs() < 1e-12, "{v}");
}

#[test]
fn edge_loss_ignores_constant_offsets_in_the_interior() {
    let img = shapes_phantom(16, 2);
    // zero padding makes the border see the offset, so compare interiors only
    let shifted = img.map(|v| v + 0.25);
    let mut t = Tape::new();
    let (a, b) = (leaf(&mut t, &img), leaf(&mut t, &shifted));
    let (sa, sb) = (sobel_layer(&mut t, a).unwrap(), sobel_layer(&mut t, b).unwrap());
    let (da, db) = (t.value(sa).data(), t.value(sb).data());
    for ch in 0..2 {
        for r in 1..15 {
            for c in 1..15 {
                let i = ch * 256 + r * 16 + c;
                assert!((da[i] - db[i]).abs() < 1e-12);
            }
        }
    }
    let same = scalar(|t| {
        let a = leaf(t, &img);
        let b = leaf(t, &img);
        edge_loss(t, a, b).unwrap()
    });
    assert_eq!(same, 0.0);
}

#[test]
fn content_loss_value() {
    let a = Image::filled(4, 4, 0.25);
    let b = Image::from_fn(4, 4, |r, _| if r < 2 { 0.25 } else { 0.75 });
    let v = scalar(|t| {
        let (x, y) = (leaf(t, &a), leaf(t, &b));
        content_loss(t, x, y).unwrap()
    });
    assert!((v - 0.25).abs() < 1e-15);
}

#[test]
fn gan_losses_at_one_half() {
    let mut t = Tape::new();
    let real = t.leaf(Tensor::filled([4, 1, 1, 1], 0.5));
    let fake = t.leaf(Tensor::filled([4, 1, 1, 1], 0.5));
    let (d, g) = gan_losses(&mut t, real, fake, false).unwrap();
    assert!((t.value(d).item() - 2.0 * LN_2).abs() < 1e-12);
    assert!((t.value(g).item() - LN_2).abs() < 1e-12);
    assert!((minimax_generator_value(&[0.5, 0.5]) + LN_2).abs() < 1e-12);
}

#[test]
fn gan_losses_need_valid_probabilities_unless_clamped() {
    let mut t = Tape::new();
    let real = t.leaf(Tensor::filled([1, 1, 1, 1], 1.0));
    let fake = t.leaf(Tensor::filled([1, 1, 1, 1], 0.0));
    assert!(gan_losses(&mut t, real, fake, false).is_err());
    let (d, g) = gan_losses(&mut t, real, fake, true).unwrap();
    assert!(t.value(d).item().is_finite());
    assert!((t.value(g).item() + (1e-7f64).ln()).abs() < 1e-9);
}

#[test]
fn total_loss_weights() {
    let w = LossWeights {
        lambda_gan: 100.0,
        lambda_edge: 100.0,
    };
    let v = scalar(|t| {
        let c = t.leaf(Tensor::scalar(1.0));
        let g = t.leaf(Tensor::scalar(2.0));
        let e = t.leaf(Tensor::scalar(3.0));
        total_loss(t, c, g, e, &w).unwrap()
    });
    assert_eq!(v, 501.0);
    assert_eq!(combine_losses(1.0, 2.0, 3.0, &w), 501.0);
}

#[test]
fn one_discriminator_step_lowers_its_loss() {
    let mut d = Discriminator::new(DiscriminatorConfig { base_channels: 4 }, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let real = Tensor::new([1, 1, 32, 32], shapes_phantom(32, 5).into_data()).unwrap();
    let fake = Tensor::new([1, 1, 32, 32], shapes_phantom(32, 5).map(|v| 0.5 * v + 0.2).into_data()).unwrap();
    let loss = |d: &Discriminator, backward: bool| {
        let mut t = Tape::new();
        let vars = d.bind(&mut t);
        let (r, f) = (t.leaf(real.clone()), t.leaf(fake.clone()));
        let (pr, pf) = (d.forward(&mut t, &vars, r).unwrap(), d.forward(&mut t, &vars, f).unwrap());
        let (l, _) = gan_losses(&mut t, pr, pf, true).unwrap();
        let v = t.value(l).item();
        if backward {
            t.backward(l).unwrap();
        }
        (v, t, vars)
    };
    let (before, t, vars) = loss(&d, true);
    d.load_grads(&t, &vars).unwrap();
    Adam::new(AdamConfig::default()).step(d.params_mut(), 1e-5);
    let (after, _, _) = loss(&d, false);
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn gradient_suite_within_tolerance() {
    let entries = gradient_suite(&[0, 1, 2, 3, 4], &GradCheckOptions::default()).unwrap();
    for name in ["sobel layer", "content loss", "edge loss", "gan losses", "discriminator score", "end-to-end total loss"] {
        assert!(entries.iter().any(|e| e.name == name), "missing {name}");
    }
    for e in &entries {
        assert!(e.max_rel_error <= SUITE_TOLERANCE, "{e:?}");
        assert_eq!(e.kink_crossings, 0, "{e:?}");
        assert!(e.checked > 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn edge_loss_is_symmetric_and_nonnegative(seed in 0u64..1000) {
        let a = shapes_phantom(16, seed);
        let b = shapes_phantom(16, seed + 1);
        let ab = scalar(|t| { let (x, y) = (leaf(t, &a), leaf(t, &b)); edge_loss(t, x, y).unwrap() });
        let ba = scalar(|t| { let (x, y) = (leaf(t, &b), leaf(t, &a)); edge_loss(t, x, y).unwrap() });
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
    }
}
