use cmrlab_autodiff::suite::op_checks;
use cmrlab_autodiff::{grad_check, relative_error, GradCheckOptions, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_within_tolerance_on_five_seeds() {
    let opts = GradCheckOptions::default();
    for seed in 0..5 {
        for check in op_checks(seed, &opts).unwrap() {
            assert!(
                check.report.max_rel_error <= 1e-4,
                "{} seed {}: {:?}",
                check.name,
                seed,
                check.report
            );
            assert!(check.report.checked > 0);
        }
    }
}

#[test]
fn linear_function_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::uniform([1, 2, 3, 3], -1.0, 1.0, &mut rng);
    let r = Tensor::uniform([1, 2, 3, 3], -1.0, 1.0, &mut rng);
    let report = grad_check(&[x], &GradCheckOptions::default(), |t, v| {
        let y = t.affine(v[0], 3.0, -1.0)?;
        t.inner(y, &r)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-10, "{report:?}");
    assert_eq!(report.checked, 18);
}

#[test]
fn corrupted_gradient_is_detected() {
    let opts = GradCheckOptions {
        corrupt: Some(1.1),
        ..Default::default()
    };
    for check in op_checks(0, &opts).unwrap() {
        assert!(check.report.max_rel_error > 1e-2, "{}: {:?}", check.name, check.report);
    }
}

#[test]
fn relative_error_floor() {
    assert_eq!(relative_error(0.0, 0.0), 0.0);
    assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    assert_eq!(relative_error(1e-12, 0.0), 1e-12 / 1e-8);
}

#[test]
fn coordinate_subsampling() {
    let x = Tensor::filled([1, 1, 10, 10], 0.5);
    let opts = GradCheckOptions {
        max_coords_per_input: Some(7),
        ..Default::default()
    };
    let report = grad_check(&[x], &opts, |t, v| {
        let y = t.tanh(v[0])?;
        t.inner(y, &Tensor::filled([1, 1, 10, 10], 1.0))
    })
    .unwrap();
    assert_eq!(report.checked, 7);
}

#[test]
fn kink_crossings_are_counted() {
    // 3e-6 sits within h of relu's kink; the other two do not.
    let x = Tensor::new([1, 1, 1, 3], vec![3e-6, 0.5, -0.5]).unwrap();
    let report = grad_check(&[x], &GradCheckOptions::default(), |t, v| {
        let y = t.relu(v[0])?;
        t.inner(y, &Tensor::filled([1, 1, 1, 3], 1.0))
    })
    .unwrap();
    assert_eq!(report.checked, 3);
    assert_eq!(report.kink_crossings, 1);
    assert_eq!(report.worst_index, 0);
    assert!(report.max_rel_error > 0.1);
}

#[test]
fn smooth_ops_never_cross() {
    for check in op_checks(3, &GradCheckOptions::default()).unwrap() {
        assert_eq!(check.report.kink_crossings, 0, "{}", check.name);
    }
}
