//! Finite-difference checks of every op on small random inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
use crate::tape::{Tape, Var};
use crate::tensor::{Shape, Tensor};
use crate::AutodiffError;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerCheck {
    pub name: String,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Uniform in `[-hi, -gap] U [gap, hi]`, keeping clear of kinks at 0.
fn away_from_zero(shape: Shape, gap: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m: f64 = rng.random_range(gap..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

type Builder = fn(&mut Tape, &[Var], &Tensor) -> Result<Var, AutodiffError>;

struct Case {
    name: &'static str,
    inputs: Vec<Tensor>,
    out_shape: Shape,
    build: Builder,
}

fn cases(rng: &mut ChaCha8Rng) -> Vec<Case> {
    let u = |shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng| Tensor::uniform(shape, lo, hi, rng);
    let mut v = Vec::new();
    v.push(Case {
        name: "conv2d 3x3 stride 1",
        inputs: vec![
            u([2, 3, 8, 8], -1.0, 1.0, rng),
            u([4, 3, 3, 3], -0.5, 0.5, rng),
            u([1, 4, 1, 1], -0.5, 0.5, rng),
        ],
        out_shape: [2, 4, 8, 8],
        build: |t, x, r| {
            let y = t.conv2d(x[0], x[1], x[2], 1, 1)?;
            t.inner(y, r)
        },
    });
    v.push(Case {
        name: "conv2d 3x3 stride 2",
        inputs: vec![
            u([2, 3, 8, 8], -1.0, 1.0, rng),
            u([4, 3, 3, 3], -0.5, 0.5, rng),
            u([1, 4, 1, 1], -0.5, 0.5, rng),
        ],
        out_shape: [2, 4, 4, 4],
        build: |t, x, r| {
            let y = t.conv2d(x[0], x[1], x[2], 2, 1)?;
            t.inner(y, r)
        },
    });
    v.push(Case {
        name: "conv2d 7x7",
        inputs: vec![
            u([1, 2, 9, 9], -1.0, 1.0, rng),
            u([3, 2, 7, 7], -0.2, 0.2, rng),
            u([1, 3, 1, 1], -0.5, 0.5, rng),
        ],
        out_shape: [1, 3, 9, 9],
        build: |t, x, r| {
            let y = t.conv2d(x[0], x[1], x[2], 1, 3)?;
            t.inner(y, r)
        },
    });
    v.push(Case {
        name: "conv_transpose2d stride 2",
        inputs: vec![
            u([2, 3, 4, 4], -1.0, 1.0, rng),
            u([3, 2, 3, 3], -0.5, 0.5, rng),
            u([1, 2, 1, 1], -0.5, 0.5, rng),
        ],
        out_shape: [2, 2, 8, 8],
        build: |t, x, r| {
            let y = t.conv_transpose2d(x[0], x[1], x[2], 2, 1, 1)?;
            t.inner(y, r)
        },
    });
    v.push(Case {
        name: "instance_norm",
        inputs: vec![
            u([2, 3, 5, 5], -2.0, 2.0, rng),
            u([1, 3, 1, 1], 0.5, 1.5, rng),
            u([1, 3, 1, 1], -0.5, 0.5, rng),
        ],
        out_shape: [2, 3, 5, 5],
        build: |t, x, r| {
            let y = t.instance_norm(x[0], x[1], x[2], 1e-5)?;
            t.inner(y, r)
        },
    });
    v.push(Case {
        name: "relu",
        inputs: vec![away_from_zero([1, 2, 4, 5], 0.01, 2.0, rng)],
        out_shape: [1, 2, 4, 5],
        build: |t, x, r| {
            let y = t.relu(x[0])?;
            t.inner(y, r)
        },
    });
    v.push(Case {
        name: "leaky_relu",
        inputs: vec![away_from_zero([1, 2, 4, 5], 0.01, 2.0, rng)],
        out_shape: [1, 2, 4, 5],
        build: |t, x, r| {
            let y = t.leaky_relu(x[0], 0.2)?;
            t.inner(y, r)
        },
    });
    v.push(Case {
        name: "tanh",
        inputs: vec![u([1, 2, 4, 5], -3.0, 3.0, rng)],
        out_shape: [1, 2, 4, 5],
        build: |t, x, r| {
            let y = t.tanh(x[0])?;
            t.inner(y, r)
        },
    });
    v.push(Case {
        name: "sigmoid",
        inputs: vec![u([1, 2, 4, 5], -4.0, 4.0, rng)],
        out_shape: [1, 2, 4, 5],
        build: |t, x, r| {
            let y = t.sigmoid(x[0])?;
            t.inner(y, r)
        },
    });
    v.push(Case {
        name: "clamp",
        inputs: vec![Tensor::from_fn([1, 1, 5, 5], |_| {
            // keep clear of both clamp bounds
            let c: f64 = rng.random_range(-0.45..0.45);
            let side = [0.0, 1.0][rng.random_range(0..2)];
            side + if c.abs() < 0.01 { 0.2 } else { c }
        })],
        out_shape: [1, 1, 5, 5],
        build: |t, x, r| {
            let y = t.clamp(x[0], 0.0, 1.0)?;
            t.inner(y, r)
        },
    });
    v.push(Case {
        name: "add and affine",
        inputs: vec![u([2, 1, 3, 3], -1.0, 1.0, rng), u([2, 1, 3, 3], -1.0, 1.0, rng)],
        out_shape: [2, 1, 3, 3],
        build: |t, x, r| {
            let s = t.add(x[0], x[1])?;
            let y = t.affine(s, 1.7, 0.3)?;
            t.inner(y, r)
        },
    });
    v.push(Case {
        name: "global_avg_pool and linear",
        inputs: vec![
            u([2, 3, 4, 4], -1.0, 1.0, rng),
            u([2, 3, 1, 1], -1.0, 1.0, rng),
            u([1, 2, 1, 1], -1.0, 1.0, rng),
        ],
        out_shape: [2, 2, 1, 1],
        build: |t, x, r| {
            let p = t.global_avg_pool(x[0])?;
            let y = t.linear(p, x[1], x[2])?;
            t.inner(y, r)
        },
    });
    let a = u([2, 1, 4, 4], -1.0, 1.0, rng);
    let d = away_from_zero([2, 1, 4, 4], 0.01, 0.5, rng);
    let b = Tensor::from_fn(a.shape(), |i| a.data()[i] + d.data()[i]);
    v.push(Case {
        name: "mean_abs_diff",
        inputs: vec![a, b],
        out_shape: [1, 1, 1, 1],
        build: |t, x, _| t.mean_abs_diff(x[0], x[1]),
    });
    v.push(Case {
        name: "bce",
        inputs: vec![u([4, 1, 1, 1], 0.05, 0.95, rng), u([4, 1, 1, 1], 0.05, 0.95, rng)],
        out_shape: [1, 1, 1, 1],
        build: |t, x, _| {
            let real = t.bce(x[0], 1.0, false)?;
            let fake = t.bce(x[1], 0.0, false)?;
            t.add(real, fake)
        },
    });
    v
}

/// Runs every op case for one seed. The scalar checked is the inner product
/// of the op output with a random weight tensor, except for the reductions.
pub fn op_checks(seed: u64, opts: &GradCheckOptions) -> Result<Vec<LayerCheck>, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in cases(&mut rng) {
        let r = Tensor::uniform(case.out_shape, -1.0, 1.0, &mut rng);
        let build = case.build;
        let report = grad_check(&case.inputs, opts, |t, x| build(t, x, &r))?;
        out.push(LayerCheck {
            name: case.name.to_string(),
            seed,
            report,
        });
    }
    Ok(out)
}
