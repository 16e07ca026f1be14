//! Operation tape and the differentiable ops recorded on it.

use std::hash::{DefaultHasher, Hasher};

use rayon::prelude::*;

use crate::conv::{col2im, gemm, im2col, Geom, Mat};
use crate::tensor::{numel, Shape, Tensor};
use crate::AutodiffError;

/// Probability clamp applied by [`Tape::bce`] when asked to.
pub const PROB_CLAMP: (f64, f64) = (1e-7, 1.0 - 1e-7);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        geom: Geom,
    },
    ConvFixed {
        x: Var,
        kernel: Tensor,
        geom: Geom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        geom: Geom,
    },
    InstanceNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Clamp(Var, f64, f64),
    Add(Var, Var),
    Affine(Var, f64),
    GlobalAvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    MeanAbsDiff(Var, Var),
    Bce {
        p: Var,
        label: f64,
        clamp: bool,
    },
    Inner(Var, Tensor),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation so it can be differentiated once.
///
/// Ops are appended in execution order and `backward` walks them in reverse.
/// A second `backward` without any newly recorded op is rejected.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_at: Option<usize>,
    branches: DefaultHasher,
}

/// 0 below `lo`, 1 on `[lo, hi]`, 2 above `hi`; the same split the backward pass uses.
fn region(v: f64, lo: f64, hi: f64) -> u8 {
    if v < lo {
        0
    } else if v > hi {
        2
    } else {
        1
    }
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

fn bias_shape(channels: usize) -> Shape {
    [1, channels, 1, 1]
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Hash of every branch taken by piecewise ops (relu side, clamp region,
    /// sign of an absolute difference) so far. Two evaluations with equal
    /// signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        self.branches.finish()
    }

    fn record_branches(&mut self, codes: impl Iterator<Item = u8>) {
        for c in codes {
            self.branches.write_u8(c);
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last `backward` loss w.r.t. `v`, if `v` influenced it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient w.r.t. `v`, or zeros of the right shape.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    /// Records an input or parameter value.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn unary(&mut self, name: &'static str, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, AutodiffError> {
        let xv = self.value(x);
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|&v| f(v)).collect())?;
        self.push(name, out, op)
    }

    fn check_bias(&self, op: &'static str, b: Var, channels: usize) -> Result<(), AutodiffError> {
        if self.shape(b) != bias_shape(channels) {
            return Err(shape_err(
                op,
                format!("bias {:?} does not match {} channels", self.shape(b), channels),
            ));
        }
        Ok(())
    }

    /// Cross-correlation of `x` `[N, C, H, W]` with `w` `[O, C, K, K]` plus
    /// bias `[1, O, 1, 1]`, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var, AutodiffError> {
        let geom = self.conv_geom("conv2d", x, self.shape(w), stride, pad)?;
        let o = self.shape(w)[0];
        self.check_bias("conv2d", b, o)?;
        let out = conv_forward(self.value(x), self.value(w).data(), Some(self.value(b).data()), o, &geom)?;
        self.push("conv2d", out, Op::Conv2d { x, w, b, geom })
    }

    /// Convolution with a constant kernel: gradients reach `x` only.
    pub fn conv2d_fixed(&mut self, x: Var, kernel: &Tensor, stride: usize, pad: usize) -> Result<Var, AutodiffError> {
        let geom = self.conv_geom("conv2d_fixed", x, kernel.shape(), stride, pad)?;
        let out = conv_forward(self.value(x), kernel.data(), None, kernel.shape()[0], &geom)?;
        self.push(
            "conv2d_fixed",
            out,
            Op::ConvFixed {
                x,
                kernel: kernel.clone(),
                geom,
            },
        )
    }

    fn conv_geom(&self, op: &'static str, x: Var, ws: Shape, stride: usize, pad: usize) -> Result<Geom, AutodiffError> {
        let xs = self.shape(x);
        if ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(shape_err(op, format!("input {xs:?} vs weight {ws:?}")));
        }
        Geom::new(xs[1], xs[2], xs[3], ws[2], stride, pad)
            .ok_or_else(|| shape_err(op, format!("kernel {ws:?} does not fit padded input {xs:?}")))
    }

    /// Transposed convolution (adjoint of [`Tape::conv2d`]'s input map).
    /// `w` is `[C_in, C_out, K, K]`; output side is
    /// `(H - 1) * stride - 2 * pad + K + output_padding`.
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<Var, AutodiffError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if ws[0] != xs[1] || ws[2] != ws[3] {
            return Err(shape_err("conv_transpose2d", format!("input {xs:?} vs weight {ws:?}")));
        }
        if stride == 0 || output_padding >= stride {
            return Err(shape_err(
                "conv_transpose2d",
                format!("output_padding {output_padding} must be below stride {stride}"),
            ));
        }
        let (cout, k) = (ws[1], ws[2]);
        self.check_bias("conv_transpose2d", b, cout)?;
        let side = |n: usize| -> Result<usize, AutodiffError> {
            let s = (n as isize - 1) * stride as isize - 2 * pad as isize + (k + output_padding) as isize;
            if n == 0 || s < 1 {
                return Err(shape_err("conv_transpose2d", format!("empty output for input {xs:?}")));
            }
            Ok(s as usize)
        };
        let (oh, ow) = (side(xs[2])?, side(xs[3])?);
        let geom = Geom::new(cout, oh, ow, k, stride, pad)
            .filter(|g| g.out_h == xs[2] && g.out_w == xs[3])
            .ok_or_else(|| shape_err("conv_transpose2d", format!("inconsistent geometry for {xs:?}, {ws:?}")))?;
        let (xv, wv, bv) = (self.value(x), self.value(w).data(), self.value(b).data());
        let rows = geom.rows();
        let hw = xs[2] * xs[3];
        let per_out = cout * oh * ow;
        let outs: Vec<Vec<f64>> = (0..xs[0])
            .into_par_iter()
            .map(|i| {
                let mut cols = vec![0.0; rows * hw];
                gemm(Mat::new(wv, xs[1], rows).t(), Mat::new(xv.sample(i), xs[1], hw), 0.0, &mut cols);
                let mut y = vec![0.0; per_out];
                for (c, plane) in y.chunks_mut(oh * ow).enumerate() {
                    plane.fill(bv[c]);
                }
                col2im(&cols, &geom, &mut y);
                y
            })
            .collect();
        let out = Tensor::new([xs[0], cout, oh, ow], outs.concat())?;
        self.push("conv_transpose2d", out, Op::ConvTranspose2d { x, w, b, geom })
    }

    /// Per-sample, per-channel standardization over space, then `gain * xhat + bias`.
    pub fn instance_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, AutodiffError> {
        let xs = self.shape(x);
        self.check_bias("instance_norm", gain, xs[1])?;
        self.check_bias("instance_norm", bias, xs[1])?;
        let m = xs[2] * xs[3];
        if m == 0 {
            return Err(shape_err("instance_norm", format!("empty spatial extent {xs:?}")));
        }
        let (g, bv) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; numel(xs)];
        let mut inv_std = vec![0.0; xs[0] * xs[1]];
        let mut out = vec![0.0; numel(xs)];
        for (plane, (src, (dst, hat))) in self
            .value(x)
            .data()
            .chunks(m)
            .zip(out.chunks_mut(m).zip(xhat.chunks_mut(m)))
            .enumerate()
        {
            let c = plane % xs[1];
            let mean = src.iter().sum::<f64>() / m as f64;
            let var = src.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[plane] = is;
            // a flat plane normalizes to exactly zero, whatever the rounding of `mean`
            let flat = src.iter().all(|&v| v == src[0]);
            for ((d, h), s) in dst.iter_mut().zip(hat.iter_mut()).zip(src) {
                *h = if flat { 0.0 } else { (s - mean) * is };
                *d = g[c] * *h + bv[c];
            }
        }
        let out = Tensor::new(xs, out)?;
        self.push(
            "instance_norm",
            out,
            Op::InstanceNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.record_positive(x);
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var, AutodiffError> {
        self.record_positive(x);
        self.unary("leaky_relu", x, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    /// Logistic function, written to stay in `(0, 1)` without overflow.
    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    /// Elementwise clamp; the gradient passes where `lo <= x <= hi`.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var, AutodiffError> {
        self.record_sides(x, lo, hi);
        self.unary("clamp", x, |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    fn record_positive(&mut self, x: Var) {
        let codes: Vec<u8> = self.value(x).data().iter().map(|&v| u8::from(v > 0.0)).collect();
        self.record_branches(codes.into_iter());
    }

    fn record_sides(&mut self, x: Var, lo: f64, hi: f64) {
        let codes: Vec<u8> = self.value(x).data().iter().map(|&v| region(v, lo, hi)).collect();
        self.record_branches(codes.into_iter());
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", format!("{sa:?} vs {sb:?}")));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let out = Tensor::new(sa, data)?;
        self.push("add", out, Op::Add(a, b))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var, AutodiffError> {
        self.unary("affine", x, |v| scale * v + shift, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var, AutodiffError> {
        self.affine(x, k, 0.0)
    }

    /// `[N, C, H, W] -> [N, C, 1, 1]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let xs = self.shape(x);
        let m = xs[2] * xs[3];
        if m == 0 {
            return Err(shape_err("global_avg_pool", format!("empty spatial extent {xs:?}")));
        }
        let data = self
            .value(x)
            .data()
            .chunks(m)
            .map(|c| c.iter().sum::<f64>() / m as f64)
            .collect();
        let out = Tensor::new([xs[0], xs[1], 1, 1], data)?;
        self.push("global_avg_pool", out, Op::GlobalAvgPool(x))
    }

    /// Affine map of each flattened sample: `w` is `[OUT, C*H*W, 1, 1]`, `b` is `[1, OUT, 1, 1]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, AutodiffError> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        let features = xs[1] * xs[2] * xs[3];
        if ws[1] != features || ws[2] != 1 || ws[3] != 1 {
            return Err(shape_err("linear", format!("input {xs:?} vs weight {ws:?}")));
        }
        let outs = ws[0];
        self.check_bias("linear", b, outs)?;
        let mut y = vec![0.0; xs[0] * outs];
        for row in y.chunks_mut(outs) {
            row.copy_from_slice(self.value(b).data());
        }
        gemm(
            Mat::new(self.value(x).data(), xs[0], features),
            Mat::new(self.value(w).data(), outs, features).t(),
            1.0,
            &mut y,
        );
        let out = Tensor::new([xs[0], outs, 1, 1], y)?;
        self.push("linear", out, Op::Linear { x, w, b })
    }

    /// `mean |a - b|` over every element; the subgradient at a tie is 0.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("mean_abs_diff", format!("{sa:?} vs {sb:?}")));
        }
        let n = numel(sa) as f64;
        let codes: Vec<u8> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| region(x - y, 0.0, 0.0))
            .collect();
        self.record_branches(codes.into_iter());
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| (x - y).abs())
            .sum();
        self.push("mean_abs_diff", Tensor::scalar(s / n), Op::MeanAbsDiff(a, b))
    }

    /// Mean binary cross-entropy `-[y ln p + (1 - y) ln(1 - p)]` with natural log.
    ///
    /// Without `clamp`, any `p` outside `(0, 1)` is a domain error. With it,
    /// `p` is first clamped to [`PROB_CLAMP`].
    pub fn bce(&mut self, p: Var, label: f64, clamp: bool) -> Result<Var, AutodiffError> {
        if !(0.0..=1.0).contains(&label) {
            return Err(AutodiffError::Domain {
                op: "bce",
                detail: format!("label {label} outside [0, 1]"),
            });
        }
        let pv = self.value(p).data();
        if !clamp {
            if let Some(bad) = pv.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
                return Err(AutodiffError::Domain {
                    op: "bce",
                    detail: format!("probability {bad} outside (0, 1)"),
                });
            }
        }
        if clamp {
            let codes: Vec<u8> = pv.iter().map(|&v| region(v, PROB_CLAMP.0, PROB_CLAMP.1)).collect();
            self.record_branches(codes.into_iter());
        }
        let pv = self.value(p).data();
        let s: f64 = pv
            .iter()
            .map(|&v| {
                let q = if clamp { v.clamp(PROB_CLAMP.0, PROB_CLAMP.1) } else { v };
                -(label * q.ln() + (1.0 - label) * (1.0 - q).ln())
            })
            .sum();
        let loss = Tensor::scalar(s / pv.len() as f64);
        self.push("bce", loss, Op::Bce { p, label, clamp })
    }

    /// `sum(x * weights)` against a constant tensor of the same shape.
    pub fn inner(&mut self, x: Var, weights: &Tensor) -> Result<Var, AutodiffError> {
        if self.shape(x) != weights.shape() {
            return Err(shape_err(
                "inner",
                format!("{:?} vs {:?}", self.shape(x), weights.shape()),
            ));
        }
        let s = self.value(x).dot(weights);
        self.push("inner", Tensor::scalar(s), Op::Inner(x, weights.clone()))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), AutodiffError> {
        if self.backward_at == Some(self.nodes.len()) {
            return Err(AutodiffError::BackwardTwice);
        }
        let shape = self.shape(loss);
        if numel(shape) != 1 {
            return Err(AutodiffError::NotScalar(shape));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(Tensor::filled(shape, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            backprop(&self.nodes, i, &g, &mut self.grads)?;
            self.grads[i] = Some(g);
        }
        self.backward_at = Some(self.nodes.len());
        for (node, g) in self.nodes.iter().zip(&self.grads) {
            if matches!(node.op, Op::Leaf) && g.as_ref().is_some_and(|g| !g.is_finite()) {
                return Err(AutodiffError::NonFinite { op: "backward" });
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn conv_forward(x: &Tensor, w: &[f64], b: Option<&[f64]>, o: usize, g: &Geom) -> Result<Tensor, AutodiffError> {
    let xs = x.shape();
    let (rows, p) = (g.rows(), g.positions());
    let outs: Vec<Vec<f64>> = (0..xs[0])
        .into_par_iter()
        .map(|i| {
            let cols = im2col(x.sample(i), g);
            let mut y = vec![0.0; o * p];
            if let Some(b) = b {
                for (c, plane) in y.chunks_mut(p).enumerate() {
                    plane.fill(b[c]);
                }
            }
            gemm(Mat::new(w, o, rows), Mat::new(&cols, rows, p), 1.0, &mut y);
            y
        })
        .collect();
    Tensor::new([xs[0], o, g.out_h, g.out_w], outs.concat())
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: Shape, delta: Vec<f64>) {
    match &mut grads[v.0] {
        Some(g) => g.data_mut().iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
        slot @ None => *slot = Some(Tensor::new(shape, delta).expect("gradient shape")),
    }
}

fn sum_in_order(parts: impl Iterator<Item = Vec<f64>>, len: usize) -> Vec<f64> {
    parts.fold(vec![0.0; len], |mut acc, p| {
        acc.iter_mut().zip(&p).for_each(|(a, v)| *a += v);
        acc
    })
}

fn channel_sums(g: &[f64], channels: usize, plane: usize) -> Vec<f64> {
    let mut s = vec![0.0; channels];
    for (i, chunk) in g.chunks(plane).enumerate() {
        s[i % channels] += chunk.iter().sum::<f64>();
    }
    s
}

fn backprop(nodes: &[Node], i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<(), AutodiffError> {
    let val = |v: Var| &nodes[v.0].value;
    let gd = g.data();
    let elementwise = |x: Var, f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..val(x).numel()).map(f).collect() };
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Conv2d { x, w, b, geom } => {
            let (xv, wv) = (val(*x), val(*w));
            let xs = xv.shape();
            let o = wv.shape()[0];
            let g2 = geom;
            let (rows, p) = (g2.rows(), g2.positions());
            let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..xs[0])
                .into_par_iter()
                .map(|n| {
                    let dy = &gd[n * o * p..(n + 1) * o * p];
                    let cols = im2col(xv.sample(n), g2);
                    let mut dw = vec![0.0; o * rows];
                    gemm(Mat::new(dy, o, p), Mat::new(&cols, rows, p).t(), 0.0, &mut dw);
                    let mut dcols = vec![0.0; rows * p];
                    gemm(Mat::new(wv.data(), o, rows).t(), Mat::new(dy, o, p), 0.0, &mut dcols);
                    let mut dx = vec![0.0; xs[1] * xs[2] * xs[3]];
                    col2im(&dcols, g2, &mut dx);
                    (dx, dw)
                })
                .collect();
            let db = channel_sums(gd, o, p);
            let (dxs, dws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
            let dw = sum_in_order(dws.into_iter(), o * rows);
            accumulate(grads, *x, xs, dxs.concat());
            accumulate(grads, *w, wv.shape(), dw);
            accumulate(grads, *b, bias_shape(o), db);
        }
        Op::ConvFixed { x, kernel, geom } => {
            let xv = val(*x);
            let xs = xv.shape();
            let o = kernel.shape()[0];
            let (rows, p) = (geom.rows(), geom.positions());
            let g2 = geom;
            let dxs: Vec<Vec<f64>> = (0..xs[0])
                .into_par_iter()
                .map(|n| {
                    let dy = &gd[n * o * p..(n + 1) * o * p];
                    let mut dcols = vec![0.0; rows * p];
                    gemm(Mat::new(kernel.data(), o, rows).t(), Mat::new(dy, o, p), 0.0, &mut dcols);
                    let mut dx = vec![0.0; xs[1] * xs[2] * xs[3]];
                    col2im(&dcols, g2, &mut dx);
                    dx
                })
                .collect();
            accumulate(grads, *x, xs, dxs.concat());
        }
        Op::ConvTranspose2d { x, w, b, geom } => {
            let (xv, wv) = (val(*x), val(*w));
            let xs = xv.shape();
            let (cin, cout) = (xs[1], geom.channels);
            let rows = geom.rows();
            let hw = xs[2] * xs[3];
            let per_out = cout * geom.height * geom.width;
            let parts: Vec<(Vec<f64>, Vec<f64>)> = (0..xs[0])
                .into_par_iter()
                .map(|n| {
                    let dy = &gd[n * per_out..(n + 1) * per_out];
                    let dcols = im2col(dy, geom);
                    let mut dx = vec![0.0; cin * hw];
                    gemm(Mat::new(wv.data(), cin, rows), Mat::new(&dcols, rows, hw), 0.0, &mut dx);
                    let mut dw = vec![0.0; cin * rows];
                    gemm(Mat::new(xv.sample(n), cin, hw), Mat::new(&dcols, rows, hw).t(), 0.0, &mut dw);
                    (dx, dw)
                })
                .collect();
            let db = channel_sums(gd, cout, geom.height * geom.width);
            let (dxs, dws): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
            let dw = sum_in_order(dws.into_iter(), cin * rows);
            accumulate(grads, *x, xs, dxs.concat());
            accumulate(grads, *w, wv.shape(), dw);
            accumulate(grads, *b, bias_shape(cout), db);
        }
        Op::InstanceNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let xs = val(*x).shape();
            let c = xs[1];
            let m = xs[2] * xs[3];
            let gv = val(*gain).data();
            let mut dx = vec![0.0; numel(xs)];
            let mut dg = vec![0.0; c];
            let mut db = vec![0.0; c];
            for (plane, ((dy, hat), out)) in gd.chunks(m).zip(xhat.chunks(m)).zip(dx.chunks_mut(m)).enumerate() {
                let ch = plane % c;
                let mut sum_dh = 0.0;
                let mut sum_dh_h = 0.0;
                for (d, h) in dy.iter().zip(hat) {
                    dg[ch] += d * h;
                    db[ch] += d;
                    let dh = d * gv[ch];
                    sum_dh += dh;
                    sum_dh_h += dh * h;
                }
                let k = inv_std[plane] / m as f64;
                for ((o, d), h) in out.iter_mut().zip(dy).zip(hat) {
                    *o = k * (m as f64 * d * gv[ch] - sum_dh - h * sum_dh_h);
                }
            }
            accumulate(grads, *x, xs, dx);
            accumulate(grads, *gain, bias_shape(c), dg);
            accumulate(grads, *bias, bias_shape(c), db);
        }
        Op::Relu(x) => {
            let xv = val(*x).data();
            let d = elementwise(*x, &|j| if xv[j] > 0.0 { gd[j] } else { 0.0 });
            accumulate(grads, *x, val(*x).shape(), d);
        }
        Op::LeakyRelu(x, slope) => {
            let xv = val(*x).data();
            let d = elementwise(*x, &|j| if xv[j] > 0.0 { gd[j] } else { slope * gd[j] });
            accumulate(grads, *x, val(*x).shape(), d);
        }
        Op::Tanh(x) => {
            let y = nodes[i].value.data();
            let d = elementwise(*x, &|j| gd[j] * (1.0 - y[j] * y[j]));
            accumulate(grads, *x, val(*x).shape(), d);
        }
        Op::Sigmoid(x) => {
            let y = nodes[i].value.data();
            let d = elementwise(*x, &|j| gd[j] * y[j] * (1.0 - y[j]));
            accumulate(grads, *x, val(*x).shape(), d);
        }
        Op::Clamp(x, lo, hi) => {
            let xv = val(*x).data();
            let d = elementwise(*x, &|j| if (*lo..=*hi).contains(&xv[j]) { gd[j] } else { 0.0 });
            accumulate(grads, *x, val(*x).shape(), d);
        }
        Op::Add(a, b) => {
            accumulate(grads, *a, g.shape(), gd.to_vec());
            accumulate(grads, *b, g.shape(), gd.to_vec());
        }
        Op::Affine(x, k) => {
            accumulate(grads, *x, g.shape(), gd.iter().map(|v| k * v).collect());
        }
        Op::GlobalAvgPool(x) => {
            let xs = val(*x).shape();
            let m = xs[2] * xs[3];
            let d = (0..numel(xs)).map(|j| gd[j / m] / m as f64).collect();
            accumulate(grads, *x, xs, d);
        }
        Op::Linear { x, w, b } => {
            let (xv, wv) = (val(*x), val(*w));
            let (n, outs) = (xv.shape()[0], wv.shape()[0]);
            let features = wv.shape()[1];
            let mut dx = vec![0.0; n * features];
            gemm(Mat::new(gd, n, outs), Mat::new(wv.data(), outs, features), 0.0, &mut dx);
            let mut dw = vec![0.0; outs * features];
            gemm(Mat::new(gd, n, outs).t(), Mat::new(xv.data(), n, features), 0.0, &mut dw);
            let db = sum_in_order(gd.chunks(outs).map(<[f64]>::to_vec), outs);
            accumulate(grads, *x, xv.shape(), dx);
            accumulate(grads, *w, wv.shape(), dw);
            accumulate(grads, *b, bias_shape(outs), db);
        }
        Op::MeanAbsDiff(a, b) => {
            let (av, bv) = (val(*a).data(), val(*b).data());
            let k = gd[0] / av.len() as f64;
            let da: Vec<f64> = av
                .iter()
                .zip(bv)
                .map(|(x, y)| {
                    let d = x - y;
                    if d > 0.0 {
                        k
                    } else if d < 0.0 {
                        -k
                    } else {
                        0.0
                    }
                })
                .collect();
            let db = da.iter().map(|v| -v).collect();
            accumulate(grads, *a, val(*a).shape(), da);
            accumulate(grads, *b, val(*b).shape(), db);
        }
        Op::Bce { p, label, clamp } => {
            let pv = val(*p).data();
            let k = gd[0] / pv.len() as f64;
            let d = pv
                .iter()
                .map(|&v| {
                    if *clamp && !(PROB_CLAMP.0..=PROB_CLAMP.1).contains(&v) {
                        0.0
                    } else {
                        k * (-label / v + (1.0 - label) / (1.0 - v))
                    }
                })
                .collect();
            accumulate(grads, *p, val(*p).shape(), d);
        }
        Op::Inner(x, weights) => {
            let d = weights.data().iter().map(|w| w * gd[0]).collect();
            accumulate(grads, *x, weights.shape(), d);
        }
    }
    Ok(())
}
