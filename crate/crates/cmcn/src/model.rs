//! Generator and global discriminator.
//!
//! Both networks keep their parameters as a flat, ordered list; the order is
//! the declaration order of [`generator_layout`] / [`discriminator_layout`]
//! and is what checkpoints store.

use cmrlab_autodiff::{AutodiffError, Parameter, Shape, Tape, Tensor, Var};
use rand::Rng;

use crate::config::{DiscriminatorConfig, GeneratorConfig};
use crate::CmcnError;

pub const NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;
/// Output conv init, so the residual head starts near zero.
pub const OUT_INIT_STD: f64 = 1e-3;
pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Normal,
    /// Normal with [`OUT_INIT_STD`].
    Small,
    Zero,
    One,
}

/// Name, shape and initializer of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

fn slot(out: &mut Vec<Slot>, name: String, shape: Shape, init: Init) {
    out.push(Slot { name, shape, init });
}

/// Conv weight `[o, i, k, k]` and bias, optionally followed by norm gain/bias.
fn conv_slots(out: &mut Vec<Slot>, prefix: &str, w: Shape, bias_channels: usize, norm: bool) {
    slot(out, format!("{prefix}.conv.w"), w, Init::Normal);
    slot(out, format!("{prefix}.conv.b"), [1, bias_channels, 1, 1], Init::Zero);
    if norm {
        slot(out, format!("{prefix}.norm.gain"), [1, bias_channels, 1, 1], Init::One);
        slot(out, format!("{prefix}.norm.bias"), [1, bias_channels, 1, 1], Init::Zero);
    }
}

pub fn generator_layout(cfg: &GeneratorConfig) -> Vec<Slot> {
    let f = cfg.base_channels;
    let mut v = Vec::new();
    conv_slots(&mut v, "g.in", [f, 1, 7, 7], f, true);
    conv_slots(&mut v, "g.down1", [2 * f, f, 3, 3], 2 * f, true);
    conv_slots(&mut v, "g.down2", [4 * f, 2 * f, 3, 3], 4 * f, true);
    for r in 0..cfg.n_resblocks {
        conv_slots(&mut v, &format!("g.res{r}.a"), [4 * f, 4 * f, 3, 3], 4 * f, true);
        conv_slots(&mut v, &format!("g.res{r}.b"), [4 * f, 4 * f, 3, 3], 4 * f, true);
    }
    // transposed conv weights are [in, out, k, k]
    conv_slots(&mut v, "g.up1", [4 * f, 2 * f, 3, 3], 2 * f, true);
    conv_slots(&mut v, "g.up2", [2 * f, f, 3, 3], f, true);
    conv_slots(&mut v, "g.out", [1, f, 7, 7], 1, false);
    let out = v.len() - 2;
    v[out].init = Init::Small;
    v
}

pub fn discriminator_layout(cfg: &DiscriminatorConfig) -> Vec<Slot> {
    let f = cfg.base_channels;
    let mut v = Vec::new();
    conv_slots(&mut v, "d.c1", [f, 1, 3, 3], f, false);
    conv_slots(&mut v, "d.c2", [2 * f, f, 3, 3], 2 * f, true);
    conv_slots(&mut v, "d.c3", [4 * f, 2 * f, 3, 3], 4 * f, true);
    conv_slots(&mut v, "d.c4", [8 * f, 4 * f, 3, 3], 8 * f, true);
    slot(&mut v, "d.fc.w".into(), [1, 8 * f, 1, 1], Init::Normal);
    slot(&mut v, "d.fc.b".into(), [1, 1, 1, 1], Init::Zero);
    v
}

fn init_params<R: Rng + ?Sized>(layout: &[Slot], rng: &mut R) -> Vec<Parameter> {
    layout
        .iter()
        .map(|s| {
            let t = match s.init {
                Init::Normal => Tensor::randn(s.shape, INIT_STD, rng),
                Init::Small => Tensor::randn(s.shape, OUT_INIT_STD, rng),
                Init::Zero => Tensor::zeros(s.shape),
                Init::One => Tensor::filled(s.shape, 1.0),
            };
            Parameter::new(s.name.clone(), t)
        })
        .collect()
}

fn params_from_tensors(layout: &[Slot], tensors: Vec<Tensor>) -> Result<Vec<Parameter>, CmcnError> {
    if layout.len() != tensors.len() {
        return Err(CmcnError::Checkpoint(format!(
            "{} tensors for a layout of {}",
            tensors.len(),
            layout.len()
        )));
    }
    layout
        .iter()
        .zip(tensors)
        .map(|(s, t)| {
            if t.shape() != s.shape {
                return Err(CmcnError::Checkpoint(format!(
                    "{} has shape {:?}, expected {:?}",
                    s.name,
                    t.shape(),
                    s.shape
                )));
            }
            Ok(Parameter::new(s.name.clone(), t))
        })
        .collect()
}

fn bind(params: &[Parameter], tape: &mut Tape) -> Vec<Var> {
    params.iter().map(|p| tape.leaf(p.value().clone())).collect()
}

/// Replaces each parameter's gradient with the tape's gradient for its var.
fn load_grads(params: &mut [Parameter], tape: &Tape, vars: &[Var]) -> Result<(), AutodiffError> {
    for (p, &v) in params.iter_mut().zip(vars) {
        p.zero_grad();
        if let Some(g) = tape.grad(v) {
            p.accumulate_grad(g)?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    vars: &'a [Var],
    next: usize,
}

impl Cursor<'_> {
    fn take(&mut self) -> Var {
        let v = self.vars[self.next];
        self.next += 1;
        v
    }

    fn conv(&mut self, t: &mut Tape, x: Var, stride: usize, pad: usize) -> Result<Var, AutodiffError> {
        let (w, b) = (self.take(), self.take());
        t.conv2d(x, w, b, stride, pad)
    }

    fn conv_t(&mut self, t: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let (w, b) = (self.take(), self.take());
        t.conv_transpose2d(x, w, b, 2, 1, 1)
    }

    fn norm(&mut self, t: &mut Tape, x: Var) -> Result<Var, AutodiffError> {
        let (g, b) = (self.take(), self.take());
        t.instance_norm(x, g, b, NORM_EPS)
    }
}

fn check_vars(op: &'static str, vars: &[Var], expected: usize) -> Result<(), AutodiffError> {
    if vars.len() != expected {
        return Err(AutodiffError::Shape {
            op,
            detail: format!("{} parameter vars, expected {expected}", vars.len()),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    params: Vec<Parameter>,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, rng: &mut R) -> Result<Self, CmcnError> {
        config.validate()?;
        Ok(Self {
            params: init_params(&generator_layout(&config), rng),
            config,
        })
    }

    pub fn from_tensors(config: GeneratorConfig, tensors: Vec<Tensor>) -> Result<Self, CmcnError> {
        config.validate()?;
        Ok(Self {
            params: params_from_tensors(&generator_layout(&config), tensors)?,
            config,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value().numel()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        bind(&self.params, tape)
    }

    pub fn load_grads(&mut self, tape: &Tape, vars: &[Var]) -> Result<(), AutodiffError> {
        load_grads(&mut self.params, tape, vars)
    }

    /// `x` is `[N, 1, H, W]` with `H` and `W` multiples of 4.
    pub fn forward(&self, t: &mut Tape, vars: &[Var], x: Var) -> Result<Var, AutodiffError> {
        check_vars("generator", vars, self.params.len())?;
        let xs = t.shape(x);
        if xs[1] != 1 || xs[2] % 4 != 0 || xs[3] % 4 != 0 || xs[2] == 0 || xs[3] == 0 {
            return Err(AutodiffError::Shape {
                op: "generator",
                detail: format!("input {xs:?} must be single-channel with height and width multiples of 4"),
            });
        }
        let mut c = Cursor { vars, next: 0 };
        let mut h = x;
        for (stride, pad) in [(1, 3), (2, 1), (2, 1)] {
            h = c.conv(t, h, stride, pad)?;
            h = c.norm(t, h)?;
            h = t.relu(h)?;
        }
        for _ in 0..self.config.n_resblocks {
            let mut r = c.conv(t, h, 1, 1)?;
            r = c.norm(t, r)?;
            r = t.relu(r)?;
            r = c.conv(t, r, 1, 1)?;
            r = c.norm(t, r)?;
            h = t.add(h, r)?;
        }
        for _ in 0..2 {
            h = c.conv_t(t, h)?;
            h = c.norm(t, h)?;
            h = t.relu(h)?;
        }
        h = c.conv(t, h, 1, 3)?;
        let th = t.tanh(h)?;
        if self.config.global_skip {
            let r = t.scale(th, 0.5)?;
            let s = t.add(x, r)?;
            t.clamp(s, 0.0, 1.0)
        } else {
            t.affine(th, 0.5, 0.5)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: Vec<Parameter>,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self, CmcnError> {
        config.validate()?;
        Ok(Self {
            params: init_params(&discriminator_layout(&config), rng),
            config,
        })
    }

    pub fn from_tensors(config: DiscriminatorConfig, tensors: Vec<Tensor>) -> Result<Self, CmcnError> {
        config.validate()?;
        Ok(Self {
            params: params_from_tensors(&discriminator_layout(&config), tensors)?,
            config,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value().numel()).sum()
    }

    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        bind(&self.params, tape)
    }

    pub fn load_grads(&mut self, tape: &Tape, vars: &[Var]) -> Result<(), AutodiffError> {
        load_grads(&mut self.params, tape, vars)
    }

    /// Probability `[N, 1, 1, 1]` that each image is a real sharp one.
    pub fn forward(&self, t: &mut Tape, vars: &[Var], x: Var) -> Result<Var, AutodiffError> {
        check_vars("discriminator", vars, self.params.len())?;
        let xs = t.shape(x);
        if xs[1] != 1 || xs[2] < 16 || xs[3] < 16 {
            return Err(AutodiffError::Shape {
                op: "discriminator",
                detail: format!("input {xs:?} must be single-channel and at least 16x16"),
            });
        }
        let mut c = Cursor { vars, next: 0 };
        let mut h = c.conv(t, x, 2, 1)?;
        h = t.leaky_relu(h, LEAKY_SLOPE)?;
        for _ in 0..3 {
            h = c.conv(t, h, 2, 1)?;
            h = c.norm(t, h)?;
            h = t.leaky_relu(h, LEAKY_SLOPE)?;
        }
        let pooled = t.global_avg_pool(h)?;
        let (w, b) = (c.take(), c.take());
        let logit = t.linear(pooled, w, b)?;
        t.sigmoid(logit)
    }
}
