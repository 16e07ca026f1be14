use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::AutodiffError;

/// `(batch, channels, height, width)`.
pub type Shape = [usize; 4];

/// Dense NCHW tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

pub(crate) fn numel(shape: Shape) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self, AutodiffError> {
        if data.len() != numel(shape) {
            return Err(AutodiffError::Shape {
                op: "tensor",
                detail: format!("{} values for shape {shape:?}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: [1, 1, 1, 1],
            data: vec![value],
        }
    }

    /// Values from `f(flat_index)`.
    pub fn from_fn(shape: Shape, f: impl FnMut(usize) -> f64) -> Self {
        Self {
            shape,
            data: (0..numel(shape)).map(f).collect(),
        }
    }

    /// Zero-mean Gaussian entries with standard deviation `std`.
    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
    }

    /// Uniform entries in `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        Self::from_fn(shape, |_| rng.random_range(lo..hi))
    }

    /// Concatenates equally shaped per-sample planes into one batch.
    pub fn stack(samples: &[&[f64]], channels: usize, height: usize, width: usize) -> Result<Self, AutodiffError> {
        let per = channels * height * width;
        if let Some(bad) = samples.iter().find(|s| s.len() != per) {
            return Err(AutodiffError::Shape {
                op: "stack",
                detail: format!("sample of {} values, expected {channels}x{height}x{width}", bad.len()),
            });
        }
        Ok(Self {
            shape: [samples.len(), channels, height, width],
            data: samples.concat(),
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Values of one batch entry.
    pub fn sample(&self, n: usize) -> &[f64] {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[n * per..(n + 1) * per]
    }

    /// First value; meant for `[1, 1, 1, 1]` losses.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
