//! Image-space motion-artifact synthesis.
//!
//! The degradation model is `blurred = psf * sharp + noise`, with the PSF
//! obtained by splatting a random motion trajectory onto a small odd-sized
//! grid. Trajectories are first-order autoregressive walks in velocity whose
//! steps are biased along a drift axis (the diaphragm direction).

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::image::{read_image, write_image, Image, ImageError, ImageFormat};
use crate::manifest::{Manifest, ManifestRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("trajectory point {index} at ({x:.4}, {y:.4}) falls outside the {size}x{size} kernel")]
    OutOfKernel {
        index: usize,
        x: f64,
        y: f64,
        size: usize,
    },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("no decodable images in {0}")]
    EmptyInput(String),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parameters of the Markov motion walk. Offsets are `(x, y)` = (column, row) in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryParams {
    pub steps: usize,
    pub drift_axis: [f64; 2],
    pub step_sigma_along: f64,
    pub step_sigma_perp: f64,
    pub momentum: f64,
    pub max_step: f64,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        Self {
            steps: 32,
            drift_axis: [0.0, 1.0],
            step_sigma_along: 0.35,
            step_sigma_perp: 0.08,
            momentum: 0.7,
            max_step: 1.0,
        }
    }
}

impl TrajectoryParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Parameter(m));
        if self.steps < 1 {
            return bad("steps must be >= 1".into());
        }
        let norm = self.drift_axis[0].hypot(self.drift_axis[1]);
        if (norm - 1.0).abs() > 1e-9 {
            return bad(format!("drift_axis must be a unit vector, norm is {norm}"));
        }
        if !(self.step_sigma_along >= 0.0 && self.step_sigma_perp >= 0.0) {
            return bad("step sigmas must be >= 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.max_step > 0.0) || !self.max_step.is_finite() {
            return bad(format!("max_step must be positive, got {}", self.max_step));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self, SynthError> {
        if points.is_empty() {
            return Err(SynthError::Parameter("trajectory needs at least one point".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.points.len() as f64;
        let (sx, sy) = self
            .points
            .iter()
            .fold((0.0, 0.0), |(ax, ay), p| (ax + p[0], ay + p[1]));
        [sx / n, sy / n]
    }

    /// Largest |x| or |y| over all points.
    pub fn extent(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p[0].abs().max(p[1].abs()))
            .fold(0.0, f64::max)
    }

    /// Offsets re-expressed around their centroid, uniformly shrunk if needed
    /// so every point fits within `half_width` of the origin.
    pub fn fitted(&self, half_width: f64) -> Trajectory {
        let c = self.centroid();
        let mut points: Vec<[f64; 2]> = self.points.iter().map(|p| [p[0] - c[0], p[1] - c[1]]).collect();
        let extent = points
            .iter()
            .map(|p| p[0].abs().max(p[1].abs()))
            .fold(0.0, f64::max);
        if extent > half_width {
            let s = half_width / extent;
            for p in &mut points {
                p[0] = (p[0] * s).clamp(-half_width, half_width);
                p[1] = (p[1] * s).clamp(-half_width, half_width);
            }
        }
        Trajectory { points }
    }
}

pub fn generate_trajectory(params: &TrajectoryParams, seed: u64) -> Result<Trajectory, SynthError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [ax, ay] = params.drift_axis;
    let (px, py) = (-ay, ax);
    let mut points = Vec::with_capacity(params.steps);
    let mut pos = [0.0f64, 0.0];
    let mut vel = [0.0f64, 0.0];
    points.push(pos);
    for _ in 1..params.steps {
        let along: f64 = StandardNormal.sample(&mut rng);
        let perp: f64 = StandardNormal.sample(&mut rng);
        let a = params.step_sigma_along * along;
        let b = params.step_sigma_perp * perp;
        vel = [
            params.momentum * vel[0] + a * ax + b * px,
            params.momentum * vel[1] + a * ay + b * py,
        ];
        let speed = vel[0].hypot(vel[1]);
        if speed > params.max_step {
            let s = params.max_step / speed;
            vel = [vel[0] * s, vel[1] * s];
        }
        pos = [pos[0] + vel[0], pos[1] + vel[1]];
        points.push(pos);
    }
    Ok(Trajectory { points })
}

/// Nonnegative, unit-sum blur kernel on an odd `size` x `size` grid, origin at the center.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    size: usize,
    weights: Vec<f64>,
}

/// Tolerance on the unit-sum check for externally supplied kernels.
pub const PSF_SUM_TOLERANCE: f64 = 1e-9;

impl Psf {
    /// Validates without renormalizing.
    pub fn new(size: usize, weights: Vec<f64>) -> Result<Self, SynthError> {
        if size % 2 == 0 {
            return Err(SynthError::Parameter(format!("kernel size must be odd, got {size}")));
        }
        if weights.len() != size * size {
            return Err(SynthError::Parameter(format!(
                "{} weights for a {size}x{size} kernel",
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(SynthError::Parameter(format!("negative or non-finite weight {w}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > PSF_SUM_TOLERANCE {
            return Err(SynthError::Parameter(format!("kernel sums to {sum}, not 1")));
        }
        Ok(Self { size, weights })
    }

    /// Normalizes a nonnegative, non-zero weight grid to unit sum.
    pub fn normalized(size: usize, mut weights: Vec<f64>) -> Result<Self, SynthError> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(SynthError::Parameter("kernel weights sum to zero".into()));
        }
        weights.iter_mut().for_each(|w| *w /= sum);
        Self::new(size, weights)
    }

    pub fn delta(size: usize) -> Result<Self, SynthError> {
        let mut w = vec![0.0; size * size];
        if size % 2 == 1 {
            w[(size / 2) * size + size / 2] = 1.0;
        }
        Self::new(size, w)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.size + col]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Kernel rotated by 180 degrees (the correlation adjoint).
    pub fn flipped(&self) -> Psf {
        Psf {
            size: self.size,
            weights: self.weights.iter().rev().copied().collect(),
        }
    }

    /// Text form: first line is the size, then one whitespace-separated row per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("{}\n", self.size);
        for row in self.weights.chunks(self.size) {
            let line: Vec<String> = row.iter().map(|w| format!("{w:e}")).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SynthError> {
        let mut tokens = text.split_whitespace();
        let size: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| SynthError::Parameter("psf file must start with its size".into()))?;
        let weights = tokens
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| SynthError::Parameter(format!("bad psf weight {t:?}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(size, weights)
    }

    pub fn read(path: &Path) -> Result<Self, SynthError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_text(&text)
    }

    pub fn write(&self, path: &Path) -> Result<(), SynthError> {
        crate::write_atomic(path, self.to_text().as_bytes()).map_err(io_err(path))
    }
}

fn splat(points: &[[f64; 2]], size: usize) -> Result<Psf, SynthError> {
    if size % 2 == 0 {
        return Err(SynthError::Parameter(format!("kernel size must be odd, got {size}")));
    }
    let c = (size / 2) as f64;
    let hi = (size - 1) as f64;
    let mut w = vec![0.0; size * size];
    for (index, p) in points.iter().enumerate() {
        let (gx, gy) = (c + p[0], c + p[1]);
        if !(0.0..=hi).contains(&gx) || !(0.0..=hi).contains(&gy) {
            return Err(SynthError::OutOfKernel {
                index,
                x: p[0],
                y: p[1],
                size,
            });
        }
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        w[y0 * size + x0] += (1.0 - fx) * (1.0 - fy);
        if fx > 0.0 {
            w[y0 * size + x0 + 1] += fx * (1.0 - fy);
        }
        if fy > 0.0 {
            w[(y0 + 1) * size + x0] += (1.0 - fx) * fy;
            if fx > 0.0 {
                w[(y0 + 1) * size + x0 + 1] += fx * fy;
            }
        }
    }
    Psf::normalized(size, w)
}

/// Bilinear splat of each trajectory offset, origin at the kernel center.
pub fn rasterize_psf(trajectory: &Trajectory, size: usize) -> Result<Psf, SynthError> {
    splat(trajectory.points(), size)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseParams {
    pub fn none() -> Self {
        Self { sigma: 0.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    #[default]
    Circular,
    Replicate,
}

/// Direct spatial convolution `psf * image`, no noise and no clamping.
pub fn convolve(image: &Image, psf: &Psf, boundary: Boundary) -> Result<Image, SynthError> {
    let (h, w) = (image.height(), image.width());
    if psf.size() > h || psf.size() > w {
        return Err(SynthError::Dimension(format!(
            "{0}x{0} kernel does not fit a {h}x{w} image",
            psf.size()
        )));
    }
    let k = psf.size();
    let rad = psf.radius() as isize;
    let taps: Vec<(isize, isize, f64)> = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .filter_map(|(i, j)| {
            let wgt = psf.get(i, j);
            (wgt != 0.0).then_some((i as isize - rad, j as isize - rad, wgt))
        })
        .collect();
    let (hi, wi) = (h as isize, w as isize);
    let src = image.data();
    let mut out = vec![0.0; h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(r, row)| {
        for (c, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for &(dy, dx, wgt) in &taps {
                let (sr, sc) = (r as isize - dy, c as isize - dx);
                let (sr, sc) = match boundary {
                    Boundary::Circular => (sr.rem_euclid(hi), sc.rem_euclid(wi)),
                    Boundary::Replicate => (sr.clamp(0, hi - 1), sc.clamp(0, wi - 1)),
                };
                acc += wgt * src[sr as usize * w + sc as usize];
            }
            *o = acc;
        }
    });
    Ok(Image::new(h, w, out).expect("shape preserved"))
}

pub fn add_gaussian_noise(image: &Image, noise: &NoiseParams) -> Image {
    if noise.sigma == 0.0 {
        return image.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let mut out = image.clone();
    for v in out.data_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += noise.sigma * z;
    }
    out
}

/// `clamp(psf * image + noise, 0, 1)`.
pub fn apply_motion_blur(
    image: &Image,
    psf: &Psf,
    noise: &NoiseParams,
    boundary: Boundary,
) -> Result<Image, SynthError> {
    if !(noise.sigma >= 0.0) {
        return Err(SynthError::Parameter(format!("noise sigma must be >= 0, got {}", noise.sigma)));
    }
    let blurred = convolve(image, psf, boundary)?;
    Ok(add_gaussian_noise(&blurred, noise).clamped())
}

/// Mean of circularly shifted copies of `image`, one per trajectory offset.
///
/// Each copy is a bilinear resample so that its content moves by the offset.
pub fn blur_by_frame_average(image: &Image, trajectory: &Trajectory) -> Result<Image, SynthError> {
    let (h, w) = (image.height(), image.width());
    let limit = ((h.min(w) - 1) / 2) as f64;
    if let Some((index, p)) = trajectory
        .points()
        .iter()
        .enumerate()
        .find(|(_, p)| p[0].abs() > limit || p[1].abs() > limit)
    {
        return Err(SynthError::OutOfKernel {
            index,
            x: p[0],
            y: p[1],
            size: 2 * limit as usize + 1,
        });
    }
    let mut acc = vec![0.0; h * w];
    let (hi, wi) = (h as isize, w as isize);
    let src = image.data();
    for p in trajectory.points() {
        // shifted(r, c) = image(r - dy, c - dx), sampled bilinearly with wrap
        let sy = -p[1];
        let sx = -p[0];
        let (y0, x0) = (sy.floor(), sx.floor());
        let (fy, fx) = (sy - y0, sx - x0);
        let (y0, x0) = (y0 as isize, x0 as isize);
        let taps = [
            (0, 0, (1.0 - fy) * (1.0 - fx)),
            (0, 1, (1.0 - fy) * fx),
            (1, 0, fy * (1.0 - fx)),
            (1, 1, fy * fx),
        ];
        for r in 0..h {
            for c in 0..w {
                let mut v = 0.0;
                for &(oy, ox, wgt) in &taps {
                    if wgt == 0.0 {
                        continue;
                    }
                    let sr = (r as isize + y0 + oy).rem_euclid(hi) as usize;
                    let sc = (c as isize + x0 + ox).rem_euclid(wi) as usize;
                    v += wgt * src[sr * w + sc];
                }
                acc[r * w + c] += v;
            }
        }
    }
    let n = trajectory.len() as f64;
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(Image::new(h, w, acc).expect("shape preserved"))
}

/// Batch synthesis settings.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub trajectory: TrajectoryParams,
    pub kernel_size: usize,
    pub noise_sigma: f64,
    pub count_per_image: usize,
    pub base_seed: u64,
    pub boundary: Boundary,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            trajectory: TrajectoryParams::default(),
            kernel_size: 21,
            noise_sigma: 0.01,
            count_per_image: 1,
            base_seed: 0,
            boundary: Boundary::Circular,
        }
    }
}

/// Derives the noise stream seed from a pair seed (SplitMix64 finalizer).
pub fn noise_seed(pair_seed: u64) -> u64 {
    let mut z = pair_seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One synthetic degradation of `sharp`, fully determined by `pair_seed`.
pub fn synthesize_pair(sharp: &Image, config: &SynthConfig, pair_seed: u64) -> Result<(Image, Psf), SynthError> {
    let traj = generate_trajectory(&config.trajectory, pair_seed)?;
    let half = (config.kernel_size / 2) as f64;
    let psf = rasterize_psf(&traj.fitted(half), config.kernel_size)?;
    let noise = NoiseParams {
        sigma: config.noise_sigma,
        seed: noise_seed(pair_seed),
    };
    let blurred = apply_motion_blur(sharp, &psf, &noise, config.boundary)?;
    Ok((blurred, psf))
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>, SynthError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && ImageFormat::from_path(p).is_ok())
        .collect();
    files.sort();
    Ok(files)
}

/// Blurs every image in `input_dir` `count_per_image` times and writes
/// `sharp/`, `blur/`, `psf/` and `manifest.jsonl` under `output_dir`.
///
/// Pair `k` (input index `i`, copy `j`, `k = i * count + j`) uses seed
/// `base_seed ^ k`.
pub fn synth_dataset(input_dir: &Path, output_dir: &Path, config: &SynthConfig) -> Result<Manifest, SynthError> {
    config.trajectory.validate()?;
    if config.kernel_size % 2 == 0 {
        return Err(SynthError::Parameter(format!(
            "kernel size must be odd, got {}",
            config.kernel_size
        )));
    }
    if config.count_per_image == 0 {
        return Err(SynthError::Parameter("count per image must be >= 1".into()));
    }
    let files = list_images(input_dir)?;
    if files.is_empty() {
        return Err(SynthError::EmptyInput(input_dir.display().to_string()));
    }
    for sub in ["sharp", "blur", "psf"] {
        let d = output_dir.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }

    let per_file: Vec<Option<Vec<ManifestRecord>>> = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| -> Result<Option<Vec<ManifestRecord>>, SynthError> {
            let sharp = match read_image(path) {
                Ok(img) => img,
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    return Ok(None);
                }
            };
            let stem = path.file_stem().unwrap_or_default().to_string_lossy();
            let base = format!("{i:04}_{stem}");
            let sharp_rel = format!("sharp/{base}.png");
            write_image(&output_dir.join(&sharp_rel), &sharp.clamped())?;
            let mut records = Vec::with_capacity(config.count_per_image);
            for j in 0..config.count_per_image {
                let pair_index = (i * config.count_per_image + j) as u64;
                let seed = config.base_seed ^ pair_index;
                let (blurred, psf) = synthesize_pair(&sharp, config, seed)?;
                let blur_rel = format!("blur/{base}_{j:03}.png");
                let psf_rel = format!("psf/{base}_{j:03}.psf");
                write_image(&output_dir.join(&blur_rel), &blurred)?;
                psf.write(&output_dir.join(&psf_rel))?;
                records.push(ManifestRecord {
                    sharp_path: sharp_rel.clone(),
                    blur_path: blur_rel,
                    restored_path: None,
                    psf_path: Some(psf_rel),
                    seed,
                });
            }
            Ok(Some(records))
        })
        .collect::<Result<_, _>>()?;

    let records: Vec<ManifestRecord> = per_file.into_iter().flatten().flatten().collect();
    if records.is_empty() {
        return Err(SynthError::EmptyInput(input_dir.display().to_string()));
    }
    let manifest = Manifest::new(output_dir.to_path_buf(), records);
    let path = output_dir.join("manifest.jsonl");
    manifest.write(&path).map_err(|e| SynthError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })?;
    info!("wrote {} pairs to {}", manifest.records.len(), output_dir.display());
    Ok(manifest)
}
