//! Fourier-domain machinery and the segmented-acquisition artifact simulator.
//!
//! Transforms are unitary: both directions scale by `1/sqrt(H*W)`, so
//! Parseval holds exactly and the convolution theorem picks up a factor of
//! `sqrt(H*W)`.
//!
//! Segmented acquisition: k-space rows are filled over `N` cardiac cycles.
//! If the anatomy sits at a different offset in each cycle, the rows taken
//! from that cycle carry the phase ramp of that offset, and the mixed k-space
//! reconstructs to a ghosted image.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::image::Image;
use crate::synth::Psf;

#[derive(Debug, Error)]
pub enum KSpaceError {
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("dimension error: {0}")]
    Dimension(String),
}

/// Complex 2-D grid in row-major order, DC at index (0, 0).
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceGrid {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl KSpaceGrid {
    pub fn new(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self, KSpaceError> {
        if data.len() != height * width {
            return Err(KSpaceError::Dimension(format!(
                "{} samples do not fill a {height}x{width} grid",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn from_real(height: usize, width: usize, values: &[f64]) -> Result<Self, KSpaceError> {
        Self::new(height, width, values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[Complex64] {
        &self.data[row * self.width..(row + 1) * self.width]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn real(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }

    /// Magnitude image clamped to `[0, 1]`.
    pub fn magnitude_image(&self) -> Image {
        Image::new(
            self.height,
            self.width,
            self.data.iter().map(|z| z.norm().clamp(0.0, 1.0)).collect(),
        )
        .expect("shape preserved")
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scale(&self, s: Complex64) -> KSpaceGrid {
        KSpaceGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &KSpaceGrid) -> KSpaceGrid {
        assert_eq!((self.height, self.width), (other.height, other.width));
        KSpaceGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }
}

struct Plans {
    rows: Arc<dyn Fft<f64>>,
    cols: Arc<dyn Fft<f64>>,
}

fn plans(height: usize, width: usize, inverse: bool) -> Plans {
    let mut planner = FftPlanner::new();
    if inverse {
        Plans {
            rows: planner.plan_fft_inverse(width),
            cols: planner.plan_fft_inverse(height),
        }
    } else {
        Plans {
            rows: planner.plan_fft_forward(width),
            cols: planner.plan_fft_forward(height),
        }
    }
}

fn transform(grid: &mut KSpaceGrid, inverse: bool) {
    let (h, w) = (grid.height, grid.width);
    if h == 0 || w == 0 {
        return;
    }
    let p = plans(h, w, inverse);
    grid.data
        .par_chunks_mut(w)
        .for_each(|row| p.rows.process(row));
    // columns via transpose
    let mut t = vec![Complex64::new(0.0, 0.0); h * w];
    for r in 0..h {
        for c in 0..w {
            t[c * h + r] = grid.data[r * w + c];
        }
    }
    t.par_chunks_mut(h).for_each(|col| p.cols.process(col));
    let s = 1.0 / ((h * w) as f64).sqrt();
    for r in 0..h {
        for c in 0..w {
            grid.data[r * w + c] = t[c * h + r] * s;
        }
    }
}

/// Unitary 2-D DFT of a real grid.
pub fn fft2(image: &Image) -> KSpaceGrid {
    let mut g = KSpaceGrid::from_real(image.height(), image.width(), image.data()).expect("shape");
    transform(&mut g, false);
    g
}

/// Unitary 2-D DFT of a complex grid.
pub fn fft2_complex(grid: &KSpaceGrid) -> KSpaceGrid {
    let mut g = grid.clone();
    transform(&mut g, false);
    g
}

/// Inverse of [`fft2`] under the same normalization.
pub fn ifft2(grid: &KSpaceGrid) -> KSpaceGrid {
    let mut g = grid.clone();
    transform(&mut g, true);
    g
}

/// Signed frequency index of bin `k` for an axis of length `n`.
#[inline]
fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Multiplies bin (v, u) by `exp(-2*pi*i*(u*dx/W + v*dy/H))`.
///
/// By the shift theorem the image content moves `dx` columns right and `dy`
/// rows down (circularly). Frequencies are taken in signed form, which
/// matters only for fractional shifts.
pub fn phase_ramp(grid: &KSpaceGrid, shift: (f64, f64)) -> KSpaceGrid {
    let mut out = grid.clone();
    for r in 0..grid.height {
        apply_row_ramp(&mut out.data[r * grid.width..(r + 1) * grid.width], r, grid.height, shift);
    }
    out
}

fn apply_row_ramp(row: &mut [Complex64], r: usize, height: usize, (dx, dy): (f64, f64)) {
    let w = row.len();
    let v = signed_freq(r, height);
    for (u, z) in row.iter_mut().enumerate() {
        let phase = -2.0 * std::f64::consts::PI * (signed_freq(u, w) * dx / w as f64 + v * dy / height as f64);
        *z *= Complex64::from_polar(1.0, phase);
    }
}

/// Which cycle fills each k-space row, and where the anatomy sat in each cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct AcquisitionSchedule {
    pub n_cycles: usize,
    pub m_segments: usize,
    /// `row_assignment[r]` is the cycle that acquired k-space row `r`.
    pub row_assignment: Vec<usize>,
    /// Per-cycle (dx, dy) in pixels.
    pub displacements: Vec<(f64, f64)>,
}

impl AcquisitionSchedule {
    pub fn validate(&self, height: usize) -> Result<(), KSpaceError> {
        if self.displacements.len() != self.n_cycles {
            return Err(KSpaceError::Schedule(format!(
                "{} displacements for {} cycles",
                self.displacements.len(),
                self.n_cycles
            )));
        }
        if self.row_assignment.len() < height {
            return Err(KSpaceError::Schedule(format!(
                "row {} is not covered by the schedule",
                self.row_assignment.len()
            )));
        }
        if self.row_assignment.len() > height {
            return Err(KSpaceError::Schedule(format!(
                "schedule covers {} rows but the image has {height}",
                self.row_assignment.len()
            )));
        }
        if let Some((r, &n)) = self
            .row_assignment
            .iter()
            .enumerate()
            .find(|(_, &n)| n >= self.n_cycles)
        {
            return Err(KSpaceError::Schedule(format!(
                "row {r} assigned to cycle {n}, but only {} cycles exist",
                self.n_cycles
            )));
        }
        if let Some(d) = self
            .displacements
            .iter()
            .find(|d| !d.0.is_finite() || !d.1.is_finite())
        {
            return Err(KSpaceError::Schedule(format!("non-finite displacement {d:?}")));
        }
        Ok(())
    }
}

/// Row `r` goes to cycle `r mod n_cycles`; each cycle gets an integer
/// displacement drawn uniformly from `[-max_shift, max_shift]` along the
/// unit `drift_axis` (x, y).
pub fn make_interleaved_schedule_along(
    height: usize,
    n_cycles: usize,
    max_shift: f64,
    drift_axis: [f64; 2],
    seed: u64,
) -> Result<AcquisitionSchedule, KSpaceError> {
    if n_cycles == 0 || n_cycles > height {
        return Err(KSpaceError::Schedule(format!(
            "{n_cycles} cycles cannot share {height} rows"
        )));
    }
    if !(max_shift >= 0.0) {
        return Err(KSpaceError::Schedule(format!("max shift must be >= 0, got {max_shift}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = max_shift.floor() as i64;
    let displacements = (0..n_cycles)
        .map(|_| {
            let s = if m > 0 { rng.random_range(-m..=m) as f64 } else { 0.0 };
            (s * drift_axis[0], s * drift_axis[1])
        })
        .collect();
    Ok(AcquisitionSchedule {
        n_cycles,
        m_segments: 1,
        row_assignment: (0..height).map(|r| r % n_cycles).collect(),
        displacements,
    })
}

/// [`make_interleaved_schedule_along`] with vertical (diaphragm) drift.
pub fn make_interleaved_schedule(
    height: usize,
    n_cycles: usize,
    max_shift: f64,
    seed: u64,
) -> Result<AcquisitionSchedule, KSpaceError> {
    make_interleaved_schedule_along(height, n_cycles, max_shift, [0.0, 1.0], seed)
}

/// Reconstructs the image seen when each k-space row comes from the cycle the
/// schedule assigns it to. Returns the clamped magnitude image.
pub fn simulate_segmented_acquisition(image: &Image, schedule: &AcquisitionSchedule) -> Result<Image, KSpaceError> {
    schedule.validate(image.height())?;
    let base = fft2(image);
    let mut composite = base.clone();
    let (h, w) = (image.height(), image.width());
    composite
        .data
        .par_chunks_mut(w)
        .enumerate()
        .for_each(|(r, row)| {
            let d = schedule.displacements[schedule.row_assignment[r]];
            if d != (0.0, 0.0) {
                apply_row_ramp(row, r, h, d);
            }
        });
    Ok(ifft2(&composite).magnitude_image())
}

/// Kernel embedded in an `h` x `w` grid with its center at (0, 0), wrapped.
pub fn embed_psf(psf: &Psf, height: usize, width: usize) -> Result<Vec<f64>, KSpaceError> {
    if psf.size() > height || psf.size() > width {
        return Err(KSpaceError::Dimension(format!(
            "{0}x{0} kernel does not fit {height}x{width}",
            psf.size()
        )));
    }
    let rad = psf.radius() as isize;
    let mut out = vec![0.0; height * width];
    for i in 0..psf.size() {
        for j in 0..psf.size() {
            let r = (i as isize - rad).rem_euclid(height as isize) as usize;
            let c = (j as isize - rad).rem_euclid(width as isize) as usize;
            out[r * width + c] += psf.get(i, j);
        }
    }
    Ok(out)
}

/// Transfer function `sqrt(H*W) * fft2(embedded psf)`; multiplying a unitary
/// spectrum by it performs circular convolution.
pub fn transfer_function(psf: &Psf, height: usize, width: usize) -> Result<KSpaceGrid, KSpaceError> {
    let embedded = embed_psf(psf, height, width)?;
    let g = fft2(&Image::new(height, width, embedded).expect("shape"));
    Ok(g.scale(Complex64::new(((height * width) as f64).sqrt(), 0.0)))
}

/// Circular convolution through the Fourier domain (real part of the result).
pub fn fourier_convolve(image: &Image, psf: &Psf) -> Result<Image, KSpaceError> {
    let tf = transfer_function(psf, image.height(), image.width())?;
    Ok(multiply_spectrum(image, &tf, false))
}

/// `ifft2(fft2(image) * tf)` (or `conj(tf)` for correlation), real part.
pub fn multiply_spectrum(image: &Image, tf: &KSpaceGrid, conjugate: bool) -> Image {
    let mut spec = fft2(image);
    for (z, t) in spec.data.iter_mut().zip(&tf.data) {
        *z *= if conjugate { t.conj() } else { *t };
    }
    Image::new(image.height(), image.width(), ifft2(&spec).real()).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{convolve, generate_trajectory, rasterize_psf, Boundary, TrajectoryParams};

    fn rand_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    /// O(n^4) DFT straight from the definition.
    fn naive_dft(img: &Image) -> Vec<Complex64> {
        let (h, w) = (img.height(), img.width());
        let mut out = vec![Complex64::new(0.0, 0.0); h * w];
        for v in 0..h {
            for u in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..h {
                    for x in 0..w {
                        let ph = -2.0 * std::f64::consts::PI * ((u * x) as f64 / w as f64 + (v * y) as f64 / h as f64);
                        acc += Complex64::from_polar(img.get(y, x), ph);
                    }
                }
                out[v * w + u] = acc / ((h * w) as f64).sqrt();
            }
        }
        out
    }

    #[test]
    fn matches_naive_dft() {
        let img = rand_image(5, 6, 1);
        let fast = fft2(&img);
        for (a, b) in fast.data().iter().zip(naive_dft(&img)) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn constant_concentrates_at_dc() {
        let img = Image::filled(6, 10, 0.4);
        let g = fft2(&img);
        assert!((g.get(0, 0).re - 0.4 * 60f64.sqrt()).abs() < 1e-12);
        assert!(g.data()[1..].iter().all(|z| z.norm() < 1e-12));
    }

    #[test]
    fn dc_delta_inverts_to_constant() {
        let mut g = KSpaceGrid::zeros(4, 5);
        g.data_mut()[0] = Complex64::new(20f64.sqrt(), 0.0);
        let back = ifft2(&g);
        assert!(back.data().iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn inverse_is_linear() {
        let x = fft2(&rand_image(7, 9, 2));
        let y = fft2(&rand_image(7, 9, 3));
        let (a, b) = (Complex64::new(0.3, -1.2), Complex64::new(2.0, 0.5));
        let lhs = ifft2(&x.scale(a).add(&y.scale(b)));
        let rhs = ifft2(&x).scale(a).add(&ifft2(&y).scale(b));
        for (p, q) in lhs.data().iter().zip(rhs.data()) {
            assert!((p - q).norm() < 1e-10);
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        for &h in &[1usize, 2, 3, 8, 17, 64] {
            for &w in &[1usize, 3, 17, 64] {
                let img = rand_image(h, w, (h * 100 + w) as u64);
                let g = fft2(&img);
                let back = ifft2(&g);
                for (z, &x) in back.data().iter().zip(img.data()) {
                    assert!((z.re - x).abs() < 1e-10 && z.im.abs() < 1e-10);
                }
                let e: f64 = img.data().iter().map(|v| v * v).sum();
                assert!((g.energy() - e).abs() <= 1e-10 * e);
            }
        }
    }

    #[test]
    fn zero_shift_ramp_is_identity() {
        let g = fft2(&rand_image(8, 8, 4));
        assert_eq!(phase_ramp(&g, (0.0, 0.0)), g);
    }

    #[test]
    fn unit_ramp_is_circular_column_shift() {
        let img = rand_image(6, 10, 5);
        let shifted = ifft2(&phase_ramp(&fft2(&img), (1.0, 0.0)));
        let expect = img.roll(0, 1);
        for (z, &x) in shifted.data().iter().zip(expect.data()) {
            assert!((z.re - x).abs() < 1e-9 && z.im.abs() < 1e-9);
        }
        let down = ifft2(&phase_ramp(&fft2(&img), (0.0, -2.0)));
        let expect = img.roll(-2, 0);
        for (z, &x) in down.data().iter().zip(expect.data()) {
            assert!((z.re - x).abs() < 1e-9);
        }
    }

    #[test]
    fn ramp_preserves_magnitudes() {
        let g = fft2(&rand_image(9, 7, 6));
        let s = phase_ramp(&g, (0.37, -2.6));
        for (a, b) in g.data().iter().zip(s.data()) {
            assert!((a.norm() - b.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn still_acquisition_is_identity() {
        let img = rand_image(16, 12, 7);
        for n in [1usize, 2, 5, 16] {
            let mut s = make_interleaved_schedule(16, n, 0.0, 1).unwrap();
            s.displacements.iter_mut().for_each(|d| *d = (0.0, 0.0));
            let out = simulate_segmented_acquisition(&img, &s).unwrap();
            assert!(out.max_abs_diff(&img) < 1e-9);
        }
    }

    #[test]
    fn single_cycle_shift() {
        let img = rand_image(16, 16, 8);
        let s = AcquisitionSchedule {
            n_cycles: 1,
            m_segments: 1,
            row_assignment: vec![0; 16],
            displacements: vec![(3.0, 0.0)],
        };
        let out = simulate_segmented_acquisition(&img, &s).unwrap();
        assert!(out.max_abs_diff(&img.roll(0, 3)) < 1e-9);
    }

    #[test]
    fn equal_displacements_ignore_assignment() {
        let img = rand_image(12, 12, 9);
        let d = (1.0, -2.0);
        let a = AcquisitionSchedule {
            n_cycles: 3,
            m_segments: 1,
            row_assignment: (0..12).map(|r| r % 3).collect(),
            displacements: vec![d; 3],
        };
        let b = AcquisitionSchedule {
            row_assignment: (0..12).map(|r| (r * 7 + 1) % 3).collect(),
            ..a.clone()
        };
        let oa = simulate_segmented_acquisition(&img, &a).unwrap();
        let ob = simulate_segmented_acquisition(&img, &b).unwrap();
        assert!(oa.max_abs_diff(&ob) < 1e-9);
    }

    #[test]
    fn schedule_errors() {
        let img = rand_image(4, 4, 1);
        let s = AcquisitionSchedule {
            n_cycles: 2,
            m_segments: 1,
            row_assignment: vec![0, 1, 0],
            displacements: vec![(0.0, 0.0); 2],
        };
        match simulate_segmented_acquisition(&img, &s) {
            Err(KSpaceError::Schedule(m)) => assert!(m.contains("row 3"), "{m}"),
            other => panic!("expected schedule error, got {other:?}"),
        }
        let s = AcquisitionSchedule {
            row_assignment: vec![0, 1, 2, 0],
            ..s
        };
        assert!(simulate_segmented_acquisition(&img, &s).is_err());
        assert!(make_interleaved_schedule(4, 5, 1.0, 0).is_err());
    }

    #[test]
    fn interleaved_schedule_layout() {
        let s = make_interleaved_schedule(8, 1, 3.0, 0).unwrap();
        assert!(s.row_assignment.iter().all(|&n| n == 0));
        let s = make_interleaved_schedule(8, 4, 3.0, 0).unwrap();
        for n in 0..4 {
            assert_eq!(s.row_assignment.iter().filter(|&&k| k == n).count(), 2);
        }
        assert_eq!(s, make_interleaved_schedule(8, 4, 3.0, 0).unwrap());
        for d in &s.displacements {
            assert_eq!(d.0, 0.0);
            assert!(d.1.abs() <= 3.0 && d.1.fract() == 0.0);
        }
    }

    #[test]
    fn convolution_theorem() {
        let img = rand_image(32, 24, 10);
        let t = generate_trajectory(&TrajectoryParams::default(), 3).unwrap().fitted(4.0);
        let psf = rasterize_psf(&t, 9).unwrap();
        let spatial = convolve(&img, &psf, Boundary::Circular).unwrap();
        let fourier = fourier_convolve(&img, &psf).unwrap();
        assert!(spatial.max_abs_diff(&fourier) < 1e-8);
        // explicit form
        let lhs = fft2(&spatial);
        let rhs_psf = fft2(&Image::new(32, 24, embed_psf(&psf, 32, 24).unwrap()).unwrap());
        let x = fft2(&img);
        let scale = (32.0f64 * 24.0).sqrt();
        for i in 0..lhs.data().len() {
            assert!((lhs.data()[i] - x.data()[i] * rhs_psf.data()[i] * scale).norm() < 1e-8);
        }
    }
}
