//! Synthetic test phantoms: disks, rings and random shape scenes on a black background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

fn center(size: usize) -> f64 {
    (size as f64 - 1.0) / 2.0
}

/// Centered filled disk of the given radius.
pub fn disk_phantom(size: usize, radius: f64, intensity: f64) -> Image {
    let c = center(size);
    Image::from_fn(size, size, |r, col| {
        if (r as f64 - c).hypot(col as f64 - c) <= radius {
            intensity
        } else {
            0.0
        }
    })
}

/// Centered annulus `inner <= d <= outer`.
pub fn ring_phantom(size: usize, inner: f64, outer: f64, intensity: f64) -> Image {
    let c = center(size);
    Image::from_fn(size, size, |r, col| {
        let d = (r as f64 - c).hypot(col as f64 - c);
        if (inner..=outer).contains(&d) {
            intensity
        } else {
            0.0
        }
    })
}

/// Disk or ring `index` of a fixed family of ten, varied in size, thickness and contrast.
pub fn disk_ring_family(size: usize, index: usize) -> Image {
    let s = size as f64;
    let k = index as f64;
    if index % 2 == 0 {
        disk_phantom(size, s * (0.18 + 0.03 * k / 2.0), 0.6 + 0.08 * (k / 2.0))
    } else {
        let outer = s * (0.22 + 0.025 * (k - 1.0) / 2.0);
        ring_phantom(size, outer - 3.0 - (k - 1.0) / 2.0, outer, 0.55 + 0.09 * ((k - 1.0) / 2.0))
    }
}

/// A few random ellipses, rectangles and rings painted over each other,
/// loosely mimicking cardiac anatomy on a black field.
pub fn shapes_phantom(size: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let mut img = Image::zeros(size, size);
    let n_shapes = rng.random_range(2..=5);
    for _ in 0..n_shapes {
        let cy = rng.random_range(0.2 * s..0.8 * s);
        let cx = rng.random_range(0.2 * s..0.8 * s);
        let a = rng.random_range(0.06 * s..0.25 * s);
        let b = rng.random_range(0.06 * s..0.25 * s);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let value = rng.random_range(0.3..1.0);
        let kind = rng.random_range(0..3);
        let thickness = rng.random_range(0.25..0.6);
        let (sin, cos) = theta.sin_cos();
        for r in 0..size {
            for c in 0..size {
                let (dy, dx) = (r as f64 - cy, c as f64 - cx);
                let u = (cos * dx + sin * dy) / a;
                let v = (-sin * dx + cos * dy) / b;
                let inside = match kind {
                    0 => u * u + v * v <= 1.0,
                    1 => u.abs() <= 1.0 && v.abs() <= 1.0,
                    _ => {
                        let d = (u * u + v * v).sqrt();
                        d <= 1.0 && d >= 1.0 - thickness
                    }
                };
                if inside {
                    img.set(r, c, value);
                }
            }
        }
    }
    img
}
