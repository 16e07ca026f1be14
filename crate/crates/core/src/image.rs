//! Single-channel images, PGM/PNG codecs, cropping and rigid augmentation.
//!
//! Every image in the toolkit is a row-major grid of `f64` intensities that
//! are nominally in `[0, 1]`. Decoding divides integer samples by the format's
//! maximum value; encoding always writes 8-bit samples with round-half-up
//! quantization.

use std::cell::Cell;
use std::fs;
use std::io::{self, BufRead, Cursor, Read, Seek, SeekFrom};
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Values this far outside `[0, 1]` are clamped silently by the encoder.
pub const ENCODE_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("decode error at byte {offset}: {message}")]
    Decode { offset: usize, message: String },
    #[error("unsupported image format: {0}")]
    Unsupported(String),
    #[error("pixel ({row}, {col}) has value {value} outside [0, 1]")]
    Range { row: usize, col: usize, value: f64 },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// A single-channel 2-D image in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self, ImageError> {
        if data.len() != height * width {
            return Err(ImageError::Dimension(format!(
                "{} samples do not fill a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamped(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other), "shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Circular shift: content moves `dy` rows down and `dx` columns right.
    pub fn roll(&self, dy: isize, dx: isize) -> Image {
        let (h, w) = (self.height as isize, self.width as isize);
        Image::from_fn(self.height, self.width, |r, c| {
            let sr = (r as isize - dy).rem_euclid(h) as usize;
            let sc = (c as isize - dx).rem_euclid(w) as usize;
            self.get(sr, sc)
        })
    }

    /// Rectangular sub-image starting at (`top`, `left`).
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Image, ImageError> {
        if top + height > self.height || left + width > self.width {
            return Err(ImageError::Dimension(format!(
                "crop {height}x{width} at ({top}, {left}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(height, width, |r, c| self.get(top + r, left + c)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    pub fn from_path(path: &Path) -> Result<Self, ImageError> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("pgm") => Ok(ImageFormat::Pgm),
            Some("png") => Ok(ImageFormat::Png),
            _ => Err(ImageError::Unsupported(format!(
                "cannot infer format from {}",
                path.display()
            ))),
        }
    }
}

pub fn decode_image(bytes: &[u8], format: ImageFormat) -> Result<Image, ImageError> {
    match format {
        ImageFormat::Pgm => decode_pgm(bytes),
        ImageFormat::Png => decode_png(bytes),
    }
}

pub fn encode_image(image: &Image, format: ImageFormat) -> Result<Vec<u8>, ImageError> {
    let samples = quantize_u8(image)?;
    match format {
        ImageFormat::Pgm => {
            let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
            out.extend_from_slice(&samples);
            Ok(out)
        }
        ImageFormat::Png => {
            let mut out = Vec::new();
            let mut encoder = png::Encoder::new(&mut out, image.width as u32, image.height as u32);
            encoder.set_color(png::ColorType::Grayscale);
            encoder.set_depth(png::BitDepth::Eight);
            let mut writer = encoder
                .write_header()
                .map_err(|e| ImageError::Unsupported(e.to_string()))?;
            writer
                .write_image_data(&samples)
                .map_err(|e| ImageError::Unsupported(e.to_string()))?;
            writer
                .finish()
                .map_err(|e| ImageError::Unsupported(e.to_string()))?;
            Ok(out)
        }
    }
}

fn quantize_u8(image: &Image) -> Result<Vec<u8>, ImageError> {
    image
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !(-ENCODE_SLACK..=1.0 + ENCODE_SLACK).contains(&v) {
                return Err(ImageError::Range {
                    row: i / image.width,
                    col: i % image.width,
                    value: v,
                });
            }
            // round half up
            Ok((v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8)
        })
        .collect()
}

pub fn read_image(path: &Path) -> Result<Image, ImageError> {
    let format = ImageFormat::from_path(path)?;
    let bytes = fs::read(path).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_image(&bytes, format)
}

/// Encodes and writes atomically (temporary sibling file, then rename).
pub fn write_image(path: &Path, image: &Image) -> Result<(), ImageError> {
    let format = ImageFormat::from_path(path)?;
    let bytes = encode_image(image, format)?;
    crate::write_atomic(path, &bytes).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn decode_pgm(bytes: &[u8]) -> Result<Image, ImageError> {
    let err = |offset: usize, message: &str| ImageError::Decode {
        offset,
        message: message.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1] == b'6' {
            return Err(ImageError::Unsupported("color PPM (P6)".into()));
        }
        return Err(err(0, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(err(pos, "truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "expected a decimal header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, "header field out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err(pos, "expected a single whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(err(pos, "zero image dimension"));
    }
    let bytes_per_sample = match maxval {
        255 => 1,
        65535 => 2,
        _ => {
            return Err(ImageError::Unsupported(format!(
                "PGM maxval {maxval} (only 255 and 65535 are accepted)"
            )))
        }
    };
    let needed = width * height * bytes_per_sample;
    let payload = &bytes[pos..];
    if payload.len() < needed {
        return Err(err(bytes.len(), "truncated pixel payload"));
    }
    let data = if bytes_per_sample == 1 {
        payload[..needed].iter().map(|&b| b as f64 / 255.0).collect()
    } else {
        payload[..needed]
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 / 65535.0)
            .collect()
    };
    Image::new(height, width, data)
}

/// Cursor that publishes its position so decode errors can report an offset.
struct TrackedCursor<'a> {
    inner: Cursor<&'a [u8]>,
    pos: Rc<Cell<u64>>,
}

impl Read for TrackedCursor<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.pos.set(self.inner.position());
        Ok(n)
    }
}

impl BufRead for TrackedCursor<'_> {
    fn fill_buf(&mut self) -> io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        self.inner.consume(amt);
        self.pos.set(self.inner.position());
    }
}

impl Seek for TrackedCursor<'_> {
    fn seek(&mut self, pos: SeekFrom) -> io::Result<u64> {
        let p = self.inner.seek(pos)?;
        self.pos.set(p);
        Ok(p)
    }
}

fn decode_png(bytes: &[u8]) -> Result<Image, ImageError> {
    let pos = Rc::new(Cell::new(0u64));
    let cursor = TrackedCursor {
        inner: Cursor::new(bytes),
        pos: Rc::clone(&pos),
    };
    let decode_err = |e: png::DecodingError| ImageError::Decode {
        offset: pos.get() as usize,
        message: e.to_string(),
    };
    let mut decoder = png::Decoder::new(cursor);
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let (color, depth) = {
        let info = reader.info();
        (info.color_type, info.bit_depth)
    };
    if color != png::ColorType::Grayscale {
        return Err(ImageError::Unsupported(format!(
            "PNG color type {color:?}; only single-channel grayscale is accepted"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| ImageError::Unsupported("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let data: Vec<f64> = match depth {
        png::BitDepth::Eight => (0..height)
            .flat_map(|r| {
                let row = &buf[r * frame.line_size..r * frame.line_size + width];
                row.iter().map(|&b| b as f64 / 255.0)
            })
            .collect(),
        png::BitDepth::Sixteen => (0..height)
            .flat_map(|r| {
                let row = &buf[r * frame.line_size..r * frame.line_size + 2 * width];
                row.chunks_exact(2)
                    .map(|p| u16::from_be_bytes([p[0], p[1]]) as f64 / 65535.0)
            })
            .collect(),
        other => {
            return Err(ImageError::Unsupported(format!(
                "PNG bit depth {other:?}; only 8 and 16 are accepted"
            )))
        }
    };
    Image::new(height, width, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Center,
    Random { seed: u64 },
}

/// Crops to `crop_size` x `crop_size` and clamps intensities into `[0, 1]`.
pub fn preprocess(image: &Image, crop_size: usize, mode: CropMode) -> Result<Image, ImageError> {
    if crop_size == 0 || crop_size > image.height.min(image.width) {
        return Err(ImageError::Dimension(format!(
            "crop size {crop_size} does not fit a {}x{} image",
            image.height, image.width
        )));
    }
    let (top, left) = match mode {
        CropMode::Center => (
            (image.height - crop_size) / 2,
            (image.width - crop_size) / 2,
        ),
        CropMode::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (
                rng.random_range(0..=image.height - crop_size),
                rng.random_range(0..=image.width - crop_size),
            )
        }
    };
    Ok(image.crop(top, left, crop_size, crop_size)?.clamped())
}

/// Rigid similarity transform applied about the image center.
///
/// The forward map sends source point `p` to
/// `center + zoom * R(rotation) * (p - center) + (translate_x, translate_y)`,
/// where `R` acts on (column, row) coordinates. With rows pointing down a
/// positive angle turns the image clockwise on screen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidParams {
    pub rotation: f64,
    pub translate_x: f64,
    pub translate_y: f64,
    pub zoom: f64,
}

impl RigidParams {
    pub const IDENTITY: RigidParams = RigidParams {
        rotation: 0.0,
        translate_x: 0.0,
        translate_y: 0.0,
        zoom: 1.0,
    };

    pub fn new(rotation: f64, translate_x: f64, translate_y: f64, zoom: f64) -> Result<Self, ImageError> {
        if !(zoom > 0.0) || !zoom.is_finite() {
            return Err(ImageError::Parameter(format!("zoom must be > 0, got {zoom}")));
        }
        Ok(Self {
            rotation,
            translate_x,
            translate_y,
            zoom,
        })
    }
}

impl Default for RigidParams {
    fn default() -> Self {
        Self::IDENTITY
    }
}

/// Sampling ranges for random augmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentRanges {
    /// Degrees, symmetric.
    pub max_rotation: f64,
    /// Pixels, symmetric, per axis.
    pub max_translate: f64,
    pub zoom_min: f64,
    pub zoom_max: f64,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            max_rotation: 10.0,
            max_translate: 8.0,
            zoom_min: 0.9,
            zoom_max: 1.1,
        }
    }
}

impl AugmentRanges {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RigidParams {
        let sym = |rng: &mut R, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let rotation = sym(rng, self.max_rotation);
        let translate_x = sym(rng, self.max_translate);
        let translate_y = sym(rng, self.max_translate);
        let zoom = if self.zoom_max > self.zoom_min {
            rng.random_range(self.zoom_min..=self.zoom_max)
        } else {
            self.zoom_min
        };
        RigidParams {
            rotation,
            translate_x,
            translate_y,
            zoom,
        }
    }
}

/// Bilinear sample at fractional (row, col); neighbours outside the grid read `fill`.
pub fn sample_bilinear(image: &Image, row: f64, col: f64, fill: f64) -> f64 {
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let (r0, c0) = (r0 as isize, c0 as isize);
    let at = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= image.height as isize || c >= image.width as isize {
            fill
        } else {
            image.get(r as usize, c as usize)
        }
    };
    let mut acc = (1.0 - fr) * (1.0 - fc) * at(r0, c0);
    if fc != 0.0 {
        acc += (1.0 - fr) * fc * at(r0, c0 + 1);
    }
    if fr != 0.0 {
        acc += fr * (1.0 - fc) * at(r0 + 1, c0);
        if fc != 0.0 {
            acc += fr * fc * at(r0 + 1, c0 + 1);
        }
    }
    acc
}

/// Inverse-mapped bilinear resampling under `params`; samples outside the source take `fill`.
pub fn rigid_augment(image: &Image, params: &RigidParams, fill: f64) -> Image {
    let cy = (image.height as f64 - 1.0) / 2.0;
    let cx = (image.width as f64 - 1.0) / 2.0;
    let (sin, cos) = params.rotation.to_radians().sin_cos();
    let inv_zoom = 1.0 / params.zoom;
    let snap = |v: f64| {
        let r = v.round();
        if (v - r).abs() < 1e-9 {
            r
        } else {
            v
        }
    };
    Image::from_fn(image.height, image.width, |r, c| {
        let u = (c as f64 - cx - params.translate_x) * inv_zoom;
        let v = (r as f64 - cy - params.translate_y) * inv_zoom;
        // R(-theta)
        let sx = cx + cos * u + sin * v;
        let sy = cy - sin * u + cos * v;
        sample_bilinear(image, snap(sy), snap(sx), fill)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_blob(n: usize) -> Image {
        let c = (n as f64 - 1.0) / 2.0;
        Image::from_fn(n, n, |r, col| {
            let d2 = (r as f64 - c).powi(2) + (col as f64 - c * 0.8).powi(2);
            0.8 * (-d2 / (2.0 * 6.0f64.powi(2))).exp()
        })
    }

    #[test]
    fn decode_8bit_scaling() {
        let bytes = [b"P5\n3 1\n255\n".as_slice(), &[0u8, 255, 128]].concat();
        let img = decode_image(&bytes, ImageFormat::Pgm).unwrap();
        assert_eq!(img.data()[0], 0.0);
        assert_eq!(img.data()[1], 1.0);
        assert!((img.data()[2] - 128.0 / 255.0).abs() < 1e-15);
        assert!((img.data()[2] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn decode_16bit_pgm() {
        let bytes = [b"P5 2 1 65535\n".as_slice(), &[0xff, 0xff, 0x80, 0x00]].concat();
        let img = decode_image(&bytes, ImageFormat::Pgm).unwrap();
        assert_eq!(img.data()[0], 1.0);
        assert_eq!(img.data()[1], 32768.0 / 65535.0);
    }

    #[test]
    fn pgm_comments_are_skipped() {
        let bytes = [b"P5\n# made by hand\n2 1\n255\n".as_slice(), &[10, 20]].concat();
        let img = decode_image(&bytes, ImageFormat::Pgm).unwrap();
        assert_eq!((img.height(), img.width()), (1, 2));
    }

    #[test]
    fn malformed_pgm_reports_offset() {
        let bytes = b"P5\n4 4\n255\nabc";
        match decode_image(bytes, ImageFormat::Pgm) {
            Err(ImageError::Decode { offset, .. }) => assert_eq!(offset, bytes.len()),
            other => panic!("expected decode error, got {other:?}"),
        }
        match decode_image(b"P5\nx", ImageFormat::Pgm) {
            Err(ImageError::Decode { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("expected decode error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_png_is_decode_error() {
        let img = Image::filled(4, 4, 0.5);
        let mut bytes = encode_image(&img, ImageFormat::Png).unwrap();
        bytes.truncate(bytes.len() - 20);
        assert!(matches!(
            decode_image(&bytes, ImageFormat::Png),
            Err(ImageError::Decode { .. })
        ));
        assert!(matches!(
            decode_image(b"not a png", ImageFormat::Png),
            Err(ImageError::Decode { .. })
        ));
    }

    #[test]
    fn rgb_png_is_rejected() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 2);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0u8; 12]).unwrap();
        }
        assert!(matches!(
            decode_image(&out, ImageFormat::Png),
            Err(ImageError::Unsupported(_))
        ));
    }

    #[test]
    fn sixteen_bit_png_is_scaled() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[0xff, 0xff, 0x00, 0x01]).unwrap();
        }
        let img = decode_image(&out, ImageFormat::Png).unwrap();
        assert_eq!(img.data(), &[1.0, 1.0 / 65535.0]);
    }

    #[test]
    fn encode_quantization() {
        let img = Image::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let bytes = encode_image(&img, ImageFormat::Pgm).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
        let zeros = encode_image(&Image::zeros(2, 2), ImageFormat::Pgm).unwrap();
        assert!(zeros[zeros.len() - 4..].iter().all(|&b| b == 0));
    }

    #[test]
    fn encode_range_error_names_coordinate() {
        let mut img = Image::zeros(3, 3);
        img.set(2, 1, 1.5);
        match encode_image(&img, ImageFormat::Png) {
            Err(ImageError::Range { row, col, .. }) => assert_eq!((row, col), (2, 1)),
            other => panic!("expected range error, got {other:?}"),
        }
        img.set(2, 1, 1.0 + 5e-10);
        assert!(encode_image(&img, ImageFormat::Png).is_ok());
    }

    #[test]
    fn png_round_trip_is_byte_exact() {
        let pixels: Vec<u8> = (0..=255u8).collect();
        let img = Image::new(16, 16, pixels.iter().map(|&b| b as f64 / 255.0).collect()).unwrap();
        for format in [ImageFormat::Png, ImageFormat::Pgm] {
            let bytes = encode_image(&img, format).unwrap();
            let back = decode_image(&bytes, format).unwrap();
            assert_eq!(back, img);
        }
    }

    #[test]
    fn center_crop_selects_middle() {
        let img = Image::from_fn(4, 4, |r, c| (r * 4 + c) as f64 / 15.0);
        let out = preprocess(&img, 2, CropMode::Center).unwrap();
        assert_eq!(out.data(), &[img.get(1, 1), img.get(1, 2), img.get(2, 1), img.get(2, 2)]);
        assert_eq!(preprocess(&img, 4, CropMode::Center).unwrap(), img);
    }

    #[test]
    fn random_crop_is_seeded() {
        let img = Image::from_fn(20, 30, |r, c| ((r * 7 + c * 3) % 11) as f64 / 10.0);
        let a = preprocess(&img, 8, CropMode::Random { seed: 3 }).unwrap();
        let b = preprocess(&img, 8, CropMode::Random { seed: 3 }).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            preprocess(&img, 21, CropMode::Center),
            Err(ImageError::Dimension(_))
        ));
    }

    #[test]
    fn identity_augment_is_exact() {
        let img = gaussian_blob(17);
        assert_eq!(rigid_augment(&img, &RigidParams::IDENTITY, 0.0), img);
    }

    #[test]
    fn quarter_turn_moves_bright_pixel() {
        let n = 9;
        let mut img = Image::zeros(n, n);
        img.set(1, 6, 1.0); // row 1, col 6
        let out = rigid_augment(&img, &RigidParams::new(90.0, 0.0, 0.0, 1.0).unwrap(), 0.0);
        // (col, row) relative to center 4: (2, -3) -> R(90) -> (3, 2) => row 6, col 7
        let c = 4.0;
        let (dx, dy) = (6.0 - c, 1.0 - c);
        let (nx, ny) = (-dy, dx);
        let (er, ec) = ((c + ny) as usize, (c + nx) as usize);
        assert_eq!((er, ec), (6, 7));
        for r in 0..n {
            for col in 0..n {
                let expect = if (r, col) == (er, ec) { 1.0 } else { 0.0 };
                assert!((out.get(r, col) - expect).abs() < 1e-9, "({r},{col})");
            }
        }
    }

    #[test]
    fn unit_translation_shifts_columns() {
        let img = Image::from_fn(5, 6, |r, c| (r * 6 + c) as f64 / 29.0);
        let p = RigidParams::new(0.0, 1.0, 0.0, 1.0).unwrap();
        let out = rigid_augment(&img, &p, 0.25);
        for r in 0..5 {
            assert_eq!(out.get(r, 0), 0.25);
            for c in 1..6 {
                assert_eq!(out.get(r, c), img.get(r, c - 1));
            }
        }
    }

    #[test]
    fn rotation_round_trip_on_smooth_image() {
        let img = gaussian_blob(48);
        let fwd = rigid_augment(&img, &RigidParams::new(13.0, 0.0, 0.0, 1.0).unwrap(), 0.0);
        let back = rigid_augment(&fwd, &RigidParams::new(-13.0, 0.0, 0.0, 1.0).unwrap(), 0.0);
        let c = 23.5;
        let mut worst: f64 = 0.0;
        for r in 0..48 {
            for col in 0..48 {
                if ((r as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt() < 20.0 {
                    worst = worst.max((back.get(r, col) - img.get(r, col)).abs());
                }
            }
        }
        assert!(worst <= 0.05, "max abs error {worst}");
    }

    #[test]
    fn zoom_must_be_positive() {
        assert!(RigidParams::new(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(RigidParams::new(0.0, 0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn augment_ranges_sample_within_bounds() {
        let ranges = AugmentRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = ranges.sample(&mut rng);
            assert!(p.rotation.abs() <= 10.0 && p.translate_x.abs() <= 8.0);
            assert!((0.9..=1.1).contains(&p.zoom));
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn preprocess_output_in_range(
                vals in proptest::collection::vec(-0.5f64..1.5, 64),
                size in 1usize..=8,
                seed in any::<u64>(),
            ) {
                let img = Image::new(8, 8, vals).unwrap();
                let out = preprocess(&img, size, CropMode::Random { seed }).unwrap();
                prop_assert_eq!((out.height(), out.width()), (size, size));
                prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
            }

            #[test]
            fn eight_bit_round_trip(bytes in proptest::collection::vec(any::<u8>(), 12)) {
                let img = Image::new(3, 4, bytes.iter().map(|&b| b as f64 / 255.0).collect()).unwrap();
                let encoded = encode_image(&img, ImageFormat::Png).unwrap();
                let back = decode_image(&encoded, ImageFormat::Png).unwrap();
                prop_assert_eq!(quantize_u8(&back).unwrap(), bytes);
            }

            #[test]
            fn quantization_error_bounded(v in 0.0f64..=1.0) {
                let img = Image::new(1, 1, vec![v]).unwrap();
                let back = decode_image(&encode_image(&img, ImageFormat::Pgm).unwrap(), ImageFormat::Pgm).unwrap();
                prop_assert!((back.data()[0] - v).abs() <= 1.0 / 510.0 + 1e-15);
            }
        }
    }
}
