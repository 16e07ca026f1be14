//! Image quality metrics: PSNR, mean SSIM, Sobel gradients and the
//! edge-connectivity scores.
//!
//! Edge connectivity binarizes the Sobel magnitude and counts edge points
//! (`A`), 4-connected components (`B`) and 8-connected components (`C`).
//! Clean, continuous edges give small `C/B` and `C/A`.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::image::{read_image, Image};
use crate::manifest::Manifest;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("image has no edge points; connectivity ratios are undefined")]
    NoEdges,
    #[error("no valid rows to evaluate")]
    NoValidRows,
    #[error("report parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn check_same_shape(a: &Image, b: &Image) -> Result<(), MetricsError> {
    if !a.same_shape(b) {
        return Err(MetricsError::Dimension(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// `10 log10(peak^2 / MSE)`; identical images give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64, MetricsError> {
    check_same_shape(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let mut t: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

/// Separable "valid" filtering: output is (h - k + 1) x (w - k + 1).
fn filter_valid(data: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut horiz = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            horiz[r * ow + c] = taps.iter().enumerate().map(|(i, t)| t * data[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps.iter().enumerate().map(|(i, t)| t * horiz[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean of local SSIM over every fully contained Gaussian window.
pub fn mssim_with(a: &Image, b: &Image, params: &SsimParams) -> Result<f64, MetricsError> {
    check_same_shape(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < params.window || w < params.window {
        return Err(MetricsError::Dimension(format!(
            "{h}x{w} image is smaller than the {0}x{0} SSIM window",
            params.window
        )));
    }
    let taps = gaussian_taps(params.window, params.sigma);
    let (x, y) = (a.data(), b.data());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let [mx, my, exx, eyy, exy] = [x, y, &xx[..], &yy[..], &xy[..]].map(|d| filter_valid(d, h, w, &taps));
    let c1 = (params.k1 * params.peak).powi(2);
    let c2 = (params.k2 * params.peak).powi(2);
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = exx[i] - ux * ux;
            let vy = eyy[i] - uy * uy;
            let cxy = exy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

pub fn mssim(a: &Image, b: &Image) -> Result<f64, MetricsError> {
    mssim_with(a, b, &SsimParams::default())
}

/// Signed Sobel responses and their magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMap {
    pub height: usize,
    pub width: usize,
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub magnitude: Vec<f64>,
}

impl GradientMap {
    pub fn from_magnitude(height: usize, width: usize, magnitude: Vec<f64>) -> Self {
        assert_eq!(magnitude.len(), height * width);
        Self {
            height,
            width,
            gx: magnitude.clone(),
            gy: vec![0.0; height * width],
            magnitude,
        }
    }
}

/// Horizontal Sobel kernel; the vertical one is its transpose.
pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];

/// Sobel cross-correlation with replicated borders.
pub fn sobel(image: &Image) -> Result<GradientMap, MetricsError> {
    let (h, w) = (image.height(), image.width());
    if h < 3 || w < 3 {
        return Err(MetricsError::Dimension(format!("sobel needs at least 3x3, got {h}x{w}")));
    }
    let at = |r: isize, c: isize| image.get(r.clamp(0, h as isize - 1) as usize, c.clamp(0, w as isize - 1) as usize);
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (ri, ci) = (r as isize, c as isize);
            let n = |dr: isize, dc: isize| at(ri + dr, ci + dc);
            // positive and negative lobes summed separately so flat regions give exactly 0
            gx[r * w + c] = (n(-1, 1) + 2.0 * n(0, 1) + n(1, 1)) - (n(-1, -1) + 2.0 * n(0, -1) + n(1, -1));
            gy[r * w + c] = (n(1, -1) + 2.0 * n(1, 0) + n(1, 1)) - (n(-1, -1) + 2.0 * n(-1, 0) + n(-1, 1));
        }
    }
    let magnitude = gx.iter().zip(&gy).map(|(a, b)| a.hypot(*b)).collect();
    Ok(GradientMap {
        height: h,
        width: w,
        gx,
        gy,
        magnitude,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryEdgeMap {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl BinaryEdgeMap {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width, "bit count must match shape");
        Self { height, width, bits }
    }

    /// Parses rows of `0`/`1` characters (other characters are ignored).
    pub fn from_rows(rows: &[&str]) -> Self {
        let bits: Vec<Vec<bool>> = rows
            .iter()
            .map(|r| r.chars().filter_map(|ch| match ch {
                '1' => Some(true),
                '0' => Some(false),
                _ => None,
            }).collect())
            .collect();
        let width = bits.first().map_or(0, Vec::len);
        assert!(bits.iter().all(|r| r.len() == width), "ragged rows");
        Self::new(bits.len(), width, bits.concat())
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.bits[r * self.width + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdPolicy {
    /// Edge iff magnitude >= fraction * max magnitude.
    Fraction(f64),
}

impl Default for ThresholdPolicy {
    fn default() -> Self {
        ThresholdPolicy::Fraction(0.25)
    }
}

pub fn threshold_edges(map: &GradientMap, policy: ThresholdPolicy) -> Result<BinaryEdgeMap, MetricsError> {
    let ThresholdPolicy::Fraction(f) = policy;
    if !(f > 0.0 && f <= 1.0) {
        return Err(MetricsError::Config(format!("threshold fraction must be in (0, 1], got {f}")));
    }
    let max = map.magnitude.iter().copied().fold(0.0, f64::max);
    let bits = if max == 0.0 {
        vec![false; map.magnitude.len()]
    } else {
        let t = f * max;
        map.magnitude.iter().map(|&m| m >= t).collect()
    };
    Ok(BinaryEdgeMap::new(map.height, map.width, bits))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true if two distinct sets were merged.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Number of maximal connected foreground regions.
pub fn connected_components(map: &BinaryEdgeMap, connectivity: Connectivity) -> usize {
    let (h, w) = (map.height, map.width);
    let mut uf = UnionFind::new(h * w);
    let mut count = 0usize;
    // Backward neighbours only; each pixel is linked to already-visited ones.
    let neighbours: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(-1, 0), (0, -1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1)],
    };
    for r in 0..h {
        for c in 0..w {
            if !map.get(r, c) {
                continue;
            }
            count += 1;
            for &(dr, dc) in neighbours {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nc >= w as isize {
                    continue;
                }
                let (nr, nc) = (nr as usize, nc as usize);
                if map.get(nr, nc) && uf.union(r * w + c, nr * w + nc) {
                    count -= 1;
                }
            }
        }
    }
    count
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeConnectivityReport {
    /// Edge points.
    pub a: usize,
    /// 4-connected components.
    pub b: usize,
    /// 8-connected components.
    pub c: usize,
    pub c_over_b: f64,
    pub c_over_a: f64,
}

pub fn edge_connectivity_of_map(map: &BinaryEdgeMap) -> Result<EdgeConnectivityReport, MetricsError> {
    let a = map.count();
    let b = connected_components(map, Connectivity::Four);
    let c = connected_components(map, Connectivity::Eight);
    if a == 0 || b == 0 {
        return Err(MetricsError::NoEdges);
    }
    Ok(EdgeConnectivityReport {
        a,
        b,
        c,
        c_over_b: c as f64 / b as f64,
        c_over_a: c as f64 / a as f64,
    })
}

/// Sobel, default threshold, then component counts.
pub fn edge_connectivity(image: &Image) -> Result<EdgeConnectivityReport, MetricsError> {
    edge_connectivity_with(image, ThresholdPolicy::default())
}

pub fn edge_connectivity_with(image: &Image, policy: ThresholdPolicy) -> Result<EdgeConnectivityReport, MetricsError> {
    let edges = threshold_edges(&sobel(image)?, policy)?;
    edge_connectivity_of_map(&edges)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    /// Zero-based manifest row index.
    pub pair: usize,
    pub psnr: f64,
    pub mssim: f64,
    pub c_over_b: Option<f64>,
    pub c_over_a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMeans {
    pub psnr: f64,
    pub mssim: f64,
    pub c_over_b: Option<f64>,
    pub c_over_a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub means: EvalMeans,
    /// Rows whose restored image had no edges (excluded from connectivity means).
    pub no_edge_rows: usize,
    /// Rows that could not be scored, with the reason.
    pub errors: Vec<(usize, String)>,
}

pub const REPORT_HEADER: &str = "pair,psnr_db,mssim,c_over_b,c_over_a";

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl EvalReport {
    pub fn from_rows(rows: Vec<EvalRow>, errors: Vec<(usize, String)>) -> Result<Self, MetricsError> {
        if rows.is_empty() {
            return Err(MetricsError::NoValidRows);
        }
        let means = EvalMeans {
            psnr: mean_of(rows.iter().map(|r| r.psnr)).expect("non-empty"),
            mssim: mean_of(rows.iter().map(|r| r.mssim)).expect("non-empty"),
            c_over_b: mean_of(rows.iter().filter_map(|r| r.c_over_b)),
            c_over_a: mean_of(rows.iter().filter_map(|r| r.c_over_a)),
        };
        let no_edge_rows = rows.iter().filter(|r| r.c_over_b.is_none()).count();
        Ok(Self {
            rows,
            means,
            no_edge_rows,
            errors,
        })
    }

    /// CSV with the fixed header and a trailing `mean` row. Missing
    /// connectivity values are empty fields.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.pair, r.psnr, r.mssim, opt(r.c_over_b), opt(r.c_over_a));
        }
        let m = &self.means;
        let _ = writeln!(s, "mean,{},{},{},{}", m.psnr, m.mssim, opt(m.c_over_b), opt(m.c_over_a));
        s
    }

    /// Parses [`EvalReport::to_csv`] output. Row errors are not part of the CSV.
    pub fn from_csv(text: &str) -> Result<Self, MetricsError> {
        let err = |line: usize, message: String| MetricsError::Parse { line, message };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == REPORT_HEADER => {}
            _ => return Err(err(1, format!("expected header {REPORT_HEADER:?}"))),
        }
        let num = |line: usize, s: &str| s.parse::<f64>().map_err(|e| err(line, format!("{s:?}: {e}")));
        let opt = |line: usize, s: &str| if s.is_empty() { Ok(None) } else { num(line, s).map(Some) };
        let mut rows = Vec::new();
        let mut means = None;
        for (i, line) in lines {
            let ln = i + 1;
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(err(ln, format!("expected 5 fields, got {}", f.len())));
            }
            if f[0] == "mean" {
                means = Some(EvalMeans {
                    psnr: num(ln, f[1])?,
                    mssim: num(ln, f[2])?,
                    c_over_b: opt(ln, f[3])?,
                    c_over_a: opt(ln, f[4])?,
                });
            } else {
                rows.push(EvalRow {
                    pair: f[0].parse().map_err(|e| err(ln, format!("pair id: {e}")))?,
                    psnr: num(ln, f[1])?,
                    mssim: num(ln, f[2])?,
                    c_over_b: opt(ln, f[3])?,
                    c_over_a: opt(ln, f[4])?,
                });
            }
        }
        let means = means.ok_or_else(|| err(0, "missing mean row".into()))?;
        let no_edge_rows = rows.iter().filter(|r| r.c_over_b.is_none()).count();
        Ok(Self {
            rows,
            means,
            no_edge_rows,
            errors: Vec::new(),
        })
    }

    /// Column-aligned rendering for terminals.
    pub fn render_text(&self) -> String {
        let opt = |v: Option<f64>, p: usize| v.map(|x| format!("{x:.p$}")).unwrap_or_else(|| "-".into());
        let mut s = format!("{:>6} {:>10} {:>8} {:>8} {:>11}\n", "pair", "PSNR(dB)", "MSSIM", "C/B", "C/A");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:>6} {:>10.3} {:>8.4} {:>8} {:>11}",
                r.pair,
                r.psnr,
                r.mssim,
                opt(r.c_over_b, 4),
                r.c_over_a.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into())
            );
        }
        let m = &self.means;
        let _ = writeln!(
            s,
            "{:>6} {:>10.3} {:>8.4} {:>8} {:>11}",
            "mean",
            m.psnr,
            m.mssim,
            opt(m.c_over_b, 4),
            m.c_over_a.map(|x| format!("{x:.4e}")).unwrap_or_else(|| "-".into())
        );
        if self.no_edge_rows > 0 {
            let _ = writeln!(s, "{} row(s) without edges excluded from C/B and C/A means", self.no_edge_rows);
        }
        for (pair, e) in &self.errors {
            let _ = writeln!(s, "row {pair} skipped: {e}");
        }
        s
    }
}

/// Full-reference PSNR/MSSIM of `restored` against `target`, plus the
/// no-reference connectivity of `restored`.
pub fn score_pair(pair: usize, restored: &Image, target: &Image) -> Result<EvalRow, MetricsError> {
    let p = psnr(restored, target, 1.0)?;
    let m = mssim(restored, target)?;
    let (cb, ca) = match edge_connectivity(restored) {
        Ok(r) => (Some(r.c_over_b), Some(r.c_over_a)),
        Err(MetricsError::NoEdges) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(EvalRow {
        pair,
        psnr: p,
        mssim: m,
        c_over_b: cb,
        c_over_a: ca,
    })
}

fn score_record(manifest: &Manifest, index: usize) -> Result<EvalRow, String> {
    let rec = &manifest.records[index];
    let restored_rel = rec
        .restored_path
        .as_deref()
        .ok_or_else(|| "record has no restored_path".to_string())?;
    let load = |rel: &str| read_image(&manifest.resolve(rel)).map_err(|e| format!("{rel}: {e}"));
    let blur = load(&rec.blur_path)?;
    let restored = load(restored_rel)?;
    let target = load(&rec.sharp_path)?;
    if !blur.same_shape(&target) || !restored.same_shape(&target) {
        return Err("blur, restored and sharp images differ in size".into());
    }
    score_pair(index, &restored, &target).map_err(|e| e.to_string())
}

/// Scores every manifest record in parallel; rows stay in manifest order.
pub fn evaluate_report(manifest: &Manifest) -> Result<EvalReport, MetricsError> {
    let results: Vec<Result<EvalRow, String>> = (0..manifest.records.len())
        .into_par_iter()
        .map(|i| score_record(manifest, i))
        .collect();
    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => errors.push((i, e)),
        }
    }
    EvalReport::from_rows(rows, errors)
}

pub fn evaluate_manifest_file(path: &Path) -> Result<EvalReport, Box<dyn std::error::Error + Send + Sync>> {
    let manifest = Manifest::read(path)?;
    Ok(evaluate_report(&manifest)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_image(h: usize, w: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, |_, _| rng.random::<f64>())
    }

    fn checkerboard() -> BinaryEdgeMap {
        BinaryEdgeMap::from_rows(&["101", "010", "101"])
    }

    /// Independent flood fill over an explicit stack.
    fn flood_fill_count(map: &BinaryEdgeMap, conn: Connectivity) -> usize {
        let (h, w) = (map.height as isize, map.width as isize);
        let mut seen = vec![false; map.bits.len()];
        let mut count = 0;
        for start in 0..map.bits.len() {
            if !map.bits[start] || seen[start] {
                continue;
            }
            count += 1;
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(p) = stack.pop() {
                let (r, c) = ((p / map.width) as isize, (p % map.width) as isize);
                for dr in -1..=1isize {
                    for dc in -1..=1isize {
                        if (dr, dc) == (0, 0) || (conn == Connectivity::Four && dr != 0 && dc != 0) {
                            continue;
                        }
                        let (nr, nc) = (r + dr, c + dc);
                        if nr < 0 || nc < 0 || nr >= h || nc >= w {
                            continue;
                        }
                        let q = (nr * w + nc) as usize;
                        if map.bits[q] && !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn psnr_closed_forms() {
        let a = Image::zeros(8, 8);
        let b = Image::filled(8, 8, 0.5);
        let v = psnr(&a, &b, 1.0).unwrap();
        assert!((v - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!((v - 6.0206).abs() < 1e-3);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let x = rand_image(9, 9, 1);
        let y = rand_image(9, 9, 2);
        assert_eq!(psnr(&x, &y, 1.0).unwrap(), psnr(&y, &x, 1.0).unwrap());
        assert!(matches!(psnr(&a, &Image::zeros(8, 9), 1.0), Err(MetricsError::Dimension(_))));
    }

    #[test]
    fn psnr_falls_with_noise() {
        use crate::synth::{add_gaussian_noise, NoiseParams};
        let x = rand_image(32, 32, 3);
        let vals: Vec<f64> = [0.01, 0.05, 0.1]
            .iter()
            .map(|&s| psnr(&x, &add_gaussian_noise(&x, &NoiseParams { sigma: s, seed: 9 }), 1.0).unwrap())
            .collect();
        assert!(vals[0] > vals[1] && vals[1] > vals[2], "{vals:?}");
    }

    #[test]
    fn mssim_closed_forms() {
        let x = rand_image(20, 24, 4);
        assert!((mssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let zero = Image::zeros(16, 16);
        let one = Image::filled(16, 16, 1.0);
        assert!((mssim(&zero, &one).unwrap() - 1e-4 / 1.0001).abs() < 1e-9);
        let y = rand_image(20, 24, 5);
        assert!((mssim(&x, &y).unwrap() - mssim(&y, &x).unwrap()).abs() < 1e-12);
        assert!(matches!(mssim(&Image::zeros(10, 30), &Image::zeros(10, 30)), Err(MetricsError::Dimension(_))));
    }

    /// Brute-force SSIM over each window position with explicit 2-D weights.
    #[test]
    fn mssim_matches_direct_window_sums() {
        let x = rand_image(13, 14, 6);
        let y = x.map(|v| (v * 0.7 + 0.1).sqrt());
        let p = SsimParams::default();
        let g = gaussian_taps(11, 1.5);
        let (c1, c2) = (1e-4, 9e-4);
        let mut total = 0.0;
        let mut n = 0;
        for r0 in 0..=2 {
            for c0 in 0..=3 {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i] * g[j];
                        let (a, b) = (x.get(r0 + i, c0 + j), y.get(r0 + i, c0 + j));
                        mx += wgt * a;
                        my += wgt * b;
                        sxx += wgt * a * a;
                        syy += wgt * b * b;
                        sxy += wgt * a * b;
                    }
                }
                let (vx, vy, cxy) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                total += (2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                n += 1;
            }
        }
        assert!((mssim_with(&x, &y, &p).unwrap() - total / n as f64).abs() < 1e-12);
    }

    #[test]
    fn sobel_constant_and_step() {
        let flat = Image::filled(6, 6, 0.7);
        assert!(sobel(&flat).unwrap().magnitude.iter().all(|&m| m == 0.0));
        let step = Image::from_fn(6, 8, |_, c| if c >= 4 { 1.0 } else { 0.0 });
        let g = sobel(&step).unwrap();
        for r in 1..5 {
            assert_eq!(g.gx[r * 8 + 3], 4.0);
            assert_eq!(g.gx[r * 8 + 4], 4.0);
            assert_eq!(g.gy[r * 8 + 3], 0.0);
            assert_eq!(g.gx[r * 8 + 1], 0.0);
        }
        assert!(matches!(sobel(&Image::zeros(2, 5)), Err(MetricsError::Dimension(_))));
    }

    #[test]
    fn sobel_quarter_turn_swaps_components() {
        let x = rand_image(7, 7, 7);
        // transpose-then-flip is a 90 degree rotation: rot(r, c) = x(c, n-1-r)
        let rot = Image::from_fn(7, 7, |r, c| x.get(6 - c, r));
        let gx = sobel(&x).unwrap();
        let gr = sobel(&rot).unwrap();
        for r in 1..6 {
            for c in 1..6 {
                let (sr, sc) = (6 - c, r);
                assert!((gr.gx[r * 7 + c].abs() - gx.gy[sr * 7 + sc].abs()).abs() < 1e-12);
                assert!((gr.gy[r * 7 + c].abs() - gx.gx[sr * 7 + sc].abs()).abs() < 1e-12);
                assert!((gr.magnitude[r * 7 + c] - gx.magnitude[sr * 7 + sc]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sobel_translation_equivariance() {
        let x = rand_image(12, 12, 8);
        let shifted = x.roll(2, 1);
        let a = sobel(&x).unwrap();
        let b = sobel(&shifted).unwrap();
        for r in 1..9 {
            for c in 1..10 {
                assert_eq!(a.magnitude[r * 12 + c], b.magnitude[(r + 2) * 12 + c + 1]);
            }
        }
    }

    #[test]
    fn threshold_policy() {
        let zero = GradientMap::from_magnitude(2, 2, vec![0.0; 4]);
        assert_eq!(threshold_edges(&zero, ThresholdPolicy::default()).unwrap().count(), 0);
        let one = GradientMap::from_magnitude(2, 2, vec![0.0, 0.0, 3.0, 0.0]);
        assert_eq!(threshold_edges(&one, ThresholdPolicy::default()).unwrap().bits, vec![false, false, true, false]);
        let m = GradientMap::from_magnitude(2, 2, vec![1.0, 2.0, 4.0, 8.0]);
        assert_eq!(
            threshold_edges(&m, ThresholdPolicy::Fraction(0.5)).unwrap().bits,
            vec![false, false, true, true]
        );
        assert!(threshold_edges(&m, ThresholdPolicy::Fraction(0.0)).is_err());
        assert!(threshold_edges(&m, ThresholdPolicy::Fraction(1.5)).is_err());
    }

    #[test]
    fn component_counts() {
        let empty = BinaryEdgeMap::new(4, 4, vec![false; 16]);
        assert_eq!(connected_components(&empty, Connectivity::Four), 0);
        let full = BinaryEdgeMap::new(4, 5, vec![true; 20]);
        assert_eq!(connected_components(&full, Connectivity::Four), 1);
        assert_eq!(connected_components(&full, Connectivity::Eight), 1);
        let cb = checkerboard();
        assert_eq!(connected_components(&cb, Connectivity::Four), 5);
        assert_eq!(connected_components(&cb, Connectivity::Eight), 1);
        // anti-diagonal staircase needs the up-right neighbour
        let stairs = BinaryEdgeMap::from_rows(&["001", "010", "100"]);
        assert_eq!(connected_components(&stairs, Connectivity::Eight), 1);
        assert_eq!(connected_components(&stairs, Connectivity::Four), 3);
    }

    #[test]
    fn checkerboard_report() {
        let r = edge_connectivity_of_map(&checkerboard()).unwrap();
        assert_eq!((r.a, r.b, r.c), (5, 5, 1));
        assert!((r.c_over_b - 0.2).abs() < 1e-15 && (r.c_over_a - 0.2).abs() < 1e-15);
        assert!(matches!(
            edge_connectivity_of_map(&BinaryEdgeMap::new(2, 2, vec![false; 4])),
            Err(MetricsError::NoEdges)
        ));
        assert!(matches!(edge_connectivity(&Image::filled(5, 5, 0.2)), Err(MetricsError::NoEdges)));
    }

    #[test]
    fn flood_fill_agreement_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..200 {
            let map = BinaryEdgeMap::new(8, 8, (0..64).map(|_| rng.random_bool(0.45)).collect());
            for conn in [Connectivity::Four, Connectivity::Eight] {
                assert_eq!(connected_components(&map, conn), flood_fill_count(&map, conn));
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            EvalRow { pair: 0, psnr: 31.25, mssim: 0.93, c_over_b: Some(0.72), c_over_a: Some(5.57e-3) },
            EvalRow { pair: 2, psnr: f64::INFINITY, mssim: 1.0, c_over_b: None, c_over_a: None },
        ];
        let report = EvalReport::from_rows(rows, vec![(1, "missing".into())]).unwrap();
        assert_eq!(report.no_edge_rows, 1);
        assert_eq!(report.means.c_over_b, Some(0.72));
        let csv = report.to_csv();
        assert!(csv.starts_with("pair,psnr_db,mssim,c_over_b,c_over_a\n"));
        assert!(csv.lines().last().unwrap().starts_with("mean,"));
        let back = EvalReport::from_csv(&csv).unwrap();
        assert_eq!(back.rows, report.rows);
        assert_eq!(back.means, report.means);
        assert!(EvalReport::from_rows(vec![], vec![]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn component_nesting(bits in proptest::collection::vec(any::<bool>(), 36)) {
            let map = BinaryEdgeMap::new(6, 6, bits);
            let a = map.count();
            let b = connected_components(&map, Connectivity::Four);
            let c = connected_components(&map, Connectivity::Eight);
            prop_assert!(c <= b && b <= a);
        }

        #[test]
        fn mssim_bounded(seed in 0u64..10_000) {
            let x = rand_image(12, 12, seed);
            let y = rand_image(12, 12, seed + 1);
            let m = mssim(&x, &y).unwrap();
            prop_assert!(m > -1.0 && m <= 1.0);
            prop_assert!(m < 1.0 - 1e-12);
        }

        #[test]
        fn report_csv_round_trip(vals in proptest::collection::vec((0.0f64..80.0, -1.0f64..1.0, proptest::option::of(0.0f64..1.0)), 1..10)) {
            let rows: Vec<EvalRow> = vals.iter().enumerate().map(|(i, &(p, m, cb))| EvalRow {
                pair: i, psnr: p, mssim: m, c_over_b: cb, c_over_a: cb.map(|v| v / 100.0),
            }).collect();
            let report = EvalReport::from_rows(rows, vec![]).unwrap();
            let back = EvalReport::from_csv(&report.to_csv()).unwrap();
            prop_assert_eq!(back, report);
        }
    }
}
