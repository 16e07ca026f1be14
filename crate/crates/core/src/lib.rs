//! Core imaging toolkit for CMR motion-artifact work: image IO and
//! augmentation, image-space and k-space artifact synthesis, quality metrics,
//! and a Richardson-Lucy baseline corrector.

pub mod deconv;
pub mod image;
pub mod kspace;
pub mod manifest;
pub mod metrics;
pub mod phantom;
pub mod synth;

use std::fs;
use std::io::{self, Write};
use std::path::Path;

pub use image::{Image, ImageError, ImageFormat};

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
