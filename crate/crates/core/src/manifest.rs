//! Line-oriented dataset manifests.
//!
//! One JSON object per line with `sharp_path`, `blur_path`, `seed` and the
//! optional `restored_path` / `psf_path`. Paths are relative to the
//! directory holding the manifest file.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate pair ({sharp}, {blur})")]
    Duplicate {
        line: usize,
        sharp: String,
        blur: String,
    },
    #[error("manifest is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub sharp_path: String,
    pub blur_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restored_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psf_path: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    /// Directory the record paths are relative to.
    pub base_dir: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(base_dir: PathBuf, records: Vec<ManifestRecord>) -> Self {
        Self { base_dir, records }
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses manifest text; blank lines are ignored.
    pub fn parse(text: &str, base_dir: PathBuf) -> Result<Self, ManifestError> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| ManifestError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            if !seen.insert((rec.sharp_path.clone(), rec.blur_path.clone())) {
                return Err(ManifestError::Duplicate {
                    line: i + 1,
                    sharp: rec.sharp_path,
                    blur: rec.blur_path,
                });
            }
            records.push(rec);
        }
        Ok(Self { base_dir, records })
    }

    pub fn read(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self::parse(&text, base)
    }

    /// Writes atomically. Record paths are kept verbatim, so the file should
    /// live in `base_dir`.
    pub fn write(&self, path: &Path) -> Result<(), ManifestError> {
        crate::write_atomic(path, self.to_text().as_bytes()).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Copy whose record paths are valid relative to `new_base`. Paths are
    /// made absolute when `new_base` differs from the current base.
    pub fn rebased(&self, new_base: &Path) -> Manifest {
        if new_base == self.base_dir {
            return self.clone();
        }
        let abs = |p: &str| -> String {
            let r = self.resolve(p);
            let r = fs::canonicalize(&r).unwrap_or(r);
            r.to_string_lossy().into_owned()
        };
        let records = self
            .records
            .iter()
            .map(|r| ManifestRecord {
                sharp_path: abs(&r.sharp_path),
                blur_path: abs(&r.blur_path),
                restored_path: r.restored_path.as_deref().map(abs),
                psf_path: r.psf_path.as_deref().map(abs),
                seed: r.seed,
            })
            .collect();
        Manifest {
            base_dir: new_base.to_path_buf(),
            records,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(i: u64) -> ManifestRecord {
        ManifestRecord {
            sharp_path: format!("sharp/{i}.png"),
            blur_path: format!("blur/{i}.png"),
            restored_path: (i % 2 == 0).then(|| format!("restored/{i}.png")),
            psf_path: None,
            seed: i * 31,
        }
    }

    #[test]
    fn one_line_per_record() {
        let m = Manifest::new(PathBuf::from("x"), (0..3).map(rec).collect());
        let text = m.to_text();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().starts_with("{\"sharp_path\":\"sharp/0.png\""));
    }

    #[test]
    fn duplicates_rejected() {
        let m = Manifest::new(PathBuf::from("."), vec![rec(1), rec(1)]);
        assert!(matches!(
            Manifest::parse(&m.to_text(), PathBuf::from(".")),
            Err(ManifestError::Duplicate { line: 2, .. })
        ));
    }

    #[test]
    fn bad_line_reports_number() {
        let text = format!("{}\nnot json\n", serde_json::to_string(&rec(0)).unwrap());
        assert!(matches!(
            Manifest::parse(&text, PathBuf::from(".")),
            Err(ManifestError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn resolves_relative_to_base() {
        let m = Manifest::new(PathBuf::from("/data/set"), vec![rec(0)]);
        assert_eq!(m.resolve("blur/0.png"), PathBuf::from("/data/set/blur/0.png"));
        assert_eq!(m.resolve("/abs/x.png"), PathBuf::from("/abs/x.png"));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let m = Manifest::new(dir.path().to_path_buf(), (0..5).map(rec).collect());
        m.write(&path).unwrap();
        assert_eq!(Manifest::read(&path).unwrap(), m);
    }

    proptest! {
        #[test]
        fn text_round_trip(seeds in proptest::collection::hash_set(any::<u64>(), 0..20), name in "[a-z0-9_ ,\"]{1,12}") {
            let records: Vec<ManifestRecord> = seeds.iter().map(|&s| ManifestRecord {
                sharp_path: format!("{name}/{s}.png"),
                blur_path: format!("b/{s}.pgm"),
                restored_path: None,
                psf_path: Some(format!("p/{s}.psf")),
                seed: s,
            }).collect();
            let m = Manifest::new(PathBuf::from("."), records);
            prop_assert_eq!(Manifest::parse(&m.to_text(), PathBuf::from(".")).unwrap(), m);
        }
    }
}
