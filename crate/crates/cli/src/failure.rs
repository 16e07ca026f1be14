//! Exit-code classification: 1 I/O, 2 configuration or validation, 3 numerical.

use std::fmt;

use cmrlab_autodiff::AutodiffError;
use cmrlab_cmcn::CmcnError;
use cmrlab_core::deconv::DeconvError;
use cmrlab_core::kspace::KSpaceError;
use cmrlab_core::manifest::ManifestError;
use cmrlab_core::metrics::MetricsError;
use cmrlab_core::synth::SynthError;
use cmrlab_core::ImageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Io = 1,
    Config = 2,
    Numeric = 3,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn new(kind: Kind, error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            error: error.into(),
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Self::new(Kind::Config, anyhow::anyhow!("{msg}"))
    }

    pub fn numeric(msg: impl fmt::Display) -> Self {
        Self::new(Kind::Numeric, anyhow::anyhow!("{msg}"))
    }

    pub fn io(context: impl fmt::Display, source: std::io::Error) -> Self {
        Self::new(Kind::Io, anyhow::Error::new(source).context(context.to_string()))
    }

    pub fn context(self, c: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            kind: self.kind,
            error: self.error.context(c),
        }
    }
}

/// Errors from the libraries know which exit class they belong to.
pub trait Classify {
    fn kind(&self) -> Kind;
}

impl<E> From<E> for Failure
where
    E: Classify + std::error::Error + Send + Sync + 'static,
{
    fn from(e: E) -> Self {
        Failure::new(e.kind(), e)
    }
}

impl Classify for ImageError {
    fn kind(&self) -> Kind {
        match self {
            ImageError::Io { .. } | ImageError::Decode { .. } | ImageError::Unsupported(_) => Kind::Io,
            ImageError::Range { .. } | ImageError::Dimension(_) | ImageError::Parameter(_) => Kind::Config,
        }
    }
}

impl Classify for SynthError {
    fn kind(&self) -> Kind {
        match self {
            SynthError::Io { .. } => Kind::Io,
            SynthError::Image(e) => e.kind(),
            _ => Kind::Config,
        }
    }
}

impl Classify for ManifestError {
    fn kind(&self) -> Kind {
        match self {
            ManifestError::Io { .. } => Kind::Io,
            _ => Kind::Config,
        }
    }
}

impl Classify for KSpaceError {
    fn kind(&self) -> Kind {
        Kind::Config
    }
}

impl Classify for DeconvError {
    fn kind(&self) -> Kind {
        match self {
            DeconvError::Synth(e) => e.kind(),
            _ => Kind::Config,
        }
    }
}

impl Classify for MetricsError {
    fn kind(&self) -> Kind {
        Kind::Config
    }
}

impl Classify for AutodiffError {
    fn kind(&self) -> Kind {
        match self {
            AutodiffError::NonFinite { .. } | AutodiffError::GradCheckNonFinite { .. } => Kind::Numeric,
            _ => Kind::Config,
        }
    }
}

impl Classify for CmcnError {
    fn kind(&self) -> Kind {
        match self {
            CmcnError::Io { .. } => Kind::Io,
            CmcnError::NonFinite { .. } => Kind::Numeric,
            CmcnError::Autodiff(e) => e.kind(),
            _ => Kind::Config,
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;
