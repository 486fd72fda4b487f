use std::path::Path;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FINDINGS: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Format(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) | CliError::Format(_) => EXIT_IO,
        }
    }

    pub fn usage(m: impl Into<String>) -> Self {
        CliError::Usage(m.into())
    }

    pub fn format(m: impl Into<String>) -> Self {
        CliError::Format(m.into())
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

macro_rules! classify {
    ($ty:ty, |$e:ident| $body:expr) => {
        impl From<$ty> for CliError {
            fn from($e: $ty) -> Self {
                $body
            }
        }
    };
}

use rigorbench::{attention, augment, corpus, leakage, methodology, metrics, pitfall, protocol, report, runlog, split, stats};

classify!(corpus::CorpusError, |e| match e {
    corpus::CorpusError::Io { .. } => CliError::Io(e.to_string()),
    corpus::CorpusError::BadThreshold(_) => CliError::Usage(e.to_string()),
    _ => CliError::Format(e.to_string()),
});
classify!(split::SplitError, |e| match e {
    split::SplitError::BadProportions(..) | split::SplitError::BadK(_) => CliError::Usage(e.to_string()),
    _ => CliError::Format(e.to_string()),
});
classify!(leakage::LeakError, |e| match e {
    leakage::LeakError::BadThreshold(_) => CliError::Usage(e.to_string()),
    _ => CliError::Format(e.to_string()),
});
classify!(augment::AugmentError, |e| match e {
    augment::AugmentError::RefusesEvalAugmentation(_) => CliError::Usage(e.to_string()),
    _ => CliError::Format(e.to_string()),
});
classify!(metrics::MetricsError, |e| match e {
    metrics::MetricsError::TooFewReplicates(_) => CliError::Usage(e.to_string()),
    _ => CliError::Format(e.to_string()),
});
classify!(stats::StatsError, |e| CliError::Format(e.to_string()));
classify!(attention::AttentionError, |e| match e {
    attention::AttentionError::Io { .. } => CliError::Io(e.to_string()),
    attention::AttentionError::BadAlpha(_) => CliError::Usage(e.to_string()),
    _ => CliError::Format(e.to_string()),
});
classify!(protocol::ProtocolError, |e| CliError::Format(e.to_string()));
classify!(methodology::SchemaError, |e| CliError::Format(e.to_string()));
classify!(methodology::LintConfigError, |e| CliError::Usage(e.to_string()));
classify!(runlog::RunLogError, |e| match e {
    runlog::RunLogError::StoreIo { .. } => CliError::Io(e.to_string()),
    _ => CliError::Format(e.to_string()),
});
classify!(report::ReportError, |e| match e {
    report::ReportError::MissingArtifact(_) => CliError::Io(e.to_string()),
    report::ReportError::Empty => CliError::Usage(e.to_string()),
    _ => CliError::Format(e.to_string()),
});
classify!(pitfall::PitfallError, |e| match e {
    pitfall::PitfallError::BadSpec(_) => CliError::Usage(e.to_string()),
    _ => CliError::Format(e.to_string()),
});
classify!(rigorbench::raster::RasterError, |e| CliError::Format(e.to_string()));
