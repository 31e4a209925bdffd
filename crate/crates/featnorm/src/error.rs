use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    DimMismatch { op: &'static str, detail: String },

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not symmetric (max asymmetry {max_asym:.3e} exceeds {tol:.3e})")]
    NotSymmetric { max_asym: f64, tol: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps")]
    EigNoConvergence { sweeps: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class {class} has no samples")]
    EmptyClass { class: usize },

    #[error("degenerate statistics: {0}")]
    Degenerate(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scaled_softmax requires a model trained with normalize = true")]
    ScaledSoftmaxWithoutNormalize,

    #[error("empty scale grid")]
    EmptyGrid,

    #[error("checkpoint epochs are not consecutive: {prev} followed by {next}")]
    NonConsecutiveCheckpoints { prev: usize, next: usize },

    #[error("bin count {bin_count} exceeds sample count {samples}")]
    TooManyBins { bin_count: usize, samples: usize },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: String, reason: String },

    #[error("checksum mismatch in {path}: stored {stored:#018x}, computed {computed:#018x}")]
    ChecksumMismatch {
        path: String,
        stored: u64,
        computed: u64,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config parse error: {0}")]
    ConfigParse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
