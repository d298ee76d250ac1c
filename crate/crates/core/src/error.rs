use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown variable '{0}'")]
    UnknownVariable(String),

    #[error("unknown category '{category}' for variable '{variable}'")]
    UnknownCategory { variable: String, category: String },

    #[error("missing constraint table for variable '{0}'")]
    MissingTable(String),

    #[error("zone list of '{other}' does not match '{reference}'")]
    ZoneMismatch { reference: String, other: String },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("zone '{zone}': reference total {reference} cannot rescale '{variable}' total {total}")]
    Rescale {
        zone: String,
        variable: String,
        reference: f64,
        total: f64,
    },

    #[error("no support to sample {target} persons")]
    NoSupport { target: u64 },

    #[error("zone '{zone}': {source}")]
    Zone {
        zone: String,
        #[source]
        source: Box<Error>,
    },

    #[error("empty population")]
    EmptyPopulation,

    #[error("MPI weights sum to {0}, expected 1")]
    MpiWeights(f64),

    #[error("crosswalk for '{variable}' has no group for category '{category}'")]
    CrosswalkGap { variable: String, category: String },
}

impl Error {
    pub(crate) fn in_zone(self, zone: &str) -> Error {
        Error::Zone {
            zone: zone.into(),
            source: Box::new(self),
        }
    }
}
