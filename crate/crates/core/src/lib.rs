//! Core of a spatial microsimulation engine.
//!
//! Survey microdata are reweighted to small-area census marginals with
//! iterative proportional fitting ([`ipf`]), turned into integer synthetic
//! populations by truncate-replicate-sample ([`integerize`]), checked against
//! reference tables ([`validate`]) and summarised into zone-level income and
//! poverty measures ([`indicators`]).
//!
//! The crate is `no_std` and only needs `alloc`. Reading files, writing reports
//! and the command line live in the `microsim` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod error;
pub mod indicators;
pub mod integerize;
pub mod ipf;
pub mod schema;
pub mod special;
pub mod validate;

pub use error::{Error, Result};
pub use indicators::{MpiDimension, MpiIndicator, MpiResult, MpiSpec, IndicatorKind};
pub use integerize::{RngSpec, SyntheticPopulation};
pub use ipf::{ConvergenceInfo, IpfOptions, WeightMatrix, ZoneFit};
pub use schema::{
    ConsistencyReport, ConstraintTable, Crosswalk, Schema, SurveyDataset, SurveyRecord,
    VariableDef,
};
pub use validate::{AggregateTable, ValidationMetrics, ValidationReport};
