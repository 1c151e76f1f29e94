//! Chain-of-medical-thought dataset construction and MediHall
//! hallucination scoring.
//!
//! The pipeline runs: [`corpus`] ingest into an append-only
//! [`RecordStore`], [`decompose`] each report into six ordered
//! dimensions, human verification through [`review`], [`chain`]
//! refactoring into cumulative QA pairs, and emission of training files.
//! [`metrics`] and [`medihall`] score generated reports; [`inject`]
//! builds reports with known hallucinations to check the scorer end to
//! end.

pub mod augment;
pub mod chain;
pub mod corpus;
pub mod decompose;
pub mod inject;
pub mod llm;
pub mod medihall;
pub mod metrics;
pub mod review;
pub mod scalar;
pub mod synth;

pub use corpus::{RawReport, RecordStore, Split, Stage};
pub use decompose::{Dimension, HierarchicalRecord};
pub use medihall::{HallucinationLabel, MediHallResult};
pub use scalar::Scalar;

/// Exact rational scalar for reference computations.
pub type Exact = num_rational::Ratio<i64>;

pub type MediHallResult64 = MediHallResult<f64>;
pub type MediHallResultExact = MediHallResult<Exact>;
