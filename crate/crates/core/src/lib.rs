#![warn(missing_debug_implementations, rust_2018_idioms)]
//! Estimation of group-fairness metrics for ranked retrieval output when
//! protected-group annotations are only available for a sample of documents.
//!
//! The crate is organised as a pipeline:
//!
//! - [`corpus`]: documents, rankings, relevance judgments and group
//!   annotations, with TREC-style text ingestion.
//! - [`metrics`]: exact (fully labeled) group proportion, discounted group
//!   exposure, representation targets and the four divergence measures.
//! - [`sampling`]: the top-heavy rank prior pooled across systems, the
//!   stratified bucket sampler and the uniform baseline sampler.
//! - [`estimators`]: Horvitz-Thompson estimators, the simple-mean estimators
//!   used with uniform samples, and the induced-ranking baseline.
//! - [`simulator`]: a synthetic test-collection and system generator.
//! - [`eval`]: Kendall's tau, RMSE and the sampling-rate sweep harness with
//!   CSV and SVG output.
//!
//! ```
//! use fairest::corpus::parse_run_file;
//!
//! let runs = parse_run_file("q1 Q0 d3 1 9.5 sysA\nq1 Q0 d7 2 8.1 sysA".as_bytes()).unwrap();
//! let ranking = runs.get("sysA", "q1").unwrap();
//! assert_eq!(ranking.entries()[0].doc_id.as_str(), "d3");
//! ```

pub mod corpus;
mod error;
pub mod estimators;
pub mod eval;
pub mod metrics;
pub mod sampling;
pub mod seed;
pub mod simulator;

pub use error::{Error, Result};
