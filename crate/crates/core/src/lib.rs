//! Triage of crowdsourced election reports.
//!
//! Reports are first gated as informative or not, then informative reports are
//! assigned an information type. The crate covers ingestion and label
//! normalization ([`corpus`]), text preprocessing ([`textprep`]), sparse and
//! dense featurization ([`vectorize`], [`embedprov`], [`features`]),
//! class-weighted linear models ([`models`]), the two-step [`pipeline`], the
//! experiment harness ([`eval`]), a synthetic corpus generator ([`synth`]) and
//! the `sentinel` command line ([`cli`]).

pub mod cli;
pub mod corpus;
pub mod embedprov;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod pipeline;
pub mod synth;
pub mod textprep;
pub mod vectorize;

pub use error::{Error, ErrorCategory, Result};
