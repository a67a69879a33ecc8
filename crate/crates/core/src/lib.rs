//! Privacy-leakage audits for masked language models trained on clinical
//! notes: can a model link a patient's name to that patient's conditions?

pub mod attack;
pub mod config;
pub mod corpus;
pub mod error;
pub mod io;
pub mod lexicon;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod scorer;
pub mod seeds;
pub mod static_embed;
pub mod text;

pub use error::{Error, Result};
