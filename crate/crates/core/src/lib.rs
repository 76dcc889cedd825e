//! Bag-of-words trait prediction from user text.
//!
//! Pipeline: [`corpus`] ingestion and splitting, [`features`] tf-idf,
//! [`linmodel`] ridge/lasso fitting with cross-validated λ, [`classify`]
//! binary and one-vs-one classifiers, [`metrics`] evaluation,
//! [`interpret`] word lists, [`fairness`] disparate-mistreatment audits,
//! [`synth`] planted-signal corpora, and [`pipeline`] the batch driver
//! behind the `traitlens` binary.

pub mod corpus;
pub mod error;
pub mod features;
pub mod linmodel;
pub mod sparse;
pub mod classify;
pub mod fairness;
pub mod interpret;
pub mod metrics;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
