//! Detecting correlated failures among language-model verifiers and
//! down-weighting entangled verifiers in an ensemble.

pub mod audit;
pub mod bei;
pub mod bias;
pub mod cig;
pub mod difficulty;
pub mod ensemble;
pub mod fdr;
pub mod ingest;
pub mod pairs;
pub mod rank;
pub mod streams;
pub mod synthgen;
