//! Sentence-incremental coreference resolution with a shift-reduce parser.
//!
//! [`transition`] defines the PUSH/ADVANCE/POP/PEEK system, [`oracle`] maps
//! gold clusters to action sequences, [`clustering`] keeps the online entity
//! memory, [`model`] scores actions and clusters, [`incremental`] decodes a
//! few sentences at a time, and [`metrics`] implements the CoNLL scorer.

pub mod clustering;
pub mod corpus;
pub mod incremental;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod transition;
