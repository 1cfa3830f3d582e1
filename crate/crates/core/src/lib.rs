//! Claim decomposition: corpora, parses, prompting, retrieval, support
//! judgments and scores.

pub mod conllu;
pub mod corpus;
pub mod decompose;
pub mod llm;
pub mod metrics;
pub mod predarg;
pub mod retrieval;
pub mod validate;
