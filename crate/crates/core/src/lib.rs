//! Retrieval-augmented, attribute-marked prompting for attribute-controlled
//! machine translation.
//!
//! The pipeline: load a labeled example pool ([`corpus`]), embed it
//! ([`embedding`]), pick in-context examples per query ([`retrieval`]),
//! render prompts ([`prompting`]), call a completion backend
//! ([`generation`]) and score the output ([`evaluation`]).

pub mod corpus;
pub mod embedding;
pub mod evaluation;
pub mod generation;
pub mod prompting;
pub mod retrieval;
pub mod text;
