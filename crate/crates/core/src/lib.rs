//! Rule-to-constraint modeling engine.
//!
//! Turns natural-language optimization problems into mathematical models and
//! solver code through a staged multi-agent pipeline (Extractor, Mapper,
//! Formalizer, Checker), grounded in a library of canonical constraint
//! templates.

pub mod cir;
pub mod config;
pub mod eval;
pub mod agents;
pub mod kb;
pub mod llm;
pub mod pipeline;
pub mod runner;
