//! HS code suggestion with explainable evidence.
//!
//! A goods description is classified into subheading candidates by a
//! trainable encoder (`encoder`), and for each candidate heading the most
//! relevant sentences of the HS manual are retrieved (`retrieval`) by mixing
//! a word-alignment text score with precedent evidence quoted by experts in
//! similar past cases. `report` assembles the officer-facing document and
//! `eval` holds the evaluation harness and a synthetic corpus generator.

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod report;
pub mod retrieval;
pub mod text;

pub use error::{Error, Result};
