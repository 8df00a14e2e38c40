//! Narrative prediction for short social-media texts.
//!
//! The pipeline cleans a tweet corpus ([`corpus`]), maps class indices onto
//! expert-written narrative lists ([`taxonomy`]), predicts stance and aspect
//! in context ([`icl`]), synthesizes labelled candidate tweets from those
//! predictions ([`pcg`]), trains a softmax head over embeddings ([`head`]) and
//! scores everything with the [`metrics`] suite. All model calls go through
//! the [`backend::Backend`] trait.

pub mod backend;
pub mod bio;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod head;
pub mod icl;
pub mod io;
pub mod metrics;
pub mod pcg;
pub mod taxonomy;
pub mod template;
pub mod text;

pub use error::{Error, Result};
