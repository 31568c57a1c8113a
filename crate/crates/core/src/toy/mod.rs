//! A self-contained environment for training runs: a Python-subset
//! interpreter, a tiny token vocabulary, a tabular policy and a problem suite.

pub mod experiment;
pub mod interp;
pub mod policy;
pub mod runtime;
pub mod suite;
pub mod vocab;
