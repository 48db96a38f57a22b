//! Alignment analyses between molecular embedding tables and human
//! olfactory perception data.

pub mod data;
pub mod error;
pub mod metrics;
pub mod physchem;
pub mod pipelines;
pub mod plot;
pub mod preproc;
pub mod probes;
pub mod rsa;

pub use error::{Error, Result};
