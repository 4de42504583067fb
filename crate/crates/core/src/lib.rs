//! Post-training quantization study for single-trial ERP detection.
//!
//! Synthetic EEG epochs are spatially filtered with xDAWN and classified
//! with BLDA or an extreme learning machine. Filter and classifier weights
//! are quantized after training, and the resulting AUC loss and storage
//! cost are measured under cross-validation.

mod bytes;
pub mod classify;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod modelfmt;
pub mod pipeline;
pub mod quant;
pub mod rng;
pub mod spatial;
pub mod synthdata;

pub use error::{Error, Result};
