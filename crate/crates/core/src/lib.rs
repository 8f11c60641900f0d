//! Cross-modal feature attribution for multi-lead cardiac time series.

pub mod agreement;
pub mod attribution;
pub mod autodiff;
pub mod crossmodal;
pub mod harness;
pub mod model;
pub mod signal;
