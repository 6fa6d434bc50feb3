//! Tracking time-varying room impulse responses of a moving microphone.
//!
//! The RIR at each location is the state of a linear dynamical system. Its
//! transition matrix shifts each early reflection by the TOA change between
//! consecutive locations, estimated from the RIRs at the segment endpoints by
//! dynamic time warping. A Kalman filter then tracks the RIR from the
//! recording of a known source signal.

pub mod config;
pub mod dataset;
pub mod dtw;
pub mod error;
pub mod exec;
pub mod eval;
pub mod ism;
pub mod kalman;
pub mod linalg;
pub mod pipeline;
pub mod report;
pub mod signal;
pub mod transition;

pub use error::{Error, Result};
pub use exec::Exec;
