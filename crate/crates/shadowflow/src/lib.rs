//! Shadow-flow simulator for concentrating bubble configurations on a flat torus.
//!
//! A configuration of `q` bubbles is described by amplitudes `alpha_i > 0`,
//! centers `a_i` on the torus `T^n = (R/Z)^n`, concentration scales
//! `lambda_i > 0` and a scalar remainder norm `vnorm >= 0`. The crate provides
//!
//! * [`geometry`] — the torus model, analytic Morse fields `K` with exact
//!   derivatives, and a Newton-based critical-point catalog;
//! * [`bubbles`] — pairwise interaction terms between bubbles and their
//!   closed-form derivatives;
//! * [`energy`] — the reduced energy of a configuration and its principal
//!   gradients in the amplitude, scale and center directions;
//! * [`flow`] — the gated, norm-preserving velocity field that moves
//!   configurations while decreasing the reduced energy;
//! * [`integrator`] — an adaptive embedded Runge-Kutta driver in logarithmic
//!   coordinates with terminal-event detection;
//! * [`diagnostics`] — trajectory post-processing: exponential rate fits,
//!   end-state classification, the index-at-infinity count, tower detection
//!   and a small closed-form toy landscape;
//! * [`config`] / [`runner`] — TOML-driven runs, presets, deterministic
//!   batches and report generation (also exposed by the `shadowflow` binary).
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod bubbles;
pub mod config;
pub mod diagnostics;
pub mod energy;
pub mod flow;
pub mod geometry;
pub mod integrator;
pub mod runner;
pub mod sampling;

pub use bubbles::BubbleState;
pub use energy::{BalanceVector, ExpansionConstants, PerturbationField};
pub use flow::{CutoffReport, FlowConstants, FlowVelocity};
pub use geometry::{CriticalPoint, MorseField, TangentVector, TorusPoint};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum ShadowError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate critical point: {0}")]
    Degenerate(String),
    #[error("non-degeneracy violation: {0}")]
    NdViolation(String),
    #[error("numeric fault: {0}")]
    Numeric(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, ShadowError>;
