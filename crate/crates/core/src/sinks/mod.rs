//! Output components: CSV appender, threshold triggers, webhooks and SVG plots.

pub mod csv;
pub mod plot;
pub mod trigger;
pub mod webhook;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("row has {actual} fields, header has {expected}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("header {found:?} does not match {expected:?}")]
    HeaderMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("webhooks carry at most three values, got {0}")]
    TooManyValues(usize),
    #[error("webhook delivery failed after {attempts} attempt(s): {reason}")]
    DeliveryFailed {
        status: Option<u16>,
        attempts: u32,
        reason: String,
    },
    #[error("series is empty")]
    EmptySeries,
    #[error("point {index} is not finite")]
    BadPoint { index: usize },
    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("bad plot parameter: {0}")]
    BadParameter(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
