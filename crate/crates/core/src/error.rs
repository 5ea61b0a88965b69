use thiserror::Error;

use crate::engine::EventKind;
use crate::time::TimePs;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("event {kind:?} at {at} scheduled before current engine time {now}")]
    EventInPast { kind: EventKind, at: TimePs, now: TimePs },

    #[error("input sequence `{name}` is not sorted at index {index}")]
    Unsorted { name: &'static str, index: usize },

    #[error("circuit delays give negative twilight: t_dly1 ({t_dly1}) < t_q ({t_q})")]
    NegativeTwilight { t_dly1: TimePs, t_q: TimePs },

    #[error("unknown preset `{name}`; available: {available}")]
    UnknownPreset { name: String, available: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("not enough populated bins for a fit: {found} (need {needed})")]
    TooFewBins { found: usize, needed: usize },

    #[error("no dead-time onset found in histogram")]
    NoOnset,

    #[error("afterpulse excess is negative ({excess:.1} counts, {sigma:.1} sigma below background)")]
    NegativeExcess { excess: f64, sigma: f64 },

    #[error("fit did not converge: {0}")]
    NoConvergence(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Failure of a full experiment run: simulation or analysis.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
}

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> SimError {
    SimError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn ensure_sorted(name: &'static str, times: &[TimePs]) -> Result<(), SimError> {
    match times.windows(2).position(|w| w[1] < w[0]) {
        Some(i) => Err(SimError::Unsorted { name, index: i + 1 }),
        None => Ok(()),
    }
}
