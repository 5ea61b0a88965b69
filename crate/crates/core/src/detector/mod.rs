//! Behavioral model of an actively quenched SPAD module.
//!
//! The detector is a three-state machine driven by the event engine:
//!
//! * **armed** : a photon avalanches with probability `efficiency` and the
//!   module emits a pulse after its latency;
//! * **quench** (`tau_quench` after an avalanche): the diode sits below
//!   breakdown and is blind;
//! * **twilight** (`tau_quench .. tau_dead`): the diode is partially biased
//!   while the sensing comparator is still latched. An avalanche here is only
//!   reported when the dead period ends, and it restarts the dead period.
//!
//! Every avalanche fills a Poisson number of traps whose releases cause
//! afterpulses when they land in the armed state. Optional blanking post-filters
//! the output with a non-retriggerable window.

mod blanking;
mod machine;
mod timing;

pub use blanking::{blanking_filter, blanking_mask};
pub use machine::{detect, detect_times, DetectionOutput, Detector, TrapState};
pub use timing::{afterpulse_prob_vs_rs, calibrate_afterpulse_mu, circuit_timing, CircuitTiming, LoopIntervals};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, SimError};
use crate::rng::RngStream;
use crate::source::Origin;
use crate::table::PiecewiseLinear;
use crate::time::TimePs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    Photon,
    Dark,
    Afterpulse,
    Twilight,
}

/// One logic pulse at the module output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub out_time: TimePs,
    /// Instant of the avalanche that produced the pulse.
    pub origin_time: TimePs,
    pub cause: Cause,
    /// Source photon behind the pulse, when there is one.
    pub origin: Option<Origin>,
}

pub fn out_times(records: &[PulseRecord]) -> Vec<TimePs> {
    records.iter().map(|r| r.out_time).collect()
}

/// Trap release-time distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReleaseModel {
    /// Single deep level with lifetime `tau_trap`.
    Exponential { tau_trap: TimePs },
    /// Continuum of levels: density ∝ t^-exponent for t ≥ t_min (exponent > 1).
    PowerLaw { t_min: TimePs, exponent: f64 },
}

impl ReleaseModel {
    pub fn sample(&self, rng: &mut RngStream) -> Result<TimePs, SimError> {
        match *self {
            ReleaseModel::Exponential { tau_trap } => Ok(TimePs::from_ps_f64(rng.exponential(tau_trap.as_ps_f64())?)),
            ReleaseModel::PowerLaw { t_min, exponent } => {
                let u = 1.0 - rng.uniform();
                Ok(TimePs::from_ps_f64(t_min.as_ps_f64() * u.powf(-1.0 / (exponent - 1.0))))
            }
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        match *self {
            ReleaseModel::Exponential { tau_trap } if tau_trap <= TimePs::ZERO => {
                Err(invalid("tau_trap", "must be > 0"))
            }
            ReleaseModel::PowerLaw { t_min, exponent } if t_min <= TimePs::ZERO || !(exponent > 1.0) => {
                Err(invalid("power_law", "needs t_min > 0 and exponent > 1"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AfterpulseModel {
    /// Mean number of traps filled per avalanche.
    pub mu: f64,
    pub release: ReleaseModel,
}

impl AfterpulseModel {
    pub fn none() -> Self {
        AfterpulseModel {
            mu: 0.0,
            release: ReleaseModel::Exponential {
                tau_trap: TimePs::ns(32),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Blanking {
    pub t_b: TimePs,
    pub out_width: TimePs,
}

fn default_rate_window() -> TimePs {
    TimePs::us(1)
}

fn default_timing_rate_window() -> TimePs {
    TimePs::us(100)
}

/// Full behavioral parameter set of one detector.
///
/// Timing corrections have two parts: a part keyed on the time since the
/// previous avalanche (`shift_curve`, `jitter_curve`) and a part keyed on the
/// smoothed avalanche rate (`rate_shift`, `rate_jitter`). The jitter parts
/// add in quadrature; `jitter_curve` holds the excess over the settled value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorParams {
    pub efficiency: f64,
    /// Dead time at low rate.
    pub tau_dead0: TimePs,
    /// Added dead time (ps) versus avalanche rate (events/s).
    pub dead_elongation: PiecewiseLinear,
    pub tau_quench: TimePs,
    /// Relative sensitivity versus time since the avalanche (ps).
    pub twilight_profile: PiecewiseLinear,
    /// Photon-to-pulse latency.
    pub base_delay: TimePs,
    /// Excess FWHM (ps) versus time since the previous avalanche (ps).
    pub jitter_curve: PiecewiseLinear,
    /// Added delay (ps) versus time since the previous avalanche (ps).
    pub shift_curve: PiecewiseLinear,
    /// Settled jitter FWHM (ps) versus smoothed rate (events/s).
    pub rate_jitter: PiecewiseLinear,
    /// Added delay (ps) versus smoothed rate (events/s).
    pub rate_shift: PiecewiseLinear,
    pub afterpulse: AfterpulseModel,
    /// Dark counts per second at the output.
    pub dark_rate: f64,
    #[serde(default)]
    pub blanking: Option<Blanking>,
    /// Time constant of the rate estimate feeding `dead_elongation`.
    #[serde(default = "default_rate_window")]
    pub rate_window: TimePs,
    /// Time constant of the rate estimate feeding `rate_jitter` / `rate_shift`.
    #[serde(default = "default_timing_rate_window")]
    pub timing_rate_window: TimePs,
}

impl DetectorParams {
    /// Ideal detector: unit efficiency, no jitter, no afterpulsing, no dark
    /// counts, and a dead time of `tau_dead` with no twilight.
    pub fn ideal(tau_dead: TimePs) -> Self {
        let quench = TimePs(tau_dead.0 / 2);
        DetectorParams {
            efficiency: 1.0,
            tau_dead0: tau_dead,
            dead_elongation: PiecewiseLinear::constant(0.0),
            tau_quench: quench,
            twilight_profile: PiecewiseLinear::constant(0.0),
            base_delay: TimePs::ZERO,
            jitter_curve: PiecewiseLinear::constant(0.0),
            shift_curve: PiecewiseLinear::constant(0.0),
            rate_jitter: PiecewiseLinear::constant(0.0),
            rate_shift: PiecewiseLinear::constant(0.0),
            afterpulse: AfterpulseModel::none(),
            dark_rate: 0.0,
            blanking: None,
            rate_window: default_rate_window(),
            timing_rate_window: default_timing_rate_window(),
        }
    }

    /// Linear sensitivity ramp from `tau_quench` (0) to `tau_dead0` (1).
    pub fn linear_twilight(tau_quench: TimePs, tau_dead: TimePs) -> PiecewiseLinear {
        PiecewiseLinear::new(vec![(tau_quench.as_ps_f64(), 0.0), (tau_dead.as_ps_f64(), 1.0)])
            .expect("tau_quench < tau_dead")
    }

    pub fn without_twilight(mut self) -> Self {
        self.twilight_profile = PiecewiseLinear::constant(0.0);
        self
    }

    pub fn without_afterpulsing(mut self) -> Self {
        self.afterpulse.mu = 0.0;
        self
    }

    /// Shortest spacing of transmitted pulses at low rate: the blanking window
    /// when blanking is fitted, otherwise the dead time.
    pub fn nominal_dead_time(&self) -> TimePs {
        match self.blanking {
            Some(b) => b.t_b.max(self.tau_dead0),
            None => self.tau_dead0,
        }
    }

    /// Whether the twilight profile ever gives non-zero sensitivity.
    pub fn has_twilight(&self) -> bool {
        self.twilight_profile.max_y() > 0.0
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(invalid("efficiency", "must be within [0, 1]"));
        }
        if self.tau_quench.is_negative() {
            return Err(invalid("tau_quench", "must be >= 0"));
        }
        if self.tau_quench >= self.tau_dead0 {
            return Err(invalid("tau_quench", "must be shorter than tau_dead0"));
        }
        if self.dead_elongation.min_y() < 0.0 {
            return Err(invalid("dead_elongation", "added dead time must be >= 0"));
        }
        let tw = &self.twilight_profile;
        if tw.min_y() < 0.0 || tw.max_y() > 1.0 {
            return Err(invalid("twilight_profile", "values must lie in [0, 1]"));
        }
        if !tw.is_non_decreasing() {
            return Err(invalid("twilight_profile", "must be non-decreasing"));
        }
        if tw.eval(self.tau_quench.as_ps_f64()) != 0.0 {
            return Err(invalid("twilight_profile", "must be 0 at tau_quench"));
        }
        if self.base_delay.is_negative() {
            return Err(invalid("base_delay", "must be >= 0"));
        }
        if self.jitter_curve.min_y() < 0.0 || self.rate_jitter.min_y() < 0.0 {
            return Err(invalid("jitter_curve", "FWHM values must be >= 0"));
        }
        if !(self.afterpulse.mu >= 0.0) || !self.afterpulse.mu.is_finite() {
            return Err(invalid("afterpulse.mu", "must be >= 0"));
        }
        self.afterpulse.release.validate()?;
        if !(self.dark_rate >= 0.0) || !self.dark_rate.is_finite() {
            return Err(invalid("dark_rate", "must be >= 0"));
        }
        if let Some(b) = self.blanking {
            if b.t_b <= TimePs::ZERO || b.out_width.is_negative() {
                return Err(invalid("blanking", "needs t_b > 0 and out_width >= 0"));
            }
        }
        if self.rate_window <= TimePs::ZERO || self.timing_rate_window <= TimePs::ZERO {
            return Err(invalid("rate_window", "must be > 0"));
        }
        Ok(())
    }
}

/// Dead time for the given recent avalanche rate (events/s).
pub fn effective_dead_time(recent_rate: f64, params: &DetectorParams) -> TimePs {
    let added = params.dead_elongation.eval(recent_rate.max(0.0));
    params.tau_dead0 + TimePs::from_ps_f64(added)
}

/// Relative sensitivity `dt` after an avalanche, for a dead period of `tau_dead0`.
pub fn twilight_sensitivity(dt: TimePs, params: &DetectorParams) -> f64 {
    sensitivity_within(dt, params.tau_dead0, params)
}

pub(crate) fn sensitivity_within(dt: TimePs, dead: TimePs, params: &DetectorParams) -> f64 {
    if dt < params.tau_quench {
        0.0
    } else if dt >= dead {
        1.0
    } else {
        params.twilight_profile.eval(dt.as_ps_f64()).clamp(0.0, 1.0)
    }
}
