//! Closed-form timing relations of the quenching loop and the afterpulse
//! calibration helpers.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, SimError};
use crate::time::TimePs;

/// Propagation delays of the active-quenching loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircuitTiming {
    pub t_dly1: TimePs,
    pub t_comp: TimePs,
    pub t_q: TimePs,
    pub t_rise: TimePs,
    /// Half of the blanking window.
    pub t_dly2: TimePs,
}

/// Quench, twilight and dead intervals implied by a [`CircuitTiming`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopIntervals {
    pub tau_twilight: TimePs,
    pub tau_quench: TimePs,
    pub tau_dead: TimePs,
}

impl CircuitTiming {
    /// Delays measured on the custom detector at low rate.
    pub fn custom_aq() -> Self {
        CircuitTiming {
            t_dly1: TimePs::ns(6),
            t_comp: TimePs::ps(4_500),
            t_q: TimePs::ps(500),
            t_rise: TimePs::ps(500),
            t_dly2: TimePs::ns(12),
        }
    }

    /// Blanking window `T_B = 2·T_DLY2`.
    pub fn blanking_window(&self) -> TimePs {
        self.t_dly2 * 2
    }
}

pub fn circuit_timing(t: &CircuitTiming) -> Result<LoopIntervals, SimError> {
    for (name, v) in [
        ("t_dly1", t.t_dly1),
        ("t_comp", t.t_comp),
        ("t_q", t.t_q),
        ("t_rise", t.t_rise),
        ("t_dly2", t.t_dly2),
    ] {
        if v.is_negative() {
            return Err(invalid(name, "delays must be >= 0"));
        }
    }
    if t.t_dly1 < t.t_q {
        return Err(SimError::NegativeTwilight {
            t_dly1: t.t_dly1,
            t_q: t.t_q,
        });
    }
    let tau_quench = t.t_dly1 + t.t_comp;
    Ok(LoopIntervals {
        tau_twilight: t.t_dly1 - t.t_q,
        tau_quench,
        // the comparator rise time is paid on both traversals of the loop
        tau_dead: (tau_quench + t.t_rise) * 2 - t.t_q,
    })
}

/// Trap-filling intensity `mu` for which the fraction of traps released after
/// the dead period equals `p_target` (single-exponential release).
pub fn calibrate_afterpulse_mu(p_target: f64, tau_trap: TimePs, tau_dead: TimePs) -> Result<f64, SimError> {
    if !(0.0..1.0).contains(&p_target) {
        return Err(invalid("p_target", format!("must be within [0, 1), got {p_target}")));
    }
    if tau_trap <= TimePs::ZERO {
        return Err(invalid("tau_trap", "must be > 0"));
    }
    Ok(p_target * (tau_dead.as_ps_f64() / tau_trap.as_ps_f64()).exp())
}

const RS_KNEE_OHMS: f64 = 800.0;
const P_LOW_RS: f64 = 0.055;
const P_OPT_RS: f64 = 0.032;
const RS_OPT_OHMS: f64 = 3300.0;
const P_FLOOR: f64 = 0.027;

/// Afterpulse probability of the custom detector versus quench series
/// resistance: flat at 5.5% up to 800 Ω, then an exponential approach to the
/// 2.7% floor passing through 3.2% at 3.3 kΩ.
pub fn afterpulse_prob_vs_rs(r_s: f64) -> Result<f64, SimError> {
    if !(r_s >= 0.0) {
        return Err(invalid("r_s", "must be >= 0"));
    }
    if r_s <= RS_KNEE_OHMS {
        return Ok(P_LOW_RS);
    }
    if r_s.is_infinite() {
        return Ok(P_FLOOR);
    }
    let scale = (RS_OPT_OHMS - RS_KNEE_OHMS) / ((P_LOW_RS - P_FLOOR) / (P_OPT_RS - P_FLOOR)).ln();
    Ok(P_FLOOR + (P_LOW_RS - P_FLOOR) * (-(r_s - RS_KNEE_OHMS) / scale).exp())
}
