//! Shipped detector presets and a helper for building parameter tables from
//! measured curves.

use serde::{Deserialize, Serialize};

use crate::detector::{
    afterpulse_prob_vs_rs, calibrate_afterpulse_mu, AfterpulseModel, Blanking, DetectorParams, ReleaseModel,
};
use crate::error::{invalid, SimError};
use crate::table::PiecewiseLinear;
use crate::time::TimePs;

pub const PRESET_NAMES: [&str; 4] = ["spcm-aqrh", "spd-050", "spd-050-ttl", "custom-aq"];

/// Where one parameter value comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetNote {
    pub entry: String,
    pub basis: String,
    /// `false` for placeholder values with no measurement behind them.
    pub anchored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorPreset {
    pub name: String,
    pub description: String,
    pub params: DetectorParams,
    pub notes: Vec<PresetNote>,
}

fn note(entry: &str, basis: &str, anchored: bool) -> PresetNote {
    PresetNote {
        entry: entry.to_string(),
        basis: basis.to_string(),
        anchored,
    }
}

/// SPCM-AQRH trap lifetime.
const SPCM_TAU_TRAP_NS: i64 = 32;
/// SPCM-AQRH added delay just past the dead time, ps.
const SPCM_SHIFT_AT_DEAD: f64 = 300.0;
/// Decay constant of the post-dead-time shift and jitter excess, ps.
/// Puts the shift at 95 ps for a 50 ns separation.
const SPCM_RECOVERY_PS: f64 = 18_160.0;
/// SPCM-AQRH settled jitter FWHM at low rate and at 4 Mcps, ps.
const SPCM_JITTER_LOW: f64 = 335.0;
const SPCM_JITTER_HIGH: f64 = 608.0;
/// Rate-keyed delay at 4 Mcps, calibrated so a 30 ns periodic jitter scan
/// shows an 855 ps peak shift against low rate.
pub const SPCM_RATE_SHIFT_4MCPS: f64 = 835.0;
/// Rate-keyed jitter at 4 Mcps. Below the settled value because short
/// intervals add the recovery excess on top; the scan then measures ~608 ps.
pub const SPCM_RATE_JITTER_4MCPS: f64 = 565.0;

/// `a·exp(−(Δt − start)/tau)` tabulated on a 2 ns grid, with a knot at 50 ns.
fn recovery_table(start_ps: f64, a: f64, tau: f64) -> PiecewiseLinear {
    let mut pts = vec![(start_ps, a)];
    let mut x = (start_ps / 2000.0).floor() * 2000.0 + 2000.0;
    while x <= 100_000.0 {
        pts.push((x, a * (-(x - start_ps) / tau).exp()));
        x += 2000.0;
    }
    pts.push((120_000.0, 0.0));
    PiecewiseLinear::new(pts).expect("increasing grid")
}

fn table(points: &[(f64, f64)]) -> PiecewiseLinear {
    PiecewiseLinear::new(points.to_vec()).expect("static table")
}

fn spcm_aqrh() -> DetectorPreset {
    let dead = TimePs::ps(29_100);
    let quench = TimePs::ns(10);
    let tau_trap = TimePs::ns(SPCM_TAU_TRAP_NS);
    let excess = (SPCM_JITTER_HIGH.powi(2) - SPCM_JITTER_LOW.powi(2)).sqrt();
    let params = DetectorParams {
        efficiency: 0.65,
        tau_dead0: dead,
        dead_elongation: PiecewiseLinear::constant(0.0),
        tau_quench: quench,
        twilight_profile: DetectorParams::linear_twilight(quench, dead),
        base_delay: TimePs::ns(20),
        jitter_curve: recovery_table(dead.as_ps_f64(), excess, SPCM_RECOVERY_PS),
        shift_curve: recovery_table(dead.as_ps_f64(), SPCM_SHIFT_AT_DEAD, SPCM_RECOVERY_PS),
        rate_jitter: table(&[(1e5, SPCM_JITTER_LOW), (4e6, SPCM_RATE_JITTER_4MCPS)]),
        rate_shift: table(&[(1e5, 0.0), (4e6, SPCM_RATE_SHIFT_4MCPS)]),
        afterpulse: AfterpulseModel {
            mu: calibrate_afterpulse_mu(0.0068, tau_trap, dead).expect("valid"),
            release: ReleaseModel::Exponential { tau_trap },
        },
        dark_rate: 726.0,
        blanking: None,
        rate_window: TimePs::us(1),
        timing_rate_window: TimePs::us(100),
    };
    DetectorPreset {
        name: "spcm-aqrh".into(),
        description: "Commercial thick-junction module with long twilight and rate-dependent timing".into(),
        params,
        notes: vec![
            note("tau_dead0", "inter-arrival histogram onset (29.1 ± 0.1) ns", true),
            note("dark_rate", "dark-only measurement (726 ± 10) cps", true),
            note(
                "afterpulse",
                "deep-level spectroscopy (0.68 ± 0.04)% with trap lifetime (32 ± 2) ns",
                true,
            ),
            note("efficiency", "datasheet 65% at 670 nm", true),
            note(
                "rate_jitter",
                "335 ps FWHM up to ~100 kcps; 4 Mcps entry calibrated so a 30 ns periodic scan measures 608 ps",
                true,
            ),
            note(
                "rate_shift",
                "calibrated to an 855 ps peak shift at 4 Mcps in a 30 ns periodic scan",
                true,
            ),
            note(
                "shift_curve",
                "below 100 ps past 50 ns pair separation; 300 ps amplitude at the dead time is a placeholder",
                false,
            ),
            note(
                "jitter_curve",
                "excess rising toward the dead time; amplitude and decay are placeholders",
                false,
            ),
            note("tau_quench", "not measured for this device; 10 ns default", false),
            note(
                "twilight_profile",
                "linear ramp from tau_quench to tau_dead0; width only seen graphically",
                false,
            ),
            note("base_delay", "arbitrary constant latency", false),
        ],
    }
}

fn spd_050(ttl: bool) -> DetectorPreset {
    let (dead, twilight, jitter) = if ttl {
        (TimePs::ns(78), TimePs::ns(15), 50.0)
    } else {
        (TimePs::ps(74_500), TimePs::ns(5), 35.0)
    };
    let quench = dead - twilight;
    let tau_trap = TimePs::ns(32);
    let params = DetectorParams {
        efficiency: 0.33,
        tau_dead0: dead,
        dead_elongation: PiecewiseLinear::constant(0.0),
        tau_quench: quench,
        twilight_profile: DetectorParams::linear_twilight(quench, dead),
        base_delay: TimePs::ns(15),
        jitter_curve: PiecewiseLinear::constant(0.0),
        shift_curve: PiecewiseLinear::constant(0.0),
        rate_jitter: PiecewiseLinear::constant(jitter),
        rate_shift: PiecewiseLinear::constant(0.0),
        afterpulse: AfterpulseModel {
            mu: calibrate_afterpulse_mu(0.004, tau_trap, dead).expect("valid"),
            release: ReleaseModel::Exponential { tau_trap },
        },
        dark_rate: 100.0,
        blanking: None,
        rate_window: TimePs::us(1),
        timing_rate_window: TimePs::us(100),
    };
    let (name, output) = if ttl {
        ("spd-050-ttl", "TTL output")
    } else {
        ("spd-050", "Timing output")
    };
    DetectorPreset {
        name: name.into(),
        description: format!("Thin-junction timing module, {output}"),
        params,
        notes: vec![
            note(
                "tau_dead0",
                if ttl {
                    "dead time 78.0 ns at the TTL output"
                } else {
                    "dead time 74.5 ns at the Timing output"
                },
                true,
            ),
            note("efficiency", "33% at the laser wavelength", true),
            note(
                "rate_jitter",
                "datasheet 35-50 ps FWHM; the Timing output takes the low end",
                true,
            ),
            note(
                "afterpulse",
                "datasheet below 0.5%; 0.4% used, trap lifetime is a placeholder",
                false,
            ),
            note(
                "twilight_profile",
                "Timing output twilight is markedly shorter than TTL; widths are placeholders",
                false,
            ),
            note("dark_rate", "not measured; placeholder", false),
            note("base_delay", "arbitrary constant latency", false),
        ],
    }
}

fn custom_aq() -> DetectorPreset {
    let dead = TimePs::ps(21_500);
    let quench = TimePs::ps(10_500);
    let twilight_start = TimePs::ns(16);
    let t_b = TimePs::ns(24);
    let tau_trap = TimePs::ns(32);
    let p_a = afterpulse_prob_vs_rs(3300.0).expect("valid");
    let params = DetectorParams {
        efficiency: 0.45,
        tau_dead0: dead,
        dead_elongation: table(&[(0.0, 0.0), (30e6, 2_000.0)]),
        tau_quench: quench,
        twilight_profile: table(&[
            (quench.as_ps_f64(), 0.0),
            (twilight_start.as_ps_f64(), 0.0),
            (dead.as_ps_f64(), 1.0),
        ]),
        base_delay: TimePs::ns(9),
        jitter_curve: PiecewiseLinear::constant(0.0),
        shift_curve: PiecewiseLinear::constant(0.0),
        rate_jitter: table(&[(3e5, 164.0), (4e6, 233.0)]),
        rate_shift: table(&[(0.0, 0.0), (4e6, 26.0)]),
        afterpulse: AfterpulseModel {
            mu: calibrate_afterpulse_mu(p_a, tau_trap, t_b).expect("valid"),
            release: ReleaseModel::Exponential { tau_trap },
        },
        dark_rate: 500.0,
        blanking: Some(Blanking {
            t_b,
            out_width: TimePs::ns(12),
        }),
        rate_window: TimePs::us(1),
        timing_rate_window: TimePs::us(100),
    };
    DetectorPreset {
        name: "custom-aq".into(),
        description: "Custom active-quenching module with 24 ns blanking".into(),
        params,
        notes: vec![
            note("tau_dead0", "loop delays 6, 4.5, 0.5, 0.5 ns give 21.5 ns", true),
            note("tau_quench", "loop delays give 10.5 ns", true),
            note(
                "twilight_profile",
                "5.5 ns twilight from the loop delays, ending at tau_dead0",
                true,
            ),
            note(
                "dead_elongation",
                "21.5 ns at low rate to 23.5 ns at 30 Mcps under CW light",
                true,
            ),
            note("blanking", "T_B = 24 ns, output reshaped to 12 ns", true),
            note("rate_jitter", "164 ps below 300 kcps to 233 ps at 4 Mcps", true),
            note("rate_shift", "about 26 ps over 0-4 Mcps", true),
            note(
                "afterpulse",
                "probability at R_S = 3.3 kOhm; trap lifetime is a placeholder",
                true,
            ),
            note("efficiency", "not quoted; placeholder", false),
            note("dark_rate", "not quoted; placeholder", false),
            note("base_delay", "arbitrary constant latency", false),
        ],
    }
}

/// Looks up a shipped preset by name.
pub fn preset(name: &str) -> Result<DetectorPreset, SimError> {
    match name {
        "spcm-aqrh" => Ok(spcm_aqrh()),
        "spd-050" => Ok(spd_050(false)),
        "spd-050-ttl" => Ok(spd_050(true)),
        "custom-aq" => Ok(custom_aq()),
        _ => Err(SimError::UnknownPreset {
            name: name.to_string(),
            available: PRESET_NAMES.join(", "),
        }),
    }
}

/// Measured curves to turn into parameter tables. Each curve is optional;
/// missing ones keep the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSet {
    #[serde(default)]
    pub jitter_vs_rate: Vec<(f64, f64)>,
    #[serde(default)]
    pub shift_vs_rate: Vec<(f64, f64)>,
    #[serde(default)]
    pub jitter_vs_dt: Vec<(f64, f64)>,
    #[serde(default)]
    pub shift_vs_dt: Vec<(f64, f64)>,
    #[serde(default)]
    pub twilight: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedParams {
    pub params: DetectorParams,
    /// Set when the twilight points had to be adjusted to be non-decreasing.
    pub twilight_adjusted: bool,
}

/// Pool-adjacent-violators fit of a non-decreasing sequence (equal weights).
pub fn isotonic_non_decreasing(ys: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(ys.len());
    for &y in ys {
        blocks.push((y, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().unwrap() = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, n)| std::iter::repeat_n(m, n))
        .collect()
}

fn curve(name: &'static str, pts: &[(f64, f64)]) -> Result<Option<PiecewiseLinear>, SimError> {
    match pts.len() {
        0 => Ok(None),
        1 => Ok(Some(PiecewiseLinear::constant(pts[0].1))),
        _ => {
            if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(invalid(name, "x values must be strictly increasing"));
            }
            PiecewiseLinear::new(pts.to_vec()).map(Some)
        }
    }
}

/// Builds tables passing through every supplied point, on top of `base`.
/// The twilight curve is made non-decreasing by isotonic regression and
/// clamped to `[0, 1]`.
pub fn fit_preset_from_curves(base: &DetectorParams, curves: &CurveSet) -> Result<FittedParams, SimError> {
    let mut p = base.clone();
    if let Some(t) = curve("jitter_vs_rate", &curves.jitter_vs_rate)? {
        p.rate_jitter = t;
    }
    if let Some(t) = curve("shift_vs_rate", &curves.shift_vs_rate)? {
        p.rate_shift = t;
    }
    if let Some(t) = curve("jitter_vs_dt", &curves.jitter_vs_dt)? {
        p.jitter_curve = t;
    }
    if let Some(t) = curve("shift_vs_dt", &curves.shift_vs_dt)? {
        p.shift_curve = t;
    }
    let mut adjusted = false;
    if curve("twilight", &curves.twilight)?.is_some() {
        let ys: Vec<f64> = curves.twilight.iter().map(|p| p.1).collect();
        let iso: Vec<f64> = isotonic_non_decreasing(&ys)
            .into_iter()
            .map(|y| y.clamp(0.0, 1.0))
            .collect();
        adjusted = iso.iter().zip(&ys).any(|(a, b)| (a - b).abs() > 1e-12);
        let pts: Vec<(f64, f64)> = curves.twilight.iter().zip(iso).map(|(p, y)| (p.0, y)).collect();
        p.twilight_profile = curve("twilight", &pts)?.expect("non-empty");
    }
    p.validate()?;
    Ok(FittedParams {
        params: p,
        twilight_adjusted: adjusted,
    })
}
