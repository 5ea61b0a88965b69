//! Time-bin QKD harness: an entangled pair source feeding two detectors,
//! framing into time bins, and the resulting rates and error figures.

use serde::{Deserialize, Serialize};

use crate::analysis::{distinguishability, heralding_efficiency, twilight_peak_excess, PeakExcess};
use crate::detector::{detect, DetectorParams, PulseRecord};
use crate::error::{invalid, AnalysisError, RunError, SimError};
use crate::experiments::visibility_window;
use crate::instruments::{autocorrelation, coincidence, cross_correlation, Histogram};
use crate::rng::RngStream;
use crate::source::{correlated_pair_stream, EntangledPairConfig};
use crate::time::TimePs;

fn default_bins_per_frame() -> u32 {
    1024
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    pub bin_width: TimePs,
    #[serde(default = "default_bins_per_frame")]
    pub bins_per_frame: u32,
}

impl FrameConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.bin_width <= TimePs::ZERO {
            return Err(invalid("bin_width", "must be > 0"));
        }
        if self.bins_per_frame < 2 || !self.bins_per_frame.is_power_of_two() {
            return Err(invalid("bins_per_frame", "must be a power of two >= 2"));
        }
        Ok(())
    }

    pub fn rep_rate(&self) -> f64 {
        1e12 / self.bin_width.as_ps_f64()
    }

    pub fn frame_length(&self) -> TimePs {
        self.bin_width * self.bins_per_frame as i64
    }
}

/// `(frame, bin)` holding time `t ≥ 0`.
pub fn bin_assign(t: TimePs, f: &FrameConfig) -> (u64, u32) {
    let slot = global_bin(t, f);
    (slot / f.bins_per_frame as u64, (slot % f.bins_per_frame as u64) as u32)
}

fn global_bin(t: TimePs, f: &FrameConfig) -> u64 {
    (t.0.max(0) / f.bin_width.0) as u64
}

/// Timing-channel key rate: `log2(n_bins)` bits per coincidence.
pub fn raw_key_rate(coincidence_rate: f64, n_bins: u32) -> Result<f64, AnalysisError> {
    if n_bins < 2 {
        return Err(AnalysisError::InvalidInput("n_bins must be >= 2".into()));
    }
    Ok(coincidence_rate * (n_bins as f64).log2())
}

/// Analysis settings for [`run_qkd_scenario`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QkdAnalysis {
    /// Autocorrelation bin width for distinguishability.
    pub ac_bin_width: TimePs,
    /// Cross-correlation spans `±xcorr_span`.
    pub xcorr_span: TimePs,
}

impl Default for QkdAnalysis {
    fn default() -> Self {
        QkdAnalysis {
            ac_bin_width: TimePs::ps(50),
            xcorr_span: TimePs::ns(100),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QkdReport {
    pub duration_s: f64,
    pub bin_width_ps: i64,
    pub bins_per_frame: u32,
    /// Calibrated latency beyond the nominal delay, per arm, ps.
    pub latency_offset_a_ps: i64,
    pub latency_offset_b_ps: i64,
    pub singles_a: u64,
    pub singles_b: u64,
    /// Per-detector output rates, events/s.
    pub singles_rate_a: f64,
    pub singles_rate_b: f64,
    pub coincidences: u64,
    pub coincidence_rate: f64,
    pub raw_key_rate: f64,
    pub timing_errors: u64,
    pub timing_ber: f64,
    pub distinguishability_a: Option<f64>,
    pub distinguishability_b: Option<f64>,
    pub heralding_efficiency: f64,
    /// Cross-correlation excess just past Bob's dead time.
    pub twilight_peak: Option<PeakExcess>,
    #[serde(skip)]
    pub cross_correlation: Histogram,
}

impl QkdReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Median latency of source-photon pulses beyond `delay`, measured against
/// their pump-pulse centres: the per-arm delay a training sequence would
/// calibrate out. Zero without source-photon pulses.
pub fn latency_offset(records: &[PulseRecord], delay: TimePs, source: &EntangledPairConfig) -> TimePs {
    let mut d: Vec<i64> = records
        .iter()
        .filter_map(|r| r.origin.map(|o| (r.out_time - delay - source.pulse_center(o.slot)).0))
        .collect();
    if d.is_empty() {
        return TimePs::ZERO;
    }
    let mid = d.len() / 2;
    TimePs(*d.select_nth_unstable(mid).1)
}

fn corrected(records: &[PulseRecord], delay: TimePs, source: &EntangledPairConfig) -> (Vec<TimePs>, TimePs) {
    let off = latency_offset(records, delay, source);
    (records.iter().map(|r| r.out_time - delay - off).collect(), off)
}

fn arm_visibility(times: &[TimePs], params: &DetectorParams, period: TimePs, bin: TimePs) -> Option<f64> {
    let (min_lag, max_lag) = visibility_window(params, period, 20);
    let ac = autocorrelation(times, max_lag, bin).ok()?;
    distinguishability(&ac, period, min_lag).ok()
}

/// Simulates both arms and frames the detections. Each arm's pulses are
/// referred back by its base latency and calibrated offset before binning; a
/// coincidence is a timing error when either pulse has no source photon or
/// lands outside the bin of its photon's pump pulse.
pub fn run_qkd_scenario(
    source: &EntangledPairConfig,
    det_a: &DetectorParams,
    det_b: &DetectorParams,
    frame: &FrameConfig,
    analysis: &QkdAnalysis,
    rng: &RngStream,
) -> Result<QkdReport, RunError> {
    source.validate()?;
    frame.validate()?;
    if frame.bin_width != source.period() {
        return Err(invalid("bin_width", "must equal the source pulse period").into());
    }
    let (alice, bob) = correlated_pair_stream(source, &mut rng.child("source"))?;
    let rec_a = detect(&alice, det_a, &mut rng.child("alice"), source.duration)?;
    let rec_b = detect(&bob, det_b, &mut rng.child("bob"), source.duration)?;
    let w = frame.bin_width;
    let (ta, offset_a) = corrected(&rec_a, det_a.base_delay, source);
    let (tb, offset_b) = corrected(&rec_b, det_b.base_delay, source);

    let coinc = coincidence(&ta, &tb, w, w)?;
    let timing_errors = coinc
        .events
        .iter()
        .filter(|c| {
            let ok = |t: TimePs, r: &PulseRecord| {
                r.origin
                    .is_some_and(|o| t >= TimePs::ZERO && global_bin(t, frame) == o.slot)
            };
            !(ok(ta[c.a], &rec_a[c.a]) && ok(tb[c.b], &rec_b[c.b]))
        })
        .count() as u64;

    let secs = source.duration.as_secs();
    let n_c = coinc.len() as u64;
    let coincidence_rate = n_c as f64 / secs;
    let half = TimePs(w.0 / 2);
    let k = analysis.xcorr_span.0 / w.0;
    let cross = cross_correlation(&ta, &tb, -(w * k) - half, w * k + half + w, w)?;
    let twilight_peak = twilight_peak_excess(&cross, det_b.nominal_dead_time()).ok();
    Ok(QkdReport {
        duration_s: secs,
        bin_width_ps: w.as_ps(),
        bins_per_frame: frame.bins_per_frame,
        latency_offset_a_ps: offset_a.as_ps(),
        latency_offset_b_ps: offset_b.as_ps(),
        singles_a: ta.len() as u64,
        singles_b: tb.len() as u64,
        singles_rate_a: ta.len() as f64 / secs,
        singles_rate_b: tb.len() as f64 / secs,
        coincidences: n_c,
        coincidence_rate,
        raw_key_rate: raw_key_rate(coincidence_rate, frame.bins_per_frame)?,
        timing_errors,
        timing_ber: if n_c == 0 {
            0.0
        } else {
            timing_errors as f64 / n_c as f64
        },
        distinguishability_a: arm_visibility(&ta, det_a, w, analysis.ac_bin_width),
        distinguishability_b: arm_visibility(&tb, det_b, w, analysis.ac_bin_width),
        heralding_efficiency: if ta.is_empty() && tb.is_empty() {
            0.0
        } else {
            heralding_efficiency(n_c, ta.len() as u64, tb.len() as u64)?
        },
        twilight_peak,
        cross_correlation: cross,
    })
}
