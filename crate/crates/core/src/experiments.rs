//! Measurement runners wiring sources, detectors, instruments and analyses
//! into the standard characterization experiments.

use serde::{Deserialize, Serialize};

use crate::analysis::{
    afterpulse_spectroscopy, distinguishability, estimate_dead_time, fit_values, AfterpulseResult, PairPointStats,
    SpectroscopyOptions,
};
use crate::detector::{detect, out_times, DetectorParams, PulseRecord};
use crate::error::{invalid, RunError, SimError};
use crate::instruments::{autocorrelation, build_histogram, tac_run, Histogram, TacConfig};
use crate::par;
use crate::rng::RngStream;
use crate::source::{
    cw_poisson_stream, pulse_pair_sequence, pulsed_train, CwSourceConfig, PairScanConfig, PairSlot, PulsedSourceConfig,
};
use crate::time::TimePs;

fn default_tac_fwhm() -> f64 {
    17.7
}

/// Inter-arrival statistics under CW light.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterarrivalConfig {
    /// Photon flux at the detector, photons/s.
    pub rate: f64,
    pub duration: TimePs,
    pub bin_width: TimePs,
    /// TAC full scale and histogram range.
    pub range: TimePs,
    #[serde(default = "default_tac_fwhm")]
    pub tac_fwhm: f64,
    #[serde(default)]
    pub expected_tau_trap: Option<TimePs>,
    /// Length of an additional dark-only run, if any.
    #[serde(default)]
    pub dark_duration: Option<TimePs>,
}

impl InterarrivalConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        CwSourceConfig {
            rate: self.rate,
            duration: self.duration,
        }
        .validate()?;
        TacConfig {
            range: self.range,
            instrument_fwhm: self.tac_fwhm,
        }
        .validate()?;
        if self.bin_width <= TimePs::ZERO || self.bin_width >= self.range {
            return Err(invalid("bin_width", "must be > 0 and below range"));
        }
        if self.expected_tau_trap.is_some_and(|t| t <= TimePs::ZERO) {
            return Err(invalid("expected_tau_trap", "must be > 0"));
        }
        if self.dark_duration.is_some_and(|d| d <= TimePs::ZERO) {
            return Err(invalid("dark_duration", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterarrivalResult {
    pub histogram: Histogram,
    pub detections: usize,
    pub detection_rate: f64,
    pub dead_time: TimePs,
    pub afterpulse: AfterpulseResult,
    /// `(counts, rate)` of the dark-only run.
    pub dark: Option<(usize, f64)>,
}

/// Detector output drives both TAC start and stop; the histogram keeps
/// starts without a stop in range as overflow.
pub fn run_interarrival(
    cfg: &InterarrivalConfig,
    params: &DetectorParams,
    rng: &RngStream,
) -> Result<InterarrivalResult, RunError> {
    cfg.validate()?;
    let arrivals = cw_poisson_stream(
        &CwSourceConfig {
            rate: cfg.rate,
            duration: cfg.duration,
        },
        &mut rng.child("source"),
    )?;
    let records = detect(&arrivals, params, &mut rng.child("detector"), cfg.duration)?;
    let pulses = out_times(&records);
    let tac = TacConfig {
        range: cfg.range,
        instrument_fwhm: cfg.tac_fwhm,
    };
    let run = tac_run(&pulses, &pulses, &tac, &mut rng.child("tac"))?;
    let mut histogram = build_histogram(&run.intervals, cfg.bin_width, (TimePs::ZERO, cfg.range))?;
    histogram.overflow += (run.accepted_starts - run.intervals.len()) as u64;
    let dead_time = estimate_dead_time(&histogram)?;
    let opts = SpectroscopyOptions {
        expected_tau_trap: cfg.expected_tau_trap.unwrap_or(TimePs::ns(32)),
        ..Default::default()
    };
    let afterpulse = afterpulse_spectroscopy(&histogram, dead_time, &opts)?;
    let dark = match cfg.dark_duration {
        Some(d) => Some(dark_count_rate(params, d, &rng.child("dark"))?),
        None => None,
    };
    Ok(InterarrivalResult {
        histogram,
        detections: pulses.len(),
        detection_rate: pulses.len() as f64 / cfg.duration.as_secs(),
        dead_time,
        afterpulse,
        dark,
    })
}

/// Output pulse rate with no light.
pub fn dark_count_rate(params: &DetectorParams, duration: TimePs, rng: &RngStream) -> Result<(usize, f64), SimError> {
    let records = detect(&[], params, &mut rng.child("detector"), duration)?;
    Ok((records.len(), records.len() as f64 / duration.as_secs()))
}

/// Mean photons per pulse that gives detection probability `p_detect` per pulse.
pub fn photons_for_detection(p_detect: f64, efficiency: f64) -> Result<f64, SimError> {
    if !(0.0..1.0).contains(&p_detect) || efficiency <= 0.0 {
        return Err(invalid(
            "detection_rate",
            "needs 0 <= rate·period < 1 and efficiency > 0",
        ));
    }
    Ok(-(-p_detect).ln_1p() / efficiency)
}

/// Latency distribution versus detection rate under periodic pulses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterScanConfig {
    pub period: TimePs,
    /// Optical pulse width, ps FWHM.
    pub pulse_fwhm: f64,
    /// Target detection rates, events/s.
    pub detection_rates: Vec<f64>,
    /// Settling time discarded before measuring.
    pub warmup: TimePs,
    /// Measured span after the warm-up.
    pub measure: TimePs,
    #[serde(default = "default_tac_fwhm")]
    pub tac_fwhm: f64,
}

impl JitterScanConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.period <= TimePs::ZERO {
            return Err(invalid("period", "must be > 0"));
        }
        if !(self.pulse_fwhm >= 0.0) {
            return Err(invalid("pulse_fwhm", "must be >= 0"));
        }
        if self.detection_rates.is_empty() {
            return Err(invalid("detection_rates", "need at least one rate"));
        }
        let max_rate = 1.0 / self.period.as_secs();
        if let Some(r) = self.detection_rates.iter().find(|r| !(**r > 0.0 && **r < max_rate)) {
            return Err(invalid("detection_rates", format!("{r} is outside (0, 1/period)")));
        }
        if self.warmup.is_negative() || self.measure <= TimePs::ZERO {
            return Err(invalid("measure", "warmup must be >= 0 and measure > 0"));
        }
        if !(self.tac_fwhm >= 0.0) {
            return Err(invalid("tac_fwhm", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterScanPoint {
    pub target_rate: f64,
    pub detection_rate: f64,
    /// Fitted latency peak, ps.
    pub peak: f64,
    /// Fitted latency FWHM, ps.
    pub fwhm: f64,
    /// Peak relative to the first point, ps.
    pub peak_shift: f64,
    pub samples: usize,
}

fn jitter_point(
    cfg: &JitterScanConfig,
    rate: f64,
    params: &DetectorParams,
    rng: &RngStream,
) -> Result<(f64, f64, f64, usize), RunError> {
    let duration = cfg.warmup + cfg.measure;
    let mu = photons_for_detection(rate * cfg.period.as_secs(), params.efficiency)?;
    let arrivals = pulsed_train(
        &PulsedSourceConfig {
            period: cfg.period,
            pulse_fwhm: cfg.pulse_fwhm,
            mean_photons_per_pulse: mu,
            duration,
        },
        &mut rng.child("source"),
    )?;
    let records = detect(&arrivals, params, &mut rng.child("detector"), duration)?;
    let stops: Vec<TimePs> = out_times(&records);
    let first = (cfg.warmup.0 + cfg.period.0 - 1) / cfg.period.0;
    let last = duration.0 / cfg.period.0;
    let starts: Vec<TimePs> = (first..last).map(|k| cfg.period * k).collect();
    let tac = TacConfig {
        range: cfg.period,
        instrument_fwhm: cfg.tac_fwhm,
    };
    let run = tac_run(&starts, &stops, &tac, &mut rng.child("tac"))?;
    let measured = stops.iter().filter(|t| **t >= cfg.warmup).count();
    let fit = fit_values(&run.intervals)?;
    Ok((
        measured as f64 / cfg.measure.as_secs(),
        fit.peak,
        fit.fwhm,
        run.intervals.len(),
    ))
}

pub fn run_jitter_scan(
    cfg: &JitterScanConfig,
    params: &DetectorParams,
    rng: &RngStream,
) -> Result<Vec<JitterScanPoint>, RunError> {
    cfg.validate()?;
    let raw = par::map(&cfg.detection_rates, |i, &r| {
        jitter_point(cfg, r, params, &rng.indexed(i as u64))
    });
    let raw: Vec<_> = raw.into_iter().collect::<Result<_, _>>()?;
    let reference = raw[0].1;
    Ok(cfg
        .detection_rates
        .iter()
        .zip(raw)
        .map(
            |(&target_rate, (detection_rate, peak, fwhm, samples))| JitterScanPoint {
                target_rate,
                detection_rate,
                peak,
                fwhm,
                peak_shift: peak - reference,
                samples,
            },
        )
        .collect())
}

/// Pulse-pair scan over a list of separations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairScanSweep {
    pub delta_ts: Vec<TimePs>,
    pub pair_period: TimePs,
    pub occupancy: f64,
    pub pairs: u64,
    #[serde(default = "default_tac_fwhm")]
    pub tac_fwhm: f64,
}

impl PairScanSweep {
    pub fn configs(&self) -> Vec<PairScanConfig> {
        self.delta_ts
            .iter()
            .map(|&delta_t| PairScanConfig {
                delta_t,
                pair_period: self.pair_period,
                occupancy: self.occupancy,
                pairs: self.pairs,
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.delta_ts.is_empty() {
            return Err(invalid("delta_ts", "need at least one separation"));
        }
        if self.pairs == 0 {
            return Err(invalid("pairs", "must be > 0"));
        }
        if !(self.tac_fwhm >= 0.0) {
            return Err(invalid("tac_fwhm", "must be >= 0"));
        }
        self.configs().iter().try_for_each(PairScanConfig::validate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairScanPoint {
    pub stats: PairPointStats,
    /// Measured first-to-second intervals for pairs with both photons detected.
    pub intervals: Vec<TimePs>,
    /// `(first, second)` pulse records of those pairs.
    pub both: Vec<(PulseRecord, PulseRecord)>,
}

pub fn run_pair_point(
    cfg: &PairScanConfig,
    tac_fwhm: f64,
    params: &DetectorParams,
    rng: &RngStream,
) -> Result<PairScanPoint, RunError> {
    let arrivals = pulse_pair_sequence(cfg, &mut rng.child("source"))?;
    let duration = cfg.pair_period * cfg.pairs as i64;
    let records = detect(&arrivals, params, &mut rng.child("detector"), duration)?;
    let n = cfg.pairs as usize;
    let mut first_sent = vec![false; n];
    let mut second_sent = vec![false; n];
    for a in &arrivals {
        let (pair, slot) = PairSlot::from_tag(a.origin.tag);
        match slot {
            PairSlot::First => first_sent[pair as usize] = true,
            PairSlot::Second => second_sent[pair as usize] = true,
        }
    }
    let mut first: Vec<Option<PulseRecord>> = vec![None; n];
    let mut second: Vec<Option<PulseRecord>> = vec![None; n];
    for r in &records {
        if let Some(o) = r.origin {
            let (pair, slot) = PairSlot::from_tag(o.tag);
            let cell = match slot {
                PairSlot::First => &mut first[pair as usize],
                PairSlot::Second => &mut second[pair as usize],
            };
            cell.get_or_insert(*r);
        }
    }
    let mut tac_rng = rng.child("tac");
    let mut stats = PairPointStats {
        delta_t: cfg.delta_t,
        first_sent: first_sent.iter().filter(|x| **x).count() as u64,
        first_detected: first.iter().filter(|x| x.is_some()).count() as u64,
        both_sent_first_detected: 0,
        both_detected: 0,
    };
    let mut intervals = Vec::new();
    let mut both = Vec::new();
    for i in 0..n {
        let Some(f) = first[i] else { continue };
        if second_sent[i] {
            stats.both_sent_first_detected += 1;
        }
        if let Some(s) = second[i] {
            stats.both_detected += 1;
            let dt = (s.out_time - f.out_time).as_ps_f64();
            intervals.push(TimePs::from_ps_f64(tac_rng.gaussian_fwhm(dt, tac_fwhm)?));
            both.push((f, s));
        }
    }
    Ok(PairScanPoint { stats, intervals, both })
}

pub fn run_pair_scan(
    sweep: &PairScanSweep,
    params: &DetectorParams,
    rng: &RngStream,
) -> Result<Vec<PairScanPoint>, RunError> {
    sweep.validate()?;
    let configs = sweep.configs();
    par::map(&configs, |i, c| {
        run_pair_point(c, sweep.tac_fwhm, params, &rng.indexed(i as u64))
    })
    .into_iter()
    .collect()
}

/// Detection autocorrelation of one detector under a pulsed laser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutocorrConfig {
    /// Laser repetition rate, Hz.
    pub rep_rate: f64,
    pub pulse_fwhm: f64,
    /// Target detection rate, events/s.
    pub detection_rate: f64,
    pub duration: TimePs,
    pub bin_width: TimePs,
    /// Periods analysed beyond the dead-time notch.
    #[serde(default = "default_ac_periods")]
    pub periods: u32,
}

impl AutocorrConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.rep_rate > 0.0) || !self.rep_rate.is_finite() {
            return Err(invalid("rep_rate", "must be > 0"));
        }
        if !(self.detection_rate > 0.0 && self.detection_rate < self.rep_rate) {
            return Err(invalid("detection_rate", "must be within (0, rep_rate)"));
        }
        if !(self.pulse_fwhm >= 0.0) {
            return Err(invalid("pulse_fwhm", "must be >= 0"));
        }
        if self.duration <= TimePs::ZERO {
            return Err(invalid("duration", "must be > 0"));
        }
        let period = TimePs::from_ps_f64(1e12 / self.rep_rate);
        if self.bin_width <= TimePs::ZERO || self.bin_width * 2 > period {
            return Err(invalid("bin_width", "must be > 0 and at most half the pulse period"));
        }
        if self.periods == 0 {
            return Err(invalid("periods", "must be > 0"));
        }
        Ok(())
    }
}

fn default_ac_periods() -> u32 {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AutocorrResult {
    pub histogram: Histogram,
    pub detection_rate: f64,
    pub visibility: f64,
    pub period: TimePs,
}

/// Lags considered by the visibility estimate: from just past the dead-time
/// notch over `periods` pulse periods.
pub fn visibility_window(params: &DetectorParams, period: TimePs, periods: u32) -> (TimePs, TimePs) {
    let min_lag = params.nominal_dead_time() + TimePs::ns(2);
    (min_lag, min_lag + period * periods as i64 + period)
}

pub fn run_autocorr(
    cfg: &AutocorrConfig,
    params: &DetectorParams,
    rng: &RngStream,
) -> Result<AutocorrResult, RunError> {
    cfg.validate()?;
    let period = TimePs::from_ps_f64(1e12 / cfg.rep_rate);
    // detection probability per pulse ignoring dead-time losses
    let mu = photons_for_detection((cfg.detection_rate / cfg.rep_rate).min(0.999), params.efficiency)?;
    let arrivals = pulsed_train(
        &PulsedSourceConfig {
            period,
            pulse_fwhm: cfg.pulse_fwhm,
            mean_photons_per_pulse: mu,
            duration: cfg.duration,
        },
        &mut rng.child("source"),
    )?;
    let records = detect(&arrivals, params, &mut rng.child("detector"), cfg.duration)?;
    let pulses = out_times(&records);
    let (min_lag, max_lag) = visibility_window(params, period, cfg.periods);
    let histogram = autocorrelation(&pulses, max_lag, cfg.bin_width)?;
    let visibility = distinguishability(&histogram, period, min_lag)?;
    Ok(AutocorrResult {
        histogram,
        detection_rate: pulses.len() as f64 / cfg.duration.as_secs(),
        visibility,
        period,
    })
}
