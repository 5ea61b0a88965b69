//! Scenario files: one JSON document describing one experiment, its detector,
//! seed and output files.
//!
//! ```json
//! {
//!   "version": 1,
//!   "seed": 7,
//!   "detector": { "preset": "spcm-aqrh" },
//!   "experiment": { "kind": "interarrival", "rate": 76923, "duration": 1300000000000,
//!                   "bin_width": 1000, "range": 1000000 },
//!   "outputs": { "csv": "interarrival.csv", "json": "interarrival.json" }
//! }
//! ```
//!
//! Durations are integer picoseconds, rates are events/s.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::analysis::{secret_key_rate, shift_and_jitter_vs_dt, twilight_curve, KeyRateInputs, Metric};
use crate::detector::DetectorParams;
use crate::error::{invalid, AnalysisError, RunError, SimError};
use crate::experiments::{
    run_autocorr, run_interarrival, run_jitter_scan, run_pair_scan, AutocorrConfig, InterarrivalConfig,
    JitterScanConfig, PairScanSweep,
};
use crate::presets::preset;
use crate::qkd::{run_qkd_scenario, FrameConfig, QkdAnalysis};
use crate::rng::RngStream;
use crate::source::EntangledPairConfig;
use crate::time::TimePs;

pub const CONFIG_VERSION: u32 = 1;

/// Problems found before anything is simulated.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("unsupported config version {found} (expected {CONFIG_VERSION})")]
    Version { found: u32 },
    #[error("`{field}` is required for kind `{kind}`")]
    Missing { field: &'static str, kind: &'static str },
    #[error("{field}: {source}")]
    Invalid {
        field: &'static str,
        #[source]
        source: SimError,
    },
    #[error("{field}: {source}")]
    InvalidAnalysis {
        field: &'static str,
        #[source]
        source: AnalysisError,
    },
    #[error("outputs: {0}")]
    Outputs(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorSpec {
    Preset(String),
    Params(Box<DetectorParams>),
}

impl DetectorSpec {
    pub fn resolve(&self) -> Result<DetectorParams, SimError> {
        let p = match self {
            DetectorSpec::Preset(name) => preset(name)?.params,
            DetectorSpec::Params(p) => (**p).clone(),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QkdExperiment {
    pub source: EntangledPairConfig,
    pub frame: FrameConfig,
    #[serde(default)]
    pub analysis: QkdAnalysis,
    /// Bob's detector; Alice's when absent.
    #[serde(default)]
    pub detector_b: Option<DetectorSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Interarrival(InterarrivalConfig),
    JitterScan(JitterScanConfig),
    PairScan(PairScanSweep),
    Twilight(PairScanSweep),
    Autocorr(AutocorrConfig),
    Qkd(QkdExperiment),
    Keyrate(KeyRateInputs),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Interarrival(_) => "interarrival",
            Experiment::JitterScan(_) => "jitter-scan",
            Experiment::PairScan(_) => "pair-scan",
            Experiment::Twilight(_) => "twilight",
            Experiment::Autocorr(_) => "autocorr",
            Experiment::Qkd(_) => "qkd",
            Experiment::Keyrate(_) => "keyrate",
        }
    }

    fn needs_detector(&self) -> bool {
        !matches!(self, Experiment::Keyrate(_))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub seed: u64,
    #[serde(default)]
    pub detector: Option<DetectorSpec>,
    pub experiment: Experiment,
    #[serde(default)]
    pub outputs: Outputs,
}

/// A config that passed every static check, with detectors resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    detector: Option<DetectorParams>,
    detector_b: Option<DetectorParams>,
}

fn check(field: &'static str, r: Result<(), SimError>) -> Result<(), ConfigError> {
    r.map_err(|source| ConfigError::Invalid { field, source })
}

/// Parses and validates a scenario document.
pub fn load_config(text: &str) -> Result<Scenario, ConfigError> {
    let config: ScenarioConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    if config.version != CONFIG_VERSION {
        return Err(ConfigError::Version { found: config.version });
    }
    let kind = config.experiment.kind();
    let detector = match (&config.detector, config.experiment.needs_detector()) {
        (Some(spec), _) => Some(spec.resolve().map_err(|source| ConfigError::Invalid {
            field: "detector",
            source,
        })?),
        (None, true) => {
            return Err(ConfigError::Missing {
                field: "detector",
                kind,
            })
        }
        (None, false) => None,
    };
    let mut detector_b = None;
    match &config.experiment {
        Experiment::Interarrival(c) => check("experiment", c.validate())?,
        Experiment::JitterScan(c) => check("experiment", c.validate())?,
        Experiment::PairScan(c) | Experiment::Twilight(c) => check("experiment", c.validate())?,
        Experiment::Autocorr(c) => check("experiment", c.validate())?,
        Experiment::Qkd(q) => {
            check("experiment.source", q.source.validate())?;
            check("experiment.frame", q.frame.validate())?;
            if q.frame.bin_width != q.source.period() {
                return Err(ConfigError::Invalid {
                    field: "experiment.frame",
                    source: invalid("bin_width", "must equal the source pulse period"),
                });
            }
            if q.analysis.ac_bin_width <= TimePs::ZERO || q.analysis.xcorr_span < q.frame.bin_width {
                return Err(ConfigError::Invalid {
                    field: "experiment.analysis",
                    source: invalid("analysis", "ac_bin_width must be > 0 and xcorr_span >= bin_width"),
                });
            }
            if let Some(spec) = &q.detector_b {
                detector_b = Some(spec.resolve().map_err(|source| ConfigError::Invalid {
                    field: "experiment.detector_b",
                    source,
                })?);
            }
        }
        Experiment::Keyrate(k) => k.validate().map_err(|source| ConfigError::InvalidAnalysis {
            field: "experiment",
            source,
        })?,
    }
    let o = &config.outputs;
    if o.csv.is_some() && o.csv == o.json {
        return Err(ConfigError::Outputs("csv and json must be different files".into()));
    }
    if matches!(config.experiment, Experiment::Keyrate(_)) && o.csv.is_some() {
        return Err(ConfigError::Outputs("keyrate produces no csv".into()));
    }
    Ok(Scenario {
        config,
        detector,
        detector_b,
    })
}

/// Everything a run produces; files are written separately by [`ScenarioOutput::write`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub metrics: Vec<Metric>,
    pub csv: Option<String>,
    pub json: String,
}

impl ScenarioOutput {
    /// Writes the declared outputs, resolving relative paths against `base`.
    /// Returns the paths written.
    pub fn write(&self, outputs: &Outputs, base: &Path) -> std::io::Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let mut put = |p: &Option<PathBuf>, body: Option<&str>| -> std::io::Result<()> {
            if let (Some(p), Some(body)) = (p, body) {
                let path = if p.is_absolute() { p.clone() } else { base.join(p) };
                std::fs::write(&path, body)?;
                written.push(path);
            }
            Ok(())
        };
        put(&outputs.csv, self.csv.as_deref())?;
        put(&outputs.json, Some(&self.json))?;
        Ok(written)
    }
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

impl Scenario {
    pub fn kind(&self) -> &'static str {
        self.config.experiment.kind()
    }

    fn detector(&self) -> &DetectorParams {
        self.detector.as_ref().expect("validated: detector present")
    }

    pub fn run(&self) -> Result<ScenarioOutput, RunError> {
        let rng = RngStream::named(self.config.seed, self.kind());
        match &self.config.experiment {
            Experiment::Interarrival(c) => {
                let r = run_interarrival(c, self.detector(), &rng)?;
                let ap = &r.afterpulse;
                let mut metrics = vec![
                    Metric::new("detections", r.detections as f64, "events"),
                    Metric::new("detection_rate", r.detection_rate, "cps"),
                    Metric::new("dead_time", r.dead_time.as_ns(), "ns"),
                    Metric::new("afterpulse_probability", ap.p_afterpulse * 100.0, "%"),
                    Metric::new("trap_lifetime", ap.tau_trap.as_ns(), "ns"),
                    Metric::new("afterpulse_fit_residual", ap.residual, "chi2/dof"),
                ];
                if let Some((n, rate)) = r.dark {
                    metrics.push(
                        Metric::new("dark_rate", rate, "cps")
                            .with_tolerance(3.0 * (n as f64).sqrt() * rate / (n as f64).max(1.0)),
                    );
                }
                let json = json!({
                    "kind": self.kind(),
                    "seed": self.config.seed,
                    "detections": r.detections,
                    "detection_rate": r.detection_rate,
                    "dead_time_ps": r.dead_time.as_ps(),
                    "afterpulse": ap,
                    "dark": r.dark.map(|(n, rate)| json!({"counts": n, "rate": rate})),
                    "histogram": {
                        "bin_width_ps": r.histogram.bin_width.as_ps(),
                        "in_range": r.histogram.in_range(),
                        "underflow": r.histogram.underflow,
                        "overflow": r.histogram.overflow,
                    },
                });
                Ok(ScenarioOutput {
                    metrics,
                    csv: Some(r.histogram.to_csv()),
                    json: pretty(&json),
                })
            }
            Experiment::JitterScan(c) => {
                let pts = run_jitter_scan(c, self.detector(), &rng)?;
                let mut metrics = Vec::new();
                for p in &pts {
                    let tag = format!("{:.0}cps", p.target_rate);
                    metrics.push(Metric::new(&format!("fwhm@{tag}"), p.fwhm, "ps"));
                    metrics.push(Metric::new(&format!("peak_shift@{tag}"), p.peak_shift, "ps"));
                }
                let mut csv = String::from("target_rate,detection_rate,peak_ps,fwhm_ps,peak_shift_ps,samples\n");
                for p in &pts {
                    csv.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        p.target_rate, p.detection_rate, p.peak, p.fwhm, p.peak_shift, p.samples
                    ));
                }
                Ok(ScenarioOutput {
                    metrics,
                    csv: Some(csv),
                    json: pretty(&json!({"kind": self.kind(), "seed": self.config.seed, "points": pts})),
                })
            }
            Experiment::PairScan(sweep) => {
                let pts = run_pair_scan(sweep, self.detector(), &rng)?;
                let scan: Vec<_> = pts.iter().map(|p| (p.stats.delta_t, p.intervals.clone())).collect();
                let curve = shift_and_jitter_vs_dt(&scan);
                let mut metrics = Vec::new();
                let mut csv = String::from("delta_t_ps,shift_ps,fwhm_ps,samples\n");
                for (dt, p) in &curve {
                    if let Some(p) = p {
                        metrics.push(Metric::new(&format!("fwhm@{}ps", dt.as_ps()), p.fwhm, "ps"));
                        metrics.push(Metric::new(&format!("shift@{}ps", dt.as_ps()), p.shift, "ps"));
                        csv.push_str(&format!("{},{},{},{}\n", dt.as_ps(), p.shift, p.fwhm, p.samples));
                    }
                }
                let points: Vec<_> = curve
                    .iter()
                    .zip(&pts)
                    .map(|((dt, p), raw)| json!({"delta_t_ps": dt.as_ps(), "fit": p, "stats": raw.stats}))
                    .collect();
                Ok(ScenarioOutput {
                    metrics,
                    csv: Some(csv),
                    json: pretty(&json!({"kind": self.kind(), "seed": self.config.seed, "points": points})),
                })
            }
            Experiment::Twilight(sweep) => {
                let pts = run_pair_scan(sweep, self.detector(), &rng)?;
                let stats: Vec<_> = pts.iter().map(|p| p.stats).collect();
                let curve = twilight_curve(&stats);
                let width = curve.rise_width(0.1, 0.9);
                let mut metrics = Vec::new();
                if let Some(w) = width {
                    metrics.push(Metric::new("twilight_rise_10_90", w.as_ns(), "ns"));
                }
                for p in &curve.points {
                    if let Some(r) = p.relative_efficiency {
                        metrics.push(Metric::new(
                            &format!("relative_efficiency@{}ps", p.delta_t.as_ps()),
                            r,
                            "",
                        ));
                    }
                }
                Ok(ScenarioOutput {
                    metrics,
                    csv: Some(curve.to_csv()),
                    json: pretty(&json!({
                        "kind": self.kind(),
                        "seed": self.config.seed,
                        "rise_width_10_90_ps": width.map(|w| w.as_ps()),
                        "curve": curve,
                        "stats": stats,
                    })),
                })
            }
            Experiment::Autocorr(c) => {
                let r = run_autocorr(c, self.detector(), &rng)?;
                let metrics = vec![
                    Metric::new("detection_rate", r.detection_rate, "cps"),
                    Metric::new("distinguishability", r.visibility, ""),
                ];
                Ok(ScenarioOutput {
                    metrics,
                    csv: Some(r.histogram.to_csv()),
                    json: pretty(&json!({
                        "kind": self.kind(),
                        "seed": self.config.seed,
                        "period_ps": r.period.as_ps(),
                        "detection_rate": r.detection_rate,
                        "distinguishability": r.visibility,
                    })),
                })
            }
            Experiment::Qkd(q) => {
                let det_a = self.detector();
                let det_b = self.detector_b.as_ref().unwrap_or(det_a);
                let r = run_qkd_scenario(&q.source, det_a, det_b, &q.frame, &q.analysis, &rng)?;
                let mut metrics = vec![
                    Metric::new("singles_rate_a", r.singles_rate_a, "cps"),
                    Metric::new("singles_rate_b", r.singles_rate_b, "cps"),
                    Metric::new("coincidence_rate", r.coincidence_rate, "cps"),
                    Metric::new("raw_key_rate", r.raw_key_rate, "bit/s"),
                    Metric::new("timing_ber", r.timing_ber, ""),
                    Metric::new("heralding_efficiency", r.heralding_efficiency, ""),
                ];
                for (name, v) in [
                    ("distinguishability_a", r.distinguishability_a),
                    ("distinguishability_b", r.distinguishability_b),
                ] {
                    if let Some(v) = v {
                        metrics.push(Metric::new(name, v, ""));
                    }
                }
                if let Some(p) = r.twilight_peak {
                    metrics.push(Metric::new("twilight_peak_significance", p.significance, "sigma"));
                }
                let mut json = r.to_json();
                json.push('\n');
                Ok(ScenarioOutput {
                    metrics,
                    csv: Some(r.cross_correlation.to_csv()),
                    json,
                })
            }
            Experiment::Keyrate(k) => {
                let rate = secret_key_rate(k)?;
                Ok(ScenarioOutput {
                    metrics: vec![Metric::new("secret_key_rate", rate, "bit/s")],
                    csv: None,
                    json: pretty(&json!({"kind": self.kind(), "inputs": k, "secret_key_rate": rate})),
                })
            }
        }
    }
}
