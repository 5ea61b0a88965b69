//! Photon sources: CW Poisson light, pulsed lasers, pulse pairs and a
//! correlated pair source feeding two detectors.
//!
//! All generators are pure functions of `(config, rng)` and return sorted,
//! non-negative arrival times strictly below the configured duration.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, SimError};
use crate::rng::RngStream;
use crate::time::TimePs;

/// Pump repetition rate before multiplication, 120 MHz.
pub const BASE_REP_RATE_HZ: f64 = 120e6;
/// Supported repetition-rate multiplication factors.
pub const REP_RATE_FACTORS: [u32; 6] = [1, 2, 4, 8, 16, 32];

/// Ground-truth identity of a photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    /// Unique per photon within a stream (per pair for correlated sources).
    pub tag: u64,
    /// Pulse or pair index the photon belongs to.
    pub slot: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrival {
    pub time: TimePs,
    pub origin: Origin,
}

impl Arrival {
    pub fn new(time: TimePs, tag: u64, slot: u64) -> Self {
        Arrival {
            time,
            origin: Origin { tag, slot },
        }
    }
}

pub fn arrival_times(arrivals: &[Arrival]) -> Vec<TimePs> {
    arrivals.iter().map(|a| a.time).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwSourceConfig {
    /// Photon rate at the detector, events/s.
    pub rate: f64,
    pub duration: TimePs,
}

impl CwSourceConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.rate >= 0.0) || !self.rate.is_finite() {
            return Err(invalid("rate", format!("must be >= 0, got {}", self.rate)));
        }
        if self.duration.is_negative() {
            return Err(invalid("duration", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulsedSourceConfig {
    pub period: TimePs,
    /// Optical pulse width, ps FWHM.
    pub pulse_fwhm: f64,
    pub mean_photons_per_pulse: f64,
    pub duration: TimePs,
}

impl PulsedSourceConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.period <= TimePs::ZERO {
            return Err(invalid("period", "must be > 0"));
        }
        if !(self.pulse_fwhm >= 0.0) {
            return Err(invalid("pulse_fwhm", "must be >= 0"));
        }
        if !(self.mean_photons_per_pulse >= 0.0) || !self.mean_photons_per_pulse.is_finite() {
            return Err(invalid("mean_photons_per_pulse", "must be >= 0"));
        }
        if self.duration.is_negative() {
            return Err(invalid("duration", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairScanConfig {
    pub delta_t: TimePs,
    pub pair_period: TimePs,
    /// Probability that each pulse of a pair carries a photon.
    pub occupancy: f64,
    pub pairs: u64,
}

impl PairScanConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.delta_t <= TimePs::ZERO {
            return Err(invalid("delta_t", "must be > 0"));
        }
        if self.pair_period <= self.delta_t {
            return Err(invalid("pair_period", "must exceed delta_t"));
        }
        if !(0.0..=1.0).contains(&self.occupancy) {
            return Err(invalid("occupancy", "must be within [0, 1]"));
        }
        Ok(())
    }

    /// Whether `delta_t` lies inside the 10–255 ns range of the hardware pair generator.
    pub fn within_generator_range(&self) -> bool {
        (TimePs::ns(10)..=TimePs::ns(255)).contains(&self.delta_t)
    }
}

/// Which pulse of a pair a photon belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PairSlot {
    First,
    Second,
}

impl PairSlot {
    pub fn tag(self, pair: u64) -> u64 {
        match self {
            PairSlot::First => 2 * pair,
            PairSlot::Second => 2 * pair + 1,
        }
    }

    pub fn from_tag(tag: u64) -> (u64, PairSlot) {
        let slot = if tag.is_multiple_of(2) {
            PairSlot::First
        } else {
            PairSlot::Second
        };
        (tag / 2, slot)
    }
}

fn default_emission_fwhm() -> f64 {
    5.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntangledPairConfig {
    /// Pulse repetition rate, Hz.
    pub rep_rate: f64,
    pub mean_pairs_per_pulse: f64,
    pub eta_alice: f64,
    pub eta_bob: f64,
    pub duration: TimePs,
    /// Pair emission-time spread within a pump pulse, ps FWHM. Both photons
    /// of a pair share the same emission instant.
    #[serde(default = "default_emission_fwhm")]
    pub emission_fwhm: f64,
}

impl EntangledPairConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.rep_rate > 0.0) || !self.rep_rate.is_finite() {
            return Err(invalid("rep_rate", "must be > 0"));
        }
        if self.period() <= TimePs::ZERO {
            return Err(invalid("rep_rate", "period rounds to zero picoseconds"));
        }
        if !(self.mean_pairs_per_pulse >= 0.0) || !self.mean_pairs_per_pulse.is_finite() {
            return Err(invalid("mean_pairs_per_pulse", "must be >= 0"));
        }
        for (name, v) in [("eta_alice", self.eta_alice), ("eta_bob", self.eta_bob)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(name, format!("must be within [0, 1], got {v}")));
            }
        }
        if !(self.emission_fwhm >= 0.0) {
            return Err(invalid("emission_fwhm", "must be >= 0"));
        }
        if self.duration.is_negative() {
            return Err(invalid("duration", "must be >= 0"));
        }
        Ok(())
    }

    /// Pulse period rounded to whole picoseconds (3.84 GHz → 260 ps, 1.92 GHz → 521 ps).
    pub fn period(&self) -> TimePs {
        TimePs::from_ps_f64(1e12 / self.rep_rate)
    }

    /// Center of pulse `k`; pulses sit in the middle of their period.
    pub fn pulse_center(&self, k: u64) -> TimePs {
        let p = self.period();
        p * k as i64 + TimePs(p.0 / 2)
    }
}

/// Repetition rate after multiplying the 120 MHz pump by `factor`.
pub fn multiplied_rep_rate(factor: u32) -> Result<f64, SimError> {
    if REP_RATE_FACTORS.contains(&factor) {
        Ok(BASE_REP_RATE_HZ * factor as f64)
    } else {
        Err(invalid(
            "factor",
            format!("must be one of {REP_RATE_FACTORS:?}, got {factor}"),
        ))
    }
}

/// Calls `f(pulse_index, photons)` for every pulse below `n_pulses` that holds
/// at least one photon, photons ~ Poisson(mean). Empty pulses are skipped
/// geometrically, so cost scales with occupied pulses only.
fn for_each_occupied_pulse<F>(n_pulses: u64, mean: f64, rng: &mut RngStream, mut f: F) -> Result<(), SimError>
where
    F: FnMut(u64, u64, &mut RngStream) -> Result<(), SimError>,
{
    if mean <= 0.0 || n_pulses == 0 {
        return Ok(());
    }
    let p_occupied = -(-mean).exp_m1();
    let mut k: u64 = 0;
    loop {
        k = k.saturating_add(rng.geometric(p_occupied)?);
        if k >= n_pulses {
            return Ok(());
        }
        let photons = rng.poisson_nonzero(mean)?;
        f(k, photons, rng)?;
        k += 1;
    }
}

/// Poissonian CW light: exponential gaps with mean `1/rate`.
pub fn cw_poisson_stream(cfg: &CwSourceConfig, rng: &mut RngStream) -> Result<Vec<Arrival>, SimError> {
    cfg.validate()?;
    let mut out = Vec::new();
    if cfg.rate == 0.0 {
        return Ok(out);
    }
    let mean_gap = 1e12 / cfg.rate;
    let mut t = 0.0f64;
    let end = cfg.duration.as_ps_f64();
    loop {
        t += rng.exponential(mean_gap)?;
        if t >= end {
            break;
        }
        let i = out.len() as u64;
        out.push(Arrival::new(
            TimePs::from_ps_f64(t).min(TimePs(cfg.duration.0 - 1)),
            i,
            i,
        ));
    }
    Ok(out)
}

/// Pulsed laser: pulse `k` at `k·period`, Poisson photon number per pulse,
/// each photon jittered by the optical pulse envelope.
pub fn pulsed_train(cfg: &PulsedSourceConfig, rng: &mut RngStream) -> Result<Vec<Arrival>, SimError> {
    cfg.validate()?;
    let n_pulses = pulses_within(cfg.duration, cfg.period);
    let mut out = Vec::new();
    let mut tag = 0u64;
    for_each_occupied_pulse(n_pulses, cfg.mean_photons_per_pulse, rng, |k, photons, rng| {
        let center = (cfg.period * k as i64).as_ps_f64();
        for _ in 0..photons {
            let t = TimePs::from_ps_f64(rng.gaussian_fwhm(center, cfg.pulse_fwhm)?);
            if t >= TimePs::ZERO && t < cfg.duration {
                out.push(Arrival::new(t, tag, k));
                tag += 1;
            }
        }
        Ok(())
    })?;
    out.sort_by_key(|a| (a.time, a.origin.tag));
    Ok(out)
}

/// Pulse pairs `ΔT` apart repeating every `pair_period`; each pulse carries a
/// photon independently with probability `occupancy`. Tags encode
/// `(pair, slot)` via [`PairSlot::tag`].
pub fn pulse_pair_sequence(cfg: &PairScanConfig, rng: &mut RngStream) -> Result<Vec<Arrival>, SimError> {
    cfg.validate()?;
    let mut out = Vec::new();
    if cfg.occupancy == 0.0 {
        return Ok(out);
    }
    for i in 0..cfg.pairs {
        let base = cfg.pair_period * i as i64;
        if rng.bernoulli(cfg.occupancy) {
            out.push(Arrival::new(base, PairSlot::First.tag(i), i));
        }
        if rng.bernoulli(cfg.occupancy) {
            out.push(Arrival::new(base + cfg.delta_t, PairSlot::Second.tag(i), i));
        }
    }
    Ok(out)
}

/// Correlated photon pairs split between Alice and Bob. Pair `n` carries tag
/// `n` on both arms; the slot is the pump pulse index.
pub fn correlated_pair_stream(
    cfg: &EntangledPairConfig,
    rng: &mut RngStream,
) -> Result<(Vec<Arrival>, Vec<Arrival>), SimError> {
    cfg.validate()?;
    let n_pulses = pulses_within(cfg.duration, cfg.period());
    let mut alice = Vec::new();
    let mut bob = Vec::new();
    let mut tag = 0u64;
    for_each_occupied_pulse(n_pulses, cfg.mean_pairs_per_pulse, rng, |k, pairs, rng| {
        let center = cfg.pulse_center(k).as_ps_f64();
        for _ in 0..pairs {
            let t = TimePs::from_ps_f64(rng.gaussian_fwhm(center, cfg.emission_fwhm)?);
            let to_alice = rng.bernoulli(cfg.eta_alice);
            let to_bob = rng.bernoulli(cfg.eta_bob);
            if t >= TimePs::ZERO && t < cfg.duration {
                if to_alice {
                    alice.push(Arrival::new(t, tag, k));
                }
                if to_bob {
                    bob.push(Arrival::new(t, tag, k));
                }
            }
            tag += 1;
        }
        Ok(())
    })?;
    alice.sort_by_key(|a| (a.time, a.origin.tag));
    bob.sort_by_key(|a| (a.time, a.origin.tag));
    Ok((alice, bob))
}

fn pulses_within(duration: TimePs, period: TimePs) -> u64 {
    if duration <= TimePs::ZERO {
        0
    } else {
        ((duration.0 - 1) / period.0 + 1) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sorted_in_range(v: &[Arrival], duration: TimePs) -> bool {
        v.windows(2).all(|w| w[0].time <= w[1].time) && v.iter().all(|a| a.time >= TimePs::ZERO && a.time < duration)
    }

    #[test]
    fn cw_zero_rate_is_empty() {
        let cfg = CwSourceConfig {
            rate: 0.0,
            duration: TimePs::ms(1),
        };
        assert!(cw_poisson_stream(&cfg, &mut RngStream::new(1, 0)).unwrap().is_empty());
    }

    #[test]
    fn cw_count_50k() {
        let cfg = CwSourceConfig {
            rate: 50_000.0,
            duration: TimePs::from_secs_f64(1.0),
        };
        let v = cw_poisson_stream(&cfg, &mut RngStream::new(11, 0)).unwrap();
        let n = v.len() as f64;
        assert!((n - 50_000.0).abs() < 5.0 * 50_000f64.sqrt(), "count {n}");
        assert!(sorted_in_range(&v, cfg.duration));
    }

    #[test]
    fn cw_gaps_are_exponential() {
        let cfg = CwSourceConfig {
            rate: 1e6,
            duration: TimePs::from_secs_f64(0.2),
        };
        let v = cw_poisson_stream(&cfg, &mut RngStream::new(12, 0)).unwrap();
        let mut gaps: Vec<f64> = v.windows(2).map(|w| (w[1].time - w[0].time).as_ps_f64()).collect();
        gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = gaps.len() as f64;
        let mean = 1e6; // ps
        let d = gaps
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let c = 1.0 - (-x / mean).exp();
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max);
        // KS critical value at the 1% level: 1.628 / sqrt(n)
        assert!(d < 1.628 / n.sqrt(), "KS {d} n {n}");
    }

    #[test]
    fn pulsed_empty_when_mean_zero() {
        let cfg = PulsedSourceConfig {
            period: TimePs::ns(30),
            pulse_fwhm: 39.0,
            mean_photons_per_pulse: 0.0,
            duration: TimePs::ms(1),
        };
        assert!(pulsed_train(&cfg, &mut RngStream::new(1, 0)).unwrap().is_empty());
    }

    #[test]
    fn pulsed_clusters_on_comb() {
        let period = TimePs::ns(30);
        let cfg = PulsedSourceConfig {
            period,
            pulse_fwhm: 39.0,
            mean_photons_per_pulse: 0.05,
            duration: period * 1_000_000,
        };
        let v = pulsed_train(&cfg, &mut RngStream::new(13, 0)).unwrap();
        assert!(sorted_in_range(&v, cfg.duration));
        let offs: Vec<f64> = v
            .iter()
            .map(|a| (a.time - period * a.origin.slot as i64).as_ps_f64())
            .collect();
        let n = offs.len() as f64;
        let m = offs.iter().sum::<f64>() / n;
        let s = (offs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
        assert!(m.abs() < 1.0, "mean offset {m}");
        assert!((s - 16.56).abs() < 0.5, "sigma {s}");

        let mut slots: Vec<u64> = v.iter().map(|a| a.origin.slot).collect();
        slots.dedup();
        slots.sort_unstable();
        slots.dedup();
        let frac = slots.len() as f64 / 1e6;
        let expect = 1.0 - (-0.05f64).exp();
        assert!(
            (frac - expect).abs() < 5.0 * (expect * (1.0 - expect) / 1e6).sqrt(),
            "{frac}"
        );
    }

    #[test]
    fn pulsed_zero_width_lands_on_grid() {
        let cfg = PulsedSourceConfig {
            period: TimePs::ns(10),
            pulse_fwhm: 0.0,
            mean_photons_per_pulse: 3.0,
            duration: TimePs::us(10),
        };
        let v = pulsed_train(&cfg, &mut RngStream::new(2, 0)).unwrap();
        assert!(!v.is_empty());
        assert!(v.iter().all(|a| a.time.0 % 10_000 == 0));
    }

    #[test]
    fn pair_sequence_full_occupancy() {
        let cfg = PairScanConfig {
            delta_t: TimePs::ns(100),
            pair_period: TimePs::us(1),
            occupancy: 1.0,
            pairs: 3,
        };
        let v = pulse_pair_sequence(&cfg, &mut RngStream::new(1, 0)).unwrap();
        let ns: Vec<i64> = v.iter().map(|a| a.time.0 / 1000).collect();
        assert_eq!(ns, vec![0, 100, 1000, 1100, 2000, 2100]);
        assert_eq!(PairSlot::from_tag(v[3].origin.tag), (1, PairSlot::Second));
    }

    #[test]
    fn pair_sequence_empty_and_double_rate() {
        let mut cfg = PairScanConfig {
            delta_t: TimePs::ns(50),
            pair_period: TimePs::us(1),
            occupancy: 0.0,
            pairs: 1000,
        };
        assert!(pulse_pair_sequence(&cfg, &mut RngStream::new(1, 0)).unwrap().is_empty());
        cfg.occupancy = 0.05;
        cfg.pairs = 1_000_000;
        let v = pulse_pair_sequence(&cfg, &mut RngStream::new(3, 0)).unwrap();
        let both = v.windows(2).filter(|w| w[0].origin.slot == w[1].origin.slot).count() as f64;
        let expect = 0.0025 * 1e6;
        let sd = (1e6 * 0.0025 * 0.9975f64).sqrt();
        assert!((both - expect).abs() < 5.0 * sd, "both {both}");
    }

    #[test]
    fn pair_config_validation() {
        let cfg = PairScanConfig {
            delta_t: TimePs::ns(100),
            pair_period: TimePs::ns(100),
            occupancy: 0.5,
            pairs: 1,
        };
        assert!(cfg.validate().is_err());
        let ok = PairScanConfig {
            pair_period: TimePs::us(1),
            ..cfg
        };
        assert!(ok.within_generator_range());
    }

    fn ent(eta_a: f64, eta_b: f64, mean: f64) -> EntangledPairConfig {
        EntangledPairConfig {
            rep_rate: 1.92e9,
            mean_pairs_per_pulse: mean,
            eta_alice: eta_a,
            eta_bob: eta_b,
            duration: TimePs::us(200),
            emission_fwhm: 5.0,
        }
    }

    #[test]
    fn lossless_pairs_are_identical() {
        let (a, b) = correlated_pair_stream(&ent(1.0, 1.0, 1.0), &mut RngStream::new(5, 0)).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(a.iter().zip(&b).all(|(x, y)| x.time == y.time && x.origin == y.origin));
    }

    #[test]
    fn alice_empty_when_eta_zero() {
        let (a, b) = correlated_pair_stream(&ent(0.0, 1.0, 0.1), &mut RngStream::new(5, 0)).unwrap();
        assert!(a.is_empty());
        assert!(!b.is_empty());
    }

    #[test]
    fn half_transmission_coincidence_fraction() {
        let (a, b) = correlated_pair_stream(&ent(0.5, 0.5, 0.2), &mut RngStream::new(6, 0)).unwrap();
        let tags_a: std::collections::HashSet<u64> = a.iter().map(|x| x.origin.tag).collect();
        let both = b.iter().filter(|x| tags_a.contains(&x.origin.tag)).count() as f64;
        let created = {
            let mut all: Vec<u64> = a.iter().chain(&b).map(|x| x.origin.tag).collect();
            all.sort_unstable();
            all.dedup();
            // tags are sequential, so the largest tag bounds the created pairs
            *all.last().unwrap() as f64 + 1.0
        };
        let frac = both / created;
        assert!((frac - 0.25).abs() < 0.01, "{frac}");
    }

    #[test]
    fn rep_rate_multiplication() {
        assert_eq!(multiplied_rep_rate(32).unwrap(), 3.84e9);
        assert!(multiplied_rep_rate(3).is_err());
        let c = ent(1.0, 1.0, 0.1);
        assert_eq!(c.period(), TimePs(521));
        let c = EntangledPairConfig { rep_rate: 3.84e9, ..c };
        assert_eq!(c.period(), TimePs(260));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn streams_sorted_and_bounded(seed in 0u64..1000, mean in 0.0f64..2.0, eta in 0.0f64..1.0) {
            let dur = TimePs::us(50);
            let p = PulsedSourceConfig { period: TimePs::ns(3), pulse_fwhm: 100.0, mean_photons_per_pulse: mean, duration: dur };
            let v = pulsed_train(&p, &mut RngStream::new(seed, 0)).unwrap();
            prop_assert!(sorted_in_range(&v, dur));
            let e = EntangledPairConfig { duration: dur, ..ent(eta, eta, mean) };
            let (a, b) = correlated_pair_stream(&e, &mut RngStream::new(seed, 1)).unwrap();
            prop_assert!(sorted_in_range(&a, dur));
            prop_assert!(sorted_in_range(&b, dur));
            let mut tags: Vec<u64> = a.iter().map(|x| x.origin.tag).collect();
            let n = tags.len();
            tags.sort_unstable();
            tags.dedup();
            prop_assert_eq!(tags.len(), n);
        }
    }
}
