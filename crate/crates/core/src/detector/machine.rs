use std::collections::BTreeMap;

use crate::detector::{blanking_mask, effective_dead_time, sensitivity_within, Cause, DetectorParams, PulseRecord};
use crate::engine::{Engine, EventKind, SimEvent};
use crate::error::{ensure_sorted, SimError};
use crate::rng::RngStream;
use crate::source::{Arrival, Origin};
use crate::time::TimePs;

/// Pending trap releases, kept as a multiset of release times.
#[derive(Debug, Default, Clone)]
pub struct TrapState {
    pending: BTreeMap<TimePs, u32>,
    len: usize,
}

impl TrapState {
    pub fn insert(&mut self, t: TimePs) {
        *self.pending.entry(t).or_insert(0) += 1;
        self.len += 1;
    }

    /// Removes one release at `t`; false if none was pending.
    pub fn take(&mut self, t: TimePs) -> bool {
        match self.pending.get_mut(&t) {
            Some(n) => {
                *n -= 1;
                if *n == 0 {
                    self.pending.remove(&t);
                }
                self.len -= 1;
                true
            }
            None => false,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn earliest(&self) -> Option<TimePs> {
        self.pending.keys().next().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Armed,
    Quench,
    Twilight,
}

/// Exponential moving average of an event rate, in events/s.
#[derive(Debug, Clone, Copy)]
struct RateEma {
    tau_ps: f64,
    value: f64,
    at: TimePs,
}

impl RateEma {
    fn new(tau: TimePs) -> Self {
        RateEma {
            tau_ps: tau.as_ps_f64(),
            value: 0.0,
            at: TimePs::ZERO,
        }
    }

    fn at(&self, t: TimePs) -> f64 {
        self.value * (-(t - self.at).as_ps_f64() / self.tau_ps).exp()
    }

    fn record(&mut self, t: TimePs) {
        self.value = self.at(t) + 1e12 / self.tau_ps;
        self.at = t;
    }
}

#[derive(Debug, Clone, Default)]
pub struct DetectionOutput {
    /// Transmitted pulses, sorted by output time.
    pub records: Vec<PulseRecord>,
    /// Pulses suppressed by blanking.
    pub withheld: usize,
    pub avalanches: usize,
    pub photons_seen: usize,
}

const TIMER_TWILIGHT: u64 = 0;
const TIMER_REARM: u64 = 1;

/// Mutable single-run state of one detector.
#[derive(Debug)]
pub struct Detector<'p> {
    params: &'p DetectorParams,
    phase: Phase,
    generation: u64,
    dead_start: TimePs,
    dead_end: TimePs,
    last_avalanche: Option<TimePs>,
    fast_rate: RateEma,
    slow_rate: RateEma,
    traps: TrapState,
    records: Vec<PulseRecord>,
    avalanches: usize,
    photons_seen: usize,
}

impl<'p> Detector<'p> {
    pub fn new(params: &'p DetectorParams) -> Result<Self, SimError> {
        params.validate()?;
        Ok(Detector {
            params,
            phase: Phase::Armed,
            generation: 0,
            dead_start: TimePs::ZERO,
            dead_end: TimePs::ZERO,
            last_avalanche: None,
            fast_rate: RateEma::new(params.rate_window),
            slow_rate: RateEma::new(params.timing_rate_window),
            traps: TrapState::default(),
            records: Vec::new(),
            avalanches: 0,
            photons_seen: 0,
        })
    }

    /// Runs the detector over sorted arrivals; avalanches are simulated for
    /// `[0, duration)`.
    pub fn run(
        mut self,
        arrivals: &[Arrival],
        rng: &mut RngStream,
        duration: TimePs,
    ) -> Result<DetectionOutput, SimError> {
        let times: Vec<TimePs> = arrivals.iter().map(|a| a.time).collect();
        ensure_sorted("arrivals", &times)?;
        if let Some(first) = times.first() {
            if first.is_negative() {
                return Err(crate::error::invalid("arrivals", "times must be >= 0"));
            }
        }

        let mut engine = Engine::new();
        if let Some(a) = arrivals.first() {
            engine.schedule(SimEvent::new(a.time, EventKind::PhotonArrival, 0))?;
        }
        if self.params.dark_rate > 0.0 {
            let t = self.next_dark(TimePs::ZERO, rng)?;
            engine.schedule(SimEvent::new(t, EventKind::DarkCount, 0))?;
        }

        let end = duration - TimePs(1);
        engine.run(end, |ev, sched| {
            match ev.kind {
                EventKind::PhotonArrival => {
                    let i = ev.payload as usize;
                    if let Some(next) = arrivals.get(i + 1) {
                        sched.schedule(SimEvent::new(next.time, EventKind::PhotonArrival, ev.payload + 1))?;
                    }
                    self.photons_seen += 1;
                    let a = &arrivals[i];
                    self.stimulus(
                        ev.time,
                        self.params.efficiency,
                        Cause::Photon,
                        Some(a.origin),
                        rng,
                        sched,
                    )?;
                }
                EventKind::DarkCount => {
                    let next = self.next_dark(ev.time, rng)?;
                    sched.schedule(SimEvent::new(next, EventKind::DarkCount, 0))?;
                    self.stimulus(ev.time, 1.0, Cause::Dark, None, rng, sched)?;
                }
                EventKind::TrapRelease => {
                    let taken = self.traps.take(ev.time);
                    debug_assert!(taken, "trap release without pending trap");
                    // releases during quench or twilight are discarded
                    if self.phase == Phase::Armed {
                        self.avalanche(ev.time, Cause::Afterpulse, None, rng, sched)?;
                    }
                }
                EventKind::TimerExpiry => {
                    let generation = ev.payload >> 1;
                    if generation == self.generation {
                        self.phase = if ev.payload & 1 == TIMER_REARM {
                            Phase::Armed
                        } else {
                            Phase::Twilight
                        };
                    }
                }
            }
            Ok(())
        })?;

        let mut records = std::mem::take(&mut self.records);
        records.sort_by_key(|r| (r.out_time, r.origin_time));
        let mut withheld = 0;
        if let Some(b) = self.params.blanking {
            let times: Vec<TimePs> = records.iter().map(|r| r.out_time).collect();
            let mask = blanking_mask(&times, b.t_b);
            withheld = mask.iter().filter(|k| !**k).count();
            records = records
                .into_iter()
                .zip(mask)
                .filter_map(|(r, keep)| keep.then_some(r))
                .collect();
        }
        Ok(DetectionOutput {
            records,
            withheld,
            avalanches: self.avalanches,
            photons_seen: self.photons_seen,
        })
    }

    fn next_dark(&self, now: TimePs, rng: &mut RngStream) -> Result<TimePs, SimError> {
        let gap = rng.exponential(1e12 / self.params.dark_rate)?;
        Ok(now + TimePs::from_ps_f64(gap).max(TimePs(1)))
    }

    /// A photon or dark carrier reaching the junction at `t`.
    fn stimulus(
        &mut self,
        t: TimePs,
        efficiency: f64,
        cause: Cause,
        origin: Option<Origin>,
        rng: &mut RngStream,
        sched: &mut crate::engine::Scheduler<'_>,
    ) -> Result<(), SimError> {
        match self.phase {
            Phase::Armed => {
                if rng.bernoulli(efficiency) {
                    self.avalanche(t, cause, origin, rng, sched)?;
                }
            }
            Phase::Quench => {}
            Phase::Twilight => {
                let dead = self.dead_end - self.dead_start;
                let s = sensitivity_within(t - self.dead_start, dead, self.params);
                if rng.bernoulli(efficiency * s) {
                    self.twilight_avalanche(t, origin, rng, sched)?;
                }
            }
        }
        Ok(())
    }

    fn avalanche(
        &mut self,
        t: TimePs,
        cause: Cause,
        origin: Option<Origin>,
        rng: &mut RngStream,
        sched: &mut crate::engine::Scheduler<'_>,
    ) -> Result<(), SimError> {
        let p = self.params;
        let since = self
            .last_avalanche
            .map(|l| (t - l).as_ps_f64())
            .unwrap_or(f64::INFINITY);
        let slow = self.slow_rate.at(t);
        let (shift, fwhm) = timing_correction(p, since, slow);
        let latency = rng.gaussian_fwhm(p.base_delay.as_ps_f64() + shift, fwhm)?;
        let out_time = (t + TimePs::from_ps_f64(latency)).max(t);
        self.records.push(PulseRecord {
            out_time,
            origin_time: t,
            cause,
            origin,
        });
        self.start_dead_period(t, rng, sched)
    }

    fn twilight_avalanche(
        &mut self,
        t: TimePs,
        origin: Option<Origin>,
        rng: &mut RngStream,
        sched: &mut crate::engine::Scheduler<'_>,
    ) -> Result<(), SimError> {
        // reported when the current dead period ends
        let out_time = self.dead_end + self.params.base_delay;
        self.records.push(PulseRecord {
            out_time,
            origin_time: t,
            cause: Cause::Twilight,
            origin,
        });
        self.start_dead_period(t, rng, sched)
    }

    fn start_dead_period(
        &mut self,
        t: TimePs,
        rng: &mut RngStream,
        sched: &mut crate::engine::Scheduler<'_>,
    ) -> Result<(), SimError> {
        let p = self.params;
        let dead = effective_dead_time(self.fast_rate.at(t), p);
        self.fast_rate.record(t);
        self.slow_rate.record(t);
        self.last_avalanche = Some(t);
        self.avalanches += 1;

        self.generation += 1;
        self.dead_start = t;
        self.dead_end = t + dead;
        let g = self.generation << 1;
        if p.tau_quench > TimePs::ZERO {
            self.phase = Phase::Quench;
            sched.schedule(SimEvent::new(
                t + p.tau_quench,
                EventKind::TimerExpiry,
                g | TIMER_TWILIGHT,
            ))?;
        } else {
            self.phase = Phase::Twilight;
        }
        sched.schedule(SimEvent::new(self.dead_end, EventKind::TimerExpiry, g | TIMER_REARM))?;

        let traps = rng.poisson(p.afterpulse.mu)?;
        for _ in 0..traps {
            let release = t + p.afterpulse.release.sample(rng)?;
            self.traps.insert(release);
            sched.schedule(SimEvent::new(release, EventKind::TrapRelease, 0))?;
        }
        Ok(())
    }
}

/// Mean added delay and jitter FWHM for an avalanche `since_ps` after the
/// previous one at smoothed rate `rate`.
pub(crate) fn timing_correction(p: &DetectorParams, since_ps: f64, rate: f64) -> (f64, f64) {
    let shift = p.shift_curve.eval(since_ps) + p.rate_shift.eval(rate);
    let settled = p.rate_jitter.eval(rate);
    let excess = p.jitter_curve.eval(since_ps);
    (shift, (settled * settled + excess * excess).sqrt())
}

/// Runs a fresh detector over `arrivals`.
pub fn detect(
    arrivals: &[Arrival],
    params: &DetectorParams,
    rng: &mut RngStream,
    duration: TimePs,
) -> Result<Vec<PulseRecord>, SimError> {
    Ok(Detector::new(params)?.run(arrivals, rng, duration)?.records)
}

/// [`detect`] for bare arrival times; origins are the arrival indices.
pub fn detect_times(
    times: &[TimePs],
    params: &DetectorParams,
    rng: &mut RngStream,
    duration: TimePs,
) -> Result<Vec<PulseRecord>, SimError> {
    let arrivals: Vec<Arrival> = times
        .iter()
        .enumerate()
        .map(|(i, t)| Arrival::new(*t, i as u64, i as u64))
        .collect();
    detect(&arrivals, params, rng, duration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{AfterpulseModel, Blanking, ReleaseModel};
    use crate::table::PiecewiseLinear;

    fn rng() -> RngStream {
        RngStream::new(42, 7)
    }

    #[test]
    fn single_photon_is_delayed_by_latency() {
        let mut p = DetectorParams::ideal(TimePs::ns(20));
        p.base_delay = TimePs::ns(9);
        let out = detect_times(&[TimePs::ns(100)], &p, &mut rng(), TimePs::us(1)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].out_time, TimePs::ns(109));
        assert_eq!(out[0].cause, Cause::Photon);
    }

    #[test]
    fn photon_in_quench_is_lost() {
        let mut p = DetectorParams::ideal(TimePs::ps(21_500));
        p.tau_quench = TimePs::ps(10_500);
        p.twilight_profile = DetectorParams::linear_twilight(p.tau_quench, p.tau_dead0);
        let out = detect_times(&[TimePs::ns(0), TimePs::ns(5)], &p, &mut rng(), TimePs::us(1)).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn twilight_photon_reported_at_dead_end() {
        let mut p = DetectorParams::ideal(TimePs::ps(29_100));
        p.tau_quench = TimePs::ns(10);
        // full sensitivity from 25 ns on
        p.twilight_profile = PiecewiseLinear::new(vec![(10_000.0, 0.0), (24_000.0, 1.0)]).unwrap();
        p.base_delay = TimePs::ns(9);
        let out = detect_times(&[TimePs::ZERO, TimePs::ns(25)], &p, &mut rng(), TimePs::us(1)).unwrap();
        let times: Vec<TimePs> = out.iter().map(|r| r.out_time).collect();
        assert_eq!(times, vec![TimePs::ns(9), TimePs::ps(29_100) + TimePs::ns(9)]);
        assert_eq!(out[1].cause, Cause::Twilight);
        assert_eq!(out[1].origin_time, TimePs::ns(25));
    }

    #[test]
    fn twilight_avalanche_restarts_dead_period() {
        let mut p = DetectorParams::ideal(TimePs::ns(20));
        p.tau_quench = TimePs::ns(10);
        p.twilight_profile = PiecewiseLinear::new(vec![(10_000.0, 0.0), (10_001.0, 1.0)]).unwrap();
        // twilight at 15 ns re-arms at 35 ns; the photon at 22 ns finds it in quench
        let t = [TimePs::ZERO, TimePs::ns(15), TimePs::ns(22), TimePs::ns(36)];
        let out = detect_times(&t, &p, &mut rng(), TimePs::us(1)).unwrap();
        let times: Vec<TimePs> = out.iter().map(|r| r.out_time).collect();
        assert_eq!(times, vec![TimePs::ZERO, TimePs::ns(20), TimePs::ns(36)]);
    }

    #[test]
    fn photon_at_rearm_instant_is_detected() {
        let p = DetectorParams::ideal(TimePs::ns(20));
        let out = detect_times(&[TimePs::ZERO, TimePs::ns(20)], &p, &mut rng(), TimePs::us(1)).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn unsorted_arrivals_rejected() {
        let p = DetectorParams::ideal(TimePs::ns(20));
        let err = detect_times(&[TimePs::ns(5), TimePs::ns(1)], &p, &mut rng(), TimePs::us(1)).unwrap_err();
        assert!(matches!(err, SimError::Unsorted { .. }));
    }

    #[test]
    fn dark_counts_only() {
        let mut p = DetectorParams::ideal(TimePs::ns(30));
        p.dark_rate = 1000.0;
        let out = detect(&[], &p, &mut rng(), TimePs::from_secs_f64(10.0)).unwrap();
        let n = out.len() as f64;
        assert!((n - 10_000.0).abs() < 5.0 * 100.0, "{n}");
        assert!(out.iter().all(|r| r.cause == Cause::Dark));
    }

    #[test]
    fn releases_outside_armed_state_discarded() {
        let mut p = DetectorParams::ideal(TimePs::ns(30));
        p.afterpulse = AfterpulseModel {
            mu: 50.0,
            release: ReleaseModel::Exponential {
                tau_trap: TimePs::ps(100),
            },
        };
        // all traps release within a few ns, deep inside the dead period
        let out = detect_times(&[TimePs::ZERO], &p, &mut rng(), TimePs::us(10)).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn afterpulses_follow_dead_period() {
        let mut p = DetectorParams::ideal(TimePs::ns(20));
        p.afterpulse = AfterpulseModel {
            mu: 3.0,
            release: ReleaseModel::Exponential {
                tau_trap: TimePs::ns(30),
            },
        };
        let times: Vec<TimePs> = (0..2000).map(|i| TimePs::us(10) * i).collect();
        let out = detect_times(&times, &p, &mut rng(), TimePs::ms(20)).unwrap();
        let aps: Vec<&PulseRecord> = out.iter().filter(|r| r.cause == Cause::Afterpulse).collect();
        assert!(!aps.is_empty());
        for r in aps {
            let since = r.origin_time.0 % TimePs::us(10).0;
            assert!(since >= TimePs::ns(20).0, "afterpulse {since} ps after parent");
        }
    }

    #[test]
    fn blanking_enforces_min_gap() {
        let mut p = DetectorParams::ideal(TimePs::ps(21_500));
        p.blanking = Some(Blanking {
            t_b: TimePs::ns(24),
            out_width: TimePs::ns(12),
        });
        let times: Vec<TimePs> = (0..1000).map(|i| TimePs::ps(22_000) * i).collect();
        let out = Detector::new(&p)
            .unwrap()
            .run(
                &times
                    .iter()
                    .enumerate()
                    .map(|(i, t)| Arrival::new(*t, i as u64, i as u64))
                    .collect::<Vec<_>>(),
                &mut rng(),
                TimePs::us(100),
            )
            .unwrap();
        assert!(out.withheld > 0);
        assert!(out
            .records
            .windows(2)
            .all(|w| w[1].out_time - w[0].out_time >= TimePs::ns(24)));
    }

    #[test]
    fn trap_state_multiset() {
        let mut t = TrapState::default();
        t.insert(TimePs::ns(5));
        t.insert(TimePs::ns(5));
        t.insert(TimePs::ns(3));
        assert_eq!(t.len(), 3);
        assert_eq!(t.earliest(), Some(TimePs::ns(3)));
        assert!(t.take(TimePs::ns(5)));
        assert!(t.take(TimePs::ns(5)));
        assert!(!t.take(TimePs::ns(5)));
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn same_seed_same_records() {
        let mut p = DetectorParams::ideal(TimePs::ns(25));
        p.efficiency = 0.6;
        p.dark_rate = 5000.0;
        p.rate_jitter = PiecewiseLinear::constant(300.0);
        let times: Vec<TimePs> = (0..5000).map(|i| TimePs::ns(37) * i).collect();
        let a = detect_times(&times, &p, &mut RngStream::new(9, 1), TimePs::ms(1)).unwrap();
        let b = detect_times(&times, &p, &mut RngStream::new(9, 1), TimePs::ms(1)).unwrap();
        assert_eq!(a, b);
    }

    fn cw(rate: f64, duration: TimePs, seed: u64) -> Vec<Arrival> {
        let cfg = crate::source::CwSourceConfig { rate, duration };
        crate::source::cw_poisson_stream(&cfg, &mut RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn non_paralyzable_rate_under_cw() {
        let tau = TimePs::ps(29_100);
        let mut p = DetectorParams::ideal(tau);
        p.efficiency = 0.65;
        for load in [0.05, 0.2, 0.5] {
            let rate = load / tau.as_secs() / p.efficiency;
            let d = TimePs::ms(20);
            let out = detect(&cw(rate, d, 3), &p, &mut rng(), d).unwrap();
            let measured = out.len() as f64 / d.as_secs();
            let expected = rate * p.efficiency / (1.0 + load);
            assert!(
                (measured / expected - 1.0).abs() < 0.02,
                "load {load}: {measured} vs {expected}"
            );
        }
    }

    #[test]
    fn interarrival_tail_is_exponential() {
        let tau = TimePs::ns(30);
        let p = DetectorParams::ideal(tau);
        let rate = 2e6;
        let d = TimePs::ms(10);
        let out = detect(&cw(rate, d, 4), &p, &mut rng(), d).unwrap();
        let mut excess: Vec<f64> = out
            .windows(2)
            .map(|w| (w[1].out_time - w[0].out_time - tau).as_ps_f64())
            .collect();
        assert!(excess.iter().all(|x| *x >= 0.0));
        excess.sort_by(f64::total_cmp);
        let n = excess.len() as f64;
        let mean = 1e12 / rate;
        let ks = excess
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let cdf = 1.0 - (-x / mean).exp();
                (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
            })
            .fold(0.0, f64::max);
        // 1% critical value of the one-sample KS statistic
        assert!(ks < 1.628 / n.sqrt(), "D = {ks} over {n} intervals");
    }

    fn busy_params(twilight: bool, blank: bool) -> DetectorParams {
        let mut p = DetectorParams::ideal(TimePs::ps(21_500));
        p.tau_quench = TimePs::ps(10_500);
        if twilight {
            p.twilight_profile = DetectorParams::linear_twilight(p.tau_quench, p.tau_dead0);
        }
        p.base_delay = TimePs::ns(7);
        p.efficiency = 0.7;
        p.dark_rate = 2e5;
        p.dead_elongation = PiecewiseLinear::new(vec![(0.0, 0.0), (3e7, 2_000.0)]).unwrap();
        p.afterpulse = AfterpulseModel {
            mu: 0.05,
            release: ReleaseModel::Exponential {
                tau_trap: TimePs::ns(15),
            },
        };
        if blank {
            p.blanking = Some(Blanking {
                t_b: TimePs::ns(24),
                out_width: TimePs::ns(12),
            });
        }
        p
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn output_stream_invariants(seed in 0u64..10_000, rate in 1e5f64..1e8, twilight: bool, blank: bool) {
            let p = busy_params(twilight, blank);
            let d = TimePs::us(200);
            let out = detect(&cw(rate, d, seed), &p, &mut RngStream::new(seed, 1), d).unwrap();
            let min_gap = if blank { TimePs::ns(24) } else { p.tau_quench };
            for r in &out {
                proptest::prop_assert!(r.out_time >= r.origin_time);
            }
            for w in out.windows(2) {
                proptest::prop_assert!(w[1].out_time - w[0].out_time >= min_gap);
                if w[1].cause == Cause::Twilight && !blank {
                    // held until the dead period started by the previous avalanche ends
                    proptest::prop_assert!(w[1].out_time >= w[0].origin_time + p.tau_dead0 + p.base_delay);
                }
            }
        }
    }
}
