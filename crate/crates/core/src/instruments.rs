//! Virtual lab instruments: TAC, coincidence unit, histogrammer, Gaussian
//! peak fitter and correlators.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_sorted, invalid, AnalysisError, SimError};
use crate::rng::{RngStream, FWHM_PER_SIGMA};
use crate::time::TimePs;

/// Fixed-width binned counts. Bin `i` covers `[origin + i·w, origin + (i+1)·w)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: TimePs,
    pub origin: TimePs,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(origin: TimePs, bin_width: TimePs, n_bins: usize) -> Result<Self, SimError> {
        if bin_width <= TimePs::ZERO {
            return Err(invalid("bin_width", "must be > 0"));
        }
        Ok(Histogram {
            bin_width,
            origin,
            counts: vec![0; n_bins],
            underflow: 0,
            overflow: 0,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn end(&self) -> TimePs {
        self.origin + self.bin_width * self.counts.len() as i64
    }

    pub fn bin_start(&self, i: usize) -> TimePs {
        self.origin + self.bin_width * i as i64
    }

    pub fn bin_center_ps(&self, i: usize) -> f64 {
        self.bin_start(i).as_ps_f64() + 0.5 * self.bin_width.as_ps_f64()
    }

    /// Bin containing `v`, if inside the range.
    pub fn bin_of(&self, v: TimePs) -> Option<usize> {
        if v < self.origin {
            return None;
        }
        let i = ((v - self.origin).0 / self.bin_width.0) as usize;
        (i < self.counts.len()).then_some(i)
    }

    pub fn add(&mut self, v: TimePs) {
        if v < self.origin {
            self.underflow += 1;
        } else {
            match self.bin_of(v) {
                Some(i) => self.counts[i] += 1,
                None => self.overflow += 1,
            }
        }
    }

    pub fn in_range(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn total(&self) -> u64 {
        self.in_range() + self.underflow + self.overflow
    }

    pub fn mode(&self) -> Option<usize> {
        let (i, c) = self
            .counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
        (*c > 0).then_some(i)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_start_ps,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{}", self.bin_start(i).as_ps(), c);
        }
        let _ = writeln!(s, "#underflow={},#overflow={}", self.underflow, self.overflow);
        s
    }

    /// Parses the format written by [`Histogram::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, SimError> {
        let bad = |m: &str| invalid("histogram_csv", m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("bin_start_ps,count") {
            return Err(bad("missing header"));
        }
        let mut starts = Vec::new();
        let mut counts = Vec::new();
        let mut under = None;
        let mut over = None;
        for line in lines {
            if let Some(rest) = line.strip_prefix('#') {
                for field in rest.split(",#") {
                    let (k, v) = field.split_once('=').ok_or_else(|| bad("bad trailer"))?;
                    let v: u64 = v.parse().map_err(|_| bad("bad trailer value"))?;
                    match k {
                        "underflow" => under = Some(v),
                        "overflow" => over = Some(v),
                        _ => return Err(bad("unknown trailer key")),
                    }
                }
                continue;
            }
            let (a, b) = line.split_once(',').ok_or_else(|| bad("bad row"))?;
            starts.push(a.parse::<i64>().map_err(|_| bad("bad bin start"))?);
            counts.push(b.parse::<u64>().map_err(|_| bad("bad count"))?);
        }
        if starts.len() < 2 {
            return Err(bad("need at least two bins"));
        }
        let w = starts[1] - starts[0];
        if w <= 0 || starts.windows(2).any(|p| p[1] - p[0] != w) {
            return Err(bad("bins are not evenly spaced"));
        }
        Ok(Histogram {
            bin_width: TimePs(w),
            origin: TimePs(starts[0]),
            counts,
            underflow: under.ok_or_else(|| bad("missing underflow"))?,
            overflow: over.ok_or_else(|| bad("missing overflow"))?,
        })
    }
}

/// Histogram of `values` over `[range.0, range.1)`.
pub fn build_histogram(values: &[TimePs], bin_width: TimePs, range: (TimePs, TimePs)) -> Result<Histogram, SimError> {
    if bin_width <= TimePs::ZERO {
        return Err(invalid("bin_width", "must be > 0"));
    }
    if range.1 <= range.0 {
        return Err(invalid("range", "end must exceed start"));
    }
    let span = (range.1 - range.0).0;
    let n = ((span + bin_width.0 - 1) / bin_width.0) as usize;
    let mut h = Histogram::new(range.0, bin_width, n)?;
    for &v in values {
        if v >= range.1 {
            h.overflow += 1;
        } else {
            h.add(v);
        }
    }
    Ok(h)
}

/// Gaps between consecutive pulses.
pub fn interarrival_times(pulses: &[TimePs]) -> Vec<TimePs> {
    pulses.windows(2).map(|w| w[1] - w[0]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TacConfig {
    /// Full-scale range; also the conversion dead period.
    pub range: TimePs,
    /// Instrument resolution, ps FWHM.
    pub instrument_fwhm: f64,
}

impl TacConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.range <= TimePs::ZERO {
            return Err(invalid("tac.range", "must be > 0"));
        }
        if !(self.instrument_fwhm >= 0.0) {
            return Err(invalid("tac.instrument_fwhm", "must be >= 0"));
        }
        Ok(())
    }
}

/// Intervals from [`tac_run`] plus the number of starts that opened a conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct TacRun {
    pub intervals: Vec<TimePs>,
    pub accepted_starts: usize,
}

/// Single-stop TAC: each accepted start is paired with the first stop strictly
/// after it within `range`. A start blocks further starts for `range`.
pub fn tac_measure(
    starts: &[TimePs],
    stops: &[TimePs],
    cfg: &TacConfig,
    rng: &mut RngStream,
) -> Result<Vec<TimePs>, SimError> {
    Ok(tac_run(starts, stops, cfg, rng)?.intervals)
}

/// [`tac_measure`] that also reports accepted starts, so starts without a
/// stop in range can be accounted for.
pub fn tac_run(starts: &[TimePs], stops: &[TimePs], cfg: &TacConfig, rng: &mut RngStream) -> Result<TacRun, SimError> {
    cfg.validate()?;
    ensure_sorted("starts", starts)?;
    ensure_sorted("stops", stops)?;
    let mut intervals = Vec::new();
    let mut accepted_starts = 0;
    let mut j = 0usize;
    let mut busy_until = TimePs(i64::MIN);
    for &s in starts {
        if s < busy_until {
            continue;
        }
        accepted_starts += 1;
        busy_until = s + cfg.range;
        while j < stops.len() && stops[j] <= s {
            j += 1;
        }
        let Some(&stop) = stops.get(j) else { continue };
        let dt = stop - s;
        if dt <= cfg.range {
            let v = rng.gaussian_fwhm(dt.as_ps_f64(), cfg.instrument_fwhm)?;
            intervals.push(TimePs::from_ps_f64(v));
        }
    }
    Ok(TacRun {
        intervals,
        accepted_starts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coincidence {
    /// Time the gate fires (the later of the two inputs).
    pub time: TimePs,
    pub a: usize,
    pub b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coincidences {
    pub out_width: TimePs,
    pub events: Vec<Coincidence>,
}

impl Coincidences {
    pub fn times(&self) -> Vec<TimePs> {
        self.events.iter().map(|c| c.time).collect()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Greedy earliest-pair coincidence matching: `|t_a − t_b| < window`, each
/// input pulse used at most once.
pub fn coincidence(a: &[TimePs], b: &[TimePs], window: TimePs, out_width: TimePs) -> Result<Coincidences, SimError> {
    ensure_sorted("a", a)?;
    ensure_sorted("b", b)?;
    let mut events = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        let d = a[i] - b[j];
        if d.0.abs() < window.0 {
            events.push(Coincidence {
                time: a[i].max(b[j]),
                a: i,
                b: j,
            });
            i += 1;
            j += 1;
        } else if d.is_negative() {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(Coincidences { out_width, events })
}

/// Result of [`gaussian_fit`]; `peak` and `fwhm` are in picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub peak: f64,
    pub fwhm: f64,
    pub amplitude: f64,
    /// Reduced chi-square of the fit window.
    pub residual: f64,
}

impl GaussianFit {
    pub fn sigma(&self) -> f64 {
        self.fwhm / FWHM_PER_SIGMA
    }
}

/// Weighted least-squares Gaussian over the contiguous bins around the mode
/// whose counts are at least half the mode count.
pub fn gaussian_fit(h: &Histogram) -> Result<GaussianFit, AnalysisError> {
    let m = h.mode().ok_or(AnalysisError::TooFewBins { found: 0, needed: 5 })?;
    let populated = {
        let left = h.counts[..m].iter().rev().take_while(|c| **c > 0).count();
        let right = h.counts[m + 1..].iter().take_while(|c| **c > 0).count();
        left + right + 1
    };
    if populated < 5 {
        return Err(AnalysisError::TooFewBins {
            found: populated,
            needed: 5,
        });
    }
    let half = h.counts[m] as f64 / 2.0;
    let mut lo = m;
    while lo > 0 && h.counts[lo - 1] as f64 >= half {
        lo -= 1;
    }
    let mut hi = m;
    while hi + 1 < h.counts.len() && h.counts[hi + 1] as f64 >= half {
        hi += 1;
    }
    let found = hi - lo + 1;
    if found < 3 {
        return Err(AnalysisError::TooFewBins { found, needed: 3 });
    }
    let xs: Vec<f64> = (lo..=hi).map(|i| h.bin_center_ps(i)).collect();
    let ys: Vec<f64> = (lo..=hi).map(|i| h.counts[i] as f64).collect();
    fit_gaussian_points(&xs, &ys)
}

/// Gaussian fit to `(x, y)` with Poisson weights `1/y`.
pub(crate) fn fit_gaussian_points(xs: &[f64], ys: &[f64]) -> Result<GaussianFit, AnalysisError> {
    // centre x to keep the normal equations well conditioned
    let x0 = xs.iter().sum::<f64>() / xs.len() as f64;
    let scale = xs.iter().map(|x| (x - x0).abs()).fold(0.0, f64::max).max(1.0);
    let u: Vec<f64> = xs.iter().map(|x| (x - x0) / scale).collect();
    let w: Vec<f64> = ys.iter().map(|y| 1.0 / y.max(1.0)).collect();

    // log-parabola start: ln y = c0 + c1 u + c2 u², weighted by y
    let mut ata = [[0.0; 3]; 3];
    let mut atb = [0.0; 3];
    for (ui, yi) in u.iter().zip(ys) {
        if *yi <= 0.0 {
            continue;
        }
        let basis = [1.0, *ui, ui * ui];
        for r in 0..3 {
            for c in 0..3 {
                ata[r][c] += yi * basis[r] * basis[c];
            }
            atb[r] += yi * basis[r] * yi.ln();
        }
    }
    let c = solve3(ata, atb).ok_or_else(|| AnalysisError::NoConvergence("singular start".into()))?;
    let (mut amp, mut mu, mut sig) = if c[2] < 0.0 {
        let s2 = -1.0 / (2.0 * c[2]);
        let mu = c[1] * s2;
        (((c[0] + mu * mu / (2.0 * s2)).exp()), mu, s2.sqrt())
    } else {
        let ymax = ys.iter().cloned().fold(0.0, f64::max);
        (ymax, 0.0, 0.5)
    };

    // data weights bias low-count fits; refit twice with model weights
    let mut w = w;
    let mut cur = 0.0;
    for pass in 0..3 {
        if pass > 0 {
            w = u
                .iter()
                .map(|ui| 1.0 / (amp * (-(ui - mu).powi(2) / (2.0 * sig * sig)).exp()).max(1.0))
                .collect();
        }
        let chi2 = |a: f64, m: f64, s: f64| -> f64 {
            u.iter()
                .zip(ys)
                .zip(&w)
                .map(|((ui, yi), wi)| {
                    let r = yi - a * (-(ui - m).powi(2) / (2.0 * s * s)).exp();
                    wi * r * r
                })
                .sum()
        };

        let mut lambda = 1e-3;
        cur = chi2(amp, mu, sig);
        for _ in 0..200 {
            let mut jtj = [[0.0; 3]; 3];
            let mut jtr = [0.0; 3];
            for ((ui, yi), wi) in u.iter().zip(ys).zip(&w) {
                let d = ui - mu;
                let e = (-(d * d) / (2.0 * sig * sig)).exp();
                let f = amp * e;
                let g = [e, f * d / (sig * sig), f * d * d / (sig * sig * sig)];
                let r = yi - f;
                for a in 0..3 {
                    for b in 0..3 {
                        jtj[a][b] += wi * g[a] * g[b];
                    }
                    jtr[a] += wi * g[a] * r;
                }
            }
            let mut improved = false;
            for _ in 0..20 {
                let mut m = jtj;
                for (k, row) in m.iter_mut().enumerate() {
                    row[k] *= 1.0 + lambda;
                }
                let Some(step) = solve3(m, jtr) else {
                    lambda *= 10.0;
                    continue;
                };
                let (na, nm, ns) = (amp + step[0], mu + step[1], (sig + step[2]).abs().max(1e-9));
                let next = chi2(na, nm, ns);
                if next <= cur {
                    let rel = (cur - next) / cur.max(1e-300);
                    amp = na;
                    mu = nm;
                    sig = ns;
                    cur = next;
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = rel > 1e-12;
                    break;
                }
                lambda *= 10.0;
            }
            if !improved {
                break;
            }
        }
    }
    if !(sig.is_finite() && amp.is_finite() && mu.is_finite()) || amp <= 0.0 {
        return Err(AnalysisError::NoConvergence("gaussian parameters diverged".into()));
    }
    let dof = (xs.len() as f64 - 3.0).max(1.0);
    Ok(GaussianFit {
        peak: x0 + mu * scale,
        fwhm: FWHM_PER_SIGMA * sig * scale,
        amplitude: amp,
        residual: cur / dof,
    })
}

#[allow(clippy::needless_range_loop)]
pub(crate) fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let s: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Histogram of all forward differences `t_j − t_i` (j > i) below `max_lag`.
pub fn autocorrelation(pulses: &[TimePs], max_lag: TimePs, bin_width: TimePs) -> Result<Histogram, SimError> {
    ensure_sorted("pulses", pulses)?;
    if max_lag <= TimePs::ZERO {
        return Err(invalid("max_lag", "must be > 0"));
    }
    let n = ((max_lag.0 + bin_width.0.max(1) - 1) / bin_width.0.max(1)) as usize;
    let mut h = Histogram::new(TimePs::ZERO, bin_width, n)?;
    for (i, &t) in pulses.iter().enumerate() {
        for &u in &pulses[i + 1..] {
            let lag = u - t;
            if lag >= max_lag {
                break;
            }
            h.add(lag);
        }
    }
    Ok(h)
}

/// Histogram of `t_b − t_a` over all pairs with lag in `[lag_min, lag_max)`.
pub fn cross_correlation(
    a: &[TimePs],
    b: &[TimePs],
    lag_min: TimePs,
    lag_max: TimePs,
    bin_width: TimePs,
) -> Result<Histogram, SimError> {
    ensure_sorted("a", a)?;
    ensure_sorted("b", b)?;
    if lag_max <= lag_min {
        return Err(invalid("lag_max", "must exceed lag_min"));
    }
    let n = (((lag_max - lag_min).0 + bin_width.0.max(1) - 1) / bin_width.0.max(1)) as usize;
    let mut h = Histogram::new(lag_min, bin_width, n)?;
    let mut first = 0usize;
    for &t in a {
        while first < b.len() && b[first] - t < lag_min {
            first += 1;
        }
        for &u in &b[first..] {
            let lag = u - t;
            if lag >= lag_max {
                break;
            }
            h.add(lag);
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn histogram_basics() {
        let h = build_histogram(&[], TimePs::ns(1), (TimePs::ZERO, TimePs::ns(10))).unwrap();
        assert_eq!(h.counts, vec![0; 10]);
        let v = [TimePs::ps(500), TimePs::ps(1500)];
        let h = build_histogram(&v, TimePs::ns(1), (TimePs::ZERO, TimePs::ns(5))).unwrap();
        assert_eq!(&h.counts[..3], &[1, 1, 0]);
        assert!(build_histogram(&v, TimePs::ZERO, (TimePs::ZERO, TimePs::ns(5))).is_err());
    }

    #[test]
    fn histogram_conserves_61638_events() {
        let mut rng = RngStream::new(1, 0);
        let v: Vec<TimePs> = (0..61_638)
            .map(|_| TimePs::from_ps_f64(rng.exponential(20_000_000.0).unwrap()))
            .collect();
        let h = build_histogram(&v, TimePs::ns(1), (TimePs::ZERO, TimePs::ns(550))).unwrap();
        assert_eq!(h.total(), 61_638);
    }

    #[test]
    fn csv_roundtrip_and_format() {
        let v = [TimePs::ps(-1), TimePs::ps(500), TimePs::ps(1500), TimePs::ns(9)];
        let h = build_histogram(&v, TimePs::ns(1), (TimePs::ZERO, TimePs::ns(3))).unwrap();
        let csv = h.to_csv();
        assert!(csv.starts_with("bin_start_ps,count\n0,1\n1000,1\n2000,0\n"));
        assert!(csv.ends_with("#underflow=1,#overflow=1\n"));
        assert_eq!(Histogram::from_csv(&csv).unwrap(), h);
    }

    #[test]
    fn tac_single_interval_and_no_stop() {
        let cfg = TacConfig {
            range: TimePs::ns(100),
            instrument_fwhm: 0.0,
        };
        let mut rng = RngStream::new(1, 0);
        let v = tac_measure(&[TimePs::ZERO], &[TimePs::ns(10)], &cfg, &mut rng).unwrap();
        assert_eq!(v, vec![TimePs::ns(10)]);
        let v = tac_measure(&[TimePs::ZERO], &[TimePs::ns(200)], &cfg, &mut rng).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn tac_ignores_starts_during_conversion() {
        let cfg = TacConfig {
            range: TimePs::ns(100),
            instrument_fwhm: 0.0,
        };
        let starts = [TimePs::ZERO, TimePs::ns(50), TimePs::ns(100)];
        let stops = [TimePs::ns(60), TimePs::ns(120)];
        let v = tac_measure(&starts, &stops, &cfg, &mut RngStream::new(1, 0)).unwrap();
        assert_eq!(v, vec![TimePs::ns(60), TimePs::ns(20)]);
    }

    #[test]
    fn tac_instrument_width() {
        let cfg = TacConfig {
            range: TimePs::ns(100),
            instrument_fwhm: 17.7,
        };
        let n = 200_000;
        let starts: Vec<TimePs> = (0..n).map(|i| TimePs::ns(200) * i).collect();
        let stops: Vec<TimePs> = starts.iter().map(|s| *s + TimePs::ns(10)).collect();
        let v = tac_measure(&starts, &stops, &cfg, &mut RngStream::new(2, 0)).unwrap();
        let xs: Vec<f64> = v.iter().map(|t| t.as_ps_f64()).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let s = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt();
        // integer-ps rounding adds 1/12 ps² of variance
        assert!((s - (7.5165f64.powi(2) + 1.0 / 12.0).sqrt()).abs() < 0.1, "sigma {s}");
    }

    #[test]
    fn coincidence_window() {
        let ns = TimePs::ns;
        let c = coincidence(&[ns(0)], &[ns(3)], ns(5), ns(10)).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.events[0].time, ns(3));
        let c = coincidence(&[ns(0)], &[ns(6)], ns(5), ns(10)).unwrap();
        assert!(c.is_empty());
        let c = coincidence(&[ns(0), ns(1)], &[TimePs::ps(500)], ns(5), ns(10)).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!((c.events[0].a, c.events[0].b), (0, 0));
    }

    fn gaussian_hist(peak: f64, fwhm: f64, n: usize, bin: i64, seed: u64) -> Histogram {
        let mut rng = RngStream::new(seed, 0);
        let v: Vec<TimePs> = (0..n)
            .map(|_| TimePs::from_ps_f64(rng.gaussian_fwhm(peak, fwhm).unwrap()))
            .collect();
        build_histogram(&v, TimePs::ps(bin), (TimePs::ns(3), TimePs::ns(7))).unwrap()
    }

    #[test]
    fn gaussian_fit_round_trip() {
        let h = gaussian_hist(5000.0, 335.0, 1_000_000, 25, 3);
        let f = gaussian_fit(&h).unwrap();
        assert!((f.peak - 5000.0).abs() < 2.0, "peak {}", f.peak);
        assert!((f.fwhm - 335.0).abs() < 3.0, "fwhm {}", f.fwhm);
    }

    #[test]
    fn gaussian_fit_single_bin_fails() {
        let mut h = Histogram::new(TimePs::ZERO, TimePs::ps(10), 20).unwrap();
        h.counts[4] = 100;
        assert!(matches!(gaussian_fit(&h), Err(AnalysisError::TooFewBins { .. })));
        let empty = Histogram::new(TimePs::ZERO, TimePs::ps(10), 20).unwrap();
        assert!(gaussian_fit(&empty).is_err());
    }

    #[test]
    fn gaussian_fit_picks_taller_mode() {
        let mut rng = RngStream::new(4, 0);
        let mut v: Vec<TimePs> = Vec::new();
        for _ in 0..300_000 {
            v.push(TimePs::from_ps_f64(rng.gaussian_fwhm(4000.0, 200.0).unwrap()));
        }
        for _ in 0..200_000 {
            v.push(TimePs::from_ps_f64(rng.gaussian_fwhm(6000.0, 200.0).unwrap()));
        }
        let h = build_histogram(&v, TimePs::ps(20), (TimePs::ns(3), TimePs::ns(7))).unwrap();
        let f = gaussian_fit(&h).unwrap();
        assert!((f.peak - 4000.0).abs() < 5.0);
        assert!((f.fwhm - 200.0).abs() < 8.0);
    }

    #[test]
    fn gaussian_fit_scale_equivariant() {
        let h = gaussian_hist(5000.0, 300.0, 100_000, 25, 5);
        let f1 = gaussian_fit(&h).unwrap();
        let mut h3 = h.clone();
        h3.counts.iter_mut().for_each(|c| *c *= 3);
        let f3 = gaussian_fit(&h3).unwrap();
        assert!((f1.peak - f3.peak).abs() < 1e-6);
        assert!((f1.fwhm - f3.fwhm).abs() < 1e-6);
        assert!((f3.amplitude / f1.amplitude - 3.0).abs() < 1e-9);
    }

    #[test]
    fn autocorrelation_of_comb() {
        let period = TimePs::ps(520);
        let v: Vec<TimePs> = (0..200).map(|i| period * i).collect();
        let h = autocorrelation(&v, TimePs::ns(20), TimePs::ps(40)).unwrap();
        for (i, c) in h.counts.iter().enumerate() {
            let start = h.bin_start(i).0;
            let hits_multiple = (start..start + 40).any(|x| x % 520 == 0 && x > 0);
            if *c > 0 {
                assert!(hits_multiple, "counts in bin {i} off the comb");
            }
        }
        assert!(h.in_range() > 0);
    }

    #[test]
    fn cross_correlation_lags() {
        let a = [TimePs::ns(10), TimePs::ns(100)];
        let b = [TimePs::ns(5), TimePs::ns(12), TimePs::ns(40)];
        let h = cross_correlation(&a, &b, TimePs::ns(-10), TimePs::ns(40), TimePs::ns(1)).unwrap();
        // lags: -5, 2, 30 from a[0]; none within range from a[1]
        assert_eq!(h.in_range(), 3);
        assert_eq!(h.counts[5], 1);
        assert_eq!(h.counts[12], 1);
        assert_eq!(h.counts[40], 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn histogram_conserves_counts(vals in proptest::collection::vec(-5_000i64..50_000, 0..500)) {
            let v: Vec<TimePs> = vals.iter().map(|x| TimePs(*x)).collect();
            let h = build_histogram(&v, TimePs::ps(700), (TimePs::ZERO, TimePs::ps(40_000))).unwrap();
            prop_assert_eq!(h.total(), v.len() as u64);
        }

        #[test]
        fn autocorrelation_translation_invariant(gaps in proptest::collection::vec(1i64..5_000, 1..200), shift in 0i64..1_000_000) {
            let mut t = 0;
            let v: Vec<TimePs> = gaps.iter().map(|g| { t += g; TimePs(t) }).collect();
            let w: Vec<TimePs> = v.iter().map(|x| *x + TimePs(shift)).collect();
            let a = autocorrelation(&v, TimePs::ps(20_000), TimePs::ps(100)).unwrap();
            let b = autocorrelation(&w, TimePs::ps(20_000), TimePs::ps(100)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
