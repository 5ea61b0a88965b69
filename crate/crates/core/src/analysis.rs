//! Characterization analyses: dead time, afterpulse spectroscopy, twilight
//! and shift/jitter curves, distinguishability, heralding and key rate.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::AnalysisError;
use crate::instruments::{build_histogram, fit_gaussian_points, gaussian_fit, GaussianFit, Histogram};
use crate::time::TimePs;

/// Bins inspected when estimating the post-onset plateau level.
const PLATEAU_BINS: usize = 50;

fn median(mut v: Vec<u64>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

/// Onset of the inter-arrival histogram: the first bin above 10% of the
/// plateau, refined inside that bin by linear interpolation against the
/// following bin.
pub fn estimate_dead_time(h: &Histogram) -> Result<TimePs, AnalysisError> {
    let max = h.counts.iter().copied().max().unwrap_or(0);
    if max == 0 {
        return Err(AnalysisError::NoOnset);
    }
    let rough = h
        .counts
        .iter()
        .position(|&c| c as f64 > 0.1 * max as f64)
        .ok_or(AnalysisError::NoOnset)?;
    let from = (rough + 1).min(h.n_bins() - 1);
    let to = (from + PLATEAU_BINS).min(h.n_bins());
    let plateau = median(h.counts[from..to].to_vec()).max(1.0);
    let k = h
        .counts
        .iter()
        .position(|&c| c as f64 > 0.1 * plateau)
        .ok_or(AnalysisError::NoOnset)?;
    // the level just past the edge; the plateau median is biased by afterpulses
    let level = h.counts.get(k + 1).map_or(plateau, |&c| (c as f64).max(1.0));
    let frac = 1.0 - (h.counts[k] as f64 / level).min(1.0);
    let w = h.bin_width.as_ps_f64();
    Ok(h.bin_start(k) + TimePs::from_ps_f64(frac * w))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopyOptions {
    /// Trap lifetime guess; the background fit starts `5·expected_tau_trap`
    /// past the dead time unless `tail_cut` is set.
    pub expected_tau_trap: TimePs,
    pub tail_cut: Option<TimePs>,
    /// Bins closer than this to the dead time are left out of the lifetime
    /// fit; twilight pile-up lands there.
    pub skip: TimePs,
    /// Reduced chi-square above which a single-lifetime fit is flagged.
    pub residual_threshold: f64,
}

impl Default for SpectroscopyOptions {
    fn default() -> Self {
        SpectroscopyOptions {
            expected_tau_trap: TimePs::ns(32),
            tail_cut: None,
            skip: TimePs::ns(2),
            residual_threshold: 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfterpulseResult {
    pub p_afterpulse: f64,
    pub tau_trap: TimePs,
    /// Reduced chi-square of the excess fit between the dead time and the tail cut.
    pub residual: f64,
    /// Set when `residual` exceeds the threshold: one lifetime does not describe the excess.
    pub flagged: bool,
    /// Fitted background decay constant.
    pub background_tau: TimePs,
    /// Afterpulse events attributed by the fit.
    pub excess_counts: f64,
}

/// Poisson regression `ln μ = a + b·x` by iteratively reweighted least squares.
fn poisson_loglinear(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), AnalysisError> {
    let n = xs.len() as f64;
    let mean_y = ys.iter().sum::<f64>() / n;
    if mean_y <= 0.0 {
        return Err(AnalysisError::InvalidInput("empty background tail".into()));
    }
    let x0 = xs.iter().sum::<f64>() / n;
    let (mut a, mut b) = (mean_y.ln(), 0.0);
    for _ in 0..100 {
        let (mut s0, mut s1, mut s2, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            let u = x - x0;
            let mu = (a + b * u).exp();
            s0 += mu;
            s1 += mu * u;
            s2 += mu * u * u;
            g0 += y - mu;
            g1 += (y - mu) * u;
        }
        let det = s0 * s2 - s1 * s1;
        if det.abs() < 1e-300 {
            return Err(AnalysisError::NoConvergence("singular background fit".into()));
        }
        let da = (s2 * g0 - s1 * g1) / det;
        let db = (s0 * g1 - s1 * g0) / det;
        a += da;
        b += db;
        if da.abs() < 1e-12 && db.abs() < 1e-15 {
            break;
        }
    }
    if !(a.is_finite() && b.is_finite()) {
        return Err(AnalysisError::NoConvergence("background fit diverged".into()));
    }
    Ok((a - b * x0, b))
}

/// Best non-negative amplitude for `bg + A·f` under Poisson deviance, and the deviance.
fn fit_amplitude(ys: &[f64], bg: &[f64], f: &[f64]) -> (f64, f64) {
    let dev = |amp: f64| -> f64 {
        ys.iter()
            .zip(bg)
            .zip(f)
            .map(|((y, b), fi)| {
                let mu = b + amp * fi;
                if *y > 0.0 {
                    2.0 * (y * (y / mu).ln() - (y - mu))
                } else {
                    2.0 * mu
                }
            })
            .sum()
    };
    // Newton on the score, which is monotone decreasing in A
    let mut amp = {
        let num: f64 = ys.iter().zip(bg).map(|(y, b)| y - b).sum();
        let den: f64 = f.iter().sum();
        (num / den).max(0.0)
    };
    for _ in 0..60 {
        let (mut g, mut hss) = (0.0, 0.0);
        for ((y, b), fi) in ys.iter().zip(bg).zip(f) {
            let mu = b + amp * fi;
            g += fi * (y / mu - 1.0);
            hss += fi * fi * y / (mu * mu);
        }
        if hss <= 0.0 {
            break;
        }
        let next = (amp + g / hss).max(0.0);
        if (next - amp).abs() <= 1e-12 * amp.max(1e-12) {
            amp = next;
            break;
        }
        amp = next;
    }
    (amp, dev(amp))
}

/// Deep-level spectroscopy on an inter-arrival histogram: fit the far-tail
/// background, then a single exponential to the excess right after the dead
/// time. The bin containing the dead time is skipped.
pub fn afterpulse_spectroscopy(
    h: &Histogram,
    tau_dead: TimePs,
    opts: &SpectroscopyOptions,
) -> Result<AfterpulseResult, AnalysisError> {
    let cut = opts.tail_cut.unwrap_or(opts.expected_tau_trap * 5);
    let w = h.bin_width.as_ps_f64();
    let start = h
        .bin_of(tau_dead + opts.skip)
        .map(|k| k + 1)
        .ok_or_else(|| AnalysisError::InvalidInput("dead time outside histogram".into()))?;
    let tail_from = h
        .bin_of(tau_dead + cut)
        .ok_or_else(|| AnalysisError::InvalidInput("histogram does not reach the tail cut".into()))?;
    if h.n_bins() < tail_from + 10 {
        return Err(AnalysisError::TooFewBins {
            found: h.n_bins().saturating_sub(tail_from),
            needed: 10,
        });
    }
    let total = h.total() as f64;
    let xs: Vec<f64> = (0..h.n_bins()).map(|i| h.bin_center_ps(i)).collect();
    let ys: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();

    let (a, b) = poisson_loglinear(&xs[tail_from..], &ys[tail_from..])?;
    let bg: Vec<f64> = xs.iter().map(|x| (a + b * x).exp()).collect();
    let background_tau = if b < 0.0 {
        TimePs::from_ps_f64((-1.0 / b).min(i64::MAX as f64 / 2.0))
    } else {
        TimePs::MAX
    };

    let (xf, yf, bf) = (&xs[start..], &ys[start..], &bg[start..]);
    let raw_excess: f64 = yf[..tail_from - start].iter().zip(bf).map(|(y, b)| y - b).sum();
    let sigma = bf[..tail_from - start].iter().sum::<f64>().sqrt().max(1.0);
    if raw_excess < -5.0 * sigma {
        return Err(AnalysisError::NegativeExcess {
            excess: raw_excess,
            sigma,
        });
    }

    let d = tau_dead.as_ps_f64();
    let shape = |tau: f64| -> Vec<f64> { xf.iter().map(|x| (-(x - d) / tau).exp()).collect() };
    let objective = |tau: f64| -> (f64, f64) { fit_amplitude(yf, bf, &shape(tau)) };

    // coarse log grid then golden-section refinement
    let lo = w.max(100.0);
    let hi = cut.as_ps_f64().max(lo * 2.0) * 2.0;
    let steps = 60;
    let grid: Vec<f64> = (0..=steps)
        .map(|i| lo * (hi / lo).powf(i as f64 / steps as f64))
        .collect();
    let best = grid
        .iter()
        .enumerate()
        .map(|(i, &t)| (i, objective(t).1))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let (mut l, mut r) = (grid[best.saturating_sub(1)], grid[(best + 1).min(steps)]);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = r - phi * (r - l);
    let mut e = l + phi * (r - l);
    let (mut fc, mut fe) = (objective(c).1, objective(e).1);
    for _ in 0..60 {
        if fc < fe {
            r = e;
            e = c;
            fe = fc;
            c = r - phi * (r - l);
            fc = objective(c).1;
        } else {
            l = c;
            c = e;
            fc = fe;
            e = l + phi * (r - l);
            fe = objective(e).1;
        }
    }
    let tau = 0.5 * (l + r);
    let (amp, _) = objective(tau);
    if !(tau.is_finite() && amp.is_finite()) {
        return Err(AnalysisError::NoConvergence("excess fit diverged".into()));
    }

    // excess density at the dead time is amp / w per ps; integrate from D to infinity
    let excess_counts = amp / w * tau;
    let p = (excess_counts / total).clamp(0.0, 1.0);

    let n_near = tail_from - start;
    let f = shape(tau);
    let chi2: f64 = (0..n_near)
        .map(|i| {
            let mu = bf[i] + amp * f[i];
            (yf[i] - mu).powi(2) / mu.max(1.0)
        })
        .sum();
    let residual = chi2 / (n_near as f64 - 2.0).max(1.0);
    Ok(AfterpulseResult {
        p_afterpulse: p,
        tau_trap: TimePs::from_ps_f64(tau),
        residual,
        flagged: residual > opts.residual_threshold,
        background_tau,
        excess_counts,
    })
}

/// Detection statistics of one pulse-pair scan point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairPointStats {
    pub delta_t: TimePs,
    /// Pairs whose first pulse carried a photon.
    pub first_sent: u64,
    pub first_detected: u64,
    /// Pairs with both pulses occupied and the first one detected.
    pub both_sent_first_detected: u64,
    pub both_detected: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwilightPoint {
    pub delta_t: TimePs,
    /// `None` when no first photon was detected at this point.
    pub relative_efficiency: Option<f64>,
    pub err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwilightCurve {
    pub points: Vec<TwilightPoint>,
}

impl TwilightCurve {
    /// Width of the rise between `lo` and `hi` relative efficiency, by linear
    /// interpolation between scan points. `None` if the curve never crosses both.
    pub fn rise_width(&self, lo: f64, hi: f64) -> Option<TimePs> {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .filter_map(|p| p.relative_efficiency.map(|r| (p.delta_t.as_ps_f64(), r)))
            .collect();
        let cross = |level: f64, from: f64| -> Option<f64> {
            pts.windows(2).filter(|w| w[1].0 >= from).find_map(|w| {
                let ((x0, y0), (x1, y1)) = (w[0], w[1]);
                (y0 < level && y1 >= level).then(|| x0 + (level - y0) / (y1 - y0) * (x1 - x0))
            })
        };
        let a = cross(lo, f64::MIN)?;
        let b = cross(hi, a)?;
        Some(TimePs::from_ps_f64((b - a).max(0.0)))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,err\n");
        for p in &self.points {
            if let (Some(r), Some(e)) = (p.relative_efficiency, p.err) {
                let _ = writeln!(s, "{},{},{}", p.delta_t.as_ps(), r, e);
            }
        }
        s
    }
}

/// Relative efficiency of the second photon:
/// `P(second | first detected) / P(first detected)`.
pub fn twilight_curve(scan: &[PairPointStats]) -> TwilightCurve {
    let points = scan
        .iter()
        .map(|s| {
            if s.first_detected == 0 || s.first_sent == 0 || s.both_sent_first_detected == 0 {
                return TwilightPoint {
                    delta_t: s.delta_t,
                    relative_efficiency: None,
                    err: None,
                };
            }
            let p_first = s.first_detected as f64 / s.first_sent as f64;
            let n = s.both_sent_first_detected as f64;
            let q = s.both_detected as f64 / n;
            TwilightPoint {
                delta_t: s.delta_t,
                relative_efficiency: Some(q / p_first),
                err: Some((q * (1.0 - q) / n).sqrt().max(1.0 / n) / p_first),
            }
        })
        .collect();
    TwilightCurve { points }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftJitterPoint {
    pub delta_t: TimePs,
    /// Mean of measured minus true interval, ps.
    pub shift: f64,
    /// Gaussian-fit FWHM of the interval distribution, ps.
    pub fwhm: f64,
    pub samples: usize,
}

/// Minimum intervals per point for [`shift_and_jitter_vs_dt`].
pub const MIN_PAIR_SAMPLES: usize = 1000;

/// Gaussian fit to raw values, binned at an eighth of their robust spread
/// (scaled median absolute deviation) over ±8 spreads around the median.
/// Identical values give a zero-width fit centred on them.
pub fn fit_values(values: &[TimePs]) -> Result<GaussianFit, AnalysisError> {
    if values.len() < 2 {
        return Err(AnalysisError::TooFewBins {
            found: values.len(),
            needed: 2,
        });
    }
    let mut v: Vec<i64> = values.iter().map(|t| t.0).collect();
    v.sort_unstable();
    let med = v[v.len() / 2];
    if v[0] == v[v.len() - 1] {
        return Ok(GaussianFit {
            peak: med as f64,
            fwhm: 0.0,
            amplitude: v.len() as f64,
            residual: 0.0,
        });
    }
    let mut dev: Vec<i64> = v.iter().map(|x| (x - med).abs()).collect();
    dev.sort_unstable();
    let spread = (1.4826 * dev[dev.len() / 2] as f64).max(1.0);
    let bin = ((spread / 6.0).round() as i64).max(1);
    // fit within 2.5 robust spreads of the median; a window picked
    // from the noisy mode bin narrows the fit at low counts
    let half = TimePs::from_ps_f64(2.5 * spread) + TimePs(bin);
    let h = build_histogram(values, TimePs(bin), (TimePs(med) - half, TimePs(med) + half))
        .map_err(|e| AnalysisError::InvalidInput(e.to_string()))?;
    if h.counts.iter().filter(|c| **c > 0).count() < 5 {
        return gaussian_fit(&h);
    }
    let xs: Vec<f64> = (0..h.n_bins()).map(|i| h.bin_center_ps(i)).collect();
    let ys: Vec<f64> = h.counts.iter().map(|c| *c as f64).collect();
    fit_gaussian_points(&xs, &ys)
}

/// Mean shift from `reference` and Gaussian FWHM of a set of intervals.
pub fn shift_and_fwhm(intervals: &[TimePs], reference: TimePs) -> Result<(f64, f64), AnalysisError> {
    if intervals.len() < 2 {
        return Err(AnalysisError::TooFewBins {
            found: intervals.len(),
            needed: 2,
        });
    }
    let mean = intervals.iter().map(|t| (*t - reference).as_ps_f64()).sum::<f64>() / intervals.len() as f64;
    Ok((mean, fit_values(intervals)?.fwhm))
}

/// Per-ΔT mean shift and FWHM of measured pair intervals. Points with fewer
/// than [`MIN_PAIR_SAMPLES`] intervals are reported as `None`.
pub fn shift_and_jitter_vs_dt(scan: &[(TimePs, Vec<TimePs>)]) -> Vec<(TimePs, Option<ShiftJitterPoint>)> {
    scan.iter()
        .map(|(dt, iv)| {
            if iv.len() < MIN_PAIR_SAMPLES {
                return (*dt, None);
            }
            let p = shift_and_fwhm(iv, *dt).ok().map(|(shift, fwhm)| ShiftJitterPoint {
                delta_t: *dt,
                shift,
                fwhm,
                samples: iv.len(),
            });
            (*dt, p)
        })
        .collect()
}

/// Visibility of the pulse-period comb in an autocorrelation histogram,
/// using bins at lag multiples of `period` (peaks) and half-period offsets
/// (valleys), beyond `min_lag`.
pub fn distinguishability(ac: &Histogram, period: TimePs, min_lag: TimePs) -> Result<f64, AnalysisError> {
    if period < ac.bin_width * 2 {
        return Err(AnalysisError::InvalidInput(format!(
            "period {} ps is shorter than two bins of {} ps",
            period.as_ps(),
            ac.bin_width.as_ps()
        )));
    }
    let (mut peak, mut np, mut valley, mut nv) = (0u64, 0u64, 0u64, 0u64);
    let mut m = (min_lag.0 / period.0).max(0);
    loop {
        let p = period * m;
        let v = p + TimePs(period.0 / 2);
        if p > min_lag {
            match ac.bin_of(p) {
                Some(i) => {
                    peak += ac.counts[i];
                    np += 1;
                }
                None if p >= ac.end() => break,
                None => {}
            }
        }
        if v > min_lag {
            if let Some(i) = ac.bin_of(v) {
                valley += ac.counts[i];
                nv += 1;
            }
        }
        m += 1;
    }
    if np == 0 || nv == 0 {
        return Err(AnalysisError::TooFewBins {
            found: np.min(nv) as usize,
            needed: 1,
        });
    }
    let cp = peak as f64 / np as f64;
    let cv = valley as f64 / nv as f64;
    if cp + cv == 0.0 {
        return Ok(0.0);
    }
    Ok((cp - cv) / (cp + cv))
}

pub fn heralding_efficiency(coincidences: u64, singles_a: u64, singles_b: u64) -> Result<f64, AnalysisError> {
    let s = singles_a + singles_b;
    if s == 0 {
        return Err(AnalysisError::InvalidInput("no singles".into()));
    }
    Ok(coincidences as f64 / s as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyRateInputs {
    pub m_channels: f64,
    pub eta: f64,
    /// Mean photons per time bin.
    pub n_mean: f64,
    /// Secure bits per generated coincidence.
    pub xi: f64,
    /// Time-bin width in picoseconds.
    pub delta_t_ps: f64,
}

impl KeyRateInputs {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        for (name, v) in [
            ("m_channels", self.m_channels),
            ("eta", self.eta),
            ("n_mean", self.n_mean),
            ("xi", self.xi),
            ("delta_t_ps", self.delta_t_ps),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(AnalysisError::InvalidInput(format!(
                    "{name} must be a finite value >= 0"
                )));
            }
        }
        if self.eta > 1.0 {
            return Err(AnalysisError::InvalidInput("eta must be <= 1".into()));
        }
        if self.delta_t_ps == 0.0 {
            return Err(AnalysisError::InvalidInput("delta_t_ps must be > 0".into()));
        }
        Ok(())
    }
}

/// Secret key rate in bits/s: `M·η²·⟨n⟩·ξ / δt`.
pub fn secret_key_rate(k: &KeyRateInputs) -> Result<f64, AnalysisError> {
    k.validate()?;
    Ok(k.m_channels * k.eta * k.eta * k.n_mean * k.xi / (k.delta_t_ps * 1e-12))
}

/// Excess of a cross-correlation histogram just after `dead_time` over the
/// following baseline, in units of the baseline's Poisson error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakExcess {
    pub cluster: f64,
    pub baseline: f64,
    pub sigma: f64,
    pub significance: f64,
}

/// Compares the bins overlapping `[dead_time − w, dead_time + w)` with the
/// mean of the next four bins.
pub fn twilight_peak_excess(h: &Histogram, dead_time: TimePs) -> Result<PeakExcess, AnalysisError> {
    let w = h.bin_width;
    let first = h
        .bin_of(dead_time - w)
        .ok_or_else(|| AnalysisError::InvalidInput("dead time outside histogram".into()))?;
    let last = h
        .bin_of(dead_time + w - TimePs(1))
        .ok_or_else(|| AnalysisError::InvalidInput("dead time outside histogram".into()))?;
    let n = (last - first + 1) as f64;
    if last + 4 >= h.n_bins() {
        return Err(AnalysisError::TooFewBins {
            found: h.n_bins() - last - 1,
            needed: 4,
        });
    }
    let cluster: f64 = h.counts[first..=last].iter().sum::<u64>() as f64;
    let base_mean = h.counts[last + 1..last + 5].iter().sum::<u64>() as f64 / 4.0;
    let baseline = base_mean * n;
    let sigma = baseline.sqrt().max(1.0);
    Ok(PeakExcess {
        cluster,
        baseline,
        sigma,
        significance: (cluster - baseline) / sigma,
    })
}

/// JSON summary record for one analysis value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub unit: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl Metric {
    pub fn new(name: &str, value: f64, unit: &str) -> Self {
        Metric {
            name: name.to_string(),
            value,
            unit: unit.to_string(),
            tolerance: None,
        }
    }

    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = Some(tol);
        self
    }
}

/// `x,y[,err]` CSV for a curve.
pub fn curve_csv(points: &[(f64, f64, Option<f64>)]) -> String {
    let with_err = points.iter().any(|p| p.2.is_some());
    let mut s = String::from(if with_err { "x,y,err\n" } else { "x,y\n" });
    for (x, y, e) in points {
        if with_err {
            let _ = writeln!(s, "{},{},{}", x, y, e.unwrap_or(0.0));
        } else {
            let _ = writeln!(s, "{},{}", x, y);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    fn flat_after(onset_bin: usize, level: u64, n: usize) -> Histogram {
        let mut h = Histogram::new(TimePs::ZERO, TimePs::ns(1), n).unwrap();
        for c in &mut h.counts[onset_bin..] {
            *c = level;
        }
        h
    }

    #[test]
    fn dead_time_on_grid() {
        let h = flat_after(24, 1000, 200);
        assert_eq!(estimate_dead_time(&h).unwrap(), TimePs::ns(24));
    }

    #[test]
    fn dead_time_sub_bin() {
        let mut h = flat_after(25, 1000, 200);
        h.counts[24] = 400;
        assert_eq!(estimate_dead_time(&h).unwrap(), TimePs::ps(24_600));
    }

    #[test]
    fn dead_time_empty_histogram() {
        let h = Histogram::new(TimePs::ZERO, TimePs::ns(1), 100).unwrap();
        assert!(matches!(estimate_dead_time(&h), Err(AnalysisError::NoOnset)));
    }

    /// Synthetic interval sample: background rate `r` after the dead time plus
    /// an afterpulse fraction with the given lifetimes.
    fn synthetic(d_ns: f64, rate: f64, p: &[(f64, f64)], n: usize, seed: u64) -> Vec<TimePs> {
        let mut rng = RngStream::new(seed, 0);
        (0..n)
            .map(|_| {
                let mut u = rng.uniform();
                for &(pa, tau_ns) in p {
                    if u < pa {
                        return TimePs::from_ps_f64(d_ns * 1e3 + rng.exponential(tau_ns * 1e3).unwrap());
                    }
                    u -= pa;
                }
                TimePs::from_ps_f64(d_ns * 1e3 + rng.exponential(1e12 / rate).unwrap())
            })
            .collect()
    }

    fn hist(v: &[TimePs], range_ns: i64) -> Histogram {
        build_histogram(v, TimePs::ns(1), (TimePs::ZERO, TimePs::ns(range_ns))).unwrap()
    }

    #[test]
    fn spectroscopy_recovers_configured_values() {
        let v = synthetic(29.1, 50e3, &[(0.0068, 32.0)], 2_000_000, 7);
        let h = hist(&v, 700);
        let d = estimate_dead_time(&h).unwrap();
        assert!((d.as_ns() - 29.1).abs() < 0.2, "dead {d:?}");
        let r = afterpulse_spectroscopy(&h, d, &SpectroscopyOptions::default()).unwrap();
        assert!((r.p_afterpulse - 0.0068).abs() < 0.0015, "p {}", r.p_afterpulse);
        assert!((r.tau_trap.as_ns() - 32.0).abs() < 4.0, "tau {:?}", r.tau_trap);
        assert!(!r.flagged, "residual {}", r.residual);
    }

    #[test]
    fn spectroscopy_without_afterpulsing_is_near_zero() {
        let v = synthetic(29.1, 50e3, &[], 1_000_000, 8);
        let h = hist(&v, 700);
        let r = afterpulse_spectroscopy(&h, TimePs::ps(29_100), &SpectroscopyOptions::default()).unwrap();
        assert!(r.p_afterpulse < 0.001, "p {}", r.p_afterpulse);
    }

    #[test]
    fn spectroscopy_flags_two_lifetimes() {
        let v = synthetic(29.1, 50e3, &[(0.02, 5.0), (0.02, 90.0)], 4_000_000, 9);
        let h = hist(&v, 1500);
        let opts = SpectroscopyOptions {
            tail_cut: Some(TimePs::ns(600)),
            ..Default::default()
        };
        let r = afterpulse_spectroscopy(&h, TimePs::ps(29_100), &opts).unwrap();
        assert!(r.flagged, "residual {}", r.residual);
    }

    #[test]
    fn spectroscopy_round_trip_grid() {
        for (i, d) in [21.5, 29.1, 78.0].into_iter().enumerate() {
            for (j, tau) in [20.0, 32.0, 60.0].into_iter().enumerate() {
                let v = synthetic(d, 50e3, &[(0.0068, tau)], 2_000_000, 100 + (3 * i + j) as u64);
                let h = hist(&v, (d + 12.0 * tau) as i64 + 100);
                let est = estimate_dead_time(&h).unwrap();
                assert!((est.as_ns() - d).abs() < 0.5, "dead {d}: {est:?}");
                let opts = SpectroscopyOptions {
                    expected_tau_trap: TimePs::from_ps_f64(tau * 1e3),
                    ..Default::default()
                };
                let r = afterpulse_spectroscopy(&h, est, &opts).unwrap();
                assert!(
                    (r.p_afterpulse - 0.0068).abs() < 0.0015,
                    "({d},{tau}) p {}",
                    r.p_afterpulse
                );
                assert!(
                    (r.tau_trap.as_ns() - tau).abs() < tau / 8.0,
                    "({d},{tau}) tau {:?}",
                    r.tau_trap
                );
            }
        }
    }

    #[test]
    fn twilight_ratio() {
        let s = PairPointStats {
            delta_t: TimePs::ns(100),
            first_sent: 10_000,
            first_detected: 5_000,
            both_sent_first_detected: 5_000,
            both_detected: 2_500,
        };
        let c = twilight_curve(&[s]);
        assert!((c.points[0].relative_efficiency.unwrap() - 1.0).abs() < 1e-12);
        let missing = PairPointStats { first_detected: 0, ..s };
        assert!(twilight_curve(&[missing]).points[0].relative_efficiency.is_none());
    }

    #[test]
    fn rise_width_interpolates() {
        let points = (0..=10)
            .map(|i| TwilightPoint {
                delta_t: TimePs::ns(i),
                relative_efficiency: Some((i as f64 - 2.0).clamp(0.0, 5.0) / 5.0),
                err: Some(0.0),
            })
            .collect();
        let c = TwilightCurve { points };
        assert_eq!(c.rise_width(0.1, 0.9), Some(TimePs::ps(4_000)));
    }

    #[test]
    fn zero_jitter_intervals() {
        let iv = vec![TimePs::ns(100); 2000];
        let out = shift_and_jitter_vs_dt(&[(TimePs::ns(100), iv), (TimePs::ns(50), vec![TimePs::ns(50); 10])]);
        let p = out[0].1.unwrap();
        assert_eq!((p.shift, p.fwhm), (0.0, 0.0));
        assert!(out[1].1.is_none());
    }

    #[test]
    fn pair_fwhm_sqrt2() {
        let mut rng = RngStream::new(11, 0);
        let iv: Vec<TimePs> = (0..200_000)
            .map(|_| {
                let a = rng.gaussian_fwhm(0.0, 335.0).unwrap();
                let b = rng.gaussian_fwhm(0.0, 335.0).unwrap();
                TimePs::from_ps_f64(200_000.0 + b - a)
            })
            .collect();
        let (shift, fwhm) = shift_and_fwhm(&iv, TimePs::ns(200)).unwrap();
        assert!(shift.abs() < 3.0);
        assert!((fwhm - 473.8).abs() < 10.0, "fwhm {fwhm}");
    }

    #[test]
    fn visibility_extremes() {
        let period = TimePs::ps(520);
        let comb: Vec<TimePs> = (0..2000).map(|i| period * (i * 7 % 13 + i * 13)).collect();
        let mut comb = comb;
        comb.sort();
        let ac = crate::instruments::autocorrelation(&comb, TimePs::ns(40), TimePs::ps(50)).unwrap();
        assert!((distinguishability(&ac, period, TimePs::ns(10)).unwrap() - 1.0).abs() < 1e-12);

        let mut flat = Histogram::new(TimePs::ZERO, TimePs::ps(50), 800).unwrap();
        flat.counts.iter_mut().for_each(|c| *c = 77);
        assert_eq!(distinguishability(&flat, period, TimePs::ns(10)).unwrap(), 0.0);
        assert!(distinguishability(&flat, TimePs::ps(90), TimePs::ns(10)).is_err());
    }

    #[test]
    fn heralding_examples() {
        assert_eq!(heralding_efficiency(1000, 1000, 1000).unwrap(), 0.5);
        assert_eq!(heralding_efficiency(0, 1000, 1000).unwrap(), 0.0);
        assert_eq!(heralding_efficiency(400, 1000, 1000).unwrap(), 0.2);
        assert!(heralding_efficiency(0, 0, 0).is_err());
    }

    #[test]
    fn key_rate_examples() {
        let k = KeyRateInputs {
            m_channels: 1.0,
            eta: 1.0,
            n_mean: 1.0,
            xi: 1.0,
            delta_t_ps: 1e12,
        };
        assert_eq!(secret_key_rate(&k).unwrap(), 1.0);
        let k = KeyRateInputs {
            m_channels: 1.0,
            eta: 0.1,
            n_mean: 0.001,
            xi: 8.0,
            delta_t_ps: 260.0,
        };
        let r = secret_key_rate(&k).unwrap();
        assert!((r - 307_692.307_692).abs() < 1e-3);
        assert!(secret_key_rate(&KeyRateInputs { delta_t_ps: 0.0, ..k }).is_err());
    }

    proptest! {
        #[test]
        fn visibility_scale_invariant(counts in proptest::collection::vec(0u64..1000, 400), c in 1u64..50) {
            let mut h = Histogram::new(TimePs::ZERO, TimePs::ps(50), 400).unwrap();
            h.counts = counts;
            let v1 = distinguishability(&h, TimePs::ps(520), TimePs::ns(2)).unwrap();
            h.counts.iter_mut().for_each(|x| *x *= c);
            let v2 = distinguishability(&h, TimePs::ps(520), TimePs::ns(2)).unwrap();
            prop_assert!((v1 - v2).abs() < 1e-12);
        }

        #[test]
        fn key_rate_scaling(m in 0.1f64..10.0, eta in 0.01f64..0.5, n in 1e-4f64..1.0, xi in 0.1f64..10.0, dt in 10.0f64..1e4) {
            let k = KeyRateInputs { m_channels: m, eta, n_mean: n, xi, delta_t_ps: dt };
            let r = secret_key_rate(&k).unwrap();
            let rel = |a: f64, b: f64| ((a - b) / b).abs() < 1e-12;
            let m2 = secret_key_rate(&KeyRateInputs { m_channels: 2.0 * m, ..k }).unwrap();
            let e2 = secret_key_rate(&KeyRateInputs { eta: 2.0 * eta, ..k }).unwrap();
            let n3 = secret_key_rate(&KeyRateInputs { n_mean: 3.0 * n, ..k }).unwrap();
            let x5 = secret_key_rate(&KeyRateInputs { xi: 0.5 * xi, ..k }).unwrap();
            prop_assert!(rel(m2, 2.0 * r));
            prop_assert!(rel(e2, 4.0 * r));
            prop_assert!(rel(n3, 3.0 * r));
            prop_assert!(rel(x5, 0.5 * r));
        }
    }
}
