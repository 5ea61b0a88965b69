use crate::time::TimePs;

/// Non-retriggerable blanking: a pulse is transmitted only if at least `t_b`
/// has passed since the previous *transmitted* pulse. Withheld pulses do not
/// restart the window. Input must be sorted.
pub fn blanking_filter(pulses: &[TimePs], t_b: TimePs) -> Vec<TimePs> {
    blanking_mask(pulses, t_b)
        .into_iter()
        .zip(pulses)
        .filter_map(|(keep, t)| keep.then_some(*t))
        .collect()
}

/// Per-pulse transmit flags for [`blanking_filter`].
pub fn blanking_mask(pulses: &[TimePs], t_b: TimePs) -> Vec<bool> {
    let mut last: Option<TimePs> = None;
    pulses
        .iter()
        .map(|&t| {
            let keep = last.is_none_or(|l| t - l >= t_b);
            if keep {
                last = Some(t);
            }
            keep
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn ns(v: &[i64]) -> Vec<TimePs> {
        v.iter().map(|&x| TimePs::ns(x)).collect()
    }

    #[test]
    fn withheld_pulse_does_not_retrigger() {
        assert_eq!(blanking_filter(&ns(&[0, 10, 30, 50]), TimePs::ns(24)), ns(&[0, 30]));
    }

    #[test]
    fn trivial_inputs() {
        assert!(blanking_filter(&[], TimePs::ns(24)).is_empty());
        assert_eq!(blanking_filter(&ns(&[7]), TimePs::ns(24)), ns(&[7]));
        // a gap of exactly t_b is transmitted
        assert_eq!(blanking_filter(&ns(&[0, 24]), TimePs::ns(24)), ns(&[0, 24]));
    }

    /// Quadratic reference: pulse i is sent iff no earlier *sent* pulse lies
    /// within t_b before it, checked against every earlier pulse.
    fn reference(pulses: &[TimePs], t_b: TimePs) -> Vec<TimePs> {
        let mut sent: Vec<bool> = Vec::with_capacity(pulses.len());
        for i in 0..pulses.len() {
            let blocked = (0..i).any(|j| sent[j] && pulses[i] - pulses[j] < t_b);
            sent.push(!blocked);
        }
        pulses.iter().zip(&sent).filter(|(_, s)| **s).map(|(t, _)| *t).collect()
    }

    #[test]
    fn matches_quadratic_reference_on_random_trains() {
        let mut rng = RngStream::new(2024, 0);
        for _ in 0..10_000 {
            let n = (rng.uniform() * 40.0) as usize;
            let mut t = 0.0;
            let mut v = Vec::with_capacity(n);
            for _ in 0..n {
                t += rng.exponential(15_000.0).unwrap();
                v.push(TimePs::from_ps_f64(t));
            }
            let t_b = TimePs::ns(24);
            assert_eq!(blanking_filter(&v, t_b), reference(&v, t_b));
        }
    }
}
