//! Beat quality: DTW distance to the subject template, SQI scoring and
//! bottom-fraction rejection.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::signal_model::ScgPulse;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DtwResult {
    /// Accumulated |a_i - b_j| along the optimal path.
    pub distance: f64,
    /// Number of aligned index pairs on that path.
    pub path_length: usize,
}

/// Classic DTW with steps (1,0), (0,1), (1,1); equal-cost predecessors
/// resolve to the diagonal first.
pub fn dtw(a: &[f64], b: &[f64]) -> Result<DtwResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("dtw"));
    }
    let m = b.len();
    let mut prev_d = vec![f64::INFINITY; m];
    let mut prev_l = vec![0usize; m];
    let mut cur_d = vec![0.0; m];
    let mut cur_l = vec![0usize; m];
    for (i, &ai) in a.iter().enumerate() {
        for j in 0..m {
            let cost = (ai - b[j]).abs();
            let (d, l) = if i == 0 && j == 0 {
                (0.0, 0)
            } else {
                // diagonal, vertical (i-1, j), horizontal (i, j-1)
                let mut best = (f64::INFINITY, 0usize);
                if i > 0 && j > 0 {
                    best = (prev_d[j - 1], prev_l[j - 1]);
                }
                if i > 0 && prev_d[j] < best.0 {
                    best = (prev_d[j], prev_l[j]);
                }
                if j > 0 && cur_d[j - 1] < best.0 {
                    best = (cur_d[j - 1], cur_l[j - 1]);
                }
                best
            };
            cur_d[j] = d + cost;
            cur_l[j] = l + 1;
        }
        std::mem::swap(&mut prev_d, &mut cur_d);
        std::mem::swap(&mut prev_l, &mut cur_l);
    }
    Ok(DtwResult {
        distance: prev_d[m - 1],
        path_length: prev_l[m - 1],
    })
}

/// Linear-interpolation resampling to `len` points (endpoints preserved).
pub fn resample_linear(x: &[f64], len: usize) -> Vec<f64> {
    if len == x.len() {
        return x.to_vec();
    }
    if len == 1 || x.len() == 1 {
        return vec![x[0]; len];
    }
    let scale = (x.len() - 1) as f64 / (len - 1) as f64;
    (0..len)
        .map(|k| {
            let t = k as f64 * scale;
            let i = (t.floor() as usize).min(x.len() - 2);
            let frac = t - i as f64;
            x[i] + frac * (x[i + 1] - x[i])
        })
        .collect()
}

/// Pointwise mean of all pulses after resampling to the median pulse length
/// (lower median for an even count).
pub fn template(pulses: &[ScgPulse]) -> Result<Vec<f64>> {
    if pulses.is_empty() {
        return Err(Error::Empty("template"));
    }
    let mut lens: Vec<usize> = pulses.iter().map(|p| p.len()).collect();
    lens.sort_unstable();
    let target = lens[(lens.len() - 1) / 2];
    if target == 0 {
        return Err(Error::Empty("template pulse"));
    }
    let mut acc = vec![0.0; target];
    for p in pulses {
        for (a, v) in acc.iter_mut().zip(resample_linear(&p.samples, target)) {
            *a += v;
        }
    }
    let n = pulses.len() as f64;
    Ok(acc.into_iter().map(|v| v / n).collect())
}

/// exp(−distance / path_length).
pub fn sqi(pulse: &[f64], tmpl: &[f64]) -> Result<f64> {
    let r = dtw(pulse, tmpl)?;
    Ok((-r.distance / r.path_length as f64).exp())
}

/// Number of pulses rejected out of `n`: floor((1 − keep_fraction)·n),
/// never leaving fewer than one kept.
pub fn rejected_count(n: usize, keep_fraction: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let raw = ((1.0 - keep_fraction) * n as f64 + 1e-9).floor().max(0.0) as usize;
    raw.min(n - 1)
}

/// Ranks by SQI (descending, ties by ascending beat index) and splits into
/// (kept, rejected). Pulses without an SQI rank last.
pub fn reject_outliers(pulses: Vec<ScgPulse>, keep_fraction: f64) -> (Vec<ScgPulse>, Vec<ScgPulse>) {
    let n = pulses.len();
    let mut ranked = pulses;
    ranked.sort_by(|a, b| {
        let sa = a.sqi.unwrap_or(f64::NEG_INFINITY);
        let sb = b.sqi.unwrap_or(f64::NEG_INFINITY);
        sb.partial_cmp(&sa)
            .unwrap_or(Ordering::Equal)
            .then(a.beat_index.cmp(&b.beat_index))
    });
    let rejected = ranked.split_off(n - rejected_count(n, keep_fraction));
    (ranked, rejected)
}

/// Scores every pulse against the subject template, then rejects the
/// bottom fraction. Kept pulses come back in beat order.
pub fn score_and_select(
    mut pulses: Vec<ScgPulse>,
    keep_fraction: f64,
) -> Result<(Vec<ScgPulse>, Vec<ScgPulse>)> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Config(format!("keep fraction must be in (0,1], got {keep_fraction}")));
    }
    let tmpl = template(&pulses)?;
    for p in &mut pulses {
        p.sqi = Some(sqi(&p.samples, &tmpl)?);
    }
    let (mut kept, mut rejected) = reject_outliers(pulses, keep_fraction);
    kept.sort_by_key(|p| p.beat_index);
    rejected.sort_by_key(|p| p.beat_index);
    Ok((kept, rejected))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pulse(samples: Vec<f64>, beat: usize, sqi: Option<f64>) -> ScgPulse {
        ScgPulse {
            samples,
            sample_rate_hz: 1000.0,
            beat_index: beat,
            subject_id: "S".into(),
            sqi,
        }
    }

    #[test]
    fn dtw_examples() {
        let x = [0.3, 1.0, -2.0, 4.0];
        assert_eq!(dtw(&x, &x).unwrap(), DtwResult { distance: 0.0, path_length: 4 });
        assert_eq!(dtw(&[0.0, 1.0, 2.0], &[0.0, 2.0]).unwrap().distance, 1.0);
        assert!(matches!(dtw(&[], &[1.0]), Err(Error::Empty(_))));
    }

    #[test]
    fn template_examples() {
        let p = pulse(vec![1.0, 3.0, 2.0], 0, None);
        assert_eq!(template(std::slice::from_ref(&p)).unwrap(), p.samples);
        assert_eq!(template(&[p.clone(), p.clone()]).unwrap(), p.samples);
        let t = template(&[pulse(vec![0.0; 4], 0, None), pulse(vec![2.0; 4], 1, None)]).unwrap();
        assert_eq!(t, vec![1.0; 4]);
        assert!(template(&[]).is_err());
    }

    #[test]
    fn sqi_examples() {
        let x = [0.2, 0.4, 0.1];
        assert_eq!(sqi(&x, &x).unwrap(), 1.0);
        // every aligned pair costs 1 on the diagonal path: D = L
        let s = sqi(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).unwrap();
        assert!((s - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn keep_rule_examples() {
        let pulses: Vec<ScgPulse> = (0..20).map(|i| pulse(vec![0.0], i, Some(1.0 - i as f64 * 0.01))).collect();
        let (kept, rejected) = reject_outliers(pulses, 0.95);
        assert_eq!((kept.len(), rejected.len()), (19, 1));
        assert_eq!(rejected[0].beat_index, 19);

        let same: Vec<ScgPulse> = (0..40).map(|i| pulse(vec![0.0], i, Some(0.5))).collect();
        let (_, rejected) = reject_outliers(same, 0.95);
        assert_eq!(rejected.iter().map(|p| p.beat_index).collect::<Vec<_>>(), vec![38, 39]);

        let (kept, rejected) = reject_outliers(vec![pulse(vec![0.0], 0, Some(0.1))], 0.95);
        assert_eq!((kept.len(), rejected.len()), (1, 0));
    }

    #[test]
    fn resample_preserves_endpoints() {
        let y = resample_linear(&[0.0, 10.0], 11);
        assert_eq!(y.len(), 11);
        assert!((y[3] - 3.0).abs() < 1e-12);
        assert_eq!(y[10], 10.0);
    }
}
