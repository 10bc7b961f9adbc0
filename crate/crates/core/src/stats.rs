//! Agreement and discrimination statistics.

use std::cmp::Ordering;

use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid("pearson: length mismatch"));
    }
    if x.len() < 3 {
        return Err(Error::invalid("pearson needs at least 3 pairs"));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Least-squares slope of y = k·x.
pub fn fit_through_origin(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::invalid("fit_through_origin: length mismatch or empty"));
    }
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("fit_through_origin: all x are zero"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Ok(sxy / sxx)
}

/// Ordinary least squares y = slope·x + intercept.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("fit_linear needs at least 2 pairs"));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("fit_linear: x has zero variance"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// ln Γ(x) for x > 0 (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Continued fraction for I_x(a, b), modified Lentz.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=10_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b).
pub fn inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Two-sided p-value of a Student-t statistic with `df` degrees of freedom.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    inc_beta(0.5 * df, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlandAltmanReport {
    pub n: usize,
    pub bias: f64,
    pub sd: f64,
    pub loa: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    pub fixed_bias: bool,
}

pub const LOA_FACTOR: f64 = 1.96;

/// Agreement of `a` against `b` with d = a − b.
///
/// When every difference is identical the t statistic is undefined; the
/// report then carries t = 0, p = 1 for zero bias and t = ±∞, p = 0 otherwise.
pub fn bland_altman(a: &[f64], b: &[f64]) -> Result<BlandAltmanReport> {
    if a.len() != b.len() {
        return Err(Error::invalid("bland_altman: length mismatch"));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::invalid("bland_altman needs at least 2 pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let bias = mean(&d);
    let var = d.iter().map(|v| (v - bias).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();
    let (t, p) = if sd > 0.0 {
        let t = bias / (sd / (n as f64).sqrt());
        (t, t_two_sided_p(t, (n - 1) as f64))
    } else if bias == 0.0 {
        (0.0, 1.0)
    } else {
        (bias.signum() * f64::INFINITY, 0.0)
    };
    Ok(BlandAltmanReport {
        n,
        bias,
        sd,
        loa: LOA_FACTOR * sd,
        t_statistic: t,
        p_value: p,
        fixed_bias: p < 0.05,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Descending, from +∞ to −∞. Point k counts scores ≥ thresholds[k].
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
}

pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("roc_auc: length mismatch"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("roc_auc: NaN score"));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("roc_auc needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[j].partial_cmp(&scores[i]).unwrap_or(Ordering::Equal));

    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut k = 0;
    while k < order.len() {
        let s = scores[order[k]];
        let (tp0, fp0) = (tp, fp);
        while k < order.len() && scores[order[k]] == s {
            if labels[order[k]] {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        // trapezoid in count units; divided once at the end
        auc += (fp - fp0) as f64 * (tp + tp0) as f64 * 0.5;
        thresholds.push(s);
        fpr.push(fp as f64 / neg as f64);
        tpr.push(tp as f64 / pos as f64);
    }
    thresholds.push(f64::NEG_INFINITY);
    fpr.push(1.0);
    tpr.push(1.0);
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auc: auc / (pos as f64 * neg as f64),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionReport {
    pub n_classes: usize,
    /// `matrix[truth][pred]`.
    pub matrix: Vec<Vec<usize>>,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
}

impl ConfusionReport {
    pub fn total(&self) -> usize {
        self.matrix.iter().flatten().sum()
    }
}

pub fn confusion(pred: &[usize], truth: &[usize], n_classes: usize) -> Result<ConfusionReport> {
    if pred.len() != truth.len() {
        return Err(Error::invalid("confusion: length mismatch"));
    }
    let mut matrix = vec![vec![0usize; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::invalid(format!("class index out of range: pred {p}, truth {t}")));
        }
        matrix[t][p] += 1;
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let precision = (0..n_classes)
        .map(|c| ratio(matrix[c][c], (0..n_classes).map(|t| matrix[t][c]).sum()))
        .collect();
    let recall = (0..n_classes)
        .map(|c| ratio(matrix[c][c], matrix[c].iter().sum()))
        .collect();
    Ok(ConfusionReport {
        n_classes,
        matrix,
        precision,
        recall,
    })
}

/// Mean and sample SD (0 for a single value).
pub fn mean_sd(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = mean(x);
    if x.len() < 2 {
        return (m, 0.0);
    }
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64;
    (m, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&x, &[1.0; 4]), Err(Error::UndefinedCorrelation)));
        assert!(pearson(&x[..2], &y[..2]).is_err());
    }

    #[test]
    fn origin_fit_examples() {
        assert_eq!(fit_through_origin(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.0);
        assert_eq!(fit_through_origin(&[1.0, 1.0], &[1.0, -1.0]).unwrap(), 0.0);
        assert!((fit_through_origin(&[1.0, 2.0], &[1.0, 5.0]).unwrap() - 2.2).abs() < 1e-15);
        assert!(fit_through_origin(&[0.0, 0.0], &[1.0, 2.0]).is_err());
        let (k, c) = fit_linear(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((k - 2.0).abs() < 1e-15 && (c - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bland_altman_examples() {
        let a = [1.0, 2.0, 3.5];
        let r = bland_altman(&a, &a).unwrap();
        assert_eq!((r.bias, r.sd, r.loa), (0.0, 0.0, 0.0));
        let b: Vec<f64> = a.iter().map(|v| v - 0.25).collect();
        let r = bland_altman(&a, &b).unwrap();
        assert!((r.bias - 0.25).abs() < 1e-15 && r.sd < 1e-15);
        assert!(bland_altman(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn t_p_known_values() {
        // t = 2.776445 is the 97.5% quantile at 4 df
        assert!((t_two_sided_p(2.776_445_105_2, 4.0) - 0.05).abs() < 1e-8);
        assert_eq!(t_two_sided_p(0.0, 7.0), 1.0);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-13);
    }

    #[test]
    fn roc_examples() {
        let r = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-15);
        assert_eq!(r.fpr.first(), Some(&0.0));
        assert_eq!(r.tpr.last(), Some(&1.0));
        assert_eq!(roc_auc(&[0.1, 0.9], &[false, true]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.1, 0.9], &[true, false]).unwrap().auc, 0.0);
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, false]).unwrap().auc, 0.5);
        assert!(roc_auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let c = confusion(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        assert_eq!(c.matrix, vec![vec![1, 1], vec![0, 1]]);
        assert_eq!(c.precision, vec![Some(1.0), Some(0.5)]);
        assert_eq!(c.recall, vec![Some(0.5), Some(1.0)]);
        let c = confusion(&[0, 0], &[0, 0], 4).unwrap();
        assert_eq!(c.recall[2], None);
        assert_eq!(c.precision[3], None);
        assert!(confusion(&[4], &[0], 4).is_err());
    }
}
