//! Orthogonal discrete wavelet transform with half-point symmetric extension.

/// sym4 reconstruction low-pass filter (8 taps, 4 vanishing moments).
const SYM4_REC_LO: [f64; 8] = [
    0.0322231006040427,
    -0.012603967262037833,
    -0.09921954357684722,
    0.29785779560527736,
    0.8037387518059161,
    0.49761866763201545,
    -0.02963552764599851,
    -0.07576571478927333,
];

#[derive(Debug, Clone, PartialEq)]
pub struct Wavelet {
    pub dec_lo: Vec<f64>,
    pub dec_hi: Vec<f64>,
    pub rec_lo: Vec<f64>,
    pub rec_hi: Vec<f64>,
}

impl Wavelet {
    /// Builds the four quadrature-mirror filters from a reconstruction low-pass.
    pub fn from_rec_lo(rec_lo: &[f64]) -> Self {
        let n = rec_lo.len();
        let dec_lo: Vec<f64> = rec_lo.iter().rev().copied().collect();
        let rec_hi: Vec<f64> = (0..n)
            .map(|k| if k % 2 == 0 { 1.0 } else { -1.0 } * dec_lo[k])
            .collect();
        let dec_hi: Vec<f64> = rec_hi.iter().rev().copied().collect();
        Self {
            dec_lo,
            dec_hi,
            rec_lo: rec_lo.to_vec(),
            rec_hi,
        }
    }

    pub fn sym4() -> Self {
        Self::from_rec_lo(&SYM4_REC_LO)
    }

    pub fn len(&self) -> usize {
        self.dec_lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dec_lo.is_empty()
    }
}

/// Half-point symmetric index map: ... x1 x0 | x0 x1 ... x_{n-1} | x_{n-1} ...
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    i = i.rem_euclid(period);
    if i >= n {
        (period - 1 - i) as usize
    } else {
        i as usize
    }
}

/// Coefficient count of a single analysis step.
pub fn coeff_len(input_len: usize, filter_len: usize) -> usize {
    (input_len + filter_len - 1) / 2
}

/// One analysis step: (approximation, detail).
pub fn dwt(x: &[f64], w: &Wavelet) -> (Vec<f64>, Vec<f64>) {
    let f = w.len();
    let out = coeff_len(x.len(), f);
    let mut ca = Vec::with_capacity(out);
    let mut cd = Vec::with_capacity(out);
    for o in 0..out {
        let i = (2 * o + 1) as isize;
        let (mut a, mut d) = (0.0, 0.0);
        for j in 0..f {
            let v = x[reflect(i - j as isize, x.len())];
            a += w.dec_lo[j] * v;
            d += w.dec_hi[j] * v;
        }
        ca.push(a);
        cd.push(d);
    }
    (ca, cd)
}

/// One synthesis step, returning `2·len(ca) − F + 2` samples.
pub fn idwt(ca: &[f64], cd: &[f64], w: &Wavelet) -> Vec<f64> {
    assert_eq!(ca.len(), cd.len(), "coefficient arrays differ in length");
    let f = w.len();
    let k = ca.len();
    let out_len = (2 * k + 2).saturating_sub(f);
    let mut y = vec![0.0; out_len];
    for (n, y_n) in y.iter_mut().enumerate() {
        let m = n + f - 2;
        // taps with m - 2k in [0, f)
        let k_lo = (m + 1).saturating_sub(f).div_ceil(2);
        let k_hi = (m / 2).min(k - 1);
        let mut acc = 0.0;
        for kk in k_lo..=k_hi {
            let t = m - 2 * kk;
            acc += ca[kk] * w.rec_lo[t] + cd[kk] * w.rec_hi[t];
        }
        *y_n = acc;
    }
    y
}

/// Number of analysis levels for a length-`n` signal: floor(log2 n), reduced
/// until every decomposed approximation has at least `filter_len` samples,
/// and never below 1.
pub fn levels_for(n: usize, filter_len: usize) -> usize {
    let cap = if n == 0 { 0 } else { n.ilog2() as usize };
    let mut len = n;
    let mut levels = 0;
    while levels < cap && len >= filter_len {
        len = coeff_len(len, filter_len);
        levels += 1;
    }
    levels.max(1)
}

/// Multilevel decomposition: `[cA_J, cD_J, ..., cD_1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub approx: Vec<f64>,
    /// Details from coarsest to finest.
    pub details: Vec<Vec<f64>>,
    /// Input length at each level, finest first.
    lengths: Vec<usize>,
}

pub fn wavedec(x: &[f64], w: &Wavelet, levels: usize) -> Decomposition {
    let mut approx = x.to_vec();
    let mut details = Vec::with_capacity(levels);
    let mut lengths = Vec::with_capacity(levels);
    for _ in 0..levels {
        lengths.push(approx.len());
        let (a, d) = dwt(&approx, w);
        details.push(d);
        approx = a;
    }
    details.reverse();
    Decomposition {
        approx,
        details,
        lengths,
    }
}

pub fn waverec(dec: &Decomposition, w: &Wavelet) -> Vec<f64> {
    let mut a = dec.approx.clone();
    for (level, d) in dec.details.iter().enumerate() {
        let mut rec = idwt(&a, d, w);
        let target = dec.lengths[dec.lengths.len() - 1 - level];
        rec.truncate(target);
        a = rec;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym4_is_orthonormal_with_four_vanishing_moments() {
        let w = Wavelet::sym4();
        let h = &w.dec_lo;
        let energy: f64 = h.iter().map(|v| v * v).sum();
        assert!((energy - 1.0).abs() < 1e-11);
        assert!((h.iter().sum::<f64>() - 2f64.sqrt()).abs() < 1e-11);
        for shift in [2, 4, 6] {
            let dot: f64 = (0..8 - shift).map(|n| h[n] * h[n + shift]).sum();
            assert!(dot.abs() < 1e-11, "shift {shift}: {dot}");
        }
        for p in 0..4 {
            let m: f64 = w.dec_hi.iter().enumerate().map(|(n, g)| g * (n as f64).powi(p)).sum();
            assert!(m.abs() < 1e-10, "moment {p}: {m}");
        }
    }

    #[test]
    fn perfect_reconstruction_small_lengths() {
        let w = Wavelet::sym4();
        for n in 8..64 {
            let x: Vec<f64> = (0..n).map(|i| ((i * 7919) % 97) as f64 / 13.0 - 3.0).collect();
            let dec = wavedec(&x, &w, levels_for(n, w.len()));
            let y = waverec(&dec, &w);
            assert_eq!(y.len(), n);
            let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-10, "n={n} err={err}");
        }
    }

    #[test]
    fn level_count() {
        assert_eq!(levels_for(8, 8), 1);
        assert_eq!(levels_for(4096, 8), 12);
        assert_eq!(levels_for(1000, 8), 9);
    }
}
