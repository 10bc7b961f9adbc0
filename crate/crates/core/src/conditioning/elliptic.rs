//! Minimum-order elliptic (Cauer) high-pass design.
//!
//! Analog prototype from Jacobi elliptic functions, low-pass to high-pass
//! frequency transform, then the bilinear transform with prewarping. The
//! result is grouped into second-order sections.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use super::{FilterRealization, HighpassSpec, Section};
use crate::error::{Error, Result};

const MACHEP: f64 = 1.11e-16;

fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..64 {
        if (a - b).abs() <= MACHEP * a {
            break;
        }
        let next = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = next;
    }
    0.5 * (a + b)
}

/// Complete elliptic integral of the first kind K(m), taking the
/// complementary parameter `m1 = 1 - m` so that m near 1 stays accurate.
pub(crate) fn ellipk(m1: f64) -> f64 {
    FRAC_PI_2 / agm(1.0, m1.sqrt())
}

/// Carlson's symmetric integral R_F.
fn carlson_rf(mut x: f64, mut y: f64, mut z: f64) -> f64 {
    for _ in 0..200 {
        let lambda = (x * y).sqrt() + (y * z).sqrt() + (z * x).sqrt();
        x = 0.25 * (x + lambda);
        y = 0.25 * (y + lambda);
        z = 0.25 * (z + lambda);
        let mu = (x + y + z) / 3.0;
        let dev = ((x - mu).abs()).max((y - mu).abs()).max((z - mu).abs()) / mu;
        if dev < 1e-4 {
            let (ex, ey, ez) = (1.0 - x / mu, 1.0 - y / mu, 1.0 - z / mu);
            let e2 = ex * ey - ez * ez;
            let e3 = ex * ey * ez;
            return (1.0 - e2 / 10.0 + e3 / 14.0 + e2 * e2 / 24.0 - 3.0 * e2 * e3 / 44.0) / mu.sqrt();
        }
    }
    1.0 / ((x + y + z) / 3.0).sqrt()
}

/// Incomplete elliptic integral F(phi | m) for 0 <= phi <= pi/2.
pub(crate) fn ellipf(phi: f64, m: f64) -> f64 {
    let (s, c) = phi.sin_cos();
    s * carlson_rf(c * c, 1.0 - m * s * s, 1.0)
}

/// Jacobi elliptic functions (sn, cn, dn) by the descending AGM.
pub(crate) fn ellipj(u: f64, m: f64, m1: f64) -> (f64, f64, f64) {
    if m < 1e-9 {
        let (s, c) = u.sin_cos();
        let ai = 0.25 * m * (u - s * c);
        return (s - ai * c, c + ai * s, 1.0 - 0.5 * m * s * s);
    }
    if m1 < 1e-9 {
        let b = u.cosh();
        let t = u.tanh();
        let phi = 1.0 / b;
        let twon = b * u.sinh();
        let ai = 0.25 * m1;
        let sn = t + ai * (twon - u) / (b * b);
        let cn = phi - ai * t * phi * (twon - u);
        let dn = phi + ai * t * phi * (twon + u);
        return (sn, cn, dn);
    }
    let mut a = [0.0f64; 17];
    let mut c = [0.0f64; 17];
    a[0] = 1.0;
    let mut b = m1.sqrt();
    c[0] = m.sqrt();
    let mut twon = 1.0;
    let mut i = 0;
    while (c[i] / a[i]).abs() > MACHEP && i < 16 {
        let ai = a[i];
        i += 1;
        c[i] = 0.5 * (ai - b);
        let t = (ai * b).sqrt();
        a[i] = 0.5 * (ai + b);
        b = t;
        twon *= 2.0;
    }
    let mut phi = twon * a[i] * u;
    let mut prev = phi;
    while i > 0 {
        let t = c[i] * phi.sin() / a[i];
        prev = phi;
        phi = 0.5 * (t.asin() + phi);
        i -= 1;
    }
    let sn = phi.sin();
    let cn = phi.cos();
    let dn = cn / (phi - prev).cos();
    (sn, cn, dn)
}

/// Finds the parameter `m` with K(m)/K(1-m) = ratio, returned as (m, 1-m).
fn solve_modulus(ratio: f64) -> (f64, f64) {
    let split = |t: f64| (1.0 / (1.0 + (-t).exp()), 1.0 / (1.0 + t.exp()));
    let f = |t: f64| {
        let (m, m1) = split(t);
        ellipk(m1) / ellipk(m) - ratio
    };
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    split(0.5 * (lo + hi))
}

fn pow10m1(x: f64) -> f64 {
    (x * std::f64::consts::LN_10).exp_m1()
}

/// Minimum order for the edge selectivity `k` (< 1) and attenuation pair.
pub(crate) fn minimum_order(selectivity: f64, ripple_db: f64, atten_db: f64) -> usize {
    let k2 = selectivity * selectivity;
    let k1_sq = pow10m1(0.1 * ripple_db) / pow10m1(0.1 * atten_db);
    let num = ellipk(1.0 - k2) * ellipk(k1_sq);
    let den = ellipk(k2) * ellipk(1.0 - k1_sq);
    (num / den - 1e-12).ceil().max(1.0) as usize
}

struct Zpk {
    zeros: Vec<Complex64>,
    poles: Vec<Complex64>,
    gain: f64,
}

/// Normalized analog low-pass prototype with passband edge at 1 rad/s.
fn prototype(order: usize, ripple_db: f64, atten_db: f64) -> Zpk {
    let eps_sq = pow10m1(0.1 * ripple_db);
    let eps = eps_sq.sqrt();
    if order == 1 {
        let p = -(1.0 / eps_sq).sqrt();
        return Zpk {
            zeros: vec![],
            poles: vec![Complex64::new(p, 0.0)],
            gain: -p,
        };
    }
    let ck1_sq = eps_sq / pow10m1(0.1 * atten_db);
    let k_ck1 = ellipk(1.0 - ck1_sq);
    let k_ck1c = ellipk(ck1_sq);
    let (m, m1) = solve_modulus(order as f64 * k_ck1 / k_ck1c);
    let capk = ellipk(m1);

    let n = order as f64;
    let js: Vec<f64> = ((1 - order % 2)..order).step_by(2).map(|j| j as f64).collect();
    let jac: Vec<(f64, f64, f64)> = js.iter().map(|&j| ellipj(j * capk / n, m, m1)).collect();

    let mut zeros = Vec::new();
    for &(s, _, _) in &jac {
        if s.abs() > 1e-14 {
            let z = Complex64::new(0.0, 1.0 / (m.sqrt() * s));
            zeros.push(z);
            zeros.push(z.conj());
        }
    }

    // sc^{-1}(1/eps | 1 - ck1^2) = F(atan(1/eps) | 1 - ck1^2)
    let r = ellipf((1.0 / eps).atan(), 1.0 - ck1_sq);
    let v0 = capk * r / (n * k_ck1);
    let (sv, cv, dv) = ellipj(v0, m1, m);

    let mut poles = Vec::new();
    for &(s, c, d) in &jac {
        let den = 1.0 - (d * sv).powi(2);
        let p = -Complex64::new(c * d * sv * cv, s * dv) / den;
        if p.im.abs() > 1e-12 * p.norm() {
            poles.push(p);
            poles.push(p.conj());
        } else {
            poles.push(Complex64::new(p.re, 0.0));
        }
    }

    let prod = |v: &[Complex64]| v.iter().fold(Complex64::new(1.0, 0.0), |acc, x| acc * -x);
    let mut gain = (prod(&poles) / prod(&zeros)).re;
    if order.is_multiple_of(2) {
        gain /= (1.0 + eps_sq).sqrt();
    }
    Zpk { zeros, poles, gain }
}

fn lowpass_to_highpass(mut zpk: Zpk, wo: f64) -> Zpk {
    let prod = |v: &[Complex64]| v.iter().fold(Complex64::new(1.0, 0.0), |acc, x| acc * -x);
    let degree = zpk.poles.len() - zpk.zeros.len();
    let scale = (prod(&zpk.zeros) / prod(&zpk.poles)).re;
    zpk.gain *= scale;
    for z in &mut zpk.zeros {
        *z = wo / *z;
    }
    for p in &mut zpk.poles {
        *p = wo / *p;
    }
    zpk.zeros.extend(std::iter::repeat_n(Complex64::new(0.0, 0.0), degree));
    zpk
}

fn bilinear(mut zpk: Zpk, fs2: f64) -> Zpk {
    let fs2c = Complex64::new(fs2, 0.0);
    let degree = zpk.poles.len() - zpk.zeros.len();
    let num = zpk.zeros.iter().fold(Complex64::new(1.0, 0.0), |acc, z| acc * (fs2c - z));
    let den = zpk.poles.iter().fold(Complex64::new(1.0, 0.0), |acc, p| acc * (fs2c - p));
    zpk.gain *= (num / den).re;
    for z in &mut zpk.zeros {
        *z = (fs2c + *z) / (fs2c - *z);
    }
    for p in &mut zpk.poles {
        *p = (fs2c + *p) / (fs2c - *p);
    }
    zpk.zeros.extend(std::iter::repeat_n(Complex64::new(-1.0, 0.0), degree));
    zpk
}

/// Splits roots into conjugate pairs (upper half-plane representative) and reals.
fn split_roots(roots: &[Complex64]) -> (Vec<Complex64>, Vec<f64>) {
    let tol = 1e-10;
    let complex = roots.iter().filter(|r| r.im > tol).copied().collect();
    let real = roots.iter().filter(|r| r.im.abs() <= tol).map(|r| r.re).collect();
    (complex, real)
}

fn into_sections(zpk: Zpk) -> FilterRealization {
    let (mut pc, mut pr) = split_roots(&zpk.poles);
    let (mut zc, mut zr) = split_roots(&zpk.zeros);

    // Poles nearest the unit circle go last; each takes the closest zero pair.
    pc.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
    pr.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());

    let mut sections = Vec::new();
    for p in pr.chunks(2) {
        // real poles pair with real zeros
        let mut b = [1.0, 0.0, 0.0];
        let a = if p.len() == 2 {
            [1.0, -(p[0] + p[1]), p[0] * p[1]]
        } else {
            [1.0, -p[0], 0.0]
        };
        let take = p.len().min(zr.len());
        let zs: Vec<f64> = zr.drain(..take).collect();
        match zs.len() {
            2 => b = [1.0, -(zs[0] + zs[1]), zs[0] * zs[1]],
            1 => b = [1.0, -zs[0], 0.0],
            _ => {}
        }
        sections.push(Section { b, a });
    }
    for p in pc {
        let a = [1.0, -2.0 * p.re, p.norm_sqr()];
        let b = if !zc.is_empty() {
            let (idx, _) = zc
                .iter()
                .enumerate()
                .min_by(|(_, x), (_, y)| (*x - p).norm().partial_cmp(&(*y - p).norm()).unwrap())
                .unwrap();
            let z = zc.remove(idx);
            [1.0, -2.0 * z.re, z.norm_sqr()]
        } else if zr.len() >= 2 {
            let (z0, z1) = (zr.remove(0), zr.remove(0));
            [1.0, -(z0 + z1), z0 * z1]
        } else if let Some(z0) = zr.pop() {
            [1.0, -z0, 0.0]
        } else {
            [1.0, 0.0, 0.0]
        };
        sections.push(Section { b, a });
    }
    FilterRealization {
        sections,
        gain: zpk.gain,
        order: 0,
        sample_rate_hz: 0.0,
    }
}

pub fn design_highpass(spec: &HighpassSpec) -> Result<FilterRealization> {
    spec.validate()?;
    let nyq = 0.5 * spec.sample_rate_hz;
    // prewarped edges with the bilinear constant fixed at 2 (fs2 = 4)
    let warp = |f: f64| 4.0 * (PI * f / spec.sample_rate_hz).tan();
    let wp = warp(spec.passband_hz);
    let ws = warp(spec.stopband_hz);
    if !(ws < wp) || spec.passband_hz >= nyq {
        return Err(Error::FilterDesign("stopband must lie below passband".into()));
    }
    let order = minimum_order(ws / wp, spec.passband_ripple_db, spec.stopband_atten_db);
    let proto = prototype(order, spec.passband_ripple_db, spec.stopband_atten_db);
    let hp = lowpass_to_highpass(proto, wp);
    let digital = bilinear(hp, 4.0);
    let mut f = into_sections(digital);
    f.order = order;
    f.sample_rate_hz = spec.sample_rate_hz;
    if !f.is_stable() {
        return Err(Error::FilterDesign(format!("order-{order} design is unstable")));
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elliptic_integrals_match_reference_values() {
        // K(0) = pi/2, K(0.5) = 1.8540746773013719
        assert!((ellipk(1.0) - FRAC_PI_2).abs() < 1e-15);
        assert!((ellipk(0.5) - 1.8540746773013719).abs() < 1e-13);
        // F(pi/2 | m) = K(m)
        assert!((ellipf(FRAC_PI_2, 0.7) - ellipk(0.3)).abs() < 1e-12);
    }

    #[test]
    fn jacobi_identities() {
        for &(u, m) in &[(0.3, 0.2), (1.1, 0.7), (2.0, 0.95), (0.5, 0.5)] {
            let (sn, cn, dn) = ellipj(u, m, 1.0 - m);
            assert!((sn * sn + cn * cn - 1.0).abs() < 1e-12);
            assert!((dn * dn + m * sn * sn - 1.0).abs() < 1e-12);
        }
        // sn(K) = 1
        let m: f64 = 0.6;
        let (sn, _, _) = ellipj(ellipk(1.0 - m), m, 1.0 - m);
        assert!((sn - 1.0).abs() < 1e-12);
    }

    #[test]
    fn order_for_default_spec() {
        let f = design_highpass(&HighpassSpec::new(1000.0)).unwrap();
        assert_eq!(f.order, 8);
        assert_eq!(f.sections.len(), 4);
    }

    #[test]
    fn odd_order_design_is_stable() {
        let spec = HighpassSpec {
            stopband_hz: 50.0,
            passband_hz: 100.0,
            stopband_atten_db: 30.0,
            passband_ripple_db: 1.0,
            sample_rate_hz: 1000.0,
        };
        let f = design_highpass(&spec).unwrap();
        assert_eq!(f.order % 2, 1, "order {}", f.order);
        assert!(f.is_stable());
        assert_eq!(f.order, 3);
        assert!(f.magnitude_db(50.0) <= -30.0 + 1e-9);
        assert!(f.magnitude_db(100.0) >= -1.0 - 1e-9);
        // odd order puts a true zero at DC
        assert!(f.response(0.0).norm() < 1e-12);
    }
}
