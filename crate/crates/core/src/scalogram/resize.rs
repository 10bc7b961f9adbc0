//! Separable bicubic resampling with the Keys cubic-convolution kernel.

use crate::error::{Error, Result};

pub const KEYS_A: f64 = -0.5;

/// Keys kernel with a = −0.5.
pub fn keys_kernel(x: f64) -> f64 {
    let a = KEYS_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Pixel-centre mapping from output to input coordinates.
pub fn source_coord(dst: usize, in_len: usize, out_len: usize) -> f64 {
    (dst as f64 + 0.5) * (in_len as f64 / out_len as f64) - 0.5
}

/// Four (index, weight) taps for every output position, edge-clamped.
fn taps(in_len: usize, out_len: usize) -> Vec<[(usize, f64); 4]> {
    (0..out_len)
        .map(|d| {
            let s = source_coord(d, in_len, out_len);
            let base = s.floor() as isize;
            let mut t = [(0usize, 0.0); 4];
            for (k, tap) in t.iter_mut().enumerate() {
                let i = base - 1 + k as isize;
                let idx = i.clamp(0, in_len as isize - 1) as usize;
                *tap = (idx, keys_kernel(s - i as f64));
            }
            t
        })
        .collect()
}

/// Resizes a row-major `in_h × in_w` raster to `out_h × out_w`, rows first.
pub fn resize_bicubic(src: &[f64], in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    if in_h < 2 || in_w < 2 || src.len() != in_h * in_w {
        return Err(Error::invalid(format!("degenerate source raster {in_h}x{in_w}")));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("output size must be positive"));
    }
    let col_taps = taps(in_w, out_w);
    let mut rows = vec![0.0; in_h * out_w];
    for r in 0..in_h {
        let line = &src[r * in_w..(r + 1) * in_w];
        for (c, t) in col_taps.iter().enumerate() {
            rows[r * out_w + c] = t.iter().map(|&(i, w)| w * line[i]).sum();
        }
    }
    let row_taps = taps(in_h, out_h);
    let mut out = vec![0.0; out_h * out_w];
    for (r, t) in row_taps.iter().enumerate() {
        for c in 0..out_w {
            out[r * out_w + c] = t.iter().map(|&(i, w)| w * rows[i * out_w + c]).sum();
        }
    }
    Ok(out)
}
