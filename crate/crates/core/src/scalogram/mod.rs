//! Time-frequency images of SCG pulses.

mod morse;
mod resize;

pub use morse::{
    cwt, scale_to_frequency, MorseFilterBank, MorseParams, DEFAULT_BETA, DEFAULT_GAMMA, DEFAULT_VOICES,
    PEAK_GAIN,
};
pub use resize::{keys_kernel, resize_bicubic, source_coord, KEYS_A};

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::signal_model::{Scalogram, ScalogramImage, ScgPulse};

pub const DEFAULT_IMAGE_SIZE: usize = 256;

pub fn resize_scalogram(s: &Scalogram, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    resize_bicubic(&s.magnitude, s.n_freqs(), s.n_times(), out_h, out_w)
}

/// Builds scalogram images, reusing one filter bank per pulse length.
#[derive(Debug, Default)]
pub struct ScalogramEngine {
    pub params: MorseParams,
    pub image_size: usize,
    banks: HashMap<(usize, u64), MorseFilterBank>,
}

impl ScalogramEngine {
    pub fn new(params: MorseParams, image_size: usize) -> Self {
        Self {
            params,
            image_size,
            banks: HashMap::new(),
        }
    }

    pub fn bank(&mut self, len: usize, sample_rate_hz: f64) -> Result<&MorseFilterBank> {
        let key = (len, sample_rate_hz.to_bits());
        if !self.banks.contains_key(&key) {
            let bank = MorseFilterBank::new(len, sample_rate_hz, self.params)?;
            self.banks.insert(key, bank);
        }
        Ok(&self.banks[&key])
    }

    pub fn scalogram(&mut self, pulse: &ScgPulse) -> Result<Scalogram> {
        let bank = self.bank(pulse.len(), pulse.sample_rate_hz)?;
        cwt(&pulse.samples, bank)
    }

    pub fn image(&mut self, pulse: &ScgPulse) -> Result<ScalogramImage> {
        let size = self.image_size;
        let s = self.scalogram(pulse)?;
        let pixels = resize_scalogram(&s, size, size)?;
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: "scalogram resize".into(),
            });
        }
        Ok(ScalogramImage {
            height: size,
            width: size,
            pixels,
            subject_id: pulse.subject_id.clone(),
            beat_index: pulse.beat_index,
        })
    }
}

/// 8-bit binary PGM, scaled so the image maximum maps to 255.
pub fn export_pgm(img: &ScalogramImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let max = img.pixels.iter().copied().fold(0.0, f64::max);
    let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
    let mut bytes = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    bytes.extend(img.pixels.iter().map(|&v| (v.max(0.0) * scale).round().min(255.0) as u8));
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}
