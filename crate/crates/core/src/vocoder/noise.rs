use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::nn::registry::NOISE_BANDS;
use crate::nn::FrameMatrix;

/// Per-frame filter magnitudes, `B` bands linearly spaced over `[0, Nyquist]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseControls {
    pub band_mags: FrameMatrix,
}

impl Default for NoiseControls {
    fn default() -> Self {
        Self { band_mags: FrameMatrix::new(NOISE_BANDS) }
    }
}

impl NoiseControls {
    pub fn constant(frames: usize, mags: &[f32]) -> Self {
        let rows = vec![mags; frames];
        Self { band_mags: FrameMatrix::from_rows(mags.len(), &rows).expect("uniform rows") }
    }

    pub fn len(&self) -> usize {
        self.band_mags.frames()
    }

    pub fn is_empty(&self) -> bool {
        self.band_mags.is_empty()
    }
}

/// Filtered-noise generator.
///
/// Each frame's magnitudes become a zero-phase FIR of `2B - 1` taps (inverse
/// real DFT of size `2(B - 1)`, symmetric Hann window) applied to that
/// frame's white noise; filtered blocks are overlap-added. The FIR is applied
/// causally, so output lags the noise by `B - 1` samples.
#[derive(Debug, Clone)]
pub struct NoiseSynth {
    hop: usize,
    bands: usize,
    rng: ChaCha8Rng,
    /// `cos_table[k][n] = cos(2 pi k n / N)` for `n` in `0..bands`.
    cos_table: Vec<Vec<f64>>,
    window: Vec<f64>,
    tail: Vec<f32>,
}

impl NoiseSynth {
    pub fn new(hop: usize, bands: usize, seed: u64) -> Self {
        assert!(bands >= 2);
        let n = 2 * (bands - 1);
        let cos_table = (0..bands)
            .map(|k| (0..bands).map(|t| (std::f64::consts::TAU * (k * t) as f64 / n as f64).cos()).collect())
            .collect();
        let taps = 2 * bands - 1;
        let window = (0..taps)
            .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / (taps - 1) as f64).cos())
            .collect();
        Self { hop, bands, rng: ChaCha8Rng::seed_from_u64(seed), cos_table, window, tail: vec![0.0; taps - 1] }
    }

    pub fn taps(&self) -> usize {
        2 * self.bands - 1
    }

    /// Windowed impulse response for one frame, `2B - 1` taps centred on `B - 1`.
    pub fn impulse_response(&self, mags: &[f32]) -> Vec<f64> {
        assert_eq!(mags.len(), self.bands);
        let b = self.bands;
        let n = 2 * (b - 1);
        let half: Vec<f64> = (0..b)
            .map(|t| {
                let mut acc = mags[0] as f64 + mags[b - 1] as f64 * self.cos_table[b - 1][t];
                for k in 1..b - 1 {
                    acc += 2.0 * mags[k] as f64 * self.cos_table[k][t];
                }
                acc / n as f64
            })
            .collect();
        (0..2 * b - 1)
            .map(|i| {
                let lag = (i as i64 - (b as i64 - 1)).unsigned_abs() as usize;
                half[lag] * self.window[i]
            })
            .collect()
    }

    pub fn process(&mut self, controls: &NoiseControls) -> Vec<f32> {
        let taps = self.taps();
        let mut out = Vec::with_capacity(controls.len() * self.hop);
        let mut excitation = vec![0.0f64; self.hop];
        let mut block = vec![0.0f64; self.hop + taps - 1];
        for mags in controls.band_mags.rows() {
            // Draw every frame so the noise sequence does not depend on the controls.
            for e in excitation.iter_mut() {
                *e = self.rng.random_range(-1.0f64..=1.0);
            }
            block.iter_mut().for_each(|v| *v = 0.0);
            if mags.iter().any(|&m| m != 0.0) {
                let h = self.impulse_response(mags);
                for (i, &e) in excitation.iter().enumerate() {
                    for (j, &hj) in h.iter().enumerate() {
                        block[i + j] += e * hj;
                    }
                }
            }
            for (b, t) in block.iter_mut().zip(&self.tail) {
                *b += *t as f64;
            }
            out.extend(block[..self.hop].iter().map(|&v| v as f32));
            for (t, &b) in self.tail.iter_mut().zip(&block[self.hop..]) {
                *t = b as f32;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_bands_give_a_delta() {
        let s = NoiseSynth::new(80, NOISE_BANDS, 0);
        let h = s.impulse_response(&[1.0; NOISE_BANDS]);
        assert_eq!(h.len(), 129);
        for (i, v) in h.iter().enumerate() {
            let want = if i == 64 { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "tap {i}: {v}");
        }
    }

    #[test]
    fn zero_bands_are_silent() {
        let mut s = NoiseSynth::new(80, NOISE_BANDS, 3);
        let y = s.process(&NoiseControls::constant(20, &[0.0; NOISE_BANDS]));
        assert_eq!(y.len(), 1600);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeded_and_chunk_invariant() {
        let mags: Vec<f32> = (0..NOISE_BANDS).map(|k| 1.0 / (1.0 + k as f32)).collect();
        let c = NoiseControls::constant(12, &mags);
        let whole = NoiseSynth::new(80, NOISE_BANDS, 9).process(&c);
        let mut s = NoiseSynth::new(80, NOISE_BANDS, 9);
        let mut parts = s.process(&NoiseControls::constant(5, &mags));
        parts.extend(s.process(&NoiseControls::constant(7, &mags)));
        assert_eq!(whole, parts);
        assert_ne!(whole, NoiseSynth::new(80, NOISE_BANDS, 10).process(&c));
    }
}
