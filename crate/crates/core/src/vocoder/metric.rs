use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const MSS_FFT_SIZES: [usize; 6] = [2048, 1024, 512, 256, 128, 64];
const MSS_LOG_FLOOR: f64 = 1e-5;

fn magnitudes(x: &[f32], size: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let hop = size / 4;
    let fft = planner.plan_fft_forward(size);
    let window: Vec<f64> =
        (0..size).map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / size as f64).cos()).collect();
    let frames = 1 + (x.len() - size) / hop;
    let bins = size / 2 + 1;
    let mut out = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex::new(0.0, 0.0); size];
    for f in 0..frames {
        let seg = &x[f * hop..f * hop + size];
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex::new(s as f64 * w, 0.0);
        }
        fft.process(&mut buf);
        out.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    out
}

/// Multi-resolution STFT distance: for each FFT size, the mean absolute
/// difference of magnitudes plus that of floored log magnitudes, summed.
pub fn multiscale_spectral_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Parameter(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    if a.len() < MSS_FFT_SIZES[0] {
        return Err(Error::Parameter(format!("need at least {} samples, got {}", MSS_FFT_SIZES[0], a.len())));
    }
    let mut planner = FftPlanner::new();
    let mut total = 0.0;
    for size in MSS_FFT_SIZES {
        let ma = magnitudes(a, size, &mut planner);
        let mb = magnitudes(b, size, &mut planner);
        let n = ma.len() as f64;
        let (mut lin, mut log) = (0.0, 0.0);
        for (x, y) in ma.iter().zip(&mb) {
            lin += (x - y).abs();
            log += ((x + MSS_LOG_FLOOR).ln() - (y + MSS_LOG_FLOOR).ln()).abs();
        }
        total += lin / n + log / n;
    }
    Ok(total)
}
