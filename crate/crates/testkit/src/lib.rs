//! Reference implementations written for clarity rather than speed. Test
//! suites compare the production code against these.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Magnitudes of the first `n/2 + 1` DFT bins by direct summation.
pub fn naive_dft_mag(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

/// Power spectrum of one Hann-windowed segment via FFT.
pub fn hann_power_spectrum(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, &v)| Complex::new(v * (0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos()), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

/// Welch PSD estimate: Hann segments of `nperseg`, 50 % overlap, averaged.
/// Bin `k` sits at `k * sr / nperseg` Hz.
pub fn welch_psd(x: &[f32], nperseg: usize) -> Vec<f64> {
    assert!(x.len() >= nperseg);
    let step = nperseg / 2;
    let mut acc = vec![0.0; nperseg / 2 + 1];
    let mut count = 0;
    let mut start = 0;
    while start + nperseg <= x.len() {
        let seg: Vec<f64> = x[start..start + nperseg].iter().map(|&v| v as f64).collect();
        for (a, p) in acc.iter_mut().zip(hann_power_spectrum(&seg)) {
            *a += p;
        }
        count += 1;
        start += step;
    }
    acc.iter().map(|a| a / count as f64).collect()
}

/// Mean PSD in `bands_per_octave` log-spaced bands between `f_lo` and `f_hi`,
/// as `(centre Hz, mean power)` pairs. Bands with no bins are skipped.
pub fn band_powers(psd: &[f64], sr: f64, nperseg: usize, f_lo: f64, f_hi: f64, bands_per_octave: usize) -> Vec<(f64, f64)> {
    let bin_hz = sr / nperseg as f64;
    let octaves = (f_hi / f_lo).log2();
    let n_bands = (octaves * bands_per_octave as f64).floor() as usize;
    let mut out = Vec::new();
    for b in 0..n_bands {
        let lo = f_lo * 2f64.powf(b as f64 / bands_per_octave as f64);
        let hi = f_lo * 2f64.powf((b + 1) as f64 / bands_per_octave as f64);
        let bins: Vec<f64> = (0..psd.len())
            .filter(|&k| {
                let f = k as f64 * bin_hz;
                f >= lo && f < hi
            })
            .map(|k| psd[k])
            .collect();
        if !bins.is_empty() {
            out.push(((lo * hi).sqrt(), bins.iter().sum::<f64>() / bins.len() as f64));
        }
    }
    out
}

/// Least-squares slope of `10 log10(power)` against `log2(freq)`: dB/octave.
pub fn slope_db_per_octave(bands: &[(f64, f64)]) -> f64 {
    let xs: Vec<f64> = bands.iter().map(|(f, _)| f.log2()).collect();
    let ys: Vec<f64> = bands.iter().map(|(_, p)| 10.0 * p.log10()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Textbook two-pass Pearson correlation.
pub fn pearson_two_pass(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx2 = 0.0;
    let mut dy2 = 0.0;
    for i in 0..x.len() {
        num += (x[i] - mx) * (y[i] - my);
        dx2 += (x[i] - mx).powi(2);
        dy2 += (y[i] - my).powi(2);
    }
    num / (dx2.sqrt() * dy2.sqrt())
}

/// Median by sorting; even counts average the middle pair.
pub fn sort_median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Weighted mean of rows with an explicit double loop.
pub fn pool_bruteforce(rows: &[Vec<f64>], weights: &[f64]) -> Vec<f64> {
    let d = rows[0].len();
    let mut out = vec![0.0; d];
    let mut total = 0.0;
    for t in 0..rows.len() {
        total += weights[t];
    }
    for j in 0..d {
        let mut num = 0.0;
        for t in 0..rows.len() {
            num += weights[t] * rows[t][j];
        }
        out[j] = num / total;
    }
    out
}

/// Pitch from a posterior over a cents grid: average of bin cents weighted by
/// posterior mass within `radius` bins of the first maximum.
pub fn weighted_cents_hz(posterior: &[f64], f_min: f64, cents_per_bin: f64, radius: usize) -> f64 {
    let mut arg = 0;
    for (i, &p) in posterior.iter().enumerate() {
        if p > posterior[arg] {
            arg = i;
        }
    }
    let lo = arg.saturating_sub(radius);
    let hi = (arg + radius).min(posterior.len() - 1);
    let mut num = 0.0;
    let mut den = 0.0;
    for k in lo..=hi {
        num += posterior[k] * k as f64 * cents_per_bin;
        den += posterior[k];
    }
    f_min * 2f64.powf(num / den / 1200.0)
}

/// One causal 1-D convolution layer in f64.
///
/// `x[t][i]`, `weight[o][i][k]` flattened as `(o * in + i) * kernel + k`, tap
/// `k` reads `x[t - (kernel - 1 - k) * dilation]`, zero before the start.
/// Strided layers produce output `t` at input position `t * stride + stride - 1`.
pub struct ConvLayer<'a> {
    pub weight: &'a [f64],
    pub bias: &'a [f64],
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
}

pub fn direct_conv(x: &[Vec<f64>], l: &ConvLayer) -> Vec<Vec<f64>> {
    let t_out = x.len() / l.stride;
    let mut y = vec![vec![0.0; l.out_ch]; t_out];
    for t in 0..t_out {
        let pos = (t * l.stride + l.stride - 1) as i64;
        for o in 0..l.out_ch {
            let mut acc = l.bias[o];
            for i in 0..l.in_ch {
                for k in 0..l.kernel {
                    let src = pos - ((l.kernel - 1 - k) * l.dilation) as i64;
                    if src >= 0 {
                        acc += l.weight[(o * l.in_ch + i) * l.kernel + k] * x[src as usize][i];
                    }
                }
            }
            y[t][o] = acc;
        }
    }
    y
}

/// `(frequency of the strongest bin, power outside +-guard bins of it over
/// power inside, in dB)` for a Hann-windowed signal.
pub fn tone_purity(x: &[f32], sr: f64, guard: usize) -> (f64, f64) {
    let seg: Vec<f64> = x.iter().map(|&v| v as f64).collect();
    let p = hann_power_spectrum(&seg);
    let peak = (0..p.len()).max_by(|&a, &b| p[a].partial_cmp(&p[b]).unwrap()).unwrap();
    let lo = peak.saturating_sub(guard);
    let hi = (peak + guard).min(p.len() - 1);
    let inside: f64 = p[lo..=hi].iter().sum();
    let outside: f64 = p.iter().sum::<f64>() - inside;
    (peak as f64 * sr / x.len() as f64, 10.0 * (outside.max(1e-300) / inside).log10())
}
