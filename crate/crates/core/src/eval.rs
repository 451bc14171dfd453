//! Noise robustness harness: coloured noise, SNR mixing, f0 correlation and
//! the sweep that ties them to the conversion pipeline.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::runtime::{convert_offline, Pipeline, Target};
use crate::vocoder::multiscale_spectral_distance;

pub const MIN_NOISE_SAMPLES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseColor {
    White,
    Pink,
    Brown,
}

impl NoiseColor {
    pub const ALL: [NoiseColor; 3] = [NoiseColor::White, NoiseColor::Pink, NoiseColor::Brown];

    /// Nominal PSD slope in dB per octave.
    pub fn slope_db_per_octave(self) -> f64 {
        match self {
            NoiseColor::White => 0.0,
            NoiseColor::Pink => -3.0,
            NoiseColor::Brown => -6.0,
        }
    }
}

impl fmt::Display for NoiseColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseColor::White => "white",
            NoiseColor::Pink => "pink",
            NoiseColor::Brown => "brown",
        })
    }
}

impl FromStr for NoiseColor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "white" => Ok(NoiseColor::White),
            "pink" => Ok(NoiseColor::Pink),
            "brown" | "brownian" | "red" => Ok(NoiseColor::Brown),
            other => Err(Error::Parameter(format!("unknown noise colour {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub color: NoiseColor,
    pub snr_db: f64,
    pub seed: u64,
}

fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn unit_rms(x: &mut [f64]) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v /= rms);
    }
}

/// Seeded noise of the requested colour. White and pink have unit RMS;
/// brown is peak-normalised.
pub fn gen_noise(spec: &NoiseSpec, n: usize) -> Result<Vec<f32>> {
    if n < MIN_NOISE_SAMPLES {
        return Err(Error::Parameter(format!("need at least {MIN_NOISE_SAMPLES} samples, got {n}")));
    }
    let mut white = gaussian(n, spec.seed);
    let out = match spec.color {
        NoiseColor::White => white,
        NoiseColor::Pink => {
            let mut planner = FftPlanner::new();
            let mut buf: Vec<Complex<f64>> = white.iter().map(|&v| Complex::new(v, 0.0)).collect();
            planner.plan_fft_forward(n).process(&mut buf);
            buf[0] = Complex::new(0.0, 0.0);
            for k in 1..n {
                // Mirror bins share the same |f| so the result stays real.
                let f = k.min(n - k) as f64;
                buf[k] /= f.sqrt();
            }
            planner.plan_fft_inverse(n).process(&mut buf);
            let mut x: Vec<f64> = buf.iter().map(|c| c.re).collect();
            unit_rms(&mut x);
            x
        }
        NoiseColor::Brown => {
            let mut acc = 0.0;
            for v in white.iter_mut() {
                acc += *v;
                *v = acc;
            }
            let mean = white.iter().sum::<f64>() / n as f64;
            white.iter_mut().for_each(|v| *v -= mean);
            let peak = white.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak > 0.0 {
                white.iter_mut().for_each(|v| *v /= peak);
            }
            white
        }
    };
    Ok(out.into_iter().map(|v| v as f32).collect())
}

pub fn power(x: &[f32]) -> f64 {
    x.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / x.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub samples: Vec<f32>,
    /// Gain applied to the noise before mixing.
    pub noise_gain: f64,
    /// Samples clipped to [-1, 1].
    pub clipped: usize,
}

/// Add `noise` scaled so the full-utterance SNR is `snr_db`. `+inf` returns
/// the clean signal unchanged.
pub fn mix_at_snr(clean: &[f32], noise: &[f32], snr_db: f64) -> Result<Mixture> {
    if clean.len() != noise.len() {
        return Err(Error::Parameter(format!("length mismatch: {} vs {}", clean.len(), noise.len())));
    }
    let pc = power(clean);
    if !(pc > 0.0) {
        return Err(Error::Parameter("clean signal has zero energy".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(Mixture { samples: clean.to_vec(), noise_gain: 0.0, clipped: 0 });
    }
    if !snr_db.is_finite() {
        return Err(Error::Parameter(format!("invalid SNR {snr_db}")));
    }
    let pn = power(noise);
    if !(pn > 0.0) {
        return Err(Error::Parameter("noise has zero energy".into()));
    }
    let gain = (pc / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut clipped = 0;
    let samples = clean
        .iter()
        .zip(noise)
        .map(|(&c, &n)| {
            let v = c as f64 + gain * n as f64;
            if v.abs() > 1.0 {
                clipped += 1;
            }
            v.clamp(-1.0, 1.0) as f32
        })
        .collect();
    Ok(Mixture { samples, noise_gain: gain, clipped })
}

/// Pearson correlation over frames voiced (f0 > 0) in both contours.
pub fn f0_pcc(src: &[f64], conv: &[f64]) -> Result<f64> {
    if src.len() != conv.len() {
        return Err(Error::Parameter(format!("contour lengths differ: {} vs {}", src.len(), conv.len())));
    }
    // Running co-moments (Welford).
    let (mut n, mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0f64, 0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in src.iter().zip(conv) {
        if !(x > 0.0 && y > 0.0) {
            continue;
        }
        n += 1.0;
        let dx = x - mx;
        mx += dx / n;
        let dy = y - my;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if n < 2.0 {
        return Err(Error::Parameter(format!("{n} frames voiced in both contours, need 2")));
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("a contour is constant over the voiced frames".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub const METRIC_F0_PCC: &str = "f0_pcc";
pub const METRIC_SPECTRAL_DISTANCE: &str = "spectral_distance";
pub const CSV_HEADER: [&str; 5] = ["condition", "color", "snr_db", "metric", "value"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub condition: String,
    pub color: NoiseColor,
    pub snr_db: f64,
    pub metric: String,
    pub value: f64,
}

pub fn condition_label(color: NoiseColor, snr_db: f64) -> String {
    if snr_db == f64::INFINITY {
        format!("{color}_clean")
    } else {
        format!("{color}_{snr_db}dB")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub snrs_db: Vec<f64>,
    pub colors: Vec<NoiseColor>,
    pub seed: u64,
}

struct Cell {
    distance: f64,
    pcc: Option<f64>,
}

fn sweep_utterance(pipeline: &Pipeline, target: &Target, cfg: &SweepConfig, u: usize, clean: &[f32]) -> Result<Vec<Cell>> {
    let reference = convert_offline(pipeline, clean, target)?;
    let ref_f0: Vec<f64> = reference.frames.iter().map(|f| f.f0).collect();
    let mut cells = Vec::new();
    for (ci, &color) in cfg.colors.iter().enumerate() {
        let seed = cfg.seed ^ ((u as u64) << 32) ^ ci as u64;
        let noise = gen_noise(&NoiseSpec { color, snr_db: 0.0, seed }, clean.len().max(MIN_NOISE_SAMPLES))?;
        for &snr in &cfg.snrs_db {
            let mixed = mix_at_snr(clean, &noise[..clean.len()], snr)?;
            let conv = convert_offline(pipeline, &mixed.samples, target)?;
            let conv_f0: Vec<f64> = conv.frames.iter().map(|f| f.f0).collect();
            let pcc = match f0_pcc(&ref_f0, &conv_f0) {
                Ok(v) => Some(v),
                Err(e) => {
                    log::warn!("utterance {u} {color} {snr} dB: f0 correlation skipped: {e}");
                    None
                }
            };
            cells.push(Cell { distance: multiscale_spectral_distance(&reference.samples, &conv.samples)?, pcc });
        }
    }
    Ok(cells)
}

/// Mix every source with every (colour, SNR), convert, and compare with the
/// clean-input conversion. Each row is a mean over utterances; the f0
/// correlation averages only utterances where it is defined and is 0 when
/// it is defined for none.
pub fn run_sweep(pipeline: &Pipeline, sources: &[Vec<f32>], target: &Target, cfg: &SweepConfig) -> Result<Vec<MetricRow>> {
    if sources.is_empty() {
        return Err(Error::Parameter("no source utterances".into()));
    }
    let per_utt: Vec<Vec<Cell>> = sources
        .par_iter()
        .enumerate()
        .map(|(u, s)| sweep_utterance(pipeline, target, cfg, u, s))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut idx = 0;
    for &color in &cfg.colors {
        for &snr in &cfg.snrs_db {
            let cells: Vec<&Cell> = per_utt.iter().map(|c| &c[idx]).collect();
            idx += 1;
            let pccs: Vec<f64> = cells.iter().filter_map(|c| c.pcc).collect();
            let pcc = if pccs.is_empty() { 0.0 } else { pccs.iter().sum::<f64>() / pccs.len() as f64 };
            let dist = cells.iter().map(|c| c.distance).sum::<f64>() / cells.len() as f64;
            for (metric, value) in [(METRIC_F0_PCC, pcc), (METRIC_SPECTRAL_DISTANCE, dist)] {
                rows.push(MetricRow {
                    condition: condition_label(color, snr),
                    color,
                    snr_db: snr,
                    metric: metric.into(),
                    value,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_csv(rows: &[MetricRow], w: impl std::io::Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in rows {
        out.write_record([
            r.condition.clone(),
            r.color.to_string(),
            r.snr_db.to_string(),
            r.metric.clone(),
            r.value.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv(r: impl std::io::Read) -> Result<Vec<MetricRow>> {
    let mut reader = csv::Reader::from_reader(r);
    let headers = reader.headers().map_err(csv_err)?.clone();
    if headers.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!("unexpected CSV header {headers:?}")));
    }
    reader.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("csv: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colours_parse() {
        for c in NoiseColor::ALL {
            assert_eq!(c.to_string().parse::<NoiseColor>().unwrap(), c);
        }
        assert!("green".parse::<NoiseColor>().is_err());
    }

    #[test]
    fn short_noise_rejected() {
        let s = NoiseSpec { color: NoiseColor::Pink, snr_db: 0.0, seed: 1 };
        assert!(gen_noise(&s, 4095).is_err());
        assert_eq!(gen_noise(&s, 4096).unwrap().len(), 4096);
    }

    #[test]
    fn brown_is_peak_normalised() {
        let x = gen_noise(&NoiseSpec { color: NoiseColor::Brown, snr_db: 0.0, seed: 2 }, 8000).unwrap();
        let peak = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infinite_snr_is_clean() {
        let clean = vec![0.1f32, -0.2, 0.3, 0.0];
        let m = mix_at_snr(&clean, &[1.0, 1.0, -1.0, 1.0], f64::INFINITY).unwrap();
        assert_eq!(m.samples, clean);
        assert!(mix_at_snr(&[0.0; 4], &[1.0; 4], 0.0).is_err());
        assert!(mix_at_snr(&clean, &[1.0; 3], 0.0).is_err());
    }

    #[test]
    fn pcc_edge_cases() {
        let a = [100.0, 0.0, 120.0, 130.0, 0.0];
        assert!((f0_pcc(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(f0_pcc(&a, &[1.0, 1.0, 0.0, 0.0, 1.0]), Err(Error::Parameter(_))));
        assert!(matches!(f0_pcc(&a, &[5.0; 5]), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricRow { condition: condition_label(NoiseColor::Pink, f64::INFINITY), color: NoiseColor::Pink, snr_db: f64::INFINITY, metric: METRIC_F0_PCC.into(), value: 1.0 },
            MetricRow { condition: condition_label(NoiseColor::White, -5.0), color: NoiseColor::White, snr_db: -5.0, metric: METRIC_SPECTRAL_DISTANCE.into(), value: 0.125 },
        ];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("condition,color,snr_db,metric,value\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }
}
