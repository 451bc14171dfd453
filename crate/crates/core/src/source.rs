//! Source-feature decoding (pitch, periodicity, loudness), the running
//! source-pitch median and target-range pitch rescaling.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use indexmap::IndexMap;
use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, FrameMatrix};

/// Periodicity at or above this marks a frame voiced.
pub const VOICING_THRESHOLD: f32 = 0.5;
/// Bins on each side of the argmax included in the weighted average.
pub const DECODE_RADIUS: usize = 4;
pub const DEFAULT_MEDIAN_HZ: f64 = 150.0;

/// Log-spaced pitch classes: bin `k` sits `k * cents_per_bin` above `f_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchGrid {
    pub n_bins: usize,
    pub f_min: f64,
    pub cents_per_bin: f64,
}

impl Default for PitchGrid {
    fn default() -> Self {
        Self { n_bins: 360, f_min: 32.70, cents_per_bin: 20.0 }
    }
}

impl PitchGrid {
    pub fn bin_hz(&self, k: usize) -> f64 {
        self.cents_to_hz(k as f64 * self.cents_per_bin)
    }

    /// Cents above `f_min` to Hz.
    pub fn cents_to_hz(&self, cents: f64) -> f64 {
        self.f_min * (cents / 1200.0).exp2()
    }

    pub fn max_hz(&self) -> f64 {
        self.bin_hz(self.n_bins - 1)
    }

    /// Weighted mean of bin positions around the posterior's peak, in Hz.
    ///
    /// Ties in the argmax resolve to the lowest bin. The posterior need not be
    /// normalised.
    pub fn decode(&self, posterior: &[f32]) -> Result<f64> {
        if posterior.len() != self.n_bins {
            return Err(Error::Structural(format!(
                "posterior has {} bins, grid has {}",
                posterior.len(),
                self.n_bins
            )));
        }
        if posterior.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::Data("posterior entries must be finite and non-negative".into()));
        }
        let (peak, &best) = posterior
            .iter()
            .enumerate()
            .fold((0, &posterior[0]), |acc, (k, p)| if *p > *acc.1 { (k, p) } else { acc });
        if best <= 0.0 {
            return Err(Error::Decode("posterior has no mass".into()));
        }
        let lo = peak.saturating_sub(DECODE_RADIUS);
        let hi = (peak + DECODE_RADIUS).min(self.n_bins - 1);
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for (k, &p) in posterior.iter().enumerate().take(hi + 1).skip(lo) {
            num += p as f64 * k as f64 * self.cents_per_bin;
            den += p as f64;
        }
        Ok(self.cents_to_hz(num / den))
    }
}

/// Decoded source features for one 200 Hz frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceFeatures {
    /// Hz, 0 when unvoiced.
    pub f0: f64,
    pub periodicity: f32,
    pub voiced: bool,
    pub loudness: f32,
}

fn head_row<'a>(heads: &'a IndexMap<String, FrameMatrix>, name: &str, t: usize, dim: usize) -> Result<&'a [f32]> {
    let m = heads.get(name).ok_or_else(|| Error::Structural(format!("missing head {name}")))?;
    if m.dim() != dim {
        return Err(Error::Structural(format!("head {name} has dim {}, expected {dim}", m.dim())));
    }
    if t >= m.frames() {
        return Err(Error::Structural(format!("head {name} has no frame {t}")));
    }
    Ok(m.row(t))
}

/// Decode frame `t` of the source extractor's `pitch`, `periodicity` and
/// `loudness` heads.
pub fn decode_frame(heads: &IndexMap<String, FrameMatrix>, t: usize, grid: &PitchGrid) -> Result<SourceFeatures> {
    let logits = head_row(heads, "pitch", t, grid.n_bins)?;
    let periodicity = sigmoid(head_row(heads, "periodicity", t, 1)?[0]);
    let loudness = head_row(heads, "loudness", t, 1)?[0].max(0.0);
    let voiced = periodicity >= VOICING_THRESHOLD;
    let f0 = if voiced {
        let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let posterior: Vec<f32> = logits.iter().map(|&l| (l - max).exp()).collect();
        grid.decode(&posterior)?
    } else {
        0.0
    };
    Ok(SourceFeatures { f0, periodicity, voiced, loudness })
}

/// Decode every frame of a head map.
pub fn decode_frames(heads: &IndexMap<String, FrameMatrix>, grid: &PitchGrid) -> Result<Vec<SourceFeatures>> {
    let n = heads.get("pitch").map_or(0, FrameMatrix::frames);
    (0..n).map(|t| decode_frame(heads, t, grid)).collect()
}

/// Exact running median of every voiced f0 seen so far.
///
/// Two heaps split the values at the median; memory grows by one entry per
/// voiced frame (60 000 entries for a five-minute session).
#[derive(Debug, Clone, Default)]
pub struct RunningMedian {
    low: BinaryHeap<OrderedFloat<f64>>,
    high: BinaryHeap<Reverse<OrderedFloat<f64>>>,
    default_hz: f64,
}

impl RunningMedian {
    pub fn new(default_hz: f64) -> Self {
        Self { low: BinaryHeap::new(), high: BinaryHeap::new(), default_hz }
    }

    pub fn len(&self) -> usize {
        self.low.len() + self.high.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, v: f64) {
        match self.low.peek() {
            Some(&top) if v > top.0 => self.high.push(Reverse(OrderedFloat(v))),
            _ => self.low.push(OrderedFloat(v)),
        }
        if self.low.len() > self.high.len() + 1 {
            let x = self.low.pop().unwrap();
            self.high.push(Reverse(x));
        } else if self.high.len() > self.low.len() {
            let Reverse(x) = self.high.pop().unwrap();
            self.low.push(x);
        }
    }

    /// Current median, or the configured default before any value.
    pub fn median(&self) -> f64 {
        match (self.low.peek(), self.high.peek()) {
            (None, _) => self.default_hz,
            (Some(l), Some(Reverse(h))) if self.low.len() == self.high.len() => (l.0 + h.0) / 2.0,
            (Some(l), _) => l.0,
        }
    }

    /// Insert the frame's f0 when voiced and return the updated median.
    pub fn update(&mut self, feat: &SourceFeatures) -> f64 {
        if feat.voiced && feat.f0 > 0.0 {
            self.insert(feat.f0);
        }
        self.median()
    }
}

/// Map a source f0 into the target speaker's range: `f0 * m_tgt / m_src`.
pub fn rescale_pitch(f0: f64, m_src: f64, m_tgt: f64) -> Result<f64> {
    if !(m_src > 0.0) || !(m_tgt > 0.0) {
        return Err(Error::Parameter(format!("medians must be positive (src {m_src}, tgt {m_tgt})")));
    }
    if f0 == 0.0 {
        return Ok(0.0);
    }
    // ratio first, so equal medians are an exact identity
    Ok(f0 * (m_tgt / m_src))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot(k: usize) -> Vec<f32> {
        let mut p = vec![0.0; 360];
        p[k] = 1.0;
        p
    }

    #[test]
    fn one_hot_decodes_to_bin_centre() {
        let g = PitchGrid::default();
        assert_eq!(g.decode(&one_hot(0)).unwrap(), 32.70);
        for k in [1, 59, 60, 200, 359] {
            let want = 32.70 * (k as f64 / 60.0).exp2();
            let got = g.decode(&one_hot(k)).unwrap();
            assert!((got - want).abs() <= 1e-12 * want, "{k}: {got} vs {want}");
        }
    }

    #[test]
    fn grid_span() {
        let g = PitchGrid::default();
        // six octaves less one bin above C1
        assert!((g.max_hz() - 32.70 * (359.0f64 / 60.0).exp2()).abs() < 1e-9);
        assert!((g.max_hz() - 2068.76).abs() < 0.01);
        assert!(g.bin_hz(1) > g.bin_hz(0));
    }

    #[test]
    fn zero_posterior_is_decode_error() {
        assert!(matches!(PitchGrid::default().decode(&[0.0; 360]), Err(Error::Decode(_))));
        assert!(PitchGrid::default().decode(&[0.0; 10]).is_err());
    }

    #[test]
    fn window_clipped_at_edges() {
        let g = PitchGrid::default();
        let mut p = vec![0.0f32; 360];
        p[0] = 1.0;
        p[2] = 1.0;
        let want = g.cents_to_hz(20.0);
        assert!((g.decode(&p).unwrap() - want).abs() < 1e-12);
        let mut p = vec![0.0f32; 360];
        p[359] = 2.0;
        p[357] = 1.0;
        p[350] = 0.5; // outside the window around bin 359
        let got = g.decode(&p).unwrap();
        let want = g.cents_to_hz((2.0 * 359.0 + 357.0) / 3.0 * 20.0);
        assert!((got - want).abs() < 1e-9);
    }

    fn heads(pitch: Vec<f32>, per: f32, loud: f32) -> IndexMap<String, FrameMatrix> {
        let mut m = IndexMap::new();
        m.insert("pitch".into(), FrameMatrix::from_flat(360, pitch).unwrap());
        m.insert("periodicity".into(), FrameMatrix::from_flat(1, vec![per]).unwrap());
        m.insert("loudness".into(), FrameMatrix::from_flat(1, vec![loud]).unwrap());
        m
    }

    #[test]
    fn unvoiced_gate_and_loudness_clamp() {
        let f = decode_frame(&heads(one_hot(100), -10.0, -0.3), 0, &PitchGrid::default()).unwrap();
        assert!(!f.voiced);
        assert_eq!(f.f0, 0.0);
        assert_eq!(f.loudness, 0.0);
        let f = decode_frame(&heads(one_hot(100), 3.0, 0.7), 0, &PitchGrid::default()).unwrap();
        assert!(f.voiced && f.f0 > 0.0);
        assert_eq!(f.loudness, 0.7);
    }

    #[test]
    fn missing_head_is_structural() {
        let mut h = heads(one_hot(3), 1.0, 1.0);
        h.shift_remove("loudness");
        assert!(matches!(decode_frame(&h, 0, &PitchGrid::default()), Err(Error::Structural(_))));
    }

    #[test]
    fn median_small_cases() {
        let mut m = RunningMedian::new(150.0);
        assert_eq!(m.median(), 150.0);
        m.insert(100.0);
        m.insert(200.0);
        assert_eq!(m.median(), 150.0);
        m.insert(300.0);
        assert_eq!(m.median(), 200.0);
        let unvoiced = SourceFeatures { f0: 0.0, periodicity: 0.1, voiced: false, loudness: 0.0 };
        assert_eq!(m.update(&unvoiced), 200.0);
        assert_eq!(m.len(), 3);
    }

    #[test]
    fn rescale_cases() {
        assert_eq!(rescale_pitch(123.0, 140.0, 140.0).unwrap(), 123.0);
        assert_eq!(rescale_pitch(120.0, 120.0, 240.0).unwrap(), 240.0);
        assert_eq!(rescale_pitch(0.0, 120.0, 240.0).unwrap(), 0.0);
        assert!(matches!(rescale_pitch(100.0, 0.0, 240.0), Err(Error::Parameter(_))));
        assert!(matches!(rescale_pitch(100.0, 100.0, -1.0), Err(Error::Parameter(_))));
    }
}
