use std::f64::consts::TAU;

use crate::nn::registry::HARMONICS;

/// Per-frame harmonic controls at 200 Hz.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HarmonicControls {
    /// Overall amplitude, `>= 0`.
    pub global_amp: Vec<f32>,
    /// Distribution over harmonics `1..=K`, one row per frame, summing to 1.
    pub harm_dist: Vec<[f32; HARMONICS]>,
}

impl HarmonicControls {
    pub fn len(&self) -> usize {
        self.global_amp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global_amp.is_empty()
    }

    /// Same amplitude and distribution on every frame.
    pub fn constant(frames: usize, amp: f32, dist: [f32; HARMONICS]) -> Self {
        Self { global_amp: vec![amp; frames], harm_dist: vec![dist; frames] }
    }

    pub fn append(&mut self, other: &HarmonicControls) {
        self.global_amp.extend_from_slice(&other.global_amp);
        self.harm_dist.extend_from_slice(&other.harm_dist);
    }
}

/// One-hot distribution on harmonic `k` (1-based).
pub fn one_hot(k: usize) -> [f32; HARMONICS] {
    let mut d = [0.0; HARMONICS];
    d[k - 1] = 1.0;
    d
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Anchor {
    f0: f64,
    amp: f64,
    dist: [f32; HARMONICS],
}

/// Additive oscillator bank with linear control interpolation.
///
/// Controls move from the previous frame's values to the current frame's
/// over the frame's `hop` samples, reaching them on the last sample. Frames
/// with f0 = 0 are silent and leave the phase untouched; f0 is held across
/// them so a voiced onset glides from the last known pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSynth {
    sample_rate: f64,
    hop: usize,
    phase: f64,
    prev: Option<Anchor>,
}

impl HarmonicSynth {
    pub fn new(sample_rate: u32, hop: usize) -> Self {
        Self { sample_rate: sample_rate as f64, hop, phase: 0.0, prev: None }
    }

    pub fn phase(&self) -> f64 {
        self.phase
    }

    pub fn nyquist(&self) -> f64 {
        self.sample_rate / 2.0
    }

    /// Synthesize `hop` samples per frame.
    pub fn process(&mut self, f0: &[f64], controls: &HarmonicControls) -> Vec<f32> {
        assert_eq!(f0.len(), controls.len(), "f0 and controls disagree on frame count");
        let mut out = vec![0.0f32; f0.len() * self.hop];
        let nyq = self.nyquist();
        let mut sines = [0.0f64; HARMONICS];
        let mut weights = [0.0f64; HARMONICS];
        for (j, block) in out.chunks_exact_mut(self.hop).enumerate() {
            let voiced = f0[j] > 0.0;
            let held_f0 = match (voiced, self.prev) {
                (true, _) => f0[j],
                (false, Some(p)) => p.f0,
                (false, None) => 0.0,
            };
            let cur = Anchor {
                f0: held_f0,
                amp: if voiced { controls.global_amp[j].max(0.0) as f64 } else { 0.0 },
                dist: controls.harm_dist[j],
            };
            let prev = match self.prev {
                Some(p) if p.f0 > 0.0 => p,
                Some(p) => Anchor { f0: cur.f0, ..p },
                None => cur,
            };
            self.prev = Some(cur);
            if !voiced {
                continue;
            }
            for (m, y) in block.iter_mut().enumerate() {
                let a = (m + 1) as f64 / self.hop as f64;
                let f = prev.f0 + (cur.f0 - prev.f0) * a;
                let amp = prev.amp + (cur.amp - prev.amp) * a;
                self.phase = (self.phase + TAU * f / self.sample_rate).rem_euclid(TAU);
                if amp == 0.0 || f <= 0.0 {
                    continue;
                }
                // Harmonics at or above Nyquist are dropped and the rest renormalised.
                let mut total = 0.0;
                let audible = ((nyq / f).ceil() as usize).saturating_sub(1).min(HARMONICS);
                for k in 0..audible {
                    let w = prev.dist[k] as f64 + (cur.dist[k] as f64 - prev.dist[k] as f64) * a;
                    weights[k] = w.max(0.0);
                    total += weights[k];
                }
                if total <= 0.0 {
                    continue;
                }
                // sin(k x) by the Chebyshev recurrence.
                let (s1, c1) = self.phase.sin_cos();
                let mut acc = 0.0;
                for k in 0..audible {
                    sines[k] = match k {
                        0 => s1,
                        1 => 2.0 * c1 * s1,
                        _ => 2.0 * c1 * sines[k - 1] - sines[k - 2],
                    };
                    acc += weights[k] * sines[k];
                }
                *y = (amp * acc / total) as f32;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unvoiced_is_exact_silence() {
        let mut s = HarmonicSynth::new(16_000, 80);
        let c = HarmonicControls::constant(50, 1.0, [1.0 / HARMONICS as f32; HARMONICS]);
        assert!(s.process(&[0.0; 50], &c).iter().all(|&x| x == 0.0));
        assert_eq!(s.phase(), 0.0);
    }

    #[test]
    fn harmonic_count_respects_nyquist() {
        // 5 kHz: only k = 1 is below 8 kHz; weight on k >= 2 is masked out.
        let mut s = HarmonicSynth::new(16_000, 80);
        let mut d = [0.0; HARMONICS];
        d[1] = 0.9;
        d[5] = 0.1;
        let c = HarmonicControls::constant(4, 1.0, d);
        assert!(s.process(&[5000.0; 4], &c).iter().all(|&x| x == 0.0));
        d[0] = 0.5;
        let c = HarmonicControls::constant(4, 1.0, d);
        let y = HarmonicSynth::new(16_000, 80).process(&[5000.0; 4], &c);
        let peak = y.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        assert!(peak > 0.9 && peak <= 1.0 + 1e-6, "{peak}");
    }

    #[test]
    fn chunking_does_not_change_output() {
        let f0: Vec<f64> = (0..30).map(|i| if i % 7 == 3 { 0.0 } else { 100.0 + 5.0 * i as f64 }).collect();
        let mut c = HarmonicControls::default();
        for i in 0..30 {
            let mut d = [0.0; HARMONICS];
            d[i % 5] = 0.6;
            d[(i + 2) % 9] += 0.4;
            c.global_amp.push(0.1 * (i % 4) as f32);
            c.harm_dist.push(d);
        }
        let whole = HarmonicSynth::new(16_000, 80).process(&f0, &c);
        let mut s = HarmonicSynth::new(16_000, 80);
        let mut parts = Vec::new();
        for r in [0..3, 3..4, 4..17, 17..30] {
            let sub = HarmonicControls {
                global_amp: c.global_amp[r.clone()].to_vec(),
                harm_dist: c.harm_dist[r.clone()].to_vec(),
            };
            parts.extend(s.process(&f0[r], &sub));
        }
        assert_eq!(whole, parts);
    }
}
