use indexmap::IndexMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtvc_core::articulatory::{interpolate_labels, invert_frames, invert_offline, EmaFrame};
use rtvc_core::frontend::{frame_offline, Analyzer, FrameSpec, StreamFramer};
use rtvc_core::nn::{random_init_with, FrameMatrix, InitConfig, Model, Registry};
use rtvc_core::source::{decode_frame, rescale_pitch, PitchGrid, RunningMedian};
use rtvc_testkit::{naive_dft_mag, sort_median, weighted_cents_hz};

fn noise(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
}

#[test]
fn magnitudes_match_a_direct_dft() {
    let spec = FrameSpec::default();
    let a = Analyzer::new(&spec).unwrap();
    let block = noise(spec.window, 3);
    let frame = a.analyze(0, &block);
    let windowed: Vec<f64> = block
        .iter()
        .enumerate()
        .map(|(i, &x)| x as f64 * (0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / spec.window as f64).cos()))
        .collect();
    let want = naive_dft_mag(&windowed);
    assert_eq!(frame.lin_mag.len(), want.len());
    let peak = want.iter().cloned().fold(0.0, f64::max);
    for (g, w) in frame.lin_mag.iter().zip(&want) {
        assert!((*g as f64 - w).abs() <= 1e-4 * peak);
    }
}

#[test]
fn streamed_frames_equal_offline_frames() {
    let a = Analyzer::new(&FrameSpec::default()).unwrap();
    let x = noise(16_000, 1);
    let offline = frame_offline(&x, &a);
    assert_eq!(offline.len(), 200);
    for chunk in [80, 240, 480, 720] {
        let mut f = StreamFramer::new(a.clone(), chunk).unwrap();
        let mut got = Vec::new();
        for c in x.chunks_exact(chunk) {
            got.extend(f.push_samples(c).unwrap());
            assert!(f.buffered() <= 1024 + chunk);
        }
        // The last frames need samples past the end and are never emitted.
        let pushed = x.len() / chunk * chunk;
        assert_eq!(got.len(), (pushed - 513) / 80 + 1);
        for fr in &got {
            assert_eq!(fr, &offline[fr.index], "chunk {chunk} frame {}", fr.index);
        }
    }
}

#[test]
fn silence_maps_to_zero_network_inputs() {
    let a = Analyzer::new(&FrameSpec::default()).unwrap();
    for f in frame_offline(&[0.0; 2000], &a) {
        assert!(a.network_mel(&f).iter().all(|&v| v == 0.0));
        assert!(a.network_mfcc(&f).iter().all(|&v| v == 0.0));
    }
}

fn posterior(pairs: &[(usize, f32)]) -> Vec<f32> {
    let mut p = vec![0.0; 360];
    for &(k, v) in pairs {
        p[k] = v;
    }
    p
}

#[test]
fn pitch_decode_against_weighted_cents() {
    let g = PitchGrid::default();
    for k in [0, 1, 100, 359] {
        assert_eq!(g.decode(&posterior(&[(k, 1.0)])).unwrap(), g.bin_hz(k));
    }
    assert_eq!(g.decode(&posterior(&[(0, 1.0)])).unwrap(), 32.70);
    let cents = |hz: f64| 1200.0 * hz.log2();
    let split = posterior(&[(120, 0.6), (121, 0.4)]);
    let want = weighted_cents_hz(&split.iter().map(|&v| v as f64).collect::<Vec<_>>(), 32.70, 20.0, 4);
    assert!((cents(g.decode(&split).unwrap()) - cents(want)).abs() < 0.1);
    for k in 0..359 {
        let a = g.decode(&posterior(&[(k, 1.0)])).unwrap();
        let b = g.decode(&posterior(&[(k + 1, 1.0)])).unwrap();
        assert!((b / a / 2f64.powf(1.0 / 60.0) - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn decode_matches_oracle_on_random_posteriors(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p: Vec<f32> = (0..360).map(|_| rng.random_range(0.0..1.0f32).powi(8)).collect();
        let want = weighted_cents_hz(&p.iter().map(|&v| v as f64).collect::<Vec<_>>(), 32.70, 20.0, 4);
        let got = PitchGrid::default().decode(&p).unwrap();
        prop_assert!((1200.0 * (got / want).log2()).abs() < 0.1);
    }

    #[test]
    fn running_median_matches_sorting(values in prop::collection::vec(50.0f64..500.0, 1..200)) {
        let mut m = RunningMedian::new(150.0);
        for (i, &v) in values.iter().enumerate() {
            m.insert(v);
            prop_assert_eq!(m.median(), sort_median(&values[..=i]));
        }
    }

    #[test]
    fn interpolation_hits_inputs_and_midpoints(seed in any::<u64>(), n in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames: Vec<EmaFrame> = (0..n)
            .map(|_| EmaFrame::from_slice(&(0..12).map(|_| rng.random_range(-5.0..5.0)).collect::<Vec<f32>>()).unwrap())
            .collect();
        let out = interpolate_labels(&frames).unwrap();
        prop_assert_eq!(out.len(), 4 * (n - 1) + 1);
        for i in 0..n {
            prop_assert_eq!(out[4 * i], frames[i]);
        }
        for i in 0..n - 1 {
            for c in 0..12 {
                let mid = (frames[i].coords[c] + frames[i + 1].coords[c]) / 2.0;
                prop_assert!((out[4 * i + 2].coords[c] - mid).abs() <= 1e-6 * (1.0 + mid.abs()));
            }
        }
        // commutes with a per-channel affine map
        let map = |f: &EmaFrame| {
            let mut g = *f;
            for (c, v) in g.coords.iter_mut().enumerate() {
                *v = (c as f32 - 6.0) * 0.5 * *v + 0.25;
            }
            g
        };
        let mapped = interpolate_labels(&frames.iter().map(map).collect::<Vec<_>>()).unwrap();
        for (a, b) in mapped.iter().zip(out.iter().map(map)) {
            for c in 0..12 {
                prop_assert!((a.coords[c] - b.coords[c]).abs() <= 1e-4);
            }
        }
    }
}

#[test]
fn median_rescaling() {
    assert_eq!(rescale_pitch(123.4, 150.0, 150.0).unwrap(), 123.4);
    assert_eq!(rescale_pitch(0.0, 150.0, 300.0).unwrap(), 0.0);
    assert_eq!(rescale_pitch(100.0, 150.0, 300.0).unwrap(), 200.0);
    assert!(rescale_pitch(100.0, 0.0, 300.0).is_err());
    assert!(rescale_pitch(100.0, 150.0, -1.0).is_err());
}

#[test]
fn decode_frame_reads_all_heads() {
    let mut heads = IndexMap::new();
    let mut logits = vec![-50.0f32; 360];
    logits[60] = 10.0;
    heads.insert("pitch".to_string(), FrameMatrix::from_flat(360, logits).unwrap());
    heads.insert("periodicity".to_string(), FrameMatrix::from_flat(1, vec![3.0]).unwrap());
    heads.insert("loudness".to_string(), FrameMatrix::from_flat(1, vec![-2.0]).unwrap());
    let f = decode_frame(&heads, 0, &PitchGrid::default()).unwrap();
    assert!(f.voiced);
    assert!((f.f0 - 65.4).abs() < 1e-9);
    assert_eq!(f.loudness, 0.0);
}

#[test]
fn inverter_on_zero_input_is_constant_and_streams() {
    let r = Registry::compact();
    let g = r.get("ema_inverter").unwrap();
    let model = Model::new(g.clone(), &random_init_with(g, InitConfig::zero_bias(2))).unwrap();
    let zeros = FrameMatrix::zeros(50, 20);
    let out = invert_offline(&model, &zeros).unwrap();
    assert_eq!(out.len(), 50);
    assert!(out.iter().all(|f| *f == out[0] && f.coords.iter().all(|c| c.abs() < 10.0)));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = FrameMatrix::from_flat(20, (0..60 * 20).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
    let whole = invert_offline(&model, &x).unwrap();
    let mut state = model.new_stream_state().unwrap();
    let mut parts = Vec::new();
    for s in (0..60).step_by(7) {
        parts.extend(invert_frames(&model, &mut state, &x.slice(s, (s + 7).min(60))).unwrap());
    }
    assert_eq!(parts.len(), whole.len());
    for (a, b) in parts.iter().zip(&whole) {
        for c in 0..12 {
            assert!((a.coords[c] - b.coords[c]).abs() <= 1e-5);
        }
    }
}
