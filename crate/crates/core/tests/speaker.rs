use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rtvc_core::frontend::{Analyzer, FrameSpec};
use rtvc_core::models::Models;
use rtvc_core::nn::{FrameMatrix, InitConfig, Registry};
use rtvc_core::speaker::{enroll, group_weights, pool_weighted, source_track, speaker_frames};
use rtvc_core::Error;
use rtvc_testkit::{pool_bruteforce, sort_median};

fn matrix(rows: &[Vec<f64>]) -> FrameMatrix {
    let v: Vec<Vec<f32>> = rows.iter().map(|r| r.iter().map(|&x| x as f32).collect()).collect();
    FrameMatrix::from_rows(rows[0].len(), &v).unwrap()
}

fn random_case(seed: u64, t: usize, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..t).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0) as f32 as f64).collect()).collect();
    let mut w: Vec<f64> = (0..t).map(|_| rng.random_range(0.0..1.0) as f32 as f64).collect();
    w[0] += 0.01;
    (rows, w)
}

#[test]
fn pooling_matches_bruteforce() {
    for seed in 0..20 {
        let (rows, w) = random_case(seed, 50, 128);
        let got = pool_weighted(&matrix(&rows), &w.iter().map(|&v| v as f32).collect::<Vec<_>>()).unwrap();
        for (g, o) in got.iter().zip(pool_bruteforce(&rows, &w)) {
            assert!((*g as f64 - o).abs() <= 1e-6, "{g} vs {o}");
        }
    }
}

#[test]
fn one_hot_weight_selects_a_frame() {
    let (rows, _) = random_case(3, 10, 8);
    let mut w = vec![0.0f32; 10];
    w[6] = 1.0;
    let got = pool_weighted(&matrix(&rows), &w).unwrap();
    assert_eq!(got, rows[6].iter().map(|&x| x as f32).collect::<Vec<_>>());
    assert!(matches!(pool_weighted(&matrix(&rows), &[0.0; 10]), Err(Error::Enrollment(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pooled_vector_lies_in_the_hull(seed in any::<u64>(), t in 1usize..30, d in 1usize..8, scale in 0.01f32..100.0) {
        let (rows, w) = random_case(seed, t, d);
        let w32: Vec<f32> = w.iter().map(|&v| v as f32).collect();
        let m = matrix(&rows);
        let pooled = pool_weighted(&m, &w32).unwrap();
        for c in 0..d {
            let lo = rows.iter().map(|r| r[c]).fold(f64::INFINITY, f64::min) as f32;
            let hi = rows.iter().map(|r| r[c]).fold(f64::NEG_INFINITY, f64::max) as f32;
            prop_assert!(pooled[c] >= lo - 1e-6 && pooled[c] <= hi + 1e-6);
        }
        let rescaled: Vec<f32> = w32.iter().map(|v| v * scale).collect();
        for (a, b) in pool_weighted(&m, &rescaled).unwrap().iter().zip(&pooled) {
            prop_assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()));
        }
        let uniform = pool_weighted(&m, &vec![1.0; t]).unwrap();
        for c in 0..d {
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / t as f64;
            prop_assert!((uniform[c] as f64 - mean).abs() <= 1e-5);
        }
    }
}

fn utterance(seed: u64, n: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let t = i as f32 / 16_000.0;
            0.3 * (std::f32::consts::TAU * 140.0 * t).sin() + 0.05 * rng.random_range(-1.0..1.0f32)
        })
        .collect()
}

#[test]
fn enrollment_composes_and_is_deterministic() {
    let models = Models::random(&Registry::compact(), InitConfig::new(31)).unwrap();
    let a = Analyzer::new(&FrameSpec::default()).unwrap();
    let x = utterance(1, 20_000);
    let e = enroll(&x, &a, &models, "u1").unwrap();
    assert_eq!(e, enroll(&x, &a, &models, "u1").unwrap());
    assert!(e.embedding.vec.iter().any(|&v| v != 0.0));

    let track = source_track(&x, &a, &models.source).unwrap();
    let frames = speaker_frames(&x, &models).unwrap();
    let n = frames.frames().min(track.len().div_ceil(4));
    let w: Vec<f64> = group_weights(&track, 4, n).iter().map(|&v| v as f64).collect();
    let rows: Vec<Vec<f64>> = (0..n).map(|t| frames.row(t).iter().map(|&v| v as f64).collect()).collect();
    for (g, o) in e.embedding.vec.iter().zip(pool_bruteforce(&rows, &w)) {
        assert!((*g as f64 - o).abs() <= 1e-5 * (1.0 + o.abs()));
    }
    let voiced: Vec<f64> = track.iter().filter(|f| f.voiced).map(|f| f.f0).collect();
    assert_eq!(e.median_f0, sort_median(&voiced));

    let louder: Vec<f32> = x.iter().map(|v| v * 2.0).collect();
    let l = enroll(&louder, &a, &models, "u1").unwrap();
    assert_ne!(l.embedding.vec, e.embedding.vec);
    assert!(l.embedding.vec.iter().all(|v| v.is_finite()));
}

#[test]
fn enrollment_errors() {
    let models = Models::random(&Registry::compact(), InitConfig::new(31)).unwrap();
    let a = Analyzer::new(&FrameSpec::default()).unwrap();
    assert!(matches!(enroll(&utterance(1, 15_999), &a, &models, "x"), Err(Error::Parameter(_))));
    // A strongly negative periodicity bias makes every frame unvoiced.
    let mut bundle = Models::random_bundle(&Registry::compact(), InitConfig::zero_bias(1));
    let name = "source_extractor.heads.periodicity.bias";
    bundle.tensors.get_mut(name).unwrap().data[0] = -1e4;
    let muted = Models::from_bundle(&Registry::compact(), &bundle).unwrap();
    assert!(matches!(enroll(&utterance(2, 20_000), &a, &muted, "x"), Err(Error::Enrollment(_))));
}
