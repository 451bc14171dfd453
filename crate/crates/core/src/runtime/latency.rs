use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nanosecond time source for processing measurements.
pub trait Clock: Send + Sync {
    fn now_ns(&self) -> u64;
}

#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Clock for MonotonicClock {
    fn now_ns(&self) -> u64 {
        self.origin.elapsed().as_nanos() as u64
    }
}

/// A clock that only moves when told to. Clones share the same time.
#[derive(Debug, Clone, Default)]
pub struct ManualClock(Arc<AtomicU64>);

impl ManualClock {
    pub fn advance_ns(&self, ns: u64) {
        self.0.fetch_add(ns, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ns(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Anything that turns one input chunk into one output chunk.
pub trait ChunkProcessor {
    fn chunk_len(&self) -> usize;
    fn process(&mut self, chunk: &[f32]) -> Result<Vec<f32>>;
}

/// Stand-in pipeline that costs a fixed time on a [`ManualClock`] and
/// outputs silence.
#[derive(Debug, Clone)]
pub struct MockProcessor {
    pub clock: ManualClock,
    pub cost_ns: u64,
    pub chunk_len: usize,
}

impl ChunkProcessor for MockProcessor {
    fn chunk_len(&self) -> usize {
        self.chunk_len
    }

    fn process(&mut self, chunk: &[f32]) -> Result<Vec<f32>> {
        self.clock.advance_ns(self.cost_ns);
        Ok(vec![0.0; chunk.len()])
    }
}

/// End-to-end latency: lookahead + chunk duration + mean processing time.
///
/// Processing time covers the whole chunk path, feature extraction included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub lookahead_ms: f64,
    pub chunk_ms: f64,
    pub processing_mean_ms: f64,
    pub processing_p95_ms: f64,
    pub total_ms: f64,
    /// Mean processing time over chunk duration.
    pub rtf: f64,
    pub chunks: usize,
    pub overruns: usize,
}

pub const MIN_LATENCY_CHUNKS: usize = 100;

fn samples_to_ns(samples: usize, sample_rate: u32) -> u64 {
    (samples as u128 * 1_000_000_000 / sample_rate as u128) as u64
}

/// Time `processor` over `repetitions` passes of `signal`.
pub fn measure_latency(
    processor: &mut dyn ChunkProcessor,
    clock: &dyn Clock,
    signal: &[f32],
    repetitions: usize,
    lookahead_samples: usize,
    sample_rate: u32,
) -> Result<LatencyReport> {
    let len = processor.chunk_len();
    let per_pass = signal.len() / len;
    if per_pass * repetitions < MIN_LATENCY_CHUNKS {
        return Err(Error::Parameter(format!(
            "latency needs at least {MIN_LATENCY_CHUNKS} chunks, got {}",
            per_pass * repetitions
        )));
    }
    let chunk_ns = samples_to_ns(len, sample_rate);
    let lookahead_ns = samples_to_ns(lookahead_samples, sample_rate);
    let mut times = Vec::with_capacity(per_pass * repetitions);
    let mut overruns = 0;
    for _ in 0..repetitions {
        for chunk in signal.chunks_exact(len) {
            let start = clock.now_ns();
            processor.process(chunk)?;
            let dt = clock.now_ns().saturating_sub(start);
            if dt > chunk_ns {
                overruns += 1;
                log::warn!("chunk {} overran its deadline: {dt} ns > {chunk_ns} ns", times.len());
            }
            times.push(dt);
        }
    }
    let sum: u128 = times.iter().map(|&t| t as u128).sum();
    let mean_ns = sum as f64 / times.len() as f64;
    times.sort_unstable();
    let rank = (0.95 * times.len() as f64).ceil() as usize;
    let p95_ns = times[rank.max(1) - 1];
    // Sum in nanoseconds first so integral inputs give exact totals.
    let total_ns = (lookahead_ns + chunk_ns) as f64 + mean_ns;
    Ok(LatencyReport {
        lookahead_ms: lookahead_ns as f64 / 1e6,
        chunk_ms: chunk_ns as f64 / 1e6,
        processing_mean_ms: mean_ns / 1e6,
        processing_p95_ms: p95_ns as f64 / 1e6,
        total_ms: total_ns / 1e6,
        rtf: mean_ns / chunk_ns as f64,
        chunks: times.len(),
        overruns,
    })
}
