use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rtvc_core::eval::{gen_noise, run_sweep, write_csv, NoiseColor, NoiseSpec, SweepConfig};
use rtvc_core::frontend::FrameSpec;
use rtvc_core::nn::registry::{EMBED_DIM, NOISE_BANDS};
use rtvc_core::runtime::{
    convert_offline, measure_latency, output_delay, LatencyReport, ManualClock, MockProcessor, MonotonicClock,
    Pipeline, PipelineConfig, Session, Target,
};
use rtvc_core::speaker::{enroll, SpeakerEmbedding};
use rtvc_core::vocoder::{one_hot, HarmonicControls, HarmonicSynth, NoiseControls, NoiseSynth};
use rtvc_core::wav::{read_wav, wav_bytes, SAMPLE_RATE};
use rtvc_core::Error;
use rtvc_service::{AppState, Catalog, CatalogEntry, QueueConfig, ServerConfig};

use crate::{Cli, Command, Format, ProbeKind, SpeakerArgs};

pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_DEADLINE: u8 = 3;
pub const EXIT_EQUIVALENCE: u8 = 4;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    fn input(message: impl Into<String>) -> Self {
        Self::new(EXIT_INPUT, message)
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Structural(_) | Error::State(_) | Error::Decode(_) | Error::UndefinedCorrelation(_) => EXIT_INTERNAL,
            _ => EXIT_INPUT,
        };
        Self::new(code, e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> Result<()> {
    let config = cli.config;
    match cli.command {
        Command::Convert { input, out, speaker } => convert(config, &input, &out, &speaker),
        Command::Enroll { input, out, id, name, catalog } => {
            enroll_cmd(config, &input, &out, id, name, catalog.as_deref())
        }
        Command::StreamSim { input, random_seconds, seed, chunk_ms, tolerance, speaker, corrupt_ring_buffer } => {
            stream_sim(config, input.as_deref(), random_seconds, seed, &chunk_ms, tolerance, &speaker, corrupt_ring_buffer)
        }
        Command::Bench { seconds, mock_processing_ms, strict, format, json } => {
            bench(config, seconds, mock_processing_ms, strict, format, json.as_deref())
        }
        Command::NoiseEval { dir, snr, colors, out, seed, speaker } => {
            noise_eval(config, &dir, &snr, &colors, &out, seed, &speaker)
        }
        Command::SynthProbe { kind, out, f0, harmonic, seconds, passband, seed } => {
            synth_probe(kind, &out, f0, harmonic as usize, seconds, passband as usize, seed)
        }
        Command::Serve { catalog, host, port, ttl_s, max_connections, admin } => {
            serve(config, &catalog, &host, port, ttl_s, max_connections as usize, admin)
        }
    }
}

fn load_config(path: Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => Ok(PipelineConfig::load(&p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::input(format!("{what} {} does not exist", path.display())))
    }
}

fn require_out_dir(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => {
            Err(CliError::input(format!("output directory {} does not exist", d.display())))
        }
        _ => Ok(()),
    }
}

/// Embedding and target median chosen on the command line. Without
/// `--speaker`, a zero embedding at the config's default median.
fn resolve_speaker(args: &SpeakerArgs, config: &PipelineConfig, required: bool) -> Result<(SpeakerEmbedding, f64)> {
    let default_median = args.target_median.unwrap_or(config.default_median_hz);
    match (&args.speaker, &args.catalog) {
        (Some(id), Some(catalog)) => {
            require_file(catalog, "catalog")?;
            let c = Catalog::load(catalog)?;
            let (emb, m_tgt) =
                c.get(id).ok_or_else(|| CliError::input(format!("speaker {id} is not in {}", catalog.display())))?;
            Ok((emb.clone(), args.target_median.unwrap_or(m_tgt)))
        }
        (Some(file), None) => {
            let path = Path::new(file);
            require_file(path, "speaker file")?;
            Ok((SpeakerEmbedding::load(path)?, default_median))
        }
        (None, Some(_)) => Err(CliError::input("--catalog needs --speaker")),
        (None, None) if required => Err(CliError::input("--speaker is required")),
        (None, None) => Ok((SpeakerEmbedding::new(vec![0.0; EMBED_DIM], "neutral")?, default_median)),
    }
}

fn convert(config: Option<PathBuf>, input: &Path, out: &Path, speaker: &SpeakerArgs) -> Result<()> {
    require_file(input, "input")?;
    require_out_dir(out)?;
    let config = load_config(config)?;
    let (emb, m_tgt) = resolve_speaker(speaker, &config, true)?;
    let signal = read_wav(input)?;
    let pipeline = Pipeline::new(config)?;
    let target = pipeline.target(emb, m_tgt)?;
    let start = Instant::now();
    let mut y = convert_offline(&pipeline, &signal, &target)?.samples;
    let elapsed = start.elapsed().as_secs_f64();
    y.truncate(signal.len());
    // written in one go so a failure leaves no partial file
    std::fs::write(out, wav_bytes(&y)?).map_err(|e| CliError::new(EXIT_INTERNAL, e.to_string()))?;
    let duration = signal.len() as f64 / SAMPLE_RATE as f64;
    println!("duration_s {duration:.3}");
    println!("rtf {:.4}", if duration > 0.0 { elapsed / duration } else { 0.0 });
    Ok(())
}

fn enroll_cmd(
    config: Option<PathBuf>,
    input: &Path,
    out: &Path,
    id: Option<String>,
    name: Option<String>,
    catalog: Option<&Path>,
) -> Result<()> {
    require_file(input, "input")?;
    require_out_dir(out)?;
    let id = match id {
        Some(id) => id,
        None => out.file_stem().map(|s| s.to_string_lossy().into_owned()).ok_or_else(|| CliError::input("no id"))?,
    };
    let existing = match catalog {
        Some(c) if c.exists() => Some(Catalog::load(c)?),
        _ => None,
    };
    if existing.as_ref().is_some_and(|c| c.contains(&id)) {
        return Err(CliError::input(format!("speaker {id} is already in the catalog")));
    }
    let config = load_config(config)?;
    let audio = read_wav(input)?;
    let pipeline = Pipeline::new(config)?;
    let e = enroll(&audio, &pipeline.analyzer, &pipeline.models, &id)?;
    e.embedding.save(out)?;
    if let Some(path) = catalog {
        let entry = CatalogEntry {
            id: id.clone(),
            display_name: name.unwrap_or_else(|| id.clone()),
            embedding: embedding_ref(path, out),
            m_tgt: e.median_f0,
        };
        let mut entries = match &existing {
            Some(_) => serde_json::from_slice::<Vec<CatalogEntry>>(&std::fs::read(path).map_err(Error::from)?)
                .map_err(Error::from)?,
            None => Vec::new(),
        };
        entries.push(entry);
        std::fs::write(path, serde_json::to_vec_pretty(&entries).map_err(Error::from)?).map_err(Error::from)?;
    }
    println!(
        "{}",
        serde_json::json!({ "id": id, "median_f0": e.median_f0, "voiced_frames": e.voiced_frames })
    );
    Ok(())
}

/// Path of `file` as stored in a catalog at `catalog`: relative when it
/// sits under the catalog's directory.
fn embedding_ref(catalog: &Path, file: &Path) -> PathBuf {
    let dir = catalog.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    abs(file).strip_prefix(abs(dir)).map(Path::to_path_buf).unwrap_or_else(|_| abs(file))
}

/// Deterministic test audio: a gliding three-partial tone over light noise.
fn test_signal(seconds: f64, seed: u64) -> Result<Vec<f32>> {
    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    let noise = gen_noise(&NoiseSpec { color: NoiseColor::White, snr_db: 0.0, seed }, n.max(4096))?;
    let f_start = 90.0 + (seed % 97) as f64;
    let mut phase = 0.0f64;
    Ok((0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            phase += std::f64::consts::TAU * f_start * (1.0 + 0.3 * (t * 1.7).sin()) / SAMPLE_RATE as f64;
            let tone = phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin();
            (0.2 * tone) as f32 + 0.02 * noise[i]
        })
        .collect())
}

/// Samples of the offline output that depend only on input the stream has
/// seen, for a signal of `len` samples.
fn comparable_prefix(spec: &FrameSpec, len: usize) -> usize {
    let need = spec.lookahead() + 1;
    if len < need {
        return 0;
    }
    ((len - need) / spec.hop + 1) * spec.hop
}

#[allow(clippy::too_many_arguments)]
fn stream_sim(
    config: Option<PathBuf>,
    input: Option<&Path>,
    random_seconds: f64,
    seed: u64,
    chunk_ms: &[u32],
    tolerance: f64,
    speaker: &SpeakerArgs,
    corrupt: bool,
) -> Result<()> {
    if let Some(p) = input {
        require_file(p, "input")?;
    }
    let config = load_config(config)?;
    for &ms in chunk_ms {
        PipelineConfig { chunk_ms: ms, ..config.clone() }.validate()?;
    }
    let (emb, m_tgt) = resolve_speaker(speaker, &config, false)?;
    let signal = match input {
        Some(p) => read_wav(p)?,
        None => test_signal(random_seconds, seed)?,
    };
    let base = Pipeline::new(config)?;
    let target = base.target(emb.clone(), m_tgt)?;
    let offline = convert_offline(&base, &signal, &target)?.samples;
    let spec = base.config.frame_spec.clone();
    let delay = output_delay(&spec);
    let n = comparable_prefix(&spec, signal.len());

    let mut worst: Option<(u32, usize, f32)> = None;
    for &ms in chunk_ms {
        let mut pipeline = base.clone();
        pipeline.config.chunk_ms = ms;
        let mut session = Session::with_target(pipeline, emb.clone(), m_tgt)?;
        let len = session.pipeline().chunk_len();
        let mut streamed = Vec::with_capacity(signal.len() + len);
        let mut buf = vec![0.0f32; len];
        for (i, chunk) in signal.chunks(len).enumerate() {
            if corrupt && i == 4 {
                session.corrupt_for_test();
            }
            buf.fill(0.0);
            buf[..chunk.len()].copy_from_slice(chunk);
            streamed.extend(session.process_chunk(&buf)?);
        }
        let (mut diff, mut at) = (0.0f32, 0usize);
        for (k, (a, b)) in streamed[delay..].iter().zip(&offline[..n]).enumerate() {
            let d = (a - b).abs();
            if d > diff || d.is_nan() {
                (diff, at) = (d, k);
            }
        }
        let ok = diff as f64 <= tolerance;
        println!("chunk_ms {ms} max_abs_diff {diff:.3e} {}", if ok { "ok" } else { "FAIL" });
        if !ok && worst.is_none_or(|w| diff > w.2) {
            worst = Some((ms, at, diff));
        }
    }
    match worst {
        None => Ok(()),
        Some((ms, at, diff)) => Err(CliError::new(
            EXIT_EQUIVALENCE,
            format!(
                "streaming differs from offline by {diff:.3e} at chunk size {ms} ms, sample {at} ({:.4} s)",
                at as f64 / SAMPLE_RATE as f64
            ),
        )),
    }
}

fn bench(
    config: Option<PathBuf>,
    seconds: f64,
    mock_ms: Option<f64>,
    strict: bool,
    format: Format,
    json_path: Option<&Path>,
) -> Result<()> {
    let config = load_config(config)?;
    let chunk = config.chunk_len();
    let chunks = (seconds * SAMPLE_RATE as f64 / chunk as f64).floor() as usize;
    if chunks < rtvc_core::runtime::MIN_LATENCY_CHUNKS {
        return Err(CliError::input(format!(
            "{seconds} s is {chunks} chunks; at least {} are needed",
            rtvc_core::runtime::MIN_LATENCY_CHUNKS
        )));
    }
    let lookahead = config.frame_spec.lookahead();
    let sr = config.frame_spec.sample_rate;
    let report = match mock_ms {
        Some(ms) => {
            let clock = ManualClock::default();
            let mut p = MockProcessor { clock: clock.clone(), cost_ns: (ms * 1e6).round() as u64, chunk_len: chunk };
            measure_latency(&mut p, &clock, &vec![0.0; chunks * chunk], 1, lookahead, sr)?
        }
        None => {
            let signal = test_signal(chunks as f64 * chunk as f64 / sr as f64, 1)?;
            let pipeline = Pipeline::new(config.clone())?;
            let (emb, m_tgt) = resolve_speaker(&SpeakerArgs::default(), &config, false)?;
            let mut session = Session::with_target(pipeline, emb, m_tgt)?;
            measure_latency(&mut session, &MonotonicClock::default(), &signal, 1, lookahead, sr)?
        }
    };
    print_report(&report, format);
    if let Some(p) = json_path {
        std::fs::write(p, serde_json::to_vec_pretty(&report).map_err(Error::from)?).map_err(Error::from)?;
    }
    if strict && report.rtf >= 1.0 {
        return Err(CliError::new(EXIT_DEADLINE, format!("not real time: rtf {:.3}", report.rtf)));
    }
    Ok(())
}

fn print_report(r: &LatencyReport, format: Format) {
    match format {
        Format::Json => println!("{}", serde_json::to_string(r).expect("report serialises")),
        Format::Text => {
            println!("lookahead_ms        {}", r.lookahead_ms);
            println!("chunk_ms            {}", r.chunk_ms);
            println!("processing_mean_ms  {}", r.processing_mean_ms);
            println!("processing_p95_ms   {}", r.processing_p95_ms);
            println!("total_ms            {}", r.total_ms);
            println!("rtf                 {:.4}", r.rtf);
            println!("chunks              {}", r.chunks);
            println!("overruns            {}", r.overruns);
        }
    }
}

fn noise_eval(
    config: Option<PathBuf>,
    dir: &Path,
    snrs: &[f64],
    colors: &[NoiseColor],
    out: &Path,
    seed: u64,
    speaker: &SpeakerArgs,
) -> Result<()> {
    if !dir.is_dir() {
        return Err(CliError::input(format!("{} is not a directory", dir.display())));
    }
    if snrs.is_empty() || snrs.iter().any(|s| s.is_nan()) || colors.is_empty() {
        return Err(CliError::input("need at least one SNR and one colour"));
    }
    require_out_dir(out)?;
    let mut wavs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(Error::from)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    if wavs.is_empty() {
        return Err(CliError::input(format!("no .wav files in {}", dir.display())));
    }
    wavs.sort();
    let config = load_config(config)?;
    let (emb, m_tgt) = resolve_speaker(speaker, &config, false)?;
    let sources = wavs.iter().map(read_wav).collect::<std::result::Result<Vec<_>, _>>()?;
    let pipeline = Pipeline::new(config)?;
    let target = Target::new(emb, m_tgt, &pipeline.models)?;
    let cfg = SweepConfig { snrs_db: snrs.to_vec(), colors: colors.to_vec(), seed };
    let rows = run_sweep(&pipeline, &sources, &target, &cfg)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    std::fs::write(out, buf).map_err(Error::from)?;
    println!("{} rows from {} files", rows.len(), wavs.len());
    Ok(())
}

fn synth_probe(
    kind: ProbeKind,
    out: &Path,
    f0: f64,
    harmonic: usize,
    seconds: f64,
    passband: usize,
    seed: u64,
) -> Result<()> {
    require_out_dir(out)?;
    let spec = FrameSpec::default();
    let frames = (seconds * FrameSpec::FRAME_RATE as f64).ceil() as usize;
    let samples = match kind {
        ProbeKind::Harmonic => {
            let mut synth = HarmonicSynth::new(spec.sample_rate, spec.hop);
            synth.process(&vec![f0; frames], &HarmonicControls::constant(frames, 0.5, one_hot(harmonic)))
        }
        ProbeKind::NoiseFlat | ProbeKind::NoiseLowpass => {
            let mags: Vec<f32> = (0..NOISE_BANDS)
                .map(|b| if kind == ProbeKind::NoiseFlat || b < passband { 0.25 } else { 0.0 })
                .collect();
            NoiseSynth::new(spec.hop, NOISE_BANDS, seed).process(&NoiseControls::constant(frames, &mags))
        }
    };
    std::fs::write(out, wav_bytes(&samples)?).map_err(Error::from)?;
    println!("{} samples", samples.len());
    Ok(())
}

fn serve(
    config: Option<PathBuf>,
    catalog: &Path,
    host: &str,
    port: u16,
    ttl_s: u64,
    max_connections: usize,
    admin: bool,
) -> Result<()> {
    require_file(catalog, "catalog")?;
    let config = load_config(config)?;
    let catalog = Catalog::load(catalog)?;
    let pipeline = Pipeline::new(config)?;
    let server = ServerConfig {
        queue: QueueConfig { ttl_ms: ttl_s * 1000, max_connections, ..QueueConfig::default() },
        admin,
        ..ServerConfig::default()
    };
    let state = Arc::new(AppState::new(pipeline, catalog, server, Arc::new(MonotonicClock::default()))?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new(EXIT_INTERNAL, e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| CliError::input(format!("cannot bind {host}:{port}: {e}")))?;
        eprintln!("listening on {}", listener.local_addr().map_err(Error::from)?);
        rtvc_service::serve(listener, state).await.map_err(|e| CliError::new(EXIT_INTERNAL, e.to_string()))
    })
}
