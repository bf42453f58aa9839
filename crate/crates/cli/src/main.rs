mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use emoq_core::cache::ArtifactCache;
use emoq_core::data::{pool_utterance, EmbeddingSet, Taxonomy, Utterance};
use emoq_core::error::{Error, ErrorClass, Result};
use emoq_core::pipeline::{self, PipelineConfig, SweepConfig};
use emoq_core::probe::{probe_train, ProbeConfig};
use emoq_core::router::{route_batch, Aggregation, RouterBank};
use emoq_core::rvq::{encode, reconstruct};
use emoq_core::synth::{generate, SynthSpec};
use emoq_core::trainer::{train_rvq, KMeansConfig, TrainingRegime};
use emoq_core::{io, EvalReport};

use config::{parse_pair, FileConfig};

#[derive(Parser)]
#[command(name = "emoq", version, about = "Emotion-aware residual vector quantization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic emotion-clustered dataset.
    Synth(SynthArgs),
    /// Convert CSV or raw float32 vectors plus a manifest into EMBV.
    Import(ImportArgs),
    /// Train one RVQ stack under a training regime.
    TrainCodebook(TrainArgs),
    /// Encode embeddings with a stack; optionally write reconstructions.
    Quantize(QuantizeArgs),
    /// Train a linear probe on pooled utterance embeddings.
    ProbeTrain(ProbeArgs),
    /// Per-depth cosine, recall and entropy of one stack.
    Evaluate(EvaluateArgs),
    /// Classify utterances by routing through a bank of emotion stacks.
    Route(RouteArgs),
    /// Routed-classification sweep over (stages, entries) configurations and seeds.
    Sweep(SweepArgs),
    /// Layer-wise degradation of a balanced stack.
    Rq1(RqArgs),
    /// Matched vs unmatched emotion-specific stacks against a balanced stack.
    Rq2(RqArgs),
    /// Soft-label fidelity under biased mixing ratios.
    Rq3(Rq3Args),
    /// Macro-F1 deltas of balanced quantization and routing over the continuous baseline.
    Rq4(SweepArgs),
}

#[derive(Args)]
struct DataArgs {
    /// EMBV vector file.
    #[arg(long)]
    embeddings: PathBuf,
    /// JSONL manifest.
    #[arg(long)]
    manifest: PathBuf,
    /// Comma-separated class names in label-id order (default: angry,happy,neutral,sad).
    #[arg(long, value_delimiter = ',')]
    taxonomy: Option<Vec<String>>,
}

impl DataArgs {
    fn taxonomy(&self, file: Option<&[String]>) -> Result<Taxonomy> {
        match self.taxonomy.as_deref().or(file) {
            Some(names) => Taxonomy::new(names),
            None => Ok(Taxonomy::canonical()),
        }
    }

    fn load(&self, file: &FileConfig) -> Result<EmbeddingSet<f32>> {
        io::read_embeddings(&self.embeddings, &self.manifest, &self.taxonomy(file.taxonomy.as_deref())?)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 500)]
    per_class: usize,
    /// Distance between class means in noise-sigma units.
    #[arg(long, default_value_t = 4.0)]
    sep: f64,
    /// Share of utterances with two-class soft labels.
    #[arg(long, default_value_t = 0.3)]
    ambiguity: f64,
    /// Frames per utterance, `N` or `MIN-MAX`.
    #[arg(long, default_value = "1")]
    frames: String,
    #[arg(long, default_value_t = 4)]
    annotators: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct ImportArgs {
    /// `.csv` (one vector per row) or raw little-endian float32.
    #[arg(long)]
    vectors: PathBuf,
    /// Required for raw float32 input.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_delimiter = ',')]
    taxonomy: Option<Vec<String>>,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the validated manifest (default: next to `--out`).
    #[arg(long)]
    out_manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    Balanced,
    Specific,
    Biased,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "balanced")]
    regime: RegimeArg,
    /// Target emotion name for specific and biased regimes.
    #[arg(long)]
    target: Option<String>,
    /// Target share in percent for the biased regime.
    #[arg(long)]
    bias: Option<u8>,
    /// Utterances in the training set.
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = 8)]
    stages: usize,
    #[arg(long, default_value_t = 32)]
    entries: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    /// Pool frames to utterance vectors before training.
    #[arg(long)]
    pool: bool,
    /// Train on unit-norm vectors (for routing banks).
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QuantizeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    codebook: PathBuf,
    /// Stages to use (default: all).
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write reconstructed vectors as EMBV.
    #[arg(long)]
    recon: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    probe: PathBuf,
    #[arg(long, default_value_t = 50.0)]
    frame_rate: f64,
    /// Output directory for report.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregateArg {
    Pooled,
    FrameVote,
}

#[derive(Args)]
struct RouteArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Directory holding one emotion-targeted `.rvqc` stack per class.
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    depth: usize,
    /// Scale inputs to unit norm before encoding (default).
    #[arg(long, overrides_with = "no_normalize")]
    normalize: bool,
    #[arg(long, overrides_with = "normalize")]
    no_normalize: bool,
    #[arg(long)]
    baseline_f1: Option<f64>,
    #[arg(long, value_enum, default_value = "pooled")]
    aggregate: AggregateArg,
    /// JSON report path; a CSV is written alongside.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    data: DataArgs,
    /// TOML run file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frame_rate: Option<f64>,
    #[arg(long)]
    kmeans_max_iters: Option<usize>,
    #[arg(long)]
    kmeans_tol: Option<f64>,
    #[arg(long)]
    probe_lr: Option<f64>,
    #[arg(long)]
    probe_l2: Option<f64>,
    #[arg(long)]
    probe_epochs: Option<usize>,
    /// Artifact cache directory for resumable runs.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

impl ExperimentArgs {
    fn pipeline(&self, file: &FileConfig, stages: Option<usize>, entries: Option<usize>) -> Result<PipelineConfig> {
        let d = PipelineConfig::default();
        let dp = ProbeConfig::default();
        let cache = match self.cache.clone().or_else(|| file.cache.clone()) {
            Some(dir) => ArtifactCache::at(dir),
            None => ArtifactCache::disabled(),
        };
        let cfg = PipelineConfig {
            stages: stages.or(file.stages).unwrap_or(d.stages),
            entries: entries.or(file.entries).unwrap_or(d.entries),
            budget: self.budget.or(file.budget),
            kmeans_max_iters: self.kmeans_max_iters.or(file.kmeans_max_iters).unwrap_or(d.kmeans_max_iters),
            kmeans_tol: self.kmeans_tol.or(file.kmeans_tol).unwrap_or(d.kmeans_tol),
            probe: ProbeConfig {
                learning_rate: self.probe_lr.or(file.probe_lr).unwrap_or(dp.learning_rate),
                l2: self.probe_l2.or(file.probe_l2).unwrap_or(dp.l2),
                max_epochs: self.probe_epochs.or(file.probe_epochs).unwrap_or(dp.max_epochs),
                ..dp
            },
            root_seed: self.seed.or(file.seed).unwrap_or(d.root_seed),
            frame_rate_hz: self.frame_rate.or(file.frame_rate).unwrap_or(d.frame_rate_hz),
            normalize: file.normalize.unwrap_or(d.normalize),
            cache,
        };
        if cfg.stages == 0 || cfg.entries == 0 {
            return Err(Error::Config("stages and entries must be positive".into()));
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RqArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    #[arg(long)]
    stages: Option<usize>,
    #[arg(long)]
    entries: Option<usize>,
}

#[derive(Args)]
struct Rq3Args {
    #[command(flatten)]
    rq: RqArgs,
    /// Target shares of the emotion-targeted regimes.
    #[arg(long, value_delimiter = ',')]
    bias_levels: Option<Vec<u8>>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    /// Comma-separated LxK configurations (default: the seven table configurations).
    #[arg(long, value_delimiter = ',', value_parser = parse_pair)]
    pairs: Option<Vec<(usize, usize)>>,
    #[arg(long, value_delimiter = ',')]
    bias_levels: Option<Vec<u8>>,
    /// Candidate depths; the best on the validation split is reported.
    #[arg(long, value_delimiter = ',')]
    depths: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    baseline_f1: Option<f64>,
    #[arg(long, overrides_with = "no_normalize")]
    normalize: bool,
    #[arg(long, overrides_with = "normalize")]
    no_normalize: bool,
}

impl SweepArgs {
    fn sweep(&self, file: &FileConfig, seed: u64) -> Result<SweepConfig> {
        let d = SweepConfig::default();
        let pairs = match (&self.pairs, &file.pairs) {
            (Some(p), _) => p.clone(),
            (None, Some(p)) => p.iter().map(|s| parse_pair(s)).collect::<Result<_, _>>().map_err(Error::Config)?,
            (None, None) => d.pairs,
        };
        let cfg = SweepConfig {
            pairs,
            bias_levels: self.bias_levels.clone().or_else(|| file.bias_levels.clone()).unwrap_or(d.bias_levels),
            depths: self.depths.clone().or_else(|| file.depths.clone()),
            seeds: self.seeds.clone().or_else(|| file.seeds.clone()).unwrap_or_else(|| vec![seed]),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn normalize(&self, file: &FileConfig) -> bool {
        if self.no_normalize {
            false
        } else if self.normalize {
            true
        } else {
            file.normalize.unwrap_or(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e.class() {
                ErrorClass::Validation => ExitCode::from(2),
                ErrorClass::Data => ExitCode::from(3),
            }
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Import(a) => import(a),
        Command::TrainCodebook(a) => train_codebook(a),
        Command::Quantize(a) => quantize(a),
        Command::ProbeTrain(a) => probe(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Route(a) => route(a),
        Command::Sweep(a) => sweep(a, false),
        Command::Rq1(a) => rq(a, 1),
        Command::Rq2(a) => rq(a, 2),
        Command::Rq3(a) => rq3(a),
        Command::Rq4(a) => sweep(a, true),
    }
}

fn parse_frames(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("bad frame range {s:?}"));
    match s.split_once('-') {
        Some((a, b)) => Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        classes: a.classes,
        dim: a.dim,
        per_class: a.per_class,
        separation: a.sep,
        ambiguity_fraction: a.ambiguity,
        frames: parse_frames(&a.frames)?,
        annotators: a.annotators,
        seed: a.seed,
    };
    let set = generate(&spec)?;
    io::write_embeddings(&set, &a.out, &a.manifest)?;
    println!(
        "wrote {} utterances ({} rows, dim {}) to {}",
        set.utterances().len(),
        set.n_rows(),
        set.dim(),
        a.out.display()
    );
    Ok(())
}

fn read_csv_vectors(path: &Path) -> Result<(usize, Vec<f32>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut dim = None;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        let parsed: std::result::Result<Vec<f32>, _> = rec.iter().map(str::parse::<f32>).collect();
        let row = match parsed {
            Ok(row) => row,
            // a non-numeric first row is a header
            Err(_) if i == 0 => continue,
            Err(e) => return Err(Error::Serde(format!("{} row {}: {e}", path.display(), i + 1))),
        };
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::Shape(format!("row {} has {} values, expected {d}", i + 1, row.len())))
            }
            _ => {}
        }
        out.extend(row);
    }
    let dim = dim.ok_or_else(|| Error::EmptyInput(format!("{} has no rows", path.display())))?;
    Ok((dim, out))
}

fn read_raw_vectors(path: &Path, dim: Option<usize>) -> Result<(usize, Vec<f32>)> {
    let dim = dim.ok_or_else(|| Error::Config("--dim is required for raw float32 input".into()))?;
    let bytes = std::fs::read(path).map_err(|e| Error::Io { path: path.into(), source: e })?;
    if dim == 0 || bytes.len() % (4 * dim) != 0 {
        return Err(Error::Shape(format!("{} bytes is not a whole number of {dim}-dim float32 rows", bytes.len())));
    }
    let v = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok((dim, v))
}

fn import(a: ImportArgs) -> Result<()> {
    let taxonomy = match &a.taxonomy {
        Some(names) => Taxonomy::new(names)?,
        None => Taxonomy::canonical(),
    };
    let is_csv = a.vectors.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let (dim, vectors) = if is_csv { read_csv_vectors(&a.vectors)? } else { read_raw_vectors(&a.vectors, a.dim)? };
    let utterances: Vec<Utterance> = io::read_manifest(&a.manifest, &taxonomy)?;
    let n_rows = vectors.len() / dim;
    let level = if utterances.iter().all(|u| u.frames.len() == 1) && utterances.len() == n_rows {
        emoq_core::Level::Utterance
    } else {
        emoq_core::Level::Frame
    };
    let set = EmbeddingSet::new(dim, vectors, utterances, level, taxonomy)?;
    let out_manifest = a.out_manifest.unwrap_or_else(|| a.out.with_extension("jsonl"));
    io::write_embeddings(&set, &a.out, &out_manifest)?;
    println!("imported {} rows of dim {dim} to {}", set.n_rows(), a.out.display());
    Ok(())
}

fn train_codebook(a: TrainArgs) -> Result<()> {
    let mut set = a.data.load(&FileConfig::default())?;
    if a.pool {
        set = pool_utterance(&set)?;
    }
    if a.normalize {
        set = set.l2_normalized()?;
    }
    let target = a.target.as_deref().map(|t| set.taxonomy().label(t)).transpose()?;
    let need_target = || Error::Config("--target is required for this regime".into());
    let regime = match a.regime {
        RegimeArg::Balanced => TrainingRegime::balanced(a.budget, a.seed),
        RegimeArg::Specific => TrainingRegime::specific(target.ok_or_else(need_target)?, a.budget, a.seed),
        RegimeArg::Biased => {
            let bias = a.bias.ok_or_else(|| Error::Config("--bias is required for the biased regime".into()))?;
            TrainingRegime::biased(target.ok_or_else(need_target)?, bias, a.budget, a.seed)
        }
    };
    let cfg = KMeansConfig { max_iters: a.max_iters, tol: a.tol, ..KMeansConfig::new(a.entries, a.seed) };
    let stack = train_rvq(&set, &regime, a.stages, a.entries, &cfg)?;
    io::write_codebook(&stack, &a.out)?;
    println!(
        "trained {} stack {}x{} ({} bytes) -> {}",
        regime.label(set.taxonomy().names()),
        stack.n_stages(),
        stack.entries(),
        stack.payload_bytes(),
        a.out.display()
    );
    Ok(())
}

fn quantize(a: QuantizeArgs) -> Result<()> {
    let set = a.data.load(&FileConfig::default())?;
    let stack = io::read_codebook(&a.codebook)?;
    let depth = a.depth.unwrap_or(stack.n_stages());
    let codes = encode(&set, &stack)?.truncated(depth)?;
    io::write_codes(&codes, &a.out)?;
    if let Some(path) = &a.recon {
        let recon = reconstruct(&codes, &stack, depth, &set)?;
        io::write_vectors(path, recon.dim(), recon.vectors())?;
    }
    println!("encoded {} rows at depth {depth} -> {}", codes.n_rows(), a.out.display());
    Ok(())
}

fn probe(a: ProbeArgs) -> Result<()> {
    let set = pool_utterance(&a.data.load(&FileConfig::default())?)?;
    let cfg = ProbeConfig { learning_rate: a.lr, l2: a.l2, max_epochs: a.epochs, seed: a.seed, ..ProbeConfig::default() };
    let probe = probe_train(&set, &cfg)?;
    io::write_probe(&probe, &a.out)?;
    if let Some(loss) = probe.meta().and_then(|m| m.loss_history.last()) {
        println!("final training loss {loss:.6}");
    }
    println!("probe -> {}", a.out.display());
    Ok(())
}

fn write_run(dir: &Path, report: &EvalReport) -> Result<()> {
    report.validate()?;
    report.write_csv(&dir.join("report.csv"))?;
    report.write_json(&dir.join("summary.json"))?;
    println!("{} rows -> {}", report.rows.len(), dir.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let set = a.data.load(&FileConfig::default())?;
    let stack = io::read_codebook(&a.codebook)?;
    let probe = io::read_probe(&a.probe)?;
    let report = pipeline::evaluate(&set, &stack, &probe, a.frame_rate)?;
    write_run(&a.out, &report)
}

fn load_bank(dir: &Path, depth: usize, normalize: bool) -> Result<RouterBank<f32>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::Io { path: dir.into(), source: e })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "rvqc"))
        .collect();
    paths.sort();
    let mut stacks = paths.iter().map(|p| io::read_codebook(p)).collect::<Result<Vec<_>>>()?;
    if stacks.iter().any(|s| s.meta().target.is_none()) {
        return Err(Error::Config(format!("{}: every bank stack needs a target emotion", dir.display())));
    }
    stacks.sort_by_key(|s| s.meta().target);
    RouterBank::new(stacks, depth, normalize)
}

fn route(a: RouteArgs) -> Result<()> {
    let set = a.data.load(&FileConfig::default())?;
    let bank = load_bank(&a.bank, a.depth, !a.no_normalize)?;
    let aggregation = match a.aggregate {
        AggregateArg::Pooled => Aggregation::Pooled,
        AggregateArg::FrameVote => Aggregation::FrameVote,
    };
    let routed = route_batch(&set, &bank, a.baseline_f1, aggregation)?;
    routed.report.write_json(&a.out)?;
    routed.report.write_csv(&a.out.with_extension("csv"))?;
    if let Some(f1) = routed.report.get(a.depth, emoq_core::report::ALL, "macro_f1") {
        println!("macro-F1 {f1:.4}");
    }
    Ok(())
}

fn rq(a: RqArgs, which: u8) -> Result<()> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let set = a.common.data.load(&file)?;
    let cfg = a.common.pipeline(&file, a.stages, a.entries)?;
    let report = match which {
        1 => pipeline::run_rq1(&set, &cfg)?,
        _ => pipeline::run_rq2(&set, &cfg)?,
    };
    write_run(&a.common.out, &report)
}

fn rq3(a: Rq3Args) -> Result<()> {
    let file = FileConfig::load(a.rq.common.config.as_deref())?;
    let set = a.rq.common.data.load(&file)?;
    let cfg = a.rq.common.pipeline(&file, a.rq.stages, a.rq.entries)?;
    let levels = a.bias_levels.or(file.bias_levels).unwrap_or_else(|| vec![100, 99, 95]);
    let report = pipeline::run_rq3(&set, &cfg, &levels)?;
    write_run(&a.rq.common.out, &report)
}

fn sweep(a: SweepArgs, single: bool) -> Result<()> {
    let file = FileConfig::load(a.common.config.as_deref())?;
    let set = a.common.data.load(&file)?;
    let mut cfg = a.common.pipeline(&file, None, None)?;
    cfg.normalize = a.normalize(&file);
    let mut sweep = a.sweep(&file, cfg.root_seed)?;
    if single {
        sweep.seeds.truncate(1);
    }
    let baseline = a.baseline_f1.or(file.baseline_f1);
    let tables = pipeline::run_sweep(&set, &sweep, baseline, &cfg, &a.common.out)?;
    let mean = pipeline::mean_table_csv(&tables)?;
    print!("{}", String::from_utf8_lossy(&mean));
    Ok(())
}
