//! `evpc` — event-camera point-cloud coding toolkit.
//!
//! Exit codes: 0 on success, 1 when any sequence failed (a failure
//! manifest is written next to the reports), 2 on invalid invocation.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use evpc_core::bdrate::{bd_rate, RateDistortionCurve};
use evpc_core::characterize::CharacterizeConfig;
use evpc_core::cloud::EventPointCloud;
use evpc_core::codec::{self, ExternalCodec, OctreeBitstream, OctreeConfig};
use evpc_core::convert::{event_to_pc, pc_to_event, ConversionConfig, DuplicateMethod};
use evpc_core::event::{read_events_file, write_events_file, FormatParams, TimestampUnit};
use evpc_core::pipeline::{
    self, characterize_dataset, run_job, write_curves, write_failure_manifest, write_json,
    write_rows_csv, write_stats_csv, CurveMetric, MetricChoice, PipelineJob, SweepCodec,
    SweepConfig, TensorOptions,
};
use evpc_core::psnr::{psnr_e2d, psnr_e2e, MetricSpace, E2D_NEIGHBORS};
use evpc_core::topk::{read_labels, read_predictions, top_k};
use evpc_core::Polarity;

#[derive(Parser)]
#[command(
    name = "evpc",
    about = "Event-camera point-cloud conversion, coding, and evaluation",
    version
)]
struct Cli {
    /// Worker threads for dataset commands (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Timestamp unit of binary event files.
    #[arg(long, global = true, default_value = "us", value_parser = parse_units)]
    units: TimestampUnit,

    #[command(subcommand)]
    command: Command,
}

fn parse_units(s: &str) -> Result<TimestampUnit, String> {
    TimestampUnit::parse(s).ok_or_else(|| format!("unknown unit `{s}` (expected us, ms, or s)"))
}

fn parse_dup_method(s: &str) -> Result<DuplicateMethod, String> {
    match s {
        "nn" => Ok(DuplicateMethod::Nn),
        "prob" => Ok(DuplicateMethod::Prob),
        _ => Err(format!(
            "unknown duplicate method `{s}` (expected nn or prob)"
        )),
    }
}

fn parse_metric(s: &str) -> Result<MetricChoice, String> {
    match s {
        "e2e" => Ok(MetricChoice::E2e),
        "e2d" => Ok(MetricChoice::E2d),
        "both" => Ok(MetricChoice::Both),
        _ => Err(format!("unknown metric `{s}` (expected e2e, e2d, or both)")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Characterize a dataset: per-sequence CSV plus a summary JSON.
    Characterize(CharacterizeCmd),
    /// Convert one event file into two polarity PLY point clouds.
    E2p(E2pCmd),
    /// Convert two polarity PLY point clouds back into an event file.
    P2e(P2eCmd),
    /// Encode a PLY point cloud to an .eoc bitstream (or via an external codec).
    Encode(EncodeCmd),
    /// Decode an .eoc bitstream (or an external codec stream) to PLY.
    Decode(DecodeCmd),
    /// Run a pipeline job described by a JSON config file.
    Run(RunCmd),
    /// Sweep TSF and rate points over a dataset, emitting rows and curves.
    Sweep(SweepCmd),
    /// PSNR metrics between a reference and a decompressed event file.
    Metrics(MetricsCmd),
    /// BD-Rate between two rate,score CSV curves.
    Bdrate(BdrateCmd),
    /// Top-k accuracy of a prediction file against ground-truth labels.
    Topk(TopkCmd),
    /// Export event spike tensors for external classifiers.
    Tensor(TensorCmd),
}

#[derive(Args)]
struct CharacterizeCmd {
    /// Dataset root (one subdirectory per class).
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    tsf: u32,
    /// Neighborhood size for sparsity and coherence.
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Temporal histogram bins.
    #[arg(long, default_value_t = 100)]
    bins: usize,
}

#[derive(Args)]
struct E2pCmd {
    input: PathBuf,
    #[arg(long, default_value_t = 256)]
    tsf: u32,
    #[arg(long)]
    out_pos: PathBuf,
    #[arg(long)]
    out_neg: PathBuf,
    /// Write conversion bookkeeping JSON here.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct P2eCmd {
    pos: PathBuf,
    neg: PathBuf,
    #[arg(long, default_value_t = 256)]
    tsf: u32,
    #[arg(long, default_value = "nn", value_parser = parse_dup_method)]
    dup_method: DuplicateMethod,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EncodeCmd {
    /// Input PLY point cloud.
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "lossless")]
    mode: String,
    /// Bottom octree levels dropped in lossy mode.
    #[arg(long, default_value_t = 0)]
    truncate: u32,
    #[arg(long, default_value_t = 2)]
    score_radius: u64,
    /// Polarity recorded in the bitstream header.
    #[arg(long, default_value = "pos")]
    polarity: String,
    /// External codec template "<encode cmd>;<decode cmd>"; runs the
    /// adapter instead of the builtin codec and stores its stream at --out.
    #[arg(long)]
    external: Option<String>,
}

#[derive(Args)]
struct DecodeCmd {
    /// Input bitstream (.eoc, or an external codec's stream with --external).
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// External codec template "<encode cmd>;<decode cmd>"; runs only the
    /// decode half with {bin} = input.
    #[arg(long)]
    external: Option<String>,
}

#[derive(Args)]
struct RunCmd {
    /// JSON job description (see the README for the schema).
    #[arg(long)]
    config: PathBuf,
    /// Override the job's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepCmd {
    /// Dataset root, or use --config for the full JSON form.
    dataset: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated TSF values.
    #[arg(long, value_delimiter = ',', default_values_t = [64u32, 128, 256])]
    tsf: Vec<u32>,
    /// Comma-separated builtin truncation levels.
    #[arg(long, value_delimiter = ',', default_values_t = [0u32, 1, 2, 3])]
    truncate: Vec<u32>,
    #[arg(long, default_value = "nn", value_parser = parse_dup_method)]
    dup_method: DuplicateMethod,
    #[arg(long, default_value = "both", value_parser = parse_metric)]
    metric: MetricChoice,
    #[arg(long)]
    peak: Option<f64>,
}

#[derive(Args)]
struct MetricsCmd {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long = "dec")]
    decoded: PathBuf,
    /// PSNR peak (default: reference max per-axis extent in metric space).
    #[arg(long)]
    peak: Option<f64>,
    #[arg(long, default_value = "both", value_parser = parse_metric)]
    metric: MetricChoice,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BdrateCmd {
    /// Reference curve CSV (rate,score).
    reference: PathBuf,
    /// Test curve CSV (rate,score).
    test: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TopkCmd {
    /// Prediction CSV: `id,rank1,rank2,...` or `id,label:score;...`.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth CSV: `id,label`.
    #[arg(long)]
    truth: PathBuf,
    /// Comma-separated k values.
    #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5])]
    k: Vec<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TensorCmd {
    /// One .bin event file or a dataset root.
    input: PathBuf,
    /// Output .evt.tensor file (single input) or directory (dataset).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 9)]
    bins: usize,
    #[arg(long, default_value_t = 180)]
    height: usize,
    #[arg(long, default_value_t = 240)]
    width: usize,
}

/// Distinguishes bad invocations (exit 2) from runtime failures (exit 1).
enum CliError {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &anyhow::Error {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => e,
        }
    }
}

fn usage<T>(e: impl Into<anyhow::Error>) -> Result<T, CliError> {
    Err(CliError::Usage(e.into()))
}

trait RuntimeCtx<T> {
    fn runtime(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> RuntimeCtx<T> for Result<T, E> {
    fn runtime(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {:#}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, CliError> {
    let units = cli.units;
    match cli.command {
        Command::Characterize(cmd) => characterize_cmd(cmd, units),
        Command::E2p(cmd) => e2p_cmd(cmd, units),
        Command::P2e(cmd) => p2e_cmd(cmd, units),
        Command::Encode(cmd) => encode_cmd(cmd),
        Command::Decode(cmd) => decode_cmd(cmd),
        Command::Run(cmd) => run_cmd(cmd),
        Command::Sweep(cmd) => sweep_cmd(cmd, units),
        Command::Metrics(cmd) => metrics_cmd(cmd, units),
        Command::Bdrate(cmd) => bdrate_cmd(cmd),
        Command::Topk(cmd) => topk_cmd(cmd),
        Command::Tensor(cmd) => tensor_cmd(cmd, units),
    }
}

fn finish(out_dir: &Path, failures: &[pipeline::FailureRecord]) -> Result<ExitCode, CliError> {
    if failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        write_failure_manifest(&out_dir.join("failures.json"), failures).runtime()?;
        eprintln!(
            "{} sequence(s) failed; see {}",
            failures.len(),
            out_dir.join("failures.json").display()
        );
        Ok(ExitCode::from(1))
    }
}

fn characterize_cmd(cmd: CharacterizeCmd, units: TimestampUnit) -> Result<ExitCode, CliError> {
    if cmd.tsf < 1 || cmd.k < 1 || cmd.bins < 1 {
        return usage(anyhow!("tsf, k, and bins must all be at least 1"));
    }
    fs::create_dir_all(&cmd.out)
        .with_context(|| format!("creating {}", cmd.out.display()))
        .runtime()?;
    let cfg = CharacterizeConfig {
        tsf: cmd.tsf,
        k: cmd.k,
        n_bins: cmd.bins,
    };
    let (stats, failures) = characterize_dataset(&cmd.dataset, &cfg, units).runtime()?;
    write_stats_csv(&cmd.out.join("stats.csv"), &stats, cfg.k).runtime()?;
    match evpc_core::characterize::dataset_summary(&stats) {
        Ok(summary) => write_json(&cmd.out.join("dataset_summary.json"), &summary).runtime()?,
        Err(_) => eprintln!("no sequences characterized; skipping dataset summary"),
    }
    println!(
        "characterized {} sequence(s) -> {}",
        stats.len(),
        cmd.out.display()
    );
    finish(&cmd.out, &failures)
}

fn e2p_cmd(cmd: E2pCmd, units: TimestampUnit) -> Result<ExitCode, CliError> {
    if cmd.tsf < 1 {
        return usage(anyhow!("--tsf must be at least 1"));
    }
    let seq = read_events_file(&cmd.input, &FormatParams::new(units)).runtime()?;
    let (pos, neg, stats) = event_to_pc(&seq, &ConversionConfig::new(cmd.tsf));
    fs::write(&cmd.out_pos, evpc_core::ply::cloud_to_ply(&pos))
        .with_context(|| format!("writing {}", cmd.out_pos.display()))
        .runtime()?;
    fs::write(&cmd.out_neg, evpc_core::ply::cloud_to_ply(&neg))
        .with_context(|| format!("writing {}", cmd.out_neg.display()))
        .runtime()?;
    if let Some(path) = &cmd.stats {
        write_json(path, &stats).runtime()?;
    }
    println!(
        "{} events -> {} POS + {} NEG points ({} discarded, {} cross-polarity)",
        stats.n_input_events,
        stats.n_output_points_pos,
        stats.n_output_points_neg,
        stats.n_discarded_same_polarity,
        stats.n_cross_polarity_duplicates
    );
    Ok(ExitCode::SUCCESS)
}

fn read_ply_cloud_file(path: &Path, polarity: Polarity) -> Result<EventPointCloud, CliError> {
    let file = fs::File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .runtime()?;
    evpc_core::ply::read_ply_cloud(std::io::BufReader::new(file), polarity).runtime()
}

fn p2e_cmd(cmd: P2eCmd, units: TimestampUnit) -> Result<ExitCode, CliError> {
    if cmd.tsf < 1 {
        return usage(anyhow!("--tsf must be at least 1"));
    }
    if cmd.dup_method == DuplicateMethod::Prob {
        // PLY files carry no occupancy scores; prob works in-process in
        // the decompressed pipeline with the builtin lossy codec.
        return usage(anyhow!(
            "p2e reads plain PLY files, which carry no occupancy scores; \
             the prob method is only available inside `run`/`sweep` with the builtin lossy codec"
        ));
    }
    let pos = read_ply_cloud_file(&cmd.pos, Polarity::Pos)?;
    let neg = read_ply_cloud_file(&cmd.neg, Polarity::Neg)?;
    let cfg = ConversionConfig::new(cmd.tsf).with_method(cmd.dup_method);
    let seq = pc_to_event(&pos, &neg, &cfg, units.units_per_second()).runtime()?;
    write_events_file(&cmd.out, &seq).runtime()?;
    println!("{} points -> {} events", pos.len() + neg.len(), seq.len());
    Ok(ExitCode::SUCCESS)
}

fn encode_cmd(cmd: EncodeCmd) -> Result<ExitCode, CliError> {
    if let Some(template) = &cmd.external {
        let codec = match ExternalCodec::from_template(template) {
            Ok(c) => c,
            Err(e) => return usage(e),
        };
        let workdir = tempfile::tempdir().runtime()?;
        let (_, size) = codec.run(&cmd.input, workdir.path()).runtime()?;
        fs::copy(workdir.path().join("stream.bin"), &cmd.out)
            .with_context(|| format!("copying stream to {}", cmd.out.display()))
            .runtime()?;
        println!("{} bytes -> {}", size, cmd.out.display());
        return Ok(ExitCode::SUCCESS);
    }

    let polarity = match cmd.polarity.as_str() {
        "pos" => Polarity::Pos,
        "neg" => Polarity::Neg,
        other => return usage(anyhow!("unknown polarity `{other}` (expected pos or neg)")),
    };
    let config = match cmd.mode.as_str() {
        "lossless" => {
            if cmd.truncate != 0 {
                return usage(anyhow!("lossless mode cannot truncate levels"));
            }
            OctreeConfig::lossless()
        }
        "lossy" => OctreeConfig::lossy(cmd.truncate),
        other => {
            return usage(anyhow!(
                "unknown mode `{other}` (expected lossless or lossy)"
            ))
        }
    };
    if cmd.score_radius < 1 || cmd.score_radius > 255 {
        return usage(anyhow!("--score-radius must be in 1..=255"));
    }
    let config = config.with_score_radius(cmd.score_radius);

    let cloud = read_ply_cloud_file(&cmd.input, polarity)?;
    let bitstream = if cloud.is_empty() {
        OctreeBitstream::empty(polarity)
    } else {
        codec::encode(&cloud, &config).runtime()?
    };
    let bytes = bitstream.to_bytes();
    fs::write(&cmd.out, &bytes)
        .with_context(|| format!("writing {}", cmd.out.display()))
        .runtime()?;
    println!(
        "{} points -> {} bytes (depth {}, truncation {})",
        cloud.len(),
        bytes.len(),
        bitstream.header.depth,
        bitstream.header.truncate_levels
    );
    Ok(ExitCode::SUCCESS)
}

fn decode_cmd(cmd: DecodeCmd) -> Result<ExitCode, CliError> {
    if let Some(template) = &cmd.external {
        let codec = match ExternalCodec::from_template(template) {
            Ok(c) => c,
            Err(e) => return usage(e),
        };
        codec.decode_stream(&cmd.input, &cmd.out).runtime()?;
        println!("decoded {} -> {}", cmd.input.display(), cmd.out.display());
        return Ok(ExitCode::SUCCESS);
    }

    let bytes = fs::read(&cmd.input)
        .with_context(|| format!("reading {}", cmd.input.display()))
        .runtime()?;
    let bitstream = OctreeBitstream::from_bytes(&bytes).runtime()?;
    let cloud = codec::decode(&bitstream).runtime()?;
    fs::write(&cmd.out, evpc_core::ply::cloud_to_ply(&cloud))
        .with_context(|| format!("writing {}", cmd.out.display()))
        .runtime()?;
    println!(
        "{} bytes -> {} points ({})",
        bytes.len(),
        cloud.len(),
        bitstream.header.polarity
    );
    Ok(ExitCode::SUCCESS)
}

fn run_cmd(cmd: RunCmd) -> Result<ExitCode, CliError> {
    let text = fs::read_to_string(&cmd.config)
        .with_context(|| format!("reading {}", cmd.config.display()))
        .runtime()?;
    let mut job: PipelineJob = match serde_json::from_str(&text) {
        Ok(job) => job,
        Err(e) => return usage(anyhow!("bad job config {}: {e}", cmd.config.display())),
    };
    if let Some(out) = cmd.out {
        job.out_dir = out;
    }
    if let Err(e) = job.validate() {
        return usage(e);
    }
    let summary = run_job(&job).runtime()?;
    println!(
        "{:?} pipeline: {} sequence(s), {} failure(s) -> {}",
        summary.pipeline,
        summary.n_sequences,
        summary.n_failures,
        summary.out_dir.display()
    );
    Ok(if summary.n_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn sweep_cmd(cmd: SweepCmd, units: TimestampUnit) -> Result<ExitCode, CliError> {
    let (config, out_dir) = if let Some(path) = &cmd.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .runtime()?;
        let config: SweepConfig = match serde_json::from_str(&text) {
            Ok(c) => c,
            Err(e) => return usage(anyhow!("bad sweep config {}: {e}", path.display())),
        };
        let Some(out) = cmd.out.clone() else {
            return usage(anyhow!("--out is required with --config"));
        };
        (config, out)
    } else {
        let Some(dataset) = cmd.dataset.clone() else {
            return usage(anyhow!("provide a dataset root or --config"));
        };
        let Some(out) = cmd.out.clone() else {
            return usage(anyhow!("--out is required"));
        };
        let config = SweepConfig {
            dataset_root: dataset,
            units,
            tsf_values: cmd.tsf.clone(),
            codec: SweepCodec::Builtin {
                truncate_levels: cmd.truncate.clone(),
                score_radius: 2,
            },
            duplicate_method: cmd.dup_method,
            metric: cmd.metric,
            peak: cmd.peak,
            curve_metric: CurveMetric::E2e,
        };
        (config, out)
    };

    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .runtime()?;
    let output = match pipeline::sweep(&config) {
        Ok(output) => output,
        Err(e @ evpc_core::Error::InvalidJob(_)) => return usage(e),
        Err(e) => return Err(CliError::Runtime(e.into())),
    };
    write_rows_csv(&out_dir.join("rows.csv"), &output.rows).runtime()?;
    pipeline::write_aggregates_csv(&out_dir.join("aggregates.csv"), &output.aggregates)
        .runtime()?;
    let curve_paths = write_curves(&out_dir, &output.curves).runtime()?;
    println!(
        "sweep: {} row(s), {} curve(s) -> {}",
        output.rows.len(),
        curve_paths.len(),
        out_dir.display()
    );
    finish(&out_dir, &output.failures)
}

fn json_f64(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::String(if v > 0.0 { "inf".into() } else { "-inf".into() })
    }
}

fn metrics_cmd(cmd: MetricsCmd, units: TimestampUnit) -> Result<ExitCode, CliError> {
    let params = FormatParams::new(units);
    let reference = read_events_file(&cmd.reference, &params).runtime()?;
    let decoded = read_events_file(&cmd.decoded, &params).runtime()?;
    let space = match cmd.peak {
        Some(peak) => match MetricSpace::new(peak) {
            Ok(s) => s,
            Err(e) => return usage(e),
        },
        None => MetricSpace::from_reference(&reference).runtime()?,
    };

    let mut report = serde_json::Map::new();
    report.insert(
        "reference".into(),
        cmd.reference.display().to_string().into(),
    );
    report.insert("decoded".into(), cmd.decoded.display().to_string().into());
    report.insert("peak".into(), json_f64(space.peak));
    if matches!(cmd.metric, MetricChoice::E2e | MetricChoice::Both) {
        let v = psnr_e2e(&reference, &decoded, &space).runtime()?;
        report.insert("psnr_e2e".into(), json_f64(v));
    }
    if matches!(cmd.metric, MetricChoice::E2d | MetricChoice::Both) {
        let v = psnr_e2d(&reference, &decoded, &space, E2D_NEIGHBORS).runtime()?;
        report.insert("psnr_e2d".into(), json_f64(v));
    }
    emit_json(&serde_json::Value::Object(report), cmd.out.as_deref())
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> Result<ExitCode, CliError> {
    let text = format!("{}\n", serde_json::to_string_pretty(value).expect("json"));
    match out {
        Some(path) => fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .runtime()?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn bdrate_cmd(cmd: BdrateCmd) -> Result<ExitCode, CliError> {
    let load = |path: &Path| -> Result<RateDistortionCurve, CliError> {
        let file = fs::File::open(path)
            .with_context(|| format!("opening {}", path.display()))
            .runtime()?;
        let label = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "curve".into());
        RateDistortionCurve::from_csv(label, std::io::BufReader::new(file)).runtime()
    };
    let reference = load(&cmd.reference)?;
    let test = load(&cmd.test)?;
    let value = bd_rate(&reference, &test).runtime()?;
    let report = serde_json::json!({
        "reference": reference.label,
        "test": test.label,
        "bd_rate_pct": value,
    });
    emit_json(&report, cmd.out.as_deref())
}

fn topk_cmd(cmd: TopkCmd) -> Result<ExitCode, CliError> {
    if cmd.k.contains(&0) {
        return usage(anyhow!("--k values must be at least 1"));
    }
    let pred_file = fs::File::open(&cmd.pred)
        .with_context(|| format!("opening {}", cmd.pred.display()))
        .runtime()?;
    let predictions = read_predictions(std::io::BufReader::new(pred_file)).runtime()?;
    let truth_file = fs::File::open(&cmd.truth)
        .with_context(|| format!("opening {}", cmd.truth.display()))
        .runtime()?;
    let truth = read_labels(std::io::BufReader::new(truth_file)).runtime()?;

    let mut report = serde_json::Map::new();
    report.insert("sequences".into(), predictions.rankings.len().into());
    for &k in &cmd.k {
        let pct = top_k(&predictions, &truth, k).runtime()?;
        report.insert(format!("top{k}_pct"), json_f64(pct));
    }
    emit_json(&serde_json::Value::Object(report), cmd.out.as_deref())
}

fn tensor_cmd(cmd: TensorCmd, units: TimestampUnit) -> Result<ExitCode, CliError> {
    if cmd.bins < 1 || cmd.height < 1 || cmd.width < 1 {
        return usage(anyhow!("bins, height, and width must all be at least 1"));
    }
    if cmd.input.is_dir() {
        let opts = TensorOptions {
            bins: cmd.bins,
            height: cmd.height,
            width: cmd.width,
        };
        fs::create_dir_all(&cmd.out)
            .with_context(|| format!("creating {}", cmd.out.display()))
            .runtime()?;
        let failures = pipeline::export_tensors(&cmd.input, units, &opts, &cmd.out).runtime()?;
        println!("tensors -> {}", cmd.out.join("tensors").display());
        return finish(&cmd.out, &failures);
    }

    let seq = read_events_file(&cmd.input, &FormatParams::new(units)).runtime()?;
    let tensor =
        evpc_core::tensor::build_tensor(&seq, cmd.bins, cmd.height, cmd.width).runtime()?;
    let file = fs::File::create(&cmd.out)
        .with_context(|| format!("creating {}", cmd.out.display()))
        .runtime()?;
    evpc_core::tensor::write_tensor(&tensor, std::io::BufWriter::new(file)).runtime()?;
    println!(
        "{} events -> tensor {}x{}x{} ({})",
        seq.len(),
        tensor.channels(),
        cmd.height,
        cmd.width,
        cmd.out.display()
    );
    Ok(ExitCode::SUCCESS)
}
