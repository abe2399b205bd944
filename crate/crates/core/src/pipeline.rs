//! Dataset-scale orchestration of the voxelized / decompressed / original
//! pipelines, plus report writing.
//!
//! Sequences are processed in parallel with pure per-sequence functions
//! and merged in canonical order, so identical inputs and flags produce
//! byte-identical reports. One malformed sequence never aborts a run: it
//! lands in the failure manifest instead.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bdrate::{CurvePoint, RateDistortionCurve};
use crate::characterize::{
    characterize_sequence, dataset_summary, CharacterizeConfig, DatasetSummary, SequenceStats,
};
use crate::cloud::EventPointCloud;
use crate::codec::{self, CodecMode, ExternalCodec, OctreeBitstream, OctreeConfig};
use crate::convert::{event_to_pc, pc_to_event, ConversionConfig, DuplicateMethod};
use crate::error::{Error, Result};
use crate::event::{
    read_events_file, walk_dataset, DatasetEntry, EventSequence, FormatParams, TimestampUnit,
};
use crate::psnr::{psnr_e2d, psnr_e2e, MetricSpace, E2D_NEIGHBORS};
use crate::tensor::build_tensor;

/// Which of the three processing pipelines to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineKind {
    /// Tensor export plus characterization of the untouched events.
    Original,
    /// Events -> point clouds -> events, no coding.
    Voxelized,
    /// Events -> point clouds -> codec -> events.
    Decompressed,
}

/// Codec selection for the decompressed pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum CodecSpec {
    Builtin(OctreeConfig),
    External { template: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricChoice {
    E2e,
    E2d,
    #[default]
    Both,
}

impl MetricChoice {
    fn wants_e2e(self) -> bool {
        matches!(self, MetricChoice::E2e | MetricChoice::Both)
    }

    fn wants_e2d(self) -> bool {
        matches!(self, MetricChoice::E2d | MetricChoice::Both)
    }
}

fn default_tsf() -> u32 {
    256
}

/// A pipeline run over one dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineJob {
    pub pipeline: PipelineKind,
    #[serde(default = "default_tsf")]
    pub tsf: u32,
    #[serde(default)]
    pub codec: Option<CodecSpec>,
    #[serde(default)]
    pub duplicate_method: DuplicateMethod,
    #[serde(default)]
    pub metric: MetricChoice,
    #[serde(default)]
    pub units: TimestampUnit,
    pub dataset_root: PathBuf,
    pub out_dir: PathBuf,
    /// PSNR peak; when absent, each sequence uses the maximum per-axis
    /// extent of its own reference in metric space.
    #[serde(default)]
    pub peak: Option<f64>,
    #[serde(default)]
    pub tensor: TensorOptions,
    #[serde(default)]
    pub characterize: CharacterizeOptions,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TensorOptions {
    pub bins: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for TensorOptions {
    fn default() -> Self {
        TensorOptions {
            bins: crate::tensor::DEFAULT_BINS,
            height: crate::tensor::DEFAULT_HEIGHT,
            width: crate::tensor::DEFAULT_WIDTH,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CharacterizeOptions {
    pub k: usize,
    pub n_bins: usize,
}

impl Default for CharacterizeOptions {
    fn default() -> Self {
        CharacterizeOptions { k: 20, n_bins: 100 }
    }
}

impl PipelineJob {
    pub fn validate(&self) -> Result<()> {
        if self.tsf < 1 {
            return Err(Error::InvalidJob("tsf must be at least 1".into()));
        }
        match self.pipeline {
            PipelineKind::Decompressed => {
                let Some(codec) = &self.codec else {
                    return Err(Error::InvalidJob(
                        "decompressed pipeline requires a codec spec".into(),
                    ));
                };
                match codec {
                    CodecSpec::Builtin(cfg) => {
                        cfg.validate()?;
                        if self.duplicate_method == DuplicateMethod::Prob
                            && (cfg.mode == CodecMode::Lossless || cfg.truncate_levels == 0)
                        {
                            return Err(Error::InvalidJob(
                                "the prob method needs a score-capable codec (builtin lossy)"
                                    .into(),
                            ));
                        }
                    }
                    CodecSpec::External { template } => {
                        ExternalCodec::from_template(template)?;
                        if self.duplicate_method == DuplicateMethod::Prob {
                            return Err(Error::InvalidJob(
                                "external codecs provide no occupancy scores for the prob method"
                                    .into(),
                            ));
                        }
                    }
                }
            }
            PipelineKind::Voxelized | PipelineKind::Original => {}
        }
        Ok(())
    }
}

/// One (sequence, configuration) result row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub sequence: String,
    pub tsf: u32,
    pub codec: String,
    pub rate_point: String,
    pub n_events: u64,
    pub bpe: Option<f64>,
    pub psnr_e2e: Option<f64>,
    pub psnr_e2d: Option<f64>,
    pub discarded_pct: f64,
    pub n_discarded: u64,
    pub n_cross_duplicates: u64,
    pub peak: f64,
}

/// A sequence that failed, with the stage that failed it.
#[derive(Clone, Debug, Serialize)]
pub struct FailureRecord {
    pub sequence: String,
    pub stage: String,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct RunOutput {
    pub rows: Vec<SweepRow>,
    pub failures: Vec<FailureRecord>,
}

fn sequence_id(entry: &DatasetEntry) -> String {
    let name = entry
        .path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    if entry.label.is_empty() {
        name
    } else {
        format!("{}/{name}", entry.label)
    }
}

fn metric_cell(result: Result<f64>) -> Result<Option<f64>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(Error::TooFewPoints { .. }) | Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn space_for(job_peak: Option<f64>, reference: &EventSequence) -> Result<MetricSpace> {
    match job_peak {
        Some(peak) => MetricSpace::new(peak),
        None => MetricSpace::from_reference(reference),
    }
}

struct CodedClouds {
    pos: EventPointCloud,
    neg: EventPointCloud,
    bytes_pos: u64,
    bytes_neg: u64,
}

fn builtin_code_cloud(
    cloud: &EventPointCloud,
    cfg: &OctreeConfig,
) -> Result<(EventPointCloud, u64)> {
    let bs = if cloud.is_empty() {
        OctreeBitstream::empty(cloud.polarity())
    } else {
        codec::encode(cloud, cfg)?
    };
    let size = bs.size_bytes() as u64;
    Ok((codec::decode(&bs)?, size))
}

fn run_builtin_codec(
    pos: &EventPointCloud,
    neg: &EventPointCloud,
    cfg: &OctreeConfig,
) -> Result<CodedClouds> {
    let (dec_pos, size_pos) = builtin_code_cloud(pos, cfg)?;
    let (dec_neg, size_neg) = builtin_code_cloud(neg, cfg)?;
    Ok(CodedClouds {
        pos: dec_pos,
        neg: dec_neg,
        bytes_pos: size_pos,
        bytes_neg: size_neg,
    })
}

fn run_external_codec(
    pos: &EventPointCloud,
    neg: &EventPointCloud,
    codec: &ExternalCodec,
) -> Result<CodedClouds> {
    let scratch = tempfile::tempdir().map_err(|e| Error::io("<tempdir>", e))?;
    let code_one = |cloud: &EventPointCloud| -> Result<(EventPointCloud, u64)> {
        let tag = cloud.polarity().to_string().to_lowercase();
        let input = scratch.path().join(format!("{tag}.ply"));
        fs::write(&input, crate::ply::cloud_to_ply(cloud)).map_err(|e| Error::io(&input, e))?;
        let workdir = scratch.path().join(format!("{tag}-work"));
        fs::create_dir_all(&workdir).map_err(|e| Error::io(&workdir, e))?;
        let (points, size) = codec.run(&input, &workdir)?;
        Ok((EventPointCloud::from_points(cloud.polarity(), points), size))
    };
    let (dec_pos, bytes_pos) = code_one(pos)?;
    let (dec_neg, bytes_neg) = code_one(neg)?;
    Ok(CodedClouds {
        pos: dec_pos,
        neg: dec_neg,
        bytes_pos,
        bytes_neg,
    })
}

struct RowSettings<'a> {
    tsf: u32,
    codec_label: String,
    rate_point: String,
    units: TimestampUnit,
    duplicate_method: DuplicateMethod,
    metric: MetricChoice,
    peak: Option<f64>,
    codec: Option<&'a CodecSpec>,
}

/// Process one sequence through the voxelized or decompressed pipeline.
fn process_sequence(entry: &DatasetEntry, settings: &RowSettings<'_>) -> Result<SweepRow> {
    let params = FormatParams::new(settings.units);
    let reference = read_events_file(&entry.path, &params)?;
    let space = space_for(settings.peak, &reference)?;

    let conversion = ConversionConfig::new(settings.tsf);
    let (pos, neg, stats) = event_to_pc(&reference, &conversion);

    let (decoded_pos, decoded_neg, bpe) = match settings.codec {
        None => (pos, neg, None),
        Some(spec) => {
            let coded = match spec {
                CodecSpec::Builtin(cfg) => run_builtin_codec(&pos, &neg, cfg)?,
                CodecSpec::External { template } => {
                    let external = ExternalCodec::from_template(template)?;
                    run_external_codec(&pos, &neg, &external)?
                }
            };
            let bpe = codec::rate_bpe(
                coded.bytes_pos as usize,
                coded.bytes_neg as usize,
                reference.len() as u64,
            )?;
            (coded.pos, coded.neg, Some(bpe))
        }
    };

    let n_cross_duplicates = decoded_pos.intersection(&decoded_neg).len() as u64;
    let reconstruction = pc_to_event(
        &decoded_pos,
        &decoded_neg,
        &conversion.with_method(settings.duplicate_method),
        reference.units_per_second,
    )?;

    let psnr_e2e_value = if settings.metric.wants_e2e() {
        metric_cell(psnr_e2e(&reference, &reconstruction, &space))?
    } else {
        None
    };
    let psnr_e2d_value = if settings.metric.wants_e2d() {
        metric_cell(psnr_e2d(&reference, &reconstruction, &space, E2D_NEIGHBORS))?
    } else {
        None
    };

    Ok(SweepRow {
        sequence: sequence_id(entry),
        tsf: settings.tsf,
        codec: settings.codec_label.clone(),
        rate_point: settings.rate_point.clone(),
        n_events: reference.len() as u64,
        bpe,
        psnr_e2e: psnr_e2e_value,
        psnr_e2d: psnr_e2d_value,
        discarded_pct: stats.discarded_pct(),
        n_discarded: stats.n_discarded_same_polarity,
        n_cross_duplicates,
        peak: space.peak,
    })
}

fn run_rows(entries: &[DatasetEntry], settings: &RowSettings<'_>) -> RunOutput {
    let results: Vec<std::result::Result<SweepRow, FailureRecord>> = entries
        .par_iter()
        .map(|entry| {
            process_sequence(entry, settings).map_err(|e| FailureRecord {
                sequence: sequence_id(entry),
                stage: format!("{}:{}", settings.codec_label, settings.rate_point),
                error: e.to_string(),
            })
        })
        .collect();
    let mut out = RunOutput::default();
    for r in results {
        match r {
            Ok(row) => out.rows.push(row),
            Err(f) => out.failures.push(f),
        }
    }
    out
}

fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| {
        (&a.sequence, a.tsf, &a.codec, &a.rate_point).cmp(&(
            &b.sequence,
            b.tsf,
            &b.codec,
            &b.rate_point,
        ))
    });
}

/// Voxelized pipeline: events -> clouds -> events with the NN duplicate
/// method (no coding, so no occupancy scores exist), metrics vs original.
pub fn run_voxelized(job: &PipelineJob) -> Result<RunOutput> {
    job.validate()?;
    let entries = walk_dataset(&job.dataset_root)?;
    let settings = RowSettings {
        tsf: job.tsf,
        codec_label: "none".into(),
        rate_point: "-".into(),
        units: job.units,
        duplicate_method: DuplicateMethod::Nn,
        metric: job.metric,
        peak: job.peak,
        codec: None,
    };
    let mut out = run_rows(&entries, &settings);
    sort_rows(&mut out.rows);
    Ok(out)
}

/// Decompressed pipeline: events -> clouds -> codec -> events with the
/// configured duplicate method, metrics and bits-per-event vs original.
pub fn run_decompressed(job: &PipelineJob) -> Result<RunOutput> {
    job.validate()?;
    let codec_spec = job
        .codec
        .as_ref()
        .ok_or_else(|| Error::InvalidJob("decompressed pipeline requires a codec".into()))?;
    let entries = walk_dataset(&job.dataset_root)?;
    let settings = RowSettings {
        tsf: job.tsf,
        codec_label: codec_label(codec_spec),
        rate_point: rate_point_label(codec_spec),
        units: job.units,
        duplicate_method: job.duplicate_method,
        metric: job.metric,
        peak: job.peak,
        codec: Some(codec_spec),
    };
    let mut out = run_rows(&entries, &settings);
    sort_rows(&mut out.rows);
    Ok(out)
}

fn codec_label(spec: &CodecSpec) -> String {
    match spec {
        CodecSpec::Builtin(_) => "octree".into(),
        CodecSpec::External { .. } => "external".into(),
    }
}

fn rate_point_label(spec: &CodecSpec) -> String {
    match spec {
        CodecSpec::Builtin(cfg) => {
            if cfg.mode == CodecMode::Lossless || cfg.truncate_levels == 0 {
                "lossless".into()
            } else {
                format!("t{}", cfg.truncate_levels)
            }
        }
        CodecSpec::External { .. } => "external".into(),
    }
}

/// Original pipeline output: characterization stats (tensors are written
/// separately by [`run_job`]).
pub fn run_original(job: &PipelineJob) -> Result<(Vec<SequenceStats>, Vec<FailureRecord>)> {
    job.validate()?;
    let cfg = CharacterizeConfig {
        tsf: job.tsf,
        k: job.characterize.k,
        n_bins: job.characterize.n_bins,
    };
    characterize_dataset(&job.dataset_root, &cfg, job.units)
}

/// Characterize every sequence under a dataset root.
pub fn characterize_dataset(
    root: &Path,
    cfg: &CharacterizeConfig,
    units: TimestampUnit,
) -> Result<(Vec<SequenceStats>, Vec<FailureRecord>)> {
    let entries = walk_dataset(root)?;
    let params = FormatParams::new(units);
    let results: Vec<std::result::Result<SequenceStats, FailureRecord>> = entries
        .par_iter()
        .map(|entry| {
            read_events_file(&entry.path, &params)
                .map(|seq| {
                    let seq = seq.with_label(entry.label.clone());
                    let mut stats = characterize_sequence(&seq, cfg);
                    stats.source_id = sequence_id(entry);
                    stats
                })
                .map_err(|e| FailureRecord {
                    sequence: sequence_id(entry),
                    stage: "characterize".into(),
                    error: e.to_string(),
                })
        })
        .collect();
    let mut stats = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(s) => stats.push(s),
            Err(f) => failures.push(f),
        }
    }
    stats.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    Ok((stats, failures))
}

/// Grid of configurations for [`sweep`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepConfig {
    pub dataset_root: PathBuf,
    #[serde(default)]
    pub units: TimestampUnit,
    pub tsf_values: Vec<u32>,
    pub codec: SweepCodec,
    #[serde(default)]
    pub duplicate_method: DuplicateMethod,
    #[serde(default)]
    pub metric: MetricChoice,
    #[serde(default)]
    pub peak: Option<f64>,
    /// Which PSNR feeds the per-configuration curves.
    #[serde(default)]
    pub curve_metric: CurveMetric,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveMetric {
    #[default]
    E2e,
    E2d,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SweepCodec {
    /// Builtin octree codec swept over truncation levels.
    Builtin {
        truncate_levels: Vec<u32>,
        #[serde(default = "crate::pipeline::default_score_radius")]
        score_radius: u64,
    },
    /// External codec template swept over `{param}` substitutions.
    External {
        template: String,
        params: Vec<String>,
    },
}

pub(crate) fn default_score_radius() -> u64 {
    2
}

#[derive(Debug, Default)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<ConfigAggregate>,
    pub curves: Vec<RateDistortionCurve>,
    pub failures: Vec<FailureRecord>,
}

/// Mean metrics of the rows sharing one configuration.
#[derive(Clone, Debug, Serialize)]
pub struct ConfigAggregate {
    pub tsf: u32,
    pub codec: String,
    pub rate_point: String,
    pub n_rows: usize,
    pub mean_bpe: Option<f64>,
    pub mean_psnr_e2e: Option<f64>,
    pub mean_psnr_e2d: Option<f64>,
    pub mean_discarded_pct: Option<f64>,
}

/// Group rows by (tsf, codec, rate_point) and average each metric over the
/// rows where it is defined.
pub fn aggregate_rows(rows: &[SweepRow]) -> Vec<ConfigAggregate> {
    let mut groups: BTreeMap<(u32, String, String), Vec<&SweepRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.tsf, row.codec.clone(), row.rate_point.clone()))
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|((tsf, codec, rate_point), rows)| {
            let mean = |f: &dyn Fn(&SweepRow) -> Option<f64>| {
                let values: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
                if values.is_empty() {
                    None
                } else {
                    Some(values.iter().sum::<f64>() / values.len() as f64)
                }
            };
            ConfigAggregate {
                tsf,
                codec,
                rate_point,
                n_rows: rows.len(),
                mean_bpe: mean(&|r| r.bpe),
                mean_psnr_e2e: mean(&|r| r.psnr_e2e),
                mean_psnr_e2d: mean(&|r| r.psnr_e2d),
                mean_discarded_pct: mean(&|r| Some(r.discarded_pct)),
            }
        })
        .collect()
}

/// Run the decompressed pipeline over the TSF x rate-point grid and build
/// one aggregate rate curve per TSF, ready for BD-Rate.
pub fn sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    if cfg.tsf_values.is_empty() {
        return Err(Error::InvalidJob(
            "sweep needs at least one TSF value".into(),
        ));
    }
    let specs: Vec<(String, CodecSpec)> = match &cfg.codec {
        SweepCodec::Builtin {
            truncate_levels,
            score_radius,
        } => {
            if truncate_levels.is_empty() {
                return Err(Error::InvalidJob(
                    "sweep needs at least one truncation level".into(),
                ));
            }
            truncate_levels
                .iter()
                .map(|&t| {
                    let base = if t == 0 {
                        OctreeConfig::lossless()
                    } else {
                        OctreeConfig::lossy(t)
                    };
                    let spec = CodecSpec::Builtin(base.with_score_radius(*score_radius));
                    (rate_point_label(&spec), spec)
                })
                .collect()
        }
        SweepCodec::External { template, params } => {
            if params.is_empty() {
                return Err(Error::InvalidJob(
                    "sweep needs at least one external codec parameter".into(),
                ));
            }
            params
                .iter()
                .map(|p| {
                    (
                        p.clone(),
                        CodecSpec::External {
                            template: template.replace("{param}", p),
                        },
                    )
                })
                .collect()
        }
    };

    let entries = walk_dataset(&cfg.dataset_root)?;
    let mut output = SweepOutput::default();
    for &tsf in &cfg.tsf_values {
        for (rate_point, spec) in &specs {
            if cfg.duplicate_method == DuplicateMethod::Prob {
                if let CodecSpec::Builtin(c) = spec {
                    if c.truncate_levels == 0 {
                        return Err(Error::InvalidJob(
                            "the prob method needs a score-capable codec; \
                             drop truncation level 0 from the sweep"
                                .into(),
                        ));
                    }
                }
            }
            let settings = RowSettings {
                tsf,
                codec_label: codec_label(spec),
                rate_point: rate_point.clone(),
                units: cfg.units,
                duplicate_method: cfg.duplicate_method,
                metric: cfg.metric,
                peak: cfg.peak,
                codec: Some(spec),
            };
            let run = run_rows(&entries, &settings);
            output.rows.extend(run.rows);
            output.failures.extend(run.failures);
        }
    }
    sort_rows(&mut output.rows);
    output.aggregates = aggregate_rows(&output.rows);

    for &tsf in &cfg.tsf_values {
        let mut points: Vec<CurvePoint> = output
            .aggregates
            .iter()
            .filter(|a| a.tsf == tsf)
            .filter_map(|a| {
                let score = match cfg.curve_metric {
                    CurveMetric::E2e => a.mean_psnr_e2e,
                    CurveMetric::E2d => a.mean_psnr_e2d,
                };
                Some(CurvePoint {
                    rate: a.mean_bpe?,
                    score: score.filter(|s| s.is_finite())?,
                })
            })
            .collect();
        points.sort_by(|a, b| a.rate.total_cmp(&b.rate));
        points.dedup_by(|a, b| a.rate == b.rate);
        let label = format!("{}-tsf{tsf}", sweep_codec_name(&cfg.codec));
        match RateDistortionCurve::new(label.clone(), points) {
            Ok(curve) if !curve.points.is_empty() => output.curves.push(curve),
            Ok(_) => {}
            Err(e) => output.failures.push(FailureRecord {
                sequence: label,
                stage: "curve".into(),
                error: e.to_string(),
            }),
        }
    }
    Ok(output)
}

fn sweep_codec_name(codec: &SweepCodec) -> &'static str {
    match codec {
        SweepCodec::Builtin { .. } => "octree",
        SweepCodec::External { .. } => "external",
    }
}

/// Summary of a completed [`run_job`].
#[derive(Clone, Debug, Serialize)]
pub struct JobSummary {
    pub pipeline: PipelineKind,
    pub n_sequences: usize,
    pub n_failures: usize,
    pub out_dir: PathBuf,
}

/// Run a job end to end, writing reports into `job.out_dir`:
/// `rows.csv`, `aggregates.csv`, `summary.json`, and `failures.json` when
/// anything failed. The original pipeline writes `stats.csv`,
/// `dataset_summary.json`, and per-sequence `.evt.tensor` files instead.
pub fn run_job(job: &PipelineJob) -> Result<JobSummary> {
    job.validate()?;
    fs::create_dir_all(&job.out_dir).map_err(|e| Error::io(&job.out_dir, e))?;

    match job.pipeline {
        PipelineKind::Original => {
            let (stats, mut failures) = run_original(job)?;
            failures.extend(export_tensors(
                &job.dataset_root,
                job.units,
                &job.tensor,
                &job.out_dir,
            )?);
            write_stats_csv(&job.out_dir.join("stats.csv"), &stats, job.characterize.k)?;
            if let Ok(summary) = dataset_summary(&stats) {
                write_json(&job.out_dir.join("dataset_summary.json"), &summary)?;
            }
            finish_job(job, stats.len(), failures)
        }
        PipelineKind::Voxelized | PipelineKind::Decompressed => {
            let output = if job.pipeline == PipelineKind::Voxelized {
                run_voxelized(job)?
            } else {
                run_decompressed(job)?
            };
            write_rows_csv(&job.out_dir.join("rows.csv"), &output.rows)?;
            let aggregates = aggregate_rows(&output.rows);
            write_aggregates_csv(&job.out_dir.join("aggregates.csv"), &aggregates)?;
            finish_job(job, output.rows.len(), output.failures)
        }
    }
}

fn finish_job(
    job: &PipelineJob,
    n_sequences: usize,
    failures: Vec<FailureRecord>,
) -> Result<JobSummary> {
    if !failures.is_empty() {
        write_json(&job.out_dir.join("failures.json"), &failures)?;
    }
    let summary = JobSummary {
        pipeline: job.pipeline,
        n_sequences,
        n_failures: failures.len(),
        out_dir: job.out_dir.clone(),
    };
    write_json(&job.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Build and store one `.evt.tensor` per sequence under `out_dir/tensors`.
pub fn export_tensors(
    dataset_root: &Path,
    units: TimestampUnit,
    opts: &TensorOptions,
    out_dir: &Path,
) -> Result<Vec<FailureRecord>> {
    let entries = walk_dataset(dataset_root)?;
    let params = FormatParams::new(units);
    let tensor_root = out_dir.join("tensors");
    let results: Vec<Option<FailureRecord>> = entries
        .par_iter()
        .map(|entry| {
            let run = || -> Result<()> {
                let seq =
                    read_events_file(&entry.path, &params)?.with_source_id(sequence_id(entry));
                let tensor = build_tensor(&seq, opts.bins, opts.height, opts.width)?;
                let dir = tensor_root.join(&entry.label);
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let stem = entry
                    .path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "sequence".into());
                let path = dir.join(format!("{stem}.evt.tensor"));
                let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
                crate::tensor::write_tensor(&tensor, std::io::BufWriter::new(file))
            };
            run().err().map(|e| FailureRecord {
                sequence: sequence_id(entry),
                stage: "tensor".into(),
                error: e.to_string(),
            })
        })
        .collect();
    Ok(results.into_iter().flatten().collect())
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v}")
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Write per-sequence result rows as CSV.
pub fn write_rows_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from(
        "sequence,tsf,codec,rate_point,n_events,bpe,psnr_e2e,psnr_e2d,\
         discarded_pct,n_discarded,n_cross_duplicates,peak\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.sequence,
            r.tsf,
            r.codec,
            r.rate_point,
            r.n_events,
            fmt_opt(r.bpe),
            fmt_opt(r.psnr_e2e),
            fmt_opt(r.psnr_e2d),
            fmt_f64(r.discarded_pct),
            r.n_discarded,
            r.n_cross_duplicates,
            fmt_f64(r.peak),
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write per-configuration aggregates as CSV.
pub fn write_aggregates_csv(path: &Path, aggregates: &[ConfigAggregate]) -> Result<()> {
    let mut out = String::from(
        "tsf,codec,rate_point,n_rows,mean_bpe,mean_psnr_e2e,mean_psnr_e2d,mean_discarded_pct\n",
    );
    for a in aggregates {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            a.tsf,
            a.codec,
            a.rate_point,
            a.n_rows,
            fmt_opt(a.mean_bpe),
            fmt_opt(a.mean_psnr_e2e),
            fmt_opt(a.mean_psnr_e2d),
            fmt_opt(a.mean_discarded_pct),
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Write characterization stats as CSV (coherence expanded to one column
/// per threshold value).
pub fn write_stats_csv(path: &Path, stats: &[SequenceStats], k: usize) -> Result<()> {
    let mut out = String::from(
        "source_id,label,n_total,n_pos,n_neg,neg_pos_ratio,sparsity_global,\
         sparsity_pos,sparsity_neg,cross_polarity_raw,discarded_voxelization",
    );
    for n in 1..=k {
        out.push_str(&format!(",coherence_n{n}"));
    }
    out.push('\n');
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.source_id,
            s.label,
            s.n_total,
            s.n_pos,
            s.n_neg,
            fmt_opt(s.neg_pos_ratio),
            fmt_opt(s.sparsity_global),
            fmt_opt(s.sparsity_pos),
            fmt_opt(s.sparsity_neg),
            s.n_cross_polarity_raw,
            s.n_discarded_voxelization,
        ));
        for n in 0..k {
            let v = s.coherence.as_ref().and_then(|c| c.get(n).copied());
            out.push_str(&format!(",{}", fmt_opt(v)));
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Pretty-printed JSON report.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidJob(format!("serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Write a curve as `rate,score` CSV next to its siblings.
pub fn write_curves(out_dir: &Path, curves: &[RateDistortionCurve]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for curve in curves {
        let path = out_dir.join(format!("curve_{}.csv", curve.label));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        curve.to_csv(std::io::BufWriter::new(file))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Dataset summary convenience wrapper used by the `characterize` command.
pub fn summarize(stats: &[SequenceStats]) -> Result<DatasetSummary> {
    dataset_summary(stats)
}

/// Write a failure manifest; callers map a non-empty manifest to exit code 1.
pub fn write_failure_manifest(path: &Path, failures: &[FailureRecord]) -> Result<()> {
    write_json(path, &failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::{write_events_file, Event, Polarity};

    fn ev(x: u8, y: u8, t_raw: u32, p: Polarity) -> Event {
        Event { x, y, t_raw, p }
    }

    /// Duplicate-free sequence on the TSF grid so voxelization is lossless.
    fn grid_sequence(n: u32, tsf: u32) -> EventSequence {
        let step = 1_000_000 / tsf;
        let events = (0..n)
            .map(|i| {
                let p = if i % 2 == 0 {
                    Polarity::Pos
                } else {
                    Polarity::Neg
                };
                ev((i % 16) as u8, (i / 16 % 16) as u8, i / 4 * step, p)
            })
            .collect();
        EventSequence::new(events, 1e6)
    }

    fn write_dataset(dir: &Path, sequences: &[(&str, &str, &EventSequence)]) {
        for (label, name, seq) in sequences {
            let class = dir.join(label);
            fs::create_dir_all(&class).unwrap();
            write_events_file(&class.join(name), seq).unwrap();
        }
    }

    fn base_job(root: &Path, out: &Path, pipeline: PipelineKind) -> PipelineJob {
        PipelineJob {
            pipeline,
            tsf: 64,
            codec: None,
            duplicate_method: DuplicateMethod::Nn,
            metric: MetricChoice::E2e,
            units: TimestampUnit::Microseconds,
            dataset_root: root.to_path_buf(),
            out_dir: out.to_path_buf(),
            peak: Some(100.0),
            tensor: TensorOptions::default(),
            characterize: CharacterizeOptions::default(),
        }
    }

    #[test]
    fn grid_aligned_sequences_are_lossless_through_voxelization() {
        let dir = tempfile::tempdir().unwrap();
        let seq = grid_sequence(64, 64);
        write_dataset(dir.path(), &[("a", "s0.bin", &seq)]);
        let out = tempfile::tempdir().unwrap();
        let job = base_job(dir.path(), out.path(), PipelineKind::Voxelized);
        let run = run_voxelized(&job).unwrap();
        assert_eq!(run.rows.len(), 1);
        assert!(run.failures.is_empty());
        let row = &run.rows[0];
        assert_eq!(row.psnr_e2e, Some(f64::INFINITY));
        assert_eq!(row.discarded_pct, 0.0);
    }

    #[test]
    fn empty_dataset_gives_empty_report() {
        let dir = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let job = base_job(dir.path(), out.path(), PipelineKind::Voxelized);
        let run = run_voxelized(&job).unwrap();
        assert!(run.rows.is_empty() && run.failures.is_empty());
        write_rows_csv(&out.path().join("rows.csv"), &run.rows).unwrap();
        let text = fs::read_to_string(out.path().join("rows.csv")).unwrap();
        assert!(text.starts_with("sequence,"));
    }

    #[test]
    fn builtin_lossless_matches_voxelized_quality() {
        let dir = tempfile::tempdir().unwrap();
        let seq = grid_sequence(80, 64);
        write_dataset(dir.path(), &[("a", "s0.bin", &seq)]);
        let out = tempfile::tempdir().unwrap();

        let vox =
            run_voxelized(&base_job(dir.path(), out.path(), PipelineKind::Voxelized)).unwrap();

        let mut job = base_job(dir.path(), out.path(), PipelineKind::Decompressed);
        job.codec = Some(CodecSpec::Builtin(OctreeConfig::lossless()));
        let dec = run_decompressed(&job).unwrap();

        assert_eq!(dec.rows.len(), 1);
        assert_eq!(dec.rows[0].psnr_e2e, vox.rows[0].psnr_e2e);
        assert!(dec.rows[0].bpe.unwrap() > 0.0);
    }

    #[test]
    fn malformed_sequences_land_in_failures() {
        let dir = tempfile::tempdir().unwrap();
        let seq = grid_sequence(32, 64);
        write_dataset(dir.path(), &[("a", "good.bin", &seq)]);
        fs::write(dir.path().join("a").join("bad.bin"), [1, 2, 3]).unwrap();
        let out = tempfile::tempdir().unwrap();
        let run =
            run_voxelized(&base_job(dir.path(), out.path(), PipelineKind::Voxelized)).unwrap();
        assert_eq!(run.rows.len(), 1);
        assert_eq!(run.failures.len(), 1);
        assert!(run.failures[0].sequence.contains("bad.bin"));
    }

    #[test]
    fn job_validation_rejects_bad_combinations() {
        let dir = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let mut job = base_job(dir.path(), out.path(), PipelineKind::Decompressed);
        assert!(matches!(job.validate(), Err(Error::InvalidJob(_))));

        job.codec = Some(CodecSpec::Builtin(OctreeConfig::lossless()));
        job.duplicate_method = DuplicateMethod::Prob;
        assert!(matches!(job.validate(), Err(Error::InvalidJob(_))));

        job.codec = Some(CodecSpec::Builtin(OctreeConfig::lossy(2)));
        assert!(job.validate().is_ok());
    }

    #[test]
    fn reports_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let s0 = grid_sequence(48, 64);
        let s1 = grid_sequence(52, 64);
        write_dataset(dir.path(), &[("a", "s0.bin", &s0), ("b", "s1.bin", &s1)]);
        let out = tempfile::tempdir().unwrap();
        let job = base_job(dir.path(), out.path(), PipelineKind::Voxelized);

        let render = || {
            let run = run_voxelized(&job).unwrap();
            let path = out.path().join("rows.csv");
            write_rows_csv(&path, &run.rows).unwrap();
            fs::read(path).unwrap()
        };
        assert_eq!(render(), render());
    }

    #[test]
    fn sweep_produces_rows_and_curves() {
        let dir = tempfile::tempdir().unwrap();
        // Sequences with spread and collisions so lossy points differ.
        let events: Vec<Event> = (0..600)
            .map(|i| {
                let p = if i % 3 == 0 {
                    Polarity::Pos
                } else {
                    Polarity::Neg
                };
                ev(
                    (i * 7 % 64) as u8,
                    (i * 13 % 48) as u8,
                    (i * 531) % 300_000,
                    p,
                )
            })
            .collect();
        let seq = EventSequence::new(events, 1e6);
        write_dataset(dir.path(), &[("a", "s0.bin", &seq)]);

        let cfg = SweepConfig {
            dataset_root: dir.path().to_path_buf(),
            units: TimestampUnit::Microseconds,
            tsf_values: vec![64],
            codec: SweepCodec::Builtin {
                truncate_levels: vec![0, 1],
                score_radius: 2,
            },
            duplicate_method: DuplicateMethod::Nn,
            metric: MetricChoice::E2e,
            peak: Some(300.0),
            curve_metric: CurveMetric::E2e,
        };
        let output = sweep(&cfg).unwrap();
        assert_eq!(output.rows.len(), 2);
        assert!(output.failures.is_empty());
        assert_eq!(output.aggregates.len(), 2);
        assert_eq!(output.curves.len(), 1);
        assert_eq!(output.curves[0].points.len(), 2);
        // rates strictly increasing within the curve
        assert!(output.curves[0].points[0].rate < output.curves[0].points[1].rate);
    }

    #[test]
    fn identity_external_codec_matches_builtin_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let seq = grid_sequence(96, 64);
        write_dataset(dir.path(), &[("a", "s0.bin", &seq)]);
        let out = tempfile::tempdir().unwrap();

        let mut builtin = base_job(dir.path(), out.path(), PipelineKind::Decompressed);
        builtin.codec = Some(CodecSpec::Builtin(OctreeConfig::lossless()));
        let builtin_rows = run_decompressed(&builtin).unwrap().rows;

        let mut external = base_job(dir.path(), out.path(), PipelineKind::Decompressed);
        external.codec = Some(CodecSpec::External {
            template: "cp {in} {bin}; cp {bin} {out}".into(),
        });
        let external_rows = run_decompressed(&external).unwrap().rows;

        assert_eq!(external_rows.len(), 1);
        assert_eq!(external_rows[0].psnr_e2e, builtin_rows[0].psnr_e2e);
        assert!(external_rows[0].bpe.unwrap() > 0.0);
    }

    #[test]
    fn sweep_curves_feed_bd_rate_without_reformatting() {
        let dir = tempfile::tempdir().unwrap();
        // 20 sequences over three TSF values; four rate points per curve
        // so the interpolation-based BD machinery accepts them directly.
        let mut sequences = Vec::new();
        for s in 0..20u32 {
            let events: Vec<Event> = (0..300)
                .map(|i| {
                    let v = i + 533 * s;
                    let p = if v % 3 == 0 {
                        Polarity::Pos
                    } else {
                        Polarity::Neg
                    };
                    ev(
                        (v * 7 % 64) as u8,
                        (v * 13 % 48) as u8,
                        (v * 977) % 300_000,
                        p,
                    )
                })
                .collect();
            sequences.push(EventSequence::new(events, 1e6));
        }
        let class = dir.path().join("cls");
        fs::create_dir_all(&class).unwrap();
        for (i, s) in sequences.iter().enumerate() {
            write_events_file(&class.join(format!("s{i}.bin")), s).unwrap();
        }

        let cfg = SweepConfig {
            dataset_root: dir.path().to_path_buf(),
            units: TimestampUnit::Microseconds,
            tsf_values: vec![64, 128, 256],
            codec: SweepCodec::Builtin {
                truncate_levels: vec![0, 1, 2, 3],
                score_radius: 2,
            },
            duplicate_method: DuplicateMethod::Nn,
            metric: MetricChoice::E2e,
            peak: Some(300.0),
            curve_metric: CurveMetric::E2e,
        };
        let output = sweep(&cfg).unwrap();
        assert!(output.failures.is_empty(), "{:?}", output.failures);
        assert_eq!(output.rows.len(), 20 * 3 * 4);
        assert_eq!(output.curves.len(), 3);
        for curve in &output.curves {
            assert_eq!(curve.points.len(), 4);
            for w in curve.points.windows(2) {
                assert!(w[0].rate < w[1].rate, "curve rates must increase");
            }
        }

        // Round-trip one curve through its CSV form and into bd_rate.
        let out = tempfile::tempdir().unwrap();
        let paths = write_curves(out.path(), &output.curves).unwrap();
        let reread = {
            let file = fs::File::open(&paths[0]).unwrap();
            RateDistortionCurve::from_csv(output.curves[0].label.clone(), file).unwrap()
        };
        let bd = crate::bdrate::bd_rate(&output.curves[0], &reread).unwrap();
        assert!(bd.abs() < 1e-9);
    }

    #[test]
    fn run_job_writes_reports() {
        let dir = tempfile::tempdir().unwrap();
        let seq = grid_sequence(40, 64);
        write_dataset(dir.path(), &[("a", "s0.bin", &seq)]);
        let out = tempfile::tempdir().unwrap();
        let job = base_job(dir.path(), out.path(), PipelineKind::Voxelized);
        let summary = run_job(&job).unwrap();
        assert_eq!(summary.n_sequences, 1);
        assert!(out.path().join("rows.csv").exists());
        assert!(out.path().join("aggregates.csv").exists());
        assert!(out.path().join("summary.json").exists());
    }

    #[test]
    fn original_job_writes_stats_and_tensors() {
        let dir = tempfile::tempdir().unwrap();
        let seq = grid_sequence(120, 64);
        write_dataset(dir.path(), &[("cls", "s0.bin", &seq)]);
        let out = tempfile::tempdir().unwrap();
        let mut job = base_job(dir.path(), out.path(), PipelineKind::Original);
        job.tensor = TensorOptions {
            bins: 4,
            height: 16,
            width: 16,
        };
        job.characterize = CharacterizeOptions { k: 5, n_bins: 10 };
        let summary = run_job(&job).unwrap();
        assert_eq!(summary.n_failures, 0);
        assert!(out.path().join("stats.csv").exists());
        assert!(out.path().join("dataset_summary.json").exists());
        assert!(out
            .path()
            .join("tensors")
            .join("cls")
            .join("s0.evt.tensor")
            .exists());
    }
}
