//! Per-sequence characterization metrics and dataset aggregates.
//!
//! The five metrics: event counts, temporal histograms, NEG-POS ratio,
//! sparsity (median over events of the mean Euclidean distance to the k
//! nearest neighbors), and polarity coherence. Distance-based metrics run
//! on the voxelized, deduplicated representation at a configurable TSF.

use std::collections::HashSet;

use serde::Serialize;

use crate::cloud::Voxel;
use crate::convert::{event_to_pc, ConversionConfig};
use crate::error::{Error, Result};
use crate::event::{EventSequence, Polarity};
use crate::knn::NeighborIndex;

/// Exact per-polarity event counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EventCounts {
    pub total: u64,
    pub pos: u64,
    pub neg: u64,
}

pub fn count_events(seq: &EventSequence) -> EventCounts {
    let pos = seq.events.iter().filter(|e| e.p == Polarity::Pos).count() as u64;
    let total = seq.len() as u64;
    EventCounts {
        total,
        pos,
        neg: total - pos,
    }
}

/// Per-bin event counts over the sequence's own time range.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TemporalHistogram {
    pub n_bins: usize,
    pub combined: Vec<u64>,
    pub pos: Vec<u64>,
    pub neg: Vec<u64>,
}

/// Count events in `n_bins` bins along time:
/// bin = floor((t - t_min) * n_bins / (t_max - t_min + 1)).
pub fn temporal_histogram(seq: &EventSequence, n_bins: usize) -> TemporalHistogram {
    assert!(n_bins >= 1, "histogram needs at least one bin");
    let mut hist = TemporalHistogram {
        n_bins,
        combined: vec![0; n_bins],
        pos: vec![0; n_bins],
        neg: vec![0; n_bins],
    };
    if seq.is_empty() {
        return hist;
    }
    let t_min = u64::from(seq.events.first().expect("non-empty").t_raw);
    let t_max = u64::from(seq.events.last().expect("non-empty").t_raw);
    let span = t_max - t_min + 1;
    for e in &seq.events {
        let bin = ((u64::from(e.t_raw) - t_min) * n_bins as u64 / span) as usize;
        hist.combined[bin] += 1;
        match e.p {
            Polarity::Pos => hist.pos[bin] += 1,
            Polarity::Neg => hist.neg[bin] += 1,
        }
    }
    hist
}

/// NEG event count divided by POS event count.
pub fn neg_pos_ratio(seq: &EventSequence) -> Result<f64> {
    let counts = count_events(seq);
    if counts.pos == 0 {
        return Err(Error::UndefinedRatio);
    }
    Ok(counts.neg as f64 / counts.pos as f64)
}

/// Sparsity of a voxelized point list: for every point, the mean Euclidean
/// (non-squared) distance to its k nearest neighbors; the median of those
/// means (even count: mean of the two middle values).
///
/// Entries may be co-located (a merged cloud keeps cross-polarity twins as
/// two points at distance 0); each entry is excluded only as itself.
pub fn sparsity(points: &[Voxel], k: usize) -> Result<f64> {
    assert!(k >= 1, "sparsity needs k >= 1");
    if points.len() < k + 1 {
        return Err(Error::TooFewPoints {
            needed: k + 1,
            got: points.len(),
        });
    }
    let index = NeighborIndex::from_voxels(points);
    let mut means: Vec<f64> = Vec::with_capacity(points.len());
    for (i, v) in points.iter().enumerate() {
        let neighbors = index.knn_excluding(v.as_f64(), k, i)?;
        let sum: f64 = neighbors.iter().map(|n| n.dist_sq.sqrt()).sum();
        means.push(sum / k as f64);
    }
    Ok(median(&mut means))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Percentage of events whose k nearest neighbors (self excluded) include
/// at least `n` events of the same polarity.
pub fn polarity_coherence(points: &[(Voxel, Polarity)], k: usize, n: usize) -> Result<f64> {
    assert!((1..=k).contains(&n), "threshold n must be in [1, k]");
    Ok(coherence_curve(points, k)?[n - 1])
}

/// The full coherence curve: element n-1 is the percentage for threshold n.
/// Monotonically non-increasing in n by construction.
pub fn coherence_curve(points: &[(Voxel, Polarity)], k: usize) -> Result<Vec<f64>> {
    assert!(k >= 1, "coherence needs k >= 1");
    if points.len() < k + 1 {
        return Err(Error::TooFewPoints {
            needed: k + 1,
            got: points.len(),
        });
    }
    let index = NeighborIndex::from_voxels(&points.iter().map(|&(v, _)| v).collect::<Vec<_>>());
    // events_with_at_least[c] = events with >= c same-polarity neighbors
    let mut count_hist = vec![0u64; k + 1];
    for (i, &(v, p)) in points.iter().enumerate() {
        let neighbors = index.knn_excluding(v.as_f64(), k, i)?;
        let same = neighbors
            .iter()
            .filter(|nb| points[nb.index].1 == p)
            .count();
        count_hist[same] += 1;
    }
    let total = points.len() as f64;
    let mut curve = Vec::with_capacity(k);
    let mut at_least = 0u64;
    let mut cumulative: Vec<u64> = Vec::with_capacity(k + 1);
    for c in (0..=k).rev() {
        at_least += count_hist[c];
        cumulative.push(at_least);
    }
    cumulative.reverse(); // cumulative[c] = events with >= c same-polarity neighbors
    for &at_least_n in &cumulative[1..] {
        curve.push(100.0 * at_least_n as f64 / total);
    }
    Ok(curve)
}

/// Settings for [`characterize_sequence`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CharacterizeConfig {
    /// Temporal scaling factor for the voxelized distance metrics.
    pub tsf: u32,
    /// Neighborhood size for sparsity and coherence.
    pub k: usize,
    /// Temporal histogram bin count.
    pub n_bins: usize,
}

impl Default for CharacterizeConfig {
    fn default() -> Self {
        CharacterizeConfig {
            tsf: 256,
            k: 20,
            n_bins: 100,
        }
    }
}

/// All characterization metrics for one sequence.
///
/// Distance metrics are `None` when the (voxelized) point count is below
/// k + 1; the dataset summary skips missing values.
#[derive(Clone, Debug, Serialize)]
pub struct SequenceStats {
    pub source_id: String,
    pub label: String,
    pub n_total: u64,
    pub n_pos: u64,
    pub n_neg: u64,
    pub neg_pos_ratio: Option<f64>,
    pub sparsity_global: Option<f64>,
    pub sparsity_pos: Option<f64>,
    pub sparsity_neg: Option<f64>,
    /// Coherence percentages for n = 1..=k.
    pub coherence: Option<Vec<f64>>,
    pub histogram: TemporalHistogram,
    /// Events sharing (x, y, t_raw) with an opposite-polarity event,
    /// counted on the raw (pre-voxelization) sequence.
    pub n_cross_polarity_raw: u64,
    /// Voxel-level conversion bookkeeping at the configured TSF.
    pub n_discarded_voxelization: u64,
}

/// Compute every characterization metric for one sequence.
pub fn characterize_sequence(seq: &EventSequence, cfg: &CharacterizeConfig) -> SequenceStats {
    let counts = count_events(seq);
    let histogram = temporal_histogram(seq, cfg.n_bins);
    let ratio = neg_pos_ratio(seq).ok();

    let (pos, neg, conv_stats) = event_to_pc(seq, &ConversionConfig::new(cfg.tsf));
    let merged: Vec<Voxel> = pos.points().iter().chain(neg.points()).copied().collect();
    let tagged: Vec<(Voxel, Polarity)> = pos
        .points()
        .iter()
        .map(|&v| (v, Polarity::Pos))
        .chain(neg.points().iter().map(|&v| (v, Polarity::Neg)))
        .collect();

    SequenceStats {
        source_id: seq.source_id.clone().unwrap_or_default(),
        label: seq.label.clone().unwrap_or_default(),
        n_total: counts.total,
        n_pos: counts.pos,
        n_neg: counts.neg,
        neg_pos_ratio: ratio,
        sparsity_global: sparsity(&merged, cfg.k).ok(),
        sparsity_pos: sparsity(pos.points(), cfg.k).ok(),
        sparsity_neg: sparsity(neg.points(), cfg.k).ok(),
        coherence: coherence_curve(&tagged, cfg.k).ok(),
        histogram,
        n_cross_polarity_raw: count_raw_cross_duplicates(seq),
        n_discarded_voxelization: conv_stats.n_discarded_same_polarity,
    }
}

/// Events whose (x, y, t_raw) also occurs with the opposite polarity.
pub fn count_raw_cross_duplicates(seq: &EventSequence) -> u64 {
    let mut pos_keys = HashSet::new();
    let mut neg_keys = HashSet::new();
    for e in &seq.events {
        let key = (e.x, e.y, e.t_raw);
        match e.p {
            Polarity::Pos => pos_keys.insert(key),
            Polarity::Neg => neg_keys.insert(key),
        };
    }
    seq.events
        .iter()
        .filter(|e| {
            let key = (e.x, e.y, e.t_raw);
            match e.p {
                Polarity::Pos => neg_keys.contains(&key),
                Polarity::Neg => pos_keys.contains(&key),
            }
        })
        .count() as u64
}

/// Population statistics of one metric over the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std_dev: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl MetricSummary {
    /// Population mean/std/min/max; `None` for an empty iterator.
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Option<MetricSummary> {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(MetricSummary {
            mean,
            std_dev: var.sqrt(),
            min,
            max,
            count: values.len(),
        })
    }
}

/// Dataset-level aggregates over per-sequence stats.
#[derive(Clone, Debug, Serialize)]
pub struct DatasetSummary {
    pub n_sequences: usize,
    pub total_events: MetricSummary,
    pub pos_events: MetricSummary,
    pub neg_events: MetricSummary,
    pub neg_pos_ratio: Option<MetricSummary>,
    pub sparsity_global: Option<MetricSummary>,
    pub sparsity_pos: Option<MetricSummary>,
    pub sparsity_neg: Option<MetricSummary>,
    /// Per-threshold coherence summaries (index n-1).
    pub coherence: Vec<Option<MetricSummary>>,
    pub grand_total_pos: u64,
    pub grand_total_neg: u64,
    pub pos_share_pct: f64,
    pub neg_share_pct: f64,
    /// 100 * (raw cross-polarity duplicate events) / (all events).
    pub cross_polarity_raw_pct: f64,
    pub histogram_combined: Vec<u64>,
    pub histogram_pos: Vec<u64>,
    pub histogram_neg: Vec<u64>,
}

/// Aggregate per-sequence stats into dataset-level summaries.
pub fn dataset_summary(stats: &[SequenceStats]) -> Result<DatasetSummary> {
    if stats.is_empty() {
        return Err(Error::EmptyInput);
    }
    let summary_of = |f: &dyn Fn(&SequenceStats) -> Option<f64>| {
        MetricSummary::from_values(stats.iter().filter_map(f))
    };

    let grand_total_pos: u64 = stats.iter().map(|s| s.n_pos).sum();
    let grand_total_neg: u64 = stats.iter().map(|s| s.n_neg).sum();
    let grand_total = grand_total_pos + grand_total_neg;
    let dup_raw: u64 = stats.iter().map(|s| s.n_cross_polarity_raw).sum();

    let k = stats
        .iter()
        .filter_map(|s| s.coherence.as_ref().map(Vec::len))
        .max()
        .unwrap_or(0);
    let coherence = (0..k)
        .map(|i| {
            MetricSummary::from_values(
                stats
                    .iter()
                    .filter_map(|s| s.coherence.as_ref().and_then(|c| c.get(i).copied())),
            )
        })
        .collect();

    let n_bins = stats[0].histogram.n_bins;
    let mut histogram_combined = vec![0u64; n_bins];
    let mut histogram_pos = vec![0u64; n_bins];
    let mut histogram_neg = vec![0u64; n_bins];
    for s in stats {
        for b in 0..n_bins.min(s.histogram.n_bins) {
            histogram_combined[b] += s.histogram.combined[b];
            histogram_pos[b] += s.histogram.pos[b];
            histogram_neg[b] += s.histogram.neg[b];
        }
    }

    let share = |part: u64| {
        if grand_total == 0 {
            0.0
        } else {
            100.0 * part as f64 / grand_total as f64
        }
    };

    Ok(DatasetSummary {
        n_sequences: stats.len(),
        total_events: summary_of(&|s| Some(s.n_total as f64)).expect("non-empty"),
        pos_events: summary_of(&|s| Some(s.n_pos as f64)).expect("non-empty"),
        neg_events: summary_of(&|s| Some(s.n_neg as f64)).expect("non-empty"),
        neg_pos_ratio: summary_of(&|s| s.neg_pos_ratio),
        sparsity_global: summary_of(&|s| s.sparsity_global),
        sparsity_pos: summary_of(&|s| s.sparsity_pos),
        sparsity_neg: summary_of(&|s| s.sparsity_neg),
        coherence,
        grand_total_pos,
        grand_total_neg,
        pos_share_pct: share(grand_total_pos),
        neg_share_pct: share(grand_total_neg),
        cross_polarity_raw_pct: share(dup_raw),
        histogram_combined,
        histogram_pos,
        histogram_neg,
    })
}
