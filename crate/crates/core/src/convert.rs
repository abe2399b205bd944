//! Event sequence to point-cloud conversion and back.
//!
//! Events map to voxels via z = round(t_seconds * TSF) with (x, y)
//! unchanged; rounding is half-away-from-zero everywhere so golden files
//! are stable across platforms. The reverse direction merges the two
//! polarity clouds, resolves different-polarity duplicates to a single
//! polarity, and rescales z back to raw timestamp units.

use serde::{Deserialize, Serialize};

use crate::cloud::{EventPointCloud, Voxel};
use crate::error::{Error, Result};
use crate::event::{Event, EventSequence, Polarity, T_RAW_MAX};

/// How a voxel present in both polarity clouds gets its single polarity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DuplicateMethod {
    /// Vote by the nearest non-duplicate points, widening through
    /// equal-distance groups until a strict majority appears.
    #[default]
    #[serde(alias = "nearest-neighbor")]
    Nn,
    /// Pick the polarity whose cloud reports the higher occupancy score;
    /// exact ties fall back to the nearest-neighbor rule.
    Prob,
}

impl std::fmt::Display for DuplicateMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DuplicateMethod::Nn => write!(f, "nn"),
            DuplicateMethod::Prob => write!(f, "prob"),
        }
    }
}

/// Conversion parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConversionConfig {
    /// Temporal Scaling Factor applied to timestamps in seconds.
    pub tsf: u32,
    #[serde(default)]
    pub duplicate_method: DuplicateMethod,
}

impl ConversionConfig {
    pub fn new(tsf: u32) -> ConversionConfig {
        assert!(tsf >= 1, "TSF must be at least 1");
        ConversionConfig {
            tsf,
            duplicate_method: DuplicateMethod::Nn,
        }
    }

    pub fn with_method(mut self, method: DuplicateMethod) -> ConversionConfig {
        self.duplicate_method = method;
        self
    }
}

impl Default for ConversionConfig {
    fn default() -> Self {
        ConversionConfig::new(256)
    }
}

/// Bookkeeping emitted by [`event_to_pc`].
///
/// `n_output_points_pos + n_output_points_neg` always equals
/// `n_input_events - n_discarded_same_polarity`: a voxel occupied by both
/// polarities keeps one point in each cloud.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversionStats {
    pub n_input_events: u64,
    pub n_discarded_same_polarity: u64,
    pub n_cross_polarity_duplicates: u64,
    pub n_output_points_pos: u64,
    pub n_output_points_neg: u64,
}

impl ConversionStats {
    pub fn discarded_pct(&self) -> f64 {
        if self.n_input_events == 0 {
            0.0
        } else {
            100.0 * self.n_discarded_same_polarity as f64 / self.n_input_events as f64
        }
    }
}

/// Round half away from zero, the fixed voxelization rounding rule.
#[inline]
pub fn round_half_away(v: f64) -> f64 {
    v.round()
}

/// Scale and voxelize a sequence into one cloud per polarity.
pub fn event_to_pc(
    seq: &EventSequence,
    cfg: &ConversionConfig,
) -> (EventPointCloud, EventPointCloud, ConversionStats) {
    let tsf = f64::from(cfg.tsf);
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for e in &seq.events {
        let t_seconds = f64::from(e.t_raw) / seq.units_per_second;
        let z = round_half_away(t_seconds * tsf) as i64;
        let v = Voxel::new(i64::from(e.x), i64::from(e.y), z);
        match e.p {
            Polarity::Pos => pos.push(v),
            Polarity::Neg => neg.push(v),
        }
    }
    let (pos, dropped_pos) = EventPointCloud::from_points_dedup(Polarity::Pos, pos);
    let (neg, dropped_neg) = EventPointCloud::from_points_dedup(Polarity::Neg, neg);
    let stats = ConversionStats {
        n_input_events: seq.len() as u64,
        n_discarded_same_polarity: dropped_pos + dropped_neg,
        n_cross_polarity_duplicates: pos.intersection(&neg).len() as u64,
        n_output_points_pos: pos.len() as u64,
        n_output_points_neg: neg.len() as u64,
    };
    (pos, neg, stats)
}

/// Merge two polarity clouds back into an event sequence.
///
/// Every voxel present in both clouds is resolved to exactly one polarity
/// with the configured method, then z is rescaled to raw timestamp units.
/// Output events are sorted by (t_raw, x, y).
pub fn pc_to_event(
    pos: &EventPointCloud,
    neg: &EventPointCloud,
    cfg: &ConversionConfig,
    units_per_second: f64,
) -> Result<EventSequence> {
    let duplicates = pos.intersection(neg);
    let candidates = non_duplicate_points(pos, neg, &duplicates);

    let assignments = if duplicates.is_empty() {
        Vec::new()
    } else {
        match cfg.duplicate_method {
            DuplicateMethod::Nn => resolve_duplicates_nn(&candidates, &duplicates)?,
            DuplicateMethod::Prob => resolve_duplicates_prob(pos, neg, &duplicates, &candidates)?,
        }
    };

    let mut events = Vec::with_capacity(candidates.len() + duplicates.len());
    for &(v, p) in &candidates {
        events.push(voxel_to_event(v, p, cfg, units_per_second)?);
    }
    for (&v, &p) in duplicates.iter().zip(&assignments) {
        events.push(voxel_to_event(v, p, cfg, units_per_second)?);
    }
    events.sort_by_key(|e| (e.t_raw, e.x, e.y));
    Ok(EventSequence::new(events, units_per_second))
}

/// Merged points that are not different-polarity duplicates, with their
/// polarity tags; this is the NN voting candidate set.
pub fn non_duplicate_points(
    pos: &EventPointCloud,
    neg: &EventPointCloud,
    duplicates: &[Voxel],
) -> Vec<(Voxel, Polarity)> {
    let mut out = Vec::with_capacity(pos.len() + neg.len());
    for cloud in [pos, neg] {
        for &v in cloud.points() {
            if duplicates.binary_search(&v).is_err() {
                out.push((v, cloud.polarity()));
            }
        }
    }
    out
}

fn voxel_to_event(
    v: Voxel,
    p: Polarity,
    cfg: &ConversionConfig,
    units_per_second: f64,
) -> Result<Event> {
    let overflow = |field: &'static str, value: i64, bits: u32| Error::FieldOverflow {
        field,
        value: value.max(0) as u64,
        bits,
    };
    if !(0..=255).contains(&v.x) {
        return Err(overflow("x", v.x, 8));
    }
    if !(0..=255).contains(&v.y) {
        return Err(overflow("y", v.y, 8));
    }
    let t_seconds = v.z as f64 / f64::from(cfg.tsf);
    let t_raw = round_half_away(t_seconds * units_per_second);
    if !(0.0..=f64::from(T_RAW_MAX)).contains(&t_raw) {
        return Err(overflow("t_raw", t_raw as i64, 23));
    }
    Ok(Event {
        x: v.x as u8,
        y: v.y as u8,
        t_raw: t_raw as u32,
        p,
    })
}

/// Assign a polarity to each duplicate voxel by nearest-neighbor majority.
///
/// Candidates are walked in order of (squared distance, lexicographic
/// point); each whole equal-distance group is tallied at once, and the
/// first group after which the POS/NEG counts differ decides. If every
/// candidate is consumed with the counts still tied, POS is assigned.
pub fn resolve_duplicates_nn(
    candidates: &[(Voxel, Polarity)],
    duplicates: &[Voxel],
) -> Result<Vec<Polarity>> {
    if duplicates.is_empty() {
        return Ok(Vec::new());
    }
    if candidates.is_empty() {
        return Err(Error::NoResolutionCandidates);
    }
    let mut out = Vec::with_capacity(duplicates.len());
    let mut ordered: Vec<(u64, Voxel, Polarity)> = Vec::with_capacity(candidates.len());
    for &dup in duplicates {
        ordered.clear();
        ordered.extend(candidates.iter().map(|&(v, p)| (dup.dist_sq(v), v, p)));
        ordered.sort_unstable_by_key(|&(d, v, _)| (d, v));

        let mut n_pos = 0u64;
        let mut n_neg = 0u64;
        let mut decided = None;
        let mut i = 0;
        while i < ordered.len() {
            let group_dist = ordered[i].0;
            while i < ordered.len() && ordered[i].0 == group_dist {
                match ordered[i].2 {
                    Polarity::Pos => n_pos += 1,
                    Polarity::Neg => n_neg += 1,
                }
                i += 1;
            }
            if n_pos != n_neg {
                decided = Some(if n_pos > n_neg {
                    Polarity::Pos
                } else {
                    Polarity::Neg
                });
                break;
            }
        }
        // All candidates exhausted with a tied vote: POS by convention.
        out.push(decided.unwrap_or(Polarity::Pos));
    }
    Ok(out)
}

/// Assign a polarity to each duplicate voxel by occupancy-score argmax,
/// falling back to the nearest-neighbor rule on exact score ties.
pub fn resolve_duplicates_prob(
    pos: &EventPointCloud,
    neg: &EventPointCloud,
    duplicates: &[Voxel],
    nn_candidates: &[(Voxel, Polarity)],
) -> Result<Vec<Polarity>> {
    if duplicates.is_empty() {
        return Ok(Vec::new());
    }
    for cloud in [pos, neg] {
        if !cloud.has_scores() {
            return Err(Error::MissingScores {
                polarity: cloud.polarity(),
            });
        }
    }
    let mut out = Vec::with_capacity(duplicates.len());
    for &dup in duplicates {
        let score_pos = pos.score_of(dup).ok_or(Error::MissingScores {
            polarity: Polarity::Pos,
        })?;
        let score_neg = neg.score_of(dup).ok_or(Error::MissingScores {
            polarity: Polarity::Neg,
        })?;
        let p = if score_pos > score_neg {
            Polarity::Pos
        } else if score_pos < score_neg {
            Polarity::Neg
        } else {
            resolve_duplicates_nn(nn_candidates, &[dup])?[0]
        };
        out.push(p);
    }
    Ok(out)
}
