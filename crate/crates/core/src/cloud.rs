//! Integer-voxel point clouds, one per polarity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event::Polarity;

/// One occupied voxel. `Ord` is lexicographic (x, y, z), which is the
/// tie-breaking order used everywhere a neighbor ordering leaks into results.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Voxel {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

impl Voxel {
    pub const fn new(x: i64, y: i64, z: i64) -> Voxel {
        Voxel { x, y, z }
    }

    /// Exact squared Euclidean distance in integer arithmetic.
    pub fn dist_sq(self, other: Voxel) -> u64 {
        let dx = (self.x - other.x).unsigned_abs();
        let dy = (self.y - other.y).unsigned_abs();
        let dz = (self.z - other.z).unsigned_abs();
        dx * dx + dy * dy + dz * dz
    }

    /// Chebyshev (max-axis) distance.
    pub fn chebyshev(self, other: Voxel) -> u64 {
        let dx = (self.x - other.x).unsigned_abs();
        let dy = (self.y - other.y).unsigned_abs();
        let dz = (self.z - other.z).unsigned_abs();
        dx.max(dy).max(dz)
    }

    pub fn as_f64(self) -> [f64; 3] {
        [self.x as f64, self.y as f64, self.z as f64]
    }
}

/// The set of voxels occupied by events of a single polarity, optionally
/// annotated with a per-point occupancy score in [0, 1].
///
/// Points are kept sorted lexicographically with no duplicates, so two
/// clouds compare equal exactly when they hold the same point set.
#[derive(Clone, Debug, PartialEq)]
pub struct EventPointCloud {
    polarity: Polarity,
    points: Vec<Voxel>,
    scores: Option<Vec<f64>>,
}

impl EventPointCloud {
    pub fn new(polarity: Polarity) -> EventPointCloud {
        EventPointCloud {
            polarity,
            points: Vec::new(),
            scores: None,
        }
    }

    /// Build a cloud from arbitrary points, sorting and removing duplicates.
    /// Returns the cloud and the number of duplicate points dropped.
    pub fn from_points_dedup(polarity: Polarity, mut points: Vec<Voxel>) -> (EventPointCloud, u64) {
        let before = points.len();
        points.sort_unstable();
        points.dedup();
        let dropped = (before - points.len()) as u64;
        (
            EventPointCloud {
                polarity,
                points,
                scores: None,
            },
            dropped,
        )
    }

    /// Build a cloud from arbitrary points, sorting and removing duplicates.
    pub fn from_points(polarity: Polarity, points: Vec<Voxel>) -> EventPointCloud {
        EventPointCloud::from_points_dedup(polarity, points).0
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn points(&self) -> &[Voxel] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, v: Voxel) -> bool {
        self.points.binary_search(&v).is_ok()
    }

    /// Attach occupancy scores, one per point in point order.
    pub fn set_scores(&mut self, scores: Vec<f64>) -> Result<()> {
        if scores.len() != self.points.len() {
            return Err(Error::TensorMismatch(format!(
                "{} scores for {} points",
                scores.len(),
                self.points.len()
            )));
        }
        self.scores = Some(scores);
        Ok(())
    }

    pub fn scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    pub fn has_scores(&self) -> bool {
        self.scores.is_some()
    }

    /// Score of one point, if scores are attached and the point is present.
    pub fn score_of(&self, v: Voxel) -> Option<f64> {
        let scores = self.scores.as_ref()?;
        let i = self.points.binary_search(&v).ok()?;
        Some(scores[i])
    }

    /// Points present in both clouds (sorted); these are the
    /// different-polarity duplicates after merging.
    pub fn intersection(&self, other: &EventPointCloud) -> Vec<Voxel> {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.points.len() && j < other.points.len() {
            match self.points[i].cmp(&other.points[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    out.push(self.points[i]);
                    i += 1;
                    j += 1;
                }
            }
        }
        out
    }

    /// Per-axis minima and maxima, or `None` for an empty cloud.
    pub fn bounds(&self) -> Option<([i64; 3], [i64; 3])> {
        if self.points.is_empty() {
            return None;
        }
        let mut min = [i64::MAX; 3];
        let mut max = [i64::MIN; 3];
        for p in &self.points {
            for (axis, c) in [p.x, p.y, p.z].into_iter().enumerate() {
                min[axis] = min[axis].min(c);
                max[axis] = max[axis].max(c);
            }
        }
        Some((min, max))
    }
}
