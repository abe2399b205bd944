//! Event-data geometry quality metrics: PSNR E2E and PSNR E2D.
//!
//! Both metrics compare sequences in a common metric space — real
//! coordinates (x, y, t_seconds * 256) without rounding — so results are
//! comparable across coding TSF values. Nearest neighbors are always
//! polarity-constrained, and both metrics are symmetric: the PSNR uses the
//! maximum of the two directional mean errors.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::event::{EventSequence, Polarity};
use crate::knn::NeighborIndex;

/// Default neighborhood for the point-to-distribution metric.
pub const E2D_NEIGHBORS: usize = 31;

/// Common space for PSNR computations.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricSpace {
    /// Timestamp scaling of the common space (always 256).
    pub tsf: f64,
    /// Peak value for the PSNR numerator.
    pub peak: f64,
}

impl MetricSpace {
    pub const REFERENCE_TSF: f64 = 256.0;

    pub fn new(peak: f64) -> Result<MetricSpace> {
        if !(peak.is_finite() && peak > 0.0) {
            return Err(Error::InvalidPeak(peak));
        }
        Ok(MetricSpace {
            tsf: Self::REFERENCE_TSF,
            peak,
        })
    }

    /// Space whose peak is the maximum per-axis extent of the reference
    /// sequence in metric coordinates.
    pub fn from_reference(reference: &EventSequence) -> Result<MetricSpace> {
        let points = to_metric_space(reference);
        let all = points.pos.iter().chain(points.neg.iter());
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in all {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        let extent = (0..3).map(|a| max[a] - min[a]).fold(0.0, f64::max);
        MetricSpace::new(extent)
    }
}

/// Per-polarity real-coordinate point sets in metric space.
#[derive(Clone, Debug, Default)]
pub struct PolarityPoints {
    pub pos: Vec<[f64; 3]>,
    pub neg: Vec<[f64; 3]>,
}

/// Map a sequence into metric space: (x, y, t_seconds * 256), no rounding.
pub fn to_metric_space(seq: &EventSequence) -> PolarityPoints {
    let mut out = PolarityPoints::default();
    for e in &seq.events {
        let z = f64::from(e.t_raw) / seq.units_per_second * MetricSpace::REFERENCE_TSF;
        let p = [f64::from(e.x), f64::from(e.y), z];
        match e.p {
            Polarity::Pos => out.pos.push(p),
            Polarity::Neg => out.neg.push(p),
        }
    }
    out
}

struct PolarityIndexes {
    pos: Option<NeighborIndex>,
    neg: Option<NeighborIndex>,
}

impl PolarityIndexes {
    fn build(points: &PolarityPoints) -> PolarityIndexes {
        let build = |pts: &Vec<[f64; 3]>| {
            if pts.is_empty() {
                None
            } else {
                Some(NeighborIndex::build(pts.clone()))
            }
        };
        PolarityIndexes {
            pos: build(&points.pos),
            neg: build(&points.neg),
        }
    }

    fn for_polarity(&self, p: Polarity) -> Option<&NeighborIndex> {
        match p {
            Polarity::Pos => self.pos.as_ref(),
            Polarity::Neg => self.neg.as_ref(),
        }
    }
}

fn check_polarity_coverage(from: &PolarityPoints, to: &PolarityIndexes) -> Result<()> {
    for (p, pts) in [(Polarity::Pos, &from.pos), (Polarity::Neg, &from.neg)] {
        if !pts.is_empty() && to.for_polarity(p).is_none() {
            return Err(Error::UndefinedMetric(format!(
                "{p} events present on one side only"
            )));
        }
    }
    Ok(())
}

/// Directional mean squared nearest-neighbor distance, pooled over all
/// points of `from` with polarity-constrained matching into `to`.
fn directional_mse_e2e(from: &PolarityPoints, to: &PolarityIndexes) -> Result<f64> {
    check_polarity_coverage(from, to)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, pts) in [(Polarity::Pos, &from.pos), (Polarity::Neg, &from.neg)] {
        let Some(index) = to.for_polarity(p) else {
            continue;
        };
        for &q in pts {
            sum += index.knn(q, 1)?[0].dist_sq;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("no points to match".into()));
    }
    Ok(sum / count as f64)
}

fn psnr_from_mse(space: &MetricSpace, mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (space.peak * space.peak / mse).log10()
    }
}

/// Symmetric point-to-point PSNR between two sequences.
pub fn psnr_e2e(
    reference: &EventSequence,
    decoded: &EventSequence,
    space: &MetricSpace,
) -> Result<f64> {
    let ref_points = to_metric_space(reference);
    let dec_points = to_metric_space(decoded);
    let ref_index = PolarityIndexes::build(&ref_points);
    let dec_index = PolarityIndexes::build(&dec_points);
    let forward = directional_mse_e2e(&ref_points, &dec_index)?;
    let backward = directional_mse_e2e(&dec_points, &ref_index)?;
    Ok(psnr_from_mse(space, forward.max(backward)))
}

/// Directional mean squared Mahalanobis distance to the distribution of
/// the k nearest same-polarity points.
fn directional_mse_e2d(from: &PolarityPoints, to: &PolarityIndexes, k: usize) -> Result<f64> {
    check_polarity_coverage(from, to)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, pts) in [(Polarity::Pos, &from.pos), (Polarity::Neg, &from.neg)] {
        if pts.is_empty() {
            continue;
        }
        let index = to.for_polarity(p).expect("coverage checked");
        if index.len() < k {
            return Err(Error::TooFewPoints {
                needed: k,
                got: index.len(),
            });
        }
        for &q in pts {
            let neighbors = index.knn(q, k)?;
            sum += mahalanobis_sq(q, neighbors.iter().map(|n| n.point))?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedMetric("no points to match".into()));
    }
    Ok(sum / count as f64)
}

/// Squared Mahalanobis distance from `q` to the neighbor distribution,
/// with trace-scaled covariance regularization.
pub fn mahalanobis_sq(q: [f64; 3], neighbors: impl Iterator<Item = [f64; 3]>) -> Result<f64> {
    let pts: Vec<[f64; 3]> = neighbors.collect();
    let n = pts.len() as f64;
    let mut mean = [0.0f64; 3];
    for p in &pts {
        for a in 0..3 {
            mean[a] += p[a];
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    // population covariance
    let mut cov = [[0.0f64; 3]; 3];
    for p in &pts {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] += d[i] * d[j];
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= n;
        }
    }
    let trace = cov[0][0] + cov[1][1] + cov[2][2];
    let eps = if trace == 0.0 {
        1e-9
    } else {
        1e-6 * trace / 3.0
    };
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] += eps;
    }

    let r = [q[0] - mean[0], q[1] - mean[1], q[2] - mean[2]];
    quadratic_form_spd3(cov, r)
        .ok_or_else(|| Error::UndefinedMetric("covariance solve failed".into()))
}

/// r' M^-1 r for symmetric positive-definite M via Cholesky: with M = LL',
/// the form equals |L^-1 r|^2.
#[allow(clippy::needless_range_loop)]
fn quadratic_form_spd3(m: [[f64; 3]; 3], r: [f64; 3]) -> Option<f64> {
    let mut l = [[0.0f64; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let mut s = m[i][j];
            for t in 0..j {
                s -= l[i][t] * l[j][t];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0f64; 3];
    for i in 0..3 {
        let mut s = r[i];
        for t in 0..i {
            s -= l[i][t] * y[t];
        }
        y[i] = s / l[i][i];
    }
    Some(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
}

/// Symmetric point-to-distribution PSNR using the Mahalanobis distance to
/// the k nearest same-polarity neighbors (default 31).
pub fn psnr_e2d(
    reference: &EventSequence,
    decoded: &EventSequence,
    space: &MetricSpace,
    k: usize,
) -> Result<f64> {
    assert!(k >= 1, "E2D needs k >= 1");
    let ref_points = to_metric_space(reference);
    let dec_points = to_metric_space(decoded);
    let ref_index = PolarityIndexes::build(&ref_points);
    let dec_index = PolarityIndexes::build(&dec_points);
    let forward = directional_mse_e2d(&ref_points, &dec_index, k)?;
    let backward = directional_mse_e2d(&dec_points, &ref_index, k)?;
    Ok(psnr_from_mse(space, forward.max(backward)))
}
