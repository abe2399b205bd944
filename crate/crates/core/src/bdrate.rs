//! Bjontegaard delta-rate between two performance-versus-rate curves.
//!
//! Classic method: fit a cubic polynomial of log10(rate) as a function of
//! score to each curve, integrate both over the overlapping score
//! interval, and turn the average log-rate difference back into a percent.
//! A negative result means the test curve needs less rate for the same
//! score than the reference curve.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum points for a cubic fit.
pub const MIN_CURVE_POINTS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub rate: f64,
    pub score: f64,
}

/// An ordered (rate, score) curve. Rates must be finite, positive and
/// strictly increasing; scores may dip (real curves do).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateDistortionCurve {
    pub label: String,
    pub points: Vec<CurvePoint>,
}

impl RateDistortionCurve {
    pub fn new(label: impl Into<String>, points: Vec<CurvePoint>) -> Result<RateDistortionCurve> {
        let label = label.into();
        let ok = points
            .iter()
            .all(|p| p.rate.is_finite() && p.rate > 0.0 && p.score.is_finite())
            && points.windows(2).all(|w| w[0].rate < w[1].rate);
        if !ok {
            return Err(Error::BadCurveRates { label });
        }
        Ok(RateDistortionCurve { label, points })
    }

    pub fn score_range(&self) -> (f64, f64) {
        let min = self
            .points
            .iter()
            .map(|p| p.score)
            .fold(f64::INFINITY, f64::min);
        let max = self
            .points
            .iter()
            .map(|p| p.score)
            .fold(f64::NEG_INFINITY, f64::max);
        (min, max)
    }

    /// Read a `rate,score` CSV (header row required).
    pub fn from_csv<R: Read>(label: impl Into<String>, reader: R) -> Result<RateDistortionCurve> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        {
            let headers = rdr.headers().map_err(|e| Error::MalformedRow {
                line: 1,
                reason: e.to_string(),
            })?;
            if headers.len() < 2 || &headers[0] != "rate" || &headers[1] != "score" {
                return Err(Error::MalformedRow {
                    line: 1,
                    reason: format!(
                        "expected header `rate,score`, got `{}`",
                        headers.iter().collect::<Vec<_>>().join(",")
                    ),
                });
            }
        }
        let mut points = Vec::new();
        for (i, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::MalformedRow {
                line: i + 2,
                reason: e.to_string(),
            })?;
            let field = |idx: usize| -> Result<f64> {
                record
                    .get(idx)
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| Error::MalformedRow {
                        line: i + 2,
                        reason: format!("bad numeric field {}", idx + 1),
                    })
            };
            points.push(CurvePoint {
                rate: field(0)?,
                score: field(1)?,
            });
        }
        RateDistortionCurve::new(label, points)
    }

    /// Write the `rate,score` CSV form.
    pub fn to_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["rate", "score"]).map_err(csv_io)?;
        for p in &self.points {
            wtr.serialize((p.rate, p.score)).map_err(csv_io)?;
        }
        wtr.flush().map_err(|e| Error::io("<stream>", e))
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::MalformedRow {
        line: 0,
        reason: e.to_string(),
    }
}

/// A cubic fit of log10(rate) against score, in a shifted/scaled variable
/// for conditioning. Exactly interpolates 4-point curves.
struct LogRateFit {
    /// Coefficients in u = (score - center) / scale.
    coeffs: [f64; 4],
    center: f64,
    scale: f64,
}

impl LogRateFit {
    fn new(curve: &RateDistortionCurve) -> Result<LogRateFit> {
        let n = curve.points.len();
        let xs: Vec<f64> = curve.points.iter().map(|p| p.score).collect();
        let ys: Vec<f64> = curve.points.iter().map(|p| p.rate.log10()).collect();
        let center = xs.iter().sum::<f64>() / n as f64;
        let scale = xs.iter().map(|x| (x - center).abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            return Err(Error::FitFailed(format!(
                "curve `{}` has a single distinct score",
                curve.label
            )));
        }
        let us: Vec<f64> = xs.iter().map(|x| (x - center) / scale).collect();

        // Normal equations for the least-squares cubic; with four points
        // this is the unique interpolant.
        let mut ata = [[0.0f64; 4]; 4];
        let mut aty = [0.0f64; 4];
        for (u, y) in us.iter().zip(&ys) {
            let pow = [1.0, *u, u * u, u * u * u];
            for i in 0..4 {
                for j in 0..4 {
                    ata[i][j] += pow[i] * pow[j];
                }
                aty[i] += pow[i] * y;
            }
        }
        let coeffs = solve4(ata, aty).ok_or_else(|| {
            Error::FitFailed(format!(
                "curve `{}` has too few distinct scores for a cubic fit",
                curve.label
            ))
        })?;
        Ok(LogRateFit {
            coeffs,
            center,
            scale,
        })
    }

    fn evaluate(&self, score: f64) -> f64 {
        let u = (score - self.center) / self.scale;
        self.coeffs[0] + u * (self.coeffs[1] + u * (self.coeffs[2] + u * self.coeffs[3]))
    }

    /// Exact integral over [lo, hi] in score units.
    fn integrate(&self, lo: f64, hi: f64) -> f64 {
        let anti = |u: f64| {
            u * (self.coeffs[0]
                + u * (self.coeffs[1] / 2.0
                    + u * (self.coeffs[2] / 3.0 + u * self.coeffs[3] / 4.0)))
        };
        let u_lo = (lo - self.center) / self.scale;
        let u_hi = (hi - self.center) / self.scale;
        (anti(u_hi) - anti(u_lo)) * self.scale
    }
}

/// Gaussian elimination with partial pivoting on a 4x4 system.
#[allow(clippy::needless_range_loop)]
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0f64; 4];
    for row in (0..4).rev() {
        let mut s = b[row];
        for k in row + 1..4 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

/// BD-Rate of `test` against `reference`, in percent.
pub fn bd_rate(reference: &RateDistortionCurve, test: &RateDistortionCurve) -> Result<f64> {
    for curve in [reference, test] {
        if curve.points.len() < MIN_CURVE_POINTS {
            return Err(Error::InsufficientPoints {
                label: curve.label.clone(),
                needed: MIN_CURVE_POINTS,
                got: curve.points.len(),
            });
        }
    }
    let (ref_lo, ref_hi) = reference.score_range();
    let (test_lo, test_hi) = test.score_range();
    let lo = ref_lo.max(test_lo);
    let hi = ref_hi.min(test_hi);
    if hi <= lo {
        return Err(Error::NoOverlap);
    }

    let fit_ref = LogRateFit::new(reference)?;
    let fit_test = LogRateFit::new(test)?;
    let avg_diff = (fit_test.integrate(lo, hi) - fit_ref.integrate(lo, hi)) / (hi - lo);
    Ok((10f64.powf(avg_diff) - 1.0) * 100.0)
}

/// Residual of the fitted polynomial at the curve's own points; near zero
/// for 4-point curves, where the cubic interpolates exactly.
pub fn fit_residual(curve: &RateDistortionCurve) -> Result<f64> {
    let fit = LogRateFit::new(curve)?;
    Ok(curve
        .points
        .iter()
        .map(|p| (fit.evaluate(p.score) - p.rate.log10()).abs())
        .fold(0.0, f64::max))
}
