use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::problem::{LocError, Point};
use crate::stats;

fn horizontal(a: &Point, b: &Point) -> f64 {
    libm::hypot(a.x - b.x, a.y - b.y)
}

/// Horizontal-plane RMSE between paired estimates and truths.
pub fn rmse(estimates: &[Point], truths: &[Point]) -> Result<f64, LocError> {
    paired(estimates, truths, horizontal)
}

pub fn rmse_3d(estimates: &[Point], truths: &[Point]) -> Result<f64, LocError> {
    paired(estimates, truths, |a, b| (a - b).norm())
}

fn paired(estimates: &[Point], truths: &[Point], dist: impl Fn(&Point, &Point) -> f64) -> Result<f64, LocError> {
    if estimates.len() != truths.len() {
        return Err(LocError::LengthMismatch { anchors: estimates.len(), distances: truths.len() });
    }
    let d: Vec<f64> = estimates.iter().zip(truths).map(|(e, t)| dist(e, t)).collect();
    stats::rms(&d).ok_or(LocError::Empty)
}

/// Radius around `truth` holding 95% of the estimates (nearest rank,
/// horizontal plane).
pub fn cep95(estimates: &[Point], truth: &Point) -> Result<f64, LocError> {
    let d: Vec<f64> = estimates.iter().map(|e| horizontal(e, truth)).collect();
    stats::nearest_rank(&stats::sorted(&d), 95).ok_or(LocError::Empty)
}

/// Horizontal distance from `truth` to the componentwise median estimate.
pub fn median_offset(estimates: &[Point], truth: &Point) -> Result<f64, LocError> {
    let m = componentwise_median(estimates)?;
    Ok(horizontal(&m, truth))
}

pub fn componentwise_median(estimates: &[Point]) -> Result<Point, LocError> {
    let axis = |k: usize| {
        let v: Vec<f64> = estimates.iter().map(|e| e[k]).collect();
        stats::median(&stats::sorted(&v)).ok_or(LocError::Empty)
    };
    Ok(Point::new(axis(0)?, axis(1)?, axis(2)?))
}

/// Per-point metrics as they appear in campaign reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rmse: f64,
    pub rmse_3d: f64,
    pub cep95: f64,
    pub median_offset: f64,
}

impl MetricsReport {
    pub fn for_point(estimates: &[Point], truth: &Point) -> Result<Self, LocError> {
        let truths: Vec<Point> = estimates.iter().map(|_| *truth).collect();
        Ok(Self {
            rmse: rmse(estimates, &truths)?,
            rmse_3d: rmse_3d(estimates, &truths)?,
            cep95: cep95(estimates, truth)?,
            median_offset: median_offset(estimates, truth)?,
        })
    }
}
