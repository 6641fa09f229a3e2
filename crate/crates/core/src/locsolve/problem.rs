use alloc::vec::Vec;

use nalgebra::Vector3;

pub type Point = Vector3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum LocError {
    #[error("need at least 3 anchors, got {0}")]
    TooFewAnchors(usize),
    #[error("{anchors} anchors but {distances} distances")]
    LengthMismatch { anchors: usize, distances: usize },
    #[error("negative distance")]
    NegativeDistance,
    #[error("point coincides with anchor {0}")]
    SingularPoint(usize),
    #[error("no estimates")]
    Empty,
}

/// Anchors `a_i` and measured distances `d_i` for one multilateration.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationProblem {
    anchors: Vec<Point>,
    distances: Vec<f64>,
}

impl LocalizationProblem {
    pub fn new(anchors: Vec<Point>, distances: Vec<f64>) -> Result<Self, LocError> {
        if anchors.len() != distances.len() {
            return Err(LocError::LengthMismatch { anchors: anchors.len(), distances: distances.len() });
        }
        if anchors.len() < 3 {
            return Err(LocError::TooFewAnchors(anchors.len()));
        }
        if distances.iter().any(|d| !(*d >= 0.0)) {
            return Err(LocError::NegativeDistance);
        }
        Ok(Self { anchors, distances })
    }

    pub fn anchors(&self) -> &[Point] {
        &self.anchors
    }

    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    fn check(&self, p: &Point) -> Result<(), LocError> {
        match self.anchors.iter().position(|a| (a - p).norm() == 0.0) {
            Some(i) => Err(LocError::SingularPoint(i)),
            None => Ok(()),
        }
    }

    /// `r_i = ‖a_i − p‖ − d_i`
    pub fn residuals(&self, p: &Point) -> Result<Vec<f64>, LocError> {
        self.check(p)?;
        Ok(self.anchors.iter().zip(&self.distances).map(|(a, d)| (a - p).norm() - d).collect())
    }

    /// Rows `(p − a_i)ᵀ / ‖p − a_i‖`.
    pub fn jacobian(&self, p: &Point) -> Result<Vec<Point>, LocError> {
        self.check(p)?;
        Ok(self.anchors.iter().map(|a| (p - a) / (p - a).norm()).collect())
    }

    /// `Σ r_i²`
    pub fn objective(&self, p: &Point) -> Result<f64, LocError> {
        Ok(self.residuals(p)?.iter().map(|r| r * r).sum())
    }

    /// Anchor centroid, 1 m below.
    pub fn initial_guess(&self) -> Point {
        let c = self.anchors.iter().sum::<Point>() / self.anchors.len() as f64;
        c - Point::new(0.0, 0.0, 1.0)
    }

    /// Centroid and upward unit normal when all anchors lie in one
    /// non-vertical plane.
    pub fn anchor_plane(&self) -> Option<(Point, Point)> {
        let c = self.anchors.iter().sum::<Point>() / self.anchors.len() as f64;
        let mut cov = nalgebra::Matrix3::zeros();
        for a in &self.anchors {
            let d = a - c;
            cov += d * d.transpose();
        }
        let eig = cov.symmetric_eigen();
        let (imin, &lmin) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
        let scale = eig.eigenvalues.max().max(1e-300);
        let mut n: Point = eig.eigenvectors.column(imin).into();
        if lmin > 1e-18 * scale || libm::fabs(n.z) < 1e-6 {
            return None;
        }
        if n.z < 0.0 {
            n = -n;
        }
        Some((c, n.normalize()))
    }
}
