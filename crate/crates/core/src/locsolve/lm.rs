use alloc::vec::Vec;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use super::problem::{LocError, LocalizationProblem, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub step_tol: f64,
    pub grad_tol: f64,
    pub max_iter: u32,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self { lambda0: 1e-3, lambda_up: 10.0, lambda_down: 10.0, step_tol: 1e-10, grad_tol: 1e-12, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionEstimate {
    pub p_hat: Point,
    /// `‖r‖₂` at `p_hat`.
    pub residual_norm: f64,
    pub iterations: u32,
    pub converged: bool,
    pub grad_norm: f64,
    /// Objective at the start, then after every accepted step (tracked by
    /// exact differences).
    pub trace: Vec<f64>,
}

fn normal_equations(prob: &LocalizationProblem, p: &Point) -> Result<(Matrix3<f64>, Point, f64), LocError> {
    let r = prob.residuals(p)?;
    let j = prob.jacobian(p)?;
    let mut h = Matrix3::zeros();
    let mut g = Point::zeros();
    for (row, ri) in j.iter().zip(&r) {
        h += row * row.transpose();
        g += row * *ri;
    }
    Ok((h, g, r.iter().map(|x| x * x).sum()))
}

/// `f(p) − f(q)` evaluated term by term without cancellation, so steps far
/// below the rounding level of `f` itself are still judged correctly.
fn reduction(prob: &LocalizationProblem, p: &Point, q: &Point) -> f64 {
    let delta = q - p;
    prob.anchors()
        .iter()
        .zip(prob.distances())
        .map(|(a, d)| {
            let (np, nq) = ((a - p).norm(), (a - q).norm());
            // ‖a−p‖² − ‖a−q‖² = (q−p)·(2a−p−q)
            let dn = delta.dot(&(2.0 * a - p - q)) / (np + nq);
            dn * ((np - d) + (nq - d))
        })
        .sum()
}

/// Levenberg-Marquardt on `Σ (‖a_i − p‖ − d_i)²` from `p0`.
///
/// Damping is `λ·I`, which keeps the iteration independent of the
/// coordinate frame (Jacobian rows are unit vectors, so no scaling is needed). A step that lands on an anchor
/// counts as rejected. If the iteration budget runs out the best iterate
/// is returned with `converged = false`.
pub fn solve_lm(prob: &LocalizationProblem, p0: Point, cfg: &LmConfig) -> Result<PositionEstimate, LocError> {
    let mut p = p0;
    let (mut h, mut g, mut cost) = normal_equations(prob, &p)?;
    let mut lambda = cfg.lambda0;
    let mut trace = Vec::from([cost]);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        if g.norm() < cfg.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut damped = h;
        for k in 0..3 {
            damped[(k, k)] += lambda;
        }
        let Some(step) = damped.cholesky().map(|c| c.solve(&-g)) else {
            lambda *= cfg.lambda_up;
            continue;
        };
        let candidate = p + step;
        match normal_equations(prob, &candidate) {
            Ok((h2, g2, _)) if reduction(prob, &p, &candidate) >= 0.0 => {
                cost -= reduction(prob, &p, &candidate);
                p = candidate;
                (h, g) = (h2, g2);
                lambda /= cfg.lambda_down;
                trace.push(cost);
            }
            _ => lambda *= cfg.lambda_up,
        }
        if step.norm() < cfg.step_tol {
            converged = true;
            break;
        }
    }
    let residual_norm = libm::sqrt(prob.objective(&p)?);
    Ok(PositionEstimate { p_hat: p, residual_norm, iterations, converged, grad_norm: g.norm(), trace })
}

/// Solve from the default start. With coplanar anchors a solution above
/// their plane is the mirror image of the intended one, so it is re-solved
/// from the reflected point and the lower result kept.
pub fn solve(prob: &LocalizationProblem, cfg: &LmConfig) -> Result<PositionEstimate, LocError> {
    let est = solve_lm(prob, prob.initial_guess(), cfg)?;
    let Some((c, n)) = prob.anchor_plane() else { return Ok(est) };
    let height = (est.p_hat - c).dot(&n);
    if height <= 0.0 {
        return Ok(est);
    }
    let reflected = est.p_hat - n * (2.0 * height);
    let again = solve_lm(prob, reflected, cfg)?;
    Ok(if (again.p_hat - c).dot(&n) <= 0.0 { again } else { est })
}
