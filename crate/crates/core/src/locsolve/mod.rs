//! Multilateration by Levenberg-Marquardt and the position error metrics.

mod lm;
mod metrics;
mod problem;

pub use lm::{solve, solve_lm, LmConfig, PositionEstimate};
pub use metrics::{cep95, componentwise_median, median_offset, rmse, rmse_3d, MetricsReport};
pub use problem::{LocError, LocalizationProblem, Point};
