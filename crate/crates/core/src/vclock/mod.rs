//! Virtual time, imperfect node clocks and NTP-style synchronization.

mod clock;
mod deviation;
mod ntp;
mod scheduler;

pub use clock::{ClockBank, ClockError, ClockState, CorrectionProgram, NodeClock, MAX_DRIFT_PPM};
pub use deviation::{deviation_cdf, pairwise_deviations, DeviationError, DeviationSummary, EdgeEvent};
pub use ntp::{ntp_exchange, Discipline, DisciplineConfig, DisciplineUpdate, SyncSample};
pub use scheduler::{Order, Scheduler};
