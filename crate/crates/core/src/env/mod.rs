//! Test-environment nodes: a differential-drive AGV with PID waypoint
//! control and odometry, and an optical reference system.

mod agv;
mod goto;
mod pid;
mod pose;
mod refsys;

pub use agv::{ActuatorNoise, AgvState, Arena, Odometry, DEFAULT_V_MAX};
pub use goto::{Goto, GotoConfig, GotoStatus};
pub use pid::{AxisGains, Cmd, GainsError, Pid, PidController, PidGains, OMEGA_MAX_DEG_S};
pub use pose::{wrap_deg, Pose2D, Pose3D};
pub use refsys::{pose_topic, RefSample, RefSys, RefSysConfig, UnknownBody, DEFAULT_STREAM_HZ};

pub const ODOM_TOPIC: &str = "/agv/odom";
pub const GOTO_ACTION: &str = "/agv/goto";
