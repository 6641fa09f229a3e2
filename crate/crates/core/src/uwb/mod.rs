//! DS-TWR ranging between tag and anchor behaviors over a modeled UWB
//! channel.

mod channel;
mod ranging;
mod twr;

pub use channel::{ChannelError, ChannelParams, NlosZone};
pub use ranging::{
    format_rng_line, parse_rng_line, BurstPlan, ChannelUsage, RadioNode, RangeMeasurement, RangeStatus, RngLine, UwbChannel,
    FRAMES_PER_EXCHANGE,
};
pub use twr::{dstwr_tof, m_to_tof, tof_to_m, TwrError, TwrTimestamps, DEFAULT_REPLY_NS};
