//! Time units shared across the simulation. All instants are signed
//! nanoseconds on the scheduler timeline (true time) or on a node clock.

/// Nanoseconds, signed so clock readings can sit before the epoch.
pub type Nanos = i64;

pub const NS_PER_US: Nanos = 1_000;
pub const NS_PER_MS: Nanos = 1_000_000;
pub const NS_PER_S: Nanos = 1_000_000_000;

pub fn ms(v: f64) -> Nanos {
    libm::round(v * NS_PER_MS as f64) as Nanos
}

pub fn secs(v: f64) -> Nanos {
    libm::round(v * NS_PER_S as f64) as Nanos
}

pub fn to_ms(ns: Nanos) -> f64 {
    ns as f64 / NS_PER_MS as f64
}

pub fn to_secs(ns: Nanos) -> f64 {
    ns as f64 / NS_PER_S as f64
}

/// Speed of light in vacuum, m/s (exact by definition of the metre).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
