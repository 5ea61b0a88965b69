//! Integer picosecond time base.
//!
//! Every timestamp and duration in the simulator is an integer number of
//! picoseconds. Nanosecond values quoted for real detectors (21.5 ns, 29.1 ns,
//! ...) are exact multiples, so event ordering never depends on float rounding.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

/// Picoseconds since the start of a run, or a signed picosecond duration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TimePs(pub i64);

impl TimePs {
    pub const ZERO: TimePs = TimePs(0);
    pub const MAX: TimePs = TimePs(i64::MAX);

    pub const fn ps(v: i64) -> Self {
        TimePs(v)
    }

    pub const fn ns(v: i64) -> Self {
        TimePs(v * 1_000)
    }

    pub const fn us(v: i64) -> Self {
        TimePs(v * 1_000_000)
    }

    pub const fn ms(v: i64) -> Self {
        TimePs(v * 1_000_000_000)
    }

    /// Rounds a fractional nanosecond value to the nearest picosecond.
    pub fn from_ns_f64(v: f64) -> Self {
        TimePs((v * 1e3).round() as i64)
    }

    pub fn from_ps_f64(v: f64) -> Self {
        TimePs(v.round() as i64)
    }

    pub fn from_secs_f64(v: f64) -> Self {
        TimePs((v * 1e12).round() as i64)
    }

    pub const fn as_ps(self) -> i64 {
        self.0
    }

    pub fn as_ps_f64(self) -> f64 {
        self.0 as f64
    }

    pub fn as_ns(self) -> f64 {
        self.0 as f64 * 1e-3
    }

    pub fn as_secs(self) -> f64 {
        self.0 as f64 * 1e-12
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }
}

impl fmt::Display for TimePs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ps", self.0)
    }
}

impl Add for TimePs {
    type Output = TimePs;
    fn add(self, rhs: TimePs) -> TimePs {
        TimePs(self.0 + rhs.0)
    }
}

impl AddAssign for TimePs {
    fn add_assign(&mut self, rhs: TimePs) {
        self.0 += rhs.0;
    }
}

impl Sub for TimePs {
    type Output = TimePs;
    fn sub(self, rhs: TimePs) -> TimePs {
        TimePs(self.0 - rhs.0)
    }
}

impl SubAssign for TimePs {
    fn sub_assign(&mut self, rhs: TimePs) {
        self.0 -= rhs.0;
    }
}

impl Neg for TimePs {
    type Output = TimePs;
    fn neg(self) -> TimePs {
        TimePs(-self.0)
    }
}

impl Mul<i64> for TimePs {
    type Output = TimePs;
    fn mul(self, rhs: i64) -> TimePs {
        TimePs(self.0 * rhs)
    }
}
