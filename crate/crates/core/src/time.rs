//! Simulation time in integer nanoseconds.

use std::fmt;

/// Nanoseconds per second.
pub const NANOS_PER_SEC: u64 = 1_000_000_000;

/// A point in (or span of) virtual simulation time, in nanosecond ticks.
///
/// The same type is used for absolute times and for deltas. Arithmetic is
/// checked; nothing wraps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SimTime(u64);

/// Failure converting floating-point seconds into ticks.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum TimeConversionError {
    #[error("time value {0} is negative or not finite")]
    OutOfDomain(f64),
    #[error("time value {0} s exceeds the tick range")]
    Overflow(f64),
    #[error("time value {seconds} s is not an integral number of nanoseconds (residual {residual} ticks)")]
    NotIntegral { seconds: f64, residual: f64 },
}

/// Largest allowed distance, in ticks, between `seconds * 1e9` and its
/// rounded value before a conversion is rejected as non-integral.
pub const TICK_QUANTIZATION_TOLERANCE: f64 = 1e-3;

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);
    pub const MAX: SimTime = SimTime(u64::MAX);

    pub const fn from_ticks(ticks: u64) -> Self {
        SimTime(ticks)
    }

    pub const fn ticks(self) -> u64 {
        self.0
    }

    pub const fn from_nanos(ns: u64) -> Self {
        SimTime(ns)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub const fn from_secs(s: u64) -> Self {
        SimTime(s * NANOS_PER_SEC)
    }

    pub fn checked_add(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_add(rhs.0).map(SimTime)
    }

    pub fn checked_sub(self, rhs: SimTime) -> Option<SimTime> {
        self.0.checked_sub(rhs.0).map(SimTime)
    }

    pub fn saturating_add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.saturating_add(rhs.0))
    }

    /// Seconds as a double. Exact for every tick count below 2^53.
    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    /// Converts seconds to ticks, rounding half away from zero.
    ///
    /// Rejects values whose nanosecond image lies further than
    /// [`TICK_QUANTIZATION_TOLERANCE`] ticks from an integer.
    pub fn from_secs_f64(seconds: f64) -> Result<SimTime, TimeConversionError> {
        if !seconds.is_finite() || seconds < 0.0 {
            return Err(TimeConversionError::OutOfDomain(seconds));
        }
        let scaled = seconds * NANOS_PER_SEC as f64;
        let rounded = scaled.round();
        if rounded >= u64::MAX as f64 {
            return Err(TimeConversionError::Overflow(seconds));
        }
        let residual = (scaled - rounded).abs();
        if residual > TICK_QUANTIZATION_TOLERANCE {
            return Err(TimeConversionError::NotIntegral { seconds, residual });
        }
        Ok(SimTime(rounded as u64))
    }

    /// Nearest tick count, without the integrality check. Used to compare
    /// communication points that only need to agree within one tick.
    pub fn nearest_from_secs_f64(seconds: f64) -> Option<SimTime> {
        if !seconds.is_finite() || seconds < 0.0 {
            return None;
        }
        let rounded = (seconds * NANOS_PER_SEC as f64).round();
        if rounded >= u64::MAX as f64 {
            return None;
        }
        Some(SimTime(rounded as u64))
    }

    /// Renders the time as decimal seconds from the integer tick count,
    /// e.g. `3.01`, `5.0`, `0.000000001`.
    pub fn to_decimal_secs(self) -> String {
        let secs = self.0 / NANOS_PER_SEC;
        let frac = self.0 % NANOS_PER_SEC;
        let mut frac_str = format!("{frac:09}");
        while frac_str.len() > 1 && frac_str.ends_with('0') {
            frac_str.pop();
        }
        format!("{secs}.{frac_str}")
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} s", self.to_decimal_secs())
    }
}
