//! Time and rate units.
//!
//! The simulation clock is an integer count of nanoseconds. Cost formulas are
//! evaluated in `f64` nanoseconds and rounded half-up to the clock resolution
//! at the point they enter the event schedule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Simulated time or duration in integer nanoseconds.
pub type Nanos = u64;

pub const NS_PER_US: f64 = 1e3;
pub const NS_PER_MS: f64 = 1e6;

/// Round a non-negative cost in nanoseconds half-up to the clock resolution.
pub fn round_ns(x: f64) -> Nanos {
    if !x.is_finite() || x <= 0.0 {
        return 0;
    }
    (x + 0.5).floor() as Nanos
}

pub fn ns_to_ms(ns: Nanos) -> f64 {
    ns as f64 / NS_PER_MS
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid duration `{0}`: expected a number followed by ns, us, ms or s")]
pub struct ParseDurationError(pub String);

/// A configured duration. Fractional nanoseconds are allowed so that per-byte
/// costs (e.g. `"0.35ns"` per byte) can use the same notation.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct TimeSpan(f64);

impl TimeSpan {
    pub const ZERO: TimeSpan = TimeSpan(0.0);

    pub fn from_ns(ns: f64) -> Self {
        TimeSpan(ns)
    }

    pub fn from_us(us: f64) -> Self {
        TimeSpan(us * NS_PER_US)
    }

    pub fn from_ms(ms: f64) -> Self {
        TimeSpan(ms * NS_PER_MS)
    }

    pub fn ns(self) -> f64 {
        self.0
    }

    pub fn ms(self) -> f64 {
        self.0 / NS_PER_MS
    }

    /// Clock value, rounded half-up.
    pub fn nanos(self) -> Nanos {
        round_ns(self.0)
    }
}

impl FromStr for TimeSpan {
    type Err = ParseDurationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let split = t
            .find(|c: char| c.is_ascii_alphabetic())
            .ok_or_else(|| ParseDurationError(s.to_string()))?;
        let (num, unit) = t.split_at(split);
        let value: f64 = num
            .trim()
            .parse()
            .map_err(|_| ParseDurationError(s.to_string()))?;
        if !value.is_finite() || value < 0.0 {
            return Err(ParseDurationError(s.to_string()));
        }
        let scale = match unit.trim() {
            "ns" => 1.0,
            "us" | "µs" => NS_PER_US,
            "ms" => NS_PER_MS,
            "s" => 1e9,
            _ => return Err(ParseDurationError(s.to_string())),
        };
        Ok(TimeSpan(value * scale))
    }
}

impl fmt::Display for TimeSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}ns", self.0)
    }
}

impl Serialize for TimeSpan {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TimeSpan {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_units() {
        assert_eq!("10ns".parse::<TimeSpan>().unwrap().ns(), 10.0);
        assert_eq!("1.5us".parse::<TimeSpan>().unwrap().ns(), 1500.0);
        assert_eq!("2ms".parse::<TimeSpan>().unwrap().ns(), 2e6);
        assert_eq!("0.35 ns".parse::<TimeSpan>().unwrap().ns(), 0.35);
        assert!("12".parse::<TimeSpan>().is_err());
        assert!("3 min".parse::<TimeSpan>().is_err());
        assert!("-1ms".parse::<TimeSpan>().is_err());
    }

    #[test]
    fn rounds_half_up() {
        assert_eq!(round_ns(0.5), 1);
        assert_eq!(round_ns(1.49), 1);
        assert_eq!(round_ns(2.5), 3);
        assert_eq!(round_ns(-3.0), 0);
    }

    #[test]
    fn display_round_trips() {
        let t = TimeSpan::from_ns(383_812.123_456_7);
        assert_eq!(t.to_string().parse::<TimeSpan>().unwrap(), t);
    }
}
