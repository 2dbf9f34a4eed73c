//! Extended-real values used for losses and regularizers.

use std::fmt;
use std::ops::{Add, Mul};

/// A value in `R ∪ {+∞}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtReal {
    Finite(f64),
    Infinite,
}

impl ExtReal {
    /// Wraps `x`, mapping non-finite inputs to `Infinite`.
    pub fn from_f64(x: f64) -> Self {
        if x.is_finite() {
            ExtReal::Finite(x)
        } else {
            ExtReal::Infinite
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            ExtReal::Finite(x) => Some(x),
            ExtReal::Infinite => None,
        }
    }

    /// The value as an `f64`, with `Infinite` mapped to `f64::INFINITY`.
    pub fn to_f64(&self) -> f64 {
        match *self {
            ExtReal::Finite(x) => x,
            ExtReal::Infinite => f64::INFINITY,
        }
    }

    /// `weight * self`, with the convention `0 * ∞ = 0`.
    pub fn weighted(self, weight: f64) -> Self {
        if weight == 0.0 {
            return ExtReal::Finite(0.0);
        }
        match self {
            ExtReal::Finite(x) => ExtReal::from_f64(weight * x),
            ExtReal::Infinite => ExtReal::Infinite,
        }
    }
}

impl Add for ExtReal {
    type Output = ExtReal;

    fn add(self, rhs: ExtReal) -> ExtReal {
        match (self, rhs) {
            (ExtReal::Finite(a), ExtReal::Finite(b)) => ExtReal::from_f64(a + b),
            _ => ExtReal::Infinite,
        }
    }
}

impl Mul<ExtReal> for f64 {
    type Output = ExtReal;

    fn mul(self, rhs: ExtReal) -> ExtReal {
        rhs.weighted(self)
    }
}

impl PartialOrd for ExtReal {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.to_f64().partial_cmp(&other.to_f64())
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::Finite(x) => write!(f, "{x}"),
            ExtReal::Infinite => f.write_str("inf"),
        }
    }
}
