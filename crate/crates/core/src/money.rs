//! Exact currency arithmetic.
//!
//! Every amount that moves through the game is held as a whole number of
//! cents so payoff identities can be checked with `==`.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// An amount of money in integer cents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Cents(pub i64);

impl Cents {
    pub const ZERO: Cents = Cents(0);

    pub const fn from_dollars(dollars: i64) -> Self {
        Cents(dollars * 100)
    }

    /// Converts a dollar quantity, rounding to the nearest cent (ties away from zero).
    pub fn from_dollars_f64(dollars: f64) -> Self {
        Cents(round_half_away(dollars * 100.0))
    }

    pub fn as_dollars(self) -> f64 {
        self.0 as f64 / 100.0
    }

    pub fn is_multiple_of(self, step: Cents) -> bool {
        step.0 > 0 && self.0 % step.0 == 0
    }

    /// Formats as a plain decimal number of dollars with the fractional part
    /// dropped when it is zero ("10", "7.5", "0.25").
    pub fn compact(self) -> String {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let (whole, frac) = (abs / 100, abs % 100);
        match frac {
            0 => format!("{sign}{whole}"),
            f if f % 10 == 0 => format!("{sign}{whole}.{}", f / 10),
            f => format!("{sign}{whole}.{f:02}"),
        }
    }
}

impl fmt::Display for Cents {
    /// Two-decimal dollar amount, e.g. `7.50`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{:02}", abs / 100, abs % 100)
    }
}

impl Add for Cents {
    type Output = Cents;
    fn add(self, rhs: Cents) -> Cents {
        Cents(self.0 + rhs.0)
    }
}

impl AddAssign for Cents {
    fn add_assign(&mut self, rhs: Cents) {
        self.0 += rhs.0;
    }
}

impl Sub for Cents {
    type Output = Cents;
    fn sub(self, rhs: Cents) -> Cents {
        Cents(self.0 - rhs.0)
    }
}

impl Neg for Cents {
    type Output = Cents;
    fn neg(self) -> Cents {
        Cents(-self.0)
    }
}

impl Mul<i64> for Cents {
    type Output = Cents;
    fn mul(self, rhs: i64) -> Cents {
        Cents(self.0 * rhs)
    }
}

impl Sum for Cents {
    fn sum<I: Iterator<Item = Cents>>(iter: I) -> Cents {
        iter.fold(Cents::ZERO, Add::add)
    }
}

/// Rounds to the nearest integer, ties away from zero.
///
/// The input is first snapped to 1e-9 so that products such as `0.3 * 5.0`
/// (which land a hair below 1.5 in binary) are treated as the exact tie they
/// represent.
pub fn round_half_away(x: f64) -> i64 {
    let snapped = (x * 1e9).round() / 1e9;
    snapped.round() as i64
}

/// `fraction * amount`, rounded to the nearest cent (ties away from zero).
pub fn scale_to_cent(amount: Cents, fraction: f64) -> Cents {
    Cents(round_half_away(amount.0 as f64 * fraction))
}
