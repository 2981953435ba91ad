//! Exact note-length arithmetic in units of a whole note.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Sub};

use num_rational::Ratio;

/// A non-negative rational length measured in whole notes, always kept in lowest terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Duration(Ratio<i64>);

impl Duration {
    pub const ZERO: Duration = Duration(Ratio::new_raw(0, 1));

    /// Builds `numer/denom`. Returns `None` for a zero denominator or a negative value.
    pub fn new(numer: i64, denom: i64) -> Option<Self> {
        if denom == 0 {
            return None;
        }
        let r = Ratio::new(numer, denom);
        if r < Ratio::from_integer(0) {
            return None;
        }
        Some(Duration(r))
    }

    pub fn from_integer(n: i64) -> Self {
        Duration(Ratio::from_integer(n.max(0)))
    }

    pub fn numer(&self) -> i64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i64 {
        *self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        *self.0.numer() == 0
    }

    pub fn ratio(&self) -> Ratio<i64> {
        self.0
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub(crate) fn from_ratio(r: Ratio<i64>) -> Self {
        debug_assert!(*r.numer() >= 0);
        Duration(r)
    }

    pub fn scale(self, factor: Ratio<i64>) -> Self {
        Duration(self.0 * factor)
    }
}

impl fmt::Display for Duration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numer(), self.denom())
    }
}

impl Add for Duration {
    type Output = Duration;
    fn add(self, rhs: Duration) -> Duration {
        Duration(self.0 + rhs.0)
    }
}

impl AddAssign for Duration {
    fn add_assign(&mut self, rhs: Duration) {
        self.0 += rhs.0;
    }
}

/// Saturates at zero.
impl Sub for Duration {
    type Output = Duration;
    fn sub(self, rhs: Duration) -> Duration {
        let d = self.0 - rhs.0;
        if d < Ratio::from_integer(0) {
            Duration::ZERO
        } else {
            Duration(d)
        }
    }
}

impl Mul for Duration {
    type Output = Duration;
    fn mul(self, rhs: Duration) -> Duration {
        Duration(self.0 * rhs.0)
    }
}

impl Sum for Duration {
    fn sum<I: Iterator<Item = Duration>>(iter: I) -> Duration {
        iter.fold(Duration::ZERO, |a, b| a + b)
    }
}
