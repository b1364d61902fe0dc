//! Fixed-point currency.
//!
//! Amounts are stored as a signed count of 10^-18 currency units, so sums are
//! exact and independent of summation order. Products with non-terminating
//! quotients (hourly price / 3600, GB = MB / 1024, ...) are rounded half away
//! from zero once, at the point where a single charge is computed.

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Mul, Sub};
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const FRACTION_DIGITS: usize = 18;
const SCALE: i128 = 1_000_000_000_000_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Money(i128);

impl Money {
    pub const ZERO: Money = Money(0);

    pub const fn from_atto(atto: i128) -> Self {
        Money(atto)
    }

    pub const fn atto(self) -> i128 {
        self.0
    }

    pub const fn from_units(units: i64) -> Self {
        Money(units as i128 * SCALE)
    }

    /// Converts through the shortest decimal representation of `value`, so
    /// `0.096` becomes exactly 0.096 rather than its binary approximation.
    pub fn from_f64(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Validation(format!("non-finite amount {value}")));
        }
        value.to_string().parse()
    }

    pub fn to_f64(self) -> f64 {
        let whole = (self.0 / SCALE) as f64;
        let frac = (self.0 % SCALE) as f64 / SCALE as f64;
        whole + frac
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }

    /// `self * num / den`, rounded half away from zero to the last fixed digit.
    pub fn mul_ratio(self, num: i128, den: i128) -> Money {
        assert!(den != 0, "zero denominator");
        let product = self
            .0
            .checked_mul(num)
            .expect("currency overflow in mul_ratio");
        Money(div_round(product, den))
    }

    /// Rounds to `digits` fractional digits (half away from zero).
    pub fn round_to(self, digits: u32) -> Money {
        let digits = digits.min(FRACTION_DIGITS as u32);
        let step = 10i128.pow(FRACTION_DIGITS as u32 - digits);
        Money(div_round(self.0, step) * step)
    }
}

fn div_round(n: i128, d: i128) -> i128 {
    let q = n / d;
    let r = n % d;
    if r.abs() * 2 >= d.abs() {
        if (n < 0) != (d < 0) {
            q - 1
        } else {
            q + 1
        }
    } else {
        q
    }
}

impl Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0.checked_add(rhs.0).expect("currency overflow"))
    }
}

impl AddAssign for Money {
    fn add_assign(&mut self, rhs: Money) {
        *self = *self + rhs;
    }
}

impl Sub for Money {
    type Output = Money;
    fn sub(self, rhs: Money) -> Money {
        Money(self.0.checked_sub(rhs.0).expect("currency overflow"))
    }
}

impl Mul<u64> for Money {
    type Output = Money;
    fn mul(self, rhs: u64) -> Money {
        Money(self.0.checked_mul(rhs as i128).expect("currency overflow"))
    }
}

impl Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, Add::add)
    }
}

impl<'a> Sum<&'a Money> for Money {
    fn sum<I: Iterator<Item = &'a Money>>(iter: I) -> Money {
        iter.copied().sum()
    }
}

impl FromStr for Money {
    type Err = Error;

    fn from_str(s: &str) -> Result<Money> {
        let bad = || Error::Validation(format!("invalid decimal amount {s:?}"));
        let t = s.trim();
        let (negative, t) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        let (whole, frac) = t.split_once('.').unwrap_or((t, ""));
        if whole.is_empty() && frac.is_empty() {
            return Err(bad());
        }
        if !whole.chars().all(|c| c.is_ascii_digit()) || !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let whole_val: i128 = if whole.is_empty() {
            0
        } else {
            whole.parse().map_err(|_| bad())?
        };
        let mut atto = whole_val.checked_mul(SCALE).ok_or_else(bad)?;
        let kept = &frac[..frac.len().min(FRACTION_DIGITS)];
        if !kept.is_empty() {
            let padded = format!("{kept:0<width$}", width = FRACTION_DIGITS);
            atto += padded.parse::<i128>().map_err(|_| bad())?;
        }
        if let Some(next) = frac.as_bytes().get(FRACTION_DIGITS) {
            if *next >= b'5' {
                atto += 1;
            }
        }
        Ok(Money(if negative { -atto } else { atto }))
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let whole = abs / SCALE as u128;
        let frac = abs % SCALE as u128;
        if frac == 0 {
            return write!(f, "{sign}{whole}.0");
        }
        let digits = format!("{frac:0width$}", width = FRACTION_DIGITS);
        write!(f, "{sign}{whole}.{}", digits.trim_end_matches('0'))
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Money, D::Error> {
        struct MoneyVisitor;

        impl Visitor<'_> for MoneyVisitor {
            type Value = Money;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a decimal amount as a number or string")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Money, E> {
                v.parse().map_err(E::custom)
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Money, E> {
                Money::from_f64(v).map_err(E::custom)
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Money, E> {
                Ok(Money::from_units(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Money, E> {
                i64::try_from(v)
                    .map(Money::from_units)
                    .map_err(|_| E::custom("amount out of range"))
            }
        }

        deserializer.deserialize_any(MoneyVisitor)
    }
}
