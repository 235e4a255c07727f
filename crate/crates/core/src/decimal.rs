// Copyright 2026 The Unimart Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Exact fixed-point decimals for measure values.
//!
//! Measures are summed in integer micro-units so that partial aggregates
//! merge to identical totals in any order.

use std::fmt;
use std::ops::{Add, AddAssign};
use std::str::FromStr;

/// Fractional digits kept by [`Fixed`].
pub const SCALE_DIGITS: u32 = 6;
const SCALE: i128 = 10i128.pow(SCALE_DIGITS);

/// A decimal number stored as an integer count of 10^-6 units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fixed(i128);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecimalError {
    #[error("not a decimal number")]
    NotNumeric,
    #[error("more than {SCALE_DIGITS} fractional digits")]
    TooPrecise,
    #[error("decimal out of range")]
    Overflow,
}

impl Fixed {
    pub const ZERO: Fixed = Fixed(0);

    pub fn from_units(units: i128) -> Self {
        Fixed(units)
    }

    pub fn units(self) -> i128 {
        self.0
    }

    pub fn from_int(v: i64) -> Self {
        Fixed(v as i128 * SCALE)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    /// Mean of `count` values summing to `self`.
    pub fn mean(self, count: u64) -> Option<f64> {
        (count > 0).then(|| self.0 as f64 / SCALE as f64 / count as f64)
    }

    pub fn checked_add(self, other: Fixed) -> Option<Fixed> {
        self.0.checked_add(other.0).map(Fixed)
    }
}

impl FromStr for Fixed {
    type Err = DecimalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (negative, body) = match s.as_bytes().first() {
            Some(b'-') => (true, &s[1..]),
            Some(b'+') => (false, &s[1..]),
            _ => (false, s),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, Some(f)),
            None => (body, None),
        };
        if int_part.is_empty() || !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(DecimalError::NotNumeric);
        }
        let mut units: i128 = 0;
        for b in int_part.bytes() {
            units = units
                .checked_mul(10)
                .and_then(|u| u.checked_add((b - b'0') as i128))
                .ok_or(DecimalError::Overflow)?;
        }
        units = units.checked_mul(SCALE).ok_or(DecimalError::Overflow)?;
        if let Some(frac) = frac_part {
            if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(DecimalError::NotNumeric);
            }
            if frac.len() > SCALE_DIGITS as usize {
                return Err(DecimalError::TooPrecise);
            }
            let mut f: i128 = 0;
            for b in frac.bytes() {
                f = f * 10 + (b - b'0') as i128;
            }
            f *= 10i128.pow(SCALE_DIGITS - frac.len() as u32);
            units = units.checked_add(f).ok_or(DecimalError::Overflow)?;
        }
        Ok(Fixed(if negative { -units } else { units }))
    }
}

impl fmt::Display for Fixed {
    /// Canonical text: no trailing fractional zeros, no leading `+`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let int = abs / SCALE as u128;
        let frac = abs % SCALE as u128;
        if frac == 0 {
            write!(f, "{sign}{int}")
        } else {
            let digits = format!("{frac:0width$}", width = SCALE_DIGITS as usize);
            write!(f, "{sign}{int}.{}", digits.trim_end_matches('0'))
        }
    }
}

impl Add for Fixed {
    type Output = Fixed;
    fn add(self, rhs: Fixed) -> Fixed {
        Fixed(self.0 + rhs.0)
    }
}

impl AddAssign for Fixed {
    fn add_assign(&mut self, rhs: Fixed) {
        self.0 += rhs.0;
    }
}

impl std::iter::Sum for Fixed {
    fn sum<I: Iterator<Item = Fixed>>(iter: I) -> Fixed {
        iter.fold(Fixed::ZERO, |a, b| a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_plain_and_fractional() {
        assert_eq!("80".parse::<Fixed>().unwrap(), Fixed::from_int(80));
        assert_eq!("78.25".parse::<Fixed>().unwrap().units(), 78_250_000);
        assert_eq!("-0.5".parse::<Fixed>().unwrap().units(), -500_000);
        assert_eq!("+3".parse::<Fixed>().unwrap(), Fixed::from_int(3));
    }

    #[test]
    fn rejects_garbage() {
        for bad in ["", "abc", "1.", ".5", "1e5", "1.2.3", "-", "12a", " 1"] {
            assert_eq!(
                bad.parse::<Fixed>(),
                Err(DecimalError::NotNumeric),
                "{bad:?}"
            );
        }
        assert_eq!("1.1234567".parse::<Fixed>(), Err(DecimalError::TooPrecise));
    }

    #[test]
    fn mean_of_two_points() {
        let s = Fixed::from_int(80) + Fixed::from_int(90);
        assert_eq!(s.mean(2), Some(85.0));
        assert_eq!(Fixed::ZERO.mean(0), None);
    }

    proptest! {
        #[test]
        fn display_round_trips(units in -10_i128.pow(20)..10_i128.pow(20)) {
            let v = Fixed::from_units(units);
            prop_assert_eq!(v.to_string().parse::<Fixed>().unwrap(), v);
        }
    }
}
