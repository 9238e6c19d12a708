//! Calendar and series types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Linear index of a pixel in its fine grid (`row * width + col`).
pub type PixelId = u64;

/// A calendar month of a specific year.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    month: u8,
}

impl YearMonth {
    /// Panics when `month` is outside `1..=12`; use [`YearMonth::try_new`]
    /// for untrusted input.
    pub fn new(year: i32, month: u8) -> Self {
        Self::try_new(year, month).expect("month must be in 1..=12")
    }

    pub fn try_new(year: i32, month: u8) -> Result<Self, Error> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidParameter(format!(
                "month {month} outside 1..=12"
            )));
        }
        Ok(Self { year, month })
    }

    /// Calendar month, 1..=12.
    pub fn month(self) -> u8 {
        self.month
    }

    /// Zero-based calendar month, handy for indexing 12-slot tables.
    pub fn month_index(self) -> usize {
        usize::from(self.month - 1)
    }

    /// Months elapsed since year 0, January.
    pub fn ordinal(self) -> i64 {
        i64::from(self.year) * 12 + i64::from(self.month - 1)
    }

    pub fn from_ordinal(ordinal: i64) -> Self {
        let year = ordinal.div_euclid(12) as i32;
        let month = ordinal.rem_euclid(12) as u8 + 1;
        Self { year, month }
    }

    pub fn add_months(self, n: i64) -> Self {
        Self::from_ordinal(self.ordinal() + n)
    }

    /// Inclusive range of months from `self` to `end`.
    pub fn range_inclusive(self, end: YearMonth) -> impl Iterator<Item = YearMonth> {
        (self.ordinal()..=end.ordinal()).map(YearMonth::from_ordinal)
    }

    /// All twelve months of `year`.
    pub fn year_months(year: i32) -> impl Iterator<Item = YearMonth> {
        (1..=12).map(move |m| YearMonth { year, month: m })
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || Error::InvalidParameter(format!("expected YYYY-MM, got {s:?}"));
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        YearMonth::try_new(year, month)
    }
}

impl Serialize for YearMonth {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for YearMonth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One monthly measurement of a pixel. Invalid observations carry `NaN`
/// and their value is never read.
#[derive(Debug, Clone, Copy)]
pub struct Observation {
    pub value: f64,
    pub valid: bool,
}

impl Observation {
    pub fn valid(value: f64) -> Self {
        Self { value, valid: true }
    }

    pub fn missing() -> Self {
        Self {
            value: f64::NAN,
            valid: false,
        }
    }

    /// Valid when `value` is finite, missing otherwise.
    pub fn from_value(value: f64) -> Self {
        if value.is_finite() {
            Self::valid(value)
        } else {
            Self::missing()
        }
    }

    pub fn get(&self) -> Option<f64> {
        self.valid.then_some(self.value)
    }
}

impl PartialEq for Observation {
    fn eq(&self, other: &Self) -> bool {
        match (self.valid, other.valid) {
            (true, true) => self.value.to_bits() == other.value.to_bits(),
            (false, false) => true,
            _ => false,
        }
    }
}

/// Monthly observations of one pixel in one band. Slot `i` holds the
/// composite for `start + i` months; gaps are invalid observations, never
/// omitted slots.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSeries {
    pub pixel: PixelId,
    pub band: String,
    pub start: YearMonth,
    pub observations: Vec<Observation>,
}

impl PixelSeries {
    pub fn period_of(&self, step: usize) -> YearMonth {
        self.start.add_months(step as i64)
    }

    pub fn valid_count(&self) -> usize {
        self.observations.iter().filter(|o| o.valid).count()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordinal_round_trip_crosses_years() {
        let ym = YearMonth::new(2009, 11);
        assert_eq!(ym.add_months(3), YearMonth::new(2010, 2));
        assert_eq!(ym.add_months(-11), YearMonth::new(2008, 12));
        assert_eq!(YearMonth::from_ordinal(ym.ordinal()), ym);
    }

    #[test]
    fn parse_and_display() {
        let ym: YearMonth = "2010-03".parse().unwrap();
        assert_eq!(ym, YearMonth::new(2010, 3));
        assert_eq!(ym.to_string(), "2010-03");
        assert!("2010-13".parse::<YearMonth>().is_err());
        assert!("2010".parse::<YearMonth>().is_err());
    }

    #[test]
    fn invalid_observations_compare_equal_regardless_of_payload() {
        let a = Observation {
            value: 0.3,
            valid: false,
        };
        assert_eq!(a, Observation::missing());
        assert_ne!(Observation::valid(0.3), a);
    }
}
