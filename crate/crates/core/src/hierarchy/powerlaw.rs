//! Leading-order asymptotics `c·ε^e` with exact rational exponents.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul};

use num_rational::Ratio;
use serde::{Serialize, Serializer};

use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Exact exponent.
pub type Exponent = Ratio<i64>;

/// Parses a decimal string such as `-1`, `−1.50` or `+0.25` into an exact exponent.
pub fn parse_exponent(s: &str) -> Result<Exponent> {
    let t = s.trim();
    let (neg, body) = if let Some(r) = t.strip_prefix('-').or_else(|| t.strip_prefix('\u{2212}')) {
        (true, r)
    } else {
        (false, t.strip_prefix('+').unwrap_or(t))
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if (int.is_empty() && frac.is_empty()) || !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return Err(invalid(format!("not a decimal number: {s:?}")));
    }
    let frac = frac.trim_end_matches('0');
    if int.len() + frac.len() > 17 {
        return Err(invalid(format!("too many digits in exponent {s:?}")));
    }
    let digits = format!("{int}{frac}");
    let numer: i64 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| invalid(format!("bad exponent {s:?}")))? };
    let denom = 10i64.pow(frac.len() as u32);
    let r = Ratio::new(numer, denom);
    Ok(if neg { -r } else { r })
}

/// Finite decimal when the denominator allows it, `p/q` otherwise.
pub fn format_exponent(e: &Exponent) -> String {
    let (mut d, mut twos, mut fives) = (*e.denom(), 0u32, 0u32);
    while d % 2 == 0 {
        d /= 2;
        twos += 1;
    }
    while d % 5 == 0 {
        d /= 5;
        fives += 1;
    }
    let k = twos.max(fives);
    if d != 1 || k > 18 {
        return format!("{}/{}", e.numer(), e.denom());
    }
    let scale = 10i128.pow(k);
    let scaled = *e.numer() as i128 * (scale / *e.denom() as i128);
    let sign = if scaled < 0 { "-" } else { "" };
    let (whole, frac) = (scaled.unsigned_abs() / scale as u128, scaled.unsigned_abs() % scale as u128);
    if k == 0 {
        format!("{sign}{whole}")
    } else {
        format!("{sign}{whole}.{frac:0width$}", width = k as usize)
    }
}

/// `coeff·ε^expo` as `ε ↓ 0`; `expo = None` encodes the identically-zero quantity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLaw<T> {
    coeff: T,
    expo: Option<Exponent>,
}

impl<T: Real> PowerLaw<T> {
    pub fn new(coeff: T, expo: Exponent) -> Result<Self> {
        if !(coeff > T::zero() && coeff.is_finite()) {
            return Err(invalid(format!("power-law coefficient must be positive and finite, got {coeff}")));
        }
        Ok(Self { coeff, expo: Some(expo) })
    }

    pub fn zero() -> Self {
        Self { coeff: T::zero(), expo: None }
    }

    pub fn one() -> Self {
        Self { coeff: T::one(), expo: Some(Exponent::from_integer(0)) }
    }

    pub fn is_zero(&self) -> bool {
        self.expo.is_none()
    }

    pub fn coeff(&self) -> T {
        self.coeff
    }

    pub fn expo(&self) -> Option<Exponent> {
        self.expo
    }

    pub fn scale(self, c: T) -> Self {
        if self.is_zero() { self } else { Self { coeff: self.coeff * c, ..self } }
    }

    /// `None` when dividing by the zero power law.
    pub fn checked_div(self, rhs: Self) -> Option<Self> {
        let re = rhs.expo?;
        Some(match self.expo {
            None => self,
            Some(e) => Self { coeff: self.coeff / rhs.coeff, expo: Some(e - re) },
        })
    }

    /// Value at a concrete `ε`.
    pub fn eval(&self, eps: T) -> T {
        match self.expo {
            None => T::zero(),
            Some(e) => self.coeff * eps.powf(T::from_f64(*e.numer() as f64 / *e.denom() as f64).expect("finite exponent")),
        }
    }

    /// Ordering by asymptotic size: larger means dominant as `ε ↓ 0`.
    pub fn dominance(&self, other: &Self) -> Ordering {
        match (self.expo, other.expo) {
            (None, None) => Ordering::Equal,
            (None, _) => Ordering::Less,
            (_, None) => Ordering::Greater,
            (Some(a), Some(b)) => b.cmp(&a).then_with(|| self.coeff.partial_cmp(&other.coeff).unwrap_or(Ordering::Equal)),
        }
    }
}

impl<T: Real> Mul for PowerLaw<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        match (self.expo, rhs.expo) {
            (Some(a), Some(b)) => Self { coeff: self.coeff * rhs.coeff, expo: Some(a + b) },
            _ => Self::zero(),
        }
    }
}

impl<T: Real> Add for PowerLaw<T> {
    type Output = Self;
    /// Keeps the dominant term; coefficients add on equal exponents.
    fn add(self, rhs: Self) -> Self {
        match (self.expo, rhs.expo) {
            (None, _) => rhs,
            (_, None) => self,
            (Some(a), Some(b)) => match a.cmp(&b) {
                Ordering::Less => self,
                Ordering::Greater => rhs,
                Ordering::Equal => Self { coeff: self.coeff + rhs.coeff, expo: Some(a) },
            },
        }
    }
}

impl<T: Real> std::iter::Sum for PowerLaw<T> {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::zero(), |a, b| a + b)
    }
}

impl<T: Real> fmt::Display for PowerLaw<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.expo {
            None => write!(f, "0"),
            Some(e) => write!(f, "{}·ε^{}", self.coeff, format_exponent(&e)),
        }
    }
}

impl<T: Serialize> Serialize for PowerLaw<T> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("PowerLaw", 2)?;
        st.serialize_field("coeff", &self.coeff)?;
        st.serialize_field("expo", &self.expo.map(|e| format_exponent(&e)))?;
        st.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pl(c: f64, n: i64, d: i64) -> PowerLaw<f64> {
        PowerLaw::new(c, Ratio::new(n, d)).unwrap()
    }

    #[test]
    fn parse_canonical() {
        assert_eq!(parse_exponent("-1.0").unwrap(), parse_exponent("-1").unwrap());
        assert_eq!(parse_exponent("\u{2212}1.50").unwrap(), Ratio::new(-3, 2));
        assert_eq!(parse_exponent(".25").unwrap(), Ratio::new(1, 4));
        assert!(parse_exponent("1e3").is_err());
        assert!(parse_exponent("").is_err());
        assert!(parse_exponent("-").is_err());
    }

    #[test]
    fn format_roundtrip() {
        for s in ["-1", "-1.5", "0.125", "-2.75", "0", "3"] {
            assert_eq!(format_exponent(&parse_exponent(s).unwrap()), s);
        }
        assert_eq!(format_exponent(&Ratio::new(-1, 3)), "-1/3");
    }

    #[test]
    fn algebra() {
        let a = pl(2.0, -1, 1);
        let b = pl(3.0, 1, 2);
        assert_eq!(a * b, pl(6.0, -1, 2));
        assert_eq!(a + b, a);
        assert_eq!(a + pl(1.0, -1, 1), pl(3.0, -1, 1));
        assert_eq!(a + PowerLaw::zero(), a);
        assert_eq!((a * PowerLaw::zero()).expo(), None);
        assert_eq!(a.checked_div(b).unwrap(), pl(2.0 / 3.0, -3, 2));
        assert!(a.checked_div(PowerLaw::zero()).is_none());
        assert!((a.eval(0.01) - 200.0).abs() < 1e-9);
    }
}
