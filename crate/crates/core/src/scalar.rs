//! Scalar types the ratio repair path is generic over.
//!
//! Floats (`f32`, `f64`) are accepted as-is; [`Exact`] is an arbitrary
//! precision rational, used when ratios come from decimal text (LLM JSON) so
//! that remainder ties are decided exactly.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{FromPrimitive, Num, ToPrimitive};

/// Arbitrary precision rational scalar.
pub type Exact = BigRational;

pub trait Scalar: Num + Clone + PartialOrd + FromPrimitive + ToPrimitive + Debug {
    /// Largest integral value not greater than `self`.
    fn floor_value(&self) -> Self;

    /// False for NaN and infinities.
    fn is_finite_value(&self) -> bool {
        true
    }
}

impl Scalar for f64 {
    fn floor_value(&self) -> Self {
        self.floor()
    }
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl Scalar for f32 {
    fn floor_value(&self) -> Self {
        self.floor()
    }
    fn is_finite_value(&self) -> bool {
        self.is_finite()
    }
}

impl Scalar for Ratio<i64> {
    fn floor_value(&self) -> Self {
        self.floor()
    }
}

impl Scalar for BigRational {
    fn floor_value(&self) -> Self {
        self.floor()
    }
}

/// Parses a JSON-style decimal literal (`-0.25`, `1e-3`, `3.`) into an exact
/// rational. Returns `None` for anything else.
pub fn parse_decimal(text: &str) -> Option<Exact> {
    let text = text.trim();
    let (mantissa, exponent) = match text.find(['e', 'E']) {
        Some(i) => (&text[..i], text[i + 1..].parse::<i32>().ok()?),
        None => (text, 0),
    };
    let (negative, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = match digits.split_once('.') {
        Some((i, f)) => (i, f),
        None => (digits, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part
        .bytes()
        .chain(frac_part.bytes())
        .all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let all_digits = format!("{int_part}{frac_part}");
    let mut numer = BigInt::parse_bytes(all_digits.as_bytes(), 10)?;
    if negative {
        numer = -numer;
    }
    let scale = exponent - i32::try_from(frac_part.len()).ok()?;
    if scale.unsigned_abs() > 400 {
        return None;
    }
    let ten = BigInt::from(10u8);
    let factor = num_traits::pow(ten, scale.unsigned_abs() as usize);
    Some(if scale >= 0 {
        Exact::from_integer(numer * factor)
    } else {
        Exact::new(numer, factor)
    })
}

/// Exact rational for a JSON number, taken from its shortest decimal form.
pub fn exact_from_json(n: &serde_json::Number) -> Option<Exact> {
    parse_decimal(&n.to_string())
}

/// `value` as a float, for reporting.
pub fn to_f64<T: Scalar>(value: &T) -> f64 {
    value.to_f64().unwrap_or(f64::NAN)
}

/// True when `value` is strictly positive.
pub(crate) fn is_positive<T: Scalar>(value: &T) -> bool {
    *value > T::zero()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(n: i64, d: i64) -> Exact {
        Exact::new(BigInt::from(n), BigInt::from(d))
    }

    #[test]
    fn decimals_parse_exactly() {
        assert_eq!(parse_decimal("0.33"), Some(q(33, 100)));
        assert_eq!(parse_decimal("-0.2"), Some(q(-1, 5)));
        assert_eq!(parse_decimal("1"), Some(q(1, 1)));
        assert_eq!(parse_decimal("1e-3"), Some(q(1, 1000)));
        assert_eq!(parse_decimal("2.5E2"), Some(q(250, 1)));
        assert_eq!(parse_decimal(".5"), Some(q(1, 2)));
        assert_eq!(parse_decimal("3."), Some(q(3, 1)));
    }

    #[test]
    fn junk_rejected() {
        for s in ["", "-", ".", "abc", "1.2.3", "0x10", "1e", "NaN", "1e99999"] {
            assert_eq!(parse_decimal(s), None, "{s:?}");
        }
    }

    #[test]
    fn json_numbers_recover_their_text() {
        let v: serde_json::Value = serde_json::from_str("[0.07, 0.1, 12, -3.5]").unwrap();
        let got: Vec<_> = v
            .as_array()
            .unwrap()
            .iter()
            .map(|n| exact_from_json(n.as_number().unwrap()).unwrap())
            .collect();
        assert_eq!(got, vec![q(7, 100), q(1, 10), q(12, 1), q(-7, 2)]);
    }

    #[test]
    fn floor_matches_across_scalars() {
        assert_eq!(2.7f64.floor_value(), 2.0);
        assert_eq!((-0.5f32).floor_value(), -1.0);
        assert_eq!(q(27, 10).floor_value(), q(2, 1));
        assert_eq!(
            Ratio::<i64>::new(-1, 2).floor_value(),
            Ratio::from_integer(-1)
        );
        assert!(!f64::NAN.is_finite_value());
    }
}
