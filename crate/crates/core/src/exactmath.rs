//! Exact rational arithmetic for quantized fractions.
//!
//! Every protocol decision (stopping, assignment, extrema) goes through the
//! comparisons in this module. Values are compared by cross-multiplication, so
//! two fractions are equal whenever they denote the same rational regardless of
//! representation; [`Fraction::reduced`] only exists to keep numbers short.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Errors raised by exact arithmetic.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExactMathError {
    #[error("denominator must be nonzero")]
    ZeroDenominator,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("cannot parse fraction from {0:?}")]
    Parse(String),
}

/// Converts a slice of machine integers into an arbitrary-precision vector.
pub fn int_vec(values: &[i64]) -> Vec<BigInt> {
    values.iter().map(|&v| BigInt::from(v)).collect()
}

/// Compares `an/ad` against `bn/bd` for positive denominators.
fn cmp_ratio(an: &BigInt, ad: &BigInt, bn: &BigInt, bd: &BigInt) -> Ordering {
    if ad == bd {
        return an.cmp(bn);
    }
    if let (Some(an), Some(ad), Some(bn), Some(bd)) = (an.to_i64(), ad.to_i64(), bn.to_i64(), bd.to_i64()) {
        // i64 * i64 always fits in i128.
        return (an as i128 * bd as i128).cmp(&(bn as i128 * ad as i128));
    }
    (an * bd).cmp(&(bn * ad))
}

/// An exact rational number with a strictly positive denominator.
#[derive(Clone, Debug)]
pub struct Fraction {
    num: BigInt,
    den: BigInt,
    /// `(num, den)` when both fit in `i64`.
    small: Option<(i64, i64)>,
}

impl Fraction {
    /// Builds `num/den`, moving the sign onto the numerator.
    pub fn new(num: impl Into<BigInt>, den: impl Into<BigInt>) -> Result<Self, ExactMathError> {
        let (num, den) = (num.into(), den.into());
        if den.is_zero() {
            return Err(ExactMathError::ZeroDenominator);
        }
        if den.is_negative() {
            Ok(Self::raw(-num, -den))
        } else {
            Ok(Self::raw(num, den))
        }
    }

    /// `den` must already be positive.
    fn raw(num: BigInt, den: BigInt) -> Self {
        let small = num.to_i64().zip(den.to_i64());
        Self { num, den, small }
    }

    pub fn from_integer(value: impl Into<BigInt>) -> Self {
        Self::raw(value.into(), BigInt::one())
    }

    pub fn zero() -> Self {
        Self::from_integer(0)
    }

    pub fn numer(&self) -> &BigInt {
        &self.num
    }

    pub fn denom(&self) -> &BigInt {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    /// Divides numerator and denominator by their gcd. `0/x` becomes `0/1`.
    pub fn reduced(&self) -> Self {
        let g = self.num.gcd(&self.den);
        if g.is_zero() || g.is_one() {
            return self.clone();
        }
        Self::raw(&self.num / &g, &self.den / &g)
    }

    /// Exact sum, left unreduced.
    pub fn add(&self, other: &Fraction) -> Fraction {
        if self.den == other.den {
            return Fraction::raw(&self.num + &other.num, self.den.clone());
        }
        Fraction::raw(&self.num * &other.den + &other.num * &self.den, &self.den * &other.den)
    }

    /// Lossy projection for plot data only.
    pub fn to_f64(&self) -> f64 {
        let r = self.reduced();
        match (r.num.to_f64(), r.den.to_f64()) {
            (Some(n), Some(d)) => n / d,
            _ => f64::NAN,
        }
    }
}

/// `a == b` by value.
pub fn frac_equal(a: &Fraction, b: &Fraction) -> bool {
    a == b
}

/// `a < b` by value.
pub fn frac_less(a: &Fraction, b: &Fraction) -> bool {
    a < b
}

impl PartialEq for Fraction {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Fraction {}

impl PartialOrd for Fraction {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Fraction {
    fn cmp(&self, other: &Self) -> Ordering {
        if let (Some((an, ad)), Some((bn, bd))) = (self.small, other.small) {
            return (an as i128 * bd as i128).cmp(&(bn as i128 * ad as i128));
        }
        cmp_ratio(&self.num, &self.den, &other.num, &other.den)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let r = self.reduced();
        write!(f, "{}/{}", r.num, r.den)
    }
}

impl FromStr for Fraction {
    type Err = ExactMathError;

    /// Accepts `num/den` or a plain integer.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || ExactMathError::Parse(s.into());
        match s.split_once('/') {
            Some((n, d)) => {
                let n: BigInt = n.trim().parse().map_err(|_| bad())?;
                let d: BigInt = d.trim().parse().map_err(|_| bad())?;
                Fraction::new(n, d)
            }
            None => Ok(Fraction::from_integer(s.parse::<BigInt>().map_err(|_| bad())?)),
        }
    }
}

/// A `d`-dimensional rational vector: integer numerators over one positive
/// denominator.
#[derive(Clone, Debug)]
pub struct FractionVector {
    nums: Vec<BigInt>,
    den: BigInt,
}

impl FractionVector {
    pub fn new(nums: Vec<BigInt>, den: impl Into<BigInt>) -> Result<Self, ExactMathError> {
        let den = den.into();
        if den.is_zero() {
            return Err(ExactMathError::ZeroDenominator);
        }
        if den.is_negative() {
            Ok(Self { nums: nums.into_iter().map(|n| -n).collect(), den: -den })
        } else {
            Ok(Self { nums, den })
        }
    }

    pub fn from_integers(values: &[BigInt]) -> Self {
        Self { nums: values.to_vec(), den: BigInt::one() }
    }

    /// Places per-dimension fractions over their least common denominator.
    pub fn from_components(parts: &[Fraction]) -> Self {
        let den = parts.iter().fold(BigInt::one(), |acc, f| acc.lcm(&f.den));
        let nums = parts.iter().map(|f| &f.num * (&den / &f.den)).collect();
        Self { nums, den }
    }

    pub fn dim(&self) -> usize {
        self.nums.len()
    }

    pub fn numers(&self) -> &[BigInt] {
        &self.nums
    }

    pub fn denom(&self) -> &BigInt {
        &self.den
    }

    pub fn component(&self, i: usize) -> Fraction {
        Fraction::raw(self.nums[i].clone(), self.den.clone())
    }

    pub fn components(&self) -> impl Iterator<Item = Fraction> + '_ {
        (0..self.dim()).map(|i| self.component(i))
    }

    /// Compares dimension `i` of two vectors without allocating.
    pub fn cmp_component(&self, other: &FractionVector, i: usize) -> Ordering {
        cmp_ratio(&self.nums[i], &self.den, &other.nums[i], &other.den)
    }

    /// Divides every numerator and the denominator by their common gcd.
    pub fn reduced(&self) -> Self {
        let g = self.nums.iter().fold(self.den.clone(), |acc, n| acc.gcd(n));
        if g.is_one() {
            return self.clone();
        }
        Self { nums: self.nums.iter().map(|n| n / &g).collect(), den: &self.den / &g }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.components().map(|c| c.to_f64()).collect()
    }
}

impl PartialEq for FractionVector {
    fn eq(&self, other: &Self) -> bool {
        self.dim() == other.dim()
            && (0..self.dim()).all(|i| self.cmp_component(other, i) == Ordering::Equal)
    }
}

impl Eq for FractionVector {}

impl fmt::Display for FractionVector {
    /// Components in canonical reduced form separated by `;`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, c) in self.components().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{c}")?;
        }
        Ok(())
    }
}

impl FromStr for FractionVector {
    type Err = ExactMathError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts = s
            .split(';')
            .map(str::parse::<Fraction>)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::from_components(&parts))
    }
}

/// Squared Euclidean distance between an integer point and a rational point,
/// returned over the denominator `c.denom()^2`.
pub fn sq_dist_exact(x: &[BigInt], c: &FractionVector) -> Result<Fraction, ExactMathError> {
    if x.len() != c.dim() {
        return Err(ExactMathError::DimensionMismatch { expected: c.dim(), found: x.len() });
    }
    let num = x
        .iter()
        .zip(&c.nums)
        .map(|(xi, ci)| {
            let diff = xi * &c.den - ci;
            &diff * &diff
        })
        .fold(BigInt::zero(), |acc, v| acc + v);
    Ok(Fraction::raw(num, &c.den * &c.den))
}
