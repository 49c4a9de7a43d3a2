//! Exact nested-interval arithmetic coding over rationals. This is the
//! reference the integer coder is checked against, not a practical coder.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

use super::QuantizedPmf;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RationalInterval {
    pub lower: BigRational,
    pub width: BigRational,
}

impl RationalInterval {
    pub fn unit() -> Self {
        RationalInterval {
            lower: BigRational::zero(),
            width: BigRational::one(),
        }
    }

    pub fn upper(&self) -> BigRational {
        &self.lower + &self.width
    }

    /// Half-open membership `lower <= v < lower + width`.
    pub fn contains(&self, v: &BigRational) -> bool {
        *v >= self.lower && *v < self.upper()
    }
}

pub fn ratio(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Exact PMF `count / 2^16` of a quantized PMF.
pub fn exact_pmf(pmf: &QuantizedPmf) -> Vec<BigRational> {
    pmf.counts().iter().map(|&c| ratio(c as i64, 1 << 16)).collect()
}

/// Nests `[0, 1)` once per symbol: each step keeps the sub-interval of the
/// coded symbol, sub-intervals ordered by symbol value.
pub fn rational_encode(symbols: &[usize], pmfs: &[Vec<BigRational>]) -> Result<RationalInterval> {
    if symbols.len() != pmfs.len() {
        return Err(Error::InvalidArgument("one PMF per symbol required".into()));
    }
    let mut iv = RationalInterval::unit();
    for (&s, pmf) in symbols.iter().zip(pmfs) {
        if s >= pmf.len() {
            return Err(Error::InvalidArgument(format!("symbol {s} outside PMF")));
        }
        let below: BigRational = pmf[..s].iter().fold(BigRational::zero(), |a, p| a + p);
        iv.lower = &iv.lower + &iv.width * below;
        iv.width = &iv.width * &pmf[s];
    }
    Ok(iv)
}

/// Reads a byte string as the binary fraction `0.b0 b1 b2 ...`.
pub fn bytes_as_fraction(bytes: &[u8]) -> BigRational {
    let mut num = BigInt::zero();
    for &b in bytes {
        num = (num << 8) + BigInt::from(b);
    }
    let den = BigInt::one() << (8 * bytes.len());
    BigRational::new(num, den)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig_pmf() -> Vec<BigRational> {
        vec![ratio(3, 5), ratio(1, 5), ratio(1, 10), ratio(1, 10)]
    }

    #[test]
    fn figure_sequence_interval() {
        let iv = rational_encode(&[0, 2, 3], &vec![fig_pmf(); 3]).unwrap();
        assert_eq!(iv.lower, ratio(534, 1000));
        assert_eq!(iv.upper(), ratio(540, 1000));
        assert_eq!(iv.width, ratio(3, 500));
    }

    #[test]
    fn single_and_empty() {
        let iv = rational_encode(&[0], &[fig_pmf()]).unwrap();
        assert_eq!((iv.lower.clone(), iv.upper()), (ratio(0, 1), ratio(3, 5)));
        assert_eq!(rational_encode(&[], &[]).unwrap(), RationalInterval::unit());
    }

    #[test]
    fn fraction_reading() {
        assert_eq!(bytes_as_fraction(&[0x80]), ratio(1, 2));
        assert_eq!(bytes_as_fraction(&[0x00, 0x40]), ratio(1, 1024));
    }
}
