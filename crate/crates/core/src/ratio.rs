//! Exact rational helpers: `p/q` string form and balanced summation.
//!
//! All certificate arithmetic in this crate goes through `BigRational`.
//! Floating point never appears outside optional pretty-printing.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};

/// Renders a rational as `p/q` in lowest terms, sign on the numerator.
/// Integers render with an explicit denominator (`3/1`, `0/1`) so the
/// format round-trips without a special case.
pub fn ratio_to_string(q: &BigRational) -> String {
    format!("{}/{}", q.numer(), q.denom())
}

/// Parses `p/q` or a bare integer `p`. Denominator must be positive.
pub fn parse_ratio(s: &str) -> Result<BigRational, String> {
    let s = s.trim();
    let (num_str, den_str) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s, "1"),
    };
    let numer: BigInt = num_str
        .parse()
        .map_err(|e| format!("bad numerator {num_str:?}: {e}"))?;
    let denom: BigInt = den_str
        .parse()
        .map_err(|e| format!("bad denominator {den_str:?}: {e}"))?;
    if denom <= BigInt::zero() {
        return Err(format!("denominator must be positive in {s:?}"));
    }
    Ok(BigRational::new(numer, denom))
}

/// Sums a slice of rationals by divide and conquer so denominators stay
/// balanced, accumulating unreduced fractions and normalizing once at
/// the end. Sequential reduced folding is far slower: the denominators
/// here are nearly pairwise coprime, so intermediate gcds only burn
/// time, and unbalanced additions go quadratic in the digit count.
pub fn balanced_sum(terms: &[BigRational]) -> BigRational {
    let (numer, denom) = raw_sum(terms);
    BigRational::new(numer, denom)
}

fn raw_sum(terms: &[BigRational]) -> (BigInt, BigInt) {
    match terms.len() {
        0 => (BigInt::zero(), BigInt::one()),
        1 => (terms[0].numer().clone(), terms[0].denom().clone()),
        n => {
            let (lo, hi) = terms.split_at(n / 2);
            let (a, b) = raw_sum(lo);
            let (c, d) = raw_sum(hi);
            (&a * &d + &c * &b, b * d)
        }
    }
}

/// `1/d` for a positive integer denominator.
pub fn unit_fraction(d: u64) -> BigRational {
    BigRational::new(BigInt::one(), BigInt::from(d))
}

/// Rational from an integer pair.
pub fn ratio(p: i64, q: u64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

/// Decimal rendering for human output only; never used in certificates.
pub fn approx_decimal(q: &BigRational, digits: usize) -> String {
    let sign = if q.is_negative() { "-" } else { "" };
    let q = q.abs();
    let scale = BigInt::from(10u32).pow(digits as u32);
    let scaled = (q * BigRational::from_integer(scale.clone())).trunc();
    let scaled = scaled.to_integer();
    let whole = &scaled / &scale;
    let frac = &scaled % &scale;
    format!("{sign}{whole}.{:0>width$}", frac.to_string(), width = digits)
}
