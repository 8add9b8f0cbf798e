//! Weighted lower semi-continuous submeasures on the naturals, and the
//! canonical infinite sets they are evaluated against.
//!
//! A weight family assigns every natural a positive exact rational; the
//! submeasure of a finite set is the sum of its weights. Monotonicity,
//! subadditivity and continuity along increasing unions hold by
//! construction for such families, which keeps every axiom testable.

use std::collections::BTreeMap;

use num::rational::BigRational;
use num::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ratio::{balanced_sum, parse_ratio, ratio_to_string, unit_fraction};

/// Number of explicit head terms in stream tail bounds before switching
/// to the telescoping remainder. Larger is tighter and slower.
const TAIL_HEAD_TERMS: u64 = 12;

/// Default search horizon (in set elements) for tail cutoff searches.
pub const DEFAULT_CUTOFF_HORIZON: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubmeasureError {
    #[error("set does not admit a tail bound: {0}")]
    UnsupportedSet(String),
    #[error("no cutoff below bound {bound} within horizon of {horizon} elements")]
    NoCutoffFound { bound: String, horizon: u64 },
}

/// How the weight of each natural is produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WeightKind {
    /// weight(n) = 1 for all n; induces the ideal of finite sets.
    Counting,
    /// weight(n) = 1/(n+1); induces the summable ideal.
    Summable,
    /// Explicit overrides on finitely many points, weight(n) = 1/(n+1)
    /// elsewhere. Overrides must be positive for a valid family; zero or
    /// negative entries are representable so validation can catch them.
    Table(BTreeMap<u64, BigRational>),
}

/// A weight family inducing phi(A) = sum of weights over A for finite A.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submeasure {
    pub name: String,
    pub kind: WeightKind,
}

impl Submeasure {
    pub fn counting() -> Self {
        Submeasure {
            name: "counting".into(),
            kind: WeightKind::Counting,
        }
    }

    pub fn summable() -> Self {
        Submeasure {
            name: "summable".into(),
            kind: WeightKind::Summable,
        }
    }

    pub fn table(name: impl Into<String>, entries: BTreeMap<u64, BigRational>) -> Self {
        Submeasure {
            name: name.into(),
            kind: WeightKind::Table(entries),
        }
    }

    /// The weight of a single point. Total on all of the naturals.
    pub fn weight(&self, n: u64) -> BigRational {
        match &self.kind {
            WeightKind::Counting => BigRational::one(),
            WeightKind::Summable => unit_fraction(n + 1),
            WeightKind::Table(entries) => entries
                .get(&n)
                .cloned()
                .unwrap_or_else(|| unit_fraction(n + 1)),
        }
    }

    /// phi of a finite set, exact.
    pub fn phi<I>(&self, set: I) -> BigRational
    where
        I: IntoIterator<Item = u64>,
    {
        let weights: Vec<BigRational> = set.into_iter().map(|n| self.weight(n)).collect();
        balanced_sum(&weights)
    }

    /// Least weight attained on [0, m]. Vacuously `None` for m < 0.
    pub fn min_weight_upto(&self, m: i64) -> Option<BigRational> {
        if m < 0 {
            return None;
        }
        let m = m as u64;
        match &self.kind {
            WeightKind::Counting => Some(BigRational::one()),
            WeightKind::Summable => Some(unit_fraction(m + 1)),
            WeightKind::Table(entries) => {
                let mut min = unit_fraction(m + 1);
                for (_, w) in entries.range(..=m) {
                    if *w < min {
                        min = w.clone();
                    }
                }
                Some(min)
            }
        }
    }

}

/// Per-axiom outcome of a weight-family validation run.
#[derive(Debug, Clone, Serialize)]
pub struct AxiomCheck {
    pub axiom: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AxiomCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Checks positivity on a prefix and monotonicity/subadditivity of phi
/// exhaustively over subsets of [0, universe]; universe is clamped to 12.
pub fn validate_weights(sub: &Submeasure, prefix: u64, universe: u64) -> ValidationReport {
    let universe = universe.min(12);
    let mut checks = Vec::new();

    let mut positivity_failure = None;
    for n in 0..=prefix {
        if sub.weight(n) <= BigRational::zero() {
            positivity_failure = Some(n);
            break;
        }
    }
    checks.push(AxiomCheck {
        axiom: "positivity".into(),
        passed: positivity_failure.is_none(),
        detail: match positivity_failure {
            None => format!("weight(n) > 0 for n in [0, {prefix}]"),
            Some(n) => format!("weight({n}) <= 0"),
        },
    });

    checks.push(AxiomCheck {
        axiom: "empty-set".into(),
        passed: sub.phi(std::iter::empty()).is_zero(),
        detail: "phi(empty) = 0".into(),
    });

    // phi over all subsets of [0, universe], indexed by bitmask.
    let count = 1usize << (universe + 1);
    let phis: Vec<BigRational> = (0..count)
        .map(|mask| sub.phi((0..=universe).filter(|n| mask >> n & 1 == 1)))
        .collect();

    let mut monotone_ok = true;
    let mut subadditive_ok = true;
    let mut detail_mono = format!("all subset pairs of [0, {universe}]");
    let mut detail_sub = detail_mono.clone();
    for s in 0..count {
        for t in 0..count {
            if s & t == s && phis[s] > phis[t] && monotone_ok {
                monotone_ok = false;
                detail_mono = format!("phi failed monotone at masks {s} <= {t}");
            }
            let union = s | t;
            if phis[union] > &phis[s] + &phis[t] && subadditive_ok {
                subadditive_ok = false;
                detail_sub = format!("phi failed subadditive at masks {s}, {t}");
            }
        }
    }
    checks.push(AxiomCheck {
        axiom: "monotonicity".into(),
        passed: monotone_ok,
        detail: detail_mono,
    });
    checks.push(AxiomCheck {
        axiom: "subadditivity".into(),
        passed: subadditive_ok,
        detail: detail_sub,
    });

    ValidationReport { checks }
}

/// A canonical set from the induced ideal: either explicit and finite, or
/// one of the built-in infinite streams with closed-form tail bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CanonicalIdealSet {
    ExplicitFinite(Vec<u64>),
    /// {k^2 : k >= 2}, enumerated as element(p) = (p+2)^2.
    SquaresShifted,
    /// {2^j : j >= 1}, enumerated as element(p) = 2^(p+1).
    PowersOfTwo,
    /// A strictly increasing finite prefix of an unspecified stream.
    /// Admits no tail bound; tail operations report an unsupported set.
    CustomStream(Vec<u64>),
}

impl CanonicalIdealSet {
    pub fn explicit(mut elements: Vec<u64>) -> Self {
        elements.sort_unstable();
        elements.dedup();
        CanonicalIdealSet::ExplicitFinite(elements)
    }

    pub fn is_stream(&self) -> bool {
        matches!(
            self,
            CanonicalIdealSet::SquaresShifted
                | CanonicalIdealSet::PowersOfTwo
                | CanonicalIdealSet::CustomStream(_)
        )
    }

    /// p-th element in increasing order, if representable in u64.
    pub fn element(&self, p: u64) -> Option<u64> {
        match self {
            CanonicalIdealSet::ExplicitFinite(v) | CanonicalIdealSet::CustomStream(v) => {
                v.get(p as usize).copied()
            }
            CanonicalIdealSet::SquaresShifted => {
                let k = (p as u128) + 2;
                u64::try_from(k * k).ok()
            }
            CanonicalIdealSet::PowersOfTwo => {
                if p + 1 < 64 {
                    Some(1u64 << (p + 1))
                } else {
                    None
                }
            }
        }
    }

    /// Index of x in the enumeration, if x is a member.
    pub fn index_of(&self, x: u64) -> Option<u64> {
        match self {
            CanonicalIdealSet::ExplicitFinite(v) | CanonicalIdealSet::CustomStream(v) => {
                v.binary_search(&x).ok().map(|i| i as u64)
            }
            CanonicalIdealSet::SquaresShifted => {
                let k = x.isqrt();
                if k >= 2 && k * k == x {
                    Some(k - 2)
                } else {
                    None
                }
            }
            CanonicalIdealSet::PowersOfTwo => {
                if x >= 2 && x.is_power_of_two() {
                    Some(x.trailing_zeros() as u64 - 1)
                } else {
                    None
                }
            }
        }
    }

    pub fn contains(&self, x: u64) -> bool {
        self.index_of(x).is_some()
    }

    /// Number of elements <= m (the offset of the first element > m).
    pub fn count_upto(&self, m: i64) -> u64 {
        if m < 0 {
            return 0;
        }
        let m = m as u64;
        match self {
            CanonicalIdealSet::ExplicitFinite(v) | CanonicalIdealSet::CustomStream(v) => {
                v.partition_point(|&x| x <= m) as u64
            }
            CanonicalIdealSet::SquaresShifted => {
                let k = m.isqrt(); // largest k with k^2 <= m
                k.saturating_sub(1) // k ranges over 2..=k
            }
            CanonicalIdealSet::PowersOfTwo => {
                if m < 2 {
                    0
                } else {
                    m.ilog2() as u64
                }
            }
        }
    }

    /// Elements in the interval (lo, hi], ascending.
    pub fn elements_in(&self, lo: i64, hi: i64) -> Vec<u64> {
        if hi <= lo {
            return Vec::new();
        }
        let start = self.count_upto(lo);
        let end = self.count_upto(hi);
        (start..end).filter_map(|p| self.element(p)).collect()
    }
}

/// Exact phi of the portion of `set` at or below m. Finite by construction.
pub fn phi_upto(sub: &Submeasure, set: &CanonicalIdealSet, m: i64) -> BigRational {
    sub.phi(set.elements_in(-1, m))
}

/// An exact rational upper bound on phi(set \ [0, m]).
///
/// Exact for explicit finite sets. For the built-in streams the bound is
/// a short head sum plus a telescoping remainder, strictly above the true
/// tail and non-increasing in m. Custom streams are rejected, as is any
/// family whose weights are not eventually non-increasing along the
/// stream (counting over an infinite stream has no finite tail).
pub fn tail_phi(
    sub: &Submeasure,
    set: &CanonicalIdealSet,
    m: i64,
) -> Result<BigRational, SubmeasureError> {
    match set {
        CanonicalIdealSet::ExplicitFinite(v) => {
            Ok(sub.phi(v.iter().copied().filter(|&x| (x as i128) > m as i128)))
        }
        CanonicalIdealSet::CustomStream(_) => Err(SubmeasureError::UnsupportedSet(
            "custom stream carries no tail-bound function".into(),
        )),
        CanonicalIdealSet::SquaresShifted => match &sub.kind {
            WeightKind::Counting => Err(SubmeasureError::UnsupportedSet(
                "counting weights have no vanishing tail on an infinite set".into(),
            )),
            WeightKind::Summable => Ok(squares_tail_bound(m)),
            WeightKind::Table(entries) => {
                let base = squares_tail_bound(m);
                let overrides = sub.phi(
                    entries
                        .keys()
                        .copied()
                        .filter(|&x| (x as i128) > m as i128 && set.contains(x)),
                );
                Ok(base + overrides)
            }
        },
        CanonicalIdealSet::PowersOfTwo => match &sub.kind {
            WeightKind::Counting => Err(SubmeasureError::UnsupportedSet(
                "counting weights have no vanishing tail on an infinite set".into(),
            )),
            WeightKind::Summable => Ok(powers_tail_bound(m)),
            WeightKind::Table(entries) => {
                let base = powers_tail_bound(m);
                let overrides = sub.phi(
                    entries
                        .keys()
                        .copied()
                        .filter(|&x| (x as i128) > m as i128 && set.contains(x)),
                );
                Ok(base + overrides)
            }
        },
    }
}

/// Upper bound on sum over k >= K of 1/(k^2+1) where K is the least k >= 2
/// with k^2 > m: twelve explicit terms, then the telescoping remainder
/// sum 1/(k^2 - 1/4) = sum (1/(k-1/2) - 1/(k+1/2)) = 2/(2M+1) from M+1.
fn squares_tail_bound(m: i64) -> BigRational {
    let first_k = if m < 4 {
        2u64
    } else {
        let m = m as u64;
        let r = m.isqrt();
        // least k with k^2 > m
        if (r + 1) * (r + 1) > m && r * r <= m {
            r + 1
        } else {
            r
        }
        .max(2)
    };
    let mut head = Vec::new();
    for k in first_k..first_k + TAIL_HEAD_TERMS {
        head.push(unit_fraction(k * k + 1));
    }
    let last_explicit = first_k + TAIL_HEAD_TERMS - 1;
    let remainder = BigRational::new(2.into(), (2 * last_explicit + 1).into());
    balanced_sum(&head) + remainder
}

/// Upper bound on sum over j >= J of 1/(2^j+1) where J is the least j >= 1
/// with 2^j > m: dominated by the geometric series, 2^(1-J).
fn powers_tail_bound(m: i64) -> BigRational {
    let first_j = if m < 2 { 1 } else { (m as u64).ilog2() as u64 + 1 };
    if first_j >= 63 {
        // smaller than any weight representable over u64 points
        return unit_fraction(u64::MAX) / BigRational::from_integer(2.into());
    }
    unit_fraction(1u64 << (first_j - 1))
}

/// Least sampled m with tail_phi(sub, set, m) < bound. Candidates are
/// m = 0 followed by the set's elements in increasing order.
pub fn find_tail_cutoff(
    sub: &Submeasure,
    set: &CanonicalIdealSet,
    bound: &BigRational,
    horizon: u64,
) -> Result<u64, SubmeasureError> {
    let candidates = std::iter::once(Some(0u64)).chain((0..horizon).map(|p| set.element(p)));
    for cand in candidates {
        let Some(m) = cand else { break };
        if tail_phi(sub, set, m as i64)? < *bound {
            return Ok(m);
        }
    }
    Err(SubmeasureError::NoCutoffFound {
        bound: ratio_to_string(bound),
        horizon,
    })
}

// --- serialization -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct SubmeasureJson {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    table: Vec<(u64, String)>,
}

impl Submeasure {
    pub fn to_json(&self) -> serde_json::Value {
        let (kind, table) = match &self.kind {
            WeightKind::Counting => ("counting", Vec::new()),
            WeightKind::Summable => ("summable", Vec::new()),
            WeightKind::Table(entries) => (
                "table",
                entries
                    .iter()
                    .map(|(n, w)| (*n, ratio_to_string(w)))
                    .collect(),
            ),
        };
        serde_json::to_value(SubmeasureJson {
            name: self.name.clone(),
            kind: kind.into(),
            table,
        })
        .expect("submeasure serialization cannot fail")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self, String> {
        let parsed: SubmeasureJson =
            serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
        let kind = match parsed.kind.as_str() {
            "counting" => WeightKind::Counting,
            "summable" => WeightKind::Summable,
            "table" => {
                let mut entries = BTreeMap::new();
                for (n, w) in parsed.table {
                    entries.insert(n, parse_ratio(&w)?);
                }
                WeightKind::Table(entries)
            }
            other => return Err(format!("unknown weight kind {other:?}")),
        };
        Ok(Submeasure {
            name: parsed.name,
            kind,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratio::ratio;

    #[test]
    fn phi_counting_is_cardinality() {
        let sub = Submeasure::counting();
        assert_eq!(sub.phi([5, 7, 9]), ratio(3, 1));
    }

    #[test]
    fn phi_empty_is_zero() {
        let sub = Submeasure::summable();
        assert!(sub.phi(std::iter::empty()).is_zero());
    }

    #[test]
    fn phi_summable_direct_weights() {
        // 1 + 1/2 + 1/4
        let sub = Submeasure::summable();
        assert_eq!(sub.phi([0, 1, 3]), ratio(7, 4));
    }

    #[test]
    fn tail_explicit_finite_exact() {
        let sub = Submeasure::summable();
        let set = CanonicalIdealSet::explicit(vec![4, 9, 16]);
        assert_eq!(tail_phi(&sub, &set, 9).unwrap(), ratio(1, 17));
        assert_eq!(tail_phi(&sub, &set, 16).unwrap(), ratio(0, 1));
        let counting = Submeasure::counting();
        assert_eq!(tail_phi(&counting, &set, 16).unwrap(), ratio(0, 1));
    }

    #[test]
    fn tail_squares_below_reciprocal_square_sum() {
        // Bound at m = 100 must upper-bound the true tail yet stay below
        // sum_{k >= 11} 1/k^2. Oracle: partial sums; the comparison
        // series is bounded below by its partial sum plus the
        // telescoping underestimate sum_{k > N} 1/k^2 > 1/(N+1).
        let sub = Submeasure::summable();
        let bound = tail_phi(&sub, &CanonicalIdealSet::SquaresShifted, 100).unwrap();
        let true_partial: BigRational = {
            let terms: Vec<_> = (11u64..=400).map(|k| unit_fraction(k * k + 1)).collect();
            balanced_sum(&terms)
        };
        let oracle_lower: BigRational = {
            let terms: Vec<_> = (11u64..=60).map(|k| unit_fraction(k * k)).collect();
            balanced_sum(&terms) + unit_fraction(61)
        };
        assert!(bound > true_partial, "bound must dominate the true tail");
        assert!(
            bound <= oracle_lower,
            "bound must not exceed sum 1/k^2 from 11"
        );
    }

    #[test]
    fn tail_bound_non_increasing_and_vanishing() {
        let sub = Submeasure::summable();
        for set in [
            CanonicalIdealSet::SquaresShifted,
            CanonicalIdealSet::PowersOfTwo,
        ] {
            let mut prev: Option<BigRational> = None;
            for m in [0i64, 4, 10, 100, 1000, 10_000, 1_000_000] {
                let t = tail_phi(&sub, &set, m).unwrap();
                if let Some(p) = prev {
                    assert!(t <= p, "tail bound increased at m={m}");
                }
                prev = Some(t);
            }
            assert!(tail_phi(&sub, &set, 1_000_000_000).unwrap() < ratio(1, 10_000));
        }
    }

    #[test]
    fn tail_unsupported_cases() {
        let sub = Submeasure::counting();
        assert!(matches!(
            tail_phi(&sub, &CanonicalIdealSet::SquaresShifted, 5),
            Err(SubmeasureError::UnsupportedSet(_))
        ));
        let sub = Submeasure::summable();
        assert!(matches!(
            tail_phi(&sub, &CanonicalIdealSet::CustomStream(vec![1, 2, 3]), 0),
            Err(SubmeasureError::UnsupportedSet(_))
        ));
    }

    #[test]
    fn cutoff_explicit_examples() {
        let sub = Submeasure::summable();
        let set = CanonicalIdealSet::explicit(vec![4, 9]);
        // tail after 4 is 1/10, not below 1/100; tail after 9 is 0.
        assert_eq!(find_tail_cutoff(&sub, &set, &ratio(1, 100), 100).unwrap(), 9);
        // the whole set weighs 1/5 + 1/10 < 2 already
        assert_eq!(find_tail_cutoff(&sub, &set, &ratio(2, 1), 100).unwrap(), 0);
    }

    #[test]
    fn cutoff_squares_brute_force_oracle() {
        let sub = Submeasure::summable();
        let set = CanonicalIdealSet::SquaresShifted;
        let m = find_tail_cutoff(&sub, &set, &ratio(1, 10), 10_000).unwrap();
        // Oracle: partial summation confirms the tail past m is strictly
        // below 1/10 (finite partial sums underestimate the true tail,
        // and the returned bound already dominates it).
        let first_k = (m as u64).isqrt() + 1;
        let partial: BigRational = balanced_sum(
            &(first_k..first_k + 2000)
                .map(|k| unit_fraction(k * k + 1))
                .collect::<Vec<_>>(),
        );
        assert!(partial < ratio(1, 10));
        assert!(tail_phi(&sub, &set, m as i64).unwrap() < ratio(1, 10));
        // and m is least among sampled candidates
        if let Some(idx) = set.index_of(m) {
            if idx > 0 {
                let prev = set.element(idx - 1).unwrap();
                assert!(tail_phi(&sub, &set, prev as i64).unwrap() >= ratio(1, 10));
            }
        }
    }

    #[test]
    fn cutoff_horizon_error() {
        // the squares tail cannot drop below 10^-9 within ten candidates
        let sub = Submeasure::summable();
        assert!(matches!(
            find_tail_cutoff(
                &sub,
                &CanonicalIdealSet::SquaresShifted,
                &ratio(1, 1_000_000_000),
                10
            ),
            Err(SubmeasureError::NoCutoffFound { .. })
        ));
    }

    #[test]
    fn validation_counting_and_summable_pass() {
        assert!(validate_weights(&Submeasure::counting(), 64, 8).all_passed());
        assert!(validate_weights(&Submeasure::summable(), 64, 8).all_passed());
    }

    #[test]
    fn validation_flags_zero_weight() {
        let mut entries = BTreeMap::new();
        entries.insert(3u64, ratio(0, 1));
        let bad = Submeasure::table("bad", entries);
        let report = validate_weights(&bad, 8, 6);
        assert!(!report.all_passed());
        let pos = report
            .checks
            .iter()
            .find(|c| c.axiom == "positivity")
            .unwrap();
        assert!(!pos.passed);
        assert!(pos.detail.contains("weight(3)"));
    }

    #[test]
    fn canonical_set_enumeration() {
        let sq = CanonicalIdealSet::SquaresShifted;
        assert_eq!(sq.element(0), Some(4));
        assert_eq!(sq.element(3), Some(25));
        assert_eq!(sq.index_of(25), Some(3));
        assert_eq!(sq.index_of(26), None);
        assert_eq!(sq.count_upto(25), 4);
        assert_eq!(sq.elements_in(4, 25), vec![9, 16, 25]);

        let p2 = CanonicalIdealSet::PowersOfTwo;
        assert_eq!(p2.element(0), Some(2));
        assert_eq!(p2.element(4), Some(32));
        assert_eq!(p2.index_of(32), Some(4));
        assert_eq!(p2.count_upto(32), 5);
    }

    #[test]
    fn submeasure_json_roundtrip() {
        let mut entries = BTreeMap::new();
        entries.insert(2u64, ratio(1, 7));
        for sub in [
            Submeasure::counting(),
            Submeasure::summable(),
            Submeasure::table("custom", entries),
        ] {
            let json = sub.to_json();
            let back = Submeasure::from_json(&json).unwrap();
            assert_eq!(sub, back);
        }
    }
}
