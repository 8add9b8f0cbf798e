//! Finite-support permutations of the naturals: sparse maps of moved
//! points, group operations, the weighted metric and identity
//! neighborhoods.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use num::rational::BigRational;
use serde_json::Value;

use crate::submeasure::Submeasure;

/// A permutation of the naturals moving only finitely many points.
/// Only non-fixed points are stored; the identity is the empty map.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FinitePermutation {
    moved: BTreeMap<u64, u64>,
}

/// Multiset of cycle lengths (each >= 2), sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleType(pub Vec<usize>);

impl FinitePermutation {
    pub fn identity() -> Self {
        FinitePermutation::default()
    }

    /// Builds from (point, image) pairs. Fixed points are dropped; the
    /// map must be injective with matching key and value sets.
    pub fn from_pairs<I>(pairs: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = (u64, u64)>,
    {
        let mut moved = BTreeMap::new();
        for (n, img) in pairs {
            if n == img {
                continue;
            }
            if moved.insert(n, img).is_some() {
                return Err(format!("duplicate mapping for point {n}"));
            }
        }
        let keys: BTreeSet<u64> = moved.keys().copied().collect();
        let values: BTreeSet<u64> = moved.values().copied().collect();
        if values.len() != moved.len() {
            return Err("images are not distinct".into());
        }
        if keys != values {
            return Err("moved points and their images do not coincide as sets".into());
        }
        Ok(FinitePermutation { moved })
    }

    /// Builds from disjoint cycles, e.g. `[[0,1],[4,9,16]]`.
    pub fn from_cycles(cycles: &[Vec<u64>]) -> Result<Self, String> {
        let mut pairs = Vec::new();
        for cycle in cycles {
            if cycle.len() < 2 {
                continue;
            }
            for i in 0..cycle.len() {
                pairs.push((cycle[i], cycle[(i + 1) % cycle.len()]));
            }
        }
        Self::from_pairs(pairs)
    }

    pub fn transposition(a: u64, b: u64) -> Self {
        Self::from_pairs([(a, b), (b, a)]).expect("a transposition is always valid")
    }

    pub fn is_identity(&self) -> bool {
        self.moved.is_empty()
    }

    pub fn apply(&self, x: u64) -> u64 {
        self.moved.get(&x).copied().unwrap_or(x)
    }

    /// The set of non-fixed points; equals the support of the inverse.
    pub fn support(&self) -> BTreeSet<u64> {
        self.moved.keys().copied().collect()
    }

    pub fn support_len(&self) -> usize {
        self.moved.len()
    }

    pub fn max_support(&self) -> Option<u64> {
        self.moved.keys().next_back().copied()
    }

    pub fn moved_pairs(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.moved.iter().map(|(&n, &img)| (n, img))
    }

    /// (f o g)(x) = f(g(x)): apply g first, then f.
    pub fn compose(f: &Self, g: &Self) -> Self {
        let mut pairs = Vec::new();
        let mut domain: BTreeSet<u64> = f.moved.keys().copied().collect();
        domain.extend(g.moved.keys().copied());
        for x in domain {
            pairs.push((x, f.apply(g.apply(x))));
        }
        Self::from_pairs(pairs).expect("composition of permutations is a permutation")
    }

    pub fn inverse(&self) -> Self {
        let pairs: Vec<(u64, u64)> = self.moved.iter().map(|(&n, &img)| (img, n)).collect();
        Self::from_pairs(pairs).expect("inverse of a permutation is a permutation")
    }

    /// h g h^{-1}; support is the image of g's support under h.
    pub fn conjugate(h: &Self, g: &Self) -> Self {
        let pairs: Vec<(u64, u64)> = g
            .moved
            .iter()
            .map(|(&n, &img)| (h.apply(n), h.apply(img)))
            .collect();
        Self::from_pairs(pairs).expect("conjugate of a permutation is a permutation")
    }

    /// {n : f(n) != g(n)}; empty iff f = g.
    pub fn diff_set(f: &Self, g: &Self) -> BTreeSet<u64> {
        let mut candidates: BTreeSet<u64> = f.moved.keys().copied().collect();
        candidates.extend(g.moved.keys().copied());
        candidates
            .into_iter()
            .filter(|&x| f.apply(x) != g.apply(x))
            .collect()
    }

    /// True iff f maps [0, m] onto [0, m]; vacuous for m = -1.
    pub fn is_segment_invariant(&self, m: i64) -> bool {
        if m < 0 {
            return true;
        }
        let m = m as u64;
        self.moved
            .range(..=m)
            .all(|(_, &img)| img <= m)
    }

    /// True iff f and g agree pointwise on [0, m].
    pub fn restrict_equal(f: &Self, g: &Self, m: i64) -> bool {
        if m < 0 {
            return true;
        }
        let m = m as u64;
        Self::diff_set(f, g).range(..=m).next().is_none()
    }

    pub fn cycle_decomposition(&self) -> Vec<Vec<u64>> {
        let mut seen = BTreeSet::new();
        let mut cycles = Vec::new();
        for &start in self.moved.keys() {
            if seen.contains(&start) {
                continue;
            }
            let mut cycle = vec![start];
            seen.insert(start);
            let mut x = self.apply(start);
            while x != start {
                cycle.push(x);
                seen.insert(x);
                x = self.apply(x);
            }
            cycles.push(cycle);
        }
        cycles
    }

    pub fn cycle_type(&self) -> CycleType {
        let mut lengths: Vec<usize> = self
            .cycle_decomposition()
            .iter()
            .map(|c| c.len())
            .collect();
        lengths.sort_unstable();
        CycleType(lengths)
    }

    /// Sorted pair-list JSON form; the round-trip is bit-exact.
    pub fn to_json(&self) -> Value {
        Value::Array(
            self.moved
                .iter()
                .map(|(&n, &img)| Value::Array(vec![Value::from(n), Value::from(img)]))
                .collect(),
        )
    }

    /// Accepts the pair-list form or a cycle-notation string.
    pub fn from_json(value: &Value) -> Result<Self, String> {
        match value {
            Value::String(s) => Self::parse_cycles(s),
            Value::Array(items) => {
                let mut pairs = Vec::with_capacity(items.len());
                for item in items {
                    let pair = item
                        .as_array()
                        .filter(|a| a.len() == 2)
                        .ok_or_else(|| format!("expected [n, image] pair, got {item}"))?;
                    let n = pair[0]
                        .as_u64()
                        .ok_or_else(|| format!("expected natural, got {}", pair[0]))?;
                    let img = pair[1]
                        .as_u64()
                        .ok_or_else(|| format!("expected natural, got {}", pair[1]))?;
                    pairs.push((n, img));
                }
                Self::from_pairs(pairs)
            }
            other => Err(format!("expected pair list or cycle string, got {other}")),
        }
    }

    /// Parses cycle notation like "(0 1)(4 9 16)"; "()" is the identity.
    pub fn parse_cycles(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.is_empty() || s == "()" {
            return Ok(Self::identity());
        }
        let mut cycles = Vec::new();
        let mut rest = s;
        while !rest.is_empty() {
            let open = rest
                .find('(')
                .ok_or_else(|| format!("expected '(' in cycle notation near {rest:?}"))?;
            let close = rest[open..]
                .find(')')
                .map(|i| open + i)
                .ok_or_else(|| format!("unbalanced parenthesis in {s:?}"))?;
            let body = &rest[open + 1..close];
            let mut cycle = Vec::new();
            for tok in body.split_whitespace() {
                cycle.push(
                    tok.parse::<u64>()
                        .map_err(|e| format!("bad point {tok:?}: {e}"))?,
                );
            }
            let unique: BTreeSet<u64> = cycle.iter().copied().collect();
            if unique.len() != cycle.len() {
                return Err(format!("repeated point in cycle ({body})"));
            }
            cycles.push(cycle);
            rest = rest[close + 1..].trim_start();
        }
        Self::from_cycles(&cycles)
    }
}

impl fmt::Display for FinitePermutation {
    /// Cycle-notation rendering for human output.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_identity() {
            return write!(f, "()");
        }
        for cycle in self.cycle_decomposition() {
            write!(f, "(")?;
            for (i, x) in cycle.iter().enumerate() {
                if i > 0 {
                    write!(f, " ")?;
                }
                write!(f, "{x}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// d(f, g) = phi({f != g}); zero iff f = g since weights are positive.
pub fn distance(sub: &Submeasure, f: &FinitePermutation, g: &FinitePermutation) -> BigRational {
    sub.phi(FinitePermutation::diff_set(f, g))
}

/// Membership in the identity neighborhood: phi(supp f) < eps, strict.
pub fn in_v_epsilon(sub: &Submeasure, f: &FinitePermutation, eps: &BigRational) -> bool {
    sub.phi(f.support()) < *eps
}
