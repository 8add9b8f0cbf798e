//! The block schedule realizing a universal tuple of permutations
//! supported on a canonical infinite set.
//!
//! The base set is enumerated in increasing order and tiled by
//! consecutive disjoint blocks. Each block carries a pattern tuple: one
//! permutation of {0..k-1} per coordinate, acting on the block's points
//! through the order isomorphism. Most blocks are size-1 identity
//! fillers. Pattern variety is concentrated in "bursts": finite runs of
//! blocks placed at geometrically spaced offsets, each containing three
//! full cycles of every pattern tuple of size at most min(cap, 3),
//! followed by a chunk of the full capped universe that advances from
//! burst to burst. The geometric spacing keeps the weight of the moved
//! points beyond any stage summably small, which is what makes
//! finite-support approximants with very small distance to the tuple
//! exist at every scale; the per-burst small-universe cycles keep every
//! small pattern reachable just past any stage.

use std::collections::BTreeMap;

use num::bigint::BigInt;
use num::rational::BigRational;
use num::One;
use serde_json::{json, Value};
use thiserror::Error;

use crate::permutation::FinitePermutation;
use crate::ratio::balanced_sum;
use crate::submeasure::{CanonicalIdealSet, Submeasure, SubmeasureError};

/// Offset of the first burst in the base enumeration.
const FIRST_BURST_OFFSET: u64 = 200;
/// Ratio between consecutive burst start offsets.
const BURST_GAP_FACTOR: u64 = 100;
/// Copies of the small universe per burst.
const SMALL_CYCLES: usize = 3;
/// Tuples of the full universe appended per burst.
const CHUNK_LEN: u128 = 64;
/// Largest supported block size; keeps tuple ranks within u128.
pub const MAX_CAP: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("invalid base set for a schedule: {0}")]
    InvalidBase(String),
    #[error("schedule parameters too large: {0}")]
    TooLarge(String),
    #[error("pattern on {have} points exceeds the schedule cap {cap}")]
    PatternTooLarge { have: usize, cap: usize },
    #[error("search horizon exceeded: {0}")]
    SearchHorizonExceeded(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error(transparent)]
    Submeasure(#[from] SubmeasureError),
}

/// One permutation of {0..k-1} per coordinate of the tuple.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PatternTuple {
    perms: Vec<Vec<usize>>,
}

impl PatternTuple {
    /// Orbits of the joint action on {0..k-1}, each sorted, ordered by
    /// their minima.
    pub fn joint_orbits(&self) -> Vec<Vec<usize>> {
        let k = self.k();
        let mut parent: Vec<usize> = (0..k).collect();
        fn find(parent: &mut [usize], mut i: usize) -> usize {
            while parent[i] != i {
                parent[i] = parent[parent[i]];
                i = parent[i];
            }
            i
        }
        for p in &self.perms {
            for (l, &img) in p.iter().enumerate() {
                let (a, b) = (find(&mut parent, l), find(&mut parent, img));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for l in 0..k {
            let root = find(&mut parent, l);
            groups.entry(root).or_default().push(l);
        }
        groups.into_values().collect()
    }

    /// The tuple restricted to an invariant set of locals, renumbered.
    pub fn restricted_to(&self, locals: &[usize]) -> PatternTuple {
        let perms = self
            .perms
            .iter()
            .map(|p| {
                locals
                    .iter()
                    .map(|&l| {
                        locals
                            .binary_search(&p[l])
                            .expect("locals are invariant under the tuple")
                    })
                    .collect()
            })
            .collect();
        PatternTuple { perms }
    }

    pub fn new(perms: Vec<Vec<usize>>) -> Result<Self, ScheduleError> {
        if perms.is_empty() {
            return Err(ScheduleError::InvalidQuery("empty pattern tuple".into()));
        }
        let k = perms[0].len();
        for p in &perms {
            if p.len() != k || !is_permutation(p) {
                return Err(ScheduleError::InvalidQuery(format!(
                    "coordinate is not a permutation of 0..{k}"
                )));
            }
        }
        Ok(PatternTuple { perms })
    }

    pub fn identity(arity: usize, k: usize) -> Self {
        PatternTuple {
            perms: vec![(0..k).collect(); arity],
        }
    }

    pub fn k(&self) -> usize {
        self.perms[0].len()
    }

    pub fn arity(&self) -> usize {
        self.perms.len()
    }

    pub fn coordinate(&self, i: usize) -> &[usize] {
        &self.perms[i]
    }

    pub fn is_identity(&self) -> bool {
        self.perms
            .iter()
            .all(|p| p.iter().enumerate().all(|(i, &v)| i == v))
    }

    /// Local indices moved by at least one coordinate.
    pub fn moved_positions(&self) -> Vec<usize> {
        (0..self.k())
            .filter(|&l| self.perms.iter().any(|p| p[l] != l))
            .collect()
    }

    /// One-line cycle notation per coordinate, for exports.
    pub fn render(&self) -> Vec<String> {
        self.perms
            .iter()
            .map(|p| {
                let pairs: Vec<(u64, u64)> = p
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| (i as u64, v as u64))
                    .collect();
                FinitePermutation::from_pairs(pairs)
                    .expect("pattern coordinate is a permutation")
                    .to_string()
            })
            .collect()
    }
}

fn is_permutation(p: &[usize]) -> bool {
    let mut seen = vec![false; p.len()];
    for &v in p {
        if v >= p.len() || seen[v] {
            return false;
        }
        seen[v] = true;
    }
    true
}

/// Lehmer rank of a permutation given as an image table; 0 is the identity.
fn lehmer_rank(perm: &[usize]) -> u128 {
    let k = perm.len();
    let mut rank: u128 = 0;
    for i in 0..k {
        let smaller_later = (i + 1..k).filter(|&j| perm[j] < perm[i]).count() as u128;
        rank = rank * (k - i) as u128 + smaller_later;
    }
    rank
}

fn lehmer_unrank(k: usize, mut rank: u128) -> Vec<usize> {
    let mut digits = vec![0u128; k];
    for i in (0..k).rev() {
        let base = (k - i) as u128;
        digits[i] = rank % base;
        rank /= base;
    }
    let mut pool: Vec<usize> = (0..k).collect();
    digits
        .into_iter()
        .map(|d| pool.remove(d as usize))
        .collect()
}

/// A joint-orbit piece of a block: a set of local indices invariant
/// under every coordinate, matchable on its own.
#[derive(Debug, Clone)]
struct PieceRef {
    pos: usize,
    locals: Vec<usize>,
}

/// A contiguous run of pattern blocks within the base enumeration.
#[derive(Debug, Clone)]
struct Burst {
    start_offset: u64,
    first_block: u64,
    /// Offset corrections accumulated through the end of this burst:
    /// total (offsets - blocks) of this and all earlier bursts.
    corr_after: u64,
    ranks: Vec<u128>,
    tuples: Vec<PatternTuple>,
    /// Relative start offset per block, plus the total length.
    offset_prefix: Vec<u64>,
    /// Sub-tuple rank -> matchable pieces, in (pos, min local) order.
    /// Non-transitive tuples are also entered whole under their own
    /// rank, ahead of their pieces.
    piece_dir: std::collections::HashMap<u128, Vec<PieceRef>>,
}

impl Burst {
    fn blocks(&self) -> u64 {
        self.ranks.len() as u64
    }
    fn offsets(&self) -> u64 {
        *self.offset_prefix.last().expect("prefix never empty")
    }
    fn end_offset(&self) -> u64 {
        self.start_offset + self.offsets()
    }
}

/// Location of a single block: where it starts, how wide it is, and the
/// pattern it carries (fillers carry none, meaning identity).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockView {
    pub index: u64,
    pub start_offset: u64,
    pub size: u64,
    burst: Option<(usize, usize)>,
}

/// Deterministic assignment of pattern tuples to consecutive blocks of
/// the base set; every tuple with k <= cap occurs at infinitely many
/// block indices.
#[derive(Debug, Clone)]
pub struct BlockSchedule {
    n: usize,
    cap: usize,
    base: CanonicalIdealSet,
    layer_counts: Vec<u128>,
    small_universe: u128,
    total_universe: u128,
    bursts: Vec<Burst>,
}

impl BlockSchedule {
    /// Builds the schedule for tuples of arity n+1 over an infinite base
    /// stream, realizing every pattern tuple with k <= max_block_size.
    pub fn build(
        n: usize,
        base: CanonicalIdealSet,
        max_block_size: usize,
    ) -> Result<Self, ScheduleError> {
        match &base {
            CanonicalIdealSet::SquaresShifted | CanonicalIdealSet::PowersOfTwo => {}
            CanonicalIdealSet::ExplicitFinite(_) => {
                return Err(ScheduleError::InvalidBase(
                    "schedules require an infinite stream base".into(),
                ));
            }
            CanonicalIdealSet::CustomStream(_) => {
                return Err(ScheduleError::InvalidBase(
                    "custom streams carry only a finite prefix; blocks beyond it would be undefined"
                        .into(),
                ));
            }
        }
        if max_block_size == 0 {
            return Err(ScheduleError::TooLarge("cap must be at least 1".into()));
        }
        if max_block_size > MAX_CAP {
            return Err(ScheduleError::TooLarge(format!(
                "cap {max_block_size} exceeds supported maximum {MAX_CAP}"
            )));
        }
        // layer k holds (k!)^(n+1) tuples; overflow rejects the build
        let mut layer_counts = vec![0u128; max_block_size + 1];
        for (k, slot) in layer_counts.iter_mut().enumerate().skip(1) {
            let mut fact: u128 = 1;
            for v in 2..=k as u128 {
                fact = fact
                    .checked_mul(v)
                    .ok_or_else(|| ScheduleError::TooLarge("factorial overflow".into()))?;
            }
            let mut count: u128 = 1;
            for _ in 0..=n {
                count = count
                    .checked_mul(fact)
                    .ok_or_else(|| ScheduleError::TooLarge("tuple universe overflow".into()))?;
            }
            *slot = count;
        }
        let small_cap = max_block_size.min(3);
        let small_universe: u128 = layer_counts[1..=small_cap].iter().sum();
        let total_universe: u128 = layer_counts[1..].iter().sum();

        let mut schedule = BlockSchedule {
            n,
            cap: max_block_size,
            base,
            layer_counts,
            small_universe,
            total_universe,
            bursts: Vec::new(),
        };
        schedule.materialize_bursts();
        Ok(schedule)
    }

    pub fn arity(&self) -> usize {
        self.n + 1
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn base(&self) -> &CanonicalIdealSet {
        &self.base
    }

    fn layer_start(&self, k: usize) -> u128 {
        self.layer_counts[1..k].iter().sum()
    }

    /// Global rank of a tuple: layers by size, coordinates in mixed
    /// radix of Lehmer ranks within a layer.
    pub fn tuple_rank(&self, t: &PatternTuple) -> Result<u128, ScheduleError> {
        let k = t.k();
        if k == 0 || k > self.cap {
            return Err(ScheduleError::PatternTooLarge {
                have: k,
                cap: self.cap,
            });
        }
        if t.arity() != self.arity() {
            return Err(ScheduleError::InvalidQuery(format!(
                "tuple arity {} does not match schedule arity {}",
                t.arity(),
                self.arity()
            )));
        }
        let fact: u128 = (2..=k as u128).product();
        let mut within: u128 = 0;
        for i in 0..t.arity() {
            within = within * fact + lehmer_rank(t.coordinate(i));
        }
        Ok(self.layer_start(k) + within)
    }

    pub fn tuple_of_rank(&self, rank: u128) -> PatternTuple {
        debug_assert!(rank < self.total_universe);
        let mut k = 1;
        let mut start = 0u128;
        while rank >= start + self.layer_counts[k] {
            start += self.layer_counts[k];
            k += 1;
        }
        let mut within = rank - start;
        let fact: u128 = (2..=k as u128).product();
        let mut ranks = vec![0u128; self.arity()];
        for slot in ranks.iter_mut().rev() {
            *slot = within % fact;
            within /= fact;
        }
        PatternTuple {
            perms: ranks.into_iter().map(|r| lehmer_unrank(k, r)).collect(),
        }
    }

    fn burst_rank_list(&self, burst_idx: u128) -> Vec<u128> {
        let mut ranks = Vec::new();
        for _ in 0..SMALL_CYCLES {
            for r in 0..self.small_universe {
                ranks.push(r);
            }
        }
        let chunk_base = (burst_idx * CHUNK_LEN) % self.total_universe;
        for i in 0..CHUNK_LEN {
            ranks.push((chunk_base + i) % self.total_universe);
        }
        ranks
    }

    /// Materializes every burst whose offsets and points fit in u64.
    fn materialize_bursts(&mut self) {
        let mut start: u128 = FIRST_BURST_OFFSET as u128;
        let mut corr: u64 = 0;
        for r in 0..64u128 {
            let Ok(start_offset) = u64::try_from(start) else {
                break;
            };
            let ranks = self.burst_rank_list(r);
            let tuples: Vec<PatternTuple> =
                ranks.iter().map(|&rk| self.tuple_of_rank(rk)).collect();
            let mut offset_prefix = Vec::with_capacity(tuples.len() + 1);
            let mut acc = 0u64;
            offset_prefix.push(0);
            for t in &tuples {
                acc += t.k() as u64;
                offset_prefix.push(acc);
            }
            // the whole burst must be addressable through base points
            if self.base.element(start_offset.saturating_add(acc)).is_none() {
                break;
            }
            let mut piece_dir: std::collections::HashMap<u128, Vec<PieceRef>> =
                std::collections::HashMap::new();
            for (pos, (t, &rank)) in tuples.iter().zip(&ranks).enumerate() {
                let orbits = t.joint_orbits();
                if orbits.len() > 1 {
                    piece_dir.entry(rank).or_default().push(PieceRef {
                        pos,
                        locals: (0..t.k()).collect(),
                    });
                }
                for orbit in orbits {
                    if orbit.len() < 2 {
                        continue; // singletons are served by fillers
                    }
                    let sub = t.restricted_to(&orbit);
                    let sub_rank = self
                        .tuple_rank(&sub)
                        .expect("pieces never exceed the cap");
                    piece_dir
                        .entry(sub_rank)
                        .or_default()
                        .push(PieceRef { pos, locals: orbit });
                }
            }
            let first_block = start_offset - corr;
            corr += acc - tuples.len() as u64;
            self.bursts.push(Burst {
                start_offset,
                first_block,
                corr_after: corr,
                ranks,
                tuples,
                offset_prefix,
                piece_dir,
            });
            start *= BURST_GAP_FACTOR as u128;
        }
    }

    fn burst_offsets_len(&self) -> u64 {
        self.bursts
            .first()
            .map(Burst::offsets)
            .unwrap_or(SMALL_CYCLES as u64 * 3 * self.small_universe as u64 + 64 * self.cap as u64)
    }

    /// The block covering base offset p.
    pub fn block_at_offset(&self, p: u64) -> BlockView {
        let idx = self.bursts.partition_point(|b| b.start_offset <= p);
        if idx == 0 {
            return BlockView {
                index: p,
                start_offset: p,
                size: 1,
                burst: None,
            };
        }
        let b = &self.bursts[idx - 1];
        if p < b.end_offset() {
            let rel = p - b.start_offset;
            let pos = b.offset_prefix.partition_point(|&x| x <= rel) - 1;
            BlockView {
                index: b.first_block + pos as u64,
                start_offset: b.start_offset + b.offset_prefix[pos],
                size: b.offset_prefix[pos + 1] - b.offset_prefix[pos],
                burst: Some((idx - 1, pos)),
            }
        } else {
            BlockView {
                index: p - b.corr_after,
                start_offset: p,
                size: 1,
                burst: None,
            }
        }
    }

    /// The block with global index j.
    pub fn block_at_index(&self, j: u64) -> BlockView {
        let idx = self.bursts.partition_point(|b| b.first_block <= j);
        if idx == 0 {
            return BlockView {
                index: j,
                start_offset: j,
                size: 1,
                burst: None,
            };
        }
        let b = &self.bursts[idx - 1];
        if j < b.first_block + b.blocks() {
            let pos = (j - b.first_block) as usize;
            BlockView {
                index: j,
                start_offset: b.start_offset + b.offset_prefix[pos],
                size: b.offset_prefix[pos + 1] - b.offset_prefix[pos],
                burst: Some((idx - 1, pos)),
            }
        } else {
            BlockView {
                index: j,
                start_offset: j + b.corr_after,
                size: 1,
                burst: None,
            }
        }
    }

    pub fn pattern_of(&self, view: &BlockView) -> Option<&PatternTuple> {
        view.burst.map(|(b, pos)| &self.bursts[b].tuples[pos])
    }

    pub fn rank_of(&self, view: &BlockView) -> u128 {
        view.burst.map_or(0, |(b, pos)| self.bursts[b].ranks[pos])
    }

    /// Largest point of a block, if representable.
    pub fn block_max_element(&self, view: &BlockView) -> Option<u64> {
        self.base.element(view.start_offset + view.size - 1)
    }

    /// Points of a block in increasing order.
    pub fn block_elements(&self, view: &BlockView) -> Option<Vec<u64>> {
        (view.start_offset..view.start_offset + view.size)
            .map(|p| self.base.element(p))
            .collect()
    }

    /// True iff no block straddles m: [0, m] is invariant under every
    /// coordinate of the tuple the schedule evaluates to.
    pub fn segment_invariant(&self, m: i64) -> bool {
        let count = self.base.count_upto(m);
        if count == 0 {
            return true;
        }
        let view = self.block_at_offset(count - 1);
        match self.block_max_element(&view) {
            Some(max) => (max as i128) <= m as i128,
            None => false,
        }
    }

    /// Least block-boundary value (max element of some block) >= x.
    pub fn boundary_at_or_after(&self, x: u64) -> Option<u64> {
        let p = self.base.count_upto(x as i64 - 1);
        let view = self.block_at_offset(p);
        self.block_max_element(&view)
    }

    /// First `count` block boundaries m such that [0, m] is invariant,
    /// i.e. the max elements of consecutive blocks. Truncated when the
    /// base leaves the representable range.
    pub fn invariant_cutoffs(&self, count: usize) -> Vec<u64> {
        let mut out = Vec::with_capacity(count);
        let mut j = 0u64;
        while out.len() < count {
            let view = self.block_at_index(j);
            match self.block_max_element(&view) {
                Some(max) => out.push(max),
                None => break,
            }
            j += 1;
        }
        out
    }

    /// Exact upper bound on phi of the schedule's moved points beyond m.
    /// The first burst reaching past m contributes its exact weights;
    /// every later burst is majorized geometrically per weight family.
    pub fn support_tail_bound(
        &self,
        sub: &Submeasure,
        m: i64,
    ) -> Result<BigRational, ScheduleError> {
        let mut terms: Vec<BigRational> = Vec::new();
        let mut next_majorized = self.bursts.len();
        for (r, b) in self.bursts.iter().enumerate() {
            if (self.base.element(b.end_offset() - 1).map(|e| e as i128)).unwrap_or(i128::MAX)
                <= m as i128
            {
                continue;
            }
            for (pos, t) in b.tuples.iter().enumerate() {
                let start = b.start_offset + b.offset_prefix[pos];
                for l in t.moved_positions() {
                    if let Some(e) = self.base.element(start + l as u64) {
                        if (e as i128) > m as i128 {
                            terms.push(sub.weight(e));
                        }
                    }
                }
            }
            next_majorized = r + 1;
            break;
        }
        let exact = balanced_sum(&terms);
        Ok(exact + self.burst_tail_majorant(sub, next_majorized)?)
    }

    /// Majorant for the total moved weight of all bursts from index
    /// `from` on, materialized or not, anchored at their start offsets.
    fn burst_tail_majorant(
        &self,
        sub: &Submeasure,
        from: usize,
    ) -> Result<BigRational, ScheduleError> {
        use crate::submeasure::WeightKind;
        if matches!(sub.kind, WeightKind::Counting) {
            return Err(ScheduleError::Submeasure(SubmeasureError::UnsupportedSet(
                "counting weights have no vanishing tail on an infinite set".into(),
            )));
        }
        // Table overrides are honored exactly where they land in a
        // majorized burst; the summable fallback bounds everything else.
        let len = BigInt::from(self.burst_offsets_len() + 1);
        let start =
            BigInt::from(FIRST_BURST_OFFSET) * BigInt::from(BURST_GAP_FACTOR).pow(from as u32);
        let fallback = match &self.base {
            CanonicalIdealSet::SquaresShifted => {
                // weight((p+2)^2) < 1/p^2; bursts shrink by GAP^2 each step
                let gap2 = BigInt::from(BURST_GAP_FACTOR) * BigInt::from(BURST_GAP_FACTOR);
                let geom = BigRational::new(gap2.clone(), gap2 - BigInt::one());
                BigRational::new(len, &start * &start) * geom
            }
            CanonicalIdealSet::PowersOfTwo => {
                // weight(2^(p+1)) < 2^-p; a burst from offset P weighs
                // under 2^(1-P), and later bursts at least halve it
                let exponent = u32::try_from(&start - BigInt::from(2))
                    .unwrap_or(u32::MAX)
                    .min(1_000_000);
                BigRational::new(BigInt::one(), BigInt::from(2).pow(exponent))
            }
            _ => {
                return Err(ScheduleError::InvalidBase(
                    "tail majorant requires a built-in stream".into(),
                ))
            }
        };
        let override_extra = if let WeightKind::Table(entries) = &sub.kind {
            let covered: Vec<u64> = entries
                .keys()
                .copied()
                .filter(|&x| {
                    self.base.index_of(x).is_some_and(|p| {
                        self.bursts
                            .iter()
                            .skip(from)
                            .any(|b| p >= b.start_offset && p < b.end_offset())
                    })
                })
                .collect();
            sub.phi(covered)
        } else {
            num::Zero::zero()
        };
        Ok(fallback + override_extra)
    }

    /// Offsets of the r-th materialized burst: (start, start of the
    /// full-universe chunk, end).
    pub fn burst_span(&self, r: usize) -> Option<(u64, u64, u64)> {
        let b = self.bursts.get(r)?;
        let template_blocks = SMALL_CYCLES * self.small_universe as usize;
        let chunk_start = b.start_offset + b.offset_prefix[template_blocks];
        Some((b.start_offset, chunk_start, b.end_offset()))
    }

    pub fn materialized_bursts(&self) -> usize {
        self.bursts.len()
    }

    /// First N blocks as a deterministic JSON description.
    pub fn export_blocks(&self, count: usize) -> Value {
        let mut repetitions: BTreeMap<u128, u64> = BTreeMap::new();
        let mut out = Vec::with_capacity(count);
        for j in 0..count as u64 {
            let view = self.block_at_index(j);
            let Some(elements) = self.block_elements(&view) else {
                break;
            };
            let rank = self.rank_of(&view);
            let rep = repetitions.entry(rank).or_insert(0);
            let patterns = match self.pattern_of(&view) {
                Some(t) => t.render(),
                None => vec!["()".to_string(); self.arity()],
            };
            out.push(json!({
                "j": j,
                "elements": elements,
                "patterns": patterns,
                "rank": rank.to_string(),
                "repetition": *rep,
            }));
            *rep += 1;
        }
        json!({
            "base": match &self.base {
                CanonicalIdealSet::SquaresShifted => "squares",
                CanonicalIdealSet::PowersOfTwo => "powers-of-two",
                CanonicalIdealSet::ExplicitFinite(_) => "explicit-finite",
                CanonicalIdealSet::CustomStream(_) => "custom-stream",
            },
            "n": self.n,
            "max_block_size": self.cap,
            "blocks": out,
        })
    }
}

/// The tuple of permutations a schedule evaluates to, one coordinate per
/// i <= n. Everything is derived from the schedule arithmetic; no global
/// materialization ever happens.
#[derive(Debug, Clone)]
pub struct GenericTuple {
    schedule: BlockSchedule,
}

impl GenericTuple {
    pub fn new(schedule: BlockSchedule) -> Self {
        GenericTuple { schedule }
    }

    pub fn schedule(&self) -> &BlockSchedule {
        &self.schedule
    }

    pub fn n(&self) -> usize {
        self.schedule.n()
    }

    pub fn arity(&self) -> usize {
        self.schedule.arity()
    }

    /// Coordinate i applied to x: identity off the base set, block
    /// pattern transported along the order isomorphism on it.
    pub fn eval(&self, i: usize, x: u64) -> u64 {
        debug_assert!(i < self.arity());
        let Some(p) = self.schedule.base().index_of(x) else {
            return x;
        };
        let view = self.schedule.block_at_offset(p);
        match self.schedule.pattern_of(&view) {
            None => x,
            Some(t) => {
                let local = (p - view.start_offset) as usize;
                let image_local = t.coordinate(i)[local];
                self.schedule
                    .base()
                    .element(view.start_offset + image_local as u64)
                    .expect("block elements are representable")
            }
        }
    }

    /// The finite permutation agreeing with coordinate i on all complete
    /// blocks within [0, m] and identity elsewhere.
    pub fn restrict(&self, i: usize, m: i64) -> FinitePermutation {
        let mut pairs = Vec::new();
        for b in &self.schedule.bursts {
            let Some(first) = self.schedule.base().element(b.start_offset) else {
                continue;
            };
            if (first as i128) > m as i128 {
                break;
            }
            for (pos, t) in b.tuples.iter().enumerate() {
                let start = b.start_offset + b.offset_prefix[pos];
                let size = t.k() as u64;
                let Some(max) = self.schedule.base().element(start + size - 1) else {
                    continue;
                };
                if (max as i128) > m as i128 {
                    continue;
                }
                for (l, &img) in t.coordinate(i).iter().enumerate() {
                    if l != img {
                        let from = self.schedule.base().element(start + l as u64).unwrap();
                        let to = self.schedule.base().element(start + img as u64).unwrap();
                        pairs.push((from, to));
                    }
                }
            }
        }
        FinitePermutation::from_pairs(pairs).expect("block patterns are permutations")
    }

    pub fn invariant_cutoffs(&self, count: usize) -> Vec<u64> {
        self.schedule.invariant_cutoffs(count)
    }

    /// Finds the least block with min element > m whose pattern tuple is
    /// the transport of `fs` restricted to `b0` along the order
    /// isomorphism, returning the block index and the order bijection
    /// from the block's points onto b0.
    pub fn find_pattern(
        &self,
        m: i64,
        b0: &[u64],
        fs: &[&FinitePermutation],
    ) -> Result<(u64, BTreeMap<u64, u64>), ScheduleError> {
        if fs.len() != self.arity() {
            return Err(ScheduleError::InvalidQuery(format!(
                "expected {} target coordinates, got {}",
                self.arity(),
                fs.len()
            )));
        }
        let mut b0: Vec<u64> = b0.to_vec();
        b0.sort_unstable();
        b0.dedup();
        let b0 = &b0[..];
        let query = transport(b0, fs)?;
        if query.k() > self.schedule.cap() {
            return Err(ScheduleError::PatternTooLarge {
                have: query.k(),
                cap: self.schedule.cap(),
            });
        }
        let rank = self.schedule.tuple_rank(&query)?;
        if rank == 0 {
            return self.find_identity_singleton(m, b0[0]);
        }

        for b in &self.schedule.bursts {
            let Some(refs) = b.piece_dir.get(&rank) else {
                continue;
            };
            for piece in refs {
                let start = b.start_offset + b.offset_prefix[piece.pos];
                let points: Option<Vec<u64>> = piece
                    .locals
                    .iter()
                    .map(|&l| self.schedule.base().element(start + l as u64))
                    .collect();
                let Some(points) = points else { continue };
                if (points[0] as i128) <= m as i128 {
                    continue;
                }
                let h: BTreeMap<u64, u64> =
                    points.into_iter().zip(b0.iter().copied()).collect();
                return Ok((b.first_block + piece.pos as u64, h));
            }
        }
        Err(ScheduleError::SearchHorizonExceeded(format!(
            "pattern of rank {rank} not realized below the representable horizon past {m}"
        )))
    }

    /// Least size-1 identity block with element > m.
    fn find_identity_singleton(
        &self,
        m: i64,
        target: u64,
    ) -> Result<(u64, BTreeMap<u64, u64>), ScheduleError> {
        let mut p = self.schedule.base().count_upto(m);
        loop {
            let view = self.schedule.block_at_offset(p);
            let fits = view.start_offset == p && view.size == 1;
            let is_identity = self
                .schedule
                .pattern_of(&view)
                .is_none_or(PatternTuple::is_identity);
            if fits && is_identity {
                let elem = self.schedule.base().element(p).ok_or_else(|| {
                    ScheduleError::SearchHorizonExceeded(
                        "no representable singleton block past the stage".into(),
                    )
                })?;
                return Ok((view.index, BTreeMap::from([(elem, target)])));
            }
            p = view.start_offset + view.size;
        }
    }
}

/// Transports target permutations restricted to `b0` (sorted ascending)
/// into a pattern tuple on {0..|b0|-1}. Every target must map b0 onto b0.
pub fn transport(b0: &[u64], fs: &[&FinitePermutation]) -> Result<PatternTuple, ScheduleError> {
    if b0.is_empty() {
        return Err(ScheduleError::InvalidQuery(
            "cannot transport onto an empty set".into(),
        ));
    }
    debug_assert!(b0.windows(2).all(|w| w[0] < w[1]));
    let mut perms = Vec::with_capacity(fs.len());
    for f in fs {
        let mut table = Vec::with_capacity(b0.len());
        for &x in b0 {
            let img = f.apply(x);
            let idx = b0.binary_search(&img).map_err(|_| {
                ScheduleError::InvalidQuery(format!(
                    "target maps {x} to {img}, which escapes the pattern set"
                ))
            })?;
            table.push(idx);
        }
        perms.push(table);
    }
    PatternTuple::new(perms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratio::ratio;

    fn squares_schedule(n: usize, cap: usize) -> GenericTuple {
        GenericTuple::new(
            BlockSchedule::build(n, CanonicalIdealSet::SquaresShifted, cap).unwrap(),
        )
    }

    #[test]
    fn build_rejects_finite_base_and_oversized_cap() {
        assert!(matches!(
            BlockSchedule::build(0, CanonicalIdealSet::explicit(vec![1, 2]), 2),
            Err(ScheduleError::InvalidBase(_))
        ));
        assert!(matches!(
            BlockSchedule::build(0, CanonicalIdealSet::SquaresShifted, MAX_CAP + 1),
            Err(ScheduleError::TooLarge(_))
        ));
    }

    #[test]
    fn cap_one_schedule_is_all_identity_singletons() {
        let t = squares_schedule(0, 1);
        for j in 0..500 {
            let view = t.schedule().block_at_index(j);
            assert_eq!(view.size, 1);
            let identity = t
                .schedule()
                .pattern_of(&view)
                .map_or(true, PatternTuple::is_identity);
            assert!(identity);
        }
    }

    #[test]
    fn lehmer_rank_roundtrip() {
        for k in 1..=5usize {
            let total: u128 = (1..=k as u128).product();
            for r in 0..total {
                let p = lehmer_unrank(k, r);
                assert_eq!(lehmer_rank(&p), r);
            }
        }
        assert_eq!(lehmer_rank(&[0, 1, 2]), 0);
    }

    #[test]
    fn tuple_rank_roundtrip() {
        let s = BlockSchedule::build(1, CanonicalIdealSet::SquaresShifted, 3).unwrap();
        for rank in 0..s.total_universe {
            let t = s.tuple_of_rank(rank);
            assert_eq!(s.tuple_rank(&t).unwrap(), rank);
        }
    }

    #[test]
    fn blocks_partition_offsets() {
        let t = squares_schedule(1, 3);
        // walk blocks and confirm they tile the offset axis exactly
        let mut offset = 0u64;
        for j in 0..3000u64 {
            let view = t.schedule().block_at_index(j);
            assert_eq!(view.index, j);
            assert_eq!(view.start_offset, offset, "block {j} misplaced");
            offset += view.size;
        }
        // offset -> block -> offset round trip across the first burst
        for p in 0..3000u64 {
            let view = t.schedule().block_at_offset(p);
            assert!(view.start_offset <= p && p < view.start_offset + view.size);
            let again = t.schedule().block_at_index(view.index);
            assert_eq!(again.start_offset, view.start_offset);
        }
    }

    #[test]
    fn first_invariant_cutoff_is_first_base_point() {
        let t = squares_schedule(0, 2);
        let cutoffs = t.invariant_cutoffs(3);
        assert_eq!(cutoffs[0], 4);
        assert!(cutoffs.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn eval_fixes_points_off_base() {
        let t = squares_schedule(1, 3);
        for x in [0u64, 1, 2, 3, 5, 6, 7, 8, 10, 99, 12345] {
            if t.schedule().base().contains(x) {
                continue;
            }
            for i in 0..t.arity() {
                assert_eq!(t.eval(i, x), x);
            }
        }
    }

    #[test]
    fn eval_maps_blocks_onto_themselves() {
        let t = squares_schedule(2, 3);
        for j in 0..200u64 {
            let view = t.schedule().block_at_index(j);
            let elements = t.schedule().block_elements(&view).unwrap();
            for i in 0..t.arity() {
                let mut image: Vec<u64> = elements.iter().map(|&x| t.eval(i, x)).collect();
                image.sort_unstable();
                assert_eq!(image, elements, "block {j} not invariant at coordinate {i}");
            }
        }
    }

    #[test]
    fn restrict_is_monotone_in_m() {
        let t = squares_schedule(1, 3);
        for i in 0..2 {
            let small = t.restrict(i, 100);
            let large = t.restrict(i, 400);
            for x in 0..=100u64 {
                assert_eq!(small.apply(x), large.apply(x));
            }
            // restriction below the base minimum is the identity
            assert!(t.restrict(i, 3).is_identity());
        }
    }

    #[test]
    fn restrict_agrees_with_eval_on_complete_blocks() {
        let t = squares_schedule(0, 3);
        let m = t.invariant_cutoffs(600)[599] as i64;
        let r = t.restrict(0, m);
        for x in 0..=(m as u64) {
            assert_eq!(r.apply(x), t.eval(0, x), "mismatch at {x}");
        }
    }

    #[test]
    fn find_pattern_swap_example() {
        let t = squares_schedule(0, 2);
        let swap = FinitePermutation::transposition(5, 6);
        let (j, h) = t.find_pattern(20, &[5, 6], &[&swap]).unwrap();
        let view = t.schedule().block_at_index(j);
        assert_eq!(view.size, 2);
        let elements = t.schedule().block_elements(&view).unwrap();
        assert!(elements[0] > 20);
        // h is the order isomorphism
        assert_eq!(h[&elements[0]], 5);
        assert_eq!(h[&elements[1]], 6);
        // conjugation identity pointwise on b0
        for &b in &[5u64, 6] {
            let pre = h.iter().find(|(_, &v)| v == b).map(|(&a, _)| a).unwrap();
            let moved = t.eval(0, pre);
            assert_eq!(h[&moved], swap.apply(b));
        }
    }

    #[test]
    fn find_pattern_singleton_identity() {
        let t = squares_schedule(0, 2);
        let id = FinitePermutation::identity();
        let (j, h) = t.find_pattern(30, &[7], &[&id]).unwrap();
        let view = t.schedule().block_at_index(j);
        assert_eq!(view.size, 1);
        let elem = *h.keys().next().unwrap();
        assert!(elem > 30);
        assert_eq!(t.eval(0, elem), elem);
        assert_eq!(view.index, j);
    }

    #[test]
    fn find_pattern_rejects_oversized_and_escaping_queries() {
        let t = squares_schedule(0, 2);
        let c3 = FinitePermutation::from_cycles(&[vec![1, 2, 3]]).unwrap();
        assert!(matches!(
            t.find_pattern(0, &[1, 2, 3], &[&c3]),
            Err(ScheduleError::PatternTooLarge { have: 3, cap: 2 })
        ));
        let escape = FinitePermutation::transposition(1, 9);
        assert!(matches!(
            t.find_pattern(0, &[1, 2], &[&escape]),
            Err(ScheduleError::InvalidQuery(_))
        ));
    }

    #[test]
    fn support_tail_bound_dominates_restriction_weights() {
        let t = squares_schedule(1, 3);
        let sub = Submeasure::summable();
        for (m, ceiling) in [(50_000i64, ratio(1, 100)), (10_000_000, ratio(1, 10_000))] {
            let bound = t.schedule().support_tail_bound(&sub, m).unwrap();
            // the restriction to a much deeper stage exposes true moved
            // points beyond m; their exact weight stays below the bound
            let deep = t.restrict(0, 4_000_000_000_000);
            let beyond: Vec<u64> = deep
                .support()
                .into_iter()
                .filter(|&x| x as i64 > m)
                .collect();
            let exact = sub.phi(beyond);
            assert!(exact < bound);
            assert!(bound < ceiling, "bound too large at m={m}: {bound}");
        }
    }

    #[test]
    fn segment_invariant_matches_block_structure() {
        let t = squares_schedule(1, 3);
        assert!(t.schedule().segment_invariant(-1));
        assert!(t.schedule().segment_invariant(3));
        let cutoffs = t.invariant_cutoffs(50);
        for &c in &cutoffs {
            assert!(t.schedule().segment_invariant(c as i64));
        }
        // a point strictly inside a burst block of size >= 2 is not invariant
        let first_burst = &t.schedule().bursts[0];
        let mut pos_of_wide = None;
        for (pos, tu) in first_burst.tuples.iter().enumerate() {
            if tu.k() >= 2 {
                pos_of_wide = Some(pos);
                break;
            }
        }
        let pos = pos_of_wide.expect("bursts contain blocks of size >= 2");
        let start = first_burst.start_offset + first_burst.offset_prefix[pos];
        let first_elem = t.schedule().base().element(start).unwrap();
        assert!(!t.schedule().segment_invariant(first_elem as i64));
    }

    #[test]
    fn export_is_deterministic() {
        let t1 = squares_schedule(1, 2);
        let t2 = squares_schedule(1, 2);
        let a = serde_json::to_string(&t1.schedule().export_blocks(50)).unwrap();
        let b = serde_json::to_string(&t2.schedule().export_blocks(50)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn first_swap_block_matches_enumeration_inspection() {
        // oracle: walk the enumeration and find the first block carrying
        // the size-2 swap, then confirm find_pattern lands exactly there
        let t = squares_schedule(0, 2);
        let mut expected = None;
        for j in 0..100_000u64 {
            let view = t.schedule().block_at_index(j);
            if let Some(p) = t.schedule().pattern_of(&view) {
                if p.k() == 2 && !p.is_identity() {
                    expected = Some(j);
                    break;
                }
            }
        }
        let expected = expected.expect("the schedule realizes the swap");
        let swap = FinitePermutation::transposition(5, 6);
        let (j, _) = t.find_pattern(-1, &[5, 6], &[&swap]).unwrap();
        assert_eq!(j, expected);
    }

    #[test]
    fn find_pattern_soundness_on_random_queries() {
        // 100 random (m, b0, fs) with |b0| <= 3: the returned bijection
        // satisfies the conjugation identity pointwise and sits past m
        let t = squares_schedule(1, 3);
        let mut state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            state
        };
        for _ in 0..100 {
            let m = (next() % 1_000_000) as i64;
            let size = 1 + (next() % 3) as usize;
            let mut b0: Vec<u64> = Vec::new();
            while b0.len() < size {
                let x = next() % 500;
                if !b0.contains(&x) {
                    b0.push(x);
                }
            }
            b0.sort_unstable();
            let mut fs = Vec::new();
            for _ in 0..t.arity() {
                // random permutation of b0
                let mut order: Vec<usize> = (0..size).collect();
                for i in (1..size).rev() {
                    order.swap(i, (next() as usize) % (i + 1));
                }
                let pairs: Vec<(u64, u64)> =
                    b0.iter().enumerate().map(|(i, &p)| (p, b0[order[i]])).collect();
                fs.push(FinitePermutation::from_pairs(pairs).unwrap());
            }
            let refs: Vec<&FinitePermutation> = fs.iter().collect();
            let (j, h) = t.find_pattern(m, &b0, &refs).unwrap();
            let view = t.schedule().block_at_index(j);
            let block_min = t.schedule().base().element(view.start_offset).unwrap();
            assert!(h.keys().all(|&far| far as i64 > m));
            assert!(*h.keys().next().unwrap() >= block_min);
            for (&far, &near) in &h {
                for (i, f) in fs.iter().enumerate() {
                    let conjugated = h[&t.eval(i, far)];
                    assert_eq!(conjugated, f.apply(near), "identity failed at coordinate {i}");
                }
            }
        }
    }

    #[test]
    fn restriction_support_weight_below_base_total() {
        // phi(supp of a restriction) <= phi(base up to m) <= the total
        // closed-form bound for the canonical set, exactly
        let t = squares_schedule(1, 3);
        let sub = Submeasure::summable();
        let total = crate::submeasure::tail_phi(&sub, t.schedule().base(), -1).unwrap();
        for m in [100i64, 10_000, 5_000_000] {
            let r = t.restrict(0, m);
            let supp_phi = sub.phi(r.support());
            let base_phi = sub.phi(t.schedule().base().elements_in(-1, m));
            assert!(supp_phi <= base_phi);
            assert!(base_phi <= total);
        }
    }

    #[test]
    fn schedule_types_are_sync() {
        fn assert_sync<T: Sync + Send>() {}
        assert_sync::<BlockSchedule>();
        assert_sync::<GenericTuple>();
    }

    #[test]
    fn custom_stream_base_is_rejected() {
        assert!(matches!(
            BlockSchedule::build(0, CanonicalIdealSet::CustomStream(vec![1, 4, 9]), 2),
            Err(ScheduleError::InvalidBase(_))
        ));
    }
}
