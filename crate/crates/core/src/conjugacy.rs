//! Stage-wise conjugacy approximation: parameter selection, construction
//! of the conjugating involution at a stage, exact certificates for every
//! inequality involved, convergence tables, and the dense-orbit variant.
//!
//! Distances to the schedule's tuple are computed against a certified
//! finite envelope: the envelope part is exact, and everything beyond it
//! is majorized by the schedule's closed-form support tail bound, which
//! keeps all comparisons sound without ever materializing an infinite
//! object.

use std::collections::{BTreeMap, BTreeSet};

use num::rational::BigRational;
use num::Zero;
use serde_json::{json, Value};
use thiserror::Error;

use crate::generic_tuple::{GenericTuple, ScheduleError};
use crate::permutation::FinitePermutation;
use crate::ratio::{ratio, ratio_to_string};
use crate::submeasure::{tail_phi, Submeasure, SubmeasureError};

/// Default bound on boundary-walk length for parameter and stage searches.
pub const DEFAULT_STAGE_HORIZON: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum ConjugacyError {
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Submeasure(#[from] SubmeasureError),
    #[error("internal invariant failed: {0}")]
    Internal(String),
}

/// The stage parameters: a cutoff m0, the approximation radius eps_prime,
/// and exact certificates for the four selection conditions. m0 = -1
/// selects the dense-orbit variant, where the cutoff conditions are
/// vacuous.
#[derive(Debug, Clone)]
pub struct ApproxParameters {
    pub eps: BigRational,
    pub m0: i64,
    pub eps_prime: BigRational,
    pub certs: ParamCerts,
}

#[derive(Debug, Clone)]
pub struct ParamCerts {
    /// Exact tail bound at m0 and its comparison against eps/2.
    pub tail_bound: Option<BigRational>,
    pub tail_ok: bool,
    /// [0, m0] is invariant under every coordinate.
    pub invariance_ok: bool,
    /// (n+1) eps_prime < eps/2, strict.
    pub arithmetic_ok: bool,
    /// eps_prime <= min weight on [0, m0]; any permutation within
    /// eps_prime of a coordinate then agrees with it on [0, m0].
    pub separation_ok: bool,
}

impl ApproxParameters {
    pub fn all_certs_pass(&self) -> bool {
        self.certs.tail_ok
            && self.certs.invariance_ok
            && self.certs.arithmetic_ok
            && self.certs.separation_ok
    }

    pub fn to_json(&self) -> Value {
        json!({
            "eps": ratio_to_string(&self.eps),
            "m0": self.m0,
            "eps_prime": ratio_to_string(&self.eps_prime),
            "certs": {
                "tail_bound": self.certs.tail_bound.as_ref().map(ratio_to_string),
                "tail_ok": self.certs.tail_ok,
                "invariance_ok": self.certs.invariance_ok,
                "arithmetic_ok": self.certs.arithmetic_ok,
                "separation_ok": self.certs.separation_ok,
            },
        })
    }
}

fn eps_prime_formula(
    sub: &Submeasure,
    eps: &BigRational,
    n: usize,
    m0: i64,
) -> BigRational {
    let arithmetic = eps / ratio(2 * (n as i64 + 2), 1);
    match sub.min_weight_upto(m0) {
        Some(w) if w < arithmetic => w,
        _ => arithmetic,
    }
}

/// Picks the least invariant cutoff m0 whose exact tail bound drops below
/// eps/2, and eps_prime = min(eps / (2(n+2)), min weight on [0, m0]).
pub fn choose_parameters(
    sub: &Submeasure,
    t: &GenericTuple,
    eps: &BigRational,
) -> Result<ApproxParameters, ConjugacyError> {
    choose_parameters_with_horizon(sub, t, eps, DEFAULT_STAGE_HORIZON)
}

pub fn choose_parameters_with_horizon(
    sub: &Submeasure,
    t: &GenericTuple,
    eps: &BigRational,
    horizon: u64,
) -> Result<ApproxParameters, ConjugacyError> {
    if *eps <= BigRational::zero() {
        return Err(ConjugacyError::PreconditionViolation(
            "eps must be positive".into(),
        ));
    }
    let half = eps / ratio(2, 1);
    let base = t.schedule().base();
    let mut candidate = 0u64;
    for _ in 0..horizon {
        let Some(b) = t.schedule().boundary_at_or_after(candidate) else {
            break;
        };
        let tail = tail_phi(sub, base, b as i64)?;
        if tail < half {
            let m0 = b as i64;
            let eps_prime = eps_prime_formula(sub, eps, t.n(), m0);
            let certs = ParamCerts {
                tail_bound: Some(tail.clone()),
                tail_ok: tail < half,
                invariance_ok: t.schedule().segment_invariant(m0),
                arithmetic_ok: ratio(t.n() as i64 + 1, 1) * &eps_prime < half,
                separation_ok: sub.min_weight_upto(m0).is_some_and(|w| eps_prime <= w),
            };
            return Ok(ApproxParameters {
                eps: eps.clone(),
                m0,
                eps_prime,
                certs,
            });
        }
        candidate = b + 1;
    }
    Err(ConjugacyError::Submeasure(SubmeasureError::NoCutoffFound {
        bound: ratio_to_string(&half),
        horizon,
    }))
}

/// The m0 = -1 variant: cutoff conditions are vacuous and eps_prime is
/// driven only by the arithmetic condition.
pub fn dense_parameters(t: &GenericTuple, eps: &BigRational) -> ApproxParameters {
    let eps_prime = eps / ratio(2 * (t.n() as i64 + 2), 1);
    ApproxParameters {
        eps: eps.clone(),
        m0: -1,
        eps_prime: eps_prime.clone(),
        certs: ParamCerts {
            tail_bound: None,
            tail_ok: true,
            invariance_ok: true,
            arithmetic_ok: ratio(t.n() as i64 + 1, 1) * &eps_prime < eps / ratio(2, 1),
            separation_ok: true,
        },
    }
}

/// A tuple of finite-support targets, one per coordinate.
#[derive(Debug, Clone)]
pub struct TargetTuple {
    fs: Vec<FinitePermutation>,
}

impl TargetTuple {
    pub fn new(fs: Vec<FinitePermutation>) -> Self {
        TargetTuple { fs }
    }

    pub fn arity(&self) -> usize {
        self.fs.len()
    }

    pub fn coordinate(&self, i: usize) -> &FinitePermutation {
        &self.fs[i]
    }

    pub fn coordinates(&self) -> &[FinitePermutation] {
        &self.fs
    }

    /// Union of the supports.
    pub fn union_support(&self) -> BTreeSet<u64> {
        let mut b = BTreeSet::new();
        for f in &self.fs {
            b.extend(f.support());
        }
        b
    }

    /// Max of the union support, or -1 when every coordinate is identity.
    pub fn m1(&self) -> i64 {
        self.union_support()
            .iter()
            .next_back()
            .map_or(-1, |&x| x as i64)
    }
}

/// Exact envelope distance from a target to coordinate i, plus the tail
/// majorant beyond the envelope; their sum dominates the true distance.
pub fn distance_to_coordinate(
    sub: &Submeasure,
    t: &GenericTuple,
    i: usize,
    f: &FinitePermutation,
    envelope: u64,
) -> Result<(BigRational, BigRational), ConjugacyError> {
    let restricted = t.restrict(i, envelope as i64);
    let env_part = sub.phi(FinitePermutation::diff_set(f, &restricted));
    let tail = t.schedule().support_tail_bound(sub, envelope as i64)?;
    Ok((env_part, tail))
}

/// True iff every coordinate of `fs` is provably within eps_prime of the
/// corresponding schedule coordinate. Vacuously true for m0 = -1, where
/// the closeness requirement is dropped.
pub fn check_targets(
    sub: &Submeasure,
    params: &ApproxParameters,
    t: &GenericTuple,
    fs: &TargetTuple,
) -> Result<bool, ConjugacyError> {
    if fs.arity() != t.arity() {
        return Err(ConjugacyError::PreconditionViolation(format!(
            "target arity {} does not match schedule arity {}",
            fs.arity(),
            t.arity()
        )));
    }
    if params.m0 < 0 {
        return Ok(true);
    }
    let start = fs.m1().max(0) as u64;
    let envelope = t
        .schedule()
        .boundary_at_or_after(start)
        .ok_or_else(|| ScheduleError::SearchHorizonExceeded("no boundary past targets".into()))?;
    let tail = t.schedule().support_tail_bound(sub, envelope as i64)?;
    for i in 0..fs.arity() {
        let restricted = t.restrict(i, envelope as i64);
        let env_part = sub.phi(FinitePermutation::diff_set(fs.coordinate(i), &restricted));
        if env_part + &tail >= params.eps_prime {
            return Ok(false);
        }
    }
    Ok(true)
}

/// One matched component: a far block conjugating onto a piece of b0.
#[derive(Debug, Clone)]
pub struct WitnessPart {
    pub block_index: u64,
    pub block_points: Vec<u64>,
    pub component: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct WitnessCerts {
    /// Per-coordinate: the conjugate agrees with the target on [0, m].
    pub restriction: Vec<bool>,
    /// supp(h_m) stays inside (A union B) \ [0, m0].
    pub support: bool,
    /// Exact phi of supp(h_m).
    pub phi_supp: BigRational,
    /// eps/2 + (n+1) eps_prime, when the stage has a cutoff.
    pub bound_mid: Option<BigRational>,
    pub bound_rhs: Option<BigRational>,
    /// phi_supp < mid < eps, both strict; vacuous for m0 = -1.
    pub bound_ok: bool,
    /// phi(supp inside the base set) < eps/2.
    pub chain_base_ok: bool,
    /// phi(supp outside the base set) < (n+1) eps_prime.
    pub chain_target_ok: bool,
}

impl WitnessCerts {
    pub fn all_pass(&self) -> bool {
        self.restriction.iter().all(|&b| b)
            && self.support
            && self.bound_ok
            && self.chain_base_ok
            && self.chain_target_ok
    }
}

/// The stage-m conjugator with its certificates. h_m is an involution
/// swapping each matched far block onto its component of b0 pointwise.
#[derive(Debug, Clone)]
pub struct ConjugacyWitness {
    pub m: u64,
    pub b0: Vec<u64>,
    pub parts: Vec<WitnessPart>,
    pub h_m: FinitePermutation,
    /// Boundary up to which the schedule coordinates were materialized
    /// for the certificates; distances are exact over [0, envelope].
    pub envelope: u64,
    pub distances: Vec<BigRational>,
    pub certs: WitnessCerts,
}

impl ConjugacyWitness {
    pub fn to_json(&self) -> Value {
        json!({
            "m": self.m,
            "b0": self.b0,
            "block_indices": self.parts.iter().map(|p| p.block_index).collect::<Vec<_>>(),
            "h_m": self.h_m.to_json(),
            "envelope": self.envelope,
            "certs": {
                "restriction": self.certs.restriction,
                "support": self.certs.support,
                "phi_supp": ratio_to_string(&self.certs.phi_supp),
                "bound_mid": self.certs.bound_mid.as_ref().map(ratio_to_string),
                "bound_rhs": self.certs.bound_rhs.as_ref().map(ratio_to_string),
                "bound_ok": self.certs.bound_ok,
                "chain_base_ok": self.certs.chain_base_ok,
                "chain_target_ok": self.certs.chain_target_ok,
                "distances": self.distances.iter().map(ratio_to_string).collect::<Vec<_>>(),
            },
        })
    }

    pub fn all_certs_pass(&self) -> bool {
        self.certs.all_pass()
    }

    pub fn max_distance(&self) -> BigRational {
        self.distances
            .iter()
            .cloned()
            .max()
            .unwrap_or_else(BigRational::zero)
    }
}

/// Builds the stage-m witness: b0 is everything of the base set and the
/// target supports inside (m0, m]; its partition into joint target
/// orbits is matched component by component against far blocks, and the
/// pointwise swap of each block with its component is the conjugator.
pub fn build_witness(
    sub: &Submeasure,
    params: &ApproxParameters,
    t: &GenericTuple,
    fs: &TargetTuple,
    m: u64,
) -> Result<ConjugacyWitness, ConjugacyError> {
    let arity = t.arity();
    if fs.arity() != arity {
        return Err(ConjugacyError::PreconditionViolation(format!(
            "target arity {} does not match schedule arity {arity}",
            fs.arity()
        )));
    }
    if (m as i64) <= params.m0 || (m as i64) <= fs.m1() {
        return Err(ConjugacyError::PreconditionViolation(format!(
            "stage m = {m} must exceed m0 = {} and m1 = {}",
            params.m0,
            fs.m1()
        )));
    }
    if params.m0 >= 0 && !check_targets(sub, params, t, fs)? {
        return Err(ConjugacyError::PreconditionViolation(
            "targets are not within eps_prime of the tuple".into(),
        ));
    }
    if !t.schedule().segment_invariant(m as i64) {
        return Err(ConjugacyError::PreconditionViolation(format!(
            "[0, {m}] is not invariant under the tuple"
        )));
    }
    for i in 0..arity {
        if !fs.coordinate(i).is_segment_invariant(m as i64) {
            return Err(ConjugacyError::PreconditionViolation(format!(
                "[0, {m}] is not invariant under target {i}"
            )));
        }
    }

    // b0 = (A union B) intersected with (m0, m]
    let mut b0: BTreeSet<u64> = t
        .schedule()
        .base()
        .elements_in(params.m0, m as i64)
        .into_iter()
        .collect();
    for x in fs.union_support() {
        if (x as i64) > params.m0 && x <= m {
            b0.insert(x);
        }
    }
    let b0: Vec<u64> = b0.into_iter().collect();

    // every target must permute b0
    for i in 0..arity {
        for &x in &b0 {
            let img = fs.coordinate(i).apply(x);
            if b0.binary_search(&img).is_err() {
                return Err(ConjugacyError::PreconditionViolation(format!(
                    "target {i} maps {x} to {img}, escaping (m0, m]"
                )));
            }
        }
    }

    // partition b0 into joint orbits of the targets
    let components = joint_orbits(&b0, fs.coordinates());

    let coords: Vec<&FinitePermutation> = fs.coordinates().iter().collect();
    let mut h_pairs: Vec<(u64, u64)> = Vec::with_capacity(2 * b0.len());
    let mut parts: Vec<WitnessPart> = Vec::new();
    let mut max_far_point = m;

    // Matched blocks of distinct pattern ranks are distinct blocks, so a
    // separate floor per rank keeps the matches disjoint without
    // skipping usable occurrences. Singletons all carry rank 0 and walk
    // the identity fillers just past the stage.
    let mut rank_floors: BTreeMap<u128, i64> = BTreeMap::new();
    for comp in &components {
        let query = crate::generic_tuple::transport(comp, &coords)?;
        let rank = t.schedule().tuple_rank(&query)?;
        let floor = *rank_floors.entry(rank).or_insert(m as i64);
        let (block_index, h) = t.find_pattern(floor, comp, &coords)?;
        let mut block_points = Vec::with_capacity(comp.len());
        for (&far, &near) in &h {
            h_pairs.push((far, near));
            h_pairs.push((near, far));
            block_points.push(far);
            max_far_point = max_far_point.max(far);
        }
        let comp_max = *block_points.iter().max().expect("component is non-empty");
        rank_floors.insert(rank, comp_max as i64);
        parts.push(WitnessPart {
            block_index,
            block_points,
            component: comp.clone(),
        });
    }

    let h_m = FinitePermutation::from_pairs(h_pairs)
        .map_err(|e| ConjugacyError::Internal(format!("conjugator not a permutation: {e}")))?;

    // envelope: least boundary covering the stage, every matched block,
    // and the target supports
    let env_floor = max_far_point.max(fs.m1().max(0) as u64);
    let envelope = t
        .schedule()
        .boundary_at_or_after(env_floor)
        .ok_or_else(|| ScheduleError::SearchHorizonExceeded("no boundary past witness".into()))?;

    let mut restriction = Vec::with_capacity(arity);
    let mut distances = Vec::with_capacity(arity);
    for i in 0..arity {
        let g_env = t.restrict(i, envelope as i64);
        let conj = FinitePermutation::conjugate(&h_m, &g_env);
        restriction.push(FinitePermutation::restrict_equal(
            fs.coordinate(i),
            &conj,
            m as i64,
        ));
        distances.push(sub.phi(FinitePermutation::diff_set(fs.coordinate(i), &conj)));
    }

    let support = h_m.support();
    let base = t.schedule().base();
    let target_support = fs.union_support();
    let support_ok = support
        .iter()
        .all(|&x| (x as i64) > params.m0 && (base.contains(x) || target_support.contains(&x)));

    let base_part: Vec<u64> = support.iter().copied().filter(|&x| base.contains(x)).collect();
    let off_base_part: Vec<u64> = support
        .iter()
        .copied()
        .filter(|&x| !base.contains(x))
        .collect();
    let phi_base = sub.phi(base_part);
    let phi_off = sub.phi(off_base_part);
    let phi_supp = &phi_base + &phi_off;

    let half = &params.eps / ratio(2, 1);
    let slack = ratio(t.n() as i64 + 1, 1) * &params.eps_prime;
    let (bound_mid, bound_rhs, bound_ok, chain_base_ok, chain_target_ok) = if params.m0 >= 0 {
        let mid = &half + &slack;
        let ok = phi_supp < mid && mid < params.eps;
        (
            Some(mid.clone()),
            Some(params.eps.clone()),
            ok,
            phi_base < half,
            phi_off < slack,
        )
    } else {
        (None, None, true, true, true)
    };

    Ok(ConjugacyWitness {
        m,
        b0,
        parts,
        h_m,
        envelope,
        distances,
        certs: WitnessCerts {
            restriction,
            support: support_ok,
            phi_supp,
            bound_mid,
            bound_rhs,
            bound_ok,
            chain_base_ok,
            chain_target_ok,
        },
    })
}

/// Partition of `points` (sorted) into orbits of the joint action.
fn joint_orbits(points: &[u64], fs: &[FinitePermutation]) -> Vec<Vec<u64>> {
    let index: BTreeMap<u64, usize> = points.iter().enumerate().map(|(i, &x)| (x, i)).collect();
    let mut parent: Vec<usize> = (0..points.len()).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }
    for f in fs {
        for (&x, &i) in &index {
            let img = f.apply(x);
            if let Some(&j) = index.get(&img) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<u64>> = BTreeMap::new();
    for (i, &x) in points.iter().enumerate() {
        groups.entry(find(&mut parent, i)).or_default().push(x);
    }
    groups.into_values().collect()
}

/// One row of a convergence table: stage, exact per-coordinate distances,
/// and the exact tail bound dominating them.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub m: u64,
    pub distances: Vec<BigRational>,
    pub bound: BigRational,
    pub within_bound: bool,
}

impl ConvergenceRow {
    pub fn to_json(&self) -> Value {
        json!({
            "m": self.m,
            "distances": self.distances.iter().map(ratio_to_string).collect::<Vec<_>>(),
            "bound": ratio_to_string(&self.bound),
            "within_bound": self.within_bound,
        })
    }
}

/// Exact tail bound for the union envelope at stage m: the base tail
/// plus the weights of target support points beyond m outside the base.
pub fn envelope_tail_bound(
    sub: &Submeasure,
    t: &GenericTuple,
    fs: &TargetTuple,
    m: u64,
) -> Result<BigRational, ConjugacyError> {
    let base_tail = tail_phi(sub, t.schedule().base(), m as i64)?;
    let off_base: Vec<u64> = fs
        .union_support()
        .into_iter()
        .filter(|&x| x > m && !t.schedule().base().contains(x))
        .collect();
    Ok(base_tail + sub.phi(off_base))
}

/// Builds one witness per stage in `m_list` (strictly increasing) and
/// reports its exact distances next to the stage tail bound.
pub fn convergence_table(
    sub: &Submeasure,
    params: &ApproxParameters,
    t: &GenericTuple,
    fs: &TargetTuple,
    m_list: &[u64],
) -> Result<Vec<ConvergenceRow>, ConjugacyError> {
    if m_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ConjugacyError::PreconditionViolation(
            "stage grid must be strictly increasing".into(),
        ));
    }
    let mut rows = Vec::with_capacity(m_list.len());
    for &m in m_list {
        let witness = build_witness(sub, params, t, fs, m)?;
        let bound = envelope_tail_bound(sub, t, fs, m)?;
        let within = witness.distances.iter().all(|d| *d <= bound);
        rows.push(ConvergenceRow {
            m,
            distances: witness.distances,
            bound,
            within_bound: within,
        });
    }
    Ok(rows)
}

/// Dense-orbit variant: runs m0 = -1, picks the least stage past the
/// targets whose tail bound drops below delta, and builds that witness.
/// Every returned distance is strictly below delta.
pub fn dense_approx(
    sub: &Submeasure,
    t: &GenericTuple,
    fs: &TargetTuple,
    delta: &BigRational,
) -> Result<ConjugacyWitness, ConjugacyError> {
    dense_approx_with_horizon(sub, t, fs, delta, DEFAULT_STAGE_HORIZON)
}

pub fn dense_approx_with_horizon(
    sub: &Submeasure,
    t: &GenericTuple,
    fs: &TargetTuple,
    delta: &BigRational,
    horizon: u64,
) -> Result<ConjugacyWitness, ConjugacyError> {
    if *delta <= BigRational::zero() {
        return Err(ConjugacyError::PreconditionViolation(
            "delta must be positive".into(),
        ));
    }
    let params = dense_parameters(t, delta);
    let mut candidate = (fs.m1() + 1).max(0) as u64;
    for _ in 0..horizon {
        let Some(b) = t.schedule().boundary_at_or_after(candidate) else {
            break;
        };
        if (b as i64) > fs.m1() {
            let bound = envelope_tail_bound(sub, t, fs, b)?;
            if bound < *delta {
                let witness = build_witness(sub, &params, t, fs, b)?;
                // the tail bound dominates every distance, so the first
                // qualifying stage already lands below delta; kept as a
                // checked condition rather than an assumption
                if witness.max_distance() < *delta {
                    return Ok(witness);
                }
            }
        }
        candidate = b + 1;
    }
    Err(ConjugacyError::Submeasure(SubmeasureError::NoCutoffFound {
        bound: ratio_to_string(delta),
        horizon,
    }))
}

/// Direct check of the convergence mechanism for finite data: under the
/// hypotheses supp(h) inside a_env and agreement of f with h g h^{-1} on
/// [0, m], the disagreement set lies inside
/// (a_env union supp f union supp g) \ [0, m], and its phi is returned.
/// If the agreement hypothesis fails, returns (false, exact distance).
pub fn convergence_oracle(
    sub: &Submeasure,
    f: &FinitePermutation,
    g: &FinitePermutation,
    h: &FinitePermutation,
    a_env: &BTreeSet<u64>,
    m: i64,
) -> Result<(bool, BigRational), ConjugacyError> {
    if !h.support().is_subset(a_env) {
        return Err(ConjugacyError::PreconditionViolation(
            "supp(h) must lie inside the envelope".into(),
        ));
    }
    let conj = FinitePermutation::conjugate(h, g);
    let diff = FinitePermutation::diff_set(f, &conj);
    if !FinitePermutation::restrict_equal(f, &conj, m) {
        return Ok((false, sub.phi(diff)));
    }
    let f_supp = f.support();
    let g_supp = g.support();
    for &x in &diff {
        let inside = a_env.contains(&x) || f_supp.contains(&x) || g_supp.contains(&x);
        if (x as i64) <= m || !inside {
            return Err(ConjugacyError::Internal(format!(
                "disagreement at {x} escapes the certified envelope"
            )));
        }
    }
    Ok((true, sub.phi(diff)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generic_tuple::BlockSchedule;
    use crate::permutation::in_v_epsilon;
    use crate::submeasure::CanonicalIdealSet;

    fn tuple(n: usize, cap: usize) -> GenericTuple {
        GenericTuple::new(
            BlockSchedule::build(n, CanonicalIdealSet::SquaresShifted, cap).unwrap(),
        )
    }

    #[test]
    fn parameters_for_eps_two() {
        let sub = Submeasure::summable();
        let t = tuple(0, 3);
        let params = choose_parameters(&sub, &t, &ratio(2, 1)).unwrap();
        // the squares tail bound is below 1 from the very first boundary
        assert_eq!(params.m0, 4);
        assert!(params.all_certs_pass());
        // eps_prime = min(2/4, 1/5) = 1/5
        assert_eq!(params.eps_prime, ratio(1, 5));
    }

    #[test]
    fn parameters_certs_hold_across_eps() {
        let sub = Submeasure::summable();
        for n in 0..3usize {
            let t = tuple(n, 3);
            for eps in [ratio(1, 4), ratio(1, 1), ratio(1, 10)] {
                let params = choose_parameters(&sub, &t, &eps).unwrap();
                assert!(params.all_certs_pass(), "certs failed at n={n} eps={eps}");
                assert!(params.m0 >= 0);
                let tail = params.certs.tail_bound.clone().unwrap();
                assert!(tail < eps / ratio(2, 1));
            }
        }
    }

    #[test]
    fn dense_parameters_are_vacuous() {
        let t = tuple(1, 3);
        let params = dense_parameters(&t, &ratio(1, 10));
        assert_eq!(params.m0, -1);
        assert!(params.all_certs_pass());
    }

    #[test]
    fn parameters_error_without_cutoff() {
        let sub = Submeasure::counting();
        let t = tuple(0, 2);
        assert!(matches!(
            choose_parameters(&sub, &t, &ratio(1, 2)),
            Err(ConjugacyError::Submeasure(_))
        ));
    }

    #[test]
    fn identity_targets_are_within_large_eps() {
        let sub = Submeasure::summable();
        let t = tuple(0, 3);
        let params = choose_parameters(&sub, &t, &ratio(2, 1)).unwrap();
        let fs = TargetTuple::new(vec![FinitePermutation::identity()]);
        assert!(check_targets(&sub, &params, &t, &fs).unwrap());
    }

    #[test]
    fn early_disagreement_fails_target_check() {
        let sub = Submeasure::summable();
        let t = tuple(0, 3);
        let params = choose_parameters(&sub, &t, &ratio(1, 4)).unwrap();
        // swapping the first two base points costs ~ 1/5 + 1/10 >> eps'
        let fs = TargetTuple::new(vec![FinitePermutation::transposition(4, 9)]);
        assert!(!check_targets(&sub, &params, &t, &fs).unwrap());
    }

    #[test]
    fn witness_for_identity_targets() {
        let sub = Submeasure::summable();
        let t = tuple(0, 3);
        let params = choose_parameters(&sub, &t, &ratio(2, 1)).unwrap();
        let fs = TargetTuple::new(vec![FinitePermutation::identity()]);
        // m = 36 is a filler boundary: b0 = {9, 16, 25, 36}
        let w = build_witness(&sub, &params, &t, &fs, 36).unwrap();
        assert_eq!(w.b0, vec![9, 16, 25, 36]);
        assert_eq!(w.h_m.support_len(), 8);
        assert!(w.all_certs_pass());
        assert!(in_v_epsilon(&sub, &w.h_m, &params.eps));
        // determinism: a second run yields the identical witness
        let w2 = build_witness(&sub, &params, &t, &fs, 36).unwrap();
        assert_eq!(w.h_m, w2.h_m);
        assert_eq!(
            w.parts.iter().map(|p| p.block_index).collect::<Vec<_>>(),
            w2.parts.iter().map(|p| p.block_index).collect::<Vec<_>>()
        );
    }

    #[test]
    fn witness_preconditions_are_guarded() {
        let sub = Submeasure::summable();
        let t = tuple(0, 3);
        let params = choose_parameters(&sub, &t, &ratio(2, 1)).unwrap();
        let fs = TargetTuple::new(vec![FinitePermutation::identity()]);
        // stage at or below m0
        assert!(matches!(
            build_witness(&sub, &params, &t, &fs, 4),
            Err(ConjugacyError::PreconditionViolation(_))
        ));
        // targets too far for a small eps
        let small = choose_parameters(&sub, &t, &ratio(1, 4)).unwrap();
        let far = TargetTuple::new(vec![FinitePermutation::transposition(4, 9)]);
        assert!(matches!(
            build_witness(&sub, &small, &t, &far, 400),
            Err(ConjugacyError::PreconditionViolation(_))
        ));
    }

    #[test]
    fn witness_with_empty_b0_is_identity() {
        let sub = Submeasure::summable();
        let t = tuple(0, 3);
        let mut params = choose_parameters(&sub, &t, &ratio(2, 1)).unwrap();
        // push the cutoff to 25 and pick the stage inside the gap before
        // 36: no base or target point lies in (25, 35]
        params.m0 = 25;
        let fs = TargetTuple::new(vec![FinitePermutation::identity()]);
        let w = build_witness(&sub, &params, &t, &fs, 35).unwrap();
        assert!(w.b0.is_empty());
        assert!(w.h_m.is_identity());
        assert!(w.all_certs_pass());
    }

    #[test]
    fn oracle_identity_case() {
        let sub = Submeasure::summable();
        let id = FinitePermutation::identity();
        let (ok, d) = convergence_oracle(&sub, &id, &id, &id, &BTreeSet::new(), 10).unwrap();
        assert!(ok);
        assert!(d.is_zero());
    }

    #[test]
    fn oracle_detects_failed_hypothesis() {
        let sub = Submeasure::summable();
        let f = FinitePermutation::transposition(0, 1);
        let id = FinitePermutation::identity();
        let (ok, d) = convergence_oracle(&sub, &f, &id, &id, &BTreeSet::new(), 5).unwrap();
        assert!(!ok);
        assert_eq!(d, ratio(3, 2));
    }

    #[test]
    fn oracle_rejects_escaping_support() {
        let sub = Submeasure::summable();
        let h = FinitePermutation::transposition(3, 4);
        let id = FinitePermutation::identity();
        assert!(matches!(
            convergence_oracle(&sub, &id, &id, &h, &BTreeSet::from([3]), 5),
            Err(ConjugacyError::PreconditionViolation(_))
        ));
    }

    #[test]
    fn dense_approx_identity_targets() {
        let sub = Submeasure::summable();
        let t = tuple(0, 3);
        let fs = TargetTuple::new(vec![FinitePermutation::identity()]);
        let w = dense_approx(&sub, &t, &fs, &ratio(1, 2)).unwrap();
        assert!(w.max_distance() < ratio(1, 2));
        // a generous delta admits the minimal stage
        let wide = dense_approx(&sub, &t, &fs, &ratio(100, 1)).unwrap();
        assert!(wide.m <= w.m);
    }

    #[test]
    fn joint_orbit_partition() {
        let a = FinitePermutation::transposition(1, 5);
        let b = FinitePermutation::transposition(5, 9);
        let orbits = joint_orbits(&[1, 2, 5, 9, 12], &[a, b]);
        assert_eq!(orbits, vec![vec![1, 5, 9], vec![2], vec![12]]);
    }

    #[test]
    fn separation_property_realizes_cutoff_agreement() {
        // any target within eps_prime of a coordinate agrees with it on
        // [0, m0]: a disagreement at n <= m0 would weigh at least the
        // minimum weight, which eps_prime does not exceed
        let sub = Submeasure::summable();
        let t = tuple(1, 3);
        let params = choose_parameters(&sub, &t, &ratio(1, 4)).unwrap();
        let mut rng = crate::selfcheck::XorShift::new(99);
        for _ in 0..20 {
            let fs = crate::selfcheck::perturbed_targets(
                &t,
                &mut rng,
                2,
                50_000,
                crate::selfcheck::TruncationCut::Early,
            );
            assert!(check_targets(&sub, &params, &t, &fs).unwrap());
            for i in 0..t.arity() {
                let restricted = t.restrict(i, params.m0);
                assert!(FinitePermutation::restrict_equal(
                    fs.coordinate(i),
                    &restricted,
                    params.m0
                ));
            }
        }
    }

    #[test]
    fn witness_for_midrange_swap_moves_twice_b0() {
        // a target agreeing with the tuple below the cutoff and swapping
        // two mid-range base points: the conjugator pairs every point of
        // b0 with a far partner, moving exactly 2|b0| points
        let sub = Submeasure::summable();
        let t = tuple(0, 3);
        let params = choose_parameters(&sub, &t, &ratio(2, 1)).unwrap();
        assert_eq!(params.m0, 4);
        let fs = TargetTuple::new(vec![FinitePermutation::transposition(25, 36)]);
        assert!(check_targets(&sub, &params, &t, &fs).unwrap());
        let w = build_witness(&sub, &params, &t, &fs, 49).unwrap();
        assert_eq!(w.b0, vec![9, 16, 25, 36, 49]);
        assert_eq!(w.h_m.support_len(), 2 * w.b0.len());
        assert!(w.all_certs_pass());
        // independent pointwise recheck on the window
        let g_env = t.restrict(0, w.envelope as i64);
        let conj = FinitePermutation::conjugate(&w.h_m, &g_env);
        for x in 0..=49u64 {
            assert_eq!(conj.apply(x), fs.coordinate(0).apply(x));
        }
    }

    #[test]
    fn witness_for_restriction_targets_differs_only_beyond_stage() {
        // taking the restrictions themselves as targets: the witness
        // exists and every disagreement lies in the base set beyond m
        let sub = Submeasure::summable();
        let t = tuple(1, 3);
        let params = choose_parameters(&sub, &t, &ratio(2, 1)).unwrap();
        let m = t.schedule().boundary_at_or_after(60_000_000).unwrap();
        let fs = TargetTuple::new((0..t.arity()).map(|i| t.restrict(i, m as i64)).collect());
        assert!(check_targets(&sub, &params, &t, &fs).unwrap());
        let w = build_witness(&sub, &params, &t, &fs, m).unwrap();
        assert!(w.all_certs_pass());
        for i in 0..t.arity() {
            let g_env = t.restrict(i, w.envelope as i64);
            let conj = FinitePermutation::conjugate(&w.h_m, &g_env);
            let diff = FinitePermutation::diff_set(fs.coordinate(i), &conj);
            assert!(diff
                .iter()
                .all(|&x| x > m && t.schedule().base().contains(x)));
            assert_eq!(sub.phi(diff), w.distances[i]);
        }
    }

    #[test]
    fn concurrent_rows_match_sequential() {
        // determinism under concurrency: the same witness computed on
        // two threads is identical to the sequential result
        let sub = Submeasure::summable();
        let t = tuple(0, 3);
        let params = choose_parameters(&sub, &t, &ratio(2, 1)).unwrap();
        let fs = TargetTuple::new(vec![FinitePermutation::transposition(25, 36)]);
        let sequential = build_witness(&sub, &params, &t, &fs, 49).unwrap();
        let results: Vec<ConjugacyWitness> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..2)
                .map(|_| scope.spawn(|| build_witness(&sub, &params, &t, &fs, 49).unwrap()))
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for w in results {
            assert_eq!(w.h_m, sequential.h_m);
            assert_eq!(w.distances, sequential.distances);
        }
    }

    #[test]
    fn identity_schedule_gives_zero_distances() {
        // over a cap-1 schedule every coordinate is the identity, so the
        // identity targets are reached exactly and distances vanish
        let sub = Submeasure::summable();
        let t = GenericTuple::new(
            BlockSchedule::build(0, CanonicalIdealSet::SquaresShifted, 1).unwrap(),
        );
        let params = choose_parameters(&sub, &t, &ratio(2, 1)).unwrap();
        let fs = TargetTuple::new(vec![FinitePermutation::identity()]);
        assert!(check_targets(&sub, &params, &t, &fs).unwrap());
        let rows = convergence_table(&sub, &params, &t, &fs, &[25, 49, 100]).unwrap();
        for row in &rows {
            assert!(row.distances.iter().all(|d| d.is_zero()));
            assert!(row.within_bound);
        }
    }
}
