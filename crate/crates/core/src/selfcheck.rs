//! Built-in invariant suites and the deterministic generators feeding
//! them. The same code backs the `selfcheck` CLI subcommand and the
//! acceptance tests.

use std::collections::BTreeSet;

use num::rational::BigRational;
use num::Zero;

use crate::conjugacy::{
    build_witness, check_targets, choose_parameters, convergence_oracle, ApproxParameters,
    ConjugacyError, TargetTuple,
};
use crate::generic_tuple::GenericTuple;
use crate::permutation::{distance, FinitePermutation};
use crate::ratio::ratio;
use crate::submeasure::{find_tail_cutoff, validate_weights, CanonicalIdealSet, Submeasure};

/// Small deterministic RNG; good enough for test-case selection and
/// dependency-free.
#[derive(Debug, Clone)]
pub struct XorShift(u64);

impl XorShift {
    pub fn new(seed: u64) -> Self {
        XorShift(seed.wrapping_mul(0x9E3779B97F4A7C15) | 1)
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x.wrapping_mul(0x2545F4914F6CDD1D)
    }

    pub fn below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound.max(1)
    }

    pub fn shuffled(&mut self, k: usize) -> Vec<usize> {
        let mut v: Vec<usize> = (0..k).collect();
        for i in (1..k).rev() {
            let j = self.below(i as u64 + 1) as usize;
            v.swap(i, j);
        }
        v
    }
}

/// Random finite-support permutation with support inside [0, max_point].
pub fn random_permutation(rng: &mut XorShift, max_point: u64, moves: usize) -> FinitePermutation {
    let mut points = BTreeSet::new();
    while points.len() < moves.max(2) {
        points.insert(rng.below(max_point + 1));
    }
    let points: Vec<u64> = points.into_iter().collect();
    let sigma = rng.shuffled(points.len());
    let pairs: Vec<(u64, u64)> = points
        .iter()
        .enumerate()
        .map(|(i, &p)| (p, points[sigma[i]]))
        .collect();
    FinitePermutation::from_pairs(pairs).expect("a relabeled permutation is a permutation")
}

/// Where to cut the restriction inside the first pattern burst.
#[derive(Debug, Clone, Copy)]
pub enum TruncationCut {
    /// A few hundred offsets past the burst start: small stages, fast
    /// witnesses, a residue of order 1/sqrt(cut).
    Early,
    /// A few blocks before the burst end: the residue collapses to the
    /// later bursts' weight, tiny enough for separation-driven radii.
    Late,
}

/// A target tuple built from the schedule: the restriction of every
/// coordinate to a stage cut inside the first pattern burst, with the
/// action on a few sufficiently deep blocks rewired at random. The
/// truncation residue and the rewiring cost are both small in the
/// metric, so the result stays within the relevant eps_prime while
/// exercising non-trivial pattern matches.
pub fn perturbed_targets(
    t: &GenericTuple,
    rng: &mut XorShift,
    alterations: usize,
    alter_min_element: u64,
    cut: TruncationCut,
) -> TargetTuple {
    let (start, _chunk_start, end) = t
        .schedule()
        .burst_span(0)
        .expect("the first burst is always materialized for built-in bases");
    let cut_offset = match cut {
        TruncationCut::Early => (start + 150 + rng.below(250)).min(end - 1),
        TruncationCut::Late => end.saturating_sub(1 + rng.below(40)).max(start),
    };
    let cut_view = t.schedule().block_at_offset(cut_offset);
    let m_star = t
        .schedule()
        .block_max_element(&cut_view)
        .expect("burst blocks are representable") as i64;

    // candidate blocks to rewire: wide enough to matter, deep enough
    // that the rewiring cost stays far below the separation weight
    let mut candidates = Vec::new();
    let mut p = start;
    while p < cut_offset {
        let view = t.schedule().block_at_offset(p);
        if view.size >= 2 {
            if let (Some(min), Some(max)) = (
                t.schedule().base().element(view.start_offset),
                t.schedule().block_max_element(&view),
            ) {
                if min >= alter_min_element && (max as i64) <= m_star {
                    candidates.push(view);
                }
            }
        }
        p = view.start_offset + view.size;
    }
    let mut chosen = Vec::new();
    for _ in 0..alterations.min(candidates.len()) {
        let idx = rng.below(candidates.len() as u64) as usize;
        chosen.push(candidates.swap_remove(idx));
    }

    let mut fs = Vec::with_capacity(t.arity());
    for i in 0..t.arity() {
        let mut pairs: Vec<(u64, u64)> = t.restrict(i, m_star).moved_pairs().collect();
        let mut base: std::collections::BTreeMap<u64, u64> = pairs.drain(..).collect();
        for view in &chosen {
            let elements = t
                .schedule()
                .block_elements(view)
                .expect("burst blocks are representable");
            let sigma = rng.shuffled(elements.len());
            for (l, &x) in elements.iter().enumerate() {
                base.insert(x, elements[sigma[l]]);
            }
        }
        fs.push(
            FinitePermutation::from_pairs(base)
                .expect("block-wise rewiring preserves bijectivity"),
        );
    }
    TargetTuple::new(fs)
}

/// Random tuple whose joint orbits all have at most three points; used by
/// the dense-orbit checks, where targets are otherwise unconstrained.
pub fn random_small_orbit_targets(
    arity: usize,
    rng: &mut XorShift,
    components: usize,
    max_point: u64,
) -> TargetTuple {
    let mut used = BTreeSet::new();
    let mut groups: Vec<Vec<u64>> = Vec::new();
    for _ in 0..components {
        let size = 2 + rng.below(2) as usize;
        let mut group = BTreeSet::new();
        while group.len() < size {
            let x = rng.below(max_point + 1);
            if used.insert(x) {
                group.insert(x);
            }
        }
        groups.push(group.into_iter().collect());
    }
    let mut fs = Vec::with_capacity(arity);
    for _ in 0..arity {
        let mut pairs = Vec::new();
        for group in &groups {
            let sigma = rng.shuffled(group.len());
            for (l, &x) in group.iter().enumerate() {
                pairs.push((x, group[sigma[l]]));
            }
        }
        fs.push(FinitePermutation::from_pairs(pairs).expect("group-wise relabeling"));
    }
    TargetTuple::new(fs)
}

#[derive(Debug, Clone)]
pub struct SuiteOutcome {
    pub name: String,
    pub passed: u64,
    pub failed: u64,
    pub detail: String,
}

impl SuiteOutcome {
    fn ok(name: &str, passed: u64, detail: impl Into<String>) -> Self {
        SuiteOutcome {
            name: name.into(),
            passed,
            failed: 0,
            detail: detail.into(),
        }
    }

    fn failing(name: &str, passed: u64, failed: u64, detail: impl Into<String>) -> Self {
        SuiteOutcome {
            name: name.into(),
            passed,
            failed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelfCheckConfig {
    pub seed: u64,
    /// Random cases per suite.
    pub cases: u64,
    /// When set, a deliberately broken weight family is validated too,
    /// so the report shows how failures surface.
    pub inject_bad_weights: bool,
    /// Horizon for the cutoff-search probe; tiny values force and report
    /// a no-cutoff-found error.
    pub cutoff_horizon: u64,
}

impl Default for SelfCheckConfig {
    fn default() -> Self {
        SelfCheckConfig {
            seed: 7,
            cases: 200,
            inject_bad_weights: false,
            cutoff_horizon: 1_000_000,
        }
    }
}

pub fn run_selfcheck(cfg: &SelfCheckConfig) -> Vec<SuiteOutcome> {
    vec![
        submeasure_suite(cfg),
        cutoff_suite(cfg),
        group_metric_suite(cfg),
        schedule_completeness_suite(),
        witness_suite(cfg),
        convergence_oracle_suite(cfg),
    ]
}

fn submeasure_suite(cfg: &SelfCheckConfig) -> SuiteOutcome {
    let mut passed = 0;
    let mut failed = 0;
    let mut detail = String::new();
    for sub in [Submeasure::counting(), Submeasure::summable()] {
        let report = validate_weights(&sub, 64, 8);
        for check in &report.checks {
            if check.passed {
                passed += 1;
            } else {
                failed += 1;
                detail = format!("{} failed {}", sub.name, check.axiom);
            }
        }
    }
    if cfg.inject_bad_weights {
        let mut entries = std::collections::BTreeMap::new();
        entries.insert(3u64, ratio(0, 1));
        let bad = Submeasure::table("injected-bad", entries);
        let report = validate_weights(&bad, 16, 6);
        for check in &report.checks {
            if check.passed {
                passed += 1;
            } else {
                failed += 1;
                detail = format!("injected-bad failed {}: {}", check.axiom, check.detail);
            }
        }
    }
    if failed == 0 {
        SuiteOutcome::ok("submeasure-axioms", passed, "all weight axioms hold")
    } else {
        SuiteOutcome::failing("submeasure-axioms", passed, failed, detail)
    }
}

fn cutoff_suite(cfg: &SelfCheckConfig) -> SuiteOutcome {
    let sub = Submeasure::summable();
    match find_tail_cutoff(
        &sub,
        &CanonicalIdealSet::SquaresShifted,
        &ratio(1, 50),
        cfg.cutoff_horizon,
    ) {
        Ok(m) => SuiteOutcome::ok("tail-cutoff", 1, format!("cutoff at m = {m}")),
        Err(e) => SuiteOutcome::failing("tail-cutoff", 0, 1, e.to_string()),
    }
}

fn group_metric_suite(cfg: &SelfCheckConfig) -> SuiteOutcome {
    let sub = Submeasure::summable();
    let mut rng = XorShift::new(cfg.seed ^ 0x67);
    let mut passed = 0;
    let mut failed = 0;
    let mut detail = String::new();
    for case in 0..cfg.cases {
        let sizes = [
            2 + rng.below(6) as usize,
            2 + rng.below(6) as usize,
            2 + rng.below(6) as usize,
        ];
        let f = random_permutation(&mut rng, 60, sizes[0]);
        let g = random_permutation(&mut rng, 60, sizes[1]);
        let h = random_permutation(&mut rng, 60, sizes[2]);
        let assoc = FinitePermutation::compose(&FinitePermutation::compose(&f, &g), &h)
            == FinitePermutation::compose(&f, &FinitePermutation::compose(&g, &h));
        let inverse = FinitePermutation::compose(&f, &f.inverse()).is_identity();
        let d_fg = distance(&sub, &f, &g);
        let symmetric = d_fg == distance(&sub, &g, &f);
        let triangle = distance(&sub, &f, &h) <= &d_fg + distance(&sub, &g, &h);
        let separating = (d_fg.is_zero()) == (f == g);
        let cycles = FinitePermutation::conjugate(&h, &g).cycle_type() == g.cycle_type();
        if assoc && inverse && symmetric && triangle && separating && cycles {
            passed += 1;
        } else {
            failed += 1;
            detail = format!("case {case} violated a group/metric law");
        }
    }
    if failed == 0 {
        SuiteOutcome::ok("group-metric-laws", passed, "group and metric laws hold")
    } else {
        SuiteOutcome::failing("group-metric-laws", passed, failed, detail)
    }
}

fn schedule_completeness_suite() -> SuiteOutcome {
    let mut passed = 0;
    let mut failed = 0;
    let mut detail = String::new();
    for n in 0..=2usize {
        match completeness_counts(n, 3, 5000, 3) {
            Ok(()) => passed += 1,
            Err(e) => {
                failed += 1;
                detail = e;
            }
        }
    }
    if failed == 0 {
        SuiteOutcome::ok(
            "schedule-completeness",
            passed,
            "every small pattern tuple recurs early",
        )
    } else {
        SuiteOutcome::failing("schedule-completeness", passed, failed, detail)
    }
}

/// Checks that every pattern tuple with k <= cap occurs at least
/// `needed` times among the first `blocks` blocks, with strictly
/// increasing minimum elements.
pub fn completeness_counts(
    n: usize,
    cap: usize,
    blocks: u64,
    needed: usize,
) -> Result<(), String> {
    let t = GenericTuple::new(
        crate::generic_tuple::BlockSchedule::build(n, CanonicalIdealSet::SquaresShifted, cap)
            .map_err(|e| e.to_string())?,
    );
    let mut occurrences: std::collections::HashMap<u128, Vec<u64>> =
        std::collections::HashMap::new();
    for j in 0..blocks {
        let view = t.schedule().block_at_index(j);
        let rank = t.schedule().rank_of(&view);
        let min = t
            .schedule()
            .base()
            .element(view.start_offset)
            .ok_or_else(|| format!("block {j} beyond representable range"))?;
        occurrences.entry(rank).or_default().push(min);
    }
    let universe: u128 = (1..=cap)
        .map(|k| {
            let fact: u128 = (2..=k as u128).product();
            fact.pow(n as u32 + 1)
        })
        .sum();
    for rank in 0..universe {
        let mins = occurrences
            .get(&rank)
            .ok_or_else(|| format!("n={n}: tuple rank {rank} absent in first {blocks} blocks"))?;
        if mins.len() < needed {
            return Err(format!(
                "n={n}: tuple rank {rank} occurs {} < {needed} times",
                mins.len()
            ));
        }
        if mins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(format!("n={n}: occurrences of rank {rank} not increasing"));
        }
    }
    Ok(())
}

fn witness_suite(cfg: &SelfCheckConfig) -> SuiteOutcome {
    let sub = Submeasure::summable();
    let mut rng = XorShift::new(cfg.seed ^ 0x57);
    let mut passed = 0;
    let mut failed = 0;
    let mut detail = String::new();
    let runs = cfg.cases.clamp(1, 30);
    for run in 0..runs {
        let n = (run % 3) as usize;
        let eps = [ratio(1, 4), ratio(1, 1), ratio(2, 1)][(run as usize / 3) % 3].clone();
        match witness_run(&sub, n, &eps, &mut rng) {
            Ok(()) => passed += 1,
            Err(e) => {
                failed += 1;
                detail = format!("run {run}: {e}");
            }
        }
    }
    if failed == 0 {
        SuiteOutcome::ok("witness-soundness", passed, "all certificates passed")
    } else {
        SuiteOutcome::failing("witness-soundness", passed, failed, detail)
    }
}

fn witness_run(
    sub: &Submeasure,
    n: usize,
    eps: &BigRational,
    rng: &mut XorShift,
) -> Result<(), String> {
    let t = GenericTuple::new(
        crate::generic_tuple::BlockSchedule::build(n, CanonicalIdealSet::SquaresShifted, 3)
            .map_err(|e| e.to_string())?,
    );
    let params = choose_parameters(sub, &t, eps).map_err(|e| e.to_string())?;
    if !params.all_certs_pass() {
        return Err("parameter certificates failed".into());
    }
    let alterations = 1 + rng.below(3) as usize;
    let fs = perturbed_targets(&t, rng, alterations, 50_000, TruncationCut::Early);
    if !check_targets(sub, &params, &t, &fs).map_err(|e| e.to_string())? {
        return Err("generated targets rejected".into());
    }
    let m = t
        .schedule()
        .boundary_at_or_after(fs.m1().max(params.m0) as u64 + 1)
        .ok_or("no stage boundary")?;
    let w = build_witness(sub, &params, &t, &fs, m).map_err(|e| e.to_string())?;
    if !w.all_certs_pass() {
        return Err("witness certificates failed".into());
    }
    Ok(())
}

fn convergence_oracle_suite(cfg: &SelfCheckConfig) -> SuiteOutcome {
    let sub = Submeasure::summable();
    let mut rng = XorShift::new(cfg.seed ^ 0x1E);
    let mut passed = 0;
    let mut failed = 0;
    let mut detail = String::new();
    for case in 0..cfg.cases {
        match oracle_case(&sub, &mut rng) {
            Ok(()) => passed += 1,
            Err(e) => {
                failed += 1;
                detail = format!("case {case}: {e}");
            }
        }
    }
    if failed == 0 {
        SuiteOutcome::ok("convergence-oracle", passed, "diff-set inclusion holds")
    } else {
        SuiteOutcome::failing("convergence-oracle", passed, failed, detail)
    }
}

/// Builds (f, g, h, m) satisfying the agreement hypothesis by composing
/// the conjugate with junk supported beyond m, then runs the oracle.
fn oracle_case(sub: &Submeasure, rng: &mut XorShift) -> Result<(), ConjugacyError> {
    let g_moves = 2 + rng.below(5) as usize;
    let h_moves = 2 + rng.below(5) as usize;
    let g = random_permutation(rng, 40, g_moves);
    let h = random_permutation(rng, 40, h_moves);
    let m = rng.below(60) as i64;
    let conj = FinitePermutation::conjugate(&h, &g);
    let junk_lo = (m + 1).max(0) as u64 + 61;
    let junk = FinitePermutation::transposition(junk_lo, junk_lo + 1 + rng.below(5));
    let f = FinitePermutation::compose(&junk, &conj);
    let mut env = h.support();
    env.extend(junk.support());
    let (ok, d) = convergence_oracle(sub, &f, &g, &h, &env, m)?;
    if !ok {
        return Err(ConjugacyError::Internal(
            "hypothesis unexpectedly failed".into(),
        ));
    }
    let direct = sub.phi(FinitePermutation::diff_set(&f, &conj));
    if d != direct {
        return Err(ConjugacyError::Internal("phi mismatch".into()));
    }
    Ok(())
}

/// Convenience used by tests: parameters plus a perturbed target tuple
/// that provably satisfies the closeness precondition.
pub fn standard_run_inputs(
    sub: &Submeasure,
    t: &GenericTuple,
    eps: &BigRational,
    rng: &mut XorShift,
    alterations: usize,
) -> Result<(ApproxParameters, TargetTuple), ConjugacyError> {
    let params = choose_parameters(sub, t, eps)?;
    let fs = perturbed_targets(t, rng, alterations, 50_000, TruncationCut::Early);
    Ok((params, fs))
}
