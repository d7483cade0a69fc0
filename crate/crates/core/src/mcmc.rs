//! Metropolis-Hastings walks on fibers for p-value approximation.
//!
//! Two kinds of steps are mixed: Markov moves `v = u +- m` (a symmetric
//! proposal) and SAT steps, where a fiber sample is used as an independence
//! proposal with an assumed-uniform law. For both, the acceptance
//! probability reduces to `min(1, prod_i u_i! / v_i!)`.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::model::{FiberSpec, Table};
use crate::moves::MoveSet;
use crate::sampler::{cached_enumeration, FiberSampler};

/// `min(1, prod_i u_i! / v_i!)`, evaluated in log space.
pub fn acceptance_ratio(u: &Table, v: &Table) -> f64 {
    let log_ratio: f64 = u
        .cells()
        .iter()
        .zip(v.cells())
        .filter(|(a, b)| a != b)
        .map(|(&a, &b)| ln_factorial(a) - ln_factorial(b))
        .sum();
    log_ratio.min(0.0).exp()
}

/// How SAT steps and move steps are interleaved.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HybridSchedule {
    /// Every `n`-th step is a SAT step, all others are move steps.
    Alternating {
        n: usize,
    },
    /// `k` walks started from SAT samples; repeatedly one of them, chosen
    /// uniformly, is advanced by `n` move steps.
    ParallelStarts {
        n: usize,
        k: usize,
    },
    MovesOnly,
    SatOnly,
}

impl HybridSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            HybridSchedule::Alternating { n: 0 } => {
                Err(Error::Config("n must be >= 1".into()))
            }
            HybridSchedule::ParallelStarts { n, k } if n == 0 || k == 0 => {
                Err(Error::Config("n and k must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn uses_moves(&self) -> bool {
        !matches!(
            self,
            HybridSchedule::SatOnly | HybridSchedule::Alternating { n: 1 }
        )
    }

    pub fn uses_sat(&self) -> bool {
        !matches!(self, HybridSchedule::MovesOnly)
    }
}

impl fmt::Display for HybridSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HybridSchedule::Alternating { n } => write!(f, "A_{n}"),
            HybridSchedule::ParallelStarts { n, k } => write!(f, "P_{n},{k}"),
            HybridSchedule::MovesOnly => write!(f, "moves-only"),
            HybridSchedule::SatOnly => write!(f, "sat-only"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProposalKind {
    Move,
    Sat,
}

impl ProposalKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProposalKind::Move => "move",
            ProposalKind::Sat => "sat",
        }
    }
}

/// Anything that can hand out fiber elements for SAT steps.
pub trait ProposalSource {
    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Result<Table>;
}

impl ProposalSource for FiberSampler {
    fn draw(&mut self, rng: &mut ChaCha8Rng) -> Result<Table> {
        FiberSampler::draw(self, rng)
    }
}

/// Generator for walk `walk_id` under `seed`; streams never overlap.
pub fn walk_rng(seed: u64, walk_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(walk_id);
    rng
}

/// The state of one chain plus the shared running estimate.
#[derive(Clone, Debug)]
pub struct WalkState {
    pub current: Table,
    current_stat: f64,
    rng: ChaCha8Rng,
}

/// Everything a step needs besides the chain itself.
pub struct WalkContext<'a> {
    pub spec: &'a FiberSpec,
    pub stat: &'a dyn Fn(&Table) -> f64,
    /// `X(u_obs)`; a step counts as a hit when `X(u_j) >= threshold`.
    pub threshold: f64,
}

/// Running tallies shared by all chains of one run.
#[derive(Clone, Debug, Default)]
pub struct WalkRecord {
    pub p_sequence: Vec<f64>,
    pub accepted: Vec<bool>,
    pub kinds: Vec<ProposalKind>,
    pub hits: u64,
    /// SAT samples consumed, including initial states of parallel starts.
    pub sat_samples: usize,
    pub move_steps: usize,
    /// Set if the SAT source failed and the run stopped early.
    pub aborted: Option<String>,
}

impl WalkRecord {
    pub fn steps(&self) -> usize {
        self.p_sequence.len()
    }

    pub fn final_p(&self) -> Option<f64> {
        self.p_sequence.last().copied()
    }

    /// Recorded SAT steps (for parallel starts these are the initial draws,
    /// which are not part of the step sequence).
    pub fn sat_steps(&self) -> usize {
        self.sat_samples
    }

    fn record(&mut self, kind: ProposalKind, accepted: bool, hit: bool) {
        self.hits += u64::from(hit);
        self.p_sequence
            .push(self.hits as f64 / (self.p_sequence.len() + 1) as f64);
        self.accepted.push(accepted);
        self.kinds.push(kind);
        if kind == ProposalKind::Move {
            self.move_steps += 1;
        }
    }

    /// CSV with columns `step,p_value,accepted,proposal_kind`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,p_value,accepted,proposal_kind")?;
        for (i, ((p, a), k)) in self
            .p_sequence
            .iter()
            .zip(&self.accepted)
            .zip(&self.kinds)
            .enumerate()
        {
            writeln!(out, "{},{},{},{}", i + 1, p, u8::from(*a), k.as_str())?;
        }
        Ok(())
    }
}

impl WalkState {
    pub fn new(start: Table, ctx: &WalkContext<'_>, rng: ChaCha8Rng) -> Self {
        let current_stat = (ctx.stat)(&start);
        WalkState {
            current: start,
            current_stat,
            rng,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn settle(
        &mut self,
        ctx: &WalkContext<'_>,
        record: &mut WalkRecord,
        kind: ProposalKind,
        next: Option<Table>,
    ) {
        let accepted = match next {
            Some(v) => {
                let r = acceptance_ratio(&self.current, &v);
                let take = r >= 1.0 || self.rng.random::<f64>() < r;
                if take && v != self.current {
                    self.current_stat = (ctx.stat)(&v);
                    self.current = v;
                }
                take
            }
            None => false,
        };
        debug_assert!(ctx.spec.contains(&self.current), "walk left the fiber");
        record.record(kind, accepted, self.current_stat >= ctx.threshold);
    }

    /// One move step: a uniformly chosen move with a uniform sign; proposals
    /// leaving the nonnegative orthant are rejected as self-loops.
    pub fn mh_step_move(
        &mut self,
        moves: &MoveSet,
        ctx: &WalkContext<'_>,
        record: &mut WalkRecord,
    ) {
        assert!(!moves.is_empty(), "move steps need a non-empty move set");
        let m = &moves.moves()[self.rng.random_range(0..moves.len())];
        let sign = if self.rng.random::<bool>() { 1 } else { -1 };
        let next = self.current.shifted(m.delta(), sign);
        self.settle(ctx, record, ProposalKind::Move, next);
    }

    /// One SAT step with `proposal` as an independence proposal.
    pub fn mh_step_sat(
        &mut self,
        proposal: Table,
        ctx: &WalkContext<'_>,
        record: &mut WalkRecord,
    ) -> Result<()> {
        if !ctx.spec.contains(&proposal) {
            return Err(Error::InvalidProposal);
        }
        record.sat_samples += 1;
        self.settle(ctx, record, ProposalKind::Sat, Some(proposal));
        Ok(())
    }
}

/// Runs `steps` recorded steps of the given schedule from `observed`.
#[allow(clippy::too_many_arguments)]
pub fn run_walk(
    spec: &FiberSpec,
    observed: &Table,
    schedule: HybridSchedule,
    moves: Option<&MoveSet>,
    source: Option<&mut dyn ProposalSource>,
    steps: usize,
    stat: &dyn Fn(&Table) -> f64,
    seed: u64,
) -> Result<WalkRecord> {
    run_walk_observed(
        spec,
        observed,
        schedule,
        moves,
        source,
        steps,
        stat,
        seed,
        &mut |_| {},
    )
}

/// [`run_walk`] with a callback receiving the chain position after every
/// recorded step.
#[allow(clippy::too_many_arguments)]
pub fn run_walk_observed(
    spec: &FiberSpec,
    observed: &Table,
    schedule: HybridSchedule,
    moves: Option<&MoveSet>,
    mut source: Option<&mut dyn ProposalSource>,
    steps: usize,
    stat: &dyn Fn(&Table) -> f64,
    seed: u64,
    observer: &mut dyn FnMut(&Table),
) -> Result<WalkRecord> {
    schedule.validate()?;
    if steps == 0 {
        return Err(Error::Config("number of steps must be >= 1".into()));
    }
    if !spec.contains(observed) {
        return Err(Error::InvalidProposal);
    }
    let moves = match (schedule.uses_moves(), moves) {
        (true, Some(m)) if !m.is_empty() => Some(m),
        (true, _) => {
            return Err(Error::Config(format!(
                "schedule {schedule} needs a non-empty move set"
            )))
        }
        (false, m) => m,
    };
    if schedule.uses_sat() && source.is_none() {
        return Err(Error::Config(format!(
            "schedule {schedule} needs a SAT sample source"
        )));
    }

    let ctx = WalkContext {
        spec,
        stat,
        threshold: stat(observed),
    };
    let mut record = WalkRecord::default();

    let mut sat_draw = |rng: &mut ChaCha8Rng| -> Result<Table> {
        source.as_deref_mut().expect("checked above").draw(rng)
    };

    match schedule {
        HybridSchedule::ParallelStarts { n, k } => {
            let mut master = walk_rng(seed, 0);
            let mut walks = Vec::with_capacity(k);
            for w in 0..k {
                match sat_draw(&mut master) {
                    Ok(start) if spec.contains(&start) => {
                        record.sat_samples += 1;
                        walks.push(WalkState::new(start, &ctx, walk_rng(seed, w as u64 + 1)));
                    }
                    Ok(_) => return Err(Error::InvalidProposal),
                    Err(e) => {
                        record.aborted = Some(e.to_string());
                        return Ok(record);
                    }
                }
            }
            let moves = moves.expect("checked above");
            while record.steps() < steps {
                let w = master.random_range(0..k);
                let walk = &mut walks[w];
                for _ in 0..n.min(steps - record.steps()) {
                    walk.mh_step_move(moves, &ctx, &mut record);
                    observer(&walk.current);
                }
            }
        }
        _ => {
            let mut walk = WalkState::new(observed.clone(), &ctx, walk_rng(seed, 0));
            for t in 1..=steps {
                let sat = match schedule {
                    HybridSchedule::Alternating { n } => t % n == 0,
                    HybridSchedule::SatOnly => true,
                    _ => false,
                };
                if sat {
                    match sat_draw(walk.rng()) {
                        Ok(proposal) => walk.mh_step_sat(proposal, &ctx, &mut record)?,
                        Err(e) => {
                            record.aborted = Some(e.to_string());
                            return Ok(record);
                        }
                    }
                } else {
                    walk.mh_step_move(moves.expect("checked above"), &ctx, &mut record);
                }
                observer(&walk.current);
            }
        }
    }
    Ok(record)
}

/// Partition of the enumerated fiber into classes connected by `moves`.
pub fn connected_components_under_moves(
    spec: &FiberSpec,
    moves: &MoveSet,
) -> Result<Vec<Vec<Table>>> {
    let enumeration = cached_enumeration(spec)?;
    let elements = &enumeration.elements;
    let index: HashMap<&Table, usize> = elements.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let mut parent: Vec<usize> = (0..elements.len()).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (i, u) in elements.iter().enumerate() {
        for m in moves.moves() {
            for sign in [1, -1] {
                if let Some(v) = u.shifted(m.delta(), sign) {
                    if let Some(&j) = index.get(&v) {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
        }
    }
    let mut groups: Vec<Vec<Table>> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for (i, u) in elements.iter().enumerate() {
        let root = find(&mut parent, i);
        let g = *slot.entry(root).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(u.clone());
    }
    Ok(groups)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enumerate::rho_distribution;
    use crate::model::build_independence_matrix;
    use crate::moves::{basic_moves, cycle_moves_quasi};
    use crate::sampler::{tv_from_counts, SamplerConfig};

    fn two_way(shape: [usize; 2], b: &[u64], zeros: &[usize]) -> FiberSpec {
        FiberSpec::new(
            build_independence_matrix(&shape).unwrap(),
            b.to_vec(),
            zeros.iter().copied().collect(),
            shape.to_vec(),
        )
        .unwrap()
    }

    fn t(shape: [usize; 2], cells: &[u64]) -> Table {
        Table::new(shape.to_vec(), cells.to_vec()).unwrap()
    }

    #[test]
    fn acceptance_examples() {
        let u = Table::from_vec(vec![2, 0]);
        let v = Table::from_vec(vec![1, 1]);
        assert_eq!(acceptance_ratio(&u, &u), 1.0);
        assert_eq!(acceptance_ratio(&u, &v), 1.0);
        assert!((acceptance_ratio(&v, &u) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn singleton_fiber_never_moves() {
        let spec = two_way([2, 2], &[2, 0, 1, 1], &[]);
        let obs = t([2, 2], &[1, 1, 0, 0]);
        let moves = basic_moves(&[2, 2], &Default::default()).unwrap();
        let stat = |x: &Table| x.cells()[0] as f64;
        let mut seen = Vec::new();
        let rec = run_walk_observed(
            &spec,
            &obs,
            HybridSchedule::MovesOnly,
            Some(&moves),
            None,
            200,
            &stat,
            1,
            &mut |x| seen.push(x.clone()),
        )
        .unwrap();
        assert!(seen.iter().all(|x| x == &obs));
        assert!(rec.accepted.iter().all(|&a| !a));
        assert_eq!(rec.p_sequence, vec![1.0; 200]);
    }

    #[test]
    fn swap_on_unit_margins_is_always_accepted() {
        let spec = two_way([2, 2], &[1, 1, 1, 1], &[]);
        let obs = t([2, 2], &[1, 0, 0, 1]);
        let moves = basic_moves(&[2, 2], &Default::default()).unwrap();
        let ctx = WalkContext {
            spec: &spec,
            stat: &|_: &Table| 0.0,
            threshold: 0.0,
        };
        let mut state = WalkState::new(obs.clone(), &ctx, walk_rng(3, 0));
        let mut rec = WalkRecord::default();
        for _ in 0..100 {
            let before = state.current.clone();
            state.mh_step_move(&moves, &ctx, &mut rec);
            // either the sign leaves the orthant or the swap is taken
            assert!(state.current != before || !rec.accepted.last().unwrap());
        }
        assert!(rec.accepted.iter().any(|&a| a));
    }

    #[test]
    fn sat_step_rejects_non_fiber_proposal() {
        let spec = two_way([2, 2], &[1, 1, 1, 1], &[]);
        let obs = t([2, 2], &[1, 0, 0, 1]);
        let ctx = WalkContext {
            spec: &spec,
            stat: &|_: &Table| 0.0,
            threshold: 0.0,
        };
        let mut state = WalkState::new(obs.clone(), &ctx, walk_rng(3, 0));
        let mut rec = WalkRecord::default();
        assert!(state
            .mh_step_sat(t([2, 2], &[1, 1, 0, 0]), &ctx, &mut rec)
            .is_err());
        state.mh_step_sat(obs.clone(), &ctx, &mut rec).unwrap();
        assert_eq!(state.current, obs);
        assert_eq!(rec.steps(), 1);
        let other = t([2, 2], &[0, 1, 1, 0]);
        state.mh_step_sat(other.clone(), &ctx, &mut rec).unwrap();
        assert_eq!(state.current, other);
        assert!(rec.accepted[1]);
    }

    #[test]
    fn two_element_fiber_is_balanced() {
        let spec = two_way([2, 2], &[1, 1, 1, 1], &[]);
        let obs = t([2, 2], &[1, 0, 0, 1]);
        let moves = basic_moves(&[2, 2], &Default::default()).unwrap();
        let mut count = 0usize;
        run_walk_observed(
            &spec,
            &obs,
            HybridSchedule::MovesOnly,
            Some(&moves),
            None,
            100_000,
            &|_| 0.0,
            17,
            &mut |x| count += usize::from(x == &obs),
        )
        .unwrap();
        let tv = tv_from_counts(&[count, 100_000 - count], &[0.5, 0.5]);
        assert!(tv < 0.02, "{tv}");
    }

    #[test]
    fn sat_only_reaches_rho() {
        let spec = two_way([2, 3], &[3, 2, 2, 2, 1], &[]);
        let enumeration = cached_enumeration(&spec).unwrap();
        let rho = rho_distribution(&enumeration.elements);
        let index: HashMap<&Table, usize> = enumeration
            .elements
            .iter()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        let mut counts = vec![0; rho.len()];
        let mut sampler = FiberSampler::new(&spec, &SamplerConfig::internal_uniform()).unwrap();
        let obs = enumeration.elements[0].clone();
        run_walk_observed(
            &spec,
            &obs,
            HybridSchedule::SatOnly,
            None,
            Some(&mut sampler),
            100_000,
            &|_| 0.0,
            5,
            &mut |x| counts[index[x]] += 1,
        )
        .unwrap();
        assert!(tv_from_counts(&counts, &rho) < 0.02);
    }

    #[test]
    fn schedule_accounting() {
        let spec = two_way([3, 3], &[2, 2, 1, 2, 1, 2], &[]);
        let obs = cached_enumeration(&spec).unwrap().elements[0].clone();
        let moves = basic_moves(&[3, 3], &Default::default()).unwrap();
        let mut sampler = FiberSampler::new(&spec, &SamplerConfig::internal_uniform()).unwrap();
        let stat = |x: &Table| x.cells()[0] as f64;
        let a = run_walk(
            &spec,
            &obs,
            HybridSchedule::Alternating { n: 5 },
            Some(&moves),
            Some(&mut sampler),
            50,
            &stat,
            2,
        )
        .unwrap();
        assert_eq!(a.sat_steps(), 10);
        assert_eq!(a.move_steps, 40);
        assert_eq!(
            a.kinds.iter().filter(|&&k| k == ProposalKind::Sat).count(),
            10
        );
        assert_eq!(a.kinds[4], ProposalKind::Sat);

        let p = run_walk(
            &spec,
            &obs,
            HybridSchedule::ParallelStarts { n: 5, k: 10 },
            Some(&moves),
            Some(&mut sampler),
            50,
            &stat,
            2,
        )
        .unwrap();
        assert_eq!(p.sat_steps(), 10);
        assert_eq!(p.steps(), 50);
        assert_eq!(p.move_steps, 50);
    }

    #[test]
    fn p_sequence_is_running_mean() {
        let spec = two_way([3, 3], &[2, 2, 1, 2, 1, 2], &[]);
        let obs = cached_enumeration(&spec).unwrap().elements[3].clone();
        let moves = cycle_moves_quasi(&[3, 3], &Default::default()).unwrap();
        let stat = |x: &Table| x.cells()[0] as f64 + 0.5 * x.cells()[4] as f64;
        let threshold = stat(&obs);
        let mut hits = 0u64;
        let mut i = 0u64;
        let mut ok = true;
        let rec = run_walk_observed(
            &spec,
            &obs,
            HybridSchedule::MovesOnly,
            Some(&moves),
            None,
            1000,
            &stat,
            8,
            &mut |x| {
                i += 1;
                hits += u64::from(stat(x) >= threshold);
                let _ = i;
            },
        )
        .unwrap();
        let mut h = 0u64;
        for (k, p) in rec.p_sequence.iter().enumerate() {
            h = (p * (k + 1) as f64).round() as u64;
            ok &= (*p - h as f64 / (k + 1) as f64).abs() < 1e-15;
        }
        assert!(ok);
        assert_eq!(h, hits);
        assert_eq!(rec.hits, hits);
    }

    #[test]
    fn runs_are_reproducible() {
        let spec = two_way([3, 3], &[2, 2, 1, 2, 1, 2], &[]);
        let obs = cached_enumeration(&spec).unwrap().elements[1].clone();
        let moves = basic_moves(&[3, 3], &Default::default()).unwrap();
        let stat = |x: &Table| x.cells()[0] as f64;
        let run = |seed| {
            let mut sampler = FiberSampler::new(&spec, &SamplerConfig::internal_uniform()).unwrap();
            run_walk(
                &spec,
                &obs,
                HybridSchedule::Alternating { n: 3 },
                Some(&moves),
                Some(&mut sampler),
                500,
                &stat,
                seed,
            )
            .unwrap()
        };
        assert_eq!(run(4).p_sequence, run(4).p_sequence);
        assert_ne!(run(4).accepted, run(5).accepted);
    }

    #[test]
    fn failing_source_yields_partial_record() {
        struct Flaky(usize);
        impl ProposalSource for Flaky {
            fn draw(&mut self, _: &mut ChaCha8Rng) -> Result<Table> {
                if self.0 == 0 {
                    return Err(Error::NoValidSamples { invalid: 3 });
                }
                self.0 -= 1;
                Ok(Table::new(vec![2, 2], vec![0, 1, 1, 0]).unwrap())
            }
        }
        let spec = two_way([2, 2], &[1, 1, 1, 1], &[]);
        let obs = t([2, 2], &[1, 0, 0, 1]);
        let moves = basic_moves(&[2, 2], &Default::default()).unwrap();
        let mut src = Flaky(2);
        let rec = run_walk(
            &spec,
            &obs,
            HybridSchedule::Alternating { n: 2 },
            Some(&moves),
            Some(&mut src),
            100,
            &|_| 0.0,
            0,
        )
        .unwrap();
        assert!(rec.aborted.is_some());
        assert_eq!(rec.steps(), 5);
        assert_eq!(rec.sat_steps(), 2);
    }

    #[test]
    fn missing_inputs_are_rejected() {
        let spec = two_way([2, 2], &[1, 1, 1, 1], &[]);
        let obs = t([2, 2], &[1, 0, 0, 1]);
        assert!(run_walk(
            &spec,
            &obs,
            HybridSchedule::MovesOnly,
            None,
            None,
            10,
            &|_| 0.0,
            0
        )
        .is_err());
        assert!(run_walk(
            &spec,
            &obs,
            HybridSchedule::SatOnly,
            None,
            None,
            10,
            &|_| 0.0,
            0
        )
        .is_err());
        let bad = t([2, 2], &[1, 1, 0, 0]);
        let moves = basic_moves(&[2, 2], &Default::default()).unwrap();
        assert!(run_walk(
            &spec,
            &bad,
            HybridSchedule::MovesOnly,
            Some(&moves),
            None,
            10,
            &|_| 0.0,
            0
        )
        .is_err());
        assert!(HybridSchedule::ParallelStarts { n: 0, k: 1 }
            .validate()
            .is_err());
    }

    #[test]
    fn components() {
        let spec = two_way([2, 2], &[1, 1, 1, 1], &[]);
        let moves = basic_moves(&[2, 2], &Default::default()).unwrap();
        let comps = connected_components_under_moves(&spec, &moves).unwrap();
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].len(), 2);

        let single = two_way([2, 2], &[2, 0, 1, 1], &[]);
        assert_eq!(
            connected_components_under_moves(&single, &moves)
                .unwrap()
                .len(),
            1
        );

        let spec = two_way([3, 3], &[2, 3, 1, 2, 2, 2], &[2, 3]);
        let cycles = cycle_moves_quasi(&[3, 3], spec.structural_zeros()).unwrap();
        assert_eq!(
            connected_components_under_moves(&spec, &cycles)
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn csv_layout() {
        let mut rec = WalkRecord::default();
        rec.record(ProposalKind::Move, true, true);
        rec.record(ProposalKind::Sat, false, false);
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "step,p_value,accepted,proposal_kind\n1,1,1,move\n2,0.5,0,sat\n"
        );
    }
}
