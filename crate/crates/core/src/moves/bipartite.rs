//! Cycles of `K_{d1,d2}` minus a set of removed edges (structural zeros).

use std::collections::BTreeSet;
use std::ops::ControlFlow;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_CYCLE_CAP: usize = 1_000_000;

/// A simple cycle `r0 c0 r1 c1 ... r_{t-1} c_{t-1}` with edges
/// `(r_a, c_a)` and `(r_{a+1}, c_a)`, indices taken mod `t`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cycle {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Cycle {
    pub fn len(&self) -> usize {
        2 * self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Edges as `(row, col)` pairs, alternating between the two signs of
    /// the associated move.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let t = self.rows.len();
        let mut edges = Vec::with_capacity(2 * t);
        for a in 0..t {
            edges.push((self.rows[a], self.cols[a]));
            edges.push((self.rows[(a + 1) % t], self.cols[a]));
        }
        edges
    }

    /// The +1/-1 alternating vector on the cycle's cells.
    pub fn to_delta(&self, shape: [usize; 2]) -> Vec<i64> {
        let mut delta = vec![0; shape[0] * shape[1]];
        for (k, (r, c)) in self.edges().into_iter().enumerate() {
            delta[r * shape[1] + c] = if k % 2 == 0 { 1 } else { -1 };
        }
        delta
    }
}

/// `K_{d1,d2}` with the edges in `removed` deleted. Edge `(i, j)` is cell
/// `i * d2 + j`.
#[derive(Clone, Debug)]
pub struct BipartiteGraph {
    shape: [usize; 2],
    present: Vec<bool>,
}

impl BipartiteGraph {
    pub fn new(shape: [usize; 2], removed: &BTreeSet<usize>) -> Self {
        let present = (0..shape[0] * shape[1])
            .map(|c| !removed.contains(&c))
            .collect();
        BipartiteGraph { shape, present }
    }

    pub fn has_edge(&self, row: usize, col: usize) -> bool {
        self.present[row * self.shape[1] + col]
    }

    /// Edges between the cycle's vertices that are not cycle edges.
    pub fn chords(&self, cycle: &Cycle) -> usize {
        let present = cycle
            .rows
            .iter()
            .flat_map(|&r| cycle.cols.iter().map(move |&c| (r, c)))
            .filter(|&(r, c)| self.has_edge(r, c))
            .count();
        present - cycle.len()
    }

    /// Visits every simple cycle of length at least `min_len` once. Fails if
    /// more than `cap` cycles would be visited.
    pub fn for_each_cycle<F>(&self, min_len: usize, cap: usize, mut visit: F) -> Result<()>
    where
        F: FnMut(&Cycle) -> ControlFlow<()>,
    {
        let mut walker = CycleWalker {
            graph: self,
            min_len,
            cap,
            seen: 0,
            rows: Vec::new(),
            cols: Vec::new(),
            row_used: vec![false; self.shape[0]],
            col_used: vec![false; self.shape[1]],
        };
        for r0 in 0..self.shape[0] {
            walker.rows.push(r0);
            walker.row_used[r0] = true;
            let flow = walker.from_row(r0, &mut visit)?;
            walker.row_used[r0] = false;
            walker.rows.pop();
            if flow.is_break() {
                break;
            }
        }
        Ok(())
    }

    pub fn cycles(&self, min_len: usize, cap: usize) -> Result<Vec<Cycle>> {
        let mut out = Vec::new();
        self.for_each_cycle(min_len, cap, |c| {
            out.push(c.clone());
            ControlFlow::Continue(())
        })?;
        Ok(out)
    }
}

struct CycleWalker<'g> {
    graph: &'g BipartiteGraph,
    min_len: usize,
    cap: usize,
    seen: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    row_used: Vec<bool>,
    col_used: Vec<bool>,
}

impl CycleWalker<'_> {
    /// Extends the path from its last row; the first row is the smallest row
    /// on the cycle.
    fn from_row<F>(&mut self, row: usize, visit: &mut F) -> Result<ControlFlow<()>>
    where
        F: FnMut(&Cycle) -> ControlFlow<()>,
    {
        let r0 = self.rows[0];
        for c in 0..self.graph.shape[1] {
            if self.col_used[c] || !self.graph.has_edge(row, c) {
                continue;
            }
            self.cols.push(c);
            self.col_used[c] = true;
            let mut flow = ControlFlow::Continue(());
            // close the cycle through r0; orientation fixed by c0 < c_last
            if self.rows.len() >= 2
                && self.graph.has_edge(r0, c)
                && self.cols[0] < c
                && 2 * self.rows.len() >= self.min_len
            {
                self.seen += 1;
                if self.seen > self.cap {
                    return Err(Error::CycleCapExceeded { cap: self.cap });
                }
                let cycle = Cycle {
                    rows: self.rows.clone(),
                    cols: self.cols.clone(),
                };
                flow = visit(&cycle);
            }
            if flow.is_continue() {
                for r in r0 + 1..self.graph.shape[0] {
                    if self.row_used[r] || !self.graph.has_edge(r, c) {
                        continue;
                    }
                    self.rows.push(r);
                    self.row_used[r] = true;
                    flow = self.from_row(r, visit)?;
                    self.row_used[r] = false;
                    self.rows.pop();
                    if flow.is_break() {
                        break;
                    }
                }
            }
            self.col_used[c] = false;
            self.cols.pop();
            if flow.is_break() {
                return Ok(flow);
            }
        }
        Ok(ControlFlow::Continue(()))
    }
}

fn require_two_way(shape: &[usize]) -> Result<[usize; 2]> {
    match shape {
        &[a, b] => Ok([a, b]),
        _ => Err(Error::InvalidShape(format!(
            "expected a two-way shape, got {shape:?}"
        ))),
    }
}

/// Whether every cycle of length at least six in `K_{d1,d2}` minus `zeros`
/// has at least two chords. On failure returns a violating cycle.
pub fn is_doubly_chordal_bipartite(
    shape: &[usize],
    zeros: &BTreeSet<usize>,
) -> Result<(bool, Option<Cycle>)> {
    let shape = require_two_way(shape)?;
    let graph = BipartiteGraph::new(shape, zeros);
    let mut witness = None;
    graph.for_each_cycle(6, DEFAULT_CYCLE_CAP, |c| {
        if graph.chords(c) < 2 {
            witness = Some(c.clone());
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })?;
    Ok((witness.is_none(), witness))
}

fn check_degenerate(shape: [usize; 2], zeros: &BTreeSet<usize>) -> Result<()> {
    for i in 0..shape[0] {
        if (0..shape[1]).all(|j| zeros.contains(&(i * shape[1] + j))) {
            return Err(Error::DegenerateZeros {
                axis: "row",
                index: i,
            });
        }
    }
    for j in 0..shape[1] {
        if (0..shape[0]).all(|i| zeros.contains(&(i * shape[1] + j))) {
            return Err(Error::DegenerateZeros {
                axis: "column",
                index: j,
            });
        }
    }
    Ok(())
}

/// Extends `zeros` until the remaining graph is doubly chordal bipartite:
/// repeatedly pick a violating cycle and one of its edges uniformly at
/// random and remove that edge.
pub fn repair_structural_zeros(
    shape: &[usize],
    zeros: &BTreeSet<usize>,
    seed: u64,
) -> Result<BTreeSet<usize>> {
    let shape = require_two_way(shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut zeros = zeros.clone();
    loop {
        let graph = BipartiteGraph::new(shape, &zeros);
        let mut violating = Vec::new();
        graph.for_each_cycle(6, DEFAULT_CYCLE_CAP, |c| {
            if graph.chords(c) < 2 {
                violating.push(c.clone());
            }
            ControlFlow::Continue(())
        })?;
        let Some(cycle) = violating.choose(&mut rng) else {
            return Ok(zeros);
        };
        let &(r, c) = cycle.edges().choose(&mut rng).expect("cycles have edges");
        zeros.insert(r * shape[1] + c);
        check_degenerate(shape, &zeros)?;
    }
}
