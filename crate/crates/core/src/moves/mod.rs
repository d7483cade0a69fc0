//! Move sets for fiber walks.

mod bipartite;

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use log::warn;

pub use bipartite::{
    is_doubly_chordal_bipartite, repair_structural_zeros, BipartiteGraph, Cycle, DEFAULT_CYCLE_CAP,
};

use crate::error::{Error, Result};
use crate::model::{build_independence_matrix, ConstraintMatrix};

/// An integer kernel vector of the constraint matrix.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Move {
    delta: Vec<i64>,
}

impl Move {
    pub fn delta(&self) -> &[i64] {
        &self.delta
    }

    /// Representative with a positive first nonzero entry.
    fn normalized(mut delta: Vec<i64>) -> Option<Self> {
        let first = *delta.iter().find(|&&x| x != 0)?;
        if first < 0 {
            delta.iter_mut().for_each(|x| *x = -*x);
        }
        Some(Move { delta })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MoveSource {
    Basic,
    Cycle,
    File,
}

#[derive(Clone, Debug)]
pub struct MoveSet {
    moves: Vec<Move>,
    source: MoveSource,
}

impl MoveSet {
    /// Validates kernel membership and drops zero vectors and duplicates up
    /// to sign.
    pub fn new(
        deltas: Vec<Vec<i64>>,
        source: MoveSource,
        matrix: &ConstraintMatrix,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut moves = Vec::with_capacity(deltas.len());
        for (i, delta) in deltas.into_iter().enumerate() {
            if !matrix.annihilates(&delta) {
                return Err(Error::NotInKernel { line: i + 1 });
            }
            if let Some(m) = Move::normalized(delta) {
                if seen.insert(m.clone()) {
                    moves.push(m);
                }
            }
        }
        Ok(MoveSet { moves, source })
    }

    pub fn moves(&self) -> &[Move] {
        &self.moves
    }

    pub fn len(&self) -> usize {
        self.moves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }

    pub fn source(&self) -> MoveSource {
        self.source
    }

    pub fn contains(&self, delta: &[i64]) -> bool {
        Move::normalized(delta.to_vec()).is_some_and(|m| self.moves.contains(&m))
    }
}

fn two_way(shape: &[usize]) -> Result<[usize; 2]> {
    match shape {
        &[a, b] => Ok([a, b]),
        _ => Err(Error::InvalidShape(format!(
            "expected a two-way shape, got {shape:?}"
        ))),
    }
}

/// The 4-cycle moves of `K_{d1,d2}` avoiding the structural zeros.
pub fn basic_moves(shape: &[usize], zeros: &BTreeSet<usize>) -> Result<MoveSet> {
    let [d1, d2] = two_way(shape)?;
    let matrix = build_independence_matrix(shape)?;
    let cell = |i: usize, j: usize| i * d2 + j;
    let mut deltas = Vec::new();
    for i1 in 0..d1 {
        for i2 in i1 + 1..d1 {
            for j1 in 0..d2 {
                for j2 in j1 + 1..d2 {
                    let cells = [cell(i1, j1), cell(i2, j2), cell(i1, j2), cell(i2, j1)];
                    if cells.iter().any(|c| zeros.contains(c)) {
                        continue;
                    }
                    let mut delta = vec![0; d1 * d2];
                    delta[cells[0]] = 1;
                    delta[cells[1]] = 1;
                    delta[cells[2]] = -1;
                    delta[cells[3]] = -1;
                    deltas.push(delta);
                }
            }
        }
    }
    MoveSet::new(deltas, MoveSource::Basic, &matrix)
}

/// One alternating move per simple cycle of `K_{d1,d2}` minus the zeros.
pub fn cycle_moves_quasi(shape: &[usize], zeros: &BTreeSet<usize>) -> Result<MoveSet> {
    cycle_moves_with_cap(shape, zeros, DEFAULT_CYCLE_CAP)
}

pub fn cycle_moves_with_cap(
    shape: &[usize],
    zeros: &BTreeSet<usize>,
    cap: usize,
) -> Result<MoveSet> {
    let shape2 = two_way(shape)?;
    let matrix = build_independence_matrix(shape)?;
    let graph = BipartiteGraph::new(shape2, zeros);
    let deltas = graph
        .cycles(4, cap)?
        .iter()
        .map(|c| c.to_delta(shape2))
        .collect();
    MoveSet::new(deltas, MoveSource::Cycle, &matrix)
}

/// Parses a move file: one whitespace-separated integer vector per line,
/// optionally preceded by a header line (the move count, or `count dim`).
pub fn parse_markov_basis(text: &str, matrix: &ConstraintMatrix) -> Result<MoveSet> {
    let d = matrix.cols();
    let mut deltas = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if first {
            first = false;
            let is_header = toks.len() != d
                && (toks.len() == 1 || (toks.len() == 2 && toks[1] == d.to_string()));
            if is_header {
                continue;
            }
        }
        if toks.len() != d {
            return Err(Error::parse(
                lineno,
                format!("expected {d} entries, found {}", toks.len()),
            ));
        }
        let delta = toks
            .iter()
            .map(|t| {
                t.parse::<i64>()
                    .map_err(|_| Error::parse(lineno, format!("bad integer {t:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if !matrix.annihilates(&delta) {
            return Err(Error::NotInKernel { line: lineno });
        }
        if delta.iter().all(|&x| x == 0) {
            return Err(Error::parse(lineno, "zero move"));
        }
        deltas.push(delta);
    }
    let n = deltas.len();
    let set = MoveSet::new(deltas, MoveSource::File, matrix)?;
    if set.len() < n {
        warn!(
            "markov basis file: dropped {} duplicate moves",
            n - set.len()
        );
    }
    Ok(set)
}

pub fn load_markov_basis(path: &Path, matrix: &ConstraintMatrix) -> Result<MoveSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_markov_basis(&text, matrix)
}
