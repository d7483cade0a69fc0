//! Initial tables for the evaluation runs.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{build_n3f_matrix, FiberSpec, Table};
use crate::moves::{is_doubly_chordal_bipartite, repair_structural_zeros};
use crate::sampler::{FiberSampler, SamplerConfig};

const MAX_ATTEMPTS: usize = 1000;
const QUASI_RETRIES: usize = 100;
/// Probability mass placed on the matched diagonal cells of `u_dep`.
pub const DIAGONAL_MASS: f64 = 0.8;

fn two_way(shape: &[usize]) -> Result<[usize; 2]> {
    match *shape {
        [a, b] if a > 0 && b > 0 => Ok([a, b]),
        _ => Err(Error::InvalidShape(format!(
            "expected a two-way shape, got {shape:?}"
        ))),
    }
}

fn multinomial(rng: &mut ChaCha8Rng, n: u64, probs: &[f64]) -> Vec<u64> {
    let dist = WeightedIndex::new(probs).expect("positive weights");
    let mut counts = vec![0; probs.len()];
    for _ in 0..n {
        counts[dist.sample(rng)] += 1;
    }
    counts
}

fn random_marginal(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| 0.25 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Rounds nonnegative reals to integers summing to `total`, giving the
/// leftover units to the largest fractional parts (ties to lower index).
pub fn largest_remainder(values: &[f64], total: u64) -> Vec<u64> {
    let mut out: Vec<u64> = values.iter().map(|v| v.max(0.0).floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = values[a] - values[a].floor();
        let fb = values[b] - values[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order
        .iter()
        .cycle()
        .take(total.saturating_sub(assigned) as usize)
    {
        out[i] += 1;
    }
    out
}

fn margins_positive(shape: [usize; 2], cells: &[u64]) -> bool {
    let [d1, d2] = shape;
    (0..d1).all(|i| (0..d2).any(|j| cells[i * d2 + j] > 0))
        && (0..d2).all(|j| (0..d1).any(|i| cells[i * d2 + j] > 0))
}

/// Blend `lambda * u_indep + (1 - lambda) * u_dep` of an independent and a
/// diagonal-heavy multinomial table, rejection-sampled for positive margins.
pub fn generate_initial_two_way(shape: &[usize], n: u64, lambda: f64, seed: u64) -> Result<Table> {
    let s = two_way(shape)?;
    let [d1, d2] = s;
    if n < (d1 + d2) as u64 {
        return Err(Error::Config(format!(
            "sample size {n} is below d1 + d2 = {}",
            d1 + d2
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("lambda {lambda} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = d1 * d2;
    let diag = d1.min(d2);
    let dep: Vec<f64> = (0..d)
        .map(|c| {
            let on_diag = c / d2 == c % d2;
            (1.0 - DIAGONAL_MASS) / d as f64
                + if on_diag {
                    DIAGONAL_MASS / diag as f64
                } else {
                    0.0
                }
        })
        .collect();
    for _ in 0..MAX_ATTEMPTS {
        let p = random_marginal(&mut rng, d1);
        let q = random_marginal(&mut rng, d2);
        let indep: Vec<f64> = (0..d).map(|c| p[c / d2] * q[c % d2]).collect();
        let u_indep = multinomial(&mut rng, n, &indep);
        let u_dep = multinomial(&mut rng, n, &dep);
        let blend: Vec<f64> = u_indep
            .iter()
            .zip(&u_dep)
            .map(|(&a, &b)| lambda * a as f64 + (1.0 - lambda) * b as f64)
            .collect();
        let cells = largest_remainder(&blend, n);
        if margins_positive(s, &cells) {
            return Table::new(shape.to_vec(), cells);
        }
    }
    Err(Error::GenerationFailed {
        attempts: MAX_ATTEMPTS,
        reason: "margins stayed non-positive".into(),
    })
}

/// A two-way table together with structural zeros for which the
/// quasi-independence fit has the chordal closed form.
pub fn generate_initial_quasi(
    shape: &[usize],
    n: u64,
    lambda: f64,
    seed: u64,
) -> Result<(Table, BTreeSet<usize>)> {
    let s = two_way(shape)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut last = String::new();
    for _ in 0..QUASI_RETRIES {
        let table = generate_initial_two_way(shape, n, lambda, seeds.random())?;
        let initial: BTreeSet<usize> = (0..table.len())
            .filter(|&c| table.cells()[c] == 0)
            .collect();
        let zeros = match repair_structural_zeros(shape, &initial, seeds.random()) {
            Ok(z) => z,
            Err(e @ Error::DegenerateZeros { .. }) => {
                last = e.to_string();
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut kept: Vec<f64> = table.cells().iter().map(|&x| x as f64).collect();
        let mut removed = 0.0;
        for &z in &zeros {
            removed += kept[z];
            kept[z] = 0.0;
        }
        let remaining: f64 = kept.iter().sum();
        if remaining == 0.0 {
            last = "all mass on structural zeros".into();
            continue;
        }
        let scaled: Vec<f64> = kept.iter().map(|&x| x + removed * x / remaining).collect();
        let cells = largest_remainder(&scaled, n);
        if !margins_positive(s, &cells) {
            last = "a margin vanished after repair".into();
            continue;
        }
        debug_assert!(is_doubly_chordal_bipartite(shape, &zeros)?.0);
        return Ok((Table::new(shape.to_vec(), cells)?, zeros));
    }
    Err(Error::GenerationFailed {
        attempts: QUASI_RETRIES,
        reason: last,
    })
}

/// Draws `n` cells of the `d x d x d` cube uniformly and returns one sample
/// from the no-three-way fiber through the resulting table.
pub fn generate_initial_n3f(d: usize, n: u64, sampler: &SamplerConfig, seed: u64) -> Result<Table> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = vec![0u64; d * d * d];
    let d3 = cells.len();
    for _ in 0..n {
        cells[rng.random_range(0..d3)] += 1;
    }
    draw_from_fiber_of(d, &cells, sampler, &mut rng)
}

fn draw_from_fiber_of(
    d: usize,
    cells: &[u64],
    sampler: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Table> {
    let matrix = build_n3f_matrix(d)?;
    let b = matrix.apply(cells)?;
    let spec = FiberSpec::new(matrix, b, BTreeSet::new(), vec![d, d, d])?;
    let mut source = FiberSampler::new(&spec, sampler)?;
    source.draw(rng)
}
