//! Exact enumeration of small fibers and exact conditional p-values.

use std::ops::ControlFlow;

use statrs::function::factorial::ln_factorial;

use crate::error::{Error, Result};
use crate::model::{FiberSpec, Table};

pub const DEFAULT_CAP: usize = 10_000_000;

#[derive(Clone, Debug)]
pub struct FiberEnumeration {
    pub elements: Vec<Table>,
    pub complete: bool,
    /// The element limit that stopped the enumeration, if it was hit.
    pub cap_hit: Option<usize>,
}

impl FiberEnumeration {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn require_complete(&self) -> Result<&[Table]> {
        match self.cap_hit {
            Some(cap) if !self.complete => Err(Error::EnumerationIncomplete { cap }),
            _ => Ok(&self.elements),
        }
    }
}

/// Calls `visit` on every fiber element in depth-first order over cells
/// `0..d`, smallest values first. Returns the number of elements visited and
/// whether the search ran to completion.
pub fn visit_fiber<F>(spec: &FiberSpec, mut visit: F) -> Result<(usize, bool)>
where
    F: FnMut(&[u64]) -> ControlFlow<()>,
{
    let a = spec.matrix();
    let d = spec.num_cells();
    let rows = a.rows();

    let free: Vec<bool> = (0..d).map(|j| !spec.is_structural_zero(j)).collect();
    for j in 0..d {
        if free[j] && a.col_support(j).is_empty() {
            return Err(Error::UnboundedCell { cell: j });
        }
    }
    // Rows whose residual must hit zero once a given cell has been assigned.
    let mut closes: Vec<Vec<usize>> = vec![Vec::new(); d];
    for i in 0..rows {
        match a.row_support(i).iter().rev().find(|&&j| free[j]) {
            Some(&last) => closes[last].push(i),
            None if spec.margins()[i] != 0 => return Ok((0, true)),
            None => {}
        }
    }

    let mut search = Search {
        spec,
        free,
        closes,
        residual: spec.margins().to_vec(),
        cells: vec![0; d],
        count: 0,
    };
    let flow = search.descend(0, &mut visit);
    Ok((search.count, flow.is_continue()))
}

struct Search<'a> {
    spec: &'a FiberSpec,
    free: Vec<bool>,
    closes: Vec<Vec<usize>>,
    residual: Vec<u64>,
    cells: Vec<u64>,
    count: usize,
}

impl Search<'_> {
    fn descend<F>(&mut self, cell: usize, visit: &mut F) -> ControlFlow<()>
    where
        F: FnMut(&[u64]) -> ControlFlow<()>,
    {
        if cell == self.cells.len() {
            self.count += 1;
            return visit(&self.cells);
        }
        if !self.free[cell] {
            self.cells[cell] = 0;
            return self.descend(cell + 1, visit);
        }
        let a = self.spec.matrix();
        let support = a.col_support(cell);
        let upper = support
            .iter()
            .map(|&i| self.residual[i] / a.get(i, cell))
            .min()
            .expect("bounded cell");
        for v in 0..=upper {
            for &i in support {
                self.residual[i] -= a.get(i, cell) * v;
            }
            let feasible = self.closes[cell].iter().all(|&i| self.residual[i] == 0);
            let flow = if feasible {
                self.cells[cell] = v;
                self.descend(cell + 1, visit)
            } else {
                ControlFlow::Continue(())
            };
            for &i in support {
                self.residual[i] += a.get(i, cell) * v;
            }
            flow?;
        }
        self.cells[cell] = 0;
        ControlFlow::Continue(())
    }
}

/// Collects the fiber, stopping once `cap` elements have been found.
pub fn enumerate_fiber(spec: &FiberSpec, cap: Option<usize>) -> Result<FiberEnumeration> {
    let cap = cap.unwrap_or(DEFAULT_CAP);
    let shape = spec.shape().to_vec();
    let mut elements = Vec::new();
    let mut hit = false;
    visit_fiber(spec, |cells| {
        if elements.len() == cap {
            hit = true;
            return ControlFlow::Break(());
        }
        elements.push(Table::new(shape.clone(), cells.to_vec()).expect("shape matches spec"));
        ControlFlow::Continue(())
    })?;
    Ok(FiberEnumeration {
        elements,
        complete: !hit,
        cap_hit: hit.then_some(cap),
    })
}

/// Number of fiber elements; errors if the count exceeds `cap`.
pub fn fiber_size(spec: &FiberSpec, cap: Option<usize>) -> Result<usize> {
    let cap = cap.unwrap_or(DEFAULT_CAP);
    let mut n = 0usize;
    let (_, complete) = visit_fiber(spec, |_| {
        if n == cap {
            return ControlFlow::Break(());
        }
        n += 1;
        ControlFlow::Continue(())
    })?;
    if complete {
        Ok(n)
    } else {
        Err(Error::EnumerationIncomplete { cap })
    }
}

/// `-sum_i log(u_i!)`, the log of the conditional weight up to a constant.
pub fn log_rho_unnormalized(table: &Table) -> f64 {
    log_rho_cells(table.cells())
}

pub(crate) fn log_rho_cells(cells: &[u64]) -> f64 {
    -cells.iter().map(|&c| ln_factorial(c)).sum::<f64>()
}

/// Pairwise summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let (lo, hi) = xs.split_at(xs.len() / 2);
    pairwise_sum(lo) + pairwise_sum(hi)
}

/// `log(sum(exp(xs)))`, or `-inf` for an empty slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let scaled: Vec<f64> = xs.iter().map(|&x| (x - max).exp()).collect();
    max + pairwise_sum(&scaled).ln()
}

/// Normalized conditional distribution over the given elements.
pub fn rho_distribution(elements: &[Table]) -> Vec<f64> {
    let logs: Vec<f64> = elements.iter().map(log_rho_unnormalized).collect();
    let z = log_sum_exp(&logs);
    logs.iter().map(|&l| (l - z).exp()).collect()
}

/// Conditional probability that `stat(v) >= threshold` over an enumerated
/// fiber.
pub fn exact_p_value_from<F>(enumeration: &FiberEnumeration, threshold: f64, stat: F) -> Result<f64>
where
    F: Fn(&Table) -> f64,
{
    let elements = enumeration.require_complete()?;
    if elements.is_empty() {
        return Err(Error::EmptyFiber);
    }
    let mut all = Vec::with_capacity(elements.len());
    let mut extreme = Vec::new();
    for u in elements {
        let lr = log_rho_unnormalized(u);
        all.push(lr);
        if stat(u) >= threshold {
            extreme.push(lr);
        }
    }
    let p = (log_sum_exp(&extreme) - log_sum_exp(&all)).exp();
    Ok(p.clamp(0.0, 1.0))
}

pub fn exact_p_value<F>(spec: &FiberSpec, threshold: f64, stat: F) -> Result<f64>
where
    F: Fn(&Table) -> f64,
{
    let enumeration = enumerate_fiber(spec, None)?;
    exact_p_value_from(&enumeration, threshold, stat)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::model::{build_independence_matrix, ConstraintMatrix};

    fn two_way(shape: [usize; 2], b: &[u64], zeros: &[usize]) -> FiberSpec {
        FiberSpec::new(
            build_independence_matrix(&shape).unwrap(),
            b.to_vec(),
            zeros.iter().copied().collect(),
            shape.to_vec(),
        )
        .unwrap()
    }

    /// All 0/1 tables of the given shape with the given margins.
    fn brute_force_binary(shape: [usize; 2], b: &[u64]) -> Vec<Vec<u64>> {
        let a = build_independence_matrix(&shape).unwrap();
        let d = shape[0] * shape[1];
        (0u32..1 << d)
            .map(|mask| (0..d).map(|j| u64::from(mask >> j & 1)).collect::<Vec<_>>())
            .filter(|cells| a.apply(cells).unwrap() == b)
            .collect()
    }

    #[test]
    fn unit_margins_2x2() {
        let e = enumerate_fiber(&two_way([2, 2], &[1, 1, 1, 1], &[]), None).unwrap();
        assert!(e.complete);
        let got: Vec<&[u64]> = e.elements.iter().map(|t| t.cells()).collect();
        assert_eq!(got, vec![&[0, 1, 1, 0][..], &[1, 0, 0, 1][..]]);
    }

    #[test]
    fn unit_margins_3x3_are_permutations() {
        let spec = two_way([3, 3], &[1; 6], &[]);
        let e = enumerate_fiber(&spec, None).unwrap();
        let mut brute = brute_force_binary([3, 3], &[1; 6]);
        brute.sort();
        assert_eq!(brute.len(), 6);
        let mut got: Vec<Vec<u64>> = e.elements.iter().map(|t| t.cells().to_vec()).collect();
        got.sort();
        assert_eq!(got, brute);
        assert_eq!(fiber_size(&spec, None).unwrap(), 6);
    }

    #[test]
    fn zero_margin_forces_zero_cells() {
        let spec = two_way([3, 3], &[0, 2, 3, 1, 2, 2], &[]);
        let e = enumerate_fiber(&spec, None).unwrap();
        assert!(!e.is_empty());
        for t in &e.elements {
            assert_eq!(&t.cells()[0..3], &[0, 0, 0]);
            assert!(spec.contains(t));
        }
    }

    #[test]
    fn infeasible_and_zero_fibers() {
        // row total 3, column total 2
        assert_eq!(
            fiber_size(&two_way([2, 2], &[1, 2, 1, 1], &[]), None).unwrap(),
            0
        );
        let e = enumerate_fiber(&two_way([2, 2], &[0; 4], &[]), None).unwrap();
        assert_eq!(e.len(), 1);
        assert!(e.elements[0].cells().iter().all(|&c| c == 0));
    }

    #[test]
    fn structural_zeros_respected() {
        // diagonal removed from 3x3 with unit margins: the two derangements
        let spec = two_way([3, 3], &[1; 6], &[0, 4, 8]);
        let e = enumerate_fiber(&spec, None).unwrap();
        assert_eq!(e.len(), 2);
        for t in &e.elements {
            assert_eq!((t.cells()[0], t.cells()[4], t.cells()[8]), (0, 0, 0));
        }
    }

    #[test]
    fn cap_marks_incomplete() {
        let spec = two_way([3, 3], &[1; 6], &[]);
        let e = enumerate_fiber(&spec, Some(4)).unwrap();
        assert_eq!(e.len(), 4);
        assert!(!e.complete);
        assert_eq!(e.cap_hit, Some(4));
        assert!(matches!(
            fiber_size(&spec, Some(5)),
            Err(Error::EnumerationIncomplete { .. })
        ));
        assert!(exact_p_value_from(&e, 0.0, |_| 1.0).is_err());
        // exactly at the cap is still complete
        assert!(enumerate_fiber(&spec, Some(6)).unwrap().complete);
    }

    #[test]
    fn unbounded_cell_rejected() {
        let a = ConstraintMatrix::new(1, 2, vec![1, 0]).unwrap();
        let spec = FiberSpec::new(a.clone(), vec![1], BTreeSet::new(), vec![2]).unwrap();
        assert!(matches!(
            enumerate_fiber(&spec, None),
            Err(Error::UnboundedCell { cell: 1 })
        ));
        // fine once the unbounded cell is a structural zero
        let spec = FiberSpec::new(a, vec![1], [1].into_iter().collect(), vec![2]).unwrap();
        assert_eq!(fiber_size(&spec, None).unwrap(), 1);
    }

    #[test]
    fn non_unit_coefficients() {
        // 2x + y = 5, x,y >= 0: (0,5) (1,3) (2,1)
        let a = ConstraintMatrix::new(1, 2, vec![2, 1]).unwrap();
        let spec = FiberSpec::new(a, vec![5], BTreeSet::new(), vec![2]).unwrap();
        let e = enumerate_fiber(&spec, None).unwrap();
        let got: Vec<&[u64]> = e.elements.iter().map(|t| t.cells()).collect();
        assert_eq!(got, vec![&[0, 5][..], &[1, 3][..], &[2, 1][..]]);
    }

    #[test]
    fn log_rho_examples() {
        assert_eq!(log_rho_unnormalized(&Table::from_vec(vec![0, 0, 0])), 0.0);
        assert!((log_rho_unnormalized(&Table::from_vec(vec![2, 0])) + 2f64.ln()).abs() < 1e-12);
        assert_eq!(log_rho_unnormalized(&Table::from_vec(vec![1; 5])), 0.0);
    }

    #[test]
    fn p_value_extremes() {
        let spec = two_way([3, 3], &[2, 1, 1, 1, 2, 1], &[]);
        let stat = |t: &Table| t.cells()[0] as f64;
        assert_eq!(exact_p_value(&spec, f64::NEG_INFINITY, stat).unwrap(), 1.0);
        assert_eq!(exact_p_value(&spec, 100.0, stat).unwrap(), 0.0);
    }

    #[test]
    fn p_value_weights_by_rho() {
        // margins (2,0) rows, (1,1) cols on 2x2: single table. Use 1x-free
        // example: rows (2,2) cols (2,2) -> tables with u00 in {0,1,2}
        let spec = two_way([2, 2], &[2, 2, 2, 2], &[]);
        let e = enumerate_fiber(&spec, None).unwrap();
        assert_eq!(e.len(), 3);
        // weights: u00=0 -> 1/(2!2!)=1/4, u00=1 -> 1, u00=2 -> 1/4
        let p = exact_p_value_from(&e, 2.0, |t| t.cells()[0] as f64).unwrap();
        assert!((p - 0.25 / 1.5).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_handles_empty_and_large() {
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
        let v = log_sum_exp(&[1000.0, 1000.0]);
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn enumeration_is_deterministic() {
        let spec = two_way([3, 3], &[2, 2, 2, 3, 2, 1], &[]);
        let a = enumerate_fiber(&spec, None).unwrap();
        let b = enumerate_fiber(&spec, None).unwrap();
        assert_eq!(a.elements, b.elements);
        let set: BTreeSet<_> = a.elements.iter().collect();
        assert_eq!(set.len(), a.len());
    }
}
