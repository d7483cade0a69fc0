//! Bit-blasting of fibers into CNF.
//!
//! Each cell gets `l` Boolean variables (LSB first). Every margin row
//! `sum_j A_ij u_j = b_i` becomes a balanced tree of ripple-carry adders over
//! the shifted cell words, Tseitin-encoded gate by gate, with the sum bits
//! pinned to the bits of `b_i` by unit clauses. Cell variables come first
//! (ids `1..=l*d`), auxiliaries after.

mod dimacs;
mod solve;

use std::collections::BTreeSet;

pub use dimacs::{
    parse_solution_line, parse_solutions, read_dimacs, read_layout, write_dimacs, write_layout,
};
pub use solve::{count_models, enumerate_models, ModelEnumeration, Projection};

use crate::error::{Error, Result};
use crate::model::{FiberSpec, Table};

/// Number of bits needed to represent `value`.
fn bits_needed(value: u64) -> usize {
    (u64::BITS - value.leading_zeros()) as usize
}

/// Bits per cell, chosen so that every fiber element fits into
/// `[0, 2^l - 1]^d`: `max(1, ceil(log2(m + 1)))` with `m` the largest
/// `floor(b_i / A_ij)` over positive entries.
pub fn bit_width(spec: &FiberSpec) -> Result<usize> {
    let a = spec.matrix();
    for j in 0..spec.num_cells() {
        if !spec.is_structural_zero(j) && a.col_support(j).is_empty() {
            return Err(Error::UnboundedCell { cell: j });
        }
    }
    let bound = (0..a.rows())
        .flat_map(|i| {
            a.row_support(i)
                .iter()
                .map(move |&j| spec.margins()[i] / a.get(i, j))
        })
        .max()
        .unwrap_or(0);
    Ok(bits_needed(bound).max(1))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitLayout {
    pub width: usize,
    /// Variable ids per cell, least significant bit first.
    pub cell_vars: Vec<Vec<u32>>,
    /// First and last auxiliary variable, if any gate was emitted.
    pub aux_range: Option<(u32, u32)>,
    pub structural_zeros: BTreeSet<usize>,
    pub shape: Vec<usize>,
}

impl BitLayout {
    pub fn num_cells(&self) -> usize {
        self.cell_vars.len()
    }

    /// All cell variables in increasing order.
    pub fn sampling_set(&self) -> Vec<u32> {
        self.cell_vars.iter().flatten().copied().collect()
    }

    pub fn num_cell_vars(&self) -> u32 {
        (self.width * self.cell_vars.len()) as u32
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CnfFormula {
    pub num_vars: u32,
    pub clauses: Vec<Vec<i32>>,
    /// Comment lines without the leading `c `.
    pub comments: Vec<String>,
    /// Set when some margin cannot be met by construction; the formula then
    /// contains the empty clause.
    pub trivially_unsat: bool,
}

impl CnfFormula {
    pub fn num_clauses(&self) -> usize {
        self.clauses.len()
    }
}

/// Truth values indexed by variable id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Assignment(Vec<Option<bool>>);

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_literals<I: IntoIterator<Item = i32>>(lits: I) -> Self {
        let mut a = Self::new();
        for lit in lits {
            a.set(lit.unsigned_abs(), lit > 0);
        }
        a
    }

    pub fn set(&mut self, var: u32, value: bool) {
        let idx = var as usize;
        if self.0.len() <= idx {
            self.0.resize(idx + 1, None);
        }
        self.0[idx] = Some(value);
    }

    pub fn get(&self, var: u32) -> Option<bool> {
        self.0.get(var as usize).copied().flatten()
    }

    /// Assigned literals in increasing variable order.
    pub fn literals(&self) -> Vec<i32> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(v, val)| val.map(|b| if b { v as i32 } else { -(v as i32) }))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bit {
    Const(bool),
    Lit(i32),
}

impl std::ops::Not for Bit {
    type Output = Bit;
    fn not(self) -> Bit {
        match self {
            Bit::Const(b) => Bit::Const(!b),
            Bit::Lit(l) => Bit::Lit(-l),
        }
    }
}

/// Unsigned bit vector with a known upper bound on its value.
#[derive(Clone, Debug)]
struct Word {
    bits: Vec<Bit>,
    max: u64,
}

impl Word {
    fn bit(&self, i: usize) -> Bit {
        self.bits.get(i).copied().unwrap_or(Bit::Const(false))
    }

    fn shifted(&self, by: usize) -> Word {
        let mut bits = vec![Bit::Const(false); by];
        bits.extend_from_slice(&self.bits);
        Word {
            bits,
            max: self.max << by,
        }
    }
}

struct Circuit {
    next_var: u32,
    clauses: Vec<Vec<i32>>,
}

impl Circuit {
    fn fresh(&mut self) -> i32 {
        let v = self.next_var;
        self.next_var += 1;
        v as i32
    }

    fn and(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Const(false), _) | (_, Bit::Const(false)) => Bit::Const(false),
            (Bit::Const(true), x) | (x, Bit::Const(true)) => x,
            (Bit::Lit(x), Bit::Lit(y)) if x == y => a,
            (Bit::Lit(x), Bit::Lit(y)) if x == -y => Bit::Const(false),
            (Bit::Lit(x), Bit::Lit(y)) => {
                let g = self.fresh();
                self.clauses.push(vec![-g, x]);
                self.clauses.push(vec![-g, y]);
                self.clauses.push(vec![g, -x, -y]);
                Bit::Lit(g)
            }
        }
    }

    fn or(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Const(true), _) | (_, Bit::Const(true)) => Bit::Const(true),
            (Bit::Const(false), x) | (x, Bit::Const(false)) => x,
            (Bit::Lit(x), Bit::Lit(y)) if x == y => a,
            (Bit::Lit(x), Bit::Lit(y)) if x == -y => Bit::Const(true),
            (Bit::Lit(x), Bit::Lit(y)) => {
                let g = self.fresh();
                self.clauses.push(vec![g, -x]);
                self.clauses.push(vec![g, -y]);
                self.clauses.push(vec![-g, x, y]);
                Bit::Lit(g)
            }
        }
    }

    fn xor(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Const(false), x) | (x, Bit::Const(false)) => x,
            (Bit::Const(true), x) | (x, Bit::Const(true)) => !x,
            (Bit::Lit(x), Bit::Lit(y)) if x == y => Bit::Const(false),
            (Bit::Lit(x), Bit::Lit(y)) if x == -y => Bit::Const(true),
            (Bit::Lit(x), Bit::Lit(y)) => {
                let g = self.fresh();
                self.clauses.push(vec![-g, x, y]);
                self.clauses.push(vec![-g, -x, -y]);
                self.clauses.push(vec![g, -x, y]);
                self.clauses.push(vec![g, x, -y]);
                Bit::Lit(g)
            }
        }
    }

    /// Ripple-carry addition, widened just enough to hold `x.max + y.max`.
    fn add(&mut self, x: &Word, y: &Word) -> Word {
        let max = x.max.checked_add(y.max).expect("row sum overflows u64");
        let width = bits_needed(max);
        let mut bits = Vec::with_capacity(width);
        let mut carry = Bit::Const(false);
        for i in 0..width {
            let (a, b) = (x.bit(i), y.bit(i));
            let half = self.xor(a, b);
            bits.push(self.xor(half, carry));
            if i + 1 < width {
                let both = self.and(a, b);
                let prop = self.and(carry, half);
                carry = self.or(both, prop);
            }
        }
        Word { bits, max }
    }

    fn sum(&mut self, mut operands: Vec<Word>) -> Word {
        if operands.is_empty() {
            return Word {
                bits: Vec::new(),
                max: 0,
            };
        }
        while operands.len() > 1 {
            let mut next = Vec::with_capacity(operands.len().div_ceil(2));
            let mut it = operands.into_iter();
            while let Some(x) = it.next() {
                match it.next() {
                    Some(y) => next.push(self.add(&x, &y)),
                    None => next.push(x),
                }
            }
            operands = next;
        }
        operands.pop().expect("non-empty")
    }
}

pub fn encode_fiber(spec: &FiberSpec) -> Result<(CnfFormula, BitLayout)> {
    let width = bit_width(spec)?;
    let a = spec.matrix();
    let d = spec.num_cells();
    let cell_max = (1u64 << width) - 1;

    let cell_vars: Vec<Vec<u32>> = (0..d)
        .map(|j| (0..width).map(|t| (1 + j * width + t) as u32).collect())
        .collect();
    let first_aux = (d * width + 1) as u32;
    let mut circuit = Circuit {
        next_var: first_aux,
        clauses: Vec::new(),
    };
    let mut unsat = false;

    for &s in spec.structural_zeros() {
        for &v in &cell_vars[s] {
            circuit.clauses.push(vec![-(v as i32)]);
        }
    }

    for i in 0..a.rows() {
        let mut operands = Vec::new();
        for &j in a.row_support(i) {
            if spec.is_structural_zero(j) {
                continue;
            }
            let word = Word {
                bits: cell_vars[j].iter().map(|&v| Bit::Lit(v as i32)).collect(),
                max: cell_max,
            };
            let coef = a.get(i, j);
            for shift in 0..bits_needed(coef) {
                if coef >> shift & 1 == 1 {
                    operands.push(word.shifted(shift));
                }
            }
        }
        let total = circuit.sum(operands);
        let target = spec.margins()[i];
        if target > total.max {
            unsat = true;
            continue;
        }
        for (t, &bit) in total.bits.iter().enumerate() {
            let want = target >> t & 1 == 1;
            match bit {
                Bit::Const(c) if c != want => unsat = true,
                Bit::Const(_) => {}
                Bit::Lit(l) => circuit.clauses.push(vec![if want { l } else { -l }]),
            }
        }
    }

    if unsat {
        circuit.clauses.push(Vec::new());
    }
    let num_vars = circuit.next_var - 1;
    let aux_range = (circuit.next_var > first_aux).then(|| (first_aux, circuit.next_var - 1));
    let layout = BitLayout {
        width,
        cell_vars,
        aux_range,
        structural_zeros: spec.structural_zeros().clone(),
        shape: spec.shape().to_vec(),
    };
    let mut comments = vec![
        "fiber encoding: binary adder tree per margin row, Tseitin gates".to_string(),
        format!("cells {d} width {width} lsb-first"),
    ];
    if let Some((lo, hi)) = aux_range {
        comments.push(format!("auxiliary variables {lo}..{hi}"));
    }
    if unsat {
        comments.push("trivially unsatisfiable: a margin exceeds its maximal row sum".into());
    }
    for (j, vars) in layout.cell_vars.iter().enumerate() {
        let ids: Vec<String> = vars.iter().map(u32::to_string).collect();
        comments.push(format!("cell {j} {}", ids.join(" ")));
    }
    let formula = CnfFormula {
        num_vars,
        clauses: circuit.clauses,
        comments,
        trivially_unsat: unsat,
    };
    Ok((formula, layout))
}

/// Reads every cell as an `l`-bit unsigned integer, LSB first.
pub fn decode_assignment(layout: &BitLayout, assignment: &Assignment) -> Result<Table> {
    let mut cells = Vec::with_capacity(layout.num_cells());
    for (j, vars) in layout.cell_vars.iter().enumerate() {
        if layout.structural_zeros.contains(&j) {
            cells.push(0);
            continue;
        }
        let mut value = 0u64;
        for (t, &v) in vars.iter().enumerate() {
            match assignment.get(v) {
                Some(true) => value |= 1 << t,
                Some(false) => {}
                None => return Err(Error::MissingVariable { var: v }),
            }
        }
        cells.push(value);
    }
    Table::new(layout.shape.clone(), cells)
}

/// The cell-bit assignment that represents `table`.
pub fn encode_table(layout: &BitLayout, table: &Table) -> Result<Assignment> {
    if table.len() != layout.num_cells() {
        return Err(Error::DimensionMismatch {
            expected: layout.num_cells(),
            actual: table.len(),
        });
    }
    let mut assignment = Assignment::new();
    for (vars, &value) in layout.cell_vars.iter().zip(table.cells()) {
        if layout.width < 64 && value >> layout.width != 0 {
            return Err(Error::ValueOutOfRange {
                value,
                width: layout.width,
            });
        }
        for (t, &v) in vars.iter().enumerate() {
            assignment.set(v, value >> t & 1 == 1);
        }
    }
    Ok(assignment)
}

/// Clause excluding exactly the cell-bit pattern of `table`.
pub fn blocking_clause(layout: &BitLayout, table: &Table) -> Result<Vec<i32>> {
    let assignment = encode_table(layout, table)?;
    Ok(layout
        .sampling_set()
        .into_iter()
        .map(|v| {
            if assignment.get(v) == Some(true) {
                -(v as i32)
            } else {
                v as i32
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enumerate::fiber_size;
    use crate::model::{build_independence_matrix, build_n3f_matrix, ConstraintMatrix};

    fn two_way(shape: [usize; 2], b: &[u64], zeros: &[usize]) -> FiberSpec {
        FiberSpec::new(
            build_independence_matrix(&shape).unwrap(),
            b.to_vec(),
            zeros.iter().copied().collect(),
            shape.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn bit_width_examples() {
        let spec = two_way([2, 2], &[5, 0, 3, 2], &[]);
        assert_eq!(bit_width(&spec).unwrap(), 3);
        let spec = two_way([2, 2], &[1, 1, 1, 1], &[]);
        assert_eq!(bit_width(&spec).unwrap(), 1);
        let spec = two_way([2, 2], &[0; 4], &[]);
        assert_eq!(bit_width(&spec).unwrap(), 1);

        // the second column is only bounded because it is a structural zero
        let a = ConstraintMatrix::new(1, 2, vec![2, 0]).unwrap();
        let spec = FiberSpec::new(a.clone(), vec![7], [1].into_iter().collect(), vec![2]).unwrap();
        assert_eq!(bit_width(&spec).unwrap(), 2);
        let spec = FiberSpec::new(a, vec![7], BTreeSet::new(), vec![2]).unwrap();
        assert!(matches!(
            bit_width(&spec),
            Err(Error::UnboundedCell { cell: 1 })
        ));
    }

    #[test]
    fn power_of_two_bound_is_representable() {
        // max b = 4 needs 3 bits, not 2
        let spec = two_way([2, 2], &[4, 0, 2, 2], &[]);
        assert_eq!(bit_width(&spec).unwrap(), 3);
    }

    #[test]
    fn layout_is_contiguous() {
        let spec = two_way([3, 3], &[2, 1, 1, 1, 2, 1], &[4]);
        let (f, layout) = encode_fiber(&spec).unwrap();
        let l = layout.width;
        assert_eq!(l, 2);
        assert_eq!(
            layout.sampling_set(),
            (1..=(9 * l) as u32).collect::<Vec<_>>()
        );
        let (lo, hi) = layout.aux_range.unwrap();
        assert_eq!(lo, 9 * l as u32 + 1);
        assert_eq!(hi, f.num_vars);
        for clause in &f.clauses {
            for &lit in clause {
                assert!(lit != 0 && lit.unsigned_abs() <= f.num_vars);
            }
        }
        assert!(!f.trivially_unsat);
    }

    #[test]
    fn infeasible_margin_flags_unsat() {
        // second row has no cells, so its margin of 1 can never be met
        let a = ConstraintMatrix::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        let spec = FiberSpec::new(a, vec![1, 1], BTreeSet::new(), vec![2]).unwrap();
        let (f, _) = encode_fiber(&spec).unwrap();
        assert!(f.trivially_unsat);
        assert!(f.clauses.iter().any(|c| c.is_empty()));
    }

    #[test]
    fn decode_examples() {
        let spec = two_way([2, 2], &[5, 0, 3, 2], &[]);
        let (_, layout) = encode_fiber(&spec).unwrap();
        let mut all_false = Assignment::new();
        for v in layout.sampling_set() {
            all_false.set(v, false);
        }
        assert_eq!(
            decode_assignment(&layout, &all_false).unwrap().cells(),
            &[0, 0, 0, 0]
        );

        let mut a = all_false.clone();
        let vars = &layout.cell_vars[2];
        a.set(vars[0], true);
        a.set(vars[2], true);
        assert_eq!(
            decode_assignment(&layout, &a).unwrap().cells(),
            &[0, 0, 5, 0]
        );

        let partial = Assignment::from_literals([1, -2]);
        assert!(matches!(
            decode_assignment(&layout, &partial),
            Err(Error::MissingVariable { .. })
        ));
    }

    #[test]
    fn structural_zero_cells_decode_to_zero() {
        let spec = two_way([2, 2], &[1, 1, 1, 1], &[0]);
        let (_, layout) = encode_fiber(&spec).unwrap();
        let a = Assignment::from_literals([1, 2, 3, 4]);
        assert_eq!(
            decode_assignment(&layout, &a).unwrap().cells(),
            &[0, 1, 1, 1]
        );
    }

    #[test]
    fn blocking_clause_of_zero_cell() {
        let a = ConstraintMatrix::identity(1);
        let spec = FiberSpec::new(a, vec![0], BTreeSet::new(), vec![1]).unwrap();
        let (_, layout) = encode_fiber(&spec).unwrap();
        assert_eq!(
            blocking_clause(&layout, &Table::from_vec(vec![0])).unwrap(),
            vec![1]
        );
        assert!(blocking_clause(&layout, &Table::from_vec(vec![2])).is_err());
    }

    #[test]
    fn zero_margins_single_solution() {
        let spec = two_way([3, 3], &[0; 6], &[]);
        let (f, layout) = encode_fiber(&spec).unwrap();
        let models = enumerate_models(&f, &layout, Projection::Cells, None).unwrap();
        assert_eq!(models.tables.len(), 1);
        assert!(models.tables[0].cells().iter().all(|&c| c == 0));
    }

    #[test]
    fn projected_counts_match_enumeration() {
        for (shape, b, zeros) in [
            ([2, 2], vec![1, 1, 1, 1], vec![]),
            ([3, 3], vec![1; 6], vec![]),
            ([3, 3], vec![2, 3, 1, 2, 2, 2], vec![0]),
            ([2, 3], vec![3, 4, 2, 3, 2], vec![]),
        ] {
            let spec = two_way(shape, &b, &zeros);
            let (f, layout) = encode_fiber(&spec).unwrap();
            let projected = count_models(&f, &layout, Projection::Cells, None).unwrap();
            let full = count_models(&f, &layout, Projection::All, None).unwrap();
            let expected = fiber_size(&spec, None).unwrap();
            assert_eq!(projected, expected, "{shape:?} {b:?}");
            assert_eq!(
                full, expected,
                "auxiliaries not determined for {shape:?} {b:?}"
            );
        }
    }

    #[test]
    fn non_unit_coefficients_encode() {
        // 3x + y + 2z = 7 with x, y, z bounded by the identity rows
        let a = ConstraintMatrix::new(4, 3, vec![3, 1, 2, 1, 0, 0, 0, 1, 0, 0, 0, 1]).unwrap();
        for bounds in [[2u64, 7, 3], [1, 4, 2]] {
            let mut b = vec![7];
            b.extend(bounds);
            // identity rows pin the cells, so use inequality-free check:
            // only the tuple equal to `bounds` can satisfy them
            let spec = FiberSpec::new(a.clone(), b, BTreeSet::new(), vec![3]).unwrap();
            let (f, layout) = encode_fiber(&spec).unwrap();
            let n = count_models(&f, &layout, Projection::Cells, None).unwrap();
            assert_eq!(n, fiber_size(&spec, None).unwrap());
        }
        let a = ConstraintMatrix::new(1, 3, vec![3, 1, 2]).unwrap();
        let spec = FiberSpec::new(a, vec![7], BTreeSet::new(), vec![3]).unwrap();
        let (f, layout) = encode_fiber(&spec).unwrap();
        let models = enumerate_models(&f, &layout, Projection::Cells, None).unwrap();
        assert_eq!(models.tables.len(), fiber_size(&spec, None).unwrap());
        for t in &models.tables {
            assert!(spec.contains(t));
        }
    }

    #[test]
    fn n3f_d2_bijection() {
        let a = build_n3f_matrix(2).unwrap();
        let observed = [1u64, 0, 2, 1, 0, 1, 1, 2];
        let b = a.apply(&observed).unwrap();
        let spec = FiberSpec::new(a, b, BTreeSet::new(), vec![2, 2, 2]).unwrap();
        let (f, layout) = encode_fiber(&spec).unwrap();
        assert_eq!(
            count_models(&f, &layout, Projection::Cells, None).unwrap(),
            fiber_size(&spec, None).unwrap()
        );
    }
}
