//! Tables, sufficient-statistics matrices and fiber specifications.
//!
//! Cells are flattened row-major with the last axis varying fastest. Every
//! module in the crate relies on this single convention.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// A contingency table of nonnegative counts.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Table {
    shape: Vec<usize>,
    cells: Vec<u64>,
}

impl Table {
    pub fn new(shape: Vec<usize>, cells: Vec<u64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if shape.is_empty() {
            return Err(Error::InvalidShape("shape has no axes".into()));
        }
        if expected != cells.len() {
            return Err(Error::DimensionMismatch {
                expected,
                actual: cells.len(),
            });
        }
        Ok(Table { shape, cells })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let d = shape.iter().product();
        Table {
            shape,
            cells: vec![0; d],
        }
    }

    /// A table with a single axis, for use with matrices that have no
    /// multi-way structure.
    pub fn from_vec(cells: Vec<u64>) -> Self {
        Table {
            shape: vec![cells.len()],
            cells,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn cells(&self) -> &[u64] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [u64] {
        &mut self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn sample_size(&self) -> u64 {
        self.cells.iter().sum()
    }

    pub fn get(&self, index: &[usize]) -> u64 {
        self.cells[flat_index(&self.shape, index)]
    }

    /// Adds `sign * delta` to the cells. Returns `None` if any cell would
    /// become negative, leaving `self` untouched.
    pub fn shifted(&self, delta: &[i64], sign: i64) -> Option<Table> {
        debug_assert_eq!(delta.len(), self.cells.len());
        let mut cells = Vec::with_capacity(self.cells.len());
        for (&c, &m) in self.cells.iter().zip(delta) {
            let v = c as i64 + sign * m;
            if v < 0 {
                return None;
            }
            cells.push(v as u64);
        }
        Some(Table {
            shape: self.shape.clone(),
            cells,
        })
    }

    /// Writes the two-line text form: shape, then cells in row-major order.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", join(&self.shape))?;
        writeln!(out, "{}", join(&self.cells))
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("ascii")
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut tables = read_tables(text.as_bytes())?;
        match tables.len() {
            1 => Ok(tables.remove(0)),
            n => Err(Error::parse(
                1,
                format!("expected exactly one table, found {n}"),
            )),
        }
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_text())
    }
}

/// Reads a sequence of tables in text form. Tables are pairs of non-empty
/// lines; blank lines and `#` comments separate blocks.
pub fn read_tables<R: BufRead>(reader: R) -> Result<Vec<Table>> {
    let mut tables = Vec::new();
    let mut pending: Option<(usize, Vec<usize>)> = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match pending.take() {
            None => {
                let shape = parse_numbers::<usize>(line, lineno)?;
                pending = Some((lineno, shape));
            }
            Some((_, shape)) => {
                let cells = parse_numbers::<u64>(line, lineno)?;
                let table =
                    Table::new(shape, cells).map_err(|e| Error::parse(lineno, e.to_string()))?;
                tables.push(table);
            }
        }
    }
    if let Some((lineno, _)) = pending {
        return Err(Error::parse(lineno, "shape line without cell line"));
    }
    Ok(tables)
}

/// Writes tables as blocks separated by blank lines.
pub fn write_tables<'a, W, I>(mut out: W, tables: I) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a Table>,
{
    for (i, t) in tables.into_iter().enumerate() {
        if i > 0 {
            writeln!(out)?;
        }
        t.write_text(&mut out)?;
    }
    Ok(())
}

/// Structural zeros in text form: one multi-index per line.
pub fn write_structural_zeros<W: Write>(
    mut out: W,
    shape: &[usize],
    zeros: &BTreeSet<usize>,
) -> std::io::Result<()> {
    for &z in zeros {
        writeln!(out, "{}", join(&multi_index(shape, z)))?;
    }
    Ok(())
}

pub fn parse_structural_zeros(text: &str, shape: &[usize]) -> Result<BTreeSet<usize>> {
    let mut zeros = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let idx = parse_numbers::<usize>(line, i + 1)?;
        if idx.len() != shape.len() || idx.iter().zip(shape).any(|(&a, &s)| a >= s) {
            return Err(Error::parse(
                i + 1,
                format!("index {line:?} outside shape {shape:?}"),
            ));
        }
        zeros.insert(flat_index(shape, &idx));
    }
    Ok(zeros)
}

fn parse_numbers<T: std::str::FromStr>(line: &str, lineno: usize) -> Result<Vec<T>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<T>()
                .map_err(|_| Error::parse(lineno, format!("not a nonnegative integer: {tok:?}")))
        })
        .collect()
}

fn join<T: fmt::Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn flat_index(shape: &[usize], index: &[usize]) -> usize {
    debug_assert_eq!(shape.len(), index.len());
    index.iter().zip(shape).fold(0, |acc, (&i, &s)| acc * s + i)
}

pub fn multi_index(shape: &[usize], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for (slot, &s) in idx.iter_mut().zip(shape).rev() {
        *slot = flat % s;
        flat /= s;
    }
    idx
}

/// Dense nonnegative integer matrix with cached row supports.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ConstraintMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<u64>,
    row_support: Vec<Vec<usize>>,
    col_support: Vec<Vec<usize>>,
}

impl ConstraintMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<u64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: entries.len(),
            });
        }
        let mut row_support = vec![Vec::new(); rows];
        let mut col_support = vec![Vec::new(); cols];
        for i in 0..rows {
            for j in 0..cols {
                if entries[i * cols + j] > 0 {
                    row_support[i].push(j);
                    col_support[j].push(i);
                }
            }
        }
        Ok(ConstraintMatrix {
            rows,
            cols,
            entries,
            row_support,
            col_support,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut entries = vec![0; n * n];
        for i in 0..n {
            entries[i * n + i] = 1;
        }
        Self::new(n, n, entries).expect("square")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> u64 {
        self.entries[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[u64] {
        &self.entries[row * self.cols..(row + 1) * self.cols]
    }

    /// Columns with a positive entry in `row`.
    pub fn row_support(&self, row: usize) -> &[usize] {
        &self.row_support[row]
    }

    /// Rows with a positive entry in `col`.
    pub fn col_support(&self, col: usize) -> &[usize] {
        &self.col_support[col]
    }

    pub fn column_sums(&self) -> Vec<u64> {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self.get(i, j)).sum())
            .collect()
    }

    /// Exact product `A * cells`.
    pub fn apply(&self, cells: &[u64]) -> Result<Vec<u64>> {
        if cells.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: cells.len(),
            });
        }
        Ok((0..self.rows)
            .map(|i| {
                self.row_support[i]
                    .iter()
                    .map(|&j| self.get(i, j) * cells[j])
                    .sum()
            })
            .collect())
    }

    /// Product with a signed vector, used for kernel checks.
    pub fn apply_signed(&self, delta: &[i64]) -> Result<Vec<i64>> {
        if delta.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: delta.len(),
            });
        }
        Ok((0..self.rows)
            .map(|i| {
                self.row_support[i]
                    .iter()
                    .map(|&j| self.get(i, j) as i64 * delta[j])
                    .sum()
            })
            .collect())
    }

    pub fn annihilates(&self, delta: &[i64]) -> bool {
        self.apply_signed(delta)
            .map(|v| v.iter().all(|&x| x == 0))
            .unwrap_or(false)
    }
}

/// Sufficient statistics of the `d_1 x ... x d_k` independence model: one
/// row per (axis, level) pair, in axis order.
pub fn build_independence_matrix(shape: &[usize]) -> Result<ConstraintMatrix> {
    if shape.len() < 2 {
        return Err(Error::InvalidShape(format!(
            "independence needs at least two axes, got {shape:?}"
        )));
    }
    if let Some(&s) = shape.iter().find(|&&s| s < 2) {
        return Err(Error::InvalidShape(format!(
            "axis size {s} < 2 in {shape:?}"
        )));
    }
    let rows: usize = shape.iter().sum();
    let cols: usize = shape.iter().product();
    let mut entries = vec![0; rows * cols];
    for cell in 0..cols {
        let idx = multi_index(shape, cell);
        let mut offset = 0;
        for (axis, &level) in idx.iter().enumerate() {
            entries[(offset + level) * cols + cell] = 1;
            offset += shape[axis];
        }
    }
    ConstraintMatrix::new(rows, cols, entries)
}

/// Sufficient statistics of the no-3-way interaction model on `d x d x d`
/// tables: the (i,j), (i,k) and (j,k) two-way margins, in that order.
pub fn build_n3f_matrix(d: usize) -> Result<ConstraintMatrix> {
    if d < 2 {
        return Err(Error::InvalidShape(format!(
            "no-3-way model needs d >= 2, got {d}"
        )));
    }
    let rows = 3 * d * d;
    let cols = d * d * d;
    let mut entries = vec![0; rows * cols];
    for i in 0..d {
        for j in 0..d {
            for k in 0..d {
                let cell = (i * d + j) * d + k;
                entries[(i * d + j) * cols + cell] = 1;
                entries[(d * d + i * d + k) * cols + cell] = 1;
                entries[(2 * d * d + j * d + k) * cols + cell] = 1;
            }
        }
    }
    ConstraintMatrix::new(rows, cols, entries)
}

pub fn margins(matrix: &ConstraintMatrix, table: &Table) -> Result<Vec<u64>> {
    matrix.apply(table.cells())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ModelSpec {
    Independence {
        shape: Vec<usize>,
    },
    /// Two-way independence with structural zeros, given as flat cell indices.
    QuasiIndependence {
        shape: Vec<usize>,
        zeros: BTreeSet<usize>,
    },
    NoThreeWay {
        d: usize,
    },
}

impl ModelSpec {
    pub fn quasi_independence(shape: [usize; 2], zeros: &[(usize, usize)]) -> Result<Self> {
        let shape = shape.to_vec();
        let mut set = BTreeSet::new();
        for &(i, j) in zeros {
            if i >= shape[0] || j >= shape[1] {
                return Err(Error::InvalidSpec(format!(
                    "zero ({i},{j}) outside {shape:?}"
                )));
            }
            set.insert(i * shape[1] + j);
        }
        Ok(ModelSpec::QuasiIndependence { shape, zeros: set })
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            ModelSpec::Independence { shape } | ModelSpec::QuasiIndependence { shape, .. } => {
                shape.clone()
            }
            ModelSpec::NoThreeWay { d } => vec![*d; 3],
        }
    }

    pub fn matrix(&self) -> Result<ConstraintMatrix> {
        match self {
            ModelSpec::Independence { shape } => build_independence_matrix(shape),
            ModelSpec::QuasiIndependence { shape, zeros } => {
                if shape.len() != 2 {
                    return Err(Error::InvalidShape(format!(
                        "quasi-independence is defined for two-way shapes only, got {shape:?}"
                    )));
                }
                let d = shape[0] * shape[1];
                if let Some(&z) = zeros.iter().find(|&&z| z >= d) {
                    return Err(Error::InvalidSpec(format!(
                        "structural zero {z} out of range"
                    )));
                }
                build_independence_matrix(shape)
            }
            ModelSpec::NoThreeWay { d } => build_n3f_matrix(*d),
        }
    }

    pub fn structural_zeros(&self) -> BTreeSet<usize> {
        match self {
            ModelSpec::QuasiIndependence { zeros, .. } => zeros.clone(),
            _ => BTreeSet::new(),
        }
    }
}

/// The set of tables `u >= 0` with `A u = b` and `u_S = 0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct FiberSpec {
    matrix: ConstraintMatrix,
    margins: Vec<u64>,
    structural_zeros: BTreeSet<usize>,
    shape: Vec<usize>,
}

impl FiberSpec {
    pub fn new(
        matrix: ConstraintMatrix,
        margins: Vec<u64>,
        structural_zeros: BTreeSet<usize>,
        shape: Vec<usize>,
    ) -> Result<Self> {
        if margins.len() != matrix.rows() {
            return Err(Error::DimensionMismatch {
                expected: matrix.rows(),
                actual: margins.len(),
            });
        }
        let d: usize = shape.iter().product();
        if d != matrix.cols() {
            return Err(Error::DimensionMismatch {
                expected: matrix.cols(),
                actual: d,
            });
        }
        if let Some(&z) = structural_zeros.iter().find(|&&z| z >= d) {
            return Err(Error::InvalidSpec(format!(
                "structural zero {z} out of range 0..{d}"
            )));
        }
        Ok(FiberSpec {
            matrix,
            margins,
            structural_zeros,
            shape,
        })
    }

    /// Builds a spec from signed margins, rejecting negative entries.
    pub fn with_signed_margins(
        matrix: ConstraintMatrix,
        margins: &[i64],
        structural_zeros: BTreeSet<usize>,
        shape: Vec<usize>,
    ) -> Result<Self> {
        if let Some(b) = margins.iter().find(|&&b| b < 0) {
            return Err(Error::InvalidSpec(format!("negative margin {b}")));
        }
        let margins = margins.iter().map(|&b| b as u64).collect();
        Self::new(matrix, margins, structural_zeros, shape)
    }

    pub fn matrix(&self) -> &ConstraintMatrix {
        &self.matrix
    }

    pub fn margins(&self) -> &[u64] {
        &self.margins
    }

    pub fn structural_zeros(&self) -> &BTreeSet<usize> {
        &self.structural_zeros
    }

    pub fn is_structural_zero(&self, cell: usize) -> bool {
        self.structural_zeros.contains(&cell)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn num_cells(&self) -> usize {
        self.matrix.cols()
    }

    /// True when `table` has the right margins and is zero on `S`.
    pub fn contains(&self, table: &Table) -> bool {
        table.len() == self.num_cells()
            && self.structural_zeros.iter().all(|&s| table.cells()[s] == 0)
            && self
                .matrix
                .apply(table.cells())
                .map(|b| b == self.margins)
                .unwrap_or(false)
    }
}

pub fn fiber_spec_from_observation(model: &ModelSpec, observed: &Table) -> Result<FiberSpec> {
    let shape = model.shape();
    if observed.shape() != shape.as_slice() {
        return Err(Error::InvalidShape(format!(
            "observation has shape {:?}, model expects {shape:?}",
            observed.shape()
        )));
    }
    let zeros = model.structural_zeros();
    for &z in &zeros {
        let value = observed.cells()[z];
        if value != 0 {
            return Err(Error::StructuralZeroViolated { cell: z, value });
        }
    }
    let matrix = model.matrix()?;
    let b = matrix.apply(observed.cells())?;
    FiberSpec::new(matrix, b, zeros, shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank(m: &ConstraintMatrix) -> usize {
        // Gaussian elimination over the rationals, small sizes only.
        let mut a: Vec<Vec<f64>> = (0..m.rows())
            .map(|i| m.row(i).iter().map(|&x| x as f64).collect())
            .collect();
        let mut r = 0;
        for c in 0..m.cols() {
            let Some(p) = (r..a.len()).find(|&i| a[i][c].abs() > 1e-9) else {
                continue;
            };
            a.swap(r, p);
            for i in 0..a.len() {
                if i != r {
                    let f = a[i][c] / a[r][c];
                    for j in 0..m.cols() {
                        a[i][j] -= f * a[r][j];
                    }
                }
            }
            r += 1;
        }
        r
    }

    #[test]
    fn independence_2x2_is_k22_incidence() {
        let a = build_independence_matrix(&[2, 2]).unwrap();
        assert_eq!((a.rows(), a.cols()), (4, 4));
        assert!(a.column_sums().iter().all(|&s| s == 2));
        assert_eq!(rank(&a), 3);
    }

    #[test]
    fn independence_3x3_first_row() {
        let a = build_independence_matrix(&[3, 3]).unwrap();
        assert_eq!((a.rows(), a.cols()), (6, 9));
        assert_eq!(a.row(0), &[1, 1, 1, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn independence_three_way_column_sums() {
        let a = build_independence_matrix(&[5, 2, 2]).unwrap();
        assert_eq!((a.rows(), a.cols()), (9, 20));
        assert!(a.column_sums().iter().all(|&s| s == 3));
        // each cell hits exactly the rows of its own levels
        for cell in 0..20 {
            let idx = multi_index(&[5, 2, 2], cell);
            let expected: Vec<usize> = vec![idx[0], 5 + idx[1], 7 + idx[2]];
            assert_eq!(a.col_support(cell), expected.as_slice());
        }
    }

    #[test]
    fn independence_rejects_bad_shapes() {
        assert!(build_independence_matrix(&[3]).is_err());
        assert!(build_independence_matrix(&[3, 1]).is_err());
    }

    #[test]
    fn n3f_dimensions() {
        let a = build_n3f_matrix(2).unwrap();
        assert_eq!((a.rows(), a.cols()), (12, 8));
        assert!(a.column_sums().iter().all(|&s| s == 3));

        let a = build_n3f_matrix(3).unwrap();
        assert_eq!((a.rows(), a.cols()), (27, 27));
        assert_eq!(a.apply(&[1; 27]).unwrap(), vec![3; 27]);
        let mut e0 = vec![0; 27];
        e0[0] = 1;
        let b = a.apply(&e0).unwrap();
        assert_eq!(b.iter().filter(|&&x| x == 1).count(), 3);
        assert_eq!(b.iter().sum::<u64>(), 3);
        assert!(build_n3f_matrix(1).is_err());
    }

    #[test]
    fn margins_examples() {
        let id = ConstraintMatrix::identity(3);
        assert_eq!(
            margins(&id, &Table::from_vec(vec![4, 0, 7])).unwrap(),
            vec![4, 0, 7]
        );

        let a = build_independence_matrix(&[2, 2]).unwrap();
        let u = Table::new(vec![2, 2], vec![1, 2, 3, 4]).unwrap();
        assert_eq!(margins(&a, &u).unwrap(), vec![3, 7, 4, 6]);

        let z = ConstraintMatrix::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        assert_eq!(margins(&z, &Table::from_vec(vec![5, 9])).unwrap()[1], 0);

        assert!(margins(&a, &Table::from_vec(vec![1, 2, 3])).is_err());
    }

    #[test]
    fn spec_from_observation() {
        let m = ModelSpec::Independence { shape: vec![2, 2] };
        let u = Table::new(vec![2, 2], vec![1, 0, 0, 1]).unwrap();
        let spec = fiber_spec_from_observation(&m, &u).unwrap();
        assert_eq!(spec.margins(), &[1, 1, 1, 1]);
        assert!(spec.structural_zeros().is_empty());
        assert!(spec.contains(&u));

        let qi = ModelSpec::quasi_independence([3, 3], &[(0, 0)]).unwrap();
        let ok = Table::new(vec![3, 3], vec![0, 1, 2, 1, 1, 1, 3, 0, 1]).unwrap();
        let spec = fiber_spec_from_observation(&qi, &ok).unwrap();
        assert_eq!(
            spec.structural_zeros().iter().copied().collect::<Vec<_>>(),
            vec![0]
        );

        let bad = Table::new(vec![3, 3], vec![1, 1, 2, 1, 1, 1, 3, 0, 1]).unwrap();
        assert!(matches!(
            fiber_spec_from_observation(&qi, &bad),
            Err(Error::StructuralZeroViolated { cell: 0, value: 1 })
        ));
    }

    #[test]
    fn negative_margins_rejected() {
        let a = ConstraintMatrix::identity(2);
        assert!(FiberSpec::with_signed_margins(a, &[1, -1], BTreeSet::new(), vec![2]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let u = Table::new(vec![2, 3], vec![1, 0, 2, 3, 4, 0]).unwrap();
        assert_eq!(u.to_text(), "2 3\n1 0 2 3 4 0\n");
        assert_eq!(Table::parse_text(&u.to_text()).unwrap(), u);

        let v = Table::new(vec![2, 3], vec![0; 6]).unwrap();
        let mut buf = Vec::new();
        write_tables(&mut buf, [&u, &v]).unwrap();
        assert_eq!(read_tables(buf.as_slice()).unwrap(), vec![u, v]);

        assert!(Table::parse_text("2 2\n1 2 3\n").is_err());
        assert!(Table::parse_text("2 2\n").is_err());
        assert!(Table::parse_text("2 2\n1 -2 3 4\n").is_err());
    }

    #[test]
    fn structural_zero_text() {
        let shape = [3, 4];
        let zeros: BTreeSet<usize> = [0, 5, 11].into_iter().collect();
        let mut buf = Vec::new();
        write_structural_zeros(&mut buf, &shape, &zeros).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "0 0\n1 1\n2 3\n");
        assert_eq!(parse_structural_zeros(&text, &shape).unwrap(), zeros);
        assert!(parse_structural_zeros("3 0\n", &shape).is_err());
    }

    #[test]
    fn shifted_rejects_negative() {
        let u = Table::from_vec(vec![1, 0]);
        assert_eq!(u.shifted(&[-1, 1], 1).unwrap().cells(), &[0, 1]);
        assert!(u.shifted(&[-1, 1], -1).is_none());
    }
}
