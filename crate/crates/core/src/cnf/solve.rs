//! Model enumeration by blocking clauses, backed by an incremental CDCL
//! solver.

use varisat::{ExtendFormula, Lit, Solver};

use super::{decode_assignment, Assignment, BitLayout, CnfFormula};
use crate::error::{Error, Result};
use crate::model::Table;

/// Which variables a blocking clause ranges over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    /// Cell variables only: counts fiber elements.
    Cells,
    /// Every variable: counts full models including auxiliaries.
    All,
}

#[derive(Clone, Debug)]
pub struct ModelEnumeration {
    /// Decoded cell tables, one per model found (may repeat under
    /// `Projection::All` if auxiliaries were not determined).
    pub tables: Vec<Table>,
    pub complete: bool,
}

pub fn enumerate_models(
    formula: &CnfFormula,
    layout: &BitLayout,
    projection: Projection,
    cap: Option<usize>,
) -> Result<ModelEnumeration> {
    let mut solver = Solver::new();
    for clause in &formula.clauses {
        let lits: Vec<Lit> = clause
            .iter()
            .map(|&l| Lit::from_dimacs(l as isize))
            .collect();
        solver.add_clause(&lits);
    }
    let block_vars: Vec<u32> = match projection {
        Projection::Cells => layout.sampling_set(),
        Projection::All => (1..=formula.num_vars).collect(),
    };
    let mut tables = Vec::new();
    loop {
        if cap.is_some_and(|c| tables.len() >= c) {
            // one more solve decides whether the cap cut anything off
            let more = solver.solve().map_err(solver_error)?;
            return Ok(ModelEnumeration {
                tables,
                complete: !more,
            });
        }
        if !solver.solve().map_err(solver_error)? {
            break;
        }
        let model = solver.model().expect("satisfiable");
        let mut assignment = Assignment::new();
        for lit in &model {
            let v = lit.to_dimacs();
            assignment.set(v.unsigned_abs() as u32, v > 0);
        }
        // variables the solver never saw are unconstrained; read them as false
        for &v in &block_vars {
            if assignment.get(v).is_none() {
                assignment.set(v, false);
            }
        }
        tables.push(decode_assignment(layout, &assignment)?);
        let block: Vec<Lit> = block_vars
            .iter()
            .map(|&v| {
                let lit = Lit::from_dimacs(v as isize);
                if assignment.get(v) == Some(true) {
                    !lit
                } else {
                    lit
                }
            })
            .collect();
        solver.add_clause(&block);
    }
    Ok(ModelEnumeration {
        tables,
        complete: true,
    })
}

pub fn count_models(
    formula: &CnfFormula,
    layout: &BitLayout,
    projection: Projection,
    cap: Option<usize>,
) -> Result<usize> {
    let e = enumerate_models(formula, layout, projection, cap)?;
    match (e.complete, cap) {
        (false, Some(cap)) => Err(Error::EnumerationIncomplete { cap }),
        _ => Ok(e.tables.len()),
    }
}

fn solver_error(e: varisat::solver::SolverError) -> Error {
    Error::InvalidSpec(format!("SAT solver failure: {e}"))
}
