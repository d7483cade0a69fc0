use std::collections::BTreeSet;
use std::io::Write;

use super::{Assignment, BitLayout, CnfFormula};
use crate::error::{Error, Result};

const IND_PER_LINE: usize = 10;

/// Writes DIMACS CNF with the sampling set as `c ind ... 0` lines.
pub fn write_dimacs<W: Write>(formula: &CnfFormula, layout: &BitLayout, mut out: W) -> Result<()> {
    for c in &formula.comments {
        writeln!(out, "c {c}")?;
    }
    for chunk in layout.sampling_set().chunks(IND_PER_LINE) {
        let ids: Vec<String> = chunk.iter().map(u32::to_string).collect();
        writeln!(out, "c ind {} 0", ids.join(" "))?;
    }
    writeln!(out, "p cnf {} {}", formula.num_vars, formula.clauses.len())?;
    for clause in &formula.clauses {
        for lit in clause {
            write!(out, "{lit} ")?;
        }
        writeln!(out, "0")?;
    }
    Ok(())
}

/// Reads a DIMACS CNF file. Returns the formula and the sampling set from
/// any `c ind` lines.
pub fn read_dimacs(text: &str) -> Result<(CnfFormula, Vec<u32>)> {
    let mut formula = CnfFormula::default();
    let mut sampling = Vec::new();
    let mut declared: Option<(u32, usize)> = None;
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('c') {
            let rest = rest.trim_start();
            if let Some(ids) = rest.strip_prefix("ind ") {
                for tok in ids.split_whitespace() {
                    let v: u32 = tok
                        .parse()
                        .map_err(|_| Error::parse(lineno, "bad ind id"))?;
                    if v != 0 {
                        sampling.push(v);
                    }
                }
            } else {
                formula.comments.push(rest.to_string());
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("p ") {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            match toks.as_slice() {
                ["cnf", v, c] => {
                    let v = v
                        .parse()
                        .map_err(|_| Error::parse(lineno, "bad variable count"))?;
                    let c = c
                        .parse()
                        .map_err(|_| Error::parse(lineno, "bad clause count"))?;
                    declared = Some((v, c));
                }
                _ => return Err(Error::parse(lineno, "malformed header")),
            }
            continue;
        }
        let Some((num_vars, _)) = declared else {
            return Err(Error::parse(lineno, "clause before header"));
        };
        for tok in line.split_whitespace() {
            let lit: i32 = tok
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad literal {tok:?}")))?;
            if lit == 0 {
                formula.clauses.push(std::mem::take(&mut current));
            } else if lit.unsigned_abs() > num_vars {
                return Err(Error::parse(
                    lineno,
                    format!("literal {lit} exceeds {num_vars}"),
                ));
            } else {
                current.push(lit);
            }
        }
    }
    let Some((num_vars, num_clauses)) = declared else {
        return Err(Error::parse(0, "missing header"));
    };
    if !current.is_empty() {
        return Err(Error::parse(0, "unterminated clause"));
    }
    if formula.clauses.len() != num_clauses {
        return Err(Error::parse(
            0,
            format!(
                "header declares {num_clauses} clauses, found {}",
                formula.clauses.len()
            ),
        ));
    }
    formula.num_vars = num_vars;
    formula.trivially_unsat = formula.clauses.iter().any(Vec::is_empty);
    Ok((formula, sampling))
}

/// Parses one solution: literals, optionally `v`-prefixed and spread over
/// several lines, terminated by `0`.
pub fn parse_solution_line(text: &str) -> Result<Assignment> {
    let mut lits = Vec::new();
    let mut terminated = false;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        let body = line.strip_prefix('v').unwrap_or(line);
        for tok in body.split_whitespace() {
            if terminated {
                return Err(Error::parse(i + 1, "literals after terminating 0"));
            }
            let lit: i32 = tok
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad literal {tok:?}")))?;
            if lit == 0 {
                terminated = true;
            } else {
                lits.push(lit);
            }
        }
    }
    if !terminated {
        return Err(Error::parse(0, "solution not terminated by 0"));
    }
    Ok(Assignment::from_literals(lits))
}

/// Splits sampler output into solutions. Comment (`c`) and status (`s`)
/// lines are skipped. Returns the parsed solutions and the number of
/// malformed ones.
pub fn parse_solutions(output: &str) -> (Vec<Assignment>, usize) {
    let mut solutions = Vec::new();
    let mut invalid = 0;
    let mut current: Vec<i32> = Vec::new();
    let mut broken = false;
    for line in output.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('c') || line.starts_with('s') {
            continue;
        }
        let body = line.strip_prefix('v').unwrap_or(line);
        for tok in body.split_whitespace() {
            match tok.parse::<i32>() {
                Ok(0) => {
                    if broken {
                        invalid += 1;
                    } else {
                        solutions.push(Assignment::from_literals(current.drain(..)));
                    }
                    current.clear();
                    broken = false;
                }
                Ok(lit) => current.push(lit),
                Err(_) => broken = true,
            }
        }
    }
    if !current.is_empty() || broken {
        invalid += 1;
    }
    (solutions, invalid)
}

/// Sidecar text mapping cells to variable ids, one `cell` line per cell.
pub fn write_layout<W: Write>(layout: &BitLayout, mut out: W) -> Result<()> {
    let join = |xs: &mut dyn Iterator<Item = String>| xs.collect::<Vec<_>>().join(" ");
    writeln!(
        out,
        "# cell-to-variable layout, bits least significant first"
    )?;
    writeln!(
        out,
        "shape {}",
        join(&mut layout.shape.iter().map(|x| x.to_string()))
    )?;
    writeln!(out, "width {}", layout.width)?;
    writeln!(
        out,
        "zeros {}",
        join(&mut layout.structural_zeros.iter().map(|x| x.to_string()))
    )?;
    match layout.aux_range {
        Some((lo, hi)) => writeln!(out, "aux {lo} {hi}")?,
        None => writeln!(out, "aux none")?,
    }
    for (j, vars) in layout.cell_vars.iter().enumerate() {
        writeln!(
            out,
            "cell {j} {}",
            join(&mut vars.iter().map(|x| x.to_string()))
        )?;
    }
    Ok(())
}

pub fn read_layout(text: &str) -> Result<BitLayout> {
    let mut shape = None;
    let mut width = None;
    let mut zeros = BTreeSet::new();
    let mut aux_range = None;
    let mut cell_vars = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let key = toks.next().unwrap_or_default();
        let nums = |toks: std::str::SplitWhitespace<'_>| -> Result<Vec<u64>> {
            toks.map(|t| {
                t.parse::<u64>()
                    .map_err(|_| Error::parse(lineno, format!("bad number {t:?}")))
            })
            .collect()
        };
        match key {
            "shape" => {
                shape = Some(
                    nums(toks)?
                        .into_iter()
                        .map(|x| x as usize)
                        .collect::<Vec<_>>(),
                )
            }
            "width" => width = nums(toks)?.first().map(|&w| w as usize),
            "zeros" => zeros = nums(toks)?.into_iter().map(|x| x as usize).collect(),
            "aux" => {
                let rest: Vec<&str> = toks.collect();
                aux_range = match rest.as_slice() {
                    ["none"] => None,
                    [lo, hi] => Some((
                        lo.parse()
                            .map_err(|_| Error::parse(lineno, "bad aux range"))?,
                        hi.parse()
                            .map_err(|_| Error::parse(lineno, "bad aux range"))?,
                    )),
                    _ => return Err(Error::parse(lineno, "bad aux range")),
                };
            }
            "cell" => {
                let v = nums(toks)?;
                let Some((&idx, vars)) = v.split_first() else {
                    return Err(Error::parse(lineno, "empty cell line"));
                };
                if idx as usize != cell_vars.len() {
                    return Err(Error::parse(lineno, "cells out of order"));
                }
                cell_vars.push(vars.iter().map(|&x| x as u32).collect::<Vec<_>>());
            }
            other => return Err(Error::parse(lineno, format!("unknown key {other:?}"))),
        }
    }
    let shape = shape.ok_or_else(|| Error::parse(0, "missing shape"))?;
    let width = width.ok_or_else(|| Error::parse(0, "missing width"))?;
    if shape.iter().product::<usize>() != cell_vars.len() {
        return Err(Error::parse(0, "cell count does not match shape"));
    }
    if cell_vars.iter().any(|v| v.len() != width) {
        return Err(Error::parse(0, "cell with wrong number of bits"));
    }
    Ok(BitLayout {
        width,
        cell_vars,
        aux_range,
        structural_zeros: zeros,
        shape,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnf::{decode_assignment, encode_fiber, encode_table};
    use crate::model::{build_independence_matrix, FiberSpec, Table};

    #[test]
    fn single_unit_clause() {
        let formula = CnfFormula {
            num_vars: 1,
            clauses: vec![vec![1]],
            ..Default::default()
        };
        let layout = BitLayout {
            width: 1,
            cell_vars: vec![vec![1]],
            aux_range: None,
            structural_zeros: BTreeSet::new(),
            shape: vec![1],
        };
        let mut buf = Vec::new();
        write_dimacs(&formula, &layout, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().any(|l| l == "p cnf 1 1"));
        assert!(text.lines().any(|l| l == "1 0"));
        assert!(text.lines().any(|l| l == "c ind 1 0"));
    }

    #[test]
    fn solution_lines() {
        let a = parse_solution_line("v 1 -2 0").unwrap();
        assert_eq!(
            (a.get(1), a.get(2), a.get(3)),
            (Some(true), Some(false), None)
        );
        let b = parse_solution_line("1 -2 0").unwrap();
        assert_eq!(a, b);
        let c = parse_solution_line("v 1\nv -2 0\n").unwrap();
        assert_eq!(a, c);
        assert!(parse_solution_line("1 -2").is_err());
        assert!(parse_solution_line("1 x 0").is_err());
        assert!(parse_solution_line("1 0 2").is_err());
    }

    #[test]
    fn sampler_output_groups() {
        let out = "c sampler\ns SATISFIABLE\nv 1 -2\nv 3 0\n-1 2 -3 0\n1 oops 0\n4";
        let (sols, invalid) = parse_solutions(out);
        assert_eq!(sols.len(), 2);
        assert_eq!(sols[0].literals(), vec![1, -2, 3]);
        assert_eq!(sols[1].literals(), vec![-1, 2, -3]);
        assert_eq!(invalid, 2);
    }

    #[test]
    fn ind_lines_are_split() {
        let spec = FiberSpec::new(
            build_independence_matrix(&[3, 3]).unwrap(),
            vec![2, 2, 2, 2, 2, 2],
            BTreeSet::new(),
            vec![3, 3],
        )
        .unwrap();
        let (f, layout) = encode_fiber(&spec).unwrap();
        let mut buf = Vec::new();
        write_dimacs(&f, &layout, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let ind: Vec<&str> = text.lines().filter(|l| l.starts_with("c ind ")).collect();
        assert_eq!(ind.len(), 2);
        assert!(ind.iter().all(|l| l.ends_with(" 0")));
        assert!(ind
            .iter()
            .all(|l| l.split_whitespace().count() <= IND_PER_LINE + 3));

        let (back, sampling) = read_dimacs(&text).unwrap();
        assert_eq!(back.num_vars, f.num_vars);
        assert_eq!(back.clauses, f.clauses);
        assert_eq!(sampling, layout.sampling_set());
    }

    #[test]
    fn solution_round_trip_through_text() {
        let spec = FiberSpec::new(
            build_independence_matrix(&[2, 3]).unwrap(),
            vec![3, 2, 1, 2, 2],
            BTreeSet::new(),
            vec![2, 3],
        )
        .unwrap();
        let (_, layout) = encode_fiber(&spec).unwrap();
        let table = Table::new(vec![2, 3], vec![1, 1, 1, 0, 1, 1]).unwrap();
        let lits = encode_table(&layout, &table).unwrap().literals();
        let line = format!(
            "v {} 0",
            lits.iter()
                .map(i32::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        );
        let decoded = decode_assignment(&layout, &parse_solution_line(&line).unwrap()).unwrap();
        assert_eq!(decoded, table);
    }

    #[test]
    fn layout_round_trip() {
        let spec = FiberSpec::new(
            build_independence_matrix(&[2, 2]).unwrap(),
            vec![1, 2, 2, 1],
            [1].into_iter().collect(),
            vec![2, 2],
        )
        .unwrap();
        let (_, layout) = encode_fiber(&spec).unwrap();
        let mut buf = Vec::new();
        write_layout(&layout, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("cell ")).count(), 4);
        assert_eq!(read_layout(&text).unwrap(), layout);
        assert!(read_layout("shape 2\nwidth 1\ncell 0 1\n").is_err());
    }

    #[test]
    fn header_mismatch_rejected() {
        assert!(read_dimacs("p cnf 2 2\n1 0\n").is_err());
        assert!(read_dimacs("p cnf 1 1\n2 0\n").is_err());
        assert!(read_dimacs("1 0\n").is_err());
        let (f, _) = read_dimacs("p cnf 1 1\n0\n").unwrap();
        assert!(f.trivially_unsat);
    }
}
