//! Python bindings for fibersat.

use std::collections::BTreeSet;
use std::path::PathBuf;

use fibersat_core::cnf::{encode_fiber, write_dimacs, write_layout};
use fibersat_core::enumerate::{enumerate_fiber, exact_p_value};
use fibersat_core::inference::{mle_fit, ChiSquare, MleOptions};
use fibersat_core::mcmc::{run_walk as core_run_walk, HybridSchedule, ProposalSource};
use fibersat_core::moves::{basic_moves, cycle_moves_quasi, load_markov_basis, MoveSet};
use fibersat_core::sampler::{FiberSampler, SamplerConfig};
use fibersat_core::{model, ModelSpec};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: fibersat_core::Error) -> PyErr {
    match e {
        fibersat_core::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn model_spec(model: &str, shape: &[usize], zeros: &[usize]) -> PyResult<ModelSpec> {
    let zeros: BTreeSet<usize> = zeros.iter().copied().collect();
    match model {
        "independence" if zeros.is_empty() => Ok(ModelSpec::Independence {
            shape: shape.to_vec(),
        }),
        "independence" | "quasi" => Ok(ModelSpec::QuasiIndependence {
            shape: shape.to_vec(),
            zeros,
        }),
        "n3f" => match shape {
            [d] | [d, _, _] => Ok(ModelSpec::NoThreeWay { d: *d }),
            _ => Err(PyValueError::new_err("n3f expects shape [d] or [d, d, d]")),
        },
        other => Err(PyValueError::new_err(format!(
            "unknown model {other:?}; use independence, quasi or n3f"
        ))),
    }
}

fn parse_schedule(s: &str) -> PyResult<HybridSchedule> {
    let bad = || PyValueError::new_err(format!("bad schedule {s:?}"));
    let num = |t: &str| t.trim().parse::<usize>().map_err(|_| bad());
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "alternating" => Ok(HybridSchedule::Alternating { n: num(arg)? }),
        "parallel" => {
            let (n, k) = arg.split_once(',').ok_or_else(bad)?;
            Ok(HybridSchedule::ParallelStarts {
                n: num(n)?,
                k: num(k)?,
            })
        }
        "moves" => Ok(HybridSchedule::MovesOnly),
        "sat" => Ok(HybridSchedule::SatOnly),
        _ => Err(bad()),
    }
}

fn sampler_config(
    sampler: &str,
    bias_strength: f64,
    command: Option<String>,
) -> PyResult<SamplerConfig> {
    match (sampler, command) {
        ("uniform", _) => Ok(SamplerConfig::internal_uniform()),
        ("biased", _) => Ok(SamplerConfig::internal_biased(bias_strength)),
        ("external", Some(cmd)) => Ok(SamplerConfig::external(cmd)),
        ("external", None) => Err(PyValueError::new_err("external sampler needs a command")),
        (other, _) => Err(PyValueError::new_err(format!("unknown sampler {other:?}"))),
    }
}

/// A contingency table stored row-major.
#[pyclass(name = "Table", module = "fibersat", frozen, eq)]
#[derive(Clone, PartialEq)]
struct PyTable(model::Table);

#[pymethods]
impl PyTable {
    #[new]
    fn new(shape: Vec<usize>, cells: Vec<u64>) -> PyResult<Self> {
        model::Table::new(shape, cells).map(PyTable).map_err(err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        model::Table::parse_text(text).map(PyTable).map_err(err)
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    #[getter]
    fn cells(&self) -> Vec<u64> {
        self.0.cells().to_vec()
    }

    fn sample_size(&self) -> u64 {
        self.0.sample_size()
    }

    fn to_text(&self) -> String {
        self.0.to_text()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Table(shape={:?}, cells={:?})",
            self.0.shape(),
            self.0.cells()
        )
    }
}

/// The set of nonnegative tables with fixed margins and structural zeros.
#[pyclass(name = "FiberSpec", module = "fibersat", frozen)]
#[derive(Clone)]
struct PyFiberSpec(model::FiberSpec);

#[pymethods]
impl PyFiberSpec {
    #[new]
    #[pyo3(signature = (model, shape, margins, zeros = Vec::new()))]
    fn new(model: &str, shape: Vec<usize>, margins: Vec<i64>, zeros: Vec<usize>) -> PyResult<Self> {
        let spec = model_spec(model, &shape, &zeros)?;
        let matrix = spec.matrix().map_err(err)?;
        model::FiberSpec::with_signed_margins(
            matrix,
            &margins,
            spec.structural_zeros(),
            spec.shape(),
        )
        .map(PyFiberSpec)
        .map_err(err)
    }

    /// Fiber of an observed table under the given model.
    #[staticmethod]
    #[pyo3(signature = (model, observed, zeros = Vec::new()))]
    fn from_observation(model: &str, observed: &PyTable, zeros: Vec<usize>) -> PyResult<Self> {
        let spec = model_spec(model, observed.0.shape(), &zeros)?;
        model::fiber_spec_from_observation(&spec, &observed.0)
            .map(PyFiberSpec)
            .map_err(err)
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.0.shape().to_vec()
    }

    #[getter]
    fn margins(&self) -> Vec<u64> {
        self.0.margins().to_vec()
    }

    #[getter]
    fn structural_zeros(&self) -> Vec<usize> {
        self.0.structural_zeros().iter().copied().collect()
    }

    fn contains(&self, table: &PyTable) -> bool {
        self.0.contains(&table.0)
    }

    fn bit_width(&self) -> PyResult<usize> {
        fibersat_core::cnf::bit_width(&self.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "FiberSpec(shape={:?}, margins={:?}, zeros={:?})",
            self.0.shape(),
            self.0.margins(),
            self.0.structural_zeros()
        )
    }
}

/// Lists fiber elements; returns `(tables, complete)`.
#[pyfunction]
#[pyo3(signature = (spec, cap = None))]
fn enumerate(
    py: Python<'_>,
    spec: &PyFiberSpec,
    cap: Option<usize>,
) -> PyResult<(Vec<PyTable>, bool)> {
    let e = py
        .allow_threads(|| enumerate_fiber(&spec.0, cap))
        .map_err(err)?;
    Ok((e.elements.into_iter().map(PyTable).collect(), e.complete))
}

/// Writes `prefix.cnf` and `prefix.layout`; returns formula statistics.
#[pyfunction]
fn encode<'py>(
    py: Python<'py>,
    spec: &PyFiberSpec,
    prefix: PathBuf,
) -> PyResult<Bound<'py, PyDict>> {
    let (formula, layout) = encode_fiber(&spec.0).map_err(err)?;
    let cnf = prefix.with_extension("cnf");
    let sidecar = prefix.with_extension("layout");
    let io = |p: &PathBuf, e: std::io::Error| PyOSError::new_err(format!("{}: {e}", p.display()));
    let file = std::fs::File::create(&cnf).map_err(|e| io(&cnf, e))?;
    write_dimacs(&formula, &layout, std::io::BufWriter::new(file)).map_err(err)?;
    let file = std::fs::File::create(&sidecar).map_err(|e| io(&sidecar, e))?;
    write_layout(&layout, std::io::BufWriter::new(file)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("cnf", cnf)?;
    out.set_item("layout", sidecar)?;
    out.set_item("bit_width", layout.width)?;
    out.set_item("variables", formula.num_vars)?;
    out.set_item("clauses", formula.num_clauses())?;
    out.set_item("trivially_unsat", formula.trivially_unsat)?;
    Ok(out)
}

/// Draws `count` fiber elements with the chosen sampler.
#[pyfunction]
#[pyo3(signature = (spec, count, seed = 0, sampler = "uniform", bias_strength = 2.0, command = None))]
fn sample(
    py: Python<'_>,
    spec: &PyFiberSpec,
    count: usize,
    seed: u64,
    sampler: &str,
    bias_strength: f64,
    command: Option<String>,
) -> PyResult<Vec<PyTable>> {
    let config = sampler_config(sampler, bias_strength, command)?;
    let batch = py
        .allow_threads(|| FiberSampler::new(&spec.0, &config)?.sample(count, seed))
        .map_err(err)?;
    Ok(batch.tables.into_iter().map(PyTable).collect())
}

/// Maximum likelihood fit of the log-linear model to `observed`.
#[pyfunction]
#[pyo3(signature = (spec, observed))]
fn mle<'py>(
    py: Python<'py>,
    spec: &PyFiberSpec,
    observed: &PyTable,
) -> PyResult<Bound<'py, PyDict>> {
    let fit = mle_fit(
        spec.0.matrix(),
        spec.0.structural_zeros(),
        &observed.0,
        &MleOptions::default(),
    )
    .map_err(err)?;
    let chi = ChiSquare::from_fit(&fit, &observed.0, spec.0.structural_zeros());
    let out = PyDict::new(py);
    out.set_item("statistic", chi.statistic(&observed.0))?;
    out.set_item("pi", fit.pi_tilde)?;
    out.set_item("theta", fit.theta_hat)?;
    out.set_item("margin_discrepancy", fit.margin_discrepancy)?;
    out.set_item("iterations", fit.iterations)?;
    out.set_item("converged", fit.converged)?;
    Ok(out)
}

/// Approximates the chi-square p-value of `observed` by a hybrid walk.
///
/// `schedule` is `alternating:N`, `parallel:N,K`, `moves` or `sat`;
/// `moves` is `basic`, `cycle`, or a path to a move file.
#[pyfunction]
#[pyo3(signature = (
    spec, observed, steps = 10_000, seed = 0, schedule = "alternating:10", moves = "basic",
    sampler = "uniform", bias_strength = 2.0, command = None, exact_cap = None
))]
#[allow(clippy::too_many_arguments)]
fn run_walk<'py>(
    py: Python<'py>,
    spec: &PyFiberSpec,
    observed: &PyTable,
    steps: usize,
    seed: u64,
    schedule: &str,
    moves: &str,
    sampler: &str,
    bias_strength: f64,
    command: Option<String>,
    exact_cap: Option<usize>,
) -> PyResult<Bound<'py, PyDict>> {
    let schedule = parse_schedule(schedule)?;
    let config = sampler_config(sampler, bias_strength, command)?;
    let spec = &spec.0;
    let observed = &observed.0;
    let shape = spec.shape();
    let moves: Option<MoveSet> = if schedule.uses_moves() {
        Some(
            match moves {
                "basic" => basic_moves(shape, spec.structural_zeros()),
                "cycle" => cycle_moves_quasi(shape, spec.structural_zeros()),
                path => load_markov_basis(path.as_ref(), spec.matrix()),
            }
            .map_err(err)?,
        )
    } else {
        None
    };
    let fit = mle_fit(
        spec.matrix(),
        spec.structural_zeros(),
        observed,
        &MleOptions::default(),
    )
    .map_err(err)?;
    let chi = ChiSquare::from_fit(&fit, observed, spec.structural_zeros());
    let (record, exact) = py
        .allow_threads(|| -> fibersat_core::Result<_> {
            let mut source = if schedule.uses_sat() {
                Some(FiberSampler::new(spec, &config)?)
            } else {
                None
            };
            let stat = |t: &model::Table| chi.statistic(t);
            let record = core_run_walk(
                spec,
                observed,
                schedule,
                moves.as_ref(),
                source.as_mut().map(|s| s as &mut dyn ProposalSource),
                steps,
                &stat,
                seed,
            )?;
            let exact = match exact_cap {
                Some(cap) => {
                    let e = enumerate_fiber(spec, Some(cap))?;
                    if e.complete {
                        Some(exact_p_value(spec, stat(observed), stat)?)
                    } else {
                        None
                    }
                }
                None => None,
            };
            Ok((record, exact))
        })
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("p_value", record.final_p())?;
    out.set_item("exact_p", exact)?;
    out.set_item("p_sequence", &record.p_sequence)?;
    out.set_item("sat_steps", record.sat_steps())?;
    out.set_item("move_steps", record.move_steps)?;
    out.set_item("mle_converged", fit.converged)?;
    out.set_item("aborted", &record.aborted)?;
    Ok(out)
}

/// First 1-based step after which `p_sequence` stays within `tol` of the
/// reference (the exact value if given, else the final estimate).
#[pyfunction]
#[pyo3(signature = (p_sequence, exact = None, tol = 0.005))]
fn convergence_step(p_sequence: Vec<f64>, exact: Option<f64>, tol: f64) -> Option<usize> {
    fibersat_core::bench::convergence_step(&p_sequence, exact, tol)
}

#[pymodule]
fn fibersat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTable>()?;
    m.add_class::<PyFiberSpec>()?;
    m.add_function(wrap_pyfunction!(enumerate, m)?)?;
    m.add_function(wrap_pyfunction!(encode, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(mle, m)?)?;
    m.add_function(wrap_pyfunction!(run_walk, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_step, m)?)?;
    Ok(())
}
