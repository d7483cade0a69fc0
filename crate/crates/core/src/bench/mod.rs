//! Evaluation protocol: repeated runs from generated tables, exact reference
//! p-values where the fiber is small, and steps-to-convergence.

mod export;
mod generate;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use export::{export_results, write_run_csv, write_summary_csv, write_svg_plot};
pub use generate::{
    generate_initial_n3f, generate_initial_quasi, generate_initial_two_way, largest_remainder,
    DIAGONAL_MASS,
};

use crate::enumerate::{enumerate_fiber, exact_p_value_from};
use crate::error::{Error, Result};
use crate::inference::{mle_fit, ChiSquare, MleOptions};
use crate::mcmc::{run_walk, HybridSchedule, ProposalSource};
use crate::model::{
    build_independence_matrix, build_n3f_matrix, ConstraintMatrix, FiberSpec, Table,
};
use crate::moves::{basic_moves, cycle_moves_quasi, load_markov_basis, MoveSet};
use crate::sampler::{FiberSampler, SamplerConfig};

pub const DEFAULT_TOLERANCE: f64 = 0.005;
/// Fibers up to this size are enumerated for an exact reference p-value.
pub const DEFAULT_EXACT_CAP: usize = 100_000;

pub fn default_lambda_grid() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75, 1.0]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Independence,
    /// Structural zeros are derived per run from the generated table.
    QuasiIndependence,
    NoThreeWay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Two-way shape for the independence models.
    #[serde(default)]
    pub shape: Option<Vec<usize>>,
    /// Side length for the no-three-way model.
    #[serde(default)]
    pub d: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveSourceConfig {
    #[default]
    Basic,
    Cycle,
    File,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MovesConfig {
    pub source: MoveSourceConfig,
    pub path: Option<PathBuf>,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_exact_cap() -> usize {
    DEFAULT_EXACT_CAP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub sample_size: u64,
    pub runs: usize,
    pub steps: usize,
    pub schedule: HybridSchedule,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub moves: MovesConfig,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_exact_cap")]
    pub exact_cap: usize,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; a relative move-file path is taken relative to
    /// the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        if let (Some(dir), Some(p)) = (path.parent(), config.moves.path.as_mut()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 || self.steps == 0 {
            return Err(Error::Config("runs and steps must be >= 1".into()));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(0.0..=1.0).contains(l))
        {
            return Err(Error::Config(
                "lambda grid must be non-empty with values in [0, 1]".into(),
            ));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        self.schedule.validate()?;
        self.sampler.validate()?;
        match self.model.kind {
            ModelKind::Independence | ModelKind::QuasiIndependence => {
                match self.model.shape.as_deref() {
                    Some([a, b]) if *a >= 2 && *b >= 2 => {}
                    _ => {
                        return Err(Error::Config(
                            "two-way models need shape = [d1, d2] with d1, d2 >= 2".into(),
                        ))
                    }
                }
            }
            ModelKind::NoThreeWay => {
                if !matches!(self.model.d, Some(d) if d >= 2) {
                    return Err(Error::Config("no-three-way model needs d >= 2".into()));
                }
                if self.schedule.uses_moves() && self.moves.source != MoveSourceConfig::File {
                    return Err(Error::Config(
                        "no-three-way walks need moves from a file".into(),
                    ));
                }
            }
        }
        if self.moves.source == MoveSourceConfig::File && self.moves.path.is_none() {
            return Err(Error::Config(
                "moves.source = \"file\" needs moves.path".into(),
            ));
        }
        Ok(())
    }

    fn shape(&self) -> Vec<usize> {
        match self.model.kind {
            ModelKind::NoThreeWay => {
                let d = self.model.d.unwrap_or(0);
                vec![d, d, d]
            }
            _ => self.model.shape.clone().unwrap_or_default(),
        }
    }

    fn matrix(&self) -> Result<ConstraintMatrix> {
        match self.model.kind {
            ModelKind::NoThreeWay => build_n3f_matrix(self.model.d.unwrap_or(0)),
            _ => build_independence_matrix(&self.shape()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub run_id: usize,
    pub lambda: f64,
    pub initial: Table,
    pub structural_zeros: BTreeSet<usize>,
    pub exact_p: Option<f64>,
    pub p_sequence: Vec<f64>,
    pub convergence_step: Option<usize>,
    pub schedule: String,
    pub sat_steps: usize,
    pub move_steps: usize,
    pub mle_converged: bool,
}

impl RunRecord {
    pub fn final_p(&self) -> Option<f64> {
        self.p_sequence.last().copied()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Evaluation {
    pub records: Vec<RunRecord>,
    /// Runs that failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

/// Smallest 1-based `t` with `|p_s - reference| <= tol` for all `s >= t`.
///
/// Without an explicit reference the last value is used, so the result is
/// always defined; with one, `None` means even the last value is too far.
pub fn convergence_step(p_sequence: &[f64], reference: Option<f64>, tol: f64) -> Option<usize> {
    let target = reference.or_else(|| p_sequence.last().copied())?;
    let inside = p_sequence
        .iter()
        .rev()
        .take_while(|&&p| (p - target).abs() <= tol)
        .count();
    (inside > 0).then(|| p_sequence.len() - inside + 1)
}

fn run_seeds(master: u64, run_id: usize) -> (u64, u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(run_id as u64 + 1);
    (rng.random(), rng.random(), rng.random())
}

fn load_moves(
    config: &ExperimentConfig,
    matrix: &ConstraintMatrix,
    zeros: &BTreeSet<usize>,
) -> Result<MoveSet> {
    let shape = config.shape();
    match config.moves.source {
        MoveSourceConfig::Basic => basic_moves(&shape, zeros),
        MoveSourceConfig::Cycle => cycle_moves_quasi(&shape, zeros),
        MoveSourceConfig::File => {
            let path = config.moves.path.as_deref().expect("validated");
            let all = load_markov_basis(path, matrix)?;
            let deltas = all
                .moves()
                .iter()
                .filter(|m| zeros.iter().all(|&z| m.delta()[z] == 0))
                .map(|m| m.delta().to_vec())
                .collect();
            MoveSet::new(deltas, all.source(), matrix)
        }
    }
}

/// One evaluation run; every random choice derives from `(config.seed, run_id)`.
pub fn run_single(config: &ExperimentConfig, run_id: usize) -> Result<RunRecord> {
    let lambda = config.lambda_grid[run_id % config.lambda_grid.len()];
    let (gen_seed, repair_seed, walk_seed) = run_seeds(config.seed, run_id);
    let shape = config.shape();
    let matrix = config.matrix()?;
    let n = config.sample_size;

    let (initial, zeros) = match config.model.kind {
        ModelKind::Independence => (
            generate_initial_two_way(&shape, n, lambda, gen_seed)?,
            BTreeSet::new(),
        ),
        ModelKind::QuasiIndependence => {
            generate_initial_quasi(&shape, n, lambda, gen_seed ^ repair_seed)?
        }
        ModelKind::NoThreeWay => (
            generate_initial_n3f(shape[0], n, &config.sampler, gen_seed)?,
            BTreeSet::new(),
        ),
    };
    let spec = FiberSpec::new(
        matrix.clone(),
        matrix.apply(initial.cells())?,
        zeros.clone(),
        shape.clone(),
    )?;

    let fit = mle_fit(&matrix, &zeros, &initial, &MleOptions::default())?;
    if !fit.converged {
        warn!(
            "run {run_id}: MLE did not converge (discrepancy {:e})",
            fit.margin_discrepancy
        );
    }
    let chi = ChiSquare::from_fit(&fit, &initial, &zeros);
    let stat = |t: &Table| chi.statistic(t);

    let moves = if config.schedule.uses_moves() {
        Some(load_moves(config, &matrix, &zeros)?)
    } else {
        None
    };
    let mut sampler = if config.schedule.uses_sat() {
        Some(FiberSampler::new(&spec, &config.sampler)?)
    } else {
        None
    };
    let source = sampler.as_mut().map(|s| s as &mut dyn ProposalSource);
    let record = run_walk(
        &spec,
        &initial,
        config.schedule,
        moves.as_ref(),
        source,
        config.steps,
        &stat,
        walk_seed,
    )?;
    if let Some(reason) = &record.aborted {
        return Err(Error::Config(format!(
            "walk aborted after {} steps: {reason}",
            record.steps()
        )));
    }

    let enumeration = enumerate_fiber(&spec, Some(config.exact_cap))?;
    let exact_p = if enumeration.complete {
        Some(exact_p_value_from(&enumeration, stat(&initial), stat)?)
    } else {
        None
    };
    let convergence = convergence_step(&record.p_sequence, exact_p, config.tolerance);
    Ok(RunRecord {
        run_id,
        lambda,
        initial,
        structural_zeros: zeros,
        exact_p,
        convergence_step: convergence,
        schedule: config.schedule.to_string(),
        sat_steps: record.sat_samples,
        move_steps: record.move_steps,
        mle_converged: fit.converged,
        p_sequence: record.p_sequence,
    })
}

/// Runs all `T` runs, optionally on `jobs` threads; results are ordered by
/// run id regardless of `jobs`.
pub fn run_evaluation(config: &ExperimentConfig, jobs: usize) -> Result<Evaluation> {
    config.validate()?;
    let outcomes: Vec<Result<RunRecord>> = if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| {
            (0..config.runs)
                .into_par_iter()
                .map(|i| run_single(config, i))
                .collect()
        })
    } else {
        (0..config.runs).map(|i| run_single(config, i)).collect()
    };
    let mut evaluation = Evaluation::default();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => {
                info!(
                    "run {i}: final p {:?}, exact p {:?}",
                    r.final_p(),
                    r.exact_p
                );
                evaluation.records.push(r);
            }
            Err(e) => {
                warn!("run {i} skipped: {e}");
                evaluation.failures.push((i, e.to_string()));
            }
        }
    }
    Ok(evaluation)
}
