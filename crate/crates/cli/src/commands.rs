use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fibersat_core::bench::{export_results, run_evaluation, ExperimentConfig};
use fibersat_core::cnf::{
    encode_fiber, enumerate_models, read_dimacs, read_layout, write_dimacs, write_layout,
    Projection,
};
use fibersat_core::enumerate::{enumerate_fiber, exact_p_value_from};
use fibersat_core::inference::{mle_fit, ChiSquare, MleOptions};
use fibersat_core::mcmc::{run_walk, ProposalSource};
use fibersat_core::model::{
    build_independence_matrix, build_n3f_matrix, fiber_spec_from_observation, flat_index,
    parse_structural_zeros, ConstraintMatrix, FiberSpec, ModelSpec, Table,
};
use fibersat_core::moves::{basic_moves, cycle_moves_quasi, load_markov_basis, MoveSet};
use fibersat_core::sampler::{
    biased_weights, cached_enumeration, tv_distance_to_uniform, FiberSampler, SamplerConfig,
    SamplerKind,
};

use crate::{Command, ModelArgs, ModelKindArg, SamplerArgs, SamplerKindArg};

/// `println!` that exits quietly once stdout is closed.
macro_rules! say {
    ($($arg:tt)*) => {
        if writeln!(std::io::stdout(), $($arg)*).is_err() {
            std::process::exit(0);
        }
    };
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Encode { model, out } => cmd_encode(&model, &out),
        Command::Enumerate {
            model,
            cnf,
            layout,
            cap,
            list,
        } => cmd_enumerate(&model, cnf.as_deref(), layout.as_deref(), cap, list),
        Command::Test {
            model,
            sampler,
            schedule,
            moves,
            steps,
            seed,
            exact_cap,
            csv,
        } => {
            let observed = model.observed.clone().context("test needs --observed")?;
            let (model_spec, _) = resolve_model(&model, None)?;
            let table = read_table(&observed)?;
            let spec = fiber_spec_from_observation(&model_spec, &table)?;
            let moves = load_moves(&moves, &model_spec, &spec)?;
            let sampler = sampler_config(&sampler)?;
            let report = TestReport::compute(
                &spec, &table, schedule, &moves, &sampler, steps, seed, exact_cap, csv,
            )?;
            if write!(std::io::stdout(), "{report}").is_err() {
                std::process::exit(0);
            }
            Ok(())
        }
        Command::Bench {
            config,
            out,
            seed,
            jobs,
        } => cmd_bench(&config, &out, seed, jobs),
        Command::Diagnose {
            model,
            sampler,
            draws,
            seed,
        } => cmd_diagnose(&model, &sampler, draws, seed),
    }
}

fn read_table(path: &Path) -> Result<Table> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Table::parse_text(&text).with_context(|| format!("parsing {}", path.display()))
}

fn parse_zero(token: &str, shape: &[usize]) -> Result<usize> {
    let idx = token
        .split(':')
        .map(|t| t.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("bad structural zero {token:?}; expected row:col"))?;
    if idx.len() != shape.len() || idx.iter().zip(shape).any(|(&i, &s)| i >= s) {
        bail!("structural zero {token:?} outside shape {shape:?}");
    }
    Ok(flat_index(shape, &idx))
}

/// Model and (when margins or an observation are given) the fiber.
fn resolve_model(
    args: &ModelArgs,
    observed: Option<&Table>,
) -> Result<(ModelSpec, Option<FiberSpec>)> {
    let observed = match (observed, &args.observed) {
        (Some(t), _) => Some(t.clone()),
        (None, Some(p)) => Some(read_table(p)?),
        (None, None) => None,
    };
    let shape: Vec<usize> = match (&args.shape[..], &observed) {
        ([], Some(t)) => t.shape().to_vec(),
        ([], None) => bail!("--shape or --observed is required"),
        (s, _) => s.to_vec(),
    };
    let model = match args.model {
        ModelKindArg::N3f => {
            let d = match shape[..] {
                [d] | [d, _, _] => d,
                _ => bail!("n3f needs --shape d"),
            };
            if !args.zeros.is_empty() || args.zeros_file.is_some() {
                bail!("structural zeros are only supported for two-way models");
            }
            ModelSpec::NoThreeWay { d }
        }
        kind => {
            if shape.len() != 2 {
                bail!("two-way models need --shape d1,d2");
            }
            let mut zeros = BTreeSet::new();
            for z in &args.zeros {
                zeros.insert(parse_zero(z, &shape)?);
            }
            if let Some(path) = &args.zeros_file {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                zeros.extend(parse_structural_zeros(&text, &shape)?);
            }
            if kind == ModelKindArg::Independence && !zeros.is_empty() {
                bail!("structural zeros need --model quasi");
            }
            if zeros.is_empty() {
                ModelSpec::Independence { shape }
            } else {
                ModelSpec::QuasiIndependence { shape, zeros }
            }
        }
    };
    let fiber = match (&args.margins[..], observed) {
        ([], Some(t)) => Some(fiber_spec_from_observation(&model, &t)?),
        ([], None) => None,
        (b, _) => Some(FiberSpec::with_signed_margins(
            model.matrix()?,
            b,
            model.structural_zeros(),
            model.shape(),
        )?),
    };
    Ok((model, fiber))
}

fn require_fiber(args: &ModelArgs) -> Result<FiberSpec> {
    resolve_model(args, None)?
        .1
        .context("--margins or --observed is required")
}

fn sampler_config(args: &SamplerArgs) -> Result<SamplerConfig> {
    let mut config = match args.sampler {
        SamplerKindArg::Uniform => SamplerConfig::internal_uniform(),
        SamplerKindArg::Biased => SamplerConfig::internal_biased(args.bias_strength),
        SamplerKindArg::External => SamplerConfig::external(
            args.sampler_cmd
                .clone()
                .context("--sampler external needs --sampler-cmd")?,
        ),
    };
    config.timeout_secs = args.sampler_timeout;
    config.validate()?;
    Ok(config)
}

fn load_moves(choice: &str, model: &ModelSpec, spec: &FiberSpec) -> Result<MoveSet> {
    let zeros = spec.structural_zeros();
    Ok(match choice {
        "basic" => basic_moves(spec.shape(), zeros)?,
        "cycle" => cycle_moves_quasi(spec.shape(), zeros)?,
        path => {
            let matrix: ConstraintMatrix = match model {
                ModelSpec::NoThreeWay { d } => build_n3f_matrix(*d)?,
                _ => build_independence_matrix(spec.shape())?,
            };
            load_markov_basis(Path::new(path), &matrix)?
        }
    })
}

fn cmd_encode(args: &ModelArgs, out: &Path) -> Result<()> {
    let spec = require_fiber(args)?;
    let (formula, layout) = encode_fiber(&spec)?;
    let cnf_path = out.with_extension("cnf");
    let layout_path = out.with_extension("layout");
    let mut w = BufWriter::new(
        File::create(&cnf_path).with_context(|| format!("creating {}", cnf_path.display()))?,
    );
    write_dimacs(&formula, &layout, &mut w)?;
    w.flush()?;
    let mut w = BufWriter::new(
        File::create(&layout_path)
            .with_context(|| format!("creating {}", layout_path.display()))?,
    );
    write_layout(&layout, &mut w)?;
    w.flush()?;
    say!("cnf: {}", cnf_path.display());
    say!("layout: {}", layout_path.display());
    say!("bit_width: {}", layout.width);
    say!("variables: {}", formula.num_vars);
    say!("clauses: {}", formula.num_clauses());
    if formula.trivially_unsat {
        say!("note: margins are infeasible; the formula is trivially unsatisfiable");
    }
    Ok(())
}

fn cmd_enumerate(
    args: &ModelArgs,
    cnf: Option<&Path>,
    layout: Option<&Path>,
    cap: Option<usize>,
    list: bool,
) -> Result<()> {
    let (tables, complete) = match cnf {
        Some(cnf_path) => {
            let layout_path: PathBuf = layout
                .map(Path::to_path_buf)
                .unwrap_or_else(|| cnf_path.with_extension("layout"));
            let text = std::fs::read_to_string(cnf_path)
                .with_context(|| format!("reading {}", cnf_path.display()))?;
            let (formula, _) = read_dimacs(&text)?;
            let text = std::fs::read_to_string(&layout_path)
                .with_context(|| format!("reading {}", layout_path.display()))?;
            let layout = read_layout(&text)?;
            let e = enumerate_models(&formula, &layout, Projection::Cells, cap)?;
            (e.tables, e.complete)
        }
        None => {
            let spec = require_fiber(args)?;
            let e = enumerate_fiber(
                &spec,
                Some(cap.unwrap_or(fibersat_core::enumerate::DEFAULT_CAP)),
            )?;
            (e.elements, e.complete)
        }
    };
    if list {
        for t in &tables {
            say!(
                "{}",
                t.cells()
                    .iter()
                    .map(u64::to_string)
                    .collect::<Vec<_>>()
                    .join(" ")
            );
        }
    }
    say!("count: {}", tables.len());
    say!(
        "status: {}",
        if complete { "complete" } else { "incomplete" }
    );
    Ok(())
}

struct TestReport {
    lines: Vec<(&'static str, String)>,
}

impl TestReport {
    #[allow(clippy::too_many_arguments)]
    fn compute(
        spec: &FiberSpec,
        observed: &Table,
        schedule: fibersat_core::mcmc::HybridSchedule,
        moves: &MoveSet,
        sampler: &SamplerConfig,
        steps: usize,
        seed: u64,
        exact_cap: usize,
        csv: Option<PathBuf>,
    ) -> Result<Self> {
        let zeros = spec.structural_zeros();
        let fit = mle_fit(spec.matrix(), zeros, observed, &MleOptions::default())?;
        let chi = ChiSquare::from_fit(&fit, observed, zeros);
        let stat = |t: &Table| chi.statistic(t);
        let x_obs = stat(observed);

        let mut source = if schedule.uses_sat() {
            Some(FiberSampler::new(spec, sampler)?)
        } else {
            None
        };
        let record = run_walk(
            spec,
            observed,
            schedule,
            schedule.uses_moves().then_some(moves),
            source.as_mut().map(|s| s as &mut dyn ProposalSource),
            steps,
            &stat,
            seed,
        )?;
        if let Some(path) = csv {
            let mut w = BufWriter::new(
                File::create(&path).with_context(|| format!("creating {}", path.display()))?,
            );
            record.write_csv(&mut w)?;
            w.flush()?;
        }
        let enumeration = enumerate_fiber(spec, Some(exact_cap))?;
        let (fiber_size, exact) = if enumeration.complete {
            (
                enumeration.len().to_string(),
                format!("{}", exact_p_value_from(&enumeration, x_obs, stat)?),
            )
        } else {
            (format!("> {exact_cap}"), "n/a".to_string())
        };

        let mut lines = vec![
            ("statistic", format!("{x_obs}")),
            ("mle_converged", fit.converged.to_string()),
            ("mle_iterations", fit.iterations.to_string()),
            ("schedule", schedule.to_string()),
            ("moves", moves.len().to_string()),
            ("sampler", sampler.summary()),
            ("steps", record.steps().to_string()),
            ("sat_steps", record.sat_steps().to_string()),
            ("move_steps", record.move_steps.to_string()),
            (
                "acceptance_rate",
                format!("{:.4}", accept_rate(&record.accepted)),
            ),
            (
                "mcmc_p",
                record.final_p().map(|p| p.to_string()).unwrap_or_default(),
            ),
            ("fiber_size", fiber_size),
            ("exact_p", exact),
            ("seed", seed.to_string()),
        ];
        if let Some(reason) = record.aborted {
            lines.push(("aborted", reason));
        }
        Ok(TestReport { lines })
    }
}

fn accept_rate(accepted: &[bool]) -> f64 {
    accepted.iter().filter(|&&a| a).count() as f64 / accepted.len().max(1) as f64
}

impl std::fmt::Display for TestReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.lines {
            writeln!(f, "{k}: {v}")?;
        }
        Ok(())
    }
}

fn cmd_bench(config_path: &Path, out: &Path, seed: Option<u64>, jobs: usize) -> Result<()> {
    let mut config = ExperimentConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    let evaluation = run_evaluation(&config, jobs.max(1))?;
    export_results(&evaluation.records, out)?;
    std::fs::write(out.join("config.toml"), config.to_toml_string())
        .with_context(|| format!("writing {}", out.join("config.toml").display()))?;
    say!("runs: {}", evaluation.records.len());
    say!("failed: {}", evaluation.failures.len());
    for (run, reason) in &evaluation.failures {
        say!("run {run} failed: {reason}");
    }
    say!("results: {}", out.display());
    Ok(())
}

fn cmd_diagnose(
    args: &ModelArgs,
    sampler_args: &SamplerArgs,
    draws: Option<usize>,
    seed: u64,
) -> Result<()> {
    let spec = require_fiber(args)?;
    let config = sampler_config(sampler_args)?;
    let enumeration = cached_enumeration(&spec)?;
    let elements = enumeration.require_complete()?;
    let size = elements.len();
    let draws = draws.unwrap_or(100 * size);
    let mut sampler = FiberSampler::new(&spec, &config)?;
    let batch = sampler.sample(draws, seed)?;
    let tv = tv_distance_to_uniform(&batch, &spec)?;
    say!("sampler: {}", config.summary());
    say!("fiber_size: {size}");
    say!("draws: {}", batch.tables.len());
    say!("invalid: {}", batch.invalid);
    say!("tv_to_uniform: {tv}");
    if config.kind == SamplerKind::InternalBiased {
        // exact distance of the source law itself, for comparison
        let w = biased_weights(&spec, elements, config.bias_strength);
        let uniform = 1.0 / size as f64;
        let exact = 0.5 * w.iter().map(|p| (p - uniform).abs()).sum::<f64>();
        say!("source_tv_to_uniform: {exact}");
    }
    say!("seed: {seed}");
    Ok(())
}
