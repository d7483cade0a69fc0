//! Sources of fiber samples: an external SAT sampler run as a subprocess,
//! an exactly uniform sampler over the enumerated fiber, and an
//! exponentially tilted one for bias experiments.

use std::collections::{HashMap, VecDeque};
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock, RwLock};
use std::time::{Duration, Instant};

use log::warn;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cnf::{decode_assignment, encode_fiber, parse_solutions, write_dimacs, BitLayout};
use crate::enumerate::{enumerate_fiber, FiberEnumeration};
use crate::error::{Error, Result};
use crate::model::{FiberSpec, Table};

/// Environment variable carrying the seed when the command template has no
/// `{seed}` placeholder.
pub const SEED_ENV: &str = "FIBERSAT_SEED";

const EXTERNAL_BATCH: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    External,
    #[default]
    InternalUniform,
    InternalBiased,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub kind: SamplerKind,
    /// Shell command with `{cnf}`, `{count}` and `{seed}` placeholders.
    pub command: Option<String>,
    pub timeout_secs: f64,
    /// Nominal per-solution tolerance of the external tool. Metadata only.
    pub epsilon: f64,
    /// Nominal L1 distance budget of the external tool. Metadata only.
    pub eta: f64,
    pub bias_strength: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            kind: SamplerKind::InternalUniform,
            command: None,
            timeout_secs: 600.0,
            epsilon: 0.0,
            eta: 0.0,
            bias_strength: 0.0,
        }
    }
}

impl SamplerConfig {
    pub fn internal_uniform() -> Self {
        Self::default()
    }

    pub fn internal_biased(strength: f64) -> Self {
        SamplerConfig {
            kind: SamplerKind::InternalBiased,
            bias_strength: strength,
            ..Self::default()
        }
    }

    pub fn external(command: impl Into<String>) -> Self {
        SamplerConfig {
            kind: SamplerKind::External,
            command: Some(command.into()),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 || self.eta < 0.0 {
            return Err(Error::Config("epsilon and eta must be nonnegative".into()));
        }
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Config("timeout must be positive".into()));
        }
        if self.kind == SamplerKind::External && self.command.is_none() {
            return Err(Error::Config(
                "external sampler needs a command template".into(),
            ));
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        match self.kind {
            SamplerKind::External => {
                format!("external({})", self.command.as_deref().unwrap_or_default())
            }
            SamplerKind::InternalUniform => "internal-uniform".into(),
            SamplerKind::InternalBiased => format!("internal-biased({})", self.bias_strength),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub tables: Vec<Table>,
    pub source: String,
    pub seed: u64,
    /// Solutions discarded because they were malformed or outside the fiber.
    pub invalid: usize,
}

type Cache = RwLock<HashMap<FiberSpec, Arc<FiberEnumeration>>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// The complete enumeration of `spec`, computed once per process.
pub fn cached_enumeration(spec: &FiberSpec) -> Result<Arc<FiberEnumeration>> {
    if let Some(e) = cache().read().expect("cache poisoned").get(spec) {
        return Ok(Arc::clone(e));
    }
    let e = enumerate_fiber(spec, None)?;
    e.require_complete()?;
    let e = Arc::new(e);
    let mut guard = cache().write().expect("cache poisoned");
    Ok(Arc::clone(guard.entry(spec.clone()).or_insert(e)))
}

/// Index of the first cell that is not a structural zero.
fn tilt_cell(spec: &FiberSpec) -> Option<usize> {
    (0..spec.num_cells()).find(|&j| !spec.is_structural_zero(j))
}

/// Normalized tilted weights `exp(strength * u_1)` over the enumeration.
pub fn biased_weights(spec: &FiberSpec, elements: &[Table], strength: f64) -> Vec<f64> {
    let Some(cell) = tilt_cell(spec) else {
        return vec![1.0 / elements.len() as f64; elements.len()];
    };
    let scores: Vec<f64> = elements
        .iter()
        .map(|t| strength * t.cells()[cell] as f64)
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// A fiber sampler bound to one spec, usable as a proposal source.
pub struct FiberSampler {
    spec: FiberSpec,
    config: SamplerConfig,
    inner: Inner,
}

enum Inner {
    Enumerated {
        elements: Arc<FiberEnumeration>,
        weights: Option<WeightedIndex<f64>>,
    },
    External {
        workdir: ScratchDir,
        cnf: PathBuf,
        layout: BitLayout,
        buffer: VecDeque<Table>,
    },
}

impl FiberSampler {
    pub fn new(spec: &FiberSpec, config: &SamplerConfig) -> Result<Self> {
        config.validate()?;
        let inner = match config.kind {
            SamplerKind::InternalUniform | SamplerKind::InternalBiased => {
                let elements = cached_enumeration(spec)?;
                if elements.is_empty() {
                    return Err(Error::EmptyFiber);
                }
                let weights = (config.kind == SamplerKind::InternalBiased).then(|| {
                    let w = biased_weights(spec, &elements.elements, config.bias_strength);
                    WeightedIndex::new(w).expect("finite positive weights")
                });
                Inner::Enumerated { elements, weights }
            }
            SamplerKind::External => {
                let workdir = ScratchDir::new()?;
                let (formula, layout) = encode_fiber(spec)?;
                let cnf = workdir.path().join("fiber.cnf");
                let file = std::fs::File::create(&cnf).map_err(|e| Error::io(&cnf, e))?;
                write_dimacs(&formula, &layout, std::io::BufWriter::new(file))?;
                Inner::External {
                    workdir,
                    cnf,
                    layout,
                    buffer: VecDeque::new(),
                }
            }
        };
        Ok(FiberSampler {
            spec: spec.clone(),
            config: config.clone(),
            inner,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    /// One fiber element. External samplers are called in batches, seeded
    /// from `rng`.
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Table> {
        match &mut self.inner {
            Inner::Enumerated { elements, weights } => {
                let i = match weights {
                    Some(w) => w.sample(rng),
                    None => rng.random_range(0..elements.len()),
                };
                Ok(elements.elements[i].clone())
            }
            Inner::External {
                cnf,
                layout,
                buffer,
                ..
            } => {
                if buffer.is_empty() {
                    let seed = rng.random::<u32>() as u64;
                    let batch = sample_external(
                        &self.spec,
                        cnf,
                        layout,
                        &self.config,
                        EXTERNAL_BATCH,
                        seed,
                    )?;
                    buffer.extend(batch.tables);
                }
                Ok(buffer.pop_front().expect("non-empty batch"))
            }
        }
    }

    pub fn sample(&mut self, count: usize, seed: u64) -> Result<SampleBatch> {
        if let Inner::External { cnf, layout, .. } = &self.inner {
            return sample_external(&self.spec, cnf, layout, &self.config, count, seed);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = (0..count)
            .map(|_| self.draw(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleBatch {
            tables,
            source: self.config.summary(),
            seed,
            invalid: 0,
        })
    }

    #[doc(hidden)]
    pub fn workdir(&self) -> Option<&Path> {
        match &self.inner {
            Inner::External { workdir, .. } => Some(workdir.path()),
            _ => None,
        }
    }
}

pub fn sample_internal_uniform(spec: &FiberSpec, count: usize, seed: u64) -> Result<SampleBatch> {
    FiberSampler::new(spec, &SamplerConfig::internal_uniform())?.sample(count, seed)
}

pub fn sample_internal_biased(
    spec: &FiberSpec,
    count: usize,
    seed: u64,
    bias_strength: f64,
) -> Result<SampleBatch> {
    FiberSampler::new(spec, &SamplerConfig::internal_biased(bias_strength))?.sample(count, seed)
}

fn expand_template(template: &str, cnf: &Path, count: usize, seed: u64) -> String {
    template
        .replace("{cnf}", &cnf.display().to_string())
        .replace("{count}", &count.to_string())
        .replace("{seed}", &seed.to_string())
}

/// Runs the configured command on an already written CNF and validates
/// every returned solution against the fiber.
pub fn sample_external(
    spec: &FiberSpec,
    cnf_path: &Path,
    layout: &BitLayout,
    config: &SamplerConfig,
    count: usize,
    seed: u64,
) -> Result<SampleBatch> {
    let template = config
        .command
        .as_deref()
        .ok_or_else(|| Error::Config("external sampler needs a command template".into()))?;
    let command = expand_template(template, cnf_path, count, seed);
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(&command)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    if !template.contains("{seed}") {
        cmd.env(SEED_ENV, seed.to_string());
    }
    if let Some(dir) = cnf_path.parent() {
        cmd.current_dir(dir);
    }
    let output = run_with_timeout(cmd, Duration::from_secs_f64(config.timeout_secs))?;

    let unsat = output
        .stdout
        .lines()
        .any(|l| l.trim_start().starts_with("s UNSAT"));
    if !unsat && output.status != 0 {
        return Err(Error::SamplerExit {
            status: output.status,
            stderr: output.stderr,
        });
    }
    let (assignments, mut invalid) = parse_solutions(&output.stdout);
    let total = assignments.len() + invalid;
    let mut tables = Vec::with_capacity(assignments.len().min(count));
    for a in &assignments {
        match decode_assignment(layout, a) {
            Ok(t) if spec.contains(&t) => tables.push(t),
            _ => invalid += 1,
        }
    }
    if tables.is_empty() {
        return Err(Error::NoValidSamples { invalid });
    }
    if invalid * 2 > total {
        return Err(Error::TooManyInvalid { invalid, total });
    }
    if invalid > 0 {
        warn!("external sampler: discarded {invalid} of {total} solutions");
    }
    tables.truncate(count);
    Ok(SampleBatch {
        tables,
        source: config.summary(),
        seed,
        invalid,
    })
}

struct ProcessOutput {
    status: i32,
    stdout: String,
    stderr: String,
}

fn run_with_timeout(mut cmd: Command, timeout: Duration) -> Result<ProcessOutput> {
    let mut child = cmd.spawn()?;
    let mut out = child.stdout.take().expect("piped");
    let mut err = child.stderr.take().expect("piped");
    let out_reader = std::thread::spawn(move || {
        let mut s = String::new();
        out.read_to_string(&mut s).map(|_| s)
    });
    let err_reader = std::thread::spawn(move || {
        let mut s = String::new();
        err.read_to_string(&mut s).map(|_| s)
    });
    let start = Instant::now();
    let status = loop {
        if let Some(status) = child.try_wait()? {
            break status;
        }
        if start.elapsed() > timeout {
            let _ = child.kill();
            let _ = child.wait();
            return Err(Error::SamplerTimeout {
                secs: timeout.as_secs_f64(),
            });
        }
        std::thread::sleep(Duration::from_millis(5));
    };
    let stdout = out_reader.join().expect("reader thread")?;
    let stderr = err_reader.join().expect("reader thread")?;
    Ok(ProcessOutput {
        status: status.code().unwrap_or(-1),
        stdout,
        stderr,
    })
}

/// `1/2 * sum_u |p_hat(u) - 1/|F||` over the enumerated fiber.
pub fn tv_distance_to_uniform(batch: &SampleBatch, spec: &FiberSpec) -> Result<f64> {
    let elements = cached_enumeration(spec)?;
    if elements.is_empty() {
        return Err(Error::EmptyFiber);
    }
    let uniform = vec![1.0 / elements.len() as f64; elements.len()];
    tv_distance(&batch.tables, &elements.elements, &uniform)
}

/// Total variation distance between the empirical law of `samples` and
/// `target` over `elements`.
pub fn tv_distance(samples: &[Table], elements: &[Table], target: &[f64]) -> Result<f64> {
    let index: HashMap<&Table, usize> = elements.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let mut counts = vec![0usize; elements.len()];
    for t in samples {
        let &i = index.get(t).ok_or(Error::InvalidProposal)?;
        counts[i] += 1;
    }
    Ok(tv_from_counts(&counts, target))
}

pub fn tv_from_counts(counts: &[usize], target: &[f64]) -> f64 {
    let total: usize = counts.iter().sum();
    let n = total.max(1) as f64;
    0.5 * counts
        .iter()
        .zip(target)
        .map(|(&c, &p)| (c as f64 / n - p).abs())
        .sum::<f64>()
}

/// Temporary directory removed on drop.
struct ScratchDir(PathBuf);

impl ScratchDir {
    fn new() -> Result<Self> {
        static COUNTER: AtomicUsize = AtomicUsize::new(0);
        let n = COUNTER.fetch_add(1, Ordering::Relaxed);
        let path = std::env::temp_dir().join(format!("fibersat-{}-{n}", std::process::id()));
        std::fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        Ok(ScratchDir(path))
    }

    fn path(&self) -> &Path {
        &self.0
    }
}

impl Drop for ScratchDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}
