//! Library side of the command-line tools: dataset generation, estimation,
//! and the Monte Carlo benchmark sweep.
//!
//! # Result table
//!
//! `results.csv` has a header row and one row per `(method, seed, n/p, lambda)`:
//!
//! | column | meaning |
//! |---|---|
//! | `method` | `newgle`, `pgd` or `mle` |
//! | `model` | `planar` or `ba<m>` |
//! | `p`, `n`, `np_ratio`, `seed`, `lambda` | instance and penalty |
//! | `re`, `fscore` | recovery metrics (empty on failure) |
//! | `seconds` | solver wall-clock, I/O excluded |
//! | `iterations` | outer iterations |
//! | `termination` | `converged`, `max-iter`, `numerical` or `error` |
//! | `error` | failure message, empty on success |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::laplacian::{apply_p, weights_of};
use crate::metrics::{f_score, relative_error, DEFAULT_SUPPORT_THRESHOLD};
use crate::newgle::{solve, InitMode, SolverConfig};
use crate::objective::{Mcp, SampleCovariance};
use crate::pgd::{pgd_solve, PgdConfig};
use crate::report::{SolveReport, Termination, Timings};
use crate::synth::{empirical_cov, gen_graph, sample_lgmrf, GraphModel, GraphSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Newgle,
    Pgd,
    /// Unpenalized maximum likelihood: NewGLE with `lambda = 0`.
    Mle,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Newgle => "newgle",
            Method::Pgd => "pgd",
            Method::Mle => "mle",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newgle" => Ok(Method::Newgle),
            "pgd" => Ok(Method::Pgd),
            "mle" => Ok(Method::Mle),
            other => Err(Error::InvalidArgument(format!(
                "unknown method `{other}` (expected newgle, pgd or mle)"
            ))),
        }
    }
}

/// Runs one estimator. `Mle` ignores `cfg.lambda`.
pub fn run_method(
    method: Method,
    cov: &SampleCovariance,
    cfg: &SolverConfig,
    pgd: &PgdConfig,
) -> Result<(Vec<f64>, SolveReport)> {
    match method {
        Method::Newgle => solve(cov, cfg),
        Method::Mle => solve(
            cov,
            &SolverConfig {
                lambda: 0.0,
                ..cfg.clone()
            },
        ),
        Method::Pgd => {
            let pgd = PgdConfig {
                tol: cfg.tol,
                ..pgd.clone()
            };
            pgd_solve(cov, Mcp::new(cfg.lambda, cfg.gamma)?, &pgd)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    #[default]
    Csv,
    Bin,
}

#[derive(Debug, Clone)]
pub struct GenerateArgs {
    pub graph: GraphSpec,
    /// Samples per node; `n = max(1, round(np_ratio * p))`.
    pub np_ratio: f64,
    pub sampler_seed: u64,
    pub format: SampleFormat,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub graph: GraphSpec,
    pub n: usize,
    pub np_ratio: f64,
    pub sampler_seed: u64,
    pub edge_count: usize,
    pub graph_attempts: usize,
    pub files: GeneratedFiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedFiles {
    pub laplacian: PathBuf,
    pub samples: PathBuf,
    pub covariance: PathBuf,
    pub provenance: PathBuf,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn sample_count(np_ratio: f64, p: usize) -> Result<usize> {
    if !(np_ratio > 0.0 && np_ratio.is_finite()) {
        return Err(Error::InvalidArgument(format!("n/p ratio must be > 0, got {np_ratio}")));
    }
    Ok(((np_ratio * p as f64).round() as usize).max(1))
}

/// Writes `L_true.mtx`, `samples.{csv,bin}`, `S.mtx` and `provenance.json`.
pub fn cmd_generate(args: &GenerateArgs) -> Result<GeneratedFiles> {
    let n = sample_count(args.np_ratio, args.graph.p)?;
    let graph = gen_graph(&args.graph)?;
    let l = graph.laplacian();
    let x = sample_lgmrf(&l, n, args.sampler_seed)?;
    let cov = empirical_cov(&x)?;

    ensure_dir(&args.out_dir)?;
    // Paths in the provenance are relative to the output directory.
    let names = GeneratedFiles {
        laplacian: "L_true.mtx".into(),
        samples: match args.format {
            SampleFormat::Csv => "samples.csv".into(),
            SampleFormat::Bin => "samples.bin".into(),
        },
        covariance: "S.mtx".into(),
        provenance: "provenance.json".into(),
    };
    let at = |p: &Path| args.out_dir.join(p);
    io::write_mm_coordinate_symmetric(&at(&names.laplacian), &l)?;
    match args.format {
        SampleFormat::Csv => io::write_samples_csv(&at(&names.samples), &x)?,
        SampleFormat::Bin => io::write_samples_bin(&at(&names.samples), &x)?,
    }
    io::write_mm_array_symmetric(&at(&names.covariance), cov.matrix())?;
    let prov = Provenance {
        graph: args.graph.clone(),
        n,
        np_ratio: args.np_ratio,
        sampler_seed: args.sampler_seed,
        edge_count: graph.edge_count,
        graph_attempts: graph.attempts,
        files: names.clone(),
    };
    io::write_json(&at(&names.provenance), &prov)?;
    Ok(GeneratedFiles {
        laplacian: at(&names.laplacian),
        samples: at(&names.samples),
        covariance: at(&names.covariance),
        provenance: at(&names.provenance),
    })
}

#[derive(Debug, Clone)]
pub struct EstimateArgs {
    /// Matrix Market covariance, or a samples file (CSV or binary).
    pub input: PathBuf,
    pub method: Method,
    pub solver: SolverConfig,
    pub pgd: PgdConfig,
    /// Optional starting Laplacian (Matrix Market).
    pub init_laplacian: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOutput {
    pub laplacian: PathBuf,
    pub report: PathBuf,
    pub timings: PathBuf,
    pub termination: Termination,
}

/// The report as written to `report.json`: everything but the timings, so
/// the file is reproducible byte for byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub method: Method,
    pub lambda: f64,
    pub gamma: f64,
    pub p: usize,
    pub outer_iterations: usize,
    pub warm_start_iterations: usize,
    pub objective: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub free_set_sizes: Vec<usize>,
    pub inner_iterations: Vec<usize>,
    pub relative_changes: Vec<f64>,
    pub kkt_residual: f64,
    pub termination: Termination,
}

fn is_matrix_market(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut head = [0u8; 14];
    let got = std::fs::File::open(path)
        .and_then(|mut f| f.read(&mut head))
        .map_err(|e| Error::io(path, e))?;
    Ok(got == head.len() && head.eq_ignore_ascii_case(b"%%MatrixMarket"))
}

/// Loads a covariance from either a Matrix Market matrix or a samples file.
pub fn load_covariance(path: &Path) -> Result<SampleCovariance> {
    if is_matrix_market(path)? {
        let s = io::read_matrix_market(path)?;
        SampleCovariance::new(s, 0)
    } else {
        empirical_cov(&io::read_samples(path)?)
    }
}

/// Writes `L_hat.mtx`, `report.json` and `timings.json`.
pub fn cmd_estimate(args: &EstimateArgs) -> Result<EstimateOutput> {
    let cov = load_covariance(&args.input)?;
    let mut solver = args.solver.clone();
    if args.method == Method::Mle {
        solver.lambda = 0.0;
    }
    if let Some(init) = &args.init_laplacian {
        let l0 = io::read_matrix_market(init)?;
        if l0.nrows() != cov.nodes() {
            return Err(Error::Dimension(format!(
                "initial Laplacian is {}x{}, covariance is {}x{}",
                l0.nrows(),
                l0.ncols(),
                cov.nodes(),
                cov.nodes()
            )));
        }
        solver.init = InitMode::Given(weights_of(&l0)?);
    }
    let (w, report) = match (args.method, &solver.init) {
        (Method::Pgd, InitMode::Given(w0)) => crate::pgd::pgd_solve_from(
            &cov,
            solver.mcp()?,
            &PgdConfig {
                tol: solver.tol,
                ..args.pgd.clone()
            },
            w0.clone(),
        )?,
        _ => run_method(args.method, &cov, &solver, &args.pgd)?,
    };
    let l_hat = apply_p(&w, cov.nodes())?;

    ensure_dir(&args.out_dir)?;
    let out = EstimateOutput {
        laplacian: args.out_dir.join("L_hat.mtx"),
        report: args.out_dir.join("report.json"),
        timings: args.out_dir.join("timings.json"),
        termination: report.termination,
    };
    io::write_mm_coordinate_symmetric(&out.laplacian, &l_hat)?;
    let file = ReportFile {
        // `mle` is an alias, so its outputs match `newgle --lambda 0` exactly.
        method: if args.method == Method::Pgd { Method::Pgd } else { Method::Newgle },
        lambda: solver.lambda,
        gamma: solver.gamma,
        p: cov.nodes(),
        outer_iterations: report.outer_iterations,
        warm_start_iterations: report.warm_start_iterations,
        objective: report.objective.clone(),
        step_sizes: report.step_sizes.clone(),
        free_set_sizes: report.free_set_sizes.clone(),
        inner_iterations: report.inner_iterations.clone(),
        relative_changes: report.relative_changes.clone(),
        kkt_residual: report.kkt_residual,
        termination: report.termination,
    };
    io::write_json(&out.report, &file)?;
    io::write_json(&out.timings, &report.timings)?;
    Ok(out)
}

/// Graph family of a benchmark; the per-realization seed comes from the seed list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchGraph {
    pub model: GraphModel,
    pub p: usize,
    #[serde(default = "default_lo")]
    pub lo: f64,
    #[serde(default = "default_hi")]
    pub hi: f64,
}

fn default_lo() -> f64 {
    0.5
}

fn default_hi() -> f64 {
    2.0
}

/// Benchmark description, read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub graph: BenchGraph,
    pub np_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Penalty grid per method; `mle` always runs at `lambda = 0`.
    #[serde(default)]
    pub lambda_grid: BTreeMap<Method, Vec<f64>>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub pgd: PgdConfig,
    #[serde(default = "default_threshold")]
    pub support_threshold: f64,
    /// Worker threads; `None` uses all cores, `Some(1)` runs serially.
    #[serde(default)]
    pub threads: Option<usize>,
}

fn default_threshold() -> f64 {
    DEFAULT_SUPPORT_THRESHOLD
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.np_grid.is_empty() || self.seeds.is_empty() || self.methods.is_empty() {
            return fail("n/p grid, seed list and method list must be nonempty");
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return fail("seeds must be distinct");
        }
        for r in &self.np_grid {
            sample_count(*r, self.graph.p)?;
        }
        for m in &self.methods {
            if *m != Method::Mle && self.lambdas(*m).is_empty() {
                return Err(Error::InvalidArgument(format!("no lambda grid for method {m}")));
            }
        }
        if self.lambda_grid.values().flatten().any(|&l| !(l >= 0.0)) {
            return fail("lambda values must be >= 0");
        }
        self.solver.validate()?;
        self.pgd.validate()
    }

    pub fn lambdas(&self, method: Method) -> Vec<f64> {
        match method {
            Method::Mle => vec![0.0],
            m => self.lambda_grid.get(&m).cloned().unwrap_or_default(),
        }
    }

    fn graph_spec(&self, seed: u64) -> GraphSpec {
        GraphSpec {
            model: self.graph.model,
            p: self.graph.p,
            lo: self.graph.lo,
            hi: self.graph.hi,
            seed,
        }
    }
}

/// One line of `results.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub model: String,
    pub p: usize,
    pub n: usize,
    pub np_ratio: f64,
    pub seed: u64,
    pub lambda: f64,
    pub re: Option<f64>,
    pub fscore: Option<f64>,
    pub seconds: f64,
    pub iterations: usize,
    pub termination: String,
    pub error: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanStderr {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Some(MeanStderr { mean, stderr })
    }
}

/// Aggregate over seeds for one `(method, n/p, lambda)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub method: Method,
    pub np_ratio: f64,
    pub lambda: f64,
    pub runs: usize,
    pub failures: usize,
    pub re: Option<MeanStderr>,
    pub fscore: Option<MeanStderr>,
    pub seconds: Option<MeanStderr>,
    pub iterations: Option<MeanStderr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunedMetric {
    pub lambda: f64,
    pub mean: f64,
    pub stderr: f64,
}

/// Best grid value per metric for one `(method, n/p)`; each metric is tuned
/// over the lambda grid independently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestPoint {
    pub method: Method,
    pub np_ratio: f64,
    pub best_re: Option<TunedMetric>,
    pub best_fscore: Option<TunedMetric>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub note: String,
    pub best: Vec<BestPoint>,
    pub surface: Vec<SurfacePoint>,
}

impl Summary {
    pub fn best_for(&self, method: Method) -> Vec<&BestPoint> {
        self.best.iter().filter(|b| b.method == method).collect()
    }
}

pub fn summarize(rows: &[ResultRow], spec: &ExperimentSpec) -> Summary {
    let mut surface = Vec::new();
    let mut best = Vec::new();
    for &method in &spec.methods {
        for &ratio in &spec.np_grid {
            let mut points = Vec::new();
            for lambda in spec.lambdas(method) {
                let sel: Vec<&ResultRow> = rows
                    .iter()
                    .filter(|r| r.method == method && r.np_ratio == ratio && r.lambda == lambda)
                    .collect();
                let ok: Vec<&&ResultRow> = sel.iter().filter(|r| r.error.is_empty()).collect();
                let collect = |f: &dyn Fn(&ResultRow) -> Option<f64>| -> Vec<f64> {
                    ok.iter().filter_map(|r| f(r)).collect()
                };
                points.push(SurfacePoint {
                    method,
                    np_ratio: ratio,
                    lambda,
                    runs: sel.len(),
                    failures: sel.len() - ok.len(),
                    re: MeanStderr::of(&collect(&|r| r.re)),
                    fscore: MeanStderr::of(&collect(&|r| r.fscore)),
                    seconds: MeanStderr::of(&collect(&|r| Some(r.seconds))),
                    iterations: MeanStderr::of(&collect(&|r| Some(r.iterations as f64))),
                });
            }
            let pick = |metric: fn(&SurfacePoint) -> Option<MeanStderr>, lower: bool| {
                points
                    .iter()
                    .filter_map(|pt| metric(pt).map(|m| (pt.lambda, m)))
                    .reduce(|a, b| {
                        let better = if lower { b.1.mean < a.1.mean } else { b.1.mean > a.1.mean };
                        if better {
                            b
                        } else {
                            a
                        }
                    })
                    .map(|(lambda, m)| TunedMetric {
                        lambda,
                        mean: m.mean,
                        stderr: m.stderr,
                    })
            };
            best.push(BestPoint {
                method,
                np_ratio: ratio,
                best_re: pick(|pt| pt.re, true),
                best_fscore: pick(|pt| pt.fscore, false),
            });
            surface.extend(points);
        }
    }
    Summary {
        note: "lambda tuned on the configured grid independently per metric, method and n/p".into(),
        best,
        surface,
    }
}

struct Task {
    seed_idx: usize,
    ratio: f64,
    n: usize,
    method: Method,
    lambda: f64,
}

/// Runs the sweep without touching the file system.
pub fn run_benchmark(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let p = spec.graph.p;
    let n_max = spec
        .np_grid
        .iter()
        .map(|&r| sample_count(r, p))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .expect("grid is nonempty");

    let work = || -> Result<Vec<ResultRow>> {
        // One graph and one sample pool per seed; smaller n use leading rows.
        let data: Vec<(DMatrix<f64>, DMatrix<f64>)> = spec
            .seeds
            .par_iter()
            .map(|&seed| {
                let g = gen_graph(&spec.graph_spec(seed))?;
                let l = g.laplacian();
                let x = sample_lgmrf(&l, n_max, seed)?;
                Ok((l, x))
            })
            .collect::<Result<_>>()?;

        let mut tasks = Vec::new();
        for seed_idx in 0..spec.seeds.len() {
            for &ratio in &spec.np_grid {
                let n = sample_count(ratio, p)?;
                for &method in &spec.methods {
                    for lambda in spec.lambdas(method) {
                        tasks.push(Task {
                            seed_idx,
                            ratio,
                            n,
                            method,
                            lambda,
                        });
                    }
                }
            }
        }
        Ok(tasks
            .par_iter()
            .map(|t| run_task(spec, t, &data[t.seed_idx]))
            .collect())
    };

    match spec.threads {
        Some(threads) => rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

fn run_task(spec: &ExperimentSpec, t: &Task, data: &(DMatrix<f64>, DMatrix<f64>)) -> ResultRow {
    let (l_true, pool) = data;
    let mut row = ResultRow {
        method: t.method,
        model: spec.graph.model.to_string(),
        p: spec.graph.p,
        n: t.n,
        np_ratio: t.ratio,
        seed: spec.seeds[t.seed_idx],
        lambda: t.lambda,
        re: None,
        fscore: None,
        seconds: 0.0,
        iterations: 0,
        termination: "error".into(),
        error: String::new(),
    };
    let outcome = (|| -> Result<()> {
        let cov = empirical_cov(&pool.rows(0, t.n).into_owned())?;
        let cfg = SolverConfig {
            lambda: t.lambda,
            ..spec.solver.clone()
        };
        let started = Instant::now();
        let (w, report) = run_method(t.method, &cov, &cfg, &spec.pgd)?;
        row.seconds = started.elapsed().as_secs_f64();
        let l_hat = apply_p(&w, spec.graph.p)?;
        row.re = Some(relative_error(&l_hat, l_true)?);
        row.fscore = Some(f_score(&l_hat, l_true, spec.support_threshold)?);
        row.iterations = report.outer_iterations;
        row.termination = report.termination.to_string();
        Ok(())
    })();
    if let Err(e) = outcome {
        row.error = e.to_string();
    }
    row
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut wtr = csv::Writer::from_writer(file);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutput {
    pub results: PathBuf,
    pub summary: PathBuf,
    pub rows: Vec<ResultRow>,
    pub summary_data: Summary,
}

/// Runs the sweep and writes `results.csv` and `summary.json` to the output directory.
pub fn cmd_benchmark(spec: &ExperimentSpec) -> Result<BenchmarkOutput> {
    let rows = run_benchmark(spec)?;
    let summary = summarize(&rows, spec);
    ensure_dir(&spec.output_dir)?;
    let results = spec.output_dir.join("results.csv");
    let summary_path = spec.output_dir.join("summary.json");
    write_results_csv(&results, &rows)?;
    io::write_json(&summary_path, &summary)?;
    Ok(BenchmarkOutput {
        results,
        summary: summary_path,
        rows,
        summary_data: summary,
    })
}

/// Timings are kept out of `report.json`; this reads them back.
pub fn read_timings(path: &Path) -> Result<Timings> {
    io::read_json(path)
}
