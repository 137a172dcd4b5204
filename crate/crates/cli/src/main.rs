use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lapnewton::harness::{
    cmd_benchmark, cmd_estimate, cmd_generate, EstimateArgs, ExperimentSpec, GenerateArgs, Method,
    SampleFormat,
};
use lapnewton::io::read_json;
use lapnewton::laplacian::FreeSetRule;
use lapnewton::newgle::{EpsPolicy, InitMode, SolverConfig};
use lapnewton::pgd::PgdConfig;
use lapnewton::report::Termination;
use lapnewton::synth::{GraphModel, GraphSpec};
use lapnewton::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser, Debug)]
#[command(name = "lapnewton", version, about = "Sparse graph Laplacian estimation")]
struct Cli {
    /// Worker threads for benchmark sweeps (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a random graph and LGMRF samples.
    Generate(GenerateCmd),
    /// Estimate a Laplacian from a covariance or samples file.
    Estimate(EstimateCmd),
    /// Run a Monte Carlo sweep described by a JSON spec.
    Benchmark(BenchmarkCmd),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Ba,
    Planar,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Csv,
    Bin,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Newgle,
    Pgd,
    Mle,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RuleArg {
    AsWritten,
    Absolute,
    Augmented,
}

#[derive(Args, Debug)]
struct GenerateCmd {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    nodes: usize,
    /// Attachments per new node for `--model ba`.
    #[arg(long, default_value_t = 2)]
    ba_m: usize,
    #[arg(long)]
    np_ratio: f64,
    #[arg(long, env = "LAPNEWTON_SEED", default_value_t = 0)]
    seed: u64,
    /// Seed of the sampler; defaults to `--seed`.
    #[arg(long)]
    sampler_seed: Option<u64>,
    #[arg(long, default_value_t = 0.5)]
    weight_lo: f64,
    #[arg(long, default_value_t = 2.0)]
    weight_hi: f64,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateCmd {
    /// Matrix Market covariance or a samples file (CSV or binary).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "newgle")]
    method: MethodArg,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.01)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// `zero`, `uniform:<c>` or `concave-region`.
    #[arg(long, default_value = "zero", value_parser = parse_eps)]
    epsilon_mode: EpsPolicy,
    #[arg(long, value_enum, default_value = "augmented")]
    free_set_rule: RuleArg,
    #[arg(long, default_value_t = 25)]
    inner_max: usize,
    #[arg(long, default_value_t = 200)]
    max_outer: usize,
    /// Iteration cap for `--method pgd`.
    #[arg(long, default_value_t = 5000)]
    pgd_max_iter: usize,
    /// `uniform`, `warm-pgd:<k>` or `warm-mle:<k>`.
    #[arg(long, default_value = "warm-mle:5", value_parser = parse_init)]
    init: InitMode,
    /// Starting Laplacian (Matrix Market); overrides `--init`.
    #[arg(long)]
    init_laplacian: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchmarkCmd {
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; overrides the one in the spec.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_eps(s: &str) -> Result<EpsPolicy, String> {
    match s {
        "zero" => Ok(EpsPolicy::Zero),
        "concave-region" => Ok(EpsPolicy::ConcaveRegion),
        _ => match s.strip_prefix("uniform:").map(str::parse::<f64>) {
            Some(Ok(c)) if c >= 0.0 && c.is_finite() => Ok(EpsPolicy::Uniform(c)),
            _ => Err(format!("expected zero, uniform:<c >= 0> or concave-region, got `{s}`")),
        },
    }
}

fn parse_init(s: &str) -> Result<InitMode, String> {
    if s == "uniform" {
        return Ok(InitMode::Uniform);
    }
    let parse_k = |rest: &str| rest.parse::<usize>().map_err(|e| format!("bad count in `{s}`: {e}"));
    if let Some(rest) = s.strip_prefix("warm-pgd:") {
        return parse_k(rest).map(InitMode::WarmPgd);
    }
    if let Some(rest) = s.strip_prefix("warm-mle:") {
        return parse_k(rest).map(InitMode::WarmMle);
    }
    Err(format!("expected uniform, warm-pgd:<k> or warm-mle:<k>, got `{s}`"))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_io() => EXIT_IO,
        Error::InvalidArgument(_) | Error::Dimension(_) => EXIT_USAGE,
        _ => EXIT_NUMERICAL,
    }
}

fn generate(c: GenerateCmd) -> Result<(), Error> {
    let model = match c.model {
        ModelArg::Ba => GraphModel::BarabasiAlbert { m: c.ba_m },
        ModelArg::Planar => GraphModel::PlanarDelaunay,
    };
    let args = GenerateArgs {
        graph: GraphSpec {
            lo: c.weight_lo,
            hi: c.weight_hi,
            ..GraphSpec::new(model, c.nodes, c.seed)
        },
        np_ratio: c.np_ratio,
        sampler_seed: c.sampler_seed.unwrap_or(c.seed),
        format: match c.format {
            FormatArg::Csv => SampleFormat::Csv,
            FormatArg::Bin => SampleFormat::Bin,
        },
        out_dir: c.out,
    };
    let files = cmd_generate(&args)?;
    for p in [&files.laplacian, &files.samples, &files.covariance, &files.provenance] {
        println!("{}", p.display());
    }
    Ok(())
}

fn estimate(c: EstimateCmd) -> Result<bool, Error> {
    let mut solver = SolverConfig {
        lambda: c.lambda,
        gamma: c.gamma,
        eps: c.epsilon_mode,
        tol: c.tol,
        max_outer: c.max_outer,
        free_set_rule: match c.free_set_rule {
            RuleArg::AsWritten => FreeSetRule::AsWritten,
            RuleArg::Absolute => FreeSetRule::Absolute,
            RuleArg::Augmented => FreeSetRule::Augmented,
        },
        init: c.init,
        ..SolverConfig::default()
    };
    solver.inner.max_iter = c.inner_max;
    let args = EstimateArgs {
        input: c.input,
        method: match c.method {
            MethodArg::Newgle => Method::Newgle,
            MethodArg::Pgd => Method::Pgd,
            MethodArg::Mle => Method::Mle,
        },
        solver,
        pgd: PgdConfig {
            max_iter: c.pgd_max_iter,
            ..PgdConfig::default()
        },
        init_laplacian: c.init_laplacian,
        out_dir: c.out,
    };
    let out = cmd_estimate(&args)?;
    for p in [&out.laplacian, &out.report, &out.timings] {
        println!("{}", p.display());
    }
    if out.termination == Termination::Numerical {
        log::error!("solver stopped on a numerical failure; outputs hold the last iterate");
        return Ok(false);
    }
    Ok(true)
}

fn benchmark(c: BenchmarkCmd, threads: Option<usize>) -> Result<(), Error> {
    let mut spec: ExperimentSpec = read_json(&c.spec)?;
    if let Some(out) = c.out {
        spec.output_dir = out;
    }
    if threads.is_some() {
        spec.threads = threads;
    }
    let out = cmd_benchmark(&spec)?;
    let failed = out.rows.iter().filter(|r| !r.error.is_empty()).count();
    if failed > 0 {
        log::warn!("{failed} of {} runs failed; see the error column", out.rows.len());
    }
    println!("{}", out.results.display());
    println!("{}", out.summary.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(EXIT_USAGE);
    }
    let result = match cli.command {
        Command::Generate(c) => generate(c).map(|_| true),
        Command::Estimate(c) => estimate(c),
        Command::Benchmark(c) => benchmark(c, cli.threads).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_NUMERICAL),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
