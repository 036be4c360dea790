use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use permexp::experiment::{self, ExperimentConfig, ExperimentKind};
use permexp::limiting::{limiting_summary, SinkhornOptions, DEFAULT_RESOLUTION};
use permexp::mle_zero::{GammaChoice, OriginCalibration};
use permexp::model::{center_components, Permutation, StatisticSpec, ThetaVector};
use permexp::oracle::oracle_summary;
use permexp::pseudolikelihood::{solve_ple, SolveOptions, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};
use permexp::sampler::{sample_replications, SamplerConfig, SamplerMethod, DEFAULT_SWEEPS};
use permexp::variance::confidence_interval;
use permexp::PermexpError;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "permexp", version, about = "Exponential families on permutations")]
struct Cli {
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, conflicts_with = "csv")]
    json: bool,
    #[arg(long, global = true)]
    csv: bool,
    /// Write results here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct StatArgs {
    /// Comma-separated builtins (xy, neg_abs_diff, neg_sq_diff) or table:<path>.
    #[arg(long, default_value = "xy")]
    stat: String,
    /// Doubly center every component first.
    #[arg(long)]
    center: bool,
}

impl StatArgs {
    fn spec(&self) -> permexp::Result<StatisticSpec> {
        let spec = match self.stat.strip_prefix("table:") {
            Some(path) => StatisticSpec::read_table_file(path)?,
            None => StatisticSpec::from_names(&self.stat)?,
        };
        Ok(if self.center { center_components(&spec) } else { spec })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Draw permutations from the model.
    Sample {
        #[command(flatten)]
        stat: StatArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta: Vec<f64>,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "gibbs")]
        method: SamplerMethod,
        #[arg(long, default_value_t = DEFAULT_SWEEPS)]
        sweeps: usize,
        /// Heat-bath moves per sweep (default n²).
        #[arg(long)]
        proposals: Option<usize>,
        #[arg(long, default_value_t = 1)]
        reps: usize,
    },
    /// Pseudo-likelihood estimate from an observed permutation.
    Ple {
        #[command(flatten)]
        stat: StatArgs,
        /// File holding the permutation (1-indexed, first non-empty line).
        #[arg(long)]
        perm: PathBuf,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        theta_init: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tol: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
        max_iter: usize,
    },
    /// Sandwich confidence interval for a linear functional dᵀθ.
    Ci {
        #[command(flatten)]
        stat: StatArgs,
        #[arg(long)]
        perm: PathBuf,
        /// Direction d (default: first coordinate).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        d: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Linearized MLE at the origin.
    Mle0 {
        #[command(flatten)]
        stat: StatArgs,
        #[arg(long)]
        perm: PathBuf,
        /// Divide by ∫ffᵀ of the raw statistic instead of the exact centered variance.
        #[arg(long)]
        paper_gamma: bool,
    },
    /// Limiting coupling and asymptotic covariance matrices.
    Limiting {
        #[command(flatten)]
        stat: StatArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta: Vec<f64>,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        grid: usize,
    },
    /// Exact quantities by enumeration of S_n (n <= 8).
    Oracle {
        #[command(flatten)]
        stat: StatArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        theta: Vec<f64>,
        #[arg(long)]
        n: usize,
    },
    /// Monte Carlo studies; writes CSV plus a JSON sidecar next to --out.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// ple_histogram, mle_vs_ple_origin or ci_coverage.
    #[arg(long, required_unless_present = "config")]
    kind: Option<ExperimentKind>,
    /// key = value config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    stat: Option<String>,
    #[arg(long)]
    center: bool,
    #[arg(long, allow_hyphen_values = true)]
    theta0: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    sampler: Option<SamplerMethod>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    paper_gamma: bool,
}

enum Format {
    Text,
    Json,
    Csv,
}

struct Output {
    format: Format,
    sink: Box<dyn Write>,
}

impl Output {
    fn open(cli: &Cli) -> io::Result<Self> {
        let format = if cli.json {
            Format::Json
        } else if cli.csv {
            Format::Csv
        } else {
            Format::Text
        };
        let sink: Box<dyn Write> = match &cli.out {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(BufWriter::new(io::stdout())),
        };
        Ok(Self { format, sink })
    }

    fn json<T: Serialize>(&mut self, value: &T) -> permexp::Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(|e| PermexpError::Parse(e.to_string()))?;
        writeln!(self.sink, "{text}")?;
        Ok(())
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn run(cli: &Cli) -> permexp::Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| PermexpError::InvalidConfig(e.to_string()))?;
    }
    if let Command::Experiment(args) = &cli.command {
        return run_experiment(cli, args);
    }
    let mut out = Output::open(cli)?;
    match &cli.command {
        Command::Sample {
            stat,
            theta,
            n,
            method,
            sweeps,
            proposals,
            reps,
        } => {
            let spec = stat.spec()?;
            let config = SamplerConfig {
                method: *method,
                sweeps: *sweeps,
                proposals_per_sweep: *proposals,
                seed: cli.seed,
            };
            let draws = sample_replications(&spec, &ThetaVector::new(theta.clone())?, *n, &config, *reps)?;
            match out.format {
                Format::Json => {
                    let perms: Vec<Vec<usize>> = draws.iter().map(|p| p.one_indexed()).collect();
                    out.json(&serde_json::json!({ "permutations": perms }))?;
                }
                Format::Csv => {
                    for p in &draws {
                        writeln!(out.sink, "{}", p.to_line().replace(' ', ","))?;
                    }
                }
                Format::Text => {
                    for p in &draws {
                        p.write_to(&mut out.sink)?;
                    }
                }
            }
        }
        Command::Ple {
            stat,
            perm,
            theta_init,
            tol,
            max_iter,
        } => {
            let spec = stat.spec()?;
            let pi = Permutation::read_file(perm)?;
            let options = SolveOptions {
                theta_init: theta_init.clone().map(ThetaVector::new).transpose()?,
                tolerance: *tol,
                max_iterations: *max_iter,
            };
            let rep = solve_ple(&spec, &pi, &options)?;
            match out.format {
                Format::Json => out.json(&rep)?,
                Format::Csv => {
                    writeln!(out.sink, "root,iterations,gradient_norm,converged,method")?;
                    writeln!(
                        out.sink,
                        "\"{}\",{},{},{},{:?}",
                        join(&rep.root),
                        rep.iterations,
                        rep.gradient_norm,
                        rep.converged,
                        rep.method
                    )?;
                }
                Format::Text => writeln!(
                    out.sink,
                    "theta_hat = [{}]\niterations = {}\ngradient_norm = {:e}\nconverged = {}",
                    join(&rep.root),
                    rep.iterations,
                    rep.gradient_norm,
                    rep.converged
                )?,
            }
            if !rep.converged {
                return Err(PermexpError::SolverFailed("did not reach the tolerance".into()));
            }
        }
        Command::Ci { stat, perm, d, alpha } => {
            let spec = stat.spec()?;
            let pi = Permutation::read_file(perm)?;
            let d = d.clone().unwrap_or_else(|| {
                let mut e = vec![0.0; spec.dimension()];
                e[0] = 1.0;
                e
            });
            let ci = confidence_interval(&spec, &pi, &d, *alpha, &SolveOptions::default())?;
            match out.format {
                Format::Json => out.json(&ci)?,
                Format::Csv => {
                    writeln!(out.sink, "estimate,lo,hi,half_width,alpha")?;
                    writeln!(out.sink, "{},{},{},{},{}", ci.estimate, ci.lo, ci.hi, ci.half_width, ci.alpha)?;
                }
                Format::Text => writeln!(
                    out.sink,
                    "estimate = {}\ninterval = [{}, {}] at level {}",
                    ci.estimate,
                    ci.lo,
                    ci.hi,
                    1.0 - ci.alpha
                )?,
            }
        }
        Command::Mle0 {
            stat,
            perm,
            paper_gamma,
        } => {
            let spec = stat.spec()?;
            let pi = Permutation::read_file(perm)?;
            let choice = if *paper_gamma {
                GammaChoice::Uncentered
            } else {
                GammaChoice::Hoeffding
            };
            let cal = OriginCalibration::new(&spec, pi.len(), choice)?;
            let theta = cal.estimate(&spec, &pi)?;
            // √n θ̂ is roughly N(0, Γ⁻¹) at the origin; far outside that the
            // linearization says nothing.
            let n = pi.len() as f64;
            let z2: f64 = (0..theta.len())
                .map(|p| (0..theta.len()).map(|q| theta[p] * cal.gamma_n[(p, q)] * theta[q]).sum::<f64>())
                .sum::<f64>()
                * n;
            if z2.sqrt() > 4.0 {
                eprintln!(
                    "warning: estimate is {:.1} standard errors from 0; the origin linearization is unreliable here",
                    z2.sqrt()
                );
            }
            match out.format {
                Format::Json => out.json(&serde_json::json!({
                    "theta_hat": theta.as_slice(),
                    "gamma": choice,
                    "grad_z0": cal.grad_z0,
                    "divisor": (0..cal.divisor.nrows())
                        .map(|r| cal.divisor.row(r).iter().copied().collect::<Vec<_>>())
                        .collect::<Vec<_>>(),
                }))?,
                Format::Csv => {
                    writeln!(out.sink, "theta_hat")?;
                    writeln!(out.sink, "\"{}\"", join(theta.as_slice()))?;
                }
                Format::Text => writeln!(out.sink, "theta_hat = [{}]", join(theta.as_slice()))?,
            }
        }
        Command::Limiting { stat, theta, grid } => {
            let spec = stat.spec()?;
            let summary = limiting_summary(&spec, &ThetaVector::new(theta.clone())?, &SinkhornOptions::with_resolution(*grid))?;
            match out.format {
                Format::Json => out.json(&summary)?,
                Format::Csv => {
                    writeln!(out.sink, "Z,z,marginal_error")?;
                    writeln!(out.sink, "{},\"{}\",{}", summary.log_partition, join(&summary.z), summary.marginal_error)?;
                }
                Format::Text => {
                    writeln!(out.sink, "Z = {}\nz = [{}]", summary.log_partition, join(&summary.z))?;
                    if let Some(s) = &summary.sandwich {
                        writeln!(out.sink, "sandwich = {:?}", s.as_slice())?;
                    }
                    writeln!(out.sink, "marginal_error = {:e}", summary.marginal_error)?;
                }
            }
        }
        Command::Oracle { stat, theta, n } => {
            let spec = stat.spec()?;
            let summary = oracle_summary(&spec, &ThetaVector::new(theta.clone())?, *n)?;
            match out.format {
                Format::Json => out.json(&summary)?,
                Format::Csv => {
                    writeln!(out.sink, "log_z,mean_t")?;
                    writeln!(out.sink, "{},\"{}\"", summary.log_z, join(&summary.mean_t))?;
                }
                Format::Text => writeln!(
                    out.sink,
                    "log_Z = {}\nE[T] = [{}]\nVar[T] = {:?}",
                    summary.log_z,
                    join(&summary.mean_t),
                    summary.var_t.as_slice()
                )?,
            }
        }
        Command::Experiment(_) => unreachable!(),
    }
    out.sink.flush()?;
    Ok(())
}

fn run_experiment(cli: &Cli, args: &ExperimentArgs) -> permexp::Result<()> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => {
            let kind = args.kind.expect("clap enforces --kind without --config");
            if args.paper_scale {
                ExperimentConfig::paper_scale(kind)
            } else {
                ExperimentConfig::desk(kind)
            }
        }
    };
    if let (Some(kind), Some(_)) = (args.kind, &args.config) {
        config.experiment = kind;
    }
    if args.paper_scale {
        let full = ExperimentConfig::paper_scale(config.experiment);
        config.n_values = full.n_values;
        config.replications = full.replications;
    }
    // explicit flags win over the file
    config.seed = cli.seed;
    if let Some(v) = &args.stat {
        config.stat = v.clone();
    }
    config.center |= args.center;
    config.paper_gamma |= args.paper_gamma;
    if let Some(v) = args.theta0 {
        config.theta0 = v;
    }
    if let Some(v) = &args.n {
        config.n_values = v.clone();
    }
    if let Some(v) = args.reps {
        config.replications = v;
    }
    if let Some(v) = args.sampler {
        config.sampler = v;
    }
    if let Some(v) = args.sweeps {
        config.sweeps = v;
    }
    if let Some(v) = args.alpha {
        config.alpha = v;
    }
    if let Some(v) = args.grid {
        config.grid = v;
    }
    if let Some(p) = &cli.out {
        config.output = Some(p.clone());
    }
    config.validate()?;

    let result = experiment::run(&config)?;
    match &config.output {
        Some(path) => {
            result.write(path)?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&result.sidecar).unwrap_or_default());
            }
        }
        None if cli.json => println!("{}", serde_json::to_string_pretty(&result.sidecar).unwrap_or_default()),
        None => print!("{}", result.csv),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_USAGE })
        }
    }
}
