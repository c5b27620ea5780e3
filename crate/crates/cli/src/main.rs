use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use plimit::config::{load, DomainSpec, MeasureSpec};
use plimit::error::{io_err, CliError, CliResult, InModule};
use plimit::experiment::{demo_poisson_learning, region_residual, run_experiment, Report};
use plimit::output::{read_node_csv, write_json, write_node_csv};
use plimit_core::acceptance::{run_criterion, CRITERIA};
use plimit_core::solver::{continuation_sweep, solve_p_poisson, SolveOptions};
use plimit_core::spectral::{morrey_sigma_p, rayleigh_lambda_p, EigenOptions};
use plimit_core::transport::{kr_norm, w1_geodesic};
use plimit_core::viscosity::{classify_measure, eikonal_split_residuals, pde_residuals};
use plimit_core::{GridDomain, ScalarField, SignedMeasure};
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "plimit", version, about = "p-Poisson sweeps, transport and limit checks on grid domains")]
struct Cli {
    /// Worker threads for parallel runs (default: all cores).
    #[arg(long, global = true, env = "PLIMIT_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Problem {
    /// Domain descriptor (JSON).
    #[arg(long)]
    domain: PathBuf,
    /// Measure descriptor (JSON).
    #[arg(long)]
    measure: PathBuf,
    /// Solver options (JSON); missing fields take their defaults.
    #[arg(long)]
    solver: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Lambda,
    Sigma,
}

#[derive(Subcommand)]
enum Command {
    /// Run experiment configs, in parallel when several are given.
    Run {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
    /// Poisson learning from labelled points.
    DemoPoissonLearning { config: PathBuf },
    /// One p-Poisson solve; the report includes the field.
    Solve {
        #[command(flatten)]
        problem: Problem,
        #[arg(long)]
        p: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the field as `node_index,value` CSV.
        #[arg(long)]
        field_csv: Option<PathBuf>,
    },
    /// Continuation sweep over ascending exponents.
    Sweep {
        #[command(flatten)]
        problem: Problem,
        #[arg(long, value_delimiter = ',', required = true)]
        p_list: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Geodesic W1 (or the KR norm) by min-cost flow.
    Transport {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        measure: PathBuf,
        #[arg(long)]
        kr: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Directed flows as `from,to,flow` CSV.
        #[arg(long)]
        flow_csv: Option<PathBuf>,
    },
    /// Rayleigh-quotient estimate of the first nontrivial eigenvalue.
    Eigen {
        #[arg(long)]
        domain: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long, value_enum, default_value = "lambda")]
        kind: Kind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Residuals of a field, or the numbered acceptance checks.
    Check {
        #[arg(long, requires_all = ["domain", "measure"], conflicts_with_all = ["criterion", "all"])]
        field: Option<PathBuf>,
        #[arg(long)]
        domain: Option<PathBuf>,
        #[arg(long)]
        measure: Option<PathBuf>,
        /// Per-node region residuals as CSV.
        #[arg(long, requires = "field")]
        residual_csv: Option<PathBuf>,
        /// Acceptance criterion to run; repeatable.
        #[arg(long)]
        criterion: Vec<u8>,
        /// Run every acceptance criterion.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error [cli]: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error [{}]: {e}", e.module());
            ExitCode::from(2)
        }
    }
}

fn parent(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn domain(path: &Path) -> CliResult<GridDomain> {
    read_json::<DomainSpec>(path)?.build(&parent(path))
}

fn measure(path: &Path, dom: &GridDomain) -> CliResult<SignedMeasure> {
    Ok(read_json::<MeasureSpec>(path)?.build(dom, &parent(path))?.limit)
}

fn emit(out: Option<&Path>, value: &impl Serialize) -> CliResult<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

impl Problem {
    fn load(&self) -> CliResult<(GridDomain, SignedMeasure, SolveOptions)> {
        let dom = domain(&self.domain)?;
        let mu = measure(&self.measure, &dom)?;
        let opts = match &self.solver {
            Some(path) => read_json(path)?,
            None => SolveOptions::default(),
        };
        opts.validate().in_module("p_solver")?;
        Ok((dom, mu, opts))
    }
}

fn summary(r: &Report) -> String {
    let mut line = format!("{} {}", if r.pass { "PASS" } else { "FAIL" }, r.name);
    for c in r.checks.iter().filter(|c| !c.pass) {
        line.push_str(&format!(" [{} failed]", c.kind));
    }
    if let Some(e) = &r.error {
        line.push_str(&format!(" [{}: {}]", e.module, e.message));
    }
    line
}

fn dispatch(cmd: Command) -> CliResult<bool> {
    match cmd {
        Command::Run { configs } => {
            let results: Vec<CliResult<Report>> = configs
                .par_iter()
                .map(|path| {
                    let (cfg, base) = load(path)?;
                    run_experiment(&cfg, &base)
                })
                .collect();
            let mut all = true;
            for (path, r) in configs.iter().zip(results) {
                match r {
                    Ok(r) => {
                        println!("{}", summary(&r));
                        all &= r.pass;
                    }
                    Err(e) => {
                        println!("FAIL {} [{}: {e}]", path.display(), e.module());
                        all = false;
                    }
                }
            }
            Ok(all)
        }
        Command::DemoPoissonLearning { config } => {
            let (cfg, base) = load(&config)?;
            let r = demo_poisson_learning(&cfg, &base)?;
            println!("{}", summary(&r));
            if let Some(c) = &r.classification {
                println!("labels recovered {}/{}", c.labels_recovered, c.labels);
            }
            Ok(r.pass)
        }
        Command::Solve { problem, p, out, field_csv } => {
            let (dom, mu, opts) = problem.load()?;
            let r = solve_p_poisson(&dom, &mu, p, &opts).in_module("p_solver")?;
            if let Some(path) = field_csv {
                write_node_csv(&path, "value", r.u.values.iter().map(|&v| Some(v)))?;
            }
            emit(out.as_deref(), &r)?;
            Ok(r.converged)
        }
        Command::Sweep { problem, p_list, out } => {
            let (dom, mu, opts) = problem.load()?;
            let family = plimit_core::solver::MeasureFamily::Fixed(mu);
            let sweep = continuation_sweep(&dom, &family, &p_list, &opts).in_module("p_solver")?;
            emit(out.as_deref(), &sweep)?;
            Ok(sweep.iter().all(|e| e.report.converged))
        }
        Command::Transport { domain: d, measure: m, kr, out, flow_csv } => {
            let dom = domain(&d)?;
            let mu = measure(&m, &dom)?;
            let r = if kr { kr_norm(&dom, &mu) } else { w1_geodesic(&dom, &mu) }.in_module("transport")?;
            if let Some(path) = flow_csv {
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["from", "to", "flow"])?;
                for f in r.directed_flows(&dom) {
                    w.write_record([f.from.to_string(), f.to.to_string(), format!("{:e}", f.mass)])?;
                }
                w.flush().map_err(io_err(&path))?;
            }
            emit(out.as_deref(), &r)?;
            Ok(r.gap.abs() <= 1e-9 * r.value.max(f64::MIN_POSITIVE))
        }
        Command::Eigen { domain: d, p, kind, seed, out } => {
            let dom = domain(&d)?;
            let opts = EigenOptions { seed, ..Default::default() };
            let r = match kind {
                Kind::Lambda => rayleigh_lambda_p(&dom, p, &opts),
                Kind::Sigma => morrey_sigma_p(&dom, p, &opts),
            }
            .in_module("spectral")?;
            emit(out.as_deref(), &r)?;
            Ok(r.converged)
        }
        Command::Check { field: Some(field), domain: Some(d), measure: Some(m), residual_csv, out, .. } => {
            let dom = domain(&d)?;
            let mu = measure(&m, &dom)?;
            let u = ScalarField::new(read_node_csv(&field, dom.num_nodes())?);
            let labels = classify_measure(&dom, &mu).in_module("viscosity")?;
            let residuals = pde_residuals(&dom, &u, &labels).in_module("viscosity")?;
            let eikonal = eikonal_split_residuals(&dom, &u, &labels).in_module("viscosity")?;
            if let Some(path) = residual_csv {
                write_node_csv(&path, "residual", region_residual(&residuals))?;
            }
            #[derive(Serialize)]
            struct FieldCheck {
                residuals: plimit_core::viscosity::ResidualReport,
                eikonal: plimit_core::viscosity::EikonalReport,
            }
            emit(out.as_deref(), &FieldCheck { residuals, eikonal })?;
            Ok(true)
        }
        Command::Check { criterion, all, out, .. } => {
            let ids: Vec<u8> = if all { CRITERIA.collect() } else { criterion };
            if ids.is_empty() {
                return Err(CliError::Config("check needs --field with --domain and --measure, --criterion, or --all".into()));
            }
            let outcomes: Vec<_> = ids.iter().map(|&id| run_criterion(id)).collect();
            for o in &outcomes {
                println!("{o}");
            }
            if let Some(path) = out {
                write_json(&path, &outcomes)?;
            }
            Ok(outcomes.iter().all(|o| o.pass))
        }
    }
}
