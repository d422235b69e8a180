//! `pwlm`: batch driver for curve generation, moment estimation, recovery,
//! tracing, experiment suites, theory checks and plots.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pwl_moments::checks::{
    find_m1m2_neighbor, gradient_condition_check, m1m2_jacobian_nullity, tensor_power_bound_check, witness_matrix_sigma_min,
    NeighborConfig,
};
use pwl_moments::estimate::{sample, stream_moments, MomentAccumulator, NoisyModel};
use pwl_moments::experiment::{run_suite, ExperimentConfig};
use pwl_moments::io::{accumulate_file, read_points, write_points};
use pwl_moments::plot::emit_plot;
use pwl_moments::recover::{baseline_recover, recover, BaselineLoss, RecoverConfig, RecoveryResult};
use pwl_moments::tracer::{trace, trace_bidirectional, TracerConfig};
use pwl_moments::{random_curve, Error, MomentTriple, PwlCurve};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config files or parameter values (exit 1).
    Config(String),
    /// Everything that fails after the inputs were accepted (exit 2).
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Domain { .. } => CliError::Config(e.to_string()),
            e => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "pwlm", version, about = "Recover piecewise-linear curves from noisy point clouds")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file merged over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config entry, e.g. `--set optim.max_blocks=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a random curve and write it as JSON.
    Gen {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        len_lo: f64,
        #[arg(long, default_value_t = 2.0)]
        len_hi: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample a noisy cloud around a curve (`.csv` or binary by extension).
    Sample {
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        sigma: f64,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate noise-corrected moments from point files or a streamed model.
    Estimate {
        /// Point files to accumulate.
        points: Vec<PathBuf>,
        #[arg(long)]
        sigma: f64,
        /// Stream `--n` points from this curve instead of reading files.
        #[arg(long, conflicts_with = "points")]
        curve: Option<PathBuf>,
        #[arg(long, requires = "curve")]
        n: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Start from a saved accumulator.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Save the accumulator after reading.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recover a curve from moments.
    Recover {
        #[arg(long)]
        moments: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run a random-initialization baseline instead of the moment method.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        #[arg(long, default_value_t = 10)]
        inits: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trace a curve through a low-noise cloud from a known start vertex.
    Trace {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        m: usize,
        /// Start vertex as comma-separated coordinates.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        start: Vec<f64>,
        /// End vertex; when given, the trace runs from both ends and is averaged.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        end: Option<Vec<f64>>,
        /// Segment length, shorthand for `--set segment_length=...`.
        #[arg(long)]
        length: Option<f64>,
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run repeated trials and write summary tables.
    Suite {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n_trials: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Numerical checks of the well-posedness results.
    Check {
        #[command(subcommand)]
        which: Check,
        #[arg(long, global = true)]
        out: Option<PathBuf>,
    },
    /// Plot a true and a predicted curve, optionally over a cloud.
    Plot {
        #[arg(long)]
        truth: PathBuf,
        /// Curve JSON or a recovery result.
        #[arg(long)]
        predicted: PathBuf,
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    ThirdOnly,
    AllThree,
}

#[derive(Args)]
struct CurveSource {
    /// Curve JSON; a random curve is drawn when absent.
    #[arg(long)]
    curve: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, default_value_t = 0)]
    curve_seed: u64,
}

impl CurveSource {
    fn get(&self) -> CliResult<PwlCurve> {
        match &self.curve {
            Some(p) => read_curve(p),
            None => Ok(random_curve(self.m, self.d, 1.0, 2.0, self.curve_seed)?),
        }
    }
}

#[derive(Subcommand)]
enum Check {
    /// Smallest singular value of the third-moment Jacobian at the witness curve.
    Witness {
        #[arg(long, default_value_t = 4)]
        m: usize,
    },
    /// Gradient conditions under random perturbations.
    Gradient {
        #[command(flatten)]
        src: CurveSource,
        #[arg(long, default_value_t = 1e-3)]
        delta_scale: f64,
        #[arg(long, default_value_t = 1e-3)]
        p_scale: f64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// A nearby curve with the same first two moments.
    Neighbor {
        #[command(flatten)]
        src: CurveSource,
        #[arg(long, default_value_t = 1e-2)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Tensor power difference bound on random vector pairs.
    Power {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 6)]
        k_max: u32,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("reading {}: {e}", path.display())))
}

fn read_curve(path: &Path) -> CliResult<PwlCurve> {
    Ok(PwlCurve::from_json(&read_text(path)?)?)
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Runtime(format!("writing {}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn run(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::Gen { m, d, len_lo, len_hi, seed, out } => {
            let c = random_curve(m, d, len_lo, len_hi, seed)?;
            emit(out.as_deref(), &c.to_json())
        }
        Cmd::Sample { curve, sigma, n, seed, out } => {
            let model = NoisyModel::new(read_curve(&curve)?, sigma)?;
            Ok(write_points(&out, &sample(&model, n, seed)?)?)
        }
        Cmd::Estimate { points, sigma, curve, n, seed, resume, checkpoint, out } => {
            let mut acc = match resume {
                Some(p) => Some(MomentAccumulator::from_json(&read_text(&p)?)?),
                None => None,
            };
            if let Some(c) = curve {
                let n = n.ok_or_else(|| CliError::Config("--curve needs --n".into()))?;
                let part = stream_moments(&NoisyModel::new(read_curve(&c)?, sigma)?, n, seed)?;
                match &mut acc {
                    Some(a) => a.merge(&part)?,
                    None => acc = Some(part),
                }
            } else if points.is_empty() && acc.is_none() {
                return Err(CliError::Config("no point files, --curve or --resume given".into()));
            }
            for p in &points {
                accumulate_file(p, &mut acc)?;
            }
            let acc = acc.ok_or(Error::EmptyAccumulator)?;
            if let Some(cp) = checkpoint {
                emit(Some(&cp), &acc.to_json())?;
            }
            emit(out.as_deref(), &acc.finalize(sigma)?.to_json())
        }
        Cmd::Recover { moments, m, seed, baseline, inits, cfg, out } => {
            let rc: RecoverConfig = config::load(cfg.config.as_deref(), &cfg.overrides)?;
            let mom = MomentTriple::from_json(&read_text(&moments)?)?;
            let res = match baseline {
                None => recover(&mom, m, &rc, seed)?,
                Some(b) => {
                    let kind = match b {
                        Baseline::ThirdOnly => BaselineLoss::ThirdOnly,
                        Baseline::AllThree => BaselineLoss::AllThree,
                    };
                    baseline_recover(&mom, m, inits, kind, &rc.optim, seed)?
                }
            };
            emit(out.as_deref(), &res.to_json())
        }
        Cmd::Trace { points, m, start, end, length, cfg, out } => {
            let mut tc: TracerConfig = config::load(cfg.config.as_deref(), &cfg.overrides)?;
            if let Some(l) = length {
                tc.segment_length = l;
            }
            tc.validate()?;
            let cloud = read_points(&points)?;
            if start.len() != cloud.ncols() || end.as_ref().is_some_and(|e| e.len() != cloud.ncols()) {
                return Err(CliError::Config(format!("start/end vertices must have {} coordinates", cloud.ncols())));
            }
            let c0 = nalgebra::DVector::from_vec(start);
            let curve = match end {
                Some(e) => trace_bidirectional(&cloud, &c0, &nalgebra::DVector::from_vec(e), m, &tc)?,
                None => trace(&cloud, &c0, m, &tc)?,
            };
            emit(out.as_deref(), &curve.to_json())
        }
        Cmd::Suite { cfg, seed, n_trials, out_dir } => {
            let mut ec: ExperimentConfig = config::load(cfg.config.as_deref(), &cfg.overrides)?;
            if let Some(s) = seed {
                ec.seed = s;
            }
            if let Some(n) = n_trials {
                ec.n_trials = n;
            }
            if out_dir.is_some() {
                ec.output_dir = out_dir;
            }
            let summary = run_suite(&ec)?;
            print!("{}", summary.table_csv());
            eprintln!(
                "ordering success rate {:.3}, {} of {} trials recorded errors",
                summary.ordering_success_rate, summary.failed_trials, summary.n_trials
            );
            Ok(())
        }
        Cmd::Check { which, out } => {
            let text = match which {
                Check::Witness { m } => {
                    json(&serde_json::json!({ "m": m, "sigma_min": witness_matrix_sigma_min(m)? }))
                }
                Check::Gradient { src, delta_scale, p_scale, trials, seed } => {
                    json(&gradient_condition_check(&src.get()?, delta_scale, p_scale, trials, seed)?)
                }
                Check::Neighbor { src, epsilon, seed } => {
                    let c = src.get()?;
                    let nullity = m1m2_jacobian_nullity(&c, 1e-8)?;
                    let res = find_m1m2_neighbor(&c, epsilon, &NeighborConfig::default(), seed)?;
                    json(&serde_json::json!({ "jacobian_nullity": nullity, "neighbor": res }))
                }
                Check::Power { trials, k_max, d, seed } => json(&tensor_power_bound_check(trials, k_max, d, seed)?),
            };
            emit(out.as_deref(), &text)
        }
        Cmd::Plot { truth, predicted, points, out } => {
            let t = read_curve(&truth)?;
            let text = read_text(&predicted)?;
            let p = match PwlCurve::from_json(&text) {
                Ok(c) => c,
                Err(_) => RecoveryResult::from_json(&text)?.curve_hat,
            };
            let cloud = points.map(|p| read_points(&p)).transpose()?;
            Ok(emit_plot(&t, &p, cloud.as_ref(), &out)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
