use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anonattack::anatomy::{anonymize, merge_groups};
use anonattack::definetti::Method;
use anonattack::harness::{self, ExperimentConfig, ResultRow};
use anonattack::mechanism::{verify_dp_ratio, Mechanism, PrivacyParams};
use anonattack::seeding::{self, tag};
use anonattack::{Error, Result};

#[derive(Parser)]
#[command(name = "anonattack", version, about = "Inference attacks on anonymized tables")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (directory for `anonymize`); stdout when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Naive Bayes attack on noisy count releases.
    AttackDp {
        #[arg(long, value_delimiter = ',')]
        epsilon: Vec<f64>,
        #[arg(long)]
        mechanism: Option<Mechanism>,
        #[arg(long)]
        reps: Option<usize>,
    },
    /// Write an l-diverse Anatomy release.
    Anonymize {
        #[arg(long)]
        l: usize,
        #[arg(long, default_value_t = 1)]
        merge_factor: usize,
    },
    /// deFinetti attack on Anatomy releases.
    AttackDefinetti {
        #[arg(long, value_delimiter = ',')]
        l: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        merge_factor: Vec<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        /// permutation, group, open or all.
        #[arg(long, default_value = "all")]
        method: String,
    },
    /// Largest pmf ratio of the geometric mechanism against exp(epsilon).
    VerifyDp {
        #[arg(long)]
        epsilon: f64,
        #[arg(long, default_value_t = 1)]
        sensitivity: u32,
        /// Total L1 shift; defaults to the sensitivity.
        #[arg(long)]
        shift: Option<u32>,
        #[arg(long, default_value_t = 40)]
        z_range: u32,
        #[arg(long, default_value = "geometric")]
        mechanism: Mechanism,
    },
    /// Min, mean and max accuracy per (kind, param, split, method).
    Summarize {
        /// Result CSV written by an attack subcommand.
        input: PathBuf,
    },
}

fn load_config(global: &Global) -> Result<ExperimentConfig> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config is required for this subcommand"))?;
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &global.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    out.with_file_name(format!("{stem}.summary.csv"))
}

fn emit(cfg: &ExperimentConfig, rows: &[ResultRow]) -> Result<()> {
    harness::write_rows(rows, open_out(cfg.out.as_deref())?)?;
    if let Some(out) = &cfg.out {
        let path = summary_path(out);
        harness::write_summary(&harness::summarize(rows)?, open_out(Some(&path))?)?;
        eprintln!("wrote {} and {}", out.display(), path.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::AttackDp { epsilon, mechanism, reps } => {
            let mut cfg = load_config(&cli.global)?;
            if !epsilon.is_empty() {
                cfg.naive.epsilons = epsilon;
            }
            if let Some(m) = mechanism {
                cfg.naive.mechanism = m;
            }
            if let Some(r) = reps {
                cfg.naive.repetitions = r;
            }
            let rows = harness::run_naive_attack(&cfg)?;
            emit(&cfg, &rows)
        }
        Command::Anonymize { l, merge_factor } => {
            let cfg = load_config(&cli.global)?;
            let dir = cfg
                .out
                .clone()
                .ok_or_else(|| Error::config("--out <dir> is required for anonymize"))?;
            let table = harness::definetti_table(&cfg)?;
            let mut rng = seeding::grid_stream(cfg.seed, tag::ANATOMY, l as u64, 0);
            let mut release = anonymize(&table, l, &mut rng)?;
            if merge_factor > 1 {
                release = merge_groups(&release, merge_factor)?;
            } else if merge_factor == 0 {
                return Err(Error::config("merge factor must be at least 1"));
            }
            release.write_dir(&dir, &cfg.dataset.csv.missing_token)?;
            eprintln!(
                "wrote {} groups over {} rows to {}",
                release.groups().len(),
                release.n(),
                dir.display()
            );
            Ok(())
        }
        Command::AttackDefinetti {
            l,
            merge_factor,
            iterations,
            window,
            reps,
            method,
        } => {
            let mut cfg = load_config(&cli.global)?;
            let d = &mut cfg.definetti;
            if !l.is_empty() {
                d.l = l;
            }
            if !merge_factor.is_empty() {
                d.merge_factors = merge_factor;
            }
            if let Some(i) = iterations {
                d.iterations = i;
            }
            if let Some(w) = window {
                d.window = w;
            }
            if let Some(r) = reps {
                d.repetitions = r;
            }
            d.methods = if method == "all" {
                Method::ALL.to_vec()
            } else {
                vec![method.parse()?]
            };
            let rows = harness::run_definetti_attack(&cfg)?;
            emit(&cfg, &rows)
        }
        Command::VerifyDp {
            epsilon,
            sensitivity,
            shift,
            z_range,
            mechanism,
        } => {
            let params = PrivacyParams::new(epsilon, sensitivity, mechanism)?;
            let ratio = verify_dp_ratio(&params, shift.unwrap_or(sensitivity), z_range)?;
            let bound = epsilon.exp();
            let mut out = open_out(cli.global.out.as_deref())?;
            writeln!(out, "max_ratio={ratio:.12}").map_err(|e| Error::io("<stdout>", e))?;
            writeln!(out, "bound={bound:.12}").map_err(|e| Error::io("<stdout>", e))?;
            writeln!(out, "within_bound={}", ratio <= bound * (1.0 + 1e-9)).map_err(|e| Error::io("<stdout>", e))?;
            Ok(())
        }
        Command::Summarize { input } => {
            let file = File::open(&input).map_err(|e| Error::io(&input, e))?;
            let rows = harness::read_rows(file)?;
            harness::write_summary(&harness::summarize(&rows)?, open_out(cli.global.out.as_deref())?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
