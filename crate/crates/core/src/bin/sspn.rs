use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use sspn::config::ExperimentConfig;
use sspn::data::{load_csv, Dataset};
use sspn::experiment::run_experiment;
use sspn::metrics::{binary_f1, macro_f1, mean_test_ll, predict_all};
use sspn::parallel::init_thread_pool;
use sspn::safe_ssl::{fit_supervised, mcp_spn, project_simplex, Objective};
use sspn::spn::{parse_model, write_model};
use sspn::structure::learn_structure;
use sspn::Spn64;

#[derive(Parser)]
#[command(name = "sspn", version, about = "Sum-product networks with safe semi-supervised learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Generative,
    Discriminative,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Supervised,
    Ssl,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Ll,
    F1,
    BinaryF1,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file for structural problems.
    Validate { model: PathBuf },
    /// Learn a structure from a CSV file (rows with an empty label count as unlabelled).
    LearnStructure {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "class")]
        label_column: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the parameters of a model.
    Train {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "class")]
        label_column: String,
        #[arg(long, value_enum)]
        objective: ObjectiveArg,
        #[arg(long, value_enum, default_value = "ssl")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Score a model on labelled data.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "class")]
        label_column: String,
        #[arg(long, value_enum, default_value = "ll")]
        metric: Metric,
    },
    /// Run the repeated-split experiment described by a config file.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Project a comma-separated vector onto the probability simplex.
    ProjectSimplex {
        #[arg(allow_hyphen_values = true)]
        vector: String,
    },
}

fn read_model(path: &Path) -> Result<Spn64> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_model(&text).with_context(|| format!("parsing {}", path.display()))?)
}

fn read_data(path: &Path, label_column: &str) -> Result<Dataset<f64>> {
    load_csv(path, label_column).with_context(|| format!("loading {}", path.display()))
}

fn read_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => Ok(ExperimentConfig::load(p)?),
        None => Ok(ExperimentConfig::default()),
    }
}

fn sidecar_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".stats.json");
    PathBuf::from(s)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { model } => {
            let spn = read_model(&model)?;
            let report = spn.validate();
            if report.is_empty() {
                println!("valid: {} nodes, {} edges, depth {}", spn.len(), spn.num_edges(), spn.max_depth());
                Ok(ExitCode::SUCCESS)
            } else {
                for v in &report.violations {
                    println!("{v:?}");
                }
                Ok(ExitCode::FAILURE)
            }
        }
        Command::LearnStructure { data, label_column, config, out } => {
            let cfg = read_config(config.as_deref())?;
            let ds = read_data(&data, &label_column)?;
            let (x, y, u) = ds.partition_by_label();
            let learned = learn_structure(&x, &y, &u, ds.num_classes, &cfg.structure)?;
            fs::write(&out, write_model(&learned.spn))?;
            fs::write(sidecar_path(&out), learned.sidecar_json())?;
            eprintln!("{} nodes, depth {}", learned.spn.len(), learned.spn.max_depth());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { model, data, label_column, objective, mode, seed, config, out, history } => {
            let mut cfg = read_config(config.as_deref())?.training;
            cfg.objective = match objective {
                ObjectiveArg::Generative => Objective::Generative,
                ObjectiveArg::Discriminative => Objective::Discriminative,
            };
            cfg.seed = seed;
            let mut spn = read_model(&model)?;
            let side = sidecar_path(&model);
            if let Ok(json) = fs::read_to_string(&side) {
                spn = sspn::structure::LearnedStructure::from_sidecar(spn, &json)?.spn;
            } else {
                bail!("missing {} (needed for the variance floor)", side.display());
            }
            let ds = read_data(&data, &label_column)?;
            let (x, y, u) = ds.partition_by_label();
            if ds.num_classes > spn.num_classes() {
                bail!("data has {} classes, model has {}", ds.num_classes, spn.num_classes());
            }
            let mut records = Vec::new();
            let trained = match mode {
                Mode::Supervised => {
                    let obj = fit_supervised(&mut spn, &x, &y, &cfg)?;
                    eprintln!("objective {obj:.6}");
                    spn
                }
                Mode::Ssl => {
                    let outcome = mcp_spn(&spn, &x, &y, &u, None, &cfg)?;
                    eprintln!(
                        "semi-supervised {:.6}, supervised {:.6}{}",
                        outcome.safety.0,
                        outcome.safety.1,
                        if outcome.fell_back { " (kept supervised)" } else { "" }
                    );
                    records = outcome.history;
                    outcome.theta_star
                }
            };
            fs::write(&out, write_model(&trained))?;
            fs::copy(&side, sidecar_path(&out))?;
            if let Some(h) = history {
                let mut text = String::new();
                for r in &records {
                    text.push_str(&serde_json::to_string(r)?);
                    text.push('\n');
                }
                fs::write(h, text)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { model, data, label_column, metric } => {
            let spn = read_model(&model)?;
            let ds = read_data(&data, &label_column)?;
            let (x, y, _) = ds.partition_by_label();
            let value = match metric {
                Metric::Ll => mean_test_ll(&spn, &x, &y)?,
                Metric::F1 => macro_f1(&y, &predict_all(&spn, &x)?, spn.num_classes())?,
                Metric::BinaryF1 => binary_f1(&y, &predict_all(&spn, &x)?)?,
            };
            println!("{value}");
            Ok(ExitCode::SUCCESS)
        }
        Command::Experiment { config, trials, out_dir } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(t) = trials {
                cfg.trials = t;
            }
            let report = run_experiment(&cfg)?;
            report.write_to(&out_dir)?;
            print!("{}", report.to_csv());
            if !report.failures.is_empty() {
                eprintln!("warning: {} of {} trials failed", report.failures.len(), cfg.trials);
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ProjectSimplex { vector } => {
            let v: Vec<f64> = vector
                .split(',')
                .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad number `{s}`")))
                .collect::<Result<_>>()?;
            let p = project_simplex(&v);
            let parts: Vec<String> = p.iter().map(|x| x.to_string()).collect();
            println!("{}", parts.join(","));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    init_thread_pool();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
