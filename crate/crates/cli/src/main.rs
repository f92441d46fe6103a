use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use quatnn::train::{self, Dataset, Model, TrainConfig};
use quatnn::transformer::Variant;
use quatnn::{verify, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "quatnn",
    version,
    about = "Train, inspect and verify quaternion sequence models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a generated task and write a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Run directory for config, metrics, report and checkpoint.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Print parameter counts against the real-valued reference.
    Params {
        #[command(flatten)]
        config: ConfigArgs,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the algebra, oracle, gradient and normalization checks.
    Verify {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Greedily decode one source string with a trained transduction model.
    Decode {
        /// Checkpoint file; its run directory must hold `config.txt`.
        checkpoint: PathBuf,
        source: String,
        /// Config to use instead of the one next to the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write a generated split as TSV.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        /// Write the validation split instead of the training split.
        #[arg(long)]
        val: bool,
        /// Output file; stdout when absent.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

/// A config file plus per-field overrides, applied in that order.
#[derive(Args)]
struct ConfigArgs {
    /// INI config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config field, e.g. `--set optim.warmup=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    target_metric: Option<String>,
    #[arg(long)]
    d: Option<String>,
    #[arg(long)]
    hidden_q: Option<String>,
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    heads: Option<String>,
    #[arg(long)]
    ffn_hidden: Option<String>,
    #[arg(long, alias = "lr")]
    learning_rate: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    n_train: Option<String>,
    #[arg(long)]
    n_val: Option<String>,
    /// Allow learning rates and batch sizes outside the tuning grid.
    #[arg(long)]
    expert: bool,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        let flags = [
            ("task", &self.task),
            ("model", &self.model),
            ("variant", &self.variant),
            ("seed", &self.seed),
            ("steps", &self.steps),
            ("eval_every", &self.eval_every),
            ("target_metric", &self.target_metric),
            ("d", &self.d),
            ("hidden_q", &self.hidden_q),
            ("layers", &self.layers),
            ("heads", &self.heads),
            ("ffn_hidden", &self.ffn_hidden),
            ("learning_rate", &self.learning_rate),
            ("batch_size", &self.batch_size),
            ("n_train", &self.n_train),
            ("n_val", &self.n_val),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        for kv in &self.sets {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config {
                field: kv.clone(),
                message: "expected KEY=VALUE".into(),
            })?;
            cfg.set(k, v)?;
        }
        if self.expert {
            cfg.expert = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Config problems and malformed input are usage errors; everything else
/// is a runtime failure.
fn exit_for(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config { .. } | Error::Contract(_) | Error::Lookup { .. } => {
            ExitCode::from(EXIT_USAGE)
        }
        _ => ExitCode::from(EXIT_FAILURE),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { config, out } => config.resolve().and_then(|cfg| cmd_train(&cfg, &out)),
        Command::Params { config, json } => config.resolve().and_then(|cfg| cmd_params(&cfg, json)),
        Command::Verify { seed } => Ok(cmd_verify(seed)),
        Command::Decode {
            checkpoint,
            source,
            config,
        } => cmd_decode(&checkpoint, &source, config.as_deref()),
        Command::GenData { config, val, out } => config
            .resolve()
            .and_then(|cfg| cmd_gen_data(&cfg, val, out.as_deref())),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_FAILURE),
        Err(e) => exit_for(&e),
    }
}

/// Fails when a target metric was set and not reached.
fn cmd_train(cfg: &TrainConfig, out: &Path) -> Result<bool, Error> {
    let report = train::train(cfg, Some(out))?.report;
    let p = &report.params;
    println!("{} {} {}", cfg.task.name(), cfg.model.name(), cfg.variant);
    println!(
        "steps        {}{}",
        report.steps_run,
        if report.stopped_early {
            " (target reached)"
        } else {
            ""
        }
    );
    println!("final loss   {:.6}", report.final_loss);
    println!("{:<12} {:.4}", report.metric_name, report.final_metric);
    println!(
        "params       {} total, {} transform weights",
        p.count.total(),
        p.count.weights()
    );
    println!("vs real      {} on weights", p.weight_ratio);
    println!("wall clock   {:.1}s", report.wall_clock_secs);
    println!("run dir      {}", out.display());
    Ok(cfg.target_metric.is_none_or(|t| report.final_metric >= t))
}

/// Fails when a quaternion model does not have exactly a quarter of the
/// reference's transform weights.
fn cmd_params(cfg: &TrainConfig, json: bool) -> Result<bool, Error> {
    let report = train::param_report(cfg)?;
    let quarter_ok = cfg.variant != Variant::Full || report.summary.weight_ratio.is_quarter();
    if json {
        println!("{}", report.to_json());
        return Ok(quarter_ok);
    }
    println!(
        "{:<32} {:>10} {:>10} {:>10}",
        "layer", "weights", "other", "total"
    );
    for row in &report.layers {
        let weights = row
            .by_role
            .get(&quatnn::layers::ParamRole::Transform)
            .copied()
            .unwrap_or(0);
        println!(
            "{:<32} {:>10} {:>10} {:>10}",
            row.layer,
            weights,
            row.total - weights,
            row.total
        );
    }
    let s = &report.summary;
    println!();
    println!("{:<10} {:>10} {:>10}", "", "total", "weights");
    println!(
        "{:<10} {:>10} {:>10}",
        cfg.variant.to_string(),
        s.count.total(),
        s.count.weights()
    );
    println!(
        "{:<10} {:>10} {:>10}",
        "real",
        s.reference.total(),
        s.reference.weights()
    );
    println!();
    for v in &report.variants {
        println!(
            "{:<8} weight ratio {}",
            v.variant.to_string(),
            v.weight_ratio
        );
    }
    if !quarter_ok {
        println!(
            "FAIL full variant weight ratio is {}, not 1/4",
            s.weight_ratio
        );
    }
    Ok(quarter_ok)
}

fn cmd_verify(seed: u64) -> bool {
    let report = verify::run_all(seed);
    for c in &report.checks {
        println!("{c}");
    }
    let failed = report.failures().count();
    println!("{} checks, {} failed", report.checks.len(), failed);
    failed == 0
}

fn cmd_decode(checkpoint: &Path, source: &str, config: Option<&Path>) -> Result<bool, Error> {
    if source.is_empty() {
        return Err(Error::Contract("empty source".into()));
    }
    if !checkpoint.is_file() {
        let msg = format!("checkpoint {} not found", checkpoint.display());
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            msg,
        )));
    }
    let cfg = match config {
        Some(path) => TrainConfig::load(path)?,
        None => {
            let dir = checkpoint.parent().unwrap_or(Path::new("."));
            TrainConfig::load(&dir.join("config.txt"))?
        }
    };
    let mut model = Model::build(&cfg)?;
    quatnn::layers::checkpoint::load(model.params_mut(), checkpoint)?;
    println!("{}", model.decode(source)?);
    Ok(true)
}

fn cmd_gen_data(cfg: &TrainConfig, val: bool, out: Option<&Path>) -> Result<bool, Error> {
    let data = Dataset::generate(cfg)?;
    let tsv = if val {
        data.val.to_tsv()
    } else {
        data.train.to_tsv()
    };
    match out {
        Some(path) => fs::write(path, tsv)?,
        None => print!("{tsv}"),
    }
    Ok(true)
}
