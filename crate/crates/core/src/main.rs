use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use bmn::harness::{
    histogram_csv, load_model, parse_convergence_csv, pi_histogram, predict, run_experiment, ComparisonReport, Method,
    PredictionMode, TrainConfig,
};
use bmn::{Error, Result};

#[derive(Parser)]
#[command(name = "bmn", version, about = "Train and evaluate networks with learned connection masks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Design {
    /// Share initial weights and batch order across methods per seed
    #[arg(long, overrides_with = "unpaired")]
    paired: bool,
    /// Independent initialization per method
    #[arg(long)]
    unpaired: bool,
}

impl Design {
    fn resolve(&self, default: bool) -> bool {
        match (self.paired, self.unpaired) {
            (true, _) => true,
            (_, true) => false,
            _ => default,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured method × seed; writes runs.csv, summary.json,
    /// model files and π̃ histograms
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the seed count
        #[arg(long)]
        seeds: Option<usize>,
        /// Restrict to these methods (repeatable), e.g. `dropconnect++`, `dropout(0.3)`
        #[arg(long = "method")]
        methods: Vec<Method>,
        #[command(flatten)]
        design: Design,
    },
    /// Evaluate a saved model on the test split of a config's dataset
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// `meanfield` or `mc:L`
        #[arg(long, default_value = "meanfield")]
        mode: PredictionMode,
        /// Seed for MC mask sampling
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write per-example predictions (CSV) here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histogram of learned keep probabilities π̃ in a saved model
    Histogram {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Output CSV (stdout if omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute the comparison table from an output directory's runs.csv
    Report {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        design: Design,
    },
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            out,
            seeds,
            methods,
            design,
        } => {
            let mut cfg = TrainConfig::load(&config)?;
            if let Some(n) = seeds {
                cfg.seeds = n;
            }
            if !methods.is_empty() {
                cfg.methods = methods;
            }
            cfg.paired = design.resolve(cfg.paired);
            let outcome = run_experiment(&cfg, &config_dir(&config), &out)?;
            print!("{}", outcome.report.render());
            println!("wrote {} and {}", outcome.runs_csv.display(), outcome.summary_json.display());
        }
        Command::Predict {
            model,
            config,
            mode,
            seed,
            out,
        } => {
            let cfg = TrainConfig::load(&config)?;
            let splits = cfg.dataset.load(&config_dir(&config), cfg.base_seed)?;
            let pred = predict(&model, &splits.test, mode, seed)?;
            println!("accuracy {} ({mode}, {} examples)", pred.accuracy, pred.predictions.len());
            if let Some(path) = out {
                let mut text = String::from("index,label,prediction\n");
                for (i, (p, y)) in pred.predictions.iter().zip(splits.test.labels()).enumerate() {
                    text.push_str(&format!("{i},{y},{p}\n"));
                }
                write_file(&path, &text)?;
            }
        }
        Command::Histogram { model, bins, out } => {
            let net = load_model(&model)?;
            let text = histogram_csv(&pi_histogram(&net, bins)?);
            match out {
                Some(path) => write_file(&path, &text)?,
                None => {
                    let _ = std::io::stdout().write_all(text.as_bytes());
                }
            }
        }
        Command::Report { out, design } => {
            let path = out.join("runs.csv");
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Io { path, source: e })?;
            let runs = parse_convergence_csv(&text)?;
            print!("{}", ComparisonReport::from_runs(&runs, design.resolve(true)).render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
