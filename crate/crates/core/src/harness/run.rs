//! Multi-seed, multi-method training runs and prediction.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use super::config::{Method, PredictionMode, Splits, TrainConfig};
use super::model_io::{load_model, save_model};
use super::report::{emit_convergence_csv, histogram_csv, pi_histogram, ComparisonReport, EpochRecord, RunReport};
use crate::data::{BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::inference::{apply_gradients, elbo_estimate, score_function_grad, ControlVariates, Minibatch};
use crate::network::{accuracy_percent, argmax_columns, Network};
use crate::numerics::{Matrix, RngState};
use crate::optim::OptimizerState;

const INIT_STREAM: u64 = 1;
const BATCH_STREAM: u64 = 2;
const MASK_STREAM: u64 = 3;
const EVAL_STREAM: u64 = 4;

pub const THREADS_ENV: &str = "BMN_THREADS";

/// Random streams of one (method, seed) run. In a paired design the
/// initial weights and batch order depend only on the seed.
#[derive(Clone, Copy, Debug)]
struct Streams {
    base: u64,
    seed: u64,
    method: u64,
    paired: bool,
}

impl Streams {
    fn new(cfg: &TrainConfig, method_index: usize, seed: usize) -> Self {
        Self {
            base: cfg.base_seed,
            seed: seed as u64,
            method: method_index as u64,
            paired: cfg.paired,
        }
    }

    fn rng(&self, stream: u64) -> RngState {
        let shared = self.paired && matches!(stream, INIT_STREAM | BATCH_STREAM);
        if shared {
            RngState::from_parts(&[self.base, self.seed, stream])
        } else {
            RngState::from_parts(&[self.base, self.seed, stream, self.method + 1])
        }
    }
}

struct Prepared {
    train_x: Matrix,
    train_y: Vec<usize>,
    test_x: Matrix,
    test_y: Vec<usize>,
}

impl Prepared {
    fn new(splits: &Splits) -> Self {
        let (train_x, train_y) = splits.train.all();
        let (test_x, test_y) = splits.test.all();
        Self {
            train_x,
            train_y,
            test_x,
            test_y,
        }
    }
}

/// Class probabilities under `mode`, one column per example.
pub fn predict_probabilities(
    net: &Network,
    x: &Matrix,
    mode: PredictionMode,
    rng: &mut RngState,
) -> Result<Matrix> {
    match mode {
        PredictionMode::MeanField => net.forward_meanfield(x),
        PredictionMode::MonteCarlo(l) => net.predict_mc(x, l, rng),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

/// Accuracy (percent) and predicted classes of `net` on `ds`.
pub fn predict_dataset(net: &Network, ds: &Dataset, mode: PredictionMode, rng: &mut RngState) -> Result<Prediction> {
    if ds.n_features() != net.input_dim() {
        return Err(Error::shape(
            "predict",
            format!("dataset has {} features, model expects {}", ds.n_features(), net.input_dim()),
        ));
    }
    let (x, y) = ds.all();
    let probs = predict_probabilities(net, &x, mode, rng)?;
    Ok(Prediction {
        accuracy: accuracy_percent(&probs, &y),
        predictions: argmax_columns(&probs),
    })
}

/// Loads a model file and predicts on `ds`.
pub fn predict(model_path: impl AsRef<Path>, ds: &Dataset, mode: PredictionMode, seed: u64) -> Result<Prediction> {
    let net = load_model(model_path)?;
    predict_dataset(&net, ds, mode, &mut RngState::new(seed))
}

/// Trains `net` in place for `epochs` epochs; records per-epoch metrics when
/// `record` is set.
#[allow(clippy::too_many_arguments)]
fn train_epochs(
    net: &mut Network,
    data: &Prepared,
    splits: &Splits,
    cfg: &TrainConfig,
    stepsize: f64,
    epochs: usize,
    streams: Streams,
    record: bool,
) -> Result<Vec<EpochRecord>> {
    let mut batch_rng = streams.rng(BATCH_STREAM);
    let mut mask_rng = streams.rng(MASK_STREAM);
    let mut eval_rng = streams.rng(EVAL_STREAM);
    let mut opt = OptimizerState::new(cfg.optimizer, stepsize)?;
    let mut cvs = ControlVariates::adaptive(net, cfg.cv_decay);
    let plan = BatchPlan::new(splits.train.len(), cfg.batch_size)?;
    let n = splits.train.len();
    let mut records = Vec::new();
    for epoch in 1..=epochs {
        let start = Instant::now();
        for idx in plan.epoch(&mut batch_rng) {
            let (x, y) = splits.train.batch(&idx);
            let batch = Minibatch::new(&x, &y, n)?;
            let grads = score_function_grad(net, &batch, cfg.l_train, &mut cvs, &mut mask_rng)?;
            apply_gradients(net, &grads, &mut opt)?;
        }
        if record {
            let train_acc = accuracy_percent(&net.forward_meanfield(&data.train_x)?, &data.train_y);
            let probs = predict_probabilities(net, &data.test_x, cfg.prediction, &mut eval_rng)?;
            let test_acc = accuracy_percent(&probs, &data.test_y);
            let full = Minibatch::new(&data.train_x, &data.train_y, n)?;
            let elbo = elbo_estimate(net, &full, cfg.l_eval, &mut eval_rng)?.elbo;
            if !elbo.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("ELBO after epoch {epoch}"),
                });
            }
            log::debug!("epoch {epoch}: train {train_acc:.2} test {test_acc:.2} elbo {elbo:.3}");
            records.push(EpochRecord {
                epoch,
                train_acc,
                test_acc,
                elbo,
                seconds: start.elapsed().as_secs_f64(),
            });
        }
    }
    Ok(records)
}

/// Picks the grid stepsize with the best training accuracy after one epoch
/// (first wins ties). Each candidate starts from `initial`.
fn select_stepsize(
    initial: &Network,
    data: &Prepared,
    splits: &Splits,
    cfg: &TrainConfig,
    streams: Streams,
) -> Result<f64> {
    if let [only] = cfg.stepsize_grid[..] {
        return Ok(only);
    }
    let mut best: Option<(f64, f64)> = None;
    for &eta in &cfg.stepsize_grid {
        let mut net = initial.clone();
        let acc = match train_epochs(&mut net, data, splits, cfg, eta, 1, streams, false) {
            Ok(_) => accuracy_percent(&net.forward_meanfield(&data.train_x)?, &data.train_y),
            Err(e) => {
                log::warn!("stepsize {eta} failed during selection: {e}");
                continue;
            }
        };
        if best.is_none_or(|(a, _)| acc > a) {
            best = Some((acc, eta));
        }
    }
    best.map(|b| b.1)
        .ok_or_else(|| Error::NonFinite {
            context: "every stepsize in the grid failed".into(),
        })
}

/// Initial network for one run: Glorot draw from the init stream, then the
/// method's masking.
pub fn initial_network(
    cfg: &TrainConfig,
    method_index: usize,
    seed: usize,
    input_dim: usize,
    n_classes: usize,
) -> Result<Network> {
    let method = *cfg
        .methods
        .get(method_index)
        .ok_or_else(|| Error::InvalidArgument(format!("no method at index {method_index}")))?;
    let mut rng = Streams::new(cfg, method_index, seed).rng(INIT_STREAM);
    Network::mlp(input_dim, &cfg.hidden, n_classes, &mut rng).with_regularizer(
        method.regularizer(),
        cfg.prior,
        cfg.include_output,
    )
}

pub fn model_file_name(method: Method, seed: usize) -> String {
    format!("model_{}_seed{seed}.bmn", method.file_stem())
}

pub fn histogram_file_name(seed: usize) -> String {
    format!("pi_histogram_seed{seed}.csv")
}

fn run_one(
    cfg: &TrainConfig,
    splits: &Splits,
    data: &Prepared,
    method_index: usize,
    seed: usize,
    out_dir: Option<&Path>,
) -> RunReport {
    let method = cfg.methods[method_index];
    let mut report = RunReport {
        method: method.label().to_string(),
        seed,
        stepsize: None,
        epochs: Vec::new(),
        error: None,
    };
    let streams = Streams::new(cfg, method_index, seed);
    let result = (|| -> Result<()> {
        let (inputs, classes) = (splits.train.n_features(), splits.train.n_classes());
        let initial = initial_network(cfg, method_index, seed, inputs, classes)?;
        let eta = select_stepsize(&initial, data, splits, cfg, streams)?;
        report.stepsize = Some(eta);
        let mut net = initial;
        report.epochs = train_epochs(&mut net, data, splits, cfg, eta, cfg.epochs, streams, true)?;
        if let Some(dir) = out_dir {
            if cfg.save_models {
                save_model(&net, dir.join(model_file_name(method, seed)))?;
            }
            if method == Method::DropConnectPP {
                let bins = pi_histogram(&net, cfg.histogram_bins)?;
                let path = dir.join(histogram_file_name(seed));
                std::fs::write(&path, histogram_csv(&bins)).map_err(|e| Error::io(path, e))?;
            }
        }
        Ok(())
    })();
    if let Err(e) = result {
        log::warn!("{} seed {seed} failed: {e}", method.label());
        report.error = Some(e.to_string());
    }
    report
}

/// Parallelism cap from `BMN_THREADS` (unset or invalid: rayon's default).
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunReport>,
    pub report: ComparisonReport,
    pub runs_csv: PathBuf,
    pub summary_json: PathBuf,
}

/// Trains every configured method × seed and writes `runs.csv`,
/// `summary.json`, model files and π̃ histograms into `out_dir`.
///
/// Relative dataset paths resolve against `base_dir`. Runs execute in
/// parallel but results are assembled in config order, so output bytes do
/// not depend on scheduling.
pub fn run_experiment(cfg: &TrainConfig, base_dir: &Path, out_dir: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let splits = cfg.dataset.load(base_dir, cfg.base_seed)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let data = Prepared::new(&splits);
    let tasks: Vec<(usize, usize)> = (0..cfg.methods.len())
        .flat_map(|m| (0..cfg.seeds).map(move |s| (m, s)))
        .collect();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let runs: Vec<RunReport> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(m, s)| run_one(cfg, &splits, &data, m, s, Some(out_dir)))
            .collect()
    });

    let report = ComparisonReport::from_runs(&runs, cfg.paired);
    let runs_csv = out_dir.join("runs.csv");
    std::fs::write(&runs_csv, emit_convergence_csv(&runs)).map_err(|e| Error::io(&runs_csv, e))?;
    let summary_json = out_dir.join("summary.json");
    std::fs::write(&summary_json, report.to_json()?).map_err(|e| Error::io(&summary_json, e))?;
    Ok(ExperimentOutcome {
        runs,
        report,
        runs_csv,
        summary_json,
    })
}
