//! Experiment configuration (JSON, versioned).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, DEFAULT_BATCH_SIZE};
use crate::distributions::BetaHyperPrior;
use crate::error::{Error, Result};
use crate::network::Regularizer;
use crate::numerics::RngState;
use crate::optim::OptimizerKind;

pub const SCHEMA_VERSION: u32 = 1;
const DATA_STREAM: u64 = 0xDA7A;

/// A regularization method with its rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    None,
    /// Drop probability of each input unit.
    Dropout(f64),
    /// Keep probability of each connection.
    DropConnect(f64),
    DropConnectPP,
}

impl Method {
    pub fn label(&self) -> &'static str {
        self.regularizer().label()
    }

    pub fn regularizer(&self) -> Regularizer {
        match *self {
            Method::None => Regularizer::None,
            Method::Dropout(rate) => Regularizer::Dropout { rate },
            Method::DropConnect(keep_prob) => Regularizer::DropConnect { keep_prob },
            Method::DropConnectPP => Regularizer::DropConnectPP,
        }
    }

    /// Label safe for file names.
    pub fn file_stem(&self) -> &'static str {
        match self {
            Method::DropConnectPP => "dropconnectpp",
            m => m.label(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Method::Dropout(r) if !(0.0..1.0).contains(&r) => {
                Err(Error::Config(format!("dropout rate {r} outside [0, 1)")))
            }
            Method::DropConnect(p) if !(p > 0.0 && p <= 1.0) => {
                Err(Error::Config(format!("dropconnect keep probability {p} outside (0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    /// `none`, `dropout`, `dropout(0.3)`, `dropconnect`, `dropconnect(0.5)`,
    /// `dropconnect++`. Bare baselines default to 0.5.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once('(') {
            Some((name, rest)) => {
                let inner = rest
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Config(format!("unbalanced parentheses in method {s:?}")))?;
                let v: f64 = inner
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad rate in method {s:?}")))?;
                (name.trim(), Some(v))
            }
            None => (s, None),
        };
        let m = match (name, arg) {
            ("none", None) => Method::None,
            ("dropout", a) => Method::Dropout(a.unwrap_or(0.5)),
            ("dropconnect", a) => Method::DropConnect(a.unwrap_or(0.5)),
            ("dropconnect++", None) => Method::DropConnectPP,
            _ => return Err(Error::Config(format!("unknown method {s:?}"))),
        };
        m.validate()?;
        Ok(m)
    }
}

impl TryFrom<String> for Method {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Dropout(r) => write!(f, "dropout({r})"),
            Method::DropConnect(p) => write!(f, "dropconnect({p})"),
            m => f.write_str(m.label()),
        }
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PredictionMode {
    #[default]
    MeanField,
    MonteCarlo(usize),
}

impl FromStr for PredictionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "meanfield" {
            return Ok(Self::MeanField);
        }
        s.strip_prefix("mc:")
            .and_then(|l| l.parse().ok())
            .filter(|&l: &usize| l > 0)
            .map(Self::MonteCarlo)
            .ok_or_else(|| Error::Config(format!("prediction mode {s:?} is not meanfield or mc:L with L ≥ 1")))
    }
}

impl TryFrom<String> for PredictionMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for PredictionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::MeanField => f.write_str("meanfield"),
            Self::MonteCarlo(l) => write!(f, "mc:{l}"),
        }
    }
}

impl From<PredictionMode> for String {
    fn from(m: PredictionMode) -> String {
        m.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    TwoGaussians,
    Spirals,
}

/// Where the data comes from. Relative paths resolve against the config
/// file's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        #[serde(default)]
        train_subset: Option<usize>,
        #[serde(default)]
        test_subset: Option<usize>,
        #[serde(default = "yes")]
        normalize: bool,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default)]
        label_column: usize,
        #[serde(default)]
        has_header: bool,
        #[serde(default)]
        normalize: bool,
    },
    Synthetic {
        generator: Generator,
        n_train: usize,
        n_test: usize,
        #[serde(default = "default_dims")]
        dims: usize,
        #[serde(default = "default_classes")]
        classes: usize,
        /// Blob separation for two-Gaussians, jitter for spirals.
        #[serde(default = "default_spread")]
        spread: f64,
    },
}

fn yes() -> bool {
    true
}
fn default_dims() -> usize {
    2
}
fn default_classes() -> usize {
    2
}
fn default_spread() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
}

impl DatasetSpec {
    /// Loads (or generates) both splits; all randomness derives from
    /// `base_seed`, so every run of one config sees identical data.
    pub fn load(&self, base_dir: &Path, base_seed: u64) -> Result<Splits> {
        let mut rng = RngState::from_parts(&[base_seed, DATA_STREAM]);
        let at = |p: &PathBuf| base_dir.join(p);
        let (mut train, mut test, normalize) = match self {
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_subset,
                test_subset,
                normalize,
            } => {
                let mut train = data::load_idx(at(train_images), at(train_labels))?;
                let mut test = data::load_idx(at(test_images), at(test_labels))?;
                let classes = train.n_classes().max(test.n_classes());
                train = Dataset::new(train.features().clone(), train.labels().to_vec(), classes)?;
                test = Dataset::new(test.features().clone(), test.labels().to_vec(), classes)?;
                if let Some(n) = train_subset {
                    train = data::subset(&train, *n, &mut rng)?;
                }
                if let Some(n) = test_subset {
                    test = data::subset(&test, *n, &mut rng)?;
                }
                (train, test, *normalize)
            }
            DatasetSpec::Csv {
                train,
                test,
                label_column,
                has_header,
                normalize,
            } => {
                let a = data::load_csv(at(train), *label_column, *has_header)?;
                let b = data::load_csv(at(test), *label_column, *has_header)?;
                let classes = a.n_classes().max(b.n_classes());
                (
                    Dataset::new(a.features().clone(), a.labels().to_vec(), classes)?,
                    Dataset::new(b.features().clone(), b.labels().to_vec(), classes)?,
                    *normalize,
                )
            }
            DatasetSpec::Synthetic {
                generator,
                n_train,
                n_test,
                dims,
                classes,
                spread,
            } => {
                let make = |n: usize, rng: &mut RngState| match generator {
                    Generator::TwoGaussians => data::two_gaussians(n, *dims, *spread, rng),
                    Generator::Spirals => data::spirals(n, *classes, *spread, rng),
                };
                (make(*n_train, &mut rng)?, make(*n_test, &mut rng)?, false)
            }
        };
        if train.n_features() != test.n_features() {
            return Err(Error::Config(format!(
                "train has {} features but test has {}",
                train.n_features(),
                test.n_features()
            )));
        }
        if normalize {
            train = data::normalize_per_example(&train)?;
            test = data::normalize_per_example(&test)?;
        }
        Ok(Splits { train, test })
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}
fn default_methods() -> Vec<Method> {
    vec![
        Method::None,
        Method::Dropout(0.5),
        Method::DropConnect(0.5),
        Method::DropConnectPP,
    ]
}
fn default_epochs() -> usize {
    30
}
fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adagrad
}
fn default_grid() -> Vec<f64> {
    vec![0.005, 0.01, 0.05]
}
fn one() -> usize {
    1
}
fn default_seeds() -> usize {
    10
}
fn default_cv_decay() -> f64 {
    0.99
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_grid")]
    pub stepsize_grid: Vec<f64>,
    /// Mask samples per gradient step.
    #[serde(default = "one")]
    pub l_train: usize,
    /// Mask samples for the per-epoch ELBO estimate.
    #[serde(default = "one")]
    pub l_eval: usize,
    #[serde(default = "PredictionMode::default")]
    pub prediction: PredictionMode,
    #[serde(default)]
    pub prior: BetaHyperPrior,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Share initial weights and batch order across methods per seed.
    #[serde(default = "yes")]
    pub paired: bool,
    #[serde(default = "default_cv_decay")]
    pub cv_decay: f64,
    /// Also mask the softmax output layer.
    #[serde(default)]
    pub include_output: bool,
    /// Write one model file per run.
    #[serde(default = "yes")]
    pub save_models: bool,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
}

fn default_bins() -> usize {
    20
}

impl TrainConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.methods.is_empty() {
            return fail("no methods requested".into());
        }
        for m in &self.methods {
            m.validate()?;
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].iter().any(|o| o.label() == m.label()) {
                return fail(format!("method {} listed twice", m.label()));
            }
        }
        if self.hidden.contains(&0) {
            return fail("hidden layer widths must be positive".into());
        }
        if self.epochs == 0 || self.batch_size == 0 || self.seeds == 0 {
            return fail("epochs, batch_size and seeds must be positive".into());
        }
        if self.l_train == 0 || self.l_eval == 0 {
            return fail("l_train and l_eval must be positive".into());
        }
        if self.stepsize_grid.is_empty() || self.stepsize_grid.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return fail("stepsize_grid must be a non-empty list of positive numbers".into());
        }
        if !(self.prior.alpha > 0.0 && self.prior.beta > 0.0) {
            return fail("prior shapes must be positive".into());
        }
        if !(self.cv_decay > 0.0 && self.cv_decay <= 1.0) {
            return fail(format!("cv_decay {} outside (0, 1]", self.cv_decay));
        }
        if self.histogram_bins == 0 {
            return fail("histogram_bins must be positive".into());
        }
        if let DatasetSpec::Synthetic {
            n_train,
            n_test,
            dims,
            classes,
            ..
        } = self.dataset
        {
            if n_train == 0 || n_test == 0 || dims == 0 || classes < 2 {
                return fail("synthetic data needs n_train, n_test, dims ≥ 1 and classes ≥ 2".into());
            }
        }
        Ok(())
    }

    /// Index of `dropconnect++` in `methods`, if requested.
    pub fn reference_method(&self) -> Option<usize> {
        self.methods.iter().position(|m| *m == Method::DropConnectPP)
    }
}
