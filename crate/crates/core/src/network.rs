//! Feed-forward classifier assembled from [`DenseLayer`]s, each with its own
//! [`MaskMode`]. The output layer is a softmax over classes.

use serde::{Deserialize, Serialize};

use crate::distributions::BetaHyperPrior;
use crate::error::{Error, Result};
use crate::layers::{
    log_softmax_columns, Activation, DenseLayer, LayerGrads, LayerTrace, MaskMode,
    VariationalMaskParams,
};
use crate::numerics::{Matrix, RngState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub dense: DenseLayer,
    pub mode: MaskMode,
}

/// Regularization applied to the masked layers of a network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Regularizer {
    None,
    Dropout { rate: f64 },
    DropConnect { keep_prob: f64 },
    DropConnectPP,
}

impl Regularizer {
    pub fn label(&self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::Dropout { .. } => "dropout",
            Regularizer::DropConnect { .. } => "dropconnect",
            Regularizer::DropConnectPP => "dropconnect++",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].dense.out_dim() != pair[1].dense.in_dim() {
                return Err(Error::shape(
                    "Network::new",
                    format!(
                        "layer {k} outputs {} but layer {} expects {}",
                        pair[0].dense.out_dim(),
                        k + 1,
                        pair[1].dense.in_dim()
                    ),
                ));
            }
        }
        let last = &layers[layers.len() - 1].dense;
        if last.activation != Activation::Softmax {
            return Err(Error::InvalidArgument("output layer must use softmax".into()));
        }
        Ok(Self { layers })
    }

    /// Glorot-initialized ReLU MLP with a softmax output; every mode `None`.
    pub fn mlp(input_dim: usize, hidden: &[usize], n_classes: usize, rng: &mut RngState) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(n_classes);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, d)| {
                let act = if k + 2 == dims.len() {
                    Activation::Softmax
                } else {
                    Activation::Relu
                };
                Layer {
                    dense: DenseLayer::glorot(d[0], d[1], act, rng),
                    mode: MaskMode::None,
                }
            })
            .collect();
        Self { layers }
    }

    /// Installs `reg` on every hidden layer, and on the output layer too when
    /// `include_output` is set.
    pub fn with_regularizer(
        mut self,
        reg: Regularizer,
        prior: BetaHyperPrior,
        include_output: bool,
    ) -> Result<Self> {
        let n = self.layers.len();
        for (k, layer) in self.layers.iter_mut().enumerate() {
            if k + 1 == n && !include_output {
                continue;
            }
            layer.mode = match reg {
                Regularizer::None => MaskMode::None,
                Regularizer::Dropout { rate } => MaskMode::Dropout { rate },
                Regularizer::DropConnect { keep_prob } => MaskMode::DropConnect { keep_prob },
                Regularizer::DropConnectPP => MaskMode::DropConnectPP(VariationalMaskParams::new(
                    layer.dense.out_dim(),
                    layer.dense.in_dim(),
                    prior,
                )?),
            };
        }
        Ok(self)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].dense.in_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].dense.out_dim()
    }

    pub fn variational_layers(&self) -> impl Iterator<Item = (usize, &VariationalMaskParams)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(k, l)| l.mode.variational().map(|p| (k, p)))
    }

    pub fn has_variational_layers(&self) -> bool {
        self.variational_layers().next().is_some()
    }

    /// Number of connections (weights plus biases) carrying a learned mask.
    pub fn synapse_count(&self) -> usize {
        self.variational_layers().map(|(_, p)| p.len()).sum()
    }

    /// (Σ KL_bernoulli, Σ KL_beta) over every learned mask.
    pub fn kl_totals(&self) -> (f64, f64) {
        self.variational_layers()
            .map(|(_, p)| p.kl_totals())
            .fold((0.0, 0.0), |acc, kl| (acc.0 + kl.0, acc.1 + kl.1))
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() != self.input_dim() {
            return Err(Error::shape(
                "Network::forward",
                format!("input has {} features, network expects {}", x.rows(), self.input_dim()),
            ));
        }
        Ok(())
    }

    /// One full-network mask draw. `x` is `(features × batch)`.
    pub fn forward_sampled(&self, x: &Matrix, rng: &mut RngState) -> Result<NetworkTrace> {
        self.check_input(x)?;
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut v = x.clone();
        for layer in &self.layers {
            let (out, trace) = layer.dense.forward_sampled(&layer.mode, &v, rng)?;
            traces.push(trace);
            v = out;
        }
        Ok(NetworkTrace { layers: traces })
    }

    /// Class probabilities with every mask replaced by its expectation.
    pub fn forward_meanfield(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut v = x.clone();
        for layer in &self.layers {
            v = layer.dense.forward_meanfield(&layer.mode, &v)?;
        }
        Ok(v)
    }

    /// Class probabilities averaged over `samples` independent mask draws.
    pub fn predict_mc(&self, x: &Matrix, samples: usize, rng: &mut RngState) -> Result<Matrix> {
        if samples == 0 {
            return Err(Error::InvalidArgument("MC prediction needs at least one sample".into()));
        }
        let mut acc = Matrix::zeros(self.n_classes(), x.cols());
        for _ in 0..samples {
            let trace = self.forward_sampled(x, rng)?;
            acc.add_scaled(trace.probabilities(), 1.0)?;
        }
        acc.scale(1.0 / samples as f64);
        Ok(acc)
    }

    /// Backpropagates `upstream`, the gradient with respect to the output
    /// logits, through the masks recorded in `trace`.
    pub fn backward(&self, trace: &NetworkTrace, upstream: Matrix) -> Result<Vec<LayerGrads>> {
        if trace.layers.len() != self.layers.len() {
            return Err(Error::shape("Network::backward", "trace depth differs from network"));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream;
        for (k, (layer, t)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            let lg = layer.dense.backward_impl(t, &g, k > 0)?;
            if let Some(gi) = &lg.grad_input {
                g = gi.clone();
            }
            grads.push(lg);
        }
        grads.reverse();
        Ok(grads)
    }
}

/// Per-layer traces of one full-network stochastic pass.
#[derive(Clone, Debug)]
pub struct NetworkTrace {
    pub layers: Vec<LayerTrace>,
}

impl NetworkTrace {
    pub fn logits(&self) -> &Matrix {
        &self.layers[self.layers.len() - 1].pre_activation
    }

    pub fn probabilities(&self) -> &Matrix {
        &self.layers[self.layers.len() - 1].output
    }

    /// ln p(y_n | x_n, Z) for every column.
    pub fn log_likelihoods(&self, labels: &[usize]) -> Result<Vec<f64>> {
        per_example_log_likelihood(self.logits(), labels)
    }
}

pub fn per_example_log_likelihood(logits: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(logits, labels)?;
    let log_p = log_softmax_columns(logits);
    Ok(labels.iter().enumerate().map(|(n, &y)| log_p[(y, n)]).collect())
}

/// `scale * (onehot(y) − p)`: the gradient of `scale * Σ ln p(y_n)` with
/// respect to the output logits.
pub fn log_likelihood_logit_grad(probs: &Matrix, labels: &[usize], scale: f64) -> Result<Matrix> {
    check_labels(probs, labels)?;
    let mut g = probs.map(|p| -scale * p);
    for (n, &y) in labels.iter().enumerate() {
        g[(y, n)] += scale;
    }
    Ok(g)
}

fn check_labels(m: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != m.cols() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: m.cols(),
        });
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= m.rows()) {
        return Err(Error::InvalidArgument(format!(
            "label {y} out of range for {} classes",
            m.rows()
        )));
    }
    Ok(())
}

/// Index of the largest entry in each column.
pub fn argmax_columns(m: &Matrix) -> Vec<usize> {
    (0..m.cols())
        .map(|j| {
            let mut best = 0;
            for i in 1..m.rows() {
                if m[(i, j)] > m[(best, j)] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Percentage of columns whose argmax equals the label.
pub fn accuracy_percent(probs: &Matrix, labels: &[usize]) -> f64 {
    let preds = argmax_columns(probs);
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    100.0 * hits as f64 / labels.len().max(1) as f64
}
