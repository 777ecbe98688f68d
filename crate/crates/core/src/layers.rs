//! Dense layers with optional stochastic masking.
//!
//! Activations are laid out feature-major: a batch is a `(features × batch)`
//! matrix, so a layer computes `a(W v + b)` with `W` of shape `(out × in)`.
//! Connection masks cover the weights and the bias as one `(out × (in + 1))`
//! grid whose last column belongs to the bias.

use serde::{Deserialize, Serialize};

use crate::distributions::{
    kl_bernoulli_vs_hierarchical, kl_beta, kl_gradients, BernoulliParam, BetaHyperPrior, BetaParam,
    KlGradient,
};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
    /// Column-wise softmax. Backward passes expect the upstream gradient
    /// with respect to the pre-activation (softmax and cross-entropy fused).
    Softmax,
}

impl Activation {
    fn apply(self, pre: &Matrix) -> Matrix {
        match self {
            Activation::Relu => pre.map(|x| x.max(0.0)),
            Activation::Identity => pre.clone(),
            Activation::Softmax => softmax_columns(pre),
        }
    }
}

pub fn softmax_columns(logits: &Matrix) -> Matrix {
    let (rows, cols) = logits.shape();
    let mut out = Matrix::zeros(rows, cols);
    for j in 0..cols {
        let max = (0..rows).map(|i| logits[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for i in 0..rows {
            let e = (logits[(i, j)] - max).exp();
            out[(i, j)] = e;
            sum += e;
        }
        for i in 0..rows {
            out[(i, j)] /= sum;
        }
    }
    out
}

/// Column-wise log-softmax via log-sum-exp.
pub fn log_softmax_columns(logits: &Matrix) -> Matrix {
    let (rows, cols) = logits.shape();
    let mut out = Matrix::zeros(rows, cols);
    for j in 0..cols {
        let max = (0..rows).map(|i| logits[(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + (0..rows).map(|i| (logits[(i, j)] - max).exp()).sum::<f64>().ln();
        for i in 0..rows {
            out[(i, j)] = logits[(i, j)] - lse;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape(
                "DenseLayer::new",
                format!("bias of length {} for {} outputs", bias.len(), weights.rows()),
            ));
        }
        weights.ensure_finite("DenseLayer weights")?;
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite {
                context: "DenseLayer bias".into(),
            });
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut RngState) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut weights = Matrix::zeros(out_dim, in_dim);
        for w in weights.as_mut_slice() {
            *w = rng.uniform_range(-limit, limit);
        }
        Self {
            weights,
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    fn check_input(&self, v: &Matrix, op: &'static str) -> Result<()> {
        if v.rows() != self.in_dim() {
            return Err(Error::shape(
                op,
                format!("input has {} rows, layer expects {}", v.rows(), self.in_dim()),
            ));
        }
        Ok(())
    }

    fn affine(&self, weights: &Matrix, bias: &[f64], v: &Matrix) -> Result<Matrix> {
        let mut pre = weights.matmul(v)?;
        for (i, &b) in bias.iter().enumerate() {
            if b != 0.0 {
                for x in pre.row_mut(i) {
                    *x += b;
                }
            }
        }
        Ok(pre)
    }

    /// One stochastic pass: draws a single mask, applies it, and records it.
    pub fn forward_sampled(
        &self,
        mode: &MaskMode,
        v: &Matrix,
        rng: &mut RngState,
    ) -> Result<(Matrix, LayerTrace)> {
        self.check_input(v, "forward_sampled")?;
        mode.validate_for(self)?;
        let (pre, mask, unit_mask, effective) = match mode {
            MaskMode::None => (self.affine(&self.weights, &self.bias, v)?, None, None, None),
            MaskMode::Dropout { rate } => {
                let keep = 1.0 - rate;
                let mut units = Matrix::zeros(v.rows(), v.cols());
                for u in units.as_mut_slice() {
                    if rng.bernoulli(keep) {
                        *u = 1.0 / keep;
                    }
                }
                let dropped = v.hadamard(&units)?;
                let pre = self.affine(&self.weights, &self.bias, &dropped)?;
                (pre, None, Some(units), Some(dropped))
            }
            MaskMode::DropConnect { keep_prob } => {
                let mut z = Matrix::zeros(self.out_dim(), self.in_dim() + 1);
                for m in z.as_mut_slice() {
                    *m = if rng.bernoulli(*keep_prob) { 1.0 } else { 0.0 };
                }
                let (w, b) = self.masked_parameters(&z);
                (self.affine(&w, &b, v)?, Some((z, w)), None, None)
            }
            MaskMode::DropConnectPP(params) => {
                let z = params.sample_mask(rng);
                let (w, b) = self.masked_parameters(&z);
                (self.affine(&w, &b, v)?, Some((z, w)), None, None)
            }
        };
        let output = self.activation.apply(&pre);
        let (mask, masked_weights) = match mask {
            Some((z, w)) => (Some(z), Some(w)),
            None => (None, None),
        };
        Ok((
            output.clone(),
            LayerTrace {
                input: effective.unwrap_or_else(|| v.clone()),
                pre_activation: pre,
                output,
                mask,
                masked_weights,
                unit_mask,
            },
        ))
    }

    /// Deterministic pass with the mask replaced by its expectation.
    pub fn forward_meanfield(&self, mode: &MaskMode, v: &Matrix) -> Result<Matrix> {
        self.check_input(v, "forward_meanfield")?;
        mode.validate_for(self)?;
        let pre = match mode {
            // inverted scaling makes the expected unit mask exactly one
            MaskMode::None | MaskMode::Dropout { .. } => self.affine(&self.weights, &self.bias, v)?,
            MaskMode::DropConnect { keep_prob } => {
                let mut w = self.weights.clone();
                w.scale(*keep_prob);
                let b: Vec<f64> = self.bias.iter().map(|b| b * keep_prob).collect();
                self.affine(&w, &b, v)?
            }
            MaskMode::DropConnectPP(params) => {
                let (w, b) = self.masked_parameters(&params.keep_probs());
                self.affine(&w, &b, v)?
            }
        };
        Ok(self.activation.apply(&pre))
    }

    /// `(Z_w ∘ W, z_b ∘ b)` for a `(out × (in + 1))` grid.
    fn masked_parameters(&self, grid: &Matrix) -> (Matrix, Vec<f64>) {
        let in_dim = self.in_dim();
        let mut w = self.weights.clone();
        let mut b = self.bias.clone();
        for i in 0..self.out_dim() {
            let g = grid.row(i);
            for (x, m) in w.row_mut(i).iter_mut().zip(&g[..in_dim]) {
                *x *= m;
            }
            b[i] *= g[in_dim];
        }
        (w, b)
    }

    /// Backpropagation through the mask realized in `trace`.
    pub fn backward_masked(&self, trace: &LayerTrace, upstream: &Matrix) -> Result<LayerGrads> {
        self.backward_impl(trace, upstream, true)
    }

    pub(crate) fn backward_impl(
        &self,
        trace: &LayerTrace,
        upstream: &Matrix,
        input_grad: bool,
    ) -> Result<LayerGrads> {
        if trace.pre_activation.rows() != self.out_dim() || trace.input.rows() != self.in_dim() {
            return Err(Error::shape(
                "backward_masked",
                "trace was not produced by this layer",
            ));
        }
        if upstream.shape() != trace.pre_activation.shape() {
            return Err(Error::shape(
                "backward_masked",
                format!(
                    "upstream {:?} vs output {:?}",
                    upstream.shape(),
                    trace.pre_activation.shape()
                ),
            ));
        }
        let delta = match self.activation {
            Activation::Relu => {
                let mut d = upstream.clone();
                for (g, &p) in d.as_mut_slice().iter_mut().zip(trace.pre_activation.as_slice()) {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                }
                d
            }
            Activation::Identity | Activation::Softmax => upstream.clone(),
        };
        let mut grad_w = delta.matmul_transposed(&trace.input)?;
        let mut grad_b = delta.row_sums();
        if let Some(z) = &trace.mask {
            let in_dim = self.in_dim();
            for i in 0..self.out_dim() {
                let zr = z.row(i);
                for (g, m) in grad_w.row_mut(i).iter_mut().zip(&zr[..in_dim]) {
                    *g *= m;
                }
                grad_b[i] *= zr[in_dim];
            }
        }
        let grad_input = if input_grad {
            let w = trace.masked_weights.as_ref().unwrap_or(&self.weights);
            let mut gi = w.transposed_matmul(&delta)?;
            if let Some(units) = &trace.unit_mask {
                gi = gi.hadamard(units)?;
            }
            Some(gi)
        } else {
            None
        };
        Ok(LayerGrads {
            grad_w,
            grad_b,
            grad_input,
        })
    }
}

#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub grad_w: Matrix,
    pub grad_b: Vec<f64>,
    /// `None` when the caller asked to skip the input gradient.
    pub grad_input: Option<Matrix>,
}

/// Everything a backward pass needs from one stochastic forward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Input actually multiplied by the weights (after unit dropout, if any).
    pub input: Matrix,
    pub pre_activation: Matrix,
    pub output: Matrix,
    /// Realized connection mask, `(out × (in + 1))`; `None` means all ones.
    pub mask: Option<Matrix>,
    pub masked_weights: Option<Matrix>,
    /// Scaled unit-dropout mask over the input, `(in × batch)`.
    pub unit_mask: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum MaskMode {
    None,
    /// Unit dropout on the layer input; `rate` is the drop probability.
    Dropout { rate: f64 },
    /// Fixed-probability connection masking over weights and bias.
    DropConnect { keep_prob: f64 },
    /// Learned per-connection keep probabilities with Beta hyper-posteriors.
    DropConnectPP(VariationalMaskParams),
}

impl MaskMode {
    pub fn validate_for(&self, layer: &DenseLayer) -> Result<()> {
        match self {
            MaskMode::None => Ok(()),
            MaskMode::Dropout { rate } if !(0.0..1.0).contains(rate) => Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {rate}"
            ))),
            MaskMode::DropConnect { keep_prob: p } if !(*p > 0.0 && *p <= 1.0) => Err(Error::InvalidArgument(
                format!("dropconnect keep probability must be in (0, 1], got {p}"),
            )),
            MaskMode::Dropout { .. } | MaskMode::DropConnect { .. } => Ok(()),
            MaskMode::DropConnectPP(params) => {
                if params.shape() == (layer.out_dim(), layer.in_dim() + 1) {
                    Ok(())
                } else {
                    Err(Error::shape(
                        "MaskMode::DropConnectPP",
                        format!(
                            "mask grid {:?} for a {}x{} layer",
                            params.shape(),
                            layer.out_dim(),
                            layer.in_dim()
                        ),
                    ))
                }
            }
        }
    }

    pub fn variational(&self) -> Option<&VariationalMaskParams> {
        match self {
            MaskMode::DropConnectPP(p) => Some(p),
            _ => None,
        }
    }

    pub fn variational_mut(&mut self) -> Option<&mut VariationalMaskParams> {
        match self {
            MaskMode::DropConnectPP(p) => Some(p),
            _ => None,
        }
    }
}

/// Per-connection variational parameters for one layer, bias column last.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalMaskParams {
    pub logits: Matrix,
    pub raw_a: Matrix,
    pub raw_b: Matrix,
    pub prior: BetaHyperPrior,
}

impl VariationalMaskParams {
    /// Keep probabilities start at 0.5 and hyper-posteriors at the prior.
    pub fn new(out_dim: usize, in_dim: usize, prior: BetaHyperPrior) -> Result<Self> {
        let init = BetaParam::from_shapes(prior.alpha, prior.beta)?;
        let cols = in_dim + 1;
        Ok(Self {
            logits: Matrix::zeros(out_dim, cols),
            raw_a: Matrix::filled(out_dim, cols, init.raw_a),
            raw_b: Matrix::filled(out_dim, cols, init.raw_b),
            prior,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.logits.shape()
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    #[inline]
    pub fn bernoulli_at(&self, k: usize) -> BernoulliParam {
        BernoulliParam::new(self.logits.as_slice()[k])
    }

    #[inline]
    pub fn beta_at(&self, k: usize) -> BetaParam {
        BetaParam::new(self.raw_a.as_slice()[k], self.raw_b.as_slice()[k])
    }

    /// Π̃ over the full grid.
    pub fn keep_probs(&self) -> Matrix {
        self.logits.map(|l| BernoulliParam::new(l).prob())
    }

    pub fn sample_mask(&self, rng: &mut RngState) -> Matrix {
        let mut z = Matrix::zeros(self.logits.rows(), self.logits.cols());
        for (m, &l) in z.as_mut_slice().iter_mut().zip(self.logits.as_slice()) {
            if rng.bernoulli(BernoulliParam::new(l).prob()) {
                *m = 1.0;
            }
        }
        z
    }

    /// (Σ KL_bernoulli, Σ KL_beta) over every connection.
    pub fn kl_totals(&self) -> (f64, f64) {
        let mut kl_bern = 0.0;
        let mut kl_b = 0.0;
        for k in 0..self.len() {
            let q = self.beta_at(k);
            kl_bern += kl_bernoulli_vs_hierarchical(self.bernoulli_at(k), q);
            kl_b += kl_beta(q, self.prior);
        }
        (kl_bern, kl_b)
    }

    pub fn kl_gradient_at(&self, k: usize) -> KlGradient {
        kl_gradients(self.bernoulli_at(k), self.beta_at(k), self.prior)
    }
}

/// π̃ for every connection (weights then bias, row by row).
pub fn mask_posterior_snapshot(params: &VariationalMaskParams) -> Vec<f64> {
    params.keep_probs().into_vec()
}
