//! Black-box variational inference for learned connection masks.
//!
//! The objective is
//!
//! ```text
//! ELBO = E_q[ln p(D | Z)] − Σ KL_bernoulli − Σ KL_beta
//! ```
//!
//! The likelihood expectation is estimated by Monte Carlo over full-network
//! mask draws, with minibatch log-likelihoods rescaled by `N / |B|`. The two
//! KL sums are closed form, and so are their gradients. Only the likelihood
//! term goes through the score-function estimator
//!
//! ```text
//! ∇_logit ≈ (1/L) Σ_l (ĝ_l − ϖ) (z_l − π̃)
//! ```
//!
//! where `ϖ` is a per-layer control-variate weight fitted from decayed
//! cross-iteration moments of `f = ĝ·h` and `h = z − π̃`. The weight used at
//! a step is fixed before that step's samples are drawn, so the estimator
//! stays unbiased.
//!
//! Weights and biases get ordinary backprop through each sampled mask.

use crate::error::{Error, Result};
use crate::network::{log_likelihood_logit_grad, Network, NetworkTrace};
use crate::numerics::{Matrix, RngState, CV_VARIANCE_FLOOR};
use crate::optim::OptimizerState;

/// Inputs are `(features × batch)`; `dataset_size` is N for the rescaling.
#[derive(Clone, Copy, Debug)]
pub struct Minibatch<'a> {
    pub inputs: &'a Matrix,
    pub labels: &'a [usize],
    pub dataset_size: usize,
}

impl<'a> Minibatch<'a> {
    pub fn new(inputs: &'a Matrix, labels: &'a [usize], dataset_size: usize) -> Result<Self> {
        if labels.is_empty() || inputs.cols() == 0 {
            return Err(Error::InvalidArgument("empty minibatch".into()));
        }
        if labels.len() != inputs.cols() {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: inputs.cols(),
            });
        }
        if dataset_size < labels.len() {
            return Err(Error::InvalidArgument(format!(
                "dataset size {dataset_size} smaller than minibatch {}",
                labels.len()
            )));
        }
        Ok(Self {
            inputs,
            labels,
            dataset_size,
        })
    }

    pub fn scale(&self) -> f64 {
        self.dataset_size as f64 / self.labels.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElboEstimate {
    pub likelihood_term: f64,
    pub kl_bernoulli_total: f64,
    pub kl_beta_total: f64,
    pub elbo: f64,
}

impl ElboEstimate {
    fn new(likelihood_term: f64, (kl_bernoulli_total, kl_beta_total): (f64, f64)) -> Self {
        Self {
            likelihood_term,
            kl_bernoulli_total,
            kl_beta_total,
            elbo: likelihood_term - kl_bernoulli_total - kl_beta_total,
        }
    }
}

fn sampled_log_likelihood(trace: &NetworkTrace, batch: &Minibatch<'_>, sample: usize) -> Result<f64> {
    let ll = trace.log_likelihoods(batch.labels)?;
    if let Some(n) = ll.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("log-likelihood of example {n} in mask sample {sample}"),
        });
    }
    Ok(batch.scale() * ll.iter().sum::<f64>())
}

fn check_samples(samples: usize) -> Result<()> {
    if samples == 0 {
        return Err(Error::InvalidArgument("sample count L must be at least 1".into()));
    }
    Ok(())
}

/// Monte Carlo ELBO over `samples` independent full-network mask draws.
pub fn elbo_estimate(
    net: &Network,
    batch: &Minibatch<'_>,
    samples: usize,
    rng: &mut RngState,
) -> Result<ElboEstimate> {
    check_samples(samples)?;
    let mut total = 0.0;
    for l in 0..samples {
        let trace = net.forward_sampled(batch.inputs, rng)?;
        total += sampled_log_likelihood(&trace, batch, l)?;
    }
    Ok(ElboEstimate::new(total / samples as f64, net.kl_totals()))
}

/// Exponentially decayed moments of `(f, h)` pairs for one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlVariateState {
    decay: f64,
    fixed: Option<f64>,
    updates: usize,
    w: f64,
    sum_f: f64,
    sum_h: f64,
    sum_fh: f64,
    sum_hh: f64,
}

impl ControlVariateState {
    /// Adaptive weight with moment decay `decay` in (0, 1].
    pub fn new(decay: f64) -> Self {
        assert!(decay > 0.0 && decay <= 1.0, "decay must be in (0, 1]");
        Self {
            decay,
            fixed: None,
            updates: 0,
            w: 0.0,
            sum_f: 0.0,
            sum_h: 0.0,
            sum_fh: 0.0,
            sum_hh: 0.0,
        }
    }

    /// A weight that never adapts.
    pub fn fixed(weight: f64) -> Self {
        Self {
            fixed: Some(weight),
            ..Self::new(1.0)
        }
    }

    /// No control variate (ϖ = 0).
    pub fn disabled() -> Self {
        Self::fixed(0.0)
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// Current ϖ = Cov(f, h) / Var(h). Zero until two updates have been
    /// folded in, or while Var(h) < 1e-12.
    pub fn weight(&self) -> f64 {
        if let Some(w) = self.fixed {
            return w;
        }
        if self.updates < 2 || self.w <= 0.0 {
            return 0.0;
        }
        let mf = self.sum_f / self.w;
        let mh = self.sum_h / self.w;
        let var = self.sum_hh / self.w - mh * mh;
        if var < CV_VARIANCE_FLOOR {
            return 0.0;
        }
        (self.sum_fh / self.w - mf * mh) / var
    }

    /// Folds in one scalar pair.
    pub fn update(&mut self, f: f64, h: f64) {
        self.update_moments(1, f, h, f * h, h * h);
    }

    /// Folds in a whole step's worth of pairs, already summed. All pairs of
    /// one step share a single decay factor.
    pub fn update_moments(&mut self, count: usize, sum_f: f64, sum_h: f64, sum_fh: f64, sum_hh: f64) {
        if self.fixed.is_some() || count == 0 {
            return;
        }
        let d = self.decay;
        self.w = d * self.w + count as f64;
        self.sum_f = d * self.sum_f + sum_f;
        self.sum_h = d * self.sum_h + sum_h;
        self.sum_fh = d * self.sum_fh + sum_fh;
        self.sum_hh = d * self.sum_hh + sum_hh;
        self.updates += 1;
    }
}

/// Functional form of [`ControlVariateState::update`].
pub fn cv_update(mut cv: ControlVariateState, f: f64, h: f64) -> ControlVariateState {
    cv.update(f, h);
    cv
}

/// One control-variate state per network layer (unused for layers without a
/// learned mask).
#[derive(Clone, Debug, PartialEq)]
pub struct ControlVariates {
    pub layers: Vec<ControlVariateState>,
}

impl ControlVariates {
    pub fn adaptive(net: &Network, decay: f64) -> Self {
        Self {
            layers: vec![ControlVariateState::new(decay); net.layers.len()],
        }
    }

    pub fn fixed(net: &Network, weight: f64) -> Self {
        Self {
            layers: vec![ControlVariateState::fixed(weight); net.layers.len()],
        }
    }

    pub fn disabled(net: &Network) -> Self {
        Self::fixed(net, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskGradient {
    pub logit: Matrix,
    pub raw_a: Matrix,
    pub raw_b: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub grad_w: Matrix,
    pub grad_b: Vec<f64>,
    pub mask: Option<MaskGradient>,
}

/// ELBO gradient estimate for every trainable parameter of a network.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGradient>,
    pub samples: usize,
    /// Mean of the scaled minibatch log-likelihood over the samples.
    pub likelihood_term: f64,
}

#[derive(Default)]
struct MomentSums {
    count: usize,
    f: f64,
    h: f64,
    fh: f64,
    hh: f64,
}

/// Score-function ELBO gradient with control variates (see module docs).
///
/// For layers without a learned mask this reduces to plain (masked) backprop
/// of the scaled minibatch log-likelihood.
pub fn score_function_grad(
    net: &Network,
    batch: &Minibatch<'_>,
    samples: usize,
    cvs: &mut ControlVariates,
    rng: &mut RngState,
) -> Result<GradientBundle> {
    check_samples(samples)?;
    if cvs.layers.len() != net.layers.len() {
        return Err(Error::shape(
            "score_function_grad",
            format!("{} control variates for {} layers", cvs.layers.len(), net.layers.len()),
        ));
    }
    let inv_l = 1.0 / samples as f64;
    let weights: Vec<f64> = cvs.layers.iter().map(ControlVariateState::weight).collect();
    let keep_probs: Vec<Option<Matrix>> = net
        .layers
        .iter()
        .map(|l| l.mode.variational().map(|p| p.keep_probs()))
        .collect();

    let mut out: Vec<LayerGradient> = net
        .layers
        .iter()
        .map(|l| LayerGradient {
            grad_w: Matrix::zeros(l.dense.out_dim(), l.dense.in_dim()),
            grad_b: vec![0.0; l.dense.out_dim()],
            mask: l.mode.variational().map(|p| {
                let (r, c) = p.shape();
                MaskGradient {
                    logit: Matrix::zeros(r, c),
                    raw_a: Matrix::zeros(r, c),
                    raw_b: Matrix::zeros(r, c),
                }
            }),
        })
        .collect();
    let mut moments: Vec<MomentSums> = net.layers.iter().map(|_| MomentSums::default()).collect();
    let mut likelihood_total = 0.0;

    for l in 0..samples {
        let trace = net.forward_sampled(batch.inputs, rng)?;
        let g_hat = sampled_log_likelihood(&trace, batch, l)?;
        likelihood_total += g_hat;
        let upstream = log_likelihood_logit_grad(trace.probabilities(), batch.labels, batch.scale())?;
        let grads = net.backward(&trace, upstream)?;

        for (k, lg) in grads.into_iter().enumerate() {
            let acc = &mut out[k];
            acc.grad_w.add_scaled(&lg.grad_w, inv_l)?;
            for (a, g) in acc.grad_b.iter_mut().zip(&lg.grad_b) {
                *a += inv_l * g;
            }
            if let (Some(mg), Some(pi)) = (acc.mask.as_mut(), keep_probs[k].as_ref()) {
                let z = trace.layers[k]
                    .mask
                    .as_ref()
                    .expect("learned-mask layers always record their mask");
                let centered = (g_hat - weights[k]) * inv_l;
                let (mut sum_h, mut sum_hh) = (0.0, 0.0);
                for ((g, &zv), &p) in mg
                    .logit
                    .as_mut_slice()
                    .iter_mut()
                    .zip(z.as_slice())
                    .zip(pi.as_slice())
                {
                    let h = zv - p;
                    *g += centered * h;
                    sum_h += h;
                    sum_hh += h * h;
                }
                // f = ĝ h per coordinate, so Σf = ĝ Σh and Σfh = ĝ Σh²
                let m = &mut moments[k];
                m.count += z.len();
                m.h += sum_h;
                m.hh += sum_hh;
                m.f += g_hat * sum_h;
                m.fh += g_hat * sum_hh;
            }
        }
    }

    for (cv, m) in cvs.layers.iter_mut().zip(&moments) {
        cv.update_moments(m.count, m.f, m.h, m.fh, m.hh);
    }

    for (k, layer) in net.layers.iter().enumerate() {
        if let (Some(params), Some(mg)) = (layer.mode.variational(), out[k].mask.as_mut()) {
            for idx in 0..params.len() {
                let g = params.kl_gradient_at(idx);
                mg.logit.as_mut_slice()[idx] -= g.logit;
                mg.raw_a.as_mut_slice()[idx] = -g.raw_a;
                mg.raw_b.as_mut_slice()[idx] = -g.raw_b;
            }
        }
    }

    Ok(GradientBundle {
        layers: out,
        samples,
        likelihood_term: likelihood_total * inv_l,
    })
}

/// Applies one ascent step of `opt` to every parameter block of `net`.
pub fn apply_gradients(net: &mut Network, grads: &GradientBundle, opt: &mut OptimizerState) -> Result<()> {
    if grads.layers.len() != net.layers.len() {
        return Err(Error::shape("apply_gradients", "gradient bundle depth differs from network"));
    }
    for (k, (layer, g)) in net.layers.iter_mut().zip(&grads.layers).enumerate() {
        let base = 5 * k;
        opt.step(base, layer.dense.weights.as_mut_slice(), g.grad_w.as_slice())?;
        opt.step(base + 1, &mut layer.dense.bias, &g.grad_b)?;
        match (layer.mode.variational_mut(), &g.mask) {
            (Some(params), Some(mg)) => {
                opt.step(base + 2, params.logits.as_mut_slice(), mg.logit.as_slice())?;
                opt.step(base + 3, params.raw_a.as_mut_slice(), mg.raw_a.as_slice())?;
                opt.step(base + 4, params.raw_b.as_mut_slice(), mg.raw_b.as_slice())?;
            }
            (None, None) => {}
            _ => {
                return Err(Error::shape(
                    "apply_gradients",
                    format!("layer {k}: mask gradient does not match mask mode"),
                ))
            }
        }
    }
    Ok(())
}
