//! Bernoulli keep-indicators with Beta hyper-priors.
//!
//! Variational parameters live in unconstrained coordinates so optimizers can
//! move them freely: the keep probability π̃ is `sigmoid(logit)` and the Beta
//! shapes are `softplus(raw) + 1e-4`. All KL terms are closed form; their
//! gradients are taken with respect to the unconstrained coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::special::{digamma_pos, lgamma_pos, trigamma_pos};
use crate::numerics::{sigmoid, softplus, softplus_inv, RngState};

/// Logits are clamped to this magnitude before the sigmoid.
pub const LOGIT_CLAMP: f64 = 30.0;
/// Floor added to softplus so Beta shapes stay strictly positive.
pub const SHAPE_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernoulliParam {
    pub logit: f64,
}

impl BernoulliParam {
    pub fn new(logit: f64) -> Self {
        Self { logit }
    }

    /// Parameter whose keep probability is `p` (0 < p < 1).
    pub fn from_prob(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "Bernoulli probability must be in (0, 1), got {p}"
            )));
        }
        Ok(Self {
            logit: (p / (1.0 - p)).ln(),
        })
    }

    #[inline]
    fn clamped(&self) -> f64 {
        self.logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)
    }

    /// π̃, strictly inside (0, 1).
    #[inline]
    pub fn prob(&self) -> f64 {
        sigmoid(self.clamped())
    }

    /// (ln π̃, ln(1 − π̃)) computed without cancellation.
    #[inline]
    pub fn log_probs(&self) -> (f64, f64) {
        let x = self.clamped();
        (-softplus(-x), -softplus(x))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaParam {
    pub raw_a: f64,
    pub raw_b: f64,
}

impl BetaParam {
    pub fn new(raw_a: f64, raw_b: f64) -> Self {
        Self { raw_a, raw_b }
    }

    /// Raw coordinates that reproduce the shapes `(alpha, beta)`.
    pub fn from_shapes(alpha: f64, beta: f64) -> Result<Self> {
        if alpha <= SHAPE_FLOOR || beta <= SHAPE_FLOOR {
            return Err(Error::InvalidArgument(format!(
                "Beta shapes must exceed {SHAPE_FLOOR}, got ({alpha}, {beta})"
            )));
        }
        Ok(Self {
            raw_a: softplus_inv(alpha - SHAPE_FLOOR)?,
            raw_b: softplus_inv(beta - SHAPE_FLOOR)?,
        })
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        softplus(self.raw_a) + SHAPE_FLOOR
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        softplus(self.raw_b) + SHAPE_FLOOR
    }

    pub fn mean(&self) -> f64 {
        let (a, b) = (self.alpha(), self.beta());
        a / (a + b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaHyperPrior {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for BetaHyperPrior {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl BetaHyperPrior {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "hyper-prior shapes must be positive, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

pub fn bernoulli_sample(p: BernoulliParam, rng: &mut RngState) -> u8 {
    u8::from(rng.bernoulli(p.prob()))
}

fn check_bit(z: u8) -> Result<()> {
    if z > 1 {
        return Err(Error::InvalidArgument(format!(
            "Bernoulli outcome must be 0 or 1, got {z}"
        )));
    }
    Ok(())
}

/// z ln π̃ + (1 − z) ln(1 − π̃).
pub fn bernoulli_log_mass(z: u8, p: BernoulliParam) -> Result<f64> {
    check_bit(z)?;
    let (lp, lq) = p.log_probs();
    Ok(if z == 1 { lp } else { lq })
}

/// d/d(logit) of the log-mass: z − π̃.
pub fn bernoulli_score_wrt_logit(z: u8, p: BernoulliParam) -> Result<f64> {
    check_bit(z)?;
    Ok(f64::from(z) - p.prob())
}

/// Draws π ~ Beta(α̃, β̃) as a ratio of Gamma variates.
pub fn beta_sample(q: BetaParam, rng: &mut RngState) -> f64 {
    let x = rng.gamma(q.alpha());
    let y = rng.gamma(q.beta());
    x / (x + y)
}

/// (E[ln π], E[ln(1 − π)]) under π ~ Beta(α̃, β̃).
pub fn beta_expect_log(q: BetaParam) -> (f64, f64) {
    let (a, b) = (q.alpha(), q.beta());
    let ds = digamma_pos(a + b);
    (digamma_pos(a) - ds, digamma_pos(b) - ds)
}

/// KL between the Bernoulli posterior on a mask entry and its prior, with the
/// prior's keep probability integrated against the Beta hyper-posterior.
pub fn kl_bernoulli_vs_hierarchical(p: BernoulliParam, q: BetaParam) -> f64 {
    let pi = p.prob();
    let (lp, lq) = p.log_probs();
    let (e_log_pi, e_log_1m_pi) = beta_expect_log(q);
    pi * lp + (1.0 - pi) * lq - pi * e_log_pi - (1.0 - pi) * e_log_1m_pi
}

/// KL[Beta(α̃, β̃) ‖ Beta(α, β)], including the prior normalizer.
pub fn kl_beta(q: BetaParam, prior: BetaHyperPrior) -> f64 {
    let (a, b) = (q.alpha(), q.beta());
    let (e_log_pi, e_log_1m_pi) = beta_expect_log(q);
    let log_norm_q = lgamma_pos(a + b) - lgamma_pos(a) - lgamma_pos(b);
    let log_norm_p =
        lgamma_pos(prior.alpha + prior.beta) - lgamma_pos(prior.alpha) - lgamma_pos(prior.beta);
    log_norm_q - log_norm_p + (a - prior.alpha) * e_log_pi + (b - prior.beta) * e_log_1m_pi
}

/// Gradient with respect to the unconstrained coordinates of one synapse.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KlGradient {
    pub logit: f64,
    pub raw_a: f64,
    pub raw_b: f64,
}

/// Exact gradient of `kl_bernoulli_vs_hierarchical + kl_beta`.
pub fn kl_gradients(p: BernoulliParam, q: BetaParam, prior: BetaHyperPrior) -> KlGradient {
    let pi = p.prob();
    let (a, b) = (q.alpha(), q.beta());
    let s = a + b;
    let (dg_a, dg_b) = (digamma_pos(a), digamma_pos(b));
    let (tg_a, tg_b, tg_s) = (trigamma_pos(a), trigamma_pos(b), trigamma_pos(s));

    // d KL_bern / d pi = logit(pi) - (E ln pi - E ln(1-pi)); d pi / d logit = pi (1 - pi)
    let logit_pi = p.clamped();
    let d_logit = pi * (1.0 - pi) * (logit_pi - (dg_a - dg_b));

    // d KL_bern / d a = -pi psi'(a) + psi'(s);  d KL_beta / d a = (a - alpha) psi'(a) - (s - alpha - beta) psi'(s)
    let excess = s - prior.alpha - prior.beta;
    let d_a = -pi * tg_a + tg_s + (a - prior.alpha) * tg_a - excess * tg_s;
    let d_b = -(1.0 - pi) * tg_b + tg_s + (b - prior.beta) * tg_b - excess * tg_s;

    KlGradient {
        logit: d_logit,
        raw_a: d_a * sigmoid(q.raw_a),
        raw_b: d_b * sigmoid(q.raw_b),
    }
}

/// Gradient of `kl_beta` alone with respect to `(raw_a, raw_b)`.
pub fn kl_beta_gradient(q: BetaParam, prior: BetaHyperPrior) -> (f64, f64) {
    let (a, b) = (q.alpha(), q.beta());
    let s = a + b;
    let tg_s = trigamma_pos(s);
    let excess = s - prior.alpha - prior.beta;
    let d_a = (a - prior.alpha) * trigamma_pos(a) - excess * tg_s;
    let d_b = (b - prior.beta) * trigamma_pos(b) - excess * tg_s;
    (d_a * sigmoid(q.raw_a), d_b * sigmoid(q.raw_b))
}
