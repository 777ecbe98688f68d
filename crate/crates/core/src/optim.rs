//! First-order optimizers. Every update *ascends* its gradient: callers pass
//! the gradient of the objective they want to maximize (the ELBO or the
//! log-likelihood).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EPSILON: f64 = 1e-8;
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "adagrad" => Ok(Self::Adagrad),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

fn check(params: &[f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(
            "optimizer step",
            format!("{} parameters, {} gradients", params.len(), grads.len()),
        ));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: "optimizer gradient".into(),
        });
    }
    Ok(())
}

/// θ += η g
pub fn sgd_step(stepsize: f64, params: &mut [f64], grads: &[f64]) -> Result<()> {
    check(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p += stepsize * g;
    }
    Ok(())
}

/// Adagrad accumulator for one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdagradState {
    pub stepsize: f64,
    pub sum_sq: Vec<f64>,
}

impl AdagradState {
    pub fn new(stepsize: f64, len: usize) -> Self {
        Self {
            stepsize,
            sum_sq: vec![0.0; len],
        }
    }

    /// Per-coordinate step multiplier η / (√G + ε).
    pub fn effective_stepsize(&self, i: usize) -> f64 {
        self.stepsize / (self.sum_sq[i].sqrt() + EPSILON)
    }
}

/// G += g²; θ += η g / (√G + ε)
pub fn adagrad_step(state: &mut AdagradState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    check(params, grads)?;
    if state.sum_sq.len() != params.len() {
        return Err(Error::shape(
            "adagrad_step",
            format!("state for {} parameters, got {}", state.sum_sq.len(), params.len()),
        ));
    }
    for ((p, &g), acc) in params.iter_mut().zip(grads).zip(&mut state.sum_sq) {
        *acc += g * g;
        *p += state.stepsize * g / (acc.sqrt() + EPSILON);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub stepsize: f64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(stepsize: f64, len: usize) -> Self {
        Self {
            stepsize,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Bias-corrected Adam ascent step.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    check(params, grads)?;
    if state.m.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("state for {} parameters, got {}", state.m.len(), params.len()),
        ));
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powf(state.t as f64);
    let c2 = 1.0 - ADAM_BETA2.powf(state.t as f64);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p += state.stepsize * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
enum Slot {
    Sgd { len: usize },
    Adagrad(AdagradState),
    Adam(AdamState),
}

/// Optimizer state for a set of parameter blocks addressed by slot index.
/// Buffers are created on the first update of each slot.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    kind: OptimizerKind,
    stepsize: f64,
    slots: Vec<Option<Slot>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, stepsize: f64) -> Result<Self> {
        if !(stepsize > 0.0 && stepsize.is_finite()) {
            return Err(Error::Config(format!("stepsize must be positive, got {stepsize}")));
        }
        Ok(Self {
            kind,
            stepsize,
            slots: Vec::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn stepsize(&self) -> f64 {
        self.stepsize
    }

    pub fn step(&mut self, slot: usize, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if self.slots.len() <= slot {
            self.slots.resize(slot + 1, None);
        }
        let len = params.len();
        let state = self.slots[slot].get_or_insert_with(|| match self.kind {
            OptimizerKind::Sgd => Slot::Sgd { len },
            OptimizerKind::Adagrad => Slot::Adagrad(AdagradState::new(self.stepsize, len)),
            OptimizerKind::Adam => Slot::Adam(AdamState::new(self.stepsize, len)),
        });
        match state {
            Slot::Sgd { len: expected } => {
                if *expected != len {
                    return Err(Error::shape("sgd_step", format!("slot {slot} changed size")));
                }
                sgd_step(self.stepsize, params, grads)
            }
            Slot::Adagrad(s) => adagrad_step(s, params, grads),
            Slot::Adam(s) => adam_step(s, params, grads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngState;

    #[test]
    fn adagrad_first_step() {
        let mut s = AdagradState::new(0.1, 1);
        let mut p = [0.0];
        adagrad_step(&mut s, &mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn adagrad_constant_gradient_decay() {
        let (eta, g) = (0.05, 0.7);
        let mut s = AdagradState::new(eta, 1);
        let mut p = [0.0];
        let mut prev = 0.0;
        for k in 1..=400u32 {
            adagrad_step(&mut s, &mut p, &[g]).unwrap();
            let delta = p[0] - prev;
            prev = p[0];
            // G = k g^2, so the k-th step is eta g / (sqrt(k) |g| + eps)
            let expected = eta * g / ((f64::from(k)).sqrt() * g + EPSILON);
            assert!((delta - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = [1.5, -2.0];
        let z = [0.0, 0.0];
        sgd_step(0.3, &mut p, &z).unwrap();
        adagrad_step(&mut AdagradState::new(0.3, 2), &mut p, &z).unwrap();
        let mut adam = AdamState::new(0.3, 2);
        for _ in 0..10 {
            adam_step(&mut adam, &mut p, &z).unwrap();
        }
        assert_eq!(p, [1.5, -2.0]);
    }

    #[test]
    fn adam_first_step_is_stepsize_sized() {
        for &g in &[1e-3, -0.5, 42.0] {
            let mut s = AdamState::new(0.01, 1);
            let mut p = [0.0];
            adam_step(&mut s, &mut p, &[g]).unwrap();
            // m_hat = g and v_hat = g^2 after correction
            assert!((p[0].abs() - 0.01 * g.abs() / (g.abs() + EPSILON)).abs() < 1e-12);
            assert_eq!(p[0].signum(), g.signum());
        }
    }

    #[test]
    fn sgd_cases() {
        let mut p = [0.0];
        sgd_step(0.1, &mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.2).abs() < 1e-15);
        let mut a = [1.0];
        sgd_step(0.1, &mut a, &[0.3]).unwrap();
        sgd_step(0.1, &mut a, &[0.9]).unwrap();
        let mut b = [1.0];
        sgd_step(0.1, &mut b, &[1.2]).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-15);
    }

    #[test]
    fn sgd_minimizes_quadratic() {
        // maximize -(theta - 3)^2 / 2: gradient 3 - theta, stable for eta < 2
        let mut p = [10.0f64];
        let mut iters = 0;
        while (p[0] - 3.0).abs() >= 1e-6 {
            let g = 3.0 - p[0];
            sgd_step(0.5, &mut p, &[g]).unwrap();
            iters += 1;
            assert!(iters < 100);
        }
    }

    #[test]
    fn errors() {
        let mut p = [0.0, 0.0];
        assert!(sgd_step(0.1, &mut p, &[1.0]).is_err());
        assert!(sgd_step(0.1, &mut p, &[1.0, f64::NAN]).is_err());
        assert!(adagrad_step(&mut AdagradState::new(0.1, 3), &mut p, &[1.0, 1.0]).is_err());
        assert!(OptimizerState::new(OptimizerKind::Adagrad, 0.0).is_err());
        let mut opt = OptimizerState::new(OptimizerKind::Sgd, 0.1).unwrap();
        opt.step(0, &mut p, &[1.0, 1.0]).unwrap();
        assert!(opt.step(0, &mut [0.0], &[1.0]).is_err());
    }

    #[test]
    fn adagrad_effective_stepsize_non_increasing() {
        let mut rng = RngState::new(3);
        let mut s = AdagradState::new(0.05, 3);
        let mut p = [0.0; 3];
        let mut last = [f64::INFINITY; 3];
        for _ in 0..1000 {
            let g = [rng.normal(), 0.0, 10.0 * rng.normal()];
            adagrad_step(&mut s, &mut p, &g).unwrap();
            for i in 0..3 {
                let e = s.effective_stepsize(i);
                assert!(e <= last[i]);
                last[i] = e;
            }
        }
    }

    #[test]
    fn adagrad_noisy_quadratic_median_progress() {
        let target = 2.0;
        let mut finals = Vec::new();
        for seed in 0..20 {
            let mut rng = RngState::new(seed);
            let mut s = AdagradState::new(0.5, 1);
            let mut p = [-5.0];
            for _ in 0..2000 {
                let noise = rng.uniform_range(-0.5, 0.5);
                let g = [target - p[0] + noise];
                adagrad_step(&mut s, &mut p, &g).unwrap();
            }
            finals.push((p[0] - target).abs());
        }
        finals.sort_by(f64::total_cmp);
        let median = 0.5 * (finals[9] + finals[10]);
        assert!(median < 7.0 * 0.05, "median distance {median}");
    }

    #[test]
    fn optimizer_state_dispatch_matches_free_functions() {
        let grads = [0.3, -1.2];
        let mut a = [1.0, 2.0];
        let mut b = a;
        let mut opt = OptimizerState::new(OptimizerKind::Adam, 0.01).unwrap();
        let mut adam = AdamState::new(0.01, 2);
        for _ in 0..5 {
            opt.step(3, &mut a, &grads).unwrap();
            adam_step(&mut adam, &mut b, &grads).unwrap();
        }
        assert_eq!(a, b);
    }
}
