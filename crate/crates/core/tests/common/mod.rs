//! Shared fixtures: an enumerable toy model with an independent likelihood
//! implementation.
#![allow(dead_code)]

use bmn::distributions::BetaHyperPrior;
use bmn::layers::{Activation, DenseLayer, MaskMode, VariationalMaskParams};
use bmn::network::{Layer, Network};
use bmn::numerics::Matrix;

/// One scalar input → 2-class softmax. The mask grid is 2×2: entry `2c`
/// gates weight `c`, entry `2c + 1` gates bias `c`.
pub fn toy_network(weights: [f64; 2], bias: [f64; 2], logits: [f64; 4]) -> Network {
    let dense = DenseLayer::new(Matrix::from_vec(2, 1, weights.to_vec()).unwrap(), bias.to_vec(), Activation::Softmax)
        .unwrap();
    let mut params = VariationalMaskParams::new(2, 1, BetaHyperPrior::default()).unwrap();
    params.logits = Matrix::from_vec(2, 2, logits.to_vec()).unwrap();
    Network::new(vec![Layer {
        dense,
        mode: MaskMode::DropConnectPP(params),
    }])
    .unwrap()
}

pub fn toy_data() -> (Matrix, Vec<usize>) {
    (Matrix::from_vec(1, 4, vec![1.5, -0.7, 0.2, 2.1]).unwrap(), vec![0, 1, 1, 0])
}

pub fn all_masks() -> Vec<[f64; 4]> {
    (0..16u32).map(|bits| std::array::from_fn(|i| f64::from((bits >> i) & 1))).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Keep probabilities, recomputed from the logits independently.
pub fn toy_keep_probs(net: &Network) -> [f64; 4] {
    let p = net.layers[0].mode.variational().unwrap();
    std::array::from_fn(|i| sigmoid(p.logits.as_slice()[i]))
}

pub fn mask_probability(z: &[f64; 4], pi: &[f64; 4]) -> f64 {
    (0..4).map(|i| if z[i] == 1.0 { pi[i] } else { 1.0 - pi[i] }).product()
}

/// Per-example class logits under mask `z`.
fn masked_logits(w: [f64; 2], b: [f64; 2], z: &[f64; 4], x: f64) -> [f64; 2] {
    std::array::from_fn(|c| z[2 * c] * w[c] * x + z[2 * c + 1] * b[c])
}

fn params(net: &Network) -> ([f64; 2], [f64; 2]) {
    let d = &net.layers[0].dense;
    ([d.weights[(0, 0)], d.weights[(1, 0)]], [d.bias[0], d.bias[1]])
}

/// Σ_n ln softmax(logits_n)[y_n] times `scale`, plus its gradient with
/// respect to (w0, w1, b0, b1) for the fixed mask.
pub fn toy_loglik(net: &Network, z: &[f64; 4], x: &Matrix, y: &[usize], scale: f64) -> (f64, [f64; 4]) {
    let (w, b) = params(net);
    let mut ll = 0.0;
    let mut grad = [0.0; 4];
    for (n, &label) in y.iter().enumerate() {
        let xn = x[(0, n)];
        let l = masked_logits(w, b, z, xn);
        let m = l[0].max(l[1]);
        let lse = m + ((l[0] - m).exp() + (l[1] - m).exp()).ln();
        ll += l[label] - lse;
        for c in 0..2 {
            let p = (l[c] - lse).exp();
            let r = f64::from(u8::from(c == label)) - p;
            grad[c] += scale * r * z[2 * c] * xn;
            grad[2 + c] += scale * r * z[2 * c + 1];
        }
    }
    (scale * ll, grad)
}

/// Exact expectations by enumerating all 16 masks.
pub struct ToyExact {
    /// E_q[ln p(D|Z)]
    pub likelihood: f64,
    /// ∂/∂logit_i of E_q[ln p(D|Z)]
    pub logit_grad: [f64; 4],
    /// ∂/∂(w0, w1, b0, b1) of E_q[ln p(D|Z)]
    pub param_grad: [f64; 4],
}

pub fn toy_exact(net: &Network, x: &Matrix, y: &[usize], scale: f64) -> ToyExact {
    let pi = toy_keep_probs(net);
    let mut out = ToyExact {
        likelihood: 0.0,
        logit_grad: [0.0; 4],
        param_grad: [0.0; 4],
    };
    for z in all_masks() {
        let q = mask_probability(&z, &pi);
        let (ll, g) = toy_loglik(net, &z, x, y, scale);
        out.likelihood += q * ll;
        for i in 0..4 {
            out.logit_grad[i] += q * (z[i] - pi[i]) * ll;
            out.param_grad[i] += q * g[i];
        }
    }
    out
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Tanh-sinh quadrature of `f(x, 1 − x)` over (0, 1). Both arguments are
/// formed directly from the transform so neither endpoint loses precision.
pub fn integrate_unit(f: impl Fn(f64, f64) -> f64) -> f64 {
    let h = 1.0 / 64.0;
    let half_pi = std::f64::consts::FRAC_PI_2;
    let mut total = 0.0;
    let steps = (4.5 / h) as i64;
    for k in -steps..=steps {
        let t = k as f64 * h;
        let u = 2.0 * half_pi * t.sinh();
        // x = sigmoid(u), 1 − x = sigmoid(−u), dx/dt = π cosh t · x(1−x)
        let x = 1.0 / (1.0 + (-u).exp());
        let y = 1.0 / (1.0 + u.exp());
        let w = 2.0 * half_pi * t.cosh() * x * y;
        if w > 0.0 && x > 0.0 && y > 0.0 {
            total += w * f(x, y);
        }
    }
    total * h
}
