use serde::{Deserialize, Serialize};

use super::special::betainc_regularized;
use crate::error::{Error, Result};

/// Streaming mean/variance (Welford).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampleStats {
    n: usize,
    mean: f64,
    m2: f64,
}

impl SampleStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_slice(xs: &[f64]) -> Self {
        let mut s = Self::new();
        for &x in xs {
            s.push(x);
        }
        s
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased variance (divisor n − 1). Needs at least two samples.
    pub fn variance(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::InsufficientData(format!(
                "variance needs n >= 2, have {}",
                self.n
            )));
        }
        Ok((self.m2 / (self.n - 1) as f64).max(0.0))
    }

    pub fn std_dev(&self) -> Result<f64> {
        self.variance().map(f64::sqrt)
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> Result<f64> {
        Ok((self.variance()? / self.n as f64).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: f64,
}

/// Two-sided p-value of a Student-t statistic with `df` degrees of freedom.
pub fn student_t_two_sided_p(t: f64, df: f64) -> Result<f64> {
    if t.is_infinite() {
        return Ok(0.0);
    }
    let x = df / (df + t * t);
    Ok(betainc_regularized(0.5 * df, 0.5, x)?.clamp(0.0, 1.0))
}

/// Two-sample Student t-test with pooled (equal) variance.
pub fn student_t_test(sample_a: &[f64], sample_b: &[f64]) -> Result<TTest> {
    let a = SampleStats::from_slice(sample_a);
    let b = SampleStats::from_slice(sample_b);
    if a.n() < 2 || b.n() < 2 {
        return Err(Error::InsufficientData(format!(
            "t-test needs n >= 2 per sample, have {} and {}",
            a.n(),
            b.n()
        )));
    }
    let (na, nb) = (a.n() as f64, b.n() as f64);
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * a.variance()? + (nb - 1.0) * b.variance()?) / df;
    let diff = a.mean() - b.mean();
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    t_from_difference(diff, se, df)
}

/// Paired t-test on the differences `a[i] - b[i]`.
pub fn paired_t_test(sample_a: &[f64], sample_b: &[f64]) -> Result<TTest> {
    if sample_a.len() != sample_b.len() {
        return Err(Error::LengthMismatch {
            left: sample_a.len(),
            right: sample_b.len(),
        });
    }
    let diffs: Vec<f64> = sample_a.iter().zip(sample_b).map(|(x, y)| x - y).collect();
    let d = SampleStats::from_slice(&diffs);
    if d.n() < 2 {
        return Err(Error::InsufficientData(format!(
            "paired t-test needs n >= 2, have {}",
            d.n()
        )));
    }
    let df = d.n() as f64 - 1.0;
    t_from_difference(d.mean(), d.std_error()?, df)
}

fn t_from_difference(diff: f64, se: f64, df: f64) -> Result<TTest> {
    if se == 0.0 {
        return Ok(if diff == 0.0 {
            TTest { t: 0.0, p: 1.0, df }
        } else {
            TTest {
                t: diff.signum() * f64::INFINITY,
                p: 0.0,
                df,
            }
        });
    }
    let t = diff / se;
    Ok(TTest {
        t,
        p: student_t_two_sided_p(t, df)?,
        df,
    })
}

/// Optimal control-variate weight Cov(f, h) / Var(h); zero when
/// Var(h) < 1e-12.
pub fn weighted_cv_coefficient(f_samples: &[f64], h_samples: &[f64]) -> Result<f64> {
    if f_samples.len() != h_samples.len() {
        return Err(Error::LengthMismatch {
            left: f_samples.len(),
            right: h_samples.len(),
        });
    }
    let n = f_samples.len();
    if n < 2 {
        return Err(Error::InsufficientData(format!(
            "control-variate weight needs n >= 2, have {n}"
        )));
    }
    let mf = f_samples.iter().sum::<f64>() / n as f64;
    let mh = h_samples.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (&f, &h) in f_samples.iter().zip(h_samples) {
        cov += (f - mf) * (h - mh);
        var += (h - mh) * (h - mh);
    }
    let denom = (n - 1) as f64;
    let (cov, var) = (cov / denom, var / denom);
    Ok(if var < CV_VARIANCE_FLOOR { 0.0 } else { cov / var })
}

pub(crate) const CV_VARIANCE_FLOOR: f64 = 1e-12;
