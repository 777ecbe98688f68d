//! Run records, the cross-method comparison, and the emitted CSV formats.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::Network;
use crate::numerics::{paired_t_test, student_t_test, SampleStats, TTest};

pub const REFERENCE_METHOD: &str = "dropconnect++";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub test_acc: f64,
    pub elbo: f64,
    /// Wall-clock seconds; kept in memory only, never written, so emitted
    /// files stay byte-reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub seed: usize,
    pub stepsize: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Set when the run aborted; earlier epochs are kept.
    pub error: Option<String>,
}

impl RunReport {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }

    pub fn final_test_acc(&self) -> Option<f64> {
        if self.failed() {
            return None;
        }
        self.epochs.last().map(|e| e.test_acc)
    }
}

/// Long-format convergence table, one row per method/seed/epoch.
pub fn emit_convergence_csv(runs: &[RunReport]) -> String {
    let mut out = String::from("method,seed,epoch,train_acc,test_acc,elbo,stepsize\n");
    for r in runs {
        let step = r.stepsize.map_or(String::new(), |s| s.to_string());
        for e in &r.epochs {
            // `{}` on f64 prints the shortest string that parses back exactly
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.method, r.seed, e.epoch, e.train_acc, e.test_acc, e.elbo, step
            );
        }
    }
    out
}

/// Parses a table written by [`emit_convergence_csv`] back into runs (rows
/// grouped by method and seed in file order). Failure flags are not stored
/// in the CSV, so every parsed run counts as complete.
pub fn parse_convergence_csv(text: &str) -> Result<Vec<RunReport>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut runs: Vec<RunReport> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let parse_err = |detail: String| Error::Parse {
            path: "runs.csv".into(),
            line,
            detail,
        };
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        if rec.len() != 7 {
            return Err(parse_err(format!("expected 7 fields, found {}", rec.len())));
        }
        let num = |k: usize| -> Result<f64> {
            rec[k].parse().map_err(|_| parse_err(format!("bad number {:?}", &rec[k])))
        };
        let int = |k: usize| -> Result<usize> {
            rec[k].parse().map_err(|_| parse_err(format!("bad integer {:?}", &rec[k])))
        };
        let (method, seed) = (rec[0].to_string(), int(1)?);
        let stepsize = if rec[6].is_empty() { None } else { Some(num(6)?) };
        let epoch = EpochRecord {
            epoch: int(2)?,
            train_acc: num(3)?,
            test_acc: num(4)?,
            elbo: num(5)?,
            seconds: 0.0,
        };
        match runs.last_mut() {
            Some(r) if r.method == method && r.seed == seed => r.epochs.push(epoch),
            _ => runs.push(RunReport {
                method,
                seed,
                stepsize,
                epochs: vec![epoch],
                error: None,
            }),
        }
    }
    Ok(runs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Completed runs.
    pub n: usize,
    pub failed: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// Final test accuracy per completed seed, in seed order.
    pub accuracies: Vec<f64>,
    pub seeds: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub method: String,
    pub reference: String,
    /// Two-sample pooled-variance test.
    pub pooled: Option<TTest>,
    /// Paired test over seeds completed by both methods (paired designs only).
    pub paired: Option<TTest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub paired_design: bool,
    pub methods: Vec<MethodSummary>,
    pub comparisons: Vec<Comparison>,
}

impl ComparisonReport {
    /// Summarizes final test accuracies per method (in first-appearance
    /// order) and tests every other method against `dropconnect++`.
    pub fn from_runs(runs: &[RunReport], paired_design: bool) -> Self {
        let mut order: Vec<&str> = Vec::new();
        for r in runs {
            if !order.contains(&r.method.as_str()) {
                order.push(&r.method);
            }
        }
        let methods: Vec<MethodSummary> = order
            .iter()
            .map(|&m| {
                let mine: Vec<&RunReport> = runs.iter().filter(|r| r.method == m).collect();
                let done: Vec<(usize, f64)> =
                    mine.iter().filter_map(|r| r.final_test_acc().map(|a| (r.seed, a))).collect();
                let accuracies: Vec<f64> = done.iter().map(|d| d.1).collect();
                let n = accuracies.len();
                MethodSummary {
                    method: m.to_string(),
                    n,
                    failed: mine.len() - n,
                    mean: (n > 0).then(|| accuracies.iter().sum::<f64>() / n as f64),
                    std: SampleStats::from_slice(&accuracies).std_dev().ok(),
                    seeds: done.iter().map(|d| d.0).collect(),
                    accuracies,
                }
            })
            .collect();

        let comparisons = match methods.iter().find(|s| s.method == REFERENCE_METHOD) {
            None => Vec::new(),
            Some(reference) => methods
                .iter()
                .filter(|s| s.method != REFERENCE_METHOD)
                .map(|s| Comparison {
                    method: s.method.clone(),
                    reference: REFERENCE_METHOD.into(),
                    pooled: student_t_test(&s.accuracies, &reference.accuracies).ok(),
                    paired: paired_design.then(|| paired_on_common_seeds(s, reference)).flatten(),
                })
                .collect(),
        };
        Self {
            paired_design,
            methods,
            comparisons,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Fixed-width text table for terminals.
    pub fn render(&self) -> String {
        let mut out = format!("{:<16} {:>4} {:>6} {:>9} {:>8}\n", "method", "n", "failed", "mean", "std");
        let fmt = |v: Option<f64>, digits: usize| v.map_or("-".to_string(), |v| format!("{v:.digits$}"));
        for m in &self.methods {
            let _ = writeln!(
                out,
                "{:<16} {:>4} {:>6} {:>9} {:>8}",
                m.method,
                m.n,
                m.failed,
                fmt(m.mean, 3),
                fmt(m.std, 3)
            );
        }
        for c in &self.comparisons {
            let show = |t: Option<TTest>| t.map_or("-".to_string(), |t| format!("t={:.3} p={:.4}", t.t, t.p));
            let _ = writeln!(
                out,
                "{} vs {}: pooled {}; paired {}",
                c.method,
                c.reference,
                show(c.pooled),
                show(c.paired)
            );
        }
        out
    }
}

fn paired_on_common_seeds(a: &MethodSummary, b: &MethodSummary) -> Option<TTest> {
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (seed, &x) in a.seeds.iter().zip(&a.accuracies) {
        if let Some(k) = b.seeds.iter().position(|s| s == seed) {
            xs.push(x);
            ys.push(b.accuracies[k]);
        }
    }
    paired_t_test(&xs, &ys).ok()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Histogram of every learned keep probability π̃ on `bins` uniform bins over
/// [0, 1]. Bin `k` is `[k/bins, (k+1)/bins)`; the last bin also holds 1.
pub fn pi_histogram(net: &Network, bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    if !net.has_variational_layers() {
        return Err(Error::Model("model has no learned-mask layers".into()));
    }
    let mut counts = vec![0usize; bins];
    for (_, params) in net.variational_layers() {
        for p in params.keep_probs().as_slice() {
            let k = ((p * bins as f64).floor() as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| HistogramBin {
            lo: k as f64 / bins as f64,
            hi: (k + 1) as f64 / bins as f64,
            count,
        })
        .collect())
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin_lo,bin_hi,count\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{}", b.lo, b.hi, b.count);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::BetaHyperPrior;
    use crate::network::Regularizer;
    use crate::numerics::RngState;

    fn run(method: &str, seed: usize, accs: &[f64]) -> RunReport {
        RunReport {
            method: method.into(),
            seed,
            stepsize: Some(0.01),
            epochs: accs
                .iter()
                .enumerate()
                .map(|(i, &a)| EpochRecord {
                    epoch: i + 1,
                    train_acc: a + 1.0,
                    test_acc: a,
                    elbo: -1234.5678901234 * a,
                    seconds: 0.0,
                })
                .collect(),
            error: None,
        }
    }

    #[test]
    fn csv_round_trip_and_row_count() {
        let runs = vec![run("none", 0, &[50.0, 61.1, 70.123456789]), run("dropconnect++", 0, &[1.0 / 3.0])];
        let text = emit_convergence_csv(&runs);
        assert_eq!(text.lines().count(), 1 + 4);
        assert_eq!(parse_convergence_csv(&text).unwrap(), runs);
        assert!(parse_convergence_csv("method,seed,epoch,train_acc,test_acc,elbo,stepsize\nx,1,1,a,1,1,\n").is_err());
    }

    #[test]
    fn comparison_statistics() {
        let mut runs = Vec::new();
        for (seed, (a, b)) in [(80.0, 82.0), (81.0, 82.5), (79.0, 81.0)].into_iter().enumerate() {
            runs.push(run("none", seed, &[a]));
            runs.push(run("dropconnect++", seed, &[b]));
        }
        let mut broken = run("none", 3, &[10.0]);
        broken.error = Some("diverged".into());
        runs.push(broken);

        let rep = ComparisonReport::from_runs(&runs, true);
        let none = &rep.methods[0];
        assert_eq!((none.n, none.failed), (3, 1));
        assert_eq!(none.mean, Some(80.0));
        assert_eq!(none.std, Some(1.0));
        let c = &rep.comparisons[0];
        assert_eq!(c.method, "none");
        let pooled = c.pooled.unwrap();
        assert!(pooled.t < 0.0 && (0.0..=1.0).contains(&pooled.p));
        assert!(c.paired.unwrap().p <= 1.0);
        assert!(ComparisonReport::from_runs(&runs, false).comparisons[0].paired.is_none());
        let json = rep.to_json().unwrap();
        let back: ComparisonReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
        assert!(rep.render().contains("none vs dropconnect++"));
    }

    #[test]
    fn histogram_accounting() {
        let mut rng = RngState::new(0);
        let net = Network::mlp(6, &[5], 3, &mut rng)
            .with_regularizer(Regularizer::DropConnectPP, BetaHyperPrior::default(), true)
            .unwrap();
        let h = pi_histogram(&net, 10).unwrap();
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 5 * 7 + 3 * 6);
        assert_eq!(h[5].count, 53, "untrained π̃ = 0.5 lands in [0.5, 0.6)");
        assert!(histogram_csv(&h).starts_with("bin_lo,bin_hi,count\n0,0.1,0\n"));

        let plain = Network::mlp(6, &[5], 3, &mut rng);
        assert!(pi_histogram(&plain, 10).is_err());
        assert!(pi_histogram(&net, 0).is_err());
    }
}
