//! Scaling benchmark for the per-image scoring stage.
//!
//! Precomputation runs once per method and is excluded from the timings.
//! Batch sizes are timed in interleaved rounds until each has run for a
//! minimum wall time. Each measurement reports the fastest repetition, since
//! interference from other processes only ever adds time.

use std::hint::black_box;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::experiment::{ExperimentConfig, Method, Scorer};
use crate::json::{f64_sig17, g17};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    /// Minimum wall time spent per (method, n) measurement.
    pub min_time: Duration,
    pub min_repeats: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            min_time: Duration::from_millis(50),
            min_repeats: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub method: Method,
    pub n: usize,
    #[serde(serialize_with = "f64_sig17")]
    pub seconds: f64,
    pub repeats: usize,
}

/// Least-squares line `seconds ≈ slope * n + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearFit {
    #[serde(serialize_with = "f64_sig17")]
    pub slope: f64,
    #[serde(serialize_with = "f64_sig17")]
    pub intercept: f64,
    #[serde(serialize_with = "f64_sig17")]
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DoublingRatio {
    pub from: usize,
    pub to: usize,
    #[serde(serialize_with = "f64_sig17")]
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodScaling {
    pub method: Method,
    pub fit: Option<LinearFit>,
    pub doublings: Vec<DoublingRatio>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingReport {
    pub topk: usize,
    pub rows: Vec<TimingRow>,
    pub methods: Vec<MethodScaling>,
}

impl ScalingReport {
    pub fn scaling(&self, method: Method) -> Option<&MethodScaling> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,n,seconds,repeats\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.method,
                r.n,
                g17(r.seconds),
                r.repeats
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scaling report serializes")
    }
}

/// Ordinary least squares of `y` on `x`. `None` when `x` has no spread.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len() as f64;
    if x.len() < 2 || x.len() != y.len() {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

fn fastest(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Times every subset in round-robin order, so slow phases of the machine
/// are spread over all batch sizes instead of landing on one of them.
/// Returns the fastest repetition and the repetition count per subset.
fn time_stages(
    scorer: &Scorer,
    subsets: &[(usize, Dataset)],
    k: usize,
    options: &BenchOptions,
) -> Result<Vec<(f64, usize)>> {
    let active: Vec<usize> = (0..subsets.len()).filter(|&i| subsets[i].0 > 0).collect();
    let mut samples = vec![Vec::new(); subsets.len()];
    let mut spent = vec![Duration::ZERO; subsets.len()];
    // Warm-up.
    for &i in &active {
        black_box(scorer.score_and_predict(subsets[i].1.posterior(), k)?);
    }
    let done = |samples: &[Vec<f64>], spent: &[Duration]| {
        active.iter().all(|&i| {
            samples[i].len() >= options.min_repeats.max(1) && spent[i] >= options.min_time
        })
    };
    while !done(&samples, &spent) {
        for &i in &active {
            let t = Instant::now();
            black_box(scorer.score_and_predict(black_box(subsets[i].1.posterior()), k)?);
            let elapsed = t.elapsed();
            spent[i] += elapsed;
            samples[i].push(elapsed.as_secs_f64());
        }
    }
    Ok(subsets
        .iter()
        .zip(&samples)
        .map(|((n, _), xs)| {
            if *n == 0 {
                (0.0, 0)
            } else {
                (fastest(xs), xs.len())
            }
        })
        .collect())
}

/// Times truncation, scoring and prediction at each `n`, using the first `n`
/// images of the configured data.
pub fn benchmark_scaling(
    config: &ExperimentConfig,
    n_values: &[usize],
    options: &BenchOptions,
) -> Result<ScalingReport> {
    let data = config.load_data()?;
    config.validate(data.seen().len())?;
    let max_n = n_values.iter().copied().max().unwrap_or(0);
    if max_n > data.posterior().rows() {
        return Err(Error::Config(format!(
            "benchmark needs {max_n} images, data has {}",
            data.posterior().rows()
        )));
    }
    let k = config.topk.values()[0];
    let subsets: Vec<(usize, Dataset)> = n_values.iter().map(|&n| (n, data.head(n))).collect();

    let mut rows = Vec::new();
    let mut methods = Vec::new();
    for &method in &config.methods {
        let (scorer, _) = Scorer::prepare(method, &data, config.k_seen, config.k_unseen)?;
        let timings = time_stages(&scorer, &subsets, k, options)?;
        let mut points = Vec::new();
        for (&(n, _), (seconds, repeats)) in subsets.iter().zip(timings) {
            points.push((n, seconds));
            rows.push(TimingRow {
                method,
                n,
                seconds,
                repeats,
            });
        }
        let x: Vec<f64> = points.iter().map(|(n, _)| *n as f64).collect();
        let y: Vec<f64> = points.iter().map(|(_, s)| *s).collect();
        let doublings = points
            .iter()
            .flat_map(|&(n1, t1)| {
                points
                    .iter()
                    .filter(move |&&(n2, _)| n1 > 0 && n2 == 2 * n1)
                    .map(move |&(n2, t2)| DoublingRatio {
                        from: n1,
                        to: n2,
                        ratio: t2 / t1,
                    })
            })
            .collect();
        methods.push(MethodScaling {
            method,
            fit: linear_fit(&x, &y),
            doublings,
        });
    }
    Ok(ScalingReport {
        topk: k,
        rows,
        methods,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_fits_perfectly() {
        let fit = linear_fit(&[1.0, 2.0, 4.0], &[3.0, 5.0, 9.0]).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_none());
    }

    #[test]
    fn fastest_is_minimum() {
        assert_eq!(fastest(&[3.0, 1.0, 2.0]), 1.0);
    }
}
