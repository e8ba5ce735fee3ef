//! Absorbing-chain algebra on a [`TransitionSystem`]: the fundamental
//! matrix, absorption probabilities, scoring of test images that step into
//! the chain through their seen-class posteriors, and a random-walk oracle.
//!
//! Scoring a batch uses `S = T (I - Q)^{-1} R`, where the `p × q` factor
//! `(I - Q)^{-1} R` is solved once per system. Scoring one image goes through
//! the extended chain instead: appending the image as an extra transient
//! state with out-probabilities `t` and no in-edges, the last row of its
//! fundamental matrix is `(t (I - Q)^{-1}, 1)` by block inversion, so its
//! absorption row is `t (I - Q)^{-1} R`. The two routes are computed by
//! different solves and must agree.

use std::io::Read;

use nalgebra::{DMatrix, DVector, Dyn, LU};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::TransitionSystem;

/// Tolerance on a start distribution summing to one.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

/// Test-image posteriors over the seen classes, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    image_ids: Vec<String>,
    seen_names: Vec<String>,
    values: DMatrix<f64>,
}

impl PosteriorMatrix {
    pub fn new(
        image_ids: Vec<String>,
        seen_names: Vec<String>,
        values: DMatrix<f64>,
    ) -> Result<Self> {
        if values.shape() != (image_ids.len(), seen_names.len()) {
            return Err(Error::DimensionMismatch {
                expected: seen_names.len(),
                found: values.ncols(),
                context: Some(format!(
                    "posterior is {}x{}, {} image ids",
                    values.nrows(),
                    values.ncols(),
                    image_ids.len()
                )),
            });
        }
        if let Some(i) = values.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
            let row = i % values.nrows().max(1);
            return Err(Error::InvalidTransition(format!(
                "posterior row `{}` has a negative or non-finite entry",
                image_ids[row]
            )));
        }
        Ok(Self {
            image_ids,
            seen_names,
            values,
        })
    }

    /// Reads headerless `image_id,t1,...,tp` rows; columns follow `seen_names`.
    pub fn from_csv<R: Read>(source: R, seen_names: Vec<String>) -> Result<Self> {
        let p = seen_names.len();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(source);
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| Error::Parse {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                message: e.to_string(),
            })?;
            let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
            if record.len() != p + 1 {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: record.len().saturating_sub(1),
                    context: Some(format!("posterior line {line}")),
                });
            }
            ids.push(record[0].to_string());
            for field in record.iter().skip(1) {
                let x: f64 = field.parse().map_err(|_| Error::Parse {
                    line,
                    message: format!("`{field}` is not a number"),
                })?;
                data.push(x);
            }
        }
        let n = ids.len();
        Self::new(ids, seen_names, DMatrix::from_row_slice(n, p, &data))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (id, row) in self.image_ids.iter().zip(self.values.row_iter()) {
            out.push_str(id);
            for x in row.iter() {
                out.push(',');
                out.push_str(&format!("{x:?}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn seen_names(&self) -> &[String] {
        &self.seen_names
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.values.row(i).iter().copied().collect()
    }

    /// First `n` images.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.rows());
        Self {
            image_ids: self.image_ids[..n].to_vec(),
            seen_names: self.seen_names.clone(),
            values: self.values.rows(0, n).into_owned(),
        }
    }

    /// Applies [`truncate_topk`] to every row.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        let mut values = self.values.clone();
        let mut buf = vec![0.0; self.values.ncols()];
        for (i, mut row) in values.row_iter_mut().enumerate() {
            buf.iter_mut().zip(row.iter()).for_each(|(b, x)| *b = *x);
            let kept = truncate_topk(&buf, k).map_err(|e| match e {
                Error::AllZeroRow(_) => Error::AllZeroRow(i),
                other => other,
            })?;
            row.iter_mut().zip(&kept).for_each(|(x, k)| *x = *k);
        }
        Ok(Self {
            image_ids: self.image_ids.clone(),
            seen_names: self.seen_names.clone(),
            values,
        })
    }
}

/// Keeps the `k` largest entries of a posterior row (lower index wins ties),
/// zeroes the rest and rescales the survivors to sum to one.
pub fn truncate_topk(row: &[f64], k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("K must be positive".into()));
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    let mut out = vec![0.0; row.len()];
    let mut total = 0.0;
    for &j in order.iter().take(k) {
        if row[j] > 0.0 {
            out[j] = row[j];
            total += row[j];
        }
    }
    if total <= 0.0 {
        return Err(Error::AllZeroRow(0));
    }
    out.iter_mut().for_each(|x| *x /= total);
    Ok(out)
}

/// Per-image scores over the unseen classes, one row per image.
#[derive(Debug, Clone, PartialEq)]
pub struct UnseenScores {
    pub scores: DMatrix<f64>,
    pub unseen_names: Vec<String>,
}

/// Absorption probabilities of test images.
pub type AbsorptionResult = UnseenScores;

impl UnseenScores {
    pub fn rows(&self) -> usize {
        self.scores.nrows()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.scores.row(i).iter().copied().collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.scores.column(j).iter().copied().collect()
    }
}

fn identity_minus_q(ts: &TransitionSystem) -> DMatrix<f64> {
    let p = ts.transient_count();
    DMatrix::identity(p, p) - ts.q()
}

fn solve(lu: &LU<f64, Dyn, Dyn>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let x = lu.solve(rhs).ok_or(Error::SingularSystem)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::SingularSystem)
    }
}

fn clamp_unit(m: &mut DMatrix<f64>) {
    m.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
}

/// `N = (I - Q)^{-1}`: expected visits to each transient state.
pub fn fundamental_matrix(ts: &TransitionSystem) -> Result<DMatrix<f64>> {
    let p = ts.transient_count();
    let lu = identity_minus_q(ts).lu();
    let mut n = solve(&lu, &DMatrix::identity(p, p))?;
    n.iter_mut().for_each(|x| *x = x.max(0.0));
    Ok(n)
}

/// `B = (I - Q)^{-1} R`: absorption probabilities from each seen class.
pub fn absorbing_probabilities(ts: &TransitionSystem) -> Result<DMatrix<f64>> {
    Ok(AbsorptionModel::new(ts)?.absorption)
}

/// A transition system with its absorption matrix solved once, ready to
/// score any number of test images.
#[derive(Debug, Clone)]
pub struct AbsorptionModel {
    seen_names: Vec<String>,
    unseen_names: Vec<String>,
    absorption: DMatrix<f64>,
    r: DMatrix<f64>,
    transposed_lu: LU<f64, Dyn, Dyn>,
}

impl AbsorptionModel {
    pub fn new(ts: &TransitionSystem) -> Result<Self> {
        let m = identity_minus_q(ts);
        let transposed_lu = m.transpose().lu();
        let mut absorption = solve(&m.lu(), ts.r())?;
        clamp_unit(&mut absorption);
        Ok(Self {
            seen_names: ts.seen_names().to_vec(),
            unseen_names: ts.unseen_names().to_vec(),
            absorption,
            r: ts.r().clone(),
            transposed_lu,
        })
    }

    /// The precomputed `p × q` matrix `(I - Q)^{-1} R`.
    pub fn absorption(&self) -> &DMatrix<f64> {
        &self.absorption
    }

    pub fn unseen_names(&self) -> &[String] {
        &self.unseen_names
    }

    fn check_order(&self, seen: &[String]) -> Result<()> {
        if seen != self.seen_names.as_slice() {
            return Err(Error::OrderingMismatch(
                "posterior columns do not follow the transition system's seen classes".into(),
            ));
        }
        Ok(())
    }

    /// `S = T (I - Q)^{-1} R` for a whole batch.
    pub fn score_batch(&self, posterior: &PosteriorMatrix) -> Result<AbsorptionResult> {
        self.check_order(posterior.seen_names())?;
        let mut scores = posterior.values() * &self.absorption;
        clamp_unit(&mut scores);
        Ok(UnseenScores {
            scores,
            unseen_names: self.unseen_names.clone(),
        })
    }

    /// Same as [`score_batch`](Self::score_batch), splitting rows across threads.
    pub fn score_batch_parallel(&self, posterior: &PosteriorMatrix) -> Result<AbsorptionResult> {
        const BLOCK: usize = 1024;
        self.check_order(posterior.seen_names())?;
        let t = posterior.values();
        let n = t.nrows();
        let blocks: Vec<DMatrix<f64>> = (0..n)
            .step_by(BLOCK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|start| t.rows(start, BLOCK.min(n - start)) * &self.absorption)
            .collect();
        let mut scores = DMatrix::zeros(n, self.unseen_names.len());
        for (b, block) in blocks.into_iter().enumerate() {
            scores.rows_mut(b * BLOCK, block.nrows()).copy_from(&block);
        }
        clamp_unit(&mut scores);
        Ok(UnseenScores {
            scores,
            unseen_names: self.unseen_names.clone(),
        })
    }

    /// Absorption row of one test image via the extended chain: solve
    /// `x (I - Q) = t` for the image's fundamental-matrix row, then `x R`.
    pub fn score_single(&self, t_row: &[f64]) -> Result<Vec<f64>> {
        let p = self.seen_names.len();
        if t_row.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: t_row.len(),
                context: Some("posterior row".into()),
            });
        }
        let rhs = DVector::from_column_slice(t_row);
        let visits = self
            .transposed_lu
            .solve(&rhs)
            .filter(|x| x.iter().all(|v| v.is_finite()))
            .ok_or(Error::SingularSystem)?;
        Ok((visits.transpose() * &self.r)
            .iter()
            .map(|x| x.clamp(0.0, 1.0))
            .collect())
    }
}

/// Scores a batch of truncated posterior rows: `S = T (I - Q)^{-1} R`.
pub fn score_batch(posterior: &PosteriorMatrix, ts: &TransitionSystem) -> Result<AbsorptionResult> {
    AbsorptionModel::new(ts)?.score_batch(posterior)
}

/// Scores one posterior row through the extended chain.
pub fn score_single(t_row: &[f64], ts: &TransitionSystem) -> Result<Vec<f64>> {
    AbsorptionModel::new(ts)?.score_single(t_row)
}

/// Inverse-CDF lookup: first index whose cumulative weight exceeds `u`,
/// never past the last positive entry.
fn sample(cumulative: &[f64], last_positive: usize, u: f64) -> usize {
    cumulative.partition_point(|&c| c <= u).min(last_positive)
}

fn cumulate(weights: impl Iterator<Item = f64>) -> (Vec<f64>, usize) {
    let mut acc = 0.0;
    let mut last = 0;
    let cumulative = weights
        .enumerate()
        .map(|(i, w)| {
            if w > 0.0 {
                last = i;
            }
            acc += w;
            acc
        })
        .collect();
    (cumulative, last)
}

/// Monte-Carlo estimate of the absorption distribution when the start state
/// is drawn from `start`.
///
/// Walk `w` draws from its own ChaCha stream `w` under `seed`, so the result
/// does not depend on how walks are scheduled across threads.
pub fn simulate_absorption(
    ts: &TransitionSystem,
    start: &[f64],
    walks: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let p = ts.transient_count();
    let q = ts.absorbing_count();
    if start.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: start.len(),
            context: Some("start distribution".into()),
        });
    }
    let total: f64 = start.iter().sum();
    if start.iter().any(|x| !(x.is_finite() && *x >= 0.0))
        || (total - 1.0).abs() > DISTRIBUTION_TOLERANCE
    {
        return Err(Error::NonDistribution(total));
    }
    if walks == 0 {
        return Err(Error::Config("walks must be positive".into()));
    }

    let start_cdf = cumulate(start.iter().copied());
    let rows: Vec<(Vec<f64>, usize)> = (0..p)
        .map(|i| cumulate(ts.q().row(i).iter().chain(ts.r().row(i).iter()).copied()))
        .collect();

    let counts = (0..walks as u64)
        .into_par_iter()
        .fold(
            || vec![0u64; q],
            |mut counts, walk| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(walk);
                let mut state = sample(&start_cdf.0, start_cdf.1, rng.random());
                while state < p {
                    let (cdf, last) = &rows[state];
                    state = sample(cdf, *last, rng.random());
                }
                counts[state - p] += 1;
                counts
            },
        )
        .reduce(
            || vec![0u64; q],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / walks as f64)
        .collect())
}
