//! Relatedness baselines that score unseen classes from the same truncated
//! posteriors and prototypes as the absorbing-chain method.
//!
//! * direct similarity (DS): each unseen class receives the posterior-weighted
//!   sum of its cosine similarities to the seen classes.
//! * ConSE: the image is embedded as the posterior-weighted convex combination
//!   of unit seen prototypes and matched to unseen prototypes by cosine.

use nalgebra::DMatrix;

use crate::chain::{PosteriorMatrix, UnseenScores};
use crate::embed::{cosine_similarity, norm, normalized, EmbeddingTable};
use crate::error::{Error, Result};

/// Seen-to-unseen cosine similarities, `p × q`.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteSimilarity {
    sim: DMatrix<f64>,
    seen_names: Vec<String>,
    unseen_names: Vec<String>,
}

impl BipartiteSimilarity {
    pub fn new(seen: &EmbeddingTable, unseen: &EmbeddingTable) -> Result<Self> {
        let mut sim = DMatrix::zeros(seen.len(), unseen.len());
        for (i, s) in seen.vectors().iter().enumerate() {
            for (j, u) in unseen.vectors().iter().enumerate() {
                sim[(i, j)] = cosine_similarity(s, u)?;
            }
        }
        Ok(Self {
            sim,
            seen_names: seen.names().to_vec(),
            unseen_names: unseen.names().to_vec(),
        })
    }

    /// Wraps an explicit similarity matrix; entries must lie in `[-1, 1]`.
    pub fn from_matrix(
        sim: DMatrix<f64>,
        seen_names: Vec<String>,
        unseen_names: Vec<String>,
    ) -> Result<Self> {
        if sim.shape() != (seen_names.len(), unseen_names.len()) {
            return Err(Error::OrderingMismatch(format!(
                "similarity matrix is {:?} for {} seen and {} unseen classes",
                sim.shape(),
                seen_names.len(),
                unseen_names.len()
            )));
        }
        if sim.iter().any(|x| !(-1.0..=1.0).contains(x)) {
            return Err(Error::Config("similarities must lie in [-1, 1]".into()));
        }
        Ok(Self {
            sim,
            seen_names,
            unseen_names,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.sim
    }

    pub fn unseen_names(&self) -> &[String] {
        &self.unseen_names
    }

    pub fn score_batch(&self, posterior: &PosteriorMatrix) -> Result<UnseenScores> {
        if posterior.seen_names() != self.seen_names.as_slice() {
            return Err(Error::OrderingMismatch(
                "posterior columns do not follow the similarity rows".into(),
            ));
        }
        Ok(UnseenScores {
            scores: posterior.values() * &self.sim,
            unseen_names: self.unseen_names.clone(),
        })
    }
}

/// `score(z_j) = Σ_i t_i · sim(y_i, z_j)`.
pub fn ds_score(t_row: &[f64], sim: &BipartiteSimilarity) -> Result<Vec<f64>> {
    if t_row.len() != sim.sim.nrows() {
        return Err(Error::OrderingMismatch(format!(
            "row has {} entries for {} seen classes",
            t_row.len(),
            sim.sim.nrows()
        )));
    }
    Ok((0..sim.sim.ncols())
        .map(|j| {
            t_row
                .iter()
                .zip(sim.sim.column(j).iter())
                .map(|(t, s)| t * s)
                .sum()
        })
        .collect())
}

/// Posterior-weighted combination of unit-normalized seen prototypes.
pub fn conse_embed<V: AsRef<[f64]>>(t_row: &[f64], seen_prototypes: &[V]) -> Result<Vec<f64>> {
    if t_row.len() != seen_prototypes.len() {
        return Err(Error::OrderingMismatch(format!(
            "row has {} entries for {} seen prototypes",
            t_row.len(),
            seen_prototypes.len()
        )));
    }
    let d = seen_prototypes.first().map_or(0, |v| v.as_ref().len());
    let mut out = vec![0.0; d];
    for (&t, proto) in t_row.iter().zip(seen_prototypes) {
        if t == 0.0 {
            continue;
        }
        let unit = normalized(proto.as_ref())?;
        if unit.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: unit.len(),
                context: Some("seen prototype".into()),
            });
        }
        out.iter_mut().zip(&unit).for_each(|(o, u)| *o += t * u);
    }
    if norm(&out) <= f64::EPSILON {
        return Err(Error::ZeroVector(Some("convex combination".into())));
    }
    Ok(out)
}

/// Cosine similarity of an embedded image to every unseen prototype.
pub fn conse_score<V: AsRef<[f64]>>(embedded: &[f64], unseen_prototypes: &[V]) -> Result<Vec<f64>> {
    unseen_prototypes
        .iter()
        .map(|u| cosine_similarity(embedded, u.as_ref()))
        .collect()
}

/// ConSE with prototypes normalized once, for batch scoring.
#[derive(Debug, Clone)]
pub struct ConseModel {
    seen_names: Vec<String>,
    unseen_names: Vec<String>,
    /// `p × d`, unit rows.
    seen: DMatrix<f64>,
    /// `d × q`, unit columns.
    unseen_t: DMatrix<f64>,
}

impl ConseModel {
    pub fn new(seen: &EmbeddingTable, unseen: &EmbeddingTable) -> Result<Self> {
        if seen.dimension() != unseen.dimension() {
            return Err(Error::DimensionMismatch {
                expected: seen.dimension(),
                found: unseen.dimension(),
                context: Some("unseen prototypes".into()),
            });
        }
        let d = seen.dimension();
        let unit_rows = |t: &EmbeddingTable| -> Result<Vec<f64>> {
            let mut flat = Vec::with_capacity(t.len() * d);
            for v in t.vectors() {
                flat.extend(normalized(v)?);
            }
            Ok(flat)
        };
        Ok(Self {
            seen_names: seen.names().to_vec(),
            unseen_names: unseen.names().to_vec(),
            seen: DMatrix::from_row_slice(seen.len(), d, &unit_rows(seen)?),
            unseen_t: DMatrix::from_column_slice(d, unseen.len(), &unit_rows(unseen)?),
        })
    }

    pub fn score_batch(&self, posterior: &PosteriorMatrix) -> Result<UnseenScores> {
        if posterior.seen_names() != self.seen_names.as_slice() {
            return Err(Error::OrderingMismatch(
                "posterior columns do not follow the seen prototypes".into(),
            ));
        }
        let mut embedded = posterior.values() * &self.seen;
        for (i, mut row) in embedded.row_iter_mut().enumerate() {
            let n = row.norm();
            if n <= f64::EPSILON {
                return Err(Error::ZeroVector(Some(format!(
                    "embedding of image `{}`",
                    posterior.image_ids()[i]
                ))));
            }
            row /= n;
        }
        let mut scores = embedded * &self.unseen_t;
        scores.iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0));
        Ok(UnseenScores {
            scores,
            unseen_names: self.unseen_names.clone(),
        })
    }
}
