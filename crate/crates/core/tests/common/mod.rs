#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use zsl_amp::chain::PosteriorMatrix;
use zsl_amp::graph::{SemanticGraph, TransitionSystem};
use zsl_amp::Error;

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// The 2-seen/2-unseen graph y1–y2, y1–z1, y2–z2 with unit weights.
pub fn fixture_graph() -> SemanticGraph {
    SemanticGraph::from_edges(
        vec!["y1".into(), "y2".into()],
        vec!["z1".into(), "z2".into()],
        [
            ("y1".into(), "y2".into(), 1.0),
            ("y1".into(), "z1".into(), 1.0),
            ("y2".into(), "z2".into(), 1.0),
        ],
    )
    .unwrap()
}

/// A random valid transition system with `p ≤ max_p` transient and
/// `q ≤ max_q` absorbing states. Sparse nonnegative rows, resampled until
/// every transient state can be absorbed.
pub fn random_system(rng: &mut ChaCha8Rng, max_p: usize, max_q: usize) -> TransitionSystem {
    let p = rng.random_range(1..=max_p);
    let q = rng.random_range(1..=max_q);
    loop {
        let density = rng.random_range(0.1..0.6);
        let mut q_block = DMatrix::zeros(p, p);
        let mut r_block = DMatrix::zeros(p, q);
        for i in 0..p {
            loop {
                for j in 0..p {
                    if j != i && rng.random_bool(density) {
                        q_block[(i, j)] = rng.random_range(0.05..1.0);
                    }
                }
                for j in 0..q {
                    if rng.random_bool(density * 0.5) {
                        r_block[(i, j)] = rng.random_range(0.05..1.0);
                    }
                }
                let total = q_block.row(i).sum() + r_block.row(i).sum();
                if total > 0.0 {
                    q_block.row_mut(i).scale_mut(1.0 / total);
                    r_block.row_mut(i).scale_mut(1.0 / total);
                    break;
                }
            }
        }
        match TransitionSystem::new(q_block, r_block, names("y", p), names("z", q)) {
            Ok(ts) => return ts,
            Err(Error::UnreachableAbsorber(_)) => continue,
            Err(Error::InvalidTransition(_)) => continue,
            Err(e) => panic!("unexpected error: {e}"),
        }
    }
}

/// A random probability vector of length `p` with at least one positive entry.
pub fn random_distribution(rng: &mut ChaCha8Rng, p: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..p)
            .map(|_| {
                if rng.random_bool(0.5) {
                    rng.random::<f64>()
                } else {
                    0.0
                }
            })
            .collect();
        let total: f64 = v.iter().sum();
        if total > 0.0 {
            return v.into_iter().map(|x| x / total).collect();
        }
    }
}

pub fn random_posterior(rng: &mut ChaCha8Rng, ts: &TransitionSystem, n: usize) -> PosteriorMatrix {
    let p = ts.transient_count();
    let data: Vec<f64> = (0..n).flat_map(|_| random_distribution(rng, p)).collect();
    PosteriorMatrix::new(
        names("x", n),
        ts.seen_names().to_vec(),
        DMatrix::from_row_slice(n, p, &data),
    )
    .unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Exhaustive pair count: fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Kept in half-units until the end.
pub fn auc_by_pairs(scores: &[f64], positives: &[bool]) -> f64 {
    let mut half_pairs: u128 = 0;
    let mut pairs: u128 = 0;
    for (i, &pi) in positives.iter().enumerate() {
        if !pi {
            continue;
        }
        for (j, &pj) in positives.iter().enumerate() {
            if pj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                half_pairs += 2;
            } else if scores[i] == scores[j] {
                half_pairs += 1;
            }
        }
    }
    half_pairs as f64 / (2 * pairs) as f64
}
