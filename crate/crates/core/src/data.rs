//! The shared inputs every scoring method consumes, their on-disk layout, and
//! a seeded synthetic generator.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chain::PosteriorMatrix;
use crate::embed::{cosine_similarity, load_embeddings, normalized, EmbeddingTable};
use crate::error::{Error, Result};

/// Seen and unseen prototypes, test posteriors and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    seen: EmbeddingTable,
    unseen: EmbeddingTable,
    posterior: PosteriorMatrix,
    truth: Vec<String>,
}

impl Dataset {
    pub fn new(
        seen: EmbeddingTable,
        unseen: EmbeddingTable,
        posterior: PosteriorMatrix,
        truth: Vec<String>,
    ) -> Result<Self> {
        if seen.dimension() != unseen.dimension() {
            return Err(Error::DimensionMismatch {
                expected: seen.dimension(),
                found: unseen.dimension(),
                context: Some("unseen prototypes".into()),
            });
        }
        let seen_set: HashSet<&String> = seen.names().iter().collect();
        if let Some(name) = unseen.names().iter().find(|n| seen_set.contains(n)) {
            return Err(Error::NameCollision(name.clone()));
        }
        if posterior.seen_names() != seen.names() {
            return Err(Error::OrderingMismatch(
                "posterior columns do not follow the seen class list".into(),
            ));
        }
        if truth.len() != posterior.rows() {
            return Err(Error::DimensionMismatch {
                expected: posterior.rows(),
                found: truth.len(),
                context: Some("truth labels".into()),
            });
        }
        let unseen_set: HashSet<&String> = unseen.names().iter().collect();
        if let Some(label) = truth.iter().find(|t| !unseen_set.contains(t)) {
            return Err(Error::UnknownLabel(label.clone()));
        }
        Ok(Self {
            seen,
            unseen,
            posterior,
            truth,
        })
    }

    pub fn seen(&self) -> &EmbeddingTable {
        &self.seen
    }

    pub fn unseen(&self) -> &EmbeddingTable {
        &self.unseen
    }

    pub fn posterior(&self) -> &PosteriorMatrix {
        &self.posterior
    }

    pub fn truth(&self) -> &[String] {
        &self.truth
    }

    /// The first `n` test images.
    pub fn head(&self, n: usize) -> Self {
        let posterior = self.posterior.head(n);
        let truth = self.truth[..posterior.rows()].to_vec();
        Self {
            seen: self.seen.clone(),
            unseen: self.unseen.clone(),
            posterior,
            truth,
        }
    }

    pub fn load(paths: &DataPaths) -> Result<Self> {
        let embeddings = load_embeddings(open(&paths.embeddings)?)?;
        let seen_names = read_class_list(open(&paths.seen_classes)?)?;
        let unseen_names = read_class_list(open(&paths.unseen_classes)?)?;
        let seen = embeddings.select(&seen_names)?;
        let unseen = embeddings.select(&unseen_names)?;
        let posterior = PosteriorMatrix::from_csv(open(&paths.posterior)?, seen_names)?;
        let labels = read_truth(open(&paths.truth)?)?;
        let truth = posterior
            .image_ids()
            .iter()
            .map(|id| {
                labels
                    .get(id)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("no truth label for image `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(seen, unseen, posterior, truth)
    }

    /// Writes the dataset under `dir` using the file names of [`DataPaths::in_dir`].
    pub fn save(&self, dir: &Path) -> Result<DataPaths> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = DataPaths::in_dir(dir);
        let mut embeddings = self.seen.to_csv();
        embeddings.push_str(&self.unseen.to_csv());
        let list = |names: &[String]| names.iter().map(|n| format!("{n}\n")).collect::<String>();
        let truth: String = self
            .posterior
            .image_ids()
            .iter()
            .zip(&self.truth)
            .map(|(id, label)| format!("{id},{label}\n"))
            .collect();
        for (path, text) in [
            (&paths.embeddings, embeddings),
            (&paths.posterior, self.posterior.to_csv()),
            (&paths.seen_classes, list(self.seen.names())),
            (&paths.unseen_classes, list(self.unseen.names())),
            (&paths.truth, truth),
        ] {
            fs::write(path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(paths)
    }
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Input file locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub embeddings: PathBuf,
    pub posterior: PathBuf,
    pub seen_classes: PathBuf,
    pub unseen_classes: PathBuf,
    pub truth: PathBuf,
}

impl DataPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            embeddings: dir.join("embeddings.csv"),
            posterior: dir.join("posterior.csv"),
            seen_classes: dir.join("seen_classes.txt"),
            unseen_classes: dir.join("unseen_classes.txt"),
            truth: dir.join("truth.csv"),
        }
    }
}

/// One class name per line; blank lines are skipped.
pub fn read_class_list<R: Read>(mut source: R) -> Result<Vec<String>> {
    let mut text = String::new();
    source.read_to_string(&mut text).map_err(|e| Error::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    let names: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    let mut seen = HashSet::new();
    if let Some(dup) = names.iter().find(|n| !seen.insert(*n)) {
        return Err(Error::DuplicateName(dup.clone()));
    }
    Ok(names)
}

/// `image_id,class_name` rows.
pub fn read_truth<R: Read>(source: R) -> Result<HashMap<String, String>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(source);
    let mut labels = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: "expected `image_id,class_name`".into(),
            });
        }
        if labels
            .insert(record[0].to_string(), record[1].to_string())
            .is_some()
        {
            return Err(Error::DuplicateName(record[0].to_string()));
        }
    }
    Ok(labels)
}

/// Parameters of the synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    /// Seen classes.
    pub p: usize,
    /// Unseen classes.
    pub q: usize,
    /// Test images.
    pub n: usize,
    /// Embedding dimension.
    pub d: usize,
    /// Standard deviation of the Gaussian noise added to posterior logits.
    pub noise: f64,
    /// Softmax temperature applied to prototype cosines.
    pub temperature: f64,
    /// Number of semantic clusters the prototypes are drawn around.
    pub clusters: usize,
    /// Spread of prototypes around their cluster center.
    pub spread: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            p: 40,
            q: 10,
            n: 2000,
            d: 100,
            noise: 2.0,
            temperature: 0.2,
            clusters: 8,
            spread: 1.0,
        }
    }
}

fn gaussian_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        if let Ok(u) = normalized(&v) {
            return u;
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / total).collect()
}

/// Seeded synthetic dataset.
///
/// Prototypes are unit vectors scattered around random cluster centers, class
/// `i` of each side going to cluster `i mod clusters`. Each
/// test image gets a ground-truth unseen class (image `i < q` gets class `i`,
/// the rest are drawn uniformly) and the posterior row
/// `softmax(cos(truth, seen_j) / temperature + noise * ε_j)`.
pub fn generate_synthetic(params: &SyntheticParams, seed: u64) -> Result<Dataset> {
    let SyntheticParams {
        p,
        q,
        n,
        d,
        noise,
        temperature,
        clusters,
        spread,
    } = *params;
    if p == 0 || q == 0 {
        return Err(Error::Config(
            "synthetic data needs p >= 1 and q >= 1".into(),
        ));
    }
    if n < q {
        return Err(Error::Config(format!("n = {n} must be at least q = {q}")));
    }
    if d < 2 {
        return Err(Error::Config("dimension must be at least 2".into()));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::Config("noise must be finite and nonnegative".into()));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config("temperature must be positive".into()));
    }
    if clusters == 0 || !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::Config(
            "clusters must be positive and spread nonnegative".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..clusters).map(|_| gaussian_unit(&mut rng, d)).collect();
    let prototype = |rng: &mut ChaCha8Rng, cluster: usize| loop {
        let center = &centers[cluster % clusters];
        let v: Vec<f64> = center
            .iter()
            .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt())
            .collect();
        if let Ok(u) = normalized(&v) {
            return u;
        }
    };
    let width = |count: usize| count.saturating_sub(1).to_string().len().max(2);
    let (wp, wq, wn) = (width(p), width(q), width(n));
    let seen_rows: Vec<(String, Vec<f64>)> = (0..p)
        .map(|i| (format!("seen_{i:0wp$}"), prototype(&mut rng, i)))
        .collect();
    let unseen_rows: Vec<(String, Vec<f64>)> = (0..q)
        .map(|j| (format!("unseen_{j:0wq$}"), prototype(&mut rng, j)))
        .collect();

    let affinity: Vec<Vec<f64>> = unseen_rows
        .iter()
        .map(|(_, u)| {
            seen_rows
                .iter()
                .map(|(_, s)| cosine_similarity(u, s).map(|c| c / temperature))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut truth = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n * p);
    for i in 0..n {
        let class = if i < q { i } else { rng.random_range(0..q) };
        let logits: Vec<f64> = affinity[class]
            .iter()
            .map(|a| a + noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        values.extend(softmax(&logits));
        truth.push(unseen_rows[class].0.clone());
    }

    let seen = EmbeddingTable::new(seen_rows)?;
    let unseen = EmbeddingTable::new(unseen_rows)?;
    let ids = (0..n).map(|i| format!("img_{i:0wn$}")).collect();
    let posterior = PosteriorMatrix::new(
        ids,
        seen.names().to_vec(),
        DMatrix::from_row_slice(n, p, &values),
    )?;
    Dataset::new(seen, unseen, posterior, truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticParams {
        SyntheticParams {
            p: 6,
            q: 3,
            n: 12,
            d: 8,
            ..SyntheticParams::default()
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_synthetic(&small(), 9).unwrap();
        let b = generate_synthetic(&small(), 9).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(), 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn one_image_per_class_covers_every_class() {
        let params = SyntheticParams { n: 3, ..small() };
        let data = generate_synthetic(&params, 1).unwrap();
        let covered: HashSet<&String> = data.truth().iter().collect();
        assert_eq!(covered.len(), 3);
    }

    #[test]
    fn zero_noise_low_temperature_is_one_hot_on_nearest_seen() {
        let params = SyntheticParams {
            noise: 0.0,
            temperature: 1e-6,
            ..small()
        };
        let data = generate_synthetic(&params, 4).unwrap();
        for (i, label) in data.truth().iter().enumerate() {
            let u = data.unseen().get(label).unwrap();
            let sims: Vec<f64> = data
                .seen()
                .vectors()
                .iter()
                .map(|s| cosine_similarity(u, s).unwrap())
                .collect();
            let nearest = crate::classify::argmax(sims.iter().copied()).unwrap();
            let row = data.posterior().row(i);
            assert!((row[nearest] - 1.0).abs() < 1e-9, "{row:?}");
        }
    }

    #[test]
    fn rows_are_distributions() {
        let data = generate_synthetic(&small(), 2).unwrap();
        for i in 0..data.posterior().rows() {
            let sum: f64 = data.posterior().row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        for params in [
            SyntheticParams { n: 2, ..small() },
            SyntheticParams { d: 1, ..small() },
            SyntheticParams { q: 0, ..small() },
            SyntheticParams {
                noise: -1.0,
                ..small()
            },
        ] {
            assert!(matches!(
                generate_synthetic(&params, 0),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_synthetic(&small(), 5).unwrap();
        let paths = data.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(&paths).unwrap(), data);
    }

    #[test]
    fn class_list_rejects_duplicates() {
        assert_eq!(
            read_class_list("a\n\n b \n".as_bytes()).unwrap(),
            vec!["a", "b"]
        );
        assert!(matches!(
            read_class_list("a\na\n".as_bytes()),
            Err(Error::DuplicateName(_))
        ));
    }
}
