//! End-to-end experiment driver: one shared dataset, every requested method,
//! every requested top-K truncation, with precomputation timed apart from
//! per-image scoring.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{BipartiteSimilarity, ConseModel};
use crate::chain::{AbsorptionModel, PosteriorMatrix, UnseenScores};
use crate::classify::{evaluate, predict, ScoreReport};
use crate::data::{generate_synthetic, DataPaths, Dataset, SyntheticParams};
use crate::error::{Error, Result};
use crate::graph::{build_graph, transition_system, SemanticGraph};
use crate::json::{f64_sig17, g17};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Absorbing Markov chain on the semantic graph.
    Amp,
    /// Direct-similarity bipartite voting.
    Ds,
    /// Convex combination of seen prototypes.
    Conse,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Amp, Method::Ds, Method::Conse];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Amp => "amp",
            Method::Ds => "ds",
            Method::Conse => "conse",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "amp" => Ok(Method::Amp),
            "ds" => Ok(Method::Ds),
            "conse" => Ok(Method::Conse),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

/// Where the experiment's data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Paths(DataPaths),
    Synthetic(SyntheticParams),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SyntheticParams::default())
    }
}

/// A single K or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopK {
    One(usize),
    Many(Vec<usize>),
}

impl TopK {
    pub fn values(&self) -> Vec<usize> {
        match self {
            TopK::One(k) => vec![*k],
            TopK::Many(ks) => ks.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Neighbors per seen class in the seen subgraph.
    pub k_seen: usize,
    /// Seen classes each unseen class attaches to.
    pub k_unseen: usize,
    /// Seen classes each test image keeps after truncation.
    pub topk: TopK,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub data: DataSource,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k_seen: 2,
            k_unseen: 4,
            topk: TopK::One(5),
            methods: Method::ALL.to_vec(),
            seed: 0,
            data: DataSource::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a JSON config. Relative data paths resolve against the config's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config =
            Self::from_json(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?;
        if let (DataSource::Paths(paths), Some(base)) = (&mut config.data, path.parent()) {
            for p in [
                &mut paths.embeddings,
                &mut paths.posterior,
                &mut paths.seen_classes,
                &mut paths.unseen_classes,
                &mut paths.truth,
            ] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(config)
    }

    /// Checks the graph and truncation parameters against `p` seen classes.
    pub fn validate(&self, p: usize) -> Result<()> {
        let config = |m: String| Err(Error::Config(m));
        if self.k_seen == 0 || self.k_unseen == 0 {
            return config("k_seen and k_unseen must be positive".into());
        }
        if self.k_seen >= p {
            return config(format!("k_seen = {} must be below p = {p}", self.k_seen));
        }
        if self.k_unseen > p {
            return config(format!("k_unseen = {} exceeds p = {p}", self.k_unseen));
        }
        let ks = self.topk.values();
        if ks.is_empty() || ks.contains(&0) {
            return config("topk must list positive values".into());
        }
        if self.methods.is_empty() {
            return config("no methods selected".into());
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Paths(paths) => Dataset::load(paths),
            DataSource::Synthetic(params) => generate_synthetic(params, self.seed),
        }
    }
}

/// Builds the semantic graph for `data`.
pub fn build_semantic_graph(
    data: &Dataset,
    k_seen: usize,
    k_unseen: usize,
) -> Result<SemanticGraph> {
    build_graph(data.seen(), data.unseen(), k_seen, k_unseen)
}

/// A method with its one-time precomputation done.
#[derive(Debug, Clone)]
pub enum Scorer {
    Amp(AbsorptionModel),
    Ds(BipartiteSimilarity),
    Conse(ConseModel),
}

impl Scorer {
    /// Runs the method's precomputation and returns named stage timings.
    pub fn prepare(
        method: Method,
        data: &Dataset,
        k_seen: usize,
        k_unseen: usize,
    ) -> Result<(Self, Vec<(String, f64)>)> {
        let mut timings = Vec::new();
        let scorer = match method {
            Method::Amp => {
                let start = Instant::now();
                let graph = build_semantic_graph(data, k_seen, k_unseen)?;
                let ts = transition_system(&graph)?;
                timings.push(("graph_build".to_string(), start.elapsed().as_secs_f64()));
                let start = Instant::now();
                let model = AbsorptionModel::new(&ts)?;
                timings.push(("precompute".to_string(), start.elapsed().as_secs_f64()));
                Scorer::Amp(model)
            }
            Method::Ds => {
                let start = Instant::now();
                let sim = BipartiteSimilarity::new(data.seen(), data.unseen())?;
                timings.push(("precompute".to_string(), start.elapsed().as_secs_f64()));
                Scorer::Ds(sim)
            }
            Method::Conse => {
                let start = Instant::now();
                let model = ConseModel::new(data.seen(), data.unseen())?;
                timings.push(("precompute".to_string(), start.elapsed().as_secs_f64()));
                Scorer::Conse(model)
            }
        };
        Ok((scorer, timings))
    }

    /// Scores rows that have already been truncated.
    pub fn score(&self, truncated: &PosteriorMatrix) -> Result<UnseenScores> {
        match self {
            Scorer::Amp(model) => model.score_batch(truncated),
            Scorer::Ds(sim) => sim.score_batch(truncated),
            Scorer::Conse(model) => model.score_batch(truncated),
        }
    }

    /// The per-image stage: top-K truncation, scoring and prediction.
    pub fn score_and_predict(
        &self,
        posterior: &PosteriorMatrix,
        k: usize,
    ) -> Result<(UnseenScores, Vec<String>)> {
        let truncated = posterior.truncated(k)?;
        let scores = self.score(&truncated)?;
        let predictions = predict(&scores)?;
        Ok((scores, predictions))
    }
}

/// Metrics for one (method, K) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRun {
    pub method: Method,
    pub topk: usize,
    pub report: ScoreReport,
}

/// Spread of mean class accuracy across the K sweep for one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KStability {
    pub method: Method,
    #[serde(serialize_with = "f64_sig17")]
    pub accuracy_std: f64,
    #[serde(serialize_with = "f64_sig17")]
    pub auc_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub runs: Vec<MethodRun>,
    pub k_stability: Vec<KStability>,
    pub load_seconds: f64,
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

impl ExperimentReport {
    pub fn run(&self, method: Method, k: usize) -> Option<&MethodRun> {
        self.runs.iter().find(|r| r.method == method && r.topk == k)
    }

    pub fn stability(&self, method: Method) -> Option<&KStability> {
        self.k_stability.iter().find(|s| s.method == method)
    }

    /// `method,K,metric,value` rows for plotting.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("method,K,metric,value\n");
        for run in &self.runs {
            let mut row = |metric: &str, value: f64| {
                out.push_str(&format!(
                    "{},{},{metric},{}\n",
                    run.method,
                    run.topk,
                    g17(value)
                ));
            };
            row("mean_auc", run.report.mean_auc);
            row("mean_class_accuracy", run.report.mean_class_accuracy);
            for (class, auc) in &run.report.per_class_auc {
                row(&format!("auc:{class}"), *auc);
            }
            for (stage, secs) in &run.report.timings {
                row(&format!("seconds:{stage}"), *secs);
            }
        }
        out
    }

    pub fn summary_json(&self, config: &ExperimentConfig) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            method: Method,
            topk: usize,
            #[serde(serialize_with = "f64_sig17")]
            mean_auc: f64,
            #[serde(serialize_with = "f64_sig17")]
            mean_class_accuracy: f64,
            report: &'a str,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            config: &'a ExperimentConfig,
            runs: Vec<Row<'a>>,
            k_stability: &'a [KStability],
            notes: Vec<&'static str>,
        }
        let names: Vec<String> = self.runs.iter().map(report_file_name).collect();
        let summary = Summary {
            config,
            runs: self
                .runs
                .iter()
                .zip(&names)
                .map(|(r, name)| Row {
                    method: r.method,
                    topk: r.topk,
                    mean_auc: r.report.mean_auc,
                    mean_class_accuracy: r.report.mean_class_accuracy,
                    report: name,
                })
                .collect(),
            k_stability: &self.k_stability,
            notes: vec![
                "ds: unseen score is the raw posterior-weighted sum of seen-unseen cosines, no per-class normalization",
                "conse: seen prototypes are unit-normalized before combination",
                "K larger than the number of seen classes keeps every seen class",
            ],
        };
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    }

    /// Writes one report per (method, K), `metrics.csv` and `summary.json`.
    pub fn write(&self, config: &ExperimentConfig, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(path, e))
        };
        for run in &self.runs {
            write(&report_file_name(run), run.report.to_json())?;
        }
        write("metrics.csv", self.metrics_csv())?;
        write("summary.json", self.summary_json(config))
    }
}

pub fn report_file_name(run: &MethodRun) -> String {
    format!("report_{}_K{}.json", run.method, run.topk)
}

/// Runs every configured method at every configured K on the same data.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let data = config.load_data()?;
    let load_seconds = start.elapsed().as_secs_f64();
    run_on(config, &data, load_seconds)
}

/// [`run_experiment`] on an already loaded dataset.
pub fn run_on(
    config: &ExperimentConfig,
    data: &Dataset,
    load_seconds: f64,
) -> Result<ExperimentReport> {
    config.validate(data.seen().len())?;
    let ks = config.topk.values();
    let mut runs = Vec::new();
    let mut k_stability = Vec::new();
    for &method in &config.methods {
        let (scorer, prep_timings) = Scorer::prepare(method, data, config.k_seen, config.k_unseen)?;
        let mut accuracies = Vec::new();
        let mut aucs = Vec::new();
        for &k in &ks {
            let start = Instant::now();
            let truncated = data.posterior().truncated(k)?;
            let scores = scorer.score(&truncated)?;
            let scoring = start.elapsed().as_secs_f64();

            let start = Instant::now();
            let mut report = evaluate(&scores, data.truth(), Vec::new())?;
            let evaluation = start.elapsed().as_secs_f64();

            report.timings = std::iter::once(("load".to_string(), load_seconds))
                .chain(prep_timings.iter().cloned())
                .chain([
                    ("scoring".to_string(), scoring),
                    ("evaluation".to_string(), evaluation),
                ])
                .collect();
            accuracies.push(report.mean_class_accuracy);
            aucs.push(report.mean_auc);
            runs.push(MethodRun {
                method,
                topk: k,
                report,
            });
        }
        if ks.len() > 1 {
            k_stability.push(KStability {
                method,
                accuracy_std: std_dev(&accuracies),
                auc_std: std_dev(&aucs),
            });
        }
    }
    Ok(ExperimentReport {
        runs,
        k_stability,
        load_seconds,
    })
}
