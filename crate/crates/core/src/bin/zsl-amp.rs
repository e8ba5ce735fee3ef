use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use zsl_amp::bench::{benchmark_scaling, BenchOptions};
use zsl_amp::data::{generate_synthetic, DataPaths, SyntheticParams};
use zsl_amp::experiment::{
    build_semantic_graph, run_experiment, DataSource, ExperimentConfig, Method, TopK,
};
use zsl_amp::{Error, Result};

#[derive(Parser)]
#[command(
    name = "zsl-amp",
    version,
    about = "Zero-shot classification by absorbing Markov chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every method at every K and write reports.
    Run(Common),
    /// Write a synthetic dataset.
    Synth(Common),
    /// Time the per-image scoring stage at several batch sizes.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Batch sizes to time.
        #[arg(long, value_delimiter = ',', default_value = "1000,2000,4000,8000")]
        n_values: Vec<usize>,
        /// Minimum milliseconds per measurement.
        #[arg(long, default_value_t = 50)]
        min_time_ms: u64,
    },
    /// Dump the semantic graph as JSON.
    Graph(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k_seen: Option<usize>,
    #[arg(long)]
    k_unseen: Option<usize>,
    /// One K or a comma-separated sweep.
    #[arg(long, value_delimiter = ',')]
    topk: Option<Vec<usize>>,
    /// Comma-separated subset of amp,ds,conse.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (run, synth, bench) or file (graph; stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Directory holding embeddings.csv, posterior.csv, seen_classes.txt,
    /// unseen_classes.txt and truth.csv.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    posterior: Option<PathBuf>,
    #[arg(long)]
    seen_classes: Option<PathBuf>,
    #[arg(long)]
    unseen_classes: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,

    /// Synthetic data: seen classes.
    #[arg(long)]
    p: Option<usize>,
    /// Synthetic data: unseen classes.
    #[arg(long)]
    q: Option<usize>,
    /// Synthetic data: test images.
    #[arg(long)]
    n: Option<usize>,
    /// Synthetic data: embedding dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Synthetic data: posterior logit noise.
    #[arg(long)]
    noise: Option<f64>,
    /// Synthetic data: softmax temperature.
    #[arg(long)]
    temperature: Option<f64>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(k) = self.k_seen {
            config.k_seen = k;
        }
        if let Some(k) = self.k_unseen {
            config.k_unseen = k;
        }
        if let Some(ks) = &self.topk {
            config.topk = TopK::Many(ks.clone());
        }
        if let Some(methods) = &self.methods {
            config.methods = methods
                .iter()
                .map(|m| m.parse::<Method>())
                .collect::<Result<_>>()?;
        }
        if let Some(seed) = self.seed {
            config.seed = seed;
        }

        let file_flags = [
            &self.embeddings,
            &self.posterior,
            &self.seen_classes,
            &self.unseen_classes,
            &self.truth,
        ];
        if let Some(dir) = &self.data_dir {
            config.data = DataSource::Paths(DataPaths::in_dir(dir));
        }
        if file_flags.iter().any(|f| f.is_some()) {
            let mut paths = match &config.data {
                DataSource::Paths(paths) => paths.clone(),
                DataSource::Synthetic(_) if file_flags.iter().all(|f| f.is_some()) => {
                    DataPaths::in_dir(Path::new("."))
                }
                DataSource::Synthetic(_) => {
                    return Err(Error::Config(
                        "--embeddings, --posterior, --seen-classes, --unseen-classes and --truth go together"
                            .into(),
                    ))
                }
            };
            let set = |slot: &mut PathBuf, flag: &Option<PathBuf>| {
                if let Some(p) = flag {
                    *slot = p.clone();
                }
            };
            set(&mut paths.embeddings, &self.embeddings);
            set(&mut paths.posterior, &self.posterior);
            set(&mut paths.seen_classes, &self.seen_classes);
            set(&mut paths.unseen_classes, &self.unseen_classes);
            set(&mut paths.truth, &self.truth);
            config.data = DataSource::Paths(paths);
        }

        let synthetic_flags = self.p.is_some()
            || self.q.is_some()
            || self.n.is_some()
            || self.d.is_some()
            || self.noise.is_some()
            || self.temperature.is_some();
        if synthetic_flags {
            let DataSource::Synthetic(params) = &mut config.data else {
                return Err(Error::Config(
                    "synthetic generator flags cannot be combined with input files".into(),
                ));
            };
            let SyntheticParams {
                p,
                q,
                n,
                d,
                noise,
                temperature,
                ..
            } = params;
            *p = self.p.unwrap_or(*p);
            *q = self.q.unwrap_or(*q);
            *n = self.n.unwrap_or(*n);
            *d = self.d.unwrap_or(*d);
            *noise = self.noise.unwrap_or(*noise);
            *temperature = self.temperature.unwrap_or(*temperature);
        }
        Ok(config)
    }

    fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn write(path: &Path, text: String) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.into(),
            source: e,
        })?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let config = common.config()?;
            let report = run_experiment(&config)?;
            let dir = common.out_dir();
            report.write(&config, &dir)?;
            println!(
                "{:<6} {:>3} {:>10} {:>10}",
                "method", "K", "mean_acc", "mean_auc"
            );
            for r in &report.runs {
                println!(
                    "{:<6} {:>3} {:>10.4} {:>10.4}",
                    r.method, r.topk, r.report.mean_class_accuracy, r.report.mean_auc
                );
            }
            for s in &report.k_stability {
                println!("{} accuracy std across K: {:.6}", s.method, s.accuracy_std);
            }
            println!("reports written to {}", dir.display());
        }
        Command::Synth(common) => {
            let config = common.config()?;
            let DataSource::Synthetic(params) = &config.data else {
                return Err(Error::Config(
                    "synth needs synthetic generator parameters".into(),
                ));
            };
            let data = generate_synthetic(params, config.seed)?;
            let dir = common.out_dir();
            data.save(&dir)?;
            println!(
                "wrote {} seen, {} unseen classes and {} images to {}",
                data.seen().len(),
                data.unseen().len(),
                data.posterior().rows(),
                dir.display()
            );
        }
        Command::Bench {
            common,
            n_values,
            min_time_ms,
        } => {
            let mut config = common.config()?;
            let max_n = n_values.iter().copied().max().unwrap_or(0);
            if let DataSource::Synthetic(params) = &mut config.data {
                params.n = params.n.max(max_n).max(params.q);
            }
            let options = BenchOptions {
                min_time: Duration::from_millis(min_time_ms),
                ..BenchOptions::default()
            };
            let report = benchmark_scaling(&config, &n_values, &options)?;
            let dir = common.out_dir();
            write(&dir.join("scaling.csv"), report.to_csv())?;
            write(&dir.join("scaling.json"), report.to_json())?;
            for row in &report.rows {
                println!(
                    "{:<6} n={:>7} {:>12.6} ms",
                    row.method,
                    row.n,
                    row.seconds * 1e3
                );
            }
            for m in &report.methods {
                if let Some(fit) = &m.fit {
                    println!(
                        "{:<6} slope={:.3e} s/image intercept={:.3e} s R^2={:.4}",
                        m.method, fit.slope, fit.intercept, fit.r_squared
                    );
                }
            }
        }
        Command::Graph(common) => {
            let config = common.config()?;
            let data = config.load_data()?;
            config.validate(data.seen().len())?;
            let graph = build_semantic_graph(&data, config.k_seen, config.k_unseen)?;
            let json = graph.to_json();
            match &common.out {
                Some(path) => write(path, json)?,
                None => println!("{json}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
