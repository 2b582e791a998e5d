//! The `dfpe` command line.
//!
//! Exit codes: 0 on success, 2 on invalid flags or input files, 1 on any
//! other failure. Diagnostics go to stderr; results go to `--out` or stdout.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cluster::{debug_dump, dbscan, promote_noise_to_singletons};
use crate::collect::{collect_predictions, load_endpoints, HttpTransport};
use crate::config::{ConfigFile, ConfigPatch, FilterOrder, FingerprintStrategy, RunConfig};
use crate::error::{Error, Result};
use crate::ingest::{load_dataset, load_predictions, DisciplineMap, PredictionRecord};
use crate::jsonl;
use crate::pipeline::{run as run_pipeline, Inputs};
use crate::select::build_ensembles;
use crate::simulate::{empirical_accuracy_check, generate, SyntheticPoolSpec};
use crate::sweep::{preset_with, run_sweep, Preset, SweepAxis, SweepSpec};
use crate::vote::{predict_all, render_report, DisciplineAggregation, EvalReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    AnswerPattern,
    ExternalEmbedding,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OrderArg {
    FilterThenCluster,
    ClusterThenFilter,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
enum AggregationArg {
    #[default]
    Pooled,
    SubjectMean,
}

#[derive(Debug, Clone, Default, Args)]
struct Shared {
    /// Run config file (TOML); flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Question manifest (JSON lines).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Prediction log (JSON lines).
    #[arg(long, global = true)]
    predictions: Option<PathBuf>,
    /// Per-response embedding file (JSON lines).
    #[arg(long, global = true)]
    embeddings: Option<PathBuf>,
    /// Subject to discipline map (JSON lines).
    #[arg(long = "discipline-map", global = true)]
    discipline_map: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// optimal, balanced or efficient (from the config file).
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Seed for synthetic generation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Accuracy quantile below which models are dropped, in [0, 1].
    #[arg(long, global = true)]
    quantile: Option<f64>,
    /// Weight sharpness: weights are proportional to exp(gamma * accuracy).
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// DBSCAN neighborhood radius in cosine distance.
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// DBSCAN core-point threshold, counting the point itself.
    #[arg(long = "min-pts", global = true)]
    min_pts: Option<usize>,
    /// Fingerprint source for clustering.
    #[arg(long = "fingerprint-strategy", value_enum, global = true)]
    fingerprint_strategy: Option<StrategyArg>,
    /// Whether the accuracy filter runs before or after clustering.
    #[arg(long = "filter-order", value_enum, global = true)]
    filter_order: Option<OrderArg>,
    /// How per-discipline accuracy combines subjects.
    #[arg(long = "discipline-aggregation", value_enum, global = true)]
    discipline_aggregation: Option<AggregationArg>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load and validate input files; print counts and coverage.
    IngestCheck,
    /// Write per (model, subject) fingerprints.
    Fingerprint,
    /// Cluster fingerprints per subject.
    Cluster {
        /// Also write the per-subject distance matrices.
        #[arg(long)]
        dump_distances: bool,
    },
    /// Build and write per-subject ensembles.
    BuildEnsembles,
    /// Write ensemble answers for every test question.
    Predict,
    /// Evaluate the ensemble and the baselines on the test split.
    Evaluate,
    /// One-axis sensitivity sweep.
    Sweep {
        #[arg(long)]
        axis: String,
        /// Comma-separated values; a default grid when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
    /// Generate a synthetic pool.
    Simulate {
        /// Pool spec (TOML); the built-in 10-model pool when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Query chat-completions endpoints and write a prediction log.
    Collect {
        /// Endpoint list (TOML, `[[endpoint]]` tables).
        #[arg(long)]
        endpoints: PathBuf,
        /// Response cache directory.
        #[arg(long)]
        cache: PathBuf,
    },
    /// Print a saved evaluation report as tables.
    Report {
        /// report.json written by `evaluate`.
        #[arg(long)]
        report: PathBuf,
        /// Print the co-occurrence matrix instead.
        #[arg(long)]
        cooccurrence: bool,
    },
}

#[derive(Debug, Parser)]
#[command(
    name = "dfpe",
    version,
    long_version = concat!(env!("CARGO_PKG_VERSION"), " (", env!("CARGO_PKG_NAME"), ", ", env!("CARGO_PKG_LICENSE"), ")"),
    about = "Per-subject ensembles of multiple-choice model predictions"
)]
struct Root {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn require<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| usage(format!("missing required flag {flag}")))
}

impl Shared {
    fn run_config(&self) -> Result<(RunConfig, Option<ConfigFile>)> {
        let file = self.config.as_deref().map(ConfigFile::load).transpose()?;
        let mut cfg = file.as_ref().map(ConfigFile::run_config).unwrap_or_default();
        if let Some(name) = &self.preset {
            cfg = preset_with(name.parse::<Preset>()?, cfg, file.as_ref())?;
        }
        ConfigPatch {
            quantile_q: self.quantile,
            gamma: self.gamma,
            dbscan_eps: self.eps,
            dbscan_min_pts: self.min_pts,
            fingerprint_strategy: self.fingerprint_strategy.map(|s| match s {
                StrategyArg::AnswerPattern => FingerprintStrategy::AnswerPattern,
                StrategyArg::ExternalEmbedding => FingerprintStrategy::ExternalEmbedding,
            }),
            filter_order: self.filter_order.map(|o| match o {
                OrderArg::FilterThenCluster => FilterOrder::FilterThenCluster,
                OrderArg::ClusterThenFilter => FilterOrder::ClusterThenFilter,
            }),
            seed: self.seed,
        }
        .apply(&mut cfg);
        cfg.validate()?;
        Ok((cfg, file))
    }

    fn aggregation(&self) -> DisciplineAggregation {
        match self.discipline_aggregation.unwrap_or_default() {
            AggregationArg::Pooled => DisciplineAggregation::Pooled,
            AggregationArg::SubjectMean => DisciplineAggregation::SubjectMean,
        }
    }

    fn check_inputs(&self, cfg: &RunConfig) -> Result<(&Path, &Path)> {
        let dataset = require(&self.dataset, "--dataset")?;
        let predictions = require(&self.predictions, "--predictions")?;
        if cfg.fingerprint_strategy == FingerprintStrategy::ExternalEmbedding && self.embeddings.is_none() {
            return Err(usage("--fingerprint-strategy external-embedding needs --embeddings"));
        }
        Ok((dataset, predictions))
    }

    fn load_inputs(&self, cfg: &RunConfig) -> Result<Inputs> {
        let (dataset, predictions) = self.check_inputs(cfg)?;
        Inputs::load(
            dataset,
            predictions,
            self.discipline_map.as_deref(),
            self.embeddings.as_deref(),
        )
    }
}

/// Files written by one subcommand, for the summary line.
struct Written(Vec<PathBuf>);

impl Written {
    fn json<T: serde::Serialize>(&mut self, path: PathBuf, v: &T) -> Result<()> {
        jsonl::write_json(&path, v)?;
        self.0.push(path);
        Ok(())
    }

    fn text(&mut self, path: PathBuf, s: &str) -> Result<()> {
        jsonl::write_bytes(&path, s.as_bytes())?;
        self.0.push(path);
        Ok(())
    }

    fn lines<T: serde::Serialize>(&mut self, path: PathBuf, records: &[T]) -> Result<()> {
        jsonl::write_records(&path, records)?;
        self.0.push(path);
        Ok(())
    }
}

/// Files `evaluate` writes into the output directory.
pub fn write_evaluation(
    out: &Path,
    report: &EvalReport,
    ensembles: &BTreeMap<String, crate::select::SubjectEnsemble>,
) -> Result<Vec<PathBuf>> {
    let mut w = Written(Vec::new());
    w.json(out.join("report.json"), report)?;
    w.text(out.join("report.txt"), &render_report(report))?;
    w.json(out.join("ensembles.json"), ensembles)?;
    w.text(out.join("cooccurrence.csv"), &report.cooccurrence.to_csv())?;
    let mut part = String::from("subject_id,members\n");
    for (s, n) in &report.participation.per_subject {
        writeln!(part, "{s},{n}").unwrap();
    }
    w.text(out.join("participation.csv"), &part)?;
    Ok(w.0)
}

fn execute(shared: &Shared, command: &Command) -> Result<String> {
    let mut stdout = String::new();
    let mut w = Written(Vec::new());
    match command {
        Command::IngestCheck => {
            let dataset_path = require(&shared.dataset, "--dataset")?;
            let dataset = load_dataset(dataset_path)?;
            let totals = dataset.totals();
            writeln!(stdout, "subject\tvalidation\ttest").unwrap();
            for (s, c) in dataset.counts() {
                writeln!(stdout, "{s}\t{}\t{}", c.validation, c.test).unwrap();
            }
            writeln!(stdout, "TOTAL\t{}\t{}", totals.validation, totals.test).unwrap();
            if let Some(p) = &shared.predictions {
                let (set, completeness) = load_predictions(p, &dataset)?;
                writeln!(stdout, "models\t{}", set.pool().ids().join(",")).unwrap();
                let incomplete: Vec<_> = completeness.incomplete().collect();
                writeln!(stdout, "incomplete cells\t{}", incomplete.len()).unwrap();
                for (m, s, f) in incomplete {
                    writeln!(stdout, "  {m}\t{s}\t{f:.4}").unwrap();
                }
                if let Some(out) = &shared.out {
                    w.json(out.join("completeness.json"), &completeness)?;
                }
            }
            if let Some(d) = &shared.discipline_map {
                DisciplineMap::load(d)?.check_covers(&dataset)?;
                writeln!(stdout, "discipline map covers all subjects").unwrap();
            }
        }
        Command::Fingerprint => {
            let (cfg, _) = shared.run_config()?;
            let out = require(&shared.out, "--out")?;
            let inputs = shared.load_inputs(&cfg)?;
            let fps = inputs.fingerprints(cfg.fingerprint_strategy)?;
            let flat: Vec<_> = fps.values().flat_map(|row| row.values().cloned()).collect();
            w.lines(out.join("fingerprints.jsonl"), &flat)?;
        }
        Command::Cluster { dump_distances } => {
            let (cfg, _) = shared.run_config()?;
            let out = require(&shared.out, "--out")?;
            let inputs = shared.load_inputs(&cfg)?;
            let fps = inputs.fingerprints(cfg.fingerprint_strategy)?;
            let mut clusterings = BTreeMap::new();
            let mut dump = String::new();
            for (subject, row) in &fps {
                let points: Vec<_> = row.values().cloned().collect();
                let raw = dbscan(&points, cfg.dbscan_eps, cfg.dbscan_min_pts)?;
                if *dump_distances {
                    dump.push_str(&debug_dump(&points, &raw)?);
                    dump.push('\n');
                }
                clusterings.insert(subject.clone(), promote_noise_to_singletons(&raw));
            }
            w.json(out.join("clusters.json"), &clusterings)?;
            if *dump_distances {
                w.text(out.join("distances.tsv"), &dump)?;
            }
        }
        Command::BuildEnsembles => {
            let (cfg, _) = shared.run_config()?;
            let out = require(&shared.out, "--out")?;
            let inputs = shared.load_inputs(&cfg)?;
            let fps = inputs.fingerprints(cfg.fingerprint_strategy)?;
            let ensembles = build_ensembles(&inputs.predictions, &inputs.dataset, &fps, &cfg)?;
            w.json(out.join("ensembles.json"), &ensembles)?;
            w.json(out.join("run_config.json"), &cfg)?;
        }
        Command::Predict => {
            let (cfg, _) = shared.run_config()?;
            let out = require(&shared.out, "--out")?;
            let inputs = shared.load_inputs(&cfg)?;
            let fps = inputs.fingerprints(cfg.fingerprint_strategy)?;
            let ensembles = build_ensembles(&inputs.predictions, &inputs.dataset, &fps, &cfg)?;
            let answers = predict_all(&ensembles, &inputs.predictions, &inputs.dataset)?;
            let records: Vec<PredictionRecord> = answers
                .iter()
                .flat_map(|(s, row)| {
                    row.iter().filter_map(move |(q, a)| {
                        a.as_ref().map(|c| PredictionRecord {
                            model_id: "DFPE".into(),
                            subject_id: s.clone(),
                            question_id: q.clone(),
                            predicted_choice: c.clone(),
                            raw_response: None,
                        })
                    })
                })
                .collect();
            w.lines(out.join("dfpe_predictions.jsonl"), &records)?;
        }
        Command::Evaluate => {
            let (cfg, _) = shared.run_config()?;
            let out = require(&shared.out, "--out")?;
            let inputs = shared.load_inputs(&cfg)?;
            let result = run_pipeline(&inputs, &cfg, shared.aggregation())?;
            w.0.extend(write_evaluation(out, &result.report, &result.ensembles)?);
            w.json(out.join("run_config.json"), &cfg)?;
            stdout.push_str(&render_report(&result.report));
        }
        Command::Sweep { axis, values } => {
            let axis: SweepAxis = axis.parse()?;
            let (cfg, _) = shared.run_config()?;
            let out = require(&shared.out, "--out")?;
            shared.check_inputs(&cfg)?;
            let spec = SweepSpec {
                axis,
                values: values.clone().unwrap_or_else(|| axis.default_values()),
                fixed: cfg,
            };
            spec.validate()?;
            let inputs = shared.load_inputs(&spec.fixed)?;
            let table = run_sweep(&spec, &inputs, shared.aggregation())?;
            let stem = format!("sweep_{}", axis.name());
            w.text(out.join(format!("{stem}.csv")), &table.to_csv())?;
            w.text(out.join(format!("{stem}.svg")), &table.to_svg())?;
            w.json(out.join(format!("{stem}.json")), &table)?;
            stdout.push_str(&table.to_csv());
        }
        Command::Simulate { spec } => {
            let out = require(&shared.out, "--out")?;
            let mut spec = match spec {
                Some(p) => SyntheticPoolSpec::load(p)?,
                None => crate::simulate::default_spec(0),
            };
            if let Some(seed) = shared.seed {
                spec.seed = seed;
            }
            spec.validate()?;
            let pool = generate(&spec)?;
            let questions: Vec<_> = pool.dataset.records().cloned().collect();
            w.lines(out.join("dataset.jsonl"), &questions)?;
            w.lines(out.join("predictions.jsonl"), &pool.predictions.records())?;
            pool.disciplines.save(&out.join("disciplines.jsonl"))?;
            w.0.push(out.join("disciplines.jsonl"));
            let check = empirical_accuracy_check(&pool, &spec);
            let mut csv = String::from("model_id,subject_id,expected,observed,questions,sigma,flagged\n");
            for d in &check {
                writeln!(
                    csv,
                    "{},{},{:.6},{:.6},{},{:.6},{}",
                    d.model_id, d.subject_id, d.expected, d.observed, d.questions, d.sigma, d.flagged
                )
                .unwrap();
            }
            w.text(out.join("accuracy_check.csv"), &csv)?;
            w.json(out.join("spec.json"), &spec)?;
            let flagged = check.iter().filter(|d| d.flagged).count();
            writeln!(stdout, "accuracy cells flagged beyond 4 sigma: {flagged}").unwrap();
        }
        Command::Collect { endpoints, cache } => {
            let dataset_path = require(&shared.dataset, "--dataset")?;
            let out = require(&shared.out, "--out")?;
            let endpoints = load_endpoints(endpoints)?;
            let dataset = load_dataset(dataset_path)?;
            let transport = HttpTransport::new()?;
            let target = out.join("predictions.jsonl");
            let summary = collect_predictions(&endpoints, &dataset, cache, &target, &transport)?;
            w.0.push(target);
            writeln!(
                stdout,
                "records {} | network calls {} | cache hits {} | unanswered {} | failed {}",
                summary.records, summary.network_calls, summary.cache_hits, summary.unanswered, summary.failed
            )
            .unwrap();
        }
        Command::Report { report, cooccurrence } => {
            let text = std::fs::read_to_string(report).map_err(|source| Error::Open {
                path: report.clone(),
                source,
            })?;
            let parsed: EvalReport = serde_json::from_str(&text)
                .map_err(|e| Error::Input(format!("{}: {e}", report.display())))?;
            if *cooccurrence {
                stdout.push_str(&parsed.cooccurrence.to_csv());
            } else {
                stdout.push_str(&render_report(&parsed));
            }
        }
    }
    for p in &w.0 {
        log::info!("wrote {}", p.display());
    }
    Ok(stdout)
}

/// Outcome of one invocation: exit code plus what goes to stdout and stderr.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Parses `argv` (including the program name) and runs the subcommand
/// without touching the process streams.
pub fn run_captured<I, T>(argv: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let root = match Root::try_parse_from(argv) {
        Ok(r) => r,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                Outcome { code: EXIT_USAGE, stdout: String::new(), stderr: text }
            } else {
                Outcome { code: EXIT_OK, stdout: text, stderr: String::new() }
            };
        }
    };
    match execute(&root.shared, &root.command) {
        Ok(stdout) => Outcome { code: EXIT_OK, stdout, stderr: String::new() },
        Err(e) => Outcome {
            code: if e.is_input_error() { EXIT_USAGE } else { EXIT_RUNTIME },
            stdout: String::new(),
            stderr: format!("error: {e}\n"),
        },
    }
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let out = run_captured(argv);
    print!("{}", out.stdout);
    eprint!("{}", out.stderr);
    out.code
}
