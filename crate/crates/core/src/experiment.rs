//! Experiment sweeps: cells of (graph, model variant, bounds, seed) trained
//! in parallel, with deterministic per-cell seeds, CSV results and a
//! per-cell summary suitable for rebuilding the synthetic-network figures.

use crate::evaluation::{evaluate, EvalReport};
use crate::graph::{load_graph, sbm_generate, Graph, GraphError, SbmSpec};
use crate::losses::{Bounds, LossWeights};
use crate::model::ModelConfig;
use crate::presets::preset;
use crate::trainer::{train, TrainConfig, TrainError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;
use thiserror::Error;

/// Environment variable overriding the number of worker threads.
pub const THREADS_ENV_VAR: &str = "GRAPHCLUST_THREADS";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("unknown preset '{0}'; known presets: {1}")]
    UnknownPreset(String, String),
    #[error("experiment config has no cells: {0}")]
    EmptyConfig(String),
    #[error("unknown variant '{0}'; expected gnn, gnn+reg, gnn+constraint or gnn+reg+constraint")]
    UnknownVariant(String),
    #[error("failed to read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to parse {path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("failed to write results to {path}: {source}")]
    WriteResults { path: String, source: csv::Error },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

/// The four model variants: one code path, four (μ, λ) settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "gnn")]
    Gnn,
    #[serde(rename = "gnn+reg")]
    GnnReg,
    #[serde(rename = "gnn+constraint")]
    GnnConstraint,
    #[serde(rename = "gnn+reg+constraint")]
    GnnRegConstraint,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Gnn,
        Variant::GnnReg,
        Variant::GnnConstraint,
        Variant::GnnRegConstraint,
    ];

    /// Loss weights of the variant: μ enables the count penalty, λ the
    /// balance regularizer.
    pub fn weights(self) -> LossWeights {
        let (mu, lambda) = match self {
            Variant::Gnn => (0.0, 0.0),
            Variant::GnnReg => (0.0, 1.0),
            Variant::GnnConstraint => (1.0, 0.0),
            Variant::GnnRegConstraint => (1.0, 1.0),
        };
        LossWeights { mu, lambda }
    }

    pub fn constrained(self) -> bool {
        matches!(self, Variant::GnnConstraint | Variant::GnnRegConstraint)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Gnn => "gnn",
            Variant::GnnReg => "gnn+reg",
            Variant::GnnConstraint => "gnn+constraint",
            Variant::GnnRegConstraint => "gnn+reg+constraint",
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gnn" => Ok(Variant::Gnn),
            "gnn+reg" => Ok(Variant::GnnReg),
            "gnn+constraint" => Ok(Variant::GnnConstraint),
            "gnn+reg+constraint" => Ok(Variant::GnnRegConstraint),
            other => Err(ExperimentError::UnknownVariant(other.to_string())),
        }
    }
}

/// Hyperparameter overrides; unset fields fall back to the defaults
/// (3000 epochs, learning rate 1e-3, width 64, 3 Sage layers, 2 MLP
/// layers, escalated μ of 1000).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Overrides {
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub hidden_dim: Option<usize>,
    pub gnn_layers: Option<usize>,
    pub mlp_layers: Option<usize>,
    /// Replaces the variant's μ (e.g. to strengthen the penalty).
    pub mu: Option<f64>,
    /// Replaces the variant's λ.
    pub lambda: Option<f64>,
    /// Replacement μ for the single escalated retry; `null` disables
    /// escalation only if explicitly set to 0.
    pub mu_escalation: Option<f64>,
    /// Minimum nodes per counted cluster (switches the penalty to its
    /// minimum-size variant).
    pub min_size: Option<usize>,
}

pub const DEFAULT_EPOCHS: usize = 3000;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const DEFAULT_MU_ESCALATION: f64 = 1000.0;

impl Overrides {
    pub fn epochs(&self) -> usize {
        self.epochs.unwrap_or(DEFAULT_EPOCHS)
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(DEFAULT_LEARNING_RATE)
    }

    pub fn model_config(&self, c: usize, seed: u64) -> ModelConfig {
        let mut config = ModelConfig::synthetic(c, seed);
        if let Some(h) = self.hidden_dim {
            config.hidden_dim = h;
        }
        if let Some(l) = self.gnn_layers {
            config.gnn_layers = l;
        }
        if let Some(l) = self.mlp_layers {
            config.mlp_layers = l;
        }
        config
    }

    pub fn weights_for(&self, variant: Variant) -> LossWeights {
        let mut w = variant.weights();
        if let Some(mu) = self.mu {
            w.mu = mu;
        }
        if let Some(lambda) = self.lambda {
            w.lambda = lambda;
        }
        w
    }

    pub fn mu_escalation(&self) -> Option<f64> {
        match self.mu_escalation {
            Some(v) if v == 0.0 => None,
            Some(v) => Some(v),
            None => Some(DEFAULT_MU_ESCALATION),
        }
    }
}

/// Where the experiment's graphs come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSource {
    /// `count` draws of a named preset, seeds `seed, seed+1, …`.
    Preset {
        preset: String,
        count: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Pre-converted graph files.
    Files { files: Vec<PathBuf> },
    /// Explicit SBM specs.
    Specs { specs: Vec<SbmSpec> },
}

/// A full sweep: graphs × variants × bounds × seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graphs: GraphSource,
    pub variants: Vec<Variant>,
    pub bounds: Vec<Bounds>,
    /// Seeds per cell; run seeds are `base_seed … base_seed + seeds − 1`.
    pub seeds: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub overrides: Overrides,
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ExperimentError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let config: Self =
            serde_json::from_str(&text).map_err(|source| ExperimentError::Parse {
                path: path.display().to_string(),
                source,
            })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.variants.is_empty() {
            return Err(ExperimentError::EmptyConfig("no variants".into()));
        }
        if self.bounds.is_empty() {
            return Err(ExperimentError::EmptyConfig("no bounds".into()));
        }
        if self.seeds == 0 {
            return Err(ExperimentError::EmptyConfig("seeds must be >= 1".into()));
        }
        let empty_graphs = match &self.graphs {
            GraphSource::Preset { count, .. } => *count == 0,
            GraphSource::Files { files } => files.is_empty(),
            GraphSource::Specs { specs } => specs.is_empty(),
        };
        if empty_graphs {
            return Err(ExperimentError::EmptyConfig("no graphs".into()));
        }
        Ok(())
    }
}

/// One row of the results CSV: one (graph, variant, bounds, seed) run.
/// Failed cells keep their identity columns and carry the error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub graph_id: String,
    pub variant: Variant,
    pub l: usize,
    pub c: usize,
    pub seed: u64,
    pub predicted_count: Option<usize>,
    pub ari: Option<f64>,
    pub hard_modularity: Option<f64>,
    pub within_bounds: Option<bool>,
    pub runtime_seconds: f64,
    pub escalated: Option<bool>,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Aggregates per (variant, l, c) across graphs and seeds.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub variant: Variant,
    pub l: usize,
    pub c: usize,
    pub runs: usize,
    pub failures: usize,
    pub mean_predicted_count: Option<f64>,
    pub min_predicted_count: Option<usize>,
    pub max_predicted_count: Option<usize>,
    pub median_ari: Option<f64>,
    pub within_bounds_fraction: Option<f64>,
    pub escalations: usize,
}

/// Resolves the configured graph source into materialized graphs with ids.
pub fn resolve_graphs(source: &GraphSource) -> Result<Vec<(String, Graph)>, ExperimentError> {
    match source {
        GraphSource::Preset {
            preset: name,
            count,
            seed,
        } => {
            let p = preset(name).ok_or_else(|| {
                ExperimentError::UnknownPreset(
                    name.clone(),
                    crate::presets::preset_names().join(", "),
                )
            })?;
            (0..*count)
                .map(|i| {
                    let spec = p.sbm_spec(seed + i as u64);
                    let g = sbm_generate(&spec)?;
                    Ok((format!("{name}-{i:02}"), g))
                })
                .collect()
        }
        GraphSource::Files { files } => files
            .iter()
            .map(|path| {
                let g = load_graph(path)?;
                let id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| path.display().to_string());
                Ok((id, g))
            })
            .collect(),
        GraphSource::Specs { specs } => specs
            .iter()
            .enumerate()
            .map(|(i, spec)| Ok((format!("spec-{i:02}"), sbm_generate(spec)?)))
            .collect(),
    }
}

/// Runs one cell and always returns a row; failures are recorded in the
/// `error` column.
pub fn run_cell(
    graph_id: &str,
    g: &Graph,
    variant: Variant,
    bounds: Bounds,
    seed: u64,
    overrides: &Overrides,
) -> ResultRow {
    let start = Instant::now();
    let outcome = run_cell_inner(g, variant, bounds, seed, overrides);
    let runtime_seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok((report, escalated)) => ResultRow {
            graph_id: graph_id.to_string(),
            variant,
            l: bounds.lower,
            c: bounds.upper,
            seed,
            predicted_count: Some(report.predicted_cluster_count),
            ari: report.ari,
            hard_modularity: Some(report.hard_modularity),
            within_bounds: Some(report.within_bounds),
            runtime_seconds,
            escalated: Some(escalated),
            error: None,
        },
        Err(e) => ResultRow {
            graph_id: graph_id.to_string(),
            variant,
            l: bounds.lower,
            c: bounds.upper,
            seed,
            predicted_count: None,
            ari: None,
            hard_modularity: None,
            within_bounds: None,
            runtime_seconds,
            escalated: None,
            error: Some(e.to_string()),
        },
    }
}

/// Model and train configs for one cell, with overrides applied. Escalation
/// is enabled only when the penalty participates in the loss.
pub fn cell_configs(
    variant: Variant,
    mut bounds: Bounds,
    seed: u64,
    overrides: &Overrides,
) -> (ModelConfig, TrainConfig) {
    bounds.min_size = overrides.min_size.or(bounds.min_size);
    let weights = overrides.weights_for(variant);
    let model_config = overrides.model_config(bounds.upper, seed);
    let train_config = TrainConfig {
        epochs: overrides.epochs(),
        learning_rate: overrides.learning_rate(),
        weights,
        bounds,
        seed,
        mu_escalation: if weights.mu > 0.0 {
            overrides.mu_escalation()
        } else {
            None
        },
    };
    (model_config, train_config)
}

fn run_cell_inner(
    g: &Graph,
    variant: Variant,
    bounds: Bounds,
    seed: u64,
    overrides: &Overrides,
) -> Result<(EvalReport, bool), TrainError> {
    let (model_config, train_config) = cell_configs(variant, bounds, seed, overrides);
    let result = train(g, &model_config, &train_config)?;
    let report = evaluate(g, &result.assignment, &train_config.bounds, None)
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    Ok((report, result.escalated))
}

/// Everything a finished sweep produced.
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub failures: usize,
    pub results_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Runs every cell of the sweep (in parallel across cells), writes the
/// results CSV and its summary, and reports failures without aborting the
/// sweep.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, ExperimentError> {
    config.validate()?;
    let graphs = resolve_graphs(&config.graphs)?;

    let mut cells = Vec::new();
    for (graph_id, g) in &graphs {
        for &variant in &config.variants {
            for &bounds in &config.bounds {
                for s in 0..config.seeds {
                    cells.push((graph_id.as_str(), g, variant, bounds, config.base_seed + s));
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(configured_threads())
        .build()?;
    let rows: Vec<ResultRow> = pool.install(|| {
        cells
            .par_iter()
            .map(|(graph_id, g, variant, bounds, seed)| {
                run_cell(graph_id, g, *variant, *bounds, *seed, &config.overrides)
            })
            .collect()
    });

    let summary = summarize(&rows);
    write_results(&rows, &config.output)?;
    let summary_path = summary_path_for(&config.output);
    write_summary(&summary, &summary_path)?;
    let failures = rows.iter().filter(|r| !r.succeeded()).count();
    Ok(ExperimentOutcome {
        rows,
        summary,
        failures,
        results_path: config.output.clone(),
        summary_path,
    })
}

/// Worker count: the `GRAPHCLUST_THREADS` variable when set, otherwise the
/// machine's core count (rayon's default, signalled by 0).
pub fn configured_threads() -> usize {
    std::env::var(THREADS_ENV_VAR)
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(0)
}

fn summary_path_for(results: &Path) -> PathBuf {
    let stem = results
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "results".into());
    results.with_file_name(format!("{stem}_summary.csv"))
}

fn median(sorted: &mut Vec<f64>) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

/// Aggregates rows per (variant, l, c) in first-seen order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Variant, usize, usize)> = Vec::new();
    for row in rows {
        let key = (row.variant, row.l, row.c);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(variant, l, c)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.variant == variant && r.l == l && r.c == c)
                .collect();
            let counts: Vec<usize> = group.iter().filter_map(|r| r.predicted_count).collect();
            let mut aris: Vec<f64> = group.iter().filter_map(|r| r.ari).collect();
            let within: Vec<bool> = group.iter().filter_map(|r| r.within_bounds).collect();
            SummaryRow {
                variant,
                l,
                c,
                runs: group.len(),
                failures: group.iter().filter(|r| !r.succeeded()).count(),
                mean_predicted_count: if counts.is_empty() {
                    None
                } else {
                    Some(counts.iter().sum::<usize>() as f64 / counts.len() as f64)
                },
                min_predicted_count: counts.iter().copied().min(),
                max_predicted_count: counts.iter().copied().max(),
                median_ari: median(&mut aris),
                within_bounds_fraction: if within.is_empty() {
                    None
                } else {
                    Some(within.iter().filter(|&&w| w).count() as f64 / within.len() as f64)
                },
                escalations: group.iter().filter(|r| r.escalated == Some(true)).count(),
            }
        })
        .collect()
}

/// Writes result rows as CSV with a stable column order.
pub fn write_results(rows: &[ResultRow], path: impl AsRef<Path>) -> Result<(), ExperimentError> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|source| {
        ExperimentError::WriteResults {
            path: path.display().to_string(),
            source,
        }
    })?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|source| ExperimentError::WriteResults {
                path: path.display().to_string(),
                source,
            })?;
    }
    writer.flush().map_err(|source| ExperimentError::WriteResults {
        path: path.display().to_string(),
        source: source.into(),
    })?;
    Ok(())
}

fn write_summary(rows: &[SummaryRow], path: &Path) -> Result<(), ExperimentError> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|source| ExperimentError::WriteResults {
            path: path.display().to_string(),
            source,
        })?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|source| ExperimentError::WriteResults {
                path: path.display().to_string(),
                source,
            })?;
    }
    writer.flush().map_err(|source| ExperimentError::WriteResults {
        path: path.display().to_string(),
        source: source.into(),
    })?;
    Ok(())
}

/// Reads a results CSV back (used by tests and downstream tooling).
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>, ExperimentError> {
    let path = path.as_ref();
    let mut reader =
        csv::Reader::from_path(path).map_err(|source| ExperimentError::WriteResults {
            path: path.display().to_string(),
            source,
        })?;
    reader
        .deserialize()
        .collect::<Result<Vec<ResultRow>, csv::Error>>()
        .map_err(|source| ExperimentError::WriteResults {
            path: path.display().to_string(),
            source,
        })
}
