//! Command-line interface: synthetic dataset generation, single training
//! runs, experiment sweeps and the gradient-check suite.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use graphclust_core::evaluation::evaluate;
use graphclust_core::experiment::{
    cell_configs, run_experiment, ExperimentConfig, Overrides, Variant,
};
use graphclust_core::gradcheck::run_suite;
use graphclust_core::graph::{graph_stats, load_graph, sbm_generate, save_graph, SbmSpec};
use graphclust_core::losses::Bounds;
use graphclust_core::model::{forward, load_model, save_model};
use graphclust_core::presets::{preset, preset_names};
use graphclust_core::trainer::train;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Parser)]
#[command(
    name = "graphclust",
    about = "Community detection with a trainable bound on the number of clusters",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic graphs from a preset or an explicit block model.
    Generate(GenerateArgs),
    /// Train one model on one graph and report the result row.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on a graph.
    Evaluate(EvaluateArgs),
    /// Run a sweep described by a JSON config; writes results and summary CSVs.
    Experiment(ExperimentArgs),
    /// Verify gradients of every loss term against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Preset name (see --list-presets).
    #[arg(long, conflicts_with_all = ["sizes", "p_in", "p_out"])]
    preset: Option<String>,
    /// Explicit community sizes, comma separated (e.g. 25,30,10,20,15).
    #[arg(long, value_delimiter = ',', requires_all = ["p_in", "p_out"])]
    sizes: Vec<usize>,
    /// Intra-community edge probability.
    #[arg(long)]
    p_in: Option<f64>,
    /// Inter-community edge probability.
    #[arg(long)]
    p_out: Option<f64>,
    /// How many graphs to draw (seeds are sequential from --seed).
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Seed of the first draw.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the graph files.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// List the known presets and exit.
    #[arg(long)]
    list_presets: bool,
}

#[derive(Args)]
struct TrainArgs {
    /// Graph file to cluster.
    #[arg(long)]
    graph: PathBuf,
    /// Loss variant: gnn, gnn+reg, gnn+constraint or gnn+reg+constraint.
    #[arg(long, default_value = "gnn+reg+constraint")]
    variant: String,
    /// Lower bound on the returned number of clusters.
    #[arg(long, default_value_t = 1)]
    lower: usize,
    /// Upper bound (the model's output width).
    #[arg(long)]
    upper: usize,
    /// Minimum nodes per counted cluster (enables the min-size penalty).
    #[arg(long)]
    min_size: Option<usize>,
    #[command(flatten)]
    hyper: HyperArgs,
    /// Run seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Save the trained model here.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Save the per-epoch loss history here (CSV).
    #[arg(long)]
    loss_log: Option<PathBuf>,
    /// Append the result row to this CSV (header written if new).
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Penalty weight μ (overrides the variant's setting).
    #[arg(long)]
    mu: Option<f64>,
    /// Balance weight λ (overrides the variant's setting).
    #[arg(long)]
    lambda: Option<f64>,
    /// Replacement μ for the single escalated retry (0 disables).
    #[arg(long)]
    mu_escalation: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    gnn_layers: Option<usize>,
    #[arg(long)]
    mlp_layers: Option<usize>,
}

impl HyperArgs {
    fn overrides(&self, min_size: Option<usize>) -> Overrides {
        Overrides {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            hidden_dim: self.hidden_dim,
            gnn_layers: self.gnn_layers,
            mlp_layers: self.mlp_layers,
            mu: self.mu,
            lambda: self.lambda,
            mu_escalation: self.mu_escalation,
            min_size,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Lower bound used for the bounds check.
    #[arg(long, default_value_t = 1)]
    lower: usize,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random evaluation points per check.
    #[arg(long, default_value_t = 20)]
    points: usize,
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}

fn cmd_generate(args: GenerateArgs) -> Result<i32> {
    if args.list_presets {
        for name in preset_names() {
            let p = preset(name).expect("listed preset exists");
            println!(
                "{name}: n={}, clusters={}, p_in={}, p_out={}",
                p.node_count(),
                p.cluster_count(),
                p.p_in,
                p.p_out
            );
        }
        return Ok(0);
    }
    if args.count == 0 {
        bail!("--count must be >= 1");
    }
    let (stem, spec_for): (String, Box<dyn Fn(u64) -> SbmSpec>) = match (&args.preset, args.sizes.is_empty()) {
        (Some(name), _) => {
            let p = preset(name).ok_or_else(|| {
                anyhow::anyhow!("unknown preset '{name}'; known presets: {}", preset_names().join(", "))
            })?;
            (name.clone(), Box::new(move |seed| p.sbm_spec(seed)))
        }
        (None, false) => {
            let sizes = args.sizes.clone();
            let p_in = args.p_in.expect("required with --sizes");
            let p_out = args.p_out.expect("required with --sizes");
            (
                "graph".into(),
                Box::new(move |seed| SbmSpec {
                    cluster_sizes: sizes.clone(),
                    p_in,
                    p_out,
                    seed,
                }),
            )
        }
        (None, true) => bail!("either --preset or --sizes with --p-in/--p-out is required"),
    };
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    for i in 0..args.count {
        let spec = spec_for(args.seed + i as u64);
        let g = sbm_generate(&spec)?;
        let stats = graph_stats(&g)?;
        let path = args.out_dir.join(format!("{stem}-{i:02}.json"));
        save_graph(&g, &path)?;
        println!(
            "{}: n={} m={} density={:.4} avg_degree={:.2} ground_truth_modularity={}",
            path.display(),
            g.node_count(),
            g.edge_count(),
            stats.density,
            stats.average_degree,
            stats
                .ground_truth_modularity
                .map_or("n/a".into(), |q| format!("{q:.4}")),
        );
    }
    Ok(0)
}

fn cmd_train(args: TrainArgs) -> Result<i32> {
    let variant: Variant = args.variant.parse()?;
    let bounds = Bounds::new(args.lower, args.upper)?;
    let g = load_graph(&args.graph)?;
    let graph_id = args
        .graph
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| args.graph.display().to_string());
    let overrides = args.hyper.overrides(args.min_size);

    // Train directly (not through run_cell) so the checkpoint and loss log
    // can be captured; the row is built from the same cell configs.
    let (model_config, train_config) = cell_configs(variant, bounds, args.seed, &overrides);
    let start = Instant::now();
    let result = train(&g, &model_config, &train_config)?;
    let runtime_seconds = start.elapsed().as_secs_f64();
    let report = evaluate(&g, &result.assignment, &train_config.bounds, None)?;

    if let Some(path) = &args.checkpoint {
        save_model(&result.state, path)?;
    }
    if let Some(path) = &args.loss_log {
        result.write_loss_csv(path)?;
    }

    let row = graphclust_core::experiment::ResultRow {
        graph_id,
        variant,
        l: train_config.bounds.lower,
        c: train_config.bounds.upper,
        seed: args.seed,
        predicted_count: Some(report.predicted_cluster_count),
        ari: report.ari,
        hard_modularity: Some(report.hard_modularity),
        within_bounds: Some(report.within_bounds),
        runtime_seconds,
        escalated: Some(result.escalated),
        error: None,
    };
    println!(
        "graph={} variant={} l={} c={} seed={} predicted_count={} ari={} hard_modularity={:.4} within_bounds={} escalated={} runtime={:.2}s",
        row.graph_id,
        row.variant,
        row.l,
        row.c,
        row.seed,
        report.predicted_cluster_count,
        report.ari.map_or("n/a".into(), |a| format!("{a:.4}")),
        report.hard_modularity,
        report.within_bounds,
        result.escalated,
        runtime_seconds,
    );
    if let Some(path) = &args.results {
        append_row(&row, path)?;
    }
    Ok(0)
}

fn append_row(row: &graphclust_core::experiment::ResultRow, path: &PathBuf) -> Result<()> {
    let new_file = !path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(new_file)
        .from_writer(file);
    writer.serialize(row)?;
    writer.flush()?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<i32> {
    let g = load_graph(&args.graph)?;
    let state = load_model(&args.checkpoint)?;
    let bounds = Bounds::new(args.lower, state.config().c)?;
    let s = forward(&g, &state)?;
    let report = evaluate(&g, &s, &bounds, None)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn cmd_experiment(args: ExperimentArgs) -> Result<i32> {
    let config = ExperimentConfig::load(&args.config)?;
    let outcome = run_experiment(&config)?;
    println!(
        "wrote {} rows to {} (summary: {})",
        outcome.rows.len(),
        outcome.results_path.display(),
        outcome.summary_path.display()
    );
    for s in &outcome.summary {
        println!(
            "{} l={} c={}: runs={} mean_count={} range=[{}, {}] median_ari={} within={} escalations={}",
            s.variant,
            s.l,
            s.c,
            s.runs,
            s.mean_predicted_count
                .map_or("n/a".into(), |v| format!("{v:.2}")),
            s.min_predicted_count.map_or("-".into(), |v| v.to_string()),
            s.max_predicted_count.map_or("-".into(), |v| v.to_string()),
            s.median_ari.map_or("n/a".into(), |v| format!("{v:.3}")),
            s.within_bounds_fraction
                .map_or("n/a".into(), |v| format!("{v:.2}")),
            s.escalations,
        );
    }
    if outcome.failures > 0 {
        for row in outcome.rows.iter().filter(|r| !r.succeeded()) {
            eprintln!(
                "failed cell: graph={} variant={} l={} c={} seed={}: {}",
                row.graph_id,
                row.variant,
                row.l,
                row.c,
                row.seed,
                row.error.as_deref().unwrap_or("unknown"),
            );
        }
        eprintln!("{} of {} cells failed", outcome.failures, outcome.rows.len());
        return Ok(1);
    }
    Ok(0)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<i32> {
    let start = Instant::now();
    let report = run_suite(args.seed, args.points);
    let mut code = 0;
    for o in &report.outcomes {
        println!(
            "{} {}: max_rel_error={:.3e} over {} points ({} coordinates, {} inconclusive)",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.max_rel_error,
            o.points,
            o.coords_checked,
            o.inconclusive,
        );
        if !o.passed {
            code = 1;
        }
    }
    println!(
        "gradcheck {} in {:.1}s",
        if report.all_passed() { "passed" } else { "FAILED" },
        start.elapsed().as_secs_f64()
    );
    Ok(code)
}
