//! Finite-difference verification of every loss term and of the combined
//! loss through the full model. Backs the `gradcheck` CLI command and the
//! gradient-correctness acceptance checks.

use crate::autodiff::{finite_difference_check, FdReport, Tape, VarId};
use crate::graph::{sbm_generate, SbmSpec};
use crate::losses::{
    balance_node, dmon_penalty_node, lower_bound_penalty_node, min_size_penalty_node,
    mincut_pool_penalty_node, soft_modularity_node, total_loss_node, Bounds, GraphOperators,
    LossWeights,
};
use crate::model::{forward_on_tape, init_model, input_features, mean_aggregation, ModelConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::rc::Rc;

/// Step size for central differences.
pub const FD_STEP: f64 = 1e-6;
/// Maximum accepted relative error.
pub const FD_TOLERANCE: f64 = 1e-4;

/// Result of one named gradient check, aggregated over its sample points.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub max_rel_error: f64,
    pub points: usize,
    pub coords_checked: usize,
    pub inconclusive: usize,
    pub passed: bool,
}

/// Results of the whole suite.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub outcomes: Vec<CheckOutcome>,
}

impl GradcheckReport {
    pub fn all_passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }
}

fn merge(name: &'static str, reports: Vec<FdReport>) -> CheckOutcome {
    let max_rel_error = reports
        .iter()
        .map(|r| r.max_rel_error)
        .fold(0.0_f64, f64::max);
    CheckOutcome {
        name,
        max_rel_error,
        points: reports.len(),
        coords_checked: reports.iter().map(|r| r.coords_checked).sum(),
        inconclusive: reports.iter().map(|r| r.inconclusive).sum(),
        passed: max_rel_error < FD_TOLERANCE,
    }
}

fn random_logits(rng: &mut ChaCha8Rng, n: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, c), |_| rng.gen_range(-1.5..1.5))
}

/// A small SBM instance for the checks.
fn check_graph(seed: u64) -> crate::graph::Graph {
    sbm_generate(&SbmSpec {
        cluster_sizes: vec![4, 4, 4],
        p_in: 0.9,
        p_out: 0.25,
        seed,
    })
    .expect("valid spec")
}

type LossBuilder = dyn Fn(&mut Tape, VarId) -> VarId;

/// Checks one loss term: parameters are assignment logits, the loss reads
/// the row-softmax of them.
fn check_loss_term(
    name: &'static str,
    builder: &LossBuilder,
    points: usize,
    seed: u64,
) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(points);
    while reports.len() < points {
        let logits = random_logits(&mut rng, 12, 4);
        let report = finite_difference_check(
            |tape, ids| {
                let s = tape.row_softmax(ids[0]);
                builder(tape, s)
            },
            &[logits],
            FD_STEP,
        );
        // A tie inside the step makes those coordinates inconclusive rather
        // than failed; resample so every point contributes a full check.
        if report.inconclusive == 0 {
            reports.push(report);
        }
    }
    merge(name, reports)
}

/// Checks the combined loss through the full model: parameters are the
/// network weights.
fn check_model_gradients(points: usize, seed: u64) -> CheckOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = check_graph(7);
    let ops = GraphOperators::new(&g).expect("graph has edges");
    let agg = Rc::new(mean_aggregation(&g));
    let features = input_features(&g);
    let config = ModelConfig {
        gnn_layers: 2,
        hidden_dim: 6,
        mlp_layers: 2,
        c: 4,
        seed: 0,
    };
    let bounds = Bounds::new(3, 4).expect("valid bounds");
    let weights = LossWeights { mu: 1.0, lambda: 1.0 };

    let mut reports = Vec::with_capacity(points);
    while reports.len() < points {
        let mut model_config = config.clone();
        model_config.seed = rng.gen();
        let state = init_model(&model_config, features.ncols()).expect("valid config");
        let report = finite_difference_check(
            |tape, ids| {
                let x = tape.constant(features.clone());
                let s = forward_on_tape(tape, &model_config, ids, x, agg.clone());
                total_loss_node(tape, &ops, s, &bounds, &weights).total
            },
            state.params(),
            FD_STEP,
        );
        if report.inconclusive == 0 {
            reports.push(report);
        }
    }
    merge("total_loss_through_model", reports)
}

/// Runs the full gradient-check suite: every loss term at `points` random
/// non-tied assignment-logit draws, plus the combined loss through the
/// model at `points` random weight initializations.
pub fn run_suite(seed: u64, points: usize) -> GradcheckReport {
    let g = check_graph(3);
    let ops = GraphOperators::new(&g).expect("graph has edges");
    let ops_mod = ops.clone();
    let ops_total = ops.clone();
    let n = g.node_count();

    let checks: Vec<(&'static str, Box<LossBuilder>)> = vec![
        (
            "soft_modularity",
            Box::new(move |tape, s| soft_modularity_node(tape, &ops_mod, s)),
        ),
        (
            "lower_bound_penalty",
            Box::new(|tape, s| lower_bound_penalty_node(tape, s, 3)),
        ),
        (
            "min_size_penalty",
            Box::new(|tape, s| min_size_penalty_node(tape, s, 3, 2)),
        ),
        ("balance", Box::new(|tape, s| balance_node(tape, s))),
        (
            "mincut_pool_penalty",
            Box::new(|tape, s| mincut_pool_penalty_node(tape, s)),
        ),
        (
            "dmon_penalty",
            Box::new(|tape, s| dmon_penalty_node(tape, s)),
        ),
        (
            "total_loss",
            Box::new(move |tape, s| {
                let bounds = Bounds::new(3, 4).expect("valid bounds");
                let weights = LossWeights { mu: 1.0, lambda: 1.0 };
                total_loss_node(tape, &ops_total, s, &bounds, &weights).total
            }),
        ),
    ];
    debug_assert_eq!(n, 12);

    let mut outcomes: Vec<CheckOutcome> = checks
        .into_iter()
        .enumerate()
        .map(|(i, (name, builder))| {
            check_loss_term(name, builder.as_ref(), points, seed.wrapping_add(i as u64))
        })
        .collect();
    outcomes.push(check_model_gradients(points, seed.wrapping_add(1000)));
    GradcheckReport { outcomes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::lower_bound_penalty_node;

    #[test]
    fn suite_passes_at_default_settings() {
        let report = run_suite(0, 3);
        for o in &report.outcomes {
            assert!(
                o.passed,
                "{} failed: max rel error {}",
                o.name, o.max_rel_error
            );
        }
        assert!(report.all_passed());
    }

    #[test]
    fn suite_is_deterministic_for_a_seed() {
        let a = run_suite(42, 2);
        let b = run_suite(42, 2);
        for (x, y) in a.outcomes.iter().zip(&b.outcomes) {
            assert_eq!(x.max_rel_error.to_bits(), y.max_rel_error.to_bits());
        }
    }

    /// Negative control: a penalty whose row-max denominator is detached
    /// from the tape has the right value but the wrong gradient, and the
    /// checker must catch it.
    #[test]
    fn checker_detects_a_corrupted_backward_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let logits = random_logits(&mut rng, 10, 4);
        let honest = finite_difference_check(
            |tape, ids| {
                let s = tape.row_softmax(ids[0]);
                lower_bound_penalty_node(tape, s, 3)
            },
            &[logits.clone()],
            FD_STEP,
        );
        assert!(honest.max_rel_error < FD_TOLERANCE);

        let corrupted = finite_difference_check(
            |tape, ids| {
                let s = tape.row_softmax(ids[0]);
                // Detached normalization: forward value identical, gradient
                // missing the row-max path.
                let row_max = tape.row_max(s);
                let detached = tape.constant(tape.value(row_max).clone());
                let normalized = tape.div(s, detached);
                let peaks = tape.col_max(normalized);
                let occupied = tape.top_k_sum(peaks, 3);
                let target = tape.scalar(3.0);
                tape.sub(target, occupied)
            },
            &[logits],
            FD_STEP,
        );
        assert!(
            corrupted.max_rel_error > FD_TOLERANCE,
            "corrupted gradient slipped through: {}",
            corrupted.max_rel_error
        );
    }
}
