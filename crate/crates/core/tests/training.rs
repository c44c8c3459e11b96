mod common;

use common::{random_batch, toy_config};
use mtrcnet::losses::{ActiveTerms, Lambdas};
use mtrcnet::model::{init_parameters, Partition, PartitionSet};
use mtrcnet::parallel::Exec;
use mtrcnet::training::{evaluate_batch, sgd_step, OptimizerConfig, OptimizerState};

fn plain_sgd(lr: f64) -> OptimizerConfig {
    OptimizerConfig {
        lr_backbone: lr,
        lr_branches: lr,
        momentum: 0.0,
        weight_decay: 0.0,
    }
}

#[test]
fn full_batch_descent_is_monotone() {
    let cfg = toy_config();
    let mut params = init_parameters(&cfg, 11).unwrap();
    let batch = random_batch(&cfg, 4, 3, 12);
    let lambdas = Lambdas {
        decay: 0.0,
        ..Lambdas::default()
    };
    let mut opt = OptimizerState::new(&params, &plain_sgd(0.01));
    let mut losses = Vec::new();
    for _ in 0..50 {
        let e = evaluate_batch(&params, &batch, lambdas, ActiveTerms::FULL, PartitionSet::ALL, Exec::Sequential).unwrap();
        losses.push(e.breakdown.total);
        sgd_step(&mut params, &e.grads, &mut opt, PartitionSet::ALL).unwrap();
    }
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "loss rose from {} to {}", w[0], w[1]);
    }
    assert!(losses[49] < losses[0]);
}

#[test]
fn inactive_term_matches_zero_weight() {
    let cfg = toy_config();
    let params = init_parameters(&cfg, 21).unwrap();
    let batch = random_batch(&cfg, 2, 3, 22);
    let gated = evaluate_batch(&params, &batch, Lambdas::default(), ActiveTerms::JOINT, PartitionSet::ALL, Exec::Sequential).unwrap();
    let zero = Lambdas {
        correlation: 0.0,
        ..Lambdas::default()
    };
    let weighted = evaluate_batch(&params, &batch, zero, ActiveTerms::FULL, PartitionSet::ALL, Exec::Sequential).unwrap();
    assert_eq!(gated.breakdown.total, weighted.breakdown.total);
    assert_eq!(gated.grads, weighted.grads);
    // the inactive term is still measured
    assert!(gated.breakdown.correlation_loss > 0.0);
}

#[test]
fn mapping_stage_lowers_mapped_tool_loss() {
    let cfg = toy_config();
    let mut params = init_parameters(&cfg, 31).unwrap();
    let start = params.clone();
    let batch = random_batch(&cfg, 4, 3, 32);
    let trainable = PartitionSet::of(&[Partition::MappingCell]);
    let mut opt = OptimizerState::new(&params, &plain_sgd(0.05));
    let eval = |p: &_| {
        evaluate_batch(p, &batch, Lambdas::default(), ActiveTerms::MAPPING_ONLY, trainable, Exec::Sequential).unwrap()
    };
    let first = eval(&params).breakdown.mapped_tool_loss;
    for _ in 0..30 {
        let e = eval(&params);
        sgd_step(&mut params, &e.grads, &mut opt, trainable).unwrap();
    }
    let last = eval(&params).breakdown.mapped_tool_loss;
    assert!(last < first, "{last} >= {first}");
    for part in [Partition::Backbone, Partition::ToolHead, Partition::PhaseHead] {
        assert_eq!(params.weights.partition_tensors(part), start.weights.partition_tensors(part));
    }
}

#[test]
fn parallel_and_sequential_gradients_agree() {
    let cfg = toy_config();
    let params = init_parameters(&cfg, 41).unwrap();
    let batch = random_batch(&cfg, 6, 3, 42);
    let run = |exec| evaluate_batch(&params, &batch, Lambdas::default(), ActiveTerms::FULL, PartitionSet::ALL, exec).unwrap();
    let (a, b) = (run(Exec::Parallel), run(Exec::Sequential));
    assert_eq!(a.breakdown, b.breakdown);
    assert_eq!(a.grads, b.grads);
}
