mod common;

use common::{gradient_check, random_batch, toy_config};
use mtrcnet::losses::{ActiveTerms, Lambdas};
use mtrcnet::model::{init_parameters, MappingSource, PartitionSet};

fn check(cfg: mtrcnet::model::ArchConfig, active: ActiveTerms, trainable: PartitionSet, seed: u64) {
    let params = init_parameters(&cfg, seed).unwrap();
    let batch = random_batch(&cfg, 2, 3, seed + 100);
    for c in gradient_check(&params, &batch, Lambdas::default(), active, trainable, 1e-4) {
        println!(
            "{}: {} weights checked, {} at kinks, max rel err {:.3e}",
            c.partition, c.checked, c.kinked, c.max_rel_err
        );
        assert!(c.max_rel_err < 1e-4, "{}: {}", c.partition, c.max_rel_err);
        assert!(c.kinked * 4 <= c.checked + c.kinked, "too many kinks in {}", c.partition);
    }
}

#[test]
fn full_objective_all_partitions() {
    check(toy_config(), ActiveTerms::FULL, PartitionSet::ALL, 1);
}

#[test]
fn mapping_only_objective() {
    check(toy_config(), ActiveTerms::MAPPING_ONLY, PartitionSet::ALL, 2);
}

#[test]
fn label_space_mapping_variant() {
    let cfg = mtrcnet::model::ArchConfig {
        mapping_source: MappingSource::PhaseLabels,
        ..toy_config()
    };
    check(cfg, ActiveTerms::FULL, PartitionSet::ALL, 3);
}

#[test]
fn mutual_mapping_variant() {
    let cfg = mtrcnet::model::ArchConfig {
        mutual_mapping: true,
        ..toy_config()
    };
    check(cfg, ActiveTerms::FULL, PartitionSet::ALL, 4);
}
