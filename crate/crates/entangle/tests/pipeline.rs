//! End-to-end exercises of the public API: bundles, configs, updates, and
//! reports working together.

use entangle::config::{DatasetConfig, ScenarioConfig};
use entangle::decomp::{apply_update, Replacement, UpdateRequest};
use entangle::graph::{DatasetRole, NodeId};
use entangle::scenario::{
    build_leaf_update_control, build_s3_anticorrelated, build_s5_loss_mismatch, bundles,
    run_scenario,
};
use entangle::Error;

#[test]
fn every_shipped_bundle_realizes_its_expected_effects() {
    for bundle in bundles() {
        let report = run_scenario(&bundle, 42, 300, false).unwrap();
        assert!(
            report.all_effects_hold,
            "{}: {:?}",
            bundle.id,
            report
                .effects
                .iter()
                .filter(|e| !e.passed)
                .collect::<Vec<_>>()
        );
        assert!(report.self_defeating, "{} must be self-defeating", bundle.id);
    }
}

#[test]
fn update_bumps_versions_and_retrains_only_descendants() {
    let bundle = build_s3_anticorrelated();
    let vg = bundle.graph.validate().unwrap();
    let (_, new_models, outcome) = apply_update(
        &vg,
        &bundle.registry,
        &bundle.baseline_models,
        &bundle.update,
        false,
    )
    .unwrap();
    assert_eq!(outcome.retrained, vec![NodeId::new("w")]);
    assert_eq!(new_models.version, bundle.baseline_models.version + 1);
    // the untouched sibling is bit-identical
    let v = NodeId::new("v");
    assert!(new_models
        .get(&v)
        .unwrap()
        .bits_eq(bundle.baseline_models.get(&v).unwrap()));
}

#[test]
fn strict_mode_rejects_tie_improvements() {
    let bundle = build_leaf_update_control();
    let lenient = run_scenario(&bundle, 1, 1, false).unwrap();
    assert!(lenient.outcome.improvement_held);
    let strict = run_scenario(&bundle, 1, 1, true).unwrap();
    assert!(!strict.outcome.improvement_held);
    assert!(!strict.self_defeating);
}

#[test]
fn s5_filter_variant_changes_only_the_detector_train_set() {
    let plain = build_s5_loss_mismatch(false);
    let filtered = build_s5_loss_mismatch(true);
    let w = |b: &entangle::scenario::ScenarioBundle| {
        b.graph.nodes.iter().find(|n| n.id == NodeId::new("w")).unwrap().train_set.clone()
    };
    assert_eq!(w(&plain), "support-train");
    assert_eq!(w(&filtered), "far-train");
    assert_eq!(plain.dist, filtered.dist);
    let wide = run_scenario(&plain, 3, 50, false).unwrap();
    let narrow = run_scenario(&filtered, 3, 50, false).unwrap();
    assert!(wide.self_defeating);
    assert!(!narrow.self_defeating);
}

#[test]
fn hand_written_config_with_expanded_datasets_runs() {
    let text = r#"{
        "id": "two-coins",
        "distribution": {
            "support": [
                { "x": [0.0], "mass": 0.5, "targets": { "u": [1.0],  "w": [1.0]  } },
                { "x": [1.0], "mass": 0.5, "targets": { "u": [-1.0], "w": [-1.0] } }
            ]
        },
        "families": {
            "bit-table": { "table_classifier": { "domain": [[0.0], [1.0]] } },
            "sign-table": { "table_classifier": { "domain": [[-1.0], [1.0]] } }
        },
        "datasets": {
            "support-train": { "kind": "from_distribution", "scale": 2, "role": "train" },
            "support-test": { "kind": "from_distribution", "scale": 2, "role": "test" }
        },
        "graph": {
            "nodes": [
                {
                    "id": "u", "input_slice": [0], "family": "bit-table",
                    "trainer": { "erm": { "training_loss": "zero_one" } },
                    "train_set": "support-train", "test_set": "support-test",
                    "test_loss": "zero_one"
                },
                {
                    "id": "w", "input_slice": [], "family": "sign-table",
                    "trainer": { "erm": { "training_loss": "zero_one" } },
                    "train_set": "support-train", "test_set": "support-test",
                    "test_loss": "zero_one"
                }
            ],
            "edges": [["u", "w"]]
        },
        "update": {
            "target": "u",
            "replacement": { "kind": "model", "params": [1.0, -1.0] }
        },
        "expected_effects": [
            { "kind": "target_improves", "strict": false },
            { "kind": "self_defeating", "expected": false }
        ]
    }"#;
    let config = ScenarioConfig::from_json(text).unwrap();
    match &config.datasets["support-train"] {
        DatasetConfig::FromDistribution { scale, role } => {
            assert_eq!(*scale, 2);
            assert_eq!(*role, DatasetRole::Train);
        }
        other => panic!("unexpected dataset config {other:?}"),
    }
    let bundle = config.to_bundle().unwrap();
    let report = run_scenario(&bundle, 9, 1, false).unwrap();
    // the trained baseline was already perfect, so the identical replacement
    // ties and nothing degrades
    assert!(report.all_effects_hold, "{:?}", report.effects);
    assert!(!report.self_defeating);
}

#[test]
fn replacing_with_params_outside_the_family_is_rejected() {
    let bundle = build_s3_anticorrelated();
    let vg = bundle.graph.validate().unwrap();
    let bad = UpdateRequest {
        target: NodeId::new("u"),
        replacement: Replacement::Model { params: vec![2.0, 1.0, -1.0, -1.0], family: None },
        retrain_seed: 0,
    };
    match apply_update(&vg, &bundle.registry, &bundle.baseline_models, &bad, false) {
        Err(Error::IncompatibleReplacement { node, .. }) => assert_eq!(node, NodeId::new("u")),
        other => panic!("expected IncompatibleReplacement, got {other:?}"),
    }
}

#[test]
fn reports_serialize_to_stable_json() {
    let report = run_scenario(&build_s3_anticorrelated(), 11, 1, false).unwrap();
    let a = serde_json::to_string_pretty(&report).unwrap();
    let b = serde_json::to_string_pretty(
        &run_scenario(&build_s3_anticorrelated(), 11, 1, false).unwrap(),
    )
    .unwrap();
    assert_eq!(a, b);
    let parsed: entangle::scenario::ScenarioReport = serde_json::from_str(&a).unwrap();
    assert_eq!(parsed, report);
}
