//! JSON configuration schema: a serializable mirror of [`ScenarioBundle`]
//! with strict field checking, so hand-written experiment files fail loudly
//! instead of silently ignoring typos.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decomp::UpdateRequest;
use crate::error::{Error, Result};
use crate::graph::{train_system, Dataset, DatasetRole, Example, NodeId, Registry, SystemGraph};
use crate::model::{HypothesisFamily, TrainedModel};
use crate::oracle::GroundTruthDistribution;
use crate::scenario::{DecompositionSpec, ExpectedEffect, MonteCarloSpec, ScenarioBundle};

// ============================================================================
// Schema
// ============================================================================

/// One support point of the ground-truth distribution: the raw input, its
/// probability mass, and a target vector for every node in the graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupportPoint {
    pub x: Vec<f64>,
    pub mass: f64,
    pub targets: BTreeMap<NodeId, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionConfig {
    pub support: Vec<SupportPoint>,
}

/// Datasets are either spelled out item by item or expanded from the
/// distribution with whole-number multiplicities `mass * scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    FromDistribution { scale: usize, role: DatasetRole },
    Explicit { items: Vec<Example>, role: DatasetRole },
}

/// The on-disk form of a complete experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    #[serde(default)]
    pub description: String,
    pub distribution: DistributionConfig,
    pub families: BTreeMap<String, HypothesisFamily>,
    pub datasets: BTreeMap<String, DatasetConfig>,
    pub graph: SystemGraph,
    /// Parameters installed in place of a node's model after the baseline
    /// training pass (other nodes keep their trained state).  Each override
    /// must belong to the node's registered family.
    #[serde(default)]
    pub baseline_overrides: BTreeMap<NodeId, Vec<f64>>,
    pub update: UpdateRequest,
    #[serde(default)]
    pub expected_effects: Vec<ExpectedEffect>,
    #[serde(default)]
    pub monte_carlo: Option<MonteCarloSpec>,
    #[serde(default)]
    pub decomposition: Option<DecompositionSpec>,
}

// ============================================================================
// Import / export
// ============================================================================

impl ScenarioConfig {
    /// Parse strictly from JSON; serde's diagnostics (field, line, column)
    /// are preserved in the error.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Materialize the runnable bundle: validate the distribution, expand
    /// datasets, validate the graph, and train the baseline system.
    pub fn to_bundle(&self) -> Result<ScenarioBundle> {
        let support: Vec<(Example, f64)> = self
            .distribution
            .support
            .iter()
            .map(|p| {
                (
                    Example { x: p.x.clone(), targets: p.targets.clone() },
                    p.mass,
                )
            })
            .collect();
        let dist = GroundTruthDistribution::new(support)?;

        let mut datasets = BTreeMap::new();
        for (name, spec) in &self.datasets {
            let dataset = match spec {
                DatasetConfig::FromDistribution { scale, role } => dist.to_dataset(*scale, *role)?,
                DatasetConfig::Explicit { items, role } => Dataset::new(items.clone(), *role)?,
            };
            datasets.insert(name.clone(), dataset);
        }
        let registry = Registry { families: self.families.clone(), datasets };

        let vg = self.graph.validate()?;
        for spec in self.graph.nodes.iter() {
            registry.family(&spec.family)?;
            registry.dataset(&spec.train_set)?;
            registry.dataset(&spec.test_set)?;
        }
        vg.node(&self.update.target)?;
        let mut baseline_models = train_system(&vg, &registry, 0)?;
        for (node, params) in &self.baseline_overrides {
            let spec = vg.node(node)?;
            let family = registry.family(&spec.family)?;
            let model = TrainedModel::new(node.clone(), family.clone(), params.clone(), 0)?;
            baseline_models.models.insert(node.clone(), model);
        }

        let bundle = ScenarioBundle {
            id: self.id.clone(),
            description: self.description.clone(),
            graph: self.graph.clone(),
            registry,
            dist,
            baseline_models,
            update: self.update.clone(),
            expected_effects: self.expected_effects.clone(),
            monte_carlo: self.monte_carlo.clone(),
            decomposition: self.decomposition.clone(),
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

impl ScenarioBundle {
    /// Export to the configuration schema (datasets are spelled out
    /// explicitly, so the export is exact regardless of masses).  Baseline
    /// models that differ from a fresh training pass are exported as
    /// parameter overrides.
    pub fn to_config(&self) -> ScenarioConfig {
        let baseline_overrides = self
            .graph
            .validate()
            .and_then(|vg| train_system(&vg, &self.registry, 0))
            .map(|trained| {
                self.baseline_models
                    .models
                    .iter()
                    .filter(|(id, model)| {
                        trained.models.get(*id).is_none_or(|t| t.params != model.params)
                    })
                    .map(|(id, model)| (id.clone(), model.params.clone()))
                    .collect()
            })
            .unwrap_or_default();
        let support = self
            .dist
            .support()
            .iter()
            .map(|(e, m)| SupportPoint { x: e.x.clone(), mass: *m, targets: e.targets.clone() })
            .collect();
        let datasets = self
            .registry
            .datasets
            .iter()
            .map(|(name, ds)| {
                (
                    name.clone(),
                    DatasetConfig::Explicit { items: ds.items.clone(), role: ds.role },
                )
            })
            .collect();
        ScenarioConfig {
            id: self.id.clone(),
            description: self.description.clone(),
            distribution: DistributionConfig { support },
            families: self.registry.families.clone(),
            datasets,
            graph: self.graph.clone(),
            baseline_overrides,
            update: self.update.clone(),
            expected_effects: self.expected_effects.clone(),
            monte_carlo: self.monte_carlo.clone(),
            decomposition: self.decomposition.clone(),
        }
    }
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{bundles, run_scenario};

    #[test]
    fn every_shipped_bundle_round_trips_through_json() {
        for bundle in bundles() {
            let json = bundle.to_config().to_json();
            let config = ScenarioConfig::from_json(&json).unwrap();
            let rebuilt = config.to_bundle().unwrap();
            assert_eq!(bundle, rebuilt, "{} must survive the config round trip", bundle.id);
        }
    }

    #[test]
    fn round_tripped_bundle_runs_identically() {
        let bundle = bundles().remove(2); // S3: exact, fast
        let rebuilt = ScenarioConfig::from_json(&bundle.to_config().to_json())
            .unwrap()
            .to_bundle()
            .unwrap();
        let a = run_scenario(&bundle, 5, 1, false).unwrap();
        let b = run_scenario(&rebuilt, 5, 1, false).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_fields_are_rejected_with_diagnostics() {
        let mut json = serde_json::to_value(bundles()[2].to_config()).unwrap();
        json.as_object_mut()
            .unwrap()
            .insert("surprise".to_string(), serde_json::Value::Bool(true));
        let err = ScenarioConfig::from_json(&json.to_string()).unwrap_err();
        match err {
            Error::ConfigInvalid(msg) => assert!(msg.contains("surprise"), "{msg}"),
            other => panic!("expected ConfigInvalid, got {other:?}"),
        }
    }

    #[test]
    fn bad_mass_sum_is_rejected() {
        let mut config = bundles()[2].to_config();
        config.distribution.support[0].mass += 0.5;
        match config.to_bundle() {
            Err(Error::InvalidDistribution(msg)) => assert!(msg.contains("sum"), "{msg}"),
            other => panic!("expected InvalidDistribution, got {other:?}"),
        }
    }

    #[test]
    fn missing_dataset_reference_is_rejected() {
        let mut config = bundles()[2].to_config();
        config.datasets.remove("support-train");
        match config.to_bundle() {
            Err(Error::UnknownDataset(name)) => assert_eq!(name, "support-train"),
            other => panic!("expected UnknownDataset, got {other:?}"),
        }
    }

    #[test]
    fn from_distribution_datasets_expand_by_mass() {
        let mut config = bundles()[2].to_config();
        config.datasets.insert(
            "support-train".to_string(),
            DatasetConfig::FromDistribution { scale: 8, role: DatasetRole::Train },
        );
        config.datasets.insert(
            "support-test".to_string(),
            DatasetConfig::FromDistribution { scale: 8, role: DatasetRole::Test },
        );
        let bundle = config.to_bundle().unwrap();
        let ds = bundle.registry.dataset("support-test").unwrap();
        assert_eq!(ds.items.len(), 8);
        // multiplicities (1, 2, 2, 3) follow the masses
        let first = &bundle.dist.support()[0].0;
        assert_eq!(ds.items.iter().filter(|e| e.x == first.x).count(), 1);
    }

    #[test]
    fn baseline_overrides_replace_trained_params_and_round_trip() {
        let mut config = bundles()[2].to_config();
        config
            .baseline_overrides
            .insert(NodeId::new("u"), vec![1.0, 1.0, 1.0, 1.0]);
        let bundle = config.to_bundle().unwrap();
        let u = bundle.baseline_models.get(&NodeId::new("u")).unwrap();
        assert_eq!(u.params, vec![1.0, 1.0, 1.0, 1.0]);
        assert_eq!(u.version, 0);
        // The export regenerates exactly the override that was applied.
        let exported = bundle.to_config();
        assert_eq!(exported.baseline_overrides, config.baseline_overrides);
        assert_eq!(exported.to_bundle().unwrap(), bundle);
    }

    #[test]
    fn out_of_family_baseline_override_is_rejected() {
        let mut config = bundles()[2].to_config();
        config.baseline_overrides.insert(NodeId::new("u"), vec![2.0, 1.0, 1.0, 1.0]);
        match config.to_bundle() {
            Err(Error::IncompatibleFamily(msg)) => assert!(msg.contains("+1 or -1"), "{msg}"),
            other => panic!("expected IncompatibleFamily, got {other:?}"),
        }
    }

    #[test]
    fn baseline_override_for_unknown_node_is_rejected() {
        let mut config = bundles()[2].to_config();
        config.baseline_overrides.insert(NodeId::new("ghost"), vec![1.0]);
        assert!(config.to_bundle().is_err());
    }

    #[test]
    fn fractional_scale_expansion_is_rejected() {
        let mut config = bundles()[2].to_config();
        config.datasets.insert(
            "support-train".to_string(),
            DatasetConfig::FromDistribution { scale: 3, role: DatasetRole::Train },
        );
        match config.to_bundle() {
            Err(Error::InvalidDistribution(msg)) => assert!(msg.contains("whole"), "{msg}"),
            other => panic!("expected InvalidDistribution, got {other:?}"),
        }
    }
}
