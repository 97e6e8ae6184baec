//! System DAGs: nodes, edges, datasets, input routing, and topological
//! training.
//!
//! A system is a DAG whose vertices are separately trained models.  Each node
//! sees a slice of the raw input tuple plus the outputs of its parents (in
//! edge-declaration order), and owns immutable train/test set references and
//! a fixed test loss.  Training walks the DAG topologically so that every
//! downstream model is fit on inputs produced by already-trained upstream
//! models.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    empirical_risk, erm_train, HypothesisFamily, LabeledItem, RiskData, RiskValue, TrainedModel,
    TrainerSpec,
};
use crate::oracle::GroundTruthDistribution;

// ============================================================================
// Identifiers and data
// ============================================================================

/// Stable identifier of a node (and of its prediction task).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId::new(s)
    }
}

/// One labeled example: a raw input tuple plus per-task target tuples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example {
    pub x: Vec<f64>,
    pub targets: BTreeMap<NodeId, Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetRole {
    Train,
    Test,
}

/// A non-empty, dimensionally uniform bag of examples.  Risk over a dataset
/// is the uniform mean loss over its items (duplicate items encode weights).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dataset {
    pub items: Vec<Example>,
    pub role: DatasetRole,
}

impl Dataset {
    pub fn new(items: Vec<Example>, role: DatasetRole) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidDataset("dataset is empty".into()));
        }
        let dim = items[0].x.len();
        if items.iter().any(|e| e.x.len() != dim) {
            return Err(Error::InvalidDataset(
                "examples have inconsistent input dimensionality".into(),
            ));
        }
        let mut target_dims: BTreeMap<&NodeId, usize> = BTreeMap::new();
        for example in &items {
            for (task, target) in &example.targets {
                let expected = *target_dims.entry(task).or_insert(target.len());
                if target.len() != expected {
                    return Err(Error::InvalidDataset(format!(
                        "targets for task {task} have inconsistent dimensionality"
                    )));
                }
            }
        }
        Ok(Dataset { items, role })
    }
}

// ============================================================================
// Graph structure
// ============================================================================

/// Declaration of one model in the system.
///
/// `train_set`, `test_set`, and `family` are names resolved against a
/// [`Registry`]; `test_set` and `test_loss` are fixed for the lifetime of the
/// system — updates never touch them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    /// Indices into the raw input tuple that this node observes directly.
    pub input_slice: Vec<usize>,
    pub family: String,
    pub trainer: TrainerSpec,
    pub train_set: String,
    pub test_set: String,
    pub test_loss: crate::model::LossFunction,
}

/// A system graph as declared: nodes plus directed edges (parent, child).
/// Edge declaration order defines the order of parent outputs in a child's
/// assembled input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemGraph {
    pub nodes: Vec<NodeSpec>,
    pub edges: Vec<(NodeId, NodeId)>,
}

/// Named hypothesis families and datasets referenced by node specs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Registry {
    pub families: BTreeMap<String, HypothesisFamily>,
    pub datasets: BTreeMap<String, Dataset>,
}

impl Registry {
    pub fn family(&self, name: &str) -> Result<&HypothesisFamily> {
        self.families
            .get(name)
            .ok_or_else(|| Error::UnknownFamily(name.to_string()))
    }

    pub fn dataset(&self, name: &str) -> Result<&Dataset> {
        self.datasets
            .get(name)
            .ok_or_else(|| Error::UnknownDataset(name.to_string()))
    }
}

/// A structurally checked graph: acyclic, no dangling edges, unique ids,
/// with a fixed topological order and parent lists in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedGraph {
    graph: SystemGraph,
    order: Vec<NodeId>,
    parents: BTreeMap<NodeId, Vec<NodeId>>,
    children: BTreeMap<NodeId, Vec<NodeId>>,
}

impl SystemGraph {
    /// Check structural invariants and fix the topological order.
    pub fn validate(&self) -> Result<ValidatedGraph> {
        let mut seen = BTreeSet::new();
        for node in &self.nodes {
            if !seen.insert(node.id.clone()) {
                return Err(Error::DuplicateNodeId(node.id.clone()));
            }
        }
        for (from, to) in &self.edges {
            if !seen.contains(from) || !seen.contains(to) {
                return Err(Error::DanglingEdge(from.clone(), to.clone()));
            }
        }

        let mut parents: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        let mut children: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for node in &self.nodes {
            parents.insert(node.id.clone(), Vec::new());
            children.insert(node.id.clone(), Vec::new());
        }
        for (from, to) in &self.edges {
            parents.get_mut(to).unwrap().push(from.clone());
            children.get_mut(from).unwrap().push(to.clone());
        }

        // Kahn's algorithm, visiting ready nodes in declaration order so the
        // topological order is deterministic.
        let mut remaining: BTreeMap<NodeId, usize> = self
            .nodes
            .iter()
            .map(|n| (n.id.clone(), parents[&n.id].len()))
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        loop {
            let next = self
                .nodes
                .iter()
                .map(|n| &n.id)
                .find(|id| remaining.get(*id) == Some(&0));
            let Some(id) = next else { break };
            let id = id.clone();
            remaining.remove(&id);
            for child in &children[&id] {
                if let Some(deg) = remaining.get_mut(child) {
                    *deg -= 1;
                }
            }
            order.push(id);
        }
        if !remaining.is_empty() {
            return Err(Error::CycleDetected(extract_cycle(&remaining, &children)));
        }

        Ok(ValidatedGraph { graph: self.clone(), order, parents, children })
    }
}

/// Walk child edges inside the unresolved set until a node repeats; the
/// closed walk from the first repeat is a genuine cycle.
fn extract_cycle(
    remaining: &BTreeMap<NodeId, usize>,
    children: &BTreeMap<NodeId, Vec<NodeId>>,
) -> Vec<NodeId> {
    let start = remaining.keys().next().expect("non-empty").clone();
    let mut path = vec![start.clone()];
    let mut seen: BTreeMap<NodeId, usize> = BTreeMap::new();
    seen.insert(start.clone(), 0);
    let mut current = start;
    loop {
        let next = children[&current]
            .iter()
            .find(|c| remaining.contains_key(*c))
            .expect("every unresolved node keeps an unresolved child")
            .clone();
        if let Some(&pos) = seen.get(&next) {
            let mut cycle = path[pos..].to_vec();
            cycle.push(next);
            return cycle;
        }
        seen.insert(next.clone(), path.len());
        path.push(next.clone());
        current = next;
    }
}

impl ValidatedGraph {
    pub fn graph(&self) -> &SystemGraph {
        &self.graph
    }

    pub fn order(&self) -> &[NodeId] {
        &self.order
    }

    pub fn node(&self, id: &NodeId) -> Result<&NodeSpec> {
        self.graph
            .nodes
            .iter()
            .find(|n| &n.id == id)
            .ok_or_else(|| Error::TargetNotFound(id.clone()))
    }

    /// Parents in edge-declaration order.
    pub fn parents(&self, id: &NodeId) -> &[NodeId] {
        self.parents.get(id).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn children(&self, id: &NodeId) -> &[NodeId] {
        self.children.get(id).map(|v| v.as_slice()).unwrap_or(&[])
    }

    /// All strict descendants of `id`, in topological order.
    pub fn descendants(&self, id: &NodeId) -> Vec<NodeId> {
        let mut reached: BTreeSet<NodeId> = BTreeSet::new();
        let mut frontier = vec![id.clone()];
        while let Some(current) = frontier.pop() {
            for child in self.children(&current) {
                if reached.insert(child.clone()) {
                    frontier.push(child.clone());
                }
            }
        }
        self.order
            .iter()
            .filter(|n| reached.contains(*n))
            .cloned()
            .collect()
    }

    /// Rebuild with one node spec replaced (same id, new configuration).
    pub fn with_node_replaced(&self, spec: NodeSpec) -> Result<ValidatedGraph> {
        let mut graph = self.graph.clone();
        let slot = graph
            .nodes
            .iter_mut()
            .find(|n| n.id == spec.id)
            .ok_or_else(|| Error::TargetNotFound(spec.id.clone()))?;
        *slot = spec;
        graph.validate()
    }
}

// ============================================================================
// Trained systems
// ============================================================================

/// The trained models of a system, one per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSet {
    pub models: BTreeMap<NodeId, TrainedModel>,
    /// Training round counter (0 = baseline, +1 per applied update).
    pub version: u32,
}

impl ModelSet {
    pub fn get(&self, id: &NodeId) -> Result<&TrainedModel> {
        self.models.get(id).ok_or_else(|| Error::MissingParentOutput {
            node: id.clone(),
            parent: id.clone(),
        })
    }
}

/// Assemble a node's effective input: the raw-input slice first, then parent
/// outputs in edge-declaration order.
pub fn assemble_input(
    vg: &ValidatedGraph,
    node: &NodeId,
    x: &[f64],
    upstream_outputs: &BTreeMap<NodeId, Vec<f64>>,
) -> Result<Vec<f64>> {
    let spec = vg.node(node)?;
    let mut input = Vec::new();
    for &i in &spec.input_slice {
        if i >= x.len() {
            return Err(Error::ArityMismatch { want: i + 1, got: x.len() });
        }
        input.push(x[i]);
    }
    for parent in vg.parents(node) {
        let out = upstream_outputs
            .get(parent)
            .ok_or_else(|| Error::MissingParentOutput {
                node: node.clone(),
                parent: parent.clone(),
            })?;
        input.extend_from_slice(out);
    }
    Ok(input)
}

/// Evaluate every node on one raw input, topologically.
pub fn forward(
    vg: &ValidatedGraph,
    models: &ModelSet,
    x: &[f64],
) -> Result<BTreeMap<NodeId, Vec<f64>>> {
    let mut outputs = BTreeMap::new();
    for id in vg.order() {
        let input = assemble_input(vg, id, x, &outputs)?;
        let output = models.get(id)?.predict(&input)?;
        outputs.insert(id.clone(), output);
    }
    Ok(outputs)
}

/// Output of a single node on one raw input (forwards the whole prefix).
pub fn forward_node(
    vg: &ValidatedGraph,
    models: &ModelSet,
    node: &NodeId,
    x: &[f64],
) -> Result<Vec<f64>> {
    let outputs = forward(vg, models, x)?;
    outputs
        .get(node)
        .cloned()
        .ok_or_else(|| Error::TargetNotFound(node.clone()))
}

/// Train every node in topological order.  Downstream nodes are fit on
/// inputs produced by the upstream models trained earlier in the same call,
/// so the result is a pure function of (graph, registry, seed).
pub fn train_system(vg: &ValidatedGraph, registry: &Registry, seed: u64) -> Result<ModelSet> {
    let mut log = Vec::new();
    train_system_traced(vg, registry, seed, &mut log)
}

/// As [`train_system`], appending each node id to `log` when its training
/// completes (instrumentation for ordering checks).
pub fn train_system_traced(
    vg: &ValidatedGraph,
    registry: &Registry,
    seed: u64,
    log: &mut Vec<NodeId>,
) -> Result<ModelSet> {
    let _ = seed; // Reserved for stochastic trainer kinds; ERM is exact.
    let mut models = ModelSet { models: BTreeMap::new(), version: 0 };
    for id in vg.order() {
        let model = train_node(vg, registry, &models, id, 0)?;
        models.models.insert(id.clone(), model);
        log.push(id.clone());
    }
    Ok(models)
}

/// Train one node against the given (already trained) upstream models.
pub(crate) fn train_node(
    vg: &ValidatedGraph,
    registry: &Registry,
    upstream: &ModelSet,
    id: &NodeId,
    version: u32,
) -> Result<TrainedModel> {
    let spec = vg.node(id)?;
    let family = registry.family(&spec.family)?;
    match &spec.trainer {
        TrainerSpec::Fixed { params } => {
            TrainedModel::new(id.clone(), family.clone(), params.clone(), version)
        }
        TrainerSpec::Erm { training_loss } => {
            let train_set = registry.dataset(&spec.train_set)?;
            let items = routed_items(vg, upstream, id, train_set)?;
            erm_train(family, &items, training_loss, id, version).map_err(|e| match e {
                Error::TrainerFailed { .. } => e,
                other => Error::TrainerFailed { node: id.clone(), reason: other.to_string() },
            })
        }
    }
}

/// Route a dataset through the trained ancestors of `id`, producing labeled
/// items in the node's own input space.
pub(crate) fn routed_items(
    vg: &ValidatedGraph,
    models: &ModelSet,
    id: &NodeId,
    dataset: &Dataset,
) -> Result<Vec<LabeledItem>> {
    let mut items = Vec::with_capacity(dataset.items.len());
    for example in &dataset.items {
        let mut outputs = BTreeMap::new();
        for prior in vg.order() {
            if prior == id {
                break;
            }
            if let Ok(model) = models.get(prior) {
                let input = assemble_input(vg, prior, &example.x, &outputs)?;
                outputs.insert(prior.clone(), model.predict(&input)?);
            }
        }
        let input = assemble_input(vg, id, &example.x, &outputs)?;
        let target = example
            .targets
            .get(id)
            .ok_or_else(|| Error::MissingTargets(id.clone()))?
            .clone();
        items.push(LabeledItem { input, target, weight: 1.0 });
    }
    Ok(items)
}

/// A node's fixed test loss: mean loss over its immutable test set, with the
/// node evaluated as part of the full system.
pub fn node_test_loss(
    vg: &ValidatedGraph,
    registry: &Registry,
    models: &ModelSet,
    id: &NodeId,
) -> Result<RiskValue> {
    let spec = vg.node(id)?;
    let test_set = registry.dataset(&spec.test_set)?;
    empirical_risk(
        |x| forward_node(vg, models, id, x),
        RiskData::Dataset(test_set),
        id,
        &spec.test_loss,
    )
}

/// A node's exact risk under its test loss, taken over the generating
/// distribution instead of the finite test set.
pub fn node_distribution_risk(
    vg: &ValidatedGraph,
    models: &ModelSet,
    dist: &GroundTruthDistribution,
    id: &NodeId,
) -> Result<RiskValue> {
    let spec = vg.node(id)?;
    empirical_risk(
        |x| forward_node(vg, models, id, x),
        RiskData::Distribution(dist),
        id,
        &spec.test_loss,
    )
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FamilyKind, LossFunction};

    fn id(s: &str) -> NodeId {
        NodeId::new(s)
    }

    fn table_node(name: &str, slice: Vec<usize>, family: &str, params: Vec<f64>) -> NodeSpec {
        NodeSpec {
            id: id(name),
            input_slice: slice,
            family: family.to_string(),
            trainer: TrainerSpec::Fixed { params },
            train_set: "train".into(),
            test_set: "test".into(),
            test_loss: LossFunction::ZeroOne,
        }
    }

    /// u and v read the raw input, w reads both their outputs: the smallest
    /// interesting system shape.
    fn fork_graph() -> SystemGraph {
        SystemGraph {
            nodes: vec![
                table_node("u", vec![0], "sign-u", vec![1.0, -1.0]),
                table_node("v", vec![0], "sign-v", vec![-1.0, 1.0]),
                table_node("w", vec![], "join-w", vec![1.0, -1.0, -1.0, 1.0]),
            ],
            edges: vec![(id("u"), id("w")), (id("v"), id("w"))],
        }
    }

    fn fork_registry() -> Registry {
        let mut families = BTreeMap::new();
        families.insert(
            "sign-u".into(),
            HypothesisFamily::new(FamilyKind::TableClassifier {
                domain: vec![vec![0.0], vec![1.0]],
            }),
        );
        families.insert(
            "sign-v".into(),
            HypothesisFamily::new(FamilyKind::TableClassifier {
                domain: vec![vec![0.0], vec![1.0]],
            }),
        );
        families.insert(
            "join-w".into(),
            HypothesisFamily::new(FamilyKind::TableClassifier {
                domain: vec![
                    vec![-1.0, -1.0],
                    vec![-1.0, 1.0],
                    vec![1.0, -1.0],
                    vec![1.0, 1.0],
                ],
            }),
        );
        let mut targets = BTreeMap::new();
        targets.insert(id("u"), vec![1.0]);
        targets.insert(id("v"), vec![-1.0]);
        targets.insert(id("w"), vec![1.0]);
        let example = Example { x: vec![0.0], targets };
        let mut datasets = BTreeMap::new();
        datasets.insert(
            "train".into(),
            Dataset::new(vec![example.clone()], DatasetRole::Train).unwrap(),
        );
        datasets.insert("test".into(), Dataset::new(vec![example], DatasetRole::Test).unwrap());
        Registry { families, datasets }
    }

    #[test]
    fn two_node_cycle_is_rejected_with_the_cycle_named() {
        let graph = SystemGraph {
            nodes: vec![
                table_node("w", vec![0], "f", vec![]),
                table_node("u", vec![0], "f", vec![]),
            ],
            edges: vec![(id("w"), id("u")), (id("u"), id("w"))],
        };
        match graph.validate() {
            Err(Error::CycleDetected(cycle)) => {
                assert!(cycle.contains(&id("u")));
                assert!(cycle.contains(&id("w")));
                assert_eq!(cycle.first(), cycle.last());
            }
            other => panic!("expected CycleDetected, got {other:?}"),
        }
    }

    #[test]
    fn fork_graph_orders_join_last() {
        let vg = fork_graph().validate().unwrap();
        let order = vg.order();
        let pos = |n: &str| order.iter().position(|o| o.as_str() == n).unwrap();
        assert!(pos("u") < pos("w"));
        assert!(pos("v") < pos("w"));
        assert_eq!(order[0], id("u")); // declaration order drives ties
    }

    #[test]
    fn dangling_edge_is_rejected() {
        let graph = SystemGraph {
            nodes: vec![table_node("u", vec![0], "f", vec![])],
            edges: vec![(id("u"), id("z"))],
        };
        assert_eq!(
            graph.validate().unwrap_err(),
            Error::DanglingEdge(id("u"), id("z"))
        );
    }

    #[test]
    fn duplicate_node_id_is_rejected() {
        let graph = SystemGraph {
            nodes: vec![
                table_node("u", vec![0], "f", vec![]),
                table_node("u", vec![0], "f", vec![]),
            ],
            edges: vec![],
        };
        assert_eq!(graph.validate().unwrap_err(), Error::DuplicateNodeId(id("u")));
    }

    #[test]
    fn input_assembly_slices_then_appends_parents() {
        let vg = fork_graph().validate().unwrap();
        // Slice [0] of x = (3, 4, 5) -> (3,); no parents.
        let mut graph = fork_graph();
        graph.nodes[0].input_slice = vec![0, 1];
        let vg2 = graph.validate().unwrap();
        let empty = BTreeMap::new();
        assert_eq!(
            assemble_input(&vg2, &id("u"), &[3.0, 4.0, 5.0], &empty).unwrap(),
            vec![3.0, 4.0]
        );

        // Parents only, in edge order.
        let mut outputs = BTreeMap::new();
        outputs.insert(id("u"), vec![1.0]);
        outputs.insert(id("v"), vec![-1.0]);
        assert_eq!(
            assemble_input(&vg, &id("w"), &[0.0], &outputs).unwrap(),
            vec![1.0, -1.0]
        );

        // Slice plus parent output.
        let mut graph = fork_graph();
        graph.nodes[2].input_slice = vec![2];
        graph.edges = vec![(id("u"), id("w"))];
        graph.nodes[2].trainer = TrainerSpec::Fixed { params: vec![1.0, -1.0] };
        let vg3 = graph.validate().unwrap();
        let mut outputs = BTreeMap::new();
        outputs.insert(id("u"), vec![1.0]);
        assert_eq!(
            assemble_input(&vg3, &id("w"), &[3.0, 4.0, 5.0], &outputs).unwrap(),
            vec![5.0, 1.0]
        );
    }

    #[test]
    fn swapping_edge_declarations_swaps_parent_components() {
        let mut graph = fork_graph();
        graph.edges = vec![(id("v"), id("w")), (id("u"), id("w"))];
        let vg = graph.validate().unwrap();
        let mut outputs = BTreeMap::new();
        outputs.insert(id("u"), vec![1.0]);
        outputs.insert(id("v"), vec![-1.0]);
        assert_eq!(
            assemble_input(&vg, &id("w"), &[0.0], &outputs).unwrap(),
            vec![-1.0, 1.0]
        );
    }

    #[test]
    fn forward_reports_every_node() {
        let vg = fork_graph().validate().unwrap();
        let registry = fork_registry();
        let models = train_system(&vg, &registry, 0).unwrap();
        let outputs = forward(&vg, &models, &[0.0]).unwrap();
        assert_eq!(outputs[&id("u")], vec![1.0]);
        assert_eq!(outputs[&id("v")], vec![-1.0]);
        // w's fixed table maps (+1, -1) -> -1 (third key in domain order).
        assert_eq!(outputs[&id("w")], vec![-1.0]);
    }

    #[test]
    fn training_log_respects_ancestry() {
        let vg = fork_graph().validate().unwrap();
        let registry = fork_registry();
        let mut log = Vec::new();
        train_system_traced(&vg, &registry, 7, &mut log).unwrap();
        let pos = |n: &str| log.iter().position(|o| o.as_str() == n).unwrap();
        assert!(pos("u") < pos("w"));
        assert!(pos("v") < pos("w"));
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn training_is_deterministic() {
        let vg = fork_graph().validate().unwrap();
        let registry = fork_registry();
        let a = train_system(&vg, &registry, 7).unwrap();
        let b = train_system(&vg, &registry, 7).unwrap();
        for (node, model) in &a.models {
            assert!(model.bits_eq(&b.models[node]));
        }
    }

    #[test]
    fn descendants_are_topologically_sorted() {
        let graph = SystemGraph {
            nodes: vec![
                table_node("a", vec![0], "f", vec![]),
                table_node("b", vec![], "f", vec![]),
                table_node("c", vec![], "f", vec![]),
                table_node("d", vec![], "f", vec![]),
            ],
            edges: vec![
                (id("a"), id("b")),
                (id("b"), id("d")),
                (id("a"), id("c")),
                (id("c"), id("d")),
            ],
        };
        let vg = graph.validate().unwrap();
        assert_eq!(vg.descendants(&id("a")), vec![id("b"), id("c"), id("d")]);
        assert_eq!(vg.descendants(&id("d")), Vec::<NodeId>::new());
    }
}
