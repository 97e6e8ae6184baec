//! Canonical bundled experiments, each reproducing one mechanism by which an
//! upstream improvement degrades a retrained downstream model.
//!
//! * S1 — the downstream family is too weak for the improved representation
//!   (approximation error).
//! * S2 — the improved representation shrinks the margin and finite training
//!   draws stop sufficing (estimation error).
//! * S3 — upstream errors that used to cancel a sibling's stop cancelling
//!   (compatibility error, anti-correlated case).
//! * S4 — the update makes two upstreams collapse onto the same predictions
//!   (compatibility error, correlated case).
//! * S5 — the upstream's training objective is re-aligned with its own test
//!   metric at the expense of the input range the downstream depends on
//!   (upstream error via loss mismatch).
//!
//! Every constant below is fixed by construction and verified by
//! enumeration in the test suites; the bundles are data, not knobs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::decomp::{
    apply_update, decompose_upstream_pair, decompose_with_upstreams, expected_downstream_risk,
    upstream_stages, McStats, Replacement, RiskDecomposition, UpdateOutcome, UpdateRequest,
    UpstreamDecomposition, LOSS_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::graph::{
    forward_node, node_distribution_risk, Dataset, DatasetRole, Example, ModelSet, NodeId,
    NodeSpec, Registry, SystemGraph, ValidatedGraph,
};
use crate::model::{
    empirical_risk, FamilyKind, GridRange, HypothesisFamily, LossFunction, RiskData, RiskValue,
    TrainerSpec,
};
use crate::oracle::{GroundTruthDistribution, UpstreamStage};

// ============================================================================
// Bundle plumbing
// ============================================================================

/// Which node's excess risk the report decomposes, and optionally which
/// upstream pair to split the upstream error over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionSpec {
    pub downstream: NodeId,
    #[serde(default)]
    pub upstream_pair: Option<UpstreamPairSpec>,
}

/// Upstream pair for the compatibility split: `fixed` stays as trained,
/// `actual` is compared against the best stand-in from `candidate_family`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpstreamPairSpec {
    pub fixed: NodeId,
    pub actual: NodeId,
    pub candidate_family: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSpec {
    pub target: NodeId,
    pub sample_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecompositionTerm {
    Upstream,
    Approximation,
    Estimation,
}

/// A declarative assertion checked by [`run_scenario`]; the report records
/// each one's pass/fail with the observed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ExpectedEffect {
    /// The node's fixed test loss equals `before` / `after` (tolerance 1e-9).
    NodeLoss {
        node: NodeId,
        #[serde(default)]
        before: Option<f64>,
        #[serde(default)]
        after: Option<f64>,
    },
    /// The update target's own test loss does not increase (or strictly
    /// decreases when `strict`).
    TargetImproves { strict: bool },
    NodeLossIncreases { node: NodeId },
    NodeLossDoesNotIncrease { node: NodeId },
    SelfDefeating { expected: bool },
    /// The post-update decomposition terms, exactly (tolerance 1e-9).
    DecompositionAfter {
        upstream: f64,
        approximation: f64,
        estimation: f64,
    },
    /// The named term strictly exceeds both others in the post-update
    /// decomposition.
    DominantTerm { term: DecompositionTerm },
    /// Compatibility error before/after the update, and the post-update
    /// excess term (tolerance 1e-9).
    CompatibilitySplit {
        before: f64,
        after: f64,
        excess_after: f64,
    },
    /// After the update, two nodes predict identically on every support
    /// point.
    NodesAgree { a: NodeId, b: NodeId },
    /// The node's loss on an auxiliary dataset under `loss` strictly
    /// increases; optional exact endpoints.
    AuxLossIncreases {
        node: NodeId,
        dataset: String,
        loss: LossFunction,
        #[serde(default)]
        before: Option<f64>,
        #[serde(default)]
        after: Option<f64>,
    },
    /// Baseline Monte-Carlo mean risk stays below `max_mean`.
    McBaselineBelow { max_mean: f64 },
    /// Post-update Monte-Carlo mean exceeds the baseline mean by at least
    /// `min_gap` and by at least `min_se_multiples` pooled standard errors.
    McDegrades { min_gap: f64, min_se_multiples: f64 },
}

/// A complete runnable experiment: system, data, update, and the assertions
/// its mechanism is supposed to realize.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioBundle {
    pub id: String,
    pub description: String,
    pub graph: SystemGraph,
    pub registry: Registry,
    pub dist: GroundTruthDistribution,
    pub baseline_models: ModelSet,
    pub update: UpdateRequest,
    pub expected_effects: Vec<ExpectedEffect>,
    pub monte_carlo: Option<MonteCarloSpec>,
    pub decomposition: Option<DecompositionSpec>,
}

impl ScenarioBundle {
    /// Cheap structural re-validation (used after config import).
    pub fn validate(&self) -> Result<ValidatedGraph> {
        let vg = self.graph.validate()?;
        vg.node(&self.update.target)?;
        for node in vg.order() {
            for (example, _) in self.dist.support() {
                if !example.targets.contains_key(node) {
                    return Err(Error::MissingTargets(node.clone()));
                }
            }
        }
        Ok(vg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectResult {
    pub description: String,
    pub passed: bool,
    pub observed: String,
}

/// Full record of one scenario run: the test-loss view (which drives the
/// self-defeating verdict) and the exact-risk view (which drives the
/// decompositions) side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub description: String,
    pub seed: u64,
    pub trials: usize,
    pub strict_improvement: bool,
    pub outcome: UpdateOutcome,
    pub self_defeating: bool,
    pub exact_risk_before: BTreeMap<NodeId, RiskValue>,
    pub exact_risk_after: BTreeMap<NodeId, RiskValue>,
    pub decomposition_before: Option<RiskDecomposition>,
    pub decomposition_after: Option<RiskDecomposition>,
    pub upstream_split_before: Option<UpstreamDecomposition>,
    pub upstream_split_after: Option<UpstreamDecomposition>,
    pub monte_carlo_before: Option<McStats>,
    pub monte_carlo_after: Option<McStats>,
    pub effects: Vec<EffectResult>,
    pub all_effects_hold: bool,
}

impl ScenarioReport {
    /// The error a front end should surface when assertions failed.
    pub fn violation(&self) -> Option<Error> {
        if self.all_effects_hold {
            return None;
        }
        let failed: Vec<&str> = self
            .effects
            .iter()
            .filter(|e| !e.passed)
            .map(|e| e.description.as_str())
            .collect();
        Some(Error::ExpectedEffectViolated(failed.join("; ")))
    }
}

// ============================================================================
// Scenario runner
// ============================================================================

/// Train the baseline, apply the bundled update, compute both loss views,
/// the decompositions, and (where configured) Monte-Carlo statistics with
/// paired per-trial draws, then check every declared expected effect.
pub fn run_scenario(
    bundle: &ScenarioBundle,
    seed: u64,
    trials: usize,
    strict_improvement: bool,
) -> Result<ScenarioReport> {
    let vg = bundle.validate()?;
    let models = bundle.baseline_models.clone();
    let registry = &bundle.registry;

    let mut exact_before = BTreeMap::new();
    for id in vg.order() {
        exact_before.insert(
            id.clone(),
            node_distribution_risk(&vg, &models, &bundle.dist, id)?,
        );
    }
    let decomposition_before = bundle
        .decomposition
        .as_ref()
        .map(|d| eq2(&vg, registry, &models, &bundle.dist, d))
        .transpose()?;
    let upstream_split_before = bundle
        .decomposition
        .as_ref()
        .and_then(|d| d.upstream_pair.as_ref().map(|p| (d, p)))
        .map(|(d, p)| eq3(&vg, registry, &models, &bundle.dist, d, p))
        .transpose()?;
    let monte_carlo_before = bundle
        .monte_carlo
        .as_ref()
        .map(|mc| {
            expected_downstream_risk(
                &bundle.dist,
                &vg,
                registry,
                &models,
                &mc.target,
                mc.sample_size,
                trials,
                seed,
            )
        })
        .transpose()?;

    let (new_vg, new_models, outcome) =
        apply_update(&vg, registry, &models, &bundle.update, strict_improvement)?;

    let mut exact_after = BTreeMap::new();
    for id in new_vg.order() {
        exact_after.insert(
            id.clone(),
            node_distribution_risk(&new_vg, &new_models, &bundle.dist, id)?,
        );
    }
    let decomposition_after = bundle
        .decomposition
        .as_ref()
        .map(|d| eq2(&new_vg, registry, &new_models, &bundle.dist, d))
        .transpose()?;
    let upstream_split_after = bundle
        .decomposition
        .as_ref()
        .and_then(|d| d.upstream_pair.as_ref().map(|p| (d, p)))
        .map(|(d, p)| eq3(&new_vg, registry, &new_models, &bundle.dist, d, p))
        .transpose()?;
    let monte_carlo_after = bundle
        .monte_carlo
        .as_ref()
        .map(|mc| {
            // Same seed as the baseline estimate: per-trial draws are paired,
            // so the mean gap is not inflated by sampling noise.
            expected_downstream_risk(
                &bundle.dist,
                &new_vg,
                registry,
                &new_models,
                &mc.target,
                mc.sample_size,
                trials,
                seed,
            )
        })
        .transpose()?;

    let mut report = ScenarioReport {
        scenario: bundle.id.clone(),
        description: bundle.description.clone(),
        seed,
        trials,
        strict_improvement,
        self_defeating: outcome.is_self_defeating(),
        outcome,
        exact_risk_before: exact_before,
        exact_risk_after: exact_after,
        decomposition_before,
        decomposition_after,
        upstream_split_before,
        upstream_split_after,
        monte_carlo_before,
        monte_carlo_after,
        effects: Vec::new(),
        all_effects_hold: true,
    };
    report.effects = evaluate_effects(bundle, &vg, &new_vg, &models, &new_models, &report)?;
    report.all_effects_hold = report.effects.iter().all(|e| e.passed);
    Ok(report)
}

fn eq2(
    vg: &ValidatedGraph,
    registry: &Registry,
    models: &ModelSet,
    dist: &GroundTruthDistribution,
    spec: &DecompositionSpec,
) -> Result<RiskDecomposition> {
    let node_spec = vg.node(&spec.downstream)?;
    let family = registry.family(&node_spec.family)?;
    let stages = upstream_stages(vg, models, &spec.downstream)?;
    decompose_with_upstreams(
        dist,
        &node_spec.input_slice,
        &stages,
        models.get(&spec.downstream)?,
        family,
        &spec.downstream,
        &node_spec.test_loss,
    )
}

fn eq3(
    vg: &ValidatedGraph,
    registry: &Registry,
    models: &ModelSet,
    dist: &GroundTruthDistribution,
    spec: &DecompositionSpec,
    pair: &UpstreamPairSpec,
) -> Result<UpstreamDecomposition> {
    let node_spec = vg.node(&spec.downstream)?;
    let fixed = UpstreamStage::new(
        vg.node(&pair.fixed)?.input_slice.clone(),
        models.get(&pair.fixed)?.clone(),
    );
    let actual = UpstreamStage::new(
        vg.node(&pair.actual)?.input_slice.clone(),
        models.get(&pair.actual)?.clone(),
    );
    decompose_upstream_pair(
        dist,
        &node_spec.input_slice,
        &fixed,
        &actual,
        registry.family(&pair.candidate_family)?,
        &pair.actual,
        &spec.downstream,
        &node_spec.test_loss,
    )
}

fn aux_loss(
    vg: &ValidatedGraph,
    registry: &Registry,
    models: &ModelSet,
    node: &NodeId,
    dataset: &str,
    loss: &LossFunction,
) -> Result<f64> {
    let ds = registry.dataset(dataset)?;
    Ok(empirical_risk(
        |x| forward_node(vg, models, node, x),
        RiskData::Dataset(ds),
        node,
        loss,
    )?
    .value())
}

fn evaluate_effects(
    bundle: &ScenarioBundle,
    vg: &ValidatedGraph,
    new_vg: &ValidatedGraph,
    models: &ModelSet,
    new_models: &ModelSet,
    report: &ScenarioReport,
) -> Result<Vec<EffectResult>> {
    let outcome = &report.outcome;
    let near = |a: f64, b: f64| (a - b).abs() <= LOSS_TOLERANCE;
    let mut results = Vec::new();
    for effect in &bundle.expected_effects {
        let result = match effect {
            ExpectedEffect::NodeLoss { node, before, after } => {
                let b = outcome.before[node].value();
                let a = outcome.after[node].value();
                let ok = before.is_none_or(|want| near(b, want))
                    && after.is_none_or(|want| near(a, want));
                EffectResult {
                    description: format!(
                        "test loss of '{node}' equals {} before and {} after",
                        opt(before),
                        opt(after)
                    ),
                    passed: ok,
                    observed: format!("before={b}, after={a}"),
                }
            }
            ExpectedEffect::TargetImproves { strict } => {
                let b = outcome.before[&outcome.target].value();
                let a = outcome.after[&outcome.target].value();
                let ok = if *strict {
                    a < b - LOSS_TOLERANCE
                } else {
                    a <= b + LOSS_TOLERANCE
                };
                EffectResult {
                    description: format!(
                        "update target's own test loss {}",
                        if *strict { "strictly decreases" } else { "does not increase" }
                    ),
                    passed: ok,
                    observed: format!("before={b}, after={a}"),
                }
            }
            ExpectedEffect::NodeLossIncreases { node } => {
                let b = outcome.before[node].value();
                let a = outcome.after[node].value();
                EffectResult {
                    description: format!("test loss of '{node}' strictly increases"),
                    passed: a > b + LOSS_TOLERANCE,
                    observed: format!("before={b}, after={a}"),
                }
            }
            ExpectedEffect::NodeLossDoesNotIncrease { node } => {
                let b = outcome.before[node].value();
                let a = outcome.after[node].value();
                EffectResult {
                    description: format!("test loss of '{node}' does not increase"),
                    passed: a <= b + LOSS_TOLERANCE,
                    observed: format!("before={b}, after={a}"),
                }
            }
            ExpectedEffect::SelfDefeating { expected } => EffectResult {
                description: format!("self-defeating verdict is {expected}"),
                passed: report.self_defeating == *expected,
                observed: format!("verdict={}", report.self_defeating),
            },
            ExpectedEffect::DecompositionAfter { upstream, approximation, estimation } => {
                let d = report.decomposition_after.as_ref().ok_or_else(|| {
                    Error::ConfigInvalid("effect needs a decomposition block".into())
                })?;
                let [a, b, c] = d.terms();
                EffectResult {
                    description: format!(
                        "post-update decomposition equals ({upstream}, {approximation}, {estimation})"
                    ),
                    passed: near(a, *upstream) && near(b, *approximation) && near(c, *estimation),
                    observed: format!("({a}, {b}, {c})"),
                }
            }
            ExpectedEffect::DominantTerm { term } => {
                let d = report.decomposition_after.as_ref().ok_or_else(|| {
                    Error::ConfigInvalid("effect needs a decomposition block".into())
                })?;
                let [up, ap, es] = d.terms();
                let (value, others) = match term {
                    DecompositionTerm::Upstream => (up, [ap, es]),
                    DecompositionTerm::Approximation => (ap, [up, es]),
                    DecompositionTerm::Estimation => (es, [up, ap]),
                };
                EffectResult {
                    description: format!("{term:?} error dominates the post-update decomposition"),
                    passed: others.iter().all(|o| value > o + LOSS_TOLERANCE),
                    observed: format!("terms=({up}, {ap}, {es})"),
                }
            }
            ExpectedEffect::CompatibilitySplit { before, after, excess_after } => {
                let sb = report.upstream_split_before.as_ref().ok_or_else(|| {
                    Error::ConfigInvalid("effect needs an upstream-pair block".into())
                })?;
                let sa = report.upstream_split_after.as_ref().ok_or_else(|| {
                    Error::ConfigInvalid("effect needs an upstream-pair block".into())
                })?;
                let cb = sb.compatibility_error.value();
                let ca = sa.compatibility_error.value();
                let ea = sa.excess_upstream_error.value();
                EffectResult {
                    description: format!(
                        "compatibility error moves {before} -> {after} with post-update excess {excess_after}"
                    ),
                    passed: near(cb, *before) && near(ca, *after) && near(ea, *excess_after),
                    observed: format!("before={cb}, after={ca}, excess_after={ea}"),
                }
            }
            ExpectedEffect::NodesAgree { a, b } => {
                let mut agree = true;
                for (example, _) in bundle.dist.support() {
                    let pa = forward_node(new_vg, new_models, a, &example.x)?;
                    let pb = forward_node(new_vg, new_models, b, &example.x)?;
                    if pa != pb {
                        agree = false;
                        break;
                    }
                }
                EffectResult {
                    description: format!(
                        "'{a}' and '{b}' predict identically on every support point after the update"
                    ),
                    passed: agree,
                    observed: format!("agree={agree}"),
                }
            }
            ExpectedEffect::AuxLossIncreases { node, dataset, loss, before, after } => {
                let b = aux_loss(vg, &bundle.registry, models, node, dataset, loss)?;
                let a = aux_loss(new_vg, &bundle.registry, new_models, node, dataset, loss)?;
                let ok = a > b + LOSS_TOLERANCE
                    && before.is_none_or(|want| near(b, want))
                    && after.is_none_or(|want| near(a, want));
                EffectResult {
                    description: format!(
                        "loss of '{node}' on dataset '{dataset}' strictly increases ({} -> {})",
                        opt(before),
                        opt(after)
                    ),
                    passed: ok,
                    observed: format!("before={b}, after={a}"),
                }
            }
            ExpectedEffect::McBaselineBelow { max_mean } => {
                let mc = report.monte_carlo_before.ok_or_else(|| {
                    Error::ConfigInvalid("effect needs a monte_carlo block".into())
                })?;
                EffectResult {
                    description: format!("baseline Monte-Carlo mean risk < {max_mean}"),
                    passed: mc.mean < *max_mean,
                    observed: format!("mean={}, se={}", mc.mean, mc.std_error),
                }
            }
            ExpectedEffect::McDegrades { min_gap, min_se_multiples } => {
                let before = report.monte_carlo_before.ok_or_else(|| {
                    Error::ConfigInvalid("effect needs a monte_carlo block".into())
                })?;
                let after = report.monte_carlo_after.ok_or_else(|| {
                    Error::ConfigInvalid("effect needs a monte_carlo block".into())
                })?;
                let gap = after.mean - before.mean;
                let pooled = after.pooled_se(&before);
                EffectResult {
                    description: format!(
                        "Monte-Carlo mean risk rises by >= {min_gap} and >= {min_se_multiples} pooled SE"
                    ),
                    passed: gap >= *min_gap && gap >= min_se_multiples * pooled,
                    observed: format!(
                        "gap={gap}, pooled_se={pooled}, before={}, after={}",
                        before.mean, after.mean
                    ),
                }
            }
        };
        results.push(result);
    }
    Ok(results)
}

fn opt(v: &Option<f64>) -> String {
    v.map_or_else(|| "(any)".to_string(), |x| x.to_string())
}

// ============================================================================
// Shared construction helpers
// ============================================================================

fn id(s: &str) -> NodeId {
    NodeId::new(s)
}

fn example(x: Vec<f64>, targets: Vec<(&str, Vec<f64>)>) -> Example {
    Example {
        x,
        targets: targets.into_iter().map(|(n, t)| (id(n), t)).collect(),
    }
}

fn erm(loss: LossFunction) -> TrainerSpec {
    TrainerSpec::Erm { training_loss: loss }
}

fn node(name: &str, slice: Vec<usize>, family: &str, trainer: TrainerSpec, loss: LossFunction) -> NodeSpec {
    NodeSpec {
        id: id(name),
        input_slice: slice,
        family: family.to_string(),
        trainer,
        train_set: "support-train".to_string(),
        test_set: "support-test".to_string(),
        test_loss: loss,
    }
}

#[allow(clippy::too_many_arguments)]
fn finish_bundle(
    bundle_id: &str,
    description: &str,
    graph: SystemGraph,
    registry: Registry,
    dist: GroundTruthDistribution,
    update: UpdateRequest,
    expected_effects: Vec<ExpectedEffect>,
    monte_carlo: Option<MonteCarloSpec>,
    decomposition: Option<DecompositionSpec>,
) -> ScenarioBundle {
    let vg = graph.validate().expect("bundle graph is statically valid");
    let baseline_models =
        crate::graph::train_system(&vg, &registry, 0).expect("bundle baseline trains");
    ScenarioBundle {
        id: bundle_id.to_string(),
        description: description.to_string(),
        graph,
        registry,
        dist,
        baseline_models,
        update,
        expected_effects,
        monte_carlo,
        decomposition,
    }
}

// ============================================================================
// S1 — approximation error
// ============================================================================

/// Four equal-mass points at (±1, ±1); the class is the sign of the
/// coordinate product.  The baseline position predictor collapses each class
/// to one corner (linearly separable for the downstream); the update
/// installs exact positions, whose XOR layout no linear classifier fits.
pub fn build_s1_approximation() -> ScenarioBundle {
    let corners = [
        vec![-1.0, -1.0],
        vec![-1.0, 1.0],
        vec![1.0, -1.0],
        vec![1.0, 1.0],
    ];
    let label = |x: &[f64]| if x[0] * x[1] > 0.0 { 1.0 } else { -1.0 };
    let examples: Vec<Example> = corners
        .iter()
        .map(|x| example(x.clone(), vec![("v", x.clone()), ("w", vec![label(x)])]))
        .collect();
    let dist = GroundTruthDistribution::new(
        examples.iter().map(|e| (e.clone(), 0.25)).collect(),
    )
    .expect("S1 distribution is valid");

    let mut families = BTreeMap::new();
    families.insert(
        "position-table".to_string(),
        HypothesisFamily::new(FamilyKind::PointTable {
            domain: corners.to_vec(),
            output_dim: 2,
            candidates: vec![],
        }),
    );
    families.insert(
        "linear-2d".to_string(),
        HypothesisFamily::new(FamilyKind::LinearClassifier2d {
            angles: 720,
            offset: GridRange::new(-3.0, 3.0, 121),
        }),
    );
    let mut datasets = BTreeMap::new();
    datasets.insert(
        "support-train".to_string(),
        Dataset::new(examples.clone(), DatasetRole::Train).expect("S1 train set"),
    );
    datasets.insert(
        "support-test".to_string(),
        Dataset::new(examples, DatasetRole::Test).expect("S1 test set"),
    );
    let registry = Registry { families, datasets };

    // Collapse greens to (1,1) and reds to (-1,-1), in domain order.
    let collapse = vec![1.0, 1.0, -1.0, -1.0, -1.0, -1.0, 1.0, 1.0];
    let exact: Vec<f64> = corners.iter().flatten().copied().collect();
    let graph = SystemGraph {
        nodes: vec![
            node(
                "v",
                vec![0, 1],
                "position-table",
                TrainerSpec::Fixed { params: collapse },
                LossFunction::EuclideanPointError,
            ),
            node("w", vec![], "linear-2d", erm(LossFunction::ZeroOne), LossFunction::ZeroOne),
        ],
        edges: vec![(id("v"), id("w"))],
    };
    let update = UpdateRequest {
        target: id("v"),
        replacement: Replacement::Model { params: exact, family: None },
        retrain_seed: 0,
    };
    let collapsed_loss = (2.0 * 2.0_f64.sqrt() + 4.0) / 4.0;
    let effects = vec![
        ExpectedEffect::NodeLoss { node: id("v"), before: Some(collapsed_loss), after: Some(0.0) },
        ExpectedEffect::TargetImproves { strict: true },
        ExpectedEffect::NodeLoss { node: id("w"), before: Some(0.0), after: Some(0.25) },
        ExpectedEffect::SelfDefeating { expected: true },
        ExpectedEffect::DecompositionAfter { upstream: 0.0, approximation: 0.25, estimation: 0.0 },
        ExpectedEffect::DominantTerm { term: DecompositionTerm::Approximation },
    ];
    finish_bundle(
        "S1-approximation",
        "exact upstream positions turn a separable layout into XOR, which the linear downstream family cannot fit",
        graph,
        registry,
        dist,
        update,
        effects,
        None,
        Some(DecompositionSpec { downstream: id("w"), upstream_pair: None }),
    )
}

// ============================================================================
// S2 — estimation error
// ============================================================================

/// Support indices (into the 16-point ring layout) of the frozen six-example
/// training draw used for the downstream's fixed train set.  Chosen so the
/// baseline representation trains a perfect classifier while the updated one
/// does not; the Monte-Carlo block then shows the same gap in expectation.
const S2_PINNED_TRAIN: [usize; 6] = [2, 3, 6, 8, 11, 12];

fn ring_point(radius: f64, angle: f64) -> Vec<f64> {
    vec![radius * angle.cos(), radius * angle.sin()]
}

/// Eight green points on a radius-1.0 ring and eight red points on a
/// radius-1.6 ring (offset 22.5°), equal masses.  The baseline position
/// predictor collapses greens to a single point near the origin (radius 0.2)
/// and reds to a single far point (radius 3.0) — a margin so wide that six
/// training examples always suffice.  The exact positions restore the narrow
/// 1.0/1.6 ring margin, and six examples stop sufficing for the quadratic
/// downstream.
pub fn build_s2_estimation() -> ScenarioBundle {
    let quarter = std::f64::consts::FRAC_PI_4;
    let mut positions = Vec::new();
    let mut collapsed = Vec::new();
    let mut labels = Vec::new();
    for k in 0..8 {
        let angle = k as f64 * quarter;
        positions.push(ring_point(1.0, angle));
        collapsed.push(ring_point(0.2, 0.0));
        labels.push(1.0);
    }
    for k in 0..8 {
        let angle = (k as f64 + 0.5) * quarter;
        positions.push(ring_point(1.6, angle));
        collapsed.push(ring_point(3.0, 0.0));
        labels.push(-1.0);
    }
    let examples: Vec<Example> = positions
        .iter()
        .zip(&labels)
        .map(|(x, label)| example(x.clone(), vec![("v", x.clone()), ("w", vec![*label])]))
        .collect();
    let dist = GroundTruthDistribution::new(
        examples.iter().map(|e| (e.clone(), 1.0 / 16.0)).collect(),
    )
    .expect("S2 distribution is valid");

    let mut families = BTreeMap::new();
    families.insert(
        "position-table".to_string(),
        HypothesisFamily::new(FamilyKind::PointTable {
            domain: positions.clone(),
            output_dim: 2,
            candidates: vec![],
        }),
    );
    families.insert(
        "quadratic-2d".to_string(),
        HypothesisFamily::new(FamilyKind::QuadraticClassifier2d {
            coefficient: GridRange::new(-1.0, 1.0, 5),
        }),
    );
    let mut datasets = BTreeMap::new();
    datasets.insert(
        "support-train".to_string(),
        Dataset::new(examples.clone(), DatasetRole::Train).expect("S2 train set"),
    );
    datasets.insert(
        "support-test".to_string(),
        Dataset::new(examples.clone(), DatasetRole::Test).expect("S2 test set"),
    );
    datasets.insert(
        "pinned-train".to_string(),
        Dataset::new(
            S2_PINNED_TRAIN.iter().map(|&i| examples[i].clone()).collect(),
            DatasetRole::Train,
        )
        .expect("S2 pinned train set"),
    );
    let registry = Registry { families, datasets };

    let graph = SystemGraph {
        nodes: vec![
            node(
                "v",
                vec![0, 1],
                "position-table",
                TrainerSpec::Fixed { params: collapsed.iter().flatten().copied().collect() },
                LossFunction::EuclideanPointError,
            ),
            {
                let mut w = node(
                    "w",
                    vec![],
                    "quadratic-2d",
                    erm(LossFunction::ZeroOne),
                    LossFunction::ZeroOne,
                );
                w.train_set = "pinned-train".to_string();
                w
            },
        ],
        edges: vec![(id("v"), id("w"))],
    };
    let update = UpdateRequest {
        target: id("v"),
        replacement: Replacement::Model {
            params: positions.iter().flatten().copied().collect(),
            family: None,
        },
        retrain_seed: 0,
    };
    let effects = vec![
        ExpectedEffect::NodeLoss { node: id("v"), before: None, after: Some(0.0) },
        ExpectedEffect::TargetImproves { strict: true },
        ExpectedEffect::SelfDefeating { expected: true },
        ExpectedEffect::DominantTerm { term: DecompositionTerm::Estimation },
        ExpectedEffect::McBaselineBelow { max_mean: 0.05 },
        ExpectedEffect::McDegrades { min_gap: 0.05, min_se_multiples: 2.0 },
    ];
    finish_bundle(
        "S2-estimation",
        "exact upstream positions shrink the class margin, so six training examples stop sufficing for the quadratic downstream",
        graph,
        registry,
        dist,
        update,
        effects,
        Some(MonteCarloSpec { target: id("w"), sample_size: 6 }),
        Some(DecompositionSpec { downstream: id("w"), upstream_pair: None }),
    )
}

// ============================================================================
// S3 — anti-correlated upstream errors
// ============================================================================

/// Four points whose two upstream classifiers make errors that cancel in the
/// downstream signature; fixing one upstream un-cancels them.
pub fn build_s3_anticorrelated() -> ScenarioBundle {
    // masses chosen so the post-update collision {p1, p2} costs exactly
    // 0.125 and u's baseline error (p2) costs exactly 0.25
    let masses = [0.125, 0.25, 0.25, 0.375];
    let y_u = [1.0, 1.0, -1.0, -1.0];
    let y_v = [1.0, 1.0, -1.0, -1.0];
    let y_w = [1.0, -1.0, 1.0, -1.0];
    let u_baseline = [1.0, -1.0, -1.0, -1.0]; // errs p2
    let v_predictions = [1.0, 1.0, -1.0, 1.0]; // errs p4

    let examples: Vec<Example> = (0..4)
        .map(|i| {
            example(
                vec![i as f64],
                vec![("u", vec![y_u[i]]), ("v", vec![y_v[i]]), ("w", vec![y_w[i]])],
            )
        })
        .collect();
    let dist = GroundTruthDistribution::new(
        examples.iter().cloned().zip(masses).collect(),
    )
    .expect("S3 distribution is valid");

    let mut families = BTreeMap::new();
    families.insert(
        "x-table".to_string(),
        HypothesisFamily::new(FamilyKind::TableClassifier {
            domain: (0..4).map(|i| vec![i as f64]).collect(),
        }),
    );
    families.insert(
        "pair-table".to_string(),
        HypothesisFamily::new(FamilyKind::TableClassifier {
            domain: vec![
                vec![-1.0, -1.0],
                vec![-1.0, 1.0],
                vec![1.0, -1.0],
                vec![1.0, 1.0],
            ],
        }),
    );
    // Expand masses at scale 8: multiplicities (1, 2, 2, 3).
    let mut items = Vec::new();
    for (e, m) in dist.support() {
        for _ in 0..(m * 8.0).round() as usize {
            items.push(e.clone());
        }
    }
    let mut datasets = BTreeMap::new();
    datasets.insert(
        "support-train".to_string(),
        Dataset::new(items.clone(), DatasetRole::Train).expect("S3 train set"),
    );
    datasets.insert(
        "support-test".to_string(),
        Dataset::new(items, DatasetRole::Test).expect("S3 test set"),
    );
    let registry = Registry { families, datasets };

    let graph = SystemGraph {
        nodes: vec![
            node(
                "u",
                vec![0],
                "x-table",
                TrainerSpec::Fixed { params: u_baseline.to_vec() },
                LossFunction::ZeroOne,
            ),
            node(
                "v",
                vec![0],
                "x-table",
                TrainerSpec::Fixed { params: v_predictions.to_vec() },
                LossFunction::ZeroOne,
            ),
            node("w", vec![], "pair-table", erm(LossFunction::ZeroOne), LossFunction::ZeroOne),
        ],
        edges: vec![(id("u"), id("w")), (id("v"), id("w"))],
    };
    let update = UpdateRequest {
        target: id("u"),
        replacement: Replacement::Model { params: y_u.to_vec(), family: None },
        retrain_seed: 0,
    };
    let effects = vec![
        ExpectedEffect::NodeLoss { node: id("u"), before: Some(0.25), after: Some(0.0) },
        ExpectedEffect::TargetImproves { strict: true },
        ExpectedEffect::NodeLoss { node: id("w"), before: Some(0.0), after: Some(0.125) },
        ExpectedEffect::SelfDefeating { expected: true },
        ExpectedEffect::CompatibilitySplit { before: 0.0, after: 0.125, excess_after: 0.0 },
        ExpectedEffect::DominantTerm { term: DecompositionTerm::Upstream },
    ];
    finish_bundle(
        "S3-anticorrelated",
        "two upstream classifiers err on different points in a way the downstream signature cancels; correcting one upstream breaks the cancellation",
        graph,
        registry,
        dist,
        update,
        effects,
        None,
        Some(DecompositionSpec {
            downstream: id("w"),
            upstream_pair: Some(UpstreamPairSpec {
                fixed: id("u"),
                actual: id("v"),
                candidate_family: "x-table".to_string(),
            }),
        }),
    )
}

// ============================================================================
// S4 — correlated upstream predictions
// ============================================================================

/// The update replaces u with a copy of its sibling's prediction function:
/// better at u's own task, but the signature loses a dimension.
pub fn build_s4_correlated() -> ScenarioBundle {
    let masses = [0.30, 0.20, 0.25, 0.25];
    let y_u = [1.0, 1.0, -1.0, -1.0];
    let y_v = [1.0, 1.0, -1.0, 1.0];
    let y_w = [1.0, -1.0, 1.0, 1.0];
    let u_baseline = [-1.0, 1.0, -1.0, -1.0]; // errs p1 (mass 0.30)
    let v_predictions = y_v; // v is exact at its own task

    let examples: Vec<Example> = (0..4)
        .map(|i| {
            example(
                vec![i as f64],
                vec![("u", vec![y_u[i]]), ("v", vec![y_v[i]]), ("w", vec![y_w[i]])],
            )
        })
        .collect();
    let dist = GroundTruthDistribution::new(
        examples.iter().cloned().zip(masses).collect(),
    )
    .expect("S4 distribution is valid");

    let mut families = BTreeMap::new();
    families.insert(
        "x-table".to_string(),
        HypothesisFamily::new(FamilyKind::TableClassifier {
            domain: (0..4).map(|i| vec![i as f64]).collect(),
        }),
    );
    families.insert(
        "pair-table".to_string(),
        HypothesisFamily::new(FamilyKind::TableClassifier {
            domain: vec![
                vec![-1.0, -1.0],
                vec![-1.0, 1.0],
                vec![1.0, -1.0],
                vec![1.0, 1.0],
            ],
        }),
    );
    // Expand masses at scale 20: multiplicities (6, 4, 5, 5).
    let mut items = Vec::new();
    for (e, m) in dist.support() {
        for _ in 0..(m * 20.0).round() as usize {
            items.push(e.clone());
        }
    }
    let mut datasets = BTreeMap::new();
    datasets.insert(
        "support-train".to_string(),
        Dataset::new(items.clone(), DatasetRole::Train).expect("S4 train set"),
    );
    datasets.insert(
        "support-test".to_string(),
        Dataset::new(items, DatasetRole::Test).expect("S4 test set"),
    );
    let registry = Registry { families, datasets };

    let graph = SystemGraph {
        nodes: vec![
            node(
                "u",
                vec![0],
                "x-table",
                TrainerSpec::Fixed { params: u_baseline.to_vec() },
                LossFunction::ZeroOne,
            ),
            node(
                "v",
                vec![0],
                "x-table",
                TrainerSpec::Fixed { params: v_predictions.to_vec() },
                LossFunction::ZeroOne,
            ),
            node("w", vec![], "pair-table", erm(LossFunction::ZeroOne), LossFunction::ZeroOne),
        ],
        edges: vec![(id("u"), id("w")), (id("v"), id("w"))],
    };
    let update = UpdateRequest {
        target: id("u"),
        replacement: Replacement::Model { params: v_predictions.to_vec(), family: None },
        retrain_seed: 0,
    };
    let effects = vec![
        ExpectedEffect::NodeLoss { node: id("u"), before: Some(0.30), after: Some(0.25) },
        ExpectedEffect::TargetImproves { strict: true },
        ExpectedEffect::NodeLoss { node: id("w"), before: Some(0.0), after: Some(0.20) },
        ExpectedEffect::SelfDefeating { expected: true },
        ExpectedEffect::NodesAgree { a: id("u"), b: id("v") },
        ExpectedEffect::CompatibilitySplit { before: 0.0, after: 0.20, excess_after: 0.0 },
        ExpectedEffect::DominantTerm { term: DecompositionTerm::Upstream },
    ];
    finish_bundle(
        "S4-correlated",
        "replacing u with a copy of its sibling improves u's own loss but collapses the downstream signature to one dimension",
        graph,
        registry,
        dist,
        update,
        effects,
        None,
        Some(DecompositionSpec {
            downstream: id("w"),
            upstream_pair: Some(UpstreamPairSpec {
                fixed: id("u"),
                actual: id("v"),
                candidate_family: "x-table".to_string(),
            }),
        }),
    )
}

// ============================================================================
// S5 — loss mismatch
// ============================================================================

/// Disparity prediction with near/far ranges: re-aligning the upstream
/// trainer with its own (unweighted) test metric sacrifices far-range
/// accuracy, which is all the downstream far-object detector depends on.
///
/// The baseline trainer weights disparity errors by 400/y² — the first-order
/// sensitivity of depth 400/y to disparity y — so it is a faithful stand-in
/// for depth-MAE training while staying inside the weighted-MAE loss kind.
/// With `filter_train_range`, the detector trains only on far-range items
/// (the range its fixed test set covers) and the degradation disappears.
pub fn build_s5_loss_mismatch(filter_train_range: bool) -> ScenarioBundle {
    // x = (range attribute, within-range index); disparity = 400 / depth.
    let points = [
        (vec![10.0, 0.0], 40.0, -1.0), // N1: near, no far object
        (vec![10.0, 1.0], 40.0, -1.0), // N2
        (vec![40.0, 0.0], 10.0, 1.0),  // F1: far object present
        (vec![40.0, 1.0], 10.0, 1.0),  // F2
    ];
    let examples: Vec<Example> = points
        .iter()
        .map(|(x, disp, present)| {
            example(x.clone(), vec![("u", vec![*disp]), ("w", vec![*present])])
        })
        .collect();
    let dist = GroundTruthDistribution::new(
        examples.iter().map(|e| (e.clone(), 0.25)).collect(),
    )
    .expect("S5 distribution is valid");

    let mut families = BTreeMap::new();
    families.insert(
        "disparity-interp".to_string(),
        HypothesisFamily::new(FamilyKind::InterpolatedPredictor {
            domain: points.iter().map(|(x, _, _)| x.clone()).collect(),
            // Base A is exact on far points, base B on near points; B's F2
            // output collides with the near predictions.
            base_a: vec![vec![56.0], vec![58.0], vec![10.0], vec![10.0]],
            base_b: vec![vec![40.0], vec![40.0], vec![12.0], vec![40.0]],
            steps: 101,
        }),
    );
    families.insert(
        "far-threshold".to_string(),
        HypothesisFamily::new(FamilyKind::ThresholdDetector1d {
            tau: GridRange::new(0.0, 60.0, 121),
        }),
    );
    let far_items: Vec<Example> = examples[2..].to_vec();
    let mut datasets = BTreeMap::new();
    datasets.insert(
        "support-train".to_string(),
        Dataset::new(examples.clone(), DatasetRole::Train).expect("S5 train set"),
    );
    datasets.insert(
        "support-test".to_string(),
        Dataset::new(examples, DatasetRole::Test).expect("S5 test set"),
    );
    datasets.insert(
        "far-train".to_string(),
        Dataset::new(far_items.clone(), DatasetRole::Train).expect("S5 far train set"),
    );
    datasets.insert(
        "far-test".to_string(),
        Dataset::new(far_items, DatasetRole::Test).expect("S5 far test set"),
    );
    let registry = Registry { families, datasets };

    // Depth-sensitivity weights: 400/y² is 4 at y=10 and 0.25 at y=40.
    let depth_weighted = LossFunction::WeightedMeanAbsoluteError {
        weights: vec![(10.0, 16.0), (40.0, 1.0)],
    };
    let graph = SystemGraph {
        nodes: vec![
            node(
                "u",
                vec![0, 1],
                "disparity-interp",
                erm(depth_weighted),
                LossFunction::MeanAbsoluteError,
            ),
            {
                let mut w = node(
                    "w",
                    vec![],
                    "far-threshold",
                    erm(LossFunction::ZeroOne),
                    LossFunction::ZeroOne,
                );
                if filter_train_range {
                    w.train_set = "far-train".to_string();
                }
                w.test_set = "far-test".to_string();
                w
            },
        ],
        edges: vec![(id("u"), id("w"))],
    };
    let update = UpdateRequest {
        target: id("u"),
        replacement: Replacement::Trainer { trainer: erm(LossFunction::MeanAbsoluteError) },
        retrain_seed: 0,
    };
    let mut effects = vec![
        ExpectedEffect::NodeLoss { node: id("u"), before: Some(8.5), after: Some(8.0) },
        ExpectedEffect::TargetImproves { strict: false },
        ExpectedEffect::AuxLossIncreases {
            node: id("u"),
            dataset: "far-test".to_string(),
            loss: LossFunction::MeanAbsoluteError,
            before: Some(0.0),
            after: Some(16.0),
        },
    ];
    if filter_train_range {
        effects.extend([
            ExpectedEffect::NodeLossDoesNotIncrease { node: id("w") },
            ExpectedEffect::SelfDefeating { expected: false },
        ]);
    } else {
        effects.extend([
            ExpectedEffect::NodeLoss { node: id("w"), before: Some(0.0), after: Some(0.5) },
            ExpectedEffect::NodeLossIncreases { node: id("w") },
            ExpectedEffect::SelfDefeating { expected: true },
            ExpectedEffect::DecompositionAfter {
                upstream: 0.25,
                approximation: 0.0,
                estimation: 0.0,
            },
            ExpectedEffect::DominantTerm { term: DecompositionTerm::Upstream },
        ]);
    }
    finish_bundle(
        "S5-loss-mismatch",
        "retraining the disparity model on its own unweighted metric sacrifices far-range accuracy, which is all the far-object detector sees",
        graph,
        registry,
        dist,
        update,
        effects,
        Some(MonteCarloSpec { target: id("w"), sample_size: 6 }),
        Some(DecompositionSpec { downstream: id("w"), upstream_pair: None }),
    )
}

// ============================================================================
// Control bundle and catalog
// ============================================================================

/// Negative control: the update targets the leaf itself, so nothing is
/// retrained and no self-defeating verdict is possible.
pub fn build_leaf_update_control() -> ScenarioBundle {
    let mut bundle = build_s1_approximation();
    let leaf = id("w");
    let params = bundle
        .baseline_models
        .get(&leaf)
        .expect("control baseline has the leaf")
        .params
        .clone();
    bundle.id = "control-leaf-update".to_string();
    bundle.description =
        "negative control: updating the leaf retrains nothing and cannot be self-defeating"
            .to_string();
    bundle.update = UpdateRequest {
        target: leaf.clone(),
        replacement: Replacement::Model { params, family: None },
        retrain_seed: 0,
    };
    bundle.expected_effects = vec![
        ExpectedEffect::TargetImproves { strict: false },
        ExpectedEffect::SelfDefeating { expected: false },
    ];
    bundle.monte_carlo = None;
    bundle.decomposition = None;
    bundle
}

/// The five shipped scenario bundles in catalog order.
pub fn bundles() -> Vec<ScenarioBundle> {
    vec![
        build_s1_approximation(),
        build_s2_estimation(),
        build_s3_anticorrelated(),
        build_s4_correlated(),
        build_s5_loss_mismatch(false),
    ]
}

/// Look up a shipped bundle by id; `filter_train_range` only affects S5.
pub fn bundle_by_id(bundle_id: &str, filter_train_range: bool) -> Option<ScenarioBundle> {
    match bundle_id {
        "S1-approximation" => Some(build_s1_approximation()),
        "S2-estimation" => Some(build_s2_estimation()),
        "S3-anticorrelated" => Some(build_s3_anticorrelated()),
        "S4-correlated" => Some(build_s4_correlated()),
        "S5-loss-mismatch" => Some(build_s5_loss_mismatch(filter_train_range)),
        _ => None,
    }
}

// ============================================================================
// Tests
// ============================================================================
