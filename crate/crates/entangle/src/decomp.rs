//! Risk decompositions, the model-update protocol, and Monte-Carlo
//! estimation of expected downstream risk under finite training draws.
//!
//! The central identity splits a downstream model's excess risk over the
//! Bayes optimum into three telescoping, individually nonnegative terms:
//!
//! ```text
//! trained - bayes = (conditioned - bayes)          upstream error
//!                 + (restricted - conditioned)     approximation error
//!                 + (trained - restricted)         estimation error
//! ```
//!
//! and, with two upstream models (u fixed, v variable), further splits the
//! upstream error into a compatibility term (v versus the best companion
//! v given u) and an excess term (the best companion's residual over Bayes).

use std::collections::{BTreeMap, BTreeSet};

use rand::distributions::{Distribution as RandDistribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    assemble_input, forward, node_test_loss, train_node, ModelSet, NodeId, Registry,
    ValidatedGraph,
};
use crate::model::{
    argmin_with_tie_break, HypothesisFamily, LossFunction, RiskValue, TrainedModel, TrainerSpec,
};
use crate::oracle::{
    bayes_optimal, conditioned_optimal, optimal_companion_upstream, restricted_optimal, signature,
    GroundTruthDistribution, UpstreamStage,
};

/// Absolute tolerance for test-loss comparisons in update verdicts.
pub const LOSS_TOLERANCE: f64 = 1e-9;
/// Absolute tolerance for exact-risk identities on finite support.
pub const IDENTITY_TOLERANCE: f64 = 1e-12;

// ============================================================================
// Excess-risk decomposition
// ============================================================================

/// The three-way split of a downstream model's excess risk, together with
/// the four absolute risk levels it telescopes between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskDecomposition {
    pub bayes_risk: RiskValue,
    pub conditioned_risk: RiskValue,
    pub restricted_risk: RiskValue,
    pub trained_risk: RiskValue,
    pub total_excess: RiskValue,
    pub upstream_error: RiskValue,
    pub approximation_error: RiskValue,
    pub estimation_error: RiskValue,
}

impl RiskDecomposition {
    fn from_levels(bayes: f64, conditioned: f64, restricted: f64, trained: f64) -> Result<Self> {
        let upstream = conditioned - bayes;
        let approximation = restricted - conditioned;
        let estimation = trained - restricted;
        let total = trained - bayes;
        let residual = (upstream + approximation + estimation - total).abs();
        if residual > IDENTITY_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "decomposition terms fail to telescope (residual {residual:e})"
            )));
        }
        Ok(RiskDecomposition {
            bayes_risk: RiskValue::new(bayes)?,
            conditioned_risk: RiskValue::new(conditioned)?,
            restricted_risk: RiskValue::new(restricted)?,
            trained_risk: RiskValue::new(trained)?,
            total_excess: RiskValue::new(total)?,
            upstream_error: RiskValue::new(upstream)?,
            approximation_error: RiskValue::new(approximation)?,
            estimation_error: RiskValue::new(estimation)?,
        })
    }

    pub fn terms(&self) -> [f64; 3] {
        [
            self.upstream_error.value(),
            self.approximation_error.value(),
            self.estimation_error.value(),
        ]
    }
}

/// Decompose the excess risk of `downstream` given arbitrary fixed upstream
/// stages.  `own_slice` is the downstream's raw-input slice; its effective
/// input is that slice followed by the stage outputs.
pub fn decompose_with_upstreams(
    dist: &GroundTruthDistribution,
    own_slice: &[usize],
    stages: &[UpstreamStage],
    downstream: &TrainedModel,
    family: &HypothesisFamily,
    task: &NodeId,
    loss: &LossFunction,
) -> Result<RiskDecomposition> {
    family.check_params(&downstream.params)?;
    let bayes = bayes_optimal(dist, task, loss)?;
    let conditioned = conditioned_optimal(dist, own_slice, stages, task, loss)?;
    let (_, restricted) = restricted_optimal(dist, own_slice, stages, family, task, loss)?;
    let mut trained = 0.0;
    for (example, mass) in dist.support() {
        let sig = signature(own_slice, stages, &example.x)?;
        let target = example
            .targets
            .get(task)
            .ok_or_else(|| Error::MissingTargets(task.clone()))?;
        trained += mass * loss.eval(&downstream.predict(&sig)?, target)?;
    }
    RiskDecomposition::from_levels(
        bayes.risk.value(),
        conditioned.risk.value(),
        restricted.value(),
        trained,
    )
}

/// Decompose a plain two-model chain: `upstream` reads the full raw input
/// and `downstream` reads exactly the upstream output.
pub fn decompose_two_model(
    dist: &GroundTruthDistribution,
    upstream: &TrainedModel,
    downstream: &TrainedModel,
    family: &HypothesisFamily,
    loss: &LossFunction,
) -> Result<RiskDecomposition> {
    let dim = dist.support()[0].0.x.len();
    let stage = UpstreamStage::new((0..dim).collect(), upstream.clone());
    let task = downstream.node.clone();
    decompose_with_upstreams(dist, &[], &[stage], downstream, family, &task, loss)
}

// ============================================================================
// Upstream-error decomposition
// ============================================================================

/// The two-way split of upstream error in a two-upstream system: how much of
/// it comes from `v` not being the best companion for the fixed `u`, versus
/// how much even the best companion cannot recover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpstreamDecomposition {
    pub bayes_risk: RiskValue,
    /// Conditioned-optimal downstream risk with the actual pair (u, v).
    pub actual_conditioned_risk: RiskValue,
    /// Conditioned-optimal downstream risk with the best companion (u, v†).
    pub companion_conditioned_risk: RiskValue,
    pub compatibility_error: RiskValue,
    pub excess_upstream_error: RiskValue,
    /// Parameters of the best companion found by the candidate scan.
    pub companion_params: Vec<f64>,
}

/// General form: decompose the upstream error of the (fixed, actual) stage
/// pair by scanning `candidate_family` for the best stand-in for `actual`.
/// The compatibility term is nonnegative whenever the actual model lies in
/// the candidate family.
#[allow(clippy::too_many_arguments)]
pub fn decompose_upstream_pair(
    dist: &GroundTruthDistribution,
    own_slice: &[usize],
    fixed: &UpstreamStage,
    actual: &UpstreamStage,
    candidate_family: &HypothesisFamily,
    candidate_node: &NodeId,
    task: &NodeId,
    loss: &LossFunction,
) -> Result<UpstreamDecomposition> {
    let bayes = bayes_optimal(dist, task, loss)?;
    let stages = vec![fixed.clone(), actual.clone()];
    let with_actual = conditioned_optimal(dist, own_slice, &stages, task, loss)?;
    let (companion, with_companion) = optimal_companion_upstream(
        dist,
        own_slice,
        fixed,
        candidate_family,
        &actual.slice,
        candidate_node,
        task,
        loss,
    )?;
    let compatibility = with_actual.risk.value() - with_companion.value();
    let excess = with_companion.value() - bayes.risk.value();
    Ok(UpstreamDecomposition {
        bayes_risk: bayes.risk,
        actual_conditioned_risk: with_actual.risk,
        companion_conditioned_risk: with_companion,
        compatibility_error: RiskValue::new(compatibility)?,
        excess_upstream_error: RiskValue::new(excess)?,
        companion_params: companion.params,
    })
}

/// Two-upstream convenience form: `u` and `v` both read the full raw input
/// and the downstream reads the concatenated pair (u(x), v(x)).
pub fn decompose_two_upstream(
    dist: &GroundTruthDistribution,
    u: &TrainedModel,
    v: &TrainedModel,
    candidate_family: &HypothesisFamily,
    task: &NodeId,
    loss: &LossFunction,
) -> Result<UpstreamDecomposition> {
    let dim = dist.support()[0].0.x.len();
    let full: Vec<usize> = (0..dim).collect();
    let fixed = UpstreamStage::new(full.clone(), u.clone());
    let actual = UpstreamStage::new(full, v.clone());
    let candidate_node = v.node.clone();
    decompose_upstream_pair(
        dist,
        &[],
        &fixed,
        &actual,
        candidate_family,
        &candidate_node,
        task,
        loss,
    )
}

/// Build oracle stages for `node` from its trained parents, in declaration
/// order.  Only depth-one parents (models reading the raw input directly)
/// can serve as oracle stages.
pub fn upstream_stages(
    vg: &ValidatedGraph,
    models: &ModelSet,
    node: &NodeId,
) -> Result<Vec<UpstreamStage>> {
    let mut stages = Vec::new();
    for parent in vg.parents(node) {
        if !vg.parents(parent).is_empty() {
            return Err(Error::ConfigInvalid(format!(
                "oracle decomposition needs upstream model '{parent}' to read the raw input directly"
            )));
        }
        let spec = vg.node(parent)?;
        stages.push(UpstreamStage::new(
            spec.input_slice.clone(),
            models.get(parent)?.clone(),
        ));
    }
    Ok(stages)
}

// ============================================================================
// Update protocol
// ============================================================================

/// What to install at the target node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Replacement {
    /// Install fixed parameters (optionally under a different registered
    /// family); the node's trainer becomes `Fixed` with these parameters.
    Model {
        params: Vec<f64>,
        #[serde(default)]
        family: Option<String>,
    },
    /// Swap the node's trainer and retrain it.
    Trainer { trainer: TrainerSpec },
    /// Swap the node's hypothesis family and retrain it.
    Family { family: String },
    /// Swap the node's training set and retrain it.
    TrainSet { train_set: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateRequest {
    pub target: NodeId,
    pub replacement: Replacement,
    /// Reserved for stochastic trainers; the built-in grid ERM trainers are
    /// deterministic and ignore it.
    #[serde(default)]
    pub retrain_seed: u64,
}

/// Everything observable about one update: fixed-test-set losses before and
/// after, which nodes were retrained, and the self-defeating verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub target: NodeId,
    pub before: BTreeMap<NodeId, RiskValue>,
    pub after: BTreeMap<NodeId, RiskValue>,
    /// Retrained nodes: exactly the descendants of the target, topologically
    /// ordered.
    pub retrained: Vec<NodeId>,
    /// Retrained nodes whose fixed test loss strictly increased while the
    /// target's did not increase.  Empty when `improvement_held` is false.
    pub self_defeating_nodes: BTreeSet<NodeId>,
    pub improvement_held: bool,
    /// Whether the improvement verdict demanded a strict decrease.
    pub strict_improvement: bool,
}

impl UpdateOutcome {
    pub fn is_self_defeating(&self) -> bool {
        self.improvement_held && !self.self_defeating_nodes.is_empty()
    }
}

/// Install a replacement at the target node, retrain all and only its
/// descendants in topological order on regenerated upstream outputs, and
/// compare every node's fixed test loss before and after.
///
/// Ties at the target count as improvement (matching the non-strict
/// definition); pass `strict_improvement` to demand a strict decrease.
/// Downstream degradation is a strict increase beyond [`LOSS_TOLERANCE`].
pub fn apply_update(
    vg: &ValidatedGraph,
    registry: &Registry,
    models: &ModelSet,
    req: &UpdateRequest,
    strict_improvement: bool,
) -> Result<(ValidatedGraph, ModelSet, UpdateOutcome)> {
    let mut spec = vg.node(&req.target)?.clone();

    let mut before = BTreeMap::new();
    for id in vg.order() {
        before.insert(id.clone(), node_test_loss(vg, registry, models, id)?);
    }

    let version = models.version + 1;
    let mut installed: Option<TrainedModel> = None;
    match &req.replacement {
        Replacement::Model { params, family } => {
            if let Some(name) = family {
                registry.family(name)?;
                spec.family = name.clone();
            }
            let fam = registry.family(&spec.family)?;
            let model = TrainedModel::new(req.target.clone(), fam.clone(), params.clone(), version)
                .map_err(|e| Error::IncompatibleReplacement {
                    node: req.target.clone(),
                    reason: e.to_string(),
                })?;
            spec.trainer = TrainerSpec::Fixed { params: params.clone() };
            installed = Some(model);
        }
        Replacement::Trainer { trainer } => {
            spec.trainer = trainer.clone();
        }
        Replacement::Family { family } => {
            registry.family(family)?;
            spec.family = family.clone();
        }
        Replacement::TrainSet { train_set } => {
            registry.dataset(train_set)?;
            spec.train_set = train_set.clone();
        }
    }

    let new_vg = vg.with_node_replaced(spec)?;
    let mut new_models = models.clone();
    new_models.version = version;

    let target_model = match installed {
        Some(model) => model,
        None => train_node(&new_vg, registry, &new_models, &req.target, version).map_err(|e| {
            match e {
                Error::IncompatibleFamily(_) | Error::ArityMismatch { .. } => {
                    Error::IncompatibleReplacement {
                        node: req.target.clone(),
                        reason: e.to_string(),
                    }
                }
                other => other,
            }
        })?,
    };
    new_models.models.insert(req.target.clone(), target_model);

    let retrained = new_vg.descendants(&req.target);
    for id in &retrained {
        let model = train_node(&new_vg, registry, &new_models, id, version)?;
        new_models.models.insert(id.clone(), model);
    }

    let mut after = BTreeMap::new();
    for id in new_vg.order() {
        after.insert(id.clone(), node_test_loss(&new_vg, registry, &new_models, id)?);
    }

    let target_before = before[&req.target].value();
    let target_after = after[&req.target].value();
    let improvement_held = if strict_improvement {
        target_after < target_before - LOSS_TOLERANCE
    } else {
        target_after <= target_before + LOSS_TOLERANCE
    };
    let self_defeating_nodes: BTreeSet<NodeId> = if improvement_held {
        retrained
            .iter()
            .filter(|id| after[*id].value() > before[*id].value() + LOSS_TOLERANCE)
            .cloned()
            .collect()
    } else {
        BTreeSet::new()
    };

    let outcome = UpdateOutcome {
        target: req.target.clone(),
        before,
        after,
        retrained,
        self_defeating_nodes,
        improvement_held,
        strict_improvement,
    };
    Ok((new_vg, new_models, outcome))
}

// ============================================================================
// Monte-Carlo expected downstream risk
// ============================================================================

/// Summary of a Monte-Carlo estimate of expected exact risk after training
/// on finite draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McStats {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
    pub sample_size: usize,
    /// Trials whose draw contained a single distinct target.
    pub degenerate_trials: usize,
}

impl McStats {
    pub fn pooled_se(&self, other: &McStats) -> f64 {
        (self.std_error.powi(2) + other.std_error.powi(2)).sqrt()
    }

    /// Whether `self` degrades on `baseline` by at least two pooled standard
    /// errors (the noise floor for Monte-Carlo comparisons).
    pub fn degrades_from(&self, baseline: &McStats) -> bool {
        self.mean - baseline.mean >= 2.0 * self.pooled_se(baseline)
    }
}

/// Expected exact risk of `target` when its trainer sees `sample_size`
/// examples drawn from the distribution (with replacement, by mass), routed
/// through the current upstream models.  Averaged over `trials` independent
/// draws with per-trial seeds derived from `seed`.
///
/// Draws containing one distinct target train the constant predictor for
/// that target when the family offers one, and plain ERM on the degenerate
/// sample otherwise; either way the trial counts toward the mean.
#[allow(clippy::too_many_arguments)]
pub fn expected_downstream_risk(
    dist: &GroundTruthDistribution,
    vg: &ValidatedGraph,
    registry: &Registry,
    models: &ModelSet,
    target: &NodeId,
    sample_size: usize,
    trials: usize,
    seed: u64,
) -> Result<McStats> {
    if trials == 0 || sample_size == 0 {
        return Err(Error::ConfigInvalid(
            "Monte-Carlo estimation needs trials >= 1 and sample_size >= 1".into(),
        ));
    }
    let spec = vg.node(target)?;
    let family = registry.family(&spec.family)?;
    let training_loss = match &spec.trainer {
        TrainerSpec::Erm { training_loss } => training_loss.clone(),
        TrainerSpec::Fixed { .. } => {
            return Err(Error::TrainerFailed {
                node: target.clone(),
                reason: "Monte-Carlo estimation requires an ERM trainer".into(),
            })
        }
    };

    // Route every support point through the fixed upstreams once.
    let mut sigs = Vec::new();
    let mut targets = Vec::new();
    let mut masses = Vec::new();
    for (example, mass) in dist.support() {
        let outputs = forward(vg, models, &example.x)?;
        sigs.push(assemble_input(vg, target, &example.x, &outputs)?);
        targets.push(
            example
                .targets
                .get(target)
                .ok_or_else(|| Error::MissingTargets(target.clone()))?
                .clone(),
        );
        masses.push(*mass);
    }

    // Precompute, per grid point: training loss and test loss on each
    // support point, plus the exact distribution risk.
    let grid = family.param_grid()?;
    let mut train_matrix = Vec::with_capacity(grid.len());
    let mut exact_risk = Vec::with_capacity(grid.len());
    for params in &grid {
        let mut train_row = Vec::with_capacity(sigs.len());
        let mut risk = 0.0;
        for ((sig, target_value), mass) in sigs.iter().zip(&targets).zip(&masses) {
            let pred = family.predict(params, sig)?;
            train_row.push(training_loss.eval(&pred, target_value)?);
            risk += mass * spec.test_loss.eval(&pred, target_value)?;
        }
        train_matrix.push(train_row);
        exact_risk.push(risk);
    }

    // Exact risks of the constant fallback for each distinct scalar target.
    let mut constant_risk: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
    for target_value in &targets {
        let key: Vec<u64> = target_value.iter().map(|v| v.to_bits()).collect();
        if constant_risk.contains_key(&key) || target_value.len() != 1 {
            continue;
        }
        if let Some(params) = family.constant_params(target_value[0]) {
            let mut risk = 0.0;
            for ((sig, t), mass) in sigs.iter().zip(&targets).zip(&masses) {
                risk += mass * spec.test_loss.eval(&family.predict(&params, sig)?, t)?;
            }
            constant_risk.insert(key, risk);
        }
    }

    let sampler = WeightedIndex::new(&masses)
        .map_err(|e| Error::ConfigInvalid(format!("bad sampling weights: {e}")))?;

    let per_trial: Vec<(f64, bool)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha20Rng::seed_from_u64(
                seed ^ (trial as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            );
            let mut counts = vec![0usize; sigs.len()];
            for _ in 0..sample_size {
                counts[sampler.sample(&mut rng)] += 1;
            }
            let mut drawn_keys: Vec<Vec<u64>> = counts
                .iter()
                .enumerate()
                .filter(|(_, c)| **c > 0)
                .map(|(i, _)| targets[i].iter().map(|v| v.to_bits()).collect())
                .collect();
            drawn_keys.dedup();
            drawn_keys.sort();
            drawn_keys.dedup();
            let degenerate = drawn_keys.len() == 1;
            if degenerate {
                if let Some(risk) = constant_risk.get(&drawn_keys[0]) {
                    return (*risk, true);
                }
            }
            let objective: Vec<f64> = train_matrix
                .iter()
                .map(|row| {
                    counts
                        .iter()
                        .zip(row)
                        .filter(|(c, _)| **c > 0)
                        .map(|(c, l)| *c as f64 * l)
                        .sum()
                })
                .collect();
            let best = argmin_with_tie_break(&grid, &objective);
            (exact_risk[best], degenerate)
        })
        .collect();

    let risks: Vec<f64> = per_trial.iter().map(|(r, _)| *r).collect();
    let degenerate_trials = per_trial.iter().filter(|(_, d)| *d).count();
    let mean = risks.iter().sum::<f64>() / trials as f64;
    let variance = if trials > 1 {
        risks.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (trials - 1) as f64
    } else {
        0.0
    };
    Ok(McStats {
        mean,
        std_error: (variance / trials as f64).sqrt(),
        trials,
        sample_size,
        degenerate_trials,
    })
}

// ============================================================================
// Tests
// ============================================================================
