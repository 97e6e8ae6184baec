//! Exact Bayes-style reference solutions on finite-support distributions.
//!
//! Four references bracket a trained downstream model:
//!
//! * [`bayes_optimal`] — best measurable function of the raw input.
//! * [`conditioned_optimal`] — best function of the downstream model's
//!   effective input (its raw-input slice plus fixed upstream outputs).
//! * [`restricted_optimal`] — best member of a hypothesis family on that
//!   same effective input.
//! * [`optimal_companion_upstream`] — best upstream model from a finite
//!   candidate set, judged by the conditioned-optimal downstream risk it
//!   permits.
//!
//! All four are computed by enumeration over the support, so their risks are
//! exact up to float rounding and the decomposition identities built on them
//! hold to 1e-12.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, DatasetRole, Example, NodeId};
use crate::model::{
    argmin_with_tie_break, cmp_f64_slices, HypothesisFamily, LossFunction, RiskValue, TrainedModel,
};

// ============================================================================
// Ground-truth distributions
// ============================================================================

/// A finite-support distribution: examples with strictly positive masses
/// summing to one.  Distinct support entries may share the same raw input
/// (label noise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthDistribution {
    support: Vec<(Example, f64)>,
}

impl GroundTruthDistribution {
    pub fn new(support: Vec<(Example, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::EmptySupport);
        }
        let dim = support[0].0.x.len();
        if support.iter().any(|(e, _)| e.x.len() != dim) {
            return Err(Error::InvalidDistribution(
                "support points have inconsistent input dimensionality".into(),
            ));
        }
        if support.iter().any(|(_, m)| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::InvalidDistribution(
                "every mass must be finite and strictly positive".into(),
            ));
        }
        let total: f64 = support.iter().map(|(_, m)| m).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "masses sum to {total}, not 1"
            )));
        }
        Ok(GroundTruthDistribution { support })
    }

    pub fn support(&self) -> &[(Example, f64)] {
        &self.support
    }

    /// Expand into a finite dataset with item multiplicities `mass * scale`.
    /// Fails unless every scaled mass is (numerically) a whole number, so the
    /// dataset's uniform mean reproduces the distribution exactly.
    pub fn to_dataset(&self, scale: usize, role: DatasetRole) -> Result<Dataset> {
        let mut items = Vec::new();
        for (example, mass) in &self.support {
            let scaled = mass * scale as f64;
            let count = scaled.round();
            if (scaled - count).abs() > 1e-9 || count < 1.0 {
                return Err(Error::InvalidDistribution(format!(
                    "mass {mass} does not expand to a whole count at scale {scale}"
                )));
            }
            for _ in 0..count as usize {
                items.push(example.clone());
            }
        }
        Dataset::new(items, role)
    }
}

// ============================================================================
// Effective inputs
// ============================================================================

/// A fixed upstream model together with the raw-input slice it reads; the
/// unit of composition for every conditioned oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct UpstreamStage {
    pub slice: Vec<usize>,
    pub model: TrainedModel,
}

impl UpstreamStage {
    pub fn new(slice: Vec<usize>, model: TrainedModel) -> Self {
        UpstreamStage { slice, model }
    }

    pub fn output(&self, x: &[f64]) -> Result<Vec<f64>> {
        let input: Vec<f64> = self
            .slice
            .iter()
            .map(|&i| {
                if i < x.len() {
                    Ok(x[i])
                } else {
                    Err(Error::ArityMismatch { want: i + 1, got: x.len() })
                }
            })
            .collect::<Result<_>>()?;
        self.model.predict(&input)
    }
}

/// The downstream model's effective input on raw input `x`: its own slice of
/// `x` followed by every stage output, in stage order.
pub fn signature(own_slice: &[usize], stages: &[UpstreamStage], x: &[f64]) -> Result<Vec<f64>> {
    let mut sig = Vec::new();
    for &i in own_slice {
        if i >= x.len() {
            return Err(Error::ArityMismatch { want: i + 1, got: x.len() });
        }
        sig.push(x[i]);
    }
    for stage in stages {
        sig.extend(stage.output(x)?);
    }
    Ok(sig)
}

fn bit_key(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

// ============================================================================
// Oracle functions
// ============================================================================

/// An explicit optimal map from effective inputs to outputs, with its exact
/// risk.  Entries cover every signature achievable on the support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFunction {
    pub entries: Vec<(Vec<f64>, Vec<f64>)>,
    pub risk: RiskValue,
    /// Human-readable description of what the oracle conditions on.
    pub scope: String,
}

impl OracleFunction {
    pub fn predict(&self, signature: &[f64]) -> Option<&[f64]> {
        self.entries
            .iter()
            .find(|(sig, _)| sig.len() == signature.len() && sig.iter().zip(signature).all(|(a, b)| a == b))
            .map(|(_, out)| out.as_slice())
    }
}

/// Best measurable predictor of `task` from the raw input: groups the
/// support by exact raw input and picks each group's risk-minimizing output.
pub fn bayes_optimal(
    dist: &GroundTruthDistribution,
    task: &NodeId,
    loss: &LossFunction,
) -> Result<OracleFunction> {
    optimal_over_groups(dist, task, loss, |x| Ok(x.to_vec()), "raw input")
}

/// Best measurable predictor of `task` from the downstream effective input
/// (own slice plus fixed upstream outputs).  With identity upstreams this
/// coincides with [`bayes_optimal`]; information the upstreams collapse is
/// lost here, which is exactly what the upstream-error term measures.
pub fn conditioned_optimal(
    dist: &GroundTruthDistribution,
    own_slice: &[usize],
    stages: &[UpstreamStage],
    task: &NodeId,
    loss: &LossFunction,
) -> Result<OracleFunction> {
    optimal_over_groups(
        dist,
        task,
        loss,
        |x| signature(own_slice, stages, x),
        "upstream signature",
    )
}

/// One signature group: representative signature values plus the weighted
/// `(target, mass)` members that share it.
type SignatureGroup = (Vec<f64>, Vec<(Vec<f64>, f64)>);

fn optimal_over_groups<F>(
    dist: &GroundTruthDistribution,
    task: &NodeId,
    loss: &LossFunction,
    to_signature: F,
    scope: &str,
) -> Result<OracleFunction>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    // Group the support by signature, keeping first-seen order.
    let mut keys: Vec<Vec<u64>> = Vec::new();
    let mut groups: BTreeMap<Vec<u64>, SignatureGroup> = BTreeMap::new();
    for (example, mass) in dist.support() {
        let sig = to_signature(&example.x)?;
        let target = example
            .targets
            .get(task)
            .ok_or_else(|| Error::MissingTargets(task.clone()))?
            .clone();
        let key = bit_key(&sig);
        if !groups.contains_key(&key) {
            keys.push(key.clone());
            groups.insert(key.clone(), (sig, Vec::new()));
        }
        groups.get_mut(&key).unwrap().1.push((target, *mass));
    }

    let mut entries = Vec::with_capacity(keys.len());
    let mut risk = 0.0;
    for key in keys {
        let (sig, members) = &groups[&key];
        let (output, group_risk) = group_optimal(loss, members)?;
        risk += group_risk;
        entries.push((sig.clone(), output));
    }
    Ok(OracleFunction {
        entries,
        risk: RiskValue::new(risk)?,
        scope: scope.to_string(),
    })
}

/// Risk-minimizing output for one signature group, scanned over a finite
/// candidate set that provably contains an optimum for the loss kinds used
/// by the classification and MAE tasks here:
///
/// * zero-one — some observed target is always optimal (anything else loses
///   on every member);
/// * (weighted) MAE — the component-wise weighted median is a closed-form
///   minimizer;
/// * point error — observed targets are optimal for the deterministic and
///   two-point groups this engine constructs (the component-wise median is
///   also offered to the scan).
///
/// Ties break toward the lexicographically smallest output.
fn group_optimal(loss: &LossFunction, members: &[(Vec<f64>, f64)]) -> Result<(Vec<f64>, f64)> {
    let mut candidates: Vec<Vec<f64>> = Vec::new();
    let mut push_unique = |c: Vec<f64>| {
        if !candidates.iter().any(|e| bit_key(e) == bit_key(&c)) {
            candidates.push(c);
        }
    };
    match loss {
        LossFunction::ZeroOne => {
            for (target, _) in members {
                push_unique(target.clone());
            }
        }
        LossFunction::MeanAbsoluteError | LossFunction::WeightedMeanAbsoluteError { .. } => {
            push_unique(weighted_median_point(loss, members));
        }
        LossFunction::EuclideanPointError => {
            for (target, _) in members {
                push_unique(target.clone());
            }
            push_unique(weighted_median_point(loss, members));
        }
    }
    candidates.sort_by(|a, b| cmp_f64_slices(a, b));

    let mut best: Option<(Vec<f64>, f64)> = None;
    for candidate in candidates {
        let mut acc = 0.0;
        for (target, mass) in members {
            acc += mass * loss.eval(&candidate, target)?;
        }
        match &best {
            Some((_, current)) if acc >= *current => {}
            _ => best = Some((candidate, acc)),
        }
    }
    best.ok_or(Error::EmptySupport)
}

/// Component-wise weighted median of the group targets, weighted by
/// mass times the loss's per-target weight.
fn weighted_median_point(loss: &LossFunction, members: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let dim = members[0].0.len();
    (0..dim)
        .map(|c| {
            let mut pairs: Vec<(f64, f64)> = members
                .iter()
                .map(|(target, mass)| (target[c], mass * loss.target_weight(target)))
                .collect();
            pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite targets"));
            let total: f64 = pairs.iter().map(|(_, w)| w).sum();
            let mut cumulative = 0.0;
            for (value, weight) in &pairs {
                cumulative += weight;
                if cumulative >= total / 2.0 {
                    return *value;
                }
            }
            pairs.last().expect("non-empty group").0
        })
        .collect()
}

/// Best member of `family` as a predictor of `task` from the downstream
/// effective input: an exhaustive scan of the parameter grid against the
/// exact distribution risk, with the same lexicographic tie-break as ERM.
pub fn restricted_optimal(
    dist: &GroundTruthDistribution,
    own_slice: &[usize],
    stages: &[UpstreamStage],
    family: &HypothesisFamily,
    task: &NodeId,
    loss: &LossFunction,
) -> Result<(TrainedModel, RiskValue)> {
    let mut rows = Vec::with_capacity(dist.support().len());
    for (example, mass) in dist.support() {
        let sig = signature(own_slice, stages, &example.x)?;
        let target = example
            .targets
            .get(task)
            .ok_or_else(|| Error::MissingTargets(task.clone()))?
            .clone();
        rows.push((sig, target, *mass));
    }
    let grid = family.param_grid()?;
    let values = grid
        .iter()
        .map(|params| {
            let mut acc = 0.0;
            for (sig, target, mass) in &rows {
                acc += mass * loss.eval(&family.predict(params, sig)?, target)?;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    let best = argmin_with_tie_break(&grid, &values);
    let model = TrainedModel::new(task.clone(), family.clone(), grid[best].clone(), 0)?;
    Ok((model, RiskValue::new(values[best])?))
}

/// Best companion upstream: scans every candidate model in the (finite)
/// candidate family and returns the one whose conditioned-optimal downstream
/// risk is smallest, together with that risk.  The candidate is evaluated in
/// the second stage slot, after `fixed`.  Ties keep the first candidate in
/// enumeration order.
#[allow(clippy::too_many_arguments)]
pub fn optimal_companion_upstream(
    dist: &GroundTruthDistribution,
    own_slice: &[usize],
    fixed: &UpstreamStage,
    candidate_family: &HypothesisFamily,
    candidate_slice: &[usize],
    candidate_node: &NodeId,
    task: &NodeId,
    loss: &LossFunction,
) -> Result<(TrainedModel, RiskValue)> {
    let grid = candidate_family.param_grid().map_err(|_| Error::EmptyCandidateSet)?;
    if grid.is_empty() {
        return Err(Error::EmptyCandidateSet);
    }
    let mut best: Option<(TrainedModel, f64)> = None;
    for params in grid {
        let candidate = TrainedModel::new(
            candidate_node.clone(),
            candidate_family.clone(),
            params,
            0,
        )?;
        let stages = vec![
            fixed.clone(),
            UpstreamStage::new(candidate_slice.to_vec(), candidate.clone()),
        ];
        let oracle = conditioned_optimal(dist, own_slice, &stages, task, loss)?;
        let risk = oracle.risk.value();
        match &best {
            Some((_, current)) if risk >= *current => {}
            _ => best = Some((candidate, risk)),
        }
    }
    let (model, risk) = best.expect("non-empty candidate grid");
    Ok((model, RiskValue::new(risk)?))
}

// ============================================================================
// Tests
// ============================================================================

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FamilyKind;

    fn id(s: &str) -> NodeId {
        NodeId::new(s)
    }

    fn labeled(x: Vec<f64>, task: &str, label: f64) -> Example {
        let mut targets = BTreeMap::new();
        targets.insert(id(task), vec![label]);
        Example { x, targets }
    }

    #[test]
    fn masses_must_sum_to_one() {
        let support = vec![(labeled(vec![0.0], "w", 1.0), 0.6)];
        assert!(matches!(
            GroundTruthDistribution::new(support),
            Err(Error::InvalidDistribution(_))
        ));
    }

    #[test]
    fn deterministic_labels_have_zero_bayes_risk() {
        let dist = GroundTruthDistribution::new(vec![
            (labeled(vec![0.0], "w", 1.0), 0.5),
            (labeled(vec![1.0], "w", -1.0), 0.5),
        ])
        .unwrap();
        let oracle = bayes_optimal(&dist, &id("w"), &LossFunction::ZeroOne).unwrap();
        assert_eq!(oracle.risk.value(), 0.0);
        assert_eq!(oracle.predict(&[0.0]).unwrap(), &[1.0]);
    }

    #[test]
    fn colocated_noise_predicts_the_heavier_label() {
        // Two support points share x = (0); labels +1 (0.7) and -1 (0.3).
        let dist = GroundTruthDistribution::new(vec![
            (labeled(vec![0.0], "w", 1.0), 0.7),
            (labeled(vec![0.0], "w", -1.0), 0.3),
        ])
        .unwrap();
        let oracle = bayes_optimal(&dist, &id("w"), &LossFunction::ZeroOne).unwrap();
        assert_eq!(oracle.predict(&[0.0]).unwrap(), &[1.0]);
        assert!((oracle.risk.value() - 0.3).abs() < 1e-15);
    }

    fn identity_stage(points: &[f64]) -> UpstreamStage {
        let domain: Vec<Vec<f64>> = points.iter().map(|p| vec![*p]).collect();
        let params: Vec<f64> = points.to_vec();
        let family = HypothesisFamily::new(FamilyKind::PointTable {
            domain,
            output_dim: 1,
            candidates: vec![],
        });
        UpstreamStage::new(
            vec![0],
            TrainedModel::new(id("v"), family, params, 0).unwrap(),
        )
    }

    #[test]
    fn identity_upstream_matches_bayes() {
        let dist = GroundTruthDistribution::new(vec![
            (labeled(vec![0.0], "w", 1.0), 0.25),
            (labeled(vec![1.0], "w", -1.0), 0.35),
            (labeled(vec![2.0], "w", 1.0), 0.40),
        ])
        .unwrap();
        let stage = identity_stage(&[0.0, 1.0, 2.0]);
        let bayes = bayes_optimal(&dist, &id("w"), &LossFunction::ZeroOne).unwrap();
        let conditioned =
            conditioned_optimal(&dist, &[], &[stage], &id("w"), &LossFunction::ZeroOne).unwrap();
        assert_eq!(bayes.risk, conditioned.risk);
    }

    #[test]
    fn collapsing_upstream_pays_the_minority_mass() {
        // Upstream maps both inputs to the same output; labels disagree.
        let dist = GroundTruthDistribution::new(vec![
            (labeled(vec![0.0], "w", 1.0), 0.7),
            (labeled(vec![1.0], "w", -1.0), 0.3),
        ])
        .unwrap();
        let family = HypothesisFamily::new(FamilyKind::TableClassifier {
            domain: vec![vec![0.0], vec![1.0]],
        });
        let collapse = UpstreamStage::new(
            vec![0],
            TrainedModel::new(id("v"), family, vec![1.0, 1.0], 0).unwrap(),
        );
        let oracle =
            conditioned_optimal(&dist, &[], &[collapse], &id("w"), &LossFunction::ZeroOne)
                .unwrap();
        assert!((oracle.risk.value() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn table_family_restriction_is_free() {
        // A table over the achievable signatures can express the conditioned
        // optimum, so the restricted risk matches exactly.
        let dist = GroundTruthDistribution::new(vec![
            (labeled(vec![0.0], "w", 1.0), 0.2),
            (labeled(vec![1.0], "w", -1.0), 0.5),
            (labeled(vec![2.0], "w", -1.0), 0.3),
        ])
        .unwrap();
        let stage = identity_stage(&[0.0, 1.0, 2.0]);
        let table = HypothesisFamily::new(FamilyKind::TableClassifier {
            domain: vec![vec![0.0], vec![1.0], vec![2.0]],
        });
        let conditioned =
            conditioned_optimal(&dist, &[], std::slice::from_ref(&stage), &id("w"), &LossFunction::ZeroOne)
                .unwrap();
        let (_, restricted_risk) =
            restricted_optimal(&dist, &[], &[stage], &table, &id("w"), &LossFunction::ZeroOne)
                .unwrap();
        assert_eq!(conditioned.risk, restricted_risk);
    }

    #[test]
    fn single_candidate_companion_is_returned() {
        let dist = GroundTruthDistribution::new(vec![
            (labeled(vec![0.0], "w", 1.0), 0.5),
            (labeled(vec![1.0], "w", -1.0), 0.5),
        ])
        .unwrap();
        let fixed = identity_stage(&[0.0, 1.0]);
        let single = HypothesisFamily::new(FamilyKind::PointTable {
            domain: vec![vec![0.0], vec![1.0]],
            output_dim: 1,
            candidates: vec![vec![3.0]],
        });
        let (model, _) = optimal_companion_upstream(
            &dist,
            &[],
            &fixed,
            &single,
            &[0],
            &id("v"),
            &id("w"),
            &LossFunction::ZeroOne,
        )
        .unwrap();
        assert_eq!(model.params, vec![3.0, 3.0]);
    }

    #[test]
    fn companion_scan_belongs_to_its_own_minimum() {
        // u hides the label; the best companion v must reveal it.
        let dist = GroundTruthDistribution::new(vec![
            (labeled(vec![0.0], "w", 1.0), 0.5),
            (labeled(vec![1.0], "w", -1.0), 0.5),
        ])
        .unwrap();
        let constant_family = HypothesisFamily::new(FamilyKind::TableClassifier {
            domain: vec![vec![0.0], vec![1.0]],
        });
        let fixed = UpstreamStage::new(
            vec![0],
            TrainedModel::new(id("u"), constant_family.clone(), vec![1.0, 1.0], 0).unwrap(),
        );
        let (best, risk) = optimal_companion_upstream(
            &dist,
            &[],
            &fixed,
            &constant_family,
            &[0],
            &id("v"),
            &id("w"),
            &LossFunction::ZeroOne,
        )
        .unwrap();
        assert_eq!(risk.value(), 0.0);
        // Full rescan: no candidate beats the returned one.
        for params in constant_family.param_grid().unwrap() {
            let candidate =
                TrainedModel::new(id("v"), constant_family.clone(), params, 0).unwrap();
            let stages = vec![fixed.clone(), UpstreamStage::new(vec![0], candidate)];
            let oracle =
                conditioned_optimal(&dist, &[], &stages, &id("w"), &LossFunction::ZeroOne)
                    .unwrap();
            assert!(oracle.risk.value() >= risk.value() - 1e-15);
        }
        assert!(best.params == vec![-1.0, 1.0] || best.params == vec![1.0, -1.0]);
    }

    #[test]
    fn mae_oracle_uses_the_weighted_median() {
        let dist = GroundTruthDistribution::new(vec![
            (labeled(vec![0.0], "w", 10.0), 0.6),
            (labeled(vec![0.0], "w", 40.0), 0.4),
        ])
        .unwrap();
        let oracle =
            bayes_optimal(&dist, &id("w"), &LossFunction::MeanAbsoluteError).unwrap();
        // Majority of MAE weight sits at 10.
        assert_eq!(oracle.predict(&[0.0]).unwrap(), &[10.0]);
        assert!((oracle.risk.value() - 0.4 * 30.0).abs() < 1e-12);
    }

    mod proptests {
        use super::*;
        use proptest::prelude::*;

        fn arb_instance() -> impl Strategy<
            Value = (Vec<f64>, Vec<u32>, Vec<f64>),
        > {
            // 3..=5 points: labels, integer masses, upstream table outputs.
            (3usize..=5).prop_flat_map(|n| {
                (
                    proptest::collection::vec(prop_oneof![Just(-1.0), Just(1.0)], n),
                    proptest::collection::vec(1u32..6, n),
                    proptest::collection::vec(prop_oneof![Just(-1.0), Just(1.0)], n),
                )
            })
        }

        fn build(
            labels: &[f64],
            masses: &[u32],
        ) -> (GroundTruthDistribution, Vec<Vec<f64>>) {
            let total: f64 = masses.iter().map(|m| *m as f64).sum();
            let support: Vec<(Example, f64)> = labels
                .iter()
                .zip(masses)
                .enumerate()
                .map(|(i, (label, mass))| {
                    (labeled(vec![i as f64], "w", *label), *mass as f64 / total)
                })
                .collect();
            let domain: Vec<Vec<f64>> = (0..labels.len()).map(|i| vec![i as f64]).collect();
            (GroundTruthDistribution::new(support).unwrap(), domain)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            /// Bayes <= conditioned <= restricted: coarsening information and
            /// then restricting the hypothesis set can only raise exact risk.
            #[test]
            fn risk_ordering_chain((labels, masses, upstream) in arb_instance()) {
                let (dist, domain) = build(&labels, &masses);
                let table = HypothesisFamily::new(FamilyKind::TableClassifier {
                    domain: domain.clone(),
                });
                let stage = UpstreamStage::new(
                    vec![0],
                    TrainedModel::new(id("v"), table, upstream.clone(), 0).unwrap(),
                );
                let bayes = bayes_optimal(&dist, &id("w"), &LossFunction::ZeroOne).unwrap();
                let conditioned =
                    conditioned_optimal(&dist, &[], std::slice::from_ref(&stage), &id("w"), &LossFunction::ZeroOne)
                        .unwrap();
                let sig_table = HypothesisFamily::new(FamilyKind::TableClassifier {
                    domain: vec![vec![-1.0], vec![1.0]],
                });
                let (_, restricted) = restricted_optimal(
                    &dist, &[], &[stage], &sig_table, &id("w"), &LossFunction::ZeroOne,
                ).unwrap();
                prop_assert!(bayes.risk.value() <= conditioned.risk.value() + 1e-12);
                prop_assert!(conditioned.risk.value() <= restricted.value() + 1e-12);
                // A table over achievable signatures is expressive enough to
                // realize the conditioned optimum exactly.
                prop_assert!((restricted.value() - conditioned.risk.value()).abs() <= 1e-12);
            }

            /// Relabeling upstream outputs bijectively cannot change the
            /// conditioned-optimal risk: only the partition matters.
            #[test]
            fn conditioned_risk_is_relabel_invariant((labels, masses, upstream) in arb_instance()) {
                let (dist, domain) = build(&labels, &masses);
                let point = |outputs: Vec<f64>| {
                    let family = HypothesisFamily::new(FamilyKind::PointTable {
                        domain: domain.clone(),
                        output_dim: 1,
                        candidates: vec![],
                    });
                    UpstreamStage::new(
                        vec![0],
                        TrainedModel::new(id("v"), family, outputs, 0).unwrap(),
                    )
                };
                let original = point(upstream.clone());
                let relabeled = point(
                    upstream.iter().map(|o| if *o > 0.0 { 7.0 } else { -9.0 }).collect(),
                );
                let a = conditioned_optimal(&dist, &[], &[original], &id("w"), &LossFunction::ZeroOne)
                    .unwrap();
                let b = conditioned_optimal(&dist, &[], &[relabeled], &id("w"), &LossFunction::ZeroOne)
                    .unwrap();
                prop_assert_eq!(a.risk, b.risk);
            }
        }
    }
}
