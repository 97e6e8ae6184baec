//! Hypothesis families, loss functions, and exhaustive-scan empirical risk
//! minimization.
//!
//! Every family exposes a finite parameter grid, so "training" a model is an
//! exact scan for the grid point with the smallest (weighted) empirical loss.
//! Ties are broken toward the lexicographically smallest parameter tuple,
//! which makes every training call deterministic and independent of
//! evaluation order.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, NodeId};
use crate::oracle::GroundTruthDistribution;

// ============================================================================
// Parameter grids
// ============================================================================

/// A uniform grid of `steps` values spanning `[lo, hi]` inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridRange {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl GridRange {
    pub fn new(lo: f64, hi: f64, steps: usize) -> Self {
        GridRange { lo, hi, steps }
    }

    /// The `i`-th grid value.  Endpoints are exact.
    pub fn value(&self, i: usize) -> f64 {
        if self.steps <= 1 {
            return self.lo;
        }
        self.lo + (self.hi - self.lo) * i as f64 / (self.steps - 1) as f64
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.steps.max(1)).map(|i| self.value(i)).collect()
    }
}

// ============================================================================
// Hypothesis families
// ============================================================================

/// The shape of one hypothesis set.  All families are finite after
/// discretization, so exact minimizers exist and are found by enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyKind {
    /// Lookup table over a finite input domain with outputs in {-1, +1}.
    /// Parameters: one label per domain key, in domain order.
    TableClassifier { domain: Vec<Vec<f64>> },
    /// Lookup table over a finite input domain with real-tuple outputs.
    /// Parameters: the flattened output tuples, in domain order.  The
    /// optional `candidates` list makes the family enumerable (each key
    /// independently picks one candidate output).
    PointTable {
        domain: Vec<Vec<f64>>,
        output_dim: usize,
        #[serde(default)]
        candidates: Vec<Vec<f64>>,
    },
    /// `sign(cos(theta) * z0 + sin(theta) * z1 + b)` with `theta` on an
    /// angular grid and `b` on a uniform grid.  Parameters: `[theta, b]`.
    LinearClassifier2d { angles: usize, offset: GridRange },
    /// Sign of a full conic `a*z0^2 + b*z0*z1 + c*z1^2 + d*z0 + e*z1 + f`
    /// with the coefficient tuple normalized to unit Euclidean norm.  The
    /// grid draws each raw coefficient from `coefficient`; scalar multiples
    /// collapse to one normalized candidate.  Parameters: the six normalized
    /// coefficients.
    QuadraticClassifier2d { coefficient: GridRange },
    /// One-parameter interpolation `(1 - alpha) * A(x) + alpha * B(x)`
    /// between two fixed base tables sharing a domain.  Parameters:
    /// `[alpha]` on a uniform grid over [0, 1].
    InterpolatedPredictor {
        domain: Vec<Vec<f64>>,
        base_a: Vec<Vec<f64>>,
        base_b: Vec<Vec<f64>>,
        steps: usize,
    },
    /// Scalar threshold detector: predicts +1 iff the input is strictly
    /// below `tau`.  Parameters: `[tau]` on a uniform grid.
    ThresholdDetector1d { tau: GridRange },
}

/// A hypothesis set: a family kind plus its discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HypothesisFamily {
    pub kind: FamilyKind,
}

/// Enumeration guard: refuse to materialize absurdly large grids.
const MAX_GRID: usize = 4_000_000;

impl HypothesisFamily {
    pub fn new(kind: FamilyKind) -> Self {
        HypothesisFamily { kind }
    }

    /// Number of components expected in an input tuple, when fixed.
    pub fn input_arity(&self) -> Option<usize> {
        match &self.kind {
            FamilyKind::TableClassifier { domain }
            | FamilyKind::PointTable { domain, .. }
            | FamilyKind::InterpolatedPredictor { domain, .. } => {
                domain.first().map(|k| k.len())
            }
            FamilyKind::LinearClassifier2d { .. } | FamilyKind::QuadraticClassifier2d { .. } => {
                Some(2)
            }
            FamilyKind::ThresholdDetector1d { .. } => Some(1),
        }
    }

    /// Length of a parameter tuple for this family.
    pub fn params_len(&self) -> usize {
        match &self.kind {
            FamilyKind::TableClassifier { domain } => domain.len(),
            FamilyKind::PointTable { domain, output_dim, .. } => domain.len() * output_dim,
            FamilyKind::LinearClassifier2d { .. } => 2,
            FamilyKind::QuadraticClassifier2d { .. } => 6,
            FamilyKind::InterpolatedPredictor { .. } => 1,
            FamilyKind::ThresholdDetector1d { .. } => 1,
        }
    }

    pub fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.params_len() {
            return Err(Error::IncompatibleFamily(format!(
                "expected {} parameters, got {}",
                self.params_len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::IncompatibleFamily(
                "parameters must be finite".to_string(),
            ));
        }
        if let FamilyKind::TableClassifier { .. } = self.kind {
            if params.iter().any(|p| *p != 1.0 && *p != -1.0) {
                return Err(Error::IncompatibleFamily(
                    "table classifier labels must be +1 or -1".to_string(),
                ));
            }
        }
        Ok(())
    }

    /// Evaluate the hypothesis `params` on one input tuple.
    pub fn predict(&self, params: &[f64], input: &[f64]) -> Result<Vec<f64>> {
        self.check_params(params)?;
        match &self.kind {
            FamilyKind::TableClassifier { domain } => {
                let idx = lookup_key(domain, input)?;
                Ok(vec![params[idx]])
            }
            FamilyKind::PointTable { domain, output_dim, .. } => {
                let idx = lookup_key(domain, input)?;
                Ok(params[idx * output_dim..(idx + 1) * output_dim].to_vec())
            }
            FamilyKind::LinearClassifier2d { .. } => {
                check_arity(input, 2)?;
                let (theta, b) = (params[0], params[1]);
                let score = theta.cos() * input[0] + theta.sin() * input[1] + b;
                Ok(vec![sign(score)])
            }
            FamilyKind::QuadraticClassifier2d { .. } => {
                check_arity(input, 2)?;
                let (z0, z1) = (input[0], input[1]);
                let q = params[0] * z0 * z0
                    + params[1] * z0 * z1
                    + params[2] * z1 * z1
                    + params[3] * z0
                    + params[4] * z1
                    + params[5];
                Ok(vec![sign(q)])
            }
            FamilyKind::InterpolatedPredictor { domain, base_a, base_b, .. } => {
                let idx = lookup_key(domain, input)?;
                let alpha = params[0];
                Ok(base_a[idx]
                    .iter()
                    .zip(&base_b[idx])
                    .map(|(a, b)| (1.0 - alpha) * a + alpha * b)
                    .collect())
            }
            FamilyKind::ThresholdDetector1d { .. } => {
                check_arity(input, 1)?;
                Ok(vec![if input[0] < params[0] { 1.0 } else { -1.0 }])
            }
        }
    }

    /// The full parameter grid in canonical (lexicographically ascending)
    /// order.  Training and every oracle scan share this order, so
    /// tie-breaking is identical everywhere.
    pub fn param_grid(&self) -> Result<Vec<Vec<f64>>> {
        let grid = match &self.kind {
            FamilyKind::TableClassifier { domain } => {
                let n = domain.len();
                if n == 0 {
                    return Err(Error::IncompatibleFamily("empty table domain".into()));
                }
                if n >= 22 {
                    return Err(Error::IncompatibleFamily(format!(
                        "table domain of {n} keys is too large to enumerate"
                    )));
                }
                let mut grid = Vec::with_capacity(1 << n);
                for code in 0u64..(1 << n) {
                    // Most significant bit = first key, so counting order is
                    // lexicographic with -1 < +1.
                    let params: Vec<f64> = (0..n)
                        .map(|j| {
                            if (code >> (n - 1 - j)) & 1 == 1 {
                                1.0
                            } else {
                                -1.0
                            }
                        })
                        .collect();
                    grid.push(params);
                }
                grid
            }
            FamilyKind::PointTable { domain, output_dim, candidates } => {
                if candidates.is_empty() {
                    return Err(Error::IncompatibleFamily(
                        "point table has no candidate outputs to enumerate".into(),
                    ));
                }
                if candidates.iter().any(|c| c.len() != *output_dim) {
                    return Err(Error::IncompatibleFamily(
                        "candidate output dimension mismatch".into(),
                    ));
                }
                let mut sorted = candidates.clone();
                sorted.sort_by(|a, b| cmp_f64_slices(a, b));
                let n = domain.len();
                let total = sorted.len().checked_pow(n as u32).unwrap_or(usize::MAX);
                if total > MAX_GRID {
                    return Err(Error::IncompatibleFamily(format!(
                        "point-table grid of {total} candidates is too large"
                    )));
                }
                let mut grid = Vec::with_capacity(total);
                let mut odometer = vec![0usize; n];
                loop {
                    let mut params = Vec::with_capacity(n * output_dim);
                    for &c in &odometer {
                        params.extend_from_slice(&sorted[c]);
                    }
                    grid.push(params);
                    // Advance with the first key most significant.
                    let mut pos = n;
                    while pos > 0 {
                        pos -= 1;
                        odometer[pos] += 1;
                        if odometer[pos] < sorted.len() {
                            break;
                        }
                        odometer[pos] = 0;
                        if pos == 0 {
                            return Ok(grid);
                        }
                    }
                    if n == 0 {
                        return Ok(grid);
                    }
                }
            }
            FamilyKind::LinearClassifier2d { angles, offset } => {
                let mut grid = Vec::with_capacity(angles * offset.steps);
                for k in 0..*angles {
                    let theta = 2.0 * std::f64::consts::PI * k as f64 / *angles as f64;
                    for b in offset.values() {
                        grid.push(vec![theta, b]);
                    }
                }
                grid
            }
            FamilyKind::QuadraticClassifier2d { coefficient } => {
                let values = coefficient.values();
                let m = values.len();
                let total = m.pow(6);
                if total > MAX_GRID {
                    return Err(Error::IncompatibleFamily(format!(
                        "quadratic grid of {total} raw tuples is too large"
                    )));
                }
                let mut grid = Vec::new();
                let mut idx = [0usize; 6];
                'outer: loop {
                    let raw: Vec<f64> = idx.iter().map(|&i| values[i]).collect();
                    let norm = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
                    if norm > 1e-12 {
                        grid.push(raw.iter().map(|c| c / norm).collect::<Vec<f64>>());
                    }
                    let mut pos = 6;
                    while pos > 0 {
                        pos -= 1;
                        idx[pos] += 1;
                        if idx[pos] < m {
                            continue 'outer;
                        }
                        idx[pos] = 0;
                    }
                    break;
                }
                grid.sort_by(|a, b| cmp_f64_slices(a, b));
                grid.dedup_by(|a, b| quantized_eq(a, b));
                grid
            }
            FamilyKind::InterpolatedPredictor { domain, base_a, base_b, steps } => {
                if base_a.len() != domain.len() || base_b.len() != domain.len() {
                    return Err(Error::IncompatibleFamily(
                        "base tables must cover the interpolation domain".into(),
                    ));
                }
                let alpha = GridRange::new(0.0, 1.0, (*steps).max(2));
                alpha.values().into_iter().map(|a| vec![a]).collect()
            }
            FamilyKind::ThresholdDetector1d { tau } => {
                tau.values().into_iter().map(|t| vec![t]).collect()
            }
        };
        if grid.is_empty() {
            return Err(Error::IncompatibleFamily("empty parameter grid".into()));
        }
        Ok(grid)
    }

    /// Parameters of the constant classifier predicting `label`, when the
    /// family has one.  Used for degenerate single-class training draws.
    /// The linear classifier has no exact constant; the returned offset
    /// extreme is constant on bounded representations only.
    pub fn constant_params(&self, label: f64) -> Option<Vec<f64>> {
        match &self.kind {
            FamilyKind::TableClassifier { domain } => Some(vec![label; domain.len()]),
            FamilyKind::QuadraticClassifier2d { .. } => {
                Some(vec![0.0, 0.0, 0.0, 0.0, 0.0, label.signum()])
            }
            FamilyKind::ThresholdDetector1d { tau } => {
                let t = if label > 0.0 { tau.hi } else { tau.lo };
                Some(vec![t])
            }
            FamilyKind::LinearClassifier2d { offset, .. } => {
                let b = if label > 0.0 { offset.hi } else { offset.lo };
                Some(vec![0.0, b])
            }
            FamilyKind::PointTable { .. } | FamilyKind::InterpolatedPredictor { .. } => None,
        }
    }
}

fn check_arity(input: &[f64], want: usize) -> Result<()> {
    if input.len() != want {
        return Err(Error::ArityMismatch { want, got: input.len() });
    }
    Ok(())
}

fn lookup_key(domain: &[Vec<f64>], input: &[f64]) -> Result<usize> {
    domain
        .iter()
        .position(|k| k.len() == input.len() && k.iter().zip(input).all(|(a, b)| a == b))
        .ok_or_else(|| Error::UnknownTableKey(input.to_vec()))
}

fn sign(score: f64) -> f64 {
    if score >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Total order on parameter tuples (grids contain no NaNs).
pub(crate) fn cmp_f64_slices(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.partial_cmp(y).expect("parameter grids contain no NaN") {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

fn quantized_eq(a: &[f64], b: &[f64]) -> bool {
    const SCALE: f64 = 1e9;
    a.len() == b.len()
        && a.iter()
            .zip(b.iter())
            .all(|(x, y)| (x * SCALE).round() == (y * SCALE).round())
}

// ============================================================================
// Trained models
// ============================================================================

/// An immutable trained model: a family plus one chosen parameter tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub node: NodeId,
    pub family: HypothesisFamily,
    pub params: Vec<f64>,
    /// Training round that produced this model (0 = baseline).
    pub version: u32,
}

impl TrainedModel {
    pub fn new(node: NodeId, family: HypothesisFamily, params: Vec<f64>, version: u32) -> Result<Self> {
        family.check_params(&params)?;
        Ok(TrainedModel { node, family, params, version })
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.family.predict(&self.params, input)
    }

    /// Bit-exact parameter equality, used by update-locality checks.
    pub fn bits_eq(&self, other: &TrainedModel) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

// ============================================================================
// Loss functions
// ============================================================================

/// Parameter-free loss functions.  All are nonnegative; the deterministic
/// kinds (zero-one, MAE, point error) are zero exactly when prediction and
/// target coincide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LossFunction {
    /// 0 if the tuples are identical, 1 otherwise.
    ZeroOne,
    /// Mean absolute error across components.
    MeanAbsoluteError,
    /// Euclidean distance between predicted and target points.
    EuclideanPointError,
    /// Mean absolute error scaled by a fixed weight looked up from the
    /// target's first component (unlisted targets weigh 1).  Weights encode
    /// task emphases such as "errors on small targets matter more".
    WeightedMeanAbsoluteError { weights: Vec<(f64, f64)> },
}

impl LossFunction {
    pub fn eval(&self, prediction: &[f64], target: &[f64]) -> Result<f64> {
        if prediction.len() != target.len() {
            return Err(Error::ArityMismatch { want: target.len(), got: prediction.len() });
        }
        Ok(match self {
            LossFunction::ZeroOne => {
                if prediction.iter().zip(target).all(|(p, t)| p == t) {
                    0.0
                } else {
                    1.0
                }
            }
            LossFunction::MeanAbsoluteError => mae(prediction, target),
            LossFunction::EuclideanPointError => prediction
                .iter()
                .zip(target)
                .map(|(p, t)| (p - t) * (p - t))
                .sum::<f64>()
                .sqrt(),
            LossFunction::WeightedMeanAbsoluteError { weights } => {
                let w = weights
                    .iter()
                    .find(|(key, _)| (key - target[0]).abs() < 1e-9)
                    .map(|(_, w)| *w)
                    .unwrap_or(1.0);
                w * mae(prediction, target)
            }
        })
    }

    /// Weight that this loss assigns to a target (1 unless weighted).
    pub(crate) fn target_weight(&self, target: &[f64]) -> f64 {
        match self {
            LossFunction::WeightedMeanAbsoluteError { weights } => weights
                .iter()
                .find(|(key, _)| (key - target[0]).abs() < 1e-9)
                .map(|(_, w)| *w)
                .unwrap_or(1.0),
            _ => 1.0,
        }
    }
}

fn mae(prediction: &[f64], target: &[f64]) -> f64 {
    prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / prediction.len() as f64
}

// ============================================================================
// Risks and training
// ============================================================================

/// A nonnegative expected or empirical loss.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RiskValue(f64);

impl RiskValue {
    /// Wrap a computed risk.  Values in `[-1e-12, 0)` are float noise from
    /// exact-enumeration differences and clamp to zero.
    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value < -1e-12 {
            return Err(Error::InvalidDistribution(format!(
                "risk value {value} is negative or non-finite"
            )));
        }
        Ok(RiskValue(value.max(0.0)))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

/// One weighted training example, already routed to a node's input space.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledItem {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub weight: f64,
}

/// How a node obtains its model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TrainerSpec {
    /// Ship a fixed parameter tuple; training ignores the data.
    Fixed { params: Vec<f64> },
    /// Exhaustive-scan empirical risk minimization under `training_loss`
    /// (which may differ from the node's fixed test loss).
    Erm { training_loss: LossFunction },
}

/// Exact ERM: scan the family's full parameter grid for the tuple with the
/// smallest weighted empirical loss; ties go to the lexicographically
/// smallest tuple.  A rescan of the grid can never find a strictly better
/// parameter point.
pub fn erm_train(
    family: &HypothesisFamily,
    items: &[LabeledItem],
    loss: &LossFunction,
    node: &NodeId,
    version: u32,
) -> Result<TrainedModel> {
    if items.is_empty() {
        return Err(Error::TrainerFailed {
            node: node.clone(),
            reason: "no training items".to_string(),
        });
    }
    let grid = family.param_grid()?;
    let total_weight: f64 = items.iter().map(|it| it.weight).sum();
    let values = grid
        .iter()
        .map(|params| {
            let mut acc = 0.0;
            for item in items {
                let pred = family.predict(params, &item.input)?;
                acc += item.weight * loss.eval(&pred, &item.target)?;
            }
            Ok(acc / total_weight)
        })
        .collect::<Result<Vec<f64>>>()?;
    let best = argmin_with_tie_break(&grid, &values);
    TrainedModel::new(node.clone(), family.clone(), grid[best].clone(), version)
}

/// Index of the smallest objective value; exact ties resolve to the
/// lexicographically smallest parameter tuple, independent of grid order.
pub(crate) fn argmin_with_tie_break(grid: &[Vec<f64>], values: &[f64]) -> usize {
    let mut best = 0usize;
    for i in 1..values.len() {
        if values[i] < values[best]
            || (values[i] == values[best]
                && cmp_f64_slices(&grid[i], &grid[best]) == Ordering::Less)
        {
            best = i;
        }
    }
    best
}

/// What the mean loss is taken over: a uniform-weight dataset or the exact
/// probability-weighted support of a distribution.
#[derive(Debug, Clone, Copy)]
pub enum RiskData<'a> {
    Dataset(&'a Dataset),
    Distribution(&'a GroundTruthDistribution),
}

/// Mean loss of a predictor over `data` for the targets of `task`.
///
/// The predictor maps a raw input tuple to a prediction; composition with
/// upstream models happens at the call site.
pub fn empirical_risk<F>(
    predict: F,
    data: RiskData<'_>,
    task: &NodeId,
    loss: &LossFunction,
) -> Result<RiskValue>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut acc = 0.0;
    match data {
        RiskData::Dataset(dataset) => {
            let n = dataset.items.len();
            for example in &dataset.items {
                let target = example
                    .targets
                    .get(task)
                    .ok_or_else(|| Error::MissingTargets(task.clone()))?;
                acc += loss.eval(&predict(&example.x)?, target)? / n as f64;
            }
        }
        RiskData::Distribution(dist) => {
            for (example, mass) in dist.support() {
                let target = example
                    .targets
                    .get(task)
                    .ok_or_else(|| Error::MissingTargets(task.clone()))?;
                acc += mass * loss.eval(&predict(&example.x)?, target)?;
            }
        }
    }
    RiskValue::new(acc)
}

// ============================================================================
// Tests
// ============================================================================
