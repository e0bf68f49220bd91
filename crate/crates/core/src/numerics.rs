//! Dense numeric primitives: softmax heads, the order-α Rényi loss for
//! one-hot targets, and a central finite-difference gradient checker.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};

/// Probabilities are clipped to this floor before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// A vector on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Wraps `values` after checking they lie on the simplex.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return usage("probability vector must be nonempty");
        }
        if values.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::Numeric("probability entry outside [0, 1]".into()));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!("probabilities sum to {total}")));
        }
        Ok(ProbVector(values))
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Indices sorted by descending value, ties by ascending index.
pub fn rank_desc(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<ProbVector> {
    if logits.is_empty() {
        return usage("softmax of an empty vector");
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite logit".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(ProbVector(exps.into_iter().map(|e| e / total).collect()))
}

/// Softmax restricted to the `allowed` indices; every other entry is zero.
pub fn masked_softmax(logits: &[f64], allowed: &[usize]) -> Result<ProbVector> {
    if allowed.is_empty() {
        return usage("masked softmax needs at least one allowed index");
    }
    if let Some(&bad) = allowed.iter().find(|&&i| i >= logits.len()) {
        return usage(format!("allowed index {bad} out of range {}", logits.len()));
    }
    let picked: Vec<f64> = allowed.iter().map(|&i| logits[i]).collect();
    let sub = softmax(&picked)?;
    let mut out = vec![0.0; logits.len()];
    for (&i, p) in allowed.iter().zip(sub.iter()) {
        out[i] += p;
    }
    Ok(ProbVector(out))
}

/// Order of the Rényi loss, restricted to (0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RenyiAlpha(f64);

impl RenyiAlpha {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 && alpha <= 1.0 {
            Ok(RenyiAlpha(alpha))
        } else {
            Err(Error::Config(format!("renyi alpha {alpha} outside (0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Multiplier on -ln(p_target): α/(1-α) below one, 1 at the KL limit.
    pub fn scale(self) -> f64 {
        if self.0 == 1.0 {
            1.0
        } else {
            self.0 / (1.0 - self.0)
        }
    }
}

impl Default for RenyiAlpha {
    fn default() -> Self {
        RenyiAlpha(0.9)
    }
}

impl TryFrom<f64> for RenyiAlpha {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        RenyiAlpha::new(value)
    }
}

impl From<RenyiAlpha> for f64 {
    fn from(a: RenyiAlpha) -> f64 {
        a.0
    }
}

fn check_target(len: usize, target: usize) -> Result<()> {
    if target >= len {
        return usage(format!("target class {target} out of range {len}"));
    }
    Ok(())
}

/// Rényi divergence of order α between a predicted distribution and the
/// one-hot encoding of `target`.
///
/// With a one-hot second argument every non-target term vanishes and the sum
/// collapses to `α/(α-1) · ln ŷ_target` for α < 1, and to `-ln ŷ_target` at
/// α = 1.
pub fn renyi_divergence(y_hat: &[f64], target: usize, alpha: f64) -> Result<f64> {
    let alpha = RenyiAlpha::new(alpha)?;
    check_target(y_hat.len(), target)?;
    Ok(renyi_loss(y_hat, target, alpha))
}

pub(crate) fn renyi_loss(y_hat: &[f64], target: usize, alpha: RenyiAlpha) -> f64 {
    let p = y_hat[target].max(PROB_FLOOR);
    let a = alpha.value();
    if a == 1.0 {
        -p.ln()
    } else {
        // ln p ≤ 0 and α-1 < 0, so the product is nonnegative; max() turns -0.0 into 0.0
        (a / (a - 1.0) * p.ln()).max(0.0)
    }
}

/// Gradient of the Rényi loss with respect to the probabilities.
pub fn renyi_grad_probs(y_hat: &[f64], target: usize, alpha: RenyiAlpha) -> Vec<f64> {
    let mut grad = vec![0.0; y_hat.len()];
    let p = y_hat[target];
    if p >= PROB_FLOOR {
        grad[target] = -alpha.scale() / p;
    }
    grad
}

/// Gradient of `renyi(softmax(logits))` with respect to the logits, given the
/// (possibly masked) softmax output. Masked entries have zero probability and
/// receive zero gradient.
pub fn renyi_grad_logits(probs: &[f64], target: usize, alpha: RenyiAlpha) -> Vec<f64> {
    if probs[target] < PROB_FLOOR {
        return vec![0.0; probs.len()];
    }
    let s = alpha.scale();
    probs
        .iter()
        .enumerate()
        .map(|(i, p)| s * (p - if i == target { 1.0 } else { 0.0 }))
        .collect()
}

/// Outcome of comparing an analytic gradient with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Central finite differences of `loss_fn` around `params`, compared with the
/// caller's `analytic` gradient coordinate by coordinate.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    params: &[f64],
    analytic: &[f64],
    step: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if params.len() != analytic.len() {
        return usage(format!(
            "gradient length {} does not match parameter length {}",
            analytic.len(),
            params.len()
        ));
    }
    if params.is_empty() {
        return usage("finite-difference check over zero parameters");
    }
    let mut probe = params.to_vec();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_coordinate: 0,
        analytic: analytic[0],
        numeric: f64::NAN,
    };
    for i in 0..params.len() {
        probe[i] = params[i] + step;
        let up = loss_fn(&probe);
        probe[i] = params[i] - step;
        let down = loss_fn(&probe);
        probe[i] = params[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss probing coordinate {i}")));
        }
        let numeric = (up - down) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if i == 0 || err > report.max_relative_error {
            report = GradCheckReport {
                max_relative_error: err,
                worst_coordinate: i,
                analytic: analytic[i],
                numeric,
            };
        }
    }
    Ok(report)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn all_finite(values: &[f64]) -> bool {
    values.iter().all(|v| v.is_finite())
}
