//! Hybrid prediction: trust a baseline until the online embedding settles,
//! then hand over to the embedding-conditioned model for good.

use serde::{Deserialize, Serialize};

use crate::bnn::{Embedding, PolicyModel};
use crate::counterfactual::PairwiseModel;
use crate::error::{usage, Error, Result};
use crate::jobshop::DemoStep;
use crate::numerics;

/// Anything that can order the legal actions of a step given an embedding.
pub trait Ranker {
    /// Legal action ids, most preferred first.
    fn rank(&self, omega: &[f64], step: &DemoStep) -> Result<Vec<usize>>;
}

/// A ranker whose embedding can be adapted online.
pub trait Adaptive: Ranker {
    fn embed_dim(&self) -> usize;
    fn omega_update(&self, omega: &mut [f64], step: &DemoStep, lr_omega: f64) -> Result<()>;
}

impl Ranker for PolicyModel {
    fn rank(&self, omega: &[f64], step: &DemoStep) -> Result<Vec<usize>> {
        let p = self.predict(omega, step)?;
        let mut ids: Vec<usize> = step.actions.iter().map(|a| a.action_id).collect();
        ids.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        Ok(ids)
    }
}

impl Adaptive for PolicyModel {
    fn embed_dim(&self) -> usize {
        PolicyModel::embed_dim(self)
    }

    fn omega_update(&self, omega: &mut [f64], step: &DemoStep, lr_omega: f64) -> Result<()> {
        PolicyModel::omega_update(self, omega, step, lr_omega)
    }
}

impl Ranker for PairwiseModel {
    fn rank(&self, omega: &[f64], step: &DemoStep) -> Result<Vec<usize>> {
        PairwiseModel::rank(self, omega, step)
    }
}

impl Adaptive for PairwiseModel {
    fn embed_dim(&self) -> usize {
        PairwiseModel::embed_dim(self)
    }

    fn omega_update(&self, omega: &mut [f64], step: &DemoStep, lr_omega: f64) -> Result<()> {
        PairwiseModel::omega_update(self, omega, step, lr_omega)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Predictor {
    Baseline,
    Bnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRecord {
    pub predictor_used: Predictor,
    /// ‖ω after this step's update − ω before it‖.
    pub omega_delta_norm: f64,
    /// Legal actions ranked by the active predictor.
    pub prediction: Vec<usize>,
    pub correct: bool,
    pub omega_after: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftTrace {
    pub steps: Vec<ShiftRecord>,
    pub switch_step: Option<usize>,
}

/// Runs one episode. At step t the active predictor ranks the legal
/// actions, then ω takes one step on the revealed action whichever
/// predictor was active. From t = 1 on, the switch fires (and stays) once
/// the previous step's ω change is below `epsilon`.
pub fn run_episode<B: Adaptive + ?Sized, R: Ranker + ?Sized>(
    bnn: &B,
    baseline: &R,
    stream: &[DemoStep],
    lr_omega: f64,
    epsilon: f64,
) -> Result<ShiftTrace> {
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon {epsilon} must be positive")));
    }
    let mut omega = vec![0.0; bnn.embed_dim()];
    let mut switch_step = None;
    let mut last_delta = f64::INFINITY;
    let mut steps = Vec::with_capacity(stream.len());
    for (t, step) in stream.iter().enumerate() {
        if switch_step.is_none() && t >= 1 && last_delta < epsilon {
            switch_step = Some(t);
        }
        let (used, prediction) = if switch_step.is_some() {
            (Predictor::Bnn, bnn.rank(&omega, step)?)
        } else {
            (Predictor::Baseline, baseline.rank(&[], step)?)
        };
        let before = omega.clone();
        bnn.omega_update(&mut omega, step, lr_omega)?;
        last_delta = numerics::l2_distance(&before, &omega);
        steps.push(ShiftRecord {
            predictor_used: used,
            omega_delta_norm: last_delta,
            correct: prediction.first() == Some(&step.chosen_action_id),
            prediction,
            omega_after: Embedding(omega.clone()),
        });
    }
    Ok(ShiftTrace { steps, switch_step })
}

/// Top-1 accuracy over the whole episode and on each side of the switch;
/// `None` for a segment with no steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeAccuracy {
    pub overall: Option<f64>,
    pub pre_switch: Option<f64>,
    pub post_switch: Option<f64>,
}

pub fn episode_accuracy(trace: &ShiftTrace, ground_truth: &[usize]) -> Result<EpisodeAccuracy> {
    if trace.steps.len() != ground_truth.len() {
        return usage(format!(
            "trace has {} steps but {} ground-truth actions",
            trace.steps.len(),
            ground_truth.len()
        ));
    }
    let split = trace.switch_step.unwrap_or(trace.steps.len());
    let hits: Vec<bool> = trace
        .steps
        .iter()
        .zip(ground_truth)
        .map(|(r, g)| r.prediction.first() == Some(g))
        .collect();
    let frac = |h: &[bool]| (!h.is_empty()).then(|| h.iter().filter(|&&x| x).count() as f64 / h.len() as f64);
    Ok(EpisodeAccuracy {
        overall: frac(&hits),
        pre_switch: frac(&hits[..split]),
        post_switch: frac(&hits[split..]),
    })
}
