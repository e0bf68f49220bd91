//! Counterfactual (pairwise) reasoning.
//!
//! Each observed choice of `a` over a legal alternative `a'` becomes two
//! mirrored binary examples, `[ω, x̄, x_a − x_a'] → 1` and
//! `[ω, x̄, x_a' − x_a] → 0`. A classifier trained on them scores each
//! candidate by summing its preference over every alternative; the best sum
//! is the prediction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bnn::{train_examples, EmbeddedNet, Embedding, EmbeddingTable, Example, Inputs, TrainConfig};
use crate::error::{usage, Error, Result};
use crate::jobshop::{ActionRecord, DemoStep, Demonstration};
use crate::numerics::{masked_softmax, RenyiAlpha};

/// Output class of the preference classifier meaning "first action wins".
pub const PREFER_FIRST: usize = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseExample {
    /// `[ω, x̄, x_a − x_a']`.
    pub features: Vec<f64>,
    pub label: u8,
    pub demonstrator_id: String,
    pub t: usize,
}

/// `[x̄, x_a − x_b]`.
pub fn pair_features(state_features: &[f64], first: &[f64], second: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(state_features.len() + first.len());
    x.extend_from_slice(state_features);
    x.extend(first.iter().zip(second).map(|(a, b)| a - b));
    x
}

/// Pairwise rows of one step without the embedding slice, as
/// `(features, label)`; empty for forced moves.
pub fn step_pairs(step: &DemoStep) -> Result<Vec<(Vec<f64>, u8)>> {
    let chosen = step.chosen_index()?;
    let a = &step.actions[chosen];
    let mut out = Vec::with_capacity(2 * step.actions.len().saturating_sub(1));
    for other in step.actions.iter().filter(|o| o.action_id != a.action_id) {
        out.push((pair_features(&step.state_features, &a.features, &other.features), 1));
        out.push((pair_features(&step.state_features, &other.features, &a.features), 0));
    }
    Ok(out)
}

/// Every pairwise example of a demonstration under embedding `omega`.
pub fn build_pairwise(demo: &Demonstration, omega: &Embedding) -> Result<Vec<PairwiseExample>> {
    let mut out = Vec::new();
    for (t, step) in demo.steps.iter().enumerate() {
        for (rest, label) in step_pairs(step)? {
            let mut features = omega.0.clone();
            features.extend(rest);
            out.push(PairwiseExample {
                features,
                label,
                demonstrator_id: demo.demonstrator_id.clone(),
                t,
            });
        }
    }
    Ok(out)
}

/// Anything that can say how strongly action `first` is preferred to
/// `second` in a state, given an embedding.
pub trait Preference {
    fn prefer(&self, omega: &[f64], state_features: &[f64], first: &[f64], second: &[f64]) -> Result<f64>;
}

impl<F> Preference for F
where
    F: Fn(&[f64], &[f64], &[f64], &[f64]) -> f64,
{
    fn prefer(&self, omega: &[f64], state_features: &[f64], first: &[f64], second: &[f64]) -> Result<f64> {
        Ok(self(omega, state_features, first, second))
    }
}

/// Σ over alternatives of the preference for each candidate, in the order
/// of `actions`.
pub fn score_actions<P: Preference + ?Sized>(
    pref: &P,
    omega: &[f64],
    state_features: &[f64],
    actions: &[ActionRecord],
) -> Result<Vec<f64>> {
    actions
        .iter()
        .map(|a| {
            actions
                .iter()
                .filter(|b| b.action_id != a.action_id)
                .map(|b| pref.prefer(omega, state_features, &a.features, &b.features))
                .sum()
        })
        .collect()
}

/// Candidate ids ordered by score, ties broken by lower action id.
pub fn rank_actions<P: Preference + ?Sized>(
    pref: &P,
    omega: &[f64],
    state_features: &[f64],
    actions: &[ActionRecord],
) -> Result<Vec<usize>> {
    if actions.is_empty() {
        return usage("no candidate actions");
    }
    if actions.len() == 1 {
        return Ok(vec![actions[0].action_id]);
    }
    let scores = score_actions(pref, omega, state_features, actions)?;
    let mut order: Vec<(f64, usize)> = scores
        .into_iter()
        .zip(actions.iter().map(|a| a.action_id))
        .collect();
    order.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    Ok(order.into_iter().map(|(_, id)| id).collect())
}

/// The argmax-of-sums action. A single candidate is returned without
/// consulting the preference function.
pub fn predict_action<P: Preference + ?Sized>(
    pref: &P,
    omega: &[f64],
    state_features: &[f64],
    actions: &[ActionRecord],
) -> Result<usize> {
    Ok(rank_actions(pref, omega, state_features, actions)?[0])
}

/// Binary preference network with per-demonstrator embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseModel {
    pub model: EmbeddedNet,
    pub renyi_alpha: RenyiAlpha,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub embeddings: EmbeddingTable,
}

impl Preference for PairwiseModel {
    fn prefer(&self, omega: &[f64], state_features: &[f64], first: &[f64], second: &[f64]) -> Result<f64> {
        let logits = self
            .model
            .logits(omega, &pair_features(state_features, first, second))?;
        Ok(masked_softmax(&logits, &[0, 1])?[PREFER_FIRST])
    }
}

/// Pairwise training rows for every demonstration; the embedding slice is
/// left out so the live ω is read at every visit.
pub fn pairwise_examples(demos: &[Demonstration]) -> Result<(Vec<Example>, usize)> {
    let mut out = Vec::new();
    let mut dim = None;
    for (g, d) in demos.iter().enumerate() {
        if d.steps.is_empty() {
            return usage(format!("demonstration {} has no steps", d.demonstrator_id));
        }
        for s in &d.steps {
            for (features, label) in step_pairs(s)? {
                match dim {
                    None => dim = Some(features.len()),
                    Some(n) if n != features.len() => {
                        return usage(format!(
                            "demonstration {} has pair features of length {}, expected {n}",
                            d.demonstrator_id,
                            features.len()
                        ))
                    }
                    _ => {}
                }
                out.push(Example {
                    group: g,
                    inputs: Inputs::Classes {
                        features,
                        allowed: vec![0, 1],
                    },
                    target: label as usize,
                });
            }
        }
    }
    let dim = dim.ok_or_else(|| Error::Usage("dataset has no decision steps".into()))?;
    Ok((out, dim))
}

/// Trains the preference classifier concurrently over θ and each
/// demonstrator's ω.
pub fn train_pairwise_bnn(demos: &[Demonstration], cfg: &TrainConfig) -> Result<(PairwiseModel, Vec<f64>)> {
    if demos.is_empty() {
        return usage("empty dataset");
    }
    let (examples, dim) = pairwise_examples(demos)?;
    let out = train_examples(&examples, demos.len(), dim, 2, cfg)?;
    let embeddings = if cfg.embed_dim > 0 {
        demos
            .iter()
            .map(|d| d.demonstrator_id.clone())
            .zip(out.embeddings)
            .collect()
    } else {
        EmbeddingTable::new()
    };
    Ok((
        PairwiseModel {
            model: out.model,
            renyi_alpha: cfg.renyi_alpha,
            embeddings,
        },
        out.loss_curve,
    ))
}

impl PairwiseModel {
    pub fn embed_dim(&self) -> usize {
        self.model.embed_dim
    }

    pub fn rank(&self, omega: &[f64], step: &DemoStep) -> Result<Vec<usize>> {
        rank_actions(self, omega, &step.state_features, &step.actions)
    }

    /// One ω step using the mean gradient over the step's pairwise rows.
    pub fn omega_update(&self, omega: &mut [f64], step: &DemoStep, lr_omega: f64) -> Result<()> {
        if self.embed_dim() == 0 {
            return Ok(());
        }
        let pairs = step_pairs(step)?;
        if pairs.is_empty() {
            return Ok(());
        }
        let rows: Vec<(Inputs, usize)> = pairs
            .into_iter()
            .map(|(features, label)| {
                (
                    Inputs::Classes {
                        features,
                        allowed: vec![0, 1],
                    },
                    label as usize,
                )
            })
            .collect();
        let g = self
            .model
            .omega_gradient(omega, rows.iter().map(|(i, t)| (i, *t)), self.renyi_alpha)?;
        for (w, d) in omega.iter_mut().zip(g) {
            *w -= lr_omega * d;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jobshop::{generate_demonstrations, EvalOnly, Heuristic};
    use crate::serial::FORMAT_VERSION;

    fn step(n: usize, chosen: usize) -> DemoStep {
        DemoStep {
            state_features: vec![0.1, 0.2],
            actions: (0..n)
                .map(|i| ActionRecord {
                    action_id: i * 3,
                    features: vec![i as f64, 1.0 - i as f64],
                })
                .collect(),
            chosen_action_id: chosen,
            next_state_features: vec![0.0, 0.0],
        }
    }

    fn demo(steps: Vec<DemoStep>) -> Demonstration {
        Demonstration {
            format_version: FORMAT_VERSION,
            demonstrator_id: "x".into(),
            eval_only: Some(EvalOnly {
                hidden_policy: Heuristic::Edf,
            }),
            num_agents: 1,
            num_tasks: 1,
            steps,
        }
    }

    #[test]
    fn three_candidates_give_four_balanced_examples() {
        let ex = build_pairwise(&demo(vec![step(3, 3)]), &Embedding(vec![0.5])).unwrap();
        let labels: Vec<u8> = ex.iter().map(|e| e.label).collect();
        assert_eq!(labels.len(), 4);
        assert_eq!(labels.iter().filter(|&&l| l == 1).count(), 2);
    }

    #[test]
    fn forced_move_gives_nothing() {
        assert!(build_pairwise(&demo(vec![step(1, 0)]), &Embedding(vec![])).unwrap().is_empty());
    }

    #[test]
    fn mirrored_pairs_negate_the_difference() {
        let ex = build_pairwise(&demo(vec![step(2, 0)]), &Embedding(vec![0.5])).unwrap();
        let (a, b) = (&ex[0].features, &ex[1].features);
        assert_eq!(a[..3], b[..3]);
        for i in 3..a.len() {
            assert_eq!(a[i], -b[i]);
        }
        assert_eq!((ex[0].label, ex[1].label), (1, 0));
    }

    #[test]
    fn chosen_outside_legal_set_is_a_data_error() {
        let r = build_pairwise(&demo(vec![step(2, 1)]), &Embedding(vec![]));
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn single_candidate_skips_the_preference() {
        let pref = |_: &[f64], _: &[f64], _: &[f64], _: &[f64]| -> f64 { panic!("must not be called") };
        let s = step(1, 0);
        assert_eq!(predict_action(&pref, &[], &s.state_features, &s.actions).unwrap(), 0);
    }

    #[test]
    fn constant_preference_falls_back_to_lowest_id() {
        let pref = |_: &[f64], _: &[f64], _: &[f64], _: &[f64]| 0.5;
        let mut s = step(4, 0);
        s.actions.reverse();
        assert_eq!(predict_action(&pref, &[], &s.state_features, &s.actions).unwrap(), 0);
        assert!(predict_action(&pref, &[], &s.state_features, &[]).is_err());
    }

    #[test]
    fn counts_follow_the_legal_set_sizes() {
        let demos = generate_demonstrations(2, [1.0, 1.0, 1.0], 8, "c").unwrap();
        for d in &demos {
            let ex = build_pairwise(d, &Embedding::zeros(2)).unwrap();
            let expect: usize = d.steps.iter().map(|s| 2 * (s.actions.len() - 1)).sum();
            assert_eq!(ex.len(), expect);
            assert_eq!(ex.iter().map(|e| e.label as usize).sum::<usize>() * 2, expect);
        }
    }

    #[test]
    fn separable_toy_preferences_are_learned() {
        // the preferred action always has the larger first feature
        let mut demos = Vec::new();
        for k in 0..6 {
            let mut steps = Vec::new();
            for j in 0..8 {
                let mut s = step(4, 0);
                for (i, a) in s.actions.iter_mut().enumerate() {
                    a.features = vec![((i * 7 + j + k) % 5) as f64 / 5.0, (j as f64) / 8.0];
                }
                let best = s
                    .actions
                    .iter()
                    .max_by(|a, b| a.features[0].total_cmp(&b.features[0]).then(b.action_id.cmp(&a.action_id)))
                    .unwrap()
                    .action_id;
                s.chosen_action_id = best;
                steps.push(s);
            }
            let mut d = demo(steps);
            d.demonstrator_id = format!("toy-{k}");
            demos.push(d);
        }
        let cfg = TrainConfig {
            epochs: 200,
            embed_dim: 2,
            ..TrainConfig::default()
        };
        let (model, _) = train_pairwise_bnn(&demos, &cfg).unwrap();
        let (examples, _) = pairwise_examples(&demos).unwrap();
        let mut correct = 0;
        for ex in &examples {
            let omega = &model.embeddings[&demos[ex.group].demonstrator_id];
            let p = model.model.distribution(omega.as_slice(), &ex.inputs).unwrap();
            if p.argmax() == ex.target {
                correct += 1;
            }
        }
        let acc = correct as f64 / examples.len() as f64;
        assert!(acc >= 0.99, "training accuracy {acc}");
    }
}
