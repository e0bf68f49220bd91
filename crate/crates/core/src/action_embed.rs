//! Action embeddings inferred from a learned transition model.
//!
//! Every action falls into a category shared by all demonstrators. A small
//! network maps `[x̄^t, ω_a]` to the standardised next state and the
//! category vectors ω_a are fitted together with it. The fitted vectors can
//! then replace the hand-built action features.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bnn::{derive_seed, Embedding, INIT_STREAM, SHUFFLE_STREAM};
use crate::error::{usage, Error, Result};
use crate::jobshop::{ActionRecord, DemoStep, Demonstration, STATE_FEATURES};
use crate::mlp::{Activation, Head, Mlp, MlpGrads, OutputInit};
use crate::numerics;

const EMBED_STREAM: u64 = 3;

/// Category name → embedding.
pub type ActionEmbeddingTable = BTreeMap<String, Embedding>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActionEmbedConfig {
    pub embed_dim: usize,
    /// Embeddings start uniform in `±init_range`.
    pub init_range: f64,
    pub lr_psi: f64,
    pub lr_embed: f64,
    pub epochs: usize,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for ActionEmbedConfig {
    fn default() -> Self {
        ActionEmbedConfig {
            embed_dim: 4,
            init_range: 0.1,
            lr_psi: 1e-2,
            lr_embed: 1e-1,
            epochs: 30,
            hidden: vec![32],
            seed: 0,
        }
    }
}

impl ActionEmbedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("action embedding dimension must be positive".into()));
        }
        for (name, v) in [("lr_psi", self.lr_psi), ("lr_embed", self.lr_embed)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} {v} must be positive")));
            }
        }
        if !(self.init_range >= 0.0) {
            return Err(Error::Config("init_range must be nonnegative".into()));
        }
        Ok(())
    }
}

/// One observed transition.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub category: String,
    pub next_state: Vec<f64>,
}

/// Transition network together with the target standardisation it was
/// trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub psi: Mlp,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
    pub table: ActionEmbeddingTable,
}

impl TransitionModel {
    /// Predicted next state in original units.
    pub fn predict(&self, state: &[f64], category: &str) -> Result<Vec<f64>> {
        let omega = self
            .table
            .get(category)
            .ok_or_else(|| Error::Usage(format!("unknown action category {category}")))?;
        let mut x = state.to_vec();
        x.extend_from_slice(omega.as_slice());
        let (z, _) = self.psi.forward(&x)?;
        Ok(z.iter()
            .zip(&self.target_mean)
            .zip(&self.target_std)
            .map(|((z, m), s)| z * s + m)
            .collect())
    }
}

fn standardiser(rows: &[Transition]) -> (Vec<f64>, Vec<f64>) {
    let dim = rows[0].next_state.len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(&r.next_state) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in std.iter_mut().zip(&r.next_state).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    for s in &mut std {
        *s = if *s > 1e-12 { s.sqrt() } else { 1.0 };
    }
    (mean, std)
}

/// Fits ψ and the category table by SGD on the mean squared error of the
/// standardised next state. Returns the model and the per-epoch mean loss.
///
/// The table holds every category seen in `rows` plus `extra`; categories
/// that never occur keep their initial vectors.
pub fn train_transitions(
    rows: &[Transition],
    extra: &[String],
    cfg: &ActionEmbedConfig,
) -> Result<(TransitionModel, Vec<f64>)> {
    cfg.validate()?;
    let first = rows.first().ok_or_else(|| Error::Usage("no transitions".into()))?;
    let (sd, nd) = (first.state.len(), first.next_state.len());
    if sd == 0 || nd == 0 {
        return usage("transitions need nonempty states");
    }
    if rows.iter().any(|r| r.state.len() != sd || r.next_state.len() != nd) {
        return usage("transition feature dimensions differ");
    }
    let (mean, std) = standardiser(rows);
    let mut dims = vec![sd + cfg.embed_dim];
    dims.extend(&cfg.hidden);
    dims.push(nd);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INIT_STREAM));
    let mut psi = Mlp::new(&dims, Activation::Tanh, Head::Identity, OutputInit::Uniform, &mut rng)?;
    let mut erng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, EMBED_STREAM));
    let mut table = ActionEmbeddingTable::new();
    let categories: Vec<&str> = {
        let mut c: Vec<&str> = rows
            .iter()
            .map(|r| r.category.as_str())
            .chain(extra.iter().map(String::as_str))
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    for c in categories {
        let v = (0..cfg.embed_dim)
            .map(|_| if cfg.init_range > 0.0 { erng.gen_range(-cfg.init_range..=cfg.init_range) } else { 0.0 })
            .collect();
        table.insert(c.to_string(), Embedding(v));
    }
    let targets: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.next_state.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect())
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM));
    let mut grads = MlpGrads::zeros_like(&psi);
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for &i in &order {
            let r = &rows[i];
            let omega = &table[&r.category];
            let mut x = r.state.clone();
            x.extend_from_slice(omega.as_slice());
            let (out, cache) = psi.forward(&x)?;
            let mut g = vec![0.0; nd];
            for ((gk, o), t) in g.iter_mut().zip(&out).zip(&targets[i]) {
                let d = o - t;
                total += d * d / nd as f64;
                *gk = 2.0 * d / nd as f64;
            }
            grads.fill_zero();
            let gx = psi.backward_into(&cache, &g, &mut grads)?;
            psi.sgd_step(&grads, cfg.lr_psi)?;
            let w = table.get_mut(&r.category).expect("category present");
            for (v, d) in w.0.iter_mut().zip(&gx[sd..]) {
                *v -= cfg.lr_embed * d;
            }
        }
        let m = total / rows.len() as f64;
        if !m.is_finite() || !numerics::all_finite(&psi.flat_params()) {
            return Err(Error::Numeric(format!("transition training diverged at epoch {}", epoch + 1)));
        }
        curve.push(m);
    }
    Ok((
        TransitionModel {
            psi,
            target_mean: mean,
            target_std: std,
            table,
        },
        curve,
    ))
}

fn tercile(v: f64, lo: f64, hi: f64) -> usize {
    if v < lo {
        0
    } else if v < hi {
        1
    } else {
        2
    }
}

/// Category of a scheduling action: the agent crossed with coarse buckets
/// of the task's duration, deadline and distance from the agent. WAIT has
/// its own category.
pub fn action_category(record: &ActionRecord, num_tasks: usize, num_agents: usize) -> String {
    if record.action_id >= num_tasks * num_agents {
        return "wait".to_string();
    }
    let agent = record.action_id / num_tasks;
    let f = &record.features;
    format!(
        "a{agent}-dur{}-ddl{}-dist{}",
        tercile(f[1], 0.35, 0.75),
        tercile(f[3], 0.5, 0.9),
        tercile(f[2], 0.25, 0.5)
    )
}

/// Transitions along each demonstration's chain of decision steps: the
/// successor of a decision is the next decision's state (forced moves in
/// between are folded into the transition), or the recorded next state
/// after the last decision.
pub fn decision_transitions(demos: &[Demonstration]) -> Result<Vec<Transition>> {
    let mut out = Vec::new();
    for d in demos {
        let steps: Vec<&DemoStep> = d.decision_steps().collect();
        for (i, s) in steps.iter().enumerate() {
            let chosen = &s.actions[s.chosen_index()?];
            let next = match steps.get(i + 1) {
                Some(n) => n.state_features.clone(),
                None => s.next_state_features.clone(),
            };
            if s.state_features.len() != STATE_FEATURES || next.len() != STATE_FEATURES {
                return usage(format!("demonstration {} has malformed state features", d.demonstrator_id));
            }
            out.push(Transition {
                state: s.state_features.clone(),
                category: action_category(chosen, d.num_tasks, d.num_agents),
                next_state: next,
            });
        }
    }
    Ok(out)
}

/// Fits action embeddings on scheduling demonstrations.
pub fn train_transition(demos: &[Demonstration], cfg: &ActionEmbedConfig) -> Result<(TransitionModel, Vec<f64>)> {
    if demos.is_empty() {
        return usage("empty dataset");
    }
    let agents = demos.iter().map(|d| d.num_agents).max().unwrap_or(0);
    train_transitions(&decision_transitions(demos)?, &all_categories(agents), cfg)
}

/// Every category name for `num_agents` agents, WAIT included.
pub fn all_categories(num_agents: usize) -> Vec<String> {
    let mut out = vec!["wait".to_string()];
    for a in 0..num_agents {
        for dur in 0..3 {
            for ddl in 0..3 {
                for dist in 0..3 {
                    out.push(format!("a{a}-dur{dur}-ddl{ddl}-dist{dist}"));
                }
            }
        }
    }
    out
}

/// Replaces every action's features by its category embedding.
pub fn substitute_embeddings(demos: &[Demonstration], table: &ActionEmbeddingTable) -> Result<Vec<Demonstration>> {
    demos
        .iter()
        .map(|d| {
            let mut d = d.clone();
            for s in &mut d.steps {
                for a in &mut s.actions {
                    let cat = action_category(a, d.num_tasks, d.num_agents);
                    let w = table
                        .get(&cat)
                        .ok_or_else(|| Error::Usage(format!("action category {cat} is not in the table")))?;
                    a.features = w.0.clone();
                }
            }
            Ok(d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jobshop::generate_demonstrations;

    fn toy(categories: &[(&str, f64)], n: usize, seed: u64) -> Vec<Transition> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let (c, shift) = categories[i % categories.len()];
                let s: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
                Transition {
                    next_state: s.iter().map(|v| v + shift).collect(),
                    state: s,
                    category: c.into(),
                }
            })
            .collect()
    }

    #[test]
    fn identity_dynamics_are_learned() {
        let cfg = ActionEmbedConfig {
            epochs: 200,
            lr_psi: 2e-2,
            ..ActionEmbedConfig::default()
        };
        let (_, curve) = train_transitions(&toy(&[("only", 0.0)], 200, 1), &[], &cfg).unwrap();
        assert!(*curve.last().unwrap() < 1e-3, "{curve:?}");
    }

    #[test]
    fn distinct_effects_separate_embeddings() {
        let rows = toy(&[("left", -0.8), ("left-again", -0.8), ("right", 0.8)], 600, 2);
        let cfg = ActionEmbedConfig {
            epochs: 60,
            lr_embed: 5e-2,
            ..ActionEmbedConfig::default()
        };
        let (m, _) = train_transitions(&rows, &[], &cfg).unwrap();
        let t = &m.table;
        let apart = numerics::l2_distance(t["left"].as_slice(), t["right"].as_slice());
        let same = numerics::l2_distance(t["left"].as_slice(), t["left-again"].as_slice());
        assert!(apart > same, "apart {apart} same {same}");
    }

    #[test]
    fn zero_epochs_keep_the_initial_table() {
        let cfg = ActionEmbedConfig {
            epochs: 0,
            ..ActionEmbedConfig::default()
        };
        let (m, curve) = train_transitions(&toy(&[("a", 0.0), ("b", 1.0)], 10, 3), &[], &cfg).unwrap();
        assert!(curve.is_empty());
        let mut erng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, EMBED_STREAM));
        let first: Vec<f64> = (0..4).map(|_| erng.gen_range(-0.1..=0.1)).collect();
        assert_eq!(m.table["a"].0, first);
        assert!(m.table.values().flat_map(|w| &w.0).all(|v| v.abs() <= 0.1));
    }

    #[test]
    fn substitution_resizes_action_features() {
        let demos = generate_demonstrations(3, [1.0, 1.0, 1.0], 5, "s").unwrap();
        let cfg = ActionEmbedConfig {
            epochs: 1,
            ..ActionEmbedConfig::default()
        };
        let (m, _) = train_transition(&demos, &cfg).unwrap();
        let sub = substitute_embeddings(&demos, &m.table).unwrap();
        assert!(sub.iter().flat_map(|d| &d.steps).flat_map(|s| &s.actions).all(|a| a.features.len() == 4));
        assert_eq!(m.table.len(), all_categories(2).len());
        assert!(substitute_embeddings(&demos, &ActionEmbeddingTable::new()).is_err());
    }
}
