//! Embedding-conditioned policy networks.
//!
//! The network input is `[ω, features]` where ω is a short latent vector
//! owned by one demonstrator. During training every example step moves both
//! the shared weights and that demonstrator's ω down the gradient of the
//! Rényi loss. At test time the weights are frozen and only a fresh ω is
//! adapted, one gradient step per observed action.
//!
//! The same machinery serves the homogeneous baseline (`embed_dim = 0`) and
//! the pairwise preference classifier in [`crate::counterfactual`].

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::jobshop::{DemoStep, Demonstration, ACTION_FEATURES, STATE_FEATURES};
use crate::mlp::{Activation, Head, Mlp, MlpGrads, OutputInit};
use crate::numerics::{self, masked_softmax, renyi_grad_logits, renyi_loss, ProbVector, RenyiAlpha};

/// Stable sub-seed for an independent RNG stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) const INIT_STREAM: u64 = 1;
pub(crate) const SHUFFLE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn zeros(dim: usize) -> Self {
        Embedding(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Demonstrator id → embedding.
pub type EmbeddingTable = BTreeMap<String, Embedding>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_theta: f64,
    pub lr_omega: f64,
    pub renyi_alpha: RenyiAlpha,
    pub embed_dim: usize,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub seed: u64,
    /// Convergence threshold on ‖Δω‖ used by the hybrid switch.
    pub epsilon: f64,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_theta: 1e-3,
            lr_omega: 5e-2,
            renyi_alpha: RenyiAlpha::default(),
            embed_dim: 3,
            epochs: 30,
            minibatch_size: 1,
            seed: 0,
            epsilon: 1e-3,
            hidden: vec![32, 32],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_theta > 0.0) || !self.lr_theta.is_finite() {
            return Err(Error::Config(format!("lr_theta {} must be positive", self.lr_theta)));
        }
        if !(self.lr_omega >= 0.0) || !self.lr_omega.is_finite() {
            return Err(Error::Config(format!("lr_omega {} must be nonnegative", self.lr_omega)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        if self.minibatch_size == 0 {
            return Err(Error::Config("minibatch_size must be at least 1".into()));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Same config without a latent embedding.
    pub fn homogeneous(&self) -> Self {
        TrainConfig {
            embed_dim: 0,
            lr_omega: 0.0,
            ..self.clone()
        }
    }
}

/// Network inputs of one example, without the embedding slice.
#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    /// A single row; the softmax ranges over the `allowed` output classes.
    Classes { features: Vec<f64>, allowed: Vec<usize> },
    /// One row per candidate, each mapped to a single logit; the softmax
    /// ranges over the rows.
    Candidates(Vec<Vec<f64>>),
}

impl Inputs {
    fn row_len(&self) -> Option<usize> {
        match self {
            Inputs::Classes { features, .. } => Some(features.len()),
            Inputs::Candidates(rows) => {
                let n = rows.first()?.len();
                rows.iter().all(|r| r.len() == n).then_some(n)
            }
        }
    }
}

/// One supervised example owned by demonstrator `group`.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub group: usize,
    pub inputs: Inputs,
    /// Output class for [`Inputs::Classes`], row index for
    /// [`Inputs::Candidates`].
    pub target: usize,
}

/// A network whose input begins with an `embed_dim`-long embedding slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedNet {
    pub net: Mlp,
    pub embed_dim: usize,
}

/// What [`train_examples`] returns.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: EmbeddedNet,
    /// Indexed by example group.
    pub embeddings: Vec<Embedding>,
    /// Mean loss per epoch.
    pub loss_curve: Vec<f64>,
}

impl EmbeddedNet {
    pub fn new(feature_dim: usize, n_out: usize, cfg: &TrainConfig) -> Result<Self> {
        let mut dims = vec![cfg.embed_dim + feature_dim];
        dims.extend(&cfg.hidden);
        dims.push(n_out);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INIT_STREAM));
        let net = Mlp::new(&dims, Activation::Tanh, Head::Identity, OutputInit::Zero, &mut rng)?;
        Ok(EmbeddedNet {
            net,
            embed_dim: cfg.embed_dim,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.net.input_dim() - self.embed_dim
    }

    pub fn n_out(&self) -> usize {
        self.net.output_dim()
    }

    fn input(&self, omega: &[f64], features: &[f64]) -> Result<Vec<f64>> {
        if omega.len() != self.embed_dim {
            return usage(format!(
                "embedding has length {}, model expects {}",
                omega.len(),
                self.embed_dim
            ));
        }
        if features.len() != self.feature_dim() {
            return usage(format!(
                "feature vector has length {}, model expects {}",
                features.len(),
                self.feature_dim()
            ));
        }
        let mut x = Vec::with_capacity(self.net.input_dim());
        x.extend_from_slice(omega);
        x.extend_from_slice(features);
        Ok(x)
    }

    pub fn logits(&self, omega: &[f64], features: &[f64]) -> Result<Vec<f64>> {
        Ok(self.net.forward(&self.input(omega, features)?)?.0)
    }

    /// Predicted distribution: over output classes (zero outside `allowed`)
    /// or over candidate rows.
    pub fn distribution(&self, omega: &[f64], inputs: &Inputs) -> Result<ProbVector> {
        match inputs {
            Inputs::Classes { features, allowed } => masked_softmax(&self.logits(omega, features)?, allowed),
            Inputs::Candidates(rows) => {
                self.check_scorer()?;
                let logits = rows
                    .iter()
                    .map(|r| Ok(self.logits(omega, r)?[0]))
                    .collect::<Result<Vec<f64>>>()?;
                numerics::softmax(&logits)
            }
        }
    }

    fn check_scorer(&self) -> Result<()> {
        if self.n_out() != 1 {
            return usage("candidate scoring needs a single-output network");
        }
        Ok(())
    }

    /// Loss of one example; parameter gradients are added into `grads` and
    /// the embedding gradient is returned.
    pub fn accumulate(
        &self,
        omega: &[f64],
        inputs: &Inputs,
        target: usize,
        alpha: RenyiAlpha,
        grads: &mut MlpGrads,
    ) -> Result<(f64, Vec<f64>)> {
        match inputs {
            Inputs::Classes { features, allowed } => {
                if !allowed.contains(&target) {
                    return Err(Error::Data(format!("target {target} is not an allowed class")));
                }
                let x = self.input(omega, features)?;
                let (logits, cache) = self.net.forward(&x)?;
                let probs = masked_softmax(&logits, allowed)?;
                let loss = renyi_loss(&probs, target, alpha);
                let g = renyi_grad_logits(&probs, target, alpha);
                let gx = self.net.backward_into(&cache, &g, grads)?;
                Ok((loss, gx[..self.embed_dim].to_vec()))
            }
            Inputs::Candidates(rows) => {
                self.check_scorer()?;
                if target >= rows.len() {
                    return Err(Error::Data(format!("target row {target} of {}", rows.len())));
                }
                let mut caches = Vec::with_capacity(rows.len());
                let mut logits = Vec::with_capacity(rows.len());
                for r in rows {
                    let (out, cache) = self.net.forward(&self.input(omega, r)?)?;
                    logits.push(out[0]);
                    caches.push(cache);
                }
                let probs = numerics::softmax(&logits)?;
                let loss = renyi_loss(&probs, target, alpha);
                let g = renyi_grad_logits(&probs, target, alpha);
                let mut gw = vec![0.0; self.embed_dim];
                for (cache, gi) in caches.iter().zip(g) {
                    let gx = self.net.backward_into(cache, &[gi], grads)?;
                    for (a, b) in gw.iter_mut().zip(&gx) {
                        *a += b;
                    }
                }
                Ok((loss, gw))
            }
        }
    }

    /// Loss and full gradients of one example.
    pub fn loss_and_grads(
        &self,
        omega: &[f64],
        example: &Example,
        alpha: RenyiAlpha,
    ) -> Result<(f64, MlpGrads, Vec<f64>)> {
        let mut grads = MlpGrads::zeros_like(&self.net);
        let (loss, gw) = self.accumulate(omega, &example.inputs, example.target, alpha, &mut grads)?;
        Ok((loss, grads, gw))
    }

    /// Mean embedding gradient over a set of examples, weights untouched.
    pub fn omega_gradient<'a, I>(&self, omega: &[f64], examples: I, alpha: RenyiAlpha) -> Result<Vec<f64>>
    where
        I: IntoIterator<Item = (&'a Inputs, usize)>,
    {
        let mut scratch = MlpGrads::zeros_like(&self.net);
        let mut total = vec![0.0; self.embed_dim];
        let mut n = 0usize;
        for (inputs, target) in examples {
            let (_, g) = self.accumulate(omega, inputs, target, alpha, &mut scratch)?;
            for (t, v) in total.iter_mut().zip(g) {
                *t += v;
            }
            n += 1;
        }
        if n > 0 {
            total.iter_mut().for_each(|t| *t /= n as f64);
        }
        Ok(total)
    }
}

/// Concurrent SGD over shared weights and per-group embeddings.
///
/// Examples are visited in a seeded shuffled order. With a minibatch larger
/// than one, weight gradients are averaged over the batch while each
/// embedding takes the sum of its own examples' steps.
pub fn train_examples(
    examples: &[Example],
    n_groups: usize,
    feature_dim: usize,
    n_out: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if examples.is_empty() {
        return usage("no training examples");
    }
    if let Some(bad) = examples
        .iter()
        .find(|e| e.group >= n_groups || e.inputs.row_len() != Some(feature_dim))
    {
        return usage(format!(
            "example for group {} has rows of length {:?}; expected group < {n_groups} and {feature_dim} features",
            bad.group,
            bad.inputs.row_len()
        ));
    }
    let mut model = EmbeddedNet::new(feature_dim, n_out, cfg)?;
    let mut embeddings = vec![Embedding::zeros(cfg.embed_dim); n_groups];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM));
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut grads = MlpGrads::zeros_like(&model.net);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let batch = cfg.minibatch_size;
    let mut omega_steps: Vec<(usize, Vec<f64>)> = Vec::with_capacity(batch);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            grads.fill_zero();
            omega_steps.clear();
            for &i in chunk {
                let ex = &examples[i];
                let (loss, gw) = model.accumulate(
                    embeddings[ex.group].as_slice(),
                    &ex.inputs,
                    ex.target,
                    cfg.renyi_alpha,
                    &mut grads,
                )?;
                total += loss;
                omega_steps.push((ex.group, gw));
            }
            if chunk.len() > 1 {
                grads.scale(1.0 / chunk.len() as f64);
            }
            model.net.sgd_step(&grads, cfg.lr_theta)?;
            for (g, gw) in &omega_steps {
                for (w, d) in embeddings[*g].0.iter_mut().zip(gw) {
                    *w -= cfg.lr_omega * d;
                }
            }
        }
        let mean = total / examples.len() as f64;
        if !mean.is_finite() || !numerics::all_finite(&model.net.flat_params()) {
            return Err(Error::Numeric(format!("training diverged at epoch {}", epoch + 1)));
        }
        loss_curve.push(mean);
    }
    Ok(TrainOutcome {
        model,
        embeddings,
        loss_curve,
    })
}

/// How a decision step is presented to the policy network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyLayout {
    /// One wide input holding every action slot, one logit per slot.
    Slots,
    /// A single scorer shared by all actions: `[ω, x̄, x_a] → logit`,
    /// softmax over the legal actions.
    Shared,
}

/// Input layout for the full-action-space policy: the state features, then
/// for every action slot a legality flag followed by that action's features
/// (zeros when the slot is illegal).
pub fn slot_features(step: &DemoStep, num_slots: usize) -> Result<Vec<f64>> {
    let mut x = vec![0.0; slot_feature_dim(num_slots)];
    x[..STATE_FEATURES].copy_from_slice(&step.state_features);
    for a in &step.actions {
        if a.action_id >= num_slots || a.features.len() != ACTION_FEATURES {
            return Err(Error::Data(format!("action {} does not fit the slot layout", a.action_id)));
        }
        let at = STATE_FEATURES + a.action_id * (ACTION_FEATURES + 1);
        x[at] = 1.0;
        x[at + 1..at + 1 + ACTION_FEATURES].copy_from_slice(&a.features);
    }
    Ok(x)
}

pub fn slot_feature_dim(num_slots: usize) -> usize {
    STATE_FEATURES + num_slots * (ACTION_FEATURES + 1)
}

pub fn allowed_slots(step: &DemoStep) -> Vec<usize> {
    step.actions.iter().map(|a| a.action_id).collect()
}

impl PolicyLayout {
    /// Row width before any extra features.
    pub fn feature_dim(self, num_slots: usize) -> usize {
        match self {
            PolicyLayout::Slots => slot_feature_dim(num_slots),
            PolicyLayout::Shared => STATE_FEATURES + ACTION_FEATURES,
        }
    }

    pub fn n_out(self, num_slots: usize) -> usize {
        match self {
            PolicyLayout::Slots => num_slots,
            PolicyLayout::Shared => 1,
        }
    }

    /// Network inputs for a step, with `extra` appended to every row.
    pub fn inputs(self, step: &DemoStep, num_slots: usize, extra: &[f64]) -> Result<Inputs> {
        Ok(match self {
            PolicyLayout::Slots => {
                let mut features = slot_features(step, num_slots)?;
                features.extend_from_slice(extra);
                Inputs::Classes {
                    features,
                    allowed: allowed_slots(step),
                }
            }
            PolicyLayout::Shared => Inputs::Candidates(
                step.actions
                    .iter()
                    .map(|a| {
                        if a.features.len() != ACTION_FEATURES {
                            return Err(Error::Data(format!(
                                "action {} has {} features",
                                a.action_id,
                                a.features.len()
                            )));
                        }
                        let mut row = step.state_features.clone();
                        row.extend_from_slice(&a.features);
                        row.extend_from_slice(extra);
                        Ok(row)
                    })
                    .collect::<Result<_>>()?,
            ),
        })
    }

    /// Target index matching [`PolicyLayout::inputs`].
    pub fn target(self, step: &DemoStep) -> Result<usize> {
        let row = step.chosen_index()?;
        Ok(match self {
            PolicyLayout::Slots => step.chosen_action_id,
            PolicyLayout::Shared => row,
        })
    }

    /// Spreads a distribution from [`EmbeddedNet::distribution`] over the
    /// full action catalogue.
    pub fn to_slots(self, dist: ProbVector, step: &DemoStep, num_slots: usize) -> Result<ProbVector> {
        match self {
            PolicyLayout::Slots => Ok(dist),
            PolicyLayout::Shared => {
                let mut out = vec![0.0; num_slots];
                for (a, p) in step.actions.iter().zip(dist.iter()) {
                    out[a.action_id] = *p;
                }
                ProbVector::new(out)
            }
        }
    }
}

pub(crate) fn check_uniform(demos: &[Demonstration]) -> Result<usize> {
    let first = demos.first().ok_or_else(|| Error::Usage("empty dataset".into()))?;
    let slots = first.num_action_slots();
    for d in demos {
        if d.steps.is_empty() {
            return usage(format!("demonstration {} has no steps", d.demonstrator_id));
        }
        if d.num_action_slots() != slots {
            return usage(format!("demonstration {} has a different action space", d.demonstrator_id));
        }
        if d.steps.iter().any(|s| s.state_features.len() != STATE_FEATURES) {
            return usage(format!("demonstration {} has malformed state features", d.demonstrator_id));
        }
    }
    Ok(slots)
}

/// Examples for every decision step; `extra[i]` is appended to every input
/// row of demonstration `i`.
pub fn policy_examples(
    demos: &[Demonstration],
    layout: PolicyLayout,
    extra: Option<&[Vec<f64>]>,
) -> Result<Vec<Example>> {
    let slots = check_uniform(demos)?;
    let mut out = Vec::new();
    for (g, d) in demos.iter().enumerate() {
        let more = extra.map(|e| e[g].as_slice()).unwrap_or(&[]);
        for s in d.decision_steps() {
            out.push(Example {
                group: g,
                inputs: layout.inputs(s, slots, more)?,
                target: layout.target(s)?,
            });
        }
    }
    Ok(out)
}

/// A trained policy together with its demonstrator embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub model: EmbeddedNet,
    pub layout: PolicyLayout,
    pub num_slots: usize,
    pub renyi_alpha: RenyiAlpha,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub embeddings: EmbeddingTable,
}

/// Trains the policy over θ and every demonstrator's ω at once.
pub fn train_concurrent(
    demos: &[Demonstration],
    layout: PolicyLayout,
    cfg: &TrainConfig,
) -> Result<(PolicyModel, Vec<f64>)> {
    train_policy_with_extra(demos, layout, None, 0, cfg)
}

/// As [`train_concurrent`], with `extra_dim` extra features per
/// demonstration appended to every input row.
pub fn train_policy_with_extra(
    demos: &[Demonstration],
    layout: PolicyLayout,
    extra: Option<&[Vec<f64>]>,
    extra_dim: usize,
    cfg: &TrainConfig,
) -> Result<(PolicyModel, Vec<f64>)> {
    let slots = check_uniform(demos)?;
    let examples = policy_examples(demos, layout, extra)?;
    let out = train_examples(
        &examples,
        demos.len(),
        layout.feature_dim(slots) + extra_dim,
        layout.n_out(slots),
        cfg,
    )?;
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
        PolicyModel {
            model: out.model,
            layout,
            num_slots: slots,
            renyi_alpha: cfg.renyi_alpha,
            embeddings,
        },
        out.loss_curve,
    ))
}

impl PolicyModel {
    pub fn embed_dim(&self) -> usize {
        self.model.embed_dim
    }

    /// Distribution over the action catalogue, zero on illegal actions.
    pub fn predict(&self, omega: &[f64], step: &DemoStep) -> Result<ProbVector> {
        self.predict_with_extra(omega, step, &[])
    }

    pub fn predict_with_extra(&self, omega: &[f64], step: &DemoStep, extra: &[f64]) -> Result<ProbVector> {
        let inputs = self.layout.inputs(step, self.num_slots, extra)?;
        let dist = self.model.distribution(omega, &inputs)?;
        self.layout.to_slots(dist, step, self.num_slots)
    }

    /// One embedding step on an observed decision.
    pub fn omega_update(&self, omega: &mut [f64], step: &DemoStep, lr_omega: f64) -> Result<()> {
        if self.embed_dim() == 0 || !step.is_decision() {
            return Ok(());
        }
        let inputs = self.layout.inputs(step, self.num_slots, &[])?;
        let target = self.layout.target(step)?;
        let g = self
            .model
            .omega_gradient(omega, [(&inputs, target)], self.renyi_alpha)?;
        for (w, d) in omega.iter_mut().zip(g) {
            *w -= lr_omega * d;
        }
        Ok(())
    }

    /// Test-time inference for an unseen demonstrator: predict each step
    /// before its action is revealed, then take one ω step. Weights are
    /// never touched.
    pub fn adapt_online(&self, stream: &[DemoStep], lr_omega: f64) -> Result<Vec<(ProbVector, Embedding)>> {
        let mut omega = vec![0.0; self.embed_dim()];
        stream
            .iter()
            .map(|step| {
                let p = self.predict(&omega, step)?;
                self.omega_update(&mut omega, step, lr_omega)?;
                Ok((p, Embedding(omega.clone())))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jobshop::generate_demonstrations;
    use crate::numerics::finite_diff_check;

    fn toy_examples() -> Vec<Example> {
        vec![Example {
            group: 0,
            inputs: Inputs::Classes {
                features: vec![0.5, -0.25, 1.0],
                allowed: vec![0, 1, 2],
            },
            target: 1,
        }]
    }

    #[test]
    fn memorises_a_single_example() {
        let cfg = TrainConfig {
            epochs: 500,
            lr_theta: 1e-2,
            ..TrainConfig::default()
        };
        let out = train_examples(&toy_examples(), 1, 3, 3, &cfg).unwrap();
        assert_eq!(out.loss_curve.len(), 500);
        assert!(*out.loss_curve.last().unwrap() < 0.05);
        assert!(out.loss_curve.last().unwrap() <= &out.loss_curve[0]);
    }

    #[test]
    fn zero_epochs_leave_initialisation() {
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let out = train_examples(&toy_examples(), 1, 3, 3, &cfg).unwrap();
        assert_eq!(out.model, EmbeddedNet::new(3, 3, &cfg).unwrap());
        assert_eq!(out.embeddings, vec![Embedding::zeros(3)]);
        assert!(out.loss_curve.is_empty());
    }

    #[test]
    fn empty_dataset_is_a_usage_error() {
        let r = train_examples(&[], 1, 3, 3, &TrainConfig::default());
        assert!(matches!(r, Err(Error::Usage(_))));
        assert!(matches!(
            train_concurrent(&[], PolicyLayout::Shared, &TrainConfig::default()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let cfg = TrainConfig {
            lr_theta: f64::MAX,
            epochs: 5,
            ..TrainConfig::default()
        };
        let err = train_examples(&toy_examples(), 1, 3, 3, &cfg).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("epoch")), "{err}");
    }

    #[test]
    fn omega_gradient_matches_finite_differences() {
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        };
        let ex = toy_examples();
        let out = train_examples(&ex, 1, 3, 3, &cfg).unwrap();
        let omega = vec![0.3, -0.2, 0.1];
        let (_, _, gw) = out.model.loss_and_grads(&omega, &ex[0], cfg.renyi_alpha).unwrap();
        let r = finite_diff_check(
            |w| {
                let p = out.model.distribution(w, &ex[0].inputs).unwrap();
                renyi_loss(&p, 1, cfg.renyi_alpha)
            },
            &omega,
            &gw,
            1e-6,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn untrained_policy_is_uniform_over_legal_slots() {
        let demos = generate_demonstrations(1, [1.0, 1.0, 1.0], 3, "u").unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (model, _) = train_concurrent(&demos, PolicyLayout::Shared, &cfg).unwrap();
        let step = demos[0].decision_steps().next().unwrap();
        let p = model.predict(&[0.0; 3], step).unwrap();
        let n = step.actions.len() as f64;
        for a in &step.actions {
            assert!((p[a.action_id] - 1.0 / n).abs() < 1e-12);
        }
        assert_eq!(model.predict(&[0.0; 3], step).unwrap(), p);
        let (slots, _) = train_concurrent(&demos, PolicyLayout::Slots, &cfg).unwrap();
        let q = slots.predict(&[0.0; 3], step).unwrap();
        for a in &step.actions {
            assert!((q[a.action_id] - 1.0 / n).abs() < 1e-12);
        }
    }

    #[test]
    fn online_adaptation_edge_cases() {
        let demos = generate_demonstrations(2, [1.0, 1.0, 1.0], 4, "o").unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let (model, _) = train_concurrent(&demos, PolicyLayout::Shared, &cfg).unwrap();
        assert!(model.adapt_online(&[], 0.1).unwrap().is_empty());
        let stream: Vec<DemoStep> = demos[1].decision_steps().cloned().collect();
        let frozen = model.adapt_online(&stream, 0.0).unwrap();
        assert!(frozen.iter().all(|(_, w)| w.0 == vec![0.0; 3]));
        let moving = model.adapt_online(&stream, 0.1).unwrap();
        assert_eq!(moving, model.adapt_online(&stream, 0.1).unwrap());
        assert_ne!(moving.last().unwrap().1, Embedding::zeros(3));
    }

    #[test]
    fn homogeneous_model_has_no_embeddings() {
        let demos = generate_demonstrations(2, [1.0, 1.0, 1.0], 4, "h").unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        }
        .homogeneous();
        let (model, _) = train_concurrent(&demos, PolicyLayout::Shared, &cfg).unwrap();
        assert!(model.embeddings.is_empty());
        let json = serde_json::to_value(&model).unwrap();
        assert!(json.get("embeddings").is_none());
    }
}
