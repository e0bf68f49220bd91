//! Single-layer LSTM and its embedding-conditioned variant, trained with
//! truncated backpropagation through time.
//!
//! Gate order inside the stacked matrices is input, forget, output,
//! candidate. All parameters live in one flat vector so gradients, clipping
//! and SGD are plain vector operations.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bnn::{allowed_slots, check_uniform, derive_seed, slot_feature_dim, slot_features, Embedding, PolicyLayout, EmbeddingTable, TrainConfig, INIT_STREAM, SHUFFLE_STREAM};
use crate::error::{usage, Error, Result};
use crate::jobshop::{DemoStep, Demonstration, ACTION_FEATURES, STATE_FEATURES};
use crate::mlp::glorot_bound;
use crate::numerics::{self, masked_softmax, renyi_grad_logits, renyi_loss, ProbVector, RenyiAlpha};

/// Recurrent sizes and truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmConfig {
    pub hidden: usize,
    pub truncation: usize,
    pub clip_norm: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        LstmConfig {
            hidden: 32,
            truncation: 20,
            clip_norm: 50.0,
        }
    }
}

impl LstmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.truncation == 0 {
            return Err(Error::Config("hidden size and truncation must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm {} must be positive", self.clip_norm)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub input_dim: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub n_out: usize,
    /// `w_x | w_h | b | w_y | b_y | w_omega`, each row-major.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            hidden: vec![0.0; hidden],
            cell: vec![0.0; hidden],
        }
    }
}

/// Everything one step needs for its backward pass.
#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    omega: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec_add(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    if cols == 0 {
        return;
    }
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += numerics::dot(row, x);
    }
}

fn outer_add(g: &mut [f64], dz: &[f64], x: &[f64]) {
    let cols = x.len();
    if cols == 0 {
        return;
    }
    for (row, d) in g.chunks_exact_mut(cols).zip(dz) {
        for (w, xi) in row.iter_mut().zip(x) {
            *w += d * xi;
        }
    }
}

fn transpose_matvec_add(out: &mut [f64], w: &[f64], dz: &[f64]) {
    let cols = out.len();
    if cols == 0 {
        return;
    }
    for (row, d) in w.chunks_exact(cols).zip(dz) {
        for (o, wi) in out.iter_mut().zip(row) {
            *o += d * wi;
        }
    }
}

impl Lstm {
    /// Glorot-uniform weights, zero biases. The embedding columns are drawn
    /// last so a plain and an embedded net built from the same seed share
    /// every other weight.
    pub fn new<R: Rng>(input_dim: usize, embed_dim: usize, hidden: usize, n_out: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || n_out == 0 {
            return usage("lstm dimensions must be positive");
        }
        let mut net = Lstm {
            input_dim,
            embed_dim,
            hidden,
            n_out,
            params: Vec::new(),
        };
        net.params = vec![0.0; net.num_params()];
        let four = 4 * hidden;
        let bx = glorot_bound(input_dim + hidden, four);
        let by = glorot_bound(hidden, n_out);
        for r in [net.w_x(), net.w_h()] {
            for v in &mut net.params[r] {
                *v = rng.gen_range(-bx..=bx);
            }
        }
        let r = net.w_y();
        for v in &mut net.params[r] {
            *v = rng.gen_range(-by..=by);
        }
        let r = net.w_omega();
        for v in &mut net.params[r] {
            *v = rng.gen_range(-bx..=bx);
        }
        Ok(net)
    }

    pub fn num_params(&self) -> usize {
        let four = 4 * self.hidden;
        four * (self.input_dim + self.hidden + 1 + self.embed_dim) + self.n_out * (self.hidden + 1)
    }

    fn w_x(&self) -> Range<usize> {
        0..4 * self.hidden * self.input_dim
    }

    fn w_h(&self) -> Range<usize> {
        let s = self.w_x().end;
        s..s + 4 * self.hidden * self.hidden
    }

    fn b(&self) -> Range<usize> {
        let s = self.w_h().end;
        s..s + 4 * self.hidden
    }

    fn w_y(&self) -> Range<usize> {
        let s = self.b().end;
        s..s + self.n_out * self.hidden
    }

    fn b_y(&self) -> Range<usize> {
        let s = self.w_y().end;
        s..s + self.n_out
    }

    fn w_omega(&self) -> Range<usize> {
        let s = self.b_y().end;
        s..s + 4 * self.hidden * self.embed_dim
    }

    pub fn zero_state(&self) -> LstmState {
        LstmState::zeros(self.hidden)
    }

    /// One recurrent step: logits and the next state.
    pub fn step(&self, state: &LstmState, omega: &[f64], input: &[f64]) -> Result<(Vec<f64>, LstmState, StepCache)> {
        if input.len() != self.input_dim || omega.len() != self.embed_dim {
            return usage(format!(
                "lstm step got input {} and embedding {}, expects {} and {}",
                input.len(),
                omega.len(),
                self.input_dim,
                self.embed_dim
            ));
        }
        if state.hidden.len() != self.hidden || state.cell.len() != self.hidden {
            return usage("lstm state has the wrong size");
        }
        let h = self.hidden;
        let p = &self.params;
        let mut z = p[self.b()].to_vec();
        matvec_add(&mut z, &p[self.w_x()], input);
        matvec_add(&mut z, &p[self.w_h()], &state.hidden);
        matvec_add(&mut z, &p[self.w_omega()], omega);
        let mut gates = vec![0.0; 4 * h];
        for k in 0..h {
            gates[k] = sigmoid(z[k]);
            gates[h + k] = sigmoid(z[h + k]);
            gates[2 * h + k] = sigmoid(z[2 * h + k]);
            gates[3 * h + k] = z[3 * h + k].tanh();
        }
        let mut cell = vec![0.0; h];
        let mut tanh_c = vec![0.0; h];
        let mut hidden = vec![0.0; h];
        for k in 0..h {
            cell[k] = gates[h + k] * state.cell[k] + gates[k] * gates[3 * h + k];
            tanh_c[k] = cell[k].tanh();
            hidden[k] = gates[2 * h + k] * tanh_c[k];
        }
        let mut logits = p[self.b_y()].to_vec();
        matvec_add(&mut logits, &p[self.w_y()], &hidden);
        let cache = StepCache {
            x: input.to_vec(),
            omega: omega.to_vec(),
            h_prev: state.hidden.clone(),
            c_prev: state.cell.clone(),
            gates,
            tanh_c,
            h: hidden.clone(),
        };
        Ok((logits, LstmState { hidden, cell }, cache))
    }

    /// Backward pass over a window of steps. Gradients do not flow into the
    /// state that entered the window. Returns parameter and embedding
    /// gradients.
    pub fn backward(&self, caches: &[StepCache], grad_logits: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>)> {
        if caches.len() != grad_logits.len() {
            return usage("one logit gradient per cached step is required");
        }
        let h = self.hidden;
        let p = &self.params;
        let mut g = vec![0.0; self.num_params()];
        let mut g_omega = vec![0.0; self.embed_dim];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let (rx, rh, rb, ry, rby, rw) = (self.w_x(), self.w_h(), self.b(), self.w_y(), self.b_y(), self.w_omega());
        for (c, dy) in caches.iter().zip(grad_logits).rev() {
            if dy.len() != self.n_out {
                return usage("logit gradient has the wrong length");
            }
            outer_add(&mut g[ry.clone()], dy, &c.h);
            for (b, d) in g[rby.clone()].iter_mut().zip(dy) {
                *b += d;
            }
            let mut dh = dh_next.clone();
            transpose_matvec_add(&mut dh, &p[ry.clone()], dy);
            let mut dz = vec![0.0; 4 * h];
            for k in 0..h {
                let (i, f, o, gg) = (c.gates[k], c.gates[h + k], c.gates[2 * h + k], c.gates[3 * h + k]);
                let d_o = dh[k] * c.tanh_c[k];
                let dc = dh[k] * o * (1.0 - c.tanh_c[k] * c.tanh_c[k]) + dc_next[k];
                dz[k] = dc * gg * i * (1.0 - i);
                dz[h + k] = dc * c.c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = d_o * o * (1.0 - o);
                dz[3 * h + k] = dc * i * (1.0 - gg * gg);
                dc_next[k] = dc * f;
            }
            outer_add(&mut g[rx.clone()], &dz, &c.x);
            outer_add(&mut g[rh.clone()], &dz, &c.h_prev);
            outer_add(&mut g[rw.clone()], &dz, &c.omega);
            for (b, d) in g[rb.clone()].iter_mut().zip(&dz) {
                *b += d;
            }
            transpose_matvec_add(&mut g_omega, &p[rw.clone()], &dz);
            dh_next = vec![0.0; h];
            transpose_matvec_add(&mut dh_next, &p[rh.clone()], &dz);
        }
        Ok((g, g_omega))
    }
}

/// How the network output is read at one step.
#[derive(Debug, Clone, PartialEq)]
pub enum StepHead {
    /// Logits over output classes, restricted to the listed ones.
    Classes(Vec<usize>),
    /// The output is a preference vector `q`; row `i` scores `q · rows[i]`.
    Candidates(Vec<Vec<f64>>),
}

impl StepHead {
    /// Distribution over classes or candidate rows, and the gradient of the
    /// loss for `target` with respect to the raw network output.
    fn read(&self, out: &[f64], target: usize, alpha: RenyiAlpha) -> Result<(ProbVector, f64, Vec<f64>)> {
        match self {
            StepHead::Classes(allowed) => {
                let p = masked_softmax(out, allowed)?;
                let loss = renyi_loss(&p, target, alpha);
                let d = renyi_grad_logits(&p, target, alpha);
                Ok((p, loss, d))
            }
            StepHead::Candidates(rows) => {
                let scores: Vec<f64> = rows.iter().map(|r| numerics::dot(out, r)).collect();
                let p = numerics::softmax(&scores)?;
                let loss = renyi_loss(&p, target, alpha);
                let ds = renyi_grad_logits(&p, target, alpha);
                let mut d = vec![0.0; out.len()];
                for (r, g) in rows.iter().zip(&ds) {
                    for (di, ri) in d.iter_mut().zip(r) {
                        *di += g * ri;
                    }
                }
                Ok((p, loss, d))
            }
        }
    }
}

/// One training sequence: per-step inputs, output heads and targets
/// (a class for [`StepHead::Classes`], a row for [`StepHead::Candidates`]).
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub group: usize,
    pub inputs: Vec<Vec<f64>>,
    pub heads: Vec<StepHead>,
    pub targets: Vec<usize>,
}

impl Sequence {
    fn check(&self, net: &Lstm) -> Result<()> {
        let n = self.inputs.len();
        if self.heads.len() != n || self.targets.len() != n {
            return usage("sequence fields have different lengths");
        }
        for ((x, h), &t) in self.inputs.iter().zip(&self.heads).zip(&self.targets) {
            if x.len() != net.input_dim {
                return usage(format!("sequence input has length {}, expected {}", x.len(), net.input_dim));
            }
            match h {
                StepHead::Classes(a) => {
                    if !a.contains(&t) || a.iter().any(|&k| k >= net.n_out) {
                        return Err(Error::Data(format!("target {t} is not among the allowed outputs")));
                    }
                }
                StepHead::Candidates(rows) => {
                    if t >= rows.len() {
                        return Err(Error::Data(format!("target row {t} out of {} candidates", rows.len())));
                    }
                    if rows.iter().any(|r| r.len() != net.n_out) {
                        return usage(format!("candidate rows must have length {}", net.n_out));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Summed loss of a window and the logit gradients of each step.
fn window_forward(
    net: &Lstm,
    state: &mut LstmState,
    omega: &[f64],
    seq: &Sequence,
    range: Range<usize>,
    alpha: RenyiAlpha,
) -> Result<(f64, Vec<StepCache>, Vec<Vec<f64>>)> {
    let mut loss = 0.0;
    let mut caches = Vec::with_capacity(range.len());
    let mut dys = Vec::with_capacity(range.len());
    for t in range {
        let (out, next, cache) = net.step(state, omega, &seq.inputs[t])?;
        let (_, l, d) = seq.heads[t].read(&out, seq.targets[t], alpha)?;
        loss += l;
        dys.push(d);
        caches.push(cache);
        *state = next;
    }
    Ok((loss, caches, dys))
}

/// Total loss of a whole sequence without truncation; used by gradient
/// checks.
pub fn sequence_loss(net: &Lstm, omega: &[f64], seq: &Sequence, alpha: RenyiAlpha) -> Result<f64> {
    let mut state = net.zero_state();
    Ok(window_forward(net, &mut state, omega, seq, 0..seq.inputs.len(), alpha)?.0)
}

/// Full-sequence loss and gradients (one window covering everything).
pub fn sequence_grads(net: &Lstm, omega: &[f64], seq: &Sequence, alpha: RenyiAlpha) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    seq.check(net)?;
    let mut state = net.zero_state();
    let (loss, caches, dys) = window_forward(net, &mut state, omega, seq, 0..seq.inputs.len(), alpha)?;
    let (g, gw) = net.backward(&caches, &dys)?;
    Ok((loss, g, gw))
}

fn clip(g: &mut [f64], max_norm: f64) {
    let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > max_norm {
        let s = max_norm / n;
        g.iter_mut().for_each(|v| *v *= s);
    }
}

#[derive(Debug, Clone)]
pub struct LstmOutcome {
    pub net: Lstm,
    pub embeddings: Vec<Embedding>,
    pub loss_curve: Vec<f64>,
}

/// Truncated BPTT over whole sequences. The recurrent state is carried
/// across windows; gradients stop at each window boundary. Weight and
/// embedding steps are taken once per window on the clipped window-sum
/// gradient.
pub fn train_bptt(
    sequences: &[Sequence],
    n_groups: usize,
    input_dim: usize,
    n_out: usize,
    cfg: &TrainConfig,
    lcfg: &LstmConfig,
) -> Result<LstmOutcome> {
    cfg.validate()?;
    lcfg.validate()?;
    if sequences.iter().all(|s| s.inputs.is_empty()) {
        return usage("no training steps");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, INIT_STREAM));
    let mut net = Lstm::new(input_dim, cfg.embed_dim, lcfg.hidden, n_out, &mut rng)?;
    for s in sequences {
        if s.group >= n_groups {
            return usage(format!("sequence group {} out of range", s.group));
        }
        s.check(&net)?;
    }
    let mut embeddings = vec![Embedding::zeros(cfg.embed_dim); n_groups];
    let mut order: Vec<usize> = (0..sequences.len()).collect();
    let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, SHUFFLE_STREAM));
    let n_steps: usize = sequences.iter().map(|s| s.inputs.len()).sum();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for &i in &order {
            let seq = &sequences[i];
            let mut state = net.zero_state();
            let mut start = 0;
            while start < seq.inputs.len() {
                let end = (start + lcfg.truncation).min(seq.inputs.len());
                let omega = embeddings[seq.group].0.clone();
                let (loss, caches, dys) = window_forward(&net, &mut state, &omega, seq, start..end, cfg.renyi_alpha)?;
                total += loss;
                let (mut g, mut gw) = net.backward(&caches, &dys)?;
                clip(&mut g, lcfg.clip_norm);
                clip(&mut gw, lcfg.clip_norm);
                for (p, d) in net.params.iter_mut().zip(&g) {
                    *p -= cfg.lr_theta * d;
                }
                for (w, d) in embeddings[seq.group].0.iter_mut().zip(&gw) {
                    *w -= cfg.lr_omega * d;
                }
                start = end;
            }
        }
        let mean = total / n_steps as f64;
        if !mean.is_finite() || !numerics::all_finite(&net.params) {
            return Err(Error::Numeric(format!("training diverged at epoch {}", epoch + 1)));
        }
        loss_curve.push(mean);
    }
    Ok(LstmOutcome {
        net,
        embeddings,
        loss_curve,
    })
}

/// Per-step input for the scheduling policy: the state features (shared
/// layout) or the slot vector (slot layout), followed by the features of
/// the previously chosen action.
pub fn recurrent_input(step: &DemoStep, prev: Option<&DemoStep>, layout: PolicyLayout, num_slots: usize) -> Result<Vec<f64>> {
    let mut x = match layout {
        PolicyLayout::Shared => step.state_features.clone(),
        PolicyLayout::Slots => slot_features(step, num_slots)?,
    };
    match prev {
        Some(p) => {
            let chosen = &p.actions[p.chosen_index()?];
            x.extend_from_slice(&chosen.features);
        }
        None => x.extend(std::iter::repeat(0.0).take(ACTION_FEATURES)),
    }
    Ok(x)
}

fn policy_head(step: &DemoStep, layout: PolicyLayout) -> Result<(StepHead, usize)> {
    Ok(match layout {
        PolicyLayout::Shared => (
            StepHead::Candidates(step.actions.iter().map(|a| a.features.clone()).collect()),
            step.chosen_index()?,
        ),
        PolicyLayout::Slots => (StepHead::Classes(allowed_slots(step)), step.chosen_action_id),
    })
}

fn demo_sequence(d: &Demonstration, group: usize, layout: PolicyLayout, num_slots: usize) -> Result<Sequence> {
    let steps: Vec<&DemoStep> = d.decision_steps().collect();
    let mut seq = Sequence {
        group,
        inputs: Vec::with_capacity(steps.len()),
        heads: Vec::with_capacity(steps.len()),
        targets: Vec::with_capacity(steps.len()),
    };
    for (t, s) in steps.iter().enumerate() {
        seq.inputs.push(recurrent_input(s, t.checked_sub(1).map(|p| steps[p]), layout, num_slots)?);
        let (head, target) = policy_head(s, layout)?;
        seq.heads.push(head);
        seq.targets.push(target);
    }
    Ok(seq)
}

/// Recurrent policy. With the shared layout the LSTM emits a preference
/// vector over action features and legal actions are scored by dot
/// product; with the slot layout it emits one logit per action slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmPolicy {
    pub net: Lstm,
    pub layout: PolicyLayout,
    pub num_slots: usize,
    pub renyi_alpha: RenyiAlpha,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub embeddings: EmbeddingTable,
}

/// Trains an LSTM (`cfg.embed_dim == 0`) or B-LSTM on the decision steps of
/// each demonstration.
pub fn train_lstm_policy(
    demos: &[Demonstration],
    layout: PolicyLayout,
    cfg: &TrainConfig,
    lcfg: &LstmConfig,
) -> Result<(LstmPolicy, Vec<f64>)> {
    let slots = check_uniform(demos)?;
    let seqs = demos
        .iter()
        .enumerate()
        .map(|(g, d)| demo_sequence(d, g, layout, slots))
        .collect::<Result<Vec<_>>>()?;
    let (input_dim, n_out) = match layout {
        PolicyLayout::Shared => (STATE_FEATURES + ACTION_FEATURES, ACTION_FEATURES),
        PolicyLayout::Slots => (slot_feature_dim(slots) + ACTION_FEATURES, slots),
    };
    let out = train_bptt(&seqs, demos.len(), input_dim, n_out, cfg, lcfg)?;
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
        LstmPolicy {
            net: out.net,
            layout,
            num_slots: slots,
            renyi_alpha: cfg.renyi_alpha,
            embeddings,
        },
        out.loss_curve,
    ))
}

impl LstmPolicy {
    pub fn embed_dim(&self) -> usize {
        self.net.embed_dim
    }

    /// Online pass over an episode's decision steps with frozen weights.
    /// Each prediction (over action slots) is made before its action is
    /// revealed; then ω takes one step on that step's loss, holding the
    /// incoming state fixed.
    pub fn adapt_online(&self, stream: &[DemoStep], lr_omega: f64) -> Result<Vec<(ProbVector, Embedding)>> {
        let mut omega = vec![0.0; self.embed_dim()];
        let mut state = self.net.zero_state();
        let mut out = Vec::with_capacity(stream.len());
        let mut prev: Option<&DemoStep> = None;
        for step in stream {
            let x = recurrent_input(step, prev, self.layout, self.num_slots)?;
            let (q, next, cache) = self.net.step(&state, &omega, &x)?;
            let (head, target) = policy_head(step, self.layout)?;
            let (p, _, dy) = head.read(&q, target, self.renyi_alpha)?;
            let probs = self.layout.to_slots(p, step, self.num_slots)?;
            if self.embed_dim() > 0 && step.is_decision() {
                let (_, gw) = self.net.backward(&[cache], &[dy])?;
                for (w, d) in omega.iter_mut().zip(gw) {
                    *w -= lr_omega * d;
                }
            }
            out.push((probs, Embedding(omega.clone())));
            state = next;
            prev = Some(step);
        }
        Ok(out)
    }
}
