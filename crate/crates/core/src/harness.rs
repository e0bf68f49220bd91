//! Experiment engine behind the command line: dataset generation, training
//! of every method at every budget, online evaluation on fresh
//! demonstrators, and metric tables.
//!
//! Output layout under `--out`:
//!
//! ```text
//! data/train-b{budget}.jsonl   data/test.jsonl
//! models/{method}-b{budget}.json
//! metrics.csv   traces.jsonl   run_log.jsonl   metadata.json
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::action_embed::{substitute_embeddings, train_transition, ActionEmbedConfig, TransitionModel};
use crate::bnn::{train_concurrent, PolicyLayout, PolicyModel, TrainConfig};
use crate::cluster::{train_clustered_nns, train_gmm_augmented_nn, ClusteredNns, GmmAugmentedNn};
use crate::counterfactual::{train_pairwise_bnn, PairwiseModel};
use crate::error::{usage, Error, Result};
use crate::hybrid::{run_episode, Adaptive, Ranker};
use crate::jobshop::{
    generate_demonstrations, generate_instance, record_episode, Behaviour, DemoStep, Demonstration, EvalOnly, Heuristic,
    DEFAULT_AGENTS, DEFAULT_TASKS,
};
use crate::lstm::{train_lstm_policy, LstmConfig, LstmPolicy};
use crate::serial::{to_exact_json, FORMAT_VERSION};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SEED_ENV: &str = "HLFD_SEED";
pub const CSV_HEADER: &str = "method,budget,top1_mean,top1_stderr,top3_mean,top3_stderr,n_episodes";

/// Every learning method the harness knows, in canonical order.
pub const METHODS: [&str; 11] = [
    "nn",
    "kmeans_nn",
    "gmm_nn",
    "bnn",
    "lstm",
    "blstm",
    "hybrid",
    "cf_nn",
    "cf_bnn",
    "cf_hybrid",
    "action_embed_cf",
];

/// Plumbing checks: always right, and uniformly random over legal actions.
pub const STUB_METHODS: [&str; 2] = ["oracle_stub", "uniform_stub"];

fn known_method(m: &str) -> bool {
    METHODS.contains(&m) || STUB_METHODS.contains(&m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub seed: u64,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "uniform_mix")]
    pub policy_mix: [f64; 3],
}

fn default_budgets() -> Vec<usize> {
    vec![3, 9, 15, 150, 1500]
}

fn uniform_mix() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub seed: u64,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "uniform_mix")]
    pub policy_mix: [f64; 3],
    /// Test demonstrators sample a heuristic afresh at every step from their
    /// own random mixture instead of following one heuristic.
    #[serde(default)]
    pub mixture_demonstrators: bool,
}

fn default_episodes() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_topk")]
    pub topk: Vec<usize>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig { topk: default_topk() }
    }
}

fn default_topk() -> Vec<usize> {
    vec![1, 3]
}

fn default_clusters() -> usize {
    3
}

fn default_layout() -> PolicyLayout {
    PolicyLayout::Shared
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed for per-cell training streams.
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub methods: Vec<String>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Per-method partial overrides of `train`.
    #[serde(default)]
    pub overrides: BTreeMap<String, Value>,
    #[serde(default)]
    pub lstm: LstmConfig,
    #[serde(default)]
    pub action_embed: ActionEmbedConfig,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default = "default_layout")]
    pub policy_layout: PolicyLayout,
    pub test: TestConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

fn at(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{path}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| at("config", e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, applies the seed override from the environment, validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| at("config", e))?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let b = &self.dataset.budgets;
        if b.is_empty() {
            return Err(at("dataset.budgets", "must not be empty"));
        }
        for (i, w) in b.iter().enumerate() {
            if *w == 0 {
                return Err(at(&format!("dataset.budgets[{i}]"), "must be positive"));
            }
            if i > 0 && b[i - 1] >= *w {
                return Err(at(&format!("dataset.budgets[{i}]"), "budgets must be strictly ascending"));
            }
        }
        check_mix("dataset.policy_mix", &self.dataset.policy_mix)?;
        check_mix("test.policy_mix", &self.test.policy_mix)?;
        if self.methods.is_empty() {
            return Err(at("methods", "must not be empty"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if !known_method(m) {
                return Err(at(&format!("methods[{i}]"), format!("unknown method {m:?}")));
            }
            if self.methods[..i].contains(m) {
                return Err(at(&format!("methods[{i}]"), format!("duplicate method {m:?}")));
            }
        }
        for m in self.overrides.keys() {
            if !known_method(m) {
                return Err(at(&format!("overrides.{m}"), "unknown method"));
            }
        }
        for m in METHODS.iter().chain(&STUB_METHODS) {
            self.train_config(m)?;
        }
        if self.test.episodes == 0 {
            return Err(at("test.episodes", "must be positive"));
        }
        if self.test.seed == self.dataset.seed {
            return Err(at("test.seed", "must differ from dataset.seed"));
        }
        if self.clusters == 0 {
            return Err(at("clusters", "must be positive"));
        }
        for k in [1, 3] {
            if !self.metrics.topk.contains(&k) {
                return Err(at("metrics.topk", format!("must include {k}")));
            }
        }
        if self.metrics.topk.contains(&0) {
            return Err(at("metrics.topk", "k must be positive"));
        }
        self.lstm.validate().map_err(|e| at("lstm", e))?;
        self.action_embed.validate().map_err(|e| at("action_embed", e))?;
        Ok(())
    }

    /// `train` with the method's overrides applied.
    pub fn train_config(&self, method: &str) -> Result<TrainConfig> {
        let mut base = serde_json::to_value(&self.train)?;
        if let Some(o) = self.overrides.get(method) {
            let Value::Object(o) = o else {
                return Err(at(&format!("overrides.{method}"), "must be an object"));
            };
            let Value::Object(b) = &mut base else { unreachable!() };
            for (k, v) in o {
                b.insert(k.clone(), v.clone());
            }
        }
        let path = if self.overrides.contains_key(method) {
            format!("overrides.{method}")
        } else {
            "train".to_string()
        };
        let cfg: TrainConfig = serde_json::from_value(base).map_err(|e| at(&path, e))?;
        cfg.validate().map_err(|e| at(&path, e))?;
        Ok(cfg)
    }

    /// Hex SHA-256 of the canonical JSON of the effective config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Training config of one (method, budget) cell: the method's config
    /// with the seed replaced by the cell's own stream.
    pub fn cell_train_config(&self, method: &str, budget: usize) -> Result<TrainConfig> {
        Ok(TrainConfig {
            seed: cell_seed(self.seed, method, budget),
            ..self.train_config(method)?
        })
    }
}

fn check_mix(path: &str, mix: &[f64; 3]) -> Result<()> {
    if mix.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || mix.iter().sum::<f64>() <= 0.0 {
        return Err(at(path, "weights must be nonnegative with a positive sum"));
    }
    Ok(())
}

/// Independent seed for a (method, budget) cell.
pub fn cell_seed(master: u64, method: &str, budget: usize) -> u64 {
    let d = Sha256::digest(format!("{master}:{method}:{budget}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("eight bytes"))
}

pub fn train_path(out: &Path, budget: usize) -> PathBuf {
    out.join("data").join(format!("train-b{budget}.jsonl"))
}

pub fn test_path(out: &Path) -> PathBuf {
    out.join("data").join("test.jsonl")
}

pub fn model_path(out: &Path, method: &str, budget: usize) -> PathBuf {
    out.join("models").join(format!("{method}-b{budget}.json"))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

pub fn write_dataset(path: &Path, demos: &[Demonstration]) -> Result<()> {
    create_parent(path)?;
    let mut text = String::new();
    for d in demos {
        text.push_str(&serde_json::to_string(d)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Reads a JSON-lines dataset. With `keep_labels == false` the evaluation
/// sub-object is dropped, as every learner must see it.
pub fn read_dataset(path: &Path, keep_labels: bool) -> Result<Vec<Demonstration>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open dataset {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Demonstration = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if d.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "{}:{}: format version {} is not supported",
                path.display(),
                i + 1,
                d.format_version
            )));
        }
        out.push(if keep_labels { d } else { d.strip_eval_only() });
    }
    Ok(out)
}

/// Test demonstrators, pure or per-step mixtures.
pub fn test_demonstrations(cfg: &TestConfig) -> Result<Vec<Demonstration>> {
    if !cfg.mixture_demonstrators {
        return generate_demonstrations(cfg.episodes, cfg.policy_mix, cfg.seed, "test");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.episodes)
        .map(|i| {
            let instance = generate_instance(rng.gen(), DEFAULT_TASKS, DEFAULT_AGENTS)?;
            let mut w = [0.0; 3];
            for (k, v) in w.iter_mut().enumerate() {
                *v = cfg.policy_mix[k] * rng.gen_range(0.0..1.0);
            }
            if w.iter().sum::<f64>() <= 0.0 {
                w = cfg.policy_mix;
            }
            let steps = record_episode(instance, &Behaviour::Mixture(w), &mut rng)?;
            let dominant = Heuristic::ALL[crate::numerics::argmax(&w)];
            Ok(Demonstration {
                format_version: FORMAT_VERSION,
                demonstrator_id: format!("test-{i}"),
                eval_only: Some(EvalOnly {
                    hidden_policy: dominant,
                }),
                num_agents: DEFAULT_AGENTS,
                num_tasks: DEFAULT_TASKS,
                steps,
            })
        })
        .collect()
}

/// Writes the training file of every budget (or just `only`) and the test
/// file. Returns per-budget heuristic counts.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path, only: Option<usize>) -> Result<Vec<(usize, [usize; 3])>> {
    let budgets = selected_budgets(cfg, only)?;
    let mut counts = Vec::new();
    for b in budgets {
        let demos = generate_demonstrations(b, cfg.dataset.policy_mix, cfg.dataset.seed, "train")?;
        let mut c = [0usize; 3];
        for d in &demos {
            if let Some(h) = d.hidden_policy() {
                c[h.index()] += 1;
            }
        }
        write_dataset(&train_path(out, b), &demos)?;
        counts.push((b, c));
    }
    write_dataset(&test_path(out), &test_demonstrations(&cfg.test)?)?;
    Ok(counts)
}

fn selected_budgets(cfg: &ExperimentConfig, only: Option<usize>) -> Result<Vec<usize>> {
    match only {
        None => Ok(cfg.dataset.budgets.clone()),
        Some(b) if cfg.dataset.budgets.contains(&b) => Ok(vec![b]),
        Some(b) => usage(format!("budget {b} is not listed in the config")),
    }
}

fn selected_methods(cfg: &ExperimentConfig, only: Option<&str>) -> Result<Vec<String>> {
    match only {
        None => Ok(cfg.methods.clone()),
        Some(m) if !known_method(m) => usage(format!("unknown method {m:?}")),
        Some(m) if cfg.methods.iter().any(|x| x == m) => Ok(vec![m.to_string()]),
        Some(m) => usage(format!("method {m} is not listed in the config")),
    }
}

/// A trained model of any method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Nn(PolicyModel),
    Bnn(PolicyModel),
    Kmeans(ClusteredNns),
    Gmm(GmmAugmentedNn),
    Lstm(LstmPolicy),
    Blstm(LstmPolicy),
    Pairwise(PairwiseModel),
    Hybrid { bnn: PolicyModel, baseline: PolicyModel },
    CfHybrid { bnn: PairwiseModel, baseline: PairwiseModel },
    ActionEmbedCf { transition: TransitionModel, pairwise: PairwiseModel },
    OracleStub,
    UniformStub,
}

/// What a model file holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub method: String,
    pub budget: usize,
    pub config_hash: String,
    /// Online learning rate and switch threshold used at evaluation.
    pub lr_omega: f64,
    pub epsilon: f64,
    pub model: TrainedModel,
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub method: String,
    pub budget: usize,
    pub config_hash: String,
    pub loss_curve: Vec<f64>,
}

/// Trains one method on one budget's demonstrations.
pub fn train_method(
    cfg: &ExperimentConfig,
    method: &str,
    budget: usize,
    demos: &[Demonstration],
) -> Result<(TrainedModel, Vec<f64>)> {
    let tc = cfg.cell_train_config(method, budget)?;
    let layout = cfg.policy_layout;
    // composite methods reuse the exact components of their parts
    let part = |m: &str| cfg.cell_train_config(m, budget);
    Ok(match method {
        "nn" => {
            let (m, c) = train_concurrent(demos, layout, &tc.homogeneous())?;
            (TrainedModel::Nn(m), c)
        }
        "bnn" => {
            let (m, c) = train_concurrent(demos, layout, &tc)?;
            (TrainedModel::Bnn(m), c)
        }
        "kmeans_nn" => {
            let k = cfg.clusters.min(demos.len());
            (TrainedModel::Kmeans(train_clustered_nns(demos, k, layout, &tc)?), Vec::new())
        }
        "gmm_nn" => {
            let k = cfg.clusters.min(demos.len());
            (TrainedModel::Gmm(train_gmm_augmented_nn(demos, k, layout, &tc)?), Vec::new())
        }
        "lstm" => {
            let (m, c) = train_lstm_policy(demos, layout, &tc.homogeneous(), &cfg.lstm)?;
            (TrainedModel::Lstm(m), c)
        }
        "blstm" => {
            let (m, c) = train_lstm_policy(demos, layout, &tc, &cfg.lstm)?;
            (TrainedModel::Blstm(m), c)
        }
        "cf_nn" => {
            let (m, c) = train_pairwise_bnn(demos, &tc.homogeneous())?;
            (TrainedModel::Pairwise(m), c)
        }
        "cf_bnn" => {
            let (m, c) = train_pairwise_bnn(demos, &tc)?;
            (TrainedModel::Pairwise(m), c)
        }
        "hybrid" => {
            let (bnn, c) = train_concurrent(demos, layout, &part("bnn")?)?;
            let (baseline, _) = train_concurrent(demos, layout, &part("nn")?.homogeneous())?;
            (TrainedModel::Hybrid { bnn, baseline }, c)
        }
        "cf_hybrid" => {
            let (bnn, c) = train_pairwise_bnn(demos, &part("cf_bnn")?)?;
            let (baseline, _) = train_pairwise_bnn(demos, &part("cf_nn")?.homogeneous())?;
            (TrainedModel::CfHybrid { bnn, baseline }, c)
        }
        "action_embed_cf" => {
            let acfg = ActionEmbedConfig {
                seed: tc.seed,
                ..cfg.action_embed.clone()
            };
            let (transition, _) = train_transition(demos, &acfg)?;
            let sub = substitute_embeddings(demos, &transition.table)?;
            let (pairwise, c) = train_pairwise_bnn(&sub, &tc)?;
            (TrainedModel::ActionEmbedCf { transition, pairwise }, c)
        }
        "oracle_stub" => (TrainedModel::OracleStub, Vec::new()),
        "uniform_stub" => (TrainedModel::UniformStub, Vec::new()),
        other => return usage(format!("unknown method {other:?}")),
    })
}

fn model_file(cfg: &ExperimentConfig, method: &str, budget: usize, model: TrainedModel) -> Result<ModelFile> {
    let tc = cfg.train_config(match method {
        "hybrid" => "bnn",
        "cf_hybrid" => "cf_bnn",
        m => m,
    })?;
    Ok(ModelFile {
        format_version: FORMAT_VERSION,
        method: method.to_string(),
        budget,
        config_hash: cfg.hash(),
        lr_omega: tc.lr_omega,
        epsilon: cfg.train_config(method)?.epsilon,
        model,
    })
}

pub fn write_model(path: &Path, file: &ModelFile) -> Result<()> {
    create_parent(path)?;
    fs::write(path, to_exact_json(file)?)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::Data(format!("cannot read model {}: {e}", path.display())))?;
    let f: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    if f.format_version != FORMAT_VERSION {
        return Err(Error::Data(format!("{}: unsupported format version {}", path.display(), f.format_version)));
    }
    Ok(f)
}

fn append_log(out: &Path, entry: &RunLogEntry) -> Result<()> {
    let path = out.join("run_log.jsonl");
    create_parent(&path)?;
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{}", serde_json::to_string(entry)?)?;
    Ok(())
}

/// Trains one cell from its dataset file and writes the model file.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, method: &str, budget: usize) -> Result<ModelFile> {
    selected_methods(cfg, Some(method))?;
    selected_budgets(cfg, Some(budget))?;
    let demos = read_dataset(&train_path(out, budget), false)?;
    let (model, curve) = train_method(cfg, method, budget, &demos)?;
    let file = model_file(cfg, method, budget, model)?;
    write_model(&model_path(out, method, budget), &file)?;
    append_log(
        out,
        &RunLogEntry {
            method: method.to_string(),
            budget,
            config_hash: file.config_hash.clone(),
            loss_curve: curve,
        },
    )?;
    Ok(file)
}

/// Ranked legal actions per decision step for one test episode, plus the
/// hybrid switch step where there is one.
pub fn rank_episode(file: &ModelFile, stream: &[DemoStep], rng_seed: u64) -> Result<(Vec<Vec<usize>>, Option<usize>)> {
    let lr = file.lr_omega;
    let adaptive = |m: &dyn Adaptive| -> Result<Vec<Vec<usize>>> {
        let mut omega = vec![0.0; m.embed_dim()];
        stream
            .iter()
            .map(|s| {
                let r = m.rank(&omega, s)?;
                m.omega_update(&mut omega, s, lr)?;
                Ok(r)
            })
            .collect()
    };
    let by_prob = |p: &[f64], s: &DemoStep| {
        let mut ids: Vec<usize> = s.actions.iter().map(|a| a.action_id).collect();
        ids.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
        ids
    };
    let ranks = match &file.model {
        TrainedModel::Nn(m) | TrainedModel::Bnn(m) => adaptive(m)?,
        TrainedModel::Pairwise(m) => adaptive(m)?,
        TrainedModel::Kmeans(m) => stream
            .iter()
            .enumerate()
            .map(|(t, s)| Ok(by_prob(&m.predict(&stream[..t], s)?, s)))
            .collect::<Result<_>>()?,
        TrainedModel::Gmm(m) => stream
            .iter()
            .enumerate()
            .map(|(t, s)| Ok(by_prob(&m.predict(&stream[..t], s)?, s)))
            .collect::<Result<_>>()?,
        TrainedModel::Lstm(m) | TrainedModel::Blstm(m) => m
            .adapt_online(stream, lr)?
            .iter()
            .zip(stream)
            .map(|((p, _), s)| by_prob(p, s))
            .collect(),
        TrainedModel::Hybrid { bnn, baseline } => {
            let tr = run_episode(bnn, baseline, stream, lr, file.epsilon)?;
            return Ok((tr.steps.into_iter().map(|r| r.prediction).collect(), tr.switch_step));
        }
        TrainedModel::CfHybrid { bnn, baseline } => {
            let tr = run_episode(bnn, baseline, stream, lr, file.epsilon)?;
            return Ok((tr.steps.into_iter().map(|r| r.prediction).collect(), tr.switch_step));
        }
        TrainedModel::ActionEmbedCf { transition, pairwise } => {
            let demo = Demonstration {
                format_version: FORMAT_VERSION,
                demonstrator_id: String::new(),
                eval_only: None,
                num_agents: DEFAULT_AGENTS,
                num_tasks: DEFAULT_TASKS,
                steps: stream.to_vec(),
            };
            let sub = substitute_embeddings(&[demo], &transition.table)?.remove(0);
            let mut omega = vec![0.0; pairwise.embed_dim()];
            sub.steps
                .iter()
                .map(|s| {
                    let r = Ranker::rank(pairwise, &omega, s)?;
                    pairwise.omega_update(&mut omega, s, lr)?;
                    Ok(r)
                })
                .collect::<Result<_>>()?
        }
        TrainedModel::OracleStub => stream
            .iter()
            .map(|s| {
                let mut ids = vec![s.chosen_action_id];
                ids.extend(s.actions.iter().map(|a| a.action_id).filter(|&a| a != s.chosen_action_id));
                ids
            })
            .collect(),
        TrainedModel::UniformStub => {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            stream
                .iter()
                .map(|s| {
                    let mut ids: Vec<usize> = s.actions.iter().map(|a| a.action_id).collect();
                    ids.shuffle(&mut rng);
                    ids
                })
                .collect()
        }
    };
    Ok((ranks, None))
}

/// Per-episode evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub method: String,
    pub budget: usize,
    pub episode: usize,
    pub demonstrator_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_policy: Option<Heuristic>,
    pub decision_steps: usize,
    pub mean_candidates: f64,
    /// k → fraction of decision steps whose chosen action was in the top k.
    pub topk: BTreeMap<usize, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub switch_step: Option<usize>,
    pub hits_top1: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: String,
    pub budget: usize,
    pub top1_mean: f64,
    pub top1_stderr: f64,
    pub top3_mean: f64,
    pub top3_stderr: f64,
    pub n_episodes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub method: String,
    pub budget: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub rows: Vec<MetricRow>,
    pub config_hash: String,
    pub artifact_version: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<CellFailure>,
}

impl MetricTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{}\n",
                r.method, r.budget, r.top1_mean, r.top1_stderr, r.top3_mean, r.top3_stderr, r.n_episodes
            ));
        }
        s
    }

    pub fn row(&self, method: &str, budget: usize) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.method == method && r.budget == budget)
    }
}

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_compatible(file: &ModelFile, path: &str, test: &[Demonstration]) -> Result<()> {
    let slots = match &file.model {
        TrainedModel::Nn(m) | TrainedModel::Bnn(m) => Some(m.num_slots),
        TrainedModel::Hybrid { bnn, .. } => Some(bnn.num_slots),
        TrainedModel::Lstm(m) | TrainedModel::Blstm(m) => Some(m.num_slots),
        TrainedModel::Kmeans(m) => m.nets.first().map(|n| n.num_slots),
        TrainedModel::Gmm(m) => Some(m.net.num_slots),
        _ => None,
    };
    if let (Some(s), Some(d)) = (slots, test.first()) {
        if s != d.num_action_slots() {
            return usage(format!(
                "model {path} expects {s} action slots but the test set has {}",
                d.num_action_slots()
            ));
        }
    }
    Ok(())
}

/// Online evaluation of one model on every test demonstrator.
pub fn evaluate_model(
    file: &ModelFile,
    test: &[Demonstration],
    topk: &[usize],
    master: u64,
) -> Result<(MetricRow, Vec<EpisodeTrace>)> {
    check_compatible(file, &format!("{}-b{}", file.method, file.budget), test)?;
    let mut traces = Vec::with_capacity(test.len());
    for (i, d) in test.iter().enumerate() {
        let stream: Vec<DemoStep> = d.decision_steps().cloned().collect();
        if stream.is_empty() {
            continue;
        }
        let seed = cell_seed(master, &format!("{}#episode{i}", file.method), file.budget);
        let (ranks, switch_step) = rank_episode(file, &stream, seed)?;
        let mut hits = BTreeMap::new();
        for (r, s) in ranks.iter().zip(&stream) {
            let legal = |a: &usize| s.actions.iter().any(|x| x.action_id == *a);
            if r.is_empty() || !r.iter().all(legal) {
                return Err(Error::Data(format!(
                    "method {} ranked an action outside the legal set",
                    file.method
                )));
            }
            for &k in topk {
                let hit = r.iter().take(k).any(|&a| a == s.chosen_action_id);
                *hits.entry(k).or_insert(0.0) += f64::from(u8::from(hit));
            }
        }
        let n = stream.len() as f64;
        traces.push(EpisodeTrace {
            method: file.method.clone(),
            budget: file.budget,
            episode: i,
            demonstrator_id: d.demonstrator_id.clone(),
            hidden_policy: d.hidden_policy(),
            decision_steps: stream.len(),
            mean_candidates: stream.iter().map(|s| s.actions.len() as f64).sum::<f64>() / n,
            topk: hits.into_iter().map(|(k, h)| (k, h / n)).collect(),
            switch_step,
            hits_top1: ranks
                .iter()
                .zip(&stream)
                .map(|(r, s)| r.first() == Some(&s.chosen_action_id))
                .collect(),
        });
    }
    let col = |k: usize| traces.iter().map(|t| t.topk[&k]).collect::<Vec<f64>>();
    let (top1_mean, top1_stderr) = mean_stderr(&col(1));
    let (top3_mean, top3_stderr) = mean_stderr(&col(3));
    Ok((
        MetricRow {
            method: file.method.clone(),
            budget: file.budget,
            top1_mean,
            top1_stderr,
            top3_mean,
            top3_stderr,
            n_episodes: traces.len(),
        },
        traces,
    ))
}

fn audit_ids(train: &[Demonstration], test: &[Demonstration]) -> Result<()> {
    let ids: std::collections::BTreeSet<&str> = train.iter().map(|d| d.demonstrator_id.as_str()).collect();
    if let Some(d) = test.iter().find(|d| ids.contains(d.demonstrator_id.as_str())) {
        return Err(Error::Data(format!("test demonstrator {} also appears in training data", d.demonstrator_id)));
    }
    Ok(())
}

fn write_outputs(out: &Path, table: &MetricTable, traces: &[EpisodeTrace]) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("metrics.csv"), table.to_csv())?;
    let mut t = String::new();
    for tr in traces {
        t.push_str(&serde_json::to_string(tr)?);
        t.push('\n');
    }
    fs::write(out.join("traces.jsonl"), t)?;
    fs::write(out.join("metadata.json"), serde_json::to_string_pretty(table)?)?;
    Ok(())
}

/// Evaluates every existing model of the selected cells.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    out: &Path,
    method: Option<&str>,
    budget: Option<usize>,
) -> Result<MetricTable> {
    let test = read_dataset(&test_path(out), true)?;
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for m in selected_methods(cfg, method)? {
        for b in selected_budgets(cfg, budget)? {
            let path = model_path(out, &m, b);
            if !path.exists() {
                return Err(Error::Data(format!("model {} is missing; train it first", path.display())));
            }
            let file = read_model(&path)?;
            if let Ok(train) = read_dataset(&train_path(out, b), false) {
                audit_ids(&train, &test)?;
            }
            let (row, tr) = evaluate_model(&file, &test, &cfg.metrics.topk, cfg.seed)
                .map_err(|e| relabel(e, &path))?;
            rows.push(row);
            traces.extend(tr);
        }
    }
    let table = MetricTable {
        rows,
        config_hash: cfg.hash(),
        artifact_version: ARTIFACT_VERSION.to_string(),
        failures: Vec::new(),
    };
    write_outputs(out, &table, &traces)?;
    Ok(table)
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Usage(m) => Error::Usage(format!("{}: {m}", path.display())),
        other => other,
    }
}

type CellResult = std::result::Result<(MetricRow, Vec<EpisodeTrace>, Option<RunLogEntry>), String>;

fn run_cell(cfg: &ExperimentConfig, out: &Path, method: &str, budget: usize, test: &[Demonstration]) -> CellResult {
    let go = || -> Result<(MetricRow, Vec<EpisodeTrace>, Option<RunLogEntry>)> {
        let path = model_path(out, method, budget);
        let hash = cfg.hash();
        let (file, log) = match read_model(&path) {
            Ok(f) if f.config_hash == hash && f.method == method && f.budget == budget => (f, None),
            _ => {
                let demos = read_dataset(&train_path(out, budget), false)?;
                audit_ids(&demos, test)?;
                let (model, curve) = train_method(cfg, method, budget, &demos)?;
                let f = model_file(cfg, method, budget, model)?;
                write_model(&path, &f)?;
                let log = RunLogEntry {
                    method: method.to_string(),
                    budget,
                    config_hash: hash,
                    loss_curve: curve,
                };
                (f, Some(log))
            }
        };
        let (row, traces) = evaluate_model(&file, test, &cfg.metrics.topk, cfg.seed)?;
        Ok((row, traces, log))
    };
    go().map_err(|e| e.to_string())
}

/// Generates data where missing, then trains and evaluates every
/// (method, budget) cell on up to `jobs` threads. Cells whose model file
/// already carries the current config hash are not retrained. A failing
/// cell is recorded and the sweep carries on.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<MetricTable> {
    for &b in &cfg.dataset.budgets {
        if !train_path(out, b).exists() {
            let demos = generate_demonstrations(b, cfg.dataset.policy_mix, cfg.dataset.seed, "train")?;
            write_dataset(&train_path(out, b), &demos)?;
        }
    }
    if !test_path(out).exists() {
        write_dataset(&test_path(out), &test_demonstrations(&cfg.test)?)?;
    }
    let test = read_dataset(&test_path(out), true)?;
    let cells: Vec<(String, usize)> = cfg
        .methods
        .iter()
        .flat_map(|m| cfg.dataset.budgets.iter().map(move |&b| (m.clone(), b)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {jobs} workers: {e}")))?;
    let results: Vec<CellResult> = pool.install(|| {
        cells
            .par_iter()
            .map(|(m, b)| run_cell(cfg, out, m, *b, &test))
            .collect()
    });
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    let mut failures = Vec::new();
    for ((m, b), r) in cells.iter().zip(results) {
        match r {
            Ok((row, tr, log)) => {
                rows.push(row);
                traces.extend(tr);
                if let Some(l) = log {
                    append_log(out, &l)?;
                }
            }
            Err(e) => failures.push(CellFailure {
                method: m.clone(),
                budget: *b,
                error: e,
            }),
        }
    }
    let table = MetricTable {
        rows,
        config_hash: cfg.hash(),
        artifact_version: ARTIFACT_VERSION.to_string(),
        failures,
    };
    write_outputs(out, &table, &traces)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> Value {
        serde_json::json!({
            "dataset": {"seed": 1, "budgets": [3]},
            "methods": ["nn"],
            "test": {"seed": 2, "episodes": 4}
        })
    }

    fn parse(v: &Value) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(&v.to_string())
    }

    #[test]
    fn defaults_fill_in() {
        let c = parse(&base()).unwrap();
        assert_eq!(c.metrics.topk, vec![1, 3]);
        assert_eq!(c.clusters, 3);
        assert_eq!(c.dataset.policy_mix, [1.0; 3]);
    }

    #[test]
    fn errors_name_the_offending_path() {
        let mut v = base();
        v["dataset"]["budgets"] = serde_json::json!([3, 3]);
        let e = parse(&v).unwrap_err().to_string();
        assert!(e.contains("dataset.budgets[1]"), "{e}");
        let mut v = base();
        v["methods"] = serde_json::json!(["nn", "magic"]);
        assert!(parse(&v).unwrap_err().to_string().contains("methods[1]"));
        let mut v = base();
        v["overrides"] = serde_json::json!({"bnn": {"lr_theta": -1.0}});
        assert!(parse(&v).unwrap_err().to_string().contains("overrides.bnn"));
        let mut v = base();
        v["surprise"] = serde_json::json!(1);
        assert!(matches!(parse(&v), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_merge_onto_the_base() {
        let mut v = base();
        v["overrides"] = serde_json::json!({"bnn": {"lr_omega": 0.2}});
        let c = parse(&v).unwrap();
        assert_eq!(c.train_config("bnn").unwrap().lr_omega, 0.2);
        assert_eq!(c.train_config("nn").unwrap().lr_omega, TrainConfig::default().lr_omega);
    }

    #[test]
    fn cell_seeds_differ_by_method_and_budget() {
        let a = cell_seed(0, "nn", 3);
        assert_ne!(a, cell_seed(0, "bnn", 3));
        assert_ne!(a, cell_seed(0, "nn", 9));
        assert_ne!(a, cell_seed(1, "nn", 3));
        assert_eq!(a, cell_seed(0, "nn", 3));
    }

    #[test]
    fn stderr_of_constant_is_zero() {
        assert_eq!(mean_stderr(&[0.5, 0.5, 0.5]), (0.5, 0.0));
        let (m, s) = mean_stderr(&[0.0, 1.0]);
        assert_eq!(m, 0.5);
        assert!((s - 0.5).abs() < 1e-12);
    }
}
