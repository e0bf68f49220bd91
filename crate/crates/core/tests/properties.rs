use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hlfd::action_embed::{train_transition, ActionEmbedConfig};
use hlfd::bnn::{train_concurrent, PolicyLayout, TrainConfig};
use hlfd::cluster::{demo_signature, gmm_fit, kmeans_fit, train_clustered_nns};
use hlfd::counterfactual::{rank_actions, step_pairs};
use hlfd::hybrid::{run_episode, Predictor};
use hlfd::jobshop::{
    generate_demonstrations, generate_instance, heuristic_action, record_episode, ActionRecord, Behaviour, Demonstration,
    Heuristic, SchedulingAction, TaskStatus,
};
use hlfd::mlp::{Activation, Head, Mlp, OutputInit};
use hlfd::numerics::{renyi_divergence, softmax};
use hlfd::serial::to_exact_json;

fn small_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        hidden: vec![8],
        seed,
        ..TrainConfig::default()
    }
}

fn rename(demos: &[Demonstration], perm: &[usize]) -> Vec<Demonstration> {
    demos
        .iter()
        .enumerate()
        .map(|(i, d)| Demonstration {
            demonstrator_id: demos[perm[i]].demonstrator_id.clone(),
            ..d.clone()
        })
        .collect()
}

proptest! {
    #[test]
    fn softmax_is_a_shift_invariant_distribution(
        x in prop::collection::vec(-30.0f64..30.0, 1..12),
        c in -100.0f64..100.0,
    ) {
        let p = softmax(&x).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
        let q = softmax(&shifted).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (a, b) in p.iter().zip(q.iter()) {
            prop_assert!(*a > 0.0);
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn renyi_loss_falls_as_the_target_probability_rises(
        alpha in 0.01f64..=1.0,
        lo in 0.001f64..0.98,
        gap in 0.001f64..0.01,
    ) {
        let hi = (lo + gap).min(0.999);
        let a = renyi_divergence(&[lo, 1.0 - lo], 0, alpha).unwrap();
        let b = renyi_divergence(&[hi, 1.0 - hi], 0, alpha).unwrap();
        prop_assert!(b < a);
    }

    #[test]
    fn renyi_rescaled_near_one_matches_cross_entropy(p in 0.01f64..0.99) {
        let a = 0.999;
        let r = renyi_divergence(&[p, 1.0 - p], 0, a).unwrap() * (1.0 - a) / a;
        let ce = renyi_divergence(&[p, 1.0 - p], 0, 1.0).unwrap();
        prop_assert!((r - ce).abs() <= 1e-2 * ce);
    }

    #[test]
    fn bounded_networks_stay_finite_and_deterministic(
        seed in any::<u64>(),
        x in prop::collection::vec(-10.0f64..10.0, 4),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Mlp::new(&[4, 6, 3], Activation::Tanh, Head::Softmax, OutputInit::Uniform, &mut rng).unwrap();
        let k = net.num_params();
        net.set_flat_params(&(0..k).map(|_| rng.gen_range(-10.0..10.0)).collect::<Vec<_>>()).unwrap();
        let (out, cache) = net.forward(&x).unwrap();
        let (g, gx) = net.backward(&cache, &[1.0, -1.0, 0.5]).unwrap();
        prop_assert!(out.iter().chain(&gx).chain(&g.flatten()).all(|v| v.is_finite()));
        prop_assert_eq!(net.forward(&x).unwrap().0, out);
    }

    #[test]
    fn predict_action_ignores_candidate_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..8);
        let actions: Vec<ActionRecord> = (0..n)
            .map(|i| ActionRecord { action_id: i * 3, features: vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)] })
            .collect();
        let pref = |_: &[f64], _: &[f64], a: &[f64], b: &[f64]| 1.0 / (1.0 + (-(a[0] - b[0]) - 0.3 * (a[1] - b[1])).exp());
        let base = rank_actions(&pref, &[], &[0.0], &actions).unwrap();
        let mut shuffled = actions.clone();
        shuffled.reverse();
        shuffled.rotate_left(rng.gen_range(0..n));
        prop_assert_eq!(rank_actions(&pref, &[], &[0.0], &shuffled).unwrap(), base);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulated_episodes_respect_the_environment(seed in any::<u64>(), h in 0usize..3) {
        let policy = Heuristic::ALL[h];
        let mut s = generate_instance(seed, 20, 2).unwrap();
        while !s.is_terminal() {
            let a = heuristic_action(policy, &s).unwrap();
            prop_assert!(s.legal_actions().contains(&a));
            let done_before: Vec<bool> = s.status.iter().map(|t| *t == TaskStatus::Done).collect();
            let clock = s.clock;
            s = s.step(a).unwrap();
            prop_assert!(s.occupancy_ok());
            prop_assert!(s.clock >= clock);
            for (i, was) in done_before.iter().enumerate() {
                prop_assert!(!was || s.status[i] == TaskStatus::Done);
            }
            if let SchedulingAction::Assign { agent, task } = a {
                prop_assert!(s.agents[agent].busy_until <= s.tasks[task].deadline);
            }
        }
    }

    #[test]
    fn recorded_choices_are_legal_and_pairs_are_counted(seed in any::<u64>()) {
        let demos = generate_demonstrations(3, [1.0, 1.0, 1.0], seed, "p").unwrap();
        for step in demos.iter().flat_map(|d| &d.steps) {
            prop_assert!(step.actions.iter().any(|a| a.action_id == step.chosen_action_id));
            let pairs = step_pairs(step).unwrap();
            prop_assert_eq!(pairs.len(), 2 * (step.actions.len() - 1));
            prop_assert_eq!(2 * pairs.iter().filter(|p| p.1 == 1).count(), pairs.len());
        }
    }

    #[test]
    fn datasets_are_reproducible_byte_for_byte(seed in any::<u64>()) {
        let a = generate_demonstrations(4, [1.0, 2.0, 1.0], seed, "r").unwrap();
        let b = generate_demonstrations(4, [1.0, 2.0, 1.0], seed, "r").unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let prefix = generate_demonstrations(2, [1.0, 2.0, 1.0], seed, "r").unwrap();
        prop_assert_eq!(&prefix[..], &a[..2]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn training_is_seed_deterministic_and_online_adaptation_freezes_theta(seed in any::<u64>()) {
        let demos = generate_demonstrations(3, [1.0, 1.0, 1.0], seed, "d").unwrap();
        let cfg = small_cfg(seed);
        let (a, ca) = train_concurrent(&demos, PolicyLayout::Shared, &cfg).unwrap();
        let (b, cb) = train_concurrent(&demos, PolicyLayout::Shared, &cfg).unwrap();
        prop_assert_eq!(&ca, &cb);
        let before = to_exact_json(&a).unwrap();
        prop_assert_eq!(&before, &to_exact_json(&b).unwrap());
        let stream: Vec<_> = demos[0].decision_steps().cloned().collect();
        a.adapt_online(&stream, 0.5).unwrap();
        prop_assert_eq!(before, to_exact_json(&a).unwrap());
    }

    #[test]
    fn renaming_demonstrators_only_relabels_embeddings(seed in any::<u64>()) {
        let demos = generate_demonstrations(3, [1.0, 1.0, 1.0], seed, "n").unwrap();
        let perm = [2, 0, 1];
        let cfg = small_cfg(seed);
        let (a, _) = train_concurrent(&demos, PolicyLayout::Shared, &cfg).unwrap();
        let (b, _) = train_concurrent(&rename(&demos, &perm), PolicyLayout::Shared, &cfg).unwrap();
        prop_assert_eq!(&a.model, &b.model);
        for (i, d) in demos.iter().enumerate() {
            prop_assert_eq!(&a.embeddings[&d.demonstrator_id], &b.embeddings[&demos[perm[i]].demonstrator_id]);
        }
        let acfg = ActionEmbedConfig { epochs: 2, seed, ..ActionEmbedConfig::default() };
        let (ta, _) = train_transition(&demos, &acfg).unwrap();
        let (tb, _) = train_transition(&rename(&demos, &perm), &acfg).unwrap();
        prop_assert_eq!(ta.table, tb.table);
    }

    #[test]
    fn hybrid_latches_and_tracks_online_adaptation(seed in any::<u64>(), eps in prop::sample::select(vec![1e-2, 1e-3, 1e-4])) {
        let demos = generate_demonstrations(4, [1.0, 1.0, 1.0], seed, "h").unwrap();
        let cfg = small_cfg(seed);
        let (bnn, _) = train_concurrent(&demos, PolicyLayout::Shared, &cfg).unwrap();
        let (nn, _) = train_concurrent(&demos, PolicyLayout::Shared, &cfg.homogeneous()).unwrap();
        let frozen = (to_exact_json(&bnn).unwrap(), to_exact_json(&nn).unwrap());
        let stream: Vec<_> = demos[3].decision_steps().cloned().collect();
        let trace = run_episode(&bnn, &nn, &stream, cfg.lr_omega, eps).unwrap();
        let switch = trace.switch_step.unwrap_or(stream.len());
        for (t, r) in trace.steps.iter().enumerate() {
            let expect = if t < switch { Predictor::Baseline } else { Predictor::Bnn };
            prop_assert_eq!(r.predictor_used, expect);
            prop_assert!(r.omega_delta_norm >= 0.0);
        }
        let online = bnn.adapt_online(&stream, cfg.lr_omega).unwrap();
        for (r, (_, w)) in trace.steps.iter().zip(&online) {
            prop_assert_eq!(&r.omega_after, w);
        }
        prop_assert_eq!(frozen, (to_exact_json(&bnn).unwrap(), to_exact_json(&nn).unwrap()));
    }

    #[test]
    fn fitters_are_seed_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..40).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        prop_assert_eq!(kmeans_fit(&pts, 3, seed).unwrap(), kmeans_fit(&pts, 3, seed).unwrap());
        prop_assert_eq!(gmm_fit(&pts, 3, seed).unwrap(), gmm_fit(&pts, 3, seed).unwrap());
    }
}

#[test]
fn routing_settles_after_ten_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut train = Vec::new();
    for (i, h) in Heuristic::ALL.iter().cycle().take(30).enumerate() {
        let inst = generate_instance(rng.gen(), 20, 2).unwrap();
        train.push(Demonstration {
            format_version: 1,
            demonstrator_id: format!("r-{i}"),
            eval_only: None,
            num_agents: 2,
            num_tasks: 20,
            steps: record_episode(inst, &Behaviour::Pure(*h), &mut rng).unwrap(),
        });
    }
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let model = train_clustered_nns(&train, 3, PolicyLayout::Shared, &cfg).unwrap();
    let mut stable = 0;
    for e in 0..200 {
        let inst = generate_instance(rng.gen(), 20, 2).unwrap();
        let steps = record_episode(inst, &Behaviour::Pure(Heuristic::ALL[e % 3]), &mut rng).unwrap();
        let stream: Vec<_> = steps.into_iter().filter(|s| s.is_decision()).collect();
        let routes: Vec<usize> = (10..=stream.len()).map(|t| model.route(&stream[..t]).unwrap()).collect();
        stable += usize::from(routes.windows(2).all(|w| w[0] == w[1]));
    }
    assert!(stable >= 190, "{stable}/200 episodes kept their cluster");
}

#[test]
fn signatures_have_fixed_length() {
    let demos = generate_demonstrations(5, [1.0, 1.0, 1.0], 4, "s").unwrap();
    for d in &demos {
        assert_eq!(demo_signature(d).unwrap().len(), hlfd::cluster::SIGNATURE_LEN);
    }
}

#[test]
fn transition_loss_trends_down() {
    let demos = generate_demonstrations(10, [1.0, 1.0, 1.0], 6, "t").unwrap();
    let cfg = ActionEmbedConfig {
        epochs: 30,
        ..ActionEmbedConfig::default()
    };
    let (_, curve) = train_transition(&demos, &cfg).unwrap();
    for w in curve.windows(10).step_by(10) {
        assert!(w[9] < w[0], "{w:?}");
    }
}
