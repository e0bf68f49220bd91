//! Pairwise preference training: every observed choice is compared with each
//! alternative it beat.

use hlfd::bnn::TrainConfig;
use hlfd::counterfactual::{pairwise_examples, train_pairwise_bnn};
use hlfd::hybrid::Adaptive;
use hlfd::jobshop::generate_demonstrations;

fn main() -> hlfd::Result<()> {
    let train = generate_demonstrations(30, [1.0, 1.0, 1.0], 1, "train")?;
    let test = generate_demonstrations(20, [1.0, 1.0, 1.0], 2, "test")?;
    let (rows, dim) = pairwise_examples(&train)?;
    println!("{} pairwise rows of width {dim} from {} demonstrations", rows.len(), train.len());
    let cfg = TrainConfig::default();
    for (name, c) in [("cf_nn", cfg.homogeneous()), ("cf_bnn", cfg.clone())] {
        let (model, _) = train_pairwise_bnn(&train, &c)?;
        let (mut top1, mut top3, mut n) = (0, 0, 0);
        for d in &test {
            let mut omega = vec![0.0; model.embed_dim()];
            for s in d.decision_steps() {
                let ranked = model.rank(&omega, s)?;
                top1 += usize::from(ranked[0] == s.chosen_action_id);
                top3 += usize::from(ranked.iter().take(3).any(|&a| a == s.chosen_action_id));
                n += 1;
                Adaptive::omega_update(&model, &mut omega, s, c.lr_omega)?;
            }
        }
        println!("{name:<7} top-1 {:.3}  top-3 {:.3}", top1 as f64 / n as f64, top3 as f64 / n as f64);
    }
    Ok(())
}
