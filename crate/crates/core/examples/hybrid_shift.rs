//! Start with the homogeneous baseline and hand over to the embedding model
//! once the online embedding stops moving.

use hlfd::bnn::{train_concurrent, PolicyLayout, TrainConfig};
use hlfd::hybrid::{episode_accuracy, run_episode};
use hlfd::jobshop::generate_demonstrations;

fn main() -> hlfd::Result<()> {
    let train = generate_demonstrations(30, [1.0, 1.0, 1.0], 1, "train")?;
    let test = generate_demonstrations(10, [1.0, 1.0, 1.0], 2, "test")?;
    let cfg = TrainConfig::default();
    let (bnn, _) = train_concurrent(&train, PolicyLayout::Shared, &cfg)?;
    let (nn, _) = train_concurrent(&train, PolicyLayout::Shared, &cfg.homogeneous())?;
    for epsilon in [1e-2, 1e-3] {
        println!("epsilon {epsilon}");
        for d in &test {
            let stream: Vec<_> = d.decision_steps().cloned().collect();
            let trace = run_episode(&bnn, &nn, &stream, cfg.lr_omega, epsilon)?;
            let truth: Vec<usize> = stream.iter().map(|s| s.chosen_action_id).collect();
            let acc = episode_accuracy(&trace, &truth)?;
            println!(
                "  {:<7} switch at {:>4}  overall {:.2}  before {:.2}  after {}",
                d.demonstrator_id,
                trace.switch_step.map(|s| s.to_string()).unwrap_or("-".into()),
                acc.overall.unwrap_or(0.0),
                acc.pre_switch.unwrap_or(0.0),
                acc.post_switch.map(|a| format!("{a:.2}")).unwrap_or("-".into())
            );
        }
    }
    Ok(())
}
