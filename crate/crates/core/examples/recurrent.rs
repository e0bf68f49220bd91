//! Recurrent policies over whole episodes, with and without an embedding.

use hlfd::bnn::{PolicyLayout, TrainConfig};
use hlfd::jobshop::generate_demonstrations;
use hlfd::lstm::{train_lstm_policy, LstmConfig};
use hlfd::numerics::argmax;

fn main() -> hlfd::Result<()> {
    let train = generate_demonstrations(15, [1.0, 1.0, 1.0], 1, "train")?;
    let test = generate_demonstrations(15, [1.0, 1.0, 1.0], 2, "test")?;
    let cfg = TrainConfig::default();
    let lcfg = LstmConfig::default();
    for (name, c) in [("lstm", cfg.homogeneous()), ("blstm", cfg.clone())] {
        let (policy, curve) = train_lstm_policy(&train, PolicyLayout::Shared, &c, &lcfg)?;
        let (mut hits, mut n) = (0, 0);
        for d in &test {
            let stream: Vec<_> = d.decision_steps().cloned().collect();
            for ((p, _), s) in policy.adapt_online(&stream, c.lr_omega)?.iter().zip(&stream) {
                hits += usize::from(argmax(p) == s.chosen_action_id);
                n += 1;
            }
        }
        println!("{name:<6} loss {:.3} -> {:.3}  online top-1 {:.3}", curve[0], curve.last().unwrap(), hits as f64 / n as f64);
    }
    Ok(())
}
