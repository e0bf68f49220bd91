//! Train a homogeneous network and an embedding-conditioned one on mixed
//! demonstrators, then adapt the embedding online on unseen demonstrators.

use hlfd::bnn::{train_concurrent, PolicyLayout, PolicyModel, TrainConfig};
use hlfd::jobshop::generate_demonstrations;
use hlfd::numerics::argmax;

fn online_top1(model: &PolicyModel, demos: &[hlfd::jobshop::Demonstration], lr: f64) -> hlfd::Result<f64> {
    let mut hits = 0;
    let mut n = 0;
    for d in demos {
        let stream: Vec<_> = d.decision_steps().cloned().collect();
        for ((p, _), s) in model.adapt_online(&stream, lr)?.iter().zip(&stream) {
            hits += usize::from(argmax(p) == s.chosen_action_id);
            n += 1;
        }
    }
    Ok(hits as f64 / n as f64)
}

fn main() -> hlfd::Result<()> {
    let train = generate_demonstrations(30, [1.0, 1.0, 1.0], 1, "train")?;
    let test = generate_demonstrations(30, [1.0, 1.0, 1.0], 2, "test")?;
    let cfg = TrainConfig::default();
    let (nn, nn_curve) = train_concurrent(&train, PolicyLayout::Shared, &cfg.homogeneous())?;
    let (bnn, bnn_curve) = train_concurrent(&train, PolicyLayout::Shared, &cfg)?;
    println!("final training loss: nn {:.3}  bnn {:.3}", nn_curve.last().unwrap(), bnn_curve.last().unwrap());
    println!("online top-1: nn {:.3}  bnn {:.3}", online_top1(&nn, &test, 0.0)?, online_top1(&bnn, &test, cfg.lr_omega)?);
    for (id, w) in bnn.embeddings.iter().take(6) {
        println!("{id:<9} ω = {:.3?}", w.as_slice());
    }
    Ok(())
}
