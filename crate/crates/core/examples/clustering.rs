//! Clustering baselines: split demonstrators by behaviour signature, or feed
//! the mixture posterior to one network.

use hlfd::bnn::{PolicyLayout, TrainConfig};
use hlfd::cluster::{demo_signature, gmm_fit, kmeans_fit, train_clustered_nns, train_gmm_augmented_nn};
use hlfd::jobshop::generate_demonstrations;

fn main() -> hlfd::Result<()> {
    let train = generate_demonstrations(30, [1.0, 1.0, 1.0], 1, "train")?;
    let sigs = train.iter().map(demo_signature).collect::<hlfd::Result<Vec<_>>>()?;
    let km = kmeans_fit(&sigs, 3, 0)?;
    println!("k-means WCSS per iteration {:.4?}", km.wcss_trace);
    for (d, s) in train.iter().zip(&sigs).take(9) {
        println!("{:<9} {:<8} cluster {}", d.demonstrator_id, d.hidden_policy().unwrap(), km.assign(s));
    }
    let gmm = gmm_fit(&sigs, 3, 0)?;
    println!("GMM weights {:.3?} after {} EM steps", gmm.weights, gmm.loglik_trace.len());

    let cfg = TrainConfig {
        epochs: 10,
        ..TrainConfig::default()
    };
    let clustered = train_clustered_nns(&train, 3, PolicyLayout::Shared, &cfg)?;
    let augmented = train_gmm_augmented_nn(&train, 3, PolicyLayout::Shared, &cfg)?;
    let test = generate_demonstrations(1, [1.0, 1.0, 1.0], 2, "test")?;
    let stream: Vec<_> = test[0].decision_steps().cloned().collect();
    for t in [0, 5, stream.len() - 1] {
        println!(
            "after {t:>2} steps: routed to cluster {}, posterior {:.3?}",
            clustered.route(&stream[..t])?,
            &augmented.posterior(&stream[..t])?[..]
        );
    }
    Ok(())
}
