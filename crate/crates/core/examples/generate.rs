//! Simulate a few scheduling episodes under each heuristic and show what a
//! learner gets to see.

use hlfd::jobshop::{generate_demonstrations, Heuristic};

fn main() -> hlfd::Result<()> {
    let demos = generate_demonstrations(9, [1.0, 1.0, 1.0], 42, "demo")?;
    for d in &demos {
        let decisions = d.decision_steps().count();
        let mean_legal = d.decision_steps().map(|s| s.actions.len()).sum::<usize>() as f64 / decisions.max(1) as f64;
        println!(
            "{:<8} {:<8} steps {:>3}  decisions {:>3}  mean legal actions {:.1}",
            d.demonstrator_id,
            d.hidden_policy().map(|h| h.to_string()).unwrap_or_default(),
            d.steps.len(),
            decisions,
            mean_legal
        );
    }
    let step = demos[0].decision_steps().next().expect("a decision step");
    println!("\nstate features {:?}", step.state_features);
    for a in &step.actions {
        let mark = if a.action_id == step.chosen_action_id { "*" } else { " " };
        println!("{mark} action {:>2} {:?}", a.action_id, a.features);
    }
    let learner_view = demos[0].clone().strip_eval_only();
    assert!(learner_view.hidden_policy().is_none());
    println!("\npolicies: {:?}", Heuristic::ALL);
    Ok(())
}
