//! Learn an embedding per action category from observed transitions and use
//! it in place of the hand-built action features.

use hlfd::action_embed::{action_category, substitute_embeddings, train_transition, ActionEmbedConfig};
use hlfd::jobshop::generate_demonstrations;
use hlfd::numerics::l2_distance;

fn main() -> hlfd::Result<()> {
    let demos = generate_demonstrations(30, [1.0, 1.0, 1.0], 1, "train")?;
    let cfg = ActionEmbedConfig::default();
    let (model, curve) = train_transition(&demos, &cfg)?;
    println!("transition loss {:.4} -> {:.4}", curve[0], curve.last().unwrap());
    let step = demos[0].decision_steps().next().unwrap();
    for a in step.actions.iter().take(5) {
        let c = action_category(a, demos[0].num_tasks, demos[0].num_agents);
        println!("action {:>2} -> {c:<22} ω_a {:.3?}", a.action_id, model.table[&c].as_slice());
    }
    let wait = &model.table["wait"];
    let mut far: Vec<(f64, &String)> = model.table.iter().map(|(c, w)| (l2_distance(w.as_slice(), wait.as_slice()), c)).collect();
    far.sort_by(|a, b| b.0.total_cmp(&a.0));
    println!("categories farthest from wait: {:?}", &far[..3]);
    let sub = substitute_embeddings(&demos, &model.table)?;
    println!("action features now have length {}", sub[0].steps[0].actions[0].features.len());
    Ok(())
}
