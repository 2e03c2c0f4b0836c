//! The factored template policy: sample and render responses, exact
//! log-probabilities, KL to another policy and a JSON checkpoint.
//!
//! cargo run --example template_policy

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cfgrpo::grpo::kl_divergence;
use cfgrpo::observation::{Observation, OBS_DIM};
use cfgrpo::policy::{Grammar, TemplatePolicy};
use cfgrpo::rewards::StructuredResponse;
use cfgrpo::synthcorpus::CorpusSpec;

fn main() -> cfgrpo::Result<()> {
    let grammar = Arc::new(Grammar::synthetic(CorpusSpec::default().n_styles, OBS_DIM));
    println!(
        "{} components, {} parameters",
        grammar.n_components(),
        grammar.n_params()
    );
    for b in grammar.blocks() {
        println!("  block {:<14} {} x {}", b.name, b.len(), b.width);
    }

    let policy = TemplatePolicy::random(grammar.clone(), 0.5, 1);
    let obs = Observation((0..OBS_DIM).map(|i| (i as f64 * 0.7).sin()).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..2 {
        let c = policy.sample(&obs, &mut rng)?;
        let text = grammar.render(&c);
        println!("\nlog p = {:.4}\n{text}", policy.log_prob(&obs, &c)?);
        assert_eq!(
            policy.log_prob_text(&obs, &StructuredResponse::parse(text))?,
            policy.log_prob(&obs, &c)?
        );
    }

    let uniform = TemplatePolicy::zeros(grammar);
    println!(
        "\nKL(policy || uniform) = {:.4}",
        kl_divergence(&policy, &uniform, &obs)?
    );
    println!(
        "KL(policy || policy)  = {:.4}",
        kl_divergence(&policy, &policy, &obs)?
    );

    let ckpt = serde_json::to_string(&policy.to_checkpoint()).expect("checkpoint serializes");
    let back =
        TemplatePolicy::from_checkpoint(&serde_json::from_str(&ckpt).expect("checkpoint parses"))?;
    println!(
        "checkpoint: {} bytes, round trip exact: {}",
        ckpt.len(),
        back == policy
    );
    Ok(())
}
