//! Supervised warm start, then counterfactual GRPO, on a reduced corpus.
//!
//! cargo run --release --example grpo_training [steps]

use cfgrpo::counterfactual::MaskStrategy;
use cfgrpo::experiments::{evaluate, reward_context, run_grpo, run_sft, Dataset, EvalOptions};
use cfgrpo::grpo::{GrpoConfig, SftConfig};
use cfgrpo::rewards::RewardWeights;
use cfgrpo::synthcorpus::CorpusSpec;

fn main() -> cfgrpo::Result<()> {
    let steps = std::env::args()
        .nth(1)
        .map_or(60, |s| s.parse().expect("steps is an integer"));
    let data = Dataset::generate(&CorpusSpec {
        n_samples: 800,
        ..CorpusSpec::default()
    })?;
    let (sft, losses) = run_sft(&data, &SftConfig::default())?;
    println!(
        "SFT loss {:.3} -> {:.3}",
        losses[0],
        losses[losses.len() - 1]
    );

    let cf = data.counterfactual_train(&MaskStrategy::blur())?;
    let config = GrpoConfig {
        steps,
        ..GrpoConfig::default()
    };
    let (grpo, log) = run_grpo(&data, &sft, &cf, &config)?;
    for l in log.iter().step_by(10) {
        println!(
            "step {:>4}  reward {:.3}  fmt {:.3}  cog {:.3}  diag {:.3}  kl {:.4}",
            l.step, l.mean_reward, l.mean_r_fmt, l.mean_r_cog, l.mean_r_diag, l.kl
        );
    }

    let ctx = reward_context(RewardWeights::default());
    let opts = EvalOptions::default();
    for (name, p) in [("SFT", &sft), ("GRPO", &grpo)] {
        let m = evaluate(p, &data.test, &ctx, &opts)?;
        println!(
            "{name:<5} test accuracy {:.3} (single {:.3}, multi {:.3}), mean reward {:.3}",
            m.accuracy, m.single_accuracy, m.multi_accuracy, m.mean_reward
        );
    }
    Ok(())
}
