//! Drive the experiment harness from a config, as the command-line tool
//! does: robustness of SFT and counterfactual GRPO under spot interference.
//!
//! cargo run --release --example experiment_harness [out_dir]

use cfgrpo::experiments::{run_experiment, ExperimentConfig, ExperimentKind, Report};

fn main() -> cfgrpo::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let config = ExperimentConfig::from_json(
        r#"{
            "experiment": "robustness",
            "seed": 4,
            "corpus": { "n_samples": 800 },
            "grpo": { "steps": 60 }
        }"#,
    )?;
    let config = ExperimentConfig { out, ..config };
    assert_eq!(config.experiment, Some(ExperimentKind::Robustness));
    let Report::Robustness(r) = run_experiment(&config)? else {
        unreachable!("robustness config yields a robustness report")
    };
    println!("            clean   spots    drop   cf pathology");
    for (name, m, cf) in [
        ("SFT", &r.sft, r.sft_counterfactual_pathology),
        ("GRPO+cf", &r.grpo, r.grpo_counterfactual_pathology),
    ] {
        println!(
            "{name:<9} {:>7.3} {:>7.3} {:>7.3} {:>14.3}",
            m.accuracy,
            m.perturbed_accuracy.unwrap_or(f64::NAN),
            m.accuracy_drop.unwrap_or(f64::NAN),
            cf
        );
    }
    if let Some(dir) = &config.out {
        println!("artifacts in {}", dir.display());
    }
    Ok(())
}
