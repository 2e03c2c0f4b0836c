//! Latent factor model: plain cross-entropy training picks up the
//! high-norm spurious feature, and the counterfactual penalty removes it.
//!
//! cargo run --release --example shortcut_theory

use cfgrpo::experiments::{theory_rectify, theory_shortcut, Artifacts, TheoryConfig};

fn main() -> cfgrpo::Result<()> {
    let theory = TheoryConfig::default();
    let s = theory_shortcut(&theory, &mut Artifacts::default())?;
    println!(
        "unpenalized training ({} steps, converged: {})",
        s.steps_run, s.converged
    );
    println!(
        "  sensitivity  causal {:.4}  spurious {:.4}",
        s.last.s_c, s.last.s_e
    );
    println!(
        "  weight norm  causal {:.4}  spurious {:.4}",
        s.last.norm_wc, s.last.norm_we
    );
    println!(
        "  first update causal {:.5}  spurious {:.5}",
        s.first_step_delta_wc, s.first_step_delta_we
    );

    let r = theory_rectify(&theory, &mut Artifacts::default())?;
    println!("\npenalty sweep");
    println!("  lambda      S_c      S_e   f(X_cf)  causal acc");
    for row in &r.rows {
        println!(
            "  {:>6} {:>8.4} {:>8.4} {:>9.4} {:>11.3}",
            row.lambda, row.s_c, row.s_e, row.mean_f_cf, row.causal_accuracy
        );
    }
    Ok(())
}
