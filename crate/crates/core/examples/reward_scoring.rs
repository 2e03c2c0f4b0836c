//! Score hand-written responses with the format, cognition and diagnosis
//! rewards.
//!
//! cargo run --example reward_scoring

use cfgrpo::experiments::reward_context;
use cfgrpo::rewards::{DiagnosisLabelSet, KeywordSet, RewardWeights, StructuredResponse};

fn main() -> cfgrpo::Result<()> {
    let keywords = KeywordSet::new([
        ["gastric antrum", "bright illumination", "clear view"],
        ["raised", "rounded", "smooth"],
        ["regular pit pattern", "dilated vessels", "glossy"],
    ])?;
    let gold = DiagnosisLabelSet::new(["polyp", "ulcer"]);
    let complete = "Location & Imaging Environment: gastric antrum, bright illumination, clear view\n\
                    Mucosal Morphology & Focal Lesions: raised, rounded, smooth\n\
                    Surface Texture & Microvascular Architecture: regular pit pattern, dilated vessels, glossy\n\
                    Diagnosis: polyp, ulcer";
    let responses = [
        ("complete", complete.to_string()),
        ("one label short", complete.replace("polyp, ulcer", "polyp")),
        (
            "missing section",
            complete.replace("Surface Texture & Microvascular Architecture: ", ""),
        ),
        (
            "sparse findings",
            "Location & Imaging Environment: gastric antrum\n\
             Mucosal Morphology & Focal Lesions: raised\n\
             Surface Texture & Microvascular Architecture: glossy\n\
             Diagnosis: ulcer; polyp"
                .to_string(),
        ),
    ];
    for weights in [
        RewardWeights::default(),
        RewardWeights {
            w_cog: 0.0,
            ..RewardWeights::default()
        },
    ] {
        let ctx = reward_context(weights);
        println!(
            "weights fmt {} cog {} diag {}",
            weights.w_fmt, weights.w_cog, weights.w_diag
        );
        for (name, text) in &responses {
            let r = ctx.score(&StructuredResponse::parse(text.as_str()), &keywords, &gold);
            println!(
                "  {name:<16} fmt {:.0}  cog {:.3}  diag {:.0}  total {:.3}",
                r.r_fmt, r.r_cog, r.r_diag, r.total
            );
        }
    }
    Ok(())
}
