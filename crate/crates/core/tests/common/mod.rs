//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use cfgrpo::rewards::{
    DiagnosisLabelSet, KeywordSet, RewardBreakdown, RewardContext, StructuredResponse,
};
use cfgrpo::synthcorpus::templates::label_vocabulary;

pub const H1: &str = "Location & Imaging Environment";
pub const H2: &str = "Mucosal Morphology & Focal Lesions";
pub const H3: &str = "Surface Texture & Microvascular Architecture";

pub fn keywords() -> KeywordSet {
    KeywordSet::new([
        ["gastric antrum", "bright illumination", "clear view"],
        ["raised", "rounded", "smooth"],
        ["regular pit pattern", "dilated vessels", "glossy"],
    ])
    .unwrap()
}

/// A hand-built response with its expected reward components.
pub struct RewardCase {
    pub name: &'static str,
    pub text: String,
    pub gold: Vec<&'static str>,
    pub strict_order: bool,
    pub r_fmt: f64,
    /// Keywords expected to be found, out of nine.
    pub hits: usize,
    pub r_diag: f64,
}

pub fn sections(s1: &str, s2: &str, s3: &str) -> String {
    format!("{H1}: {s1}\n{H2}: {s2}\n{H3}: {s3}")
}

fn gold_body() -> String {
    sections(
        "gastric antrum, bright illumination, clear view",
        "raised, rounded, smooth",
        "regular pit pattern, dilated vessels, glossy",
    )
}

fn case(
    name: &'static str,
    text: String,
    gold: &[&'static str],
    r_fmt: f64,
    hits: usize,
    r_diag: f64,
) -> RewardCase {
    RewardCase {
        name,
        text,
        gold: gold.to_vec(),
        strict_order: false,
        r_fmt,
        hits,
        r_diag,
    }
}

pub fn reward_cases() -> Vec<RewardCase> {
    let full = gold_body();
    let three = sections("gastric antrum", "raised", "glossy");
    vec![
        case("all present", format!("{full}\nDiagnosis: polyp"), &["polyp"], 1.0, 9, 1.0),
        case(
            "third header missing",
            format!("{H1}: gastric antrum, bright illumination, clear view\n{H2}: raised, rounded, smooth\nregular pit pattern, dilated vessels, glossy\nDiagnosis: polyp"),
            &["polyp"],
            0.0,
            9,
            1.0,
        ),
        case(
            "first header missing",
            format!("gastric antrum, bright illumination, clear view\n{H2}: raised, rounded, smooth\n{H3}: regular pit pattern, dilated vessels, glossy\nDiagnosis: polyp"),
            &["polyp"],
            0.0,
            9,
            1.0,
        ),
        case("three of nine keywords", format!("{three}\nDiagnosis: polyp"), &["polyp"], 1.0, 3, 1.0),
        case("no keywords", format!("{}\nDiagnosis: polyp", sections("none", "none", "none")), &["polyp"], 1.0, 0, 1.0),
        case(
            "keywords case-insensitive",
            format!("{}\nDiagnosis: polyp", sections("GASTRIC ANTRUM", "Raised", "Glossy")),
            &["polyp"],
            1.0,
            3,
            1.0,
        ),
        case(
            "keyword split across whitespace",
            format!("{}\nDiagnosis: polyp", sections("gastric\n   antrum", "", "regular  pit\tpattern")),
            &["polyp"],
            1.0,
            2,
            1.0,
        ),
        case("repeated keyword counts once", format!("{}\nDiagnosis: polyp", sections("", "raised raised raised", "")), &["polyp"], 1.0, 1, 1.0),
        case("multi-label exact", format!("{full}\nDiagnosis: polyp, ulcer"), &["polyp", "ulcer"], 1.0, 9, 1.0),
        case("multi-label order-free", format!("{full}\nDiagnosis: ulcer; polyp"), &["polyp", "ulcer"], 1.0, 9, 1.0),
        case("multi-label subset", format!("{full}\nDiagnosis: polyp"), &["polyp", "ulcer"], 1.0, 9, 0.0),
        case("multi-label superset", format!("{full}\nDiagnosis: polyp, ulcer, erosion"), &["polyp", "ulcer"], 1.0, 9, 0.0),
        case("single gold, extra label", format!("{full}\nDiagnosis: polyp, erosion"), &["polyp"], 1.0, 9, 0.0),
        case("wrong label", format!("{full}\nDiagnosis: ulcer"), &["polyp"], 1.0, 9, 0.0),
        case("label case-insensitive", format!("{full}\nDiagnosis: Polyp"), &["polyp"], 1.0, 9, 1.0),
        case("duplicate label", format!("{full}\nDiagnosis: polyp, polyp"), &["polyp"], 1.0, 9, 1.0),
        case("unknown label ignored", format!("{full}\nDiagnosis: polyp, tumour"), &["polyp"], 1.0, 9, 1.0),
        case("no diagnosis line", full.clone(), &["polyp"], 1.0, 9, 0.0),
        case("last diagnosis line wins", format!("Diagnosis: ulcer\n{full}\nDiagnosis: polyp"), &["polyp"], 1.0, 9, 1.0),
        case("normal exact", format!("{full}\nDiagnosis: normal"), &["normal"], 1.0, 9, 1.0),
        case("normal plus pathology", format!("{full}\nDiagnosis: normal, polyp"), &["normal"], 1.0, 9, 0.0),
        case(
            "headers out of order",
            format!("{H3}: glossy\n{H1}: gastric antrum\n{H2}: raised\nDiagnosis: polyp"),
            &["polyp"],
            1.0,
            3,
            1.0,
        ),
        RewardCase {
            strict_order: true,
            ..case(
                "headers out of order, strict",
                format!("{H3}: glossy\n{H1}: gastric antrum\n{H2}: raised\nDiagnosis: polyp"),
                &["polyp"],
                0.0,
                3,
                1.0,
            )
        },
        case(
            "header whitespace normalized",
            format!("Location  &  Imaging Environment: clear view\n{H2}: smooth\n{H3}:\nDiagnosis: polyp"),
            &["polyp"],
            1.0,
            2,
            1.0,
        ),
        case("empty response", String::new(), &["polyp"], 0.0, 0, 0.0),
    ]
}

/// The case's breakdown under default weights, or a description of the
/// first mismatch.
pub fn check_reward_case(c: &RewardCase) -> Result<RewardBreakdown, String> {
    let ctx = RewardContext {
        strict_order: c.strict_order,
        vocabulary: label_vocabulary(),
        ..RewardContext::default()
    };
    let got = ctx.score(
        &StructuredResponse::parse(c.text.clone()),
        &keywords(),
        &DiagnosisLabelSet::new(&c.gold),
    );
    let r_cog = c.hits as f64 / 9.0;
    let total = c.r_fmt + r_cog + 2.0 * c.r_diag;
    let want = [c.r_fmt, r_cog, c.r_diag, total];
    let have = [got.r_fmt, got.r_cog, got.r_diag, got.total];
    if want == have {
        Ok(got)
    } else {
        Err(format!("{}: expected {want:?}, got {have:?}", c.name))
    }
}
