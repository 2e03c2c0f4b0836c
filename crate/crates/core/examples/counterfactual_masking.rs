//! Erase a rendered lesion with a Gaussian blur and with a white fill, add
//! spot interference, and compare the encoder's lesion channels.
//!
//! cargo run --release --example counterfactual_masking [out_dir]

use cfgrpo::counterfactual::{
    apply_spot_interference, synthesize_counterfactual, MaskStrategy, SpotInterferenceConfig,
};
use cfgrpo::observation::{observe, FEATURE_NAMES};
use cfgrpo::synthcorpus::{generate_corpus, CorpusSpec, NORMAL};

fn main() -> cfgrpo::Result<()> {
    let spec = CorpusSpec {
        n_samples: 120,
        ..CorpusSpec::default()
    };
    let (records, _) = generate_corpus(&spec)?;
    let record = records
        .iter()
        .find(|r| !r.labels.contains(NORMAL))
        .expect("corpus has pathology");
    println!(
        "record {} labels [{}], lesion covers {} px",
        record.id,
        record.labels,
        record.lesion_mask.count()
    );

    let blurred =
        synthesize_counterfactual(&record.image, &record.lesion_mask, &MaskStrategy::blur())?;
    let filled =
        synthesize_counterfactual(&record.image, &record.lesion_mask, &MaskStrategy::white())?;
    let spotted = apply_spot_interference(&record.image, &SpotInterferenceConfig::default())?;

    let views = [
        ("original", &record.image),
        ("blurred", &blurred),
        ("white fill", &filled),
        ("spots", &spotted),
    ];
    let obs: Vec<_> = views
        .iter()
        .map(|(_, img)| observe(img))
        .collect::<cfgrpo::Result<_>>()?;
    print!("{:<26}", "feature");
    for (name, _) in &views {
        print!("{name:>12}");
    }
    println!();
    for (k, feature) in FEATURE_NAMES.iter().enumerate() {
        print!("{feature:<26}");
        for o in &obs {
            print!("{:>12.3}", o.values()[k]);
        }
        println!();
    }

    if let Some(dir) = std::env::args().nth(1) {
        let dir = std::path::PathBuf::from(dir);
        std::fs::create_dir_all(&dir).map_err(|e| cfgrpo::Error::io(&dir, e))?;
        for (name, img) in views {
            img.save(&dir.join(format!("{}.rf", name.replace(' ', "_"))))?;
        }
        record.lesion_mask.save(&dir.join("mask.rm"))?;
        println!("images written to {}", dir.display());
    }
    Ok(())
}
