//! Generate the synthetic diagnostic corpus, save it, and load it back with
//! checksum verification.
//!
//! cargo run --release --example synthetic_corpus [out_dir]

use cfgrpo::synthcorpus::{generate_corpus, load_corpus, save_corpus, CorpusSpec, Split};

fn main() -> cfgrpo::Result<()> {
    let spec = CorpusSpec {
        n_samples: 300,
        ..CorpusSpec::default()
    };
    let (records, manifest) = generate_corpus(&spec)?;
    let train = records.iter().filter(|r| r.split == Split::Train).count();
    println!(
        "{} records ({train} train, {} test)",
        records.len(),
        records.len() - train
    );
    let mut counts = std::collections::BTreeMap::new();
    for r in &records {
        *counts.entry(r.combo().name()).or_insert(0) += 1;
    }
    for (combo, n) in &counts {
        println!("  {combo:<24} {n}");
    }
    let r = &records[0];
    println!(
        "\n{} (style {}):\n{}",
        r.id,
        r.background_style,
        r.gold_response.raw_text()
    );

    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("cfgrpo-corpus"));
    save_corpus(&dir, &spec, &records)?;
    let (loaded, _) = load_corpus(&dir)?;
    println!(
        "\nsaved to {}; {} manifest entries; reload identical: {}",
        dir.display(),
        manifest.entries.len(),
        loaded == records
    );
    Ok(())
}
