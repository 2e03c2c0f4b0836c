//! On-disk corpus: `manifest.jsonl` plus one raster file per image and mask.
//!
//! The first manifest line is a header `{"schema_version", "spec"}`; every
//! following line describes one record. Paths are relative to the corpus
//! directory.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusRecord, CorpusSpec, Manifest, ManifestEntry};
use crate::counterfactual::{LesionMask, RasterImage};
use crate::error::{Error, Result};
use crate::rewards::StructuredResponse;

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    spec: CorpusSpec,
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes records and their manifest under `dir`.
pub fn save_corpus(dir: &Path, spec: &CorpusSpec, records: &[CorpusRecord]) -> Result<Manifest> {
    create_dir(&dir.join("images"))?;
    create_dir(&dir.join("masks"))?;
    let manifest = Manifest::build(spec, records);
    for (r, e) in records.iter().zip(&manifest.entries) {
        r.image.save(&dir.join(&e.image))?;
        r.lesion_mask.save(&dir.join(&e.mask))?;
    }
    let path = dir.join(MANIFEST_FILE);
    let mut out = String::new();
    let header = Header {
        schema_version: manifest.schema_version,
        spec: spec.clone(),
    };
    out.push_str(&serde_json::to_string(&header).expect("header serializes"));
    out.push('\n');
    for e in &manifest.entries {
        out.push_str(&serde_json::to_string(e).expect("entry serializes"));
        out.push('\n');
    }
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    f.write_all(out.as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Reads a corpus written by [`save_corpus`], verifying every checksum.
pub fn load_corpus(dir: &Path) -> Result<(Vec<CorpusRecord>, Manifest)> {
    let path = dir.join(MANIFEST_FILE);
    let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = BufReader::new(f).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::parse("manifest", "empty file"))?
        .map_err(|e| Error::io(&path, e))?;
    let version: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| Error::parse("manifest header", e.to_string()))?;
    match version
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
    {
        Some(v) if v == u64::from(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(Error::SchemaVersion {
                found: u32::try_from(v).unwrap_or(u32::MAX),
                expected: SCHEMA_VERSION,
            })
        }
        None => return Err(Error::parse("manifest header", "missing schema_version")),
    }
    let header: Header = serde_json::from_value(version)
        .map_err(|e| Error::parse("manifest header", e.to_string()))?;
    let mut entries = Vec::new();
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry = serde_json::from_str(&line)
            .map_err(|err| Error::parse("manifest", format!("line {}: {err}", i + 2)))?;
        let corrupt = |reason: String| Error::Corruption {
            id: e.id.clone(),
            reason,
        };
        let image_bytes =
            fs::read(dir.join(&e.image)).map_err(|err| Error::io(dir.join(&e.image), err))?;
        let mask_bytes =
            fs::read(dir.join(&e.mask)).map_err(|err| Error::io(dir.join(&e.mask), err))?;
        let image =
            RasterImage::from_bytes(&image_bytes).map_err(|err| corrupt(err.to_string()))?;
        let lesion_mask =
            LesionMask::from_bytes(&mask_bytes).map_err(|err| corrupt(err.to_string()))?;
        let record = CorpusRecord {
            id: e.id.clone(),
            split: e.split,
            image,
            lesion_mask,
            query: super::QUERY.to_string(),
            gold_response: StructuredResponse::parse(e.response.clone()),
            keywords: e.keywords.clone(),
            labels: e.labels.clone(),
            background_style: e.style,
            is_counterfactual: e.is_counterfactual,
        };
        let sum = record.checksum();
        if sum != e.checksum {
            return Err(corrupt(format!(
                "checksum {sum} != manifest {}",
                e.checksum
            )));
        }
        records.push(record);
        entries.push(e);
    }
    Ok((
        records,
        Manifest {
            schema_version: header.schema_version,
            spec: header.spec,
            entries,
        },
    ))
}
