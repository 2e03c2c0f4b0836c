//! Synthetic diagnostic corpus with known lesion masks, template reasoning
//! chains and a background style that is spuriously tied to the label in the
//! training split only.

mod io;
pub mod render;
pub mod templates;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use io::{load_corpus, save_corpus, MANIFEST_FILE, SCHEMA_VERSION};
pub use render::{BackgroundLatents, LesionLatents, RecordLatents};
pub use templates::{LabelCombo, CLASSES, NORMAL};

use crate::counterfactual::{synthesize_counterfactual, LesionMask, MaskStrategy, RasterImage};
use crate::error::{Error, Result};
use crate::math::mix_seed;
use crate::rewards::{DiagnosisLabelSet, KeywordSet, StructuredResponse, DEFAULT_HEADERS};

pub const QUERY: &str =
    "Describe the endoscopic findings section by section, then state the diagnosis.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub n_samples: usize,
    pub normal_fraction: f64,
    pub multi_label_fraction: f64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub n_styles: usize,
    /// Probability that a training record's style is the one paired with its
    /// label; otherwise the style is uniform.
    pub spurious_correlation: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_samples: 2500,
            normal_fraction: 0.2,
            multi_label_fraction: 0.2,
            height: 64,
            width: 64,
            channels: 1,
            n_styles: LabelCombo::count(),
            spurious_correlation: 0.9,
            train_fraction: 0.8,
            seed: 2024,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::config("corpus.n_samples", "must be positive"));
        }
        for (name, v) in [
            ("normal_fraction", self.normal_fraction),
            ("multi_label_fraction", self.multi_label_fraction),
            ("spurious_correlation", self.spurious_correlation),
            ("train_fraction", self.train_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(
                    format!("corpus.{name}"),
                    "must lie in [0, 1]",
                ));
            }
        }
        if self.normal_fraction + self.multi_label_fraction > 1.0 {
            return Err(Error::config(
                "corpus.multi_label_fraction",
                "normal_fraction + multi_label_fraction exceeds 1",
            ));
        }
        if self.height < 32 || self.width < 32 || self.height > 1024 || self.width > 1024 {
            return Err(Error::config(
                "corpus.height",
                "image sides must lie in 32..=1024",
            ));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::config("corpus.channels", "must be 1 or 3"));
        }
        if self.n_styles == 0 {
            return Err(Error::config("corpus.n_styles", "must be positive"));
        }
        Ok(())
    }

    /// Style paired with a label combination in the training split.
    pub fn paired_style(&self, combo: LabelCombo) -> usize {
        combo.index() % self.n_styles
    }

    /// Record count per label combination, in [`LabelCombo::all`] order.
    pub fn combo_counts(&self) -> Vec<usize> {
        let n = self.n_samples as f64;
        let n_normal = (n * self.normal_fraction).round() as usize;
        let n_multi =
            ((n * self.multi_label_fraction).round() as usize).min(self.n_samples - n_normal);
        let n_single = self.n_samples - n_normal - n_multi;
        let singles = largest_remainder(n_single, CLASSES.len());
        let pairs = largest_remainder(n_multi, LabelCombo::count() - 1 - CLASSES.len());
        std::iter::once(n_normal)
            .chain(singles)
            .chain(pairs)
            .collect()
    }
}

/// Splits `total` into `k` near-equal integer parts.
fn largest_remainder(total: usize, k: usize) -> Vec<usize> {
    (0..k)
        .map(|i| total / k + usize::from(i < total % k))
        .collect()
}

/// Training count per stratum. The total is `round(N·f)`; each stratum with
/// at least two records keeps one in each split, and the remaining slack goes
/// to the largest fractional remainders.
fn train_quota(counts: &[usize], fraction: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let target = (total as f64 * fraction).round() as usize;
    let interior = fraction > 0.0 && fraction < 1.0;
    let (lo, hi): (Vec<usize>, Vec<usize>) = counts
        .iter()
        .map(|&n| {
            if interior && n >= 2 {
                (1, n - 1)
            } else {
                (0, n)
            }
        })
        .unzip();
    let mut t: Vec<usize> = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| ((n as f64 * fraction).floor() as usize).clamp(lo[i], hi[i]))
        .collect();
    let rem = |t: &[usize], i: usize| counts[i] as f64 * fraction - t[i] as f64;
    loop {
        let sum: usize = t.iter().sum();
        let pick = if sum < target {
            (0..t.len())
                .filter(|&i| t[i] < hi[i])
                .max_by(|&a, &b| rem(&t, a).total_cmp(&rem(&t, b)).then(b.cmp(&a)))
                .map(|i| (i, true))
        } else if sum > target {
            (0..t.len())
                .filter(|&i| t[i] > lo[i])
                .min_by(|&a, &b| rem(&t, a).total_cmp(&rem(&t, b)).then(a.cmp(&b)))
                .map(|i| (i, false))
        } else {
            None
        };
        match pick {
            Some((i, true)) => t[i] += 1,
            Some((i, false)) => t[i] -= 1,
            None => return t,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecord {
    pub id: String,
    pub split: Split,
    pub image: RasterImage,
    pub lesion_mask: LesionMask,
    pub query: String,
    pub gold_response: StructuredResponse,
    pub keywords: KeywordSet,
    pub labels: DiagnosisLabelSet,
    pub background_style: usize,
    pub is_counterfactual: bool,
}

impl CorpusRecord {
    pub fn combo(&self) -> LabelCombo {
        LabelCombo::from_labels(&self.labels).expect("record labels come from the combo table")
    }

    /// SHA-256 over the image and mask file bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.image.to_bytes());
        h.update(self.lesion_mask.to_bytes());
        hex::encode(h.finalize())
    }
}

/// Response text listing the keyword groups under the standard headers.
pub fn response_text(keywords: &KeywordSet, labels: &DiagnosisLabelSet) -> String {
    let mut lines: Vec<String> = DEFAULT_HEADERS
        .iter()
        .zip(keywords.groups())
        .map(|(h, g)| templates::section_line(h, &g.iter().map(String::as_str).collect::<Vec<_>>()))
        .collect();
    lines.push(templates::diagnosis_line(labels));
    lines.join("\n")
}

/// Renders one record from its latents. The label combination is read from
/// the lesion classes.
pub fn render_record(
    id: &str,
    split: Split,
    latents: &RecordLatents,
    spec: &CorpusSpec,
) -> Result<CorpusRecord> {
    let mut classes: Vec<usize> = latents.lesions.iter().map(|l| l.class).collect();
    classes.sort_unstable();
    let combo = match classes[..] {
        [] => LabelCombo::Normal,
        [a] if a < CLASSES.len() => LabelCombo::Single(a),
        [a, b] if a < b && b < CLASSES.len() => LabelCombo::Pair(a, b),
        _ => {
            return Err(Error::config(
                "record.lesions",
                format!("unsupported class assignment {classes:?}"),
            ))
        }
    };
    let (image, lesion_mask) = render::render(
        latents,
        spec.n_styles,
        spec.height,
        spec.width,
        spec.channels,
    )?;
    let style = latents.background.style;
    let keywords = templates::gold_keywords(combo, style, spec.n_styles);
    let labels = combo.labels();
    Ok(CorpusRecord {
        id: id.to_string(),
        split,
        image,
        lesion_mask,
        query: QUERY.to_string(),
        gold_response: StructuredResponse::parse(response_text(&keywords, &labels)),
        keywords,
        labels,
        background_style: style,
        is_counterfactual: false,
    })
}

/// Latents for a record of `combo` with background `style`.
pub fn sample_latents<R: Rng>(
    rng: &mut R,
    combo: LabelCombo,
    style: usize,
    spec: &CorpusSpec,
) -> RecordLatents {
    let background = BackgroundLatents::sample(rng, style);
    let mut classes = combo.classes();
    classes.shuffle(rng);
    let sites = render::lesion_sites(rng, classes.len(), spec.height, spec.width);
    let lesions = classes
        .iter()
        .zip(sites)
        .map(|(c, (cy, cx, jitter))| LesionLatents::sample(rng, *c, cy, cx, jitter))
        .collect();
    RecordLatents {
        background,
        lesions,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: Split,
    pub labels: DiagnosisLabelSet,
    pub keywords: KeywordSet,
    pub response: String,
    pub style: usize,
    pub is_counterfactual: bool,
    pub image: String,
    pub mask: String,
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub spec: CorpusSpec,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn build(spec: &CorpusSpec, records: &[CorpusRecord]) -> Self {
        let entries = records
            .iter()
            .map(|r| ManifestEntry {
                id: r.id.clone(),
                split: r.split,
                labels: r.labels.clone(),
                keywords: r.keywords.clone(),
                response: r.gold_response.raw_text().to_string(),
                style: r.background_style,
                is_counterfactual: r.is_counterfactual,
                image: format!("images/{}.rf", r.id),
                mask: format!("masks/{}.rm", r.id),
                checksum: r.checksum(),
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            spec: spec.clone(),
            entries,
        }
    }
}

/// Generates the corpus. Label combinations are split per stratum so every
/// combination present appears in both splits.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<(Vec<CorpusRecord>, Manifest)> {
    spec.validate()?;
    let counts = spec.combo_counts();
    let train_counts = train_quota(&counts, spec.train_fraction);
    let both_expected = spec.train_fraction > 0.0 && spec.train_fraction < 1.0;
    let mut plan: Vec<(LabelCombo, Split)> = Vec::with_capacity(spec.n_samples);
    let mut infeasible = Vec::new();
    for ((combo, &n), &n_train) in LabelCombo::all()
        .into_iter()
        .zip(&counts)
        .zip(&train_counts)
    {
        if both_expected && n > 0 && (n_train == 0 || n_train == n) {
            infeasible.push(format!("{} ({n} records)", combo.name()));
        }
        plan.extend((0..n).map(|i| {
            (
                combo,
                if i < n_train {
                    Split::Train
                } else {
                    Split::Test
                },
            )
        }));
    }
    if !infeasible.is_empty() {
        return Err(Error::config(
            "corpus.n_samples",
            format!("too few records to stratify: {}", infeasible.join("; ")),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    plan.shuffle(&mut rng);
    let records: Vec<CorpusRecord> = plan
        .par_iter()
        .enumerate()
        .map(|(i, &(combo, split))| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, i as u64));
            let style = if split == Split::Train && rng.random_bool(spec.spurious_correlation) {
                spec.paired_style(combo)
            } else {
                rng.random_range(0..spec.n_styles)
            };
            let latents = sample_latents(&mut rng, combo, style, spec);
            render_record(&format!("rec-{i:05}"), split, &latents, spec)
        })
        .collect::<Result<_>>()?;
    let manifest = Manifest::build(spec, &records);
    Ok((records, manifest))
}

/// Counterfactual normal sample: the lesion pixels are erased, the label
/// becomes normal and the reasoning chain reports unremarkable findings while
/// keeping the environment description.
pub fn make_counterfactual_record(
    record: &CorpusRecord,
    strategy: &MaskStrategy,
) -> Result<CorpusRecord> {
    if record.lesion_mask.is_empty() {
        return Err(Error::contract(format!(
            "record {} has no lesion to erase",
            record.id
        )));
    }
    let mut image = synthesize_counterfactual(&record.image, &record.lesion_mask, strategy)?;
    image.quantize();
    let env = &record.keywords.groups()[0];
    let keywords = KeywordSet::new([
        [env[0].as_str(), env[1].as_str(), env[2].as_str()],
        templates::morphology_keywords(LabelCombo::Normal),
        templates::surface_keywords(LabelCombo::Normal),
    ])?;
    let labels = LabelCombo::Normal.labels();
    Ok(CorpusRecord {
        id: format!("{}-cf", record.id),
        split: record.split,
        image,
        lesion_mask: record.lesion_mask.clone(),
        query: record.query.clone(),
        gold_response: StructuredResponse::parse(response_text(&keywords, &labels)),
        keywords,
        labels,
        background_style: record.background_style,
        is_counterfactual: true,
    })
}

/// Counterfactuals for every pathological record of `records`, in parallel.
pub fn counterfactuals(
    records: &[CorpusRecord],
    strategy: &MaskStrategy,
) -> Result<Vec<CorpusRecord>> {
    records
        .par_iter()
        .filter(|r| !r.lesion_mask.is_empty())
        .map(|r| make_counterfactual_record(r, strategy))
        .collect()
}
