//! Factored template policy with exact log-probabilities.
//!
//! A response is generated by independent choices given the observation:
//! whether to include each of the three sections, one word for each of the
//! nine keyword slots, and one diagnosis entry (normal, a single class or a
//! class pair). Every choice is a softmax over logits that are affine in the
//! observation. In a component where some choices name pathology classes,
//! every choice scores as its own bias plus the shared per-class "evidence"
//! rows of the classes it names, so keyword and diagnosis heads read one
//! class-evidence representation and "normal" is the absence of evidence.
//! Components with no class links have an affine row per choice.
//!
//! A slot inside an omitted section leaves no trace in the text, so the
//! probability of a text marginalizes it out.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{argmax, log_softmax};
use crate::observation::Observation;
use crate::rewards::{canonical_label, DiagnosisLabelSet, StructuredResponse, DEFAULT_HEADERS};
use crate::synthcorpus::templates::{self, LabelCombo};

pub const N_SECTIONS: usize = 3;
pub const N_SLOTS: usize = 9;
pub const SLOTS_PER_SECTION: usize = 3;

/// A word or diagnosis together with the evidence rows it draws on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linked<T> {
    pub value: T,
    #[serde(default)]
    pub evidence: Vec<usize>,
}

/// Serializable description of a grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrammarSpec {
    pub headers: Vec<String>,
    pub slots: Vec<Vec<Linked<String>>>,
    pub diagnoses: Vec<Linked<DiagnosisLabelSet>>,
    pub n_evidence: usize,
    pub obs_dim: usize,
}

impl GrammarSpec {
    /// The grammar of the synthetic corpus: every gold response of any label
    /// combination and style is expressible.
    pub fn synthetic(n_styles: usize, obs_dim: usize) -> Self {
        let slots = templates::slot_candidates(n_styles)
            .into_iter()
            .enumerate()
            .map(|(i, words)| {
                words
                    .into_iter()
                    .map(|w| Linked {
                        evidence: templates::keyword_classes(i, &w),
                        value: w,
                    })
                    .collect()
            })
            .collect();
        let diagnoses = LabelCombo::all()
            .into_iter()
            .map(|c| Linked {
                value: c.labels(),
                evidence: c.classes(),
            })
            .collect();
        Self {
            headers: DEFAULT_HEADERS.iter().map(|h| h.to_string()).collect(),
            slots,
            diagnoses,
            n_evidence: templates::CLASSES.len(),
            obs_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    own: Option<usize>,
    links: Vec<usize>,
}

/// Parameter row: offset into the flat vector, and whether it is a full
/// affine row or a bias alone.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Row {
    offset: usize,
    affine: bool,
}

/// A named group of rows of equal width, as stored in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    rows: Vec<usize>,
    pub width: usize,
}

impl Block {
    /// Number of rows.
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Compiled grammar: components and their parameter rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    spec: GrammarSpec,
    /// 3 section switches, 9 slots, 1 diagnosis.
    components: Vec<Vec<Entry>>,
    rows: Vec<Row>,
    n_params: usize,
    evidence_start: usize,
}

pub const DIAGNOSIS_COMPONENT: usize = N_SECTIONS + N_SLOTS;

impl Grammar {
    pub fn new(spec: GrammarSpec) -> Result<Self> {
        if spec.headers.len() != N_SECTIONS || spec.headers.iter().any(|h| h.trim().is_empty()) {
            return Err(Error::contract("grammar needs 3 non-empty headers"));
        }
        if spec.slots.len() != N_SLOTS || spec.slots.iter().any(Vec::is_empty) {
            return Err(Error::contract("grammar needs 9 non-empty keyword slots"));
        }
        if spec.diagnoses.is_empty() {
            return Err(Error::contract("grammar needs at least one diagnosis"));
        }
        if spec.obs_dim == 0 {
            return Err(Error::contract(
                "grammar observation dimension must be positive",
            ));
        }
        for slot in &spec.slots {
            for (i, w) in slot.iter().enumerate() {
                if w.value.contains(',') || w.value.trim().is_empty() {
                    return Err(Error::contract(format!("bad keyword `{}`", w.value)));
                }
                if slot[..i].iter().any(|o| o.value == w.value) {
                    return Err(Error::contract(format!("duplicate keyword `{}`", w.value)));
                }
            }
        }
        let links_ok = |l: &[usize]| l.iter().all(|e| *e < spec.n_evidence);
        if !spec.slots.iter().flatten().all(|w| links_ok(&w.evidence))
            || !spec.diagnoses.iter().all(|d| links_ok(&d.evidence))
        {
            return Err(Error::contract("evidence link out of range"));
        }
        let width = spec.obs_dim + 1;
        let mut rows: Vec<Row> = Vec::new();
        let mut n_params = 0;
        let mut push_row = |rows: &mut Vec<Row>, affine: bool| {
            rows.push(Row {
                offset: n_params,
                affine,
            });
            n_params += if affine { width } else { 1 };
            rows.len() - 1
        };
        let mut components = Vec::new();
        for _ in 0..N_SECTIONS {
            let own = Some(push_row(&mut rows, true));
            components.push(vec![
                Entry {
                    own: None,
                    links: vec![],
                },
                Entry { own, links: vec![] },
            ]);
        }
        let link_lists = spec
            .slots
            .iter()
            .map(|slot| slot.iter().map(|w| w.evidence.clone()).collect::<Vec<_>>())
            .chain(std::iter::once(
                spec.diagnoses.iter().map(|d| d.evidence.clone()).collect(),
            ));
        for links in link_lists {
            let affine = links.iter().all(Vec::is_empty);
            components.push(
                links
                    .into_iter()
                    .map(|l| Entry {
                        own: Some(push_row(&mut rows, affine)),
                        links: l,
                    })
                    .collect(),
            );
        }
        let evidence_start = rows.len();
        for _ in 0..spec.n_evidence {
            push_row(&mut rows, true);
        }
        for comp in &mut components {
            for e in comp.iter_mut() {
                for l in &mut e.links {
                    *l += evidence_start;
                }
            }
        }
        Ok(Self {
            spec,
            components,
            rows,
            n_params,
            evidence_start,
        })
    }

    pub fn synthetic(n_styles: usize, obs_dim: usize) -> Self {
        Self::new(GrammarSpec::synthetic(n_styles, obs_dim)).expect("synthetic grammar is valid")
    }

    pub fn spec(&self) -> &GrammarSpec {
        &self.spec
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.obs_dim
    }

    pub fn row_width(&self) -> usize {
        self.spec.obs_dim + 1
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn component_size(&self, c: usize) -> usize {
        self.components[c].len()
    }

    pub fn diagnoses(&self) -> &[Linked<DiagnosisLabelSet>] {
        &self.spec.diagnoses
    }

    /// Named parameter blocks. Each component's affine rows and bias rows
    /// form separate blocks; empty blocks are left out.
    pub fn blocks(&self) -> Vec<Block> {
        let w = self.row_width();
        let mut out = vec![Block {
            name: "sections".into(),
            rows: (0..N_SECTIONS).collect(),
            width: w,
        }];
        let names = (0..N_SLOTS)
            .map(|i| format!("slot{i}"))
            .chain(std::iter::once("diagnosis".to_string()));
        for (name, comp) in names.zip(&self.components[N_SECTIONS..]) {
            let own: Vec<usize> = comp.iter().filter_map(|e| e.own).collect();
            let (affine, bias): (Vec<usize>, Vec<usize>) =
                own.into_iter().partition(|r| self.rows[*r].affine);
            for (rows, suffix, width) in [(affine, "", w), (bias, "_bias", 1)] {
                if !rows.is_empty() {
                    out.push(Block {
                        name: format!("{name}{suffix}"),
                        rows,
                        width,
                    });
                }
            }
        }
        out.push(Block {
            name: "evidence".into(),
            rows: (self.evidence_start..self.rows.len()).collect(),
            width: w,
        });
        out
    }

    pub fn render(&self, choices: &Choices) -> String {
        let mut lines = Vec::new();
        for s in 0..N_SECTIONS {
            if !choices.include[s] {
                continue;
            }
            let words: Vec<&str> = (0..SLOTS_PER_SECTION)
                .map(|j| {
                    let slot = s * SLOTS_PER_SECTION + j;
                    let k = choices.slots[slot].expect("included section has all slots");
                    self.spec.slots[slot][k].value.as_str()
                })
                .collect();
            lines.push(templates::section_line(&self.spec.headers[s], &words));
        }
        lines.push(templates::diagnosis_line(
            &self.spec.diagnoses[choices.diagnosis].value,
        ));
        lines.join("\n")
    }

    /// Inverse of [`Grammar::render`]; fails for text the grammar cannot
    /// produce.
    pub fn parse(&self, response: &StructuredResponse) -> Result<Choices> {
        let mut include = [false; N_SECTIONS];
        let mut slots = [None; N_SLOTS];
        for (head, body) in response.sections() {
            let s = self
                .spec
                .headers
                .iter()
                .position(|h| h == head)
                .ok_or_else(|| Error::contract(format!("unknown section `{head}`")))?;
            if include[s] {
                return Err(Error::contract(format!("section `{head}` repeated")));
            }
            include[s] = true;
            let words: Vec<&str> = body.trim_end_matches('.').split(", ").collect();
            if words.len() != SLOTS_PER_SECTION {
                return Err(Error::contract(format!(
                    "section `{head}` needs 3 keywords"
                )));
            }
            for (j, w) in words.iter().enumerate() {
                let slot = s * SLOTS_PER_SECTION + j;
                let k = self.spec.slots[slot]
                    .iter()
                    .position(|c| c.value == *w)
                    .ok_or_else(|| {
                        Error::contract(format!("`{w}` is not a candidate for slot {slot}"))
                    })?;
                slots[slot] = Some(k);
            }
        }
        let line = response
            .diagnosis_line()
            .ok_or_else(|| Error::contract("response has no diagnosis line"))?;
        let labels = DiagnosisLabelSet::new(line.split([',', ';']).map(canonical_label));
        let diagnosis = self
            .spec
            .diagnoses
            .iter()
            .position(|d| d.value == labels)
            .ok_or_else(|| Error::contract(format!("diagnosis `{line}` outside grammar")))?;
        Ok(Choices {
            include,
            slots,
            diagnosis,
        })
    }

    /// Every distinct text outcome. Only practical for tiny grammars.
    pub fn enumerate(&self) -> Vec<Choices> {
        let mut out = Vec::new();
        for mask in 0..(1usize << N_SECTIONS) {
            let include: [bool; N_SECTIONS] = std::array::from_fn(|s| mask >> s & 1 == 1);
            let active: Vec<usize> = (0..N_SLOTS)
                .filter(|i| include[i / SLOTS_PER_SECTION])
                .collect();
            let mut slot_sets: Vec<[Option<usize>; N_SLOTS]> = vec![[None; N_SLOTS]];
            for &i in &active {
                slot_sets = slot_sets
                    .into_iter()
                    .flat_map(|s| {
                        (0..self.spec.slots[i].len()).map(move |k| {
                            let mut t = s;
                            t[i] = Some(k);
                            t
                        })
                    })
                    .collect();
            }
            for slots in slot_sets {
                for diagnosis in 0..self.spec.diagnoses.len() {
                    out.push(Choices {
                        include,
                        slots,
                        diagnosis,
                    });
                }
            }
        }
        out
    }
}

/// One response in choice form. Slots of omitted sections are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Choices {
    pub include: [bool; N_SECTIONS],
    pub slots: [Option<usize>; N_SLOTS],
    pub diagnosis: usize,
}

impl Choices {
    /// `(component, entry)` pairs that the text depends on.
    pub fn picks(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..N_SECTIONS)
            .map(|s| (s, usize::from(self.include[s])))
            .chain((0..N_SLOTS).filter_map(|i| self.slots[i].map(|k| (N_SECTIONS + i, k))))
            .chain(std::iter::once((DIAGNOSIS_COMPONENT, self.diagnosis)))
    }
}

/// Per-component log-probabilities at one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Distributions {
    pub log_probs: Vec<Vec<f64>>,
}

impl Distributions {
    pub fn log_prob(&self, choices: &Choices) -> f64 {
        choices.picks().map(|(c, k)| self.log_probs[c][k]).sum()
    }

    pub fn greedy(&self) -> Choices {
        let pick = |c: usize| argmax(&self.log_probs[c]);
        let include: [bool; N_SECTIONS] = std::array::from_fn(|s| pick(s) == 1);
        Choices {
            include,
            slots: std::array::from_fn(|i| {
                include[i / SLOTS_PER_SECTION].then(|| pick(N_SECTIONS + i))
            }),
            diagnosis: pick(DIAGNOSIS_COMPONENT),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Choices {
        let draw = |rng: &mut R, lp: &[f64]| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (k, l) in lp.iter().enumerate() {
                acc += l.exp();
                if u < acc {
                    return k;
                }
            }
            lp.len() - 1
        };
        let include: [bool; N_SECTIONS] =
            std::array::from_fn(|s| draw(rng, &self.log_probs[s]) == 1);
        let mut slots = [None; N_SLOTS];
        for (i, slot) in slots.iter_mut().enumerate() {
            if include[i / SLOTS_PER_SECTION] {
                *slot = Some(draw(rng, &self.log_probs[N_SECTIONS + i]));
            }
        }
        Choices {
            include,
            slots,
            diagnosis: draw(rng, &self.log_probs[DIAGNOSIS_COMPONENT]),
        }
    }

    /// Exact KL(self ‖ other) summed over all components.
    pub fn kl(&self, other: &Distributions) -> f64 {
        self.log_probs
            .iter()
            .zip(&other.log_probs)
            .map(|(p, q)| {
                p.iter()
                    .zip(q)
                    .map(|(lp, lq)| lp.exp() * (lp - lq))
                    .sum::<f64>()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplatePolicy {
    grammar: Arc<Grammar>,
    params: Vec<f64>,
}

impl TemplatePolicy {
    /// Uniform policy: all parameters zero.
    pub fn zeros(grammar: Arc<Grammar>) -> Self {
        let params = vec![0.0; grammar.n_params()];
        Self { grammar, params }
    }

    /// Independent Gaussian parameters with standard deviation `scale`.
    pub fn random(grammar: Arc<Grammar>, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(grammar);
        for v in &mut p.params {
            *v = scale * rng.sample::<f64, _>(StandardNormal);
        }
        p
    }

    pub fn from_params(grammar: Arc<Grammar>, params: Vec<f64>) -> Result<Self> {
        if params.len() != grammar.n_params() {
            return Err(Error::contract(format!(
                "parameter count {} != grammar {}",
                params.len(),
                grammar.n_params()
            )));
        }
        Ok(Self { grammar, params })
    }

    pub fn grammar(&self) -> &Arc<Grammar> {
        &self.grammar
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        if obs.values().len() != self.grammar.obs_dim() {
            return Err(Error::contract(format!(
                "observation has {} features, grammar expects {}",
                obs.values().len(),
                self.grammar.obs_dim()
            )));
        }
        Ok(())
    }

    fn row_activations(&self, obs: &Observation) -> Vec<f64> {
        let d = self.grammar.obs_dim();
        let x = obs.values();
        self.grammar
            .rows
            .iter()
            .map(|r| {
                let p = &self.params[r.offset..];
                if r.affine {
                    p[..d].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + p[d]
                } else {
                    p[0]
                }
            })
            .collect()
    }

    pub fn distributions(&self, obs: &Observation) -> Result<Distributions> {
        self.check_obs(obs)?;
        let a = self.row_activations(obs);
        let log_probs = self
            .grammar
            .components
            .iter()
            .map(|comp| {
                let z: Vec<f64> = comp
                    .iter()
                    .map(|e| {
                        e.own.map_or(0.0, |r| a[r]) + e.links.iter().map(|r| a[*r]).sum::<f64>()
                    })
                    .collect();
                log_softmax(&z)
            })
            .collect();
        Ok(Distributions { log_probs })
    }

    pub fn log_prob(&self, obs: &Observation, choices: &Choices) -> Result<f64> {
        self.check_choices(choices)?;
        Ok(self.distributions(obs)?.log_prob(choices))
    }

    /// Log-probability of a response text; fails outside the grammar.
    pub fn log_prob_text(&self, obs: &Observation, response: &StructuredResponse) -> Result<f64> {
        let c = self.grammar.parse(response)?;
        self.log_prob(obs, &c)
    }

    fn check_choices(&self, c: &Choices) -> Result<()> {
        for s in 0..N_SECTIONS {
            for j in 0..SLOTS_PER_SECTION {
                let i = s * SLOTS_PER_SECTION + j;
                match (c.include[s], c.slots[i]) {
                    (true, Some(k)) if k < self.grammar.component_size(N_SECTIONS + i) => {}
                    (false, None) => {}
                    _ => {
                        return Err(Error::contract(format!(
                            "slot {i} inconsistent with section {s}"
                        )))
                    }
                }
            }
        }
        if c.diagnosis >= self.grammar.component_size(DIAGNOSIS_COMPONENT) {
            return Err(Error::contract("diagnosis index outside grammar"));
        }
        Ok(())
    }

    /// Adds `scale · ∂/∂θ` of a function of the logits, given its gradient
    /// with respect to each component's logits, into `grad`.
    pub fn backprop_logits(
        &self,
        obs: &Observation,
        logit_grads: &[Vec<f64>],
        scale: f64,
        grad: &mut [f64],
    ) {
        let mut row_adj = vec![0.0; self.grammar.rows.len()];
        for (comp, g) in self.grammar.components.iter().zip(logit_grads) {
            for (e, gz) in comp.iter().zip(g) {
                if *gz == 0.0 {
                    continue;
                }
                if let Some(r) = e.own {
                    row_adj[r] += gz;
                }
                for r in &e.links {
                    row_adj[*r] += gz;
                }
            }
        }
        let d = self.grammar.obs_dim();
        let x = obs.values();
        for (row, adj) in self.grammar.rows.iter().zip(&row_adj) {
            if *adj == 0.0 {
                continue;
            }
            let a = scale * adj;
            let g = &mut grad[row.offset..];
            if row.affine {
                for (gi, xi) in g[..d].iter_mut().zip(x) {
                    *gi += a * xi;
                }
                g[d] += a;
            } else {
                g[0] += a;
            }
        }
    }

    /// Gradient of `log π(choices | obs)` with respect to each component's
    /// logits: `onehot − p` on the components the text depends on.
    pub fn log_prob_logit_grads(dist: &Distributions, choices: &Choices) -> Vec<Vec<f64>> {
        let mut g: Vec<Vec<f64>> = dist
            .log_probs
            .iter()
            .map(|lp| vec![0.0; lp.len()])
            .collect();
        for (c, k) in choices.picks() {
            for (j, lp) in dist.log_probs[c].iter().enumerate() {
                g[c][j] = f64::from(u8::from(j == k)) - lp.exp();
            }
        }
        g
    }

    /// Gradient of the exact KL(self ‖ reference) with respect to this
    /// policy's logits: `p_j (log p_j − log q_j − KL_c)` per component.
    pub fn kl_logit_grads(dist: &Distributions, reference: &Distributions) -> Vec<Vec<f64>> {
        dist.log_probs
            .iter()
            .zip(&reference.log_probs)
            .map(|(p, q)| {
                let kl: f64 = p.iter().zip(q).map(|(lp, lq)| lp.exp() * (lp - lq)).sum();
                p.iter()
                    .zip(q)
                    .map(|(lp, lq)| lp.exp() * (lp - lq - kl))
                    .collect()
            })
            .collect()
    }

    pub fn log_prob_gradient(&self, obs: &Observation, choices: &Choices) -> Result<Vec<f64>> {
        self.check_choices(choices)?;
        let d = self.distributions(obs)?;
        let mut grad = vec![0.0; self.params.len()];
        self.backprop_logits(
            obs,
            &Self::log_prob_logit_grads(&d, choices),
            1.0,
            &mut grad,
        );
        Ok(grad)
    }

    pub fn sample(&self, obs: &Observation, rng: &mut impl Rng) -> Result<Choices> {
        Ok(self.distributions(obs)?.sample(rng))
    }

    pub fn greedy(&self, obs: &Observation) -> Result<Choices> {
        Ok(self.distributions(obs)?.greedy())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let rows = &self.grammar.rows;
        Checkpoint {
            grammar: self.grammar.spec.clone(),
            blocks: self
                .grammar
                .blocks()
                .into_iter()
                .map(|b| ParamBlock {
                    shape: [b.rows.len(), b.width],
                    values: b
                        .rows
                        .iter()
                        .flat_map(|r| &self.params[rows[*r].offset..rows[*r].offset + b.width])
                        .copied()
                        .collect(),
                    name: b.name,
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let grammar = Arc::new(Grammar::new(ckpt.grammar.clone())?);
        let mut params = vec![0.0; grammar.n_params()];
        let blocks = grammar.blocks();
        if blocks.len() != ckpt.blocks.len() {
            return Err(Error::parse(
                "checkpoint",
                "block count does not match grammar",
            ));
        }
        for (want, got) in blocks.iter().zip(&ckpt.blocks) {
            let shape = [want.rows.len(), want.width];
            if got.name != want.name
                || got.shape != shape
                || got.values.len() != shape[0] * shape[1]
            {
                return Err(Error::parse(
                    "checkpoint",
                    format!("block `{}` has wrong name or shape", got.name),
                ));
            }
            for (r, chunk) in want.rows.iter().zip(got.values.chunks_exact(want.width)) {
                let off = grammar.rows[*r].offset;
                params[off..off + want.width].copy_from_slice(chunk);
            }
        }
        Self::from_params(grammar, params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// JSON checkpoint: the grammar and named parameter blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub grammar: GrammarSpec,
    pub blocks: Vec<ParamBlock>,
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Two keywords per slot, three diagnoses, two evidence rows.
    pub(crate) fn toy_grammar(obs_dim: usize) -> Arc<Grammar> {
        let slots = (0..N_SLOTS)
            .map(|i| {
                vec![
                    Linked {
                        value: format!("word{i}a"),
                        evidence: vec![],
                    },
                    Linked {
                        value: format!("word{i}b"),
                        evidence: if i >= 3 { vec![i % 2] } else { vec![] },
                    },
                ]
            })
            .collect();
        let diagnoses = vec![
            Linked {
                value: DiagnosisLabelSet::new(["normal"]),
                evidence: vec![],
            },
            Linked {
                value: DiagnosisLabelSet::new(["polyp"]),
                evidence: vec![0],
            },
            Linked {
                value: DiagnosisLabelSet::new(["polyp", "ulcer"]),
                evidence: vec![0, 1],
            },
        ];
        Arc::new(
            Grammar::new(GrammarSpec {
                headers: DEFAULT_HEADERS.iter().map(|s| s.to_string()).collect(),
                slots,
                diagnoses,
                n_evidence: 2,
                obs_dim,
            })
            .unwrap(),
        )
    }

    pub(crate) fn random_obs(rng: &mut ChaCha8Rng, d: usize) -> Observation {
        Observation(
            (0..d)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }

    fn random_full(grammar: Arc<Grammar>, seed: u64) -> TemplatePolicy {
        let mut p = TemplatePolicy::random(grammar, 0.7, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 99);
        for v in p.params_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
        p
    }

    #[test]
    fn probabilities_sum_to_one_over_all_texts() {
        let g = toy_grammar(3);
        let outcomes = g.enumerate();
        assert_eq!(outcomes.len(), 3 * 9usize.pow(3));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..5 {
            let p = random_full(g.clone(), seed);
            let obs = random_obs(&mut rng, 3);
            let total: f64 = outcomes
                .iter()
                .map(|c| p.log_prob(&obs, c).unwrap().exp())
                .sum();
            assert!((total - 1.0).abs() < 1e-9, "{total}");
        }
    }

    #[test]
    fn single_fair_switch_contributes_ln_half() {
        let g = toy_grammar(2);
        let p = TemplatePolicy::zeros(g);
        let d = p.distributions(&Observation(vec![0.3, -1.0])).unwrap();
        assert!((d.log_probs[0][1] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn render_parse_round_trip() {
        let g = toy_grammar(2);
        for c in g.enumerate().iter().step_by(37) {
            let text = g.render(c);
            let back = g.parse(&StructuredResponse::parse(text)).unwrap();
            assert_eq!(&back, c);
        }
        let bad = StructuredResponse::parse("Diagnosis: tumour");
        assert!(matches!(g.parse(&bad), Err(Error::Contract(_))));
        let bad = StructuredResponse::parse(format!(
            "{}: word0a, nope, word2a.\nDiagnosis: normal",
            DEFAULT_HEADERS[0]
        ));
        assert!(g.parse(&bad).is_err());
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let g = toy_grammar(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let all = g.enumerate();
        for t in 0..50 {
            let p = random_full(g.clone(), t);
            let obs = random_obs(&mut rng, 3);
            let c = all[rng.random_range(0..all.len())];
            let grad = p.log_prob_gradient(&obs, &c).unwrap();
            for k in (0..p.params().len()).step_by(7) {
                let h = 1e-5;
                let mut a = p.clone();
                a.params_mut()[k] += h;
                let mut b = p.clone();
                b.params_mut()[k] -= h;
                let fd =
                    (a.log_prob(&obs, &c).unwrap() - b.log_prob(&obs, &c).unwrap()) / (2.0 * h);
                assert!(
                    (fd - grad[k]).abs() <= 1e-5 * fd.abs().max(1.0),
                    "{fd} vs {}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn kl_is_zero_iff_equal_and_positive_otherwise() {
        let g = toy_grammar(3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for t in 0..20 {
            let p = random_full(g.clone(), t);
            let q = random_full(g.clone(), t + 100);
            let obs = random_obs(&mut rng, 3);
            let (dp, dq) = (
                p.distributions(&obs).unwrap(),
                q.distributions(&obs).unwrap(),
            );
            assert_eq!(dp.kl(&dp), 0.0);
            assert!(dp.kl(&dq) > 0.0);
        }
    }

    #[test]
    fn synthetic_grammar_expresses_gold_responses() {
        let g = Grammar::synthetic(11, 4);
        for combo in LabelCombo::all() {
            for style in 0..11 {
                let kw = templates::gold_keywords(combo, style, 11);
                let text = crate::synthcorpus::response_text(&kw, &combo.labels());
                let c = g.parse(&StructuredResponse::parse(text.clone())).unwrap();
                assert_eq!(g.render(&c), text);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = toy_grammar(3);
        let p = random_full(g, 3);
        let json = serde_json::to_string(&p.to_checkpoint()).unwrap();
        let back = TemplatePolicy::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.params(), p.params());
        let mut ck = p.to_checkpoint();
        ck.blocks[1].shape = [1, 1];
        assert!(TemplatePolicy::from_checkpoint(&ck).is_err());
    }

    #[test]
    fn saturated_policy_is_deterministic() {
        let g = toy_grammar(1);
        let mut ck = TemplatePolicy::zeros(g).to_checkpoint();
        for block in ck.blocks.iter_mut().filter(|b| b.name != "evidence") {
            let w = block.shape[1];
            for (r, row) in block.values.chunks_exact_mut(w).enumerate() {
                row[w - 1] = if r == 0 { 60.0 } else { -60.0 };
            }
        }
        let p = TemplatePolicy::from_checkpoint(&ck).unwrap();
        let obs = Observation(vec![0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let first = p.sample(&obs, &mut rng).unwrap();
        for _ in 0..50 {
            assert_eq!(p.sample(&obs, &mut rng).unwrap(), first);
        }
    }
}
