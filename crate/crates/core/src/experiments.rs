//! Experiment harness: featurization, training pipelines, evaluation and
//! the runners behind each command-line experiment.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counterfactual::{apply_spot_interference, MaskStrategy, SpotInterferenceConfig};
use crate::error::{Error, Result};
use crate::grpo::{grpo_train, sft_train, write_csv, Example, GrpoConfig, SftConfig, StepLog};
use crate::latent_model::{
    causal_accuracy, generate_samples, mean_counterfactual_prediction, train, DiagnosticModel,
    LatentConfig, TrainConfig, TrajectoryRecord,
};
use crate::math::mix_seed;
use crate::observation::{observe, Observation, OBS_DIM};
use crate::policy::{Checkpoint, Grammar, TemplatePolicy};
use crate::rewards::{extract_diagnosis, RewardContext, RewardWeights, StructuredResponse};
use crate::synthcorpus::templates::label_vocabulary;
use crate::synthcorpus::{
    counterfactuals, generate_corpus, load_corpus, CorpusRecord, CorpusSpec, Split, NORMAL,
};

const THEORY_TEST_SALT: u64 = 0x7e57_0000_0000_0001;
const GRPO_SALT: u64 = 0x6e90_0000_0000_0002;
const SPOTS_SALT: u64 = 0x5b07_0000_0000_0003;
const LATENT_TRAIN_SALT: u64 = 0x1a7e_0000_0000_0004;

/// Moving-average window and horizon of the reward-curve monotonicity check.
pub const REWARD_MA_WINDOW: usize = 20;
pub const REWARD_MA_HORIZON: usize = 100;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    CorpusGen,
    TheoryShortcut,
    TheoryRectify,
    Sft,
    Grpo,
    Eval,
    AblateMask,
    AblateRewards,
    Robustness,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::CorpusGen => "corpus-gen",
            ExperimentKind::TheoryShortcut => "theory-shortcut",
            ExperimentKind::TheoryRectify => "theory-rectify",
            ExperimentKind::Sft => "sft",
            ExperimentKind::Grpo => "grpo",
            ExperimentKind::Eval => "eval",
            ExperimentKind::AblateMask => "ablate-mask",
            ExperimentKind::AblateRewards => "ablate-rewards",
            ExperimentKind::Robustness => "robustness",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub latent: LatentConfig,
    pub train: TrainConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Penalty weights of the rectification sweep, in increasing order.
    pub lambdas: Vec<f64>,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            latent: LatentConfig::default(),
            train: TrainConfig::default(),
            n_train: 2000,
            n_test: 2000,
            lambdas: vec![0.0, 1.0, 10.0, 100.0],
        }
    }
}

impl TheoryConfig {
    pub fn validate(&self) -> Result<()> {
        self.latent.validate()?;
        self.train.validate()?;
        if self.n_train == 0 {
            return Err(Error::config("theory.n_train", "must be positive"));
        }
        if self.n_test == 0 {
            return Err(Error::config("theory.n_test", "must be positive"));
        }
        if self.lambdas.is_empty() {
            return Err(Error::config("theory.lambdas", "must not be empty"));
        }
        if self.lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::config(
                "theory.lambdas",
                "must be finite and nonnegative",
            ));
        }
        if self.lambdas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::config(
                "theory.lambdas",
                "must be sorted in increasing order",
            ));
        }
        Ok(())
    }
}

/// How responses are decoded at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Decoding {
    /// Per-component argmax.
    #[default]
    Greedy,
    /// One sample per record, seeded per record from `seed`.
    Sample { seed: u64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub decoding: Decoding,
    /// Also evaluate on spot-perturbed copies of the test images.
    pub perturb: Option<SpotInterferenceConfig>,
}

/// One experiment: which runner, the module configs it uses and where its
/// artifacts go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    /// Master seed; when set it overrides every component seed.
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub theory: TheoryConfig,
    pub corpus: CorpusSpec,
    /// Load the corpus from this directory instead of generating it.
    pub corpus_dir: Option<PathBuf>,
    pub sft: SftConfig,
    pub grpo: GrpoConfig,
    /// Counterfactual lesion erasure used for GRPO training.
    pub mask: MaskStrategy,
    /// Alternative erasure compared against `mask` by the masking ablation.
    pub ablation_mask: MaskStrategy,
    /// Train GRPO on counterfactual normals as well as the training split.
    pub use_counterfactuals: bool,
    pub spots: SpotInterferenceConfig,
    pub decoding: Decoding,
    /// Policy checkpoint evaluated by `eval`, or the GRPO starting point in
    /// place of a fresh SFT run.
    pub policy: Option<PathBuf>,
    /// Master seeds of the multi-seed ablations.
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            seed: None,
            out: None,
            theory: TheoryConfig::default(),
            corpus: CorpusSpec::default(),
            corpus_dir: None,
            sft: SftConfig::default(),
            grpo: GrpoConfig::default(),
            mask: MaskStrategy::blur(),
            ablation_mask: MaskStrategy::white(),
            use_counterfactuals: true,
            spots: SpotInterferenceConfig::default(),
            decoding: Decoding::Greedy,
            policy: None,
            seeds: vec![1, 2, 3],
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| {
            Error::config(
                format!("line {} column {}", e.line(), e.column()),
                e.to_string(),
            )
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.theory.validate()?;
        self.corpus.validate()?;
        self.sft.validate()?;
        self.grpo.validate()?;
        self.mask.validate()?;
        self.ablation_mask.validate()?;
        self.spots.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must not be empty"));
        }
        Ok(())
    }

    /// Copy with every component seed derived from `seed`.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = Some(seed);
        c.theory.latent.seed = seed;
        c.theory.train.seed = mix_seed(seed, LATENT_TRAIN_SALT);
        c.corpus.seed = seed;
        c.grpo.seed = mix_seed(seed, GRPO_SALT);
        c.spots.seed = mix_seed(seed, SPOTS_SALT);
        c
    }

    /// The config with the master seed, if any, pushed into the components.
    pub fn resolved(&self) -> Self {
        match self.seed {
            Some(s) => self.with_seed(s),
            None => self.clone(),
        }
    }
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

/// Output directory plus wall-clock durations, which are kept apart from the
/// deterministic metrics.
#[derive(Debug, Default)]
pub struct Artifacts {
    dir: Option<PathBuf>,
    timings: BTreeMap<String, f64>,
}

impl Artifacts {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(Self {
            dir,
            timings: BTreeMap::new(),
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let Some(d) = &self.dir else { return Ok(()) };
        let path = d.join(name);
        let mut text =
            serde_json::to_string_pretty(value).map_err(|e| Error::parse(name, e.to_string()))?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        match &self.dir {
            Some(d) => write_csv(&d.join(name), rows),
            None => Ok(()),
        }
    }

    /// Runs `f` and records its duration under `stage`.
    pub fn timed<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        *self.timings.entry(stage.to_string()).or_default() += t.elapsed().as_secs_f64();
        Ok(out)
    }

    pub fn timings(&self) -> &BTreeMap<String, f64> {
        &self.timings
    }

    pub fn finish(&self) -> Result<()> {
        self.json("timing.json", &self.timings)
    }
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

/// A record with its observation.
#[derive(Debug, Clone)]
pub struct Featurized {
    pub record: CorpusRecord,
    pub observation: Observation,
}

pub fn featurize(records: Vec<CorpusRecord>) -> Result<Vec<Featurized>> {
    records
        .into_par_iter()
        .map(|record| {
            let observation = observe(&record.image)?;
            Ok(Featurized {
                record,
                observation,
            })
        })
        .collect()
}

/// Featurized train and test splits of one corpus.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: CorpusSpec,
    pub train: Vec<Featurized>,
    pub test: Vec<Featurized>,
}

impl Dataset {
    pub fn from_records(spec: CorpusSpec, records: Vec<CorpusRecord>) -> Result<Self> {
        let (train, test): (Vec<_>, Vec<_>) =
            records.into_iter().partition(|r| r.split == Split::Train);
        if train.is_empty() || test.is_empty() {
            return Err(Error::contract(
                "corpus needs both a train and a test split",
            ));
        }
        Ok(Self {
            spec,
            train: featurize(train)?,
            test: featurize(test)?,
        })
    }

    pub fn generate(spec: &CorpusSpec) -> Result<Self> {
        let (records, _) = generate_corpus(spec)?;
        Self::from_records(spec.clone(), records)
    }

    /// The loaded corpus, or a freshly generated one.
    pub fn for_config(config: &ExperimentConfig) -> Result<Self> {
        match &config.corpus_dir {
            Some(dir) => {
                let (records, manifest) = load_corpus(dir)?;
                Self::from_records(manifest.spec, records)
            }
            None => Self::generate(&config.corpus),
        }
    }

    pub fn grammar(&self) -> Arc<Grammar> {
        Arc::new(Grammar::synthetic(self.spec.n_styles, OBS_DIM))
    }

    /// Counterfactual normals of the pathological training records.
    pub fn counterfactual_train(&self, strategy: &MaskStrategy) -> Result<Vec<Featurized>> {
        let records: Vec<CorpusRecord> = self.train.iter().map(|f| f.record.clone()).collect();
        featurize(counterfactuals(&records, strategy)?)
    }
}

pub fn reward_context(weights: RewardWeights) -> RewardContext {
    RewardContext {
        weights,
        vocabulary: label_vocabulary(),
        ..RewardContext::default()
    }
}

pub fn sft_pairs(data: &[Featurized]) -> Vec<(Observation, StructuredResponse)> {
    data.iter()
        .map(|f| (f.observation.clone(), f.record.gold_response.clone()))
        .collect()
}

pub fn examples(data: &[Featurized]) -> Vec<Example> {
    data.iter()
        .map(|f| Example {
            observation: f.observation.clone(),
            keywords: f.record.keywords.clone(),
            labels: f.record.labels.clone(),
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

/// Accuracy and reward summary of one decoding pass over a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub n_single: usize,
    pub n_multi: usize,
    pub accuracy: f64,
    pub single_accuracy: f64,
    pub multi_accuracy: f64,
    pub mean_reward: f64,
    pub mean_r_fmt: f64,
    pub mean_r_cog: f64,
    pub mean_r_diag: f64,
    pub perturbed_accuracy: Option<f64>,
    /// Clean minus perturbed accuracy.
    pub accuracy_drop: Option<f64>,
}

struct Graded {
    correct: bool,
    multi: bool,
    reward: [f64; 4],
}

fn grade_response(f: &Featurized, response: &StructuredResponse, ctx: &RewardContext) -> Graded {
    let predicted = extract_diagnosis(response, &ctx.vocabulary);
    let r = ctx.score(response, &f.record.keywords, &f.record.labels);
    Graded {
        correct: predicted == f.record.labels,
        multi: f.record.labels.len() > 1,
        reward: [r.total, r.r_fmt, r.r_cog, r.r_diag],
    }
}

fn grade(
    policy: &TemplatePolicy,
    data: &[Featurized],
    observations: &[Observation],
    ctx: &RewardContext,
    decoding: Decoding,
) -> Result<Vec<Graded>> {
    data.par_iter()
        .zip(observations)
        .enumerate()
        .map(|(i, (f, obs))| {
            let choices = match decoding {
                Decoding::Greedy => policy.greedy(obs)?,
                Decoding::Sample { seed } => policy.sample(
                    obs,
                    &mut ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64)),
                )?,
            };
            let response = StructuredResponse::parse(policy.grammar().render(&choices));
            Ok(grade_response(f, &response, ctx))
        })
        .collect()
}

fn summarize(graded: &[Graded], perturbed: Option<&[Graded]>) -> MetricsReport {
    let n = graded.len();
    let n_multi = graded.iter().filter(|g| g.multi).count();
    let correct_multi = graded.iter().filter(|g| g.multi && g.correct).count();
    let correct = graded.iter().filter(|g| g.correct).count();
    let mean = |k: usize| graded.iter().map(|g| g.reward[k]).sum::<f64>() / n as f64;
    let accuracy = ratio(correct, n);
    let perturbed_accuracy =
        perturbed.map(|p| ratio(p.iter().filter(|g| g.correct).count(), p.len()));
    MetricsReport {
        n,
        n_single: n - n_multi,
        n_multi,
        accuracy,
        single_accuracy: ratio(correct - correct_multi, n - n_multi),
        multi_accuracy: ratio(correct_multi, n_multi),
        mean_reward: mean(0),
        mean_r_fmt: mean(1),
        mean_r_cog: mean(2),
        mean_r_diag: mean(3),
        perturbed_accuracy,
        accuracy_drop: perturbed_accuracy.map(|p| accuracy - p),
    }
}

fn check_vocabulary(ctx: &RewardContext) -> Result<()> {
    if ctx.vocabulary != label_vocabulary() {
        return Err(Error::contract(
            "reward vocabulary differs from the corpus label vocabulary",
        ));
    }
    Ok(())
}

/// Metrics of given responses, one per record, against the records' gold
/// data.
pub fn evaluate_responses(
    test: &[Featurized],
    responses: &[StructuredResponse],
    ctx: &RewardContext,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::contract("evaluation set is empty"));
    }
    if responses.len() != test.len() {
        return Err(Error::contract(format!(
            "{} responses for {} records",
            responses.len(),
            test.len()
        )));
    }
    check_vocabulary(ctx)?;
    let graded: Vec<Graded> = test
        .iter()
        .zip(responses)
        .map(|(f, r)| grade_response(f, r, ctx))
        .collect();
    Ok(summarize(&graded, None))
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Seeded spot interference applied to every image, with a per-record seed.
pub fn perturb_all(
    data: &[Featurized],
    spots: &SpotInterferenceConfig,
) -> Result<Vec<Observation>> {
    data.par_iter()
        .enumerate()
        .map(|(i, f)| {
            let cfg = SpotInterferenceConfig {
                seed: mix_seed(spots.seed, i as u64),
                ..spots.clone()
            };
            observe(&apply_spot_interference(&f.record.image, &cfg)?)
        })
        .collect()
}

/// Decodes every record; exact-set diagnosis accuracy with a
/// single/multi-label breakdown and optional perturbation delta.
pub fn evaluate(
    policy: &TemplatePolicy,
    test: &[Featurized],
    ctx: &RewardContext,
    options: &EvalOptions,
) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::contract("evaluation set is empty"));
    }
    check_vocabulary(ctx)?;
    for d in policy.grammar().diagnoses() {
        if d.value
            .labels()
            .any(|l| !ctx.vocabulary.iter().any(|v| v == l))
        {
            return Err(Error::contract(format!(
                "policy diagnosis `{}` outside the label vocabulary",
                d.value
            )));
        }
    }
    let observations: Vec<Observation> = test.iter().map(|f| f.observation.clone()).collect();
    let graded = grade(policy, test, &observations, ctx, options.decoding)?;
    let perturbed = match &options.perturb {
        None => None,
        Some(spots) => {
            spots.validate()?;
            let obs = perturb_all(test, spots)?;
            Some(grade(policy, test, &obs, ctx, options.decoding)?)
        }
    };
    Ok(summarize(&graded, perturbed.as_deref()))
}

/// Probability that the policy names any pathology, averaged over
/// `observations`.
pub fn pathology_rate(policy: &TemplatePolicy, observations: &[Observation]) -> Result<f64> {
    let normal = policy
        .grammar()
        .diagnoses()
        .iter()
        .position(|d| d.value.len() == 1 && d.value.contains(NORMAL))
        .ok_or_else(|| Error::contract("grammar has no normal diagnosis"))?;
    let total = observations
        .iter()
        .map(|o| {
            Ok(1.0
                - policy.distributions(o)?.log_probs[crate::policy::DIAGNOSIS_COMPONENT][normal]
                    .exp())
        })
        .sum::<Result<f64>>()?;
    Ok(total / observations.len().max(1) as f64)
}

/// Trailing moving averages of the mean reward; entry `i` averages steps
/// `i .. i + window`.
pub fn reward_moving_average(log: &[StepLog], window: usize) -> Vec<f64> {
    if window == 0 || log.len() < window {
        return Vec::new();
    }
    log.windows(window)
        .map(|w| w.iter().map(|l| l.mean_reward).sum::<f64>() / window as f64)
        .collect()
}

/// Number of non-increases of the moving average over windows lying within
/// the first `horizon` steps.
pub fn moving_average_violations(log: &[StepLog], window: usize, horizon: usize) -> usize {
    let ma = reward_moving_average(&log[..horizon.min(log.len())], window);
    ma.windows(2).filter(|w| w[1] <= w[0]).count()
}

// ---------------------------------------------------------------------------
// Theory experiments
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutReport {
    pub seed: u64,
    pub steps_run: usize,
    pub converged: bool,
    pub initial: TrajectoryRecord,
    pub first_step: TrajectoryRecord,
    #[serde(rename = "final")]
    pub last: TrajectoryRecord,
    /// Weight change of each block over the first update.
    pub first_step_delta_wc: f64,
    pub first_step_delta_we: f64,
    pub causal_accuracy: f64,
    /// Spurious sensitivity and weight norm both exceed the causal ones.
    pub spurious_dominates: bool,
    /// The spurious weights moved further on the first update.
    pub spurious_learned_first: bool,
}

fn theory_data(
    theory: &TheoryConfig,
) -> Result<(
    Vec<crate::latent_model::LatentSample>,
    Vec<crate::latent_model::LatentSample>,
)> {
    let train_set = generate_samples(&theory.latent, theory.n_train)?;
    let test_cfg = LatentConfig {
        seed: mix_seed(theory.latent.seed, THEORY_TEST_SALT),
        ..theory.latent.clone()
    };
    Ok((train_set, generate_samples(&test_cfg, theory.n_test)?))
}

/// Plain cross-entropy training without the counterfactual penalty.
pub fn theory_shortcut(theory: &TheoryConfig, artifacts: &mut Artifacts) -> Result<ShortcutReport> {
    theory.validate()?;
    let (data, test) = theory_data(theory)?;
    let config = TrainConfig {
        lambda_cf: 0.0,
        ..theory.train.clone()
    };
    let zero = DiagnosticModel::zeros(&theory.latent);
    let (model, traj) =
        artifacts.timed("train", || train(&zero, &data, &config, &theory.latent))?;
    let first = traj.records.get(1).copied().unwrap_or(traj.records[0]);
    let delta_wc = first.norm_wc - traj.records[0].norm_wc;
    let delta_we = first.norm_we - traj.records[0].norm_we;
    let last = *traj.last();
    let report = ShortcutReport {
        seed: theory.latent.seed,
        steps_run: last.step,
        converged: traj.converged,
        initial: traj.records[0],
        first_step: first,
        last,
        first_step_delta_wc: delta_wc,
        first_step_delta_we: delta_we,
        causal_accuracy: causal_accuracy(&model, &test, &theory.latent)?,
        spurious_dominates: last.s_e > last.s_c && last.norm_we > last.norm_wc,
        spurious_learned_first: delta_we > delta_wc,
    };
    let mut csv = Vec::new();
    traj.write_csv(&mut csv)?;
    if let Some(d) = artifacts.dir() {
        let p = d.join("trajectory.csv");
        fs::write(&p, csv).map_err(|e| Error::io(p, e))?;
    }
    artifacts.json("summary.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RectifyRow {
    pub lambda: f64,
    pub steps_run: usize,
    pub norm_wc: f64,
    pub norm_we: f64,
    pub s_c: f64,
    pub s_e: f64,
    pub cf_penalty: f64,
    /// Mean prediction on held-out counterfactual inputs.
    pub mean_f_cf: f64,
    pub causal_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectifyReport {
    pub seed: u64,
    pub rows: Vec<RectifyRow>,
    /// Each spurious sensitivity is at most 5% above its predecessor.
    pub s_e_non_increasing: bool,
    /// Causal accuracy of the largest penalty minus that of the smallest.
    pub accuracy_gain: f64,
}

/// Training across the penalty sweep.
pub fn theory_rectify(theory: &TheoryConfig, artifacts: &mut Artifacts) -> Result<RectifyReport> {
    theory.validate()?;
    let (data, test) = theory_data(theory)?;
    let zero = DiagnosticModel::zeros(&theory.latent);
    let mut rows = Vec::new();
    for &lambda in &theory.lambdas {
        let config = TrainConfig {
            lambda_cf: lambda,
            ..theory.train.clone()
        };
        let (model, traj) =
            artifacts.timed("train", || train(&zero, &data, &config, &theory.latent))?;
        let last = traj.last();
        rows.push(RectifyRow {
            lambda,
            steps_run: last.step,
            norm_wc: last.norm_wc,
            norm_we: last.norm_we,
            s_c: last.s_c,
            s_e: last.s_e,
            cf_penalty: last.cf_penalty,
            mean_f_cf: mean_counterfactual_prediction(&model, &test, &theory.latent)?,
            causal_accuracy: causal_accuracy(&model, &test, &theory.latent)?,
        });
    }
    let report = RectifyReport {
        seed: theory.latent.seed,
        s_e_non_increasing: rows.windows(2).all(|w| w[1].s_e <= 1.05 * w[0].s_e),
        accuracy_gain: rows[rows.len() - 1].causal_accuracy - rows[0].causal_accuracy,
        rows,
    };
    artifacts.csv("sweep.csv", &report.rows)?;
    artifacts.json("summary.json", &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Policy training pipelines
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

/// Supervised warm start on the training split from a zero policy.
pub fn run_sft(data: &Dataset, config: &SftConfig) -> Result<(TemplatePolicy, Vec<f64>)> {
    let zero = TemplatePolicy::zeros(data.grammar());
    sft_train(&zero, &sft_pairs(&data.train), config)
}

/// GRPO from `start` with `start` as the frozen reference, on the training
/// split plus the given counterfactual normals.
pub fn run_grpo(
    data: &Dataset,
    start: &TemplatePolicy,
    counterfactual: &[Featurized],
    config: &GrpoConfig,
) -> Result<(TemplatePolicy, Vec<StepLog>)> {
    let mut ex = examples(&data.train);
    ex.extend(examples(counterfactual));
    grpo_train(start, start, &ex, &reward_context(config.weights), config)
}

fn save_policy(artifacts: &Artifacts, name: &str, policy: &TemplatePolicy) -> Result<()> {
    artifacts.json(name, &policy.to_checkpoint())
}

pub fn load_policy(path: &Path) -> Result<TemplatePolicy> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    TemplatePolicy::from_checkpoint(&ckpt)
}

fn default_eval(config: &ExperimentConfig, perturb: bool) -> EvalOptions {
    EvalOptions {
        decoding: config.decoding,
        perturb: perturb.then(|| config.spots.clone()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftReport {
    pub seed: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub test: MetricsReport,
}

pub fn experiment_sft(config: &ExperimentConfig, artifacts: &mut Artifacts) -> Result<SftReport> {
    let data = artifacts.timed("data", || Dataset::for_config(config))?;
    let (policy, losses) = artifacts.timed("sft", || run_sft(&data, &config.sft))?;
    let ctx = reward_context(RewardWeights::default());
    let test = artifacts.timed("eval", || {
        evaluate(&policy, &data.test, &ctx, &default_eval(config, false))
    })?;
    let rows: Vec<LossRow> = losses
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| LossRow { epoch, loss })
        .collect();
    artifacts.csv("sft_loss.csv", &rows)?;
    save_policy(artifacts, "policy.json", &policy)?;
    let report = SftReport {
        seed: data.spec.seed,
        initial_loss: losses[0],
        final_loss: losses[losses.len() - 1],
        test,
    };
    artifacts.json("metrics.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrpoReport {
    pub seed: u64,
    pub start: MetricsReport,
    pub test: MetricsReport,
    pub initial_mean_reward: f64,
    pub final_mean_reward: f64,
    /// Non-increases of the 20-step moving average within the first 100 steps.
    pub moving_average_violations: usize,
}

/// The GRPO starting point: a checkpoint if configured, otherwise SFT.
fn start_policy(
    config: &ExperimentConfig,
    data: &Dataset,
    artifacts: &mut Artifacts,
) -> Result<TemplatePolicy> {
    match &config.policy {
        Some(p) => load_policy(p),
        None => Ok(artifacts.timed("sft", || run_sft(data, &config.sft))?.0),
    }
}

pub fn experiment_grpo(config: &ExperimentConfig, artifacts: &mut Artifacts) -> Result<GrpoReport> {
    let data = artifacts.timed("data", || Dataset::for_config(config))?;
    let start = start_policy(config, &data, artifacts)?;
    let cf = if config.use_counterfactuals {
        artifacts.timed("counterfactuals", || {
            data.counterfactual_train(&config.mask)
        })?
    } else {
        Vec::new()
    };
    let (policy, log) = artifacts.timed("grpo", || run_grpo(&data, &start, &cf, &config.grpo))?;
    let ctx = reward_context(RewardWeights::default());
    let opts = default_eval(config, false);
    let report = GrpoReport {
        seed: data.spec.seed,
        start: evaluate(&start, &data.test, &ctx, &opts)?,
        test: evaluate(&policy, &data.test, &ctx, &opts)?,
        initial_mean_reward: log.first().map_or(0.0, |l| l.mean_reward),
        final_mean_reward: log.last().map_or(0.0, |l| l.mean_reward),
        moving_average_violations: moving_average_violations(
            &log,
            REWARD_MA_WINDOW,
            REWARD_MA_HORIZON,
        ),
    };
    artifacts.csv("grpo_log.csv", &log)?;
    save_policy(artifacts, "start_policy.json", &start)?;
    save_policy(artifacts, "policy.json", &policy)?;
    artifacts.json("metrics.json", &report)?;
    Ok(report)
}

/// Evaluates a checkpoint, or an untrained zero policy when none is given.
pub fn experiment_eval(
    config: &ExperimentConfig,
    artifacts: &mut Artifacts,
) -> Result<MetricsReport> {
    let data = artifacts.timed("data", || Dataset::for_config(config))?;
    let policy = match &config.policy {
        Some(p) => load_policy(p)?,
        None => TemplatePolicy::zeros(data.grammar()),
    };
    let ctx = reward_context(RewardWeights::default());
    let report = artifacts.timed("eval", || {
        evaluate(&policy, &data.test, &ctx, &default_eval(config, true))
    })?;
    artifacts.json("metrics.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub seed: u64,
    pub sft: MetricsReport,
    pub grpo: MetricsReport,
    pub sft_drop: f64,
    pub grpo_drop: f64,
    /// Share of counterfactual test images each policy still calls
    /// pathological.
    pub sft_counterfactual_pathology: f64,
    pub grpo_counterfactual_pathology: f64,
}

/// SFT and counterfactual GRPO under the same seeded spot interference.
pub fn experiment_robustness(
    config: &ExperimentConfig,
    artifacts: &mut Artifacts,
) -> Result<RobustnessReport> {
    let data = artifacts.timed("data", || Dataset::for_config(config))?;
    let (sft, _) = artifacts.timed("sft", || run_sft(&data, &config.sft))?;
    let cf = artifacts.timed("counterfactuals", || {
        data.counterfactual_train(&config.mask)
    })?;
    let (grpo, log) = artifacts.timed("grpo", || run_grpo(&data, &sft, &cf, &config.grpo))?;
    let ctx = reward_context(RewardWeights::default());
    let opts = default_eval(config, true);
    let sft_m = artifacts.timed("eval", || evaluate(&sft, &data.test, &ctx, &opts))?;
    let grpo_m = artifacts.timed("eval", || evaluate(&grpo, &data.test, &ctx, &opts))?;
    let test_records: Vec<CorpusRecord> = data.test.iter().map(|f| f.record.clone()).collect();
    let cf_test: Vec<Observation> = featurize(counterfactuals(&test_records, &config.mask)?)?
        .into_iter()
        .map(|f| f.observation)
        .collect();
    let report = RobustnessReport {
        seed: data.spec.seed,
        sft_drop: sft_m.accuracy_drop.unwrap_or(0.0),
        grpo_drop: grpo_m.accuracy_drop.unwrap_or(0.0),
        sft: sft_m,
        grpo: grpo_m,
        sft_counterfactual_pathology: pathology_rate(&sft, &cf_test)?,
        grpo_counterfactual_pathology: pathology_rate(&grpo, &cf_test)?,
    };
    artifacts.csv("grpo_log.csv", &log)?;
    artifacts.json("metrics.json", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub seed: u64,
    pub variant: String,
    pub accuracy: f64,
    pub single_accuracy: f64,
    pub multi_accuracy: f64,
    pub mean_reward: f64,
    pub final_train_reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// The variant every other variant is compared against.
    pub baseline: String,
    pub rows: Vec<AblationRow>,
    /// Per other variant, the number of seeds on which the baseline's
    /// accuracy is at least (mask ablation) or strictly above (reward
    /// ablation) the variant's.
    pub baseline_wins: BTreeMap<String, usize>,
    pub n_seeds: usize,
    /// Per other variant, whether the baseline wins on a majority of seeds.
    pub majority: BTreeMap<String, bool>,
}

struct Variant {
    name: String,
    mask: Option<MaskStrategy>,
    weights: RewardWeights,
}

fn ablation(
    config: &ExperimentConfig,
    variants: &[Variant],
    strict: bool,
    artifacts: &mut Artifacts,
) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let cfg = config.with_seed(seed);
        let data = artifacts.timed("data", || Dataset::for_config(&cfg))?;
        let (sft, _) = artifacts.timed("sft", || run_sft(&data, &cfg.sft))?;
        let ctx = reward_context(RewardWeights::default());
        let mut cf_cache: Vec<(MaskStrategy, Vec<Featurized>)> = Vec::new();
        for v in variants {
            let cf: &[Featurized] = match v.mask {
                None => &[],
                Some(m) => {
                    if !cf_cache.iter().any(|(k, _)| *k == m) {
                        let set =
                            artifacts.timed("counterfactuals", || data.counterfactual_train(&m))?;
                        cf_cache.push((m, set));
                    }
                    &cf_cache
                        .iter()
                        .find(|(k, _)| *k == m)
                        .expect("cached above")
                        .1
                }
            };
            let grpo_cfg = GrpoConfig {
                weights: v.weights,
                ..cfg.grpo.clone()
            };
            let (policy, log) = artifacts.timed("grpo", || run_grpo(&data, &sft, cf, &grpo_cfg))?;
            let m = artifacts.timed("eval", || {
                evaluate(&policy, &data.test, &ctx, &default_eval(&cfg, false))
            })?;
            artifacts.csv(&format!("grpo_log_seed{seed}_{}.csv", v.name), &log)?;
            rows.push(AblationRow {
                seed,
                variant: v.name.clone(),
                accuracy: m.accuracy,
                single_accuracy: m.single_accuracy,
                multi_accuracy: m.multi_accuracy,
                mean_reward: m.mean_reward,
                final_train_reward: log.last().map_or(0.0, |l| l.mean_reward),
            });
        }
    }
    let baseline = variants[0].name.clone();
    let mut baseline_wins = BTreeMap::new();
    for v in &variants[1..] {
        let wins = config
            .seeds
            .iter()
            .filter(|&&s| {
                let acc = |name: &str| {
                    rows.iter()
                        .find(|r| r.seed == s && r.variant == name)
                        .map(|r| r.accuracy)
                };
                match (acc(&baseline), acc(&v.name)) {
                    (Some(b), Some(o)) => {
                        if strict {
                            b > o
                        } else {
                            b >= o
                        }
                    }
                    _ => false,
                }
            })
            .count();
        baseline_wins.insert(v.name.clone(), wins);
    }
    let n_seeds = config.seeds.len();
    let majority = baseline_wins
        .iter()
        .map(|(k, &w)| (k.clone(), 2 * w > n_seeds))
        .collect();
    let report = AblationReport {
        baseline,
        rows,
        baseline_wins,
        n_seeds,
        majority,
    };
    artifacts.csv("ablation.csv", &report.rows)?;
    artifacts.json("metrics.json", &report)?;
    Ok(report)
}

/// GRPO with the configured erasure against the alternative erasure.
pub fn experiment_ablate_mask(
    config: &ExperimentConfig,
    artifacts: &mut Artifacts,
) -> Result<AblationReport> {
    let w = config.grpo.weights;
    let variants = [
        Variant {
            name: config.mask.name().to_string(),
            mask: Some(config.mask),
            weights: w,
        },
        Variant {
            name: config.ablation_mask.name().to_string(),
            mask: Some(config.ablation_mask),
            weights: w,
        },
    ];
    if variants[0].name == variants[1].name {
        return Err(Error::config(
            "ablation_mask",
            "must differ in kind from mask",
        ));
    }
    ablation(config, &variants, false, artifacts)
}

/// Full reward schema against zeroed cognition and zeroed diagnosis weights.
pub fn experiment_ablate_rewards(
    config: &ExperimentConfig,
    artifacts: &mut Artifacts,
) -> Result<AblationReport> {
    let w = config.grpo.weights;
    let mask = config.use_counterfactuals.then_some(config.mask);
    let variants = [
        Variant {
            name: "full".into(),
            mask,
            weights: w,
        },
        Variant {
            name: "no_cog".into(),
            mask,
            weights: RewardWeights { w_cog: 0.0, ..w },
        },
        Variant {
            name: "no_diag".into(),
            mask,
            weights: RewardWeights { w_diag: 0.0, ..w },
        },
    ];
    ablation(config, &variants, true, artifacts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_multi: usize,
    pub combo_counts: BTreeMap<String, usize>,
}

pub fn experiment_corpus_gen(
    config: &ExperimentConfig,
    artifacts: &mut Artifacts,
) -> Result<CorpusReport> {
    let (records, manifest) = artifacts.timed("generate", || generate_corpus(&config.corpus))?;
    if let Some(dir) = artifacts.dir() {
        let dir = dir.to_path_buf();
        artifacts.timed("save", || {
            crate::synthcorpus::save_corpus(&dir, &config.corpus, &records)
        })?;
    }
    let mut combo_counts = BTreeMap::new();
    for r in &records {
        *combo_counts.entry(r.combo().name()).or_default() += 1;
    }
    let report = CorpusReport {
        seed: manifest.spec.seed,
        n_train: records.iter().filter(|r| r.split == Split::Train).count(),
        n_test: records.iter().filter(|r| r.split == Split::Test).count(),
        n_multi: records.iter().filter(|r| r.labels.len() > 1).count(),
        combo_counts,
    };
    artifacts.json("summary.json", &report)?;
    Ok(report)
}

/// Result of any experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Report {
    Corpus(CorpusReport),
    Shortcut(ShortcutReport),
    Rectify(RectifyReport),
    Sft(SftReport),
    Grpo(GrpoReport),
    Eval(MetricsReport),
    Robustness(RobustnessReport),
    Ablation(AblationReport),
}

/// Validates the config, runs the selected experiment and writes its
/// artifacts plus `config.json` and `timing.json` to `config.out`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Report> {
    let kind = config
        .experiment
        .ok_or_else(|| Error::config("experiment", "no experiment selected"))?;
    let config = config.resolved();
    config.validate()?;
    let mut artifacts = Artifacts::new(config.out.clone())?;
    artifacts.json("config.json", &config)?;
    let a = &mut artifacts;
    let report = match kind {
        ExperimentKind::CorpusGen => Report::Corpus(experiment_corpus_gen(&config, a)?),
        ExperimentKind::TheoryShortcut => Report::Shortcut(theory_shortcut(&config.theory, a)?),
        ExperimentKind::TheoryRectify => Report::Rectify(theory_rectify(&config.theory, a)?),
        ExperimentKind::Sft => Report::Sft(experiment_sft(&config, a)?),
        ExperimentKind::Grpo => Report::Grpo(experiment_grpo(&config, a)?),
        ExperimentKind::Eval => Report::Eval(experiment_eval(&config, a)?),
        ExperimentKind::Robustness => Report::Robustness(experiment_robustness(&config, a)?),
        ExperimentKind::AblateMask => Report::Ablation(experiment_ablate_mask(&config, a)?),
        ExperimentKind::AblateRewards => Report::Ablation(experiment_ablate_rewards(&config, a)?),
    };
    artifacts.finish()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::OnceLock;

    use super::*;
    use crate::synthcorpus::LabelCombo;

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            n_samples: 600,
            seed: 11,
            ..CorpusSpec::default()
        }
    }

    fn dataset() -> &'static Dataset {
        static DATA: OnceLock<Dataset> = OnceLock::new();
        DATA.get_or_init(|| Dataset::generate(&small_spec()).unwrap())
    }

    fn log(rewards: &[f64]) -> Vec<StepLog> {
        rewards
            .iter()
            .enumerate()
            .map(|(step, &mean_reward)| StepLog {
                step,
                mean_reward,
                mean_r_fmt: 0.0,
                mean_r_cog: 0.0,
                mean_r_diag: 0.0,
                kl: 0.0,
                surrogate: 0.0,
            })
            .collect()
    }

    #[test]
    fn gold_responses_score_perfectly() {
        let d = dataset();
        let gold: Vec<StructuredResponse> = d
            .test
            .iter()
            .map(|f| f.record.gold_response.clone())
            .collect();
        let m =
            evaluate_responses(&d.test, &gold, &reward_context(RewardWeights::default())).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.single_accuracy, 1.0);
        assert_eq!(m.mean_r_fmt, 1.0);
        assert_eq!(m.mean_r_cog, 1.0);
        assert_eq!(m.mean_r_diag, 1.0);
        assert_eq!(m.n, d.test.len());
    }

    #[test]
    fn response_count_must_match() {
        let d = dataset();
        let err = evaluate_responses(&d.test, &[], &reward_context(RewardWeights::default()))
            .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn accuracy_decomposes_into_single_and_multi() {
        let d = dataset();
        let policy = TemplatePolicy::random(d.grammar(), 1.0, 3);
        let m = evaluate(
            &policy,
            &d.test,
            &reward_context(RewardWeights::default()),
            &EvalOptions::default(),
        )
        .unwrap();
        assert_eq!(m.n_single + m.n_multi, m.n);
        assert!(m.n_multi > 0 && m.n_single > 0);
        let recombined = (m.single_accuracy * m.n_single as f64
            + m.multi_accuracy * m.n_multi as f64)
            / m.n as f64;
        assert!((recombined - m.accuracy).abs() < 1e-12);
    }

    #[test]
    fn uniform_sampling_hits_chance_accuracy() {
        let d = dataset();
        let policy = TemplatePolicy::zeros(d.grammar());
        let ctx = reward_context(RewardWeights::default());
        let draws = 10;
        let mut correct = 0.0;
        for seed in 0..draws {
            let opts = EvalOptions {
                decoding: Decoding::Sample { seed },
                perturb: None,
            };
            correct +=
                evaluate(&policy, &d.test, &ctx, &opts).unwrap().accuracy * d.test.len() as f64;
        }
        let n = (draws as usize * d.test.len()) as f64;
        let p = 1.0 / LabelCombo::count() as f64;
        let sigma = (p * (1.0 - p) / n).sqrt();
        assert!(
            (correct / n - p).abs() <= 3.0 * sigma,
            "accuracy {} vs chance {p}",
            correct / n
        );
    }

    #[test]
    fn sampled_evaluation_is_reproducible() {
        let d = dataset();
        let policy = TemplatePolicy::random(d.grammar(), 1.0, 5);
        let ctx = reward_context(RewardWeights::default());
        let opts = EvalOptions {
            decoding: Decoding::Sample { seed: 9 },
            perturb: None,
        };
        assert_eq!(
            evaluate(&policy, &d.test, &ctx, &opts).unwrap(),
            evaluate(&policy, &d.test, &ctx, &opts).unwrap()
        );
    }

    #[test]
    fn no_spots_means_no_drop() {
        let d = dataset();
        let policy = TemplatePolicy::random(d.grammar(), 1.0, 4);
        let opts = EvalOptions {
            decoding: Decoding::Greedy,
            perturb: Some(SpotInterferenceConfig {
                n_spots: 0,
                ..SpotInterferenceConfig::default()
            }),
        };
        let m = evaluate(
            &policy,
            &d.test,
            &reward_context(RewardWeights::default()),
            &opts,
        )
        .unwrap();
        assert_eq!(m.accuracy_drop, Some(0.0));
    }

    #[test]
    fn moving_average_violations_count_non_increases() {
        let rising: Vec<f64> = (0..120).map(|i| i as f64).collect();
        assert_eq!(moving_average_violations(&log(&rising), 20, 100), 0);
        let mut dip = rising.clone();
        dip[50] = 0.0;
        // Only the window that first takes in the dip decreases.
        assert_eq!(moving_average_violations(&log(&dip), 20, 100), 1);
        let flat = vec![1.0; 100];
        assert_eq!(moving_average_violations(&log(&flat), 20, 100), 80);
        assert_eq!(moving_average_violations(&log(&rising[..10]), 20, 100), 0);
        assert_eq!(
            reward_moving_average(&log(&[1.0, 2.0, 3.0]), 2),
            vec![1.5, 2.5]
        );
    }

    #[test]
    fn config_rejects_unknown_fields_and_bad_values() {
        let err = ExperimentConfig::from_json(r#"{"experimnt": "sft"}"#).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let mut c = ExperimentConfig::default();
        c.seeds.clear();
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
        let mut c = ExperimentConfig::default();
        c.theory.lambdas = vec![10.0, 1.0];
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.theory.n_train = 0;
        assert!(c.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = ExperimentConfig {
            experiment: Some(ExperimentKind::AblateRewards),
            decoding: Decoding::Sample { seed: 3 },
            ..ExperimentConfig::default()
        }
        .with_seed(8);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), c);
    }

    #[test]
    fn master_seed_reaches_every_component() {
        let a = ExperimentConfig::default().with_seed(1);
        let b = ExperimentConfig::default().with_seed(2);
        assert_ne!(a.theory.latent.seed, b.theory.latent.seed);
        assert_ne!(a.theory.train.seed, b.theory.train.seed);
        assert_ne!(a.corpus.seed, b.corpus.seed);
        assert_ne!(a.grpo.seed, b.grpo.seed);
        assert_ne!(a.spots.seed, b.spots.seed);
        let c = ExperimentConfig {
            seed: Some(1),
            ..ExperimentConfig::default()
        };
        assert_eq!(c.resolved(), a);
        assert_eq!(
            ExperimentConfig::default().resolved(),
            ExperimentConfig::default()
        );
    }

    #[test]
    fn artifacts_without_dir_write_nothing() {
        let mut a = Artifacts::default();
        assert_eq!(a.timed("stage", || Ok(3)).unwrap(), 3);
        assert!(a.timings().contains_key("stage"));
        a.json("x.json", &1).unwrap();
        a.finish().unwrap();
        assert!(a.dir().is_none());
    }

    #[test]
    fn experiment_kind_names_match_serde() {
        for k in [
            ExperimentKind::CorpusGen,
            ExperimentKind::TheoryShortcut,
            ExperimentKind::TheoryRectify,
            ExperimentKind::Sft,
            ExperimentKind::Grpo,
            ExperimentKind::Eval,
            ExperimentKind::AblateMask,
            ExperimentKind::AblateRewards,
            ExperimentKind::Robustness,
        ] {
            assert_eq!(
                serde_json::to_string(&k).unwrap(),
                format!("\"{}\"", k.name())
            );
        }
    }
}
