//! Group-relative policy optimization and supervised warm start for the
//! template policy.

use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::mix_seed;
use crate::observation::Observation;
use crate::policy::{Choices, Distributions, TemplatePolicy};
use crate::rewards::{
    DiagnosisLabelSet, KeywordSet, RewardBreakdown, RewardContext, RewardWeights,
    StructuredResponse,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub eps_norm: f64,
    pub weights: RewardWeights,
    /// Observations per step; 0 uses every training example.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            beta: 0.04,
            learning_rate: 0.015,
            steps: 200,
            eps_norm: 1e-8,
            weights: RewardWeights::default(),
            batch_size: 0,
            seed: 17,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::config("grpo.group_size", "must be at least 2"));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(Error::config("grpo.clip_eps", "must lie in (0, 1)"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::config("grpo.beta", "must be finite and nonnegative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("grpo.learning_rate", "must be positive"));
        }
        if self.eps_norm.is_nan() || self.eps_norm < 0.0 {
            return Err(Error::config("grpo.eps_norm", "must be nonnegative"));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SftConfig {
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 300,
        }
    }
}

impl SftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("sft.learning_rate", "must be positive"));
        }
        Ok(())
    }
}

/// A training observation with the reference data its responses are scored
/// against.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub observation: Observation,
    pub keywords: KeywordSet,
    pub labels: DiagnosisLabelSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupRollout {
    pub observation: Observation,
    pub responses: Vec<StructuredResponse>,
    pub choices: Vec<Choices>,
    pub old_log_probs: Vec<f64>,
    pub rewards: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
}

impl GroupRollout {
    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    /// Scores every response and fills rewards and advantages.
    pub fn score(
        &mut self,
        ctx: &RewardContext,
        keywords: &KeywordSet,
        gold: &DiagnosisLabelSet,
        eps_norm: f64,
    ) {
        self.rewards = self
            .responses
            .iter()
            .map(|r| ctx.score(r, keywords, gold))
            .collect();
        let totals: Vec<f64> = self.rewards.iter().map(|r| r.total).collect();
        self.advantages = compute_advantages(&totals, eps_norm);
    }
}

/// `(r − mean) / (std + eps)` with the population standard deviation.
pub fn compute_advantages(rewards: &[f64], eps_norm: f64) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mu = rewards.iter().sum::<f64>() / n;
    let sigma = (rewards.iter().map(|r| (r - mu).powi(2)).sum::<f64>() / n).sqrt();
    rewards
        .iter()
        .map(|r| (r - mu) / (sigma + eps_norm))
        .collect()
}

/// `min(ρ A, clip(ρ, 1−ε, 1+ε) A)` and whether the unclipped branch is the
/// one selected (so the ratio carries gradient).
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> (f64, bool) {
    let raw = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps) * advantage;
    if raw <= clipped {
        (raw, true)
    } else {
        (clipped, false)
    }
}

pub fn sample_group(
    policy: &TemplatePolicy,
    observation: &Observation,
    group_size: usize,
    seed: u64,
) -> Result<GroupRollout> {
    if group_size < 2 {
        return Err(Error::contract("group size must be at least 2"));
    }
    let dist = policy.distributions(observation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let choices: Vec<Choices> = (0..group_size).map(|_| dist.sample(&mut rng)).collect();
    let grammar = policy.grammar();
    Ok(GroupRollout {
        observation: observation.clone(),
        responses: choices
            .iter()
            .map(|c| StructuredResponse::parse(grammar.render(c)))
            .collect(),
        old_log_probs: choices.iter().map(|c| dist.log_prob(c)).collect(),
        choices,
        rewards: Vec::new(),
        advantages: Vec::new(),
    })
}

pub fn kl_divergence(
    policy: &TemplatePolicy,
    reference: &TemplatePolicy,
    observation: &Observation,
) -> Result<f64> {
    check_compatible(policy, reference)?;
    Ok(policy
        .distributions(observation)?
        .kl(&reference.distributions(observation)?))
}

fn check_compatible(a: &TemplatePolicy, b: &TemplatePolicy) -> Result<()> {
    if a.grammar() != b.grammar() {
        return Err(Error::contract("policies use different grammars"));
    }
    Ok(())
}

/// Parts of the objective at one group, with the logit-space gradient.
struct GroupTerms {
    surrogate: f64,
    kl: f64,
    logit_grads: Vec<Vec<f64>>,
}

fn group_terms(
    group: &GroupRollout,
    dist: &Distributions,
    reference: &Distributions,
    config: &GrpoConfig,
) -> Result<GroupTerms> {
    if group.advantages.len() != group.len() || group.old_log_probs.len() != group.len() {
        return Err(Error::contract(
            "group has no advantages or old log-probabilities",
        ));
    }
    let g = group.len() as f64;
    let mut logit_grads = TemplatePolicy::kl_logit_grads(dist, reference);
    for row in &mut logit_grads {
        for v in row.iter_mut() {
            *v *= -config.beta;
        }
    }
    let mut surrogate = 0.0;
    for ((c, old), adv) in group
        .choices
        .iter()
        .zip(&group.old_log_probs)
        .zip(&group.advantages)
    {
        let ratio = (dist.log_prob(c) - old).exp();
        if !ratio.is_finite() {
            return Err(Error::numerical(0, "non-finite probability ratio"));
        }
        let (value, active) = clipped_surrogate(ratio, *adv, config.clip_eps);
        surrogate += value / g;
        if active && *adv != 0.0 {
            let scale = adv * ratio / g;
            for (row, lg) in logit_grads
                .iter_mut()
                .zip(TemplatePolicy::log_prob_logit_grads(dist, c))
            {
                for (v, d) in row.iter_mut().zip(lg) {
                    *v += scale * d;
                }
            }
        }
    }
    Ok(GroupTerms {
        surrogate,
        kl: dist.kl(reference),
        logit_grads,
    })
}

/// Clipped group-relative surrogate minus `β·KL(π ‖ π_ref)` at the group's
/// observation, with its gradient in parameter space.
pub fn grpo_objective(
    group: &GroupRollout,
    policy: &TemplatePolicy,
    reference: &TemplatePolicy,
    config: &GrpoConfig,
) -> Result<(f64, Vec<f64>)> {
    check_compatible(policy, reference)?;
    let dist = policy.distributions(&group.observation)?;
    let dref = reference.distributions(&group.observation)?;
    let t = group_terms(group, &dist, &dref, config)?;
    let mut grad = vec![0.0; policy.params().len()];
    policy.backprop_logits(&group.observation, &t.logit_grads, 1.0, &mut grad);
    Ok((t.surrogate - config.beta * t.kl, grad))
}

/// Adam ascent on a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn ascend(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            params[i] += self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_r_fmt: f64,
    pub mean_r_cog: f64,
    pub mean_r_diag: f64,
    pub kl: f64,
    pub surrogate: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path.display().to_string(), format!("{other:?}")),
    }
}

fn sum_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn finite_or(step: usize, what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::numerical(step, format!("non-finite {what}")))
    }
}

/// Runs GRPO from `policy` against the frozen `reference`. Each step samples
/// a batch of examples, draws a group per example from the current policy
/// (which is also π_old), scores it and takes one Adam ascent step.
pub fn grpo_train(
    policy: &TemplatePolicy,
    reference: &TemplatePolicy,
    examples: &[Example],
    ctx: &RewardContext,
    config: &GrpoConfig,
) -> Result<(TemplatePolicy, Vec<StepLog>)> {
    config.validate()?;
    check_compatible(policy, reference)?;
    if examples.is_empty() {
        return Err(Error::contract("GRPO needs at least one example"));
    }
    let ctx = RewardContext {
        weights: config.weights,
        ..ctx.clone()
    };
    let mut policy = policy.clone();
    let mut adam = Adam::new(policy.params().len(), config.learning_rate);
    let mut log = Vec::with_capacity(config.steps);
    let n = examples.len();
    let batch = if config.batch_size == 0 {
        n
    } else {
        config.batch_size.min(n)
    };
    for step in 0..config.steps {
        let step_seed = mix_seed(config.seed, step as u64);
        let picked: Vec<usize> = if batch == n {
            (0..n).collect()
        } else {
            let mut idx =
                index::sample(&mut ChaCha8Rng::seed_from_u64(step_seed), n, batch).into_vec();
            idx.sort_unstable();
            idx
        };
        let current = &policy;
        let parts = picked
            .par_iter()
            .map(|&i| -> Result<(f64, f64, [f64; 4], Vec<f64>)> {
                let ex = &examples[i];
                let mut group = sample_group(
                    current,
                    &ex.observation,
                    config.group_size,
                    mix_seed(step_seed, i as u64),
                )?;
                group.score(&ctx, &ex.keywords, &ex.labels, config.eps_norm);
                let dist = current.distributions(&ex.observation)?;
                let dref = reference.distributions(&ex.observation)?;
                let t = group_terms(&group, &dist, &dref, config).map_err(|e| match e {
                    Error::Numerical { reason, .. } => Error::numerical(step, reason),
                    e => e,
                })?;
                let mut grad = vec![0.0; current.params().len()];
                current.backprop_logits(&ex.observation, &t.logit_grads, 1.0, &mut grad);
                let g = group.len() as f64;
                let mut means = [0.0; 4];
                for r in &group.rewards {
                    means[0] += r.total / g;
                    means[1] += r.r_fmt / g;
                    means[2] += r.r_cog / g;
                    means[3] += r.r_diag / g;
                }
                Ok((t.surrogate, t.kl, means, grad))
            })
            .collect::<Result<Vec<_>>>()?;
        let b = parts.len() as f64;
        let mut grad = vec![0.0; policy.params().len()];
        let (mut surrogate, mut kl, mut means) = (0.0, 0.0, [0.0; 4]);
        for (s, k, m, g) in &parts {
            surrogate += s / b;
            kl += k / b;
            for (a, v) in means.iter_mut().zip(m) {
                *a += v / b;
            }
            sum_into(&mut grad, g);
        }
        grad.iter_mut().for_each(|g| *g /= b);
        finite_or(step, "gradient", &grad)?;
        adam.ascend(policy.params_mut(), &grad);
        finite_or(step, "parameters", policy.params())?;
        log.push(StepLog {
            step,
            mean_reward: means[0],
            mean_r_fmt: means[1],
            mean_r_cog: means[2],
            mean_r_diag: means[3],
            kl,
            surrogate,
        });
    }
    Ok((policy, log))
}

/// Gold responses in choice form; fails if any is outside the grammar.
pub fn gold_choices(
    policy: &TemplatePolicy,
    corpus: &[(Observation, StructuredResponse)],
) -> Result<Vec<(Observation, Choices)>> {
    corpus
        .iter()
        .map(|(o, r)| Ok((o.clone(), policy.grammar().parse(r)?)))
        .collect()
}

/// Mean negative log-probability of the gold choices and its gradient.
pub fn nll_and_gradient(
    policy: &TemplatePolicy,
    data: &[(Observation, Choices)],
) -> Result<(f64, Vec<f64>)> {
    let parts = data
        .par_chunks(64)
        .map(|chunk| -> Result<(f64, Vec<f64>)> {
            let mut grad = vec![0.0; policy.params().len()];
            let mut nll = 0.0;
            for (o, c) in chunk {
                let d = policy.distributions(o)?;
                nll -= d.log_prob(c);
                policy.backprop_logits(
                    o,
                    &TemplatePolicy::log_prob_logit_grads(&d, c),
                    -1.0,
                    &mut grad,
                );
            }
            Ok((nll, grad))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = data.len() as f64;
    let mut grad = vec![0.0; policy.params().len()];
    let mut nll = 0.0;
    for (l, g) in &parts {
        nll += l;
        sum_into(&mut grad, g);
    }
    grad.iter_mut().for_each(|g| *g /= n);
    Ok((nll / n, grad))
}

/// Full-batch gradient descent on the mean negative log-probability of the
/// gold responses. Returns the trained policy and the loss before each epoch
/// followed by the final loss.
pub fn sft_train(
    policy: &TemplatePolicy,
    corpus: &[(Observation, StructuredResponse)],
    config: &SftConfig,
) -> Result<(TemplatePolicy, Vec<f64>)> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::contract("SFT needs a nonempty corpus"));
    }
    let data = gold_choices(policy, corpus)?;
    let mut policy = policy.clone();
    let mut losses = Vec::with_capacity(config.epochs + 1);
    for epoch in 0..=config.epochs {
        let (loss, grad) = nll_and_gradient(&policy, &data)?;
        if !loss.is_finite() {
            return Err(Error::numerical(epoch, "non-finite SFT loss"));
        }
        losses.push(loss);
        if epoch == config.epochs {
            break;
        }
        for (p, g) in policy.params_mut().iter_mut().zip(&grad) {
            *p -= config.learning_rate * g;
        }
    }
    Ok((policy, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::tests::{random_obs, toy_grammar};
    use crate::policy::{Grammar, N_SECTIONS};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn perturbed(p: &TemplatePolicy, scale: f64, seed: u64) -> TemplatePolicy {
        let mut q = p.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in q.params_mut() {
            *v += scale * rng.sample::<f64, _>(StandardNormal);
        }
        q
    }

    #[test]
    fn advantage_examples() {
        assert_eq!(compute_advantages(&[2.0, 2.0, 2.0], 1e-8), vec![0.0; 3]);
        assert_eq!(compute_advantages(&[0.0, 4.0], 0.0), vec![-1.0, 1.0]);
        let a = compute_advantages(&[0.0, 1.0, 2.0, 3.0], 1e-8);
        for (x, e) in a.iter().zip([-1.3416, -0.4472, 0.4472, 1.3416]) {
            assert!((x - e).abs() < 1e-4);
        }
    }

    #[test]
    fn clip_algebra_on_grid() {
        assert_eq!(clipped_surrogate(1.5, 1.0, 0.2).0, 1.2);
        for ri in 0..=40 {
            let r = ri as f64 * 0.075;
            for ai in -8..=8 {
                let a = ai as f64 * 0.5;
                for eps in [0.05, 0.2, 0.5] {
                    let (v, active) = clipped_surrogate(r, a, eps);
                    let want = (r * a).min(r.clamp(1.0 - eps, 1.0 + eps) * a);
                    assert_eq!(v, want);
                    if a > 0.0 {
                        assert!(v <= (1.0 + eps) * a);
                    }
                    if a < 0.0 {
                        assert!(v <= (1.0 - eps) * a);
                    }
                    if !active {
                        assert!(r > 1.0 + eps || r < 1.0 - eps);
                    }
                }
            }
        }
    }

    #[test]
    fn bernoulli_kl_closed_form() {
        let g = toy_grammar(1);
        let mut p = TemplatePolicy::zeros(g.clone());
        let q = TemplatePolicy::zeros(g.clone());
        let w = g.row_width();
        p.params_mut()[w - 1] = (0.9f64 / 0.1).ln();
        let obs = Observation(vec![0.0]);
        let kl = kl_divergence(&p, &q, &obs).unwrap();
        let want = 0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln();
        assert!((kl - want).abs() < 1e-12);
        assert!((kl - 0.3681).abs() < 1e-4);
        assert_eq!(kl_divergence(&q, &q, &obs).unwrap(), 0.0);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let g = toy_grammar(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = perturbed(&TemplatePolicy::zeros(g.clone()), 0.6, 1);
        let q = perturbed(&TemplatePolicy::zeros(g), 0.6, 2);
        let obs = random_obs(&mut rng, 3);
        let (dp, dq) = (
            p.distributions(&obs).unwrap(),
            q.distributions(&obs).unwrap(),
        );
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let c = dp.sample(&mut rng);
                // Slots of omitted sections still contribute to the full KL,
                // so sample them too.
                let mut v = dp.log_prob(&c) - dq.log_prob(&c);
                for i in 0..crate::policy::N_SLOTS {
                    if c.slots[i].is_none() {
                        let comp = N_SECTIONS + i;
                        let u: f64 = rng.random();
                        let k = if u < dp.log_probs[comp][0].exp() {
                            0
                        } else {
                            1
                        };
                        v += dp.log_probs[comp][k] - dq.log_probs[comp][k];
                    }
                }
                v
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let exact = dp.kl(&dq);
        assert!(exact > 0.0);
        assert!(
            (mean - exact).abs() < 3.0 * sd / (n as f64).sqrt(),
            "{mean} vs {exact}"
        );
    }

    #[test]
    fn identical_policies_give_zero_objective() {
        let g = toy_grammar(3);
        let p = perturbed(&TemplatePolicy::zeros(g), 0.5, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = random_obs(&mut rng, 3);
        let mut group = sample_group(&p, &obs, 8, 5).unwrap();
        let totals: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
        group.advantages = compute_advantages(&totals, 1e-8);
        let (v, _) = grpo_objective(&group, &p, &p, &GrpoConfig::default()).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let g = toy_grammar(3);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let config = GrpoConfig {
            beta: 0.3,
            ..GrpoConfig::default()
        };
        for t in 0..50 {
            let old = perturbed(&TemplatePolicy::zeros(g.clone()), 0.5, t);
            let p = perturbed(&old, 0.05, t + 1000);
            let r = perturbed(&old, 0.3, t + 2000);
            let obs = random_obs(&mut rng, 3);
            let mut group = sample_group(&old, &obs, 6, t).unwrap();
            let totals: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..4.0)).collect();
            group.advantages = compute_advantages(&totals, 1e-8);
            let (_, grad) = grpo_objective(&group, &p, &r, &config).unwrap();
            for k in (0..p.params().len()).step_by(5) {
                let h = 1e-6;
                let mut a = p.clone();
                a.params_mut()[k] += h;
                let mut b = p.clone();
                b.params_mut()[k] -= h;
                let fa = grpo_objective(&group, &a, &r, &config).unwrap().0;
                let fb = grpo_objective(&group, &b, &r, &config).unwrap().0;
                let fd = (fa - fb) / (2.0 * h);
                assert!(
                    (fd - grad[k]).abs() <= 1e-5 * fd.abs().max(1.0),
                    "t={t} k={k}: {fd} vs {}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        let g = toy_grammar(3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for t in 0..50 {
            let p = perturbed(&TemplatePolicy::zeros(g.clone()), 0.5, t);
            let q = perturbed(&TemplatePolicy::zeros(g.clone()), 0.5, t + 500);
            let obs = random_obs(&mut rng, 3);
            let (dp, dq) = (
                p.distributions(&obs).unwrap(),
                q.distributions(&obs).unwrap(),
            );
            let mut grad = vec![0.0; p.params().len()];
            p.backprop_logits(
                &obs,
                &TemplatePolicy::kl_logit_grads(&dp, &dq),
                1.0,
                &mut grad,
            );
            for k in (0..p.params().len()).step_by(3) {
                let h = 1e-5;
                let mut a = p.clone();
                a.params_mut()[k] += h;
                let mut b = p.clone();
                b.params_mut()[k] -= h;
                let fd = (kl_divergence(&a, &q, &obs).unwrap()
                    - kl_divergence(&b, &q, &obs).unwrap())
                    / (2.0 * h);
                assert!(
                    (fd - grad[k]).abs() <= 1e-5 * fd.abs().max(1.0),
                    "{fd} vs {}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let g = toy_grammar(2);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let all = g.enumerate();
        for t in 0..50 {
            let p = perturbed(&TemplatePolicy::zeros(g.clone()), 0.5, t);
            let data: Vec<(Observation, Choices)> = (0..4)
                .map(|_| (random_obs(&mut rng, 2), all[rng.random_range(0..all.len())]))
                .collect();
            let (_, grad) = nll_and_gradient(&p, &data).unwrap();
            for k in (0..p.params().len()).step_by(4) {
                let h = 1e-5;
                let mut a = p.clone();
                a.params_mut()[k] += h;
                let mut b = p.clone();
                b.params_mut()[k] -= h;
                let fd = (nll_and_gradient(&a, &data).unwrap().0
                    - nll_and_gradient(&b, &data).unwrap().0)
                    / (2.0 * h);
                assert!(
                    (fd - grad[k]).abs() <= 1e-5 * fd.abs().max(1.0),
                    "{fd} vs {}",
                    grad[k]
                );
            }
        }
    }

    #[test]
    fn sample_group_is_deterministic_and_exact() {
        let g = toy_grammar(3);
        let p = perturbed(&TemplatePolicy::zeros(g), 0.7, 9);
        let obs = Observation(vec![0.2, -0.4, 1.0]);
        let a = sample_group(&p, &obs, 8, 77).unwrap();
        let b = sample_group(&p, &obs, 8, 77).unwrap();
        assert_eq!(a, b);
        for (c, lp) in a.choices.iter().zip(&a.old_log_probs) {
            assert_eq!(p.log_prob(&obs, c).unwrap(), *lp);
            assert!(lp.is_finite() && *lp <= 0.0);
            let parsed = p
                .grammar()
                .parse(&StructuredResponse::parse(p.grammar().render(c)))
                .unwrap();
            assert_eq!(&parsed, c);
        }
        assert!(sample_group(&p, &obs, 1, 0).is_err());
    }

    #[test]
    fn uniform_slot_is_uniform_empirically() {
        let grammar = std::sync::Arc::new(Grammar::synthetic(11, 2));
        let mut p = TemplatePolicy::zeros(grammar.clone());
        // Always include every section.
        let w = grammar.row_width();
        for s in 0..N_SECTIONS {
            p.params_mut()[s * w + w - 1] = 40.0;
        }
        let obs = Observation(vec![0.0, 0.0]);
        let slot = 3;
        let v = grammar.component_size(N_SECTIONS + slot);
        let mut counts = vec![0usize; v];
        let mut n = 0;
        for seed in 0..1250 {
            for c in sample_group(&p, &obs, 8, seed).unwrap().choices {
                counts[c.slots[slot].unwrap()] += 1;
                n += 1;
            }
        }
        let e = n as f64 / v as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // Mean v−1, sd sqrt(2(v−1)).
        let df = (v - 1) as f64;
        assert!(chi2 < df + 3.0 * (2.0 * df).sqrt(), "chi2 {chi2} df {df}");
        for c in counts {
            let sd = (e * (1.0 - 1.0 / v as f64)).sqrt();
            assert!((c as f64 - e).abs() < 3.0 * sd + 1.0);
        }
    }

    fn toy_examples(g: &std::sync::Arc<Grammar>, n: usize) -> (Vec<Example>, RewardContext) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let keywords = KeywordSet::from_flat(
            &(0..9)
                .map(|i| g.spec().slots[i][1].value.clone())
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let ex = (0..n)
            .map(|_| Example {
                observation: random_obs(&mut rng, g.obs_dim()),
                keywords: keywords.clone(),
                labels: DiagnosisLabelSet::new(["polyp"]),
            })
            .collect();
        let ctx = RewardContext {
            vocabulary: vec!["normal".into(), "polyp".into(), "ulcer".into()],
            ..RewardContext::default()
        };
        (ex, ctx)
    }

    #[test]
    fn huge_beta_stays_at_reference() {
        let g = toy_grammar(3);
        let r = perturbed(&TemplatePolicy::zeros(g.clone()), 0.3, 1);
        let (ex, ctx) = toy_examples(&g, 16);
        let config = GrpoConfig {
            beta: 1e3,
            steps: 30,
            learning_rate: 0.01,
            ..GrpoConfig::default()
        };
        let (p, _) = grpo_train(&r, &r, &ex, &ctx, &config).unwrap();
        for e in &ex {
            assert!(kl_divergence(&p, &r, &e.observation).unwrap() < 0.01);
        }
    }

    #[test]
    fn zero_weights_leave_reference_untouched() {
        let g = toy_grammar(3);
        let r = perturbed(&TemplatePolicy::zeros(g.clone()), 0.3, 1);
        let (ex, ctx) = toy_examples(&g, 16);
        let config = GrpoConfig {
            weights: RewardWeights {
                w_fmt: 0.0,
                w_cog: 0.0,
                w_diag: 0.0,
            },
            steps: 10,
            ..GrpoConfig::default()
        };
        // Starting at the reference, the KL gradient is zero and rewards are
        // constant, so nothing moves.
        let (p, log) = grpo_train(&r, &r, &ex, &ctx, &config).unwrap();
        assert_eq!(p.params(), r.params());
        assert!(log.iter().all(|l| l.mean_reward == 0.0));
        // Starting elsewhere, only the KL pull acts and it shrinks the gap.
        let start = perturbed(&r, 0.2, 5);
        let (p, _) = grpo_train(&start, &r, &ex, &ctx, &config).unwrap();
        let kl = |x: &TemplatePolicy| {
            ex.iter()
                .map(|e| kl_divergence(x, &r, &e.observation).unwrap())
                .sum::<f64>()
        };
        assert!(kl(&p) < kl(&start));
    }

    #[test]
    fn grpo_raises_reward_on_toy_task() {
        let g = toy_grammar(3);
        let r = TemplatePolicy::zeros(g.clone());
        let (ex, ctx) = toy_examples(&g, 32);
        let config = GrpoConfig {
            steps: 60,
            learning_rate: 0.05,
            beta: 0.0,
            ..GrpoConfig::default()
        };
        let (_, log) = grpo_train(&r, &r, &ex, &ctx, &config).unwrap();
        assert!(
            log[59].mean_reward > log[0].mean_reward + 1.0,
            "{} -> {}",
            log[0].mean_reward,
            log[59].mean_reward
        );
        let again = grpo_train(&r, &r, &ex, &ctx, &config).unwrap().1;
        assert_eq!(log, again);
    }

    #[test]
    fn sft_memorizes_a_single_response() {
        let g = toy_grammar(2);
        let p = TemplatePolicy::zeros(g.clone());
        let target = g.enumerate()[1234];
        let obs = Observation(vec![0.5, -1.0]);
        let corpus = vec![(obs.clone(), StructuredResponse::parse(g.render(&target)))];
        let (trained, losses) = sft_train(
            &p,
            &corpus,
            &SftConfig {
                learning_rate: 1.0,
                epochs: 3000,
            },
        )
        .unwrap();
        assert!(trained.log_prob(&obs, &target).unwrap().exp() > 0.99);
        assert_eq!(trained.greedy(&obs).unwrap(), target);
        assert!(losses.windows(2).all(|w| w[1] <= w[0]));
        let (same, _) = sft_train(
            &p,
            &corpus,
            &SftConfig {
                learning_rate: 1.0,
                epochs: 0,
            },
        )
        .unwrap();
        assert_eq!(same.params(), p.params());
    }
}
