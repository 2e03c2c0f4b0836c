//! Latent factor model of shortcut learning.
//!
//! Images are abstracted to a pair of latent blocks: a causal block `z_c`
//! that determines the label and a spurious block `z_e` that merely
//! correlates with it. A logistic diagnostic model reads the feature map
//! `φ = [κ_c·g(z_c); κ_e·z_e]`, where `g` is a fixed smooth nonlinearity and
//! `κ_e > κ_c` makes the spurious pathway the "simpler", higher-norm one.
//!
//! Training is plain full-batch gradient descent on binary cross-entropy,
//! optionally augmented with the counterfactual penalty
//! `R_cf = E[f(φ(0, z_e))²]`, the prediction on inputs whose causal latent
//! has been zeroed.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{dot, norm2, sigmoid, softplus};

/// `sqrt(E[tanh(X)^2])` for `X ~ N(0, 1)`. Dividing by it keeps the causal
/// block at unit RMS per coordinate, so `κ_e/κ_c` is the block norm ratio.
pub const TANH_RMS: f64 = 0.627_928_730_349_106_8;

/// Seed salt used when resampling spurious latents for the decorrelated probe.
const RESAMPLE_SALT: u64 = 0x5eed_cafe_f00d_0001;
const MIXING_SALT: u64 = 0x0a11_ce5e_ed00_0002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatentConfig {
    pub d_c: usize,
    pub d_e: usize,
    pub kappa_c: f64,
    pub kappa_e: f64,
    pub rho_e: f64,
    pub noise_std: f64,
    /// Distance of the lesion-free latent `z_c = 0` below the causal decision
    /// boundary, in units of the latent standard deviation.
    pub causal_offset: f64,
    pub seed: u64,
}

impl Default for LatentConfig {
    fn default() -> Self {
        Self {
            d_c: 8,
            d_e: 1,
            kappa_c: 1.0,
            kappa_e: 4.0,
            rho_e: 0.95,
            noise_std: 1.4,
            causal_offset: 1.5,
            seed: 7,
        }
    }
}

impl LatentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_c == 0 {
            return Err(Error::config("latent.d_c", "must be positive"));
        }
        if self.d_e == 0 {
            return Err(Error::config("latent.d_e", "must be positive"));
        }
        if !(self.kappa_c > 0.0 && self.kappa_c.is_finite()) {
            return Err(Error::config("latent.kappa_c", "must be a positive real"));
        }
        if !(self.kappa_e > 0.0 && self.kappa_e.is_finite()) {
            return Err(Error::config("latent.kappa_e", "must be a positive real"));
        }
        if !(0.0..=1.0).contains(&self.rho_e) {
            return Err(Error::config("latent.rho_e", "must lie in [0, 1]"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::config("latent.noise_std", "must be nonnegative"));
        }
        if !(self.causal_offset >= 0.0 && self.causal_offset.is_finite()) {
            return Err(Error::config("latent.causal_offset", "must be nonnegative"));
        }
        Ok(())
    }

    /// Number of features produced by [`featurize`].
    pub fn feature_dim(&self) -> usize {
        self.d_c + self.d_e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSample {
    pub z_c: Vec<f64>,
    pub z_e: Vec<f64>,
    /// Binary label, 0 or 1.
    pub y: u8,
}

impl LatentSample {
    /// Sign of the mean spurious latent, the summary statistic that carries
    /// the label correlation.
    pub fn spurious_sign(&self) -> f64 {
        if self.z_e.iter().sum::<f64>() >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Factor {
    Causal,
    Spurious,
}

/// Logistic model over the concatenated feature map. Also used as the
/// gradient type, since gradients share its shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticModel {
    pub w_c: Vec<f64>,
    pub w_e: Vec<f64>,
    pub bias: f64,
}

impl DiagnosticModel {
    pub fn zeros(config: &LatentConfig) -> Self {
        Self {
            w_c: vec![0.0; config.d_c],
            w_e: vec![0.0; config.d_e],
            bias: 0.0,
        }
    }

    pub fn logit(&self, features: &[f64]) -> f64 {
        let (c, e) = features.split_at(self.w_c.len());
        dot(&self.w_c, c) + dot(&self.w_e, e) + self.bias
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &DiagnosticModel) {
        for (w, g) in self.w_c.iter_mut().zip(&other.w_c) {
            *w += alpha * g;
        }
        for (w, g) in self.w_e.iter_mut().zip(&other.w_e) {
            *w += alpha * g;
        }
        self.bias += alpha * other.bias;
    }

    pub fn max_abs(&self) -> f64 {
        self.w_c
            .iter()
            .chain(&self.w_e)
            .chain(std::iter::once(&self.bias))
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.w_c.iter().chain(&self.w_e).all(|v| v.is_finite()) && self.bias.is_finite()
    }

    /// Flat parameter view `[w_c; w_e; bias]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.w_c.len() + self.w_e.len() + 1);
        v.extend_from_slice(&self.w_c);
        v.extend_from_slice(&self.w_e);
        v.push(self.bias);
        v
    }

    pub fn from_flat(flat: &[f64], d_c: usize, d_e: usize) -> Self {
        assert_eq!(flat.len(), d_c + d_e + 1, "flat parameter length");
        Self {
            w_c: flat[..d_c].to_vec(),
            w_e: flat[d_c..d_c + d_e].to_vec(),
            bias: flat[d_c + d_e],
        }
    }

    fn check_shape(&self, config: &LatentConfig) -> Result<()> {
        if self.w_c.len() != config.d_c || self.w_e.len() != config.d_e {
            return Err(Error::contract(format!(
                "model shape ({}, {}) does not match latent dims ({}, {})",
                self.w_c.len(),
                self.w_e.len(),
                config.d_c,
                config.d_e
            )));
        }
        Ok(())
    }
}

/// The fixed feature map `φ` for one latent configuration. Building it draws
/// the orthonormal mixing matrix of the causal nonlinearity once.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    config: LatentConfig,
    /// Row-major `d_c × d_c` orthonormal matrix.
    mixing: Vec<f64>,
}

impl FeatureMap {
    pub fn new(config: &LatentConfig) -> Result<Self> {
        config.validate()?;
        let mixing = orthonormal_matrix(config.d_c, config.seed ^ MIXING_SALT);
        Ok(Self {
            config: config.clone(),
            mixing,
        })
    }

    pub fn config(&self) -> &LatentConfig {
        &self.config
    }

    fn pre_activation(&self, z_c: &[f64]) -> Vec<f64> {
        let d = self.config.d_c;
        (0..d)
            .map(|i| dot(&self.mixing[i * d..(i + 1) * d], z_c))
            .collect()
    }

    /// `κ_c · tanh(A z_c) / TANH_RMS`.
    pub fn causal_block(&self, z_c: &[f64]) -> Vec<f64> {
        let scale = self.config.kappa_c / TANH_RMS;
        self.pre_activation(z_c)
            .into_iter()
            .map(|u| scale * u.tanh())
            .collect()
    }

    pub fn spurious_block(&self, z_e: &[f64]) -> Vec<f64> {
        z_e.iter().map(|z| self.config.kappa_e * z).collect()
    }

    pub fn featurize(&self, sample: &LatentSample) -> Result<Vec<f64>> {
        self.check_sample(sample)?;
        let mut phi = self.causal_block(&sample.z_c);
        phi.extend(self.spurious_block(&sample.z_e));
        Ok(phi)
    }

    /// Features of the counterfactual input with the causal latent zeroed.
    pub fn featurize_counterfactual(&self, sample: &LatentSample) -> Result<Vec<f64>> {
        self.check_sample(sample)?;
        let mut phi = self.causal_block(&vec![0.0; self.config.d_c]);
        phi.extend(self.spurious_block(&sample.z_e));
        Ok(phi)
    }

    fn check_sample(&self, sample: &LatentSample) -> Result<()> {
        if sample.z_c.len() != self.config.d_c || sample.z_e.len() != self.config.d_e {
            return Err(Error::contract(format!(
                "sample dims ({}, {}) do not match config ({}, {})",
                sample.z_c.len(),
                sample.z_e.len(),
                self.config.d_c,
                self.config.d_e
            )));
        }
        Ok(())
    }
}

/// Gram–Schmidt on a seeded Gaussian matrix.
fn orthonormal_matrix(d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for r in &rows {
            let p = dot(r, &v);
            for (vi, ri) in v.iter_mut().zip(r) {
                *vi -= p * ri;
            }
        }
        let n = norm2(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            rows.push(v);
        }
    }
    rows.concat()
}

/// `u·z_c - causal_offset`, the noiseless causal evidence.
pub fn causal_score(z_c: &[f64], config: &LatentConfig) -> f64 {
    z_c.iter().sum::<f64>() / (z_c.len() as f64).sqrt() - config.causal_offset
}

fn draw_spurious<R: Rng>(rng: &mut R, d_e: usize, sign: f64) -> Vec<f64> {
    (0..d_e)
        .map(|_| {
            let m: f64 = rng.sample(StandardNormal);
            sign * m.abs()
        })
        .collect()
}

/// Draws `n` samples. Causal latents are `N(c·u, I)` with `u` the unit
/// diagonal and `c = causal_offset`; the label is `1` iff the causal score
/// `u·z_c - c` plus Gaussian noise is positive, so labels are balanced and the
/// lesion-free latent `z_c = 0` scores `-c`. Spurious latents share a common sign that
/// equals the label sign with probability `rho_e` and is a fair coin
/// otherwise, so the sign/label correlation is `rho_e` for balanced labels.
pub fn generate_samples(config: &LatentConfig, n: usize) -> Result<Vec<LatentSample>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::contract("generate_samples needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let norm = (config.d_c as f64).sqrt();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let shift = config.causal_offset / norm;
        let z_c: Vec<f64> = (0..config.d_c)
            .map(|_| shift + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let noise: f64 = rng.sample(StandardNormal);
        let score = causal_score(&z_c, config) + config.noise_std * noise;
        let y = u8::from(score > 0.0);
        let label_sign = if y == 1 { 1.0 } else { -1.0 };
        let coupled = rng.random::<f64>() < config.rho_e;
        let coin = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let sign = if coupled { label_sign } else { coin };
        let z_e = draw_spurious(&mut rng, config.d_e, sign);
        out.push(LatentSample { z_c, z_e, y });
    }
    Ok(out)
}

/// Replaces every spurious latent with an independent draw, keeping `z_c`
/// and `y`. This is the decorrelated probe distribution.
pub fn resample_spurious(
    samples: &[LatentSample],
    config: &LatentConfig,
    seed: u64,
) -> Vec<LatentSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples
        .iter()
        .map(|s| {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            LatentSample {
                z_c: s.z_c.clone(),
                z_e: draw_spurious(&mut rng, config.d_e, sign),
                y: s.y,
            }
        })
        .collect()
}

/// Features of a fixed sample set computed once, so that training steps and
/// diagnostics are plain dot products.
struct Prepared {
    d_c: usize,
    d: usize,
    kappa_e: f64,
    y: Vec<f64>,
    /// Row-major `n × d` features.
    phi: Vec<f64>,
    /// Features with the causal latent zeroed.
    phi_cf: Vec<f64>,
    /// Row-major `n × d_c` Jacobian factors: row `i` of `J_n` is
    /// `κ_c/TANH_RMS · sech²(u_i) · A[i, :]`, flattened as `d_c × d_c`.
    causal_jac: Vec<f64>,
}

impl Prepared {
    fn new(map: &FeatureMap, batch: &[LatentSample]) -> Result<Self> {
        let cfg = map.config();
        let (d_c, d) = (cfg.d_c, cfg.feature_dim());
        let scale = cfg.kappa_c / TANH_RMS;
        let mut phi = Vec::with_capacity(batch.len() * d);
        let mut phi_cf = Vec::with_capacity(batch.len() * d);
        let mut causal_jac = Vec::with_capacity(batch.len() * d_c * d_c);
        let zero_block = map.causal_block(&vec![0.0; d_c]);
        for s in batch {
            phi.extend(map.featurize(s)?);
            phi_cf.extend_from_slice(&zero_block);
            phi_cf.extend(map.spurious_block(&s.z_e));
            for (i, u) in map.pre_activation(&s.z_c).iter().enumerate() {
                let t = u.tanh();
                let g = scale * (1.0 - t * t);
                causal_jac.extend(map.mixing[i * d_c..(i + 1) * d_c].iter().map(|a| g * a));
            }
        }
        Ok(Self {
            d_c,
            d,
            kappa_e: cfg.kappa_e,
            y: batch.iter().map(|s| f64::from(s.y)).collect(),
            phi,
            phi_cf,
            causal_jac,
        })
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    fn row<'a>(&self, feats: &'a [f64], i: usize) -> &'a [f64] {
        &feats[i * self.d..(i + 1) * self.d]
    }

    fn sft_loss(&self, model: &DiagnosticModel) -> f64 {
        let mut total = 0.0;
        for i in 0..self.len() {
            let z = model.logit(self.row(&self.phi, i));
            total += softplus(z) - self.y[i] * z;
        }
        total / self.len() as f64
    }

    /// `mean coef_i · [φ_i; 1]` into a model-shaped gradient.
    fn accumulate(&self, feats: &[f64], coefs: impl Iterator<Item = f64>) -> DiagnosticModel {
        let mut flat = vec![0.0; self.d + 1];
        for (i, c) in coefs.enumerate() {
            for (g, p) in flat.iter_mut().zip(self.row(feats, i)) {
                *g += c * p;
            }
            flat[self.d] += c;
        }
        let inv = 1.0 / self.len() as f64;
        flat.iter_mut().for_each(|g| *g *= inv);
        DiagnosticModel::from_flat(&flat, self.d_c, self.d - self.d_c)
    }

    fn sft_gradient(&self, model: &DiagnosticModel) -> DiagnosticModel {
        let resid =
            (0..self.len()).map(|i| sigmoid(model.logit(self.row(&self.phi, i))) - self.y[i]);
        self.accumulate(&self.phi, resid)
    }

    fn cf_penalty(&self, model: &DiagnosticModel) -> (f64, DiagnosticModel) {
        let f: Vec<f64> = (0..self.len())
            .map(|i| sigmoid(model.logit(self.row(&self.phi_cf, i))))
            .collect();
        let value = f.iter().map(|v| v * v).sum::<f64>() / self.len() as f64;
        let grad = self.accumulate(&self.phi_cf, f.iter().map(|v| 2.0 * v * v * (1.0 - v)));
        (value, grad)
    }

    fn sensitivity(&self, model: &DiagnosticModel, factor: Factor) -> f64 {
        let dc = self.d_c;
        let w_e_norm = norm2(&model.w_e);
        let mut acc = 0.0;
        let mut grad = vec![0.0; dc];
        for n in 0..self.len() {
            let f = sigmoid(model.logit(self.row(&self.phi, n)));
            let dfdz = f * (1.0 - f);
            acc += match factor {
                Factor::Spurious => dfdz * self.kappa_e * w_e_norm,
                Factor::Causal => {
                    // ∂f/∂z_c = f(1-f) · Σ_i w_c[i] · J_n[i, :]
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let jac = &self.causal_jac[n * dc * dc..(n + 1) * dc * dc];
                    for (i, w) in model.w_c.iter().enumerate() {
                        for (g, a) in grad.iter_mut().zip(&jac[i * dc..(i + 1) * dc]) {
                            *g += w * a;
                        }
                    }
                    dfdz * norm2(&grad)
                }
            };
        }
        acc / self.len() as f64
    }
}

pub fn featurize(sample: &LatentSample, config: &LatentConfig) -> Result<Vec<f64>> {
    FeatureMap::new(config)?.featurize(sample)
}

pub fn predict(model: &DiagnosticModel, features: &[f64]) -> Result<f64> {
    let want = model.w_c.len() + model.w_e.len();
    if features.len() != want {
        return Err(Error::contract(format!(
            "feature length {} does not match model ({want})",
            features.len()
        )));
    }
    Ok(sigmoid(model.logit(features)))
}

fn check_batch(batch: &[LatentSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::contract("batch must be nonempty"));
    }
    Ok(())
}

/// Binary cross-entropy, computed stably from logits.
pub fn sft_loss(
    model: &DiagnosticModel,
    batch: &[LatentSample],
    config: &LatentConfig,
) -> Result<f64> {
    check_batch(batch)?;
    let map = FeatureMap::new(config)?;
    model.check_shape(config)?;
    Ok(Prepared::new(&map, batch)?.sft_loss(model))
}

/// Gradient of the cross-entropy loss. Its negation is `E[(Y - f)·φ]`.
pub fn sft_gradient(
    model: &DiagnosticModel,
    batch: &[LatentSample],
    config: &LatentConfig,
) -> Result<DiagnosticModel> {
    check_batch(batch)?;
    let map = FeatureMap::new(config)?;
    model.check_shape(config)?;
    Ok(Prepared::new(&map, batch)?.sft_gradient(model))
}

/// Counterfactual penalty `mean f(φ(0, z_e))²` and its gradient
/// `2·mean f·f(1-f)·[φ_cf; 1]`. The penalty weight is applied by the caller.
pub fn cf_penalty(
    model: &DiagnosticModel,
    batch: &[LatentSample],
    config: &LatentConfig,
) -> Result<(f64, DiagnosticModel)> {
    check_batch(batch)?;
    let map = FeatureMap::new(config)?;
    model.check_shape(config)?;
    Ok(Prepared::new(&map, batch)?.cf_penalty(model))
}

/// Mean prediction on counterfactual inputs, `E[f(φ(0, z_e))]`.
pub fn mean_counterfactual_prediction(
    model: &DiagnosticModel,
    batch: &[LatentSample],
    config: &LatentConfig,
) -> Result<f64> {
    check_batch(batch)?;
    let map = FeatureMap::new(config)?;
    let mut acc = 0.0;
    for s in batch {
        acc += sigmoid(model.logit(&map.featurize_counterfactual(s)?));
    }
    Ok(acc / batch.len() as f64)
}

/// Mean L2 norm of the analytic Jacobian `∂f/∂z_i` over the probe set.
pub fn sensitivity(
    model: &DiagnosticModel,
    config: &LatentConfig,
    factor: Factor,
    probe: &[LatentSample],
) -> Result<f64> {
    check_batch(probe)?;
    let map = FeatureMap::new(config)?;
    model.check_shape(config)?;
    Ok(Prepared::new(&map, probe)?.sensitivity(model, factor))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub s_c: f64,
    pub s_e: f64,
    pub ratio: f64,
}

impl SensitivityReport {
    pub fn new(s_c: f64, s_e: f64) -> Self {
        Self {
            s_c,
            s_e,
            ratio: s_e / s_c.max(1e-300),
        }
    }
}

pub fn sensitivity_report(
    model: &DiagnosticModel,
    config: &LatentConfig,
    probe: &[LatentSample],
) -> Result<SensitivityReport> {
    let map = FeatureMap::new(config)?;
    check_batch(probe)?;
    model.check_shape(config)?;
    let prep = Prepared::new(&map, probe)?;
    Ok(SensitivityReport::new(
        prep.sensitivity(model, Factor::Causal),
        prep.sensitivity(model, Factor::Spurious),
    ))
}

/// Accuracy at threshold 0.5 (ties predict 0) after independently resampling
/// every spurious latent, which severs the shortcut.
pub fn causal_accuracy(
    model: &DiagnosticModel,
    data: &[LatentSample],
    config: &LatentConfig,
) -> Result<f64> {
    check_batch(data)?;
    let map = FeatureMap::new(config)?;
    model.check_shape(config)?;
    let probe = resample_spurious(data, config, config.seed ^ RESAMPLE_SALT);
    let mut correct = 0usize;
    for s in &probe {
        let f = sigmoid(model.logit(&map.featurize(s)?));
        let pred = u8::from(f > 0.5);
        correct += usize::from(pred == s.y);
    }
    Ok(correct as f64 / probe.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub eta: f64,
    /// Step cap; training stops earlier once the gradient converges.
    pub steps: usize,
    pub lambda_cf: f64,
    /// Minibatch size; `0` or anything `>= data.len()` means full batch.
    pub batch_size: usize,
    pub seed: u64,
    /// Convergence threshold on the gradient ∞-norm.
    pub grad_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            steps: 20_000,
            lambda_cf: 0.0,
            batch_size: 0,
            seed: 11,
            grad_tol: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::config("train.eta", "must be positive"));
        }
        if !(self.lambda_cf >= 0.0 && self.lambda_cf.is_finite()) {
            return Err(Error::config("train.lambda_cf", "must be nonnegative"));
        }
        if self.grad_tol.is_nan() || self.grad_tol < 0.0 {
            return Err(Error::config("train.grad_tol", "must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub norm_wc: f64,
    pub norm_we: f64,
    pub s_c: f64,
    pub s_e: f64,
    pub sft_loss: f64,
    pub cf_penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrajectory {
    pub records: Vec<TrajectoryRecord>,
    pub converged: bool,
}

impl TrainTrajectory {
    pub fn last(&self) -> &TrajectoryRecord {
        self.records
            .last()
            .expect("trajectory always holds the initial record")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r)
                .map_err(|e| Error::parse("trajectory csv", e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
        Ok(())
    }

    pub fn summary(&self) -> serde_json::Value {
        let first = &self.records[0];
        let last = self.last();
        serde_json::json!({
            "steps_run": last.step,
            "converged": self.converged,
            "initial": first,
            "final": last,
        })
    }
}

/// Gradient descent on `L + λ·R_cf`. Stops when the gradient ∞-norm drops
/// below `grad_tol` or after `steps` updates. The trajectory holds the
/// initial state plus one record per update.
pub fn train(
    model: &DiagnosticModel,
    data: &[LatentSample],
    config: &TrainConfig,
    latent_config: &LatentConfig,
) -> Result<(DiagnosticModel, TrainTrajectory)> {
    config.validate()?;
    check_batch(data)?;
    let map = FeatureMap::new(latent_config)?;
    model.check_shape(latent_config)?;

    let full_batch = config.batch_size == 0 || config.batch_size >= data.len();
    let everything = Prepared::new(&map, data)?;
    let batches: Vec<Prepared> = if full_batch {
        Vec::new()
    } else {
        let mut idx: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut rng);
        idx.chunks(config.batch_size)
            .map(|c| {
                let part: Vec<LatentSample> = c.iter().map(|&i| data[i].clone()).collect();
                Prepared::new(&map, &part)
            })
            .collect::<Result<_>>()?
    };

    let record = |step: usize, m: &DiagnosticModel| TrajectoryRecord {
        step,
        norm_wc: norm2(&m.w_c),
        norm_we: norm2(&m.w_e),
        s_c: everything.sensitivity(m, Factor::Causal),
        s_e: everything.sensitivity(m, Factor::Spurious),
        sft_loss: everything.sft_loss(m),
        cf_penalty: everything.cf_penalty(m).0,
    };

    let mut current = model.clone();
    let mut records = vec![record(0, &current)];
    let mut converged = false;
    for step in 1..=config.steps {
        let batch = if full_batch {
            &everything
        } else {
            &batches[(step - 1) % batches.len()]
        };
        let mut grad = batch.sft_gradient(&current);
        if config.lambda_cf > 0.0 {
            let (_, g_cf) = batch.cf_penalty(&current);
            grad.axpy(config.lambda_cf, &g_cf);
        }
        if !grad.is_finite() {
            return Err(Error::numerical(step, "non-finite gradient"));
        }
        if grad.max_abs() < config.grad_tol {
            converged = true;
            break;
        }
        current.axpy(-config.eta, &grad);
        let rec = record(step, &current);
        if !rec.sft_loss.is_finite() || !current.is_finite() {
            return Err(Error::numerical(step, "non-finite loss"));
        }
        records.push(rec);
    }
    Ok((current, TrainTrajectory { records, converged }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> LatentConfig {
        LatentConfig {
            d_c: 2,
            d_e: 2,
            ..LatentConfig::default()
        }
    }

    #[test]
    fn perfect_correlation_sign_agrees_with_label() {
        let c = LatentConfig {
            rho_e: 1.0,
            ..cfg()
        };
        let s = generate_samples(&c, 1000).unwrap();
        assert!(s.iter().all(|x| (x.spurious_sign() > 0.0) == (x.y == 1)));
    }

    #[test]
    fn zero_correlation_is_independent() {
        let c = LatentConfig {
            rho_e: 0.0,
            ..cfg()
        };
        let s = generate_samples(&c, 1000).unwrap();
        let r = crate::math::pearson(
            &s.iter().map(|x| x.spurious_sign()).collect::<Vec<_>>(),
            &s.iter().map(|x| f64::from(x.y)).collect::<Vec<_>>(),
        );
        assert!(r.abs() < 0.1, "corr {r}");
    }

    #[test]
    fn rejects_zero_dims() {
        let c = LatentConfig { d_c: 0, ..cfg() };
        assert!(matches!(
            generate_samples(&c, 10),
            Err(Error::Config { .. })
        ));
        assert!(generate_samples(&cfg(), 0).is_err());
    }

    #[test]
    fn resampling_keeps_labels() {
        let s = generate_samples(&cfg(), 200).unwrap();
        let r = resample_spurious(&s, &cfg(), 3);
        assert!(s.iter().zip(&r).all(|(a, b)| a.y == b.y && a.z_c == b.z_c));
        assert!(s.iter().zip(&r).any(|(a, b)| a.z_e != b.z_e));
    }

    #[test]
    fn zero_latents_featurize_to_zero() {
        let c = cfg();
        let s = LatentSample {
            z_c: vec![0.0; 2],
            z_e: vec![0.0; 2],
            y: 0,
        };
        let phi = featurize(&s, &c).unwrap();
        assert_eq!(phi, vec![0.0; 4]);
    }

    #[test]
    fn featurize_rejects_mismatch() {
        let s = LatentSample {
            z_c: vec![0.0; 3],
            z_e: vec![0.0; 2],
            y: 0,
        };
        assert!(matches!(featurize(&s, &cfg()), Err(Error::Contract(_))));
    }

    #[test]
    fn mixing_matrix_is_orthonormal() {
        let m = orthonormal_matrix(4, 9);
        for i in 0..4 {
            for j in 0..4 {
                let d = dot(&m[i * 4..i * 4 + 4], &m[j * 4..j * 4 + 4]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predict_closed_forms() {
        let m = DiagnosticModel {
            w_c: vec![0.0; 2],
            w_e: vec![0.0; 2],
            bias: 0.0,
        };
        assert_eq!(predict(&m, &[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.5);
        let m = DiagnosticModel {
            bias: 3f64.ln(),
            ..m
        };
        assert!((predict(&m, &[0.0; 4]).unwrap() - 0.75).abs() < 1e-15);
        let m = DiagnosticModel { bias: 20.0, ..m };
        assert!(predict(&m, &[0.0; 4]).unwrap() > 0.999);
        assert!(predict(&m, &[0.0; 3]).is_err());
    }

    #[test]
    fn gradient_zero_at_perfect_fit_and_closed_form() {
        let c = LatentConfig {
            d_c: 1,
            d_e: 1,
            ..cfg()
        };
        // f = 0.5 with zero weights; choose z so that φ_c = [something], φ_e = 0.
        let m = DiagnosticModel::zeros(&c);
        let map = FeatureMap::new(&c).unwrap();
        let z_c = vec![0.3];
        let phi_c = map.causal_block(&z_c)[0];
        let s = LatentSample {
            z_c,
            z_e: vec![0.0],
            y: 1,
        };
        let g = sft_gradient(&m, &[s], &c).unwrap();
        assert!((g.w_c[0] - (-0.5 * phi_c)).abs() < 1e-15);
        assert_eq!(g.w_e[0], 0.0);
        assert!((g.bias + 0.5).abs() < 1e-15);
        assert!(sft_gradient(&m, &[], &c).is_err());
    }

    #[test]
    fn penalty_closed_forms() {
        let c = cfg();
        let s = generate_samples(&c, 50).unwrap();
        let m = DiagnosticModel {
            w_c: vec![1.0, -2.0],
            w_e: vec![0.0; 2],
            bias: 0.0,
        };
        let (v, _) = cf_penalty(&m, &s, &c).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
        let m = DiagnosticModel { bias: -20.0, ..m };
        let (v, _) = cf_penalty(&m, &s, &c).unwrap();
        assert!(v < 1e-12);
    }

    #[test]
    fn sensitivity_zero_without_pathway() {
        let c = cfg();
        let s = generate_samples(&c, 20).unwrap();
        let m = DiagnosticModel {
            w_c: vec![0.4, 0.1],
            w_e: vec![0.0; 2],
            bias: 0.2,
        };
        assert_eq!(sensitivity(&m, &c, Factor::Spurious, &s).unwrap(), 0.0);
        let m = DiagnosticModel {
            w_c: vec![0.0; 2],
            w_e: vec![0.3, 0.0],
            bias: 0.2,
        };
        assert_eq!(sensitivity(&m, &c, Factor::Causal, &s).unwrap(), 0.0);
        assert!(sensitivity(&m, &c, Factor::Spurious, &s).unwrap() > 0.0);
    }

    #[test]
    fn scalar_spurious_sensitivity_closed_form() {
        let c = LatentConfig {
            d_c: 1,
            d_e: 1,
            ..cfg()
        };
        let s = generate_samples(&c, 30).unwrap();
        let m = DiagnosticModel {
            w_c: vec![0.7],
            w_e: vec![-0.6],
            bias: 0.1,
        };
        let map = FeatureMap::new(&c).unwrap();
        let want: f64 = s
            .iter()
            .map(|x| {
                let f = sigmoid(m.logit(&map.featurize(x).unwrap()));
                (c.kappa_e * m.w_e[0]).abs() * f * (1.0 - f)
            })
            .sum::<f64>()
            / s.len() as f64;
        let got = sensitivity(&m, &c, Factor::Spurious, &s).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn constant_model_accuracy_is_negative_rate() {
        let c = cfg();
        let s = generate_samples(&c, 400).unwrap();
        let m = DiagnosticModel::zeros(&c);
        let frac0 = s.iter().filter(|x| x.y == 0).count() as f64 / s.len() as f64;
        assert_eq!(causal_accuracy(&m, &s, &c).unwrap(), frac0);
    }

    #[test]
    fn zero_step_training_is_noop() {
        let c = cfg();
        let s = generate_samples(&c, 100).unwrap();
        let m = DiagnosticModel::zeros(&c);
        let t = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        let (out, traj) = train(&m, &s, &t, &c).unwrap();
        assert_eq!(out, m);
        assert_eq!(traj.records.len(), 1);
    }

    #[test]
    fn divergence_is_reported_with_step() {
        let c = cfg();
        let s = generate_samples(&c, 100).unwrap();
        let m = DiagnosticModel::zeros(&c);
        let t = TrainConfig {
            eta: 1e308,
            steps: 50,
            lambda_cf: 0.0,
            ..TrainConfig::default()
        };
        match train(&m, &s, &t, &c) {
            Err(Error::Numerical { step, .. }) => assert!(step >= 1),
            other => panic!("expected numerical error, got {other:?}"),
        }
    }

    #[test]
    fn minibatch_training_is_deterministic() {
        let c = cfg();
        let s = generate_samples(&c, 100).unwrap();
        let t = TrainConfig {
            steps: 30,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let a = train(&DiagnosticModel::zeros(&c), &s, &t, &c).unwrap();
        let b = train(&DiagnosticModel::zeros(&c), &s, &t, &c).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.1.records.len(), 31);
    }
}
