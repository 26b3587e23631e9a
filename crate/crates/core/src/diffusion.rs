//! Difficulty-aware diffusion over entity embeddings.
//!
//! Forward: each entity gets a linear variance schedule whose upper end
//! `β_max` grows with its difficulty. Reverse: a conditional noise
//! predictor (MLP + LayerNorm) drives ancestral sampling from pure noise;
//! the intermediate states at four fixed timesteps form the negative bands.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::curriculum::{sampling_timesteps, Band, NUM_BANDS};
use crate::error::{Error, Result};
use crate::kg::Triple;
use crate::micrograd::ops::{self, LayerNormCache};
use crate::micrograd::{time_embedding, LayerNorm, Mlp, MlpCache, Module, Tensor};
use crate::pretrain::{Scorer, SemanticTypes};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseScheduleConfig {
    pub total_steps: usize,
    pub beta_init: f64,
    pub beta_low: f64,
    pub beta_global: f64,
    pub mu: f64,
}

impl Default for NoiseScheduleConfig {
    fn default() -> Self {
        Self {
            total_steps: 200,
            beta_init: 1e-4,
            beta_low: 5e-3,
            beta_global: 5e-2,
            mu: 1.0,
        }
    }
}

impl NoiseScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.beta_init
            && self.beta_init <= self.beta_low
            && self.beta_low <= self.beta_global
            && self.beta_global < 1.0;
        if !ok {
            return Err(Error::Config(format!(
                "need 0 < beta_init <= beta_low <= beta_global < 1, got {} / {} / {}",
                self.beta_init, self.beta_low, self.beta_global
            )));
        }
        if !(self.mu > 0.0) {
            return Err(Error::Config("diffusion.mu must be > 0".into()));
        }
        if self.total_steps < 20 {
            return Err(Error::Config("diffusion.T must be at least 20".into()));
        }
        Ok(())
    }
}

/// Entity-specific noise ceiling `β_low + (β_global - β_low) ζ^μ`.
pub fn beta_max(zeta: f64, cfg: &NoiseScheduleConfig) -> f64 {
    cfg.beta_low + (cfg.beta_global - cfg.beta_low) * zeta.powf(cfg.mu)
}

/// Linear ramp `β_init + (t/T)(β_max - β_init)`.
pub fn beta_t(t: usize, beta_max: f64, cfg: &NoiseScheduleConfig) -> f64 {
    cfg.beta_init + (t as f64 / cfg.total_steps as f64) * (beta_max - cfg.beta_init)
}

/// `β_t`, `α_t = 1 - β_t` and `ᾱ_t = Π α_i` for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// `betas[i]` is `β_{i+1}`.
    pub fn from_betas(betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut acc = 1.0;
        let alpha_bars = alphas
            .iter()
            .map(|a| {
                acc *= a;
                acc
            })
            .collect();
        Self {
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn for_beta_max(beta_max: f64, cfg: &NoiseScheduleConfig) -> Self {
        Self::from_betas(
            (1..=cfg.total_steps)
                .map(|t| beta_t(t, beta_max, cfg))
                .collect(),
        )
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// Closed-form `x_t = √ᾱ_t x_0 + √(1-ᾱ_t) ε` for a given `ε`.
pub fn forward_sample_with_noise(
    x0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    noise: &[f64],
) -> Vec<f64> {
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).max(0.0).sqrt());
    x0.iter().zip(noise).map(|(x, e)| a * x + b * e).collect()
}

pub fn standard_normal<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// One draw of the closed-form forward marginal.
pub fn forward_sample<R: Rng + ?Sized>(
    x0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let noise = standard_normal(x0.len(), rng);
    forward_sample_with_noise(x0, t, schedule, &noise)
}

/// The forward Markov chain iterated step by step:
/// `x_s = √(1-β_s) x_{s-1} + √β_s ε_s` for `s = 1..=t`.
pub fn forward_chain<R: Rng + ?Sized>(
    x0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let mut x = x0.to_vec();
    for s in 1..=t {
        let beta = schedule.beta(s);
        let (a, b) = ((1.0 - beta).sqrt(), beta.sqrt());
        for v in x.iter_mut() {
            let e: f64 = StandardNormal.sample(rng);
            *v = a * *v + b * e;
        }
    }
    x
}

/// Posterior-mean parameterisation used by [`reverse_step`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReverseMode {
    /// `(x_t - β_t/√(1-ᾱ_t) ε̂) / √α_t + √β_t z`.
    #[default]
    Standard,
    /// `x_t/√α_t - (1-√α_t)/(√α_t √(1-α_t)) ε̂ + √β_t z`, coefficients as
    /// printed in the source formulation.
    PaperLiteral,
}

impl FromStr for ReverseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(ReverseMode::Standard),
            "paper-literal" | "paper_literal" => Ok(ReverseMode::PaperLiteral),
            other => Err(Error::Config(format!("unknown diffusion.mode '{other}'"))),
        }
    }
}

impl fmt::Display for ReverseMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReverseMode::Standard => "standard",
            ReverseMode::PaperLiteral => "paper-literal",
        })
    }
}

/// Coefficients `(1/√α_t, c_ε, √β_t)` of the reverse update.
fn reverse_coefficients(
    t: usize,
    schedule: &NoiseSchedule,
    mode: ReverseMode,
) -> Result<(f64, f64, f64)> {
    let (alpha, alpha_bar, beta) = (schedule.alpha(t), schedule.alpha_bar(t), schedule.beta(t));
    if !(alpha > 0.0) || alpha > 1.0 || alpha_bar > 1.0 || (alpha_bar >= 1.0 && beta > 0.0) {
        return Err(Error::Config(format!(
            "invalid reverse step at t={t}: alpha={alpha}, alpha_bar={alpha_bar}"
        )));
    }
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    // A zero-variance step leaves the state unchanged.
    let c_eps = if beta == 0.0 {
        0.0
    } else {
        match mode {
            ReverseMode::Standard => inv_sqrt_alpha * beta / (1.0 - alpha_bar).sqrt(),
            ReverseMode::PaperLiteral => {
                (1.0 - alpha.sqrt()) / (alpha.sqrt() * (1.0 - alpha).sqrt())
            }
        }
    };
    Ok((inv_sqrt_alpha, c_eps, beta.sqrt()))
}

/// One ancestral step from `x̂_t` to `x̂_{t-1}` given the predicted noise
/// and the injected standard-normal `noise`.
pub fn reverse_step(
    x_t: &[f64],
    t: usize,
    predicted_noise: &[f64],
    schedule: &NoiseSchedule,
    noise: &[f64],
    mode: ReverseMode,
) -> Result<Vec<f64>> {
    let (a, c, s) = reverse_coefficients(t, schedule, mode)?;
    Ok(x_t
        .iter()
        .zip(predicted_noise)
        .zip(noise)
        .map(|((x, e), z)| a * x - c * e + s * z)
        .collect())
}

/// Noise predictor `ε_θ(x_t, t, x_type, x_e + x_r) = LayerNorm(MLP(·))`.
///
/// The MLP input is `x_t ⊕ emb(t) ⊕ x_type ⊕ (x_e + x_r)`; an
/// unconditional denoiser sees only `x_t ⊕ emb(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    pub mlp: Mlp,
    pub norm: LayerNorm,
    dim: usize,
    time_dim: usize,
    conditional: bool,
}

/// Forward-pass record for [`Denoiser::backward`].
#[derive(Debug, Clone)]
pub struct DenoiserCache {
    mlp: MlpCache,
    norm: LayerNormCache,
}

impl Denoiser {
    /// Two hidden layers of width `hidden` with ReLU.
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        time_dim: usize,
        hidden: usize,
        conditional: bool,
        rng: &mut R,
    ) -> Self {
        let input = if conditional {
            3 * dim + time_dim
        } else {
            dim + time_dim
        };
        Self {
            mlp: Mlp::new(&[input, hidden, hidden, dim], rng),
            norm: LayerNorm::new(dim),
            dim,
            time_dim,
            conditional,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time_dim(&self) -> usize {
        self.time_dim
    }

    pub fn hidden(&self) -> usize {
        self.mlp.layers[0].output_dim()
    }

    pub fn is_conditional(&self) -> bool {
        self.conditional
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    /// Assembles one MLP input row.
    pub fn input_row(&self, x_t: &[f64], t: usize, x_type: &[f64], cond: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.input_dim());
        row.extend_from_slice(x_t);
        row.extend_from_slice(time_embedding(t, self.time_dim).data());
        if self.conditional {
            row.extend_from_slice(x_type);
            row.extend_from_slice(cond);
        }
        row
    }

    pub fn forward(&self, inputs: &Tensor) -> Result<(Tensor, DenoiserCache)> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::Shape {
                op: "denoiser",
                left: vec![inputs.rows(), self.input_dim()],
                right: inputs.shape().to_vec(),
            });
        }
        let (h, mlp) = self.mlp.forward(inputs)?;
        let (out, norm) = self.norm.forward(&h)?;
        Ok((out, DenoiserCache { mlp, norm }))
    }

    /// Accumulates parameter gradients for upstream gradient `grad`.
    pub fn backward(&mut self, cache: &DenoiserCache, grad: &Tensor) -> Result<Tensor> {
        let g = self.norm.backward(&cache.norm, grad)?;
        self.mlp.backward(&cache.mlp, &g)
    }

    pub fn predict_noise(
        &self,
        x_t: &[f64],
        t: usize,
        x_type: &[f64],
        cond: &[f64],
    ) -> Result<Vec<f64>> {
        for (name, v) in [("x_t", x_t), ("x_type", x_type), ("cond", cond)] {
            if v.len() != self.dim && (self.conditional || name == "x_t") {
                return Err(Error::Shape {
                    op: "predict_noise",
                    left: vec![self.dim],
                    right: vec![v.len()],
                });
            }
        }
        let row = Tensor::row_vector(self.input_row(x_t, t, x_type, cond));
        Ok(self.forward(&row)?.0.into_data())
    }
}

impl Module for Denoiser {
    fn params(&self) -> Vec<&Tensor> {
        let mut p = self.mlp.params();
        p.push(&self.norm.scale);
        p.push(&self.norm.shift);
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.mlp.params_mut();
        p.push(&mut self.norm.scale);
        p.push(&mut self.norm.shift);
        p
    }

    fn param_names(&self) -> Vec<String> {
        let mut n = self.mlp.param_names();
        n.push("norm.scale".into());
        n.push("norm.shift".into());
        n
    }
}

/// One training example for the noise-prediction loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSample {
    pub x0: Vec<f64>,
    pub x_type: Vec<f64>,
    pub cond: Vec<f64>,
    pub t: usize,
    pub noise: Vec<f64>,
    pub alpha_bar: f64,
}

impl DiffusionSample {
    /// Draws `t ~ U{1..T}` and `ε ~ N(0, I)`.
    pub fn draw<R: Rng + ?Sized>(
        x0: Vec<f64>,
        x_type: Vec<f64>,
        cond: Vec<f64>,
        schedule: &NoiseSchedule,
        rng: &mut R,
    ) -> Self {
        let t = rng.gen_range(1..=schedule.steps());
        let noise = standard_normal(x0.len(), rng);
        Self {
            alpha_bar: schedule.alpha_bar(t),
            x0,
            x_type,
            cond,
            t,
            noise,
        }
    }

    pub fn noisy(&self) -> Vec<f64> {
        let (a, b) = (self.alpha_bar.sqrt(), (1.0 - self.alpha_bar).max(0.0).sqrt());
        self.x0
            .iter()
            .zip(&self.noise)
            .map(|(x, e)| a * x + b * e)
            .collect()
    }
}

/// `mean_i ||ε_θ(x_t, t, x_type, cond) - ε||²`. With `accumulate`, adds the
/// gradient to the denoiser's parameters (inputs are constants).
pub fn diffusion_loss(
    denoiser: &mut Denoiser,
    batch: &[DiffusionSample],
    accumulate: bool,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let rows: Vec<Vec<f64>> = batch
        .iter()
        .map(|s| denoiser.input_row(&s.noisy(), s.t, &s.x_type, &s.cond))
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let inputs = Tensor::stack_rows(&refs)?;
    let noise_refs: Vec<&[f64]> = batch.iter().map(|s| s.noise.as_slice()).collect();
    let target = Tensor::stack_rows(&noise_refs)?;
    let (pred, cache) = denoiser.forward(&inputs)?;
    // Per-row squared norm, averaged over rows.
    let scale = pred.cols() as f64;
    let loss = ops::mse(&pred, &target)? * scale;
    if accumulate {
        let mut g = ops::mse_backward(&pred, &target);
        g.data_mut().iter_mut().for_each(|v| *v *= scale);
        denoiser.backward(&cache, &g)?;
    }
    Ok(loss)
}

/// Generated tails for one positive, band 1 first.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeBandSet {
    pub timesteps: [usize; NUM_BANDS],
    pub tails: [Vec<f64>; NUM_BANDS],
}

impl NegativeBandSet {
    pub fn tail(&self, band: Band) -> &[f64] {
        &self.tails[band.index()]
    }
}

/// Everything the reverse process needs, borrowed from the trainer.
pub struct BandGenerator<'a> {
    pub denoiser: &'a Denoiser,
    pub scorer: &'a Scorer,
    pub types: &'a SemanticTypes,
    /// `β_max` per entity.
    pub beta_max: &'a [f64],
    pub cfg: &'a NoiseScheduleConfig,
    pub mode: ReverseMode,
}

// Positives per batched reverse chain.
const GENERATION_CHUNK: usize = 64;

impl BandGenerator<'_> {
    /// Bands for `positive` using the generator from `rng`.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        positive: &Triple,
        rng: &mut R,
    ) -> Result<NegativeBandSet> {
        let schedule = NoiseSchedule::for_beta_max(self.beta_max[positive.tail], self.cfg);
        let x_type = self.types.type_of(positive.head);
        let cond = self.scorer.query(positive.head, positive.relation);
        let targets = sampling_timesteps(self.cfg.total_steps);
        let mut tails: [Vec<f64>; NUM_BANDS] = Default::default();
        let mut x = standard_normal(self.scorer.dim(), rng);
        for t in (targets[0] + 1..=self.cfg.total_steps).rev() {
            let eps = self.denoiser.predict_noise(&x, t, x_type, &cond)?;
            let z = standard_normal(x.len(), rng);
            x = reverse_step(&x, t, &eps, &schedule, &z, self.mode)?;
            if let Some(k) = targets.iter().position(|&s| s == t - 1) {
                tails[k] = x.clone();
            }
        }
        Ok(NegativeBandSet {
            timesteps: targets,
            tails,
        })
    }

    /// Bands for many positives; positive `i` draws from
    /// `rng::stream(seed, [TAG_BANDS, epoch, ids[i]])`, so the result does
    /// not depend on chunking or thread count.
    pub fn generate_many(
        &self,
        positives: &[Triple],
        ids: &[u64],
        seed: u64,
        epoch: u64,
    ) -> Result<Vec<NegativeBandSet>> {
        let items: Vec<(Triple, u64)> = positives.iter().copied().zip(ids.iter().copied()).collect();
        let chunks: Vec<Result<Vec<NegativeBandSet>>> = items
            .par_chunks(GENERATION_CHUNK)
            .map(|chunk| self.generate_chunk(chunk, seed, epoch))
            .collect();
        let mut out = Vec::with_capacity(positives.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Batched reverse chains. The static part of the first layer (type and
    /// condition inputs, bias) is computed once per chain.
    fn generate_chunk(
        &self,
        chunk: &[(Triple, u64)],
        seed: u64,
        epoch: u64,
    ) -> Result<Vec<NegativeBandSet>> {
        let d = self.scorer.dim();
        let td = self.denoiser.time_dim();
        let b = chunk.len();
        let first = &self.denoiser.mlp.layers[0];
        let hidden = first.output_dim();
        let w = first.weight.data();
        let w_rows = |from: usize, to: usize| {
            Tensor::from_vec(to - from, hidden, w[from * hidden..to * hidden].to_vec())
        };
        let w_x = w_rows(0, d)?;
        let w_t = w_rows(d, d + td)?;

        let mut rngs: Vec<rng::Rng> = chunk
            .iter()
            .map(|(_, id)| rng::stream(seed, &[rng::TAG_BANDS, epoch, *id]))
            .collect();
        let schedules: Vec<NoiseSchedule> = chunk
            .iter()
            .map(|(p, _)| NoiseSchedule::for_beta_max(self.beta_max[p.tail], self.cfg))
            .collect();

        let mut static_part = Tensor::zeros(b, hidden);
        for i in 0..b {
            static_part.row_mut(i).copy_from_slice(first.bias.data());
        }
        if self.denoiser.is_conditional() {
            let w_c = w_rows(d + td, 3 * d + td)?;
            let mut cond_in = Tensor::zeros(b, 2 * d);
            for (i, (p, _)) in chunk.iter().enumerate() {
                let row = cond_in.row_mut(i);
                row[..d].copy_from_slice(self.types.type_of(p.head));
                row[d..].copy_from_slice(&self.scorer.query(p.head, p.relation));
            }
            static_part = ops::add(&static_part, &ops::matmul(&cond_in, &w_c)?)?;
        }

        let mut x = Tensor::zeros(b, d);
        for (i, r) in rngs.iter_mut().enumerate() {
            x.row_mut(i).copy_from_slice(&standard_normal(d, r));
        }
        let targets = sampling_timesteps(self.cfg.total_steps);
        let mut out: Vec<[Vec<f64>; NUM_BANDS]> = vec![Default::default(); b];
        let coeffs_for = |t: usize| -> Result<Vec<(f64, f64, f64)>> {
            schedules
                .iter()
                .map(|s| reverse_coefficients(t, s, self.mode))
                .collect()
        };
        for t in (targets[0] + 1..=self.cfg.total_steps).rev() {
            let t_part = ops::matmul(&time_embedding(t, td), &w_t)?;
            let mut h = ops::add(&ops::matmul(&x, &w_x)?, &static_part)?;
            h = ops::relu(&ops::add(&h, &t_part)?);
            let layers = &self.denoiser.mlp.layers;
            for (li, layer) in layers.iter().enumerate().skip(1) {
                h = layer.forward(&h)?;
                if li + 1 < layers.len() {
                    h = ops::relu(&h);
                }
            }
            let (eps, _) = self.denoiser.norm.forward(&h)?;
            let coeffs = coeffs_for(t)?;
            for i in 0..b {
                let (a, c, s) = coeffs[i];
                let z = standard_normal(d, &mut rngs[i]);
                let e = eps.row(i).to_vec();
                for ((v, e), z) in x.row_mut(i).iter_mut().zip(e).zip(z) {
                    *v = a * *v - c * e + s * z;
                }
            }
            x.check_finite("reverse chain")?;
            if let Some(k) = targets.iter().position(|&s| s == t - 1) {
                for (i, o) in out.iter_mut().enumerate() {
                    o[k] = x.row(i).to_vec();
                }
            }
        }
        Ok(out
            .into_iter()
            .map(|tails| NegativeBandSet {
                timesteps: targets,
                tails,
            })
            .collect())
    }
}
