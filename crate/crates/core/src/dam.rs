//! Entity difficulty scoring.
//!
//! Each entity is described by its semantic embedding concatenated with its
//! six normalized structural features; a two-layer MLP with a sigmoid head
//! maps that vector to a difficulty in `(0, 1)`.
//!
//! The MLP is fitted by regression onto a rank-based proxy: the mean
//! filtered rank percentile of the entity's training triples under the
//! pretrained scorer. Scores are frozen once fitted.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::eval;
use crate::graph::{EntityStructFeatures, NUM_FEATURES};
use crate::kg::KnowledgeGraph;
use crate::micrograd::{ops, AdamW, Mlp, Module, Tensor};
use crate::pretrain::Scorer;

pub const DEFAULT_HIDDEN: usize = 64;

/// Rows of `[e_sem ; e_str]`, one per entity.
pub fn difficulty_inputs(scorer: &Scorer, features: &EntityStructFeatures) -> Result<Tensor> {
    let n = scorer.entities.rows();
    if features.len() != n {
        return Err(Error::Shape {
            op: "difficulty_inputs",
            left: vec![n],
            right: vec![features.len()],
        });
    }
    let norm = features.normalized();
    let d = scorer.dim();
    let mut out = Tensor::zeros(n, d + NUM_FEATURES);
    for e in 0..n {
        let row = out.row_mut(e);
        row[..d].copy_from_slice(scorer.entity(e));
        row[d..].copy_from_slice(&norm.row(e));
    }
    Ok(out)
}

/// `ζ(e) = σ(W₂ · ReLU(W₁ e + b₁) + b₂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DifficultyModel {
    pub mlp: Mlp,
}

impl DifficultyModel {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            mlp: Mlp::new(&[input, hidden, 1], rng),
        }
    }

    pub fn zeroed(input: usize, hidden: usize) -> Self {
        Self {
            mlp: Mlp::zeroed(&[input, hidden, 1]),
        }
    }

    /// Difficulty for each input row.
    pub fn difficulty(&self, inputs: &Tensor) -> Result<Vec<f64>> {
        let (logits, _) = self.mlp.forward(inputs)?;
        Ok(ops::sigmoid(&logits).into_data())
    }

    /// Mean squared error against `targets`, accumulating parameter
    /// gradients.
    pub fn mse_step(&mut self, inputs: &Tensor, targets: &[f64]) -> Result<f64> {
        let (logits, cache) = self.mlp.forward(inputs)?;
        let zeta = ops::sigmoid(&logits);
        let target = Tensor::from_vec(targets.len(), 1, targets.to_vec())?;
        let loss = ops::mse(&zeta, &target)?;
        let g = ops::mse_backward(&zeta, &target);
        let g = ops::sigmoid_backward(&zeta, &g);
        self.mlp.backward(&cache, &g)?;
        Ok(loss)
    }
}

impl Module for DifficultyModel {
    fn params(&self) -> Vec<&Tensor> {
        self.mlp.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.mlp.params_mut()
    }

    fn param_names(&self) -> Vec<String> {
        self.mlp.param_names()
    }
}

/// `(rank - 1) / (|candidates| - 1)`, 0 when there is a single candidate.
pub fn rank_percentile(rank: f64, candidates: usize) -> f64 {
    if candidates <= 1 {
        0.0
    } else {
        (rank - 1.0) / (candidates - 1) as f64
    }
}

/// Proxy difficulty per entity: mean over its incident training triples of
/// the tail- and head-prediction rank percentiles. Entities without
/// training triples get 0.5.
pub fn proxy_targets(kg: &KnowledgeGraph, scorer: &Scorer) -> Vec<f64> {
    let n = kg.num_entities();
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for t in kg.base_train() {
        let tail = eval::tail_rank(kg, scorer, t);
        let head = eval::head_rank(kg, scorer, t);
        let p = 0.5
            * (rank_percentile(tail.rank, tail.candidates)
                + rank_percentile(head.rank, head.candidates));
        for e in [t.head, t.tail] {
            sum[e] += p;
            count[e] += 1;
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { 0.5 } else { s / c as f64 })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DamConfig {
    pub hidden: usize,
    pub steps: usize,
    pub lr: f64,
}

impl Default for DamConfig {
    fn default() -> Self {
        Self {
            hidden: DEFAULT_HIDDEN,
            steps: 300,
            lr: 1e-2,
        }
    }
}

/// Full-batch MSE regression of the MLP onto `targets`.
pub fn fit_dam<R: Rng + ?Sized>(
    inputs: &Tensor,
    targets: &[f64],
    cfg: &DamConfig,
    rng: &mut R,
) -> Result<DifficultyModel> {
    if inputs.rows() != targets.len() {
        return Err(Error::Shape {
            op: "fit_dam",
            left: inputs.shape().to_vec(),
            right: vec![targets.len()],
        });
    }
    let mut model = DifficultyModel::new(inputs.cols(), cfg.hidden, rng);
    let mut opt = AdamW::new(cfg.lr, 0.0);
    for _ in 0..cfg.steps {
        model.zero_grad();
        model.mse_step(inputs, targets)?;
        opt.step(&mut model.params_mut())?;
    }
    Ok(model)
}

/// Writes `entity_id,zeta,proxy_target`.
pub fn write_difficulty_csv(path: &Path, zeta: &[f64], proxy: &[f64]) -> Result<()> {
    let mut out = String::from("entity_id,zeta,proxy_target\n");
    for (e, (z, p)) in zeta.iter().zip(proxy).enumerate() {
        out.push_str(&format!("{e},{z},{p}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
