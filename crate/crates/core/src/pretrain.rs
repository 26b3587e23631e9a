//! Translational distance scorer, its uniform-negative pretraining loop and
//! K-means typing of the pretrained entity embeddings.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::curriculum;
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::micrograd::{AdamW, Module, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" | "L1" | "1" => Ok(Norm::L1),
            "l2" | "L2" | "2" => Ok(Norm::L2),
            other => Err(Error::Config(format!("unknown norm '{other}'"))),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

/// Tail argument of a score: a real entity or a free embedding vector.
#[derive(Debug, Clone, Copy)]
pub enum Tail<'a> {
    Entity(EntityId),
    Vector(&'a [f64]),
}

/// `S(h, r, t) = ||x_h + x_r - x_t||_p`; lower is more plausible.
#[derive(Debug, Clone, PartialEq)]
pub struct Scorer {
    pub entities: Tensor,
    pub relations: Tensor,
    pub norm: Norm,
}

impl Scorer {
    pub fn new<R: Rng + ?Sized>(
        num_entities: usize,
        num_relations: usize,
        dim: usize,
        norm: Norm,
        rng: &mut R,
    ) -> Self {
        Self {
            entities: Tensor::xavier_uniform(num_entities, dim, rng),
            relations: Tensor::xavier_uniform(num_relations, dim, rng),
            norm,
        }
    }

    pub fn dim(&self) -> usize {
        self.entities.cols()
    }

    pub fn entity(&self, e: EntityId) -> &[f64] {
        self.entities.row(e)
    }

    pub fn relation(&self, r: RelationId) -> &[f64] {
        self.relations.row(r)
    }

    fn tail_vec<'a>(&'a self, tail: Tail<'a>) -> &'a [f64] {
        match tail {
            Tail::Entity(e) => self.entity(e),
            Tail::Vector(v) => v,
        }
    }

    /// Distance between `query = x_h + x_r` and `tail`.
    pub fn distance(&self, query: &[f64], tail: &[f64]) -> f64 {
        match self.norm {
            Norm::L1 => query.iter().zip(tail).map(|(q, t)| (q - t).abs()).sum(),
            Norm::L2 => query
                .iter()
                .zip(tail)
                .map(|(q, t)| (q - t).powi(2))
                .sum::<f64>()
                .sqrt(),
        }
    }

    pub fn query(&self, head: EntityId, relation: RelationId) -> Vec<f64> {
        self.entity(head)
            .iter()
            .zip(self.relation(relation))
            .map(|(h, r)| h + r)
            .collect()
    }

    pub fn score(&self, head: EntityId, relation: RelationId, tail: Tail<'_>) -> f64 {
        let q = self.query(head, relation);
        self.distance(&q, self.tail_vec(tail))
    }

    pub fn score_triple(&self, t: &Triple) -> f64 {
        self.score(t.head, t.relation, Tail::Entity(t.tail))
    }

    /// Scores of `(head, relation, e)` for every entity `e`.
    pub fn score_all_tails(&self, head: EntityId, relation: RelationId) -> Vec<f64> {
        let q = self.query(head, relation);
        (0..self.entities.rows())
            .map(|e| self.distance(&q, self.entity(e)))
            .collect()
    }

    /// Adds `upstream * dS/dθ` to the embedding gradients. A vector tail is
    /// treated as a constant.
    pub fn backward_score(
        &mut self,
        head: EntityId,
        relation: RelationId,
        tail: Tail<'_>,
        upstream: f64,
    ) {
        if upstream == 0.0 {
            return;
        }
        let dim = self.dim();
        let q = self.query(head, relation);
        let t = self.tail_vec(tail).to_vec();
        let residual: Vec<f64> = q.iter().zip(&t).map(|(a, b)| a - b).collect();
        let g: Vec<f64> = match self.norm {
            Norm::L1 => residual
                .iter()
                .map(|&x| upstream * if x > 0.0 { 1.0 } else if x < 0.0 { -1.0 } else { 0.0 })
                .collect(),
            Norm::L2 => {
                let s = residual.iter().map(|x| x * x).sum::<f64>().sqrt();
                if s == 0.0 {
                    vec![0.0; dim]
                } else {
                    residual.iter().map(|x| upstream * x / s).collect()
                }
            }
        };
        let eg = self.entities.grad_mut();
        for (o, v) in eg[head * dim..(head + 1) * dim].iter_mut().zip(&g) {
            *o += v;
        }
        if let Tail::Entity(e) = tail {
            for (o, v) in eg[e * dim..(e + 1) * dim].iter_mut().zip(&g) {
                *o -= v;
            }
        }
        let rg = self.relations.grad_mut();
        for (o, v) in rg[relation * dim..(relation + 1) * dim].iter_mut().zip(&g) {
            *o += v;
        }
    }
}

impl Module for Scorer {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.entities, &self.relations]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.entities, &mut self.relations]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["entities".into(), "relations".into()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainConfig {
    pub dim: usize,
    pub norm: Norm,
    pub epochs: usize,
    pub negatives: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub margin: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            dim: 200,
            norm: Norm::L1,
            epochs: 200,
            negatives: 16,
            batch_size: 256,
            lr: 1e-3,
            weight_decay: 0.0,
            margin: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pretrained {
    pub scorer: Scorer,
    pub epochs_completed: usize,
    /// Mean loss per completed epoch.
    pub losses: Vec<f64>,
    /// Set when a non-finite loss stopped training; `scorer` then holds
    /// the last finite state.
    pub diverged: bool,
}

/// Trains a fresh scorer with the fixed-margin uniform-negative loss.
pub fn pretrain<R: Rng + ?Sized>(
    kg: &KnowledgeGraph,
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<Pretrained> {
    if cfg.dim == 0 || cfg.batch_size == 0 {
        return Err(Error::Config("pretrain dim and batch size must be positive".into()));
    }
    let mut scorer = Scorer::new(kg.num_entities(), kg.num_relations(), cfg.dim, cfg.norm, rng);
    let mut opt = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut order: Vec<usize> = (0..kg.train().len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut last_good = scorer.clone();
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        let mut failed = false;
        for chunk in order.chunks(cfg.batch_size) {
            let positives: Vec<Triple> = chunk.iter().map(|&i| kg.train()[i]).collect();
            let mut negatives = Vec::with_capacity(positives.len() * cfg.negatives);
            for p in &positives {
                for _ in 0..cfg.negatives {
                    let c = kg.corrupt_uniform(p, rng);
                    if !c.degenerate {
                        negatives.push(c.triple);
                    }
                }
            }
            scorer.zero_grad();
            let loss = curriculum::kgc2_on_scorer(&mut scorer, &positives, &negatives, cfg.margin);
            if !loss.is_finite() {
                failed = true;
                break;
            }
            if opt.step(&mut scorer.params_mut()).is_err() {
                failed = true;
                break;
            }
            total += loss;
            batches += 1;
        }
        if failed {
            log::error!("pretraining diverged in epoch {epoch}; keeping last finite state");
            return Ok(Pretrained {
                scorer: last_good,
                epochs_completed: epoch,
                losses,
                diverged: true,
            });
        }
        losses.push(total / batches.max(1) as f64);
        last_good.clone_from(&scorer);
    }
    Ok(Pretrained {
        scorer,
        epochs_completed: cfg.epochs,
        losses,
        diverged: false,
    })
}

/// K-means clustering of the entity embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticTypes {
    pub centroids: Tensor,
    pub assignment: Vec<usize>,
    /// Inertia after every assignment step.
    pub inertia: Vec<f64>,
    pub iterations: usize,
}

impl SemanticTypes {
    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    /// Type embedding of `entity` (its cluster centroid).
    pub fn type_of(&self, entity: EntityId) -> &[f64] {
        self.centroids.row(self.assignment[entity])
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = String::from("entity_id,cluster_id\n");
        for (e, c) in self.assignment.iter().enumerate() {
            out.push_str(&format!("{e},{c}\n"));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// `min(50, ceil(sqrt(n)))`.
pub fn default_k(num_entities: usize) -> usize {
    ((num_entities as f64).sqrt().ceil() as usize).clamp(1, 50)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(point: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// Lloyd's algorithm with K-means++ seeding. Stops at an assignment
/// fixpoint or after `max_iter` update steps. Empty clusters are reseeded
/// at the point farthest from its centroid.
pub fn kmeans<R: Rng + ?Sized>(
    points: &Tensor,
    k: usize,
    max_iter: usize,
    rng: &mut R,
) -> Result<SemanticTypes> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::Config(format!("kmeans needs 1 <= K <= {n}, got {k}")));
    }
    let dim = points.cols();

    // K-means++ seeding.
    let mut centroids = Tensor::zeros(k, dim);
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    centroids.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), points.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            // Guard against round-off landing on a zero-weight tail.
            if d2[idx] == 0.0 {
                idx = (0..n).rev().find(|&i| d2[i] > 0.0).unwrap_or(idx);
            }
            idx
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        centroids.row_mut(c).copy_from_slice(points.row(pick));
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(points.row(i), points.row(pick)));
        }
    }

    let mut assignment = vec![usize::MAX; n];
    let mut inertia = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        let mut total = 0.0;
        let mut dists = vec![0.0; n];
        for i in 0..n {
            let (c, d) = nearest(points.row(i), &centroids);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
            dists[i] = d;
            total += d;
        }
        inertia.push(total);
        if !changed || iterations >= max_iter {
            break;
        }
        iterations += 1;

        let mut sums = Tensor::zeros(k, dim);
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignment[i];
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .expect("n >= 1");
                centroids.row_mut(c).copy_from_slice(points.row(far));
                dists[far] = 0.0;
            }
        }
    }
    Ok(SemanticTypes {
        centroids,
        assignment,
        inertia,
        iterations,
    })
}
