//! End-to-end training: pretraining, structural features, difficulty
//! scores, then the joint loop over embeddings and denoiser.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::checkpoint::Checkpoint;
use crate::config::Config;
use crate::curriculum::{
    self, Band, BandNegative, CurriculumConfig, CurriculumState, NUM_BANDS,
};
use crate::dam::{self, DamConfig};
use crate::diffusion::{
    beta_max, diffusion_loss, BandGenerator, Denoiser, DiffusionSample, NegativeBandSet, NoiseSchedule,
    NoiseScheduleConfig, ReverseMode,
};
use crate::error::{Error, Result};
use crate::eval;
use crate::graph::EntityStructFeatures;
use crate::kg::{KnowledgeGraph, Triple};
use crate::micrograd::{AdamW, Module, Tensor};
use crate::pretrain::{self, default_k, kmeans, Norm, PretrainConfig, Scorer, SemanticTypes};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Ablation {
    pub dfs_off: bool,
    pub ccd_off: bool,
    pub dtm_off: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationSwitch {
    Full,
    DfsOff,
    CcdOff,
    DtmOff,
}

impl AblationSwitch {
    pub const ALL: [AblationSwitch; 4] = [
        AblationSwitch::Full,
        AblationSwitch::DfsOff,
        AblationSwitch::CcdOff,
        AblationSwitch::DtmOff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationSwitch::Full => "full",
            AblationSwitch::DfsOff => "dfs_off",
            AblationSwitch::CcdOff => "ccd_off",
            AblationSwitch::DtmOff => "dtm_off",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub inverse: bool,
    pub pretrain: PretrainConfig,
    /// 0 picks [`default_k`].
    pub kmeans_k: usize,
    pub kmeans_max_iter: usize,
    pub dam: DamConfig,
    pub noise: NoiseScheduleConfig,
    pub mode: ReverseMode,
    pub denoiser_hidden: usize,
    pub time_dim: usize,
    pub diffusion_lr: f64,
    /// `curriculum.max_epochs` is the epoch cap.
    pub curriculum: CurriculumConfig,
    pub lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub n_rand: usize,
    pub cache_refresh: usize,
    /// 0 disables early stopping.
    pub patience: usize,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub max_restarts: usize,
    /// Without bands the loop reduces to uniform negative sampling.
    pub use_bands: bool,
    pub ablation: Ablation,
}

impl TrainConfig {
    pub fn from_config(c: &Config) -> Result<Self> {
        let dim: usize = c.parse("model.dim")?;
        let norm: Norm = c.get("model.norm")?.parse()?;
        let batch_size: usize = c.parse("train.batch_size")?;
        let or = |v: usize, d: usize| if v == 0 { d } else { v };
        let cfg = Self {
            seed: c.parse("seed")?,
            inverse: c.bool("inverse")?,
            pretrain: PretrainConfig {
                dim,
                norm,
                epochs: c.parse("pretrain.epochs")?,
                negatives: c.parse("pretrain.negatives")?,
                batch_size: c.parse("pretrain.batch_size")?,
                lr: c.parse("pretrain.lr")?,
                weight_decay: c.parse("train.weight_decay")?,
                margin: c.parse("pretrain.margin")?,
            },
            kmeans_k: c.parse("kmeans.k")?,
            kmeans_max_iter: c.parse("kmeans.max_iter")?,
            dam: DamConfig {
                hidden: c.parse("dam.hidden")?,
                steps: c.parse("dam.steps")?,
                lr: c.parse("dam.lr")?,
            },
            noise: NoiseScheduleConfig {
                total_steps: c.parse("diffusion.T")?,
                beta_init: c.parse("diffusion.beta_init")?,
                beta_low: c.parse("diffusion.beta_low")?,
                beta_global: c.parse("diffusion.beta_global")?,
                mu: c.parse("diffusion.mu")?,
            },
            mode: c.get("diffusion.mode")?.parse()?,
            denoiser_hidden: or(c.parse("diffusion.hidden")?, 2 * dim),
            time_dim: or(c.parse("diffusion.time_dim")?, dim),
            diffusion_lr: c.parse("diffusion.lr")?,
            curriculum: CurriculumConfig {
                lambda: c.parse("curriculum.lambda")?,
                zeta_exp: c.parse("curriculum.zeta_exp")?,
                gamma_base: c.parse("curriculum.gamma_base")?,
                beta_margin: c.parse("curriculum.beta_margin")?,
                eta: c.parse("curriculum.eta")?,
                max_epochs: c.parse("train.epochs")?,
                ..CurriculumConfig::default()
            },
            lr: c.parse("train.lr")?,
            batch_size,
            weight_decay: c.parse("train.weight_decay")?,
            n_rand: c.parse("train.n_rand")?,
            cache_refresh: c.parse("train.cache_refresh")?,
            patience: c.parse("train.patience")?,
            eval_every: c.parse("train.eval_every")?,
            checkpoint_every: c.parse("train.checkpoint_every")?,
            max_restarts: c.parse("train.max_restarts")?,
            use_bands: c.bool("train.use_bands")?,
            ablation: Ablation {
                dfs_off: c.bool("ablation.dfs_off")?,
                ccd_off: c.bool("ablation.ccd_off")?,
                dtm_off: c.bool("ablation.dtm_off")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.curriculum.validate()?;
        let positive = [
            ("model.dim", self.pretrain.dim),
            ("train.batch_size", self.batch_size),
            ("pretrain.batch_size", self.pretrain.batch_size),
            ("train.cache_refresh", self.cache_refresh),
            ("train.eval_every", self.eval_every),
            ("train.checkpoint_every", self.checkpoint_every),
            ("diffusion.hidden", self.denoiser_hidden),
            ("diffusion.time_dim", self.time_dim),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        for (k, v) in [
            ("train.lr", self.lr),
            ("pretrain.lr", self.pretrain.lr),
            ("diffusion.lr", self.diffusion_lr),
            ("dam.lr", self.dam.lr),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("train.weight_decay must be >= 0".into()));
        }
        Ok(())
    }

    pub fn epochs(&self) -> usize {
        self.curriculum.max_epochs
    }
}

/// Copy of `cfg` with one component switched off.
pub fn ablation_variant(cfg: &TrainConfig, switch: AblationSwitch) -> TrainConfig {
    let mut out = cfg.clone();
    match switch {
        AblationSwitch::Full => {}
        AblationSwitch::DfsOff => out.ablation.dfs_off = true,
        AblationSwitch::CcdOff => out.ablation.ccd_off = true,
        AblationSwitch::DtmOff => out.ablation.dtm_off = true,
    }
    out
}

/// `β_max` per entity; `dfs_off` pins every entity to `β_global`.
pub fn entity_beta_max(zeta: &[f64], noise: &NoiseScheduleConfig, dfs_off: bool) -> Vec<f64> {
    zeta.iter()
        .map(|&z| if dfs_off { noise.beta_global } else { beta_max(z, noise) })
        .collect()
}

/// Everything computed before the main loop.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub features: EntityStructFeatures,
    pub scorer: Scorer,
    pub types: SemanticTypes,
    pub zeta: Vec<f64>,
    pub proxy: Vec<f64>,
    pub pretrain_losses: Vec<f64>,
}

impl Prepared {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = scorer_checkpoint(&self.scorer);
        ck.insert("centroids", &self.types.centroids);
        let assignment: Vec<f64> = self.types.assignment.iter().map(|&a| a as f64).collect();
        ck.insert("assignment", &column(&assignment));
        ck.insert("zeta", &column(&self.zeta));
        ck.insert("proxy", &column(&self.proxy));
        for (name, col) in crate::graph::FEATURE_NAMES.iter().zip(self.features.columns()) {
            ck.insert(format!("feature.{name}"), &column(col));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let scorer = scorer_from_checkpoint(ck)?;
        let types = types_from_checkpoint(ck, scorer.entities.rows())?;
        let col = |name: &str| -> Result<Vec<f64>> {
            let t = ck.get(name)?;
            if t.rows() != scorer.entities.rows() {
                return Err(Error::Checkpoint(format!("'{name}' has the wrong length")));
            }
            Ok(t.data().to_vec())
        };
        let [bc, cc, ccoef, tc, adn, pr] = [
            col("feature.bc")?,
            col("feature.cc")?,
            col("feature.ccoef")?,
            col("feature.tc")?,
            col("feature.adn")?,
            col("feature.pr")?,
        ];
        Ok(Self {
            features: EntityStructFeatures {
                bc,
                cc,
                ccoef,
                tc,
                adn,
                pr,
            },
            zeta: col("zeta")?,
            proxy: col("proxy")?,
            scorer,
            types,
            pretrain_losses: Vec::new(),
        })
    }
}

/// Embeddings and norm only.
pub fn scorer_checkpoint(scorer: &Scorer) -> Checkpoint {
    let mut ck = Checkpoint::new(vec![
        scorer.entities.rows(),
        scorer.relations.rows(),
        scorer.dim(),
    ]);
    ck.insert("entities", &scorer.entities);
    ck.insert("relations", &scorer.relations);
    let norm = match scorer.norm {
        Norm::L1 => 1.0,
        Norm::L2 => 2.0,
    };
    ck.insert("norm", &Tensor::row_vector(vec![norm]));
    ck
}

pub fn scorer_from_checkpoint(ck: &Checkpoint) -> Result<Scorer> {
    let entities = ck.get("entities")?.clone();
    let relations = ck.get("relations")?.clone();
    if entities.cols() != relations.cols() {
        return Err(Error::Checkpoint("entity and relation widths differ".into()));
    }
    let norm = match ck.get("norm")?.data() {
        [v] if *v == 1.0 => Norm::L1,
        [v] if *v == 2.0 => Norm::L2,
        _ => return Err(Error::Checkpoint("bad norm array".into())),
    };
    Ok(Scorer {
        entities,
        relations,
        norm,
    })
}

fn types_from_checkpoint(ck: &Checkpoint, num_entities: usize) -> Result<SemanticTypes> {
    let centroids = ck.get("centroids")?.clone();
    let assignment: Vec<usize> = ck
        .get("assignment")?
        .data()
        .iter()
        .map(|&a| a as usize)
        .collect();
    if assignment.len() != num_entities || assignment.iter().any(|&a| a >= centroids.rows()) {
        return Err(Error::Checkpoint("cluster assignment out of range".into()));
    }
    Ok(SemanticTypes {
        centroids,
        assignment,
        inertia: Vec::new(),
        iterations: 0,
    })
}

pub fn run_pretrain(kg: &KnowledgeGraph, cfg: &TrainConfig) -> Result<pretrain::Pretrained> {
    let mut r = rng::stream(cfg.seed, &[rng::TAG_PRETRAIN]);
    let p = pretrain::pretrain(kg, &cfg.pretrain, &mut r)?;
    if p.diverged {
        return Err(Error::Diverged(format!(
            "pretraining diverged after {} epochs",
            p.epochs_completed
        )));
    }
    Ok(p)
}

pub fn fit_types(scorer: &Scorer, cfg: &TrainConfig) -> Result<SemanticTypes> {
    let k = if cfg.kmeans_k == 0 {
        default_k(scorer.entities.rows())
    } else {
        cfg.kmeans_k
    };
    let mut r = rng::stream(cfg.seed, &[rng::TAG_KMEANS]);
    kmeans(&scorer.entities, k, cfg.kmeans_max_iter, &mut r)
}

/// Fits the difficulty model and returns `(ζ, proxy targets)`.
pub fn fit_difficulty(
    kg: &KnowledgeGraph,
    scorer: &Scorer,
    features: &EntityStructFeatures,
    cfg: &TrainConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let inputs = dam::difficulty_inputs(scorer, features)?;
    let proxy = dam::proxy_targets(kg, scorer);
    let mut r = rng::stream(cfg.seed, &[rng::TAG_DAM]);
    let model = dam::fit_dam(&inputs, &proxy, &cfg.dam, &mut r)?;
    let zeta = model.difficulty(&inputs)?;
    Ok((zeta, proxy))
}

pub fn prepare(kg: &KnowledgeGraph, cfg: &TrainConfig) -> Result<Prepared> {
    log::info!("computing structural features");
    let features = EntityStructFeatures::compute(kg);
    log::info!("pretraining for {} epochs", cfg.pretrain.epochs);
    let pre = run_pretrain(kg, cfg)?;
    let types = fit_types(&pre.scorer, cfg)?;
    log::info!("fitting difficulty model");
    let (zeta, proxy) = fit_difficulty(kg, &pre.scorer, &features, cfg)?;
    Ok(Prepared {
        features,
        scorer: pre.scorer,
        types,
        zeta,
        proxy,
        pretrain_losses: pre.losses,
    })
}

/// Trainable and frozen state needed to score triples and generate bands.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub scorer: Scorer,
    pub denoiser: Denoiser,
    pub types: SemanticTypes,
    pub zeta: Vec<f64>,
}

fn column(values: &[f64]) -> Tensor {
    Tensor::from_vec(values.len(), 1, values.to_vec()).expect("column shape")
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = scorer_checkpoint(&self.scorer);
        ck.insert("centroids", &self.types.centroids);
        let assignment: Vec<f64> = self.types.assignment.iter().map(|&a| a as f64).collect();
        ck.insert("assignment", &column(&assignment));
        ck.insert("zeta", &column(&self.zeta));
        ck.insert(
            "denoiser.meta",
            &Tensor::row_vector(vec![
                self.denoiser.hidden() as f64,
                self.denoiser.time_dim() as f64,
                if self.denoiser.is_conditional() { 1.0 } else { 0.0 },
            ]),
        );
        for (name, p) in self.denoiser.param_names().iter().zip(self.denoiser.params()) {
            ck.insert(format!("denoiser.{name}"), p);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let scorer = scorer_from_checkpoint(ck)?;
        let dim = scorer.dim();
        let types = types_from_checkpoint(ck, scorer.entities.rows())?;
        let zeta = ck.get("zeta")?.data().to_vec();
        let meta = ck.get("denoiser.meta")?.data().to_vec();
        if meta.len() != 3 {
            return Err(Error::Checkpoint("bad denoiser.meta".into()));
        }
        let mut denoiser = Denoiser::new(
            dim,
            meta[1] as usize,
            meta[0] as usize,
            meta[2] == 1.0,
            &mut rng::stream(0, &[]),
        );
        let names = denoiser.param_names();
        for (name, p) in names.iter().zip(denoiser.params_mut()) {
            let src = ck.get(&format!("denoiser.{name}"))?;
            if src.shape() != p.shape() {
                return Err(Error::Checkpoint(format!("shape mismatch for denoiser.{name}")));
            }
            p.data_mut().copy_from_slice(src.data());
        }
        if zeta.len() != scorer.entities.rows() {
            return Err(Error::Checkpoint("zeta has the wrong length".into()));
        }
        Ok(Self {
            scorer,
            denoiser,
            types,
            zeta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn band_generator<'a>(
        &'a self,
        beta_max: &'a [f64],
        cfg: &'a TrainConfig,
    ) -> BandGenerator<'a> {
        BandGenerator {
            denoiser: &self.denoiser,
            scorer: &self.scorer,
            types: &self.types,
            beta_max,
            cfg: &cfg.noise,
            mode: cfg.mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub tau: f64,
    pub weights: [f64; NUM_BANDS],
    pub margins: [f64; NUM_BANDS],
    pub l_kgc1: f64,
    pub l_kgc2: f64,
    pub l_diff: f64,
    pub total: f64,
    pub valid_mrr: Option<f64>,
}

pub const LOG_HEADER: &str =
    "epoch,tau,w1,w2,w3,w4,gamma_1,gamma_2,gamma_3,gamma_4,l_kgc1,l_kgc2,l_diff,total";

pub fn log_csv(rows: &[EpochLog]) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for r in rows {
        let _ = write!(out, "{},{}", r.epoch, r.tau);
        for w in r.weights {
            let _ = write!(out, ",{w}");
        }
        for g in r.margins {
            let _ = write!(out, ",{g}");
        }
        let _ = writeln!(out, ",{},{},{},{}", r.l_kgc1, r.l_kgc2, r.l_diff, r.total);
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation state, or the final state without a validation split.
    pub model: Model,
    pub final_model: Model,
    pub log: Vec<EpochLog>,
    pub best_valid_mrr: Option<f64>,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub restarts: usize,
}

struct Snapshot {
    epoch: usize,
    scorer: Scorer,
    denoiser: Denoiser,
}

/// Loss sums over one epoch.
#[derive(Default)]
struct EpochLosses {
    kgc1: f64,
    kgc2: f64,
    diff: f64,
    batches: usize,
}

/// The main loop. Writes checkpoints and the epoch log under `out` when
/// given.
pub fn train(
    kg: &KnowledgeGraph,
    cfg: &TrainConfig,
    prepared: &Prepared,
    out: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if kg.train().is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let dim = prepared.scorer.dim();
    let conditional = !cfg.ablation.ccd_off;
    let mut model = Model {
        scorer: prepared.scorer.clone(),
        denoiser: Denoiser::new(
            dim,
            cfg.time_dim,
            cfg.denoiser_hidden,
            conditional,
            &mut rng::stream(cfg.seed, &[rng::TAG_DENOISER_INIT]),
        ),
        types: prepared.types.clone(),
        zeta: prepared.zeta.clone(),
    };
    let bmax = entity_beta_max(&model.zeta, &cfg.noise, cfg.ablation.dfs_off);
    let schedules: Vec<NoiseSchedule> = bmax
        .iter()
        .map(|&b| NoiseSchedule::for_beta_max(b, &cfg.noise))
        .collect();

    let train = kg.train();
    let ids: Vec<u64> = (0..train.len() as u64).collect();
    let use_bands = cfg.use_bands;
    let eta = if use_bands { cfg.curriculum.eta } else { 0.0 };

    let mut lr_scale = 1.0;
    let mut opt_kgc = AdamW::new(cfg.lr, cfg.weight_decay);
    let mut opt_diff = AdamW::new(cfg.diffusion_lr, 0.0);
    let mut snapshot = Snapshot {
        epoch: 0,
        scorer: model.scorer.clone(),
        denoiser: model.denoiser.clone(),
    };
    let mut restarts = 0usize;
    let mut log_rows: Vec<EpochLog> = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut bands: Vec<NegativeBandSet> = Vec::new();
    let mut bands_epoch: Option<usize> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut epoch = 0usize;
    let epochs = cfg.epochs();
    let mut stopped_early = false;
    while epoch < epochs {
        let state = if cfg.ablation.dtm_off {
            CurriculumState::fixed(epoch, &cfg.curriculum)
        } else {
            CurriculumState::at(epoch, &cfg.curriculum)
        };
        let needs_refresh = bands_epoch.map_or(true, |b| epoch < b || epoch - b >= cfg.cache_refresh);
        if use_bands && needs_refresh {
            let gen = model.band_generator(&bmax, cfg);
            bands = gen.generate_many(train, &ids, cfg.seed, epoch as u64)?;
            bands_epoch = Some(epoch);
        }

        let mut r = rng::stream(cfg.seed, &[rng::TAG_EPOCH, epoch as u64, restarts as u64]);
        order.sort_unstable();
        order.shuffle(&mut r);
        let mut sums = EpochLosses::default();
        let mut failed = false;
        for chunk in order.chunks(cfg.batch_size) {
            let positives: Vec<Triple> = chunk.iter().map(|&i| train[i]).collect();
            let pos_bands: Vec<Band> = positives
                .iter()
                .map(|_| state.sample_band(r.gen::<f64>()))
                .collect();
            let band_negs: Vec<BandNegative> = if use_bands {
                chunk
                    .iter()
                    .zip(&positives)
                    .zip(&pos_bands)
                    .map(|((&i, p), &b)| BandNegative {
                        head: p.head,
                        relation: p.relation,
                        band: b,
                        tail: bands[i].tail(b).to_vec(),
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let mut uniform = Vec::with_capacity(positives.len() * cfg.n_rand);
            for p in &positives {
                for _ in 0..cfg.n_rand {
                    let c = kg.corrupt_uniform(p, &mut r);
                    if !c.degenerate {
                        uniform.push(c.triple);
                    }
                }
            }
            let diff_batch: Vec<DiffusionSample> = if use_bands {
                positives
                    .iter()
                    .map(|p| {
                        DiffusionSample::draw(
                            model.scorer.entity(p.tail).to_vec(),
                            model.types.type_of(p.head).to_vec(),
                            model.scorer.query(p.head, p.relation),
                            &schedules[p.tail],
                            &mut r,
                        )
                    })
                    .collect()
            } else {
                Vec::new()
            };

            model.scorer.zero_grad();
            let l1 = if eta > 0.0 {
                curriculum::kgc1_on_scorer(
                    &mut model.scorer,
                    &positives,
                    &pos_bands,
                    &band_negs,
                    &state,
                    eta,
                )
            } else {
                0.0
            };
            let l2 = curriculum::kgc2_on_scorer(
                &mut model.scorer,
                &positives,
                &uniform,
                cfg.curriculum.gamma_base,
            );
            let ld = if use_bands {
                model.denoiser.zero_grad();
                diffusion_loss(&mut model.denoiser, &diff_batch, true)?
            } else {
                0.0
            };
            if !(l1.is_finite() && l2.is_finite() && ld.is_finite()) {
                failed = true;
                break;
            }
            opt_kgc.step(&mut model.scorer.params_mut())?;
            if use_bands {
                opt_diff.step(&mut model.denoiser.params_mut())?;
            }
            sums.kgc1 += l1;
            sums.kgc2 += l2;
            sums.diff += ld;
            sums.batches += 1;
        }
        if failed {
            restarts += 1;
            if restarts > cfg.max_restarts {
                return Err(Error::Diverged(format!(
                    "non-finite loss in epoch {epoch} after {} restarts",
                    cfg.max_restarts
                )));
            }
            lr_scale *= 0.5;
            log::warn!(
                "non-finite loss in epoch {epoch}; restoring epoch {} with lr x{lr_scale}",
                snapshot.epoch
            );
            model.scorer = snapshot.scorer.clone();
            model.denoiser = snapshot.denoiser.clone();
            opt_kgc = AdamW::new(cfg.lr * lr_scale, cfg.weight_decay);
            opt_diff = AdamW::new(cfg.diffusion_lr * lr_scale, 0.0);
            log_rows.retain(|row| row.epoch < snapshot.epoch);
            epoch = snapshot.epoch;
            bands_epoch = None;
            continue;
        }

        let n = sums.batches.max(1) as f64;
        let (l1, l2, ld) = (sums.kgc1 / n, sums.kgc2 / n, sums.diff / n);
        let mut row = EpochLog {
            epoch,
            tau: state.tau,
            weights: state.weights,
            margins: state.margins,
            l_kgc1: l1,
            l_kgc2: l2,
            l_diff: ld,
            total: curriculum::total_loss(l1, l2, ld, eta),
            valid_mrr: None,
        };
        epoch += 1;

        let last = epoch == epochs;
        if !kg.valid().is_empty() && (epoch % cfg.eval_every == 0 || last) {
            let mrr = eval::evaluate(kg, &model.scorer, kg.valid()).metrics.mrr;
            row.valid_mrr = Some(mrr);
            log::info!("epoch {epoch}: valid mrr {mrr:.4}, loss {:.4}", row.total);
            if best.as_ref().map_or(true, |(b, _, _)| mrr > *b) {
                best = Some((mrr, epoch, model.clone()));
                if let Some(dir) = out {
                    model.save(&dir.join("best.ckpt"))?;
                }
            }
            if cfg.patience > 0 {
                if let Some((_, best_epoch, _)) = &best {
                    if epoch - best_epoch >= cfg.patience {
                        log::info!("early stop at epoch {epoch}");
                        stopped_early = true;
                    }
                }
            }
        }
        log_rows.push(row);

        if epoch % cfg.checkpoint_every == 0 {
            snapshot = Snapshot {
                epoch,
                scorer: model.scorer.clone(),
                denoiser: model.denoiser.clone(),
            };
            if let Some(dir) = out {
                model.save(&checkpoint_path(dir, epoch))?;
            }
        }
        if stopped_early {
            break;
        }
    }

    if let Some(dir) = out {
        let path = dir.join("train_log.csv");
        std::fs::write(&path, log_csv(&log_rows)).map_err(|e| Error::io(&path, e))?;
        model.save(&dir.join("final.ckpt"))?;
    }
    let (best_valid_mrr, best_epoch, best_model) = match best {
        Some((m, e, b)) => (Some(m), e, b),
        None => (None, epoch, model.clone()),
    };
    if let Some(dir) = out {
        if best_valid_mrr.is_none() {
            best_model.save(&dir.join("best.ckpt"))?;
        }
    }
    Ok(TrainOutcome {
        model: best_model,
        final_model: model,
        log: log_rows,
        best_valid_mrr,
        best_epoch,
        epochs_run: epoch,
        restarts,
    })
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:05}.ckpt"))
}
