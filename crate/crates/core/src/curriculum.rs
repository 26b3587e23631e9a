//! Curriculum over the four hardness bands: band weights as a function of
//! training progress, band-dependent margins and the two margin losses.
//!
//! Band 1 is the smallest sampling timestep (least residual noise, closest
//! to the positive, hardest); band 4 the largest.

use crate::error::{Error, Result};
use crate::kg::Triple;
use crate::micrograd::ops::{log_sigmoid_scalar, sigmoid_scalar};
use crate::pretrain::{Scorer, Tail};

pub const NUM_BANDS: usize = 4;

/// Hardness band index in `1..=4`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Band(u8);

impl Band {
    pub const ALL: [Band; NUM_BANDS] = [Band(1), Band(2), Band(3), Band(4)];

    pub fn new(k: usize) -> Result<Self> {
        if (1..=NUM_BANDS).contains(&k) {
            Ok(Band(k as u8))
        } else {
            Err(Error::Config(format!("band index {k} outside 1..=4")))
        }
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }

    /// Zero-based position, for indexing per-band arrays.
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    /// `(5 - k) / 4`.
    pub fn hardness(self) -> f64 {
        (5.0 - self.0 as f64) / 4.0
    }
}

/// The four reverse-process timesteps at which negatives are recorded:
/// `⌊T/20⌋, ⌊T/10⌋, ⌊T/5⌋, ⌊T/2⌋`.
pub fn sampling_timesteps(total_steps: usize) -> [usize; NUM_BANDS] {
    [
        total_steps / 20,
        total_steps / 10,
        total_steps / 5,
        total_steps / 2,
    ]
}

/// Band of a sampling timestep; any other timestep is an error.
pub fn band_of(timestep: usize, total_steps: usize) -> Result<Band> {
    sampling_timesteps(total_steps)
        .iter()
        .position(|&t| t == timestep)
        .map(|i| Band(i as u8 + 1))
        .ok_or_else(|| {
            Error::Config(format!(
                "timestep {timestep} is not a sampling timestep for T={total_steps}"
            ))
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumConfig {
    pub boundaries: [f64; NUM_BANDS + 1],
    pub lambda: f64,
    pub zeta_exp: f64,
    pub gamma_base: f64,
    pub beta_margin: f64,
    pub eta: f64,
    pub max_epochs: usize,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            boundaries: [0.0, 0.25, 0.5, 0.75, 1.0],
            lambda: 10.0,
            zeta_exp: 1.0,
            gamma_base: 1.0,
            beta_margin: 0.4,
            eta: 0.4,
            max_epochs: 1500,
        }
    }
}

impl CurriculumConfig {
    pub fn validate(&self) -> Result<()> {
        let b = &self.boundaries;
        if b[0] != 0.0 || b[NUM_BANDS] != 1.0 || b.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config(format!(
                "curriculum boundaries must rise strictly from 0 to 1, got {b:?}"
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config("curriculum.lambda must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.zeta_exp) {
            return Err(Error::Config("curriculum.zeta_exp must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.beta_margin) {
            return Err(Error::Config("curriculum.beta_margin must lie in [0, 1]".into()));
        }
        if !(self.gamma_base > 0.0) || self.eta < 0.0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "gamma_base and max_epochs must be positive, eta non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Softmax over `λ [τ - b_{k-1}]_+^ζ` for the four bands.
pub fn weights(tau: f64, cfg: &CurriculumConfig) -> [f64; NUM_BANDS] {
    let exps: [f64; NUM_BANDS] =
        std::array::from_fn(|k| cfg.lambda * (tau - cfg.boundaries[k]).max(0.0).powf(cfg.zeta_exp));
    let max = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = exps.map(|x| (x - max).exp());
    let sum: f64 = e.iter().sum();
    e.map(|x| x / sum)
}

/// `γ_base (1 + β · hard_κ · τ)`.
pub fn margin(band: Band, tau: f64, cfg: &CurriculumConfig) -> f64 {
    cfg.gamma_base * (1.0 + cfg.beta_margin * band.hardness() * tau)
}

/// Per-epoch band weights and margins.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    pub epoch: usize,
    pub tau: f64,
    pub weights: [f64; NUM_BANDS],
    pub margins: [f64; NUM_BANDS],
}

impl CurriculumState {
    pub fn at(epoch: usize, cfg: &CurriculumConfig) -> Self {
        let tau = (epoch as f64 / cfg.max_epochs as f64).clamp(0.0, 1.0);
        Self {
            epoch,
            tau,
            weights: weights(tau, cfg),
            margins: Band::ALL.map(|b| margin(b, tau, cfg)),
        }
    }

    /// Uniform band mix and the base margin for every band, independent of
    /// progress.
    pub fn fixed(epoch: usize, cfg: &CurriculumConfig) -> Self {
        Self {
            epoch,
            tau: (epoch as f64 / cfg.max_epochs as f64).clamp(0.0, 1.0),
            weights: [1.0 / NUM_BANDS as f64; NUM_BANDS],
            margins: [cfg.gamma_base; NUM_BANDS],
        }
    }

    pub fn weight(&self, band: Band) -> f64 {
        self.weights[band.index()]
    }

    pub fn margin(&self, band: Band) -> f64 {
        self.margins[band.index()]
    }

    /// Draws a band from `Cat(weights)` given `u ~ U[0, 1)`.
    pub fn sample_band(&self, u: f64) -> Band {
        let mut acc = 0.0;
        for b in Band::ALL {
            acc += self.weight(b);
            if u < acc {
                return b;
            }
        }
        Band(NUM_BANDS as u8)
    }
}

/// Loss value with its derivatives with respect to every input score.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreLoss {
    pub loss: f64,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

/// Stage-aware weighted margin loss over distance scores:
///
/// `mean_i[-log σ(γ_{κ_i} - S⁺_i)] - 1/|B| Σ_j w_{κ_j} log σ(S̃_j - γ_{κ_j})`.
pub fn loss_kgc1(
    pos_scores: &[f64],
    pos_bands: &[Band],
    neg_scores: &[f64],
    neg_bands: &[Band],
    state: &CurriculumState,
) -> ScoreLoss {
    debug_assert_eq!(pos_scores.len(), pos_bands.len());
    debug_assert_eq!(neg_scores.len(), neg_bands.len());
    let np = pos_scores.len().max(1) as f64;
    let mut loss = 0.0;
    let mut d_pos = Vec::with_capacity(pos_scores.len());
    for (&s, &b) in pos_scores.iter().zip(pos_bands) {
        let x = state.margin(b) - s;
        loss -= log_sigmoid_scalar(x) / np;
        d_pos.push(sigmoid_scalar(-x) / np);
    }
    let mut d_neg = Vec::with_capacity(neg_scores.len());
    if neg_scores.is_empty() {
        if !pos_scores.is_empty() {
            log::warn!("band-negative set is empty; using the positive term only");
        }
    } else {
        let nn = neg_scores.len() as f64;
        for (&s, &b) in neg_scores.iter().zip(neg_bands) {
            let w = state.weight(b);
            let x = s - state.margin(b);
            loss -= w * log_sigmoid_scalar(x) / nn;
            d_neg.push(-w * sigmoid_scalar(-x) / nn);
        }
    }
    ScoreLoss { loss, d_pos, d_neg }
}

/// Fixed-margin loss with an unweighted mean over uniform negatives.
pub fn loss_kgc2(pos_scores: &[f64], neg_scores: &[f64], gamma_base: f64) -> ScoreLoss {
    let np = pos_scores.len().max(1) as f64;
    let mut loss = 0.0;
    let mut d_pos = Vec::with_capacity(pos_scores.len());
    for &s in pos_scores {
        let x = gamma_base - s;
        loss -= log_sigmoid_scalar(x) / np;
        d_pos.push(sigmoid_scalar(-x) / np);
    }
    let nn = neg_scores.len().max(1) as f64;
    let d_neg = neg_scores
        .iter()
        .map(|&s| {
            let x = s - gamma_base;
            loss -= log_sigmoid_scalar(x) / nn;
            -sigmoid_scalar(-x) / nn
        })
        .collect();
    ScoreLoss { loss, d_pos, d_neg }
}

/// `η·l1 + l2 + l_diff`.
pub fn total_loss(l1: f64, l2: f64, ldiff: f64, eta: f64) -> f64 {
    eta * l1 + l2 + ldiff
}

/// A generated tail embedding paired with the query it corrupts.
#[derive(Debug, Clone, PartialEq)]
pub struct BandNegative {
    pub head: usize,
    pub relation: usize,
    pub band: Band,
    pub tail: Vec<f64>,
}

/// [`loss_kgc1`] on scorer outputs; accumulates `scale · dL/dθ` into the
/// scorer's gradient buffers and returns the unscaled loss.
pub fn kgc1_on_scorer(
    scorer: &mut Scorer,
    positives: &[Triple],
    pos_bands: &[Band],
    negatives: &[BandNegative],
    state: &CurriculumState,
    scale: f64,
) -> f64 {
    let pos: Vec<f64> = positives.iter().map(|t| scorer.score_triple(t)).collect();
    let neg: Vec<f64> = negatives
        .iter()
        .map(|n| scorer.score(n.head, n.relation, Tail::Vector(&n.tail)))
        .collect();
    let neg_bands: Vec<Band> = negatives.iter().map(|n| n.band).collect();
    let out = loss_kgc1(&pos, pos_bands, &neg, &neg_bands, state);
    for (t, d) in positives.iter().zip(&out.d_pos) {
        scorer.backward_score(t.head, t.relation, Tail::Entity(t.tail), scale * d);
    }
    for (n, d) in negatives.iter().zip(&out.d_neg) {
        scorer.backward_score(n.head, n.relation, Tail::Vector(&n.tail), scale * d);
    }
    out.loss
}

/// [`loss_kgc2`] on scorer outputs; accumulates gradients, returns the loss.
pub fn kgc2_on_scorer(
    scorer: &mut Scorer,
    positives: &[Triple],
    negatives: &[Triple],
    gamma_base: f64,
) -> f64 {
    let pos: Vec<f64> = positives.iter().map(|t| scorer.score_triple(t)).collect();
    let neg: Vec<f64> = negatives.iter().map(|t| scorer.score_triple(t)).collect();
    let out = loss_kgc2(&pos, &neg, gamma_base);
    for (t, d) in positives.iter().zip(&out.d_pos) {
        scorer.backward_score(t.head, t.relation, Tail::Entity(t.tail), *d);
    }
    for (t, d) in negatives.iter().zip(&out.d_neg) {
        scorer.backward_score(t.head, t.relation, Tail::Entity(t.tail), *d);
    }
    out.loss
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn umls() -> CurriculumConfig {
        CurriculumConfig::default()
    }

    #[test]
    fn bands_of_timesteps() {
        assert_eq!(sampling_timesteps(200), [10, 20, 40, 100]);
        assert_eq!(band_of(10, 200).unwrap().get(), 1);
        assert_eq!(band_of(100, 200).unwrap().get(), 4);
        assert!(band_of(11, 200).is_err());
        assert!(Band::new(0).is_err());
        assert!(Band::new(5).is_err());
    }

    #[test]
    fn uniform_at_start() {
        assert_eq!(weights(0.0, &umls()), [0.25; 4]);
    }

    #[test]
    fn weights_at_half_progress() {
        let w = weights(0.5, &umls());
        let expected = [0.9128, 0.0749, 0.0062, 0.0062];
        for (a, b) in w.iter().zip(expected) {
            assert!((a - b).abs() < 1e-4, "{w:?}");
        }
    }

    #[test]
    fn tiny_lambda_is_uniform() {
        let cfg = CurriculumConfig {
            lambda: 1e-12,
            ..umls()
        };
        for tau in [0.0, 0.3, 0.8, 1.0] {
            for w in weights(tau, &cfg) {
                assert!((w - 0.25).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn margin_values() {
        let cfg = umls();
        for b in Band::ALL {
            assert_eq!(margin(b, 0.0, &cfg), 1.0);
        }
        assert!((margin(Band(1), 1.0, &cfg) - 1.4).abs() < 1e-12);
        assert!((margin(Band(4), 1.0, &cfg) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn kgc1_positive_only() {
        let state = CurriculumState::at(0, &umls());
        let out = loss_kgc1(&[0.0], &[Band(2)], &[], &[], &state);
        assert!((out.loss - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn kgc1_separated_limit() {
        let state = CurriculumState::at(0, &umls());
        let out = loss_kgc1(&[0.0], &[Band(1)], &[1e6], &[Band(1)], &state);
        assert!((out.loss + log_sigmoid_scalar(1.0)).abs() < 1e-12);
    }

    #[test]
    fn kgc2_identical_scores() {
        let out = loss_kgc2(&[1.0], &[1.0], 1.0);
        assert!((out.loss - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
        let pos_only = loss_kgc2(&[1.0], &[], 1.0);
        assert!((pos_only.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn total_loss_mix() {
        assert_eq!(total_loss(4.0, 1.0, 2.0, 0.25), 4.0);
        assert_eq!(total_loss(4.0, 1.0, 2.0, 0.0), 3.0);
        let h = 1e-6;
        let d = (total_loss(4.0 + h, 1.0, 2.0, 0.3) - total_loss(4.0 - h, 1.0, 2.0, 0.3)) / (2.0 * h);
        assert!((d - 0.3).abs() < 1e-8);
    }

    #[test]
    fn fixed_state_ignores_progress() {
        let cfg = umls();
        for e in [0, 700, 1500] {
            let s = CurriculumState::fixed(e, &cfg);
            assert_eq!(s.weights, [0.25; 4]);
            assert_eq!(s.margins, [1.0; 4]);
        }
    }

    #[test]
    fn sample_band_follows_cdf() {
        let state = CurriculumState::at(750, &umls());
        assert_eq!(state.sample_band(0.0), Band(1));
        assert_eq!(state.sample_band(0.9999999), Band(4));
    }

    #[test]
    fn score_gradients_match_differences() {
        let state = CurriculumState::at(600, &umls());
        let pos = [0.3, 1.7, 0.9];
        let pb = [Band(1), Band(3), Band(4)];
        let neg = [0.5, 2.2, 1.1, 0.05];
        let nb = [Band(1), Band(2), Band(3), Band(4)];
        let h = 1e-6;
        let out = loss_kgc1(&pos, &pb, &neg, &nb, &state);
        for i in 0..pos.len() {
            let mut p = pos;
            p[i] += h;
            let up = loss_kgc1(&p, &pb, &neg, &nb, &state).loss;
            p[i] -= 2.0 * h;
            let down = loss_kgc1(&p, &pb, &neg, &nb, &state).loss;
            assert!(((up - down) / (2.0 * h) - out.d_pos[i]).abs() < 1e-8);
        }
        for i in 0..neg.len() {
            let mut n = neg;
            n[i] += h;
            let up = loss_kgc1(&pos, &pb, &n, &nb, &state).loss;
            n[i] -= 2.0 * h;
            let down = loss_kgc1(&pos, &pb, &n, &nb, &state).loss;
            assert!(((up - down) / (2.0 * h) - out.d_neg[i]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn weights_are_a_distribution(tau in 0.0f64..=1.0, lambda in 1e-6f64..=100.0, zeta in 0.0f64..=1.0) {
            let cfg = CurriculumConfig { lambda, zeta_exp: zeta, ..umls() };
            let w = weights(tau, &cfg);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&x| x > 0.0));
        }

        #[test]
        fn margins_order(tau in 1e-6f64..=1.0, beta in 0.0f64..=1.0) {
            let cfg = CurriculumConfig { beta_margin: beta, ..umls() };
            for k in 1..NUM_BANDS {
                let harder = margin(Band(k as u8), tau, &cfg);
                let easier = margin(Band(k as u8 + 1), tau, &cfg);
                prop_assert!(harder >= easier);
                prop_assert!(easier >= cfg.gamma_base);
            }
        }
    }

    #[test]
    fn hard_share_grows_over_training() {
        let cfg = umls();
        let grid: Vec<[f64; 4]> = (0..=100).map(|i| weights(i as f64 / 100.0, &cfg)).collect();
        for w in grid.windows(2) {
            assert!(w[1][0] >= w[0][0] - 1e-15);
            assert!(w[1][3] <= w[0][3] + 1e-15);
        }
        for k in Band::ALL {
            let mut last = 0.0;
            for i in 0..=100 {
                let g = margin(k, i as f64 / 100.0, &cfg);
                assert!(g >= last);
                last = g;
            }
        }
    }
}
