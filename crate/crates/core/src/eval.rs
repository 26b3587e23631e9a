//! Filtered link-prediction metrics and band hardness diagnostics.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::curriculum::NUM_BANDS;
use crate::diffusion::NegativeBandSet;
use crate::error::{Error, Result};
use crate::kg::{Direction, EntityId, KnowledgeGraph, Triple};
use crate::pretrain::{Scorer, Tail};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankResult {
    /// Mean-tie rank, in `[1, candidates]`.
    pub rank: f64,
    pub candidates: usize,
}

/// Rank of `answer` by ascending score among the entities not excluded by
/// `is_filtered`. Ties share the mean of their positions.
pub fn rank_from_scores<F>(scores: &[f64], answer: EntityId, is_filtered: F) -> RankResult
where
    F: Fn(EntityId) -> bool,
{
    let target = scores[answer];
    let (mut less, mut ties, mut candidates) = (0usize, 0usize, 0usize);
    for (e, &s) in scores.iter().enumerate() {
        if e != answer && is_filtered(e) {
            continue;
        }
        candidates += 1;
        if e == answer {
            continue;
        }
        if s < target {
            less += 1;
        } else if s == target {
            ties += 1;
        }
    }
    RankResult {
        rank: less as f64 + 1.0 + ties as f64 / 2.0,
        candidates,
    }
}

/// Filtered rank of `t.tail` for the query `(t.head, t.relation, ?)`.
pub fn tail_rank(kg: &KnowledgeGraph, scorer: &Scorer, t: &Triple) -> RankResult {
    let scores = scorer.score_all_tails(t.head, t.relation);
    let known = kg.true_tails(t.head, t.relation);
    rank_from_scores(&scores, t.tail, |e| known.binary_search(&e).is_ok())
}

/// Filtered rank of `t.head` for the query `(?, t.relation, t.tail)`.
/// With inverse relations this is the tail query `(t.tail, r⁻¹, ?)`.
pub fn head_rank(kg: &KnowledgeGraph, scorer: &Scorer, t: &Triple) -> RankResult {
    if let Some(inv) = kg.inverse_relation(t.relation) {
        return tail_rank(kg, scorer, &Triple::new(t.tail, inv, t.head));
    }
    let scores: Vec<f64> = (0..kg.num_entities())
        .map(|e| scorer.score(e, t.relation, Tail::Entity(t.tail)))
        .collect();
    let known = kg.true_heads(t.relation, t.tail);
    rank_from_scores(&scores, t.head, |e| known.binary_search(&e).is_ok())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub mrr: f64,
    pub hits1: f64,
    pub hits10: f64,
    pub queries: usize,
}

impl Metrics {
    pub fn from_ranks(ranks: &[f64]) -> Self {
        if ranks.is_empty() {
            return Self {
                mrr: 0.0,
                hits1: 0.0,
                hits10: 0.0,
                queries: 0,
            };
        }
        let n = ranks.len() as f64;
        Self {
            mrr: ranks.iter().map(|r| 1.0 / r).sum::<f64>() / n,
            hits1: ranks.iter().filter(|&&r| r <= 1.0).count() as f64 / n,
            hits10: ranks.iter().filter(|&&r| r <= 10.0).count() as f64 / n,
            queries: ranks.len(),
        }
    }

    /// `mrr=…` / `hits1=…` / `hits10=…` lines.
    pub fn to_text(&self) -> String {
        format!(
            "mrr={:.6}\nhits1={:.6}\nhits10={:.6}\nqueries={}\n",
            self.mrr, self.hits1, self.hits10, self.queries
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRank {
    pub triple: Triple,
    pub direction: Direction,
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub ranks: Vec<QueryRank>,
}

impl Evaluation {
    pub fn write_ranks_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("head,relation,tail,direction,rank\n");
        for q in &self.ranks {
            let dir = match q.direction {
                Direction::Out => "tail",
                Direction::In => "head",
            };
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                q.triple.head, q.triple.relation, q.triple.tail, dir, q.rank
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Tail and head queries for every triple of `split`.
pub fn evaluate(kg: &KnowledgeGraph, scorer: &Scorer, split: &[Triple]) -> Evaluation {
    let ranks: Vec<QueryRank> = split
        .par_iter()
        .flat_map_iter(|t| {
            [
                QueryRank {
                    triple: *t,
                    direction: Direction::Out,
                    rank: tail_rank(kg, scorer, t).rank,
                },
                QueryRank {
                    triple: *t,
                    direction: Direction::In,
                    rank: head_rank(kg, scorer, t).rank,
                },
            ]
        })
        .collect();
    let flat: Vec<f64> = ranks.iter().map(|q| q.rank).collect();
    Evaluation {
        metrics: Metrics::from_ranks(&flat),
        ranks,
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandStats {
    pub band: usize,
    pub timestep: usize,
    pub mean_score: f64,
    pub mean_l2: f64,
    pub std_l2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardnessReport {
    pub bands: Vec<BandStats>,
    /// `distances[k][i]`: L2 from band `k+1` of positive `i` to its true tail.
    pub distances: [Vec<f64>; NUM_BANDS],
}

impl HardnessReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("band,timestep,mean_score,mean_l2,std_l2\n");
        for b in &self.bands {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.band, b.timestep, b.mean_score, b.mean_l2, b.std_l2
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Per band: mean `S(h, r, x̂)` and mean L2 from `x̂` to the true tail.
pub fn hardness_report(
    positives: &[Triple],
    bands: &[NegativeBandSet],
    scorer: &Scorer,
) -> Result<HardnessReport> {
    if positives.len() != bands.len() || positives.is_empty() {
        return Err(Error::Shape {
            op: "hardness_report",
            left: vec![positives.len()],
            right: vec![bands.len()],
        });
    }
    let n = positives.len() as f64;
    let mut distances: [Vec<f64>; NUM_BANDS] = Default::default();
    let mut stats = Vec::with_capacity(NUM_BANDS);
    for k in 0..NUM_BANDS {
        let mut score_sum = 0.0;
        for (p, b) in positives.iter().zip(bands) {
            score_sum += scorer.score(p.head, p.relation, Tail::Vector(&b.tails[k]));
            distances[k].push(l2(&b.tails[k], scorer.entity(p.tail)));
        }
        let mean = distances[k].iter().sum::<f64>() / n;
        let var = distances[k].iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        stats.push(BandStats {
            band: k + 1,
            timestep: bands[0].timesteps[k],
            mean_score: score_sum / n,
            mean_l2: mean,
            std_l2: var.sqrt(),
        });
    }
    Ok(HardnessReport {
        bands: stats,
        distances,
    })
}

/// One-sided paired sign-flip permutation test of `mean(a - b) < 0`.
/// Returns the p-value with the `+1` correction.
pub fn paired_permutation_test<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    permutations: usize,
    rng: &mut R,
) -> f64 {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed: f64 = diffs.iter().sum();
    let mut extreme = 0usize;
    for _ in 0..permutations {
        let s: f64 = diffs
            .iter()
            .map(|&d| if rng.gen::<bool>() { d } else { -d })
            .sum();
        if s <= observed {
            extreme += 1;
        }
    }
    (extreme + 1) as f64 / (permutations + 1) as f64
}

/// Two-sided version of [`paired_permutation_test`] on `|mean(a - b)|`.
pub fn paired_permutation_test_two_sided<R: Rng + ?Sized>(
    a: &[f64],
    b: &[f64],
    permutations: usize,
    rng: &mut R,
) -> f64 {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed: f64 = diffs.iter().sum::<f64>().abs();
    let mut extreme = 0usize;
    for _ in 0..permutations {
        let s: f64 = diffs
            .iter()
            .map(|&d| if rng.gen::<bool>() { d } else { -d })
            .sum();
        if s.abs() >= observed {
            extreme += 1;
        }
    }
    (extreme + 1) as f64 / (permutations + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pretrain::Norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn strict_minimum_is_rank_one() {
        let r = rank_from_scores(&[0.1, 0.5, 0.7], 0, |_| false);
        assert_eq!(r.rank, 1.0);
        assert_eq!(r.candidates, 3);
    }

    #[test]
    fn all_tied_is_middle() {
        let r = rank_from_scores(&[2.0; 7], 3, |_| false);
        assert_eq!(r.rank, 4.0);
    }

    #[test]
    fn filtered_entities_do_not_count() {
        let r = rank_from_scores(&[0.0, 0.1, 0.5, 0.2], 2, |e| e == 0 || e == 1);
        assert_eq!(r.rank, 2.0);
        assert_eq!(r.candidates, 2);
    }

    #[test]
    fn metric_examples() {
        let m = Metrics::from_ranks(&[1.0, 1.0]);
        assert_eq!((m.mrr, m.hits1, m.hits10), (1.0, 1.0, 1.0));
        let m = Metrics::from_ranks(&[2.0]);
        assert_eq!((m.mrr, m.hits1, m.hits10), (0.5, 0.0, 1.0));
    }

    #[test]
    fn head_rank_without_inverses_uses_heads() {
        let kg = KnowledgeGraph::from_triples(
            4,
            1,
            vec![Triple::new(0, 0, 3), Triple::new(1, 0, 3)],
            vec![],
            vec![],
            false,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scorer = Scorer::new(4, 1, 3, Norm::L1, &mut rng);
        let r = head_rank(&kg, &scorer, &Triple::new(0, 0, 3));
        assert_eq!(r.candidates, 3);
    }

    #[test]
    fn permutation_test_detects_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
        assert!(paired_permutation_test(&a, &b, 2000, &mut rng) < 0.01);
        assert!(paired_permutation_test(&b, &a, 2000, &mut rng) > 0.99);
        assert_eq!(paired_permutation_test_two_sided(&a, &a, 100, &mut rng), 1.0);
    }
}
