mod common;

use dans_core::graph::EntityStructFeatures;
use dans_core::kg::{load_dataset, KnowledgeGraph, Triple};
use dans_core::pretrain::{pretrain, Norm, PretrainConfig};
use dans_core::trainer::{fit_difficulty, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        for &k in &idx[i..=j] {
            ranks[k] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    ranks
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let (ma, va) = common::mean_var(&ra);
    let (mb, vb) = common::mean_var(&rb);
    let cov = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (ra.len() - 1) as f64;
    cov / (va * vb).sqrt()
}

#[test]
fn umls_split_statistics() {
    let plain = load_dataset(&common::umls_dir(), false).unwrap();
    let s = plain.stats();
    assert_eq!((s.entities, s.relations, s.train, s.valid, s.test), (135, 46, 5216, 652, 661));
    let inv = load_dataset(&common::umls_dir(), true).unwrap();
    assert_eq!(inv.num_relations(), 92);
    assert_eq!(inv.train().len(), 2 * 5216);
    assert_eq!(inv.base_train().len(), 5216);
}

#[test]
fn one_pretraining_epoch_separates_positives() {
    let kg = load_dataset(&common::umls_dir(), true).unwrap();
    let cfg = PretrainConfig { epochs: 1, dim: 32, ..Default::default() };
    let out = pretrain(&kg, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut pos, mut neg) = (0.0, 0.0);
    for t in kg.base_train() {
        pos += out.scorer.score_triple(t);
        neg += out.scorer.score_triple(&kg.corrupt_uniform(t, &mut rng).triple);
    }
    assert!(pos < neg, "positive {pos} vs negative {neg}");

    let again = pretrain(&kg, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(out.scorer, again.scorer);
}

#[test]
fn difficulty_tracks_proxy_targets_on_toy_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let n = 20;
    let triples: Vec<Triple> = (0..90)
        .map(|_| Triple::new(rng.gen_range(0..n), rng.gen_range(0..3), rng.gen_range(0..n)))
        .collect();
    let kg = KnowledgeGraph::from_triples(n, 3, triples, vec![], vec![], true).unwrap();
    let mut cfg = TrainConfig::from_config(&Default::default()).unwrap();
    cfg.pretrain = PretrainConfig { epochs: 20, dim: 8, norm: Norm::L1, ..Default::default() };
    let pre = pretrain(&kg, &cfg.pretrain, &mut rng).unwrap();
    let features = EntityStructFeatures::compute(&kg);
    let (zeta, proxy) = fit_difficulty(&kg, &pre.scorer, &features, &cfg).unwrap();
    assert!(zeta.iter().all(|&z| z > 0.0 && z < 1.0));
    assert!(proxy.iter().all(|&p| (0.0..=1.0).contains(&p)));
    let rho = spearman(&zeta, &proxy);
    assert!(rho >= 0.8, "spearman {rho}");
}
