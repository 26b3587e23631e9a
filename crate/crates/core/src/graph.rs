//! Structural entity features on the undirected simple projection of the
//! training graph: betweenness, closeness, clustering coefficient, triple
//! count, average neighbour degree and PageRank.

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, Triple};

/// Number of structural features per entity.
pub const NUM_FEATURES: usize = 6;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = ["bc", "cc", "ccoef", "tc", "adn", "pr"];

// Sources per Brandes work unit; partial sums are merged in unit order.
const BRANDES_CHUNK: usize = 32;

/// Undirected simple graph: no self loops, no parallel edges, sorted
/// neighbour lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        for (a, b) in edges {
            if a != b {
                neighbors[a].push(b);
                neighbors[b].push(a);
            }
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
            nb.dedup();
        }
        Self { neighbors }
    }

    /// Projection of the (non-augmented) training triples.
    pub fn from_kg(kg: &KnowledgeGraph) -> Self {
        Self::from_edges(
            kg.num_entities(),
            kg.base_train().iter().map(|t| (t.head, t.tail)),
        )
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.neighbors[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.neighbors[v].len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    fn bfs(&self, source: usize, dist: &mut [i64]) {
        dist.fill(-1);
        dist[source] = 0;
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            for &w in &self.neighbors[v] {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
            }
        }
    }
}

/// Brandes' dependency accumulation from one source, added into `acc`.
fn brandes_source(g: &Graph, s: usize, acc: &mut [f64]) {
    let n = g.len();
    let mut stack = Vec::with_capacity(n);
    let mut pred: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![-1i64; n];
    sigma[s] = 1.0;
    dist[s] = 0;
    let mut queue = VecDeque::from([s]);
    while let Some(v) = queue.pop_front() {
        stack.push(v);
        for &w in g.neighbors(v) {
            if dist[w] < 0 {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
            if dist[w] == dist[v] + 1 {
                sigma[w] += sigma[v];
                pred[w].push(v);
            }
        }
    }
    let mut delta = vec![0.0f64; n];
    while let Some(w) = stack.pop() {
        for &v in &pred[w] {
            delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
        }
        if w != s {
            acc[w] += delta[w];
        }
    }
}

/// Betweenness centrality, normalized by `2 / ((n-1)(n-2))`.
pub fn betweenness(g: &Graph) -> Vec<f64> {
    let n = g.len();
    if n <= 2 {
        return vec![0.0; n];
    }
    let sources: Vec<usize> = (0..n).collect();
    let partials: Vec<Vec<f64>> = sources
        .par_chunks(BRANDES_CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; n];
            for &s in chunk {
                brandes_source(g, s, &mut acc);
            }
            acc
        })
        .collect();
    let mut bc = vec![0.0; n];
    for p in &partials {
        for (b, x) in bc.iter_mut().zip(p) {
            *b += x;
        }
    }
    // Each unordered pair was counted from both endpoints.
    let scale = 1.0 / ((n - 1) as f64 * (n - 2) as f64);
    bc.iter_mut().for_each(|b| *b *= scale);
    bc
}

/// Closeness centrality `(r-1)/Σd · (r-1)/(n-1)` where `r` counts the
/// nodes reachable from `v` (itself included). Isolated nodes score 0.
pub fn closeness(g: &Graph) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .into_par_iter()
        .map_init(
            || vec![-1i64; n],
            |dist, v| {
                g.bfs(v, dist);
                let (reach, total) = dist
                    .iter()
                    .filter(|&&d| d > 0)
                    .fold((0usize, 0i64), |(r, s), &d| (r + 1, s + d));
                if reach == 0 || total == 0 {
                    0.0
                } else {
                    let r = reach as f64;
                    (r / total as f64) * (r / (n - 1) as f64)
                }
            },
        )
        .collect()
}

/// Local clustering coefficient; 0 for degree below 2.
pub fn clustering_coefficient(g: &Graph) -> Vec<f64> {
    (0..g.len())
        .map(|v| {
            let nb = g.neighbors(v);
            let d = nb.len();
            if d < 2 {
                return 0.0;
            }
            let mut links = 0usize;
            for (i, &a) in nb.iter().enumerate() {
                for &b in &nb[i + 1..] {
                    if g.has_edge(a, b) {
                        links += 1;
                    }
                }
            }
            2.0 * links as f64 / (d * (d - 1)) as f64
        })
        .collect()
}

/// Incident triple count per entity. A self-loop counts twice.
pub fn triple_count(num_entities: usize, triples: &[Triple]) -> Vec<usize> {
    let mut tc = vec![0usize; num_entities];
    for t in triples {
        tc[t.head] += 1;
        tc[t.tail] += 1;
    }
    tc
}

/// Mean degree of distinct neighbours; 0 for isolated nodes.
pub fn avg_neighbor_degree(g: &Graph) -> Vec<f64> {
    (0..g.len())
        .map(|v| {
            let nb = g.neighbors(v);
            if nb.is_empty() {
                0.0
            } else {
                nb.iter().map(|&w| g.degree(w) as f64).sum::<f64>() / nb.len() as f64
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PageRank {
    pub scores: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration with dangling mass spread uniformly. Each undirected
/// edge acts as two directed edges.
pub fn pagerank(g: &Graph, damping: f64, tol: f64, max_iter: usize) -> PageRank {
    let n = g.len();
    if n == 0 {
        return PageRank {
            scores: Vec::new(),
            iterations: 0,
            converged: true,
        };
    }
    let nf = n as f64;
    let mut x = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    for it in 1..=max_iter {
        let dangling: f64 = (0..n).filter(|&v| g.degree(v) == 0).map(|v| x[v]).sum();
        let base = (1.0 - damping) / nf + damping * dangling / nf;
        next.fill(base);
        for v in 0..n {
            let d = g.degree(v);
            if d > 0 {
                let share = damping * x[v] / d as f64;
                for &w in g.neighbors(v) {
                    next[w] += share;
                }
            }
        }
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|p| *p /= sum);
        let diff: f64 = x.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        std::mem::swap(&mut x, &mut next);
        if diff < tol {
            return PageRank {
                scores: x,
                iterations: it,
                converged: true,
            };
        }
    }
    log::warn!("pagerank did not converge after {max_iter} iterations");
    PageRank {
        scores: x,
        iterations: max_iter,
        converged: false,
    }
}

/// Per-feature min-max scaling to `[0, 1]`; constant features map to 0.5.
pub fn normalize_feature(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Six structural features per entity, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityStructFeatures {
    pub bc: Vec<f64>,
    pub cc: Vec<f64>,
    pub ccoef: Vec<f64>,
    pub tc: Vec<f64>,
    pub adn: Vec<f64>,
    pub pr: Vec<f64>,
}

impl EntityStructFeatures {
    pub fn compute(kg: &KnowledgeGraph) -> Self {
        let g = Graph::from_kg(kg);
        let pr = pagerank(&g, 0.85, 1e-10, 200);
        Self {
            bc: betweenness(&g),
            cc: closeness(&g),
            ccoef: clustering_coefficient(&g),
            tc: triple_count(kg.num_entities(), kg.base_train())
                .into_iter()
                .map(|c| c as f64)
                .collect(),
            adn: avg_neighbor_degree(&g),
            pr: pr.scores,
        }
    }

    pub fn len(&self) -> usize {
        self.bc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bc.is_empty()
    }

    pub fn columns(&self) -> [&Vec<f64>; NUM_FEATURES] {
        [&self.bc, &self.cc, &self.ccoef, &self.tc, &self.adn, &self.pr]
    }

    pub fn row(&self, entity: usize) -> [f64; NUM_FEATURES] {
        self.columns().map(|c| c[entity])
    }

    pub fn normalized(&self) -> Self {
        let [bc, cc, ccoef, tc, adn, pr] = self.columns().map(|c| normalize_feature(c));
        Self {
            bc,
            cc,
            ccoef,
            tc,
            adn,
            pr,
        }
    }

    /// Writes `entity_id`, the raw columns and the `*_norm` columns.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let norm = self.normalized();
        let mut out = String::from("entity_id");
        for name in FEATURE_NAMES {
            out.push(',');
            out.push_str(name);
        }
        for name in FEATURE_NAMES {
            out.push_str(&format!(",{name}_norm"));
        }
        out.push('\n');
        for e in 0..self.len() {
            out.push_str(&e.to_string());
            for v in self.row(e).iter().chain(norm.row(e).iter()) {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}
