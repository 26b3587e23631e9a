//! Brute-force oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use dans_core::kg::Triple;
use rand::Rng;

/// Random triples over `n` entities; some self-loops, some isolated nodes.
pub fn random_triples<R: Rng>(n: usize, density: f64, rng: &mut R) -> Vec<Triple> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if rng.gen::<f64>() < density / 2.0 {
                out.push(Triple::new(a, rng.gen_range(0..3), b));
            }
        }
    }
    out
}

/// Symmetric 0/1 adjacency of the simple projection.
pub fn adjacency(n: usize, triples: &[Triple]) -> Vec<Vec<bool>> {
    let mut a = vec![vec![false; n]; n];
    for t in triples {
        if t.head != t.tail {
            a[t.head][t.tail] = true;
            a[t.tail][t.head] = true;
        }
    }
    a
}

const INF: usize = usize::MAX / 4;

pub fn floyd_warshall(a: &[Vec<bool>]) -> Vec<Vec<usize>> {
    let n = a.len();
    let mut d = vec![vec![INF; n]; n];
    for i in 0..n {
        d[i][i] = 0;
        for j in 0..n {
            if a[i][j] {
                d[i][j] = 1;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// `walks[l][i][j]`: number of walks of length `l` from `i` to `j`. Walks
/// whose length equals the distance are exactly the shortest paths.
fn walk_counts(a: &[Vec<bool>]) -> Vec<Vec<Vec<f64>>> {
    let n = a.len();
    let mut walks = vec![vec![vec![0.0; n]; n]];
    for i in 0..n {
        walks[0][i][i] = 1.0;
    }
    for l in 1..n.max(1) {
        let prev = &walks[l - 1];
        let mut next = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                if prev[i][k] == 0.0 {
                    continue;
                }
                for j in 0..n {
                    if a[k][j] {
                        next[i][j] += prev[i][k];
                    }
                }
            }
        }
        walks.push(next);
    }
    walks
}

/// Betweenness by enumeration over every unordered pair, normalized by
/// `2 / ((n-1)(n-2))`.
pub fn betweenness(a: &[Vec<bool>]) -> Vec<f64> {
    let n = a.len();
    if n <= 2 {
        return vec![0.0; n];
    }
    let d = floyd_warshall(a);
    let w = walk_counts(a);
    let sigma = |s: usize, t: usize| w[d[s][t]][s][t];
    let mut bc = vec![0.0; n];
    for s in 0..n {
        for t in s + 1..n {
            if d[s][t] >= INF {
                continue;
            }
            let total = sigma(s, t);
            for v in 0..n {
                if v == s || v == t || d[s][v] >= INF || d[v][t] >= INF {
                    continue;
                }
                if d[s][v] + d[v][t] == d[s][t] {
                    bc[v] += sigma(s, v) * sigma(v, t) / total;
                }
            }
        }
    }
    let scale = 2.0 / ((n - 1) as f64 * (n - 2) as f64);
    bc.iter().map(|b| b * scale).collect()
}

/// Wasserman-Faust closeness.
pub fn closeness(a: &[Vec<bool>]) -> Vec<f64> {
    let n = a.len();
    let d = floyd_warshall(a);
    (0..n)
        .map(|v| {
            let reach: Vec<usize> = (0..n).filter(|&u| u != v && d[v][u] < INF).map(|u| d[v][u]).collect();
            if reach.is_empty() {
                return 0.0;
            }
            let r = reach.len() as f64;
            let s: usize = reach.iter().sum();
            (r / s as f64) * (r / (n - 1) as f64)
        })
        .collect()
}

pub fn clustering(a: &[Vec<bool>]) -> Vec<f64> {
    let n = a.len();
    (0..n)
        .map(|v| {
            let nb: Vec<usize> = (0..n).filter(|&u| a[v][u]).collect();
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let mut links = 0;
            for i in 0..k {
                for j in 0..k {
                    if i != j && a[nb[i]][nb[j]] {
                        links += 1;
                    }
                }
            }
            links as f64 / (k * (k - 1)) as f64
        })
        .collect()
}

pub fn triple_count(n: usize, triples: &[Triple]) -> Vec<usize> {
    (0..n)
        .map(|e| {
            triples
                .iter()
                .map(|t| usize::from(t.head == e) + usize::from(t.tail == e))
                .sum()
        })
        .collect()
}

pub fn avg_neighbor_degree(a: &[Vec<bool>]) -> Vec<f64> {
    let n = a.len();
    let deg: Vec<usize> = (0..n).map(|v| a[v].iter().filter(|&&x| x).count()).collect();
    (0..n)
        .map(|v| {
            if deg[v] == 0 {
                0.0
            } else {
                (0..n).filter(|&u| a[v][u]).map(|u| deg[u] as f64).sum::<f64>() / deg[v] as f64
            }
        })
        .collect()
}

/// Solves `(I - d P) x = (1-d)/n · 1` by Gaussian elimination with partial
/// pivoting, where `P` is the column-stochastic random-walk matrix with
/// dangling columns replaced by the uniform distribution.
pub fn pagerank_dense(a: &[Vec<bool>], damping: f64) -> Vec<f64> {
    let n = a.len();
    let nf = n as f64;
    let deg: Vec<usize> = (0..n).map(|v| a[v].iter().filter(|&&x| x).count()).collect();
    let mut m = vec![vec![0.0; n + 1]; n];
    for i in 0..n {
        for j in 0..n {
            let p = if deg[j] == 0 {
                1.0 / nf
            } else if a[j][i] {
                1.0 / deg[j] as f64
            } else {
                0.0
            };
            m[i][j] = f64::from(u8::from(i == j)) - damping * p;
        }
        m[i][n] = (1.0 - damping) / nf;
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().partial_cmp(&m[y][col].abs()).unwrap())
            .unwrap();
        m.swap(col, pivot);
        for row in 0..n {
            if row != col {
                let f = m[row][col] / m[col][col];
                if f != 0.0 {
                    for k in col..=n {
                        m[row][k] -= f * m[col][k];
                    }
                }
            }
        }
    }
    let x: Vec<f64> = (0..n).map(|i| m[i][n] / m[i][i]).collect();
    let s: f64 = x.iter().sum();
    x.iter().map(|v| v / s).collect()
}

/// Mean-tie rank of `answer` among `candidates` by sorting them by score
/// and averaging the 1-based positions that share the answer's score.
pub fn sort_rank(scores: &[f64], candidates: &[usize], answer: usize) -> f64 {
    let mut c: Vec<usize> = candidates.to_vec();
    c.sort_by(|&x, &y| scores[x].partial_cmp(&scores[y]).unwrap());
    let target = scores[answer];
    let positions: Vec<usize> = c
        .iter()
        .enumerate()
        .filter(|(_, &e)| scores[e] == target)
        .map(|(i, _)| i + 1)
        .collect();
    positions.iter().sum::<usize>() as f64 / positions.len() as f64
}

/// Central differences of `f` at `x`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = f(&p);
            p[i] = orig - h;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `||a - b|| / max(||a||, ||b||, 1e-6)`. The floor keeps exact zeros
/// compared against finite-difference round-off from reading as 100% error.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-6)
}

pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

pub fn umls_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/umls")
}

pub fn configs_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}
