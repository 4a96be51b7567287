//! Dense brute-force oracles and random instance generators shared by the
//! integration tests.

#![allow(dead_code)]

use graphda::encoder::EmbeddingTable;
use graphda::graph::SparseMatrix;
use rand::Rng;

pub type Dense = Vec<Vec<f64>>;

pub fn random_pattern<R: Rng>(rng: &mut R, n_rows: usize, n_cols: usize, density: f64) -> SparseMatrix {
    let mut entries = Vec::new();
    for r in 0..n_rows {
        for c in 0..n_cols {
            if rng.random_bool(density) {
                entries.push((r, c));
            }
        }
    }
    SparseMatrix::from_pattern(n_rows, n_cols, entries).unwrap()
}

/// Random symmetric binary pattern with an empty diagonal.
pub fn random_symmetric<R: Rng>(rng: &mut R, n: usize, density: f64) -> SparseMatrix {
    let mut entries = Vec::new();
    for r in 0..n {
        for c in r + 1..n {
            if rng.random_bool(density) {
                entries.push((r, c));
                entries.push((c, r));
            }
        }
    }
    SparseMatrix::from_pattern(n, n, entries).unwrap()
}

pub fn random_table<R: Rng>(rng: &mut R, n_rows: usize, dim: usize) -> EmbeddingTable {
    let data = (0..n_rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    EmbeddingTable::from_vec(n_rows, dim, data).unwrap()
}

pub fn table_to_dense(e: &EmbeddingTable) -> Dense {
    (0..e.n_rows()).map(|r| e.row(r).to_vec()).collect()
}

/// `[[W_UU, R], [R^T, W_II]]` entry by entry, diagonal cleared.
pub fn dense_adjacency(r: &Dense, w_uu: Option<&Dense>, w_ii: Option<&Dense>, n_users: usize, n_items: usize) -> Dense {
    let n = n_users + n_items;
    let mut a = vec![vec![0.0; n]; n];
    for u in 0..n_users {
        for i in 0..n_items {
            a[u][n_users + i] = r[u][i];
            a[n_users + i][u] = r[u][i];
        }
    }
    if let Some(w) = w_uu {
        for x in 0..n_users {
            for y in 0..n_users {
                a[x][y] = w[x][y];
            }
        }
    }
    if let Some(w) = w_ii {
        for x in 0..n_items {
            for y in 0..n_items {
                a[n_users + x][n_users + y] = w[x][y];
            }
        }
    }
    for (k, row) in a.iter_mut().enumerate() {
        row[k] = 0.0;
    }
    a
}

pub fn dense_normalize(a: &Dense) -> Dense {
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    a.iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| {
                    if v == 0.0 {
                        0.0
                    } else {
                        v / (deg[i] * deg[j]).sqrt()
                    }
                })
                .collect()
        })
        .collect()
}

pub fn dense_matmul(a: &Dense, b: &Dense) -> Dense {
    let inner = b.len();
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|c| (0..inner).map(|k| row[k] * b[k][c]).sum())
                .collect()
        })
        .collect()
}

/// Mean of `L^k E` for `k < n_layers`.
pub fn dense_propagate(l: &Dense, e: &Dense, n_layers: usize) -> Dense {
    let mut cur = e.clone();
    let mut acc = e.clone();
    for _ in 1..n_layers {
        cur = dense_matmul(l, &cur);
        for (a, c) in acc.iter_mut().zip(&cur) {
            for (x, y) in a.iter_mut().zip(c) {
                *x += y;
            }
        }
    }
    let inv = 1.0 / n_layers as f64;
    acc.iter().map(|r| r.iter().map(|x| x * inv).collect()).collect()
}

/// Frobenius-norm relative error `|got - want| / |want|`, 0 when both vanish.
pub fn rel_error(got: &Dense, want: &Dense) -> f64 {
    assert_eq!(got.len(), want.len(), "row count");
    let (mut diff, mut norm) = (0.0, 0.0);
    for (g, w) in got.iter().zip(want) {
        assert_eq!(g.len(), w.len(), "column count");
        for (x, y) in g.iter().zip(w) {
            diff += (x - y) * (x - y);
            norm += y * y;
        }
    }
    if norm == 0.0 {
        diff.sqrt()
    } else {
        (diff / norm).sqrt()
    }
}

/// Full sort of the candidate set by (score desc, index asc); 1-based
/// position of `target`.
pub fn full_sort_rank(scores: &[f64], excluded: &[bool], target: usize) -> usize {
    let mut order: Vec<usize> = (0..scores.len()).filter(|&j| !excluded[j]).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    1 + order.iter().position(|&j| j == target).expect("target is a candidate")
}

/// First `k` indices of a full argsort by (score desc, index asc).
pub fn argsort_top(scores: &[(usize, f64)], k: usize) -> Vec<u32> {
    let mut v = scores.to_vec();
    v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(i, _)| i as u32).collect()
}
