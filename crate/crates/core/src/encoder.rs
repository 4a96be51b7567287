//! Embedding table, linear multi-layer propagation and BPR training.
//!
//! The encoder output is a fixed linear map of the base table,
//! `E_out = (1/N) * sum_{k<N} L^k E0` (or `L^{N-1} E0` for
//! [`LayerCombine::Last`]), so the gradient of any loss with respect to `E0`
//! is the same map with `L^T` applied to the output gradient. Training keeps
//! exact gradients through the whole propagation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use log::debug;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::SplitDataset;
use crate::error::{Error, Result};
use crate::eval::{self, Phase};
use crate::graph::{spmm_into, SparseMatrix};

/// Dense row-major `(|U| + |I|) x d` table. User rows come first.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    n_rows: usize,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn zeros(n_rows: usize, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be at least 1".into()));
        }
        Ok(EmbeddingTable {
            n_rows,
            dim,
            data: vec![0.0; n_rows * dim],
        })
    }

    pub fn from_vec(n_rows: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dim must be at least 1".into()));
        }
        if data.len() != n_rows * dim {
            return Err(Error::Dimension(format!(
                "{} values for a {n_rows}x{dim} table",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embedding contains non-finite values".into()));
        }
        Ok(EmbeddingTable { n_rows, dim, data })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.dim..(r + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dot(&self, a: usize, b: usize) -> f64 {
        dot(self.row(a), self.row(b))
    }

    /// Multiplies every entry by `s`.
    pub fn scaled(&self, s: f64) -> EmbeddingTable {
        EmbeddingTable {
            n_rows: self.n_rows,
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Writes `rows=<n> dim=<d> seed=<s>` followed by one line of
    /// space-separated values per row, 17 significant digits each.
    pub fn write_checkpoint(&self, path: impl AsRef<Path>, seed: u64) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_checkpoint_to(&mut w, seed)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn write_checkpoint_to<W: Write>(&self, w: &mut W, seed: u64) -> std::io::Result<()> {
        writeln!(w, "rows={} dim={} seed={}", self.n_rows, self.dim, seed)?;
        for r in 0..self.n_rows {
            let mut first = true;
            for v in self.row(r) {
                if !first {
                    w.write_all(b" ")?;
                }
                first = false;
                write!(w, "{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads a checkpoint, returning the table and the seed it records.
    pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(Self, u64)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint_from(BufReader::new(file))
    }

    pub fn read_checkpoint_from<R: BufRead>(reader: R) -> Result<(Self, u64)> {
        let mut lines = reader.lines();
        let header = match lines.next() {
            Some(l) => l.map_err(|e| Error::parse(1, e.to_string()))?,
            None => return Err(Error::Empty("checkpoint".into())),
        };
        let mut rows = None;
        let mut dim = None;
        let mut seed = None;
        for tok in header.split_whitespace() {
            match tok.split_once('=') {
                Some(("rows", v)) => rows = v.parse::<usize>().ok(),
                Some(("dim", v)) => dim = v.parse::<usize>().ok(),
                Some(("seed", v)) => seed = v.parse::<u64>().ok(),
                _ => return Err(Error::parse(1, format!("bad header token `{tok}`"))),
            }
        }
        let (Some(rows), Some(dim), Some(seed)) = (rows, dim, seed) else {
            return Err(Error::parse(1, "header must be `rows=<n> dim=<d> seed=<s>`"));
        };
        let mut data = Vec::with_capacity(rows * dim);
        let mut seen = 0usize;
        for (idx, line) in lines.enumerate() {
            let lineno = idx as u64 + 2;
            let line = line.map_err(|e| Error::parse(lineno, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let before = data.len();
            for tok in line.split_whitespace() {
                data.push(
                    tok.parse::<f64>()
                        .map_err(|_| Error::parse(lineno, format!("bad value `{tok}`")))?,
                );
            }
            if data.len() - before != dim {
                return Err(Error::parse(
                    lineno,
                    format!("expected {dim} values, got {}", data.len() - before),
                ));
            }
            seen += 1;
        }
        if seen != rows {
            return Err(Error::Dimension(format!("header declares {rows} rows, found {seen}")));
        }
        Ok((Self::from_vec(rows, dim, data)?, seed))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// I.i.d. `N(0, init_std^2)` entries from a seeded ChaCha stream.
pub fn init_embeddings(n_rows: usize, dim: usize, seed: u64, init_std: f64) -> Result<EmbeddingTable> {
    if n_rows == 0 || dim == 0 {
        return Err(Error::InvalidArgument(format!(
            "embedding table must be non-empty, got {n_rows}x{dim}"
        )));
    }
    if !(init_std > 0.0 && init_std.is_finite()) {
        return Err(Error::InvalidArgument(format!("init_std must be positive, got {init_std}")));
    }
    let normal = Normal::new(0.0, init_std).expect("positive finite std");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n_rows * dim).map(|_| normal.sample(&mut rng)).collect();
    EmbeddingTable::from_vec(n_rows, dim, data)
}

/// How the per-layer embeddings are combined into the encoder output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LayerCombine {
    /// Average of `E0, L E0, ..., L^{N-1} E0`.
    #[default]
    Mean,
    /// `L^{N-1} E0` only.
    Last,
}

impl FromStr for LayerCombine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(LayerCombine::Mean),
            "last" => Ok(LayerCombine::Last),
            other => Err(Error::InvalidArgument(format!(
                "layer combine must be `mean` or `last`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for LayerCombine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LayerCombine::Mean => "mean",
            LayerCombine::Last => "last",
        })
    }
}

/// The linear propagation operator and its adjoint.
#[derive(Debug)]
pub struct Propagator<'a> {
    l: &'a SparseMatrix,
    // None when `l` is symmetric and serves as its own transpose
    lt: Option<SparseMatrix>,
    n_layers: usize,
    combine: LayerCombine,
}

impl<'a> Propagator<'a> {
    pub fn new(l: &'a SparseMatrix, n_layers: usize, combine: LayerCombine) -> Result<Self> {
        if l.n_rows() != l.n_cols() {
            return Err(Error::Dimension(format!(
                "propagation matrix must be square, got {}x{}",
                l.n_rows(),
                l.n_cols()
            )));
        }
        if n_layers == 0 {
            return Err(Error::InvalidArgument("n_layers must be at least 1".into()));
        }
        let lt = (!l.is_symmetric()).then(|| l.transpose());
        Ok(Propagator {
            l,
            lt,
            n_layers,
            combine,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.l.n_rows()
    }

    fn check(&self, e: &EmbeddingTable) -> Result<()> {
        if e.n_rows() != self.n_nodes() {
            return Err(Error::Dimension(format!(
                "{} embedding rows for a {}-node graph",
                e.n_rows(),
                self.n_nodes()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, e0: &EmbeddingTable) -> Result<EmbeddingTable> {
        self.check(e0)?;
        let data = apply_powers(self.l, e0.as_slice(), e0.dim(), self.n_layers, self.combine);
        Ok(EmbeddingTable {
            n_rows: e0.n_rows(),
            dim: e0.dim(),
            data,
        })
    }

    /// Pulls a gradient with respect to the output back to the base table.
    pub fn backward(&self, grad_out: &[f64], dim: usize) -> Vec<f64> {
        let lt = self.lt.as_ref().unwrap_or(self.l);
        apply_powers(lt, grad_out, dim, self.n_layers, self.combine)
    }
}

fn apply_powers(m: &SparseMatrix, x: &[f64], dim: usize, n_layers: usize, combine: LayerCombine) -> Vec<f64> {
    let mut cur = x.to_vec();
    let mut acc = match combine {
        LayerCombine::Mean => x.to_vec(),
        LayerCombine::Last => Vec::new(),
    };
    let mut next = vec![0.0; x.len()];
    for _ in 1..n_layers {
        spmm_into(m, &cur, dim, &mut next);
        std::mem::swap(&mut cur, &mut next);
        if combine == LayerCombine::Mean {
            for (a, c) in acc.iter_mut().zip(&cur) {
                *a += c;
            }
        }
    }
    match combine {
        LayerCombine::Mean => {
            let inv = 1.0 / n_layers as f64;
            acc.iter_mut().for_each(|a| *a *= inv);
            acc
        }
        LayerCombine::Last => cur,
    }
}

/// Layer-averaged propagation: mean of `L^k E0` for `k < n_layers`.
pub fn propagate(l: &SparseMatrix, e0: &EmbeddingTable, n_layers: usize) -> Result<EmbeddingTable> {
    Propagator::new(l, n_layers, LayerCombine::Mean)?.forward(e0)
}

/// A `(user, positive item, negative item)` training example. Item ids are
/// item-local; their table row is `n_users + item`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub user: u32,
    pub pos: u32,
    pub neg: u32,
}

/// `-ln sigmoid(x)` without overflow.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Batch BPR objective over the propagated embeddings and its gradient with
/// respect to `e0`.
///
/// The objective is the batch mean of `-ln sigmoid(e_u.e_pos - e_u.e_neg)`
/// plus `l2 / (2B)` times the squared norms of the `E0` rows each triple
/// touches.
pub fn bpr_loss_and_grad(
    prop: &Propagator<'_>,
    e0: &EmbeddingTable,
    n_users: usize,
    batch: &[Triple],
    l2: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let out = prop.forward(e0)?;
    let dim = e0.dim();
    let n = e0.n_rows();
    let scale = 1.0 / batch.len() as f64;

    let mut loss = 0.0;
    let mut reg = 0.0;
    let mut grad_out = vec![0.0; n * dim];
    let mut reg_rows: Vec<usize> = Vec::with_capacity(3 * batch.len());
    for t in batch {
        let (u, p, q) = (t.user as usize, n_users + t.pos as usize, n_users + t.neg as usize);
        if t.user as usize >= n_users || p >= n || q >= n {
            return Err(Error::Dimension(format!("triple {t:?} out of range")));
        }
        if t.pos == t.neg {
            return Err(Error::InvalidArgument(format!("triple {t:?} has pos == neg")));
        }
        let (eu, ep, eq) = (out.row(u), out.row(p), out.row(q));
        let x = dot(eu, ep) - dot(eu, eq);
        loss += neg_log_sigmoid(x);
        // d/dx of -ln sigmoid(x)
        let g = (sigmoid(x) - 1.0) * scale;
        for k in 0..dim {
            grad_out[u * dim + k] += g * (ep[k] - eq[k]);
            grad_out[p * dim + k] += g * eu[k];
            grad_out[q * dim + k] -= g * eu[k];
        }
        reg_rows.extend([u, p, q]);
    }
    loss *= scale;

    let mut grad = prop.backward(&grad_out, dim);
    if l2 > 0.0 {
        for &r in &reg_rows {
            let row = e0.row(r);
            reg += dot(row, row);
            for (g, &w) in grad[r * dim..(r + 1) * dim].iter_mut().zip(row) {
                *g += l2 * scale * w;
            }
        }
        loss += 0.5 * l2 * scale * reg;
    }
    Ok((loss, grad))
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (((w, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// One optimisation step on a batch. Returns the batch loss.
pub fn bpr_step(
    prop: &Propagator<'_>,
    e0: &mut EmbeddingTable,
    adam: &mut Adam,
    n_users: usize,
    batch: &[Triple],
    lr: f64,
    l2: f64,
) -> Result<f64> {
    let (loss, grad) = bpr_loss_and_grad(prop, e0, n_users, batch, l2)?;
    if !loss.is_finite() {
        return Err(Error::Divergence(loss));
    }
    adam.step(&mut e0.data, &grad, lr);
    Ok(loss)
}

/// Draws an item uniformly from the complement of `u`'s train items.
pub fn sample_negative<R: Rng + ?Sized>(split: &SplitDataset, u: u32, rng: &mut R) -> Result<u32> {
    sample_from_complement(split.train_items(u), split.n_items(), rng).ok_or(Error::NoNegative(u))
}

/// Uniform draw from `[0, n) \ excluded`; `excluded` must be sorted and
/// duplicate-free.
pub(crate) fn sample_from_complement<R: Rng + ?Sized>(excluded: &[u32], n: usize, rng: &mut R) -> Option<u32> {
    let free = n.checked_sub(excluded.len()).filter(|&f| f > 0)?;
    let mut k = rng.random_range(0..free) as u32;
    // shift past every excluded id at or below the running candidate
    for &x in excluded {
        if x <= k {
            k += 1;
        } else {
            break;
        }
    }
    Some(k)
}

/// Raw dot-product scores of user `u` against every item; `exclude`d items
/// get `-inf`.
pub fn score_all(e: &EmbeddingTable, n_users: usize, u: u32, exclude: &[u32]) -> Vec<f64> {
    let n_items = e.n_rows() - n_users;
    let eu = e.row(u as usize);
    let mut scores: Vec<f64> = (0..n_items).map(|i| dot(eu, e.row(n_users + i))).collect();
    for &i in exclude {
        scores[i as usize] = f64::NEG_INFINITY;
    }
    scores
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub learning_rate: f64,
    pub l2_weight: f64,
    pub n_layers: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub init_std: f64,
    pub combine: LayerCombine,
    /// NDCG cutoff used for model selection on the validation split.
    pub select_cutoff: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 128,
            learning_rate: 0.001,
            l2_weight: 0.0,
            n_layers: 3,
            max_epochs: 500,
            patience: 20,
            batch_size: 1024,
            seed: 0,
            init_std: 0.1,
            combine: LayerCombine::Mean,
            select_cutoff: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return bad(format!("l2_weight must be non-negative, got {}", self.l2_weight));
        }
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.select_cutoff == 0 {
            return bad("batch_size, max_epochs and select_cutoff must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_ndcg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainTrace {
    /// Validation NDCG of the randomly initialised encoder.
    pub initial_val_ndcg: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_ndcg: f64,
}

fn validation_ndcg(prop: &Propagator<'_>, e0: &EmbeddingTable, split: &SplitDataset, cutoff: usize) -> Result<f64> {
    let out = prop.forward(e0)?;
    let report = eval::evaluate(&out, split, Phase::Validation, &[cutoff])?;
    Ok(report.overall.ndcg[0])
}

/// Trains a fresh encoder with BPR on the split's train pairs, propagating
/// over `l`, and returns the output embeddings of the epoch with the best
/// validation NDCG.
pub fn train(split: &SplitDataset, l: &SparseMatrix, cfg: &TrainConfig) -> Result<(EmbeddingTable, TrainTrace)> {
    cfg.validate()?;
    let n_users = split.n_users();
    let n_nodes = n_users + split.n_items();
    if l.n_rows() != n_nodes {
        return Err(Error::Dimension(format!(
            "graph has {} nodes, split has {n_nodes}",
            l.n_rows()
        )));
    }
    let prop = Propagator::new(l, cfg.n_layers, cfg.combine)?;
    let mut e0 = init_embeddings(n_nodes, cfg.dim, cfg.seed, cfg.init_std)?;
    let mut adam = Adam::new(n_nodes * cfg.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let pairs: Vec<(u32, u32)> = split.train_pairs().collect();
    if pairs.is_empty() {
        return Err(Error::Empty("no train interactions".into()));
    }
    let initial = validation_ndcg(&prop, &e0, split, cfg.select_cutoff)?;
    let mut best = (0usize, f64::NEG_INFINITY, e0.clone());
    let mut epochs = Vec::new();
    let mut triples = Vec::with_capacity(pairs.len());

    for epoch in 1..=cfg.max_epochs {
        triples.clear();
        for &(u, pos) in &pairs {
            let neg = sample_negative(split, u, &mut rng)?;
            triples.push(Triple { user: u, pos, neg });
        }
        triples.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for batch in triples.chunks(cfg.batch_size) {
            loss_sum += bpr_step(&prop, &mut e0, &mut adam, n_users, batch, cfg.learning_rate, cfg.l2_weight)?;
            n_batches += 1;
        }
        let loss = loss_sum / n_batches as f64;
        let val = validation_ndcg(&prop, &e0, split, cfg.select_cutoff)?;
        debug!("epoch {epoch}: loss {loss:.6} val ndcg@{} {val:.6}", cfg.select_cutoff);
        epochs.push(EpochRecord {
            epoch,
            loss,
            val_ndcg: val,
        });
        if val > best.1 {
            best = (epoch, val, e0.clone());
        }
        if epoch - best.0 >= cfg.patience {
            break;
        }
    }

    let (best_epoch, best_val, best_e0) = best;
    let out = prop.forward(&best_e0)?;
    Ok((
        out,
        TrainTrace {
            initial_val_ndcg: initial,
            epochs,
            best_epoch,
            best_val_ndcg: best_val,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_rejects_bad_shapes() {
        let a = init_embeddings(7, 3, 42, 0.1).unwrap();
        let b = init_embeddings(7, 3, 42, 0.1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_embeddings(7, 3, 43, 0.1).unwrap());
        assert!(init_embeddings(7, 0, 42, 0.1).is_err());
        assert!(init_embeddings(7, 3, 42, 0.0).is_err());
    }

    #[test]
    fn init_moments() {
        let e = init_embeddings(1000, 100, 7, 0.1).unwrap();
        let n = e.as_slice().len() as f64;
        let mean = e.as_slice().iter().sum::<f64>() / n;
        let var = e.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var.sqrt() - 0.1).abs() < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn single_layer_and_identity_propagation() {
        let e = init_embeddings(5, 3, 1, 0.1).unwrap();
        let l = SparseMatrix::from_pattern(5, 5, [(0, 1), (1, 0), (2, 3), (3, 2)]).unwrap();
        assert_eq!(propagate(&l, &e, 1).unwrap(), e);
        let id = SparseMatrix::identity(5);
        let out = propagate(&id, &e, 3).unwrap();
        for (a, b) in out.as_slice().iter().zip(e.as_slice()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(propagate(&SparseMatrix::identity(4), &e, 2).is_err());
        assert!(propagate(&l, &e, 0).is_err());
    }

    #[test]
    fn zero_embeddings_give_ln2() {
        let l = SparseMatrix::identity(5);
        let prop = Propagator::new(&l, 2, LayerCombine::Mean).unwrap();
        let e0 = EmbeddingTable::zeros(5, 3).unwrap();
        let batch = [Triple { user: 0, pos: 0, neg: 1 }, Triple { user: 1, pos: 2, neg: 0 }];
        let (loss, _) = bpr_loss_and_grad(&prop, &e0, 2, &batch, 0.0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn large_margin_drives_loss_to_zero() {
        let l = SparseMatrix::identity(3);
        let prop = Propagator::new(&l, 1, LayerCombine::Mean).unwrap();
        let e0 = EmbeddingTable::from_vec(3, 1, vec![100.0, 100.0, -100.0]).unwrap();
        let (loss, _) = bpr_loss_and_grad(&prop, &e0, 1, &[Triple { user: 0, pos: 0, neg: 1 }], 0.0).unwrap();
        assert!(loss >= 0.0 && loss < 1e-300);
        assert!(neg_log_sigmoid(-800.0).is_finite());
    }

    #[test]
    fn bad_triples_are_rejected() {
        let l = SparseMatrix::identity(3);
        let prop = Propagator::new(&l, 1, LayerCombine::Mean).unwrap();
        let e0 = EmbeddingTable::zeros(3, 1).unwrap();
        assert!(bpr_loss_and_grad(&prop, &e0, 1, &[Triple { user: 0, pos: 1, neg: 1 }], 0.0).is_err());
        assert!(bpr_loss_and_grad(&prop, &e0, 1, &[Triple { user: 0, pos: 0, neg: 5 }], 0.0).is_err());
        assert!(bpr_loss_and_grad(&prop, &e0, 1, &[], 0.0).is_err());
    }

    #[test]
    fn complement_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            assert_eq!(sample_from_complement(&[0], 2, &mut rng), Some(1));
            let k = sample_from_complement(&[1, 2, 5], 7, &mut rng).unwrap();
            assert!([0, 3, 4, 6].contains(&k));
        }
        assert_eq!(sample_from_complement(&[0, 1], 2, &mut rng), None);
    }

    #[test]
    fn score_all_excludes() {
        let e = EmbeddingTable::from_vec(3, 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.0]).unwrap();
        let s = score_all(&e, 1, 0, &[1]);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[1], f64::NEG_INFINITY);
    }

    #[test]
    fn checkpoint_round_trip_is_lossless() {
        let e = init_embeddings(4, 3, 9, 0.37).unwrap();
        let mut buf = Vec::new();
        e.write_checkpoint_to(&mut buf, 9).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("rows=4 dim=3 seed=9\n"));
        let (back, seed) = EmbeddingTable::read_checkpoint_from(buf.as_slice()).unwrap();
        assert_eq!(seed, 9);
        assert_eq!(back, e);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            n_layers: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
