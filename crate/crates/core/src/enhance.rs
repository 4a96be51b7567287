//! Embedding-driven rewiring of the interaction graph.
//!
//! Every user keeps exactly `items_per_user` edges to its highest-scoring
//! items and every item gains edges to its `users_per_item` highest-scoring
//! users; the union of the two sides replaces the observed interaction block.
//! Heavy users therefore lose low-scoring edges while light users gain new
//! ones. Optional user-user and item-item blocks link each node to its
//! top-scoring same-side peers, symmetrised by union.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::encoder::{dot, EmbeddingTable};
use crate::error::{Error, Result};
use crate::graph::{build_adjacency, SparseMatrix};

/// Neighbour counts for each enhanced block.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct EnhanceConfig {
    pub items_per_user: usize,
    pub users_per_item: usize,
    pub users_per_user: usize,
    pub items_per_item: usize,
}

impl EnhanceConfig {
    pub fn new(items_per_user: usize, users_per_item: usize, users_per_user: usize, items_per_item: usize) -> Self {
        EnhanceConfig {
            items_per_user,
            users_per_item,
            users_per_user,
            items_per_item,
        }
    }

    pub fn validate(&self, n_users: usize, n_items: usize) -> Result<()> {
        let checks = [
            ("items_per_user", self.items_per_user, n_items),
            ("users_per_item", self.users_per_item, n_users),
            ("users_per_user", self.users_per_user, n_users.saturating_sub(1)),
            ("items_per_item", self.items_per_item, n_items.saturating_sub(1)),
        ];
        for (name, k, max) in checks {
            if k > max {
                return Err(Error::InvalidArgument(format!("{name}={k} exceeds the maximum {max}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for EnhanceConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "uk{}_ik{}_uuk{}_iik{}",
            self.items_per_user, self.users_per_item, self.users_per_user, self.items_per_item
        )
    }
}

/// Which blocks of the enhanced adjacency are populated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Enhancement {
    /// Only the rewired user-item block.
    UserItem,
    /// User-item block plus user-user and item-item correlation blocks.
    Full,
}

/// Per-row top-K selections, scores non-increasing, ties by ascending index.
#[derive(Clone, Debug, PartialEq)]
pub struct TopKResult {
    pub indices: Vec<Vec<u32>>,
    pub scores: Vec<Vec<f64>>,
}

impl TopKResult {
    pub fn n_rows(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.indices[r]
    }
}

/// Top `k` candidates of one query by `(score desc, index asc)`.
fn select_top(mut scored: Vec<(f64, u32)>, k: usize) -> (Vec<u32>, Vec<f64>) {
    // `+ 0.0` maps -0.0 to 0.0 so equal scores tie regardless of sign
    let order = |a: &(f64, u32), b: &(f64, u32)| (b.0 + 0.0).total_cmp(&(a.0 + 0.0)).then(a.1.cmp(&b.1));
    let k = k.min(scored.len());
    if k == 0 {
        return (Vec::new(), Vec::new());
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(order);
    scored.into_iter().map(|(s, i)| (i, s)).unzip()
}

/// For each query row, the `k` candidate rows with the largest dot product.
/// Returned indices are relative to `candidates.start`.
fn top_k_rows(
    e: &EmbeddingTable,
    queries: std::ops::Range<usize>,
    candidates: std::ops::Range<usize>,
    k: usize,
    exclude_self: bool,
) -> TopKResult {
    let (indices, scores) = queries
        .into_par_iter()
        .map(|q| {
            if k == 0 {
                return (Vec::new(), Vec::new());
            }
            let eq = e.row(q);
            let scored = candidates
                .clone()
                .filter(|&c| !(exclude_self && c == q))
                .map(|c| (dot(eq, e.row(c)), (c - candidates.start) as u32))
                .collect();
            select_top(scored, k)
        })
        .unzip();
    TopKResult { indices, scores }
}

/// Each user's `k` highest-scoring items over the whole catalogue, observed
/// items included.
pub fn topk_user_items(e: &EmbeddingTable, n_users: usize, k: usize) -> Result<TopKResult> {
    let n_items = items_of(e, n_users)?;
    if k > n_items {
        return Err(Error::InvalidArgument(format!("items_per_user={k} exceeds {n_items} items")));
    }
    Ok(top_k_rows(e, 0..n_users, n_users..n_users + n_items, k, false))
}

/// Each item's `k` highest-scoring users.
pub fn topk_item_users(e: &EmbeddingTable, n_users: usize, k: usize) -> Result<TopKResult> {
    let n_items = items_of(e, n_users)?;
    if k > n_users {
        return Err(Error::InvalidArgument(format!("users_per_item={k} exceeds {n_users} users")));
    }
    Ok(top_k_rows(e, n_users..n_users + n_items, 0..n_users, k, false))
}

fn items_of(e: &EmbeddingTable, n_users: usize) -> Result<usize> {
    e.n_rows()
        .checked_sub(n_users)
        .ok_or_else(|| Error::Dimension(format!("{n_users} users but only {} rows", e.n_rows())))
}

/// Binary `|U| x |I|` matrix with an edge wherever either side selected it.
pub fn union_enhanced_r(
    user_side: &TopKResult,
    item_side: &TopKResult,
    n_users: usize,
    n_items: usize,
) -> Result<SparseMatrix> {
    if user_side.n_rows() != n_users || item_side.n_rows() != n_items {
        return Err(Error::Dimension(format!(
            "selections cover {} users and {} items, expected {n_users} and {n_items}",
            user_side.n_rows(),
            item_side.n_rows()
        )));
    }
    let from_users = user_side
        .indices
        .iter()
        .enumerate()
        .flat_map(|(u, items)| items.iter().map(move |&i| (u, i as usize)));
    let from_items = item_side
        .indices
        .iter()
        .enumerate()
        .flat_map(|(i, users)| users.iter().map(move |&u| (u as usize, i)));
    SparseMatrix::from_pattern(n_users, n_items, from_users.chain(from_items))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    User,
    Item,
}

/// Symmetric binary same-side correlation block: row `r` links to its `k`
/// highest-scoring peers (self excluded), then the pattern is OR-ed with its
/// transpose.
pub fn topk_correlations(e: &EmbeddingTable, n_users: usize, side: Side, k: usize) -> Result<SparseMatrix> {
    let n_items = items_of(e, n_users)?;
    let (range, n) = match side {
        Side::User => (0..n_users, n_users),
        Side::Item => (n_users..n_users + n_items, n_items),
    };
    if k > n.saturating_sub(1) {
        return Err(Error::InvalidArgument(format!(
            "{k} correlations requested among {n} rows"
        )));
    }
    let sel = top_k_rows(e, range.clone(), range, k, true);
    let entries = sel
        .indices
        .iter()
        .enumerate()
        .flat_map(|(r, peers)| peers.iter().flat_map(move |&p| [(r, p as usize), (p as usize, r)]));
    SparseMatrix::from_pattern(n, n, entries)
}

/// Block adjacency for the chosen enhancement. `UserItem` ignores the
/// correlation blocks.
pub fn assemble(
    r_tilde: &SparseMatrix,
    w_uu: Option<&SparseMatrix>,
    w_ii: Option<&SparseMatrix>,
    kind: Enhancement,
) -> Result<SparseMatrix> {
    match kind {
        Enhancement::UserItem => build_adjacency(r_tilde, None, None),
        Enhancement::Full => build_adjacency(r_tilde, w_uu, w_ii),
    }
}

/// Runs every selection for `cfg` and assembles the enhanced adjacency.
pub fn enhance_adjacency(
    e: &EmbeddingTable,
    n_users: usize,
    cfg: &EnhanceConfig,
    kind: Enhancement,
) -> Result<SparseMatrix> {
    let n_items = items_of(e, n_users)?;
    cfg.validate(n_users, n_items)?;
    let user_side = topk_user_items(e, n_users, cfg.items_per_user)?;
    let item_side = topk_item_users(e, n_users, cfg.users_per_item)?;
    let r_tilde = union_enhanced_r(&user_side, &item_side, n_users, n_items)?;
    match kind {
        Enhancement::UserItem => assemble(&r_tilde, None, None, kind),
        Enhancement::Full => {
            let w_uu = topk_correlations(e, n_users, Side::User, cfg.users_per_user)?;
            let w_ii = topk_correlations(e, n_users, Side::Item, cfg.items_per_item)?;
            assemble(&r_tilde, Some(&w_uu), Some(&w_ii), kind)
        }
    }
}

/// Sidecar describing how an enhanced adjacency was produced, stored as
/// `key=value` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct EnhanceManifest {
    pub config: EnhanceConfig,
    pub checkpoint: String,
    pub variant: String,
}

impl EnhanceManifest {
    pub fn to_text(&self) -> String {
        format!(
            "items_per_user={}\nusers_per_item={}\nusers_per_user={}\nitems_per_item={}\ncheckpoint={}\nvariant={}\n",
            self.config.items_per_user,
            self.config.users_per_item,
            self.config.users_per_user,
            self.config.items_per_item,
            self.checkpoint,
            self.variant
        )
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }
}

impl FromStr for EnhanceManifest {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut m = EnhanceManifest {
            config: EnhanceConfig::default(),
            checkpoint: String::new(),
            variant: String::new(),
        };
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx as u64 + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(lineno, "expected key=value"))?;
            let count = || v.parse::<usize>().map_err(|_| Error::parse(lineno, format!("bad count `{v}`")));
            match k {
                "items_per_user" => m.config.items_per_user = count()?,
                "users_per_item" => m.config.users_per_item = count()?,
                "users_per_user" => m.config.users_per_user = count()?,
                "items_per_item" => m.config.items_per_item = count()?,
                "checkpoint" => m.checkpoint = v.to_owned(),
                "variant" => m.variant = v.to_owned(),
                other => return Err(Error::parse(lineno, format!("unknown key `{other}`"))),
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(n_rows: usize, dim: usize, data: &[f64]) -> EmbeddingTable {
        EmbeddingTable::from_vec(n_rows, dim, data.to_vec()).unwrap()
    }

    #[test]
    fn zero_k_selects_nothing() {
        let e = table(3, 1, &[1.0, 2.0, 3.0]);
        assert!(topk_user_items(&e, 1, 0).unwrap().indices.iter().all(Vec::is_empty));
        assert!(topk_item_users(&e, 1, 0).unwrap().indices.iter().all(Vec::is_empty));
        assert_eq!(topk_correlations(&e, 1, Side::Item, 0).unwrap().nnz(), 0);
    }

    #[test]
    fn dominant_item_is_selected() {
        // user 0 = e_3 direction, items 0..4 are unit vectors
        let mut data = vec![0.0; 5 * 4];
        data[3] = 1.0;
        for i in 0..4 {
            data[(1 + i) * 4 + i] = 1.0;
        }
        let e = table(5, 4, &data);
        let sel = topk_user_items(&e, 1, 1).unwrap();
        assert_eq!(sel.row(0), &[3]);
        assert_eq!(sel.scores[0], vec![1.0]);
    }

    #[test]
    fn single_user_is_every_items_pick() {
        let e = table(4, 2, &[1.0, 0.5, 0.2, 0.1, -1.0, 3.0, 0.0, 0.0]);
        let sel = topk_item_users(&e, 1, 1).unwrap();
        assert!(sel.indices.iter().all(|r| r == &[0]));
    }

    #[test]
    fn ties_prefer_lower_index() {
        let e = table(5, 1, &[1.0, 1.0, 1.0, 1.0, 1.0]);
        let sel = topk_user_items(&e, 1, 3).unwrap();
        assert_eq!(sel.row(0), &[0, 1, 2]);
    }

    #[test]
    fn signed_zero_scores_tie() {
        // user (1); item 0 scores -0.0, item 1 scores +0.0
        let e = table(3, 1, &[1.0, -0.0, 0.0]);
        let sel = topk_user_items(&e, 1, 1).unwrap();
        assert_eq!(sel.row(0), &[0]);
    }

    #[test]
    fn oversized_k_is_rejected() {
        let e = table(3, 1, &[1.0, 2.0, 3.0]);
        assert!(topk_user_items(&e, 1, 3).is_err());
        assert!(topk_item_users(&e, 1, 2).is_err());
        assert!(topk_correlations(&e, 1, Side::Item, 2).is_err());
        assert!(EnhanceConfig::new(0, 0, 1, 0).validate(1, 2).is_err());
    }

    #[test]
    fn union_does_not_double_count() {
        let user_side = TopKResult {
            indices: vec![vec![1], vec![], vec![]],
            scores: vec![vec![0.0], vec![], vec![]],
        };
        let item_side = TopKResult {
            indices: vec![vec![], vec![0]],
            scores: vec![vec![], vec![0.0]],
        };
        let r = union_enhanced_r(&user_side, &item_side, 3, 2).unwrap();
        assert_eq!(r.nnz(), 1);
        assert_eq!(r.get(0, 1), 1.0);

        let none = TopKResult {
            indices: vec![vec![]; 3],
            scores: vec![vec![]; 3],
        };
        let item_side = TopKResult {
            indices: vec![vec![2], vec![]],
            scores: vec![vec![0.0], vec![]],
        };
        let r = union_enhanced_r(&none, &item_side, 3, 2).unwrap();
        assert_eq!(r.iter().collect::<Vec<_>>(), vec![(2, 0, 1.0)]);
    }

    #[test]
    fn two_users_link_each_other() {
        let e = table(3, 1, &[1.0, 2.0, 0.5]);
        let w = topk_correlations(&e, 2, Side::User, 1).unwrap();
        assert_eq!(w.to_dense(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn user_item_variant_ignores_correlations() {
        let r = SparseMatrix::from_pattern(2, 2, [(0, 0), (1, 1)]).unwrap();
        let w = SparseMatrix::from_pattern(2, 2, [(0, 1), (1, 0)]).unwrap();
        let ui = assemble(&r, Some(&w), Some(&w), Enhancement::UserItem).unwrap();
        assert_eq!(ui, build_adjacency(&r, None, None).unwrap());
        let empty = SparseMatrix::zeros(2, 2);
        let full = assemble(&r, Some(&empty), Some(&empty), Enhancement::Full).unwrap();
        assert_eq!(full, ui);
    }

    #[test]
    fn manifest_round_trip() {
        let m = EnhanceManifest {
            config: EnhanceConfig::new(5, 3, 3, 0),
            checkpoint: "out/pretrain.ckpt".into(),
            variant: "graphda".into(),
        };
        assert_eq!(m.to_text().parse::<EnhanceManifest>().unwrap(), m);
        assert!("bogus=1".parse::<EnhanceManifest>().is_err());
    }
}
