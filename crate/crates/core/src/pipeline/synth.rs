//! Planted-block interaction generator for desk-scale experiments.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};

use crate::dataset::{build_log, InteractionLog, RawInteraction};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_blocks: usize,
    /// Probability that a draw comes from outside the user's block.
    pub noise_rate: f64,
    /// Mean number of distinct items per user.
    pub interactions_per_user: f64,
    /// Activity floor, normally the k-core threshold.
    pub min_interactions: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 200,
            n_items: 100,
            n_blocks: 5,
            noise_rate: 0.2,
            interactions_per_user: 8.0,
            min_interactions: 3,
            seed: 0,
        }
    }
}

/// Generated interactions plus the planted block of every raw user and item.
/// Raw keys are `u<index>` and `i<index>`.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub raw: Vec<RawInteraction>,
    pub user_blocks: Vec<usize>,
    pub item_blocks: Vec<usize>,
}

impl Synthetic {
    pub fn to_log(&self, k_core: usize) -> Result<InteractionLog> {
        build_log(&self.raw, k_core)
    }

    /// Fraction of interactions whose item lies outside the user's block.
    pub fn cross_block_fraction(&self) -> f64 {
        let cross = self
            .raw
            .iter()
            .filter(|r| {
                let u: usize = r.user_key[1..].parse().expect("generated key");
                let i: usize = r.item_key[1..].parse().expect("generated key");
                self.user_blocks[u] != self.item_blocks[i]
            })
            .count();
        cross as f64 / self.raw.len() as f64
    }

    /// Writes `user<TAB>item<TAB>timestamp` rows.
    pub fn to_tsv(&self) -> String {
        let mut s = String::with_capacity(self.raw.len() * 16);
        for r in &self.raw {
            s.push_str(&format!("{}\t{}\t{}\n", r.user_key, r.item_key, r.timestamp));
        }
        s
    }
}

fn block_of(index: usize, n: usize, n_blocks: usize) -> usize {
    index * n_blocks / n
}

/// Users and items are split into contiguous, near-equal blocks. Each user
/// draws `min + Geometric` distinct items (mean `interactions_per_user`,
/// capped at its block size); each draw stays in the user's block with
/// probability `1 - noise_rate`. Timestamps follow draw order.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<Synthetic> {
    if cfg.n_users == 0 || cfg.n_items == 0 {
        return Err(Error::InvalidArgument("need at least one user and one item".into()));
    }
    if cfg.n_blocks == 0 || cfg.n_blocks > cfg.n_users.min(cfg.n_items) {
        return Err(Error::InvalidArgument(format!(
            "n_blocks={} must be in 1..={}",
            cfg.n_blocks,
            cfg.n_users.min(cfg.n_items)
        )));
    }
    if !(0.0..=1.0).contains(&cfg.noise_rate) {
        return Err(Error::InvalidArgument(format!("noise_rate {} outside [0, 1]", cfg.noise_rate)));
    }
    let user_blocks: Vec<usize> = (0..cfg.n_users).map(|u| block_of(u, cfg.n_users, cfg.n_blocks)).collect();
    let item_blocks: Vec<usize> = (0..cfg.n_items).map(|i| block_of(i, cfg.n_items, cfg.n_blocks)).collect();
    let mut members = vec![Vec::new(); cfg.n_blocks];
    for (i, &b) in item_blocks.iter().enumerate() {
        members[b].push(i);
    }
    let smallest = members.iter().map(Vec::len).min().unwrap_or(0);
    if cfg.min_interactions > smallest {
        return Err(Error::Infeasible(format!(
            "{} distinct items per user requested but the smallest block has {smallest}",
            cfg.min_interactions
        )));
    }

    let extra_mean = (cfg.interactions_per_user - cfg.min_interactions as f64).max(0.0);
    let geometric = if extra_mean > 0.0 {
        Some(Geometric::new(1.0 / (extra_mean + 1.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut raw = Vec::new();
    let mut clock = 0i64;
    for u in 0..cfg.n_users {
        let own = &members[user_blocks[u]];
        let others: Vec<usize> = (0..cfg.n_items).filter(|&i| item_blocks[i] != user_blocks[u]).collect();
        let extra = geometric.as_ref().map_or(0, |g| g.sample(&mut rng) as usize);
        let activity = (cfg.min_interactions + extra).min(own.len()).max(1);

        let mut chosen = HashSet::with_capacity(activity);
        let mut n_cross = 0usize;
        while chosen.len() < activity {
            let cross = n_cross < others.len() && rng.random_bool(cfg.noise_rate);
            // own block always has room: activity <= own.len()
            let pool = if cross { &others } else { own };
            n_cross += cross as usize;
            let item = loop {
                let i = pool[rng.random_range(0..pool.len())];
                if !chosen.contains(&i) {
                    break i;
                }
            };
            chosen.insert(item);
            raw.push(RawInteraction::new(format!("u{u}"), format!("i{item}"), clock));
            clock += 1;
        }
    }
    Ok(Synthetic {
        raw,
        user_blocks,
        item_blocks,
    })
}
