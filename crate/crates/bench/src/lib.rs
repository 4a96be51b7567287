//! Fixtures shared by the benchmarks in `benches/`.

use graphda::dataset::chronological_split;
use graphda::encoder::init_embeddings;
use graphda::pipeline::{baseline_laplacian, gen_synthetic, SynthConfig};
use graphda::{EmbeddingTable, SparseMatrix, SplitDataset};

pub struct Fixture {
    pub split: SplitDataset,
    pub laplacian: SparseMatrix,
    pub embeddings: EmbeddingTable,
}

/// Planted-block interactions with random embeddings of width `dim`.
pub fn fixture(n_users: usize, n_items: usize, per_user: f64, dim: usize) -> Fixture {
    let data = gen_synthetic(&SynthConfig {
        n_users,
        n_items,
        n_blocks: 10,
        interactions_per_user: per_user,
        ..SynthConfig::default()
    })
    .expect("synthetic draw");
    let split = chronological_split(&data.to_log(3).expect("k-core")).expect("split");
    let laplacian = baseline_laplacian(&split).expect("laplacian");
    let embeddings = init_embeddings(split.n_users() + split.n_items(), dim, 0, 0.1).expect("init");
    Fixture {
        split,
        laplacian,
        embeddings,
    }
}
