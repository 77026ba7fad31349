//! Base user/item embeddings: plain matrix factorization, or LightGCN
//! propagation over the normalized train interaction graph.

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::DatasetBundle;
use crate::diffcore::{CsrMatrix, DiffError, Graph, SparseOperator, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    Mf,
    LightGcn,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Mf => "mf",
            BackboneKind::LightGcn => "lightgcn",
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mf" => Ok(BackboneKind::Mf),
            "lightgcn" => Ok(BackboneKind::LightGcn),
            other => Err(format!("unknown backbone {other:?} (mf|lightgcn)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    pub dim: usize,
    /// Propagation layers; ignored for MF.
    pub layers: usize,
    pub init_std: f64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            kind: BackboneKind::Mf,
            dim: 128,
            layers: 2,
            init_std: 0.1,
        }
    }
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.dim < 2 {
            return Err(format!("embedding dim must be at least 2, got {}", self.dim));
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return Err(format!("init std must be positive, got {}", self.init_std));
        }
        Ok(())
    }

    /// Layers actually propagated.
    pub fn effective_layers(&self) -> usize {
        match self.kind {
            BackboneKind::Mf => 0,
            BackboneKind::LightGcn => self.layers,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub users: Tensor,
    pub items: Tensor,
}

/// I.i.d. `N(0, init_std^2)` entries.
pub fn init_embeddings<R: Rng + ?Sized>(
    config: &BackboneConfig,
    n_users: usize,
    n_items: usize,
    rng: &mut R,
) -> EmbeddingTable {
    let normal = Normal::new(0.0, config.init_std).expect("validated std");
    let mut draw = |rows: usize| {
        let v: Vec<f64> = (0..rows * config.dim).map(|_| normal.sample(rng)).collect();
        Tensor::matrix(rows, config.dim, v).expect("finite draws").with_grad()
    };
    let users = draw(n_users);
    let items = draw(n_items);
    EmbeddingTable { users, items }
}

/// `D^{-1/2} A D^{-1/2}` over the `(users + items)` bipartite train graph.
/// Users occupy rows `0..n_users`, items follow.
#[derive(Debug, Clone)]
pub struct NormAdjacency {
    op: Arc<SparseOperator>,
    n_users: usize,
    n_items: usize,
}

impl NormAdjacency {
    pub fn matrix(&self) -> &CsrMatrix {
        self.op.matrix()
    }

    pub fn operator(&self) -> Arc<SparseOperator> {
        Arc::clone(&self.op)
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }
}

pub fn build_norm_adjacency(bundle: &DatasetBundle) -> NormAdjacency {
    norm_adjacency_from_pairs(bundle.n_users(), bundle.n_items(), &bundle.train().pairs)
}

pub fn norm_adjacency_from_pairs(n_users: usize, n_items: usize, pairs: &[(usize, usize)]) -> NormAdjacency {
    let mut edges = pairs.to_vec();
    edges.sort_unstable();
    edges.dedup();
    let mut deg = vec![0usize; n_users + n_items];
    for &(u, i) in &edges {
        deg[u] += 1;
        deg[n_users + i] += 1;
    }
    let mut triplets = Vec::with_capacity(edges.len() * 2);
    for &(u, i) in &edges {
        let w = 1.0 / ((deg[u] * deg[n_users + i]) as f64).sqrt();
        triplets.push((u, n_users + i, w));
        triplets.push((n_users + i, u, w));
    }
    let n = n_users + n_items;
    NormAdjacency {
        op: Arc::new(SparseOperator::new(CsrMatrix::from_triplets(n, n, triplets))),
        n_users,
        n_items,
    }
}

/// Mean of `E^0..E^L` with `E^l = A_hat E^{l-1}`, split back into user and
/// item blocks. With zero layers the inputs are returned unchanged.
pub fn propagate(
    graph: &mut Graph,
    users: Var,
    items: Var,
    adj: &NormAdjacency,
    layers: usize,
) -> Result<(Var, Var), DiffError> {
    if layers == 0 {
        return Ok((users, items));
    }
    let e0 = graph.concat_rows(&[users, items])?;
    let mut acc = e0;
    let mut cur = e0;
    for _ in 0..layers {
        cur = graph.spmm(adj.operator(), cur)?;
        acc = graph.add(acc, cur)?;
    }
    let mean = graph.scale(acc, 1.0 / (layers + 1) as f64)?;
    let user_rows: Vec<usize> = (0..adj.n_users).collect();
    let item_rows: Vec<usize> = (adj.n_users..adj.n_users + adj.n_items).collect();
    let u = graph.gather(mean, &user_rows)?;
    let i = graph.gather(mean, &item_rows)?;
    Ok((u, i))
}

/// Embedding rows of `user` and `item`.
pub fn lookup(
    graph: &mut Graph,
    users: Var,
    items: Var,
    user: usize,
    item: usize,
) -> Result<(Var, Var), DiffError> {
    let u = graph.gather(users, &[user])?;
    let i = graph.gather(items, &[item])?;
    Ok((u, i))
}
