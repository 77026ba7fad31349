//! Least-squares decomposition of treatment embeddings by the instrument
//! representation, and fusion with the conditioning-set representation.
//!
//! For a single instrument vector `z` the pseudoinverse is `z^T / ||z||^2`, so
//! the least-squares coefficient of `w` on `z` is `<z, w> / ||z||^2` and the
//! decomposed embedding is the orthogonal projection `z <z, w> / ||z||^2`.
//! Projection is applied per entity (user, positive item, negative item).

use thiserror::Error;

use crate::diffcore::{DiffError, Graph, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecomposeError {
    #[error("degenerate instrument: ||z_t|| = {norm:e} below {epsilon:e} (row {row})")]
    DegenerateInstrument { row: usize, norm: f64, epsilon: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("alpha must lie in [0, 1], got {0}")]
    BadAlpha(f64),
    #[error("epsilon must lie in (0, 1e-4], got {0}")]
    BadEpsilon(f64),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecomposeConfig {
    /// Weight of the projected embedding; `1 - alpha` goes to `z_c`.
    pub alpha: f64,
    /// Minimum instrument norm.
    pub epsilon: f64,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        DecomposeConfig {
            alpha: 0.85,
            epsilon: 1e-8,
        }
    }
}

impl DecomposeConfig {
    pub fn validate(&self) -> Result<(), DecomposeError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(DecomposeError::BadAlpha(self.alpha));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-4) {
            return Err(DecomposeError::BadEpsilon(self.epsilon));
        }
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthogonal projection of `w` onto `span(z)`.
pub fn project(z: &[f64], w: &[f64], epsilon: f64) -> Result<Vec<f64>, DecomposeError> {
    if z.len() != w.len() {
        return Err(DecomposeError::DimMismatch(z.len(), w.len()));
    }
    let zz = dot(z, z);
    if zz.sqrt() < epsilon {
        return Err(DecomposeError::DegenerateInstrument {
            row: 0,
            norm: zz.sqrt(),
            epsilon,
        });
    }
    let coef = dot(z, w) / zz;
    Ok(z.iter().map(|x| x * coef).collect())
}

/// `alpha * w_hat + (1 - alpha) * z_c`.
pub fn fuse(w_hat: &[f64], z_c: &[f64], alpha: f64) -> Result<Vec<f64>, DecomposeError> {
    if w_hat.len() != z_c.len() {
        return Err(DecomposeError::DimMismatch(w_hat.len(), z_c.len()));
    }
    Ok(w_hat
        .iter()
        .zip(z_c)
        .map(|(a, b)| alpha * a + (1.0 - alpha) * b)
        .collect())
}

pub fn reconstruct_entity(w: &[f64], z_t: &[f64], z_c: &[f64], config: &DecomposeConfig) -> Result<Vec<f64>, DecomposeError> {
    let w_hat = project(z_t, w, config.epsilon)?;
    fuse(&w_hat, z_c, config.alpha)
}

/// Row-wise differentiable projection of `w` onto `z` (both `n x d`).
pub fn project_rows(graph: &mut Graph, z: Var, w: Var, epsilon: f64) -> Result<Var, DecomposeError> {
    let (zr, zc) = graph.value(z).dims();
    let (wr, wc) = graph.value(w).dims();
    if (zr, zc) != (wr, wc) {
        return Err(DecomposeError::DimMismatch(zc, wc));
    }
    let zz = graph.sq_norm(z)?;
    if let Some((row, &n2)) = graph
        .value(zz)
        .values()
        .iter()
        .enumerate()
        .find(|(_, n2)| n2.sqrt() < epsilon)
    {
        return Err(DecomposeError::DegenerateInstrument {
            row,
            norm: n2.sqrt(),
            epsilon,
        });
    }
    let zw = graph.dot(z, w)?;
    let coef = graph.div(zw, zz)?;
    Ok(graph.mul_col(z, coef)?)
}

/// Row-wise differentiable fusion.
pub fn fuse_rows(graph: &mut Graph, w_hat: Var, z_c: Var, alpha: f64) -> Result<Var, DecomposeError> {
    let a = graph.scale(w_hat, alpha)?;
    let b = graph.scale(z_c, 1.0 - alpha)?;
    Ok(graph.add(a, b)?)
}

pub fn reconstruct_rows(
    graph: &mut Graph,
    w: Var,
    z_t: Var,
    z_c: Var,
    config: &DecomposeConfig,
) -> Result<Var, DecomposeError> {
    let w_hat = project_rows(graph, z_t, w, config.epsilon)?;
    fuse_rows(graph, w_hat, z_c, config.alpha)
}
