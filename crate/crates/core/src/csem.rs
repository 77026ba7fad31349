//! Variational extraction of the instrument representation `Z_t` and its
//! conditioning set `Z_c`.
//!
//! Every entity (user or item) is encoded from its backbone embedding by two
//! independent Gaussian encoders, one for `Z_t` and one for `Z_c`. `Z_t` is
//! regularised towards a standard normal, `Z_c` towards a conditional prior
//! produced by its own network from the same input, and a decoder
//! reconstructs the embedding from `z_t ‖ z_c` under a unit-variance Gaussian
//! likelihood. Users and items each get their own set of networks.
//!
//! Graphical reading of the design: conditioned on `Z_c`, `Z_t` reaches the
//! click outcome only through the treatment embedding, while `Z_c` blocks the
//! back-door path `Z_t <- Z_c -> Y`. The decomposition step relies on `Z_t`
//! being that instrument; nothing here checks the graph condition at runtime.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::diffcore::{DiffError, Graph, ParamId, ParamSet, Tensor, Var};

/// Encoder log-variances are clipped to `[-LOGVAR_CLIP, LOGVAR_CLIP]`.
pub const LOGVAR_CLIP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    User,
    Item,
}

impl Side {
    fn index(self) -> usize {
        match self {
            Side::User => 0,
            Side::Item => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }
}

/// One-hidden-layer perceptron with a tanh hidden activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    /// Registers the four tensors under `prefix.{w1,b1,w2,b2}` with
    /// Glorot-normal weights and zero biases.
    pub fn register<R: Rng + ?Sized>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut R,
    ) -> Mlp {
        let mut glorot = |fan_in: usize, fan_out: usize| {
            let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
            let n = Normal::new(0.0, std).expect("positive std");
            let v = (0..fan_in * fan_out).map(|_| n.sample(rng)).collect();
            Tensor::matrix(fan_in, fan_out, v).expect("finite")
        };
        let w1 = glorot(input, hidden);
        let w2 = glorot(hidden, output);
        Mlp {
            w1: params.add(format!("{prefix}.w1"), w1),
            b1: params.add(format!("{prefix}.b1"), Tensor::zeros(1, hidden)),
            w2: params.add(format!("{prefix}.w2"), w2),
            b2: params.add(format!("{prefix}.b2"), Tensor::zeros(1, output)),
        }
    }

    pub fn forward(&self, graph: &mut Graph, params: &ParamSet, x: Var) -> Result<Var, DiffError> {
        let w1 = graph.param(params, self.w1);
        let b1 = graph.param(params, self.b1);
        let w2 = graph.param(params, self.w2);
        let b2 = graph.param(params, self.b2);
        let h = graph.matmul(x, w1)?;
        let h = graph.add_row(h, b1)?;
        let h = graph.tanh(h)?;
        let o = graph.matmul(h, w2)?;
        graph.add_row(o, b2)
    }

    pub fn ids(&self) -> [ParamId; 4] {
        [self.w1, self.b1, self.w2, self.b2]
    }
}

/// Diagonal Gaussian over the rows of a batch: `mean` and clipped `logvar`
/// are both `n x D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GaussianDiag {
    pub mean: Var,
    pub logvar: Var,
}

/// Parameter handles of all extraction networks.
#[derive(Debug, Clone, PartialEq)]
pub struct CsemParams {
    pub dim: usize,
    pub hidden: usize,
    enc_t: [Mlp; 2],
    enc_c: [Mlp; 2],
    prior_c: [Mlp; 2],
    decoder: [Mlp; 2],
}

impl CsemParams {
    /// Registers every network. Latent dims of `Z_t` and `Z_c` equal `dim`.
    pub fn register<R: Rng + ?Sized>(params: &mut ParamSet, dim: usize, hidden: usize, rng: &mut R) -> Self {
        let mut make = |role: &str, input: usize, output: usize, rng: &mut R| {
            [Side::User, Side::Item]
                .map(|s| Mlp::register(params, &format!("csem.{role}.{}", s.name()), input, hidden, output, rng))
        };
        let enc_t = make("enc_t", dim, 2 * dim, rng);
        let enc_c = make("enc_c", dim, 2 * dim, rng);
        let prior_c = make("prior_c", dim, 2 * dim, rng);
        let decoder = make("decoder", 2 * dim, dim, rng);
        CsemParams {
            dim,
            hidden,
            enc_t,
            enc_c,
            prior_c,
            decoder,
        }
    }

    pub fn enc_t(&self, side: Side) -> &Mlp {
        &self.enc_t[side.index()]
    }

    pub fn enc_c(&self, side: Side) -> &Mlp {
        &self.enc_c[side.index()]
    }

    pub fn prior_c(&self, side: Side) -> &Mlp {
        &self.prior_c[side.index()]
    }

    pub fn decoder(&self, side: Side) -> &Mlp {
        &self.decoder[side.index()]
    }

    /// Sets the log-variance half of the output bias of every encoder and
    /// prior network to `value`.
    pub fn init_logvar(&self, params: &mut ParamSet, value: f64) {
        let dim = self.dim;
        for mlp in self.enc_t.iter().chain(&self.enc_c).chain(&self.prior_c) {
            params.get_mut(mlp.b2).values_mut()[dim..].fill(value);
        }
    }

    /// Every parameter id owned by the extraction networks.
    pub fn param_ids(&self) -> Vec<ParamId> {
        self.enc_t
            .iter()
            .chain(&self.enc_c)
            .chain(&self.prior_c)
            .chain(&self.decoder)
            .flat_map(Mlp::ids)
            .collect()
    }
}

fn gaussian_head(graph: &mut Graph, out: Var, dim: usize) -> Result<GaussianDiag, DiffError> {
    let mean = graph.slice_cols(out, 0, dim)?;
    let raw = graph.slice_cols(out, dim, dim)?;
    let logvar = graph.clip(raw, -LOGVAR_CLIP, LOGVAR_CLIP)?;
    Ok(GaussianDiag { mean, logvar })
}

/// Posterior `q(Z_t | x)` for a batch of entity embeddings.
pub fn encode_t(graph: &mut Graph, params: &ParamSet, csem: &CsemParams, x: Var, side: Side) -> Result<GaussianDiag, DiffError> {
    let out = csem.enc_t(side).forward(graph, params, x)?;
    gaussian_head(graph, out, csem.dim)
}

/// Posterior `q(Z_c | x)`.
pub fn encode_c(graph: &mut Graph, params: &ParamSet, csem: &CsemParams, x: Var, side: Side) -> Result<GaussianDiag, DiffError> {
    let out = csem.enc_c(side).forward(graph, params, x)?;
    gaussian_head(graph, out, csem.dim)
}

/// Conditional prior `p(Z_c | x)`.
pub fn prior_c(graph: &mut Graph, params: &ParamSet, csem: &CsemParams, x: Var, side: Side) -> Result<GaussianDiag, DiffError> {
    let out = csem.prior_c(side).forward(graph, params, x)?;
    gaussian_head(graph, out, csem.dim)
}

/// Standard-normal noise shaped `rows x dim`.
pub fn draw_noise<R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> Tensor {
    let v = (0..rows * dim).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::matrix(rows, dim, v).expect("finite noise")
}

/// Reparameterized draw `mean + exp(logvar / 2) * eps` with caller-supplied noise.
pub fn sample_with_noise(graph: &mut Graph, g: GaussianDiag, eps: Tensor) -> Result<Var, DiffError> {
    let eps = graph.constant(eps);
    let half = graph.scale(g.logvar, 0.5)?;
    let std = graph.exp(half)?;
    let noise = graph.mul(std, eps)?;
    graph.add(g.mean, noise)
}

/// Reparameterized draw with fresh noise from `rng`.
pub fn sample<R: Rng + ?Sized>(graph: &mut Graph, g: GaussianDiag, rng: &mut R) -> Result<Var, DiffError> {
    let (rows, dim) = graph.value(g.mean).dims();
    let eps = draw_noise(rng, rows, dim);
    sample_with_noise(graph, g, eps)
}

/// Reconstruction of the entity embedding from `z_t ‖ z_c`.
pub fn decode(graph: &mut Graph, params: &ParamSet, csem: &CsemParams, z_t: Var, z_c: Var, side: Side) -> Result<Var, DiffError> {
    let z = graph.concat_cols(&[z_t, z_c])?;
    csem.decoder(side).forward(graph, params, z)
}

/// Unit-variance Gaussian negative log-likelihood without its constant:
/// `0.5 * ||x - x_hat||^2` per row.
pub fn recon_nll(graph: &mut Graph, x: Var, x_hat: Var) -> Result<Var, DiffError> {
    let diff = graph.sub(x, x_hat)?;
    let sq = graph.sq_norm(diff)?;
    graph.scale(sq, 0.5)
}

/// `KL(q || N(0, I))` per row: `0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2)`.
pub fn kl_standard(graph: &mut Graph, q: GaussianDiag) -> Result<Var, DiffError> {
    let mu2 = graph.mul(q.mean, q.mean)?;
    let var = graph.exp(q.logvar)?;
    let t = graph.add(mu2, var)?;
    let t = graph.sub(t, q.logvar)?;
    let t = graph.add_scalar(t, -1.0)?;
    let s = graph.row_sum(t)?;
    graph.scale(s, 0.5)
}

/// `KL(q || p)` per row for diagonal Gaussians:
/// `0.5 * sum(lv_p - lv_q + (exp(lv_q) + (mu_q - mu_p)^2) / exp(lv_p) - 1)`.
pub fn kl_gaussians(graph: &mut Graph, q: GaussianDiag, p: GaussianDiag) -> Result<Var, DiffError> {
    if graph.value(q.mean).dims() != graph.value(p.mean).dims() {
        return Err(DiffError::ShapeMismatch {
            op: "kl_gaussians",
            shapes: vec![
                graph.value(q.mean).shape().to_vec(),
                graph.value(p.mean).shape().to_vec(),
            ],
        });
    }
    let dmu = graph.sub(q.mean, p.mean)?;
    let dmu2 = graph.mul(dmu, dmu)?;
    let var_q = graph.exp(q.logvar)?;
    let num = graph.add(var_q, dmu2)?;
    let neg_lvp = graph.scale(p.logvar, -1.0)?;
    let inv_var_p = graph.exp(neg_lvp)?;
    let ratio = graph.mul(num, inv_var_p)?;
    let t = graph.sub(p.logvar, q.logvar)?;
    let t = graph.add(t, ratio)?;
    let t = graph.add_scalar(t, -1.0)?;
    let s = graph.row_sum(t)?;
    graph.scale(s, 0.5)
}

/// One coordinate of the diagonal KL, written as `expm1(t) - t` so that it
/// never rounds below zero and is exactly zero when the two coincide.
fn kl_term(mean_q: f64, logvar_q: f64, mean_p: f64, logvar_p: f64) -> f64 {
    let t = logvar_q - logvar_p;
    let dmu = mean_q - mean_p;
    (t.exp_m1() - t) + dmu * dmu * (-logvar_p).exp()
}

/// Closed-form `KL(N(mean, exp(logvar)) || N(0, I))` on plain values.
pub fn kl_standard_value(mean: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mean
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| kl_term(m, lv, 0.0, 0.0))
        .sum::<f64>()
}

/// Closed-form KL between diagonal Gaussians on plain values.
pub fn kl_gaussians_value(mean_q: &[f64], logvar_q: &[f64], mean_p: &[f64], logvar_p: &[f64]) -> f64 {
    assert_eq!(mean_q.len(), mean_p.len(), "dimension mismatch");
    0.5 * (0..mean_q.len())
        .map(|d| kl_term(mean_q[d], logvar_q[d], mean_p[d], logvar_p[d]))
        .sum::<f64>()
}

/// Per-side result of the variational pass.
#[derive(Debug, Clone, Copy)]
pub struct SideOutput {
    pub q_t: GaussianDiag,
    pub q_c: GaussianDiag,
    pub z_t: Var,
    pub z_c: Var,
    /// `n x 1` negative ELBO per row.
    pub neg_elbo: Var,
}

/// Noise for one side of one batch: `(eps_t, eps_c)`.
#[derive(Debug, Clone)]
pub struct SideNoise {
    pub eps_t: Tensor,
    pub eps_c: Tensor,
}

impl SideNoise {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, rows: usize, dim: usize) -> Self {
        let eps_t = draw_noise(rng, rows, dim);
        let eps_c = draw_noise(rng, rows, dim);
        SideNoise { eps_t, eps_c }
    }
}

/// Encodes `x`, samples `z_t` and `z_c`, and evaluates the per-row negative
/// ELBO `recon + KL(q_t || N(0,I)) + KL(q_c || p(Z_c | x))`.
pub fn side_elbo(
    graph: &mut Graph,
    params: &ParamSet,
    csem: &CsemParams,
    x: Var,
    side: Side,
    noise: SideNoise,
) -> Result<SideOutput, DiffError> {
    let q_t = encode_t(graph, params, csem, x, side)?;
    let q_c = encode_c(graph, params, csem, x, side)?;
    let p_c = prior_c(graph, params, csem, x, side)?;
    let z_t = sample_with_noise(graph, q_t, noise.eps_t)?;
    let z_c = sample_with_noise(graph, q_c, noise.eps_c)?;
    let x_hat = decode(graph, params, csem, z_t, z_c, side)?;
    let recon = recon_nll(graph, x, x_hat)?;
    let kl_t = kl_standard(graph, q_t)?;
    let kl_c = kl_gaussians(graph, q_c, p_c)?;
    let t = graph.add(recon, kl_t)?;
    let neg_elbo = graph.add(t, kl_c)?;
    Ok(SideOutput {
        q_t,
        q_c,
        z_t,
        z_c,
        neg_elbo,
    })
}

/// Negative ELBO averaged over the batch and over the user and item sides.
pub fn elbo_loss(
    graph: &mut Graph,
    params: &ParamSet,
    csem: &CsemParams,
    users_x: Var,
    items_x: Var,
    user_noise: SideNoise,
    item_noise: SideNoise,
) -> Result<(Var, SideOutput, SideOutput), DiffError> {
    let u = side_elbo(graph, params, csem, users_x, Side::User, user_noise)?;
    let i = side_elbo(graph, params, csem, items_x, Side::Item, item_noise)?;
    let lu = graph.mean(u.neg_elbo)?;
    let li = graph.mean(i.neg_elbo)?;
    let s = graph.add(lu, li)?;
    Ok((graph.scale(s, 0.5)?, u, i))
}
