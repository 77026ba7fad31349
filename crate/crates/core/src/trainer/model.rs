//! Trainable state and the per-batch forward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{build_norm_adjacency, init_embeddings, propagate, NormAdjacency};
use crate::csem::{self, CsemParams, GaussianDiag, Side, SideNoise};
use crate::data::DatasetBundle;
use crate::decompose::{fuse_rows, project_rows};
use crate::diffcore::{AdamState, Graph, ParamId, ParamSet, Tensor, Var};
use crate::eval::ScoreTable;
use crate::par::Execution;

use super::loss::bpr_loss;
use super::{TrainConfig, TrainError, Variant};

/// Parameters, optimizer moments and the fixed propagation graph of one model.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub config: TrainConfig,
    pub n_users: usize,
    pub n_items: usize,
    pub params: ParamSet,
    pub user_emb: ParamId,
    pub item_emb: ParamId,
    pub csem: CsemParams,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    adj: Option<NormAdjacency>,
}

/// Representations entering the click loss, plus the extraction loss when
/// the variant has one.
#[derive(Debug, Clone, Copy)]
pub struct TripleOutput {
    pub wu: Var,
    pub wp: Var,
    pub wn: Var,
    pub l_civ: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub total: Var,
    pub civ: Option<Var>,
    pub click: Var,
}

impl ModelState {
    /// Fresh model; all initial values come from `config.seed`.
    pub fn new(config: TrainConfig, bundle: &DatasetBundle) -> Result<Self, TrainError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let emb = init_embeddings(&config.backbone, bundle.n_users(), bundle.n_items(), &mut rng);
        let mut params = ParamSet::new();
        let user_emb = params.add("backbone.user", emb.users);
        let item_emb = params.add("backbone.item", emb.items);
        let csem = CsemParams::register(&mut params, config.backbone.dim, config.hidden_width(), &mut rng);
        csem.init_logvar(&mut params, config.logvar_init);
        let adam = AdamState::new(&params);
        let adj = (config.backbone.effective_layers() > 0).then(|| build_norm_adjacency(bundle));
        Ok(ModelState {
            config,
            n_users: bundle.n_users(),
            n_items: bundle.n_items(),
            params,
            user_emb,
            item_emb,
            csem,
            adam,
            epoch: 0,
            adj,
        })
    }

    /// Backbone output for every user and item.
    pub fn embeddings(&self, graph: &mut Graph) -> Result<(Var, Var), TrainError> {
        let eu = graph.param(&self.params, self.user_emb);
        let ei = graph.param(&self.params, self.item_emb);
        match &self.adj {
            Some(adj) => Ok(propagate(graph, eu, ei, adj, self.config.backbone.effective_layers())?),
            None => Ok((eu, ei)),
        }
    }

    /// Final representations of every user and item, using posterior means
    /// in place of samples.
    pub fn score_table(&self, exec: Execution) -> Result<ScoreTable, TrainError> {
        let mut graph = Graph::with_execution(exec);
        let (eu, ei) = self.embeddings(&mut graph)?;
        let (wu, wi) = if self.config.variant.uses_csem() {
            let wu = self.represent_mean(&mut graph, eu, Side::User)?;
            let wi = self.represent_mean(&mut graph, ei, Side::Item)?;
            (wu, wi)
        } else {
            (eu, ei)
        };
        Ok(ScoreTable {
            dim: self.config.backbone.dim,
            users: graph.value(wu).values().to_vec(),
            items: graph.value(wi).values().to_vec(),
        })
    }

    fn represent_mean(&self, graph: &mut Graph, w: Var, side: Side) -> Result<Var, TrainError> {
        let q_t = csem::encode_t(graph, &self.params, &self.csem, w, side)?;
        let q_c = csem::encode_c(graph, &self.params, &self.csem, w, side)?;
        self.represent(graph, w, q_t.mean, q_c.mean)
    }

    fn represent(&self, graph: &mut Graph, w: Var, z_t: Var, z_c: Var) -> Result<Var, TrainError> {
        let cfg = &self.config.decompose;
        Ok(match self.config.variant {
            Variant::Full => {
                let w_hat = project_rows(graph, z_t, w, cfg.epsilon)?;
                fuse_rows(graph, w_hat, z_c, cfg.alpha)?
            }
            Variant::CausalOnly => project_rows(graph, z_t, w, cfg.epsilon)?,
            Variant::ConOnly => z_c,
            Variant::OriginalBaseline | Variant::Ips | Variant::IpsC => w,
        })
    }

    /// Forward pass for a batch of `(user, positive, negative)` triples.
    /// The extraction loss covers users and positive items only; negative
    /// items are encoded for their representation alone.
    pub fn triple_forward<R: Rng + ?Sized>(
        &self,
        graph: &mut Graph,
        users: &[usize],
        pos: &[usize],
        neg: &[usize],
        rng: &mut R,
    ) -> Result<TripleOutput, TrainError> {
        for (&u, (&p, &n)) in users.iter().zip(pos.iter().zip(neg)) {
            if u >= self.n_users || p >= self.n_items || n >= self.n_items {
                return Err(TrainError::BadTriple { user: u, pos: p, neg: n });
            }
        }
        let (eu, ei) = self.embeddings(graph)?;
        let xu = graph.gather(eu, users)?;
        let xp = graph.gather(ei, pos)?;
        let xn = graph.gather(ei, neg)?;
        if !self.config.variant.uses_csem() {
            return Ok(TripleOutput {
                wu: xu,
                wp: xp,
                wn: xn,
                l_civ: None,
            });
        }
        let d = self.config.backbone.dim;
        let b = users.len();
        let nu = SideNoise::draw(rng, b, d);
        let np = SideNoise::draw(rng, b, d);
        let nn = SideNoise::draw(rng, b, d);
        let (l_civ, su, sp) = csem::elbo_loss(graph, &self.params, &self.csem, xu, xp, nu, np)?;
        let q_t = csem::encode_t(graph, &self.params, &self.csem, xn, Side::Item)?;
        let q_c = csem::encode_c(graph, &self.params, &self.csem, xn, Side::Item)?;
        let zn_t = csem::sample_with_noise(graph, q_t, nn.eps_t)?;
        let zn_c = csem::sample_with_noise(graph, q_c, nn.eps_c)?;
        let wu = self.represent(graph, xu, su.z_t, su.z_c)?;
        let wp = self.represent(graph, xp, sp.z_t, sp.z_c)?;
        let wn = self.represent(graph, xn, zn_t, zn_c)?;
        Ok(TripleOutput {
            wu,
            wp,
            wn,
            l_civ: Some(l_civ),
        })
    }

    /// `L_civ + L_click` for one batch; `weights` scales each triple's click
    /// loss.
    pub fn batch_loss<R: Rng + ?Sized>(
        &self,
        graph: &mut Graph,
        users: &[usize],
        pos: &[usize],
        neg: &[usize],
        weights: Option<&[f64]>,
        rng: &mut R,
    ) -> Result<BatchLoss, TrainError> {
        let out = self.triple_forward(graph, users, pos, neg, rng)?;
        let click = bpr_loss(graph, out.wu, out.wp, out.wn, weights)?;
        let total = match out.l_civ {
            Some(civ) => graph.add(civ, click)?,
            None => click,
        };
        Ok(BatchLoss {
            total,
            civ: out.l_civ,
            click,
        })
    }

    /// Posterior of the instrument block for arbitrary inputs; used by tests
    /// and diagnostics.
    pub fn instrument_posterior(&self, graph: &mut Graph, x: Tensor, side: Side) -> Result<GaussianDiag, TrainError> {
        let x = graph.constant(x);
        Ok(csem::encode_t(graph, &self.params, &self.csem, x, side)?)
    }

    /// Overwrites the named parameter, keeping its shape.
    pub fn set_param(&mut self, name: &str, values: &[f64]) -> Result<(), TrainError> {
        let id = self
            .params
            .id_of(name)
            .ok_or_else(|| TrainError::Config(format!("unknown parameter {name}")))?;
        let t = self.params.get_mut(id);
        if t.values().len() != values.len() {
            return Err(TrainError::Config(format!(
                "parameter {name} holds {} values, got {}",
                t.values().len(),
                values.len()
            )));
        }
        t.values_mut().copy_from_slice(values);
        Ok(())
    }
}
