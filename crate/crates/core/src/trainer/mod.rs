//! Joint training of backbone and extraction networks under
//! `L_total = L_civ + L_click`, with ablation variants and popularity-weighted
//! baselines.

mod loss;
mod model;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::backbone::BackboneConfig;
use crate::data::{sample_negative, DataError, DatasetBundle, SplitKind};
use crate::decompose::{DecomposeConfig, DecomposeError};
use crate::diffcore::{DiffError, Graph};
use crate::eval::{evaluate, EvalError, MetricReport, DEFAULT_KS};
use crate::par::Execution;

pub use loss::{bpr_loss, bpr_value, ips_weight, ips_weights};
pub use model::{BatchLoss, ModelState, TripleOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    CausalOnly,
    ConOnly,
    OriginalBaseline,
    Ips,
    IpsC,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::CausalOnly,
        Variant::ConOnly,
        Variant::OriginalBaseline,
        Variant::Ips,
        Variant::IpsC,
    ];

    /// The four variants compared in ablations.
    pub const ABLATION: [Variant; 4] = [
        Variant::Full,
        Variant::CausalOnly,
        Variant::ConOnly,
        Variant::OriginalBaseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::CausalOnly => "causal",
            Variant::ConOnly => "con",
            Variant::OriginalBaseline => "original",
            Variant::Ips => "ips",
            Variant::IpsC => "ipsc",
        }
    }

    /// Whether the extraction networks take part.
    pub fn uses_csem(self) -> bool {
        matches!(self, Variant::Full | Variant::CausalOnly | Variant::ConOnly)
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let lower = s.to_ascii_lowercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == lower)
            .ok_or_else(|| format!("unknown variant {s:?} (full|causal|con|original|ips|ipsc)"))
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite { epoch: usize, batch: usize, detail: String },
    #[error("item {0} has no train positives")]
    UnseenItem(usize),
    #[error("triple ({user}, {pos}, {neg}) out of range")]
    BadTriple { user: usize, pos: usize, neg: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub backbone: BackboneConfig,
    /// Hidden width of every extraction network; 0 means twice the
    /// embedding dim.
    pub hidden: usize,
    /// Initial log-variance output of the encoders and prior networks.
    pub logvar_init: f64,
    pub decompose: DecomposeConfig,
    pub variant: Variant,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Upper bound on raw propensity weights; used by IPS-C only.
    pub ips_cap: f64,
    /// Validation interval in epochs; 0 disables it.
    pub eval_every: usize,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            backbone: BackboneConfig::default(),
            hidden: 0,
            logvar_init: 0.0,
            decompose: DecomposeConfig::default(),
            variant: Variant::Full,
            lr: 0.001,
            batch_size: 128,
            epochs: 20,
            seed: 0,
            ips_cap: 10.0,
            eval_every: 0,
            execution: Execution::Auto,
        }
    }
}

impl TrainConfig {
    pub fn hidden_width(&self) -> usize {
        if self.hidden == 0 {
            2 * self.backbone.dim
        } else {
            self.hidden
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.backbone.validate().map_err(TrainError::Config)?;
        self.decompose.validate()?;
        if !(self.logvar_init.abs() <= crate::csem::LOGVAR_CLIP) {
            return Err(TrainError::Config(format!(
                "logvar init must lie in [-{0}, {0}], got {1}",
                crate::csem::LOGVAR_CLIP,
                self.logvar_init
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("epochs must be at least 1".into()));
        }
        if self.variant == Variant::IpsC && !(self.ips_cap > 0.0) {
            return Err(TrainError::Config(format!("ips cap must be positive, got {}", self.ips_cap)));
        }
        Ok(())
    }
}

/// Per-epoch means over batches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub epoch: usize,
    pub l_civ: f64,
    pub l_click: f64,
    pub l_total: f64,
    pub seconds: f64,
}

impl LossReport {
    /// The report without its wall time, for reproducibility checks.
    pub fn losses(&self) -> (usize, f64, f64, f64) {
        (self.epoch, self.l_civ, self.l_click, self.l_total)
    }
}

#[derive(Debug, Clone)]
pub enum TrainEvent<'a> {
    Epoch(&'a LossReport),
    Validation { epoch: usize, reports: &'a [MetricReport] },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelState,
    pub reports: Vec<LossReport>,
    /// Validation metrics by epoch; epoch 0 is the untrained model.
    pub validation: Vec<(usize, Vec<MetricReport>)>,
}

pub fn train(config: TrainConfig, bundle: &DatasetBundle) -> Result<TrainOutcome, TrainError> {
    train_with(config, bundle, |_| {})
}

/// Trains from scratch, passing every report to `observer` as it is made.
pub fn train_with(
    config: TrainConfig,
    bundle: &DatasetBundle,
    observer: impl FnMut(TrainEvent<'_>),
) -> Result<TrainOutcome, TrainError> {
    let mut model = ModelState::new(config, bundle)?;
    let (reports, validation) = fit(&mut model, bundle, observer)?;
    Ok(TrainOutcome {
        model,
        reports,
        validation,
    })
}

fn validation_ks(bundle: &DatasetBundle) -> Vec<usize> {
    let most = (0..bundle.n_users()).map(|u| bundle.train_items(u).len()).max().unwrap_or(0);
    DEFAULT_KS
        .into_iter()
        .filter(|&k| k + most <= bundle.n_items())
        .collect()
}

type FitResult = (Vec<LossReport>, Vec<(usize, Vec<MetricReport>)>);

/// Runs the remaining epochs of `model.config` on `bundle`.
pub fn fit(
    model: &mut ModelState,
    bundle: &DatasetBundle,
    mut observer: impl FnMut(TrainEvent<'_>),
) -> Result<FitResult, TrainError> {
    let cfg = model.config.clone();
    let weights = ips_weights(bundle.popularity(), cfg.variant, cfg.ips_cap);
    let weighted = matches!(cfg.variant, Variant::Ips | Variant::IpsC);
    let train_pairs = &bundle.train().pairs;
    if train_pairs.is_empty() {
        return Err(TrainError::Data(DataError::Empty));
    }
    let ks = validation_ks(bundle);
    let validate = |m: &ModelState| -> Result<Vec<MetricReport>, TrainError> {
        let table = m.score_table(cfg.execution)?;
        Ok(evaluate(&table, bundle, SplitKind::Valid, &ks, cfg.execution)?)
    };
    let want_validation = cfg.eval_every > 0 && !bundle.valid().is_empty() && !ks.is_empty();

    let mut reports = Vec::new();
    let mut validation = Vec::new();
    if want_validation && model.epoch == 0 {
        let r = validate(model)?;
        observer(TrainEvent::Validation { epoch: 0, reports: &r });
        validation.push((0, r));
    }

    while model.epoch < cfg.epochs {
        let epoch = model.epoch + 1;
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..train_pairs.len()).collect();
        order.shuffle(&mut rng);
        let negatives: Vec<usize> = order
            .iter()
            .map(|&e| sample_negative(train_pairs[e].0, &mut rng, bundle))
            .collect::<Result<_, _>>()?;

        let (mut sum_civ, mut sum_click, mut batches) = (0.0, 0.0, 0usize);
        for (b, (idx, negs)) in order
            .chunks(cfg.batch_size)
            .zip(negatives.chunks(cfg.batch_size))
            .enumerate()
        {
            let non_finite = |e: TrainError| match e {
                TrainError::Diff(DiffError::NonFinite { op }) => TrainError::NonFinite {
                    epoch,
                    batch: b,
                    detail: format!("in {op}"),
                },
                other => other,
            };
            let users: Vec<usize> = idx.iter().map(|&e| train_pairs[e].0).collect();
            let pos: Vec<usize> = idx.iter().map(|&e| train_pairs[e].1).collect();
            let w: Vec<f64>;
            let batch_weights = if weighted {
                w = pos.iter().map(|&p| weights[p]).collect();
                Some(w.as_slice())
            } else {
                None
            };
            let mut graph = Graph::with_execution(cfg.execution);
            let BatchLoss { total, civ, click } = model
                .batch_loss(&mut graph, &users, &pos, negs, batch_weights, &mut rng)
                .map_err(non_finite)?;
            let l_click = graph.value(click).item();
            let l_civ = civ.map_or(0.0, |v| graph.value(v).item());
            if !graph.value(total).item().is_finite() {
                return Err(TrainError::NonFinite {
                    epoch,
                    batch: b,
                    detail: "total loss".into(),
                });
            }
            graph.backward(total).map_err(|e| non_finite(e.into()))?;
            model.params.zero_grads();
            graph.accumulate_param_grads(&mut model.params);
            model.adam.step(&mut model.params, cfg.lr)?;
            model.params.zero_grads();
            sum_civ += l_civ;
            sum_click += l_click;
            batches += 1;
        }
        model.epoch = epoch;
        let l_civ = sum_civ / batches as f64;
        let l_click = sum_click / batches as f64;
        let report = LossReport {
            epoch,
            l_civ,
            l_click,
            l_total: l_civ + l_click,
            seconds: start.elapsed().as_secs_f64(),
        };
        observer(TrainEvent::Epoch(&report));
        reports.push(report);
        if want_validation && epoch % cfg.eval_every == 0 {
            let r = validate(model)?;
            observer(TrainEvent::Validation { epoch, reports: &r });
            validation.push((epoch, r));
        }
    }
    Ok((reports, validation))
}
