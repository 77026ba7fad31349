//! The four pipeline commands, callable without going through argv.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use civrec_core::data::{
    generate_synthetic, load_interactions, prepare_bundle, read_bundle, write_bundle, DatasetBundle, PrepareOptions,
    SplitKind,
};
use civrec_core::eval::{evaluate, MetricReport};
use civrec_core::par::{self, Execution};
use civrec_core::trainer::{train_with, LossReport, TrainEvent, Variant};
use log::{debug, info};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{0}")]
    Data(#[from] civrec_core::data::DataError),
    #[error("training failed: {0}")]
    Train(#[from] civrec_core::trainer::TrainError),
    #[error("evaluation failed: {0}")]
    Eval(#[from] civrec_core::eval::EvalError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Usage(String),
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    fs::write(path, body).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub const CSV_HEADER: &str = "method,variant,K,recall,hr,ndcg,iou";

/// One row of a metric table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub variant: Variant,
    pub report: MetricReport,
}

pub fn metric_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        let m = &r.report;
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.method, r.variant, m.k, m.recall, m.hr, m.ndcg, m.iou
        );
    }
    s
}

pub fn metric_table(rows: &[MetricRow]) -> String {
    let mut s = format!(
        "{:<10} {:<9} {:>4} {:>8} {:>8} {:>8} {:>8}\n",
        "method", "variant", "K", "recall", "hr", "ndcg", "iou"
    );
    for r in rows {
        let m = &r.report;
        let _ = writeln!(
            s,
            "{:<10} {:<9} {:>4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            r.method, r.variant, m.k, m.recall, m.hr, m.ndcg, m.iou
        );
    }
    s
}

pub const RUN_LOG_HEADER: &str = "epoch,l_civ,l_click,l_total,seconds";

pub fn loss_line(r: &LossReport) -> String {
    format!("{},{:.9},{:.9},{:.9},{:.3}", r.epoch, r.l_civ, r.l_click, r.l_total, r.seconds)
}

/// Where `prepare` gets its interactions.
#[derive(Debug, Clone)]
pub enum PrepareSource {
    Log { input: PathBuf, options: PrepareOptions },
    Synthetic(RunConfig),
}

/// Builds a bundle directory and returns the summary line.
pub fn prepare(source: &PrepareSource, output: &Path) -> Result<String, CliError> {
    let (bundle, maps) = match source {
        PrepareSource::Log { input, options } => {
            let records = load_interactions(input)?;
            info!("read {} records from {}", records.len(), input.display());
            let (b, m) = prepare_bundle(&records, *options)?;
            (b, Some(m))
        }
        PrepareSource::Synthetic(cfg) => (generate_synthetic(&cfg.synthetic)?.0, None),
    };
    write_bundle(output, &bundle, maps.as_ref())?;
    Ok(summary_line(&bundle))
}

pub fn summary_line(b: &DatasetBundle) -> String {
    format!("users={} items={} interactions={}", b.n_users(), b.n_items(), b.n_interactions())
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub config: RunConfig,
    pub data: PathBuf,
    pub checkpoint: PathBuf,
    pub run_log: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub reports: Vec<LossReport>,
    pub validation: Vec<(usize, Vec<MetricReport>)>,
}

/// Trains, writing the run log as epochs finish and the checkpoint at the
/// end. `on_line` receives every log and validation line.
pub fn train_cmd(args: &TrainArgs, mut on_line: impl FnMut(&str)) -> Result<TrainSummary, CliError> {
    args.config.validate()?;
    let (bundle, _) = read_bundle(&args.data)?;
    info!("data: {}", summary_line(&bundle));
    let mut log_body = format!("{RUN_LOG_HEADER}\n");
    on_line(RUN_LOG_HEADER);
    let log_path = args
        .run_log
        .clone()
        .unwrap_or_else(|| args.checkpoint.with_extension("log"));
    let mut log_err = None;
    let outcome = train_with(args.config.train.clone(), &bundle, |e| match e {
        TrainEvent::Epoch(r) => {
            let line = loss_line(r);
            on_line(&line);
            log_body.push_str(&line);
            log_body.push('\n');
            if let Err(e) = write_file(&log_path, &log_body) {
                log_err.get_or_insert(e);
            }
        }
        TrainEvent::Validation { epoch, reports } => {
            for m in reports {
                on_line(&format!(
                    "# valid epoch={epoch} K={} recall={:.4} hr={:.4} ndcg={:.4} iou={:.4}",
                    m.k, m.recall, m.hr, m.ndcg, m.iou
                ));
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    let mut model = outcome.model;
    checkpoint::quantize(&mut model);
    checkpoint::save(&args.checkpoint, &model, &args.config)?;
    debug!("checkpoint written to {}", args.checkpoint.display());
    Ok(TrainSummary {
        reports: outcome.reports,
        validation: outcome.validation,
    })
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub split: SplitKind,
    pub ks: Vec<usize>,
    pub report: Option<PathBuf>,
    pub execution: Execution,
}

pub fn eval_cmd(args: &EvalArgs) -> Result<Vec<MetricRow>, CliError> {
    let (bundle, _) = read_bundle(&args.data)?;
    let (model, _) = checkpoint::load(&args.checkpoint, &bundle)?;
    let table = model.score_table(args.execution)?;
    let reports = evaluate(&table, &bundle, args.split, &args.ks, args.execution)?;
    let rows: Vec<MetricRow> = reports
        .into_iter()
        .map(|report| MetricRow {
            method: model.config.backbone.kind.as_str().to_string(),
            variant: model.config.variant,
            report,
        })
        .collect();
    if let Some(p) = &args.report {
        write_file(p, &metric_csv(&rows))?;
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct AblateArgs {
    pub config: RunConfig,
    pub data: PathBuf,
    pub seeds: usize,
    pub ks: Vec<usize>,
    pub split: SplitKind,
    pub variants: Vec<Variant>,
    pub report: Option<PathBuf>,
}

/// Test metrics of every variant under seeds `seed, seed+1, ...`.
pub fn ablation_runs(
    config: &RunConfig,
    bundle: &DatasetBundle,
    variants: &[Variant],
    seeds: usize,
    ks: &[usize],
    split: SplitKind,
) -> Result<Vec<(Variant, u64, Vec<MetricReport>)>, CliError> {
    let base = config.train.seed;
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| (0..seeds as u64).map(move |s| (v, base + s)))
        .collect();
    let exec = config.train.execution;
    let results = par::map_range(jobs.len(), exec, |j| -> Result<_, CliError> {
        let (variant, seed) = jobs[j];
        let mut cfg = config.train.clone();
        cfg.variant = variant;
        cfg.seed = seed;
        cfg.execution = Execution::Sequential;
        let out = civrec_core::trainer::train(cfg, bundle)?;
        let table = out.model.score_table(Execution::Sequential)?;
        let r = evaluate(&table, bundle, split, ks, Execution::Sequential)?;
        Ok((variant, seed, r))
    });
    results.into_iter().collect()
}

/// Mean over seeds, one row per (variant, K).
pub fn ablation_means(runs: &[(Variant, u64, Vec<MetricReport>)], method: &str) -> Vec<MetricRow> {
    let mut variants: Vec<Variant> = Vec::new();
    for (v, _, _) in runs {
        if !variants.contains(v) {
            variants.push(*v);
        }
    }
    let mut rows = Vec::new();
    for v in variants {
        let mine: Vec<&Vec<MetricReport>> = runs.iter().filter(|r| r.0 == v).map(|r| &r.2).collect();
        let n = mine.len() as f64;
        for (j, first) in mine[0].iter().enumerate() {
            let mean = |f: fn(&MetricReport) -> f64| mine.iter().map(|r| f(&r[j])).sum::<f64>() / n;
            rows.push(MetricRow {
                method: method.to_string(),
                variant: v,
                report: MetricReport {
                    k: first.k,
                    recall: mean(|m| m.recall),
                    hr: mean(|m| m.hr),
                    ndcg: mean(|m| m.ndcg),
                    iou: mean(|m| m.iou),
                    users: first.users,
                },
            });
        }
    }
    rows
}

pub fn ablate_cmd(args: &AblateArgs) -> Result<Vec<MetricRow>, CliError> {
    if args.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    args.config.validate()?;
    let (bundle, _) = read_bundle(&args.data)?;
    let runs = ablation_runs(&args.config, &bundle, &args.variants, args.seeds, &args.ks, args.split)?;
    for (v, s, r) in &runs {
        for m in r {
            debug!("{v} seed={s} K={} recall={:.4} iou={:.4}", m.k, m.recall, m.iou);
        }
    }
    let rows = ablation_means(&runs, args.config.train.backbone.kind.as_str());
    if let Some(p) = &args.report {
        write_file(p, &metric_csv(&rows))?;
    }
    Ok(rows)
}

/// Parses `20,50` style cut-off lists.
pub fn parse_ks(s: &str) -> Result<Vec<usize>, CliError> {
    let ks: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("bad K list {s:?}")))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(CliError::Usage(format!("bad K list {s:?}")));
    }
    Ok(ks)
}
