//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero when a criterion outside `KNOWN_GAPS` fails. Set
//! `ACCEPTANCE_STRICT=1` to make every failure fatal.

mod common;

use std::collections::HashSet;
use std::fs;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use civrec_cli::checkpoint;
use civrec_cli::commands::{self, ablation_runs, EvalArgs, PrepareSource, TrainArgs};
use civrec_cli::config::RunConfig;
use civrec_core::backbone::BackboneKind;
use civrec_core::csem::{kl_gaussians_value, kl_standard_value};
use civrec_core::data::{
    generate_synthetic, prepare_bundle, read_bundle, sample_negative, DatasetBundle, PrepareOptions, Provenance, Split,
    SplitKind, SyntheticSpec, parse_interactions,
};
use civrec_core::decompose::project;
use civrec_core::diffcore::gradcheck::{central_difference, max_relative_error};
use civrec_core::diffcore::{CsrMatrix, DiffError, Graph, SparseOperator, Tensor, Var};
use civrec_core::eval::{evaluate, hr_at_k, iou_at_k, ndcg_at_k, rank_topk, recall_at_k, MetricReport, ScoreTable};
use civrec_core::par::Execution;
use civrec_core::trainer::{bpr_loss, bpr_value, train, ModelState, TrainConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::tempdir;

/// Criteria whose failure is reported but does not fail the run.
const KNOWN_GAPS: [usize; 2] = [6, 7];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

// ---------------------------------------------------------------- 1

#[derive(Clone, Copy)]
enum Domain {
    Any,
    Positive,
    AwayFromKinks,
}

struct OpCase {
    name: &'static str,
    inputs: &'static [(usize, usize, Domain)],
    build: fn(&mut Graph, &[Var]) -> Result<Var, DiffError>,
}

fn sparse_4x3() -> Arc<SparseOperator> {
    let m = CsrMatrix::from_triplets(4, 3, vec![(0, 0, 0.5), (0, 2, -1.0), (1, 1, 2.0), (3, 0, 0.25), (3, 2, 1.5)]);
    Arc::new(SparseOperator::new(m))
}

const OPS: &[OpCase] = &[
    OpCase { name: "matmul", inputs: &[(2, 3, Domain::Any), (3, 4, Domain::Any)], build: |g, v| g.matmul(v[0], v[1]) },
    OpCase { name: "spmm", inputs: &[(3, 2, Domain::Any)], build: |g, v| g.spmm(sparse_4x3(), v[0]) },
    OpCase { name: "add", inputs: &[(3, 2, Domain::Any), (3, 2, Domain::Any)], build: |g, v| g.add(v[0], v[1]) },
    OpCase { name: "sub", inputs: &[(3, 2, Domain::Any), (3, 2, Domain::Any)], build: |g, v| g.sub(v[0], v[1]) },
    OpCase { name: "add_row", inputs: &[(3, 4, Domain::Any), (1, 4, Domain::Any)], build: |g, v| g.add_row(v[0], v[1]) },
    OpCase { name: "mul", inputs: &[(3, 2, Domain::Any), (3, 2, Domain::Any)], build: |g, v| g.mul(v[0], v[1]) },
    OpCase { name: "mul_col", inputs: &[(3, 4, Domain::Any), (3, 1, Domain::Any)], build: |g, v| g.mul_col(v[0], v[1]) },
    OpCase { name: "div", inputs: &[(3, 2, Domain::Any), (3, 2, Domain::Positive)], build: |g, v| g.div(v[0], v[1]) },
    OpCase { name: "concat_cols", inputs: &[(3, 2, Domain::Any), (3, 1, Domain::Any)], build: |g, v| g.concat_cols(&[v[0], v[1]]) },
    OpCase { name: "concat_rows", inputs: &[(2, 3, Domain::Any), (1, 3, Domain::Any)], build: |g, v| g.concat_rows(&[v[0], v[1]]) },
    OpCase { name: "slice_cols", inputs: &[(3, 4, Domain::Any)], build: |g, v| g.slice_cols(v[0], 1, 2) },
    OpCase { name: "gather", inputs: &[(3, 2, Domain::Any)], build: |g, v| g.gather(v[0], &[2, 0, 2, 1]) },
    OpCase { name: "sum", inputs: &[(3, 2, Domain::Any)], build: |g, v| g.sum(v[0]) },
    OpCase { name: "mean", inputs: &[(3, 2, Domain::Any)], build: |g, v| g.mean(v[0]) },
    OpCase { name: "row_sum", inputs: &[(3, 4, Domain::Any)], build: |g, v| g.row_sum(v[0]) },
    OpCase { name: "dot", inputs: &[(3, 4, Domain::Any), (3, 4, Domain::Any)], build: |g, v| g.dot(v[0], v[1]) },
    OpCase { name: "sq_norm", inputs: &[(3, 4, Domain::Any)], build: |g, v| g.sq_norm(v[0]) },
    OpCase { name: "sigmoid", inputs: &[(3, 2, Domain::Any)], build: |g, v| g.sigmoid(v[0]) },
    OpCase { name: "ln", inputs: &[(3, 2, Domain::Positive)], build: |g, v| g.ln(v[0]) },
    OpCase { name: "exp", inputs: &[(3, 2, Domain::Any)], build: |g, v| g.exp(v[0]) },
    OpCase { name: "softplus", inputs: &[(3, 2, Domain::Any)], build: |g, v| g.softplus(v[0]) },
    OpCase { name: "tanh", inputs: &[(3, 2, Domain::Any)], build: |g, v| g.tanh(v[0]) },
    OpCase { name: "scale", inputs: &[(3, 2, Domain::Any)], build: |g, v| g.scale(v[0], -1.7) },
    OpCase { name: "add_scalar", inputs: &[(3, 2, Domain::Any)], build: |g, v| g.add_scalar(v[0], 0.3) },
    OpCase { name: "clip", inputs: &[(4, 3, Domain::AwayFromKinks)], build: |g, v| g.clip(v[0], -0.5, 0.5) },
];

fn draw_input(rng: &mut ChaCha8Rng, n: usize, d: Domain) -> Vec<f64> {
    match d {
        Domain::Any => uniform(rng, n, -1.5, 1.5),
        Domain::Positive => uniform(rng, n, 0.5, 2.0),
        // keep every entry at least 1e-2 from the clip bounds
        Domain::AwayFromKinks => uniform(rng, n, -1.0, 1.0)
            .into_iter()
            .map(|x| if (x.abs() - 0.5).abs() < 1e-2 { x * 1.1 } else { x })
            .collect(),
    }
}

/// `sum(op(inputs) * R)` for a fixed random `R`, plus input gradients.
fn op_loss(case: &OpCase, inputs: &[Vec<f64>], seed: u64) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .zip(inputs)
        .map(|(&(r, c, _), v)| g.variable(Tensor::matrix(r, c, v.clone()).unwrap()))
        .collect();
    let out = (case.build)(&mut g, &vars).unwrap();
    let (r, c) = g.value(out).dims();
    let mut wrng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = g.constant(Tensor::matrix(r, c, uniform(&mut wrng, r * c, -1.0, 1.0)).unwrap());
    let m = g.mul(out, w).unwrap();
    let loss = g.sum(m).unwrap();
    g.backward(loss).unwrap();
    let grads = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();
    (g.value(loss).item(), grads)
}

fn op_check(case: &OpCase, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = case.inputs.iter().map(|&(r, c, d)| draw_input(&mut rng, r * c, d)).collect();
    let (_, analytic) = op_loss(case, &inputs, seed);
    let mut worst = 0.0f64;
    for k in 0..inputs.len() {
        let numeric = central_difference(
            |x| {
                let mut probe = inputs.clone();
                probe[k] = x.to_vec();
                op_loss(case, &probe, seed).0
            },
            &inputs[k],
            1e-5,
        );
        worst = worst.max(max_relative_error(&analytic[k], &numeric));
    }
    worst
}

/// Finite-difference check of `L_civ + L_click` with respect to every
/// parameter of a dim-4, 8-user model.
fn total_loss_check(seed: u64) -> f64 {
    let spec = SyntheticSpec {
        n_users: 8,
        n_items: 12,
        latent_dim: 4,
        positives_per_user: 5,
        seed,
        ..SyntheticSpec::default()
    };
    let (bundle, _) = generate_synthetic(&spec).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.backbone.dim = 4;
    cfg.backbone.init_std = 0.5;
    if seed % 2 == 1 {
        cfg.backbone.kind = BackboneKind::LightGcn;
        cfg.backbone.layers = 2;
    }
    cfg.seed = seed;
    let model = ModelState::new(cfg, &bundle).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    let pairs = &bundle.train().pairs;
    let users: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let pos: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let neg: Vec<usize> = users.iter().map(|&u| sample_negative(u, &mut rng, &bundle).unwrap()).collect();

    let loss = |m: &ModelState, grads: bool| -> (f64, Option<ModelState>) {
        let mut g = Graph::new();
        let mut noise = ChaCha8Rng::seed_from_u64(seed + 1000);
        let l = m.batch_loss(&mut g, &users, &pos, &neg, None, &mut noise).unwrap();
        let value = g.value(l.total).item();
        if !grads {
            return (value, None);
        }
        g.backward(l.total).unwrap();
        let mut with = m.clone();
        with.params.zero_grads();
        g.accumulate_param_grads(&mut with.params);
        (value, Some(with))
    };
    let graded = loss(&model, true).1.unwrap();
    let ids: Vec<_> = model.params.ids().collect();
    let mut worst = 0.0f64;
    for id in ids {
        let analytic = graded.params.get(id).grad().unwrap().to_vec();
        let x0 = model.params.get(id).values().to_vec();
        let numeric = central_difference(
            |x| {
                let mut probe = model.clone();
                probe.params.get_mut(id).values_mut().copy_from_slice(x);
                loss(&probe, false).0
            },
            &x0,
            1e-5,
        );
        worst = worst.max(max_relative_error(&analytic, &numeric));
    }
    worst
}

fn criterion_gradients() -> Verdict {
    let seeds = 100;
    let mut worst_op = ("", 0.0f64);
    let mut worst_total = 0.0f64;
    for seed in 0..seeds {
        for case in OPS {
            let e = op_check(case, seed);
            if e > worst_op.1 {
                worst_op = (case.name, e);
            }
        }
        worst_total = worst_total.max(total_loss_check(seed));
    }
    let pass = worst_op.1 < 1e-4 && worst_total < 1e-4;
    verdict(
        pass,
        format!(
            "{} ops and L_total over {seeds} seeds; worst op rel err {:.2e} ({}), worst L_total rel err {:.2e}",
            OPS.len(),
            worst_op.1,
            worst_op.0,
            worst_total
        ),
    )
}

// ---------------------------------------------------------------- 2

fn log_density(z: &[f64], mean: &[f64], logvar: &[f64]) -> f64 {
    z.iter()
        .zip(mean.iter().zip(logvar))
        .map(|(x, (m, lv))| -0.5 * ((2.0 * std::f64::consts::PI).ln() + lv + (x - m).powi(2) / lv.exp()))
        .sum()
}

/// Mean and standard error of a sample.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

fn criterion_kl() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (dim, pairs) = (3, 50_000);
    let zero = vec![0.0; dim];
    let (mut worst, mut worst_z) = (0.0f64, 0.0f64);
    let mut nonneg = true;
    let mut coincide = kl_standard_value(&zero, &zero) == 0.0;
    for _ in 0..50 {
        // wider log-variance ranges push the sampling error alone past 0.01
        let (mq, lq) = (uniform(&mut rng, dim, -1.0, 1.0), uniform(&mut rng, dim, -0.5, 0.5));
        let (mp, lp) = (uniform(&mut rng, dim, -1.0, 1.0), uniform(&mut rng, dim, -0.5, 0.5));
        let ks = kl_standard_value(&mq, &lq);
        let kg = kl_gaussians_value(&mq, &lq, &mp, &lp);
        nonneg &= ks >= 0.0 && kg >= 0.0;
        coincide &= kl_gaussians_value(&mq, &lq, &mq, &lq) == 0.0;
        // antithetic pairs: 2 * pairs = 1e5 samples from q
        let (mut vs, mut vg) = (Vec::with_capacity(pairs), Vec::with_capacity(pairs));
        let mut z = vec![0.0; dim];
        for _ in 0..pairs {
            let eps: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let (mut s, mut g) = (0.0, 0.0);
            for sign in [1.0, -1.0] {
                for d in 0..dim {
                    z[d] = mq[d] + (0.5 * lq[d]).exp() * sign * eps[d];
                }
                let lq_z = log_density(&z, &mq, &lq);
                s += 0.5 * (lq_z - log_density(&z, &zero, &zero));
                g += 0.5 * (lq_z - log_density(&z, &mp, &lp));
            }
            vs.push(s);
            vg.push(g);
        }
        for (closed, samples) in [(ks, &vs), (kg, &vg)] {
            let (m, se) = mean_se(samples);
            worst = worst.max((m - closed).abs());
            worst_z = worst_z.max((m - closed).abs() / se);
        }
    }
    verdict(
        nonneg && coincide && worst < 0.01,
        format!(
            "50 Gaussians, 1e5 samples each; worst |closed - MC| {worst:.4} ({worst_z:.1} standard errors); nonnegative {nonneg}; zero at coincidence {coincide}"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn criterion_projection() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut idem, mut orth, mut scale, mut ls) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut contraction = true;
    for _ in 0..1000 {
        let d = rng.random_range(1..=16);
        let z = uniform(&mut rng, d, -5.0, 5.0);
        let w = uniform(&mut rng, d, -5.0, 5.0);
        if dot(&z, &z).sqrt() < 1e-3 {
            continue;
        }
        let p = project(&z, &w, 1e-8).unwrap();
        let pp = project(&z, &p, 1e-8).unwrap();
        idem = p.iter().zip(&pp).map(|(a, b)| (a - b).abs()).fold(idem, f64::max);
        let r: Vec<f64> = w.iter().zip(&p).map(|(a, b)| a - b).collect();
        orth = orth.max(dot(&r, &z).abs());
        let c = rng.random_range(0.1..10.0) * if rng.random::<bool>() { 1.0 } else { -1.0 };
        let cz: Vec<f64> = z.iter().map(|x| c * x).collect();
        let ps = project(&cz, &w, 1e-8).unwrap();
        scale = p.iter().zip(&ps).map(|(a, b)| (a - b).abs()).fold(scale, f64::max);
        contraction &= dot(&p, &p).sqrt() <= dot(&w, &w).sqrt() * (1.0 + 1e-12);
        // normal equations (z^T z) b = z^T w
        let b = dot(&z, &w) / dot(&z, &z);
        ls = p.iter().zip(&z).map(|(a, zi)| (a - b * zi).abs()).fold(ls, f64::max);
    }
    let pass = idem <= 1e-12 && orth <= 1e-10 && scale <= 1e-10 && contraction && ls <= 1e-10;
    verdict(
        pass,
        format!("1000 pairs; idempotence {idem:.1e}, orthogonality {orth:.1e}, scale {scale:.1e}, LS oracle {ls:.1e}, contraction {contraction}"),
    )
}

// ---------------------------------------------------------------- 4

fn set(v: &[usize]) -> HashSet<usize> {
    v.iter().copied().collect()
}

/// Per-user metrics by exhaustive sorting of every candidate.
fn brute_force(table: &ScoreTable, bundle: &DatasetBundle, k: usize) -> MetricReport {
    let relevant = bundle.test().by_user(bundle.n_users());
    let mut counts: Vec<(usize, usize)> = bundle.popularity().iter().copied().enumerate().collect();
    counts.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let popular: HashSet<usize> = counts[..k].iter().map(|c| c.0).collect();
    let (mut rec, mut hr, mut nd, mut iou, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for u in 0..bundle.n_users() {
        if relevant[u].is_empty() {
            continue;
        }
        let scores = table.scores(u);
        let mut cand: Vec<usize> = (0..bundle.n_items()).filter(|i| !bundle.train_items(u).contains(i)).collect();
        cand.sort_by(|a, b| scores[*b].partial_cmp(&scores[*a]).unwrap().then(a.cmp(b)));
        let top = &cand[..k];
        let rel = set(&relevant[u]);
        let hits: Vec<usize> = (0..k).filter(|&r| rel.contains(&top[r])).collect();
        rec += hits.len() as f64 / rel.len() as f64;
        hr += if hits.is_empty() { 0.0 } else { 1.0 };
        let dcg: f64 = hits.iter().map(|&r| 1.0 / ((r + 2) as f64).log2()).sum();
        let idcg: f64 = (0..k.min(rel.len())).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
        nd += dcg / idcg;
        let ts = set(top);
        iou += ts.intersection(&popular).count() as f64 / ts.union(&popular).count() as f64;
        n += 1;
    }
    let n_f = n as f64;
    MetricReport {
        k,
        recall: rec / n_f,
        hr: hr / n_f,
        ndcg: nd / n_f,
        iou: iou / n_f,
        users: n,
    }
}

fn random_fixture(rng: &mut ChaCha8Rng) -> (DatasetBundle, ScoreTable) {
    let (nu, ni, dim) = (5, 12, 3);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for u in 0..nu {
        for i in 0..ni {
            match rng.random_range(0..6) {
                0 => train.push((u, i)),
                1 => test.push((u, i)),
                _ => {}
            }
        }
    }
    if test.is_empty() {
        test.push((0, 0));
        train.retain(|&p| p != (0, 0));
    }
    let bundle = DatasetBundle::new(
        nu,
        ni,
        Split::uniform(train, Provenance::Biased),
        Split::default(),
        Split::uniform(test, Provenance::Random),
        0,
    )
    .unwrap();
    // coarse values make ties common
    let mut coarse = |n| (0..n).map(|_| rng.random_range(-2i32..=2) as f64).collect::<Vec<_>>();
    let table = ScoreTable {
        dim,
        users: coarse(nu * dim),
        items: coarse(ni * dim),
    };
    (bundle, table)
}

fn criterion_metrics() -> Verdict {
    let mut fails = Vec::new();
    let mut check = |ok: bool, what: &str| {
        if !ok {
            fails.push(what.to_string());
        }
    };
    let scores = [0.9, 0.1, 0.5];
    check(rank_topk(&scores, &[], 2).unwrap() == [0, 2], "rank order");
    check(rank_topk(&scores, &[0], 2).unwrap() == [2, 1], "rank exclusion");
    check(rank_topk(&[0.3; 4], &[], 3).unwrap() == [0, 1, 2], "rank ties");
    check(rank_topk(&scores, &[0], 3).is_err(), "K beyond candidates");
    check(recall_at_k(&[1, 2], &set(&[1])) == Some(1.0), "recall hit");
    check(recall_at_k(&[1, 2], &set(&[1, 7])) == Some(0.5), "recall half");
    check(recall_at_k(&[1, 2], &set(&[7])) == Some(0.0), "recall disjoint");
    check(recall_at_k(&[1, 2], &set(&[])).is_none(), "empty relevant skipped");
    check(hr_at_k(&[4, 1, 2], &set(&[1, 9])) == Some(1.0) && hr_at_k(&[4], &set(&[1])) == Some(0.0), "hit rate");
    let rank2 = ndcg_at_k(&[5, 1, 6], &set(&[1])).unwrap();
    check((rank2 - 0.6309).abs() < 1e-4 && (rank2 - 1.0 / 3f64.log2()).abs() < 1e-15, "ndcg rank 2");
    check(ndcg_at_k(&[1, 5], &set(&[1])) == Some(1.0), "ndcg rank 1");
    check(ndcg_at_k(&[1, 2, 3], &set(&[3, 1, 2])) == Some(1.0), "ndcg perfect");
    check(iou_at_k(&[1, 2, 3], &set(&[2, 3, 4])) == 0.5, "iou half");
    check(iou_at_k(&[1, 2], &set(&[1, 2])) == 1.0 && iou_at_k(&[1], &set(&[2])) == 0.0, "iou ends");

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut oracle_worst, mut monotone) = (0.0f64, true);
    for _ in 0..300 {
        let (bundle, table) = random_fixture(&mut rng);
        let max_k = (0..5).map(|u| 12 - bundle.train_items(u).len()).min().unwrap();
        let ks: Vec<usize> = (1..=max_k.min(6)).collect();
        let got = evaluate(&table, &bundle, SplitKind::Test, &ks, Execution::Auto).unwrap();
        for r in &got {
            let b = brute_force(&table, &bundle, r.k);
            let diff = [r.recall - b.recall, r.hr - b.hr, r.ndcg - b.ndcg, r.iou - b.iou]
                .iter()
                .fold(0.0f64, |m, d| m.max(d.abs()));
            oracle_worst = oracle_worst.max(diff);
            monotone &= r.users == b.users;
        }
        let relevant = bundle.test().by_user(5);
        for u in (0..5).filter(|&u| !relevant[u].is_empty()) {
            let top = table.rank_topk(u, *ks.last().unwrap(), &bundle).unwrap();
            let rel = set(&relevant[u]);
            for w in ks.windows(2) {
                let (a, b) = (&top[..w[0]], &top[..w[1]]);
                monotone &= recall_at_k(a, &rel) <= recall_at_k(b, &rel) && hr_at_k(a, &rel) <= hr_at_k(b, &rel);
            }
        }
    }
    check(oracle_worst < 1e-12, "brute-force oracle");
    check(monotone, "monotone in K");
    verdict(
        fails.is_empty(),
        format!(
            "worked examples, 300 random fixtures vs exhaustive oracle (worst {oracle_worst:.1e}), monotone in K: {monotone}{}",
            if fails.is_empty() { String::new() } else { format!("; failed: {}", fails.join(", ")) }
        ),
    )
}

// ---------------------------------------------------------------- 5

fn criterion_protocol() -> Verdict {
    let dir = tempdir().unwrap();
    let log_text = common::rating_log();
    let log = dir.path().join("ratings.csv");
    fs::write(&log, &log_text).unwrap();
    let out = dir.path().join("bundle");
    let options = PrepareOptions {
        seed: 11,
        ..PrepareOptions::default()
    };
    let source = PrepareSource::Log {
        input: log.clone(),
        options,
    };
    let summary = commands::prepare(&source, &out).unwrap();
    let (bundle, maps) = read_bundle(&out).unwrap();
    let maps = maps.unwrap();
    let n = bundle.n_interactions() as f64;
    let near = |len: usize, share: f64| (len as f64 - share * n).abs() <= 1.0;
    let sizes = near(bundle.train().len(), 0.7) && near(bundle.valid().len(), 0.1) && near(bundle.test().len(), 0.2);

    let (direct, _) = prepare_bundle(&parse_interactions(&log_text).unwrap(), options).unwrap();
    let random_count = [direct.train(), direct.valid(), direct.test()]
        .iter()
        .flat_map(|s| s.provenance.iter())
        .filter(|p| **p == Provenance::Random)
        .count();
    let holdout_random = direct
        .valid()
        .provenance
        .iter()
        .chain(&direct.test().provenance)
        .all(|p| *p == Provenance::Random);
    let subset = (random_count as f64 - 0.4 * n).abs() <= 1.0;
    let same = |a: &Split, b: &Split| set_of(&a.pairs) == set_of(&b.pairs);
    let files_match = same(bundle.train(), direct.train()) && same(bundle.valid(), direct.valid()) && same(bundle.test(), direct.test());

    let kept: HashSet<(String, String)> = [bundle.train(), bundle.valid(), bundle.test()]
        .iter()
        .flat_map(|s| s.pairs.iter())
        .map(|&(u, i)| {
            (
                maps.users.external(u).unwrap().to_string(),
                maps.items.external(i).unwrap().to_string(),
            )
        })
        .collect();
    let oracle = common::brute_force_kcore(&common::positive_pairs(&log_text), 10);
    let kcore = kept == oracle;
    verdict(
        sizes && holdout_random && subset && files_match && kcore,
        format!(
            "{summary}; splits {}/{}/{} (70:10:20 within 1: {sizes}); valid/test from random subset: {holdout_random}; random subset 40%: {subset}; ten-core equals brute force: {kcore}",
            bundle.train().len(),
            bundle.valid().len(),
            bundle.test().len()
        ),
    )
}

fn set_of(pairs: &[(usize, usize)]) -> HashSet<(usize, usize)> {
    pairs.iter().copied().collect()
}

// ---------------------------------------------------------------- 6, 7

const SEEDS: u64 = 5;

/// Recall@20 and IOU@20 of full, causal, con and original for one seed.
fn synthetic_runs(seed: u64) -> Vec<(Variant, f64, f64)> {
    let spec = SyntheticSpec {
        seed,
        confounder_strength: 3.0,
        ..SyntheticSpec::default()
    };
    let (bundle, _) = generate_synthetic(&spec).unwrap();
    let mut cfg = RunConfig::default();
    cfg.train.backbone.dim = 16;
    cfg.train.lr = 0.01;
    cfg.train.epochs = 30;
    cfg.train.seed = seed;
    let runs = ablation_runs(&cfg, &bundle, &Variant::ABLATION, 1, &[20], SplitKind::Test).unwrap();
    runs.into_iter().map(|(v, _, r)| (v, r[0].recall, r[0].iou)).collect()
}

fn criteria_debiasing() -> (Verdict, Verdict, Duration) {
    let start = Instant::now();
    let all: Vec<Vec<(Variant, f64, f64)>> = (0..SEEDS).map(synthetic_runs).collect();
    let elapsed = start.elapsed();
    let get = |runs: &[(Variant, f64, f64)], v: Variant| *runs.iter().find(|r| r.0 == v).unwrap();
    let (mut recall_up, mut iou_down, mut over_causal, mut con_extreme) = (0, 0, 0, 0);
    let mut table = Vec::new();
    for runs in &all {
        let (full, causal, con, orig) = (
            get(runs, Variant::Full),
            get(runs, Variant::CausalOnly),
            get(runs, Variant::ConOnly),
            get(runs, Variant::OriginalBaseline),
        );
        recall_up += (full.1 > orig.1) as usize;
        iou_down += (full.2 < orig.2) as usize;
        over_causal += (full.1 >= causal.1) as usize;
        con_extreme += (con.2 > full.2 && con.2 > causal.2 && con.1 < full.1 && con.1 < causal.1) as usize;
        table.push(format!(
            "R/IOU full {:.3}/{:.3} causal {:.3}/{:.3} con {:.3}/{:.3} original {:.3}/{:.3}",
            full.1, full.2, causal.1, causal.2, con.1, con.2, orig.1, orig.2
        ));
    }
    for (s, line) in table.iter().enumerate() {
        println!("    seed {s}: {line}");
    }
    let six = verdict(
        recall_up >= 4 && iou_down >= 4 && over_causal >= 3 && elapsed < Duration::from_secs(600),
        format!(
            "full beats original on recall in {recall_up}/5, on IOU in {iou_down}/5; full >= causal on recall in {over_causal}/5"
        ),
    );
    let seven = verdict(
        con_extreme * 2 > SEEDS as usize,
        format!("con has highest IOU and lowest recall of the three variants in {con_extreme}/5 seeds"),
    );
    (six, seven, elapsed)
}

// ---------------------------------------------------------------- 8

fn small_config() -> RunConfig {
    let mut c = RunConfig::default();
    c.synthetic.n_users = 60;
    c.synthetic.n_items = 40;
    c.synthetic.positives_per_user = 10;
    c.synthetic.seed = 8;
    c.train.backbone.dim = 8;
    c.train.epochs = 4;
    c.train.batch_size = 64;
    c.train.seed = 8;
    c
}

fn pipeline_artifacts(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let cfg = small_config();
    let data = root.join("data");
    commands::prepare(&PrepareSource::Synthetic(cfg.clone()), &data).unwrap();
    let ckpt = root.join("model.ckpt");
    let args = TrainArgs {
        config: cfg,
        data: data.clone(),
        checkpoint: ckpt.clone(),
        run_log: None,
    };
    commands::train_cmd(&args, |_| {}).unwrap();
    let report = root.join("metrics.csv");
    commands::eval_cmd(&EvalArgs {
        checkpoint: ckpt.clone(),
        data: data.clone(),
        split: SplitKind::Test,
        ks: vec![5, 10, 20],
        report: Some(report.clone()),
        execution: Execution::Auto,
    })
    .unwrap();
    let mut out: Vec<(String, Vec<u8>)> = ["meta.txt", "train.txt", "valid.txt", "test.txt"]
        .iter()
        .map(|f| (f.to_string(), fs::read(data.join(f)).unwrap()))
        .collect();
    out.push(("checkpoint".into(), fs::read(&ckpt).unwrap()));
    out.push(("metrics".into(), fs::read(&report).unwrap()));
    // the last run-log column is wall time
    let log = fs::read_to_string(ckpt.with_extension("log")).unwrap();
    let stripped: String = log.lines().map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n").collect();
    out.push(("run log".into(), stripped.into_bytes()));
    out
}

fn criterion_determinism() -> Verdict {
    let (a, b) = (tempdir().unwrap(), tempdir().unwrap());
    let (x, y) = (pipeline_artifacts(a.path()), pipeline_artifacts(b.path()));
    let differing: Vec<&str> = x.iter().zip(&y).filter(|(p, q)| p.1 != q.1).map(|(p, _)| p.0.as_str()).collect();

    let cfg = small_config();
    let (bundle, _) = generate_synthetic(&cfg.synthetic).unwrap();
    let dir = tempdir().unwrap();
    let mut worst = 0.0f64;
    for variant in Variant::ALL {
        let mut c = cfg.clone();
        c.train.variant = variant;
        let model = train(c.train.clone(), &bundle).unwrap().model;
        let before = evaluate(&model.score_table(Execution::Auto).unwrap(), &bundle, SplitKind::Test, &[5, 10, 20], Execution::Auto).unwrap();
        let path = dir.path().join(format!("{variant}.ckpt"));
        checkpoint::save(&path, &model, &c).unwrap();
        let (loaded, _) = checkpoint::load(&path, &bundle).unwrap();
        let after = evaluate(&loaded.score_table(Execution::Auto).unwrap(), &bundle, SplitKind::Test, &[5, 10, 20], Execution::Auto).unwrap();
        for (p, q) in before.iter().zip(&after) {
            for d in [p.recall - q.recall, p.hr - q.hr, p.ndcg - q.ndcg, p.iou - q.iou] {
                worst = worst.max(d.abs());
            }
        }
    }
    verdict(
        differing.is_empty() && worst <= 1e-5,
        format!(
            "two full pipeline runs byte-identical: {}; checkpoint round trip worst metric change {worst:.1e} over {} variants",
            if differing.is_empty() { "yes".to_string() } else { format!("no ({})", differing.join(", ")) },
            Variant::ALL.len()
        ),
    )
}

// ---------------------------------------------------------------- 9

/// Every item is a train positive of exactly five users.
fn uniform_popularity_bundle() -> DatasetBundle {
    let n = 20;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for u in 0..n {
        for j in 0..7 {
            let pair = (u, (u + j) % n);
            if j < 5 {
                train.push(pair);
            } else {
                test.push(pair);
            }
        }
    }
    DatasetBundle::new(
        n,
        n,
        Split::uniform(train, Provenance::Biased),
        Split::default(),
        Split::uniform(test, Provenance::Random),
        0,
    )
    .unwrap()
}

fn criterion_reductions() -> Verdict {
    let spec = SyntheticSpec {
        n_users: 50,
        n_items: 40,
        positives_per_user: 10,
        ..SyntheticSpec::default()
    };
    let (bundle, _) = generate_synthetic(&spec).unwrap();
    let mut mf = TrainConfig::default();
    mf.backbone.dim = 8;
    mf.epochs = 3;
    mf.batch_size = 64;
    let mut gcn = mf.clone();
    gcn.backbone.kind = BackboneKind::LightGcn;
    gcn.backbone.layers = 0;
    let mut lightgcn_zero = true;
    for variant in [Variant::Full, Variant::OriginalBaseline] {
        let (mut a, mut b) = (mf.clone(), gcn.clone());
        a.variant = variant;
        b.variant = variant;
        let (ra, rb) = (train(a, &bundle).unwrap(), train(b, &bundle).unwrap());
        let la: Vec<_> = ra.reports.iter().map(|r| r.losses()).collect();
        let lb: Vec<_> = rb.reports.iter().map(|r| r.losses()).collect();
        lightgcn_zero &= la == lb && ra.model.params.get(ra.model.user_emb).values() == rb.model.params.get(rb.model.user_emb).values();
    }

    let mut bpr_worst = 0.0f64;
    for s in [-3.0, 0.0, 0.25, 7.5] {
        bpr_worst = bpr_worst.max((bpr_value(s, s) - std::f64::consts::LN_2).abs());
    }
    let mut g = Graph::new();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let wu = g.constant(Tensor::matrix(4, 3, uniform(&mut rng, 12, -1.0, 1.0)).unwrap());
    let wp = g.constant(Tensor::matrix(4, 3, uniform(&mut rng, 12, -1.0, 1.0)).unwrap());
    let equal = bpr_loss(&mut g, wu, wp, wp, None).unwrap();
    bpr_worst = bpr_worst.max((g.value(equal).item() - std::f64::consts::LN_2).abs());

    // the baseline's batch loss is textbook BPR on raw embeddings
    let mut base = mf.clone();
    base.variant = Variant::OriginalBaseline;
    let model = ModelState::new(base, &bundle).unwrap();
    let (users, pos, neg) = ([0usize, 1, 2], [1usize, 2, 3], [4usize, 5, 6]);
    let mut g = Graph::new();
    let l = model.batch_loss(&mut g, &users, &pos, &neg, None, &mut rng).unwrap();
    let eu = model.params.get(model.user_emb);
    let ei = model.params.get(model.item_emb);
    let textbook: f64 = (0..3)
        .map(|j| {
            let x = dot(eu.row(users[j]), ei.row(pos[j])) - dot(eu.row(users[j]), ei.row(neg[j]));
            (1.0 + (-x).exp()).ln()
        })
        .sum::<f64>()
        / 3.0;
    let textbook_ok = l.civ.is_none() && (g.value(l.total).item() - textbook).abs() < 1e-12;

    let uniform_bundle = uniform_popularity_bundle();
    let mut plain = mf.clone();
    plain.variant = Variant::OriginalBaseline;
    plain.epochs = 5;
    let reference = train(plain.clone(), &uniform_bundle).unwrap();
    let mut ips_same = true;
    for (variant, cap) in [(Variant::Ips, 10.0), (Variant::IpsC, 2.0)] {
        let mut c = plain.clone();
        c.variant = variant;
        c.ips_cap = cap;
        let out = train(c, &uniform_bundle).unwrap();
        let same_losses = out.reports.iter().zip(&reference.reports).all(|(a, b)| a.losses() == b.losses());
        let same_params = out.model.params.iter().zip(reference.model.params.iter()).all(|(a, b)| a.2.values() == b.2.values());
        ips_same &= same_losses && same_params;
    }
    verdict(
        lightgcn_zero && bpr_worst <= 1e-12 && textbook_ok && ips_same,
        format!(
            "0-layer LightGCN equals MF: {lightgcn_zero}; BPR at equal scores off ln 2 by {bpr_worst:.1e}; baseline is textbook BPR-MF: {textbook_ok}; IPS/IPS-C on uniform popularity equal plain training step for step: {ips_same}"
        ),
    )
}

// ----------------------------------------------------------------

fn main() -> ExitCode {
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut failed_hard = Vec::new();
    let mut failed_known = Vec::new();
    let mut passed = 0;
    let mut record = |n: usize, name: &str, v: Verdict, took: Duration, budget: Option<u64>| {
        let over = budget.is_some_and(|b| took > Duration::from_secs(b));
        let pass = v.pass && !over;
        let budget_note = budget.map(|b| format!(", budget {b}s")).unwrap_or_default();
        let tag = if pass {
            "PASS"
        } else if KNOWN_GAPS.contains(&n) && !strict {
            "FAIL (known gap)"
        } else {
            "FAIL"
        };
        println!("criterion {n} {name}: {tag} [{:.1}s{budget_note}] {}", took.as_secs_f64(), v.detail);
        if pass {
            passed += 1;
        } else if KNOWN_GAPS.contains(&n) && !strict {
            failed_known.push(n);
        } else {
            failed_hard.push(n);
        }
    };
    let timed = |f: fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        (v, t.elapsed())
    };

    let (v, t) = timed(criterion_gradients);
    record(1, "gradient soundness", v, t, Some(60));
    let (v, t) = timed(criterion_kl);
    record(2, "KL closed forms", v, t, Some(30));
    let (v, t) = timed(criterion_projection);
    record(3, "projection algebra", v, t, Some(10));
    let (v, t) = timed(criterion_metrics);
    record(4, "metric oracles", v, t, Some(5));
    let (v, t) = timed(criterion_protocol);
    record(5, "protocol fidelity", v, t, Some(5));
    let (six, seven, t) = criteria_debiasing();
    record(6, "directional debiasing", six, t, Some(600));
    record(7, "ablation ordering", seven, t, None);
    let (v, t) = timed(criterion_determinism);
    record(8, "determinism and persistence", v, t, None);
    let (v, t) = timed(criterion_reductions);
    record(9, "reduction checks", v, t, None);

    println!(
        "acceptance: {passed}/9 pass{}{}",
        if failed_known.is_empty() { String::new() } else { format!("; known gaps failing: {failed_known:?}") },
        if failed_hard.is_empty() { String::new() } else { format!("; FAILING: {failed_hard:?}") }
    );
    if failed_hard.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
