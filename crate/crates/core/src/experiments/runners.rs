use super::{fingerprint, Context, ExperimentConfig};
use crate::data::ImageDataset;
use crate::engine::Network;
use crate::error::{Error, Result};
use crate::eval::{fear_evaluate, ground_truth, shortreg_evaluate, EvalOutcome, FearConfig, GroundTruthConfig};
use crate::metrics::{bin_report, pareto_frontier, spearman, BinReport, MethodRow, BIN_CSV_HEADER};
use crate::proxies::{compute_proxy, vote_ranking, ProxyKind, VoteInput};
use crate::rng;
use crate::search::{random_search_fear, random_search_shortreg, SearchConfig, SearchResult};
use crate::space::{build_network, ArchId};
use crate::train::{steps_per_epoch, train_epoch, Rows};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

type Output = (Vec<PathBuf>, Value);

/// One ground-truth store entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub seed: u64,
    pub arch: ArchId,
    pub test_accuracy: f64,
    pub train_accuracy: f64,
    pub cost_units: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyEntry {
    pub proxy: ProxyKind,
    /// `None` when the score was not finite.
    pub score: Option<f64>,
    pub cost_units: u64,
    pub wall_ms: u64,
}

fn gt_key(data_fp: &str, gt: &GroundTruthConfig, seed: u64, arch: ArchId) -> String {
    format!("{data_fp}/{}/{seed}/{arch}", fingerprint(gt))
}

fn seed_arch_jobs(ctx: &Context) -> Vec<(u64, ArchId)> {
    ctx.cfg
        .seeds
        .iter()
        .flat_map(|&s| ctx.pool.iter().map(move |&a| (s, a)))
        .collect()
}

/// Runs `f` over `jobs` on the worker pool, preserving job order.
fn par_jobs<J: Sync, R: Send>(ctx: &Context, jobs: &[J], f: impl Fn(&J) -> Result<R> + Sync) -> Result<Vec<R>> {
    ctx.threads.install(|| jobs.par_iter().map(&f).collect())
}

fn ensure_gt(ctx: &Context, jobs: &[(u64, ArchId)]) -> Result<Vec<GtRecord>> {
    par_jobs(ctx, jobs, |&(seed, arch)| {
        let key = gt_key(&ctx.data_fp, &ctx.cfg.ground_truth, seed, arch);
        ctx.gt_store.get_or_compute(&key, || {
            let g = ground_truth(
                arch,
                &ctx.ds,
                &ctx.cfg.macro_cfg,
                &ctx.cfg.ground_truth,
                ExperimentConfig::gt_seed(seed),
            )?;
            log::info!("ground truth seed {seed} arch {arch}: {:.4}", g.test_accuracy);
            Ok(GtRecord {
                seed,
                arch,
                test_accuracy: g.test_accuracy,
                train_accuracy: g.train_accuracy,
                cost_units: g.cost_units,
                wall_ms: g.wall_ms,
            })
        })
    })
}

/// Ground-truth accuracies of the pool for `seed`, in pool order.
fn require_gt(ctx: &Context, seed: u64) -> Result<Vec<f64>> {
    let mut missing = 0;
    let acc: Vec<f64> = ctx
        .pool
        .iter()
        .map(|&a| match ctx.gt_store.get(&gt_key(&ctx.data_fp, &ctx.cfg.ground_truth, seed, a)) {
            Some(r) => r.test_accuracy,
            None => {
                missing += 1;
                f64::NAN
            }
        })
        .collect();
    if missing > 0 {
        return Err(Error::MissingGroundTruth(format!(
            "{missing} of {} pool architectures for seed {seed}; run the ground_truth_build kind with the same dataset, macro and ground_truth settings first",
            ctx.pool.len()
        )));
    }
    Ok(acc)
}

fn rows(ds: &ImageDataset) -> Rows<'_> {
    Rows {
        x: ds.values(),
        y: ds.labels(),
        dim: ds.image_len(),
    }
}

/// Evaluation outcomes for every (seed, arch), cached under `label`.
fn cached_evals(
    ctx: &Context,
    label: &str,
    f: impl Fn(ArchId, u64) -> Result<EvalOutcome> + Sync,
) -> Result<HashMap<u64, Vec<EvalOutcome>>> {
    let store = ctx.cache::<EvalOutcome>("evals")?;
    let jobs = seed_arch_jobs(ctx);
    let out = par_jobs(ctx, &jobs, |&(seed, arch)| {
        let key = format!("{label}/{}/{seed}/{arch}", ctx.data_fp);
        store.get_or_compute(&key, || {
            let o = f(arch, ExperimentConfig::eval_seed(seed))?;
            log::info!("{label} seed {seed} arch {arch}: score {:?}", o.score);
            Ok(o)
        })
    })?;
    Ok(group_by_seed(ctx, out))
}

fn group_by_seed<R>(ctx: &Context, flat: Vec<R>) -> HashMap<u64, Vec<R>> {
    let mut it = flat.into_iter();
    ctx.cfg
        .seeds
        .iter()
        .map(|&s| (s, it.by_ref().take(ctx.pool.len()).collect()))
        .collect()
}

fn fear_evals(ctx: &Context, fear: &FearConfig) -> Result<HashMap<u64, Vec<EvalOutcome>>> {
    let label = format!("fear/{}", fingerprint(fear));
    cached_evals(ctx, &label, |arch, seed| {
        fear_evaluate(arch, &ctx.ds, &ctx.cfg.macro_cfg, fear, None, seed)
    })
}

/// The fixed proxy minibatch for an experiment seed.
fn proxy_batch(ds: &ImageDataset, batch: usize, seed: u64) -> (Vec<f32>, Vec<usize>) {
    let mut order = ds.train().to_vec();
    order.shuffle(&mut rng::stream(ExperimentConfig::eval_seed(seed), "proxy-batch", 0));
    order.truncate(batch);
    ds.gather(&order)
}

fn proxies_on(net: &Network<f32>, kinds: &[ProxyKind], x: &[f32], y: &[usize]) -> Result<Vec<ProxyEntry>> {
    kinds
        .iter()
        .map(|&proxy| {
            let start = Instant::now();
            let (score, cost_units) = match compute_proxy(proxy, net, x, y) {
                Ok(p) => (Some(p.score), p.cost_units),
                Err(Error::Numeric { location }) => {
                    log::warn!("non-finite {location}");
                    (None, 0)
                }
                Err(e) => return Err(e),
            };
            Ok(ProxyEntry {
                proxy,
                score,
                cost_units,
                wall_ms: start.elapsed().as_millis() as u64,
            })
        })
        .collect()
}

/// Proxy scores at initialization for every (seed, arch).
fn init_proxies(ctx: &Context) -> Result<HashMap<u64, Vec<Vec<ProxyEntry>>>> {
    let store = ctx.cache::<Vec<ProxyEntry>>("proxies")?;
    let fp = fingerprint(&ctx.cfg.proxies);
    let batches: HashMap<u64, (Vec<f32>, Vec<usize>)> = ctx
        .cfg
        .seeds
        .iter()
        .map(|&s| (s, proxy_batch(&ctx.ds, ctx.cfg.proxies.batch, s)))
        .collect();
    let jobs = seed_arch_jobs(ctx);
    let out = par_jobs(ctx, &jobs, |&(seed, arch)| {
        let key = format!("{fp}/{}/{seed}/{arch}", ctx.data_fp);
        store.get_or_compute(&key, || {
            let net: Network<f32> =
                build_network(&arch.decode(), &ctx.cfg.macro_cfg, ExperimentConfig::eval_seed(seed))?;
            let (x, y) = &batches[&seed];
            proxies_on(&net, &ctx.cfg.proxies.kinds, x, y)
        })
    })?;
    Ok(group_by_seed(ctx, out))
}

fn method_rows(pool: &[ArchId], gt: &[f64], scored: impl Iterator<Item = (Option<f64>, u64, u64)>) -> Vec<MethodRow> {
    pool.iter()
        .zip(gt)
        .zip(scored)
        .map(|((&arch, &gt), (score, cost_units, wall_ms))| MethodRow {
            arch,
            gt,
            score,
            cost_units,
            wall_ms,
        })
        .collect()
}

fn outcome_rows(pool: &[ArchId], gt: &[f64], outs: &[EvalOutcome]) -> Vec<MethodRow> {
    method_rows(pool, gt, outs.iter().map(|o| (o.score, o.cost_units, o.wall_ms)))
}

fn proxy_rows(pool: &[ArchId], gt: &[f64], entries: &[Vec<ProxyEntry>], kind: ProxyKind) -> Vec<MethodRow> {
    method_rows(
        pool,
        gt,
        entries.iter().map(|e| {
            let p = e.iter().find(|p| p.proxy == kind).expect("proxy computed");
            (p.score, p.cost_units, p.wall_ms)
        }),
    )
}

/// Copeland votes of synflow, jacob_cov and snip; `None` when a voter is
/// not configured.
fn vote_rows(pool: &[ArchId], gt: &[f64], entries: &[Vec<ProxyEntry>]) -> Option<Vec<MethodRow>> {
    let voters = [ProxyKind::Synflow, ProxyKind::JacobCov, ProxyKind::Snip];
    if entries.first().is_none_or(|e| voters.iter().any(|v| e.iter().all(|p| p.proxy != *v))) {
        return None;
    }
    let get = |e: &[ProxyEntry], k: ProxyKind| e.iter().find(|p| p.proxy == k).expect("voter present").clone();
    let mut inputs = Vec::new();
    for (&arch, e) in pool.iter().zip(entries) {
        let [s, j, n] = voters.map(|k| get(e, k).score);
        if let (Some(synflow), Some(jacob_cov), Some(snip)) = (s, j, n) {
            inputs.push(VoteInput {
                arch,
                synflow,
                jacob_cov,
                snip,
            });
        }
    }
    let wins: HashMap<ArchId, usize> = vote_ranking(&inputs).into_iter().collect();
    Some(method_rows(
        pool,
        gt,
        pool.iter().zip(entries).map(|(a, e)| {
            let parts = voters.map(|k| get(e, k));
            (
                wins.get(a).map(|&w| w as f64),
                parts.iter().map(|p| p.cost_units).sum(),
                parts.iter().map(|p| p.wall_ms).sum(),
            )
        }),
    ))
}

fn bins_or_warn(method: &str, rows: &[MethodRow]) -> Option<Vec<BinReport>> {
    match bin_report(method, rows) {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("no bin report for {method}: {e}");
            None
        }
    }
}

fn bin_csv_header() -> Vec<&'static str> {
    let mut h = vec!["seed"];
    h.extend(BIN_CSV_HEADER);
    h
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn eval_lines(method: &str, seed: u64, pool: &[ArchId], gt: &[f64], outs: &[EvalOutcome]) -> Vec<Value> {
    pool.iter()
        .zip(gt)
        .zip(outs)
        .map(|((a, g), o)| json!({ "method": method, "seed": seed, "arch": a, "cell": a.decode().to_string(), "gt": g, "outcome": o }))
        .collect()
}

pub(super) fn ground_truth_build(ctx: &Context) -> Result<Output> {
    let recs = ensure_gt(ctx, &seed_arch_jobs(ctx))?;
    let rows: Vec<Vec<String>> = recs
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.arch.to_string(),
                r.arch.decode().to_string(),
                format!("{:.6}", r.test_accuracy),
                format!("{:.6}", r.train_accuracy),
                r.cost_units.to_string(),
                r.wall_ms.to_string(),
            ]
        })
        .collect();
    let csv = ctx.write_csv(
        "ground_truth.csv",
        &["seed", "arch", "cell", "test_accuracy", "train_accuracy", "cost_units", "wall_ms"],
        &rows,
    )?;
    let per_seed: Vec<Value> = ctx
        .cfg
        .seeds
        .iter()
        .map(|&s| {
            let acc: Vec<f64> = recs.iter().filter(|r| r.seed == s).map(|r| r.test_accuracy).collect();
            let min = acc.iter().copied().fold(f64::INFINITY, f64::min);
            let max = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            json!({ "seed": s, "n": acc.len(), "min": min, "max": max, "mean": acc.iter().sum::<f64>() / acc.len() as f64 })
        })
        .collect();
    Ok((vec![csv], json!({ "per_seed": per_seed })))
}

pub(super) fn rank_compare(ctx: &Context) -> Result<Output> {
    let (fear, threshold) = ctx.fear()?;
    let gts: HashMap<u64, Vec<f64>> = ctx.cfg.seeds.iter().map(|&s| Ok((s, require_gt(ctx, s)?))).collect::<Result<_>>()?;
    let fear_out = fear_evals(ctx, &fear)?;
    let mut training: Vec<(String, HashMap<u64, Vec<EvalOutcome>>)> = vec![("fear".into(), fear_out)];
    for sr in ctx.cfg.shortreg.configs() {
        let name = format!("shortreg_e{}_b{}", sr.epochs, sr.batch);
        let label = format!("shortreg/{}", fingerprint(&sr));
        let outs = cached_evals(ctx, &label, |arch, seed| {
            shortreg_evaluate(arch, &ctx.ds, &ctx.cfg.macro_cfg, &sr, seed)
        })?;
        training.push((name, outs));
    }
    let proxies = init_proxies(ctx)?;

    let mut eval_jsonl = Vec::new();
    let mut proxy_jsonl = Vec::new();
    let mut bin_rows = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in &ctx.cfg.seeds {
        let gt = &gts[&seed];
        let mut methods: Vec<(String, Vec<MethodRow>)> = Vec::new();
        for (name, outs) in &training {
            eval_jsonl.extend(eval_lines(name, seed, &ctx.pool, gt, &outs[&seed]));
            methods.push((name.clone(), outcome_rows(&ctx.pool, gt, &outs[&seed])));
        }
        let entries = &proxies[&seed];
        for (a, e) in ctx.pool.iter().zip(entries) {
            for p in e {
                proxy_jsonl.push(json!({ "seed": seed, "arch": a, "proxy": p.proxy, "score": p.score, "cost_units": p.cost_units, "wall_ms": p.wall_ms }));
            }
        }
        for &k in &ctx.cfg.proxies.kinds {
            methods.push((k.name().to_string(), proxy_rows(&ctx.pool, gt, entries, k)));
        }
        if let Some(v) = vote_rows(&ctx.pool, gt, entries) {
            methods.push(("vote".into(), v));
        }
        let mut summary = serde_json::Map::new();
        let mut frontier_pts = Vec::new();
        for (name, rows) in &methods {
            let Some(reps) = bins_or_warn(name, rows) else { continue };
            for r in &reps {
                let mut row = vec![seed.to_string()];
                row.extend(r.csv_row());
                bin_rows.push(row);
            }
            let all = reps.last().expect("bin 100");
            let half = reps.iter().find(|r| r.bin_percent == 50).expect("bin 50");
            if name.starts_with("shortreg") {
                if let Some(s) = all.spearman {
                    frontier_pts.push((all.avg_cost_units, s));
                }
            }
            summary.insert(
                name.clone(),
                json!({ "spearman": all.spearman, "common_ratio_50": half.common_ratio, "avg_cost_units": all.avg_cost_units, "n_failed": all.n_failed }),
            );
        }
        per_seed.push(json!({ "seed": seed, "methods": summary, "shortreg_frontier_size": pareto_frontier(&frontier_pts).len() }));
    }
    let files = vec![
        ctx.write_jsonl("evals.jsonl", &eval_jsonl)?,
        ctx.write_jsonl("proxies.jsonl", &proxy_jsonl)?,
        ctx.write_csv("bins.csv", &bin_csv_header(), &bin_rows)?,
    ];
    Ok((files, json!({ "tau": fear.tau, "threshold": threshold, "per_seed": per_seed })))
}

pub(super) fn time_to_threshold(ctx: &Context) -> Result<Output> {
    let gts: HashMap<u64, Vec<f64>> = ctx.cfg.seeds.iter().map(|&s| Ok((s, require_gt(ctx, s)?))).collect::<Result<_>>()?;
    let (fear, threshold) = ctx.fear()?;
    let outs = fear_evals(ctx, &fear)?;
    let mut rows = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in &ctx.cfg.seeds {
        let gt = &gts[&seed];
        let (mut epochs, mut cost, mut acc) = (Vec::new(), Vec::new(), Vec::new());
        let mut timeouts = 0;
        for ((a, g), o) in ctx.pool.iter().zip(gt).zip(&outs[&seed]) {
            if o.failed {
                continue;
            }
            let timed_out = !o.reached_threshold;
            timeouts += usize::from(timed_out);
            rows.push(vec![
                seed.to_string(),
                a.to_string(),
                a.decode().to_string(),
                o.epochs_stage1.to_string(),
                o.stage1_cost_units.to_string(),
                o.reached_threshold.to_string(),
                timed_out.to_string(),
                format!("{g:.6}"),
            ]);
            epochs.push(o.epochs_stage1 as f64);
            cost.push(o.stage1_cost_units as f64);
            acc.push(*g);
        }
        per_seed.push(json!({
            "seed": seed,
            "n": epochs.len(),
            "timeouts": timeouts,
            "spearman_epochs_vs_gt": spearman(&epochs, &acc).ok(),
            "spearman_cost_vs_gt": spearman(&cost, &acc).ok(),
        }));
    }
    let csv = ctx.write_csv(
        "time_to_threshold.csv",
        &["seed", "arch", "cell", "epochs_to_threshold", "cost_units", "reached", "timed_out", "gt_accuracy"],
        &rows,
    )?;
    Ok((vec![csv], json!({ "tau": fear.tau, "threshold": threshold, "per_seed": per_seed })))
}

/// Proxies at initialization and after each of `epochs` training epochs.
fn proxies_over_epochs(ctx: &Context, arch: ArchId, seed: u64, x: &[f32], y: &[usize]) -> Result<Vec<Vec<ProxyEntry>>> {
    let zc = &ctx.cfg.zc_epochs;
    let eval_seed = ExperimentConfig::eval_seed(seed);
    let mut net: Network<f32> = build_network(&arch.decode(), &ctx.cfg.macro_cfg, eval_seed)?;
    let kinds = &ctx.cfg.proxies.kinds;
    let mut out = vec![proxies_on(&net, kinds, x, y)?];
    let sgd = zc.optim.sgd(zc.epochs * steps_per_epoch(ctx.ds.train().len(), zc.batch));
    let mut order = rng::stream(eval_seed, "zc-order", u64::from(arch.get()));
    let mut step = 0;
    for _ in 0..zc.epochs {
        match train_epoch(&mut net, rows(&ctx.ds), ctx.ds.train(), zc.batch, &mut order, &mut step, &sgd) {
            Ok(_) => out.push(proxies_on(&net, kinds, x, y)?),
            Err(Error::Numeric { location }) => {
                log::warn!("arch {arch} diverged during proxy training at {location}");
                let dead: Vec<ProxyEntry> = kinds
                    .iter()
                    .map(|&proxy| ProxyEntry {
                        proxy,
                        score: None,
                        cost_units: 0,
                        wall_ms: 0,
                    })
                    .collect();
                while out.len() <= zc.epochs {
                    out.push(dead.clone());
                }
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub(super) fn zero_cost_over_epochs(ctx: &Context) -> Result<Output> {
    if ctx.cfg.zc_epochs.batch < 2 {
        return Err(Error::Config("zc_epochs.batch must be at least 2".into()));
    }
    let store = ctx.cache::<Vec<Vec<ProxyEntry>>>("zc_epochs")?;
    let fp = fingerprint(&(&ctx.cfg.proxies, &ctx.cfg.zc_epochs));
    let batches: HashMap<u64, (Vec<f32>, Vec<usize>)> = ctx
        .cfg
        .seeds
        .iter()
        .map(|&s| (s, proxy_batch(&ctx.ds, ctx.cfg.proxies.batch, s)))
        .collect();
    let jobs = seed_arch_jobs(ctx);
    let flat = par_jobs(ctx, &jobs, |&(seed, arch)| {
        let key = format!("{fp}/{}/{seed}/{arch}", ctx.data_fp);
        store.get_or_compute(&key, || {
            let (x, y) = &batches[&seed];
            proxies_over_epochs(ctx, arch, seed, x, y)
        })
    })?;
    let by_seed = group_by_seed(ctx, flat);
    let mut rows = Vec::new();
    let mut scores = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in &ctx.cfg.seeds {
        let gt = require_gt(ctx, seed)?;
        let runs = &by_seed[&seed];
        let mut curves = serde_json::Map::new();
        for &k in &ctx.cfg.proxies.kinds {
            let mut curve = Vec::new();
            for epoch in 0..=ctx.cfg.zc_epochs.epochs {
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for ((arch, g), run) in ctx.pool.iter().zip(&gt).zip(runs) {
                    let score = run[epoch].iter().find(|p| p.proxy == k).and_then(|p| p.score);
                    scores.push(json!({ "seed": seed, "arch": arch, "epoch": epoch, "proxy": k, "score": score }));
                    if let Some(s) = score {
                        a.push(s);
                        b.push(*g);
                    }
                }
                let rho = spearman(&a, &b).ok();
                rows.push(vec![seed.to_string(), k.name().to_string(), epoch.to_string(), fmt_opt(rho), a.len().to_string()]);
                curve.push(rho);
            }
            curves.insert(k.name().to_string(), json!(curve));
        }
        per_seed.push(json!({ "seed": seed, "spearman_by_epoch": curves }));
    }
    let files = vec![
        ctx.write_csv("zc_epochs.csv", &["seed", "proxy", "epoch", "spearman", "n"], &rows)?,
        ctx.write_jsonl("zc_scores.jsonl", &scores)?,
    ];
    Ok((files, json!({ "per_seed": per_seed })))
}

/// Ground truth of a reference experiment (a config file) for the pool.
fn reference_gt(ctx: &Context, path: &Path) -> Result<HashMap<u64, Vec<f64>>> {
    let r = ExperimentConfig::load(path)?;
    if r.macro_cfg != ctx.cfg.macro_cfg {
        return Err(Error::Config(format!(
            "reference {} uses a different macro config",
            path.display()
        )));
    }
    let dir = r
        .ground_truth_dir
        .clone()
        .or_else(|| r.output_dir.clone())
        .ok_or_else(|| Error::Config(format!("reference {} names no output_dir", path.display())))?;
    let store = super::store::Store::<GtRecord>::open(&dir.join("ground_truth.jsonl"))?;
    let data_fp = fingerprint(&(&r.dataset, r.data_seed, &r.macro_cfg));
    ctx.cfg
        .seeds
        .iter()
        .map(|&s| {
            let acc = ctx
                .pool
                .iter()
                .map(|&a| {
                    store
                        .get(&gt_key(&data_fp, &r.ground_truth, s, a))
                        .map(|g| g.test_accuracy)
                        .ok_or_else(|| Error::MissingGroundTruth(format!("reference arch {a} seed {s} in {}", dir.display())))
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((s, acc))
        })
        .collect()
}

pub(super) fn synthetic_zero_cost(ctx: &Context) -> Result<Output> {
    ensure_gt(ctx, &seed_arch_jobs(ctx))?;
    let (fear, threshold) = ctx.fear()?;
    let outs = fear_evals(ctx, &fear)?;
    let proxies = init_proxies(ctx)?;
    let reference = ctx.cfg.reference.as_deref().map(|p| reference_gt(ctx, p)).transpose()?;
    let mut rows = Vec::new();
    let mut per_seed = Vec::new();
    for &seed in &ctx.cfg.seeds {
        let gt = require_gt(ctx, seed)?;
        let entries = &proxies[&seed];
        let mut methods = vec![("fear".to_string(), outcome_rows(&ctx.pool, &gt, &outs[&seed]))];
        for &k in &ctx.cfg.proxies.kinds {
            methods.push((k.name().to_string(), proxy_rows(&ctx.pool, &gt, entries, k)));
        }
        if let Some(v) = vote_rows(&ctx.pool, &gt, entries) {
            methods.push(("vote".into(), v));
        }
        if let (Some(r), true) = (&reference, ctx.cfg.proxies.kinds.contains(&ProxyKind::Synflow)) {
            methods.push((
                "synflow_reference_data".into(),
                proxy_rows(&ctx.pool, &r[&seed], entries, ProxyKind::Synflow),
            ));
        }
        let mut table = serde_json::Map::new();
        for (name, mrows) in &methods {
            let scored: Vec<&MethodRow> = mrows.iter().filter(|r| r.score.is_some()).collect();
            let a: Vec<f64> = scored.iter().map(|r| r.score.expect("scored")).collect();
            let b: Vec<f64> = scored.iter().map(|r| r.gt).collect();
            let rho = spearman(&a, &b).ok();
            let cost = mrows.iter().map(|r| r.cost_units as f64).sum::<f64>() / mrows.len() as f64;
            rows.push(vec![
                seed.to_string(),
                name.clone(),
                fmt_opt(rho),
                format!("{cost:.1}"),
                scored.len().to_string(),
            ]);
            table.insert(name.clone(), json!({ "spearman": rho, "avg_cost_units": cost }));
        }
        per_seed.push(json!({ "seed": seed, "methods": table }));
    }
    let csv = ctx.write_csv("synthetic_zc.csv", &["seed", "method", "spearman", "avg_cost_units", "n"], &rows)?;
    Ok((vec![csv], json!({ "tau": fear.tau, "threshold": threshold, "per_seed": per_seed })))
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

pub(super) fn random_search_compare(ctx: &Context) -> Result<Output> {
    let (fear, threshold) = ctx.fear()?;
    let s = &ctx.cfg.search;
    let search_cfg = |seed: u64| SearchConfig {
        budget: s.budget,
        reject_ratio: s.reject_ratio,
        seed: rng::stream_seed(seed, "search", 0),
        fastest_update_mode: s.fastest_update_mode,
    };
    let store = ctx.cache::<SearchResult>("search")?;
    let fear_label = format!("fear/{}/{}", fingerprint(&fear), fingerprint(&(s.budget, s.reject_ratio, s.fastest_update_mode)));
    let sr_label = format!("shortreg/{}/{}", fingerprint(&s.shortreg), s.budget);
    let jobs: Vec<(u64, bool)> = ctx.cfg.seeds.iter().flat_map(|&seed| [(seed, true), (seed, false)]).collect();
    let results = par_jobs(ctx, &jobs, |&(seed, is_fear)| {
        let label = if is_fear { &fear_label } else { &sr_label };
        let key = format!("{label}/{}/{seed}", ctx.data_fp);
        store.get_or_compute(&key, || {
            let eval_seed = ExperimentConfig::eval_seed(seed);
            let r = if is_fear {
                random_search_fear(&ctx.ds, &ctx.cfg.macro_cfg, &fear, &search_cfg(seed), eval_seed)
            } else {
                random_search_shortreg(&ctx.ds, &ctx.cfg.macro_cfg, &s.shortreg, &search_cfg(seed), eval_seed)
            }?;
            log::info!("search seed {seed} fear={is_fear}: best {} cost {}", r.best, r.total_cost);
            Ok(r)
        })
    })?;
    let mut best_jobs: Vec<(u64, ArchId)> = jobs.iter().zip(&results).map(|(&(seed, _), r)| (seed, r.best)).collect();
    best_jobs.sort_unstable();
    best_jobs.dedup();
    let gts: HashMap<(u64, ArchId), f64> = best_jobs
        .iter()
        .copied()
        .zip(ensure_gt(ctx, &best_jobs)?)
        .map(|(k, g)| (k, g.test_accuracy))
        .collect();

    let mut rows = Vec::new();
    let mut trace = Vec::new();
    let mut acc: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut cost: HashMap<&str, Vec<f64>> = HashMap::new();
    for (&(seed, is_fear), r) in jobs.iter().zip(&results) {
        let method = if is_fear { "rs_fear" } else { "rs_shortreg" };
        let g = gts[&(seed, r.best)];
        let rejected = r.trace.iter().filter(|t| t.outcome.rejected_early).count();
        let wall: u64 = r.trace.iter().map(|t| t.outcome.wall_ms).sum();
        rows.push(vec![
            seed.to_string(),
            method.to_string(),
            r.best.to_string(),
            r.best.decode().to_string(),
            format!("{:.6}", r.best_score),
            format!("{g:.6}"),
            r.total_cost.to_string(),
            rejected.to_string(),
            wall.to_string(),
        ]);
        for rec in &r.trace {
            trace.push(json!({ "method": method, "seed": seed, "record": rec }));
        }
        acc.entry(method).or_default().push(g);
        cost.entry(method).or_default().push(r.total_cost as f64);
    }
    let stat = |m: &str| {
        let (am, asd) = mean_std(&acc[m]);
        let (cm, csd) = mean_std(&cost[m]);
        json!({ "best_gt_mean": am, "best_gt_std": asd, "total_cost_mean": cm, "total_cost_std": csd })
    };
    let ratio = mean_std(&cost["rs_shortreg"]).0 / mean_std(&cost["rs_fear"]).0;
    let gap = mean_std(&acc["rs_fear"]).0 - mean_std(&acc["rs_shortreg"]).0;
    let files = vec![
        ctx.write_csv(
            "search_compare.csv",
            &["seed", "method", "best_arch", "best_cell", "best_score", "best_gt_accuracy", "total_cost_units", "n_rejected", "wall_ms"],
            &rows,
        )?,
        ctx.write_jsonl("trace.jsonl", &trace)?,
    ];
    Ok((
        files,
        json!({
            "tau": fear.tau,
            "threshold": threshold,
            "rs_fear": stat("rs_fear"),
            "rs_shortreg": stat("rs_shortreg"),
            "cost_ratio_shortreg_over_fear": ratio,
            "best_gt_gap_fear_minus_shortreg": gap,
        }),
    ))
}

fn family(method: &str) -> &'static str {
    if method == "fear" {
        "fear"
    } else if method.starts_with("shortreg") {
        "shortreg"
    } else if method == "vote" {
        "vote"
    } else {
        "zero_cost"
    }
}

pub(super) fn plot_data(run_dir: &Path) -> Result<PathBuf> {
    let src = run_dir.join("bins.csv");
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(&src)
        .map_err(|e| Error::Format {
            path: src.clone(),
            reason: format!("{e}; plot-data needs a finished rank_compare directory"),
        })?;
    // (seed, bin) -> [(method, cost, spearman)]
    let mut groups: Vec<((String, String), Vec<(String, f64, f64)>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or_default().to_string();
        let Ok(s) = field(3).parse::<f64>() else { continue };
        let cost: f64 = field(5).parse().map_err(|_| Error::Format {
            path: src.clone(),
            reason: format!("bad avg_cost_units {:?}", field(5)),
        })?;
        let key = (field(0), field(2));
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push((field(1), cost, s)),
            None => groups.push((key, vec![(field(1), cost, s)])),
        }
    }
    let out = run_dir.join("plot_cost_vs_spearman.csv");
    let mut w = csv::Writer::from_path(&out).map_err(|e| Error::Format {
        path: out.clone(),
        reason: e.to_string(),
    })?;
    w.write_record(["seed", "bin_percent", "method", "family", "avg_cost_units", "spearman", "on_frontier"])?;
    for ((seed, bin), pts) in &groups {
        let frontier = pareto_frontier(&pts.iter().map(|p| (p.1, p.2)).collect::<Vec<_>>());
        for (i, (m, c, s)) in pts.iter().enumerate() {
            w.write_record([
                seed.clone(),
                bin.clone(),
                m.clone(),
                family(m).to_string(),
                format!("{c:.1}"),
                format!("{s:.6}"),
                frontier.contains(&i).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&out, e))?;
    Ok(out)
}
