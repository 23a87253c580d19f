//! Acceptance criteria, one line each on stdout:
//!
//! ```text
//! cargo test --release --test acceptance
//! ```
//!
//! Lines are written straight to the stdout handle so they show without
//! `--nocapture`. The test fails if any criterion fails.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;
use vgp::analyzer::pca_analyze;
use vgp::cli;
use vgp::config::{RunConfig, CLASSES};
use vgp::grapher::{BackboneParams, ModelConfig};
use vgp::patchgraph::{knn_build, Metric};
use vgp::prompts::{PromptConfig, PromptParams};
use vgp::tensor::Tensor;
use vgp::trainer::{closed_form_trainable, count_params, fit, init_head, synthetic, ParamReport, SyntheticSpec, TrainConfig};
use vgp::verify::{
    dual_path_case, dual_path_gap, low_rank_tail, pca_checks, prompted_gradcheck, recovery_mismatches, DUAL_PATH_TOL, LOW_RANK_TOL,
};

const DUAL_PATH_SEEDS: u64 = 60;
const GRAD_EPS: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const RECOVERY_INPUTS: usize = 20;
const FROZEN_EPOCHS: usize = 10;
const LOW_RANKS: [usize; 3] = [4, 8, 32];
const KNN_INSTANCES: u64 = 200;
const LEARNING_SEEDS: u64 = 5;
const LEARNING_EPOCHS: usize = 20;
const LEARNING_MIN_WINS: usize = 4;
const DETERMINISM_SEED: &str = "7";

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn say(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn dual_path() -> Outcome {
    let mut worst = 0.0f64;
    let mut over = 0;
    let mut grid = BTreeSet::new();
    for s in 0..DUAL_PATH_SEEDS {
        let case = dual_path_case(s).map_err(e2s)?;
        let (m, r, d) = (case.prompts.m(), case.prompts.r(), case.x.cols());
        grid.insert((m, r, case.k, d));
        let gap = dual_path_gap(&case, None).map_err(e2s)?;
        worst = worst.max(gap);
        over += usize::from(gap.is_nan() || gap > DUAL_PATH_TOL);
    }
    Ok((
        over == 0,
        format!("{DUAL_PATH_SEEDS} configs ({} distinct M,r,K,d), worst max-abs gap {worst:.2e} <= {DUAL_PATH_TOL:e}", grid.len()),
    ))
}

fn gradients() -> Outcome {
    let rep = prompted_gradcheck(0, GRAD_EPS, GRAD_TOL).map_err(e2s)?;
    Ok((rep.passed(), format!("{} tensors, worst relative error {:.2e} <= {GRAD_TOL:e}", rep.tensors.len(), rep.worst())))
}

fn recovery() -> Outcome {
    let bad = recovery_mismatches(RECOVERY_INPUTS, 11).map_err(e2s)?;
    Ok((bad == 0, format!("{RECOVERY_INPUTS} inputs, {bad} not bitwise equal")))
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(e2s)?
        .map(|e| {
            let p = e.map_err(e2s)?.path();
            Ok((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(e2s)?))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn frozen_backbone() -> Outcome {
    let tmp = tempfile::tempdir().map_err(e2s)?;
    let model = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let backbone = BackboneParams::init(model.clone(), &mut rng).map_err(e2s)?;
    backbone.save(tmp.path().join("before")).map_err(e2s)?;
    let mut prompts = PromptParams::init(PromptConfig::default(), model.d, model.blocks, &mut rng).map_err(e2s)?;
    let mut head = init_head(model.d, CLASSES);
    let data = synthetic(&SyntheticSpec { n_train: 16, n_val: 8, ..SyntheticSpec::default() }, 5);
    let cfg = TrainConfig { epochs: FROZEN_EPOCHS, seed: 5, ..TrainConfig::default() };
    let start = prompts.clone();
    fit(&backbone, Some(&mut prompts), &mut head, &data, &cfg, |_| Ok(())).map_err(e2s)?;
    backbone.save(tmp.path().join("after")).map_err(e2s)?;
    let before = dir_bytes(&tmp.path().join("before"))?;
    let same = before == dir_bytes(&tmp.path().join("after"))?;
    let moved = prompts != start;
    let bytes: usize = before.iter().map(|(_, b)| b.len()).sum();
    Ok((
        same && moved,
        format!("{} files, {bytes} bytes identical: {same}; prompts updated: {moved}; {FROZEN_EPOCHS} epochs", before.len()),
    ))
}

fn low_rank() -> Outcome {
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for r in LOW_RANKS {
        let (node, edge) = low_rank_tail(64, r, 96, 100 + r as u64).map_err(e2s)?;
        worst = worst.max(node).max(edge);
        parts.push(format!("r={r}: {:.1e}", node.max(edge)));
    }
    Ok((worst <= LOW_RANK_TOL, format!("largest σ past r ({}) <= {LOW_RANK_TOL:e}", parts.join(", "))))
}

fn param_efficiency() -> Outcome {
    // toy config: d = 64, B = 4, r = 8, M = 4, C = 10
    let model = ModelConfig { d: 64, d_ff: 128, blocks: 4, ..ModelConfig::default() };
    let pc = PromptConfig { m: 4, r: 8, ..PromptConfig::default() };
    let h = pc.hidden(64);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let backbone = BackboneParams::init(model.clone(), &mut rng).map_err(e2s)?;
    let prompts = PromptParams::init(pc, 64, 4, &mut rng).map_err(e2s)?;
    let head = init_head(64, 10);
    let report = count_params(&backbone, Some(&prompts), &head);
    let closed = closed_form_trainable(4, 64, 8, h, 4, 10);
    let counted_ok = report.trainable_params == closed;

    let tmp = tempfile::tempdir().map_err(e2s)?;
    let params = tmp.path().join("param_report.json");
    std::fs::write(&params, serde_json::to_string(&report).map_err(e2s)?).map_err(e2s)?;
    let metrics = tmp.path().join("metrics.jsonl");
    std::fs::write(&metrics, "").map_err(e2s)?;
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, format!("[paths]\nreport_dir = {:?}\n", tmp.path().join("out"))).map_err(e2s)?;
    let code = cli::run([
        "vgp",
        "report",
        "--config",
        cfg.to_str().unwrap(),
        "--metrics",
        metrics.to_str().unwrap(),
        "--params",
        params.to_str().unwrap(),
    ]);
    let text = std::fs::read_to_string(tmp.path().join("out/report.txt")).unwrap_or_default();
    let csv = std::fs::read_to_string(tmp.path().join("out/report.csv")).unwrap_or_default();
    let cited = ["48.68M", "2.61M", "-94.6%"];
    let row_ok = code == 0 && cited.iter().all(|c| text.contains(c) && csv.contains(c));
    Ok((
        counted_ok && row_ok,
        format!(
            "count_params {} vs closed form {closed}; report exit {code}, cited row 48.68M -> 2.61M -> -94.6% present: {row_ok}",
            report.trainable_params
        ),
    ))
}

fn pca() -> Outcome {
    let checks = pca_checks(7).map_err(e2s)?;
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(s, _)| s.as_str()).collect();
    // one more shape check the suite does not cover: a rank-k spectrum stays rank-k after scaling
    let x = vgp::analyzer::low_rank_matrix(200, 64, 3, 0.0, &mut ChaCha8Rng::seed_from_u64(8)).map_err(e2s)?;
    let scaled = Tensor::new([200, 64], x.data().iter().map(|v| 1e3 * v).collect()).map_err(e2s)?;
    let scale_ok = pca_analyze(&scaled, 0.25, vgp::analyzer::ThresholdMode::Relative).map_err(e2s)?.est_rank == 3;
    Ok((
        failed.is_empty() && scale_ok,
        format!("{} checks over k ∈ {{1,3,5}}, N=200, d=64; failed: {:?}", checks.len() + 1, failed),
    ))
}

/// Full sort of every other node by `(score, index)`.
fn brute_force_knn(x: &Tensor, k: usize, metric: Metric) -> Vec<Vec<usize>> {
    let n = x.rows();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
    (0..n)
        .map(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let (a, b) = (x.row(i), x.row(j));
                    let score = match metric {
                        Metric::Euclidean => a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>(),
                        Metric::Cosine => {
                            let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
                            if na == 0.0 || nb == 0.0 {
                                0.0
                            } else {
                                -(dot(a, b) / (na * nb))
                            }
                        }
                    };
                    (score, j)
                })
                .collect();
            all.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap().then(p.1.cmp(&q.1)));
            all.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

fn knn_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    for inst in 0..KNN_INSTANCES {
        let n = rng.random_range(1..=50);
        let k = rng.random_range(1..=8);
        let d = rng.random_range(1..=6);
        // every third instance uses small integers so exact ties occur
        let data: Vec<f64> = (0..n * d)
            .map(|_| if inst % 3 == 0 { f64::from(rng.random_range(-2i32..=2)) } else { rng.random_range(-1.0..1.0) })
            .collect();
        let x = Tensor::new([n, d], data).map_err(e2s)?;
        for metric in [Metric::Euclidean, Metric::Cosine] {
            mismatches += usize::from(knn_build(&x, k, metric).neighbors != brute_force_knn(&x, k, metric));
        }
    }
    Ok((mismatches == 0, format!("{KNN_INSTANCES} instances × 2 metrics, {mismatches} mismatches")))
}

fn learning() -> Outcome {
    let run = RunConfig::default();
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 0..LEARNING_SEEDS {
        let data = synthetic(&run.synthetic_spec(), seed);
        let backbone = BackboneParams::init(run.model.clone(), &mut ChaCha8Rng::seed_from_u64(seed)).map_err(e2s)?;
        let cfg = TrainConfig { epochs: LEARNING_EPOCHS, seed, ..run.train.clone() };
        let mut head = init_head(run.model.d, CLASSES);
        let probe = fit(&backbone, None, &mut head, &data, &cfg, |_| Ok(())).map_err(e2s)?;
        let mut prng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let mut prompts = PromptParams::init(run.prompt.clone(), run.model.d, run.model.blocks, &mut prng).map_err(e2s)?;
        let mut head = init_head(run.model.d, CLASSES);
        let tuned = fit(&backbone, Some(&mut prompts), &mut head, &data, &cfg, |_| Ok(())).map_err(e2s)?;
        wins += usize::from(tuned.best_val_acc > probe.best_val_acc);
        parts.push(format!("{:.3}/{:.3}", tuned.best_val_acc, probe.best_val_acc));
    }
    Ok((
        wins >= LEARNING_MIN_WINS,
        format!(
            "prompts beat probe in {wins}/{LEARNING_SEEDS} seeds (need {LEARNING_MIN_WINS}); r={}, α=β={}, {LEARNING_EPOCHS} epochs; val acc prompt/probe {}",
            run.prompt.r,
            run.prompt.alpha,
            parts.join(" ")
        ),
    ))
}

fn train_once(root: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let cfg = root.join("run.toml");
    let text = format!(
        "[train]\nepochs = 4\n[data]\nn_train = 16\nn_val = 16\n[paths]\ndata_dir = {:?}\ncheckpoint_dir = {:?}\nreport_dir = {:?}\n",
        root.join("data"),
        root.join("ckpt"),
        root.join("reports")
    );
    std::fs::write(&cfg, text).map_err(e2s)?;
    let code = cli::run(["vgp", "train", "--config", cfg.to_str().unwrap(), "--synthetic", "--seed", DETERMINISM_SEED]);
    if code != 0 {
        return Err(format!("train exited {code}"));
    }
    let metrics = std::fs::read(root.join("reports/metrics.jsonl")).map_err(e2s)?;
    let params = std::fs::read(root.join("reports/param_report.json")).map_err(e2s)?;
    let _: ParamReport = serde_json::from_slice(&params).map_err(e2s)?;
    Ok((metrics, params))
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().map_err(e2s)?, tempfile::tempdir().map_err(e2s)?);
    let first = train_once(a.path())?;
    let second = train_once(b.path())?;
    let lines = first.0.iter().filter(|&&c| c == b'\n').count();
    Ok((
        first == second && lines > 0,
        format!("train --seed {DETERMINISM_SEED} twice: metrics.jsonl ({lines} lines) and param_report.json byte-identical: {}", first == second),
    ))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("dual-path", dual_path),
        ("gradients", gradients),
        ("recovery", recovery),
        ("frozen-backbone", frozen_backbone),
        ("low-rank", low_rank),
        ("param-efficiency", param_efficiency),
        ("pca", pca),
        ("knn-oracle", knn_oracle),
        ("learning", learning),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let tag = if ok { "PASS" } else { "FAIL" };
        say(&format!("[{tag}] criterion {:>2} {name:<17} {detail} ({:.1?})", i + 1, t.elapsed()));
        if !ok {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
