//! Self-checks run by `vgp verify`: each suite exercises one invariant of the
//! library on randomized inputs and reports pass or fail.

use crate::analyzer::{covariance, estimate_rank, low_rank_matrix, pca_analyze, singular_values, truncation_error, ThresholdMode};
use crate::error::Result;
use crate::grapher::{backbone_forward, BackboneParams, BlockWeights, ModelConfig};
use crate::model::{mean_pool_tape, network_features, network_features_tape, NetworkVars};
use crate::prompts::{
    prompted_block_compositional, prompted_block_fused, prompted_topology, selo_edge_apply, selo_node_apply, BlockPrompts, PromptConfig,
    PromptParams,
};
use crate::tensor::{gradcheck, io, GradcheckReport, Tape, Tensor, Var};
use crate::trainer::{fit, init_head, synthetic, SyntheticSpec, TrainConfig};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;

/// Deliberate defects for checking that the suites can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// The fused path uses a slightly perturbed `P_e`.
    EdgePrompt,
}

impl std::str::FromStr for Fault {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge-prompt" => Ok(Self::EdgePrompt),
            _ => Err(crate::Error::config("plant-fault", format!("unknown fault `{s}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    /// Randomized trials of the dual-path suite.
    pub seeds: usize,
    pub fault: Option<Fault>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seeds: 50, fault: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for SuiteResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {:<16} {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, r: Result<(bool, String)>) -> SuiteResult {
    match r {
        Ok((passed, detail)) => SuiteResult { name, passed, detail },
        Err(e) => SuiteResult { name, passed: false, detail: format!("error: {e}") },
    }
}

pub const SUITES: [&str; 6] = ["gradcheck", "dual-path", "recovery", "low-rank-svd", "frozen-backbone", "pca"];

pub fn run_all(opts: &VerifyOptions) -> Vec<SuiteResult> {
    vec![
        outcome("gradcheck", gradcheck_suite()),
        outcome("dual-path", dual_path_suite(opts.seeds, opts.fault)),
        outcome("recovery", recovery_suite(20)),
        outcome("low-rank-svd", low_rank_suite()),
        outcome("frozen-backbone", frozen_suite()),
        outcome("pca", pca_suite()),
    ]
}

/// The small network used by the gradient check: `d = 16`, 9 nodes, `K = 3`.
pub fn gradcheck_model() -> ModelConfig {
    ModelConfig { image_h: 12, image_w: 12, channels: 2, patch_size: 4, d: 16, d_ff: 32, blocks: 2, k: 3, ..ModelConfig::default() }
}

/// Central differences against the tape for every prompt tensor and the
/// head, through the full prompted network and cross-entropy.
pub fn prompted_gradcheck(seed: u64, eps: f64, tol: f64) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = gradcheck_model();
    let backbone = BackboneParams::init(model.clone(), &mut rng)?;
    let pc = PromptConfig { m: 2, r: 4, alpha: 0.3, beta: 0.4, r_hidden: None };
    let prompts = PromptParams::random(pc.clone(), model.d, model.blocks, 0.3, &mut rng)?;
    let head = Tensor::randn([model.d, 3], 0.5, &mut rng);
    let images: Vec<Tensor> = (0..2).map(|_| Tensor::randn([12, 12, 2], 1.0, &mut rng)).collect();
    let labels = [0usize, 2];

    let mut params: Vec<(String, Tensor)> = Vec::new();
    for (b, blk) in prompts.blocks.iter().enumerate() {
        for (name, t) in blk.named() {
            params.push((format!("block{b}.{name}"), t.clone()));
        }
    }
    params.push(("head".to_string(), head));
    let named: Vec<(&str, Tensor)> = params.iter().map(|(n, t)| (n.as_str(), t.clone())).collect();
    let n_prompt = named.len() - 1;

    gradcheck(
        |tape: &mut Tape, vars: &[Var]| {
            let nv = NetworkVars::from_vars(tape, &backbone, &pc, &vars[..n_prompt]);
            let mut pooled: Option<Var> = None;
            for img in &images {
                let f = network_features_tape(tape, img, &backbone, &nv)?;
                let p = mean_pool_tape(tape, f)?;
                pooled = Some(match pooled {
                    Some(acc) => tape.concat_rows(acc, p)?,
                    None => p,
                });
            }
            let logits = tape.matmul(pooled.expect("two images"), vars[n_prompt])?;
            tape.cross_entropy(logits, &labels)
        },
        &named,
        eps,
        tol,
    )
}

fn gradcheck_suite() -> Result<(bool, String)> {
    let rep = prompted_gradcheck(0, 1e-5, 1e-4)?;
    Ok((rep.passed(), format!("{} tensors, worst relative error {:.2e}", rep.tensors.len(), rep.worst())))
}

/// A random single-block case for the two-path comparison, drawn from
/// `M ∈ {0,1,4}`, `r ∈ {2,8}`, `K ∈ {1,3,5}`, `d ∈ {8,16}` with `r < d`.
pub struct DualPathCase {
    pub x: Tensor,
    pub weights: BlockWeights,
    pub prompts: BlockPrompts,
    pub k: usize,
}

pub fn dual_path_case(seed: u64) -> Result<DualPathCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = *[0usize, 1, 4].choose(&mut rng).expect("non-empty");
    let k = *[1usize, 3, 5].choose(&mut rng).expect("non-empty");
    let d = *[8usize, 16].choose(&mut rng).expect("non-empty");
    // r = d = 8 would break r < d, so d = 8 only pairs with r = 2
    let ranks: &[usize] = if d == 8 { &[2] } else { &[2, 8] };
    let r = *ranks.choose(&mut rng).expect("non-empty");
    let n = rng.random_range(4..=12);
    let d_ff = 2 * d;
    let alpha = rng.random_range(0.0..=1.0);
    let beta = rng.random_range(0.0..=1.0);
    let x = Tensor::randn([n, d], 1.0, &mut rng);
    let weights = BlockWeights {
        w_agg: Tensor::randn([2 * d, d], 0.3, &mut rng),
        w_update: Tensor::randn([d, d], 0.3, &mut rng),
        w1: Tensor::randn([d, d_ff], 0.3, &mut rng),
        w2: Tensor::randn([d_ff, d], 0.3, &mut rng),
    };
    let pc = PromptConfig { m, r, alpha, beta, r_hidden: None };
    let prompts = PromptParams::random(pc, d, 1, 0.5, &mut rng)?.blocks.remove(0);
    Ok(DualPathCase { x, weights, prompts, k })
}

/// Max-abs gap between the two block implementations on one case.
pub fn dual_path_gap(case: &DualPathCase, fault: Option<Fault>) -> Result<f64> {
    let topo = prompted_topology(&case.x, &case.prompts, case.k)?;
    let reference = prompted_block_compositional(&case.x, &topo, &case.weights, &case.prompts)?;
    let fused = match fault {
        None => prompted_block_fused(&case.x, &topo, &case.weights, &case.prompts)?,
        Some(Fault::EdgePrompt) => {
            let mut bad = case.prompts.clone();
            bad.p_e.data_mut().iter_mut().for_each(|v| *v *= 1.0 + 1e-3);
            bad.beta = bad.beta.max(0.5);
            let mut base = case.prompts.clone();
            base.beta = bad.beta;
            let reference = prompted_block_compositional(&case.x, &topo, &case.weights, &base)?;
            return Ok(reference.max_abs_diff(&prompted_block_fused(&case.x, &topo, &case.weights, &bad)?));
        }
    };
    Ok(reference.max_abs_diff(&fused))
}

pub const DUAL_PATH_TOL: f64 = 1e-10;

fn dual_path_suite(seeds: usize, fault: Option<Fault>) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut failures = 0;
    for s in 0..seeds as u64 {
        let gap = dual_path_gap(&dual_path_case(s)?, fault)?;
        worst = worst.max(gap);
        if gap > DUAL_PATH_TOL || gap.is_nan() {
            failures += 1;
        }
    }
    Ok((failures == 0, format!("{seeds} trials, {failures} over {DUAL_PATH_TOL:e}, worst gap {worst:.2e}")))
}

/// `α = β = 0`, `M = 0` against the plain backbone, bit for bit.
pub fn recovery_mismatches(trials: usize, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ModelConfig { image_h: 16, image_w: 16, d: 16, d_ff: 32, blocks: 2, k: 4, ..ModelConfig::default() };
    let backbone = BackboneParams::init(model.clone(), &mut rng)?;
    let pc = PromptConfig { m: 0, r: 4, alpha: 0.0, beta: 0.0, r_hidden: None };
    let prompts = PromptParams::random(pc, model.d, model.blocks, 1.0, &mut rng)?;
    let mut bad = 0;
    for _ in 0..trials {
        let img = Tensor::randn([16, 16, 3], 1.0, &mut rng);
        let plain = backbone_forward(&img, &backbone)?;
        let prompted = network_features(&img, &backbone, Some(&prompts))?;
        let same = plain.data().iter().zip(prompted.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        bad += usize::from(!same);
    }
    Ok(bad)
}

fn recovery_suite(trials: usize) -> Result<(bool, String)> {
    let bad = recovery_mismatches(trials, 0)?;
    Ok((bad == 0, format!("{trials} inputs, {bad} not bitwise equal")))
}

/// Largest singular value past index `r` of stacked node-prompt deltas and,
/// separately, edge-prompt terms, for features `[n×d]`.
pub fn low_rank_tail(d: usize, r: usize, n: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pc = PromptConfig { m: 0, r, alpha: 0.2, beta: 0.2, r_hidden: None };
    let p = PromptParams::random(pc, d, 1, 0.3, &mut rng)?.blocks.remove(0);
    let x = Tensor::randn([n, d], 1.0, &mut rng);
    let topo = prompted_topology(&x, &p, 5)?;
    let mut node = Tensor::zeros([n, d]);
    let mut edge = Tensor::zeros([n, d]);
    for i in 0..n {
        let xi = Tensor::new([d], x.row(i).to_vec())?;
        let nd = selo_node_apply(&xi, &p)?;
        let ed = selo_edge_apply(&xi, &x.select_rows(&topo.neighbors[i]), &p)?;
        for c in 0..d {
            node.data_mut()[i * d + c] = nd.data()[c] - (1.0 - p.alpha) * xi.data()[c];
            edge.data_mut()[i * d + c] = ed.data()[c] - (1.0 - p.beta) * xi.data()[c];
        }
    }
    let tail = |t: &Tensor| -> Result<f64> { Ok(singular_values(t)?.get(r..).map_or(0.0, |s| s.iter().copied().fold(0.0, f64::max))) };
    Ok((tail(&node)?, tail(&edge)?))
}

pub const LOW_RANK_TOL: f64 = 1e-8;

fn low_rank_suite() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for r in [4, 8, 32] {
        let (a, b) = low_rank_tail(64, r, 96, r as u64)?;
        worst = worst.max(a).max(b);
    }
    Ok((worst <= LOW_RANK_TOL, format!("r ∈ {{4, 8, 32}}, largest σ beyond r: {worst:.2e}")))
}

/// Serialized bytes of every backbone tensor, in order.
pub fn backbone_bytes(b: &BackboneParams) -> Vec<u8> {
    b.named_tensors().into_iter().flat_map(|(_, t)| io::encode(t)).collect()
}

fn frozen_suite() -> Result<(bool, String)> {
    let model = ModelConfig { image_h: 8, image_w: 8, d: 8, d_ff: 16, blocks: 2, k: 3, ..ModelConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let backbone = BackboneParams::init(model.clone(), &mut rng)?;
    let before = backbone_bytes(&backbone);
    let mut prompts = PromptParams::init(PromptConfig { m: 2, r: 2, ..PromptConfig::default() }, 8, 2, &mut rng)?;
    let mut head = init_head(8, 2);
    let data = synthetic(&SyntheticSpec { image_h: 8, image_w: 8, n_train: 8, n_val: 2, ..SyntheticSpec::default() }, 0);
    let cfg = TrainConfig { epochs: 3, batch_size: 4, lr: 1e-2, ..TrainConfig::default() };
    fit(&backbone, Some(&mut prompts), &mut head, &data, &cfg, |_| Ok(()))?;
    let same = backbone_bytes(&backbone) == before;
    Ok((same, format!("{} backbone bytes {} after 3 epochs", before.len(), if same { "unchanged" } else { "CHANGED" })))
}

/// Checks of the analyzer on constructed rank-`k` data: exact rank with and
/// without small noise, and the truncation error law.
pub fn pca_checks(seed: u64) -> Result<Vec<(String, bool)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for k in [1, 3, 5] {
        let clean = low_rank_matrix(200, 64, k, 0.0, &mut rng)?;
        let pca = pca_analyze(&clean, 0.25, ThresholdMode::Relative)?;
        let abs = estimate_rank(&pca.eigenvalues, 1e-6, ThresholdMode::Absolute);
        out.push((format!("k={k} noise=0: relative {} absolute {abs}", pca.est_rank), pca.est_rank == k && abs == k));

        let noisy = low_rank_matrix(200, 64, k, 1e-3, &mut rng)?;
        let pca = pca_analyze(&noisy, 0.25, ThresholdMode::Relative)?;
        out.push((format!("k={k} noise=1e-3: relative {}", pca.est_rank), pca.est_rank == k));

        let sigma = covariance(&noisy)?;
        let mut worst = 0.0f64;
        for r in 0..=k {
            let err = truncation_error(&sigma, &pca, r)?;
            worst = worst.max((err - pca.eigenvalues[r]).abs());
        }
        out.push((format!("k={k} truncation gap {worst:.1e}"), worst <= 1e-8));
    }
    Ok(out)
}

fn pca_suite() -> Result<(bool, String)> {
    let checks = pca_checks(0)?;
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(s, _)| s.as_str()).collect();
    let detail = if failed.is_empty() { format!("{} checks", checks.len()) } else { format!("failed: {}", failed.join("; ")) };
    Ok((failed.is_empty(), detail))
}
