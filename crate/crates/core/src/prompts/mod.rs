//! Semantic low-rank prompts for the grapher blocks.
//!
//! Three prompt kinds share one low-rank extractor `MLP_s: d → r_hidden → r`
//! per block:
//!
//! * **graph** prompts: `M` virtual nodes `seeds[M×r] · P_g[r×d]` wired to
//!   their top-K real nodes by cosine similarity. Virtual nodes also join
//!   the Euclidean candidate pool of the real nodes, so they feed back into
//!   real-node aggregation within the same block.
//! * **node** prompts: `x ← α·MLP_s(x)·P_n + (1−α)·x`, applied to the centre
//!   before aggregation.
//! * **edge** prompts: `x ← (β/k)·Σ_j MLP_s(x_j)·P_e + (1−β)·x` over the `k`
//!   in-neighbours (real and virtual), feeding the residual of the update.
//!
//! A block is evaluated two ways: [`prompted_block_compositional`] strings
//! the per-node operations together, while [`prompted_block_fused`] writes
//! the whole block as matrix algebra on a [`crate::tensor::Tape`]. The two
//! must agree to rounding error.

mod compositional;
mod fused;

pub use compositional::{prompted_block_compositional, prompted_forward_compositional};
pub use fused::{prompted_block_fused, prompted_block_fused_tape, BlockVars, PromptVars};

use crate::error::{Error, Result};
use crate::grapher::BackboneParams;
use crate::patchgraph::{nearest, GraphTopology, Metric};
use crate::tensor::{gelu, io, matmul, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Standard deviation of the Gaussian init for seeds and `MLP_s`.
pub const INIT_STD: f64 = 0.02;

/// Hyper-parameters shared by every block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PromptConfig {
    /// Virtual nodes per block.
    pub m: usize,
    /// Rank of the prompt subspace.
    pub r: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Hidden width of `MLP_s`; defaults to `max(r, d/4)`.
    pub r_hidden: Option<usize>,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            m: 8,
            r: 32,
            alpha: 0.2,
            beta: 0.2,
            r_hidden: None,
        }
    }
}

impl PromptConfig {
    pub fn hidden(&self, d: usize) -> usize {
        self.r_hidden.unwrap_or_else(|| self.r.max(d / 4))
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::config("prompt.alpha", format!("α = {} outside [0, 1]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("prompt.beta", format!("β = {} outside [0, 1]", self.beta)));
        }
        if self.r == 0 || self.r >= d {
            return Err(Error::config("prompt.r", format!("rank {} must satisfy 1 <= r < d = {d}", self.r)));
        }
        if self.hidden(d) < self.r {
            return Err(Error::config(
                "prompt.r_hidden",
                format!("{} is smaller than r = {}", self.hidden(d), self.r),
            ));
        }
        Ok(())
    }
}

/// Trainable prompts of one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockPrompts {
    pub seeds: Tensor,
    pub p_g: Tensor,
    pub p_e: Tensor,
    pub p_n: Tensor,
    /// `MLP_s` first layer `[d×r_hidden]`.
    pub s1: Tensor,
    /// `MLP_s` second layer `[r_hidden×r]`.
    pub s2: Tensor,
    pub alpha: f64,
    pub beta: f64,
}

impl BlockPrompts {
    pub fn m(&self) -> usize {
        self.seeds.rows()
    }

    pub fn r(&self) -> usize {
        self.p_n.rows()
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 6] {
        [
            ("seeds", &self.seeds),
            ("p_g", &self.p_g),
            ("p_e", &self.p_e),
            ("p_n", &self.p_n),
            ("s1", &self.s1),
            ("s2", &self.s2),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 6] {
        [
            ("seeds", &mut self.seeds),
            ("p_g", &mut self.p_g),
            ("p_e", &mut self.p_e),
            ("p_n", &mut self.p_n),
            ("s1", &mut self.s1),
            ("s2", &mut self.s2),
        ]
    }

    /// Virtual node features `seeds · P_g`, `[M×d]`.
    pub fn virtual_features(&self) -> Result<Tensor> {
        matmul(&self.seeds, &self.p_g)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptParams {
    pub config: PromptConfig,
    pub d: usize,
    pub blocks: Vec<BlockPrompts>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockManifest {
    m: usize,
    r: usize,
    alpha: f64,
    beta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PromptManifest {
    d: usize,
    r_hidden: usize,
    blocks: Vec<BlockManifest>,
}

impl PromptParams {
    /// Low-rank projections start at zero, so node and edge deltas vanish at
    /// step 0; seeds and `MLP_s` start Gaussian with std [`INIT_STD`].
    pub fn init<R: Rng + ?Sized>(config: PromptConfig, d: usize, blocks: usize, rng: &mut R) -> Result<Self> {
        config.validate(d)?;
        let (m, r, h) = (config.m, config.r, config.hidden(d));
        let blocks = (0..blocks)
            .map(|_| {
                let trainable = |t: Tensor| t.with_requires_grad(true);
                BlockPrompts {
                    seeds: trainable(Tensor::randn([m, r], INIT_STD, rng)),
                    p_g: trainable(Tensor::zeros([r, d])),
                    p_e: trainable(Tensor::zeros([r, d])),
                    p_n: trainable(Tensor::zeros([r, d])),
                    s1: trainable(Tensor::randn([d, h], INIT_STD, rng)),
                    s2: trainable(Tensor::randn([h, r], INIT_STD, rng)),
                    alpha: config.alpha,
                    beta: config.beta,
                }
            })
            .collect();
        Ok(Self { config, d, blocks })
    }

    /// Gaussian values in every tensor, including the projections. Useful for
    /// tests that need non-degenerate prompts.
    pub fn random<R: Rng + ?Sized>(config: PromptConfig, d: usize, blocks: usize, std: f64, rng: &mut R) -> Result<Self> {
        let mut p = Self::init(config, d, blocks, rng)?;
        for blk in &mut p.blocks {
            for (_, t) in blk.named_mut() {
                let shape = t.shape().to_vec();
                *t = Tensor::randn(shape, std, rng).with_requires_grad(true);
            }
        }
        Ok(p)
    }

    pub fn num_params(&self) -> usize {
        self.blocks
            .iter()
            .flat_map(|b| b.named().map(|(_, t)| t.numel()))
            .sum()
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (b, blk) in self.blocks.iter().enumerate() {
            for (name, t) in blk.named() {
                io::write(dir.join(format!("block{b}_{name}.vgpt")), t)?;
            }
        }
        let manifest = PromptManifest {
            d: self.d,
            r_hidden: self.config.hidden(self.d),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockManifest {
                    m: b.m(),
                    r: b.r(),
                    alpha: b.alpha,
                    beta: b.beta,
                })
                .collect(),
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    /// Loads prompts and checks them against the backbone they will run on.
    pub fn load(dir: impl AsRef<Path>, backbone: &BackboneParams) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: PromptManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let d = backbone.config.d;
        if manifest.d != d {
            return Err(Error::Checkpoint(format!("prompts built for d = {}, backbone has d = {d}", manifest.d)));
        }
        if manifest.blocks.len() != backbone.blocks.len() {
            return Err(Error::Checkpoint(format!(
                "{} prompt blocks for {} backbone blocks",
                manifest.blocks.len(),
                backbone.blocks.len()
            )));
        }
        let first = manifest.blocks.first();
        let config = PromptConfig {
            m: first.map_or(0, |b| b.m),
            r: first.map_or(1, |b| b.r),
            alpha: first.map_or(0.0, |b| b.alpha),
            beta: first.map_or(0.0, |b| b.beta),
            r_hidden: Some(manifest.r_hidden),
        };
        let h = manifest.r_hidden;
        let mut blocks = Vec::with_capacity(manifest.blocks.len());
        for (b, bm) in manifest.blocks.iter().enumerate() {
            PromptConfig {
                m: bm.m,
                r: bm.r,
                alpha: bm.alpha,
                beta: bm.beta,
                r_hidden: Some(h),
            }
            .validate(d)?;
            let load = |name: &str, shape: [usize; 2]| -> Result<Tensor> {
                let t = io::read(dir.join(format!("block{b}_{name}.vgpt")))?;
                if t.shape() != shape {
                    return Err(Error::Checkpoint(format!(
                        "block{b}_{name}: shape {:?}, manifest implies {shape:?}",
                        t.shape()
                    )));
                }
                Ok(t.with_requires_grad(true))
            };
            blocks.push(BlockPrompts {
                seeds: load("seeds", [bm.m, bm.r])?,
                p_g: load("p_g", [bm.r, d])?,
                p_e: load("p_e", [bm.r, d])?,
                p_n: load("p_n", [bm.r, d])?,
                s1: load("s1", [d, h])?,
                s2: load("s2", [h, bm.r])?,
                alpha: bm.alpha,
                beta: bm.beta,
            });
        }
        Ok(Self { config, d, blocks })
    }
}

/// `MLP_s(x) = σ(x·S1)·S2`, mapping a `[d]` feature to `[r]`.
pub fn semantic_extract(x: &Tensor, s1: &Tensor, s2: &Tensor) -> Result<Tensor> {
    let h = gelu(&matmul(&Tensor::row_vector(x.data()), s1)?);
    let s = matmul(&h, s2)?;
    let r = s.numel();
    s.reshape([r])
}

/// Node prompt: `α · MLP_s(x)·P_n + (1−α) · x`.
pub fn selo_node_apply(x: &Tensor, prompts: &BlockPrompts) -> Result<Tensor> {
    let s = semantic_extract(x, &prompts.s1, &prompts.s2)?;
    let sp = matmul(&Tensor::row_vector(s.data()), &prompts.p_n)?;
    if sp.numel() != x.numel() {
        return Err(Error::shape("selo_node_apply", sp.shape(), x.shape()));
    }
    let a = prompts.alpha;
    let data = sp
        .data()
        .iter()
        .zip(x.data())
        .map(|(p, v)| a * p + (1.0 - a) * v)
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Edge prompt for a centre with `k` in-neighbours:
/// `(β/k) · Σ_n MLP_s(x_n)·P_e + (1−β) · x_c`; the sum is zero when `k = 0`.
pub fn selo_edge_apply(x_c: &Tensor, neighbor_feats: &Tensor, prompts: &BlockPrompts) -> Result<Tensor> {
    let d = x_c.numel();
    let k = neighbor_feats.rows();
    let mut acc = vec![0.0; d];
    for n in 0..k {
        let xn = Tensor::new([neighbor_feats.cols()], neighbor_feats.row(n).to_vec())?;
        let s = semantic_extract(&xn, &prompts.s1, &prompts.s2)?;
        let sp = matmul(&Tensor::row_vector(s.data()), &prompts.p_e)?;
        if sp.numel() != d {
            return Err(Error::shape("selo_edge_apply", sp.shape(), x_c.shape()));
        }
        acc.iter_mut().zip(sp.data()).for_each(|(a, v)| *a += v);
    }
    let b = prompts.beta;
    let w = if k == 0 { 0.0 } else { b / k as f64 };
    let data = acc
        .iter()
        .zip(x_c.data())
        .map(|(s, x)| w * s + (1.0 - b) * x)
        .collect();
    Tensor::new(x_c.shape().to_vec(), data)
}

/// Appends the `M` virtual nodes `seeds·P_g` after the `N` real rows of `x`
/// and returns, for each virtual node, its top-`k` real in-neighbours by
/// cosine similarity.
pub fn selo_graph_attach(x: &Tensor, seeds: &Tensor, p_g: &Tensor, k: usize) -> Result<(Tensor, Vec<Vec<usize>>)> {
    let n = x.rows();
    if seeds.rows() == 0 {
        return Ok((x.clone(), Vec::new()));
    }
    let virt = matmul(seeds, p_g)?;
    let ext = x.vstack(&virt)?;
    let lists = (n..ext.rows())
        .map(|v| nearest(&ext, v, 0..n, k, Metric::Cosine))
        .collect();
    Ok((ext, lists))
}

/// Graph for one prompted block: real nodes pick their `k` Euclidean nearest
/// among all real and virtual nodes; virtual nodes keep their cosine lists.
pub fn prompted_topology(x: &Tensor, prompts: &BlockPrompts, k: usize) -> Result<GraphTopology> {
    let n = x.rows();
    let (ext, virtual_lists) = selo_graph_attach(x, &prompts.seeds, &prompts.p_g, k)?;
    let total = ext.rows();
    let mut neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| nearest(&ext, i, 0..total, k, Metric::Euclidean))
        .collect();
    neighbors.extend(virtual_lists);
    Ok(GraphTopology {
        n_real: n,
        n_virtual: total - n,
        metric: Metric::Euclidean,
        neighbors,
    })
}
