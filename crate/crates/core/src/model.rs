//! The classifier: backbone, optional per-block prompts and a linear head on
//! mean-pooled node features.

use crate::error::{Error, Result};
use crate::grapher::{backbone_forward, BackboneParams, TopologyMode};
use crate::patchgraph::{embed_patches, GraphTopology};
use crate::prompts::{prompted_block_fused, prompted_block_fused_tape, prompted_topology, BlockVars, PromptParams, PromptVars};
use crate::tensor::{matmul, Tape, Tensor, Var};

/// Mean of the `N` node rows.
pub fn mean_pool(x: &Tensor) -> Result<Tensor> {
    let (n, d) = (x.rows(), x.cols());
    if n == 0 {
        return Err(Error::Empty { op: "mean_pool" });
    }
    let mut out = vec![0.0; d];
    for i in 0..n {
        out.iter_mut().zip(x.row(i)).for_each(|(o, v)| *o += v);
    }
    let inv = 1.0 / n as f64;
    out.iter_mut().for_each(|o| *o *= inv);
    Tensor::new([1, d], out)
}

/// Mean-pool the nodes, then map to `C` logits.
pub fn head_forward(x: &Tensor, w_head: &Tensor) -> Result<Tensor> {
    if w_head.shape().len() != 2 || w_head.cols() < 2 {
        return Err(Error::config("head.classes", "need at least 2 classes"));
    }
    let logits = matmul(&mean_pool(x)?, w_head)?;
    logits.reshape([w_head.cols()])
}

/// Final node features of the network, evaluated eagerly. Without prompts
/// this is exactly [`backbone_forward`].
pub fn network_features(image: &Tensor, backbone: &BackboneParams, prompts: Option<&PromptParams>) -> Result<Tensor> {
    let Some(prompts) = prompts else {
        return backbone_forward(image, backbone);
    };
    check_prompts(backbone, prompts)?;
    let cfg = &backbone.config;
    let mut x = embed_patches(image, &cfg.patch(), &backbone.embedder)?;
    let mut first: Option<GraphTopology> = None;
    for (w, p) in backbone.blocks.iter().zip(&prompts.blocks) {
        let topo = block_topology(&x, p, cfg.k, cfg.topology, &first)?;
        x = prompted_block_fused(&x, &topo, w, p)?;
        first.get_or_insert(topo);
    }
    Ok(x)
}

pub fn predict(image: &Tensor, backbone: &BackboneParams, prompts: Option<&PromptParams>, head: &Tensor) -> Result<usize> {
    let logits = head_forward(&network_features(image, backbone, prompts)?, head)?;
    Ok(argmax(logits.data()))
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn check_prompts(backbone: &BackboneParams, prompts: &PromptParams) -> Result<()> {
    if prompts.d != backbone.config.d || prompts.blocks.len() != backbone.blocks.len() {
        return Err(Error::Checkpoint(format!(
            "prompts are for d = {} with {} blocks, backbone has d = {} with {} blocks",
            prompts.d,
            prompts.blocks.len(),
            backbone.config.d,
            backbone.blocks.len()
        )));
    }
    Ok(())
}

fn block_topology(
    x: &Tensor,
    p: &crate::prompts::BlockPrompts,
    k: usize,
    mode: TopologyMode,
    first: &Option<GraphTopology>,
) -> Result<GraphTopology> {
    match (mode, first) {
        (TopologyMode::FrozenAfterFirst, Some(t)) => Ok(t.clone()),
        _ => prompted_topology(x, p, k),
    }
}

/// Backbone and prompt tensors registered once per tape.
pub struct NetworkVars {
    pub blocks: Vec<BlockVars>,
    pub prompts: Option<Vec<PromptVars>>,
}

impl NetworkVars {
    pub fn register(tape: &mut Tape, backbone: &BackboneParams, prompts: Option<&PromptParams>) -> Self {
        let blocks = match prompts {
            Some(_) => backbone.blocks.iter().map(|w| BlockVars::register(tape, w)).collect(),
            None => Vec::new(),
        };
        let prompts = prompts.map(|p| p.blocks.iter().map(|b| PromptVars::register(tape, b)).collect());
        Self { blocks, prompts }
    }

    /// Prompts bound to caller-made tape nodes, six per block in the order of
    /// [`crate::prompts::BlockPrompts::named`].
    pub fn from_vars(tape: &mut Tape, backbone: &BackboneParams, config: &crate::prompts::PromptConfig, prompt_vars: &[Var]) -> Self {
        let blocks = backbone.blocks.iter().map(|w| BlockVars::register(tape, w)).collect();
        let prompts = prompt_vars
            .chunks(6)
            .map(|v| PromptVars {
                seeds: v[0],
                p_g: v[1],
                p_e: v[2],
                p_n: v[3],
                s1: v[4],
                s2: v[5],
                alpha: config.alpha,
                beta: config.beta,
            })
            .collect();
        Self { blocks, prompts: Some(prompts) }
    }
}

/// Final node features of one image as a tape node. Graph topology is
/// rebuilt from the current tape values at every block. Without prompts
/// nothing upstream is trainable, so the backbone runs eagerly and enters as
/// a constant.
pub fn network_features_tape(tape: &mut Tape, image: &Tensor, backbone: &BackboneParams, vars: &NetworkVars) -> Result<Var> {
    let Some(pvars) = &vars.prompts else {
        let feats = backbone_forward(image, backbone)?;
        return Ok(tape.constant(feats));
    };
    let cfg = &backbone.config;
    if pvars.len() != backbone.blocks.len() || vars.blocks.len() != backbone.blocks.len() {
        return Err(Error::Checkpoint(format!(
            "{} prompt blocks registered for a {}-block backbone",
            pvars.len(),
            backbone.blocks.len()
        )));
    }
    let x0 = embed_patches(image, &cfg.patch(), &backbone.embedder)?;
    let mut x = tape.constant(x0);
    let mut first: Option<GraphTopology> = None;
    for (bv, pv) in vars.blocks.iter().zip(pvars) {
        let topo = match (cfg.topology, &first) {
            (TopologyMode::FrozenAfterFirst, Some(t)) => t.clone(),
            _ => prompted_topology(tape.value(x), &pv.snapshot(tape), cfg.k)?,
        };
        x = prompted_block_fused_tape(tape, x, &topo, bv, pv)?;
        first.get_or_insert(topo);
    }
    Ok(x)
}

/// Mean-pooled `[1×d]` row of a node-feature node.
pub fn mean_pool_tape(tape: &mut Tape, x: Var) -> Result<Var> {
    let n = tape.value(x).rows();
    if n == 0 {
        return Err(Error::Empty { op: "mean_pool" });
    }
    tape.segment_mean(x, vec![(0, n)])
}
