use super::{prompted_topology, selo_edge_apply, selo_graph_attach, selo_node_apply, BlockPrompts, PromptParams};
use crate::error::{Error, Result};
use crate::grapher::{aggregate, ffn, update, BackboneParams, BlockWeights, TopologyMode};
use crate::patchgraph::{embed_patches, GraphTopology};
use crate::tensor::Tensor;

/// One prompted block built from the per-node operations:
///
/// 1. attach the virtual nodes,
/// 2. aggregate each node-prompted centre over its (extended) neighbourhood,
/// 3. residual update on top of 4. the edge-prompted centre,
/// 5. FFN. Virtual nodes are dropped on exit.
pub fn prompted_block_compositional(
    x: &Tensor,
    topo: &GraphTopology,
    weights: &BlockWeights,
    prompts: &BlockPrompts,
) -> Result<Tensor> {
    let (n, d) = (x.rows(), x.cols());
    if topo.n_real != n || topo.n_virtual != prompts.m() {
        return Err(Error::shape(
            "prompted_block_compositional",
            &[topo.n_real, topo.n_virtual],
            &[n, prompts.m()],
        ));
    }
    let virtual_k = topo.neighbors.get(n).map_or(0, Vec::len);
    let (ext, _) = selo_graph_attach(x, &prompts.seeds, &prompts.p_g, virtual_k)?;

    let mut out = Tensor::zeros([n, d]);
    for i in 0..n {
        let xi = Tensor::new([d], x.row(i).to_vec())?;
        let nb = ext.select_rows(&topo.neighbors[i]);
        let centre = selo_node_apply(&xi, prompts)?;
        let agg = aggregate(&centre, &nb, &weights.w_agg)?;
        let base = selo_edge_apply(&xi, &nb, prompts)?;
        let upd = update(&base, &agg, &weights.w_update)?;
        out.row_mut(i).copy_from_slice(upd.data());
    }
    ffn(&out, &weights.w1, &weights.w2)
}

/// Full prompted backbone evaluated block by block with
/// [`prompted_block_compositional`]; returns the final node features.
pub fn prompted_forward_compositional(
    image: &Tensor,
    backbone: &BackboneParams,
    prompts: &PromptParams,
) -> Result<Tensor> {
    let cfg = &backbone.config;
    let mut x = embed_patches(image, &cfg.patch(), &backbone.embedder)?;
    let mut first: Option<GraphTopology> = None;
    for (w, p) in backbone.blocks.iter().zip(&prompts.blocks) {
        let topo = match (&first, cfg.topology) {
            (Some(t), TopologyMode::FrozenAfterFirst) => t.clone(),
            _ => prompted_topology(&x, p, cfg.k)?,
        };
        x = prompted_block_compositional(&x, &topo, w, p)?;
        first.get_or_insert(topo);
    }
    Ok(x)
}
