//! Semantic low-rank prompts on one block: the three prompt pieces applied
//! separately, then the compositional and fused block paths compared, and the
//! neutral setting checked against the plain block.
//!
//! ```text
//! cargo run --example selo_prompts
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgp::grapher::{block_forward, BlockWeights};
use vgp::patchgraph::{knn_build, Metric};
use vgp::prompts::{
    prompted_block_compositional, prompted_block_fused, prompted_topology, selo_graph_attach, selo_node_apply, semantic_extract,
    PromptConfig, PromptParams,
};
use vgp::tensor::Tensor;

fn main() -> vgp::Result<()> {
    let (n, d, d_ff, k) = (9, 16, 32, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn([n, d], 1.0, &mut rng);
    let w = BlockWeights {
        w_agg: Tensor::randn([2 * d, d], 0.3, &mut rng),
        w_update: Tensor::randn([d, d], 0.3, &mut rng),
        w1: Tensor::randn([d, d_ff], 0.3, &mut rng),
        w2: Tensor::randn([d_ff, d], 0.3, &mut rng),
    };
    let cfg = PromptConfig { m: 2, r: 4, alpha: 0.2, beta: 0.2, r_hidden: None };
    let p = PromptParams::random(cfg, d, 1, 0.3, &mut rng)?.blocks.remove(0);

    let coeffs = semantic_extract(&Tensor::new([d], x.row(0).to_vec())?, &p.s1, &p.s2)?;
    println!("semantic coefficients of node 0 ({} of them): {:.3?}", coeffs.numel(), coeffs.data());
    let (extended, links) = selo_graph_attach(&x, &p.seeds, &p.p_g, k)?;
    println!("{} nodes after attaching {} virtual nodes to real nodes {links:?}", extended.rows(), links.len());
    let node0 = selo_node_apply(&Tensor::new([d], x.row(0).to_vec())?, &p)?;
    println!("node prompt moves node 0 by {:.4}", node0.data().iter().zip(x.row(0)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));

    let topo = prompted_topology(&x, &p, k)?;
    println!("prompted graph: {} real + {} virtual nodes", topo.n_real, topo.n_virtual);
    let a = prompted_block_compositional(&x, &topo, &w, &p)?;
    let b = prompted_block_fused(&x, &topo, &w, &p)?;
    println!("compositional vs fused max-abs gap: {:.2e}", a.max_abs_diff(&b));

    let mut neutral = PromptParams::random(PromptConfig { m: 0, r: 4, alpha: 0.0, beta: 0.0, r_hidden: None }, d, 1, 0.3, &mut rng)?;
    let np = neutral.blocks.remove(0);
    let plain = block_forward(&x, &knn_build(&x, k, Metric::Euclidean), &w)?;
    let prompted = prompted_block_fused(&x, &prompted_topology(&x, &np, k)?, &w, &np)?;
    println!("α = β = 0, M = 0 equals the plain block bit for bit: {}", plain == prompted);
    Ok(())
}
