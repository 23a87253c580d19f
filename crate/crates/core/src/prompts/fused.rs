use super::BlockPrompts;
use crate::error::{Error, Result};
use crate::grapher::BlockWeights;
use crate::patchgraph::GraphTopology;
use crate::tensor::{Tape, Tensor, Var};

/// Backbone weights of one block registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub w_agg: Var,
    pub w_update: Var,
    pub w1: Var,
    pub w2: Var,
}

impl BlockVars {
    pub fn register(tape: &mut Tape, w: &BlockWeights) -> Self {
        Self {
            w_agg: tape.leaf(&w.w_agg),
            w_update: tape.leaf(&w.w_update),
            w1: tape.leaf(&w.w1),
            w2: tape.leaf(&w.w2),
        }
    }
}

/// Prompts of one block registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct PromptVars {
    pub seeds: Var,
    pub p_g: Var,
    pub p_e: Var,
    pub p_n: Var,
    pub s1: Var,
    pub s2: Var,
    pub alpha: f64,
    pub beta: f64,
}

impl PromptVars {
    pub fn register(tape: &mut Tape, p: &BlockPrompts) -> Self {
        Self {
            seeds: tape.leaf(&p.seeds),
            p_g: tape.leaf(&p.p_g),
            p_e: tape.leaf(&p.p_e),
            p_n: tape.leaf(&p.p_n),
            s1: tape.leaf(&p.s1),
            s2: tape.leaf(&p.s2),
            alpha: p.alpha,
            beta: p.beta,
        }
    }

    /// Current tape values as plain prompts.
    pub fn snapshot(&self, tape: &Tape) -> BlockPrompts {
        let t = |v: Var| tape.value(v).clone();
        BlockPrompts {
            seeds: t(self.seeds),
            p_g: t(self.p_g),
            p_e: t(self.p_e),
            p_n: t(self.p_n),
            s1: t(self.s1),
            s2: t(self.s2),
            alpha: self.alpha,
            beta: self.beta,
        }
    }

    /// Same order as [`BlockPrompts::named`].
    pub fn vars(&self) -> [Var; 6] {
        [self.seeds, self.p_g, self.p_e, self.p_n, self.s1, self.s2]
    }
}

fn mlp_s(tape: &mut Tape, x: Var, p: &PromptVars) -> Result<Var> {
    let h = tape.matmul(x, p.s1)?;
    let h = tape.gelu(h);
    tape.matmul(h, p.s2)
}

/// Prompted block as matrix algebra over all nodes at once:
///
/// ```text
/// X̂   = [X ; seeds·P_g]
/// X̃   = (1−α)·X + α·MLP_s(X)·P_n
/// Ĝ   = [X̃ ‖ max_{j∈N̂(i)} (X̂_j − X̃_i)] · W_agg
/// F   = (1−β)·X + Ĝ·W_update + β·mean_{j∈N̂(i)} MLP_s(X̂_j)·P_e
/// out = σ(F·W1)·W2 + F
/// ```
pub fn prompted_block_fused_tape(
    tape: &mut Tape,
    x: Var,
    topo: &GraphTopology,
    w: &BlockVars,
    p: &PromptVars,
) -> Result<Var> {
    let n = tape.value(x).rows();
    let m = tape.value(p.seeds).rows();
    if topo.n_real != n || topo.n_virtual != m {
        return Err(Error::shape("prompted_block_fused", &[topo.n_real, topo.n_virtual], &[n, m]));
    }

    let virt = tape.matmul(p.seeds, p.p_g)?;
    let ext = tape.concat_rows(x, virt)?;
    let sem_ext = mlp_s(tape, ext, p)?;
    let sem_real = tape.gather_rows(sem_ext, (0..n).collect())?;

    let node_delta = tape.matmul(sem_real, p.p_n)?;
    let node_delta = tape.scale(node_delta, p.alpha);
    let kept = tape.scale(x, 1.0 - p.alpha);
    let centre = tape.add(node_delta, kept)?;

    let mut flat = Vec::new();
    let mut owner = Vec::new();
    let mut segments = Vec::with_capacity(n);
    for (i, list) in topo.neighbors[..n].iter().enumerate() {
        segments.push((flat.len(), list.len()));
        flat.extend_from_slice(list);
        owner.extend(std::iter::repeat_n(i, list.len()));
    }
    let nb = tape.gather_rows(ext, flat.clone())?;
    let centres = tape.gather_rows(centre, owner)?;
    let rel = tape.sub(nb, centres)?;
    let rel_max = tape.segment_max(rel, &segments)?;
    let cat = tape.concat_cols(centre, rel_max)?;
    let agg = tape.matmul(cat, w.w_agg)?;
    let upd = tape.matmul(agg, w.w_update)?;

    let edge_all = tape.matmul(sem_ext, p.p_e)?;
    let edge_nb = tape.gather_rows(edge_all, flat)?;
    let edge_mean = tape.segment_mean(edge_nb, segments)?;
    let edge = tape.scale(edge_mean, p.beta);

    let base = tape.scale(x, 1.0 - p.beta);
    let f = tape.add(base, upd)?;
    let f = tape.add(f, edge)?;

    let h = tape.matmul(f, w.w1)?;
    let h = tape.gelu(h);
    let h = tape.matmul(h, w.w2)?;
    tape.add(h, f)
}

/// Value-only wrapper around [`prompted_block_fused_tape`].
pub fn prompted_block_fused(
    x: &Tensor,
    topo: &GraphTopology,
    weights: &BlockWeights,
    prompts: &BlockPrompts,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = BlockVars::register(&mut tape, weights);
    let p = PromptVars::register(&mut tape, prompts);
    let out = prompted_block_fused_tape(&mut tape, xv, topo, &w, &p)?;
    Ok(tape.value(out).clone().with_requires_grad(false))
}
