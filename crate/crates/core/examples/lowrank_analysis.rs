//! PCA rank of constructed data and of backbone features, plus the singular
//! value tail of the prompt deltas.
//!
//! ```text
//! cargo run --release --example lowrank_analysis
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgp::analyzer::{covariance, low_rank_matrix, pca_analyze, rank_profile, truncation_error, Normalization, ThresholdMode};
use vgp::grapher::{backbone_trace, BackboneParams, ModelConfig};
use vgp::trainer::{synthetic, SyntheticSpec};
use vgp::verify::low_rank_tail;

fn main() -> vgp::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for k in [1, 3, 5] {
        let x = low_rank_matrix(200, 64, k, 1e-3, &mut rng)?;
        let pca = pca_analyze(&x, 0.25, ThresholdMode::Relative)?;
        let err = truncation_error(&covariance(&x)?, &pca, k)?;
        println!("rank-{k} data: est_rank {}, error after {k} components {err:.3e} (λ_{} = {:.3e})", pca.est_rank, k + 1, pca.eigenvalues[k]);
    }

    let model = ModelConfig::default();
    let backbone = BackboneParams::init(model.clone(), &mut rng)?;
    let data = synthetic(&SyntheticSpec { n_train: 4, n_val: 0, ..SyntheticSpec::default() }, 0);
    let mut stacks: Vec<vgp::tensor::Tensor> = Vec::new();
    for img in &data.train.images {
        for (l, t) in backbone_trace(img, &backbone)?.layers.into_iter().enumerate() {
            if l == stacks.len() {
                stacks.push(t);
            } else {
                stacks[l] = stacks[l].vstack(&t)?;
            }
        }
    }
    let report = rank_profile(&stacks, 0.25, ThresholdMode::Relative, Normalization::L2)?;
    println!("backbone layer ranks of d = {}: {:?}", report.d, report.ranks());

    for r in [4, 8, 32] {
        let (node, edge) = low_rank_tail(64, r, 96, r as u64)?;
        println!("r = {r}: largest singular value past r, node {node:.1e}, edge {edge:.1e}");
    }
    Ok(())
}
