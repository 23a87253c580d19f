//! Runs the frozen Vision GNN on one synthetic image, prints per-layer node
//! statistics, and round-trips the backbone through a checkpoint.
//!
//! ```text
//! cargo run --release --example backbone_forward
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgp::grapher::{backbone_forward, backbone_trace, BackboneParams, ModelConfig};
use vgp::model::{head_forward, mean_pool};
use vgp::trainer::{synthetic, SyntheticSpec};

fn main() -> vgp::Result<()> {
    let model = ModelConfig::default();
    let backbone = BackboneParams::init(model.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
    let data = synthetic(&SyntheticSpec { n_train: 2, n_val: 0, ..SyntheticSpec::default() }, 0);
    let img = &data.train.images[0];

    let trace = backbone_trace(img, &backbone)?;
    for (l, x) in trace.layers.iter().enumerate() {
        let rms = (x.data().iter().map(|v| v * v).sum::<f64>() / x.data().len() as f64).sqrt();
        println!("layer {l}: {} nodes × {} dims, rms {rms:.4}", x.rows(), x.cols());
    }
    for (b, t) in trace.topologies.iter().enumerate() {
        println!("block {b}: node 0 neighbours {:?}", t.neighbors[0]);
    }

    let out = backbone_forward(img, &backbone)?;
    let pooled = mean_pool(&out)?;
    println!("pooled features: first 4 = {:?}", &pooled.data()[..4]);
    let zero_head = vgp::trainer::init_head(model.d, 2);
    println!("zero head logits: {:?}", head_forward(&out, &zero_head)?.data());

    let dir = std::env::temp_dir().join("vgp_backbone_example");
    backbone.save(&dir)?;
    let reloaded = BackboneParams::load(&dir)?;
    println!("checkpoint round trip exact: {}", backbone_forward(img, &reloaded)? == out);
    Ok(())
}
