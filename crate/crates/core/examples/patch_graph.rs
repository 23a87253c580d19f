//! Cuts an image into patch nodes and links each node to its `K` nearest
//! neighbours under both metrics.
//!
//! ```text
//! cargo run --example patch_graph
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgp::patchgraph::{embed_patches, knn_build, patchify, Metric, PatchConfig};
use vgp::tensor::Tensor;

fn main() -> vgp::Result<()> {
    let cfg = PatchConfig { image_h: 8, image_w: 8, channels: 1, patch_size: 4, d: 3, k: 2 };
    cfg.validate()?;
    // a left-to-right ramp: patches in the same column look alike
    let img = Tensor::new([8, 8, 1], (0..64).map(|i| f64::from(i % 8)).collect())?;
    let patches = patchify(&img, &cfg)?;
    println!("{} patches of {} values", patches.rows(), patches.cols());

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let embedder = Tensor::randn([cfg.patch_dim(), cfg.d], 0.2, &mut rng);
    let x = embed_patches(&img, &cfg, &embedder)?;
    for metric in [Metric::Euclidean, Metric::Cosine] {
        let topo = knn_build(&x, cfg.k, metric);
        topo.validate(cfg.k)?;
        println!("{metric:?}:");
        for (i, nb) in topo.neighbors.iter().enumerate() {
            println!("  node {i} <- {nb:?}");
        }
    }
    println!("{}", knn_build(&x, 1, Metric::Euclidean).to_json());
    Ok(())
}
