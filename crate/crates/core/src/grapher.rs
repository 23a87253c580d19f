//! Frozen isotropic Vision GNN backbone.
//!
//! Each block runs max-relative graph convolution over a freshly built
//! Euclidean KNN graph, a residual update, then a two-layer feed-forward
//! network with a residual connection. There are no bias terms and no
//! normalisation layers.

use crate::error::{Error, Result};
use crate::patchgraph::{embed_patches, knn_build, GraphTopology, Metric, PatchConfig};
use crate::tensor::{gelu, io, matmul, rowwise_max, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyMode {
    /// Rebuild the KNN graph from the current features in every block.
    #[default]
    Dynamic,
    /// Build the graph in the first block and reuse it afterwards.
    FrozenAfterFirst,
}

/// Shape of the toy backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub d: usize,
    pub d_ff: usize,
    pub blocks: usize,
    pub k: usize,
    pub topology: TopologyMode,
}

impl Default for ModelConfig {
    /// 32×32 RGB inputs, 4×4 patches (N = 64), d = 64, d_ff = 256, 4 blocks, K = 9.
    fn default() -> Self {
        Self {
            image_h: 32,
            image_w: 32,
            channels: 3,
            patch_size: 4,
            d: 64,
            d_ff: 256,
            blocks: 4,
            k: 9,
            topology: TopologyMode::Dynamic,
        }
    }
}

impl ModelConfig {
    pub fn patch(&self) -> PatchConfig {
        PatchConfig {
            image_h: self.image_h,
            image_w: self.image_w,
            channels: self.channels,
            patch_size: self.patch_size,
            d: self.d,
            k: self.k,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.patch().num_patches()
    }

    pub fn validate(&self) -> Result<()> {
        self.patch().validate().map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("model.{field}"), message),
            other => other,
        })?;
        if self.d_ff == 0 {
            return Err(Error::config("model.d_ff", "must be >= 1"));
        }
        Ok(())
    }
}

/// Weights of one grapher block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights {
    /// `[2d×d]`, applied to `[x_i ‖ max_j(x_j − x_i)]`.
    pub w_agg: Tensor,
    pub w_update: Tensor,
    pub w1: Tensor,
    pub w2: Tensor,
}

impl BlockWeights {
    fn named(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("w_agg", &self.w_agg),
            ("w_update", &self.w_update),
            ("w1", &self.w1),
            ("w2", &self.w2),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneParams {
    pub config: ModelConfig,
    pub embedder: Tensor,
    pub blocks: Vec<BlockWeights>,
    pub frozen: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BackboneManifest {
    config: ModelConfig,
    frozen: bool,
    tensors: Vec<String>,
}

impl BackboneParams {
    /// Random weights scaled by fan-in, rounded to `f32` so that a checkpoint
    /// reloads bit-identically.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let embedder = Tensor::randn_f32([config.patch().patch_dim(), d], fan(config.patch().patch_dim()), rng);
        let blocks = (0..config.blocks)
            .map(|_| BlockWeights {
                w_agg: Tensor::randn_f32([2 * d, d], fan(2 * d), rng),
                w_update: Tensor::randn_f32([d, d], 0.5 * fan(d), rng),
                w1: Tensor::randn_f32([d, config.d_ff], fan(d), rng),
                w2: Tensor::randn_f32([config.d_ff, d], 0.5 * fan(config.d_ff), rng),
            })
            .collect();
        Ok(Self {
            config,
            embedder,
            blocks,
            frozen: true,
        })
    }

    /// All tensors in a fixed order with stable names.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedder".to_string(), &self.embedder)];
        for (b, blk) in self.blocks.iter().enumerate() {
            for (name, t) in blk.named() {
                out.push((format!("block{b}_{name}"), t));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// FNV-1a over the raw bits of every weight.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.named_tensors() {
            for v in t.data() {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= u64::from(byte);
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut names = Vec::new();
        for (name, t) in self.named_tensors() {
            io::write(dir.join(format!("{name}.vgpt")), t)?;
            names.push(name);
        }
        let manifest = BackboneManifest {
            config: self.config.clone(),
            frozen: self.frozen,
            tensors: names,
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: BackboneManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
        let config = manifest.config;
        config.validate()?;
        let (d, d_ff) = (config.d, config.d_ff);
        let load = |name: String, shape: [usize; 2]| -> Result<Tensor> {
            let t = io::read(dir.join(format!("{name}.vgpt")))?;
            if t.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "{name}: shape {:?}, manifest implies {shape:?}",
                    t.shape()
                )));
            }
            Ok(t)
        };
        let embedder = load("embedder".into(), [config.patch().patch_dim(), d])?;
        let blocks = (0..config.blocks)
            .map(|b| {
                Ok(BlockWeights {
                    w_agg: load(format!("block{b}_w_agg"), [2 * d, d])?,
                    w_update: load(format!("block{b}_w_update"), [d, d])?,
                    w1: load(format!("block{b}_w1"), [d, d_ff])?,
                    w2: load(format!("block{b}_w2"), [d_ff, d])?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            embedder,
            blocks,
            frozen: manifest.frozen,
        })
    }
}

/// Max-relative aggregation for one node:
/// `[x_i ‖ max_j(x_j − x_i)] · W_agg`, with the max taken as zero when the
/// neighbourhood is empty.
pub fn aggregate(x_i: &Tensor, neighbors: &Tensor, w_agg: &Tensor) -> Result<Tensor> {
    let d = x_i.numel();
    if w_agg.shape() != [2 * d, d] {
        return Err(Error::shape("aggregate", w_agg.shape(), &[2 * d, d]));
    }
    let k = neighbors.rows();
    let m = if k == 0 {
        vec![0.0; d]
    } else {
        if neighbors.cols() != d {
            return Err(Error::shape("aggregate", neighbors.shape(), x_i.shape()));
        }
        let mut diffs = neighbors.clone();
        for r in 0..k {
            diffs
                .row_mut(r)
                .iter_mut()
                .zip(x_i.data())
                .for_each(|(v, x)| *v -= x);
        }
        rowwise_max(&diffs)?.into_data()
    };
    let mut cat = x_i.data().to_vec();
    cat.extend(m);
    let out = matmul(&Tensor::row_vector(&cat), w_agg)?;
    out.reshape([d])
}

/// Residual update `x_i + agg · W_update`.
pub fn update(x_i: &Tensor, agg: &Tensor, w_update: &Tensor) -> Result<Tensor> {
    if x_i.numel() != agg.numel() {
        return Err(Error::shape("update", x_i.shape(), agg.shape()));
    }
    let delta = matmul(&Tensor::row_vector(agg.data()), w_update)?;
    if delta.numel() != x_i.numel() {
        return Err(Error::shape("update", x_i.shape(), delta.shape()));
    }
    let data = x_i.data().iter().zip(delta.data()).map(|(x, g)| x + g).collect();
    Tensor::new(x_i.shape().to_vec(), data)
}

/// Feed-forward block `σ(X·W1)·W2 + X` with GELU as σ.
pub fn ffn(x: &Tensor, w1: &Tensor, w2: &Tensor) -> Result<Tensor> {
    let h = matmul(&gelu(&matmul(x, w1)?), w2)?;
    if h.shape() != x.shape() {
        return Err(Error::shape("ffn", h.shape(), x.shape()));
    }
    let data = h.data().iter().zip(x.data()).map(|(a, b)| a + b).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Graph convolution (aggregate + update on every node) followed by the FFN.
pub fn block_forward(x: &Tensor, topo: &GraphTopology, w: &BlockWeights) -> Result<Tensor> {
    let n = x.rows();
    let d = x.cols();
    let mut out = Tensor::zeros([n, d]);
    for i in 0..n {
        let xi = Tensor::new([d], x.row(i).to_vec())?;
        let nb = x.select_rows(&topo.neighbors[i]);
        let agg = aggregate(&xi, &nb, &w.w_agg)?;
        let upd = update(&xi, &agg, &w.w_update)?;
        out.row_mut(i).copy_from_slice(upd.data());
    }
    ffn(&out, &w.w1, &w.w2)
}

/// Node features after the embedding (index 0) and after every block, plus
/// the graph each block used.
#[derive(Clone, Debug)]
pub struct BackboneTrace {
    pub layers: Vec<Tensor>,
    pub topologies: Vec<GraphTopology>,
}

pub fn backbone_trace(image: &Tensor, params: &BackboneParams) -> Result<BackboneTrace> {
    let cfg = &params.config;
    let mut x = embed_patches(image, &cfg.patch(), &params.embedder)?;
    let mut layers = vec![x.clone()];
    let mut topologies: Vec<GraphTopology> = Vec::with_capacity(params.blocks.len());
    for blk in &params.blocks {
        let topo = match (cfg.topology, topologies.first()) {
            (TopologyMode::FrozenAfterFirst, Some(first)) => first.clone(),
            _ => knn_build(&x, cfg.k, Metric::Euclidean),
        };
        x = block_forward(&x, &topo, blk)?;
        layers.push(x.clone());
        topologies.push(topo);
    }
    Ok(BackboneTrace { layers, topologies })
}

/// Final node features `[N×d]` of the unprompted backbone.
pub fn backbone_forward(image: &Tensor, params: &BackboneParams) -> Result<Tensor> {
    let mut trace = backbone_trace(image, params)?;
    Ok(trace.layers.pop().expect("embedding layer present"))
}
