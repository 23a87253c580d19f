//! Image → patch nodes, and brute-force directed KNN graphs over node features.
//!
//! An edge `j → i` means `j` is one of the `K` nearest neighbours of `i`;
//! `neighbors[i]` lists those in-neighbours by rank. No positional
//! embeddings are added to patch features.

use crate::error::{Error, Result};
use crate::tensor::{matmul, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// Smallest Euclidean distance first.
    Euclidean,
    /// Largest cosine similarity first; a zero-norm vector has similarity 0
    /// to everything.
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub d: usize,
    pub k: usize,
}

impl PatchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 {
            return Err(Error::config("patch_size", "must be >= 1"));
        }
        if self.image_h == 0 || !self.image_h.is_multiple_of(self.patch_size) {
            return Err(Error::config(
                "image_h",
                format!("{} is not a positive multiple of patch size {}", self.image_h, self.patch_size),
            ));
        }
        if self.image_w == 0 || !self.image_w.is_multiple_of(self.patch_size) {
            return Err(Error::config(
                "image_w",
                format!("{} is not a positive multiple of patch size {}", self.image_w, self.patch_size),
            ));
        }
        if self.channels == 0 {
            return Err(Error::config("channels", "must be >= 1"));
        }
        if self.d == 0 {
            return Err(Error::config("d", "must be >= 1"));
        }
        if self.k == 0 {
            return Err(Error::config("k", "must be >= 1"));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.image_h / self.patch_size) * (self.image_w / self.patch_size)
    }

    /// Length of a flattened patch.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}

/// Cuts an `[h×w×c]` image into non-overlapping patches, row-major over the
/// patch grid; each patch is flattened as `(row, col, channel)`.
pub fn patchify(image: &Tensor, cfg: &PatchConfig) -> Result<Tensor> {
    cfg.validate()?;
    let expected = [cfg.image_h, cfg.image_w, cfg.channels];
    if image.shape() != expected {
        return Err(Error::shape("patchify", image.shape(), &expected));
    }
    let p = cfg.patch_size;
    let (gh, gw) = (cfg.image_h / p, cfg.image_w / p);
    let c = cfg.channels;
    let mut data = Vec::with_capacity(cfg.num_patches() * cfg.patch_dim());
    let px = image.data();
    for py in 0..gh {
        for pxi in 0..gw {
            for dy in 0..p {
                let row = py * p + dy;
                let start = (row * cfg.image_w + pxi * p) * c;
                data.extend_from_slice(&px[start..start + p * c]);
            }
        }
    }
    Tensor::new([gh * gw, cfg.patch_dim()], data)
}

/// Patch features `[N×d]`: flattened patches times `embedder[(p²·c)×d]`.
pub fn embed_patches(image: &Tensor, cfg: &PatchConfig, embedder: &Tensor) -> Result<Tensor> {
    let patches = patchify(image, cfg)?;
    let expected = [cfg.patch_dim(), cfg.d];
    if embedder.shape() != expected {
        return Err(Error::shape("embed_patches", embedder.shape(), &expected));
    }
    matmul(&patches, embedder)
}

/// Per-node directed in-neighbour lists over `n_real` patch nodes followed
/// by `n_virtual` prompt nodes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphTopology {
    pub n_real: usize,
    pub n_virtual: usize,
    /// Metric that ranked the real-node lists.
    pub metric: Metric,
    pub neighbors: Vec<Vec<usize>>,
}

impl GraphTopology {
    pub fn n_total(&self) -> usize {
        self.n_real + self.n_virtual
    }

    /// Checks list lengths, index bounds, self-loops and duplicates.
    pub fn validate(&self, k: usize) -> Result<()> {
        let n = self.n_total();
        if self.neighbors.len() != n {
            return Err(Error::shape("topology", &[n], &[self.neighbors.len()]));
        }
        let real_len = k.min(n.saturating_sub(1));
        for (i, list) in self.neighbors.iter().enumerate() {
            if i < self.n_real && list.len() != real_len {
                return Err(Error::shape("topology", &[i, real_len], &[list.len()]));
            }
            for (pos, &j) in list.iter().enumerate() {
                if j >= n || j == i || list[..pos].contains(&j) {
                    return Err(Error::shape("topology", &[i], &[j]));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("topology serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::json("<topology>", e))
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Ranks `candidates` for the query row `query` and keeps the best `k`
/// (ties by lowest index). The query itself is never returned.
pub fn nearest<I>(features: &Tensor, query: usize, candidates: I, k: usize, metric: Metric) -> Vec<usize>
where
    I: IntoIterator<Item = usize>,
{
    let q = features.row(query);
    let qn = norm(q);
    let mut scored: Vec<(f64, usize)> = candidates
        .into_iter()
        .filter(|&j| j != query)
        .map(|j| {
            let x = features.row(j);
            let key = match metric {
                Metric::Euclidean => squared_distance(q, x),
                // negate so that ascending order puts the most similar first
                Metric::Cosine => -cosine(q, qn, x, norm(x)),
            };
            // `+ 0.0` folds -0.0 into 0.0 so exact ties fall back to index order
            (key + 0.0, j)
        })
        .collect();
    let by_rank = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if scored.len() > k {
        scored.select_nth_unstable_by(k, by_rank);
        scored.truncate(k);
    }
    scored.sort_by(by_rank);
    scored.into_iter().map(|(_, j)| j).collect()
}

/// KNN graph over all `n` rows: each node gets the `min(K, n−1)` closest
/// other nodes as in-neighbours.
pub fn knn_build(features: &Tensor, k: usize, metric: Metric) -> GraphTopology {
    let n = features.rows();
    let neighbors = (0..n).map(|i| nearest(features, i, 0..n, k, metric)).collect();
    GraphTopology {
        n_real: n,
        n_virtual: 0,
        metric,
        neighbors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(h: usize, w: usize, c: usize, p: usize, d: usize) -> PatchConfig {
        PatchConfig {
            image_h: h,
            image_w: w,
            channels: c,
            patch_size: p,
            d,
            k: 1,
        }
    }

    #[test]
    fn identity_embedder_returns_flattened_patches() {
        let img = Tensor::new([4, 4, 1], (0..16).map(f64::from).collect()).unwrap();
        let c = cfg(4, 4, 1, 2, 5);
        let mut emb = Tensor::zeros([4, 5]);
        for i in 0..4 {
            emb.data_mut()[i * 5 + i] = 1.0;
        }
        let x = embed_patches(&img, &c, &emb).unwrap();
        assert_eq!(x.shape(), &[4, 5]);
        assert_eq!(x.row(0), &[0.0, 1.0, 4.0, 5.0, 0.0]);
        assert_eq!(x.row(1), &[2.0, 3.0, 6.0, 7.0, 0.0]);
        assert_eq!(x.row(3), &[10.0, 11.0, 14.0, 15.0, 0.0]);
    }

    #[test]
    fn zero_image_gives_zero_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = cfg(4, 4, 3, 2, 6);
        let emb = Tensor::randn([12, 6], 1.0, &mut rng);
        let x = embed_patches(&Tensor::zeros([4, 4, 3]), &c, &emb).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_flatten_oracle_6x6() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Tensor::randn([6, 6, 1], 1.0, &mut rng);
        let emb = Tensor::randn([4, 3], 1.0, &mut rng);
        let x = embed_patches(&img, &cfg(6, 6, 1, 2, 3), &emb).unwrap();
        assert_eq!(x.rows(), 9);
        // patch 0 = pixels (0,0),(0,1),(1,0),(1,1)
        let flat = [img.data()[0], img.data()[1], img.data()[6], img.data()[7]];
        for c in 0..3 {
            let mut expect = 0.0;
            for (p, v) in flat.iter().enumerate() {
                expect += v * emb.get(p, c);
            }
            assert!((x.get(0, c) - expect).abs() < 1e-12);
        }
        // patch 4 is the centre block (rows 2..4, cols 2..4)
        let centre = [img.data()[14], img.data()[15], img.data()[20], img.data()[21]];
        let expect: f64 = centre.iter().enumerate().map(|(p, v)| v * emb.get(p, 0)).sum();
        assert!((x.get(4, 0) - expect).abs() < 1e-12);
    }

    #[test]
    fn non_divisible_image_is_config_error() {
        let err = patchify(&Tensor::zeros([5, 4, 1]), &cfg(5, 4, 1, 2, 2)).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "image_h"));
    }

    #[test]
    fn identical_nodes_neighbor_each_other() {
        let x = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        for metric in [Metric::Euclidean, Metric::Cosine] {
            let g = knn_build(&x, 1, metric);
            assert_eq!(g.neighbors, vec![vec![1], vec![0]]);
        }
    }

    #[test]
    fn single_node_has_no_neighbors() {
        let g = knn_build(&Tensor::from_rows(&[vec![3.0]]).unwrap(), 3, Metric::Euclidean);
        assert_eq!(g.neighbors, vec![Vec::<usize>::new()]);
        g.validate(3).unwrap();
    }

    #[test]
    fn zero_norm_rows_under_cosine_rank_by_index() {
        let x = Tensor::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 2.0]])
            .unwrap();
        let g = knn_build(&x, 3, Metric::Cosine);
        assert_eq!(g.neighbors[0], vec![1, 2, 3]);
        // row 1: sim(0)=0, sim(2)=-1, sim(3)=0
        assert_eq!(g.neighbors[1], vec![0, 3, 2]);
    }

    #[test]
    fn topology_json_round_trip_and_validation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn([6, 3], 1.0, &mut rng);
        let g = knn_build(&x, 2, Metric::Euclidean);
        g.validate(2).unwrap();
        assert_eq!(GraphTopology::from_json(&g.to_json()).unwrap(), g);
        let mut bad = g.clone();
        bad.neighbors[0][0] = 0;
        assert!(bad.validate(2).is_err());
    }
}
