//! Low-rank analysis of node features: eigendecomposition of `Σ = XᵀX`,
//! thresholded rank estimates, per-component coefficient profiles and RGB
//! maps of the first three components.

mod linalg;

pub use linalg::{singular_values, spectral_norm_sym, sym_eigen, SymEigen, JACOBI_TOL};

use crate::error::{Error, Result};
use crate::tensor::{kernels, matmul, Tensor};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// How `ε` is compared with the spectrum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// `λ_i / λ_1 > ε`
    #[default]
    Relative,
    /// `λ_i > ε`
    Absolute,
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relative" => Ok(Self::Relative),
            "absolute" => Ok(Self::Absolute),
            _ => Err(Error::config("mode", format!("expected `relative` or `absolute`, got `{s}`"))),
        }
    }
}

/// Row preprocessing applied before `Σ = XᵀX`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Each row scaled to unit L2 norm (zero rows stay zero).
    #[default]
    L2,
    /// Column means subtracted.
    Center,
    None,
}

impl std::str::FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(Self::L2),
            "center" => Ok(Self::Center),
            "none" => Ok(Self::None),
            _ => Err(Error::config("normalize", format!("expected `l2`, `center` or `none`, got `{s}`"))),
        }
    }
}

pub fn normalize_rows(x: &Tensor, how: Normalization) -> Tensor {
    let mut out = x.clone().with_requires_grad(false);
    let (n, d) = (x.rows(), x.cols());
    match how {
        Normalization::None => {}
        Normalization::L2 => {
            for i in 0..n {
                let row = out.row_mut(i);
                let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|v| *v /= norm);
                }
            }
        }
        Normalization::Center => {
            if n > 0 {
                let mut mean = vec![0.0; d];
                for i in 0..n {
                    mean.iter_mut().zip(x.row(i)).for_each(|(m, v)| *m += v);
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                for i in 0..n {
                    out.row_mut(i).iter_mut().zip(&mean).for_each(|(v, m)| *v -= m);
                }
            }
        }
    }
    out
}

/// `XᵀX` as a `[d×d]` tensor.
pub fn covariance(x: &Tensor) -> Result<Tensor> {
    let (n, d) = x.matrix_dims("covariance")?;
    Tensor::new([d, d], kernels::matmul_tn(x.data(), x.data(), n, d, d))
}

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    /// Non-increasing.
    pub eigenvalues: Vec<f64>,
    /// `[d×d]`, orthonormal columns.
    pub eigenvectors: Tensor,
    /// `[N×d]` projections `X·V`.
    pub coefficients: Tensor,
    pub est_rank: usize,
    pub epsilon: f64,
    pub mode: ThresholdMode,
}

/// Number of eigenvalues above the threshold.
pub fn estimate_rank(eigenvalues: &[f64], epsilon: f64, mode: ThresholdMode) -> usize {
    match mode {
        ThresholdMode::Absolute => eigenvalues.iter().filter(|&&l| l > epsilon).count(),
        ThresholdMode::Relative => match eigenvalues.first() {
            Some(&top) if top > 0.0 => eigenvalues.iter().filter(|&&l| l / top > epsilon).count(),
            _ => 0,
        },
    }
}

/// Eigendecomposition of `XᵀX` for rows already normalised by the caller.
pub fn pca_analyze(x: &Tensor, epsilon: f64, mode: ThresholdMode) -> Result<PcaResult> {
    let (n, d) = x.matrix_dims("pca_analyze")?;
    if d == 0 || n == 0 {
        return Err(Error::Empty { op: "pca_analyze" });
    }
    let eig = sym_eigen(&covariance(x)?)?;
    let coefficients = matmul(x, &eig.vectors)?;
    Ok(PcaResult {
        est_rank: estimate_rank(&eig.values, epsilon, mode),
        eigenvalues: eig.values,
        eigenvectors: eig.vectors,
        coefficients,
        epsilon,
        mode,
    })
}

impl PcaResult {
    /// `Σ_{i<r} λ_i v_i v_iᵀ`.
    pub fn reconstruct(&self, r: usize) -> Tensor {
        let d = self.eigenvalues.len();
        let mut out = Tensor::zeros([d, d]);
        for (i, &l) in self.eigenvalues.iter().enumerate().take(r) {
            for a in 0..d {
                let va = self.eigenvectors.get(a, i) * l;
                for b in 0..d {
                    out.data_mut()[a * d + b] += va * self.eigenvectors.get(b, i);
                }
            }
        }
        out
    }

    /// Mean of `|coefficient|` per component.
    pub fn mean_abs_coefficients(&self) -> Vec<f64> {
        let (n, d) = (self.coefficients.rows(), self.coefficients.cols());
        (0..d)
            .map(|j| (0..n).map(|i| self.coefficients.get(i, j).abs()).sum::<f64>() / n as f64)
            .collect()
    }
}

/// Spectral norm of `Σ − Σ_r`.
pub fn truncation_error(sigma: &Tensor, pca: &PcaResult, r: usize) -> Result<f64> {
    let approx = pca.reconstruct(r);
    let diff: Vec<f64> = sigma.data().iter().zip(approx.data()).map(|(a, b)| a - b).collect();
    spectral_norm_sym(&Tensor::new(sigma.shape().to_vec(), diff)?)
}

/// First three coefficient columns min-max scaled to `[0, 1]`; a constant
/// column maps to 0.5.
pub fn rgb_map(coefficients: &Tensor) -> Result<Tensor> {
    let (n, d) = coefficients.matrix_dims("rgb_map")?;
    if d < 3 {
        return Err(Error::shape("rgb_map", coefficients.shape(), &[n, 3]));
    }
    let mut out = Tensor::zeros([n, 3]);
    for c in 0..3 {
        let col = (0..n).map(|i| coefficients.get(i, c));
        let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        for i in 0..n {
            out.data_mut()[i * 3 + c] = if hi > lo { (coefficients.get(i, c) - lo) / (hi - lo) } else { 0.5 };
        }
    }
    Ok(out)
}

/// The rank estimates reported for ViG-M features (`d = 768`) on two
/// fine-grained datasets at `ε = 0.25`, echoed in every report header.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RankReference {
    pub d: usize,
    pub epsilon: f64,
    pub cub_rank: usize,
    pub flowers_rank: usize,
}

pub const PAPER_RANKS: RankReference = RankReference {
    d: 768,
    epsilon: 0.25,
    cub_rank: 50,
    flowers_rank: 60,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerProfile {
    pub layer: usize,
    pub rows: usize,
    pub est_rank: usize,
    pub eigenvalues: Vec<f64>,
    pub mean_abs_coefficients: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankReport {
    pub reference: RankReference,
    pub epsilon: f64,
    pub mode: ThresholdMode,
    pub normalization: Normalization,
    pub d: usize,
    pub layers: Vec<LayerProfile>,
}

/// Per-layer PCA of normalised features.
pub fn rank_profile(layers: &[Tensor], epsilon: f64, mode: ThresholdMode, norm: Normalization) -> Result<RankReport> {
    let mut out = Vec::with_capacity(layers.len());
    let mut d = 0;
    for (i, x) in layers.iter().enumerate() {
        let pca = pca_analyze(&normalize_rows(x, norm), epsilon, mode)?;
        d = x.cols();
        out.push(LayerProfile {
            layer: i,
            rows: x.rows(),
            est_rank: pca.est_rank,
            mean_abs_coefficients: pca.mean_abs_coefficients(),
            eigenvalues: pca.eigenvalues,
        });
    }
    Ok(RankReport { reference: PAPER_RANKS, epsilon, mode, normalization: norm, d, layers: out })
}

impl RankReport {
    pub fn ranks(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.est_rank).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }

    /// `layer,component,eigenvalue,mean_abs_coefficient` rows.
    pub fn coefficient_csv(&self) -> String {
        let mut s = String::from("layer,component,eigenvalue,mean_abs_coefficient\n");
        for l in &self.layers {
            for (c, (e, m)) in l.eigenvalues.iter().zip(&l.mean_abs_coefficients).enumerate() {
                let _ = writeln!(s, "{},{},{:e},{:e}", l.layer, c, e, m);
            }
        }
        s
    }

    /// Writes `rank_report.json` and `coefficients.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in [("rank_report.json", self.to_json()), ("coefficients.csv", self.coefficient_csv())] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// `A·B + noise·G` with Gaussian `A[n×k]`, orthonormal rows `B[k×d]` and
/// Gaussian `G`: exactly rank `k` when `noise = 0`.
pub fn low_rank_matrix<R: rand::Rng + ?Sized>(n: usize, d: usize, k: usize, noise: f64, rng: &mut R) -> Result<Tensor> {
    if k > d {
        return Err(Error::config("rank", format!("rank {k} exceeds width {d}")));
    }
    let a = Tensor::randn([n, k], 1.0, rng);
    let mut b = Tensor::randn([k, d], 1.0, rng);
    for i in 0..k {
        for j in 0..i {
            let proj: f64 = b.row(i).iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            let prev = b.row(j).to_vec();
            b.row_mut(i).iter_mut().zip(&prev).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = b.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        b.row_mut(i).iter_mut().for_each(|x| *x /= norm);
    }
    let mut x = matmul(&a, &b)?;
    if noise != 0.0 {
        let g = Tensor::randn([n, d], noise, rng);
        x.data_mut().iter_mut().zip(g.data()).for_each(|(v, e)| *v += e);
    }
    Ok(x)
}
