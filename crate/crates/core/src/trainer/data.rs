//! Labeled image sets and the seeded synthetic stripe task.

use crate::error::{Error, Result};
use crate::tensor::{io, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Each image is `[H×W×C]`.
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Writes `<name>_images.vgpt` (`[n×H×W×C]`) and `<name>_labels.vgpt` (`[n]`).
    pub fn save(&self, dir: impl AsRef<Path>, name: &str) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut shape = vec![self.len()];
        shape.extend_from_slice(self.images.first().map_or(&[0, 0, 0][..], |t| t.shape()));
        let data: Vec<f64> = self.images.iter().flat_map(|t| t.data().iter().copied()).collect();
        io::write(dir.join(format!("{name}_images.vgpt")), &Tensor::new(shape, data)?)?;
        let labels = self.labels.iter().map(|&l| l as f64).collect::<Vec<_>>();
        io::write(dir.join(format!("{name}_labels.vgpt")), &Tensor::new([self.len()], labels)?)
    }

    pub fn load(dir: impl AsRef<Path>, name: &str, classes: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let ipath = dir.join(format!("{name}_images.vgpt"));
        let lpath = dir.join(format!("{name}_labels.vgpt"));
        let images = io::read(&ipath)?;
        let labels = io::read(&lpath)?;
        let bad = |message: String| Error::Format { path: ipath.clone(), message };
        if images.shape().len() != 4 || labels.shape() != [images.shape()[0]] {
            return Err(bad(format!("image stack {:?} does not match labels {:?}", images.shape(), labels.shape())));
        }
        let n = images.shape()[0];
        let per: Vec<usize> = images.shape()[1..].to_vec();
        let size: usize = per.iter().product();
        let imgs = (0..n)
            .map(|i| Tensor::new(per.clone(), images.data()[i * size..(i + 1) * size].to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let labels = labels
            .data()
            .iter()
            .map(|&l| {
                let c = l as usize;
                if l.fract() != 0.0 || l < 0.0 || c >= classes {
                    Err(bad(format!("label {l} outside 0..{classes}")))
                } else {
                    Ok(c)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { images: imgs, labels, classes })
    }
}

/// Parameters of the synthetic two-class task. Class 0 draws stripes that
/// vary along the rows, class 1 along the columns; frequency, phase and
/// per-channel gain are random per image and Gaussian noise is added.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub image_h: usize,
    pub image_w: usize,
    pub channels: usize,
    pub n_train: usize,
    pub n_val: usize,
    /// Stripe frequency range in cycles per image, inclusive.
    pub min_cycles: f64,
    pub max_cycles: f64,
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            image_h: 32,
            image_w: 32,
            channels: 3,
            n_train: 64,
            n_val: 64,
            min_cycles: 1.0,
            max_cycles: 6.0,
            noise: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub train: Dataset,
    pub val: Dataset,
}

impl SplitData {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        self.train.save(&dir, "train")?;
        self.val.save(&dir, "val")
    }

    pub fn load(dir: impl AsRef<Path>, classes: usize) -> Result<Self> {
        Ok(Self {
            train: Dataset::load(&dir, "train", classes)?,
            val: Dataset::load(&dir, "val", classes)?,
        })
    }
}

/// Balanced classes, alternating labels, fully determined by `seed`.
pub fn synthetic(spec: &SyntheticSpec, seed: u64) -> SplitData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = synthetic_set(spec, spec.n_train, &mut rng);
    let val = synthetic_set(spec, spec.n_val, &mut rng);
    SplitData { train, val }
}

fn synthetic_set(spec: &SyntheticSpec, n: usize, rng: &mut ChaCha8Rng) -> Dataset {
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("finite std");
    let (h, w, c) = (spec.image_h, spec.image_w, spec.channels);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let cycles = rng.random_range(spec.min_cycles..=spec.max_cycles);
        let phase = rng.random_range(0.0..2.0 * PI);
        let gains: Vec<f64> = (0..c).map(|_| rng.random_range(0.5..1.5)).collect();
        let mut data = Vec::with_capacity(h * w * c);
        for y in 0..h {
            for x in 0..w {
                let t = if label == 0 { y as f64 / h as f64 } else { x as f64 / w as f64 };
                let s = (2.0 * PI * cycles * t + phase).sin();
                for g in &gains {
                    data.push(g * s + noise.sample(rng));
                }
            }
        }
        images.push(Tensor::new([h, w, c], data).expect("sized"));
        labels.push(label);
    }
    Dataset { images, labels, classes: 2 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_seeded_and_balanced() {
        let spec = SyntheticSpec { n_train: 6, n_val: 4, ..SyntheticSpec::default() };
        let a = synthetic(&spec, 1);
        assert_eq!(a, synthetic(&spec, 1));
        assert_ne!(a, synthetic(&spec, 2));
        assert_eq!(a.train.labels, vec![0, 1, 0, 1, 0, 1]);
        assert_eq!(a.val.images[0].shape(), &[32, 32, 3]);
    }

    #[test]
    fn noiseless_class_zero_is_constant_along_columns() {
        let spec = SyntheticSpec { n_train: 2, n_val: 0, noise: 0.0, ..SyntheticSpec::default() };
        let d = synthetic(&spec, 3);
        let img = &d.train.images[0];
        let at = |y: usize, x: usize| img.data()[(y * 32 + x) * 3];
        assert_eq!(at(5, 0), at(5, 31));
        let img = &d.train.images[1];
        let at = |y: usize, x: usize| img.data()[(y * 32 + x) * 3];
        assert_eq!(at(0, 7), at(31, 7));
    }

    #[test]
    fn round_trip_through_files() {
        let spec = SyntheticSpec { image_h: 8, image_w: 8, n_train: 3, n_val: 2, ..SyntheticSpec::default() };
        let d = synthetic(&spec, 9);
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        let back = SplitData::load(dir.path(), 2).unwrap();
        assert_eq!(back.train.labels, d.train.labels);
        // images are stored as f32
        for (a, b) in back.train.images.iter().zip(&d.train.images) {
            assert!(a.max_abs_diff(b) < 1e-6);
        }
        assert!(SplitData::load(dir.path(), 1).is_err());
    }
}
