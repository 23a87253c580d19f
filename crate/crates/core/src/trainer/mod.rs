//! Frozen-backbone tuning: AdamW on prompts and head, cosine schedule,
//! per-epoch metrics and the linear-probe baseline.

mod data;
mod params;

pub use data::{synthetic, Dataset, SplitData, SyntheticSpec};
pub use params::{closed_form_trainable, count_params, format_pct, percent_change, ParamReport, ReferenceRow, PAPER_REFERENCE};

use crate::error::{Error, Result};
use crate::grapher::BackboneParams;
use crate::model::{argmax, head_forward, mean_pool, network_features, mean_pool_tape, network_features_tape, NetworkVars};
use crate::prompts::PromptParams;
use crate::tensor::{matmul, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Taken from the top-level run seed, never from a config section.
    #[serde(skip)]
    pub seed: u64,
    /// Global L2 norm bound on the gradient; off when absent.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.05,
            epochs: 20,
            batch_size: 8,
            seed: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("train.lr", format!("must be a positive number, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", format!("must be ≥ 0, got {}", self.weight_decay)));
        }
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be ≥ 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be ≥ 1"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::config("train.grad_clip", format!("must be positive, got {c}")));
            }
        }
        Ok(())
    }
}

/// Learning rate of epoch `e` (0-based) out of `total`, annealed from `lr`
/// towards zero on a half cosine.
pub fn cosine_lr(lr: f64, e: usize, total: usize) -> f64 {
    0.5 * lr * (1.0 + (std::f64::consts::PI * e as f64 / total as f64).cos())
}

/// AdamW with decoupled weight decay, `β₁ = 0.9`, `β₂ = 0.999`, `ε = 1e-8`.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// Updates `params[i]` with `grads[i]`; the order must stay fixed across calls.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Vec<f64>], lr: f64) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                *w *= 1.0 - lr * self.weight_decay;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// One mini-batch worth of inputs.
pub enum BatchInput<'a> {
    /// Raw images run through the (prompted) network.
    Images(Vec<&'a Tensor>),
    /// Cached `[1×d]` pooled backbone features, for linear probing.
    Pooled(Vec<&'a Tensor>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    pub correct: usize,
}

/// Forward, backward and one AdamW update of the prompts (if any) and head.
/// The backbone is only read.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    batch: &BatchInput<'_>,
    labels: &[usize],
    backbone: &BackboneParams,
    prompts: Option<&mut PromptParams>,
    head: &mut Tensor,
    opt: &mut AdamW,
    lr: f64,
    grad_clip: Option<f64>,
) -> Result<StepStats> {
    if !backbone.frozen {
        return Err(Error::config("backbone.frozen", "training requires a frozen backbone"));
    }
    let mut tape = Tape::new();
    let head_var = tape.leaf(&head.clone().with_requires_grad(true));
    let vars = NetworkVars::register(&mut tape, backbone, prompts.as_deref());
    let mut pooled: Option<Var> = None;
    let count = match batch {
        BatchInput::Images(imgs) => {
            for img in imgs {
                let f = network_features_tape(&mut tape, img, backbone, &vars)?;
                let p = mean_pool_tape(&mut tape, f)?;
                pooled = Some(match pooled {
                    Some(acc) => tape.concat_rows(acc, p)?,
                    None => p,
                });
            }
            imgs.len()
        }
        BatchInput::Pooled(rows) => {
            let stacked = rows
                .iter()
                .skip(1)
                .try_fold(rows.first().copied().cloned().ok_or(Error::Empty { op: "train_step" })?, |acc, r| acc.vstack(r))?;
            pooled = Some(tape.constant(stacked));
            rows.len()
        }
    };
    if count != labels.len() {
        return Err(Error::shape("train_step", &[count], &[labels.len()]));
    }
    let pooled = pooled.ok_or(Error::Empty { op: "train_step" })?;
    let logits = tape.matmul(pooled, head_var)?;
    let correct = (0..count)
        .filter(|&i| argmax(tape.value(logits).row(i)) == labels[i])
        .count();
    let loss_var = tape.cross_entropy(logits, labels)?;
    let loss = tape.value(loss_var).data()[0];
    let step = opt.steps() as usize + 1;
    if !loss.is_finite() {
        let tensor = non_finite_param(prompts.as_deref(), head)
            .or_else(|| tape.first_non_finite().map(|op| format!("output of {op}")))
            .unwrap_or_else(|| "loss".to_string());
        return Err(Error::NonFiniteLoss { step, lr, tensor });
    }
    tape.backward(loss_var)?;

    let mut param_vars: Vec<(String, Var)> = Vec::new();
    if let Some(pv) = &vars.prompts {
        let p = prompts.as_deref().expect("registered with prompts");
        for (b, (bv, bp)) in pv.iter().zip(&p.blocks).enumerate() {
            for (v, (name, _)) in bv.vars().into_iter().zip(bp.named()) {
                param_vars.push((format!("block{b}.{name}"), v));
            }
        }
    }
    param_vars.push(("head".to_string(), head_var));
    let mut grads = Vec::with_capacity(param_vars.len());
    for (name, v) in &param_vars {
        let g = tape
            .grad(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tape.value(*v).numel()]);
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteLoss { step, lr, tensor: format!("grad of {name}") });
        }
        grads.push(g);
    }
    if let Some(c) = grad_clip {
        let norm = grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
        if norm > c {
            let s = c / norm;
            grads.iter_mut().flatten().for_each(|g| *g *= s);
        }
    }

    let mut params: Vec<&mut Tensor> = Vec::new();
    if let Some(p) = prompts {
        for blk in &mut p.blocks {
            params.extend(blk.named_mut().into_iter().map(|(_, t)| t));
        }
    }
    params.push(head);
    opt.step(&mut params, &grads, lr);
    Ok(StepStats { loss, correct })
}

fn non_finite_param(prompts: Option<&PromptParams>, head: &Tensor) -> Option<String> {
    if let Some(p) = prompts {
        for (b, blk) in p.blocks.iter().enumerate() {
            if let Some((name, _)) = blk.named().into_iter().find(|(_, t)| !t.is_finite()) {
                return Some(format!("block{b}.{name}"));
            }
        }
    }
    (!head.is_finite()).then(|| "head".to_string())
}

/// Top-1 accuracy over `data`.
pub fn evaluate(data: &Dataset, backbone: &BackboneParams, prompts: Option<&PromptParams>, head: &Tensor) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty { op: "evaluate" });
    }
    let mut correct = 0;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        if crate::model::predict(img, backbone, prompts, head)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Mean softmax cross-entropy over `data`, evaluated without a tape.
pub fn dataset_loss(data: &Dataset, backbone: &BackboneParams, prompts: Option<&PromptParams>, head: &Tensor) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty { op: "dataset_loss" });
    }
    let mut total = 0.0;
    for (img, &label) in data.images.iter().zip(&data.labels) {
        let logits = head_forward(&network_features(img, backbone, prompts)?, head)?;
        let z = logits.data();
        let mx = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        total += lse - z[label];
    }
    Ok(total / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub best_val_acc: f64,
    /// 1-based epoch of the first best validation accuracy.
    pub best_epoch: usize,
}

/// Zero-initialised `[d×C]` head.
pub fn init_head(d: usize, classes: usize) -> Tensor {
    Tensor::zeros([d, classes]).with_requires_grad(true)
}

/// Tunes prompts (when given) and head on `data.train`, validating after each
/// epoch. Without prompts this is linear probing, run on cached pooled
/// features. `on_epoch` sees each record as it is produced.
pub fn fit(
    backbone: &BackboneParams,
    mut prompts: Option<&mut PromptParams>,
    head: &mut Tensor,
    data: &SplitData,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Empty { op: "fit" });
    }
    let probe = prompts.is_none();
    let cache = |set: &Dataset| -> Result<Vec<Tensor>> {
        set.images
            .iter()
            .map(|img| mean_pool(&crate::grapher::backbone_forward(img, backbone)?))
            .collect()
    };
    let (train_feats, val_feats) = if probe { (cache(&data.train)?, cache(&data.val)?) } else { (Vec::new(), Vec::new()) };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut opt = AdamW::new(cfg.weight_decay);
    let mut metrics = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr, e, cfg.epochs);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let labels: Vec<usize> = chunk.iter().map(|&i| data.train.labels[i]).collect();
            let batch = if probe {
                BatchInput::Pooled(chunk.iter().map(|&i| &train_feats[i]).collect())
            } else {
                BatchInput::Images(chunk.iter().map(|&i| &data.train.images[i]).collect())
            };
            let s = train_step(&batch, &labels, backbone, prompts.as_deref_mut(), head, &mut opt, lr, cfg.grad_clip)?;
            loss_sum += s.loss * chunk.len() as f64;
            correct += s.correct;
        }
        let val_acc = if data.val.is_empty() {
            0.0
        } else if probe {
            let hits = val_feats
                .iter()
                .zip(&data.val.labels)
                .map(|(f, &l)| Ok(usize::from(argmax(matmul(f, head)?.data()) == l)))
                .sum::<Result<usize>>()?;
            hits as f64 / data.val.len() as f64
        } else {
            evaluate(&data.val, backbone, prompts.as_deref(), head)?
        };
        let m = EpochMetrics {
            epoch: e + 1,
            lr,
            train_loss: loss_sum / data.train.len() as f64,
            train_acc: correct as f64 / data.train.len() as f64,
            val_acc,
        };
        on_epoch(&m)?;
        metrics.push(m);
    }
    let (best_epoch, best_val_acc) = metrics
        .iter()
        .fold((0, f64::NEG_INFINITY), |(be, bv), m| if m.val_acc > bv { (m.epoch, m.val_acc) } else { (be, bv) });
    Ok(TrainOutcome { metrics, best_val_acc, best_epoch })
}

/// Appends one JSON object per line.
pub struct MetricsWriter {
    file: std::fs::File,
    path: std::path::PathBuf,
}

impl MetricsWriter {
    /// Creates (or truncates) the file.
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { file, path })
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<()> {
        let line = serde_json::to_string(m).map_err(|e| Error::json(&self.path, e))?;
        writeln!(self.file, "{line}").map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<EpochMetrics>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::json(path, e)))
        .collect()
}

#[cfg(test)]
mod tests;
