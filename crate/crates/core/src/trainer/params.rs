//! Parameter and FLOP accounting.

use crate::grapher::{BackboneParams, ModelConfig};
use crate::prompts::{PromptConfig, PromptParams};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub total_params: usize,
    pub trainable_params: usize,
    pub frozen_params: usize,
    /// Trainable count if backbone and head were all tuned.
    pub full_finetune_params: usize,
    pub reduction_pct: f64,
    /// `2 × multiply-adds` of one prompted forward pass.
    pub approx_flops_forward: u64,
    /// Same for the unprompted backbone and head.
    pub baseline_flops_forward: u64,
    pub flops_overhead_pct: f64,
}

/// The paper-scale comparison (ViG-M, averaged over ten datasets), echoed as
/// cited constants next to the local numbers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReferenceRow {
    pub full_ft_params_m: f64,
    pub prompt_params_m: f64,
    pub full_ft_flops_g: f64,
    pub prompt_flops_g: f64,
}

pub const PAPER_REFERENCE: ReferenceRow = ReferenceRow {
    full_ft_params_m: 48.68,
    prompt_params_m: 2.61,
    full_ft_flops_g: 8.94,
    prompt_flops_g: 9.22,
};

/// `100 · (to / from − 1)`.
pub fn percent_change(from: f64, to: f64) -> f64 {
    100.0 * (to / from - 1.0)
}

/// One decimal with an explicit sign on increases: `-94.6%`, `0.0%`, `+3.1%`.
pub fn format_pct(p: f64) -> String {
    let s = format!("{p:.1}");
    match s.as_str() {
        "0.0" | "-0.0" => "0.0%".to_string(),
        _ if p > 0.0 => format!("+{s}%"),
        _ => format!("{s}%"),
    }
}

pub fn count_params(backbone: &BackboneParams, prompts: Option<&PromptParams>, head: &Tensor) -> ParamReport {
    let frozen = backbone.num_params();
    let prompt_count = prompts.map_or(0, PromptParams::num_params);
    let trainable = prompt_count + head.numel();
    let full = frozen + head.numel();
    let classes = head.shape().get(1).copied().unwrap_or(0);
    let base = backbone_macs(&backbone.config) + (backbone.config.d * classes) as u64;
    let extra = prompts.map_or(0, |p| prompt_macs(&backbone.config, &p.config));
    let (baseline, flops) = (2 * base, 2 * (base + extra));
    ParamReport {
        total_params: trainable + frozen,
        trainable_params: trainable,
        frozen_params: frozen,
        full_finetune_params: full,
        reduction_pct: 100.0 * (1.0 - trainable as f64 / full as f64),
        approx_flops_forward: flops,
        baseline_flops_forward: baseline,
        flops_overhead_pct: percent_change(baseline as f64, flops as f64),
    }
}

/// `B·(M·r + 3·r·d + d·h + h·r) + d·C`.
pub fn closed_form_trainable(blocks: usize, d: usize, r: usize, r_hidden: usize, m: usize, classes: usize) -> usize {
    blocks * (m * r + 3 * r * d + d * r_hidden + r_hidden * r) + d * classes
}

fn backbone_macs(cfg: &ModelConfig) -> u64 {
    let (n, d, f) = (cfg.num_nodes() as u64, cfg.d as u64, cfg.d_ff as u64);
    let embed = n * cfg.patch().patch_dim() as u64 * d;
    let block = n * (2 * d * d + d * d + 2 * d * f);
    embed + cfg.blocks as u64 * block
}

fn prompt_macs(cfg: &ModelConfig, p: &PromptConfig) -> u64 {
    let (n, d) = (cfg.num_nodes() as u64, cfg.d as u64);
    let (m, r, h) = (p.m as u64, p.r as u64, p.hidden(cfg.d) as u64);
    let virt = m * r * d;
    let mlp = (n + m) * (d * h + h * r);
    let node = n * r * d;
    let edge = (n + m) * r * d;
    cfg.blocks as u64 * (virt + mlp + node + edge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn percent_formatting() {
        let p = percent_change(PAPER_REFERENCE.full_ft_params_m, PAPER_REFERENCE.prompt_params_m);
        assert_eq!(format_pct(p), "-94.6%");
        let f = percent_change(PAPER_REFERENCE.full_ft_flops_g, PAPER_REFERENCE.prompt_flops_g);
        assert_eq!(format_pct(f), "+3.1%");
        assert_eq!(format_pct(percent_change(7.0, 7.0)), "0.0%");
        assert_eq!(format_pct(-0.01), "0.0%");
    }

    #[test]
    fn toy_count_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ModelConfig { d: 64, blocks: 4, ..ModelConfig::default() };
        let bb = BackboneParams::init(cfg, &mut rng).unwrap();
        let pc = PromptConfig { m: 4, r: 8, ..PromptConfig::default() };
        let p = PromptParams::init(pc.clone(), 64, 4, &mut rng).unwrap();
        let head = Tensor::zeros([64, 10]);
        let rep = count_params(&bb, Some(&p), &head);
        let enumerated: usize = p.blocks.iter().flat_map(|b| b.named().map(|(_, t)| t.numel())).sum::<usize>() + head.numel();
        assert_eq!(rep.trainable_params, enumerated);
        assert_eq!(rep.trainable_params, closed_form_trainable(4, 64, 8, pc.hidden(64), 4, 10));
        assert_eq!(rep.total_params, rep.trainable_params + rep.frozen_params);
        assert!(rep.flops_overhead_pct > 0.0);
    }

    #[test]
    fn head_only_when_unprompted() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bb = BackboneParams::init(ModelConfig::default(), &mut rng).unwrap();
        let rep = count_params(&bb, None, &Tensor::zeros([64, 10]));
        assert_eq!(rep.trainable_params, 640);
        assert_eq!(rep.flops_overhead_pct, 0.0);
    }
}
