//! Trainable parameters and forward FLOPs of prompt tuning against full
//! fine-tuning, next to the cited paper-scale row.
//!
//! ```text
//! cargo run --example param_report
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgp::cli::render_report;
use vgp::grapher::{BackboneParams, ModelConfig};
use vgp::prompts::{PromptConfig, PromptParams};
use vgp::trainer::{closed_form_trainable, count_params, init_head};

fn main() -> vgp::Result<()> {
    let model = ModelConfig::default();
    let pc = PromptConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let backbone = BackboneParams::init(model.clone(), &mut rng)?;
    let prompts = PromptParams::init(pc.clone(), model.d, model.blocks, &mut rng)?;
    let head = init_head(model.d, 2);
    let report = count_params(&backbone, Some(&prompts), &head);
    let closed = closed_form_trainable(model.blocks, model.d, pc.r, pc.hidden(model.d), pc.m, 2);
    println!("trainable {} (closed form {closed}), frozen {}", report.trainable_params, report.frozen_params);
    let (table, csv) = render_report(&report, &[]);
    print!("{table}\n{csv}");
    Ok(())
}
