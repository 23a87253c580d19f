//! Prompt tuning versus linear probing on the synthetic stripe task, both on
//! the same frozen backbone, data, seed and epoch budget.
//!
//! ```text
//! cargo run --release --example prompt_tuning -- [seed] [epochs]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;
use vgp::grapher::{BackboneParams, ModelConfig};
use vgp::prompts::{PromptConfig, PromptParams};
use vgp::trainer::{count_params, fit, init_head, synthetic, SyntheticSpec, TrainConfig};

fn main() -> vgp::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let epochs: usize = args.next().map_or(20, |s| s.parse().expect("epochs"));

    let model = ModelConfig::default();
    let data = synthetic(&SyntheticSpec::default(), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let backbone = BackboneParams::init(model.clone(), &mut rng)?;
    let cfg = TrainConfig { epochs, seed, ..TrainConfig::default() };

    let t = Instant::now();
    let mut head = init_head(model.d, 2);
    let probe = fit(&backbone, None, &mut head, &data, &cfg, |m| {
        println!("probe  epoch {:>2}  loss {:.4}  train {:.3}  val {:.3}", m.epoch, m.train_loss, m.train_acc, m.val_acc);
        Ok(())
    })?;
    println!("probe done in {:.1?}", t.elapsed());

    let t = Instant::now();
    // prompts draw from `seed + 1`, as `vgp train` does
    let mut prng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut prompts = PromptParams::init(PromptConfig::default(), model.d, model.blocks, &mut prng)?;
    let mut head = init_head(model.d, 2);
    let tuned = fit(&backbone, Some(&mut prompts), &mut head, &data, &cfg, |m| {
        println!("prompt epoch {:>2}  loss {:.4}  train {:.3}  val {:.3}", m.epoch, m.train_loss, m.train_acc, m.val_acc);
        Ok(())
    })?;
    println!("prompt done in {:.1?}", t.elapsed());

    let report = count_params(&backbone, Some(&prompts), &head);
    println!(
        "best val: probe {:.3} (epoch {}), prompts {:.3} (epoch {}); trainable {} of {}",
        probe.best_val_acc, probe.best_epoch, tuned.best_val_acc, tuned.best_epoch, report.trainable_params, report.total_params
    );
    Ok(())
}
