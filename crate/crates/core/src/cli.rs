//! The `vgp` command line: train, eval, analyze, verify, report, gen-data.
//!
//! Exit codes: 0 success, 1 verification failure, 2 configuration or input
//! error, 3 numeric failure.

use crate::analyzer::{normalize_rows, pca_analyze, rank_profile, rgb_map, Normalization, ThresholdMode};
use crate::config::{RunConfig, CLASSES};
use crate::error::{Error, Result};
use crate::grapher::{backbone_trace, BackboneParams};
use crate::prompts::PromptParams;
use crate::tensor::{io, Tensor};
use crate::trainer::{
    count_params, evaluate, fit, format_pct, init_head, percent_change, read_metrics, synthetic, EpochMetrics, MetricsWriter, ParamReport,
    SplitData, PAPER_REFERENCE,
};
use crate::verify::{run_all, Fault, VerifyOptions};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "vgp", version, about = "Vision graph prompting on a toy Vision GNN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tune prompts and head on a frozen backbone (or only a head with --linear-probe).
    Train {
        #[command(flatten)]
        common: Common,
        /// Generate the seeded synthetic task instead of reading the data directory.
        #[arg(long)]
        synthetic: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        linear_probe: bool,
    },
    /// Validation accuracy of the saved checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        synthetic: bool,
        #[arg(long)]
        linear_probe: bool,
    },
    /// Per-layer PCA rank profile of backbone features.
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Analyze a saved `[N×d]` feature tensor instead of running the backbone.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        synthetic: bool,
        #[arg(long, default_value_t = 0.25)]
        epsilon: f64,
        #[arg(long, default_value = "relative")]
        mode: String,
        #[arg(long, default_value = "l2")]
        normalize: String,
        /// Also write every layer's stacked node features as VGPT tensors.
        #[arg(long)]
        dump_features: bool,
        /// Number of validation images whose nodes are stacked per layer.
        #[arg(long, default_value_t = 4)]
        images: usize,
    },
    /// Run the built-in invariant suites.
    Verify {
        /// Randomized trials of the dual-path suite.
        #[arg(long, default_value_t = 50)]
        seeds: usize,
        #[arg(long, hide = true)]
        plant_fault: Option<String>,
    },
    /// Parameter and FLOP comparison table.
    Report {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<report_dir>/metrics.jsonl`.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Defaults to `<report_dir>/param_report.json`.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Write the synthetic train/val split to the data directory.
    GenData {
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFiniteLoss { .. } | Error::NonFiniteOp { .. } | Error::NotSymmetric { .. } => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validated()
}

fn dispatch(cmd: Command) -> Result<u8> {
    match cmd {
        Command::Train { common, synthetic, epochs, linear_probe } => {
            let mut cfg = load_config(&common)?;
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            cmd_train(&cfg.validated()?, synthetic, linear_probe)
        }
        Command::Eval { common, synthetic, linear_probe } => cmd_eval(&load_config(&common)?, synthetic, linear_probe),
        Command::Analyze { common, features, synthetic, epsilon, mode, normalize, dump_features, images } => {
            let cfg = load_config(&common)?;
            let opts = AnalyzeOptions {
                epsilon,
                mode: mode.parse()?,
                normalize: normalize.parse()?,
                dump_features,
                images,
            };
            match features {
                Some(path) => cmd_analyze_features(&cfg, &path, &opts),
                None => cmd_analyze(&cfg, synthetic, &opts),
            }
        }
        Command::Verify { seeds, plant_fault } => {
            let fault = plant_fault.map(|f| f.parse::<Fault>()).transpose()?;
            Ok(cmd_verify(&VerifyOptions { seeds, fault }))
        }
        Command::Report { common, metrics, params } => {
            let cfg = load_config(&common)?;
            let dir = &cfg.paths.report_dir;
            cmd_report(
                &metrics.unwrap_or_else(|| dir.join("metrics.jsonl")),
                &params.unwrap_or_else(|| dir.join("param_report.json")),
                dir,
            )
        }
        Command::GenData { common } => {
            let cfg = load_config(&common)?;
            let data = synthetic(&cfg.synthetic_spec(), cfg.seed);
            data.save(&cfg.paths.data_dir)?;
            println!(
                "wrote {} train and {} val images to {}",
                data.train.len(),
                data.val.len(),
                cfg.paths.data_dir.display()
            );
            Ok(EXIT_OK)
        }
    }
}

fn load_data(cfg: &RunConfig, synthetic_data: bool) -> Result<SplitData> {
    if synthetic_data {
        return Ok(synthetic(&cfg.synthetic_spec(), cfg.seed));
    }
    let data = SplitData::load(&cfg.paths.data_dir, CLASSES)?;
    let want = [cfg.model.image_h, cfg.model.image_w, cfg.model.channels];
    if let Some(img) = data.train.images.first() {
        if img.shape() != want {
            return Err(Error::Checkpoint(format!("data images are {:?}, config expects {want:?}", img.shape())));
        }
    }
    Ok(data)
}

fn backbone_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.checkpoint_dir.join("backbone")
}

/// Loads the saved backbone if present (it must match the model section),
/// otherwise initialises one from the seed and saves it.
pub fn load_or_init_backbone(cfg: &RunConfig) -> Result<BackboneParams> {
    let dir = backbone_dir(cfg);
    if dir.join("manifest.json").exists() {
        let b = BackboneParams::load(&dir)?;
        check_backbone(cfg, &b)?;
        return Ok(b);
    }
    let b = BackboneParams::init(cfg.model.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    b.save(&dir)?;
    Ok(b)
}

fn check_backbone(cfg: &RunConfig, b: &BackboneParams) -> Result<()> {
    if b.config != cfg.model {
        return Err(Error::Checkpoint(format!(
            "backbone checkpoint was built for {:?}, config asks for {:?}",
            b.config, cfg.model
        )));
    }
    Ok(())
}

fn run_names(linear_probe: bool) -> (&'static str, &'static str) {
    if linear_probe {
        ("probe_metrics.jsonl", "probe_head.vgpt")
    } else {
        ("metrics.jsonl", "head.vgpt")
    }
}

fn cmd_train(cfg: &RunConfig, synthetic_data: bool, linear_probe: bool) -> Result<u8> {
    let data = load_data(cfg, synthetic_data)?;
    let backbone = load_or_init_backbone(cfg)?;
    let mut prompts = if linear_probe {
        None
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        Some(PromptParams::init(cfg.prompt.clone(), cfg.model.d, cfg.model.blocks, &mut rng)?)
    };
    let mut head = init_head(cfg.model.d, CLASSES);
    let (metrics_name, head_name) = run_names(linear_probe);
    let mut writer = MetricsWriter::create(cfg.paths.report_dir.join(metrics_name))?;
    let outcome = fit(&backbone, prompts.as_mut(), &mut head, &data, &cfg.train, |m| {
        println!(
            "epoch {:>3}  lr {:.2e}  loss {:.4}  train {:.3}  val {:.3}",
            m.epoch, m.lr, m.train_loss, m.train_acc, m.val_acc
        );
        writer.append(m)
    })?;

    let ckpt = &cfg.paths.checkpoint_dir;
    if let Some(p) = &prompts {
        p.save(ckpt.join("prompts"))?;
    }
    write_tensor(&ckpt.join(head_name), &head)?;
    let report = count_params(&backbone, prompts.as_ref(), &head);
    write_json(&cfg.paths.report_dir.join(if linear_probe { "probe_param_report.json" } else { "param_report.json" }), &report)?;
    println!(
        "best val accuracy {:.3} at epoch {}; trainable {} of {} parameters",
        outcome.best_val_acc, outcome.best_epoch, report.trainable_params, report.total_params
    );
    Ok(EXIT_OK)
}

fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    io::write(path, t)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn cmd_eval(cfg: &RunConfig, synthetic_data: bool, linear_probe: bool) -> Result<u8> {
    let data = load_data(cfg, synthetic_data)?;
    let ckpt = &cfg.paths.checkpoint_dir;
    let backbone = BackboneParams::load(backbone_dir(cfg))?;
    check_backbone(cfg, &backbone)?;
    let prompts = if linear_probe { None } else { Some(PromptParams::load(ckpt.join("prompts"), &backbone)?) };
    let head = io::read(ckpt.join(run_names(linear_probe).1))?;
    if head.shape() != [cfg.model.d, CLASSES] {
        return Err(Error::Checkpoint(format!("head is {:?}, expected {:?}", head.shape(), [cfg.model.d, CLASSES])));
    }
    let acc = evaluate(&data.val, &backbone, prompts.as_ref(), &head)?;
    println!("{}", serde_json::json!({ "val_acc": acc, "n": data.val.len() }));
    Ok(EXIT_OK)
}

pub struct AnalyzeOptions {
    pub epsilon: f64,
    pub mode: ThresholdMode,
    pub normalize: Normalization,
    pub dump_features: bool,
    pub images: usize,
}

fn analyze_layers(cfg: &RunConfig, layers: &[Tensor], opts: &AnalyzeOptions) -> Result<u8> {
    let out = &cfg.paths.report_dir;
    let report = rank_profile(layers, opts.epsilon, opts.mode, opts.normalize)?;
    report.write(out)?;
    for (i, x) in layers.iter().enumerate() {
        let pca = pca_analyze(&normalize_rows(x, opts.normalize), opts.epsilon, opts.mode)?;
        if x.cols() >= 3 {
            write_tensor(&out.join(format!("rgb/layer{i}.vgpt")), &rgb_map(&pca.coefficients)?)?;
        }
        if opts.dump_features {
            write_tensor(&out.join(format!("features/layer{i}.vgpt")), x)?;
        }
    }
    println!(
        "reference: rank ≈ {} (CUB) and ≈ {} (Flowers) of d = {} at ε = {}",
        report.reference.cub_rank, report.reference.flowers_rank, report.reference.d, report.reference.epsilon
    );
    println!("ε = {} ({:?}, {:?} rows), d = {}", report.epsilon, report.mode, report.normalization, report.d);
    for l in &report.layers {
        println!("layer {:>2}: est_rank {:>3} of {} ({} rows)", l.layer, l.est_rank, report.d, l.rows);
    }
    Ok(EXIT_OK)
}

fn cmd_analyze_features(cfg: &RunConfig, path: &Path, opts: &AnalyzeOptions) -> Result<u8> {
    let x = io::read(path)?;
    if x.shape().len() != 2 {
        return Err(Error::Format { path: path.to_path_buf(), message: format!("expected [N×d], got {:?}", x.shape()) });
    }
    analyze_layers(cfg, &[x], opts)
}

fn cmd_analyze(cfg: &RunConfig, synthetic_data: bool, opts: &AnalyzeOptions) -> Result<u8> {
    let data = load_data(cfg, synthetic_data)?;
    let backbone = load_or_init_backbone(cfg)?;
    let set = if data.val.is_empty() { &data.train } else { &data.val };
    let take = opts.images.clamp(1, set.len().max(1));
    let mut stacks: Vec<Tensor> = Vec::new();
    for img in set.images.iter().take(take) {
        for (l, t) in backbone_trace(img, &backbone)?.layers.into_iter().enumerate() {
            if l == stacks.len() {
                stacks.push(t);
            } else {
                stacks[l] = stacks[l].vstack(&t)?;
            }
        }
    }
    analyze_layers(cfg, &stacks, opts)
}

fn cmd_verify(opts: &VerifyOptions) -> u8 {
    let results = run_all(opts);
    for r in &results {
        println!("{r}");
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name).collect();
    if failed.is_empty() {
        println!("{} suites passed", results.len());
        EXIT_OK
    } else {
        println!("failed suites: {}", failed.join(", "));
        EXIT_VERIFY
    }
}

/// Aligned text table and CSV comparing full fine-tuning with prompt tuning,
/// with the cited paper-scale row first.
pub fn render_report(report: &ParamReport, metrics: &[EpochMetrics]) -> (String, String) {
    let r = PAPER_REFERENCE;
    let rows: Vec<[String; 4]> = vec![
        [
            "paper ViG-M params (cited)".into(),
            format!("{:.2}M", r.full_ft_params_m),
            format!("{:.2}M", r.prompt_params_m),
            format_pct(percent_change(r.full_ft_params_m, r.prompt_params_m)),
        ],
        [
            "paper ViG-M FLOPs (cited)".into(),
            format!("{:.2}G", r.full_ft_flops_g),
            format!("{:.2}G", r.prompt_flops_g),
            format_pct(percent_change(r.full_ft_flops_g, r.prompt_flops_g)),
        ],
        [
            "this run params".into(),
            report.full_finetune_params.to_string(),
            report.trainable_params.to_string(),
            format_pct(percent_change(report.full_finetune_params as f64, report.trainable_params as f64)),
        ],
        [
            "this run FLOPs".into(),
            report.baseline_flops_forward.to_string(),
            report.approx_flops_forward.to_string(),
            format_pct(report.flops_overhead_pct),
        ],
    ];
    let header = ["", "full fine-tune", "prompt tuning", "change"];
    let widths: Vec<usize> = (0..4)
        .map(|c| rows.iter().map(|row| row[c].chars().count()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for row in std::iter::once(header.map(String::from)).chain(rows.iter().cloned()) {
        let line: Vec<String> = row.iter().zip(&widths).map(|(cell, w)| format!("{cell:<w$}")).collect();
        let _ = writeln!(text, "{}", line.join("  ").trim_end());
    }
    if let Some(last) = metrics.last() {
        let best = metrics.iter().fold(&metrics[0], |b, m| if m.val_acc > b.val_acc { m } else { b });
        let _ = writeln!(
            text,
            "\n{} epochs; final train accuracy {:.3}; best val accuracy {:.3} (epoch {})",
            metrics.len(),
            last.train_acc,
            best.val_acc,
            best.epoch
        );
    }
    let mut csv = String::from("row,full_finetune,prompt_tuning,change\n");
    for row in &rows {
        let _ = writeln!(csv, "{}", row.join(","));
    }
    (text, csv)
}

fn cmd_report(metrics: &Path, params: &Path, out: &Path) -> Result<u8> {
    let m = read_metrics(metrics)?;
    let text = std::fs::read_to_string(params).map_err(|e| Error::io(params, e))?;
    let report: ParamReport = serde_json::from_str(&text).map_err(|e| Error::json(params, e))?;
    let (table, csv) = render_report(&report, &m);
    print!("{table}");
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for (name, body) in [("report.txt", &table), ("report.csv", &csv)] {
        let p = out.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(EXIT_OK)
}
