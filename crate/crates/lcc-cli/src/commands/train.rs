use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::Parser;
use lcc_core::config::RunConfig;
use lcc_core::data::{load_manifest, load_split, load_word_embeddings, ChannelGraphs, StreamKind};
use lcc_core::model::{LossMode, SignModel};
use lcc_core::train::{fit, Schedule};

use super::{resolve_out_dir, CliError};

#[derive(Parser)]
pub struct Args {
    /// TOML run config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub words: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss head: lcc or ce.
    #[arg(long)]
    pub loss: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Comma-separated streams (joint,bone,joint_motion,bone_motion).
    #[arg(long)]
    pub streams: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    /// Warmup epochs (switches the schedule to warmup + cosine).
    #[arg(long)]
    pub warmup: Option<usize>,
    /// Comma-separated milestone epochs (switches to multistep decay).
    #[arg(long)]
    pub milestones: Option<String>,
    /// Backbone channels, comma-separated.
    #[arg(long)]
    pub channels: Option<String>,
    /// Backbone temporal strides, comma-separated.
    #[arg(long)]
    pub strides: Option<String>,
    #[arg(long)]
    pub drop_channel: Option<f64>,
    #[arg(long)]
    pub drop_temporal: Option<f64>,
    #[arg(long)]
    pub no_augment: bool,
    #[arg(long)]
    pub no_drop_mask: bool,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| p.trim().parse::<T>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| CliError::usage(format!("bad {what} list '{s}': {e}")))
}

fn apply_overrides(config: &mut RunConfig, args: &Args) -> Result<(), CliError> {
    if let Some(d) = &args.dataset {
        config.dataset = Some(d.clone());
    }
    if let Some(w) = &args.words {
        config.words = Some(w.clone());
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(loss) = &args.loss {
        config.model.loss_mode = match loss.as_str() {
            "lcc" => LossMode::Lcc,
            "ce" => LossMode::Ce,
            other => return Err(CliError::usage(format!("unknown loss '{other}' (lcc|ce)"))),
        };
    }
    if let Some(a) = args.alpha {
        config.model.loss.alpha = a;
    }
    if let Some(b) = args.beta {
        config.model.loss.beta = b;
    }
    if let Some(t) = args.tau {
        config.model.loss.tau = t;
    }
    if let Some(streams) = &args.streams {
        config.streams = parse_list::<StreamKind>(streams, "stream")?;
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    if let Some(b) = args.batch_size {
        config.train.batch_size = b;
    }
    if let Some(lr) = args.lr {
        config.train.base_lr = lr;
    }
    if let Some(l) = args.seq_len {
        config.model.sequence_length = l;
    }
    if let Some(w) = args.warmup {
        config.train.schedule = Schedule::WarmupCosine { warmup_epochs: w };
    }
    if let Some(m) = &args.milestones {
        config.train.schedule = Schedule::Multistep {
            milestones: parse_list(m, "milestone")?,
            factor: 0.1,
        };
    }
    if let Some(c) = &args.channels {
        config.model.backbone.channels = parse_list(c, "channel")?;
    }
    if let Some(s) = &args.strides {
        config.model.backbone.strides = parse_list(s, "stride")?;
    }
    if let Some(p) = args.drop_channel {
        config.train.drop_mask.p_channel = p;
    }
    if let Some(p) = args.drop_temporal {
        config.train.drop_mask.p_temporal = p;
    }
    if args.no_augment {
        config.train.augment = None;
    }
    if args.no_drop_mask {
        config.train.drop_mask.enabled = false;
    }
    Ok(())
}

pub fn run(args: Args) -> Result<(), CliError> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_overrides(&mut config, &args)?;
    config.train.seed = config.seed;

    let dataset = config
        .dataset
        .clone()
        .ok_or_else(|| CliError::usage("no dataset given (--dataset or config)"))?;
    let manifest = load_manifest(&dataset)?;
    let train_set = load_split(&dataset, &manifest, "train")?;
    let val_set = load_split(&dataset, &manifest, "val")?;
    let graphs = match &config.graph_config {
        Some(path) => ChannelGraphs::from_config_file(path)?,
        None => ChannelGraphs::default_layout(),
    };
    let words = match (&config.model.loss_mode, &config.words) {
        (LossMode::Lcc, Some(path)) => Some(load_word_embeddings(
            path,
            &manifest.glosses,
            false,
            config.seed,
        )?),
        (LossMode::Lcc, None) => {
            return Err(CliError::usage(
                "embedding-head training needs --words (or words in the config)",
            ))
        }
        (LossMode::Ce, _) => None,
    };

    let out_dir = resolve_out_dir(args.out.clone(), config.out_dir.clone());
    fs::create_dir_all(&out_dir)?;
    config.out_dir = Some(out_dir.clone());
    config.save(&out_dir.join("config.toml"))?;

    for stream in config.streams.clone() {
        let model = SignModel::new(
            config.model.clone(),
            manifest.glosses.clone(),
            stream,
            graphs.clone(),
            config.seed,
        )?;
        println!(
            "training {} stream: {} params, {} train / {} val samples, {} epochs",
            stream.key(),
            model.params.numel(),
            train_set.len(),
            val_set.len(),
            config.train.epochs
        );
        let result = fit(model, &train_set, &val_set, words.as_ref(), &config.train)?;
        for r in &result.log {
            println!(
                "  epoch {:3}  lr {:.6}  loss {:.4}  val_top1 {:.4}  val_top5 {:.4}",
                r.epoch, r.lr, r.loss_total, r.val_top1, r.val_top5
            );
        }
        let ckpt_path = out_dir.join(format!("{}.ckpt.json", stream.key()));
        result.model.save(&ckpt_path)?;
        let log_path = out_dir.join(format!("{}.log.ndjson", stream.key()));
        let mut log = fs::File::create(&log_path)?;
        for r in &result.log {
            writeln!(log, "{}", serde_json::to_string(r).expect("log record serializes"))?;
        }
        println!(
            "  best val_top1 {:.4} at epoch {}; wrote {} and {}",
            result.best_val_top1,
            result.best_epoch,
            ckpt_path.display(),
            log_path.display()
        );
    }
    Ok(())
}
