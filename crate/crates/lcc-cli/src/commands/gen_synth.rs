use std::fs;
use std::path::PathBuf;

use clap::Parser;
use lcc_core::data::{generate_synthetic, save_dataset, save_windows, save_word_embeddings, SyntheticSpec};

use super::CliError;

#[derive(Parser)]
pub struct Args {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of target classes (V).
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    /// Training samples per class.
    #[arg(long, default_value_t = 40)]
    pub train: usize,
    /// Validation samples per class.
    #[arg(long, default_value_t = 10)]
    pub val: usize,
    /// Test samples per class.
    #[arg(long, default_value_t = 10)]
    pub test: usize,
    /// Frames per clip (T).
    #[arg(long, default_value_t = 64)]
    pub frames: usize,
    /// Minimum embedded-pattern length.
    #[arg(long, default_value_t = 20)]
    pub window_min: usize,
    /// Maximum embedded-pattern length.
    #[arg(long, default_value_t = 40)]
    pub window_max: usize,
    /// Background noise scale.
    #[arg(long, default_value_t = 0.25)]
    pub noise: f64,
    /// Partition the classes into this many contiguous concept groups.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Word-vector dimensionality.
    #[arg(long, default_value_t = 48)]
    pub word_dim: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Overwrite an existing non-empty output directory.
    #[arg(long)]
    pub force: bool,
}

fn contiguous_groups(classes: usize, groups: usize) -> Result<Vec<Vec<usize>>, CliError> {
    if groups == 0 || groups > classes || classes % groups != 0 {
        return Err(CliError::usage(format!(
            "--groups {groups} must evenly divide --classes {classes}"
        )));
    }
    let per = classes / groups;
    Ok((0..groups)
        .map(|g| (g * per..(g + 1) * per).collect())
        .collect())
}

pub fn run(args: Args) -> Result<(), CliError> {
    if args.out.exists()
        && fs::read_dir(&args.out)
            .map(|mut d| d.next().is_some())
            .unwrap_or(false)
        && !args.force
    {
        return Err(CliError::usage(format!(
            "output directory {} is not empty (pass --force to overwrite)",
            args.out.display()
        )));
    }
    let spec = SyntheticSpec {
        classes: args.classes,
        t_len: args.frames,
        signal_window: (args.window_min, args.window_max),
        noise_scale: args.noise,
        concept_groups: args
            .groups
            .map(|g| contiguous_groups(args.classes, g))
            .transpose()?,
        train_per_class: args.train,
        val_per_class: args.val,
        test_per_class: args.test,
        word_dim: args.word_dim,
        seed: args.seed,
    };
    let data = generate_synthetic(&spec)?;
    fs::create_dir_all(&args.out)?;
    save_dataset(
        &args.out,
        &data.glosses,
        &[
            ("train", &data.train),
            ("val", &data.val),
            ("test", &data.test),
        ],
    )?;
    save_word_embeddings(&args.out.join("words.vec"), &data.words)?;
    save_windows(&args.out.join("windows.json"), &data.windows)?;
    println!(
        "wrote {}: V={} T={} splits train/val/test = {}/{}/{} samples",
        args.out.display(),
        args.classes,
        args.frames,
        data.train.len(),
        data.val.len(),
        data.test.len()
    );
    Ok(())
}
