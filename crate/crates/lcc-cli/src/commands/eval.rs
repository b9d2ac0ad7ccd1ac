use std::fs;
use std::path::PathBuf;

use clap::Parser;
use lcc_core::data::{load_manifest, load_split};
use lcc_core::model::SignModel;
use lcc_core::train::{ensemble_streams, score_samples, topk_metrics};

use super::CliError;

#[derive(Parser)]
pub struct Args {
    /// Checkpoint file(s); one per stream for an ensemble.
    #[arg(long, required = true)]
    pub ckpt: Vec<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Comma-separated k values.
    #[arg(long, default_value = "1,5")]
    pub topk: String,
    /// Ensemble weights, comma-separated (uniform when omitted).
    #[arg(long)]
    pub weights: Option<String>,
    /// Metrics CSV path (defaults next to the first checkpoint).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let k_list: Vec<usize> = args
        .topk
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::usage(format!("bad --topk '{}': {e}", args.topk)))?;
    let weights: Option<Vec<f64>> = match &args.weights {
        None => None,
        Some(w) => Some(
            w.split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| CliError::usage(format!("bad --weights '{w}': {e}")))?,
        ),
    };

    let manifest = load_manifest(&args.dataset)?;
    let samples = load_split(&args.dataset, &manifest, &args.split)?;

    let mut rows: Vec<(String, Vec<f64>)> = Vec::new();
    let mut per_stream_scores: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let v = manifest.vocab_size();

    let mut csv_rows = Vec::new();
    for path in &args.ckpt {
        let model = SignModel::load(path)?;
        if model.glosses != manifest.glosses {
            return Err(CliError::data(format!(
                "vocabulary mismatch: checkpoint {} has {} glosses, manifest has {}",
                path.display(),
                model.glosses.len(),
                manifest.glosses.len()
            )));
        }
        let (scores, lbls) = score_samples(&model, &samples)?;
        let (per_k, _) = topk_metrics(&scores, &lbls, v, &k_list)?;
        csv_rows.push((
            model.stream.key().to_string(),
            per_k
                .iter()
                .map(|m| m.instance)
                .chain(per_k.iter().map(|m| m.class_mean))
                .collect::<Vec<f64>>(),
        ));
        per_stream_scores.push(scores);
        labels = lbls;
    }

    // ensemble row (identical to the single stream when there is only one)
    let n_samples = samples.len();
    let mut ensemble_scores = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let per_sample: Vec<Vec<f64>> = per_stream_scores.iter().map(|s| s[i].clone()).collect();
        ensemble_scores.push(ensemble_streams(&per_sample, weights.as_deref())?);
    }
    let (per_k, _) = topk_metrics(&ensemble_scores, &labels, v, &k_list)?;
    csv_rows.push((
        "ensemble".to_string(),
        per_k
            .iter()
            .map(|m| m.instance)
            .chain(per_k.iter().map(|m| m.class_mean))
            .collect(),
    ));
    rows.append(&mut csv_rows);

    let mut csv = String::from("split,stream");
    for k in &k_list {
        csv.push_str(&format!(",top{k}_instance"));
    }
    for k in &k_list {
        csv.push_str(&format!(",top{k}_class"));
    }
    csv.push('\n');
    for (stream, values) in &rows {
        csv.push_str(&args.split);
        csv.push(',');
        csv.push_str(stream);
        for value in values {
            csv.push_str(&format!(",{value:.6}"));
        }
        csv.push('\n');
    }

    let out = args.out.unwrap_or_else(|| {
        args.ckpt[0]
            .parent()
            .unwrap_or_else(|| std::path::Path::new("."))
            .join(format!("metrics_{}.csv", args.split))
    });
    fs::write(&out, &csv)?;
    print!("{csv}");
    println!("wrote {}", out.display());
    Ok(())
}
