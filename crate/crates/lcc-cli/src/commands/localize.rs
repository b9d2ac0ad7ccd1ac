use std::fs;
use std::path::PathBuf;

use clap::Parser;
use lcc_core::data::{load_manifest, load_split, load_windows};
use lcc_core::head::{localisation_csv, localise, temporal_iou};
use lcc_core::model::{LossMode, SignModel};
use lcc_core::tensor::Graph;

use super::CliError;
use crate::ppm;

#[derive(Parser)]
pub struct Args {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Comma-separated sample ids (defaults to the whole split).
    #[arg(long)]
    pub samples: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: Args) -> Result<(), CliError> {
    let model = SignModel::load(&args.ckpt)?;
    if model.config.loss_mode != LossMode::Lcc {
        return Err(CliError::usage(
            "localisation needs an embedding-head checkpoint (the baseline head has no \
             per-timestep distribution)",
        ));
    }
    let manifest = load_manifest(&args.dataset)?;
    if model.glosses != manifest.glosses {
        return Err(CliError::data(format!(
            "vocabulary mismatch: checkpoint has {} glosses, manifest has {}",
            model.glosses.len(),
            manifest.glosses.len()
        )));
    }
    let mut samples = load_split(&args.dataset, &manifest, &args.split)?;
    if let Some(ids) = &args.samples {
        let wanted: Vec<&str> = ids.split(',').map(str::trim).collect();
        for id in &wanted {
            if !samples.iter().any(|s| s.sample_id == *id) {
                return Err(CliError::data(format!(
                    "unknown sample id '{id}' in split '{}'",
                    args.split
                )));
            }
        }
        samples.retain(|s| wanted.contains(&s.sample_id.as_str()));
    }
    let windows = {
        let path = args.dataset.join("windows.json");
        if path.exists() {
            Some(load_windows(&path)?)
        } else {
            None
        }
    };

    fs::create_dir_all(&args.out)?;
    let v = model.glosses.len();
    let sigma_t = model.config.backbone.temporal_reduction();
    let mut summary = String::from("sample_id,label,iou,segments\n");
    let mut ious = Vec::new();

    for sample in &samples {
        let prepared = model.prepare(sample, None);
        let mut g = Graph::new(0);
        let out = model.forward(&mut g, &prepared, None)?;
        let q = &out.heads.as_ref().expect("embedding-head model").global.q;
        let target = sample.label;
        let loc = localise(q, v, target)?;

        fs::write(
            args.out.join(format!("{}.csv", sample.sample_id)),
            localisation_csv(q, v, target),
        )?;

        // heatmap: one row per class plus the background row
        let t_len = q.shape()[0];
        let mut grid = Vec::with_capacity((v + 1) * t_len);
        for class in 0..v {
            for t in 0..t_len {
                grid.push(loc.per_class[t][class]);
            }
        }
        for t in 0..t_len {
            grid.push(loc.background[t]);
        }
        ppm::write_heatmap(
            &args.out.join(format!("{}.ppm", sample.sample_id)),
            v + 1,
            t_len,
            &grid,
            8,
        )?;

        let segments_text = loc
            .segments
            .iter()
            .map(|(a, b)| format!("{a}-{b}"))
            .collect::<Vec<_>>()
            .join(";");
        let iou_text = match windows
            .as_ref()
            .and_then(|w| w.get(&sample.sample_id))
        {
            Some(&window) => {
                // ground truth lives on the raw frame axis; rescale to the
                // model's resampled timeline before comparing
                let t_raw = sample.t_len();
                let l = model.config.sequence_length;
                let scaled = (window.0 * l / t_raw, (window.1 * l).div_ceil(t_raw));
                let iou = temporal_iou(&loc.segments, scaled, sigma_t);
                ious.push(iou);
                format!("{iou:.4}")
            }
            None => String::new(),
        };
        summary.push_str(&format!(
            "{},{},{},{}\n",
            sample.sample_id,
            target.map(|t| t.to_string()).unwrap_or_default(),
            iou_text,
            segments_text
        ));
    }
    fs::write(args.out.join("localisation_summary.csv"), &summary)?;

    println!(
        "wrote per-sample localisation for {} samples to {}",
        samples.len(),
        args.out.display()
    );
    if !ious.is_empty() {
        let mean: f64 = ious.iter().sum::<f64>() / ious.len() as f64;
        let frac = ious.iter().filter(|&&x| x >= 0.3).count() as f64 / ious.len() as f64;
        println!("mean temporal IoU {mean:.4}; fraction with IoU >= 0.3: {frac:.4}");
    }
    Ok(())
}
