use std::fs;
use std::path::PathBuf;

use clap::Parser;
use lcc_core::data::load_word_embeddings;
use lcc_core::head::{
    concept_similarity_matrix, embedding_class_vectors, similarity_matrix_csv,
};
use lcc_core::model::{LossMode, SignModel};
use lcc_core::tensor::{Graph, Tensor};

use super::CliError;
use crate::ppm;

#[derive(Parser)]
pub struct Args {
    /// Checkpoint(s); pass two to contrast their embedding similarities.
    #[arg(long, required = true)]
    pub ckpt: Vec<PathBuf>,
    /// Word-vector file for the word similarity matrix.
    #[arg(long)]
    pub words: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn embedding_similarity(model: &SignModel) -> Result<Tensor, CliError> {
    let table = model
        .params
        .get("head.global.E")
        .ok_or_else(|| CliError::usage("checkpoint has no global embedding head"))?;
    let mut g = Graph::new(0);
    let bound = g.constant(table);
    let dims = model.embedding_dims();
    let vectors = embedding_class_vectors(&mut g, &bound, &dims)?;
    Ok(concept_similarity_matrix(&mut g, &vectors)?.detached())
}

pub fn run(args: Args) -> Result<(), CliError> {
    let first = SignModel::load(&args.ckpt[0])?;
    if first.config.loss_mode != LossMode::Lcc {
        return Err(CliError::usage(
            "similarity export needs an embedding-head checkpoint",
        ));
    }
    let glosses = first.glosses.clone();
    let words = load_word_embeddings(&args.words, &glosses, false, 0)?;
    let s_f = {
        let mut g = Graph::new(0);
        let w = g.constant(&words.vectors);
        concept_similarity_matrix(&mut g, &w)?.detached()
    };

    fs::create_dir_all(&args.out)?;
    fs::write(args.out.join("S_F.csv"), similarity_matrix_csv(&s_f, &glosses))?;

    let v = glosses.len();
    let mut panels: Vec<Vec<f64>> = vec![s_f.values().to_vec()];
    for (i, path) in args.ckpt.iter().enumerate() {
        let model = SignModel::load(path)?;
        if model.glosses != glosses {
            return Err(CliError::data(format!(
                "checkpoint {} has a different vocabulary ({} vs {} glosses)",
                path.display(),
                model.glosses.len(),
                glosses.len()
            )));
        }
        let s_e = embedding_similarity(&model)?;
        let name = if args.ckpt.len() == 1 {
            "S_E.csv".to_string()
        } else {
            format!("S_E_{}.csv", i + 1)
        };
        fs::write(args.out.join(&name), similarity_matrix_csv(&s_e, &glosses))?;
        let mse: f64 = s_e
            .values()
            .iter()
            .zip(s_f.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / (v * v) as f64;
        println!(
            "{}: MSE(S_E, S_F) = {mse:.6}",
            path.display()
        );
        panels.push(s_e.values().to_vec());
    }

    let panel_refs: Vec<(usize, usize, &[f64])> =
        panels.iter().map(|p| (v, v, p.as_slice())).collect();
    ppm::write_heatmap_row(&args.out.join("similarity.ppm"), &panel_refs, 12)?;
    println!("wrote similarity matrices to {}", args.out.display());
    Ok(())
}
