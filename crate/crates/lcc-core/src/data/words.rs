//! Plain-text word-vector loading, reordered to a target gloss vocabulary.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DataError;
use crate::tensor::Tensor;

/// Pretrained word vectors for the target vocabulary, one row per gloss in
/// vocabulary order. Every row has nonzero norm.
#[derive(Debug, Clone)]
pub struct WordEmbeddingTable {
    pub vocab: Vec<String>,
    pub dim: usize,
    /// `[V, dim]`
    pub vectors: Tensor,
}

impl WordEmbeddingTable {
    pub fn new(vocab: Vec<String>, dim: usize, rows: Vec<Vec<f64>>) -> Result<Self, DataError> {
        if rows.len() != vocab.len() {
            return Err(DataError::Invalid(format!(
                "{} vectors for {} glosses",
                rows.len(),
                vocab.len()
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for g in &vocab {
            if !seen.insert(g) {
                return Err(DataError::Invalid(format!("duplicate gloss '{g}'")));
            }
        }
        let mut values = Vec::with_capacity(vocab.len() * dim);
        for (gloss, row) in vocab.iter().zip(&rows) {
            if row.len() != dim {
                return Err(DataError::Invalid(format!(
                    "gloss '{gloss}' has {} dims, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().map(|v| v * v).sum::<f64>() == 0.0 {
                return Err(DataError::Invalid(format!(
                    "gloss '{gloss}' has a zero-norm vector"
                )));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            dim,
            vectors: Tensor::new(vec![vocab.len(), dim], values).expect("rows validated"),
            vocab,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors.values()[i * self.dim..(i + 1) * self.dim]
    }
}

/// Parse a text word-vector file (header `count dim`, then one
/// `token v1 .. v_dim` row per line) and reorder the rows to `vocab` order.
///
/// A multi-word gloss whose exact token is absent falls back to the mean of
/// its per-word vectors. Remaining misses are an error listing every missing
/// gloss, unless `allow_missing` is set, in which case each miss gets a
/// seeded random unit vector.
pub fn load_word_embeddings(
    path: &Path,
    vocab: &[String],
    allow_missing: bool,
    seed: u64,
) -> Result<WordEmbeddingTable, DataError> {
    let body = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = body.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or(DataError::WordParse {
            line: 1,
            detail: "empty file".into(),
        })?;
    let mut parts = header.split_whitespace();
    let parse_head = |s: Option<&str>, what: &str| -> Result<usize, DataError> {
        s.and_then(|v| v.parse().ok()).ok_or(DataError::WordParse {
            line: 1,
            detail: format!("header must be 'count dim'; bad {what}"),
        })
    };
    let count = parse_head(parts.next(), "count")?;
    let dim = parse_head(parts.next(), "dim")?;
    if dim == 0 {
        return Err(DataError::WordParse {
            line: 1,
            detail: "dim must be positive".into(),
        });
    }

    let mut table: HashMap<String, Vec<f64>> = HashMap::with_capacity(count);
    let mut rows = 0usize;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut parts = line.split_whitespace();
        let token = parts
            .next()
            .ok_or(DataError::WordParse {
                line: lineno,
                detail: "missing token".into(),
            })?
            .to_string();
        let vec: Result<Vec<f64>, _> = parts.map(|p| p.parse::<f64>()).collect();
        let vec = vec.map_err(|e| DataError::WordParse {
            line: lineno,
            detail: format!("bad value: {e}"),
        })?;
        if vec.len() != dim {
            return Err(DataError::WordParse {
                line: lineno,
                detail: format!("{} values, header says {dim}", vec.len()),
            });
        }
        table.insert(token, vec);
        rows += 1;
    }
    if rows != count {
        return Err(DataError::WordParse {
            line: 1,
            detail: format!("header promises {count} rows, file has {rows}"),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out_rows: Vec<Option<Vec<f64>>> = Vec::with_capacity(vocab.len());
    let mut missing = Vec::new();
    for gloss in vocab {
        if let Some(v) = table.get(gloss.as_str()) {
            out_rows.push(Some(v.clone()));
            continue;
        }
        let words: Vec<&str> = gloss.split_whitespace().collect();
        if words.len() > 1 && words.iter().all(|w| table.contains_key(*w)) {
            let mut mean = vec![0.0; dim];
            for w in &words {
                for (m, v) in mean.iter_mut().zip(&table[*w]) {
                    *m += v;
                }
            }
            let inv = 1.0 / words.len() as f64;
            mean.iter_mut().for_each(|m| *m *= inv);
            out_rows.push(Some(mean));
        } else {
            missing.push(gloss.clone());
            out_rows.push(None);
        }
    }
    if !missing.is_empty() && !allow_missing {
        return Err(DataError::MissingGlosses(missing));
    }
    let rows: Vec<Vec<f64>> = out_rows
        .into_iter()
        .map(|r| r.unwrap_or_else(|| random_unit_vector(&mut rng, dim)))
        .collect();
    WordEmbeddingTable::new(vocab.to_vec(), dim, rows)
}

fn random_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-3 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_vec_file(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    fn v(s: &str) -> Vec<String> {
        s.split(',').map(str::to_string).collect()
    }

    #[test]
    fn rows_are_reordered_to_vocab_order() {
        let f = write_vec_file("2 3\nhello 1 0 0\nworld 0 1 0\n");
        let table = load_word_embeddings(f.path(), &v("world,hello"), false, 0).unwrap();
        assert_eq!(table.row(0), &[0.0, 1.0, 0.0]);
        assert_eq!(table.row(1), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn missing_gloss_is_a_hard_error_by_default() {
        let f = write_vec_file("1 2\nhello 1 0\n");
        let err = load_word_embeddings(f.path(), &v("hello,book"), false, 0).unwrap_err();
        assert!(err.to_string().contains("book"), "{err}");
    }

    #[test]
    fn multi_word_gloss_falls_back_to_word_mean() {
        let f = write_vec_file("2 2\nice 1 0\ncream 0 1\n");
        let table = load_word_embeddings(f.path(), &v("ice cream"), false, 0).unwrap();
        assert_eq!(table.row(0), &[0.5, 0.5]);
    }

    #[test]
    fn allow_missing_draws_seeded_unit_vectors() {
        let f = write_vec_file("1 4\nhello 1 0 0 0\n");
        let a = load_word_embeddings(f.path(), &v("hello,book"), true, 9).unwrap();
        let b = load_word_embeddings(f.path(), &v("hello,book"), true, 9).unwrap();
        assert_eq!(a.row(1), b.row(1));
        let norm: f64 = a.row(1).iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn malformed_row_reports_line_number() {
        let f = write_vec_file("2 2\nhello 1 0\nworld 0 oops\n");
        let err = load_word_embeddings(f.path(), &v("hello"), false, 0).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }
}

/// Write a table in the plain-text format `load_word_embeddings` reads.
pub fn save_word_embeddings(path: &Path, table: &WordEmbeddingTable) -> Result<(), DataError> {
    let mut out = format!("{} {}\n", table.vocab.len(), table.dim);
    for (i, gloss) in table.vocab.iter().enumerate() {
        // glosses with spaces cannot live in a space-separated format
        out.push_str(&gloss.replace(' ', "_"));
        for v in table.row(i) {
            out.push(' ');
            out.push_str(&format!("{v}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}
