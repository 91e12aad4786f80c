use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::CorpusError;
use crate::numkit::Real;

/// Token table plus a frozen embedding matrix of `|V|+1` rows; row 0 is
/// the shared unknown-token row. Lookups never fail: out-of-vocabulary
/// tokens map to row 0. The matrix is immutable during training.
#[derive(Debug, Clone)]
pub struct Vocab<R> {
    token_to_row: HashMap<String, usize>,
    data: Vec<R>,
    dim: usize,
}

impl<R: Real> Vocab<R> {
    /// Build from explicit rows. The unknown row is sampled once,
    /// uniformly in `[-0.01, 0.01]`, from the seeded generator.
    pub fn from_rows(tokens: Vec<String>, rows: Vec<Vec<f64>>, unk_seed: u64) -> Result<Self, CorpusError> {
        if tokens.len() != rows.len() {
            return Err(CorpusError::Invalid(format!(
                "{} tokens but {} embedding rows",
                tokens.len(),
                rows.len()
            )));
        }
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if dim == 0 {
            return Err(CorpusError::Invalid("embedding dimension is zero".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(unk_seed);
        let mut data: Vec<R> = (0..dim)
            .map(|_| R::from_f64c(rng.gen::<f64>() * 0.02 - 0.01))
            .collect();
        let mut token_to_row = HashMap::with_capacity(tokens.len());
        for (i, (tok, row)) in tokens.into_iter().zip(rows).enumerate() {
            if row.len() != dim {
                return Err(CorpusError::Invalid(format!(
                    "token '{tok}' has {} values, expected {dim}",
                    row.len()
                )));
            }
            token_to_row.insert(tok, i + 1);
            data.extend(row.into_iter().map(R::from_f64c));
        }
        Ok(Vocab {
            token_to_row,
            data,
            dim,
        })
    }

    /// Load word vectors from text: one token per line followed by its
    /// values, whitespace-separated. `restrict`, when given, keeps only
    /// listed tokens.
    pub fn load_text(
        path: &Path,
        restrict: Option<&HashSet<String>>,
        unk_seed: u64,
    ) -> Result<Self, CorpusError> {
        let r = BufReader::new(std::fs::File::open(path)?);
        let mut tokens = Vec::new();
        let mut rows = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let tok = parts.next().ok_or_else(|| CorpusError::BadRecord {
                line: idx + 1,
                msg: "empty record".into(),
            })?;
            if let Some(keep) = restrict {
                if !keep.contains(tok) {
                    continue;
                }
            }
            let row: Result<Vec<f64>, _> = parts.map(|v| v.parse::<f64>()).collect();
            let row = row.map_err(|e| CorpusError::BadRecord {
                line: idx + 1,
                msg: format!("bad value: {e}"),
            })?;
            tokens.push(tok.to_string());
            rows.push(row);
        }
        if tokens.is_empty() {
            return Err(CorpusError::Invalid(
                "no usable word vectors (empty file or nothing within the restriction)".into(),
            ));
        }
        Self::from_rows(tokens, rows, unk_seed)
    }

    /// Random frozen vectors in `[-0.01, 0.01]` for a known token set;
    /// used by the synthetic pipeline and tests.
    pub fn random<I: IntoIterator<Item = String>>(tokens: I, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sorted: Vec<String> = tokens.into_iter().collect();
        sorted.sort();
        sorted.dedup();
        let mut data: Vec<R> = Vec::with_capacity((sorted.len() + 1) * dim);
        for _ in 0..(sorted.len() + 1) * dim {
            data.push(R::from_f64c(rng.gen::<f64>() * 0.02 - 0.01));
        }
        let token_to_row = sorted
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t, i + 1))
            .collect();
        Vocab {
            token_to_row,
            data,
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows including the unknown row.
    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row_of(&self, token: &str) -> usize {
        self.token_to_row.get(token).copied().unwrap_or(0)
    }

    /// Embedding of a token; unknown tokens get the shared row 0.
    pub fn embed(&self, token: &str) -> &[R] {
        let row = self.row_of(token);
        &self.data[row * self.dim..(row + 1) * self.dim]
    }

    pub fn cast<S: Real>(&self) -> Vocab<S> {
        Vocab {
            token_to_row: self.token_to_row.clone(),
            data: self
                .data
                .iter()
                .map(|v| S::from_f64c(v.to_f64().expect("finite")))
                .collect(),
            dim: self.dim,
        }
    }

    /// Write in the same text format [`Vocab::load_text`] reads
    /// (excluding the unknown row). Tokens come out in row order.
    pub fn save_text(&self, w: &mut impl Write) -> Result<(), CorpusError> {
        let mut by_row: Vec<(&String, usize)> = self.token_to_row.iter().map(|(t, &r)| (t, r)).collect();
        by_row.sort_by_key(|&(_, r)| r);
        for (tok, row) in by_row {
            write!(w, "{tok}")?;
            for v in &self.data[row * self.dim..(row + 1) * self.dim] {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}
