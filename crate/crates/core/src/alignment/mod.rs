//! Word alignment as a minimum-weight edge cover of the bipartite graph of
//! word vectors weighted by cosine distance, with sure/possible F1 evaluation
//! and an alternating align-and-project refinement.

mod cover;
mod em;
mod eval;
pub mod hungarian;
pub mod io;

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rayon::prelude::*;

pub use cover::{is_edge_cover, min_weight_edge_cover, BipartiteWeights, EdgeCover};
pub use em::{em_align_project, EmAlignment, EmStep};
pub use eval::{alignment_f1, corpus_f1, AlignmentCounts, F1Scores};

use crate::embstore::EmbeddingSet;
use crate::error::{Error, Result};
use crate::geometry::{dot, unit_rows};

/// `(source word index, target word index)`
pub type Link = (usize, usize);

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Alignment {
    pub links: BTreeSet<Link>,
}

/// Gold links. `possible` always contains `sure`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldAlignment {
    pub sure: BTreeSet<Link>,
    pub possible: BTreeSet<Link>,
}

impl GoldAlignment {
    pub fn new(sure: BTreeSet<Link>, possible: BTreeSet<Link>) -> Self {
        let possible = possible.union(&sure).copied().collect();
        GoldAlignment { sure, possible }
    }
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Cosine distances between every source and target word vector.
pub fn cosine_weights(src: &DMatrix<f64>, tgt: &DMatrix<f64>) -> Result<BipartiteWeights> {
    if src.ncols() != tgt.ncols() {
        return Err(Error::dims("word vectors", src.ncols(), tgt.ncols()));
    }
    let s = matrix_rows(src);
    let t = matrix_rows(tgt);
    let s = unit_rows(&s.iter().map(Vec::as_slice).collect::<Vec<_>>(), "source word")?;
    let t = unit_rows(&t.iter().map(Vec::as_slice).collect::<Vec<_>>(), "target word")?;
    let mut data = Vec::with_capacity(s.len() * t.len());
    for u in &s {
        for v in &t {
            data.push((1.0 - dot(u, v)).clamp(0.0, 2.0));
        }
    }
    BipartiteWeights::new(s.len(), t.len(), data)
}

pub fn align_word_vectors(src: &DMatrix<f64>, tgt: &DMatrix<f64>) -> Result<EdgeCover> {
    Ok(min_weight_edge_cover(&cosine_weights(src, tgt)?))
}

/// Aligns sentence `sentence` of two parallel embedding sets at `layer`.
pub fn align_sentence_pair(
    src: &EmbeddingSet,
    tgt: &EmbeddingSet,
    sentence: usize,
    layer: usize,
) -> Result<EdgeCover> {
    if src.len() != tgt.len() {
        return Err(Error::lengths("parallel corpora", src.len(), tgt.len()));
    }
    let s = src.word_vectors(sentence, layer)?;
    let t = tgt.word_vectors(sentence, layer)?;
    align_word_vectors(&s, &t).map_err(|e| match e {
        Error::ZeroVector(what) => Error::ZeroVector(format!("sentence {sentence}: {what}")),
        other => other,
    })
}

/// Every sentence pair of a parallel corpus, in order.
pub fn align_corpus(src: &EmbeddingSet, tgt: &EmbeddingSet, layer: usize) -> Result<Vec<EdgeCover>> {
    if src.len() != tgt.len() {
        return Err(Error::lengths("parallel corpora", src.len(), tgt.len()));
    }
    (0..src.len())
        .into_par_iter()
        .map(|k| align_sentence_pair(src, tgt, k, layer))
        .collect()
}

/// Word-vector matrices of every sentence at `layer`.
pub fn corpus_word_vectors(set: &EmbeddingSet, layer: usize) -> Result<Vec<DMatrix<f64>>> {
    (0..set.len()).map(|k| set.word_vectors(k, layer)).collect()
}

/// Fraction of predicted links that differ between two alignments of the
/// same corpus, relative to the links of the first.
pub fn link_change_fraction(a: &[Alignment], b: &[Alignment]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::lengths("alignment sets", a.len(), b.len()));
    }
    let total: usize = a.iter().map(|x| x.links.len()).sum();
    if total == 0 {
        return Ok(0.0);
    }
    let changed: usize = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.links.difference(&y.links).count())
        .sum();
    Ok(changed as f64 / total as f64)
}
