//! Parallel sentence retrieval: for every source sentence, pick the target
//! sentence at the smallest cosine distance; accuracy counts exact index hits.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embstore::{ReprSource, SentenceRepr};
use crate::error::{Error, Result};
use crate::geometry::{
    center, compute_centroid, dot, fit_projection, project_reprs, reprs_to_matrix, unit_rows,
    Centroid, LinearMap,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    Plain,
    Centered,
    Projected,
}

impl std::fmt::Display for Transform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Transform::Plain => "plain",
            Transform::Centered => "centered",
            Transform::Projected => "projected",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    /// One target index per source sentence.
    pub predictions: Vec<usize>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub source_lang: String,
    pub target_lang: String,
    pub layer: usize,
    pub repr_source: ReprSource,
    pub transform: Transform,
    pub predictions: Vec<usize>,
    pub accuracy: f64,
}

/// Nearest target (cosine) for each source sentence; ties go to the smallest
/// target index.
pub fn retrieve(source: &[SentenceRepr], target: &[SentenceRepr]) -> Result<Retrieval> {
    if source.len() != target.len() {
        return Err(Error::lengths("retrieval corpora", source.len(), target.len()));
    }
    if source.is_empty() {
        return Err(Error::EmptyInput("retrieval corpus has no sentences".into()));
    }
    let dim = source[0].dim();
    for (i, r) in source.iter().chain(target).enumerate() {
        if r.dim() != dim {
            return Err(Error::dims(format!("retrieval representation {i}"), dim, r.dim()));
        }
    }
    let src = unit_rows(
        &source.iter().map(|r| r.vector.as_slice()).collect::<Vec<_>>(),
        "source sentence",
    )?;
    let tgt = unit_rows(
        &target.iter().map(|r| r.vector.as_slice()).collect::<Vec<_>>(),
        "target sentence",
    )?;

    let predictions: Vec<usize> = src
        .par_iter()
        .map(|u| {
            let mut best = 0;
            let mut best_dist = f64::INFINITY;
            for (j, v) in tgt.iter().enumerate() {
                let d = 1.0 - dot(u, v);
                if d < best_dist {
                    best_dist = d;
                    best = j;
                }
            }
            best
        })
        .collect();
    let hits = predictions.iter().enumerate().filter(|(i, &p)| *i == p).count();
    Ok(Retrieval {
        accuracy: hits as f64 / predictions.len() as f64,
        predictions,
    })
}

/// How the transformed spaces of a retrieval matrix are obtained.
#[derive(Debug, Clone, Default)]
pub struct MatrixOptions<'a> {
    /// Pivot space for projection.
    pub pivot: Option<String>,
    /// Held-out parallel data per language used to fit projections.
    pub fit_data: Option<&'a BTreeMap<String, Vec<SentenceRepr>>>,
    pub ridge_lambda: f64,
    /// Precomputed language centroids; computed from the corpus when absent.
    pub centroids: Option<&'a BTreeMap<String, Centroid>>,
}

/// Fits a map from every language into the pivot space on held-out parallel
/// data. The pivot itself maps through the identity.
pub fn fit_pivot_maps(
    fit_data: &BTreeMap<String, Vec<SentenceRepr>>,
    langs: impl IntoIterator<Item = String>,
    pivot: &str,
    ridge_lambda: f64,
) -> Result<BTreeMap<String, LinearMap>> {
    let pivot_reprs = fit_data
        .get(pivot)
        .ok_or_else(|| Error::MissingLanguage(pivot.to_string()))?;
    let target = reprs_to_matrix(pivot_reprs)?;
    let mut maps = BTreeMap::new();
    for lang in langs {
        let map = if lang == pivot {
            LinearMap::identity(target.ncols())
        } else {
            let reprs = fit_data
                .get(&lang)
                .ok_or_else(|| Error::MissingLanguage(lang.clone()))?;
            let source = reprs_to_matrix(reprs)?;
            fit_projection(&source, &target, ridge_lambda)?
        };
        maps.insert(lang.clone(), map.with_langs(&lang, pivot));
    }
    Ok(maps)
}

/// Retrieval for every ordered language pair of a multi-parallel corpus.
pub fn retrieval_matrix(
    corpus: &BTreeMap<String, Vec<SentenceRepr>>,
    transform: Transform,
    options: &MatrixOptions<'_>,
) -> Result<BTreeMap<(String, String), RetrievalResult>> {
    let mut sizes = corpus.iter().map(|(l, r)| (l, r.len()));
    if let Some((first_lang, n)) = sizes.next() {
        for (lang, m) in sizes {
            if m != n {
                return Err(Error::lengths(
                    format!("corpus sizes of {first_lang} and {lang}"),
                    n,
                    m,
                ));
            }
        }
    }

    let spaces: BTreeMap<String, Vec<SentenceRepr>> = match transform {
        Transform::Plain => corpus.clone(),
        Transform::Centered => corpus
            .iter()
            .map(|(lang, reprs)| {
                let centroid = match options.centroids {
                    Some(cs) => cs
                        .get(lang)
                        .cloned()
                        .ok_or_else(|| Error::MissingLanguage(lang.clone()))?,
                    None => compute_centroid(lang, reprs)?,
                };
                Ok((lang.clone(), center(reprs, &centroid)?))
            })
            .collect::<Result<_>>()?,
        Transform::Projected => {
            let pivot = options.pivot.as_deref().ok_or_else(|| {
                Error::InvalidArgument("projected retrieval needs a pivot language".into())
            })?;
            let fit_data = options.fit_data.ok_or_else(|| {
                Error::InvalidArgument("projected retrieval needs held-out fitting data".into())
            })?;
            let maps = fit_pivot_maps(fit_data, corpus.keys().cloned(), pivot, options.ridge_lambda)?;
            corpus
                .iter()
                .map(|(lang, reprs)| Ok((lang.clone(), project_reprs(&maps[lang], reprs)?)))
                .collect::<Result<_>>()?
        }
    };

    let mut out = BTreeMap::new();
    for (a, src) in &spaces {
        for (b, tgt) in &spaces {
            if a == b {
                continue;
            }
            let r = retrieve(src, tgt).map_err(|e| match e {
                Error::ZeroVector(what) => Error::ZeroVector(format!("{a}->{b}: {what}")),
                other => other,
            })?;
            let (layer, repr_source) = corpus[a]
                .first()
                .map_or((0, ReprSource::Mean), |r| (r.layer, r.source));
            out.insert(
                (a.clone(), b.clone()),
                RetrievalResult {
                    source_lang: a.clone(),
                    target_lang: b.clone(),
                    layer,
                    repr_source,
                    transform,
                    predictions: r.predictions,
                    accuracy: r.accuracy,
                },
            );
        }
    }
    Ok(out)
}

pub fn mean_accuracy(results: &BTreeMap<(String, String), RetrievalResult>) -> f64 {
    if results.is_empty() {
        return 0.0;
    }
    results.values().map(|r| r.accuracy).sum::<f64>() / results.len() as f64
}
