//! Alternating refinement: align words, fit a linear map on the linked word
//! pairs, re-align with projected source vectors, repeat.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use super::{align_word_vectors, Alignment, EdgeCover};
use crate::error::{Error, Result};
use crate::geometry::{fit_projection, LinearMap};

#[derive(Debug, Clone, PartialEq)]
pub struct EmAlignment {
    pub map: LinearMap,
    pub alignments: Vec<Alignment>,
    /// Total edge-cover cost of the accepted state after each iteration,
    /// starting with the plain alignment.
    pub costs: Vec<f64>,
    pub trace: Vec<EmStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmStep {
    pub iteration: usize,
    pub cost: f64,
    pub links_changed: usize,
    pub accepted: bool,
}

fn align_all(src: &[DMatrix<f64>], tgt: &[DMatrix<f64>]) -> Result<Vec<EdgeCover>> {
    src.par_iter()
        .zip(tgt.par_iter())
        .enumerate()
        .map(|(k, (s, t))| {
            align_word_vectors(s, t).map_err(|e| match e {
                Error::ZeroVector(what) => Error::ZeroVector(format!("sentence pair {k}: {what}")),
                other => other,
            })
        })
        .collect()
}

fn total_cost(covers: &[EdgeCover]) -> f64 {
    covers.iter().map(|c| c.cost).sum()
}

fn links_changed(a: &[EdgeCover], b: &[EdgeCover]) -> usize {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            x.alignment
                .links
                .symmetric_difference(&y.alignment.links)
                .count()
        })
        .sum()
}

fn linked_pairs(
    src: &[DMatrix<f64>],
    tgt: &[DMatrix<f64>],
    covers: &[EdgeCover],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n: usize = covers.iter().map(|c| c.alignment.links.len()).sum();
    let d = src[0].ncols();
    let mut x = DMatrix::zeros(n, d);
    let mut y = DMatrix::zeros(n, tgt[0].ncols());
    let mut r = 0;
    for (k, c) in covers.iter().enumerate() {
        for &(i, j) in &c.alignment.links {
            x.row_mut(r).copy_from(&src[k].row(i));
            y.row_mut(r).copy_from(&tgt[k].row(j));
            r += 1;
        }
    }
    (x, y)
}

/// Runs up to `iterations` align-and-project rounds over paired word-vector
/// matrices. Iteration 0 is the plain alignment under the identity map.
///
/// A round whose total cover cost would exceed the current one is rejected
/// and ends the run, so the recorded costs never increase. The run also ends
/// once a round leaves every link unchanged.
pub fn em_align_project(
    src: &[DMatrix<f64>],
    tgt: &[DMatrix<f64>],
    iterations: usize,
    ridge_lambda: f64,
) -> Result<EmAlignment> {
    if src.len() != tgt.len() {
        return Err(Error::lengths("paired corpora", src.len(), tgt.len()));
    }
    if src.is_empty() {
        return Err(Error::EmptyInput("no sentence pairs to align".into()));
    }
    let dim = src[0].ncols();
    if let Some(bad) = src.iter().chain(tgt).find(|m| m.ncols() != dim) {
        return Err(Error::dims("word vectors", dim, bad.ncols()));
    }

    let mut map = LinearMap::identity(dim);
    let mut covers = align_all(src, tgt)?;
    let mut cost = total_cost(&covers);
    let mut costs = vec![cost];
    let mut trace = vec![EmStep {
        iteration: 0,
        cost,
        links_changed: 0,
        accepted: true,
    }];

    for iteration in 1..=iterations {
        let (x, y) = linked_pairs(src, tgt, &covers);
        let candidate = fit_projection(&x, &y, ridge_lambda)?;
        let projected = src
            .iter()
            .map(|m| candidate.apply_rows(m))
            .collect::<Result<Vec<_>>>()?;
        let next = align_all(&projected, tgt)?;
        let next_cost = total_cost(&next);
        let changed = links_changed(&covers, &next);
        let accepted = next_cost <= cost;
        trace.push(EmStep {
            iteration,
            cost: next_cost,
            links_changed: changed,
            accepted,
        });
        if !accepted {
            break;
        }
        map = candidate;
        covers = next;
        cost = next_cost;
        costs.push(cost);
        if changed == 0 {
            break;
        }
    }

    Ok(EmAlignment {
        map: LinearMap {
            ridge_lambda,
            ..map
        },
        alignments: covers.into_iter().map(|c| c.alignment).collect(),
        costs,
        trace,
    })
}
