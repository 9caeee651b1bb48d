use std::collections::BTreeSet;

use super::hungarian;
use super::{Alignment, Link};
use crate::error::{Error, Result};

/// Dense `[S x T]` edge weights of a complete bipartite graph.
#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteWeights {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl BipartiteWeights {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument(format!(
                "bipartite graph needs both sides nonempty, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::lengths("bipartite weights", rows * cols, data.len()));
        }
        if let Some(i) = data.iter().position(|w| !w.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "edge ({}, {}) has non-finite weight {}",
                i / cols,
                i % cols,
                data[i]
            )));
        }
        Ok(BipartiteWeights { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|row| row.len() != c) {
            return Err(Error::lengths("bipartite weight row", c, bad.len()));
        }
        Self::new(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Total weight of a set of edges.
    pub fn cost<'a>(&self, links: impl IntoIterator<Item = &'a Link>) -> f64 {
        links.into_iter().map(|&(i, j)| self.get(i, j)).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeCover {
    pub alignment: Alignment,
    pub cost: f64,
}

fn argmin(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
        }
    }
    best
}

/// Minimum-weight edge cover of a complete bipartite graph.
///
/// With `m(v)` the cheapest edge weight at vertex `v`, the cover cost is
/// `sum_v m(v)` plus the weight of a minimum matching under reduced weights
/// `w(i, j) - m(i) - m(j)`. The matching is found as an assignment on the
/// reduced matrix clamped at zero and padded square; vertices left unmatched
/// take their cheapest edge. Ties go to the smallest index.
pub fn min_weight_edge_cover(w: &BipartiteWeights) -> EdgeCover {
    let (s, t) = (w.rows(), w.cols());
    let row_min: Vec<(usize, f64)> = (0..s).map(|i| argmin((0..t).map(|j| w.get(i, j)))).collect();
    let col_min: Vec<(usize, f64)> = (0..t).map(|j| argmin((0..s).map(|i| w.get(i, j)))).collect();

    let reduced = |i: usize, j: usize| w.get(i, j) - row_min[i].1 - col_min[j].1;
    let n = s.max(t);
    let padded: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i < s && j < t { reduced(i, j).min(0.0) } else { 0.0 })
                .collect()
        })
        .collect();
    let assignment = hungarian::solve(&padded);

    let mut links = BTreeSet::new();
    let mut row_covered = vec![false; s];
    let mut col_covered = vec![false; t];
    for (i, &j) in assignment.iter().enumerate() {
        if i < s && j < t && reduced(i, j) < 0.0 {
            links.insert((i, j));
            row_covered[i] = true;
            col_covered[j] = true;
        }
    }
    for i in 0..s {
        if !row_covered[i] {
            links.insert((i, row_min[i].0));
        }
    }
    for j in 0..t {
        if !col_covered[j] {
            links.insert((col_min[j].0, j));
        }
    }

    let cover = EdgeCover {
        cost: w.cost(&links),
        alignment: Alignment { links },
    };
    assert!(
        is_edge_cover(&cover.alignment, s, t),
        "edge cover misses a vertex"
    );
    cover
}

pub fn is_edge_cover(a: &Alignment, s: usize, t: usize) -> bool {
    let mut rows = vec![false; s];
    let mut cols = vec![false; t];
    for &(i, j) in &a.links {
        if i >= s || j >= t {
            return false;
        }
        rows[i] = true;
        cols[j] = true;
    }
    rows.into_iter().chain(cols).all(|c| c)
}
