//! Vector-space operations shared by every probe: cosine distance, language
//! centroids, centering and least-squares projection between spaces.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::embstore::{ReprSource, SentenceRepr};
use crate::error::{Error, Result};
use crate::linalg::ridge_with_bias;
use crate::persist;

/// `1 - cos(u, v)`, clamped to `[0, 2]`. A zero vector has no direction, so
/// the distance is an error rather than a convention.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::dims("cosine distance", u.len(), v.len()));
    }
    let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 {
        return Err(Error::ZeroVector("left operand of cosine distance".into()));
    }
    if nv == 0.0 {
        return Err(Error::ZeroVector("right operand of cosine distance".into()));
    }
    Ok((1.0 - dot / (nu.sqrt() * nv.sqrt())).clamp(0.0, 2.0))
}

/// Rows scaled to unit length; `what` names the rows in the zero-vector error.
pub(crate) fn unit_rows(rows: &[&[f64]], what: &str) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                Err(Error::ZeroVector(format!("{what} {i}")))
            } else {
                Ok(r.iter().map(|x| x / norm).collect())
            }
        })
        .collect()
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub lang: String,
    pub layer: usize,
    pub source: ReprSource,
    pub vector: Vec<f64>,
    pub sample_count: usize,
}

impl Centroid {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut s = serde_json::to_vec_pretty(self)?;
        s.push(b'\n');
        std::fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Centroid = serde_json::from_slice(&std::fs::read(path)?)?;
        if c.sample_count == 0 {
            return Err(Error::invariant("centroid.sample_count", "must be at least 1"));
        }
        Ok(c)
    }
}

/// Mean of a language's sentence representations.
pub fn compute_centroid(lang: &str, reprs: &[SentenceRepr]) -> Result<Centroid> {
    let first = reprs
        .first()
        .ok_or_else(|| Error::EmptyInput(format!("no representations for centroid of {lang:?}")))?;
    let dim = first.dim();
    let mut acc = vec![0f64; dim];
    for (i, r) in reprs.iter().enumerate() {
        if r.layer != first.layer || r.source != first.source {
            return Err(Error::MixedProvenance(format!(
                "representation {i} is ({}, layer {}), expected ({}, layer {})",
                r.source, r.layer, first.source, first.layer
            )));
        }
        if r.dim() != dim {
            return Err(Error::dims(format!("centroid input {i}"), dim, r.dim()));
        }
        for (a, x) in acc.iter_mut().zip(&r.vector) {
            *a += x;
        }
    }
    let n = reprs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(Centroid {
        lang: lang.to_string(),
        layer: first.layer,
        source: first.source,
        vector: acc,
        sample_count: reprs.len(),
    })
}

/// Subtracts `centroid` from every representation, preserving order.
pub fn center(reprs: &[SentenceRepr], centroid: &Centroid) -> Result<Vec<SentenceRepr>> {
    reprs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.dim() != centroid.dim() {
                return Err(Error::dims(format!("centering input {i}"), centroid.dim(), r.dim()));
            }
            let vector = r
                .vector
                .iter()
                .zip(&centroid.vector)
                .map(|(x, c)| x - c)
                .collect();
            Ok(SentenceRepr::new(vector, r.source, r.layer))
        })
        .collect()
}

/// Affine map `x -> x W + b` from one language's space into another's.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    /// `[in_dim x out_dim]`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub source_lang: String,
    pub target_lang: String,
    pub ridge_lambda: f64,
}

impl LinearMap {
    pub fn identity(dim: usize) -> Self {
        LinearMap {
            weights: DMatrix::identity(dim, dim),
            bias: DVector::zeros(dim),
            source_lang: String::new(),
            target_lang: String::new(),
            ridge_lambda: 0.0,
        }
    }

    pub fn with_langs(mut self, source: &str, target: &str) -> Self {
        self.source_lang = source.to_string();
        self.target_lang = target.to_string();
        self
    }

    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Applies the map to every row of `m`.
    pub fn apply_rows(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.ncols() != self.input_dim() {
            return Err(Error::dims("projection input", self.input_dim(), m.ncols()));
        }
        let mut out = m * &self.weights;
        for mut row in out.row_iter_mut() {
            row += self.bias.transpose();
        }
        Ok(out)
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let manifest = json!({
            "kind": "linear_map",
            "source_lang": self.source_lang,
            "target_lang": self.target_lang,
            "ridge_lambda": self.ridge_lambda,
            "input_dim": self.input_dim(),
            "output_dim": self.output_dim(),
            "layout": "f64 little-endian; weights row-major [input_dim x output_dim], then bias [output_dim]",
        });
        let mut params = Vec::with_capacity(self.weights.len() + self.bias.len());
        for row in self.weights.row_iter() {
            params.extend(row.iter());
        }
        params.extend(self.bias.iter());
        persist::save(base, &manifest, &params)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (m, blob) = persist::load(base)?;
        let field = |k: &str| {
            m.get(k)
                .cloned()
                .ok_or_else(|| Error::invariant("linear map manifest", format!("missing {k:?}")))
        };
        let input_dim: usize = serde_json::from_value(field("input_dim")?)?;
        let output_dim: usize = serde_json::from_value(field("output_dim")?)?;
        let params = decode_params(&blob, input_dim, output_dim)?;
        Ok(LinearMap {
            weights: DMatrix::from_row_slice(input_dim, output_dim, &params[..input_dim * output_dim]),
            bias: DVector::from_column_slice(&params[input_dim * output_dim..]),
            source_lang: serde_json::from_value(field("source_lang")?)?,
            target_lang: serde_json::from_value(field("target_lang")?)?,
            ridge_lambda: serde_json::from_value(field("ridge_lambda")?)?,
        })
    }
}

fn decode_params(blob: &[u8], rows: usize, cols: usize) -> Result<Vec<f64>> {
    persist::decode_f64s(blob, rows * cols + cols, "linear map blob")
}

/// Least-squares fit of `target ~ source W + b` with penalty
/// `ridge_lambda * ||W||_F^2` (the bias is not penalized).
pub fn fit_projection(
    source: &DMatrix<f64>,
    target: &DMatrix<f64>,
    ridge_lambda: f64,
) -> Result<LinearMap> {
    if source.nrows() != target.nrows() {
        return Err(Error::lengths(
            "projection training pairs",
            source.nrows(),
            target.nrows(),
        ));
    }
    if source.ncols() != target.ncols() {
        return Err(Error::dims("projection target", source.ncols(), target.ncols()));
    }
    let sol = ridge_with_bias(source, target, ridge_lambda)?;
    Ok(LinearMap {
        weights: sol.weights,
        bias: sol.bias,
        source_lang: String::new(),
        target_lang: String::new(),
        ridge_lambda,
    })
}

pub fn apply_projection(map: &LinearMap, repr: &[f64]) -> Result<Vec<f64>> {
    if repr.len() != map.input_dim() {
        return Err(Error::dims("projection input", map.input_dim(), repr.len()));
    }
    Ok((0..map.output_dim())
        .map(|j| {
            let mut s = map.bias[j];
            for (i, x) in repr.iter().enumerate() {
                s += x * map.weights[(i, j)];
            }
            s
        })
        .collect())
}

/// Stacks sentence vectors into an `[N x D]` matrix.
pub fn reprs_to_matrix(reprs: &[SentenceRepr]) -> Result<DMatrix<f64>> {
    let dim = reprs.first().map_or(0, SentenceRepr::dim);
    let mut m = DMatrix::zeros(reprs.len(), dim);
    for (i, r) in reprs.iter().enumerate() {
        if r.dim() != dim {
            return Err(Error::dims(format!("representation {i}"), dim, r.dim()));
        }
        for (j, &x) in r.vector.iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    Ok(m)
}

pub fn project_reprs(map: &LinearMap, reprs: &[SentenceRepr]) -> Result<Vec<SentenceRepr>> {
    reprs
        .iter()
        .map(|r| Ok(SentenceRepr::new(apply_projection(map, &r.vector)?, r.source, r.layer)))
        .collect()
}
