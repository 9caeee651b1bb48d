//! MT quality estimation: cosine-distance scores between source and MT
//! sentence vectors, supervised ridge regression on the vectors themselves,
//! and Pearson correlation with the human quality label.

use std::io::BufRead;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::embstore::{InputSpec, SentenceRepr};
use crate::error::{Error, Result};
use crate::geometry::{apply_projection, compute_centroid, cosine_distance, LinearMap};
use crate::linalg::ridge_with_bias;
use crate::persist;
use crate::retrieval::Transform;

/// A source sentence, its machine translation, and a nonnegative quality
/// label (HTER or any edit-rate-like score).
#[derive(Debug, Clone, PartialEq)]
pub struct QeRecord {
    pub source: SentenceRepr,
    pub mt: SentenceRepr,
    pub hter: f64,
}

impl QeRecord {
    pub fn new(source: SentenceRepr, mt: SentenceRepr, hter: f64) -> Result<Self> {
        if source.dim() != mt.dim() {
            return Err(Error::dims("QE record", source.dim(), mt.dim()));
        }
        if !(hter >= 0.0 && hter.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "quality label must be finite and nonnegative, got {hter}"
            )));
        }
        Ok(QeRecord { source, mt, hter })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    Src,
    Mt,
    Both,
}

impl std::fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FeatureMode::Src => "src",
            FeatureMode::Mt => "mt",
            FeatureMode::Both => "both",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QeModel {
    pub weights: DVector<f64>,
    pub bias: f64,
    pub feature_mode: FeatureMode,
    pub ridge_lambda: f64,
    pub input: Option<InputSpec>,
}

/// Cosine distance between source and MT vectors of every record.
///
/// `Centered` subtracts each side's centroid over `records`; `Projected` maps
/// the source vector through `map` into the MT space first.
pub fn distance_score(
    records: &[QeRecord],
    transform: Transform,
    map: Option<&LinearMap>,
) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no QE records".into()));
    }
    let name_zero = |i: usize| {
        move |e: Error| match e {
            Error::ZeroVector(what) => Error::ZeroVector(format!("record {i}: {what}")),
            other => other,
        }
    };
    match transform {
        Transform::Plain => records
            .iter()
            .enumerate()
            .map(|(i, r)| cosine_distance(&r.source.vector, &r.mt.vector).map_err(name_zero(i)))
            .collect(),
        Transform::Centered => {
            let src: Vec<SentenceRepr> = records.iter().map(|r| r.source.clone()).collect();
            let mt: Vec<SentenceRepr> = records.iter().map(|r| r.mt.clone()).collect();
            let cs = compute_centroid("source", &src)?;
            let cm = compute_centroid("mt", &mt)?;
            records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let s: Vec<f64> = r.source.vector.iter().zip(&cs.vector).map(|(x, c)| x - c).collect();
                    let m: Vec<f64> = r.mt.vector.iter().zip(&cm.vector).map(|(x, c)| x - c).collect();
                    cosine_distance(&s, &m).map_err(name_zero(i))
                })
                .collect()
        }
        Transform::Projected => {
            let map = map.ok_or_else(|| {
                Error::InvalidArgument("projected QE scoring needs a linear map".into())
            })?;
            records
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let s = apply_projection(map, &r.source.vector)?;
                    cosine_distance(&s, &r.mt.vector).map_err(name_zero(i))
                })
                .collect()
        }
    }
}

/// Sample Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::lengths("correlated series", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument(
            "correlation needs at least two points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::ConstantInput("first series"));
    }
    if syy == 0.0 {
        return Err(Error::ConstantInput("second series"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

fn feature_dim(mode: FeatureMode, dim: usize) -> usize {
    match mode {
        FeatureMode::Src | FeatureMode::Mt => dim,
        FeatureMode::Both => 2 * dim,
    }
}

fn features(records: &[QeRecord], mode: FeatureMode) -> Result<DMatrix<f64>> {
    let dim = records.first().map_or(0, |r| r.source.dim());
    let fd = feature_dim(mode, dim);
    let mut x = DMatrix::zeros(records.len(), fd);
    for (i, r) in records.iter().enumerate() {
        if r.source.dim() != dim || r.mt.dim() != dim {
            return Err(Error::dims(
                format!("QE record {i}"),
                dim,
                r.source.dim().max(r.mt.dim()),
            ));
        }
        let row: Box<dyn Iterator<Item = &f64>> = match mode {
            FeatureMode::Src => Box::new(r.source.vector.iter()),
            FeatureMode::Mt => Box::new(r.mt.vector.iter()),
            FeatureMode::Both => Box::new(r.source.vector.iter().chain(&r.mt.vector)),
        };
        for (j, &v) in row.enumerate() {
            x[(i, j)] = v;
        }
    }
    Ok(x)
}

/// Closed-form ridge regression of the label on the chosen features; the
/// intercept is not penalized.
pub fn train_qe(records: &[QeRecord], mode: FeatureMode, ridge_lambda: f64) -> Result<QeModel> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no QE training records".into()));
    }
    let x = features(records, mode)?;
    let y = DMatrix::from_iterator(records.len(), 1, records.iter().map(|r| r.hter));
    let sol = ridge_with_bias(&x, &y, ridge_lambda)?;
    Ok(QeModel {
        weights: sol.weights.column(0).into_owned(),
        bias: sol.bias[0],
        feature_mode: mode,
        ridge_lambda,
        input: None,
    })
}

pub fn predict_qe(model: &QeModel, records: &[QeRecord]) -> Result<Vec<f64>> {
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let x = features(records, model.feature_mode)?;
    if x.ncols() != model.weights.len() {
        return Err(Error::dims("QE features", model.weights.len(), x.ncols()));
    }
    Ok((&x * &model.weights).iter().map(|p| p + model.bias).collect())
}

/// Default ridge grid: 1e-3 to 1e3 in decades.
pub fn default_lambda_grid() -> Vec<f64> {
    (-3..=3).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LambdaSearch {
    pub best_lambda: f64,
    /// `(lambda, validation correlation)` per grid point; `None` when the
    /// predictions are constant.
    pub scores: Vec<(f64, Option<f64>)>,
}

/// Picks the grid value whose model correlates best with the validation
/// labels. Ties go to the earlier (smaller) grid value.
pub fn select_lambda(
    train: &[QeRecord],
    validation: &[QeRecord],
    mode: FeatureMode,
    grid: &[f64],
) -> Result<LambdaSearch> {
    if grid.is_empty() {
        return Err(Error::EmptyInput("empty lambda grid".into()));
    }
    let labels: Vec<f64> = validation.iter().map(|r| r.hter).collect();
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in grid {
        let model = train_qe(train, mode, lambda)?;
        let preds = predict_qe(&model, validation)?;
        let r = match pearson(&preds, &labels) {
            Ok(r) => Some(r),
            Err(Error::ConstantInput("first series")) => None,
            Err(e) => return Err(e),
        };
        if let Some(r) = r {
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((lambda, r));
            }
        }
        scores.push((lambda, r));
    }
    let best_lambda = best.map_or(grid[0], |(l, _)| l);
    Ok(LambdaSearch {
        best_lambda,
        scores,
    })
}

impl QeModel {
    pub fn save(&self, base: &Path) -> Result<()> {
        let manifest = json!({
            "kind": "qe_ridge",
            "feature_mode": self.feature_mode,
            "feature_dim": self.weights.len(),
            "ridge_lambda": self.ridge_lambda,
            "input": self.input,
            "layout": "f64 little-endian; weights [feature_dim], then bias",
        });
        let mut params: Vec<f64> = self.weights.iter().copied().collect();
        params.push(self.bias);
        persist::save(base, &manifest, &params)
    }

    pub fn load(base: &Path) -> Result<Self> {
        let (m, blob) = persist::load(base)?;
        let field = |k: &str| {
            m.get(k)
                .cloned()
                .ok_or_else(|| Error::invariant("QE model manifest", format!("missing {k:?}")))
        };
        let fd: usize = serde_json::from_value(field("feature_dim")?)?;
        let params = persist::decode_f64s(&blob, fd + 1, "QE model blob")?;
        Ok(QeModel {
            weights: DVector::from_column_slice(&params[..fd]),
            bias: params[fd],
            feature_mode: serde_json::from_value(field("feature_mode")?)?,
            ridge_lambda: serde_json::from_value(field("ridge_lambda")?)?,
            input: serde_json::from_value(m.get("input").cloned().unwrap_or_default())?,
        })
    }
}

/// One float per line; blank lines are errors since they break line joins.
pub fn read_labels<R: BufRead>(reader: R, source_name: &str) -> Result<Vec<f64>> {
    reader
        .lines()
        .enumerate()
        .map(|(n, line)| {
            let line = line?;
            line.trim().parse::<f64>().map_err(|e| Error::Parse {
                source_name: source_name.to_string(),
                line: n + 1,
                detail: format!("{:?}: {e}", line.trim()),
            })
        })
        .collect()
}
