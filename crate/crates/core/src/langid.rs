//! Language identification with a linear softmax classifier trained by
//! mini-batch gradient descent.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::embstore::{InputSpec, SentenceRepr};
use crate::error::{Error, Result};
use crate::geometry::Centroid;
use crate::persist;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub l2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.01,
            batch_size: 256,
            seed: 42,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub config: TrainConfig,
    pub final_loss: f64,
    /// Full-data objective after each epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    /// `[hidden_dim x num_classes]`
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    /// Sorted; column `k` of `weights` scores `class_labels[k]`.
    pub class_labels: Vec<String>,
    pub meta: TrainingMeta,
    /// Per-language centroids subtracted before scoring, if trained on
    /// centered inputs.
    pub centroids: Option<BTreeMap<String, Centroid>>,
    pub input: Option<InputSpec>,
}

fn check_data(data: &[(SentenceRepr, String)]) -> Result<usize> {
    let first = data
        .first()
        .ok_or_else(|| Error::EmptyInput("no labeled representations".into()))?;
    let dim = first.0.dim();
    if let Some((i, (r, _))) = data.iter().enumerate().find(|(_, (r, _))| r.dim() != dim) {
        return Err(Error::dims(format!("representation {i}"), dim, r.dim()));
    }
    Ok(dim)
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    scores.iter_mut().for_each(|s| *s /= sum);
}

struct Params<'a> {
    weights: &'a DMatrix<f64>,
    bias: &'a DVector<f64>,
}

impl Params<'_> {
    fn scores(&self, x: &[f64]) -> Vec<f64> {
        let (d, k) = self.weights.shape();
        let mut out: Vec<f64> = self.bias.iter().copied().collect();
        for i in 0..d {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            for (c, o) in out.iter_mut().enumerate().take(k) {
                *o += xi * self.weights[(i, c)];
            }
        }
        out
    }
}

/// Mean cross-entropy plus `l2 / 2 * ||W||_F^2` over the whole data set.
fn objective(params: &Params<'_>, xs: &[&[f64]], ys: &[usize], l2: f64) -> f64 {
    let mut loss = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let s = params.scores(x);
        let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + s.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - s[y];
    }
    loss / xs.len() as f64 + 0.5 * l2 * params.weights.norm_squared()
}

/// Multinomial logistic regression. Parameters start at zero; each epoch
/// visits the data in a seeded shuffled order, so a run is fully determined
/// by the data and `config`.
pub fn train_classifier(
    data: &[(SentenceRepr, String)],
    config: &TrainConfig,
) -> Result<LinearClassifier> {
    let dim = check_data(data)?;
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut class_labels: Vec<String> = data.iter().map(|(_, l)| l.clone()).collect();
    class_labels.sort();
    class_labels.dedup();
    if class_labels.len() < 2 {
        return Err(Error::SingleClass(class_labels[0].clone()));
    }
    let index: BTreeMap<&str, usize> = class_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let xs: Vec<&[f64]> = data.iter().map(|(r, _)| r.vector.as_slice()).collect();
    let ys: Vec<usize> = data.iter().map(|(_, l)| index[l.as_str()]).collect();
    let k = class_labels.len();

    let mut weights = DMatrix::<f64>::zeros(dim, k);
    let mut bias = DVector::<f64>::zeros(k);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut loss_history = Vec::with_capacity(config.epochs);

    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad_w = DMatrix::<f64>::zeros(dim, k);
            let mut grad_b = DVector::<f64>::zeros(k);
            let params = Params {
                weights: &weights,
                bias: &bias,
            };
            for &n in batch {
                let mut p = params.scores(xs[n]);
                softmax_in_place(&mut p);
                p[ys[n]] -= 1.0;
                for (i, &xi) in xs[n].iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (c, &pc) in p.iter().enumerate() {
                        grad_w[(i, c)] += xi * pc;
                    }
                }
                for (c, &pc) in p.iter().enumerate() {
                    grad_b[c] += pc;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad_w *= scale;
            grad_b *= scale;
            grad_w += &weights * config.l2;
            weights -= grad_w * config.learning_rate;
            bias -= grad_b * config.learning_rate;
        }
        let params = Params {
            weights: &weights,
            bias: &bias,
        };
        loss_history.push(objective(&params, &xs, &ys, config.l2));
    }

    let final_loss = match loss_history.last() {
        Some(&l) => l,
        None => objective(
            &Params {
                weights: &weights,
                bias: &bias,
            },
            &xs,
            &ys,
            config.l2,
        ),
    };
    Ok(LinearClassifier {
        weights,
        bias,
        class_labels,
        meta: TrainingMeta {
            config: *config,
            final_loss,
            loss_history,
        },
        centroids: None,
        input: None,
    })
}

impl LinearClassifier {
    pub fn dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Class index with the highest score; ties go to the earliest class.
    pub fn predict_index(&self, x: &[f64]) -> usize {
        let scores = Params {
            weights: &self.weights,
            bias: &self.bias,
        }
        .scores(x);
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn predict(&self, x: &[f64]) -> &str {
        &self.class_labels[self.predict_index(x)]
    }

    pub fn save(&self, base: &Path) -> Result<()> {
        let manifest = json!({
            "kind": "linear_classifier",
            "input_dim": self.dim(),
            "class_labels": self.class_labels,
            "training": self.meta,
            "centroids": self.centroids,
            "input": self.input,
            "layout": "f64 little-endian; weights row-major [input_dim x num_classes], then bias [num_classes]",
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
                .ok_or_else(|| Error::invariant("classifier manifest", format!("missing {k:?}")))
        };
        let dim: usize = serde_json::from_value(field("input_dim")?)?;
        let class_labels: Vec<String> = serde_json::from_value(field("class_labels")?)?;
        let k = class_labels.len();
        let params = persist::decode_f64s(&blob, dim * k + k, "classifier blob")?;
        Ok(LinearClassifier {
            weights: DMatrix::from_row_slice(dim, k, &params[..dim * k]),
            bias: DVector::from_column_slice(&params[dim * k..]),
            class_labels,
            meta: serde_json::from_value(field("training")?)?,
            centroids: serde_json::from_value(m.get("centroids").cloned().unwrap_or_default())?,
            input: serde_json::from_value(m.get("input").cloned().unwrap_or_default())?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub total: usize,
    pub per_language: BTreeMap<String, f64>,
    /// `confusion[gold][predicted]`, indexed like `class_labels`.
    pub confusion: Vec<Vec<usize>>,
}

pub fn evaluate_classifier(
    clf: &LinearClassifier,
    data: &[(SentenceRepr, String)],
) -> Result<Evaluation> {
    let dim = check_data(data)?;
    if dim != clf.dim() {
        return Err(Error::dims("classifier input", clf.dim(), dim));
    }
    let k = clf.class_labels.len();
    let index: BTreeMap<&str, usize> = clf
        .class_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();
    let mut confusion = vec![vec![0usize; k]; k];
    for (r, label) in data {
        let gold = *index
            .get(label.as_str())
            .ok_or_else(|| Error::UnknownLabel(label.clone()))?;
        confusion[gold][clf.predict_index(&r.vector)] += 1;
    }
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_language = clf
        .class_labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| {
            let n: usize = confusion[i].iter().sum();
            (n > 0).then(|| (l.clone(), confusion[i][i] as f64 / n as f64))
        })
        .collect();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        total: data.len(),
        per_language,
        confusion,
    })
}
