//! Shared data model: feature partitions, batches, labels and model containers.

use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Widths of the vanished, survived and augmented partitions plus the class count.
///
/// The compressing stage sees `[vanished | survived]`, the expanding stage
/// sees `[survived | augmented]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub d_v: usize,
    pub d_s: usize,
    pub d_a: usize,
    pub classes: usize,
}

impl FeatureSchema {
    pub fn new(d_v: usize, d_s: usize, d_a: usize, classes: usize) -> Result<Self> {
        let schema = FeatureSchema {
            d_v,
            d_s,
            d_a,
            classes,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_s == 0 {
            return Err(Error::Schema(
                "at least one survived feature is required".into(),
            ));
        }
        if self.classes < 2 {
            return Err(Error::Schema(format!(
                "class count must be at least 2, got {}",
                self.classes
            )));
        }
        Ok(())
    }

    /// Width of a C-stage instance, `d_v + d_s`.
    pub fn cstage_width(&self) -> usize {
        self.d_v + self.d_s
    }

    /// Width of an E-stage instance, `d_s + d_a`.
    pub fn estage_width(&self) -> usize {
        self.d_s + self.d_a
    }

    /// Dimension of the C-stage sufficient statistics, `d_v + 2 d_s`.
    pub fn stats_dim(&self) -> usize {
        self.d_v + 2 * self.d_s
    }

    /// Width of the stacked E-stage representation `[z_s | x_a]`.
    pub fn stacked_width(&self) -> usize {
        self.classes + self.d_a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Compressing stage: vanished and survived features.
    Compress,
    /// Expanding stage: survived and augmented features.
    Expand,
}

/// One-hot label block, one row per instance.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    one_hot: Array2<f64>,
    labels: Vec<usize>,
}

/// Builds the one-hot matrix for `labels` over `classes` classes.
pub fn one_hot_encode(labels: &[usize], classes: usize) -> Result<LabelMatrix> {
    let mut one_hot = Array2::zeros((labels.len(), classes));
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Schema(format!(
                "label {label} at row {row} is outside [0, {classes})"
            )));
        }
        one_hot[[row, label]] = 1.0;
    }
    Ok(LabelMatrix {
        one_hot,
        labels: labels.to_vec(),
    })
}

impl LabelMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.one_hot
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn classes(&self) -> usize {
        self.one_hot.ncols()
    }

    /// `+1` for instances of `class`, `-1` otherwise.
    pub fn signed(&self, class: usize) -> Array1<f64> {
        self.labels
            .iter()
            .map(|&l| if l == class { 1.0 } else { -1.0 })
            .collect()
    }

    /// Classes that occur at least once, ascending.
    pub fn present_classes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.classes()];
        for &l in &self.labels {
            seen[l] = true;
        }
        (0..seen.len()).filter(|&k| seen[k]).collect()
    }

    pub fn select(&self, rows: &[usize]) -> LabelMatrix {
        LabelMatrix {
            one_hot: self.one_hot.select(Axis(0), rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }
}

/// Per row, the smallest column index attaining the row maximum.
pub fn argmax_decode(scores: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    if scores.ncols() == 0 {
        return Err(Error::Schema("score matrix has no columns".into()));
    }
    scores
        .outer_iter()
        .enumerate()
        .map(|(row, values)| {
            let mut best = 0;
            for (k, &v) in values.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite score {v} at ({row}, {k})"
                    )));
                }
                if v > values[best] {
                    best = k;
                }
            }
            Ok(best)
        })
        .collect()
}

/// One mini-batch. `x_v` is present only in the compressing stage and
/// `x_a` only in the expanding stage.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub stage: Stage,
    pub x_v: Option<Array2<f64>>,
    pub x_s: Array2<f64>,
    pub x_a: Option<Array2<f64>>,
    pub y: LabelMatrix,
}

impl Batch {
    pub fn compress(x_v: Array2<f64>, x_s: Array2<f64>, y: LabelMatrix) -> Self {
        Batch {
            stage: Stage::Compress,
            x_v: Some(x_v),
            x_s,
            x_a: None,
            y,
        }
    }

    pub fn expand(x_s: Array2<f64>, x_a: Array2<f64>, y: LabelMatrix) -> Self {
        Batch {
            stage: Stage::Expand,
            x_v: None,
            x_s,
            x_a: Some(x_a),
            y,
        }
    }

    pub fn rows(&self) -> usize {
        self.x_s.nrows()
    }

    /// `[x_v | x_s]`; an absent vanished block counts as zero-width.
    pub fn x_tilde(&self) -> Array2<f64> {
        match &self.x_v {
            Some(x_v) => concatenate![Axis(1), *x_v, self.x_s],
            None => self.x_s.clone(),
        }
    }

    /// `[x_s | x_a]`; an absent augmented block counts as zero-width.
    pub fn x_bar(&self) -> Array2<f64> {
        match &self.x_a {
            Some(x_a) => concatenate![Axis(1), self.x_s, *x_a],
            None => self.x_s.clone(),
        }
    }

    pub fn x_a_or_empty(&self) -> Array2<f64> {
        match &self.x_a {
            Some(x_a) => x_a.clone(),
            None => Array2::zeros((self.rows(), 0)),
        }
    }

    /// A new batch holding only `rows`, in the given order.
    pub fn select(&self, rows: &[usize]) -> Batch {
        Batch {
            stage: self.stage,
            x_v: self.x_v.as_ref().map(|m| m.select(Axis(0), rows)),
            x_s: self.x_s.select(Axis(0), rows),
            x_a: self.x_a.as_ref().map(|m| m.select(Axis(0), rows)),
            y: self.y.select(rows),
        }
    }
}

fn check_block(name: &str, block: &Array2<f64>, rows: usize, width: usize) -> Result<()> {
    if block.nrows() != rows {
        return Err(Error::Schema(format!(
            "{name} has {} rows, expected {rows}",
            block.nrows()
        )));
    }
    if block.ncols() != width {
        return Err(Error::Schema(format!(
            "{name} has width {}, schema requires {width}",
            block.ncols()
        )));
    }
    Ok(())
}

/// Checks every block of `batch` against `schema`.
pub fn validate_batch(batch: &Batch, schema: &FeatureSchema) -> Result<()> {
    schema.validate()?;
    let n = batch.y.rows();
    if n == 0 {
        return Err(Error::Schema("batch has no instances".into()));
    }
    if batch.y.classes() != schema.classes {
        return Err(Error::Schema(format!(
            "label matrix has {} classes, schema requires {}",
            batch.y.classes(),
            schema.classes
        )));
    }
    check_block("x_s", &batch.x_s, n, schema.d_s)?;
    match batch.stage {
        Stage::Compress => {
            if batch.x_a.is_some() {
                return Err(Error::Schema(
                    "C-stage batch must not carry an augmented block".into(),
                ));
            }
            match &batch.x_v {
                Some(x_v) => check_block("x_v", x_v, n, schema.d_v)?,
                None if schema.d_v == 0 => {}
                None => {
                    return Err(Error::Schema(format!(
                        "C-stage batch lacks the vanished block (d_v = {})",
                        schema.d_v
                    )))
                }
            }
        }
        Stage::Expand => {
            if batch.x_v.is_some() {
                return Err(Error::Schema(
                    "E-stage batch must not carry a vanished block".into(),
                ));
            }
            match &batch.x_a {
                Some(x_a) => check_block("x_a", x_a, n, schema.d_a)?,
                None if schema.d_a == 0 => {}
                None => {
                    return Err(Error::Schema(format!(
                        "E-stage batch lacks the augmented block (d_a = {})",
                        schema.d_a
                    )))
                }
            }
        }
    }
    if !batch
        .x_s
        .iter()
        .chain(batch.x_v.iter().flatten())
        .chain(batch.x_a.iter().flatten())
        .all(|v| v.is_finite())
    {
        return Err(Error::Numeric("batch contains non-finite features".into()));
    }
    Ok(())
}

/// Learner hyperparameters. `lambda` weighs the consistency term, `rho` and
/// `gamma` are the C-stage and E-stage ridge strengths, `alpha1`/`alpha2`
/// weigh the logistic losses of the ensemble variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lambda: f64,
    pub rho: f64,
    pub gamma: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            lambda: 1.0,
            rho: 0.1,
            gamma: 1.0,
            alpha1: 1.0,
            alpha2: 1.0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("rho", self.rho),
            ("gamma", self.gamma),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!(
                    "{name} must be a positive finite number, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Coupled C-stage classifiers: `w_tilde` over `[x_v | x_s]`, `w_s` over `x_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CStageModel {
    pub schema: FeatureSchema,
    pub w_tilde: Array2<f64>,
    pub w_s: Array2<f64>,
}

impl CStageModel {
    pub fn zeros(schema: FeatureSchema) -> Self {
        CStageModel {
            schema,
            w_tilde: Array2::zeros((schema.cstage_width(), schema.classes)),
            w_s: Array2::zeros((schema.d_s, schema.classes)),
        }
    }

    /// Splits a stacked `[w_tilde; w_s]` coefficient matrix.
    pub fn from_stacked(schema: FeatureSchema, stacked: &Array2<f64>) -> Result<Self> {
        if stacked.dim() != (schema.stats_dim(), schema.classes) {
            return Err(Error::Schema(format!(
                "stacked coefficients are {:?}, expected {:?}",
                stacked.dim(),
                (schema.stats_dim(), schema.classes)
            )));
        }
        let split = schema.cstage_width();
        Ok(CStageModel {
            schema,
            w_tilde: stacked.slice(s![..split, ..]).to_owned(),
            w_s: stacked.slice(s![split.., ..]).to_owned(),
        })
    }
}

/// Unified E-stage model. `v_s` and `v_bar` are the coefficients of the
/// weight-absorbed objective; `w1`, `w2` lie on the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EStageModel {
    pub schema: FeatureSchema,
    pub v_s: Array2<f64>,
    pub v_bar: Array2<f64>,
    pub w1: f64,
    pub w2: f64,
}

impl EStageModel {
    pub fn zeros(schema: FeatureSchema) -> Self {
        EStageModel {
            schema,
            v_s: Array2::zeros((schema.classes, schema.classes)),
            v_bar: Array2::zeros((schema.stacked_width(), schema.classes)),
            w1: 0.5,
            w2: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.schema.classes;
        if self.v_s.dim() != (c, c) {
            return Err(Error::Schema(format!(
                "v_s is {:?}, expected ({c}, {c})",
                self.v_s.dim()
            )));
        }
        if self.v_bar.dim() != (self.schema.stacked_width(), c) {
            return Err(Error::Schema(format!(
                "v_bar is {:?}, expected ({}, {c})",
                self.v_bar.dim(),
                self.schema.stacked_width()
            )));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0 && ((self.w1 + self.w2) - 1.0).abs() <= 1e-12) {
            return Err(Error::Parameter(format!(
                "weights ({}, {}) are not on the simplex",
                self.w1, self.w2
            )));
        }
        Ok(())
    }
}

/// Writes a model as JSON. Matrices are stored row-major with their shape
/// and floats round-trip exactly.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}
