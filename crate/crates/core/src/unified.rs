//! Unified expanding-stage trainer.
//!
//! The C-stage survived-feature classifier turns `x_s` into scores `Z`,
//! which are stacked with the augmented features as `Z̄ = [Z | x_a]`. A joint
//! square-loss model
//!
//! ```text
//! ‖Z Vs + Z̄ V̄ − Y‖² + γ (‖Vs‖² / (c w1) + ‖V̄‖² / ((c + d_a) w2)),   w1 + w2 = 1
//! ```
//!
//! is fitted by alternating an exact solve over the coefficients with the
//! closed-form weight update. Each half-step is an exact block minimization,
//! so the objective never increases.
//!
//! The coefficients kept here are those of the weight-absorbed form above.
//! They relate to the `√w`-scaled predictor `√w1 Z Us + √w2 Z̄ Ū` through
//! `Vs = √w1 Us`, `V̄ = √w2 Ū`.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::cstage::compress;
use crate::error::{Error, Result};
use crate::linalg::{self, frobenius_norm};
use crate::model::{
    argmax_decode, validate_batch, Batch, CStageModel, EStageModel, FeatureSchema, LabelMatrix,
    Stage,
};

/// Weights entering the coefficient solve are clamped to `[floor, 1 - floor]`.
pub const WEIGHT_FLOOR: f64 = 1e-8;

/// E-stage training data in stacked form.
#[derive(Debug, Clone)]
pub struct StackedTrainSet {
    pub schema: FeatureSchema,
    /// `n × c`
    pub z_s: Array2<f64>,
    /// `n × (c + d_a)`; the first `c` columns are `z_s`.
    pub z_bar: Array2<f64>,
    pub y: LabelMatrix,
}

impl StackedTrainSet {
    pub fn rows(&self) -> usize {
        self.y.rows()
    }

    pub fn select(&self, rows: &[usize]) -> StackedTrainSet {
        StackedTrainSet {
            schema: self.schema,
            z_s: self.z_s.select(Axis(0), rows),
            z_bar: self.z_bar.select(Axis(0), rows),
            y: self.y.select(rows),
        }
    }
}

fn stack_features(batch: &Batch, cmodel: &CStageModel) -> Result<(Array2<f64>, Array2<f64>)> {
    if batch.stage != Stage::Expand {
        return Err(Error::Schema("expected an E-stage batch".into()));
    }
    validate_batch(batch, &cmodel.schema)?;
    let z_s = compress(batch.x_s.view(), cmodel)?;
    let z_bar = concatenate![Axis(1), z_s, batch.x_a_or_empty()];
    Ok((z_s, z_bar))
}

/// Replaces `x_s` by its C-stage scores and appends the augmented block.
pub fn build_stacked(batch: &Batch, cmodel: &CStageModel) -> Result<StackedTrainSet> {
    let (z_s, z_bar) = stack_features(batch, cmodel)?;
    Ok(StackedTrainSet {
        schema: cmodel.schema,
        z_s,
        z_bar,
        y: batch.y.clone(),
    })
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!(
            "gamma must be positive, got {gamma}"
        )))
    }
}

/// Exact minimizer over `(v_s, v_bar)` for fixed weights.
pub fn update_coefficients(
    data: &StackedTrainSet,
    w1: f64,
    w2: f64,
    gamma: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    solve_coefficients(
        &data.schema,
        data.z_s.view(),
        data.z_bar.view(),
        data.y.matrix().view(),
        w1,
        w2,
        gamma,
    )
}

fn solve_coefficients(
    schema: &FeatureSchema,
    z_s: ArrayView2<'_, f64>,
    z_bar: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    w1: f64,
    w2: f64,
    gamma: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    check_gamma(gamma)?;
    if !(w1 > 0.0 && w2 > 0.0) {
        return Err(Error::Parameter(format!(
            "weights must be positive in the coefficient update, got ({w1}, {w2})"
        )));
    }
    let c = schema.classes;
    let wide = schema.stacked_width();
    let joint = concatenate![Axis(1), z_s, z_bar];
    let mut gram = joint.t().dot(&joint);
    let reg_s = gamma / (c as f64 * w1);
    let reg_bar = gamma / (wide as f64 * w2);
    for i in 0..c {
        gram[[i, i]] += reg_s;
    }
    for i in c..(c + wide) {
        gram[[i, i]] += reg_bar;
    }
    let rhs = joint.t().dot(&targets);
    let v = linalg::solve_spd(gram.view(), rhs.view())?;
    Ok((
        v.slice(s![..c, ..]).to_owned(),
        v.slice(s![c.., ..]).to_owned(),
    ))
}

/// Closed-form simplex weights for fixed coefficients: proportional to
/// `‖v_s‖/√c` and `‖v_bar‖/√(c + d_a)`. All-zero coefficients give `(1/2, 1/2)`.
pub fn update_weights(
    v_s: ArrayView2<'_, f64>,
    v_bar: ArrayView2<'_, f64>,
    schema: &FeatureSchema,
) -> (f64, f64) {
    let r1 = frobenius_norm(v_s) / (schema.classes as f64).sqrt();
    let r2 = frobenius_norm(v_bar) / (schema.stacked_width() as f64).sqrt();
    let total = r1 + r2;
    if total == 0.0 {
        return (0.5, 0.5);
    }
    let w1 = r1 / total;
    (w1, 1.0 - w1)
}

fn weighted_penalty(norm_sq: f64, width: usize, w: f64) -> Result<f64> {
    if norm_sq == 0.0 {
        Ok(0.0)
    } else if w > 0.0 {
        Ok(norm_sq / (width as f64 * w))
    } else {
        Err(Error::Numeric(
            "zero weight on a nonzero coefficient block gives an infinite penalty".into(),
        ))
    }
}

/// Joint objective at `model`. A zero weight is allowed only on an all-zero block.
pub fn objective_value(data: &StackedTrainSet, model: &EStageModel, gamma: f64) -> Result<f64> {
    let residual = data.z_s.dot(&model.v_s) + data.z_bar.dot(&model.v_bar) - data.y.matrix();
    let fit: f64 = residual.iter().map(|r| r * r).sum();
    let ns: f64 = model.v_s.iter().map(|v| v * v).sum();
    let nb: f64 = model.v_bar.iter().map(|v| v * v).sum();
    let penalty = weighted_penalty(ns, data.schema.classes, model.w1)?
        + weighted_penalty(nb, data.schema.stacked_width(), model.w2)?;
    Ok(fit + gamma * penalty)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    /// Stop when the relative objective decrease falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

/// Trained model plus the objective after every iteration.
#[derive(Debug, Clone)]
pub struct UnifiedTrainerState {
    pub model: EStageModel,
    pub objectives: Vec<f64>,
    pub converged: bool,
}

impl UnifiedTrainerState {
    pub fn iterations(&self) -> usize {
        self.objectives.len()
    }

    pub fn objective(&self) -> f64 {
        self.objectives.last().copied().unwrap_or(f64::NAN)
    }
}

fn clamp_weight(w: f64) -> f64 {
    w.clamp(WEIGHT_FLOOR, 1.0 - WEIGHT_FLOOR)
}

/// Alternates the coefficient solve and the weight update from `w1 = w2 = 1/2`.
pub fn train_unified(
    data: &StackedTrainSet,
    gamma: f64,
    opts: TrainOptions,
) -> Result<UnifiedTrainerState> {
    check_gamma(gamma)?;
    if data.rows() == 0 {
        return Err(Error::Schema("empty E-stage training set".into()));
    }
    if opts.max_iter == 0 {
        return Err(Error::Parameter("max_iter must be at least 1".into()));
    }
    let mut model = EStageModel::zeros(data.schema);
    let mut objectives: Vec<f64> = Vec::new();
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let (v_s, v_bar) =
            update_coefficients(data, clamp_weight(model.w1), clamp_weight(model.w2), gamma)?;
        let (w1, w2) = update_weights(v_s.view(), v_bar.view(), &data.schema);
        model = EStageModel {
            schema: data.schema,
            v_s,
            v_bar,
            w1,
            w2,
        };
        let obj = objective_value(data, &model, gamma)?;
        if !obj.is_finite() {
            return Err(Error::Numeric(format!("objective became {obj}")));
        }
        let prev = objectives.last().copied();
        objectives.push(obj);
        if let Some(prev) = prev {
            if (prev - obj) <= opts.tol * prev.abs().max(f64::MIN_POSITIVE) {
                converged = true;
                break;
            }
        }
    }
    Ok(UnifiedTrainerState {
        model,
        objectives,
        converged,
    })
}

/// Score matrix `√w1 Z Us + √w2 Z̄ Ū`, evaluated through the absorbed
/// coefficients. A block with zero weight contributes nothing.
pub fn unified_scores(
    z_s: ArrayView2<'_, f64>,
    z_bar: ArrayView2<'_, f64>,
    model: &EStageModel,
) -> Result<Array2<f64>> {
    model.validate()?;
    if z_s.ncols() != model.v_s.nrows() || z_bar.ncols() != model.v_bar.nrows() {
        return Err(Error::Schema(format!(
            "stacked widths ({}, {}) do not match model ({}, {})",
            z_s.ncols(),
            z_bar.ncols(),
            model.v_s.nrows(),
            model.v_bar.nrows()
        )));
    }
    let mut scores = Array2::zeros((z_s.nrows(), model.schema.classes));
    if model.w1 > 0.0 {
        scores += &z_s.dot(&model.v_s);
    }
    if model.w2 > 0.0 {
        scores += &z_bar.dot(&model.v_bar);
    }
    Ok(scores)
}

/// Predicts classes for an evolved E-stage batch.
pub fn predict_unified(
    batch: &Batch,
    cmodel: &CStageModel,
    emodel: &EStageModel,
) -> Result<Vec<usize>> {
    let (z_s, z_bar) = stack_features(batch, cmodel)?;
    argmax_decode(unified_scores(z_s.view(), z_bar.view(), emodel)?.view())
}
