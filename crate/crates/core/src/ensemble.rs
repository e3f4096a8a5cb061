//! Ensemble expanding-stage variant and the shared logistic-regression solver.
//!
//! Two one-vs-rest L2-regularized logistic models are fitted independently,
//! one on the C-stage scores `z_s` and one on `[z_s | x_a]`. Their combination
//! weights come from k-fold cross validation over an 11-point grid.

use log::warn;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{accuracy, fold_splits};
use crate::linalg;
use crate::model::{argmax_decode, Batch, CStageModel, LabelMatrix, Stage};
use crate::unified::{build_stacked, StackedTrainSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Required Euclidean norm of the gradient at the returned point.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-6,
            max_iter: 500,
        }
    }
}

/// `log(1 + exp(z))` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_problem(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>, alpha: f64) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::Schema(
            "logistic regression needs at least one instance".into(),
        ));
    }
    if x.nrows() != y.len() {
        return Err(Error::Schema(format!(
            "{} instances but {} labels",
            x.nrows(),
            y.len()
        )));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Parameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::Schema("binary labels must be +1 or -1".into()));
    }
    Ok(())
}

/// `½ vᵀv + α Σ log(1 + exp(-y_j x_j v))`.
pub fn logistic_objective(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    alpha: f64,
    v: ArrayView1<'_, f64>,
) -> f64 {
    let margins = x.dot(&v);
    let loss: f64 = margins
        .iter()
        .zip(y.iter())
        .map(|(m, yy)| softplus(-yy * m))
        .sum();
    0.5 * v.dot(&v) + alpha * loss
}

pub fn logistic_gradient(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    alpha: f64,
    v: ArrayView1<'_, f64>,
) -> Array1<f64> {
    let margins = x.dot(&v);
    let coef: Array1<f64> = margins
        .iter()
        .zip(y.iter())
        .map(|(m, yy)| -alpha * yy * sigmoid(-yy * m))
        .collect();
    &v + &x.t().dot(&coef)
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Minimizes the L2-regularized logistic objective from `v = 0`.
pub fn train_logistic(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    alpha: f64,
    opts: SolverOptions,
) -> Result<Array1<f64>> {
    train_logistic_from(x, y, alpha, opts, Array1::zeros(x.ncols()))
}

/// Damped Newton iterations from `start` until `‖∇f‖ ≤ tol`.
pub fn train_logistic_from(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    alpha: f64,
    opts: SolverOptions,
    start: Array1<f64>,
) -> Result<Array1<f64>> {
    check_problem(x, y, alpha)?;
    if start.len() != x.ncols() {
        return Err(Error::Schema(format!(
            "start vector has length {}, expected {}",
            start.len(),
            x.ncols()
        )));
    }
    let d = x.ncols();
    let mut v = start;
    let mut f = logistic_objective(x, y, alpha, v.view());
    let mut g = logistic_gradient(x, y, alpha, v.view());
    for _ in 0..opts.max_iter {
        let gnorm = norm(&g);
        if gnorm <= opts.tol {
            return Ok(v);
        }
        let margins = x.dot(&v);
        let curvature: Array1<f64> = margins
            .iter()
            .map(|&m| {
                let p = sigmoid(m);
                alpha * p * (1.0 - p)
            })
            .collect();
        let weighted = &x * &curvature.view().insert_axis(Axis(1));
        let mut hessian = x.t().dot(&weighted);
        for i in 0..d {
            hessian[[i, i]] += 1.0;
        }
        let neg_g = (-&g).insert_axis(Axis(1));
        let step = linalg::solve_spd(hessian.view(), neg_g.view())?.remove_axis(Axis(1));
        let slope = g.dot(&step);

        // Armijo backtracking. Near the optimum the decrease falls below the
        // rounding of `f`; there a step is accepted if it stays within that
        // rounding and shrinks the gradient.
        let f_noise = 64.0 * f64::EPSILON * f.abs().max(1.0);
        let mut t = 1.0;
        let mut accepted = None;
        while t >= 1e-12 {
            let cand = &v + &(&step * t);
            let fc = logistic_objective(x, y, alpha, cand.view());
            if fc <= f + 1e-4 * t * slope {
                accepted = Some((cand, fc, None));
                break;
            }
            if fc <= f + f_noise {
                let gc = logistic_gradient(x, y, alpha, cand.view());
                if norm(&gc) < gnorm {
                    accepted = Some((cand, fc, Some(gc)));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((next, fnext, gnext)) = accepted else {
            return Err(Error::Solver(format!(
                "line search failed at gradient norm {gnorm:e}"
            )));
        };
        v = next;
        f = fnext;
        g = gnext.unwrap_or_else(|| logistic_gradient(x, y, alpha, v.view()));
    }
    let gnorm = norm(&g);
    if gnorm <= opts.tol {
        Ok(v)
    } else {
        Err(Error::Solver(format!(
            "gradient norm {gnorm:e} after {} iterations",
            opts.max_iter
        )))
    }
}

/// One-vs-rest logistic model. Column `l` of `weights` scores class `l`.
/// A training set with a single class yields a constant classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Array2<f64>,
    pub constant_class: Option<usize>,
}

impl LogisticModel {
    pub fn classes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn input_width(&self) -> usize {
        self.weights.nrows()
    }

    fn check_width(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(Error::Schema(format!(
                "input width {} does not match model width {}",
                x.ncols(),
                self.input_width()
            )));
        }
        Ok(())
    }

    /// Linear scores `x v_l` (±1 for a constant classifier).
    pub fn margins(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(x)?;
        Ok(match self.constant_class {
            Some(k) => {
                Array2::from_shape_fn(
                    (x.nrows(), self.classes()),
                    |(_, l)| {
                        if l == k {
                            1.0
                        } else {
                            -1.0
                        }
                    },
                )
            }
            None => x.dot(&self.weights),
        })
    }

    /// Per-class logistic probabilities `σ(x v_l)`.
    pub fn probabilities(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_width(x)?;
        Ok(match self.constant_class {
            Some(k) => {
                Array2::from_shape_fn(
                    (x.nrows(), self.classes()),
                    |(_, l)| {
                        if l == k {
                            1.0
                        } else {
                            0.0
                        }
                    },
                )
            }
            None => x.dot(&self.weights).mapv(sigmoid),
        })
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        argmax_decode(self.margins(x)?.view())
    }
}

/// One binary logistic problem per class, class `l` against the rest.
pub fn train_ovr(
    x: ArrayView2<'_, f64>,
    y: &LabelMatrix,
    alpha: f64,
    opts: SolverOptions,
) -> Result<LogisticModel> {
    let c = y.classes();
    if c < 2 {
        return Err(Error::Schema(
            "one-vs-rest needs at least two classes".into(),
        ));
    }
    if x.nrows() != y.rows() {
        return Err(Error::Schema(format!(
            "{} instances but {} labels",
            x.nrows(),
            y.rows()
        )));
    }
    let present = y.present_classes();
    if present.len() == 1 {
        warn!(
            "training set contains only class {}; using a constant classifier",
            present[0]
        );
        return Ok(LogisticModel {
            weights: Array2::zeros((x.ncols(), c)),
            constant_class: Some(present[0]),
        });
    }
    let mut weights = Array2::zeros((x.ncols(), c));
    for class in 0..c {
        let v = train_logistic(x, y.signed(class).view(), alpha, opts)?;
        weights.column_mut(class).assign(&v);
    }
    Ok(LogisticModel {
        weights,
        constant_class: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combination {
    /// `w1 σ(z_s v_s,l) + w2 σ(z̄ v̄_l)`
    Probability,
    /// `w1 z_s v_s,l + w2 z̄ v̄_l`
    Score,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub f_s: LogisticModel,
    pub f_bar: LogisticModel,
    pub w1: f64,
    pub w2: f64,
    pub combination: Combination,
}

/// CV accuracy for every candidate `w1`.
#[derive(Debug, Clone)]
pub struct EnsembleFit {
    pub model: EnsembleModel,
    pub cv_scores: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleOptions {
    pub alpha1: f64,
    pub alpha2: f64,
    pub folds: usize,
    pub combination: Combination,
    pub solver: SolverOptions,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            alpha1: 1.0,
            alpha2: 1.0,
            folds: 5,
            combination: Combination::Probability,
            solver: SolverOptions::default(),
        }
    }
}

/// `w1 ∈ {0, 0.1, …, 1}`.
pub fn weight_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

fn combine(
    f_s: &LogisticModel,
    f_bar: &LogisticModel,
    z_s: ArrayView2<'_, f64>,
    z_bar: ArrayView2<'_, f64>,
    w1: f64,
    combination: Combination,
) -> Result<Array2<f64>> {
    let (a, b) = match combination {
        Combination::Probability => (f_s.probabilities(z_s)?, f_bar.probabilities(z_bar)?),
        Combination::Score => (f_s.margins(z_s)?, f_bar.margins(z_bar)?),
    };
    Ok(a * w1 + b * (1.0 - w1))
}

/// Fits both classifiers on all of `data` and picks `w1` by k-fold CV.
/// Ties go to the smaller `w1`, favouring the classifier with augmented features.
pub fn train_ensemble(data: &StackedTrainSet, opts: EnsembleOptions) -> Result<EnsembleFit> {
    let n = data.rows();
    if opts.folds < 2 || opts.folds > n {
        return Err(Error::Parameter(format!(
            "need 2 <= folds <= n, got folds = {} with n = {n}",
            opts.folds
        )));
    }
    let grid = weight_grid();
    let mut totals = vec![0.0; grid.len()];
    for (train, test) in fold_splits(n, opts.folds) {
        let tr = data.select(&train);
        let te = data.select(&test);
        let f_s = train_ovr(tr.z_s.view(), &tr.y, opts.alpha1, opts.solver)?;
        let f_bar = train_ovr(tr.z_bar.view(), &tr.y, opts.alpha2, opts.solver)?;
        for (slot, &w1) in totals.iter_mut().zip(&grid) {
            let scores = combine(
                &f_s,
                &f_bar,
                te.z_s.view(),
                te.z_bar.view(),
                w1,
                opts.combination,
            )?;
            *slot += accuracy(&argmax_decode(scores.view())?, te.y.labels());
        }
    }
    let cv_scores: Vec<(f64, f64)> = grid
        .iter()
        .zip(&totals)
        .map(|(&w1, &t)| (w1, t / opts.folds as f64))
        .collect();
    let mut best = 0;
    for (i, &(_, acc)) in cv_scores.iter().enumerate() {
        if acc > cv_scores[best].1 {
            best = i;
        }
    }
    let w1 = cv_scores[best].0;
    let f_s = train_ovr(data.z_s.view(), &data.y, opts.alpha1, opts.solver)?;
    let f_bar = train_ovr(data.z_bar.view(), &data.y, opts.alpha2, opts.solver)?;
    Ok(EnsembleFit {
        model: EnsembleModel {
            f_s,
            f_bar,
            w1,
            w2: 1.0 - w1,
            combination: opts.combination,
        },
        cv_scores,
    })
}

pub fn ensemble_scores(
    z_s: ArrayView2<'_, f64>,
    z_bar: ArrayView2<'_, f64>,
    model: &EnsembleModel,
) -> Result<Array2<f64>> {
    if !(model.w1 >= 0.0 && model.w2 >= 0.0 && (model.w1 + model.w2 - 1.0).abs() <= 1e-12) {
        return Err(Error::Parameter(format!(
            "ensemble weights ({}, {}) are not on the simplex",
            model.w1, model.w2
        )));
    }
    let (a, b) = match model.combination {
        Combination::Probability => (
            model.f_s.probabilities(z_s)?,
            model.f_bar.probabilities(z_bar)?,
        ),
        Combination::Score => (model.f_s.margins(z_s)?, model.f_bar.margins(z_bar)?),
    };
    Ok(a * model.w1 + b * model.w2)
}

pub fn predict_ensemble(
    batch: &Batch,
    cmodel: &CStageModel,
    model: &EnsembleModel,
) -> Result<Vec<usize>> {
    if batch.stage != Stage::Expand {
        return Err(Error::Schema("expected an E-stage batch".into()));
    }
    let stacked = build_stacked(batch, cmodel)?;
    argmax_decode(ensemble_scores(stacked.z_s.view(), stacked.z_bar.view(), model)?.view())
}
