//! Compressing stage: one-pass sufficient statistics for the coupled ridge
//! problem over `[x_v | x_s]` and `x_s`, and its exact solution.
//!
//! With `X̃ = [x_v | x_s]` the statistics are
//!
//! ```text
//! A = ρI + Σ [[(1+λ) X̃ᵀX̃,  -λ X̃ᵀXs ],
//!             [-λ XsᵀX̃,     (1+λ) XsᵀXs]]
//! B = Σ [X̃ᵀ; Xsᵀ] Y
//! ```
//!
//! and `A [W̃; Ws] = B` gives the optimum after any prefix of the stream.
//! `Direct` keeps `A` and factors it on demand; `Inverse` keeps `A⁻¹` and
//! applies a rank-3n Woodbury correction per batch.

use std::fs;
use std::path::Path;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky};
use crate::model::{validate_batch, Batch, CStageModel, FeatureSchema, Hyperparams, Stage};

/// Above this statistics dimension the CLI switches to the inverse path.
pub const DIRECT_MODE_MAX_DIM: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccumulationMode {
    /// Accumulate `A` and solve once when a model is requested.
    Direct,
    /// Accumulate `A⁻¹` through Woodbury updates.
    Inverse,
}

impl AccumulationMode {
    pub fn for_schema(schema: &FeatureSchema) -> Self {
        if schema.stats_dim() <= DIRECT_MODE_MAX_DIM {
            AccumulationMode::Direct
        } else {
            AccumulationMode::Inverse
        }
    }
}

impl std::str::FromStr for AccumulationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(AccumulationMode::Direct),
            "inverse" => Ok(AccumulationMode::Inverse),
            other => Err(Error::Parameter(format!(
                "unknown accumulation mode {other:?} (expected direct or inverse)"
            ))),
        }
    }
}

/// The whole memory of a C-stage pass. Its size depends on the schema only.
#[derive(Debug, Clone, PartialEq)]
pub struct CStageStats {
    schema: FeatureSchema,
    mode: AccumulationMode,
    lambda: f64,
    rho: f64,
    /// `A` in direct mode, `A⁻¹` in inverse mode.
    a: Array2<f64>,
    b: Array2<f64>,
    t: usize,
}

/// The factor `U = [U1, U2, U3]` (m × 3n) with `U Uᵀ` equal to one batch's
/// increment of `A`.
#[derive(Debug, Clone)]
pub struct UpdateBlock {
    u: Array2<f64>,
}

impl UpdateBlock {
    /// `U1 = [X̃ᵀ; 0]`, `U2 = [0; Xsᵀ]`, `U3 = [√λ X̃ᵀ; -√λ Xsᵀ]`.
    pub fn new(x_tilde: ArrayView2<'_, f64>, x_s: ArrayView2<'_, f64>, lambda: f64) -> Self {
        let n = x_tilde.nrows();
        let p = x_tilde.ncols();
        let d_s = x_s.ncols();
        let sl = lambda.sqrt();
        let mut u = Array2::zeros((p + d_s, 3 * n));
        u.slice_mut(s![..p, ..n]).assign(&x_tilde.t());
        u.slice_mut(s![p.., n..2 * n]).assign(&x_s.t());
        u.slice_mut(s![..p, 2 * n..]).assign(&(&x_tilde.t() * sl));
        u.slice_mut(s![p.., 2 * n..]).assign(&(&x_s.t() * -sl));
        UpdateBlock { u }
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.u
    }

    /// `U Uᵀ`.
    pub fn outer(&self) -> Array2<f64> {
        self.u.dot(&self.u.t())
    }
}

/// Increment of `A` contributed by one batch, assembled block by block.
fn direct_increment(
    x_tilde: ArrayView2<'_, f64>,
    x_s: ArrayView2<'_, f64>,
    lambda: f64,
) -> Array2<f64> {
    let p = x_tilde.ncols();
    let m = p + x_s.ncols();
    let tt = x_tilde.t().dot(&x_tilde);
    let ts = x_tilde.t().dot(&x_s);
    let ss = x_s.t().dot(&x_s);
    let mut inc = Array2::zeros((m, m));
    inc.slice_mut(s![..p, ..p]).assign(&(&tt * (1.0 + lambda)));
    inc.slice_mut(s![..p, p..]).assign(&(&ts * -lambda));
    inc.slice_mut(s![p.., ..p]).assign(&(&ts.t() * -lambda));
    inc.slice_mut(s![p.., p..]).assign(&(&ss * (1.0 + lambda)));
    inc
}

impl CStageStats {
    /// `A = ρI` (or `A⁻¹ = I/ρ`), `B = 0`, `t = 0`.
    ///
    /// `lambda = 0` is accepted and decouples the two classifiers.
    pub fn new(schema: FeatureSchema, h: &Hyperparams, mode: AccumulationMode) -> Result<Self> {
        schema.validate()?;
        if !(h.rho > 0.0 && h.rho.is_finite()) {
            return Err(Error::Parameter(format!(
                "rho must be positive for A to be positive definite, got {}",
                h.rho
            )));
        }
        if !(h.lambda >= 0.0 && h.lambda.is_finite()) {
            return Err(Error::Parameter(format!(
                "lambda must be non-negative, got {}",
                h.lambda
            )));
        }
        let m = schema.stats_dim();
        let diag = match mode {
            AccumulationMode::Direct => h.rho,
            AccumulationMode::Inverse => 1.0 / h.rho,
        };
        Ok(CStageStats {
            schema,
            mode,
            lambda: h.lambda,
            rho: h.rho,
            a: Array2::eye(m) * diag,
            b: Array2::zeros((m, schema.classes)),
            t: 0,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn mode(&self) -> AccumulationMode {
        self.mode
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// `A` in direct mode, `A⁻¹` in inverse mode.
    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Array2<f64> {
        &self.b
    }

    /// Number of batches absorbed.
    pub fn batches(&self) -> usize {
        self.t
    }

    /// Folds one C-stage batch into the statistics.
    pub fn absorb(&mut self, batch: &Batch) -> Result<()> {
        if batch.stage != Stage::Compress {
            return Err(Error::Schema("only C-stage batches can be absorbed".into()));
        }
        validate_batch(batch, &self.schema)?;
        let x_tilde = batch.x_tilde();
        let x_s = batch.x_s.view();

        match self.mode {
            AccumulationMode::Direct => {
                self.a += &direct_increment(x_tilde.view(), x_s, self.lambda);
            }
            AccumulationMode::Inverse => {
                let u = UpdateBlock::new(x_tilde.view(), x_s, self.lambda);
                let u = u.matrix();
                let pu = self.a.dot(u);
                let mut inner = u.t().dot(&pu);
                for i in 0..inner.nrows() {
                    inner[[i, i]] += 1.0;
                }
                let correction = Cholesky::factor(inner.view())
                    .map_err(|e| Error::Numeric(format!("Woodbury inner system: {e}")))?
                    .solve(pu.t())?;
                self.a -= &pu.dot(&correction);
            }
        }
        linalg::symmetrize(&mut self.a);

        let p = self.schema.cstage_width();
        let y = batch.y.matrix();
        let mut top = self.b.slice_mut(s![..p, ..]);
        top += &x_tilde.t().dot(y);
        let mut bottom = self.b.slice_mut(s![p.., ..]);
        bottom += &x_s.t().dot(y);

        if !linalg::all_finite(self.a.view()) || !linalg::all_finite(self.b.view()) {
            return Err(Error::Numeric("statistics became non-finite".into()));
        }
        self.t += 1;
        Ok(())
    }

    /// The optimum of the coupled objective over everything absorbed so far.
    pub fn solve(&self) -> Result<CStageModel> {
        let stacked = match self.mode {
            AccumulationMode::Direct => linalg::solve_spd(self.a.view(), self.b.view())?,
            AccumulationMode::Inverse => self.a.dot(&self.b),
        };
        if !linalg::all_finite(stacked.view()) {
            return Err(Error::Numeric("C-stage solution is not finite".into()));
        }
        CStageModel::from_stacked(self.schema, &stacked)
    }

    pub fn to_snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            format: SNAPSHOT_FORMAT.to_string(),
            mode: self.mode,
            schema: self.schema,
            m: self.schema.stats_dim(),
            c: self.schema.classes,
            rho: self.rho,
            lambda: self.lambda,
            t: self.t,
            a: self.a.iter().copied().collect(),
            b: self.b.iter().copied().collect(),
        }
    }

    pub fn from_snapshot(snap: StatsSnapshot) -> Result<Self> {
        if snap.format != SNAPSHOT_FORMAT {
            return Err(Error::Serde(format!(
                "unknown snapshot format {:?}",
                snap.format
            )));
        }
        snap.schema.validate()?;
        let m = snap.schema.stats_dim();
        let c = snap.schema.classes;
        if snap.m != m || snap.c != c {
            return Err(Error::Schema(format!(
                "snapshot header ({}, {}) disagrees with schema ({m}, {c})",
                snap.m, snap.c
            )));
        }
        let a = Array2::from_shape_vec((m, m), snap.a)
            .map_err(|e| Error::Serde(format!("matrix a: {e}")))?;
        let b = Array2::from_shape_vec((m, c), snap.b)
            .map_err(|e| Error::Serde(format!("matrix b: {e}")))?;
        Ok(CStageStats {
            schema: snap.schema,
            mode: snap.mode,
            lambda: snap.lambda,
            rho: snap.rho,
            a,
            b,
            t: snap.t,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text =
            serde_json::to_string(&self.to_snapshot()).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let snap: StatsSnapshot = serde_json::from_str(&text)
            .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))?;
        Self::from_snapshot(snap)
    }
}

const SNAPSHOT_FORMAT: &str = "opid-cstage-stats/1";

/// Flat container for suspending and resuming a C-stage pass. Matrices are
/// row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSnapshot {
    pub format: String,
    pub mode: AccumulationMode,
    pub schema: FeatureSchema,
    pub m: usize,
    pub c: usize,
    pub rho: f64,
    pub lambda: f64,
    pub t: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// `Z = x_s · w_s`, the survived-feature classifier's scores used as the
/// stacked representation.
pub fn compress(x_s: ArrayView2<'_, f64>, model: &CStageModel) -> Result<Array2<f64>> {
    if x_s.ncols() != model.w_s.nrows() {
        return Err(Error::Schema(format!(
            "x_s has width {}, model expects {}",
            x_s.ncols(),
            model.w_s.nrows()
        )));
    }
    Ok(x_s.dot(&model.w_s))
}
