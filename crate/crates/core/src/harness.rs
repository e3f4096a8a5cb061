//! Experiment protocol: one C-stage pass, repeated random E-stage splits,
//! the two expanding-stage learners against three logistic baselines,
//! and paired significance tests over the per-repeat accuracies.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cstage::{AccumulationMode, CStageStats};
use crate::ensemble::{
    predict_ensemble, train_ensemble, train_ovr, Combination, EnsembleOptions, SolverOptions,
};
use crate::error::{Error, Result};
use crate::ingest::{generate_synthetic, load_estage, parse_manifest, stream_batches, SynthConfig};
use crate::model::{Batch, CStageModel, FeatureSchema, Hyperparams, LabelMatrix};
use crate::unified::{build_stacked, predict_unified, train_unified, TrainOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Unified joint model with learned weights.
    #[serde(rename = "OPID")]
    Opid,
    /// Two logistic models combined with cross-validated weights.
    #[serde(rename = "OPIDe")]
    OpidE,
    /// Logistic regression on `[x_s | x_a]`.
    #[serde(rename = "BASE_ALL")]
    BaseAll,
    /// Logistic regression on `x_s`.
    #[serde(rename = "BASE_S")]
    BaseS,
    /// Logistic regression on `x_a`.
    #[serde(rename = "BASE_A")]
    BaseA,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Opid,
        Method::OpidE,
        Method::BaseAll,
        Method::BaseS,
        Method::BaseA,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Opid => "OPID",
            Method::OpidE => "OPIDe",
            Method::BaseAll => "BASE_ALL",
            Method::BaseS => "BASE_S",
            Method::BaseA => "BASE_A",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parameter(format!("unknown method {s:?}")))
    }
}

/// Candidate values per hyperparameter. Single-point grids skip cross validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub lambda: Vec<f64>,
    pub rho: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Shared by both ensemble losses and the baselines.
    pub alpha: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        let h = Hyperparams::default();
        HyperGrid {
            lambda: vec![h.lambda],
            rho: vec![h.rho],
            gamma: vec![h.gamma],
            alpha: vec![h.alpha1],
        }
    }
}

impl HyperGrid {
    fn validate(&self) -> Result<()> {
        for (name, values) in [
            ("lambda", &self.lambda),
            ("rho", &self.rho),
            ("gamma", &self.gamma),
            ("alpha", &self.alpha),
        ] {
            if values.is_empty() {
                return Err(Error::Parameter(format!("empty {name} grid")));
            }
            if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::Parameter(format!("{name} grid must be positive")));
            }
        }
        Ok(())
    }

    fn cstage_points(&self) -> Vec<Hyperparams> {
        let mut points = Vec::new();
        for &lambda in &self.lambda {
            for &rho in &self.rho {
                points.push(Hyperparams {
                    lambda,
                    rho,
                    ..Hyperparams::default()
                });
            }
        }
        points
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Manifest(PathBuf),
    Synthetic(SynthConfig),
}

/// E-stage data is pooled and split into equal random halves every repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub source: DataSource,
    pub methods: Vec<Method>,
    pub grid: HyperGrid,
    pub repeats: usize,
    pub seed: u64,
    /// `None` picks by statistics dimension.
    pub mode: Option<AccumulationMode>,
    pub folds: usize,
    pub combination: Combination,
}

impl ExperimentSpec {
    pub fn new(source: DataSource) -> Self {
        ExperimentSpec {
            source,
            methods: Method::ALL.to_vec(),
            grid: HyperGrid::default(),
            repeats: 20,
            seed: 0,
            mode: None,
            folds: 5,
            combination: Combination::Probability,
        }
    }
}

/// Initializes statistics, absorbs every batch once and solves. An empty
/// stream gives the zero model.
pub fn run_cstage_pass<I>(
    stream: I,
    schema: FeatureSchema,
    h: &Hyperparams,
    mode: AccumulationMode,
) -> Result<CStageModel>
where
    I: IntoIterator<Item = Result<Batch>>,
{
    let mut models = run_cstage_grid(stream, schema, std::slice::from_ref(h), mode)?;
    Ok(models.pop().expect("one grid point"))
}

/// One pass over `stream` feeding one accumulator per hyperparameter point.
pub fn run_cstage_grid<I>(
    stream: I,
    schema: FeatureSchema,
    points: &[Hyperparams],
    mode: AccumulationMode,
) -> Result<Vec<CStageModel>>
where
    I: IntoIterator<Item = Result<Batch>>,
{
    let mut stats = points
        .iter()
        .map(|h| CStageStats::new(schema, h, mode))
        .collect::<Result<Vec<_>>>()?;
    for batch in stream {
        let batch = batch?;
        for s in &mut stats {
            s.absorb(&batch)?;
        }
    }
    stats.iter().map(CStageStats::solve).collect()
}

/// Contiguous k-fold partition of `0..n` as `(train, test)` index lists.
pub fn fold_splits(n: usize, k: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    (0..k)
        .map(|f| {
            let lo = f * n / k;
            let hi = (f + 1) * n / k;
            let train = (0..lo).chain(hi..n).collect();
            let test = (lo..hi).collect();
            (train, test)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome<P> {
    pub best_index: usize,
    pub best: P,
    /// Mean held-out accuracy per grid point.
    pub scores: Vec<f64>,
}

/// Exhaustive grid search by mean fold accuracy; ties go to the earliest
/// grid index. `evaluate(train, test, point)` returns held-out accuracy.
pub fn k_fold_cv<P, F>(n: usize, grid: &[P], k: usize, mut evaluate: F) -> Result<CvOutcome<P>>
where
    P: Clone,
    F: FnMut(&[usize], &[usize], &P) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::Parameter("empty hyperparameter grid".into()));
    }
    if k < 2 || n < k {
        return Err(Error::Parameter(format!(
            "need 2 <= k <= n for cross validation, got k = {k}, n = {n}"
        )));
    }
    let splits = fold_splits(n, k);
    let mut scores = Vec::with_capacity(grid.len());
    for point in grid {
        let mut total = 0.0;
        for (train, test) in &splits {
            total += evaluate(train, test, point)?;
        }
        scores.push(total / k as f64);
    }
    let mut best_index = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best_index] {
            best_index = i;
        }
    }
    Ok(CvOutcome {
        best_index,
        best: grid[best_index].clone(),
        scores,
    })
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(pred.len(), truth.len(), "prediction length mismatch");
    if truth.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    hits as f64 / truth.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Significance {
    Better,
    Tie,
    Worse,
}

impl Significance {
    pub fn symbol(&self) -> &'static str {
        match self {
            Significance::Better => "win",
            Significance::Tie => "tie",
            Significance::Worse => "loss",
        }
    }

    pub fn flip(&self) -> Significance {
        match self {
            Significance::Better => Significance::Worse,
            Significance::Tie => Significance::Tie,
            Significance::Worse => Significance::Better,
        }
    }
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// Two-sided paired t-test of `a` against `b` at level 0.05.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<Significance> {
    if a.len() != b.len() {
        return Err(Error::Parameter(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Parameter(
            "paired t-test needs at least two pairs".into(),
        ));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64;
    let direction = if mean > 0.0 {
        Significance::Better
    } else {
        Significance::Worse
    };
    if diffs.iter().all(|&d| d == 0.0) {
        return Ok(Significance::Tie);
    }
    // Constant nonzero differences (up to rounding) are significant.
    if var.sqrt() <= 1e-12 * mean.abs() {
        return Ok(direction);
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Numeric(format!("t distribution: {e}")))?;
    let p = 2.0 * (1.0 - dist.cdf(t.abs()));
    Ok(if p < SIGNIFICANCE_LEVEL {
        direction
    } else {
        Significance::Tie
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    /// `(repeat index, test accuracy)` for every completed repeat.
    pub accuracies: Vec<(usize, f64)>,
    pub mean: f64,
    pub std: f64,
}

impl MethodResult {
    pub fn from_accuracies(method: Method, accuracies: Vec<(usize, f64)>) -> Self {
        let (mean, std) = mean_std(accuracies.iter().map(|&(_, a)| a));
        MethodResult {
            method,
            accuracies,
            mean,
            std,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.accuracies.iter().map(|&(_, a)| a).collect()
    }
}

/// Mean and sample standard deviation; the deviation of fewer than two values is 0.
pub fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let values: Vec<f64> = values.collect();
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortedRepeat {
    pub repeat: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub methods: Vec<MethodResult>,
    /// `marks[i][j]`: method `i` against method `j`; `None` on the diagonal
    /// or with fewer than two completed repeats.
    pub marks: Vec<Vec<Option<Significance>>>,
    pub aborted: Vec<AbortedRepeat>,
}

impl ResultTable {
    pub fn from_results(methods: Vec<MethodResult>, aborted: Vec<AbortedRepeat>) -> Result<Self> {
        let k = methods.len();
        let mut marks = vec![vec![None; k]; k];
        for i in 0..k {
            for j in 0..k {
                if i == j {
                    continue;
                }
                let a = methods[i].values();
                let b = methods[j].values();
                if a.len() >= 2 {
                    marks[i][j] = Some(paired_t_test(&a, &b)?);
                }
            }
        }
        Ok(ResultTable {
            methods,
            marks,
            aborted,
        })
    }

    pub fn get(&self, method: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|m| m.method == method)
    }
}

struct Prepared {
    /// One C-stage model per `(lambda, rho)` grid point.
    cmodels: Vec<(Hyperparams, CStageModel)>,
    pool: Batch,
}

fn prepare(spec: &ExperimentSpec) -> Result<Prepared> {
    let points = spec.grid.cstage_points();
    let (schema, models, train, test) = match &spec.source {
        DataSource::Manifest(path) => {
            let manifest = parse_manifest(path)?;
            let schema = manifest.schema;
            let mode = spec
                .mode
                .unwrap_or_else(|| AccumulationMode::for_schema(&schema));
            let models = run_cstage_grid(stream_batches(&manifest), schema, &points, mode)?;
            let (train, test) = load_estage(&manifest)?;
            (schema, models, train, test)
        }
        DataSource::Synthetic(cfg) => {
            let stream = generate_synthetic(cfg)?;
            let schema = stream.schema;
            let mode = spec
                .mode
                .unwrap_or_else(|| AccumulationMode::for_schema(&schema));
            let models = run_cstage_grid(stream.cstage.into_iter().map(Ok), schema, &points, mode)?;
            (schema, models, stream.estage_train, stream.estage_test)
        }
    };
    let pool = Batch {
        stage: train.stage,
        x_v: None,
        x_s: concatenate![Axis(0), train.x_s, test.x_s],
        x_a: Some(concatenate![
            Axis(0),
            train.x_a_or_empty(),
            test.x_a_or_empty()
        ]),
        y: {
            let mut labels = train.y.labels().to_vec();
            labels.extend_from_slice(test.y.labels());
            crate::model::one_hot_encode(&labels, schema.classes)?
        },
    };
    Ok(Prepared {
        cmodels: points.into_iter().zip(models).collect(),
        pool,
    })
}

fn split_pool(pool: &Batch, seed: u64, repeat: usize) -> (Batch, Batch) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repeat as u64);
    let mut idx: Vec<usize> = (0..pool.rows()).collect();
    idx.shuffle(&mut rng);
    let half = idx.len() / 2;
    (pool.select(&idx[..half]), pool.select(&idx[half..]))
}

struct RepeatContext<'a> {
    spec: &'a ExperimentSpec,
    prep: &'a Prepared,
    train: Batch,
    test: Batch,
}

impl RepeatContext<'_> {
    fn solver(&self) -> SolverOptions {
        SolverOptions::default()
    }

    /// CV over `grid` on the training half when it has more than one point.
    fn select<P: Clone>(
        &self,
        grid: &[P],
        evaluate: impl FnMut(&[usize], &[usize], &P) -> Result<f64>,
    ) -> Result<P> {
        if grid.len() == 1 {
            return Ok(grid[0].clone());
        }
        Ok(k_fold_cv(self.train.rows(), grid, self.spec.folds, evaluate)?.best)
    }

    fn opid(&self) -> Result<f64> {
        let mut grid = Vec::new();
        for (ci, _) in self.prep.cmodels.iter().enumerate() {
            for &gamma in &self.spec.grid.gamma {
                grid.push((ci, gamma));
            }
        }
        let fit = |train: &Batch, test: &Batch, &(ci, gamma): &(usize, f64)| -> Result<f64> {
            let cmodel = &self.prep.cmodels[ci].1;
            let stacked = build_stacked(train, cmodel)?;
            let state = train_unified(&stacked, gamma, TrainOptions::default())?;
            let pred = predict_unified(test, cmodel, &state.model)?;
            Ok(accuracy(&pred, test.y.labels()))
        };
        let best = self.select(&grid, |tr, te, p| {
            fit(&self.train.select(tr), &self.train.select(te), p)
        })?;
        fit(&self.train, &self.test, &best)
    }

    fn opid_e(&self) -> Result<f64> {
        let mut grid = Vec::new();
        for (ci, _) in self.prep.cmodels.iter().enumerate() {
            for &alpha in &self.spec.grid.alpha {
                grid.push((ci, alpha));
            }
        }
        let fit = |train: &Batch, test: &Batch, &(ci, alpha): &(usize, f64)| -> Result<f64> {
            let cmodel = &self.prep.cmodels[ci].1;
            let stacked = build_stacked(train, cmodel)?;
            let opts = EnsembleOptions {
                alpha1: alpha,
                alpha2: alpha,
                folds: self.spec.folds.min(train.rows()),
                combination: self.spec.combination,
                solver: self.solver(),
            };
            let fitted = train_ensemble(&stacked, opts)?;
            let pred = predict_ensemble(test, cmodel, &fitted.model)?;
            Ok(accuracy(&pred, test.y.labels()))
        };
        let best = self.select(&grid, |tr, te, p| {
            fit(&self.train.select(tr), &self.train.select(te), p)
        })?;
        fit(&self.train, &self.test, &best)
    }

    fn baseline(&self, features: fn(&Batch) -> Array2<f64>) -> Result<f64> {
        let fit = |x_tr: &Array2<f64>,
                   y_tr: &LabelMatrix,
                   x_te: &Array2<f64>,
                   y_te: &LabelMatrix,
                   alpha: f64|
         -> Result<f64> {
            let model = train_ovr(x_tr.view(), y_tr, alpha, self.solver())?;
            Ok(accuracy(&model.predict(x_te.view())?, y_te.labels()))
        };
        let x_train = features(&self.train);
        let x_test = features(&self.test);
        if x_train.ncols() == 0 {
            // No features: every instance gets the first class.
            return Ok(accuracy(&vec![0; self.test.rows()], self.test.y.labels()));
        }
        let alpha = self.select(&self.spec.grid.alpha, |tr, te, &alpha| {
            fit(
                &x_train.select(Axis(0), tr),
                &self.train.y.select(tr),
                &x_train.select(Axis(0), te),
                &self.train.y.select(te),
                alpha,
            )
        })?;
        fit(&x_train, &self.train.y, &x_test, &self.test.y, alpha)
    }

    fn run(&self, method: Method) -> Result<f64> {
        match method {
            Method::Opid => self.opid(),
            Method::OpidE => self.opid_e(),
            Method::BaseAll => self.baseline(Batch::x_bar),
            Method::BaseS => self.baseline(|b| b.x_s.clone()),
            Method::BaseA => self.baseline(Batch::x_a_or_empty),
        }
    }
}

/// Runs every requested method on `repeats` random E-stage splits. A failing
/// method aborts its whole repeat; the reason is kept in the table.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    if spec.repeats == 0 {
        return Err(Error::Parameter("repeats must be at least 1".into()));
    }
    if spec.folds < 2 {
        return Err(Error::Parameter("folds must be at least 2".into()));
    }
    spec.grid.validate()?;
    let mut methods = spec.methods.clone();
    methods.dedup();
    let prep = prepare(spec)?;
    info!(
        "C-stage pass done: {} model(s), E-stage pool of {}",
        prep.cmodels.len(),
        prep.pool.rows()
    );
    if prep.pool.rows() < 4 {
        return Err(Error::Parameter(
            "E-stage pool needs at least 4 instances".into(),
        ));
    }

    let outcomes: Vec<std::result::Result<Vec<f64>, String>> = (0..spec.repeats)
        .into_par_iter()
        .map(|repeat| {
            let (train, test) = split_pool(&prep.pool, spec.seed, repeat);
            let ctx = RepeatContext {
                spec,
                prep: &prep,
                train,
                test,
            };
            methods
                .iter()
                .map(|&m| ctx.run(m).map_err(|e| format!("{m}: {e}")))
                .collect()
        })
        .collect();

    let mut per_method: Vec<Vec<(usize, f64)>> = vec![Vec::new(); methods.len()];
    let mut aborted = Vec::new();
    for (repeat, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(accs) => {
                for (slot, acc) in per_method.iter_mut().zip(accs) {
                    slot.push((repeat, acc));
                }
            }
            Err(reason) => {
                warn!("repeat {repeat} aborted: {reason}");
                aborted.push(AbortedRepeat { repeat, reason });
            }
        }
    }
    let results = methods
        .into_iter()
        .zip(per_method)
        .map(|(m, accs)| MethodResult::from_accuracies(m, accs))
        .collect();
    ResultTable::from_results(results, aborted)
}

pub const RECORD_HEADER: &str = "method,repeat,accuracy";

/// Human-readable summary. The first method is the reference for the
/// win/tie/loss column.
pub fn render_table(table: &ResultTable) -> String {
    let mut out = String::new();
    // Last column: outcome of the first method against each row.
    let versus = table
        .methods
        .first()
        .map(|r| format!("{} vs", r.method.name()))
        .unwrap_or_default();
    writeln!(
        out,
        "{:<10} {:>8} {:>8} {:>8} {:>10}",
        "method", "mean", "std", "repeats", versus
    )
    .unwrap();
    for (i, r) in table.methods.iter().enumerate() {
        let mark = if i == 0 {
            "-".to_string()
        } else {
            table.marks[0][i]
                .map(|s| s.symbol().to_string())
                .unwrap_or_else(|| "n/a".into())
        };
        writeln!(
            out,
            "{:<10} {:>8.4} {:>8.4} {:>8} {:>10}",
            r.method.name(),
            r.mean,
            r.std,
            r.accuracies.len(),
            mark
        )
        .unwrap();
    }
    if table.methods.len() > 1 {
        writeln!(out).unwrap();
        writeln!(
            out,
            "paired t-test at level {SIGNIFICANCE_LEVEL} (row vs column)"
        )
        .unwrap();
        write!(out, "{:<10}", "").unwrap();
        for r in &table.methods {
            write!(out, " {:>9}", r.method.name()).unwrap();
        }
        writeln!(out).unwrap();
        for (i, r) in table.methods.iter().enumerate() {
            write!(out, "{:<10}", r.method.name()).unwrap();
            for j in 0..table.methods.len() {
                let cell = table.marks[i][j].map_or("-", |s| s.symbol());
                write!(out, " {cell:>9}").unwrap();
            }
            writeln!(out).unwrap();
        }
    }
    for a in &table.aborted {
        writeln!(out, "aborted repeat {}: {}", a.repeat, a.reason).unwrap();
    }
    out
}

/// One row per method per repeat, accuracies written to round-trip exactly.
pub fn render_records(table: &ResultTable) -> String {
    let mut out = String::new();
    writeln!(out, "{RECORD_HEADER}").unwrap();
    for r in &table.methods {
        for &(repeat, acc) in &r.accuracies {
            writeln!(out, "{},{repeat},{acc}", r.method.name()).unwrap();
        }
    }
    out
}

pub const TABLE_FILE: &str = "report.txt";
pub const RECORDS_FILE: &str = "records.csv";

/// Writes `report.txt` and `records.csv` into `dir`.
pub fn emit_report(table: &ResultTable, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let table_path = dir.join(TABLE_FILE);
    let records_path = dir.join(RECORDS_FILE);
    fs::write(&table_path, render_table(table)).map_err(|e| Error::io(&table_path, e))?;
    fs::write(&records_path, render_records(table)).map_err(|e| Error::io(&records_path, e))?;
    Ok((table_path, records_path))
}

/// Parses a machine record back into per-method results, in first-seen order.
pub fn parse_records(path: &Path) -> Result<Vec<MethodResult>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RECORD_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 1,
                msg: format!("expected header {RECORD_HEADER:?}"),
            })
        }
    }
    let mut order: Vec<Method> = Vec::new();
    let mut accs: Vec<Vec<(usize, f64)>> = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields, found {}", fields.len())));
        }
        let method: Method = fields[0].parse().map_err(|e: Error| err(e.to_string()))?;
        let repeat: usize = fields[1]
            .parse()
            .map_err(|_| err(format!("bad repeat {:?}", fields[1])))?;
        let acc: f64 = fields[2]
            .parse()
            .map_err(|_| err(format!("bad accuracy {:?}", fields[2])))?;
        let slot = match order.iter().position(|&m| m == method) {
            Some(p) => p,
            None => {
                order.push(method);
                accs.push(Vec::new());
                order.len() - 1
            }
        };
        accs[slot].push((repeat, acc));
    }
    Ok(order
        .into_iter()
        .zip(accs)
        .map(|(m, a)| MethodResult::from_accuracies(m, a))
        .collect())
}
