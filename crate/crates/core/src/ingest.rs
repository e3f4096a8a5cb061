//! Reading evolving-feature streams from disk and generating synthetic ones.
//!
//! A stream lives in a directory of delimited text files, one instance per
//! row with the features first and an integer class label last, plus a TOML
//! manifest naming the files and assigning column ranges to partitions:
//!
//! ```toml
//! classes = 3
//! cstage_batches = ["cstage_000.csv", "cstage_001.csv"]
//! estage_train = "estage_train.csv"
//! estage_test = "estage_test.csv"
//!
//! [widths]
//! vanished = 2
//! survived = 3
//! augmented = 2
//!
//! [cstage_columns]   # half-open [start, end) ranges
//! vanished = [0, 2]
//! survived = [2, 5]
//!
//! [estage_columns]
//! survived = [0, 3]
//! augmented = [3, 5]
//! ```
//!
//! Optional keys: `delimiter` (default `","`) and `standardize` (default
//! `false`), which rescales every feature with statistics from the first
//! batch that contains it.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{one_hot_encode, validate_batch, Batch, FeatureSchema, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Widths {
    pub vanished: usize,
    pub survived: usize,
    pub augmented: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CStageColumns {
    pub vanished: [usize; 2],
    pub survived: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EStageColumns {
    pub survived: [usize; 2],
    pub augmented: [usize; 2],
}

/// On-disk manifest layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delimiter: Option<String>,
    #[serde(default)]
    pub standardize: bool,
    pub widths: Widths,
    pub cstage_batches: Vec<PathBuf>,
    pub estage_train: PathBuf,
    pub estage_test: PathBuf,
    pub cstage_columns: CStageColumns,
    pub estage_columns: EStageColumns,
}

/// A validated manifest with file paths resolved against its directory.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamManifest {
    pub schema: FeatureSchema,
    pub delimiter: u8,
    pub standardize: bool,
    pub cstage_batches: Vec<PathBuf>,
    pub estage_train: PathBuf,
    pub estage_test: PathBuf,
    pub cstage_columns: CStageColumns,
    pub estage_columns: EStageColumns,
}

fn check_ranges(stage: &str, named: [(&str, [usize; 2], usize); 2], total: usize) -> Result<()> {
    for (name, [start, end], width) in named {
        if start > end {
            return Err(Error::Schema(format!(
                "{stage} {name} range [{start}, {end}) is reversed"
            )));
        }
        if end - start != width {
            return Err(Error::Schema(format!(
                "{stage} {name} range [{start}, {end}) has {} columns, width is {width}",
                end - start
            )));
        }
        if end > total {
            return Err(Error::Schema(format!(
                "{stage} {name} range [{start}, {end}) exceeds the {total} feature columns"
            )));
        }
    }
    let [(n0, r0, _), (n1, r1, _)] = named;
    if r0[0] < r1[1] && r1[0] < r0[1] {
        return Err(Error::Schema(format!(
            "{stage} ranges {n0} [{}, {}) and {n1} [{}, {}) overlap",
            r0[0], r0[1], r1[0], r1[1]
        )));
    }
    Ok(())
}

impl StreamManifest {
    fn from_file(file: ManifestFile, base: &Path) -> Result<Self> {
        let schema = FeatureSchema::new(
            file.widths.vanished,
            file.widths.survived,
            file.widths.augmented,
            file.classes,
        )?;
        check_ranges(
            "cstage",
            [
                ("vanished", file.cstage_columns.vanished, schema.d_v),
                ("survived", file.cstage_columns.survived, schema.d_s),
            ],
            schema.cstage_width(),
        )?;
        check_ranges(
            "estage",
            [
                ("survived", file.estage_columns.survived, schema.d_s),
                ("augmented", file.estage_columns.augmented, schema.d_a),
            ],
            schema.estage_width(),
        )?;
        let delimiter = match file.delimiter.as_deref() {
            None => b',',
            Some(d) if d.len() == 1 => d.as_bytes()[0],
            Some("\\t") => b'\t',
            Some(d) => {
                return Err(Error::Schema(format!(
                    "delimiter must be a single byte, got {d:?}"
                )))
            }
        };
        if file.cstage_batches.is_empty() {
            return Err(Error::Schema("manifest lists no C-stage batches".into()));
        }
        let resolve = |p: &PathBuf| {
            if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            }
        };
        let manifest = StreamManifest {
            schema,
            delimiter,
            standardize: file.standardize,
            cstage_batches: file.cstage_batches.iter().map(resolve).collect(),
            estage_train: resolve(&file.estage_train),
            estage_test: resolve(&file.estage_test),
            cstage_columns: file.cstage_columns,
            estage_columns: file.estage_columns,
        };
        for path in manifest.files() {
            if !path.is_file() {
                return Err(Error::Schema(format!(
                    "missing data file {}",
                    path.display()
                )));
            }
        }
        let widths = manifest
            .cstage_batches
            .iter()
            .map(|p| (p, schema.cstage_width()))
            .chain([
                (&manifest.estage_train, schema.estage_width()),
                (&manifest.estage_test, schema.estage_width()),
            ]);
        for (path, features) in widths {
            if let Some((line, found)) = first_record_width(path, delimiter)? {
                if found != features + 1 {
                    return Err(Error::Parse {
                        path: path.clone(),
                        line,
                        msg: format!(
                            "expected {} columns ({features} features and a label), found {found}",
                            features + 1
                        ),
                    });
                }
            }
        }
        Ok(manifest)
    }

    pub fn files(&self) -> impl Iterator<Item = &PathBuf> {
        self.cstage_batches
            .iter()
            .chain([&self.estage_train, &self.estage_test])
    }

    /// A manifest for `schema` with contiguous partitions in stage order.
    pub fn contiguous_layout(
        schema: &FeatureSchema,
        cstage_batches: Vec<PathBuf>,
        estage_train: PathBuf,
        estage_test: PathBuf,
    ) -> ManifestFile {
        ManifestFile {
            classes: schema.classes,
            delimiter: None,
            standardize: false,
            widths: Widths {
                vanished: schema.d_v,
                survived: schema.d_s,
                augmented: schema.d_a,
            },
            cstage_batches,
            estage_train,
            estage_test,
            cstage_columns: CStageColumns {
                vanished: [0, schema.d_v],
                survived: [schema.d_v, schema.cstage_width()],
            },
            estage_columns: EStageColumns {
                survived: [0, schema.d_s],
                augmented: [schema.d_s, schema.estage_width()],
            },
        }
    }
}

/// Reads and validates a manifest. Relative data paths resolve against the
/// manifest's directory.
pub fn parse_manifest(path: &Path) -> Result<StreamManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile =
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    StreamManifest::from_file(file, base)
}

/// Line number and field count of the first non-blank record, if any.
fn first_record_width(path: &Path, delimiter: u8) -> Result<Option<(usize, usize)>> {
    let parse_err = |e: csv::Error| Error::Parse {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line() as usize),
        msg: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .flexible(true)
        .from_path(path)
        .map_err(parse_err)?;
    for record in reader.records() {
        let record = record.map_err(parse_err)?;
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        let line = record.position().map_or(0, |p| p.line() as usize);
        return Ok(Some((line, record.len())));
    }
    Ok(None)
}

/// Raw feature matrix and labels of one data file.
fn read_table(
    path: &Path,
    delimiter: u8,
    feature_cols: usize,
    classes: usize,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line() as usize),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != feature_cols + 1 {
            return Err(err(format!(
                "expected {} columns ({} features and a label), found {}",
                feature_cols + 1,
                feature_cols,
                record.len()
            )));
        }
        for field in record.iter().take(feature_cols) {
            let v: f64 = field
                .parse()
                .map_err(|_| err(format!("cannot parse feature {field:?}")))?;
            if !v.is_finite() {
                return Err(err(format!("non-finite feature {field:?}")));
            }
            values.push(v);
        }
        let raw = &record[feature_cols];
        let label: usize = raw
            .parse()
            .map_err(|_| err(format!("cannot parse label {raw:?}")))?;
        if label >= classes {
            return Err(err(format!("label {label} outside [0, {classes})")));
        }
        labels.push(label);
    }
    if labels.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: "file contains no instances".into(),
        });
    }
    let table = Array2::from_shape_vec((labels.len(), feature_cols), values)
        .expect("row lengths were checked");
    Ok((table, labels))
}

fn columns(table: &Array2<f64>, range: [usize; 2]) -> Array2<f64> {
    table.slice(s![.., range[0]..range[1]]).to_owned()
}

/// Per-feature affine map `(x - mean) / std`; constant features keep scale 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    mean: Array1<f64>,
    scale: Array1<f64>,
}

impl FeatureScaler {
    pub fn fit(x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows() as f64;
        let mean = x
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(x.ncols()));
        let var = x
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(col, m)| col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n)
            .collect::<Array1<f64>>();
        let scale = var.mapv(|v| if v > 0.0 { v.sqrt() } else { 1.0 });
        FeatureScaler { mean, scale }
    }

    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.scale
    }
}

/// Sequential reader over the C-stage files. Holds one batch at a time.
pub struct BatchStream<'a> {
    manifest: &'a StreamManifest,
    next: usize,
    scalers: Option<(FeatureScaler, FeatureScaler)>,
}

impl<'a> Iterator for BatchStream<'a> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let path = self.manifest.cstage_batches.get(self.next)?;
        self.next += 1;
        Some(self.read(path))
    }
}

impl BatchStream<'_> {
    fn read(&mut self, path: &Path) -> Result<Batch> {
        let m = self.manifest;
        let (table, labels) =
            read_table(path, m.delimiter, m.schema.cstage_width(), m.schema.classes)?;
        let mut x_v = columns(&table, m.cstage_columns.vanished);
        let mut x_s = columns(&table, m.cstage_columns.survived);
        if m.standardize {
            if self.scalers.is_none() {
                let (first, _) = read_table(
                    &m.cstage_batches[0],
                    m.delimiter,
                    m.schema.cstage_width(),
                    m.schema.classes,
                )?;
                self.scalers = Some((
                    FeatureScaler::fit(columns(&first, m.cstage_columns.vanished).view()),
                    FeatureScaler::fit(columns(&first, m.cstage_columns.survived).view()),
                ));
            }
            let (sv, ss) = self.scalers.as_ref().expect("scalers fitted above");
            x_v = sv.apply(&x_v);
            x_s = ss.apply(&x_s);
        }
        let batch = Batch::compress(x_v, x_s, one_hot_encode(&labels, m.schema.classes)?);
        validate_batch(&batch, &m.schema)?;
        Ok(batch)
    }
}

/// Yields the C-stage batches in manifest order, reading each file on demand.
pub fn stream_batches(manifest: &StreamManifest) -> BatchStream<'_> {
    stream_batches_from(manifest, 0)
}

/// Like [`stream_batches`] but starts at batch `start` without opening the
/// earlier files (scaling statistics still come from the first file).
pub fn stream_batches_from(manifest: &StreamManifest, start: usize) -> BatchStream<'_> {
    BatchStream {
        manifest,
        next: start,
        scalers: None,
    }
}

fn read_estage_file(manifest: &StreamManifest, path: &Path) -> Result<Batch> {
    let (table, labels) = read_table(
        path,
        manifest.delimiter,
        manifest.schema.estage_width(),
        manifest.schema.classes,
    )?;
    let x_s = columns(&table, manifest.estage_columns.survived);
    let x_a = columns(&table, manifest.estage_columns.augmented);
    let batch = Batch::expand(x_s, x_a, one_hot_encode(&labels, manifest.schema.classes)?);
    validate_batch(&batch, &manifest.schema)?;
    Ok(batch)
}

/// Reads the E-stage training and test batches. With `standardize`, survived
/// features reuse the first C-stage batch's statistics and augmented features
/// use the training batch's.
pub fn load_estage(manifest: &StreamManifest) -> Result<(Batch, Batch)> {
    let mut train = read_estage_file(manifest, &manifest.estage_train)?;
    let mut test = read_estage_file(manifest, &manifest.estage_test)?;
    if manifest.standardize {
        let (table, _) = read_table(
            &manifest.cstage_batches[0],
            manifest.delimiter,
            manifest.schema.cstage_width(),
            manifest.schema.classes,
        )?;
        let ss = FeatureScaler::fit(columns(&table, manifest.cstage_columns.survived).view());
        let sa = FeatureScaler::fit(train.x_a_or_empty().view());
        for batch in [&mut train, &mut test] {
            batch.x_s = ss.apply(&batch.x_s);
            batch.x_a = batch.x_a.as_ref().map(|a| sa.apply(a));
        }
    }
    Ok((train, test))
}

/// Writes one batch as delimited text, features in stage order then the label.
/// Values use the shortest representation that parses back to the same bits.
pub fn write_batch_file(path: &Path, batch: &Batch) -> Result<()> {
    let features = match batch.stage {
        Stage::Compress => batch.x_tilde(),
        Stage::Expand => batch.x_bar(),
    };
    let mut out = String::new();
    for (row, &label) in features.outer_iter().zip(batch.y.labels()) {
        for v in row.iter() {
            write!(out, "{v},").expect("writing to a String");
        }
        writeln!(out, "{label}").expect("writing to a String");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Writes a full stream plus its manifest into `dir`; returns the manifest path.
pub fn write_stream(dir: &Path, stream: &SyntheticStream) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for (i, batch) in stream.cstage.iter().enumerate() {
        let name = PathBuf::from(format!("cstage_{i:03}.csv"));
        write_batch_file(&dir.join(&name), batch)?;
        names.push(name);
    }
    let train = PathBuf::from("estage_train.csv");
    let test = PathBuf::from("estage_test.csv");
    write_batch_file(&dir.join(&train), &stream.estage_train)?;
    write_batch_file(&dir.join(&test), &stream.estage_test)?;
    let file = StreamManifest::contiguous_layout(&stream.schema, names, train, test);
    let text = toml::to_string(&file).map_err(|e| Error::Serde(e.to_string()))?;
    let path = dir.join("manifest.toml");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Scale of the class-dependent mean carried by each partition, in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalFractions {
    pub vanished: f64,
    pub survived: f64,
    pub augmented: f64,
}

impl Default for SignalFractions {
    fn default() -> Self {
        SignalFractions {
            vanished: 1.0,
            survived: 1.0,
            augmented: 1.0,
        }
    }
}

/// Gaussian class-conditional stream: feature `j` of a class-`l` instance is
/// `separation · f(j) · μ[l][j] + noise · ε` with `μ` drawn once per seed and
/// `f(j)` the signal fraction of `j`'s partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub schema: FeatureSchema,
    /// Number of C-stage batches.
    pub batches: usize,
    pub n_per_batch: usize,
    /// Size of each E-stage part (training and test).
    pub estage_n: usize,
    pub separation: f64,
    pub noise: f64,
    pub signal: SignalFractions,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.batches == 0 || self.n_per_batch == 0 || self.estage_n == 0 {
            return Err(Error::Parameter(
                "batches, n_per_batch and estage_n must all be at least 1".into(),
            ));
        }
        if !(self.separation >= 0.0 && self.noise >= 0.0) {
            return Err(Error::Parameter(
                "separation and noise must be non-negative".into(),
            ));
        }
        for f in [
            self.signal.vanished,
            self.signal.survived,
            self.signal.augmented,
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Parameter(format!(
                    "signal fractions must lie in [0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticStream {
    pub schema: FeatureSchema,
    pub cstage: Vec<Batch>,
    pub estage_train: Batch,
    pub estage_test: Batch,
}

struct Generator {
    rng: ChaCha8Rng,
    /// `classes × (d_v + d_s + d_a)` class means, already scaled.
    means: Array2<f64>,
    noise: f64,
    classes: usize,
}

impl Generator {
    fn balanced_labels(&mut self, n: usize) -> Vec<usize> {
        let mut labels: Vec<usize> = (0..n).map(|i| i % self.classes).collect();
        labels.shuffle(&mut self.rng);
        labels
    }

    /// Instances over the full `[v | s | a]` feature range.
    fn instances(&mut self, labels: &[usize]) -> Array2<f64> {
        let d = self.means.ncols();
        let mut x = Array2::zeros((labels.len(), d));
        for (mut row, &l) in x.outer_iter_mut().zip(labels) {
            for (j, v) in row.iter_mut().enumerate() {
                let eps: f64 = self.rng.sample(StandardNormal);
                *v = self.means[[l, j]] + self.noise * eps;
            }
        }
        x
    }
}

/// Deterministic evolving-feature stream for `cfg`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticStream> {
    cfg.validate()?;
    let schema = cfg.schema;
    let (dv, ds, da) = (schema.d_v, schema.d_s, schema.d_a);
    let d = dv + ds + da;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut means = Array2::zeros((schema.classes, d));
    for l in 0..schema.classes {
        for j in 0..d {
            let fraction = if j < dv {
                cfg.signal.vanished
            } else if j < dv + ds {
                cfg.signal.survived
            } else {
                cfg.signal.augmented
            };
            let mu: f64 = rng.sample(StandardNormal);
            means[[l, j]] = cfg.separation * fraction * mu;
        }
    }
    let mut gen = Generator {
        rng,
        means,
        noise: cfg.noise,
        classes: schema.classes,
    };

    let mut cstage = Vec::with_capacity(cfg.batches);
    for _ in 0..cfg.batches {
        let labels = gen.balanced_labels(cfg.n_per_batch);
        let x = gen.instances(&labels);
        cstage.push(Batch::compress(
            x.slice(s![.., ..dv]).to_owned(),
            x.slice(s![.., dv..dv + ds]).to_owned(),
            one_hot_encode(&labels, schema.classes)?,
        ));
    }

    let labels = gen.balanced_labels(2 * cfg.estage_n);
    let x = gen.instances(&labels);
    let expand = |rows: std::ops::Range<usize>| -> Result<Batch> {
        Ok(Batch::expand(
            x.slice(s![rows.clone(), dv..dv + ds]).to_owned(),
            x.slice(s![rows.clone(), dv + ds..]).to_owned(),
            one_hot_encode(&labels[rows], schema.classes)?,
        ))
    };
    let estage_train = expand(0..cfg.estage_n)?;
    let estage_test = expand(cfg.estage_n..2 * cfg.estage_n)?;
    Ok(SyntheticStream {
        schema,
        cstage,
        estage_train,
        estage_test,
    })
}
