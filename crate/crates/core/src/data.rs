//! Datasets, sufficient statistics, splits and file ingestion.
//!
//! CSV files carry a mandatory header. Labeled files use `y`, an optional `g`
//! (group) column, then `x0..x{p-1}`. Unlabeled files only need the `x*`
//! columns; any `y`/`g` columns present are ignored. Floats are written with
//! 17 significant digits so a save/load cycle is bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::rng_stream;

/// On-disk dataset format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.json` maps to JSON, anything else to CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// Labeled source sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Vec<usize>,
    groups: Option<Vec<usize>>,
    class_count: usize,
}

impl LabeledDataset {
    /// Validates shapes, label range and finiteness.
    pub fn new(
        features: Array2<f64>,
        labels: Vec<usize>,
        groups: Option<Vec<usize>>,
        class_count: usize,
    ) -> Result<Self> {
        let n = features.nrows();
        if labels.len() != n {
            return Err(Error::schema(format!(
                "{} feature rows but {} labels",
                n,
                labels.len()
            )));
        }
        if let Some(g) = &groups {
            if g.len() != n {
                return Err(Error::schema(format!(
                    "{} feature rows but {} group entries",
                    n,
                    g.len()
                )));
            }
        }
        if class_count < 2 {
            return Err(Error::schema(format!(
                "class count must be at least 2, got {class_count}"
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::schema(format!(
                "label {bad} outside [0, {class_count})"
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema("non-finite feature value"));
        }
        let features = features.as_standard_layout().into_owned();
        Ok(LabeledDataset {
            features,
            labels,
            groups,
            class_count,
        })
    }

    /// Like [`LabeledDataset::new`] with `K = max(label) + 1` (at least 2).
    pub fn infer_classes(
        features: Array2<f64>,
        labels: Vec<usize>,
        groups: Option<Vec<usize>>,
    ) -> Result<Self> {
        let k = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
        Self::new(features, labels, groups, k)
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn groups(&self) -> Option<&[usize]> {
        self.groups.as_deref()
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Row `i` as a contiguous slice (storage is always row-major).
    pub fn row_slice(&self, i: usize) -> &[f64] {
        row_slice(&self.features, i)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            groups: self
                .groups
                .as_ref()
                .map(|g| indices.iter().map(|&i| g[i]).collect()),
            class_count: self.class_count,
        }
    }

    /// Drops labels and groups.
    pub fn to_unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            features: self.features.clone(),
        }
    }

    /// Per-class sample counts, length `K`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Unlabeled target sample.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    features: Array2<f64>,
}

impl UnlabeledDataset {
    pub fn new(features: Array2<f64>) -> Result<Self> {
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::schema("non-finite feature value"));
        }
        let features = features.as_standard_layout().into_owned();
        Ok(UnlabeledDataset { features })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        row_slice(&self.features, i)
    }

    pub fn select(&self, indices: &[usize]) -> UnlabeledDataset {
        UnlabeledDataset {
            features: self.features.select(Axis(0), indices),
        }
    }
}

fn row_slice(m: &Array2<f64>, i: usize) -> &[f64] {
    let p = m.ncols();
    &m.as_slice().expect("row-major storage")[i * p..(i + 1) * p]
}

/// Feature map `T` through which the tilt acts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SufficientStatistic {
    /// `T(x) = x`.
    #[default]
    Identity,
    /// `T(x) = A x + b` with `A` of shape `d × p`.
    AffineProjection {
        projection: Vec<Vec<f64>>,
        offset: Vec<f64>,
    },
}

impl SufficientStatistic {
    pub fn affine(projection: Vec<Vec<f64>>, offset: Vec<f64>) -> Result<Self> {
        let stat = SufficientStatistic::AffineProjection { projection, offset };
        stat.validate(None)?;
        Ok(stat)
    }

    /// Checks finiteness and, when `input_dim` is given, the column count.
    pub fn validate(&self, input_dim: Option<usize>) -> Result<()> {
        if let SufficientStatistic::AffineProjection { projection, offset } = self {
            if projection.len() != offset.len() || projection.is_empty() {
                return Err(Error::schema("projection rows must match offset length"));
            }
            let p = projection[0].len();
            if projection.iter().any(|r| r.len() != p) {
                return Err(Error::schema("ragged projection matrix"));
            }
            if projection.iter().flatten().chain(offset).any(|v| !v.is_finite()) {
                return Err(Error::schema("non-finite projection entry"));
            }
            if let Some(dim) = input_dim {
                if dim != p {
                    return Err(Error::DimensionMismatch {
                        expected: p,
                        actual: dim,
                    });
                }
            }
        }
        Ok(())
    }

    /// Output dimension `d` for inputs of dimension `p`.
    pub fn output_dim(&self, input_dim: usize) -> usize {
        match self {
            SufficientStatistic::Identity => input_dim,
            SufficientStatistic::AffineProjection { offset, .. } => offset.len(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            SufficientStatistic::Identity => x.to_vec(),
            SufficientStatistic::AffineProjection { projection, offset } => projection
                .iter()
                .zip(offset)
                .map(|(row, b)| row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b)
                .collect(),
        }
    }

    /// Applies `T` to every row, returning an `n × d` matrix.
    pub fn transform(&self, features: &Array2<f64>) -> Array2<f64> {
        match self {
            SufficientStatistic::Identity => features.clone(),
            SufficientStatistic::AffineProjection { offset, .. } => {
                let d = offset.len();
                let mut out = Array2::zeros((features.nrows(), d));
                for (i, row) in features.outer_iter().enumerate() {
                    let t = self.apply(&row.to_vec());
                    out.row_mut(i).assign(&ArrayView1::from(&t));
                }
                out
            }
        }
    }
}

/// Deterministic two-way split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fraction: f64,
    pub seed: u64,
}

/// Index partition behind [`split`]; both parts are sorted ascending.
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.fraction > 0.0 && spec.fraction < 1.0) {
        return Err(Error::Config(format!(
            "split fraction must lie in (0, 1), got {}",
            spec.fraction
        )));
    }
    let first = (spec.fraction * n as f64).round() as usize;
    if first == 0 || first >= n {
        return Err(Error::DegenerateSplit(format!(
            "n = {n}, fraction = {} leaves an empty part",
            spec.fraction
        )));
    }
    let mut rng = rng_stream(spec.seed, 0, 0);
    let mut a = sample(&mut rng, n, first).into_vec();
    a.sort_unstable();
    let mut in_a = vec![false; n];
    for &i in &a {
        in_a[i] = true;
    }
    let b = (0..n).filter(|&i| !in_a[i]).collect();
    Ok((a, b))
}

/// Splits into a first part of `round(fraction · n)` rows and the remainder.
pub fn split(ds: &LabeledDataset, spec: SplitSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let (a, b) = split_indices(ds.len(), spec)?;
    Ok((ds.select(&a), ds.select(&b)))
}

/// `floor(m · pi)` with a small guard against representation error
/// (`0.29 · 100` is `28.999…` in binary floating point).
pub fn mix_count(m: usize, pi: f64) -> usize {
    (m as f64 * pi + 1e-9).floor() as usize
}

/// Appends `floor(m · pi)` target rows, sampled without replacement, to the
/// source (`m` = source rows). When the source carries groups, appended rows
/// are tagged with the fresh group id `max(source group) + 1`.
pub fn mix_target_into_source(
    src: &LabeledDataset,
    tgt_labeled: &LabeledDataset,
    pi: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if !(0.0..1.0).contains(&pi) {
        return Err(Error::Config(format!("mixing proportion must lie in [0, 1), got {pi}")));
    }
    if src.dim() != tgt_labeled.dim() {
        return Err(Error::DimensionMismatch {
            expected: src.dim(),
            actual: tgt_labeled.dim(),
        });
    }
    if src.class_count() != tgt_labeled.class_count() {
        return Err(Error::schema(format!(
            "class counts differ: source {}, target {}",
            src.class_count(),
            tgt_labeled.class_count()
        )));
    }
    let needed = mix_count(src.len(), pi);
    if needed > tgt_labeled.len() {
        return Err(Error::InsufficientTarget {
            needed,
            available: tgt_labeled.len(),
        });
    }
    if needed == 0 {
        return Ok(src.clone());
    }
    let mut rng = rng_stream(seed, 0, 1);
    let mut picked = sample(&mut rng, tgt_labeled.len(), needed).into_vec();
    picked.sort_unstable();
    let extra = tgt_labeled.select(&picked);

    let features = ndarray::concatenate(Axis(0), &[src.features.view(), extra.features.view()])
        .expect("column counts checked above");
    let mut labels = src.labels.clone();
    labels.extend_from_slice(&extra.labels);
    let groups = src.groups.as_ref().map(|g| {
        let tag = g.iter().copied().max().map_or(0, |m| m + 1);
        let mut out = g.clone();
        out.extend(std::iter::repeat_n(tag, needed));
        out
    });
    LabeledDataset::new(features, labels, groups, src.class_count)
}

#[derive(Serialize, Deserialize)]
struct LabeledJson {
    features: Vec<Vec<f64>>,
    labels: Vec<i64>,
    #[serde(default)]
    groups: Option<Vec<i64>>,
}

#[derive(Serialize, Deserialize)]
struct UnlabeledJson {
    features: Vec<Vec<f64>>,
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, expected_cols: Option<usize>) -> Result<Array2<f64>> {
    let p = match (rows.first(), expected_cols) {
        (Some(r), _) => r.len(),
        (None, Some(p)) => p,
        (None, None) => 0,
    };
    if let Some(bad) = rows.iter().position(|r| r.len() != p) {
        return Err(Error::schema(format!(
            "ragged row {bad}: expected {p} values, got {}",
            rows[bad].len()
        )));
    }
    let n = rows.len();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, p), flat).map_err(|e| Error::schema(e.to_string()))
}

fn to_labels(raw: Vec<i64>, what: &str) -> Result<Vec<usize>> {
    raw.into_iter()
        .map(|v| {
            usize::try_from(v).map_err(|_| Error::schema(format!("negative {what} {v}")))
        })
        .collect()
}

fn finalize_labels(
    features: Array2<f64>,
    labels: Vec<usize>,
    groups: Option<Vec<usize>>,
    class_count: Option<usize>,
) -> Result<LabeledDataset> {
    let inferred = labels.iter().copied().max().map_or(2, |m| (m + 1).max(2));
    let k = match class_count {
        Some(k) if k < inferred => {
            return Err(Error::schema(format!(
                "class count override {k} is below max label + 1 = {inferred}"
            )))
        }
        Some(k) => k,
        None => inferred,
    };
    LabeledDataset::new(features, labels, groups, k)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn parse_float(s: &str, row: usize, col: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::schema(format!("row {row}, column {col}: cannot parse {s:?}")))?;
    if !v.is_finite() {
        return Err(Error::schema(format!("row {row}, column {col}: non-finite value")));
    }
    Ok(v)
}

fn csv_error(e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::UnequalLengths { .. } => Error::schema(format!("ragged csv: {e}")),
        _ => Error::Csv(e),
    }
}

/// Locates `x0..x{p-1}` in a header; returns their column indices in order.
fn feature_columns(header: &csv::StringRecord) -> Result<Vec<usize>> {
    let mut cols = Vec::new();
    loop {
        let name = format!("x{}", cols.len());
        match header.iter().position(|h| h.trim() == name) {
            Some(c) => cols.push(c),
            None => break,
        }
    }
    let xs = header.iter().filter(|h| h.trim().starts_with('x')).count();
    if xs != cols.len() {
        return Err(Error::schema("feature columns must be named x0..x{p-1} without gaps"));
    }
    Ok(cols)
}

fn load_labeled_csv(path: &Path, class_count: Option<usize>) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(open(path)?));
    let header = rdr.headers().map_err(csv_error)?.clone();
    let y_col = header
        .iter()
        .position(|h| h.trim() == "y")
        .ok_or_else(|| Error::schema("missing `y` column"))?;
    let g_col = header.iter().position(|h| h.trim() == "g");
    let x_cols = feature_columns(&header)?;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut groups: Vec<Option<i64>> = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let y: i64 = rec[y_col]
            .trim()
            .parse()
            .map_err(|_| Error::schema(format!("row {r}: bad label {:?}", &rec[y_col])))?;
        labels.push(y);
        if let Some(gc) = g_col {
            let cell = rec[gc].trim();
            groups.push(if cell.is_empty() {
                None
            } else {
                Some(cell.parse().map_err(|_| {
                    Error::schema(format!("row {r}: bad group {cell:?}"))
                })?)
            });
        }
        let row = x_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| parse_float(&rec[c], r, &format!("x{j}")))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let groups = if groups.iter().all(Option::is_none) {
        None
    } else if groups.iter().all(Option::is_some) {
        Some(to_labels(groups.into_iter().flatten().collect(), "group")?)
    } else {
        return Err(Error::schema("group column must be filled for all rows or none"));
    };
    let features = rows_to_matrix(rows, Some(x_cols.len()))?;
    finalize_labels(features, to_labels(labels, "label")?, groups, class_count)
}

fn load_labeled_json(path: &Path, class_count: Option<usize>) -> Result<LabeledDataset> {
    let raw: LabeledJson = serde_json::from_reader(BufReader::new(open(path)?))?;
    let features = rows_to_matrix(raw.features, None)?;
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::schema("non-finite feature value"));
    }
    let groups = raw.groups.map(|g| to_labels(g, "group")).transpose()?;
    finalize_labels(features, to_labels(raw.labels, "label")?, groups, class_count)
}

/// Loads a labeled dataset; `class_count` overrides the `max(label) + 1` rule.
pub fn load_labeled(
    path: impl AsRef<Path>,
    format: Format,
    class_count: Option<usize>,
) -> Result<LabeledDataset> {
    let path = path.as_ref();
    match format {
        Format::Csv => load_labeled_csv(path, class_count),
        Format::Json => load_labeled_json(path, class_count),
    }
}

pub fn load_unlabeled(path: impl AsRef<Path>, format: Format) -> Result<UnlabeledDataset> {
    let path = path.as_ref();
    match format {
        Format::Csv => {
            let mut rdr = csv::ReaderBuilder::new()
                .has_headers(true)
                .from_reader(BufReader::new(open(path)?));
            let header = rdr.headers().map_err(csv_error)?.clone();
            let x_cols = feature_columns(&header)?;
            let mut rows = Vec::new();
            for (r, rec) in rdr.records().enumerate() {
                let rec = rec.map_err(csv_error)?;
                rows.push(
                    x_cols
                        .iter()
                        .enumerate()
                        .map(|(j, &c)| parse_float(&rec[c], r, &format!("x{j}")))
                        .collect::<Result<Vec<f64>>>()?,
                );
            }
            UnlabeledDataset::new(rows_to_matrix(rows, Some(x_cols.len()))?)
        }
        Format::Json => {
            let raw: UnlabeledJson = serde_json::from_reader(BufReader::new(open(path)?))?;
            UnlabeledDataset::new(rows_to_matrix(raw.features, None)?)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// 17 significant digits, enough for an exact f64 round trip.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn matrix_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

pub fn save_labeled(ds: &LabeledDataset, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    match format {
        Format::Csv => {
            let mut header = vec!["y".to_string()];
            if ds.groups.is_some() {
                header.push("g".into());
            }
            header.extend((0..ds.dim()).map(|j| format!("x{j}")));
            writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
            for i in 0..ds.len() {
                let mut cells = vec![ds.labels[i].to_string()];
                if let Some(g) = &ds.groups {
                    cells.push(g[i].to_string());
                }
                cells.extend(ds.features.row(i).iter().map(|&v| fmt_f64(v)));
                writeln!(w, "{}", cells.join(",")).map_err(|e| Error::io(path, e))?;
            }
        }
        Format::Json => {
            let raw = LabeledJson {
                features: matrix_rows(&ds.features),
                labels: ds.labels.iter().map(|&y| y as i64).collect(),
                groups: ds
                    .groups
                    .as_ref()
                    .map(|g| g.iter().map(|&v| v as i64).collect()),
            };
            serde_json::to_writer(&mut w, &raw)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn save_unlabeled(
    ds: &UnlabeledDataset,
    path: impl AsRef<Path>,
    format: Format,
) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    match format {
        Format::Csv => {
            let header: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
            writeln!(w, "{}", header.join(",")).map_err(|e| Error::io(path, e))?;
            for row in ds.features.outer_iter() {
                let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
                writeln!(w, "{}", cells.join(",")).map_err(|e| Error::io(path, e))?;
            }
        }
        Format::Json => {
            serde_json::to_writer(
                &mut w,
                &UnlabeledJson {
                    features: matrix_rows(&ds.features),
                },
            )?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use std::fs;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    fn toy(n: usize) -> LabeledDataset {
        let feats = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64 * 0.5);
        let labels = (0..n).map(|i| i % 2).collect();
        LabeledDataset::new(feats, labels, Some((0..n).map(|i| i % 3).collect()), 2).unwrap()
    }

    #[test]
    fn minimal_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "y,x0\n0,1.0\n1,2.0\n");
        let ds = load_labeled(&p, Format::Csv, None).unwrap();
        assert_eq!((ds.len(), ds.class_count(), ds.dim()), (2, 2, 1));
        assert!(ds.groups().is_none());
    }

    #[test]
    fn class_count_is_max_plus_one_unless_overridden() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "y,x0\n0,1.0\n3,2.0\n");
        assert_eq!(load_labeled(&p, Format::Csv, None).unwrap().class_count(), 4);
        assert_eq!(load_labeled(&p, Format::Csv, Some(6)).unwrap().class_count(), 6);
        assert!(matches!(
            load_labeled(&p, Format::Csv, Some(3)),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let nan = write(&dir, "nan.csv", "y,x0\n0,NaN\n");
        assert!(matches!(load_labeled(&nan, Format::Csv, None), Err(Error::Schema(_))));
        let neg = write(&dir, "neg.csv", "y,x0\n-1,1.0\n");
        assert!(matches!(load_labeled(&neg, Format::Csv, None), Err(Error::Schema(_))));
        let ragged = write(&dir, "rag.csv", "y,x0,x1\n0,1.0,2.0\n1,2.0\n");
        assert!(matches!(load_labeled(&ragged, Format::Csv, None), Err(Error::Schema(_))));
        let json = write(&dir, "rag.json", r#"{"features": [[1.0],[1.0,2.0]], "labels": [0,1]}"#);
        assert!(matches!(load_labeled(&json, Format::Json, None), Err(Error::Schema(_))));
        assert!(matches!(
            load_labeled(dir.path().join("missing.csv"), Format::Csv, None),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn empty_group_column_means_absent() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "g.csv", "y,g,x0\n0,,1.0\n1,,2.0\n");
        assert!(load_labeled(&p, Format::Csv, None).unwrap().groups().is_none());
        let q = write(&dir, "g2.csv", "y,g,x0\n0,2,1.0\n1,0,2.0\n");
        assert_eq!(load_labeled(&q, Format::Csv, None).unwrap().groups(), Some(&[2, 0][..]));
    }

    #[test]
    fn json_groups_null() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.json", r#"{"features": [[1.5],[2.0]], "labels": [0,1], "groups": null}"#);
        let ds = load_labeled(&p, Format::Json, None).unwrap();
        assert_eq!(ds.features(), &array![[1.5], [2.0]]);
        assert!(ds.groups().is_none());
    }

    #[test]
    fn split_examples() {
        let ds = toy(10);
        let spec = SplitSpec { fraction: 0.5, seed: 7 };
        let (a, b) = split_indices(10, spec).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(split_indices(10, spec).unwrap(), (a, b));
        let (p1, p2) = split(&ds, spec).unwrap();
        assert_eq!(p1.len() + p2.len(), 10);
        assert!(matches!(split(&toy(1), spec), Err(Error::DegenerateSplit(_))));
    }

    #[test]
    fn mixing_counts() {
        let src = toy(1000);
        let tgt = toy(200);
        assert_eq!(mix_target_into_source(&src, &tgt, 0.0, 3).unwrap(), src);
        let mixed = mix_target_into_source(&src, &tgt, 0.05, 3).unwrap();
        assert_eq!(mixed.len(), 1050);
        let tag = mixed.groups().unwrap()[1000];
        assert_eq!(tag, 3);
        assert!(mixed.groups().unwrap()[1000..].iter().all(|&g| g == tag));
        let small = toy(100);
        assert!(matches!(
            mix_target_into_source(&src, &small, 0.5, 3),
            Err(Error::InsufficientTarget { needed: 500, available: 100 })
        ));
        assert_eq!(mix_count(100, 0.29), 29);
    }

    #[test]
    fn unlabeled_ignores_label_columns() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "t.csv", "y,g,x0,x1\n0,1,1.0,2.0\n");
        let ds = load_unlabeled(&p, Format::Csv).unwrap();
        assert_eq!(ds.features(), &array![[1.0, 2.0]]);
    }

    #[test]
    fn affine_statistic() {
        let t = SufficientStatistic::affine(vec![vec![1.0, 2.0]], vec![0.5]).unwrap();
        assert_eq!(t.apply(&[1.0, 1.0]), vec![3.5]);
        assert_eq!(t.output_dim(2), 1);
        assert!(SufficientStatistic::affine(vec![vec![f64::NAN]], vec![0.0]).is_err());
        assert_eq!(SufficientStatistic::Identity.apply(&[4.0]), vec![4.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn save_load_round_trip_is_bit_exact(
            vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 6..30),
            json in any::<bool>(),
            seed in any::<u64>(),
        ) {
            let n = vals.len() / 3;
            let feats = Array2::from_shape_vec((n, 3), vals[..n * 3].to_vec()).unwrap();
            let labels = (0..n).map(|i| i % 3).collect();
            let ds = LabeledDataset::new(feats, labels, Some(vec![1; n]), 3).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let fmt = if json { Format::Json } else { Format::Csv };
            let p = dir.path().join("d");
            save_labeled(&ds, &p, fmt).unwrap();
            let back = load_labeled(&p, fmt, Some(3)).unwrap();
            prop_assert_eq!(&back, &ds);
            save_unlabeled(&ds.to_unlabeled(), &p, fmt).unwrap();
            prop_assert_eq!(load_unlabeled(&p, fmt).unwrap(), ds.to_unlabeled());

            if n >= 2 {
                let spec = SplitSpec { fraction: 0.5, seed };
                prop_assert_eq!(split_indices(n, spec).unwrap(), split_indices(n, spec).unwrap());
            }
        }
    }
}
