//! Tabular data model: feature columns with lineage, the target, CSV
//! ingestion, train/validation splitting and quantile discretization.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lineage::{sanitize_ident, LineageExpr};

/// Integer-valued targets with at most this many labels are classified.
pub const MAX_INFERRED_CLASSES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Classification,
    Regression,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Classification => "classification",
            TaskKind::Regression => "regression",
        }
    }
}

/// How the task kind of a freshly loaded target is decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TaskHint {
    #[default]
    Auto,
    Classification,
    Regression,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMeta {
    pub name: String,
    pub lineage: LineageExpr,
    pub is_original: bool,
}

impl FeatureMeta {
    pub fn from_lineage(lineage: LineageExpr) -> Self {
        FeatureMeta {
            name: lineage.to_string(),
            is_original: lineage.is_ident(),
            lineage,
        }
    }

    pub fn original(name: impl Into<String>) -> Self {
        Self::from_lineage(LineageExpr::ident(name))
    }
}

/// One feature column. Values and metadata are shared between feature sets
/// derived from one another.
#[derive(Debug, Clone)]
pub struct Column {
    pub meta: Arc<FeatureMeta>,
    pub values: Arc<[f64]>,
}

impl Column {
    pub fn new(meta: FeatureMeta, values: Vec<f64>) -> Self {
        Column {
            meta: Arc::new(meta),
            values: values.into(),
        }
    }

    pub fn name(&self) -> &str {
        &self.meta.name
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub name: String,
    pub values: Vec<f64>,
    pub kind: TaskKind,
    /// Number of distinct labels for classification; 0 for regression.
    pub num_classes: usize,
    /// Original spelling of each class label, indexed by label.
    pub class_names: Option<Vec<String>>,
}

impl Target {
    pub fn regression(name: impl Into<String>, values: Vec<f64>) -> Self {
        Target {
            name: name.into(),
            values,
            kind: TaskKind::Regression,
            num_classes: 0,
            class_names: None,
        }
    }

    /// Labels must already be in `0..num_classes`.
    pub fn classification(name: impl Into<String>, labels: Vec<usize>) -> Self {
        let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
        Target {
            name: name.into(),
            values: labels.iter().map(|&l| l as f64).collect(),
            kind: TaskKind::Classification,
            num_classes,
            class_names: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.values.iter().map(|&v| v as usize).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Target {
        Target {
            name: self.name.clone(),
            values: rows.iter().map(|&r| self.values[r]).collect(),
            kind: self.kind,
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }

    fn render(&self, row: usize) -> String {
        let v = self.values[row];
        match (&self.class_names, self.kind) {
            (Some(names), TaskKind::Classification) => names[v as usize].clone(),
            _ => format!("{v}"),
        }
    }
}

/// A numeric sample × feature matrix stored column-wise, plus its target.
#[derive(Debug, Clone)]
pub struct FeatureSet {
    columns: Vec<Column>,
    target: Arc<Target>,
}

impl FeatureSet {
    pub fn new(columns: Vec<Column>, target: Target) -> Result<Self> {
        Self::with_shared_target(columns, Arc::new(target))
    }

    pub fn with_shared_target(columns: Vec<Column>, target: Arc<Target>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::TooSmall { rows: 2, cols: 1 });
        }
        let m = target.len();
        for c in &columns {
            if c.values.len() != m {
                return Err(Error::LengthMismatch {
                    left: c.values.len(),
                    right: m,
                });
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("feature column"));
            }
        }
        if target.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("target"));
        }
        Ok(FeatureSet { columns, target })
    }

    /// Build a feature set of original columns from raw vectors.
    pub fn from_columns(names: &[&str], columns: Vec<Vec<f64>>, target: Target) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::LengthMismatch {
                left: names.len(),
                right: columns.len(),
            });
        }
        let cols = names
            .iter()
            .zip(columns)
            .map(|(n, v)| {
                let ident = sanitize_ident(n).ok_or_else(|| Error::UnsupportedHeader(n.to_string()))?;
                Ok(Column::new(FeatureMeta::original(ident), v))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cols, target)
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, i: usize) -> &Column {
        &self.columns[i]
    }

    pub fn values(&self, i: usize) -> &[f64] {
        &self.columns[i].values
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn shared_target(&self) -> Arc<Target> {
        Arc::clone(&self.target)
    }

    pub fn task(&self) -> TaskKind {
        self.target.kind
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(Column::name).collect()
    }

    /// Column subset in the given order, sharing values, metadata and target.
    pub fn select_columns(&self, indices: &[usize]) -> Result<FeatureSet> {
        if indices.is_empty() {
            return Err(Error::EmptyCluster);
        }
        let cols = indices
            .iter()
            .map(|&i| {
                self.columns.get(i).cloned().ok_or(Error::IndexOutOfRange {
                    index: i,
                    len: self.columns.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureSet {
            columns: cols,
            target: Arc::clone(&self.target),
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureSet {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                meta: Arc::clone(&c.meta),
                values: rows.iter().map(|&r| c.values[r]).collect(),
            })
            .collect();
        FeatureSet {
            columns,
            target: Arc::new(self.target.select_rows(rows)),
        }
    }

    /// New feature set with `extra` appended after the existing columns.
    pub fn with_appended(&self, extra: Vec<Column>) -> FeatureSet {
        let mut columns = self.columns.clone();
        columns.extend(extra);
        FeatureSet {
            columns,
            target: Arc::clone(&self.target),
        }
    }

    /// Map from identifier to values for every original column.
    pub fn original_lookup(&self) -> HashMap<&str, &[f64]> {
        self.columns
            .iter()
            .filter(|c| c.meta.is_original)
            .map(|c| (c.meta.name.as_str(), &c.values[..]))
            .collect()
    }

    /// Re-evaluate every column's lineage over `original` and compare
    /// bit-for-bit. Returns the names of columns that fail.
    pub fn lineage_mismatches(&self, original: &FeatureSet) -> Vec<String> {
        let lookup = original.original_lookup();
        self.columns
            .iter()
            .filter(|c| match c.meta.lineage.evaluate(&lookup) {
                Ok(v) => !bitwise_eq(&v, &c.values),
                Err(_) => true,
            })
            .map(|c| c.meta.name.clone())
            .collect()
    }

    /// Same column names, values and target, compared bit-for-bit.
    pub fn bitwise_eq(&self, other: &FeatureSet) -> bool {
        self.n_cols() == other.n_cols()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.meta.name == b.meta.name && bitwise_eq(&a.values, &b.values))
            && bitwise_eq(&self.target.values, &other.target.values)
    }
}

pub fn bitwise_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    pub task: TaskHint,
    /// Replace missing feature cells with the column median.
    pub impute_median: bool,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "N/A" | "NaN" | "nan" | "null" | "NULL")
}

pub fn load_csv(path: impl AsRef<Path>, target_column: &str, opts: LoadOptions) -> Result<FeatureSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, target_column, opts)
}

/// Header names are parsed under the lineage grammar when they render back
/// identically (so transformed outputs reload with their lineage); anything
/// else is taken as an original identifier.
fn header_meta(header: &str, col: usize) -> Result<FeatureMeta> {
    if header.trim().is_empty() {
        return Err(Error::EmptyHeader(col));
    }
    if let Ok(expr) = LineageExpr::parse(header) {
        if expr.to_string() == header {
            return Ok(FeatureMeta::from_lineage(expr));
        }
    }
    let ident = sanitize_ident(header).ok_or_else(|| Error::UnsupportedHeader(header.to_string()))?;
    Ok(FeatureMeta::original(ident))
}

pub fn read_csv<R: Read>(reader: R, target_column: &str, opts: LoadOptions) -> Result<FeatureSet> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();

    let target_idx = headers
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| Error::MissingTargetColumn(target_column.to_string()))?;

    let mut metas = Vec::with_capacity(headers.len().saturating_sub(1));
    let mut seen = HashSet::new();
    for (i, h) in headers.iter().enumerate() {
        if i == target_idx {
            if !seen.insert(h.clone()) {
                return Err(Error::DuplicateHeader(h.clone()));
            }
            continue;
        }
        let meta = header_meta(h, i)?;
        if !seen.insert(meta.name.clone()) {
            return Err(Error::DuplicateHeader(meta.name));
        }
        metas.push((i, meta));
    }

    let mut raw_cols: Vec<Vec<Option<f64>>> = vec![Vec::new(); metas.len()];
    let mut raw_target = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (slot, (ci, meta)) in metas.iter().enumerate() {
            let cell = rec.get(*ci).unwrap_or("").trim();
            let v = if is_missing(cell) {
                if !opts.impute_median {
                    return Err(Error::MissingValue {
                        row,
                        column: meta.name.clone(),
                    });
                }
                None
            } else {
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Some(v),
                    _ => {
                        return Err(Error::NonNumeric {
                            row,
                            column: meta.name.clone(),
                            value: cell.to_string(),
                        })
                    }
                }
            };
            raw_cols[slot].push(v);
        }
        let t = rec.get(target_idx).unwrap_or("").trim().to_string();
        if is_missing(&t) {
            return Err(Error::MissingValue {
                row,
                column: target_column.to_string(),
            });
        }
        raw_target.push(t);
    }

    if raw_target.len() < 2 || metas.is_empty() {
        return Err(Error::TooSmall { rows: 2, cols: 1 });
    }

    let target = build_target(target_column, &raw_target, opts.task)?;
    let columns = metas
        .into_iter()
        .zip(raw_cols)
        .map(|((_, meta), cells)| Column::new(meta, fill_missing(cells)))
        .collect();
    FeatureSet::new(columns, target)
}

fn fill_missing(cells: Vec<Option<f64>>) -> Vec<f64> {
    let mut present: Vec<f64> = cells.iter().flatten().copied().collect();
    if present.len() == cells.len() {
        return present;
    }
    let median = if present.is_empty() {
        0.0
    } else {
        present.sort_by(f64::total_cmp);
        quantile_sorted(&present, 0.5)
    };
    cells.into_iter().map(|c| c.unwrap_or(median)).collect()
}

fn build_target(name: &str, raw: &[String], hint: TaskHint) -> Result<Target> {
    let numeric: Option<Vec<f64>> = raw
        .iter()
        .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect();

    let distinct: HashSet<&str> = raw.iter().map(String::as_str).collect();
    if distinct.len() < 2 {
        if let Some(vals) = &numeric {
            if vals.iter().all(|v| v.to_bits() == vals[0].to_bits()) {
                return Err(Error::ConstantTarget);
            }
        } else {
            return Err(Error::ConstantTarget);
        }
    }

    let kind = match (hint, &numeric) {
        (TaskHint::Classification, _) => TaskKind::Classification,
        (TaskHint::Regression, Some(_)) => TaskKind::Regression,
        (TaskHint::Regression, None) => return Err(Error::NonNumericTarget(name.to_string())),
        (TaskHint::Auto, None) => TaskKind::Classification,
        (TaskHint::Auto, Some(vals)) => {
            let integral = vals.iter().all(|v| v.fract() == 0.0);
            let mut uniq: Vec<u64> = vals.iter().map(|v| v.to_bits()).collect();
            uniq.sort_unstable();
            uniq.dedup();
            if integral && uniq.len() <= MAX_INFERRED_CLASSES {
                TaskKind::Classification
            } else {
                TaskKind::Regression
            }
        }
    };

    match kind {
        TaskKind::Regression => {
            let vals = numeric.expect("checked above");
            if vals.iter().all(|&v| v == vals[0]) {
                return Err(Error::ConstantTarget);
            }
            Ok(Target::regression(name, vals))
        }
        TaskKind::Classification => {
            // Numeric labels order numerically, anything else lexically.
            let mut order: Vec<&String> = distinct_in_order(raw);
            match &numeric {
                Some(_) => order.sort_by(|a, b| {
                    a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()).then(a.cmp(b))
                }),
                None => order.sort(),
            }
            let index: BTreeMap<&str, usize> =
                order.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
            let labels: Vec<usize> = raw.iter().map(|s| index[s.as_str()]).collect();
            let mut t = Target::classification(name, labels);
            t.num_classes = order.len();
            t.class_names = Some(order.into_iter().cloned().collect());
            Ok(t)
        }
    }
}

fn distinct_in_order(raw: &[String]) -> Vec<&String> {
    let mut seen = HashSet::new();
    raw.iter().filter(|s| seen.insert(s.as_str())).collect()
}

/// Write features followed by the target column.
pub fn write_csv_to<W: Write>(fs: &FeatureSet, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = fs.names();
    header.push(&fs.target().name);
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for r in 0..fs.n_rows() {
        row.clear();
        for c in fs.columns() {
            row.push(format!("{}", c.values[r]));
        }
        row.push(fs.target().render(r));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_csv(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(fs, std::io::BufWriter::new(file))
}

/// Row indices for a train/validation split. Stratified by class for
/// classification when every class has at least two rows. Both index lists
/// are sorted ascending.
pub fn split_indices(target: &Target, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let m = target.len();
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::EmptySplit { ratio, rows: m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut valid) = (Vec::new(), Vec::new());

    let stratify = target.kind == TaskKind::Classification && {
        let mut counts = vec![0usize; target.num_classes.max(1)];
        for l in target.labels() {
            counts[l] += 1;
        }
        let ok = counts.iter().all(|&c| c == 0 || c >= 2);
        if !ok {
            log::warn!("a class has a single sample; falling back to an unstratified split");
        }
        ok
    };

    if stratify {
        let labels = target.labels();
        for class in 0..target.num_classes {
            let mut rows: Vec<usize> = (0..m).filter(|&r| labels[r] == class).collect();
            if rows.is_empty() {
                continue;
            }
            rows.shuffle(&mut rng);
            let n = rows.len();
            let k = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
            train.extend_from_slice(&rows[..k]);
            valid.extend_from_slice(&rows[k..]);
        }
    } else {
        let mut rows: Vec<usize> = (0..m).collect();
        rows.shuffle(&mut rng);
        let k = (ratio * m as f64).round() as usize;
        if k == 0 || k >= m {
            return Err(Error::EmptySplit { ratio, rows: m });
        }
        train.extend_from_slice(&rows[..k]);
        valid.extend_from_slice(&rows[k..]);
    }
    train.sort_unstable();
    valid.sort_unstable();
    Ok((train, valid))
}

pub fn split_train_valid(fs: &FeatureSet, ratio: f64, seed: u64) -> Result<(FeatureSet, FeatureSet)> {
    let (train, valid) = split_indices(fs.target(), ratio, seed)?;
    Ok((fs.select_rows(&train), fs.select_rows(&valid)))
}

/// Default bin count for MI estimation: `min(16, ⌈√M⌉)`.
pub fn default_bins(rows: usize) -> usize {
    ((rows as f64).sqrt().ceil() as usize).clamp(1, 16)
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Equal-frequency binning.
///
/// Cut `j` (for `j = 1..bins`) sits at the linear-interpolation quantile
/// `j / bins`. A value's raw label is the number of cuts it strictly exceeds;
/// raw labels are then compacted so collapsed bins leave no gaps. Because a
/// value exceeds an interpolated quantile exactly when it exceeds the lower
/// order statistic of that quantile, the comparison is done on order
/// statistics, which makes the labels invariant under increasing transforms.
pub fn discretize(column: &[f64], bins: usize) -> Vec<usize> {
    let n = column.len();
    if n == 0 {
        return Vec::new();
    }
    let bins = bins.max(1);
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..bins).map(|j| sorted[(n - 1) * j / bins]).collect();

    let raw: Vec<usize> = column
        .iter()
        .map(|&x| cuts.partition_point(|&c| c < x))
        .collect();

    let mut used = vec![false; bins];
    for &r in &raw {
        used[r] = true;
    }
    let mut remap = vec![0usize; bins];
    let mut next = 0;
    for (r, u) in used.iter().enumerate() {
        if *u {
            remap[r] = next;
            next += 1;
        }
    }
    raw.into_iter().map(|r| remap[r]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOY: &str = "a,b,y\n1,2,0\n3,4,1\n5,6,0\n7,8,1\n";

    #[test]
    fn loads_toy_classification() {
        let fs = read_csv(TOY.as_bytes(), "y", LoadOptions::default()).unwrap();
        assert_eq!(fs.n_rows(), 4);
        assert_eq!(fs.n_cols(), 2);
        assert_eq!(fs.task(), TaskKind::Classification);
        assert_eq!(fs.target().num_classes, 2);
        assert!(fs.columns().iter().all(|c| c.meta.is_original));
        assert_eq!(fs.values(1), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn missing_target_column() {
        let err = read_csv(TOY.as_bytes(), "z", LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MissingTargetColumn(ref c) if c == "z"));
    }

    #[test]
    fn non_numeric_cell_reports_location() {
        let csv = "a,b,y\n1,2,0\n3,abc,1\n";
        match read_csv(csv.as_bytes(), "y", LoadOptions::default()).unwrap_err() {
            Error::NonNumeric { row, column, value } => {
                assert_eq!((row, column.as_str(), value.as_str()), (1, "b", "abc"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_and_constant_target() {
        let dup = "a,a,y\n1,2,0\n3,4,1\n";
        assert!(matches!(
            read_csv(dup.as_bytes(), "y", LoadOptions::default()),
            Err(Error::DuplicateHeader(_))
        ));
        let constant = "a,y\n1,5\n2,5\n3,5\n";
        assert!(matches!(
            read_csv(constant.as_bytes(), "y", LoadOptions::default()),
            Err(Error::ConstantTarget)
        ));
    }

    #[test]
    fn missing_values_rejected_or_imputed() {
        let csv = "a,b,y\n1,,0.5\n3,4,1.5\n5,10,2.5\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), "y", LoadOptions::default()),
            Err(Error::MissingValue { row: 0, .. })
        ));
        let opts = LoadOptions {
            impute_median: true,
            ..Default::default()
        };
        let fs = read_csv(csv.as_bytes(), "y", opts).unwrap();
        assert_eq!(fs.values(1), &[7.0, 4.0, 10.0]);
        assert_eq!(fs.task(), TaskKind::Regression);
    }

    #[test]
    fn task_inference_and_override() {
        let many: String = std::iter::once("a,y\n".to_string())
            .chain((0..30).map(|i| format!("{i},{i}\n")))
            .collect();
        let fs = read_csv(many.as_bytes(), "y", LoadOptions::default()).unwrap();
        assert_eq!(fs.task(), TaskKind::Regression);
        let opts = LoadOptions {
            task: TaskHint::Regression,
            ..Default::default()
        };
        assert_eq!(read_csv(TOY.as_bytes(), "y", opts).unwrap().task(), TaskKind::Regression);

        let cat = "a,y\n1,cat\n2,dog\n3,cat\n";
        let fs = read_csv(cat.as_bytes(), "y", LoadOptions::default()).unwrap();
        assert_eq!(fs.target().labels(), vec![0, 1, 0]);
        assert!(matches!(read_csv(cat.as_bytes(), "y", opts), Err(Error::NonNumericTarget(_))));
    }

    #[test]
    fn spaces_in_headers_become_underscores() {
        let csv = "residual sugar,y\n1,0\n2,1\n";
        let fs = read_csv(csv.as_bytes(), "y", LoadOptions::default()).unwrap();
        assert_eq!(fs.names(), vec!["residual_sugar"]);
    }

    #[test]
    fn write_then_load_is_identity() {
        let csv = "x1,x 2,label\n0.1,1e-300,b\n-2.5,3.75,a\n7,0.30000000000000004,b\n";
        let fs = read_csv(csv.as_bytes(), "label", LoadOptions::default()).unwrap();
        let mut buf = Vec::new();
        write_csv_to(&fs, &mut buf).unwrap();
        let back = read_csv(&buf[..], "label", LoadOptions::default()).unwrap();
        assert!(fs.bitwise_eq(&back));
        assert_eq!(back.target().class_names, fs.target().class_names);
    }

    #[test]
    fn generated_headers_reload_with_lineage() {
        let csv = "a,(a + b),y\n1,2,0\n2,3,1\n";
        let fs = read_csv(csv.as_bytes(), "y", LoadOptions::default()).unwrap();
        assert!(!fs.column(1).meta.is_original);
        assert_eq!(fs.column(1).meta.lineage.depth(), 1);
    }

    fn regression_target(m: usize) -> Target {
        Target::regression("y", (0..m).map(|i| i as f64 * 0.5).collect())
    }

    #[test]
    fn split_cardinality_and_determinism() {
        let t = regression_target(10);
        let (tr, va) = split_indices(&t, 0.8, 7).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        assert_eq!(split_indices(&t, 0.8, 7).unwrap(), (tr.clone(), va.clone()));
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        let other = split_indices(&t, 0.8, 8).unwrap();
        assert_ne!(other.1, va);
    }

    #[test]
    fn split_is_stratified() {
        let t = Target::classification("y", vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]);
        let (tr, va) = split_indices(&t, 0.8, 3).unwrap();
        let count = |rows: &[usize], c: usize| rows.iter().filter(|&&r| t.labels()[r] == c).count();
        assert_eq!((count(&tr, 0), count(&tr, 1)), (4, 4));
        assert_eq!((count(&va, 0), count(&va, 1)), (1, 1));
    }

    #[test]
    fn split_singleton_class_falls_back() {
        let t = Target::classification("y", vec![0, 0, 0, 0, 1]);
        let (tr, va) = split_indices(&t, 0.6, 1).unwrap();
        assert_eq!(tr.len() + va.len(), 5);
        assert_eq!(tr.len(), 3);
    }

    #[test]
    fn split_rejects_empty_partition() {
        let t = regression_target(2);
        assert!(matches!(split_indices(&t, 0.1, 0), Err(Error::EmptySplit { .. })));
        assert!(matches!(split_indices(&t, 1.0, 0), Err(Error::EmptySplit { .. })));
    }

    #[test]
    fn discretize_examples() {
        assert_eq!(discretize(&[1.0, 2.0, 3.0, 4.0], 2), vec![0, 0, 1, 1]);
        assert_eq!(discretize(&[5.0; 4], 4), vec![0, 0, 0, 0]);
    }

    /// Independent oracle: interpolated quantile cut points compared directly.
    fn quantile_oracle(column: &[f64], bins: usize) -> Vec<usize> {
        let mut s = column.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        let cuts: Vec<f64> = (1..bins)
            .map(|j| {
                let pos = (n - 1.0) * j as f64 / bins as f64;
                let lo = pos.floor() as usize;
                let hi = pos.ceil() as usize;
                s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
            })
            .collect();
        let raw: Vec<usize> = column.iter().map(|x| cuts.iter().filter(|c| x > c).count()).collect();
        let mut distinct = raw.clone();
        distinct.sort_unstable();
        distinct.dedup();
        raw.iter().map(|r| distinct.binary_search(r).unwrap()).collect()
    }

    #[test]
    fn discretize_matches_quantile_oracle() {
        let col = [1.0, 1.0, 1.0, 2.0, 3.0, 9.0];
        assert_eq!(quantile_oracle(&col, 3), vec![0, 0, 0, 1, 2, 2]);
        assert_eq!(discretize(&col, 3), quantile_oracle(&col, 3));
    }

    #[test]
    fn default_bins_rule() {
        assert_eq!(default_bins(4), 2);
        assert_eq!(default_bins(50), 8);
        assert_eq!(default_bins(500), 16);
    }

    proptest! {
        #[test]
        fn discretize_agrees_with_oracle(col in prop::collection::vec(-50i32..50, 1..60), bins in 1usize..12) {
            let col: Vec<f64> = col.into_iter().map(|v| v as f64 * 0.25).collect();
            prop_assert_eq!(discretize(&col, bins), quantile_oracle(&col, bins));
        }

        #[test]
        fn discretize_invariant_under_monotone_maps(col in prop::collection::vec(-100.0f64..100.0, 1..80),
                                                    bins in 1usize..17, scale in 0.01f64..50.0, shift in -10.0f64..10.0) {
            let base = discretize(&col, bins);
            let affine: Vec<f64> = col.iter().map(|x| x * scale + shift).collect();
            let cubed: Vec<f64> = col.iter().map(|x| x.powi(3)).collect();
            prop_assert_eq!(discretize(&affine, bins), base.clone());
            prop_assert_eq!(discretize(&cubed, bins), base.clone());
            prop_assert!(base.iter().all(|&l| l < bins));
        }
    }
}
