//! Operation set, feature-group crossing, deduplication and MI-based size
//! control.

use std::fmt;
use std::str::FromStr;

use crate::dataset::{Column, FeatureMeta, FeatureSet};
use crate::error::{Error, Result};
use crate::info::InfoContext;
use crate::lineage::{BinaryOp, LineageExpr, UnaryOp};

/// Columns closer than this elementwise count as duplicates.
pub const DEDUP_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operation {
    Unary(UnaryOp),
    Binary(BinaryOp),
}

impl Operation {
    pub fn is_unary(self) -> bool {
        matches!(self, Operation::Unary(_))
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Operation::Unary(op) => op.symbol(),
            Operation::Binary(op) => op.symbol(),
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Operation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(op) = UnaryOp::from_symbol(s) {
            return Ok(Operation::Unary(op));
        }
        if let Some(op) = BinaryOp::from_symbol(s) {
            return Ok(Operation::Binary(op));
        }
        Err(Error::UnknownOperation(s.to_string()))
    }
}

/// Ordered operation list; the order fixes the one-hot index of each
/// operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationSet {
    ops: Vec<Operation>,
}

impl OperationSet {
    pub fn new(ops: Vec<Operation>) -> Result<Self> {
        if !ops.iter().any(|op| !op.is_unary()) {
            return Err(Error::InvalidOperationSet("at least one binary operation is required".into()));
        }
        for (i, op) in ops.iter().enumerate() {
            if ops[..i].contains(op) {
                return Err(Error::InvalidOperationSet(format!("duplicate operation `{op}`")));
            }
        }
        Ok(OperationSet { ops })
    }

    /// Comma-separated symbols, e.g. `square,sqrt,log,+,-,*,/`.
    pub fn parse_list(s: &str) -> Result<Self> {
        Self::new(s.split(',').map(|t| t.trim().parse()).collect::<Result<_>>()?)
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<Operation> {
        self.ops.get(index).copied()
    }

    pub fn index_of(&self, op: Operation) -> Option<usize> {
        self.ops.iter().position(|&o| o == op)
    }

    pub fn iter(&self) -> impl Iterator<Item = Operation> + '_ {
        self.ops.iter().copied()
    }

    pub fn to_list(&self) -> String {
        self.ops.iter().map(|o| o.symbol()).collect::<Vec<_>>().join(",")
    }
}

impl Default for OperationSet {
    /// `square, sqrt, log, +, -, *, /`.
    fn default() -> Self {
        let ops = UnaryOp::ALL
            .into_iter()
            .map(Operation::Unary)
            .chain(BinaryOp::ALL.into_iter().map(Operation::Binary))
            .collect();
        OperationSet { ops }
    }
}

/// Where a batch came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub head: Vec<usize>,
    pub op: Operation,
    pub tail: Option<Vec<usize>>,
    pub iteration: usize,
}

#[derive(Debug, Clone)]
pub struct GeneratedBatch {
    pub columns: Vec<Column>,
    pub provenance: Provenance,
}

impl GeneratedBatch {
    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }
}

fn provenance(op: Operation, iteration: usize) -> Provenance {
    Provenance {
        head: Vec::new(),
        op,
        tail: None,
        iteration,
    }
}

/// One new column per head member. Columns whose lineage would exceed
/// `max_depth` are not generated.
pub fn apply_unary(op: UnaryOp, head: &FeatureSet, max_depth: usize) -> GeneratedBatch {
    let columns = head
        .columns()
        .iter()
        .filter_map(|c| {
            let lineage = LineageExpr::unary(op, c.meta.lineage.clone());
            (lineage.depth() <= max_depth)
                .then(|| Column::new(FeatureMeta::from_lineage(lineage), op.apply_column(&c.values)))
        })
        .collect();
    GeneratedBatch {
        columns,
        provenance: provenance(Operation::Unary(op), 0),
    }
}

/// Cartesian crossing of head × tail in head-major order. When the pair
/// count exceeds `cap`, the `cap` pairs with the largest `I(f_a,y) + I(f_b,y)`
/// are kept (ties by head-major position), still emitted in head-major order.
pub fn cross_binary(
    op: BinaryOp,
    head: &FeatureSet,
    tail: &FeatureSet,
    cap: usize,
    max_depth: usize,
    ctx: &InfoContext,
) -> GeneratedBatch {
    let mut pairs: Vec<(usize, usize)> = (0..head.n_cols())
        .flat_map(|a| (0..tail.n_cols()).map(move |b| (a, b)))
        .collect();
    if pairs.len() > cap {
        let rh = ctx.relevances(head);
        let rt = ctx.relevances(tail);
        let mut ranked: Vec<(usize, f64)> = pairs
            .iter()
            .enumerate()
            .map(|(pos, &(a, b))| (pos, rh[a] + rt[b]))
            .collect();
        ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
        let mut keep: Vec<usize> = ranked[..cap].iter().map(|r| r.0).collect();
        keep.sort_unstable();
        pairs = keep.into_iter().map(|pos| pairs[pos]).collect();
    }
    let columns = pairs
        .into_iter()
        .filter_map(|(a, b)| {
            let (ca, cb) = (head.column(a), tail.column(b));
            let lineage = LineageExpr::binary(op, ca.meta.lineage.clone(), cb.meta.lineage.clone());
            (lineage.depth() <= max_depth).then(|| {
                Column::new(FeatureMeta::from_lineage(lineage), op.apply_columns(&ca.values, &cb.values))
            })
        })
        .collect();
    GeneratedBatch {
        columns,
        provenance: provenance(Operation::Binary(op), 0),
    }
}

fn near_equal(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= DEDUP_TOLERANCE)
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| (x - v[0]).abs() <= DEDUP_TOLERANCE)
}

/// Drop constant columns and columns that repeat (elementwise within
/// [`DEDUP_TOLERANCE`]) an existing column or an earlier batch column.
pub fn dedup(batch: GeneratedBatch, fs: &FeatureSet) -> GeneratedBatch {
    let mut kept: Vec<Column> = Vec::with_capacity(batch.columns.len());
    for c in batch.columns {
        if is_constant(&c.values) {
            continue;
        }
        let dup = fs.columns().iter().chain(&kept).any(|e| near_equal(&e.values, &c.values));
        if !dup {
            kept.push(c);
        }
    }
    GeneratedBatch {
        columns: kept,
        provenance: batch.provenance,
    }
}

/// Keep the `max_size` columns with the highest `I(f, y)` (ties to the lower
/// index), preserving their relative order.
pub fn select_features(fs: &FeatureSet, max_size: usize, ctx: &InfoContext) -> Result<FeatureSet> {
    if max_size == 0 {
        return Err(Error::InvalidConfig("max_size must be at least 1".into()));
    }
    if fs.n_cols() <= max_size {
        return Ok(fs.clone());
    }
    let scores = ctx.relevances(fs);
    fs.select_columns(&top_indices(&scores, max_size))
}

/// Indices of the `k` largest scores (ties to the lower index), ascending.
pub fn top_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut keep: Vec<usize> = order.into_iter().take(k).collect();
    keep.sort_unstable();
    keep
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationConfig {
    pub max_size: usize,
    pub cap: usize,
    pub max_depth: usize,
}

impl GenerationConfig {
    /// Defaults for a dataset with `original_cols` features: the space may at
    /// most double, 64 pairs per crossing, lineage depth 6.
    pub fn for_original(original_cols: usize) -> Self {
        GenerationConfig {
            max_size: (2 * original_cols).max(1),
            cap: 64,
            max_depth: 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerationOutcome {
    pub features: FeatureSet,
    pub batch: GeneratedBatch,
    /// True when nothing survived deduplication and `features` equals the
    /// input.
    pub no_op: bool,
}

/// Generate, deduplicate, append and (if needed) select. For unary operations
/// the tail group is ignored.
pub fn generation_step(
    fs: &FeatureSet,
    head: &[usize],
    op: Operation,
    tail: Option<&[usize]>,
    iteration: usize,
    cfg: &GenerationConfig,
    ctx: &InfoContext,
) -> Result<GenerationOutcome> {
    let head_view = fs.select_columns(head)?;
    let mut batch = match op {
        Operation::Unary(u) => apply_unary(u, &head_view, cfg.max_depth),
        Operation::Binary(b) => {
            let tail = tail.ok_or(Error::EmptyCluster)?;
            let tail_view = fs.select_columns(tail)?;
            cross_binary(b, &head_view, &tail_view, cfg.cap, cfg.max_depth, ctx)
        }
    };
    batch.provenance = Provenance {
        head: head.to_vec(),
        op,
        tail: if op.is_unary() { None } else { tail.map(<[usize]>::to_vec) },
        iteration,
    };
    let batch = dedup(batch, fs);
    if batch.is_empty() {
        return Ok(GenerationOutcome {
            features: fs.clone(),
            batch,
            no_op: true,
        });
    }
    let grown = fs.with_appended(batch.columns.clone());
    let features = select_features(&grown, cfg.max_size, ctx)?;
    Ok(GenerationOutcome {
        features,
        batch,
        no_op: false,
    })
}
