//! Downstream-task score: a random forest fit on a fixed train split, scored
//! on the held-out rows.

use std::fmt;
use std::str::FromStr;

use crate::dataset::{split_indices, FeatureSet, TaskKind};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestConfig, RandomForest};

/// Share of rows used for fitting.
pub const TRAIN_RATIO: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MetricKind {
    F1Macro,
    PrecisionMacro,
    RecallMacro,
    OneMinusRae,
    OneMinusMae,
    OneMinusMse,
    OneMinusRmse,
}

impl MetricKind {
    pub const ALL: [MetricKind; 7] = [
        MetricKind::F1Macro,
        MetricKind::PrecisionMacro,
        MetricKind::RecallMacro,
        MetricKind::OneMinusRae,
        MetricKind::OneMinusMae,
        MetricKind::OneMinusMse,
        MetricKind::OneMinusRmse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::F1Macro => "f1_macro",
            MetricKind::PrecisionMacro => "precision_macro",
            MetricKind::RecallMacro => "recall_macro",
            MetricKind::OneMinusRae => "one_minus_rae",
            MetricKind::OneMinusMae => "one_minus_mae",
            MetricKind::OneMinusMse => "one_minus_mse",
            MetricKind::OneMinusRmse => "one_minus_rmse",
        }
    }

    pub fn task(self) -> TaskKind {
        match self {
            MetricKind::F1Macro | MetricKind::PrecisionMacro | MetricKind::RecallMacro => TaskKind::Classification,
            _ => TaskKind::Regression,
        }
    }

    /// Macro-F1 for classification, 1-RAE for regression.
    pub fn default_for(task: TaskKind) -> Self {
        match task {
            TaskKind::Classification => MetricKind::F1Macro,
            TaskKind::Regression => MetricKind::OneMinusRae,
        }
    }

    pub fn check_task(self, task: TaskKind) -> Result<()> {
        if self.task() == task {
            Ok(())
        } else {
            Err(Error::MetricTaskMismatch {
                metric: self.as_str().to_string(),
                task: task.as_str().to_string(),
            })
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric `{s}`")))
    }
}

/// Per-class `(precision, recall, f1)` over the union of labels seen in
/// either vector, in ascending label order.
fn per_class(y_true: &[f64], y_pred: &[f64]) -> Vec<(f64, f64, f64)> {
    let mut labels: Vec<f64> = y_true.iter().chain(y_pred).copied().collect();
    labels.sort_by(f64::total_cmp);
    labels.dedup();
    labels
        .iter()
        .map(|&c| {
            let mut tp = 0.0;
            let mut fp = 0.0;
            let mut fn_ = 0.0;
            for (t, p) in y_true.iter().zip(y_pred) {
                match (*t == c, *p == c) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fn_ += 1.0,
                    _ => {}
                }
            }
            let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
            let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            (precision, recall, f1)
        })
        .collect()
}

/// Pure metric arithmetic. `train_mean` is only used by 1-RAE.
pub fn metric_only(y_true: &[f64], y_pred: &[f64], metric: MetricKind, train_mean: f64) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::LengthMismatch {
            left: y_true.len(),
            right: y_pred.len(),
        });
    }
    if y_true.is_empty() {
        return Err(Error::TooSmall { rows: 0, cols: 1 });
    }
    let n = y_true.len() as f64;
    let macro_avg = |pick: fn(&(f64, f64, f64)) -> f64| {
        let stats = per_class(y_true, y_pred);
        stats.iter().map(pick).sum::<f64>() / stats.len() as f64
    };
    let abs_err: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p).abs()).sum();
    let sq_err: f64 = y_true.iter().zip(y_pred).map(|(t, p)| (t - p) * (t - p)).sum();
    Ok(match metric {
        MetricKind::F1Macro => macro_avg(|s| s.2),
        MetricKind::PrecisionMacro => macro_avg(|s| s.0),
        MetricKind::RecallMacro => macro_avg(|s| s.1),
        MetricKind::OneMinusRae => {
            let denom: f64 = y_true.iter().map(|t| (t - train_mean).abs()).sum();
            if denom == 0.0 {
                if abs_err == 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                1.0 - abs_err / denom
            }
        }
        MetricKind::OneMinusMae => 1.0 - abs_err / n,
        MetricKind::OneMinusMse => 1.0 - sq_err / n,
        MetricKind::OneMinusRmse => 1.0 - (sq_err / n).sqrt(),
    })
}

/// Scores feature sets that share one target, always on the same split.
#[derive(Debug, Clone)]
pub struct Evaluator {
    train_rows: Vec<usize>,
    valid_rows: Vec<usize>,
    metric: MetricKind,
    forest: ForestConfig,
}

impl Evaluator {
    pub fn new(fs: &FeatureSet, split_seed: u64, metric: MetricKind, forest: ForestConfig) -> Result<Self> {
        metric.check_task(fs.task())?;
        let (train_rows, valid_rows) = split_indices(fs.target(), TRAIN_RATIO, split_seed)?;
        Ok(Evaluator {
            train_rows,
            valid_rows,
            metric,
            forest,
        })
    }

    pub fn metric(&self) -> MetricKind {
        self.metric
    }

    pub fn forest_config(&self) -> &ForestConfig {
        &self.forest
    }

    pub fn split(&self) -> (&[usize], &[usize]) {
        (&self.train_rows, &self.valid_rows)
    }

    pub fn fit(&self, fs: &FeatureSet) -> Result<RandomForest> {
        fit_forest(&fs.select_rows(&self.train_rows), &self.forest)
    }

    /// Validation score of a forest fit on the training rows.
    pub fn score(&self, fs: &FeatureSet) -> Result<f64> {
        let train = fs.select_rows(&self.train_rows);
        let valid = fs.select_rows(&self.valid_rows);
        let forest = fit_forest(&train, &self.forest)?;
        let pred = forest.predict(&valid)?;
        let train_y = &train.target().values;
        let train_mean = train_y.iter().sum::<f64>() / train_y.len() as f64;
        let score = metric_only(&valid.target().values, &pred, self.metric, train_mean)?;
        if !score.is_finite() {
            return Err(Error::NonFinite("downstream score"));
        }
        Ok(score)
    }
}

/// One-shot score with a fresh split.
pub fn downstream_score(fs: &FeatureSet, split_seed: u64, metric: MetricKind, cfg: &ForestConfig) -> Result<f64> {
    Evaluator::new(fs, split_seed, metric, cfg.clone())?.score(fs)
}
