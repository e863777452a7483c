//! Mutual information, feature-space quality and the features-group distance.
//!
//! MI is the plug-in (maximum-likelihood) estimate in nats over the joint
//! histogram of equal-frequency bins. Columns that are already discrete
//! (integer valued with no more distinct values than bins) are used as labels
//! directly.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::dataset::{discretize, FeatureSet, TaskKind, Target};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DistanceKind {
    #[default]
    Euclidean,
    Cosine,
}

impl DistanceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DistanceKind::Euclidean => "euclidean",
            DistanceKind::Cosine => "cosine",
        }
    }
}

impl FromStr for DistanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(DistanceKind::Euclidean),
            "cosine" => Ok(DistanceKind::Cosine),
            other => Err(Error::InvalidConfig(format!("unknown distance `{other}`"))),
        }
    }
}

/// Compact label vector for `x`: integral columns with at most `bins`
/// distinct values keep their own categories, everything else is binned.
pub fn to_labels(x: &[f64], bins: usize) -> Vec<usize> {
    if x.iter().all(|v| v.fract() == 0.0) {
        let mut distinct: Vec<f64> = x.to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        if distinct.len() <= bins.max(1) {
            return x
                .iter()
                .map(|v| distinct.binary_search_by(|d| d.total_cmp(v)).unwrap())
                .collect();
        }
    }
    discretize(x, bins)
}

/// Plug-in MI between two label vectors, in nats.
///
/// Cell terms are summed in sorted order so the result is bitwise symmetric
/// in its arguments.
pub fn mutual_information_labels(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    if n == 0 {
        return Ok(0.0);
    }
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut joint = vec![0usize; ka * kb];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let nf = n as f64;
    let mut terms: Vec<f64> = Vec::new();
    for x in 0..ka {
        for y in 0..kb {
            let nxy = joint[x * kb + y];
            if nxy == 0 {
                continue;
            }
            let ratio = (nxy as f64 * nf) / (ca[x] as f64 * cb[y] as f64);
            terms.push(nxy as f64 / nf * ratio.ln());
        }
    }
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum::<f64>().max(0.0))
}

pub fn mutual_information(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    mutual_information_labels(&to_labels(x, bins), &to_labels(y, bins))
}

/// `d(f_i, f_j)`. Cosine distance with a zero vector is 1.
pub fn pairwise_distance(a: &[f64], b: &[f64], kind: DistanceKind) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    match kind {
        DistanceKind::Euclidean => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        DistanceKind::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if na == 0.0 || nb == 0.0 {
                return 1.0;
            }
            (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
        }
    }
}

/// Features-group distance over precomputed member distances:
/// the mean over cross pairs of `d(f_a, f_b) · |I(f_a, y) − I(f_b, y)|`.
///
/// `dist(a, b)` must be symmetric; terms are summed in sorted order so the
/// result does not depend on which group comes first.
pub fn group_distance_with<F>(ci: &[usize], cj: &[usize], relevance: &[f64], dist: F) -> f64
where
    F: Fn(usize, usize) -> f64,
{
    let mut terms: Vec<f64> = Vec::with_capacity(ci.len() * cj.len());
    for &a in ci {
        for &b in cj {
            terms.push(dist(a, b) * (relevance[a] - relevance[b]).abs());
        }
    }
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>() / (ci.len() * cj.len()) as f64
}

/// Shared MI state for one target: target labels plus memoized per-column
/// labels and target relevance, keyed by a hash of the column contents.
#[derive(Debug)]
pub struct InfoContext {
    bins: usize,
    target_labels: Arc<Vec<usize>>,
    labels: Mutex<HashMap<(u64, usize), Arc<Vec<usize>>>>,
    relevance: Mutex<HashMap<(u64, usize), f64>>,
}

fn content_key(values: &[f64]) -> (u64, usize) {
    let mut h = DefaultHasher::new();
    for v in values {
        v.to_bits().hash(&mut h);
    }
    (h.finish(), values.len())
}

impl InfoContext {
    pub fn new(target: &Target, bins: usize) -> Self {
        let target_labels = match target.kind {
            TaskKind::Classification => target.labels(),
            TaskKind::Regression => to_labels(&target.values, bins),
        };
        InfoContext {
            bins,
            target_labels: Arc::new(target_labels),
            labels: Mutex::default(),
            relevance: Mutex::default(),
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn target_labels(&self) -> &[usize] {
        &self.target_labels
    }

    pub fn labels(&self, values: &[f64]) -> Arc<Vec<usize>> {
        let key = content_key(values);
        if let Some(l) = self.labels.lock().unwrap().get(&key) {
            return Arc::clone(l);
        }
        let l = Arc::new(to_labels(values, self.bins));
        self.labels.lock().unwrap().insert(key, Arc::clone(&l));
        l
    }

    /// `I(f, y)`.
    pub fn relevance(&self, values: &[f64]) -> f64 {
        let key = content_key(values);
        if let Some(&r) = self.relevance.lock().unwrap().get(&key) {
            return r;
        }
        let r = mutual_information_labels(&self.labels(values), &self.target_labels)
            .expect("column length matches target");
        self.relevance.lock().unwrap().insert(key, r);
        r
    }

    pub fn relevances(&self, fs: &FeatureSet) -> Vec<f64> {
        fs.columns().par_iter().map(|c| self.relevance(&c.values)).collect()
    }

    /// `I(f_i, f_j)`.
    pub fn pair_mi(&self, a: &[f64], b: &[f64]) -> f64 {
        mutual_information_labels(&self.labels(a), &self.labels(b)).expect("equal column lengths")
    }

    /// `U(F|y)`: mean relevance minus the sum of MI over ordered distinct
    /// pairs normalized by `|F|²`.
    pub fn quality(&self, fs: &FeatureSet) -> f64 {
        let n = fs.n_cols();
        let relevance = self.relevances(fs);
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let mis: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| self.pair_mi(fs.values(i), fs.values(j)))
            .collect();
        let redundancy = 2.0 * mis.iter().sum::<f64>();
        let nf = n as f64;
        -redundancy / (nf * nf) + relevance.iter().sum::<f64>() / nf
    }

    /// `D(c_i, c_j)` for column-index groups of `fs`.
    pub fn group_distance(&self, fs: &FeatureSet, ci: &[usize], cj: &[usize], kind: DistanceKind) -> f64 {
        let relevance = self.relevances(fs);
        group_distance_with(ci, cj, &relevance, |a, b| {
            pairwise_distance(fs.values(a), fs.values(b), kind)
        })
    }
}

/// `U(F|y)` with the default bin rule.
pub fn feature_set_quality(fs: &FeatureSet) -> f64 {
    let ctx = InfoContext::new(fs.target(), crate::dataset::default_bins(fs.n_rows()));
    ctx.quality(fs)
}

/// Relevance-weighted group distance between two groups of raw columns against `target`.
pub fn features_group_distance(
    ci: &[&[f64]],
    cj: &[&[f64]],
    target: &Target,
    kind: DistanceKind,
    bins: usize,
) -> Result<f64> {
    if ci.is_empty() || cj.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let ctx = InfoContext::new(target, bins);
    let cols: Vec<&[f64]> = ci.iter().chain(cj).copied().collect();
    for c in &cols {
        if c.len() != target.len() {
            return Err(Error::LengthMismatch {
                left: c.len(),
                right: target.len(),
            });
        }
    }
    let relevance: Vec<f64> = cols.iter().map(|c| ctx.relevance(c)).collect();
    let left: Vec<usize> = (0..ci.len()).collect();
    let right: Vec<usize> = (ci.len()..cols.len()).collect();
    Ok(group_distance_with(&left, &right, &relevance, |a, b| {
        pairwise_distance(cols[a], cols[b], kind)
    }))
}
