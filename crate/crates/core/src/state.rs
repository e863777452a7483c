//! Fixed-length state vectors for variable-size feature sets.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::FeatureSet;
use crate::error::{Error, Result};
use crate::nn::{gcn_forward, normalize_adjacency, train_autoencoder, AeConfig, GcnLayer, Matrix};
use crate::transform::{Operation, OperationSet};

/// Length of the descriptive-statistics state.
pub const SI_LEN: usize = 49;
const NUM_STATS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum EncoderKind {
    Si,
    Ae,
    #[default]
    Gae,
    SiAe,
    SiGae,
    AeGae,
    All,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 7] = [
        EncoderKind::Si,
        EncoderKind::Ae,
        EncoderKind::Gae,
        EncoderKind::SiAe,
        EncoderKind::SiGae,
        EncoderKind::AeGae,
        EncoderKind::All,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Si => "si",
            EncoderKind::Ae => "ae",
            EncoderKind::Gae => "gae",
            EncoderKind::SiAe => "si+ae",
            EncoderKind::SiGae => "si+gae",
            EncoderKind::AeGae => "ae+gae",
            EncoderKind::All => "all",
        }
    }

    /// `(si, ae, gae)` membership.
    pub fn components(self) -> (bool, bool, bool) {
        match self {
            EncoderKind::Si => (true, false, false),
            EncoderKind::Ae => (false, true, false),
            EncoderKind::Gae => (false, false, true),
            EncoderKind::SiAe => (true, true, false),
            EncoderKind::SiGae => (true, false, true),
            EncoderKind::AeGae => (false, true, true),
            EncoderKind::All => (true, true, true),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown encoder `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateTag {
    Encoder(EncoderKind),
    Operation,
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub values: Vec<f64>,
    pub tag: StateTag,
}

impl StateVector {
    fn new(mut values: Vec<f64>, tag: StateTag) -> Self {
        for v in &mut values {
            if !v.is_finite() {
                *v = 0.0;
            }
        }
        StateVector { values, tag }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Latent size per column (ae stage 1) and GCN width.
    pub k: usize,
    /// Latent size of ae stage 2.
    pub d: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Keep raw counts in the si state instead of dividing by the
    /// original dimensions.
    pub si_raw_count: bool,
    /// Original sample count, divides the column-stage count.
    pub rows_scale: f64,
    /// Original feature count, divides the meta-stage count.
    pub cols_scale: f64,
    pub gae_standardize: bool,
    pub gae_learning_rate: f64,
    pub ae: AeConfig,
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind, original: &FeatureSet, seed: u64) -> Self {
        EncoderConfig {
            kind,
            k: 8,
            d: 4,
            epochs: 20,
            seed,
            si_raw_count: false,
            rows_scale: original.n_rows().max(1) as f64,
            cols_scale: original.n_cols().max(1) as f64,
            gae_standardize: true,
            gae_learning_rate: 1e-2,
            ae: AeConfig::default(),
        }
    }

    pub fn state_len(&self) -> usize {
        let (si, ae, gae) = self.kind.components();
        usize::from(si) * SI_LEN + usize::from(ae) * self.k * self.d + usize::from(gae) * self.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.d == 0 {
            return Err(Error::InvalidConfig("encoder latent sizes must be at least 1".into()));
        }
        Ok(())
    }
}

/// `(count, std, min, max, q1, q2, q3)` of `values`; std is the population
/// std, quartiles interpolate linearly. Computed from the sorted values so the
/// result does not depend on input order.
pub fn describe(values: &[f64], count_scale: f64) -> [f64; NUM_STATS] {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return [0.0; NUM_STATS];
    }
    let mean = s.iter().sum::<f64>() / n as f64;
    let var = s.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    [
        n as f64 / count_scale,
        var.sqrt(),
        s[0],
        s[n - 1],
        crate::dataset::quantile_sorted(&s, 0.25),
        crate::dataset::quantile_sorted(&s, 0.5),
        crate::dataset::quantile_sorted(&s, 0.75),
    ]
}

/// Column-wise stats (7×N), then stats of each of the 7 rows, flattened
/// row-major.
pub fn state_si(fs: &FeatureSet, cfg: &EncoderConfig) -> StateVector {
    let (rows_scale, cols_scale) = if cfg.si_raw_count {
        (1.0, 1.0)
    } else {
        (cfg.rows_scale, cfg.cols_scale)
    };
    let per_col: Vec<[f64; NUM_STATS]> = fs.columns().iter().map(|c| describe(&c.values, rows_scale)).collect();
    let mut out = Vec::with_capacity(SI_LEN);
    for stat in 0..NUM_STATS {
        let row: Vec<f64> = per_col.iter().map(|c| c[stat]).collect();
        out.extend(describe(&row, cols_scale));
    }
    StateVector::new(out, StateTag::Encoder(EncoderKind::Si))
}

fn standardized(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    if !(std > 1e-12) || !std.is_finite() {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - mean) / std).collect()
}

fn standardized_rows(fs: &FeatureSet) -> Vec<Vec<f64>> {
    fs.columns().iter().map(|c| standardized(&c.values)).collect()
}

/// Stage 1 compresses every (standardized) column of length M to k with one
/// shared autoencoder, giving `Z ∈ R^{k×N}`; stage 2 compresses each row of
/// `Z` to d, giving `Z' ∈ R^{k×d}`, flattened row-major.
pub fn state_ae(fs: &FeatureSet, cfg: &EncoderConfig) -> Result<StateVector> {
    cfg.validate()?;
    let cols = Matrix::from_rows(&standardized_rows(fs));
    let stage1 = train_autoencoder(&cols, cfg.k, cfg.epochs, cfg.seed, &cfg.ae)?;
    let z: Vec<Vec<f64>> = (0..cols.rows).map(|r| stage1.encode(cols.row(r))).collect::<Result<_>>()?;
    // z is N×k; its transpose holds one length-N row per latent dimension.
    let zt = Matrix::from_rows(&z).transpose();
    let stage2 = train_autoencoder(&zt, cfg.d, cfg.epochs, cfg.seed.wrapping_add(1), &cfg.ae)?;
    let mut out = Vec::with_capacity(cfg.k * cfg.d);
    for r in 0..zt.rows {
        out.extend(stage2.encode(zt.row(r))?);
    }
    Ok(StateVector::new(out, StateTag::Encoder(EncoderKind::Ae)))
}

fn pearson_abs(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let den = (saa * sbb).sqrt();
    if !(den > 0.0) || !den.is_finite() {
        return 0.0;
    }
    (sab / den).abs().min(1.0)
}

/// `|Pearson|` similarity graph with unit self-loops. Constant columns have
/// zero similarity to every other column.
pub fn correlation_graph(fs: &FeatureSet) -> Matrix {
    let n = fs.n_cols();
    let mut a = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let s = pearson_abs(fs.values(i), fs.values(j));
            a.set(i, j, s);
            a.set(j, i, s);
        }
    }
    a
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of `σ(Z Zᵀ)` against `adj` where
/// `Z = ReLU(P W)` and `P` is the propagated node-feature matrix, with its
/// gradient in `W`.
pub fn gae_loss(propagated: &Matrix, adj: &Matrix, weight: &Matrix) -> (f64, Matrix) {
    let n = adj.rows;
    let h = propagated.matmul(weight);
    let mut z = h.clone();
    for v in &mut z.data {
        *v = v.max(0.0);
    }
    let s = z.matmul(&z.transpose());
    let scale = 1.0 / (n * n) as f64;
    let mut loss = 0.0;
    let mut g = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let (logit, t) = (s.get(i, j), adj.get(i, j));
            loss += (logit.max(0.0) - logit * t + (-logit.abs()).exp().ln_1p()) * scale;
            g.set(i, j, (sigmoid(logit) - t) * scale);
        }
    }
    let sym = {
        let mut m = g.clone();
        let gt = g.transpose();
        for (a, b) in m.data.iter_mut().zip(&gt.data) {
            *a += b;
        }
        m
    };
    let mut dh = sym.matmul(&z);
    for (d, pre) in dh.data.iter_mut().zip(&h.data) {
        if *pre <= 0.0 {
            *d = 0.0;
        }
    }
    (loss, propagated.transpose().matmul(&dh))
}

/// One GCN layer over the column-similarity graph, trained to reconstruct the
/// graph; the state is the mean node embedding.
pub fn state_gae(fs: &FeatureSet, cfg: &EncoderConfig) -> Result<StateVector> {
    cfg.validate()?;
    let adj = correlation_graph(fs);
    let feats = if cfg.gae_standardize {
        Matrix::from_rows(&standardized_rows(fs))
    } else {
        Matrix::from_rows(&fs.columns().iter().map(|c| c.values.to_vec()).collect::<Vec<_>>())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut layer = GcnLayer::new(feats.cols, cfg.k, &mut rng);
    if cfg.epochs > 0 {
        let propagated = normalize_adjacency(&adj)?.matmul(&feats);
        for _ in 0..cfg.epochs {
            let (_, grad) = gae_loss(&propagated, &adj, &layer.weight);
            let norm = grad.data.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                log::warn!("skipping non-finite graph autoencoder gradient");
                continue;
            }
            let clip = if norm > cfg.ae.clip_norm { cfg.ae.clip_norm / norm } else { 1.0 };
            for (w, g) in layer.weight.data.iter_mut().zip(&grad.data) {
                *w -= cfg.gae_learning_rate * clip * g;
            }
        }
    }
    let z = gcn_forward(&adj, &feats, &layer)?;
    Ok(StateVector::new(mean_rows(&z), StateTag::Encoder(EncoderKind::Gae)))
}

fn mean_rows(z: &Matrix) -> Vec<f64> {
    let mut out = vec![0.0; z.cols];
    for r in 0..z.rows {
        for (o, v) in out.iter_mut().zip(z.row(r)) {
            *o += v;
        }
    }
    for o in &mut out {
        *o /= z.rows.max(1) as f64;
    }
    out
}

pub fn state_op(op: Operation, ops: &OperationSet) -> Result<StateVector> {
    let idx = ops.index_of(op).ok_or_else(|| Error::UnknownOperation(op.to_string()))?;
    let mut v = vec![0.0; ops.len()];
    v[idx] = 1.0;
    Ok(StateVector::new(v, StateTag::Operation))
}

pub fn concat_states(parts: &[&StateVector]) -> StateVector {
    if let [single] = parts {
        return (*single).clone();
    }
    let values = parts.iter().flat_map(|p| p.values.iter().copied()).collect();
    StateVector::new(values, StateTag::Concat)
}

/// Feature-set state for the configured encoder kind; components are
/// concatenated in the order si, ae, gae.
pub fn encode(fs: &FeatureSet, cfg: &EncoderConfig) -> Result<StateVector> {
    let (si, ae, gae) = cfg.kind.components();
    let mut parts = Vec::with_capacity(3);
    if si {
        parts.push(state_si(fs, cfg));
    }
    if ae {
        parts.push(state_ae(fs, cfg)?);
    }
    if gae {
        parts.push(state_gae(fs, cfg)?);
    }
    let refs: Vec<&StateVector> = parts.iter().collect();
    let mut out = concat_states(&refs);
    out.tag = StateTag::Encoder(cfg.kind);
    Ok(out)
}
