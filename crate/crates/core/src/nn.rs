//! Dense two-layer networks, a one-layer graph convolution and autoencoder
//! training, all with handwritten gradients.
//!
//! A [`DenseNet`] computes `head(W2 · relu(W1 · x + b1) + b2)`. Parameters are
//! stored flat as `W1 | b1 | W2 | b2` (row-major weights), and gradients use
//! the same layout, which keeps clipping, SGD and finite-difference checks
//! uniform.

use std::io::{BufRead, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// Probability vector over the outputs.
    Softmax,
    /// Single linear output.
    Scalar,
    /// Linear vector output.
    Identity,
}

impl Head {
    fn as_str(self) -> &'static str {
        match self {
            Head::Softmax => "softmax",
            Head::Scalar => "scalar",
            Head::Identity => "identity",
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log softmax(logits)[i]` for every `i`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Intermediate values of one forward pass, reused by backward.
#[derive(Debug, Clone)]
pub struct Trace {
    pub hidden_pre: Vec<f64>,
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    input: usize,
    hidden: usize,
    output: usize,
    head: Head,
    params: Vec<f64>,
}

impl DenseNet {
    pub fn zeros(input: usize, hidden: usize, output: usize, head: Head) -> Self {
        let output = if head == Head::Scalar { 1 } else { output };
        let len = hidden * input + hidden + output * hidden + output;
        DenseNet {
            input,
            hidden,
            output,
            head,
            params: vec![0.0; len],
        }
    }

    /// Weights drawn from `U(-a, a)` with `a = √(6 / (fan_in + fan_out))`;
    /// biases start at zero.
    pub fn new<R: Rng>(input: usize, hidden: usize, output: usize, head: Head, rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden, output, head);
        let a1 = (6.0 / (input + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + net.output) as f64).sqrt();
        let (w1, _, w2, _) = net.offsets();
        for p in &mut net.params[w1.clone()] {
            *p = rng.gen_range(-a1..=a1);
        }
        for p in &mut net.params[w2.clone()] {
            *p = rng.gen_range(-a2..=a2);
        }
        net
    }

    pub fn seeded(input: usize, hidden: usize, output: usize, head: Head, seed: u64) -> Self {
        Self::new(input, hidden, output, head, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn input_size(&self) -> usize {
        self.input
    }

    pub fn hidden_size(&self) -> usize {
        self.hidden
    }

    pub fn output_size(&self) -> usize {
        self.output
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Direct parameter access for fixtures and checkpoint loading.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn offsets(
        &self,
    ) -> (
        std::ops::Range<usize>,
        std::ops::Range<usize>,
        std::ops::Range<usize>,
        std::ops::Range<usize>,
    ) {
        let w1 = 0..self.hidden * self.input;
        let b1 = w1.end..w1.end + self.hidden;
        let w2 = b1.end..b1.end + self.output * self.hidden;
        let b2 = w2.end..w2.end + self.output;
        (w1, b1, w2, b2)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.input {
            return Err(Error::ShapeMismatch {
                expected: self.input,
                got: x.len(),
            });
        }
        let (w1, b1, w2, b2) = self.offsets();
        let (w1, b1, w2, b2) = (&self.params[w1], &self.params[b1], &self.params[w2], &self.params[b2]);
        let hidden_pre: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &w1[h * self.input..(h + 1) * self.input];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[h]
            })
            .collect();
        let hidden: Vec<f64> = hidden_pre.iter().map(|&z| if z > 0.0 { z } else { 0.0 }).collect();
        let logits: Vec<f64> = (0..self.output)
            .map(|o| {
                let row = &w2[o * self.hidden..(o + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>() + b2[o]
            })
            .collect();
        let output = match self.head {
            Head::Softmax => softmax(&logits),
            Head::Scalar | Head::Identity => logits.clone(),
        };
        Ok(Trace {
            hidden_pre,
            hidden,
            logits,
            output,
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.output)
    }

    /// Scalar-head convenience.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward_trace(x)?.logits[0])
    }

    /// Reverse-mode gradients given `upstream = ∂L/∂output` (the post-head
    /// output; probabilities for a softmax head). Returns parameter gradients
    /// in the flat layout and `∂L/∂x`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        self.backward_from_trace(x, &trace, upstream)
    }

    pub fn backward_from_trace(&self, x: &[f64], trace: &Trace, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if upstream.len() != self.output {
            return Err(Error::ShapeMismatch {
                expected: self.output,
                got: upstream.len(),
            });
        }
        let g_logits = match self.head {
            Head::Softmax => {
                let p = &trace.output;
                let dot: f64 = p.iter().zip(upstream).map(|(a, b)| a * b).sum();
                p.iter().zip(upstream).map(|(pi, gi)| pi * (gi - dot)).collect()
            }
            Head::Scalar | Head::Identity => upstream.to_vec(),
        };
        self.backward_logits_from_trace(x, trace, &g_logits)
    }

    /// Gradients given `∂L/∂logits` (pre-head).
    pub fn backward_logits(&self, x: &[f64], g_logits: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let trace = self.forward_trace(x)?;
        self.backward_logits_from_trace(x, &trace, g_logits)
    }

    pub fn backward_logits_from_trace(
        &self,
        x: &[f64],
        trace: &Trace,
        g_logits: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        if g_logits.len() != self.output {
            return Err(Error::ShapeMismatch {
                expected: self.output,
                got: g_logits.len(),
            });
        }
        let (w1r, b1r, w2r, b2r) = self.offsets();
        let w1 = &self.params[w1r.clone()];
        let w2 = &self.params[w2r.clone()];
        let mut grads = vec![0.0; self.params.len()];

        let mut g_hidden = vec![0.0; self.hidden];
        for o in 0..self.output {
            let g = g_logits[o];
            grads[b2r.start + o] = g;
            for h in 0..self.hidden {
                grads[w2r.start + o * self.hidden + h] = g * trace.hidden[h];
                g_hidden[h] += g * w2[o * self.hidden + h];
            }
        }
        let mut g_x = vec![0.0; self.input];
        for h in 0..self.hidden {
            // ReLU subgradient at 0 is 0.
            let g = if trace.hidden_pre[h] > 0.0 { g_hidden[h] } else { 0.0 };
            grads[b1r.start + h] = g;
            for i in 0..self.input {
                grads[w1r.start + h * self.input + i] = g * x[i];
                g_x[i] += g * w1[h * self.input + i];
            }
        }
        Ok((grads, g_x))
    }

    /// `θ ← θ − lr · clip(g)`. Non-finite gradients leave the parameters
    /// untouched.
    pub fn sgd_step(&mut self, grads: &[f64], opt: &mut OptimState) -> StepOutcome {
        assert_eq!(grads.len(), self.params.len(), "gradient layout mismatch");
        let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !norm.is_finite() {
            log::warn!("skipping update with non-finite gradient");
            return StepOutcome::Skipped;
        }
        let scale = if norm > opt.clip_norm { opt.clip_norm / norm } else { 1.0 };
        for (p, g) in self.params.iter_mut().zip(grads) {
            *p -= opt.learning_rate * scale * g;
        }
        opt.steps += 1;
        StepOutcome::Applied { grad_norm: norm }
    }

    /// Text checkpoint:
    ///
    /// ```text
    /// densenet v1
    /// head <softmax|scalar|identity>
    /// shape <input> <hidden> <output>
    /// params <count>
    /// <one value per line, W1 | b1 | W2 | b2, row-major>
    /// ```
    ///
    /// Values use the shortest round-trip decimal form, so the bytes are a
    /// pure function of the parameters.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "densenet v1")?;
        writeln!(w, "head {}", self.head.as_str())?;
        writeln!(w, "shape {} {} {}", self.input, self.hidden, self.output)?;
        writeln!(w, "params {}", self.params.len())?;
        for p in &self.params {
            writeln!(w, "{p}")?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: BufRead>(r: R) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| bad("unexpected end of file"))?
                .map_err(|e| Error::Checkpoint(e.to_string()))
        };
        if next()? != "densenet v1" {
            return Err(bad("missing `densenet v1` header"));
        }
        let head = match next()?.strip_prefix("head ") {
            Some("softmax") => Head::Softmax,
            Some("scalar") => Head::Scalar,
            Some("identity") => Head::Identity,
            _ => return Err(bad("bad head line")),
        };
        let shape: Vec<usize> = next()?
            .strip_prefix("shape ")
            .ok_or_else(|| bad("bad shape line"))?
            .split(' ')
            .map(|s| s.parse().map_err(|_| bad("bad shape value")))
            .collect::<Result<_>>()?;
        if shape.len() != 3 {
            return Err(bad("shape needs three sizes"));
        }
        let mut net = DenseNet::zeros(shape[0], shape[1], shape[2], head);
        let count: usize = next()?
            .strip_prefix("params ")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad params line"))?;
        if count != net.params.len() {
            return Err(bad("parameter count does not match shape"));
        }
        for p in net.params.iter_mut() {
            *p = next()?.parse().map_err(|_| bad("bad parameter value"))?;
            if !p.is_finite() {
                return Err(bad("non-finite parameter"));
            }
        }
        Ok(net)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Applied { grad_norm: f64 },
    Skipped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub steps: u64,
}

impl OptimState {
    pub fn new(learning_rate: f64, clip_norm: f64) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        assert!(clip_norm > 0.0, "clip norm must be positive");
        OptimState {
            learning_rate,
            clip_norm,
            steps: 0,
        }
    }
}

impl Default for OptimState {
    fn default() -> Self {
        OptimState::new(1e-3, 5.0)
    }
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Matrix {
            rows: r,
            cols: c,
            data: rows.concat(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = &mut out.data[r * other.cols..(r + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }
}

/// One graph-convolution layer with weight `W ∈ R^{in × k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub weight: Matrix,
}

impl GcnLayer {
    pub fn new<R: Rng>(input: usize, latent: usize, rng: &mut R) -> Self {
        let a = (6.0 / (input + latent) as f64).sqrt();
        let data = (0..input * latent).map(|_| rng.gen_range(-a..=a)).collect();
        GcnLayer {
            weight: Matrix {
                rows: input,
                cols: latent,
                data,
            },
        }
    }
}

/// `D^{-1/2} A D^{-1/2}` for an adjacency that already carries self-loops.
pub fn normalize_adjacency(adj: &Matrix) -> Result<Matrix> {
    let n = adj.rows;
    if adj.cols != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: adj.cols,
        });
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = adj.row(i).iter().sum();
            if d > 0.0 {
                Ok(1.0 / d.sqrt())
            } else {
                Err(Error::ZeroDegree(i))
            }
        })
        .collect::<Result<_>>()?;
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, inv_sqrt[i] * adj.get(i, j) * inv_sqrt[j]);
        }
    }
    Ok(out)
}

/// `ReLU(D^{-1/2} A D^{-1/2} · X · W)` where `X` holds one node per row.
pub fn gcn_forward(adj: &Matrix, feats: &Matrix, layer: &GcnLayer) -> Result<Matrix> {
    if feats.rows != adj.rows {
        return Err(Error::ShapeMismatch {
            expected: adj.rows,
            got: feats.rows,
        });
    }
    if feats.cols != layer.weight.rows {
        return Err(Error::ShapeMismatch {
            expected: layer.weight.rows,
            got: feats.cols,
        });
    }
    let propagated = normalize_adjacency(adj)?.matmul(feats);
    let mut z = propagated.matmul(&layer.weight);
    for v in &mut z.data {
        *v = v.max(0.0);
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AeConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl Default for AeConfig {
    fn default() -> Self {
        AeConfig {
            hidden: 16,
            learning_rate: 1e-2,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AutoencoderFit {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    /// Loss before each epoch followed by the loss after the last one.
    pub losses: Vec<f64>,
}

impl AutoencoderFit {
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least the initial loss")
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encoder.forward(x)
    }
}

/// Mean squared reconstruction error over every entry, and optionally the
/// full-batch gradients of both halves.
pub fn autoencoder_loss(
    encoder: &DenseNet,
    decoder: &DenseNet,
    data: &Matrix,
    with_grads: bool,
) -> Result<(f64, Option<(Vec<f64>, Vec<f64>)>)> {
    let scale = 1.0 / (data.rows * data.cols).max(1) as f64;
    let mut loss = 0.0;
    let mut g_enc = vec![0.0; if with_grads { encoder.num_params() } else { 0 }];
    let mut g_dec = vec![0.0; if with_grads { decoder.num_params() } else { 0 }];
    for r in 0..data.rows {
        let x = data.row(r);
        let te = encoder.forward_trace(x)?;
        let td = decoder.forward_trace(&te.output)?;
        let diff: Vec<f64> = td.output.iter().zip(x).map(|(a, b)| a - b).collect();
        loss += diff.iter().map(|d| d * d).sum::<f64>() * scale;
        if with_grads {
            let up: Vec<f64> = diff.iter().map(|d| 2.0 * d * scale).collect();
            let (gd, g_latent) = decoder.backward_from_trace(&te.output, &td, &up)?;
            let (ge, _) = encoder.backward_from_trace(x, &te, &g_latent)?;
            for (a, b) in g_dec.iter_mut().zip(gd) {
                *a += b;
            }
            for (a, b) in g_enc.iter_mut().zip(ge) {
                *a += b;
            }
        }
    }
    Ok((loss, with_grads.then_some((g_enc, g_dec))))
}

/// Full-batch gradient descent on the reconstruction MSE of the rows of
/// `data`, deterministic per seed.
pub fn train_autoencoder(
    data: &Matrix,
    latent: usize,
    epochs: usize,
    seed: u64,
    cfg: &AeConfig,
) -> Result<AutoencoderFit> {
    if latent == 0 {
        return Err(Error::InvalidConfig("latent size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut encoder = DenseNet::new(data.cols, cfg.hidden, latent, Head::Identity, &mut rng);
    let mut decoder = DenseNet::new(latent, cfg.hidden, data.cols, Head::Identity, &mut rng);
    let mut opt_e = OptimState::new(cfg.learning_rate, cfg.clip_norm);
    let mut opt_d = OptimState::new(cfg.learning_rate, cfg.clip_norm);
    let mut losses = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        let (loss, grads) = autoencoder_loss(&encoder, &decoder, data, true)?;
        losses.push(loss);
        let (ge, gd) = grads.expect("requested");
        encoder.sgd_step(&ge, &mut opt_e);
        decoder.sgd_step(&gd, &mut opt_d);
    }
    losses.push(autoencoder_loss(&encoder, &decoder, data, false)?.0);
    Ok(AutoencoderFit {
        encoder,
        decoder,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()) + 1e-9
    }

    fn numeric_grad(net: &DenseNet, f: impl Fn(&DenseNet) -> f64) -> Vec<f64> {
        let h = 1e-5;
        (0..net.num_params())
            .map(|i| {
                let mut p = net.clone();
                p.params_mut()[i] += h;
                let up = f(&p);
                p.params_mut()[i] -= 2.0 * h;
                let down = f(&p);
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn zero_nets() {
        let net = DenseNet::zeros(3, 5, 4, Head::Softmax);
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.25; 4]);
        let v = DenseNet::zeros(3, 5, 1, Head::Scalar);
        assert_eq!(v.value(&[1.0, -1.0, 0.5]).unwrap(), 0.0);
        let (g, gx) = v.backward(&[0.0; 3], &[1.0]).unwrap();
        // Only b2 sees the upstream gradient: the hidden layer is dead at 0.
        let nonzero: Vec<usize> = g.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, _)| i).collect();
        assert_eq!(nonzero, vec![g.len() - 1]);
        assert!(gx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let net = DenseNet::zeros(3, 2, 2, Head::Identity);
        assert!(matches!(net.forward(&[1.0]), Err(Error::ShapeMismatch { expected: 3, got: 1 })));
        assert!(net.backward(&[1.0, 2.0, 3.0], &[1.0]).is_err());
    }

    /// Plain matrix arithmetic written independently of the flat layout.
    #[test]
    fn forward_matches_matrix_oracle() {
        let net = DenseNet::seeded(3, 5, 2, Head::Softmax, 11);
        let x = [0.3, -1.2, 2.0];
        let p = net.params();
        let w1 = Matrix { rows: 5, cols: 3, data: p[0..15].to_vec() };
        let b1 = &p[15..20];
        let w2 = Matrix { rows: 2, cols: 5, data: p[20..30].to_vec() };
        let b2 = &p[30..32];
        let xm = Matrix { rows: 3, cols: 1, data: x.to_vec() };
        let h: Vec<f64> = w1.matmul(&xm).data.iter().zip(b1).map(|(a, b)| (a + b).max(0.0)).collect();
        let hm = Matrix { rows: 5, cols: 1, data: h };
        let z: Vec<f64> = w2.matmul(&hm).data.iter().zip(b2).map(|(a, b)| a + b).collect();
        let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        let out = net.forward(&x).unwrap();
        for (o, ei) in out.iter().zip(&e) {
            assert!((o - ei / s).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for head in [Head::Scalar, Head::Identity, Head::Softmax] {
            let net = DenseNet::new(4, 6, 3, head, &mut rng);
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let out_len = net.output_size();
            let up: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = |n: &DenseNet| -> f64 {
                n.forward(&x).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum()
            };
            let (g, _) = net.backward(&x, &up).unwrap();
            for (a, n) in g.iter().zip(numeric_grad(&net, f)) {
                assert!(rel_close(*a, n, 1e-4), "{head:?}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn log_prob_gradient_is_onehot_minus_probs() {
        let net = DenseNet::seeded(3, 4, 3, Head::Softmax, 2);
        let x = [0.5, -0.1, 0.9];
        let action = 1;
        let t = net.forward_trace(&x).unwrap();
        let g_logits: Vec<f64> = t
            .output
            .iter()
            .enumerate()
            .map(|(i, p)| if i == action { 1.0 - p } else { -p })
            .collect();
        let (g, _) = net.backward_logits(&x, &g_logits).unwrap();
        let numeric = numeric_grad(&net, |n| n.forward(&x).unwrap()[action].ln());
        for (a, b) in g.iter().zip(numeric) {
            assert!(rel_close(*a, b, 1e-4), "{a} vs {b}");
        }
    }

    #[test]
    fn sgd_examples() {
        let mut net = DenseNet::zeros(1, 1, 1, Head::Scalar);
        let n = net.num_params();
        net.params_mut()[n - 1] = 0.5;
        let mut g = vec![0.0; n];
        g[n - 1] = 1.0;
        let mut opt = OptimState::new(0.1, 5.0);
        assert_eq!(net.sgd_step(&g, &mut opt), StepOutcome::Applied { grad_norm: 1.0 });
        assert!((net.params()[n - 1] - 0.4).abs() < 1e-15);

        // clip 1.0, |g| = 10 → step uses g / 10
        let mut net = DenseNet::zeros(1, 1, 1, Head::Scalar);
        let mut g = vec![0.0; n];
        g[0] = 6.0;
        g[n - 1] = 8.0;
        let mut opt = OptimState::new(1.0, 1.0);
        net.sgd_step(&g, &mut opt);
        assert!((net.params()[0] + 0.6).abs() < 1e-15);
        assert!((net.params()[n - 1] + 0.8).abs() < 1e-15);

        let before = net.clone();
        g[1] = f64::NAN;
        assert_eq!(net.sgd_step(&g, &mut opt), StepOutcome::Skipped);
        assert_eq!(net, before);
        assert_eq!(opt.steps, 1);
    }

    #[test]
    fn checkpoint_round_trip_is_deterministic() {
        let net = DenseNet::seeded(3, 4, 2, Head::Softmax, 9);
        let mut a = Vec::new();
        net.write_checkpoint(&mut a).unwrap();
        let mut b = Vec::new();
        DenseNet::seeded(3, 4, 2, Head::Softmax, 9).write_checkpoint(&mut b).unwrap();
        assert_eq!(a, b);
        let back = DenseNet::read_checkpoint(&a[..]).unwrap();
        assert_eq!(back, net);
        assert!(DenseNet::read_checkpoint(&b"densenet v2\n"[..]).is_err());
    }

    #[test]
    fn gcn_identity_adjacency() {
        let feats = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![0.5, 0.0]]);
        let layer = GcnLayer { weight: Matrix::identity(2) };
        let z = gcn_forward(&Matrix::identity(3), &feats, &layer).unwrap();
        assert_eq!(z, feats);
    }

    #[test]
    fn gcn_all_ones_two_nodes() {
        let adj = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        let feats = Matrix::from_rows(&[vec![2.0, 4.0], vec![6.0, -8.0]]);
        let layer = GcnLayer { weight: Matrix::identity(2) };
        let z = gcn_forward(&adj, &feats, &layer).unwrap();
        // each entry: 1/2 · (row0 + row1), then ReLU
        let expect = [4.0, 0.0, 4.0, 0.0];
        assert!(z.data.iter().zip(expect).all(|(a, b)| (a - b).abs() < 1e-12), "{z:?}");
        let zero = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 1.0]]);
        assert!(matches!(gcn_forward(&zero, &feats, &layer), Err(Error::ZeroDegree(0))));
    }

    #[test]
    fn gcn_matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 4;
        let mut adj = Matrix::zeros(n, n);
        for i in 0..n {
            adj.set(i, i, 1.0);
            for j in i + 1..n {
                let v = rng.gen_range(0.0..1.0);
                adj.set(i, j, v);
                adj.set(j, i, v);
            }
        }
        let feats = Matrix { rows: n, cols: 5, data: (0..n * 5).map(|_| rng.gen_range(-1.0..1.0)).collect() };
        let layer = GcnLayer::new(5, 3, &mut rng);
        let z = gcn_forward(&adj, &feats, &layer).unwrap();
        let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| adj.get(i, j)).sum()).collect();
        for i in 0..n {
            for c in 0..3 {
                let mut acc = 0.0;
                for j in 0..n {
                    let a = adj.get(i, j) / (deg[i].sqrt() * deg[j].sqrt());
                    for m in 0..5 {
                        acc += a * feats.get(j, m) * layer.weight.get(m, c);
                    }
                }
                assert!((z.get(i, c) - acc.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn autoencoder_zero_epochs() {
        let data = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![2.0, 4.0, 6.0]]);
        let fit = train_autoencoder(&data, 1, 0, 3, &AeConfig::default()).unwrap();
        assert_eq!(fit.losses.len(), 1);
        let (init, _) = autoencoder_loss(&fit.encoder, &fit.decoder, &data, false).unwrap();
        assert_eq!(fit.final_loss(), init);
    }

    #[test]
    fn autoencoder_learns_rank_one_data() {
        let u = [1.0, -0.5, 0.25, 0.8, -1.0, 0.3];
        let v = [0.6, -0.2, 1.0, 0.4];
        let rows: Vec<Vec<f64>> = u.iter().map(|a| v.iter().map(|b| a * b).collect()).collect();
        let data = Matrix::from_rows(&rows);
        let cfg = AeConfig { hidden: 8, learning_rate: 0.05, clip_norm: 5.0 };
        let fit = train_autoencoder(&data, 1, 3000, 1, &cfg).unwrap();
        assert!(fit.final_loss() < 0.1 * fit.losses[0], "{} vs {}", fit.final_loss(), fit.losses[0]);
    }

    #[test]
    fn autoencoder_loss_is_monotone_for_small_steps() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| (0..4).map(|j| ((i * 4 + j) as f64 * 0.37).sin()).collect()).collect();
        let data = Matrix::from_rows(&rows);
        let cfg = AeConfig { hidden: 6, learning_rate: 1e-3, clip_norm: 5.0 };
        let fit = train_autoencoder(&data, 2, 200, 8, &cfg).unwrap();
        for w in fit.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn autoencoder_gradients_match_finite_differences() {
        let rows: Vec<Vec<f64>> = (0..4).map(|i| (0..3).map(|j| ((i * 3 + j) as f64).cos()).collect()).collect();
        let data = Matrix::from_rows(&rows);
        let fit = train_autoencoder(&data, 2, 0, 21, &AeConfig { hidden: 5, ..Default::default() }).unwrap();
        let (_, g) = autoencoder_loss(&fit.encoder, &fit.decoder, &data, true).unwrap();
        let (ge, gd) = g.unwrap();
        let ne = numeric_grad(&fit.encoder, |e| autoencoder_loss(e, &fit.decoder, &data, false).unwrap().0);
        let nd = numeric_grad(&fit.decoder, |d| autoencoder_loss(&fit.encoder, d, &data, false).unwrap().0);
        for (a, b) in ge.iter().zip(ne).chain(gd.iter().zip(nd)) {
            assert!(rel_close(*a, b, 1e-4), "{a} vs {b}");
        }
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let data = Matrix::from_rows(&[vec![0.1, 0.2], vec![0.3, -0.4], vec![1.0, 0.0]]);
        let a = train_autoencoder(&data, 1, 25, 77, &AeConfig::default()).unwrap();
        let b = train_autoencoder(&data, 1, 25, 77, &AeConfig::default()).unwrap();
        assert_eq!(a.encoder, b.encoder);
        assert_eq!(a.decoder, b.decoder);
        assert_eq!(
            a.losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.losses.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
