//! A two-layer causal self-attention language model in plain `f64`.
//!
//! Pre-norm residual blocks (single-head attention, then a GELU MLP),
//! learned token and position embeddings, a final layer norm and a linear
//! readout. All parameters live in one flat vector; [`Layout`] records where
//! each tensor starts. Matrices are row-major `[inputs x outputs]` and every
//! weight matrix is immediately followed by its bias.

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{TokenId, MAX_VOCAB};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub max_len: usize,
}

impl ModelConfig {
    pub fn toy(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            vocab_size,
            d_model: 32,
            d_ff: 128,
            n_layers: 2,
            max_len: 128,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.vocab_size < 2 || self.vocab_size > MAX_VOCAB {
            return bad(format!("vocab_size {} outside 2..={MAX_VOCAB}", self.vocab_size));
        }
        if self.d_model == 0 || self.d_model > 32 {
            return bad(format!("d_model {} outside 1..=32", self.d_model));
        }
        if self.d_ff == 0 || self.n_layers == 0 || self.max_len == 0 {
            return bad("d_ff, n_layers and max_len must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("token id {0} outside the vocabulary")]
    TokenOutOfRange(TokenId),
    #[error("input of {len} tokens exceeds the {max}-token window")]
    TooLong { len: usize, max: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("parameter vector has {got} entries, layout needs {expected}")]
    ParamCount { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIx {
    ln1: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln2: usize,
    w1: usize,
    w2: usize,
}

/// Offsets of every tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    tok: usize,
    pos: usize,
    layers: Vec<LayerIx>,
    lnf: usize,
    w_out: usize,
    len: usize,
    regions: Vec<(String, Range<usize>, Init)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Normal(f64),
    Constant(f64),
}

impl Layout {
    fn new(c: &ModelConfig) -> Layout {
        let (d, f, v) = (c.d_model, c.d_ff, c.vocab_size);
        let mut regions = Vec::new();
        let mut next = 0usize;
        let mut alloc = |name: String, n: usize, init: Init| {
            let start = next;
            next += n;
            regions.push((name, start..next, init));
            start
        };
        let scaled = |fan_in: usize| Init::Normal(1.0 / (fan_in as f64).sqrt());
        let tok = alloc("tok_emb".into(), v * d, Init::Normal(0.1));
        let pos = alloc("pos_emb".into(), c.max_len * d, Init::Normal(0.1));
        let mut layers = Vec::new();
        for l in 0..c.n_layers {
            let ln = |name: &str, alloc: &mut dyn FnMut(String, usize, Init) -> usize| {
                let g = alloc(format!("l{l}.{name}.gain"), d, Init::Constant(1.0));
                alloc(format!("l{l}.{name}.bias"), d, Init::Constant(0.0));
                g
            };
            let ln1 = ln("ln1", &mut alloc);
            let mut linear = |name: &str, n_in: usize, n_out: usize| {
                let w = alloc(format!("l{l}.{name}.weight"), n_in * n_out, scaled(n_in));
                alloc(format!("l{l}.{name}.bias"), n_out, Init::Constant(0.0));
                w
            };
            let wq = linear("wq", d, d);
            let wk = linear("wk", d, d);
            let wv = linear("wv", d, d);
            let wo = linear("wo", d, d);
            let ln2 = ln("ln2", &mut alloc);
            let w1 = alloc(format!("l{l}.w1.weight"), d * f, scaled(d));
            alloc(format!("l{l}.w1.bias"), f, Init::Constant(0.0));
            let w2 = alloc(format!("l{l}.w2.weight"), f * d, scaled(f));
            alloc(format!("l{l}.w2.bias"), d, Init::Constant(0.0));
            layers.push(LayerIx {
                ln1,
                wq,
                wk,
                wv,
                wo,
                ln2,
                w1,
                w2,
            });
        }
        let lnf = alloc("lnf.gain".into(), d, Init::Constant(1.0));
        alloc("lnf.bias".into(), d, Init::Constant(0.0));
        let w_out = alloc("out.weight".into(), d * v, scaled(d));
        alloc("out.bias".into(), v, Init::Constant(0.0));
        Layout {
            tok,
            pos,
            layers,
            lnf,
            w_out,
            len: next,
            regions,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Named parameter tensors in storage order.
    pub fn regions(&self) -> impl Iterator<Item = (&str, Range<usize>)> {
        self.regions.iter().map(|(n, r, _)| (n.as_str(), r.clone()))
    }

    pub fn region(&self, name: &str) -> Option<Range<usize>> {
        self.regions().find(|(n, _)| *n == name).map(|(_, r)| r)
    }

    /// Row of the token embedding table for `token`.
    pub fn token_row(&self, token: TokenId, d: usize) -> Range<usize> {
        let s = self.tok + token as usize * d;
        s..s + d
    }

    pub fn position_row(&self, pos: usize, d: usize) -> Range<usize> {
        let s = self.pos + pos * d;
        s..s + d
    }
}

/// Intermediate values kept for the backward pass.
struct LayerCache {
    ln1: Norm,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention weights, `[T x T]`, zero above the diagonal.
    p: Vec<f64>,
    ctx: Vec<f64>,
    ln2: Norm,
    u: Vec<f64>,
    g: Vec<f64>,
}

struct Norm {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
    y: Vec<f64>,
}

/// Result of a forward pass over one input sequence.
pub struct Forward {
    tokens: Vec<TokenId>,
    start: usize,
    layers: Vec<LayerCache>,
    lnf: Norm,
    /// Logits for positions `start..T`, row-major `[(T - start) x V]`.
    pub logits: Vec<f64>,
}

impl Forward {
    pub fn positions(&self) -> Range<usize> {
        self.start..self.tokens.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TinyLm {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

fn linear(x: &[f64], wb: &[f64], rows: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let (w, b) = wb.split_at(n_in * n_out);
    let mut y = Vec::with_capacity(rows * n_out);
    for r in 0..rows {
        y.extend_from_slice(&b[..n_out]);
        let out = &mut y[r * n_out..];
        for (i, &xi) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, &wio) in out.iter_mut().zip(&w[i * n_out..(i + 1) * n_out]) {
                *o += xi * wio;
            }
        }
    }
    y
}

/// Accumulates weight and bias gradients into `dwb` and returns the input
/// gradient.
fn linear_back(x: &[f64], wb: &[f64], dy: &[f64], rows: usize, n_in: usize, n_out: usize, dwb: &mut [f64]) -> Vec<f64> {
    let w = &wb[..n_in * n_out];
    let (dw, db) = dwb[..n_in * n_out + n_out].split_at_mut(n_in * n_out);
    let mut dx = vec![0.0; rows * n_in];
    for r in 0..rows {
        let dyr = &dy[r * n_out..(r + 1) * n_out];
        if dyr.iter().all(|&g| g == 0.0) {
            continue;
        }
        for (b, &g) in db.iter_mut().zip(dyr) {
            *b += g;
        }
        for i in 0..n_in {
            let xi = x[r * n_in + i];
            let wrow = &w[i * n_out..(i + 1) * n_out];
            let dwrow = &mut dw[i * n_out..(i + 1) * n_out];
            let mut acc = 0.0;
            for o in 0..n_out {
                dwrow[o] += xi * dyr[o];
                acc += dyr[o] * wrow[o];
            }
            dx[r * n_in + i] = acc;
        }
    }
    dx
}

fn layer_norm(x: &[f64], gb: &[f64], rows: usize, d: usize) -> Norm {
    let (g, b) = gb.split_at(d);
    let mut xhat = vec![0.0; rows * d];
    let mut y = vec![0.0; rows * d];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for i in 0..d {
            let h = (row[i] - mean) * s;
            xhat[r * d + i] = h;
            y[r * d + i] = h * g[i] + b[i];
        }
    }
    Norm { xhat, rstd, y }
}

fn layer_norm_back(dy: &[f64], n: &Norm, gb: &[f64], rows: usize, d: usize, dgb: &mut [f64]) -> Vec<f64> {
    let g = &gb[..d];
    let (dg, db) = dgb[..2 * d].split_at_mut(d);
    let mut dx = vec![0.0; rows * d];
    let mut dxhat = vec![0.0; d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &n.xhat[r * d..(r + 1) * d];
        let mut sum = 0.0;
        let mut dot = 0.0;
        for i in 0..d {
            dg[i] += dyr[i] * xh[i];
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
            sum += dxhat[i];
            dot += dxhat[i] * xh[i];
        }
        let scale = n.rstd[r] / d as f64;
        for i in 0..d {
            dx[r * d + i] = scale * (d as f64 * dxhat[i] - sum - xh[i] * dot);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

impl TinyLm {
    /// Fresh model. Weight matrices are drawn from N(0, 1/fan_in),
    /// embeddings from N(0, 0.01), layer-norm gains start at 1 and all biases
    /// at 0.
    pub fn new(config: ModelConfig, seed: u64) -> Result<TinyLm, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.len];
        for (_, range, init) in &layout.regions {
            match *init {
                Init::Constant(c) => params[range.clone()].fill(c),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    for p in &mut params[range.clone()] {
                        *p = dist.sample(&mut rng);
                    }
                }
            }
        }
        Ok(TinyLm { config, layout, params })
    }

    pub fn from_params(config: ModelConfig, params: Vec<f64>) -> Result<TinyLm, ModelError> {
        config.validate()?;
        let layout = Layout::new(&config);
        if params.len() != layout.len {
            return Err(ModelError::ParamCount {
                got: params.len(),
                expected: layout.len,
            });
        }
        Ok(TinyLm { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, tokens: &[TokenId]) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if tokens.len() > self.config.max_len {
            return Err(ModelError::TooLong {
                len: tokens.len(),
                max: self.config.max_len,
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(ModelError::TokenOutOfRange(t));
        }
        Ok(())
    }

    /// Runs the network over `tokens`, producing logits for every position
    /// from `start` on.
    pub fn forward(&self, tokens: &[TokenId], start: usize) -> Result<Forward, ModelError> {
        self.check_input(tokens)?;
        let p = &self.params;
        let ModelConfig {
            d_model: d,
            d_ff: f,
            vocab_size: v,
            ..
        } = self.config;
        let t_len = tokens.len();
        let start = start.min(t_len);
        let mut h = vec![0.0; t_len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            let row = &mut h[t * d..(t + 1) * d];
            row.copy_from_slice(&p[self.layout.token_row(tok, d)]);
            add_into(row, &p[self.layout.position_row(t, d)]);
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut layers = Vec::with_capacity(self.layout.layers.len());
        for ix in &self.layout.layers {
            let ln1 = layer_norm(&h, &p[ix.ln1..], t_len, d);
            let q = linear(&ln1.y, &p[ix.wq..], t_len, d, d);
            let k = linear(&ln1.y, &p[ix.wk..], t_len, d, d);
            let vv = linear(&ln1.y, &p[ix.wv..], t_len, d, d);
            let mut att = vec![0.0; t_len * t_len];
            let mut ctx = vec![0.0; t_len * d];
            for i in 0..t_len {
                let qi = &q[i * d..(i + 1) * d];
                let row = &mut att[i * t_len..i * t_len + i + 1];
                for (j, s) in row.iter_mut().enumerate() {
                    *s = scale * qi.iter().zip(&k[j * d..(j + 1) * d]).map(|(a, b)| a * b).sum::<f64>();
                }
                let probs = softmax(row);
                row.copy_from_slice(&probs);
                let ci = &mut ctx[i * d..(i + 1) * d];
                for (j, &pij) in probs.iter().enumerate() {
                    for (c, &vj) in ci.iter_mut().zip(&vv[j * d..(j + 1) * d]) {
                        *c += pij * vj;
                    }
                }
            }
            let att_out = linear(&ctx, &p[ix.wo..], t_len, d, d);
            add_into(&mut h, &att_out);
            let ln2 = layer_norm(&h, &p[ix.ln2..], t_len, d);
            let u = linear(&ln2.y, &p[ix.w1..], t_len, d, f);
            let g: Vec<f64> = u.iter().map(|&x| gelu(x)).collect();
            let m = linear(&g, &p[ix.w2..], t_len, f, d);
            add_into(&mut h, &m);
            layers.push(LayerCache {
                ln1,
                q,
                k,
                v: vv,
                p: att,
                ctx,
                ln2,
                u,
                g,
            });
        }
        let lnf = layer_norm(&h, &p[self.layout.lnf..], t_len, d);
        let logits = linear(&lnf.y[start * d..], &p[self.layout.w_out..], t_len - start, d, v);
        Ok(Forward {
            tokens: tokens.to_vec(),
            start,
            layers,
            lnf,
            logits,
        })
    }

    /// Backpropagates `dlogits` (shaped like `fwd.logits`) and adds the
    /// parameter gradients into `grads`.
    pub fn backward(&self, fwd: &Forward, dlogits: &[f64], grads: &mut [f64]) {
        assert_eq!(dlogits.len(), fwd.logits.len(), "dlogits shape");
        assert_eq!(grads.len(), self.params.len(), "gradient buffer size");
        let p = &self.params;
        let ModelConfig {
            d_model: d,
            d_ff: f,
            vocab_size: v,
            ..
        } = self.config;
        let t_len = fwd.tokens.len();
        let start = fwd.start;
        let lo = &self.layout;

        let dz_tail = linear_back(
            &fwd.lnf.y[start * d..],
            &p[lo.w_out..],
            dlogits,
            t_len - start,
            d,
            v,
            &mut grads[lo.w_out..],
        );
        let mut dz = vec![0.0; t_len * d];
        dz[start * d..].copy_from_slice(&dz_tail);
        let mut dh = layer_norm_back(&dz, &fwd.lnf, &p[lo.lnf..], t_len, d, &mut grads[lo.lnf..]);

        let scale = 1.0 / (d as f64).sqrt();
        for (ix, c) in lo.layers.iter().zip(&fwd.layers).rev() {
            // MLP branch.
            let dg = linear_back(&c.g, &p[ix.w2..], &dh, t_len, f, d, &mut grads[ix.w2..]);
            let du: Vec<f64> = dg.iter().zip(&c.u).map(|(g, &u)| g * gelu_grad(u)).collect();
            let dln2 = linear_back(&c.ln2.y, &p[ix.w1..], &du, t_len, d, f, &mut grads[ix.w1..]);
            let dx = layer_norm_back(&dln2, &c.ln2, &p[ix.ln2..], t_len, d, &mut grads[ix.ln2..]);
            add_into(&mut dh, &dx);

            // Attention branch.
            let dctx = linear_back(&c.ctx, &p[ix.wo..], &dh, t_len, d, d, &mut grads[ix.wo..]);
            let mut dq = vec![0.0; t_len * d];
            let mut dk = vec![0.0; t_len * d];
            let mut dv = vec![0.0; t_len * d];
            let mut dp = vec![0.0; t_len];
            for i in 0..t_len {
                let dci = &dctx[i * d..(i + 1) * d];
                let probs = &c.p[i * t_len..i * t_len + i + 1];
                let mut weighted = 0.0;
                for j in 0..=i {
                    let vj = &c.v[j * d..(j + 1) * d];
                    dp[j] = dci.iter().zip(vj).map(|(a, b)| a * b).sum();
                    weighted += probs[j] * dp[j];
                    for (dvj, &g) in dv[j * d..(j + 1) * d].iter_mut().zip(dci) {
                        *dvj += probs[j] * g;
                    }
                }
                for j in 0..=i {
                    let ds = probs[j] * (dp[j] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for e in 0..d {
                        dq[i * d + e] += ds * c.k[j * d + e];
                        dk[j * d + e] += ds * c.q[i * d + e];
                    }
                }
            }
            let mut dln1 = linear_back(&c.ln1.y, &p[ix.wq..], &dq, t_len, d, d, &mut grads[ix.wq..]);
            add_into(
                &mut dln1,
                &linear_back(&c.ln1.y, &p[ix.wk..], &dk, t_len, d, d, &mut grads[ix.wk..]),
            );
            add_into(
                &mut dln1,
                &linear_back(&c.ln1.y, &p[ix.wv..], &dv, t_len, d, d, &mut grads[ix.wv..]),
            );
            let dx = layer_norm_back(&dln1, &c.ln1, &p[ix.ln1..], t_len, d, &mut grads[ix.ln1..]);
            add_into(&mut dh, &dx);
        }

        for (t, &tok) in fwd.tokens.iter().enumerate() {
            let g = &dh[t * d..(t + 1) * d];
            add_into(&mut grads[lo.token_row(tok, d)], g);
            add_into(&mut grads[lo.position_row(t, d)], g);
        }
    }

    /// Next-token distribution after `tokens`.
    pub fn next_distribution(&self, tokens: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        let fwd = self.forward(tokens, tokens.len().saturating_sub(1))?;
        Ok(softmax(&fwd.logits))
    }

    /// Most likely next token; ties go to the lowest id.
    pub fn greedy_next(&self, tokens: &[TokenId]) -> Result<TokenId, ModelError> {
        let fwd = self.forward(tokens, tokens.len().saturating_sub(1))?;
        let mut best = 0;
        for (i, &z) in fwd.logits.iter().enumerate() {
            if z > fwd.logits[best] {
                best = i;
            }
        }
        Ok(best as TokenId)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            vocab_size: 7,
            d_model: 4,
            d_ff: 8,
            n_layers: 2,
            max_len: 6,
        }
    }

    #[test]
    fn toy_size_is_in_the_tens_of_thousands() {
        let m = TinyLm::new(ModelConfig::toy(63), 0).unwrap();
        assert!((30_000..60_000).contains(&m.n_params()), "{}", m.n_params());
        assert_eq!(m.layout().regions().map(|(_, r)| r.len()).sum::<usize>(), m.n_params());
    }

    #[test]
    fn outputs_are_distributions() {
        let m = TinyLm::new(small(), 3).unwrap();
        let fwd = m.forward(&[1, 2, 3, 4, 5], 0).unwrap();
        for row in fwd.logits.chunks(7) {
            let s: f64 = softmax(row).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn causal_outputs_ignore_future_tokens() {
        let m = TinyLm::new(small(), 4).unwrap();
        let a = m.forward(&[1, 2, 3, 4], 0).unwrap();
        let b = m.forward(&[1, 2, 6, 0], 0).unwrap();
        assert_eq!(a.logits[..14], b.logits[..14]);
        assert_ne!(a.logits[14..], b.logits[14..]);
    }

    #[test]
    fn input_validation() {
        let m = TinyLm::new(small(), 0).unwrap();
        assert_eq!(m.forward(&[], 0).err(), Some(ModelError::EmptyInput));
        assert_eq!(m.forward(&[7], 0).err(), Some(ModelError::TokenOutOfRange(7)));
        assert!(matches!(
            m.forward(&[0; 7], 0),
            Err(ModelError::TooLong { len: 7, max: 6 })
        ));
        assert!(TinyLm::new(
            ModelConfig {
                vocab_size: 65,
                ..small()
            },
            0
        )
        .is_err());
        assert!(TinyLm::from_params(small(), vec![0.0; 3]).is_err());
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(TinyLm::new(small(), 9).unwrap(), TinyLm::new(small(), 9).unwrap());
        assert_ne!(TinyLm::new(small(), 9).unwrap(), TinyLm::new(small(), 10).unwrap());
    }
}
