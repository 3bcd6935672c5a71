use rayon::prelude::*;
use sqf_autodiff::{Graph, Tensor, Var, MASK_FILL};

use super::params::{BranchLayout, LayerLayout, ParamStore};
use super::{Batch, ModelConfig, ModelError, Result};
use crate::domain::{ForecastSample, QuantilePrediction};
use crate::seed::splitmix64;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from streams derived from `seed`.
    Train { seed: u64 },
    Inference,
}

/// Hands out a distinct dropout seed to every dropout site of a forward pass.
pub struct DropoutCtx {
    p: f64,
    seed: Option<u64>,
    counter: u64,
}

impl DropoutCtx {
    pub fn new(p: f64, mode: Mode) -> Self {
        Self {
            p,
            seed: match mode {
                Mode::Train { seed } => Some(seed),
                Mode::Inference => None,
            },
            counter: 0,
        }
    }

    pub fn inference() -> Self {
        Self::new(0.0, Mode::Inference)
    }

    pub fn apply<T: Scalar>(&mut self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        match self.seed {
            Some(seed) if self.p > 0.0 => {
                self.counter += 1;
                Ok(g.dropout(x, self.p, splitmix64(seed ^ self.counter.wrapping_mul(0x9e37_79b9_7f4a_7c15)))?)
            }
            _ => Ok(x),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerVars {
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

#[derive(Clone, Debug)]
pub struct BranchVars {
    pub embed_w: Var,
    pub embed_b: Var,
    pub layers: Vec<LayerVars>,
}

fn layer_vars(l: &LayerLayout, v: &[Var]) -> LayerVars {
    LayerVars {
        ln1_gamma: v[l.ln1_gamma],
        ln1_beta: v[l.ln1_beta],
        wq: v[l.wq],
        bq: v[l.bq],
        wk: v[l.wk],
        bk: v[l.bk],
        wv: v[l.wv],
        bv: v[l.bv],
        wo: v[l.wo],
        bo: v[l.bo],
        ln2_gamma: v[l.ln2_gamma],
        ln2_beta: v[l.ln2_beta],
        w1: v[l.w1],
        b1: v[l.b1],
        w2: v[l.w2],
        b2: v[l.b2],
    }
}

fn branch_vars(b: &BranchLayout, v: &[Var]) -> BranchVars {
    BranchVars {
        embed_w: v[b.embed_w],
        embed_b: v[b.embed_b],
        layers: b.layers.iter().map(|l| layer_vars(l, v)).collect(),
    }
}

/// Fixed sinusoidal encoding, `[n, d]` row-major: even columns
/// `sin(pos / 10000^(2i/d))`, odd columns the matching cosine.
pub fn positional_encoding<T: Scalar>(n: usize, d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * d);
    for pos in 0..n {
        for c in 0..d {
            let i = (c / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * i / d as f64);
            out.push(T::lit(if c % 2 == 0 { angle.sin() } else { angle.cos() }));
        }
    }
    out
}

/// Linear projection of `tokens` `[B, n, F]` to `[B, n, d]` plus the
/// positional encoding.
pub fn embed_and_position<T: Scalar>(g: &mut Graph<T>, tokens: Var, w: Var, b: Var) -> Result<Var> {
    let (ts, ws) = (g.shape(tokens).to_vec(), g.shape(w).to_vec());
    if ts.len() != 3 || ws.len() != 2 || ts[2] != ws[0] {
        return Err(ModelError::Shape(format!("tokens {ts:?} do not match embedding {ws:?}")));
    }
    let (n, d) = (ts[1], ws[1]);
    let x = g.matmul(tokens, w)?;
    let x = g.add(x, b)?;
    let pe = g.constant(vec![n, d], positional_encoding(n, d))?;
    Ok(g.add(x, pe)?)
}

fn linear<T: Scalar>(g: &mut Graph<T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    Ok(g.add(y, b)?)
}

fn norm<T: Scalar>(g: &mut Graph<T>, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let y = g.layer_norm(x)?;
    let y = g.mul(y, gamma)?;
    Ok(g.add(y, beta)?)
}

/// `[B, n, d]` to `[B*H, n, d/H]`.
fn split_heads<T: Scalar>(g: &mut Graph<T>, x: Var, b: usize, n: usize, heads: usize, dh: usize) -> Result<Var> {
    let x = g.reshape(x, vec![b, n, heads, dh])?;
    let x = g.permute(x, &[0, 2, 1, 3])?;
    Ok(g.reshape(x, vec![b * heads, n, dh])?)
}

fn attention<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    lv: &LayerVars,
    fill: &[bool],
    heads: usize,
    drop: &mut DropoutCtx,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, n, d) = (s[0], s[1], s[2]);
    let dh = d / heads;
    let q = linear(g, x, lv.wq, lv.bq)?;
    let k = linear(g, x, lv.wk, lv.bk)?;
    let v = linear(g, x, lv.wv, lv.bv)?;
    let q = split_heads(g, q, b, n, heads, dh)?;
    let v = split_heads(g, v, b, n, heads, dh)?;
    let k = g.reshape(k, vec![b, n, heads, dh])?;
    let kt = g.permute(k, &[0, 2, 3, 1])?;
    let kt = g.reshape(kt, vec![b * heads, dh, n])?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, T::lit(1.0 / (dh as f64).sqrt()));
    let scores = g.masked_fill(scores, fill, T::lit(MASK_FILL))?;
    let weights = g.softmax(scores)?;
    let weights = drop.apply(g, weights)?;
    let ctx = g.matmul(weights, v)?;
    let ctx = g.reshape(ctx, vec![b, heads, n, dh])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, vec![b, n, d])?;
    linear(g, ctx, lv.wo, lv.bo)
}

/// Stack of pre-norm encoder layers over `x` `[B, n, d]`. `valid` (`[B, n]`)
/// marks positions that may be attended to; every row needs one.
pub fn encode<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    valid: &[bool],
    layers: &[LayerVars],
    heads: usize,
    drop: &mut DropoutCtx,
) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, n) = (s[0], s[1]);
    if valid.len() != b * n {
        return Err(ModelError::Shape(format!("mask of length {} for {b}x{n} positions", valid.len())));
    }
    if let Some(row) = valid.chunks(n).position(|r| !r.iter().any(|&m| m)) {
        return Err(ModelError::Degenerate(format!("sequence {row} is fully masked")));
    }
    let mut fill = Vec::with_capacity(b * heads * n * n);
    for row in valid.chunks(n) {
        for _ in 0..heads * n {
            fill.extend(row.iter().map(|&m| !m));
        }
    }
    let mut h = x;
    for lv in layers {
        let a = norm(g, h, lv.ln1_gamma, lv.ln1_beta)?;
        let a = attention(g, a, lv, &fill, heads, drop)?;
        let a = drop.apply(g, a)?;
        h = g.add(h, a)?;
        let f = norm(g, h, lv.ln2_gamma, lv.ln2_beta)?;
        let f = linear(g, f, lv.w1, lv.b1)?;
        let f = g.relu(f);
        let f = drop.apply(g, f)?;
        let f = linear(g, f, lv.w2, lv.b2)?;
        let f = drop.apply(g, f)?;
        h = g.add(h, f)?;
    }
    Ok(h)
}

/// Mean of `encoded` `[B, n, d]` over valid positions, `[B, d]`.
pub fn pool_history<T: Scalar>(g: &mut Graph<T>, encoded: Var, valid: &[bool]) -> Result<Var> {
    let s = g.shape(encoded).to_vec();
    let (b, n, d) = (s[0], s[1], s[2]);
    if valid.len() != b * n {
        return Err(ModelError::Shape(format!("mask of length {} for {b}x{n} positions", valid.len())));
    }
    let mut weights = Vec::with_capacity(b * n);
    for (row, m) in valid.chunks(n).enumerate() {
        let count = m.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(ModelError::Degenerate(format!("history {row} has no valid position")));
        }
        let w = T::lit(1.0 / count as f64);
        weights.extend(m.iter().map(|&v| if v { w } else { T::zero() }));
    }
    let w = g.constant(vec![b, 1, n], weights)?;
    let pooled = g.matmul(w, encoded)?;
    Ok(g.reshape(pooled, vec![b, d])?)
}

/// Rows `selection[i*h..(i+1)*h]` of each sequence of `encoded` `[B, L, d]`,
/// giving `[B, h, d]`.
pub fn select_future<T: Scalar>(g: &mut Graph<T>, encoded: Var, selection: &[usize], h: usize) -> Result<Var> {
    let s = g.shape(encoded).to_vec();
    let (b, l, d) = (s[0], s[1], s[2]);
    if selection.len() != b * h {
        return Err(ModelError::Shape(format!("{} selection indices for {b}x{h}", selection.len())));
    }
    if let Some(&bad) = selection.iter().find(|&&i| i >= l) {
        return Err(ModelError::Shape(format!("selection index {bad} outside sequence length {l}")));
    }
    let flat_idx: Vec<usize> = selection.iter().enumerate().map(|(k, &i)| (k / h) * l + i).collect();
    let flat = g.reshape(encoded, vec![b * l, d])?;
    let picked = g.gather(flat, &flat_idx, 0)?;
    Ok(g.reshape(picked, vec![b, h, d])?)
}

/// Concatenates the pooled history with each selected future embedding and
/// applies the shared linear map, giving `[B, h, 3]`.
pub fn quantile_head<T: Scalar>(g: &mut Graph<T>, pooled: Var, selected: Var, w: Var, b: Var) -> Result<Var> {
    let ps = g.shape(pooled).to_vec();
    let ss = g.shape(selected).to_vec();
    if ps.len() != 2 || ss.len() != 3 || ps[0] != ss[0] || ps[1] != ss[2] {
        return Err(ModelError::Shape(format!("pooled {ps:?} incompatible with selected {ss:?}")));
    }
    let (bsz, h, d) = (ss[0], ss[1], ss[2]);
    let pooled = g.reshape(pooled, vec![bsz, 1, d])?;
    let ones = g.constant(vec![bsz, h, 1], vec![T::one(); bsz * h])?;
    let repeated = g.matmul(ones, pooled)?;
    let joined = g.concat(&[repeated, selected], 2)?;
    linear(g, joined, w, b)
}

/// Output node and the parameter leaves (in store order) of one forward pass.
pub struct Forward {
    pub output: Var,
    pub params: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
}

impl<T: Scalar> Network<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let store = ParamStore::init(&config, seed);
        Ok(Self { config, store })
    }

    pub fn from_store(config: ModelConfig, store: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, store })
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Builds the forward graph; parameters become gradient-tracking leaves.
    pub fn forward(&self, g: &mut Graph<T>, batch: &Batch<T>, mode: Mode) -> Result<Forward> {
        let params: Vec<Var> = self
            .store
            .params
            .iter()
            .map(|p| {
                let t = Tensor::new(p.shape.clone(), p.data.clone()).map_err(ModelError::from)?;
                Ok(g.input(if matches!(mode, Mode::Train { .. }) { t.with_grad() } else { t }))
            })
            .collect::<Result<_>>()?;
        let output = self.forward_with(g, batch, mode, &params)?;
        Ok(Forward { output, params })
    }

    /// Forward pass over caller-provided parameter leaves (store order). With
    /// `Mode::Inference` any leaves may be used, including ones that track
    /// gradients.
    pub fn forward_with(&self, g: &mut Graph<T>, batch: &Batch<T>, mode: Mode, params: &[Var]) -> Result<Var> {
        let c = &self.config;
        let layout = &self.store.layout;
        let mut drop = DropoutCtx::new(c.dropout, mode);
        let (b, p, h) = (batch.size, batch.history_len, batch.horizon);

        let hv = branch_vars(&layout.history, params);
        let hist = g.constant(vec![b, p, c.history_width], batch.history.clone())?;
        let x = embed_and_position(g, hist, hv.embed_w, hv.embed_b)?;
        let x = drop.apply(g, x)?;
        let enc = encode(g, x, &batch.history_mask, &hv.layers, c.n_heads, &mut drop)?;
        let pooled = pool_history(g, enc, &batch.history_mask)?;

        let selected = match (&layout.future, layout.future_const) {
            (Some(fl), _) => {
                let fv = branch_vars(fl, params);
                let fut = g.constant(vec![b, batch.future_len, c.future_width], batch.future.clone())?;
                let y = embed_and_position(g, fut, fv.embed_w, fv.embed_b)?;
                let y = drop.apply(g, y)?;
                let enc = encode(g, y, &batch.future_mask, &fv.layers, c.n_heads, &mut drop)?;
                select_future(g, enc, &batch.selection, h)?
            }
            (None, Some(k)) => {
                let zeros = g.constant(vec![b, h, c.d_model], vec![T::zero(); b * h * c.d_model])?;
                g.add(zeros, params[k])?
            }
            (None, None) => return Err(ModelError::Config("future branch has neither encoder nor constant".into())),
        };
        quantile_head(g, pooled, selected, params[layout.head_w], params[layout.head_b])
    }

    /// Quantiles in scaled units for one batch, sorted per row when
    /// `quantile_sort` is set.
    pub fn predict_batch(&self, batch: &Batch<T>) -> Result<Vec<QuantilePrediction<T>>> {
        let mut g = Graph::new();
        let f = self.forward(&mut g, batch, Mode::Inference)?;
        let out = g.value(f.output);
        let h = batch.horizon;
        Ok(out
            .chunks(3 * h)
            .map(|rows| {
                let mut q = QuantilePrediction::new(rows.chunks(3).map(|r| [r[0], r[1], r[2]]).collect());
                if self.config.quantile_sort {
                    q.sort_rows();
                }
                q
            })
            .collect())
    }

    /// Predicts every sample in chunks of `batch_size`, in parallel over
    /// chunks. Results do not depend on the thread count.
    pub fn predict(&self, samples: &[ForecastSample], batch_size: usize) -> Result<Vec<QuantilePrediction<T>>> {
        let refs: Vec<&ForecastSample> = samples.iter().collect();
        let chunks = refs
            .par_chunks(batch_size.max(1))
            .map(|chunk| {
                let batch = Batch::from_samples(chunk, &self.config)?;
                self.predict_batch(&batch)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }
}
