//! Forward pass, loss and hand-written backward pass.
//!
//! Context tokens attend to context tokens; query tokens attend to context
//! tokens only, so each query's output depends on the context and on itself.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::batch::{Targets, TokenBatch};
use super::{BlockSlots, Slot, ToyModel};
use crate::error::{Error, Result};
use crate::ppd::{crps_loss, crps_loss_grad, histogram_loss, histogram_loss_grad, BinGrid, HistogramDistribution};

const LN_EPS: f64 = 1e-5;

fn mat(p: &[f64], s: Slot) -> ArrayView2<'_, f64> {
    ArrayView2::from_shape((s.rows, s.cols), &p[s.range()]).expect("slot shape")
}

fn vector(p: &[f64], s: Slot) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p[s.range()])
}

fn accumulate<'a>(g: &mut [f64], s: Slot, v: impl IntoIterator<Item = &'a f64>) {
    for (d, x) in g[s.range()].iter_mut().zip(v) {
        *d += x;
    }
}

fn linear(x: &Array2<f64>, w: ArrayView2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut y = x.dot(&w.t());
    y += &b;
    y
}

/// Accumulates weight and bias gradients and returns the input gradient.
fn linear_back(x: &Array2<f64>, w: ArrayView2<f64>, dy: &Array2<f64>, g: &mut [f64], sw: Slot, sb: Slot) -> Array2<f64> {
    accumulate(g, sw, dy.t().dot(x).iter());
    accumulate(g, sb, dy.sum_axis(Axis(0)).iter());
    dy.dot(&w)
}

const GELU_C: f64 = 0.797_884_560_802_865_4;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let th = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Vec<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let (n, e) = x.dim();
    let mut xhat = Array2::zeros((n, e));
    let mut inv_std = Vec::with_capacity(n);
    for (i, row) in x.rows().into_iter().enumerate() {
        let mean = row.sum() / e as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / e as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std.push(is);
        for j in 0..e {
            xhat[(i, j)] = (row[j] - mean) * is;
        }
    }
    let mut y = &xhat * &gain;
    y += &bias;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_back(dy: &Array2<f64>, cache: &LnCache, gain: ArrayView1<f64>, g: &mut [f64], sg: Slot, sb: Slot) -> Array2<f64> {
    accumulate(g, sg, (dy * &cache.xhat).sum_axis(Axis(0)).iter());
    accumulate(g, sb, dy.sum_axis(Axis(0)).iter());
    let (n, e) = dy.dim();
    let dxhat = dy * &gain;
    let mut dx = Array2::zeros((n, e));
    for i in 0..n {
        let d = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let m1 = d.sum() / e as f64;
        let m2 = d.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>() / e as f64;
        for j in 0..e {
            dx[(i, j)] = cache.inv_std[i] * (d[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

fn softmax_rows(x: &mut Array2<f64>) {
    for mut row in x.rows_mut() {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

struct EmbedCache {
    t_all: Array1<f64>,
    u: Array2<f64>,
    v: Array2<f64>,
    lin_in: Array2<f64>,
}

struct BlockCache {
    ln1: LnCache,
    a: Array2<f64>,
    a_ctx: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    b: Array2<f64>,
    f1: Array2<f64>,
    f1_act: Array2<f64>,
}

/// Activations kept for the backward pass.
pub struct Forward {
    embed: EmbedCache,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    hf: Array2<f64>,
    /// `queries x bins` output distributions.
    pub probs: Array2<f64>,
}

fn check_batch(model: &ToyModel, batch: &TokenBatch) -> Result<()> {
    let f = model.config.max_features;
    if batch.context_x.ncols() != f || batch.query_x.ncols() != f {
        return Err(Error::DimensionMismatch(format!(
            "tokens carry {} features, model expects {f}",
            batch.context_x.ncols()
        )));
    }
    if batch.context_x.nrows() != batch.context_t.len()
        || batch.context_t.len() != batch.context_y.len()
        || batch.query_x.nrows() != batch.query_t.len()
    {
        return Err(Error::DimensionMismatch("token columns".into()));
    }
    if batch.context_len() == 0 {
        return Err(Error::EmptyTable);
    }
    Ok(())
}

/// Token embeddings: T-encoder(t) + linear([x, t]) + Y-encoder(y), the last
/// term for context tokens only.
fn embed(model: &ToyModel, batch: &TokenBatch) -> (Array2<f64>, EmbedCache) {
    let p = &model.params;
    let l = &model.layout;
    let c = batch.context_len();
    let n = c + batch.query_len();
    let t_all: Array1<f64> = batch.context_t.iter().chain(&batch.query_t).copied().collect();
    let x_all = concatenate(Axis(0), &[batch.context_x.view(), batch.query_x.view()]).expect("same width");
    let t_col = t_all.view().insert_axis(Axis(1));
    let lin_in = concatenate(Axis(1), &[x_all.view(), t_col]).expect("same height");
    let w1 = vector(p, l.t_w1);
    let b1 = vector(p, l.t_b1);
    let u = Array2::from_shape_fn((n, w1.len()), |(i, j)| t_all[i] * w1[j] + b1[j]);
    let v = u.mapv(gelu);
    let mut h = linear(&v, mat(p, l.t_w2), vector(p, l.t_b2));
    h += &linear(&lin_in, mat(p, l.lin_w), vector(p, l.lin_b));
    let yw = vector(p, l.y_w);
    let yb = vector(p, l.y_b);
    for i in 0..c {
        let y = batch.context_y[i];
        let mut row = h.row_mut(i);
        row.scaled_add(y, &yw);
        row += &yb;
    }
    (h, EmbedCache { t_all, u, v, lin_in })
}

fn embed_back(model: &ToyModel, batch: &TokenBatch, cache: &EmbedCache, dh: &Array2<f64>, g: &mut [f64]) {
    let p = &model.params;
    let l = &model.layout;
    let c = batch.context_len();
    linear_back(&cache.lin_in, mat(p, l.lin_w), dh, g, l.lin_w, l.lin_b);
    let dv = linear_back(&cache.v, mat(p, l.t_w2), dh, g, l.t_w2, l.t_b2);
    let du = &dv * &cache.u.mapv(gelu_grad);
    accumulate(g, l.t_w1, du.t().dot(&cache.t_all).iter());
    accumulate(g, l.t_b1, du.sum_axis(Axis(0)).iter());
    let dctx = dh.slice(s![..c, ..]);
    let y = ArrayView1::from(&batch.context_y);
    accumulate(g, l.y_w, dctx.t().dot(&y).iter());
    accumulate(g, l.y_b, dctx.sum_axis(Axis(0)).iter());
}

fn block_forward(model: &ToyModel, s: &BlockSlots, h: &Array2<f64>, c: usize) -> (Array2<f64>, BlockCache) {
    let p = &model.params;
    let heads = model.config.head_count;
    let dh = model.config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let (a, ln1) = layer_norm(h, vector(p, s.ln1_gain), vector(p, s.ln1_bias));
    let a_ctx = a.slice(s![..c, ..]).to_owned();
    let q = linear(&a, mat(p, s.wq), vector(p, s.bq));
    let k = linear(&a_ctx, mat(p, s.wk), vector(p, s.bk));
    let v = linear(&a_ctx, mat(p, s.wv), vector(p, s.bv));
    let mut o = Array2::zeros(q.dim());
    let mut probs = Vec::with_capacity(heads);
    for hd in 0..heads {
        let r = hd * dh..(hd + 1) * dh;
        let mut scores = q.slice(s![.., r.clone()]).dot(&k.slice(s![.., r.clone()]).t());
        scores *= scale;
        softmax_rows(&mut scores);
        o.slice_mut(s![.., r.clone()]).assign(&scores.dot(&v.slice(s![.., r])));
        probs.push(scores);
    }
    let h2 = h + &linear(&o, mat(p, s.wo), vector(p, s.bo));
    let (b, ln2) = layer_norm(&h2, vector(p, s.ln2_gain), vector(p, s.ln2_bias));
    let f1 = linear(&b, mat(p, s.ff1_w), vector(p, s.ff1_b));
    let f1_act = f1.mapv(gelu);
    let out = &h2 + &linear(&f1_act, mat(p, s.ff2_w), vector(p, s.ff2_b));
    (out, BlockCache { ln1, a, a_ctx, q, k, v, probs, o, ln2, b, f1, f1_act })
}

fn block_back(model: &ToyModel, s: &BlockSlots, cache: &BlockCache, dout: Array2<f64>, c: usize, g: &mut [f64]) -> Array2<f64> {
    let p = &model.params;
    let dh = model.config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    // out = h2 + ff(ln2(h2))
    let dact = linear_back(&cache.f1_act, mat(p, s.ff2_w), &dout, g, s.ff2_w, s.ff2_b);
    let df1 = dact * &cache.f1.mapv(gelu_grad);
    let db = linear_back(&cache.b, mat(p, s.ff1_w), &df1, g, s.ff1_w, s.ff1_b);
    let dh2 = dout + &layer_norm_back(&db, &cache.ln2, vector(p, s.ln2_gain), g, s.ln2_gain, s.ln2_bias);
    // h2 = h + attn(ln1(h))
    let do_ = linear_back(&cache.o, mat(p, s.wo), &dh2, g, s.wo, s.bo);
    let mut dq = Array2::zeros(cache.q.dim());
    let mut dk = Array2::zeros(cache.k.dim());
    let mut dv = Array2::zeros(cache.v.dim());
    for (hd, pr) in cache.probs.iter().enumerate() {
        let r = hd * dh..(hd + 1) * dh;
        let doh = do_.slice(s![.., r.clone()]);
        let vh = cache.v.slice(s![.., r.clone()]);
        let dp = doh.dot(&vh.t());
        dv.slice_mut(s![.., r.clone()]).assign(&pr.t().dot(&doh));
        let mut ds = pr * &dp;
        let rowdot = ds.sum_axis(Axis(1));
        for (i, mut row) in ds.rows_mut().into_iter().enumerate() {
            let pi = pr.row(i);
            row.zip_mut_with(&pi, |d, &pv| *d -= pv * rowdot[i]);
        }
        ds *= scale;
        dq.slice_mut(s![.., r.clone()]).assign(&ds.dot(&cache.k.slice(s![.., r.clone()])));
        dk.slice_mut(s![.., r.clone()]).assign(&ds.t().dot(&cache.q.slice(s![.., r])));
    }
    let mut da = linear_back(&cache.a, mat(p, s.wq), &dq, g, s.wq, s.bq);
    let da_k = linear_back(&cache.a_ctx, mat(p, s.wk), &dk, g, s.wk, s.bk);
    let da_v = linear_back(&cache.a_ctx, mat(p, s.wv), &dv, g, s.wv, s.bv);
    {
        let mut ctx = da.slice_mut(s![..c, ..]);
        ctx += &da_k;
        ctx += &da_v;
    }
    dh2 + &layer_norm_back(&da, &cache.ln1, vector(p, s.ln1_gain), g, s.ln1_gain, s.ln1_bias)
}

pub fn forward(model: &ToyModel, batch: &TokenBatch) -> Result<Forward> {
    check_batch(model, batch)?;
    let p = &model.params;
    let l = &model.layout;
    let c = batch.context_len();
    let (mut h, embed_cache) = embed(model, batch);
    let mut blocks = Vec::with_capacity(l.blocks.len());
    for s in &l.blocks {
        let (out, cache) = block_forward(model, s, &h, c);
        blocks.push(cache);
        h = out;
    }
    let hq = h.slice(s![c.., ..]).to_owned();
    let (hf, lnf) = layer_norm(&hq, vector(p, l.lnf_gain), vector(p, l.lnf_bias));
    let mut probs = linear(&hf, mat(p, l.head_w), vector(p, l.head_b));
    softmax_rows(&mut probs);
    Ok(Forward { embed: embed_cache, blocks, lnf, hf, probs })
}

fn row_dist(probs: &Array2<f64>, i: usize) -> HistogramDistribution {
    HistogramDistribution { probs: probs.row(i).to_vec() }
}

/// Mean loss over queries and its gradient with respect to the outputs.
pub fn loss_from_probs(probs: &Array2<f64>, targets: &Targets, grid: &BinGrid) -> Result<(f64, Array2<f64>)> {
    let nq = probs.nrows();
    if targets.len() != nq {
        return Err(Error::DimensionMismatch(format!("{} targets for {nq} queries", targets.len())));
    }
    if nq == 0 {
        return Err(Error::EmptyTable);
    }
    let mut dprobs = Array2::zeros(probs.dim());
    let mut total = 0.0;
    for i in 0..nq {
        let q = row_dist(probs, i);
        let (loss, grad) = match targets {
            Targets::Histogram(t) => (histogram_loss(&q, &t[i]), histogram_loss_grad(&q, &t[i])),
            Targets::Points(y) => (crps_loss(&q, grid, y[i]), crps_loss_grad(&q, grid, y[i])),
        };
        total += loss;
        dprobs.row_mut(i).assign(&ArrayView1::from(&grad));
    }
    let inv = 1.0 / nq as f64;
    dprobs *= inv;
    let loss = total * inv;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss);
    }
    Ok((loss, dprobs))
}

fn backward(model: &ToyModel, batch: &TokenBatch, fwd: &Forward, dprobs: &Array2<f64>) -> Vec<f64> {
    let p = &model.params;
    let l = &model.layout;
    let c = batch.context_len();
    let mut g = vec![0.0; model.params.len()];
    let mut dlogits = dprobs.clone();
    for (mut row, q) in dlogits.rows_mut().into_iter().zip(fwd.probs.rows()) {
        let dot: f64 = row.iter().zip(q.iter()).map(|(a, b)| a * b).sum();
        row.zip_mut_with(&q, |d, &qv| *d = qv * (*d - dot));
    }
    let dhf = linear_back(&fwd.hf, mat(p, l.head_w), &dlogits, &mut g, l.head_w, l.head_b);
    let dhq = layer_norm_back(&dhf, &fwd.lnf, vector(p, l.lnf_gain), &mut g, l.lnf_gain, l.lnf_bias);
    let mut dh = Array2::zeros((c + batch.query_len(), model.config.embed_dim));
    dh.slice_mut(s![c.., ..]).assign(&dhq);
    for (s, cache) in l.blocks.iter().zip(&fwd.blocks).rev() {
        dh = block_back(model, s, cache, dh, c, &mut g);
    }
    embed_back(model, batch, &fwd.embed, &dh, &mut g);
    g
}

/// Mean loss over the batch queries and its gradient.
pub fn loss_and_grad(model: &ToyModel, batch: &TokenBatch, targets: &Targets) -> Result<(f64, Vec<f64>)> {
    let fwd = forward(model, batch)?;
    let (loss, dprobs) = loss_from_probs(&fwd.probs, targets, &model.config.grid())?;
    Ok((loss, backward(model, batch, &fwd, &dprobs)))
}

pub fn loss_only(model: &ToyModel, batch: &TokenBatch, targets: &Targets) -> Result<f64> {
    let fwd = forward(model, batch)?;
    Ok(loss_from_probs(&fwd.probs, targets, &model.config.grid())?.0)
}

/// Output distributions for every query; long query lists run in chunks,
/// which is exact because queries never see each other.
pub fn predict_probs(model: &ToyModel, batch: &TokenBatch) -> Result<Array2<f64>> {
    const CHUNK: usize = 512;
    let nq = batch.query_len();
    if nq <= CHUNK {
        return Ok(forward(model, batch)?.probs);
    }
    let mut out = Array2::zeros((nq, model.config.bin_count));
    for start in (0..nq).step_by(CHUNK) {
        let end = (start + CHUNK).min(nq);
        let part = TokenBatch {
            context_x: batch.context_x.clone(),
            context_t: batch.context_t.clone(),
            context_y: batch.context_y.clone(),
            query_x: batch.query_x.slice(s![start..end, ..]).to_owned(),
            query_t: batch.query_t[start..end].to_vec(),
        };
        out.slice_mut(s![start..end, ..]).assign(&forward(model, &part)?.probs);
    }
    Ok(out)
}
