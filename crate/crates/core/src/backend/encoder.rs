//! Compact self-attention encoder with a binary classification head.
//!
//! A from-scratch, CPU-trainable stand-in for the large pretrained encoders
//! the protocol was designed around: hashed token + position embeddings, a
//! stack of pre-LayerNorm attention blocks, mean pooling, and a logistic
//! head. Stage 1 either starts from a local checkpoint (the "pretrained"
//! path, resolved through the model registry) or from seeded random
//! initialization. Gradients are hand-derived and verified against finite
//! differences in the test suite.

use serde::Deserialize;
use serde_json::json;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::preprocess::ProcessedDocument;

use super::{
    fnv1a64, sgd_fit, Capabilities, ClassifierBackend, FitOutcome, FreezePolicy, GradientModel,
    LabeledExample, ModelState, ParamBlock, Prediction, TrainConfig,
};

pub const ENCODER_BACKEND_NAME: &str = "encoder";

/// Architecture dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub struct EncoderDims {
    pub vocab_dim: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub ff_dim: usize,
    pub max_len: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            vocab_dim: 1024,
            d_model: 32,
            n_heads: 2,
            n_layers: 1,
            ff_dim: 64,
            max_len: 64,
        }
    }
}

impl EncoderDims {
    fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Argument(format!(
                "d_model ({}) must be a positive multiple of n_heads ({})",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_dim == 0 || self.ff_dim == 0 || self.max_len < 2 || self.n_layers == 0 {
            return Err(Error::Argument("encoder dims must be positive".into()));
        }
        Ok(())
    }
}

/// Self-attention encoder backend.
#[derive(Debug, Clone)]
pub struct AttentionEncoderBackend {
    pub dims: EncoderDims,
    /// Optional pretrained encoder parameters to start stage 1 from.
    pub pretrained: Option<ModelState>,
}

impl AttentionEncoderBackend {
    pub fn new(dims: EncoderDims) -> Self {
        Self {
            dims,
            pretrained: None,
        }
    }

    pub fn with_pretrained(dims: EncoderDims, state: ModelState) -> Self {
        Self {
            dims,
            pretrained: Some(state),
        }
    }
}

// ---- dense helpers (row-major) ---------------------------------------------

fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

/// aᵀ · b where a is [k x m], b is [k x n].
fn mm_tn(a: &[f64], b: &[f64], k: usize, m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[p * n + j];
            }
        }
    }
    out
}

/// a · bᵀ where a is [m x k], b is [n x k].
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[j * k + p];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

// ---- parameters -------------------------------------------------------------

#[derive(Debug, Clone)]
struct BlockParams {
    ln1_g: Vec<f64>,
    ln1_b: Vec<f64>,
    wq: Vec<f64>,
    wk: Vec<f64>,
    wv: Vec<f64>,
    wo: Vec<f64>,
    ln2_g: Vec<f64>,
    ln2_b: Vec<f64>,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Params {
    dims: EncoderDims,
    tok: Vec<f64>,
    pos: Vec<f64>,
    cls: Vec<f64>,
    blocks: Vec<BlockParams>,
    lnf_g: Vec<f64>,
    lnf_b: Vec<f64>,
    clf_w: Vec<f64>,
    clf_b: f64,
}

impl Params {
    fn init(dims: EncoderDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dims.d_model;
        let mut mat = |rows: usize, cols: usize, scale: f64| -> Vec<f64> {
            (0..rows * cols)
                .map(|_| rng.gen_range(-1.0..1.0) * scale)
                .collect()
        };
        let attn_scale = 1.0 / (d as f64).sqrt();
        let blocks = (0..dims.n_layers)
            .map(|_| BlockParams {
                ln1_g: vec![1.0; d],
                ln1_b: vec![0.0; d],
                wq: mat(d, d, attn_scale),
                wk: mat(d, d, attn_scale),
                wv: mat(d, d, attn_scale),
                wo: mat(d, d, attn_scale),
                ln2_g: vec![1.0; d],
                ln2_b: vec![0.0; d],
                w1: mat(d, dims.ff_dim, attn_scale),
                b1: vec![0.0; dims.ff_dim],
                w2: mat(dims.ff_dim, d, 1.0 / (dims.ff_dim as f64).sqrt()),
                b2: vec![0.0; d],
            })
            .collect();
        Self {
            dims,
            tok: mat(dims.vocab_dim, d, 0.05),
            pos: mat(dims.max_len, d, 0.05),
            cls: mat(1, d, 0.05),
            blocks,
            lnf_g: vec![1.0; d],
            lnf_b: vec![0.0; d],
            clf_w: mat(1, d, 0.05),
            clf_b: 0.0,
        }
    }

    fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        let zero = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = 0.0);
        zero(&mut z.tok);
        zero(&mut z.pos);
        zero(&mut z.cls);
        for b in &mut z.blocks {
            for v in [
                &mut b.ln1_g, &mut b.ln1_b, &mut b.wq, &mut b.wk, &mut b.wv, &mut b.wo,
                &mut b.ln2_g, &mut b.ln2_b, &mut b.w1, &mut b.b1, &mut b.w2, &mut b.b2,
            ] {
                zero(v);
            }
        }
        zero(&mut z.lnf_g);
        zero(&mut z.lnf_b);
        zero(&mut z.clf_w);
        z.clf_b = 0.0;
        z
    }

    fn apply_gradient(&mut self, grad: &Params, step: f64, freeze: FreezePolicy) {
        let upd = |p: &mut Vec<f64>, g: &Vec<f64>| {
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi -= step * gi;
            }
        };
        upd(&mut self.clf_w, &grad.clf_w);
        self.clf_b -= step * grad.clf_b;
        if freeze == FreezePolicy::AllButClassifier {
            return;
        }
        upd(&mut self.tok, &grad.tok);
        upd(&mut self.pos, &grad.pos);
        upd(&mut self.cls, &grad.cls);
        for (b, gb) in self.blocks.iter_mut().zip(&grad.blocks) {
            upd(&mut b.ln1_g, &gb.ln1_g);
            upd(&mut b.ln1_b, &gb.ln1_b);
            upd(&mut b.wq, &gb.wq);
            upd(&mut b.wk, &gb.wk);
            upd(&mut b.wv, &gb.wv);
            upd(&mut b.wo, &gb.wo);
            upd(&mut b.ln2_g, &gb.ln2_g);
            upd(&mut b.ln2_b, &gb.ln2_b);
            upd(&mut b.w1, &gb.w1);
            upd(&mut b.b1, &gb.b1);
            upd(&mut b.w2, &gb.w2);
            upd(&mut b.b2, &gb.b2);
        }
        upd(&mut self.lnf_g, &grad.lnf_g);
        upd(&mut self.lnf_b, &grad.lnf_b);
    }

    fn to_state(&self) -> ModelState {
        let mut encoder = ParamBlock::default();
        encoder.0.insert("tok".into(), self.tok.clone());
        encoder.0.insert("pos".into(), self.pos.clone());
        encoder.0.insert("cls".into(), self.cls.clone());
        for (i, b) in self.blocks.iter().enumerate() {
            let mut put = |key: &str, v: &Vec<f64>| {
                encoder.0.insert(format!("blk{i}.{key}"), v.clone());
            };
            put("ln1_g", &b.ln1_g);
            put("ln1_b", &b.ln1_b);
            put("wq", &b.wq);
            put("wk", &b.wk);
            put("wv", &b.wv);
            put("wo", &b.wo);
            put("ln2_g", &b.ln2_g);
            put("ln2_b", &b.ln2_b);
            put("w1", &b.w1);
            put("b1", &b.b1);
            put("w2", &b.w2);
            put("b2", &b.b2);
        }
        encoder.0.insert("lnf_g".into(), self.lnf_g.clone());
        encoder.0.insert("lnf_b".into(), self.lnf_b.clone());
        let mut classifier = ParamBlock::default();
        classifier.0.insert("clf_w".into(), self.clf_w.clone());
        classifier.0.insert("clf_b".into(), vec![self.clf_b]);
        ModelState {
            backend: ENCODER_BACKEND_NAME.to_string(),
            encoder,
            classifier,
            meta: [
                ("vocab_dim".to_string(), json!(self.dims.vocab_dim)),
                ("d_model".to_string(), json!(self.dims.d_model)),
                ("n_heads".to_string(), json!(self.dims.n_heads)),
                ("n_layers".to_string(), json!(self.dims.n_layers)),
                ("ff_dim".to_string(), json!(self.dims.ff_dim)),
                ("max_len".to_string(), json!(self.dims.max_len)),
            ]
            .into_iter()
            .collect(),
        }
    }

    fn from_state(state: &ModelState) -> Result<Self> {
        let dims: EncoderDims = serde_json::from_value(json!(state.meta))
            .map_err(|e| Error::Internal(format!("encoder state meta: {e}")))?;
        dims.validate()?;
        let get = |block: &ParamBlock, key: &str, len: usize| -> Result<Vec<f64>> {
            let v = block
                .0
                .get(key)
                .ok_or_else(|| Error::Internal(format!("encoder state missing '{key}'")))?;
            if v.len() != len {
                return Err(Error::Internal(format!(
                    "encoder param '{key}' has len {}, expected {len}",
                    v.len()
                )));
            }
            Ok(v.clone())
        };
        let d = dims.d_model;
        let mut blocks = Vec::with_capacity(dims.n_layers);
        for i in 0..dims.n_layers {
            let g = |key: &str, len: usize| get(&state.encoder, &format!("blk{i}.{key}"), len);
            blocks.push(BlockParams {
                ln1_g: g("ln1_g", d)?,
                ln1_b: g("ln1_b", d)?,
                wq: g("wq", d * d)?,
                wk: g("wk", d * d)?,
                wv: g("wv", d * d)?,
                wo: g("wo", d * d)?,
                ln2_g: g("ln2_g", d)?,
                ln2_b: g("ln2_b", d)?,
                w1: g("w1", d * dims.ff_dim)?,
                b1: g("b1", dims.ff_dim)?,
                w2: g("w2", dims.ff_dim * d)?,
                b2: g("b2", d)?,
            });
        }
        Ok(Self {
            dims,
            tok: get(&state.encoder, "tok", dims.vocab_dim * d)?,
            pos: get(&state.encoder, "pos", dims.max_len * d)?,
            cls: get(&state.encoder, "cls", d)?,
            blocks,
            lnf_g: get(&state.encoder, "lnf_g", d)?,
            lnf_b: get(&state.encoder, "lnf_b", d)?,
            clf_w: get(&state.classifier, "clf_w", d)?,
            clf_b: get(&state.classifier, "clf_b", 1)?[0],
        })
    }
}

// ---- layer norm -------------------------------------------------------------

const LN_EPS: f64 = 1e-5;

struct LnCache {
    xhat: Vec<f64>,
    inv_sigma: Vec<f64>,
}

/// Row-wise layer norm of x [l x d]; returns output and cache.
fn layer_norm(x: &[f64], g: &[f64], b: &[f64], l: usize, d: usize) -> (Vec<f64>, LnCache) {
    let mut out = vec![0.0; l * d];
    let mut xhat = vec![0.0; l * d];
    let mut inv_sigma = vec![0.0; l];
    for i in 0..l {
        let row = &x[i * d..(i + 1) * d];
        let mu = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        inv_sigma[i] = inv;
        for j in 0..d {
            let xh = (row[j] - mu) * inv;
            xhat[i * d + j] = xh;
            out[i * d + j] = g[j] * xh + b[j];
        }
    }
    (out, LnCache { xhat, inv_sigma })
}

/// Backward of layer_norm; accumulates dg/db, returns dx.
fn layer_norm_backward(
    dy: &[f64],
    cache: &LnCache,
    g: &[f64],
    dg: &mut [f64],
    db: &mut [f64],
    l: usize,
    d: usize,
) -> Vec<f64> {
    let mut dx = vec![0.0; l * d];
    for i in 0..l {
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for j in 0..d {
            let idx = i * d + j;
            dg[j] += dy[idx] * cache.xhat[idx];
            db[j] += dy[idx];
            let dxhat = dy[idx] * g[j];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * cache.xhat[idx];
        }
        mean_dxhat /= d as f64;
        mean_dxhat_xhat /= d as f64;
        for j in 0..d {
            let idx = i * d + j;
            let dxhat = dy[idx] * g[j];
            dx[idx] = cache.inv_sigma[i] * (dxhat - mean_dxhat - cache.xhat[idx] * mean_dxhat_xhat);
        }
    }
    dx
}

// ---- forward/backward -------------------------------------------------------

struct BlockCache {
    ln1: LnCache,
    s: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// per head: row-softmaxed attention [l x l]
    alpha: Vec<Vec<f64>>,
    concat: Vec<f64>,
    ln2: LnCache,
    t: Vec<f64>,
    hpre: Vec<f64>,
}

struct ForwardCache {
    ids: Vec<Option<usize>>,
    l: usize,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    pooled: Vec<f64>,
    prob: f64,
}

fn bucket_ids(tokens: &[String], dims: &EncoderDims) -> Vec<Option<usize>> {
    // position 0 is the CLS slot
    let mut ids = vec![None];
    for token in tokens.iter().take(dims.max_len - 1) {
        ids.push(Some((fnv1a64(token.as_bytes()) % dims.vocab_dim as u64) as usize));
    }
    ids
}

fn forward(params: &Params, tokens: &[String]) -> ForwardCache {
    let dims = &params.dims;
    let d = dims.d_model;
    let ids = bucket_ids(tokens, dims);
    let l = ids.len();
    let mut x = vec![0.0; l * d];
    for (i, id) in ids.iter().enumerate() {
        for j in 0..d {
            let e = match id {
                Some(bucket) => params.tok[bucket * d + j],
                None => params.cls[j],
            };
            x[i * d + j] = e + params.pos[i * d + j];
        }
    }

    let heads = dims.n_heads;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for bp in &params.blocks {
        let (s, ln1) = layer_norm(&x, &bp.ln1_g, &bp.ln1_b, l, d);
        let q = mm_nn(&s, &bp.wq, l, d, d);
        let k = mm_nn(&s, &bp.wk, l, d, d);
        let v = mm_nn(&s, &bp.wv, l, d, d);
        let mut alpha = Vec::with_capacity(heads);
        let mut concat = vec![0.0; l * d];
        for h in 0..heads {
            let off = h * dk;
            let mut a_h = vec![0.0; l * l];
            for i in 0..l {
                let mut max_score = f64::NEG_INFINITY;
                let mut scores = vec![0.0; l];
                for jj in 0..l {
                    let mut acc = 0.0;
                    for p in 0..dk {
                        acc += q[i * d + off + p] * k[jj * d + off + p];
                    }
                    let sc = acc * scale;
                    scores[jj] = sc;
                    max_score = max_score.max(sc);
                }
                let mut denom = 0.0;
                for jj in 0..l {
                    scores[jj] = (scores[jj] - max_score).exp();
                    denom += scores[jj];
                }
                for jj in 0..l {
                    a_h[i * l + jj] = scores[jj] / denom;
                }
            }
            for i in 0..l {
                for p in 0..dk {
                    let mut acc = 0.0;
                    for jj in 0..l {
                        acc += a_h[i * l + jj] * v[jj * d + off + p];
                    }
                    concat[i * d + off + p] = acc;
                }
            }
            alpha.push(a_h);
        }
        let m = mm_nn(&concat, &bp.wo, l, d, d);
        let mut a_res = vec![0.0; l * d];
        for idx in 0..l * d {
            a_res[idx] = x[idx] + m[idx];
        }
        let (t, ln2) = layer_norm(&a_res, &bp.ln2_g, &bp.ln2_b, l, d);
        let mut hpre = mm_nn(&t, &bp.w1, l, d, dims.ff_dim);
        for i in 0..l {
            for j in 0..dims.ff_dim {
                hpre[i * dims.ff_dim + j] += bp.b1[j];
            }
        }
        let hact: Vec<f64> = hpre.iter().map(|&v| v.max(0.0)).collect();
        let mut f = mm_nn(&hact, &bp.w2, l, dims.ff_dim, d);
        let mut y = vec![0.0; l * d];
        for i in 0..l {
            for j in 0..d {
                f[i * d + j] += bp.b2[j];
                y[i * d + j] = a_res[i * d + j] + f[i * d + j];
            }
        }
        blocks.push(BlockCache {
            ln1,
            s,
            q,
            k,
            v,
            alpha,
            concat,
            ln2,
            t,
            hpre,
        });
        x = y;
    }

    let (z_final, lnf) = layer_norm(&x, &params.lnf_g, &params.lnf_b, l, d);
    let mut pooled = vec![0.0; d];
    for i in 0..l {
        for j in 0..d {
            pooled[j] += z_final[i * d + j];
        }
    }
    for p in pooled.iter_mut() {
        *p /= l as f64;
    }
    drop(z_final);
    let logit = params
        .clf_w
        .iter()
        .zip(&pooled)
        .map(|(w, u)| w * u)
        .sum::<f64>()
        + params.clf_b;
    ForwardCache {
        ids,
        l,
        blocks,
        lnf,
        pooled,
        prob: sigmoid(logit),
    }
}

/// Accumulate gradients for one example into `grad`; returns the BCE loss.
fn backward(params: &Params, cache: &ForwardCache, label: f64, grad: &mut Params, full: bool) -> f64 {
    let dims = &params.dims;
    let d = dims.d_model;
    let l = cache.l;
    let p = cache.prob;
    let loss = -(label * p.max(1e-12).ln() + (1.0 - label) * (1.0 - p).max(1e-12).ln());
    let dz = p - label;

    for j in 0..d {
        grad.clf_w[j] += dz * cache.pooled[j];
    }
    grad.clf_b += dz;
    if !full {
        return loss;
    }

    // pooled mean -> rows of final LN output
    let mut d_zfinal = vec![0.0; l * d];
    for i in 0..l {
        for j in 0..d {
            d_zfinal[i * d + j] = dz * params.clf_w[j] / l as f64;
        }
    }
    let mut dx = layer_norm_backward(
        &d_zfinal,
        &cache.lnf,
        &params.lnf_g,
        &mut grad.lnf_g,
        &mut grad.lnf_b,
        l,
        d,
    );

    let heads = dims.n_heads;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    for (bi, bp) in params.blocks.iter().enumerate().rev() {
        let bc = &cache.blocks[bi];
        let gb = &mut grad.blocks[bi];
        let ff = dims.ff_dim;
        // Y = A + F; dY = dx
        let dy = dx;
        // F path: F = relu(T W1 + b1) W2 + b2
        let hact: Vec<f64> = bc.hpre.iter().map(|&v| v.max(0.0)).collect();
        // dW2 += hactᵀ dF ; dHact = dF W2ᵀ
        let dw2 = mm_tn(&hact, &dy, l, ff, d);
        for (g, v) in gb.w2.iter_mut().zip(&dw2) {
            *g += v;
        }
        for i in 0..l {
            for j in 0..d {
                gb.b2[j] += dy[i * d + j];
            }
        }
        let mut dhact = mm_nt(&dy, &bp.w2, l, d, ff);
        for (dh, &pre) in dhact.iter_mut().zip(&bc.hpre) {
            if pre <= 0.0 {
                *dh = 0.0;
            }
        }
        let dw1 = mm_tn(&bc.t, &dhact, l, d, ff);
        for (g, v) in gb.w1.iter_mut().zip(&dw1) {
            *g += v;
        }
        for i in 0..l {
            for j in 0..ff {
                gb.b1[j] += dhact[i * ff + j];
            }
        }
        let dt = mm_nt(&dhact, &bp.w1, l, ff, d);
        // A gets gradient from the residual plus through LN2
        let mut da = layer_norm_backward(&dt, &bc.ln2, &bp.ln2_g, &mut gb.ln2_g, &mut gb.ln2_b, l, d);
        for idx in 0..l * d {
            da[idx] += dy[idx];
        }
        // A = X + concat(heads) Wo
        let dm = &da;
        let dwo = mm_tn(&bc.concat, dm, l, d, d);
        for (g, v) in gb.wo.iter_mut().zip(&dwo) {
            *g += v;
        }
        let dconcat = mm_nt(dm, &bp.wo, l, d, d);
        let mut dq = vec![0.0; l * d];
        let mut dkm = vec![0.0; l * d];
        let mut dv = vec![0.0; l * d];
        for h in 0..heads {
            let off = h * dk;
            let a_h = &bc.alpha[h];
            // dV_h = alphaᵀ dO_h ; dAlpha = dO_h V_hᵀ
            for jj in 0..l {
                for pcol in 0..dk {
                    let mut acc = 0.0;
                    for i in 0..l {
                        acc += a_h[i * l + jj] * dconcat[i * d + off + pcol];
                    }
                    dv[jj * d + off + pcol] += acc;
                }
            }
            for i in 0..l {
                // softmax backward per row
                let mut dalpha = vec![0.0; l];
                for jj in 0..l {
                    let mut acc = 0.0;
                    for pcol in 0..dk {
                        acc += dconcat[i * d + off + pcol] * bc.v[jj * d + off + pcol];
                    }
                    dalpha[jj] = acc;
                }
                let dot: f64 = (0..l).map(|jj| dalpha[jj] * a_h[i * l + jj]).sum();
                for jj in 0..l {
                    let dscore = a_h[i * l + jj] * (dalpha[jj] - dot) * scale;
                    for pcol in 0..dk {
                        dq[i * d + off + pcol] += dscore * bc.k[jj * d + off + pcol];
                        dkm[jj * d + off + pcol] += dscore * bc.q[i * d + off + pcol];
                    }
                }
            }
        }
        let dwq = mm_tn(&bc.s, &dq, l, d, d);
        let dwk = mm_tn(&bc.s, &dkm, l, d, d);
        let dwv = mm_tn(&bc.s, &dv, l, d, d);
        for (g, v) in gb.wq.iter_mut().zip(&dwq) {
            *g += v;
        }
        for (g, v) in gb.wk.iter_mut().zip(&dwk) {
            *g += v;
        }
        for (g, v) in gb.wv.iter_mut().zip(&dwv) {
            *g += v;
        }
        let mut ds = mm_nt(&dq, &bp.wq, l, d, d);
        let ds_k = mm_nt(&dkm, &bp.wk, l, d, d);
        let ds_v = mm_nt(&dv, &bp.wv, l, d, d);
        for idx in 0..l * d {
            ds[idx] += ds_k[idx] + ds_v[idx];
        }
        let mut dx_block =
            layer_norm_backward(&ds, &bc.ln1, &bp.ln1_g, &mut gb.ln1_g, &mut gb.ln1_b, l, d);
        // residual: X feeds both LN1 and A directly
        for idx in 0..l * d {
            dx_block[idx] += da[idx];
        }
        dx = dx_block;
    }

    // embedding gradients
    for (i, id) in cache.ids.iter().enumerate() {
        for j in 0..d {
            let g = dx[i * d + j];
            grad.pos[i * d + j] += g;
            match id {
                Some(bucket) => grad.tok[bucket * d + j] += g,
                None => grad.cls[j] += g,
            }
        }
    }
    loss
}

struct AttentionModel {
    params: Params,
}

impl GradientModel for AttentionModel {
    fn snapshot(&self) -> ModelState {
        self.params.to_state()
    }

    fn train_batch(&mut self, batch: &[&LabeledExample], lr: f64, freeze: FreezePolicy) -> f64 {
        let mut grad = self.params.zeros_like();
        let mut loss = 0.0;
        let full = freeze == FreezePolicy::None;
        for example in batch {
            let cache = forward(&self.params, &example.tokens);
            loss += backward(
                &self.params,
                &cache,
                f64::from(example.label),
                &mut grad,
                full,
            );
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        self.params.apply_gradient(&grad, lr * scale, freeze);
        loss * scale
    }

    fn score(&self, tokens: &[String]) -> f64 {
        forward(&self.params, tokens).prob
    }
}

impl ClassifierBackend for AttentionEncoderBackend {
    fn name(&self) -> &'static str {
        ENCODER_BACKEND_NAME
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_freezing: true,
            supports_class_weights: true,
            is_multilingual: true,
        }
    }

    fn init_state(&self, config: &TrainConfig) -> Result<ModelState> {
        self.dims.validate()?;
        match &self.pretrained {
            Some(state) => {
                // fresh head per model seed on top of the shared encoder
                let mut params = Params::from_state(state)?;
                if params.dims != self.dims {
                    return Err(Error::Argument(
                        "pretrained checkpoint dims differ from registry dims".into(),
                    ));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(config.model_seed);
                for w in params.clf_w.iter_mut() {
                    *w = rng.gen_range(-0.05..0.05);
                }
                params.clf_b = 0.0;
                Ok(params.to_state())
            }
            None => Ok(Params::init(self.dims, config.model_seed).to_state()),
        }
    }

    fn fit(
        &self,
        init: &ModelState,
        train: &[LabeledExample],
        dev: &[LabeledExample],
        config: &TrainConfig,
    ) -> Result<FitOutcome> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Argument("train set is empty".into()));
        }
        let mut model = AttentionModel {
            params: Params::from_state(init)?,
        };
        sgd_fit(&mut model, train, dev, config)
    }

    fn predict_state(
        &self,
        state: &ModelState,
        docs: &[ProcessedDocument],
    ) -> Result<Vec<Prediction>> {
        let params = Params::from_state(state)?;
        Ok(docs
            .iter()
            .map(|d| Prediction::from_score(d.id.clone(), forward(&params, &d.tokens).prob))
            .collect())
    }
}
