//! Pre-LayerNorm causal decoder with tied input/output embeddings and fixed
//! sinusoidal positions. Backward is hand-written; only what projector
//! training and LM pretraining need is implemented.

use crate::error::{Error, Result};
use crate::linalg::{gemm, MatMut, MatRef, Matrix};
use crate::rng;

use super::{Element, MixedSequence, TokenId};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LmConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context: usize,
}

impl LmConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 96,
            n_layers: 2,
            n_heads: 4,
            d_ff: 384,
            context: 512,
        }
    }

    fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    /// `d × 3d`, columns `[q | k | v]`, heads contiguous inside each.
    pub w_qkv: Matrix,
    pub b_qkv: Vec<f64>,
    pub w_o: Matrix,
    pub b_o: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    pub w_fc: Matrix,
    pub b_fc: Vec<f64>,
    pub w_proj: Matrix,
    pub b_proj: Vec<f64>,
}

impl Block {
    fn zeros(c: &LmConfig) -> Self {
        let d = c.d_model;
        Self {
            ln1_g: vec![0.0; d],
            ln1_b: vec![0.0; d],
            w_qkv: Matrix::zeros(d, 3 * d),
            b_qkv: vec![0.0; 3 * d],
            w_o: Matrix::zeros(d, d),
            b_o: vec![0.0; d],
            ln2_g: vec![0.0; d],
            ln2_b: vec![0.0; d],
            w_fc: Matrix::zeros(d, c.d_ff),
            b_fc: vec![0.0; c.d_ff],
            w_proj: Matrix::zeros(c.d_ff, d),
            b_proj: vec![0.0; d],
        }
    }

    fn tensors(&self) -> [&[f64]; 12] {
        [
            &self.ln1_g,
            &self.ln1_b,
            self.w_qkv.as_slice(),
            &self.b_qkv,
            self.w_o.as_slice(),
            &self.b_o,
            &self.ln2_g,
            &self.ln2_b,
            self.w_fc.as_slice(),
            &self.b_fc,
            self.w_proj.as_slice(),
            &self.b_proj,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 12] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            self.w_qkv.as_mut_slice(),
            &mut self.b_qkv,
            self.w_o.as_mut_slice(),
            &mut self.b_o,
            &mut self.ln2_g,
            &mut self.ln2_b,
            self.w_fc.as_mut_slice(),
            &mut self.b_fc,
            self.w_proj.as_mut_slice(),
            &mut self.b_proj,
        ]
    }
}

/// Small frozen-after-pretraining language model.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLm {
    pub config: LmConfig,
    /// `V × d`; also the output projection.
    pub tok_emb: Matrix,
    pub blocks: Vec<Block>,
    pub lnf_g: Vec<f64>,
    pub lnf_b: Vec<f64>,
    frozen: bool,
    positions: Matrix,
}

/// Amplitude of the fixed position signal. At unit amplitude it swamps the
/// small initial token embeddings after layer norm.
const POSITION_SCALE: f64 = 0.1;

fn sinusoid(context: usize, d: usize) -> Matrix {
    let mut pe = Matrix::zeros(context, d);
    for p in 0..context {
        for i in 0..d / 2 {
            let angle = p as f64 / 10_000f64.powf(2.0 * i as f64 / d as f64);
            pe[(p, 2 * i)] = POSITION_SCALE * angle.sin();
            pe[(p, 2 * i + 1)] = POSITION_SCALE * angle.cos();
        }
    }
    pe
}

impl ToyLm {
    /// All-zero parameters; useful as a gradient accumulator or for hand-set weights.
    pub fn zeros(config: LmConfig) -> Self {
        assert!(config.d_model % config.n_heads == 0, "d_model must divide into heads");
        Self {
            config,
            tok_emb: Matrix::zeros(config.vocab_size, config.d_model),
            blocks: (0..config.n_layers).map(|_| Block::zeros(&config)).collect(),
            lnf_g: vec![0.0; config.d_model],
            lnf_b: vec![0.0; config.d_model],
            frozen: false,
            positions: sinusoid(config.context, config.d_model),
        }
    }

    pub fn init(config: LmConfig, seed: u64) -> Self {
        Self::init_scaled(config, seed, 0.02)
    }

    /// Uniform init with the given weight std. Larger values give a random
    /// model whose outputs depend visibly on its inputs, which gradient
    /// checks need.
    pub fn init_scaled(config: LmConfig, seed: u64, std: f64) -> Self {
        let mut m = Self::zeros(config);
        let mut r = rng::seeded(seed);
        let bound = std * 3f64.sqrt();
        let resid_bound = bound / (2.0 * config.n_layers as f64).sqrt();
        let d = config.d_model;
        m.tok_emb = Matrix::uniform(config.vocab_size, d, bound, &mut r);
        for b in &mut m.blocks {
            b.ln1_g.fill(1.0);
            b.ln2_g.fill(1.0);
            b.w_qkv = Matrix::uniform(d, 3 * d, bound, &mut r);
            b.w_o = Matrix::uniform(d, d, resid_bound, &mut r);
            b.w_fc = Matrix::uniform(d, config.d_ff, bound, &mut r);
            b.w_proj = Matrix::uniform(config.d_ff, d, resid_bound, &mut r);
        }
        m.lnf_g.fill(1.0);
        m
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Marks the model immutable, rounding weights to `f32` so checkpoints are lossless.
    pub fn freeze(&mut self) {
        for t in self.tensors_mut() {
            crate::linalg::round_slice_to_f32(t);
        }
        self.frozen = true;
    }

    pub(crate) fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    /// Parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![self.tok_emb.as_slice()];
        for b in &self.blocks {
            v.extend(b.tensors());
        }
        v.push(&self.lnf_g);
        v.push(&self.lnf_b);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![self.tok_emb.as_mut_slice()];
        for b in &mut self.blocks {
            v.extend(b.tensors_mut());
        }
        v.push(&mut self.lnf_g);
        v.push(&mut self.lnf_b);
        v
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn embedding(&self, id: TokenId) -> &[f64] {
        self.tok_emb.row(id as usize)
    }

    /// Input rows: token embeddings or injected vectors (positions not yet added).
    pub fn embed(&self, seq: &MixedSequence) -> Result<Matrix> {
        let d = self.config.d_model;
        self.check_len(seq.len())?;
        let mut out = Matrix::zeros(seq.len(), d);
        for (i, e) in seq.elements.iter().enumerate() {
            let row = match e {
                Element::Token(t) => {
                    if *t as usize >= self.config.vocab_size {
                        return Err(Error::arg(format!("token id {t} outside vocabulary")));
                    }
                    self.embedding(*t)
                }
                Element::Injected(v) => {
                    if v.len() != d {
                        return Err(Error::arg(format!("injected vector has dim {}, expected {d}", v.len())));
                    }
                    v.as_slice()
                }
            };
            out.row_mut(i).copy_from_slice(row);
        }
        Ok(out)
    }

    pub fn embed_tokens(&self, tokens: &[TokenId]) -> Result<Matrix> {
        self.embed(&MixedSequence::from_tokens(tokens))
    }

    pub(crate) fn check_len(&self, len: usize) -> Result<()> {
        if len > self.config.context {
            return Err(Error::Length {
                len,
                max: self.config.context,
            });
        }
        Ok(())
    }

    /// `rows · Eᵀ` for final hidden rows.
    pub fn project_vocab(&self, hidden: &Matrix) -> Matrix {
        hidden.matmul(self.tok_emb.t())
    }
}

// ---------------------------------------------------------------------------
// elementwise pieces

struct LnCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

fn layer_norm(x: &Matrix, g: &[f64], b: &[f64]) -> (Matrix, LnCache) {
    let (t, d) = (x.rows(), x.cols());
    let mut xhat = Matrix::zeros(t, d);
    let mut y = Matrix::zeros(t, d);
    let mut rstd = vec![0.0; t];
    for r in 0..t {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        let xh = xhat.row_mut(r);
        for (o, v) in xh.iter_mut().zip(row) {
            *o = (v - mean) * rs;
        }
        let yr = y.row_mut(r);
        for j in 0..d {
            yr[j] = xhat[(r, j)] * g[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns `dx`; accumulates `dg`, `db` when given.
fn layer_norm_back(dy: &Matrix, cache: &LnCache, g: &[f64], grads: Option<(&mut [f64], &mut [f64])>) -> Matrix {
    let (t, d) = (dy.rows(), dy.cols());
    let mut dx = Matrix::zeros(t, d);
    let mut dxhat = vec![0.0; d];
    let mut grads = grads;
    for r in 0..t {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        if let Some((dg, db)) = grads.as_mut() {
            for j in 0..d {
                dg[j] += dyr[j] * xh[j];
                db[j] += dyr[j];
            }
        }
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for j in 0..d {
            dxhat[j] = dyr[j] * g[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xh[j];
        }
        m1 /= d as f64;
        m2 /= d as f64;
        let rs = cache.rstd[r];
        let out = dx.row_mut(r);
        for j in 0..d {
            out[j] = rs * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044_715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let inner = GELU_C * (u + 0.044_715 * u * u * u);
    let th = inner.tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044_715 * u * u)
}

fn add_bias(m: &mut Matrix, b: &[f64]) {
    for r in 0..m.rows() {
        for (x, y) in m.row_mut(r).iter_mut().zip(b) {
            *x += y;
        }
    }
}

fn col_sums_into(m: &Matrix, acc: &mut [f64]) {
    for r in 0..m.rows() {
        for (a, x) in acc.iter_mut().zip(m.row(r)) {
            *a += x;
        }
    }
}

// ---------------------------------------------------------------------------
// training forward / backward

struct BlockTrace {
    ln1: LnCache,
    a: Matrix,
    qkv: Matrix,
    /// Per head, `T × T` attention probabilities (upper triangle zero).
    probs: Vec<Matrix>,
    ctx: Matrix,
    ln2: LnCache,
    c: Matrix,
    u: Matrix,
    gel: Matrix,
}

/// Activations kept for a backward pass.
pub struct Trace {
    blocks: Vec<BlockTrace>,
    lnf: LnCache,
    /// Final normalized hidden states, `T × d`.
    pub hidden: Matrix,
}

impl ToyLm {
    /// Full forward over input rows (embeddings without positions), keeping activations.
    pub fn forward_trace(&self, inputs: &Matrix) -> Result<Trace> {
        let c = &self.config;
        let (t, d) = (inputs.rows(), c.d_model);
        self.check_len(t)?;
        let (nh, dh) = (c.n_heads, c.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let mut x = inputs.clone();
        for r in 0..t {
            for (v, p) in x.row_mut(r).iter_mut().zip(self.positions.row(r)) {
                *v += p;
            }
        }
        let mut traces = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (a, ln1) = layer_norm(&x, &blk.ln1_g, &blk.ln1_b);
            let mut qkv = a.matmul(blk.w_qkv.view());
            add_bias(&mut qkv, &blk.b_qkv);
            let mut ctx = Matrix::zeros(t, d);
            let mut probs = Vec::with_capacity(nh);
            for h in 0..nh {
                let q = MatRef::new(&qkv.as_slice()[h * dh..], t, dh, 3 * d);
                let k = MatRef::new(&qkv.as_slice()[d + h * dh..], t, dh, 3 * d);
                let v = MatRef::new(&qkv.as_slice()[2 * d + h * dh..], t, dh, 3 * d);
                let mut s = Matrix::zeros(t, t);
                gemm(s.view_mut(), q, k.t(), scale, 0.0);
                for i in 0..t {
                    let row = s.row_mut(i);
                    row[i + 1..].iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
                    crate::linalg::softmax_in_place(row);
                }
                gemm(MatMut::new(&mut ctx.as_mut_slice()[h * dh..], t, dh, d), s.view(), v, 1.0, 0.0);
                probs.push(s);
            }
            let mut o = ctx.matmul(blk.w_o.view());
            add_bias(&mut o, &blk.b_o);
            x.add_assign(&o);
            let (cn, ln2) = layer_norm(&x, &blk.ln2_g, &blk.ln2_b);
            let mut u = cn.matmul(blk.w_fc.view());
            add_bias(&mut u, &blk.b_fc);
            let mut gel = u.clone();
            gel.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
            let mut f = gel.matmul(blk.w_proj.view());
            add_bias(&mut f, &blk.b_proj);
            x.add_assign(&f);
            traces.push(BlockTrace {
                ln1,
                a,
                qkv,
                probs,
                ctx,
                ln2,
                c: cn,
                u,
                gel,
            });
        }
        let (hidden, lnf) = layer_norm(&x, &self.lnf_g, &self.lnf_b);
        Ok(Trace {
            blocks: traces,
            lnf,
            hidden,
        })
    }

    /// Backpropagates `d_hidden` (gradient w.r.t. final normalized hidden
    /// states, `T × d`) to the input rows. Parameter gradients are
    /// accumulated into `grads` when given.
    pub fn backward(&self, trace: &Trace, d_hidden: &Matrix, mut grads: Option<&mut ToyLm>) -> Matrix {
        let c = &self.config;
        let (t, d) = (d_hidden.rows(), c.d_model);
        let (nh, dh) = (c.n_heads, c.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();

        let mut dx = {
            let g = grads.as_deref_mut().map(|g| (g.lnf_g.as_mut_slice(), g.lnf_b.as_mut_slice()));
            layer_norm_back(d_hidden, &trace.lnf, &self.lnf_g, g)
        };

        for (li, blk) in self.blocks.iter().enumerate().rev() {
            let tr = &trace.blocks[li];
            let mut gb = grads.as_deref_mut().map(|g| &mut g.blocks[li]);

            // feed-forward
            let df = &dx;
            if let Some(g) = gb.as_deref_mut() {
                gemm(g.w_proj.view_mut(), tr.gel.t(), df.view(), 1.0, 1.0);
                col_sums_into(df, &mut g.b_proj);
            }
            let mut du = df.matmul(blk.w_proj.t());
            for (dv, uv) in du.as_mut_slice().iter_mut().zip(tr.u.as_slice()) {
                *dv *= gelu_grad(*uv);
            }
            if let Some(g) = gb.as_deref_mut() {
                gemm(g.w_fc.view_mut(), tr.c.t(), du.view(), 1.0, 1.0);
                col_sums_into(&du, &mut g.b_fc);
            }
            let dc = du.matmul(blk.w_fc.t());
            let dln2 = layer_norm_back(
                &dc,
                &tr.ln2,
                &blk.ln2_g,
                gb.as_deref_mut().map(|g| (g.ln2_g.as_mut_slice(), g.ln2_b.as_mut_slice())),
            );
            dx.add_assign(&dln2);

            // attention
            let dout = &dx;
            if let Some(g) = gb.as_deref_mut() {
                gemm(g.w_o.view_mut(), tr.ctx.t(), dout.view(), 1.0, 1.0);
                col_sums_into(dout, &mut g.b_o);
            }
            let dctx = dout.matmul(blk.w_o.t());
            let mut dqkv = Matrix::zeros(t, 3 * d);
            let qkv = tr.qkv.as_slice();
            for h in 0..nh {
                let p = &tr.probs[h];
                let q = MatRef::new(&qkv[h * dh..], t, dh, 3 * d);
                let k = MatRef::new(&qkv[d + h * dh..], t, dh, 3 * d);
                let v = MatRef::new(&qkv[2 * d + h * dh..], t, dh, 3 * d);
                let dctx_h = MatRef::new(&dctx.as_slice()[h * dh..], t, dh, d);
                let mut dp = Matrix::zeros(t, t);
                gemm(dp.view_mut(), dctx_h, v.t(), 1.0, 0.0);
                // dV = Pᵀ dctx
                gemm(
                    MatMut::new(&mut dqkv.as_mut_slice()[2 * d + h * dh..], t, dh, 3 * d),
                    p.t(),
                    dctx_h,
                    1.0,
                    0.0,
                );
                // softmax backward, scaled
                for i in 0..t {
                    let pr = p.row(i);
                    let dr = dp.row_mut(i);
                    let s: f64 = pr[..=i].iter().zip(&dr[..=i]).map(|(a, b)| a * b).sum();
                    for j in 0..=i {
                        dr[j] = pr[j] * (dr[j] - s) * scale;
                    }
                    dr[i + 1..].iter_mut().for_each(|x| *x = 0.0);
                }
                gemm(MatMut::new(&mut dqkv.as_mut_slice()[h * dh..], t, dh, 3 * d), dp.view(), k, 1.0, 0.0);
                gemm(MatMut::new(&mut dqkv.as_mut_slice()[d + h * dh..], t, dh, 3 * d), dp.t(), q, 1.0, 0.0);
            }
            if let Some(g) = gb.as_deref_mut() {
                gemm(g.w_qkv.view_mut(), tr.a.t(), dqkv.view(), 1.0, 1.0);
                col_sums_into(&dqkv, &mut g.b_qkv);
            }
            let da = dqkv.matmul(blk.w_qkv.t());
            let dln1 = layer_norm_back(
                &da,
                &tr.ln1,
                &blk.ln1_g,
                gb.as_deref_mut().map(|g| (g.ln1_g.as_mut_slice(), g.ln1_b.as_mut_slice())),
            );
            dx.add_assign(&dln1);
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// incremental inference

/// Per-layer keys and values for already-processed positions.
#[derive(Debug, Clone)]
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
}

impl KvCache {
    pub fn new(model: &ToyLm) -> Self {
        Self {
            keys: vec![Vec::new(); model.config.n_layers],
            values: vec![Vec::new(); model.config.n_layers],
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

impl ToyLm {
    /// Processes new input rows after the cached prefix and returns their
    /// final normalized hidden states.
    pub fn extend(&self, cache: &mut KvCache, inputs: &Matrix) -> Result<Matrix> {
        let c = &self.config;
        let (n, d) = (inputs.rows(), c.d_model);
        let start = cache.len;
        self.check_len(start + n)?;
        let (nh, dh) = (c.n_heads, c.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let total = start + n;
        let mut x = inputs.clone();
        for r in 0..n {
            for (v, p) in x.row_mut(r).iter_mut().zip(self.positions.row(start + r)) {
                *v += p;
            }
        }
        for (li, blk) in self.blocks.iter().enumerate() {
            let (a, _) = layer_norm(&x, &blk.ln1_g, &blk.ln1_b);
            let mut qkv = a.matmul(blk.w_qkv.view());
            add_bias(&mut qkv, &blk.b_qkv);
            for r in 0..n {
                let row = qkv.row(r);
                cache.keys[li].extend_from_slice(&row[d..2 * d]);
                cache.values[li].extend_from_slice(&row[2 * d..]);
            }
            let keys = &cache.keys[li];
            let values = &cache.values[li];
            let mut ctx = Matrix::zeros(n, d);
            for h in 0..nh {
                let q = MatRef::new(&qkv.as_slice()[h * dh..], n, dh, 3 * d);
                let k = MatRef::new(&keys[h * dh..], total, dh, d);
                let v = MatRef::new(&values[h * dh..], total, dh, d);
                let mut s = Matrix::zeros(n, total);
                gemm(s.view_mut(), q, k.t(), scale, 0.0);
                for i in 0..n {
                    let row = s.row_mut(i);
                    row[start + i + 1..].iter_mut().for_each(|x| *x = f64::NEG_INFINITY);
                    crate::linalg::softmax_in_place(row);
                }
                gemm(MatMut::new(&mut ctx.as_mut_slice()[h * dh..], n, dh, d), s.view(), v, 1.0, 0.0);
            }
            let mut o = ctx.matmul(blk.w_o.view());
            add_bias(&mut o, &blk.b_o);
            x.add_assign(&o);
            let (cn, _) = layer_norm(&x, &blk.ln2_g, &blk.ln2_b);
            let mut u = cn.matmul(blk.w_fc.view());
            add_bias(&mut u, &blk.b_fc);
            u.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
            let mut f = u.matmul(blk.w_proj.view());
            add_bias(&mut f, &blk.b_proj);
            x.add_assign(&f);
        }
        cache.len = total;
        let (hidden, _) = layer_norm(&x, &self.lnf_g, &self.lnf_b);
        Ok(hidden)
    }

    /// Next-token logits at every position, `T × V`.
    pub fn forward(&self, seq: &MixedSequence) -> Result<Matrix> {
        let inputs = self.embed(seq)?;
        let mut cache = KvCache::new(self);
        let hidden = self.extend(&mut cache, &inputs)?;
        Ok(self.project_vocab(&hidden))
    }
}
