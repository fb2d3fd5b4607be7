//! Two-layer mean-aggregation graph encoder, pretrained contrastively
//! against text features and then frozen.

use rand::seq::SliceRandom;

use crate::corpdata::{ego_subgraph, CompanyId, EdgeIndex, Subgraph, SupplyGraph, DEFAULT_NEIGHBOR_CAP};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};
use crate::optim::{clip_global_norm, Adam};
use crate::rng;

pub const DEFAULT_GRAPH_DIM: usize = 64;
pub const DEFAULT_TEMPERATURE: f64 = 0.07;

/// `h' = tanh(h·W_self + mean_nbr(h)·W_nbr)`; row-vector convention.
#[derive(Debug, Clone, PartialEq)]
pub struct SageLayer {
    pub w_self: Matrix,
    pub w_nbr: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEncoder {
    pub layers: Vec<SageLayer>,
    frozen: bool,
}

/// Mean over neighbors in member space; isolated nodes get zeros.
fn aggregate(adj: &[Vec<usize>], h: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(h.rows(), h.cols());
    for (i, nbrs) in adj.iter().enumerate() {
        if nbrs.is_empty() {
            continue;
        }
        let w = 1.0 / nbrs.len() as f64;
        for &j in nbrs {
            crate::linalg::axpy(w, h.row(j), out.row_mut(i));
        }
    }
    out
}

/// Transpose of [`aggregate`].
fn aggregate_t(adj: &[Vec<usize>], d: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(d.rows(), d.cols());
    for (i, nbrs) in adj.iter().enumerate() {
        if nbrs.is_empty() {
            continue;
        }
        let w = 1.0 / nbrs.len() as f64;
        for &j in nbrs {
            crate::linalg::axpy(w, d.row(i), out.row_mut(j));
        }
    }
    out
}

struct LayerTrace {
    input: Matrix,
    agg: Matrix,
    output: Matrix,
}

impl GraphEncoder {
    /// Uniform fan-in init; `in_dim` is the text feature width.
    pub fn init(in_dim: usize, dim: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let mut layers = Vec::with_capacity(2);
        let mut fan_in = in_dim;
        for _ in 0..2 {
            let bound = (3.0 / fan_in as f64).sqrt();
            layers.push(SageLayer {
                w_self: Matrix::uniform(fan_in, dim, bound, &mut r),
                w_nbr: Matrix::uniform(fan_in, dim, bound, &mut r),
            });
            fan_in = dim;
        }
        Self { layers, frozen: false }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w_self.rows()
    }

    pub fn dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w_self.cols())
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        for t in self.tensors_mut() {
            crate::linalg::round_slice_to_f32(t);
        }
        self.frozen = true;
    }

    pub(crate) fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.w_self.as_slice(), l.w_nbr.as_slice()]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.w_self.as_mut_slice(), l.w_nbr.as_mut_slice()])
            .collect()
    }

    pub fn checksum(&self) -> String {
        crate::checksum::tensor_checksum(&[self.in_dim(), self.dim(), self.layers.len()], &self.tensors())
    }

    fn features(sub: &Subgraph, graph: &SupplyGraph) -> Result<Matrix> {
        let rows = sub
            .members
            .iter()
            .map(|&m| graph.features(m).map(<[f64]>::to_vec))
            .collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_rows(&rows))
    }

    fn forward(&self, adj: &[Vec<usize>], x: Matrix) -> Result<Vec<LayerTrace>> {
        if x.cols() != self.in_dim() {
            return Err(Error::integrity(format!("feature rows have dim {}, encoder expects {}", x.cols(), self.in_dim())));
        }
        let mut traces: Vec<LayerTrace> = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for l in &self.layers {
            let agg = aggregate(adj, &h);
            let mut z = h.matmul(l.w_self.view());
            z.add_assign(&agg.matmul(l.w_nbr.view()));
            z.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
            traces.push(LayerTrace {
                input: h,
                agg,
                output: z.clone(),
            });
            h = z;
        }
        Ok(traces)
    }

    /// One `d_g` row per member, in member order (center first).
    pub fn encode(&self, sub: &Subgraph, graph: &SupplyGraph) -> Result<Matrix> {
        let x = Self::features(sub, graph)?;
        let traces = self.forward(&sub.adjacency(), x)?;
        Ok(traces.into_iter().last().expect("two layers").output)
    }

    /// Accumulates weight gradients for `d_out` (gradient w.r.t. the encoder output).
    fn backward(&self, adj: &[Vec<usize>], traces: &[LayerTrace], d_out: Matrix, grads: &mut GraphEncoder) {
        let mut dh = d_out;
        for (li, l) in self.layers.iter().enumerate().rev() {
            let tr = &traces[li];
            let mut dz = dh;
            for (d, y) in dz.as_mut_slice().iter_mut().zip(tr.output.as_slice()) {
                *d *= 1.0 - y * y;
            }
            let g = &mut grads.layers[li];
            crate::linalg::gemm(g.w_self.view_mut(), tr.input.t(), dz.view(), 1.0, 1.0);
            crate::linalg::gemm(g.w_nbr.view_mut(), tr.agg.t(), dz.view(), 1.0, 1.0);
            if li > 0 {
                let mut dprev = dz.matmul(l.w_self.t());
                dprev.add_assign(&aggregate_t(adj, &dz.matmul(l.w_nbr.t())));
                dh = dprev;
            } else {
                break;
            }
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| SageLayer {
                    w_self: Matrix::zeros(l.w_self.rows(), l.w_self.cols()),
                    w_nbr: Matrix::zeros(l.w_nbr.rows(), l.w_nbr.cols()),
                })
                .collect(),
            frozen: false,
        }
    }
}

/// `z·H` for a single row `z`.
fn apply_head(head: &Matrix, z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; head.cols()];
    for (j, &zj) in z.iter().enumerate() {
        crate::linalg::axpy(zj, head.row(j), &mut out);
    }
    out
}

fn cosine_logits(g: &[Vec<f64>], t: &[Vec<f64>], temperature: f64) -> Matrix {
    let n = g.len();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        let ng = norm(&g[i]).max(1e-12);
        for j in 0..n {
            let nt = norm(&t[j]).max(1e-12);
            s[(i, j)] = dot(&g[i], &t[j]) / (ng * nt) / temperature;
        }
    }
    s
}

fn check_nce(g: &[Vec<f64>], t: &[Vec<f64>], temperature: f64) -> Result<()> {
    if temperature <= 0.0 || !temperature.is_finite() {
        return Err(Error::arg("temperature must be positive"));
    }
    if g.len() != t.len() || g.len() < 2 {
        return Err(Error::arg("need two equal-length batches of at least two vectors"));
    }
    Ok(())
}

/// Symmetric InfoNCE over cosine similarities scaled by `1/temperature`.
pub fn info_nce(graph_vecs: &[Vec<f64>], text_vecs: &[Vec<f64>], temperature: f64) -> Result<f64> {
    info_nce_grad(graph_vecs, text_vecs, temperature).map(|(l, _)| l)
}

/// Loss and its gradient with respect to `graph_vecs`.
pub fn info_nce_grad(graph_vecs: &[Vec<f64>], text_vecs: &[Vec<f64>], temperature: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    check_nce(graph_vecs, text_vecs, temperature)?;
    let n = graph_vecs.len();
    let s = cosine_logits(graph_vecs, text_vecs, temperature);
    let mut ds = Matrix::zeros(n, n);
    let mut loss = 0.0;
    // graph → text (rows) and text → graph (columns), each averaged over n.
    for i in 0..n {
        let row = s.row(i).to_vec();
        let lse = crate::linalg::log_sum_exp(&row);
        loss += lse - row[i];
        for j in 0..n {
            ds[(i, j)] += (row[j] - lse).exp() / (2.0 * n as f64);
        }
        ds[(i, i)] -= 1.0 / (2.0 * n as f64);
    }
    for j in 0..n {
        let col: Vec<f64> = (0..n).map(|i| s[(i, j)]).collect();
        let lse = crate::linalg::log_sum_exp(&col);
        loss += lse - col[j];
        for i in 0..n {
            ds[(i, j)] += (col[i] - lse).exp() / (2.0 * n as f64);
        }
        ds[(j, j)] -= 1.0 / (2.0 * n as f64);
    }
    loss /= 2.0 * n as f64;
    let mut dg = vec![vec![0.0; graph_vecs[0].len()]; n];
    for i in 0..n {
        let ng = norm(&graph_vecs[i]).max(1e-12);
        let ghat: Vec<f64> = graph_vecs[i].iter().map(|x| x / ng).collect();
        for j in 0..n {
            let c = ds[(i, j)] / temperature;
            if c == 0.0 {
                continue;
            }
            let nt = norm(&text_vecs[j]).max(1e-12);
            let cos = s[(i, j)] * temperature;
            // d cos / d g = (t̂ − cos·ĝ) / |g|
            for k in 0..dg[i].len() {
                dg[i][k] += c * (text_vecs[j][k] / nt - cos * ghat[k]) / ng;
            }
        }
    }
    Ok((loss, dg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastiveConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub temperature: f64,
    pub neighbor_cap: usize,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: 5e-3,
            temperature: DEFAULT_TEMPERATURE,
            neighbor_cap: DEFAULT_NEIGHBOR_CAP,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveOutcome {
    pub encoder: GraphEncoder,
    /// `d_g × F` head mapping center embeddings into text-feature space.
    pub head: Matrix,
    pub epoch_losses: Vec<f64>,
}

/// Trains encoder and head on the given firms' ego subgraphs over `visible`, then freezes the encoder.
pub fn pretrain_contrastive(
    graph: &SupplyGraph,
    visible: &EdgeIndex,
    firms: &[CompanyId],
    mut encoder: GraphEncoder,
    config: &ContrastiveConfig,
) -> Result<ContrastiveOutcome> {
    if encoder.is_frozen() {
        return Err(Error::state("graph encoder is already frozen"));
    }
    let f = encoder.in_dim();
    let dg = encoder.dim();
    let mut r = rng::seeded(rng::derive(config.seed, 1));
    let mut head = Matrix::uniform(dg, f, (3.0 / dg as f64).sqrt(), &mut r);
    let subs = firms
        .iter()
        .map(|&id| {
            let sub = ego_subgraph(visible, id, config.neighbor_cap, config.seed)?;
            let x = GraphEncoder::features(&sub, graph)?;
            Ok((sub.adjacency(), x, graph.features(id)?.to_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..subs.len()).collect();
    let mut opt = Adam::new(config.lr);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size.max(2)) {
            if batch.len() < 2 {
                continue;
            }
            let mut traces = Vec::with_capacity(batch.len());
            let mut centers = Vec::with_capacity(batch.len());
            let mut texts = Vec::with_capacity(batch.len());
            for &i in batch {
                let (adj, x, text) = &subs[i];
                let tr = encoder.forward(adj, x.clone())?;
                let z = tr.last().expect("two layers").output.row(0).to_vec();
                centers.push(z);
                texts.push(text.clone());
                traces.push(tr);
            }
            let projected: Vec<Vec<f64>> = centers.iter().map(|z| apply_head(&head, z)).collect();
            let (loss, dproj) = info_nce_grad(&projected, &texts, config.temperature)?;
            total += loss;
            batches += 1;
            let mut g_enc = encoder.zeros_like();
            let mut g_head = Matrix::zeros(dg, f);
            for (b, &i) in batch.iter().enumerate() {
                let (adj, _, _) = &subs[i];
                let dp = &dproj[b];
                let mut dz = Matrix::zeros(adj.len(), dg);
                for j in 0..dg {
                    let row = head.row(j);
                    dz[(0, j)] = dot(row, dp);
                    crate::linalg::axpy(centers[b][j], dp, g_head.row_mut(j));
                }
                encoder.backward(adj, &traces[b], dz, &mut g_enc);
            }
            let mut gs = g_enc.tensors_mut();
            gs.push(g_head.as_mut_slice());
            clip_global_norm(&mut gs, 5.0);
            let grads: Vec<&[f64]> = g_enc.tensors().into_iter().chain([g_head.as_slice()]).collect();
            let mut params = encoder.tensors_mut();
            params.push(head.as_mut_slice());
            opt.step(&mut params, &grads);
        }
        epoch_losses.push(if batches == 0 { 0.0 } else { total / batches as f64 });
    }
    encoder.freeze();
    Ok(ContrastiveOutcome {
        encoder,
        head,
        epoch_losses,
    })
}

/// Fraction of firms whose own text feature is the nearest (by cosine) to
/// their projected center embedding among all the given firms' texts.
pub fn retrieval_accuracy(
    outcome: &ContrastiveOutcome,
    graph: &SupplyGraph,
    visible: &EdgeIndex,
    firms: &[CompanyId],
    neighbor_cap: usize,
    seed: u64,
) -> Result<f64> {
    if firms.is_empty() {
        return Ok(0.0);
    }
    let texts = firms.iter().map(|&id| graph.features(id)).collect::<Result<Vec<_>>>()?;
    let mut hits = 0usize;
    for (i, &id) in firms.iter().enumerate() {
        let sub = ego_subgraph(visible, id, neighbor_cap, seed)?;
        let z = outcome.encoder.encode(&sub, graph)?;
        let p = apply_head(&outcome.head, z.row(0));
        let scores: Vec<f64> = texts.iter().map(|t| crate::linalg::cosine(&p, t)).collect();
        let best = scores
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (j, &s)| if s > b.1 { (j, s) } else { b })
            .0;
        hits += usize::from(best == i);
    }
    Ok(hits as f64 / firms.len() as f64)
}
