//! Comparison systems: GAT and GraphSAGE link predictors over the text
//! features, and a graph-blind LM that reads neighborhoods as text.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use crate::corpdata::{sample_negatives, CompanyId, EdgeIndex, MembershipRule, Pair, SplitSpec, SupplyGraph};
use crate::error::{Error, Result};
use crate::linalg::{dot, gemm, Matrix};
use crate::optim::{clip_global_norm, Adam};
use crate::rng;
use crate::tasks::{description_text, yes_no_choices, TaskKind, Template};
use crate::toylm::{score_choice, ChoiceScore, MixedSequence, TokenId, ToyLm, Vocab, BOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GnnKind {
    Gat,
    Sage,
}

impl fmt::Display for GnnKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GnnKind::Gat => "gat",
            GnnKind::Sage => "sage",
        })
    }
}

impl FromStr for GnnKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gat" => Ok(GnnKind::Gat),
            "sage" | "graphsage" => Ok(GnnKind::Sage),
            _ => Err(Error::arg(format!("unknown link model kind `{s}`"))),
        }
    }
}

const LEAKY: f64 = 0.2;

#[derive(Debug, Clone, PartialEq)]
struct GnnLayer {
    /// SAGE: self weight. GAT: shared projection.
    w: Matrix,
    /// SAGE: neighbor weight. GAT: unused (0 × 0).
    w_nbr: Matrix,
    /// GAT attention vectors over (source, neighbor); empty for SAGE.
    a_src: Vec<f64>,
    a_dst: Vec<f64>,
    b: Vec<f64>,
}

impl GnnLayer {
    fn init(kind: GnnKind, fan_in: usize, fan_out: usize, r: &mut rng::Rng) -> Self {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Matrix::uniform(fan_in, fan_out, bound, r);
        match kind {
            GnnKind::Sage => Self {
                w,
                w_nbr: Matrix::uniform(fan_in, fan_out, bound, r),
                a_src: Vec::new(),
                a_dst: Vec::new(),
                b: vec![0.0; fan_out],
            },
            GnnKind::Gat => {
                let ab = (3.0 / fan_out as f64).sqrt();
                Self {
                    w,
                    w_nbr: Matrix::zeros(0, 0),
                    a_src: (0..fan_out).map(|_| r.gen_range(-ab..=ab)).collect(),
                    a_dst: (0..fan_out).map(|_| r.gen_range(-ab..=ab)).collect(),
                    b: vec![0.0; fan_out],
                }
            }
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            w: Matrix::zeros(self.w.rows(), self.w.cols()),
            w_nbr: Matrix::zeros(self.w_nbr.rows(), self.w_nbr.cols()),
            a_src: vec![0.0; self.a_src.len()],
            a_dst: vec![0.0; self.a_dst.len()],
            b: vec![0.0; self.b.len()],
        }
    }

    #[cfg(test)]
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w.as_slice(), self.w_nbr.as_slice(), &self.a_src, &self.a_dst, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.w.as_mut_slice(),
            self.w_nbr.as_mut_slice(),
            &mut self.a_src,
            &mut self.a_dst,
            &mut self.b,
        ]
    }
}

/// Per-layer values kept for the backward pass.
struct LayerTrace {
    input: Matrix,
    /// SAGE: neighbor means. GAT: `input · w`.
    mixed: Matrix,
    /// GAT attention weights per node over `[self, neighbors...]`.
    alpha: Vec<Vec<f64>>,
    /// GAT pre-LeakyReLU logits, same layout as `alpha`.
    logits: Vec<Vec<f64>>,
    output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for LinkTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.01,
            hidden: 64,
            seed: 0,
        }
    }
}

/// Two message-passing layers and a logistic head over `[h_a ; h_b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GnnLinkModel {
    pub kind: GnnKind,
    layers: Vec<GnnLayer>,
    head: Vec<f64>,
    head_b: f64,
    /// Final node states over the graph the model was last run on.
    embeddings: Matrix,
    pub epoch_losses: Vec<f64>,
}

fn neighbor_lists(graph: &SupplyGraph, visible: &EdgeIndex) -> Result<Vec<Vec<usize>>> {
    graph
        .companies
        .ids()
        .map(|id| {
            visible
                .neighbors(id)
                .iter()
                .map(|n| graph.companies.position(*n).ok_or(Error::Lookup(*n)))
                .collect()
        })
        .collect()
}

fn feature_matrix(graph: &SupplyGraph) -> Result<Matrix> {
    let rows = graph
        .companies
        .ids()
        .map(|id| graph.features(id).map(<[f64]>::to_vec))
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_rows(&rows))
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY * x
    }
}

impl GnnLinkModel {
    fn init(kind: GnnKind, in_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let layers = vec![GnnLayer::init(kind, in_dim, hidden, &mut r), GnnLayer::init(kind, hidden, hidden, &mut r)];
        let hb = (3.0 / (2 * hidden) as f64).sqrt();
        let head = (0..2 * hidden).map(|_| r.gen_range(-hb..=hb)).collect();
        Self {
            kind,
            layers,
            head,
            head_b: 0.0,
            embeddings: Matrix::zeros(0, hidden),
            epoch_losses: Vec::new(),
        }
    }

    fn forward(&self, x: &Matrix, adj: &[Vec<usize>]) -> Vec<LayerTrace> {
        let mut traces = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for l in &self.layers {
            let n = h.rows();
            let (mixed, mut pre, alpha, logits) = match self.kind {
                GnnKind::Sage => {
                    let mut m = Matrix::zeros(n, h.cols());
                    for (i, nb) in adj.iter().enumerate() {
                        for &j in nb {
                            crate::linalg::axpy(1.0 / nb.len() as f64, h.row(j), m.row_mut(i));
                        }
                    }
                    let mut pre = h.matmul(l.w.view());
                    pre.add_assign(&m.matmul(l.w_nbr.view()));
                    (m, pre, Vec::new(), Vec::new())
                }
                GnnKind::Gat => {
                    let z = h.matmul(l.w.view());
                    let s: Vec<f64> = (0..n).map(|i| dot(z.row(i), &l.a_src)).collect();
                    let t: Vec<f64> = (0..n).map(|i| dot(z.row(i), &l.a_dst)).collect();
                    let mut pre = Matrix::zeros(n, z.cols());
                    let mut alpha = Vec::with_capacity(n);
                    let mut logits = Vec::with_capacity(n);
                    for i in 0..n {
                        let nodes: Vec<usize> = std::iter::once(i).chain(adj[i].iter().copied()).collect();
                        let u: Vec<f64> = nodes.iter().map(|&j| s[i] + t[j]).collect();
                        let mut a: Vec<f64> = u.iter().map(|&v| leaky(v)).collect();
                        crate::linalg::softmax_in_place(&mut a);
                        for (&j, &w) in nodes.iter().zip(&a) {
                            crate::linalg::axpy(w, z.row(j), pre.row_mut(i));
                        }
                        alpha.push(a);
                        logits.push(u);
                    }
                    (z, pre, alpha, logits)
                }
            };
            for i in 0..n {
                for (p, b) in pre.row_mut(i).iter_mut().zip(&l.b) {
                    *p = (*p + b).tanh();
                }
            }
            traces.push(LayerTrace {
                input: h,
                mixed,
                alpha,
                logits,
                output: pre.clone(),
            });
            h = pre;
        }
        traces
    }

    fn backward(&self, adj: &[Vec<usize>], traces: &[LayerTrace], d_out: Matrix, grads: &mut [GnnLayer]) {
        let mut dh = d_out;
        for (li, l) in self.layers.iter().enumerate().rev() {
            let tr = &traces[li];
            let g = &mut grads[li];
            let n = dh.rows();
            for (d, y) in dh.as_mut_slice().iter_mut().zip(tr.output.as_slice()) {
                *d *= 1.0 - y * y;
            }
            for i in 0..n {
                crate::linalg::axpy(1.0, dh.row(i), &mut g.b);
            }
            let d_in = match self.kind {
                GnnKind::Sage => {
                    gemm(g.w.view_mut(), tr.input.t(), dh.view(), 1.0, 1.0);
                    gemm(g.w_nbr.view_mut(), tr.mixed.t(), dh.view(), 1.0, 1.0);
                    let mut d_in = dh.matmul(l.w.t());
                    let dm = dh.matmul(l.w_nbr.t());
                    for (i, nb) in adj.iter().enumerate() {
                        for &j in nb {
                            crate::linalg::axpy(1.0 / nb.len() as f64, dm.row(i), d_in.row_mut(j));
                        }
                    }
                    d_in
                }
                GnnKind::Gat => {
                    let z = &tr.mixed;
                    let mut dz = Matrix::zeros(n, z.cols());
                    let mut ds = vec![0.0; n];
                    let mut dt = vec![0.0; n];
                    for i in 0..n {
                        let nodes: Vec<usize> = std::iter::once(i).chain(adj[i].iter().copied()).collect();
                        let a = &tr.alpha[i];
                        let da: Vec<f64> = nodes.iter().map(|&j| dot(dh.row(i), z.row(j))).collect();
                        let mean = dot(a, &da);
                        for (k, &j) in nodes.iter().enumerate() {
                            crate::linalg::axpy(a[k], dh.row(i), dz.row_mut(j));
                            let de = a[k] * (da[k] - mean);
                            let du = de * if tr.logits[i][k] > 0.0 { 1.0 } else { LEAKY };
                            ds[i] += du;
                            dt[j] += du;
                        }
                    }
                    for i in 0..n {
                        crate::linalg::axpy(ds[i], z.row(i), &mut g.a_src);
                        crate::linalg::axpy(dt[i], z.row(i), &mut g.a_dst);
                        crate::linalg::axpy(ds[i], &l.a_src, dz.row_mut(i));
                        crate::linalg::axpy(dt[i], &l.a_dst, dz.row_mut(i));
                    }
                    gemm(g.w.view_mut(), tr.input.t(), dz.view(), 1.0, 1.0);
                    dz.matmul(l.w.t())
                }
            };
            dh = d_in;
        }
    }

    fn logit_from(&self, h: &Matrix, a: usize, b: usize) -> f64 {
        let d = h.cols();
        dot(&self.head[..d], h.row(a)) + dot(&self.head[d..], h.row(b)) + self.head_b
    }

    /// Mean logistic loss over `pairs` (row indices) and its full gradient.
    fn loss_grad(&self, x: &Matrix, adj: &[Vec<usize>], pairs: &[(usize, usize, bool)]) -> (f64, Vec<GnnLayer>, Vec<f64>, f64) {
        let traces = self.forward(x, adj);
        let h = &traces.last().expect("two layers").output;
        let d = h.cols();
        let mut dh = Matrix::zeros(h.rows(), d);
        let mut d_head = vec![0.0; 2 * d];
        let mut d_hb = 0.0;
        let mut loss = 0.0;
        let m = pairs.len().max(1) as f64;
        for &(a, b, y) in pairs {
            let z = self.logit_from(h, a, b);
            let yv = if y { 1.0 } else { 0.0 };
            // log(1 + e^z) - y z, computed stably.
            loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - yv * z;
            let g = (sigmoid(z) - yv) / m;
            crate::linalg::axpy(g, h.row(a), &mut d_head[..d]);
            crate::linalg::axpy(g, h.row(b), &mut d_head[d..]);
            d_hb += g;
            crate::linalg::axpy(g, &self.head[..d], dh.row_mut(a));
            crate::linalg::axpy(g, &self.head[d..], dh.row_mut(b));
        }
        let mut grads: Vec<GnnLayer> = self.layers.iter().map(GnnLayer::zeros_like).collect();
        self.backward(adj, &traces, dh, &mut grads);
        (loss / m, grads, d_head, d_hb)
    }

    /// Probability that `a` supplies `b`, using node states from the last
    /// [`GnnLinkModel::refresh`] or training run.
    pub fn score(&self, graph: &SupplyGraph, a: CompanyId, b: CompanyId) -> Result<f64> {
        let ia = graph.companies.position(a).ok_or(Error::Lookup(a))?;
        let ib = graph.companies.position(b).ok_or(Error::Lookup(b))?;
        if self.embeddings.rows() != graph.n_firms() {
            return Err(Error::state("link model has no node states for this graph"));
        }
        Ok(sigmoid(self.logit_from(&self.embeddings, ia, ib)))
    }

    pub fn predict(&self, graph: &SupplyGraph, a: CompanyId, b: CompanyId) -> Result<bool> {
        Ok(self.score(graph, a, b)? >= 0.5)
    }

    /// Recomputes node states over `visible`.
    pub fn refresh(&mut self, graph: &SupplyGraph, visible: &EdgeIndex) -> Result<()> {
        let x = feature_matrix(graph)?;
        let adj = neighbor_lists(graph, visible)?;
        self.embeddings = self.forward(&x, &adj).pop().expect("two layers").output;
        Ok(())
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = self.layers.iter_mut().flat_map(GnnLayer::tensors_mut).collect();
        v.push(&mut self.head);
        v.push(std::slice::from_mut(&mut self.head_b));
        v
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Full-batch training on the visible train edges plus as many seeded
/// non-edges among train firms; message passing runs over the train edges.
pub fn train_link_model(kind: GnnKind, graph: &SupplyGraph, split: &SplitSpec, config: &LinkTrainConfig) -> Result<GnnLinkModel> {
    let x = feature_matrix(graph)?;
    let visible = EdgeIndex::new(graph.companies.ids(), split.train_edges.iter());
    let adj = neighbor_lists(graph, &visible)?;
    let positives: Vec<Pair> = split.train_edges.iter().copied().collect();
    let negatives = sample_negatives(
        graph,
        &positives,
        MembershipRule::BothIn(&split.train_firms),
        rng::derive(config.seed, 1),
    )?;
    let pos = |id: CompanyId| graph.companies.position(id).ok_or(Error::Lookup(id));
    let mut pairs = Vec::with_capacity(2 * positives.len());
    for &(a, b) in &positives {
        pairs.push((pos(a)?, pos(b)?, true));
    }
    for n in &negatives {
        pairs.push((pos(n.pair.0)?, pos(n.pair.1)?, false));
    }
    let mut model = GnnLinkModel::init(kind, x.cols(), config.hidden, rng::derive(config.seed, 2));
    let mut opt = Adam::new(config.lr);
    for _ in 0..config.epochs {
        let (loss, mut gl, mut gh, mut ghb) = model.loss_grad(&x, &adj, &pairs);
        let mut gs: Vec<&mut [f64]> = gl.iter_mut().flat_map(GnnLayer::tensors_mut).collect();
        gs.push(&mut gh);
        gs.push(std::slice::from_mut(&mut ghb));
        clip_global_norm(&mut gs, 5.0);
        let grads: Vec<&[f64]> = gs.iter().map(|g| &**g).collect();
        opt.step(&mut model.tensors_mut(), &grads);
        model.epoch_losses.push(loss);
    }
    model.refresh(graph, &visible)?;
    Ok(model)
}

/// Text-only prompt listing each firm's visible neighbors by name.
pub fn lm_text_prompt(
    graph: &SupplyGraph,
    visible: &EdgeIndex,
    vocab: &Vocab,
    kind: TaskKind,
    a: CompanyId,
    b: CompanyId,
    with_sic: bool,
) -> Result<Vec<TokenId>> {
    let template = match kind {
        TaskKind::Srp => Template::builtin("lm_srp"),
        TaskKind::Comp => Template::builtin("lm_comp"),
        other => return Err(Error::arg(format!("text baseline handles srp and comp, not {other}"))),
    };
    let mut values = BTreeMap::new();
    let keys = [
        ("company1_description", "company1_name", "company1_connections", a, b),
        ("company2_description", "company2_name", "company2_connections", b, a),
    ];
    for (kd, kn, kc, id, other) in keys {
        let c = graph.companies.get(id)?;
        let mut desc = description_text(&c.description);
        if with_sic {
            desc.push_str(" Industry: ");
            desc.push_str(&c.sic_label);
        }
        let names: Vec<&str> = visible
            .neighbors(id)
            .iter()
            .filter(|&&n| n != other)
            .map(|&n| graph.companies.get(n).map(|c| c.name.as_str()))
            .collect::<Result<_>>()?;
        values.insert(kd, desc);
        values.insert(kn, c.name.clone());
        values.insert(kc, if names.is_empty() { "none".to_owned() } else { names.join(", ") });
    }
    let text: String = template
        .fill(&values)?
        .into_iter()
        .map(|s| match s {
            crate::tasks::Segment::Text(t) => Ok(t),
            crate::tasks::Segment::Graph { .. } => Err(Error::integrity("text baseline template holds a graph placeholder")),
        })
        .collect::<Result<_>>()?;
    let mut tokens = vec![BOS];
    tokens.extend(vocab.encode(&text));
    Ok(tokens)
}

/// Graph-blind LM answer: yes/no scored after the text-only prompt.
pub fn lm_text_baseline(
    lm: &ToyLm,
    vocab: &Vocab,
    graph: &SupplyGraph,
    visible: &EdgeIndex,
    kind: TaskKind,
    pairs: &[Pair],
    with_sic: bool,
) -> Result<Vec<ChoiceScore>> {
    let choices = yes_no_choices(vocab);
    pairs
        .iter()
        .map(|&(a, b)| {
            let prompt = lm_text_prompt(graph, visible, vocab, kind, a, b, with_sic)?;
            score_choice(lm, &MixedSequence::from_tokens(&prompt), &choices)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpdata::firm_split;
    use crate::synthgen::{generate_world, WorldConfig};
    use crate::tasks::build_vocab;
    use crate::textenc::TextEncoder;
    use crate::toylm::{LmConfig, GSLOT};

    fn small_world() -> (SupplyGraph, SplitSpec) {
        let (mut g, _) = generate_world(&WorldConfig::new(60, 4, 2.5, 3)).unwrap();
        TextEncoder::new(16, 1).featurize(&mut g).unwrap();
        let split = firm_split(&g, 0.2, 5).unwrap();
        (g, split)
    }

    fn fd_check(kind: GnnKind) {
        let (g, split) = small_world();
        let x = feature_matrix(&g).unwrap();
        let visible = EdgeIndex::new(g.companies.ids(), split.train_edges.iter());
        let adj = neighbor_lists(&g, &visible).unwrap();
        let mut m = GnnLinkModel::init(kind, x.cols(), 6, 9);
        let pairs: Vec<(usize, usize, bool)> = split.train_edges.iter().take(12).map(|&(a, b)| (a as usize, b as usize, true)).chain([(0, 5, false), (7, 3, false)]).collect();
        let (_, gl, gh, ghb) = m.loss_grad(&x, &adj, &pairs);
        let mut analytic: Vec<f64> = gl.iter().flat_map(|l| l.tensors().concat()).collect();
        analytic.extend(&gh);
        analytic.push(ghb);
        let n = analytic.len();
        let eps = 1e-6;
        for k in (0..n).step_by(n / 40 + 1) {
            let loss_at = |m: &mut GnnLinkModel, delta: f64| {
                let mut seen = 0;
                for t in m.tensors_mut() {
                    if k < seen + t.len() {
                        t[k - seen] += delta;
                        break;
                    }
                    seen += t.len();
                }
                m.loss_grad(&x, &adj, &pairs).0
            };
            let plus = loss_at(&mut m, eps);
            let minus = loss_at(&mut m, -2.0 * eps);
            loss_at(&mut m, eps);
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (numeric - analytic[k]).abs() / analytic[k].abs().max(numeric.abs()).max(1e-8);
            assert!(err < 1e-5, "{kind} coord {k}: analytic {} numeric {numeric}", analytic[k]);
        }
    }

    #[test]
    fn sage_gradient_matches_finite_differences() {
        fd_check(GnnKind::Sage);
    }

    #[test]
    fn gat_gradient_matches_finite_differences() {
        fd_check(GnnKind::Gat);
    }

    #[test]
    fn gat_attention_rows_sum_to_one() {
        let (g, split) = small_world();
        let x = feature_matrix(&g).unwrap();
        let visible = EdgeIndex::new(g.companies.ids(), split.train_edges.iter());
        let adj = neighbor_lists(&g, &visible).unwrap();
        let m = GnnLinkModel::init(GnnKind::Gat, x.cols(), 6, 1);
        for tr in m.forward(&x, &adj) {
            for a in tr.alpha {
                assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_epochs_still_scores_and_training_is_deterministic() {
        let (g, split) = small_world();
        let cfg = LinkTrainConfig {
            epochs: 0,
            hidden: 8,
            ..LinkTrainConfig::default()
        };
        let m = train_link_model(GnnKind::Sage, &g, &split, &cfg).unwrap();
        assert!((0.0..=1.0).contains(&m.score(&g, 0, 1).unwrap()));
        let cfg = LinkTrainConfig { epochs: 20, ..cfg };
        let a = train_link_model(GnnKind::Gat, &g, &split, &cfg).unwrap();
        let b = train_link_model(GnnKind::Gat, &g, &split, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.epoch_losses.last() < a.epoch_losses.first());
    }

    #[test]
    fn scores_are_direction_sensitive() {
        let (g, split) = small_world();
        let cfg = LinkTrainConfig {
            epochs: 30,
            hidden: 8,
            ..LinkTrainConfig::default()
        };
        let m = train_link_model(GnnKind::Sage, &g, &split, &cfg).unwrap();
        let asym = split
            .train_edges
            .iter()
            .any(|&(a, b)| (m.score(&g, a, b).unwrap() - m.score(&g, b, a).unwrap()).abs() > 1e-9);
        assert!(asym);
        assert!("mlp".parse::<GnnKind>().is_err());
    }

    #[test]
    fn text_baseline_prompt_is_graph_blind_and_renders_none() {
        let (g, split) = small_world();
        let v = build_vocab(&g, &[]);
        let visible = EdgeIndex::new(g.companies.ids(), split.train_edges.iter());
        let t = *split.test_firms.iter().next().unwrap();
        let other = *split.train_firms.iter().next().unwrap();
        let p = lm_text_prompt(&g, &visible, &v, TaskKind::Srp, t, other, false).unwrap();
        assert!(!p.contains(&GSLOT));
        let text = v.decode(&p);
        assert!(text.contains("connections : none"), "{text}");
        assert!(lm_text_prompt(&g, &visible, &v, TaskKind::Ic, t, other, false).is_err());

        let lm = ToyLm::init(LmConfig { d_model: 8, n_heads: 2, d_ff: 16, n_layers: 1, ..LmConfig::new(v.len()) }, 3);
        let a = lm_text_baseline(&lm, &v, &g, &visible, TaskKind::Srp, &[(t, other), (t, other)], true).unwrap();
        assert_eq!(a[0], a[1]);
    }
}
