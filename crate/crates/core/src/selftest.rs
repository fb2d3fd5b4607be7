//! Checks runnable without trained artifacts: projector gradients against
//! finite differences, and metric formulas against an independent oracle.

use rand::Rng as _;

use crate::aligner::Projector;
use crate::config::{stream, RunConfig};
use crate::error::Result;
use crate::evalkit::Confusion;
use crate::graphenc::GraphEncoder;
use crate::pipeline::{generate, text_encoder};
use crate::rng;
use crate::tasks::{build_srp, build_vocab, TaskContext};
use crate::toylm::ToyLm;
use crate::trainer::{grad_check, ModelBundle, Precision};

/// Max relative error of [`grad_check`] on each of `n` random SRP instances
/// from the configured world, using a double-precision bundle with freshly
/// initialized encoder and LM at the configured sizes.
pub fn gradient_suite(cfg: &RunConfig, n: usize, epsilon: f64, coords: usize, seed: u64) -> Result<Vec<f64>> {
    let world = generate(cfg)?;
    let vocab = build_vocab(&world.graph, &[]);
    let mut g = GraphEncoder::init(cfg.encoder.feature_dim, cfg.encoder.graph_dim, cfg.seed_for(stream::GRAPHENC));
    g.freeze();
    let mut lm = ToyLm::init_scaled(cfg.lm_config(vocab.len()), cfg.seed_for(stream::LM_INIT), 0.3);
    lm.freeze();
    let projector = Projector::init(g.dim(), lm.config.d_model, rng::derive(seed, 1));
    let bundle = ModelBundle::new(text_encoder(cfg), g, projector, lm, vocab, Precision::F64)?;
    let visible = world.visible();
    let ctx = TaskContext {
        graph: &world.graph,
        visible: &visible,
        vocab: &bundle.vocab,
        neighbor_cap: cfg.encoder.neighbor_cap,
        seed: cfg.seed_for(stream::TASKS),
    };
    let pool: Vec<_> = world.split.inductive_pairs.iter().chain(&world.split.fully_inductive_pairs).collect();
    let mut r = rng::seeded(rng::derive(seed, 2));
    (0..n)
        .map(|k| {
            let p = pool[r.gen_range(0..pool.len())];
            let inst = build_srp(&ctx, p.pair.0, p.pair.1, p.label, k % 2 == 1)?;
            let prepared = bundle.prepare(&ctx, &inst)?;
            grad_check(&bundle, &prepared, epsilon, coords, rng::derive(seed, 3 + k as u64))
        })
        .collect()
}

/// Largest gap between [`Confusion`] metrics and a separately written
/// formula over `n` random confusion matrices.
pub fn metric_oracle(n: usize, seed: u64) -> f64 {
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let c = Confusion {
            tp: r.gen_range(0..500),
            fp: r.gen_range(0..500),
            tn: r.gen_range(0..500),
            fn_: r.gen_range(0..500),
        };
        let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
        let n_all = tp + fp + tn + fn_;
        let acc = if n_all == 0.0 { 0.0 } else { (tp + tn) / n_all };
        // F1 as 2TP / (2TP + FP + FN), never via precision and recall.
        let denom = 2.0 * tp + fp + fn_;
        let f = if denom == 0.0 { 0.0 } else { 2.0 * tp / denom };
        worst = worst.max((c.f_score() - f).abs()).max((c.accuracy() - acc).abs());
    }
    worst
}
