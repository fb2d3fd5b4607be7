//! End-to-end steps from a [`RunConfig`]: world, encoders, alignment stages
//! and the evaluation matrix.

use std::collections::HashSet;

use crate::aligner::Projector;
use crate::baselines::{lm_text_baseline, train_link_model, GnnKind, GnnLinkModel, LinkTrainConfig};
use crate::config::{stream, RunConfig};
use crate::corpdata::{firm_split, CompetitorSet, EdgeIndex, LabeledPair, Pair, SplitSpec, SupplyGraph};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, Confusion, EvalReport, EvalSplit};
use crate::graphenc::{pretrain_contrastive, retrieval_accuracy, GraphEncoder};
use crate::synthgen::generate_world;
use crate::tasks::{
    build_cgm, build_comp, build_ic, build_srp, build_vocab, competitor_eval_pairs, lm_corpus, srp_training_pairs,
    yes_no_choices, TaskContext, TaskInstance, TaskKind,
};
use crate::textenc::TextEncoder;
use crate::toylm::{lm_pretrain, PretrainLog, ToyLm, Vocab};
use crate::trainer::{stage1_train, stage2_train, ModelBundle, Prepared, Stage, TrainLog};

/// Generated world with features attached and its firm split.
#[derive(Debug, Clone)]
pub struct World {
    pub graph: SupplyGraph,
    pub competitors: CompetitorSet,
    pub split: SplitSpec,
}

impl World {
    /// Edges a model may see: train edges over every firm.
    pub fn visible(&self) -> EdgeIndex {
        EdgeIndex::new(self.graph.companies.ids(), self.split.train_edges.iter())
    }
}

pub fn text_encoder(cfg: &RunConfig) -> TextEncoder {
    TextEncoder::new(cfg.encoder.feature_dim, cfg.seed_for(stream::TEXTENC))
}

pub fn generate(cfg: &RunConfig) -> Result<World> {
    let (graph, competitors) = generate_world(&cfg.world_config())?;
    let split = firm_split(&graph, cfg.world.test_fraction, cfg.seed_for(stream::SPLIT))?;
    attach(cfg, graph, competitors, split)
}

/// Featurizes a loaded world and checks the split belongs to it.
pub fn attach(cfg: &RunConfig, mut graph: SupplyGraph, competitors: CompetitorSet, split: SplitSpec) -> Result<World> {
    text_encoder(cfg).featurize(&mut graph)?;
    let n = split.train_firms.len() + split.test_firms.len();
    if n != graph.n_firms() || split.train_firms.iter().chain(&split.test_firms).any(|&id| !graph.companies.contains(id)) {
        return Err(Error::integrity("split does not partition the world's firms"));
    }
    Ok(World {
        graph,
        competitors,
        split,
    })
}

#[derive(Debug, Clone)]
pub struct GnnOutcome {
    pub encoder: GraphEncoder,
    pub epoch_losses: Vec<f64>,
    /// Rank-1 graph-to-text retrieval accuracy on train firms.
    pub retrieval: f64,
}

pub fn pretrain_gnn(cfg: &RunConfig, world: &World) -> Result<GnnOutcome> {
    let ccfg = cfg.contrastive_config();
    let encoder = GraphEncoder::init(cfg.encoder.feature_dim, cfg.encoder.graph_dim, rng_seed(cfg, stream::GRAPHENC, 1));
    let visible = world.visible();
    let firms: Vec<_> = world.split.train_firms.iter().copied().collect();
    let outcome = pretrain_contrastive(&world.graph, &visible, &firms, encoder, &ccfg)?;
    let retrieval = retrieval_accuracy(&outcome, &world.graph, &visible, &firms, ccfg.neighbor_cap, ccfg.seed)?;
    Ok(GnnOutcome {
        encoder: outcome.encoder,
        epoch_losses: outcome.epoch_losses,
        retrieval,
    })
}

fn rng_seed(cfg: &RunConfig, stream: u64, sub: u64) -> u64 {
    crate::rng::derive(cfg.seed_for(stream), sub)
}

pub fn pretrain_lm(cfg: &RunConfig, world: &World) -> Result<(Vocab, ToyLm, PretrainLog)> {
    let vocab = build_vocab(&world.graph, &[]);
    let corpus = lm_corpus(&world.graph, &vocab, &cfg.corpus_config())?;
    let model = ToyLm::init(cfg.lm_config(vocab.len()), cfg.seed_for(stream::LM_INIT));
    let (lm, log) = lm_pretrain(model, &corpus, &cfg.pretrain_config())?;
    Ok((vocab, lm, log))
}

pub fn assemble(cfg: &RunConfig, graphenc: GraphEncoder, lm: ToyLm, vocab: Vocab) -> Result<ModelBundle> {
    let projector = Projector::init(graphenc.dim(), lm.config.d_model, cfg.seed_for(stream::PROJECTOR));
    ModelBundle::new(text_encoder(cfg), graphenc, projector, lm, vocab, cfg.precision()?)
}

fn context<'a>(cfg: &RunConfig, world: &'a World, visible: &'a EdgeIndex, vocab: &'a Vocab) -> TaskContext<'a> {
    TaskContext {
        graph: &world.graph,
        visible,
        vocab,
        neighbor_cap: cfg.encoder.neighbor_cap,
        seed: cfg.seed_for(stream::TASKS),
    }
}

/// Graph-matching instances for every train firm with at least one visible neighbor.
pub fn stage1_instances(cfg: &RunConfig, world: &World, vocab: &Vocab) -> Result<Vec<TaskInstance>> {
    let visible = world.visible();
    let ctx = context(cfg, world, &visible, vocab);
    let mut out = Vec::new();
    for &id in &world.split.train_firms {
        match build_cgm(&ctx, id) {
            Ok(i) => out.push(i),
            Err(Error::Unmatchable) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// IC instances for every train firm and SRP instances for the balanced
/// training pairs, each pair once without and once with SIC text.
pub fn stage2_instances(cfg: &RunConfig, world: &World, vocab: &Vocab) -> Result<(Vec<TaskInstance>, Vec<TaskInstance>)> {
    let visible = world.visible();
    let ctx = context(cfg, world, &visible, vocab);
    let ic = world
        .split
        .train_firms
        .iter()
        .map(|&id| build_ic(&ctx, id))
        .collect::<Result<Vec<_>>>()?;
    let pairs = srp_training_pairs(&world.graph, &world.split, cfg.seed_for(stream::STAGE2))?;
    let mut srp = Vec::with_capacity(2 * pairs.len());
    for p in &pairs {
        for with_sic in [false, true] {
            srp.push(build_srp(&ctx, p.pair.0, p.pair.1, p.label, with_sic)?);
        }
    }
    Ok((ic, srp))
}

pub fn prepare_all(bundle: &ModelBundle, cfg: &RunConfig, world: &World, instances: &[TaskInstance]) -> Result<Vec<Prepared>> {
    let visible = world.visible();
    let ctx = context(cfg, world, &visible, &bundle.vocab);
    instances.iter().map(|i| bundle.prepare(&ctx, i)).collect()
}

pub fn run_stage1(cfg: &RunConfig, world: &World, bundle: &mut ModelBundle) -> Result<TrainLog> {
    let inst = stage1_instances(cfg, world, &bundle.vocab)?;
    let prepared = prepare_all(bundle, cfg, world, &inst)?;
    stage1_train(bundle, &prepared, &cfg.stage_config(1))
}

pub fn run_stage2(cfg: &RunConfig, world: &World, bundle: &mut ModelBundle) -> Result<TrainLog> {
    let (ic, srp) = stage2_instances(cfg, world, &bundle.vocab)?;
    let ic = prepare_all(bundle, cfg, world, &ic)?;
    let srp = prepare_all(bundle, cfg, world, &srp)?;
    stage2_train(bundle, &ic, &srp, &cfg.stage_config(2))
}

/// Zero-shot competitor pairs, disjoint from every SRP training pair.
pub fn competitor_pairs(cfg: &RunConfig, world: &World) -> Result<Vec<LabeledPair>> {
    let train = srp_training_pairs(&world.graph, &world.split, cfg.seed_for(stream::STAGE2))?;
    let exclude: HashSet<Pair> = train.iter().map(|p| p.pair).collect();
    Ok(competitor_eval_pairs(
        &world.graph,
        &world.competitors,
        cfg.eval.competitor_per_class,
        &exclude,
        cfg.seed_for(stream::EVAL),
    ))
}

/// Yes/no answer of an aligned bundle for one pair question.
pub fn answer(bundle: &ModelBundle, cfg: &RunConfig, world: &World, kind: TaskKind, pair: Pair, with_sic: bool) -> Result<(bool, Vec<f64>)> {
    let visible = world.visible();
    let ctx = context(cfg, world, &visible, &bundle.vocab);
    let inst = match kind {
        TaskKind::Srp => build_srp(&ctx, pair.0, pair.1, false, with_sic)?,
        TaskKind::Comp => build_comp(&ctx, &world.competitors, pair.0, pair.1, with_sic)?,
        other => return Err(Error::arg(format!("yes/no answers exist for srp and comp, not {other}"))),
    };
    let p = bundle.prepare(&ctx, &inst)?;
    let s = bundle.score(&p, &yes_no_choices(&bundle.vocab))?;
    Ok((s.best == 0, s.nlls))
}

fn bundle_confusion(bundle: &ModelBundle, cfg: &RunConfig, world: &World, kind: TaskKind, pairs: &[LabeledPair], with_sic: bool) -> Result<Confusion> {
    evaluate(pairs, |p| answer(bundle, cfg, world, kind, p, with_sic).map(|a| a.0))
}

pub fn train_baselines(cfg: &RunConfig, world: &World) -> Result<Vec<GnnLinkModel>> {
    [GnnKind::Gat, GnnKind::Sage]
        .into_iter()
        .map(|k| {
            let lcfg = LinkTrainConfig {
                epochs: cfg.eval.baseline_epochs,
                lr: cfg.eval.baseline_lr,
                hidden: cfg.eval.baseline_hidden,
                seed: cfg.seed_for(stream::BASELINE),
            };
            train_link_model(k, &world.graph, &world.split, &lcfg)
        })
        .collect()
}

/// Every system on both SRP splits, and prompt-driven systems also on the
/// competitor set, each with and without SIC text.
pub fn run_matrix(
    cfg: &RunConfig,
    world: &World,
    aligned: &[(&str, &ModelBundle)],
    text_lm: Option<&ModelBundle>,
    gnns: &[GnnLinkModel],
) -> Result<EvalReport> {
    let mut report = EvalReport::new(cfg.seed, cfg.eval.timestamp);
    let splits = [
        (EvalSplit::Inductive, &world.split.inductive_pairs),
        (EvalSplit::FullyInductive, &world.split.fully_inductive_pairs),
    ];
    let comp = competitor_pairs(cfg, world)?;
    for m in gnns {
        for (split, pairs) in splits {
            let c = evaluate(pairs, |(a, b)| m.predict(&world.graph, a, b))?;
            report.push(&m.kind.to_string(), "srp", split, None, c);
        }
    }
    for &(name, bundle) in aligned {
        if bundle.stage < Stage::One {
            return Err(Error::state(format!("system `{name}` has not been through alignment training")));
        }
        for with_sic in [false, true] {
            for (split, pairs) in splits {
                let c = bundle_confusion(bundle, cfg, world, TaskKind::Srp, pairs, with_sic)?;
                report.push(name, "srp", split, Some(with_sic), c);
            }
            let c = bundle_confusion(bundle, cfg, world, TaskKind::Comp, &comp, with_sic)?;
            report.push(name, "comp", EvalSplit::Competitor, Some(with_sic), c);
        }
    }
    if let Some(b) = text_lm {
        let visible = world.visible();
        for with_sic in [false, true] {
            for (split, pairs, kind, task) in [
                (EvalSplit::Inductive, &world.split.inductive_pairs, TaskKind::Srp, "srp"),
                (EvalSplit::FullyInductive, &world.split.fully_inductive_pairs, TaskKind::Srp, "srp"),
                (EvalSplit::Competitor, &comp, TaskKind::Comp, "comp"),
            ] {
                let qs: Vec<Pair> = pairs.iter().map(|p| p.pair).collect();
                let scores = lm_text_baseline(&b.lm, &b.vocab, &world.graph, &visible, kind, &qs, with_sic)?;
                let mut it = scores.iter();
                let c = evaluate(pairs, |_| Ok(it.next().expect("one score per pair").best == 0))?;
                report.push("lm_text", task, split, Some(with_sic), c);
            }
        }
    }
    Ok(report)
}
