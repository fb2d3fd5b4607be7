use super::*;
use crate::corpdata::{firm_split, EdgeIndex, SplitSpec, SupplyGraph};
use crate::graphenc::GraphEncoder;
use crate::synthgen::{generate_world, WorldConfig};
use crate::tasks::{build_cgm, build_ic, build_srp, build_vocab};
use crate::textenc::TextEncoder;
use crate::toylm::{LmConfig, ToyLm};

struct Fixture {
    graph: SupplyGraph,
    split: SplitSpec,
    visible: EdgeIndex,
}

fn fixture() -> Fixture {
    let (mut graph, _) = generate_world(&WorldConfig::new(24, 3, 2.0, 5)).unwrap();
    TextEncoder::new(12, 2).featurize(&mut graph).unwrap();
    let split = firm_split(&graph, 0.25, 1).unwrap();
    let visible = EdgeIndex::new(graph.companies.ids(), split.train_edges.iter());
    Fixture { graph, split, visible }
}

fn bundle(f: &Fixture, precision: Precision, n_layers: usize) -> ModelBundle {
    let vocab = build_vocab(&f.graph, &[]);
    let mut g = GraphEncoder::init(12, 6, 3);
    g.freeze();
    let cfg = LmConfig {
        d_model: 8,
        n_layers,
        n_heads: 2,
        d_ff: 16,
        ..LmConfig::new(vocab.len())
    };
    let mut lm = ToyLm::init_scaled(cfg, 4, 0.3);
    lm.freeze();
    let p = Projector::init(6, 8, 5);
    ModelBundle::new(TextEncoder::new(12, 2), g, p, lm, vocab, precision).unwrap()
}

fn ctx<'a>(f: &'a Fixture, b: &'a ModelBundle) -> TaskContext<'a> {
    TaskContext {
        graph: &f.graph,
        visible: &f.visible,
        vocab: &b.vocab,
        neighbor_cap: 4,
        seed: 0,
    }
}

fn cgm(f: &Fixture, b: &ModelBundle) -> Vec<Prepared> {
    let c = ctx(f, b);
    f.split
        .train_firms
        .iter()
        .filter_map(|&id| build_cgm(&c, id).ok())
        .take(8)
        .map(|i| b.prepare(&c, &i).unwrap())
        .collect()
}

fn srp(f: &Fixture, b: &ModelBundle, n: usize) -> Vec<Prepared> {
    let c = ctx(f, b);
    f.split
        .train_edges
        .iter()
        .take(n)
        .enumerate()
        .map(|(k, &(a, z))| {
            let (a, z, label) = if k % 2 == 0 { (a, z, true) } else { (z, a, f.graph.has_edge(z, a)) };
            b.prepare(&c, &build_srp(&c, a, z, label, k % 3 == 0).unwrap()).unwrap()
        })
        .collect()
}

fn ic(f: &Fixture, b: &ModelBundle) -> Vec<Prepared> {
    let c = ctx(f, b);
    f.split
        .train_firms
        .iter()
        .take(6)
        .map(|&id| b.prepare(&c, &build_ic(&c, id).unwrap()).unwrap())
        .collect()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        ..TrainConfig::stage1()
    }
}

#[test]
fn zero_learning_rate_leaves_projector_unchanged() {
    let f = fixture();
    let mut b = bundle(&f, Precision::F32, 1);
    let before = b.projector.clone();
    let inst = cgm(&f, &b);
    stage1_train(&mut b, &inst, &TrainConfig { lr: 0.0, ..quick(2) }).unwrap();
    assert_eq!(b.projector, before);
    assert_eq!(b.stage, Stage::One);
}

#[test]
fn same_seed_gives_identical_projector() {
    let f = fixture();
    let mut a = bundle(&f, Precision::F32, 1);
    let mut c = a.clone();
    let inst = cgm(&f, &a);
    stage1_train(&mut a, &inst, &quick(2)).unwrap();
    stage1_train(&mut c, &inst, &quick(2)).unwrap();
    assert_eq!(a.projector, c.projector);
    assert_eq!(a.to_bytes(), c.to_bytes());
}

#[test]
fn stage_one_rejects_other_tasks() {
    let f = fixture();
    let mut b = bundle(&f, Precision::F32, 1);
    let mut inst = cgm(&f, &b);
    inst.extend(srp(&f, &b, 1));
    assert!(matches!(stage1_train(&mut b, &inst, &quick(1)), Err(Error::Argument(_))));
}

#[test]
fn stage_two_needs_stage_one() {
    let f = fixture();
    let mut b = bundle(&f, Precision::F32, 1);
    let (i, s) = (ic(&f, &b), srp(&f, &b, 4));
    assert!(matches!(stage2_train(&mut b, &i, &s, &quick(1)), Err(Error::State(_))));
    b.stage = Stage::One;
    assert!(matches!(stage2_train(&mut b, &s, &i, &quick(1)), Err(Error::Argument(_))));
}

#[test]
fn only_the_projector_changes() {
    let f = fixture();
    let mut b = bundle(&f, Precision::F32, 1);
    let before = b.checksums();
    let inst = cgm(&f, &b);
    stage1_train(&mut b, &inst, &quick(2)).unwrap();
    let (i, s) = (ic(&f, &b), srp(&f, &b, 8));
    stage2_train(&mut b, &i, &s, &quick(2)).unwrap();
    let after = b.checksums();
    assert_eq!(before.keys().copied().collect::<Vec<&str>>(), vec!["graphenc", "lm", "projector", "textenc", "vocab"]);
    for (k, v) in &before {
        assert_eq!(*k == "projector", after[k] != *v, "block {k}");
    }
    assert_eq!(b.stage, Stage::Two);
}

#[test]
fn empty_srp_set_trains_ic_alone() {
    let f = fixture();
    let mut b = bundle(&f, Precision::F32, 1);
    b.stage = Stage::One;
    let i = ic(&f, &b);
    let before = b.projector.clone();
    let log = stage2_train(&mut b, &i, &[], &quick(2)).unwrap();
    assert_eq!(log.epoch_losses.len(), 2);
    assert_ne!(b.projector, before);
}

#[test]
fn stage_one_loss_trends_down() {
    let f = fixture();
    let mut b = bundle(&f, Precision::F32, 1);
    let inst = cgm(&f, &b);
    let log = stage1_train(&mut b, &inst, &TrainConfig { lr: 0.05, ..quick(8) }).unwrap();
    let l = &log.epoch_losses;
    assert!(l.windows(2).all(|w| w[1] <= w[0] * 1.05), "{l:?}");
    assert!(l.last() < l.first());
}

#[test]
fn srp_subsampling_limits_batches() {
    let f = fixture();
    let mut a = bundle(&f, Precision::F32, 1);
    a.stage = Stage::One;
    let mut b = a.clone();
    let s = srp(&f, &a, 8);
    stage2_train(&mut a, &[], &s, &TrainConfig { srp_per_epoch: 4, ..quick(1) }).unwrap();
    stage2_train(&mut b, &[], &s[..4], &TrainConfig { srp_per_epoch: 0, ..quick(1) }).unwrap();
    // Same batch count, different draws: both moved, by different amounts.
    assert_ne!(a.projector, b.projector);
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let f = fixture();
    let b = bundle(&f, Precision::F64, 2);
    for p in srp(&f, &b, 3).iter().chain(&cgm(&f, &b)[..2]) {
        let err = grad_check(&b, p, 1e-5, 24, 9).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn grad_check_preconditions() {
    let f = fixture();
    let b32 = bundle(&f, Precision::F32, 1);
    let p = &srp(&f, &b32, 1)[0];
    assert!(matches!(grad_check(&b32, p, 1e-5, 4, 0), Err(Error::State(_))));
    let b64 = bundle(&f, Precision::F64, 1);
    assert!(matches!(grad_check(&b64, p, 0.0, 4, 0), Err(Error::Argument(_))));
}

#[test]
fn bias_gradient_on_blockless_model() {
    // No transformer blocks: logits are LN(x)·Eᵀ, so the bias gradient is a
    // smooth closed form and central differences agree to near round-off.
    let f = fixture();
    let b = bundle(&f, Precision::F64, 0);
    let p = &srp(&f, &b, 1)[0];
    let mut analytic = b.projector.zeros_like();
    instance_grad(&b, p, &mut analytic).unwrap();
    let eps = 1e-5;
    for k in 0..b.projector.b.len() {
        let mut proj = b.projector.clone();
        proj.b[k] += eps;
        let plus = sequence_nll(&b.lm, &prompt_with(&proj, p).unwrap(), &p.target).unwrap();
        proj.b[k] -= 2.0 * eps;
        let minus = sequence_nll(&b.lm, &prompt_with(&proj, p).unwrap(), &p.target).unwrap();
        let numeric = (plus - minus) / (2.0 * eps);
        assert!((numeric - analytic.b[k]).abs() < 1e-8, "coord {k}: {} vs {numeric}", analytic.b[k]);
    }
}

#[test]
fn bundle_round_trips_in_both_precisions() {
    let f = fixture();
    for precision in [Precision::F32, Precision::F64] {
        let mut b = bundle(&f, precision, 1);
        let inst = cgm(&f, &b);
        stage1_train(&mut b, &inst, &quick(1)).unwrap();
        let bytes = b.to_bytes();
        let back = ModelBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.checksums(), b.checksums());
        assert_eq!(back.to_bytes(), bytes);
    }
}

#[test]
fn corrupted_bundle_is_rejected() {
    let f = fixture();
    let b = bundle(&f, Precision::F32, 1);
    let mut bytes = b.to_bytes();
    let n = bytes.len();
    bytes[n - 40] ^= 0x55;
    assert!(matches!(ModelBundle::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    assert!(matches!(ModelBundle::from_bytes(&bytes[..n / 2]), Err(Error::Checkpoint(_))));
    assert!(matches!(ModelBundle::from_bytes(b"NOTABNDL"), Err(Error::Checkpoint(_))));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.bin");
    write_bundle(&path, &b).unwrap();
    assert_eq!(read_bundle(&path).unwrap(), b);
}

#[test]
fn unfrozen_parts_are_refused() {
    let f = fixture();
    let b = bundle(&f, Precision::F32, 1);
    let g = GraphEncoder::init(12, 6, 3);
    let r = ModelBundle::new(b.textenc, g, b.projector.clone(), b.lm.clone(), b.vocab.clone(), Precision::F32);
    assert!(matches!(r, Err(Error::State(_))));
}
