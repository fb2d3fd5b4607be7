use corprel::config::RunConfig;
use corprel::corpdata::{load_world, read_split, write_split, write_world};
use corprel::pipeline;
use corprel::trainer::{read_bundle, read_parts, write_bundle, write_parts, Parts, Stage};
use corprel::Error;

fn small() -> RunConfig {
    RunConfig::parse(
        "[world]\nn_firms = 40\nn_industries = 4\nmean_out_degree = 2.0\n\
         [lm]\nd_model = 16\nn_heads = 2\nd_ff = 32\nepochs = 1\n\
         [encoder]\nfeature_dim = 32\ngraph_dim = 8\nepochs = 3\n\
         [train]\nstage1_epochs = 1\nstage2_epochs = 1\nsrp_per_epoch = 8",
    )
    .unwrap()
}

#[test]
fn world_and_split_survive_a_file_round_trip() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let world = pipeline::generate(&cfg).unwrap();
    write_world(dir.path().join("w.txt"), &world.graph, &world.competitors).unwrap();
    write_split(dir.path().join("s.txt"), &world.split).unwrap();
    let (graph, competitors) = load_world(dir.path().join("w.txt")).unwrap();
    let split = read_split(dir.path().join("s.txt")).unwrap();
    assert_eq!(split, world.split);
    assert_eq!(competitors, world.competitors);
    let reloaded = pipeline::attach(&cfg, graph, competitors, split).unwrap();
    assert_eq!(reloaded.graph, world.graph);
}

#[test]
fn split_from_another_world_is_rejected() {
    let cfg = small();
    let world = pipeline::generate(&cfg).unwrap();
    let other = pipeline::generate(&RunConfig::parse("[world]\nn_firms = 30\nn_industries = 4\nmean_out_degree = 2.0").unwrap()).unwrap();
    let err = pipeline::attach(&cfg, world.graph, world.competitors, other.split).unwrap_err();
    assert!(matches!(err, Error::Integrity(_)));
}

#[test]
fn bundles_round_trip_and_corruption_is_detected() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let world = pipeline::generate(&cfg).unwrap();
    let gnn = pipeline::pretrain_gnn(&cfg, &world).unwrap();
    let (vocab, lm, _) = pipeline::pretrain_lm(&cfg, &world).unwrap();
    let parts = Parts {
        lm: Some(lm.clone()),
        vocab: Some(vocab.clone()),
        ..Parts::default()
    };
    write_parts(dir.path().join("lm.ckpt"), &parts).unwrap();
    assert_eq!(read_parts(dir.path().join("lm.ckpt")).unwrap().checksums(), parts.checksums());

    let mut bundle = pipeline::assemble(&cfg, gnn.encoder, lm, vocab).unwrap();
    // Stage II needs stage I first.
    assert!(matches!(pipeline::run_stage2(&cfg, &world, &mut bundle.clone()), Err(Error::State(_))));
    pipeline::run_stage1(&cfg, &world, &mut bundle).unwrap();
    assert_eq!(bundle.stage, Stage::One);
    let path = dir.path().join("s1.bundle");
    write_bundle(&path, &bundle).unwrap();
    let back = read_bundle(&path).unwrap();
    assert_eq!(back.checksums(), bundle.checksums());
    assert_eq!(back.stage, Stage::One);

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(read_bundle(&path), Err(Error::Checkpoint(_))));
}
