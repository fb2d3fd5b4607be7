//! Exit criteria. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use corprel::config::RunConfig;
use corprel::corpdata::{
    firm_split, partition_test_links, split_to_string, world_to_string, LabeledPair, MembershipRule, SplitSpec, SupplyGraph,
};
use corprel::evalkit::{EvalReport, EvalSplit};
use corprel::linalg::log_sum_exp;
use corprel::pipeline;
use corprel::selftest;
use corprel::synthgen::{generate_world, WorldConfig};
use corprel::toylm::{sequence_nll, LmConfig, MixedSequence, ToyLm, TokenId};
use corprel::trainer::{write_bundle, write_parts, Parts};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// 1, 9

fn gradient_fidelity() -> Outcome {
    let cfg = RunConfig::default();
    let t = Instant::now();
    let errs = match selftest::gradient_suite(&cfg, 10, 1e-5, 20, 11) {
        Ok(e) => e,
        Err(e) => return outcome(false, format!("error: {e}")),
    };
    let el = t.elapsed();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    outcome(
        errs.len() == 10 && worst < 1e-4 && el < Duration::from_secs(30),
        format!("max rel err {worst:.2e} over {} instances in {:.1}s", errs.len(), el.as_secs_f64()),
    )
}

fn metric_oracle() -> Outcome {
    let gap = selftest::metric_oracle(1000, 29);
    outcome(gap < 1e-12, format!("max deviation {gap:.1e}"))
}

// ---------------------------------------------------------------------------
// 3

fn check_split(graph: &SupplyGraph, split: &SplitSpec) -> Result<String, String> {
    let ids: BTreeSet<_> = graph.companies.ids().collect();
    if !split.train_firms.is_disjoint(&split.test_firms) {
        return Err("train and test firms overlap".into());
    }
    let union: BTreeSet<_> = split.train_firms.union(&split.test_firms).copied().collect();
    if union != ids {
        return Err("train ∪ test is not the firm set".into());
    }
    let expect_test = (graph.n_firms() as f64 * 0.1).round() as usize;
    if split.test_firms.len() != expect_test {
        return Err(format!("{} test firms, expected {expect_test}", split.test_firms.len()));
    }
    let train_edges: BTreeSet<_> = graph
        .edges()
        .iter()
        .copied()
        .filter(|&(a, b)| split.train_firms.contains(&a) && split.train_firms.contains(&b))
        .collect();
    if train_edges != split.train_edges {
        return Err("train edges are not exactly the train-train edges".into());
    }
    let (ind_pos, full_pos) = partition_test_links(graph, split);
    if ind_pos.len() + full_pos.len() + train_edges.len() != graph.n_edges() {
        return Err("edge partition does not cover every edge".into());
    }
    let check = |pairs: &[LabeledPair], positives: &[(u32, u32)], rule: MembershipRule<'_>, name: &str| -> Result<(), String> {
        let pos: BTreeSet<_> = pairs.iter().filter(|p| p.label).map(|p| p.pair).collect();
        let neg: Vec<_> = pairs.iter().filter(|p| !p.label).map(|p| p.pair).collect();
        if pos != positives.iter().copied().collect::<BTreeSet<_>>() {
            return Err(format!("{name}: positives differ from partitioned test links"));
        }
        if neg.len() != pos.len() {
            return Err(format!("{name}: {} positives vs {} negatives", pos.len(), neg.len()));
        }
        if neg.iter().copied().collect::<BTreeSet<_>>().len() != neg.len() {
            return Err(format!("{name}: duplicate negatives"));
        }
        for &(a, b) in pos.iter().chain(&neg) {
            if !rule.admits((a, b)) {
                return Err(format!("{name}: pair ({a},{b}) violates the membership rule"));
            }
        }
        if let Some(&(a, b)) = neg.iter().find(|&&(a, b)| graph.has_edge(a, b)) {
            return Err(format!("{name}: negative ({a},{b}) is a true edge"));
        }
        Ok(())
    };
    check(&split.inductive_pairs, &ind_pos, MembershipRule::ExactlyOneIn(&split.test_firms), "inductive")?;
    check(&split.fully_inductive_pairs, &full_pos, MembershipRule::BothIn(&split.test_firms), "fully-inductive")?;
    Ok(format!(
        "N={} |E|={} test={} ind={} full={}",
        graph.n_firms(),
        graph.n_edges(),
        split.test_firms.len(),
        split.inductive_pairs.len(),
        split.fully_inductive_pairs.len()
    ))
}

fn protocol_fidelity() -> Outcome {
    let t = Instant::now();
    let mut notes = Vec::new();
    let cfg = RunConfig::default();
    let worlds = [
        ("large", WorldConfig::large(cfg.seed_for(corprel::config::stream::WORLD))),
        ("default", cfg.world_config()),
    ];
    for (name, wc) in worlds {
        let (graph, _) = match generate_world(&wc) {
            Ok(w) => w,
            Err(e) => return outcome(false, format!("{name}: {e}")),
        };
        if name == "large" && (graph.n_firms() != 3211 || graph.n_edges() != 11635) {
            return outcome(false, format!("large world has {} firms, {} edges", graph.n_firms(), graph.n_edges()));
        }
        let split = match firm_split(&graph, 0.1, 7) {
            Ok(s) => s,
            Err(e) => return outcome(false, format!("{name}: {e}")),
        };
        match check_split(&graph, &split) {
            Ok(s) => notes.push(format!("{name} {s}")),
            Err(e) => return outcome(false, format!("{name}: {e}")),
        }
    }
    let el = t.elapsed();
    notes.push(format!("{:.2}s", el.as_secs_f64()));
    outcome(el < Duration::from_secs(5), notes.join("; "))
}

// ---------------------------------------------------------------------------
// 4

/// Log-probability of every position of `seq` from one uncached forward pass.
fn joint_log_prob(m: &ToyLm, seq: &[TokenId]) -> f64 {
    let tr = m.forward_trace(&m.embed_tokens(seq).unwrap()).unwrap();
    let logits = m.project_vocab(&tr.hidden);
    (1..seq.len())
        .map(|i| {
            let row = logits.row(i - 1);
            row[seq[i] as usize] - log_sum_exp(row)
        })
        .sum()
}

fn nll_oracle() -> Outcome {
    let cfg = LmConfig {
        vocab_size: 5,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        context: 16,
    };
    let mut worst: f64 = 0.0;
    let mut worst_decomp: f64 = 0.0;
    for seed in 0..4u64 {
        let m = ToyLm::init_scaled(cfg, seed, 0.5);
        for prompt in [vec![1u32], vec![1, 3, 0], vec![4, 2]] {
            let p = MixedSequence::from_tokens(&prompt);
            for len in 1..=2usize {
                // Every continuation of this length, enumerated.
                let all: Vec<Vec<TokenId>> = (0..5u32.pow(len as u32))
                    .map(|k| (0..len).map(|i| (k / 5u32.pow(i as u32)) % 5).collect())
                    .collect();
                let joints: Vec<f64> = all
                    .iter()
                    .map(|y| joint_log_prob(&m, &[prompt.as_slice(), y.as_slice()].concat()))
                    .collect();
                let norm = log_sum_exp(&joints);
                for (y, j) in all.iter().zip(&joints) {
                    let oracle = norm - j;
                    let got = sequence_nll(&m, &p, y).unwrap();
                    worst = worst.max((got - oracle).abs());
                    let mut parts = 0.0;
                    for i in 0..y.len() {
                        let ctx = MixedSequence::from_tokens(&[prompt.as_slice(), &y[..i]].concat());
                        parts += sequence_nll(&m, &ctx, &y[i..=i]).unwrap();
                    }
                    worst_decomp = worst_decomp.max((got - parts).abs());
                }
            }
        }
    }
    outcome(
        worst < 1e-10 && worst_decomp < 1e-10,
        format!("enumeration gap {worst:.1e}, per-token gap {worst_decomp:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// full pipeline

struct Run {
    dir: PathBuf,
    elapsed: Duration,
    retrieval: f64,
    pretrain_sums: BTreeMap<&'static str, String>,
    stage1_sums: BTreeMap<&'static str, String>,
    stage2_sums: BTreeMap<&'static str, String>,
    report: EvalReport,
}

/// gen → pretrain-gnn → pretrain-lm → stage1 → stage2 → eval, writing each
/// artifact under `dir`.
fn full_run(cfg: &RunConfig, dir: &Path) -> corprel::Result<Run> {
    fs::create_dir_all(dir)?;
    let t = Instant::now();
    let world = pipeline::generate(cfg)?;
    fs::write(dir.join("world.txt"), world_to_string(&world.graph, &world.competitors))?;
    fs::write(dir.join("split.txt"), split_to_string(&world.split))?;
    let gnn = pipeline::pretrain_gnn(cfg, &world)?;
    let gparts = Parts {
        textenc: Some(pipeline::text_encoder(cfg)),
        graphenc: Some(gnn.encoder.clone()),
        ..Parts::default()
    };
    write_parts(dir.join("gnn.ckpt"), &gparts)?;
    let (vocab, lm, _) = pipeline::pretrain_lm(cfg, &world)?;
    let lparts = Parts {
        lm: Some(lm.clone()),
        vocab: Some(vocab.clone()),
        ..Parts::default()
    };
    write_parts(dir.join("lm.ckpt"), &lparts)?;
    let mut pretrain_sums = gparts.checksums();
    pretrain_sums.extend(lparts.checksums());

    let mut s1 = pipeline::assemble(cfg, gnn.encoder, lm, vocab)?;
    pipeline::run_stage1(cfg, &world, &mut s1)?;
    write_bundle(dir.join("stage1.bundle"), &s1)?;
    let mut s2 = s1.clone();
    pipeline::run_stage2(cfg, &world, &mut s2)?;
    write_bundle(dir.join("stage2.bundle"), &s2)?;
    let gnns = pipeline::train_baselines(cfg, &world)?;
    let report = pipeline::run_matrix(cfg, &world, &[("model_stage1", &s1), ("model_stage2", &s2)], Some(&s1), &gnns)?;
    report.write(dir, "report")?;
    Ok(Run {
        dir: dir.to_path_buf(),
        elapsed: t.elapsed(),
        retrieval: gnn.retrieval,
        pretrain_sums,
        stage1_sums: s1.checksums(),
        stage2_sums: s2.checksums(),
        report,
    })
}

fn freeze_contract(run: &Run) -> Outcome {
    let frozen = ["textenc", "graphenc", "lm"];
    let mut bad = Vec::new();
    for name in frozen {
        let before = run.pretrain_sums.get(name);
        if before.is_none() || before != run.stage1_sums.get(name) || before != run.stage2_sums.get(name) {
            bad.push(name);
        }
    }
    let proj_moved = run.stage1_sums.get("projector") != run.stage2_sums.get("projector");
    let others_equal = run
        .stage1_sums
        .iter()
        .filter(|(k, _)| **k != "projector")
        .all(|(k, v)| run.stage2_sums.get(k) == Some(v));
    outcome(
        bad.is_empty() && proj_moved && others_equal,
        if bad.is_empty() {
            format!("frozen blocks unchanged; projector changed: {proj_moved}")
        } else {
            format!("changed: {bad:?}")
        },
    )
}

fn f(report: &EvalReport, system: &str, split: EvalSplit, sic: bool) -> f64 {
    report
        .find(system, split, Some(sic))
        .map(|r| r.counts.f_score())
        .unwrap_or(f64::NAN)
}

fn stage_ordering(run: &Run) -> Outcome {
    let s2 = f(&run.report, "model_stage2", EvalSplit::FullyInductive, false);
    let s1 = f(&run.report, "model_stage1", EvalSplit::FullyInductive, false);
    let ok = s2 >= s1 + 0.15 && s2 >= 0.75 && run.elapsed < Duration::from_secs(600);
    outcome(
        ok,
        format!("fully-inductive F stage I+II {s2:.4} vs stage I {s1:.4}; pipeline {:.0}s", run.elapsed.as_secs_f64()),
    )
}

fn sic_robustness(run: &Run) -> Outcome {
    let mut ok = true;
    let mut notes = Vec::new();
    for split in [EvalSplit::Inductive, EvalSplit::FullyInductive] {
        let with = f(&run.report, "model_stage2", split, true);
        let without = f(&run.report, "model_stage2", split, false);
        ok &= with >= without - 0.02;
        notes.push(format!("{split}: with {with:.4} without {without:.4}"));
    }
    outcome(ok, notes.join("; "))
}

fn zero_shot_transfer(run: &Run) -> Outcome {
    let s2 = f(&run.report, "model_stage2", EvalSplit::Competitor, false);
    let s1 = f(&run.report, "model_stage1", EvalSplit::Competitor, false);
    let text = f(&run.report, "lm_text", EvalSplit::Competitor, false);
    outcome(
        s2 >= s1 + 0.05 && s2 >= text + 0.05,
        format!("competitor F stage I+II {s2:.4}, stage I {s1:.4}, lm_text {text:.4}"),
    )
}

fn retrieval(run: &Run) -> Outcome {
    outcome(run.retrieval >= 0.9, format!("rank-1 accuracy {:.4}", run.retrieval))
}

const ARTIFACTS: [&str; 8] = [
    "world.txt",
    "split.txt",
    "gnn.ckpt",
    "lm.ckpt",
    "stage1.bundle",
    "stage2.bundle",
    "report.txt",
    "report.tsv",
];

fn determinism(a: &Run, b: &Run) -> Outcome {
    let differing: Vec<&str> = ARTIFACTS
        .iter()
        .copied()
        .filter(|name| match (fs::read(a.dir.join(name)), fs::read(b.dir.join(name))) {
            (Ok(x), Ok(y)) => x != y,
            _ => true,
        })
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts byte-identical", ARTIFACTS.len())
        } else {
            format!("differ: {differing:?}")
        },
    )
}

/// A reduced config for the repeated run: same steps, fewer epochs.
fn small_config() -> RunConfig {
    RunConfig::parse(
        "[world]\nn_firms = 60\nn_industries = 4\nmean_out_degree = 2.5\n\
         [lm]\nd_model = 32\nn_heads = 2\nd_ff = 64\nepochs = 1\n\
         [encoder]\nepochs = 5\n\
         [train]\nstage1_epochs = 1\nstage2_epochs = 1\nsrp_per_epoch = 16\n\
         [eval]\nbaseline_epochs = 5\ncompetitor_per_class = 10",
    )
    .expect("small config parses")
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };

    report("1 gradient fidelity", gradient_fidelity());
    report("3 protocol fidelity", protocol_fidelity());
    report("4 sequence NLL oracle", nll_oracle());
    report("9 metric oracle", metric_oracle());

    let tmp = tempfile::tempdir().expect("temp dir");
    match full_run(&RunConfig::default(), &tmp.path().join("default")) {
        Ok(run) => {
            print!("{}", run.report.to_table());
            report("2 freeze contract", freeze_contract(&run));
            report("5 stage ordering", stage_ordering(&run));
            report("6 SIC robustness", sic_robustness(&run));
            report("7 zero-shot transfer", zero_shot_transfer(&run));
            report("8 contrastive retrieval", retrieval(&run));
        }
        Err(e) => {
            for name in ["2 freeze contract", "5 stage ordering", "6 SIC robustness", "7 zero-shot transfer", "8 contrastive retrieval"] {
                report(name, outcome(false, format!("pipeline error: {e}")));
            }
        }
    }

    let cfg = small_config();
    let runs = (full_run(&cfg, &tmp.path().join("a")), full_run(&cfg, &tmp.path().join("b")));
    match runs {
        (Ok(a), Ok(b)) => report("10 determinism", determinism(&a, &b)),
        (Err(e), _) | (_, Err(e)) => report("10 determinism", outcome(false, format!("pipeline error: {e}"))),
    }

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
