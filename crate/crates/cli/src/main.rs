use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use corprel::config::RunConfig;
use corprel::corpdata::{load_world, read_split, write_split, write_world};
use corprel::evalkit::EvalReport;
use corprel::pipeline::{self, World};
use corprel::selftest;
use corprel::tasks::TaskKind;
use corprel::trainer::{read_bundle, read_parts, write_bundle, write_parts, ModelBundle, Parts, Stage};
use corprel::Error;

/// Environment variable naming the default config file.
const CONFIG_ENV: &str = "CORPREL_CONFIG";

#[derive(Parser)]
#[command(name = "corprel", version, about = "Graph-token alignment of a frozen toy LM for supply-relation prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run config; falls back to $CORPREL_CONFIG, then built-in defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Directory holding every artifact of a run.
    #[arg(long, short, default_value = "run")]
    work: PathBuf,
    /// Overrides the config's base seed (all module seeds derive from it).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic world and its firm split.
    Gen {
        #[command(flatten)]
        common: Common,
        /// World file path (default: <work>/world.txt).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pretrain the LM on the world corpus and freeze it.
    PretrainLm(Common),
    /// Contrastively pretrain the graph encoder and freeze it.
    PretrainGnn(Common),
    /// Graph-matching alignment of the projector.
    Stage1(Common),
    /// Industry and supply-relation alignment of the projector.
    Stage2(Common),
    /// Evaluate every system and write the report.
    Eval(Common),
    /// Answer one pair question with the stage II bundle.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: u32,
        #[arg(long)]
        b: u32,
        /// srp or comp.
        #[arg(long, default_value = "srp")]
        task: String,
        /// Append each firm's industry to its description.
        #[arg(long)]
        sic: bool,
        /// Bundle to use (default: <work>/stage2.bundle).
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
    /// Print the last evaluation report.
    Report(Common),
    /// Gradient check and metric oracle, no artifacts needed.
    Selftest(Common),
}

struct Paths {
    work: PathBuf,
}

impl Paths {
    fn file(&self, name: &str) -> PathBuf {
        self.work.join(name)
    }
}

fn load_config(c: &Common) -> corprel::Result<RunConfig> {
    let path = c.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn need(path: &Path, step: &str) -> corprel::Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::State(format!("{} is missing; run `corprel {step}` first", path.display())))
    }
}

fn load_world_files(cfg: &RunConfig, p: &Paths) -> corprel::Result<World> {
    let (w, s) = (p.file("world.txt"), p.file("split.txt"));
    need(&w, "gen")?;
    need(&s, "gen")?;
    let (graph, competitors) = load_world(&w)?;
    pipeline::attach(cfg, graph, competitors, read_split(&s)?)
}

fn load_stage(p: &Paths, name: &str, step: &str, stage: Stage) -> corprel::Result<ModelBundle> {
    let path = p.file(name);
    need(&path, step)?;
    let b = read_bundle(&path)?;
    if b.stage < stage {
        return Err(Error::State(format!("{} has not completed {step}", path.display())));
    }
    Ok(b)
}

fn run(cmd: Command) -> corprel::Result<()> {
    let common = match &cmd {
        Command::Gen { common, .. } | Command::Predict { common, .. } => common.clone(),
        Command::PretrainLm(c)
        | Command::PretrainGnn(c)
        | Command::Stage1(c)
        | Command::Stage2(c)
        | Command::Eval(c)
        | Command::Report(c)
        | Command::Selftest(c) => c.clone(),
    };
    let cfg = load_config(&common)?;
    let p = Paths { work: common.work.clone() };
    fs::create_dir_all(&p.work)?;
    match cmd {
        Command::Gen { out, .. } => {
            let world = pipeline::generate(&cfg)?;
            let out = out.unwrap_or_else(|| p.file("world.txt"));
            write_world(&out, &world.graph, &world.competitors)?;
            write_split(p.file("split.txt"), &world.split)?;
            fs::write(p.file("config.toml"), cfg.to_toml())?;
            println!(
                "world: {} firms, {} supply links, {} competitor pairs -> {}",
                world.graph.n_firms(),
                world.graph.n_edges(),
                world.competitors.len(),
                out.display()
            );
            println!(
                "split: {} train / {} test firms; {} inductive, {} fully-inductive eval pairs",
                world.split.train_firms.len(),
                world.split.test_firms.len(),
                world.split.inductive_pairs.len(),
                world.split.fully_inductive_pairs.len()
            );
        }
        Command::PretrainGnn(_) => {
            let world = load_world_files(&cfg, &p)?;
            let out = pipeline::pretrain_gnn(&cfg, &world)?;
            let parts = Parts {
                textenc: Some(pipeline::text_encoder(&cfg)),
                graphenc: Some(out.encoder),
                ..Parts::default()
            };
            write_parts(p.file("gnn.ckpt"), &parts)?;
            println!(
                "graph encoder: final InfoNCE {:.4}, train retrieval@1 {:.3}",
                out.epoch_losses.last().copied().unwrap_or(f64::NAN),
                out.retrieval
            );
        }
        Command::PretrainLm(_) => {
            let world = load_world_files(&cfg, &p)?;
            let (vocab, lm, log) = pipeline::pretrain_lm(&cfg, &world)?;
            println!(
                "lm: vocab {}, {} params, loss {:.3} -> {:.3}",
                vocab.len(),
                lm.n_params(),
                log.initial_loss,
                log.epoch_losses.last().copied().unwrap_or(log.initial_loss)
            );
            let parts = Parts {
                lm: Some(lm),
                vocab: Some(vocab),
                ..Parts::default()
            };
            write_parts(p.file("lm.ckpt"), &parts)?;
        }
        Command::Stage1(_) => {
            let world = load_world_files(&cfg, &p)?;
            let (g, l) = (p.file("gnn.ckpt"), p.file("lm.ckpt"));
            need(&g, "pretrain-gnn")?;
            need(&l, "pretrain-lm")?;
            let (g, l) = (read_parts(g)?, read_parts(l)?);
            let missing = || Error::Checkpoint("pretraining checkpoint lacks a block".into());
            let mut bundle = pipeline::assemble(
                &cfg,
                g.graphenc.ok_or_else(missing)?,
                l.lm.ok_or_else(missing)?,
                l.vocab.ok_or_else(missing)?,
            )?;
            let log = pipeline::run_stage1(&cfg, &world, &mut bundle)?;
            write_bundle(p.file("stage1.bundle"), &bundle)?;
            print_losses("stage1", &log.epoch_losses);
        }
        Command::Stage2(_) => {
            let world = load_world_files(&cfg, &p)?;
            let mut bundle = load_stage(&p, "stage1.bundle", "stage1", Stage::One)?;
            let log = pipeline::run_stage2(&cfg, &world, &mut bundle)?;
            write_bundle(p.file("stage2.bundle"), &bundle)?;
            print_losses("stage2", &log.epoch_losses);
        }
        Command::Eval(_) => {
            let world = load_world_files(&cfg, &p)?;
            let s1 = load_stage(&p, "stage1.bundle", "stage1", Stage::One)?;
            let s2 = load_stage(&p, "stage2.bundle", "stage2", Stage::Two)?;
            let gnns = pipeline::train_baselines(&cfg, &world)?;
            let report = pipeline::run_matrix(&cfg, &world, &[("model_stage1", &s1), ("model_stage2", &s2)], Some(&s1), &gnns)?;
            report.write(&p.work, "report")?;
            print!("{}", report.to_table());
        }
        Command::Predict { a, b, task, sic, bundle, .. } => {
            let kind: TaskKind = task.parse()?;
            let world = load_world_files(&cfg, &p)?;
            let bundle = match bundle {
                Some(path) => read_bundle(path)?,
                None => load_stage(&p, "stage2.bundle", "stage2", Stage::Two)?,
            };
            let (yes, nlls) = pipeline::answer(&bundle, &cfg, &world, kind, (a, b), sic)?;
            println!("{}", if yes { "yes" } else { "no" });
            println!("nll(yes) = {:.6}", nlls[0]);
            println!("nll(no)  = {:.6}", nlls[1]);
        }
        Command::Report(_) => {
            let path = p.file("report.tsv");
            need(&path, "eval")?;
            let report = EvalReport::parse_delimited(&fs::read_to_string(path)?)?;
            print!("{}", report.to_table());
        }
        Command::Selftest(_) => {
            let errs = selftest::gradient_suite(&cfg, 10, 1e-5, 20, cfg.seed)?;
            let worst = errs.iter().copied().fold(0.0, f64::max);
            println!("grad_check: max relative error {worst:.3e} over {} SRP instances", errs.len());
            let gap = selftest::metric_oracle(1000, cfg.seed);
            println!("metric oracle: max deviation {gap:.3e} over 1000 confusion matrices");
            if worst >= 1e-4 || gap >= 1e-12 {
                return Err(Error::Integrity("selftest tolerance exceeded".into()));
            }
            println!("selftest ok");
        }
    }
    Ok(())
}

fn print_losses(name: &str, losses: &[f64]) {
    let s: Vec<String> = losses.iter().map(|l| format!("{l:.4}")).collect();
    println!("{name} epoch losses: {}", s.join(" "));
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("usage error"));
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Argument(_) | Error::Config(_) => 1,
                _ => 2,
            })
        }
    }
}
