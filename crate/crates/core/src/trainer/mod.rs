//! Projector-only fine-tuning through the frozen LM, plus gradient checking.

mod bundle;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::aligner::Projector;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::optim::{clip_global_norm, Momentum};
use crate::rng;
use crate::tasks::{PromptLayout, TaskContext, TaskInstance, TaskKind};
use crate::toylm::{score_choice, sequence_nll, sequence_nll_grad, ChoiceScore, MixedSequence, TokenId};

pub use bundle::{read_bundle, read_parts, write_bundle, write_parts, ModelBundle, Parts, Precision, Stage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
    /// IC batches per SRP batch in stage II.
    pub stage2_mix: usize,
    /// SRP instances drawn per stage II epoch; 0 uses all.
    pub srp_per_epoch: usize,
}

impl TrainConfig {
    pub fn stage1() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            epochs: 10,
            batch_size: 16,
            grad_clip: 1.0,
            seed: 0,
            stage2_mix: 1,
            srp_per_epoch: 0,
        }
    }

    pub fn stage2() -> Self {
        Self {
            epochs: 20,
            srp_per_epoch: 128,
            ..Self::stage1()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be non-negative, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0,1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// An instance with frozen graph-encoder outputs precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub kind: TaskKind,
    pub label: Option<bool>,
    pub layout: PromptLayout,
    /// Node embeddings per subgraph, member order.
    pub nodes: Vec<Matrix>,
    pub target: Vec<TokenId>,
}

impl ModelBundle {
    pub fn prepare(&self, ctx: &TaskContext<'_>, inst: &TaskInstance) -> Result<Prepared> {
        let nodes = inst
            .subgraphs
            .iter()
            .map(|s| self.graphenc.encode(s, ctx.graph))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared {
            kind: inst.kind,
            label: inst.label,
            layout: inst.layout(&self.vocab),
            nodes,
            target: inst.target.clone(),
        })
    }

    /// Prompt with projected graph tokens in place.
    pub fn prompt(&self, p: &Prepared) -> Result<MixedSequence> {
        prompt_with(&self.projector, p)
    }

    pub fn nll(&self, p: &Prepared) -> Result<f64> {
        sequence_nll(&self.lm, &self.prompt(p)?, &p.target)
    }

    pub fn score(&self, p: &Prepared, choices: &[Vec<TokenId>]) -> Result<ChoiceScore> {
        score_choice(&self.lm, &self.prompt(p)?, choices)
    }
}

fn prompt_with(projector: &Projector, p: &Prepared) -> Result<MixedSequence> {
    let tokens = p.nodes.iter().map(|n| projector.project(n)).collect::<Result<Vec<_>>>()?;
    Ok(p.layout.fill(&tokens))
}

/// NLL of one instance and its gradient accumulated into `grads`.
fn instance_grad(bundle: &ModelBundle, p: &Prepared, grads: &mut Projector) -> Result<f64> {
    let prompt = bundle.prompt(p)?;
    let g = sequence_nll_grad(&bundle.lm, &prompt, &p.target, None)?;
    for (si, nodes) in p.nodes.iter().enumerate() {
        let mut d_tok = Matrix::zeros(nodes.rows(), bundle.projector.d_lm());
        for s in p.layout.slots.iter().filter(|s| s.subgraph == si) {
            d_tok.row_mut(s.member).copy_from_slice(g.d_inputs.row(s.position));
        }
        bundle.projector.accumulate_grad(nodes, &d_tok, grads);
    }
    Ok(g.nll)
}

/// Mean NLL and mean gradient over a batch.
pub fn batch_grad(bundle: &ModelBundle, batch: &[&Prepared]) -> Result<(f64, Projector)> {
    let mut grads = bundle.projector.zeros_like();
    let mut total = 0.0;
    for p in batch {
        total += instance_grad(bundle, p, &mut grads)?;
    }
    let n = batch.len().max(1) as f64;
    grads.tensors_mut().into_iter().for_each(|t| t.iter_mut().for_each(|x| *x /= n));
    Ok((total / n, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

fn step(bundle: &mut ModelBundle, opt: &mut Momentum, batch: &[&Prepared], clip: f64) -> Result<f64> {
    let (loss, mut g) = batch_grad(bundle, batch)?;
    clip_global_norm(&mut g.tensors_mut(), clip);
    let grads = g.tensors();
    opt.step(&mut bundle.projector.tensors_mut(), &grads);
    if !bundle.projector.is_finite() {
        return Err(Error::state("projector diverged to non-finite values"));
    }
    Ok(loss)
}

fn check_frozen(bundle: &ModelBundle) -> Result<()> {
    if !bundle.lm.is_frozen() || !bundle.graphenc.is_frozen() {
        return Err(Error::state("LM and graph encoder must be frozen before alignment training"));
    }
    Ok(())
}

/// Stage I: graph-matching instances only.
pub fn stage1_train(bundle: &mut ModelBundle, instances: &[Prepared], config: &TrainConfig) -> Result<TrainLog> {
    config.validate()?;
    check_frozen(bundle)?;
    if let Some(p) = instances.iter().find(|p| p.kind != TaskKind::Cgm) {
        return Err(Error::arg(format!("stage I accepts graph-matching instances only, got {}", p.kind)));
    }
    let mut opt = Momentum::new(config.lr, config.momentum);
    let mut r = rng::seeded(rng::derive(config.seed, 1));
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut log = TrainLog { epoch_losses: Vec::new() };
    for _ in 0..config.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &instances[i]).collect();
            total += step(bundle, &mut opt, &batch, config.grad_clip)?;
            batches += 1;
        }
        log.epoch_losses.push(if batches == 0 { 0.0 } else { total / batches as f64 });
    }
    bundle.finish_stage(Stage::One);
    Ok(log)
}

/// Stage II: industry-classification and supply-relation batches interleaved
/// `stage2_mix : 1`; once one side is exhausted the other continues alone.
pub fn stage2_train(bundle: &mut ModelBundle, ic: &[Prepared], srp: &[Prepared], config: &TrainConfig) -> Result<TrainLog> {
    config.validate()?;
    check_frozen(bundle)?;
    if bundle.stage < Stage::One {
        return Err(Error::state("stage II requires a bundle that completed stage I"));
    }
    if ic.iter().any(|p| p.kind != TaskKind::Ic) || srp.iter().any(|p| p.kind != TaskKind::Srp) {
        return Err(Error::arg("stage II instance sets must hold IC and SRP instances respectively"));
    }
    let mut opt = Momentum::new(config.lr, config.momentum);
    let mut r = rng::seeded(rng::derive(config.seed, 2));
    let mut ic_order: Vec<usize> = (0..ic.len()).collect();
    let mut srp_order: Vec<usize> = (0..srp.len()).collect();
    let mix = config.stage2_mix.max(1);
    let mut log = TrainLog { epoch_losses: Vec::new() };
    for _ in 0..config.epochs {
        ic_order.shuffle(&mut r);
        srp_order.shuffle(&mut r);
        let n_srp = if config.srp_per_epoch == 0 { srp.len() } else { config.srp_per_epoch.min(srp.len()) };
        let ic_batches: Vec<&[usize]> = ic_order.chunks(config.batch_size).collect();
        let srp_batches: Vec<&[usize]> = srp_order[..n_srp].chunks(config.batch_size).collect();
        let (mut i, mut s) = (0, 0);
        let mut total = 0.0;
        let mut batches = 0;
        while i < ic_batches.len() || s < srp_batches.len() {
            for _ in 0..mix {
                if i < ic_batches.len() {
                    let batch: Vec<&Prepared> = ic_batches[i].iter().map(|&k| &ic[k]).collect();
                    total += step(bundle, &mut opt, &batch, config.grad_clip)?;
                    batches += 1;
                    i += 1;
                }
            }
            if s < srp_batches.len() {
                let batch: Vec<&Prepared> = srp_batches[s].iter().map(|&k| &srp[k]).collect();
                total += step(bundle, &mut opt, &batch, config.grad_clip)?;
                batches += 1;
                s += 1;
            }
        }
        log.epoch_losses.push(if batches == 0 { 0.0 } else { total / batches as f64 });
    }
    bundle.finish_stage(Stage::Two);
    Ok(log)
}

/// Maximum relative error between the analytic projector gradient and central
/// differences on `n_coords` random coordinates of `(W, b)`.
pub fn grad_check(bundle: &ModelBundle, p: &Prepared, epsilon: f64, n_coords: usize, seed: u64) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::arg("epsilon must be positive"));
    }
    if bundle.precision != Precision::F64 {
        return Err(Error::state("gradient checking needs a double-precision bundle"));
    }
    let mut analytic = bundle.projector.zeros_like();
    instance_grad(bundle, p, &mut analytic)?;
    let n_w = bundle.projector.w.as_slice().len();
    let n_b = bundle.projector.b.len();
    let mut r = rng::seeded(seed);
    let mut worst: f64 = 0.0;
    let mut proj = bundle.projector.clone();
    for _ in 0..n_coords.max(1) {
        let k = r.gen_range(0..n_w + n_b);
        let (ti, ei) = if k < n_w { (0, k) } else { (1, k - n_w) };
        let orig = proj.tensors()[ti][ei];
        proj.tensors_mut()[ti][ei] = orig + epsilon;
        let plus = sequence_nll(&bundle.lm, &prompt_with(&proj, p)?, &p.target)?;
        proj.tensors_mut()[ti][ei] = orig - epsilon;
        let minus = sequence_nll(&bundle.lm, &prompt_with(&proj, p)?, &p.target)?;
        proj.tensors_mut()[ti][ei] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic.tensors()[ti][ei];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
