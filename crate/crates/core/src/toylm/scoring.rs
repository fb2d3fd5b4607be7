use crate::error::{Error, Result};
use crate::linalg::{dot, log_sum_exp, Matrix};

use super::{Element, KvCache, MixedSequence, ToyLm, TokenId, EOS};

fn vocab_logits(model: &ToyLm, hidden: &[f64]) -> Vec<f64> {
    (0..model.config.vocab_size).map(|v| dot(model.embedding(v as TokenId), hidden)).collect()
}

fn check_target(prompt: &MixedSequence, target: &[TokenId]) -> Result<()> {
    if target.is_empty() {
        return Err(Error::arg("target must contain at least one token"));
    }
    if prompt.is_empty() {
        return Err(Error::arg("prompt must contain at least one element"));
    }
    Ok(())
}

/// Prompt followed by all but the last target token: the teacher-forced input.
fn teacher_forced(prompt: &MixedSequence, target: &[TokenId]) -> MixedSequence {
    let mut seq = prompt.clone();
    seq.extend_tokens(&target[..target.len() - 1]);
    seq
}

/// `−log P(target | prompt)` under teacher forcing.
pub fn sequence_nll(model: &ToyLm, prompt: &MixedSequence, target: &[TokenId]) -> Result<f64> {
    check_target(prompt, target)?;
    let seq = teacher_forced(prompt, target);
    let inputs = model.embed(&seq)?;
    let mut cache = KvCache::new(model);
    let hidden = model.extend(&mut cache, &inputs)?;
    let first = prompt.len() - 1;
    Ok(target
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let logits = vocab_logits(model, hidden.row(first + i));
            log_sum_exp(&logits) - logits[t as usize]
        })
        .sum())
}

/// NLL together with its gradient with respect to every input row.
#[derive(Debug, Clone)]
pub struct NllGrad {
    pub nll: f64,
    /// `T × d`, aligned with the teacher-forced input (prompt, then target minus its last token).
    pub d_inputs: Matrix,
}

/// Like [`sequence_nll`], also backpropagating to the input rows. Weight
/// gradients are accumulated into `grads` when given.
pub fn sequence_nll_grad(
    model: &ToyLm,
    prompt: &MixedSequence,
    target: &[TokenId],
    grads: Option<&mut ToyLm>,
) -> Result<NllGrad> {
    check_target(prompt, target)?;
    let seq = teacher_forced(prompt, target);
    let inputs = model.embed(&seq)?;
    let trace = model.forward_trace(&inputs)?;
    let d = model.config.d_model;
    let first = prompt.len() - 1;
    let mut d_hidden = Matrix::zeros(seq.len(), d);
    let mut nll = 0.0;
    let mut grads = grads;
    for (i, &t) in target.iter().enumerate() {
        let row = first + i;
        let h = trace.hidden.row(row);
        let mut p = vocab_logits(model, h);
        let lse = log_sum_exp(&p);
        nll += lse - p[t as usize];
        p.iter_mut().for_each(|x| *x = (*x - lse).exp());
        p[t as usize] -= 1.0;
        let dh = d_hidden.row_mut(row);
        for (v, &g) in p.iter().enumerate() {
            crate::linalg::axpy(g, model.embedding(v as TokenId), dh);
        }
        if let Some(g) = grads.as_deref_mut() {
            for (v, &gv) in p.iter().enumerate() {
                crate::linalg::axpy(gv, h, g.tok_emb.row_mut(v));
            }
        }
    }
    let d_inputs = model.backward(&trace, &d_hidden, grads.as_deref_mut());
    if let Some(g) = grads {
        for (i, e) in seq.elements.iter().enumerate() {
            if let Element::Token(t) = e {
                crate::linalg::axpy(1.0, d_inputs.row(i), g.tok_emb.row_mut(*t as usize));
            }
        }
    }
    Ok(NllGrad { nll, d_inputs })
}

/// Greedy decoding until `EOS` (not emitted) or `max_tokens`.
pub fn generate(model: &ToyLm, prompt: &MixedSequence, max_tokens: usize) -> Result<Vec<TokenId>> {
    if prompt.is_empty() {
        return Err(Error::arg("prompt must contain at least one element"));
    }
    let mut cache = KvCache::new(model);
    let mut hidden = model.extend(&mut cache, &model.embed(prompt)?)?;
    let mut out = Vec::new();
    let mut last = hidden.rows() - 1;
    while out.len() < max_tokens {
        let logits = vocab_logits(model, hidden.row(last));
        // First maximum wins, so ties go to the smaller id.
        let next = logits
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &l)| if l > best.1 { (i, l) } else { best })
            .0 as TokenId;
        if next == EOS || cache.len() >= model.config.context {
            break;
        }
        out.push(next);
        hidden = model.extend(&mut cache, &model.embed_tokens(&[next])?)?;
        last = 0;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceScore {
    pub best: usize,
    /// Unnormalized NLL per choice.
    pub nlls: Vec<f64>,
}

impl ChoiceScore {
    pub fn normalized(&self, choices: &[Vec<TokenId>]) -> Vec<f64> {
        self.nlls.iter().zip(choices).map(|(n, c)| n / c.len() as f64).collect()
    }
}

/// Picks the choice with the smallest per-token NLL; exact ties go to the
/// lexicographically smaller token sequence.
pub fn score_choice(model: &ToyLm, prompt: &MixedSequence, choices: &[Vec<TokenId>]) -> Result<ChoiceScore> {
    if choices.len() < 2 {
        return Err(Error::arg("need at least two choices"));
    }
    if prompt.is_empty() {
        return Err(Error::arg("prompt must contain at least one element"));
    }
    if choices.iter().any(Vec::is_empty) {
        return Err(Error::arg("choices must be non-empty"));
    }
    let mut base = KvCache::new(model);
    let prompt_hidden = model.extend(&mut base, &model.embed(prompt)?)?;
    let head = vocab_logits(model, prompt_hidden.row(prompt_hidden.rows() - 1));
    let head_lse = log_sum_exp(&head);
    let mut nlls = Vec::with_capacity(choices.len());
    for choice in choices {
        let mut nll = head_lse - head[choice[0] as usize];
        if choice.len() > 1 {
            let mut cache = base.clone();
            let h = model.extend(&mut cache, &model.embed_tokens(&choice[..choice.len() - 1])?)?;
            for (i, &t) in choice[1..].iter().enumerate() {
                let logits = vocab_logits(model, h.row(i));
                nll += log_sum_exp(&logits) - logits[t as usize];
            }
        }
        nlls.push(nll);
    }
    let mut best = 0;
    for i in 1..choices.len() {
        let (a, b) = (nlls[i] / choices[i].len() as f64, nlls[best] / choices[best].len() as f64);
        if a < b || (a == b && choices[i] < choices[best]) {
            best = i;
        }
    }
    Ok(ChoiceScore { best, nlls })
}
