use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::optim::{clip_global_norm, Adam};
use crate::rng;

use super::{sequence_nll, sequence_nll_grad, MixedSequence, ToyLm, TokenId, EOS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Tokens per training chunk, including the first (unscored) one.
    pub chunk_len: usize,
    pub batch_size: usize,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            lr: 3e-3,
            chunk_len: 128,
            batch_size: 8,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainLog {
    /// Mean per-token NLL over all chunks before the first update.
    pub initial_loss: f64,
    /// Mean per-token NLL seen during each epoch.
    pub epoch_losses: Vec<f64>,
}

impl PretrainLog {
    pub fn final_perplexity(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss).exp()
    }
}

/// Concatenates sequences with `EOS` separators and cuts the stream into chunks.
fn pack(corpus: &[Vec<TokenId>], chunk_len: usize) -> Vec<Vec<TokenId>> {
    let mut stream = Vec::new();
    for s in corpus {
        stream.extend_from_slice(s);
        stream.push(EOS);
    }
    let step = chunk_len.max(2);
    stream.chunks(step).filter(|c| c.len() >= 2).map(<[TokenId]>::to_vec).collect()
}

/// Trains next-token prediction on the corpus with Adam and returns the frozen model.
pub fn lm_pretrain(mut model: ToyLm, corpus: &[Vec<TokenId>], config: &PretrainConfig) -> Result<(ToyLm, PretrainLog)> {
    if corpus.iter().all(Vec::is_empty) {
        return Err(Error::arg("pretraining corpus is empty"));
    }
    if model.is_frozen() {
        return Err(Error::state("model is already frozen"));
    }
    let chunk_len = config.chunk_len.min(model.config.context);
    let mut chunks = pack(corpus, chunk_len);
    let n_tokens: usize = chunks.iter().map(|c| c.len() - 1).sum();
    let mut initial = 0.0;
    for c in &chunks {
        initial += sequence_nll(&model, &MixedSequence::from_tokens(&c[..1]), &c[1..])?;
    }
    let mut log = PretrainLog {
        initial_loss: initial / n_tokens as f64,
        epoch_losses: Vec::with_capacity(config.epochs),
    };
    let mut opt = Adam::new(config.lr);
    let mut r = rng::seeded(rng::derive(config.seed, 1));
    for _ in 0..config.epochs {
        chunks.shuffle(&mut r);
        let mut epoch_nll = 0.0;
        for batch in chunks.chunks(config.batch_size.max(1)) {
            let mut grads = model.zeros_like();
            let mut count = 0usize;
            for c in batch {
                let g = sequence_nll_grad(&model, &MixedSequence::from_tokens(&c[..1]), &c[1..], Some(&mut grads))?;
                epoch_nll += g.nll;
                count += c.len() - 1;
            }
            let scale = 1.0 / count as f64;
            let mut gs = grads.tensors_mut();
            gs.iter_mut().for_each(|g| g.iter_mut().for_each(|x| *x *= scale));
            clip_global_norm(&mut gs, config.grad_clip);
            let gs: Vec<&[f64]> = grads.tensors();
            opt.step(&mut model.tensors_mut(), &gs);
        }
        log.epoch_losses.push(epoch_nll / n_tokens as f64);
    }
    model.freeze();
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::super::LmConfig;
    use super::*;

    fn small() -> ToyLm {
        ToyLm::init(
            LmConfig {
                vocab_size: 12,
                d_model: 16,
                n_layers: 1,
                n_heads: 2,
                d_ff: 32,
                context: 64,
            },
            3,
        )
    }

    fn corpus() -> Vec<Vec<TokenId>> {
        (0..30).map(|i| vec![1, 5 + (i % 3), 8, 9, 5 + (i % 3), 10]).collect()
    }

    #[test]
    fn loss_falls_every_epoch_and_model_freezes() {
        let cfg = PretrainConfig {
            epochs: 5,
            lr: 1e-2,
            chunk_len: 24,
            batch_size: 2,
            ..Default::default()
        };
        let (m, log) = lm_pretrain(small(), &corpus(), &cfg).unwrap();
        assert!(m.is_frozen());
        assert!(log.epoch_losses.windows(2).all(|w| w[1] < w[0]), "{:?}", log.epoch_losses);
        assert!(log.epoch_losses[4] < log.initial_loss);
        let (again, _) = lm_pretrain(small(), &corpus(), &cfg).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn zero_epochs_freezes_the_initial_model() {
        let cfg = PretrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (m, log) = lm_pretrain(small(), &corpus(), &cfg).unwrap();
        let mut expect = small();
        expect.freeze();
        assert_eq!(m, expect);
        assert!(log.epoch_losses.is_empty());
    }

    #[test]
    fn empty_corpus_and_frozen_model_are_rejected() {
        assert!(matches!(lm_pretrain(small(), &[], &PretrainConfig::default()), Err(Error::Argument(_))));
        let mut m = small();
        m.freeze();
        assert!(matches!(lm_pretrain(m, &corpus(), &PretrainConfig::default()), Err(Error::State(_))));
    }
}
