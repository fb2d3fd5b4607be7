//! Small causal language model that accepts injected embedding rows
//! alongside ordinary tokens.

mod model;
mod pretrain;
mod scoring;
pub mod vocab;

pub use model::{Block, KvCache, LmConfig, ToyLm, Trace};
pub use pretrain::{lm_pretrain, PretrainConfig, PretrainLog};
pub use scoring::{generate, score_choice, sequence_nll, sequence_nll_grad, ChoiceScore, NllGrad};
pub use vocab::{tokenize, Vocab, BOS, EOS, GSLOT, PAD, SEP};

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Token(TokenId),
    /// A vector fed to the first block in place of a token embedding.
    Injected(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MixedSequence {
    pub elements: Vec<Element>,
}

impl MixedSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens(tokens: &[TokenId]) -> Self {
        Self {
            elements: tokens.iter().map(|&t| Element::Token(t)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn push_token(&mut self, t: TokenId) {
        self.elements.push(Element::Token(t));
    }

    pub fn push_injected(&mut self, v: Vec<f64>) {
        self.elements.push(Element::Injected(v));
    }

    pub fn extend_tokens(&mut self, tokens: &[TokenId]) {
        self.elements.extend(tokens.iter().map(|&t| Element::Token(t)));
    }

    /// Indices holding injected vectors, ascending.
    pub fn injected_positions(&self) -> Vec<usize> {
        self.elements
            .iter()
            .enumerate()
            .filter_map(|(i, e)| matches!(e, Element::Injected(_)).then_some(i))
            .collect()
    }
}
