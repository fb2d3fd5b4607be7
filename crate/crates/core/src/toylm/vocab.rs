use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub use super::TokenId;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
/// Placeholder later replaced by an injected graph-token embedding.
pub const GSLOT: TokenId = 3;
/// Delimiter between names in matching-task outputs. Always present, but
/// unlike the four ids above it may appear in targets.
pub const SEP: TokenId = 4;

const SPECIALS: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<gslot>", "<sep>"];
/// Out-of-vocabulary words hash into this many fallback buckets.
pub const UNK_BUCKETS: usize = 16;

/// Bijective token ↔ id map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

/// Lowercases and splits into word runs and single punctuation marks.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '_' {
            word.extend(ch.to_lowercase());
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Word used for a description-space token.
pub fn desc_word(token: u32) -> String {
    format!("d{token}")
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

impl Vocab {
    /// Specials and fallback buckets first, then the given words sorted.
    pub fn build<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend((0..UNK_BUCKETS).map(|i| format!("<unk{i}>")));
        let reserved: BTreeSet<String> = tokens.iter().cloned().collect();
        let rest: BTreeSet<String> = words
            .into_iter()
            .flat_map(|w| tokenize(w.as_ref()))
            .filter(|w| !reserved.contains(w))
            .collect();
        tokens.extend(rest);
        Self::from_tokens(tokens).expect("tokens are distinct by construction")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocab entry `{t}`")));
            }
        }
        for (i, s) in SPECIALS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Checkpoint(format!("vocab slot {i} must hold `{s}`")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.ids.get(word).copied()
    }

    /// Known id, or a hashed fallback bucket.
    pub fn encode_word(&self, word: &str) -> TokenId {
        self.id(word)
            .unwrap_or_else(|| (SPECIALS.len() as u64 + fnv1a(word) % UNK_BUCKETS as u64) as TokenId)
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        tokenize(text).iter().map(|w| self.encode_word(w)).collect()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&i| self.token(i)).collect::<Vec<_>>().join(" ")
    }

    /// UTF-8, one token per line, id = line number.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_splits_words_and_punctuation() {
        assert_eq!(
            tokenize("Give me a \"yes\" or \"no\"."),
            vec!["give", "me", "a", "\"", "yes", "\"", "or", "\"", "no", "\"", "."]
        );
    }

    #[test]
    fn reserved_ids_are_fixed_and_round_trip() {
        let v = Vocab::build(["yes no", "Commercial Banks"]);
        assert_eq!(v.id("<gslot>"), Some(GSLOT));
        assert_eq!(v.id("<eos>"), Some(EOS));
        assert!(v.id("yes").unwrap() > SEP);
        assert!([PAD, BOS, EOS, GSLOT].iter().all(|&i| i < 4));
        assert_eq!(Vocab::from_text(&v.to_text()).unwrap(), v);
    }

    #[test]
    fn unknown_words_hash_to_stable_buckets() {
        let v = Vocab::build(["alpha"]);
        let a = v.encode_word("zeta");
        assert_eq!(a, v.encode_word("zeta"));
        assert!(v.token(a).starts_with("<unk"));
    }
}
