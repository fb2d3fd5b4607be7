//! World-derived text for LM pretraining: firm profiles, name-list copying,
//! list membership and name equality questions. Nothing here states who
//! supplies or competes with whom.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::description_text;
use crate::corpdata::SupplyGraph;
use crate::error::{Error, Result};
use crate::rng;
use crate::toylm::{TokenId, Vocab, BOS, SEP};

pub(crate) const PHRASES: &[&str] = &[
    "Company name: Description: Industry:",
    "Here is a name list of companies: Repeat the list:",
    "Is in the list? Give me a direct answer of \"yes\" or \"no\".",
    "Are the two names the same company?",
    "none Connections: suppliers customers",
];

const ANSWER: &str = "Give me a direct answer of \"yes\" or \"no\".";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusConfig {
    /// Membership questions per firm.
    pub membership_per_firm: usize,
    /// Copy lines per firm.
    pub copies_per_firm: usize,
    /// Name-equality questions per firm.
    pub equality_per_firm: usize,
    pub max_list: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            membership_per_firm: 3,
            copies_per_firm: 1,
            equality_per_firm: 6,
            max_list: 6,
            seed: 0,
        }
    }
}

fn line(vocab: &Vocab, text: &str) -> Vec<TokenId> {
    let mut t = vec![BOS];
    t.extend(vocab.encode(text));
    t
}

/// Token sequences, each starting with `BOS`, in a seeded order.
pub fn lm_corpus(graph: &SupplyGraph, vocab: &Vocab, config: &CorpusConfig) -> Result<Vec<Vec<TokenId>>> {
    let firms: Vec<_> = graph.companies.iter().collect();
    if firms.len() < 2 {
        return Err(Error::arg("corpus needs at least two firms"));
    }
    let mut r = rng::seeded(config.seed);
    let mut out = Vec::new();
    let max_list = config.max_list.clamp(2, firms.len());
    for c in &firms {
        let desc = description_text(&c.description);
        out.push(line(vocab, &format!("Company name: {}. Description: {desc}. Industry: {}.", c.name, c.sic_label)));
        out.push(line(vocab, &format!("Description: {desc}. Company name: {}. Industry: {}.", c.name, c.sic_label)));

        for _ in 0..config.membership_per_firm {
            let k = r.gen_range(2..=max_list);
            let list: Vec<&str> = firms.choose_multiple(&mut r, k).map(|f| f.name.as_str()).collect();
            let inside = r.gen_bool(0.5);
            let query = if inside {
                list[r.gen_range(0..list.len())]
            } else {
                loop {
                    let q = firms[r.gen_range(0..firms.len())].name.as_str();
                    if !list.contains(&q) {
                        break q;
                    }
                }
            };
            let answer = if inside { "yes" } else { "no" };
            out.push(line(
                vocab,
                &format!("Here is a name list of companies: {}. Is {query} in the list? {ANSWER} {answer}", list.join(", ")),
            ));
        }

        for _ in 0..config.copies_per_firm {
            let k = r.gen_range(2..=max_list);
            let list: Vec<&str> = firms.choose_multiple(&mut r, k).map(|f| f.name.as_str()).collect();
            let mut t = line(vocab, &format!("Here is a name list of companies: {}. Repeat the list:", list.join(", ")));
            for (i, n) in list.iter().enumerate() {
                if i > 0 {
                    t.push(SEP);
                }
                t.extend(vocab.encode(n));
            }
            out.push(t);
        }

        for k in 0..config.equality_per_firm {
            let same = r.gen_bool(0.5);
            let other = if same { *c } else { firms[r.gen_range(0..firms.len())] };
            let answer = if other.name == c.name { "yes" } else { "no" };
            // Every other question spaces the names apart with descriptions.
            let text = if k % 2 == 0 {
                format!("Company name: {}. Company name: {}.", c.name, other.name)
            } else {
                format!(
                    "Company name: {}. Description: {desc}. Company name: {}. Description: {}.",
                    c.name,
                    other.name,
                    description_text(&other.description)
                )
            };
            out.push(line(vocab, &format!("{text} Are the two names the same company? {ANSWER} {answer}")));
        }
    }
    out.shuffle(&mut r);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_world, WorldConfig};
    use crate::tasks::build_vocab;

    #[test]
    fn corpus_is_deterministic_and_fully_in_vocabulary() {
        let (g, _) = generate_world(&WorldConfig::new(30, 3, 2.0, 1)).unwrap();
        let v = build_vocab(&g, &[]);
        let a = lm_corpus(&g, &v, &CorpusConfig::default()).unwrap();
        assert_eq!(a, lm_corpus(&g, &v, &CorpusConfig::default()).unwrap());
        assert_eq!(a.len(), 30 * 12);
        let unk_lo = 5;
        let unk_hi = 5 + crate::toylm::vocab::UNK_BUCKETS as u32;
        assert!(a.iter().flatten().all(|&t| !(unk_lo..unk_hi).contains(&t)));
        assert!(a.iter().all(|l| l[0] == BOS));
    }
}
