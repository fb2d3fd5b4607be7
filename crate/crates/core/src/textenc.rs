//! Hashed-basis text encoder producing node features.
//!
//! Every description token owns a pseudo-random basis vector derived from
//! `(seed, token)`. A description embeds to the L2-normalized mean of its
//! tokens' basis vectors.

use rand::Rng as _;

use crate::corpdata::SupplyGraph;
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_FEATURE_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextEncoder {
    dim: usize,
    seed: u64,
}

impl TextEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "feature dimension must be positive");
        Self { dim, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Unnormalized basis vector of a token, entries in `[-1, 1]`.
    pub fn basis(&self, token: u32) -> Vec<f64> {
        let mut r = rng::seeded(rng::derive(self.seed, u64::from(token)));
        (0..self.dim).map(|_| r.gen_range(-1.0..=1.0)).collect()
    }

    /// Mean of the tokens' basis vectors, before normalization.
    pub fn pooled(&self, description: &[u32]) -> Result<Vec<f64>> {
        if description.is_empty() {
            return Err(Error::arg("cannot embed an empty description"));
        }
        let mut acc = vec![0.0; self.dim];
        for &t in description {
            for (a, b) in acc.iter_mut().zip(self.basis(t)) {
                *a += b;
            }
        }
        let m = description.len() as f64;
        acc.iter_mut().for_each(|a| *a /= m);
        Ok(acc)
    }

    pub fn embed(&self, description: &[u32]) -> Result<Vec<f64>> {
        let mut v = self.pooled(description)?;
        let n = crate::linalg::norm(&v);
        if n == 0.0 {
            return Err(Error::arg("description pools to the zero vector"));
        }
        v.iter_mut().for_each(|x| *x /= n);
        Ok(v)
    }

    /// Fills every company's feature row from its description.
    pub fn featurize(&self, graph: &mut SupplyGraph) -> Result<()> {
        graph.attach_features(|c| self.embed(&c.description))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cosine, norm};
    use crate::synthgen::{generate_world, WorldConfig};
    use proptest::prelude::*;

    #[test]
    fn embeddings_are_unit_length_of_dim_128() {
        let enc = TextEncoder::new(DEFAULT_FEATURE_DIM, 5);
        let v = enc.embed(&[3, 9, 27, 3]).unwrap();
        assert_eq!(v.len(), 128);
        assert!((norm(&v) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_token_embeds_to_its_normalized_basis() {
        let enc = TextEncoder::new(16, 5);
        let b = enc.basis(42);
        let n = norm(&b);
        let v = enc.embed(&[42]).unwrap();
        for (x, y) in v.iter().zip(&b) {
            assert!((x - y / n).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_description_is_rejected() {
        assert!(matches!(TextEncoder::new(8, 0).embed(&[]), Err(Error::Argument(_))));
    }

    #[test]
    fn same_industry_descriptions_are_closer() {
        let mut cfg = WorldConfig::new(20, 2, 1.0, 3);
        cfg.compat = vec![vec![1.0; 2]; 2];
        let (g, _) = generate_world(&cfg).unwrap();
        let enc = TextEncoder::new(DEFAULT_FEATURE_DIM, 1);
        let firms: Vec<_> = g.companies.iter().collect();
        let a = firms[0];
        let same = firms.iter().skip(1).find(|c| c.sic_label == a.sic_label).unwrap();
        let other = firms.iter().find(|c| c.sic_label != a.sic_label).unwrap();
        let ea = enc.embed(&a.description).unwrap();
        let within = cosine(&ea, &enc.embed(&same.description).unwrap());
        let across = cosine(&ea, &enc.embed(&other.description).unwrap());
        assert!(within > across, "{within} vs {across}");
    }

    proptest! {
        #[test]
        fn mean_pooling_ignores_token_order(mut toks in prop::collection::vec(0u32..500, 1..20), seed in 0u64..50) {
            let enc = TextEncoder::new(32, seed);
            let a = enc.embed(&toks).unwrap();
            toks.reverse();
            toks.rotate_left(1);
            let b = enc.embed(&toks).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn replacing_k_tokens_moves_pool_by_at_most_k_over_m_spread(
            toks in prop::collection::vec(0u32..64, 2..16),
            repl in prop::collection::vec(0u32..64, 1..16),
        ) {
            let enc = TextEncoder::new(16, 9);
            let m = toks.len();
            let k = repl.len().min(m);
            let mut changed = toks.clone();
            changed[..k].copy_from_slice(&repl[..k]);
            let before = enc.pooled(&toks).unwrap();
            let after = enc.pooled(&changed).unwrap();
            let delta: Vec<f64> = before.iter().zip(&after).map(|(a, b)| a - b).collect();
            let used: Vec<u32> = toks.iter().chain(&repl).copied().collect();
            let mut spread: f64 = 0.0;
            for &s in &used {
                for &t in &used {
                    let d: Vec<f64> = enc.basis(s).iter().zip(enc.basis(t)).map(|(a, b)| a - b).collect();
                    spread = spread.max(norm(&d));
                }
            }
            prop_assert!(norm(&delta) <= k as f64 / m as f64 * spread + 1e-12);
        }
    }
}
