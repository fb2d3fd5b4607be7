use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{CompanyId, LabeledPair, Pair, SupplyGraph};
use crate::error::{Error, Result};
use crate::rng;

/// Firm-level train/test partition with its derived evaluation pair sets.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train_firms: BTreeSet<CompanyId>,
    pub test_firms: BTreeSet<CompanyId>,
    pub train_edges: BTreeSet<Pair>,
    /// Balanced: true edges with exactly one test endpoint, plus as many negatives.
    pub inductive_pairs: Vec<LabeledPair>,
    /// Balanced: true edges between two test firms, plus as many negatives.
    pub fully_inductive_pairs: Vec<LabeledPair>,
    pub seed: u64,
}

impl SplitSpec {
    pub fn is_test(&self, id: CompanyId) -> bool {
        self.test_firms.contains(&id)
    }
}

/// Which ordered pairs a negative may be drawn from.
#[derive(Debug, Clone, Copy)]
pub enum MembershipRule<'a> {
    /// Exactly one endpoint in the set (inductive pairs).
    ExactlyOneIn(&'a BTreeSet<CompanyId>),
    /// Both endpoints in the set (fully-inductive pairs, training pairs).
    BothIn(&'a BTreeSet<CompanyId>),
    Any,
}

impl MembershipRule<'_> {
    pub fn admits(&self, (a, b): Pair) -> bool {
        if a == b {
            return false;
        }
        match self {
            MembershipRule::ExactlyOneIn(s) => s.contains(&a) != s.contains(&b),
            MembershipRule::BothIn(s) => s.contains(&a) && s.contains(&b),
            MembershipRule::Any => true,
        }
    }
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_INDUCTIVE_NEG: u64 = 2;
const STREAM_FULLY_NEG: u64 = 3;

/// Partitions firms into train/test, then derives the balanced inductive and
/// fully-inductive evaluation sets.
pub fn firm_split(graph: &SupplyGraph, test_fraction: f64, seed: u64) -> Result<SplitSpec> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::arg(format!("test_fraction {test_fraction} outside (0,1)")));
    }
    let n = graph.n_firms();
    let n_test = (test_fraction * n as f64).round() as usize;
    if n == 0 || n_test == 0 {
        return Err(Error::arg(format!("test_fraction {test_fraction} of {n} firms selects no test firm")));
    }
    let mut ids: Vec<CompanyId> = graph.companies.ids().collect();
    ids.shuffle(&mut rng::seeded(rng::derive(seed, STREAM_SHUFFLE)));
    let test_firms: BTreeSet<_> = ids[..n_test].iter().copied().collect();
    let train_firms: BTreeSet<_> = ids[n_test..].iter().copied().collect();
    let train_edges = graph
        .edges()
        .iter()
        .filter(|(a, b)| train_firms.contains(a) && train_firms.contains(b))
        .copied()
        .collect();

    let mut split = SplitSpec {
        train_firms,
        test_firms,
        train_edges,
        inductive_pairs: Vec::new(),
        fully_inductive_pairs: Vec::new(),
        seed,
    };
    let (ind_pos, full_pos) = partition_test_links(graph, &split);
    let ind_neg = sample_negatives(
        graph,
        &ind_pos,
        MembershipRule::ExactlyOneIn(&split.test_firms),
        rng::derive(seed, STREAM_INDUCTIVE_NEG),
    )?;
    let full_neg = sample_negatives(
        graph,
        &full_pos,
        MembershipRule::BothIn(&split.test_firms),
        rng::derive(seed, STREAM_FULLY_NEG),
    )?;
    split.inductive_pairs = balanced(&ind_pos, ind_neg);
    split.fully_inductive_pairs = balanced(&full_pos, full_neg);
    Ok(split)
}

/// Splits the true edges touching test firms into (inductive, fully-inductive).
pub fn partition_test_links(graph: &SupplyGraph, split: &SplitSpec) -> (Vec<Pair>, Vec<Pair>) {
    let mut inductive = Vec::new();
    let mut fully = Vec::new();
    for &(a, b) in graph.edges() {
        match (split.is_test(a), split.is_test(b)) {
            (true, true) => fully.push((a, b)),
            (true, false) | (false, true) => inductive.push((a, b)),
            (false, false) => {}
        }
    }
    (inductive, fully)
}

/// Positives labelled true followed by negatives.
pub fn balanced(positives: &[Pair], negatives: Vec<LabeledPair>) -> Vec<LabeledPair> {
    positives
        .iter()
        .map(|&(a, b)| LabeledPair::new(a, b, true))
        .chain(negatives)
        .collect()
}

/// Draws `positives.len()` distinct non-edges admitted by `rule`.
pub fn sample_negatives(
    graph: &SupplyGraph,
    positives: &[Pair],
    rule: MembershipRule<'_>,
    seed: u64,
) -> Result<Vec<LabeledPair>> {
    let requested = positives.len();
    if requested == 0 {
        return Ok(Vec::new());
    }
    let all: Vec<CompanyId> = graph.companies.ids().collect();
    let (pool_a, pool_b): (Vec<CompanyId>, Vec<CompanyId>) = match rule {
        MembershipRule::ExactlyOneIn(s) => (
            s.iter().copied().filter(|id| graph.companies.contains(*id)).collect(),
            all.iter().copied().filter(|id| !s.contains(id)).collect(),
        ),
        MembershipRule::BothIn(s) => {
            let v: Vec<_> = s.iter().copied().filter(|id| graph.companies.contains(*id)).collect();
            (v.clone(), v)
        }
        MembershipRule::Any => (all.clone(), all.clone()),
    };
    let total_pairs = match rule {
        MembershipRule::ExactlyOneIn(_) => 2 * pool_a.len() * pool_b.len(),
        _ => pool_a.len() * pool_a.len().saturating_sub(1),
    };
    let edges_in_rule = graph.edges().iter().filter(|&&p| rule.admits(p)).count();
    let available = total_pairs - edges_in_rule;
    if requested > available {
        return Err(Error::SamplingExhausted { requested, available });
    }

    let mut rng = rng::seeded(seed);
    // Dense request: enumerate every candidate and take a shuffled prefix.
    if available <= 4 * requested || available <= 4096 {
        let mut candidates: Vec<Pair> = Vec::with_capacity(available);
        for &a in &pool_a {
            for &b in &pool_b {
                let p = (a, b);
                if rule.admits(p) && !graph.has_edge(a, b) {
                    candidates.push(p);
                }
                if matches!(rule, MembershipRule::ExactlyOneIn(_)) && !graph.has_edge(b, a) {
                    candidates.push((b, a));
                }
            }
        }
        debug_assert_eq!(candidates.len(), available);
        let (chosen, _) = candidates.partial_shuffle(&mut rng, requested);
        return Ok(chosen.iter().map(|&(a, b)| LabeledPair::new(a, b, false)).collect());
    }

    let mut seen = HashSet::with_capacity(requested);
    let mut out = Vec::with_capacity(requested);
    while out.len() < requested {
        let p = match rule {
            MembershipRule::ExactlyOneIn(_) => {
                let t = pool_a[rng.gen_range(0..pool_a.len())];
                let o = pool_b[rng.gen_range(0..pool_b.len())];
                if rng.gen_bool(0.5) {
                    (t, o)
                } else {
                    (o, t)
                }
            }
            _ => {
                let a = pool_a[rng.gen_range(0..pool_a.len())];
                let b = pool_a[rng.gen_range(0..pool_a.len())];
                (a, b)
            }
        };
        if p.0 == p.1 || graph.has_edge(p.0, p.1) || !seen.insert(p) {
            continue;
        }
        out.push(LabeledPair::new(p.0, p.1, false));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::graph;
    use super::*;

    fn split_with_test(g: &SupplyGraph, test: &[CompanyId]) -> SplitSpec {
        let test_firms: BTreeSet<_> = test.iter().copied().collect();
        let train_firms = g.companies.ids().filter(|id| !test_firms.contains(id)).collect();
        SplitSpec {
            train_firms,
            test_firms,
            train_edges: BTreeSet::new(),
            inductive_pairs: vec![],
            fully_inductive_pairs: vec![],
            seed: 0,
        }
    }

    #[test]
    fn four_firm_partition_matches_enumeration() {
        let g = graph(4, &[(0, 1), (2, 3)]);
        let split = split_with_test(&g, &[2, 3]);
        let (ind, full) = partition_test_links(&g, &split);
        // Oracle: classify each edge by counting test endpoints.
        let mut oracle_ind = vec![];
        let mut oracle_full = vec![];
        for &(a, b) in g.edges() {
            let k = [a, b].iter().filter(|x| [2, 3].contains(*x)).count();
            match k {
                1 => oracle_ind.push((a, b)),
                2 => oracle_full.push((a, b)),
                _ => {}
            }
        }
        assert_eq!(ind, oracle_ind);
        assert!(ind.is_empty());
        assert_eq!(full, vec![(2, 3)]);
        assert_eq!(full, oracle_full);
    }

    #[test]
    fn no_test_test_edges_gives_empty_fully_inductive_set() {
        let g = graph(4, &[(0, 2), (3, 1)]);
        let split = split_with_test(&g, &[2, 3]);
        let (ind, full) = partition_test_links(&g, &split);
        assert!(full.is_empty());
        assert_eq!(ind.len(), 2);
    }

    #[test]
    fn split_sizes_follow_rounding_rule() {
        let g = graph(10, &[(0, 1)]);
        let s = firm_split(&g, 0.1, 3).unwrap();
        assert_eq!(s.test_firms.len(), 1);
        assert_eq!(s.train_firms.len(), 9);
        assert!(matches!(firm_split(&g, 0.0, 3), Err(Error::Argument(_))));
        assert!(matches!(firm_split(&g, 1.0, 3), Err(Error::Argument(_))));
        assert!(matches!(firm_split(&g, 0.01, 3), Err(Error::Argument(_))));
    }

    #[test]
    fn split_is_deterministic_and_train_edges_are_exact() {
        let edges: Vec<Pair> = (0..30).map(|i| (i, (i * 7 + 3) % 30)).filter(|(a, b)| a != b).collect();
        let g = graph(30, &edges);
        let a = firm_split(&g, 0.2, 11).unwrap();
        let b = firm_split(&g, 0.2, 11).unwrap();
        assert_eq!(a, b);
        let expect: BTreeSet<Pair> = g
            .edges()
            .iter()
            .filter(|(x, y)| a.train_firms.contains(x) && a.train_firms.contains(y))
            .copied()
            .collect();
        assert_eq!(a.train_edges, expect);
    }

    #[test]
    fn empty_positives_give_no_negatives() {
        let g = graph(3, &[]);
        assert!(sample_negatives(&g, &[], MembershipRule::Any, 1).unwrap().is_empty());
    }

    #[test]
    fn complete_digraph_minus_one_yields_that_non_edge() {
        let n = 5;
        let mut edges = vec![];
        for a in 0..n {
            for b in 0..n {
                if a != b && (a, b) != (3, 1) {
                    edges.push((a, b));
                }
            }
        }
        let g = graph(n, &edges);
        // Brute force: every ordered non-edge.
        let oracle: Vec<Pair> = (0..n)
            .flat_map(|a| (0..n).map(move |b| (a, b)))
            .filter(|&(a, b)| a != b && !g.has_edge(a, b))
            .collect();
        assert_eq!(oracle, vec![(3, 1)]);
        let neg = sample_negatives(&g, &[(0, 1)], MembershipRule::Any, 9).unwrap();
        assert_eq!(neg, vec![LabeledPair::new(3, 1, false)]);
        let err = sample_negatives(&g, &[(0, 1), (1, 2)], MembershipRule::Any, 9).unwrap_err();
        assert!(matches!(err, Error::SamplingExhausted { requested: 2, available: 1 }));
    }
}
