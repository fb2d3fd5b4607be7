//! Synthetic corporate worlds with planted industry structure.
//!
//! Each firm belongs to one industry. Supply edges are drawn between industry
//! pairs in proportion to a propensity matrix, competitors are drawn within
//! industries, and descriptions mix industry template tokens with tokens
//! unique to the firm.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::corpdata::{Company, CompanyId, CompanyTable, CompetitorSet, Pair, SupplyGraph};
use crate::error::{Error, Result};
use crate::rng;

/// Industry names used as SIC labels, in assignment order.
pub const SIC_LABELS: &[&str] = &[
    "Semiconductors and Related Devices",
    "Motor Vehicle Parts and Accessories",
    "Commercial Banks",
    "Pharmaceutical Preparations",
    "Crude Petroleum and Natural Gas",
    "Computer Programming Services",
    "Household Appliances",
    "Railroad Equipment",
    "Family Clothing Stores",
    "Engineering Services",
    "Aircraft",
    "Water Transportation",
    "Crops",
    "Ball and Roller Bearings",
    "Testing Laboratories",
    "Investment Advice",
    "Radiotelephone Communications",
    "Farm Machinery and Equipment",
    "Laboratory Analytical Instruments",
    "Real Estate Investment Trusts",
    "General Medical and Surgical Hospitals",
    "Natural Gas Transmission and Distribution",
    "Surgical and Medical Instruments and Apparatus",
    "Ice Cream and Frozen Desserts",
];

const REGIONS: &[&str] = &[
    "Texas",
    "California",
    "Massachusetts",
    "New York",
    "Ohio",
    "Illinois",
    "Colorado",
    "Maryland",
    "Washington",
    "Indiana",
];

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr", "kr", "st"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
// Codas never end an English template word, so names cannot collide with prompt text.
const CODAS: &[&str] = &["x", "z", "ks", "rz"];

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub n_firms: usize,
    pub n_industries: usize,
    /// `compat[i][j]` is the propensity of industry `i` supplying industry `j`.
    pub compat: Vec<Vec<f64>>,
    pub mean_out_degree: f64,
    pub competitor_within_industry_rate: f64,
    pub desc_template_tokens: usize,
    pub desc_salt_tokens: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self::new(300, 10, 3.6, 7)
    }
}

impl WorldConfig {
    /// Config with the default cyclic-decay propensity matrix.
    pub fn new(n_firms: usize, n_industries: usize, mean_out_degree: f64, seed: u64) -> Self {
        Self {
            n_firms,
            n_industries,
            compat: cyclic_compat(n_industries, DEFAULT_COMPAT_DECAY, DEFAULT_COMPAT_REACH),
            mean_out_degree,
            competitor_within_industry_rate: 0.3,
            desc_template_tokens: 12,
            desc_salt_tokens: 2,
            seed,
        }
    }

    /// 3,211 firms and 11,635 supply links.
    pub fn large(seed: u64) -> Self {
        Self::new(3211, 10, 11_635.0 / 3211.0, seed)
    }

    pub fn n_edges_target(&self) -> usize {
        (self.n_firms as f64 * self.mean_out_degree).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_firms < 2 {
            return bad(format!("n_firms = {} must be at least 2", self.n_firms));
        }
        if self.n_industries == 0 || self.n_industries > SIC_LABELS.len() {
            return bad(format!("n_industries must be in 1..={}", SIC_LABELS.len()));
        }
        if self.compat.len() != self.n_industries || self.compat.iter().any(|r| r.len() != self.n_industries) {
            return bad(format!("compat must be {0}x{0}", self.n_industries));
        }
        if self.compat.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("compat entries must lie in [0,1]".into());
        }
        if !(self.mean_out_degree >= 0.0 && self.mean_out_degree < self.n_firms as f64) {
            return bad(format!("mean_out_degree {} must be in [0, n_firms)", self.mean_out_degree));
        }
        if !(0.0..=1.0).contains(&self.competitor_within_industry_rate) {
            return bad("competitor_within_industry_rate must lie in [0,1]".into());
        }
        if self.desc_template_tokens == 0 {
            return bad("desc_template_tokens must be positive".into());
        }
        Ok(())
    }

    pub fn sic_labels(&self) -> &[&'static str] {
        &SIC_LABELS[..self.n_industries]
    }

    pub fn industry_of_label(&self, sic: &str) -> Option<usize> {
        self.sic_labels().iter().position(|l| *l == sic)
    }
}

pub const DEFAULT_COMPAT_DECAY: f64 = 0.7;
pub const DEFAULT_COMPAT_REACH: usize = 2;

/// Industries sit on a ring; industry `i` supplies the `reach` industries
/// downstream of it. With `d = (j - i) mod n`,
/// `compat[i][j] = exp(-d / decay)` for `d <= reach`, else 0.
pub fn cyclic_compat(n: usize, decay: f64, reach: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let d = (j + n - i) % n;
                    if d <= reach {
                        (-(d as f64) / decay).exp()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

const STREAM_INDUSTRY: u64 = 11;
const STREAM_NAMES: u64 = 12;
const STREAM_REGION: u64 = 13;
const STREAM_EDGES: u64 = 14;
const STREAM_COMPETITORS: u64 = 15;

/// Industry index per firm id `0..n_firms`, balanced and seeded.
fn assign_industries(config: &WorldConfig) -> Vec<usize> {
    let mut inds: Vec<usize> = (0..config.n_firms).map(|k| k % config.n_industries).collect();
    inds.shuffle(&mut rng::seeded(rng::derive(config.seed, STREAM_INDUSTRY)));
    inds
}

fn make_names(n: usize, seed: u64) -> Vec<String> {
    let mut r = rng::seeded(seed);
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = if r.gen_bool(0.5) { 2 } else { 3 };
        let mut name = String::new();
        for _ in 0..syllables {
            name.push_str(ONSETS[r.gen_range(0..ONSETS.len())]);
            name.push_str(VOWELS[r.gen_range(0..VOWELS.len())]);
        }
        name.push_str(CODAS[r.gen_range(0..CODAS.len())]);
        let mut chars = name.chars();
        let name: String = chars
            .next()
            .map(|c| c.to_ascii_uppercase())
            .into_iter()
            .chain(chars)
            .collect();
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

/// Description tokens for a firm: its industry's template followed by salt
/// tokens reserved for that firm alone.
pub fn describe(firm: &Company, config: &WorldConfig) -> Vec<u32> {
    let industry = config
        .industry_of_label(&firm.sic_label)
        .expect("firm was generated by this world");
    description_tokens(firm.id, industry, config)
}

fn description_tokens(id: CompanyId, industry: usize, config: &WorldConfig) -> Vec<u32> {
    let t = config.desc_template_tokens;
    let s = config.desc_salt_tokens;
    let template = (industry * t..(industry + 1) * t).map(|x| x as u32);
    let salt_base = config.n_industries * t + id as usize * s;
    let salt = (salt_base..salt_base + s).map(|x| x as u32);
    template.chain(salt).collect()
}

pub fn generate_world(config: &WorldConfig) -> Result<(SupplyGraph, CompetitorSet)> {
    config.validate()?;
    let n = config.n_firms;
    let industry = assign_industries(config);
    let names = make_names(n, rng::derive(config.seed, STREAM_NAMES));
    let mut region_rng = rng::seeded(rng::derive(config.seed, STREAM_REGION));
    let labels = config.sic_labels();

    let companies: Vec<Company> = (0..n)
        .map(|k| Company {
            id: k as CompanyId,
            name: names[k].clone(),
            description: description_tokens(k as CompanyId, industry[k], config),
            region: REGIONS[region_rng.gen_range(0..REGIONS.len())].to_owned(),
            sic_label: labels[industry[k]].to_owned(),
            features: Vec::new(),
        })
        .collect();

    let edges = sample_edges(config, &industry)?;
    let table = CompanyTable::new(companies)?;

    let mut comp_rng = rng::seeded(rng::derive(config.seed, STREAM_COMPETITORS));
    let rate = config.competitor_within_industry_rate;
    let mut competitors = Vec::new();
    if rate > 0.0 {
        for a in 0..n {
            for b in a + 1..n {
                if industry[a] == industry[b] && comp_rng.gen_bool(rate) {
                    competitors.push((a as CompanyId, b as CompanyId));
                }
            }
        }
    }
    let competitors = CompetitorSet::new(&table, competitors)?;
    let graph = SupplyGraph::new(table, edges)?;
    Ok((graph, competitors))
}

/// Exactly `n_edges_target` distinct edges; each draw picks an industry pair
/// with weight `compat × (#firm pairs)` then a uniform firm pair inside it.
fn sample_edges(config: &WorldConfig, industry: &[usize]) -> Result<Vec<Pair>> {
    let k = config.n_industries;
    let mut members: Vec<Vec<CompanyId>> = vec![Vec::new(); k];
    for (id, &ind) in industry.iter().enumerate() {
        members[ind].push(id as CompanyId);
    }
    let capacity = |i: usize, j: usize| -> usize {
        let (a, b) = (members[i].len(), members[j].len());
        if i == j {
            a * a.saturating_sub(1)
        } else {
            a * b
        }
    };
    let cells: Vec<(usize, usize)> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
    let mut weights: Vec<f64> = cells
        .iter()
        .map(|&(i, j)| config.compat[i][j] * capacity(i, j) as f64)
        .collect();
    if weights.iter().all(|&w| w == 0.0) {
        return Ok(Vec::new());
    }
    let target = config.n_edges_target();
    let feasible: usize = cells
        .iter()
        .zip(&weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&(i, j), _)| capacity(i, j))
        .sum();
    if target > feasible {
        return Err(Error::Config(format!(
            "degree target needs {target} edges but only {feasible} firm pairs have positive propensity"
        )));
    }

    let mut r = rng::seeded(rng::derive(config.seed, STREAM_EDGES));
    let mut used = vec![0usize; cells.len()];
    let mut edges = BTreeSet::new();
    let mut dist = WeightedIndex::new(&weights).expect("positive total weight");
    while edges.len() < target {
        let c = dist.sample(&mut r);
        let (i, j) = cells[c];
        let a = members[i][r.gen_range(0..members[i].len())];
        let b = members[j][r.gen_range(0..members[j].len())];
        if a == b || !edges.insert((a, b)) {
            continue;
        }
        used[c] += 1;
        if used[c] == capacity(i, j) {
            weights[c] = 0.0;
            dist = WeightedIndex::new(&weights).expect("feasibility checked");
        }
    }
    Ok(edges.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpdata::world_to_string;

    fn overlap(a: &[u32], b: &[u32]) -> f64 {
        let sa: BTreeSet<_> = a.iter().collect();
        let shared = b.iter().filter(|t| sa.contains(t)).count();
        shared as f64 / a.len() as f64
    }

    #[test]
    fn default_world_hits_expected_edge_count() {
        let cfg = WorldConfig::new(300, 10, 3.6, 7);
        // Expected count: each of the `target` draws adds one edge.
        let expected = 300.0 * 3.6;
        let (g, _) = generate_world(&cfg).unwrap();
        let e = g.n_edges() as f64;
        assert!((e - expected).abs() <= 0.1 * expected, "{e} edges");
        assert_eq!(g.n_firms(), 300);
        let len = cfg.desc_template_tokens + cfg.desc_salt_tokens;
        assert!(g.companies.iter().all(|c| c.description.len() == len));
    }

    #[test]
    fn zero_compat_and_zero_rate_give_empty_sets() {
        let mut cfg = WorldConfig::new(40, 4, 2.0, 1);
        cfg.compat = vec![vec![0.0; 4]; 4];
        cfg.competitor_within_industry_rate = 0.0;
        let (g, c) = generate_world(&cfg).unwrap();
        assert_eq!(g.n_edges(), 0);
        assert!(c.is_empty());
    }

    #[test]
    fn infeasible_degree_is_config_error() {
        let mut cfg = WorldConfig::new(10, 2, 3.0, 1);
        cfg.compat = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        assert!(matches!(generate_world(&cfg), Err(Error::Config(_))));
        let cfg = WorldConfig::new(10, 2, 10.0, 1);
        assert!(matches!(generate_world(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn descriptions_share_template_within_industry_only() {
        let cfg = WorldConfig::default();
        let (g, _) = generate_world(&cfg).unwrap();
        let firms: Vec<&Company> = g.companies.iter().collect();
        let a = firms[0];
        let same = firms[1..].iter().find(|c| c.sic_label == a.sic_label).unwrap();
        let other = firms[1..].iter().find(|c| c.sic_label != a.sic_label).unwrap();
        assert!(overlap(&a.description, &same.description) >= 0.6);
        assert!(overlap(&a.description, &other.description) < 0.4);
        assert_eq!(describe(a, &cfg), describe(a, &cfg));
        assert_eq!(describe(a, &cfg), a.description);
    }

    #[test]
    fn competitors_stay_within_industries() {
        let (g, c) = generate_world(&WorldConfig::default()).unwrap();
        assert!(!c.is_empty());
        for (a, b) in c.iter() {
            assert_eq!(g.companies.get(a).unwrap().sic_label, g.companies.get(b).unwrap().sic_label);
        }
    }

    #[test]
    fn same_config_gives_byte_identical_world_file() {
        let cfg = WorldConfig::default();
        let (g1, c1) = generate_world(&cfg).unwrap();
        let (g2, c2) = generate_world(&cfg).unwrap();
        assert_eq!(world_to_string(&g1, &c1), world_to_string(&g2, &c2));
        let mut other = cfg.clone();
        other.seed += 1;
        let (g3, c3) = generate_world(&other).unwrap();
        assert_ne!(world_to_string(&g1, &c1), world_to_string(&g3, &c3));
    }

    fn ranks(xs: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
        let mut r = vec![0.0; xs.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn planted_signal_is_rank_monotone_in_compat() {
        let cfg = WorldConfig::default();
        let (g, _) = generate_world(&cfg).unwrap();
        let k = cfg.n_industries;
        let ind = |id: CompanyId| cfg.industry_of_label(&g.companies.get(id).unwrap().sic_label).unwrap();
        let mut counts = vec![0.0; k * k];
        for &(a, b) in g.edges() {
            counts[ind(a) * k + ind(b)] += 1.0;
        }
        let compat: Vec<f64> = cfg.compat.iter().flatten().copied().collect();
        let rho = pearson(&ranks(&compat), &ranks(&counts));
        assert!(rho > 0.9, "spearman {rho}");
    }
}
