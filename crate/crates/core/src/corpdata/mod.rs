//! Firm-level data model: companies, the directed supply graph, competitor
//! pairs, firm-level splits, negative sampling and ego subgraphs.

mod io;
mod split;
mod subgraph;

use std::collections::{BTreeSet, HashMap};

pub use io::{load_world, parse_split, parse_world, read_split, write_split, write_world, world_to_string, split_to_string};
pub use split::{balanced, firm_split, partition_test_links, sample_negatives, MembershipRule, SplitSpec};
pub use subgraph::{ego_subgraph, ego_subgraph_excluding, EdgeIndex, Subgraph, DEFAULT_NEIGHBOR_CAP};

use crate::error::{Error, Result};

pub type CompanyId = u32;

/// Ordered pair. For supply edges this is `(supplier, customer)`.
pub type Pair = (CompanyId, CompanyId);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabeledPair {
    pub pair: Pair,
    pub label: bool,
}

impl LabeledPair {
    pub fn new(a: CompanyId, b: CompanyId, label: bool) -> Self {
        Self { pair: (a, b), label }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Company {
    pub id: CompanyId,
    pub name: String,
    /// Description as ids in the world's description-token space.
    pub description: Vec<u32>,
    pub region: String,
    pub sic_label: String,
    /// Node feature row; empty until a text encoder has been applied.
    pub features: Vec<f64>,
}

/// Companies keyed by id, kept in ascending id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CompanyTable {
    companies: Vec<Company>,
    index: HashMap<CompanyId, usize>,
}

impl CompanyTable {
    pub fn new(mut companies: Vec<Company>) -> Result<Self> {
        companies.sort_by_key(|c| c.id);
        let mut index = HashMap::with_capacity(companies.len());
        for (i, c) in companies.iter().enumerate() {
            if index.insert(c.id, i).is_some() {
                return Err(Error::integrity(format!("duplicate company id {}", c.id)));
            }
        }
        Ok(Self { companies, index })
    }

    pub fn len(&self) -> usize {
        self.companies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.companies.is_empty()
    }

    pub fn get(&self, id: CompanyId) -> Result<&Company> {
        self.index
            .get(&id)
            .map(|&i| &self.companies[i])
            .ok_or(Error::Lookup(id))
    }

    pub fn contains(&self, id: CompanyId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Company> {
        self.companies.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = CompanyId> + '_ {
        self.companies.iter().map(|c| c.id)
    }

    /// Dense position of an id, used to index feature matrices.
    pub fn position(&self, id: CompanyId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = &mut Company> {
        self.companies.iter_mut()
    }

    /// Sorted, de-duplicated set of industry labels present in the table.
    pub fn sic_labels(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self.companies.iter().map(|c| c.sic_label.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    }
}

/// Directed supply graph `(V, E, X)`; `X` lives in each company's feature row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SupplyGraph {
    pub companies: CompanyTable,
    edges: BTreeSet<Pair>,
}

impl SupplyGraph {
    /// Validates the edge set against the company table.
    pub fn new(companies: CompanyTable, edges: impl IntoIterator<Item = Pair>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (s, c) in edges {
            if s == c {
                return Err(Error::integrity(format!("self-loop on company {s}")));
            }
            for id in [s, c] {
                if !companies.contains(id) {
                    return Err(Error::integrity(format!("edge ({s},{c}) references unknown company {id}")));
                }
            }
            if !set.insert((s, c)) {
                return Err(Error::integrity(format!("duplicate edge ({s},{c})")));
            }
        }
        Ok(Self { companies, edges: set })
    }

    pub fn n_firms(&self) -> usize {
        self.companies.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &BTreeSet<Pair> {
        &self.edges
    }

    pub fn has_edge(&self, supplier: CompanyId, customer: CompanyId) -> bool {
        self.edges.contains(&(supplier, customer))
    }

    /// Feature matrix rows in ascending id order; errors if any row is missing.
    pub fn feature_dim(&self) -> Result<usize> {
        let mut dim = None;
        for c in self.companies.iter() {
            if c.features.is_empty() {
                return Err(Error::integrity(format!("company {} has no feature row", c.id)));
            }
            match dim {
                None => dim = Some(c.features.len()),
                Some(d) if d != c.features.len() => {
                    return Err(Error::integrity(format!("company {} feature length {} != {d}", c.id, c.features.len())))
                }
                _ => {}
            }
        }
        Ok(dim.unwrap_or(0))
    }

    pub fn features(&self, id: CompanyId) -> Result<&[f64]> {
        let c = self.companies.get(id)?;
        if c.features.is_empty() {
            return Err(Error::integrity(format!("company {id} has no feature row")));
        }
        Ok(&c.features)
    }

    /// Replaces every feature row using `f(company)`.
    pub fn attach_features(&mut self, mut f: impl FnMut(&Company) -> Result<Vec<f64>>) -> Result<()> {
        for c in self.companies.iter_mut() {
            c.features = f(c)?;
        }
        Ok(())
    }
}

/// Unordered competitor pairs, stored as `(min, max)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompetitorSet {
    pairs: BTreeSet<Pair>,
}

impl CompetitorSet {
    pub fn new(companies: &CompanyTable, pairs: impl IntoIterator<Item = Pair>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(Error::integrity(format!("company {a} listed as its own competitor")));
            }
            for id in [a, b] {
                if !companies.contains(id) {
                    return Err(Error::integrity(format!("competitor pair ({a},{b}) references unknown company {id}")));
                }
            }
            if !set.insert(normalize(a, b)) {
                return Err(Error::integrity(format!("duplicate competitor pair ({a},{b})")));
            }
        }
        Ok(Self { pairs: set })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, a: CompanyId, b: CompanyId) -> bool {
        self.pairs.contains(&normalize(a, b))
    }

    pub fn iter(&self) -> impl Iterator<Item = Pair> + '_ {
        self.pairs.iter().copied()
    }
}

fn normalize(a: CompanyId, b: CompanyId) -> Pair {
    (a.min(b), a.max(b))
}
