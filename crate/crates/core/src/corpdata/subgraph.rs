use std::collections::{BTreeSet, HashMap, HashSet};

use rand::seq::index;

use super::{CompanyId, Pair};
use crate::error::{Error, Result};
use crate::rng;

/// Neighborhoods larger than this are down-sampled when building prompts.
pub const DEFAULT_NEIGHBOR_CAP: usize = 32;

/// Adjacency over a visible edge set, aware of the full node universe so that
/// isolated firms still resolve.
#[derive(Debug, Clone, Default)]
pub struct EdgeIndex {
    nodes: HashSet<CompanyId>,
    edges: HashSet<Pair>,
    out: HashMap<CompanyId, Vec<CompanyId>>,
    undirected: HashMap<CompanyId, Vec<CompanyId>>,
}

impl EdgeIndex {
    pub fn new<'a>(nodes: impl IntoIterator<Item = CompanyId>, edges: impl IntoIterator<Item = &'a Pair>) -> Self {
        let nodes: HashSet<_> = nodes.into_iter().collect();
        let mut idx = Self {
            nodes,
            ..Self::default()
        };
        let mut und: HashMap<CompanyId, BTreeSet<CompanyId>> = HashMap::new();
        for &(a, b) in edges {
            idx.edges.insert((a, b));
            idx.out.entry(a).or_default().push(b);
            und.entry(a).or_default().insert(b);
            und.entry(b).or_default().insert(a);
        }
        for v in idx.out.values_mut() {
            v.sort_unstable();
        }
        idx.undirected = und.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect();
        idx
    }

    pub fn contains_node(&self, id: CompanyId) -> bool {
        self.nodes.contains(&id)
    }

    pub fn has_edge(&self, a: CompanyId, b: CompanyId) -> bool {
        self.edges.contains(&(a, b))
    }

    /// In- and out-neighbors, ascending.
    pub fn neighbors(&self, id: CompanyId) -> &[CompanyId] {
        self.undirected.get(&id).map_or(&[], Vec::as_slice)
    }

    pub fn degree(&self, id: CompanyId) -> usize {
        self.neighbors(id).len()
    }
}

/// Ego network: the center first, then its neighbors in ascending id order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subgraph {
    pub center: CompanyId,
    pub members: Vec<CompanyId>,
    /// Visible directed edges with both endpoints among `members`.
    pub local_edges: Vec<Pair>,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Undirected adjacency in member-index space.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let pos: HashMap<CompanyId, usize> = self.members.iter().enumerate().map(|(i, &m)| (m, i)).collect();
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.members.len()];
        for (a, b) in &self.local_edges {
            let (i, j) = (pos[a], pos[b]);
            adj[i].insert(j);
            adj[j].insert(i);
        }
        adj.into_iter().map(|s| s.into_iter().collect()).collect()
    }
}

/// One-hop ego subgraph over `index`, capped at `cap` neighbors by seeded
/// uniform down-sampling.
pub fn ego_subgraph(index: &EdgeIndex, center: CompanyId, cap: usize, seed: u64) -> Result<Subgraph> {
    ego_subgraph_excluding(index, center, None, cap, seed)
}

/// As [`ego_subgraph`], with `exclude` removed from the neighborhood.
pub fn ego_subgraph_excluding(
    index: &EdgeIndex,
    center: CompanyId,
    exclude: Option<CompanyId>,
    cap: usize,
    seed: u64,
) -> Result<Subgraph> {
    if !index.contains_node(center) {
        return Err(Error::Lookup(center));
    }
    let mut nbrs: Vec<CompanyId> = index
        .neighbors(center)
        .iter()
        .copied()
        .filter(|&n| Some(n) != exclude)
        .collect();
    if nbrs.len() > cap {
        let mut r = rng::seeded(rng::derive(seed, u64::from(center)));
        let mut picked: Vec<CompanyId> = index::sample(&mut r, nbrs.len(), cap).iter().map(|i| nbrs[i]).collect();
        picked.sort_unstable();
        nbrs = picked;
    }
    let mut members = Vec::with_capacity(nbrs.len() + 1);
    members.push(center);
    members.extend(nbrs);
    let member_set: HashSet<CompanyId> = members.iter().copied().collect();
    let mut local_edges: Vec<Pair> = members
        .iter()
        .flat_map(|&m| {
            index
                .out
                .get(&m)
                .into_iter()
                .flatten()
                .filter(|t| member_set.contains(t))
                .map(move |&t| (m, t))
        })
        .collect();
    local_edges.sort_unstable();
    Ok(Subgraph {
        center,
        members,
        local_edges,
    })
}
