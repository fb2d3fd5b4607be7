//! Prompt-formatted task instances with graph-slot wiring.

mod corpus;
pub mod template;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::corpdata::{
    ego_subgraph, ego_subgraph_excluding, sample_negatives, CompanyId, CompetitorSet, EdgeIndex, LabeledPair,
    MembershipRule, Pair, SplitSpec, Subgraph, SupplyGraph,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng;
use crate::toylm::{tokenize, MixedSequence, TokenId, Vocab, BOS, EOS, GSLOT, SEP};

pub use corpus::{lm_corpus, CorpusConfig};
pub use template::{Segment, Template};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskKind {
    Cgm,
    Ic,
    Srp,
    Comp,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Cgm => "cgm",
            TaskKind::Ic => "ic",
            TaskKind::Srp => "srp",
            TaskKind::Comp => "comp",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cgm" => Ok(TaskKind::Cgm),
            "ic" => Ok(TaskKind::Ic),
            "srp" => Ok(TaskKind::Srp),
            "comp" => Ok(TaskKind::Comp),
            other => Err(Error::arg(format!("unknown task kind `{other}`"))),
        }
    }
}

/// Everything a builder reads. `visible` holds only the edges a model may see.
#[derive(Clone, Copy)]
pub struct TaskContext<'a> {
    pub graph: &'a SupplyGraph,
    pub visible: &'a EdgeIndex,
    pub vocab: &'a Vocab,
    pub neighbor_cap: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub kind: TaskKind,
    /// `[center]` for CGM/IC, `[a, b]` for SRP/COMP.
    pub firms: Vec<CompanyId>,
    pub with_sic: bool,
    pub label: Option<bool>,
    pub segments: Vec<Segment>,
    pub subgraphs: Vec<Subgraph>,
    /// Expected output tokens, ending in `EOS`.
    pub target: Vec<TokenId>,
}

/// One prompt position that receives an injected vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub position: usize,
    pub subgraph: usize,
    pub member: usize,
}

/// Tokenized prompt with `GSLOT` at every graph position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptLayout {
    pub tokens: Vec<TokenId>,
    pub slots: Vec<Slot>,
}

impl PromptLayout {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Replaces each slot by row `member` of `graph_tokens[subgraph]`.
    pub fn fill(&self, graph_tokens: &[Matrix]) -> MixedSequence {
        let mut seq = MixedSequence::from_tokens(&self.tokens);
        for s in &self.slots {
            seq.elements[s.position] = crate::toylm::Element::Injected(graph_tokens[s.subgraph].row(s.member).to_vec());
        }
        seq
    }

    /// The raw token sequence, placeholders left as `GSLOT` tokens.
    pub fn with_gslots(&self) -> MixedSequence {
        MixedSequence::from_tokens(&self.tokens)
    }
}

impl TaskInstance {
    /// Prompt text with every graph run written as its template placeholder.
    pub fn render(&self) -> String {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Text(t) => t.as_str(),
                Segment::Graph { placeholder, .. } => placeholder.as_str(),
            })
            .collect()
    }

    pub fn gslot_count(&self) -> usize {
        self.segments
            .iter()
            .map(|s| match s {
                Segment::Graph { index, .. } => self.subgraphs[*index].len(),
                Segment::Text(_) => 0,
            })
            .sum()
    }

    pub fn layout(&self, vocab: &Vocab) -> PromptLayout {
        let mut tokens = vec![BOS];
        let mut slots = Vec::new();
        for s in &self.segments {
            match s {
                Segment::Text(t) => tokens.extend(vocab.encode(t)),
                Segment::Graph { index, .. } => {
                    for member in 0..self.subgraphs[*index].len() {
                        slots.push(Slot {
                            position: tokens.len(),
                            subgraph: *index,
                            member,
                        });
                        tokens.push(GSLOT);
                    }
                }
            }
        }
        PromptLayout { tokens, slots }
    }

    pub fn record(&self) -> InstanceRecord {
        InstanceRecord {
            kind: self.kind,
            a: self.firms[0],
            b: self.firms.get(1).copied(),
            with_sic: self.with_sic,
            label: self.label,
        }
    }
}

pub fn description_text(desc: &[u32]) -> String {
    desc.iter().map(|&t| crate::toylm::vocab::desc_word(t)).collect::<Vec<_>>().join(" ")
}

fn name_tokens(vocab: &Vocab, name: &str) -> Vec<TokenId> {
    vocab.encode(name)
}

fn answer_tokens(vocab: &Vocab, yes: bool) -> Vec<TokenId> {
    vec![vocab.encode_word(if yes { "yes" } else { "no" }), EOS]
}

/// `[yes, EOS]` and `[no, EOS]`.
pub fn yes_no_choices(vocab: &Vocab) -> Vec<Vec<TokenId>> {
    vec![answer_tokens(vocab, true), answer_tokens(vocab, false)]
}

/// One choice per SIC label, in the given order.
pub fn sic_choices(vocab: &Vocab, labels: &[String]) -> Vec<Vec<TokenId>> {
    labels
        .iter()
        .map(|l| {
            let mut t = vocab.encode(l);
            t.push(EOS);
            t
        })
        .collect()
}

/// Stage I graph-matching instance: names in a seeded shuffle, target in member order.
pub fn build_cgm(ctx: &TaskContext<'_>, center: CompanyId) -> Result<TaskInstance> {
    let sub = ego_subgraph(ctx.visible, center, ctx.neighbor_cap, ctx.seed)?;
    if sub.len() < 2 {
        return Err(Error::Unmatchable);
    }
    let names: Vec<&str> = sub
        .members
        .iter()
        .map(|&m| ctx.graph.companies.get(m).map(|c| c.name.as_str()))
        .collect::<Result<_>>()?;
    let mut shuffled = names.clone();
    shuffled.shuffle(&mut rng::seeded(rng::derive(ctx.seed ^ 0xc6a4_a793_5bd1_e995, u64::from(center))));
    let mut values = BTreeMap::new();
    values.insert("company_names", shuffled.join(", "));
    let segments = Template::builtin("cgm").fill(&values)?;
    let mut target = Vec::new();
    for (i, n) in names.iter().enumerate() {
        if i > 0 {
            target.push(SEP);
        }
        target.extend(name_tokens(ctx.vocab, n));
    }
    target.push(EOS);
    Ok(TaskInstance {
        kind: TaskKind::Cgm,
        firms: vec![center],
        with_sic: false,
        label: None,
        segments,
        subgraphs: vec![sub],
        target,
    })
}

/// Industry classification for `firm` over its own ego subgraph.
pub fn build_ic(ctx: &TaskContext<'_>, firm: CompanyId) -> Result<TaskInstance> {
    let sub = ego_subgraph(ctx.visible, firm, ctx.neighbor_cap, ctx.seed)?;
    let c = ctx.graph.companies.get(firm)?;
    let mut values = BTreeMap::new();
    values.insert("company_description", description_text(&c.description));
    values.insert("company_name", c.name.clone());
    let segments = Template::builtin("ic").fill(&values)?;
    let mut target = ctx.vocab.encode(&c.sic_label);
    target.push(EOS);
    Ok(TaskInstance {
        kind: TaskKind::Ic,
        firms: vec![firm],
        with_sic: false,
        label: None,
        segments,
        subgraphs: vec![sub],
        target,
    })
}

fn pair_fields(ctx: &TaskContext<'_>, a: CompanyId, b: CompanyId, with_sic: bool) -> Result<BTreeMap<&'static str, String>> {
    let mut values = BTreeMap::new();
    for (key_desc, key_name, id) in [("company1_description", "company1_name", a), ("company2_description", "company2_name", b)] {
        let c = ctx.graph.companies.get(id)?;
        let mut desc = description_text(&c.description);
        if with_sic {
            desc.push_str(" Industry: ");
            desc.push_str(&c.sic_label);
        }
        values.insert(key_desc, desc);
        values.insert(key_name, c.name.clone());
    }
    Ok(values)
}

fn build_pair(
    ctx: &TaskContext<'_>,
    kind: TaskKind,
    a: CompanyId,
    b: CompanyId,
    label: bool,
    with_sic: bool,
) -> Result<TaskInstance> {
    if a == b {
        return Err(Error::arg(format!("pair endpoints coincide ({a})")));
    }
    // Each center's neighborhood leaves out the other firm.
    let sa = ego_subgraph_excluding(ctx.visible, a, Some(b), ctx.neighbor_cap, ctx.seed)?;
    let sb = ego_subgraph_excluding(ctx.visible, b, Some(a), ctx.neighbor_cap, ctx.seed)?;
    let template = Template::builtin(if kind == TaskKind::Srp { "srp" } else { "comp" });
    let segments = template.fill(&pair_fields(ctx, a, b, with_sic)?)?;
    Ok(TaskInstance {
        kind,
        firms: vec![a, b],
        with_sic,
        label: Some(label),
        segments,
        subgraphs: vec![sa, sb],
        target: answer_tokens(ctx.vocab, label),
    })
}

/// Directed supply question `a → b`.
pub fn build_srp(ctx: &TaskContext<'_>, a: CompanyId, b: CompanyId, label: bool, with_sic: bool) -> Result<TaskInstance> {
    build_pair(ctx, TaskKind::Srp, a, b, label, with_sic)
}

/// Competitor question; label from the competitor set, used for evaluation only.
pub fn build_comp(
    ctx: &TaskContext<'_>,
    competitors: &CompetitorSet,
    a: CompanyId,
    b: CompanyId,
    with_sic: bool,
) -> Result<TaskInstance> {
    build_pair(ctx, TaskKind::Comp, a, b, competitors.contains(a, b), with_sic)
}

/// Training pairs: every visible edge plus as many sampled non-edges among train firms.
pub fn srp_training_pairs(graph: &SupplyGraph, split: &SplitSpec, seed: u64) -> Result<Vec<LabeledPair>> {
    let positives: Vec<Pair> = split.train_edges.iter().copied().collect();
    let negatives = sample_negatives(graph, &positives, MembershipRule::BothIn(&split.train_firms), seed)?;
    Ok(crate::corpdata::balanced(&positives, negatives))
}

/// Balanced competitor evaluation set of up to `per_class` positives and as
/// many negatives, skipping any pair (either order) in `exclude`.
pub fn competitor_eval_pairs(
    graph: &SupplyGraph,
    competitors: &CompetitorSet,
    per_class: usize,
    exclude: &HashSet<Pair>,
    seed: u64,
) -> Vec<LabeledPair> {
    let blocked = |a: CompanyId, b: CompanyId| exclude.contains(&(a, b)) || exclude.contains(&(b, a));
    let mut r = rng::seeded(seed);
    let mut pos: Vec<Pair> = competitors.iter().filter(|&(a, b)| !blocked(a, b)).collect();
    pos.shuffle(&mut r);
    pos.truncate(per_class);
    let ids: Vec<CompanyId> = graph.companies.ids().collect();
    let mut seen: BTreeSet<Pair> = BTreeSet::new();
    let mut neg = Vec::with_capacity(pos.len());
    let max_pairs = ids.len() * ids.len().saturating_sub(1) / 2;
    let mut attempts = 0usize;
    while neg.len() < pos.len() && attempts < 50 * max_pairs.max(1) {
        attempts += 1;
        let a = *ids.choose(&mut r).expect("non-empty");
        let b = *ids.choose(&mut r).expect("non-empty");
        let key = (a.min(b), a.max(b));
        if a == b || competitors.contains(a, b) || blocked(a, b) || !seen.insert(key) {
            continue;
        }
        neg.push(LabeledPair::new(a, b, false));
    }
    pos.into_iter().map(|(a, b)| LabeledPair::new(a, b, true)).chain(neg).collect()
}

/// Persistent description of an instance; prompts are rebuilt from it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InstanceRecord {
    pub kind: TaskKind,
    pub a: CompanyId,
    pub b: Option<CompanyId>,
    pub with_sic: bool,
    pub label: Option<bool>,
}

impl InstanceRecord {
    /// `kind,a,b,with_sic,label` with empty fields for absent values.
    pub fn to_line(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.kind,
            self.a,
            opt(self.b.map(|b| b.to_string())),
            u8::from(self.with_sic),
            opt(self.label.map(|l| u8::from(l).to_string()))
        )
    }

    pub fn parse_line(line: &str, line_no: usize) -> Result<Self> {
        let err = |msg: &str| Error::Parse {
            line: line_no,
            msg: msg.to_owned(),
        };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(err("expected `kind,a,b,with_sic,label`"));
        }
        let kind: TaskKind = f[0].parse().map_err(|_| err("unknown task kind"))?;
        let id = |s: &str| s.parse::<CompanyId>().map_err(|_| err("invalid company id"));
        let flag = |s: &str| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err(err("flag must be 0 or 1")),
        };
        let a = id(f[1])?;
        let b = if f[2].is_empty() { None } else { Some(id(f[2])?) };
        let label = if f[4].is_empty() { None } else { Some(flag(f[4])?) };
        let pair_kind = matches!(kind, TaskKind::Srp | TaskKind::Comp);
        if pair_kind != b.is_some() {
            return Err(err("pair tasks need two firms, single-firm tasks exactly one"));
        }
        if pair_kind && label.is_none() {
            return Err(err("pair tasks need a label"));
        }
        Ok(Self {
            kind,
            a,
            b,
            with_sic: flag(f[3])?,
            label,
        })
    }

    pub fn rebuild(&self, ctx: &TaskContext<'_>, competitors: &CompetitorSet) -> Result<TaskInstance> {
        match (self.kind, self.b) {
            (TaskKind::Cgm, _) => build_cgm(ctx, self.a),
            (TaskKind::Ic, _) => build_ic(ctx, self.a),
            (TaskKind::Srp, Some(b)) => build_srp(ctx, self.a, b, self.label.unwrap_or(false), self.with_sic),
            (TaskKind::Comp, Some(b)) => build_comp(ctx, competitors, self.a, b, self.with_sic),
            _ => Err(Error::arg("pair task without second firm")),
        }
    }
}

pub fn instances_to_string(records: &[InstanceRecord]) -> String {
    records.iter().map(|r| r.to_line() + "\n").collect()
}

pub fn parse_instances(text: &str) -> Result<Vec<InstanceRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| InstanceRecord::parse_line(l, i + 1))
        .collect()
}

/// Vocabulary covering templates, corpus phrasing, names, descriptions and industry labels.
pub fn build_vocab(graph: &SupplyGraph, extra_labels: &[String]) -> Vocab {
    let mut words: Vec<String> = [
        template::CGM,
        template::IC,
        template::SRP,
        template::COMP,
        template::LM_SRP,
        template::LM_COMP,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    words.extend(corpus::PHRASES.iter().map(|s| s.to_string()));
    words.extend(["yes", "no", "Industry:"].iter().map(|s| s.to_string()));
    for c in graph.companies.iter() {
        words.push(c.name.clone());
        words.push(c.sic_label.clone());
        words.push(description_text(&c.description));
    }
    words.extend(extra_labels.iter().cloned());
    Vocab::build(words)
}

/// Number of tokens `text` occupies.
pub fn token_len(text: &str) -> usize {
    tokenize(text).len()
}
