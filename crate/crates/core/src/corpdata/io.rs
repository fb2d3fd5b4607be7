//! Line-oriented world and split files.
//!
//! ```text
//! #companies
//! id|name|region|sic|desc-token desc-token ...
//! #edges
//! supplier_id,customer_id
//! #competitors
//! id,id
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Company, CompanyId, CompanyTable, CompetitorSet, LabeledPair, Pair, SplitSpec, SupplyGraph};
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Companies,
    Edges,
    Competitors,
}

pub fn load_world(path: impl AsRef<Path>) -> Result<(SupplyGraph, CompetitorSet)> {
    parse_world(&fs::read_to_string(path)?)
}

pub fn parse_world(text: &str) -> Result<(SupplyGraph, CompetitorSet)> {
    let mut section = Section::None;
    let mut companies = Vec::new();
    let mut edges = Vec::new();
    let mut competitors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(header) = line.strip_prefix('#') {
            section = match header.trim() {
                "companies" => Section::Companies,
                "edges" => Section::Edges,
                "competitors" => Section::Competitors,
                other => return Err(parse_err(line_no, format!("unknown section `#{other}`"))),
            };
            continue;
        }
        match section {
            Section::None => return Err(parse_err(line_no, "record before any section header")),
            Section::Companies => companies.push(parse_company(line, line_no)?),
            Section::Edges => edges.push(parse_pair(line, line_no)?),
            Section::Competitors => competitors.push(parse_pair(line, line_no)?),
        }
    }
    let table = CompanyTable::new(companies)?;
    let competitors = CompetitorSet::new(&table, competitors)?;
    let graph = SupplyGraph::new(table, edges)?;
    Ok((graph, competitors))
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_id(s: &str, line: usize) -> Result<CompanyId> {
    s.trim()
        .parse()
        .map_err(|_| parse_err(line, format!("invalid company id `{}`", s.trim())))
}

fn parse_pair(line: &str, line_no: usize) -> Result<Pair> {
    let mut it = line.split(',');
    match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), None) => Ok((parse_id(a, line_no)?, parse_id(b, line_no)?)),
        _ => Err(parse_err(line_no, "expected `id,id`")),
    }
}

fn parse_company(line: &str, line_no: usize) -> Result<Company> {
    let fields: Vec<&str> = line.split('|').collect();
    if fields.len() != 5 {
        return Err(parse_err(line_no, format!("expected 5 `|`-separated fields, found {}", fields.len())));
    }
    let description = fields[4]
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(line_no, format!("invalid description token `{t}`"))))
        .collect::<Result<Vec<u32>>>()?;
    Ok(Company {
        id: parse_id(fields[0], line_no)?,
        name: fields[1].to_owned(),
        region: fields[2].to_owned(),
        sic_label: fields[3].to_owned(),
        description,
        features: Vec::new(),
    })
}

pub fn world_to_string(graph: &SupplyGraph, competitors: &CompetitorSet) -> String {
    let mut s = String::from("#companies\n");
    for c in graph.companies.iter() {
        let desc: Vec<String> = c.description.iter().map(u32::to_string).collect();
        let _ = writeln!(s, "{}|{}|{}|{}|{}", c.id, c.name, c.region, c.sic_label, desc.join(" "));
    }
    s.push_str("#edges\n");
    for (a, b) in graph.edges() {
        let _ = writeln!(s, "{a},{b}");
    }
    s.push_str("#competitors\n");
    for (a, b) in competitors.iter() {
        let _ = writeln!(s, "{a},{b}");
    }
    s
}

pub fn write_world(path: impl AsRef<Path>, graph: &SupplyGraph, competitors: &CompetitorSet) -> Result<()> {
    fs::write(path, world_to_string(graph, competitors))?;
    Ok(())
}

pub fn split_to_string(split: &SplitSpec) -> String {
    let mut s = format!("#meta seed={}\n#train_firms\n", split.seed);
    for id in &split.train_firms {
        let _ = writeln!(s, "{id}");
    }
    s.push_str("#test_firms\n");
    for id in &split.test_firms {
        let _ = writeln!(s, "{id}");
    }
    s.push_str("#train_edges\n");
    for (a, b) in &split.train_edges {
        let _ = writeln!(s, "{a},{b}");
    }
    for (name, pairs) in [("inductive", &split.inductive_pairs), ("fully_inductive", &split.fully_inductive_pairs)] {
        let _ = writeln!(s, "#{name}");
        for p in pairs {
            let _ = writeln!(s, "{},{},{}", p.pair.0, p.pair.1, u8::from(p.label));
        }
    }
    s
}

pub fn write_split(path: impl AsRef<Path>, split: &SplitSpec) -> Result<()> {
    fs::write(path, split_to_string(split))?;
    Ok(())
}

pub fn read_split(path: impl AsRef<Path>) -> Result<SplitSpec> {
    parse_split(&fs::read_to_string(path)?)
}

pub fn parse_split(text: &str) -> Result<SplitSpec> {
    let mut seed = None;
    let mut section = "";
    let mut train_firms = BTreeSet::new();
    let mut test_firms = BTreeSet::new();
    let mut train_edges = BTreeSet::new();
    let mut inductive = Vec::new();
    let mut fully = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix("#meta") {
            for kv in meta.split_whitespace() {
                if let Some(v) = kv.strip_prefix("seed=") {
                    seed = Some(v.parse().map_err(|_| parse_err(line_no, "invalid seed"))?);
                }
            }
            continue;
        }
        if let Some(h) = line.strip_prefix('#') {
            section = match h.trim() {
                s @ ("train_firms" | "test_firms" | "train_edges" | "inductive" | "fully_inductive") => s,
                other => return Err(parse_err(line_no, format!("unknown section `#{other}`"))),
            };
            continue;
        }
        match section {
            "train_firms" => {
                train_firms.insert(parse_id(line, line_no)?);
            }
            "test_firms" => {
                test_firms.insert(parse_id(line, line_no)?);
            }
            "train_edges" => {
                train_edges.insert(parse_pair(line, line_no)?);
            }
            "inductive" | "fully_inductive" => {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 3 {
                    return Err(parse_err(line_no, "expected `id,id,label`"));
                }
                let label = match f[2].trim() {
                    "1" => true,
                    "0" => false,
                    _ => return Err(parse_err(line_no, "label must be 0 or 1")),
                };
                let p = LabeledPair::new(parse_id(f[0], line_no)?, parse_id(f[1], line_no)?, label);
                if section == "inductive" {
                    inductive.push(p);
                } else {
                    fully.push(p);
                }
            }
            _ => return Err(parse_err(line_no, "record before any section header")),
        }
    }
    if !train_firms.is_disjoint(&test_firms) {
        return Err(Error::integrity("train and test firm sets overlap"));
    }
    Ok(SplitSpec {
        train_firms,
        test_firms,
        train_edges,
        inductive_pairs: inductive,
        fully_inductive_pairs: fully,
        seed: seed.ok_or_else(|| parse_err(1, "missing `#meta seed=` header"))?,
    })
}
