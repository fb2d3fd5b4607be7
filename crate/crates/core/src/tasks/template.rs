use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A piece of a parsed template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece {
    Text(String),
    /// `<graph>`, `<graph1>`, ... with the subgraph index it stands for.
    Graph { placeholder: String, index: usize },
    /// `{name}`; `raw` keeps the braces and inner spacing as written.
    Field { name: String, raw: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub name: &'static str,
    pub pieces: Vec<Piece>,
}

pub const CGM: &str = include_str!("../../templates/cgm.txt");
pub const IC: &str = include_str!("../../templates/ic.txt");
pub const SRP: &str = include_str!("../../templates/srp.txt");
pub const COMP: &str = include_str!("../../templates/comp.txt");
pub const LM_SRP: &str = include_str!("../../templates/lm_srp.txt");
pub const LM_COMP: &str = include_str!("../../templates/lm_comp.txt");

impl Template {
    pub fn parse(name: &'static str, source: &str) -> Result<Self> {
        let src = source.trim_end_matches(['\n', '\r']);
        let mut pieces = Vec::new();
        let mut text = String::new();
        let mut rest = src;
        while let Some(ch) = rest.chars().next() {
            let graph = rest.strip_prefix("<graph").and_then(|r| {
                let digits: String = r.chars().take_while(char::is_ascii_digit).collect();
                r[digits.len()..].starts_with('>').then_some(digits)
            });
            if let Some(digits) = graph {
                let len = "<graph>".len() + digits.len();
                let index = if digits.is_empty() { 0 } else { digits.parse::<usize>().unwrap() - 1 };
                flush(&mut text, &mut pieces);
                pieces.push(Piece::Graph {
                    placeholder: rest[..len].to_owned(),
                    index,
                });
                rest = &rest[len..];
            } else if ch == '{' {
                let end = rest
                    .find('}')
                    .ok_or_else(|| Error::Config(format!("template {name}: unterminated field")))?;
                let raw = &rest[..=end];
                flush(&mut text, &mut pieces);
                pieces.push(Piece::Field {
                    name: raw[1..end].trim().to_owned(),
                    raw: raw.to_owned(),
                });
                rest = &rest[end + 1..];
            } else {
                text.push(ch);
                rest = &rest[ch.len_utf8()..];
            }
        }
        flush(&mut text, &mut pieces);
        Ok(Self { name, pieces })
    }

    pub fn builtin(name: &'static str) -> Self {
        let src = match name {
            "cgm" => CGM,
            "ic" => IC,
            "srp" => SRP,
            "comp" => COMP,
            "lm_srp" => LM_SRP,
            "lm_comp" => LM_COMP,
            other => panic!("no built-in template `{other}`"),
        };
        Self::parse(name, src).expect("built-in templates parse")
    }

    pub fn field_names(&self) -> Vec<&str> {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Field { name, .. } => Some(name.as_str()),
                _ => None,
            })
            .collect()
    }

    /// Literal text of every piece; the inverse of [`Template::parse`].
    pub fn source(&self) -> String {
        self.pieces
            .iter()
            .map(|p| match p {
                Piece::Text(t) => t.as_str(),
                Piece::Graph { placeholder, .. } => placeholder.as_str(),
                Piece::Field { raw, .. } => raw.as_str(),
            })
            .collect()
    }

    /// Replaces fields by value; graph placeholders stay. Missing fields are errors.
    pub fn fill(&self, values: &BTreeMap<&str, String>) -> Result<Vec<Segment>> {
        let mut out: Vec<Segment> = Vec::new();
        for p in &self.pieces {
            match p {
                Piece::Text(t) => push_text(&mut out, t),
                Piece::Field { name, .. } => {
                    let v = values
                        .get(name.as_str())
                        .ok_or_else(|| Error::arg(format!("template {}: no value for `{name}`", self.name)))?;
                    push_text(&mut out, v);
                }
                Piece::Graph { placeholder, index } => out.push(Segment::Graph {
                    placeholder: placeholder.clone(),
                    index: *index,
                }),
            }
        }
        Ok(out)
    }
}

fn flush(text: &mut String, pieces: &mut Vec<Piece>) {
    if !text.is_empty() {
        pieces.push(Piece::Text(std::mem::take(text)));
    }
}

fn push_text(out: &mut Vec<Segment>, t: &str) {
    if let Some(Segment::Text(prev)) = out.last_mut() {
        prev.push_str(t);
    } else {
        out.push(Segment::Text(t.to_owned()));
    }
}

/// Filled prompt text with graph runs still symbolic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Text(String),
    Graph { placeholder: String, index: usize },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_round_trip_through_the_parser() {
        for (name, src) in [("cgm", CGM), ("ic", IC), ("srp", SRP), ("comp", COMP), ("lm_srp", LM_SRP), ("lm_comp", LM_COMP)] {
            let t = Template::builtin(name);
            assert_eq!(t.source(), src.trim_end());
        }
    }

    #[test]
    fn graph_placeholders_and_fields_are_recognized() {
        let t = Template::builtin("srp");
        let graphs: Vec<_> = t
            .pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Graph { index, .. } => Some(*index),
                _ => None,
            })
            .collect();
        assert_eq!(graphs, vec![0, 1]);
        assert_eq!(
            t.field_names(),
            vec!["company1_description", "company1_name", "company2_description", "company2_name"]
        );
        assert_eq!(Template::builtin("ic").field_names(), vec!["company_description", "company_name"]);
    }

    #[test]
    fn missing_field_value_is_an_error() {
        let t = Template::parse("t", "a {x} b").unwrap();
        assert!(t.fill(&BTreeMap::new()).is_err());
        let mut v = BTreeMap::new();
        v.insert("x", "1".to_owned());
        assert_eq!(t.fill(&v).unwrap(), vec![Segment::Text("a 1 b".into())]);
        assert!(Template::parse("t", "a {x").is_err());
    }
}
