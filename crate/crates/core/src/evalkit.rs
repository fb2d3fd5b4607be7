//! Confusion-count metrics and report tables.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::corpdata::{LabeledPair, Pair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; 0 when both are 0.
    pub fn f_score(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores every pair and tallies the confusion counts.
pub fn evaluate<F>(pairs: &[LabeledPair], mut scorer: F) -> Result<Confusion>
where
    F: FnMut(Pair) -> Result<bool>,
{
    if pairs.is_empty() {
        return Err(Error::arg("cannot evaluate an empty pair set"));
    }
    let mut c = Confusion::default();
    for p in pairs {
        c.record(scorer(p.pair)?, p.label);
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EvalSplit {
    Inductive,
    FullyInductive,
    Competitor,
}

impl EvalSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalSplit::Inductive => "inductive",
            EvalSplit::FullyInductive => "fully_inductive",
            EvalSplit::Competitor => "competitor",
        }
    }
}

impl fmt::Display for EvalSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EvalSplit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inductive" => Ok(EvalSplit::Inductive),
            "fully_inductive" => Ok(EvalSplit::FullyInductive),
            "competitor" => Ok(EvalSplit::Competitor),
            _ => Err(Error::arg(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub system: String,
    pub task: String,
    pub split: EvalSplit,
    /// `None` for systems that take no prompt.
    pub with_sic: Option<bool>,
    pub counts: Confusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub seed: u64,
    /// Unix seconds, taken from the run config so reruns stay byte-identical.
    pub timestamp: u64,
    pub rows: Vec<ReportRow>,
}

const HEADER: [&str; 13] = [
    "system", "task", "split", "with_sic", "accuracy", "precision", "recall", "f_score", "tp", "fp", "tn", "fn", "n",
];

impl EvalReport {
    pub fn new(seed: u64, timestamp: u64) -> Self {
        Self {
            seed,
            timestamp,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, system: &str, task: &str, split: EvalSplit, with_sic: Option<bool>, counts: Confusion) {
        self.rows.push(ReportRow {
            system: system.to_owned(),
            task: task.to_owned(),
            split,
            with_sic,
            counts,
        });
    }

    pub fn find(&self, system: &str, split: EvalSplit, with_sic: Option<bool>) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.split == split && r.with_sic == with_sic)
    }

    fn cells(r: &ReportRow) -> [String; 13] {
        let c = &r.counts;
        [
            r.system.clone(),
            r.task.clone(),
            r.split.to_string(),
            match r.with_sic {
                None => "--".into(),
                Some(b) => u8::from(b).to_string(),
            },
            format!("{:.4}", c.accuracy()),
            format!("{:.4}", c.precision()),
            format!("{:.4}", c.recall()),
            format!("{:.4}", c.f_score()),
            c.tp.to_string(),
            c.fp.to_string(),
            c.tn.to_string(),
            c.fn_.to_string(),
            c.total().to_string(),
        ]
    }

    /// Aligned-column table for reading.
    pub fn to_table(&self) -> String {
        let rows: Vec<[String; 13]> = self.rows.iter().map(Self::cells).collect();
        let mut widths: Vec<usize> = HEADER.iter().map(|h| h.len()).collect();
        for r in &rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let mut s = format!("# seed={} timestamp={}\n", self.seed, self.timestamp);
        let line = |cells: &[&str]| -> String {
            let parts: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i < 4 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            parts.join("  ").trim_end().to_owned() + "\n"
        };
        s.push_str(&line(&HEADER));
        s.push_str(&line(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>()));
        for r in &rows {
            s.push_str(&line(&r.iter().map(String::as_str).collect::<Vec<_>>()));
        }
        s
    }

    /// Tab-separated, one row per report cell, with a header line.
    pub fn to_delimited(&self) -> String {
        let mut s = String::from("seed\ttimestamp\t");
        s.push_str(&HEADER.join("\t"));
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}", self.seed, self.timestamp, Self::cells(r).join("\t"));
        }
        s
    }

    pub fn parse_delimited(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        lines.next().ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty report".into(),
        })?;
        let mut report = EvalReport::new(0, 0);
        for (i, l) in lines {
            let err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_owned(),
            };
            let f: Vec<&str> = l.split('\t').collect();
            if f.len() != 15 {
                return Err(err("expected 15 tab-separated fields"));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|_| err("invalid count"));
            report.seed = num(f[0])?;
            report.timestamp = num(f[1])?;
            let with_sic = match f[5] {
                "--" => None,
                "0" => Some(false),
                "1" => Some(true),
                _ => return Err(err("with_sic must be --, 0 or 1")),
            };
            report.rows.push(ReportRow {
                system: f[2].to_owned(),
                task: f[3].to_owned(),
                split: f[4].parse().map_err(|_| err("unknown split"))?,
                with_sic,
                counts: Confusion {
                    tp: num(f[10])?,
                    fp: num(f[11])?,
                    tn: num(f[12])?,
                    fn_: num(f[13])?,
                },
            });
        }
        Ok(report)
    }

    /// Writes `<stem>.txt` (table) and `<stem>.tsv` (delimited) side by side.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::write(dir.join(format!("{stem}.txt")), self.to_table())?;
        fs::write(dir.join(format!("{stem}.tsv")), self.to_delimited())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn conf(tp: u64, fp: u64, tn: u64, fn_: u64) -> Confusion {
        Confusion { tp, fp, tn, fn_ }
    }

    #[test]
    fn closed_form_example() {
        let c = conf(8, 2, 8, 2);
        assert!((c.accuracy() - 0.8).abs() < 1e-15);
        assert!((c.f_score() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn all_negative_on_balanced_set() {
        let pairs: Vec<_> = (0..10).map(|i| LabeledPair::new(i, i + 100, i % 2 == 0)).collect();
        let c = evaluate(&pairs, |_| Ok(false)).unwrap();
        assert_eq!(c.f_score(), 0.0);
        assert_eq!(c.accuracy(), 0.5);
        let perfect = evaluate(&pairs, |(a, _)| Ok(a % 2 == 0)).unwrap();
        assert_eq!((perfect.accuracy(), perfect.f_score()), (1.0, 1.0));
        assert!(evaluate(&[], |_| Ok(true)).is_err());
    }

    #[test]
    fn delimited_round_trip_and_table_alignment() {
        let mut r = EvalReport::new(7, 0);
        r.push("sage", "srp", EvalSplit::Inductive, None, conf(3, 1, 4, 2));
        r.push("model_stage2", "srp", EvalSplit::FullyInductive, Some(true), conf(10, 0, 9, 1));
        assert_eq!(EvalReport::parse_delimited(&r.to_delimited()).unwrap(), r);
        let table = r.to_table();
        let lines: Vec<&str> = table.lines().collect();
        let col = lines[1].find("task").unwrap();
        assert!(lines[3..].iter().all(|l| l.find("srp") == Some(col)), "{table}");
        assert!(table.contains("--"));
    }

    proptest! {
        #[test]
        fn counts_sum_to_total(tp in 0u64..50, fp in 0u64..50, tn in 0u64..50, fn_ in 0u64..50) {
            let c = conf(tp, fp, tn, fn_);
            prop_assert_eq!(c.total(), tp + fp + tn + fn_);
            prop_assert!((0.0..=1.0).contains(&c.f_score()));
        }
    }
}
