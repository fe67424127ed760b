//! Phrase tables and their `src ||| tgt ||| scores` text form.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{self, BufRead, Write};

use thiserror::Error;

use crate::phrase::Phrase;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("duplicate phrase pair {src:?} ||| {tgt:?}")]
    Duplicate { src: String, tgt: String },
    #[error("score {value} for {src:?} ||| {tgt:?} is outside (0, 1]")]
    ScoreRange { src: String, tgt: String, value: f64 },
    #[error("empty phrase in table entry")]
    EmptyPhrase,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Where a table's scores come from. Only tables estimated from parallel
/// data carry the co-occurrence statistics needed for pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Induced,
    Estimated,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Induced => "induced",
            Provenance::Estimated => "estimated",
        })
    }
}

/// The four translation scores of a phrase pair, as probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScores {
    pub p_fwd: f64,
    pub lex_fwd: f64,
    pub p_bwd: f64,
    pub lex_bwd: f64,
}

impl PairScores {
    pub fn as_array(&self) -> [f64; 4] {
        [self.p_fwd, self.lex_fwd, self.p_bwd, self.lex_bwd]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        PairScores {
            p_fwd: a[0],
            lex_fwd: a[1],
            p_bwd: a[2],
            lex_bwd: a[3],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableEntry {
    pub target: Phrase,
    pub scores: PairScores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhraseTable {
    provenance: Provenance,
    entries: BTreeMap<Vec<String>, Vec<TableEntry>>,
}

impl PhraseTable {
    pub fn new(provenance: Provenance) -> Self {
        PhraseTable {
            provenance,
            entries: BTreeMap::new(),
        }
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn insert(&mut self, src: Phrase, target: Phrase, scores: PairScores) -> Result<(), TableError> {
        if src.is_empty() || target.is_empty() {
            return Err(TableError::EmptyPhrase);
        }
        for value in scores.as_array() {
            if !(value > 0.0 && value <= 1.0) {
                return Err(TableError::ScoreRange {
                    src: src.spaced(),
                    tgt: target.spaced(),
                    value,
                });
            }
        }
        let list = self.entries.entry(src.tokens().to_vec()).or_default();
        if list.iter().any(|e| e.target == target) {
            return Err(TableError::Duplicate {
                src: src.spaced(),
                tgt: target.spaced(),
            });
        }
        list.push(TableEntry { target, scores });
        Ok(())
    }

    pub fn get(&self, src: &[String]) -> Option<&[TableEntry]> {
        self.entries.get(src).map(Vec::as_slice)
    }

    pub fn score(&self, src: &[String], tgt: &[String]) -> Option<PairScores> {
        self.get(src)?
            .iter()
            .find(|e| e.target.tokens() == tgt)
            .map(|e| e.scores)
    }

    /// Sources in sorted order with their candidate lists.
    pub fn iter(&self) -> impl Iterator<Item = (&[String], &[TableEntry])> {
        self.entries.iter().map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    pub fn pair_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn source_count(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_source_len(&self) -> usize {
        self.entries.keys().map(Vec::len).max().unwrap_or(0)
    }

    /// Keep pairs satisfying `keep`; sources left without candidates are dropped.
    pub fn retain(&mut self, mut keep: impl FnMut(&[String], &TableEntry) -> bool) {
        self.entries.retain(|src, list| {
            list.retain(|e| keep(src, e));
            !list.is_empty()
        });
    }

    /// Lines in source order; candidates keep insertion order.
    pub fn write(&self, mut out: impl Write) -> io::Result<()> {
        for (src, list) in &self.entries {
            let src = src.join(" ");
            for e in list {
                let s = e.scores;
                writeln!(
                    out,
                    "{src} ||| {} ||| {} {} {} {}",
                    e.target.spaced(),
                    s.p_fwd,
                    s.lex_fwd,
                    s.p_bwd,
                    s.lex_bwd
                )?;
            }
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead, provenance: Provenance) -> Result<Self, TableError> {
        let mut table = PhraseTable::new(provenance);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |message: String| TableError::Parse { line: i + 1, message };
            let fields: Vec<&str> = line.split(" ||| ").collect();
            if fields.len() != 3 {
                return Err(parse_err(format!("expected 3 fields, found {}", fields.len())));
            }
            let scores = fields[2]
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| parse_err(format!("bad score {v:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let scores: [f64; 4] = scores
                .try_into()
                .map_err(|v: Vec<f64>| parse_err(format!("expected 4 scores, found {}", v.len())))?;
            table
                .insert(
                    Phrase::from_spaced(fields[0]),
                    Phrase::from_spaced(fields[1]),
                    PairScores::from_array(scores),
                )
                .map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(table)
    }
}
