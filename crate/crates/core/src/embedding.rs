//! Cross-lingual embeddings, compositional phrase vectors and cosine-softmax
//! candidate ranking.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::PhraseInventory;
use crate::phrase::Phrase;
use crate::vocab::Vocab;

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("line {line}: malformed header, expected \"<vocab> <dim>\"")]
    Header { line: usize },
    #[error("line {line}: expected {expected} components, found {found}")]
    DimensionMismatch { line: usize, expected: usize, found: usize },
    #[error("line {line}: non-numeric component {value:?}")]
    NonNumeric { line: usize, value: String },
    #[error("line {line}: non-finite component")]
    NonFinite { line: usize },
    #[error("line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error("header declares {declared} vectors, found {found}")]
    CountMismatch { declared: usize, found: usize },
    #[error("embedding space is empty")]
    Empty,
    #[error("out-of-vocabulary token {0:?}")]
    OutOfVocabulary(String),
    #[error("zero-norm vector for {0:?}")]
    ZeroNorm(String),
    #[error("candidate set is empty")]
    NoCandidates,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Token vectors sharing one dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSpace {
    lang: String,
    dim: usize,
    vocab: Vocab,
    data: Vec<f64>,
}

impl EmbeddingSpace {
    pub fn new(lang: impl Into<String>, dim: usize) -> Self {
        EmbeddingSpace {
            lang: lang.into(),
            dim,
            vocab: Vocab::new(),
            data: Vec::new(),
        }
    }

    /// Insert a vector. Returns false if the token is already present.
    pub fn insert(&mut self, token: &str, vector: &[f64]) -> bool {
        assert_eq!(vector.len(), self.dim, "vector dimension");
        if self.vocab.get(token).is_some() {
            return false;
        }
        self.vocab.intern(token);
        self.data.extend_from_slice(vector);
        true
    }

    /// Parse the text interchange format: a `V D` header then `token v1 .. vD` lines.
    pub fn read(lang: impl Into<String>, reader: impl BufRead) -> Result<Self, EmbeddingError> {
        let mut lines = reader.lines().enumerate();
        let (declared, dim) = loop {
            match lines.next() {
                None => return Err(EmbeddingError::Empty),
                Some((i, line)) => {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let fields: Vec<&str> = line.split_whitespace().collect();
                    let parsed = match fields.as_slice() {
                        [v, d] => v.parse::<usize>().ok().zip(d.parse::<usize>().ok()),
                        _ => None,
                    };
                    match parsed {
                        Some((v, d)) if d > 0 => break (v, d),
                        _ => return Err(EmbeddingError::Header { line: i + 1 }),
                    }
                }
            }
        };
        let mut space = EmbeddingSpace::new(lang, dim);
        let mut buf = Vec::with_capacity(dim);
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            buf.clear();
            for f in fields {
                let v: f64 = f.parse().map_err(|_| EmbeddingError::NonNumeric {
                    line: lineno,
                    value: f.to_string(),
                })?;
                if !v.is_finite() {
                    return Err(EmbeddingError::NonFinite { line: lineno });
                }
                buf.push(v);
            }
            if buf.len() != dim {
                return Err(EmbeddingError::DimensionMismatch {
                    line: lineno,
                    expected: dim,
                    found: buf.len(),
                });
            }
            if !space.insert(token, &buf) {
                return Err(EmbeddingError::DuplicateToken {
                    line: lineno,
                    token: token.to_string(),
                });
            }
        }
        if space.len() != declared {
            return Err(EmbeddingError::CountMismatch {
                declared,
                found: space.len(),
            });
        }
        if space.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        Ok(space)
    }

    pub fn write(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "{} {}", self.len(), self.dim)?;
        for (i, word) in self.vocab.words().iter().enumerate() {
            write!(out, "{word}")?;
            for v in &self.data[i * self.dim..(i + 1) * self.dim] {
                write!(out, " {v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn lang(&self) -> &str {
        &self.lang
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocab.get(token).is_some()
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.vocab
            .get(token)
            .map(|id| &self.data[id as usize * self.dim..(id as usize + 1) * self.dim])
    }

    pub fn tokens(&self) -> &[String] {
        self.vocab.words()
    }
}

/// Sum of the component word vectors.
pub fn phrase_embedding(phrase: &Phrase, space: &EmbeddingSpace) -> Result<Vec<f64>, EmbeddingError> {
    let mut acc = vec![0.0; space.dim()];
    for tok in phrase.tokens() {
        let v = space
            .vector(tok)
            .ok_or_else(|| EmbeddingError::OutOfVocabulary(tok.clone()))?;
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    Ok(acc)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

fn unit_embedding(phrase: &Phrase, space: &EmbeddingSpace) -> Result<Vec<f64>, EmbeddingError> {
    let mut v = phrase_embedding(phrase, space)?;
    let n = norm(&v);
    if n == 0.0 {
        return Err(EmbeddingError::ZeroNorm(phrase.spaced()));
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

/// Softmax of `beta * cosine`, stabilized by subtracting the maximum.
pub fn softmax_scaled(cosines: &[f64], beta: f64) -> Vec<f64> {
    let max = cosines.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = cosines.iter().map(|c| (beta * (c - max)).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Probability of each candidate translating `src` under the cosine softmax.
pub fn translation_prob(
    src: &Phrase,
    candidates: &[Phrase],
    src_space: &EmbeddingSpace,
    tgt_space: &EmbeddingSpace,
    beta: f64,
) -> Result<Vec<f64>, EmbeddingError> {
    if candidates.is_empty() {
        return Err(EmbeddingError::NoCandidates);
    }
    let s = phrase_embedding(src, src_space)?;
    let cosines = candidates
        .iter()
        .map(|t| {
            let v = phrase_embedding(t, tgt_space)?;
            cosine(&s, &v).ok_or_else(|| EmbeddingError::ZeroNorm(format!("{src} / {t}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(softmax_scaled(&cosines, beta))
}

/// Unit-normalized phrase vectors of an inventory, ready for exhaustive search.
#[derive(Debug, Clone)]
pub struct PhraseIndex {
    phrases: Vec<Phrase>,
    dim: usize,
    units: Vec<f64>,
    /// position of each phrase in lexicographic order, for tie-breaking
    lex_rank: Vec<u32>,
}

impl PhraseIndex {
    pub fn build<'a>(
        phrases: impl IntoIterator<Item = &'a Phrase>,
        space: &EmbeddingSpace,
    ) -> Result<Self, EmbeddingError> {
        let phrases: Vec<Phrase> = phrases.into_iter().cloned().collect();
        let dim = space.dim();
        let rows = phrases
            .par_iter()
            .map(|p| unit_embedding(p, space))
            .collect::<Result<Vec<_>, _>>()?;
        let units = rows.concat();
        let mut order: Vec<usize> = (0..phrases.len()).collect();
        order.sort_by(|&a, &b| phrases[a].cmp(&phrases[b]));
        let mut lex_rank = vec![0u32; phrases.len()];
        for (rank, &i) in order.iter().enumerate() {
            lex_rank[i] = rank as u32;
        }
        Ok(PhraseIndex {
            phrases,
            dim,
            units,
            lex_rank,
        })
    }

    pub fn from_inventory(inventory: &PhraseInventory, space: &EmbeddingSpace) -> Result<Self, EmbeddingError> {
        PhraseIndex::build(inventory.phrases(), space)
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn phrase(&self, i: usize) -> &Phrase {
        &self.phrases[i]
    }

    pub fn phrases(&self) -> &[Phrase] {
        &self.phrases
    }

    pub fn unit(&self, i: usize) -> &[f64] {
        &self.units[i * self.dim..(i + 1) * self.dim]
    }

    pub fn position(&self, phrase: &Phrase) -> Option<usize> {
        self.phrases.iter().position(|p| p == phrase)
    }

    /// Exact top-k by cosine against a unit query; ties go to the
    /// lexicographically smaller phrase. Returned best first.
    pub fn nearest(&self, query_unit: &[f64], k: usize) -> Vec<(usize, f64)> {
        let k = k.min(self.len());
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Ranked> = BinaryHeap::with_capacity(k + 1);
        for i in 0..self.len() {
            let cand = Ranked {
                cos: dot(query_unit, self.unit(i)),
                lex: self.lex_rank[i],
                idx: i,
            };
            if heap.len() < k {
                heap.push(cand);
            } else if cand < *heap.peek().expect("heap holds k items") {
                heap.pop();
                heap.push(cand);
            }
        }
        let mut out = heap.into_sorted_vec();
        out.truncate(k);
        out.into_iter().map(|r| (r.idx, r.cos)).collect()
    }
}

/// Heap entry ordered so that "better" compares as smaller.
#[derive(Debug, Clone, Copy)]
struct Ranked {
    cos: f64,
    lex: u32,
    idx: usize,
}

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        other.cos.total_cmp(&self.cos).then(self.lex.cmp(&other.lex))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub target: Phrase,
    pub cosine: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidates {
    pub source: Phrase,
    pub candidates: Vec<Candidate>,
}

/// The `k` target phrases closest to `src`, with softmax probabilities
/// normalized over the retained set.
pub fn topk_candidates(
    src: &Phrase,
    targets: &PhraseIndex,
    src_space: &EmbeddingSpace,
    k: usize,
    beta: f64,
) -> Result<RankedCandidates, EmbeddingError> {
    if targets.is_empty() {
        return Err(EmbeddingError::NoCandidates);
    }
    let query = unit_embedding(src, src_space)?;
    let best = targets.nearest(&query, k);
    let cosines: Vec<f64> = best.iter().map(|&(_, c)| c).collect();
    let probs = softmax_scaled(&cosines, beta);
    let candidates = best
        .iter()
        .zip(probs)
        .map(|(&(i, cos), prob)| Candidate {
            target: targets.phrase(i).clone(),
            cosine: cos,
            prob,
        })
        .collect();
    Ok(RankedCandidates {
        source: src.clone(),
        candidates,
    })
}

pub(crate) fn dot_product(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(lang: &str, rows: &[(&str, &[f64])]) -> EmbeddingSpace {
        let mut s = EmbeddingSpace::new(lang, rows[0].1.len());
        for (t, v) in rows {
            assert!(s.insert(t, v));
        }
        s
    }

    #[test]
    fn reads_well_formed_file() {
        let text = "2 3\nhouse 1 0 0\nhome 0.5 0.5 1e-3\n";
        let s = EmbeddingSpace::read("en", text.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.dim(), 3);
        assert_eq!(s.vector("home").unwrap(), &[0.5, 0.5, 1e-3]);
    }

    #[test]
    fn short_line_reports_its_number() {
        let text = "2 3\nhouse 1 0 0\nhome 0.5 0.5\n";
        match EmbeddingSpace::read("en", text.as_bytes()) {
            Err(EmbeddingError::DimensionMismatch { line, expected, found }) => {
                assert_eq!((line, expected, found), (3, 3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_token_is_named() {
        let mut text = String::from("9 1\n");
        for (i, t) in ["a", "b", "c", "dup", "e", "f", "g", "h", "dup"].iter().enumerate() {
            text.push_str(&format!("{t} {i}\n"));
        }
        match EmbeddingSpace::read("en", text.as_bytes()) {
            Err(EmbeddingError::DuplicateToken { line, token }) => {
                assert_eq!(line, 10);
                assert_eq!(token, "dup");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_and_count_errors() {
        assert!(matches!(
            EmbeddingSpace::read("en", "1 2\na 1 x\n".as_bytes()),
            Err(EmbeddingError::NonNumeric { line: 2, .. })
        ));
        assert!(matches!(
            EmbeddingSpace::read("en", "3 1\na 1\n".as_bytes()),
            Err(EmbeddingError::CountMismatch { declared: 3, found: 1 })
        ));
        assert!(matches!(
            EmbeddingSpace::read("en", "x\n".as_bytes()),
            Err(EmbeddingError::Header { line: 1 })
        ));
    }

    #[test]
    fn write_then_read_is_identity() {
        let s = space("en", &[("a", &[0.1, -2.5]), ("b", &[1.0 / 3.0, 7.0])]);
        let mut buf = Vec::new();
        s.write(&mut buf).unwrap();
        assert_eq!(EmbeddingSpace::read("en", &buf[..]).unwrap(), s);
    }

    #[test]
    fn phrase_embedding_adds_components() {
        let s = space(
            "en",
            &[("new", &[1.0, 0.0]), ("york", &[0.0, 2.0]), ("house", &[3.0, 4.0])],
        );
        assert_eq!(phrase_embedding(&Phrase::word("house"), &s).unwrap(), vec![3.0, 4.0]);
        assert_eq!(
            phrase_embedding(&Phrase::from_joined("new_york"), &s).unwrap(),
            vec![1.0, 2.0]
        );
        assert!(matches!(
            phrase_embedding(&Phrase::from_spaced("new jersey"), &s),
            Err(EmbeddingError::OutOfVocabulary(t)) if t == "jersey"
        ));
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax_scaled(&[0.3], 30.0), vec![1.0]);
        let p = softmax_scaled(&[0.9, 0.8], 30.0);
        assert!((p[0] - 1.0 / (1.0 + (-3.0f64).exp())).abs() < 1e-15);
        assert!((p[0] - 0.952574).abs() < 1e-6);
        assert_eq!(softmax_scaled(&[0.4, 0.4], 30.0), vec![0.5, 0.5]);
    }

    #[test]
    fn zero_norm_is_an_error() {
        let s = space("en", &[("z", &[0.0, 0.0]), ("a", &[1.0, 0.0])]);
        let t = space("de", &[("b", &[1.0, 0.0])]);
        assert!(matches!(
            translation_prob(&Phrase::word("z"), &[Phrase::word("b")], &s, &t, 30.0),
            Err(EmbeddingError::ZeroNorm(_))
        ));
        assert!(matches!(
            translation_prob(&Phrase::word("a"), &[], &s, &t, 30.0),
            Err(EmbeddingError::NoCandidates)
        ));
    }

    #[test]
    fn topk_returns_everything_when_k_is_large() {
        let s = space("en", &[("a", &[1.0, 0.0])]);
        let t = space("de", &[("x", &[1.0, 0.1]), ("y", &[0.0, 1.0]), ("z", &[-1.0, 0.2])]);
        let inv = PhraseInventory::new(["x", "y", "z"].iter().map(|w| (Phrase::word(w), 1)).collect(), 1);
        let idx = PhraseIndex::from_inventory(&inv, &t).unwrap();
        let r = topk_candidates(&Phrase::word("a"), &idx, &s, 300, 30.0).unwrap();
        let names: Vec<String> = r.candidates.iter().map(|c| c.target.spaced()).collect();
        assert_eq!(names, vec!["x", "y", "z"]);
        let total: f64 = r.candidates.iter().map(|c| c.prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_vector_ranks_first_and_ties_are_lexicographic() {
        let s = space("en", &[("a", &[0.3, 0.4, 0.5])]);
        let t = space(
            "de",
            &[
                ("q", &[0.0, 1.0, 0.0]),
                ("p", &[0.0, 1.0, 0.0]),
                ("hit", &[0.3, 0.4, 0.5]),
            ],
        );
        let idx = PhraseIndex::build(&[Phrase::word("q"), Phrase::word("p"), Phrase::word("hit")], &t).unwrap();
        let r = topk_candidates(&Phrase::word("a"), &idx, &s, 3, 30.0).unwrap();
        assert_eq!(r.candidates[0].target, Phrase::word("hit"));
        assert!((r.candidates[0].cosine - 1.0).abs() < 1e-12);
        assert_eq!(r.candidates[1].target, Phrase::word("p"));
        assert_eq!(r.candidates[2].target, Phrase::word("q"));
    }
}
