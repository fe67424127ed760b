//! Monolingual corpora, frequency counting and iterative phrase collection.
//!
//! Phrases are collected in passes. Each pass scores every adjacent pair of
//! units with a discounted association score and merges pairs scoring above
//! a threshold, greedily from left to right without overlap. The next pass
//! runs on the merged corpus, so units grow by concatenation.

use std::io::{self, BufRead, Write};

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::phrase::Phrase;
use crate::vocab::Vocab;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus is empty")]
    Empty,
    #[error("phrase score undefined: zero unigram frequency")]
    ZeroFrequency,
    #[error("invalid collection setting: {0}")]
    InvalidSetting(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Whitespace tokenization. Blank lines give an empty sequence.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    lang: String,
    sentences: Vec<Vec<String>>,
}

impl Corpus {
    /// Build a corpus, dropping sentences that are empty after tokenization.
    pub fn new(lang: impl Into<String>, sentences: Vec<Vec<String>>) -> Self {
        let sentences = sentences.into_iter().filter(|s| !s.is_empty()).collect();
        Corpus {
            lang: lang.into(),
            sentences,
        }
    }

    pub fn from_lines<'a>(lang: impl Into<String>, lines: impl IntoIterator<Item = &'a str>) -> Self {
        Corpus::new(lang, lines.into_iter().map(tokenize).collect())
    }

    pub fn read(lang: impl Into<String>, reader: impl BufRead) -> Result<Self, CorpusError> {
        let mut sentences = Vec::new();
        for line in reader.lines() {
            sentences.push(tokenize(&line?));
        }
        Ok(Corpus::new(lang, sentences))
    }

    pub fn write(&self, mut out: impl Write) -> io::Result<()> {
        for s in &self.sentences {
            writeln!(out, "{}", s.join(" "))?;
        }
        Ok(())
    }

    pub fn lang(&self) -> &str {
        &self.lang
    }

    pub fn sentences(&self) -> &[Vec<String>] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// Unigram and within-sentence adjacent-pair counts.
#[derive(Debug, Clone, Default)]
pub struct FrequencyTable {
    unigrams: FxHashMap<String, u64>,
    pairs: FxHashMap<(String, String), u64>,
}

impl FrequencyTable {
    pub fn unigram(&self, token: &str) -> u64 {
        self.unigrams.get(token).copied().unwrap_or(0)
    }

    pub fn pair(&self, left: &str, right: &str) -> u64 {
        self.pairs
            .get(&(left.to_string(), right.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn unigrams(&self) -> impl Iterator<Item = (&str, u64)> {
        self.unigrams.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn pairs(&self) -> impl Iterator<Item = ((&str, &str), u64)> {
        self.pairs.iter().map(|((a, b), &v)| ((a.as_str(), b.as_str()), v))
    }

    pub fn pair_types(&self) -> usize {
        self.pairs.len()
    }
}

pub fn count(corpus: &Corpus) -> Result<FrequencyTable, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    let mut table = FrequencyTable::default();
    for sentence in corpus.sentences() {
        for tok in sentence {
            *table.unigrams.entry(tok.clone()).or_insert(0) += 1;
        }
        for w in sentence.windows(2) {
            *table.pairs.entry((w[0].clone(), w[1].clone())).or_insert(0) += 1;
        }
    }
    Ok(table)
}

/// Discounted association score of two adjacent units:
/// `(freq(ab) - delta) / (freq(a) * freq(b))`.
pub fn phrase_score(pair_freq: u64, left_freq: u64, right_freq: u64, delta: f64) -> Result<f64, CorpusError> {
    if left_freq == 0 || right_freq == 0 {
        return Err(CorpusError::ZeroFrequency);
    }
    Ok((pair_freq as f64 - delta) / (left_freq as f64 * right_freq as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollectConfig {
    pub delta: f64,
    pub threshold: f64,
    pub passes: usize,
    pub max_len: usize,
}

impl CollectConfig {
    pub fn new(threshold: f64) -> Self {
        CollectConfig {
            delta: 10.0,
            threshold,
            passes: 6,
            max_len: 6,
        }
    }
}

/// Phrases sorted by descending frequency, ties by token order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhraseInventory {
    entries: Vec<(Phrase, u64)>,
    max_len: usize,
}

impl PhraseInventory {
    /// Duplicate phrases keep their first occurrence.
    pub fn new(entries: Vec<(Phrase, u64)>, max_len: usize) -> Self {
        let mut seen = rustc_hash::FxHashSet::default();
        let mut entries: Vec<_> = entries.into_iter().filter(|(p, _)| seen.insert(p.clone())).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        PhraseInventory { entries, max_len }
    }

    pub fn entries(&self) -> &[(Phrase, u64)] {
        &self.entries
    }

    pub fn phrases(&self) -> impl Iterator<Item = &Phrase> {
        self.entries.iter().map(|(p, _)| p)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn contains(&self, phrase: &Phrase) -> bool {
        self.entries.iter().any(|(p, _)| p == phrase)
    }

    pub fn frequency(&self, phrase: &Phrase) -> Option<u64> {
        self.entries.iter().find(|(p, _)| p == phrase).map(|(_, f)| *f)
    }

    /// Keep the `cap` most frequent phrases whose components all satisfy `known`.
    pub fn restrict(&self, cap: usize, known: impl Fn(&str) -> bool) -> PhraseInventory {
        let entries = self
            .entries
            .iter()
            .filter(|(p, _)| p.tokens().iter().all(|t| known(t)))
            .take(cap)
            .cloned()
            .collect();
        PhraseInventory {
            entries,
            max_len: self.max_len,
        }
    }

    /// Single-token entries only.
    pub fn words(&self) -> PhraseInventory {
        PhraseInventory {
            entries: self.entries.iter().filter(|(p, _)| p.len() == 1).cloned().collect(),
            max_len: 1,
        }
    }

    /// One `phrase<TAB>frequency` line per entry, phrase in joined form.
    pub fn write(&self, mut out: impl Write) -> io::Result<()> {
        for (p, f) in &self.entries {
            writeln!(out, "{}\t{}", p.joined(), f)?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead) -> Result<Self, CorpusError> {
        let mut entries = Vec::new();
        let mut max_len = 1;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (phrase, freq) = line.split_once('\t').ok_or_else(|| CorpusError::Parse {
                line: i + 1,
                message: "expected phrase<TAB>frequency".into(),
            })?;
            let freq: u64 = freq.trim().parse().map_err(|_| CorpusError::Parse {
                line: i + 1,
                message: format!("bad frequency {freq:?}"),
            })?;
            let phrase = Phrase::from_joined(phrase);
            max_len = max_len.max(phrase.len());
            entries.push((phrase, freq));
        }
        Ok(PhraseInventory::new(entries, max_len))
    }
}

/// Units are interned token-id sequences.
struct UnitTable {
    units: Vec<Vec<u32>>,
    ids: FxHashMap<Vec<u32>, u32>,
}

impl UnitTable {
    fn intern(&mut self, unit: Vec<u32>) -> u32 {
        if let Some(&id) = self.ids.get(&unit) {
            return id;
        }
        let id = self.units.len() as u32;
        self.ids.insert(unit.clone(), id);
        self.units.push(unit);
        id
    }
}

/// Run the merge passes and return the inventory plus the merged corpus.
///
/// The inventory holds every unit observed in any pass, with the largest
/// frequency it reached. Units of the merged corpus are written in joined
/// form.
pub fn collect_phrases(corpus: &Corpus, config: &CollectConfig) -> Result<(PhraseInventory, Corpus), CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    if config.passes == 0 {
        return Err(CorpusError::InvalidSetting("passes must be at least 1".into()));
    }
    if config.threshold.is_nan() || config.threshold <= 0.0 {
        return Err(CorpusError::InvalidSetting("threshold must be positive".into()));
    }
    if config.max_len == 0 {
        return Err(CorpusError::InvalidSetting("max_len must be at least 1".into()));
    }

    let mut vocab = Vocab::new();
    let mut table = UnitTable {
        units: Vec::new(),
        ids: FxHashMap::default(),
    };
    let mut sentences: Vec<Vec<u32>> = corpus
        .sentences()
        .iter()
        .map(|s| s.iter().map(|t| table.intern(vec![vocab.intern(t)])).collect())
        .collect();

    let mut best_freq: Vec<u64> = Vec::new();
    for _ in 0..config.passes {
        let (unigrams, pairs) = count_units(&sentences, table.units.len());
        record_max(&mut best_freq, &unigrams);
        let mut merged_any = false;
        for sentence in sentences.iter_mut() {
            let mut out = Vec::with_capacity(sentence.len());
            let mut i = 0;
            while i < sentence.len() {
                if i + 1 < sentence.len() {
                    let (a, b) = (sentence[i], sentence[i + 1]);
                    let len = table.units[a as usize].len() + table.units[b as usize].len();
                    if len <= config.max_len {
                        let pf = pairs.get(&(a, b)).copied().unwrap_or(0);
                        let score = phrase_score(pf, unigrams[a as usize], unigrams[b as usize], config.delta)?;
                        if score > config.threshold {
                            let mut unit = table.units[a as usize].clone();
                            unit.extend_from_slice(&table.units[b as usize]);
                            out.push(table.intern(unit));
                            merged_any = true;
                            i += 2;
                            continue;
                        }
                    }
                }
                out.push(sentence[i]);
                i += 1;
            }
            *sentence = out;
        }
        if !merged_any {
            break;
        }
    }
    let (unigrams, _) = count_units(&sentences, table.units.len());
    record_max(&mut best_freq, &unigrams);

    let phrase_of = |id: u32| -> Phrase {
        Phrase::new(
            table.units[id as usize]
                .iter()
                .map(|&w| vocab.word(w).to_string())
                .collect(),
        )
    };
    let entries = best_freq
        .iter()
        .enumerate()
        .filter(|(_, &f)| f > 0)
        .map(|(id, &f)| (phrase_of(id as u32), f))
        .collect();
    let merged = Corpus::new(
        corpus.lang(),
        sentences
            .iter()
            .map(|s| s.iter().map(|&u| phrase_of(u).joined()).collect())
            .collect(),
    );
    Ok((PhraseInventory::new(entries, config.max_len), merged))
}

fn count_units(sentences: &[Vec<u32>], n_units: usize) -> (Vec<u64>, FxHashMap<(u32, u32), u64>) {
    let mut unigrams = vec![0u64; n_units];
    let mut pairs = FxHashMap::default();
    for s in sentences {
        for &u in s {
            unigrams[u as usize] += 1;
        }
        for w in s.windows(2) {
            *pairs.entry((w[0], w[1])).or_insert(0) += 1;
        }
    }
    (unigrams, pairs)
}

fn record_max(best: &mut Vec<u64>, counts: &[u64]) {
    if best.len() < counts.len() {
        best.resize(counts.len(), 0);
    }
    for (b, &c) in best.iter_mut().zip(counts) {
        *b = (*b).max(c);
    }
}
