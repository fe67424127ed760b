//! Translation models estimated from (synthetic) parallel text.
//!
//! IBM Model 1 word alignment in both directions, grow-diag-final-and
//! symmetrization, consistent phrase-pair extraction, relative-frequency
//! phrase tables, msd-bidirectional lexicalized reordering and significance
//! pruning with Fisher's exact test.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::induction::{lexical_prob, InductionError};
use crate::phrase::Phrase;
use crate::table::{PairScores, PhraseTable, Provenance, TableError};
use crate::vocab::Vocab;

pub type SentencePair = (Vec<String>, Vec<String>);

pub const NULL_WORD: &str = "<null>";

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("no usable sentence pairs")]
    NoPairs,
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("alignment shapes differ: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),
    #[error("link {0}-{1} outside a {2}x{3} sentence pair")]
    LinkOutOfRange(usize, usize, usize, usize),
    #[error("inconsistent counts: c_st={c_st} c_s={c_s} c_t={c_t} n={n}")]
    InconsistentCounts { c_st: u64, c_s: u64, c_t: u64, n: u64 },
    #[error("phrase pair {0:?} has no co-occurrence counts")]
    MissingCounts(String),
    #[error("cannot prune a table without co-occurrence statistics (provenance: {0})")]
    PruneInduced(Provenance),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Lexical(#[from] InductionError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ibm1Config {
    pub iterations: usize,
    pub null_word: bool,
}

impl Default for Ibm1Config {
    fn default() -> Self {
        Ibm1Config {
            iterations: 5,
            null_word: true,
        }
    }
}

/// Word translation probabilities `t(target | source)`.
///
/// Rows are sparse over the target words that co-occur with the source
/// word; every row sums to one.
#[derive(Debug, Clone)]
pub struct TTable {
    src: Vocab,
    tgt: Vocab,
    null_word: bool,
    /// per source id, (target id, probability) sorted by target id
    rows: Vec<Vec<(u32, f64)>>,
    log_likelihoods: Vec<f64>,
}

impl TTable {
    pub fn prob(&self, src: &str, tgt: &str) -> f64 {
        match (self.src.get(src), self.tgt.get(tgt)) {
            (Some(s), Some(t)) => self.prob_ids(s, t),
            _ => 0.0,
        }
    }

    /// `t(target | NULL)`, zero when the null word is disabled.
    pub fn null_prob(&self, tgt: &str) -> f64 {
        if !self.null_word {
            return 0.0;
        }
        self.tgt.get(tgt).map_or(0.0, |t| self.prob_ids(0, t))
    }

    fn prob_ids(&self, s: u32, t: u32) -> f64 {
        let row = &self.rows[s as usize];
        row.binary_search_by_key(&t, |&(id, _)| id).map_or(0.0, |i| row[i].1)
    }

    /// Data log-likelihood (natural log) before training and after each iteration.
    pub fn log_likelihoods(&self) -> &[f64] {
        &self.log_likelihoods
    }

    /// Row sums, one per source word (the null word first when enabled).
    pub fn row_sums(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(_, p)| p).sum()).collect()
    }

    pub fn source_words(&self) -> &[String] {
        self.src.words()
    }
}

struct Encoded {
    src: Vec<u32>,
    tgt: Vec<u32>,
}

const EM_CHUNK: usize = 512;

/// Posterior link counts `(source id, row position, count)` and the data
/// log-likelihood of one chunk of sentence pairs.
fn expected_counts(rows: &[Vec<(u32, f64)>], chunk: &[Encoded], with_counts: bool) -> (Vec<(u32, usize, f64)>, f64) {
    let mut posteriors = Vec::new();
    let mut ll = 0.0;
    let mut slots: Vec<(u32, usize, f64)> = Vec::new();
    for d in chunk {
        let norm_len = (d.src.len() as f64).ln();
        for &t in &d.tgt {
            slots.clear();
            for &s in &d.src {
                let row = &rows[s as usize];
                let k = row.binary_search_by_key(&t, |&(id, _)| id).expect("co-occurring pair");
                slots.push((s, k, row[k].1));
            }
            let z: f64 = slots.iter().map(|x| x.2).sum();
            ll += z.ln() - norm_len;
            if with_counts {
                posteriors.extend(slots.iter().map(|&(s, k, p)| (s, k, p / z)));
            }
        }
    }
    (posteriors, ll)
}

/// EM training of IBM Model 1 from a uniform start.
pub fn train_ibm1(pairs: &[SentencePair], config: &Ibm1Config) -> Result<TTable, AlignError> {
    if config.iterations == 0 {
        return Err(AlignError::NoIterations);
    }
    let mut src = Vocab::new();
    let mut tgt = Vocab::new();
    if config.null_word {
        src.intern(NULL_WORD);
    }
    let mut data = Vec::with_capacity(pairs.len());
    for (s, t) in pairs {
        if s.is_empty() || t.is_empty() {
            continue;
        }
        let mut es: Vec<u32> = Vec::with_capacity(s.len() + 1);
        if config.null_word {
            es.push(0);
        }
        es.extend(s.iter().map(|w| src.intern(w)));
        let et = t.iter().map(|w| tgt.intern(w)).collect();
        data.push(Encoded { src: es, tgt: et });
    }
    if data.is_empty() {
        return Err(AlignError::NoPairs);
    }

    // co-occurrence structure, fixed for the whole run
    let mut cooc: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); src.len()];
    for d in &data {
        for &s in &d.src {
            cooc[s as usize].extend(d.tgt.iter().copied());
        }
    }
    let uniform = 1.0 / tgt.len() as f64;
    let mut rows: Vec<Vec<(u32, f64)>> = cooc
        .into_iter()
        .map(|set| set.into_iter().map(|t| (t, uniform)).collect())
        .collect();

    let mut log_likelihoods = Vec::with_capacity(config.iterations + 1);
    for _ in 0..config.iterations {
        let partials: Vec<(Vec<(u32, usize, f64)>, f64)> = data
            .par_chunks(EM_CHUNK)
            .map(|chunk| expected_counts(&rows, chunk, true))
            .collect();
        let mut counts: Vec<Vec<f64>> = rows.iter().map(|r| vec![0.0; r.len()]).collect();
        let mut ll = 0.0;
        for (posteriors, chunk_ll) in partials {
            ll += chunk_ll;
            for (s, k, c) in posteriors {
                counts[s as usize][k] += c;
            }
        }
        log_likelihoods.push(ll);
        for (row, c) in rows.iter_mut().zip(&counts) {
            let total: f64 = c.iter().sum();
            if total > 0.0 {
                for (entry, &x) in row.iter_mut().zip(c) {
                    entry.1 = x / total;
                }
            }
        }
    }
    let final_ll: f64 = data
        .par_chunks(EM_CHUNK)
        .map(|chunk| expected_counts(&rows, chunk, false).1)
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    log_likelihoods.push(final_ll);

    Ok(TTable {
        src,
        tgt,
        null_word: config.null_word,
        rows,
        log_likelihoods,
    })
}

/// Links `(source index, target index)` of one sentence pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordAlignment {
    src_len: usize,
    tgt_len: usize,
    links: BTreeSet<(usize, usize)>,
}

impl WordAlignment {
    pub fn new(
        src_len: usize,
        tgt_len: usize,
        links: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, AlignError> {
        let links: BTreeSet<(usize, usize)> = links.into_iter().collect();
        if let Some(&(i, j)) = links.iter().find(|&&(i, j)| i >= src_len || j >= tgt_len) {
            return Err(AlignError::LinkOutOfRange(i, j, src_len, tgt_len));
        }
        Ok(WordAlignment {
            src_len,
            tgt_len,
            links,
        })
    }

    pub fn links(&self) -> &BTreeSet<(usize, usize)> {
        &self.links
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.links.contains(&(i, j))
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.src_len, self.tgt_len)
    }

    pub fn transpose(&self) -> WordAlignment {
        WordAlignment {
            src_len: self.tgt_len,
            tgt_len: self.src_len,
            links: self.links.iter().map(|&(i, j)| (j, i)).collect(),
        }
    }

    /// Parse `i-j` links separated by spaces.
    pub fn parse(text: &str, src_len: usize, tgt_len: usize) -> Result<Self, AlignError> {
        let mut links = Vec::new();
        for tok in text.split_whitespace() {
            let parsed = tok
                .split_once('-')
                .and_then(|(i, j)| Some((i.parse().ok()?, j.parse().ok()?)));
            match parsed {
                Some(link) => links.push(link),
                None => {
                    return Err(AlignError::Parse {
                        line: 0,
                        message: format!("bad link {tok:?}"),
                    })
                }
            }
        }
        WordAlignment::new(src_len, tgt_len, links)
    }
}

impl fmt::Display for WordAlignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (i, j) in &self.links {
            if !first {
                f.write_str(" ")?;
            }
            write!(f, "{i}-{j}")?;
            first = false;
        }
        Ok(())
    }
}

/// Link each target word to its most probable source word. Ties go to the
/// lowest source index; the null word wins only when strictly better, and a
/// word with no positive probability stays unaligned.
pub fn viterbi_align(ttable: &TTable, src: &[String], tgt: &[String]) -> WordAlignment {
    let mut links = Vec::new();
    for (j, t) in tgt.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in src.iter().enumerate() {
            let p = ttable.prob(s, t);
            if p > best.map_or(0.0, |b| b.1) {
                best = Some((i, p));
            }
        }
        if let Some((i, p)) = best {
            if ttable.null_prob(t) <= p {
                links.push((i, j));
            }
        }
    }
    WordAlignment {
        src_len: src.len(),
        tgt_len: tgt.len(),
        links: links.into_iter().collect(),
    }
}

const NEIGHBORS: [(isize, isize); 8] = [(-1, 0), (0, -1), (1, 0), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)];

/// grow-diag-final-and over two alignments of the same sentence pair, both
/// given in (source, target) orientation.
pub fn symmetrize(fwd: &WordAlignment, bwd: &WordAlignment) -> Result<WordAlignment, AlignError> {
    if fwd.shape() != bwd.shape() {
        return Err(AlignError::ShapeMismatch(fwd.shape(), bwd.shape()));
    }
    let (n, m) = fwd.shape();
    let union: BTreeSet<(usize, usize)> = fwd.links.union(&bwd.links).copied().collect();
    let mut links: BTreeSet<(usize, usize)> = fwd.links.intersection(&bwd.links).copied().collect();
    let mut src_aligned = vec![false; n];
    let mut tgt_aligned = vec![false; m];
    for &(i, j) in &links {
        src_aligned[i] = true;
        tgt_aligned[j] = true;
    }

    loop {
        let mut added = false;
        for i in 0..n {
            for j in 0..m {
                if !links.contains(&(i, j)) {
                    continue;
                }
                for (di, dj) in NEIGHBORS {
                    let (ni, nj) = (i as isize + di, j as isize + dj);
                    if ni < 0 || nj < 0 || ni >= n as isize || nj >= m as isize {
                        continue;
                    }
                    let (ni, nj) = (ni as usize, nj as usize);
                    if (!src_aligned[ni] || !tgt_aligned[nj]) && union.contains(&(ni, nj)) && links.insert((ni, nj)) {
                        src_aligned[ni] = true;
                        tgt_aligned[nj] = true;
                        added = true;
                    }
                }
            }
        }
        if !added {
            break;
        }
    }

    for side in [fwd, bwd] {
        for &(i, j) in &side.links {
            if !src_aligned[i] && !tgt_aligned[j] {
                links.insert((i, j));
                src_aligned[i] = true;
                tgt_aligned[j] = true;
            }
        }
    }
    Ok(WordAlignment {
        src_len: n,
        tgt_len: m,
        links,
    })
}

/// Inclusive source and target spans of an extracted phrase pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpanPair {
    pub src: (usize, usize),
    pub tgt: (usize, usize),
}

/// All span pairs consistent with the alignment, both sides at most
/// `max_len` words, including extensions over unaligned target words.
pub fn extract_spans(alignment: &WordAlignment, max_len: usize) -> Vec<SpanPair> {
    let (n, m) = alignment.shape();
    let mut tgt_aligned = vec![false; m];
    let mut by_src: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut by_tgt: Vec<Vec<usize>> = vec![Vec::new(); m];
    for &(i, j) in &alignment.links {
        tgt_aligned[j] = true;
        by_src[i].push(j);
        by_tgt[j].push(i);
    }
    let mut out = Vec::new();
    for s1 in 0..n {
        for s2 in s1..n.min(s1 + max_len) {
            let mut tmin = usize::MAX;
            let mut tmax = 0;
            for links in &by_src[s1..=s2] {
                for &j in links {
                    tmin = tmin.min(j);
                    tmax = tmax.max(j);
                }
            }
            if tmin == usize::MAX || tmax - tmin + 1 > max_len {
                continue;
            }
            let consistent = (tmin..=tmax).all(|j| by_tgt[j].iter().all(|&i| (s1..=s2).contains(&i)));
            if !consistent {
                continue;
            }
            let mut t1 = tmin;
            loop {
                let mut t2 = tmax;
                while t2 - t1 < max_len {
                    out.push(SpanPair {
                        src: (s1, s2),
                        tgt: (t1, t2),
                    });
                    t2 += 1;
                    if t2 >= m || tgt_aligned[t2] {
                        break;
                    }
                }
                if t1 == 0 || tgt_aligned[t1 - 1] {
                    break;
                }
                t1 -= 1;
            }
        }
    }
    out.sort();
    out
}

/// Extracted phrase pairs as token phrases.
pub fn extract_phrases(
    src: &[String],
    tgt: &[String],
    alignment: &WordAlignment,
    max_len: usize,
) -> Vec<(Phrase, Phrase)> {
    extract_spans(alignment, max_len)
        .into_iter()
        .map(|sp| {
            (
                Phrase::new(src[sp.src.0..=sp.src.1].to_vec()),
                Phrase::new(tgt[sp.tgt.0..=sp.tgt.1].to_vec()),
            )
        })
        .collect()
}

/// Phrase-pair co-occurrence counts over extraction events.
///
/// Marginals are sums of the joint counts, and the total is the number of
/// extraction events, so `C(s,t) <= min(C(s), C(t)) <= N`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairCounts {
    joint: BTreeMap<(Vec<String>, Vec<String>), u64>,
    src: FxHashMap<Vec<String>, u64>,
    tgt: FxHashMap<Vec<String>, u64>,
    total: u64,
}

impl PairCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, src: &[String], tgt: &[String], count: u64) {
        *self.joint.entry((src.to_vec(), tgt.to_vec())).or_insert(0) += count;
        *self.src.entry(src.to_vec()).or_insert(0) += count;
        *self.tgt.entry(tgt.to_vec()).or_insert(0) += count;
        self.total += count;
    }

    pub fn joint(&self, src: &[String], tgt: &[String]) -> u64 {
        self.joint.get(&(src.to_vec(), tgt.to_vec())).copied().unwrap_or(0)
    }

    pub fn source(&self, src: &[String]) -> u64 {
        self.src.get(src).copied().unwrap_or(0)
    }

    pub fn target(&self, tgt: &[String]) -> u64 {
        self.tgt.get(tgt).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.joint.is_empty()
    }

    pub fn len(&self) -> usize {
        self.joint.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[String], &[String], u64)> {
        self.joint.iter().map(|((s, t), &c)| (s.as_slice(), t.as_slice(), c))
    }

    /// `src ||| tgt ||| c_st c_s c_t` per pair.
    pub fn write(&self, mut out: impl Write) -> io::Result<()> {
        for (s, t, c) in self.iter() {
            writeln!(
                out,
                "{} ||| {} ||| {} {} {}",
                s.join(" "),
                t.join(" "),
                c,
                self.source(s),
                self.target(t)
            )?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead) -> Result<Self, AlignError> {
        let mut counts = PairCounts::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: &str| AlignError::Parse {
                line: i + 1,
                message: message.to_string(),
            };
            let fields: Vec<&str> = line.split(" ||| ").collect();
            if fields.len() != 3 {
                return Err(err("expected 3 fields"));
            }
            let c: u64 = fields[2]
                .split_whitespace()
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| err("bad joint count"))?;
            let s = Phrase::from_spaced(fields[0]).into_tokens();
            let t = Phrase::from_spaced(fields[1]).into_tokens();
            counts.add(&s, &t, c);
        }
        Ok(counts)
    }
}

/// Symmetrized alignments and extraction for a whole corpus.
#[derive(Debug, Clone)]
pub struct AlignedCorpus {
    pub pairs: Vec<SentencePair>,
    pub alignments: Vec<WordAlignment>,
    /// t(target | source)
    pub forward: TTable,
    /// t(source | target)
    pub backward: TTable,
}

pub fn align_corpus(pairs: Vec<SentencePair>, config: &Ibm1Config) -> Result<AlignedCorpus, AlignError> {
    let forward = train_ibm1(&pairs, config)?;
    let swapped: Vec<SentencePair> = pairs.iter().map(|(s, t)| (t.clone(), s.clone())).collect();
    let backward = train_ibm1(&swapped, config)?;
    let alignments = pairs
        .par_iter()
        .map(|(s, t)| {
            let f = viterbi_align(&forward, s, t);
            let b = viterbi_align(&backward, t, s).transpose();
            symmetrize(&f, &b)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AlignedCorpus {
        pairs,
        alignments,
        forward,
        backward,
    })
}

pub fn count_pairs(aligned: &AlignedCorpus, max_len: usize) -> PairCounts {
    let extracted: Vec<Vec<(Phrase, Phrase)>> = aligned
        .pairs
        .par_iter()
        .zip(&aligned.alignments)
        .map(|((s, t), a)| extract_phrases(s, t, a, max_len))
        .collect();
    let mut counts = PairCounts::new();
    for sentence in extracted {
        for (s, t) in sentence {
            counts.add(s.tokens(), t.tokens(), 1);
        }
    }
    counts
}

/// Relative-frequency phrase probabilities and lexical weights from the two
/// word translation tables.
pub fn estimate_table(counts: &PairCounts, forward: &TTable, backward: &TTable) -> Result<PhraseTable, AlignError> {
    let mut by_src: BTreeMap<&[String], Vec<(PairScores, &[String])>> = BTreeMap::new();
    for (s, t, c) in counts.iter() {
        let c = c as f64;
        let lex_fwd = lexical_prob(s, t, |sw, tw| forward.prob(sw, tw))?;
        let lex_bwd = lexical_prob(t, s, |tw, sw| backward.prob(tw, sw))?;
        let scores = PairScores {
            p_fwd: c / counts.source(s) as f64,
            lex_fwd: lex_fwd.clamp(f64::MIN_POSITIVE, 1.0),
            p_bwd: c / counts.target(t) as f64,
            lex_bwd: lex_bwd.clamp(f64::MIN_POSITIVE, 1.0),
        };
        by_src.entry(s).or_default().push((scores, t));
    }
    let mut table = PhraseTable::new(Provenance::Estimated);
    for (s, mut list) in by_src {
        list.sort_by(|a, b| b.0.p_fwd.total_cmp(&a.0.p_fwd).then_with(|| a.1.cmp(b.1)));
        for (scores, t) in list {
            table.insert(Phrase::new(s.to_vec()), Phrase::new(t.to_vec()), scores)?;
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Orientation {
    Monotone,
    Swap,
    Discontinuous,
}

impl Orientation {
    pub fn index(self) -> usize {
        match self {
            Orientation::Monotone => 0,
            Orientation::Swap => 1,
            Orientation::Discontinuous => 2,
        }
    }

    /// Orientation of a phrase covering `next` placed right after one covering
    /// `prev` (inclusive source spans).
    pub fn between(prev: (usize, usize), next: (usize, usize)) -> Orientation {
        if next.0 == prev.1 + 1 {
            Orientation::Monotone
        } else if next.1 + 1 == prev.0 {
            Orientation::Swap
        } else {
            Orientation::Discontinuous
        }
    }
}

/// Per phrase pair: left-to-right (previous phrase) and right-to-left (next
/// phrase) distributions over monotone, swap and discontinuous.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReorderingModel {
    entries: BTreeMap<(Vec<String>, Vec<String>), [f64; 6]>,
}

impl ReorderingModel {
    pub fn get(&self, src: &[String], tgt: &[String]) -> Option<&[f64; 6]> {
        self.entries.get(&(src.to_vec(), tgt.to_vec()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[String], &[String], &[f64; 6])> {
        self.entries.iter().map(|((s, t), p)| (s.as_slice(), t.as_slice(), p))
    }

    pub fn retain_pairs(&mut self, table: &PhraseTable) {
        self.entries.retain(|(s, t), _| table.score(s, t).is_some());
    }

    pub fn write(&self, mut out: impl Write) -> io::Result<()> {
        for ((s, t), p) in &self.entries {
            writeln!(
                out,
                "{} ||| {} ||| {} {} {} {} {} {}",
                s.join(" "),
                t.join(" "),
                p[0],
                p[1],
                p[2],
                p[3],
                p[4],
                p[5]
            )?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead) -> Result<Self, AlignError> {
        let mut model = ReorderingModel::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: &str| AlignError::Parse {
                line: i + 1,
                message: message.to_string(),
            };
            let fields: Vec<&str> = line.split(" ||| ").collect();
            if fields.len() != 3 {
                return Err(err("expected 3 fields"));
            }
            let probs: Vec<f64> = fields[2]
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| err("bad probability")))
                .collect::<Result<_, _>>()?;
            let probs: [f64; 6] = probs.try_into().map_err(|_| err("expected 6 probabilities"))?;
            model.entries.insert(
                (
                    Phrase::from_spaced(fields[0]).into_tokens(),
                    Phrase::from_spaced(fields[1]).into_tokens(),
                ),
                probs,
            );
        }
        Ok(model)
    }
}

/// Word-based orientation of an extracted pair with respect to the phrases
/// before and after it in target order.
fn orientations(alignment: &WordAlignment, sp: SpanPair) -> (Orientation, Orientation) {
    let (n, m) = alignment.shape();
    let (s1, s2) = sp.src;
    let (t1, t2) = sp.tgt;
    let prev = if s1 == 0 && t1 == 0 {
        Orientation::Monotone
    } else if s1 > 0 && t1 > 0 && alignment.contains(s1 - 1, t1 - 1) {
        Orientation::Monotone
    } else if t1 > 0 && s2 + 1 < n && alignment.contains(s2 + 1, t1 - 1) {
        Orientation::Swap
    } else {
        Orientation::Discontinuous
    };
    let next = if s2 + 1 == n && t2 + 1 == m {
        Orientation::Monotone
    } else if s2 + 1 < n && t2 + 1 < m && alignment.contains(s2 + 1, t2 + 1) {
        Orientation::Monotone
    } else if s1 > 0 && t2 + 1 < m && alignment.contains(s1 - 1, t2 + 1) {
        Orientation::Swap
    } else {
        Orientation::Discontinuous
    };
    (prev, next)
}

/// Orientation counts per extracted pair, smoothed with `alpha` per outcome.
pub fn estimate_reordering(aligned: &AlignedCorpus, max_len: usize, alpha: f64) -> ReorderingModel {
    let mut counts: BTreeMap<(Vec<String>, Vec<String>), [u64; 6]> = BTreeMap::new();
    for ((s, t), a) in aligned.pairs.iter().zip(&aligned.alignments) {
        for sp in extract_spans(a, max_len) {
            let (prev, next) = orientations(a, sp);
            let key = (s[sp.src.0..=sp.src.1].to_vec(), t[sp.tgt.0..=sp.tgt.1].to_vec());
            let c = counts.entry(key).or_insert([0; 6]);
            c[prev.index()] += 1;
            c[3 + next.index()] += 1;
        }
    }
    let entries = counts
        .into_iter()
        .map(|(k, c)| (k, smooth_orientations(&c, alpha)))
        .collect();
    ReorderingModel { entries }
}

pub fn smooth_orientations(counts: &[u64; 6], alpha: f64) -> [f64; 6] {
    let mut out = [0.0; 6];
    for half in 0..2 {
        let c = &counts[half * 3..half * 3 + 3];
        let total: f64 = c.iter().map(|&x| x as f64).sum::<f64>() + 3.0 * alpha;
        for k in 0..3 {
            out[half * 3 + k] = if total > 0.0 {
                (c[k] as f64 + alpha) / total
            } else {
                1.0 / 3.0
            };
        }
    }
    out
}

/// Cached `ln k!` for Fisher's exact test.
#[derive(Debug, Clone)]
pub struct FisherTest {
    ln_fact: Vec<f64>,
}

impl FisherTest {
    pub fn new(max_n: u64) -> Self {
        let mut ln_fact = Vec::with_capacity(max_n as usize + 1);
        ln_fact.push(0.0);
        let mut acc = 0.0;
        for k in 1..=max_n {
            acc += (k as f64).ln();
            ln_fact.push(acc);
        }
        FisherTest { ln_fact }
    }

    fn ensure(&mut self, n: u64) {
        let mut acc = *self.ln_fact.last().expect("0! present");
        for k in self.ln_fact.len() as u64..=n {
            acc += (k as f64).ln();
            self.ln_fact.push(acc);
        }
    }

    fn ln_choose(&self, n: u64, k: u64) -> f64 {
        self.ln_fact[n as usize] - self.ln_fact[k as usize] - self.ln_fact[(n - k) as usize]
    }

    /// One-tailed `P(X >= c_st)` for the hypergeometric count of pairs.
    pub fn pvalue(&mut self, c_st: u64, c_s: u64, c_t: u64, n: u64) -> Result<f64, AlignError> {
        if c_st > c_s.min(c_t) || c_s.max(c_t) > n {
            return Err(AlignError::InconsistentCounts { c_st, c_s, c_t, n });
        }
        self.ensure(n);
        let lowest = (c_s + c_t).saturating_sub(n);
        if c_st <= lowest {
            return Ok(1.0);
        }
        let highest = c_s.min(c_t);
        let ln_total = self.ln_choose(n, c_t);
        let ln_term = |k: u64| self.ln_choose(c_s, k) + self.ln_choose(n - c_s, c_t - k) - ln_total;
        // terms decrease beyond the mode, so the tail can stop once negligible
        let mode = ((c_t + 1) as f64 * (c_s + 1) as f64 / (n + 2) as f64).floor() as u64;
        let first = ln_term(c_st);
        let mut sum = 1.0;
        for k in c_st + 1..=highest {
            let rel = (ln_term(k) - first).exp();
            sum += rel;
            if k > mode && rel < sum * 1e-17 {
                break;
            }
        }
        Ok((first.exp() * sum).min(1.0))
    }
}

pub fn fisher_pvalue(c_st: u64, c_s: u64, c_t: u64, n: u64) -> Result<f64, AlignError> {
    FisherTest::new(n).pvalue(c_st, c_s, c_t, n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneThreshold {
    /// drop pairs whose p-value exceeds this level
    PValue(f64),
    /// just below the p-value of a pair seen once with singleton marginals,
    /// so those pairs are dropped
    AlphaPlusEpsilon,
}

impl FromStr for PruneThreshold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "alpha+epsilon" => Ok(PruneThreshold::AlphaPlusEpsilon),
            v => match v.parse::<f64>() {
                Ok(p) if p > 0.0 && p <= 1.0 => Ok(PruneThreshold::PValue(p)),
                _ => Err(format!("expected alpha+epsilon or a p-value in (0, 1], found {v:?}")),
            },
        }
    }
}

impl fmt::Display for PruneThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PruneThreshold::AlphaPlusEpsilon => f.write_str("alpha+epsilon"),
            PruneThreshold::PValue(p) => write!(f, "{p}"),
        }
    }
}

impl PruneThreshold {
    pub fn resolve(self, total: u64) -> f64 {
        match self {
            PruneThreshold::PValue(p) => p,
            PruneThreshold::AlphaPlusEpsilon => (-(total.max(1) as f64).ln() - 1e-6).exp(),
        }
    }
}

/// Drop pairs whose co-occurrence is not significant at `threshold`.
pub fn prune(table: &PhraseTable, counts: &PairCounts, threshold: PruneThreshold) -> Result<PhraseTable, AlignError> {
    if table.provenance() != Provenance::Estimated {
        return Err(AlignError::PruneInduced(table.provenance()));
    }
    let n = counts.total();
    let level = threshold.resolve(n);
    let mut fisher = FisherTest::new(n);
    let mut keep = FxHashMap::default();
    for (s, entries) in table.iter() {
        for e in entries {
            let t = e.target.tokens();
            let c_st = counts.joint(s, t);
            if c_st == 0 {
                return Err(AlignError::MissingCounts(format!("{} ||| {}", s.join(" "), e.target)));
            }
            let p = fisher.pvalue(c_st, counts.source(s), counts.target(t), n)?;
            keep.insert((s.to_vec(), t.to_vec()), p <= level);
        }
    }
    let mut pruned = table.clone();
    pruned.retain(|s, e| keep[&(s.to_vec(), e.target.tokens().to_vec())]);
    Ok(pruned)
}
