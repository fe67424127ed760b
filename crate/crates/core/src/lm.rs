//! Backoff n-gram language models in ARPA form.
//!
//! Training uses interpolated modified Kneser-Ney. When count-of-count
//! statistics are too sparse to estimate discounts, training falls back to
//! add-k smoothing interpolated with the next lower order (plain add-k at
//! the unigram level). Either way the model is stored as explicit ARPA
//! entries, so a model read back from disk scores identically.

use std::io::{self, BufRead, Write};

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::vocab::Vocab;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Log probability written for `<s>`, which is never predicted.
const NEVER: f64 = -99.0;

#[derive(Debug, Error)]
pub enum LmError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("model order must be at least 1")]
    ZeroOrder,
    #[error("ARPA line {line}: {message}")]
    Arpa { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Smoothing {
    ModifiedKneserNey,
    /// add-k interpolated with the lower order
    AddK(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    log_prob: f64,
    backoff: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab: Vocab,
    bos: u32,
    eos: u32,
    unk: u32,
    /// `grams[n-1]` maps n-grams to their entries
    grams: Vec<FxHashMap<Vec<u32>, Entry>>,
    smoothing: Smoothing,
}

/// Raw n-gram counts over `<s> w1 .. wn </s>` padded sentences.
#[derive(Debug, Clone)]
pub struct NGramCounts {
    vocab: Vocab,
    counts: Vec<FxHashMap<Vec<u32>, u64>>,
}

impl NGramCounts {
    pub fn collect(corpus: &Corpus, order: usize) -> Result<Self, LmError> {
        if order == 0 {
            return Err(LmError::ZeroOrder);
        }
        if corpus.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let mut vocab = Vocab::new();
        vocab.intern(BOS);
        vocab.intern(EOS);
        vocab.intern(UNK);
        let mut counts = vec![FxHashMap::default(); order];
        let mut padded = Vec::new();
        for sentence in corpus.sentences() {
            padded.clear();
            padded.push(0);
            padded.extend(sentence.iter().map(|w| vocab.intern(w)));
            padded.push(1);
            for n in 1..=order {
                for w in padded.windows(n) {
                    *counts[n - 1].entry(w.to_vec()).or_insert(0) += 1;
                }
            }
        }
        Ok(NGramCounts { vocab, counts })
    }

    pub fn count(&self, words: &[&str]) -> u64 {
        let ids: Option<Vec<u32>> = words.iter().map(|w| self.vocab.get(w)).collect();
        ids.and_then(|ids| self.counts.get(ids.len().wrapping_sub(1))?.get(&ids).copied())
            .unwrap_or(0)
    }

    /// Sum of counts at `order`, boundary symbols included.
    pub fn total(&self, order: usize) -> u64 {
        self.counts[order - 1].values().sum()
    }

    /// Unsmoothed relative frequency of an n-gram among all n-grams of its order.
    pub fn relative_frequency(&self, words: &[&str]) -> f64 {
        self.count(words) as f64 / self.total(words.len()) as f64
    }
}

pub fn train_lm(corpus: &Corpus, order: usize) -> Result<NGramModel, LmError> {
    let counts = NGramCounts::collect(corpus, order)?;
    Ok(kneser_ney(&counts).unwrap_or_else(|| add_k(&counts, 0.1)))
}

/// Train with add-k smoothing regardless of corpus size.
pub fn train_lm_add_k(corpus: &Corpus, order: usize, k: f64) -> Result<NGramModel, LmError> {
    let counts = NGramCounts::collect(corpus, order)?;
    Ok(add_k(&counts, k))
}

/// Adjusted counts per order: raw counts at the top order and for n-grams
/// starting with `<s>`, continuation counts elsewhere. `<s>` alone is dropped.
fn adjusted_counts(counts: &NGramCounts) -> Vec<FxHashMap<Vec<u32>, u64>> {
    let order = counts.counts.len();
    let mut adjusted: Vec<FxHashMap<Vec<u32>, u64>> = vec![FxHashMap::default(); order];
    adjusted[order - 1] = counts.counts[order - 1].clone();
    for n in (1..order).rev() {
        let mut cont: FxHashMap<Vec<u32>, u64> = FxHashMap::default();
        for gram in counts.counts[n].keys() {
            *cont.entry(gram[1..].to_vec()).or_insert(0) += 1;
        }
        for (gram, &raw) in &counts.counts[n - 1] {
            let value = if gram[0] == 0 {
                raw
            } else {
                cont.get(gram).copied().unwrap_or(0)
            };
            adjusted[n - 1].insert(gram.clone(), value);
        }
    }
    adjusted[0].remove(&vec![0u32]);
    adjusted
}

/// Modified Kneser-Ney discounts for one order, or `None` when undefined.
fn discounts(adjusted: &FxHashMap<Vec<u32>, u64>) -> Option<[f64; 3]> {
    let mut n = [0u64; 4];
    for &c in adjusted.values() {
        if (1..=4).contains(&c) {
            n[c as usize - 1] += 1;
        }
    }
    if n.contains(&0) {
        return None;
    }
    let [n1, n2, n3, n4] = n.map(|x| x as f64);

    let y = n1 / (n1 + 2.0 * n2);
    let d = [
        1.0 - 2.0 * y * n2 / n1,
        2.0 - 3.0 * y * n3 / n2,
        3.0 - 4.0 * y * n4 / n3,
    ];
    let valid = d.iter().enumerate().all(|(i, &di)| di > 0.0 && di < (i + 1) as f64);
    valid.then_some(d)
}

fn kneser_ney(counts: &NGramCounts) -> Option<NGramModel> {
    let adjusted = adjusted_counts(counts);
    let ds: Vec<[f64; 3]> = adjusted.iter().map(discounts).collect::<Option<_>>()?;
    let discount = |n: usize, c: u64| match c {
        0 => 0.0,
        1 => ds[n - 1][0],
        2 => ds[n - 1][1],
        _ => ds[n - 1][2],
    };
    Some(NGramModel::interpolated(
        counts.vocab.clone(),
        &adjusted,
        Smoothing::ModifiedKneserNey,
        |n, followers, total| {
            let mass: f64 = followers.iter().map(|&c| discount(n, c)).sum();
            let alphas = followers.iter().map(|&c| (c as f64 - discount(n, c)) / total).collect();
            (alphas, mass / total)
        },
    ))
}

/// Add-k with `k|V|` pseudo-counts spread over the next lower order; exactly
/// add-k at the unigram level.
fn add_k(counts: &NGramCounts, k: f64) -> NGramModel {
    let mut raw = counts.counts.clone();
    raw[0].remove(&vec![0u32]);
    let v = (counts.vocab.len() - 1) as f64;
    NGramModel::interpolated(counts.vocab.clone(), &raw, Smoothing::AddK(k), |_, followers, total| {
        let denom = total + k * v;
        let alphas = followers.iter().map(|&c| c as f64 / denom).collect();
        (alphas, k * v / denom)
    })
}

impl NGramModel {
    /// Build ARPA entries for an interpolated estimator:
    /// `p(w|h) = alpha(hw) + gamma(h) * p(w|h')`, stored with backoff(h) = gamma(h).
    ///
    /// `weights(n, follower_counts, total)` returns the alphas of one history of
    /// order `n - 1` (followers in ascending id order) and its gamma. Unigrams
    /// interpolate with the uniform distribution over every word but `<s>`.
    fn interpolated(
        vocab: Vocab,
        grams: &[FxHashMap<Vec<u32>, u64>],
        smoothing: Smoothing,
        weights: impl Fn(usize, &[u64], f64) -> (Vec<f64>, f64),
    ) -> NGramModel {
        let order = grams.len();
        let v = (vocab.len() - 1) as f64;
        let mut model = NGramModel {
            order,
            vocab,
            bos: 0,
            eos: 1,
            unk: 2,
            grams: vec![FxHashMap::default(); order],
            smoothing,
        };
        for n in 1..=order {
            let mut by_history: FxHashMap<&[u32], Vec<(u32, u64)>> = FxHashMap::default();
            for (gram, &c) in &grams[n - 1] {
                by_history.entry(&gram[..n - 1]).or_default().push((gram[n - 1], c));
            }
            let mut histories: Vec<_> = by_history.into_iter().collect();
            histories.sort_by(|a, b| a.0.cmp(b.0));
            let mut level = FxHashMap::default();
            let mut level_gammas = Vec::with_capacity(histories.len());
            if n == 1 && histories.is_empty() {
                histories.push((&[], Vec::new()));
            }
            for (history, mut followers) in histories {
                followers.sort_unstable();
                let follower_counts: Vec<u64> = followers.iter().map(|&(_, c)| c).collect();
                let total: f64 = follower_counts.iter().map(|&c| c as f64).sum();
                let (alphas, gamma) = weights(n, &follower_counts, total);
                if n == 1 {
                    let seen: FxHashMap<u32, f64> = followers.iter().map(|&(w, _)| w).zip(alphas).collect();
                    for w in 1..model.vocab.len() as u32 {
                        let p = seen.get(&w).copied().unwrap_or(0.0) + gamma / v;
                        level.insert(
                            vec![w],
                            Entry {
                                log_prob: p.log10(),
                                backoff: 0.0,
                            },
                        );
                    }
                    level.insert(
                        vec![model.bos],
                        Entry {
                            log_prob: NEVER,
                            backoff: 0.0,
                        },
                    );
                } else {
                    for (&(w, _), alpha) in followers.iter().zip(alphas) {
                        let lower = 10f64.powf(model.log_prob_ids(&history[1..], w));
                        let mut gram = history.to_vec();
                        gram.push(w);
                        let p = alpha + gamma * lower;
                        level.insert(
                            gram,
                            Entry {
                                log_prob: p.log10(),
                                backoff: 0.0,
                            },
                        );
                    }
                    level_gammas.push((history.to_vec(), gamma));
                }
            }
            model.grams[n - 1] = level;
            // backoff weights live on the history n-gram one order down and
            // must be in place before the next order queries this one
            for (history, g) in level_gammas {
                if let Some(e) = model.grams[n - 2].get_mut(&history) {
                    e.backoff = g.log10();
                }
            }
        }
        model
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Id of a word, mapping unknown words to `<unk>`.
    pub fn id(&self, word: &str) -> u32 {
        self.vocab.get(word).unwrap_or(self.unk)
    }

    pub fn bos(&self) -> u32 {
        self.bos
    }

    pub fn eos(&self) -> u32 {
        self.eos
    }

    pub fn unk(&self) -> u32 {
        self.unk
    }

    /// `log10 p(word | context)`; only the last `order - 1` context ids matter.
    pub fn log_prob_ids(&self, context: &[u32], word: u32) -> f64 {
        let keep = context.len().min(self.order - 1);
        let mut context = &context[context.len() - keep..];
        let mut backoff = 0.0;
        let mut key: Vec<u32> = Vec::with_capacity(context.len() + 1);
        loop {
            key.clear();
            key.extend_from_slice(context);
            key.push(word);
            if let Some(e) = self.grams[context.len()].get(&key) {
                return backoff + e.log_prob;
            }
            if context.is_empty() {
                // only reachable for ids outside the vocabulary
                return backoff + self.grams[0][&vec![self.unk]].log_prob;
            }
            if let Some(h) = self.grams[context.len() - 1].get(context) {
                backoff += h.backoff;
            }
            context = &context[1..];
        }
    }

    pub fn log_prob(&self, context: &[&str], word: &str) -> f64 {
        let ids: Vec<u32> = context
            .iter()
            .map(|w| if *w == BOS { self.bos } else { self.id(w) })
            .collect();
        self.log_prob_ids(&ids, self.id(word))
    }

    /// Longest suffix of `context` that can still influence future predictions.
    pub fn state(&self, context: &[u32]) -> Vec<u32> {
        let keep = context.len().min(self.order.saturating_sub(1));
        context[context.len() - keep..].to_vec()
    }

    /// `log10` probability of a sentence, including the end-of-sentence transition.
    pub fn score_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> f64 {
        let mut context = vec![self.bos];
        let mut total = 0.0;
        for t in tokens {
            let w = self.id(t.as_ref());
            total += self.log_prob_ids(&context, w);
            context.push(w);
        }
        total + self.log_prob_ids(&context, self.eos)
    }

    pub fn write_arpa(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "\\data\\")?;
        for n in 1..=self.order {
            writeln!(out, "ngram {}={}", n, self.grams[n - 1].len())?;
        }
        for n in 1..=self.order {
            writeln!(out)?;
            writeln!(out, "\\{n}-grams:")?;
            let mut entries: Vec<(String, &Entry)> = self.grams[n - 1]
                .iter()
                .map(|(g, e)| {
                    let words: Vec<&str> = g.iter().map(|&w| self.vocab.word(w)).collect();
                    (words.join(" "), e)
                })
                .collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            for (words, e) in entries {
                if n < self.order && e.backoff != 0.0 {
                    writeln!(out, "{}\t{}\t{}", e.log_prob, words, e.backoff)?;
                } else {
                    writeln!(out, "{}\t{}", e.log_prob, words)?;
                }
            }
        }
        writeln!(out)?;
        writeln!(out, "\\end\\")?;
        Ok(())
    }

    pub fn read_arpa(reader: impl BufRead) -> Result<Self, LmError> {
        let mut declared: Vec<usize> = Vec::new();
        let mut vocab = Vocab::new();
        vocab.intern(BOS);
        vocab.intern(EOS);
        vocab.intern(UNK);
        let mut grams: Vec<FxHashMap<Vec<u32>, Entry>> = Vec::new();
        let mut section: Option<usize> = None;
        let mut seen_data = false;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let err = |message: &str| LmError::Arpa {
                line: lineno,
                message: message.to_string(),
            };
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if trimmed == "\\data\\" {
                seen_data = true;
                continue;
            }
            if trimmed == "\\end\\" {
                break;
            }
            if let Some(rest) = trimmed.strip_prefix("ngram ") {
                let (n, count) = rest.split_once('=').ok_or_else(|| err("bad ngram count line"))?;
                let n: usize = n.trim().parse().map_err(|_| err("bad order"))?;
                let count: usize = count.trim().parse().map_err(|_| err("bad count"))?;
                if n != declared.len() + 1 {
                    return Err(err("orders must be declared in sequence"));
                }
                declared.push(count);
                grams.push(FxHashMap::default());
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('\\') {
                let n: usize = rest
                    .strip_suffix("-grams:")
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(|| err("bad section header"))?;
                if n == 0 || n > declared.len() {
                    return Err(err("section for undeclared order"));
                }
                section = Some(n);
                continue;
            }
            let n = section.ok_or_else(|| err("entry outside an n-gram section"))?;
            if !seen_data {
                return Err(err("missing \\data\\ header"));
            }
            let fields: Vec<&str> = trimmed.split('\t').collect();
            let (prob, words, backoff) = match fields.as_slice() {
                [p, w] => (*p, *w, None),
                [p, w, b] => (*p, *w, Some(*b)),
                _ => {
                    // tolerate space-separated files
                    let parts: Vec<&str> = trimmed.split_whitespace().collect();
                    if parts.len() == n + 1 {
                        (parts[0], "", None)
                    } else {
                        return Err(err("expected tab-separated fields"));
                    }
                }
            };
            let ids: Vec<u32> = if words.is_empty() {
                let parts: Vec<&str> = trimmed.split_whitespace().collect();
                parts[1..].iter().map(|w| vocab.intern(w)).collect()
            } else {
                words.split(' ').map(|w| vocab.intern(w)).collect()
            };
            if ids.len() != n {
                return Err(err("n-gram length does not match section"));
            }
            let log_prob: f64 = prob.parse().map_err(|_| err("bad log probability"))?;
            let backoff: f64 = match backoff {
                Some(b) => b.parse().map_err(|_| err("bad backoff"))?,
                None => 0.0,
            };
            grams[n - 1].insert(ids, Entry { log_prob, backoff });
        }
        if declared.is_empty() {
            return Err(LmError::Arpa {
                line: 0,
                message: "no n-gram orders declared".into(),
            });
        }
        for (n, &count) in declared.iter().enumerate() {
            if grams[n].len() != count {
                return Err(LmError::Arpa {
                    line: 0,
                    message: format!("declared {count} {}-grams, found {}", n + 1, grams[n].len()),
                });
            }
        }
        if !grams[0].contains_key(&vec![2u32]) {
            return Err(LmError::Arpa {
                line: 0,
                message: "model has no <unk> unigram".into(),
            });
        }
        Ok(NGramModel {
            order: declared.len(),
            vocab,
            bos: 0,
            eos: 1,
            unk: 2,
            grams,
            smoothing: Smoothing::ModifiedKneserNey,
        })
    }
}

/// Length-normalized LM score `lm(S) / (len(S) + 1)`; higher is cleaner.
pub fn cleanliness<S: AsRef<str>>(model: &NGramModel, sentence: &[S]) -> f64 {
    normalized_score(model.score_sentence(sentence), sentence.len())
}

pub fn normalized_score(log_prob: f64, len: usize) -> f64 {
    log_prob / (len as f64 + 1.0)
}
