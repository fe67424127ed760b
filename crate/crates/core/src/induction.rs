//! Iteration-0 phrase table induced from monolingual inventories and
//! cross-lingual embeddings.
//!
//! For every source phrase the `k` nearest target phrases are kept, scored
//! with the cosine softmax in both directions, and with lexical weights
//! composed from word-level cosine-softmax probabilities.

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::corpus::PhraseInventory;
use crate::embedding::{self, EmbeddingError, EmbeddingSpace, PhraseIndex};
use crate::phrase::Phrase;
pub use crate::table::{PairScores, PhraseTable, Provenance, TableEntry, TableError};

#[derive(Debug, Error)]
pub enum InductionError {
    #[error("lexical probability of an empty phrase")]
    EmptyPhrase,
    #[error("inventory is empty")]
    EmptyInventory,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Table(#[from] TableError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InductionConfig {
    /// candidates kept per source phrase
    pub k: usize,
    pub beta: f64,
    /// size of the word-level candidate set normalizing lexical probabilities
    pub word_candidates: usize,
}

impl Default for InductionConfig {
    fn default() -> Self {
        InductionConfig {
            k: 300,
            beta: 30.0,
            word_candidates: 300,
        }
    }
}

/// `lex(t|s) = 1/L * prod_l max_k p(t_k | s_l)` with no threshold on `p`.
pub fn lexical_prob<S: AsRef<str>, T: AsRef<str>>(
    src: &[S],
    tgt: &[T],
    word_prob: impl Fn(&str, &str) -> f64,
) -> Result<f64, InductionError> {
    if src.is_empty() || tgt.is_empty() {
        return Err(InductionError::EmptyPhrase);
    }
    let product: f64 = src
        .iter()
        .map(|s| {
            tgt.iter()
                .map(|t| word_prob(s.as_ref(), t.as_ref()))
                .fold(0.0, f64::max)
        })
        .product();
    Ok(product / src.len() as f64)
}

/// Word translation probabilities from embeddings. The normalizer of each
/// conditioning word covers its `cap` nearest words on the other side; words
/// outside that set still get `exp(beta*cos)` over the same normalizer, which
/// stays in (0, 1] because the nearest word is always inside.
#[derive(Debug, Clone)]
pub struct WordTranslationModel {
    beta: f64,
    given: FxHashMap<String, usize>,
    given_units: PhraseIndex,
    predicted: FxHashMap<String, usize>,
    predicted_units: PhraseIndex,
    /// per conditioning word: (max cosine, sum of exp(beta*(cos - max)))
    normalizers: Vec<(f64, f64)>,
}

impl WordTranslationModel {
    pub fn build(
        given_words: &[String],
        given_space: &EmbeddingSpace,
        predicted_words: &[String],
        predicted_space: &EmbeddingSpace,
        beta: f64,
        cap: usize,
    ) -> Result<Self, InductionError> {
        if given_words.is_empty() || predicted_words.is_empty() {
            return Err(InductionError::EmptyInventory);
        }
        let given_phrases: Vec<Phrase> = given_words.iter().map(|w| Phrase::word(w)).collect();
        let predicted_phrases: Vec<Phrase> = predicted_words.iter().map(|w| Phrase::word(w)).collect();
        let given_units = PhraseIndex::build(&given_phrases, given_space)?;
        let predicted_units = PhraseIndex::build(&predicted_phrases, predicted_space)?;
        let normalizers = (0..given_units.len())
            .into_par_iter()
            .map(|i| {
                let best = predicted_units.nearest(given_units.unit(i), cap);
                let max = best[0].1;
                let z: f64 = best.iter().map(|&(_, c)| (beta * (c - max)).exp()).sum();
                (max, z)
            })
            .collect();
        let index = |words: &[String]| words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Ok(WordTranslationModel {
            beta,
            given: index(given_words),
            given_units,
            predicted: index(predicted_words),
            predicted_units,
            normalizers,
        })
    }

    /// `p(predicted | given)`; zero when either word is unknown.
    pub fn prob(&self, given: &str, predicted: &str) -> f64 {
        let (Some(&g), Some(&p)) = (self.given.get(given), self.predicted.get(predicted)) else {
            return 0.0;
        };
        let cos = embedding::dot_product(self.given_units.unit(g), self.predicted_units.unit(p));
        let (max, z) = self.normalizers[g];
        ((self.beta * (cos - max)).exp() / z).min(1.0)
    }
}

fn component_words(inventory: &PhraseInventory) -> Vec<String> {
    let mut words: Vec<String> = inventory.phrases().flat_map(|p| p.tokens().iter().cloned()).collect();
    words.sort();
    words.dedup();
    words
}

/// Build the induced table: `min(k, |targets|)` candidates for every source phrase.
///
/// The backward probability of a pair normalizes over the source phrases
/// that kept the same target among their candidates.
pub fn induce_table(
    src_inventory: &PhraseInventory,
    tgt_inventory: &PhraseInventory,
    src_space: &EmbeddingSpace,
    tgt_space: &EmbeddingSpace,
    config: &InductionConfig,
) -> Result<PhraseTable, InductionError> {
    if src_inventory.is_empty() || tgt_inventory.is_empty() {
        return Err(InductionError::EmptyInventory);
    }
    let sources = PhraseIndex::from_inventory(src_inventory, src_space)?;
    let targets = PhraseIndex::from_inventory(tgt_inventory, tgt_space)?;

    let forward: Vec<Vec<(usize, f64)>> = (0..sources.len())
        .into_par_iter()
        .map(|i| targets.nearest(sources.unit(i), config.k))
        .collect();

    // backward normalizers over the sources that retained each target
    let mut retained_by: Vec<Vec<f64>> = vec![Vec::new(); targets.len()];
    for cands in &forward {
        for &(t, cos) in cands {
            retained_by[t].push(cos);
        }
    }
    let backward_norm: Vec<(f64, f64)> = retained_by
        .iter()
        .map(|cosines| {
            if cosines.is_empty() {
                return (0.0, 1.0);
            }
            let max = cosines.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z = cosines.iter().map(|c| (config.beta * (c - max)).exp()).sum();
            (max, z)
        })
        .collect();

    let src_words = component_words(src_inventory);
    let tgt_words = component_words(tgt_inventory);
    let fwd_words = WordTranslationModel::build(
        &src_words,
        src_space,
        &tgt_words,
        tgt_space,
        config.beta,
        config.word_candidates,
    )?;
    let bwd_words = WordTranslationModel::build(
        &tgt_words,
        tgt_space,
        &src_words,
        src_space,
        config.beta,
        config.word_candidates,
    )?;

    let rows: Vec<Vec<(Phrase, PairScores)>> = forward
        .par_iter()
        .enumerate()
        .map(|(i, cands)| {
            let src = sources.phrase(i);
            let cosines: Vec<f64> = cands.iter().map(|&(_, c)| c).collect();
            let p_fwd = embedding::softmax_scaled(&cosines, config.beta);
            cands
                .iter()
                .zip(p_fwd)
                .map(|(&(t, cos), p_fwd)| {
                    let tgt = targets.phrase(t);
                    let (max, z) = backward_norm[t];
                    let p_bwd = (config.beta * (cos - max)).exp() / z;
                    let lex_fwd = lexical_prob(src.tokens(), tgt.tokens(), |s, w| fwd_words.prob(s, w))?;
                    let lex_bwd = lexical_prob(tgt.tokens(), src.tokens(), |t, w| bwd_words.prob(t, w))?;
                    Ok((
                        tgt.clone(),
                        PairScores {
                            p_fwd,
                            lex_fwd,
                            p_bwd: p_bwd.min(1.0),
                            lex_bwd,
                        },
                    ))
                })
                .collect::<Result<Vec<_>, InductionError>>()
        })
        .collect::<Result<_, _>>()?;

    let mut table = PhraseTable::new(Provenance::Induced);
    for (i, row) in rows.into_iter().enumerate() {
        for (tgt, scores) in row {
            table.insert(sources.phrase(i).clone(), tgt, scores)?;
        }
    }
    Ok(table)
}
