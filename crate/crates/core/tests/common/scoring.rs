//! Scoring functions against brute-force evaluation on random small inputs.

use std::collections::BTreeSet;

use monomt::corpus::{count, phrase_score};
use monomt::embedding::{topk_candidates, translation_prob, PhraseIndex};
use monomt::induction::{induce_table, lexical_prob, InductionConfig};
use monomt::lm::{cleanliness, train_lm, train_lm_add_k};
use monomt::{Corpus, EmbeddingSpace, Phrase, PhraseInventory};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

type Case = Result<(), TestCaseError>;
type Lines = Vec<Vec<String>>;
type Vectors = Vec<Vec<f64>>;

pub fn rel_close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1e-300)
}

fn sentences(words: usize) -> impl Strategy<Value = Lines> {
    proptest::collection::vec(
        proptest::collection::vec((0..words).prop_map(|i| format!("w{i}")), 1..8),
        1..12,
    )
}

fn corpus(lines: &[Vec<String>]) -> Corpus {
    Corpus::new("x", lines.to_vec())
}

pub fn phrase_score_input() -> impl Strategy<Value = (Lines, usize, usize, f64)> {
    (sentences(5), 0..5usize, 0..5usize, 0.0..20.0f64)
}

pub fn phrase_score_case((lines, a, b, delta): (Lines, usize, usize, f64)) -> Case {
    let (a, b) = (format!("w{a}"), format!("w{b}"));
    let mut fa = 0u64;
    let mut fb = 0u64;
    let mut fab = 0u64;
    for s in &lines {
        for i in 0..s.len() {
            fa += (s[i] == a) as u64;
            fb += (s[i] == b) as u64;
            if i + 1 < s.len() && s[i] == a && s[i + 1] == b {
                fab += 1;
            }
        }
    }
    let table = count(&corpus(&lines)).unwrap();
    let got = phrase_score(table.pair(&a, &b), table.unigram(&a), table.unigram(&b), delta);
    if fa == 0 || fb == 0 {
        prop_assert!(got.is_err());
    } else {
        let expected = (fab as f64 - delta) / (fa as f64 * fb as f64);
        prop_assert!(rel_close(got.unwrap(), expected));
    }
    Ok(())
}

fn vectors(n: usize, dim: usize) -> impl Strategy<Value = Vectors> {
    proptest::collection::vec(proptest::collection::vec(-1.0..1.0f64, dim), n).prop_filter("non-zero vectors", |vs| {
        vs.iter().all(|v| v.iter().any(|x| x.abs() > 0.05))
    })
}

fn space(lang: &str, prefix: &str, vs: &[Vec<f64>]) -> EmbeddingSpace {
    let mut s = EmbeddingSpace::new(lang, vs[0].len());
    for (i, v) in vs.iter().enumerate() {
        s.insert(&format!("{prefix}{i}"), v);
    }
    s
}

fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn summed(words: &[usize], vs: &[Vec<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; vs[0].len()];
    for &w in words {
        for (o, x) in out.iter_mut().zip(&vs[w]) {
            *o += x;
        }
    }
    out
}

fn naive_softmax(xs: &[f64], beta: f64) -> Vec<f64> {
    let z: f64 = xs.iter().map(|x| (beta * x).exp()).sum();
    xs.iter().map(|x| (beta * x).exp() / z).collect()
}

fn phrase_of(prefix: &str, words: &[usize]) -> Phrase {
    Phrase::new(words.iter().map(|w| format!("{prefix}{w}")).collect())
}

pub fn softmax_input() -> impl Strategy<Value = (Vectors, Vectors, Vec<usize>, Vec<Vec<usize>>, f64)> {
    (
        vectors(4, 5),
        vectors(6, 5),
        proptest::collection::vec(0..4usize, 1..3),
        proptest::collection::vec(proptest::collection::vec(0..6usize, 1..3), 1..6),
        0.5..40.0f64,
    )
}

pub fn softmax_case((src_vs, tgt_vs, src, cands, beta): (Vectors, Vectors, Vec<usize>, Vec<Vec<usize>>, f64)) -> Case {
    let (ss, ts) = (space("a", "s", &src_vs), space("b", "t", &tgt_vs));
    let s = summed(&src, &src_vs);
    let cosines: Vec<f64> = cands.iter().map(|c| naive_cosine(&s, &summed(c, &tgt_vs))).collect();
    prop_assume!(cosines.iter().all(|c| c.is_finite()));
    let expected = naive_softmax(&cosines, beta);
    let phrases: Vec<Phrase> = cands.iter().map(|c| phrase_of("t", c)).collect();
    let got = translation_prob(&phrase_of("s", &src), &phrases, &ss, &ts, beta).unwrap();
    prop_assert_eq!(got.len(), expected.len());
    for (g, e) in got.iter().zip(&expected) {
        prop_assert!(rel_close(*g, *e), "{} vs {}", g, e);
    }
    Ok(())
}

pub fn topk_input() -> impl Strategy<Value = (Vectors, Vectors, usize, f64)> {
    (vectors(1, 4), vectors(12, 4), 1..15usize, 0.5..40.0f64)
}

pub fn topk_case((src_vs, tgt_vs, k, beta): (Vectors, Vectors, usize, f64)) -> Case {
    let (ss, ts) = (space("a", "s", &src_vs), space("b", "t", &tgt_vs));
    let mut all: Vec<(f64, String)> = (0..tgt_vs.len())
        .map(|j| (naive_cosine(&src_vs[0], &tgt_vs[j]), format!("t{j}")))
        .collect();
    all.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then_with(|| x.1.cmp(&y.1)));
    all.truncate(k);
    let expected = naive_softmax(&all.iter().map(|x| x.0).collect::<Vec<_>>(), beta);

    let targets: Vec<Phrase> = (0..tgt_vs.len()).map(|j| Phrase::word(&format!("t{j}"))).collect();
    let index = PhraseIndex::build(&targets, &ts).unwrap();
    let got = topk_candidates(&Phrase::word("s0"), &index, &ss, k, beta).unwrap();
    prop_assert_eq!(got.candidates.len(), all.len());
    for ((c, p), (cos, name)) in got.candidates.iter().zip(&expected).zip(&all) {
        prop_assert_eq!(&c.target.spaced(), name);
        prop_assert!(rel_close(c.cosine, *cos));
        prop_assert!(rel_close(c.prob, *p));
    }
    Ok(())
}

pub fn lexical_input() -> impl Strategy<Value = Vectors> {
    proptest::collection::vec(proptest::collection::vec(0.001..1.0f64, 1..5), 1..5)
}

pub fn lexical_case(probs: Vectors) -> Case {
    let l = probs.len();
    let k = probs.iter().map(Vec::len).min().unwrap();
    let src: Vec<String> = (0..l).map(|i| format!("s{i}")).collect();
    let tgt: Vec<String> = (0..k).map(|j| format!("t{j}")).collect();
    let lookup = |s: &str, t: &str| probs[s[1..].parse::<usize>().unwrap()][t[1..].parse::<usize>().unwrap()];
    let mut expected = 1.0;
    for row in &probs {
        let mut best = 0.0f64;
        for p in &row[..k] {
            if *p > best {
                best = *p;
            }
        }
        expected *= best;
    }
    expected /= l as f64;
    let got = lexical_prob(&src, &tgt, lookup).unwrap();
    prop_assert!(rel_close(got, expected), "{} vs {}", got, expected);
    Ok(())
}

type PhraseSet = BTreeSet<Vec<usize>>;

pub fn induced_input() -> impl Strategy<Value = (Vectors, Vectors, PhraseSet, PhraseSet, f64)> {
    (
        vectors(3, 4),
        vectors(4, 4),
        proptest::collection::btree_set(proptest::collection::vec(0..3usize, 1..3), 1..4),
        proptest::collection::btree_set(proptest::collection::vec(0..4usize, 1..3), 1..5),
        0.5..40.0f64,
    )
}

/// With the word-candidate cap above the vocabulary size, every
/// word-level probability is the full softmax.
pub fn induced_case(
    (src_vs, tgt_vs, src_phrases, tgt_phrases, beta): (Vectors, Vectors, PhraseSet, PhraseSet, f64),
) -> Case {
    let (ss, ts) = (space("a", "s", &src_vs), space("b", "t", &tgt_vs));
    let inv =
        |prefix: &str, ps: &PhraseSet| PhraseInventory::new(ps.iter().map(|p| (phrase_of(prefix, p), 1)).collect(), 2);
    let (si, ti) = (inv("s", &src_phrases), inv("t", &tgt_phrases));
    let words = |ps: &PhraseSet| {
        let mut w: Vec<usize> = ps.iter().flatten().copied().collect();
        w.sort_unstable();
        w.dedup();
        w
    };
    let (sw, tw) = (words(&src_phrases), words(&tgt_phrases));
    let word_prob = |given: usize, given_vs: &[Vec<f64>], pred: usize, pred_vs: &[Vec<f64>], vocab: &[usize]| {
        let z: f64 = vocab
            .iter()
            .map(|&v| (beta * naive_cosine(&given_vs[given], &pred_vs[v])).exp())
            .sum();
        (beta * naive_cosine(&given_vs[given], &pred_vs[pred])).exp() / z
    };
    let config = InductionConfig {
        k: 10,
        beta,
        word_candidates: 100,
    };
    let table = induce_table(&si, &ti, &ss, &ts, &config).unwrap();
    for s in &src_phrases {
        let entries = table.get(phrase_of("s", s).tokens()).unwrap();
        prop_assert_eq!(entries.len(), tgt_phrases.len());
        for t in &tgt_phrases {
            let e = entries.iter().find(|e| e.target == phrase_of("t", t)).unwrap();
            let fwd = s
                .iter()
                .map(|&a| {
                    t.iter()
                        .map(|&b| word_prob(a, &src_vs, b, &tgt_vs, &tw))
                        .fold(0.0, f64::max)
                })
                .product::<f64>()
                / s.len() as f64;
            let bwd = t
                .iter()
                .map(|&b| {
                    s.iter()
                        .map(|&a| word_prob(b, &tgt_vs, a, &src_vs, &sw))
                        .fold(0.0, f64::max)
                })
                .product::<f64>()
                / t.len() as f64;
            prop_assert!(rel_close(e.scores.lex_fwd, fwd), "{} vs {}", e.scores.lex_fwd, fwd);
            prop_assert!(rel_close(e.scores.lex_bwd, bwd), "{} vs {}", e.scores.lex_bwd, bwd);
        }
    }
    Ok(())
}

pub fn unigram_input() -> impl Strategy<Value = (Lines, Vec<String>, f64)> {
    (
        sentences(6),
        proptest::collection::vec((0..8usize).prop_map(|i| format!("w{i}")), 0..8),
        0.01..2.0f64,
    )
}

/// A unigram add-k model has a closed form: (c(w) + k) / (T + kV), with
/// `</s>` and `<unk>` in the vocabulary and one `</s>` per sentence.
pub fn unigram_case((lines, query, k): (Lines, Vec<String>, f64)) -> Case {
    let mut counts = std::collections::BTreeMap::<&str, f64>::new();
    let mut total = 0.0;
    for s in &lines {
        for w in s {
            *counts.entry(w.as_str()).or_default() += 1.0;
            total += 1.0;
        }
    }
    let eos = lines.len() as f64;
    let v = counts.len() as f64 + 2.0;
    let denom = total + eos + k * v;
    let mut log_prob = ((eos + k) / denom).log10();
    for w in &query {
        let c = counts.get(w.as_str()).copied().unwrap_or(0.0);
        log_prob += ((c + k) / denom).log10();
    }
    let expected = log_prob / (query.len() as f64 + 1.0);
    let lm = train_lm_add_k(&corpus(&lines), 1, k).unwrap();
    let got = cleanliness(&lm, &query);
    prop_assert!(rel_close(got, expected), "{} vs {}", got, expected);
    Ok(())
}

pub fn chain_input() -> impl Strategy<Value = (Lines, Vec<String>, usize, bool)> {
    (
        sentences(4),
        proptest::collection::vec((0..5usize).prop_map(|i| format!("w{i}")), 0..8),
        1..5usize,
        any::<bool>(),
    )
}

/// For any order and smoother: the sum of per-word conditionals, divided
/// by the token count plus one.
pub fn chain_case((lines, query, order, kn): (Lines, Vec<String>, usize, bool)) -> Case {
    let c = corpus(&lines);
    let lm = if kn {
        train_lm(&c, order).unwrap()
    } else {
        train_lm_add_k(&c, order, 0.5).unwrap()
    };
    let mut history: Vec<&str> = vec!["<s>"];
    let mut total = 0.0;
    for w in query.iter().map(String::as_str).chain(["</s>"]) {
        total += lm.log_prob(&history, w);
        history.push(w);
    }
    let expected = total / (query.len() as f64 + 1.0);
    prop_assert!(rel_close(cleanliness(&lm, &query), expected));
    Ok(())
}
