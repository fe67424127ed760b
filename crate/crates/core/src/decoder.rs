//! Log-linear phrase-based stack decoder.
//!
//! Features follow the usual toolkit sign convention so that every default
//! weight in [`FeatureWeights::default`] is meaningful as given: table and LM
//! features are natural-log probabilities, distortion is the negated sum of
//! jumps between consecutive phrases, word penalty is the negated target
//! length, phrase penalty counts phrases and the unknown-word feature is the
//! negated number of copied-through words.

use std::cmp::Ordering;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::align::{Orientation, ReorderingModel};
use crate::lm::NGramModel;
use crate::table::PhraseTable;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("trace does not cover source position {0} exactly once")]
    Coverage(usize),
    #[error("trace span {0}-{1} is outside a source of length {2}")]
    SpanOutOfRange(usize, usize, usize),
    #[error("phrase pair {src:?} ||| {tgt:?} is not in the table")]
    UnknownPair { src: String, tgt: String },
    #[error("unknown-word step {0:?} must copy a single untranslatable word")]
    BadUnknown(String),
    #[error("weight vector has {found} entries, expected {expected}")]
    WeightCount { expected: usize, found: usize },
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("weight {0} is not finite")]
    NonFinite(String),
    #[error("bad trace field {0:?}")]
    TraceParse(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const BASE_FEATURES: [&str; 9] = [
    "p_fwd",
    "lex_fwd",
    "p_bwd",
    "lex_bwd",
    "lm",
    "distortion",
    "word_penalty",
    "phrase_penalty",
    "unknown",
];

pub const REORDERING_FEATURES: [&str; 6] = ["lr_mono", "lr_swap", "lr_disc", "rl_mono", "rl_swap", "rl_disc"];

const LM: usize = 4;
const DISTORTION: usize = 5;
const WORD_PENALTY: usize = 6;
const PHRASE_PENALTY: usize = 7;
const UNKNOWN: usize = 8;
const LR: usize = 9;
const RL: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWeights {
    pub table: [f64; 4],
    pub lm: f64,
    pub distortion: f64,
    pub word_penalty: f64,
    pub phrase_penalty: f64,
    pub unknown: f64,
    pub reordering: [f64; 6],
}

impl Default for FeatureWeights {
    fn default() -> Self {
        FeatureWeights {
            table: [0.2; 4],
            lm: 0.5,
            distortion: 0.3,
            word_penalty: -1.0,
            phrase_penalty: 0.2,
            unknown: 1.0,
            reordering: [0.3; 6],
        }
    }
}

impl FeatureWeights {
    pub fn names(reordering: bool) -> Vec<&'static str> {
        let mut names = BASE_FEATURES.to_vec();
        if reordering {
            names.extend(REORDERING_FEATURES);
        }
        names
    }

    /// All fifteen weights, reordering last.
    fn full(&self) -> [f64; 15] {
        let mut w = [0.0; 15];
        w[..4].copy_from_slice(&self.table);
        w[LM] = self.lm;
        w[DISTORTION] = self.distortion;
        w[WORD_PENALTY] = self.word_penalty;
        w[PHRASE_PENALTY] = self.phrase_penalty;
        w[UNKNOWN] = self.unknown;
        w[LR..].copy_from_slice(&self.reordering);
        w
    }

    fn set_full(&mut self, i: usize, v: f64) {
        match i {
            0..=3 => self.table[i] = v,
            LM => self.lm = v,
            DISTORTION => self.distortion = v,
            WORD_PENALTY => self.word_penalty = v,
            PHRASE_PENALTY => self.phrase_penalty = v,
            UNKNOWN => self.unknown = v,
            _ => self.reordering[i - LR] = v,
        }
    }

    pub fn to_vec(&self, reordering: bool) -> Vec<f64> {
        let n = if reordering { 15 } else { 9 };
        self.full()[..n].to_vec()
    }

    pub fn from_vec(values: &[f64], reordering: bool) -> Result<Self, DecodeError> {
        let expected = if reordering { 15 } else { 9 };
        if values.len() != expected {
            return Err(DecodeError::WeightCount {
                expected,
                found: values.len(),
            });
        }
        let mut w = FeatureWeights::default();
        for (i, &v) in values.iter().enumerate() {
            w.set_full(i, v);
        }
        w.validate()?;
        Ok(w)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        let i = Self::names(true).iter().position(|n| *n == name)?;
        Some(self.full()[i])
    }

    pub fn set(&mut self, name: &str, value: f64) -> Result<(), DecodeError> {
        let i = Self::names(true)
            .iter()
            .position(|n| *n == name)
            .ok_or_else(|| DecodeError::UnknownFeature(name.to_string()))?;
        if !value.is_finite() {
            return Err(DecodeError::NonFinite(name.to_string()));
        }
        self.set_full(i, value);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        for (name, v) in Self::names(true).iter().zip(self.full()) {
            if !v.is_finite() {
                return Err(DecodeError::NonFinite(name.to_string()));
            }
        }
        Ok(())
    }

    /// Weighted sum; `features` has 9 or 15 entries.
    pub fn dot(&self, features: &[f64]) -> f64 {
        self.full().iter().zip(features).map(|(w, f)| w * f).sum()
    }
}

impl fmt::Display for FeatureWeights {
    /// `name=value` pairs separated by spaces, all fifteen weights.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (name, v)) in Self::names(true).iter().zip(self.full()).enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{name}={v}")?;
        }
        Ok(())
    }
}

impl FromStr for FeatureWeights {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut w = FeatureWeights::default();
        for field in s.split_whitespace() {
            let (name, value) = field
                .split_once('=')
                .ok_or_else(|| DecodeError::UnknownFeature(field.to_string()))?;
            let value: f64 = value.parse().map_err(|_| DecodeError::NonFinite(field.to_string()))?;
            w.set(name, value)?;
        }
        Ok(w)
    }
}

#[derive(Debug, Clone)]
pub struct TranslationSystem {
    pub table: PhraseTable,
    pub reordering: Option<ReorderingModel>,
    pub lm: NGramModel,
    pub weights: FeatureWeights,
    pub distortion_limit: usize,
    /// translation options kept per source span
    pub max_options: usize,
}

impl TranslationSystem {
    pub fn new(table: PhraseTable, lm: NGramModel) -> Self {
        TranslationSystem {
            table,
            reordering: None,
            lm,
            weights: FeatureWeights::default(),
            distortion_limit: 6,
            max_options: 20,
        }
    }

    pub fn feature_count(&self) -> usize {
        if self.reordering.is_some() {
            15
        } else {
            9
        }
    }

    pub fn feature_names(&self) -> Vec<&'static str> {
        FeatureWeights::names(self.reordering.is_some())
    }
}

/// One phrase of a derivation, in target order. Spans are inclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStep {
    pub src: (usize, usize),
    pub target: Vec<String>,
    pub unknown: bool,
}

impl fmt::Display for TraceStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.unknown {
            f.write_str("*")?;
        }
        write!(f, "{}-{}:{}", self.src.0, self.src.1, self.target.join(" "))
    }
}

impl FromStr for TraceStep {
    type Err = DecodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DecodeError::TraceParse(s.to_string());
        let (unknown, rest) = match s.strip_prefix('*') {
            Some(rest) => (true, rest),
            None => (false, s),
        };
        let (span, target) = rest.split_once(':').ok_or_else(bad)?;
        let (a, b) = span.split_once('-').ok_or_else(bad)?;
        let src = (a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?);
        let target: Vec<String> = target.split_whitespace().map(str::to_string).collect();
        if target.is_empty() || src.0 > src.1 {
            return Err(bad());
        }
        Ok(TraceStep { src, target, unknown })
    }
}

/// Tab-separated steps.
pub fn format_trace(trace: &[TraceStep]) -> String {
    trace.iter().map(ToString::to_string).collect::<Vec<_>>().join("\t")
}

pub fn parse_trace(line: &str) -> Result<Vec<TraceStep>, DecodeError> {
    line.split('\t').filter(|f| !f.is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedSentence {
    pub tokens: Vec<String>,
    pub score: f64,
    pub features: Vec<f64>,
    pub trace: Vec<TraceStep>,
}

/// Distance between consecutive phrases: `|start - previous end - 1|`.
pub fn jump(prev: (usize, usize), next: (usize, usize)) -> usize {
    (next.0 as isize - prev.1 as isize - 1).unsigned_abs()
}

/// Sum of jumps between consecutive phrases of a derivation.
pub fn jump_distance(trace: &[TraceStep]) -> usize {
    trace.windows(2).map(|w| jump(w[0].src, w[1].src)).sum()
}

fn orientation_before(prev: Option<(usize, usize)>, cur: (usize, usize)) -> Orientation {
    match prev {
        None if cur.0 == 0 => Orientation::Monotone,
        None => Orientation::Discontinuous,
        Some(p) => Orientation::between(p, cur),
    }
}

fn orientation_at_end(cur: (usize, usize), n: usize) -> Orientation {
    if cur.1 + 1 == n {
        Orientation::Monotone
    } else {
        Orientation::Discontinuous
    }
}

const UNIFORM_ORIENTATION: [f64; 6] = [1.0 / 3.0; 6];

fn reordering_probs<'a>(model: &'a ReorderingModel, src: &[String], tgt: &[String]) -> &'a [f64; 6] {
    model.get(src, tgt).unwrap_or(&UNIFORM_ORIENTATION)
}

/// Feature vector of a derivation.
pub fn score_features(
    source: &[String],
    trace: &[TraceStep],
    system: &TranslationSystem,
) -> Result<Vec<f64>, DecodeError> {
    let n = source.len();
    let mut covered = vec![false; n];
    for step in trace {
        let (a, b) = step.src;
        if a > b || b >= n {
            return Err(DecodeError::SpanOutOfRange(a, b, n));
        }
        for (i, c) in covered.iter_mut().enumerate().take(b + 1).skip(a) {
            if *c {
                return Err(DecodeError::Coverage(i));
            }
            *c = true;
        }
    }
    if let Some(i) = covered.iter().position(|c| !c) {
        return Err(DecodeError::Coverage(i));
    }

    let mut f = vec![0.0; system.feature_count()];
    let mut target: Vec<&str> = Vec::new();
    let mut prev: Option<(usize, usize)> = None;
    let mut prev_probs: Option<&[f64; 6]> = None;
    for step in trace {
        let src = &source[step.src.0..=step.src.1];
        if step.unknown {
            if src.len() != 1 || step.target != src || system.table.get(src).is_some() {
                return Err(DecodeError::BadUnknown(step.to_string()));
            }
            f[UNKNOWN] -= 1.0;
        } else {
            let scores = system
                .table
                .score(src, &step.target)
                .ok_or_else(|| DecodeError::UnknownPair {
                    src: src.join(" "),
                    tgt: step.target.join(" "),
                })?;
            for (k, p) in scores.as_array().iter().enumerate() {
                f[k] += p.ln();
            }
        }
        f[WORD_PENALTY] -= step.target.len() as f64;
        f[PHRASE_PENALTY] += 1.0;
        if let Some(p) = prev {
            f[DISTORTION] -= jump(p, step.src) as f64;
        }
        if let Some(model) = &system.reordering {
            let probs = if step.unknown {
                &UNIFORM_ORIENTATION
            } else {
                reordering_probs(model, src, &step.target)
            };
            let o = orientation_before(prev, step.src).index();
            f[LR + o] += probs[o].ln();
            if let (Some(p), Some(pp)) = (prev, prev_probs) {
                let o = Orientation::between(p, step.src).index();
                f[RL + o] += pp[3 + o].ln();
            }
            prev_probs = Some(probs);
        }
        prev = Some(step.src);
        target.extend(step.target.iter().map(String::as_str));
    }
    if let (Some(p), Some(pp)) = (prev, prev_probs) {
        let o = orientation_at_end(p, n).index();
        f[RL + o] += pp[3 + o].ln();
    }
    f[LM] = system.lm.score_sentence(&target) * std::f64::consts::LN_10;
    Ok(f)
}

struct TransOption {
    span: (usize, usize),
    target: Vec<String>,
    lm_ids: Vec<u32>,
    /// weighted table, word, phrase and unknown-word features
    static_score: f64,
    reordering: [f64; 6],
    unknown: bool,
}

fn collect_options(source: &[String], system: &TranslationSystem) -> (Vec<TransOption>, Vec<Vec<f64>>) {
    let n = source.len();
    let w = &system.weights;
    let lm = &system.lm;
    let max_len = system.table.max_source_len().max(1);
    let mut options = Vec::new();
    // best option estimate per span, including an LM score without context
    let mut best = vec![vec![f64::NEG_INFINITY; n]; n];
    let lm_estimate = |ids: &[u32]| -> f64 {
        (0..ids.len()).map(|k| lm.log_prob_ids(&ids[..k], ids[k])).sum::<f64>() * std::f64::consts::LN_10
    };
    for i in 0..n {
        for j in i..n.min(i + max_len) {
            let src = &source[i..=j];
            let mut span_opts: Vec<(f64, TransOption)> = Vec::new();
            match system.table.get(src) {
                Some(entries) => {
                    for e in entries {
                        let tgt = e.target.tokens();
                        let table: f64 = e
                            .scores
                            .as_array()
                            .iter()
                            .zip(&w.table)
                            .map(|(p, wt)| wt * p.ln())
                            .sum();
                        let static_score = table + w.word_penalty * -(tgt.len() as f64) + w.phrase_penalty;
                        let lm_ids: Vec<u32> = tgt.iter().map(|t| lm.id(t)).collect();
                        let estimate = static_score + w.lm * lm_estimate(&lm_ids);
                        let reordering = system
                            .reordering
                            .as_ref()
                            .map_or(UNIFORM_ORIENTATION, |m| *reordering_probs(m, src, tgt));
                        span_opts.push((
                            estimate,
                            TransOption {
                                span: (i, j),
                                target: tgt.to_vec(),
                                lm_ids,
                                static_score,
                                reordering,
                                unknown: false,
                            },
                        ));
                    }
                }
                None if i == j => {
                    let static_score = -w.unknown - w.word_penalty + w.phrase_penalty;
                    let lm_ids = vec![lm.id(&src[0])];
                    let estimate = static_score + w.lm * lm_estimate(&lm_ids);
                    span_opts.push((
                        estimate,
                        TransOption {
                            span: (i, i),
                            target: src.to_vec(),
                            lm_ids,
                            static_score,
                            reordering: UNIFORM_ORIENTATION,
                            unknown: true,
                        },
                    ));
                }
                None => {}
            }
            span_opts.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.target.cmp(&b.1.target)));
            span_opts.truncate(system.max_options.max(1));
            if let Some((e, _)) = span_opts.first() {
                best[i][j] = *e;
            }
            options.extend(span_opts.into_iter().map(|(_, o)| o));
        }
    }
    // best[i][j] becomes the best cover of i..=j by any segmentation
    for len in 2..=n {
        for i in 0..=n - len {
            let j = i + len - 1;
            for k in i..j {
                let split = best[i][k] + best[k + 1][j];
                if split > best[i][j] {
                    best[i][j] = split;
                }
            }
        }
    }
    (options, best)
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Coverage(Box<[u64]>);

impl Coverage {
    fn empty(n: usize) -> Self {
        Coverage(vec![0; n.div_ceil(64).max(1)].into_boxed_slice())
    }

    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn span_free(&self, a: usize, b: usize) -> bool {
        (a..=b).all(|i| !self.get(i))
    }

    fn first_gap(&self, n: usize) -> Option<usize> {
        (0..n).find(|&i| !self.get(i))
    }
}

struct Hyp {
    parent: usize,
    option: usize,
    coverage: Coverage,
    covered: usize,
    lm_state: Vec<u32>,
    last: Option<(usize, usize)>,
    score: f64,
    future: f64,
}

#[derive(PartialEq, Eq, Hash)]
struct RecombKey {
    coverage: Coverage,
    lm_state: Vec<u32>,
    last: Option<(usize, usize)>,
    option: Option<usize>,
}

const ROOT: usize = usize::MAX;

fn future_cost(coverage: &Coverage, n: usize, best: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut i = 0;
    while i < n {
        if coverage.get(i) {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && !coverage.get(i) {
            i += 1;
        }
        total += best[start][i - 1];
    }
    total
}

/// Leftward movement still owed: reaching the first gap from a phrase
/// ending at `end` costs at least this much distortion.
fn return_jump(coverage: &Coverage, n: usize, end: usize) -> usize {
    match coverage.first_gap(n) {
        Some(g) if g < end => end + 1 - g,
        _ => 0,
    }
}

fn target_of<'a>(hyps: &[Hyp], options: &'a [TransOption], mut h: usize) -> Vec<&'a str> {
    let mut parts = Vec::new();
    while h != ROOT && hyps[h].option != ROOT {
        parts.push(&options[hyps[h].option].target);
        h = hyps[h].parent;
    }
    parts.iter().rev().flat_map(|t| t.iter().map(String::as_str)).collect()
}

/// Necessary condition for completing a derivation: the first gap must
/// still be reachable from the current phrase end or from a phrase that
/// ends close enough to it.
fn completable(coverage: &Coverage, n: usize, end: usize, limit: usize) -> bool {
    let Some(g) = coverage.first_gap(n) else {
        return true;
    };
    if jump((0, end), (g, g)) <= limit {
        return true;
    }
    (g + 1..n.min(g + limit)).any(|p| !coverage.get(p))
}

/// Beam search over coverage stacks; `beam` hypotheses survive per stack.
pub fn decode(source: &[String], system: &TranslationSystem, beam: usize) -> DecodedSentence {
    if let Some(d) = search(source, system, beam.max(1), system.distortion_limit) {
        return d;
    }
    log::warn!("no complete hypothesis within the beam, decoding monotonically");
    search(source, system, beam.max(1), 0).expect("monotone search always completes")
}

fn search(source: &[String], system: &TranslationSystem, beam: usize, limit: usize) -> Option<DecodedSentence> {
    let n = source.len();
    if n == 0 {
        return Some(finish(source, system, Vec::new()));
    }
    let w = &system.weights;
    let lm = &system.lm;
    let use_reordering = system.reordering.is_some();
    let (options, best) = collect_options(source, system);
    let mut by_start: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, o) in options.iter().enumerate() {
        by_start[o.span.0].push(k);
    }

    let root_cov = Coverage::empty(n);
    let mut hyps = vec![Hyp {
        parent: ROOT,
        option: ROOT,
        future: future_cost(&root_cov, n, &best),
        coverage: root_cov,
        covered: 0,
        lm_state: vec![lm.bos()],
        last: None,
        score: 0.0,
    }];
    let mut stacks: Vec<FxHashMap<RecombKey, usize>> = (0..=n).map(|_| FxHashMap::default()).collect();
    let mut frontier = vec![0usize];

    let better = |hyps: &[Hyp], a: usize, b: usize, with_future: bool| -> Ordering {
        let (ha, hb) = (&hyps[a], &hyps[b]);
        let (sa, sb) = if with_future {
            (ha.score + ha.future, hb.score + hb.future)
        } else {
            (ha.score, hb.score)
        };
        sb.total_cmp(&sa)
            .then_with(|| target_of(hyps, &options, a).cmp(&target_of(hyps, &options, b)))
            .then(a.cmp(&b))
    };

    for size in 0..n {
        if size > 0 {
            let mut ids: Vec<usize> = stacks[size].drain().map(|(_, h)| h).collect();
            ids.sort_by(|&a, &b| better(&hyps, a, b, true));
            ids.truncate(beam);
            frontier = ids;
        }
        for &h in &frontier {
            for start in 0..n {
                if hyps[h].coverage.get(start) {
                    continue;
                }
                let dist = hyps[h].last.map_or(0, |l| jump(l, (start, start)));
                if dist > limit {
                    continue;
                }
                for &k in &by_start[start] {
                    let o = &options[k];
                    let (a, b) = o.span;
                    if !hyps[h].coverage.span_free(a, b) {
                        continue;
                    }
                    let mut coverage = hyps[h].coverage.clone();
                    for i in a..=b {
                        coverage.set(i);
                    }
                    if !completable(&coverage, n, b, limit) {
                        continue;
                    }
                    let covered = hyps[h].covered + (b - a + 1);
                    let done = covered == n;
                    let mut score = hyps[h].score + o.static_score - w.distortion * dist as f64;
                    let mut context = hyps[h].lm_state.clone();
                    let mut lm_sum = 0.0;
                    for &id in &o.lm_ids {
                        lm_sum += lm.log_prob_ids(&context, id);
                        context.push(id);
                    }
                    if done {
                        lm_sum += lm.log_prob_ids(&context, lm.eos());
                    }
                    score += w.lm * lm_sum * std::f64::consts::LN_10;
                    if use_reordering {
                        let last = hyps[h].last;
                        let ob = orientation_before(last, o.span).index();
                        score += w.reordering[ob] * o.reordering[ob].ln();
                        if let Some(l) = last {
                            let prev = &options[hyps[h].option];
                            let oa = Orientation::between(l, o.span).index();
                            score += w.reordering[3 + oa] * prev.reordering[3 + oa].ln();
                        }
                        if done {
                            let oe = orientation_at_end(o.span, n).index();
                            score += w.reordering[3 + oe] * o.reordering[3 + oe].ln();
                        }
                    }
                    let lm_state = lm.state(&context);
                    let key = RecombKey {
                        coverage: coverage.clone(),
                        lm_state: lm_state.clone(),
                        last: if use_reordering { Some(o.span) } else { Some((0, b)) },
                        option: if use_reordering { Some(k) } else { None },
                    };
                    let future = if done {
                        0.0
                    } else {
                        future_cost(&coverage, n, &best) - w.distortion.max(0.0) * return_jump(&coverage, n, b) as f64
                    };
                    hyps.push(Hyp {
                        parent: h,
                        option: k,
                        coverage,
                        covered,
                        lm_state,
                        last: Some(o.span),
                        score,
                        future,
                    });
                    let new = hyps.len() - 1;
                    match stacks[covered].get(&key) {
                        Some(&old) if better(&hyps, old, new, false) != Ordering::Greater => {
                            hyps.pop();
                        }
                        _ => {
                            stacks[covered].insert(key, new);
                        }
                    }
                }
            }
        }
    }

    let best_final = stacks[n]
        .values()
        .copied()
        .min_by(|&a, &b| better(&hyps, a, b, false))?;
    let mut steps = Vec::new();
    let mut h = best_final;
    while hyps[h].option != ROOT {
        let o = &options[hyps[h].option];
        steps.push(TraceStep {
            src: o.span,
            target: o.target.clone(),
            unknown: o.unknown,
        });
        h = hyps[h].parent;
    }
    steps.reverse();
    Some(finish(source, system, steps))
}

fn finish(source: &[String], system: &TranslationSystem, trace: Vec<TraceStep>) -> DecodedSentence {
    let features = score_features(source, &trace, system).expect("decoder derivations are consistent");
    DecodedSentence {
        tokens: trace.iter().flat_map(|s| s.target.iter().cloned()).collect(),
        score: system.weights.dot(&features),
        features,
        trace,
    }
}

/// Decode sentences in parallel; output order follows input order.
pub fn decode_batch(sources: &[Vec<String>], system: &TranslationSystem, beam: usize) -> Vec<DecodedSentence> {
    sources.par_iter().map(|s| decode(s, system, beam)).collect()
}

/// One output line per input line, plus an optional trace line per input.
pub fn decode_stream(
    input: impl BufRead,
    mut output: impl Write,
    mut trace: Option<&mut dyn Write>,
    system: &TranslationSystem,
    beam: usize,
) -> Result<usize, DecodeError> {
    let sources: Vec<Vec<String>> = input
        .lines()
        .map(|l| l.map(|l| crate::corpus::tokenize(&l)))
        .collect::<Result<_, _>>()?;
    for d in decode_batch(&sources, system, beam) {
        writeln!(output, "{}", d.tokens.join(" "))?;
        if let Some(t) = trace.as_deref_mut() {
            writeln!(t, "{}", format_trace(&d.trace))?;
        }
    }
    Ok(sources.len())
}
