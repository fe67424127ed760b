//! Corpus BLEU and coordinate-ascent weight tuning on a development set.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::decoder::{decode_batch, FeatureWeights, TranslationSystem};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{hyps} hypotheses but {refs} references")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("all references are empty")]
    EmptyReferences,
    #[error("development set is empty")]
    EmptyDevSet,
    #[error("budget {budget} is smaller than the {features} tunable features")]
    Budget { budget: usize, features: usize },
    #[error("tuning grid is empty or has non-finite values")]
    Grid,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Smoothing {
    /// a missing order makes the score zero
    #[default]
    None,
    /// add one to matches and totals of orders 2-4
    AddOne,
}

impl FromStr for Smoothing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Smoothing::None),
            "add-one" => Ok(Smoothing::AddOne),
            v => Err(format!("smoothing must be none or add-one, found {v:?}")),
        }
    }
}

impl fmt::Display for Smoothing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Smoothing::None => "none",
            Smoothing::AddOne => "add-one",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// in [0, 100]
    pub bleu: f64,
    pub precisions: [f64; MAX_ORDER],
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl fmt::Display for BleuReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ratio = if self.ref_len == 0 {
            0.0
        } else {
            self.hyp_len as f64 / self.ref_len as f64
        };
        write!(
            f,
            "BLEU = {:.2}, {:.1}/{:.1}/{:.1}/{:.1} (BP={:.3}, ratio={:.3}, hyp_len={}, ref_len={})",
            self.bleu,
            100.0 * self.precisions[0],
            100.0 * self.precisions[1],
            100.0 * self.precisions[2],
            100.0 * self.precisions[3],
            self.brevity_penalty,
            ratio,
            self.hyp_len,
            self.ref_len
        )
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> FxHashMap<Vec<&str>, u64> {
    let mut counts = FxHashMap::default();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

pub fn bleu<H: AsRef<str>, R: AsRef<str>>(hyps: &[Vec<H>], refs: &[Vec<R>]) -> Result<BleuReport, EvalError> {
    bleu_with(hyps, refs, Smoothing::None)
}

/// Corpus BLEU with clipped n-gram matches and a brevity penalty.
pub fn bleu_with<H: AsRef<str>, R: AsRef<str>>(
    hyps: &[Vec<H>],
    refs: &[Vec<R>],
    smoothing: Smoothing,
) -> Result<BleuReport, EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if refs.iter().all(Vec::is_empty) {
        return Err(EvalError::EmptyReferences);
    }
    let mut matches = [0u64; MAX_ORDER];
    let mut totals = [0u64; MAX_ORDER];
    let mut hyp_len = 0u64;
    let mut ref_len = 0u64;
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len() as u64;
        ref_len += r.len() as u64;
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(r, n);
            for (gram, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(ref_counts.get(&gram).copied().unwrap_or(0));
            }
            totals[n - 1] += (h.len() + 1).saturating_sub(n) as u64;
        }
    }
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        let (m, t) = match smoothing {
            Smoothing::AddOne if n > 0 => (matches[n] + 1, totals[n] + 1),
            _ => (matches[n], totals[n]),
        };
        precisions[n] = if t == 0 { 0.0 } else { m as f64 / t as f64 };
    }
    let brevity_penalty = if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let bleu = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * mean_log.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneConfig {
    /// maximum number of dev-set evaluations, the starting point included
    pub budget: usize,
    pub grid: Vec<f64>,
    pub beam: usize,
    pub smoothing: Smoothing,
    /// shuffles the coordinate order of every sweep
    pub seed: u64,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            budget: 200,
            grid: vec![-1.0, -0.5, -0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3, 0.5, 1.0],
            beam: 50,
            smoothing: Smoothing::None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneStep {
    pub iteration: usize,
    pub coordinate: &'static str,
    pub value: f64,
    pub bleu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub weights: FeatureWeights,
    pub initial_bleu: f64,
    pub bleu: f64,
    pub evaluations: usize,
    pub log: Vec<TuneStep>,
}

impl TuneResult {
    /// `iteration<TAB>coordinate<TAB>value<TAB>bleu` per line.
    pub fn write_log(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "0\tstart\t-\t{}", self.initial_bleu)?;
        for s in &self.log {
            writeln!(out, "{}\t{}\t{}\t{}", s.iteration, s.coordinate, s.value, s.bleu)?;
        }
        Ok(())
    }
}

pub fn dev_bleu(
    system: &TranslationSystem,
    dev_src: &[Vec<String>],
    dev_ref: &[Vec<String>],
    beam: usize,
    smoothing: Smoothing,
) -> Result<f64, EvalError> {
    let hyps: Vec<Vec<String>> = decode_batch(dev_src, system, beam)
        .into_iter()
        .map(|d| d.tokens)
        .collect();
    Ok(bleu_with(&hyps, dev_ref, smoothing)?.bleu)
}

/// Coordinate ascent over a fixed grid: each coordinate in turn moves to the
/// grid value with the best strictly improving dev BLEU. Sweeps repeat until
/// one changes nothing or the evaluation budget runs out.
pub fn tune(
    system: &TranslationSystem,
    dev_src: &[Vec<String>],
    dev_ref: &[Vec<String>],
    config: &TuneConfig,
) -> Result<TuneResult, EvalError> {
    if dev_src.is_empty() {
        return Err(EvalError::EmptyDevSet);
    }
    if dev_src.len() != dev_ref.len() {
        return Err(EvalError::LengthMismatch {
            hyps: dev_src.len(),
            refs: dev_ref.len(),
        });
    }
    let names = system.feature_names();
    if config.budget < names.len() {
        return Err(EvalError::Budget {
            budget: config.budget,
            features: names.len(),
        });
    }
    if config.grid.is_empty() || config.grid.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Grid);
    }

    let mut current = system.clone();
    let mut best = dev_bleu(&current, dev_src, dev_ref, config.beam, config.smoothing)?;
    let initial_bleu = best;
    let mut evaluations = 1;
    let mut log = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut iteration = 0;
    'sweeps: loop {
        iteration += 1;
        let mut order = names.clone();
        order.shuffle(&mut rng);
        let mut improved = false;
        for name in order {
            let start = current.weights.get(name).expect("known feature");
            let mut choice: Option<(f64, f64)> = None;
            let mut exhausted = false;
            for &v in &config.grid {
                if v == start {
                    continue;
                }
                if evaluations >= config.budget {
                    exhausted = true;
                    break;
                }
                current.weights.set(name, v).expect("grid values are finite");
                let score = dev_bleu(&current, dev_src, dev_ref, config.beam, config.smoothing);
                current.weights.set(name, start).expect("finite start");
                let score = score?;
                evaluations += 1;
                if score > choice.map_or(best, |c| c.1) {
                    choice = Some((v, score));
                }
            }
            if let Some((v, score)) = choice {
                current.weights.set(name, v).expect("grid values are finite");
                best = score;
                improved = true;
            }
            log.push(TuneStep {
                iteration,
                coordinate: name,
                value: current.weights.get(name).expect("known feature"),
                bleu: best,
            });
            if exhausted {
                break 'sweeps;
            }
        }
        if !improved {
            break;
        }
    }
    Ok(TuneResult {
        weights: current.weights,
        initial_bleu,
        bleu: best,
        evaluations,
        log,
    })
}
