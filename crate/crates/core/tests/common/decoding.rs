use monomt::align::ReorderingModel;
use monomt::corpus::Corpus;
use monomt::decoder::{jump, score_features, FeatureWeights, TraceStep, TranslationSystem};
use monomt::lm::train_lm_add_k;
use monomt::{PairScores, Phrase, PhraseTable, Provenance};
use proptest::prelude::*;

pub const SRC: [&str; 4] = ["a", "b", "c", "d"];
pub const TGT: [&str; 4] = ["w", "x", "y", "z"];

#[derive(Debug, Clone)]
pub struct Fixture {
    pub entries: Vec<(Vec<usize>, Vec<usize>, [f64; 4])>,
    pub lm_lines: Vec<Vec<usize>>,
    pub weights: Vec<f64>,
    pub input: Vec<usize>,
    pub limit: usize,
    pub reordering: bool,
}

pub fn fixture() -> impl Strategy<Value = Fixture> {
    let phrase = |max| proptest::collection::vec(0..4usize, 1..=max);
    let scores = proptest::array::uniform4(0.05..=1.0f64);
    (
        proptest::collection::vec((phrase(2), phrase(2), scores), 1..10),
        proptest::collection::vec(phrase(5), 1..6),
        proptest::collection::vec(-1.0..1.0f64, 15),
        phrase(4),
        0..4usize,
        any::<bool>(),
    )
        .prop_map(|(entries, lm_lines, weights, input, limit, reordering)| Fixture {
            entries,
            lm_lines,
            weights,
            input,
            limit,
            reordering,
        })
}

pub fn words(ids: &[usize], vocab: &[&str]) -> Vec<String> {
    ids.iter().map(|&i| vocab[i].to_string()).collect()
}

pub fn build(f: &Fixture) -> (TranslationSystem, Vec<String>) {
    let mut table = PhraseTable::new(Provenance::Estimated);
    for (s, t, p) in &f.entries {
        // duplicates are simply skipped
        let _ = table.insert(
            Phrase::new(words(s, &SRC)),
            Phrase::new(words(t, &TGT)),
            PairScores::from_array(*p),
        );
    }
    let lines: Vec<String> = f.lm_lines.iter().map(|l| words(l, &TGT).join(" ")).collect();
    let lm = train_lm_add_k(&Corpus::from_lines("t", lines.iter().map(String::as_str)), 2, 0.5).unwrap();
    let mut sys = TranslationSystem::new(table, lm);
    sys.distortion_limit = f.limit;
    if f.reordering {
        sys.reordering = Some(ReorderingModel::default());
    }
    sys.weights = FeatureWeights::from_vec(&f.weights[..sys.feature_count()], f.reordering).unwrap();
    (sys, words(&f.input, &SRC))
}

/// Options of one span: table entries, or a copied word when a single word
/// has no entry.
pub fn span_options(sys: &TranslationSystem, src: &[String], a: usize, b: usize) -> Vec<TraceStep> {
    match sys.table.get(&src[a..=b]) {
        Some(list) => list
            .iter()
            .map(|e| TraceStep {
                src: (a, b),
                target: e.target.tokens().to_vec(),
                unknown: false,
            })
            .collect(),
        None if a == b => vec![TraceStep {
            src: (a, a),
            target: vec![src[a].clone()],
            unknown: true,
        }],
        None => Vec::new(),
    }
}

pub fn exhaustive(sys: &TranslationSystem, src: &[String]) -> f64 {
    fn go(
        sys: &TranslationSystem,
        src: &[String],
        covered: &mut Vec<bool>,
        trace: &mut Vec<TraceStep>,
        best: &mut f64,
    ) {
        if covered.iter().all(|&c| c) {
            let f = score_features(src, trace, sys).unwrap();
            *best = best.max(sys.weights.dot(&f));
            return;
        }
        let n = src.len();
        for a in 0..n {
            for b in a..n {
                if covered[a..=b].iter().any(|&c| c) {
                    break;
                }
                if let Some(last) = trace.last() {
                    if jump(last.src, (a, b)) > sys.distortion_limit {
                        continue;
                    }
                }
                for step in span_options(sys, src, a, b) {
                    covered[a..=b].iter_mut().for_each(|c| *c = true);
                    trace.push(step);
                    go(sys, src, covered, trace, best);
                    trace.pop();
                    covered[a..=b].iter_mut().for_each(|c| *c = false);
                }
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    go(sys, src, &mut vec![false; src.len()], &mut Vec::new(), &mut best);
    best
}

pub fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}
