use monomt::align::{
    align_corpus, count_pairs, estimate_table, prune, train_ibm1, Ibm1Config, PairCounts, PruneThreshold, SentencePair,
    SpanPair, WordAlignment,
};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub fn alignment(max_len: usize) -> impl Strategy<Value = WordAlignment> {
    (1..=max_len, 1..=max_len).prop_flat_map(|(n, m)| {
        proptest::collection::btree_set((0..n, 0..m), 0..=n * m)
            .prop_map(move |links| WordAlignment::new(n, m, links).unwrap())
    })
}

/// Every box with at least one link inside and no link crossing its border.
pub fn brute_force_spans(a: &WordAlignment, max_len: usize) -> Vec<SpanPair> {
    let (n, m) = a.shape();
    let mut out = Vec::new();
    for s1 in 0..n {
        for s2 in s1..n {
            for t1 in 0..m {
                for t2 in t1..m {
                    if s2 - s1 + 1 > max_len || t2 - t1 + 1 > max_len {
                        continue;
                    }
                    let mut inside = false;
                    let mut crossing = false;
                    for &(i, j) in a.links() {
                        let si = (s1..=s2).contains(&i);
                        let tj = (t1..=t2).contains(&j);
                        inside |= si && tj;
                        crossing |= si != tj;
                    }
                    if inside && !crossing {
                        out.push(SpanPair {
                            src: (s1, s2),
                            tgt: (t1, t2),
                        });
                    }
                }
            }
        }
    }
    out.sort();
    out
}

/// log-free binomial coefficient, exact for n <= 50
pub fn choose(n: u64, k: u64) -> u128 {
    let mut r: u128 = 1;
    for i in 0..k as u128 {
        r = r * (n as u128 - i) / (i + 1);
    }
    r
}

pub fn exact_pvalue(c_st: u64, c_s: u64, c_t: u64, n: u64) -> f64 {
    let num: u128 = (c_st..=c_s.min(c_t))
        .filter(|&k| c_t - k <= n - c_s)
        .map(|k| choose(c_s, k) * choose(n - c_s, c_t - k))
        .sum();
    num as f64 / choose(n, c_t) as f64
}

fn words(max_vocab: u32) -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec((0..max_vocab).prop_map(|w| format!("w{w}")), 1..6)
}

pub fn corpus() -> impl Strategy<Value = Vec<SentencePair>> {
    proptest::collection::vec((words(6), words(6)), 1..8)
}

pub fn em_case((pairs, null_word): (Vec<SentencePair>, bool)) -> Result<(), TestCaseError> {
    let tt = train_ibm1(
        &pairs,
        &Ibm1Config {
            iterations: 10,
            null_word,
        },
    )
    .unwrap();
    for w in tt.log_likelihoods().windows(2) {
        prop_assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{:?}", tt.log_likelihoods());
    }
    for s in tt.row_sums() {
        prop_assert!((s - 1.0).abs() < 1e-9);
    }
    Ok(())
}

pub fn prune_case((pairs, lo, hi): (Vec<SentencePair>, f64, f64)) -> Result<(), TestCaseError> {
    let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
    let aligned = align_corpus(pairs, &Ibm1Config::default()).unwrap();
    let counts: PairCounts = count_pairs(&aligned, 3);
    prop_assume!(!counts.is_empty());
    let table = estimate_table(&counts, &aligned.forward, &aligned.backward).unwrap();
    let once = prune(&table, &counts, PruneThreshold::PValue(hi)).unwrap();
    prop_assert_eq!(&prune(&once, &counts, PruneThreshold::PValue(hi)).unwrap(), &once);
    let tighter = prune(&table, &counts, PruneThreshold::PValue(lo)).unwrap();
    for (s, list) in tighter.iter() {
        for e in list {
            prop_assert!(once.score(s, e.target.tokens()).is_some());
        }
    }
    for (s, list) in table.iter() {
        let total: f64 = list.iter().map(|e| e.scores.p_fwd).sum();
        prop_assert!((total - 1.0).abs() < 1e-9, "{:?}", s);
        for e in list {
            let t = e.target.tokens();
            prop_assert!(counts.joint(s, t) <= counts.source(s).min(counts.target(t)));
            prop_assert!(counts.source(s).max(counts.target(t)) <= counts.total());
        }
    }
    Ok(())
}
