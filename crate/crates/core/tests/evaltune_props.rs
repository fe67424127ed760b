use monomt::corpus::Corpus;
use monomt::decoder::TranslationSystem;
use monomt::evaltune::{bleu, bleu_with, dev_bleu, tune, Smoothing, TuneConfig};
use monomt::lm::train_lm_add_k;
use monomt::{PairScores, Phrase, PhraseTable, Provenance};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sentence(max_len: usize) -> impl Strategy<Value = Vec<String>> {
    proptest::collection::vec((0..5u8).prop_map(|w| format!("t{w}")), 0..=max_len)
}

fn corpus() -> impl Strategy<Value = (Vec<Vec<String>>, Vec<Vec<String>>)> {
    proptest::collection::vec((sentence(8), sentence(8)), 1..8).prop_map(|pairs| pairs.into_iter().unzip())
}

proptest! {
    #[test]
    fn bleu_ignores_sentence_order((hyps, refs) in corpus(), seed in any::<u64>()) {
        prop_assume!(refs.iter().any(|r| !r.is_empty()));
        let mut order: Vec<usize> = (0..hyps.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let h2: Vec<_> = order.iter().map(|&i| hyps[i].clone()).collect();
        let r2: Vec<_> = order.iter().map(|&i| refs[i].clone()).collect();
        for smoothing in [Smoothing::None, Smoothing::AddOne] {
            let a = bleu_with(&hyps, &refs, smoothing).unwrap();
            let b = bleu_with(&h2, &r2, smoothing).unwrap();
            prop_assert!((a.bleu - b.bleu).abs() < 1e-9);
            prop_assert_eq!(a.matches, b.matches);
        }
    }

    #[test]
    fn bleu_of_a_corpus_against_itself_is_100((hyps, _) in corpus()) {
        prop_assume!(hyps.iter().any(|h| !h.is_empty()));
        let smoothed = bleu_with(&hyps, &hyps, Smoothing::AddOne).unwrap();
        prop_assert!((smoothed.bleu - 100.0).abs() < 1e-9);
        // without smoothing every order must be present
        if hyps.iter().any(|h| h.len() >= 4) {
            prop_assert!((bleu(&hyps, &hyps).unwrap().bleu - 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn report_fields_are_consistent((hyps, refs) in corpus()) {
        prop_assume!(refs.iter().any(|r| !r.is_empty()));
        let r = bleu(&hyps, &refs).unwrap();
        prop_assert!((0.0..=100.0).contains(&r.bleu));
        if r.hyp_len > 0 {
            prop_assert!(r.brevity_penalty > 0.0 && r.brevity_penalty <= 1.0);
        }
        if r.precisions.iter().all(|&p| p > 0.0) {
            let geo = (r.precisions.iter().map(|p| p.ln()).sum::<f64>() / 4.0).exp();
            prop_assert!((r.bleu - 100.0 * r.brevity_penalty * geo).abs() < 1e-9);
        }
    }

    #[test]
    fn tuning_never_loses_dev_bleu(
        probs in proptest::collection::vec(0.05..=1.0f64, 6),
        lm_lines in proptest::collection::vec(sentence(5), 1..5),
        seed in any::<u64>(),
    ) {
        let mut table = PhraseTable::new(Provenance::Induced);
        let pairs = [("a", "t0"), ("a", "t1"), ("b", "t2"), ("b", "t1"), ("c", "t3"), ("a b", "t4")];
        for ((s, t), p) in pairs.iter().zip(&probs) {
            table
                .insert(Phrase::from_spaced(s), Phrase::from_spaced(t), PairScores::from_array([*p; 4]))
                .unwrap();
        }
        let lines: Vec<String> = lm_lines.iter().map(|l| l.join(" ")).chain(["t0".to_string()]).collect();
        let lm = train_lm_add_k(&Corpus::from_lines("t", lines.iter().map(String::as_str)), 2, 0.5).unwrap();
        let sys = TranslationSystem::new(table, lm);
        let split = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
        let src = vec![split("a b c"), split("c a"), split("b b a")];
        let refs = vec![split("t1 t2 t3"), split("t3 t0"), split("t1 t4")];
        let config = TuneConfig {
            budget: 40,
            grid: vec![-1.0, 0.0, 1.0],
            beam: 5,
            smoothing: Smoothing::AddOne,
            seed,
        };
        let result = tune(&sys, &src, &refs, &config).unwrap();
        prop_assert!(result.bleu >= result.initial_bleu);
        prop_assert!(result.evaluations <= config.budget);
        let mut tuned = sys.clone();
        tuned.weights = result.weights.clone();
        let again = dev_bleu(&tuned, &src, &refs, config.beam, config.smoothing).unwrap();
        prop_assert_eq!(again, result.bleu);
        prop_assert_eq!(tune(&sys, &src, &refs, &config).unwrap(), result);
    }
}
