use std::io::{BufRead, Write};

use crate::decoder::{decode_batch, TranslationSystem};
use crate::lm::{cleanliness, NGramModel};

use super::config::SynthesisMode;
use super::PipelineError;

/// Anything that turns tokenized sentences into tokenized translations,
/// one output per input.
pub trait Translate {
    fn translate(&self, sentences: &[Vec<String>]) -> Result<Vec<Vec<String>>, PipelineError>;
}

pub struct SmtTranslator<'a> {
    pub system: &'a TranslationSystem,
    pub beam: usize,
}

impl Translate for SmtTranslator<'_> {
    fn translate(&self, sentences: &[Vec<String>]) -> Result<Vec<Vec<String>>, PipelineError> {
        Ok(decode_batch(sentences, self.system, self.beam)
            .into_iter()
            .map(|d| d.tokens)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Origin {
    pub iteration: usize,
    /// workspace-relative identifier of the producing system
    pub system: String,
    pub mode: SynthesisMode,
    /// line of the human-authored side in its monolingual file
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub src: Vec<String>,
    pub tgt: Vec<String>,
    pub origin: Origin,
    /// length-normalized LM score of the synthetic side
    pub cleanliness: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyntheticCorpus {
    pub pairs: Vec<SyntheticPair>,
}

impl SyntheticCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn extend(&mut self, other: SyntheticCorpus) {
        self.pairs.extend(other.pairs);
    }

    pub fn sides(&self) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
        self.pairs.iter().map(|p| (p.src.clone(), p.tgt.clone())).unzip()
    }

    /// Tab-separated: iteration, system, mode, line, cleanliness, source, target.
    pub fn write(&self, mut out: impl Write) -> std::io::Result<()> {
        for p in &self.pairs {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                p.origin.iteration,
                p.origin.system,
                p.origin.mode,
                p.origin.line,
                p.cleanliness,
                p.src.join(" "),
                p.tgt.join(" ")
            )?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead) -> Result<SyntheticCorpus, PipelineError> {
        let mut pairs = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let bad = |message: &str| PipelineError::Parse {
                what: "synthetic corpus",
                line: i + 1,
                message: message.to_string(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 7 {
                return Err(bad("expected 7 tab-separated fields"));
            }
            let words = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
            pairs.push(SyntheticPair {
                src: words(f[5]),
                tgt: words(f[6]),
                origin: Origin {
                    iteration: f[0].parse().map_err(|_| bad("bad iteration"))?,
                    system: f[1].to_string(),
                    mode: f[2].parse().map_err(|e: String| bad(&e))?,
                    line: f[3].parse().map_err(|_| bad("bad line number"))?,
                },
                cleanliness: f[4].parse().map_err(|_| bad("bad cleanliness"))?,
            });
        }
        Ok(SyntheticCorpus { pairs })
    }
}

/// Translate human-authored sentences and orient the pairs by `mode`: forward
/// keeps the input as source, back keeps it as target. `lm` scores the
/// decoded side.
pub fn generate_synthetic(
    translator: &dyn Translate,
    sentences: &[(usize, Vec<String>)],
    mode: SynthesisMode,
    iteration: usize,
    system_id: &str,
    lm: &NGramModel,
) -> Result<SyntheticCorpus, PipelineError> {
    let inputs: Vec<Vec<String>> = sentences.iter().map(|(_, s)| s.clone()).collect();
    let outputs = translator.translate(&inputs)?;
    if outputs.len() != inputs.len() {
        return Err(PipelineError::OutputCount {
            expected: inputs.len(),
            found: outputs.len(),
        });
    }
    let pairs = sentences
        .iter()
        .zip(outputs)
        .map(|((line, real), synthetic)| {
            let score = cleanliness(lm, &synthetic);
            let (src, tgt) = match mode {
                SynthesisMode::Forward => (real.clone(), synthetic),
                SynthesisMode::Back => (synthetic, real.clone()),
            };
            SyntheticPair {
                src,
                tgt,
                origin: Origin {
                    iteration,
                    system: system_id.to_string(),
                    mode,
                    line: *line,
                },
                cleanliness: score,
            }
        })
        .collect();
    Ok(SyntheticCorpus { pairs })
}

/// `min(ceil(alpha * n * iteration), size)`. Products within 1e-9 of an
/// integer count as that integer.
pub fn keep_count(alpha: f64, n: usize, iteration: usize, size: usize) -> usize {
    let x = alpha * n as f64 * iteration as f64;
    let r = x.round();
    let k = if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r
    } else {
        x.ceil()
    };
    (k.max(0.0) as usize).min(size)
}

/// Keep the cleanest pairs; ties go to the earlier iteration, then the
/// earlier line. Kept pairs stay in accumulation order.
pub fn filter_synthetic(
    accumulated: &SyntheticCorpus,
    alpha: f64,
    iteration: usize,
    n: usize,
) -> Result<SyntheticCorpus, PipelineError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(PipelineError::Invalid("alpha must lie in (0, 1]".into()));
    }
    let keep = keep_count(alpha, n, iteration, accumulated.len());
    let p = &accumulated.pairs;
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| {
        p[b].cleanliness
            .total_cmp(&p[a].cleanliness)
            .then(p[a].origin.iteration.cmp(&p[b].origin.iteration))
            .then(p[a].origin.line.cmp(&p[b].origin.line))
            .then(a.cmp(&b))
    });
    order.truncate(keep);
    order.sort_unstable();
    Ok(SyntheticCorpus {
        pairs: order.into_iter().map(|i| p[i].clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Corpus;
    use crate::lm::train_lm_add_k;

    struct Identity;

    impl Translate for Identity {
        fn translate(&self, sentences: &[Vec<String>]) -> Result<Vec<Vec<String>>, PipelineError> {
            Ok(sentences.to_vec())
        }
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn lm() -> NGramModel {
        train_lm_add_k(&Corpus::from_lines("x", ["a b c", "b c a", "c c"]), 2, 0.5).unwrap()
    }

    fn pair(iteration: usize, line: usize, c: f64) -> SyntheticPair {
        SyntheticPair {
            src: toks("a"),
            tgt: toks("b"),
            origin: Origin {
                iteration,
                system: "s".into(),
                mode: SynthesisMode::Back,
                line,
            },
            cleanliness: c,
        }
    }

    #[test]
    fn keep_count_examples() {
        assert_eq!(keep_count(0.5, 3_000_000, 2, 6_000_000), 3_000_000);
        assert_eq!(keep_count(1.0, 7, 3, 21), 21);
        assert_eq!(keep_count(0.5, 3, 1, 3), 2);
        assert_eq!(keep_count(0.1, 10, 3, 100), 3);
        assert_eq!(keep_count(0.7, 10, 1, 4), 4);
    }

    #[test]
    fn identity_system_keeps_sides_equal() {
        let lm = lm();
        let input = vec![(4, toks("a b")), (9, toks("c"))];
        for mode in [SynthesisMode::Forward, SynthesisMode::Back] {
            let c = generate_synthetic(&Identity, &input, mode, 3, "usmt-03/fwd", &lm).unwrap();
            assert_eq!(c.len(), 2);
            for (p, (line, s)) in c.pairs.iter().zip(&input) {
                assert_eq!(&p.src, s);
                assert_eq!(&p.tgt, s);
                assert_eq!(p.cleanliness, lm.score_sentence(s) / (s.len() as f64 + 1.0));
                assert_eq!(p.origin.line, *line);
                assert_eq!(p.origin.iteration, 3);
                assert_eq!(p.origin.system, "usmt-03/fwd");
                assert_eq!(p.origin.mode, mode);
            }
        }
        assert!(generate_synthetic(&Identity, &[], SynthesisMode::Back, 1, "x", &lm)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn filter_ties_and_order() {
        let acc = SyntheticCorpus {
            pairs: vec![
                pair(2, 0, -1.0),
                pair(1, 5, -1.0),
                pair(1, 3, -1.0),
                pair(1, 1, -3.0),
                pair(2, 9, -0.5),
            ],
        };
        let kept = filter_synthetic(&acc, 0.5, 2, 3).unwrap();
        let lines: Vec<usize> = kept.pairs.iter().map(|p| p.origin.line).collect();
        assert_eq!(lines, vec![5, 3, 9]);
        assert_eq!(filter_synthetic(&acc, 1.0, 9, 9).unwrap(), acc);
        assert!(filter_synthetic(&acc, 0.0, 1, 1).is_err());
    }

    #[test]
    fn tsv_round_trip() {
        let c = generate_synthetic(
            &Identity,
            &[(0, toks("a b")), (1, Vec::new())],
            SynthesisMode::Forward,
            1,
            "usmt-00/bwd",
            &lm(),
        )
        .unwrap();
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        assert_eq!(SyntheticCorpus::read(&buf[..]).unwrap(), c);
        assert!(SyntheticCorpus::read(&b"1\tx\n"[..]).is_err());
    }
}
