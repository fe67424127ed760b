use std::fs::{self, File};
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::Command;

use thiserror::Error;

use crate::align::{
    align_corpus, count_pairs, estimate_reordering, estimate_table, prune, Ibm1Config, ReorderingModel, SentencePair,
};
use crate::corpus::{tokenize, Corpus};
use crate::decoder::{decode_batch, FeatureWeights, TranslationSystem};
use crate::evaltune::{tune, TuneConfig, TuneResult};
use crate::lm::{train_lm, NGramModel};
use crate::table::{PhraseTable, Provenance};

use super::config::SmtSettings;
use super::synthetic::Translate;
use super::{write_atomic, PipelineError};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("cannot start {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: io::Error,
    },
    #[error("{action} exited with {status}; stderr:\n{stderr}")]
    Failed {
        action: &'static str,
        status: String,
        code: Option<i32>,
        stderr: String,
    },
    #[error("translate produced {found} lines for {expected} inputs")]
    OutputLines { expected: usize, found: usize },
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A translator trained from scratch on parallel text files.
pub trait TranslatorBackend: Send + Sync {
    /// recorded in the workspace manifest
    fn describe(&self) -> String;
    fn train(&self, src: &Path, tgt: &Path, model: &Path) -> Result<(), BackendError>;
    fn translate(&self, model: &Path, input: &Path, output: &Path) -> Result<(), BackendError>;
}

/// Align, extract, estimate, optionally prune and attach a reordering model.
pub fn train_smt(
    pairs: Vec<SentencePair>,
    lm: NGramModel,
    settings: &SmtSettings,
    weights: FeatureWeights,
) -> Result<TranslationSystem, PipelineError> {
    let pairs: Vec<SentencePair> = pairs
        .into_iter()
        .filter(|(s, t)| !s.is_empty() && !t.is_empty())
        .collect();
    let aligned = align_corpus(
        pairs,
        &Ibm1Config {
            iterations: settings.ibm1_iterations,
            null_word: true,
        },
    )?;
    let counts = count_pairs(&aligned, settings.max_phrase_len);
    let mut table = estimate_table(&counts, &aligned.forward, &aligned.backward)?;
    if let Some(threshold) = settings.prune {
        table = prune(&table, &counts, threshold)?;
    }
    let reordering = settings.reordering.then(|| {
        let mut r = estimate_reordering(&aligned, settings.max_phrase_len, settings.reordering_alpha);
        r.retain_pairs(&table);
        r
    });
    Ok(TranslationSystem {
        table,
        reordering,
        lm,
        weights,
        distortion_limit: settings.distortion_limit,
        max_options: settings.max_options,
    })
}

/// Files of a saved system: `system.txt`, `table.txt`, `weights.txt`,
/// optional `reordering.txt` and `lm.arpa`.
pub fn save_system(dir: &Path, system: &TranslationSystem, own_lm: bool, lm_ref: &str) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    let lm_line = if own_lm { "lm.arpa" } else { lm_ref };
    write_atomic(&dir.join("system.txt"), |w| {
        writeln!(w, "provenance = {}", system.table.provenance())?;
        writeln!(w, "reordering = {}", system.reordering.is_some())?;
        writeln!(w, "distortion_limit = {}", system.distortion_limit)?;
        writeln!(w, "max_options = {}", system.max_options)?;
        writeln!(w, "lm = {lm_line}")
    })?;
    write_atomic(&dir.join("table.txt"), |w| system.table.write(w))?;
    write_atomic(&dir.join("weights.txt"), |w| writeln!(w, "{}", system.weights))?;
    if let Some(r) = &system.reordering {
        write_atomic(&dir.join("reordering.txt"), |w| r.write(w))?;
    }
    if own_lm {
        write_atomic(&dir.join("lm.arpa"), |w| system.lm.write_arpa(w))?;
    }
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| PipelineError::io(path, e))
}

/// Load a saved system. A bundled `lm.arpa` wins over `lm`.
pub fn load_system(dir: &Path, lm: Option<&NGramModel>) -> Result<TranslationSystem, PipelineError> {
    let mut provenance = None;
    let mut reordering = false;
    let mut distortion_limit = 6;
    let mut max_options = 20;
    for (i, line) in open(&dir.join("system.txt"))?.lines().enumerate() {
        let line = line?;
        let bad = || PipelineError::Parse {
            what: "system.txt",
            line: i + 1,
            message: line.clone(),
        };
        let (k, v) = line.split_once(" = ").ok_or_else(bad)?;
        match k {
            "provenance" => {
                provenance = Some(match v {
                    "induced" => Provenance::Induced,
                    "estimated" => Provenance::Estimated,
                    _ => return Err(bad()),
                })
            }
            "reordering" => reordering = v == "true",
            "distortion_limit" => distortion_limit = v.parse().map_err(|_| bad())?,
            "max_options" => max_options = v.parse().map_err(|_| bad())?,
            "lm" => {}
            _ => return Err(bad()),
        }
    }
    let provenance = provenance.ok_or(PipelineError::MissingKey("provenance"))?;
    let table = PhraseTable::read(open(&dir.join("table.txt"))?, provenance)?;
    let mut weights_text = String::new();
    open(&dir.join("weights.txt"))?.read_line(&mut weights_text)?;
    let weights: FeatureWeights = weights_text.trim().parse()?;
    let reordering = if reordering {
        Some(ReorderingModel::read(open(&dir.join("reordering.txt"))?)?)
    } else {
        None
    };
    let bundled = dir.join("lm.arpa");
    let lm = if bundled.exists() {
        NGramModel::read_arpa(open(&bundled)?)?
    } else {
        lm.cloned()
            .ok_or_else(|| PipelineError::Invalid(format!("{} has no language model", dir.display())))?
    };
    Ok(TranslationSystem {
        table,
        reordering,
        lm,
        weights,
        distortion_limit,
        max_options,
    })
}

pub fn read_lines(path: &Path) -> Result<Vec<Vec<String>>, PipelineError> {
    open(path)?
        .lines()
        .map(|l| l.map(|l| tokenize(&l)).map_err(|e| PipelineError::io(path, e)))
        .collect()
}

pub fn write_lines(path: &Path, sentences: &[Vec<String>]) -> Result<(), PipelineError> {
    write_atomic(path, |w| {
        for s in sentences {
            writeln!(w, "{}", s.join(" "))?;
        }
        Ok(())
    })
}

/// Dev data and settings for tuning a freshly trained system.
#[derive(Debug, Clone)]
pub struct Tuning {
    pub dev_src: Vec<Vec<String>>,
    pub dev_ref: Vec<Vec<String>>,
    pub config: TuneConfig,
}

impl Tuning {
    pub fn run(&self, system: &TranslationSystem) -> Result<TuneResult, PipelineError> {
        Ok(tune(system, &self.dev_src, &self.dev_ref, &self.config)?)
    }
}

/// The in-process phrase-based system, trained on each synthetic corpus
/// from scratch. Without a fixed language model it trains one on the
/// target side and bundles it with the model.
#[derive(Debug, Clone)]
pub struct ReferenceBackend {
    pub lm: Option<NGramModel>,
    pub lm_ref: String,
    pub settings: SmtSettings,
    pub weights: FeatureWeights,
    pub beam: usize,
    pub tuning: Option<Tuning>,
}

impl ReferenceBackend {
    fn train_inner(&self, src: &Path, tgt: &Path, model: &Path) -> Result<(), PipelineError> {
        let s = read_lines(src)?;
        let t = read_lines(tgt)?;
        if s.len() != t.len() {
            return Err(PipelineError::OutputCount {
                expected: s.len(),
                found: t.len(),
            });
        }
        let (lm, own) = match &self.lm {
            Some(lm) => (lm.clone(), false),
            None => (train_lm(&Corpus::new("tgt", t.clone()), self.settings.lm_order)?, true),
        };
        let mut system = train_smt(s.into_iter().zip(t).collect(), lm, &self.settings, self.weights.clone())?;
        if let Some(tuning) = &self.tuning {
            let result = tuning.run(&system)?;
            system.weights = result.weights.clone();
            fs::create_dir_all(model).map_err(|e| PipelineError::io(model, e))?;
            write_atomic(&model.join("tune.log"), |w| result.write_log(w))?;
        }
        save_system(model, &system, own, &self.lm_ref)
    }

    fn translate_inner(&self, model: &Path, input: &Path, output: &Path) -> Result<(), PipelineError> {
        let system = load_system(model, self.lm.as_ref())?;
        let inputs = read_lines(input)?;
        let out: Vec<Vec<String>> = decode_batch(&inputs, &system, self.beam)
            .into_iter()
            .map(|d| d.tokens)
            .collect();
        write_lines(output, &out)
    }
}

impl TranslatorBackend for ReferenceBackend {
    fn describe(&self) -> String {
        "reference".into()
    }

    fn train(&self, src: &Path, tgt: &Path, model: &Path) -> Result<(), BackendError> {
        self.train_inner(src, tgt, model)
            .map_err(|e| BackendError::Model(e.to_string()))
    }

    fn translate(&self, model: &Path, input: &Path, output: &Path) -> Result<(), BackendError> {
        self.translate_inner(model, input, output)
            .map_err(|e| BackendError::Model(e.to_string()))
    }
}

/// External program speaking `train --src --tgt --model` and
/// `translate --model --in --out`.
#[derive(Debug, Clone)]
pub struct SubprocessBackend {
    pub program: PathBuf,
    pub leading_args: Vec<String>,
}

impl SubprocessBackend {
    pub fn new(command: &[String]) -> Option<SubprocessBackend> {
        let (program, rest) = command.split_first()?;
        Some(SubprocessBackend {
            program: program.into(),
            leading_args: rest.to_vec(),
        })
    }

    fn run(&self, action: &'static str, args: &[&std::ffi::OsStr]) -> Result<(), BackendError> {
        let out = Command::new(&self.program)
            .args(&self.leading_args)
            .arg(action)
            .args(args)
            .output()
            .map_err(|source| BackendError::Spawn {
                program: self.program.display().to_string(),
                source,
            })?;
        if !out.status.success() {
            return Err(BackendError::Failed {
                action,
                status: out.status.to_string(),
                code: out.status.code(),
                stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
            });
        }
        Ok(())
    }
}

fn count_lines(path: &Path) -> Result<usize, BackendError> {
    let mut n = 0;
    for line in BufReader::new(File::open(path)?).lines() {
        line?;
        n += 1;
    }
    Ok(n)
}

impl TranslatorBackend for SubprocessBackend {
    fn describe(&self) -> String {
        let mut words = vec![self.program.display().to_string()];
        words.extend(self.leading_args.iter().cloned());
        format!("subprocess {}", words.join(" "))
    }

    fn train(&self, src: &Path, tgt: &Path, model: &Path) -> Result<(), BackendError> {
        self.run(
            "train",
            &[
                "--src".as_ref(),
                src.as_os_str(),
                "--tgt".as_ref(),
                tgt.as_os_str(),
                "--model".as_ref(),
                model.as_os_str(),
            ],
        )
    }

    fn translate(&self, model: &Path, input: &Path, output: &Path) -> Result<(), BackendError> {
        self.run(
            "translate",
            &[
                "--model".as_ref(),
                model.as_os_str(),
                "--in".as_ref(),
                input.as_os_str(),
                "--out".as_ref(),
                output.as_os_str(),
            ],
        )?;
        let expected = count_lines(input)?;
        let found = count_lines(output)?;
        if expected != found {
            return Err(BackendError::OutputLines { expected, found });
        }
        Ok(())
    }
}

/// Translates through a backend model using scratch files in `scratch`.
pub struct BackendTranslator<'a> {
    pub backend: &'a dyn TranslatorBackend,
    pub model: PathBuf,
    pub scratch: PathBuf,
    pub name: String,
}

impl Translate for BackendTranslator<'_> {
    fn translate(&self, sentences: &[Vec<String>]) -> Result<Vec<Vec<String>>, PipelineError> {
        fs::create_dir_all(&self.scratch).map_err(|e| PipelineError::io(&self.scratch, e))?;
        let input = self.scratch.join(format!("{}.in", self.name));
        let output = self.scratch.join(format!("{}.out", self.name));
        write_lines(&input, sentences)?;
        self.backend.translate(&self.model, &input, &output)?;
        let out = read_lines(&output)?;
        if out.len() != sentences.len() {
            return Err(BackendError::OutputLines {
                expected: sentences.len(),
                found: out.len(),
            }
            .into());
        }
        Ok(out)
    }
}
