//! Iteration 0 from induced tables, refinement on synthetic parallel data,
//! and the incremental loop that retrains a translator backend on filtered
//! back-translations. Every stage persists to a workspace directory and a
//! text manifest so runs can be resumed.

mod backend;
mod config;
mod synthetic;

use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::AlignError;
use crate::corpus::{collect_phrases, Corpus, CorpusError, PhraseInventory};
use crate::decoder::{decode_batch, DecodeError, TranslationSystem};
use crate::embedding::{EmbeddingError, EmbeddingSpace};
use crate::evaltune::{bleu, EvalError};
use crate::induction::{induce_table, InductionError};
use crate::lm::{train_lm, LmError, NGramModel};
use crate::table::TableError;

pub use backend::{
    load_system, read_lines, save_system, train_smt, write_lines, BackendError, BackendTranslator, ReferenceBackend,
    SubprocessBackend, TranslatorBackend, Tuning,
};
pub use config::{BackendKind, PipelineConfig, SmtSettings, SynthesisMode};
pub use synthetic::{
    filter_synthetic, generate_synthetic, keep_count, Origin, SmtTranslator, SyntheticCorpus, SyntheticPair, Translate,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error("missing required setting {0}")]
    MissingKey(&'static str),
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error("{pool} pool exhausted: {required} sentences required, {available} available")]
    PoolExhausted {
        pool: String,
        required: usize,
        available: usize,
    },
    #[error("expected {expected} lines, found {found}")]
    OutputCount { expected: usize, found: usize },
    #[error("{what} line {line}: {message}")]
    Parse {
        what: &'static str,
        line: usize,
        message: String,
    },
    #[error("workspace: {0}")]
    Workspace(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Induction(#[from] InductionError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Align(#[from] AlignError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PipelineError {
    pub fn io(path: &Path, source: io::Error) -> PipelineError {
        PipelineError::File {
            path: path.to_path_buf(),
            source,
        }
    }

    fn in_stage(self, stage: Stage) -> PipelineError {
        PipelineError::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}

/// Write through a temporary sibling and rename into place.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), PipelineError> {
    let name = path
        .file_name()
        .ok_or_else(|| PipelineError::Workspace(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    let result = (|| {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
        drop(w);
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| PipelineError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, PipelineError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| PipelineError::io(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn sha256_str(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Workspace-relative paths and digests of every file under `dir`, sorted.
fn digest_tree(root: &Path, dir: &Path) -> Result<Vec<(String, String)>, PipelineError> {
    let mut files = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        for entry in fs::read_dir(&d).map_err(|e| PipelineError::io(&d, e))? {
            let path = entry?.path();
            if path.is_dir() {
                pending.push(path);
            } else {
                files.push(path);
            }
        }
    }
    let mut out: Vec<(String, String)> = files
        .into_iter()
        .map(|p| {
            let rel = relative(root, &p);
            sha256_file(&p).map(|h| (rel, h))
        })
        .collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Prepare,
    Usmt(usize),
    Unmt(usize),
}

impl Stage {
    fn stream(self, side: usize) -> u64 {
        let ordinal = match self {
            Stage::Prepare => 0,
            Stage::Usmt(i) => 1 + i as u64,
            Stage::Unmt(i) => 1_000_000 + i as u64,
        };
        ordinal * 2 + side as u64
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Prepare => f.write_str("prepare"),
            Stage::Usmt(i) => write!(f, "usmt-{i:02}"),
            Stage::Unmt(i) => write!(f, "unmt-{i:02}"),
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "prepare" {
            return Ok(Stage::Prepare);
        }
        let bad = || format!("expected prepare, usmt-NN or unmt-NN, found {s:?}");
        let (kind, n) = s.split_once('-').ok_or_else(bad)?;
        let n: usize = n.parse().map_err(|_| bad())?;
        match kind {
            "usmt" => Ok(Stage::Usmt(n)),
            "unmt" if n > 0 => Ok(Stage::Unmt(n)),
            _ => Err(bad()),
        }
    }
}

/// Direction tags; index 0 translates source to target.
pub const DIRECTIONS: [&str; 2] = ["fwd", "bwd"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemKind {
    /// saved phrase-based system directory
    Smt,
    /// model directory of the translator backend
    Backend,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemRef {
    pub kind: SystemKind,
    /// workspace-relative
    pub path: String,
}

/// Where the run stands after a completed stage.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    pub stage: Stage,
    pub usmt_iteration: usize,
    pub unmt_iteration: usize,
    /// latest system per direction
    pub systems: [SystemRef; 2],
    /// monolingual line numbers drawn so far, per language
    pub consumed: [BTreeSet<usize>; 2],
    /// back-translated pairs gathered by the backend loop, per direction
    pub accumulated: [SyntheticCorpus; 2],
}

impl PipelineState {
    fn save(&self, root: &Path, langs: &[String; 2]) -> Result<(), PipelineError> {
        let dir = root.join(self.stage.to_string());
        write_atomic(&dir.join("state.txt"), |w| {
            writeln!(w, "stage {}", self.stage)?;
            writeln!(w, "usmt_iteration {}", self.usmt_iteration)?;
            writeln!(w, "unmt_iteration {}", self.unmt_iteration)?;
            for (tag, s) in DIRECTIONS.iter().zip(&self.systems) {
                let kind = match s.kind {
                    SystemKind::Smt => "smt",
                    SystemKind::Backend => "backend",
                };
                writeln!(w, "system {tag} {kind} {}", s.path)?;
            }
            Ok(())
        })?;
        for (lang, set) in langs.iter().zip(&self.consumed) {
            write_atomic(&dir.join(format!("consumed.{lang}.txt")), |w| {
                for i in set {
                    writeln!(w, "{i}")?;
                }
                Ok(())
            })?;
        }
        if self.unmt_iteration > 0 {
            for (tag, acc) in DIRECTIONS.iter().zip(&self.accumulated) {
                write_atomic(&dir.join(tag).join("accumulated.tsv"), |w| acc.write(w))?;
            }
        }
        Ok(())
    }

    fn load(root: &Path, stage: Stage, langs: &[String; 2]) -> Result<PipelineState, PipelineError> {
        let dir = root.join(stage.to_string());
        let path = dir.join("state.txt");
        let mut usmt_iteration = None;
        let mut unmt_iteration = None;
        let mut systems: [Option<SystemRef>; 2] = [None, None];
        for (i, line) in open(&path)?.lines().enumerate() {
            let line = line?;
            let bad = || PipelineError::Parse {
                what: "state.txt",
                line: i + 1,
                message: line.clone(),
            };
            let f: Vec<&str> = line.split(' ').collect();
            match f.as_slice() {
                ["stage", s] if *s == stage.to_string() => {}
                ["usmt_iteration", n] => usmt_iteration = Some(n.parse().map_err(|_| bad())?),
                ["unmt_iteration", n] => unmt_iteration = Some(n.parse().map_err(|_| bad())?),
                ["system", tag, kind, p] => {
                    let d = DIRECTIONS.iter().position(|t| t == tag).ok_or_else(bad)?;
                    let kind = match *kind {
                        "smt" => SystemKind::Smt,
                        "backend" => SystemKind::Backend,
                        _ => return Err(bad()),
                    };
                    systems[d] = Some(SystemRef {
                        kind,
                        path: p.to_string(),
                    });
                }
                _ => return Err(bad()),
            }
        }
        let missing = |what: &str| PipelineError::Workspace(format!("{} lacks {what}", path.display()));
        let [fwd, bwd] = systems;
        let mut consumed = [BTreeSet::new(), BTreeSet::new()];
        for (lang, set) in langs.iter().zip(consumed.iter_mut()) {
            let p = dir.join(format!("consumed.{lang}.txt"));
            for (i, line) in open(&p)?.lines().enumerate() {
                let line = line?;
                set.insert(line.trim().parse().map_err(|_| PipelineError::Parse {
                    what: "consumed lines",
                    line: i + 1,
                    message: line.clone(),
                })?);
            }
        }
        let unmt_iteration = unmt_iteration.ok_or_else(|| missing("unmt_iteration"))?;
        let mut accumulated = [SyntheticCorpus::default(), SyntheticCorpus::default()];
        if unmt_iteration > 0 {
            for (tag, acc) in DIRECTIONS.iter().zip(accumulated.iter_mut()) {
                *acc = SyntheticCorpus::read(open(&dir.join(tag).join("accumulated.tsv"))?)?;
            }
        }
        Ok(PipelineState {
            stage,
            usmt_iteration: usmt_iteration.ok_or_else(|| missing("usmt_iteration"))?,
            unmt_iteration,
            systems: [
                fwd.ok_or_else(|| missing("system fwd"))?,
                bwd.ok_or_else(|| missing("system bwd"))?,
            ],
            consumed,
            accumulated,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: Stage,
    /// provenance and score lines
    pub notes: Vec<String>,
    /// (workspace-relative path, sha256)
    pub files: Vec<(String, String)>,
}

/// Text record of a workspace: a header identifying configuration and
/// inputs, then one block per completed stage.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub header: Vec<String>,
    pub stages: Vec<StageRecord>,
}

const MANIFEST_MAGIC: &str = "monomt manifest 1";

impl Manifest {
    pub fn write(&self, mut out: impl Write) -> io::Result<()> {
        writeln!(out, "{MANIFEST_MAGIC}")?;
        for h in &self.header {
            writeln!(out, "{h}")?;
        }
        for s in &self.stages {
            writeln!(out, "stage {}", s.stage)?;
            for n in &s.notes {
                writeln!(out, "{n}")?;
            }
            for (path, hash) in &s.files {
                writeln!(out, "sha256 {hash} {path}")?;
            }
            writeln!(out, "complete {}", s.stage)?;
        }
        Ok(())
    }

    pub fn read(reader: impl BufRead) -> Result<Manifest, PipelineError> {
        let mut m = Manifest::default();
        let mut open_stage: Option<StageRecord> = None;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let bad = |message: &str| PipelineError::Parse {
                what: "manifest",
                line: i + 1,
                message: message.to_string(),
            };
            if i == 0 {
                if line != MANIFEST_MAGIC {
                    return Err(bad("not a manifest"));
                }
                continue;
            }
            if let Some(s) = line.strip_prefix("stage ") {
                if open_stage.is_some() {
                    return Err(bad("stage block not closed"));
                }
                open_stage = Some(StageRecord {
                    stage: s.parse().map_err(|e: String| bad(&e))?,
                    notes: Vec::new(),
                    files: Vec::new(),
                });
            } else if let Some(s) = line.strip_prefix("complete ") {
                let rec = open_stage.take().ok_or_else(|| bad("complete without stage"))?;
                if rec.stage.to_string() != s {
                    return Err(bad("complete names another stage"));
                }
                m.stages.push(rec);
            } else if let Some(rec) = open_stage.as_mut() {
                match line.strip_prefix("sha256 ").and_then(|r| r.split_once(' ')) {
                    Some((hash, path)) => rec.files.push((path.to_string(), hash.to_string())),
                    None => rec.notes.push(line),
                }
            } else if m.stages.is_empty() {
                m.header.push(line);
            } else {
                return Err(bad("text outside a stage block"));
            }
        }
        if open_stage.is_some() {
            return Err(PipelineError::Workspace("manifest ends inside a stage block".into()));
        }
        Ok(m)
    }

    pub fn is_complete(&self, stage: Stage) -> bool {
        self.stages.iter().any(|s| s.stage == stage)
    }

    pub fn last_complete(&self) -> Option<Stage> {
        self.stages.iter().map(|s| s.stage).max()
    }

    fn record(&mut self, rec: StageRecord) {
        self.stages.retain(|s| s.stage < rec.stage);
        self.stages.push(rec);
    }

    /// A `bleu <stage> <direction> <set> <value>` note.
    pub fn bleu(&self, stage: Stage, direction: &str, set: &str) -> Option<f64> {
        let prefix = format!("bleu {stage} {direction} {set} ");
        self.stages
            .iter()
            .flat_map(|s| &s.notes)
            .find_map(|n| n.strip_prefix(&prefix))
            .and_then(|v| v.parse().ok())
    }
}

/// Draw `n` unused, non-empty lines; the result is sorted.
pub fn sample_lines(
    pool: &[Vec<String>],
    consumed: &BTreeSet<usize>,
    n: usize,
    rng: &mut ChaCha8Rng,
    pool_name: &str,
) -> Result<Vec<usize>, PipelineError> {
    let eligible: Vec<usize> = (0..pool.len())
        .filter(|i| !consumed.contains(i) && !pool[*i].is_empty())
        .collect();
    if eligible.len() < n {
        return Err(PipelineError::PoolExhausted {
            pool: pool_name.to_string(),
            required: n,
            available: eligible.len(),
        });
    }
    let mut picked: Vec<usize> = rand::seq::index::sample(rng, eligible.len(), n)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}

fn corpus_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64, PipelineError> {
    Ok(bleu(hyps, refs)?.bleu)
}

type Parallel = [Vec<Vec<String>>; 2];

/// A workspace bound to one configuration.
pub struct Pipeline {
    pub config: PipelineConfig,
    root: PathBuf,
    langs: [String; 2],
    mono: [Corpus; 2],
    dev: Option<Parallel>,
    test: Option<Parallel>,
    lms: Option<[NGramModel; 2]>,
    manifest: Manifest,
}

impl Pipeline {
    /// Load inputs and open (or create) the workspace. An existing manifest
    /// must come from the same configuration and inputs, and every recorded
    /// file must still match its digest.
    pub fn open(config: PipelineConfig) -> Result<Pipeline, PipelineError> {
        config.validate()?;
        let root = config.workspace.clone().ok_or(PipelineError::MissingKey("workspace"))?;
        let langs = [config.src_lang.clone(), config.tgt_lang.clone()];
        let read_corpus = |lang: &str, p: &Path| -> Result<Corpus, PipelineError> { Ok(Corpus::read(lang, open(p)?)?) };
        let mono = [
            read_corpus(&langs[0], &config.src_mono)?,
            read_corpus(&langs[1], &config.tgt_mono)?,
        ];
        let pair = |a: &Option<PathBuf>, b: &Option<PathBuf>| -> Result<Option<Parallel>, PipelineError> {
            match (a, b) {
                (Some(a), Some(b)) => {
                    let (a, b) = (read_lines(a)?, read_lines(b)?);
                    if a.len() != b.len() {
                        return Err(PipelineError::OutputCount {
                            expected: a.len(),
                            found: b.len(),
                        });
                    }
                    Ok(Some([a, b]))
                }
                _ => Ok(None),
            }
        };
        let dev = pair(&config.dev_src, &config.dev_ref)?;
        let test = pair(&config.test_src, &config.test_ref)?;

        let mut header = vec![format!("config {}", sha256_str(&config.canonical()))];
        let inputs = [
            ("src_mono", Some(&config.src_mono)),
            ("tgt_mono", Some(&config.tgt_mono)),
            ("src_embeddings", Some(&config.src_embeddings)),
            ("tgt_embeddings", Some(&config.tgt_embeddings)),
            ("dev_src", config.dev_src.as_ref()),
            ("dev_ref", config.dev_ref.as_ref()),
            ("test_src", config.test_src.as_ref()),
            ("test_ref", config.test_ref.as_ref()),
        ];
        for (key, path) in inputs {
            if let Some(p) = path {
                header.push(format!("input {key} {}", sha256_file(p)?));
            }
        }

        fs::create_dir_all(&root).map_err(|e| PipelineError::io(&root, e))?;
        let manifest_path = root.join("manifest.txt");
        let manifest = if manifest_path.exists() {
            let m = Manifest::read(open(&manifest_path)?)?;
            if m.header != header {
                return Err(PipelineError::Workspace(format!(
                    "{} belongs to a different configuration or inputs",
                    root.display()
                )));
            }
            for s in &m.stages {
                for (rel, hash) in &s.files {
                    let actual = sha256_file(&root.join(rel))?;
                    if &actual != hash {
                        return Err(PipelineError::Workspace(format!(
                            "{rel} does not match its recorded digest"
                        )));
                    }
                }
            }
            m
        } else {
            Manifest {
                header,
                stages: Vec::new(),
            }
        };
        let pipeline = Pipeline {
            config,
            root,
            langs,
            mono,
            dev,
            test,
            lms: None,
            manifest,
        };
        pipeline.save_manifest()?;
        Ok(pipeline)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn save_manifest(&self) -> Result<(), PipelineError> {
        write_atomic(&self.root.join("manifest.txt"), |w| self.manifest.write(w))
    }

    /// Stages of a full run, in order.
    pub fn planned_stages(&self) -> Vec<Stage> {
        let mut s = vec![Stage::Prepare, Stage::Usmt(0)];
        s.extend((1..=self.config.usmt_iterations).map(Stage::Usmt));
        s.extend((1..=self.config.unmt_iterations).map(Stage::Unmt));
        s
    }

    fn lm_path(&self, side: usize) -> PathBuf {
        self.root.join("prepare").join(format!("lm.{}.arpa", self.langs[side]))
    }

    fn inventory_path(&self, side: usize) -> PathBuf {
        self.root
            .join("prepare")
            .join(format!("phrases.{}.txt", self.langs[side]))
    }

    fn lm_ref(&self, side: usize) -> String {
        format!("prepare/lm.{}.arpa", self.langs[side])
    }

    /// Language models of both sides, read back from the workspace so a
    /// resumed run uses exactly what a fresh one does.
    pub fn lms(&mut self) -> Result<&[NGramModel; 2], PipelineError> {
        if self.lms.is_none() {
            if !self.manifest.is_complete(Stage::Prepare) {
                return Err(PipelineError::Workspace("prepare stage has not run".into()));
            }
            let load = |p: PathBuf| -> Result<NGramModel, PipelineError> { Ok(NGramModel::read_arpa(open(&p)?)?) };
            self.lms = Some([load(self.lm_path(0))?, load(self.lm_path(1))?]);
        }
        Ok(self.lms.as_ref().expect("loaded above"))
    }

    fn embeddings(&self) -> Result<[EmbeddingSpace; 2], PipelineError> {
        let load = |lang: &str, p: &Path| -> Result<EmbeddingSpace, PipelineError> {
            Ok(EmbeddingSpace::read(lang, open(p)?)?)
        };
        Ok([
            load(&self.langs[0], &self.config.src_embeddings)?,
            load(&self.langs[1], &self.config.tgt_embeddings)?,
        ])
    }

    /// Dev data oriented for direction `d`.
    fn dev_for(&self, d: usize) -> Option<(&[Vec<String>], &[Vec<String>])> {
        self.dev.as_ref().map(|p| (p[d].as_slice(), p[1 - d].as_slice()))
    }

    fn test_for(&self, d: usize) -> Option<(&[Vec<String>], &[Vec<String>])> {
        self.test.as_ref().map(|p| (p[d].as_slice(), p[1 - d].as_slice()))
    }

    fn tuning_for(&self, d: usize) -> Option<Tuning> {
        if !self.config.tune {
            return None;
        }
        self.dev_for(d).map(|(s, r)| Tuning {
            dev_src: s.to_vec(),
            dev_ref: r.to_vec(),
            config: crate::evaltune::TuneConfig {
                seed: self.config.seed,
                ..self.config.tune_config.clone()
            },
        })
    }

    /// Run `body` in a fresh stage directory and record the result.
    fn stage<T>(
        &mut self,
        stage: Stage,
        body: impl FnOnce(&mut Self, &Path, &mut Vec<String>) -> Result<T, PipelineError>,
    ) -> Result<T, PipelineError> {
        let dir = self.root.join(stage.to_string());
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| PipelineError::io(&dir, e))?;
        log::info!("stage {stage}");
        let mut notes = Vec::new();
        let out = body(self, &dir, &mut notes).map_err(|e| e.in_stage(stage))?;
        let files = digest_tree(&self.root, &dir)?;
        self.manifest.record(StageRecord { stage, notes, files });
        self.save_manifest()?;
        Ok(out)
    }

    /// Phrase inventories restricted to the embedding vocabularies, and
    /// language models for both sides.
    pub fn prepare(&mut self) -> Result<(), PipelineError> {
        self.lms = None;
        self.stage(Stage::Prepare, |p, _dir, notes| {
            let spaces = p.embeddings()?;
            for side in 0..2 {
                let (inventory, _) = collect_phrases(&p.mono[side], &p.config.collect)?;
                let inventory = inventory.restrict(p.config.inventory_cap, |t| spaces[side].contains(t));
                write_atomic(&p.inventory_path(side), |w| inventory.write(w))?;
                let lm = train_lm(&p.mono[side], p.config.smt.lm_order)?;
                write_atomic(&p.lm_path(side), |w| lm.write_arpa(w))?;
                notes.push(format!("inventory {} {}", p.langs[side], inventory.len()));
                notes.push(format!("lm {} order {}", p.langs[side], lm.order()));
            }
            Ok(())
        })
    }

    /// Tune (when configured), score on dev and test, and save.
    fn finish_smt(
        &mut self,
        stage: Stage,
        d: usize,
        mut system: TranslationSystem,
        dir: &Path,
        notes: &mut Vec<String>,
    ) -> Result<(), PipelineError> {
        let tag = DIRECTIONS[d];
        let beam = self.config.beam;
        let sys_dir = dir.join(tag);
        fs::create_dir_all(&sys_dir).map_err(|e| PipelineError::io(&sys_dir, e))?;
        notes.push(format!(
            "system {stage} {tag} table={} pairs={} reordering={}",
            system.table.provenance(),
            system.table.pair_count(),
            system.reordering.is_some()
        ));
        if let Some(tuning) = self.tuning_for(d) {
            if let Some((s, r)) = self.test_for(d) {
                let hyps = translate_all(&system, s, beam);
                notes.push(format!("bleu {stage} {tag} test-untuned {}", corpus_bleu(&hyps, r)?));
            }
            let result = tuning.run(&system)?;
            write_atomic(&sys_dir.join("tune.log"), |w| result.write_log(w))?;
            notes.push(format!("bleu {stage} {tag} dev-untuned {}", result.initial_bleu));
            notes.push(format!("bleu {stage} {tag} dev {}", result.bleu));
            system.weights = result.weights;
        } else if let Some((s, r)) = self.dev_for(d) {
            let hyps = translate_all(&system, s, beam);
            notes.push(format!("bleu {stage} {tag} dev {}", corpus_bleu(&hyps, r)?));
        }
        if let Some((s, r)) = self.test_for(d) {
            let hyps = translate_all(&system, s, beam);
            notes.push(format!("bleu {stage} {tag} test {}", corpus_bleu(&hyps, r)?));
        }
        save_system(&sys_dir, &system, false, &self.lm_ref(1 - d))
    }

    fn load_smt(&mut self, r: &SystemRef, target_side: usize) -> Result<TranslationSystem, PipelineError> {
        let lm = self.lms()?[target_side].clone();
        load_system(&self.root.join(&r.path), Some(&lm))
    }

    /// Iteration 0: induced tables, no reordering model, default or tuned
    /// weights, for both directions.
    pub fn usmt_iteration0(&mut self) -> Result<PipelineState, PipelineError> {
        self.lms()?;
        let stage = Stage::Usmt(0);
        self.stage(stage, |p, dir, notes| {
            let spaces = p.embeddings()?;
            let inventories = [
                PhraseInventory::read(open(&p.inventory_path(0))?)?,
                PhraseInventory::read(open(&p.inventory_path(1))?)?,
            ];
            for d in 0..2 {
                let table = induce_table(
                    &inventories[d],
                    &inventories[1 - d],
                    &spaces[d],
                    &spaces[1 - d],
                    &p.config.induction,
                )?;
                let lm = p.lms()?[1 - d].clone();
                let system = TranslationSystem {
                    table,
                    reordering: None,
                    lm,
                    weights: p.config.weights.clone(),
                    distortion_limit: p.config.smt.distortion_limit,
                    max_options: p.config.smt.max_options,
                };
                p.finish_smt(stage, d, system, dir, notes)?;
            }
            let state = PipelineState {
                stage,
                usmt_iteration: 0,
                unmt_iteration: 0,
                systems: DIRECTIONS.map(|tag| SystemRef {
                    kind: SystemKind::Smt,
                    path: format!("{stage}/{tag}"),
                }),
                consumed: [BTreeSet::new(), BTreeSet::new()],
                accumulated: Default::default(),
            };
            state.save(&p.root, &p.langs)?;
            Ok(state)
        })
    }

    /// Draw `n` fresh lines of language `side` for `stage`.
    fn draw(
        &self,
        stage: Stage,
        side: usize,
        consumed: &BTreeSet<usize>,
    ) -> Result<Vec<(usize, Vec<String>)>, PipelineError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(stage.stream(side));
        let pool = self.mono[side].sentences();
        let lines = sample_lines(pool, consumed, self.config.sample_size, &mut rng, &self.langs[side])?;
        Ok(lines.into_iter().map(|i| (i, pool[i].clone())).collect())
    }

    /// Refinement iterations: synthetic pairs from the latest systems, new
    /// estimated and pruned tables with reordering models, optional
    /// re-tuning. Zero iterations return `state` unchanged.
    pub fn usmt_refine(&mut self, state: PipelineState, iterations: usize) -> Result<PipelineState, PipelineError> {
        if state.unmt_iteration > 0 && iterations > 0 {
            return Err(PipelineError::Workspace(
                "refinement after the backend loop started".into(),
            ));
        }
        let mut state = state;
        for _ in 0..iterations {
            state = self.refine_once(state)?;
        }
        Ok(state)
    }

    fn refine_once(&mut self, prev: PipelineState) -> Result<PipelineState, PipelineError> {
        let i = prev.usmt_iteration + 1;
        let stage = Stage::Usmt(i);
        let mode = self.config.refine_mode;
        self.stage(stage, |p, dir, notes| {
            let systems = [p.load_smt(&prev.systems[0], 1)?, p.load_smt(&prev.systems[1], 0)?];
            let lms = p.lms()?.clone();
            let mut consumed = prev.consumed.clone();
            let mut synthetic = Vec::new();
            for d in 0..2 {
                // forward keeps the real side as source, back as target
                let (side, producer) = match mode {
                    SynthesisMode::Forward => (d, d),
                    SynthesisMode::Back => (1 - d, 1 - d),
                };
                let synthetic_side = 1 - side;
                let lines = p.draw(stage, side, &consumed[side])?;
                consumed[side].extend(lines.iter().map(|(i, _)| *i));
                let translator = SmtTranslator {
                    system: &systems[producer],
                    beam: p.config.beam,
                };
                let corpus = generate_synthetic(
                    &translator,
                    &lines,
                    mode,
                    i,
                    &prev.systems[producer].path,
                    &lms[synthetic_side],
                )?;
                write_atomic(&dir.join(DIRECTIONS[d]).join("synthetic.tsv"), |w| corpus.write(w))?;
                notes.push(format!(
                    "synthetic {stage} {} mode={mode} from={} sampled={} lines={}",
                    DIRECTIONS[d],
                    prev.systems[producer].path,
                    p.langs[side],
                    corpus.len()
                ));
                synthetic.push(corpus);
            }
            for (d, corpus) in synthetic.into_iter().enumerate() {
                let (src, tgt) = corpus.sides();
                let system = train_smt(
                    src.into_iter().zip(tgt).collect(),
                    lms[1 - d].clone(),
                    &p.config.smt,
                    p.config.weights.clone(),
                )?;
                p.finish_smt(stage, d, system, dir, notes)?;
            }
            let state = PipelineState {
                stage,
                usmt_iteration: i,
                unmt_iteration: 0,
                systems: DIRECTIONS.map(|tag| SystemRef {
                    kind: SystemKind::Smt,
                    path: format!("{stage}/{tag}"),
                }),
                consumed,
                accumulated: Default::default(),
            };
            state.save(&p.root, &p.langs)?;
            Ok(state)
        })
    }

    /// Backends built from the configuration, one per direction.
    pub fn backends(&mut self) -> Result<[Box<dyn TranslatorBackend>; 2], PipelineError> {
        match self.config.backend.clone() {
            BackendKind::Reference => {
                let lms = self.lms()?.clone();
                let make = |d: usize| -> Box<dyn TranslatorBackend> {
                    Box::new(ReferenceBackend {
                        lm: Some(lms[1 - d].clone()),
                        lm_ref: self.lm_ref(1 - d),
                        settings: self.config.smt.clone(),
                        weights: self.config.weights.clone(),
                        beam: self.config.beam,
                        tuning: self.tuning_for(d),
                    })
                };
                Ok([make(0), make(1)])
            }
            BackendKind::Subprocess(cmd) => {
                let make = || -> Result<Box<dyn TranslatorBackend>, PipelineError> {
                    Ok(Box::new(
                        SubprocessBackend::new(&cmd).ok_or(PipelineError::MissingKey("backend_command"))?,
                    ))
                };
                Ok([make()?, make()?])
            }
        }
    }

    fn translator<'a>(
        &self,
        r: &SystemRef,
        lm: &NGramModel,
        backend: &'a dyn TranslatorBackend,
        scratch: &Path,
        name: &str,
    ) -> Result<Box<dyn Translate + 'a>, PipelineError> {
        Ok(match r.kind {
            SystemKind::Smt => Box::new(OwnedSmt {
                system: load_system(&self.root.join(&r.path), Some(lm))?,
                beam: self.config.beam,
            }),
            SystemKind::Backend => Box::new(BackendTranslator {
                backend,
                model: self.root.join(&r.path),
                scratch: scratch.to_path_buf(),
                name: name.to_string(),
            }),
        })
    }

    /// Backend iterations: per direction, back-translate fresh target-side
    /// lines with the other direction's latest system, accumulate, filter
    /// and train the backend from scratch.
    pub fn unmt_loop(
        &mut self,
        state: PipelineState,
        backends: &[&dyn TranslatorBackend; 2],
        iterations: usize,
    ) -> Result<PipelineState, PipelineError> {
        let mut state = state;
        for _ in 0..iterations {
            state = self.unmt_once(state, backends)?;
        }
        Ok(state)
    }

    fn unmt_once(
        &mut self,
        prev: PipelineState,
        backends: &[&dyn TranslatorBackend; 2],
    ) -> Result<PipelineState, PipelineError> {
        let i = prev.unmt_iteration + 1;
        let stage = Stage::Unmt(i);
        self.stage(stage, |p, dir, notes| {
            let lms = p.lms()?.clone();
            let mut consumed = prev.consumed.clone();
            let mut accumulated = prev.accumulated.clone();
            for d in 0..2 {
                // real target side, decoded by the opposite direction
                let side = 1 - d;
                let producer = 1 - d;
                let lines = p.draw(stage, side, &consumed[side])?;
                consumed[side].extend(lines.iter().map(|(i, _)| *i));
                let scratch = dir.join(DIRECTIONS[d]);
                let translator = p.translator(&prev.systems[producer], &lms[d], backends[producer], &scratch, "bt")?;
                let corpus = generate_synthetic(
                    translator.as_ref(),
                    &lines,
                    SynthesisMode::Back,
                    i,
                    &prev.systems[producer].path,
                    &lms[d],
                )?;
                notes.push(format!(
                    "synthetic {stage} {} mode=back from={} sampled={} lines={}",
                    DIRECTIONS[d],
                    prev.systems[producer].path,
                    p.langs[side],
                    corpus.len()
                ));
                accumulated[d].extend(corpus);
            }
            let mut systems = prev.systems.clone();
            for d in 0..2 {
                let tag = DIRECTIONS[d];
                let training = if p.config.filter {
                    filter_synthetic(&accumulated[d], p.config.alpha, i, p.config.sample_size)?
                } else {
                    accumulated[d].clone()
                };
                let sub = dir.join(tag);
                write_atomic(&sub.join("training.tsv"), |w| training.write(w))?;
                let (src, tgt) = training.sides();
                let src_path = sub.join(format!("train.{}", p.langs[d]));
                let tgt_path = sub.join(format!("train.{}", p.langs[1 - d]));
                write_lines(&src_path, &src)?;
                write_lines(&tgt_path, &tgt)?;
                let model = sub.join("model");
                backends[d].train(&src_path, &tgt_path, &model)?;
                notes.push(format!(
                    "backend {stage} {tag} {} accumulated={} training={}",
                    backends[d].describe(),
                    accumulated[d].len(),
                    training.len()
                ));
                systems[d] = SystemRef {
                    kind: SystemKind::Backend,
                    path: format!("{stage}/{tag}/model"),
                };
                for (set, data) in [("dev", p.dev_for(d)), ("test", p.test_for(d))] {
                    if let Some((s, r)) = data {
                        let (s, r) = (s.to_vec(), r.to_vec());
                        let translator = BackendTranslator {
                            backend: backends[d],
                            model: model.clone(),
                            scratch: sub.clone(),
                            name: set.to_string(),
                        };
                        let hyps = translator.translate(&s)?;
                        notes.push(format!("bleu {stage} {tag} {set} {}", corpus_bleu(&hyps, &r)?));
                    }
                }
            }
            let state = PipelineState {
                stage,
                usmt_iteration: prev.usmt_iteration,
                unmt_iteration: i,
                systems,
                consumed,
                accumulated,
            };
            state.save(&p.root, &p.langs)?;
            Ok(state)
        })
    }

    /// State after the latest completed stage past `prepare`.
    pub fn resume_state(&self) -> Result<Option<PipelineState>, PipelineError> {
        match self.manifest.last_complete() {
            None | Some(Stage::Prepare) => Ok(None),
            Some(stage) => PipelineState::load(&self.root, stage, &self.langs).map(Some),
        }
    }

    /// Run every planned stage not yet complete, stopping after `stop_after`
    /// when given. Returns the state of the last completed stage.
    pub fn run(&mut self, stop_after: Option<Stage>) -> Result<Option<PipelineState>, PipelineError> {
        let mut state = self.resume_state()?;
        let mut backends = None;
        for stage in self.planned_stages() {
            if !self.manifest.is_complete(stage) {
                match stage {
                    Stage::Prepare => self.prepare()?,
                    Stage::Usmt(0) => state = Some(self.usmt_iteration0()?),
                    Stage::Usmt(_) => {
                        let s = state.take().ok_or_else(|| missing_state(stage))?;
                        state = Some(self.usmt_refine(s, 1)?);
                    }
                    Stage::Unmt(_) => {
                        let s = state.take().ok_or_else(|| missing_state(stage))?;
                        if backends.is_none() {
                            backends = Some(self.backends()?);
                        }
                        let b = backends.as_ref().expect("built above");
                        state = Some(self.unmt_loop(s, &[b[0].as_ref(), b[1].as_ref()], 1)?);
                    }
                }
            }
            if stop_after == Some(stage) {
                break;
            }
        }
        Ok(state)
    }
}

fn missing_state(stage: Stage) -> PipelineError {
    PipelineError::Workspace(format!("no state to continue from before {stage}"))
}

struct OwnedSmt {
    system: TranslationSystem,
    beam: usize,
}

impl Translate for OwnedSmt {
    fn translate(&self, sentences: &[Vec<String>]) -> Result<Vec<Vec<String>>, PipelineError> {
        Ok(translate_all(&self.system, sentences, self.beam))
    }
}

fn translate_all(system: &TranslationSystem, sentences: &[Vec<String>], beam: usize) -> Vec<Vec<String>> {
    decode_batch(sentences, system, beam)
        .into_iter()
        .map(|d| d.tokens)
        .collect()
}
