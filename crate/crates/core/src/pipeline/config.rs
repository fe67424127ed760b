use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::align::PruneThreshold;
use crate::corpus::CollectConfig;
use crate::decoder::FeatureWeights;
use crate::evaltune::TuneConfig;
use crate::induction::InductionConfig;

use super::PipelineError;

/// Which side of a refinement pair is human-authored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SynthesisMode {
    /// real source, decoded target
    Forward,
    /// decoded source, real target
    Back,
}

impl fmt::Display for SynthesisMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthesisMode::Forward => "forward",
            SynthesisMode::Back => "back",
        })
    }
}

impl FromStr for SynthesisMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "forward" => Ok(SynthesisMode::Forward),
            "back" => Ok(SynthesisMode::Back),
            other => Err(format!("expected forward or back, found {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendKind {
    /// in-process phrase-based system trained on the synthetic pairs
    Reference,
    /// program and leading arguments; `train`/`translate` follow them
    Subprocess(Vec<String>),
}

/// Training and decoding settings for systems built from parallel data.
#[derive(Debug, Clone, PartialEq)]
pub struct SmtSettings {
    pub ibm1_iterations: usize,
    pub max_phrase_len: usize,
    pub reordering: bool,
    pub reordering_alpha: f64,
    pub prune: Option<PruneThreshold>,
    pub distortion_limit: usize,
    pub max_options: usize,
    pub lm_order: usize,
}

impl Default for SmtSettings {
    fn default() -> Self {
        SmtSettings {
            ibm1_iterations: 5,
            max_phrase_len: 6,
            reordering: true,
            reordering_alpha: 0.5,
            prune: Some(PruneThreshold::AlphaPlusEpsilon),
            distortion_limit: 6,
            max_options: 20,
            lm_order: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub src_lang: String,
    pub tgt_lang: String,
    pub src_mono: PathBuf,
    pub tgt_mono: PathBuf,
    pub src_embeddings: PathBuf,
    pub tgt_embeddings: PathBuf,
    pub dev_src: Option<PathBuf>,
    pub dev_ref: Option<PathBuf>,
    pub test_src: Option<PathBuf>,
    pub test_ref: Option<PathBuf>,
    pub workspace: Option<PathBuf>,
    pub seed: u64,
    /// sentences sampled per iteration and direction
    pub sample_size: usize,
    pub usmt_iterations: usize,
    pub unmt_iterations: usize,
    pub alpha: f64,
    pub filter: bool,
    pub refine_mode: SynthesisMode,
    pub threads: Option<usize>,
    pub collect: CollectConfig,
    pub inventory_cap: usize,
    pub induction: InductionConfig,
    pub smt: SmtSettings,
    pub beam: usize,
    pub tune: bool,
    pub tune_config: TuneConfig,
    pub weights: FeatureWeights,
    pub backend: BackendKind,
}

const PATH_KEYS: [&str; 11] = [
    "src_mono",
    "tgt_mono",
    "src_embeddings",
    "tgt_embeddings",
    "dev_src",
    "dev_ref",
    "test_src",
    "test_ref",
    "workspace",
    "threads",
    "backend_command",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, String> {
    value.parse().map_err(|_| format!("invalid value {value:?} for {key}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{key} must be true or false, found {value:?}")),
    }
}

fn parse_threshold(value: &str) -> Result<Option<PruneThreshold>, String> {
    match value {
        "none" => Ok(None),
        v => v.parse().map(Some).map_err(|e| format!("prune_threshold: {e}")),
    }
}

impl PipelineConfig {
    /// Minimal configuration; everything else takes its default.
    pub fn new(src: (&str, &Path, &Path), tgt: (&str, &Path, &Path), phrase_threshold: f64) -> PipelineConfig {
        PipelineConfig {
            src_lang: src.0.to_string(),
            tgt_lang: tgt.0.to_string(),
            src_mono: src.1.to_path_buf(),
            tgt_mono: tgt.1.to_path_buf(),
            src_embeddings: src.2.to_path_buf(),
            tgt_embeddings: tgt.2.to_path_buf(),
            dev_src: None,
            dev_ref: None,
            test_src: None,
            test_ref: None,
            workspace: None,
            seed: 0,
            sample_size: 1000,
            usmt_iterations: 4,
            unmt_iterations: 4,
            alpha: 0.5,
            filter: true,
            refine_mode: SynthesisMode::Forward,
            threads: None,
            collect: CollectConfig::new(phrase_threshold),
            inventory_cap: 5000,
            induction: InductionConfig::default(),
            smt: SmtSettings::default(),
            beam: 50,
            tune: true,
            tune_config: TuneConfig::default(),
            weights: FeatureWeights::default(),
            backend: BackendKind::Reference,
        }
    }

    pub fn from_file(path: &Path) -> Result<PipelineConfig, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::parse(&text, base)
    }

    /// Parse `key = value` lines; `#` starts a comment. Relative paths are
    /// resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<PipelineConfig, PipelineError> {
        let mut values: Vec<(usize, String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| PipelineError::Config {
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            let (key, value) = (key.trim().to_string(), value.trim().to_string());
            if values.iter().any(|(_, k, _)| *k == key) {
                return Err(PipelineError::Config {
                    line: i + 1,
                    message: format!("duplicate key {key}"),
                });
            }
            values.push((i + 1, key, value));
        }
        let lookup = |key: &str| values.iter().find(|(_, k, _)| k == key).map(|(_, _, v)| v.as_str());
        let require = |key: &'static str| lookup(key).ok_or(PipelineError::MissingKey(key));
        let path = |v: &str| base.join(v);

        let threshold: f64 = require("phrase_threshold")?
            .parse()
            .map_err(|_| PipelineError::Config {
                line: 0,
                message: "phrase_threshold must be a number".into(),
            })?;
        let mut config = PipelineConfig::new(
            (
                lookup("src_lang").unwrap_or("src"),
                &path(require("src_mono")?),
                &path(require("src_embeddings")?),
            ),
            (
                lookup("tgt_lang").unwrap_or("tgt"),
                &path(require("tgt_mono")?),
                &path(require("tgt_embeddings")?),
            ),
            threshold,
        );
        for (line, key, value) in &values {
            config
                .set(key, value, base)
                .map_err(|message| PipelineError::Config { line: *line, message })?;
        }
        config.validate()?;
        Ok(config)
    }

    fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<(), String> {
        let v = value;
        match key {
            "src_lang" => self.src_lang = v.to_string(),
            "tgt_lang" => self.tgt_lang = v.to_string(),
            "src_mono" => self.src_mono = base.join(v),
            "tgt_mono" => self.tgt_mono = base.join(v),
            "src_embeddings" => self.src_embeddings = base.join(v),
            "tgt_embeddings" => self.tgt_embeddings = base.join(v),
            "dev_src" => self.dev_src = Some(base.join(v)),
            "dev_ref" => self.dev_ref = Some(base.join(v)),
            "test_src" => self.test_src = Some(base.join(v)),
            "test_ref" => self.test_ref = Some(base.join(v)),
            "workspace" => self.workspace = Some(base.join(v)),
            "seed" => self.seed = parse_num(key, v)?,
            "sample_size" => self.sample_size = parse_num(key, v)?,
            "usmt_iterations" => self.usmt_iterations = parse_num(key, v)?,
            "unmt_iterations" => self.unmt_iterations = parse_num(key, v)?,
            "alpha" => self.alpha = parse_num(key, v)?,
            "filter" => self.filter = parse_bool(key, v)?,
            "refine_mode" => self.refine_mode = v.parse()?,
            "threads" => self.threads = Some(parse_num(key, v)?),
            "phrase_delta" => self.collect.delta = parse_num(key, v)?,
            "phrase_threshold" => self.collect.threshold = parse_num(key, v)?,
            "phrase_passes" => self.collect.passes = parse_num(key, v)?,
            "max_phrase_len" => {
                self.collect.max_len = parse_num(key, v)?;
                self.smt.max_phrase_len = self.collect.max_len;
            }
            "inventory_cap" => self.inventory_cap = parse_num(key, v)?,
            "beta" => self.induction.beta = parse_num(key, v)?,
            "top_k" => self.induction.k = parse_num(key, v)?,
            "word_candidates" => self.induction.word_candidates = parse_num(key, v)?,
            "lm_order" => self.smt.lm_order = parse_num(key, v)?,
            "beam" => self.beam = parse_num(key, v)?,
            "distortion_limit" => self.smt.distortion_limit = parse_num(key, v)?,
            "max_options" => self.smt.max_options = parse_num(key, v)?,
            "ibm1_iterations" => self.smt.ibm1_iterations = parse_num(key, v)?,
            "reordering" => self.smt.reordering = parse_bool(key, v)?,
            "reordering_alpha" => self.smt.reordering_alpha = parse_num(key, v)?,
            "prune_threshold" => self.smt.prune = parse_threshold(v)?,
            "tune" => self.tune = parse_bool(key, v)?,
            "tune_budget" => self.tune_config.budget = parse_num(key, v)?,
            "tune_beam" => self.tune_config.beam = parse_num(key, v)?,
            "tune_smoothing" => self.tune_config.smoothing = v.parse().map_err(|e| format!("tune_smoothing: {e}"))?,
            "tune_grid" => {
                self.tune_config.grid = v
                    .split(',')
                    .map(|x| parse_num::<f64>(key, x.trim()))
                    .collect::<Result<_, _>>()?
            }
            "backend" => match v {
                "reference" => self.backend = BackendKind::Reference,
                "subprocess" => {
                    if !matches!(self.backend, BackendKind::Subprocess(_)) {
                        self.backend = BackendKind::Subprocess(Vec::new());
                    }
                }
                other => return Err(format!("backend must be reference or subprocess, found {other:?}")),
            },
            "backend_command" => {
                let words: Vec<String> = v.split_whitespace().map(str::to_string).collect();
                if words.is_empty() {
                    return Err("backend_command is empty".into());
                }
                self.backend = BackendKind::Subprocess(words);
            }
            _ => match key.strip_prefix("weight.") {
                Some(name) => {
                    let value = parse_num(key, v)?;
                    self.weights.set(name, value).map_err(|e| e.to_string())?;
                }
                None => return Err(format!("unknown key {key}")),
            },
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Invalid(m.to_string()));
        if self.sample_size == 0 {
            return bad("sample_size must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad("alpha must lie in (0, 1]");
        }
        if self.src_lang == self.tgt_lang || self.src_lang.is_empty() || self.tgt_lang.is_empty() {
            return bad("src_lang and tgt_lang must be distinct and non-empty");
        }
        if self.dev_src.is_some() != self.dev_ref.is_some() {
            return bad("dev_src and dev_ref go together");
        }
        if self.test_src.is_some() != self.test_ref.is_some() {
            return bad("test_src and test_ref go together");
        }
        if self.beam == 0 || self.tune_config.beam == 0 {
            return bad("beam sizes must be at least 1");
        }
        if self.smt.lm_order == 0 || self.smt.max_phrase_len == 0 {
            return bad("lm_order and max_phrase_len must be at least 1");
        }
        if self.induction.k == 0 || self.induction.word_candidates == 0 || self.inventory_cap == 0 {
            return bad("top_k, word_candidates and inventory_cap must be at least 1");
        }
        if matches!(&self.backend, BackendKind::Subprocess(c) if c.is_empty()) {
            return bad("backend = subprocess needs backend_command");
        }
        self.weights
            .validate()
            .map_err(|e| PipelineError::Invalid(e.to_string()))
    }

    /// Every setting that influences results, one `key = value` per line.
    /// Paths, thread count and the backend command are left out.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            if !PATH_KEYS.contains(&k.as_str()) {
                let _ = writeln!(out, "{k} = {v}");
            }
        }
        out
    }

    fn entries(&self) -> Vec<(String, String)> {
        let p = |p: &Path| p.display().to_string();
        let mut e: Vec<(String, String)> = vec![
            ("src_lang".into(), self.src_lang.clone()),
            ("tgt_lang".into(), self.tgt_lang.clone()),
            ("src_mono".into(), p(&self.src_mono)),
            ("tgt_mono".into(), p(&self.tgt_mono)),
            ("src_embeddings".into(), p(&self.src_embeddings)),
            ("tgt_embeddings".into(), p(&self.tgt_embeddings)),
        ];
        for (k, v) in [
            ("dev_src", &self.dev_src),
            ("dev_ref", &self.dev_ref),
            ("test_src", &self.test_src),
            ("test_ref", &self.test_ref),
            ("workspace", &self.workspace),
        ] {
            if let Some(v) = v {
                e.push((k.into(), p(v)));
            }
        }
        if let Some(t) = self.threads {
            e.push(("threads".into(), t.to_string()));
        }
        let threshold = self.smt.prune.map_or("none".to_string(), |t| t.to_string());
        let grid: Vec<String> = self.tune_config.grid.iter().map(f64::to_string).collect();
        e.extend(
            [
                ("seed", self.seed.to_string()),
                ("sample_size", self.sample_size.to_string()),
                ("usmt_iterations", self.usmt_iterations.to_string()),
                ("unmt_iterations", self.unmt_iterations.to_string()),
                ("alpha", self.alpha.to_string()),
                ("filter", self.filter.to_string()),
                ("refine_mode", self.refine_mode.to_string()),
                ("phrase_delta", self.collect.delta.to_string()),
                ("phrase_threshold", self.collect.threshold.to_string()),
                ("phrase_passes", self.collect.passes.to_string()),
                ("max_phrase_len", self.collect.max_len.to_string()),
                ("inventory_cap", self.inventory_cap.to_string()),
                ("beta", self.induction.beta.to_string()),
                ("top_k", self.induction.k.to_string()),
                ("word_candidates", self.induction.word_candidates.to_string()),
                ("lm_order", self.smt.lm_order.to_string()),
                ("beam", self.beam.to_string()),
                ("distortion_limit", self.smt.distortion_limit.to_string()),
                ("max_options", self.smt.max_options.to_string()),
                ("ibm1_iterations", self.smt.ibm1_iterations.to_string()),
                ("reordering", self.smt.reordering.to_string()),
                ("reordering_alpha", self.smt.reordering_alpha.to_string()),
                ("prune_threshold", threshold),
                ("tune", self.tune.to_string()),
                ("tune_budget", self.tune_config.budget.to_string()),
                ("tune_beam", self.tune_config.beam.to_string()),
                ("tune_smoothing", self.tune_config.smoothing.to_string()),
                ("tune_grid", grid.join(",")),
            ]
            .map(|(k, v)| (k.to_string(), v)),
        );
        match &self.backend {
            BackendKind::Reference => e.push(("backend".into(), "reference".into())),
            BackendKind::Subprocess(cmd) => {
                e.push(("backend".into(), "subprocess".into()));
                e.push(("backend_command".into(), cmd.join(" ")));
            }
        }
        for name in FeatureWeights::names(true) {
            let w = self.weights.get(name).expect("known feature");
            e.push((format!("weight.{name}"), w.to_string()));
        }
        e
    }
}

/// Round-trips through [`PipelineConfig::parse`] with absolute paths.
impl fmt::Display for PipelineConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.entries() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
