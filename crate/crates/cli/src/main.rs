use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use monomt::align::{
    align_corpus, count_pairs, estimate_reordering, estimate_table, prune, Ibm1Config, PairCounts, PruneThreshold,
};
use monomt::corpus::{collect_phrases, CollectConfig};
use monomt::decoder::{decode_stream, FeatureWeights};
use monomt::evaltune::{bleu_with, tune, Smoothing, TuneConfig};
use monomt::induction::{induce_table, InductionConfig};
use monomt::lm::{train_lm, train_lm_add_k, NGramModel};
use monomt::pipeline::{
    load_system, read_lines, save_system, write_atomic, Pipeline, PipelineConfig, ReferenceBackend, SmtSettings, Stage,
    TranslatorBackend,
};
use monomt::{Corpus, EmbeddingSpace, PhraseInventory};

#[derive(Parser)]
#[command(name = "monomt", version, about = "Machine translation from monolingual corpora")]
struct Cli {
    /// pipeline configuration file (key = value lines)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// overrides the configured seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// overrides the configured workspace
    #[arg(long, global = true)]
    workspace: Option<PathBuf>,
    /// worker threads (defaults to all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge frequent word pairs into phrases and write the phrase inventory
    CollectPhrases(CollectArgs),
    /// Build a phrase table from two inventories and aligned embeddings
    Induce(InduceArgs),
    /// Train an n-gram language model and write it in ARPA format
    TrainLm(TrainLmArgs),
    /// Translate a file with a saved system
    Decode(DecodeArgs),
    /// Symmetrized word alignments of a parallel corpus
    Align(AlignArgs),
    /// Train a phrase-based system from a parallel corpus
    Extract(ExtractArgs),
    /// Drop phrase pairs that fail Fisher's exact test
    Prune(PruneArgs),
    /// Tune a system's feature weights for BLEU on a dev set
    Tune(TuneArgs),
    /// Corpus BLEU of a hypothesis file
    Bleu(BleuArgs),
    /// Run the pipeline through the last refinement iteration
    UsmtRun,
    /// Run the pipeline through the last backend iteration
    UnmtRun,
    /// Run every pipeline stage, resuming a partial workspace
    PipelineRun(PipelineRunArgs),
    /// Translator backend protocol served by the built-in system
    #[command(hide = true)]
    Backend(BackendArgs),
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "x")]
    lang: String,
    #[arg(long)]
    threshold: f64,
    #[arg(long, default_value_t = 10.0)]
    delta: f64,
    #[arg(long, default_value_t = 6)]
    passes: usize,
    #[arg(long, default_value_t = 6)]
    max_len: usize,
    /// inventory output: one `phrase<TAB>frequency` per line
    #[arg(long)]
    inventory: PathBuf,
    /// merged corpus output, phrases joined with underscores
    #[arg(long)]
    merged: Option<PathBuf>,
}

#[derive(Args)]
struct InduceArgs {
    #[arg(long)]
    src_inventory: PathBuf,
    #[arg(long)]
    tgt_inventory: PathBuf,
    #[arg(long)]
    src_embeddings: PathBuf,
    #[arg(long)]
    tgt_embeddings: PathBuf,
    #[arg(long, default_value_t = 300)]
    k: usize,
    #[arg(long, default_value_t = 30.0)]
    beta: f64,
    #[arg(long, default_value_t = 300)]
    word_candidates: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainLmArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 4)]
    order: usize,
    /// use add-k smoothing instead of modified Kneser-Ney
    #[arg(long)]
    add_k: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    /// directory written by `extract` or the pipeline
    #[arg(long)]
    system: PathBuf,
    /// language model, when the system does not bundle one
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// phrase segmentation per sentence
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    beam: usize,
}

#[derive(Args)]
struct ParallelArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long, default_value_t = 5)]
    iterations: usize,
}

#[derive(Args)]
struct AlignArgs {
    #[command(flatten)]
    data: ParallelArgs,
    /// one line of `i-j` links per sentence pair
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    data: ParallelArgs,
    /// target-side language model, copied into the system
    #[arg(long)]
    lm: PathBuf,
    #[arg(long, default_value_t = 6)]
    max_len: usize,
    #[arg(long)]
    no_reordering: bool,
    #[arg(long, default_value_t = 0.5)]
    reordering_alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    system: PathBuf,
    /// `alpha+epsilon` or a p-value
    #[arg(long, default_value = "alpha+epsilon")]
    threshold: PruneThreshold,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    system: PathBuf,
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    dev_src: PathBuf,
    #[arg(long)]
    dev_ref: PathBuf,
    #[arg(long, default_value_t = 200)]
    budget: usize,
    #[arg(long, default_value_t = 50)]
    beam: usize,
    #[arg(long, default_value = "none")]
    smoothing: Smoothing,
}

#[derive(Args)]
struct BleuArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, default_value = "none")]
    smoothing: Smoothing,
}

#[derive(Args)]
struct PipelineRunArgs {
    /// stop once this stage is complete, e.g. usmt-01
    #[arg(long)]
    stop_after: Option<Stage>,
}

#[derive(Args)]
struct BackendArgs {
    action: String,
    #[arg(long)]
    src: Option<PathBuf>,
    #[arg(long)]
    tgt: Option<PathBuf>,
    #[arg(long)]
    model: PathBuf,
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long = "out")]
    output: Option<PathBuf>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("cannot create {}", path.display()))?,
    ))
}

fn read_lm(path: &Path) -> Result<NGramModel> {
    NGramModel::read_arpa(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn read_parallel(args: &ParallelArgs) -> Result<Vec<(Vec<String>, Vec<String>)>> {
    let (src, tgt) = (read_lines(&args.src)?, read_lines(&args.tgt)?);
    if src.len() != tgt.len() {
        bail!(
            "{} has {} lines but {} has {}",
            args.src.display(),
            src.len(),
            args.tgt.display(),
            tgt.len()
        );
    }
    Ok(src.into_iter().zip(tgt).collect())
}

fn ibm1(iterations: usize) -> Ibm1Config {
    Ibm1Config {
        iterations,
        ..Ibm1Config::default()
    }
}

fn pipeline_config(cli: &Cli) -> Result<PipelineConfig> {
    let path = cli.config.as_ref().context("this command needs --config")?;
    let mut config = PipelineConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(ws) = &cli.workspace {
        config.workspace = Some(ws.clone());
    }
    if let Some(t) = cli.threads {
        config.threads = Some(t);
    }
    Ok(config)
}

fn run_pipeline(config: PipelineConfig, stop_after: Option<Stage>) -> Result<()> {
    let mut pipeline = Pipeline::open(config)?;
    pipeline.run(stop_after)?;
    let out = io::stdout();
    let mut out = out.lock();
    for stage in &pipeline.manifest().stages {
        for note in stage.notes.iter().filter(|n| n.starts_with("bleu ")) {
            writeln!(out, "{note}")?;
        }
    }
    writeln!(out, "workspace {}", pipeline.root().display())?;
    Ok(())
}

fn collect(a: &CollectArgs) -> Result<()> {
    let corpus = Corpus::read(&a.lang, open(&a.input)?)?;
    let config = CollectConfig {
        delta: a.delta,
        threshold: a.threshold,
        passes: a.passes,
        max_len: a.max_len,
    };
    let (inventory, merged) = collect_phrases(&corpus, &config)?;
    inventory.write(create(&a.inventory)?)?;
    if let Some(m) = &a.merged {
        merged.write(create(m)?)?;
    }
    let multi = inventory.phrases().filter(|p| p.len() > 1).count();
    println!("{} units, {multi} multi-word phrases", inventory.len());
    Ok(())
}

fn induce(a: &InduceArgs) -> Result<()> {
    let src_inv = PhraseInventory::read(open(&a.src_inventory)?)?;
    let tgt_inv = PhraseInventory::read(open(&a.tgt_inventory)?)?;
    let src_space = EmbeddingSpace::read("src", open(&a.src_embeddings)?)?;
    let tgt_space = EmbeddingSpace::read("tgt", open(&a.tgt_embeddings)?)?;
    let config = InductionConfig {
        k: a.k,
        beta: a.beta,
        word_candidates: a.word_candidates,
    };
    let table = induce_table(&src_inv, &tgt_inv, &src_space, &tgt_space, &config)?;
    table.write(create(&a.out)?)?;
    println!("{} sources, {} pairs", table.source_count(), table.pair_count());
    Ok(())
}

fn train_language_model(a: &TrainLmArgs) -> Result<()> {
    let corpus = Corpus::read("x", open(&a.input)?)?;
    let lm = match a.add_k {
        Some(k) => train_lm_add_k(&corpus, a.order, k)?,
        None => train_lm(&corpus, a.order)?,
    };
    lm.write_arpa(create(&a.out)?)?;
    Ok(())
}

fn load(system: &Path, lm: Option<&PathBuf>) -> Result<monomt::decoder::TranslationSystem> {
    let lm = lm.map(|p| read_lm(p)).transpose()?;
    Ok(load_system(system, lm.as_ref())?)
}

fn decode(a: &DecodeArgs) -> Result<()> {
    let system = load(&a.system, a.lm.as_ref())?;
    let mut trace = a.trace.as_deref().map(create).transpose()?;
    let n = decode_stream(
        open(&a.input)?,
        create(&a.output)?,
        trace.as_mut().map(|t| t as &mut dyn Write),
        &system,
        a.beam,
    )?;
    log::info!("decoded {n} sentences");
    Ok(())
}

fn align(a: &AlignArgs) -> Result<()> {
    let aligned = align_corpus(read_parallel(&a.data)?, &ibm1(a.data.iterations))?;
    let mut out = create(&a.out)?;
    for alignment in &aligned.alignments {
        writeln!(out, "{alignment}")?;
    }
    if let Some(ll) = aligned.forward.log_likelihoods().last() {
        log::info!("forward log-likelihood {ll}");
    }
    Ok(())
}

fn extract(a: &ExtractArgs) -> Result<()> {
    let aligned = align_corpus(read_parallel(&a.data)?, &ibm1(a.data.iterations))?;
    let counts = count_pairs(&aligned, a.max_len);
    let table = estimate_table(&counts, &aligned.forward, &aligned.backward)?;
    let mut system = monomt::decoder::TranslationSystem::new(table, read_lm(&a.lm)?);
    if !a.no_reordering {
        let mut reordering = estimate_reordering(&aligned, a.max_len, a.reordering_alpha);
        reordering.retain_pairs(&system.table);
        system.reordering = Some(reordering);
    }
    system.weights = FeatureWeights::default();
    save_system(&a.out, &system, true, "lm.arpa")?;
    write_atomic(&a.out.join("counts.txt"), |w| counts.write(w))?;
    println!(
        "{} pairs from {} sentence pairs",
        system.table.pair_count(),
        aligned.pairs.len()
    );
    Ok(())
}

fn prune_system(a: &PruneArgs) -> Result<()> {
    let mut system = load_system(&a.system, None)?;
    let counts = PairCounts::read(open(&a.system.join("counts.txt"))?)?;
    let before = system.table.pair_count();
    system.table = prune(&system.table, &counts, a.threshold)?;
    if let Some(r) = system.reordering.as_mut() {
        r.retain_pairs(&system.table);
    }
    save_system(&a.system, &system, true, "lm.arpa")?;
    println!("kept {} of {before} pairs", system.table.pair_count());
    Ok(())
}

fn tune_system(a: &TuneArgs, seed: u64) -> Result<()> {
    let mut system = load(&a.system, a.lm.as_ref())?;
    let (src, refs) = (read_lines(&a.dev_src)?, read_lines(&a.dev_ref)?);
    let config = TuneConfig {
        budget: a.budget,
        beam: a.beam,
        smoothing: a.smoothing,
        seed,
        ..TuneConfig::default()
    };
    let result = tune(&system, &src, &refs, &config)?;
    write_atomic(&a.system.join("tune.log"), |w| result.write_log(w))?;
    system.weights = result.weights.clone();
    write_atomic(&a.system.join("weights.txt"), |w| writeln!(w, "{}", system.weights))?;
    println!(
        "dev BLEU {:.2} -> {:.2} after {} evaluations",
        result.initial_bleu, result.bleu, result.evaluations
    );
    Ok(())
}

fn score(a: &BleuArgs) -> Result<()> {
    let (hyps, refs) = (read_lines(&a.hyp)?, read_lines(&a.reference)?);
    let r = bleu_with(&hyps, &refs, a.smoothing)?;
    let p: Vec<String> = r.precisions.iter().map(|p| format!("{:.1}", 100.0 * p)).collect();
    println!(
        "BLEU = {:.2}, {} (BP={:.3}, hyp_len={}, ref_len={})",
        r.bleu,
        p.join("/"),
        r.brevity_penalty,
        r.hyp_len,
        r.ref_len
    );
    Ok(())
}

fn backend(a: &BackendArgs, cli: &Cli) -> Result<()> {
    let (settings, weights, beam) = match &cli.config {
        Some(_) => {
            let c = pipeline_config(cli)?;
            (c.smt, c.weights, c.beam)
        }
        None => (SmtSettings::default(), FeatureWeights::default(), 50),
    };
    let b = ReferenceBackend {
        lm: None,
        lm_ref: "lm.arpa".into(),
        settings,
        weights,
        beam,
        tuning: None,
    };
    let need = |p: &Option<PathBuf>, flag: &str| p.clone().with_context(|| format!("{} needs --{flag}", a.action));
    match a.action.as_str() {
        "train" => b.train(&need(&a.src, "src")?, &need(&a.tgt, "tgt")?, &a.model)?,
        "translate" => b.translate(&a.model, &need(&a.input, "in")?, &need(&a.output, "out")?)?,
        other => bail!("unknown backend action {other:?}"),
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: &Cli) -> Result<()> {
    let threads = match (&cli.command, cli.threads) {
        (_, Some(t)) => Some(t),
        (Command::UsmtRun | Command::UnmtRun | Command::PipelineRun(_), None) => pipeline_config(cli)?.threads,
        _ => None,
    };
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global()?;
    }
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::CollectPhrases(a) => collect(a),
        Command::Induce(a) => induce(a),
        Command::TrainLm(a) => train_language_model(a),
        Command::Decode(a) => decode(a),
        Command::Align(a) => align(a),
        Command::Extract(a) => extract(a),
        Command::Prune(a) => prune_system(a),
        Command::Tune(a) => tune_system(a, seed),
        Command::Bleu(a) => score(a),
        Command::UsmtRun => {
            let config = pipeline_config(cli)?;
            let last = Stage::Usmt(config.usmt_iterations);
            run_pipeline(config, Some(last))
        }
        Command::UnmtRun => run_pipeline(pipeline_config(cli)?, None),
        Command::PipelineRun(a) => run_pipeline(pipeline_config(cli)?, a.stop_after),
        Command::Backend(a) => backend(a, cli),
    }
}
