//! `timbre` command-line front end.
//!
//! Every subcommand resolves its settings in three layers (built-in
//! defaults, the `--config` TOML file, then flags) and writes a
//! `<command>.manifest.json` with the effective settings next to its outputs.

// `!(x > 0.0)` checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
mod manifest;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use timbre_core::dataset::{
    dataset_stats, generate_synthetic, load_embeddings, parse_annotations, validate_against_store, write_annotations,
    write_embeddings, AnnotationTuple, DescriptorVocab, EmbeddingStore, Gender,
};
use timbre_core::editor::{edit_prompt, write_edited, Backend, EditedEmbedding};
use timbre_core::metrics::{
    build_reference_table, embedding_dump, export_report, speaker_sources, tvas_report, write_dump, EditSource,
    IdentityVerifier, SweepContext,
};
use timbre_core::par::Executor;
use timbre_core::trainer::{gradcheck, gradcheck_case, write_loss_csv, AblationMode, Checkpoint, TrainState};
use timbre_core::Error;

pub use config::CliConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "timbre",
    version,
    about = "Train, apply and evaluate text-prompted voice-attribute editing"
)]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (1 = sequential).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub output_dir: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write a checkpoint plus a loss CSV.
    Train(TrainArgs),
    /// Edit one speaker embedding from a text prompt.
    Edit(EditArgs),
    /// Sweep the editing degree and report TVAS per descriptor.
    Eval(EvalArgs),
    /// Print annotation statistics.
    Stats(StatsArgs),
    /// Generate a synthetic corpus with planted attribute directions.
    Synth(SynthArgs),
    /// Certify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args, Default)]
pub struct DataArgs {
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

impl DataArgs {
    fn apply(&self, p: &mut config::Paths) {
        set(&mut p.embeddings, &self.embeddings);
        set(&mut p.annotations, &self.annotations);
        set(&mut p.vocab, &self.vocab);
        set(&mut p.checkpoint, &self.checkpoint);
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub main_slots: Option<usize>,
    #[arg(long)]
    pub residual_slots: Option<usize>,
    #[arg(long)]
    pub mode: Option<AblationMode>,
    /// Continue from this checkpoint up to the configured step count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub speaker: String,
    /// Edit this utterance instead of the speaker's mean embedding.
    #[arg(long)]
    pub utt: Option<String>,
    #[arg(long)]
    pub prompt: String,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub mode: Option<AblationMode>,
    #[arg(long)]
    pub backend: Option<Backend>,
    #[arg(long)]
    pub llm_url: Option<String>,
    #[arg(long)]
    pub llm_model: Option<String>,
    /// Output JSON Lines file (default `<output_dir>/edited.jsonl`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `start:step:end` or a comma list.
    #[arg(long, value_parser = Grid::parse)]
    pub grid: Option<Grid>,
    #[arg(long)]
    pub mode: Option<AblationMode>,
    #[arg(long)]
    pub sources: Option<PathBuf>,
    #[arg(long)]
    pub sources_per_gender: Option<usize>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub speakers_per_gender: Option<usize>,
    #[arg(long)]
    pub descriptors: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub utterances: Option<usize>,
    #[arg(long)]
    pub noise_scale: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub holdout: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub cases: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub mode: Option<AblationMode>,
    #[arg(long)]
    pub tolerance: Option<f64>,
}

/// Degree grid flag. A newtype so clap treats it as a single value.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

impl Grid {
    fn parse(s: &str) -> Result<Self, String> {
        config::parse_grid(s).map(Grid)
    }
}

fn set<T: Clone>(dst: &mut Option<T>, src: &Option<T>) {
    if src.is_some() {
        dst.clone_from(src);
    }
}

fn over<T: Clone>(dst: &mut T, src: &Option<T>) {
    if let Some(v) = src {
        *dst = v.clone();
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

/// Resolves the effective configuration and dispatches.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = CliConfig::load(cli.config.as_deref())?;
    over(&mut cfg.jobs, &cli.jobs);
    over(&mut cfg.paths.output_dir, &cli.output_dir);
    match &cli.command {
        Command::Train(a) => {
            a.data.apply(&mut cfg.paths);
            let t = &mut cfg.train;
            over(&mut t.seed, &a.seed);
            over(&mut t.steps, &a.steps);
            over(&mut t.learning_rate, &a.learning_rate);
            over(&mut t.batch_size, &a.batch_size);
            over(&mut t.tau, &a.tau);
            over(&mut t.main_slots, &a.main_slots);
            over(&mut t.residual_slots, &a.residual_slots);
            over(&mut t.mode, &a.mode);
            cmd_train(&cfg, a.resume.as_deref())
        }
        Command::Edit(a) => {
            a.data.apply(&mut cfg.paths);
            over(&mut cfg.edit.alpha, &a.alpha);
            over(&mut cfg.edit.backend, &a.backend);
            set(&mut cfg.edit.mode, &a.mode);
            set(&mut cfg.llm.base_url, &a.llm_url);
            set(&mut cfg.llm.model, &a.llm_model);
            cmd_edit(&cfg, a)
        }
        Command::Eval(a) => {
            a.data.apply(&mut cfg.paths);
            if let Some(g) = &a.grid {
                cfg.eval.grid.clone_from(&g.0);
            }
            set(&mut cfg.eval.mode, &a.mode);
            set(&mut cfg.eval.sources, &a.sources);
            set(&mut cfg.eval.sources_per_gender, &a.sources_per_gender);
            cmd_eval(&cfg)
        }
        Command::Stats(a) => {
            a.data.apply(&mut cfg.paths);
            cmd_stats(&cfg, a.json)
        }
        Command::Synth(a) => {
            let s = &mut cfg.synth.corpus;
            over(&mut s.seed, &a.seed);
            over(&mut s.num_speakers_per_gender, &a.speakers_per_gender);
            over(&mut s.num_descriptors, &a.descriptors);
            over(&mut s.dim, &a.dim);
            over(&mut s.utterances_per_speaker, &a.utterances);
            over(&mut s.noise_scale, &a.noise_scale);
            over(&mut s.threshold, &a.threshold);
            over(&mut cfg.synth.holdout_utterances, &a.holdout);
            cmd_synth(&cfg)
        }
        Command::Gradcheck(a) => {
            let g = &mut cfg.gradcheck;
            over(&mut g.cases, &a.cases);
            over(&mut g.first_seed, &a.seed);
            over(&mut g.mode, &a.mode);
            over(&mut g.tolerance, &a.tolerance);
            cmd_gradcheck(&cfg)
        }
    }
}

// ---- shared helpers ----

fn require<'a>(v: &'a Option<PathBuf>, key: &str, flag: &str) -> Result<&'a Path, CliError> {
    v.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing `{key}` (set it in the config file or pass {flag})")))
}

fn load_vocab(cfg: &CliConfig) -> Result<DescriptorVocab, CliError> {
    Ok(match &cfg.paths.vocab {
        Some(p) => DescriptorVocab::load(p)?,
        None => DescriptorVocab::builtin(),
    })
}

fn load_store(cfg: &CliConfig) -> Result<EmbeddingStore, CliError> {
    Ok(load_embeddings(require(
        &cfg.paths.embeddings,
        "paths.embeddings",
        "--embeddings",
    )?)?)
}

fn load_tuples(cfg: &CliConfig, vocab: &DescriptorVocab) -> Result<Vec<AnnotationTuple>, CliError> {
    Ok(parse_annotations(
        require(&cfg.paths.annotations, "paths.annotations", "--annotations")?,
        vocab,
    )?)
}

fn load_checkpoint(cfg: &CliConfig) -> Result<Checkpoint, CliError> {
    Ok(Checkpoint::load(require(
        &cfg.paths.checkpoint,
        "paths.checkpoint",
        "--checkpoint",
    )?)?)
}

fn output_dir(cfg: &CliConfig) -> Result<&Path, CliError> {
    let dir = cfg.paths.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(dir)
}

fn executor(cfg: &CliConfig) -> Executor {
    Executor::new(cfg.jobs)
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| {
        CliError::Core(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

// ---- commands ----

fn cmd_train(cfg: &CliConfig, resume: Option<&Path>) -> Result<(), CliError> {
    let store = load_store(cfg)?;
    let vocab = load_vocab(cfg)?;
    let tuples = load_tuples(cfg, &vocab)?;
    validate_against_store(&tuples, &store)?;
    let mut state = match resume {
        Some(p) => {
            let mut st = TrainState::from_checkpoint(Checkpoint::load(p)?)?;
            if st.vocab != vocab {
                return Err(Error::Data("checkpoint vocabulary differs from the configured one".into()).into());
            }
            // The checkpoint's settings win; only the step target moves.
            st.config.steps = cfg.train.steps;
            st
        }
        None => TrainState::init(cfg.train.clone(), vocab, &store)?,
    };
    let start = state.step;
    state.run(&store, &tuples, &executor(cfg))?;
    let ck = state.checkpoint();
    let out = output_dir(cfg)?;
    let ck_path = cfg
        .paths
        .checkpoint
        .clone()
        .unwrap_or_else(|| out.join("checkpoint.json"));
    ck.save(&ck_path)?;
    write_loss_csv(out.join("loss.csv"), &ck.loss_history)?;
    manifest::write(
        out,
        "train",
        cfg,
        serde_json::json!({
            "resumed_from": resume,
            "start_step": start,
            "effective_train": &ck.config,
            "embeddings_checksum": format!("{:016x}", store.checksum()),
            "checkpoint": &ck_path,
        }),
    )?;
    match ck.loss_history.last() {
        Some(r) => println!(
            "trained steps {start}..{}: loss {:.6} (rec {:.6}, align {:.6})",
            ck.step, r.total, r.rec, r.align
        ),
        None => println!("no steps taken"),
    }
    println!("checkpoint: {}", ck_path.display());
    Ok(())
}

fn cmd_edit(cfg: &CliConfig, a: &EditArgs) -> Result<(), CliError> {
    let ck = load_checkpoint(cfg)?;
    let store = load_store(cfg)?;
    let rec = store
        .speaker(&a.speaker)
        .ok_or_else(|| Error::Data(format!("unknown speaker `{}`", a.speaker)))?;
    let source = match &a.utt {
        Some(u) => rec
            .utterances
            .iter()
            .find(|x| &x.id == u)
            .map(|x| x.vec.clone())
            .ok_or_else(|| Error::Data(format!("speaker `{}` has no utterance `{u}`", a.speaker)))?,
        None => rec.mean_embedding(),
    };
    let mode = cfg.edit.mode.unwrap_or(ck.config.mode);
    let llm = cfg.llm.client();
    let res = edit_prompt(
        &ck.params,
        &ck.vocab,
        &source,
        &a.prompt,
        cfg.edit.alpha,
        cfg.edit.backend,
        Some(&llm),
        mode,
    )?;
    let names: Vec<String> = res.extraction.names().into_iter().map(String::from).collect();
    let row = EditedEmbedding::new(
        &a.speaker,
        a.utt.as_deref(),
        rec.gender,
        names,
        cfg.edit.alpha,
        mode,
        res.edited,
    );
    let out = output_dir(cfg)?;
    let path = a.out.clone().unwrap_or_else(|| out.join("edited.jsonl"));
    write_edited(&path, std::slice::from_ref(&row))?;
    manifest::write(
        out,
        "edit",
        cfg,
        serde_json::json!({
            "speaker": a.speaker,
            "utt": a.utt,
            "prompt": a.prompt,
            "alpha": cfg.edit.alpha,
            "mode": mode,
            "extraction": res.extraction,
            "output": path,
        }),
    )?;
    for m in &res.extraction.descriptors {
        println!(
            "matched: {} ({})",
            m.name,
            serde_json::to_value(m.provenance)?.as_str().unwrap_or("")
        );
    }
    println!("alpha: {}", cfg.edit.alpha);
    println!("edited embedding: {} -> {}", row.speaker, path.display());
    Ok(())
}

fn pick_sources(store: &EmbeddingStore, per_gender: Option<usize>) -> Vec<EditSource> {
    let all = speaker_sources(store);
    match per_gender {
        None => all,
        Some(k) => Gender::ALL
            .iter()
            .flat_map(|&g| all.iter().filter(move |s| s.gender == g).take(k).cloned())
            .collect(),
    }
}

fn cmd_eval(cfg: &CliConfig) -> Result<(), CliError> {
    let ck = load_checkpoint(cfg)?;
    let store = load_store(cfg)?;
    let tuples = load_tuples(cfg, &ck.vocab)?;
    let refs = build_reference_table(&tuples, &store, &ck.vocab)?;
    if refs.is_empty() {
        return Err(Error::Data("no descriptor has reference speakers".into()).into());
    }
    let source_store = match &cfg.eval.sources {
        Some(p) => load_embeddings(p)?,
        None => store,
    };
    let sources = pick_sources(&source_store, cfg.eval.sources_per_gender);
    if sources.is_empty() {
        return Err(Error::Data("no source speakers".into()).into());
    }
    let exec = executor(cfg);
    let mode = cfg.eval.mode.unwrap_or(ck.config.mode);
    let ctx = SweepContext {
        params: &ck.params,
        vocab: &ck.vocab,
        refs: &refs,
        verifier: &IdentityVerifier,
        mode,
        exec: &exec,
    };
    let report = tvas_report(&ctx, &sources, &cfg.eval.grid)?;
    let dump = embedding_dump(&ctx, &sources, &cfg.eval.grid)?;
    let out = output_dir(cfg)?;
    export_report(&report, out.join("tvas.csv"))?;
    write_text(&out.join("tvas.json"), &serde_json::to_string_pretty(&report)?)?;
    write_dump(out.join("embedding_dump.jsonl"), &dump)?;
    manifest::write(
        out,
        "eval",
        cfg,
        serde_json::json!({
            "mode": mode,
            "sources": sources.iter().map(|s| &s.speaker).collect::<Vec<_>>(),
        }),
    )?;
    for row in &report.rows {
        println!("{:<12} TVAS {:+.6}", row.descriptor, row.score);
    }
    Ok(())
}

fn cmd_stats(cfg: &CliConfig, json: bool) -> Result<(), CliError> {
    let vocab = load_vocab(cfg)?;
    let tuples = load_tuples(cfg, &vocab)?;
    let report = dataset_stats(&tuples, &vocab)?;
    if json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        print!("{report}");
    }
    manifest::write(
        output_dir(cfg)?,
        "stats",
        cfg,
        serde_json::json!({ "tuples": report.tuple_count }),
    )?;
    Ok(())
}

fn cmd_synth(cfg: &CliConfig) -> Result<(), CliError> {
    let corpus = generate_synthetic(&cfg.synth.corpus)?;
    let out = output_dir(cfg)?;
    let k = cfg.synth.holdout_utterances;
    let (train, held) = if k > 0 {
        corpus.store.split_holdout(k)
    } else {
        (corpus.store.clone(), EmbeddingStore::new(corpus.store.dim()))
    };
    write_embeddings(out.join("embeddings.jsonl"), &train)?;
    if k > 0 {
        write_embeddings(out.join("heldout.jsonl"), &held)?;
    }
    write_annotations(out.join("annotations.tsv"), &corpus.tuples, &corpus.vocab)?;
    write_text(&out.join("vocab.txt"), &corpus.vocab.to_file_string())?;
    write_text(&out.join("truth.json"), &serde_json::to_string_pretty(&corpus.truth)?)?;
    manifest::write(out, "synth", cfg, serde_json::json!({ "tuples": corpus.tuples.len() }))?;
    println!(
        "{} speakers, {} utterances, {} tuples -> {}",
        corpus.store.len(),
        corpus.store.num_utterances(),
        corpus.tuples.len(),
        out.display()
    );
    Ok(())
}

fn cmd_gradcheck(cfg: &CliConfig) -> Result<(), CliError> {
    let g = &cfg.gradcheck;
    let mut cases = Vec::new();
    let mut worst: f64 = 0.0;
    for seed in g.first_seed..g.first_seed + g.cases {
        let c = gradcheck_case(seed, g.mode)?;
        let rep = gradcheck(&c.params, &c.batch, &c.eps, &c.config, g.step, g.tolerance)?;
        let err = rep.max_error();
        worst = worst.max(err);
        println!("case {seed:>3}: max relative error {err:.3e}");
        cases.push(serde_json::json!({ "seed": seed, "max_relative_error": err, "blocks": rep.blocks }));
    }
    let passed = worst < g.tolerance;
    let out = output_dir(cfg)?;
    let report = serde_json::json!({
        "mode": g.mode,
        "step": g.step,
        "tolerance": g.tolerance,
        "max_relative_error": worst,
        "passed": passed,
        "cases": cases,
    });
    write_text(&out.join("gradcheck.json"), &serde_json::to_string_pretty(&report)?)?;
    manifest::write(out, "gradcheck", cfg, serde_json::Value::Null)?;
    println!(
        "max relative error {worst:.3e} over {} cases (tolerance {:e}): {}",
        g.cases,
        g.tolerance,
        if passed { "pass" } else { "FAIL" }
    );
    if passed {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!(
            "gradient check failed: max relative error {worst:.3e} >= {:e}",
            g.tolerance
        )))
    }
}
