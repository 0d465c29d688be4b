//! The `charprobe` command line: one subcommand per experiment or tool.
//! Every run writes its primary output plus a manifest next to it.

pub mod config;
pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::bpe::{read_id_lines, tokenize_corpus, train_bpe, write_id_lines, TokenizationScheme};
use crate::cbow::{export_embeddings, train_cbow, WordScheme};
use crate::corpus::{analyze_corpus, TargetSet};
use crate::embedding::{load_embeddings, make_control, write_embeddings, ControlShape, EmbeddingTable};
use crate::probe::{run_char_experiment, run_substring_experiment, ProbeConfig};
use crate::syntax::{
    load_tags, parse_conll, run_syntax_experiment, tag_vocabulary, tagger_config, train_tagger, write_tags,
    SyntaxFeatures, TagFeature, SYNTAX_LR_GRID,
};
use crate::vocab::{derive_alphabet, filter_alphabetic, load_vocab, Alphabet, DeriveOptions, Vocabulary};
use config::{load_config, RunConfig};
use manifest::{manifest_path, sha256_bytes, sha256_file, Manifest};
use report::{merge_reports, render, CbowReport, CorpusReport, ReportFile, TaggerRuns, TokenizationReport};

/// Directory for cached datasets and splits.
pub const CACHE_ENV: &str = "CHARPROBE_CACHE";

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or inputs; exit code 2.
    #[error("{0}")]
    Config(String),
    /// The run itself failed; exit code 1.
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

fn cfg_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "charprobe",
    version,
    about = "Probe token embeddings for character information"
)]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for the experiment grid (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Number of seeds (train/test splits).
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Base seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Fixed learning rate; disables the grid search.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Skip the control runs.
    #[arg(long)]
    pub no_control: bool,
}

#[derive(Debug, Args)]
pub struct AlphabetFlags {
    /// Target characters, e.g. "abc"; default a-z.
    #[arg(long, conflicts_with = "alphabet_file")]
    pub alphabet: Option<String>,
    /// Alphabet JSON written by `derive-alphabet`.
    #[arg(long)]
    pub alphabet_file: Option<PathBuf>,
    #[arg(long)]
    pub case_sensitive: bool,
    /// Keep tokens with characters outside the alphabet.
    #[arg(long)]
    pub no_filter: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Character probes on an embedding table against random controls.
    ProbeChars {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        alphabet: AlphabetFlags,
        /// Controls 4096 wide with at least 100k rows instead of matching the table.
        #[arg(long)]
        paper_control: bool,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Substring probes on concatenated token pairs.
    ProbeSubstring {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        alphabet: AlphabetFlags,
        #[arg(long)]
        max_superstrings: Option<usize>,
        #[arg(long)]
        paper_control: bool,
        #[arg(long, default_value = "substring.json")]
        out: PathBuf,
    },
    /// Character probes on syntactic features from tags files.
    ProbeSyntax {
        /// One or more tags files; features are concatenated as POS, COARSE_POS, NER.
        #[arg(long, required = true, num_args = 1..)]
        tags: Vec<PathBuf>,
        #[arg(long)]
        vocab: PathBuf,
        #[command(flatten)]
        train: TrainFlags,
        #[command(flatten)]
        alphabet: AlphabetFlags,
        #[arg(long, default_value = "syntax.json")]
        out: PathBuf,
    },
    /// Train embedding-based taggers on CoNLL data and tag the vocabulary.
    TagTrain {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        /// POS and/or NER.
        #[arg(long, required = true, num_args = 1..)]
        feature: Vec<TagFeature>,
        /// Choose the learning rate on the dev set.
        #[arg(long, requires = "dev")]
        tune: bool,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "tags.tsv")]
        out_tags: PathBuf,
        #[arg(long, default_value = "tagger.json")]
        out: PathBuf,
    },
    /// BPE-tokenize a text file, optionally with random two-way splits.
    Tokenize {
        input: PathBuf,
        #[arg(long)]
        merges: PathBuf,
        /// The tokenizer's vocab.json.
        #[arg(long)]
        bpe_vocab: PathBuf,
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "ids.txt")]
        out: PathBuf,
    },
    /// Learn a byte-level BPE merge list from text.
    BpeTrain {
        input: PathBuf,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        min_frequency: Option<u64>,
        #[arg(long, default_value = "merges.txt")]
        out_merges: PathBuf,
        #[arg(long, default_value = "vocab.json")]
        out_vocab: PathBuf,
    },
    /// Train CBOW embeddings on token ids or on whole words.
    CbowTrain {
        /// Id lines from `tokenize`; needs --merges and --bpe-vocab for surfaces.
        #[arg(long, conflicts_with = "text", requires_all = ["merges", "bpe_vocab"])]
        ids: Option<PathBuf>,
        #[arg(long)]
        merges: Option<PathBuf>,
        #[arg(long)]
        bpe_vocab: Option<PathBuf>,
        /// Raw text, tokenized into whole words.
        #[arg(long, required_unless_present = "ids")]
        text: Option<PathBuf>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        negatives: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        min_count: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value = "embeddings.bin")]
        out_embeddings: PathBuf,
        #[arg(long, default_value = "vocab.tsv")]
        out_vocab: PathBuf,
    },
    /// Count distinct tokenizations of target words in a corpus.
    AnalyzeCorpus {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long)]
        dictionary: PathBuf,
        #[arg(long)]
        merges: PathBuf,
        #[arg(long)]
        bpe_vocab: PathBuf,
        #[arg(long)]
        shards: Option<usize>,
        #[arg(long, default_value = "variability.json")]
        out: PathBuf,
    },
    /// Characters occurring in enough distinct tokens.
    DeriveAlphabet {
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value_t = 250)]
        min_tokens: usize,
        #[arg(long)]
        case_sensitive: bool,
        #[arg(long, default_value = "derived")]
        script_name: String,
        #[arg(long, default_value = "alphabet.json")]
        out: PathBuf,
    },
    /// Write a random control embedding table.
    MakeControl {
        /// Copy the shape of this table.
        #[arg(long, conflicts_with_all = ["vocab_size", "dim"])]
        like: Option<PathBuf>,
        #[arg(long, required_unless_present = "like")]
        vocab_size: Option<usize>,
        #[arg(long, required_unless_present = "like")]
        dim: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "control.bin")]
        out: PathBuf,
    },
    /// Merge report files into mean/std tables.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ProbeChars { .. } => "probe-chars",
            Command::ProbeSubstring { .. } => "probe-substring",
            Command::ProbeSyntax { .. } => "probe-syntax",
            Command::TagTrain { .. } => "tag-train",
            Command::Tokenize { .. } => "tokenize",
            Command::BpeTrain { .. } => "bpe-train",
            Command::CbowTrain { .. } => "cbow-train",
            Command::AnalyzeCorpus { .. } => "analyze-corpus",
            Command::DeriveAlphabet { .. } => "derive-alphabet",
            Command::MakeControl { .. } => "make-control",
            Command::Report { .. } => "report",
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = Vec::new();
        match self {
            Command::ProbeChars {
                embeddings,
                vocab,
                alphabet,
                ..
            }
            | Command::ProbeSubstring {
                embeddings,
                vocab,
                alphabet,
                ..
            } => {
                v.extend([embeddings.as_path(), vocab.as_path()]);
                v.extend(alphabet.alphabet_file.as_deref());
            }
            Command::ProbeSyntax {
                tags, vocab, alphabet, ..
            } => {
                v.extend(tags.iter().map(PathBuf::as_path));
                v.push(vocab);
                v.extend(alphabet.alphabet_file.as_deref());
            }
            Command::TagTrain {
                embeddings,
                vocab,
                train,
                dev,
                test,
                ..
            } => {
                v.extend([embeddings.as_path(), vocab.as_path(), train.as_path()]);
                v.extend(dev.as_deref());
                v.extend(test.as_deref());
            }
            Command::Tokenize {
                input,
                merges,
                bpe_vocab,
                ..
            } => v.extend([input.as_path(), merges, bpe_vocab]),
            Command::BpeTrain { input, .. } => v.push(input),
            Command::CbowTrain {
                ids,
                merges,
                bpe_vocab,
                text,
                ..
            } => {
                v.extend(ids.as_deref());
                v.extend(merges.as_deref());
                v.extend(bpe_vocab.as_deref());
                v.extend(text.as_deref());
            }
            Command::AnalyzeCorpus {
                corpus,
                targets,
                dictionary,
                merges,
                bpe_vocab,
                ..
            } => {
                v.extend([corpus.as_path(), targets, dictionary, merges, bpe_vocab]);
            }
            Command::DeriveAlphabet { vocab, .. } => v.push(vocab),
            Command::MakeControl { like, .. } => v.extend(like.as_deref()),
            Command::Report { inputs, .. } => v.extend(inputs.iter().map(PathBuf::as_path)),
        }
        v
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn dispatch<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, argv) {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::PartialFailure(n)) => {
            eprintln!("error: {n} experiment cell(s) failed; see the report's failures list");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The run completed but some cells failed.
    PartialFailure(usize),
}

pub fn run(cli: Cli, argv: Vec<String>) -> Result<Outcome, CliError> {
    for p in cli.command.inputs() {
        if !p.is_file() {
            return Err(CliError::Config(format!("input file {} does not exist", p.display())));
        }
    }
    if cli.jobs == Some(0) {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let config = load_config(cli.config.as_deref())?;
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(run_err)?;
    let ctx = Context {
        command: cli.command.name().to_string(),
        argv,
        jobs,
        inputs: cli.command.inputs().into_iter().map(Path::to_path_buf).collect(),
    };
    pool.install(|| execute(&cli.command, &config, &ctx))
}

struct Context {
    command: String,
    argv: Vec<String>,
    jobs: usize,
    inputs: Vec<PathBuf>,
}

impl Context {
    /// Writes the manifest for a finished run next to `outputs[0]`.
    fn finish(&self, effective: &impl Serialize, seeds: Vec<u64>, outputs: &[&Path]) -> Result<(), CliError> {
        let config = serde_json::to_value(effective).map_err(run_err)?;
        let hash = |p: &Path| sha256_file(p).map_err(|e| run_err(format!("{}: {e}", p.display())));
        let manifest = Manifest {
            command: self.command.clone(),
            argv: self.argv.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_bytes(config.to_string().as_bytes()),
            config,
            seeds,
            jobs: self.jobs,
            inputs: self.inputs.iter().map(|p| hash(p)).collect::<Result<_, _>>()?,
            outputs: outputs.iter().map(|p| hash(p)).collect::<Result<_, _>>()?,
        };
        write_json(&manifest_path(outputs[0]), &manifest)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(run_err)?;
    std::fs::write(path, text + "\n").map_err(|e| run_err(format!("{}: {e}", path.display())))
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => {
            std::fs::create_dir_all(d).map_err(|e| run_err(format!("{}: {e}", d.display())))
        }
        _ => Ok(()),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    Ok(read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn probe_config(config: &RunConfig, train: &TrainFlags) -> ProbeConfig {
    let mut p = config.probe.clone().unwrap_or_default();
    if let Some(s) = train.seeds {
        p.n_seeds = s;
    }
    if let Some(s) = train.seed {
        p.train.seed = s;
    }
    if let Some(lr) = train.lr {
        p.train.learning_rate = lr;
        p.train.lr_grid.clear();
    }
    if let Some(e) = train.epochs {
        p.train.epochs = e;
    }
    if train.no_control {
        p.run_control = false;
    }
    p.cache_dir = std::env::var_os(CACHE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from);
    p
}

fn alphabet_of(config: &RunConfig, flags: &AlphabetFlags) -> Result<Alphabet, CliError> {
    let base = if let Some(p) = &flags.alphabet_file {
        serde_json::from_str::<Alphabet>(&read_text(p)?).map_err(|e| cfg_err(format!("{}: {e}", p.display())))?
    } else if let Some(chars) = &flags.alphabet {
        Alphabet::new("custom", chars.chars(), false).map_err(cfg_err)?
    } else if let Some(a) = &config.alphabet {
        Alphabet::new(a.script_name.clone(), a.characters.chars(), a.case_sensitive).map_err(cfg_err)?
    } else {
        Alphabet::english()
    };
    Ok(if flags.case_sensitive {
        base.with_case_sensitivity(true)
    } else {
        base
    })
}

/// Loads the vocabulary and keeps tokens spelled in the alphabet's script
/// (letters of either case) unless filtering is off. An alphabet file is
/// taken as the whole script; otherwise the script is a-z plus the targets.
fn probe_vocab(
    path: &Path,
    alphabet: &Alphabet,
    flags: &AlphabetFlags,
    probe: &ProbeConfig,
) -> Result<Vocabulary, CliError> {
    let vocab = load_vocab(path).map_err(cfg_err)?;
    if flags.no_filter {
        return Ok(vocab);
    }
    let script = if flags.alphabet_file.is_none() {
        let mut chars: Vec<char> = ('a'..='z').collect();
        for c in alphabet.characters().iter().map(|&c| crate::vocab::fold_char(c)) {
            if !chars.contains(&c) {
                chars.push(c);
            }
        }
        Alphabet::new("latin", chars, false).map_err(cfg_err)?
    } else {
        alphabet.with_case_sensitivity(false)
    };
    let filtered = filter_alphabetic(&vocab, &script, &probe.markers());
    log::info!("{} of {} tokens are alphabetic", filtered.len(), vocab.len());
    Ok(filtered)
}

fn load_table(path: &Path, vocab: &Vocabulary) -> Result<EmbeddingTable, CliError> {
    let table = load_embeddings(path).map_err(cfg_err)?;
    if let Some(max) = vocab.max_id() {
        if max as usize >= table.vocab_size() {
            return Err(CliError::Config(format!(
                "vocabulary id {max} is outside the {}-row embedding table",
                table.vocab_size()
            )));
        }
    }
    Ok(table)
}

fn seeds_of(p: &ProbeConfig) -> Vec<u64> {
    (0..p.n_seeds.max(1)).map(|s| p.seed_of(s)).collect()
}

fn outcome(failures: usize) -> Outcome {
    if failures == 0 {
        Outcome::Success
    } else {
        Outcome::PartialFailure(failures)
    }
}

fn load_scheme(merges: &Path, vocab: &Path) -> Result<TokenizationScheme, CliError> {
    TokenizationScheme::load(merges, vocab).map_err(cfg_err)
}

fn execute(cmd: &Command, config: &RunConfig, ctx: &Context) -> Result<Outcome, CliError> {
    match cmd {
        Command::ProbeChars {
            embeddings,
            vocab,
            train,
            alphabet,
            paper_control,
            out,
        } => {
            let mut probe = probe_config(config, train);
            if *paper_control {
                probe.control = ControlShape::Wide;
            }
            let alpha = alphabet_of(config, alphabet)?;
            let vocab = probe_vocab(vocab, &alpha, alphabet, &probe)?;
            let table = load_table(embeddings, &vocab)?;
            let report = run_char_experiment(&table, &vocab, &alpha, &probe).map_err(run_err)?;
            let failures = report.failures.len();
            write_json(out, &ReportFile::CharProbe(report))?;
            ctx.finish(&probe, seeds_of(&probe), &[out])?;
            Ok(outcome(failures))
        }
        Command::ProbeSubstring {
            embeddings,
            vocab,
            train,
            alphabet,
            max_superstrings,
            paper_control,
            out,
        } => {
            let mut probe = probe_config(config, train);
            if max_superstrings.is_some() {
                probe.max_superstrings = *max_superstrings;
            }
            if *paper_control {
                probe.control = ControlShape::Wide;
            }
            let alpha = alphabet_of(config, alphabet)?;
            let vocab = probe_vocab(vocab, &alpha, alphabet, &probe)?;
            let table = load_table(embeddings, &vocab)?;
            let report = run_substring_experiment(&table, &vocab, &probe).map_err(run_err)?;
            let failures = report.failures.len();
            write_json(out, &ReportFile::SubstringProbe(report))?;
            ctx.finish(&probe, seeds_of(&probe), &[out])?;
            Ok(outcome(failures))
        }
        Command::ProbeSyntax {
            tags,
            vocab,
            train,
            alphabet,
            out,
        } => {
            let mut probe = probe_config(config, train);
            if config.probe.is_none() && train.lr.is_none() {
                probe.train.lr_grid = SYNTAX_LR_GRID.to_vec();
            }
            let alpha = alphabet_of(config, alphabet)?;
            let vocab = probe_vocab(vocab, &alpha, alphabet, &probe)?;
            let mut tables = Vec::new();
            for p in tags {
                tables.extend(load_tags(p).map_err(|e| cfg_err(format!("{}: {e}", p.display())))?);
            }
            let mut seen = std::collections::HashSet::new();
            if let Some(t) = tables.iter().find(|t| !seen.insert(t.feature)) {
                return Err(CliError::Config(format!(
                    "feature {} appears in more than one tags file",
                    t.feature
                )));
            }
            let features = SyntaxFeatures::new(tables).map_err(cfg_err)?;
            let report = run_syntax_experiment(&features, &vocab, &alpha, &probe).map_err(run_err)?;
            let failures = report.failures.len();
            write_json(out, &ReportFile::SyntaxProbe(report))?;
            ctx.finish(&probe, seeds_of(&probe), &[out])?;
            Ok(outcome(failures))
        }
        Command::TagTrain {
            embeddings,
            vocab,
            train,
            dev,
            test,
            feature,
            tune,
            epochs,
            lr,
            seed,
            out_tags,
            out,
        } => {
            let mut tcfg = config.tagger.clone().unwrap_or_else(tagger_config);
            if let Some(e) = epochs {
                tcfg.epochs = *e;
            }
            if let Some(l) = lr {
                tcfg.learning_rate = *l;
            }
            if let Some(s) = seed {
                tcfg.seed = *s;
            }
            if *tune && tcfg.lr_grid.is_empty() {
                tcfg.lr_grid = crate::neural::LR_GRID.to_vec();
            } else if !*tune {
                tcfg.lr_grid.clear();
            }
            let vocab = load_vocab(vocab).map_err(cfg_err)?;
            let table = load_table(embeddings, &vocab)?;
            let parse = |p: &Path| parse_conll(&read_text(p)?).map_err(|e| cfg_err(format!("{}: {e}", p.display())));
            let train_s = parse(train)?;
            let dev_s = dev.as_deref().map(parse).transpose()?;
            let test_s = test.as_deref().map(parse).transpose()?;
            let markers = crate::vocab::Markers::standard();
            let mut runs = Vec::new();
            let mut tables = Vec::new();
            for &f in feature {
                let (model, run) = train_tagger(
                    &table,
                    &vocab,
                    &markers,
                    &train_s,
                    dev_s.as_deref(),
                    test_s.as_deref(),
                    f,
                    &tcfg,
                )
                .map_err(run_err)?;
                tables.push(tag_vocabulary(&model, &table, &vocab));
                runs.push(run);
            }
            create_parent(out_tags)?;
            write_tags(&tables, out_tags).map_err(run_err)?;
            write_json(out, &ReportFile::Tagger(TaggerRuns { runs }))?;
            ctx.finish(&tcfg, vec![tcfg.seed], &[out, out_tags])?;
            Ok(Outcome::Success)
        }
        Command::Tokenize {
            input,
            merges,
            bpe_vocab,
            rho,
            seed,
            out,
        } => {
            let mut tc = config.tokenize.clone().unwrap_or_default();
            if let Some(r) = rho {
                tc.rho = *r;
            }
            if let Some(s) = seed {
                tc.seed = *s;
            }
            let scheme = load_scheme(merges, bpe_vocab)?
                .with_variability(tc.rho, tc.seed)
                .map_err(cfg_err)?;
            let text = read_text(input)?;
            let corpus = tokenize_corpus(&scheme, &text).map_err(run_err)?;
            create_parent(out)?;
            let f = std::fs::File::create(out).map_err(|e| run_err(format!("{}: {e}", out.display())))?;
            let mut w = BufWriter::new(f);
            write_id_lines(&mut w, &corpus.lines)
                .and_then(|_| w.flush())
                .map_err(run_err)?;
            let report = TokenizationReport {
                rho: tc.rho,
                seed: tc.seed,
                lines: corpus.lines.len(),
                tokens: corpus.n_tokens(),
                stats: corpus.stats,
                split_fraction: corpus.stats.split_fraction(),
            };
            let stats_path = out.with_extension("stats.json");
            write_json(&stats_path, &ReportFile::Tokenization(report))?;
            ctx.finish(&tc, vec![tc.seed], &[out, &stats_path])?;
            Ok(Outcome::Success)
        }
        Command::BpeTrain {
            input,
            vocab_size,
            min_frequency,
            out_merges,
            out_vocab,
        } => {
            let mut opts = config.bpe.clone().unwrap_or_default();
            if let Some(v) = vocab_size {
                opts.vocab_size = *v;
            }
            if let Some(m) = min_frequency {
                opts.min_frequency = *m;
            }
            let scheme = train_bpe(&read_text(input)?, &opts).map_err(run_err)?;
            create_parent(out_merges)?;
            create_parent(out_vocab)?;
            scheme.save(out_merges, out_vocab).map_err(run_err)?;
            ctx.finish(&opts, Vec::new(), &[out_merges, out_vocab])?;
            Ok(Outcome::Success)
        }
        Command::CbowTrain {
            ids,
            merges,
            bpe_vocab,
            text,
            dim,
            window,
            negatives,
            epochs,
            min_count,
            threads,
            seed,
            name,
            out_embeddings,
            out_vocab,
        } => {
            let mut c = config.cbow.clone().unwrap_or_default();
            macro_rules! set {
                ($($f:ident),*) => { $( if let Some(v) = $f { c.$f = *v; } )* };
            }
            set!(dim, window, negatives, epochs, min_count, threads, seed);
            c.validate().map_err(cfg_err)?;
            create_parent(out_embeddings)?;
            create_parent(out_vocab)?;
            let name = name.clone().unwrap_or_else(|| "cbow".into());
            let model = if let Some(ids) = ids {
                let scheme = load_scheme(merges.as_deref().expect("clap"), bpe_vocab.as_deref().expect("clap"))?;
                let f = std::fs::File::open(ids).map_err(cfg_err)?;
                let lines = read_id_lines(BufReader::new(f)).map_err(cfg_err)?;
                let model = train_cbow(&lines, &c).map_err(run_err)?;
                let surface = |id: u32| scheme.token(id).unwrap_or_default().to_string();
                export_embeddings(&model, surface, out_embeddings, out_vocab, &name).map_err(run_err)?;
                model
            } else {
                let corpus = read_text(text.as_deref().expect("clap"))?;
                let (words, lines) = WordScheme::tokenize_corpus(&corpus);
                let model = train_cbow(&lines, &c).map_err(run_err)?;
                let surface = |id: u32| words.surface(id).unwrap_or_default().to_string();
                export_embeddings(&model, surface, out_embeddings, out_vocab, &name).map_err(run_err)?;
                model
            };
            let report_path = out_embeddings.with_extension("report.json");
            let report = CbowReport {
                rows: model.vocab.len(),
                dim: model.dim,
                epoch_losses: model.epoch_losses.clone(),
            };
            write_json(&report_path, &ReportFile::Cbow(report))?;
            ctx.finish(&c, vec![c.seed], &[out_embeddings, out_vocab, &report_path])?;
            Ok(Outcome::Success)
        }
        Command::AnalyzeCorpus {
            corpus,
            targets,
            dictionary,
            merges,
            bpe_vocab,
            shards,
            out,
        } => {
            let mut cc = config.corpus.clone().unwrap_or_default();
            if let Some(s) = shards {
                cc.shards = *s;
            }
            if cc.shards == 0 {
                return Err(CliError::Config("shards must be at least 1".into()));
            }
            let scheme = load_scheme(merges, bpe_vocab)?;
            let (set, dropped) = TargetSet::new(&read_lines(targets)?, &read_lines(dictionary)?).map_err(cfg_err)?;
            let text = read_text(corpus)?;
            let (stats, _) = analyze_corpus(&text, &set, &scheme, cc.shards).map_err(run_err)?;
            let report = CorpusReport {
                stats,
                dropped_targets: dropped,
                shards: cc.shards,
            };
            write_json(out, &ReportFile::CorpusVariability(report))?;
            ctx.finish(&cc, Vec::new(), &[out])?;
            Ok(Outcome::Success)
        }
        Command::DeriveAlphabet {
            vocab,
            min_tokens,
            case_sensitive,
            script_name,
            out,
        } => {
            let v = load_vocab(vocab).map_err(cfg_err)?;
            let opts = DeriveOptions {
                min_tokens: *min_tokens,
                case_sensitive: *case_sensitive,
                script_name: script_name.clone(),
                ..Default::default()
            };
            let alpha = derive_alphabet(&v, &opts).map_err(run_err)?;
            write_json(out, &alpha)?;
            let effective = serde_json::json!({
                "min_tokens": min_tokens,
                "case_sensitive": case_sensitive,
                "script_name": script_name,
            });
            ctx.finish(&effective, Vec::new(), &[out])?;
            Ok(Outcome::Success)
        }
        Command::MakeControl {
            like,
            vocab_size,
            dim,
            seed,
            out,
        } => {
            let (v, d) = match like {
                Some(p) => {
                    let t = load_embeddings(p).map_err(cfg_err)?;
                    (t.vocab_size(), t.dim())
                }
                None => (vocab_size.expect("clap"), dim.expect("clap")),
            };
            let table = make_control(v, d, *seed).map_err(cfg_err)?;
            create_parent(out)?;
            write_embeddings(&table, out).map_err(run_err)?;
            let effective = serde_json::json!({ "vocab_size": v, "dim": d, "seed": seed });
            ctx.finish(&effective, vec![*seed], &[out])?;
            Ok(Outcome::Success)
        }
        Command::Report { inputs, out } => {
            let mut files = Vec::new();
            for p in inputs {
                let f: ReportFile = serde_json::from_str(&read_text(p)?)
                    .map_err(|e| cfg_err(format!("{}: not a report file: {e}", p.display())))?;
                files.push((p.display().to_string(), f));
            }
            let merged = merge_reports(&files);
            print!("{}", render(&merged));
            if let Some(o) = out {
                write_json(o, &merged)?;
                ctx.finish(&serde_json::json!({}), Vec::new(), &[o])?;
            }
            Ok(Outcome::Success)
        }
    }
}
