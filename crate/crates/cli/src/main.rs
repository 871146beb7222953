use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use lcner::advisor::{advise, AdvisorParams, DatasetProfile};
use lcner::checkpoint::Checkpoint;
use lcner::corpus::{read_corpus, score, segment, synth_corpus, write_corpus, write_labeled, SegmentationProfile, SynthSpec};
use lcner::crf::{train_crf, CrfParams};
use lcner::decode::{read_logits_file, LabelSequence, LogitsSequence};
use lcner::emission::{token_accuracy, train_emission, FeatureEncoder, LinearProjection};
use lcner::grid::{encode_corpus, run_grid, run_synthetic_grid, Arm, GridConfig, GridTable};
use lcner::labelspace::{ConstraintMatrix, LabelSet, Scheme};

const DEFAULT_SEED: u64 = 42;

#[derive(Parser)]
#[command(name = "lcner", version, about = "Logits-constrained BMES decoding toolkit")]
struct Cli {
    /// Worker threads for per-sentence work (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split raw text into sentences, one per output line.
    Segment {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = ProfileArg::Ab)]
        profile: ProfileArg,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a BMES vocabulary file for the given entity types.
    Vocab {
        /// Comma-separated entity types, in order.
        #[arg(long, value_delimiter = ',', required = true)]
        types: Vec<String>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Generate a synthetic two-column corpus and its vocabulary file.
    Synth {
        #[command(flatten)]
        spec: SynthArgs,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        labels_out: PathBuf,
    },
    /// Train an emission model (and CRF transitions for crf arms).
    Train {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "lc")]
        arm: String,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Decode logits (from a logits file or a checkpoint + corpus) with one arm.
    Decode {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "lc")]
        arm: String,
        /// JSON-lines logits file.
        #[arg(long, conflicts_with_all = ["checkpoint", "corpus"])]
        logits: Option<PathBuf>,
        #[arg(long, requires = "corpus")]
        checkpoint: Option<PathBuf>,
        /// Corpus to tag; only its tokens are used.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Strict entity P/R/F1 of a predictions file against a gold file.
    Score {
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        labels: PathBuf,
    },
    /// Compare baseline / lc / crf / crf+lc on a synthetic or given split.
    Grid {
        #[command(flatten)]
        spec: SynthArgs,
        /// Held-out sentences for the synthetic split.
        #[arg(long, default_value_t = 1000)]
        test_sentences: usize,
        /// Train on this corpus instead of a synthetic one (needs --test and --labels).
        #[arg(long, requires_all = ["test", "labels"])]
        train: Option<PathBuf>,
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[command(flatten)]
        train_args: TrainArgs,
        #[arg(long, value_enum, default_value_t = Format::Tsv)]
        format: Format,
    },
    /// Recommend LC-only or CRF+LC from label cardinality and corpus size.
    Advise {
        #[arg(short = 'L', long = "labels")]
        labels: u64,
        #[arg(short = 'N', long = "sentences")]
        sentences: u64,
        #[arg(long, default_value_t = AdvisorParams::DEFAULT.alpha)]
        alpha: f64,
        #[arg(long, default_value_t = AdvisorParams::DEFAULT.beta)]
        beta: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Ab,
    C,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Args, Clone)]
struct SynthArgs {
    /// JSON file with a full synthetic corpus specification; overrides the flags below.
    #[arg(long)]
    corpus_spec: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    types: usize,
    #[arg(long, default_value_t = 3000)]
    sentences: usize,
    #[arg(long, default_value_t = 0.3)]
    noise: f64,
}

impl SynthArgs {
    fn spec(&self) -> Result<SynthSpec> {
        match &self.corpus_spec {
            Some(path) => Ok(serde_json::from_reader(open(path)?).map_err(lcner::Error::from)?),
            None => Ok(SynthSpec { boundary_noise: self.noise, ..SynthSpec::with_types(self.types, self.sentences) }),
        }
    }
}

/// Optional JSON config file; explicit flags win over its values.
#[derive(Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    crf_learning_rate: Option<f64>,
    seed: Option<u64>,
    dim: Option<usize>,
    window: Option<usize>,
    constrained_init: Option<bool>,
}

#[derive(Args, Clone)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Emission (cross-entropy) learning rate.
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Learning rate for joint CRF training.
    #[arg(long)]
    crf_learning_rate: Option<f64>,
    #[arg(long)]
    train_seed: Option<u64>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    window: Option<usize>,
    /// Initialize CRF transitions from the BMES constraints and freeze forbidden ones.
    #[arg(long)]
    constrained_init: bool,
}

struct ResolvedTraining {
    grid: GridConfig,
    constrained_init: bool,
}

impl TrainArgs {
    fn resolve(&self) -> Result<ResolvedTraining> {
        let file: ConfigFile = match &self.config {
            Some(path) => serde_json::from_reader(open(path)?).map_err(lcner::Error::from)?,
            None => ConfigFile::default(),
        };
        let mut grid = GridConfig::default();
        let pick = |flag: Option<usize>, file: Option<usize>, default: usize| flag.or(file).unwrap_or(default);
        grid.emission.epochs = pick(self.epochs, file.epochs, grid.emission.epochs);
        grid.crf.epochs = pick(self.epochs, file.epochs, grid.crf.epochs);
        grid.emission.batch_size = pick(self.batch_size, file.batch_size, grid.emission.batch_size);
        grid.crf.batch_size = pick(self.batch_size, file.batch_size, grid.crf.batch_size);
        grid.emission.learning_rate = self.learning_rate.or(file.learning_rate).unwrap_or(grid.emission.learning_rate);
        grid.crf.learning_rate = self.crf_learning_rate.or(file.crf_learning_rate).unwrap_or(grid.crf.learning_rate);
        let seed = self.train_seed.or(file.seed).unwrap_or(DEFAULT_SEED);
        grid.emission.seed = seed;
        grid.crf.seed = seed;
        grid.encoder = FeatureEncoder::new(
            pick(self.dim, file.dim, grid.encoder.dim),
            pick(self.window, file.window, grid.encoder.window),
            grid.encoder.seed,
        )?;
        Ok(ResolvedTraining { grid, constrained_init: self.constrained_init || file.constrained_init.unwrap_or(false) })
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_labels(path: &Path) -> Result<LabelSet> {
    LabelSet::read_vocab(open(path)?).with_context(|| format!("reading labels {}", path.display()))
}

fn read_sentences(path: &Path, labels: &LabelSet) -> Result<Vec<lcner::corpus::Sentence>> {
    read_corpus(open(path)?, labels).with_context(|| format!("reading corpus {}", path.display()))
}

fn parse_arm(s: &str) -> Result<Arm> {
    Ok(s.parse::<Arm>()?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(anyhow::Error::from)
        .and_then(|pool| pool.install(|| run(cli.command)));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2: I/O or malformed input, 3: numerical failure, 4: incompatible files.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<lcner::Error>() {
            return match e {
                lcner::Error::Numerical { .. } => 3,
                lcner::Error::Incompatible(_) => 4,
                lcner::Error::Internal(_) => 1,
                _ => 2,
            };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Segment { input, profile, output: out } => {
            let mut text = String::new();
            open(&input)?.read_to_string(&mut text)?;
            let profile = match profile {
                ProfileArg::Ab => SegmentationProfile::profile_ab(),
                ProfileArg::C => SegmentationProfile::profile_c(),
            };
            let mut w = output(out.as_deref())?;
            for line in text.lines() {
                for seg in segment(line, &profile) {
                    writeln!(w, "{seg}")?;
                }
            }
            w.flush()?;
        }
        Command::Vocab { types, output: out } => {
            let labels = LabelSet::new(&types, Scheme::Bmes)?;
            let mut w = output(out.as_deref())?;
            labels.write_vocab(&mut w)?;
            w.flush()?;
        }
        Command::Synth { spec, seed, output: out, labels_out } => {
            let corpus = synth_corpus(&spec.spec()?, seed)?;
            let mut w = create(&out)?;
            write_corpus(&mut w, &corpus.labels, &corpus.sentences)?;
            w.flush()?;
            let mut w = create(&labels_out)?;
            corpus.labels.write_vocab(&mut w)?;
            w.flush()?;
        }
        Command::Train { corpus, labels, arm, output: out, train } => cmd_train(&corpus, &labels, parse_arm(&arm)?, &out, &train)?,
        Command::Decode { labels, arm, logits, checkpoint, corpus, output: out } => {
            cmd_decode(&labels, parse_arm(&arm)?, logits.as_deref(), checkpoint.as_deref(), corpus.as_deref(), out.as_deref())?
        }
        Command::Score { gold, pred, labels } => {
            let labels = read_labels(&labels)?;
            let gold = read_sentences(&gold, &labels)?;
            let pred = read_sentences(&pred, &labels)?;
            if gold.len() != pred.len() {
                return Err(lcner::Error::InvalidInput(format!(
                    "{} gold sentences but {} predicted",
                    gold.len(),
                    pred.len()
                ))
                .into());
            }
            for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
                if g.tokens != p.tokens {
                    return Err(lcner::Error::InvalidInput(format!("sentence {i}: gold and predicted tokens differ")).into());
                }
            }
            let preds: Vec<LabelSequence> = pred.into_iter().map(|s| s.gold.expect("read_corpus sets labels")).collect();
            let report = score(&labels, &gold, &preds)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Grid { spec, test_sentences, train, test, labels, seed, train_args, format } => {
            let config = train_args.resolve()?.grid;
            let table: GridTable = match (train, test, labels) {
                (Some(train), Some(test), Some(labels)) => {
                    let labels = read_labels(&labels)?;
                    let train = read_sentences(&train, &labels)?;
                    let test = read_sentences(&test, &labels)?;
                    run_grid(&labels, &train, &test, &config, seed)?
                }
                _ => run_synthetic_grid(&spec.spec()?, test_sentences, &config, seed)?,
            };
            match format {
                Format::Tsv => print!("{}", table.to_tsv()),
                Format::Json => println!("{}", serde_json::to_string_pretty(&table)?),
            }
        }
        Command::Advise { labels, sentences, alpha, beta } => {
            let profile = DatasetProfile::new(labels, sentences)?;
            let params = AdvisorParams::new(alpha, beta)?;
            println!("{}", serde_json::to_string(&advise(profile, params))?);
        }
    }
    Ok(())
}

fn cmd_train(corpus: &Path, labels: &Path, arm: Arm, out: &Path, args: &TrainArgs) -> Result<()> {
    let labels = read_labels(labels)?;
    let sentences = read_sentences(corpus, &labels)?;
    let ResolvedTraining { grid, constrained_init } = args.resolve()?;
    let encoded = encode_corpus(&grid.encoder, &sentences)?;
    let k = labels.len();
    let mut proj = LinearProjection::zeros(k, grid.encoder.dim);

    let (report, crf) = if arm.uses_crf() {
        let mut params = if constrained_init {
            CrfParams::constraint_initialized(&ConstraintMatrix::bmes(&labels))
        } else {
            CrfParams::zeros(k)
        };
        let report = train_crf(&encoded, &mut proj, &mut params, &grid.crf)?;
        (report, Some(params))
    } else {
        (train_emission(&encoded, &mut proj, &grid.emission)?, None)
    };
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        println!("epoch {}\tloss {loss:.6}", epoch + 1);
    }
    println!("train_accuracy {:.6}", token_accuracy(&proj, &encoded)?);

    let ckpt = Checkpoint::new(&labels, grid.encoder, &proj, crf);
    let mut w = create(out)?;
    ckpt.write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_decode(
    labels_path: &Path,
    arm: Arm,
    logits_path: Option<&Path>,
    checkpoint: Option<&Path>,
    corpus: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let labels = read_labels(labels_path)?;
    let cm = ConstraintMatrix::bmes(&labels);

    let (sentences, crf): (Vec<(Vec<String>, LogitsSequence)>, Option<CrfParams>) = match (logits_path, checkpoint, corpus) {
        (Some(path), None, None) => {
            let records = read_logits_file(open(path)?, labels.len())
                .with_context(|| format!("reading logits {}", path.display()))?;
            (records.into_iter().map(|(r, l)| (r.tokens, l)).collect(), None)
        }
        (None, Some(ckpt_path), Some(corpus)) => {
            let ckpt = Checkpoint::read(open(ckpt_path)?).with_context(|| format!("reading {}", ckpt_path.display()))?;
            ckpt.check_vocab(&labels)?;
            let proj = ckpt.projection()?;
            let sentences = read_sentences(corpus, &labels)?;
            let logits = sentences
                .par_iter()
                .map(|s| proj.project(&ckpt.encoder.encode(&s.tokens)))
                .collect::<lcner::Result<Vec<_>>>()?;
            (sentences.into_iter().map(|s| s.tokens).zip(logits).collect(), ckpt.crf)
        }
        _ => return Err(anyhow!("give either --logits, or --checkpoint with --corpus")),
    };
    if arm.uses_crf() && crf.is_none() {
        return Err(lcner::Error::Incompatible(format!("arm {arm} needs a checkpoint trained with a CRF")).into());
    }

    let preds = sentences
        .par_iter()
        .map(|(_, logits)| arm.decode(logits, &cm, crf.as_ref()))
        .collect::<lcner::Result<Vec<_>>>()?;
    let mut w = output(out)?;
    for ((tokens, _), pred) in sentences.iter().zip(&preds) {
        write_labeled(&mut w, &labels, tokens, pred)?;
    }
    w.flush()?;
    Ok(())
}
