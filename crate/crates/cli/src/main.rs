mod commands;
mod data;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dimnmt::{Error, RunConfig};

#[derive(Parser)]
#[command(
    name = "dimnmt",
    version,
    about = "Bidirectional NMT with a rewritable right-to-left memory"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings layered over the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Train the baseline without the memory module.
    #[arg(long)]
    pub no_dim: bool,
    /// Read the memory but never rewrite it.
    #[arg(long)]
    pub no_update: bool,
    /// Drop the agreement term from the loss.
    #[arg(long)]
    pub no_agreement: bool,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
}

impl Overrides {
    pub fn base(&self) -> dimnmt::Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn apply(&self, run: &mut RunConfig) {
        if let Some(s) = self.seed {
            run.seed = s;
        }
        if let Some(b) = self.beam {
            run.decode.beam = b;
        }
        if let Some(a) = self.alpha {
            run.decode.alpha = a;
        }
        if let Some(h) = self.heads {
            run.model.heads = h;
        }
        if let Some(l) = self.lambda {
            run.train.lambda = l;
        }
        if let Some(m) = self.max_steps {
            run.train.max_steps = m;
        }
        run.train.no_dim |= self.no_dim;
        run.train.no_update |= self.no_update;
        run.train.no_agreement |= self.no_agreement;
    }

    /// Whether anything besides `--max-steps` was given.
    pub fn changes_model(&self) -> bool {
        self.config.is_some()
            || self.seed.is_some()
            || self.heads.is_some()
            || self.lambda.is_some()
            || self.no_dim
            || self.no_update
            || self.no_agreement
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ToyTask {
    Copy,
    Reverse,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum HeatmapKind {
    /// Output tokens against memory rows.
    Memory,
    /// Output tokens against source tokens.
    Source,
}

#[derive(Subcommand)]
enum Command {
    /// Learn BPE merges from tokenized text.
    BpeTrain {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        #[arg(long)]
        merges: usize,
        #[arg(long)]
        output: PathBuf,
    },
    /// Segment text with learned merges.
    BpeApply {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Merge segmented text back into words.
    BpeDecode {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build a vocabulary file from tokenized text.
    Vocab {
        #[arg(long, required = true)]
        input: Vec<PathBuf>,
        /// Maximum size, reserved symbols included.
        #[arg(long)]
        max_size: Option<usize>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a synthetic corpus with a matching config.
    Toy {
        #[arg(long, value_enum, default_value = "copy")]
        task: ToyTask,
        #[arg(long, default_value_t = 200)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        valid: usize,
        #[arg(long, default_value_t = 16)]
        vocab: usize,
        #[arg(long, default_value_t = 1)]
        min_len: usize,
        #[arg(long, default_value_t = 10)]
        max_len: usize,
        /// Token replacement rate for the reverse task.
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model, or continue one from a checkpoint.
    Train {
        #[command(flatten)]
        overrides: Overrides,
        /// Continue from this checkpoint; only --max-steps may change.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translate one sentence per line.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Write one attention trace per line as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Corpus BLEU of a hypothesis file against one or more references.
    Score {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref", required = true)]
        refs: Vec<PathBuf>,
        #[arg(long)]
        case_insensitive: bool,
        #[arg(long)]
        json: bool,
    },
    /// BLEU per source-length bucket.
    Buckets {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Interior bucket edges.
        #[arg(long, value_delimiter = ',', default_values_t = dimnmt::eval::DEFAULT_EDGES)]
        edges: Vec<usize>,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        json: bool,
    },
    /// Train the four ablation variants and compare them.
    Ablate {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 3, 4, 5])]
        seeds: Vec<u64>,
        /// Also write the table as JSON lines.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Render one saved attention trace as an image and a matrix file.
    Heatmap {
        #[arg(long)]
        trace: PathBuf,
        /// Line of the trace file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, value_enum, default_value = "memory")]
        kind: HeatmapKind,
        /// Output path without extension.
        #[arg(long)]
        output: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Usage(_) | Error::Config(_) => 1,
        Error::NonFiniteLoss { .. } => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> dimnmt::Result<()> {
    use commands::*;
    match cli.command {
        Command::BpeTrain { input, merges, output } => bpe_train(&input, merges, &output),
        Command::BpeApply { model, input, output } => bpe_apply(&model, input.as_deref(), output.as_deref()),
        Command::BpeDecode { input, output } => bpe_decode(input.as_deref(), output.as_deref()),
        Command::Vocab {
            input,
            max_size,
            output,
        } => vocab(&input, max_size, &output),
        Command::Toy {
            task,
            train,
            valid,
            vocab,
            min_len,
            max_len,
            noise,
            seed,
            out_dir,
        } => toy(task, train, valid, vocab, min_len, max_len, noise, seed, &out_dir),
        Command::Train { overrides, resume } => train(&overrides, resume.as_deref()),
        Command::Translate {
            checkpoint,
            input,
            output,
            beam,
            alpha,
            trace,
        } => translate(
            &checkpoint,
            input.as_deref(),
            output.as_deref(),
            beam,
            alpha,
            trace.as_deref(),
        ),
        Command::Score {
            hyp,
            refs,
            case_insensitive,
            json,
        } => score(&hyp, &refs, case_insensitive, json),
        Command::Buckets {
            checkpoint,
            source,
            reference,
            edges,
            beam,
            alpha,
            json,
        } => buckets(&checkpoint, &source, &reference, &edges, beam, alpha, json),
        Command::Ablate { overrides, seeds, json } => ablate(&overrides, &seeds, json.as_deref()),
        Command::Heatmap {
            trace,
            index,
            kind,
            output,
        } => heatmap(&trace, index, kind, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DIMNMT_LOG", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
