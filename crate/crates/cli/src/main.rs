mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tacovc::config::{PipelineConfig, Preset};

#[derive(Parser, Debug)]
#[command(name = "tacovc", version, about = "PPG voice conversion: training, adaptation and conversion")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Args, Debug)]
pub struct Global {
    /// Seed for every random choice of the verb.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Network sizes.
    #[arg(long, global = true, value_enum, default_value_t = PresetArg::Desk)]
    pub preset: PresetArg,
    /// JSON pipeline config; replaces the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding pr.ckpt, syn.ckpt, se.ckpt and vocoder.ckpt.
    #[arg(long, global = true, env = "TACOVC_CHECKPOINT_DIR")]
    pub checkpoint_dir: Option<PathBuf>,
    /// Feature store; defaults to `<checkpoint-dir>/features`.
    #[arg(long, global = true, env = "TACOVC_FEATURE_DIR")]
    pub feature_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PresetArg {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VocoderArg {
    Wavenet,
    Griffinlim,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum VocoderInputArg {
    True,
    Enhanced,
}

#[derive(Subcommand, Debug)]
pub enum Verb {
    /// Write a deterministic two-speaker toy corpus with phone transcripts.
    MakeToyCorpus {
        #[arg(long)]
        out: PathBuf,
        /// Utterances per speaker.
        #[arg(long, default_value_t = 10)]
        utterances: usize,
    },
    /// Extract mel and linear spectrograms into the feature store.
    Features {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train the phoneme recognizer with CTC.
    TrainPr {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train the synthesizer on one speaker.
    TrainSyn {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Synthesize the mel spectrogram of every utterance for enhancer training.
    GenSmspec {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train the enhancer on real and synthesized spectrograms.
    TrainSe {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train the vocoder on recordings and their mel spectrograms.
    TrainVocoder {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Fine-tune a checkpoint set on a new target speaker.
    Adapt {
        #[arg(long)]
        manifest: PathBuf,
        /// Output checkpoint directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        syn_steps: Option<usize>,
        #[arg(long)]
        se_steps: Option<usize>,
        #[arg(long)]
        vocoder_steps: Option<usize>,
        #[arg(long, value_enum)]
        vocoder_input: Option<VocoderInputArg>,
    },
    /// Convert recordings to the voice the checkpoints were trained on.
    Convert {
        /// A single WAV file.
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        input: Option<PathBuf>,
        /// Every record of a manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Speaker label of a single `--input` file.
        #[arg(long, default_value = "src")]
        source_speaker: String,
        #[arg(long, default_value = "target")]
        target_speaker: String,
        /// Skip the enhancer.
        #[arg(long)]
        no_enhance: bool,
        #[arg(long, value_enum, default_value_t = VocoderArg::Wavenet)]
        vocoder: VocoderArg,
        /// Sample from the vocoder instead of taking the most likely code.
        #[arg(long)]
        sample: bool,
        #[arg(long, default_value_t = 60)]
        griffin_lim_iters: usize,
    },
    /// Decode every utterance with the recognizer and write a transcript file.
    Recognize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Phone error rate of hypothesis transcripts against references.
    EvalPer {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
}

impl Global {
    pub fn pipeline_config(&self) -> tacovc::Result<PipelineConfig> {
        let cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::preset(match self.preset {
                PresetArg::Desk => Preset::Desk,
                PresetArg::Paper => Preset::Paper,
            }),
        };
        Ok(cfg.with_seed(self.seed))
    }
}

fn error_json(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            eprintln!("{}", error_json("UsageError", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match commands::run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_json(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
