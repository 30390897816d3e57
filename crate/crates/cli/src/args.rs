use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "stmix",
    version,
    about = "Speech translation data mixing and two-stage toy training"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check every manifest record; prints one line per problem.
    Validate { manifest: PathBuf },
    /// Write an augmented manifest (and its frame files) at one mixing level.
    Augment {
        level: Level,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Build a cosine nearest-neighbor cache for a word list.
    Neighbors {
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Run stage 1, stage 2 or both and write history and checkpoint files.
    Train {
        stage: StageArg,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Evaluate the losses on a logits/targets fixture.
    LossesEval { fixture: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Level {
    Word,
    Sentence,
    Frame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    Both,
}

/// Config file plus one override flag per config key.
#[derive(Debug, Default, Args)]
pub struct ConfigArgs {
    /// key = value config file; its relative paths resolve against its directory.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long = "k", alias = "k-neighbors")]
    pub k_neighbors: Option<String>,
    #[arg(long)]
    pub mix_portion: Option<String>,
    #[arg(long)]
    pub max_concat_frames: Option<String>,
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub pretrain_epochs: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub mix_layer: Option<String>,
    #[arg(long)]
    pub patience: Option<String>,
    #[arg(long)]
    pub jsd_weight: Option<String>,
    #[arg(long)]
    pub train_manifest: Option<String>,
    #[arg(long)]
    pub dev_manifest: Option<String>,
    #[arg(long)]
    pub embeddings: Option<String>,
    #[arg(long)]
    pub neighbors: Option<String>,
    #[arg(long)]
    pub words: Option<String>,
    #[arg(long)]
    pub frame_mixed: Option<String>,
    /// Comma-separated manifests of word- or sentence-mixed triples.
    #[arg(long)]
    pub augmented: Option<String>,
    #[arg(long, short)]
    pub output: Option<String>,
    #[arg(long)]
    pub output_dir: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<String>,
}

impl ConfigArgs {
    /// Flags that were given, as `(config key, value)` pairs.
    pub fn overrides(&self) -> Vec<(&'static str, String)> {
        let all = [
            ("seed", &self.seed),
            ("lambda", &self.lambda),
            ("k_neighbors", &self.k_neighbors),
            ("mix_portion", &self.mix_portion),
            ("max_concat_frames", &self.max_concat_frames),
            ("hidden", &self.hidden),
            ("epochs", &self.epochs),
            ("pretrain_epochs", &self.pretrain_epochs),
            ("learning_rate", &self.learning_rate),
            ("batch_size", &self.batch_size),
            ("mix_layer", &self.mix_layer),
            ("patience", &self.patience),
            ("jsd_weight", &self.jsd_weight),
            ("train_manifest", &self.train_manifest),
            ("dev_manifest", &self.dev_manifest),
            ("embeddings", &self.embeddings),
            ("neighbors", &self.neighbors),
            ("words", &self.words),
            ("frame_mixed", &self.frame_mixed),
            ("augmented", &self.augmented),
            ("output", &self.output),
            ("output_dir", &self.output_dir),
            ("checkpoint", &self.checkpoint),
        ];
        all.into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v.clone())))
            .collect()
    }
}
