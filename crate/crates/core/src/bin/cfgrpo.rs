use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cfgrpo::counterfactual::{
    apply_spot_interference, gaussian_blur, synthesize_counterfactual, LesionMask, MaskStrategy,
    RasterImage, SpotInterferenceConfig,
};
use cfgrpo::experiments::{run_experiment, ExperimentConfig, ExperimentKind};
use cfgrpo::rewards::{score_jsonl, RewardContext};
use cfgrpo::synthcorpus::templates::label_vocabulary;
use cfgrpo::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cfgrpo",
    version,
    about = "Counterfactual GRPO experiments on a synthetic diagnostic corpus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed overriding every component seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic corpus.
    Corpus {
        #[command(subcommand)]
        action: CorpusAction,
    },
    /// Latent-model shortcut experiments.
    Theory {
        #[command(subcommand)]
        action: TheoryAction,
    },
    /// Policy training.
    Train {
        #[command(subcommand)]
        action: TrainAction,
    },
    /// Evaluate a policy checkpoint, or an untrained policy.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Multi-seed ablations.
    Ablate {
        #[command(subcommand)]
        action: AblateAction,
    },
    /// SFT against counterfactual GRPO under spot interference.
    Robustness {
        #[command(flatten)]
        common: Common,
    },
    /// Erase the masked pixels of an image.
    Mask {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long, value_enum, default_value = "blur")]
        strategy: StrategyArg,
        #[arg(long, default_value_t = 8.0)]
        sigma: f64,
        #[arg(long, default_value_t = 24)]
        radius: usize,
        #[arg(long, default_value_t = 1.0)]
        value: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Gaussian-blur a whole image.
    Blur {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 8.0)]
        sigma: f64,
        #[arg(long, default_value_t = 24)]
        radius: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Add bright spot artifacts to an image.
    Perturb {
        #[arg(long)]
        image: PathBuf,
        /// Spot config (JSON); defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score JSON-lines responses against keywords and gold labels.
    Score {
        /// Input file, or `-` for stdin.
        input: PathBuf,
        /// Reward context (JSON); defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CorpusAction {
    /// Generate and save a corpus.
    Gen(Common),
}

#[derive(Subcommand)]
enum TheoryAction {
    /// Unpenalized training.
    Shortcut(Common),
    /// Counterfactual penalty sweep.
    Rectify(Common),
}

#[derive(Subcommand)]
enum TrainAction {
    Sft(Common),
    Grpo {
        #[command(flatten)]
        common: Common,
        /// Start from this checkpoint instead of a fresh SFT run.
        #[arg(long)]
        policy: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AblateAction {
    /// Gaussian blur against solid fill.
    Mask(Common),
    /// Full reward schema against zeroed cognition or diagnosis weights.
    Rewards(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Blur,
    Fill,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::parse("report", e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn experiment(kind: ExperimentKind, common: Common, policy: Option<PathBuf>) -> Result<()> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    config.experiment = Some(kind);
    if common.seed.is_some() {
        config.seed = common.seed;
    }
    if policy.is_some() {
        config.policy = policy;
    }
    config.out = common
        .out
        .or(config.out)
        .or_else(|| Some(PathBuf::from("runs").join(kind.name())));
    print_json(&run_experiment(&config)?)
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("CFGRPO_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::config("CFGRPO_THREADS", "must be a positive integer"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::config("CFGRPO_THREADS", e.to_string()))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Corpus {
            action: CorpusAction::Gen(c),
        } => experiment(ExperimentKind::CorpusGen, c, None),
        Command::Theory { action } => match action {
            TheoryAction::Shortcut(c) => experiment(ExperimentKind::TheoryShortcut, c, None),
            TheoryAction::Rectify(c) => experiment(ExperimentKind::TheoryRectify, c, None),
        },
        Command::Train { action } => match action {
            TrainAction::Sft(c) => experiment(ExperimentKind::Sft, c, None),
            TrainAction::Grpo { common, policy } => {
                experiment(ExperimentKind::Grpo, common, policy)
            }
        },
        Command::Eval { common, policy } => experiment(ExperimentKind::Eval, common, policy),
        Command::Ablate { action } => match action {
            AblateAction::Mask(c) => experiment(ExperimentKind::AblateMask, c, None),
            AblateAction::Rewards(c) => experiment(ExperimentKind::AblateRewards, c, None),
        },
        Command::Robustness { common } => experiment(ExperimentKind::Robustness, common, None),
        Command::Mask {
            image,
            mask,
            strategy,
            sigma,
            radius,
            value,
            out,
        } => {
            let strategy = match strategy {
                StrategyArg::Blur => MaskStrategy::GaussianBlur { sigma, radius },
                StrategyArg::Fill => MaskStrategy::SolidFill { value },
            };
            let img = RasterImage::load(&image)?;
            let m = LesionMask::load(&mask)?;
            synthesize_counterfactual(&img, &m, &strategy)?.save(&out)
        }
        Command::Blur {
            image,
            sigma,
            radius,
            out,
        } => gaussian_blur(&RasterImage::load(&image)?, sigma, radius)?.save(&out),
        Command::Perturb {
            image,
            config,
            seed,
            out,
        } => {
            let mut cfg: SpotInterferenceConfig = match config {
                Some(p) => read_json(&p)?,
                None => SpotInterferenceConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            apply_spot_interference(&RasterImage::load(&image)?, &cfg)?.save(&out)
        }
        Command::Score { input, config, out } => {
            let ctx: RewardContext = match config {
                Some(p) => read_json(&p)?,
                None => RewardContext {
                    vocabulary: label_vocabulary(),
                    ..RewardContext::default()
                },
            };
            let report = if input.as_os_str() == "-" {
                score_jsonl(std::io::stdin().lock(), &ctx)?
            } else {
                let f = std::fs::File::open(&input).map_err(|e| Error::io(&input, e))?;
                score_jsonl(BufReader::new(f), &ctx)?
            };
            match out {
                Some(p) => {
                    let text = serde_json::to_string_pretty(&report)
                        .map_err(|e| Error::parse("report", e.to_string()))?;
                    std::fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))
                }
                None => print_json(&report),
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
