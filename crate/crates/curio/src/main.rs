//! Thin command-line front end over [`curio::runner`]. All logic lives in
//! the library; this binary only parses flags, applies overrides to the
//! config, and dispatches.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use curio::config::RunConfig;
use curio::runner::{
    self, cmd_caption_train, cmd_eval, cmd_explore_train, cmd_render_map, cmd_run,
};
use curio::speaker::{PolicyKind, SpeakerPolicy};

#[derive(Parser)]
#[command(name = "curio", version, about = "Curious explorer that captions what it sees")]
struct Cli {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: $CURIO_OUT, then ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker count; this build is single-threaded, so only 1 is accepted.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Object,
    Depth,
    Curiosity,
}

impl From<PolicyArg> for PolicyKind {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Object => PolicyKind::Object,
            PolicyArg::Depth => PolicyKind::Depth,
            PolicyArg::Curiosity => PolicyKind::Curiosity,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the curiosity-driven exploration agent.
    ExploreTrain,
    /// Train the region captioner on synthetic templated captions.
    CaptionTrain {
        /// Encoder/decoder depth.
        #[arg(long, value_parser = ["1", "2", "3", "6"])]
        layers: Option<String>,
    },
    /// Run logged episodes with the speaker and captioner active.
    Run {
        /// Directory holding explore.ckpt.
        #[arg(long, default_value = "out")]
        explore_dir: PathBuf,
        /// Directory holding caption.ckpt and vocab.tsv.
        #[arg(long, default_value = "out")]
        caption_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        /// Speaker policy override.
        #[arg(long)]
        policy: Option<PolicyArg>,
        /// Speaker threshold override.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Compute coverage/diversity/loquacity metrics over episode logs.
    Eval {
        /// Directory of episode logs (with vocab.tsv alongside).
        #[arg(long, default_value = "out")]
        logs: PathBuf,
    },
    /// Re-render one episode's trajectory as a PGM image.
    RenderMap {
        /// Episode log to replay.
        #[arg(long)]
        log: PathBuf,
        /// Output image path.
        #[arg(long, default_value = "map.pgm")]
        image: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    if cli.workers != 1 {
        return Err("this build is single-threaded; pass --workers 1".into());
    }
    let mut config = match &cli.config {
        Some(path) => RunConfig::parse_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let out = cli.out.clone().unwrap_or_else(runner::default_out_dir);
    match cli.command {
        Command::ExploreTrain => {
            let records = cmd_explore_train(&config, &out)?;
            if let Some(last) = records.last() {
                println!(
                    "trained {} updates; final coverage {:.4}, mean net reward {:.4}",
                    records.len(),
                    last.coverage,
                    last.mean_net
                );
            }
            println!("wrote {}", out.join(runner::EXPLORE_CKPT).display());
        }
        Command::CaptionTrain { layers } => {
            if let Some(layers) = layers {
                config.captioner.layers = layers.parse().expect("validated by clap");
            }
            let acc = cmd_caption_train(&config, &out)?;
            println!("holdout teacher-forced accuracy {acc:.4}");
            println!("wrote {}", out.join(runner::CAPTION_CKPT).display());
        }
        Command::Run {
            explore_dir,
            caption_dir,
            episodes,
            policy,
            threshold,
        } => {
            if let Some(policy) = policy {
                config.speaker = SpeakerPolicy::new(policy.into(), config.speaker.threshold);
            }
            if let Some(threshold) = threshold {
                config.speaker.threshold = threshold;
            }
            let events = cmd_run(&config, &explore_dir, &caption_dir, episodes, &out)?;
            let total: usize = events.iter().map(Vec::len).sum();
            println!("{episodes} episodes, {total} speak events -> {}", out.display());
        }
        Command::Eval { logs } => {
            let report = cmd_eval(&config, &logs)?;
            print!("{}", report.table());
        }
        Command::RenderMap { log, image } => {
            cmd_render_map(&config, &log, &image)?;
            println!("wrote {}", image.display());
        }
    }
    Ok(())
}
