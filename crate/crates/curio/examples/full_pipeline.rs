//! The whole pipeline end to end at miniature scale: train the explorer,
//! train the captioner, run speaking episodes to log files, evaluate the
//! logs into the metrics table, and render the trajectory map — the same
//! five commands the `curio` binary exposes.
//!
//! Run with: cargo run --release --example full_pipeline

use curio::captioner::CaptionerConfig;
use curio::config::RunConfig;
use curio::runner::{
    cmd_caption_train, cmd_eval, cmd_explore_train, cmd_render_map, cmd_run,
};
use curio::speaker::{PolicyKind, SpeakerPolicy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::default();
    config.seed = 17;
    config.ppo.updates = 20;
    config.ppo.episode_len = 200;
    config.captioner = CaptionerConfig {
        layers: 1,
        ..CaptionerConfig::default()
    };
    config.speaker = SpeakerPolicy::new(PolicyKind::Depth, 0.25);

    let out = std::env::temp_dir().join("curio_full_pipeline");
    let _ = std::fs::remove_dir_all(&out);

    println!("[1/5] explore-train");
    let records = cmd_explore_train(&config, &out)?;
    println!(
        "      {} updates, final visited coverage {:.4}",
        records.len(),
        records.last().map(|r| r.coverage).unwrap_or(0.0)
    );

    println!("[2/5] caption-train (this is the slow part)");
    let accuracy = cmd_caption_train(&config, &out)?;
    println!("      held-out teacher-forced accuracy {accuracy:.3}");

    println!("[3/5] run 3 episodes");
    let runs = out.join("runs");
    let events = cmd_run(&config, &out, &out, 3, &runs)?;
    println!(
        "      {} speak events across {} episodes",
        events.iter().map(Vec::len).sum::<usize>(),
        events.len()
    );

    println!("[4/5] eval");
    let report = cmd_eval(&config, &runs)?;
    print!("{}", report.table());

    println!("[5/5] render-map");
    let image = out.join("episode0.pgm");
    cmd_render_map(&config, &runs.join("episode_0000.log"), &image)?;
    println!("      wrote {}", image.display());
    Ok(())
}
