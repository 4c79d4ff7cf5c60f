//! Train the curiosity-driven PPO agent for a short budget and watch the
//! training curve: mean surprisal decays as the forward model learns the
//! world, while visited coverage climbs.
//!
//! Run with: cargo run --release --example ppo_exploration

use curio::agent::{train, ExplorationEnv};
use curio::config::RunConfig;
use curio::perception::EmbeddingNet;
use curio::runner::{build_models, derive_seed};
use curio::tensor::ParamStore;
use curio::world::generate_world;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::default();
    config.seed = 23;
    config.ppo.updates = 60;

    let map = generate_world(derive_seed(config.seed, "world", 0), &config.world)?;
    let embed = EmbeddingNet::new(config.perception);
    let mut env = ExplorationEnv::new(map, embed, config.curiosity.clone(), config.ppo.episode_len);
    let models = build_models(&config);
    let mut store: ParamStore<f32> = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "init", 0));
    models.0.register(&mut store, &mut rng)?;
    models.1.register(&mut store, &mut rng)?;
    models.2.register(&mut store, &mut rng)?;

    println!("update  surprisal   penalty       net  coverage");
    let records = train(
        &mut env,
        &models.0,
        &models.1,
        &models.2,
        &mut store,
        &config.ppo,
        derive_seed(config.seed, "explore", 0),
        |r, _| {
            if r.update % 10 == 0 {
                println!(
                    "{:6}  {:9.5} {:9.5} {:+9.5} {:9.4}",
                    r.update, r.mean_surprisal, r.mean_penalty, r.mean_net, r.coverage
                );
            }
        },
    )?;
    let last = records.last().expect("at least one update");
    println!(
        "final: coverage {:.4} over {} steps, embedding checksum intact",
        last.coverage,
        env.step_count()
    );
    Ok(())
}
