//! Sweep the three speaker policies across their threshold grids on one
//! fixed random trajectory and print how loquacity (speak events per
//! episode) falls as each policy gets stricter.
//!
//! Run with: cargo run --release --example speaker_grid

use curio::curiosity::{net_reward, CuriosityConfig, ForwardModel};
use curio::perception::{preprocess, EmbeddingNet, FrameStack, PerceptionConfig};
use curio::speaker::{should_speak, PolicyKind, SpeakerPolicy};
use curio::tensor::ParamStore;
use curio::world::{generate_world, render_observation, step, Action, GenConfig, MotionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let map = generate_world(3, &GenConfig::default())?;
    let motion = MotionConfig::default();
    let perception = PerceptionConfig::default();
    let curiosity = CuriosityConfig::default();
    let embed = EmbeddingNet::new(perception);
    let forward = ForwardModel {
        feature_dim: perception.feature_dim,
        n_actions: Action::ALL.len(),
        hidden: curiosity.hidden,
    };
    let mut store: ParamStore<f32> = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    forward.register(&mut store, &mut rng)?;

    // one 600-step random trajectory, with observations and rewards logged
    let mut pose = map.default_start();
    let mut stack = FrameStack::from_first(preprocess(&render_observation(&map, &pose), &perception));
    let mut history = Vec::new();
    let mut feat = embed.embed(&stack)?;
    let mut observations = Vec::new();
    let mut rewards = Vec::new();
    for t in 0..600 {
        let action = Action::ALL[rng.gen_range(0..3)];
        let pred = forward.predict(&store, &feat, action)?;
        pose = step(&map, &pose, action, &motion);
        let obs = render_observation(&map, &pose);
        stack.push(preprocess(&obs, &perception));
        history.push(action);
        let next = embed.embed(&stack)?;
        rewards.push(net_reward(&curiosity, t, &pred, &next, &history)?);
        observations.push(obs);
        feat = next;
    }

    let grids = [
        (PolicyKind::Object, vec![1.0, 3.0, 5.0]),
        (PolicyKind::Depth, vec![0.25, 0.5, 0.75]),
        (PolicyKind::Curiosity, vec![0.7, 0.85, 1.0]),
    ];
    for (kind, thresholds) in grids {
        for threshold in thresholds {
            let policy = SpeakerPolicy::new(kind, threshold);
            let mut events = 0;
            for (t, obs) in observations.iter().enumerate() {
                let (fire, _) = should_speak(&policy, obs, &rewards[..=t]);
                if fire {
                    events += 1;
                }
            }
            println!("{:>9} policy, threshold {threshold:>5}: {events:4} speak events", kind.name());
        }
    }
    Ok(())
}
