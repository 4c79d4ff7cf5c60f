//! Watch the intrinsic reward at work: a frozen random embedding feeds a
//! forward-dynamics model whose prediction error is the agent's surprisal.
//! As the dynamics model trains on a wandering trajectory, surprisal falls;
//! holding one action down long enough trips the repeated-action penalty.
//!
//! Run with: cargo run --release --example curiosity_rewards

use curio::curiosity::{concat_feat_action, net_reward, CuriosityConfig, ForwardModel};
use curio::perception::{preprocess, EmbeddingNet, FrameStack, PerceptionConfig};
use curio::tensor::{ParamStore, Tape};
use curio::world::{generate_world, render_observation, step, Action, GenConfig, MotionConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let map = generate_world(5, &GenConfig::default())?;
    let motion = MotionConfig::default();
    let perception = PerceptionConfig::default();
    let curiosity = CuriosityConfig::default();
    let embed = EmbeddingNet::new(perception);
    println!("frozen embedding checksum: {:#018x}", embed.checksum());

    let forward = ForwardModel {
        feature_dim: perception.feature_dim,
        n_actions: Action::ALL.len(),
        hidden: curiosity.hidden,
    };
    let mut store: ParamStore<f32> = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    forward.register(&mut store, &mut rng)?;

    let mut pose = map.default_start();
    let mut stack = FrameStack::from_first(preprocess(&render_observation(&map, &pose), &perception));
    let mut history = Vec::new();
    let mut feat = embed.embed(&stack)?;
    for t in 0..600 {
        // mostly random walk; a deliberate 8-long left-spin starting at 300
        let action = if (300..308).contains(&t) {
            Action::Left
        } else {
            Action::ALL[rng.gen_range(0..3)]
        };
        let pred = forward.predict(&store, &feat, action)?;
        pose = step(&map, &pose, action, &motion);
        stack.push(preprocess(&render_observation(&map, &pose), &perception));
        history.push(action);
        let next = embed.embed(&stack)?;
        let reward = net_reward(&curiosity, t, &pred, &next, &history)?;
        if t % 100 == 0 || reward.penalty > 0.0 {
            println!(
                "t={t:3}  surprisal {:.5}  penalty {:.3}  net {:+.5}",
                reward.raw_surprisal, reward.penalty, reward.net
            );
        }

        // one gradient step of the forward model on this transition
        let mut tape: Tape<f32> = Tape::new();
        let input = tape.constant(concat_feat_action(&feat, action, Action::ALL.len()));
        let out = forward.forward(&mut tape, &store, input)?;
        let target = tape.constant(curio::Tensor::matrix(1, next.data().len(), next.data().to_vec())?);
        let err = tape.sub(out, target)?;
        let loss = tape.sum_squares(err);
        let grads = tape.backward(loss)?.into_param_grads(&tape);
        store.adam_step(&grads, 1e-4)?;
        feat = next;
    }
    Ok(())
}
