//! Actor-critic exploration agent: categorical policy with a value head,
//! rollout collection against the raycast world, generalized advantage
//! estimation, and clipped-surrogate policy optimization of the combined
//! exploration objective.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::curiosity::{
    concat_feat_action, forward_loss_var, net_reward, CuriosityConfig, ForwardModel, InverseModel,
    RewardRecord,
};
use crate::perception::{preprocess, EmbeddingNet, FrameStack, PerceptionError};
use crate::tensor::{ParamStore, Tape, Tensor, TensorError, Var};
use crate::world::{
    render_observation, step as world_step, visited_coverage, Action, AgentPose, MotionConfig,
    WorldMap,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid ppo config: {0}")]
    BadConfig(String),
    #[error("non-finite loss during update {0}: {1}")]
    NonFiniteLoss(usize, String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
}

type Result<T> = std::result::Result<T, AgentError>;

/// Optimization settings for the exploration phase.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub lr: f64,
    /// Optimization epochs per rollout.
    pub epochs: usize,
    /// Weight of the reward-maximization term in the combined objective.
    pub lambda: f64,
    pub clip: f64,
    pub gamma: f64,
    pub gae: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub rollout: usize,
    pub minibatch: usize,
    /// Total rollout/update iterations.
    pub updates: usize,
    /// Policy trunk width.
    pub hidden: usize,
    /// Steps before the agent is reset to the start pose.
    pub episode_len: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 3,
            lambda: 0.1,
            clip: 0.2,
            gamma: 0.99,
            gae: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            rollout: 128,
            minibatch: 32,
            updates: 300,
            hidden: 128,
            episode_len: 1000,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip <= 0.0 {
            return Err(AgentError::BadConfig(format!("ppo.clip {} must be > 0", self.clip)));
        }
        for (name, v) in [("ppo.gamma", self.gamma), ("ppo.gae", self.gae)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(AgentError::BadConfig(format!("{name} {v} outside (0, 1]")));
            }
        }
        if self.lr <= 0.0 {
            return Err(AgentError::BadConfig(format!("ppo.lr {} must be > 0", self.lr)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(AgentError::BadConfig(format!(
                "ppo.lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        if self.rollout == 0 || self.minibatch == 0 || self.minibatch > self.rollout {
            return Err(AgentError::BadConfig(format!(
                "ppo.minibatch {} must be in 1..=rollout ({})",
                self.minibatch, self.rollout
            )));
        }
        if self.epochs == 0 || self.hidden == 0 || self.episode_len == 0 {
            return Err(AgentError::BadConfig(
                "ppo.epochs, ppo.hidden, ppo.episode_len must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Shared trunk with action-logits and scalar value heads.
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub feature_dim: usize,
    pub hidden: usize,
    pub n_actions: usize,
}

impl PolicyNet {
    pub fn new(feature_dim: usize, hidden: usize) -> Self {
        Self {
            feature_dim,
            hidden,
            n_actions: Action::ALL.len(),
        }
    }

    pub fn register<T: crate::tensor::Real>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<()> {
        store.register_affine("policy.trunk", self.feature_dim, self.hidden, rng)?;
        store.register_affine("policy.logits", self.hidden, self.n_actions, rng)?;
        store.register_affine("policy.value", self.hidden, 1, rng)?;
        Ok(())
    }

    /// Logits and values for a batch of feature rows.
    pub fn forward<T: crate::tensor::Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        input: Var,
    ) -> Result<(Var, Var)> {
        let wt = tape.param(store, "policy.trunk.w")?;
        let bt = tape.param(store, "policy.trunk.b")?;
        let h = tape.affine(input, wt, bt)?;
        let h = tape.tanh(h);
        let wl = tape.param(store, "policy.logits.w")?;
        let bl = tape.param(store, "policy.logits.b")?;
        let logits = tape.affine(h, wl, bl)?;
        let wv = tape.param(store, "policy.value.w")?;
        let bv = tape.param(store, "policy.value.b")?;
        let values = tape.affine(h, wv, bv)?;
        Ok((logits, values))
    }

    /// Inference: logits and value for one feature vector.
    pub fn evaluate(&self, store: &ParamStore<f32>, feat: &Tensor<f32>) -> Result<(Vec<f32>, f64)> {
        let mut tape: Tape<f32> = Tape::new();
        let input = tape.constant(Tensor::matrix(1, feat.len(), feat.data().to_vec())?);
        let (logits, values) = self.forward(&mut tape, store, input)?;
        Ok((
            tape.value(logits).row(0).to_vec(),
            tape.value(values).at(0, 0) as f64,
        ))
    }
}

/// Draw from the categorical softmax of raw logits; returns the index and
/// its log probability.
pub fn sample_from_logits(logits: &[f32], rng: &mut ChaCha8Rng) -> (usize, f64) {
    let mx = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f64> = logits.iter().map(|&l| ((l - mx) as f64).exp()).collect();
    let total: f64 = exps.iter().sum();
    let mut u = rng.gen_range(0.0..1.0) * total;
    let mut pick = exps.len() - 1;
    for (i, &e) in exps.iter().enumerate() {
        if u < e {
            pick = i;
            break;
        }
        u -= e;
    }
    (pick, (exps[pick] / total).ln())
}

/// One policy draw: action, its log probability, and the state value.
pub fn sample_action(
    policy: &PolicyNet,
    store: &ParamStore<f32>,
    feat: &Tensor<f32>,
    rng: &mut ChaCha8Rng,
) -> Result<(Action, f64, f64)> {
    let (logits, value) = policy.evaluate(store, feat)?;
    let (idx, logp) = sample_from_logits(&logits, rng);
    Ok((Action::from_index(idx).expect("logit head width"), logp, value))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub feature: Tensor<f32>,
    pub next_feature: Tensor<f32>,
    pub action: Action,
    pub log_prob: f64,
    pub value: f64,
    pub reward: RewardRecord,
    pub done: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    /// Normalized generalized advantage estimates, filled by
    /// [`compute_advantages`].
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Bootstrap value of the state after the final transition.
    pub last_value: f64,
}

/// The agent's persistent view of one world: pose, frame stack, action
/// history for the repetition penalty, and every pose visited.
pub struct ExplorationEnv {
    pub map: WorldMap,
    pub motion: MotionConfig,
    pub embed: EmbeddingNet,
    pub curiosity: CuriosityConfig,
    pub episode_len: usize,
    pose: AgentPose,
    stack: FrameStack,
    history: Vec<Action>,
    step: usize,
    positions: Vec<AgentPose>,
}

impl ExplorationEnv {
    pub fn new(
        map: WorldMap,
        embed: EmbeddingNet,
        curiosity: CuriosityConfig,
        episode_len: usize,
    ) -> Self {
        let pose = map.default_start();
        let frame = preprocess(&render_observation(&map, &pose), embed.config());
        Self {
            map,
            motion: MotionConfig::default(),
            embed,
            curiosity,
            episode_len,
            pose,
            stack: FrameStack::from_first(frame),
            history: Vec::new(),
            step: 0,
            positions: vec![pose],
        }
    }

    /// Restart the current episode: start pose, fresh frame stack, empty
    /// action history. Visited positions are kept for coverage accounting.
    pub fn reset_episode(&mut self) {
        self.pose = self.map.default_start();
        let frame = preprocess(&render_observation(&self.map, &self.pose), self.embed.config());
        self.stack = FrameStack::from_first(frame);
        self.history.clear();
        self.positions.push(self.pose);
    }

    pub fn features(&self) -> Result<Tensor<f32>> {
        Ok(self.embed.embed(&self.stack)?)
    }

    pub fn pose(&self) -> AgentPose {
        self.pose
    }

    pub fn positions(&self) -> &[AgentPose] {
        &self.positions
    }

    pub fn coverage(&self) -> f32 {
        visited_coverage(&self.map, &self.positions)
    }

    /// Apply one action: move, observe, update the frame stack and
    /// histories. Returns the new feature vector and whether the episode
    /// ended on this step.
    pub fn advance(&mut self, action: Action) -> Result<(Tensor<f32>, bool)> {
        self.pose = world_step(&self.map, &self.pose, action, &self.motion);
        self.positions.push(self.pose);
        let frame = preprocess(&render_observation(&self.map, &self.pose), self.embed.config());
        self.stack.push(frame);
        self.history.push(action);
        self.step += 1;
        let next = self.features()?;
        let done = self.step % self.episode_len == 0;
        Ok((next, done))
    }

    pub fn action_history(&self) -> &[Action] {
        &self.history
    }

    pub fn step_count(&self) -> usize {
        self.step
    }
}

/// Roll the policy forward `length` steps, scoring each transition with
/// the curiosity reward.
pub fn collect_rollout(
    env: &mut ExplorationEnv,
    policy: &PolicyNet,
    forward: &ForwardModel,
    store: &ParamStore<f32>,
    length: usize,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutBuffer> {
    let mut transitions = Vec::with_capacity(length);
    let mut feat = env.features()?;
    for _ in 0..length {
        let (action, log_prob, value) = sample_action(policy, store, &feat, rng)?;
        let pred = forward.predict(store, &feat, action)?;
        let (next, done) = env.advance(action)?;
        let reward = net_reward(
            &env.curiosity,
            env.step_count() - 1,
            &pred,
            &next,
            env.action_history(),
        )?;
        transitions.push(Transition {
            feature: feat,
            next_feature: next.clone(),
            action,
            log_prob,
            value,
            reward,
            done,
        });
        if done {
            env.reset_episode();
            feat = env.features()?;
        } else {
            feat = next;
        }
    }
    let (_, last_value) = policy.evaluate(store, &feat)?;
    Ok(RolloutBuffer {
        transitions,
        advantages: Vec::new(),
        returns: Vec::new(),
        last_value,
    })
}

/// Generalized advantage estimation over the buffer, followed by
/// zero-mean / unit-variance normalization of the advantages. Returns are
/// the unnormalized advantages plus the value baseline.
pub fn compute_advantages(buffer: &mut RolloutBuffer, gamma: f64, gae: f64) {
    let n = buffer.transitions.len();
    let mut raw = vec![0.0f64; n];
    let mut carry = 0.0f64;
    for t in (0..n).rev() {
        let tr = &buffer.transitions[t];
        let next_value = if tr.done {
            0.0
        } else if t + 1 < n {
            buffer.transitions[t + 1].value
        } else {
            buffer.last_value
        };
        let delta = tr.reward.net + gamma * next_value - tr.value;
        carry = if tr.done { delta } else { delta + gamma * gae * carry };
        raw[t] = carry;
    }
    buffer.returns = raw
        .iter()
        .zip(&buffer.transitions)
        .map(|(a, tr)| a + tr.value)
        .collect();
    let mean = raw.iter().sum::<f64>() / n.max(1) as f64;
    let var = raw.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n.max(1) as f64;
    let std = var.sqrt().max(1e-8);
    buffer.advantages = raw.iter().map(|a| (a - mean) / std).collect();
}

/// The curiosity-side scalar objective: `-lambda * reward_term +
/// beta * L_F + (1 - beta) * L_I` (reward is maximized, losses minimized).
pub fn curiosity_objective(lambda: f64, beta: f64, reward_term: f64, lf: f64, li: f64) -> f64 {
    -lambda * reward_term + beta * lf + (1.0 - beta) * li
}

/// Per-sample clipped surrogate: `min(r*A, clamp(r, 1-c, 1+c)*A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Component means of one optimization pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub forward_loss: f64,
    pub inverse_loss: f64,
    pub total: f64,
}

/// Runs the configured number of epochs of minibatch updates over one
/// rollout. Advantages must be computed first.
pub fn ppo_update(
    policy: &PolicyNet,
    forward: &ForwardModel,
    inverse: &InverseModel,
    store: &mut ParamStore<f32>,
    buffer: &RolloutBuffer,
    config: &PpoConfig,
    curiosity: &CuriosityConfig,
    update_index: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LossReport> {
    assert_eq!(
        buffer.advantages.len(),
        buffer.transitions.len(),
        "advantages must be computed before ppo_update"
    );
    let n = buffer.transitions.len();
    let feat_dim = policy.feature_dim;
    let n_actions = policy.n_actions;
    let mut report = LossReport::default();
    let mut batches = 0usize;
    let mut order: Vec<usize> = (0..n).collect();
    for _epoch in 0..config.epochs {
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for batch in order.chunks(config.minibatch) {
            let b = batch.len();
            let mut feats = Vec::with_capacity(b * feat_dim);
            let mut fa = Vec::with_capacity(b * (feat_dim + n_actions));
            let mut pair = Vec::with_capacity(b * 2 * feat_dim);
            let mut nexts = Vec::with_capacity(b * feat_dim);
            let mut actions = Vec::with_capacity(b);
            let mut old_logp = Vec::with_capacity(b);
            let mut advs = Vec::with_capacity(b);
            let mut rets = Vec::with_capacity(b);
            for &idx in batch {
                let tr = &buffer.transitions[idx];
                feats.extend_from_slice(tr.feature.data());
                let row = concat_feat_action(&tr.feature, tr.action, n_actions);
                fa.extend_from_slice(row.data());
                pair.extend_from_slice(tr.feature.data());
                pair.extend_from_slice(tr.next_feature.data());
                nexts.extend_from_slice(tr.next_feature.data());
                actions.push(tr.action.index());
                old_logp.push(tr.log_prob as f32);
                advs.push(buffer.advantages[idx] as f32);
                rets.push(buffer.returns[idx] as f32);
            }
            let mut tape: Tape<f32> = Tape::new();
            let feats = tape.constant(Tensor::matrix(b, feat_dim, feats)?);
            let (logits, values) = policy.forward(&mut tape, store, feats)?;
            let logp_all = tape.log_softmax_rows(logits)?;
            let logp_taken = tape.pick_per_row(logp_all, &actions)?;
            let old = tape.constant(Tensor::matrix(b, 1, old_logp)?);
            let diff = tape.sub(logp_taken, old)?;
            let ratio = tape.exp(diff);
            let adv = tape.constant(Tensor::matrix(b, 1, advs)?);
            let surr1 = tape.mul_elem(ratio, adv)?;
            let clipped = tape.clamp(ratio, 1.0 - config.clip as f32, 1.0 + config.clip as f32);
            let surr2 = tape.mul_elem(clipped, adv)?;
            let surr_min = tape.min_elem(surr1, surr2)?;
            let surrogate = tape.mean(surr_min);
            let ret = tape.constant(Tensor::matrix(b, 1, rets)?);
            let vdiff = tape.sub(values, ret)?;
            let vss = tape.sum_squares(vdiff);
            let value_loss = tape.scale(vss, 1.0 / b as f32);
            let probs = tape.softmax_rows(logits)?;
            let plogp = tape.mul_elem(probs, logp_all)?;
            let plogp_sum = tape.sum(plogp);
            let entropy = tape.scale(plogp_sum, -1.0 / b as f32);
            let fa = tape.constant(Tensor::matrix(b, feat_dim + n_actions, fa)?);
            let pred = forward.forward(&mut tape, store, fa).map_err(TensorError::from)?;
            let next = tape.constant(Tensor::matrix(b, feat_dim, nexts)?);
            let fl = forward_loss_var(&mut tape, pred, next).map_err(TensorError::from)?;
            let forward_mean = tape.scale(fl, 1.0 / b as f32);
            let pair = tape.constant(Tensor::matrix(b, 2 * feat_dim, pair)?);
            let ilogits = inverse.logits(&mut tape, store, pair).map_err(TensorError::from)?;
            let targets: Vec<Option<usize>> = actions.iter().map(|&a| Some(a)).collect();
            let il = tape.softmax_xent_sum(ilogits, &targets)?;
            let inverse_mean = tape.scale(il, 1.0 / b as f32);
            // combined objective: -lambda*surrogate + value + entropy bonus
            // + beta*L_F + (1-beta)*L_I
            let t1 = tape.scale(surrogate, -config.lambda as f32);
            let t2 = tape.scale(value_loss, config.value_coef as f32);
            let t3 = tape.scale(entropy, -config.entropy_coef as f32);
            let t4 = tape.scale(forward_mean, curiosity.beta as f32);
            let t5 = tape.scale(inverse_mean, 1.0 - curiosity.beta as f32);
            let mut total = tape.add(t1, t2)?;
            total = tape.add(total, t3)?;
            total = tape.add(total, t4)?;
            total = tape.add(total, t5)?;
            let total_v = tape.value(total).item();
            if !total_v.is_finite() {
                return Err(AgentError::NonFiniteLoss(
                    update_index,
                    format!(
                        "surrogate {} value {} entropy {} forward {} inverse {}",
                        tape.value(surrogate).item(),
                        tape.value(value_loss).item(),
                        tape.value(entropy).item(),
                        tape.value(forward_mean).item(),
                        tape.value(inverse_mean).item()
                    ),
                ));
            }
            report.surrogate += tape.value(surrogate).item() as f64;
            report.value_loss += tape.value(value_loss).item() as f64;
            report.entropy += tape.value(entropy).item() as f64;
            report.forward_loss += tape.value(forward_mean).item() as f64;
            report.inverse_loss += tape.value(inverse_mean).item() as f64;
            report.total += total_v as f64;
            batches += 1;
            let grads = tape.backward(total)?;
            let mut grads = grads.into_param_grads(&tape);
            for name in store.names().map(str::to_string).collect::<Vec<_>>() {
                grads
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(store.value(&name).unwrap().shape()));
            }
            filter_frozen(store, &mut grads);
            store.adam_step(&grads, config.lr as f32)?;
        }
    }
    let inv = 1.0 / batches.max(1) as f64;
    report.surrogate *= inv;
    report.value_loss *= inv;
    report.entropy *= inv;
    report.forward_loss *= inv;
    report.inverse_loss *= inv;
    report.total *= inv;
    Ok(report)
}

fn filter_frozen(store: &ParamStore<f32>, grads: &mut BTreeMap<String, Tensor<f32>>) {
    let frozen: Vec<String> = store
        .iter()
        .filter(|(_, p)| p.frozen)
        .map(|(n, _)| n.to_string())
        .collect();
    for name in frozen {
        grads.remove(&name);
    }
}

/// One line of the training curve.
#[derive(Clone, Debug, PartialEq)]
pub struct UpdateRecord {
    pub update: usize,
    pub mean_surprisal: f64,
    pub mean_penalty: f64,
    pub mean_net: f64,
    pub losses: LossReport,
    /// Cumulative visited coverage of the training world.
    pub coverage: f32,
}

/// Full training loop: collect, estimate advantages, update; one record
/// per update. `on_update` observes each record with the current
/// parameters (for curve logging and periodic checkpoints).
#[allow(clippy::too_many_arguments)]
pub fn train(
    env: &mut ExplorationEnv,
    policy: &PolicyNet,
    forward: &ForwardModel,
    inverse: &InverseModel,
    store: &mut ParamStore<f32>,
    config: &PpoConfig,
    seed: u64,
    mut on_update: impl FnMut(&UpdateRecord, &ParamStore<f32>),
) -> Result<Vec<UpdateRecord>> {
    config.validate()?;
    let embed_checksum = env.embed.checksum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let curiosity = env.curiosity.clone();
    let mut records = Vec::with_capacity(config.updates);
    for update in 0..config.updates {
        let mut buffer = collect_rollout(env, policy, forward, store, config.rollout, &mut rng)?;
        compute_advantages(&mut buffer, config.gamma, config.gae);
        let losses = ppo_update(
            policy, forward, inverse, store, &buffer, config, &curiosity, update, &mut rng,
        )?;
        let n = buffer.transitions.len() as f64;
        let record = UpdateRecord {
            update,
            mean_surprisal: buffer.transitions.iter().map(|t| t.reward.raw_surprisal).sum::<f64>() / n,
            mean_penalty: buffer.transitions.iter().map(|t| t.reward.penalty).sum::<f64>() / n,
            mean_net: buffer.transitions.iter().map(|t| t.reward.net).sum::<f64>() / n,
            losses,
            coverage: env.coverage(),
        };
        on_update(&record, store);
        records.push(record);
    }
    assert_eq!(
        env.embed.checksum(),
        embed_checksum,
        "frozen embedding changed during training"
    );
    Ok(records)
}
