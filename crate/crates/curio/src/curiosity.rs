//! Intrinsic reward generation: forward and inverse dynamics models on
//! the frozen feature space, the surprisal reward computed from the
//! forward model's prediction error, and the repeated-action penalty.

use rand::Rng;

use crate::tensor::{ParamStore, Real, Result, Tape, Tensor, TensorError, Var};
use crate::world::Action;

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CuriosityConfig {
    /// Surprisal scaling factor.
    pub eta: f64,
    /// Forward/inverse loss balance.
    pub beta: f64,
    /// Penalty magnitude applied while an action repeats.
    pub penalty: f64,
    /// Number of identical consecutive actions that triggers the penalty.
    pub repeat_threshold: usize,
    /// Hidden width of both dynamics models.
    pub hidden: usize,
}

impl Default for CuriosityConfig {
    fn default() -> Self {
        Self {
            eta: 1.0,
            beta: 0.2,
            penalty: 0.01,
            repeat_threshold: 5,
            hidden: 256,
        }
    }
}

impl CuriosityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 {
            return Err(TensorError::Contract(format!(
                "curiosity.eta must be > 0, got {}",
                self.eta
            )));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(TensorError::Contract(format!(
                "curiosity.beta must be in [0,1], got {}",
                self.beta
            )));
        }
        if self.penalty < 0.0 {
            return Err(TensorError::Contract(format!(
                "curiosity.penalty must be >= 0, got {}",
                self.penalty
            )));
        }
        if self.repeat_threshold < 1 {
            return Err(TensorError::Contract(
                "curiosity.repeat_threshold must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-step reward accounting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardRecord {
    pub step: usize,
    pub raw_surprisal: f64,
    pub penalty: f64,
    pub net: f64,
}

/// Two-layer perceptron predicting the next feature vector from the
/// current one and a one-hot action.
#[derive(Clone, Debug)]
pub struct ForwardModel {
    pub feature_dim: usize,
    pub n_actions: usize,
    pub hidden: usize,
}

impl ForwardModel {
    pub fn register<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<()> {
        store.register_affine("forward.l1", self.feature_dim + self.n_actions, self.hidden, rng)?;
        store.register_affine("forward.l2", self.hidden, self.feature_dim, rng)
    }

    /// Graph for a batch of rows `[feat | one-hot action]`, returning the
    /// predicted next features, one row per input row.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, input: Var) -> Result<Var> {
        let expected = self.feature_dim + self.n_actions;
        if tape.value(input).cols() != expected {
            return Err(TensorError::ShapeMismatch {
                op: "forward_model",
                expected: vec![expected],
                got: tape.value(input).shape().to_vec(),
            });
        }
        let w1 = tape.param(store, "forward.l1.w")?;
        let b1 = tape.param(store, "forward.l1.b")?;
        let w2 = tape.param(store, "forward.l2.w")?;
        let b2 = tape.param(store, "forward.l2.b")?;
        let h = tape.affine(input, w1, b1)?;
        let h = tape.relu(h);
        tape.affine(h, w2, b2)
    }

    /// Inference-only prediction for a single transition.
    pub fn predict<T: Real>(
        &self,
        store: &ParamStore<T>,
        feat: &Tensor<T>,
        action: Action,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let input = tape.constant(concat_feat_action(feat, action, self.n_actions));
        let out = self.forward(&mut tape, store, input)?;
        let v = tape.value(out);
        Ok(Tensor::vector(v.data().to_vec()))
    }
}

/// Two-layer perceptron predicting the action taken between two
/// consecutive feature vectors.
#[derive(Clone, Debug)]
pub struct InverseModel {
    pub feature_dim: usize,
    pub n_actions: usize,
    pub hidden: usize,
}

impl InverseModel {
    pub fn register<T: Real>(
        &self,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<()> {
        store.register_affine("inverse.l1", 2 * self.feature_dim, self.hidden, rng)?;
        store.register_affine("inverse.l2", self.hidden, self.n_actions, rng)
    }

    /// Action logits for a batch of rows `[feat_t | feat_{t+1}]`.
    pub fn logits<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, input: Var) -> Result<Var> {
        let expected = 2 * self.feature_dim;
        if tape.value(input).cols() != expected {
            return Err(TensorError::ShapeMismatch {
                op: "inverse_model",
                expected: vec![expected],
                got: tape.value(input).shape().to_vec(),
            });
        }
        let w1 = tape.param(store, "inverse.l1.w")?;
        let b1 = tape.param(store, "inverse.l1.b")?;
        let w2 = tape.param(store, "inverse.l2.w")?;
        let b2 = tape.param(store, "inverse.l2.b")?;
        let h = tape.affine(input, w1, b1)?;
        let h = tape.relu(h);
        tape.affine(h, w2, b2)
    }

    /// Probability distribution over actions for one transition pair.
    pub fn predict<T: Real>(
        &self,
        store: &ParamStore<T>,
        feat_t: &Tensor<T>,
        feat_next: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let mut data = feat_t.data().to_vec();
        data.extend_from_slice(feat_next.data());
        let input = tape.constant(Tensor::matrix(1, data.len(), data)?);
        let logits = self.logits(&mut tape, store, input)?;
        let dist = tape.softmax_rows(logits)?;
        Ok(Tensor::vector(tape.value(dist).data().to_vec()))
    }
}

/// Build a `1 x (F + A)` row of features concatenated with a one-hot
/// action.
pub fn concat_feat_action<T: Real>(feat: &Tensor<T>, action: Action, n_actions: usize) -> Tensor<T> {
    let mut data = feat.data().to_vec();
    let mut onehot = vec![T::zero(); n_actions];
    onehot[action.index()] = T::one();
    data.extend_from_slice(&onehot);
    Tensor::matrix(1, data.len(), data).unwrap()
}

/// Forward-model training loss: `0.5 * ||pred - actual||^2`.
pub fn forward_loss<T: Real>(pred: &Tensor<T>, actual: &Tensor<T>) -> Result<T> {
    if pred.len() != actual.len() {
        return Err(TensorError::ShapeMismatch {
            op: "forward_loss",
            expected: pred.shape().to_vec(),
            got: actual.shape().to_vec(),
        });
    }
    let half = T::from_f64(0.5);
    let mut acc = T::zero();
    for (&p, &a) in pred.data().iter().zip(actual.data()) {
        let d = p - a;
        acc += d * d;
    }
    Ok(half * acc)
}

/// Differentiable forward loss on the tape.
pub fn forward_loss_var<T: Real>(tape: &mut Tape<T>, pred: Var, actual: Var) -> Result<Var> {
    let diff = tape.sub(pred, actual)?;
    let ss = tape.sum_squares(diff);
    Ok(tape.scale(ss, T::from_f64(0.5)))
}

/// Surprisal reward: `(eta/2) * ||pred - actual||^2`. A plain value, no
/// gradient flows through it.
pub fn surprisal<T: Real>(config: &CuriosityConfig, pred: &Tensor<T>, actual: &Tensor<T>) -> Result<f64> {
    let base = forward_loss(pred, actual)?.into_f64();
    Ok(config.eta * base)
}

/// The repeated-action penalty: `penalty` while the last
/// `repeat_threshold` actions are identical, else 0. Pure in the last
/// `repeat_threshold` history entries.
pub fn penalty(config: &CuriosityConfig, action_history: &[Action]) -> f64 {
    let t = config.repeat_threshold;
    if action_history.len() < t {
        return 0.0;
    }
    let tail = &action_history[action_history.len() - t..];
    if tail.iter().all(|a| *a == tail[0]) {
        config.penalty
    } else {
        0.0
    }
}

/// Combine surprisal and penalty into the per-step reward record.
pub fn net_reward<T: Real>(
    config: &CuriosityConfig,
    step: usize,
    pred: &Tensor<T>,
    actual: &Tensor<T>,
    action_history: &[Action],
) -> Result<RewardRecord> {
    let raw = surprisal(config, pred, actual)?;
    let p = penalty(config, action_history);
    Ok(RewardRecord {
        step,
        raw_surprisal: raw,
        penalty: p,
        net: raw - p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    const F: usize = 16;

    fn models() -> (ForwardModel, InverseModel) {
        (
            ForwardModel {
                feature_dim: F,
                n_actions: 3,
                hidden: 32,
            },
            InverseModel {
                feature_dim: F,
                n_actions: 3,
                hidden: 32,
            },
        )
    }

    fn store_with_models(seed: u64) -> ParamStore<f64> {
        let (fwd, inv) = models();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fwd.register(&mut store, &mut rng).unwrap();
        inv.register(&mut store, &mut rng).unwrap();
        store
    }

    fn random_feat(rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::vector((0..F).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn forward_predict_is_deterministic() {
        let (fwd, _) = models();
        let store = store_with_models(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let feat = random_feat(&mut rng);
        let a = fwd.predict(&store, &feat, Action::Forward).unwrap();
        let b = fwd.predict(&store, &feat, Action::Forward).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_final_layer_predicts_zero() {
        let (fwd, _) = models();
        let mut store = store_with_models(1);
        let p = store.get_mut("forward.l2.w").unwrap();
        p.value = Tensor::zeros(&[32, F]);
        let p = store.get_mut("forward.l2.b").unwrap();
        p.value = Tensor::zeros(&[F]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let feat = random_feat(&mut rng);
        let out = fwd.predict(&store, &feat, Action::Left).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_loss_trivial_cases() {
        let a = Tensor::vector(vec![1.0f64, 2.0, 3.0]);
        assert_eq!(forward_loss(&a, &a).unwrap(), 0.0);
        let p = Tensor::vector(vec![1.0f64, 1.0]);
        let q = Tensor::vector(vec![0.0f64, 0.0]);
        assert_eq!(forward_loss(&p, &q).unwrap(), 1.0);
    }

    #[test]
    fn forward_loss_random_pair_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dim = 128;
        let a: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let expected: f64 = 0.5 * a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        let got = forward_loss(&Tensor::vector(a), &Tensor::vector(b)).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn inverse_predict_is_a_distribution() {
        let (_, inv) = models();
        let store = store_with_models(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let a = random_feat(&mut rng);
            let b = random_feat(&mut rng);
            let dist = inv.predict(&store, &a, &b).unwrap();
            let sum: f64 = dist.data().iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            assert!(dist.data().iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn inverse_predict_is_reproducible() {
        let (_, inv) = models();
        let store = store_with_models(5);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_feat(&mut rng);
        let b = random_feat(&mut rng);
        assert_eq!(
            inv.predict(&store, &a, &b).unwrap(),
            inv.predict(&store, &a, &b).unwrap()
        );
    }

    #[test]
    fn surprisal_trivial_values() {
        let cfg = CuriosityConfig::default();
        let a = Tensor::vector(vec![0.5f64; 8]);
        assert_eq!(surprisal(&cfg, &a, &a).unwrap(), 0.0);
        // diff norm^2 = 2 with eta = 1 gives 1.0
        let p = Tensor::vector(vec![1.0f64, 1.0]);
        let q = Tensor::vector(vec![0.0f64, 0.0]);
        assert_eq!(surprisal(&cfg, &p, &q).unwrap(), 1.0);
        let half = CuriosityConfig {
            eta: 0.5,
            ..cfg
        };
        assert_eq!(surprisal(&half, &p, &q).unwrap(), 0.5);
    }

    #[test]
    fn penalty_triggers_after_threshold_identical_actions() {
        let cfg = CuriosityConfig::default();
        let five = vec![Action::Forward; 5];
        assert_eq!(penalty(&cfg, &five), 0.01);
        let mut four_then_one = vec![Action::Forward; 4];
        four_then_one.push(Action::Left);
        assert_eq!(penalty(&cfg, &four_then_one), 0.0);
    }

    #[test]
    fn penalty_persists_while_the_run_continues() {
        let cfg = CuriosityConfig::default();
        let mut history = Vec::new();
        let mut fired_at = Vec::new();
        for step in 1..=7 {
            history.push(Action::Right);
            if penalty(&cfg, &history) > 0.0 {
                fired_at.push(step);
            }
        }
        assert_eq!(fired_at, vec![5, 6, 7]);
    }

    #[test]
    fn penalty_ignores_older_history() {
        let cfg = CuriosityConfig::default();
        let mut a = vec![Action::Left; 5];
        let mut b = vec![Action::Forward, Action::Right, Action::Forward];
        b.extend_from_slice(&a);
        a.splice(0..0, [Action::Right, Action::Right]);
        assert_eq!(penalty(&cfg, &a), penalty(&cfg, &b));
        assert_eq!(penalty(&cfg, &a), 0.01);
    }

    #[test]
    fn net_reward_arithmetic_and_bound() {
        let cfg = CuriosityConfig::default();
        let p = Tensor::vector(vec![0.1f64, 0.3]);
        let q = Tensor::vector(vec![0.0f64, 0.0]);
        let rec = net_reward(&cfg, 7, &p, &q, &[Action::Forward; 5]).unwrap();
        assert!((rec.raw_surprisal - 0.05).abs() < 1e-12);
        assert_eq!(rec.penalty, 0.01);
        assert!((rec.net - 0.04).abs() < 1e-12);
        // no repeat: net == raw
        let rec2 = net_reward(&cfg, 8, &p, &q, &[Action::Forward, Action::Left]).unwrap();
        assert_eq!(rec2.net, rec2.raw_surprisal);
        assert!(rec.net >= -cfg.penalty);
    }

    #[test]
    fn scripted_trace_matches_manual_evaluation() {
        // 20-step episode with alternating then repeated actions and a
        // constant prediction error of norm^2 = 0.02
        let cfg = CuriosityConfig::default();
        let pred = Tensor::vector(vec![0.1f64, 0.1]);
        let actual = Tensor::vector(vec![0.0f64, 0.0]);
        let mut history = Vec::new();
        let mut records = Vec::new();
        for step in 0..20 {
            let action = if step < 10 {
                Action::ALL[step % 2]
            } else {
                Action::Forward
            };
            history.push(action);
            records.push(net_reward(&cfg, step, &pred, &actual, &history).unwrap());
        }
        for (step, rec) in records.iter().enumerate() {
            assert!((rec.raw_surprisal - 0.01).abs() < 1e-12);
            // repeats of FORWARD start at step 10; the 5th repeat lands at
            // step 14
            let expected_penalty = if step >= 14 { 0.01 } else { 0.0 };
            assert_eq!(rec.penalty, expected_penalty, "step {step}");
            assert!((rec.net - (0.01 - expected_penalty)).abs() < 1e-12);
        }
    }

    #[test]
    fn dynamics_model_gradients_pass_grad_check() {
        let (fwd, inv) = models();
        let store = store_with_models(8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feat = random_feat(&mut rng);
        let next = random_feat(&mut rng);
        // forward model: check gradient w.r.t. its input row
        let input = concat_feat_action(&feat, Action::Left, 3);
        let err = crate::tensor::grad_check(
            |tape, x| {
                let pred = fwd.forward(tape, &store, x)?;
                let target = tape.constant(Tensor::matrix(1, F, next.data().to_vec())?);
                forward_loss_var(tape, pred, target)
            },
            &input,
        )
        .unwrap();
        assert!(err < 1e-4, "forward model err {err}");
        // inverse model through the fused cross-entropy
        let mut pair = feat.data().to_vec();
        pair.extend_from_slice(next.data());
        let pair = Tensor::matrix(1, 2 * F, pair).unwrap();
        let err = crate::tensor::grad_check(
            |tape, x| {
                let logits = inv.logits(tape, &store, x)?;
                tape.softmax_xent_sum(logits, &[Some(2)])
            },
            &pair,
        )
        .unwrap();
        assert!(err < 1e-4, "inverse model err {err}");
    }

    #[test]
    fn training_on_fixed_buffer_decreases_forward_loss() {
        // synthetic deterministic dynamics: next = rotate(feat) + action bias
        let (fwd, _) = models();
        let mut store = store_with_models(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let transitions: Vec<(Tensor<f64>, Action, Tensor<f64>)> = (0..64)
            .map(|_| {
                let f = random_feat(&mut rng);
                let a = Action::ALL[rng.gen_range(0..3)];
                let mut next: Vec<f64> = f.data().to_vec();
                next.rotate_right(1);
                next[0] += 0.3 * a.index() as f64;
                (f, a, Tensor::vector(next))
            })
            .collect();
        let mean_loss = |store: &ParamStore<f64>| -> f64 {
            transitions
                .iter()
                .map(|(f, a, n)| {
                    let pred = fwd.predict(store, f, *a).unwrap();
                    forward_loss(&pred, n).unwrap()
                })
                .sum::<f64>()
                / transitions.len() as f64
        };
        let before = mean_loss(&store);
        for _ in 0..200 {
            let mut tape = Tape::new();
            let rows: Vec<f64> = transitions
                .iter()
                .flat_map(|(f, a, _)| {
                    concat_feat_action(f, *a, 3).data().to_vec()
                })
                .collect();
            let input = tape
                .constant(Tensor::matrix(transitions.len(), F + 3, rows).unwrap());
            let pred = fwd.forward(&mut tape, &store, input).unwrap();
            let targets: Vec<f64> = transitions
                .iter()
                .flat_map(|(_, _, n)| n.data().to_vec())
                .collect();
            let target = tape
                .constant(Tensor::matrix(transitions.len(), F, targets).unwrap());
            let loss = forward_loss_var(&mut tape, pred, target).unwrap();
            let scaled = tape.scale(loss, 1.0 / transitions.len() as f64);
            let grads = tape.backward(scaled).unwrap();
            let mut pg = grads.into_param_grads(&tape);
            // only the forward model is on this tape; fill the rest with zeros
            for name in store.names().map(String::from).collect::<Vec<_>>() {
                pg.entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(store.value(&name).unwrap().shape()));
            }
            let pg: BTreeMap<String, Tensor<f64>> = pg;
            store.adam_step(&pg, 1e-3).unwrap();
        }
        let after = mean_loss(&store);
        assert!(after < before, "loss {before} -> {after}");
    }

    #[test]
    fn trained_models_distinguish_actions_and_recover_them() {
        // deterministic world in feature space; after joint training the
        // forward model separates actions and the inverse model beats chance
        let (fwd, inv) = models();
        let mut store = store_with_models(12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let dynamics = |f: &Tensor<f64>, a: Action| -> Tensor<f64> {
            let mut next: Vec<f64> = f.data().iter().map(|v| 0.9 * v).collect();
            next[a.index()] += 1.0;
            Tensor::vector(next)
        };
        let train: Vec<(Tensor<f64>, Action, Tensor<f64>)> = (0..96)
            .map(|_| {
                let f = random_feat(&mut rng);
                let a = Action::ALL[rng.gen_range(0..3)];
                let n = dynamics(&f, a);
                (f, a, n)
            })
            .collect();
        for _ in 0..300 {
            let mut tape = Tape::new();
            let fwd_rows: Vec<f64> = train
                .iter()
                .flat_map(|(f, a, _)| concat_feat_action(f, *a, 3).data().to_vec())
                .collect();
            let fwd_in = tape
                .constant(Tensor::matrix(train.len(), F + 3, fwd_rows).unwrap());
            let pred = fwd.forward(&mut tape, &store, fwd_in).unwrap();
            let tgt: Vec<f64> = train.iter().flat_map(|(_, _, n)| n.data().to_vec()).collect();
            let tgt = tape.constant(Tensor::matrix(train.len(), F, tgt).unwrap());
            let lf = forward_loss_var(&mut tape, pred, tgt).unwrap();
            let inv_rows: Vec<f64> = train
                .iter()
                .flat_map(|(f, _, n)| {
                    let mut row = f.data().to_vec();
                    row.extend_from_slice(n.data());
                    row
                })
                .collect();
            let inv_in = tape
                .constant(Tensor::matrix(train.len(), 2 * F, inv_rows).unwrap());
            let logits = inv.logits(&mut tape, &store, inv_in).unwrap();
            let targets: Vec<Option<usize>> =
                train.iter().map(|(_, a, _)| Some(a.index())).collect();
            let li = tape.softmax_xent_sum(logits, &targets).unwrap();
            let total = tape.add(lf, li).unwrap();
            let scaled = tape.scale(total, 1.0 / train.len() as f64);
            let grads = tape.backward(scaled).unwrap();
            let pg = grads.into_param_grads(&tape);
            store.adam_step(&pg, 1e-3).unwrap();
        }
        // forward model: different actions give different predictions
        let probe = random_feat(&mut rng);
        let pa = fwd.predict(&store, &probe, Action::Forward).unwrap();
        let pb = fwd.predict(&store, &probe, Action::Left).unwrap();
        let dist: f64 = pa
            .data()
            .iter()
            .zip(pb.data())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        assert!(dist > 1e-3, "action-conditioned predictions collide");
        // inverse model on held-out transitions
        let mut correct = 0;
        let held = 60;
        for _ in 0..held {
            let f = random_feat(&mut rng);
            let a = Action::ALL[rng.gen_range(0..3)];
            let n = dynamics(&f, a);
            let dist = inv.predict(&store, &f, &n).unwrap();
            let argmax = dist
                .data()
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
                .unwrap()
                .0;
            if argmax == a.index() {
                correct += 1;
            }
        }
        let acc = correct as f64 / held as f64;
        assert!(acc > 1.0 / 3.0, "held-out accuracy {acc}");
    }
}
