//! Orchestration: the five pipeline commands as library functions, shared
//! by the command-line binary and the runnable examples. Commands compose
//! through files — checkpoints, vocabulary, episode logs — so each phase
//! can run and be inspected independently.

use std::collections::BTreeMap;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::agent::{
    sample_action, train, AgentError, ExplorationEnv, PolicyNet, UpdateRecord,
};
use crate::captioner::{
    generate_synthetic_dataset, regions_from_observation, train_ce, CaptionModel, CaptionerError,
    Vocabulary, BEAM_WIDTH,
};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::RunConfig;
use crate::curiosity::{net_reward, ForwardModel, InverseModel, RewardRecord};
use crate::episode_log::{EpisodeLog, LogError, LogRecord, VisibleCategory};
use crate::metrics::{
    coverage, diversity, surprisal_metric, MetricsCell, MetricsError, MetricsReport,
    SimilarityTable, AREA_THRESHOLDS,
};
use crate::perception::{preprocess, EmbeddingNet, FrameStack, PerceptionError};
use crate::speaker::{should_speak, SpeakerEvent, SpeakerPolicy};
use crate::world::{
    generate_world, render_observation, render_trajectory_map, step as world_step,
    visited_coverage, AgentPose, WorldError, CATEGORY_NAMES,
};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "CURIO_OUT";
/// Fallback output directory when the variable is unset.
pub const DEFAULT_OUT_DIR: &str = "out";

pub const EXPLORE_CKPT: &str = "explore.ckpt";
pub const CAPTION_CKPT: &str = "caption.ckpt";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const CURVES_FILE: &str = "curves.log";
/// Pixels per grid cell in rendered trajectory maps.
pub const MAP_SCALE: usize = 4;

/// Synthetic caption pairs generated for captioner training.
pub const CAPTION_DATASET_SIZE: usize = 5000;
/// Held-out pairs reserved from that corpus.
pub const CAPTION_HOLDOUT: usize = 500;
pub const CAPTION_EPOCHS: usize = 6;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Captioner(#[from] CaptionerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("missing vocabulary file {0}")]
    MissingVocabulary(String),
    #[error("no episode logs found in {0}")]
    EmptyLogDir(String),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
}

type Result<T> = std::result::Result<T, RunnerError>;

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| RunnerError::Io {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Default output directory: `$CURIO_OUT`, or `out/`.
pub fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Derives an independent seed stream from the master seed.
pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = DefaultHasher::new();
    master.hash(&mut h);
    tag.hash(&mut h);
    index.hash(&mut h);
    h.finish()
}

/// Builds the exploration models described by a config.
pub fn build_models(config: &RunConfig) -> (PolicyNet, ForwardModel, InverseModel) {
    let f = config.perception.feature_dim;
    let policy = PolicyNet::new(f, config.ppo.hidden);
    let forward = ForwardModel {
        feature_dim: f,
        n_actions: policy.n_actions,
        hidden: config.curiosity.hidden,
    };
    let inverse = InverseModel {
        feature_dim: f,
        n_actions: policy.n_actions,
        hidden: config.curiosity.hidden,
    };
    (policy, forward, inverse)
}

fn fresh_store(
    config: &RunConfig,
    models: &(PolicyNet, ForwardModel, InverseModel),
) -> Result<crate::tensor::ParamStore<f32>> {
    let mut store = crate::tensor::ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "init", 0));
    models.0.register(&mut store, &mut rng)?;
    models.1.register(&mut store, &mut rng)?;
    models.2.register(&mut store, &mut rng)?;
    Ok(store)
}

fn curve_line(r: &UpdateRecord) -> String {
    format!(
        "UPDATE update={} surprisal={} penalty={} net={} surrogate={} value_loss={} entropy={} forward_loss={} inverse_loss={} total={} coverage={}\n",
        r.update,
        r.mean_surprisal,
        r.mean_penalty,
        r.mean_net,
        r.losses.surrogate,
        r.losses.value_loss,
        r.losses.entropy,
        r.losses.forward_loss,
        r.losses.inverse_loss,
        r.losses.total,
        r.coverage
    )
}

/// Trains the exploration agent and writes `explore.ckpt` (policy +
/// dynamics + frozen embedding) and `curves.log` to the output directory.
pub fn cmd_explore_train(config: &RunConfig, out: &Path) -> Result<Vec<UpdateRecord>> {
    config.validate()?;
    ensure_dir(out)?;
    let map = generate_world(derive_seed(config.seed, "world", 0), &config.world)?;
    let embed = EmbeddingNet::new(config.perception);
    let mut env = ExplorationEnv::new(map, embed, config.curiosity, config.ppo.episode_len);
    env.motion = config.motion;
    let models = build_models(config);
    let mut store = fresh_store(config, &models)?;
    let mut curves = String::new();
    let records = train(
        &mut env,
        &models.0,
        &models.1,
        &models.2,
        &mut store,
        &config.ppo,
        derive_seed(config.seed, "explore", 0),
        |r, _| curves.push_str(&curve_line(r)),
    )?;
    let mut ckpt = Checkpoint::from_store(&store);
    for (name, t) in env.embed.to_checkpoint().tensors {
        ckpt.push(&name, t);
    }
    ckpt.save(&out.join(EXPLORE_CKPT))?;
    write_file(&out.join(CURVES_FILE), curves.as_bytes())?;
    Ok(records)
}

/// Trains the captioner on the synthetic corpus and writes
/// `caption.ckpt`, `vocab.tsv`, and an accuracy report.
pub fn cmd_caption_train(config: &RunConfig, out: &Path) -> Result<f64> {
    config.validate()?;
    ensure_dir(out)?;
    let vocab = Vocabulary::standard();
    let world_seeds: Vec<u64> = (0..8).map(|i| derive_seed(config.seed, "capworld", i)).collect();
    let data = generate_synthetic_dataset(
        &vocab,
        &world_seeds,
        CAPTION_DATASET_SIZE,
        derive_seed(config.seed, "capdata", 0),
    )?;
    let (train_set, holdout) = data.split_at(data.len() - CAPTION_HOLDOUT);
    let model = CaptionModel::new(config.captioner.clone(), vocab.len())?;
    let mut store = crate::tensor::ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "capinit", 0));
    model.register(&mut store, &mut rng)?;
    let report = train_ce(
        &model,
        &mut store,
        train_set,
        holdout,
        CAPTION_EPOCHS,
        derive_seed(config.seed, "captrain", 0),
    )?;
    Checkpoint::from_store(&store).save(&out.join(CAPTION_CKPT))?;
    write_file(&out.join(VOCAB_FILE), vocab.save().as_bytes())?;
    let mut text = format!("holdout_accuracy={}\n", report.holdout_accuracy);
    for (e, l) in report.epoch_losses.iter().enumerate() {
        text.push_str(&format!("epoch={} loss={}\n", e, l));
    }
    write_file(&out.join("caption_report.txt"), text.as_bytes())?;
    Ok(report.holdout_accuracy)
}

/// Loads the captioner artifacts written by [`cmd_caption_train`].
fn load_captioner(
    config: &RunConfig,
    dir: &Path,
) -> Result<(CaptionModel, crate::tensor::ParamStore<f32>, Vocabulary)> {
    let vocab_path = dir.join(VOCAB_FILE);
    if !vocab_path.exists() {
        return Err(RunnerError::MissingVocabulary(vocab_path.display().to_string()));
    }
    let vocab = Vocabulary::load(&read_file(&vocab_path)?)?;
    let store = Checkpoint::load(&dir.join(CAPTION_CKPT))?.into_store()?;
    let model = CaptionModel::new(config.captioner.clone(), vocab.len())?;
    Ok((model, store, vocab))
}

/// Runs episodes with the trained explorer and the speaker/captioner
/// active, writing one `episode_NNNN.log` per episode. Returns the
/// speaker events per episode.
pub fn cmd_run(
    config: &RunConfig,
    explore_dir: &Path,
    caption_dir: &Path,
    episodes: usize,
    out: &Path,
) -> Result<Vec<Vec<SpeakerEvent>>> {
    config.validate()?;
    let store = Checkpoint::load(&explore_dir.join(EXPLORE_CKPT))?.into_store()?;
    let (cap_model, cap_store, vocab) = load_captioner(config, caption_dir)?;
    let map = generate_world(derive_seed(config.seed, "world", 0), &config.world)?;
    let embed = EmbeddingNet::new(config.perception);
    let (policy, forward, _) = build_models(config);
    let mut all_events = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let (log, events) = run_episode(
            config,
            &map,
            &embed,
            &policy,
            &forward,
            &store,
            Some((&cap_model, &cap_store, &vocab)),
            map.random_start(derive_seed(config.seed, "start", episode as u64)),
            derive_seed(config.seed, "episode", episode as u64),
        )?;
        write_file(
            &out.join(format!("episode_{episode:04}.log")),
            log.render().as_bytes(),
        )?;
        all_events.push(events);
    }
    // colocate the vocabulary with the logs so evaluation is self-contained
    write_file(&out.join(VOCAB_FILE), vocab.save().as_bytes())?;
    Ok(all_events)
}

/// One episode with the speaker policy active; the captioner is optional
/// so exploration can be traced without caption artifacts.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    config: &RunConfig,
    map: &crate::world::WorldMap,
    embed: &EmbeddingNet,
    policy: &PolicyNet,
    forward: &ForwardModel,
    store: &crate::tensor::ParamStore<f32>,
    captioner: Option<(&CaptionModel, &crate::tensor::ParamStore<f32>, &Vocabulary)>,
    start: AgentPose,
    seed: u64,
) -> Result<(EpisodeLog, Vec<SpeakerEvent>)> {
    let speaker: &SpeakerPolicy = &config.speaker;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pose = start;
    let mut stack = FrameStack::from_first(preprocess(&render_observation(map, &pose), embed.config()));
    let mut history = Vec::new();
    let mut rewards: Vec<RewardRecord> = Vec::new();
    let mut positions = vec![pose];
    let mut log = EpisodeLog::new();
    let mut events: Vec<SpeakerEvent> = Vec::new();
    let mut last_speak: Option<usize> = None;
    let mut feat = embed.embed(&stack)?;
    for step in 0..config.ppo.episode_len {
        let (action, _, _) = sample_action(policy, store, &feat, &mut rng)?;
        let pred = forward.predict(store, &feat, action)?;
        pose = world_step(map, &pose, action, &config.motion);
        positions.push(pose);
        let obs = render_observation(map, &pose);
        stack.push(preprocess(&obs, embed.config()));
        history.push(action);
        let next = embed.embed(&stack)?;
        let reward = net_reward(&config.curiosity, step, &pred, &next, &history)?;
        log.push(LogRecord::Step {
            step,
            action,
            raw_surprisal: reward.raw_surprisal,
            penalty: reward.penalty,
            net: reward.net,
            pose,
        })?;
        rewards.push(reward);
        let in_refractory = last_speak
            .map(|s| speaker.refractory > 0 && step - s <= speaker.refractory)
            .unwrap_or(false);
        let (fire, value) = should_speak(speaker, &obs, &rewards);
        if fire && !in_refractory {
            last_speak = Some(step);
            let visible: Vec<VisibleCategory> = obs
                .visible
                .iter()
                .map(|v| VisibleCategory {
                    name: CATEGORY_NAMES[v.category as usize].to_string(),
                    area_frac: v.area_frac as f64,
                })
                .collect();
            log.push(LogRecord::Speak {
                step,
                policy: speaker.kind,
                threshold: speaker.threshold,
                value,
                visible,
            })?;
            let mut event = SpeakerEvent {
                step,
                kind: speaker.kind,
                threshold: speaker.threshold,
                value,
                caption: None,
            };
            if let Some((model, cap_store, vocab)) = captioner {
                let regions = regions_from_observation(&obs);
                let caption = model.beam_search(cap_store, vocab, &regions, BEAM_WIDTH)?;
                event.caption = Some(events.len());
                log.push(LogRecord::Caption {
                    step,
                    tokens: caption.tokens.clone(),
                    log_prob: caption.log_prob,
                    text: caption.text.clone(),
                })?;
            }
            events.push(event);
        }
        feat = next;
    }
    let mean_surprisal =
        rewards.iter().map(|r| r.raw_surprisal).sum::<f64>() / rewards.len().max(1) as f64;
    log.push(LogRecord::Summary {
        steps: config.ppo.episode_len,
        speaks: events.len(),
        visited_coverage: visited_coverage(map, &positions) as f64,
        mean_surprisal,
    })?;
    Ok((log, events))
}

/// Evaluates all episode logs in a directory into a metrics report.
pub fn cmd_eval(config: &RunConfig, log_dir: &Path) -> Result<MetricsReport> {
    config.validate()?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(log_dir)
        .map_err(|source| RunnerError::Io {
            path: log_dir.display().to_string(),
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "log")
                && p.file_stem()
                    .and_then(|s| s.to_str())
                    .is_some_and(|s| s.starts_with("episode"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(RunnerError::EmptyLogDir(log_dir.display().to_string()));
    }
    let vocab_path = log_dir.join(VOCAB_FILE);
    if !vocab_path.exists() {
        return Err(RunnerError::MissingVocabulary(vocab_path.display().to_string()));
    }
    let vocab = Vocabulary::load(&read_file(&vocab_path)?)?;
    let logs: Vec<EpisodeLog> = paths
        .iter()
        .map(|p| Ok(EpisodeLog::parse(&read_file(p)?)?))
        .collect::<Result<_>>()?;
    Ok(evaluate_logs(config, &vocab, &logs)?)
}

/// Pure evaluation over parsed logs, grouped by (policy, threshold).
pub fn evaluate_logs(
    config: &RunConfig,
    vocab: &Vocabulary,
    logs: &[EpisodeLog],
) -> std::result::Result<MetricsReport, MetricsError> {
    let table = SimilarityTable::new(config.metrics.similarity_seed);
    let episodes = logs.len().max(1) as f64;
    // (policy name, threshold bits) -> aggregates
    #[derive(Default)]
    struct Cell {
        events: usize,
        cov_sums: [f64; 4],
        cov_counts: [usize; 4],
        div_sum: f64,
        div_count: usize,
    }
    let mut cells: BTreeMap<(String, u64), (f64, Cell)> = BTreeMap::new();
    let mut episode_streams = Vec::new();
    for log in logs {
        episode_streams.push(log.surprisals());
        // captions paired with the speak at the same step
        let mut prev_nouns: BTreeMap<(String, u64), Vec<String>> = BTreeMap::new();
        for (i, record) in log.records().iter().enumerate() {
            let LogRecord::Speak {
                step,
                policy,
                threshold,
                visible,
            ..
            } = record
            else {
                continue;
            };
            let key = (policy.name().to_string(), threshold.to_bits());
            let entry = &mut cells.entry(key.clone()).or_insert((*threshold, Cell::default())).1;
            entry.events += 1;
            let caption = log.records().get(i + 1).and_then(|r| match r {
                LogRecord::Caption {
                    step: s, tokens, ..
                } if s == step => Some(tokens.clone()),
                _ => None,
            });
            let Some(tokens) = caption else { continue };
            let nouns = vocab.nouns(&tokens);
            for (k, &min_area) in AREA_THRESHOLDS.iter().enumerate() {
                let cats: Vec<String> = visible
                    .iter()
                    .filter(|v| v.area_frac > min_area)
                    .map(|v| v.name.clone())
                    .collect();
                entry.cov_sums[k] += coverage(&nouns, &cats, &table)?;
                entry.cov_counts[k] += 1;
            }
            if let Some(prev) = prev_nouns.get(&key) {
                entry.div_sum += diversity(prev, &nouns, &table)?;
                entry.div_count += 1;
            }
            prev_nouns.insert(key, nouns);
        }
    }
    let surprisal = if episode_streams.iter().all(|s| s.len() >= crate::metrics::SURPRISAL_WINDOW)
        && !episode_streams.is_empty()
    {
        surprisal_metric(&episode_streams)?
    } else {
        0.0
    };
    let mut report = MetricsReport::default();
    for ((policy, _), (threshold, cell)) in cells {
        let mut cov = [0.0f64; 4];
        for k in 0..4 {
            cov[k] = if cell.cov_counts[k] > 0 {
                cell.cov_sums[k] / cell.cov_counts[k] as f64
            } else {
                0.0
            };
        }
        report.cells.push(MetricsCell {
            policy,
            threshold,
            loquacity: cell.events as f64 / episodes,
            cov,
            div: if cell.div_count > 0 {
                cell.div_sum / cell.div_count as f64
            } else {
                0.0
            },
            surprisal,
        });
    }
    Ok(report)
}

/// Re-renders the trajectory of one episode log as a P5 graymap.
pub fn cmd_render_map(config: &RunConfig, log_path: &Path, out_path: &Path) -> Result<()> {
    config.validate()?;
    let log = EpisodeLog::parse(&read_file(log_path)?)?;
    let map = generate_world(derive_seed(config.seed, "world", 0), &config.world)?;
    let poses: Vec<AgentPose> = log
        .records()
        .iter()
        .filter_map(|r| match r {
            LogRecord::Step { pose, .. } => Some(*pose),
            _ => None,
        })
        .collect();
    let image = render_trajectory_map(&map, &poses, MAP_SCALE);
    write_file(out_path, &image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::speaker::PolicyKind;

    fn quick_config() -> RunConfig {
        let mut config = RunConfig::default();
        config.seed = 41;
        config.perception.frame_h = 16;
        config.perception.frame_w = 16;
        config.perception.feature_dim = 32;
        config.ppo.updates = 2;
        config.ppo.rollout = 32;
        config.ppo.minibatch = 16;
        config.ppo.hidden = 32;
        config.ppo.episode_len = 60;
        config.curiosity.hidden = 32;
        config.captioner.d = 16;
        config.captioner.heads = 2;
        config.captioner.layers = 1;
        config.captioner.ffn = 32;
        config.speaker = SpeakerPolicy::new(PolicyKind::Object, 0.0);
        config
    }

    #[test]
    fn derive_seed_is_stable_and_stream_separated() {
        assert_eq!(derive_seed(1, "a", 0), derive_seed(1, "a", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "a", 1));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(1, "b", 0));
        assert_ne!(derive_seed(1, "a", 0), derive_seed(2, "a", 0));
    }

    #[test]
    fn explore_train_writes_checkpoint_and_curves() {
        let dir = tempfile::tempdir().unwrap();
        let config = quick_config();
        let records = cmd_explore_train(&config, dir.path()).unwrap();
        assert_eq!(records.len(), 2);
        assert!(dir.path().join(EXPLORE_CKPT).exists());
        let curves = std::fs::read_to_string(dir.path().join(CURVES_FILE)).unwrap();
        assert_eq!(curves.lines().count(), 2);
        assert!(curves.starts_with("UPDATE update=0 "));
        // checkpoint carries the frozen embedding under the frozen prefix
        let ckpt = Checkpoint::load(&dir.path().join(EXPLORE_CKPT)).unwrap();
        let store = ckpt.into_store().unwrap();
        assert!(store.get("embed.conv1.w").unwrap().frozen);
        assert!(!store.get("policy.trunk.w").unwrap().frozen);
    }

    #[test]
    fn run_episode_logs_speaks_and_captions_on_forced_trigger() {
        let config = quick_config();
        let map = generate_world(derive_seed(config.seed, "world", 0), &config.world).unwrap();
        let embed = EmbeddingNet::new(config.perception);
        let models = build_models(&config);
        let store = fresh_store(&config, &models).unwrap();
        // zero-threshold DEPTH fires everywhere the scene has any depth
        let mut cfg = config.clone();
        cfg.speaker = SpeakerPolicy::new(PolicyKind::Depth, 0.0);
        let (log, events) = run_episode(
            &cfg,
            &map,
            &embed,
            &models.0,
            &models.1,
            &store,
            None,
            map.default_start(),
            7,
        )
        .unwrap();
        assert!(!events.is_empty());
        assert_eq!(log.steps().count(), cfg.ppo.episode_len);
        assert_eq!(log.speaks().count(), events.len());
        // stored trigger values satisfy the predicate (log-replay audit)
        for r in log.speaks() {
            let LogRecord::Speak { value, threshold, .. } = r else {
                unreachable!()
            };
            assert!(value > threshold);
        }
        let text = log.render();
        assert_eq!(EpisodeLog::parse(&text).unwrap().render(), text);
    }

    #[test]
    fn eval_errors_on_empty_dir_and_missing_vocab() {
        let config = quick_config();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            cmd_eval(&config, dir.path()),
            Err(RunnerError::EmptyLogDir(_))
        ));
        std::fs::write(dir.path().join("episode_0000.log"), "SUMMARY steps=0 speaks=0 visited_coverage=0 mean_surprisal=0\n").unwrap();
        assert!(matches!(
            cmd_eval(&config, dir.path()),
            Err(RunnerError::MissingVocabulary(_))
        ));
    }

    #[test]
    fn run_then_eval_roundtrip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = quick_config();
        config.ppo.episode_len = 50;
        config.speaker = SpeakerPolicy::new(PolicyKind::Object, 1.0);
        // explorer checkpoint from untrained models
        let models = build_models(&config);
        let store = fresh_store(&config, &models).unwrap();
        let embed = EmbeddingNet::new(config.perception);
        let mut ckpt = Checkpoint::from_store(&store);
        for (name, t) in embed.to_checkpoint().tensors {
            ckpt.push(&name, t);
        }
        ckpt.save(&dir.path().join(EXPLORE_CKPT)).unwrap();
        // caption artifacts from an untrained model
        let vocab = Vocabulary::standard();
        let cap = CaptionModel::new(config.captioner.clone(), vocab.len()).unwrap();
        let mut cap_store = crate::tensor::ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        cap.register(&mut cap_store, &mut rng).unwrap();
        Checkpoint::from_store(&cap_store)
            .save(&dir.path().join(CAPTION_CKPT))
            .unwrap();
        write_file(&dir.path().join(VOCAB_FILE), vocab.save().as_bytes()).unwrap();

        let out = dir.path().join("run");
        let events = cmd_run(&config, dir.path(), dir.path(), 2, &out).unwrap();
        assert_eq!(events.len(), 2);
        assert!(out.join("episode_0000.log").exists());
        assert!(out.join("episode_0001.log").exists());
        assert!(out.join(VOCAB_FILE).exists());
        let report = cmd_eval(&config, &out).unwrap();
        let speaks: usize = events.iter().map(Vec::len).sum();
        if speaks > 0 {
            assert!(!report.cells.is_empty());
            let total_events: f64 = report.cells.iter().map(|c| c.loquacity * 2.0).sum();
            assert!((total_events - speaks as f64).abs() < 1e-9);
        }
        // determinism: a second identical run is byte-identical
        let out2 = dir.path().join("run2");
        cmd_run(&config, dir.path(), dir.path(), 2, &out2).unwrap();
        for name in ["episode_0000.log", "episode_0001.log"] {
            assert_eq!(
                std::fs::read(out.join(name)).unwrap(),
                std::fs::read(out2.join(name)).unwrap()
            );
        }
    }

    #[test]
    fn missing_caption_artifacts_are_dependency_errors() {
        let config = quick_config();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_captioner(&config, dir.path()),
            Err(RunnerError::MissingVocabulary(_))
        ));
    }
}
