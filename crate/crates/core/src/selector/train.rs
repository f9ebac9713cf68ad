use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ppo_update, PolicyNets, PpoConfig, RolloutBuffer, UpdateStats};
use crate::envpolicy::{Action, Env, EnvState, EpisodeTrace, TraceStep};
use crate::error::{Error, Result};
use crate::eval::metrics::balanced_accuracy;
use crate::numerics::{Adam, AdamConfig};
use crate::synthstudy::StudyRecord;

/// Validation score used to pick the returned checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointMetric {
    /// Mean bACC over AS and EF.
    Bacc,
    /// Mean terminal reward.
    Reward,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectorLog {
    pub updates: Vec<UpdateStats>,
    /// Mean return (dense + sparse) of the training episodes per epoch.
    pub train_return: Vec<f64>,
    pub val_bacc: Vec<f64>,
    pub val_reward: Vec<f64>,
    pub val_count: Vec<f64>,
    pub best_epoch: usize,
}

/// Runs one episode per study with all environments stepped in lockstep,
/// so each decision is a single batched network call. With an RNG actions
/// are sampled and every step is also written to `buffer`.
pub fn run_policy(
    env: &Env,
    nets: &PolicyNets,
    studies: &[&StudyRecord],
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<EpisodeTrace>> {
    Ok(rollout(env, nets, studies, rng, None)?.0)
}

fn rollout(
    env: &Env,
    nets: &PolicyNets,
    studies: &[&StudyRecord],
    mut rng: Option<&mut ChaCha8Rng>,
    mut buffer: Option<&mut RolloutBuffer>,
) -> Result<(Vec<EpisodeTrace>, f64)> {
    if env.n_views() != nets.n_views {
        return Err(Error::Config(format!("policy has {} views, environment {}", nets.n_views, env.n_views())));
    }
    let a = nets.n_actions();
    let dense_coef = nets.config.dense_coef;
    let mut states: Vec<EnvState> = studies.iter().map(|s| env.reset(s)).collect::<Result<_>>()?;
    let mut steps: Vec<Vec<TraceStep>> = vec![vec![]; studies.len()];
    // per-episode (obs, legal, action, log-prob, reward, value)
    type Rec = (Vec<f64>, Vec<bool>, usize, f64, f64, f64);
    let mut recs: Vec<Vec<Rec>> = vec![vec![]; studies.len()];
    let mut finished: Vec<Option<(EnvState, f64)>> = vec![None; studies.len()];
    let mut active: Vec<usize> = (0..studies.len()).collect();

    while !active.is_empty() {
        let mut feats = Vec::with_capacity(active.len() * nets.input_dim());
        let mut legal = Vec::with_capacity(active.len() * a);
        for &i in &active {
            feats.extend(states[i].features());
            legal.extend(env.legal_actions(&states[i]));
        }
        let choices = nets.act_batch(&feats, &legal, rng.as_deref_mut())?;
        let d = nets.input_dim();
        let mut still = Vec::with_capacity(active.len());
        for (j, &i) in active.iter().enumerate() {
            let (act, lp, value) = choices[j];
            let action = Action::from_index(act, nets.n_views);
            let tr = env.step(&states[i], action)?;
            steps[i].push(TraceStep { mask: states[i].mask.clone(), action, dense_reward: tr.dense_reward });
            if buffer.is_some() {
                let reward = dense_coef * tr.dense_reward + tr.sparse_reward;
                recs[i].push((
                    feats[j * d..(j + 1) * d].to_vec(),
                    legal[j * a..(j + 1) * a].to_vec(),
                    act,
                    lp,
                    reward,
                    value,
                ));
            }
            if tr.done {
                finished[i] = Some((tr.next_state, tr.sparse_reward));
            } else {
                states[i] = tr.next_state;
                still.push(i);
            }
        }
        active = still;
    }

    let mut total_return = 0.0;
    if let Some(buf) = buffer.as_deref_mut() {
        for ep in &recs {
            for (k, (obs, legal, act, lp, r, v)) in ep.iter().enumerate() {
                buf.push(obs, legal, *act, *lp, *r, *v, k + 1 == ep.len());
                total_return += r;
            }
        }
    }
    let traces = finished
        .into_iter()
        .zip(steps)
        .map(|(f, s)| {
            let (state, sparse) = f.expect("every episode terminates");
            EpisodeTrace::finish(env, state, s, sparse)
        })
        .collect();
    Ok((traces, total_return / studies.len().max(1) as f64))
}

/// Mean bACC over AS and EF of the terminal predictions.
pub(crate) fn traces_bacc(traces: &[EpisodeTrace], n_as: usize, n_ef: usize) -> Result<f64> {
    let (pa, ta): (Vec<usize>, Vec<usize>) = traces.iter().map(|t| (t.pred.0, t.truth.0)).unzip();
    let (pe, te): (Vec<usize>, Vec<usize>) = traces.iter().map(|t| (t.pred.1, t.truth.1)).unzip();
    Ok(0.5 * (balanced_accuracy(&pa, &ta, n_as)? + balanced_accuracy(&pe, &te, n_ef)?))
}

/// PPO against the frozen environment. Each epoch collects sampled
/// episodes, updates the nets, then scores the greedy policy on the
/// validation studies; the best-scoring epoch's weights are returned.
pub fn train_selector(
    train: &[&StudyRecord],
    val: &[&StudyRecord],
    env: &Env,
    cfg: &PpoConfig,
) -> Result<(PolicyNets, SelectorLog)> {
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let model = env.model();
    let mut nets = PolicyNets::new(cfg.clone(), model.n_views, model.embed_dim)?;
    let mut opt = Adam::new(&nets.params, AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let (n_as, n_ef) = (model.grid().n_as(), model.grid().n_ef());
    let per_epoch = cfg.episodes_per_epoch.unwrap_or(train.len());
    let mut pool: Vec<&StudyRecord> = train.to_vec();
    let mut cursor = pool.len();
    let mut log = SelectorLog::default();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut buf = RolloutBuffer::new(nets.input_dim(), nets.n_actions());

    for epoch in 0..cfg.epochs {
        let mut batch = Vec::with_capacity(per_epoch);
        while batch.len() < per_epoch {
            if cursor == pool.len() {
                pool.shuffle(&mut rng);
                cursor = 0;
            }
            let take = (per_epoch - batch.len()).min(pool.len() - cursor);
            batch.extend_from_slice(&pool[cursor..cursor + take]);
            cursor += take;
        }
        buf.clear();
        let (_, mean_return) = rollout(env, &nets, &batch, Some(&mut rng), Some(&mut buf))?;
        buf.compute_advantages(cfg.gamma, cfg.gae_lambda, true)?;
        let stats = ppo_update(&buf, &mut nets, &mut opt, &mut rng)?;
        log.updates.push(stats);
        log.train_return.push(mean_return);

        let traces = rollout(env, &nets, val, None, None)?.0;
        let bacc = traces_bacc(&traces, n_as, n_ef)?;
        let reward = traces.iter().map(|t| t.sparse_reward).sum::<f64>() / traces.len() as f64;
        let count = traces.iter().map(|t| t.n_acquired() as f64).sum::<f64>() / traces.len() as f64;
        log.val_bacc.push(bacc);
        log.val_reward.push(reward);
        log.val_count.push(count);
        let score = match cfg.checkpoint_metric {
            CheckpointMetric::Bacc => bacc,
            CheckpointMetric::Reward => reward,
        };
        if best.as_ref().map_or(true, |(b, _)| score > *b) {
            best = Some((score, nets.params.flatten()));
            log.best_epoch = epoch;
        }
    }
    if let Some((_, w)) = best {
        nets.params.load_flat(&w)?;
    }
    Ok((nets, log))
}
