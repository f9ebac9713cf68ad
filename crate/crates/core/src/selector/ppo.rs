use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PolicyNets, PpoConfig, RolloutBuffer};
use crate::error::{Error, Result};
use crate::numerics::{clip_grad_norm, Adam, Tape, Var};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Fraction of samples whose ratio left `[1 - clip, 1 + clip]`.
    pub clip_fraction: f64,
    pub minibatches: usize,
}

pub(crate) struct LossParts {
    pub total: Var,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clipped: usize,
}

/// Clipped surrogate + value MSE - entropy bonus on the samples `idx`.
pub(crate) fn ppo_loss(
    tape: &mut Tape,
    vars: &[Var],
    nets: &PolicyNets,
    buf: &RolloutBuffer,
    idx: &[usize],
    cfg: &PpoConfig,
) -> Result<LossParts> {
    let (d, a, b) = (buf.obs_dim, buf.n_actions, idx.len());
    let mut obs = Vec::with_capacity(b * d);
    let mut legal = Vec::with_capacity(b * a);
    for &i in idx {
        obs.extend_from_slice(&buf.obs[i * d..(i + 1) * d]);
        legal.extend_from_slice(&buf.legal[i * a..(i + 1) * a]);
    }
    let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
    let (old_lp, adv, ret) = (pick(&buf.log_probs), pick(&buf.advantages), pick(&buf.returns));
    let actions: Vec<usize> = idx.iter().map(|&i| buf.actions[i]).collect();

    let x = tape.constant(vec![b, d], obs)?;
    let logits = nets.actor.forward(tape, vars, x)?;
    let lp_all = tape.masked_log_softmax(logits, &legal)?;
    let lp = tape.pick(lp_all, &actions)?;
    let old = tape.constant(vec![b], old_lp)?;
    let diff = tape.sub(lp, old)?;
    let ratio = tape.exp(diff)?;
    let s1 = tape.mul_const(ratio, &adv)?;
    let clipped_ratio = tape.clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)?;
    let s2 = tape.mul_const(clipped_ratio, &adv)?;
    let surr = tape.minimum(s1, s2)?;
    let surr = tape.mean(surr)?;
    let policy = tape.scale(surr, -1.0)?;

    // masked entries of the log-softmax are 0, so p * log p vanishes there
    let p = tape.exp(lp_all)?;
    let plp = tape.mul(p, lp_all)?;
    let neg_ent = tape.sum_last(plp)?;
    let neg_ent = tape.mean(neg_ent)?;

    let v = nets.critic.forward(tape, vars, x)?;
    let v = tape.reshape(v, vec![b])?;
    let r = tape.constant(vec![b], ret)?;
    let err = tape.sub(v, r)?;
    let sq = tape.square(err)?;
    let vloss = tape.mean(sq)?;

    let vterm = tape.scale(vloss, cfg.value_coef)?;
    let eterm = tape.scale(neg_ent, cfg.entropy_coef)?;
    let total = tape.add(policy, vterm)?;
    let total = tape.add(total, eterm)?;
    let clipped = tape.value(ratio).iter().filter(|r| (**r - 1.0).abs() > cfg.clip).count();
    Ok(LossParts { total, policy: tape.item(policy), value: tape.item(vloss), entropy: -tape.item(neg_ent), clipped })
}

/// Total PPO loss of `nets` on the given samples (for inspection and
/// gradient checks).
pub fn ppo_loss_value(nets: &PolicyNets, buf: &RolloutBuffer, idx: &[usize]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = nets.params.bind(&mut tape);
    let parts = ppo_loss(&mut tape, &vars, nets, buf, idx, &nets.config)?;
    Ok(tape.item(parts.total))
}

/// Total PPO loss and its gradient with respect to the flattened
/// parameters (same order as [`PolicyNets::flat_params`]).
pub fn ppo_loss_and_grad(nets: &PolicyNets, buf: &RolloutBuffer, idx: &[usize]) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let vars = nets.params.bind(&mut tape);
    let parts = ppo_loss(&mut tape, &vars, nets, buf, idx, &nets.config)?;
    tape.backward(parts.total)?;
    let mut params = nets.params.clone();
    params.zero_grad();
    params.accumulate_grads(&tape, &vars)?;
    Ok((tape.item(parts.total), params.flat_grad()))
}

/// `epochs_per_update` shuffled passes of minibatch Adam over the buffer,
/// with global gradient-norm clipping.
pub fn ppo_update(
    buf: &RolloutBuffer,
    nets: &mut PolicyNets,
    opt: &mut Adam,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    if buf.is_empty() {
        return Err(Error::Empty("rollout buffer"));
    }
    if buf.advantages.len() != buf.len() {
        return Err(Error::Config("advantages have not been computed".into()));
    }
    let cfg = nets.config.clone();
    let mut stats = UpdateStats::default();
    let mut clipped = 0usize;
    let mut order: Vec<usize> = (0..buf.len()).collect();
    let mut tape = Tape::new();
    for _ in 0..cfg.epochs_per_update {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch) {
            tape.clear();
            let vars = nets.params.bind(&mut tape);
            let parts = ppo_loss(&mut tape, &vars, nets, buf, idx, &cfg)?;
            let value = tape.item(parts.total);
            if !value.is_finite() {
                return Err(Error::Diverged(format!(
                    "PPO loss {value} (policy {}, value {}, entropy {})",
                    parts.policy, parts.value, parts.entropy
                )));
            }
            tape.backward(parts.total)?;
            nets.params.zero_grad();
            nets.params.accumulate_grads(&tape, &vars)?;
            clip_grad_norm(&mut nets.params, cfg.max_grad_norm);
            opt.step(&mut nets.params);
            stats.policy_loss += parts.policy;
            stats.value_loss += parts.value;
            stats.entropy += parts.entropy;
            clipped += parts.clipped;
            stats.minibatches += 1;
        }
    }
    let m = stats.minibatches as f64;
    stats.policy_loss /= m;
    stats.value_loss /= m;
    stats.entropy /= m;
    stats.clip_fraction = clipped as f64 / (buf.len() * cfg.epochs_per_update) as f64;
    nets.params.zero_grad();
    Ok(stats)
}
