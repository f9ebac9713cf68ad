//! PPO actor–critic that learns when to acquire which view.

mod buffer;
mod ppo;
mod train;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binfmt::{decode_checkpoint, encode_checkpoint};
use crate::envpolicy::{Action, EnvState, Policy};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::numerics::ParamStore;

pub use buffer::{gae_advantages, RolloutBuffer};
pub use ppo::{ppo_loss_and_grad, ppo_loss_value, ppo_update, UpdateStats};
pub use train::{run_policy, train_selector, CheckpointMetric, SelectorLog};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PSEL";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    /// Width of both hidden layers of the actor and the critic.
    pub hidden: usize,
    pub clip: f64,
    pub epochs_per_update: usize,
    pub minibatch: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub max_grad_norm: f64,
    /// Training epochs (collect + update + validate).
    pub epochs: usize,
    /// Episodes collected per epoch; `None` = one per training study.
    pub episodes_per_epoch: Option<usize>,
    /// Multiplier on the dense JS reward before it joins the return.
    pub dense_coef: f64,
    pub checkpoint_metric: CheckpointMetric,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            clip: 0.2,
            epochs_per_update: 4,
            minibatch: 256,
            lr: 3e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            gae_lambda: 0.95,
            gamma: 1.0,
            max_grad_norm: 0.5,
            epochs: 50,
            episodes_per_epoch: None,
            dense_coef: 1.0,
            checkpoint_metric: CheckpointMetric::Bacc,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.clip, self.lr, self.gae_lambda, self.gamma, self.max_grad_norm];
        if positive.iter().any(|x| !(*x > 0.0))
            || self.hidden == 0
            || self.epochs_per_update == 0
            || self.minibatch == 0
        {
            return Err(Error::Config("PPO constants must be positive".into()));
        }
        if self.clip >= 1.0 || self.gae_lambda > 1.0 || self.gamma > 1.0 {
            return Err(Error::Config("need clip < 1, gae_lambda <= 1 and gamma <= 1".into()));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 || self.dense_coef < 0.0 {
            return Err(Error::Config("loss coefficients must be non-negative".into()));
        }
        if self.episodes_per_epoch == Some(0) {
            return Err(Error::Config("episodes_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

/// Actor (N + 1 logits) and critic (scalar), both 3-layer tanh MLPs over
/// the flattened masked embeddings followed by the mask bits.
#[derive(Debug, Clone)]
pub struct PolicyNets {
    pub config: PpoConfig,
    pub n_views: usize,
    pub embed_dim: usize,
    pub(crate) params: ParamStore,
    pub(crate) actor: Mlp,
    pub(crate) critic: Mlp,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    config: PpoConfig,
    n_views: usize,
    embed_dim: usize,
}

impl PolicyNets {
    pub fn new(config: PpoConfig, n_views: usize, embed_dim: usize) -> Result<Self> {
        config.validate()?;
        if n_views == 0 || embed_dim == 0 {
            return Err(Error::Config("need at least one view and one embedding dimension".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xac70_c217);
        let mut params = ParamStore::new();
        let (i, h) = (n_views * embed_dim + n_views, config.hidden);
        let actor = Mlp::new(&mut params, "actor", &[i, h, h, n_views + 1], 0.01, &mut rng);
        let critic = Mlp::new(&mut params, "critic", &[i, h, h, 1], 1.0, &mut rng);
        Ok(Self { config, n_views, embed_dim, params, actor, critic })
    }

    pub fn input_dim(&self) -> usize {
        self.n_views * (self.embed_dim + 1)
    }

    pub fn n_actions(&self) -> usize {
        self.n_views + 1
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params.flatten()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        Ok(self.params.load_flat(flat)?)
    }

    fn check(&self, features: &[f64]) -> Result<usize> {
        let i = self.input_dim();
        if features.len() % i != 0 {
            return Err(Error::Config(format!("feature length {} is not a multiple of {i}", features.len())));
        }
        Ok(features.len() / i)
    }

    /// Raw actor logits, `rows x (N + 1)`.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        let rows = self.check(features)?;
        Ok(self.actor.apply(&self.params, features, rows))
    }

    /// Critic values, one per row.
    pub fn values(&self, features: &[f64]) -> Result<Vec<f64>> {
        let rows = self.check(features)?;
        Ok(self.critic.apply(&self.params, features, rows))
    }

    /// Chooses an action for each row. With an RNG the action is sampled
    /// from the softmax over legal logits, otherwise the legal argmax is
    /// taken (lowest index on ties). Returns `(action index, log-prob,
    /// value)` per row.
    pub fn act_batch(
        &self,
        features: &[f64],
        legal: &[bool],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<(usize, f64, f64)>> {
        let a = self.n_actions();
        let logits = self.logits(features)?;
        let values = self.values(features)?;
        if legal.len() != logits.len() {
            return Err(Error::Config(format!("{} legal flags for {} logits", legal.len(), logits.len())));
        }
        let mut out = Vec::with_capacity(values.len());
        for (r, (row, mrow)) in logits.chunks(a).zip(legal.chunks(a)).enumerate() {
            let lp = masked_log_softmax(row, mrow)?;
            let choice = match rng.as_deref_mut() {
                Some(rng) => {
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = None;
                    for (i, l) in lp.iter().enumerate() {
                        if let Some(l) = l {
                            acc += l.exp();
                            pick = Some(i);
                            if u < acc {
                                break;
                            }
                        }
                    }
                    pick.expect("Stop is always legal")
                }
                None => {
                    let mut best = None::<(usize, f64)>;
                    for (i, l) in lp.iter().enumerate() {
                        if let Some(l) = *l {
                            if best.map_or(true, |(_, b)| l > b) {
                                best = Some((i, l));
                            }
                        }
                    }
                    best.expect("Stop is always legal").0
                }
            };
            out.push((choice, lp[choice].expect("chosen action is legal"), values[r]));
        }
        Ok(out)
    }

    /// Action, log-probability and value for one state.
    pub fn act(&self, state: &EnvState, legal: &[bool], rng: Option<&mut ChaCha8Rng>) -> Result<(Action, f64, f64)> {
        let (i, lp, v) = self.act_batch(&state.features(), legal, rng)?[0];
        Ok((Action::from_index(i, self.n_views), lp, v))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = CheckpointHeader { config: self.config.clone(), n_views: self.n_views, embed_dim: self.embed_dim };
        let json = serde_json::to_vec(&header).expect("config serialises");
        encode_checkpoint(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &json, &self.params.flatten())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (json, weights) = decode_checkpoint(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, bytes)?;
        let h: CheckpointHeader = serde_json::from_slice(&json)
            .map_err(|e| crate::FormatError::Malformed(format!("checkpoint header: {e}")))?;
        let mut nets = Self::new(h.config, h.n_views, h.embed_dim)?;
        if weights.len() != nets.params.num_scalars() {
            return Err(crate::FormatError::Malformed(format!(
                "{} weights for a network with {}",
                weights.len(),
                nets.params.num_scalars()
            ))
            .into());
        }
        nets.params.load_flat(&weights)?;
        Ok(nets)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Log-softmax over the legal entries; illegal entries are `None`.
fn masked_log_softmax(row: &[f64], legal: &[bool]) -> Result<Vec<Option<f64>>> {
    let max = row.iter().zip(legal).filter(|(_, &m)| m).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Diverged(format!("no finite legal logit in {row:?}")));
    }
    let lse = max + row.iter().zip(legal).filter(|(_, &m)| m).map(|(v, _)| (v - max).exp()).sum::<f64>().ln();
    Ok(row.iter().zip(legal).map(|(v, &m)| m.then_some(v - lse)).collect())
}

/// Wraps trained nets as a [`Policy`]; greedy unless given an RNG.
pub struct SelectorPolicy<'a> {
    pub nets: &'a PolicyNets,
    pub rng: Option<ChaCha8Rng>,
}

impl<'a> SelectorPolicy<'a> {
    pub fn greedy(nets: &'a PolicyNets) -> Self {
        Self { nets, rng: None }
    }

    pub fn sampling(nets: &'a PolicyNets, seed: u64) -> Self {
        Self { nets, rng: Some(ChaCha8Rng::seed_from_u64(seed)) }
    }
}

impl Policy for SelectorPolicy<'_> {
    fn act(&mut self, state: &EnvState, legal: &[bool]) -> Result<Action> {
        Ok(self.nets.act(state, legal, self.rng.as_mut())?.0)
    }
}

#[cfg(test)]
mod tests;
