use crate::error::{Error, Result};

/// On-policy transitions stored episode by episode.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub obs: Vec<f64>,
    pub legal: Vec<bool>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    /// Dense (scaled) plus terminal sparse reward of each step.
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(obs_dim: usize, n_actions: usize) -> Self {
        Self { obs_dim, n_actions, ..Default::default() }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn push(
        &mut self,
        obs: &[f64],
        legal: &[bool],
        action: usize,
        log_prob: f64,
        reward: f64,
        value: f64,
        done: bool,
    ) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        debug_assert_eq!(legal.len(), self.n_actions);
        self.obs.extend_from_slice(obs);
        self.legal.extend_from_slice(legal);
        self.actions.push(action);
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn clear(&mut self) {
        let (o, a) = (self.obs_dim, self.n_actions);
        *self = Self::new(o, a);
    }

    /// Fills `advantages` (GAE, normalised to zero mean and unit std when
    /// there is more than one step) and `returns` (raw advantage + value).
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64, normalize: bool) -> Result<()> {
        if self.dones.last() == Some(&false) {
            return Err(Error::Config("rollout ends mid-episode".into()));
        }
        let adv = gae_advantages(&self.rewards, &self.values, &self.dones, gamma, lambda);
        self.returns = adv.iter().zip(&self.values).map(|(a, v)| a + v).collect();
        self.advantages = adv;
        let n = self.advantages.len();
        if normalize && n > 1 {
            let mean = self.advantages.iter().sum::<f64>() / n as f64;
            let var = self.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt() + 1e-8;
            self.advantages.iter_mut().for_each(|a| *a = (*a - mean) / sd);
        }
        Ok(())
    }
}

/// Generalised advantage estimates; the value after a terminal step is 0.
pub fn gae_advantages(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = 0.0;
    for t in (0..n).rev() {
        if dones[t] {
            next_adv = 0.0;
            next_value = 0.0;
        }
        let delta = rewards[t] + gamma * next_value - values[t];
        next_adv = delta + gamma * lambda * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    adv
}
