use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Action, EnvState};
use crate::error::{Error, Result};

/// Anything that can choose an action given the state and the legal-action
/// mask (`N + 1` entries, Stop last).
pub trait Policy {
    fn act(&mut self, state: &EnvState, legal: &[bool]) -> Result<Action>;
}

/// Stops immediately.
#[derive(Debug, Clone, Copy, Default)]
pub struct StopPolicy;

impl Policy for StopPolicy {
    fn act(&mut self, _: &EnvState, _: &[bool]) -> Result<Action> {
        Ok(Action::Stop)
    }
}

/// Acquires views in a fixed order. With `stop_after_order` it stops once
/// the order is exhausted; otherwise it keeps selecting (hitting the
/// exhaustion rule).
#[derive(Debug, Clone)]
pub struct FixedOrder {
    pub order: Vec<usize>,
    pub stop_after_order: bool,
}

impl FixedOrder {
    pub fn new(order: Vec<usize>) -> Self {
        Self { order, stop_after_order: true }
    }

    pub fn never_stop(order: Vec<usize>) -> Self {
        Self { order, stop_after_order: false }
    }
}

impl Policy for FixedOrder {
    fn act(&mut self, state: &EnvState, _: &[bool]) -> Result<Action> {
        match self.order.iter().find(|&&v| !state.mask.get(v).copied().unwrap_or(true)) {
            Some(&v) => Ok(Action::Select(v)),
            None if self.stop_after_order => Ok(Action::Stop),
            None => Ok(Action::Select(*self.order.last().ok_or(Error::Empty("fixed order"))?)),
        }
    }
}

/// Picks a fresh uniform random `k`-subset for every episode.
#[derive(Debug, Clone)]
pub struct RandomK {
    pub k: usize,
    rng: ChaCha8Rng,
    plan: Vec<usize>,
}

impl RandomK {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, rng: ChaCha8Rng::seed_from_u64(seed), plan: vec![] }
    }
}

impl Policy for RandomK {
    fn act(&mut self, state: &EnvState, _: &[bool]) -> Result<Action> {
        if state.t == 0 {
            let mut views: Vec<usize> = (0..state.n_views()).collect();
            views.shuffle(&mut self.rng);
            views.truncate(self.k);
            self.plan = views;
        }
        Ok(self.plan.get(state.t).map_or(Action::Stop, |&v| Action::Select(v)))
    }
}
