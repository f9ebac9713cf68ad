//! The acquisition MDP. A state is a partially unmasked study; actions pick
//! one more view or stop. Each acquisition earns the Jensen–Shannon shift of
//! the joint predictive PMF, and stopping earns the number of correct task
//! predictions minus the λ-weighted acquisition cost.

mod cache;
mod policy;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticModel;
use crate::error::{Error, Result};
use crate::probmodel::{js_divergence, GaussianJoint, JointPMF};
use crate::synthstudy::StudyRecord;

pub use cache::{Prediction, PredictionCache};
pub use policy::{FixedOrder, Policy, RandomK, StopPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Select(usize),
    Stop,
}

impl Action {
    /// Index into an `N + 1` action vector; Stop is last.
    pub fn index(self, n_views: usize) -> usize {
        match self {
            Action::Select(v) => v,
            Action::Stop => n_views,
        }
    }

    pub fn from_index(i: usize, n_views: usize) -> Self {
        if i >= n_views {
            Action::Stop
        } else {
            Action::Select(i)
        }
    }
}

#[derive(Debug, Clone)]
pub struct EnvState<'a> {
    pub study: &'a StudyRecord,
    pub mask: Vec<bool>,
    /// `N x D`, rows of unacquired views are zero.
    pub masked_embeddings: Vec<f64>,
    /// Views acquired so far.
    pub t: usize,
    /// Acquisition order.
    pub order: Vec<usize>,
    pub last: Prediction,
}

impl EnvState<'_> {
    pub fn n_views(&self) -> usize {
        self.mask.len()
    }

    /// Policy input: masked embeddings followed by the mask bits.
    pub fn features(&self) -> Vec<f64> {
        let mut f = self.masked_embeddings.clone();
        f.extend(self.mask.iter().map(|&m| f64::from(u8::from(m))));
        f
    }

    pub fn last_pmf(&self) -> &JointPMF {
        &self.last.pmf
    }
}

#[derive(Debug, Clone)]
pub struct Transition<'a> {
    pub next_state: EnvState<'a>,
    pub dense_reward: f64,
    pub sparse_reward: f64,
    pub done: bool,
    /// Prediction after the transition.
    pub info: Prediction,
}

/// Environment settings shared by every episode.
#[derive(Debug, Clone)]
pub struct Env<'a> {
    model: &'a DiagnosticModel,
    cache: Option<&'a PredictionCache>,
    pub lambda: f64,
    pub costs: Vec<f64>,
    /// Hard acquisition cap; `None` allows all N views.
    pub max_views: Option<usize>,
}

impl<'a> Env<'a> {
    pub fn new(model: &'a DiagnosticModel, lambda: f64, costs: Vec<f64>) -> Result<Self> {
        if !model.is_frozen() {
            return Err(Error::Config("the environment needs a frozen diagnostic model".into()));
        }
        if costs.len() != model.n_views {
            return Err(Error::Config(format!("{} costs for {} views", costs.len(), model.n_views)));
        }
        if !(lambda >= 0.0) || costs.iter().any(|c| !(*c >= 0.0)) {
            return Err(Error::Config("lambda and costs must be non-negative".into()));
        }
        Ok(Self { model, cache: None, lambda, costs, max_views: None })
    }

    /// Serve predictions from a precomputed cache (same model, so results
    /// are identical).
    pub fn with_cache(mut self, cache: &'a PredictionCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_max_views(mut self, k: Option<usize>) -> Self {
        self.max_views = k;
        self
    }

    pub fn n_views(&self) -> usize {
        self.costs.len()
    }

    pub fn model(&self) -> &'a DiagnosticModel {
        self.model
    }

    fn cap(&self) -> usize {
        self.max_views.map_or(self.n_views(), |k| k.min(self.n_views()))
    }

    /// Joint prediction for the current state, straight from the model.
    pub fn predict_joint(&self, state: &EnvState) -> Result<GaussianJoint> {
        self.model.predict(&state.masked_embeddings, &state.mask)
    }

    fn prediction(&self, study: &StudyRecord, mask: &[bool], masked: &[f64]) -> Result<Prediction> {
        if let Some(c) = self.cache {
            if let Some(p) = c.get(study.study_id, mask) {
                return Ok(p.clone());
            }
        }
        Ok(Prediction::new(self.model.predict(masked, mask)?, self.model.grid()))
    }

    pub fn reset<'s>(&self, study: &'s StudyRecord) -> Result<EnvState<'s>> {
        let n = self.n_views();
        if study.n_views != n || study.embeddings.len() != n * self.model.embed_dim {
            return Err(Error::Config(format!("study {} does not match the model's input shape", study.study_id)));
        }
        let mask = vec![false; n];
        let masked_embeddings = vec![0.0; study.embeddings.len()];
        let last = self.prediction(study, &mask, &masked_embeddings)?;
        Ok(EnvState { study, mask, masked_embeddings, t: 0, order: vec![], last })
    }

    /// Legal actions as an `N + 1` mask (Stop last, always legal).
    pub fn legal_actions(&self, state: &EnvState) -> Vec<bool> {
        let open = state.t < self.cap();
        let mut legal: Vec<bool> = state.mask.iter().map(|&m| open && !m).collect();
        legal.push(true);
        legal
    }

    /// Terminal reward of stopping in `state`.
    pub fn stop_reward(&self, state: &EnvState) -> f64 {
        let truth = (state.study.y_as_class, self.model.grid().ef_category(state.study.y_ef));
        crate::oracle::terminal_reward(state.last.classes, truth, &state.mask, self.lambda, &self.costs)
    }

    /// Applies one action. A Select once the acquisition budget is used up
    /// ends the episode with zero reward; a Select of an acquired view while
    /// budget remains is an invalid action.
    pub fn step<'s>(&self, state: &EnvState<'s>, action: Action) -> Result<Transition<'s>> {
        match action {
            Action::Stop => Ok(Transition {
                sparse_reward: self.stop_reward(state),
                next_state: state.clone(),
                dense_reward: 0.0,
                done: true,
                info: state.last.clone(),
            }),
            Action::Select(_) if state.t >= self.cap() => Ok(Transition {
                next_state: state.clone(),
                dense_reward: 0.0,
                sparse_reward: 0.0,
                done: true,
                info: state.last.clone(),
            }),
            Action::Select(v) => {
                if v >= self.n_views() {
                    return Err(Error::InvalidAction(format!("view {v} out of range")));
                }
                if state.mask[v] {
                    return Err(Error::InvalidAction(format!("view {v} already acquired")));
                }
                let mut next = state.clone();
                let d = self.model.embed_dim;
                next.mask[v] = true;
                next.masked_embeddings[v * d..(v + 1) * d].copy_from_slice(state.study.view(v));
                next.t += 1;
                next.order.push(v);
                next.last = self.prediction(next.study, &next.mask, &next.masked_embeddings)?;
                let dense = js_divergence(&state.last.pmf, &next.last.pmf)?;
                Ok(Transition {
                    info: next.last.clone(),
                    next_state: next,
                    dense_reward: dense,
                    sparse_reward: 0.0,
                    done: false,
                })
            }
        }
    }

    pub fn run_episode(&self, study: &StudyRecord, policy: &mut dyn Policy) -> Result<EpisodeTrace> {
        let mut state = self.reset(study)?;
        let mut steps = Vec::new();
        loop {
            let legal = self.legal_actions(&state);
            let action = policy.act(&state, &legal)?;
            let tr = self.step(&state, action)?;
            steps.push(TraceStep { mask: state.mask.clone(), action, dense_reward: tr.dense_reward });
            if tr.done {
                return Ok(EpisodeTrace::finish(self, tr.next_state, steps, tr.sparse_reward));
            }
            state = tr.next_state;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Mask before the action.
    pub mask: Vec<bool>,
    pub action: Action,
    pub dense_reward: f64,
}

/// One evaluated episode; serialises to one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub study_id: u64,
    pub steps: Vec<TraceStep>,
    pub sparse_reward: f64,
    pub order: Vec<usize>,
    pub final_mask: Vec<bool>,
    pub final_pmf: Vec<f64>,
    pub mu: [f64; 2],
    pub pred: (usize, usize),
    pub truth: (usize, usize),
    pub y_ef: f64,
}

impl EpisodeTrace {
    pub(crate) fn finish(env: &Env, state: EnvState, steps: Vec<TraceStep>, sparse_reward: f64) -> Self {
        let s = state.study;
        Self {
            study_id: s.study_id,
            steps,
            sparse_reward,
            final_pmf: state.last.pmf.probs.clone(),
            mu: state.last.joint.mu,
            pred: state.last.classes,
            truth: (s.y_as_class, env.model.grid().ef_category(s.y_ef)),
            y_ef: s.y_ef,
            order: state.order,
            final_mask: state.mask,
        }
    }

    pub fn n_acquired(&self) -> usize {
        self.order.len()
    }

    pub fn total_dense(&self) -> f64 {
        self.steps.iter().map(|s| s.dense_reward).sum()
    }
}

pub fn write_traces_jsonl<W: Write>(traces: &[EpisodeTrace], mut w: W) -> Result<()> {
    for t in traces {
        serde_json::to_writer(&mut w, t).map_err(|e| Error::Config(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_traces_jsonl(text: &str) -> Result<Vec<EpisodeTrace>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Format(crate::FormatError::Malformed(e.to_string()))))
        .collect()
}

/// Prediction for an explicit view subset of a study.
pub(crate) fn predict_subset(model: &DiagnosticModel, study: &StudyRecord, mask: &[bool]) -> Result<Prediction> {
    let d = study.embed_dim;
    let mut emb = study.embeddings.clone();
    for (v, &m) in mask.iter().enumerate() {
        if !m {
            emb[v * d..(v + 1) * d].fill(0.0);
        }
    }
    Ok(Prediction::new(model.predict(&emb, mask)?, model.grid()))
}

#[cfg(test)]
mod tests;
