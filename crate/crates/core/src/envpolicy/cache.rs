use std::collections::HashMap;

use crate::diagnostics::DiagnosticModel;
use crate::error::{Error, Result};
use crate::oracle::mask_from_code;
use crate::probmodel::{discretize, predicted_classes, CategoryGrid, GaussianJoint, JointPMF};
use crate::synthstudy::StudyRecord;

/// A frozen-model prediction with its discretisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub joint: GaussianJoint,
    pub pmf: JointPMF,
    /// `(as_class, ef_category)` from the PMF marginals.
    pub classes: (usize, usize),
}

impl Prediction {
    pub fn new(joint: GaussianJoint, grid: &CategoryGrid) -> Self {
        let pmf = discretize(&joint, grid);
        let classes = predicted_classes(&pmf);
        Self { joint, pmf, classes }
    }
}

/// Predictions for every view subset of every study, indexed by subset code
/// (bit `v` set = view `v` acquired). The model is frozen, so lookups are
/// interchangeable with fresh inference.
#[derive(Debug, Clone)]
pub struct PredictionCache {
    n_views: usize,
    index: HashMap<u64, usize>,
    preds: Vec<Prediction>,
}

impl PredictionCache {
    /// Runs the model on all `2^N` subsets of each study, splitting the work
    /// over `threads` workers. Results do not depend on the thread count.
    pub fn build(model: &DiagnosticModel, studies: &[&StudyRecord], threads: usize) -> Result<Self> {
        let n = model.n_views;
        if n > 12 {
            return Err(Error::Config(format!("{n} views is too many to enumerate")));
        }
        let threads = threads.max(1);
        let per = studies.len().div_ceil(threads).max(1);
        let chunks: Vec<Result<Vec<Prediction>>> = std::thread::scope(|scope| {
            let handles: Vec<_> =
                studies.chunks(per).map(|chunk| scope.spawn(move || predict_all_subsets(model, chunk))).collect();
            handles.into_iter().map(|h| h.join().expect("cache worker panicked")).collect()
        });
        let mut preds = Vec::with_capacity(studies.len() << n);
        for c in chunks {
            preds.extend(c?);
        }
        let index = studies.iter().enumerate().map(|(i, s)| (s.study_id, i)).collect();
        Ok(Self { n_views: n, index, preds })
    }

    pub fn n_views(&self) -> usize {
        self.n_views
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, study_id: u64) -> bool {
        self.index.contains_key(&study_id)
    }

    pub fn get_code(&self, study_id: u64, code: usize) -> Option<&Prediction> {
        let row = *self.index.get(&study_id)?;
        self.preds.get((row << self.n_views) + code)
    }

    pub fn get(&self, study_id: u64, mask: &[bool]) -> Option<&Prediction> {
        if mask.len() != self.n_views {
            return None;
        }
        self.get_code(study_id, crate::oracle::code_from_mask(mask))
    }

    /// All `2^N` predictions of one study.
    pub fn study(&self, study_id: u64) -> Option<&[Prediction]> {
        let row = *self.index.get(&study_id)?;
        Some(&self.preds[row << self.n_views..(row + 1) << self.n_views])
    }
}

fn predict_all_subsets(model: &DiagnosticModel, studies: &[&StudyRecord]) -> Result<Vec<Prediction>> {
    let n = model.n_views;
    let codes = 1usize << n;
    let masks_one: Vec<Vec<bool>> = (0..codes).map(|c| mask_from_code(c, n)).collect();
    let mut out = Vec::with_capacity(studies.len() * codes);
    // 8 studies x 32 subsets per model call
    for group in studies.chunks(8) {
        let mut emb = Vec::with_capacity(group.len() * codes * n * model.embed_dim);
        let mut masks = Vec::with_capacity(group.len() * codes * n);
        for s in group {
            for m in &masks_one {
                for (v, &on) in m.iter().enumerate() {
                    if on {
                        emb.extend_from_slice(s.view(v));
                    } else {
                        emb.extend(std::iter::repeat(0.0).take(s.embed_dim));
                    }
                }
                masks.extend_from_slice(m);
            }
        }
        for j in model.predict_batch(&emb, &masks)? {
            out.push(Prediction::new(j, model.grid()));
        }
    }
    Ok(out)
}
