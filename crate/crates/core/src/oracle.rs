//! Brute-force references for checking the learned components: the
//! conjugate Gaussian posterior of the generator, exhaustive subset search
//! and a sampling estimate of the discretised PMF.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::probmodel::{argmax, bin_probs, CategoryGrid, GaussianJoint, JointPMF};
use crate::synthstudy::{dot, GeneratorConfig, StudyRecord, World};

/// Gaussian posterior over `(y_as, y_ef)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesPosterior {
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl BayesPosterior {
    /// Predicted `(as_class, ef_category)` from the posterior marginals.
    pub fn predicted_classes(&self, grid: &CategoryGrid) -> (usize, usize) {
        let a = bin_probs(&grid.as_edges, self.mean[0], self.cov[0][0].sqrt());
        let e = bin_probs(&grid.ef_edges, self.mean[1], self.cov[1][1].sqrt());
        (argmax(&a), argmax(&e))
    }
}

fn inv2(m: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]]
}

/// Conjugate update of a Gaussian prior (matching the label prior's first two
/// moments) with the linear observations of the views in `subset`, using the
/// study's true view qualities.
pub fn bayes_posterior(
    study: &StudyRecord,
    subset: &[bool],
    cfg: &GeneratorConfig,
    world: &World,
) -> Result<BayesPosterior> {
    if study.n_views != cfg.n_views
        || study.embed_dim != cfg.embed_dim
        || subset.len() != cfg.n_views
        || world.a.len() != cfg.n_views
    {
        return Err(Error::Config(format!(
            "study is {}x{}, config {}x{}, subset has {} entries",
            study.n_views,
            study.embed_dim,
            cfg.n_views,
            cfg.embed_dim,
            subset.len()
        )));
    }
    let (m0, v0) = cfg.prior_moments();
    // information form
    let mut prec = [[1.0 / v0[0], 0.0], [0.0, 1.0 / v0[1]]];
    let mut h = [m0[0] / v0[0], m0[1] / v0[1]];
    let s2 = cfg.noise_std * cfg.noise_std;
    for v in (0..cfg.n_views).filter(|&v| subset[v]) {
        let q = study.qualities[v];
        let (wa, we) = cfg.view_signal[v];
        // x = q (wa A g(ya) + we B g(ye)) + eps, g(y) = 2y - 1, so
        // x = H y + c with columns H = 2q [wa A, we B] and c = -q (wa A + we B).
        let ca: Vec<f64> = world.a[v].iter().map(|x| 2.0 * q * wa * x).collect();
        let ce: Vec<f64> = world.b[v].iter().map(|x| 2.0 * q * we * x).collect();
        let resid: Vec<f64> =
            study.view(v).iter().enumerate().map(|(j, &x)| x + q * (wa * world.a[v][j] + we * world.b[v][j])).collect();
        prec[0][0] += dot(&ca, &ca) / s2;
        prec[0][1] += dot(&ca, &ce) / s2;
        prec[1][0] += dot(&ce, &ca) / s2;
        prec[1][1] += dot(&ce, &ce) / s2;
        h[0] += dot(&ca, &resid) / s2;
        h[1] += dot(&ce, &resid) / s2;
    }
    let cov = inv2(prec);
    let mean = [cov[0][0] * h[0] + cov[0][1] * h[1], cov[1][0] * h[0] + cov[1][1] * h[1]];
    Ok(BayesPosterior { mean, cov })
}

/// Sparse terminal reward for a prediction: correct-task count minus the
/// λ-weighted cost of the acquired views.
pub fn terminal_reward(
    pred: (usize, usize),
    truth: (usize, usize),
    subset: &[bool],
    lambda: f64,
    costs: &[f64],
) -> f64 {
    let hits = (pred.0 == truth.0) as u8 + (pred.1 == truth.1) as u8;
    let cost: f64 = subset.iter().zip(costs).filter(|(m, _)| **m).map(|(_, c)| c).sum();
    f64::from(hits) - lambda * cost
}

/// Bit `v` of `code` set means view `v` acquired.
pub fn mask_from_code(code: usize, n: usize) -> Vec<bool> {
    (0..n).map(|v| code >> v & 1 == 1).collect()
}

pub fn code_from_mask(mask: &[bool]) -> usize {
    mask.iter().enumerate().filter(|(_, &m)| m).map(|(v, _)| 1 << v).sum()
}

/// Enumeration order used for tie-breaking: by size, then lexicographically
/// by the sorted list of view indices.
fn subset_order(n: usize) -> Vec<usize> {
    let mut codes: Vec<usize> = (0..1usize << n).collect();
    let key = |c: &usize| {
        let views: Vec<usize> = (0..n).filter(|v| c >> v & 1 == 1).collect();
        (views.len(), views)
    };
    codes.sort_by_key(key);
    codes
}

/// Best subset given per-subset predicted classes (indexed by subset code).
pub fn hindsight_from_predictions(
    preds: &[(usize, usize)],
    truth: (usize, usize),
    lambda: f64,
    costs: &[f64],
) -> (Vec<bool>, f64) {
    let n = costs.len();
    debug_assert_eq!(preds.len(), 1 << n);
    let mut best: Option<(usize, f64)> = None;
    for code in subset_order(n) {
        let r = terminal_reward(preds[code], truth, &mask_from_code(code, n), lambda, costs);
        if best.map_or(true, |(_, b)| r > b) {
            best = Some((code, r));
        }
    }
    let (code, r) = best.expect("at least the empty subset");
    (mask_from_code(code, n), r)
}

/// Evaluates the terminal reward of every subset through the model and
/// returns the maximiser (ties: smaller subset, then lexicographic).
pub fn hindsight_best_subset(
    study: &StudyRecord,
    model: &crate::diagnostics::DiagnosticModel,
    lambda: f64,
    costs: &[f64],
) -> Result<(Vec<bool>, f64)> {
    let n = study.n_views;
    if n > 12 {
        return Err(Error::Config(format!("{n} views is too many to enumerate")));
    }
    if costs.len() != n {
        return Err(Error::Config(format!("{} costs for {n} views", costs.len())));
    }
    let codes = 1usize << n;
    let mut emb = Vec::with_capacity(codes * study.embeddings.len());
    let mut masks = Vec::with_capacity(codes * n);
    for code in 0..codes {
        let m = mask_from_code(code, n);
        for v in 0..n {
            let row = study.view(v);
            if m[v] {
                emb.extend_from_slice(row);
            } else {
                emb.extend(std::iter::repeat(0.0).take(row.len()));
            }
        }
        masks.extend(m);
    }
    let grid = model.grid();
    let preds: Vec<(usize, usize)> = model
        .predict_batch(&emb, &masks)?
        .iter()
        .map(|j| crate::probmodel::predicted_classes(&crate::probmodel::discretize(j, grid)))
        .collect();
    Ok(hindsight_from_predictions(&preds, (study.y_as_class, grid.ef_category(study.y_ef)), lambda, costs))
}

/// Empirical cell frequencies from `n_samples` draws of `joint`.
pub fn mc_pmf<R: Rng + ?Sized>(joint: &GaussianJoint, grid: &CategoryGrid, n_samples: usize, rng: &mut R) -> JointPMF {
    let (ka, ke) = (grid.n_as(), grid.n_ef());
    let mut counts = vec![0u64; ka * ke];
    for _ in 0..n_samples {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let ya = joint.mu[0] + joint.l11 * z1;
        let ye = joint.mu[1] + joint.l21 * z1 + joint.l22 * z2;
        counts[grid.as_class(ya) * ke + grid.ef_category(ye)] += 1;
    }
    let probs = counts.iter().map(|&c| c as f64 / n_samples as f64).collect();
    JointPMF { n_as: ka, n_ef: ke, probs }
}
