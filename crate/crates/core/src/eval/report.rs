use std::fmt::Write as _;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{balanced_accuracy, bmae, weighted_f1};
use crate::diagnostics::DiagnosticModel;
use crate::envpolicy::{predict_subset, EpisodeTrace, Prediction, PredictionCache};
use crate::error::{Error, Result};
use crate::oracle::{code_from_mask, mask_from_code};
use crate::probmodel::CategoryGrid;
use crate::synthstudy::StudyRecord;

/// Per-study result of some acquisition strategy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub pred: (usize, usize),
    pub truth: (usize, usize),
    pub mu_ef: f64,
    pub y_ef: f64,
    pub n_acquired: usize,
    pub reward: Option<f64>,
}

impl Outcome {
    fn from_prediction(p: &Prediction, s: &StudyRecord, grid: &CategoryGrid, n_acquired: usize) -> Self {
        Self {
            pred: p.classes,
            truth: (s.y_as_class, grid.ef_category(s.y_ef)),
            mu_ef: p.joint.mu[1],
            y_ef: s.y_ef,
            n_acquired,
            reward: None,
        }
    }

    pub fn from_trace(t: &EpisodeTrace) -> Self {
        Self {
            pred: t.pred,
            truth: t.truth,
            mu_ef: t.mu[1],
            y_ef: t.y_ef,
            n_acquired: t.n_acquired(),
            reward: Some(t.sparse_reward),
        }
    }
}

/// Percentages for bACC, F1 and the acquisition ratio; bMAE in EF points
/// (macro average of the within-true-category MAE); count in views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub as_bacc: f64,
    pub ef_bacc: f64,
    pub mean_bacc: f64,
    pub as_f1: f64,
    pub ef_f1: f64,
    pub ef_bmae: f64,
    pub acq_ratio: f64,
    pub acq_count: f64,
    pub mean_reward: Option<f64>,
    pub n_studies: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricsReport {
    pub fn from_outcomes(
        method: impl Into<String>,
        outcomes: &[Outcome],
        n_views: usize,
        grid: &CategoryGrid,
    ) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Empty("evaluation set"));
        }
        let (pa, ta): (Vec<usize>, Vec<usize>) = outcomes.iter().map(|o| (o.pred.0, o.truth.0)).unzip();
        let (pe, te): (Vec<usize>, Vec<usize>) = outcomes.iter().map(|o| (o.pred.1, o.truth.1)).unzip();
        let (mu, y): (Vec<f64>, Vec<f64>) = outcomes.iter().map(|o| (o.mu_ef, o.y_ef)).unzip();
        let as_bacc = 100.0 * balanced_accuracy(&pa, &ta, grid.n_as())?;
        let ef_bacc = 100.0 * balanced_accuracy(&pe, &te, grid.n_ef())?;
        let n = outcomes.len() as f64;
        let acq_count = outcomes.iter().map(|o| o.n_acquired as f64).sum::<f64>() / n;
        let rewards: Option<Vec<f64>> = outcomes.iter().map(|o| o.reward).collect();
        Ok(Self {
            method: method.into(),
            as_bacc,
            ef_bacc,
            mean_bacc: 0.5 * (as_bacc + ef_bacc),
            as_f1: 100.0 * weighted_f1(&pa, &ta, grid.n_as())?,
            ef_f1: 100.0 * weighted_f1(&pe, &te, grid.n_ef())?,
            ef_bmae: bmae(&mu, &y, |v| grid.ef_category(v))?,
            acq_ratio: 100.0 * acq_count / n_views as f64,
            acq_count,
            mean_reward: rewards.map(|r| r.iter().sum::<f64>() / n),
            n_studies: outcomes.len(),
            seed: 0,
            config_hash: String::new(),
        })
    }

    pub fn with_meta(mut self, seed: u64, config_hash: &str) -> Self {
        self.seed = seed;
        self.config_hash = config_hash.to_string();
        self
    }
}

/// Mean and (population) standard deviation of the numeric fields over
/// repeated runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: MetricsReport,
    pub std: MetricsReport,
    pub runs: Vec<MetricsReport>,
}

impl Summary {
    pub fn of(runs: Vec<MetricsReport>) -> Result<Self> {
        let first = runs.first().ok_or(Error::Empty("runs"))?.clone();
        let n = runs.len() as f64;
        let field = |f: &dyn Fn(&MetricsReport) -> f64| {
            let m = runs.iter().map(f).sum::<f64>() / n;
            let v = runs.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / n;
            (m, v.sqrt())
        };
        let mut mean = first.clone();
        let mut std = first;
        macro_rules! agg {
            ($($f:ident),*) => {$(
                let (m, s) = field(&|r| r.$f);
                mean.$f = m;
                std.$f = s;
            )*};
        }
        agg!(as_bacc, ef_bacc, mean_bacc, as_f1, ef_f1, ef_bmae, acq_ratio, acq_count);
        if runs.iter().all(|r| r.mean_reward.is_some()) {
            let (m, s) = field(&|r| r.mean_reward.unwrap_or(0.0));
            mean.mean_reward = Some(m);
            std.mean_reward = Some(s);
        }
        Ok(Self { mean, std, runs })
    }
}

fn prediction(
    model: &DiagnosticModel,
    cache: Option<&PredictionCache>,
    s: &StudyRecord,
    code: usize,
) -> Result<Prediction> {
    if let Some(p) = cache.and_then(|c| c.get_code(s.study_id, code)) {
        return Ok(p.clone());
    }
    predict_subset(model, s, &mask_from_code(code, s.n_views))
}

/// Outcomes when every study acquires exactly the views in `mask`.
pub fn eval_subset(
    studies: &[&StudyRecord],
    model: &DiagnosticModel,
    cache: Option<&PredictionCache>,
    mask: &[bool],
) -> Result<Vec<Outcome>> {
    let code = code_from_mask(mask);
    let k = mask.iter().filter(|&&m| m).count();
    studies
        .iter()
        .map(|s| Ok(Outcome::from_prediction(&prediction(model, cache, s, code)?, s, model.grid(), k)))
        .collect()
}

/// All views for every study.
pub fn eval_full(
    studies: &[&StudyRecord],
    model: &DiagnosticModel,
    cache: Option<&PredictionCache>,
) -> Result<MetricsReport> {
    let n = model.n_views;
    let out = eval_subset(studies, model, cache, &vec![true; n])?;
    MetricsReport::from_outcomes("full", &out, n, model.grid())
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::Config(format!("k must be in 1..={n}, got {k}")));
    }
    Ok(())
}

/// A fresh uniform random `k`-subset per study, repeated `n_runs` times
/// with seeds `seed, seed + 1, ..`.
pub fn eval_random_k(
    studies: &[&StudyRecord],
    model: &DiagnosticModel,
    cache: Option<&PredictionCache>,
    k: usize,
    n_runs: usize,
    seed: u64,
) -> Result<Summary> {
    let n = model.n_views;
    check_k(k, n)?;
    let mut runs = Vec::with_capacity(n_runs);
    for run in 0..n_runs as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed + run);
        let mut views: Vec<usize> = (0..n).collect();
        let mut out = Vec::with_capacity(studies.len());
        for s in studies {
            views.shuffle(&mut rng);
            let code: usize = views[..k].iter().map(|v| 1 << v).sum();
            out.push(Outcome::from_prediction(&prediction(model, cache, s, code)?, s, model.grid(), k));
        }
        runs.push(
            MetricsReport::from_outcomes(format!("random-{k}"), &out, n, model.grid())?.with_meta(seed + run, ""),
        );
    }
    Summary::of(runs)
}

/// Result of the population-wise baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopwiseResult {
    pub subset: Vec<usize>,
    /// Validation mean bACC (%) of every candidate subset, in enumeration order.
    pub candidates: Vec<(Vec<usize>, f64)>,
    pub report: MetricsReport,
}

/// Picks the `k`-subset with the best validation mean bACC (ties: the
/// lexicographically first) and applies it to every test study.
pub fn eval_popwise_k(
    val: &[&StudyRecord],
    test: &[&StudyRecord],
    model: &DiagnosticModel,
    cache: Option<&PredictionCache>,
    k: usize,
) -> Result<PopwiseResult> {
    let n = model.n_views;
    check_k(k, n)?;
    let mut candidates = Vec::new();
    for subset in k_subsets(n, k) {
        let mask: Vec<bool> = (0..n).map(|v| subset.contains(&v)).collect();
        let out = eval_subset(val, model, cache, &mask)?;
        let r = MetricsReport::from_outcomes("", &out, n, model.grid())?;
        candidates.push((subset, r.mean_bacc));
    }
    let mut best = 0;
    for (i, c) in candidates.iter().enumerate() {
        if c.1 > candidates[best].1 {
            best = i;
        }
    }
    let subset = candidates[best].0.clone();
    let mask: Vec<bool> = (0..n).map(|v| subset.contains(&v)).collect();
    let out = eval_subset(test, model, cache, &mask)?;
    let report = MetricsReport::from_outcomes(format!("popwise-{k}"), &out, n, model.grid())?;
    Ok(PopwiseResult { subset, candidates, report })
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for v in start..n {
            cur.push(v);
            rec(v + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = vec![];
    rec(0, n, k, &mut vec![], &mut out);
    out
}

/// Metrics from greedy-policy episodes.
pub fn report_from_traces(
    method: impl Into<String>,
    traces: &[EpisodeTrace],
    n_views: usize,
    grid: &CategoryGrid,
) -> Result<MetricsReport> {
    let out: Vec<Outcome> = traces.iter().map(Outcome::from_trace).collect();
    MetricsReport::from_outcomes(method, &out, n_views, grid)
}

/// One JSON object per line.
pub fn write_reports_jsonl<W: Write>(reports: &[MetricsReport], mut w: W) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::Config(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Fixed-width text table of the main columns.
pub fn render_table(rows: &[(String, &MetricsReport, Option<&MetricsReport>)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<18} {:>13} {:>13} {:>13} {:>13} {:>13} {:>9} {:>11} {:>11}",
        "method", "AS bACC", "EF bACC", "mean bACC", "AS F1", "EF F1", "EF bMAE", "ratio %", "count"
    );
    for (name, m, sd) in rows {
        let cell = |mean: f64, sd: Option<f64>| match sd {
            Some(sd) => format!("{mean:6.1}±{sd:<5.1}"),
            None => format!("{mean:6.1}"),
        };
        let _ = writeln!(
            s,
            "{:<18} {:>13} {:>13} {:>13} {:>13} {:>13} {:>9.2} {:>11} {:>11}",
            name,
            cell(m.as_bacc, sd.map(|x| x.as_bacc)),
            cell(m.ef_bacc, sd.map(|x| x.ef_bacc)),
            cell(m.mean_bacc, sd.map(|x| x.mean_bacc)),
            cell(m.as_f1, sd.map(|x| x.as_f1)),
            cell(m.ef_f1, sd.map(|x| x.ef_f1)),
            m.ef_bmae,
            cell(m.acq_ratio, sd.map(|x| x.acq_ratio)),
            format!("{:.2}", m.acq_count),
        );
    }
    let _ =
        writeln!(s, "(count = mean acquired views per study; bMAE in EF points, macro-averaged over true EF category)");
    s
}
