use serde::{Deserialize, Serialize};

use super::report::{eval_full, report_from_traces, MetricsReport, Summary};
use crate::diagnostics::DiagnosticModel;
use crate::envpolicy::{Env, EpisodeTrace, PredictionCache};
use crate::error::Result;
use crate::selector::{run_policy, train_selector, PolicyNets, PpoConfig, SelectorLog};
use crate::synthstudy::StudyRecord;

/// Greedy episodes of `nets` on every test study.
pub fn eval_rl(test: &[&StudyRecord], env: &Env, nets: &PolicyNets) -> Result<(MetricsReport, Vec<EpisodeTrace>)> {
    let traces = run_policy(env, nets, test, None)?;
    let label = match env.max_views {
        Some(k) => format!("rl-k{k}-lambda{}", env.lambda),
        None => format!("rl-lambda{}", env.lambda),
    };
    let report = report_from_traces(label, &traces, env.n_views(), env.model().grid())?;
    Ok((report, traces))
}

/// Splits and frozen model shared by every selector run.
#[derive(Clone, Copy)]
pub struct SelectorSetup<'a> {
    pub train: &'a [&'a StudyRecord],
    pub val: &'a [&'a StudyRecord],
    pub test: &'a [&'a StudyRecord],
    pub model: &'a DiagnosticModel,
    pub cache: Option<&'a PredictionCache>,
    pub costs: &'a [f64],
    pub max_views: Option<usize>,
}

/// One trained-and-evaluated selector.
#[derive(Debug, Clone)]
pub struct SelectorRun {
    pub lambda: f64,
    pub seed: u64,
    pub nets: PolicyNets,
    pub log: SelectorLog,
    pub report: MetricsReport,
    pub traces: Vec<EpisodeTrace>,
}

impl SelectorSetup<'_> {
    pub fn env(&self, lambda: f64) -> Result<Env<'_>> {
        let env = Env::new(self.model, lambda, self.costs.to_vec())?.with_max_views(self.max_views);
        Ok(match self.cache {
            Some(c) => env.with_cache(c),
            None => env,
        })
    }

    pub fn run(&self, lambda: f64, seed: u64, cfg: &PpoConfig) -> Result<SelectorRun> {
        let env = self.env(lambda)?;
        let cfg = PpoConfig { seed, ..cfg.clone() };
        let (nets, log) = train_selector(self.train, self.val, &env, &cfg)?;
        let (report, traces) = eval_rl(self.test, &env, &nets)?;
        Ok(SelectorRun { lambda, seed, nets, log, report: report.with_meta(seed, ""), traces })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub summary: Summary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// All views, no selector.
    pub full: MetricsReport,
}

/// Trains one selector per `(λ, seed)` and summarises each λ over seeds.
/// `on_run` sees every finished run (for logging or checkpointing).
pub fn sweep_lambda(
    setup: &SelectorSetup,
    lambdas: &[f64],
    seeds: &[u64],
    cfg: &PpoConfig,
    mut on_run: impl FnMut(&SelectorRun) -> Result<()>,
) -> Result<SweepTable> {
    let mut rows = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut reports = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let run = setup.run(lambda, seed, cfg)?;
            on_run(&run)?;
            reports.push(run.report);
        }
        rows.push(SweepRow { lambda, summary: Summary::of(reports)? });
    }
    let full = eval_full(setup.test, setup.model, setup.cache)?;
    Ok(SweepTable { rows, full: MetricsReport { method: "w/o RL".into(), ..full } })
}

impl SweepTable {
    pub fn render(&self) -> String {
        let mut rows: Vec<(String, &MetricsReport, Option<&MetricsReport>)> =
            self.rows.iter().map(|r| (format!("lambda={}", r.lambda), &r.summary.mean, Some(&r.summary.std))).collect();
        rows.push(("w/o RL".into(), &self.full, None));
        let mut s = super::report::render_table(&rows);
        s.push_str("mean terminal reward per lambda:");
        for r in &self.rows {
            let m = r.summary.mean.mean_reward.unwrap_or(f64::NAN);
            let sd = r.summary.std.mean_reward.unwrap_or(f64::NAN);
            s.push_str(&format!(" {}: {m:.3}±{sd:.3}", r.lambda));
        }
        s.push('\n');
        s
    }
}
