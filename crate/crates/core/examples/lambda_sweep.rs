//! Sweep the acquisition cost λ: one selector per (λ, seed), summarised per
//! λ against the all-views model.
//!
//! cargo run --release --example lambda_sweep -- [n_patients] [diag_epochs] [ppo_epochs] [n_seeds]

use viewacq::diagnostics::{train_diagnostic, DiagnosticConfig};
use viewacq::envpolicy::PredictionCache;
use viewacq::eval::{sweep_lambda, SelectorSetup};
use viewacq::selector::PpoConfig;
use viewacq::synthstudy::{generate_dataset, split_dataset, GeneratorConfig, StudyRecord};

fn main() -> viewacq::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(2000);
    let diag_epochs = args.get(1).copied().unwrap_or(10);
    let ppo_epochs = args.get(2).copied().unwrap_or(10);
    let n_seeds = args.get(3).copied().unwrap_or(2) as u64;

    let studies = generate_dataset(&GeneratorConfig { n_patients: n, ..Default::default() })?;
    let split = split_dataset(&studies, (0.70, 0.15, 0.15), 0)?;
    let [train, val, test] = split.select(&studies)?;
    let (model, _) = train_diagnostic(&train, &val, &DiagnosticConfig { epochs: diag_epochs, ..Default::default() })?;
    let all: Vec<&StudyRecord> = studies.iter().collect();
    let cache = PredictionCache::build(&model, &all, 1)?;
    let costs = vec![1.0; model.n_views];
    let setup = SelectorSetup {
        train: &train,
        val: &val,
        test: &test,
        model: &model,
        cache: Some(&cache),
        costs: &costs,
        max_views: None,
    };
    let cfg = PpoConfig { epochs: ppo_epochs, ..Default::default() };
    let seeds: Vec<u64> = (0..n_seeds).collect();
    let table = sweep_lambda(&setup, &[0.001, 0.01, 0.05, 0.1, 0.2, 0.5], &seeds, &cfg, |run| {
        println!(
            "lambda {:<6} seed {}  bACC {:.1}  count {:.2}",
            run.lambda, run.seed, run.report.mean_bacc, run.report.acq_count
        );
        Ok(())
    })?;
    print!("{}", table.render());
    Ok(())
}
