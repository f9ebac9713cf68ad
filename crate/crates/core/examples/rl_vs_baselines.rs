//! Train a selector under a hard view budget and compare it with the random
//! and population-wise baselines at the same budget.
//!
//! cargo run --release --example rl_vs_baselines -- [n_patients] [diag_epochs] [ppo_epochs] [lambda] [k] [model_path]
//!
//! `k = 0` means no budget cap. If `model_path` exists the diagnostic model
//! is loaded from it, otherwise it is trained and saved there.

use std::path::Path;
use std::time::Instant;

use viewacq::diagnostics::{train_diagnostic, DiagnosticConfig, DiagnosticModel};
use viewacq::envpolicy::PredictionCache;
use viewacq::eval::{eval_full, eval_popwise_k, eval_random_k, render_table, SelectorSetup};
use viewacq::selector::PpoConfig;
use viewacq::synthstudy::{generate_dataset, split_dataset, GeneratorConfig, StudyRecord};

fn arg<T: std::str::FromStr>(args: &[String], i: usize, default: T) -> T {
    args.get(i).and_then(|a| a.parse().ok()).unwrap_or(default)
}

fn main() -> viewacq::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let n: usize = arg(&args, 0, 3000);
    let diag_epochs: usize = arg(&args, 1, 20);
    let ppo_epochs: usize = arg(&args, 2, 20);
    let lambda: f64 = arg(&args, 3, 0.01);
    let k: usize = arg(&args, 4, 2);
    let model_path = args.get(5).cloned();

    let studies = generate_dataset(&GeneratorConfig { n_patients: n, ..Default::default() })?;
    let split = split_dataset(&studies, (0.70, 0.15, 0.15), 0)?;
    let [train, val, test] = split.select(&studies)?;

    let t0 = Instant::now();
    let model = match &model_path {
        Some(p) if Path::new(p).exists() => DiagnosticModel::load(p)?,
        _ => {
            let cfg = DiagnosticConfig { epochs: diag_epochs, ..Default::default() };
            let (m, log) = train_diagnostic(&train, &val, &cfg)?;
            println!("diagnostic: best epoch {} of {diag_epochs}", log.best_epoch);
            if let Some(p) = &model_path {
                m.save(p)?;
            }
            m
        }
    };
    println!("diagnostic ready after {:.1}s", t0.elapsed().as_secs_f64());

    let t1 = Instant::now();
    let all: Vec<&StudyRecord> = studies.iter().collect();
    let cache = PredictionCache::build(&model, &all, 1)?;
    println!("prediction cache: {} studies in {:.1}s", cache.len(), t1.elapsed().as_secs_f64());

    let costs = vec![1.0; model.n_views];
    let setup = SelectorSetup {
        train: &train,
        val: &val,
        test: &test,
        model: &model,
        cache: Some(&cache),
        costs: &costs,
        max_views: (k > 0).then_some(k),
    };
    let t2 = Instant::now();
    let cfg = PpoConfig { epochs: ppo_epochs, ..Default::default() };
    let run = setup.run(lambda, 0, &cfg)?;
    println!("selector trained in {:.1}s (best epoch {})", t2.elapsed().as_secs_f64(), run.log.best_epoch);
    for (e, ((b, c), r)) in run.log.val_bacc.iter().zip(&run.log.val_count).zip(&run.log.val_reward).enumerate() {
        let u = &run.log.updates[e];
        println!(
            "  epoch {e:>3}  train return {:.3}  entropy {:.3}  val bACC {:.1}  count {c:.2}  reward {r:.3}",
            run.log.train_return[e],
            u.entropy,
            100.0 * b
        );
    }

    let full = eval_full(&test, &model, Some(&cache))?;
    let mut rows = vec![("full".to_string(), full.clone(), None)];
    if k > 0 {
        let random = eval_random_k(&test, &model, Some(&cache), k, 5, 0)?;
        let pop = eval_popwise_k(&val, &test, &model, Some(&cache), k)?;
        println!("pop-wise subset: {:?}", pop.subset);
        rows.push((format!("random-{k}"), random.mean.clone(), Some(random.std.clone())));
        rows.push((format!("popwise-{k}"), pop.report.clone(), None));
    }
    rows.push((format!("rl (lambda {lambda})"), run.report.clone(), None));
    let view: Vec<_> = rows.iter().map(|(a, b, c)| (a.clone(), b, c.as_ref())).collect();
    print!("{}", render_table(&view));
    Ok(())
}
