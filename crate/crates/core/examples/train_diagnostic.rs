//! Train the diagnostic model on a synthetic cohort and report validation
//! bACC per epoch.
//!
//! cargo run --release --example train_diagnostic -- [n_patients] [epochs] [lr] [weight_decay] [batch_size] [dropout] [noise_std]

use std::time::Instant;

use viewacq::diagnostics::{train_diagnostic, DiagnosticConfig};
use viewacq::synthstudy::{generate_dataset, split_dataset, GeneratorConfig};

fn main() -> viewacq::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(10);

    let rest: Vec<String> = args.collect();
    let mut args = rest.iter().cloned();
    let mut gen = GeneratorConfig { n_patients: n, ..Default::default() };
    if let Some(noise) = rest.get(4).and_then(|a| a.parse().ok()) {
        gen.noise_std = noise;
    }
    let studies = generate_dataset(&gen)?;
    let split = split_dataset(&studies, (0.70, 0.15, 0.15), 0)?;
    let [train, val, test] = split.select(&studies)?;

    let mut cfg = DiagnosticConfig { epochs, ..Default::default() };
    if let Some(lr) = args.next().and_then(|a| a.parse().ok()) {
        cfg.lr = lr;
    }
    if let Some(wd) = args.next().and_then(|a| a.parse().ok()) {
        cfg.weight_decay = wd;
    }
    if let Some(bs) = args.next().and_then(|a| a.parse().ok()) {
        cfg.batch_size = bs;
    }
    if let Some(p) = args.next().and_then(|a| a.parse().ok()) {
        cfg.dropout = p;
    }
    let t0 = Instant::now();
    let (model, log) = train_diagnostic(&train, &val, &cfg)?;
    for (e, (l, b)) in log.epoch_loss.iter().zip(&log.val_bacc).enumerate() {
        println!("epoch {e:>3}  loss {l:>8.4}  val mean bACC {:.1}%", 100.0 * b);
    }
    println!(
        "best epoch {}  test mean bACC {:.1}%  ({:.1}s, {} parameters)",
        log.best_epoch,
        100.0 * model.full_study_bacc(&test)?,
        t0.elapsed().as_secs_f64(),
        model.num_params()
    );
    Ok(())
}
