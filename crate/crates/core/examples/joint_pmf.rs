//! Discretise bivariate Gaussian predictions onto the 3 x 3 severity grid,
//! compare against Monte Carlo, and measure the JS divergence between two
//! predictions.
//!
//! cargo run --release --example joint_pmf -- [mc_samples]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use viewacq::diagnostics::GaussianJoint;
use viewacq::oracle::mc_pmf;
use viewacq::probmodel::{discretize, js_divergence, marginals, predicted_classes, CategoryGrid, JointPMF};

fn show(name: &str, p: &JointPMF) {
    println!("{name}  (rows AS, columns EF)");
    for i in 0..p.n_as {
        let row: Vec<String> = (0..p.n_ef).map(|j| format!("{:.4}", p.get(i, j))).collect();
        println!("  {}", row.join("  "));
    }
}

fn main() -> viewacq::Result<()> {
    let samples: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(1_000_000);
    let grid = CategoryGrid::default();
    let vague = GaussianJoint::from_moments([0.5, 0.5], [0.3, 0.25], 0.0)?;
    let sharp = GaussianJoint::from_moments([0.8, 0.35], [0.08, 0.06], -0.4)?;

    let p = discretize(&vague, &grid);
    let q = discretize(&sharp, &grid);
    show("vague prediction", &p);
    show("sharp prediction", &q);
    let (ma, me) = marginals(&q);
    println!("sharp marginals: AS {ma:.3?}  EF {me:.3?}  classes {:?}", predicted_classes(&q));

    let mc = mc_pmf(&sharp, &grid, samples, &mut ChaCha8Rng::seed_from_u64(0));
    let gap = q.probs.iter().zip(&mc.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("max |exact - MC| over cells with {samples} samples: {gap:.2e}");
    println!("JS(vague, sharp) = {:.4} nats (ln 2 = {:.4})", js_divergence(&p, &q)?, std::f64::consts::LN_2);
    Ok(())
}
