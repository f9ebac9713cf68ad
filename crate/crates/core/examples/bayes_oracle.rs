//! Closed-form posterior accuracy of the generator for every view subset
//! size: the ceiling a learned diagnostic model can approach.
//!
//! cargo run --release --example bayes_oracle -- [n_patients] [noise_std]

use viewacq::eval::balanced_accuracy;
use viewacq::oracle::{bayes_posterior, mask_from_code};
use viewacq::probmodel::CategoryGrid;
use viewacq::synthstudy::{generate_dataset, view_name, GeneratorConfig, World};

fn main() -> viewacq::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(3000);
    let mut cfg = GeneratorConfig { n_patients: n, ..Default::default() };
    if let Some(noise) = args.next().and_then(|a| a.parse().ok()) {
        cfg.noise_std = noise;
    }
    let studies = generate_dataset(&cfg)?;
    let world = World::new(&cfg);
    let grid = CategoryGrid::default();
    let truth_as: Vec<usize> = studies.iter().map(|s| s.y_as_class).collect();
    let truth_ef: Vec<usize> = studies.iter().map(|s| s.ef_category()).collect();

    let nv = cfg.n_views;
    let mut rows = Vec::new();
    for code in 0..1usize << nv {
        let subset = mask_from_code(code, nv);
        let (mut pa, mut pe) = (Vec::new(), Vec::new());
        for s in &studies {
            let (a, e) = bayes_posterior(s, &subset, &cfg, &world)?.predicted_classes(&grid);
            pa.push(a);
            pe.push(e);
        }
        let ba = balanced_accuracy(&pa, &truth_as, 3)?;
        let be = balanced_accuracy(&pe, &truth_ef, 3)?;
        rows.push((subset, ba, be));
    }
    rows.sort_by(|a, b| {
        let size = |m: &[bool]| m.iter().filter(|&&x| x).count();
        size(&a.0).cmp(&size(&b.0)).then(b.1.total_cmp(&a.1))
    });
    println!("{:<28} {:>7} {:>7} {:>7}", "views", "AS", "EF", "mean");
    for (subset, ba, be) in rows {
        let names: Vec<String> = (0..nv).filter(|&v| subset[v]).map(view_name).collect();
        println!(
            "{:<28} {:>6.1}% {:>6.1}% {:>6.1}%",
            if names.is_empty() { "(none)".to_string() } else { names.join("+") },
            100.0 * ba,
            100.0 * be,
            50.0 * (ba + be)
        );
    }
    Ok(())
}
