//! Generate a synthetic cohort, write it in the binary dataset format, read
//! it back and split it.
//!
//! cargo run --release --example generate_data -- [n_patients] [out_file]

use viewacq::synthstudy::{
    generate_dataset, load_dataset, save_dataset, split_dataset, view_name, Dataset, GeneratorConfig,
};

fn main() -> viewacq::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(2000);
    let path = args.next().unwrap_or_else(|| std::env::temp_dir().join("cohort.pacq").display().to_string());

    let cfg = GeneratorConfig { n_patients: n, ..Default::default() };
    let studies = generate_dataset(&cfg)?;
    save_dataset(&Dataset::new(cfg.clone(), studies.clone()), &path)?;
    let back = load_dataset(&path)?;
    assert_eq!(back.studies, studies);
    println!("{} studies x {} views x {} dims written to {path}", n, cfg.n_views, cfg.embed_dim);

    let mut as_counts = [0usize; 3];
    let mut ef_counts = [0usize; 3];
    for s in &studies {
        as_counts[s.y_as_class] += 1;
        ef_counts[s.ef_category()] += 1;
    }
    println!("AS classes {as_counts:?}, EF categories {ef_counts:?}");
    for (v, (wa, we)) in cfg.view_signal.iter().enumerate() {
        println!("  {:<8} AS weight {wa:.2}  EF weight {we:.2}", view_name(v));
    }

    let split = split_dataset(&studies, (0.70, 0.15, 0.15), 0)?;
    let [train, val, test] = split.select(&studies)?;
    println!("split: {} train / {} val / {} test", train.len(), val.len(), test.len());
    Ok(())
}
