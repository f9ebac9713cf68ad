//! Train a selector and aggregate its test episodes into a pathway graph:
//! which views it acquires first, where studies stop, and how accurate the
//! studies stopping at each view set are. Writes Graphviz and JSON.
//!
//! cargo run --release --example pathways -- [n_patients] [diag_epochs] [ppo_epochs] [lambda] [out_prefix]

use viewacq::diagnostics::{train_diagnostic, DiagnosticConfig};
use viewacq::envpolicy::PredictionCache;
use viewacq::eval::{PathwayTree, SelectorSetup};
use viewacq::selector::PpoConfig;
use viewacq::synthstudy::{generate_dataset, split_dataset, view_name, GeneratorConfig, StudyRecord};

fn main() -> viewacq::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let num = |i: usize, d: f64| args.get(i).and_then(|a| a.parse().ok()).unwrap_or(d);
    let n = num(0, 2000.0) as usize;
    let lambda = num(3, 0.05);
    let prefix = args.get(4).cloned().unwrap_or_else(|| std::env::temp_dir().join("pathways").display().to_string());

    let studies = generate_dataset(&GeneratorConfig { n_patients: n, ..Default::default() })?;
    let split = split_dataset(&studies, (0.70, 0.15, 0.15), 0)?;
    let [train, val, test] = split.select(&studies)?;
    let diag = DiagnosticConfig { epochs: num(1, 10.0) as usize, ..Default::default() };
    let (model, _) = train_diagnostic(&train, &val, &diag)?;
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
    let run = setup.run(lambda, 0, &PpoConfig { epochs: num(2, 10.0) as usize, ..Default::default() })?;
    let grid = model.grid();
    let tree = PathwayTree::build(&run.traces, model.n_views, grid.n_as(), grid.n_ef())?;
    tree.check_integrity().map_err(viewacq::Error::Config)?;

    println!("{} test studies, mean {:.2} views", tree.n_studies, run.report.acq_count);
    for node in tree.nodes.iter().filter(|n| n.terminating > 0) {
        let names: Vec<String> = node.views.iter().map(|&v| view_name(v)).collect();
        println!(
            "  stop at {:<28} {:>5} studies  AS {:>5.1}  EF {:>5.1}",
            if names.is_empty() { "(nothing)".to_string() } else { names.join("+") },
            node.terminating,
            node.as_bacc.unwrap_or(f64::NAN),
            node.ef_bacc.unwrap_or(f64::NAN)
        );
    }
    std::fs::write(format!("{prefix}.dot"), tree.to_dot())?;
    std::fs::write(format!("{prefix}.json"), tree.to_json())?;
    println!("wrote {prefix}.dot and {prefix}.json");
    Ok(())
}
