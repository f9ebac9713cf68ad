//! Step through acquisition episodes by hand: fixed view orders, the dense
//! JS reward after each acquisition and the terminal reward at Stop.
//!
//! cargo run --release --example env_episode -- [n_patients] [diag_epochs] [lambda]

use viewacq::diagnostics::{train_diagnostic, DiagnosticConfig};
use viewacq::envpolicy::{Action, Env, FixedOrder, RandomK};
use viewacq::synthstudy::{generate_dataset, split_dataset, view_name, GeneratorConfig};

fn main() -> viewacq::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(1000);
    let epochs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(5);
    let lambda: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.05);

    let studies = generate_dataset(&GeneratorConfig { n_patients: n, ..Default::default() })?;
    let split = split_dataset(&studies, (0.70, 0.15, 0.15), 0)?;
    let [train, val, test] = split.select(&studies)?;
    let (model, _) = train_diagnostic(&train, &val, &DiagnosticConfig { epochs, ..Default::default() })?;
    let env = Env::new(&model, lambda, vec![1.0; model.n_views])?;

    let study = test[0];
    println!("study {}: AS class {}, EF {:.2}", study.study_id, study.y_as_class, study.y_ef);
    let mut state = env.reset(study)?;
    println!("  start          classes {:?}", state.last.classes);
    for v in [4, 2, 1] {
        let tr = env.step(&state, Action::Select(v))?;
        println!("  + {:<12} classes {:?}  dense {:.4}", view_name(v), tr.info.classes, tr.dense_reward);
        state = tr.next_state;
    }
    let end = env.step(&state, Action::Stop)?;
    println!("  stop           sparse reward {:.3} (2 hits max, minus {lambda} per view)", end.sparse_reward);

    for (name, order) in [("PSAX-Ao then AP4", vec![4, 2]), ("all views", vec![0, 1, 2, 3, 4])] {
        let total: f64 = test
            .iter()
            .map(|s| env.run_episode(s, &mut FixedOrder::new(order.clone())).map(|t| t.sparse_reward))
            .sum::<viewacq::Result<f64>>()?;
        println!("{name:<18} mean terminal reward {:.3}", total / test.len() as f64);
    }
    let capped = env.clone().with_max_views(Some(2));
    let mut random = RandomK::new(2, 0);
    let total: f64 = test
        .iter()
        .map(|s| capped.run_episode(s, &mut random).map(|t| t.sparse_reward))
        .sum::<viewacq::Result<f64>>()?;
    println!("{:<18} mean terminal reward {:.3}", "random 2 views", total / test.len() as f64);
    Ok(())
}
