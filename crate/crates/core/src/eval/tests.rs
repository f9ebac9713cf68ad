use proptest::prelude::*;

use super::*;
use crate::diagnostics::{DiagnosticConfig, DiagnosticModel};
use crate::envpolicy::{Env, EpisodeTrace, FixedOrder, PredictionCache, StopPolicy};
use crate::synthstudy::{generate_dataset, GeneratorConfig, StudyRecord};

fn setup(n: usize) -> (DiagnosticModel, Vec<StudyRecord>) {
    let data = generate_dataset(&GeneratorConfig { n_patients: n, ..Default::default() }).unwrap();
    let mut model = DiagnosticModel::new(DiagnosticConfig::default(), 5, 32).unwrap();
    model.freeze();
    (model, data)
}

fn traces(env: &Env, data: &[StudyRecord], orders: &[Vec<usize>]) -> Vec<EpisodeTrace> {
    data.iter()
        .zip(orders.iter().cycle())
        .map(|(s, o)| env.run_episode(s, &mut FixedOrder::new(o.clone())).unwrap())
        .collect()
}

fn binom(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[test]
fn k_subsets_are_lexicographic() {
    let s = k_subsets(5, 2);
    assert_eq!(s.len(), 10);
    assert_eq!(s[0], vec![0, 1]);
    assert_eq!(s[9], vec![3, 4]);
    assert!(s.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(k_subsets(5, 5), vec![vec![0, 1, 2, 3, 4]]);
}

proptest! {
    #[test]
    fn k_subsets_count_and_shape(n in 1usize..9, k in 0usize..9) {
        prop_assume!(k <= n);
        let s = k_subsets(n, k);
        prop_assert_eq!(s.len(), binom(n, k));
        for sub in &s {
            prop_assert_eq!(sub.len(), k);
            prop_assert!(sub.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(sub.iter().all(|&v| v < n));
        }
    }
}

#[test]
fn baselines_at_full_budget_equal_full_study() {
    let (model, data) = setup(40);
    let refs: Vec<&StudyRecord> = data.iter().collect();
    let (val, test) = refs.split_at(20);
    let full = eval_full(test, &model, None).unwrap();

    let random = eval_random_k(test, &model, None, 5, 3, 0).unwrap();
    assert_eq!(random.runs.len(), 3);
    // every run sees the same subset, so runs agree up to summation rounding
    assert!(random.std.mean_bacc < 1e-9);
    assert_eq!(random.std.acq_count, 0.0);
    assert!((random.mean.mean_bacc - full.mean_bacc).abs() < 1e-9);
    assert!(random.runs.iter().all(|r| r.mean_bacc == full.mean_bacc));

    let pop = eval_popwise_k(val, test, &model, None, 5).unwrap();
    assert_eq!(pop.subset, vec![0, 1, 2, 3, 4]);
    assert_eq!(pop.report.mean_bacc, full.mean_bacc);
    assert_eq!(pop.report.acq_ratio, 100.0);
    assert!(matches!(eval_random_k(test, &model, None, 0, 1, 0), Err(crate::Error::Config(_))));
    assert!(matches!(eval_popwise_k(val, test, &model, None, 6), Err(crate::Error::Config(_))));
}

#[test]
fn popwise_picks_the_best_validation_candidate() {
    let (model, data) = setup(30);
    let refs: Vec<&StudyRecord> = data.iter().collect();
    let cache = PredictionCache::build(&model, &refs, 1).unwrap();
    let (val, test) = refs.split_at(15);
    let pop = eval_popwise_k(val, test, &model, Some(&cache), 2).unwrap();
    assert_eq!(pop.candidates.len(), 10);
    let best = pop.candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let first = pop.candidates.iter().find(|c| c.1 == best).unwrap();
    assert_eq!(first.0, pop.subset);
    assert_eq!(pop.report.acq_count, 2.0);
    // with and without the cache agree
    let uncached = eval_popwise_k(val, test, &model, None, 2).unwrap();
    assert_eq!(uncached, pop);
}

#[test]
fn stopping_at_once_scores_chance() {
    let (model, data) = setup(200);
    let env = Env::new(&model, 0.1, vec![1.0; 5]).unwrap();
    let t: Vec<EpisodeTrace> = data.iter().map(|s| env.run_episode(s, &mut StopPolicy).unwrap()).collect();
    let r = report_from_traces("stop", &t, 5, model.grid()).unwrap();
    // one constant prediction per task: recall 1 for one class, 0 for the others
    assert!((r.mean_bacc - 100.0 / 3.0).abs() < 1e-9, "{}", r.mean_bacc);
    assert_eq!(r.acq_count, 0.0);
    assert_eq!(r.acq_ratio, 0.0);
    assert!(r.mean_reward.unwrap() >= 0.0);
}

#[test]
fn summary_is_mean_and_population_std() {
    let (model, data) = setup(20);
    let refs: Vec<&StudyRecord> = data.iter().collect();
    let a = eval_full(&refs, &model, None).unwrap();
    let mut b = a.clone();
    b.mean_bacc = a.mean_bacc + 2.0;
    b.acq_count = 1.0;
    let s = Summary::of(vec![a.clone(), b]).unwrap();
    assert!((s.mean.mean_bacc - (a.mean_bacc + 1.0)).abs() < 1e-12);
    assert!((s.std.mean_bacc - 1.0).abs() < 1e-12);
    assert!((s.mean.acq_count - 3.0).abs() < 1e-12);
    assert!(Summary::of(vec![]).is_err());
}

#[test]
fn pathway_counts_on_known_orders() {
    let (model, data) = setup(12);
    let env = Env::new(&model, 0.1, vec![1.0; 5]).unwrap();
    let orders = vec![vec![], vec![2], vec![2, 0], vec![0, 2]];
    let t = traces(&env, &data, &orders);
    let tree = PathwayTree::build(&t, 5, 3, 3).unwrap();
    tree.check_integrity().unwrap();
    assert_eq!(tree.n_studies, 12);
    let root = tree.node(&[]).unwrap();
    assert_eq!((root.reaching, root.terminating), (12, 3));
    let two = tree.node(&[2]).unwrap();
    assert_eq!((two.reaching, two.terminating), (6, 3));
    // both orders end in the same set
    let both = tree.node(&[0, 2]).unwrap();
    assert_eq!((both.reaching, both.terminating), (6, 6));
    assert!(both.as_bacc.is_some());
    assert!(tree.node(&[1]).is_none());
    assert_eq!(tree.edges.iter().map(|e| e.count).sum::<usize>(), 6 + 3 + 3 + 3);
    assert_eq!(tree.nodes.iter().map(|n| n.views.len()).collect::<Vec<_>>(), vec![0, 1, 1, 2]);

    let dot = tree.to_dot();
    assert!(dot.starts_with("digraph") && dot.contains("s0 -> s4 [label=\"6\"]"));
    let back: PathwayTree = serde_json::from_str(&tree.to_json()).unwrap();
    assert_eq!(back, tree);
}

#[test]
fn pathway_integrity_catches_tampering() {
    let (model, data) = setup(6);
    let env = Env::new(&model, 0.1, vec![1.0; 5]).unwrap();
    let t = traces(&env, &data, &[vec![1, 3]]);
    let mut tree = PathwayTree::build(&t, 5, 3, 3).unwrap();
    tree.check_integrity().unwrap();
    tree.edges[0].count += 1;
    assert!(tree.check_integrity().is_err());

    let mut bad = t.clone();
    bad[0].order = vec![1, 1];
    assert!(PathwayTree::build(&bad, 5, 3, 3).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn pathway_flow_is_conserved(orders in prop::collection::vec(
        Just((0..5usize).collect::<Vec<_>>()).prop_shuffle().prop_flat_map(|o| (0..=5usize).prop_map(move |k| o[..k].to_vec())),
        1..20,
    )) {
        let (model, data) = setup(orders.len());
        let env = Env::new(&model, 0.1, vec![1.0; 5]).unwrap();
        let t = traces(&env, &data, &orders);
        let tree = PathwayTree::build(&t, 5, 3, 3).unwrap();
        prop_assert!(tree.check_integrity().is_ok());
        prop_assert_eq!(tree.nodes.iter().map(|n| n.terminating).sum::<usize>(), orders.len());
        prop_assert_eq!(tree.node(&[]).unwrap().reaching, orders.len());
        let acquired: usize = orders.iter().map(Vec::len).sum();
        prop_assert_eq!(tree.edges.iter().map(|e| e.count).sum::<usize>(), acquired);
    }
}
