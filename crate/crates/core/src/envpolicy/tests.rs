use super::*;
use crate::diagnostics::DiagnosticConfig;
use crate::synthstudy::{generate_dataset, GeneratorConfig};

fn setup(n: usize) -> (DiagnosticModel, Vec<StudyRecord>) {
    let data = generate_dataset(&GeneratorConfig { n_patients: n, ..Default::default() }).unwrap();
    let mut model = DiagnosticModel::new(DiagnosticConfig::default(), 5, 32).unwrap();
    model.freeze();
    (model, data)
}

#[test]
fn reset_is_empty_and_patient_independent() {
    let (model, data) = setup(2);
    let env = Env::new(&model, 0.1, vec![1.0; 5]).unwrap();
    let a = env.reset(&data[0]).unwrap();
    let b = env.reset(&data[1]).unwrap();
    assert_eq!(a.mask, vec![false; 5]);
    assert!(a.masked_embeddings.iter().all(|&x| x == 0.0));
    assert_eq!(a.t, 0);
    assert_eq!(a.last.pmf, b.last.pmf);
    assert!((a.last.pmf.total() - 1.0).abs() < 1e-6);
}

#[test]
fn unfrozen_model_is_rejected() {
    let model = DiagnosticModel::new(DiagnosticConfig::default(), 5, 32).unwrap();
    assert!(matches!(Env::new(&model, 0.1, vec![1.0; 5]), Err(Error::Config(_))));
}

#[test]
fn sparse_reward_arithmetic() {
    let (model, data) = setup(1);
    let s = &data[0];
    let truth = (s.y_as_class, s.ef_category());
    let other = ((truth.0 + 1) % 3, (truth.1 + 1) % 3);
    let env = Env::new(&model, 0.1, vec![1.0; 5]).unwrap();
    let mut st = env.reset(s).unwrap();
    for v in 0..3 {
        st = env.step(&st, Action::Select(v)).unwrap().next_state;
    }
    st.last.classes = truth;
    let tr = env.step(&st, Action::Stop).unwrap();
    assert!(tr.done && tr.dense_reward == 0.0);
    assert!((tr.sparse_reward - 1.7).abs() < 1e-12);

    let mut st0 = env.reset(s).unwrap();
    st0.last.classes = other;
    assert_eq!(env.step(&st0, Action::Stop).unwrap().sparse_reward, 0.0);

    let env2 = Env::new(&model, 0.2, vec![1.0; 5]).unwrap();
    let mut st5 = env2.reset(s).unwrap();
    for v in 0..5 {
        st5 = env2.step(&st5, Action::Select(v)).unwrap().next_state;
    }
    st5.last.classes = (truth.0, other.1);
    assert!(env2.step(&st5, Action::Stop).unwrap().sparse_reward.abs() < 1e-12);
}

#[test]
fn repeat_select_is_invalid() {
    let (model, data) = setup(1);
    let env = Env::new(&model, 0.0, vec![1.0; 5]).unwrap();
    let s0 = env.reset(&data[0]).unwrap();
    let s1 = env.step(&s0, Action::Select(2)).unwrap().next_state;
    assert!(matches!(env.step(&s1, Action::Select(2)), Err(Error::InvalidAction(_))));
    assert!(matches!(env.step(&s1, Action::Select(9)), Err(Error::InvalidAction(_))));
    assert!(!env.legal_actions(&s1)[2] && env.legal_actions(&s1)[5]);
}

#[test]
fn episodes() {
    let (model, data) = setup(3);
    let env = Env::new(&model, 0.05, vec![1.0; 5]).unwrap();
    let t = env.run_episode(&data[0], &mut StopPolicy).unwrap();
    assert_eq!(t.steps.len(), 1);
    assert_eq!(t.total_dense(), 0.0);

    // never stopping: N selects, then forced termination with zero reward
    let t = env.run_episode(&data[1], &mut FixedOrder::never_stop(vec![4, 3, 2, 1, 0])).unwrap();
    assert_eq!(t.n_acquired(), 5);
    assert_eq!(t.steps.len(), 6);
    assert_eq!(t.sparse_reward, 0.0);
    assert!(t.total_dense() >= 0.0);

    let t = env.run_episode(&data[2], &mut FixedOrder::new(vec![1, 4])).unwrap();
    assert_eq!(t.order, vec![1, 4]);
    assert!(t.steps.iter().all(|s| s.dense_reward >= 0.0));
    let hits = (t.pred.0 == t.truth.0) as u8 + (t.pred.1 == t.truth.1) as u8;
    assert!((t.sparse_reward - (f64::from(hits) - 0.1)).abs() < 1e-12);
}

#[test]
fn cap_forces_stop() {
    let (model, data) = setup(1);
    let env = Env::new(&model, 0.0, vec![1.0; 5]).unwrap().with_max_views(Some(2));
    let t = env.run_episode(&data[0], &mut RandomK::new(5, 1)).unwrap();
    assert_eq!(t.n_acquired(), 2);
    assert_eq!(t.sparse_reward, 0.0);
    let s = env.reset(&data[0]).unwrap();
    let s = env.step(&s, Action::Select(0)).unwrap().next_state;
    let s = env.step(&s, Action::Select(1)).unwrap().next_state;
    assert_eq!(env.legal_actions(&s), vec![false, false, false, false, false, true]);
}

#[test]
fn cache_matches_fresh_inference() {
    let (model, data) = setup(6);
    let refs: Vec<&StudyRecord> = data.iter().collect();
    let one = PredictionCache::build(&model, &refs, 1).unwrap();
    let three = PredictionCache::build(&model, &refs, 3).unwrap();
    assert_eq!(one.len(), 6);
    for s in &data {
        assert_eq!(one.study(s.study_id), three.study(s.study_id));
        for code in [0usize, 5, 31] {
            let mask = crate::oracle::mask_from_code(code, 5);
            let fresh = predict_subset(&model, s, &mask).unwrap();
            let cached = one.get(s.study_id, &mask).unwrap();
            assert!((fresh.joint.mu[0] - cached.joint.mu[0]).abs() < 1e-12);
            assert!((fresh.joint.l22 - cached.joint.l22).abs() < 1e-12);
        }
    }
    let plain = Env::new(&model, 0.1, vec![1.0; 5]).unwrap();
    let cached = plain.clone().with_cache(&one);
    let mut p = FixedOrder::new(vec![3, 0]);
    let a = plain.run_episode(&data[4], &mut p).unwrap();
    let b = cached.run_episode(&data[4], &mut p).unwrap();
    assert_eq!(a.pred, b.pred);
    assert!((a.total_dense() - b.total_dense()).abs() < 1e-9);
}

#[test]
fn dense_reward_ignores_masked_content() {
    let (model, data) = setup(1);
    let env = Env::new(&model, 0.1, vec![1.0; 5]).unwrap();
    let mut other = data[0].clone();
    for x in &mut other.embeddings[2 * 32..] {
        *x += 3.0;
    }
    let run = |s: &StudyRecord| {
        let st = env.reset(s).unwrap();
        let a = env.step(&st, Action::Select(1)).unwrap();
        let b = env.step(&a.next_state, Action::Select(0)).unwrap();
        (a.dense_reward, b.dense_reward)
    };
    assert_eq!(run(&data[0]), run(&other));
}

#[test]
fn traces_roundtrip_as_jsonl() {
    let (model, data) = setup(2);
    let env = Env::new(&model, 0.1, vec![1.0; 5]).unwrap();
    let traces: Vec<EpisodeTrace> =
        data.iter().map(|s| env.run_episode(s, &mut FixedOrder::new(vec![0, 2])).unwrap()).collect();
    let mut buf = Vec::new();
    write_traces_jsonl(&traces, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(read_traces_jsonl(&text).unwrap(), traces);
}
