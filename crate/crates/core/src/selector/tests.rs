use super::*;
use crate::diagnostics::{DiagnosticConfig, DiagnosticModel};
use crate::envpolicy::Env;
use crate::numerics::{Adam, AdamConfig, Tape};
use crate::synthstudy::{generate_dataset, GeneratorConfig, StudyRecord};

fn nets(n: usize, d: usize, seed: u64) -> PolicyNets {
    PolicyNets::new(PpoConfig { seed, ..Default::default() }, n, d).unwrap()
}

fn frozen_model() -> DiagnosticModel {
    let mut m = DiagnosticModel::new(DiagnosticConfig::default(), 5, 32).unwrap();
    m.freeze();
    m
}

#[test]
fn only_stop_when_everything_is_acquired() {
    let p = nets(5, 4, 1);
    let feats = vec![0.3; p.input_dim()];
    let legal = [false, false, false, false, false, true];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let (a, lp, _) = p.act_batch(&feats, &legal, Some(&mut rng)).unwrap()[0];
        assert_eq!((a, lp), (5, 0.0));
    }
}

#[test]
fn fresh_policy_gives_every_legal_action_mass() {
    let p = nets(5, 4, 2);
    let feats = vec![0.0; p.input_dim()];
    let logits = p.logits(&feats).unwrap();
    let lp = masked_log_softmax(&logits, &[true; 6]).unwrap();
    for l in lp {
        let prob = l.unwrap().exp();
        assert!(prob > 0.1 && prob < 0.25, "{prob}");
    }
}

#[test]
fn greedy_is_deterministic() {
    let p = nets(5, 4, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let feats: Vec<f64> = (0..p.input_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let legal = [true, false, true, true, false, true];
    let first = p.act_batch(&feats, &legal, None).unwrap();
    for _ in 0..5 {
        assert_eq!(p.act_batch(&feats, &legal, None).unwrap(), first);
    }
}

#[test]
fn sampled_actions_are_always_legal() {
    let p = nets(5, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows = 1000;
    for _ in 0..100 {
        let feats: Vec<f64> = (0..rows * p.input_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let legal: Vec<bool> = (0..rows)
            .flat_map(|_| {
                let mut l: Vec<bool> = (0..5).map(|_| rng.gen_bool(0.5)).collect();
                l.push(true);
                l
            })
            .collect();
        let acts = p.act_batch(&feats, &legal, Some(&mut rng)).unwrap();
        for (r, (a, _, _)) in acts.iter().enumerate() {
            assert!(legal[r * 6 + a]);
        }
    }
}

/// Straightforward per-episode GAE written independently of the library.
fn scalar_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut a = 0.0;
            let mut w = 1.0;
            for k in t..n {
                let next = if k + 1 < n { values[k + 1] } else { 0.0 };
                a += w * (rewards[k] + gamma * next - values[k]);
                w *= gamma * lambda;
            }
            a
        })
        .collect()
}

#[test]
fn gae_matches_scalar_reference() {
    let (r, v) = ([0.1, 0.2, 1.0], [0.5, 0.4, 0.3]);
    let got = gae_advantages(&r, &v, &[false, false, true], 1.0, 0.95);
    let want = scalar_gae(&r, &v, 1.0, 0.95);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12);
    }
    // hand values: deltas 0.0, 0.1, 0.7
    assert!((got[2] - 0.7).abs() < 1e-12);
    assert!((got[1] - (0.1 + 0.95 * 0.7)).abs() < 1e-12);

    // two episodes back to back do not leak into each other
    let r2 = [0.1, 0.2, 1.0, 0.5, -1.0];
    let v2 = [0.5, 0.4, 0.3, 0.2, 0.1];
    let got = gae_advantages(&r2, &v2, &[false, false, true, false, true], 1.0, 0.95);
    let mut want = scalar_gae(&r2[..3], &v2[..3], 1.0, 0.95);
    want.extend(scalar_gae(&r2[3..], &v2[3..], 1.0, 0.95));
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn gae_limits() {
    // perfect critic for constant rewards
    let r = [0.5, 0.5, 0.5];
    let v = [1.5, 1.0, 0.5];
    assert!(gae_advantages(&r, &v, &[false, false, true], 1.0, 0.95).iter().all(|a| a.abs() < 1e-15));
    // lambda = 1: future reward sum minus value
    let r = [0.2, -0.1, 1.3];
    let v = [0.7, 0.1, 0.4];
    let a = gae_advantages(&r, &v, &[false, false, true], 1.0, 1.0);
    for t in 0..3 {
        let future: f64 = r[t..].iter().sum();
        assert!((a[t] - (future - v[t])).abs() < 1e-12);
    }
}

#[test]
fn advantage_normalisation() {
    let mut b = RolloutBuffer::new(1, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..50 {
        b.push(&[0.0], &[true, true], 0, -0.7, rng.gen(), rng.gen(), i % 3 == 2 || i == 49);
    }
    b.compute_advantages(1.0, 0.95, true).unwrap();
    let n = b.len() as f64;
    let mean = b.advantages.iter().sum::<f64>() / n;
    let sd = (b.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-9 && (sd - 1.0).abs() < 1e-6);

    let mut one = RolloutBuffer::new(1, 2);
    one.push(&[0.0], &[true, true], 1, -0.7, 2.0, 0.5, true);
    one.compute_advantages(1.0, 0.95, true).unwrap();
    assert_eq!(one.advantages, vec![1.5]);

    let mut open = RolloutBuffer::new(1, 2);
    open.push(&[0.0], &[true, true], 1, -0.7, 2.0, 0.5, false);
    assert!(open.compute_advantages(1.0, 0.95, true).is_err());
}

fn bandit_buffer(p: &PolicyNets, n: usize, rng: &mut ChaCha8Rng) -> RolloutBuffer {
    let feats = vec![1.0; p.input_dim()];
    let mut b = RolloutBuffer::new(p.input_dim(), p.n_actions());
    for _ in 0..n {
        let (a, lp, v) = p.act_batch(&feats, &[true, true], Some(rng)).unwrap()[0];
        b.push(&feats, &[true, true], a, lp, if a == 0 { 1.0 } else { 0.0 }, v, true);
    }
    b
}

#[test]
fn zero_advantages_give_no_policy_gradient() {
    let p = PolicyNets::new(PpoConfig { entropy_coef: 0.0, value_coef: 0.0, ..Default::default() }, 1, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut b = bandit_buffer(&p, 32, &mut rng);
    b.compute_advantages(1.0, 0.95, false).unwrap();
    b.advantages.iter_mut().for_each(|a| *a = 0.0);
    let idx: Vec<usize> = (0..b.len()).collect();
    let mut tape = Tape::new();
    let vars = p.params.bind(&mut tape);
    let parts = ppo::ppo_loss(&mut tape, &vars, &p, &b, &idx, &p.config).unwrap();
    tape.backward(parts.total).unwrap();
    for v in &vars {
        assert!(tape.grad(*v).map_or(true, |g| g.iter().all(|x| x.abs() < 1e-15)));
    }
}

#[test]
fn surrogate_at_unit_ratio_is_mean_advantage() {
    let p = PolicyNets::new(PpoConfig { entropy_coef: 0.0, value_coef: 0.0, ..Default::default() }, 1, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut b = bandit_buffer(&p, 40, &mut rng);
    b.compute_advantages(1.0, 0.95, false).unwrap();
    let idx: Vec<usize> = (0..b.len()).collect();
    let mut tape = Tape::new();
    let vars = p.params.bind(&mut tape);
    let parts = ppo::ppo_loss(&mut tape, &vars, &p, &b, &idx, &p.config).unwrap();
    let mean_adv = b.advantages.iter().sum::<f64>() / b.len() as f64;
    assert!((parts.policy + mean_adv).abs() < 1e-12);
    assert_eq!(parts.clipped, 0);
}

#[test]
fn bandit_converges_to_the_paying_arm() {
    let cfg = PpoConfig { minibatch: 64, lr: 3e-3, seed: 11, ..Default::default() };
    let mut p = PolicyNets::new(cfg.clone(), 1, 3).unwrap();
    let mut opt = Adam::new(&p.params, AdamConfig { lr: cfg.lr, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..200 {
        let mut b = bandit_buffer(&p, 64, &mut rng);
        b.compute_advantages(1.0, 0.95, true).unwrap();
        ppo_update(&b, &mut p, &mut opt, &mut rng).unwrap();
    }
    let logits = p.logits(&vec![1.0; p.input_dim()]).unwrap();
    let pa = 1.0 / (1.0 + (logits[1] - logits[0]).exp());
    assert!(pa > 0.95, "P(arm A) = {pa}");
}

#[test]
fn checkpoint_roundtrip() {
    let p = nets(5, 4, 13);
    let q = PolicyNets::from_bytes(&p.to_bytes()).unwrap();
    assert_eq!(p.params.flatten(), q.params.flatten());
    assert_eq!(p.config, q.config);
    let mut bytes = p.to_bytes();
    bytes[0] = b'X';
    assert!(matches!(PolicyNets::from_bytes(&bytes), Err(Error::Format(_))));
}

#[test]
fn config_validation() {
    for bad in [
        PpoConfig { clip: 1.0, ..Default::default() },
        PpoConfig { lr: 0.0, ..Default::default() },
        PpoConfig { minibatch: 0, ..Default::default() },
        PpoConfig { entropy_coef: -1.0, ..Default::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

fn small_world() -> (DiagnosticModel, Vec<StudyRecord>) {
    let data = generate_dataset(&GeneratorConfig { n_patients: 60, ..Default::default() }).unwrap();
    (frozen_model(), data)
}

#[test]
fn training_is_reproducible_and_keeps_the_best_epoch() {
    let (model, data) = small_world();
    let refs: Vec<&StudyRecord> = data.iter().collect();
    let env = Env::new(&model, 0.05, vec![1.0; 5]).unwrap();
    let cfg = PpoConfig { epochs: 4, minibatch: 32, seed: 3, ..Default::default() };
    let (a, log_a) = train_selector(&refs[..40], &refs[40..], &env, &cfg).unwrap();
    let (b, log_b) = train_selector(&refs[..40], &refs[40..], &env, &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(log_a, log_b);
    let best = log_a.val_bacc[log_a.best_epoch];
    assert!(best >= *log_a.val_bacc.last().unwrap());
    assert!(log_a.val_bacc.iter().all(|&b| b <= best));

    let traces = run_policy(&env, &a, &refs[40..], None).unwrap();
    let bacc = train::traces_bacc(&traces, 3, 3).unwrap();
    assert_eq!(bacc, best);
}

#[test]
fn policy_wrapper_matches_batched_runner() {
    let (model, data) = small_world();
    let env = Env::new(&model, 0.01, vec![1.0; 5]).unwrap();
    let p = nets(5, 32, 21);
    let refs: Vec<&StudyRecord> = data.iter().take(10).collect();
    let batched = run_policy(&env, &p, &refs, None).unwrap();
    for (s, t) in refs.iter().zip(&batched) {
        let single = env.run_episode(s, &mut SelectorPolicy::greedy(&p)).unwrap();
        assert_eq!(single.order, t.order);
        assert_eq!(single.pred, t.pred);
    }
}

#[test]
fn logits_ignore_masked_content() {
    let (model, data) = small_world();
    let env = Env::new(&model, 0.01, vec![1.0; 5]).unwrap();
    let p = nets(5, 32, 22);
    let mut other = data[0].clone();
    other.embeddings[3 * 32..].iter_mut().for_each(|x| *x = -*x * 7.0);
    let s1 = env.reset(&data[0]).unwrap();
    let s1 = env.step(&s1, Action::Select(0)).unwrap().next_state;
    let s2 = env.reset(&other).unwrap();
    let s2 = env.step(&s2, Action::Select(0)).unwrap().next_state;
    assert_eq!(p.logits(&s1.features()).unwrap(), p.logits(&s2.features()).unwrap());
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
    /// The per-sample objective is min(rA, clip(r)A); it can never reward
    /// moving the ratio past 1 + ε (A > 0) or below 1 - ε (A < 0).
    #[test]
    fn clipped_surrogate_is_bounded(log_r in -3.0f64..3.0, adv in -5.0f64..5.0, eps in 0.05f64..0.5) {
        let cfg = PpoConfig { clip: eps, entropy_coef: 0.0, value_coef: 0.0, ..Default::default() };
        let p = PolicyNets::new(cfg, 2, 2).unwrap();
        let obs = vec![0.4, -0.1, 0.7, 0.2, 1.0, 0.0];
        let legal = [true, true, true];
        let lp = masked_log_softmax(&p.logits(&obs).unwrap(), &legal).unwrap()[1].unwrap();
        let mut b = RolloutBuffer::new(p.input_dim(), 3);
        b.push(&obs, &legal, 1, lp - log_r, 0.0, 0.0, true);
        b.advantages = vec![adv];
        b.returns = vec![0.0];
        let s = -ppo_loss_value(&p, &b, &[0]).unwrap();

        let r = log_r.exp();
        let reference = (r * adv).min(r.clamp(1.0 - eps, 1.0 + eps) * adv);
        proptest::prop_assert!((s - reference).abs() <= 1e-9 * (1.0 + reference.abs()));
        let cap = if adv >= 0.0 { (1.0 + eps) * adv } else { (1.0 - eps) * adv };
        proptest::prop_assert!(s <= cap + 1e-12);
    }
}
