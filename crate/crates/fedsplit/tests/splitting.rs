use fedsplit::consensus::{msp_round, RoundState};
use fedsplit::spectral::StepWeights;
use fedsplit::splitting::{laplace_split_density, split_model, z_sequence, SplitRule, SplitState};
use fedsplit::ModelVec;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn v(x: &[f64]) -> ModelVec {
    DVector::from_vec(x.to_vec())
}

#[test]
fn visible_draw_is_unbiased() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rule = SplitRule::Uniform { eps_split: 0.3 };
    let n = 100_000;
    let mut sum = 0.0;
    for _ in 0..n {
        sum += split_model(&v(&[1.0]), &rule, 1, &mut rng).unwrap().visible[0];
    }
    // Uniform on [0.3, 1.7]: mean 1, standard deviation 1.4/√12.
    let sd = 1.4 / 12f64.sqrt();
    assert!((sum / n as f64 - 1.0).abs() <= 4.0 * sd / (n as f64).sqrt());
}

#[test]
fn laplace_density_integrates_to_one() {
    let w = v(&[0.4]);
    let h = 1e-3;
    let total: f64 = (-30_000..=30_000)
        .map(|i| laplace_split_density(&w, 1.0, &v(&[0.4 + i as f64 * h])).unwrap() * h)
        .sum();
    assert!((total - 1.0).abs() < 1e-3);
    assert!((laplace_split_density(&w, 1.0, &w).unwrap() - 0.5).abs() < 1e-15);
    let off = v(&[0.4 + std::f64::consts::LN_2]);
    assert!((laplace_split_density(&w, 1.0, &off).unwrap() - 0.25).abs() < 1e-15);
}

#[test]
fn z_follows_the_visible_drift_across_rounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rule = SplitRule::Uniform { eps_split: 0.2 };
    let clients: Vec<SplitState> = [v(&[1.0, -2.0]), v(&[0.5, 3.0]), v(&[-1.0, 0.0])]
        .iter()
        .map(|w| split_model(w, &rule, 2, &mut rng).unwrap())
        .collect();
    let mut states = vec![RoundState::new(1, clients).unwrap()];
    let weights = StepWeights::uniform(3, 2, 0.05);
    for _ in 0..20 {
        let next = msp_round(states.last().unwrap(), 0.4, &weights).unwrap();
        states.push(next);
    }
    for slot in 0..3 {
        let history: Vec<SplitState> = states.iter().map(|s| s.clients[slot].clone()).collect();
        let globals: Vec<ModelVec> = states.iter().map(|s| s.global.clone()).collect();
        let z = z_sequence(&history, &globals, 0.4).unwrap();
        assert_eq!(z.len(), 21);
        // A wrong ε breaks the recursion.
        assert!(z_sequence(&history, &globals, 0.41).is_err());
    }
}

#[test]
fn invalid_rules_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let w = v(&[1.0]);
    assert!(split_model(&w, &SplitRule::Uniform { eps_split: 1.0 }, 1, &mut rng).is_err());
    assert!(split_model(&w, &SplitRule::Laplace { scale: 0.0 }, 1, &mut rng).is_err());
    assert!(split_model(&w, &SplitRule::Midpoint, 0, &mut rng).is_err());
}

fn rule_strategy() -> impl Strategy<Value = SplitRule> {
    prop_oneof![
        (0.0f64..0.99).prop_map(|eps_split| SplitRule::Uniform { eps_split }),
        (0.01f64..5.0).prop_map(|scale| SplitRule::Laplace { scale }),
        Just(SplitRule::Midpoint),
    ]
}

proptest! {
    #[test]
    fn split_preserves_the_sum(
        w in prop::collection::vec(-50.0f64..50.0, 1..12),
        m in 1usize..5,
        rule in rule_strategy(),
        seed in any::<u64>(),
    ) {
        let w = DVector::from_vec(w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = split_model(&w, &rule, m, &mut rng).unwrap();
        prop_assert_eq!(s.m(), m);
        let target = &w * (1.0 + m as f64);
        let scale = target.amax().max(1.0);
        prop_assert!((s.total() - target).amax() <= 1e-12 * scale);
    }

    #[test]
    fn uniform_visible_stays_in_its_interval(x in -10.0f64..10.0, eps in 0.0f64..0.99, m in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = split_model(&v(&[x]), &SplitRule::Uniform { eps_split: eps }, m, &mut rng).unwrap();
        let (a, b) = (eps * x, (1.0 + m as f64 - eps) * x);
        prop_assert!(s.visible[0] >= a.min(b) && s.visible[0] <= a.max(b));
    }

    #[test]
    fn replacing_the_visible_keeps_the_sum(
        w in prop::collection::vec(-5.0f64..5.0, 3),
        new in prop::collection::vec(-5.0f64..5.0, 3),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = split_model(&DVector::from_vec(w), &SplitRule::Uniform { eps_split: 0.5 }, 2, &mut rng).unwrap();
        let before = s.total();
        s.replace_visible(DVector::from_vec(new.clone()));
        prop_assert_eq!(s.visible.as_slice(), new.as_slice());
        prop_assert!((s.total() - before).amax() < 1e-12);
    }
}
