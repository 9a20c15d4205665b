use fedsplit::consensus::{
    conserved_sum, msp_round, msp_round_with, run_consensus, ClientWeights, ConsensusMode, ConsensusSpec, RoundState,
};
use fedsplit::quantizer::QuantizerState;
use fedsplit::rng::Streams;
use fedsplit::spectral::{StepSchedule, StepWeights};
use fedsplit::splitting::{split_model, SplitRule, SplitState};
use fedsplit::ModelVec;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar(vis: f64, inv: &[f64]) -> SplitState {
    let total = vis + inv.iter().sum::<f64>();
    SplitState {
        visible: DVector::from_vec(vec![vis]),
        invisible: inv.iter().map(|b| DVector::from_vec(vec![*b])).collect(),
        origin: DVector::from_vec(vec![total / (1 + inv.len()) as f64]),
    }
}

#[test]
fn worked_round() {
    let st = RoundState::new(1, vec![scalar(1.0, &[2.0]), scalar(3.0, &[0.0])]).unwrap();
    let next = msp_round(&st, 0.7, &StepWeights::uniform(2, 1, 0.2)).unwrap();
    // w = 2. α1 = 1 + 0.7·1 + 0.2·1, β1 = 2 − 0.2·1, α2 = 3 − 0.7 − 0.6, β2 = 0.6.
    let got: Vec<f64> = next.clients.iter().flat_map(|c| [c.visible[0], c.invisible[0][0]]).collect();
    for (g, e) in got.iter().zip([1.9, 1.8, 1.7, 0.6]) {
        assert!((g - e).abs() < 1e-15, "{got:?}");
    }
    assert!((next.global[0] - 1.8).abs() < 1e-15);
    assert_eq!(next.k, 1);
}

/// Scalar recursion written out directly, one submodel list per client.
fn reference_round(alpha: &[f64], beta: &[Vec<f64>], eps: f64, a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let w = alpha.iter().sum::<f64>() / alpha.len() as f64;
    let mut na = Vec::new();
    let mut nb = Vec::new();
    for i in 0..alpha.len() {
        let mut x = alpha[i] + eps * (w - alpha[i]);
        let mut bs = Vec::new();
        for (n, b) in beta[i].iter().enumerate() {
            x += a[i][n] * (b - alpha[i]);
            bs.push(b + a[i][n] * (alpha[i] - b));
        }
        na.push(x);
        nb.push(bs);
    }
    (na, nb)
}

#[test]
fn rounds_match_direct_recursion_with_uneven_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let counts = [1usize, 3, 2];
    let mut alpha: Vec<f64> = (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let mut beta: Vec<Vec<f64>> = counts.iter().map(|&m| (0..m).map(|_| rng.gen_range(-4.0..4.0)).collect()).collect();
    let clients = (0..3).map(|i| scalar(alpha[i], &beta[i])).collect();
    let mut st = RoundState::new(1, clients).unwrap();
    for _ in 0..25 {
        let a: Vec<Vec<f64>> = counts.iter().map(|&m| (0..m).map(|_| rng.gen_range(0.0..0.1)).collect()).collect();
        let weights: Vec<ClientWeights> = a.iter().map(|ai| ClientWeights::honest(ai, 1)).collect();
        st = msp_round_with(&st, 0.3, &weights).unwrap();
        (alpha, beta) = reference_round(&alpha, &beta, 0.3, &a);
        for i in 0..3 {
            assert!((st.clients[i].visible[0] - alpha[i]).abs() < 1e-12);
            for n in 0..counts[i] {
                assert!((st.clients[i].invisible[n][0] - beta[i][n]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn mismatched_weights_are_rejected() {
    let st = RoundState::new(1, vec![scalar(1.0, &[2.0]), scalar(3.0, &[0.0])]).unwrap();
    assert!(msp_round(&st, 0.5, &StepWeights::uniform(3, 1, 0.1)).is_err());
    assert!(msp_round(&st, 0.5, &StepWeights::uniform(2, 2, 0.1)).is_err());
    assert!(RoundState::new(1, vec![]).is_err());
    assert!(RoundState::new(1, vec![scalar(1.0, &[])]).is_err());
}

fn split_clients(n: usize, d: usize, seed: u64) -> Vec<SplitState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let w = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
            let m = rng.gen_range(1..=3);
            split_model(&w, &SplitRule::Uniform { eps_split: 0.2 }, m, &mut rng).unwrap()
        })
        .collect()
}

fn spec<'a>(gammas: &'a [f64], ids: &'a [usize], schedule: StepSchedule, rounds: usize) -> ConsensusSpec<'a> {
    ConsensusSpec { epsilon: 0.4, gammas, schedule, rounds, record_trace: true, client_ids: ids }
}

#[test]
fn quantized_run_keeps_every_upload_in_its_interval() {
    let n = 6;
    let d = 4;
    let gammas = vec![0.3; n];
    let ids: Vec<usize> = (0..n).collect();
    for bits in [4u32, 6, 8] {
        let levels = 1usize << bits;
        let initial = QuantizerState::uniform(d, -10.0, 10.0, levels).unwrap();
        let mode = ConsensusMode::Mspdq { levels, lambda2: 0.6, initial };
        let clients = split_clients(n, d, bits as u64);
        let sum0 = clients.iter().fold(ModelVec::zeros(d), |acc, c| acc + c.total());
        let out =
            run_consensus(3, clients, &spec(&gammas, &ids, StepSchedule::Harmonic, 40), &mode, &Streams::new(9)).unwrap();
        assert!(out.stats.max_delta_ratio <= 1.0, "B={bits}: {}", out.stats.max_delta_ratio);
        assert!(out.stats.deviation_ratio <= 1.0);
        assert_eq!(out.stats.uploads, (n * 41) as u64);
        // Snapping the leader moves mass into the invisibles only.
        assert!((conserved_sum(&out.final_state) - sum0).amax() < 1e-9);
        let trace = out.trace.unwrap();
        for st in &trace.states {
            let uploads = st.upload_vecs().unwrap();
            let mean = uploads.iter().fold(ModelVec::zeros(d), |a, u| a + u) / n as f64;
            assert!((&mean - &st.global).amax() < 1e-12);
        }
        let first = trace.states[0].upload_vecs().unwrap();
        assert!(first.windows(2).all(|w| w[0] == w[1]));
    }
}

#[test]
fn quantized_run_is_reproducible() {
    let gammas = vec![0.2; 4];
    let ids = [0, 1, 2, 3];
    let initial = QuantizerState::uniform(2, -5.0, 5.0, 64).unwrap();
    let mode = ConsensusMode::Mspdq { levels: 64, lambda2: 0.6, initial };
    let go = || {
        run_consensus(2, split_clients(4, 2, 1), &spec(&gammas, &ids, StepSchedule::Harmonic, 15), &mode, &Streams::new(4))
            .unwrap()
            .final_state
    };
    assert_eq!(go(), go());
}

#[test]
fn zero_rounds_are_rejected() {
    let gammas = [0.1, 0.1];
    let ids = [0, 1];
    let r = run_consensus(1, split_clients(2, 1, 0), &spec(&gammas, &ids, StepSchedule::Constant, 0), &ConsensusMode::Msp, &Streams::new(0));
    assert!(r.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn msp_conserves_the_sum(n in 1usize..7, d in 1usize..5, eps in 0.01f64..1.0, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let clients = split_clients(n, d, seed);
        let m_max = clients.iter().map(SplitState::m).max().unwrap();
        let lmin = (1.0 - eps).min(1.0);
        let gammas = vec![frac * lmin / (1.0 + lmin) / m_max as f64; n];
        let ids: Vec<usize> = (0..n).collect();
        let out = run_consensus(1, clients.clone(), &spec(&gammas, &ids, StepSchedule::Constant, 30), &ConsensusMode::Msp, &Streams::new(0)).unwrap();
        let before = clients.iter().fold(ModelVec::zeros(d), |a, c| a + c.total());
        for st in out.trace.unwrap().states {
            prop_assert!((conserved_sum(&st) - &before).amax() <= 1e-9 * before.amax().max(1.0));
        }
    }

    #[test]
    fn msp_reaches_the_average_of_all_submodels(n in 2usize..5, seed in any::<u64>()) {
        let clients = split_clients(n, 2, seed);
        let m_max = clients.iter().map(SplitState::m).max().unwrap();
        let gammas = vec![0.4 / m_max as f64; n];
        let ids: Vec<usize> = (0..n).collect();
        let start = RoundState::new(1, clients.clone()).unwrap().consensus_limit();
        let mut s = spec(&gammas, &ids, StepSchedule::Constant, 600);
        s.record_trace = false;
        let out = run_consensus(1, clients, &s, &ConsensusMode::Msp, &Streams::new(0)).unwrap();
        for c in &out.final_state.clients {
            prop_assert!((&c.visible - &start).amax() < 1e-6);
            for b in &c.invisible {
                prop_assert!((b - &start).amax() < 1e-6);
            }
        }
    }
}
