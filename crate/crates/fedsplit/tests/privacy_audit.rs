use fedsplit::consensus::{run_consensus, ConsensusMode, ConsensusSpec, Trace};
use fedsplit::privacy_audit::{
    audit_witness, compare_views, construct_witness, paired_for_slot, quantizer_dp_audit, random_dp_config,
    record_view, split_state, z_inference_attack, DpAuditConfig, MUTATION_DETECT, REPLAY_TOL,
};
use fedsplit::rng::Streams;
use fedsplit::spectral::StepSchedule;
use fedsplit::ModelVec;
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(x: &[f64]) -> ModelVec {
    DVector::from_vec(x.to_vec())
}

fn trace(clients: Vec<(Vec<f64>, Vec<Vec<f64>>)>, eps: f64, gamma: f64, schedule: StepSchedule, rounds: usize) -> Trace {
    let n = clients.len();
    let states = clients.into_iter().map(|(a, bs)| split_state(v(&a), bs.iter().map(|b| v(b)).collect())).collect();
    let gammas = vec![gamma; n];
    let ids: Vec<usize> = (0..n).collect();
    let spec = ConsensusSpec { epsilon: eps, gammas: &gammas, schedule, rounds, record_trace: true, client_ids: &ids };
    run_consensus(1, states, &spec, &ConsensusMode::Msp, &Streams::new(0)).unwrap().trace.unwrap()
}

fn scalar_trace() -> Trace {
    trace(
        vec![
            (vec![1.0], vec![vec![3.0]]),
            (vec![-2.0], vec![vec![0.5]]),
            (vec![4.0], vec![vec![-1.0]]),
        ],
        0.5,
        0.1,
        StepSchedule::Constant,
        6,
    )
}

#[test]
fn worked_scalar_witness() {
    let tr = scalar_trace();
    let e = v(&[0.7]);
    let w = construct_witness(&tr, 0, 1, &e).unwrap();
    // m = 1 on both sides, so the absorbing invisibles move by ±2e.
    assert!((w.beta_i[0] - (3.0 + 1.4)).abs() < 1e-15);
    assert!((w.beta_j[0] - (0.5 - 1.4)).abs() < 1e-15);
    let (wi, wj) = w.local_models().unwrap();
    assert!((wi[0] - (2.0 + 0.7)).abs() < 1e-12);
    assert!((wj[0] - (-0.75 - 0.7)).abs() < 1e-12);

    // Every visible submodel and global model along the replay matches.
    let replay = w.replay().unwrap();
    for (a, b) in tr.states.iter().zip(&replay.states) {
        for (x, y) in a.clients.iter().zip(&b.clients) {
            assert!((&x.visible - &y.visible).amax() < 1e-12);
        }
        assert!((&a.global - &b.global).amax() < 1e-12);
    }
    // The honest pair's invisibles do differ.
    assert!((tr.states[0].clients[0].invisible[0][0] - replay.states[0].clients[0].invisible[0][0]).abs() > 1.0);

    let check = audit_witness(&tr, 0, 1, &e, &[2]).unwrap();
    assert!(check.replay.max_deviation <= REPLAY_TOL);
    assert!(check.shift_error < 1e-12);
    assert_eq!(check.mutations, 6);
    assert!(check.min_mutation_deviation > MUTATION_DETECT, "{}", check.min_mutation_deviation);
}

#[test]
fn coincident_visibles_make_the_witness_degenerate() {
    let tr = trace(
        vec![(vec![1.0], vec![vec![3.0]]), (vec![1.0], vec![vec![0.5]]), (vec![4.0], vec![vec![-1.0]])],
        0.5,
        0.1,
        StepSchedule::Constant,
        3,
    );
    assert!(construct_witness(&tr, 0, 1, &v(&[0.3])).is_err());
    assert!(construct_witness(&tr, 0, 0, &v(&[0.3])).is_err());
}

#[test]
fn views_hide_honest_invisibles() {
    let tr = scalar_trace();
    assert!(record_view(&tr, &[0], &[0, 1]).is_err());
    assert!(record_view(&tr, &[5], &[0, 1]).is_err());
    let view = record_view(&tr, &[2], &[0, 1]).unwrap();
    assert_eq!(view.corrupted.len(), 1);
    assert_eq!(view.corrupted[0].slot, 2);
    assert_eq!(view.visible.len(), tr.states.len());
    let text = serde_json::to_string(&view).unwrap();
    assert!(!text.contains("invisible_count") && !text.contains("\"m\""));
}

#[test]
fn mutation_breaks_the_view() {
    let tr = scalar_trace();
    let view = record_view(&tr, &[2], &[0, 1]).unwrap();
    let w = construct_witness(&tr, 0, 1, &v(&[0.7])).unwrap();
    for p in w.params() {
        let replayed = w.mutated(p).replay().unwrap();
        let other = record_view(&replayed, &[2], &[0, 1]).unwrap();
        assert!(compare_views(&view, &other).max_deviation > MUTATION_DETECT, "{p:?}");
    }
}

#[test]
fn hidden_invisible_count_defeats_the_z_attack() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let clients: Vec<_> = (0..4)
        .map(|_| {
            let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            (a, vec![b])
        })
        .collect();
    let tr = trace(clients, 0.4, 0.3, StepSchedule::Constant, 200);
    let limit = tr.states[0].consensus_limit();
    let view = record_view(&tr, &[], &[]).unwrap();
    for slot in 0..4 {
        let truth = &tr.states[0].clients[slot].origin;
        let est = z_inference_attack(&view, slot, 1).unwrap();
        let rel = (&est - truth).norm() / (truth - &limit).norm();
        assert!(rel <= 1e-3, "slot {slot}: {rel}");

        let paired = paired_for_slot(&tr, slot).unwrap();
        let pv = record_view(&paired, &[], &[]).unwrap();
        assert!(compare_views(&view, &pv).max_deviation <= 1e-9);
        assert!((z_inference_attack(&pv, slot, 1).unwrap() - &est).amax() <= 1e-12);
        // The paired client's real local model is different.
        assert!((&paired.states[0].clients[slot].origin - truth).norm() > 1e-3);
    }
}

#[test]
fn single_coordinate_dp_bound_is_tight() {
    let cfg = DpAuditConfig { levels: 16, bits: 4, pi_t: 3.0, a_max: 0.5, c4: 0.01, dim: 1, center: v(&[0.2]), grid: 41 };
    let row = &quantizer_dp_audit(&[cfg]).unwrap()[0];
    // c4 (l − 1) / (π a) = 0.01 · 15 / 1.5.
    assert!((row.delta_formula - 0.1).abs() < 1e-15);
    assert!((row.delta_measured - 0.1).abs() < 1e-9);
    assert!(row.pass);
}

#[test]
fn random_dp_configs_respect_the_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let configs: Vec<_> = (0..40).map(|_| random_dp_config(&mut rng)).collect();
    for row in quantizer_dp_audit(&configs).unwrap() {
        assert!(row.pass, "{row:?}");
        assert!(row.pairs > 0);
    }
}
