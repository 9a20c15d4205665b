use fedsplit::problem::{
    global_optimum, heterogeneity_gamma, make_quadratic_problem, ClientDataset, Curvature, ProblemConstants,
    ProblemSpec, QuadraticClientLoss,
};
use fedsplit::ModelVec;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar_loss(b: f64, weight: f64) -> QuadraticClientLoss {
    let data = ClientDataset { samples: vec![DVector::zeros(1)], batch_size: 1 };
    QuadraticClientLoss::new(DMatrix::identity(1, 1), DVector::from_vec(vec![b]), weight, data).unwrap()
}

#[test]
fn two_clients_on_a_line() {
    let losses = make_quadratic_problem(2, 1, 2.0, 0).unwrap();
    let mut b: Vec<f64> = losses.iter().map(|c| c.minimizer[0].abs()).collect();
    b.sort_by(f64::total_cmp);
    assert_eq!(b, vec![0.0, 2.0]);
    assert!(losses.iter().all(|c| c.weight == 0.5 && c.curvature == DMatrix::identity(1, 1)));

    // F(w) = ½ Σ p_i (w − b_i)² with b = {0, 2}: w* = 1, F* = 0.5, Γ = 0.5.
    let (w, f) = global_optimum(&losses).unwrap();
    assert!((w[0].abs() - 1.0).abs() < 1e-12);
    assert!((f - 0.5).abs() < 1e-12);
    assert!((heterogeneity_gamma(&losses).unwrap() - 0.5).abs() < 1e-12);
}

/// Minimum of `Σ p_i F_i` by plain gradient descent, independent of the
/// Cholesky solve used by the library.
fn descend(losses: &[QuadraticClientLoss]) -> f64 {
    let d = losses[0].dim();
    let l = losses.iter().map(|c| c.eigen_range().1).fold(0.0, f64::max);
    let mut w = ModelVec::zeros(d);
    for _ in 0..20_000 {
        let g = losses.iter().fold(ModelVec::zeros(d), |acc, c| acc + c.weight * c.gradient(&w));
        w -= g / l;
    }
    losses.iter().map(|c| c.weight * c.value(&w)).sum()
}

#[test]
fn heterogeneity_matches_numeric_minimization() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let d = 3;
    let losses: Vec<_> = (0..3)
        .map(|_| {
            let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
            let a = &m * m.transpose() + DMatrix::identity(d, d) * 0.5;
            let b = DVector::from_fn(d, |_, _| rng.gen_range(-3.0..3.0));
            let data = ClientDataset { samples: vec![DVector::zeros(d)], batch_size: 1 };
            QuadraticClientLoss::new(a, b, 1.0 / 3.0, data).unwrap()
        })
        .collect();
    // Every F_i* is zero, so Γ is the minimum of the weighted sum.
    let oracle = descend(&losses);
    assert!((heterogeneity_gamma(&losses).unwrap() - oracle).abs() < 1e-9);
}

#[test]
fn minibatch_gradient_is_unbiased() {
    let spec = ProblemSpec {
        samples_per_client: 10,
        batch_size: 3,
        sample_noise: 1.0,
        curvature: Curvature::Spectrum { min_eig: 1.0, max_eig: 3.0 },
        ..ProblemSpec::new(2, 4, 1.0, 9)
    };
    let problem = spec.build().unwrap();
    let client = &problem.clients[1];
    let w = DVector::from_vec(vec![0.5, -1.0, 2.0, 0.0]);
    let draws = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mean = ModelVec::zeros(4);
    for _ in 0..draws {
        mean += client.minibatch_gradient(&w, &mut rng);
    }
    mean /= draws as f64;
    // The full gradient of F_i is A (w − b − mean δ).
    let shift = client.data.samples.iter().fold(ModelVec::zeros(4), |a, s| a + s) / 10.0;
    let full = &client.curvature * (&w - &client.minimizer - shift);
    let tol = 4.0 * client.sigma().sqrt() / (draws as f64).sqrt();
    assert!((&mean - &full).norm() <= tol, "{} > {tol}", (&mean - &full).norm());
}

#[test]
fn sigma_matches_monte_carlo_variance() {
    let spec = ProblemSpec { samples_per_client: 6, batch_size: 2, sample_noise: 0.7, ..ProblemSpec::new(1, 2, 0.0, 4) };
    let problem = spec.build().unwrap();
    let c = &problem.clients[0];
    let w = DVector::from_vec(vec![1.0, 1.0]);
    let shift = c.data.samples.iter().fold(ModelVec::zeros(2), |a, s| a + s) / 6.0;
    let full = &c.curvature * (&w - &c.minimizer - shift);
    // Exhaustive over all 15 batches of two distinct samples.
    let mut var = 0.0;
    let mut n = 0;
    for i in 0..6 {
        for j in i + 1..6 {
            var += (c.stochastic_gradient(&w, &[i, j]).unwrap() - &full).norm_squared();
            n += 1;
        }
    }
    assert!((var / n as f64 - c.sigma()).abs() < 1e-12);
}

#[test]
fn constants_bound_gradients_in_the_ball() {
    let spec = ProblemSpec {
        samples_per_client: 5,
        batch_size: 2,
        sample_noise: 0.3,
        curvature: Curvature::Spectrum { min_eig: 0.5, max_eig: 2.0 },
        ..ProblemSpec::new(5, 3, 0.8, 2)
    };
    let problem = spec.build().unwrap();
    let k = ProblemConstants::compute(&problem, 2.0).unwrap();
    assert!(k.mu > 0.0 && k.mu <= k.l);
    assert!((k.w_max_norm - (k.w_star.norm() + 2.0)).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let dir = DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        let w = &k.w_star + dir.normalize() * rng.gen_range(0.0..2.0);
        assert!(k.in_ball(&w));
        for c in &problem.clients {
            let second_moment = c.gradient(&w).norm_squared() + c.sigma();
            assert!(second_moment <= k.g + 1e-9);
        }
    }
}

#[test]
fn rejects_bad_losses() {
    let data = ClientDataset { samples: vec![DVector::zeros(2)], batch_size: 1 };
    let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    assert!(QuadraticClientLoss::new(not_pd, DVector::zeros(2), 1.0, data.clone()).is_err());
    let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
    assert!(QuadraticClientLoss::new(asym, DVector::zeros(2), 1.0, data.clone()).is_err());
    assert!(QuadraticClientLoss::new(DMatrix::identity(2, 2), DVector::zeros(2), 1.5, data).is_err());
    assert!(global_optimum(&[scalar_loss(0.0, 0.5)]).is_err());
}

#[test]
fn loss_survives_json_roundtrip() {
    let l = scalar_loss(1.25, 1.0);
    let text = serde_json::to_string(&l).unwrap();
    let back: QuadraticClientLoss = serde_json::from_str(&text).unwrap();
    assert_eq!(back, l);
}

proptest! {
    #[test]
    fn optimum_has_zero_gradient(n in 1usize..6, d in 1usize..5, spread in 0.0f64..3.0, seed in 0u64..1000) {
        let spec = ProblemSpec {
            curvature: Curvature::Spectrum { min_eig: 0.5, max_eig: 4.0 },
            ..ProblemSpec::new(n, d, spread, seed)
        };
        let p = spec.build().unwrap();
        let (w, f) = global_optimum(&p.clients).unwrap();
        prop_assert!(p.gradient(&w).norm() < 1e-9 * (1.0 + w.norm()));
        prop_assert!((p.value(&w) - f).abs() < 1e-12 * (1.0 + f));
        // Any other point is no better.
        let probe = &w + DVector::from_element(d, 0.1);
        prop_assert!(p.value(&probe) >= f);
    }

    #[test]
    fn gradient_matches_finite_differences(seed in 0u64..500, x in prop::collection::vec(-3.0f64..3.0, 3)) {
        let spec = ProblemSpec {
            curvature: Curvature::Spectrum { min_eig: 1.0, max_eig: 2.0 },
            ..ProblemSpec::new(1, 3, 1.0, seed)
        };
        let c = &spec.build().unwrap().clients[0];
        let w = DVector::from_vec(x);
        let g = c.gradient(&w);
        let h = 1e-5;
        for r in 0..3 {
            let mut e = DVector::zeros(3);
            e[r] = h;
            let fd = (c.value(&(&w + &e)) - c.value(&(&w - &e))) / (2.0 * h);
            prop_assert!((fd - g[r]).abs() < 1e-6);
        }
    }

    #[test]
    fn target_gamma_is_exact(target in 0.01f64..5.0, seed in 0u64..100) {
        let spec = ProblemSpec { target_gamma: Some(target), ..ProblemSpec::new(6, 3, 1.0, seed) };
        let p = spec.build().unwrap();
        prop_assert!((heterogeneity_gamma(&p.clients).unwrap() - target).abs() < 1e-9 * target.max(1.0));
    }
}
