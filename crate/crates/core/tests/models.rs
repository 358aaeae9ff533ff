use pbl_core::blbm::{blbm_fit, blbm_lower_bound, BlbmConfig, NoiseVariance};
use pbl_core::bnn::{bnn_init, elbo_and_grad, BnnTrainConfig, MlpArchitecture, VariationalParams};
use pbl_core::data::Dataset;
use pbl_core::features::{make_feature_map, FeatureMap};
use pbl_core::model::QModel;
use pbl_core::numerics::{standard_normal_vec, Matrix, RandomSeed};
use pbl_core::pessimism::{argmax, ActionValues, ClosedFormBound, LowerBoundFn, LowerBoundSpec};
use pbl_core::posterior::{Covariance, GaussianPosterior};
use proptest::prelude::*;
use rand::Rng;

fn linear_data(d: usize, n: usize, noise: f64, seed: u64) -> (Dataset, Vec<f64>) {
    let mut rng = RandomSeed(seed).rng();
    let beta = standard_normal_vec(&mut rng, 2 * d);
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    for _ in 0..n {
        let s = standard_normal_vec(&mut rng, d);
        let a = rng.random_range(0..2);
        let mean: f64 = beta[a * d..(a + 1) * d].iter().zip(&s).map(|(b, x)| b * x).sum();
        rewards.push(mean + noise * standard_normal_vec(&mut rng, 1)[0]);
        states.push(s);
        actions.push(a);
    }
    (Dataset::new(states, actions, rewards, None, 2).unwrap(), beta)
}

/// Dense solve by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

#[test]
fn rff_inner_products_approximate_gaussian_kernel() {
    let gamma = 0.5;
    let map = make_feature_map(3, 20_000, gamma, 1, RandomSeed(1)).unwrap();
    let mut rng = RandomSeed(2).rng();
    for _ in 0..20 {
        let x = standard_normal_vec(&mut rng, 3);
        let y: Vec<f64> = x.iter().map(|v| v + 0.5 * standard_normal_vec(&mut rng, 1)[0]).collect();
        let fx = map.encode_state(&x).unwrap();
        let fy = map.encode_state(&y).unwrap();
        let approx: f64 = fx.iter().zip(&fy).map(|(a, b)| a * b).sum();
        let d2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        assert!((approx - (-gamma * d2).exp()).abs() < 0.03, "{approx} vs {}", (-gamma * d2).exp());
    }
}

#[test]
fn blbm_mean_is_the_ridge_solution() {
    let (data, _) = linear_data(3, 300, 0.3, 5);
    let map = FeatureMap::linear(3, 2, true).unwrap();
    let (sigma2, tau2) = (0.09, 2.0);
    let cfg = BlbmConfig {
        prior_variance: tau2,
        noise_variance: NoiseVariance::Fixed(sigma2),
    };
    let post = blbm_fit(&data, &map, &cfg).unwrap();
    let p = map.joint_dim();
    let mut gram = vec![vec![0.0; p]; p];
    let mut xty = vec![0.0; p];
    for ((s, &a), &r) in data.states.iter().zip(&data.actions).zip(&data.rewards) {
        let phi = map.encode_state_action(s, a).unwrap();
        for i in 0..p {
            xty[i] += phi[i] * r;
            for j in 0..p {
                gram[i][j] += phi[i] * phi[j];
            }
        }
    }
    for (i, row) in gram.iter_mut().enumerate() {
        row[i] += sigma2 / tau2;
    }
    let ridge = solve(gram.clone(), xty);
    for (u, v) in post.mean().iter().zip(&ridge) {
        assert!((u - v).abs() < 1e-10);
    }
    // Σ̂ (ΦᵀΦ + λI) = σ² I
    let cov = post.covariance_matrix();
    for i in 0..p {
        for j in 0..p {
            let v: f64 = (0..p).map(|k| cov.row(i)[k] * gram[k][j]).sum();
            let want = if i == j { sigma2 } else { 0.0 };
            assert!((v - want).abs() < 1e-10);
        }
    }
}

#[test]
fn blbm_recovers_coefficients_with_many_samples() {
    let (data, beta) = linear_data(2, 20_000, 0.1, 8);
    let map = FeatureMap::linear(2, 2, false).unwrap();
    let post = blbm_fit(&data, &map, &BlbmConfig::default()).unwrap();
    for (u, v) in post.mean().iter().zip(&beta) {
        assert!((u - v).abs() < 0.01);
    }
}

fn random_posterior(p: usize, seed: u64) -> GaussianPosterior {
    let mut rng = RandomSeed(seed).rng();
    let a = Matrix::from_row_major(p, p, standard_normal_vec(&mut rng, p * p)).unwrap();
    let mut cov = a.matmul(&a.transpose()).unwrap().scale(0.1);
    cov.add_diag(0.05);
    GaussianPosterior::new(
        standard_normal_vec(&mut rng, p),
        Covariance::Full(pbl_core::numerics::SpdMatrix::new(cov).unwrap()),
    )
    .unwrap()
}

fn bounds(d: usize, alpha: f64, samples: usize, seed: u64, s: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let map = FeatureMap::linear(d, 2, false).unwrap();
    let post = random_posterior(2 * d, seed);
    let cf = ClosedFormBound::new(map.clone(), post.clone(), alpha)
        .unwrap()
        .action_values(s)
        .unwrap();
    let mc = LowerBoundFn::build(LowerBoundSpec {
        model: QModel::Linear { map: map.clone() },
        posterior: post.clone(),
        alpha,
        num_samples: samples,
        seed: RandomSeed(seed + 1),
    })
    .unwrap()
    .action_values(s)
    .unwrap();
    let mean = (0..2)
        .map(|a| post.mean_prediction(&map.encode_state_action(s, a).unwrap()))
        .collect();
    (cf, mc, mean)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sampled_bound_between_closed_form_and_mean(
        d in 1usize..4, seed in 0u64..1000, alpha in 0.01f64..0.5,
        s in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let (cf, mc, mean) = bounds(d, alpha, 2000, seed, &s[..d]);
        for a in 0..2 {
            prop_assert!(cf[a] <= mc[a] + 1e-12);
            prop_assert!(mc[a] <= mean[a] + 1e-12);
        }
    }

    #[test]
    fn bounds_decrease_as_alpha_shrinks(
        d in 1usize..4, seed in 0u64..1000, alpha in 0.02f64..0.5, shrink in 0.1f64..0.9,
        s in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let (cf_hi, mc_hi, _) = bounds(d, alpha, 1000, seed, &s[..d]);
        let (cf_lo, mc_lo, _) = bounds(d, alpha * shrink, 1000, seed, &s[..d]);
        for a in 0..2 {
            prop_assert!(cf_lo[a] <= cf_hi[a]);
            // same draws, wider filter: the accepted set only grows
            prop_assert!(mc_lo[a] <= mc_hi[a]);
        }
    }

    #[test]
    fn closed_form_is_the_ellipsoid_minimum(seed in 0u64..1000, alpha in 0.01f64..0.5) {
        let post = random_posterior(3, seed);
        let phi = [0.3, -1.0, 0.7];
        let lb = blbm_lower_bound(&post, &phi, alpha).unwrap();
        // the minimizer ŵ − r Σφ / √(φᵀΣφ) lies on the boundary and attains lb
        let cov = post.covariance_matrix();
        let sphi = cov.matvec(&phi).unwrap();
        let sd = post.variance_along(&phi).unwrap().sqrt();
        let r = pbl_core::blbm::credible_radius(alpha, 3).unwrap();
        let w: Vec<f64> = post.mean().iter().zip(&sphi).map(|(m, v)| m - r * v / sd).collect();
        let val: f64 = w.iter().zip(&phi).map(|(a, b)| a * b).sum();
        prop_assert!((val - lb).abs() < 1e-9);
        prop_assert!((post.mahalanobis_sq(&w).unwrap() - r * r).abs() < 1e-8 * r * r);
    }

    #[test]
    fn argmax_ignores_common_shifts(v in prop::collection::vec(-10.0f64..10.0, 1..6), c in -100.0f64..100.0) {
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let a = argmax(&v);
        let b = argmax(&shifted);
        prop_assert!(v[b] == v[a] || (shifted[a] - shifted[b]).abs() < 1e-9);
    }

    #[test]
    fn dominant_action_is_chosen(v in prop::collection::vec(-10.0f64..10.0, 2..6), k in 0usize..6) {
        let k = k % v.len();
        let mut v = v;
        v[k] = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
        prop_assert_eq!(argmax(&v), k);
    }
}

fn fd_elbo_check(seed: u64, hidden: Vec<usize>) -> f64 {
    let arch = MlpArchitecture::new(2, hidden, 2).unwrap();
    assert!(arch.param_count() <= 50);
    let mut rng = RandomSeed(seed).rng();
    let n = 12;
    let states: Vec<Vec<f64>> = (0..n).map(|_| standard_normal_vec(&mut rng, 2)).collect();
    let actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
    let rewards = standard_normal_vec(&mut rng, n);
    let data = Dataset::new(states, actions, rewards, None, 2).unwrap();
    let mut params = bnn_init(&arch, RandomSeed(seed + 100));
    // spread the scales so softplus is not flat
    params.rho.iter_mut().for_each(|r| *r = -1.0 + rng.random::<f64>());
    let p = arch.param_count();
    let draws = Matrix::from_row_major(2, p, standard_normal_vec(&mut rng, 2 * p)).unwrap();
    let cfg = BnnTrainConfig {
        noise_variance: 0.5,
        ..BnnTrainConfig::default()
    };
    let batch: Vec<usize> = (0..n).collect();
    let g = elbo_and_grad(&params, &arch, &data, &batch, &cfg, &draws).unwrap();
    let elbo = |q: &VariationalParams| elbo_and_grad(q, &arch, &data, &batch, &cfg, &draws).unwrap().elbo;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for j in 0..p {
        for which in 0..2 {
            let mut up = params.clone();
            let mut dn = params.clone();
            let (u, d, analytic) = if which == 0 {
                (&mut up.mu[j], &mut dn.mu[j], g.grad_mu[j])
            } else {
                (&mut up.rho[j], &mut dn.rho[j], g.grad_rho[j])
            };
            *u += h;
            *d -= h;
            let fd = (elbo(&up) - elbo(&dn)) / (2.0 * h);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-2);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn elbo_gradients_match_finite_differences() {
    for seed in 0..5 {
        let hidden = if seed % 2 == 0 { vec![4] } else { vec![3, 3] };
        let worst = fd_elbo_check(seed, hidden);
        assert!(worst <= 1e-4, "seed {seed}: {worst}");
    }
}
