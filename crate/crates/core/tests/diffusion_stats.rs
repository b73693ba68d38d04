mod common;

use ctpe::basis::FourierBasis;
use ctpe::diffusion::{simulate_trajectory, DiffusionModel, RewardSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn silent(d: usize) -> RewardSpec {
    RewardSpec::constant(d, 0.0, 0.0).unwrap()
}

#[test]
fn observations_are_uniform_ks() {
    let model = DiffusionModel::torus_brownian(1, 1.0).unwrap();
    let n = 10_000;
    // spacing 1.0 makes consecutive observations nearly independent
    let traj = simulate_trajectory(&model, &silent(1), (n - 1) as f64, 1.0, 1, 99, false).unwrap();
    assert_eq!(traj.len(), n);
    let mut xs: Vec<f64> = traj.states().map(|x| x[0]).collect();
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / nf).max((i + 1) as f64 / nf - x))
        .fold(0.0, f64::max);
    assert!(ks < 1.36 / nf.sqrt(), "KS = {ks}");
}

#[test]
fn marginal_at_fixed_index_is_uniform() {
    let model = DiffusionModel::torus_brownian(1, 1.0).unwrap();
    let n = 2_000;
    let mut xs: Vec<f64> = (0..n)
        .map(|s| simulate_trajectory(&model, &silent(1), 0.5, 0.1, 1, s, false).unwrap().state(3)[0])
        .collect();
    xs.sort_by(f64::total_cmp);
    let nf = n as f64;
    let ks = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / nf).max((i + 1) as f64 / nf - x))
        .fold(0.0, f64::max);
    assert!(ks < 1.36 / nf.sqrt(), "KS = {ks}");
}

#[test]
fn increment_variance() {
    let sigma = 0.8;
    let model = DiffusionModel::torus_brownian(1, sigma).unwrap();
    let (eta, sub) = (0.1, 10);
    let traj = simulate_trajectory(&model, &silent(1), 1000.0, eta, sub, 5, true).unwrap();
    let dt = eta / sub as f64;
    let incs: Vec<f64> = (1..traj.inner_len())
        .take(100_000)
        .map(|j| {
            let d = traj.inner_state(j)[0] - traj.inner_state(j - 1)[0];
            // undo the wrap: true increments are far smaller than 1/2
            d - d.round()
        })
        .collect();
    assert_eq!(incs.len(), 100_000);
    let sq: Vec<f64> = incs.iter().map(|d| d * d).collect();
    let (var, se) = common::mean_and_stderr(&sq);
    let expect = sigma * sigma * dt;
    assert!((var - expect).abs() <= 3.0 * se, "{var} vs {expect} (se {se})");
}

#[test]
fn wrapped_fourier_moments_match_exact_law() {
    // E[cos 2π(X_t − X_0)] = e^{−2π²σ²t} for Brownian motion, regardless of wrapping
    let sigma = 1.0;
    let model = DiffusionModel::torus_brownian(1, sigma).unwrap();
    let eta = 0.05;
    let traj = simulate_trajectory(&model, &silent(1), 2000.0, eta, 1, 8, false).unwrap();
    let vals: Vec<f64> = (1..traj.len())
        .map(|k| (2.0 * std::f64::consts::PI * (traj.state(k)[0] - traj.state(k - 1)[0])).cos())
        .collect();
    let (m, se) = common::mean_and_stderr(&vals);
    let expect = (-2.0 * std::f64::consts::PI.powi(2) * sigma * sigma * eta).exp();
    assert!((m - expect).abs() <= 4.0 * se, "{m} vs {expect} (se {se})");
}

#[test]
fn deterministic_trajectories_serialize_identically() {
    let model = DiffusionModel::torus_brownian(2, 0.7).unwrap();
    let r = RewardSpec::constant(2, 0.2, 0.3).unwrap();
    let dump = || {
        let t = simulate_trajectory(&model, &r, 3.0, 0.1, 4, 17, true).unwrap();
        let mut a = Vec::new();
        t.write_csv(&mut a).unwrap();
        t.write_inner_csv(&mut a).unwrap();
        a
    };
    assert_eq!(dump(), dump());
}

/// `(P_t ψ − ψ)/t` at small `t` by antithetic Euler–Maruyama draws.
fn semigroup_derivative(model: &DiffusionModel, basis: &FourierBasis, x: &[f64], t: f64, pairs: usize, seed: u64) -> Vec<f64> {
    let d = x.len();
    let sigma = model.sigma();
    let drift = model.drift(x);
    let base = basis.features(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0; basis.len()];
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for _ in 0..pairs {
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            let noise = sigma * t.sqrt() * z;
            plus[j] = x[j] + drift[j] * t + noise;
            minus[j] = x[j] + drift[j] * t - noise;
        }
        let fp = basis.features(&plus);
        let fm = basis.features(&minus);
        for i in 0..acc.len() {
            acc[i] += 0.5 * (fp[i] + fm[i]) - base[i];
        }
    }
    acc.iter().map(|a| a / (pairs as f64 * t)).collect()
}

#[test]
fn langevin_generator_matches_semigroup_derivative() {
    use rand::Rng;
    let model = DiffusionModel::torus_langevin(2, 0.9, 0.4, 1.0).unwrap();
    let basis = FourierBasis::build(2, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..10 {
        let x = [rng.random::<f64>(), rng.random::<f64>()];
        let exact = basis.generator_action(&model, &x);
        let mc = semigroup_derivative(&model, &basis, &x, 1e-4, 40_000, trial);
        let diff: f64 = exact.iter().zip(&mc).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(diff <= 0.05 * exact.norm(), "x={x:?}: |Δ|={diff}, |Aψ|={}", exact.norm());
    }
}
