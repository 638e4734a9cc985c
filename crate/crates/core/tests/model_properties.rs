use fhrd::model::*;
use fhrd::sampling::{sample_chisq, sample_gamma, RngSeed};
use fhrd::special::log_gamma;
use proptest::prelude::*;

fn theta(tau2: f64, alpha: f64, gamma: f64) -> Theta {
    Theta { tau2, alpha, gamma }
}

proptest! {
    #[test]
    fn shrinkage_weight_in_unit_interval(
        tau2 in 0.0f64..50.0, alpha in 0.01f64..50.0, gamma in 0.01f64..20.0,
        v in 1e-3f64..100.0, n in 1u32..60,
    ) {
        let s = shrinkage(theta(tau2, alpha, gamma), v, n).unwrap();
        prop_assert!(s.a > 0.0);
        prop_assert!(s.b > 0.0 && s.b <= 1.0);
        prop_assert_eq!(s.b == 1.0, tau2 == 0.0 || tau2 * s.a < f64::EPSILON / 2.0);
    }

    #[test]
    fn shrinkage_monotonicity(
        tau2 in 0.01f64..50.0, alpha in 0.01f64..50.0, gamma in 0.01f64..20.0,
        v in 1e-3f64..100.0, n in 1u32..60, step in 0.01f64..2.0,
    ) {
        let b = |t: f64, a: f64, v: f64| shrinkage(theta(t, a, gamma), v, n).unwrap().b;
        let b0 = b(tau2, alpha, v);
        // A larger variance statistic means a noisier direct estimate and
        // more weight on the synthetic mean; a larger α the opposite.
        prop_assert!(b(tau2, alpha, v + step) > b0);
        prop_assert!(b(tau2, alpha + step, v) < b0);
        prop_assert!(b(tau2 + step, alpha, v) < b0);
    }

    #[test]
    fn dual_scale_matches_convex_combination(
        alpha in 1e-3f64..100.0, gamma in 1e-3f64..100.0, v in 1e-3f64..1e3, n in 1u32..200,
    ) {
        let s = dual_shrunk_scale(alpha, gamma, v, n).unwrap();
        let n1 = f64::from(n) + 1.0;
        prop_assert!((s - (v + gamma) / (n1 + alpha)).abs() <= 1e-14 * s);
        let lo = (v / n1).min(gamma / alpha);
        let hi = (v / n1).max(gamma / alpha);
        prop_assert!(s >= lo * (1.0 - 1e-12) && s <= hi * (1.0 + 1e-12));
    }
}

/// Trapezoid rule for `∫ f(v) dv` over `v = γ·e^x`; smooth and
/// exponentially decaying in both directions, so the rule converges fast.
fn log_grid_integral(gamma: f64, f: impl Fn(f64) -> f64) -> f64 {
    let (lo, hi, h) = (-80.0, 140.0, 2e-3);
    let steps = ((hi - lo) / h) as usize;
    let mut total = 0.0;
    for i in 0..=steps {
        let x = lo + h * i as f64;
        let v = gamma * x.exp();
        let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
        total += w * f(v) * v;
    }
    total * h
}

#[test]
fn marginal_density_normalizes_on_grid() {
    for alpha in [1.0, 4.0] {
        for gamma in [1.0, 2.0] {
            for n in [5, 10, 30] {
                let mass = log_grid_integral(gamma, |v| log_marginal_v_density(alpha, gamma, n, v).unwrap().exp());
                assert!((mass - 1.0).abs() < 1e-8, "alpha {alpha} gamma {gamma} n {n}: {mass}");
            }
        }
    }
}

#[test]
fn marginal_density_moments_match_closed_form() {
    let (alpha, gamma, n) = (4.0, 2.0, 10);
    let f = |v: f64| log_marginal_v_density(alpha, gamma, n, v).unwrap().exp();
    let inv = log_grid_integral(gamma, |v| f(v) / (v + gamma));
    assert!((inv - 1.0 / 7.0).abs() < 1e-10);
    assert!((inv - analytic_moment_v(alpha, gamma, n, 0.0, 1.0).unwrap()).abs() < 1e-10);
    for (l, k) in [(1.0, 1.0), (0.5, 2.0), (2.0, 3.0), (-1.0, 0.0)] {
        let grid = log_grid_integral(gamma, |v| f(v) * v.powf(l) / (v + gamma).powf(k));
        let closed = analytic_moment_v(alpha, gamma, n, l, k).unwrap();
        assert!((grid - closed).abs() < 1e-9 * closed, "({l},{k}) {grid} vs {closed}");
        let grid = log_grid_integral(gamma, |v| f(v) * v.powf(l) / (v + gamma).powf(k) * (v + gamma).ln());
        let closed = analytic_moment_v_log(alpha, gamma, n, l, k).unwrap();
        assert!((grid - closed).abs() < 1e-9 * closed.abs(), "log ({l},{k}) {grid} vs {closed}");
    }
    let mean_log = log_grid_integral(gamma, |v| f(v) * (v + gamma).ln());
    let second = log_grid_integral(gamma, |v| f(v) * (v + gamma).ln().powi(2));
    assert!((mean_log - expected_log_v_plus_gamma(alpha, gamma, n).unwrap()).abs() < 1e-10);
    let var = second - mean_log * mean_log;
    assert!((var - variance_log_v_plus_gamma(alpha, gamma, n).unwrap()).abs() < 1e-9);
}

#[test]
fn marginal_expectation_of_ratio_by_monte_carlo() {
    let (alpha, gamma, n) = (4.0, 1.0, 10);
    let mut rng = RngSeed::new(11).rng();
    let draws = 200_000;
    let xs: Vec<f64> = (0..draws)
        .map(|_| {
            let eta = sample_gamma(&mut rng, alpha / 2.0, 2.0 / gamma).unwrap();
            let v = sample_chisq(&mut rng, n).unwrap() / eta;
            v / (v + gamma)
        })
        .collect();
    let mean = xs.iter().sum::<f64>() / draws as f64;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws as f64 - 1.0)).sqrt();
    let se = sd / (draws as f64).sqrt();
    let want = f64::from(n) / (f64::from(n) + alpha);
    assert!((mean - want).abs() < 4.0 * se, "{mean} vs {want} (se {se})");
}

#[test]
fn posterior_mean_of_variance_by_monte_carlo() {
    let (alpha, gamma, n, v) = (4.0, 2.0, 10, 10.0);
    let want = conditional_sigma2_mean(alpha, gamma, n, v).unwrap();
    assert_eq!(want, 1.0);
    let mut rng = RngSeed::new(5).rng();
    let shape = 0.5 * (f64::from(n) + alpha);
    let scale = 2.0 / (v + gamma);
    let draws = 400_000;
    let xs: Vec<f64> = (0..draws).map(|_| 1.0 / sample_gamma(&mut rng, shape, scale).unwrap()).collect();
    let mean = xs.iter().sum::<f64>() / draws as f64;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws as f64 - 1.0)).sqrt();
    assert!((mean - want).abs() < 3.0 * sd / (draws as f64).sqrt(), "{mean}");
}

fn ln_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

#[test]
fn joint_density_integrates_to_brute_force_marginal() {
    let params = ModelParams::new(vec![10.0], 1.5, 3.0, 1.2).unwrap();
    let (y, v, n): (f64, f64, u32) = (11.3, 6.0, 8);
    let nf = f64::from(n);

    // Marginal of (y, V) by brute force: a 2-d grid over (ξ, log η) of the
    // hierarchical densities, with no closed-form integration.
    let ln_gamma_prior = |eta: f64| {
        let a = params.alpha / 2.0;
        a * (params.gamma / 2.0).ln() - log_gamma(a).unwrap() + (a - 1.0) * eta.ln() - params.gamma * eta / 2.0
    };
    let ln_v_given_eta = |eta: f64| {
        let h = nf / 2.0;
        h * eta.ln() - h * 2f64.ln() - log_gamma(h).unwrap() + (h - 1.0) * v.ln() - eta * v / 2.0
    };
    let (x_lo, x_hi, hx): (f64, f64, f64) = (-14.0, 6.0, 2e-3);
    let (xi_lo, xi_hi) = (params.beta[0] - 12.0, params.beta[0] + 12.0);
    let mut brute = 0.0;
    let mut x = x_lo;
    while x <= x_hi {
        let eta = x.exp();
        let sd = (1.0 / eta).sqrt().min(params.tau2.sqrt());
        let hxi = sd / 40.0;
        let mut inner = 0.0;
        let mut xi = xi_lo;
        while xi <= xi_hi {
            inner += (ln_normal(y, xi, 1.0 / eta) + ln_normal(xi, params.beta[0], params.tau2)).exp();
            xi += hxi;
        }
        inner *= hxi;
        brute += inner * (ln_gamma_prior(eta) + ln_v_given_eta(eta)).exp() * eta;
        x += hx;
    }
    brute *= hx;

    let mut via_joint = 0.0;
    let mut x = x_lo;
    while x <= x_hi {
        let eta = x.exp();
        via_joint += log_joint_y_v_eta_density(&params, &[1.0], y, v, n, eta).unwrap().exp() * eta;
        x += hx;
    }
    via_joint *= hx;
    assert!(((via_joint - brute) / brute).abs() < 1e-6, "{via_joint} vs {brute}");
}
