use fhrd::estimation::{fit, FitOptions};
use fhrd::model::{shrinkage, AreaRecord, ModelParams};
use fhrd::prediction::*;
use fhrd::sampling::{generate_fhrd, intercept_design, RngSeed};
use proptest::prelude::*;

fn area(y: f64, v: f64, n: u32) -> AreaRecord {
    AreaRecord { area_id: "a".into(), y, v, n, z: vec![1.0] }
}

/// Posterior shrinkage by the trapezoid rule over `x = ln η`, integrating the
/// unnormalised joint density of `(y, V, η)` directly.
fn trapezoid_shrinkage(p: &ModelParams, r: &AreaRecord, points: usize) -> f64 {
    let resid = r.y - p.synthetic(&r.z);
    let half = 0.5 * (f64::from(r.n) + 1.0 + p.alpha);
    let ln_kernel = |eta: f64| {
        let d = 1.0 + p.tau2 * eta;
        half * eta.ln() - 0.5 * eta * (r.v + p.gamma) - 0.5 * d.ln() - eta * resid * resid / (2.0 * d)
    };
    let (lo, hi) = (-40.0f64, 12.0f64);
    let h = (hi - lo) / (points - 1) as f64;
    let peak = (0..points).map(|i| ln_kernel((lo + h * i as f64).exp())).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..points {
        let eta = (lo + h * i as f64).exp();
        let w = if i == 0 || i + 1 == points { 0.5 } else { 1.0 };
        let k = w * (ln_kernel(eta) - peak).exp();
        num += k / (1.0 + p.tau2 * eta);
        den += k;
    }
    num / den
}

#[test]
fn shrinkage_matches_fine_grid_oracle() {
    let p = ModelParams::new(vec![10.0], 1.0, 1.0, 1.0).unwrap();
    let r = area(12.0, 11.0, 10);
    let e = bayes_shrinkage(&p, &r, &QuadratureOptions::default()).unwrap();
    let oracle = trapezoid_shrinkage(&p, &r, 1_000_000);
    assert!(((e - oracle) / oracle).abs() < 1e-8, "{e} vs {oracle}");
}

#[test]
fn shrinkage_matches_oracle_across_regimes() {
    for (tau2, alpha, gamma, y, v, n) in [
        (0.05, 0.3, 0.2, 25.0, 0.01, 2),
        (30.0, 12.0, 5.0, 9.0, 40.0, 50),
        (2.0, 4.0, 1.0, 10.0, 1e-3, 1),
        (0.5, 100.0, 30.0, -40.0, 2.0, 5),
    ] {
        let p = ModelParams::new(vec![10.0], tau2, alpha, gamma).unwrap();
        let r = area(y, v, n);
        let e = bayes_shrinkage(&p, &r, &QuadratureOptions::default()).unwrap();
        let oracle = trapezoid_shrinkage(&p, &r, 400_000);
        assert!(((e - oracle) / oracle).abs() < 1e-8, "{tau2} {alpha} {gamma}: {e} vs {oracle}");
    }
}

// Residuals far beyond √(V+γ) move the posterior mode of η well below the
// gamma-kernel mode.
#[test]
fn shrinkage_with_outlying_residual() {
    for (tau2, alpha, gamma, y, v, n) in [
        (0.0012358, 3.888, 1.1226, 55.57, 0.003492, 44),
        (0.017891, 2.3933, 0.12377, -28.57, 0.0019345, 27),
        (0.0039447, 0.3429, 0.48303, 55.95, 0.058355, 18),
        (0.24034, 1.1195, 0.082902, -18.99, 0.20016, 46),
        (1e-3, 50.0, 0.05, 60.0, 1e-3, 60),
    ] {
        let p = ModelParams::new(vec![10.0], tau2, alpha, gamma).unwrap();
        let r = area(y, v, n);
        let e = bayes_shrinkage(&p, &r, &QuadratureOptions::default()).unwrap();
        let oracle = trapezoid_shrinkage(&p, &r, 400_000);
        assert!(((e - oracle) / oracle).abs() < 1e-8, "{tau2} {alpha} {gamma}: {e} vs {oracle}");
    }
}

#[test]
fn doubling_subdivision_limit_is_stable() {
    let mut rng = RngSeed::new(4).rng();
    use rand::Rng;
    for _ in 0..200 {
        let p = ModelParams::new(
            vec![0.0],
            rng.random_range(0.01..20.0),
            rng.random_range(0.1..30.0),
            rng.random_range(0.1..10.0),
        )
        .unwrap();
        let r = area(rng.random_range(-15.0..15.0), rng.random_range(0.01..30.0), rng.random_range(1..40));
        let q = QuadratureOptions::default();
        let a = bayes_shrinkage(&p, &r, &q).unwrap();
        let b = bayes_shrinkage(&p, &r, &QuadratureOptions { max_intervals: 2 * q.max_intervals, ..q }).unwrap();
        assert!(((a - b) / a).abs() < 1e-9);
    }
}

#[test]
fn posterior_shrinkage_dominates_approximation() {
    // 10⁴ random draws of parameters and data
    let mut rng = RngSeed::new(10).rng();
    use rand::Rng;
    let q = QuadratureOptions::default();
    for _ in 0..10_000 {
        let p = ModelParams::new(
            vec![rng.random_range(-5.0..5.0)],
            rng.random_range(1e-3..50.0),
            rng.random_range(0.05..40.0),
            rng.random_range(0.05..20.0),
        )
        .unwrap();
        let r = area(rng.random_range(-20.0..20.0), rng.random_range(1e-3..60.0), rng.random_range(1..60));
        let e = bayes_shrinkage(&p, &r, &q).unwrap();
        let b = shrinkage(p.theta(), r.v, r.n).unwrap().b;
        assert!(e >= b - 1e-9 && e <= 1.0, "E {e} < B {b} at {p:?} {r:?}");
        let xb = predict_bayes(&p, &r, &q).unwrap();
        let xab = predict_ab(&p, &r).unwrap();
        assert!((xb - r.y).abs() >= (xab - r.y).abs() - 1e-9 * (1.0 + r.y.abs()));
    }
}

#[test]
fn zero_tau2_returns_synthetic_mean() {
    let p = ModelParams::new(vec![10.0], 0.0, 3.0, 1.0).unwrap();
    let r = area(17.0, 2.0, 6);
    assert_eq!(bayes_shrinkage(&p, &r, &QuadratureOptions::default()).unwrap(), 1.0);
    assert_eq!(predict_bayes(&p, &r, &QuadratureOptions::default()).unwrap(), 10.0);
    assert_eq!(predict_ab(&p, &r).unwrap(), 10.0);
}

#[test]
fn large_tau2_returns_direct_estimate() {
    let p = ModelParams::new(vec![10.0], 1e12, 3.0, 1.0).unwrap();
    let r = area(17.0, 2.0, 6);
    assert!((predict_ab(&p, &r).unwrap() - 17.0).abs() < 1e-9);
}

#[test]
fn identical_areas_get_identical_predictions() {
    let data: Vec<_> = (0..8).map(|i| AreaRecord { area_id: i.to_string(), ..area(4.0, 1.5, 9) }).collect();
    let mut noisy = data.clone();
    noisy[0].y = 6.0;
    noisy[1].v = 3.0;
    let f = fit(&noisy, &FitOptions::default()).unwrap();
    let set = predict_aeb(&f, &data, Some(&QuadratureOptions::default())).unwrap();
    for a in &set.areas {
        assert_eq!(a.xi_aeb, set.areas[0].xi_aeb);
        assert_eq!(a.xi_bayes, set.areas[0].xi_bayes);
    }
}

#[test]
fn aeb_is_plug_in_of_fitted_parameters() {
    let p = ModelParams::new(vec![10.0], 1.0, 4.0, 1.0).unwrap();
    let d = generate_fhrd(&p, &intercept_design(30, 10), RngSeed::new(6)).unwrap().records;
    let f = fit(&d, &FitOptions::default()).unwrap();
    let set = predict_aeb(&f, &d, None).unwrap();
    for (a, r) in set.areas.iter().zip(&d) {
        assert_eq!(a.xi_aeb, predict_ab(&f.params, r).unwrap());
        assert!(a.e.is_none() && a.xi_bayes.is_none());
    }
}

#[test]
fn known_parameter_ab_beats_estimated_plug_in() {
    // At α ≤ 2 the direct estimator has infinite error variance, and so does
    // any plug-in whose τ̂² can be large.
    let p = ModelParams::new(vec![10.0], 1.0, 4.0, 1.0).unwrap();
    let design = intercept_design(30, 10);
    let (mut ab, mut aeb, mut count) = (0.0, 0.0, 0.0);
    for k in 0..400 {
        let d = generate_fhrd(&p, &design, RngSeed::new(8).substream(k)).unwrap();
        let f = fit(&d.records, &FitOptions::default()).unwrap();
        for (r, l) in d.records.iter().zip(&d.latents) {
            ab += (predict_ab(&p, r).unwrap() - l.xi).powi(2);
            aeb += (predict_ab(&f.params, r).unwrap() - l.xi).powi(2);
            count += 1.0;
        }
    }
    let (ab, aeb) = ((ab / count).sqrt(), (aeb / count).sqrt());
    assert!(aeb > ab, "{aeb} vs {ab}");
    assert!(aeb < 1.25 * ab, "{ab} {aeb}");
}

#[test]
fn benchmark_edge_cases() {
    let w = BenchmarkWeights::new(vec![0.5, 0.5, 0.0]).unwrap();
    let out = benchmark_adjust(&[1.0, 3.0, 7.0], &[2.0, 3.0, 9.0], &w).unwrap();
    assert_eq!(out, vec![1.5, 3.5, 7.0]);
    let same = benchmark_adjust(&[2.0, 3.0, 7.0], &[2.0, 3.0, 9.0], &w).unwrap();
    assert_eq!(same, vec![2.0, 3.0, 7.0]);
    assert!(BenchmarkWeights::new(vec![0.5, 0.6]).is_err());
    assert!(BenchmarkWeights::new(vec![1.5, -0.5]).is_err());
}

proptest! {
    #[test]
    fn ab_is_convex_and_monotone(
        tau2 in 0.0f64..20.0, alpha in 0.05f64..30.0, gamma in 0.05f64..10.0,
        y in -50.0f64..50.0, dy in 1e-3f64..5.0, v in 1e-3f64..50.0, n in 1u32..40, beta in -20.0f64..20.0,
    ) {
        let p = ModelParams::new(vec![beta], tau2, alpha, gamma).unwrap();
        let x = predict_ab(&p, &area(y, v, n)).unwrap();
        let (lo, hi) = (y.min(beta), y.max(beta));
        prop_assert!(x >= lo - 1e-12 && x <= hi + 1e-12);
        prop_assert!(predict_ab(&p, &area(y + dy, v, n)).unwrap() >= x);
    }

    #[test]
    fn benchmark_identity_holds(
        raw in prop::collection::vec((0.0f64..1.0, -100.0f64..100.0, -100.0f64..100.0), 1..60),
    ) {
        let total: f64 = raw.iter().map(|r| r.0).sum();
        prop_assume!(total > 1e-6);
        let w = BenchmarkWeights::normalized(raw.iter().map(|r| r.0).collect(), f64::INFINITY).unwrap();
        let xi: Vec<f64> = raw.iter().map(|r| r.1).collect();
        let y: Vec<f64> = raw.iter().map(|r| r.2).collect();
        let out = benchmark_adjust(&xi, &y, &w).unwrap();
        let target: f64 = w.as_slice().iter().zip(&y).map(|(a, b)| a * b).sum();
        let got: f64 = w.as_slice().iter().zip(&out).map(|(a, b)| a * b).sum();
        prop_assert!((got - target).abs() <= 1e-10 * target.abs().max(1.0));
        for ((o, x), wi) in out.iter().zip(&xi).zip(w.as_slice()) {
            if *wi == 0.0 {
                prop_assert_eq!(o, x);
            }
        }
    }
}
