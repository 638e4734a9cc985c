use std::sync::atomic::{AtomicUsize, Ordering};

use fhrd::estimation::{fit, FitOptions, FitResult};
use fhrd::model::{AreaRecord, ModelParams};
use fhrd::prediction::{benchmark_adjust, benchmark_gap, predict_ab, predict_aeb, BenchmarkWeights};
use fhrd::sampling::{generate_fhrd, intercept_design, RngSeed};
use fhrd::uncertainty::*;
use fhrd::FhrdError;

fn dataset(m: usize, alpha: f64, seed: u64) -> (Vec<AreaRecord>, FitResult) {
    let p = ModelParams::new(vec![10.0], 1.0, alpha, 1.0).unwrap();
    let d = generate_fhrd(&p, &intercept_design(m, 10), RngSeed::new(seed)).unwrap().records;
    let f = fit(&d, &FitOptions::default()).unwrap();
    (d, f)
}

fn config(replicates: usize, seed: u64) -> BootstrapConfig {
    BootstrapConfig { replicates, seed: RngSeed::new(seed) }
}

fn skewed_weights(m: usize) -> BenchmarkWeights {
    let mut w: Vec<f64> = (0..m).map(|i| (i % 5) as f64).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    BenchmarkWeights::normalized(w, 1e-9).unwrap()
}

#[test]
fn refit_equal_to_fit_gives_zero_corrections() {
    let (d, f) = dataset(20, 4.0, 1);
    let c = bootstrap_components_with(&f.params, &d, &config(50, 2), None, |_| Ok(f.params.clone())).unwrap();
    assert!(c.g12_star.iter().chain(&c.g2_star).chain(&c.g3_star).all(|&x| x == 0.0));
    assert_eq!((c.replicates_used, c.dropped), (50, 0));
}

#[test]
fn report_identity_and_nonnegative_g2() {
    let (d, f) = dataset(30, 1.0, 3);
    for replicates in [1, 7, 60] {
        let r = mse_aeb(&f, &d, &config(replicates, 4), &FitOptions::default()).unwrap();
        assert_eq!(r.replicates, replicates);
        for a in &r.areas {
            assert_eq!(a.mse_aeb, a.g11 - a.g12 + a.g2 - 2.0 * a.g3);
            assert!(a.g2 >= 0.0);
            assert!(a.mse_cab.is_none() && a.j_star.is_none());
        }
    }
}

#[test]
fn zero_replicates_rejected() {
    let (d, f) = dataset(10, 4.0, 3);
    assert!(matches!(mse_aeb(&f, &d, &config(0, 1), &FitOptions::default()), Err(FhrdError::InvalidInput(_))));
}

#[test]
fn report_independent_of_thread_count() {
    let (d, f) = dataset(30, 4.0, 5);
    let w = skewed_weights(30);
    let reports: Vec<MseReport> = [1, 4, 8]
        .iter()
        .map(|&t| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            pool.install(|| mse_cab(&f, &d, &w, &config(80, 6), &FitOptions::default()).unwrap())
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0], reports[2]);
}

#[test]
fn benchmark_terms() {
    let (d, f) = dataset(30, 4.0, 7);
    let w = skewed_weights(30);
    let r = mse_cab(&f, &d, &w, &config(60, 8), &FitOptions::default()).unwrap();
    let xi: Vec<f64> = d.iter().map(|x| predict_ab(&f.params, x).unwrap()).collect();
    let y: Vec<f64> = d.iter().map(|x| x.y).collect();
    let gap = benchmark_gap(&xi, &y, &w);
    let ss = w.sum_of_squares();
    for (i, a) in r.areas.iter().enumerate() {
        let sq = a.squared_gap.unwrap();
        assert!((sq - gap * gap).abs() <= 1e-12 * sq.max(1e-300));
        let wi = w.as_slice()[i];
        if wi == 0.0 {
            assert_eq!(a.mse_cab, Some(a.mse_aeb));
        } else {
            let want = a.mse_aeb + wi * wi / (ss * ss) * sq + 2.0 * wi / ss * a.j_star.unwrap();
            assert_eq!(a.mse_cab, Some(want));
        }
    }
    let wc = r.weight_concentration.unwrap();
    assert!((wc - 30.0 * ss).abs() < 1e-12 * wc);
    let j = j_star(&f, &d, &w, &config(60, 8), &FitOptions::default()).unwrap();
    let from_report: Vec<f64> = r.areas.iter().map(|a| a.j_star.unwrap()).collect();
    assert_eq!(j, from_report);
}

#[test]
fn drop_threshold_is_ten_percent() {
    let (d, f) = dataset(15, 4.0, 9);
    let failing = |k: usize| {
        let calls = AtomicUsize::new(0);
        move |data: &[AreaRecord]| {
            if calls.fetch_add(1, Ordering::SeqCst) < k {
                Err(FhrdError::Numeric("forced".into()))
            } else {
                Ok(fit(data, &FitOptions::default())?.params)
            }
        }
    };
    let c = bootstrap_components_with(&f.params, &d, &config(100, 1), None, failing(10)).unwrap();
    assert_eq!((c.replicates_used, c.dropped), (90, 10));
    assert!(bootstrap_components_with(&f.params, &d, &config(100, 1), None, failing(11)).is_err());
}

#[test]
fn leading_term_is_mean_error_of_known_parameter_predictor() {
    let p = ModelParams::new(vec![10.0], 1.0, 4.0, 1.0).unwrap();
    let g1 = expected_g(p.theta(), 10).unwrap();
    let design = intercept_design(1000, 10);
    let mut errs = Vec::new();
    let mut gs = Vec::new();
    for k in 0..100 {
        let d = generate_fhrd(&p, &design, RngSeed::new(13).substream(k)).unwrap();
        for (r, l) in d.records.iter().zip(&d.latents) {
            errs.push((predict_ab(&p, r).unwrap() - l.xi).powi(2));
            gs.push(g_function(p.theta(), r.v, r.n).unwrap().value);
        }
    }
    for xs in [&errs, &gs] {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let se = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        assert!((mean - g1).abs() < 4.0 * se, "{mean} vs {g1} (se {se})");
    }
}

#[test]
fn corrections_vanish_as_m_grows() {
    let mut prev = f64::INFINITY;
    for m in [30, 120, 480] {
        let mut total = 0.0;
        for s in 0..4 {
            let (d, f) = dataset(m, 4.0, 100 + s);
            let r = mse_aeb(&f, &d, &config(100, s), &FitOptions::default()).unwrap();
            total += r.areas.iter().map(|a| ((a.mse_aeb - a.g11) / a.g11).abs()).sum::<f64>() / m as f64;
        }
        assert!(total < prev, "m = {m}: {total} vs {prev}");
        prev = total;
    }
}

#[test]
fn identical_areas_agree_up_to_bootstrap_noise() {
    let data: Vec<_> =
        (0..12).map(|i| AreaRecord { area_id: i.to_string(), y: 4.0, v: 1.5, n: 9, z: vec![1.0] }).collect();
    let mut noisy = data.clone();
    for (i, r) in noisy.iter_mut().enumerate() {
        r.y += (i as f64 - 5.5) * 0.3;
        r.v *= 1.0 + 0.1 * (i % 3) as f64;
    }
    let f = fit(&noisy, &FitOptions::default()).unwrap();
    let spread = |b: usize| {
        let r = mse_aeb(&f, &data, &config(b, 2), &FitOptions::default()).unwrap();
        assert!(r.areas.iter().all(|a| a.g11 == r.areas[0].g11));
        let xs: Vec<f64> = r.areas.iter().map(|a| a.mse_aeb).collect();
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - xs.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    // each area draws its own bootstrap noise, which averages out at rate 1/√B
    assert!(spread(800) < 0.5 * spread(50));
}

#[test]
fn benchmarked_mse_relative_bias_at_desk_scale() {
    let p = ModelParams::new(vec![10.0], 1.0, 4.0, 1.0).unwrap();
    let m = 30;
    let design = intercept_design(m, 10);
    let w = BenchmarkWeights::uniform(m).unwrap();
    let (mut truth, mut est, mut count) = (0.0, 0.0, 0usize);
    for t in 0..500u64 {
        let d = generate_fhrd(&p, &design, RngSeed::new(61).substream(t)).unwrap();
        let Ok(f) = fit(&d.records, &FitOptions::default()) else { continue };
        let pred = predict_aeb(&f, &d.records, None).unwrap();
        let cab = benchmark_adjust(&pred.xi_aeb(), &pred.y(), &w).unwrap();
        let Ok(r) = mse_cab(
            &f,
            &d.records,
            &w,
            &BootstrapConfig { replicates: 500, seed: RngSeed::new(62).substream(t) },
            &FitOptions::default(),
        ) else {
            continue;
        };
        truth += cab.iter().zip(&d.latents).map(|(c, l)| (c - l.xi).powi(2)).sum::<f64>() / m as f64;
        est += r.areas.iter().map(|a| a.mse_cab.unwrap()).sum::<f64>() / m as f64;
        count += 1;
    }
    assert!(count >= 490);
    let rb = (est - truth) / truth;
    assert!(rb.abs() < 0.10, "relative bias {rb}");
}
