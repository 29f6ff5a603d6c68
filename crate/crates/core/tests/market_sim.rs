use impact_core::market_sim::{
    make_kernel, regroup_days, simulate_dataset, theta, Dataset, FlowModel, KernelFamily, SimConfig,
};
use impact_core::regression::{self, Matrix};
use proptest::prelude::*;

fn quiet_single_asset(kernel: KernelFamily, script: Vec<f64>, days: usize) -> SimConfig {
    SimConfig {
        zones: vec!["EU".into()],
        assets_per_zone: 1,
        days,
        kernel,
        g_pi: 0.0,
        noise: 0.0,
        exec_noise: 0.0,
        flow: FlowModel::Scripted { signed_participation: script },
        seed: 1,
        ..SimConfig::default()
    }
}

proptest! {
    #[test]
    fn increments_sum_to_values(beta in 0.05f64..3.0, tau0 in 0.1f64..20.0, rate in 0.01f64..5.0, m in 1usize..40) {
        for fam in [
            KernelFamily::Delta,
            KernelFamily::PowerLaw { beta, tau0 },
            KernelFamily::Exponential { rate },
        ] {
            let k = make_kernel(&fam, m).unwrap();
            let mut acc = 0.0;
            for (g, v) in k.increments.iter().zip(&k.values) {
                acc += g;
                prop_assert_eq!(acc, *v);
            }
            prop_assert_eq!(k.values[0], 1.0);
            prop_assert!(k.values.windows(2).all(|w| w[1] <= w[0]));
        }
    }
}

#[test]
fn single_impulse_replays_the_kernel() {
    for fam in [KernelFamily::Delta, KernelFamily::PowerLaw { beta: 0.8, tau0: 1.0 }] {
        let cfg = quiet_single_asset(fam.clone(), vec![0.01], 20);
        let ds = simulate_dataset(&cfg).unwrap();
        let a = &ds.assets()[0];
        let th0 = theta(&a.records[0], cfg.y0, cfg.delta);
        let g = make_kernel(&fam, cfg.kernel_lags).unwrap().increments;
        let r = a.r_d();
        for t in 0..19 {
            let expected = if t < g.len() { g[t] * th0 } else { 0.0 };
            assert!((r[t] - expected).abs() <= 1e-15, "{fam:?} day {t}: {} vs {expected}", r[t]);
        }
        if fam == KernelFamily::Delta {
            assert!((r[0] - th0).abs() < 1e-16 && (r[1] + th0).abs() < 1e-16);
        }
    }
}

#[test]
fn predictor_is_unit_variance_ar1() {
    let cfg = SimConfig { zones: vec!["EU".into()], assets_per_zone: 1000, days: 500, gamma_signal: 0.5, seed: 4, ..SimConfig::default() };
    let ds = simulate_dataset(&cfg).unwrap();
    let pi: Vec<f64> = ds.records().iter().map(|r| r.pi).collect();
    let n = pi.len() as f64;
    let m = pi.iter().sum::<f64>() / n;
    let var = pi.iter().map(|p| (p - m).powi(2)).sum::<f64>() / n;
    assert!((var - 1.0).abs() < 0.01, "variance {var}");

    // π has known mean 0, so a pooled ratio estimator over groups of assets has
    // negligible finite-length bias; the spread across groups gives the standard error.
    let a = (-cfg.gamma_signal).exp();
    let assets = ds.assets();
    for lag in [1usize, 2, 4] {
        let groups: Vec<f64> = assets
            .chunks(25)
            .map(|g| {
                let (mut num, mut den) = (0.0, 0.0);
                for s in g {
                    let x = s.pi();
                    let t = x.len();
                    num += (0..t - lag).map(|i| x[i] * x[i + lag]).sum::<f64>() / (t - lag) as f64;
                    den += x.iter().map(|v| v * v).sum::<f64>() / t as f64;
                }
                num / den
            })
            .collect();
        let k = groups.len() as f64;
        let mean = groups.iter().sum::<f64>() / k;
        let se = (groups.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt();
        let expected = a.powi(lag as i32);
        assert!((mean - expected).abs() < 3.0 * se, "lag {lag}: {mean} vs {expected} (se {se})");
    }
}

/// Autocorrelation of the daily change of an EMA (rate ω) of a unit AR(1)
/// (coefficient a), by brute-force summation of the impulse response.
fn ema_change_acf(a: f64, b: f64, max_lag: usize) -> Vec<f64> {
    let n = 3000;
    let mut h = vec![1.0 - b];
    for i in 1..n {
        h.push(-(1.0 - b) * (1.0 - b) * b.powi(i as i32 - 1));
    }
    let cov = |k: i64| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += h[i] * h[j] * a.powi((k + i as i64 - j as i64).unsigned_abs() as i32);
            }
        }
        s
    };
    let c0 = cov(0);
    (0..=max_lag).map(|k| cov(k as i64) / c0).collect()
}

fn sign_acf(ds: &Dataset, lag: usize) -> (f64, f64) {
    let per: Vec<f64> = ds
        .assets()
        .iter()
        .map(|a| {
            let e: Vec<f64> = a.records.iter().map(|r| r.q.signum()).collect();
            (0..e.len() - lag).map(|t| e[t] * e[t + lag]).sum::<f64>() / (e.len() - lag) as f64
        })
        .collect();
    let k = per.len() as f64;
    let m = per.iter().sum::<f64>() / k;
    let se = (per.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (k - 1.0) / k).sqrt();
    (m, se)
}

#[test]
fn flow_signs_are_positively_autocorrelated() {
    let cfg = SimConfig { seed: 21, ..SimConfig::default() };
    let ds = simulate_dataset(&cfg).unwrap();
    let FlowModel::Ema { omega } = cfg.flow else { unreachable!() };
    let rho = ema_change_acf((-cfg.gamma_signal).exp(), (-omega).exp(), 5);
    let mut last = 1.0;
    for lag in 1..=5 {
        // Gaussian trade intentions: E[sign x sign y] = (2/π) asin(ρ).
        let expected = 2.0 / std::f64::consts::PI * rho[lag].asin();
        let (m, se) = sign_acf(&ds, lag);
        assert!(m > 0.0 && m < last, "lag {lag}: {m}");
        assert!((m - expected).abs() < 3.0 * se, "lag {lag}: {m} vs {expected} (se {se})");
        last = m;
    }
}

#[test]
fn disjoint_seeds_have_matching_flow_statistics() {
    let a = simulate_dataset(&SimConfig { seed: 100, ..SimConfig::default() }).unwrap();
    let b = simulate_dataset(&SimConfig { seed: 200, ..SimConfig::default() }).unwrap();
    for lag in [1, 3] {
        let (ma, sa) = sign_acf(&a, lag);
        let (mb, sb) = sign_acf(&b, lag);
        assert!((ma - mb).abs() < 3.0 * (sa * sa + sb * sb).sqrt());
    }
}

#[test]
fn slippage_slope_is_configured_impact() {
    let cfg = SimConfig { seed: 8, ..SimConfig::default() };
    let ds = simulate_dataset(&cfg).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for a in ds.assets() {
        x.extend(a.theta(cfg.y0, cfg.delta));
        y.extend(a.r_x());
    }
    let fit = regression::ols(&y, &Matrix::from_columns(&[x]).unwrap(), &["theta".into()]).unwrap();
    assert!((fit.coefficients[0] - cfg.i_x).abs() < 2.0 * fit.std_error(0));
}

#[test]
fn participation_stays_in_band() {
    for flow in [FlowModel::Ema { omega: 0.1 }, FlowModel::Iid, FlowModel::Ema { omega: 5.0 }] {
        let cfg = SimConfig { flow, seed: 2, ..SimConfig::default() };
        let ds = simulate_dataset(&cfg).unwrap();
        for r in ds.records() {
            let p = r.participation();
            assert!(p >= cfg.participation_min * (1.0 - 1e-12) && p <= cfg.participation_max * (1.0 + 1e-12), "{p}");
        }
    }
}

#[test]
fn regrouping_preserves_totals() {
    let cfg = SimConfig { zones: vec!["EU".into(), "US".into()], assets_per_zone: 3, days: 51, seed: 5, ..SimConfig::default() };
    let ds = simulate_dataset(&cfg).unwrap();
    let g = regroup_days(&ds, 2).unwrap();
    assert_eq!(g.len(), 6 * 25);
    for (a, b) in ds.assets().iter().zip(g.assets()) {
        for (i, r) in b.records.iter().enumerate() {
            let block = &a.records[2 * i..2 * i + 2];
            assert_eq!(r.t, i);
            assert_eq!(r.q, block[0].q + block[1].q);
            assert_eq!(r.p_d, block[0].p_d);
            assert_eq!(r.sigma, block[0].sigma * 2f64.sqrt());
            let lo = block[0].p_x.min(block[1].p_x);
            let hi = block[0].p_x.max(block[1].p_x);
            assert!(r.p_x >= lo && r.p_x <= hi);
        }
    }
}
