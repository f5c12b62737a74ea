use std::collections::BTreeMap;

use proptest::prelude::*;

use matchprod::aggdecomp::{aggregate, dispersion_stats, four_term, growth_rates, long_series, olley_pakes, shares_within_year};
use matchprod::akm::{apply_sample_screens, estimate_akm, largest_connected_set, AkmSpec, ScreenConfig};
use matchprod::io::fmt_f64;
use matchprod::model::{compute_constants, pam_check, Equilibrium};
use matchprod::paretofit::rank_regression;
use matchprod::prodfn::{estimate_all, rows_from_truth, PfOptions, PfRow};
use matchprod::synth::{simulate_firm_panel, simulate_worker_panel, MatchRecord, SimConfig};
use matchprod::ModelParams;

fn tiny_matches(seed: u64) -> Vec<MatchRecord> {
    let mut cfg = SimConfig { n_firms: 40, years: 4, seed, ..SimConfig::default() };
    cfg.workers.owner_share = 0.05;
    let firms = simulate_firm_panel(&cfg).unwrap();
    simulate_worker_panel(&firms, &cfg).unwrap().matches
}

fn panel(n: usize) -> impl Strategy<Value = (Vec<i32>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (
        prop::collection::vec(0..3i32, n),
        prop::collection::vec(-3.0..3.0f64, n),
        prop::collection::vec(-3.0..3.0f64, n),
        prop::collection::vec(0.01..10.0f64, n),
    )
        .prop_filter("every year needs two firms", |(y, ..)| (0..3).all(|k| y.iter().filter(|v| **v == k).count() >= 2))
}

proptest! {
    #[test]
    fn matching_is_log_linear_with_unit_slope(
        theta in 0.2..0.8f64, alpha_l in 0.4..0.9f64, alpha_x in 0.3..0.95f64,
        sigma in 1.1..3.0f64, lambda_x in 1.2..3.0f64, lambda_y in 1.2..3.0f64,
        omega_x in -0.5..0.5f64, x in 1.0..1e4f64,
    ) {
        let p = ModelParams { theta, alpha_l, alpha_x, alpha_y: 1.0 - alpha_x, sigma, lambda_x, lambda_y, ..ModelParams::construction() };
        if pam_check(&p).sufficient_ok {
            prop_assert!(compute_constants(&p).is_ok());
        }
        if let Ok(eq) = Equilibrium::new(p.clone()) {
            let t = eq.match_t(x, omega_x).unwrap();
            prop_assert!((t.ln() - x.ln() - eq.constants.b0 - omega_x).abs() < 1e-9);
            let l1 = eq.labor_demand(x, omega_x).unwrap().ln();
            let l2 = eq.labor_demand(2.0 * x, omega_x).unwrap().ln();
            prop_assert!((l2 - l1 - (lambda_y - lambda_x) * 2f64.ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn floats_survive_the_table_format(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn tail_fit_is_scale_invariant(
        sample in prop::collection::vec(1.0..1e3f64, 20..200), c in 0.01..100.0f64, t in 0.0..2.0f64,
    ) {
        let Ok(a) = rank_regression(&sample, t) else { return Ok(()); };
        let scaled: Vec<f64> = sample.iter().map(|v| v * c).collect();
        let b = rank_regression(&scaled, t + c.ln()).unwrap();
        prop_assert_eq!(a.n_used, b.n_used);
        prop_assert!((a.lambda_hat - b.lambda_hat).abs() < 1e-8 * (1.0 + a.lambda_hat.abs()));
        prop_assert!((a.r_squared - b.r_squared).abs() < 1e-9);
    }

    #[test]
    fn raising_the_threshold_never_adds_observations(
        sample in prop::collection::vec(1.0..1e3f64, 20..200), t1 in 0.0..3.0f64, dt in 0.0..3.0f64,
    ) {
        let n = |t: f64| rank_regression(&sample, t).map(|f| f.n_used).unwrap_or(0);
        prop_assert!(n(t1 + dt) <= n(t1));
    }

    #[test]
    fn aggregation_is_linear((years, a, b, w) in panel(24), ca in -2.0..2.0f64, cb in -2.0..2.0f64) {
        let s = shares_within_year(&years, &w).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| ca * x + cb * y).collect();
        let (ga, gb, gm) = (aggregate(&years, &a, &s).unwrap(), aggregate(&years, &b, &s).unwrap(), aggregate(&years, &mix, &s).unwrap());
        for i in 0..gm.len() {
            prop_assert!((gm[i].1 - ca * ga[i].1 - cb * gb[i].1).abs() < 1e-12);
        }
    }

    #[test]
    fn decompositions_close((years, omega, quality, w) in panel(30)) {
        let s = shares_within_year(&years, &w).unwrap();
        let z: Vec<f64> = omega.iter().zip(&quality).map(|(a, b)| a + b).collect();
        for r in olley_pakes(&years, &z, &s).unwrap() {
            prop_assert!(r.identity_gap().abs() < 1e-12);
        }
        for r in four_term(&years, &omega, &quality, &s).unwrap() {
            prop_assert!(r.identity_gap().abs() < 1e-12);
        }
    }

    #[test]
    fn dispersion_variance_closes(
        years in prop::collection::vec(0..2i32, 40),
        omega in prop::collection::vec(-3.0..3.0f64, 40),
        quality in prop::collection::vec(-3.0..3.0f64, 40),
    ) {
        prop_assume!((0..2).all(|k| years.iter().filter(|v| **v == k).count() >= 10));
        for r in dispersion_stats(&years, &omega, &quality).unwrap() {
            prop_assert!(r.identity_gap().abs() < 1e-12);
        }
    }

    #[test]
    fn growth_windows_split_by_duration(
        levels in prop::collection::vec(-1.0..1.0f64, 13), mid in 2004..2015i32,
    ) {
        let series: Vec<(i32, f64)> = levels.iter().enumerate().map(|(i, v)| (2003 + i as i32, *v)).collect();
        let g = growth_rates("z", &series, &[(2003, 2015), (2003, mid), (mid, 2015)]).unwrap();
        let weighted = (g[1].rate * (mid - 2003) as f64 + g[2].rate * (2015 - mid) as f64) / 12.0;
        prop_assert!((g[0].rate - weighted).abs() < 1e-10);
        let long = long_series(&[("z", series)], true);
        prop_assert_eq!(long[0].value, 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn screens_are_idempotent(seed in 0..1000u64) {
        let cfg = ScreenConfig::default();
        let (once, _) = apply_sample_screens(&tiny_matches(seed), &cfg);
        let (twice, rep) = apply_sample_screens(&once, &cfg);
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(rep.n_in, rep.n_out);
    }

    #[test]
    fn akm_ignores_row_order_and_earnings_scale(seed in 0..1000u64, shift in -2.0..2.0f64, rot in 1usize..500) {
        let (cc, _) = largest_connected_set(&tiny_matches(seed));
        let base = estimate_akm(&cc, &AkmSpec::default()).unwrap();
        let mut moved: Vec<MatchRecord> = cc.iter().map(|m| MatchRecord { earnings: m.earnings * shift.exp(), ..m.clone() }).collect();
        let k = rot % moved.len();
        moved.rotate_left(k);
        moved.reverse();
        let other = estimate_akm(&moved, &AkmSpec::default()).unwrap();
        prop_assert!((other.intercept - base.intercept - shift).abs() < 1e-7);
        for id in &base.worker_ids {
            prop_assert!((base.worker_effect(*id).unwrap() - other.worker_effect(*id).unwrap()).abs() < 1e-7);
        }
        for id in &base.firm_ids {
            prop_assert!((base.firm_effect(*id).unwrap() - other.firm_effect(*id).unwrap()).abs() < 1e-7);
        }
        for (a, b) in base.beta.iter().zip(&other.beta) {
            prop_assert!((a - b).abs() < 1e-7);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn tfp_does_not_depend_on_firm_labels(seed in 0..1000u64, mult in prop::sample::select(vec![7u64, 11, 13, 17])) {
        let cfg = SimConfig { n_firms: 300, years: 8, seed, ..SimConfig::default() };
        let rows = rows_from_truth(&simulate_firm_panel(&cfg).unwrap());
        let relabel = |id: u64| (id * mult + 3) % 10_007;
        let moved: Vec<PfRow> = rows.iter().map(|r| PfRow { firm_id: relabel(r.firm_id), ..r.clone() }).collect();
        let (ea, ta) = estimate_all(&rows, &PfOptions::default()).unwrap();
        let (eb, tb) = estimate_all(&moved, &PfOptions::default()).unwrap();
        for (a, b) in ea[0].coef.iter().zip(&eb[0].coef) {
            prop_assert!((a - b).abs() < 1e-6, "{:?} vs {:?}", ea[0].coef, eb[0].coef);
        }
        let by: BTreeMap<(u64, i32), f64> = tb.iter().map(|r| ((r.firm_id, r.year), r.omega_hat)).collect();
        for r in &ta {
            prop_assert!((by[&(relabel(r.firm_id), r.year)] - r.omega_hat).abs() < 1e-6);
        }
    }
}
