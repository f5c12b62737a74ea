use matchprod::akm::{
    apply_sample_screens, estimate_akm, firm_quality, identify_top_workers, largest_connected_set,
    variance_decomposition, worker_quality, AkmSpec, ScreenConfig,
};
use matchprod::synth::{simulate_firm_panel, simulate_worker_panel, SimConfig};

fn noiseless(n_firms: usize, years: usize) -> SimConfig {
    let mut cfg = SimConfig { n_firms, years, ..SimConfig::default() };
    cfg.workers.earnings_noise = 0.0;
    cfg.workers.owner_share = 0.0;
    cfg
}

#[test]
fn exact_recovery_without_noise() {
    let cfg = noiseless(200, 10);
    let firms = simulate_firm_panel(&cfg).unwrap();
    let panel = simulate_worker_panel(&firms, &cfg).unwrap();
    let (cc, stats) = largest_connected_set(&panel.matches);
    assert!(stats.retained_share > 0.99, "{stats:?}");
    let t = std::time::Instant::now();
    let est = estimate_akm(&cc, &AkmSpec::default()).unwrap();
    eprintln!("akm {} obs, {} iters, {:?}", est.n_obs, est.iterations, t.elapsed());

    let mean_true = {
        let mut seen = std::collections::BTreeMap::new();
        for m in &cc {
            seen.insert(m.worker_id, m.alpha_true);
        }
        seen.values().sum::<f64>() / seen.len() as f64
    };
    let mut worst = 0.0f64;
    for m in &cc {
        let a = est.worker_effect(m.worker_id).unwrap();
        worst = worst.max((a - (m.alpha_true - mean_true)).abs());
    }
    assert!(worst < 1e-8, "alpha error {worst}");
    let ref_psi = panel.psi[&est.firm_ids[0]];
    for (i, id) in est.firm_ids.iter().enumerate() {
        assert!((est.psi[i] - (panel.psi[id] - ref_psi)).abs() < 1e-8);
    }
    for k in 0..4 {
        assert!((est.beta[k] - panel.beta[k]).abs() < 1e-8);
    }
    assert!(est.residuals.iter().all(|e| e.abs() < 1e-8));
    for row in variance_decomposition(&est, &cc).unwrap() {
        assert!(row.closure_gap().abs() < 1e-10);
    }
}

#[test]
fn top_flags_and_quality_on_simulated_panel() {
    let mut cfg = noiseless(150, 8);
    cfg.workers.earnings_noise = 0.05;
    let firms = simulate_firm_panel(&cfg).unwrap();
    let panel = simulate_worker_panel(&firms, &cfg).unwrap();
    let (screened, _) = apply_sample_screens(&panel.matches, &ScreenConfig::default());
    let (cc, _) = largest_connected_set(&screened);
    let est = estimate_akm(&cc, &AkmSpec::default()).unwrap();
    let h = worker_quality(&est, &cc).unwrap();
    let flags = identify_top_workers(&cc);
    let agree = cc.iter().zip(&flags).filter(|(m, &f)| m.is_top == f).count();
    eprintln!("top agreement {}", agree as f64 / cc.len() as f64);
    let (q, _) = firm_quality(&cc, &h, &flags).unwrap();
    let n = q.len() as f64;
    let (my, mx) = (q.iter().map(|r| r.ln_y).sum::<f64>() / n, q.iter().map(|r| r.ln_x).sum::<f64>() / n);
    let cov: f64 = q.iter().map(|r| (r.ln_y - my) * (r.ln_x - mx)).sum();
    assert!(cov > 0.0);
}

fn misflagged(cfg: &SimConfig) -> (usize, f64) {
    let firms = simulate_firm_panel(cfg).unwrap();
    let panel = simulate_worker_panel(&firms, cfg).unwrap();
    let flags = identify_top_workers(&panel.matches);
    let (_, stats) = largest_connected_set(&panel.matches);
    (panel.matches.iter().zip(&flags).filter(|(m, &f)| m.is_top != f).count(), stats.retained_share)
}

#[test]
fn retention_band_keeps_the_top_earner_on_top_under_type_drift() {
    let mut cfg = noiseless(150, 12);
    cfg.drift.x = -0.08;
    let (banded, share) = misflagged(&cfg);
    cfg.workers.retention_band = 100.0;
    let (loose, _) = misflagged(&cfg);
    assert!(3 * banded < loose, "{banded} vs {loose}");
    assert!(share > 0.99);
}
