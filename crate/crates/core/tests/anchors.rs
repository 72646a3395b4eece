//! Values pinned from validated runs.

use purcell_core::dynamics::{FluorescenceTrace, Model};
use purcell_core::fitting::fit_exponential;
use purcell_core::params::sample_ensemble;
use purcell_core::sweep::run_point;
use purcell_core::ModelParams;

fn assert_pinned(value: f64, pinned: f64) {
    assert!((value - pinned).abs() <= 1e-8 * pinned.abs(), "{value} drifted from pinned {pinned}");
}

#[test]
fn two_rate_mixture_rate() {
    let times: Vec<f64> = (0..=800).map(|k| k as f64 * 0.5).collect();
    let flux: Vec<f64> = times.iter().map(|t| 0.9 * (-0.01 * t).exp() + 0.1 * (-0.05 * t).exp()).collect();
    let fit = fit_exponential(&FluorescenceTrace { times, flux, n_traj: 1 }, (30.0, 400.0)).unwrap();
    let gamma = fit.get("gamma").unwrap();
    assert!(gamma > 0.01 && gamma < 0.05);
    assert_pinned(gamma, 0.01015519703634381);
    assert_pinned(fit.get("c").unwrap(), 0.9214224044637292);
}

#[test]
fn resonant_low_flux_decay_rate() {
    let p = ModelParams::default();
    let realizations = sample_ensemble(&p).unwrap();
    let (trace, fit) = run_point(&p, 0.01, 0.0, Model::Full, &realizations).unwrap();
    assert_eq!(trace.n_traj, 120);
    assert!(fit.ok());
    assert_pinned(fit.get("gamma").unwrap(), 0.014529033905700836);
}
