use purcell_core::params::{sample_disorder, sample_ensemble};
use purcell_core::ModelParams;
use statrs::distribution::{Cauchy, ContinuousCDF, Normal};

/// Non-resonant detunings and all couplings of `n_traj` realizations.
fn draws(p: &ModelParams) -> (Vec<f64>, Vec<f64>) {
    let mut deltas = Vec::new();
    let mut gs = Vec::new();
    for r in sample_ensemble(p).unwrap() {
        let (last, rest) = r.ions.split_last().unwrap();
        assert_eq!(last.delta, 0.0);
        deltas.extend(rest.iter().map(|i| i.delta));
        gs.extend(r.ions.iter().map(|i| i.g));
    }
    (deltas, gs)
}

fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn untruncated(n_ions: usize, n_traj: usize) -> ModelParams {
    ModelParams { n_ions, n_traj, detuning_cutoff: None, master_seed: 2024, ..Default::default() }
}

#[test]
fn detunings_and_couplings_follow_their_distributions() {
    let p = untruncated(1001, 100);
    let (deltas, gs) = draws(&p);
    assert_eq!(deltas.len(), 100_000);

    let cauchy = Cauchy::new(0.0, p.delta_inh / 2.0).unwrap();
    let d = ks_statistic(deltas, |x| cauchy.cdf(x));
    assert!(d < 0.01, "detuning KS statistic {d}");

    let normal = Normal::new(p.g_mean, 0.1 * p.g_mean).unwrap();
    let d = ks_statistic(gs, |x| normal.cdf(x));
    assert!(d < 0.01, "coupling KS statistic {d}");
}

#[test]
fn truncated_detunings_follow_the_renormalized_cdf() {
    let p = ModelParams { n_ions: 1001, n_traj: 100, master_seed: 5, ..Default::default() };
    let cut = p.detuning_cutoff.unwrap() * p.delta_inh;
    let (deltas, _) = draws(&p);
    assert!(deltas.iter().all(|d| d.abs() <= cut));
    let cauchy = Cauchy::new(0.0, p.delta_inh / 2.0).unwrap();
    let (lo, hi) = (cauchy.cdf(-cut), cauchy.cdf(cut));
    let d = ks_statistic(deltas, |x| (cauchy.cdf(x) - lo) / (hi - lo));
    assert!(d < 0.01, "truncated KS statistic {d}");
}

#[test]
fn median_absolute_detuning_is_the_half_width() {
    let p = untruncated(10_001, 100);
    let (mut deltas, _) = draws(&p);
    assert_eq!(deltas.len(), 1_000_000);
    let mut abs: Vec<f64> = deltas.drain(..).map(f64::abs).collect();
    let mid = abs.len() / 2;
    let (_, median, _) = abs.select_nth_unstable_by(mid, f64::total_cmp);
    assert!((*median - 2.5).abs() < 0.01, "median |delta| = {median}");
}

#[test]
fn detunings_and_couplings_are_uncorrelated() {
    let p = untruncated(1001, 100);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for r in sample_ensemble(&p).unwrap() {
        for ion in &r.ions[..r.len() - 1] {
            xs.push(ion.delta.abs());
            ys.push(ion.g);
        }
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let rho = cov / (vx * vy).sqrt();
    assert!(rho.abs() < 0.01, "correlation {rho}");
}

#[test]
fn realizations_are_reproducible_and_distinct() {
    let p = ModelParams { n_ions: 31, ..Default::default() };
    let a = sample_disorder(&p, 17).unwrap();
    assert_eq!(a, sample_disorder(&p, 17).unwrap());
    assert_ne!(a.ions, sample_disorder(&p, 18).unwrap().ions);
    let other_seed = ModelParams { master_seed: 2, ..p };
    assert_ne!(a.ions, sample_disorder(&other_seed, 17).unwrap().ions);
    assert_eq!(a.ions.iter().filter(|i| i.delta == 0.0).count(), 1);
}
