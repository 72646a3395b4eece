//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one pass/fail line per criterion.
//!
//! `ACCEPTANCE_ONLY=5,6,7` restricts the run to a subset. The shared sweep
//! behind criteria 1-4 and 10 is persisted under the cargo target tmp dir.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use purcell_core::analytics::{cooperativities, steady_state_self_consistent, SurvivalHistogram};
use purcell_core::dynamics::{integrate, run_pulse, Model, SystemState};
use purcell_core::fitting::{fit_model, lorentzian, FitOptions, ModelFunction};
use purcell_core::oracle::quantum_oracle;
use purcell_core::params::{sample_ensemble, DisorderRealization, IonParams, ModelParams};
use purcell_core::sweep::{
    linspace, load_manifest, persist_run, rerun_from_manifest, run_detuning_sweep, run_saturation_curve,
    SaturationCurve, SurvivalSpec, SweepPlan, SweepResult,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria known not to hold; see the decisions ledger.
const DOCUMENTED_FAILURES: &[u32] = &[1, 3, 6, 7];

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn reference_params() -> ModelParams {
    ModelParams::default()
}

fn out_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn shared_plan() -> SweepPlan {
    SweepPlan {
        run_id: "acceptance".into(),
        base_params: reference_params(),
        flux_list: vec![0.01, 16.0, 64.0],
        detuning_grid: linspace(-3.0, 3.0, 21),
        models: vec![Model::Full, Model::Local],
        fit_window: None,
        survival: Some(SurvivalSpec { time: 150.0, n_bins: 21 }),
        pulse_checkpoints: 20,
        dump_traces: true,
    }
}

fn c1_lorentzian(sweep: &SweepResult) -> Outcome {
    let full = sweep.row(0.01, Model::Full).and_then(|r| r.fwhm());
    let local = sweep.row(0.01, Model::Local).and_then(|r| r.fwhm());
    let pass = full.is_some_and(|w| (w - 2.0).abs() <= 0.3);
    Outcome::new(pass, format!("full FWHM = {full:.4?} (target 2 +/- 0.3), local FWHM = {local:.4?} (Purcell Lorentzian FWHM = kappa)"))
}

/// Local maxima of the fitted double-Lorentzian curve on a fine grid.
fn fitted_maxima(sweep: &SweepResult, flux: f64) -> Vec<f64> {
    let Some(fit) = sweep.row(flux, Model::Full).and_then(|r| r.double_lorentzian.clone()) else {
        return Vec::new();
    };
    let xs = linspace(-3.0, 3.0, 6001);
    let ys: Vec<f64> = xs.iter().map(|x| ModelFunction::DoubleLorentzian.eval(*x, &fit.parameters)).collect();
    (1..xs.len() - 1).filter(|&k| ys[k] > ys[k - 1] && ys[k] >= ys[k + 1]).map(|k| xs[k]).collect()
}

fn c2_double_peak(sweep: &SweepResult) -> Outcome {
    let row16 = sweep.row(16.0, Model::Full);
    let row64 = sweep.row(64.0, Model::Full);
    let (s16, s64) = (row16.and_then(|r| r.splitting()), row64.and_then(|r| r.splitting()));
    let (z16, z64) = (row16.and_then(|r| r.gamma_at_zero), row64.and_then(|r| r.gamma_at_zero));
    let m16 = fitted_maxima(sweep, 16.0);
    let m64 = fitted_maxima(sweep, 64.0);
    let two_max = |m: &[f64]| m.len() == 2 && m.iter().all(|x| x.abs() > 0.0) && m[0] < 0.0 && m[1] > 0.0;
    let pass = two_max(&m16)
        && two_max(&m64)
        && matches!((s16, s64), (Some(a), Some(b)) if b > a && b > 2.0)
        && matches!((z16, z64), (Some(a), Some(b)) if b < a);
    Outcome::new(
        pass,
        format!(
            "maxima phi=16 {m16:.3?}, phi=64 {m64:.3?}; splitting {s16:.3?} -> {s64:.3?}; Gamma(0) {z16:.5?} -> {z64:.5?}"
        ),
    )
}

fn c3_local_suppression(sweep: &SweepResult) -> Outcome {
    let norm = |m: Model| {
        let lo = sweep.row(0.01, m)?.max_gamma?;
        Some(sweep.row(64.0, m)?.max_gamma? / lo)
    };
    let (full, local) = (norm(Model::Full), norm(Model::Local));
    let ordered = matches!((full, local), (Some(f), Some(l)) if l < f);
    let envelope = sweep.row(0.01, Model::Local).and_then(|r| r.single_lorentzian.clone()).filter(|f| f.converged);
    let mut worst = f64::NEG_INFINITY;
    // same peak and offset, half-width kappa
    let mut worst_wide = f64::NEG_INFINITY;
    if let Some(env) = &envelope {
        let p = &env.parameters;
        let peak = p[0] / (std::f64::consts::PI * p[2]);
        for &flux in &sweep.plan.flux_list {
            for (d, g) in sweep.gamma_curve(flux, Model::Local) {
                let bound = p[0] * lorentzian(d, p[1], p[2]) + p[3];
                worst = worst.max(g / bound - 1.0);
                let wide = p[3] + peak / (1.0 + (d - p[1]).powi(2));
                worst_wide = worst_wide.max(g / wide - 1.0);
            }
        }
    }
    let pass = ordered && envelope.is_some() && worst <= 0.05;
    Outcome::new(
        pass,
        format!(
            "normalized max at phi=64: full {full:.4?}, local {local:.4?}; worst local excess over low-flux fit {:.2}% \
             (over half-width-kappa Lorentzian {:.2}%)",
            100.0 * worst,
            100.0 * worst_wide
        ),
    )
}

/// Count-weighted fractional survival and its standard error over several bins.
fn pooled(h: &SurvivalHistogram, bins: &[usize]) -> Option<(f64, f64)> {
    let mut total = 0.0;
    let mut mean = 0.0;
    let mut var = 0.0;
    for &b in bins {
        let (s, e) = (h.fractional_survival[b]?, h.survival_stderr[b]?);
        let n = h.counts[b] as f64;
        total += n;
        mean += n * s;
        var += n * n * e * e;
    }
    (total > 0.0).then(|| (mean / total, var.sqrt() / total))
}

fn c4_survival(sweep: &SweepResult) -> Outcome {
    let half = 0.5 * sweep.plan.base_params.delta_inh;
    let ordering = |m: Model| -> Option<(f64, f64, f64)> {
        let h = sweep.point(64.0, 0.0, m)?.survival.as_ref()?;
        let res = pooled(h, &[h.bin_of(0.0)?])?;
        let side = pooled(h, &[h.bin_of(-half)?, h.bin_of(half)?])?;
        Some((res.0, side.0, (res.1 * res.1 + side.1 * side.1).sqrt()))
    };
    let full = ordering(Model::Full);
    let local = ordering(Model::Local);
    let pass =
        matches!(full, Some((r, s, e)) if r - s > 2.0 * e) && matches!(local, Some((r, s, e)) if s - r > 2.0 * e);
    let fmt = |o: Option<(f64, f64, f64)>| match o {
        Some((r, s, e)) => format!("resonant {r:.4} vs |delta|~{half} {s:.4} (pooled se {e:.4})"),
        None => "missing".into(),
    };
    Outcome::new(pass, format!("full: {}; local: {}", fmt(full), fmt(local)))
}

fn c5_cooperativity() -> Outcome {
    let p = ModelParams { g_std: Some(0.0), ..reference_params() };
    let r = cooperativities(&p, p.n_ions);
    let pass = (r.c_inh - 0.239).abs() <= 0.001 && (100.0 * r.renormalization - 23.9).abs() <= 0.1;
    Outcome::new(pass, format!("C_inh = {:.5}, renormalization = {:.3}%", r.c_inh, 100.0 * r.renormalization))
}

/// Worst per-spin deviation of pulse-end states from the self-consistent steady state.
fn steady_state_deviation(base: &ModelParams, realizations: &[DisorderRealization], flux: f64) -> (f64, f64) {
    let p = base.clone().with_flux(flux);
    let mut w = (0.0f64, 0.0f64);
    for r in realizations {
        let ss = steady_state_self_consistent(r, &p);
        let end = run_pulse(r, &p).expect("pulse");
        let (dz, dm) = spin_deviation(&end, &ss.s_z_ss, &ss.s_minus_ss);
        w = (w.0.max(dz), w.1.max(dm));
    }
    w
}

fn c6_steady_state() -> Outcome {
    let base = reference_params();
    let realizations = sample_ensemble(&ModelParams { n_traj: 8, ..base.clone() }).expect("sampling");
    let long = ModelParams { t_pulse: 3.0 * base.t_pulse, ..base.clone() };
    let mut worst = (0.0f64, 0.0f64);
    let mut lines = Vec::new();
    for &flux in &[0.01, 0.25, 16.0] {
        let w = steady_state_deviation(&base, &realizations, flux);
        let l = steady_state_deviation(&long, &realizations, flux);
        lines.push(format!(
            "phi={flux}: s_z {:.2}%, s_- {:.2}% (pulse x3: {:.3}%, {:.3}%)",
            100.0 * w.0,
            100.0 * w.1,
            100.0 * l.0,
            100.0 * l.1
        ));
        worst = (worst.0.max(w.0), worst.1.max(w.1));
    }
    Outcome::new(worst.0 <= 0.05 && worst.1 <= 0.05, lines.join("; "))
}

/// Largest per-spin deviation, each component relative to the ensemble
/// scale of that component.
fn spin_deviation(state: &SystemState, s_z: &[f64], s_minus: &[Complex64]) -> (f64, f64) {
    let z_scale = s_z.iter().fold(0.0f64, |m, z| m.max(z.abs()));
    let m_scale = s_minus.iter().fold(0.0f64, |m, s| m.max(s.norm())).max(f64::MIN_POSITIVE);
    let dz = state.s_z.iter().zip(s_z).fold(0.0f64, |m, (a, b)| m.max((a - b).abs() / z_scale));
    let dm = state.s_minus.iter().zip(s_minus).fold(0.0f64, |m, (a, b)| m.max((a - b).norm() / m_scale));
    (dz, dm)
}

fn c7_oracle() -> Outcome {
    let p = reference_params().with_flux(0.01);
    let r = DisorderRealization::from_ions(vec![IonParams { delta: 0.0, g: 0.07 }]);
    let grid = linspace(0.0, p.t_pulse, 201);
    let exact = match quantum_oracle(&p, &r, 8, true, p.t_pulse, &grid) {
        Ok(t) => t,
        Err(e) => return Outcome::new(false, format!("oracle failed: {e}")),
    };
    let mf = integrate(&SystemState::ground(1), &r, &p, Model::Full, true, p.t_pulse, &grid).expect("mean field");
    let (mut dz, mut da, mut dtr) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..grid.len() {
        let z_exact = exact.s_z[k][0];
        dz = dz.max((mf.states[k].s_z[0] - z_exact).abs() / z_exact.abs());
        let a_exact = exact.a[k].norm();
        if a_exact > 0.0 {
            da = da.max((mf.states[k].a.norm() - a_exact).abs() / a_exact);
        }
        dtr = dtr.max((exact.trace[k] - 1.0).abs());
    }
    let pass = dz <= 0.05 && da <= 0.05 && dtr <= 1e-8;
    Outcome::new(
        pass,
        format!(
            "max rel. deviation s_z {:.3}%, |a| {:.3}%; trace error {dtr:.1e}; top Fock population {:.1e}",
            100.0 * dz,
            100.0 * da,
            exact.top_level_population
        ),
    )
}

/// Abscissa and a random true parameter vector for one model.
fn synthetic_problem(model: ModelFunction, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let u = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.random_range(lo..hi);
    match model {
        ModelFunction::Exponential => (linspace(0.0, 200.0, 60), vec![u(rng, 0.5, 2.0), u(rng, 0.005, 0.05)]),
        ModelFunction::StretchedComposite => {
            let tau1 = u(rng, 20.0, 60.0);
            (
                linspace(0.0, 1000.0, 200),
                vec![
                    u(rng, 0.5, 1.5),
                    tau1,
                    u(rng, 0.6, 1.2),
                    u(rng, 0.1, 0.4),
                    u(rng, 5.0, 8.0) * tau1,
                    u(rng, 0.005, 0.05),
                ],
            )
        }
        ModelFunction::Lorentzian => {
            (linspace(-3.0, 3.0, 21), vec![u(rng, 0.01, 0.1), u(rng, -0.5, 0.5), u(rng, 0.4, 1.2), u(rng, 0.0, 0.01)])
        }
        ModelFunction::DoubleLorentzian => {
            let sep = u(rng, 1.0, 2.5);
            (
                linspace(-4.0, 4.0, 41),
                vec![
                    u(rng, 0.01, 0.1),
                    sep,
                    u(rng, 0.3, 0.8),
                    -sep + u(rng, -0.3, 0.3),
                    u(rng, 0.3, 0.8),
                    u(rng, 0.0, 0.01),
                ],
            )
        }
        ModelFunction::PleSaturation => {
            let x: Vec<f64> = (0..13).map(|k| 10f64.powf(-2.0 + 0.25 * k as f64)).collect();
            (x, vec![u(rng, 0.5, 2.0), u(rng, 0.2, 5.0)])
        }
    }
}

fn c8_fit_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut lines = Vec::new();
    let mut pass = true;
    for model in ModelFunction::ALL {
        let mut worst = 0.0f64;
        let mut failures = 0;
        for _ in 0..100 {
            let (x, truth) = synthetic_problem(model, &mut rng);
            let y: Vec<f64> = x.iter().map(|v| model.eval(*v, &truth)).collect();
            let guess: Vec<f64> = truth.iter().map(|p| p * (1.0 + rng.random_range(-0.2..0.2))).collect();
            let err = match fit_model(model, &x, &y, Some(&guess), &FitOptions::default()) {
                Ok(fit) => fit.parameters.iter().zip(&truth).fold(0.0f64, |m, (a, b)| m.max(((a - b) / b).abs())),
                Err(_) => f64::INFINITY,
            };
            if err.is_nan() || err > 1e-6 {
                failures += 1;
            }
            worst = worst.max(err);
        }
        pass &= failures == 0;
        lines.push(format!("{} worst {worst:.1e} ({failures} misses)", model.name()));
    }
    Outcome::new(pass, lines.join("; "))
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).expect("run dir") {
            let path = entry.expect("entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).expect("inside").to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&path).expect("read")));
            }
        }
    }
    out.sort();
    out
}

/// Largest absolute difference between numbers at matching JSON positions.
fn json_distance(a: &serde_json::Value, b: &serde_json::Value) -> Option<f64> {
    use serde_json::Value::*;
    match (a, b) {
        (Number(x), Number(y)) => Some((x.as_f64()? - y.as_f64()?).abs()),
        (Array(x), Array(y)) if x.len() == y.len() => {
            x.iter().zip(y).try_fold(0.0f64, |m, (p, q)| Some(m.max(json_distance(p, q)?)))
        }
        (Object(x), Object(y)) if x.len() == y.len() => {
            x.iter().try_fold(0.0f64, |m, (k, v)| Some(m.max(json_distance(v, y.get(k)?)?)))
        }
        _ => (a == b).then_some(0.0),
    }
}

fn c9_determinism() -> Outcome {
    let plan = SweepPlan {
        run_id: "determinism".into(),
        base_params: ModelParams { n_traj: 6, t_pulse: 300.0, t_decay: 200.0, ..reference_params() },
        flux_list: vec![0.01, 1.0, 16.0, 64.0],
        detuning_grid: linspace(-2.0, 2.0, 5),
        models: vec![Model::Full, Model::Local],
        fit_window: None,
        survival: Some(SurvivalSpec { time: 100.0, n_bins: 11 }),
        pulse_checkpoints: 5,
        dump_traces: true,
    };
    let root = out_dir().join("determinism");
    let _ = std::fs::remove_dir_all(&root);
    let pool = |n: usize| rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("pool");
    let first = pool(1).install(|| run_detuning_sweep(&plan)).expect("sweep");
    persist_run(&first, &root.join("a")).expect("persist");
    let manifest = load_manifest(&root.join("a")).expect("manifest");
    let mut worst = 0.0f64;
    let mut mismatched = BTreeSet::new();
    for threads in [2, 3] {
        let again = pool(threads).install(|| rerun_from_manifest(&manifest)).expect("rerun");
        let dir = root.join(format!("t{threads}"));
        persist_run(&again, &dir).expect("persist");
        let (lhs, rhs) = (read_tree(&root.join("a")), read_tree(&dir));
        if lhs.iter().map(|f| &f.0).ne(rhs.iter().map(|f| &f.0)) {
            mismatched.insert("file list".to_string());
        }
        for ((name, a), (_, b)) in lhs.iter().zip(&rhs) {
            if name.ends_with(".csv") {
                if a != b {
                    mismatched.insert(name.clone());
                }
            } else {
                let mut va: serde_json::Value = serde_json::from_slice(a).expect("json");
                let mut vb: serde_json::Value = serde_json::from_slice(b).expect("json");
                for v in [&mut va, &mut vb] {
                    if let Some(o) = v.as_object_mut() {
                        o.remove("threads");
                        o.remove("wall_time_s");
                    }
                }
                match json_distance(&va, &vb) {
                    Some(d) => worst = worst.max(d),
                    None => {
                        mismatched.insert(name.clone());
                    }
                }
            }
        }
    }
    let pass = mismatched.is_empty() && worst <= 1e-12;
    Outcome::new(
        pass,
        format!("reruns at 2 and 3 threads: max numeric difference {worst:.1e}, mismatched files {mismatched:?}"),
    )
}

fn c10_invariants(sweep: &SweepResult, saturation: &SaturationCurve) -> Outcome {
    let inv = &sweep.invariants;
    let traces: Vec<_> = sweep
        .plan
        .flux_list
        .iter()
        .map(|&f| &sweep.point(f, 0.0, Model::Full).expect("resonant point").trace)
        .collect();
    let sweep_curve =
        SaturationCurve::from_traces(&sweep.plan.flux_list, &traces, (0.0, sweep.plan.base_params.t_decay));
    let pass = inv.bloch_ok(1e-6)
        && inv.energy_ok(1e-9)
        && inv.fixed_point_ok()
        && sweep_curve.data_concave(0.0)
        && saturation.data_concave(0.0)
        && saturation.fit_concave();
    Outcome::new(
        pass,
        format!(
            "{} trajectories: max |r|^2 = {:.3e}, max relative energy rise {:.1e}, ground residual {:.1e}; concave data: sweep {}, curve {}; PLE fit concave {} (phi_0 = {:.3?})",
            inv.trajectories,
            inv.max_bloch_radius_sq,
            inv.max_energy_rise,
            inv.max_fixed_point_residual,
            sweep_curve.data_concave(0.0),
            saturation.data_concave(0.0),
            saturation.fit_concave(),
            saturation.phi_0,
        ),
    )
}

fn main() {
    let only: Option<BTreeSet<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|s| s.contains(&n));
    std::fs::create_dir_all(out_dir()).expect("output dir");

    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    let mut record = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if wanted(n) {
            let t = Instant::now();
            let o = f();
            let secs = t.elapsed().as_secs_f64();
            println!("[{:>7.1}s] criterion {n} ({name}) evaluated", secs);
            results.push((n, name, o, secs));
        }
    };

    record(5, "cooperativity numbers", &mut c5_cooperativity);
    record(7, "quantum-oracle agreement", &mut c7_oracle);
    record(8, "fit recovery", &mut c8_fit_recovery);
    record(6, "steady-state consistency", &mut c6_steady_state);
    record(9, "determinism", &mut c9_determinism);

    if [1, 2, 3, 4, 10].into_iter().any(&wanted) {
        let t = Instant::now();
        let sweep = run_detuning_sweep(&shared_plan()).expect("shared sweep");
        persist_run(&sweep, &out_dir().join("sweep")).expect("persist shared sweep");
        println!("[{:>7.1}s] shared sweep finished", t.elapsed().as_secs_f64());
        record(1, "low-flux Lorentzian profile", &mut || c1_lorentzian(&sweep));
        record(2, "double-peak emergence", &mut || c2_double_peak(&sweep));
        record(3, "local-model suppression", &mut || c3_local_suppression(&sweep));
        record(4, "anomalous survival", &mut || c4_survival(&sweep));
        record(10, "invariant suite", &mut || {
            let p = reference_params();
            let realizations = sample_ensemble(&p).expect("sampling");
            let curve =
                run_saturation_curve(&p, &[0.01, 0.1, 1.0, 4.0, 16.0, 64.0], &realizations).expect("saturation");
            c10_invariants(&sweep, &curve)
        });
    }

    results.sort_by_key(|r| r.0);
    println!();
    let mut unexpected = 0;
    for (n, name, o, secs) in &results {
        let status = match (o.pass, DOCUMENTED_FAILURES.contains(n)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (documented)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("criterion {n:>2} {status}: {name} [{secs:.1}s] {}", o.detail);
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
