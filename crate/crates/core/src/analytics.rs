//! Steady-state and disorder-averaged closed forms, cooperativity
//! diagnostics and the detuning-binned survival analysis.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{SystemState, Trajectory};
use crate::error::{Error, Result};
use crate::params::{DisorderRealization, IonParams, ModelParams};

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub a_ss: Complex64,
    pub s_z_ss: Vec<f64>,
    pub s_minus_ss: Vec<Complex64>,
    pub iterations: usize,
    pub converged: bool,
    /// Residual of the two self-consistency equations at the returned point.
    pub residual: f64,
}

impl SteadyState {
    pub fn to_state(&self) -> SystemState {
        SystemState { a: self.a_ss, s_minus: self.s_minus_ss.clone(), s_z: self.s_z_ss.clone() }
    }

    /// Ions that are not depolarized (`s_z <= -1/2`); a candidate for `N_eff`.
    pub fn polarized_count(&self) -> usize {
        self.s_z_ss.iter().filter(|z| **z <= -0.5).count()
    }
}

/// Cavity field for given spin populations.
fn field_given_populations(s_z: &[f64], ions: &[IonParams], params: &ModelParams) -> Complex64 {
    let self_energy: Complex64 =
        ions.iter().zip(s_z).map(|(ion, z)| ion.g * ion.g * z / Complex64::new(ion.delta, -0.5 * params.gamma)).sum();
    let den = Complex64::new(params.delta_c, -0.5 * params.kappa) + self_energy;
    I * params.kappa_c.sqrt() * params.beta_in / den
}

/// Spin population for a given field amplitude squared.
fn population_given_field(field_sq: f64, ion: &IonParams, gamma: f64) -> f64 {
    -1.0 / (1.0 + 2.0 * ion.g * ion.g * field_sq / (ion.delta * ion.delta + 0.25 * gamma * gamma))
}

/// Max-norm residual of the self-consistency equations.
pub fn self_consistency_residual(
    a: Complex64,
    s_z: &[f64],
    realization: &DisorderRealization,
    params: &ModelParams,
) -> f64 {
    let ra = (a - field_given_populations(s_z, &realization.ions, params)).norm();
    let field_sq = a.norm_sqr();
    realization
        .ions
        .iter()
        .zip(s_z)
        .map(|(ion, z)| (z - population_given_field(field_sq, ion, params.gamma)).abs())
        .fold(ra, f64::max)
}

const MAX_ITERATIONS: usize = 10_000;
const TOLERANCE: f64 = 1e-12;
const DAMPING: f64 = 0.5;
const OSCILLATION_WINDOW: usize = 100;

/// Self-consistent steady state of the driven ensemble.
///
/// Runs a damped fixed-point iteration; if the residual stops decreasing
/// for a long stretch, falls back to bisection on `|a|^2`, taking the
/// smallest root (the branch connected to the weak-drive solution).
pub fn steady_state_self_consistent(realization: &DisorderRealization, params: &ModelParams) -> SteadyState {
    let ions = &realization.ions;
    let mut s_z = vec![-1.0; ions.len()];
    let mut a = field_given_populations(&s_z, ions, params);
    let mut iterations = 0;
    let mut converged = false;
    let mut best = f64::INFINITY;
    let mut stalled = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let candidate = field_given_populations(&s_z, ions, params);
        let a_new = a + DAMPING * (candidate - a);
        let field_sq = a_new.norm_sqr();
        let mut change = (a_new - a).norm();
        for (z, ion) in s_z.iter_mut().zip(ions) {
            let z_new = population_given_field(field_sq, ion, params.gamma);
            change = change.max((z_new - *z).abs());
            *z = z_new;
        }
        a = a_new;
        if change < TOLERANCE {
            converged = true;
            break;
        }
        if change < best {
            best = change;
            stalled = 0;
        } else {
            stalled += 1;
            if stalled >= OSCILLATION_WINDOW {
                break;
            }
        }
    }

    if !converged {
        if let Some((a_b, z_b, it)) = bisect_field(realization, params) {
            a = a_b;
            s_z = z_b;
            iterations += it;
            converged = self_consistency_residual(a, &s_z, realization, params) < 1e-10;
        }
    }

    let residual = self_consistency_residual(a, &s_z, realization, params);
    let s_minus_ss = ions.iter().map(|ion| single_spin_steady_state(a, ion, params.gamma).1).collect();
    SteadyState { a_ss: a, s_z_ss: s_z, s_minus_ss, iterations, converged, residual }
}

/// Solves `|a(x)|^2 = x` for the smallest root `x = |a|^2`.
fn bisect_field(realization: &DisorderRealization, params: &ModelParams) -> Option<(Complex64, Vec<f64>, usize)> {
    let ions = &realization.ions;
    let eval = |x: f64| {
        let s_z: Vec<f64> = ions.iter().map(|ion| population_given_field(x, ion, params.gamma)).collect();
        let a = field_given_populations(&s_z, ions, params);
        (a.norm_sqr() - x, a, s_z)
    };
    // |a| <= 2 sqrt(kappa_c) beta / kappa since every s_z <= 0
    let x_max = 4.0 * params.kappa_c * params.beta_in * params.beta_in / (params.kappa * params.kappa);
    if x_max == 0.0 {
        let (_, a, s_z) = eval(0.0);
        return Some((a, s_z, 0));
    }
    let scan = 2000;
    let mut lo = 0.0;
    let mut hi = x_max;
    let mut found = false;
    // geometric scan so that tiny roots are resolved
    let mut prev = 0.0;
    for k in 0..=scan {
        let x = if k == 0 { 0.0 } else { x_max * 10f64.powf(-12.0 * (1.0 - k as f64 / scan as f64)) };
        if eval(x).0 <= 0.0 {
            lo = prev;
            hi = x;
            found = true;
            break;
        }
        prev = x;
    }
    if !found {
        return None;
    }
    let mut it = 0;
    while it < 200 && hi - lo > 1e-16 * hi.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if eval(mid).0 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        it += 1;
    }
    let (_, a, s_z) = eval(0.5 * (lo + hi));
    // one fixed-point polish of the populations at the final field
    let s_z = {
        let x = a.norm_sqr();
        let _ = s_z;
        ions.iter().map(|ion| population_given_field(x, ion, params.gamma)).collect()
    };
    Some((a, s_z, it))
}

/// Disorder-averaged weak-excitation steady-state field with `n_eff`
/// contributing ions.
pub fn disorder_averaged_field(params: &ModelParams, n_eff: usize) -> Result<Complex64> {
    if n_eff > params.n_ions {
        return Err(Error::Domain(format!("n_eff = {n_eff} exceeds n_ions = {}", params.n_ions)));
    }
    let half_width = renormalized_half_width(params, n_eff);
    Ok(I * params.kappa_c.sqrt() * params.beta_in / Complex64::new(params.delta_c, -half_width))
}

/// `kappa/2 + 2 N_eff (g^2 + sigma^2) / (gamma + Delta_inh)`.
pub fn renormalized_half_width(params: &ModelParams, n_eff: usize) -> f64 {
    let sigma = params.coupling_std();
    0.5 * params.kappa
        + 2.0 * n_eff as f64 * (params.g_mean * params.g_mean + sigma * sigma) / (params.gamma + params.delta_inh)
}

/// Steady state of one spin under a coherent Rabi drive by the field `a_ss`.
pub fn single_spin_steady_state(a_ss: Complex64, ion: &IonParams, gamma: f64) -> (f64, Complex64) {
    let drive = 8.0 * a_ss.norm_sqr() * ion.g * ion.g;
    let den = drive + gamma * gamma + 4.0 * ion.delta * ion.delta;
    let s_z = -1.0 + drive / den;
    let s_minus = -2.0 * a_ss * ion.g * Complex64::new(2.0 * ion.delta, gamma) / den;
    (s_z, s_minus)
}

/// Mean excitation `1 + s_z` of a spin at detuning `delta` with mean coupling,
/// driven by `a`.
pub fn excitation_theory(delta: f64, a: Complex64, params: &ModelParams) -> f64 {
    1.0 + single_spin_steady_state(a, &IonParams { delta, g: params.g_mean }, params.gamma).0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooperativityReport {
    /// `4 N g^2 / (kappa gamma)`.
    pub c_collective: f64,
    /// `4 N_eff g^2 / (Delta_inh kappa)`.
    pub c_inh: f64,
    pub n_eff: usize,
    /// Full width of the renormalized cavity response.
    pub kappa_renormalized: f64,
    /// `(kappa_renormalized - kappa) / kappa`.
    pub renormalization: f64,
}

pub fn cooperativities(params: &ModelParams, n_eff: usize) -> CooperativityReport {
    let g2 = params.g_mean * params.g_mean;
    let kappa_renormalized = 2.0 * renormalized_half_width(params, n_eff);
    CooperativityReport {
        c_collective: 4.0 * params.n_ions as f64 * g2 / (params.kappa * params.gamma),
        c_inh: 4.0 * n_eff as f64 * g2 / (params.delta_inh * params.kappa),
        n_eff,
        kappa_renormalized,
        renormalization: (kappa_renormalized - params.kappa) / params.kappa,
    }
}

/// Detuning-binned spin excitation at one time of a set of decay trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub time: f64,
    /// Per-bin mean of `1 + s_z` at `time`; `None` for empty bins.
    pub mean_excitation: Vec<Option<f64>>,
    pub std_excitation: Vec<Option<f64>>,
    /// Per-bin mean of `1 + s_z` at the start of the trajectories.
    pub initial_mean: Vec<Option<f64>>,
    pub initial_std: Vec<Option<f64>>,
    /// `mean(1 + s_z(t)) / mean(1 + s_z(0))`.
    pub fractional_survival: Vec<Option<f64>>,
    /// Standard error of the fractional survival.
    pub survival_stderr: Vec<Option<f64>>,
}

impl SurvivalHistogram {
    pub fn bin_centers(&self) -> Vec<f64> {
        self.bin_edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Index of the bin containing `delta`.
    pub fn bin_of(&self, delta: f64) -> Option<usize> {
        bin_index(&self.bin_edges, delta)
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "bin_lo",
            "bin_hi",
            "count",
            "initial_mean",
            "initial_std",
            "mean_excitation",
            "std_excitation",
            "fractional_survival",
            "survival_stderr",
        ])?;
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for k in 0..self.counts.len() {
            w.write_record([
                self.bin_edges[k].to_string(),
                self.bin_edges[k + 1].to_string(),
                self.counts[k].to_string(),
                f(self.initial_mean[k]),
                f(self.initial_std[k]),
                f(self.mean_excitation[k]),
                f(self.std_excitation[k]),
                f(self.fractional_survival[k]),
                f(self.survival_stderr[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn bin_index(edges: &[f64], x: f64) -> Option<usize> {
    let n = edges.len() - 1;
    if x < edges[0] || x > edges[n] {
        return None;
    }
    let k = edges.partition_point(|e| *e <= x);
    Some(k.saturating_sub(1).min(n - 1))
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 { values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (Some(mean), Some(var.sqrt()))
}

/// Bins spins of all realizations by detuning over `[lo, hi]` and averages
/// the excitation `1 + s_z` at `time` (measured from trajectory start).
pub fn bin_survival(
    realizations: &[DisorderRealization],
    trajectories: &[Trajectory],
    time: f64,
    n_bins: usize,
    range: (f64, f64),
) -> Result<SurvivalHistogram> {
    if realizations.len() != trajectories.len() {
        return Err(Error::Domain("one trajectory per realization required".into()));
    }
    if n_bins == 0 || !(range.1 > range.0) {
        return Err(Error::Domain("need at least one bin over a non-empty range".into()));
    }
    let width = (range.1 - range.0) / n_bins as f64;
    let bin_edges: Vec<f64> = (0..=n_bins).map(|k| range.0 + k as f64 * width).collect();
    let mut initial: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    let mut later: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for (r, traj) in realizations.iter().zip(trajectories) {
        let (t_first, t_last) = match (traj.times.first(), traj.times.last()) {
            (Some(a), Some(b)) => (*a, *b),
            _ => return Err(Error::Domain("empty trajectory".into())),
        };
        if time < t_first || time > t_last {
            return Err(Error::Domain(format!("time {time} outside trajectory span [{t_first}, {t_last}]")));
        }
        let s0 = &traj.states[0];
        let st = traj.state_near(time);
        if s0.n_ions() != r.len() {
            return Err(Error::DimensionMismatch { state: s0.n_ions(), realization: r.len() });
        }
        for (j, ion) in r.ions.iter().enumerate() {
            if let Some(k) = bin_index(&bin_edges, ion.delta) {
                initial[k].push(1.0 + s0.s_z[j]);
                later[k].push(1.0 + st.s_z[j]);
            }
        }
    }
    let mut hist = SurvivalHistogram {
        bin_edges,
        counts: initial.iter().map(Vec::len).collect(),
        time,
        mean_excitation: Vec::new(),
        std_excitation: Vec::new(),
        initial_mean: Vec::new(),
        initial_std: Vec::new(),
        fractional_survival: Vec::new(),
        survival_stderr: Vec::new(),
    };
    for k in 0..n_bins {
        let (m0, s0) = mean_std(&initial[k]);
        let (mt, st) = mean_std(&later[k]);
        hist.initial_mean.push(m0);
        hist.initial_std.push(s0);
        hist.mean_excitation.push(mt);
        hist.std_excitation.push(st);
        let n = initial[k].len() as f64;
        let (frac, err) = match (m0, s0, mt, st) {
            (Some(m0), Some(s0), Some(mt), Some(st)) if m0 > 0.0 => {
                let r = mt / m0;
                let rel_t = if mt > 0.0 { st / (mt * n.sqrt()) } else { 0.0 };
                let rel_0 = s0 / (m0 * n.sqrt());
                (Some(r), Some(r * (rel_t * rel_t + rel_0 * rel_0).sqrt()))
            }
            _ => (None, None),
        };
        hist.fractional_survival.push(frac);
        hist.survival_stderr.push(err);
    }
    Ok(hist)
}
