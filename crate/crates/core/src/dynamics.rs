//! Mean-field equations of motion of the driven, damped Tavis-Cummings model
//! and of the effective local-decay model, plus the pulse/decay protocol.
//!
//! The integrator works on a flat real vector of length `2 + 3N`:
//! `[Re a, Im a, Re s_1, Im s_1, z_1, Re s_2, Im s_2, z_2, ...]`
//! where `s_j` is the spin coherence `<sigma_-^j>` and `z_j = <sigma_z^j>`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ode::{Dopri5, OdeSystem};
use crate::params::{DisorderRealization, IonParams, ModelParams};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Which set of decay-phase equations to integrate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    /// Collective mean-field Tavis-Cummings dynamics.
    Full,
    /// Independently Purcell-decaying spins driven by a freely decaying field.
    Local,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Full => "full",
            Model::Local => "local",
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Model::Full),
            "local" => Ok(Model::Local),
            other => Err(Error::Config(format!("unknown model `{other}` (expected `full` or `local`)"))),
        }
    }
}

/// Mean-field phase-space point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub a: Complex64,
    pub s_minus: Vec<Complex64>,
    pub s_z: Vec<f64>,
}

impl SystemState {
    /// Empty cavity, every ion in its ground state.
    pub fn ground(n_ions: usize) -> Self {
        SystemState {
            a: Complex64::new(0.0, 0.0),
            s_minus: vec![Complex64::new(0.0, 0.0); n_ions],
            s_z: vec![-1.0; n_ions],
        }
    }

    pub fn n_ions(&self) -> usize {
        self.s_z.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut y = Vec::with_capacity(2 + 3 * self.n_ions());
        y.push(self.a.re);
        y.push(self.a.im);
        for (s, z) in self.s_minus.iter().zip(&self.s_z) {
            y.extend_from_slice(&[s.re, s.im, *z]);
        }
        y
    }

    pub fn from_flat(y: &[f64]) -> Self {
        assert!(y.len() >= 2 && (y.len() - 2).is_multiple_of(3), "flat state has invalid length {}", y.len());
        let n = (y.len() - 2) / 3;
        let mut s_minus = Vec::with_capacity(n);
        let mut s_z = Vec::with_capacity(n);
        for c in y[2..].chunks_exact(3) {
            s_minus.push(Complex64::new(c[0], c[1]));
            s_z.push(c[2]);
        }
        SystemState { a: Complex64::new(y[0], y[1]), s_minus, s_z }
    }

    /// Total excitation `|a|^2 + sum_j (1 + z_j)/2`.
    pub fn excitation(&self) -> f64 {
        self.a.norm_sqr() + self.spin_excitation()
    }

    pub fn spin_excitation(&self) -> f64 {
        self.s_z.iter().map(|z| 0.5 * (1.0 + z)).sum()
    }

    /// Largest value of `4|s_j|^2 + z_j^2` over all ions (at most 1 inside the Bloch ball).
    pub fn max_bloch_radius_sq(&self) -> f64 {
        self.s_minus.iter().zip(&self.s_z).map(|(s, z)| 4.0 * s.norm_sqr() + z * z).fold(0.0, f64::max)
    }

    fn check(&self, realization: &DisorderRealization) -> Result<()> {
        if self.n_ions() != realization.len() || self.s_minus.len() != self.s_z.len() {
            return Err(Error::DimensionMismatch { state: self.n_ions(), realization: realization.len() });
        }
        Ok(())
    }
}

/// Sampled solution of one integration.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    pub drive_on: bool,
}

impl Trajectory {
    /// State at the sample closest to `time`.
    pub fn state_near(&self, time: f64) -> &SystemState {
        let k = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - time).abs().total_cmp(&(b.1 - time).abs()))
            .map(|(k, _)| k)
            .expect("empty trajectory");
        &self.states[k]
    }
}

/// Purcell-enhanced single-spin decay rate `gamma + kappa g^2 / ((Delta_c - delta)^2 + kappa^2/4)`.
pub fn gamma_eff(ion: &IonParams, params: &ModelParams) -> f64 {
    let d = params.delta_c - ion.delta;
    params.gamma + params.kappa * ion.g * ion.g / (d * d + 0.25 * params.kappa * params.kappa)
}

/// Right-hand side of the full mean-field equations in complex form.
pub fn rhs_full(
    state: &SystemState,
    realization: &DisorderRealization,
    params: &ModelParams,
    drive_on: bool,
) -> Result<SystemState> {
    state.check(realization)?;
    let a = state.a;
    let drive = if drive_on { params.kappa_c.sqrt() * params.beta_in } else { 0.0 };
    let mut coupling = Complex64::new(0.0, 0.0);
    let mut ds = Vec::with_capacity(state.n_ions());
    let mut dz = Vec::with_capacity(state.n_ions());
    for ((ion, &s), &z) in realization.ions.iter().zip(&state.s_minus).zip(&state.s_z) {
        coupling += ion.g * s;
        ds.push(-(I * ion.delta + 0.5 * params.gamma) * s + I * ion.g * a * z);
        dz.push(sz_derivative(a, s, z, ion.g, params.gamma).re);
    }
    let da = -(I * params.delta_c + 0.5 * params.kappa) * a - I * coupling - drive;
    Ok(SystemState { a: da, s_minus: ds, s_z: dz })
}

/// `2i g [a* s - a s*] - rate (1 + z)` evaluated literally in complex arithmetic.
/// The result is real up to rounding.
pub fn sz_derivative(a: Complex64, s: Complex64, z: f64, g: f64, rate: f64) -> Complex64 {
    2.0 * I * g * (a.conj() * s - a * s.conj()) - rate * (1.0 + z)
}

/// Right-hand side of the local-decay model (defined for the drive-off phase).
pub fn rhs_local(state: &SystemState, realization: &DisorderRealization, params: &ModelParams) -> Result<SystemState> {
    state.check(realization)?;
    let a = state.a;
    let mut ds = Vec::with_capacity(state.n_ions());
    let mut dz = Vec::with_capacity(state.n_ions());
    for ((ion, &s), &z) in realization.ions.iter().zip(&state.s_minus).zip(&state.s_z) {
        let rate = gamma_eff(ion, params);
        ds.push(-(I * ion.delta + 0.5 * rate) * s + I * ion.g * a * z);
        dz.push(sz_derivative(a, s, z, ion.g, rate).re);
    }
    let da = -(I * params.delta_c + 0.5 * params.kappa) * a;
    Ok(SystemState { a: da, s_minus: ds, s_z: dz })
}

/// Flat-vector kernel of the full model.
pub struct FullSystem<'a> {
    ions: &'a [IonParams],
    kappa: f64,
    gamma: f64,
    delta_c: f64,
    drive: f64,
}

impl<'a> FullSystem<'a> {
    pub fn new(realization: &'a DisorderRealization, params: &ModelParams, drive_on: bool) -> Self {
        FullSystem {
            ions: &realization.ions,
            kappa: params.kappa,
            gamma: params.gamma,
            delta_c: params.delta_c,
            drive: if drive_on { params.kappa_c.sqrt() * params.beta_in } else { 0.0 },
        }
    }
}

impl OdeSystem for FullSystem<'_> {
    fn dim(&self) -> usize {
        2 + 3 * self.ions.len()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let (ar, ai) = (y[0], y[1]);
        let half_gamma = 0.5 * self.gamma;
        // sum_j g_j s_j
        let (mut cr, mut ci) = (0.0, 0.0);
        for ((ion, s), d) in self.ions.iter().zip(y[2..].chunks_exact(3)).zip(dy[2..].chunks_exact_mut(3)) {
            let (sr, si, z) = (s[0], s[1], s[2]);
            let g = ion.g;
            cr += g * sr;
            ci += g * si;
            // -(i delta + gamma/2) s + i g a z
            d[0] = ion.delta * si - half_gamma * sr - g * ai * z;
            d[1] = -ion.delta * sr - half_gamma * si + g * ar * z;
            // 2ig[a* s - a s*] = -4 g Im(a* s)
            d[2] = -4.0 * g * (ar * si - ai * sr) - self.gamma * (1.0 + z);
        }
        // -(i Delta_c + kappa/2) a - i C - drive
        dy[0] = self.delta_c * ai - 0.5 * self.kappa * ar + ci - self.drive;
        dy[1] = -self.delta_c * ar - 0.5 * self.kappa * ai - cr;
    }
}

/// Flat-vector kernel of the local-decay model.
pub struct LocalSystem<'a> {
    ions: &'a [IonParams],
    rates: Vec<f64>,
    kappa: f64,
    delta_c: f64,
}

impl<'a> LocalSystem<'a> {
    pub fn new(realization: &'a DisorderRealization, params: &ModelParams) -> Self {
        LocalSystem {
            ions: &realization.ions,
            rates: realization.ions.iter().map(|ion| gamma_eff(ion, params)).collect(),
            kappa: params.kappa,
            delta_c: params.delta_c,
        }
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }
}

impl OdeSystem for LocalSystem<'_> {
    fn dim(&self) -> usize {
        2 + 3 * self.ions.len()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let (ar, ai) = (y[0], y[1]);
        for (((ion, &rate), s), d) in
            self.ions.iter().zip(&self.rates).zip(y[2..].chunks_exact(3)).zip(dy[2..].chunks_exact_mut(3))
        {
            let (sr, si, z) = (s[0], s[1], s[2]);
            let g = ion.g;
            d[0] = ion.delta * si - 0.5 * rate * sr - g * ai * z;
            d[1] = -ion.delta * sr - 0.5 * rate * si + g * ar * z;
            d[2] = -4.0 * g * (ar * si - ai * sr) - rate * (1.0 + z);
        }
        dy[0] = self.delta_c * ai - 0.5 * self.kappa * ar;
        dy[1] = -self.delta_c * ar - 0.5 * self.kappa * ai;
    }
}

fn solver(params: &ModelParams) -> Dopri5 {
    Dopri5::with_tolerances(params.tolerances.rtol, params.tolerances.atol)
}

/// Integrates one model over `[0, t_end]`, sampling on `grid`.
pub fn integrate(
    initial: &SystemState,
    realization: &DisorderRealization,
    params: &ModelParams,
    model: Model,
    drive_on: bool,
    t_end: f64,
    grid: &[f64],
) -> Result<Trajectory> {
    initial.check(realization)?;
    let y0 = initial.to_flat();
    let ys = match model {
        Model::Full => {
            solver(params).integrate(&FullSystem::new(realization, params, drive_on), 0.0, &y0, t_end, grid)?.0
        }
        Model::Local => {
            if drive_on {
                return Err(Error::Domain("the local model is only defined with the drive off".into()));
            }
            solver(params).integrate(&LocalSystem::new(realization, params), 0.0, &y0, t_end, grid)?.0
        }
    };
    Ok(Trajectory { times: grid.to_vec(), states: ys.iter().map(|y| SystemState::from_flat(y)).collect(), drive_on })
}

/// Drives the ensemble from vacuum/ground for `t_pulse` and returns the final state.
pub fn run_pulse(realization: &DisorderRealization, params: &ModelParams) -> Result<SystemState> {
    let ground = SystemState::ground(realization.len());
    if params.beta_in == 0.0 {
        return Ok(ground);
    }
    let traj = integrate(&ground, realization, params, Model::Full, true, params.t_pulse, &[params.t_pulse])?;
    Ok(traj.states.into_iter().next().expect("one sample"))
}

/// Uniform decay grid `k / samples_per_kappa` measured from the end of the pulse.
pub fn decay_grid(params: &ModelParams) -> Vec<f64> {
    let n = params.decay_samples();
    (0..n).map(|k| (k as f64 / params.samples_per_kappa).min(params.t_decay)).collect()
}

/// Free decay (drive off) on the default grid.
pub fn run_decay(
    realization: &DisorderRealization,
    state_at_pulse_end: &SystemState,
    params: &ModelParams,
    model: Model,
) -> Result<Trajectory> {
    integrate(state_at_pulse_end, realization, params, model, false, params.t_decay, &decay_grid(params))
}

/// Free decay sampled on a caller-provided grid.
pub fn run_decay_on_grid(
    realization: &DisorderRealization,
    state_at_pulse_end: &SystemState,
    params: &ModelParams,
    model: Model,
    grid: &[f64],
) -> Result<Trajectory> {
    integrate(state_at_pulse_end, realization, params, model, false, params.t_decay, grid)
}

/// Photon flux `|sqrt(kappa_c) a + beta_in|^2` at the output port.
pub fn output_flux(state: &SystemState, params: &ModelParams, drive_on: bool) -> f64 {
    let drive = if drive_on { params.beta_in } else { 0.0 };
    (params.kappa_c.sqrt() * state.a + drive).norm_sqr()
}

/// Emitted photon rate of the local model: cavity leakage plus the
/// Purcell emission of every spin.
pub fn local_emission(state: &SystemState, rates: &[f64], params: &ModelParams) -> f64 {
    let spins: f64 = rates.iter().zip(&state.s_z).map(|(r, z)| r * 0.5 * (1.0 + z)).sum();
    params.kappa_c * state.a.norm_sqr() + spins
}

/// Disorder-averaged output flux on the decay grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FluorescenceTrace {
    pub times: Vec<f64>,
    pub flux: Vec<f64>,
    pub n_traj: usize,
}

impl FluorescenceTrace {
    /// Averages per-realization flux series in the given order.
    pub fn average(times: Vec<f64>, series: &[Vec<f64>]) -> Self {
        let mut flux = vec![0.0; times.len()];
        for s in series {
            assert_eq!(s.len(), times.len(), "flux series length mismatch");
            for (acc, v) in flux.iter_mut().zip(s) {
                *acc += v;
            }
        }
        let n = series.len().max(1) as f64;
        flux.iter_mut().for_each(|f| *f /= n);
        FluorescenceTrace { times, flux, n_traj: series.len() }
    }

    /// Trapezoidal integral of the flux over `[t_lo, t_hi]` (sample points inside the window).
    pub fn integrate(&self, t_lo: f64, t_hi: f64) -> f64 {
        let pts: Vec<(f64, f64)> = self
            .times
            .iter()
            .zip(&self.flux)
            .filter(|(t, _)| **t >= t_lo && **t <= t_hi)
            .map(|(t, f)| (*t, *f))
            .collect();
        pts.windows(2).map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1)).sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time_over_kappa", "flux", "n_traj"])?;
        for (t, f) in self.times.iter().zip(&self.flux) {
            w.write_record([t.to_string(), f.to_string(), self.n_traj.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Flux series `kappa_c |a(t)|^2` of one full-model decay trajectory.
pub fn full_flux_series(traj: &Trajectory, params: &ModelParams) -> Vec<f64> {
    traj.states.iter().map(|s| output_flux(s, params, false)).collect()
}

/// Emission series of one local-model decay trajectory.
pub fn local_flux_series(traj: &Trajectory, realization: &DisorderRealization, params: &ModelParams) -> Vec<f64> {
    let rates: Vec<f64> = realization.ions.iter().map(|ion| gamma_eff(ion, params)).collect();
    traj.states.iter().map(|s| local_emission(s, &rates, params)).collect()
}

/// Disorder-averaged fluorescence of the full model: each realization is
/// pulsed and then left to decay.
pub fn fluorescence_full(realizations: &[DisorderRealization], params: &ModelParams) -> Result<FluorescenceTrace> {
    let series = realizations
        .iter()
        .map(|r| {
            let start = run_pulse(r, params)?;
            Ok(full_flux_series(&run_decay(r, &start, params, Model::Full)?, params))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FluorescenceTrace::average(decay_grid(params), &series))
}

/// Disorder-averaged fluorescence of local-model decay trajectories.
pub fn fluorescence_local(
    trajectories: &[Trajectory],
    realizations: &[DisorderRealization],
    params: &ModelParams,
) -> FluorescenceTrace {
    assert_eq!(trajectories.len(), realizations.len());
    let series: Vec<_> = trajectories.iter().zip(realizations).map(|(t, r)| local_flux_series(t, r, params)).collect();
    let times = trajectories.first().map(|t| t.times.clone()).unwrap_or_default();
    FluorescenceTrace::average(times, &series)
}
