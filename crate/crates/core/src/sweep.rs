//! Flux x detuning sweeps with disorder averaging, model comparison,
//! saturation curves and persisted, reproducible run directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytics::{bin_survival, SurvivalHistogram};
use crate::dynamics::{
    full_flux_series, integrate, local_flux_series, run_decay, FluorescenceTrace, FullSystem, LocalSystem, Model,
    SystemState, Trajectory,
};
use crate::error::{Error, Result};
use crate::fitting::{
    fit_double_lorentzian, fit_exponential, fit_lorentzian_single, fit_ple_saturation, FitResult, ModelFunction,
};
use crate::ode::OdeSystem;
use crate::params::{sample_ensemble, sample_from_seed, DisorderRealization, ModelParams};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
/// Start of the default exponential-fit window, after the cavity ringdown.
pub const DEFAULT_FIT_START: f64 = 30.0;

/// Excitation bookkeeping by detuning at a fixed time after the pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalSpec {
    pub time: f64,
    pub n_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub run_id: String,
    pub base_params: ModelParams,
    pub flux_list: Vec<f64>,
    pub detuning_grid: Vec<f64>,
    pub models: Vec<Model>,
    /// Exponential-fit window; `None` means `[30, t_decay]`.
    pub fit_window: Option<(f64, f64)>,
    /// Histograms are taken at `Delta_c = 0` points only.
    pub survival: Option<SurvivalSpec>,
    /// Number of evenly spaced pulse-phase samples checked for invariants.
    pub pulse_checkpoints: usize,
    /// Write every disorder-averaged trace as CSV.
    pub dump_traces: bool,
}

/// `n` evenly spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 }).collect(),
    }
}

impl Default for SweepPlan {
    fn default() -> Self {
        SweepPlan {
            run_id: "sweep".into(),
            base_params: ModelParams::default(),
            flux_list: vec![0.01, 0.25, 16.0, 64.0],
            detuning_grid: linspace(-3.0, 3.0, 21),
            models: vec![Model::Full, Model::Local],
            fit_window: None,
            survival: None,
            pulse_checkpoints: 20,
            dump_traces: false,
        }
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

impl SweepPlan {
    pub fn fit_window(&self) -> (f64, f64) {
        self.fit_window.unwrap_or((DEFAULT_FIT_START.min(self.base_params.t_decay), self.base_params.t_decay))
    }

    pub fn validate(&self) -> Result<()> {
        self.base_params.validate()?;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.run_id.trim().is_empty() {
            return bad("run_id must not be empty");
        }
        if self.flux_list.is_empty()
            || !strictly_increasing(&self.flux_list)
            || self.flux_list.iter().any(|f| !(*f > 0.0))
        {
            return bad("flux_list must be non-empty, positive and strictly increasing");
        }
        if self.detuning_grid.is_empty()
            || !strictly_increasing(&self.detuning_grid)
            || self.detuning_grid.iter().any(|d| !d.is_finite())
        {
            return bad("detuning_grid must be non-empty, finite and strictly increasing");
        }
        if self.models.is_empty() {
            return bad("at least one model is required");
        }
        if self.models.iter().enumerate().any(|(i, m)| self.models[..i].contains(m)) {
            return bad("models must not repeat");
        }
        let (lo, hi) = self.fit_window();
        if !(lo >= 0.0 && hi > lo && hi <= self.base_params.t_decay) {
            return bad("fit window must lie inside [0, t_decay]");
        }
        if let Some(s) = &self.survival {
            if !(s.time >= 0.0 && s.time <= self.base_params.t_decay) || s.n_bins == 0 {
                return bad("survival time must lie inside [0, t_decay] with at least one bin");
            }
        }
        Ok(())
    }

    pub fn point_count(&self) -> usize {
        self.flux_list.len() * self.detuning_grid.len()
    }

    /// Number of (realization, grid point) integration tasks.
    pub fn task_count(&self) -> usize {
        self.point_count() * self.base_params.n_traj
    }

    pub fn params_at(&self, flux: f64, detuning: f64) -> ModelParams {
        self.base_params.clone().with_flux(flux).with_detuning(detuning)
    }
}

/// Worst-case values of the dynamical invariants over a set of trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    /// Largest `4|s|^2 + z^2` seen at any sample.
    pub max_bloch_radius_sq: f64,
    /// Largest rise of the total excitation between consecutive decay
    /// samples of the full model, relative to its value at the pulse end.
    pub max_energy_rise: f64,
    /// Largest derivative component of either model at the ground state with the drive off.
    pub max_fixed_point_residual: f64,
    pub trajectories: usize,
}

impl Default for InvariantReport {
    fn default() -> Self {
        InvariantReport {
            max_bloch_radius_sq: 0.0,
            max_energy_rise: f64::NEG_INFINITY,
            max_fixed_point_residual: 0.0,
            trajectories: 0,
        }
    }
}

impl InvariantReport {
    pub fn merge(&mut self, other: &InvariantReport) {
        self.max_bloch_radius_sq = self.max_bloch_radius_sq.max(other.max_bloch_radius_sq);
        self.max_energy_rise = self.max_energy_rise.max(other.max_energy_rise);
        self.max_fixed_point_residual = self.max_fixed_point_residual.max(other.max_fixed_point_residual);
        self.trajectories += other.trajectories;
    }

    pub fn bloch_ok(&self, tol: f64) -> bool {
        self.max_bloch_radius_sq <= 1.0 + tol
    }

    pub fn energy_ok(&self, tol: f64) -> bool {
        self.max_energy_rise <= tol
    }

    pub fn fixed_point_ok(&self) -> bool {
        self.max_fixed_point_residual == 0.0
    }
}

/// Everything one realization contributes to one grid point.
struct RealizationOutcome {
    series: Vec<Vec<f64>>,
    survival: Vec<Option<Trajectory>>,
    invariants: InvariantReport,
}

fn ground_residual(realization: &DisorderRealization, params: &ModelParams) -> f64 {
    let y = SystemState::ground(realization.len()).to_flat();
    let mut dy = vec![0.0; y.len()];
    let mut worst = 0.0f64;
    FullSystem::new(realization, params, false).rhs(0.0, &y, &mut dy);
    worst = dy.iter().fold(worst, |m, v| m.max(v.abs()));
    LocalSystem::new(realization, params).rhs(0.0, &y, &mut dy);
    dy.iter().fold(worst, |m, v| m.max(v.abs()))
}

fn run_realization(
    realization: &DisorderRealization,
    params: &ModelParams,
    models: &[Model],
    survival_time: Option<f64>,
    checkpoints: usize,
) -> Result<RealizationOutcome> {
    let mut inv =
        InvariantReport { max_fixed_point_residual: ground_residual(realization, params), ..Default::default() };
    let ground = SystemState::ground(realization.len());
    let pulse_end = if params.beta_in == 0.0 {
        ground
    } else {
        let k = checkpoints.max(1);
        let grid: Vec<f64> =
            (1..=k).map(|i| if i == k { params.t_pulse } else { params.t_pulse * i as f64 / k as f64 }).collect();
        let pulse = integrate(&ground, realization, params, Model::Full, true, params.t_pulse, &grid)?;
        for s in &pulse.states {
            inv.max_bloch_radius_sq = inv.max_bloch_radius_sq.max(s.max_bloch_radius_sq());
        }
        pulse.states.into_iter().last().expect("non-empty pulse grid")
    };
    let mut series = Vec::with_capacity(models.len());
    let mut survival = Vec::with_capacity(models.len());
    for &model in models {
        let traj = run_decay(realization, &pulse_end, params, model)?;
        inv.trajectories += 1;
        for s in &traj.states {
            inv.max_bloch_radius_sq = inv.max_bloch_radius_sq.max(s.max_bloch_radius_sq());
        }
        if model == Model::Full {
            let e0 = traj.states[0].excitation().max(f64::MIN_POSITIVE);
            let rise = traj
                .states
                .windows(2)
                .map(|w| (w[1].excitation() - w[0].excitation()) / e0)
                .fold(f64::NEG_INFINITY, f64::max);
            inv.max_energy_rise = inv.max_energy_rise.max(rise);
        }
        series.push(match model {
            Model::Full => full_flux_series(&traj, params),
            Model::Local => local_flux_series(&traj, realization, params),
        });
        survival.push(survival_time.map(|t| Trajectory {
            times: vec![0.0, t],
            states: vec![traj.states[0].clone(), traj.state_near(t).clone()],
            drive_on: false,
        }));
    }
    Ok(RealizationOutcome { series, survival, invariants: inv })
}

/// Result of one (flux, detuning, model) grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub flux: f64,
    pub detuning: f64,
    pub model: Model,
    pub master_seed: u64,
    pub n_traj: usize,
    pub gamma_over_kappa: Option<f64>,
    pub fit_ok: bool,
    pub fit: FitResult,
    #[serde(skip)]
    pub trace: FluorescenceTrace,
    #[serde(skip)]
    pub survival: Option<SurvivalHistogram>,
    pub invariants: InvariantReport,
}

fn fit_trace(trace: &FluorescenceTrace, window: (f64, f64)) -> (FitResult, Option<f64>, bool) {
    match fit_exponential(trace, window) {
        Ok(fit) => {
            let gamma = fit.get("gamma");
            let ok = fit.ok() && gamma.is_some_and(|g| g > 0.0 && g.is_finite());
            (fit, gamma, ok)
        }
        Err(e) => (FitResult::failed(ModelFunction::Exponential, e.to_string()), None, false),
    }
}

/// Per-point analysis settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointOptions {
    pub fit_window: (f64, f64),
    pub survival: Option<SurvivalSpec>,
    pub pulse_checkpoints: usize,
}

impl PointOptions {
    pub fn for_params(params: &ModelParams) -> Self {
        PointOptions {
            fit_window: (DEFAULT_FIT_START.min(params.t_decay), params.t_decay),
            survival: None,
            pulse_checkpoints: 1,
        }
    }
}

/// Pulse plus decay for every realization at one grid point, for each
/// requested model. The local-model decay starts from the full-model pulse-end state.
pub fn run_point_models(
    base: &ModelParams,
    flux: f64,
    detuning: f64,
    realizations: &[DisorderRealization],
    models: &[Model],
    options: &PointOptions,
) -> Result<Vec<PointResult>> {
    let params = &base.clone().with_flux(flux).with_detuning(detuning);
    params.validate()?;
    let PointOptions { fit_window, survival, pulse_checkpoints } = *options;
    let survival_time = survival.map(|s| s.time);
    let outcomes = realizations
        .par_iter()
        .map(|r| run_realization(r, params, models, survival_time, pulse_checkpoints))
        .collect::<Result<Vec<_>>>()?;
    let times = crate::dynamics::decay_grid(params);
    let mut out = Vec::with_capacity(models.len());
    for (m, &model) in models.iter().enumerate() {
        let series: Vec<Vec<f64>> = outcomes.iter().map(|o| o.series[m].clone()).collect();
        let trace = FluorescenceTrace::average(times.clone(), &series);
        let (fit, gamma, fit_ok) = fit_trace(&trace, fit_window);
        let mut invariants = InvariantReport::default();
        for o in &outcomes {
            invariants.merge(&o.invariants);
        }
        let survival = match survival {
            Some(spec) => {
                let trajs: Vec<Trajectory> =
                    outcomes.iter().map(|o| o.survival[m].clone().expect("survival requested")).collect();
                let half = params.delta_inh;
                Some(bin_survival(realizations, &trajs, spec.time, spec.n_bins, (-half, half))?)
            }
            None => None,
        };
        out.push(PointResult {
            flux,
            detuning,
            model,
            master_seed: params.master_seed,
            n_traj: realizations.len(),
            gamma_over_kappa: gamma,
            fit_ok,
            fit,
            trace,
            survival,
            invariants,
        });
    }
    Ok(out)
}

/// Disorder-averaged trace and exponential fit of one grid point.
pub fn run_point(
    params: &ModelParams,
    flux: f64,
    detuning: f64,
    model: Model,
    realizations: &[DisorderRealization],
) -> Result<(FluorescenceTrace, FitResult)> {
    let options = PointOptions::for_params(params);
    let mut res = run_point_models(params, flux, detuning, realizations, &[model], &options)?;
    let point = res.pop().expect("one model requested");
    Ok((point.trace, point.fit))
}

/// Line-shape fits of one Gamma(Delta_c) curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxRow {
    pub flux: f64,
    pub model: Model,
    /// Largest successfully fitted Gamma over the detuning grid.
    pub max_gamma: Option<f64>,
    pub argmax_detuning: Option<f64>,
    pub gamma_at_zero: Option<f64>,
    pub single_lorentzian: Option<FitResult>,
    pub double_lorentzian: Option<FitResult>,
    pub failed_points: usize,
}

impl FluxRow {
    pub fn splitting(&self) -> Option<f64> {
        self.double_lorentzian.as_ref().filter(|f| f.converged).and_then(|f| f.derived("splitting"))
    }

    pub fn offset_b(&self) -> Option<f64> {
        self.double_lorentzian.as_ref().filter(|f| f.converged).and_then(|f| f.get("b"))
    }

    pub fn fwhm(&self) -> Option<f64> {
        self.single_lorentzian.as_ref().filter(|f| f.converged).and_then(|f| f.derived("fwhm"))
    }
}

fn flux_row(flux: f64, model: Model, points: &[&PointResult]) -> FluxRow {
    let ok: Vec<(f64, f64)> =
        points.iter().filter(|p| p.fit_ok).filter_map(|p| p.gamma_over_kappa.map(|g| (p.detuning, g))).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = ok.iter().cloned().unzip();
    let best = ok.iter().cloned().max_by(|a, b| a.1.total_cmp(&b.1));
    let fit_or_note = |r: Result<FitResult>, model: ModelFunction| match r {
        Ok(f) => Some(f),
        Err(e) if x.len() >= model.min_points() => Some(FitResult::failed(model, e.to_string())),
        Err(_) => None,
    };
    FluxRow {
        flux,
        model,
        max_gamma: best.map(|b| b.1),
        argmax_detuning: best.map(|b| b.0),
        gamma_at_zero: ok.iter().find(|p| p.0 == 0.0).map(|p| p.1),
        single_lorentzian: fit_or_note(fit_lorentzian_single(&x, &y), ModelFunction::Lorentzian),
        double_lorentzian: fit_or_note(fit_double_lorentzian(&x, &y), ModelFunction::DoubleLorentzian),
        failed_points: points.len() - ok.len(),
    }
}

/// Integrated fluorescence versus flux with its PLE fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationCurve {
    pub fluxes: Vec<f64>,
    pub integrated: Vec<f64>,
    pub window: (f64, f64),
    pub fit: FitResult,
    pub phi_0: Option<f64>,
}

impl SaturationCurve {
    pub fn from_traces(fluxes: &[f64], traces: &[&FluorescenceTrace], window: (f64, f64)) -> Self {
        let integrated: Vec<f64> = traces.iter().map(|t| t.integrate(window.0, window.1)).collect();
        let fit = fit_ple_saturation(fluxes, &integrated)
            .unwrap_or_else(|e| FitResult::failed(ModelFunction::PleSaturation, e.to_string()));
        let phi_0 = if fit.converged { fit.derived("phi_0") } else { None };
        SaturationCurve { fluxes: fluxes.to_vec(), integrated, window, fit, phi_0 }
    }

    /// Divided differences of the integrated fluorescence are non-increasing.
    pub fn data_concave(&self, rel_tol: f64) -> bool {
        let slopes: Vec<f64> = self
            .fluxes
            .windows(2)
            .zip(self.integrated.windows(2))
            .map(|(f, i)| (i[1] - i[0]) / (f[1] - f[0]))
            .collect();
        slopes.windows(2).all(|s| s[1] <= s[0] * (1.0 + rel_tol) + rel_tol * s[0].abs())
    }

    /// The fitted PLE curve has positive parameters, so it is increasing and concave.
    pub fn fit_concave(&self) -> bool {
        self.fit.converged && self.fit.parameters.iter().all(|p| *p > 0.0)
    }
}

/// Total decay fluorescence versus flux at `Delta_c = 0` with the full model.
pub fn run_saturation_curve(
    params: &ModelParams,
    flux_grid: &[f64],
    realizations: &[DisorderRealization],
) -> Result<SaturationCurve> {
    if params.delta_c != 0.0 {
        return Err(Error::Config("saturation curves are taken at Delta_c = 0".into()));
    }
    if flux_grid.is_empty() || !strictly_increasing(flux_grid) || flux_grid.iter().any(|f| !(*f > 0.0)) {
        return Err(Error::Config("saturation flux grid must be positive and strictly increasing".into()));
    }
    let window = (0.0, params.t_decay);
    let mut traces = Vec::with_capacity(flux_grid.len());
    let options = PointOptions { fit_window: window, ..PointOptions::for_params(params) };
    for &flux in flux_grid {
        let mut pts = run_point_models(params, flux, 0.0, realizations, &[Model::Full], &options)?;
        traces.push(pts.pop().expect("one model").trace);
    }
    let refs: Vec<&FluorescenceTrace> = traces.iter().collect();
    Ok(SaturationCurve::from_traces(flux_grid, &refs, window))
}

/// One row of the model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub flux: f64,
    pub flux_over_phi0: Option<f64>,
    pub model: Model,
    pub normalized_max_gamma: Option<f64>,
    pub splitting: Option<f64>,
    pub offset_b: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub code_version: String,
    pub threads: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub plan: SweepPlan,
    pub realization_seeds: Vec<u64>,
    pub points: Vec<PointResult>,
    pub rows: Vec<FluxRow>,
    pub saturation: Option<SaturationCurve>,
    pub invariants: InvariantReport,
    pub metadata: RunMetadata,
}

impl SweepResult {
    pub fn point(&self, flux: f64, detuning: f64, model: Model) -> Option<&PointResult> {
        self.points.iter().find(|p| p.flux == flux && p.detuning == detuning && p.model == model)
    }

    pub fn row(&self, flux: f64, model: Model) -> Option<&FluxRow> {
        self.rows.iter().find(|r| r.flux == flux && r.model == model)
    }

    pub fn phi_0(&self) -> Option<f64> {
        self.saturation.as_ref().and_then(|s| s.phi_0)
    }

    /// Gamma(Delta_c) of one flux and model, successful fits only.
    pub fn gamma_curve(&self, flux: f64, model: Model) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .filter(|p| p.flux == flux && p.model == model && p.fit_ok)
            .filter_map(|p| p.gamma_over_kappa.map(|g| (p.detuning, g)))
            .collect()
    }
}

/// Summary handed to the progress callback after each flux.
#[derive(Debug, Clone)]
pub struct FluxProgress<'a> {
    pub index: usize,
    pub flux: f64,
    pub rows: &'a [FluxRow],
}

pub fn run_detuning_sweep(plan: &SweepPlan) -> Result<SweepResult> {
    run_detuning_sweep_with(plan, |_| Ok(()))
}

/// Runs every (flux, detuning) point for every model on one shared set of realizations.
pub fn run_detuning_sweep_with(
    plan: &SweepPlan,
    mut progress: impl FnMut(&FluxProgress) -> Result<()>,
) -> Result<SweepResult> {
    plan.validate()?;
    let start = Instant::now();
    let realizations = sample_ensemble(&plan.base_params)?;
    let window = plan.fit_window();
    let mut points = Vec::with_capacity(plan.point_count() * plan.models.len());
    let mut rows = Vec::new();
    for (fi, &flux) in plan.flux_list.iter().enumerate() {
        let first = points.len();
        for &det in &plan.detuning_grid {
            let options = PointOptions {
                fit_window: window,
                survival: plan.survival.filter(|_| det == 0.0),
                pulse_checkpoints: plan.pulse_checkpoints,
            };
            points.extend(run_point_models(&plan.base_params, flux, det, &realizations, &plan.models, &options)?);
        }
        let new_rows: Vec<FluxRow> = plan
            .models
            .iter()
            .map(|&m| {
                let pts: Vec<&PointResult> = points[first..].iter().filter(|p| p.model == m).collect();
                flux_row(flux, m, &pts)
            })
            .collect();
        progress(&FluxProgress { index: fi, flux, rows: &new_rows })?;
        rows.extend(new_rows);
    }
    let mut invariants = InvariantReport::default();
    for p in &points {
        invariants.merge(&p.invariants);
    }
    let saturation = saturation_from_points(plan, &points);
    Ok(SweepResult {
        plan: plan.clone(),
        realization_seeds: realizations.iter().map(|r| r.seed).collect(),
        points,
        rows,
        saturation,
        invariants,
        metadata: RunMetadata {
            code_version: CODE_VERSION.into(),
            threads: rayon::current_num_threads(),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    })
}

/// PLE fit of the full-model `Delta_c = 0` traces over the whole decay window.
fn saturation_from_points(plan: &SweepPlan, points: &[PointResult]) -> Option<SaturationCurve> {
    if !plan.detuning_grid.contains(&0.0)
        || !plan.models.contains(&Model::Full)
        || plan.flux_list.len() < ModelFunction::PleSaturation.min_points()
    {
        return None;
    }
    let traces: Vec<&FluorescenceTrace> = plan
        .flux_list
        .iter()
        .map(|&f| points.iter().find(|p| p.flux == f && p.detuning == 0.0 && p.model == Model::Full).map(|p| &p.trace))
        .collect::<Option<_>>()?;
    Some(SaturationCurve::from_traces(&plan.flux_list, &traces, (0.0, plan.base_params.t_decay)))
}

/// Maximum Gamma over the detuning grid normalized by its smallest-flux
/// value, plus the double-Lorentzian splitting and offset, for each model.
pub fn compare_models(result: &SweepResult, phi_0: Option<f64>) -> Result<Vec<ComparisonRow>> {
    let models = &result.plan.models;
    if !(models.contains(&Model::Full) && models.contains(&Model::Local)) {
        return Err(Error::Config("model comparison needs both the full and the local model".into()));
    }
    let mut out = Vec::new();
    for &model in models {
        let reference = result.rows.iter().find(|r| r.model == model).and_then(|r| r.max_gamma);
        for row in result.rows.iter().filter(|r| r.model == model) {
            out.push(ComparisonRow {
                flux: row.flux,
                flux_over_phi0: phi_0.map(|p| row.flux / p),
                model,
                normalized_max_gamma: match (row.max_gamma, reference) {
                    (Some(m), Some(r)) if r > 0.0 => Some(m / r),
                    _ => None,
                },
                splitting: row.splitting(),
                offset_b: row.offset_b(),
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Incomplete,
    Complete,
}

/// Machine-readable description of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub run_id: String,
    pub status: RunStatus,
    pub code_version: String,
    pub plan: SweepPlan,
    pub realization_seeds: Vec<u64>,
    pub completed_fluxes: Vec<f64>,
    pub threads: Option<usize>,
    pub wall_time_s: Option<f64>,
    pub phi_0: Option<f64>,
    pub invariants: Option<InvariantReport>,
    pub files: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_bytes(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn flux_tag(v: f64) -> String {
    v.to_string().replace('-', "m").replace('.', "p")
}

/// Run directory writer; the manifest stays `incomplete` until [`RunWriter::finish`].
pub struct RunWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl RunWriter {
    pub fn create(dir: &Path, plan: &SweepPlan) -> Result<Self> {
        plan.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let seeds = (0..plan.base_params.n_traj as u64)
            .map(|k| crate::params::realization_seed(plan.base_params.master_seed, k))
            .collect();
        let writer = RunWriter {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                schema_version: MANIFEST_SCHEMA_VERSION,
                run_id: plan.run_id.clone(),
                status: RunStatus::Incomplete,
                code_version: CODE_VERSION.into(),
                plan: plan.clone(),
                realization_seeds: seeds,
                completed_fluxes: Vec::new(),
                threads: None,
                wall_time_s: None,
                phi_0: None,
                invariants: None,
                files: Vec::new(),
            },
        };
        writer.write_manifest()?;
        Ok(writer)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    fn write_manifest(&self) -> Result<()> {
        let json = serde_json::to_vec_pretty(&self.manifest).map_err(|e| Error::json("manifest", e))?;
        write_atomic(&self.dir.join(MANIFEST_FILE), &json)
    }

    pub fn flux_done(&mut self, flux: f64) -> Result<()> {
        self.manifest.completed_fluxes.push(flux);
        self.write_manifest()
    }

    fn put(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.manifest.files.push(name.to_string());
        Ok(())
    }

    /// Writes all tables and marks the manifest complete.
    pub fn finish(mut self, result: &SweepResult) -> Result<Manifest> {
        if result.realization_seeds != self.manifest.realization_seeds {
            return Err(Error::Domain("result realization seeds differ from the manifest".into()));
        }
        self.manifest.files.clear();
        let gamma_table = csv_bytes(
            &["flux", "detuning", "model", "gamma_over_kappa", "fit_ok"],
            result.points.iter().map(|p| {
                vec![
                    p.flux.to_string(),
                    p.detuning.to_string(),
                    p.model.name().into(),
                    opt(p.gamma_over_kappa),
                    p.fit_ok.to_string(),
                ]
            }),
        );
        self.put("gamma_vs_detuning.csv", &gamma_table)?;

        let phi_0 = result.phi_0();
        let comparison = compare_models(result, phi_0).unwrap_or_default();
        let max_table = csv_bytes(
            &["flux_over_phi0", "model", "normalized_max_gamma", "splitting", "offset_b"],
            comparison.iter().map(|c| {
                vec![
                    opt(c.flux_over_phi0),
                    c.model.name().into(),
                    opt(c.normalized_max_gamma),
                    opt(c.splitting),
                    opt(c.offset_b),
                ]
            }),
        );
        self.put("max_gamma_vs_flux.csv", &max_table)?;

        if let Some(sat) = &result.saturation {
            let bytes = csv_bytes(
                &["flux", "integrated_fluorescence"],
                sat.fluxes.iter().zip(&sat.integrated).map(|(f, i)| vec![f.to_string(), i.to_string()]),
            );
            self.put("saturation.csv", &bytes)?;
        }

        for p in &result.points {
            if let Some(h) = &p.survival {
                let mut buf = Vec::new();
                h.write_csv(&mut buf).map_err(|e| Error::csv(self.dir.join("survival"), e))?;
                self.put(&format!("survival_{}_flux{}.csv", p.model.name(), flux_tag(p.flux)), &buf)?;
            }
        }

        if result.plan.dump_traces {
            let dir = self.dir.join("traces");
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for p in &result.points {
                let mut buf = Vec::new();
                p.trace.write_csv(&mut buf).map_err(|e| Error::csv(&dir, e))?;
                let name =
                    format!("traces/{}_flux{}_det{}.csv", p.model.name(), flux_tag(p.flux), flux_tag(p.detuning));
                self.put(&name, &buf)?;
            }
        }

        let points = serde_json::to_vec_pretty(&result.points).map_err(|e| Error::json("points", e))?;
        self.put("points.json", &points)?;
        let rows = serde_json::to_vec_pretty(&result.rows).map_err(|e| Error::json("rows", e))?;
        self.put("rows.json", &rows)?;
        if let Some(sat) = &result.saturation {
            let bytes = serde_json::to_vec_pretty(sat).map_err(|e| Error::json("saturation", e))?;
            self.put("saturation.json", &bytes)?;
        }

        self.manifest.completed_fluxes = result.plan.flux_list.clone();
        self.manifest.status = RunStatus::Complete;
        self.manifest.threads = Some(result.metadata.threads);
        self.manifest.wall_time_s = Some(result.metadata.wall_time_s);
        self.manifest.phi_0 = phi_0;
        self.manifest.invariants = Some(result.invariants);
        self.write_manifest()?;
        Ok(self.manifest)
    }
}

/// Writes a finished sweep into `dir`.
pub fn persist_run(result: &SweepResult, dir: &Path) -> Result<Manifest> {
    RunWriter::create(dir, &result.plan)?.finish(result)
}

pub fn load_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
    if m.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::Config(format!("unsupported manifest schema version {}", m.schema_version)));
    }
    Ok(m)
}

/// Re-runs the sweep recorded in a manifest, checking that the recorded
/// realization seeds are reproduced.
pub fn rerun_from_manifest(manifest: &Manifest) -> Result<SweepResult> {
    let params = &manifest.plan.base_params;
    for (k, seed) in manifest.realization_seeds.iter().enumerate() {
        let r = sample_from_seed(params, k as u64, *seed);
        if crate::params::realization_seed(params.master_seed, k as u64) != r.seed {
            return Err(Error::Config(format!("manifest seed of realization {k} does not match its master seed")));
        }
    }
    if manifest.realization_seeds.len() != params.n_traj {
        return Err(Error::Config("manifest lists a different number of realizations than n_traj".into()));
    }
    run_detuning_sweep(&manifest.plan)
}
