use std::fs::{self, OpenOptions};
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use purcell_core::config::Config;
use purcell_core::dynamics::{FluorescenceTrace, Model};
use purcell_core::fitting::{
    fit_double_lorentzian, fit_exponential, fit_lorentzian_single, fit_ple_saturation, fit_stretched_composite,
    ExperimentalDataset, FitResult, ModelFunction, Weighting,
};
use purcell_core::oracle::{compare_with_mean_field, truncation_change, MAX_ORACLE_IONS};
use purcell_core::params::{sample_ensemble, save_realizations_csv, DisorderRealization, IonParams};
use purcell_core::sweep::{
    compare_models, linspace, load_manifest, run_detuning_sweep_with, run_point_models, run_saturation_curve,
    write_atomic, ComparisonRow, FluxRow, PointOptions, RunMetadata, RunStatus, RunWriter, SweepResult,
    DEFAULT_FIT_START,
};

use crate::{Cli, Command, Common, Status};

const LOCK_FILE: &str = ".purcell.lock";
/// Oracle runs whose mean-field deviation exceeds this are flagged.
const ORACLE_TOLERANCE: f64 = 0.05;

/// Exclusive claim on an output directory, released on drop.
struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => bail!(
                "output directory {} is in use by another invocation (lock file {}); remove the lock if no run is active",
                dir.display(),
                path.display()
            ),
            Err(e) => Err(e).with_context(|| format!("cannot create lock file {}", path.display())),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn load_config(common: &Common) -> Result<Config> {
    let mut config = match &common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    config.apply_overrides(&common.overrides)?;
    if let Some(seed) = common.seed {
        config.model.master_seed = seed;
    }
    config.model.validate()?;
    Ok(config)
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    write_atomic(&dir.join(name), bytes)?;
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_table(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out.into_bytes()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn run(cli: Cli) -> Result<Status> {
    let common = &cli.common;
    if let Some(n) = common.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("cannot configure the worker pool")?;
    }
    if let Command::Fit { input, model, gamma0, weighting } = &cli.command {
        return cmd_fit(common, input, model, *gamma0, weighting);
    }
    let config = load_config(common)?;
    if common.verbose > 0 {
        eprintln!("{}", config.to_toml_string()?);
    }
    match &cli.command {
        Command::Sample => cmd_sample(common, &config),
        Command::Simulate { flux, detuning, model } => cmd_simulate(common, config, *flux, *detuning, model.as_deref()),
        Command::Sweep => cmd_sweep(common, &config),
        Command::Saturation => cmd_saturation(common, &config),
        Command::Compare { from } => cmd_compare(common, config, from.as_deref()),
        Command::Oracle => cmd_oracle(common, &config),
        Command::Fit { .. } => unreachable!("handled above"),
    }
}

/// Locks the output directory and records the resolved configuration.
fn start_run(common: &Common, config: &Config) -> Result<OutputLock> {
    let lock = OutputLock::acquire(&common.out)?;
    write(&common.out, "config.toml", config.to_toml_string()?.as_bytes())?;
    Ok(lock)
}

fn cmd_sample(common: &Common, config: &Config) -> Result<Status> {
    let p = &config.model;
    if common.dry_run {
        println!(
            "would sample {} realizations of {} ions (seed {}) into {}",
            p.n_traj,
            p.n_ions,
            p.master_seed,
            common.out.display()
        );
        return Ok(Status::Ok);
    }
    let _lock = start_run(common, config)?;
    let realizations = sample_ensemble(p)?;
    save_realizations_csv(&common.out.join("realizations.csv"), &realizations)?;
    println!(
        "sampled {} realizations of {} ions -> {}",
        realizations.len(),
        p.n_ions,
        common.out.join("realizations.csv").display()
    );
    Ok(Status::Ok)
}

fn cmd_simulate(
    common: &Common,
    mut config: Config,
    flux: Option<f64>,
    detuning: Option<f64>,
    model: Option<&str>,
) -> Result<Status> {
    if let Some(f) = flux {
        config.simulate.flux = f;
    }
    if let Some(d) = detuning {
        config.simulate.detuning = d;
    }
    if let Some(m) = model {
        config.simulate.model = m.parse()?;
    }
    let s = &config.simulate;
    let p = &config.model;
    let window = s.fit_window.map(|w| (w[0], w[1])).unwrap_or((DEFAULT_FIT_START.min(p.t_decay), p.t_decay));
    if common.dry_run {
        println!(
            "would simulate flux {} detuning {} with the {} model over {} realizations of {} ions, fit window [{}, {}]",
            s.flux,
            s.detuning,
            s.model.name(),
            p.n_traj,
            p.n_ions,
            window.0,
            window.1
        );
        return Ok(Status::Ok);
    }
    let _lock = start_run(common, &config)?;
    let realizations = sample_ensemble(p)?;
    let options = PointOptions { fit_window: window, ..PointOptions::for_params(p) };
    let point = run_point_models(p, s.flux, s.detuning, &realizations, &[s.model], &options)?
        .pop()
        .expect("one model requested");
    let mut trace = Vec::new();
    point.trace.write_csv(&mut trace)?;
    write(&common.out, "trace.csv", &trace)?;
    write(&common.out, "fit.json", &to_json(&point.fit)?)?;
    match point.gamma_over_kappa.filter(|_| point.fit_ok) {
        Some(g) => {
            println!("Gamma/kappa = {g} (flux {}, detuning {}, {} model)", s.flux, s.detuning, s.model.name());
            Ok(Status::Ok)
        }
        None => {
            println!("fit flagged: {}", point.fit.message);
            Ok(Status::Flagged)
        }
    }
}

fn row_summary(row: &FluxRow) -> String {
    let f = |v: Option<f64>, digits: usize| v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into());
    format!(
        "{}: max Gamma {} at {}, Gamma(0) {}, splitting {}, failed {}",
        row.model.name(),
        f(row.max_gamma, 5),
        f(row.argmax_detuning, 2),
        f(row.gamma_at_zero, 5),
        f(row.splitting(), 3),
        row.failed_points
    )
}

fn cmd_sweep(common: &Common, config: &Config) -> Result<Status> {
    let plan = config.sweep_plan();
    plan.validate()?;
    if common.dry_run {
        println!("run id          {}", plan.run_id);
        println!("fluxes          {:?}", plan.flux_list);
        println!(
            "detunings       {} points in [{}, {}]",
            plan.detuning_grid.len(),
            plan.detuning_grid[0],
            plan.detuning_grid[plan.detuning_grid.len() - 1]
        );
        println!("models          {}", plan.models.iter().map(|m| m.name()).collect::<Vec<_>>().join(", "));
        println!("grid points     {}", plan.point_count());
        println!("realizations    {} of {} ions", plan.base_params.n_traj, plan.base_params.n_ions);
        println!("tasks           {}", plan.task_count());
        println!("output          {}", common.out.display());
        return Ok(Status::Ok);
    }
    let _lock = start_run(common, config)?;
    let mut writer = RunWriter::create(&common.out, &plan)?;
    let result = run_detuning_sweep_with(&plan, |progress| {
        let parts: Vec<String> = progress.rows.iter().map(row_summary).collect();
        println!("flux {} | {}", progress.flux, parts.join(" | "));
        writer.flux_done(progress.flux)?;
        Ok(())
    })?;
    let manifest = writer.finish(&result)?;
    if let Some(phi_0) = manifest.phi_0 {
        println!("phi_0 = {phi_0}");
    }
    println!("run complete: {} ({} files)", common.out.display(), manifest.files.len());
    let failed: usize = result.rows.iter().map(|r| r.failed_points).sum();
    if failed > 0 {
        println!("{failed} grid points have flagged fits");
        return Ok(Status::Flagged);
    }
    Ok(Status::Ok)
}

fn cmd_saturation(common: &Common, config: &Config) -> Result<Status> {
    let p = &config.model;
    let fluxes = &config.saturation.flux_list;
    if common.dry_run {
        println!(
            "would integrate the resonant fluorescence at fluxes {fluxes:?} over {} realizations of {} ions",
            p.n_traj, p.n_ions
        );
        return Ok(Status::Ok);
    }
    let _lock = start_run(common, config)?;
    let realizations = sample_ensemble(p)?;
    let curve = run_saturation_curve(p, fluxes, &realizations)?;
    let table = csv_table(
        &["flux", "integrated_fluorescence"],
        curve.fluxes.iter().zip(&curve.integrated).map(|(f, i)| vec![f.to_string(), i.to_string()]),
    );
    write(&common.out, "saturation.csv", &table)?;
    write(&common.out, "saturation.json", &to_json(&curve)?)?;
    match curve.phi_0 {
        Some(phi_0) => {
            println!("phi_0 = {phi_0}");
            Ok(Status::Ok)
        }
        None => {
            println!("saturation fit flagged: {}", curve.fit.message);
            Ok(Status::Flagged)
        }
    }
}

/// Reassembles the row-level part of a finished run directory.
fn load_rows(dir: &Path) -> Result<(SweepResult, Option<f64>)> {
    let manifest = load_manifest(dir)?;
    if manifest.status != RunStatus::Complete {
        bail!("run in {} is incomplete", dir.display());
    }
    let path = dir.join("rows.json");
    let text = fs::read_to_string(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let rows: Vec<FluxRow> = serde_json::from_str(&text).with_context(|| format!("malformed {}", path.display()))?;
    let result = SweepResult {
        plan: manifest.plan,
        realization_seeds: manifest.realization_seeds,
        points: Vec::new(),
        rows,
        saturation: None,
        invariants: manifest.invariants.unwrap_or_default(),
        metadata: RunMetadata {
            code_version: manifest.code_version,
            threads: manifest.threads.unwrap_or(0),
            wall_time_s: manifest.wall_time_s.unwrap_or(0.0),
        },
    };
    Ok((result, manifest.phi_0))
}

fn cmd_compare(common: &Common, mut config: Config, from: Option<&Path>) -> Result<Status> {
    if common.dry_run {
        match from {
            Some(dir) => println!("would compare the models of the run in {}", dir.display()),
            None => println!(
                "would run the configured sweep with both models into {} and compare them",
                common.out.display()
            ),
        }
        return Ok(Status::Ok);
    }
    let _lock = start_run(common, &config)?;
    let (result, phi_0) = match from {
        Some(dir) => load_rows(dir)?,
        None => {
            config.sweep.models = vec![Model::Full, Model::Local];
            let plan = config.sweep_plan();
            let mut writer = RunWriter::create(&common.out, &plan)?;
            let result = run_detuning_sweep_with(&plan, |progress| {
                let parts: Vec<String> = progress.rows.iter().map(row_summary).collect();
                println!("flux {} | {}", progress.flux, parts.join(" | "));
                writer.flux_done(progress.flux)?;
                Ok(())
            })?;
            let manifest = writer.finish(&result)?;
            (result, manifest.phi_0)
        }
    };
    let rows = compare_models(&result, phi_0)?;
    let table = csv_table(
        &["flux", "flux_over_phi0", "model", "normalized_max_gamma", "splitting", "offset_b"],
        rows.iter().map(|c: &ComparisonRow| {
            vec![
                c.flux.to_string(),
                opt(c.flux_over_phi0),
                c.model.name().into(),
                opt(c.normalized_max_gamma),
                opt(c.splitting),
                opt(c.offset_b),
            ]
        }),
    );
    write(&common.out, "comparison.csv", &table)?;
    for c in &rows {
        println!(
            "flux {} {}: normalized max {}, splitting {}, offset {}",
            c.flux,
            c.model.name(),
            opt(c.normalized_max_gamma),
            opt(c.splitting),
            opt(c.offset_b)
        );
    }
    Ok(Status::Ok)
}

fn parse_weighting(name: &str) -> Result<Weighting> {
    match name {
        "uniform" => Ok(Weighting::Uniform),
        "poisson" => Ok(Weighting::Poisson),
        "relative" => Ok(Weighting::Relative),
        other => bail!("unknown weighting `{other}`; valid weightings: uniform, poisson, relative"),
    }
}

fn cmd_fit(common: &Common, input: &Path, model: &str, gamma0: Option<f64>, weighting: &str) -> Result<Status> {
    let model = ModelFunction::parse(model)?;
    let weighting = parse_weighting(weighting)?;
    let data = ExperimentalDataset::read_csv(input, gamma0)?;
    if common.dry_run {
        println!("would fit {} to {} points of {}", model.name(), data.abscissa.len(), input.display());
        return Ok(Status::Ok);
    }
    let (x, y) = (&data.abscissa, &data.counts);
    let fit: FitResult = match model {
        ModelFunction::Exponential => {
            let trace = FluorescenceTrace { times: x.clone(), flux: y.clone(), n_traj: 1 };
            fit_exponential(&trace, (x[0], x[x.len() - 1]))?
        }
        ModelFunction::StretchedComposite => fit_stretched_composite(&data, weighting)?,
        ModelFunction::Lorentzian => fit_lorentzian_single(x, y)?,
        ModelFunction::DoubleLorentzian => fit_double_lorentzian(x, y)?,
        ModelFunction::PleSaturation => fit_ple_saturation(x, y)?,
    };
    let json = to_json(&fit)?;
    let _lock = OutputLock::acquire(&common.out)?;
    write(&common.out, "fit.json", &json)?;
    print!("{}", String::from_utf8_lossy(&json));
    Ok(if fit.ok() { Status::Ok } else { Status::Flagged })
}

fn cmd_oracle(common: &Common, config: &Config) -> Result<Status> {
    let o = &config.oracle;
    if o.detunings.len() != o.couplings.len() {
        bail!("oracle.detunings and oracle.couplings must have the same length");
    }
    let n = o.detunings.len();
    if n > MAX_ORACLE_IONS {
        bail!("the exact oracle supports at most {MAX_ORACLE_IONS} ions, {n} requested");
    }
    if o.samples < 2 {
        bail!("oracle.samples must be at least 2");
    }
    if common.dry_run {
        println!(
            "would compare the exact solution (Fock cutoff {}) with mean field for {n} ion(s) at flux {} up to t = {}",
            o.fock_cutoff, o.flux, o.t_end
        );
        return Ok(Status::Ok);
    }
    let _lock = start_run(common, config)?;
    let params = config.model.clone().with_flux(o.flux);
    let ions = o.detunings.iter().zip(&o.couplings).map(|(d, g)| IonParams { delta: *d, g: *g }).collect();
    let realization = DisorderRealization::from_ions(ions);
    let grid = linspace(0.0, o.t_end, o.samples);
    let cmp = compare_with_mean_field(&params, &realization, o.fock_cutoff, o.t_end, &grid)?;
    let truncation = truncation_change(&params, &realization, o.fock_cutoff, o.t_end, &grid)?;
    let mut table = Vec::new();
    cmp.write_csv(&mut table)?;
    write(&common.out, "oracle.csv", &table)?;
    let summary = serde_json::json!({
        "max_rel_dev_s_z": cmp.max_dev_s_z,
        "max_rel_dev_abs_a": cmp.max_dev_a,
        "max_trace_error": cmp.max_trace_error,
        "top_level_population": cmp.exact.top_level_population,
        "truncation_change": truncation,
    });
    write(&common.out, "oracle.json", &to_json(&summary)?)?;
    println!(
        "max relative deviation: s_z {:.3e}, |a| {:.3e}; trace error {:.1e}; cutoff {} vs {} change {:.1e}",
        cmp.max_dev_s_z,
        cmp.max_dev_a,
        cmp.max_trace_error,
        o.fock_cutoff,
        o.fock_cutoff + 2,
        truncation
    );
    Ok(if cmp.max_relative_deviation() <= ORACLE_TOLERANCE && cmp.max_trace_error <= 1e-8 {
        Status::Ok
    } else {
        Status::Flagged
    })
}
