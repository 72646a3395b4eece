//! Physical parameters, disorder distributions and ensemble sampling.
//!
//! Every rate, detuning and time is expressed in units of the total cavity
//! damping rate `kappa` (times in units of `1/kappa`).

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adaptive integrator tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rtol: 1e-8, atol: 1e-10 }
    }
}

/// All model parameters of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Total cavity damping rate (the unit of everything else).
    pub kappa: f64,
    /// Damping through the input/output port.
    pub kappa_c: f64,
    /// Intrinsic spin relaxation rate.
    pub gamma: f64,
    /// Cavity-laser detuning.
    pub delta_c: f64,
    /// Drive amplitude; the incident photon flux is `beta_in^2`.
    pub beta_in: f64,
    /// FWHM of the Lorentzian detuning distribution.
    pub delta_inh: f64,
    /// Mean ion-cavity coupling.
    pub g_mean: f64,
    /// Coupling standard deviation; `None` means `0.1 * g_mean`.
    pub g_std: Option<f64>,
    pub n_ions: usize,
    pub n_traj: usize,
    pub t_pulse: f64,
    pub t_decay: f64,
    /// Samples per `1/kappa` on the fluorescence grid.
    pub samples_per_kappa: f64,
    /// Detunings with `|delta| > detuning_cutoff * delta_inh` are redrawn.
    /// `None` disables truncation.
    pub detuning_cutoff: Option<f64>,
    pub master_seed: u64,
    pub tolerances: Tolerances,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            kappa: 1.0,
            kappa_c: 0.8,
            gamma: 0.005,
            delta_c: 0.0,
            beta_in: 0.1,
            delta_inh: 5.0,
            g_mean: 0.07,
            g_std: None,
            n_ions: 61,
            n_traj: 120,
            t_pulse: 1000.0,
            t_decay: 400.0,
            samples_per_kappa: 2.0,
            detuning_cutoff: Some(10.0),
            master_seed: 1,
            tolerances: Tolerances::default(),
        }
    }
}

fn positive(field: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams { field, reason: format!("must be positive and finite, got {value}") })
    }
}

impl ModelParams {
    /// Incident photon flux `phi = beta_in^2`.
    pub fn flux(&self) -> f64 {
        self.beta_in * self.beta_in
    }

    pub fn with_flux(mut self, flux: f64) -> Self {
        self.beta_in = flux.max(0.0).sqrt();
        self
    }

    pub fn with_detuning(mut self, delta_c: f64) -> Self {
        self.delta_c = delta_c;
        self
    }

    pub fn coupling_std(&self) -> f64 {
        self.g_std.unwrap_or(0.1 * self.g_mean)
    }

    /// Half-width of the Lorentzian detuning distribution.
    pub fn detuning_half_width(&self) -> f64 {
        0.5 * self.delta_inh
    }

    /// Number of samples on the decay grid (both end points included).
    pub fn decay_samples(&self) -> usize {
        (self.t_decay * self.samples_per_kappa).floor() as usize + 1
    }

    pub fn validate(&self) -> Result<()> {
        positive("kappa", self.kappa)?;
        positive("kappa_c", self.kappa_c)?;
        if self.kappa_c > self.kappa {
            return Err(Error::InvalidParams {
                field: "kappa_c",
                reason: format!("must not exceed kappa ({} > {})", self.kappa_c, self.kappa),
            });
        }
        positive("gamma", self.gamma)?;
        positive("delta_inh", self.delta_inh)?;
        positive("g_mean", self.g_mean)?;
        let g_std = self.coupling_std();
        if !(g_std >= 0.0 && g_std.is_finite()) {
            return Err(Error::InvalidParams { field: "g_std", reason: format!("must be non-negative, got {g_std}") });
        }
        if !self.delta_c.is_finite() {
            return Err(Error::InvalidParams { field: "delta_c", reason: "must be finite".into() });
        }
        if !(self.beta_in >= 0.0 && self.beta_in.is_finite()) {
            return Err(Error::InvalidParams {
                field: "beta_in",
                reason: format!("must be real non-negative, got {}", self.beta_in),
            });
        }
        if self.n_traj == 0 {
            return Err(Error::InvalidParams { field: "n_traj", reason: "must be at least 1".into() });
        }
        positive("t_pulse", self.t_pulse)?;
        positive("t_decay", self.t_decay)?;
        positive("samples_per_kappa", self.samples_per_kappa)?;
        if let Some(cut) = self.detuning_cutoff {
            positive("detuning_cutoff", cut)?;
        }
        positive("tolerances.rtol", self.tolerances.rtol)?;
        positive("tolerances.atol", self.tolerances.atol)?;
        Ok(())
    }
}

/// Detuning and coupling of a single ion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IonParams {
    pub delta: f64,
    pub g: f64,
}

/// One sampled ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderRealization {
    pub index: u64,
    pub seed: u64,
    pub ions: Vec<IonParams>,
}

impl DisorderRealization {
    pub fn len(&self) -> usize {
        self.ions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ions.is_empty()
    }

    /// Ensemble with explicitly chosen ions, for tests and small studies.
    pub fn from_ions(ions: Vec<IonParams>) -> Self {
        DisorderRealization { index: 0, seed: 0, ions }
    }
}

/// `h / (pi [(delta - center)^2 + h^2])`, the normalized Lorentzian with half-width `h`.
pub fn lorentzian_pdf(delta: f64, center: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("Lorentzian half-width must be positive, got {h}")));
    }
    let x = delta - center;
    Ok(h / (PI * (x * x + h * h)))
}

pub fn gaussian_pdf(g: f64, mean: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("Gaussian sigma must be positive, got {sigma}")));
    }
    let z = (g - mean) / sigma;
    Ok((-0.5 * z * z).exp() / ((2.0 * PI).sqrt() * sigma))
}

/// Cumulative distribution of the Lorentzian (Cauchy) distribution.
pub fn lorentzian_cdf(delta: f64, center: f64, h: f64) -> f64 {
    0.5 + ((delta - center) / h).atan() / PI
}

/// Draws a Cauchy variate by inverting its CDF.
pub fn sample_cauchy<R: Rng + ?Sized>(rng: &mut R, center: f64, h: f64) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return center + h * (PI * (u - 0.5)).tan();
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of realization `index` under `master_seed`.
pub fn realization_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master_seed) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

const DETUNING_STREAM: u64 = 0;
const COUPLING_STREAM: u64 = 1;

/// Samples realization `index`; a pure function of `(params, index)`.
pub fn sample_disorder(params: &ModelParams, index: u64) -> Result<DisorderRealization> {
    params.validate()?;
    Ok(sample_from_seed(params, index, realization_seed(params.master_seed, index)))
}

/// Samples `n_traj` realizations with indices `0..n_traj`.
pub fn sample_ensemble(params: &ModelParams) -> Result<Vec<DisorderRealization>> {
    (0..params.n_traj as u64).map(|k| sample_disorder(params, k)).collect()
}

/// Re-creates a realization from its recorded seed.
pub fn sample_from_seed(params: &ModelParams, index: u64, seed: u64) -> DisorderRealization {
    let n = params.n_ions;
    let h = params.detuning_half_width();
    let cut = params.detuning_cutoff.map(|c| c * params.delta_inh);

    let mut detuning_rng = ChaCha8Rng::seed_from_u64(seed);
    detuning_rng.set_stream(DETUNING_STREAM);
    let mut coupling_rng = ChaCha8Rng::seed_from_u64(seed);
    coupling_rng.set_stream(COUPLING_STREAM);

    let g_mean = params.g_mean;
    let g_std = params.coupling_std();
    let ions = (0..n)
        .map(|j| {
            // the last ion is always resonant with the drive
            let delta = if j + 1 == n {
                0.0
            } else {
                loop {
                    let d = sample_cauchy(&mut detuning_rng, 0.0, h);
                    match cut {
                        Some(c) if d.abs() > c => continue,
                        _ => break d,
                    }
                }
            };
            let g = loop {
                let z: f64 = coupling_rng.sample(StandardNormal);
                let g = g_mean + g_std * z;
                if g > 0.0 {
                    break g;
                }
            };
            IonParams { delta, g }
        })
        .collect();
    DisorderRealization { index, seed, ions }
}

/// Writes realizations as CSV: `realization_index,ion_index,delta_j,g_j`.
pub fn write_realizations_csv<W: Write>(out: W, realizations: &[DisorderRealization]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["realization_index", "ion_index", "delta_j", "g_j"])?;
    for r in realizations {
        for (j, ion) in r.ions.iter().enumerate() {
            w.write_record([r.index.to_string(), j.to_string(), ion.delta.to_string(), ion.g.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn save_realizations_csv(path: &Path, realizations: &[DisorderRealization]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_realizations_csv(std::io::BufWriter::new(file), realizations).map_err(|e| Error::csv(path, e))
}
