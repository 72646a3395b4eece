//! Exact Lindblad evolution of a truncated cavity coupled to at most two
//! spins. Used to validate the mean-field factorization at small `N`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, Model, SystemState};
use crate::error::{Error, Result};
use crate::ode::{Dopri5, OdeSystem};
use crate::params::{DisorderRealization, ModelParams};

type CMat = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

pub const MAX_ORACLE_IONS: usize = 2;
pub const TRUNCATION_THRESHOLD: f64 = 1e-8;

/// Expectation values sampled along an exact trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleTrace {
    pub times: Vec<f64>,
    pub a: Vec<Complex64>,
    /// `s_z[k][j]` is `<sigma_z^j>` at `times[k]`.
    pub s_z: Vec<Vec<f64>>,
    pub s_minus: Vec<Vec<Complex64>>,
    pub trace: Vec<f64>,
    pub min_eigenvalue: Vec<f64>,
    /// Largest population of the top Fock level seen on the grid.
    pub top_level_population: f64,
}

/// Operators on `cavity (fock_cutoff + 1 levels) x spin_1 x ... x spin_N`,
/// with the cavity as the most significant factor.
struct Operators {
    dim: usize,
    a: CMat,
    sigma_minus: Vec<CMat>,
    sigma_z: Vec<CMat>,
    top_projector: CMat,
}

fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

impl Operators {
    fn new(fock_cutoff: usize, n_spins: usize) -> Self {
        let nc = fock_cutoff + 1;
        let mut a_c = CMat::zeros(nc, nc);
        for n in 1..nc {
            a_c[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
        }
        // spin basis: 0 = ground, 1 = excited
        let sm = CMat::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        let sz = CMat::from_row_slice(2, 2, &[-ONE, ZERO, ZERO, ONE]);
        let id2 = CMat::identity(2, 2);
        let idc = CMat::identity(nc, nc);
        let embed = |cav: &CMat, which: Option<(usize, &CMat)>| {
            let mut m = cav.clone();
            for j in 0..n_spins {
                let factor = match which {
                    Some((k, op)) if k == j => op,
                    _ => &id2,
                };
                m = kron(&m, factor);
            }
            m
        };
        let mut top = CMat::zeros(nc, nc);
        top[(nc - 1, nc - 1)] = ONE;
        Operators {
            dim: nc << n_spins,
            a: embed(&a_c, None),
            sigma_minus: (0..n_spins).map(|j| embed(&idc, Some((j, &sm)))).collect(),
            sigma_z: (0..n_spins).map(|j| embed(&idc, Some((j, &sz)))).collect(),
            top_projector: embed(&top, None),
        }
    }
}

struct Liouvillian {
    dim: usize,
    /// `-i (H - (i/2) sum_k L_k^dag L_k)`
    left: CMat,
    /// Adjoint of `left`.
    right: CMat,
    jumps: Vec<CMat>,
}

impl Liouvillian {
    fn new(ops: &Operators, realization: &DisorderRealization, params: &ModelParams, drive_on: bool) -> Self {
        let a = &ops.a;
        let ad = a.adjoint();
        let mut h = &ad * a * Complex64::new(params.delta_c, 0.0);
        for (j, ion) in realization.ions.iter().enumerate() {
            let sm = &ops.sigma_minus[j];
            h += &ops.sigma_z[j] * Complex64::new(0.5 * ion.delta, 0.0);
            h += (&ad * sm + a * sm.adjoint()) * Complex64::new(ion.g, 0.0);
        }
        if drive_on {
            let drive = params.kappa_c.sqrt() * params.beta_in;
            h += (&ad - a) * (-I * drive);
        }
        let mut jumps = vec![a * Complex64::new(params.kappa.sqrt(), 0.0)];
        for sm in &ops.sigma_minus {
            jumps.push(sm * Complex64::new(params.gamma.sqrt(), 0.0));
        }
        let mut h_eff = h;
        for l in &jumps {
            h_eff -= l.adjoint() * l * Complex64::new(0.0, 0.5);
        }
        let left = h_eff * (-I);
        let right = left.adjoint();
        Liouvillian { dim: ops.dim, left, right, jumps }
    }

    fn unpack(&self, y: &[f64]) -> CMat {
        CMat::from_iterator(self.dim, self.dim, y.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])))
    }
}

fn pack(m: &CMat, out: &mut [f64]) {
    for (v, o) in m.iter().zip(out.chunks_exact_mut(2)) {
        o[0] = v.re;
        o[1] = v.im;
    }
}

impl OdeSystem for Liouvillian {
    fn dim(&self) -> usize {
        2 * self.dim * self.dim
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let rho = self.unpack(y);
        // -i H_eff rho + i rho H_eff^dag + sum_k L rho L^dag
        let mut out = &self.left * &rho + &rho * &self.right;
        for l in &self.jumps {
            out += l * &rho * l.adjoint();
        }
        pack(&out, dy);
    }
}

fn hermitian_min_eigenvalue(rho: &CMat) -> f64 {
    let herm = (rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    herm.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Integrates the master equation from vacuum/ground for `t_end` with the
/// drive switched on or off, sampling expectation values on `grid`.
pub fn quantum_oracle(
    params: &ModelParams,
    realization: &DisorderRealization,
    fock_cutoff: usize,
    drive_on: bool,
    t_end: f64,
    grid: &[f64],
) -> Result<OracleTrace> {
    let n = realization.len();
    if n > MAX_ORACLE_IONS {
        return Err(Error::OracleSize(n));
    }
    if fock_cutoff == 0 {
        return Err(Error::Domain("Fock cutoff must be at least 1".into()));
    }
    let ops = Operators::new(fock_cutoff, n);
    let liou = Liouvillian::new(&ops, realization, params, drive_on);
    let d = ops.dim;
    let mut rho0 = CMat::zeros(d, d);
    rho0[(0, 0)] = ONE;
    let mut y0 = vec![0.0; 2 * d * d];
    pack(&rho0, &mut y0);
    let solver = Dopri5::with_tolerances(1e-10, 1e-12);
    let (ys, _) = solver.integrate(&liou, 0.0, &y0, t_end, grid)?;

    let mut trace = OracleTrace {
        times: grid.to_vec(),
        a: Vec::with_capacity(grid.len()),
        s_z: Vec::with_capacity(grid.len()),
        s_minus: Vec::with_capacity(grid.len()),
        trace: Vec::with_capacity(grid.len()),
        min_eigenvalue: Vec::with_capacity(grid.len()),
        top_level_population: 0.0,
    };
    let expect = |op: &CMat, rho: &CMat| (op * rho).trace();
    for y in &ys {
        let rho = liou.unpack(y);
        trace.a.push(expect(&ops.a, &rho));
        trace.s_z.push(ops.sigma_z.iter().map(|op| expect(op, &rho).re).collect());
        trace.s_minus.push(ops.sigma_minus.iter().map(|op| expect(op, &rho)).collect());
        trace.trace.push(rho.trace().re);
        trace.min_eigenvalue.push(hermitian_min_eigenvalue(&rho));
        let top = expect(&ops.top_projector, &rho).re;
        trace.top_level_population = trace.top_level_population.max(top);
    }
    if trace.top_level_population > TRUNCATION_THRESHOLD {
        return Err(Error::Truncation { population: trace.top_level_population, threshold: TRUNCATION_THRESHOLD });
    }
    Ok(trace)
}

/// Exact and mean-field expectation values on a common grid of the driven phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub times: Vec<f64>,
    pub exact: OracleTrace,
    pub mean_field_a: Vec<Complex64>,
    pub mean_field_s_z: Vec<Vec<f64>>,
    /// Largest relative deviation of `<sigma_z>` over ions and samples.
    pub max_dev_s_z: f64,
    /// Largest relative deviation of `|<a>|` over samples with a non-zero exact field.
    pub max_dev_a: f64,
    pub max_trace_error: f64,
}

impl OracleComparison {
    pub fn max_relative_deviation(&self) -> f64 {
        self.max_dev_s_z.max(self.max_dev_a)
    }

    /// Columns `time, abs_a_exact, abs_a_mean_field, s_z{j}_exact, s_z{j}_mean_field..., rel_dev, trace`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.mean_field_s_z.first().map_or(0, Vec::len);
        let mut header = vec!["time".to_string(), "abs_a_exact".into(), "abs_a_mean_field".into()];
        for j in 0..n {
            header.push(format!("s_z{j}_exact"));
            header.push(format!("s_z{j}_mean_field"));
        }
        header.extend(["rel_dev".to_string(), "trace".into()]);
        w.write_record(&header)?;
        for k in 0..self.times.len() {
            let (a_ex, a_mf) = (self.exact.a[k].norm(), self.mean_field_a[k].norm());
            let mut row = vec![self.times[k].to_string(), a_ex.to_string(), a_mf.to_string()];
            let mut dev = relative(a_mf, a_ex);
            for j in 0..n {
                let (z_ex, z_mf) = (self.exact.s_z[k][j], self.mean_field_s_z[k][j]);
                dev = dev.max(relative(z_mf, z_ex));
                row.push(z_ex.to_string());
                row.push(z_mf.to_string());
            }
            row.push(dev.to_string());
            row.push(self.exact.trace[k].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn relative(value: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        if value == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        ((value - reference) / reference).abs()
    }
}

/// Runs the exact master equation and the mean-field equations with the
/// drive on from vacuum/ground over `[0, t_end]`.
pub fn compare_with_mean_field(
    params: &ModelParams,
    realization: &DisorderRealization,
    fock_cutoff: usize,
    t_end: f64,
    grid: &[f64],
) -> Result<OracleComparison> {
    let exact = quantum_oracle(params, realization, fock_cutoff, true, t_end, grid)?;
    let mf = integrate(&SystemState::ground(realization.len()), realization, params, Model::Full, true, t_end, grid)?;
    let mut max_dev_s_z = 0.0f64;
    let mut max_dev_a = 0.0f64;
    for (k, state) in mf.states.iter().enumerate() {
        for (z_mf, z_ex) in state.s_z.iter().zip(&exact.s_z[k]) {
            max_dev_s_z = max_dev_s_z.max(relative(*z_mf, *z_ex));
        }
        let a_ex = exact.a[k].norm();
        if a_ex > 0.0 {
            max_dev_a = max_dev_a.max(relative(state.a.norm(), a_ex));
        }
    }
    let max_trace_error = exact.trace.iter().fold(0.0f64, |m, t| m.max((t - 1.0).abs()));
    Ok(OracleComparison {
        times: grid.to_vec(),
        mean_field_a: mf.states.iter().map(|s| s.a).collect(),
        mean_field_s_z: mf.states.iter().map(|s| s.s_z.clone()).collect(),
        exact,
        max_dev_s_z,
        max_dev_a,
        max_trace_error,
    })
}

/// Largest change of `<a>` and `<sigma_z>` between cutoffs `c` and `c + 2`.
pub fn truncation_change(
    params: &ModelParams,
    realization: &DisorderRealization,
    fock_cutoff: usize,
    t_end: f64,
    grid: &[f64],
) -> Result<f64> {
    let lo = quantum_oracle(params, realization, fock_cutoff, true, t_end, grid)?;
    let hi = quantum_oracle(params, realization, fock_cutoff + 2, true, t_end, grid)?;
    let mut worst = 0.0f64;
    for k in 0..grid.len() {
        worst = worst.max((lo.a[k] - hi.a[k]).norm());
        for (x, y) in lo.s_z[k].iter().zip(&hi.s_z[k]) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::IonParams;

    #[test]
    fn undriven_ground_state_is_stationary() {
        let p = ModelParams::default().with_flux(0.0);
        let r =
            DisorderRealization::from_ions(vec![IonParams { delta: 0.2, g: 0.07 }, IonParams { delta: 0.0, g: 0.05 }]);
        let tr = quantum_oracle(&p, &r, 3, true, 20.0, &[0.0, 10.0, 20.0]).unwrap();
        for k in 0..3 {
            assert_eq!(tr.a[k], ZERO);
            assert_eq!(tr.s_z[k], vec![-1.0, -1.0]);
            assert!((tr.trace[k] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn empty_cavity_follows_classical_response() {
        let p = ModelParams { delta_c: 0.5, ..Default::default() }.with_flux(0.04);
        let r = DisorderRealization::from_ions(vec![]);
        let grid: Vec<f64> = (0..=20).map(|k| k as f64).collect();
        let tr = quantum_oracle(&p, &r, 6, true, 20.0, &grid).unwrap();
        let drive = 0.8f64.sqrt() * 0.2;
        let lam = Complex64::new(0.5, 0.5);
        for (t, a) in grid.iter().zip(&tr.a) {
            let exact = -drive / lam * (1.0 - (-lam * t).exp());
            assert!((a - exact).norm() < 1e-8, "t={t}: {a} vs {exact}");
        }
    }

    #[test]
    fn size_and_truncation_errors() {
        let p = ModelParams::default().with_flux(0.01);
        let r = DisorderRealization::from_ions(vec![IonParams { delta: 0.0, g: 0.07 }; 3]);
        assert!(matches!(quantum_oracle(&p, &r, 4, true, 1.0, &[1.0]), Err(Error::OracleSize(3))));
        let p = ModelParams::default().with_flux(9.0);
        let r = DisorderRealization::from_ions(vec![]);
        assert!(matches!(quantum_oracle(&p, &r, 2, true, 10.0, &[10.0]), Err(Error::Truncation { .. })));
    }

    #[test]
    fn driven_pair_stays_physical() {
        let p = ModelParams::default().with_flux(0.01);
        let r =
            DisorderRealization::from_ions(vec![IonParams { delta: 0.0, g: 0.07 }, IonParams { delta: 0.4, g: 0.06 }]);
        let tr = quantum_oracle(&p, &r, 7, true, 50.0, &[10.0, 25.0, 50.0]).unwrap();
        for k in 0..3 {
            assert!((tr.trace[k] - 1.0).abs() < 1e-8);
            assert!(tr.min_eigenvalue[k] > -1e-8);
            for z in &tr.s_z[k] {
                assert!((-1.0..=1.0).contains(z));
            }
        }
    }

    #[test]
    fn weak_drive_matches_mean_field() {
        let p = ModelParams::default().with_flux(1e-6);
        let r = DisorderRealization::from_ions(vec![IonParams { delta: 0.0, g: 0.07 }]);
        let grid: Vec<f64> = (0..=40).map(|k| 25.0 * k as f64).collect();
        let cmp = compare_with_mean_field(&p, &r, 6, 1000.0, &grid).unwrap();
        assert!(cmp.max_relative_deviation() < 0.05, "{}", cmp.max_relative_deviation());
        assert!(cmp.max_trace_error < 1e-10);
        assert!(truncation_change(&p, &r, 4, 200.0, &grid[..9]).unwrap() < 1e-8);
    }
}
