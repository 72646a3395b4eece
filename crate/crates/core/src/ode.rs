//! Dormand-Prince 5(4) integrator with step-size control and the
//! fourth-order continuous extension for dense output.

use crate::error::{Error, Result};

/// A first-order system `dy/dt = f(t, y)` on a flat real vector.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);
}

#[derive(Debug, Clone, Copy)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Largest allowed step; `None` means the full span.
    pub h_max: Option<f64>,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5 { rtol: 1e-8, atol: 1e-10, max_steps: 50_000_000, h_max: None }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

struct Work {
    k: [Vec<f64>; 7],
    y1: Vec<f64>,
    ytmp: Vec<f64>,
    err: Vec<f64>,
    cont: [Vec<f64>; 5],
}

impl Work {
    fn new(n: usize) -> Self {
        let v = || vec![0.0; n];
        Work { k: [v(), v(), v(), v(), v(), v(), v()], y1: v(), ytmp: v(), err: v(), cont: [v(), v(), v(), v(), v()] }
    }
}

impl Dopri5 {
    pub fn with_tolerances(rtol: f64, atol: f64) -> Self {
        Dopri5 { rtol, atol, ..Default::default() }
    }

    fn error_norm(&self, y0: &[f64], y1: &[f64], err: &[f64]) -> f64 {
        let n = y0.len().max(1);
        let sum: f64 = y0
            .iter()
            .zip(y1)
            .zip(err)
            .map(|((a, b), e)| {
                let sc = self.atol + self.rtol * a.abs().max(b.abs());
                (e / sc) * (e / sc)
            })
            .sum();
        (sum / n as f64).sqrt()
    }

    fn initial_step<S: OdeSystem>(&self, sys: &S, t0: f64, y0: &[f64], f0: &[f64], span: f64, w: &mut Work) -> f64 {
        let n = y0.len();
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..n {
            let sc = self.atol + self.rtol * y0[i].abs();
            d0 += (y0[i] / sc).powi(2);
            d1 += (f0[i] / sc).powi(2);
        }
        d0 = (d0 / n as f64).sqrt();
        d1 = (d1 / n as f64).sqrt();
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(span);
        for i in 0..n {
            w.ytmp[i] = y0[i] + h0 * f0[i];
        }
        sys.rhs(t0 + h0, &w.ytmp, &mut w.err);
        let mut d2 = 0.0;
        for i in 0..n {
            let sc = self.atol + self.rtol * y0[i].abs();
            d2 += ((w.err[i] - f0[i]) / sc).powi(2);
        }
        d2 = (d2 / n as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 { (h0 * 1e-3).max(1e-6) } else { (0.01 / d1.max(d2)).powf(0.2) };
        (100.0 * h0).min(h1).min(span)
    }

    /// Integrates from `(t0, y0)` to `t_end`, returning the solution at every
    /// time in `samples` (which must be non-decreasing and inside `[t0, t_end]`).
    pub fn integrate<S: OdeSystem>(
        &self,
        sys: &S,
        t0: f64,
        y0: &[f64],
        t_end: f64,
        samples: &[f64],
    ) -> Result<(Vec<Vec<f64>>, Stats)> {
        let n = sys.dim();
        assert_eq!(y0.len(), n, "initial state has wrong dimension");
        if !(t_end > t0) {
            return Err(Error::Domain(format!("integration span must be positive, got [{t0}, {t_end}]")));
        }
        if samples.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("sample times must be non-decreasing".into()));
        }
        if let (Some(&first), Some(&last)) = (samples.first(), samples.last()) {
            if first < t0 || last > t_end {
                return Err(Error::Domain(format!("sample grid [{first}, {last}] outside [{t0}, {t_end}]")));
            }
        }

        let span = t_end - t0;
        let h_max = self.h_max.unwrap_or(span).min(span);
        let mut w = Work::new(n);
        let mut stats = Stats::default();
        let mut out = Vec::with_capacity(samples.len());
        let mut next = 0;
        while next < samples.len() && samples[next] == t0 {
            out.push(y0.to_vec());
            next += 1;
        }

        let mut t = t0;
        let mut y = y0.to_vec();
        sys.rhs(t, &y, &mut w.k[0]);
        stats.evaluations += 1;
        let mut h = self.initial_step(sys, t, &y, &w.k[0].clone(), span, &mut w).min(h_max);
        stats.evaluations += 1;
        let mut fac_old: f64 = 1e-4;
        let mut last_rejected = false;

        while t < t_end {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(Error::TooManySteps { t, max_steps: self.max_steps });
            }
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(Error::StepSizeUnderflow { t, h });
            }
            let last_step = t + 1.01 * h >= t_end;
            if last_step {
                h = t_end - t;
            }
            self.step(sys, t, &y, h, &mut w);
            stats.evaluations += 6;
            let err = self.error_norm(&y, &w.y1, &w.err);

            // PI step-size controller (Hairer's DOPRI5 defaults)
            let fac11 = err.powf(0.2 - 0.04 * 0.75);
            let mut fac = fac11 / fac_old.powf(0.04);
            fac = (fac / 0.9).clamp(1.0 / 10.0, 5.0);
            let h_new = h / fac;

            if err <= 1.0 {
                fac_old = err.max(1e-4);
                stats.accepted += 1;
                self.prepare_dense(&y, h, &mut w);
                let t_new = if last_step { t_end } else { t + h };
                while next < samples.len() && samples[next] <= t_new {
                    let theta = ((samples[next] - t) / h).clamp(0.0, 1.0);
                    out.push(dense_eval(&w.cont, theta));
                    next += 1;
                }
                // FSAL
                w.k.swap(0, 6);
                std::mem::swap(&mut y, &mut w.y1);
                t = t_new;
                let mut h_next = h_new.min(h_max);
                if last_rejected {
                    h_next = h_next.min(h);
                }
                last_rejected = false;
                h = h_next;
            } else {
                stats.rejected += 1;
                last_rejected = true;
                h /= (fac11 / 0.9).min(10.0);
            }
        }
        while next < samples.len() {
            out.push(y.clone());
            next += 1;
        }
        Ok((out, stats))
    }

    fn step<S: OdeSystem>(&self, sys: &S, t: f64, y: &[f64], h: f64, w: &mut Work) {
        let n = y.len();
        let Work { k, y1, ytmp, err, .. } = w;
        let [k1, k2, k3, k4, k5, k6, k7] = k;
        for i in 0..n {
            ytmp[i] = y[i] + h * A21 * k1[i];
        }
        sys.rhs(t + C2 * h, ytmp, k2);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
        }
        sys.rhs(t + C3 * h, ytmp, k3);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
        }
        sys.rhs(t + C4 * h, ytmp, k4);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
        }
        sys.rhs(t + C5 * h, ytmp, k5);
        for i in 0..n {
            ytmp[i] = y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
        }
        sys.rhs(t + h, ytmp, k6);
        for i in 0..n {
            y1[i] = y[i] + h * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
        }
        sys.rhs(t + h, y1, k7);
        for i in 0..n {
            err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
        }
    }

    fn prepare_dense(&self, y: &[f64], h: f64, w: &mut Work) {
        let Work { k, y1, cont, .. } = w;
        for i in 0..y.len() {
            let dy = y1[i] - y[i];
            let bspl = h * k[0][i] - dy;
            cont[0][i] = y[i];
            cont[1][i] = dy;
            cont[2][i] = bspl;
            cont[3][i] = dy - h * k[6][i] - bspl;
            cont[4][i] = h * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
        }
    }
}

fn dense_eval(cont: &[Vec<f64>; 5], theta: f64) -> Vec<f64> {
    let theta1 = 1.0 - theta;
    (0..cont[0].len())
        .map(|i| cont[0][i] + theta * (cont[1][i] + theta1 * (cont[2][i] + theta * (cont[3][i] + theta1 * cont[4][i]))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay(f64);
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -self.0 * y[0];
        }
    }

    struct Oscillator(f64);
    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -self.0 * y[1];
            dy[1] = self.0 * y[0];
        }
    }

    struct Still;
    impl OdeSystem for Still {
        fn dim(&self) -> usize {
            3
        }
        fn rhs(&self, _t: f64, _y: &[f64], dy: &mut [f64]) {
            dy.fill(0.0);
        }
    }

    #[test]
    fn exponential_decay_with_dense_output() {
        let grid: Vec<f64> = (0..=50).map(|k| k as f64 * 0.2).collect();
        let (ys, stats) = Dopri5::default().integrate(&Decay(0.7), 0.0, &[2.0], 10.0, &grid).unwrap();
        assert_eq!(ys.len(), grid.len());
        for (t, y) in grid.iter().zip(&ys) {
            let exact = 2.0 * (-0.7 * t).exp();
            assert!((y[0] - exact).abs() < 1e-8, "t={t}: {} vs {exact}", y[0]);
        }
        assert!(stats.accepted > 0);
    }

    #[test]
    fn oscillator_keeps_phase() {
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 * 0.37).collect();
        let (ys, _) = Dopri5::default().integrate(&Oscillator(3.0), 0.0, &[1.0, 0.0], 37.0, &grid).unwrap();
        for (t, y) in grid.iter().zip(&ys) {
            assert!((y[0] - (3.0 * t).cos()).abs() < 1e-6);
            assert!((y[1] - (3.0 * t).sin()).abs() < 1e-6);
        }
    }

    #[test]
    fn fixed_point_is_constant() {
        let y0 = [1.0, -2.0, 0.5];
        let (ys, _) = Dopri5::default().integrate(&Still, 0.0, &y0, 100.0, &[0.0, 50.0, 100.0]).unwrap();
        for y in ys {
            assert_eq!(y, y0);
        }
    }

    #[test]
    fn tolerance_halving_converges() {
        let run = |tol: f64| {
            Dopri5::with_tolerances(tol, tol * 1e-2)
                .integrate(&Oscillator(2.0), 0.0, &[1.0, 0.0], 20.0, &[20.0])
                .unwrap()
                .0[0]
                .clone()
        };
        let a = run(1e-8);
        let b = run(0.5e-8);
        let diff = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
        assert!(diff < 10.0 * 1e-8 * 20.0, "{diff}");
    }

    #[test]
    fn rejects_bad_span_and_grid() {
        let d = Dopri5::default();
        assert!(d.integrate(&Decay(1.0), 0.0, &[1.0], 0.0, &[]).is_err());
        assert!(d.integrate(&Decay(1.0), 0.0, &[1.0], 1.0, &[2.0]).is_err());
        assert!(d.integrate(&Decay(1.0), 0.0, &[1.0], 1.0, &[0.5, 0.2]).is_err());
    }

    #[test]
    fn too_many_steps_reports_time() {
        let d = Dopri5 { max_steps: 5, ..Default::default() };
        match d.integrate(&Oscillator(50.0), 0.0, &[1.0, 0.0], 100.0, &[]) {
            Err(Error::TooManySteps { t, .. }) => assert!(t > 0.0 && t < 100.0),
            other => panic!("{other:?}"),
        }
    }
}
