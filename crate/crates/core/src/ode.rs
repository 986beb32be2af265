//! Adaptive Dormand-Prince 5(4) integrator for small non-stiff systems.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{bail, Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-13, max_steps: 5_000_000 }
    }
}

// Butcher tableau.
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
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

/// Stepper state. The right-hand side is `f(t, y, dydt)`.
pub struct DormandPrince<F> {
    f: F,
    opts: OdeOptions,
    pub t: f64,
    pub y: Vec<f64>,
    /// Derivative at the current point (first-same-as-last).
    pub dydt: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 6],
    ytmp: Vec<f64>,
    ynew: Vec<f64>,
    steps: usize,
}

impl<F> DormandPrince<F>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    pub fn new(mut f: F, t0: f64, y0: &[f64], opts: OdeOptions) -> Self {
        let n = y0.len();
        let mut dydt = vec![0.0; n];
        f(t0, y0, &mut dydt);
        let scale: f64 = y0
            .iter()
            .zip(&dydt)
            .map(|(y, d)| (d / (opts.atol + opts.rtol * y.abs())).powi(2))
            .sum::<f64>()
            / n.max(1) as f64;
        let h = if scale > 0.0 { (0.01 / scale.sqrt()).min(1.0) } else { 1e-3 };
        Self {
            f,
            opts,
            t: t0,
            y: y0.to_vec(),
            dydt,
            h,
            k: core::array::from_fn(|_| vec![0.0; n]),
            ytmp: vec![0.0; n],
            ynew: vec![0.0; n],
            steps: 0,
        }
    }

    /// Take one accepted step, never beyond `t_stop`.
    pub fn step(&mut self, t_stop: f64) -> Result<()> {
        let n = self.y.len();
        loop {
            self.steps += 1;
            if self.steps > self.opts.max_steps {
                bail!(Numerical, "ODE integration exceeded {} steps at t = {}", self.opts.max_steps, self.t);
            }
            let remaining = t_stop - self.t;
            let last = self.h >= remaining;
            let h = if last { remaining } else { self.h };
            if !(h > 0.0) || !h.is_finite() {
                bail!(Numerical, "ODE step size collapsed at t = {}", self.t);
            }
            let (t, y, k1) = (self.t, &self.y, &self.dydt);
            let [k2, k3, k4, k5, k6, k7] = &mut self.k;

            for i in 0..n {
                self.ytmp[i] = y[i] + h * A21 * k1[i];
            }
            (self.f)(t + C2 * h, &self.ytmp, k2);
            for i in 0..n {
                self.ytmp[i] = y[i] + h * (A31 * k1[i] + A32 * k2[i]);
            }
            (self.f)(t + C3 * h, &self.ytmp, k3);
            for i in 0..n {
                self.ytmp[i] = y[i] + h * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            (self.f)(t + C4 * h, &self.ytmp, k4);
            for i in 0..n {
                self.ytmp[i] = y[i] + h * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            (self.f)(t + C5 * h, &self.ytmp, k5);
            for i in 0..n {
                self.ytmp[i] =
                    y[i] + h * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            (self.f)(t + h, &self.ytmp, k6);
            for i in 0..n {
                self.ynew[i] =
                    y[i] + h * (B1 * k1[i] + B3 * k3[i] + B4 * k4[i] + B5 * k5[i] + B6 * k6[i]);
            }
            (self.f)(t + h, &self.ynew, k7);

            let mut err = 0.0;
            for i in 0..n {
                let e = h
                    * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.opts.atol + self.opts.rtol * y[i].abs().max(self.ynew[i].abs());
                err += (e / sc).powi(2);
            }
            let err = (err / n.max(1) as f64).sqrt();

            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                self.t = if last { t_stop } else { t + h };
                core::mem::swap(&mut self.y, &mut self.ynew);
                core::mem::swap(&mut self.dydt, k7);
                if !last || factor < 1.0 {
                    self.h = h * factor;
                }
                return Ok(());
            }
            self.h = h * factor.min(1.0);
        }
    }

    /// Advance exactly to `t_end`.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        while self.t < t_end {
            self.step(t_end)?;
        }
        Ok(())
    }
}

/// Integrate from `times[0]` and return the state at every entry of `times`.
pub fn solve<F>(f: F, y0: &[f64], times: &[f64], opts: OdeOptions) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let Some(&t0) = times.first() else {
        return Err(Error::InvalidArgument("empty output time grid".into()));
    };
    if times.windows(2).any(|w| !(w[1] >= w[0])) {
        bail!(InvalidArgument, "output times must be non-decreasing");
    }
    let mut stepper = DormandPrince::new(f, t0, y0, opts);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        stepper.advance_to(t)?;
        out.push(stepper.y.clone());
    }
    Ok(out)
}

/// Integrate until `max |dy/dt| < deriv_tol` or `t_max` is reached. Returns
/// the final time and state; running out of time is a numerical failure.
pub fn solve_to_rest<F>(
    f: F,
    y0: &[f64],
    deriv_tol: f64,
    t_max: f64,
    opts: OdeOptions,
) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let mut stepper = DormandPrince::new(f, 0.0, y0, opts);
    loop {
        let rate = stepper.dydt.iter().fold(0.0_f64, |m, d| m.max(d.abs()));
        if rate < deriv_tol {
            return Ok((stepper.t, stepper.y));
        }
        if stepper.t >= t_max {
            bail!(Numerical, "no stationary point reached by t = {t_max} (|dy/dt| = {rate:e})");
        }
        stepper.step(t_max)?;
    }
}

/// `n + 1` evenly spaced points on `[0, t_end]`.
pub fn linspace(t_end: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n).map(|i| t_end * i as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay_matches_closed_form() {
        let times = linspace(5.0, 50);
        let ys = solve(|_, y, d| d[0] = -1.3 * y[0], &[2.0], &times, OdeOptions::default()).unwrap();
        for (t, y) in times.iter().zip(&ys) {
            assert!((y[0] - 2.0 * (-1.3 * t).exp()).abs() < 1e-9);
        }
    }

    #[test]
    fn harmonic_oscillator_conserves_energy() {
        let times = [0.0, 20.0];
        let ys = solve(
            |_, y, d| {
                d[0] = y[1];
                d[1] = -y[0];
            },
            &[1.0, 0.0],
            &times,
            OdeOptions::default(),
        )
        .unwrap();
        let y = &ys[1];
        assert!((y[0] - 20.0_f64.cos()).abs() < 1e-8);
        assert!((y[0] * y[0] + y[1] * y[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rest_detection() {
        let (_, y) = solve_to_rest(|_, y, d| d[0] = 0.5 - y[0], &[0.0], 1e-9, 1e3, OdeOptions::default()).unwrap();
        assert!((y[0] - 0.5).abs() < 1e-9);
        assert!(solve_to_rest(|_, _, d| d[0] = 1.0, &[0.0], 1e-12, 10.0, OdeOptions::default()).is_err());
    }

    #[test]
    fn rejects_unsorted_grid() {
        assert!(solve(|_, _, d| d[0] = 0.0, &[0.0], &[1.0, 0.5], OdeOptions::default()).is_err());
    }
}
