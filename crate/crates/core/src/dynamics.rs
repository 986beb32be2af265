//! Two-ensemble Gaussian dynamics: pulse input-output maps, continuous
//! unconditional and conditional (Riccati) variance evolution, Larmor
//! detuning, and the closed-form steady states.
//!
//! Rates are in 1/ms and times in ms. Variances follow the vacuum = 1/2
//! convention, so xi = 2 var(P_c/s) when both sectors are equal.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix4, SMatrix};

use crate::error::{bail, Error, Result};
use crate::gaussian::{local_to_collective, GaussianState, Mode, SqueezeParams, VACUUM_VARIANCE};
use crate::ode::{self, OdeOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsParams {
    /// Engineered (entangling) dissipation rate.
    pub gamma_s: f64,
    /// Transverse decay towards the coherent spin state.
    pub gamma_extra: f64,
    pub squeeze: SqueezeParams,
    /// Larmor frequency (rad/ms).
    pub omega: f64,
    /// Larmor detuning between the ensembles (rad/ms).
    pub delta_omega: f64,
    /// Pulse duration T (ms).
    pub pulse: f64,
    /// Detection efficiency.
    pub eta: f64,
}

impl DynamicsParams {
    /// Defaults: 322 kHz Larmor frequency, no detuning, 1 ms pulses, unit efficiency.
    pub fn new(gamma_s: f64, gamma_extra: f64, squeeze: SqueezeParams) -> Result<Self> {
        let p = Self {
            gamma_s,
            gamma_extra,
            squeeze,
            omega: 2.0 * core::f64::consts::PI * 322.0,
            delta_omega: 0.0,
            pulse: 1.0,
            eta: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_pulse(mut self, pulse: f64) -> Result<Self> {
        self.pulse = pulse;
        self.validate()?;
        Ok(self)
    }

    pub fn with_detuning(mut self, delta_omega: f64) -> Result<Self> {
        self.delta_omega = delta_omega;
        self.validate()?;
        Ok(self)
    }

    pub fn with_eta(mut self, eta: f64) -> Result<Self> {
        self.eta = eta;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_s >= 0.0 && self.gamma_s.is_finite()) {
            bail!(InvalidArgument, "gamma_s must be >= 0, got {}", self.gamma_s);
        }
        if !(self.gamma_extra >= 0.0 && self.gamma_extra.is_finite()) {
            bail!(InvalidArgument, "gamma_extra must be >= 0, got {}", self.gamma_extra);
        }
        if !(self.pulse > 0.0) {
            bail!(InvalidArgument, "pulse duration must be > 0, got {}", self.pulse);
        }
        if !(0.0..=1.0).contains(&self.eta) {
            bail!(InvalidArgument, "detection efficiency must lie in [0, 1], got {}", self.eta);
        }
        if !self.omega.is_finite() || !self.delta_omega.is_finite() {
            bail!(InvalidArgument, "Larmor frequencies must be finite");
        }
        Ok(())
    }

    /// Total transverse decay rate gamma = 1/T2.
    pub fn gamma_total(&self) -> f64 {
        self.gamma_s + self.gamma_extra
    }

    fn require_rate(&self) -> Result<f64> {
        self.validate()?;
        let g = self.gamma_total();
        if g <= 0.0 {
            bail!(InvalidArgument, "gamma_s + gamma_extra must be positive");
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedCouplings {
    pub kappa: f64,
    /// gamma = 1/T2 = gamma_s + gamma_extra.
    pub gamma_total: f64,
    /// eps with eps^2 = gamma_extra / gamma.
    pub epsilon: f64,
}

pub fn coupling_kappa(params: &DynamicsParams) -> Result<DerivedCouplings> {
    let gamma = params.require_rate()?;
    Ok(couplings_for(params, gamma, params.pulse))
}

fn couplings_for(params: &DynamicsParams, gamma: f64, duration: f64) -> DerivedCouplings {
    let eps2 = params.gamma_extra / gamma;
    let decay = -(-2.0 * gamma * duration).exp_m1();
    DerivedCouplings {
        kappa: params.squeeze.z() * ((1.0 - eps2) * decay).sqrt(),
        gamma_total: gamma,
        epsilon: eps2.sqrt(),
    }
}

/// Overlap of the normalised rising and falling exponential modes of rate
/// `rate` over a pulse of length `duration`: gT / sinh(gT).
pub fn mode_overlap(rate: f64, duration: f64) -> f64 {
    let x = rate * duration;
    if x.abs() < 1e-4 {
        1.0 - x * x / 6.0
    } else {
        x / x.sinh()
    }
}

/// One-pulse map of a single sector, acting on (X, P, y, q) where the light
/// input is the rising mode and the light output is the falling mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectorMap {
    pub transfer: Matrix4<f64>,
    /// Covariance injected by the traced-out inputs (orthogonal light
    /// component and decay noise).
    pub noise: Matrix4<f64>,
    /// Coefficients of the six traced-out quadratures
    /// (y_perp, q_perp, F_x+, F_p+, F_x_perp, F_p_perp).
    pub external: SMatrix<f64, 4, 6>,
    pub couplings: DerivedCouplings,
    /// Weight U^2 of the input shot noise in var(y_out).
    pub light_weight: f64,
    /// Weight V^2 of the decay noise <F^2> in var(y_out).
    pub decay_weight: f64,
}

impl SectorMap {
    pub fn for_pulse(params: &DynamicsParams, duration: f64) -> Result<Self> {
        let gamma = params.require_rate()?;
        if !(duration >= 0.0) {
            bail!(InvalidArgument, "pulse duration must be >= 0, got {duration}");
        }
        let couplings = couplings_for(params, gamma, duration);
        let z = params.squeeze.z();
        let z2 = z * z;
        let eps = couplings.epsilon;
        let eps2 = eps * eps;
        let kappa = couplings.kappa;
        let c = (-gamma * duration).exp();
        let s = (-(-2.0 * gamma * duration).exp_m1()).sqrt();
        let o = mode_overlap(gamma, duration);
        let o_perp = (1.0 - o * o).max(0.0).sqrt();
        let a = (1.0 - eps2) * c + eps2 * o;
        let b = eps * z * (1.0 - eps2).sqrt();

        #[rustfmt::skip]
        let transfer = Matrix4::new(
            c,            0.0,          0.0,           kappa,
            0.0,          c,            -kappa / z2,   0.0,
            0.0,          kappa,        a,             0.0,
            -kappa / z2,  0.0,          0.0,           a,
        );
        #[rustfmt::skip]
        let external = SMatrix::<f64, 4, 6>::from_row_slice(&[
            0.0,           0.0,           eps * s,              0.0,          0.0,                0.0,
            0.0,           0.0,           0.0,                  eps * s,      0.0,                0.0,
            eps2 * o_perp, 0.0,           0.0,                  b * (o - c),  0.0,                b * o_perp,
            0.0,           eps2 * o_perp, -b / z2 * (o - c),    0.0,          -b / z2 * o_perp,   0.0,
        ]);
        let noise = external * external.transpose() * VACUUM_VARIANCE;
        Ok(Self {
            transfer,
            noise,
            external,
            couplings,
            light_weight: a * a + eps2 * eps2 * (1.0 - o * o),
            decay_weight: b * b * (1.0 + c * c - 2.0 * o * c),
        })
    }

    /// Embed the sector map into a full-state affine channel.
    fn embed(&self, state: &GaussianState) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let dim = 2 * state.n_modes();
        let mut s = DMatrix::identity(dim, dim);
        let mut n = DMatrix::zeros(dim, dim);
        for (atom, light) in [(Mode::AtomC, Mode::LightC), (Mode::AtomS, Mode::LightS)] {
            let (ia, il) = match (state.position(atom), state.position(light)) {
                (Some(a), Some(l)) => (2 * a, 2 * l),
                _ => bail!(InvalidState, "pulse map needs modes {atom} and {light}"),
            };
            let idx = [ia, ia + 1, il, il + 1];
            for r in 0..4 {
                for c in 0..4 {
                    s[(idx[r], idx[c])] = self.transfer[(r, c)];
                    n[(idx[r], idx[c])] = self.noise[(r, c)];
                }
            }
        }
        Ok((s, n))
    }
}

/// Ideal pulse (no extra decay) on a state holding atomic-c/s and light-c/s.
pub fn step_io(params: &DynamicsParams, state: &GaussianState) -> Result<GaussianState> {
    let mut ideal = *params;
    ideal.gamma_extra = 0.0;
    step_io_noisy(&ideal, state)
}

/// Pulse including transverse decay at `gamma_extra` towards the coherent
/// spin state; reduces exactly to [`step_io`] when `gamma_extra = 0`.
pub fn step_io_noisy(params: &DynamicsParams, state: &GaussianState) -> Result<GaussianState> {
    let map = SectorMap::for_pulse(params, params.pulse)?;
    let (s, n) = map.embed(state)?;
    state.apply_affine_channel(&s, &n, &DVector::zeros(s.nrows()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceTrajectory {
    pub times: Vec<f64>,
    /// var(P_c/s) from numerical integration.
    pub numeric: Vec<f64>,
    /// var(P_c/s) from the closed-form solution.
    pub closed_form: Vec<f64>,
}

impl VarianceTrajectory {
    /// xi(t) = 2 var(P_c/s).
    pub fn xi(&self) -> Vec<f64> {
        self.numeric.iter().map(|v| 2.0 * v).collect()
    }

    pub fn last_xi(&self) -> f64 {
        2.0 * self.numeric.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct XiTrajectory {
    pub times: Vec<f64>,
    pub xi: Vec<f64>,
}

impl XiTrajectory {
    pub fn min_xi(&self) -> f64 {
        self.xi.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

fn check_horizon(v0: f64, t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        bail!(InvalidArgument, "time must be >= 0, got {t}");
    }
    if !(v0 >= 0.0) || !v0.is_finite() {
        bail!(InvalidArgument, "initial variance must be >= 0, got {v0}");
    }
    Ok(())
}

/// Fixed point of the unconditional variance equation.
pub fn unconditional_fixed_point(params: &DynamicsParams) -> Result<f64> {
    let g = params.require_rate()?;
    let z2 = params.squeeze.z() * params.squeeze.z();
    Ok((params.gamma_s * 0.5 / z2 + params.gamma_extra * 0.5) / g)
}

/// dv/dt = -2 gamma_s (v - 1/(2Z^2)) - 2 gamma_extra (v - 1/2).
pub fn evolve_unconditional(params: &DynamicsParams, v0: f64, t: f64, samples: usize) -> Result<VarianceTrajectory> {
    check_horizon(v0, t)?;
    let g = params.require_rate()?;
    let v_inf = unconditional_fixed_point(params)?;
    let times = ode::linspace(t, samples);
    let (gs, ge) = (params.gamma_s, params.gamma_extra);
    let target = 0.5 * params.squeeze.ideal_xi();
    let rhs = |_: f64, y: &[f64], d: &mut [f64]| {
        d[0] = -2.0 * gs * (y[0] - target) - 2.0 * ge * (y[0] - VACUUM_VARIANCE);
    };
    let numeric = ode::solve(rhs, &[v0], &times, OdeOptions::default())?
        .into_iter()
        .map(|y| y[0])
        .collect();
    let closed_form = times.iter().map(|&s| v_inf + (v0 - v_inf) * (-2.0 * g * s).exp()).collect();
    Ok(VarianceTrajectory { times, numeric, closed_form })
}

/// Right-hand side of the conditional-variance Riccati equation,
/// obtained from an infinitesimal pulse followed by homodyne conditioning
/// on the outgoing y quadrature.
pub fn riccati_rhs(params: &DynamicsParams, v: f64) -> f64 {
    let z = params.squeeze.z();
    let (gs, ge) = (params.gamma_s, params.gamma_extra);
    let corr = z * v - 0.5 / z;
    -2.0 * gs * v + gs / (z * z) - 2.0 * gs * corr * corr / VACUUM_VARIANCE - 2.0 * ge * (v - VACUUM_VARIANCE)
}

/// Non-negative root of the Riccati right-hand side.
pub fn conditional_fixed_point(params: &DynamicsParams) -> Result<f64> {
    params.require_rate()?;
    let z = params.squeeze.z();
    let (gs, ge) = (params.gamma_s, params.gamma_extra);
    if gs == 0.0 {
        return Ok(VACUUM_VARIANCE);
    }
    let k = 4.0 * gs * z * z;
    let lin = gs - ge;
    Ok((lin + (lin * lin + k * ge).sqrt()) / k)
}

fn riccati_closed_form(params: &DynamicsParams, v0: f64, t: f64) -> f64 {
    let z = params.squeeze.z();
    let (gs, ge) = (params.gamma_s, params.gamma_extra);
    if gs == 0.0 {
        return VACUUM_VARIANCE + (v0 - VACUUM_VARIANCE) * (-2.0 * ge * t).exp();
    }
    // dv/dt = -k (v - v_plus)(v - v_minus)
    let k = 4.0 * gs * z * z;
    let lin = gs - ge;
    let root = (lin * lin + k * ge).sqrt();
    let v_plus = (lin + root) / k;
    let v_minus = (lin - root) / k;
    if (v0 - v_minus).abs() < 1e-300 {
        return v_minus;
    }
    let w = (v0 - v_plus) / (v0 - v_minus) * (-k * (v_plus - v_minus) * t).exp();
    (v_plus - w * v_minus) / (1.0 - w)
}

/// Conditional variance under continuous y-homodyne detection.
pub fn evolve_conditional(params: &DynamicsParams, v0: f64, t: f64, samples: usize) -> Result<VarianceTrajectory> {
    check_horizon(v0, t)?;
    params.require_rate()?;
    let times = ode::linspace(t, samples);
    let p = *params;
    let numeric = ode::solve(|_, y, d| d[0] = riccati_rhs(&p, y[0]), &[v0], &times, OdeOptions::default())?
        .into_iter()
        .map(|y| y[0])
        .collect();
    let closed_form = times.iter().map(|&s| riccati_closed_form(params, v0, s)).collect();
    Ok(VarianceTrajectory { times, numeric, closed_form })
}

/// Integrate the unconditional equation from the coherent spin state to
/// rest and return xi.
pub fn unconditional_steady_xi_numeric(params: &DynamicsParams) -> Result<f64> {
    let g = params.require_rate()?;
    let p = *params;
    let target = 0.5 * p.squeeze.ideal_xi();
    let (_, y) = ode::solve_to_rest(
        |_, y, d| d[0] = -2.0 * p.gamma_s * (y[0] - target) - 2.0 * p.gamma_extra * (y[0] - VACUUM_VARIANCE),
        &[VACUUM_VARIANCE],
        1e-12 * g,
        1e4 / g,
        OdeOptions { rtol: 1e-12, atol: 1e-15, ..OdeOptions::default() },
    )?;
    Ok(2.0 * y[0])
}

/// Integrate the Riccati equation from the coherent spin state to rest and
/// return xi_cond.
pub fn conditional_steady_xi_numeric(params: &DynamicsParams) -> Result<f64> {
    let g = params.require_rate()?;
    let p = *params;
    let (_, y) = ode::solve_to_rest(
        |_, y, d| d[0] = riccati_rhs(&p, y[0]),
        &[VACUUM_VARIANCE],
        1e-12 * g,
        1e4 / g,
        OdeOptions { rtol: 1e-12, atol: 1e-15, ..OdeOptions::default() },
    )?;
    Ok(2.0 * y[0])
}

/// xi_inf = (gamma_s / Z^2 + gamma_extra) / (gamma_s + gamma_extra).
pub fn steady_state_xi(params: &DynamicsParams) -> Result<f64> {
    params.validate()?;
    let g = params.gamma_total();
    if g <= 0.0 {
        bail!(InvalidArgument, "gamma_s + gamma_extra must be positive");
    }
    Ok((params.squeeze.ideal_xi() * params.gamma_s + params.gamma_extra) / g)
}

/// Steady-state EPR variance with the scattered light's y quadrature
/// continuously measured.
pub fn steady_state_xi_cond(params: &DynamicsParams) -> Result<f64> {
    params.validate()?;
    if params.gamma_s <= 0.0 {
        return Err(Error::InvalidArgument("steady_state_xi_cond needs gamma_s > 0".into()));
    }
    let z2 = params.squeeze.z() * params.squeeze.z();
    let ratio = params.gamma_extra / params.gamma_s;
    let lin = 1.0 - ratio;
    Ok((lin + (lin * lin + 4.0 * z2 * ratio).sqrt()) / (2.0 * z2))
}

/// Drift and diffusion of the local (X_I, P_I, X_II, P_II) covariance.
fn local_lyapunov_terms(params: &DynamicsParams) -> (Matrix4<f64>, Matrix4<f64>) {
    let z2 = params.squeeze.z() * params.squeeze.z();
    let g = params.gamma_total();
    let (gs, ge) = (params.gamma_s, params.gamma_extra);
    let anti = gs * z2 + ge;
    let sq = gs / z2 + ge;
    let t: Matrix4<f64> = Matrix4::from_iterator(local_to_collective().iter().copied());
    let d_cs = Matrix4::from_diagonal(&nalgebra::Vector4::new(anti, sq, anti, sq));
    let diffusion = t.transpose() * d_cs * t;
    let mut drift = Matrix4::identity() * -g;
    // ensemble II precesses at delta_omega in the frame co-rotating with I
    drift[(2, 3)] = params.delta_omega;
    drift[(3, 2)] = -params.delta_omega;
    (drift, diffusion)
}

fn xi_from_local(cov: &Matrix4<f64>) -> f64 {
    // var((P_I + P_II)/sqrt2) + var((X_I - X_II)/sqrt2)
    0.5 * (cov[(1, 1)] + cov[(3, 3)] + 2.0 * cov[(1, 3)]) + 0.5 * (cov[(0, 0)] + cov[(2, 2)] - 2.0 * cov[(0, 2)])
}

/// xi(t) with the full local covariance tracked, starting from the coherent
/// spin state, sampled at `samples + 1` evenly spaced times on `[0, t]`.
pub fn evolve_with_detuning(params: &DynamicsParams, t: f64, samples: usize) -> Result<XiTrajectory> {
    check_horizon(VACUUM_VARIANCE, t)?;
    params.require_rate()?;
    let (drift, diffusion) = local_lyapunov_terms(params);
    let times = ode::linspace(t, samples);
    let y0: Vec<f64> = (Matrix4::<f64>::identity() * VACUUM_VARIANCE).iter().copied().collect();
    let rhs = |_: f64, y: &[f64], d: &mut [f64]| {
        let cov = Matrix4::from_column_slice(y);
        let dcov = drift * cov + cov * drift.transpose() + diffusion;
        d.copy_from_slice(dcov.as_slice());
    };
    let xi = ode::solve(rhs, &y0, &times, OdeOptions::default())?
        .iter()
        .map(|y| xi_from_local(&Matrix4::from_column_slice(y)))
        .collect();
    Ok(XiTrajectory { times, xi })
}
