//! Three-level (up, down, h) population model per ensemble with the
//! adiabatic EPR-variance formula and its direct ODE counterpart.

use alloc::vec::Vec;

use crate::error::{bail, Result};
use crate::gaussian::SqueezeParams;
use crate::ode::{self, OdeOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateModelParams {
    /// Driving-field radiative rate (1/ms).
    pub gamma: f64,
    /// Aggregate transverse dephasing without pump fields (1/ms).
    pub gamma_tilde: f64,
    pub gamma_col: f64,
    pub gamma_pump: f64,
    pub gamma_repump: f64,
    /// Radiative loss out of the two-level subsystem (1/ms).
    pub gamma_l_out: f64,
    /// Resonant optical depth.
    pub d: f64,
    /// Atoms per ensemble.
    pub n_atoms: f64,
    pub squeeze: SqueezeParams,
}

impl RateModelParams {
    /// Rates fitted to the pump/repump experiment at optical depth `d`,
    /// with the radiative loss set equal to `gamma`.
    pub fn pumped_reference(d: f64) -> Result<Self> {
        let p = Self {
            gamma: 0.002,
            gamma_tilde: 0.193,
            gamma_col: 0.002,
            gamma_pump: 0.160,
            gamma_repump: 0.160,
            gamma_l_out: 0.002,
            d,
            n_atoms: 1e12,
            squeeze: SqueezeParams::from_z(2.5)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma", self.gamma),
            ("gamma_tilde", self.gamma_tilde),
            ("gamma_col", self.gamma_col),
            ("gamma_pump", self.gamma_pump),
            ("gamma_repump", self.gamma_repump),
            ("gamma_l_out", self.gamma_l_out),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!(InvalidArgument, "{name} must be finite and >= 0, got {v}");
            }
        }
        if !(self.d > 0.0 && self.d.is_finite()) {
            bail!(InvalidArgument, "optical depth must be > 0, got {}", self.d);
        }
        if !(self.n_atoms > 0.0 && self.n_atoms.is_finite()) {
            bail!(InvalidArgument, "atom number must be > 0, got {}", self.n_atoms);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRates {
    pub gamma_out: f64,
    pub gamma_in: f64,
    /// down -> up.
    pub gamma_34: f64,
    /// up -> down.
    pub gamma_43: f64,
    pub gamma_cool: f64,
    pub gamma_heat: f64,
    pub gamma_tilde_eff: f64,
}

impl EffectiveRates {
    /// Polarisation of the two-level subsystem in steady state, ignoring
    /// loss to |h>.
    pub fn p2_steady(&self) -> f64 {
        (self.gamma_cool - self.gamma_heat) / (self.gamma_cool + self.gamma_heat)
    }
}

pub fn effective_rates(params: &RateModelParams) -> Result<EffectiveRates> {
    params.validate()?;
    let mu2 = params.squeeze.mu() * params.squeeze.mu();
    let nu2 = params.squeeze.nu() * params.squeeze.nu();
    let gamma_34 = mu2 * params.gamma + params.gamma_pump + params.gamma_col;
    let gamma_43 = nu2 * params.gamma + params.gamma_col;
    Ok(EffectiveRates {
        gamma_out: params.gamma_l_out + params.gamma_col,
        gamma_in: params.gamma_repump + params.gamma_col,
        gamma_34,
        gamma_43,
        gamma_cool: gamma_34,
        gamma_heat: gamma_43,
        gamma_tilde_eff: params.gamma_tilde + 2.0 * params.gamma_pump,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PopulationState {
    pub n_up: f64,
    pub n_dn: f64,
    pub n_h: f64,
}

impl PopulationState {
    pub fn fully_pumped(n_atoms: f64) -> Self {
        Self { n_up: n_atoms, n_dn: 0.0, n_h: 0.0 }
    }

    /// Atoms in the two-level subsystem.
    pub fn n2(&self) -> f64 {
        self.n_up + self.n_dn
    }

    pub fn p2(&self) -> f64 {
        (self.n_up - self.n_dn) / self.n2()
    }

    pub fn total(&self) -> f64 {
        self.n_up + self.n_dn + self.n_h
    }

    /// Effective optical depth d N2 / N.
    pub fn optical_depth(&self, d: f64, n_atoms: f64) -> f64 {
        d * self.n2() / n_atoms
    }
}

fn population_rhs(r: &EffectiveRates, y: &[f64], dy: &mut [f64]) {
    let (up, dn, h) = (y[0], y[1], y[2]);
    dy[0] = -r.gamma_out * up + r.gamma_in * h + r.gamma_34 * dn - r.gamma_43 * up;
    dy[1] = -r.gamma_out * dn + r.gamma_in * h + r.gamma_43 * up - r.gamma_34 * dn;
    dy[2] = r.gamma_out * (up + dn) - 2.0 * r.gamma_in * h;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<PopulationState>,
}

/// Populations on `samples + 1` evenly spaced times over `[0, t]`,
/// starting fully pumped.
pub fn evolve_populations(params: &RateModelParams, t: f64, samples: usize) -> Result<PopulationTrajectory> {
    if !(t >= 0.0) || !t.is_finite() {
        bail!(InvalidArgument, "time must be >= 0, got {t}");
    }
    let rates = effective_rates(params)?;
    let times = ode::linspace(t, samples);
    let y0 = PopulationState::fully_pumped(params.n_atoms);
    let ys = ode::solve(|_, y, d| population_rhs(&rates, y, d), &[y0.n_up, y0.n_dn, y0.n_h], &times, tight())?;
    let states = ys.iter().map(|y| PopulationState { n_up: y[0], n_dn: y[1], n_h: y[2] }).collect();
    Ok(PopulationTrajectory { times, states })
}

fn tight() -> OdeOptions {
    OdeOptions { rtol: 1e-11, atol: 1e-14, ..OdeOptions::default() }
}

/// (1/P) (G + dGamma P^2 (mu-nu)^2) / (G + dGamma P).
pub fn xi2_steady(gamma_tilde_eff: f64, d_gamma: f64, p: f64, squeeze: &SqueezeParams) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        bail!(InvalidArgument, "polarisation must lie in (0, 1], got {p}");
    }
    if !(gamma_tilde_eff >= 0.0 && d_gamma >= 0.0) || gamma_tilde_eff + d_gamma <= 0.0 {
        bail!(InvalidArgument, "rates must be >= 0 and not both zero");
    }
    let x = squeeze.ideal_xi();
    Ok((gamma_tilde_eff + d_gamma * p * p * x) / (p * (gamma_tilde_eff + d_gamma * p)))
}

/// Adiabatic xi_2 at time `t` for instantaneous `n2`, `p2`, with the
/// initial coherent-spin-state noise `sigma0` (in atoms).
pub fn xi2_adiabatic_point(params: &RateModelParams, gamma_tilde_eff: f64, n2: f64, p2: f64, sigma0: f64, t: f64) -> Result<f64> {
    if !(p2 > 0.0) {
        bail!(Domain, "polarisation P2 = {p2} is not positive at t = {t}");
    }
    let d_gamma = params.d * n2 / params.n_atoms * params.gamma;
    let lambda = gamma_tilde_eff + d_gamma * p2;
    let decay = (-lambda * t).exp();
    let x = params.squeeze.ideal_xi();
    let settled = (gamma_tilde_eff + d_gamma * p2 * p2 * x) / (p2 * lambda);
    Ok(sigma0 / (n2 * p2) * decay + settled * (1.0 - decay))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Xi2Trajectory {
    pub times: Vec<f64>,
    /// Closed-form adiabatic estimate.
    pub adiabatic: Vec<f64>,
    /// Direct integration of the variance and longitudinal-spin equations.
    pub direct: Vec<f64>,
    pub populations: Vec<PopulationState>,
}

/// xi_2(t) on `samples + 1` evenly spaced times over `[0, t]`.
pub fn xi2_adiabatic(params: &RateModelParams, t: f64, samples: usize) -> Result<Xi2Trajectory> {
    if !(t >= 0.0) || !t.is_finite() {
        bail!(InvalidArgument, "time must be >= 0, got {t}");
    }
    let rates = effective_rates(params)?;
    let g = rates.gamma_tilde_eff;
    let n = params.n_atoms;
    let x = params.squeeze.ideal_xi();
    let (d, gamma) = (params.d, params.gamma);
    // CSS projection noise: Sigma = N, so xi(0) = 1
    let sigma0 = n;
    let times = ode::linspace(t, samples);
    // state: n_up, n_dn, n_h, Sigma
    let rhs = |_: f64, y: &[f64], dy: &mut [f64]| {
        population_rhs(&rates, &y[..3], &mut dy[..3]);
        let n2 = y[0] + y[1];
        let p2 = (y[0] - y[1]) / n2;
        let dg = d * n2 / n * gamma;
        dy[3] = -(g + dg * p2) * y[3] + n2 * (g + dg * p2 * p2 * x);
    };
    let ys = ode::solve(rhs, &[n, 0.0, 0.0, sigma0], &times, tight())?;
    let mut adiabatic = Vec::with_capacity(ys.len());
    let mut direct = Vec::with_capacity(ys.len());
    let mut populations = Vec::with_capacity(ys.len());
    for (y, &s) in ys.iter().zip(&times) {
        let pop = PopulationState { n_up: y[0], n_dn: y[1], n_h: y[2] };
        let (n2, p2) = (pop.n2(), pop.p2());
        adiabatic.push(xi2_adiabatic_point(params, g, n2, p2, sigma0, s)?);
        direct.push(y[3] / (n2 * p2));
        populations.push(pop);
    }
    Ok(Xi2Trajectory { times, adiabatic, direct, populations })
}
