//! Gaussian states over labelled bosonic modes and the primitive channels
//! acting on them.
//!
//! Quadratures are ordered (X1, P1, X2, P2, ...) and normalised so that the
//! vacuum (or a coherent spin state under Holstein-Primakoff) has variance
//! 1/2 in every quadrature. Light modes use the same slots with X = y and
//! P = q.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{bail, Error, Result};
use crate::linalg;

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const PHYSICALITY_TOL: f64 = 1e-10;
pub const VACUUM_VARIANCE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    /// Ensemble I.
    AtomI,
    /// Ensemble II.
    AtomII,
    /// Collective c mode: X_c = (X_I + X_II)/sqrt2, P_c = (P_I + P_II)/sqrt2.
    AtomC,
    /// Collective s mode: X_s = -(P_I - P_II)/sqrt2, P_s = (X_I - X_II)/sqrt2.
    AtomS,
    /// cos-modulated light mode interacting with the c sector.
    LightC,
    /// sin-modulated light mode interacting with the s sector.
    LightS,
    Aux(u16),
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::AtomI => f.write_str("atomic-I"),
            Mode::AtomII => f.write_str("atomic-II"),
            Mode::AtomC => f.write_str("atomic-c"),
            Mode::AtomS => f.write_str("atomic-s"),
            Mode::LightC => f.write_str("light-c"),
            Mode::LightS => f.write_str("light-s"),
            Mode::Aux(k) => write!(f, "aux-{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    X,
    P,
}

impl Quadrature {
    fn offset(self) -> usize {
        match self {
            Quadrature::X => 0,
            Quadrature::P => 1,
        }
    }
}

/// Two-mode squeezing parameters: mu = cosh r, nu = sinh r, Z = mu + nu.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezeParams {
    r: f64,
    mu: f64,
    nu: f64,
    z: f64,
}

impl SqueezeParams {
    pub fn from_z(z: f64) -> Result<Self> {
        if !(z.is_finite() && z > 0.0) {
            bail!(InvalidArgument, "squeezing factor Z must be positive and finite, got {z}");
        }
        Ok(Self { r: z.ln(), mu: 0.5 * (z + 1.0 / z), nu: 0.5 * (z - 1.0 / z), z })
    }

    pub fn from_r(r: f64) -> Result<Self> {
        if !r.is_finite() {
            bail!(InvalidArgument, "squeezing parameter r must be finite, got {r}");
        }
        Self::from_z(r.exp())
    }

    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn mu(&self) -> f64 {
        self.mu
    }
    pub fn nu(&self) -> f64 {
        self.nu
    }
    pub fn z(&self) -> f64 {
        self.z
    }
    /// 1/Z = mu - nu.
    pub fn z_inv(&self) -> f64 {
        1.0 / self.z
    }
    /// Ideal two-mode squeezed EPR variance (mu - nu)^2 = 1/Z^2.
    pub fn ideal_xi(&self) -> f64 {
        1.0 / (self.z * self.z)
    }
}

/// Orthogonal map (X_I, P_I, X_II, P_II) -> (X_c, P_c, X_s, P_s).
pub fn local_to_collective() -> DMatrix<f64> {
    let h = core::f64::consts::FRAC_1_SQRT_2;
    DMatrix::from_row_slice(
        4,
        4,
        &[
            h, 0.0, h, 0.0, //
            0.0, h, 0.0, h, //
            0.0, -h, 0.0, h, //
            h, 0.0, -h, 0.0,
        ],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    modes: Vec<Mode>,
    cov: DMatrix<f64>,
    disp: DVector<f64>,
}

impl GaussianState {
    /// Vacuum on `n_modes` auxiliary modes.
    pub fn vacuum(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            bail!(InvalidArgument, "a Gaussian state needs at least one mode");
        }
        let modes: Vec<Mode> = (0..n_modes).map(|k| Mode::Aux(k as u16)).collect();
        Self::vacuum_on(&modes)
    }

    /// Vacuum (coherent spin state for atomic modes) on the given labels.
    pub fn vacuum_on(modes: &[Mode]) -> Result<Self> {
        if modes.is_empty() {
            bail!(InvalidArgument, "a Gaussian state needs at least one mode");
        }
        check_distinct(modes)?;
        let dim = 2 * modes.len();
        Ok(Self {
            modes: modes.to_vec(),
            cov: DMatrix::identity(dim, dim) * VACUUM_VARIANCE,
            disp: DVector::zeros(dim),
        })
    }

    /// Build and validate a state.
    pub fn new(modes: Vec<Mode>, cov: DMatrix<f64>, disp: DVector<f64>) -> Result<Self> {
        if modes.is_empty() {
            bail!(InvalidArgument, "a Gaussian state needs at least one mode");
        }
        check_distinct(&modes)?;
        let dim = 2 * modes.len();
        if cov.shape() != (dim, dim) || disp.len() != dim {
            bail!(
                InvalidArgument,
                "expected {dim}x{dim} covariance and length-{dim} displacement, got {:?} and {}",
                cov.shape(),
                disp.len()
            );
        }
        let state = Self { modes, cov, disp };
        state.validate()?;
        Ok(state)
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }
    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }
    pub fn disp(&self) -> &DVector<f64> {
        &self.disp
    }
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn position(&self, mode: Mode) -> Option<usize> {
        self.modes.iter().position(|&m| m == mode)
    }

    pub fn index(&self, mode: Mode, quad: Quadrature) -> Result<usize> {
        match self.position(mode) {
            Some(k) => Ok(2 * k + quad.offset()),
            None => Err(Error::InvalidState(format!("mode {mode} not present"))),
        }
    }

    pub fn variance(&self, mode: Mode, quad: Quadrature) -> Result<f64> {
        let i = self.index(mode, quad)?;
        Ok(self.cov[(i, i)])
    }

    pub fn mean(&self, mode: Mode, quad: Quadrature) -> Result<f64> {
        Ok(self.disp[self.index(mode, quad)?])
    }

    /// Check symmetry, the uncertainty relation and the symplectic spectrum.
    pub fn validate(&self) -> Result<()> {
        let asym = linalg::max_asymmetry(&self.cov);
        if asym > SYMMETRY_TOL {
            bail!(InvalidState, "covariance not symmetric (max deviation {asym:e})");
        }
        if self.cov.iter().chain(self.disp.iter()).any(|v| !v.is_finite()) {
            bail!(InvalidState, "non-finite covariance or displacement entry");
        }
        let min_ev = linalg::uncertainty_min_eigenvalue(&self.cov);
        if min_ev < -PHYSICALITY_TOL {
            return Err(Error::ChannelNotPhysical { eigenvalue: min_ev });
        }
        if let Some(&nu) = self.symplectic_eigenvalues().first() {
            if nu < VACUUM_VARIANCE - PHYSICALITY_TOL {
                return Err(Error::ChannelNotPhysical { eigenvalue: nu - VACUUM_VARIANCE });
            }
        }
        Ok(())
    }

    pub fn symplectic_eigenvalues(&self) -> Vec<f64> {
        linalg::symplectic_eigenvalues(&self.cov)
    }

    /// `cov -> S cov S^T + N`, `disp -> S disp + d`.
    pub fn apply_affine_channel(&self, s: &DMatrix<f64>, n: &DMatrix<f64>, d: &DVector<f64>) -> Result<Self> {
        let dim = self.cov.nrows();
        if s.shape() != (dim, dim) || n.shape() != (dim, dim) || d.len() != dim {
            bail!(InvalidArgument, "channel dimensions do not match a {dim}-dimensional phase space");
        }
        let asym = linalg::max_asymmetry(n);
        if asym > SYMMETRY_TOL {
            bail!(InvalidArgument, "added-noise matrix not symmetric (max deviation {asym:e})");
        }
        let cov = linalg::symmetrize(&(s * &self.cov * s.transpose() + n));
        let disp = s * &self.disp + d;
        let out = Self { modes: self.modes.clone(), cov, disp };
        out.validate()?;
        Ok(out)
    }

    /// Homodyne measurement of one quadrature with the given outcome. The
    /// measured mode is removed; the remaining covariance is the Schur
    /// complement and does not depend on `outcome`.
    pub fn condition_on_homodyne(&self, mode: Mode, quad: Quadrature, outcome: f64) -> Result<Self> {
        let m = self.index(mode, quad)?;
        let var = self.cov[(m, m)];
        if var < 1e-14 {
            return Err(Error::DegenerateMeasurement { variance: var });
        }
        let k = self.position(mode).unwrap_or_default();
        let keep: Vec<usize> = (0..self.cov.nrows()).filter(|&i| i / 2 != k).collect();
        let r = keep.len();
        let mut cov = DMatrix::zeros(r, r);
        let mut disp = DVector::zeros(r);
        let innovation = outcome - self.disp[m];
        for (a, &i) in keep.iter().enumerate() {
            disp[a] = self.disp[i] + self.cov[(i, m)] * innovation / var;
            for (b, &j) in keep.iter().enumerate() {
                cov[(a, b)] = self.cov[(i, j)] - self.cov[(i, m)] * self.cov[(m, j)] / var;
            }
        }
        let modes: Vec<Mode> = self.modes.iter().copied().filter(|&x| x != mode).collect();
        if modes.is_empty() {
            bail!(InvalidState, "cannot measure the only remaining mode");
        }
        let out = Self { modes, cov: linalg::symmetrize(&cov), disp };
        out.validate()?;
        Ok(out)
    }

    /// EPR variance xi = var(P_c) + var(P_s); equals 1 for the coherent spin
    /// state and (mu - nu)^2 for the ideal two-mode squeezed state.
    /// Accepts either collective (c/s) or local (I/II) atomic modes.
    pub fn epr_xi(&self) -> Result<f64> {
        if let (Some(_), Some(_)) = (self.position(Mode::AtomC), self.position(Mode::AtomS)) {
            return Ok(self.variance(Mode::AtomC, Quadrature::P)? + self.variance(Mode::AtomS, Quadrature::P)?);
        }
        if let (Some(_), Some(_)) = (self.position(Mode::AtomI), self.position(Mode::AtomII)) {
            let collective = self.to_collective()?;
            return collective.epr_xi();
        }
        Err(Error::InvalidState("EPR variance needs atomic-c/atomic-s or atomic-I/atomic-II modes".into()))
    }

    /// Replace the local atomic pair (I, II) by the collective pair (c, s),
    /// keeping the slots of I and II respectively.
    pub fn to_collective(&self) -> Result<Self> {
        let i = self.index(Mode::AtomI, Quadrature::X)?;
        let j = self.index(Mode::AtomII, Quadrature::X)?;
        let dim = self.cov.nrows();
        let t = local_to_collective();
        let idx = [i, i + 1, j, j + 1];
        let mut s = DMatrix::identity(dim, dim);
        for a in 0..4 {
            for b in 0..4 {
                s[(idx[a], idx[b])] = t[(a, b)];
            }
        }
        let mut modes = self.modes.clone();
        modes[i / 2] = Mode::AtomC;
        modes[j / 2] = Mode::AtomS;
        let out = Self {
            modes,
            cov: linalg::symmetrize(&(&s * &self.cov * s.transpose())),
            disp: &s * &self.disp,
        };
        Ok(out)
    }

    /// Pass `mode` through a beam splitter of transmission `eta` whose other
    /// port carries vacuum.
    pub fn beam_splitter_loss(&self, mode: Mode, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            bail!(InvalidArgument, "transmission must lie in [0, 1], got {eta}");
        }
        let i = self.index(mode, Quadrature::X)?;
        let dim = self.cov.nrows();
        let mut s = DMatrix::identity(dim, dim);
        let mut n = DMatrix::zeros(dim, dim);
        for k in [i, i + 1] {
            s[(k, k)] = eta.sqrt();
            n[(k, k)] = (1.0 - eta) * VACUUM_VARIANCE;
        }
        self.apply_affine_channel(&s, &n, &DVector::zeros(dim))
    }

    /// Shift the mean of one quadrature.
    pub fn displaced(&self, mode: Mode, quad: Quadrature, amount: f64) -> Result<Self> {
        let i = self.index(mode, quad)?;
        let mut out = self.clone();
        out.disp[i] += amount;
        Ok(out)
    }

    /// Append a vacuum mode.
    pub fn with_vacuum_mode(&self, mode: Mode) -> Result<Self> {
        if self.position(mode).is_some() {
            bail!(InvalidArgument, "mode {mode} already present");
        }
        let dim = self.cov.nrows();
        let mut cov = DMatrix::zeros(dim + 2, dim + 2);
        cov.view_mut((0, 0), (dim, dim)).copy_from(&self.cov);
        cov[(dim, dim)] = VACUUM_VARIANCE;
        cov[(dim + 1, dim + 1)] = VACUUM_VARIANCE;
        let mut disp = DVector::zeros(dim + 2);
        disp.rows_mut(0, dim).copy_from(&self.disp);
        let mut modes = self.modes.clone();
        modes.push(mode);
        Ok(Self { modes, cov, disp })
    }

    /// Reduced state on the listed modes, in the listed order.
    pub fn marginal(&self, keep: &[Mode]) -> Result<Self> {
        if keep.is_empty() {
            bail!(InvalidArgument, "marginal over no modes");
        }
        check_distinct(keep)?;
        let mut idx = Vec::with_capacity(2 * keep.len());
        for &m in keep {
            let i = self.index(m, Quadrature::X)?;
            idx.push(i);
            idx.push(i + 1);
        }
        let r = idx.len();
        let cov = DMatrix::from_fn(r, r, |a, b| self.cov[(idx[a], idx[b])]);
        let disp = DVector::from_fn(r, |a, _| self.disp[idx[a]]);
        Ok(Self { modes: keep.to_vec(), cov, disp })
    }
}

fn check_distinct(modes: &[Mode]) -> Result<()> {
    for (i, a) in modes.iter().enumerate() {
        if modes[i + 1..].contains(a) {
            bail!(InvalidArgument, "duplicate mode label {a}");
        }
    }
    Ok(())
}
