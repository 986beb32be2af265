//! Exact density-operator dynamics of two small spin ensembles under the
//! entangling dissipator and single-particle noise.
//!
//! Ensemble I is pumped to |up>, ensemble II to |down>. `S+ = sum |up><down|`
//! raises J_x in both ensembles. In the microscopic basis atom `k`
//! (ensemble I first) occupies bit `2N-1-k` of the state index, with bit
//! value 1 for |down>. In the Dicke basis each ensemble is labelled by its
//! number of |down> atoms `k`, product index `k1 (N+1) + k2`.

mod sparse;

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{ComplexField, DMatrix, DVector, SymmetricEigen};

pub use sparse::{SparseMatrix, C64};

use crate::error::{bail, Error, Result};
use crate::gaussian::SqueezeParams;

pub const MAX_MICROSCOPIC_ATOMS: usize = 4;
pub const MAX_DICKE_ATOMS: usize = 32;
/// Largest vectorized-generator dimension for which the null space is
/// computed directly.
pub const MAX_NULL_SPACE_DIM: usize = 256;

const HERMITICITY_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-10;
const POSITIVITY_TOL: f64 = -1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Representation {
    Microscopic,
    Dicke,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LindbladRates {
    /// Resonant optical depth.
    pub d: f64,
    /// Single-particle radiative rate (1/ms).
    pub gamma: f64,
    pub gamma_cool: f64,
    pub gamma_heat: f64,
    pub gamma_deph: f64,
}

impl LindbladRates {
    /// Only the entangling dissipator, at rate `d_gamma`.
    pub fn ideal(d_gamma: f64) -> Self {
        Self { d: 1.0, gamma: d_gamma, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d", self.d),
            ("gamma", self.gamma),
            ("gamma_cool", self.gamma_cool),
            ("gamma_heat", self.gamma_heat),
            ("gamma_deph", self.gamma_deph),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bail!(InvalidArgument, "rate {name} must be finite and >= 0, got {v}");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LindbladSystem {
    pub representation: Representation,
    pub n_atoms: usize,
    pub rates: LindbladRates,
    pub squeeze: SqueezeParams,
}

impl LindbladSystem {
    pub fn new(representation: Representation, n_atoms: usize, rates: LindbladRates, squeeze: SqueezeParams) -> Result<Self> {
        let s = Self { representation, n_atoms, rates, squeeze };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.rates.validate()?;
        let cap = match self.representation {
            Representation::Microscopic => MAX_MICROSCOPIC_ATOMS,
            Representation::Dicke => MAX_DICKE_ATOMS,
        };
        if self.n_atoms == 0 || self.n_atoms > cap {
            bail!(Capacity, "{:?} representation supports 1..={cap} atoms per ensemble, got {}", self.representation, self.n_atoms);
        }
        Ok(())
    }

    /// Hilbert-space dimension of the two-ensemble system.
    pub fn dim(&self) -> usize {
        match self.representation {
            Representation::Microscopic => 1 << (2 * self.n_atoms),
            Representation::Dicke => (self.n_atoms + 1) * (self.n_atoms + 1),
        }
    }

    fn basis(&self) -> Basis {
        Basis { representation: self.representation, n_atoms: self.n_atoms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Basis {
    representation: Representation,
    n_atoms: usize,
}

impl Basis {
    fn dim(&self) -> usize {
        match self.representation {
            Representation::Microscopic => 1 << (2 * self.n_atoms),
            Representation::Dicke => (self.n_atoms + 1) * (self.n_atoms + 1),
        }
    }

    fn micro_bit(&self, atom: usize) -> usize {
        1 << (2 * self.n_atoms - 1 - atom)
    }

    fn atoms(&self, ensemble: usize) -> core::ops::Range<usize> {
        ensemble * self.n_atoms..(ensemble + 1) * self.n_atoms
    }

    /// |up><down| on one atom of the microscopic basis.
    fn sigma(&self, atom: usize) -> SparseMatrix {
        let bit = self.micro_bit(atom);
        let entries = (0..self.dim()).filter(|x| x & bit != 0).map(|x| (x ^ bit, x, C64::new(1.0, 0.0))).collect();
        SparseMatrix::from_triplets(self.dim(), entries)
    }

    /// |down><down| on one atom of the microscopic basis.
    fn down_projector(&self, atom: usize) -> SparseMatrix {
        let bit = self.micro_bit(atom);
        let diag: Vec<f64> = (0..self.dim()).map(|x| if x & bit != 0 { 1.0 } else { 0.0 }).collect();
        SparseMatrix::diagonal(&diag)
    }

    /// Collective S+ of one ensemble.
    fn s_plus(&self, ensemble: usize) -> SparseMatrix {
        let n = self.n_atoms;
        match self.representation {
            Representation::Microscopic => {
                let entries = self.atoms(ensemble).flat_map(|a| self.sigma(a).triplets().collect::<Vec<_>>()).collect();
                SparseMatrix::from_triplets(self.dim(), entries)
            }
            Representation::Dicke => {
                let mut entries = Vec::new();
                for k1 in 0..=n {
                    for k2 in 0..=n {
                        let from = k1 * (n + 1) + k2;
                        let k = if ensemble == 0 { k1 } else { k2 };
                        if k == 0 {
                            continue;
                        }
                        let to = if ensemble == 0 { from - (n + 1) } else { from - 1 };
                        entries.push((to, from, C64::new(((k * (n - k + 1)) as f64).sqrt(), 0.0)));
                    }
                }
                SparseMatrix::from_triplets(self.dim(), entries)
            }
        }
    }

    /// Number of |down> atoms in one ensemble, per basis state.
    fn down_count(&self, ensemble: usize) -> Vec<f64> {
        let n = self.n_atoms;
        (0..self.dim())
            .map(|x| match self.representation {
                Representation::Microscopic => self.atoms(ensemble).filter(|&a| x & self.micro_bit(a) != 0).count() as f64,
                Representation::Dicke => (if ensemble == 0 { x / (n + 1) } else { x % (n + 1) }) as f64,
            })
            .collect()
    }

    /// Index of the product state with ensemble I all up, II all down.
    fn css_index(&self) -> usize {
        match self.representation {
            Representation::Microscopic => (1 << self.n_atoms) - 1,
            Representation::Dicke => self.n_atoms,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JumpOperators {
    pub a: SparseMatrix,
    pub b: SparseMatrix,
}

/// A = (mu S+_I - nu S+_II)/sqrt N, B = (mu S-_II - nu S-_I)/sqrt N.
pub fn build_jump_ops(system: &LindbladSystem) -> Result<JumpOperators> {
    system.validate()?;
    let basis = system.basis();
    let norm = 1.0 / (system.n_atoms as f64).sqrt();
    let (mu, nu) = (C64::new(system.squeeze.mu() * norm, 0.0), C64::new(-system.squeeze.nu() * norm, 0.0));
    let (s1, s2) = (basis.s_plus(0), basis.s_plus(1));
    Ok(JumpOperators { a: s1.combine(mu, &s2, nu), b: s2.adjoint().combine(mu, &s1.adjoint(), nu) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    representation: Representation,
    n_atoms: usize,
    matrix: DMatrix<C64>,
}

impl DensityOperator {
    pub fn new(system: &LindbladSystem, matrix: DMatrix<C64>) -> Result<Self> {
        system.validate()?;
        let rho = Self { representation: system.representation, n_atoms: system.n_atoms, matrix };
        rho.check_shape(system)?;
        rho.validate()?;
        Ok(rho)
    }

    pub fn pure(system: &LindbladSystem, psi: &DVector<C64>) -> Result<Self> {
        let norm = psi.norm();
        if !(norm > 0.0) {
            bail!(InvalidState, "state vector has zero norm");
        }
        let v = psi / C64::new(norm, 0.0);
        Self::new(system, &v * v.adjoint())
    }

    /// Ensemble I fully in |up>, ensemble II fully in |down>.
    pub fn pumped_css(system: &LindbladSystem) -> Result<Self> {
        system.validate()?;
        let mut psi = DVector::zeros(system.dim());
        psi[system.basis().css_index()] = C64::new(1.0, 0.0);
        Self::pure(system, &psi)
    }

    pub fn maximally_mixed(system: &LindbladSystem) -> Result<Self> {
        system.validate()?;
        let n = system.dim();
        Self::new(system, DMatrix::identity(n, n) * C64::new(1.0 / n as f64, 0.0))
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn basis(&self) -> Basis {
        Basis { representation: self.representation, n_atoms: self.n_atoms }
    }

    fn check_shape(&self, system: &LindbladSystem) -> Result<()> {
        if self.representation != system.representation || self.n_atoms != system.n_atoms {
            bail!(InvalidArgument, "density operator basis does not match the system");
        }
        let d = system.dim();
        if self.matrix.nrows() != d || self.matrix.ncols() != d {
            bail!(InvalidArgument, "density matrix is {}x{}, system dimension is {d}", self.matrix.nrows(), self.matrix.ncols());
        }
        Ok(())
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn max_anti_hermitian(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().fold(0.0, |m, v| m.max(v.modulus()))
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = (&self.matrix + self.matrix.adjoint()) * C64::new(0.5, 0.0);
        SymmetricEigen::new(h).eigenvalues.iter().copied().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let herm = self.max_anti_hermitian();
        if herm > HERMITICITY_TOL {
            bail!(InvalidState, "density matrix not Hermitian (deviation {herm:e})");
        }
        let tr = self.trace();
        if (tr - C64::new(1.0, 0.0)).modulus() > TRACE_TOL {
            bail!(InvalidState, "density matrix trace is {tr}, expected 1");
        }
        let min = self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min < POSITIVITY_TOL {
            bail!(InvalidState, "density matrix has eigenvalue {min:e}");
        }
        Ok(())
    }

    pub fn expectation(&self, op: &SparseMatrix) -> C64 {
        op.trace_product(&self.matrix)
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// <psi| rho |psi> for a normalised vector.
    pub fn fidelity_with_pure(&self, psi: &DVector<C64>) -> f64 {
        let v = psi / C64::new(psi.norm(), 0.0);
        (v.adjoint() * &self.matrix * &v)[(0, 0)].re
    }

    /// Half the trace norm of the difference.
    pub fn trace_distance(&self, other: &Self) -> Result<f64> {
        if self.dim() != other.dim() || self.representation != other.representation {
            bail!(InvalidArgument, "trace distance between operators on different bases");
        }
        let diff = &self.matrix - &other.matrix;
        let h = (&diff + diff.adjoint()) * C64::new(0.5, 0.0);
        Ok(0.5 * SymmetricEigen::new(h).eigenvalues.iter().map(|e| e.abs()).sum::<f64>())
    }
}

/// Spin observables of both ensembles in a given basis.
struct SpinObservables {
    s_plus: [SparseMatrix; 2],
    jx: [SparseMatrix; 2],
}

impl SpinObservables {
    fn new(basis: Basis) -> Self {
        let half = basis.n_atoms as f64 / 2.0;
        let jx = |e| SparseMatrix::diagonal(&basis.down_count(e).iter().map(|k| half - k).collect::<Vec<_>>());
        Self { s_plus: [basis.s_plus(0), basis.s_plus(1)], jx: [jx(0), jx(1)] }
    }
}

fn variance(rho: &DensityOperator, op: &SparseMatrix) -> f64 {
    let mean = rho.expectation(op).re;
    let op_rho = op.mul_dense(&rho.matrix);
    op.trace_product(&op_rho).re - mean * mean
}

/// xi = Sigma_J / (2 Jbar) with Sigma_J = var(J_y,I - J_y,II) + var(J_z,I - J_z,II)
/// and Jbar the mean magnitude of the two longitudinal spins.
pub fn witness_xi(rho: &DensityOperator) -> Result<f64> {
    let basis = rho.basis();
    let obs = SpinObservables::new(basis);
    let half = C64::new(0.5, 0.0);
    let half_i = C64::new(0.0, -0.5);
    let jy = |e: usize| obs.s_plus[e].combine(half, &obs.s_plus[e].adjoint(), half);
    let jz = |e: usize| obs.s_plus[e].combine(half_i, &obs.s_plus[e].adjoint(), -half_i);
    let one = C64::new(1.0, 0.0);
    let dy = jy(0).combine(one, &jy(1), -one);
    let dz = jz(0).combine(one, &jz(1), -one);
    let mean_spin = 0.5 * (rho.expectation(&obs.jx[0]).re.abs() + rho.expectation(&obs.jx[1]).re.abs());
    if mean_spin <= 1e-12 * basis.n_atoms as f64 {
        return Err(Error::UndefinedWitness { mean_spin });
    }
    Ok((variance(rho, &dy) + variance(rho, &dz)) / (2.0 * mean_spin))
}

/// Generator in the form  rho -> sum_k r_k L_k rho L_k^+ - (K rho + rho K),
/// with K = 1/2 sum_k r_k L_k^+ L_k.
#[derive(Debug, Clone)]
pub struct MasterEquation {
    system: LindbladSystem,
    jumps: Vec<(f64, SparseMatrix)>,
    damping: SparseMatrix,
    /// Largest total jump rate, used to pick initial steps.
    scale: f64,
}

impl MasterEquation {
    /// `include_noise` adds the cooling, heating and dephasing terms:
    /// exact single-atom operators in the microscopic basis, collective
    /// counterparts in the Dicke basis.
    pub fn new(system: &LindbladSystem, include_noise: bool) -> Result<Self> {
        let ops = build_jump_ops(system)?;
        let basis = system.basis();
        let r = system.rates;
        let mut jumps = vec![(r.d * r.gamma, ops.a), (r.d * r.gamma, ops.b)];
        if include_noise {
            match system.representation {
                Representation::Microscopic => {
                    for atom in basis.atoms(0) {
                        let s = basis.sigma(atom);
                        jumps.push((r.gamma_heat, s.adjoint()));
                        jumps.push((r.gamma_cool, s));
                        jumps.push((r.gamma_deph, basis.down_projector(atom)));
                    }
                    for atom in basis.atoms(1) {
                        let s = basis.sigma(atom);
                        jumps.push((r.gamma_cool, s.adjoint()));
                        jumps.push((r.gamma_heat, s));
                        jumps.push((r.gamma_deph, basis.down_projector(atom)));
                    }
                }
                Representation::Dicke => {
                    let norm = C64::new(1.0 / (system.n_atoms as f64).sqrt(), 0.0);
                    let (s1, s2) = (basis.s_plus(0).scaled(norm), basis.s_plus(1).scaled(norm));
                    jumps.push((r.gamma_cool, s1.clone()));
                    jumps.push((r.gamma_heat, s1.adjoint()));
                    jumps.push((r.gamma_cool, s2.adjoint()));
                    jumps.push((r.gamma_heat, s2));
                    for e in 0..2 {
                        jumps.push((r.gamma_deph, SparseMatrix::diagonal(&basis.down_count(e))));
                    }
                }
            }
        }
        jumps.retain(|(rate, op)| *rate > 0.0 && op.nnz() > 0);
        let dim = system.dim();
        let mut damping = SparseMatrix::zeros(dim);
        let mut scale: f64 = 0.0;
        for (rate, op) in &jumps {
            let k = op.adjoint().matmul(op);
            scale = scale.max(rate * k.triplets().fold(0.0_f64, |m, t| m.max(t.2.modulus())));
            damping = damping.combine(C64::new(1.0, 0.0), &k, C64::new(0.5 * rate, 0.0));
        }
        Ok(Self { system: *system, jumps, damping, scale })
    }

    pub fn system(&self) -> &LindbladSystem {
        &self.system
    }

    pub fn jumps(&self) -> &[(f64, SparseMatrix)] {
        &self.jumps
    }

    /// d rho / dt.
    pub fn apply(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let n = rho.nrows();
        let mut out = DMatrix::zeros(n, n);
        let mut tmp = DMatrix::zeros(n, n);
        let mut tmp2 = DMatrix::zeros(n, n);
        self.apply_into(rho, &mut out, &mut tmp, &mut tmp2);
        out
    }

    fn apply_into(&self, rho: &DMatrix<C64>, out: &mut DMatrix<C64>, tmp: &mut DMatrix<C64>, tmp2: &mut DMatrix<C64>) {
        self.damping.mul_dense_into(rho, out);
        self.damping.dense_mul_adjoint_into(rho, tmp);
        out.zip_apply(tmp, |o, t| *o = -(*o + t));
        for (rate, op) in &self.jumps {
            op.dense_mul_adjoint_into(rho, tmp);
            op.mul_dense_into(tmp, tmp2);
            out.zip_apply(tmp2, |o, t| *o += t * *rate);
        }
    }

    /// Dense column-stacked superoperator.
    pub fn liouvillian(&self) -> DMatrix<C64> {
        let n = self.system.dim();
        let eye = DMatrix::<C64>::identity(n, n);
        let k = self.damping.to_dense();
        let mut l = -(eye.kronecker(&k) + k.transpose().kronecker(&eye));
        for (rate, op) in &self.jumps {
            let d = op.to_dense();
            l += d.map(|v| v.conj()).kronecker(&d) * C64::new(*rate, 0.0);
        }
        l
    }

    fn rk4(&self, rho: &DMatrix<C64>, h: f64) -> DMatrix<C64> {
        self.rk4_from(rho, &self.apply(rho), h)
    }

    fn rk4_from(&self, rho: &DMatrix<C64>, k1: &DMatrix<C64>, h: f64) -> DMatrix<C64> {
        let c = |x: f64| C64::new(x, 0.0);
        let k2 = self.apply(&(rho + k1 * c(0.5 * h)));
        let k3 = self.apply(&(rho + &k2 * c(0.5 * h)));
        let k4 = self.apply(&(rho + &k3 * c(h)));
        rho + (k1 + (k2 + k3) * c(2.0) + k4) * c(h / 6.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegratorOptions {
    /// Allowed entrywise-L1 change between one full and two half steps.
    pub step_tol: f64,
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self { step_tol: 1e-12, max_steps: 10_000_000 }
    }
}

fn l1(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|v| v.modulus()).sum()
}

fn hermitize(m: &mut DMatrix<C64>) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)].im = 0.0;
        for j in 0..i {
            let v = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = v;
            m[(j, i)] = v.conj();
        }
    }
}

/// RK4 with step doubling and local extrapolation.
struct Propagator<'a> {
    eq: &'a MasterEquation,
    opts: IntegratorOptions,
    h: f64,
    steps: usize,
}

impl<'a> Propagator<'a> {
    fn new(eq: &'a MasterEquation, opts: IntegratorOptions) -> Self {
        let h = if eq.scale > 0.0 { 0.05 / eq.scale } else { 1.0 };
        Self { eq, opts, h, steps: 0 }
    }

    fn advance(&mut self, rho: &mut DMatrix<C64>, span: f64) -> Result<()> {
        if self.eq.jumps.is_empty() {
            return Ok(());
        }
        let mut t = 0.0;
        while t < span {
            if self.steps >= self.opts.max_steps {
                bail!(Numerical, "master-equation integration exceeded {} steps", self.opts.max_steps);
            }
            let last = self.h >= span - t;
            let h = if last { span - t } else { self.h };
            let k1 = self.eq.apply(rho);
            let full = self.eq.rk4_from(rho, &k1, h);
            let mid = self.eq.rk4_from(rho, &k1, 0.5 * h);
            let fine = self.eq.rk4(&mid, 0.5 * h);
            let diff = &fine - &full;
            let err = l1(&diff) / 15.0;
            self.steps += 1;
            if err <= self.opts.step_tol || h < 1e-14 * span.max(1.0) {
                *rho = fine + diff * C64::new(1.0 / 15.0, 0.0);
                hermitize(rho);
                t = if last { span } else { t + h };
                let grow = if err > 0.0 { 0.9 * (self.opts.step_tol / err).powf(0.2) } else { 4.0 };
                if !last || grow < 1.0 {
                    self.h = h * grow.clamp(0.2, 4.0);
                }
            } else {
                self.h = h * (0.9 * (self.opts.step_tol / err).powf(0.2)).max(0.1);
            }
            if !self.h.is_finite() || self.h <= 0.0 {
                bail!(Numerical, "step size collapsed during master-equation integration");
            }
        }
        Ok(())
    }
}

fn check_initial(system: &LindbladSystem, rho0: &DensityOperator) -> Result<()> {
    system.validate()?;
    rho0.check_shape(system)?;
    rho0.validate()
}

/// rho(t) under the entangling dissipator plus (optionally) the noise terms.
pub fn integrate_master(system: &LindbladSystem, rho0: &DensityOperator, t: f64, include_single_particle: bool) -> Result<DensityOperator> {
    let mut last = None;
    integrate_observed(system, rho0, &[t], include_single_particle, IntegratorOptions::default(), |_, rho| {
        last = Some(rho.clone());
        Ok(())
    })?;
    Ok(last.expect("one sample requested"))
}

/// Integrate through the increasing `times`, handing each sample to `observe`.
pub fn integrate_observed<F>(
    system: &LindbladSystem,
    rho0: &DensityOperator,
    times: &[f64],
    include_single_particle: bool,
    opts: IntegratorOptions,
    mut observe: F,
) -> Result<()>
where
    F: FnMut(f64, &DensityOperator) -> Result<()>,
{
    check_initial(system, rho0)?;
    if times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) || times.windows(2).any(|w| w[1] < w[0]) {
        bail!(InvalidArgument, "sample times must be finite, >= 0 and non-decreasing");
    }
    let eq = MasterEquation::new(system, include_single_particle)?;
    let mut prop = Propagator::new(&eq, opts);
    let mut rho = rho0.clone();
    let mut now = 0.0;
    for &t in times {
        prop.advance(&mut rho.matrix, t - now)?;
        now = t;
        observe(t, &rho)?;
    }
    Ok(())
}

/// xi(t) on the given times; convenience over [`integrate_observed`].
pub fn witness_trajectory(system: &LindbladSystem, rho0: &DensityOperator, times: &[f64], include_single_particle: bool) -> Result<Vec<f64>> {
    let mut xi = Vec::with_capacity(times.len());
    integrate_observed(system, rho0, times, include_single_particle, IntegratorOptions::default(), |_, rho| {
        xi.push(witness_xi(rho)?);
        Ok(())
    })?;
    Ok(xi)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyStateOptions {
    /// Stop when the entrywise L1 norm of d rho/dt falls below this.
    pub residual_tol: f64,
    /// Give up after this much integrated time, in units of the inverse
    /// largest rate.
    pub max_time: f64,
    pub include_single_particle: bool,
    /// Trace distance from the null-space solution that is still accepted.
    pub cross_check_tol: f64,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self { residual_tol: 1e-10, max_time: 1e6, include_single_particle: true, cross_check_tol: 1e-7 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SteadyState {
    pub rho: DensityOperator,
    /// Entrywise L1 norm of d rho/dt at the returned state.
    pub residual: f64,
    pub time: f64,
    /// Trace distance to the null-space solution, when computed.
    pub null_space_distance: Option<f64>,
}

fn relax(eq: &MasterEquation, rho: &mut DensityOperator, opts: &SteadyStateOptions) -> Result<(f64, f64)> {
    // only the end point matters, so the path may be coarse
    let mut prop = Propagator::new(eq, IntegratorOptions { step_tol: 1e-8, ..IntegratorOptions::default() });
    let slowest = eq.jumps.iter().map(|j| j.0).fold(f64::INFINITY, f64::min);
    let chunk = if slowest.is_finite() { 0.5 / slowest } else { 1.0 };
    let horizon = opts.max_time / eq.scale.max(1e-300);
    let mut t = 0.0;
    loop {
        let residual = l1(&eq.apply(&rho.matrix));
        if residual < opts.residual_tol {
            return Ok((t, residual));
        }
        if t > horizon {
            bail!(Numerical, "no stationary state reached by t = {t} (residual {residual:e})");
        }
        prop.advance(&mut rho.matrix, chunk)?;
        t += chunk;
    }
}

/// Null space of the vectorized generator, as density operators.
pub fn stationary_null_space(eq: &MasterEquation) -> Result<Vec<DensityOperator>> {
    let n = eq.system.dim();
    if n * n > MAX_NULL_SPACE_DIM {
        bail!(Capacity, "null-space solve limited to generator dimension {MAX_NULL_SPACE_DIM}, got {}", n * n);
    }
    let svd = eq.liouvillian().svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("SVD did not return right singular vectors".into()))?;
    let smax = svd.singular_values.max();
    let mut out = Vec::new();
    for (i, s) in svd.singular_values.iter().enumerate() {
        if *s <= 1e-9 * smax.max(1e-300) {
            let v: Vec<C64> = v_t.row(i).iter().map(|c| c.conj()).collect();
            let mut m = DMatrix::from_column_slice(n, n, &v);
            let tr = m.trace();
            if tr.modulus() < 1e-12 {
                out.push(DensityOperator { representation: eq.system.representation, n_atoms: eq.system.n_atoms, matrix: m });
                continue;
            }
            m /= tr;
            hermitize(&mut m);
            out.push(DensityOperator { representation: eq.system.representation, n_atoms: eq.system.n_atoms, matrix: m });
        }
    }
    Ok(out)
}

pub fn steady_state(system: &LindbladSystem) -> Result<DensityOperator> {
    steady_state_with(system, SteadyStateOptions::default()).map(|s| s.rho)
}

/// Long-time integration from the pumped coherent spin state. Uniqueness is
/// checked through the generator null space when small enough, otherwise by
/// also relaxing the maximally mixed state and comparing.
pub fn steady_state_with(system: &LindbladSystem, opts: SteadyStateOptions) -> Result<SteadyState> {
    system.validate()?;
    let eq = MasterEquation::new(system, opts.include_single_particle)?;
    if eq.jumps.is_empty() {
        return Err(Error::Degeneracy { dimension: system.dim() * system.dim() });
    }
    let small = system.dim() * system.dim() <= MAX_NULL_SPACE_DIM;
    let null = if small {
        let null = stationary_null_space(&eq)?;
        if null.len() != 1 {
            return Err(Error::Degeneracy { dimension: null.len() });
        }
        null.into_iter().next()
    } else {
        None
    };
    let mut rho = DensityOperator::pumped_css(system)?;
    let (time, residual) = relax(&eq, &mut rho, &opts)?;
    let null_space_distance = match &null {
        Some(reference) => {
            let d = rho.trace_distance(reference)?;
            if d > opts.cross_check_tol {
                bail!(Numerical, "integrated and null-space stationary states differ by {d:e}");
            }
            Some(d)
        }
        None => {
            let mut other = DensityOperator::maximally_mixed(system)?;
            relax(&eq, &mut other, &opts)?;
            if rho.trace_distance(&other)? > 1e-6 {
                return Err(Error::Degeneracy { dimension: 2 });
            }
            None
        }
    };
    rho.validate()?;
    Ok(SteadyState { rho, residual, time, null_space_distance })
}
