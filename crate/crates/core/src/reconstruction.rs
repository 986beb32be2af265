//! Measurement pipeline: temporal mode functions, synthetic homodyne
//! records, shot-noise referenced variance reconstruction, coupling
//! calibration and conditional-variance estimation.
//!
//! Records hold rotating-frame (demodulated) sample densities `y / sqrt(dt)`
//! for the cos and sin channels, so vacuum samples have variance
//! `1 / (2 dt)` and a mode projection `sum_k w_k y_k dt` with
//! `sum_k w_k^2 dt = 1` has vacuum variance 1/2.

use alloc::vec::Vec;

use nalgebra::{Matrix2, Matrix4, SMatrix, Vector2, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{self, DynamicsParams, SectorMap};
use crate::error::{bail, Error, Result};
use crate::gaussian::{GaussianState, Mode, Quadrature, SqueezeParams, VACUUM_VARIANCE};

/// Shot noise of a coherent light quadrature.
pub const SHOT_NOISE: f64 = VACUUM_VARIANCE;
/// Upper bound on gamma_s * dt for record simulation.
pub const MAX_STEP_PRODUCT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeKind {
    Rising,
    Falling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Cos,
    Sin,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeFunction {
    pub kind: ModeKind,
    /// Exponential rate (1/ms); zero gives a flat mode.
    pub rate: f64,
    /// Duration (ms).
    pub duration: f64,
    pub phase: Phase,
}

impl ModeFunction {
    pub fn new(kind: ModeKind, rate: f64, duration: f64, phase: Phase) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            bail!(InvalidArgument, "mode rate must be finite and >= 0, got {rate}");
        }
        if !(duration > 0.0 && duration.is_finite()) {
            bail!(InvalidArgument, "mode duration must be > 0, got {duration}");
        }
        Ok(Self { kind, rate, duration, phase })
    }

    pub fn rising(rate: f64, duration: f64, phase: Phase) -> Result<Self> {
        Self::new(ModeKind::Rising, rate, duration, phase)
    }

    pub fn falling(rate: f64, duration: f64, phase: Phase) -> Result<Self> {
        Self::new(ModeKind::Falling, rate, duration, phase)
    }

    fn signed_rate(&self) -> f64 {
        match self.kind {
            ModeKind::Rising => self.rate,
            ModeKind::Falling => -self.rate,
        }
    }

    /// Lab-frame normalisation: weights N e^{+-rate t} cos/sin(Omega t).
    pub fn normalization(&self) -> f64 {
        let (g, t) = (self.rate, self.duration);
        if g * t < 1e-8 {
            return (2.0 / t).sqrt();
        }
        match self.kind {
            ModeKind::Rising => 2.0 * g.sqrt() / (2.0 * g * t).exp_m1().sqrt(),
            ModeKind::Falling => 2.0 * g.sqrt() / (-(-2.0 * g * t).exp_m1()).sqrt(),
        }
    }

    /// Continuous rotating-frame envelope at time `t`.
    pub fn envelope(&self, t: f64) -> f64 {
        self.normalization() * core::f64::consts::FRAC_1_SQRT_2 * (self.signed_rate() * t).exp()
    }

    /// Lab-frame weight at time `t` for Larmor frequency `omega`.
    pub fn lab_weight(&self, t: f64, omega: f64) -> f64 {
        let carrier = match self.phase {
            Phase::Cos => (omega * t).cos(),
            Phase::Sin => (omega * t).sin(),
        };
        self.normalization() * (self.signed_rate() * t).exp() * carrier
    }

    /// Envelope sampled at bin midpoints and rescaled so sum w^2 dt = 1.
    pub fn discrete_weights(&self, dt: f64, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|k| (self.signed_rate() * (k as f64 + 0.5) * dt).exp()).collect();
        let norm = (raw.iter().map(|w| w * w).sum::<f64>() * dt).sqrt();
        raw.into_iter().map(|w| w / norm).collect()
    }

    /// Exact overlap of the lab-frame cos and sin modes sharing this
    /// envelope; vanishes as rate/omega -> 0.
    pub fn cos_sin_overlap(&self, omega: f64) -> f64 {
        // N^2 * int_0^T e^{2 s t} cos sin dt, s the signed rate
        let s = self.signed_rate();
        let t = self.duration;
        let w = 2.0 * omega;
        let e = (2.0 * s * t).exp();
        let integral = 0.5 * (e * (2.0 * s * (w * t).sin() - w * (w * t).cos()) + w) / (4.0 * s * s + w * w);
        self.normalization().powi(2) * integral
    }
}

/// Demodulated homodyne record of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct HomodyneRecord {
    pub trajectory_id: u64,
    pub seed: u64,
    /// Sample interval (ms).
    pub dt: f64,
    /// Start time of the first sample (ms).
    pub t0: f64,
    pub y_c: Vec<f64>,
    pub y_s: Vec<f64>,
    pub params: DynamicsParams,
}

impl HomodyneRecord {
    pub fn len(&self) -> usize {
        self.y_c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_c.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 * self.dt
    }

    /// Samples `[start, end)` as a record of their own.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.len() {
            bail!(InvalidArgument, "slice {start}..{end} outside a record of {} samples", self.len());
        }
        Ok(Self {
            trajectory_id: self.trajectory_id,
            seed: self.seed,
            dt: self.dt,
            t0: self.t0 + start as f64 * self.dt,
            y_c: self.y_c[start..end].to_vec(),
            y_s: self.y_s[start..end].to_vec(),
            params: self.params,
        })
    }

    pub fn channel(&self, phase: Phase) -> &[f64] {
        match phase {
            Phase::Cos => &self.y_c,
            Phase::Sin => &self.y_s,
        }
    }
}

/// Weighted projection of the record channel selected by the mode phase.
pub fn project_record(record: &HomodyneRecord, mode: &ModeFunction) -> Result<f64> {
    project_samples(record.channel(mode.phase), record.dt, mode)
}

pub fn project_samples(samples: &[f64], dt: f64, mode: &ModeFunction) -> Result<f64> {
    let span = samples.len() as f64 * dt;
    if (span - mode.duration).abs() > 0.5 * dt {
        bail!(InvalidArgument, "record spans {span} ms but the mode lasts {} ms", mode.duration);
    }
    let w = mode.discrete_weights(dt, samples.len());
    Ok(w.iter().zip(samples).map(|(w, y)| w * y).sum::<f64>() * dt)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReconstructionInput {
    /// Measured variance of the outgoing falling-mode y quadrature.
    pub var_y_out: f64,
    pub kappa: f64,
    pub sigma_in2: f64,
    /// Transverse coherence time T2 = 1/gamma (ms); ignored without decay.
    pub t2: f64,
    pub eta: f64,
    pub z: f64,
    /// Read-out pulse duration T (ms).
    pub duration: f64,
}

/// Coefficients of the read-out model for a given input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutWeights {
    pub kappa2: f64,
    /// Weight of the input shot noise.
    pub u2: f64,
    /// Weight of the decay noise.
    pub v2: f64,
}

fn readout_weights(input: &ReconstructionInput, with_decay: bool) -> Result<ReadoutWeights> {
    let kappa2 = input.kappa * input.kappa;
    if !(kappa2 >= 1e-12) {
        return Err(Error::IllConditionedReconstruction { kappa2 });
    }
    if !(input.z > 0.0) {
        bail!(InvalidArgument, "Z must be positive, got {}", input.z);
    }
    let z2 = input.z * input.z;
    if !with_decay {
        if kappa2 > z2 * (1.0 + 1e-12) {
            bail!(InvalidArgument, "kappa^2 = {kappa2} exceeds Z^2 = {z2}");
        }
        return Ok(ReadoutWeights { kappa2, u2: (1.0 - kappa2 / z2).max(0.0), v2: 0.0 });
    }
    if !(input.t2 > 0.0 && input.duration > 0.0) {
        bail!(InvalidArgument, "T2 and the pulse duration must be positive");
    }
    let gamma = 1.0 / input.t2;
    let decay = -(-2.0 * gamma * input.duration).exp_m1();
    let eps2 = 1.0 - kappa2 / (z2 * decay);
    if !(-1e-12..=1.0).contains(&eps2) {
        bail!(InvalidArgument, "kappa = {} inconsistent with Z, T2 and T (eps^2 = {eps2})", input.kappa);
    }
    let eps2 = eps2.max(0.0);
    let params = DynamicsParams::new(gamma * (1.0 - eps2), gamma * eps2, SqueezeParams::from_z(input.z)?)?;
    let map = SectorMap::for_pulse(&params, input.duration)?;
    Ok(ReadoutWeights { kappa2, u2: map.light_weight, v2: map.decay_weight })
}

/// Undo detection loss modelled as a beam splitter with vacuum input.
pub fn undo_detection_loss(var_detected: f64, eta: f64, sigma_in2: f64) -> Result<f64> {
    if !(eta > 0.0 && eta <= 1.0) {
        bail!(InvalidArgument, "detection efficiency must lie in (0, 1], got {eta}");
    }
    Ok((var_detected - (1.0 - eta) * sigma_in2) / eta)
}

/// Atomic input variance from the outgoing light variance.
pub fn reconstruct_variance(input: &ReconstructionInput, with_decay: bool) -> Result<f64> {
    if !(input.var_y_out >= 0.0) {
        bail!(InvalidArgument, "variance must be >= 0, got {}", input.var_y_out);
    }
    let w = readout_weights(input, with_decay)?;
    let var = undo_detection_loss(input.var_y_out, input.eta, input.sigma_in2)?;
    Ok((var - w.u2 * input.sigma_in2 - w.v2 * VACUUM_VARIANCE) / w.kappa2)
}

/// Forward model matching [`reconstruct_variance`], for round trips.
pub fn forward_variance(var_p: f64, input: &ReconstructionInput, with_decay: bool) -> Result<f64> {
    let w = readout_weights(input, with_decay)?;
    let var = w.kappa2 * var_p + w.u2 * input.sigma_in2 + w.v2 * VACUUM_VARIANCE;
    Ok(input.eta * var + (1.0 - input.eta) * input.sigma_in2)
}

/// kappa^2 = <y second pulse> / <q first pulse>.
pub fn calibrate_kappa(q_first_mean: f64, y_second_mean: f64) -> Result<f64> {
    if !(q_first_mean.abs() > 1e-9) {
        return Err(Error::CalibrationUndefined { displacement: q_first_mean });
    }
    Ok(y_second_mean / q_first_mean)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRun {
    pub q_first_mean: f64,
    pub y_second_mean: f64,
    pub kappa2: f64,
    /// Gaussian state after the second pulse.
    pub final_state: GaussianState,
}

fn rotate_x_into_p(state: &GaussianState) -> Result<GaussianState> {
    let dim = 2 * state.n_modes();
    let mut s = nalgebra::DMatrix::identity(dim, dim);
    for mode in [Mode::AtomC, Mode::AtomS] {
        let i = state.index(mode, Quadrature::X)?;
        s[(i, i)] = 0.0;
        s[(i + 1, i + 1)] = 0.0;
        s[(i, i + 1)] = -1.0;
        s[(i + 1, i)] = 1.0;
    }
    state.apply_affine_channel(&s, &nalgebra::DMatrix::zeros(dim, dim), &nalgebra::DVector::zeros(dim))
}

fn fresh_light(state: &GaussianState) -> Result<GaussianState> {
    state.marginal(&[Mode::AtomC, Mode::AtomS])?.with_vacuum_mode(Mode::LightC)?.with_vacuum_mode(Mode::LightS)
}

/// Two-pulse protocol on mean values: a pulse displaced by `q0` in q,
/// a pi/2 rotation X -> P, and a fresh read-out pulse.
pub fn simulate_calibration(params: &DynamicsParams, q0: f64) -> Result<CalibrationRun> {
    let start = GaussianState::vacuum_on(&[Mode::AtomC, Mode::AtomS, Mode::LightC, Mode::LightS])?
        .displaced(Mode::LightC, Quadrature::P, q0)?
        .displaced(Mode::LightS, Quadrature::P, q0)?;
    let q_first_mean = start.mean(Mode::LightC, Quadrature::P)?;
    let first = dynamics::step_io_noisy(params, &start)?;
    let rotated = rotate_x_into_p(&fresh_light(&first)?)?;
    let second = dynamics::step_io_noisy(params, &rotated)?;
    let y_second_mean = second.mean(Mode::LightC, Quadrature::X)?;
    Ok(CalibrationRun { q_first_mean, y_second_mean, kappa2: calibrate_kappa(q_first_mean, y_second_mean)?, final_state: second })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticalEstimate {
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// The same protocol with `n` sampled shots of each measurement.
pub fn simulate_calibration_mc(params: &DynamicsParams, q0: f64, n: usize, seed: u64) -> Result<StatisticalEstimate> {
    if n < 2 {
        bail!(InvalidArgument, "need at least two shots");
    }
    let run = simulate_calibration(params, q0)?;
    let var_y = run.final_state.variance(Mode::LightC, Quadrature::X)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (mut sq, mut sy) = (MeanVar::default(), MeanVar::default());
    for _ in 0..n {
        sq.push(q0 + VACUUM_VARIANCE.sqrt() * normal(&mut rng));
        sy.push(run.y_second_mean + var_y.sqrt() * normal(&mut rng));
    }
    let (mq, my) = (sq.mean(), sy.mean());
    let kappa2 = calibrate_kappa(mq, my)?;
    let rel = (sq.var() / (n as f64 * mq * mq) + sy.var() / (n as f64 * my * my)).sqrt();
    Ok(StatisticalEstimate { value: kappa2, std_error: kappa2.abs() * rel, samples: n })
}

fn normal(rng: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Streaming mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeanVar {
    n: usize,
    mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn var(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the variance for Gaussian data.
    pub fn var_std_error(&self) -> f64 {
        self.var() * (2.0 / (self.n as f64 - 1.0)).sqrt()
    }

    pub fn merge(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.m2 += other.m2 + d * d * (self.n as f64) * (other.n as f64) / n as f64;
        self.mean += d * other.n as f64 / n as f64;
        self.n = n;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordConfig {
    pub n_steps: usize,
    pub n_traj: usize,
    pub seed: u64,
    /// Initial (X, P) covariance of each sector.
    pub initial: Matrix2<f64>,
    /// Extra white classical noise per sample, in units of shot noise.
    pub classical_noise: f64,
}

impl RecordConfig {
    pub fn new(n_steps: usize, n_traj: usize, seed: u64) -> Self {
        Self { n_steps, n_traj, seed, initial: Matrix2::identity() * VACUUM_VARIANCE, classical_noise: 0.0 }
    }
}

/// Final atomic quadratures of one trajectory together with the filter's
/// conditional means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEnd {
    /// (X_c, P_c, X_s, P_s).
    pub atoms: Vector4<f64>,
    /// Conditional means of the same quadratures given the record.
    pub filtered: Vector4<f64>,
}

/// One-step model of a sector and the deterministic filter built on it.
#[derive(Debug, Clone)]
struct StepModel {
    transfer: Matrix4<f64>,
    external: SMatrix<f64, 4, 6>,
    /// Per-step mean update m' = a m + k y.
    gains: Vec<(Matrix2<f64>, Vector2<f64>)>,
    /// Conditional (X, P) covariance after each step.
    covariances: Vec<Matrix2<f64>>,
    eta: f64,
    extra: f64,
}

impl StepModel {
    fn new(params: &DynamicsParams, dt: f64, cfg: &RecordConfig) -> Result<Self> {
        let map = SectorMap::for_pulse(params, dt)?;
        let (eta, extra) = (params.eta, cfg.classical_noise);
        let mut cov = cfg.initial;
        let mut gains = Vec::with_capacity(cfg.n_steps);
        let mut covariances = Vec::with_capacity(cfg.n_steps);
        let s = map.transfer;
        for _ in 0..cfg.n_steps {
            let mut full = Matrix4::identity() * VACUUM_VARIANCE;
            full.fixed_view_mut::<2, 2>(0, 0).copy_from(&cov);
            let joint = s * full * s.transpose() + map.noise;
            let c_ay = Vector2::new(joint[(0, 2)], joint[(1, 2)]) * eta.sqrt();
            let v_y = eta * joint[(2, 2)] + (1.0 - eta) * VACUUM_VARIANCE + extra * VACUUM_VARIANCE;
            let k = c_ay / v_y;
            let s_aa = s.fixed_view::<2, 2>(0, 0).into_owned();
            let s_ya = Vector2::new(s[(2, 0)], s[(2, 1)]);
            let a = s_aa - k * s_ya.transpose() * eta.sqrt();
            cov = joint.fixed_view::<2, 2>(0, 0).into_owned() - k * c_ay.transpose();
            cov = (cov + cov.transpose()) * 0.5;
            gains.push((a, k));
            covariances.push(cov);
        }
        Ok(Self { transfer: s, external: map.external, gains, covariances, eta, extra })
    }

    /// Advance (X, P) one step and return the detected y sample (not yet
    /// divided by sqrt(dt)).
    fn sample(&self, state: &mut Vector2<f64>, rng: &mut ChaCha20Rng) -> f64 {
        let h = VACUUM_VARIANCE.sqrt();
        let (y_in, q_in) = (h * normal(rng), h * normal(rng));
        let mut ext = [0.0; 6];
        for (j, e) in ext.iter_mut().enumerate() {
            if self.external.column(j).iter().any(|v| *v != 0.0) {
                *e = h * normal(rng);
            }
        }
        let v = Vector4::new(state[0], state[1], y_in, q_in);
        let mut out = self.transfer * v;
        for (j, e) in ext.iter().enumerate() {
            if *e != 0.0 {
                out += self.external.column(j) * *e;
            }
        }
        *state = Vector2::new(out[0], out[1]);
        let mut y = out[2];
        if self.eta < 1.0 {
            y = self.eta.sqrt() * y + (1.0 - self.eta).sqrt() * h * normal(rng);
        }
        if self.extra > 0.0 {
            y += self.extra.sqrt() * h * normal(rng);
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordSummary {
    pub n_traj: usize,
    pub dt: f64,
    /// Filter (conditional) variance of P after each step; identical for
    /// both sectors.
    pub filter_variance: Vec<f64>,
    /// Spread of P_c/s - filtered mean over trajectories.
    pub conditional: [MeanVar; 2],
    /// Spread of P_c/s over trajectories.
    pub unconditional: [MeanVar; 2],
}

fn check_record_config(params: &DynamicsParams, cfg: &RecordConfig) -> Result<f64> {
    params.validate()?;
    if cfg.n_steps == 0 {
        bail!(InvalidArgument, "records need at least one step");
    }
    let dt = params.pulse / cfg.n_steps as f64;
    let product = params.gamma_s * dt;
    if product >= MAX_STEP_PRODUCT {
        return Err(Error::StepTooCoarse { product });
    }
    if !(cfg.classical_noise >= 0.0) {
        bail!(InvalidArgument, "classical noise must be >= 0");
    }
    let det = cfg.initial.determinant();
    if cfg.initial[(0, 0)] <= 0.0 || det < 0.25 - 1e-12 || (cfg.initial[(0, 1)] - cfg.initial[(1, 0)]).abs() > 1e-12 {
        bail!(InvalidState, "initial sector covariance is not a physical state");
    }
    Ok(dt)
}

/// Generate records over the pulse duration `params.pulse`, handing each
/// trajectory to `visit` as soon as it is complete. Trajectory `i` uses
/// stream `i` of a ChaCha20 generator seeded with `cfg.seed`, so any subset
/// of trajectories can be regenerated independently.
pub fn simulate_records_with<F>(params: &DynamicsParams, cfg: &RecordConfig, trajectories: core::ops::Range<u64>, mut visit: F) -> Result<RecordSummary>
where
    F: FnMut(&HomodyneRecord, &TrajectoryEnd) -> Result<()>,
{
    let dt = check_record_config(params, cfg)?;
    let model = StepModel::new(params, dt, cfg)?;
    let chol = cfg.initial.cholesky().ok_or_else(|| Error::InvalidState("initial covariance not positive definite".into()))?.l();
    let scale = 1.0 / dt.sqrt();
    let mut conditional = [MeanVar::default(); 2];
    let mut unconditional = [MeanVar::default(); 2];
    let mut n_traj = 0;
    let mut record = HomodyneRecord {
        trajectory_id: 0,
        seed: cfg.seed,
        dt,
        t0: 0.0,
        y_c: Vec::with_capacity(cfg.n_steps),
        y_s: Vec::with_capacity(cfg.n_steps),
        params: *params,
    };
    for id in trajectories {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        rng.set_stream(id);
        record.trajectory_id = id;
        record.y_c.clear();
        record.y_s.clear();
        let mut atoms = [Vector2::zeros(); 2];
        let mut means = [Vector2::zeros(); 2];
        for a in atoms.iter_mut() {
            *a = chol * Vector2::new(normal(&mut rng), normal(&mut rng));
        }
        for step in 0..cfg.n_steps {
            let (a, k) = &model.gains[step];
            for sector in 0..2 {
                let y = model.sample(&mut atoms[sector], &mut rng);
                means[sector] = a * means[sector] + k * y;
                let channel = if sector == 0 { &mut record.y_c } else { &mut record.y_s };
                channel.push(y * scale);
            }
        }
        let end = TrajectoryEnd {
            atoms: Vector4::new(atoms[0][0], atoms[0][1], atoms[1][0], atoms[1][1]),
            filtered: Vector4::new(means[0][0], means[0][1], means[1][0], means[1][1]),
        };
        for sector in 0..2 {
            conditional[sector].push(atoms[sector][1] - means[sector][1]);
            unconditional[sector].push(atoms[sector][1]);
        }
        n_traj += 1;
        visit(&record, &end)?;
    }
    Ok(RecordSummary {
        n_traj,
        dt,
        filter_variance: model.covariances.iter().map(|c| c[(1, 1)]).collect(),
        conditional,
        unconditional,
    })
}

/// All trajectories `0..cfg.n_traj`, collected in memory.
pub fn simulate_records(params: &DynamicsParams, cfg: &RecordConfig) -> Result<(Vec<HomodyneRecord>, Vec<TrajectoryEnd>, RecordSummary)> {
    let mut records = Vec::with_capacity(cfg.n_traj);
    let mut ends = Vec::with_capacity(cfg.n_traj);
    let summary = simulate_records_with(params, cfg, 0..cfg.n_traj as u64, |r, e| {
        records.push(r.clone());
        ends.push(*e);
        Ok(())
    })?;
    Ok((records, ends, summary))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalEstimate {
    /// Closed-form optimal regression weight.
    pub alpha_star: f64,
    /// Best value on the supplied grid, if any.
    pub alpha_grid: Option<f64>,
    pub var_out: f64,
    pub var_probe: f64,
    pub covariance: f64,
    /// var(y_out - alpha* y_probe).
    pub var_conditional: f64,
    pub var_conditional_std_error: f64,
    pub samples: usize,
}

/// Minimise var(y_out - alpha y_probe) over `(y_probe, y_out)` pairs.
pub fn conditional_variance_estimate(pairs: &[(f64, f64)], alpha_grid: &[f64]) -> Result<ConditionalEstimate> {
    let n = pairs.len();
    if n < 3 {
        bail!(InvalidArgument, "need at least three record pairs, got {n}");
    }
    let nf = n as f64;
    let (mp, mo) = pairs.iter().fold((0.0, 0.0), |(a, b), (p, o)| (a + p / nf, b + o / nf));
    let (mut vp, mut vo, mut c) = (0.0, 0.0, 0.0);
    for (p, o) in pairs {
        vp += (p - mp) * (p - mp);
        vo += (o - mo) * (o - mo);
        c += (p - mp) * (o - mo);
    }
    let denom = nf - 1.0;
    let (vp, vo, c) = (vp / denom, vo / denom, c / denom);
    if !(vp > 1e-14) {
        return Err(Error::DegenerateMeasurement { variance: vp });
    }
    let residual = |alpha: f64| vo + alpha * alpha * vp - 2.0 * alpha * c;
    let alpha_star = c / vp;
    let alpha_grid = alpha_grid.iter().copied().filter(|a| a.is_finite()).min_by(|a, b| residual(*a).total_cmp(&residual(*b)));
    let var_conditional = residual(alpha_star);
    Ok(ConditionalEstimate {
        alpha_star,
        alpha_grid,
        var_out: vo,
        var_probe: vp,
        covariance: c,
        var_conditional,
        var_conditional_std_error: var_conditional * (2.0 / (nf - 2.0)).sqrt(),
        samples: n,
    })
}

/// Closed-loop rate of the stationary filter: the optimal probe mode rises
/// at this rate.
pub fn optimal_probe_rate(params: &DynamicsParams) -> Result<f64> {
    let v = dynamics::conditional_fixed_point(params)?;
    let z = params.squeeze.z();
    Ok(params.gamma_extra - params.gamma_s + 4.0 * params.gamma_s * z * z * v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalPipeline {
    /// Probe slice duration [0, t] (ms).
    pub probe_duration: f64,
    /// Read-out slice duration (ms).
    pub readout_duration: f64,
    /// Rate of the rising probe mode; `None` picks [`optimal_probe_rate`].
    pub probe_rate: Option<f64>,
    pub n_steps: usize,
    pub n_traj: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalPipelineResult {
    pub estimates: [ConditionalEstimate; 2],
    /// Reconstructed conditional var(P_c), var(P_s).
    pub var_p: [f64; 2],
    pub xi_cond: f64,
    pub xi_cond_std_error: f64,
    /// Same records without conditioning.
    pub xi_uncond: f64,
    pub probe_rate: f64,
    pub summary: RecordSummary,
}

/// Simulate records over probe + read-out slices, regress the falling-mode
/// read-out on the rising-mode probe, and reconstruct the conditional xi.
pub fn conditional_pipeline(params: &DynamicsParams, cfg: &ConditionalPipeline) -> Result<ConditionalPipelineResult> {
    let total = cfg.probe_duration + cfg.readout_duration;
    let sim_params = params.with_pulse(total)?;
    let rec_cfg = RecordConfig::new(cfg.n_steps, cfg.n_traj, cfg.seed);
    let dt = total / cfg.n_steps as f64;
    let split = (cfg.probe_duration / dt).round() as usize;
    if split == 0 || split >= cfg.n_steps || ((split as f64) * dt - cfg.probe_duration).abs() > 1e-9 * total {
        bail!(InvalidArgument, "probe/read-out split must fall on a sample boundary");
    }
    let probe_rate = match cfg.probe_rate {
        Some(r) => r,
        None => optimal_probe_rate(params)?,
    };
    let gamma = params.gamma_total();
    let mut pairs = [Vec::with_capacity(cfg.n_traj), Vec::with_capacity(cfg.n_traj)];
    let summary = simulate_records_with(&sim_params, &rec_cfg, 0..cfg.n_traj as u64, |r, _| {
        for (i, phase) in [Phase::Cos, Phase::Sin].into_iter().enumerate() {
            let probe = ModeFunction::rising(probe_rate, split as f64 * dt, phase)?;
            let out = ModeFunction::falling(gamma, (cfg.n_steps - split) as f64 * dt, phase)?;
            let ch = r.channel(phase);
            pairs[i].push((project_samples(&ch[..split], dt, &probe)?, project_samples(&ch[split..], dt, &out)?));
        }
        Ok(())
    })?;
    let readout = params.with_pulse(cfg.readout_duration)?;
    let kappa = dynamics::coupling_kappa(&readout)?.kappa;
    let mut estimates = [None, None];
    let mut var_p = [0.0; 2];
    let mut var_p_uncond = [0.0; 2];
    let mut se2 = 0.0;
    for i in 0..2 {
        let est = conditional_variance_estimate(&pairs[i], &[])?;
        let input = |v: f64| ReconstructionInput {
            var_y_out: v,
            kappa,
            sigma_in2: SHOT_NOISE,
            t2: 1.0 / gamma,
            eta: params.eta,
            z: params.squeeze.z(),
            duration: cfg.readout_duration,
        };
        var_p[i] = reconstruct_variance(&input(est.var_conditional), true)?;
        var_p_uncond[i] = reconstruct_variance(&input(est.var_out), true)?;
        let se = est.var_conditional_std_error / (kappa * kappa * params.eta);
        se2 += se * se;
        estimates[i] = Some(est);
    }
    Ok(ConditionalPipelineResult {
        estimates: [estimates[0].unwrap(), estimates[1].unwrap()],
        var_p,
        xi_cond: var_p[0] + var_p[1],
        xi_cond_std_error: se2.sqrt(),
        xi_uncond: var_p_uncond[0] + var_p_uncond[1],
        probe_rate,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(z: f64, gs: f64, ge: f64) -> DynamicsParams {
        DynamicsParams::new(gs, ge, SqueezeParams::from_z(z).unwrap()).unwrap()
    }

    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for k in 1..n {
            s += f(a + k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    }

    #[test]
    fn envelope_normalisation() {
        for kind in [ModeKind::Rising, ModeKind::Falling] {
            for (g, t) in [(1.0, 1.0), (5.0, 0.7), (0.0, 2.0), (30.0, 1.0)] {
                let m = ModeFunction::new(kind, g, t, Phase::Cos).unwrap();
                let norm = simpson(|s| m.envelope(s).powi(2), 0.0, t, 20_000);
                assert!((norm - 1.0).abs() < 1e-9, "{kind:?} g={g}: {norm}");
                let w = m.discrete_weights(t / 500.0, 500);
                assert!((w.iter().map(|x| x * x).sum::<f64>() * t / 500.0 - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cos_sin_modes_nearly_orthogonal() {
        let m = ModeFunction::falling(1.0, 1.0, Phase::Cos).unwrap();
        let omega = 300.0;
        let quad = simpson(|t| m.lab_weight(t, omega) * ModeFunction { phase: Phase::Sin, ..m }.lab_weight(t, omega), 0.0, 1.0, 400_000);
        assert!((quad - m.cos_sin_overlap(omega)).abs() < 1e-9);
        assert!(m.cos_sin_overlap(2.0 * core::f64::consts::PI * 322.0).abs() < 1e-3);
        assert!(m.cos_sin_overlap(1e7).abs() < 1e-6);
    }

    #[test]
    fn constant_record_projection() {
        let (t, n) = (2.0, 2000);
        let m = ModeFunction::falling(1e-6, t, Phase::Cos).unwrap();
        let y = alloc::vec![0.7; n];
        let p = project_samples(&y, t / n as f64, &m).unwrap();
        assert!((p - 0.7 * t.sqrt()).abs() < 1e-5);
        assert!(project_samples(&y, t / n as f64, &ModeFunction::falling(1.0, 3.0, Phase::Cos).unwrap()).is_err());
    }

    #[test]
    fn round_trip_without_decay() {
        let input = ReconstructionInput { var_y_out: 0.71, kappa: 0.5_f64.sqrt(), sigma_in2: 0.5, t2: 1.0, eta: 1.0, z: 2.5, duration: 1.0 };
        let fwd = forward_variance(0.5, &input, false).unwrap();
        assert!((fwd - 0.71).abs() < 1e-15);
        assert!((reconstruct_variance(&input, false).unwrap() - 0.5).abs() < 1e-14);
    }

    #[test]
    fn ill_conditioned_kappa() {
        let input = ReconstructionInput { var_y_out: 0.5, kappa: 1e-7, sigma_in2: 0.5, t2: 1.0, eta: 1.0, z: 2.5, duration: 1.0 };
        assert!(matches!(reconstruct_variance(&input, false), Err(Error::IllConditionedReconstruction { .. })));
    }

    #[test]
    fn decay_round_trip_against_forward_channel() {
        let p = params(2.5, 0.6, 0.4).with_pulse(1.0).unwrap().with_eta(0.84).unwrap();
        let atoms = GaussianState::vacuum_on(&[Mode::AtomC, Mode::AtomS, Mode::LightC, Mode::LightS]).unwrap();
        let squeezed = dynamics::step_io(&params(2.5, 1.0, 0.0).with_pulse(0.7).unwrap(), &atoms).unwrap();
        let input_state = fresh_light(&squeezed).unwrap();
        let truth = input_state.variance(Mode::AtomC, Quadrature::P).unwrap();
        let out = dynamics::step_io_noisy(&p, &input_state).unwrap();
        let detected = out.beam_splitter_loss(Mode::LightC, 0.84).unwrap();
        let kappa = dynamics::coupling_kappa(&p).unwrap().kappa;
        let input = ReconstructionInput {
            var_y_out: detected.variance(Mode::LightC, Quadrature::X).unwrap(),
            kappa,
            sigma_in2: SHOT_NOISE,
            t2: 1.0,
            eta: 0.84,
            z: 2.5,
            duration: 1.0,
        };
        assert!((reconstruct_variance(&input, true).unwrap() - truth).abs() < 1e-12);
    }

    #[test]
    fn calibration_ratio() {
        assert!((calibrate_kappa(1.0, 0.49).unwrap() - 0.49).abs() < 1e-15);
        assert!(matches!(calibrate_kappa(0.0, 0.3), Err(Error::CalibrationUndefined { .. })));
    }

    #[test]
    fn noiseless_calibration_recovers_kappa() {
        for ge in [0.0, 0.5] {
            let p = params(2.5, 1.0, ge).with_pulse(0.3).unwrap();
            let k2 = dynamics::coupling_kappa(&p).unwrap().kappa.powi(2);
            for q0 in [1.0, 7.5] {
                let run = simulate_calibration(&p, q0).unwrap();
                assert!((run.kappa2 - k2).abs() < 1e-12, "ge={ge} q0={q0}: {} vs {k2}", run.kappa2);
            }
        }
    }

    #[test]
    fn coarse_steps_rejected() {
        let p = params(2.5, 1.0, 0.0).with_pulse(1.0).unwrap();
        let r = simulate_records(&p, &RecordConfig::new(50, 2, 1));
        assert!(matches!(r, Err(Error::StepTooCoarse { .. })));
    }

    #[test]
    fn records_are_reproducible() {
        let p = params(2.5, 1.0, 1.0).with_pulse(0.5).unwrap();
        let cfg = RecordConfig::new(100, 3, 42);
        let (a, _, _) = simulate_records(&p, &cfg).unwrap();
        let (b, _, _) = simulate_records(&p, &cfg).unwrap();
        assert_eq!(a, b);
        let mut single = None;
        simulate_records_with(&p, &cfg, 2..3, |r, _| {
            single = Some(r.clone());
            Ok(())
        })
        .unwrap();
        assert_eq!(single.unwrap(), a[2]);
        assert!((a[0].duration() - 0.5).abs() < 1e-12);
        let s = a[0].slice(10, 30).unwrap();
        assert_eq!(s.len(), 20);
        assert!((s.t0 - 0.05).abs() < 1e-15);
    }

    #[test]
    fn filter_variance_follows_riccati() {
        let p = params(2.5, 1.0, 1.0).with_pulse(3.0).unwrap();
        let cfg = RecordConfig::new(3000, 1, 0);
        let (_, _, summary) = simulate_records(&p, &cfg).unwrap();
        let exact = dynamics::evolve_conditional(&p, 0.5, 3.0, 3).unwrap();
        let v = *summary.filter_variance.last().unwrap();
        assert!((v - exact.numeric[3]).abs() < 2e-3 * exact.numeric[3], "{v} vs {}", exact.numeric[3]);
    }

    #[test]
    fn alpha_grid_agrees_with_closed_form() {
        let pairs: Vec<(f64, f64)> = (0..200).map(|k| {
            let x = ((k * 37 % 101) as f64 - 50.0) / 20.0;
            let noise = ((k * 53 % 97) as f64 - 48.0) / 40.0;
            (x, 0.6 * x + noise)
        }).collect();
        let grid: Vec<f64> = (0..=200).map(|k| k as f64 * 0.01).collect();
        let est = conditional_variance_estimate(&pairs, &grid).unwrap();
        assert!((est.alpha_grid.unwrap() - est.alpha_star).abs() <= 0.005 + 1e-12);
        assert!(est.var_conditional <= est.var_out);
        let flat: Vec<(f64, f64)> = (0..10).map(|k| (1.0, k as f64)).collect();
        assert!(matches!(conditional_variance_estimate(&flat, &[]), Err(Error::DegenerateMeasurement { .. })));
    }

    #[test]
    fn optimal_rate_value() {
        let p = params(2.5, 1.0, 1.0);
        assert!((optimal_probe_rate(&p).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn welford_merge() {
        let mut a = MeanVar::default();
        let mut b = MeanVar::default();
        let mut all = MeanVar::default();
        for k in 0..50 {
            let x = (k as f64 * 0.37).sin();
            if k < 20 { a.push(x) } else { b.push(x) }
            all.push(x);
        }
        a.merge(&b);
        assert!((a.mean() - all.mean()).abs() < 1e-14 && (a.var() - all.var()).abs() < 1e-14);
    }
}
