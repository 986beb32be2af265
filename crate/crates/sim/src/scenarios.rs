//! The named scenarios. Each produces one or more numeric tables.

use std::collections::BTreeMap;

use epr_core::dynamics::{self, DynamicsParams};
use epr_core::gaussian::VACUUM_VARIANCE;
use epr_core::lindblad::{steady_state, witness_trajectory, witness_xi, DensityOperator, LindbladRates, LindbladSystem, Representation};
use epr_core::multilevel::{self, RateModelParams};
use epr_core::reconstruction::{
    project_record, reconstruct_variance, simulate_calibration, simulate_calibration_mc, simulate_records_with, MeanVar,
    ModeFunction, Phase, RecordConfig, ReconstructionInput, SHOT_NOISE,
};
use epr_core::{GaussianState, Mode, Quadrature, SqueezeParams};
use nalgebra::{DMatrix, DVector, Matrix2};
use rayon::prelude::*;

use crate::config::{Scenario, ScenarioConfig};
use crate::error::SimError;

/// A numeric table destined for one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem.
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.to_string(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Columns of the primary table of each scenario.
pub fn columns(scenario: Scenario) -> &'static [&'static str] {
    match scenario {
        Scenario::IdealSteadyState => &["t_ms", "xi", "xi_cond", "xi_steady_closed_form"],
        Scenario::NoisyConditional => &["gamma_extra_over_gamma_s", "xi", "xi_cond", "xi_ode", "xi_cond_riccati"],
        Scenario::DetuningSweep => &["delta_omega", "t_ms", "xi"],
        Scenario::MultilevelFig3b => &["t_ms", "xi2_adiabatic", "xi2_direct", "n2_over_n", "p2"],
        Scenario::ReconstructionRoundtrip => &["var_p_in", "var_p_noiseless", "var_p_monte_carlo", "std_error", "n_traj"],
        Scenario::KappaCalibration => &["kappa2_exact", "kappa2_noiseless", "kappa2_monte_carlo", "std_error", "shots"],
        Scenario::OracleConvergence => &["n_atoms", "xi_steady", "steady_error", "max_transient_deviation"],
    }
}

pub const RECORD_COLUMNS: [&str; 5] = ["trajectory_id", "step", "t_ms", "y_c", "y_s"];

fn dynamics_params(cfg: &ScenarioConfig, gamma_extra: f64) -> Result<DynamicsParams, SimError> {
    Ok(DynamicsParams::new(cfg.get("gamma_s"), gamma_extra, SqueezeParams::from_z(cfg.get("z"))?)?)
}

/// Run one parameter point. Tables come back in a fixed order, primary first.
pub fn run_point(cfg: &ScenarioConfig) -> Result<Vec<Table>, SimError> {
    let name = cfg.scenario.name();
    let mut table = Table::new(name, columns(cfg.scenario));
    let mut extra = Vec::new();
    match cfg.scenario {
        Scenario::IdealSteadyState => {
            let p = dynamics_params(cfg, 0.0)?;
            let (t, n) = (cfg.get("t_max"), cfg.get_usize("samples"));
            let u = dynamics::evolve_unconditional(&p, VACUUM_VARIANCE, t, n)?;
            let c = dynamics::evolve_conditional(&p, VACUUM_VARIANCE, t, n)?;
            let steady = dynamics::steady_state_xi(&p)?;
            for ((t, xu), xc) in u.times.iter().zip(u.xi()).zip(c.xi()) {
                table.push(vec![*t, xu, xc, steady]);
            }
        }
        Scenario::NoisyConditional => {
            let n = cfg.get_usize("points");
            if n < 2 {
                return Err(SimError::config("noisy_conditional needs at least 2 points"));
            }
            for k in 0..n {
                let ratio = cfg.get("ratio_max") * k as f64 / (n - 1) as f64;
                let p = dynamics_params(cfg, ratio * cfg.get("gamma_s"))?;
                table.push(vec![
                    ratio,
                    dynamics::steady_state_xi(&p)?,
                    dynamics::steady_state_xi_cond(&p)?,
                    dynamics::unconditional_steady_xi_numeric(&p)?,
                    dynamics::conditional_steady_xi_numeric(&p)?,
                ]);
            }
        }
        Scenario::DetuningSweep => {
            let base = dynamics_params(cfg, cfg.get("gamma_extra"))?;
            for k in 0..cfg.get_usize("delta_omega_points") {
                let dw = cfg.get("delta_omega_step") * k as f64;
                let tr = dynamics::evolve_with_detuning(&base.with_detuning(dw)?, cfg.get("t_max"), cfg.get_usize("samples"))?;
                for (t, xi) in tr.times.iter().zip(&tr.xi) {
                    table.push(vec![dw, *t, *xi]);
                }
            }
        }
        Scenario::MultilevelFig3b => {
            let p = RateModelParams {
                gamma: cfg.get("gamma"),
                gamma_tilde: cfg.get("gamma_tilde"),
                gamma_col: cfg.get("gamma_col"),
                gamma_pump: cfg.get("gamma_pump"),
                gamma_repump: cfg.get("gamma_repump"),
                gamma_l_out: cfg.get("gamma_l_out"),
                d: cfg.get("d"),
                n_atoms: cfg.get("n_atoms"),
                squeeze: SqueezeParams::from_z(cfg.get("z"))?,
            };
            let tr = multilevel::xi2_adiabatic(&p, cfg.get("t_max"), cfg.get_usize("samples"))?;
            for i in 0..tr.times.len() {
                let pop = &tr.populations[i];
                table.push(vec![tr.times[i], tr.adiabatic[i], tr.direct[i], pop.n2() / p.n_atoms, pop.p2()]);
            }
        }
        Scenario::ReconstructionRoundtrip => {
            let (records, row) = reconstruction_roundtrip(cfg)?;
            table.push(row);
            if let Some(r) = records {
                extra.push(r);
            }
        }
        Scenario::KappaCalibration => {
            let p = dynamics_params(cfg, cfg.get("gamma_extra"))?.with_pulse(cfg.get("pulse"))?;
            let exact = dynamics::coupling_kappa(&p)?.kappa.powi(2);
            let noiseless = simulate_calibration(&p, cfg.get("q0"))?.kappa2;
            let shots = cfg.get_usize("shots");
            let mc = simulate_calibration_mc(&p, cfg.get("q0"), shots, cfg.seed)?;
            table.push(vec![exact, noiseless, mc.value, mc.std_error, shots as f64]);
        }
        Scenario::OracleConvergence => {
            let n = cfg.get_usize("n_atoms");
            let sq = SqueezeParams::from_z(cfg.get("z"))?;
            let target = sq.ideal_xi();
            let sys = LindbladSystem::new(Representation::Dicke, n, LindbladRates::ideal(1.0), sq)?;
            let xi_ss = witness_xi(&steady_state(&sys)?)?;
            let samples = cfg.get_usize("samples").max(1);
            let times: Vec<f64> = (1..=samples).map(|k| cfg.get("t_max") * k as f64 / samples as f64).collect();
            let xi = witness_trajectory(&sys, &DensityOperator::pumped_css(&sys)?, &times, false)?;
            let dev = times
                .iter()
                .zip(&xi)
                .map(|(t, x)| (x - (target + (1.0 - target) * (-t).exp())).abs())
                .fold(0.0, f64::max);
            table.push(vec![n as f64, xi_ss, (xi_ss - target).abs(), dev]);
        }
    }
    let mut out = vec![table];
    out.extend(extra);
    Ok(out)
}

fn reconstruction_roundtrip(cfg: &ScenarioConfig) -> Result<(Option<Table>, Vec<f64>), SimError> {
    let (var_x, var_p) = (cfg.get("var_x_in"), cfg.get("var_p_in"));
    let p = dynamics_params(cfg, cfg.get("gamma_extra"))?.with_pulse(cfg.get("pulse"))?.with_eta(cfg.get("eta"))?;
    let eta = p.eta;
    let kappa = dynamics::coupling_kappa(&p)?.kappa;
    let input = |v: f64| ReconstructionInput {
        var_y_out: v,
        kappa,
        sigma_in2: SHOT_NOISE,
        t2: 1.0 / p.gamma_total(),
        eta,
        z: p.squeeze.z(),
        duration: p.pulse,
    };

    let modes = vec![Mode::AtomC, Mode::AtomS, Mode::LightC, Mode::LightS];
    let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![var_x, var_p, var_x, var_p, 0.5, 0.5, 0.5, 0.5]));
    let state = GaussianState::new(modes, cov, DVector::zeros(8))?;
    let detected = dynamics::step_io_noisy(&p, &state)?.beam_splitter_loss(Mode::LightC, eta)?;
    let noiseless = reconstruct_variance(&input(detected.variance(Mode::LightC, Quadrature::X)?), true)?;

    let n_traj = cfg.get_usize("n_traj");
    let mut rc = RecordConfig::new(cfg.get_usize("n_steps"), n_traj, cfg.seed);
    rc.initial = Matrix2::new(var_x, 0.0, 0.0, var_p);
    let mode = ModeFunction::falling(p.gamma_total(), p.pulse, Phase::Cos)?;
    let export = cfg.get_usize("export_records").min(n_traj);
    let mut records = Table::new("records", &RECORD_COLUMNS);
    // trajectories are independent streams, so chunks can run in parallel
    // and merge in a fixed order
    let chunk = 256;
    let starts: Vec<u64> = (0..n_traj as u64).step_by(chunk).collect();
    let parts = starts
        .par_iter()
        .map(|&start| {
            let end = (start + chunk as u64).min(n_traj as u64);
            let mut stats = MeanVar::default();
            let mut rows = Vec::new();
            simulate_records_with(&p, &rc, start..end, |r, _| {
                stats.push(project_record(r, &mode)?);
                if (r.trajectory_id as usize) < export {
                    for (k, (yc, ys)) in r.y_c.iter().zip(&r.y_s).enumerate() {
                        rows.push(vec![r.trajectory_id as f64, k as f64, r.t0 + (k as f64 + 0.5) * r.dt, *yc, *ys]);
                    }
                }
                Ok(())
            })?;
            Ok::<_, epr_core::Error>((stats, rows))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut stats = MeanVar::default();
    for (s, rows) in parts {
        stats.merge(&s);
        records.rows.extend(rows);
    }
    let mc = reconstruct_variance(&input(stats.var()), true)?;
    let se = stats.var_std_error() / (kappa * kappa * eta);
    let row = vec![var_p, noiseless, mc, se, n_traj as f64];
    Ok(((export > 0).then_some(records), row))
}

/// Run the configured scenario, or every point of its sweep axis on a pool
/// of `jobs` threads. Sweep tables gain the axis as a leading column and
/// keep axis order.
pub fn run_scenario(cfg: &ScenarioConfig, jobs: usize) -> Result<Vec<Table>, SimError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| SimError::config(format!("cannot start {jobs} worker threads: {e}")))?;
    pool.install(|| match &cfg.sweep {
        None => run_point(cfg),
        Some(sweep) => {
            let points: Vec<Vec<Table>> = sweep
                .values
                .par_iter()
                .map(|v| run_point(&cfg.with_param(&sweep.name, *v)))
                .collect::<Result<_, _>>()?;
            Ok(merge_sweep(&sweep.name, &sweep.values, points))
        }
    })
}

fn merge_sweep(axis: &str, values: &[f64], points: Vec<Vec<Table>>) -> Vec<Table> {
    let mut merged: BTreeMap<usize, Table> = BTreeMap::new();
    for (value, tables) in values.iter().zip(points) {
        for (i, t) in tables.into_iter().enumerate() {
            let entry = merged.entry(i).or_insert_with(|| {
                let mut columns = vec![axis.to_string()];
                columns.extend(t.columns.iter().filter(|c| *c != axis).cloned());
                Table { name: t.name.clone(), columns, rows: Vec::new() }
            });
            let skip = t.columns.iter().position(|c| c == axis);
            for row in t.rows {
                let mut r = vec![*value];
                r.extend(row.into_iter().enumerate().filter(|(k, _)| Some(*k) != skip).map(|(_, x)| x));
                entry.rows.push(r);
            }
        }
    }
    merged.into_values().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Overrides;

    fn cfg(scenario: &str, set: &[&str]) -> ScenarioConfig {
        let o = Overrides { scenario: Some(scenario.into()), set: set.iter().map(|s| s.to_string()).collect(), ..Overrides::default() };
        ScenarioConfig::resolve(None, &o).unwrap()
    }

    #[test]
    fn ideal_final_row() {
        let t = &run_scenario(&cfg("ideal_steady_state", &[]), 1).unwrap()[0];
        let last = t.rows.last().unwrap();
        assert!((last[1] - 0.16).abs() < 1e-9 && (last[2] - 0.16).abs() < 1e-9);
    }

    #[test]
    fn conditional_below_unconditional() {
        let t = &run_scenario(&cfg("noisy_conditional", &["points=11"]), 2).unwrap()[0];
        for r in &t.rows {
            if r[0] == 0.0 {
                assert!((r[1] - r[2]).abs() < 1e-12);
            } else {
                assert!(r[2] < r[1]);
            }
            assert!((r[1] - r[3]).abs() < 1e-9 && (r[2] - r[4]).abs() < 1e-9);
        }
    }

    #[test]
    fn sweep_keeps_axis_order() {
        let c = cfg("multilevel_fig3b", &["sweep.d=150,55,100", "samples=12"]);
        let t = &run_scenario(&c, 3).unwrap()[0];
        assert_eq!(t.columns[0], "d");
        let d = t.column("d").unwrap();
        assert_eq!(&d[..13], &[150.0; 13]);
        assert_eq!(d[13], 55.0);
        assert_eq!(d[26], 100.0);
    }

    #[test]
    fn single_value_sweep_matches_plain_run() {
        let plain = run_scenario(&cfg("detuning_sweep", &["samples=20"]), 1).unwrap();
        let swept = run_scenario(&cfg("detuning_sweep", &["samples=20", "sweep.z=2.5"]), 1).unwrap();
        for (a, b) in plain[0].rows.iter().zip(&swept[0].rows) {
            assert_eq!(&b[1..], &a[..]);
        }
    }

    #[test]
    fn replaced_axis_column_not_duplicated() {
        let c = cfg("oracle_convergence", &["sweep.n_atoms=2,3", "samples=4"]);
        let t = &run_scenario(&c, 2).unwrap()[0];
        assert_eq!(t.columns, vec!["n_atoms", "xi_steady", "steady_error", "max_transient_deviation"]);
        assert_eq!(t.column("n_atoms").unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn kappa_calibration_row() {
        let t = &run_scenario(&cfg("kappa_calibration", &["shots=2000"]), 1).unwrap()[0];
        let r = &t.rows[0];
        assert!((r[0] - r[1]).abs() < 1e-9);
        assert!((r[2] - r[0]).abs() < 4.0 * r[3]);
    }
}
