//! Run configuration: TOML file, command-line overrides and per-scenario
//! parameter tables.
//!
//! File format (version 1):
//!
//! ```toml
//! format_version = 1
//! scenario = "multilevel_fig3b"
//! seed = 7
//!
//! [params]
//! t_max = 60.0
//!
//! [sweep]
//! name = "d"
//! values = [55.0, 100.0, 150.0]
//! ```
//!
//! Every key in `[params]` must be a parameter of the chosen scenario;
//! missing ones take their documented defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::SimError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    IdealSteadyState,
    NoisyConditional,
    DetuningSweep,
    MultilevelFig3b,
    ReconstructionRoundtrip,
    KappaCalibration,
    OracleConvergence,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::IdealSteadyState,
        Scenario::NoisyConditional,
        Scenario::DetuningSweep,
        Scenario::MultilevelFig3b,
        Scenario::ReconstructionRoundtrip,
        Scenario::KappaCalibration,
        Scenario::OracleConvergence,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::IdealSteadyState => "ideal_steady_state",
            Scenario::NoisyConditional => "noisy_conditional",
            Scenario::DetuningSweep => "detuning_sweep",
            Scenario::MultilevelFig3b => "multilevel_fig3b",
            Scenario::ReconstructionRoundtrip => "reconstruction_roundtrip",
            Scenario::KappaCalibration => "kappa_calibration",
            Scenario::OracleConvergence => "oracle_convergence",
        }
    }

    /// Parameter names, defaults and descriptions. Times in ms, rates in 1/ms.
    pub fn parameters(self) -> &'static [ParamSpec] {
        match self {
            Scenario::IdealSteadyState => {
                const P: &[ParamSpec] = &[
                p("z", 2.5, "squeezing parameter Z = mu + nu"),
                p("gamma_s", 1.0, "engineered dissipation rate"),
                p("t_max", 15.0, "time horizon"),
                p("samples", 150.0, "number of time steps in the output"),
                ];
                P
            }
            Scenario::NoisyConditional => {
                const P: &[ParamSpec] = &[
                p("z", 2.5, "squeezing parameter"),
                p("gamma_s", 1.0, "engineered dissipation rate"),
                p("ratio_max", 5.0, "largest gamma_extra / gamma_s"),
                p("points", 51.0, "grid points over [0, ratio_max]"),
                ];
                P
            }
            Scenario::DetuningSweep => {
                const P: &[ParamSpec] = &[
                p("z", 2.5, "squeezing parameter"),
                p("gamma_s", 1.0, "engineered dissipation rate"),
                p("gamma_extra", 0.1, "additional single-particle decoherence rate"),
                p("delta_omega_step", 1.1, "spacing of the Larmor detuning settings (rad/ms)"),
                p("delta_omega_points", 3.0, "number of detuning settings, starting at 0"),
                p("t_max", 10.0, "time horizon"),
                p("samples", 200.0, "number of time steps in the output"),
                ];
                P
            }
            Scenario::MultilevelFig3b => {
                const P: &[ParamSpec] = &[
                p("d", 150.0, "resonant optical depth"),
                p("gamma", 0.002, "single-atom radiative rate"),
                p("gamma_tilde", 0.193, "transverse decay rate of the two-level subsystem"),
                p("gamma_col", 0.002, "collisional rate"),
                p("gamma_pump", 0.160, "optical pumping rate"),
                p("gamma_repump", 0.160, "repumping rate"),
                p("gamma_l_out", 0.002, "loss rate out of the two-level subsystem"),
                p("n_atoms", 1.0e12, "atom number"),
                p("z", 2.5, "squeezing parameter"),
                p("t_max", 60.0, "time horizon"),
                p("samples", 120.0, "number of time steps in the output"),
                ];
                P
            }
            Scenario::ReconstructionRoundtrip => {
                const P: &[ParamSpec] = &[
                p("z", 2.5, "squeezing parameter"),
                p("gamma_s", 1.0, "engineered dissipation rate"),
                p("gamma_extra", 0.5, "additional decoherence rate"),
                p("pulse", 1.0, "read-out pulse duration"),
                p("eta", 0.84, "detection efficiency"),
                p("var_x_in", 2.0, "input atomic var(X) per sector"),
                p("var_p_in", 0.125, "input atomic var(P) per sector"),
                p("n_steps", 500.0, "record samples per trajectory"),
                p("n_traj", 10000.0, "Monte Carlo trajectories"),
                p("export_records", 0.0, "trajectories written to records.csv"),
                ];
                P
            }
            Scenario::KappaCalibration => {
                const P: &[ParamSpec] = &[
                p("z", 2.5, "squeezing parameter"),
                p("gamma_s", 1.0, "engineered dissipation rate"),
                p("gamma_extra", 0.5, "additional decoherence rate"),
                p("pulse", 0.5, "pulse duration"),
                p("q0", 3.0, "first-pulse q displacement"),
                p("shots", 10000.0, "Monte Carlo shots per pulse"),
                ];
                P
            }
            Scenario::OracleConvergence => {
                const P: &[ParamSpec] = &[
                p("n_atoms", 4.0, "atoms per ensemble (Dicke basis)"),
                p("z", 1.5, "squeezing parameter"),
                p("t_max", 5.0, "horizon of the transient comparison"),
                p("samples", 20.0, "transient sample times"),
                ];
                P
            }
        }
    }

    /// Parameters that must be non-negative integers.
    pub fn integer_parameters(self) -> &'static [&'static str] {
        &["samples", "points", "delta_omega_points", "n_steps", "n_traj", "export_records", "shots", "n_atoms"]
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL.into_iter().find(|x| x.name() == s).ok_or_else(|| {
            let known: Vec<&str> = Scenario::ALL.iter().map(|x| x.name()).collect();
            SimError::config(format!("unknown scenario `{s}` (known: {})", known.join(", ")))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub default: f64,
    pub description: &'static str,
}

const fn p(name: &'static str, default: f64, description: &'static str) -> ParamSpec {
    ParamSpec { name, default, description }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub name: String,
    pub values: Vec<f64>,
}

/// Contents of a config file; every field is optional except the version.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub format_version: u32,
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub sweep: Option<Sweep>,
}

impl FileConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, SimError> {
        let cfg: FileConfig = toml::from_str(text).map_err(|e| SimError::config(format!("{origin}: {e}")))?;
        if cfg.format_version != FORMAT_VERSION {
            return Err(SimError::config(format!(
                "{origin}: format_version {} not supported (expected {FORMAT_VERSION})",
                cfg.format_version
            )));
        }
        Ok(cfg)
    }
}

/// Fully resolved configuration, echoed into the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub format_version: u32,
    pub scenario: Scenario,
    pub params: BTreeMap<String, f64>,
    pub sweep: Option<Sweep>,
    pub seed: u64,
    pub output_dir: PathBuf,
}

/// Command-line layer applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub scenario: Option<String>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    /// `key=value` pairs; `sweep.<name>=v1,v2,...` sets the sweep axis.
    pub set: Vec<String>,
}

pub const DEFAULT_SEED: u64 = 1;

impl ScenarioConfig {
    pub fn resolve(file: Option<FileConfig>, overrides: &Overrides) -> Result<Self, SimError> {
        let file = file.unwrap_or(FileConfig { format_version: FORMAT_VERSION, ..FileConfig::default() });
        let scenario_name = overrides
            .scenario
            .clone()
            .or(file.scenario.clone())
            .ok_or_else(|| SimError::config("no scenario given (use --scenario or `scenario` in the config file)"))?;
        let scenario: Scenario = scenario_name.parse()?;
        let mut params: BTreeMap<String, f64> = scenario.parameters().iter().map(|s| (s.name.to_string(), s.default)).collect();
        for (k, v) in &file.params {
            set_param(scenario, &mut params, k, *v, "config file")?;
        }
        let mut sweep = file.sweep.clone();
        for item in &overrides.set {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| SimError::config(format!("--set `{item}`: expected key=value")))?;
            let key = key.trim();
            if let Some(axis) = key.strip_prefix("sweep.") {
                let values = value
                    .split(',')
                    .map(|v| parse_number(key, v))
                    .collect::<Result<Vec<f64>, _>>()?;
                sweep = Some(Sweep { name: axis.to_string(), values });
            } else {
                let key = key.strip_prefix("params.").unwrap_or(key);
                set_param(scenario, &mut params, key, parse_number(key, value)?, "--set")?;
            }
        }
        if let Some(s) = &sweep {
            check_sweep(scenario, s)?;
        }
        let cfg = Self {
            format_version: FORMAT_VERSION,
            scenario,
            params,
            sweep,
            seed: overrides.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
            output_dir: overrides.output_dir.clone().or(file.output_dir).unwrap_or_else(|| PathBuf::from("out")),
        };
        cfg.check_integers()?;
        Ok(cfg)
    }

    pub fn get(&self, key: &str) -> f64 {
        self.params[key]
    }

    pub fn get_usize(&self, key: &str) -> usize {
        self.params[key] as usize
    }

    /// Copy with one parameter replaced (for sweep points).
    pub fn with_param(&self, key: &str, value: f64) -> Self {
        let mut out = self.clone();
        out.params.insert(key.to_string(), value);
        out.sweep = None;
        out
    }

    fn check_integers(&self) -> Result<(), SimError> {
        for key in self.scenario.integer_parameters() {
            if let Some(v) = self.params.get(*key) {
                check_integer(key, *v)?;
            }
            if let Some(s) = self.sweep.as_ref().filter(|s| s.name == *key) {
                for v in &s.values {
                    check_integer(key, *v)?;
                }
            }
        }
        Ok(())
    }
}

fn check_integer(key: &str, v: f64) -> Result<(), SimError> {
    if v < 0.0 || v.fract() != 0.0 || v > 1e15 {
        return Err(SimError::config(format!("parameter `{key}` must be a non-negative integer, got {v}")));
    }
    Ok(())
}

fn parse_number(key: &str, text: &str) -> Result<f64, SimError> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| SimError::config(format!("parameter `{key}`: `{}` is not a number", text.trim())))?;
    if !v.is_finite() {
        return Err(SimError::config(format!("parameter `{key}` must be finite")));
    }
    Ok(v)
}

fn known_list(scenario: Scenario) -> String {
    scenario.parameters().iter().map(|s| s.name).collect::<Vec<_>>().join(", ")
}

fn set_param(scenario: Scenario, params: &mut BTreeMap<String, f64>, key: &str, value: f64, origin: &str) -> Result<(), SimError> {
    match params.get_mut(key) {
        Some(slot) if value.is_finite() => {
            *slot = value;
            Ok(())
        }
        Some(_) => Err(SimError::config(format!("{origin}: parameter `{key}` must be finite"))),
        None => Err(SimError::config(format!(
            "{origin}: unknown parameter `{key}` for scenario {scenario} (known: {})",
            known_list(scenario)
        ))),
    }
}

fn check_sweep(scenario: Scenario, sweep: &Sweep) -> Result<(), SimError> {
    if !scenario.parameters().iter().any(|s| s.name == sweep.name) {
        return Err(SimError::config(format!(
            "sweep axis `{}` is not a parameter of {scenario} (known: {})",
            sweep.name,
            known_list(scenario)
        )));
    }
    if sweep.values.is_empty() {
        return Err(SimError::config(format!("sweep axis `{}` has no values", sweep.name)));
    }
    for (i, v) in sweep.values.iter().enumerate() {
        if !v.is_finite() {
            return Err(SimError::config(format!("sweep axis `{}`: value {v} is not finite", sweep.name)));
        }
        if sweep.values[..i].contains(v) {
            return Err(SimError::config(format!("sweep axis `{}`: value {v} repeated", sweep.name)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn over(set: &[&str]) -> Overrides {
        Overrides { set: set.iter().map(|s| s.to_string()).collect(), ..Overrides::default() }
    }

    #[test]
    fn defaults_and_overrides() {
        let file = FileConfig::parse("format_version = 1\nscenario = \"ideal_steady_state\"\n[params]\nz = 3\n", "cfg").unwrap();
        let cfg = ScenarioConfig::resolve(Some(file), &over(&["gamma_s=2"])).unwrap();
        assert_eq!(cfg.get("z"), 3.0);
        assert_eq!(cfg.get("gamma_s"), 2.0);
        assert_eq!(cfg.get("t_max"), 15.0);
        assert_eq!(cfg.seed, DEFAULT_SEED);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(FileConfig::parse("format_version = 1\nbogus = 2\n", "cfg").is_err());
        let file = FileConfig::parse("format_version = 1\nscenario = \"kappa_calibration\"\n[params]\nzz = 3\n", "cfg").unwrap();
        let err = ScenarioConfig::resolve(Some(file), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("`zz`"));
        let mut o = over(&["nope=1"]);
        o.scenario = Some("kappa_calibration".into());
        assert!(ScenarioConfig::resolve(None, &o).is_err());
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = FileConfig::parse("format_version = 1\nscenario = \n", "cfg.toml").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        assert!(FileConfig::parse("format_version = 2\n", "cfg").is_err());
    }

    #[test]
    fn sweep_validation() {
        let mut o = over(&["sweep.d=55,100,150"]);
        o.scenario = Some("multilevel_fig3b".into());
        let cfg = ScenarioConfig::resolve(None, &o).unwrap();
        assert_eq!(cfg.sweep.unwrap().values, vec![55.0, 100.0, 150.0]);
        for bad in ["sweep.d=1,1", "sweep.q=1", "sweep.d=1,x"] {
            let mut o = over(&[bad]);
            o.scenario = Some("multilevel_fig3b".into());
            assert!(ScenarioConfig::resolve(None, &o).is_err(), "{bad}");
        }
        let empty = FileConfig::parse("format_version = 1\nscenario = \"multilevel_fig3b\"\n[sweep]\nname = \"d\"\nvalues = []\n", "cfg").unwrap();
        assert!(ScenarioConfig::resolve(Some(empty), &Overrides::default()).is_err());
    }

    #[test]
    fn integer_parameters_checked() {
        let mut o = over(&["samples=2.5"]);
        o.scenario = Some("ideal_steady_state".into());
        assert!(ScenarioConfig::resolve(None, &o).is_err());
    }
}
