//! Experiment configuration: scenarios, algorithms, seeds and output paths.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use corl_mppi::orca_dd::OrcaDdConfig;
use corl_mppi::planner::{Planner, PlannerConfig, PolicyChoice};
use corl_mppi::rng::StreamKey;
use corl_mppi::scenarios::ScenarioKind;
use corl_mppi::sim::{Controller, SimConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    CorlMppi,
    MppiOrca,
    Mppi,
    OrcaDd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::CorlMppi, Self::MppiOrca, Self::Mppi, Self::OrcaDd];

    pub fn name(self) -> &'static str {
        match self {
            Self::CorlMppi => "corl-mppi",
            Self::MppiOrca => "mppi-orca",
            Self::Mppi => "mppi",
            Self::OrcaDd => "orca-dd",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|a| a.name() == s).ok_or_else(|| {
            HarnessError::Config(format!(
                "unknown algorithm {s:?}; expected one of corl-mppi, mppi-orca, mppi, orca-dd"
            ))
        })
    }
}

/// Per-algorithm module settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Presets {
    /// H = 10, K = 1500, 30% of rollouts (K_pi = 450) around the guidance policy.
    pub corl_mppi: PlannerConfig<f64>,
    /// H = 30, K = 1500, no guidance.
    pub mppi_orca: PlannerConfig<f64>,
    pub mppi: PlannerConfig<f64>,
    /// Goal jitter N(0, 0.3) and enlarged radius r + d.
    pub orca_dd: OrcaDdConfig<f64>,
}

impl Default for Presets {
    fn default() -> Self {
        Self {
            corl_mppi: PlannerConfig::corl_mppi(),
            mppi_orca: PlannerConfig::mppi_orca(),
            mppi: PlannerConfig::vanilla_mppi(),
            orca_dd: OrcaDdConfig::default(),
        }
    }
}

impl Presets {
    pub fn controller(&self, algo: Algorithm) -> Result<Controller, HarnessError> {
        let planner = |cfg: &PlannerConfig<f64>| {
            Planner::new(cfg.clone())
                .map(Controller::Planner)
                .map_err(|e| HarnessError::Config(format!("{algo}: {e}")))
        };
        match algo {
            Algorithm::CorlMppi => planner(&self.corl_mppi),
            Algorithm::MppiOrca => planner(&self.mppi_orca),
            Algorithm::Mppi => planner(&self.mppi),
            Algorithm::OrcaDd => {
                self.orca_dd.validate().map_err(|e| HarnessError::Config(format!("{algo}: {e}")))?;
                Ok(Controller::OrcaDd(self.orca_dd))
            }
        }
    }

    fn planners_mut(&mut self) -> [&mut PlannerConfig<f64>; 3] {
        [&mut self.corl_mppi, &mut self.mppi_orca, &mut self.mppi]
    }
}

fn one() -> usize {
    1
}

fn ten() -> usize {
    10
}

/// A family of scenarios for a sweep. Dense meshes fill every cell of each grid size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepGrid {
    Circle {
        ns: Vec<usize>,
        diameter: f64,
        #[serde(default = "one")]
        instances: usize,
    },
    Mesh {
        grid_sizes: Vec<usize>,
        cell_size: f64,
        #[serde(default = "ten")]
        instances: usize,
    },
    Random {
        ns: Vec<usize>,
        area: f64,
        #[serde(default = "ten")]
        instances: usize,
    },
}

impl SweepGrid {
    /// The evaluation grids: circle N = 5..50 (14 m), random N = 10..50 (40 m),
    /// dense mesh 2x2..5x5 (1.5 m cells).
    pub fn evaluation_grids() -> Vec<SweepGrid> {
        vec![
            SweepGrid::Circle {
                ns: (1..=10).map(|i| 5 * i).collect(),
                diameter: 14.0,
                instances: 1,
            },
            SweepGrid::Random {
                ns: (1..=5).map(|i| 10 * i).collect(),
                area: 40.0,
                instances: 10,
            },
            SweepGrid::Mesh {
                grid_sizes: vec![2, 3, 4, 5],
                cell_size: 1.5,
                instances: 10,
            },
        ]
    }

    pub fn cells(&self) -> Vec<(ScenarioKind, usize)> {
        match self {
            Self::Circle { ns, diameter, instances } => ns
                .iter()
                .map(|&n| (ScenarioKind::Circle { n, diameter: *diameter }, *instances))
                .collect(),
            Self::Mesh { grid_sizes, cell_size, instances } => grid_sizes
                .iter()
                .map(|&g| {
                    let kind = ScenarioKind::Mesh {
                        grid_n: g,
                        cell_size: *cell_size,
                        n: g * g,
                    };
                    (kind, *instances)
                })
                .collect(),
            Self::Random { ns, area, instances } => ns
                .iter()
                .map(|&n| (ScenarioKind::Random { n, area: *area }, *instances))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    /// Metrics document (JSON); printed to stdout when absent.
    pub metrics: Option<PathBuf>,
    /// One row per run.
    pub runs_csv: Option<PathBuf>,
    /// One row per (scenario, algorithm) aggregate.
    pub table_csv: Option<PathBuf>,
    /// Per-step agent states of every run.
    pub trajectory: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenarios executed by `run` (and by `sweep` when `sweep` is empty).
    pub scenarios: Vec<ScenarioKind>,
    pub sweep: Vec<SweepGrid>,
    pub algorithms: Vec<Algorithm>,
    /// Scene instances per entry of `scenarios`.
    pub instances: usize,
    /// Runs per scene instance.
    pub repetitions: usize,
    pub seed_base: u64,
    pub sim: SimConfig,
    pub presets: Presets,
    pub outputs: OutputPaths,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenarios: vec![ScenarioKind::Circle { n: 8, diameter: 14.0 }],
            sweep: Vec::new(),
            algorithms: vec![Algorithm::CorlMppi],
            instances: 1,
            repetitions: 10,
            seed_base: 0,
            sim: SimConfig::default(),
            presets: Presets::default(),
            outputs: OutputPaths::default(),
        }
    }
}

/// Overlays `patch` on `base`. Objects merge key by key; an object that names a
/// different `kind` replaces the base object whole.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let retag = matches!((b.get("kind"), p.get("kind")), (Some(x), Some(y)) if x != y);
            if retag {
                *b = p;
                return;
            }
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

impl ExperimentConfig {
    /// Parses a configuration; absent keys take their defaults, unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let patch: Value =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("config is not valid JSON: {e}")))?;
        if !patch.is_object() {
            return Err(HarnessError::Config("config must be a JSON object".into()));
        }
        let mut base = serde_json::to_value(Self::default()).expect("default config serializes");
        merge(&mut base, patch);
        serde_json::from_value(base).map_err(|e| HarnessError::Config(format!("config: {e}")))
    }

    /// Reads a configuration file; relative weight paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in cfg.presets.planners_mut() {
            if let PolicyChoice::Mlp { weights } = &mut p.policy {
                if weights.is_relative() {
                    *weights = dir.join(&*weights);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that can be checked without simulating.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.algorithms.is_empty() {
            return fail("algorithms is empty".into());
        }
        self.sim.validate().map_err(|e| HarnessError::Config(format!("sim: {e}")))?;
        for &algo in &self.algorithms {
            self.presets.controller(algo)?;
        }
        for (kind, _) in self.sweep_cells().iter().chain(&self.run_cells()) {
            if kind.agent_count() == 0 {
                return fail(format!("scenario {kind:?} has no agents"));
            }
            if !matches!(kind, ScenarioKind::Random { .. }) {
                kind.generate(0).map_err(|e| HarnessError::Config(format!("{kind:?}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn run_cells(&self) -> Vec<(ScenarioKind, usize)> {
        self.scenarios.iter().map(|&k| (k, self.instances)).collect()
    }

    pub fn sweep_cells(&self) -> Vec<(ScenarioKind, usize)> {
        if self.sweep.is_empty() {
            self.run_cells()
        } else {
            self.sweep.iter().flat_map(SweepGrid::cells).collect()
        }
    }
}

/// Stable 64-bit FNV-1a hash.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// Seed of a scene instance; depends only on the seed base, the scenario parameters and
/// the instance index.
pub fn scene_seed(seed_base: u64, kind: &ScenarioKind, instance: usize) -> u64 {
    let key = serde_json::to_string(kind).expect("scenario kind serializes");
    StreamKey::root(seed_base).child(fnv1a(key.as_bytes())).child(instance as u64).value()
}

pub fn run_seed(scene_seed: u64, repetition: usize) -> u64 {
    StreamKey::root(scene_seed).child(repetition as u64).value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
        let c = ExperimentConfig::default();
        assert_eq!(c.presets.corl_mppi.mppi.horizon, 10);
        assert_eq!(c.presets.corl_mppi.mppi.rollouts, 1500);
        assert_eq!(c.presets.corl_mppi.mppi.policy_rollouts, 450);
        assert_eq!(c.presets.corl_mppi.planner_dt, 0.1);
        assert_eq!(c.presets.mppi_orca.mppi.horizon, 30);
        assert_eq!(c.presets.mppi_orca.mppi.rollouts, 1500);
        assert_eq!(c.presets.mppi_orca.mppi.policy_rollouts, 0);
        assert_eq!(c.sim.dt, 0.1);
        c.validate().unwrap();
    }

    #[test]
    fn partial_overrides_keep_the_preset() {
        let c = ExperimentConfig::from_json(r#"{"presets": {"mppi_orca": {"mppi": {"rollouts": 200}}}}"#).unwrap();
        assert_eq!(c.presets.mppi_orca.mppi.rollouts, 200);
        assert_eq!(c.presets.mppi_orca.mppi.horizon, 30);
        assert_eq!(c.presets.mppi_orca.policy, PolicyChoice::None);
        let c = ExperimentConfig::from_json(r#"{"scenarios": [{"kind": "random", "n": 3, "area": 9.0}]}"#).unwrap();
        assert_eq!(c.scenarios, vec![ScenarioKind::Random { n: 3, area: 9.0 }]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            r#"{"repetition": 3}"#,
            r#"{"presets": {"corl_mppi": {"mppi": {"horizn": 3}}}}"#,
            r#"{"sim": {"dt": 0.1, "speed": 2}}"#,
            r#"{"scenarios": [{"kind": "circle", "n": 3, "diameter": 5, "r": 1}]}"#,
            r#"{"algorithms": ["orca"]}"#,
            r#"[1, 2]"#,
            r#"{"repetitions": "#,
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(HarnessError::Config(_))), "{text}");
        }
    }

    #[test]
    fn validation_examples() {
        let bad_split = r#"{"presets": {"corl_mppi": {"mppi": {"policy_rollouts": 2000}}}}"#;
        let bad_safe = r#"{"presets": {"corl_mppi": {"h_safe": 11}}}"#;
        let crowded = r#"{"scenarios": [{"kind": "circle", "n": 40, "diameter": 3.0}]}"#;
        for text in [bad_split, bad_safe, crowded] {
            let c = ExperimentConfig::from_json(text).unwrap();
            assert!(matches!(c.validate(), Err(HarnessError::Config(_))), "{text}");
        }
        let swapped = r#"{"presets": {"corl_mppi": {"policy": {"kind": "mlp", "weights": "w.json"}}}}"#;
        let c = ExperimentConfig::from_json(swapped).unwrap();
        assert!(matches!(c.presets.corl_mppi.policy, PolicyChoice::Mlp { .. }));
        assert!(c.validate().is_err());
        let back = r#"{"presets": {"corl_mppi": {"policy": {"kind": "none"}, "mppi": {"policy_rollouts": 0}}}}"#;
        ExperimentConfig::from_json(back).unwrap().validate().unwrap();
    }

    #[test]
    fn algorithm_names() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{a}\""));
        }
        assert!("vanilla".parse::<Algorithm>().is_err());
    }

    #[test]
    fn sweep_grids_expand() {
        let grids = SweepGrid::evaluation_grids();
        let cells: Vec<_> = grids.iter().map(SweepGrid::cells).collect();
        assert_eq!(cells[0].len(), 10);
        assert_eq!(cells[1].len(), 5);
        assert_eq!(cells[2].len(), 4);
        assert_eq!(cells[2][3], (ScenarioKind::Mesh { grid_n: 5, cell_size: 1.5, n: 25 }, 10));
        let c = ExperimentConfig::default();
        assert_eq!(c.sweep_cells(), c.run_cells());
    }

    #[test]
    fn seeds_depend_on_scenario_not_position() {
        let a = ScenarioKind::Random { n: 10, area: 40.0 };
        let b = ScenarioKind::Random { n: 20, area: 40.0 };
        assert_eq!(scene_seed(3, &a, 2), scene_seed(3, &a, 2));
        assert_ne!(scene_seed(3, &a, 2), scene_seed(3, &b, 2));
        assert_ne!(scene_seed(3, &a, 2), scene_seed(4, &a, 2));
        assert_ne!(run_seed(5, 0), run_seed(5, 1));
    }
}
