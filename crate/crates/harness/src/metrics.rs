//! Per-run records, their aggregates and the recomputation check.

use corl_mppi::scenarios::ScenarioKind;
use corl_mppi::sim::{RunOutcome, RunStatus};
use serde::{Deserialize, Serialize};

use crate::config::Algorithm;
use crate::error::HarnessError;

pub const METRICS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub scenario: ScenarioKind,
    pub algo: Algorithm,
    pub instance: usize,
    pub repetition: usize,
    pub scene_seed: u64,
    pub seed: u64,
    pub status: RunStatus,
    pub makespan_s: Option<f64>,
    pub arrival_steps: Vec<Option<usize>>,
    pub min_pairwise_dist: Option<f64>,
    pub steps_executed: usize,
    pub projection_fallbacks: usize,
}

impl RunRecord {
    pub fn from_outcome(
        scenario: ScenarioKind,
        algo: Algorithm,
        instance: usize,
        repetition: usize,
        scene_seed: u64,
        seed: u64,
        out: RunOutcome,
    ) -> Self {
        Self {
            scenario,
            algo,
            instance,
            repetition,
            scene_seed,
            seed,
            status: out.status,
            makespan_s: out.makespan_s,
            arrival_steps: out.arrival_steps,
            min_pairwise_dist: out.min_pairwise_dist,
            steps_executed: out.steps_executed,
            projection_fallbacks: out.projection_fallbacks,
        }
    }
}

/// Summary statistics over a set of runs. Rates are `None` without runs; the mean
/// makespan is `None` when no instance succeeded in every run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregate {
    pub runs: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub instances: usize,
    /// Instances whose every run succeeded.
    pub full_success_instances: usize,
    pub success_rate: Option<f64>,
    pub pct_collision_terminated: Option<f64>,
    /// Mean makespan over the runs of fully successful instances.
    pub mean_makespan_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateRow {
    pub scenario: ScenarioKind,
    pub scenario_name: String,
    pub n: usize,
    pub algo: Algorithm,
    pub stats: Aggregate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsDocument {
    pub format_version: u32,
    pub seed_base: u64,
    pub runs: Vec<RunRecord>,
    /// One row per (scenario, algorithm), in order of first appearance.
    pub aggregates: Vec<AggregateRow>,
    pub overall: Aggregate,
}

/// Aggregates `runs`; an instance is identified by (scenario, algorithm, instance index).
pub fn aggregate<'a>(runs: impl IntoIterator<Item = &'a RunRecord>) -> Aggregate {
    let runs: Vec<&RunRecord> = runs.into_iter().collect();
    let mut instances: Vec<(&ScenarioKind, Algorithm, usize, bool)> = Vec::new();
    for r in &runs {
        let ok = r.status == RunStatus::Success;
        match instances
            .iter_mut()
            .find(|(s, a, i, _)| **s == r.scenario && *a == r.algo && *i == r.instance)
        {
            Some(entry) => entry.3 &= ok,
            None => instances.push((&r.scenario, r.algo, r.instance, ok)),
        }
    }
    let count = |st: RunStatus| runs.iter().filter(|r| r.status == st).count();
    let (successes, collisions, timeouts) = (count(RunStatus::Success), count(RunStatus::Collision), count(RunStatus::Timeout));
    let n = runs.len();

    let mut sum = 0.0;
    let mut counted = 0usize;
    for r in &runs {
        let full = instances
            .iter()
            .any(|(s, a, i, ok)| *ok && **s == r.scenario && *a == r.algo && *i == r.instance);
        if let (true, Some(m)) = (full, r.makespan_s) {
            sum += m;
            counted += 1;
        }
    }
    Aggregate {
        runs: n,
        successes,
        collisions,
        timeouts,
        instances: instances.len(),
        full_success_instances: instances.iter().filter(|e| e.3).count(),
        success_rate: (n > 0).then(|| successes as f64 / n as f64),
        pct_collision_terminated: (n > 0).then(|| 100.0 * collisions as f64 / n as f64),
        mean_makespan_s: (counted > 0).then(|| sum / counted as f64),
    }
}

/// One row per (scenario, algorithm) present in `runs`.
pub fn aggregate_rows(runs: &[RunRecord]) -> Vec<AggregateRow> {
    let mut keys: Vec<(ScenarioKind, Algorithm)> = Vec::new();
    for r in runs {
        if !keys.iter().any(|(s, a)| *s == r.scenario && *a == r.algo) {
            keys.push((r.scenario, r.algo));
        }
    }
    keys.into_iter()
        .map(|(scenario, algo)| AggregateRow {
            scenario,
            scenario_name: scenario.name().to_string(),
            n: scenario.agent_count(),
            algo,
            stats: aggregate(runs.iter().filter(|r| r.scenario == scenario && r.algo == algo)),
        })
        .collect()
}

impl MetricsDocument {
    pub fn build(seed_base: u64, runs: Vec<RunRecord>) -> Self {
        Self {
            format_version: METRICS_FORMAT_VERSION,
            seed_base,
            aggregates: aggregate_rows(&runs),
            overall: aggregate(&runs),
            runs,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(format!("metrics document: {e}")))
    }

    /// Recomputes every aggregate from the run records and lists each mismatch.
    pub fn check(&self) -> Result<(), Vec<String>> {
        let mut problems = Vec::new();
        if self.format_version != METRICS_FORMAT_VERSION {
            problems.push(format!("format_version {} (expected {METRICS_FORMAT_VERSION})", self.format_version));
        }
        let rows = aggregate_rows(&self.runs);
        if rows.len() != self.aggregates.len() {
            problems.push(format!("{} aggregate rows, recomputed {}", self.aggregates.len(), rows.len()));
        }
        for (stored, fresh) in self.aggregates.iter().zip(&rows) {
            if stored != fresh {
                problems.push(format!(
                    "row {} n={} {}: stored {:?}, recomputed {:?}",
                    stored.scenario_name, stored.n, stored.algo, stored.stats, fresh.stats
                ));
            }
        }
        let overall = aggregate(&self.runs);
        if overall != self.overall {
            problems.push(format!("overall: stored {:?}, recomputed {overall:?}", self.overall));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems)
        }
    }
}
