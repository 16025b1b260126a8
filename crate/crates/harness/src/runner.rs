//! Executing experiments and writing their outputs.

use std::fs;
use std::path::{Path, PathBuf};

use corl_mppi::scenarios::{Scenario, ScenarioKind};
use corl_mppi::sim::{self, Controller, TrajectoryRecord};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{run_seed, scene_seed, Algorithm, ExperimentConfig, OutputPaths};
use crate::error::HarnessError;
use crate::metrics::{MetricsDocument, RunRecord};

/// One simulation to execute.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Job {
    pub scenario: ScenarioKind,
    pub algo: Algorithm,
    pub instance: usize,
    pub repetition: usize,
    pub scene_seed: u64,
    pub seed: u64,
}

/// Cross product of cells, algorithms, instances and repetitions, in that nesting order.
pub fn plan_jobs(cells: &[(ScenarioKind, usize)], algorithms: &[Algorithm], repetitions: usize, seed_base: u64) -> Vec<Job> {
    let mut jobs = Vec::new();
    for &(scenario, instances) in cells {
        for &algo in algorithms {
            for instance in 0..instances {
                let scene_seed = scene_seed(seed_base, &scenario, instance);
                for repetition in 0..repetitions {
                    jobs.push(Job {
                        scenario,
                        algo,
                        instance,
                        repetition,
                        scene_seed,
                        seed: run_seed(scene_seed, repetition),
                    });
                }
            }
        }
    }
    jobs
}

#[derive(Clone, Debug)]
pub struct Execution {
    pub metrics: MetricsDocument,
    /// Per-run trajectories, index-aligned with `metrics.runs`; empty unless requested.
    pub trajectories: Vec<Vec<TrajectoryRecord>>,
}

/// Runs every job of `cells` on a pool of `threads` workers (all cores when `None`).
pub fn execute(
    cfg: &ExperimentConfig,
    cells: &[(ScenarioKind, usize)],
    threads: Option<usize>,
    record_trajectories: bool,
) -> Result<Execution, HarnessError> {
    cfg.validate()?;
    let controllers: Vec<(Algorithm, Controller)> = cfg
        .algorithms
        .iter()
        .map(|&a| cfg.presets.controller(a).map(|c| (a, c)))
        .collect::<Result<_, _>>()?;
    let jobs = plan_jobs(cells, &cfg.algorithms, cfg.repetitions, cfg.seed_base);

    let mut scenes: Vec<Scenario> = Vec::new();
    for job in &jobs {
        if !scenes.iter().any(|s| s.kind == job.scenario && s.seed == job.scene_seed) {
            let scene = job
                .scenario
                .generate(job.scene_seed)
                .map_err(|e| HarnessError::Runtime(format!("instance {} of {:?}: {e}", job.instance, job.scenario)))?;
            scenes.push(scene);
        }
    }

    let run_one = |job: &Job| {
        let scene = scenes
            .iter()
            .find(|s| s.kind == job.scenario && s.seed == job.scene_seed)
            .expect("scene generated above");
        let controller = &controllers.iter().find(|(a, _)| *a == job.algo).expect("controller built above").1;
        let mut log = Vec::new();
        let out = sim::run(scene, controller, &cfg.sim, job.seed, record_trajectories.then_some(&mut log));
        let rec = RunRecord::from_outcome(job.scenario, job.algo, job.instance, job.repetition, job.scene_seed, job.seed, out);
        (rec, log)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| HarnessError::Runtime(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(RunRecord, Vec<TrajectoryRecord>)> = pool.install(|| jobs.par_iter().map(run_one).collect());

    let (runs, trajectories): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(Execution {
        metrics: MetricsDocument::build(cfg.seed_base, runs),
        trajectories: if record_trajectories { trajectories } else { Vec::new() },
    })
}

/// Runs the configured scenarios.
pub fn cmd_run(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Execution, HarnessError> {
    execute(cfg, &cfg.run_cells(), threads, cfg.outputs.trajectory.is_some())
}

/// Runs the sweep grids (or the configured scenarios when no grid is given).
pub fn cmd_sweep(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Execution, HarnessError> {
    execute(cfg, &cfg.sweep_cells(), threads, cfg.outputs.trajectory.is_some())
}

pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<(), HarnessError> {
    cfg.validate()
}

/// Short human-readable label such as `circle(n=8, diameter=14)`.
pub fn scenario_label(kind: &ScenarioKind) -> String {
    match *kind {
        ScenarioKind::Circle { n, diameter } => format!("circle(n={n}, diameter={diameter})"),
        ScenarioKind::Mesh { grid_n, cell_size, n } => format!("mesh(n={n}, grid={grid_n}x{grid_n}, cell={cell_size})"),
        ScenarioKind::Random { n, area } => format!("random(n={n}, area={area})"),
    }
}

#[derive(Serialize)]
struct RunRow<'a> {
    scenario: &'a str,
    n: usize,
    label: String,
    algo: &'a str,
    instance: usize,
    repetition: usize,
    scene_seed: u64,
    seed: u64,
    status: &'a str,
    makespan_s: Option<f64>,
    steps_executed: usize,
    min_pairwise_dist: Option<f64>,
    projection_fallbacks: usize,
}

#[derive(Serialize)]
struct TableRow<'a> {
    scenario: &'a str,
    n: usize,
    label: String,
    algo: &'a str,
    runs: usize,
    successes: usize,
    collisions: usize,
    timeouts: usize,
    instances: usize,
    full_success_instances: usize,
    success_rate: Option<f64>,
    pct_collision_terminated: Option<f64>,
    mean_makespan_s: Option<f64>,
}

#[derive(Serialize)]
struct TrajectoryRow {
    run: usize,
    step: usize,
    agent: usize,
    px: f64,
    py: f64,
    theta: f64,
    v_cmd: f64,
    w_cmd: f64,
    v_exec: f64,
    w_exec: f64,
}

fn status_name(s: corl_mppi::sim::RunStatus) -> &'static str {
    match s {
        corl_mppi::sim::RunStatus::Success => "success",
        corl_mppi::sim::RunStatus::Collision => "collision",
        corl_mppi::sim::RunStatus::Timeout => "timeout",
    }
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Runtime(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn runs_csv(doc: &MetricsDocument) -> Result<String, HarnessError> {
    to_csv(doc.runs.iter().map(|r| RunRow {
        scenario: r.scenario.name(),
        n: r.scenario.agent_count(),
        label: scenario_label(&r.scenario),
        algo: r.algo.name(),
        instance: r.instance,
        repetition: r.repetition,
        scene_seed: r.scene_seed,
        seed: r.seed,
        status: status_name(r.status),
        makespan_s: r.makespan_s,
        steps_executed: r.steps_executed,
        min_pairwise_dist: r.min_pairwise_dist,
        projection_fallbacks: r.projection_fallbacks,
    }))
}

pub fn table_csv(doc: &MetricsDocument) -> Result<String, HarnessError> {
    to_csv(doc.aggregates.iter().map(|a| TableRow {
        scenario: &a.scenario_name,
        n: a.n,
        label: scenario_label(&a.scenario),
        algo: a.algo.name(),
        runs: a.stats.runs,
        successes: a.stats.successes,
        collisions: a.stats.collisions,
        timeouts: a.stats.timeouts,
        instances: a.stats.instances,
        full_success_instances: a.stats.full_success_instances,
        success_rate: a.stats.success_rate,
        pct_collision_terminated: a.stats.pct_collision_terminated,
        mean_makespan_s: a.stats.mean_makespan_s,
    }))
}

pub fn trajectory_csv(exec: &Execution) -> Result<String, HarnessError> {
    to_csv(
        exec.trajectories
            .iter()
            .enumerate()
            .flat_map(|(run, recs)| {
                recs.iter().map(move |r| TrajectoryRow {
                    run,
                    step: r.step,
                    agent: r.agent,
                    px: r.px,
                    py: r.py,
                    theta: r.theta,
                    v_cmd: r.v_cmd,
                    w_cmd: r.w_cmd,
                    v_exec: r.v_exec,
                    w_exec: r.w_exec,
                })
            }),
    )
}

/// Plain-text summary, one line per aggregate row.
pub fn summary(doc: &MetricsDocument) -> String {
    let fmt = |x: Option<f64>, digits: usize| x.map_or("-".to_string(), |v| format!("{v:.digits$}"));
    let mut out = String::new();
    for a in &doc.aggregates {
        out += &format!(
            "{:<36} {:<10} runs {:>4}  success {:>6}  collision% {:>6}  makespan {:>8}\n",
            scenario_label(&a.scenario),
            a.algo.name(),
            a.stats.runs,
            fmt(a.stats.success_rate, 3),
            fmt(a.stats.pct_collision_terminated, 1),
            fmt(a.stats.mean_makespan_s, 2),
        );
    }
    out
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes every file or none: contents go to sibling temporaries first and are renamed
/// into place only after all of them were written.
pub fn write_all(files: &[(PathBuf, String)]) -> Result<(), HarnessError> {
    let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
    let cleanup = |staged: &[(PathBuf, PathBuf)]| {
        for (tmp, _) in staged {
            let _ = fs::remove_file(tmp);
        }
    };
    for (path, text) in files {
        let tmp = partial_path(path);
        if let Err(e) = fs::write(&tmp, text) {
            cleanup(&staged);
            let _ = fs::remove_file(&tmp);
            return Err(HarnessError::Runtime(format!("cannot write {}: {e}", path.display())));
        }
        staged.push((tmp, path.clone()));
    }
    for (i, (tmp, path)) in staged.iter().enumerate() {
        if let Err(e) = fs::rename(tmp, path) {
            cleanup(&staged[i..]);
            return Err(HarnessError::Runtime(format!("cannot move {} into place: {e}", path.display())));
        }
    }
    Ok(())
}

/// Fails early when an output would land in a directory that does not exist.
pub fn check_output_dirs(outputs: &OutputPaths) -> Result<(), HarnessError> {
    let paths = [&outputs.metrics, &outputs.runs_csv, &outputs.table_csv, &outputs.trajectory];
    for path in paths.into_iter().flatten() {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        if !dir.is_dir() {
            return Err(HarnessError::Runtime(format!("output directory {} does not exist", dir.display())));
        }
    }
    Ok(())
}

/// Files requested by `outputs`; the metrics document is returned separately when it
/// has no path.
pub fn output_files(outputs: &OutputPaths, exec: &Execution) -> Result<Vec<(PathBuf, String)>, HarnessError> {
    let mut files = Vec::new();
    if let Some(p) = &outputs.metrics {
        files.push((p.clone(), exec.metrics.to_json()));
    }
    if let Some(p) = &outputs.runs_csv {
        files.push((p.clone(), runs_csv(&exec.metrics)?));
    }
    if let Some(p) = &outputs.table_csv {
        files.push((p.clone(), table_csv(&exec.metrics)?));
    }
    if let Some(p) = &outputs.trajectory {
        files.push((p.clone(), trajectory_csv(exec)?));
    }
    Ok(files)
}
