//! Synchronous decentralized multi-agent simulation.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{perturb_and_clamp, step, AgentState, ControlBounds, ControlInput, NoiseModel};
use crate::error::{Error, Result};
use crate::mppi::ControlSequence;
use crate::orca_dd::{orca_dd_command, OrcaDdConfig};
use crate::planner::{bootstrap_sequence, NeighborTrack, Planner};
use crate::rng::{tag, StreamKey};
use crate::scenarios::Scenario;
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dt: f64,
    pub step_limit: usize,
    pub goal_tolerance: f64,
    pub noise: NoiseModel<f64>,
    pub bounds: ControlBounds<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            step_limit: 1000,
            goal_tolerance: 0.3,
            noise: NoiseModel::standard(),
            bounds: ControlBounds::standard(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.goal_tolerance > 0.0) {
            return Err(Error::InvalidConfig("sim dt and goal_tolerance must be positive".into()));
        }
        if !self.noise.is_valid() {
            return Err(Error::InvalidConfig("sim noise standard deviations must be positive".into()));
        }
        if !self.bounds.is_valid() {
            return Err(Error::InvalidConfig("sim control bounds need min < max".into()));
        }
        Ok(())
    }
}

/// How an agent picks its command.
#[derive(Clone, Debug)]
pub enum Controller {
    Planner(Planner<f64>),
    OrcaDd(OrcaDdConfig<f64>),
}

impl Controller {
    fn horizon(&self) -> usize {
        match self {
            Self::Planner(p) => p.horizon(),
            Self::OrcaDd(_) => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentRecord {
    pub state: AgentState<f64>,
    pub goal: Vec2<f64>,
    pub radius: f64,
    /// Tick count at which the agent first came within tolerance of its goal.
    pub reached_at: Option<usize>,
    pub u_init: ControlSequence<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub agents: Vec<AgentRecord>,
    pub step: usize,
    pub seed: u64,
}

impl WorldState {
    pub fn from_scenario(scenario: &Scenario, horizon: usize, seed: u64, goal_tolerance: f64) -> Self {
        let agents = scenario
            .agents
            .iter()
            .map(|a| {
                let state = AgentState::at_rest(a.start.x, a.start.y, a.theta);
                AgentRecord {
                    state,
                    goal: a.goal,
                    radius: a.radius,
                    reached_at: (state.position().distance(a.goal) <= goal_tolerance).then_some(0),
                    u_init: bootstrap_sequence(horizon),
                }
            })
            .collect();
        Self { agents, step: 0, seed }
    }

    pub fn all_reached(&self) -> bool {
        self.agents.iter().all(|a| a.reached_at.is_some())
    }

    /// Smallest center distance over all pairs, and whether any pair overlaps.
    pub fn closest_pair(&self) -> (f64, bool) {
        let mut min_dist = f64::INFINITY;
        let mut collided = false;
        for (i, a) in self.agents.iter().enumerate() {
            for b in &self.agents[i + 1..] {
                let d = a.state.position().distance(b.state.position());
                min_dist = min_dist.min(d);
                collided |= d < a.radius + b.radius;
            }
        }
        (min_dist, collided)
    }

    fn agent_key(&self, agent: usize) -> StreamKey {
        StreamKey::root(self.seed).child(agent as u64).child(self.step as u64)
    }

    fn tracks_for(&self, agent: usize) -> Vec<NeighborTrack<f64>> {
        self.agents
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != agent)
            .map(|(_, a)| NeighborTrack {
                position: a.state.position(),
                velocity: a.state.velocity(),
                radius: a.radius,
            })
            .collect()
    }
}

/// Command chosen by one agent plus its next warm start.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub command: ControlInput<f64>,
    pub next_init: ControlSequence<f64>,
    pub fallbacks: usize,
}

fn decide(world: &WorldState, agent: usize, controller: &Controller, cfg: &SimConfig) -> Decision {
    let a = &world.agents[agent];
    let tracks = world.tracks_for(agent);
    let key = world.agent_key(agent);
    match controller {
        Controller::Planner(p) => {
            let res = p.plan(&a.state, a.radius, a.goal, &a.u_init, &tracks, key.child(tag::PLAN));
            Decision {
                command: res.command,
                fallbacks: res.diagnostics.fallback_count(),
                next_init: res.next_init,
            }
        }
        Controller::OrcaDd(dd) => Decision {
            command: orca_dd_command(&a.state, a.radius, a.goal, &tracks, dd, &cfg.bounds, key.child(tag::JITTER)),
            next_init: a.u_init.clone(),
            fallbacks: 0,
        },
    }
}

/// Plans every agent against the current snapshot, visiting agents in `order`.
pub fn plan_all(world: &WorldState, controller: &Controller, cfg: &SimConfig, order: &[usize]) -> Vec<Decision> {
    let mut planned: Vec<(usize, Decision)> = order
        .par_iter()
        .map(|&i| (i, decide(world, i, controller, cfg)))
        .collect();
    planned.sort_by_key(|(i, _)| *i);
    planned.into_iter().map(|(_, d)| d).collect()
}

/// One executed step of one agent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub agent: usize,
    pub px: f64,
    pub py: f64,
    pub theta: f64,
    pub v_cmd: f64,
    pub w_cmd: f64,
    pub v_exec: f64,
    pub w_exec: f64,
}

pub const TRAJECTORY_HEADER: &str = "step,agent,px,py,theta,v_cmd,w_cmd,v_exec,w_exec";

pub fn write_trajectory<W: Write>(out: &mut W, records: &[TrajectoryRecord]) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.step, r.agent, r.px, r.py, r.theta, r.v_cmd, r.w_cmd, r.v_exec, r.w_exec
        )?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TickReport {
    pub collision: bool,
    pub min_pairwise_dist: f64,
    pub fallbacks: usize,
}

fn commit(
    world: &mut WorldState,
    decisions: Vec<Decision>,
    cfg: &SimConfig,
    log: Option<&mut Vec<TrajectoryRecord>>,
) -> TickReport {
    let mut fallbacks = 0;
    let mut records = Vec::with_capacity(world.agents.len());
    for (i, d) in decisions.into_iter().enumerate() {
        let mut rng = world.agent_key(i).child(tag::EXEC).rng();
        let exec = perturb_and_clamp(d.command, &cfg.noise, &cfg.bounds, &mut rng);
        let a = &mut world.agents[i];
        a.state = step(&a.state, exec, cfg.dt);
        a.u_init = d.next_init;
        fallbacks += d.fallbacks;
        records.push(TrajectoryRecord {
            step: world.step,
            agent: i,
            px: a.state.px,
            py: a.state.py,
            theta: a.state.theta,
            v_cmd: d.command.v,
            w_cmd: d.command.w,
            v_exec: exec.v,
            w_exec: exec.w,
        });
    }
    world.step += 1;
    for a in &mut world.agents {
        if a.reached_at.is_none() && a.state.position().distance(a.goal) <= cfg.goal_tolerance {
            a.reached_at = Some(world.step);
        }
    }
    if let Some(log) = log {
        log.extend(records);
    }
    let (min_pairwise_dist, collision) = world.closest_pair();
    TickReport {
        collision,
        min_pairwise_dist,
        fallbacks,
    }
}

/// All agents plan on the same snapshot, then all perturbed commands execute at once.
pub fn tick(
    world: &mut WorldState,
    controller: &Controller,
    cfg: &SimConfig,
    log: Option<&mut Vec<TrajectoryRecord>>,
) -> TickReport {
    let order: Vec<usize> = (0..world.agents.len()).collect();
    let decisions = plan_all(world, controller, cfg, &order);
    commit(world, decisions, cfg, log)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Success,
    Collision,
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub makespan_s: Option<f64>,
    pub arrival_steps: Vec<Option<usize>>,
    /// Closest center distance seen over the run; `None` with fewer than two agents.
    pub min_pairwise_dist: Option<f64>,
    pub steps_executed: usize,
    /// Projection steps that fell back to the braking distribution.
    pub projection_fallbacks: usize,
}

pub fn run(
    scenario: &Scenario,
    controller: &Controller,
    cfg: &SimConfig,
    seed: u64,
    mut log: Option<&mut Vec<TrajectoryRecord>>,
) -> RunOutcome {
    let mut world = WorldState::from_scenario(scenario, controller.horizon(), seed, cfg.goal_tolerance);
    let (mut min_dist, _) = world.closest_pair();
    let mut fallbacks = 0;
    let status = loop {
        if world.all_reached() {
            break RunStatus::Success;
        }
        if world.step >= cfg.step_limit {
            break RunStatus::Timeout;
        }
        let report = tick(&mut world, controller, cfg, log.as_deref_mut());
        min_dist = min_dist.min(report.min_pairwise_dist);
        fallbacks += report.fallbacks;
        if report.collision {
            break RunStatus::Collision;
        }
    };
    let arrival_steps: Vec<Option<usize>> = world.agents.iter().map(|a| a.reached_at).collect();
    let makespan_s = (status == RunStatus::Success)
        .then(|| arrival_steps.iter().flatten().copied().max().unwrap_or(0) as f64 * cfg.dt);
    RunOutcome {
        status,
        makespan_s,
        arrival_steps,
        min_pairwise_dist: min_dist.is_finite().then_some(min_dist),
        steps_executed: world.step,
        projection_fallbacks: fallbacks,
    }
}
