//! Seeded generators for the circle, mesh and random evaluation scenes.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{tag, StreamKey};
use crate::vec2::Vec2;

pub const AGENT_RADIUS: f64 = 0.3;
/// Extra clearance between random-scene starts on top of `2r`.
pub const RANDOM_START_GAP: f64 = 0.1;
const MAX_PLACEMENT_TRIES: usize = 100_000;
const DERANGEMENT_TRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScenarioKind {
    Circle { n: usize, diameter: f64 },
    Mesh { grid_n: usize, cell_size: f64, n: usize },
    Random { n: usize, area: f64 },
}

impl ScenarioKind {
    pub fn agent_count(&self) -> usize {
        match *self {
            Self::Circle { n, .. } | Self::Mesh { n, .. } | Self::Random { n, .. } => n,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Circle { .. } => "circle",
            Self::Mesh { .. } => "mesh",
            Self::Random { .. } => "random",
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Scenario> {
        match *self {
            Self::Circle { n, diameter } => circle(n, diameter, seed),
            Self::Mesh { grid_n, cell_size, n } => mesh(grid_n, cell_size, n, seed),
            Self::Random { n, area } => random_scene(n, area, seed),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub start: Vec2<f64>,
    pub theta: f64,
    pub goal: Vec2<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub agents: Vec<AgentSpec>,
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Parse {
            what: "scenario",
            source,
        })
    }

    /// Smallest center distance between two starts.
    pub fn min_start_spacing(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.agents.iter().enumerate() {
            for b in &self.agents[i + 1..] {
                best = best.min(a.start.distance(b.start));
            }
        }
        best
    }
}

fn scene_rng(seed: u64, kind: u64) -> crate::rng::StreamRng {
    StreamKey::root(seed).child(tag::SCENE).child(kind).rng()
}

/// Agents evenly spaced on a circle, each heading for the antipode.
pub fn circle(n: usize, diameter: f64, seed: u64) -> Result<Scenario> {
    let kind = ScenarioKind::Circle { n, diameter };
    if !(diameter > 0.0) {
        return Err(Error::InvalidConfig(format!("circle diameter must be positive, got {diameter}")));
    }
    if n as f64 * 2.0 * AGENT_RADIUS >= std::f64::consts::PI * diameter {
        return Err(Error::ScenarioInfeasible(format!(
            "{n} agents of radius {AGENT_RADIUS} m do not fit on a circle of diameter {diameter} m"
        )));
    }
    let r = diameter / 2.0;
    let agents = (0..n)
        .map(|i| {
            let phi = std::f64::consts::TAU * i as f64 / n as f64;
            let start = Vec2::new(r * phi.cos(), r * phi.sin());
            let goal = -start;
            AgentSpec {
                start,
                theta: (goal - start).angle(),
                goal,
                radius: AGENT_RADIUS,
            }
        })
        .collect();
    Ok(Scenario { kind, seed, agents })
}

/// Agents on cell centers of a `grid_n x grid_n` lattice; goals are a seeded permutation
/// of the occupied cells without fixed points where one can be found.
pub fn mesh(grid_n: usize, cell_size: f64, n: usize, seed: u64) -> Result<Scenario> {
    let kind = ScenarioKind::Mesh { grid_n, cell_size, n };
    if !(cell_size > 0.0) {
        return Err(Error::InvalidConfig(format!("mesh cell_size must be positive, got {cell_size}")));
    }
    if n > grid_n * grid_n {
        return Err(Error::ScenarioInfeasible(format!(
            "{n} agents exceed the {} cells of a {grid_n}x{grid_n} grid",
            grid_n * grid_n
        )));
    }
    if cell_size < 2.0 * AGENT_RADIUS && n > 1 {
        return Err(Error::ScenarioInfeasible(format!(
            "cells of {cell_size} m are too small for agents of radius {AGENT_RADIUS} m"
        )));
    }
    let half = (grid_n as f64 - 1.0) / 2.0;
    let cells: Vec<Vec2<f64>> = (0..n)
        .map(|idx| {
            let (row, col) = (idx / grid_n, idx % grid_n);
            Vec2::new((col as f64 - half) * cell_size, (row as f64 - half) * cell_size)
        })
        .collect();

    let mut rng = scene_rng(seed, 1);
    let mut perm: Vec<usize> = (0..n).collect();
    for _ in 0..DERANGEMENT_TRIES {
        perm.shuffle(&mut rng);
        if n <= 1 || perm.iter().enumerate().all(|(i, &p)| i != p) {
            break;
        }
    }
    let agents = cells
        .iter()
        .zip(&perm)
        .map(|(&start, &g)| AgentSpec {
            start,
            theta: 0.0,
            goal: cells[g],
            radius: AGENT_RADIUS,
        })
        .collect();
    Ok(Scenario { kind, seed, agents })
}

/// Uniform starts (pairwise at least `2r + gap` apart), independent uniform goals and
/// uniform headings in an `area x area` square centered on the origin.
pub fn random_scene(n: usize, area: f64, seed: u64) -> Result<Scenario> {
    let kind = ScenarioKind::Random { n, area };
    if !(area > 0.0) {
        return Err(Error::InvalidConfig(format!("random area must be positive, got {area}")));
    }
    let min_gap = 2.0 * AGENT_RADIUS + RANDOM_START_GAP;
    let half = area / 2.0;
    let mut rng = scene_rng(seed, 2);
    let point = |rng: &mut crate::rng::StreamRng| Vec2::new(rng.random_range(-half..half), rng.random_range(-half..half));

    let mut starts: Vec<Vec2<f64>> = Vec::with_capacity(n);
    let mut tries = 0;
    while starts.len() < n {
        if tries == MAX_PLACEMENT_TRIES {
            return Err(Error::ScenarioInfeasible(format!(
                "could not place {n} agents {min_gap} m apart in a {area} m square after {MAX_PLACEMENT_TRIES} draws"
            )));
        }
        tries += 1;
        let p = point(&mut rng);
        if starts.iter().all(|q| q.distance(p) >= min_gap) {
            starts.push(p);
        }
    }
    let agents = starts
        .into_iter()
        .map(|start| {
            let goal = point(&mut rng);
            let u: f64 = rng.random();
            let theta = std::f64::consts::PI - std::f64::consts::TAU * u;
            AgentSpec {
                start,
                theta,
                goal,
                radius: AGENT_RADIUS,
            }
        })
        .collect();
    Ok(Scenario { kind, seed, agents })
}
