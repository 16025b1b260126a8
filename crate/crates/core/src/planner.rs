//! Policy-guided, chance-constrained MPPI planning for one agent.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{step, AgentState, ControlBounds, ControlInput, NoiseModel};
use crate::error::{Error, Result};
use crate::mppi::{
    evaluate_costs, sample_rollouts, weighted_update, weights, Branch, ControlSequence, CostContext,
    CostWeights, DistributionSequence, MppiParams, Rollout,
};
use crate::orca::{constraints_for_agent, Neighbor, OrcaParams};
use crate::policy::{build_observation, GuidancePolicy, MlpPolicy, ProxyPolicy};
use crate::projection::{project, GaussianControl, ProjectionProblem, ProjectionStatus, SafetyLevels};
use crate::rng::StreamKey;
use crate::scalar::Real;
use crate::vec2::Vec2;

/// Which guidance policy drives the policy branch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyChoice {
    #[default]
    None,
    Proxy,
    Mlp { weights: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig<T> {
    pub mppi: MppiParams<T>,
    /// Number of leading steps whose distributions are projected.
    pub h_safe: usize,
    /// When false no safety constraints are built (plain MPPI).
    pub constraints: bool,
    pub orca: OrcaParams<T>,
    pub levels: SafetyLevels<T>,
    /// Cost of changing a sampling spread relative to moving the mean in the projection.
    pub spread_weight: T,
    pub cost: CostWeights<T>,
    pub planner_dt: T,
    pub exec_noise: NoiseModel<T>,
    pub bounds: ControlBounds<T>,
    pub policy: PolicyChoice,
}

impl<T: Real> Default for PlannerConfig<T> {
    fn default() -> Self {
        Self::corl_mppi()
    }
}

impl<T: Real> PlannerConfig<T> {
    /// Policy-guided planner: H = 10, K = 1500, 30% of rollouts around the policy.
    pub fn corl_mppi() -> Self {
        let mppi = MppiParams::default();
        Self {
            h_safe: mppi.horizon,
            mppi,
            constraints: true,
            orca: OrcaParams::default(),
            levels: SafetyLevels::default(),
            spread_weight: T::lit(4.0),
            cost: CostWeights::default(),
            planner_dt: T::lit(0.1),
            exec_noise: NoiseModel::standard(),
            bounds: ControlBounds::standard(),
            policy: PolicyChoice::Proxy,
        }
    }

    /// Chance-constrained MPPI without guidance: H = 30, K = 1500.
    pub fn mppi_orca() -> Self {
        let mut cfg = Self::corl_mppi();
        cfg.mppi.horizon = 30;
        cfg.mppi.policy_rollouts = 0;
        cfg.h_safe = 30;
        cfg.policy = PolicyChoice::None;
        cfg
    }

    /// Unconstrained single-branch MPPI.
    pub fn vanilla_mppi() -> Self {
        let mut cfg = Self::corl_mppi();
        cfg.mppi.policy_rollouts = 0;
        cfg.constraints = false;
        cfg.policy = PolicyChoice::None;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.mppi.validate()?;
        self.orca.validate()?;
        self.levels.validate()?;
        if self.h_safe < 1 || self.h_safe > self.mppi.horizon {
            return Err(Error::InvalidConfig(format!(
                "h_safe must lie in [1, horizon = {}], got {}",
                self.mppi.horizon, self.h_safe
            )));
        }
        if self.policy == PolicyChoice::None && self.mppi.policy_rollouts != 0 {
            return Err(Error::InvalidConfig(
                "policy_rollouts must be 0 when no policy is configured".into(),
            ));
        }
        if !(self.planner_dt > T::zero()) {
            return Err(Error::InvalidConfig("planner_dt must be positive".into()));
        }
        if !self.exec_noise.is_valid() {
            return Err(Error::InvalidConfig("noise standard deviations must be positive".into()));
        }
        if !self.bounds.is_valid() {
            return Err(Error::InvalidConfig("control bounds need min < max".into()));
        }
        if !(self.spread_weight > T::zero()) {
            return Err(Error::InvalidConfig("spread_weight must be positive".into()));
        }
        if !(self.cost.proximity_floor > T::zero()) {
            return Err(Error::InvalidConfig("cost proximity_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Observed neighbor, extrapolated at constant velocity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborTrack<T> {
    pub position: Vec2<T>,
    pub velocity: Vec2<T>,
    pub radius: T,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanDiagnostics<T> {
    /// Per step; `None` where no projection ran.
    pub policy_status: Vec<Option<ProjectionStatus>>,
    pub mppi_status: Vec<Option<ProjectionStatus>>,
    /// Closest approach of the planned trajectory to the predicted neighbors.
    pub min_predicted_distance: Option<T>,
    pub policy_samples: usize,
    pub mppi_samples: usize,
}

impl<T> PlanDiagnostics<T> {
    pub fn fallback_count(&self) -> usize {
        self.policy_status
            .iter()
            .chain(&self.mppi_status)
            .filter(|s| **s == Some(ProjectionStatus::InfeasibleFallback))
            .count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanResult<T> {
    pub command: ControlInput<T>,
    pub optimal: ControlSequence<T>,
    pub next_init: ControlSequence<T>,
    /// Projected per-step distributions the rollouts were drawn from.
    pub policy_dist: DistributionSequence<T>,
    pub mppi_dist: DistributionSequence<T>,
    pub diagnostics: PlanDiagnostics<T>,
}

/// Positions at steps `0..=horizon`, indexed `[step][track]`.
pub fn predict_neighbors<T: Real>(tracks: &[NeighborTrack<T>], horizon: usize, dt: T) -> Vec<Vec<Vec2<T>>> {
    let mut out = Vec::with_capacity(horizon + 1);
    let mut current: Vec<Vec2<T>> = tracks.iter().map(|t| t.position).collect();
    out.push(current.clone());
    for _ in 0..horizon {
        for (p, t) in current.iter_mut().zip(tracks) {
            *p += t.velocity * dt;
        }
        out.push(current.clone());
    }
    out
}

pub fn bootstrap_sequence<T: Real>(horizon: usize) -> ControlSequence<T> {
    ControlSequence::zeros(horizon)
}

/// A configured planner with its guidance policy loaded.
#[derive(Clone)]
pub struct Planner<T: Real> {
    cfg: PlannerConfig<T>,
    policy: Option<Arc<dyn GuidancePolicy<T>>>,
}

impl<T: Real> std::fmt::Debug for Planner<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Planner").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

impl<T: Real> Planner<T> {
    pub fn new(cfg: PlannerConfig<T>) -> Result<Self> {
        cfg.validate()?;
        let policy: Option<Arc<dyn GuidancePolicy<T>>> = match &cfg.policy {
            PolicyChoice::None => None,
            PolicyChoice::Proxy => Some(Arc::new(ProxyPolicy::<T>::default())),
            PolicyChoice::Mlp { weights } => Some(Arc::new(MlpPolicy::load(weights)?)),
        };
        Ok(Self { cfg, policy })
    }

    /// Uses `policy` for the policy branch regardless of `cfg.policy`.
    pub fn with_policy(cfg: PlannerConfig<T>, policy: Arc<dyn GuidancePolicy<T>>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            policy: Some(policy),
        })
    }

    pub fn config(&self) -> &PlannerConfig<T> {
        &self.cfg
    }

    pub fn horizon(&self) -> usize {
        self.cfg.mppi.horizon
    }

    pub fn plan(
        &self,
        state: &AgentState<T>,
        radius: T,
        goal: Vec2<T>,
        u_init: &ControlSequence<T>,
        tracks: &[NeighborTrack<T>],
        key: StreamKey,
    ) -> PlanResult<T> {
        plan(state, radius, goal, u_init, tracks, &self.cfg, self.policy.as_deref(), key)
    }
}

fn fit_length<T: Real>(u: &ControlSequence<T>, horizon: usize) -> ControlSequence<T> {
    let mut v = u.0.clone();
    let pad = v.last().copied().unwrap_or_else(ControlInput::zero);
    v.resize(horizon, pad);
    ControlSequence(v)
}

struct BranchStep<T> {
    dist: GaussianControl<T>,
    status: Option<ProjectionStatus>,
}

fn safe_distribution<T: Real>(
    nominal: GaussianControl<T>,
    x: &AgentState<T>,
    radius: T,
    neighbors: &[Neighbor<T>],
    cfg: &PlannerConfig<T>,
) -> BranchStep<T> {
    let constraints = constraints_for_agent(x, x.velocity(), radius, neighbors, &cfg.orca, cfg.planner_dt)
        .expect("validated radii");
    if constraints.is_empty() {
        return BranchStep {
            dist: nominal,
            status: None,
        };
    }
    let problem = ProjectionProblem {
        exec_noise: &cfg.exec_noise,
        constraints: &constraints,
        bounds: &cfg.bounds,
        levels: &cfg.levels,
        spread_weight: cfg.spread_weight,
    };
    let res = project(&nominal, &problem);
    let dist = if res.status == ProjectionStatus::InfeasibleFallback {
        GaussianControl::new(ControlInput::new(T::zero(), nominal.mean.w), [T::zero(); 2])
    } else {
        res.adjusted
    };
    BranchStep {
        dist,
        status: Some(res.status),
    }
}

/// One planning iteration for an agent. `key` determines every random draw: rollout `k`
/// (policy branch first, then the MPPI branch) uses `key.child(k)`.
#[allow(clippy::too_many_arguments)]
pub fn plan<T: Real>(
    state: &AgentState<T>,
    radius: T,
    goal: Vec2<T>,
    u_init: &ControlSequence<T>,
    tracks: &[NeighborTrack<T>],
    cfg: &PlannerConfig<T>,
    policy: Option<&dyn GuidancePolicy<T>>,
    key: StreamKey,
) -> PlanResult<T> {
    let h = cfg.mppi.horizon;
    let dt = cfg.planner_dt;
    let u_init = fit_length(u_init, h);
    let predicted = predict_neighbors(tracks, h, dt);
    let nominal_std = cfg.mppi.nominal_std(&cfg.exec_noise);
    let policy = if cfg.mppi.policy_rollouts > 0 { policy } else { None };

    let mut diagnostics = PlanDiagnostics {
        policy_status: vec![None; h],
        mppi_status: vec![None; h],
        ..Default::default()
    };
    let mut policy_dist = Vec::with_capacity(if policy.is_some() { h } else { 0 });
    let mut mppi_dist = Vec::with_capacity(h);
    let mut x_pi = *state;
    let mut x_mppi = *state;

    let neighbors_of = |x: &AgentState<T>, t: usize| -> Vec<Neighbor<T>> {
        let p = x.position();
        predicted[t]
            .iter()
            .zip(tracks)
            .map(|(q, tr)| Neighbor {
                rel_px: q.x - p.x,
                rel_py: q.y - p.y,
                vel_x: tr.velocity.x,
                vel_y: tr.velocity.y,
                radius: tr.radius,
            })
            .collect()
    };

    for t in 1..=h {
        let guarded = cfg.constraints && t <= cfg.h_safe && !tracks.is_empty();

        if let Some(pi) = policy {
            let obs = build_observation(&x_pi, goal, &predicted[t - 1], pi.k_neighbors(), pi.sense_range());
            let nominal = pi.act(&obs, &cfg.bounds);
            let s = if guarded {
                safe_distribution(nominal, &x_pi, radius, &neighbors_of(&x_pi, t - 1), cfg)
            } else {
                BranchStep { dist: nominal, status: None }
            };
            diagnostics.policy_status[t - 1] = s.status;
            x_pi = step(&x_pi, cfg.bounds.clamp(s.dist.mean), dt);
            policy_dist.push(s.dist);
        }

        let nominal = GaussianControl::new(u_init.0[t - 1], nominal_std);
        let s = if guarded {
            safe_distribution(nominal, &x_mppi, radius, &neighbors_of(&x_mppi, t - 1), cfg)
        } else {
            BranchStep { dist: nominal, status: None }
        };
        diagnostics.mppi_status[t - 1] = s.status;
        x_mppi = step(&x_mppi, cfg.bounds.clamp(s.dist.mean), dt);
        mppi_dist.push(s.dist);
    }

    let k_pi = if policy.is_some() { cfg.mppi.policy_rollouts } else { 0 };
    let k = cfg.mppi.rollouts;
    let mut rollouts: Vec<Rollout<T>> = Vec::with_capacity(k);
    if k_pi > 0 {
        rollouts.extend(sample_rollouts(&policy_dist, 0..k_pi, state, &cfg.bounds, dt, key, Branch::Policy));
    }
    rollouts.extend(sample_rollouts(&mppi_dist, k_pi..k, state, &cfg.bounds, dt, key, Branch::Mppi));
    diagnostics.policy_samples = k_pi;
    diagnostics.mppi_samples = k - k_pi;

    let buffer = cfg.orca.radius_buffer;
    let radii: Vec<T> = tracks.iter().map(|t| t.radius + buffer).collect();
    let ctx = CostContext {
        goal,
        neighbor_paths: &predicted,
        neighbor_radii: &radii,
        self_radius: radius + buffer,
        weights: &cfg.cost,
        exec_noise: &cfg.exec_noise,
    };
    evaluate_costs(&mut rollouts, &policy_dist, &mppi_dist, &ctx, &cfg.mppi);
    let costs: Vec<T> = rollouts.iter().map(|r| r.cost).collect();
    let w = weights(&costs, cfg.mppi.lambda);
    let optimal = weighted_update(&rollouts, &w, &cfg.bounds);

    if !tracks.is_empty() {
        let planned = optimal.propagate(state, dt);
        let closest = planned
            .iter()
            .zip(&predicted)
            .flat_map(|(x, nbs)| nbs.iter().map(move |q| x.position().distance(*q)))
            .fold(T::infinity(), T::min);
        diagnostics.min_predicted_distance = Some(closest);
    }

    PlanResult {
        command: optimal.first(),
        next_init: optimal.shift(),
        optimal,
        policy_dist,
        mppi_dist,
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mppi::mppi_iteration;
    use crate::projection::violation_probability;

    #[test]
    fn predict_examples() {
        let still = [NeighborTrack { position: Vec2::new(1.0, 2.0), velocity: Vec2::zero(), radius: 0.3 }];
        let p = predict_neighbors(&still, 3, 0.1);
        assert!(p.iter().all(|s| s == &vec![Vec2::new(1.0, 2.0)]));

        let moving = [NeighborTrack { position: Vec2::zero(), velocity: Vec2::new(1.0, 0.0), radius: 0.3 }];
        let p = predict_neighbors(&moving, 3, 0.1);
        let xs: Vec<f64> = p.iter().map(|s| s[0].x).collect();
        for (x, e) in xs.iter().zip([0.0, 0.1, 0.2, 0.3]) {
            assert!((x - e).abs() < 1e-15);
        }

        let none = predict_neighbors::<f64>(&[], 4, 0.1);
        assert_eq!(none.len(), 5);
        assert!(none.iter().all(Vec::is_empty));
    }

    #[test]
    fn bootstrap_examples() {
        let b = bootstrap_sequence::<f64>(10);
        assert_eq!(b.0, vec![ControlInput::zero(); 10]);
        assert_eq!(bootstrap_sequence::<f64>(1).len(), 1);
        assert_eq!(b.shift(), b);
    }

    #[test]
    fn config_validation() {
        assert!(PlannerConfig::<f64>::corl_mppi().validate().is_ok());
        assert!(PlannerConfig::<f64>::mppi_orca().validate().is_ok());
        assert!(PlannerConfig::<f64>::vanilla_mppi().validate().is_ok());
        let mut c = PlannerConfig::<f64>::corl_mppi();
        c.h_safe = 11;
        assert!(c.validate().is_err());
        let mut c = PlannerConfig::<f64>::corl_mppi();
        c.mppi.policy_rollouts = 1501;
        assert!(c.validate().is_err());
        let mut c = PlannerConfig::<f64>::vanilla_mppi();
        c.mppi.policy_rollouts = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn reduces_to_plain_mppi() {
        let mut cfg = PlannerConfig::<f64>::vanilla_mppi();
        cfg.mppi.rollouts = 200;
        cfg.constraints = true;
        let state = AgentState::at_rest(0.3, -0.2, 0.4);
        let goal = Vec2::new(4.0, 1.0);
        let u0 = ControlSequence(vec![ControlInput::new(0.2, 0.1); 10]);
        let key = StreamKey::root(11);
        let res = plan(&state, 0.3, goal, &u0, &[], &cfg, None, key);
        let ctx = CostContext {
            goal,
            neighbor_paths: &[],
            neighbor_radii: &[],
            self_radius: 0.31,
            weights: &cfg.cost,
            exec_noise: &cfg.exec_noise,
        };
        let plain = mppi_iteration(&state, &u0, &ctx, &cfg.mppi, &cfg.bounds, cfg.planner_dt, key);
        assert_eq!(res.optimal, plain.optimal);
        assert_eq!(res.next_init, plain.next_init);
    }

    #[test]
    fn unobstructed_branches_keep_their_nominals() {
        let cfg = PlannerConfig::<f64>::corl_mppi();
        let planner = Planner::new(cfg.clone()).unwrap();
        let state = AgentState::at_rest(0.0, 0.0, 0.0);
        let res = planner.plan(&state, 0.3, Vec2::new(0.0, 5.0), &bootstrap_sequence(10), &[], StreamKey::root(2));
        assert!(res.diagnostics.policy_status.iter().all(Option::is_none));
        assert!(res.diagnostics.mppi_status.iter().all(Option::is_none));
        assert_eq!((res.diagnostics.policy_samples, res.diagnostics.mppi_samples), (450, 1050));
        // Goal is to the left: the policy turns toward it and so does the command.
        assert!(res.policy_dist[0].mean.w > 0.0);
        assert!(res.command.w > 0.0);
        assert!(cfg.bounds.contains(res.command));
    }

    #[test]
    fn head_on_first_step_is_chance_safe() {
        let mut cfg = PlannerConfig::<f64>::corl_mppi();
        cfg.h_safe = 5;
        let state = AgentState { px: 0.0, py: 0.0, theta: 0.0, vx: 1.0, vy: 0.0 };
        let tracks = [NeighborTrack { position: Vec2::new(2.0, 0.0), velocity: Vec2::new(-1.0, 0.0), radius: 0.3 }];
        let u0 = ControlSequence(vec![ControlInput::new(1.0, 0.0); 10]);
        let res = plan(&state, 0.3, Vec2::new(5.0, 0.0), &u0, &tracks, &cfg, Some(&ProxyPolicy::default()), StreamKey::root(5));
        let nb = [Neighbor { rel_px: 2.0, rel_py: 0.0, vel_x: -1.0, vel_y: 0.0, radius: 0.3 }];
        let cons = constraints_for_agent(&state, state.velocity(), 0.3, &nb, &cfg.orca, 0.1).unwrap();
        assert_eq!(cons.len(), 1);
        for (dist, status) in [
            (res.policy_dist[0], res.diagnostics.policy_status[0]),
            (res.mppi_dist[0], res.diagnostics.mppi_status[0]),
        ] {
            assert!(status.is_some());
            if status != Some(ProjectionStatus::InfeasibleFallback) {
                assert!(violation_probability(&dist, &cons[0]) <= 0.05 + 1e-9);
            }
        }
        assert!(res.diagnostics.min_predicted_distance.is_some());
    }
}
