//! Sampling-based MPC primitives: rollout sampling, the trajectory cost functional,
//! exponential weighting and the receding-horizon update.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{step, AgentState, ControlBounds, ControlInput, NoiseModel};
use crate::error::{Error, Result};
use crate::projection::GaussianControl;
use crate::rng::{standard_normal, StreamKey};
use crate::scalar::Real;
use crate::vec2::Vec2;

/// Controls over the planning horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSequence<T>(pub Vec<ControlInput<T>>);

impl<T: Real> ControlSequence<T> {
    pub fn zeros(horizon: usize) -> Self {
        Self(vec![ControlInput::zero(); horizon])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> ControlInput<T> {
        self.0[0]
    }

    /// Drops the first control and repeats the last one.
    pub fn shift(&self) -> Self {
        let mut out: Vec<_> = self.0.iter().skip(1).copied().collect();
        if let Some(&last) = self.0.last() {
            out.push(last);
        }
        Self(out)
    }

    /// Trajectory obtained by applying the sequence from `start`.
    pub fn propagate(&self, start: &AgentState<T>, dt: T) -> Vec<AgentState<T>> {
        let mut states = Vec::with_capacity(self.len() + 1);
        states.push(*start);
        let mut x = *start;
        for &u in &self.0 {
            x = step(&x, u, dt);
            states.push(x);
        }
        states
    }
}

/// Per-step sampling distributions over the horizon.
pub type DistributionSequence<T> = Vec<GaussianControl<T>>;

/// Which nominal a rollout was drawn around.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Policy,
    Mppi,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout<T> {
    pub controls: ControlSequence<T>,
    /// Executed deviation from the branch mean after clamping.
    pub noise: Vec<[T; 2]>,
    /// `H + 1` states, starting with the current one.
    pub states: Vec<AgentState<T>>,
    pub cost: T,
    pub branch: Branch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MppiParams<T> {
    pub horizon: usize,
    /// Total rollouts per iteration.
    pub rollouts: usize,
    /// Rollouts drawn around the policy branch.
    pub policy_rollouts: usize,
    /// Inverse temperature of the exponential weighting.
    pub lambda: T,
    /// Control-cost weight.
    pub gamma: T,
    /// Scale of the nominal sampling covariance relative to the actuation noise.
    pub variance_scale: T,
}

impl<T: Real> Default for MppiParams<T> {
    fn default() -> Self {
        Self {
            horizon: 10,
            rollouts: 1500,
            policy_rollouts: 450,
            lambda: T::lit(0.1),
            gamma: T::lit(0.005),
            variance_scale: T::one(),
        }
    }
}

impl<T: Real> MppiParams<T> {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidConfig("mppi horizon must be at least 1".into()));
        }
        if self.policy_rollouts > self.rollouts {
            return Err(Error::InvalidConfig(format!(
                "policy_rollouts ({}) exceeds rollouts ({})",
                self.policy_rollouts, self.rollouts
            )));
        }
        if self.rollouts == 0 {
            return Err(Error::InvalidConfig("mppi needs at least one rollout".into()));
        }
        if !(self.lambda > T::zero()) {
            return Err(Error::InvalidConfig("mppi lambda must be positive".into()));
        }
        if self.gamma < T::zero() {
            return Err(Error::InvalidConfig("mppi gamma must be non-negative".into()));
        }
        if !(self.variance_scale > T::zero()) {
            return Err(Error::InvalidConfig("mppi variance_scale must be positive".into()));
        }
        Ok(())
    }

    /// Standard deviations of the nominal sampling distribution, `sqrt(K) sigma`.
    pub fn nominal_std(&self, noise: &NoiseModel<T>) -> [T; 2] {
        let s = self.variance_scale.sqrt();
        [s * noise.sigma_v, s * noise.sigma_w]
    }
}

/// Coefficients of the state-dependent cost terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights<T> {
    /// Per-step goal distance (per meter).
    pub goal: T,
    /// Numerator of the inverse distance to the nearest predicted neighbor.
    pub proximity: T,
    /// Distance floor of the proximity term (meters).
    pub proximity_floor: T,
    /// Per-step penalty while overlapping a predicted neighbor.
    pub collision: T,
    /// Per unit of negative linear velocity.
    pub reverse: T,
    /// Terminal goal distance (per meter).
    pub terminal_goal: T,
}

impl<T: Real> Default for CostWeights<T> {
    fn default() -> Self {
        Self {
            goal: T::one(),
            proximity: T::lit(0.5),
            proximity_floor: T::lit(0.05),
            collision: T::lit(1e3),
            reverse: T::lit(5.0),
            terminal_goal: T::lit(10.0),
        }
    }
}

/// Scene information the cost functional evaluates a trajectory against.
#[derive(Clone, Copy, Debug)]
pub struct CostContext<'a, T> {
    pub goal: Vec2<T>,
    /// Predicted neighbor positions, indexed `[step][neighbor]`, `H + 1` steps.
    pub neighbor_paths: &'a [Vec<Vec2<T>>],
    /// Neighbor radii, indexed like the inner vectors of `neighbor_paths`.
    pub neighbor_radii: &'a [T],
    pub self_radius: T,
    pub weights: &'a CostWeights<T>,
    pub exec_noise: &'a NoiseModel<T>,
}

/// Draws rollouts `indices` around `dist`. Rollout `k` uses the substream `key.child(k)`,
/// so any index range can be generated independently and in parallel.
pub fn sample_rollouts<T: Real>(
    dist: &[GaussianControl<T>],
    indices: Range<usize>,
    start: &AgentState<T>,
    bounds: &ControlBounds<T>,
    dt: T,
    key: StreamKey,
    branch: Branch,
) -> Vec<Rollout<T>> {
    indices
        .into_par_iter()
        .map(|k| sample_one(dist, start, bounds, dt, key.child(k as u64), branch))
        .collect()
}

fn sample_one<T: Real>(
    dist: &[GaussianControl<T>],
    start: &AgentState<T>,
    bounds: &ControlBounds<T>,
    dt: T,
    key: StreamKey,
    branch: Branch,
) -> Rollout<T> {
    let mut rng = key.rng();
    let h = dist.len();
    let mut controls = Vec::with_capacity(h);
    let mut noise = Vec::with_capacity(h);
    let mut states = Vec::with_capacity(h + 1);
    let mut x = *start;
    states.push(x);
    for g in dist {
        let zv: T = standard_normal(&mut rng);
        let zw: T = standard_normal(&mut rng);
        let u = bounds.clamp(ControlInput::new(
            g.mean.v + g.std[0] * zv,
            g.mean.w + g.std[1] * zw,
        ));
        noise.push([u.v - g.mean.v, u.w - g.mean.w]);
        controls.push(u);
        x = step(&x, u, dt);
        states.push(x);
    }
    Rollout {
        controls: ControlSequence(controls),
        noise,
        states,
        cost: T::zero(),
        branch,
    }
}

/// State-dependent running cost of one predicted state against the neighbors at that step.
fn state_cost<T: Real>(
    x: &AgentState<T>,
    u: ControlInput<T>,
    neighbors: Option<&Vec<Vec2<T>>>,
    ctx: &CostContext<'_, T>,
) -> T {
    let w = ctx.weights;
    let p = x.position();
    let mut c = w.goal * p.distance(ctx.goal);
    if let Some(nbs) = neighbors {
        let mut nearest = T::infinity();
        let mut colliding = false;
        for (q, &r) in nbs.iter().zip(ctx.neighbor_radii) {
            let d = p.distance(*q);
            nearest = nearest.min(d);
            colliding |= d < ctx.self_radius + r;
        }
        if nearest.is_finite() {
            c += w.proximity / nearest.max(w.proximity_floor);
        }
        if colliding {
            c += w.collision;
        }
    }
    if u.v < T::zero() {
        c -= w.reverse * u.v;
    }
    c
}

/// Trajectory cost: terminal goal distance plus, for every step `t`, the running cost of
/// the state reached by `u_t`, the control terms
/// `gamma/2 (u^T Sigma^-1 u + 2 u^T Sigma^-1 eps)` around the branch mean `u`, and the
/// importance term `lambda/2 eps^T (I - K_t^-1) Sigma^-1 eps` with
/// `K_t = diag(std_t^2) Sigma^-1` taken from the distribution the rollout was drawn from.
pub fn rollout_cost<T: Real>(
    r: &Rollout<T>,
    dist: &[GaussianControl<T>],
    ctx: &CostContext<'_, T>,
    params: &MppiParams<T>,
) -> T {
    let half = T::lit(0.5);
    let sigma_sq = [ctx.exec_noise.variance(0), ctx.exec_noise.variance(1)];
    let mut total = T::zero();
    for (t, (&u, eps)) in r.controls.0.iter().zip(&r.noise).enumerate() {
        total += state_cost(&r.states[t + 1], u, ctx.neighbor_paths.get(t + 1), ctx);
        let mean = [u.v - eps[0], u.w - eps[1]];
        let std = dist[t].std;
        let mut quad = T::zero();
        let mut cross = T::zero();
        let mut importance = T::zero();
        for k in 0..2 {
            let inv = sigma_sq[k].recip();
            quad += mean[k] * inv * mean[k];
            cross += mean[k] * inv * eps[k];
            let s_sq = std[k] * std[k];
            if s_sq > T::zero() {
                importance += (T::one() - sigma_sq[k] / s_sq) * inv * eps[k] * eps[k];
            }
        }
        total += params.gamma * half * (quad + cross + cross) + params.lambda * half * importance;
    }
    if let Some(last) = r.states.last() {
        total += ctx.weights.terminal_goal * last.position().distance(ctx.goal);
    }
    total
}

/// Normalized exponential weights `exp(-(S_k - min S) / lambda)`.
pub fn weights<T: Real>(costs: &[T], lambda: T) -> Vec<T> {
    let min = costs.iter().copied().fold(T::infinity(), T::min);
    let raw: Vec<T> = costs.iter().map(|&c| (-(c - min) / lambda).exp()).collect();
    let total: T = raw.iter().copied().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Weighted average of the rollout controls per step, clamped to `bounds`.
pub fn weighted_update<T: Real>(
    rollouts: &[Rollout<T>],
    w: &[T],
    bounds: &ControlBounds<T>,
) -> ControlSequence<T> {
    assert_eq!(rollouts.len(), w.len(), "one weight per rollout");
    let h = rollouts.first().map_or(0, |r| r.controls.len());
    let mut acc = vec![ControlInput::zero(); h];
    for (r, &wk) in rollouts.iter().zip(w) {
        for (a, u) in acc.iter_mut().zip(&r.controls.0) {
            a.v += wk * u.v;
            a.w += wk * u.w;
        }
    }
    ControlSequence(acc.into_iter().map(|u| bounds.clamp(u)).collect())
}

/// Evaluates costs for every rollout in place.
pub fn evaluate_costs<T: Real>(
    rollouts: &mut [Rollout<T>],
    policy_dist: &[GaussianControl<T>],
    mppi_dist: &[GaussianControl<T>],
    ctx: &CostContext<'_, T>,
    params: &MppiParams<T>,
) {
    rollouts.par_iter_mut().for_each(|r| {
        let dist = match r.branch {
            Branch::Policy => policy_dist,
            Branch::Mppi => mppi_dist,
        };
        r.cost = rollout_cost(r, dist, ctx, params);
    });
}

/// Output of one MPPI iteration.
#[derive(Clone, Debug)]
pub struct MppiUpdate<T> {
    pub optimal: ControlSequence<T>,
    pub next_init: ControlSequence<T>,
    pub rollouts: Vec<Rollout<T>>,
    pub weights: Vec<T>,
}

/// Plain single-branch MPPI iteration around `u_init` with the nominal spread:
/// sample, evaluate, weight, average and shift.
#[allow(clippy::too_many_arguments)]
pub fn mppi_iteration<T: Real>(
    start: &AgentState<T>,
    u_init: &ControlSequence<T>,
    ctx: &CostContext<'_, T>,
    params: &MppiParams<T>,
    bounds: &ControlBounds<T>,
    dt: T,
    key: StreamKey,
) -> MppiUpdate<T> {
    let std = params.nominal_std(ctx.exec_noise);
    let dist: DistributionSequence<T> = u_init
        .0
        .iter()
        .map(|&u| GaussianControl::new(u, std))
        .collect();
    let mut rollouts = sample_rollouts(&dist, 0..params.rollouts, start, bounds, dt, key, Branch::Mppi);
    evaluate_costs(&mut rollouts, &dist, &dist, ctx, params);
    let costs: Vec<T> = rollouts.iter().map(|r| r.cost).collect();
    let w = weights(&costs, params.lambda);
    let optimal = weighted_update(&rollouts, &w, bounds);
    let next_init = optimal.shift();
    MppiUpdate {
        optimal,
        next_init,
        rollouts,
        weights: w,
    }
}
