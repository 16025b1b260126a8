//! ORCA-DD baseline: holonomic ORCA on an enlarged disk, tracked by a differential-drive
//! robot through a point offset ahead of its center.

use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentState, ControlBounds, ControlInput};
use crate::error::{Error, Result};
use crate::orca::{velocity_halfplane, Neighbor, OrcaParams, VelocityHalfPlane};
use crate::planner::NeighborTrack;
use crate::rng::{standard_normal, StreamKey};
use crate::scalar::Real;
use crate::vec2::Vec2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OrcaDdConfig<T> {
    /// Distance of the tracking point ahead of the robot center (meters).
    pub tracking_offset: T,
    /// Standard deviation of the jitter added to the goal direction.
    pub goal_jitter_std: T,
    pub preferred_speed: T,
    pub orca: OrcaParams<T>,
    pub dt: T,
}

impl<T: Real> Default for OrcaDdConfig<T> {
    fn default() -> Self {
        Self {
            tracking_offset: T::lit(0.3),
            goal_jitter_std: T::lit(0.3),
            preferred_speed: T::one(),
            orca: OrcaParams::default(),
            dt: T::lit(0.1),
        }
    }
}

impl<T: Real> OrcaDdConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.orca.validate()?;
        if !(self.tracking_offset > T::zero()) {
            return Err(Error::InvalidConfig("orca-dd tracking_offset must be positive".into()));
        }
        if self.goal_jitter_std < T::zero() || !(self.preferred_speed > T::zero()) || !(self.dt > T::zero()) {
            return Err(Error::InvalidConfig(
                "orca-dd needs goal_jitter_std >= 0, preferred_speed > 0 and dt > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Boundary line with the feasible side on the left of `direction`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Line<T> {
    point: Vec2<T>,
    direction: Vec2<T>,
}

impl<T: Real> Line<T> {
    fn from_halfplane(hp: &VelocityHalfPlane<T>) -> Self {
        Self {
            point: hp.point(),
            direction: hp.direction(),
        }
    }

    /// Positive when `v` lies on the infeasible side.
    fn violation(&self, v: Vec2<T>) -> T {
        self.direction.det(self.point - v)
    }
}

fn lp1<T: Real>(lines: &[Line<T>], no: usize, radius: T, opt: Vec2<T>, direction_opt: bool) -> Option<Vec2<T>> {
    let eps = T::solver_eps();
    let line = lines[no];
    let dot = line.point.dot(line.direction);
    let disc = dot * dot + radius * radius - line.point.norm_sq();
    if disc < T::zero() {
        return None;
    }
    let sq = disc.sqrt();
    let mut t_left = -dot - sq;
    let mut t_right = -dot + sq;
    for other in &lines[..no] {
        let denom = line.direction.det(other.direction);
        let numer = other.direction.det(line.point - other.point);
        if denom.abs() <= eps {
            if numer < T::zero() {
                return None;
            }
            continue;
        }
        let t = numer / denom;
        if denom >= T::zero() {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }
    let t = if direction_opt {
        if opt.dot(line.direction) > T::zero() {
            t_right
        } else {
            t_left
        }
    } else {
        line.direction.dot(opt - line.point).max(t_left).min(t_right)
    };
    Some(line.point + line.direction * t)
}

/// Closest point to `opt` (or farthest along `opt` when `direction_opt`) inside the disk
/// and all lines. On failure returns the index of the first line that could not be met
/// together with the best point so far.
fn lp2<T: Real>(lines: &[Line<T>], radius: T, opt: Vec2<T>, direction_opt: bool) -> (Vec2<T>, usize) {
    let mut result = if direction_opt {
        opt * radius
    } else if opt.norm_sq() > radius * radius {
        opt.normalized() * radius
    } else {
        opt
    };
    for i in 0..lines.len() {
        if lines[i].violation(result) > T::zero() {
            match lp1(lines, i, radius, opt, direction_opt) {
                Some(r) => result = r,
                None => return (result, i),
            }
        }
    }
    (result, lines.len())
}

/// Minimizes the largest violation over lines `begin..` when no feasible point exists.
fn lp3<T: Real>(lines: &[Line<T>], begin: usize, radius: T, mut result: Vec2<T>) -> Vec2<T> {
    let eps = T::solver_eps();
    let mut distance = T::zero();
    for i in begin..lines.len() {
        if lines[i].violation(result) > distance {
            let li = lines[i];
            let mut projected = Vec::with_capacity(i);
            for lj in &lines[..i] {
                let det = li.direction.det(lj.direction);
                let point = if det.abs() <= eps {
                    if li.direction.dot(lj.direction) > T::zero() {
                        continue;
                    }
                    (li.point + lj.point) * T::lit(0.5)
                } else {
                    li.point + li.direction * (lj.direction.det(li.point - lj.point) / det)
                };
                projected.push(Line {
                    point,
                    direction: (lj.direction - li.direction).normalized(),
                });
            }
            let (candidate, failed) = lp2(&projected, radius, Vec2::new(-li.direction.y, li.direction.x), true);
            if failed == projected.len() {
                result = candidate;
            }
            distance = lines[i].violation(result);
        }
    }
    result
}

/// Velocity within `radius` of the origin closest to `preferred` that satisfies every
/// half-plane, or the least-violation velocity if the intersection is empty.
pub fn solve_velocity_lp<T: Real>(halfplanes: &[VelocityHalfPlane<T>], radius: T, preferred: Vec2<T>) -> Vec2<T> {
    let lines: Vec<Line<T>> = halfplanes.iter().map(Line::from_halfplane).collect();
    let (result, failed) = lp2(&lines, radius, preferred, false);
    if failed < lines.len() {
        lp3(&lines, failed, radius, result)
    } else {
        result
    }
}

/// Controls that move the tracking point with world velocity `u`.
pub fn track_velocity<T: Real>(state: &AgentState<T>, u: Vec2<T>, offset: T, bounds: &ControlBounds<T>) -> ControlInput<T> {
    let (s, c) = state.theta.sin_cos();
    bounds.clamp(ControlInput::new(u.x * c + u.y * s, (-u.x * s + u.y * c) / offset))
}

/// One ORCA-DD command. `key` seeds the goal-direction jitter.
pub fn orca_dd_command<T: Real>(
    state: &AgentState<T>,
    radius: T,
    goal: Vec2<T>,
    tracks: &[NeighborTrack<T>],
    cfg: &OrcaDdConfig<T>,
    bounds: &ControlBounds<T>,
    key: StreamKey,
) -> ControlInput<T> {
    let p = state.position();
    let mut to_goal = goal - p;
    if to_goal.norm() > T::one() {
        to_goal = to_goal.normalized();
    }
    let mut rng = key.rng();
    let jx: T = standard_normal(&mut rng);
    let jy: T = standard_normal(&mut rng);
    let preferred = (to_goal + Vec2::new(jx, jy) * cfg.goal_jitter_std) * cfg.preferred_speed;

    let d = cfg.tracking_offset;
    let halfplanes: Vec<VelocityHalfPlane<T>> = tracks
        .iter()
        .map(|t| {
            let nb = Neighbor {
                rel_px: t.position.x - p.x,
                rel_py: t.position.y - p.y,
                vel_x: t.velocity.x,
                vel_y: t.velocity.y,
                radius: t.radius + d,
            };
            velocity_halfplane(state.velocity(), radius + d, &nb, &cfg.orca, cfg.dt).expect("validated radii")
        })
        .collect();
    let u = solve_velocity_lp(&halfplanes, cfg.preferred_speed, preferred);
    track_velocity(state, u, d, bounds)
}
