//! Reciprocal velocity half-planes and their reduction to control constraints.
//!
//! For each neighbor the truncated velocity obstacle is built in world-velocity space
//! and the agent takes its share of the smallest change that leaves it. The resulting
//! half-plane `n . v <= b` is then mapped onto the differential-drive control `(v, w)`
//! with the heading frozen at its current value, which gives a constraint on the
//! linear velocity only.

use serde::{Deserialize, Serialize};

use crate::dynamics::AgentState;
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::vec2::Vec2;

/// Coefficients below this magnitude make a control constraint vacuous.
pub const VACUITY_THRESHOLD: f64 = 1e-12;

/// A perceived neighbor, relative to the agent building constraints.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor<T> {
    pub rel_px: T,
    pub rel_py: T,
    pub vel_x: T,
    pub vel_y: T,
    pub radius: T,
}

impl<T: Real> Neighbor<T> {
    pub fn rel_position(&self) -> Vec2<T> {
        Vec2::new(self.rel_px, self.rel_py)
    }

    pub fn velocity(&self) -> Vec2<T> {
        Vec2::new(self.vel_x, self.vel_y)
    }
}

/// Linear constraint `a^T u <= b` on the control `u = (v, w)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfPlaneConstraint<T> {
    pub a: [T; 2],
    pub b: T,
}

impl<T: Real> HalfPlaneConstraint<T> {
    pub fn new(a: [T; 2], b: T) -> Self {
        Self { a, b }
    }

    /// `a^T u - b`; positive when violated.
    pub fn slack(&self, u: [T; 2]) -> T {
        self.a[0] * u[0] + self.a[1] * u[1] - self.b
    }

    pub fn is_vacuous(&self) -> bool {
        let thr = T::lit(VACUITY_THRESHOLD);
        self.a[0].abs() < thr && self.a[1].abs() < thr
    }
}

/// Half-plane `normal . v <= offset` in world-velocity space; `normal` is unit length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VelocityHalfPlane<T> {
    pub normal: Vec2<T>,
    pub offset: T,
}

impl<T: Real> VelocityHalfPlane<T> {
    pub fn contains(&self, v: Vec2<T>, tol: T) -> bool {
        self.normal.dot(v) <= self.offset + tol
    }

    /// Signed violation of `v`; non-positive inside.
    pub fn violation(&self, v: Vec2<T>) -> T {
        self.normal.dot(v) - self.offset
    }

    /// A point on the boundary line.
    pub fn point(&self) -> Vec2<T> {
        self.normal * self.offset
    }

    /// Direction along the boundary with the feasible side on its left.
    pub fn direction(&self) -> Vec2<T> {
        Vec2::new(-self.normal.y, self.normal.x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrcaParams<T> {
    /// Avoidance horizon in seconds.
    pub tau: T,
    /// Share of the avoidance effort this agent takes, in `(0, 1]`.
    pub reciprocity: T,
    /// Added to each agent's radius in every computation (meters).
    pub radius_buffer: T,
}

impl<T: Real> Default for OrcaParams<T> {
    fn default() -> Self {
        Self {
            tau: T::lit(2.0),
            reciprocity: T::lit(0.5),
            radius_buffer: T::lit(0.01),
        }
    }
}

impl<T: Real> OrcaParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > T::zero()) {
            return Err(Error::InvalidConfig(format!("orca tau must be positive, got {}", self.tau)));
        }
        if !(self.reciprocity > T::zero() && self.reciprocity <= T::one()) {
            return Err(Error::InvalidConfig(format!(
                "orca reciprocity must lie in (0, 1], got {}",
                self.reciprocity
            )));
        }
        if self.radius_buffer < T::zero() {
            return Err(Error::InvalidConfig("orca radius_buffer must be non-negative".into()));
        }
        Ok(())
    }
}

/// ORCA half-plane for the agent's own world velocity with respect to one neighbor.
///
/// If both agents keep velocities inside their reciprocal half-planes, they stay at least
/// `self_radius + nb.radius + 2 * radius_buffer` apart for `tau` seconds. When the pair
/// already overlaps, the constraint instead asks for separation within one `dt`.
pub fn velocity_halfplane<T: Real>(
    self_vel: Vec2<T>,
    self_radius: T,
    nb: &Neighbor<T>,
    params: &OrcaParams<T>,
    dt: T,
) -> Result<VelocityHalfPlane<T>> {
    let r = self_radius + nb.radius + params.radius_buffer + params.radius_buffer;
    if !(r > T::zero()) {
        return Err(Error::NonPositiveRadius(r.as_f64()));
    }
    let rel_pos = nb.rel_position();
    let rel_vel = self_vel - nb.velocity();
    let dist_sq = rel_pos.norm_sq();
    let r_sq = r * r;

    // Boundary direction (feasible side on the left) and the smallest change `u` of the
    // relative velocity that leaves the velocity obstacle.
    let (direction, u) = if dist_sq > r_sq {
        let inv_tau = params.tau.recip();
        let w = rel_vel - rel_pos * inv_tau;
        let w_len_sq = w.norm_sq();
        let dot1 = w.dot(rel_pos);
        if dot1 < T::zero() && dot1 * dot1 > r_sq * w_len_sq {
            // Closest boundary point is on the cutoff circle.
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            (
                Vec2::new(unit_w.y, -unit_w.x),
                unit_w * (r * inv_tau - w_len),
            )
        } else {
            // Closest boundary point is on one of the legs.
            let leg = (dist_sq - r_sq).sqrt();
            let direction = if rel_pos.det(w) > T::zero() {
                Vec2::new(
                    rel_pos.x * leg - rel_pos.y * r,
                    rel_pos.x * r + rel_pos.y * leg,
                ) / dist_sq
            } else {
                -Vec2::new(
                    rel_pos.x * leg + rel_pos.y * r,
                    -rel_pos.x * r + rel_pos.y * leg,
                ) / dist_sq
            };
            let dot2 = rel_vel.dot(direction);
            (direction, direction * dot2 - rel_vel)
        }
    } else {
        // Already overlapping: resolve within one step.
        let inv_dt = dt.recip();
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.norm();
        let unit_w = if w_len > T::zero() {
            w / w_len
        } else {
            -rel_pos.normalized()
        };
        (
            Vec2::new(unit_w.y, -unit_w.x),
            unit_w * (r * inv_dt - w_len),
        )
    };

    let point = self_vel + u * params.reciprocity;
    // det(direction, v - point) >= 0  <=>  n . v <= n . point with n = (d.y, -d.x).
    let normal = Vec2::new(direction.y, -direction.x);
    Ok(VelocityHalfPlane {
        normal,
        offset: normal.dot(point),
    })
}

/// Restricts a velocity half-plane to the linear-velocity coordinate at heading `theta`.
pub fn to_control_constraint<T: Real>(
    hp: &VelocityHalfPlane<T>,
    self_state: &AgentState<T>,
) -> HalfPlaneConstraint<T> {
    let (s, c) = self_state.theta.sin_cos();
    HalfPlaneConstraint {
        a: [hp.normal.x * c + hp.normal.y * s, T::zero()],
        b: hp.offset,
    }
}

/// One control constraint per neighbor; constraints whose coefficients vanish at the
/// current heading are dropped.
pub fn constraints_for_agent<T: Real>(
    self_state: &AgentState<T>,
    self_vel: Vec2<T>,
    self_radius: T,
    neighbors: &[Neighbor<T>],
    params: &OrcaParams<T>,
    dt: T,
) -> Result<Vec<HalfPlaneConstraint<T>>> {
    let mut out = Vec::with_capacity(neighbors.len());
    for nb in neighbors {
        let hp = velocity_halfplane(self_vel, self_radius, nb, params, dt)?;
        let c = to_control_constraint(&hp, self_state);
        if !c.is_vacuous() {
            out.push(c);
        }
    }
    Ok(out)
}
