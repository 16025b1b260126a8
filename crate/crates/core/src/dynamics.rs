//! Differential-drive kinematics, control bounds and actuation noise.
//!
//! The same affine model `x' = F(x) + G(x) u` drives planner rollouts and the simulator.
//! Position is displaced using the heading at the start of the step.

use serde::{Deserialize, Serialize};

use crate::rng::standard_normal;
use crate::scalar::{wrap_angle, Real};
use crate::vec2::Vec2;

/// Pose of one robot plus the world-frame velocity realized over the last step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentState<T> {
    pub px: T,
    pub py: T,
    pub theta: T,
    pub vx: T,
    pub vy: T,
}

impl<T: Real> AgentState<T> {
    /// A robot at rest. The heading is wrapped.
    pub fn at_rest(px: T, py: T, theta: T) -> Self {
        Self {
            px,
            py,
            theta: wrap_angle(theta),
            vx: T::zero(),
            vy: T::zero(),
        }
    }

    #[inline]
    pub fn position(&self) -> Vec2<T> {
        Vec2::new(self.px, self.py)
    }

    #[inline]
    pub fn velocity(&self) -> Vec2<T> {
        Vec2::new(self.vx, self.vy)
    }

    #[inline]
    pub fn heading(&self) -> Vec2<T> {
        Vec2::from_angle(self.theta)
    }
}

/// Linear and angular velocity command.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput<T> {
    pub v: T,
    pub w: T,
}

impl<T: Real> ControlInput<T> {
    #[inline]
    pub fn new(v: T, w: T) -> Self {
        Self { v, w }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    #[inline]
    pub fn get(&self, k: usize) -> T {
        match k {
            0 => self.v,
            1 => self.w,
            _ => panic!("control coordinate {k} out of range"),
        }
    }

    #[inline]
    pub fn set(&mut self, k: usize, value: T) {
        match k {
            0 => self.v = value,
            1 => self.w = value,
            _ => panic!("control coordinate {k} out of range"),
        }
    }

    pub fn to_array(self) -> [T; 2] {
        [self.v, self.w]
    }

    pub fn from_array(a: [T; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds<T> {
    pub v_min: T,
    pub v_max: T,
    pub w_min: T,
    pub w_max: T,
}

impl<T: Real> ControlBounds<T> {
    /// Differential-drive limits used throughout the evaluation: |v| <= 1 m/s, |w| <= 2 rad/s.
    pub fn standard() -> Self {
        Self {
            v_min: T::lit(-1.0),
            v_max: T::lit(1.0),
            w_min: T::lit(-2.0),
            w_max: T::lit(2.0),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.v_min < self.v_max && self.w_min < self.w_max
    }

    #[inline]
    pub fn lower(&self, k: usize) -> T {
        if k == 0 {
            self.v_min
        } else {
            self.w_min
        }
    }

    #[inline]
    pub fn upper(&self, k: usize) -> T {
        if k == 0 {
            self.v_max
        } else {
            self.w_max
        }
    }

    #[inline]
    pub fn clamp(&self, u: ControlInput<T>) -> ControlInput<T> {
        ControlInput::new(
            u.v.max(self.v_min).min(self.v_max),
            u.w.max(self.w_min).min(self.w_max),
        )
    }

    pub fn contains(&self, u: ControlInput<T>) -> bool {
        u.v >= self.v_min && u.v <= self.v_max && u.w >= self.w_min && u.w <= self.w_max
    }
}

/// Diagonal actuation noise, `Sigma = diag(sigma_v^2, sigma_w^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel<T> {
    pub sigma_v: T,
    pub sigma_w: T,
}

impl<T: Real> NoiseModel<T> {
    /// `Sigma = diag(0.1 m/s, 0.2 rad/s)^2`.
    pub fn standard() -> Self {
        Self {
            sigma_v: T::lit(0.1),
            sigma_w: T::lit(0.2),
        }
    }

    #[inline]
    pub fn std(&self, k: usize) -> T {
        if k == 0 {
            self.sigma_v
        } else {
            self.sigma_w
        }
    }

    #[inline]
    pub fn variance(&self, k: usize) -> T {
        let s = self.std(k);
        s * s
    }

    pub fn is_valid(&self) -> bool {
        self.sigma_v > T::zero() && self.sigma_w > T::zero()
    }
}

/// Advances one step: `p += dt * v * (cos theta, sin theta)`, `theta += dt * w`.
pub fn step<T: Real>(state: &AgentState<T>, u: ControlInput<T>, dt: T) -> AgentState<T> {
    let [px, py, theta] = affine_terms(state, dt).apply(u);
    AgentState {
        px,
        py,
        theta,
        vx: (px - state.px) / dt,
        vy: (py - state.py) / dt,
    }
}

/// Drift and input matrices of the affine model at `state`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTerms<T> {
    /// `F(x) = x` (pose only).
    pub drift: [T; 3],
    /// `G(x) = dt * [[cos, 0], [sin, 0], [0, 1]]`, row-major.
    pub input: [[T; 2]; 3],
}

impl<T: Real> AffineTerms<T> {
    /// Evaluates `F(x) + G(x) u` and wraps the heading.
    pub fn apply(&self, u: ControlInput<T>) -> [T; 3] {
        let mut out = self.drift;
        for (row, o) in self.input.iter().zip(out.iter_mut()) {
            *o += row[0] * u.v + row[1] * u.w;
        }
        out[2] = wrap_angle(out[2]);
        out
    }
}

pub fn affine_terms<T: Real>(state: &AgentState<T>, dt: T) -> AffineTerms<T> {
    let (s, c) = state.theta.sin_cos();
    AffineTerms {
        drift: [state.px, state.py, state.theta],
        input: [[dt * c, T::zero()], [dt * s, T::zero()], [T::zero(), dt]],
    }
}

/// Executed control: `clamp(u + eps)`, `eps ~ N(0, Sigma)`. The v draw precedes the w draw.
pub fn perturb_and_clamp<T: Real, R: rand::Rng + ?Sized>(
    u: ControlInput<T>,
    noise: &NoiseModel<T>,
    bounds: &ControlBounds<T>,
    rng: &mut R,
) -> ControlInput<T> {
    let ev: T = standard_normal(rng);
    let ew: T = standard_normal(rng);
    bounds.clamp(ControlInput::new(
        u.v + noise.sigma_v * ev,
        u.w + noise.sigma_w * ew,
    ))
}
