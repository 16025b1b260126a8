//! Guidance policies: egocentric observations, the portable MLP weights format and its
//! inference, and a scripted go-to-goal proxy.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{AgentState, ControlBounds, ControlInput};
use crate::error::{Error, Result};
use crate::projection::GaussianControl;
use crate::scalar::{wrap_angle, Real};
use crate::vec2::Vec2;

pub const WEIGHTS_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_K_NEIGHBORS: usize = 8;
pub const DEFAULT_SENSE_RANGE: f64 = 10.0;
const STD_FLOOR: f64 = 1e-3;

/// Distribution parameters a policy returns for one step.
pub type PolicyOutput<T> = GaussianControl<T>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborSlot<T> {
    pub dist: T,
    pub angle: T,
    pub present: T,
}

impl<T: Real> NeighborSlot<T> {
    pub fn empty() -> Self {
        Self {
            dist: T::one(),
            angle: T::zero(),
            present: T::zero(),
        }
    }
}

/// Normalized egocentric observation: goal distance in [0, 1], bearings divided by pi.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation<T> {
    pub goal_dist: T,
    pub goal_angle: T,
    pub neighbors: Vec<NeighborSlot<T>>,
}

impl<T: Real> Observation<T> {
    pub fn dim(k: usize) -> usize {
        2 + 3 * k
    }

    /// Flat feature vector: goal (dist, angle) then (dist, angle, present) per slot.
    pub fn to_features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(Self::dim(self.neighbors.len()));
        out.push(self.goal_dist.as_f64());
        out.push(self.goal_angle.as_f64());
        for s in &self.neighbors {
            out.extend([s.dist.as_f64(), s.angle.as_f64(), s.present.as_f64()]);
        }
        out
    }

    pub fn nearest_present(&self) -> Option<&NeighborSlot<T>> {
        self.neighbors.iter().find(|s| s.present > T::zero())
    }
}

fn bearing<T: Real>(state: &AgentState<T>, target: Vec2<T>) -> T {
    let d = target - state.position();
    if d.norm_sq() == T::zero() {
        return T::zero();
    }
    wrap_angle(d.angle() - state.theta) / T::PI()
}

pub fn build_observation<T: Real>(
    state: &AgentState<T>,
    goal: Vec2<T>,
    neighbor_positions: &[Vec2<T>],
    k: usize,
    sense_range: T,
) -> Observation<T> {
    let p = state.position();
    let goal_dist = (p.distance(goal) / sense_range).min(T::one());
    let goal_angle = bearing(state, goal);

    let mut visible: Vec<(T, Vec2<T>)> = neighbor_positions
        .iter()
        .map(|&q| (p.distance(q), q))
        .filter(|(d, _)| *d <= sense_range)
        .collect();
    // Stable sort keeps input order on ties.
    visible.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

    let mut neighbors: Vec<NeighborSlot<T>> = visible
        .into_iter()
        .take(k)
        .map(|(d, q)| NeighborSlot {
            dist: (d / sense_range).min(T::one()),
            angle: bearing(state, q),
            present: T::one(),
        })
        .collect();
    neighbors.resize(k, NeighborSlot::empty());
    Observation {
        goal_dist,
        goal_angle,
        neighbors,
    }
}

pub trait GuidancePolicy<T: Real>: Send + Sync {
    fn k_neighbors(&self) -> usize;
    fn sense_range(&self) -> T;
    fn act(&self, obs: &Observation<T>, bounds: &ControlBounds<T>) -> PolicyOutput<T>;
}

/// Scripted steering toward the goal with a fixed sidestep when a neighbor gets close.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxyPolicy<T> {
    pub k_neighbors: usize,
    pub sense_range: T,
}

impl<T: Real> Default for ProxyPolicy<T> {
    fn default() -> Self {
        Self {
            k_neighbors: DEFAULT_K_NEIGHBORS,
            sense_range: T::lit(DEFAULT_SENSE_RANGE),
        }
    }
}

impl<T: Real> GuidancePolicy<T> for ProxyPolicy<T> {
    fn k_neighbors(&self) -> usize {
        self.k_neighbors
    }

    fn sense_range(&self) -> T {
        self.sense_range
    }

    fn act(&self, obs: &Observation<T>, bounds: &ControlBounds<T>) -> PolicyOutput<T> {
        proxy_policy(obs, bounds, self.sense_range)
    }
}

pub fn proxy_policy<T: Real>(
    obs: &Observation<T>,
    bounds: &ControlBounds<T>,
    sense_range: T,
) -> PolicyOutput<T> {
    let mut alpha = obs.goal_angle * T::PI();
    if let Some(nb) = obs.nearest_present() {
        if nb.dist < T::lit(0.15) {
            let side = if nb.angle > T::zero() { -T::one() } else { T::one() };
            alpha += side * T::FRAC_PI_3();
        }
    }
    let w = (T::lit(2.5) * alpha).max(bounds.w_min).min(bounds.w_max);
    let approach = (obs.goal_dist * sense_range).min(T::one());
    let v = bounds.v_max * alpha.cos().max(T::zero()) * approach;
    let v = v.max(bounds.v_min).min(bounds.v_max);
    let spread = T::lit(0.15 * 0.5);
    GaussianControl::new(
        ControlInput::new(v, w),
        [
            spread * (bounds.v_max - bounds.v_min),
            spread * (bounds.w_max - bounds.w_min),
        ],
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Tanh => x.tanh(),
            Self::Relu => x.max(0.0),
            Self::Linear => x,
        }
    }
}

/// Dense layer mapping a `1 x rows` input to `1 x cols` via `x W + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    /// Row-major, `rows * cols` entries.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub act: Activation,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize, act: Activation) -> Self {
        Self {
            rows,
            cols,
            w: vec![0.0; rows * cols],
            b: vec![0.0; cols],
            act,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.w[i * self.cols..(i + 1) * self.cols];
            for (yj, &wij) in y.iter_mut().zip(row) {
                *yj += xi * wij;
            }
        }
        for v in &mut y {
            *v = self.act.apply(*v);
        }
        y
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyWeights {
    pub format_version: u32,
    pub k_neighbors: usize,
    pub sense_range: f64,
    pub action_low: [f64; 2],
    pub action_high: [f64; 2],
    pub log_std: [f64; 2],
    pub layers: Vec<Layer>,
}

impl PolicyWeights {
    /// All-zero network with the given hidden widths (tanh) and a linear head.
    pub fn zeros(k_neighbors: usize, hidden: &[usize], bounds: &ControlBounds<f64>) -> Self {
        let mut layers = Vec::new();
        let mut rows = Observation::<f64>::dim(k_neighbors);
        for &h in hidden {
            layers.push(Layer::zeros(rows, h, Activation::Tanh));
            rows = h;
        }
        layers.push(Layer::zeros(rows, 2, Activation::Linear));
        Self {
            format_version: WEIGHTS_FORMAT_VERSION,
            k_neighbors,
            sense_range: DEFAULT_SENSE_RANGE,
            action_low: [bounds.v_min, bounds.w_min],
            action_high: [bounds.v_max, bounds.w_max],
            log_std: [0.5f64.ln(), 0.5f64.ln()],
            layers,
        }
    }

    pub fn input_dim(&self) -> usize {
        Observation::<f64>::dim(self.k_neighbors)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Weights(msg));
        if self.format_version != WEIGHTS_FORMAT_VERSION {
            return fail(format!(
                "format_version {} is not supported (expected {})",
                self.format_version, WEIGHTS_FORMAT_VERSION
            ));
        }
        if !(self.sense_range.is_finite() && self.sense_range > 0.0) {
            return fail(format!("sense_range must be positive, got {}", self.sense_range));
        }
        for k in 0..2 {
            if !(self.action_low[k] < self.action_high[k]) {
                return fail(format!(
                    "action_low[{k}] = {} must be below action_high[{k}] = {}",
                    self.action_low[k], self.action_high[k]
                ));
            }
            if !self.log_std[k].is_finite() {
                return fail(format!("log_std[{k}] is not finite"));
            }
        }
        if self.layers.is_empty() {
            return fail("layers is empty".into());
        }
        let mut expected = self.input_dim();
        for (i, l) in self.layers.iter().enumerate() {
            if l.rows != expected {
                return fail(if i == 0 {
                    format!(
                        "layer 0 has {} rows but k_neighbors = {} needs {} inputs",
                        l.rows, self.k_neighbors, expected
                    )
                } else {
                    format!("layer {i} has {} rows but layer {} outputs {expected}", l.rows, i - 1)
                });
            }
            if l.w.len() != l.rows * l.cols {
                return fail(format!(
                    "layer {i}: w has {} entries, expected rows*cols = {}",
                    l.w.len(),
                    l.rows * l.cols
                ));
            }
            if l.b.len() != l.cols {
                return fail(format!("layer {i}: b has {} entries, expected {}", l.b.len(), l.cols));
            }
            if l.w.iter().chain(&l.b).any(|x| !x.is_finite()) {
                return fail(format!("layer {i} contains a non-finite number"));
            }
            expected = l.cols;
        }
        if expected != 2 {
            return fail(format!("final layer outputs {expected} values, expected 2"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(text).map_err(|source| Error::Parse {
            what: "policy weights",
            source,
        })?;
        w.validate()?;
        Ok(w)
    }

    /// Serializes with every number rounded to 9 significant digits.
    pub fn to_json(&self) -> Result<String> {
        let mut rounded = self.clone();
        rounded.sense_range = round_sig(rounded.sense_range);
        for a in [&mut rounded.action_low, &mut rounded.action_high, &mut rounded.log_std] {
            a.iter_mut().for_each(|x| *x = round_sig(*x));
        }
        for l in &mut rounded.layers {
            l.w.iter_mut().chain(l.b.iter_mut()).for_each(|x| *x = round_sig(*x));
        }
        serde_json::to_string_pretty(&rounded).map_err(|source| Error::Parse {
            what: "policy weights",
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Weights(msg) => Error::Weights(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.validate()?;
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// Forward pass; the head is squashed into `[action_low, action_high]`.
pub fn mlp_infer(w: &PolicyWeights, features: &[f64]) -> ([f64; 2], [f64; 2]) {
    debug_assert_eq!(features.len(), w.input_dim());
    let mut x = features.to_vec();
    for l in &w.layers {
        x = l.forward(&x);
    }
    let mut mean = [0.0; 2];
    let mut std = [0.0; 2];
    for k in 0..2 {
        let range = w.action_high[k] - w.action_low[k];
        mean[k] = w.action_low[k] + (x[k].tanh() + 1.0) * 0.5 * range;
        std[k] = (w.log_std[k].exp() * range * 0.5).max(STD_FLOOR);
    }
    (mean, std)
}

/// Policy backed by a validated weights file.
#[derive(Clone, Debug)]
pub struct MlpPolicy {
    weights: PolicyWeights,
}

impl MlpPolicy {
    pub fn new(weights: PolicyWeights) -> Result<Self> {
        weights.validate()?;
        Ok(Self { weights })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(PolicyWeights::load(path)?)
    }

    pub fn weights(&self) -> &PolicyWeights {
        &self.weights
    }
}

impl<T: Real> GuidancePolicy<T> for MlpPolicy {
    fn k_neighbors(&self) -> usize {
        self.weights.k_neighbors
    }

    fn sense_range(&self) -> T {
        T::lit(self.weights.sense_range)
    }

    fn act(&self, obs: &Observation<T>, _bounds: &ControlBounds<T>) -> PolicyOutput<T> {
        let (mean, std) = mlp_infer(&self.weights, &obs.to_features());
        GaussianControl::new(
            ControlInput::new(T::lit(mean[0]), T::lit(mean[1])),
            [T::lit(std[0]), T::lit(std[1])],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs_for(state: AgentState<f64>, goal: Vec2<f64>, nbs: &[Vec2<f64>], k: usize) -> Observation<f64> {
        build_observation(&state, goal, nbs, k, 10.0)
    }

    #[test]
    fn goal_ahead_without_neighbors() {
        let o = obs_for(AgentState::at_rest(0.0, 0.0, 0.0), Vec2::new(5.0, 0.0), &[], 8);
        assert_eq!((o.goal_dist, o.goal_angle), (0.5, 0.0));
        assert_eq!(o.neighbors, vec![NeighborSlot::empty(); 8]);
        assert_eq!(o.to_features().len(), 26);
    }

    #[test]
    fn goal_behind_maps_to_plus_one() {
        let o = obs_for(AgentState::at_rest(0.0, 0.0, 0.0), Vec2::new(-3.0, 0.0), &[], 0);
        assert_eq!(o.goal_angle, 1.0);
        assert!(o.neighbors.is_empty());
    }

    #[test]
    fn neighbors_sorted_and_filtered() {
        let nbs = [Vec2::new(0.0, 12.0), Vec2::new(0.0, 4.0), Vec2::new(2.0, 0.0)];
        let o = obs_for(AgentState::at_rest(0.0, 0.0, 0.0), Vec2::new(1.0, 0.0), &nbs, 2);
        assert_eq!(o.neighbors.len(), 2);
        assert_eq!(o.neighbors[0], NeighborSlot { dist: 0.2, angle: 0.0, present: 1.0 });
        assert_eq!(o.neighbors[1], NeighborSlot { dist: 0.4, angle: 0.5, present: 1.0 });
        let wide = obs_for(AgentState::at_rest(0.0, 0.0, 0.0), Vec2::new(1.0, 0.0), &nbs, 4);
        assert_eq!(wide.neighbors[2], NeighborSlot::empty());
        assert_eq!(wide.neighbors[3], NeighborSlot::empty());
    }

    #[test]
    fn proxy_examples() {
        let b = ControlBounds::standard();
        let o = obs_for(AgentState::at_rest(0.0, 0.0, 0.0), Vec2::new(5.0, 0.0), &[], 8);
        let out = proxy_policy(&o, &b, 10.0);
        assert_eq!(out.mean, ControlInput::new(1.0, 0.0));
        assert!((out.std[0] - 0.15).abs() < 1e-15 && (out.std[1] - 0.3).abs() < 1e-15);

        let at_goal = obs_for(AgentState::at_rest(5.0, 0.0, 0.0), Vec2::new(5.0, 0.0), &[], 8);
        assert_eq!(proxy_policy(&at_goal, &b, 10.0).mean.v, 0.0);

        let head_on = obs_for(AgentState::at_rest(0.0, 0.0, 0.0), Vec2::new(5.0, 0.0), &[Vec2::new(1.0, 0.0)], 8);
        let out = proxy_policy(&head_on, &b, 10.0);
        assert_eq!(out.mean.w, 2.0);
        assert!((out.mean.v - 0.5).abs() < 1e-12);

        let left = obs_for(AgentState::at_rest(0.0, 0.0, 0.0), Vec2::new(5.0, 0.0), &[Vec2::new(1.0, 0.2)], 8);
        assert!(proxy_policy(&left, &b, 10.0).mean.w < 0.0);
    }

    #[test]
    fn zero_weights_give_midpoint() {
        let b = ControlBounds::standard();
        let w = PolicyWeights::zeros(8, &[64, 64], &b);
        w.validate().unwrap();
        let (mean, std) = mlp_infer(&w, &[0.3; 26]);
        assert_eq!(mean, [0.0, 0.0]);
        assert!((std[0] - 0.5).abs() < 1e-15 && (std[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dimension_errors_are_actionable() {
        let b = ControlBounds::standard();
        let mut w = PolicyWeights::zeros(8, &[4], &b);
        w.k_neighbors = 7;
        let msg = w.validate().unwrap_err().to_string();
        assert!(msg.contains("k_neighbors = 7") && msg.contains("23"), "{msg}");

        let mut w = PolicyWeights::zeros(2, &[4], &b);
        w.layers[1].rows = 5;
        assert!(w.validate().unwrap_err().to_string().contains("layer 1 has 5 rows"));

        let mut w = PolicyWeights::zeros(2, &[], &b);
        w.format_version = 9;
        assert!(w.validate().unwrap_err().to_string().contains("format_version"));
    }

    #[test]
    fn json_errors() {
        let b = ControlBounds::standard();
        let text = PolicyWeights::zeros(1, &[3], &b).to_json().unwrap();
        assert!(matches!(PolicyWeights::from_json(&text[..text.len() / 2]), Err(Error::Parse { .. })));
        let bad_act = text.replace("\"tanh\"", "\"sigmoid\"");
        assert!(matches!(PolicyWeights::from_json(&bad_act), Err(Error::Parse { .. })));
        let missing = text.replace("\"log_std\"", "\"log_sd\"");
        let err = PolicyWeights::from_json(&missing).unwrap_err().to_string();
        assert!(err.contains("log_s"), "{err}");
    }

    #[test]
    fn rounding_keeps_nine_digits() {
        assert_eq!(round_sig(1.234_567_891_23), 1.234_567_89);
        assert_eq!(round_sig(-9.876_543_216e-7), -9.876_543_22e-7);
        assert_eq!(round_sig(0.0), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn observation_ranges(
            px in -100.0f64..100.0, py in -100.0f64..100.0, th in -10.0f64..10.0,
            gx in -100.0f64..100.0, gy in -100.0f64..100.0,
            nbs in proptest::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 0..12),
        ) {
            let nbs: Vec<_> = nbs.into_iter().map(|(x, y)| Vec2::new(px + x, py + y)).collect();
            let o = build_observation(&AgentState::at_rest(px, py, th), Vec2::new(gx, gy), &nbs, 8, 10.0);
            proptest::prop_assert_eq!(o.neighbors.len(), 8);
            proptest::prop_assert!((0.0..=1.0).contains(&o.goal_dist));
            proptest::prop_assert!(o.goal_angle > -1.0 && o.goal_angle <= 1.0);
            for s in &o.neighbors {
                proptest::prop_assert!((0.0..=1.0).contains(&s.dist));
                proptest::prop_assert!(s.angle >= -1.0 && s.angle <= 1.0);
                proptest::prop_assert!(s.present == 0.0 || s.present == 1.0);
            }
        }

        #[test]
        fn observation_is_egocentric(
            px in -20.0f64..20.0, py in -20.0f64..20.0, th in -3.0f64..3.0,
            gx in -20.0f64..20.0, gy in -20.0f64..20.0,
            rot in -3.1f64..3.1, tx in -50.0f64..50.0, ty in -50.0f64..50.0,
            nbs in proptest::collection::vec((-8.0f64..8.0, -8.0f64..8.0), 0..6),
        ) {
            let nbs: Vec<_> = nbs.into_iter().map(|(x, y)| Vec2::new(px + x, py + y)).collect();
            let base = build_observation(&AgentState::at_rest(px, py, th), Vec2::new(gx, gy), &nbs, 8, 10.0);
            let t = Vec2::new(tx, ty);
            let map = |q: Vec2<f64>| q.rotated(rot) + t;
            let p2 = map(Vec2::new(px, py));
            let moved: Vec<_> = nbs.iter().map(|&q| map(q)).collect();
            let o = build_observation(&AgentState::at_rest(p2.x, p2.y, th + rot), map(Vec2::new(gx, gy)), &moved, 8, 10.0);
            let close = |a: f64, b: f64| (a - b).abs() < 1e-9 || (a.abs() > 1.0 - 1e-9 && b.abs() > 1.0 - 1e-9);
            proptest::prop_assert!(close(o.goal_dist, base.goal_dist));
            proptest::prop_assert!(close(o.goal_angle, base.goal_angle));
            for (a, b) in o.neighbors.iter().zip(&base.neighbors) {
                proptest::prop_assert!(close(a.dist, b.dist) && close(a.angle, b.angle));
            }
        }

        #[test]
        fn mlp_mean_stays_inside_bounds(
            seed in 0u64..1000,
            x in proptest::collection::vec(-1.0f64..1.0, 8),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut w = PolicyWeights::zeros(2, &[5], &ControlBounds::standard());
            for l in &mut w.layers {
                l.w.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
            }
            let (mean, _) = mlp_infer(&w, &x);
            proptest::prop_assert!(mean[0] >= -1.0 && mean[0] <= 1.0);
            proptest::prop_assert!(mean[1] >= -2.0 && mean[1] <= 2.0);
        }
    }
}
