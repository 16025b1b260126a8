//! Reference computations that do not reuse the library's own math.

#![allow(dead_code)]

use corl_mppi::dynamics::{ControlBounds, ControlInput, NoiseModel};
use corl_mppi::orca::{HalfPlaneConstraint, VelocityHalfPlane};
use corl_mppi::projection::GaussianControl;
use corl_mppi::rng::StreamRng;
use corl_mppi::vec2::Vec2;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

pub fn quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

pub fn cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

pub fn gaussian(rng: &mut StreamRng) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Linear-velocity constraints in the shape the ORCA reduction produces, plus a nominal
/// whose angular coordinate is comfortably inside its bounds.
#[derive(Clone, Debug)]
pub struct ProjectionInstance {
    pub nominal: GaussianControl<f64>,
    pub constraints: Vec<HalfPlaneConstraint<f64>>,
}

pub fn projection_instance(rng: &mut StreamRng, max_constraints: usize) -> ProjectionInstance {
    let n = rng.random_range(1..=max_constraints);
    let constraints = (0..n)
        .map(|_| {
            let mag = rng.random_range(0.2..1.0);
            let a0 = if rng.random::<bool>() { mag } else { -mag };
            HalfPlaneConstraint::new([a0, 0.0], rng.random_range(-0.5..1.0))
        })
        .collect();
    let nominal = GaussianControl::new(
        ControlInput::new(rng.random_range(-0.9..0.9), rng.random_range(-1.0..1.0)),
        [rng.random_range(0.02..0.3), 0.2],
    );
    ProjectionInstance { nominal, constraints }
}

/// Right-hand side after the execution-noise margin.
pub fn tightened_rhs(c: &HalfPlaneConstraint<f64>, noise: &NoiseModel<f64>, delta_nu: f64) -> f64 {
    let sd = (c.a[0] * c.a[0] * noise.std(0) * noise.std(0) + c.a[1] * c.a[1] * noise.std(1) * noise.std(1)).sqrt();
    c.b - quantile(delta_nu) * sd
}

/// Slack below which a zero-spread mean on the boundary still counts as satisfying it.
pub const BOUNDARY_TOL: f64 = 1e-9;

/// `P(a^T u > rhs)` under `g`.
pub fn violation_prob(g: &GaussianControl<f64>, a: [f64; 2], rhs: f64) -> f64 {
    let mu = a[0] * g.mean.v + a[1] * g.mean.w;
    let sd = (a[0] * a[0] * g.std[0] * g.std[0] + a[1] * a[1] * g.std[1] * g.std[1]).sqrt();
    if sd == 0.0 {
        return if mu > rhs + BOUNDARY_TOL { 1.0 } else { 0.0 };
    }
    1.0 - cdf((rhs - mu) / sd)
}

/// The control bounds written as four half-planes.
pub fn bound_rows(bounds: &ControlBounds<f64>) -> [([f64; 2], f64); 4] {
    [
        ([1.0, 0.0], bounds.v_max),
        ([-1.0, 0.0], -bounds.v_min),
        ([0.0, 1.0], bounds.w_max),
        ([0.0, -1.0], -bounds.w_min),
    ]
}

/// Fraction of `n` draws from `g` with `a^T u > rhs + BOUNDARY_TOL`.
pub fn empirical_violation(g: &GaussianControl<f64>, a: [f64; 2], rhs: f64, n: usize, rng: &mut StreamRng) -> f64 {
    let mut bad = 0usize;
    for _ in 0..n {
        let v = g.mean.v + g.std[0] * gaussian(rng);
        let w = g.mean.w + g.std[1] * gaussian(rng);
        bad += usize::from(a[0] * v + a[1] * w > rhs + BOUNDARY_TOL);
    }
    bad as f64 / n as f64
}

/// Whether `(u, s)` for the linear-velocity coordinate satisfies every chance constraint
/// and both bound constraints.
pub fn v_feasible(
    u: f64,
    s: f64,
    inst: &ProjectionInstance,
    noise: &NoiseModel<f64>,
    bounds: &ControlBounds<f64>,
    delta_u: f64,
    delta_nu: f64,
    tol: f64,
) -> bool {
    let z = quantile(delta_u);
    let ok_bounds = u + z * s <= bounds.v_max + tol && u - z * s >= bounds.v_min - tol && s >= -tol;
    ok_bounds
        && inst
            .constraints
            .iter()
            .all(|c| c.a[0] * u + z * c.a[0].abs() * s <= tightened_rhs(c, noise, delta_nu) + tol)
}

/// Best weighted L1 objective over an `n x n` grid of `(u_v, s_v)` in
/// `[v_min, v_max] x [0, s_nominal]`; `None` when no grid point is feasible.
pub fn grid_search(
    inst: &ProjectionInstance,
    noise: &NoiseModel<f64>,
    bounds: &ControlBounds<f64>,
    delta_u: f64,
    delta_nu: f64,
    spread_weight: f64,
    n: usize,
) -> Option<f64> {
    let z = quantile(delta_u);
    let rows: Vec<(f64, f64)> = inst
        .constraints
        .iter()
        .map(|c| (c.a[0], tightened_rhs(c, noise, delta_nu)))
        .collect();
    let (u0, s0) = (inst.nominal.mean.v, inst.nominal.std[0]);
    let mut best: Option<f64> = None;
    for i in 0..n {
        let u = bounds.v_min + (bounds.v_max - bounds.v_min) * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let s = s0 * j as f64 / (n - 1) as f64;
            if u + z * s > bounds.v_max || u - z * s < bounds.v_min {
                continue;
            }
            if rows.iter().any(|&(a, rhs)| a * u + z * a.abs() * s > rhs) {
                continue;
            }
            let obj = (u - u0).abs() + spread_weight * (s - s0).abs();
            best = Some(best.map_or(obj, |b: f64| b.min(obj)));
        }
    }
    best
}

/// A random pair of disks at least `gap` apart with velocities up to `speed`.
#[derive(Clone, Copy, Debug)]
pub struct Pair {
    pub pa: Vec2<f64>,
    pub pb: Vec2<f64>,
    pub va: Vec2<f64>,
    pub vb: Vec2<f64>,
    pub ra: f64,
    pub rb: f64,
}

pub fn random_pair(rng: &mut StreamRng, buffer: f64, speed: f64) -> Pair {
    let ra = rng.random_range(0.1..0.6);
    let rb = rng.random_range(0.1..0.6);
    let reach = ra + rb + 2.0 * buffer;
    let d = rng.random_range(reach + 1e-3..reach + 6.0);
    let phi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let pa = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    let in_disk = |rng: &mut StreamRng| loop {
        let v = Vec2::new(rng.random_range(-speed..speed), rng.random_range(-speed..speed));
        if v.norm() <= speed {
            break v;
        }
    };
    Pair {
        pa,
        pb: pa + Vec2::from_angle(phi) * d,
        va: in_disk(rng),
        vb: in_disk(rng),
        ra,
        rb,
    }
}

/// Pushes `v` onto the half-plane boundary when it lies outside.
pub fn into_halfplane(hp: &VelocityHalfPlane<f64>, v: Vec2<f64>) -> Vec2<f64> {
    let excess = hp.normal.dot(v) - hp.offset;
    if excess > 0.0 {
        let n2 = hp.normal.norm_sq();
        v - hp.normal * (excess / n2)
    } else {
        v
    }
}

/// Smallest center distance over `[0, horizon]` at constant velocities, sampled every `step`.
pub fn min_distance(pa: Vec2<f64>, va: Vec2<f64>, pb: Vec2<f64>, vb: Vec2<f64>, horizon: f64, step: f64) -> f64 {
    let samples = (horizon / step).round() as usize;
    (0..=samples)
        .map(|i| {
            let t = i as f64 * step;
            (pb + vb * t).distance(pa + va * t)
        })
        .fold(f64::INFINITY, f64::min)
}
