//! Chance-constrained adjustment of a Gaussian control distribution.
//!
//! Given a nominal `N(u, diag(s^2))`, find the closest `(u_hat, s_hat)` in L1 such that a
//! sample satisfies every half-plane constraint with probability at least `delta_u`,
//! after tightening each right-hand side by the execution-noise margin
//! `Phi^{-1}(delta_nu) sqrt(a^T Sigma a)`, and stays inside the control bounds with the
//! same probability per side.
//!
//! Working in standard deviations keeps every constraint linear:
//! `a^T u_hat + z (|a_0| s_hat_0 + |a_1| s_hat_1) <= b - margin`, with `z = Phi^{-1}(delta_u)`.
//! For the single-coordinate constraints produced by the ORCA reduction the left-hand
//! side is exactly `a^T u_hat + z sqrt(a^T diag(s_hat^2) a)`; for two-coordinate
//! constraints it is a conservative upper bound.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlBounds, ControlInput, NoiseModel};
use crate::error::{Error, Result};
use crate::normal::{inv_normal_cdf, normal_cdf};
use crate::orca::HalfPlaneConstraint;
use crate::scalar::Real;
use crate::simplex::{LinearProgram, LpOutcome, Relation};

/// Gaussian over controls with independent coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianControl<T> {
    pub mean: ControlInput<T>,
    /// Per-coordinate standard deviations `(v, w)`.
    pub std: [T; 2],
}

impl<T: Real> GaussianControl<T> {
    pub fn new(mean: ControlInput<T>, std: [T; 2]) -> Self {
        Self { mean, std }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyLevels<T> {
    /// Required probability that a sampled control satisfies each constraint.
    pub delta_u: T,
    /// Confidence level of the execution-noise margin.
    pub delta_nu: T,
}

impl<T: Real> Default for SafetyLevels<T> {
    fn default() -> Self {
        Self {
            delta_u: T::lit(0.95),
            delta_nu: T::lit(0.95),
        }
    }
}

impl<T: Real> SafetyLevels<T> {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("delta_u", self.delta_u), ("delta_nu", self.delta_nu)] {
            if !(p > T::lit(0.5) && p < T::one()) {
                return Err(Error::InvalidConfig(format!("{name} must lie in (0.5, 1), got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionStatus {
    /// Feasible optimum that keeps the nominal spread.
    Exact,
    /// Feasible optimum that had to change the spread.
    RelaxedVariance,
    /// No distribution satisfies the constraints; mean-only least-violation point with
    /// zero spread.
    InfeasibleFallback,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionResult<T> {
    pub adjusted: GaussianControl<T>,
    pub status: ProjectionStatus,
    /// Largest violation of the tightened constraints at `adjusted` (0 when feasible).
    pub max_violation: T,
}

/// Everything `project` needs besides the nominal distribution.
#[derive(Clone, Copy, Debug)]
pub struct ProjectionProblem<'a, T> {
    pub exec_noise: &'a NoiseModel<T>,
    pub constraints: &'a [HalfPlaneConstraint<T>],
    pub bounds: &'a ControlBounds<T>,
    pub levels: &'a SafetyLevels<T>,
    /// Weight of spread deviations relative to mean deviations in the objective.
    pub spread_weight: T,
}

struct Tightened<T> {
    a: [T; 2],
    rhs: T,
}

fn quantiles<T: Real>(levels: &SafetyLevels<T>) -> (T, T) {
    let z_u = inv_normal_cdf(levels.delta_u).expect("validated safety level");
    let z_nu = inv_normal_cdf(levels.delta_nu).expect("validated safety level");
    (z_u, z_nu)
}

fn tighten<T: Real>(
    constraints: &[HalfPlaneConstraint<T>],
    noise: &NoiseModel<T>,
    z_nu: T,
) -> Vec<Tightened<T>> {
    constraints
        .iter()
        .map(|c| {
            let var = c.a[0] * c.a[0] * noise.variance(0) + c.a[1] * c.a[1] * noise.variance(1);
            Tightened {
                a: c.a,
                rhs: c.b - z_nu * var.sqrt(),
            }
        })
        .collect()
}

/// Largest violation of the tightened chance constraints and bound constraints.
fn violation_of<T: Real>(
    g: &GaussianControl<T>,
    rows: &[Tightened<T>],
    bounds: &ControlBounds<T>,
    z_u: T,
) -> T {
    let m = g.mean.to_array();
    let mut worst = T::zero();
    for r in rows {
        let lhs = r.a[0] * m[0]
            + r.a[1] * m[1]
            + z_u * (r.a[0].abs() * g.std[0] + r.a[1].abs() * g.std[1]);
        worst = worst.max(lhs - r.rhs);
    }
    for k in 0..2 {
        worst = worst.max(m[k] + z_u * g.std[k] - bounds.upper(k));
        worst = worst.max(bounds.lower(k) - (m[k] - z_u * g.std[k]));
        worst = worst.max(-g.std[k]);
    }
    worst
}

/// Adjusts `nominal` so sampled controls satisfy the constraints with the required
/// probabilities. Never fails: infeasible systems fall back to a zero-spread mean that
/// minimizes the largest violation.
pub fn project<T: Real>(
    nominal: &GaussianControl<T>,
    problem: &ProjectionProblem<'_, T>,
) -> ProjectionResult<T> {
    let (z_u, z_nu) = quantiles(problem.levels);
    let rows = tighten(problem.constraints, problem.exec_noise, z_nu);
    let u = nominal.mean.to_array();
    let s = [nominal.std[0].max(T::zero()), nominal.std[1].max(T::zero())];

    // Variables: d+_0 d-_0 d+_1 d-_1 e+_0 e-_0 e+_1 e-_1, with
    // u_hat = u + d+ - d-, s_hat = s + e+ - e-.
    let mut lp = LinearProgram::new(8);
    let kappa = problem.spread_weight;
    lp.objective = vec![T::one(), T::one(), T::one(), T::one(), kappa, kappa, kappa, kappa];
    let mean_cols = |k: usize| (2 * k, 2 * k + 1);
    let std_cols = |k: usize| (4 + 2 * k, 5 + 2 * k);

    for r in &rows {
        let mut coeffs = vec![T::zero(); 8];
        let mut rhs = r.rhs;
        for k in 0..2 {
            let (dp, dm) = mean_cols(k);
            let (ep, em) = std_cols(k);
            let sa = z_u * r.a[k].abs();
            coeffs[dp] = r.a[k];
            coeffs[dm] = -r.a[k];
            coeffs[ep] = sa;
            coeffs[em] = -sa;
            rhs -= r.a[k] * u[k] + sa * s[k];
        }
        lp.push(coeffs, Relation::Le, rhs);
    }
    for k in 0..2 {
        let (dp, dm) = mean_cols(k);
        let (ep, em) = std_cols(k);
        // u_hat + z s_hat <= upper
        let mut c = vec![T::zero(); 8];
        c[dp] = T::one();
        c[dm] = -T::one();
        c[ep] = z_u;
        c[em] = -z_u;
        lp.push(c, Relation::Le, problem.bounds.upper(k) - u[k] - z_u * s[k]);
        // u_hat - z s_hat >= lower
        let mut c = vec![T::zero(); 8];
        c[dp] = T::one();
        c[dm] = -T::one();
        c[ep] = -z_u;
        c[em] = z_u;
        lp.push(c, Relation::Ge, problem.bounds.lower(k) - u[k] + z_u * s[k]);
        // s_hat >= 0
        let mut c = vec![T::zero(); 8];
        c[em] = T::one();
        lp.push(c, Relation::Le, s[k]);
    }

    if let LpOutcome::Optimal { x, .. } = lp.solve() {
        let mut mean = [T::zero(); 2];
        let mut std = [T::zero(); 2];
        for k in 0..2 {
            let (dp, dm) = mean_cols(k);
            let (ep, em) = std_cols(k);
            mean[k] = u[k] + x[dp] - x[dm];
            std[k] = (s[k] + x[ep] - x[em]).max(T::zero());
        }
        let adjusted = GaussianControl::new(ControlInput::from_array(mean), std);
        let keeps_spread = (0..2).all(|k| (std[k] - s[k]).abs() <= T::solver_eps() * T::lit(10.0));
        return ProjectionResult {
            adjusted,
            status: if keeps_spread {
                ProjectionStatus::Exact
            } else {
                ProjectionStatus::RelaxedVariance
            },
            max_violation: violation_of(&adjusted, &rows, problem.bounds, z_u).max(T::zero()),
        };
    }

    let mean = least_violation_mean(&u, &rows, problem.bounds);
    let adjusted = GaussianControl::new(ControlInput::from_array(mean), [T::zero(); 2]);
    ProjectionResult {
        adjusted,
        status: ProjectionStatus::InfeasibleFallback,
        max_violation: violation_of(&adjusted, &rows, problem.bounds, z_u).max(T::zero()),
    }
}

/// Mean within bounds minimizing the largest constraint violation, then the L1 distance
/// to the nominal mean among those minimizers.
fn least_violation_mean<T: Real>(
    u: &[T; 2],
    rows: &[Tightened<T>],
    bounds: &ControlBounds<T>,
) -> [T; 2] {
    // Variables: d+_0 d-_0 d+_1 d-_1 t.
    let build = |objective: Vec<T>, t_cap: Option<T>| {
        let mut lp = LinearProgram::new(5);
        lp.objective = objective;
        for r in rows {
            let rhs = r.rhs - r.a[0] * u[0] - r.a[1] * u[1];
            lp.push(vec![r.a[0], -r.a[0], r.a[1], -r.a[1], -T::one()], Relation::Le, rhs);
        }
        for k in 0..2 {
            let mut c = vec![T::zero(); 5];
            c[2 * k] = T::one();
            c[2 * k + 1] = -T::one();
            lp.push(c.clone(), Relation::Le, bounds.upper(k) - u[k]);
            lp.push(c, Relation::Ge, bounds.lower(k) - u[k]);
        }
        if let Some(cap) = t_cap {
            lp.push(vec![T::zero(), T::zero(), T::zero(), T::zero(), T::one()], Relation::Le, cap);
        }
        lp
    };
    let clamp_nominal = || [bounds.clamp(ControlInput::from_array(*u)).v, bounds.clamp(ControlInput::from_array(*u)).w];

    let first = build(vec![T::zero(), T::zero(), T::zero(), T::zero(), T::one()], None).solve();
    let Some((_, t_star)) = first.optimal() else {
        return clamp_nominal();
    };
    let cap = t_star + T::solver_eps() * (T::one() + t_star.abs());
    let second = build(vec![T::one(), T::one(), T::one(), T::one(), T::zero()], Some(cap)).solve();
    match second.optimal() {
        Some((x, _)) => [u[0] + x[0] - x[1], u[1] + x[2] - x[3]],
        None => clamp_nominal(),
    }
}

/// `P(a^T x > b)` for `x ~ g`.
pub fn violation_probability<T: Real>(g: &GaussianControl<T>, c: &HalfPlaneConstraint<T>) -> T {
    let mu = c.a[0] * g.mean.v + c.a[1] * g.mean.w;
    let var = c.a[0] * c.a[0] * g.std[0] * g.std[0] + c.a[1] * c.a[1] * g.std[1] * g.std[1];
    if var <= T::zero() {
        return if mu > c.b { T::one() } else { T::zero() };
    }
    T::one() - normal_cdf((c.b - mu) / var.sqrt())
}

/// The constraint tightened by the execution-noise margin, i.e. the constraint the
/// adjusted distribution satisfies with probability `delta_u`.
pub fn tightened_constraint<T: Real>(
    c: &HalfPlaneConstraint<T>,
    noise: &NoiseModel<T>,
    levels: &SafetyLevels<T>,
) -> HalfPlaneConstraint<T> {
    let (_, z_nu) = quantiles(levels);
    let t = &tighten(std::slice::from_ref(c), noise, z_nu)[0];
    HalfPlaneConstraint::new(t.a, t.rhs)
}

/// Weighted L1 objective of the projection problem.
pub fn projection_objective<T: Real>(
    nominal: &GaussianControl<T>,
    adjusted: &GaussianControl<T>,
    spread_weight: T,
) -> T {
    (adjusted.mean.v - nominal.mean.v).abs()
        + (adjusted.mean.w - nominal.mean.w).abs()
        + spread_weight * ((adjusted.std[0] - nominal.std[0]).abs() + (adjusted.std[1] - nominal.std[1]).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{standard_normal, StreamKey};

    fn problem<'a>(
        noise: &'a NoiseModel<f64>,
        cs: &'a [HalfPlaneConstraint<f64>],
        bounds: &'a ControlBounds<f64>,
        levels: &'a SafetyLevels<f64>,
    ) -> ProjectionProblem<'a, f64> {
        ProjectionProblem {
            exec_noise: noise,
            constraints: cs,
            bounds,
            levels,
            spread_weight: 1.0,
        }
    }

    #[test]
    fn feasible_nominal_is_kept() {
        let noise = NoiseModel::standard();
        let bounds = ControlBounds::standard();
        let levels = SafetyLevels::default();
        let nominal = GaussianControl::new(ControlInput::new(0.2, 0.1), [0.1, 0.2]);
        let r = project(&nominal, &problem(&noise, &[], &bounds, &levels));
        assert_eq!(r.status, ProjectionStatus::Exact);
        assert_eq!(r.adjusted, nominal);
        assert!(r.max_violation <= 1e-8);
    }

    #[test]
    fn contradictory_constraints_fall_back_symmetrically() {
        let noise = NoiseModel::standard();
        let bounds = ControlBounds::standard();
        let levels = SafetyLevels::default();
        let cs = [
            HalfPlaneConstraint::new([1.0, 0.0], -2.0),
            HalfPlaneConstraint::new([-1.0, 0.0], -2.0),
        ];
        let nominal = GaussianControl::new(ControlInput::new(0.4, 0.3), [0.1, 0.2]);
        let r = project(&nominal, &problem(&noise, &cs, &bounds, &levels));
        assert_eq!(r.status, ProjectionStatus::InfeasibleFallback);
        assert_eq!(r.adjusted.std, [0.0, 0.0]);
        assert!(r.adjusted.mean.v.abs() < 1e-9, "{:?}", r.adjusted);
        // The angular coordinate is untouched by coordinate-0 constraints.
        assert!((r.adjusted.mean.w - 0.3).abs() < 1e-9);
        assert!(r.max_violation > 0.0);
    }

    #[test]
    fn violation_probability_cases() {
        let c = HalfPlaneConstraint::<f64>::new([1.0, 0.0], 0.5);
        let on_boundary = GaussianControl::new(ControlInput::new(0.5, 0.0), [0.2, 0.1]);
        assert!((violation_probability(&on_boundary, &c) - 0.5).abs() < 1e-15);
        let degenerate = GaussianControl::new(ControlInput::new(0.2, 0.0), [0.0, 0.0]);
        assert_eq!(violation_probability(&degenerate, &c), 0.0);
        let outside = GaussianControl::new(ControlInput::new(0.7, 0.0), [0.0, 0.3]);
        assert_eq!(violation_probability(&outside, &c), 1.0);
    }

    #[test]
    fn projected_distribution_meets_level() {
        let noise = NoiseModel::standard();
        let bounds = ControlBounds::standard();
        let levels = SafetyLevels::default();
        let cs = [HalfPlaneConstraint::new([1.0, 0.0], 0.3)];
        let nominal = GaussianControl::new(ControlInput::new(0.8, 0.0), [0.1, 0.2]);
        let r = project(&nominal, &problem(&noise, &cs, &bounds, &levels));
        assert_ne!(r.status, ProjectionStatus::InfeasibleFallback);
        let t = tightened_constraint(&cs[0], &noise, &levels);
        assert!(violation_probability(&r.adjusted, &t) <= 0.05 + 1e-9);
        assert!(violation_probability(&r.adjusted, &cs[0]) <= 0.05 + 1e-9);
    }

    #[test]
    fn bound_guarantee_monte_carlo() {
        let noise = NoiseModel::standard();
        let bounds = ControlBounds::standard();
        let levels = SafetyLevels::default();
        let nominal = GaussianControl::new(ControlInput::new(0.95, -1.9), [0.3, 0.5]);
        let r = project(&nominal, &problem(&noise, &[], &bounds, &levels));
        let mut rng = StreamKey::root(11).rng();
        let n = 100_000;
        let mut clipped = [0usize; 2];
        for _ in 0..n {
            let v = r.adjusted.mean.v + r.adjusted.std[0] * standard_normal::<f64, _>(&mut rng);
            let w = r.adjusted.mean.w + r.adjusted.std[1] * standard_normal::<f64, _>(&mut rng);
            clipped[0] += usize::from(v < bounds.v_min || v > bounds.v_max);
            clipped[1] += usize::from(w < bounds.w_min || w > bounds.w_max);
        }
        let limit = 2.0 * 0.05 + 3.0 * (0.1f64 * 0.9 / n as f64).sqrt();
        for c in clipped {
            assert!((c as f64 / n as f64) <= limit);
        }
    }

    #[test]
    fn idempotent_on_feasible_optimum() {
        let noise = NoiseModel::standard();
        let bounds = ControlBounds::standard();
        let levels = SafetyLevels::default();
        let cs = [
            HalfPlaneConstraint::new([0.8, 0.0], 0.1),
            HalfPlaneConstraint::new([-0.3, 0.0], 0.4),
        ];
        let nominal = GaussianControl::new(ControlInput::new(0.9, 1.0), [0.3, 0.4]);
        let p = problem(&noise, &cs, &bounds, &levels);
        let once = project(&nominal, &p);
        let twice = project(&once.adjusted, &p);
        assert!(projection_objective(&once.adjusted, &twice.adjusted, 1.0) <= 1e-9);
    }

    #[test]
    fn spread_weight_decides_what_gives_way() {
        let noise = NoiseModel::standard();
        let bounds = ControlBounds::standard();
        let levels = SafetyLevels::default();
        let z = 1.6448536269514722;
        let nominal = GaussianControl::new(ControlInput::new(1.0, 0.0), [0.1, 0.2]);
        let mut p = problem(&noise, &[], &bounds, &levels);
        let shrink = project(&nominal, &p);
        assert_eq!(shrink.status, ProjectionStatus::RelaxedVariance);
        assert!(shrink.adjusted.std[0].abs() < 1e-12 && shrink.adjusted.mean.v == 1.0);
        p.spread_weight = 4.0;
        let shift = project(&nominal, &p);
        assert_eq!(shift.status, ProjectionStatus::Exact);
        assert!((shift.adjusted.mean.v - (1.0 - z * 0.1)).abs() < 1e-9);
        assert_eq!(shift.adjusted.std, [0.1, 0.2]);
    }

    #[test]
    fn f32_projection() {
        let noise = NoiseModel::<f32>::standard();
        let bounds = ControlBounds::standard();
        let levels = SafetyLevels::default();
        let cs = [HalfPlaneConstraint::new([1.0f32, 0.0], 0.3)];
        let nominal = GaussianControl::new(ControlInput::new(0.8f32, 0.0), [0.1, 0.2]);
        let r = project(
            &nominal,
            &ProjectionProblem {
                exec_noise: &noise,
                constraints: &cs,
                bounds: &bounds,
                levels: &levels,
                spread_weight: 1.0,
            },
        );
        assert_ne!(r.status, ProjectionStatus::InfeasibleFallback);
        assert!(r.adjusted.mean.v + 1.645 * r.adjusted.std[0] <= 0.3 - 1.645 * 0.1 + 1e-3);
    }
}
