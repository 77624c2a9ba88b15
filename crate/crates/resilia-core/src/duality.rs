//! Dual variables, slack tables, KKT diagnostics, and the Lagrangian of the
//! slack-coupled program.
//!
//! The slack-coupled program relaxes every slack-enabled constraint row to
//! `g_ij(z) <= s_ij` and charges the expected violation cost:
//!
//! ```text
//! min_{z, s >= 0}  J(z) + sum_j w_j h(s_j)   s.t.  g_ij(z) <= s_ij
//! ```
//!
//! with scenario weights `w_j` and quadrature volumes `v_j = w_j / f_j`.
//! Its Lagrangian, keeping `s >= 0` on the primal side, is
//!
//! ```text
//! L(z, s, lambda) = J(z) + sum_j [ w_j h(s_j)
//!                   + v_j sum_i lambda_ij (g_ij(z) - s_ij) ]
//! ```
//!
//! Stored multipliers follow the density convention: `lambda_ij` multiplies
//! the volume-weighted row, so the plain mass multiplier of row `(i, j)` is
//! `v_j lambda_ij`. Two identities then hold independent of the weights and
//! are what the diagnostics here verify:
//!
//! * slack stationarity reads `grad h(s_j) = lambda_j / f_j`, so the
//!   optimal slack is recovered from the multipliers alone;
//! * the slack-fixed optimal value satisfies
//!   `d P*/d s_ij = -v_j lambda_ij`, which [`sensitivity_check`] estimates
//!   by central differences.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ProblemSpec;
use crate::resilient::ViolationCost;

/// Terminal state of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Converged,
    MaxIterations,
    Infeasible,
}

impl SolveStatus {
    pub fn is_converged(self) -> bool {
        matches!(self, SolveStatus::Converged)
    }
}

/// A value per (constraint row, scenario) pair.
///
/// Rows masked out of a scenario keep a structural zero. The same layout
/// serves multipliers ([`DualMap`]) and slacks ([`SlackMap`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairTable {
    rows: Vec<Vec<f64>>,
}

impl PairTable {
    pub fn zeros(num_constraints: usize, num_scenarios: usize) -> Self {
        Self {
            rows: vec![vec![0.0; num_scenarios]; num_constraints],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some(first) = rows.first() {
            let k = first.len();
            if rows.iter().any(|r| r.len() != k) {
                return Err(Error::invalid("pair table rows must share one length"));
            }
        }
        Ok(Self { rows })
    }

    pub fn num_constraints(&self) -> usize {
        self.rows.len()
    }

    pub fn num_scenarios(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn get(&self, constraint: usize, scenario: usize) -> f64 {
        self.rows[constraint][scenario]
    }

    pub fn set(&mut self, constraint: usize, scenario: usize, value: f64) {
        self.rows[constraint][scenario] = value;
    }

    /// Values of every constraint row at one scenario, as a vector.
    pub fn scenario_column(&self, scenario: usize) -> DVector<f64> {
        DVector::from_fn(self.rows.len(), |i, _| self.rows[i][scenario])
    }

    pub fn max_abs(&self) -> f64 {
        self.rows
            .iter()
            .flatten()
            .fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(i, r)| r.iter().enumerate().map(move |(j, &v)| (i, j, v)))
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Multipliers `lambda_ij` in the density convention.
pub type DualMap = PairTable;
/// Slack values `s_ij >= 0`.
pub type SlackMap = PairTable;

/// Worst-row KKT residuals of a candidate saddle point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct KktResidual {
    /// `max(||grad_z L||_inf, slack stationarity)`.
    pub stationarity: f64,
    /// `max_ij |lambda_ij (g_ij - s_ij)|`.
    pub complementarity: f64,
    /// Worst violation of `g <= s`, `s >= 0`, `lambda >= 0`.
    pub feasibility: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.complementarity)
            .max(self.feasibility)
    }
}

/// Result of a solve, shared by every solver in the crate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: SolveStatus,
    /// Optimal decision `z*`.
    pub decision: Vec<f64>,
    pub duals: DualMap,
    pub slacks: SlackMap,
    /// `J(z*)` alone.
    pub objective: f64,
    /// `sum_j w_j h(s_j)`, zero when no cost applies.
    pub penalty: f64,
    /// `objective + penalty`.
    pub value: f64,
    pub residual: KktResidual,
    pub iterations: usize,
}

impl SolveReport {
    pub fn decision_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.decision.clone())
    }
}

/// Indices of slack-enabled constraints, in declaration order. The
/// violation cost acts on slack vectors laid out in this order.
pub fn slacked_indices(spec: &ProblemSpec) -> Vec<usize> {
    spec.constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| c.slack_allowed())
        .map(|(i, _)| i)
        .collect()
}

/// Slack vector of scenario `j` over slack-enabled rows; rows masked out of
/// `j` contribute zero.
fn slack_vector(
    spec: &ProblemSpec,
    slacks: &SlackMap,
    scenario: usize,
    slacked: &[usize],
) -> DVector<f64> {
    DVector::from_fn(slacked.len(), |p, _| {
        let i = slacked[p];
        if spec.constraints[i].active_at(scenario) {
            slacks.get(i, scenario)
        } else {
            0.0
        }
    })
}

fn check_shapes(spec: &ProblemSpec, slacks: &SlackMap, duals: &DualMap) -> Result<()> {
    let m = spec.num_constraints();
    let k = spec.num_scenarios();
    for (what, t) in [("slack table", slacks), ("dual table", duals)] {
        if t.num_constraints() != m {
            return Err(Error::DimensionMismatch {
                context: "pair table constraints",
                expected: m,
                got: t.num_constraints(),
            });
        }
        if t.num_scenarios() != k {
            return Err(Error::invalid(format!(
                "{what} covers {} scenarios, spec has {k}",
                t.num_scenarios()
            )));
        }
    }
    Ok(())
}

/// Value of the Lagrangian `L(z, s, lambda)`.
pub fn lagrangian(
    spec: &ProblemSpec,
    cost: &ViolationCost,
    z: &DVector<f64>,
    slacks: &SlackMap,
    duals: &DualMap,
) -> Result<f64> {
    check_shapes(spec, slacks, duals)?;
    let slacked = slacked_indices(spec);
    cost.check_dim(slacked.len())?;
    let mut total = spec.objective.value(z);
    for j in 0..spec.num_scenarios() {
        let w = spec.scenarios.weight(j);
        let v = spec.scenarios.volume(j);
        let s_j = slack_vector(spec, slacks, j, &slacked);
        total += w * cost.value(&s_j)?;
        let xi = spec.scenarios.point(j);
        for (i, c) in spec.constraints.iter().enumerate() {
            if let Some(g) = c.eval_scenario(z, j, &xi)? {
                let s = if c.slack_allowed() { slacks.get(i, j) } else { 0.0 };
                total += v * duals.get(i, j) * (g - s);
            }
        }
    }
    Ok(total)
}

/// Gradient of the Lagrangian in `z`.
pub fn lagrangian_gradient(
    spec: &ProblemSpec,
    z: &DVector<f64>,
    duals: &DualMap,
) -> Result<DVector<f64>> {
    let mut grad = spec.objective.gradient(z);
    for j in 0..spec.num_scenarios() {
        let v = spec.scenarios.volume(j);
        let xi = spec.scenarios.point(j);
        for (i, c) in spec.constraints.iter().enumerate() {
            let lam = duals.get(i, j);
            if lam == 0.0 {
                continue;
            }
            if let Some(g) = c.grad_scenario(z, j, &xi)? {
                grad += g * (v * lam);
            }
        }
    }
    Ok(grad)
}

/// Worst-row KKT residuals of `(z, s, lambda)` for the slack-coupled
/// program. Hard rows enter with `s_ij = 0` and no slack stationarity term.
pub fn kkt_residual(
    spec: &ProblemSpec,
    cost: &ViolationCost,
    z: &DVector<f64>,
    slacks: &SlackMap,
    duals: &DualMap,
) -> Result<KktResidual> {
    check_shapes(spec, slacks, duals)?;
    let slacked = slacked_indices(spec);
    cost.check_dim(slacked.len())?;

    let mut stationarity = lagrangian_gradient(spec, z, duals)?.amax();
    let mut complementarity = 0.0_f64;
    let mut feasibility = 0.0_f64;

    for j in 0..spec.num_scenarios() {
        let f = spec.scenarios.density(j);
        let s_j = slack_vector(spec, slacks, j, &slacked);
        let grad_h = cost.gradient(&s_j)?;
        for (p, &i) in slacked.iter().enumerate() {
            if !spec.constraints[i].active_at(j) {
                continue;
            }
            let s = slacks.get(i, j);
            // d/ds_ij of w_j h(s_j) - v_j lambda_ij s_ij is
            // w_j (grad h_i - lambda_ij / f_j); at a saddle it vanishes
            // where s > 0 and is nonnegative where s = 0
            let r = grad_h[p] - duals.get(i, j) / f;
            let sr = if s > 1e-12 { r.abs() } else { (-r).max(0.0) };
            stationarity = stationarity.max(sr);
            feasibility = feasibility.max(-s);
        }
        let xi = spec.scenarios.point(j);
        for (i, c) in spec.constraints.iter().enumerate() {
            if let Some(g) = c.eval_scenario(z, j, &xi)? {
                let s = if c.slack_allowed() { slacks.get(i, j) } else { 0.0 };
                let lam = duals.get(i, j);
                complementarity = complementarity.max((lam * (g - s)).abs());
                feasibility = feasibility.max(g - s).max(-lam);
            }
        }
    }

    Ok(KktResidual {
        stationarity,
        complementarity,
        feasibility,
    })
}

/// Minimizer of `L(., s, lambda)` in `z`, by one symmetric linear solve.
///
/// Every constraint is affine or squared-distance in `z`, so `L` is
/// quadratic in `z` with Hessian `hess J + sum_ij v_j lambda_ij curv_ij`.
pub fn min_z_lagrangian(spec: &ProblemSpec, duals: &DualMap) -> Result<DVector<f64>> {
    let n = spec.num_vars();
    let mut h = spec.objective.hessian();
    let mut lin = spec.objective.linear.clone();
    let z0 = DVector::zeros(n);
    for j in 0..spec.num_scenarios() {
        let v = spec.scenarios.volume(j);
        let xi = spec.scenarios.point(j);
        for (i, c) in spec.constraints.iter().enumerate() {
            let lam = duals.get(i, j);
            if lam == 0.0 || !c.active_at(j) {
                continue;
            }
            let w = v * lam;
            if let Some(curv) = c.curvature() {
                h += curv * w;
            }
            // affine part of the row gradient, evaluated at z = 0
            if let Some(g0) = c.grad_scenario(&z0, j, &xi)? {
                lin += g0 * w;
            }
        }
    }
    let chol = nalgebra::Cholesky::new(h)
        .ok_or_else(|| Error::Numerical("Lagrangian Hessian not positive definite".into()))?;
    let z = chol.solve(&(-lin));
    let grad = lagrangian_gradient(spec, &z, duals)?;
    if grad.amax() > 1e-8 {
        return Err(Error::Numerical(format!(
            "inner minimization gradient norm {:.3e}",
            grad.amax()
        )));
    }
    Ok(z)
}

/// Dual function `D(lambda) = min_{z, s >= 0} L(z, s, lambda)`, evaluated
/// independently of any iterative solver: the `z` part is one linear solve,
/// the `s` part a per-scenario conjugate. Defined for quadratic and linear
/// costs.
pub fn dual_value(spec: &ProblemSpec, cost: &ViolationCost, duals: &DualMap) -> Result<f64> {
    let z = min_z_lagrangian(spec, duals)?;
    let mut total = spec.objective.value(&z);
    let slacked = slacked_indices(spec);
    cost.check_dim(slacked.len())?;
    for j in 0..spec.num_scenarios() {
        let w = spec.scenarios.weight(j);
        let v = spec.scenarios.volume(j);
        let f = spec.scenarios.density(j);
        let xi = spec.scenarios.point(j);
        for (i, c) in spec.constraints.iter().enumerate() {
            if let Some(g) = c.eval_scenario(&z, j, &xi)? {
                total += v * duals.get(i, j) * g;
            }
        }
        // min over s_j >= 0 of w_j h(s_j) - v_j lambda_j's_j
        //   = w_j min [ h(s_j) - (lambda_j / f_j)'s_j ]
        let lam_j = DVector::from_fn(slacked.len(), |p, _| {
            let i = slacked[p];
            if spec.constraints[i].active_at(j) {
                duals.get(i, j) / f
            } else {
                0.0
            }
        });
        total += w * cost.conjugate_inner(&lam_j)?;
    }
    Ok(total)
}

/// Central-difference estimates of the slack sensitivities of the
/// slack-fixed optimal value, returned in the density convention so they
/// compare directly against stored multipliers: the estimate for `(i, j)`
/// is `-[P*(s + he) - P*(s - he)] / (2 h v_j)`.
pub fn sensitivity_check(spec: &ProblemSpec, slacks: &SlackMap, step: f64) -> Result<DualMap> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut est = DualMap::zeros(spec.num_constraints(), spec.num_scenarios());
    for (i, c) in spec.constraints.iter().enumerate() {
        if !c.slack_allowed() {
            continue;
        }
        for j in 0..spec.num_scenarios() {
            if !c.active_at(j) {
                continue;
            }
            let mut plus = slacks.clone();
            plus.set(i, j, slacks.get(i, j) + step);
            let mut minus = slacks.clone();
            minus.set(i, j, slacks.get(i, j) - step);
            let up = crate::resilient::solve_pre_fixed_slack(spec, &plus)?;
            let dn = crate::resilient::solve_pre_fixed_slack(spec, &minus)?;
            if !(up.status.is_converged() && dn.status.is_converged()) {
                return Err(Error::Numerical(format!(
                    "slack-fixed solve did not converge near row ({i}, {j})"
                )));
            }
            let v = spec.scenarios.volume(j);
            est.set(i, j, -(up.value - dn.value) / (2.0 * step * v));
        }
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{Constraint, Objective};
    use crate::scenario::ScenarioSet;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    /// min z^2 s.t. 1 - z <= s, single unit-weight scenario: the closed-form
    /// instance with z* = 1/2, s* = 1/2, lambda* = 1.
    fn unit_spec() -> ProblemSpec {
        let objective = Objective::quadratic(dmatrix![1.0]).unwrap();
        let c = Constraint::affine(DVector::from_vec(vec![-1.0]), -1.0);
        ProblemSpec::new(objective, vec![c], ScenarioSet::singleton(DVector::zeros(1)))
    }

    fn table(v: f64) -> PairTable {
        PairTable::from_rows(vec![vec![v]]).unwrap()
    }

    #[test]
    fn lagrangian_matches_hand_value() {
        let spec = unit_spec();
        let cost = ViolationCost::identity_quadratic(1);
        let z = DVector::from_vec(vec![0.5]);
        // L = z^2 + s^2 + lambda (1 - z - s) = 0.25 + 0.25 + 1*0 = 0.5
        let l = lagrangian(&spec, &cost, &z, &table(0.5), &table(1.0)).unwrap();
        assert_abs_diff_eq!(l, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn saddle_point_has_zero_residual() {
        let spec = unit_spec();
        let cost = ViolationCost::identity_quadratic(1);
        let z = DVector::from_vec(vec![0.5]);
        let r = kkt_residual(&spec, &cost, &z, &table(0.5), &table(1.0)).unwrap();
        assert!(r.max() < 1e-12, "residual {:?}", r);
    }

    #[test]
    fn perturbed_point_is_flagged() {
        let spec = unit_spec();
        let cost = ViolationCost::identity_quadratic(1);
        let z = DVector::from_vec(vec![0.6]);
        let r = kkt_residual(&spec, &cost, &z, &table(0.5), &table(1.0)).unwrap();
        assert!(r.stationarity > 0.1);
    }

    #[test]
    fn inner_minimizer_solves_in_one_step() {
        let spec = unit_spec();
        // grad_z L = 2z - lambda: minimizer z = lambda / 2
        let z = min_z_lagrangian(&spec, &table(1.0)).unwrap();
        assert_abs_diff_eq!(z[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dual_value_at_the_saddle_equals_primal() {
        let spec = unit_spec();
        let cost = ViolationCost::identity_quadratic(1);
        // optimal value 1/4 + 1/4 = 1/2; D(lambda*) must agree
        let d = dual_value(&spec, &cost, &table(1.0)).unwrap();
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn dual_value_is_a_lower_bound_off_the_saddle() {
        let spec = unit_spec();
        let cost = ViolationCost::identity_quadratic(1);
        for lam in [0.2, 0.7, 1.3, 2.0] {
            let d = dual_value(&spec, &cost, &table(lam)).unwrap();
            assert!(d <= 0.5 + 1e-12, "lambda {lam} gave {d}");
        }
    }

    #[test]
    fn weighted_set_keeps_the_density_convention() {
        // two scenarios, w = (3/4, 1/4), f = (3, 1): volumes (1/4, 1/4).
        // min z^2 with 1 - z <= s at both scenarios.
        let scen = ScenarioSet::new(
            vec![DVector::zeros(1), DVector::zeros(1)],
            vec![0.75, 0.25],
            vec![3.0, 1.0],
        )
        .unwrap();
        let spec = ProblemSpec::new(
            Objective::quadratic(dmatrix![1.0]).unwrap(),
            vec![Constraint::affine(DVector::from_vec(vec![-1.0]), -1.0)],
            scen,
        );
        let cost = ViolationCost::identity_quadratic(1);
        // both rows are identical, so s_j = 1 - z for both and the primal
        // reduces to z^2 + (1-z)^2: z* = 1/2, s* = 1/2, value 1/2.
        // Slack stationarity 2 w_j s_j = v_j lambda_j gives lambda_j = f_j,
        // and z-stationarity 2z = sum_j v_j lambda_j = 1 confirms it.
        let z = DVector::from_vec(vec![0.5]);
        let slacks = PairTable::from_rows(vec![vec![0.5, 0.5]]).unwrap();
        let duals = PairTable::from_rows(vec![vec![3.0, 1.0]]).unwrap();
        let r = kkt_residual(&spec, &cost, &z, &slacks, &duals).unwrap();
        assert!(r.max() < 1e-12, "residual {:?}", r);
        // the dual value at this saddle equals the primal value
        // J + sum w_j s_j^2 = 1/4 + (3/4)(1/4) + (1/4)(1/4) = 1/2
        let d = dual_value(&spec, &cost, &duals).unwrap();
        assert_abs_diff_eq!(d, 0.5, epsilon = 1e-12);
    }
}
