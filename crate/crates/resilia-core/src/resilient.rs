//! Resilient solvers: optimal compromise between performance and constraint
//! violation.
//!
//! The resilient formulation keeps every scenario in play but lets
//! slack-enabled rows be violated at a price:
//!
//! ```text
//! min_{z, s >= 0}  J(z) + sum_j w_j h(s_j)   s.t.  g_ij(z) <= s_ij
//! ```
//!
//! Three solution paths are provided. [`solve_resilient_joint`] solves the
//! coupled program in `(z, s)` directly by interior point and is the
//! reference path. [`run_arrow_hurwicz`] iterates the first-order
//! saddle-point dynamics in `(z, lambda)` only, reconstructing slacks from
//! multipliers via `s_j = (grad h)^{-1}(lambda_j / f_j)`; it needs every
//! constraint slack-enabled and a strongly convex quadratic cost.
//! [`solve_mixed_enumeration`] handles the all-or-nothing cost that counts
//! violated scenarios: the per-scenario structure makes the exact optimum
//! reachable by enumerating which scenarios to satisfy, and ties the
//! formulation to the chance-constrained program solved by
//! [`solve_chance_finite`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::duality::{self, DualMap, KktResidual, SlackMap, SolveReport, SolveStatus};
use crate::error::{Error, Result};
use crate::problem::{Constraint, ProblemSpec};
use crate::solver::{self, ConvexProgram, Ineq, IpmOptions, IpmStatus};

/// Per-scenario violation cost `h` with `h(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ViolationCost {
    /// `h(s) = s' Gamma s` with `Gamma` symmetric positive definite,
    /// stored row-major.
    Quadratic { gamma: Vec<Vec<f64>> },
    /// `h(s) = gamma * sum_i s_i` (on `s >= 0`).
    Linear { gamma: f64 },
    /// `h(s) = gamma * (1 - prod_i H(-s_i))` with `H(x) = 1` iff `x >= 0`:
    /// a flat charge whenever any entry of `s` is positive.
    HeavisideProduct { gamma: f64 },
}

impl ViolationCost {
    pub fn quadratic(gamma: DMatrix<f64>) -> Result<Self> {
        if !gamma.is_square() {
            return Err(Error::invalid("violation cost matrix must be square"));
        }
        let sym_err = (&gamma - gamma.transpose()).amax();
        if sym_err > 1e-10 {
            return Err(Error::invalid("violation cost matrix must be symmetric"));
        }
        if gamma.nrows() > 0 {
            let min_eig = gamma
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .min();
            if !(min_eig > 0.0) {
                return Err(Error::invalid(
                    "violation cost matrix must be positive definite",
                ));
            }
        }
        Ok(ViolationCost::Quadratic {
            gamma: crate::problem::mat_to_rows(&gamma),
        })
    }

    /// `h(s) = ||s||^2`.
    pub fn identity_quadratic(dim: usize) -> Self {
        ViolationCost::Quadratic {
            gamma: crate::problem::mat_to_rows(&DMatrix::identity(dim, dim)),
        }
    }

    /// `h(s) = c ||s||^2` with `c > 0`.
    pub fn scaled_identity(dim: usize, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::invalid("violation cost scale must be positive"));
        }
        Self::quadratic(DMatrix::identity(dim, dim) * c)
    }

    pub fn linear(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("violation cost rate must be positive"));
        }
        Ok(ViolationCost::Linear { gamma })
    }

    pub fn heaviside(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("violation charge must be positive"));
        }
        Ok(ViolationCost::HeavisideProduct { gamma })
    }

    pub fn is_heaviside(&self) -> bool {
        matches!(self, ViolationCost::HeavisideProduct { .. })
    }

    pub(crate) fn gamma_matrix(&self) -> Option<DMatrix<f64>> {
        match self {
            ViolationCost::Quadratic { gamma } if gamma.is_empty() => {
                Some(DMatrix::zeros(0, 0))
            }
            ViolationCost::Quadratic { gamma } => {
                crate::problem::mat_from_rows(gamma, "violation cost").ok()
            }
            _ => None,
        }
    }

    /// Checks that the cost accepts slack vectors of length `dim`.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        match self {
            ViolationCost::Quadratic { gamma } => {
                if gamma.len() != dim {
                    return Err(Error::DimensionMismatch {
                        context: "violation cost dimension",
                        expected: dim,
                        got: gamma.len(),
                    });
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, s: &DVector<f64>) -> Result<f64> {
        match self {
            ViolationCost::Quadratic { .. } => {
                let g = self.gamma_matrix().ok_or_else(bad_gamma)?;
                check_cost_len(g.nrows(), s.len())?;
                Ok((&g * s).dot(s))
            }
            ViolationCost::Linear { gamma } => Ok(gamma * s.sum()),
            ViolationCost::HeavisideProduct { gamma } => {
                Ok(if s.iter().any(|&v| v > 0.0) { *gamma } else { 0.0 })
            }
        }
    }

    /// `grad h(s)`; the all-or-nothing cost has none.
    pub fn gradient(&self, s: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ViolationCost::Quadratic { .. } => {
                let g = self.gamma_matrix().ok_or_else(bad_gamma)?;
                check_cost_len(g.nrows(), s.len())?;
                Ok(2.0 * &g * s)
            }
            ViolationCost::Linear { gamma } => {
                Ok(DVector::from_element(s.len(), *gamma))
            }
            ViolationCost::HeavisideProduct { .. } => Err(Error::invalid(
                "all-or-nothing cost has no gradient; use the enumeration solver",
            )),
        }
    }

    /// Solves `grad h(s) = y` for `s`; defined for the quadratic cost only,
    /// where it is the linear solve `s = (2 Gamma)^{-1} y`.
    pub fn grad_h_inverse(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            ViolationCost::Quadratic { .. } => {
                let g = self.gamma_matrix().ok_or_else(bad_gamma)?;
                check_cost_len(g.nrows(), y.len())?;
                let chol = nalgebra::Cholesky::new(2.0 * g)
                    .ok_or_else(|| Error::Numerical("violation cost not positive definite".into()))?;
                Ok(chol.solve(y))
            }
            _ => Err(Error::invalid(
                "slack recovery from multipliers needs a quadratic violation cost",
            )),
        }
    }

    /// `min_{s >= 0} h(s) - y's`, the inner problem of the dual function.
    /// Unbounded directions return negative infinity.
    pub fn conjugate_inner(&self, y: &DVector<f64>) -> Result<f64> {
        match self {
            ViolationCost::Quadratic { .. } => {
                let g = self.gamma_matrix().ok_or_else(bad_gamma)?;
                check_cost_len(g.nrows(), y.len())?;
                let n = y.len();
                if n == 0 {
                    return Ok(0.0);
                }
                if is_diagonal(&g) {
                    let mut total = 0.0;
                    for i in 0..n {
                        if y[i] > 0.0 {
                            total -= y[i] * y[i] / (4.0 * g[(i, i)]);
                        }
                    }
                    return Ok(total);
                }
                // small bound-constrained quadratic program
                let prog = ConvexProgram {
                    hess: &g + g.transpose(),
                    lin: -y,
                    offset: 0.0,
                    ineqs: (0..n)
                        .map(|i| {
                            let mut a = DVector::zeros(n);
                            a[i] = -1.0;
                            Ineq::Affine { a, b: 0.0 }
                        })
                        .collect(),
                };
                let opts = IpmOptions {
                    warm_start: Some(DVector::from_element(n, 1.0)),
                    ..IpmOptions::default()
                };
                let r = solver::solve(&prog, &opts)?;
                Ok(r.value)
            }
            ViolationCost::Linear { gamma } => {
                if y.iter().any(|&v| v > *gamma) {
                    Ok(f64::NEG_INFINITY)
                } else {
                    Ok(0.0)
                }
            }
            ViolationCost::HeavisideProduct { .. } => Err(Error::invalid(
                "all-or-nothing cost has no usable conjugate; use the enumeration solver",
            )),
        }
    }
}

fn bad_gamma() -> Error {
    Error::invalid("violation cost matrix rows must share one length")
}

fn check_cost_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context: "violation cost input",
            expected,
            got,
        });
    }
    Ok(())
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if i != j && m[(i, j)].abs() > 1e-14 {
                return false;
            }
        }
    }
    true
}

/// `h(s)` as a free function.
pub fn cost_value(cost: &ViolationCost, s: &DVector<f64>) -> Result<f64> {
    cost.value(s)
}

/// `(grad h)^{-1}(y)` as a free function.
pub fn grad_h_inverse(cost: &ViolationCost, y: &DVector<f64>) -> Result<DVector<f64>> {
    cost.grad_h_inverse(y)
}

/// Gated ascent direction: component `i` passes unchanged where `x_i > 0`
/// and is clipped to its nonnegative part where `x_i <= 0`, so multipliers
/// at zero can only move up.
pub fn positive_projection(x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| if x[i] > 0.0 { v[i] } else { v[i].max(0.0) })
}

/// Iterate of the saddle-point dynamics: decision and multipliers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaddleState {
    pub z: Vec<f64>,
    pub duals: DualMap,
}

impl SaddleState {
    pub fn new(z: DVector<f64>, duals: DualMap) -> Self {
        Self {
            z: z.as_slice().to_vec(),
            duals,
        }
    }

    pub fn z_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.z.clone())
    }
}

/// Solver tolerances for the interior-point paths.
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-10,
        }
    }
}

impl SolveOptions {
    fn ipm(&self, warm: Option<DVector<f64>>) -> IpmOptions {
        IpmOptions {
            max_iter: self.max_iter,
            comp_tol: self.tol,
            res_tol: self.tol,
            warm_start: warm,
        }
    }
}

/// Row bookkeeping for programs lowered from a [`ProblemSpec`].
enum RowTag {
    /// Coupled row `g_ij(z) - s_ij <= 0` of a slack-enabled constraint.
    Coupled(usize, usize),
    /// Hard row `g_ij(z) <= 0`.
    Hard(usize, usize),
    /// `-s_ij <= 0`.
    Nonneg,
}

struct Lowered {
    prog: ConvexProgram,
    tags: Vec<RowTag>,
    /// Variable index of each slack, in (scenario-major) pair order.
    slack_pos: Vec<(usize, usize, usize)>,
}

/// Lowers the slack-coupled program over `(z, s)`. `enforce_hard` decides
/// per (row, scenario) whether a hard row is imposed; soft rows are always
/// coupled. With `enforce_hard` always true this is the resilient program
/// itself; the enumeration solver passes subset masks.
fn lower_joint(
    spec: &ProblemSpec,
    cost: &ViolationCost,
    enforce_hard: &dyn Fn(usize, usize) -> bool,
) -> Result<Lowered> {
    let n = spec.num_vars();
    let k = spec.num_scenarios();
    let slacked = duality::slacked_indices(spec);
    cost.check_dim(slacked.len())?;
    let gamma = match cost {
        ViolationCost::Quadratic { .. } => Some(
            cost.gamma_matrix().ok_or_else(bad_gamma)?,
        ),
        ViolationCost::Linear { .. } => None,
        ViolationCost::HeavisideProduct { .. } => {
            return Err(Error::invalid(
                "all-or-nothing cost is not convex; use the enumeration solver",
            ))
        }
    };

    // slack variables, scenario-major
    let mut slack_pos = Vec::new();
    let mut var = n;
    for j in 0..k {
        for &i in &slacked {
            if spec.constraints[i].active_at(j) {
                slack_pos.push((i, j, var));
                var += 1;
            }
        }
    }
    let total = var;

    let mut hess = DMatrix::zeros(total, total);
    hess.view_mut((0, 0), (n, n))
        .copy_from(&spec.objective.hessian());
    let mut lin = DVector::zeros(total);
    lin.rows_mut(0, n).copy_from(&spec.objective.linear);

    match (&gamma, cost) {
        (Some(g), _) => {
            // w_j s_j' Gamma s_j restricted to the rows active at j
            for j in 0..k {
                let w = spec.scenarios.weight(j);
                let here: Vec<&(usize, usize, usize)> = slack_pos
                    .iter()
                    .filter(|(_, jj, _)| *jj == j)
                    .collect();
                for &&(i1, _, p1) in &here {
                    let sp1 = slacked.iter().position(|&x| x == i1).unwrap();
                    for &&(i2, _, p2) in &here {
                        let sp2 = slacked.iter().position(|&x| x == i2).unwrap();
                        hess[(p1, p2)] += 2.0 * w * g[(sp1, sp2)];
                    }
                }
            }
        }
        (None, ViolationCost::Linear { gamma }) => {
            for &(_, j, p) in &slack_pos {
                lin[p] = spec.scenarios.weight(j) * gamma;
            }
        }
        _ => unreachable!(),
    }

    let mut ineqs = Vec::new();
    let mut tags = Vec::new();
    for j in 0..k {
        let xi = spec.scenarios.point(j);
        for (i, c) in spec.constraints.iter().enumerate() {
            if !c.active_at(j) {
                continue;
            }
            if c.slack_allowed() {
                let p = slack_pos
                    .iter()
                    .find(|(ii, jj, _)| *ii == i && *jj == j)
                    .map(|(_, _, p)| *p)
                    .unwrap();
                ineqs.push(lower_row(c, j, &xi, total, Some(p))?);
                tags.push(RowTag::Coupled(i, j));
            } else if enforce_hard(i, j) {
                ineqs.push(lower_row(c, j, &xi, total, None)?);
                tags.push(RowTag::Hard(i, j));
            }
        }
    }
    for &(_, _, p) in &slack_pos {
        let mut a = DVector::zeros(total);
        a[p] = -1.0;
        ineqs.push(Ineq::Affine { a, b: 0.0 });
        tags.push(RowTag::Nonneg);
    }

    Ok(Lowered {
        prog: ConvexProgram {
            hess,
            lin,
            offset: spec.objective.offset,
            ineqs,
        },
        tags,
        slack_pos,
    })
}

/// One constraint row at scenario `j` as a solver inequality over the joint
/// variables; `slack_var` couples `- s` into the row. The caller dispatches
/// on activity, so a masked tabulated row here is an error.
fn lower_row(
    c: &Constraint,
    j: usize,
    xi: &DVector<f64>,
    total: usize,
    slack_var: Option<usize>,
) -> Result<Ineq> {
    match c {
        Constraint::Affine { coeffs, .. } => {
            let (a, rhs) = match coeffs {
                crate::problem::AffineCoeffs::Parametric { a, b0, b_xi } => {
                    let rhs = match b_xi {
                        None => *b0,
                        Some(bx) => b0 + bx.dot(xi),
                    };
                    (a.clone(), rhs)
                }
                crate::problem::AffineCoeffs::PerScenario { rows } => {
                    let row = rows
                        .get(j)
                        .and_then(Option::as_ref)
                        .ok_or_else(|| Error::invalid(format!("row inactive at scenario {j}")))?;
                    (row.a.clone(), row.b)
                }
            };
            let mut ext = DVector::zeros(total);
            ext.rows_mut(0, a.len()).copy_from(&a);
            if let Some(p) = slack_var {
                ext[p] = -1.0;
            }
            Ok(Ineq::Affine { a: ext, b: rhs })
        }
        Constraint::Ball {
            selector,
            center0,
            center_xi,
            radius_sq,
            ..
        } => {
            let center = match center_xi {
                None => center0.clone(),
                Some(cx) => center0 + cx * xi,
            };
            let mut sel = DMatrix::zeros(selector.nrows(), total);
            sel.view_mut((0, 0), (selector.nrows(), selector.ncols()))
                .copy_from(selector);
            let mut a = DVector::zeros(total);
            if let Some(p) = slack_var {
                a[p] = -1.0;
            }
            Ok(Ineq::Quad {
                sel,
                center,
                a,
                b: *radius_sq,
            })
        }
    }
}

/// Weight-aware dual extraction: mass multipliers from the engine divided by
/// the quadrature volume give multipliers in the density convention.
fn extract_tables(
    spec: &ProblemSpec,
    lowered: &Lowered,
    lam: &[f64],
    x: &DVector<f64>,
) -> (DualMap, SlackMap) {
    let m = spec.num_constraints();
    let k = spec.num_scenarios();
    let mut duals = DualMap::zeros(m, k);
    let mut slacks = SlackMap::zeros(m, k);
    for (tag, &mu) in lowered.tags.iter().zip(lam.iter()) {
        match *tag {
            RowTag::Coupled(i, j) | RowTag::Hard(i, j) => {
                duals.set(i, j, mu / spec.scenarios.volume(j));
            }
            RowTag::Nonneg => {}
        }
    }
    for &(i, j, p) in &lowered.slack_pos {
        slacks.set(i, j, x[p].max(0.0));
    }
    (duals, slacks)
}

fn penalty_value(spec: &ProblemSpec, cost: &ViolationCost, slacks: &SlackMap) -> Result<f64> {
    let slacked = duality::slacked_indices(spec);
    let mut total = 0.0;
    for j in 0..spec.num_scenarios() {
        let s_j = DVector::from_fn(slacked.len(), |p, _| {
            let i = slacked[p];
            if spec.constraints[i].active_at(j) {
                slacks.get(i, j)
            } else {
                0.0
            }
        });
        total += spec.scenarios.weight(j) * cost.value(&s_j)?;
    }
    Ok(total)
}

pub(crate) fn infeasible_report(spec: &ProblemSpec, iterations: usize) -> SolveReport {
    SolveReport {
        status: SolveStatus::Infeasible,
        decision: vec![0.0; spec.num_vars()],
        duals: DualMap::zeros(spec.num_constraints(), spec.num_scenarios()),
        slacks: SlackMap::zeros(spec.num_constraints(), spec.num_scenarios()),
        objective: f64::INFINITY,
        penalty: 0.0,
        value: f64::INFINITY,
        residual: KktResidual {
            stationarity: f64::INFINITY,
            complementarity: f64::INFINITY,
            feasibility: f64::INFINITY,
        },
        iterations,
    }
}

/// KKT residuals that skip hard rows excluded by `enforce_hard`; with the
/// all-true mask this is exactly [`duality::kkt_residual`] by construction.
fn masked_kkt_residual(
    spec: &ProblemSpec,
    cost: &ViolationCost,
    z: &DVector<f64>,
    slacks: &SlackMap,
    duals: &DualMap,
    enforce_hard: &dyn Fn(usize, usize) -> bool,
) -> Result<KktResidual> {
    let slacked = duality::slacked_indices(spec);
    let mut stationarity = duality::lagrangian_gradient(spec, z, duals)?.amax();
    let mut complementarity = 0.0_f64;
    let mut feasibility = 0.0_f64;
    for j in 0..spec.num_scenarios() {
        let f = spec.scenarios.density(j);
        let s_j = DVector::from_fn(slacked.len(), |p, _| {
            let i = slacked[p];
            if spec.constraints[i].active_at(j) {
                slacks.get(i, j)
            } else {
                0.0
            }
        });
        if !slacked.is_empty() {
            let grad_h = cost.gradient(&s_j)?;
            for (p, &i) in slacked.iter().enumerate() {
                if !spec.constraints[i].active_at(j) {
                    continue;
                }
                let s = slacks.get(i, j);
                let r = grad_h[p] - duals.get(i, j) / f;
                let sr = if s > 1e-12 { r.abs() } else { (-r).max(0.0) };
                stationarity = stationarity.max(sr);
                feasibility = feasibility.max(-s);
            }
        }
        let xi = spec.scenarios.point(j);
        for (i, c) in spec.constraints.iter().enumerate() {
            let soft = c.slack_allowed();
            if !soft && !enforce_hard(i, j) {
                continue;
            }
            if let Some(g) = c.eval_scenario(z, j, &xi)? {
                let s = if soft { slacks.get(i, j) } else { 0.0 };
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

fn solve_masked(
    spec: &ProblemSpec,
    cost: &ViolationCost,
    opts: &SolveOptions,
    enforce_hard: &dyn Fn(usize, usize) -> bool,
) -> Result<SolveReport> {
    let n = spec.num_vars();
    let lowered = lower_joint(spec, cost, enforce_hard)?;

    // strictly feasible warm start when there are no hard rows: any z with
    // slacks above every row value
    let warm = {
        let z0 = nalgebra::Cholesky::new(spec.objective.hessian())
            .map(|ch| ch.solve(&(-&spec.objective.linear)))
            .unwrap_or_else(|| DVector::zeros(n));
        let mut x = DVector::zeros(lowered.prog.lin.len());
        x.rows_mut(0, n).copy_from(&z0);
        let mut ok = true;
        for &(i, j, p) in &lowered.slack_pos {
            let xi = spec.scenarios.point(j);
            match spec.constraints[i].eval_scenario(&z0, j, &xi)? {
                Some(g) => x[p] = g.max(0.0) + 1.0,
                None => ok = false,
            }
        }
        if ok { Some(x) } else { None }
    };

    let r = solver::solve(&lowered.prog, &opts.ipm(warm))?;
    if r.status == IpmStatus::Infeasible {
        return Ok(infeasible_report(spec, r.iterations));
    }
    let z = r.x.rows(0, n).into_owned();
    let (duals, slacks) = extract_tables(spec, &lowered, &r.lambda, &r.x);
    let objective = spec.objective.value(&z);
    let penalty = penalty_value(spec, cost, &slacks)?;
    let residual = masked_kkt_residual(spec, cost, &z, &slacks, &duals, enforce_hard)?;
    Ok(SolveReport {
        status: match r.status {
            IpmStatus::Converged => SolveStatus::Converged,
            IpmStatus::MaxIterations => SolveStatus::MaxIterations,
            IpmStatus::Infeasible => SolveStatus::Infeasible,
        },
        decision: z.as_slice().to_vec(),
        duals,
        slacks,
        objective,
        penalty,
        value: objective + penalty,
        residual,
        iterations: r.iterations,
    })
}

/// Solves the slack-coupled resilient program in `(z, s)` by interior
/// point. Hard rows (slack disabled) are enforced at every scenario.
pub fn solve_resilient_joint(spec: &ProblemSpec, cost: &ViolationCost) -> Result<SolveReport> {
    solve_resilient_joint_with(spec, cost, &SolveOptions::default())
}

pub fn solve_resilient_joint_with(
    spec: &ProblemSpec,
    cost: &ViolationCost,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    solve_masked(spec, cost, opts, &|_, _| true)
}

/// Solves `min_z J(z)` subject to `g_ij(z) <= s_ij` with the slack table
/// held fixed (zero for hard rows). The reported `value` is the optimal
/// objective alone; its slack sensitivities are `-v_j lambda_ij`.
pub fn solve_pre_fixed_slack(spec: &ProblemSpec, slacks: &SlackMap) -> Result<SolveReport> {
    let n = spec.num_vars();
    let mut ineqs = Vec::new();
    let mut tags = Vec::new();
    for j in 0..spec.num_scenarios() {
        let xi = spec.scenarios.point(j);
        for (i, c) in spec.constraints.iter().enumerate() {
            if !c.active_at(j) {
                continue;
            }
            let s = if c.slack_allowed() { slacks.get(i, j) } else { 0.0 };
            let row = match lower_row(c, j, &xi, n, None)? {
                Ineq::Affine { a, b } => Ineq::Affine { a, b: b + s },
                Ineq::Quad { sel, center, a, b } => Ineq::Quad {
                    sel,
                    center,
                    a,
                    b: b + s,
                },
            };
            ineqs.push(row);
            tags.push((i, j));
        }
    }
    let prog = ConvexProgram {
        hess: spec.objective.hessian(),
        lin: spec.objective.linear.clone(),
        offset: spec.objective.offset,
        ineqs,
    };
    let r = solver::solve(&prog, &IpmOptions::default())?;
    if r.status == IpmStatus::Infeasible {
        return Ok(infeasible_report(spec, r.iterations));
    }
    let z = r.x.clone();
    let mut duals = DualMap::zeros(spec.num_constraints(), spec.num_scenarios());
    for (&(i, j), &mu) in tags.iter().zip(r.lambda.iter()) {
        duals.set(i, j, mu / spec.scenarios.volume(j));
    }

    let mut complementarity = 0.0_f64;
    let mut feasibility = 0.0_f64;
    for &(i, j) in &tags {
        let g = spec.constraint_value(i, j, &z)?.unwrap_or(0.0);
        let s = if spec.constraints[i].slack_allowed() {
            slacks.get(i, j)
        } else {
            0.0
        };
        let lam = duals.get(i, j);
        complementarity = complementarity.max((lam * (g - s)).abs());
        feasibility = feasibility.max(g - s).max(-lam);
    }
    let stationarity = {
        // stationarity of J + sum v lambda g, offset by the fixed slacks
        // only through the feasible set, so the plain Lagrangian gradient
        // applies
        duality::lagrangian_gradient(spec, &z, &duals)?.amax()
    };

    Ok(SolveReport {
        status: match r.status {
            IpmStatus::Converged => SolveStatus::Converged,
            IpmStatus::MaxIterations => SolveStatus::MaxIterations,
            IpmStatus::Infeasible => SolveStatus::Infeasible,
        },
        decision: z.as_slice().to_vec(),
        duals,
        slacks: slacks.clone(),
        objective: r.value,
        penalty: 0.0,
        value: r.value,
        residual: KktResidual {
            stationarity,
            complementarity,
            feasibility,
        },
        iterations: r.iterations,
    })
}

/// Options of the first-order saddle-point iteration.
#[derive(Debug, Clone, Copy)]
pub struct AhOptions {
    /// Primal step; default `0.5 / (1 + ||hess J||)`.
    pub alpha: Option<f64>,
    /// Dual step; same default.
    pub beta: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for AhOptions {
    fn default() -> Self {
        Self {
            alpha: None,
            beta: None,
            tol: 1e-8,
            max_iter: 200_000,
        }
    }
}

/// Slack table reconstructed from multipliers,
/// `s_j = (grad h)^{-1}(lambda_j / f_j)` on the rows of scenario `j`.
pub fn slacks_from_duals(
    spec: &ProblemSpec,
    cost: &ViolationCost,
    duals: &DualMap,
) -> Result<SlackMap> {
    let slacked = duality::slacked_indices(spec);
    let mut slacks = SlackMap::zeros(spec.num_constraints(), spec.num_scenarios());
    for j in 0..spec.num_scenarios() {
        let f = spec.scenarios.density(j);
        let lam = DVector::from_fn(slacked.len(), |p, _| duals.get(slacked[p], j) / f);
        let s = cost.grad_h_inverse(&lam)?;
        for (p, &i) in slacked.iter().enumerate() {
            if spec.constraints[i].active_at(j) {
                slacks.set(i, j, s[p].max(0.0));
            }
        }
    }
    Ok(slacks)
}

fn require_fully_slacked(spec: &ProblemSpec) -> Result<()> {
    if spec.constraints.iter().any(|c| !c.slack_allowed()) {
        return Err(Error::invalid(
            "saddle-point iteration needs every constraint slack-enabled",
        ));
    }
    for (i, c) in spec.constraints.iter().enumerate() {
        for j in 0..spec.num_scenarios() {
            if !c.active_at(j) {
                return Err(Error::invalid(format!(
                    "saddle-point iteration needs row {i} active at every scenario"
                )));
            }
        }
    }
    Ok(())
}

/// One explicit step of the saddle-point dynamics from `state`:
/// descent in `z` along `grad_z L`, gated ascent in `lambda` along
/// `g_ij(z) - s_ij(lambda)`, both using the incoming state.
pub fn arrow_hurwicz_step(
    spec: &ProblemSpec,
    cost: &ViolationCost,
    state: &SaddleState,
    alpha: f64,
    beta: f64,
) -> Result<SaddleState> {
    require_fully_slacked(spec)?;
    let z = state.z_vector();
    let grad = duality::lagrangian_gradient(spec, &z, &state.duals)?;
    let z_next = &z - grad * alpha;

    let slacks = slacks_from_duals(spec, cost, &state.duals)?;
    let mut duals = state.duals.clone();
    for j in 0..spec.num_scenarios() {
        let xi = spec.scenarios.point(j);
        for (i, c) in spec.constraints.iter().enumerate() {
            let g = c
                .eval_scenario(&z, j, &xi)?
                .expect("rows are active everywhere");
            let lam = state.duals.get(i, j);
            let dir = g - slacks.get(i, j);
            let gated = if lam > 0.0 { dir } else { dir.max(0.0) };
            duals.set(i, j, (lam + beta * gated).max(0.0));
        }
    }
    Ok(SaddleState::new(z_next, duals))
}

/// Runs the saddle-point dynamics to a KKT residual below `opts.tol`.
///
/// The iterates spiral toward the saddle, so the residual is not monotone;
/// steps are accepted unconditionally and halved only when no new best
/// residual appears for a stretch of iterations, restarting from the best
/// iterate seen. Divergence restarts immediately.
pub fn run_arrow_hurwicz(
    spec: &ProblemSpec,
    cost: &ViolationCost,
    opts: &AhOptions,
) -> Result<SolveReport> {
    require_fully_slacked(spec)?;
    let default_step = {
        let top = spec
            .objective
            .hessian()
            .symmetric_eigen()
            .eigenvalues
            .amax();
        0.5 / (1.0 + top)
    };
    let mut alpha = opts.alpha.unwrap_or(default_step);
    let mut beta = opts.beta.unwrap_or(default_step);
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::invalid("step sizes must be positive"));
    }
    let step_floor = 1e-8 * alpha.min(beta);
    const PATIENCE: usize = 500;

    let mut state = SaddleState::new(
        DVector::zeros(spec.num_vars()),
        DualMap::zeros(spec.num_constraints(), spec.num_scenarios()),
    );
    let residual_of = |st: &SaddleState| -> Result<(KktResidual, SlackMap)> {
        let slacks = slacks_from_duals(spec, cost, &st.duals)?;
        let r = duality::kkt_residual(spec, cost, &st.z_vector(), &slacks, &st.duals)?;
        Ok((r, slacks))
    };
    let (mut res, mut slacks) = residual_of(&state)?;
    let mut best = (state.clone(), res, slacks.clone());
    let mut since_best = 0usize;

    let mut iterations = 0;
    let mut status = SolveStatus::MaxIterations;
    while iterations < opts.max_iter {
        iterations += 1;
        if res.max() <= opts.tol {
            status = SolveStatus::Converged;
            break;
        }
        let candidate = arrow_hurwicz_step(spec, cost, &state, alpha, beta)?;
        let (cand_res, cand_slacks) = residual_of(&candidate)?;
        let diverged = !cand_res.max().is_finite() || cand_res.max() > 1e9 * (1.0 + best.1.max());
        if diverged || since_best >= PATIENCE {
            if alpha.min(beta) <= step_floor {
                break;
            }
            alpha *= 0.5;
            beta *= 0.5;
            state = best.0.clone();
            res = best.1;
            slacks = best.2.clone();
            since_best = 0;
            continue;
        }
        state = candidate;
        res = cand_res;
        slacks = cand_slacks;
        if res.max() < best.1.max() * (1.0 - 1e-12) {
            best = (state.clone(), res, slacks.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    if res.max() <= opts.tol {
        status = SolveStatus::Converged;
    }
    if best.1.max() < res.max() {
        state = best.0;
        res = best.1;
        slacks = best.2;
        if res.max() <= opts.tol {
            status = SolveStatus::Converged;
        }
    }

    let z = state.z_vector();
    let objective = spec.objective.value(&z);
    let penalty = penalty_value(spec, cost, &slacks)?;
    Ok(SolveReport {
        status,
        decision: state.z,
        duals: state.duals,
        slacks,
        objective,
        penalty,
        value: objective + penalty,
        residual: res,
        iterations,
    })
}

/// Exhaustive lattice search over `z` for the resilient objective with
/// slacks eliminated at their optimum `s_ij = max(g_ij(z), 0)`; valid for
/// separable costs (diagonal quadratic, linear, all-or-nothing). Hard rows
/// must hold outright. Returns the best lattice point and its value.
pub fn brute_force_oracle(
    spec: &ProblemSpec,
    cost: &ViolationCost,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    points_per_dim: usize,
) -> Result<(DVector<f64>, f64)> {
    let n = spec.num_vars();
    if n > 6 {
        return Err(Error::TooLarge(format!(
            "lattice search supports up to 6 variables, got {n}"
        )));
    }
    if lower.len() != n || upper.len() != n {
        return Err(Error::invalid("lattice bounds must match the decision dimension"));
    }
    if points_per_dim < 2 {
        return Err(Error::invalid("lattice needs at least two points per axis"));
    }
    let total = (points_per_dim as u128).pow(n as u32);
    if total > 20_000_000 {
        return Err(Error::TooLarge(format!("lattice of {total} points")));
    }
    let slacked = duality::slacked_indices(spec);
    cost.check_dim(slacked.len())?;
    let diag = match cost {
        ViolationCost::Quadratic { .. } => {
            let g = cost.gamma_matrix().ok_or_else(bad_gamma)?;
            if !is_diagonal(&g) {
                return Err(Error::invalid(
                    "lattice search needs a separable violation cost",
                ));
            }
            Some((0..g.nrows()).map(|i| g[(i, i)]).collect::<Vec<_>>())
        }
        _ => None,
    };

    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut idx = vec![0usize; n];
    loop {
        let z = DVector::from_fn(n, |d, _| {
            lower[d] + (upper[d] - lower[d]) * idx[d] as f64 / (points_per_dim - 1) as f64
        });
        let v = lattice_value(spec, cost, &slacked, diag.as_deref(), &z)?;
        if best.as_ref().map_or(true, |(_, bv)| v < *bv) {
            best = Some((z, v));
        }
        // next lattice index
        let mut d = 0;
        loop {
            if d == n {
                let (z, v) = best.unwrap();
                return Ok((z, v));
            }
            idx[d] += 1;
            if idx[d] < points_per_dim {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

fn lattice_value(
    spec: &ProblemSpec,
    cost: &ViolationCost,
    slacked: &[usize],
    diag: Option<&[f64]>,
    z: &DVector<f64>,
) -> Result<f64> {
    let mut total = spec.objective.value(z);
    for j in 0..spec.num_scenarios() {
        let w = spec.scenarios.weight(j);
        let mut any_soft_violation = false;
        let mut charge = 0.0;
        for (p, &i) in slacked.iter().enumerate() {
            let Some(g) = spec.constraint_value(i, j, z)? else { continue };
            let s = g.max(0.0);
            match cost {
                ViolationCost::Quadratic { .. } => {
                    charge += diag.expect("checked diagonal")[p] * s * s;
                }
                ViolationCost::Linear { gamma } => charge += gamma * s,
                ViolationCost::HeavisideProduct { .. } => {
                    if s > 0.0 {
                        any_soft_violation = true;
                    }
                }
            }
        }
        if let ViolationCost::HeavisideProduct { gamma } = cost {
            if any_soft_violation {
                charge = *gamma;
            }
        }
        total += w * charge;
        for (i, c) in spec.constraints.iter().enumerate() {
            if c.slack_allowed() {
                continue;
            }
            if let Some(g) = spec.constraint_value(i, j, z)? {
                if g > 0.0 {
                    return Ok(f64::INFINITY);
                }
            }
        }
    }
    Ok(total)
}

/// Output of the scenario-subset enumeration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixedSolution {
    pub report: SolveReport,
    /// `1 - Pr[selected subset]`: the violation probability the optimum
    /// chooses to tolerate.
    pub achieved_delta: f64,
    /// Scenario indices whose hard rows are enforced.
    pub satisfied: Vec<usize>,
}

/// Output of the finite chance-constrained solve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChanceSolution {
    pub report: SolveReport,
    pub achieved_probability: f64,
    pub kept: Vec<usize>,
}

const ENUM_SCENARIO_CAP: usize = 16;
const TIE_TOL: f64 = 1e-9;

/// Exact solver for the all-or-nothing hard cost by enumerating which
/// scenarios to satisfy.
///
/// Hard rows (slack disabled) are charged `gamma` per violated scenario,
/// weighted by scenario probability; slack-enabled rows keep their own
/// convex `soft_cost` everywhere. For each candidate subset the inner
/// program enforces hard rows on the subset only, and the best total wins;
/// within a value tie the larger satisfied probability is preferred, which
/// makes the reported `achieved_delta` the smallest one attaining the
/// optimum. Hard-row slack entries of the report carry the signed values
/// `g_ij(z*)` as a diagnostic of how far each scenario lands from
/// feasibility.
pub fn solve_mixed_enumeration(
    spec: &ProblemSpec,
    hard_cost: &ViolationCost,
    soft_cost: Option<&ViolationCost>,
) -> Result<MixedSolution> {
    let ViolationCost::HeavisideProduct { gamma } = hard_cost else {
        return Err(Error::invalid(
            "enumeration applies to the all-or-nothing violation cost",
        ));
    };
    let k = spec.num_scenarios();
    if k > ENUM_SCENARIO_CAP {
        return Err(Error::TooLarge(format!(
            "enumeration over {k} scenarios exceeds the cap of {ENUM_SCENARIO_CAP}"
        )));
    }
    let slacked = duality::slacked_indices(spec);
    let soft = match (slacked.is_empty(), soft_cost) {
        (true, _) => ViolationCost::identity_quadratic(0),
        (false, Some(c)) => {
            c.check_dim(slacked.len())?;
            if c.is_heaviside() {
                return Err(Error::invalid("soft rows need a convex violation cost"));
            }
            c.clone()
        }
        (false, None) => {
            return Err(Error::invalid(
                "slack-enabled rows need a violation cost for the enumeration",
            ))
        }
    };

    let opts = SolveOptions::default();
    let mut best: Option<(f64, f64, u32, SolveReport)> = None;
    for mask in 0u32..(1u32 << k) {
        let enforce = |_i: usize, j: usize| mask & (1 << j) != 0;
        let sub = solve_masked(spec, &soft, &opts, &enforce)?;
        if sub.status == SolveStatus::Infeasible {
            continue;
        }
        let pr: f64 = (0..k)
            .filter(|j| mask & (1 << j) != 0)
            .map(|j| spec.scenarios.weight(j))
            .sum();
        let total = sub.value + gamma * (1.0 - pr);
        let replace = match &best {
            None => true,
            Some((bt, bp, _, _)) => {
                total < bt - TIE_TOL || (total <= bt + TIE_TOL && pr > *bp)
            }
        };
        if replace {
            best = Some((total, pr, mask, sub));
        }
    }
    let (total, pr, mask, sub) = best.ok_or_else(|| {
        Error::Infeasible("every scenario subset is infeasible, including the empty one".into())
    })?;

    let z = sub.decision_vector();
    let mut slacks = sub.slacks.clone();
    for (i, c) in spec.constraints.iter().enumerate() {
        if c.slack_allowed() {
            continue;
        }
        for j in 0..k {
            if let Some(g) = spec.constraint_value(i, j, &z)? {
                slacks.set(i, j, g);
            }
        }
    }
    let heaviside_charge = gamma * (1.0 - pr);
    let report = SolveReport {
        slacks,
        penalty: sub.penalty + heaviside_charge,
        value: total,
        ..sub
    };
    Ok(MixedSolution {
        report,
        achieved_delta: 1.0 - pr,
        satisfied: (0..k).filter(|j| mask & (1 << j) != 0).collect(),
    })
}

/// Finite chance-constrained solve: every constraint row is enforced on a
/// subset of scenarios of probability at least `1 - delta`, and the best
/// subset wins.
pub fn solve_chance_finite(spec: &ProblemSpec, delta: f64) -> Result<ChanceSolution> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid("violation budget must lie in [0, 1)"));
    }
    let k = spec.num_scenarios();
    if k > ENUM_SCENARIO_CAP {
        return Err(Error::TooLarge(format!(
            "enumeration over {k} scenarios exceeds the cap of {ENUM_SCENARIO_CAP}"
        )));
    }
    let n = spec.num_vars();
    let mut best: Option<(f64, f64, u32, SolveReport)> = None;
    for mask in 0u32..(1u32 << k) {
        let pr: f64 = (0..k)
            .filter(|j| mask & (1 << j) != 0)
            .map(|j| spec.scenarios.weight(j))
            .sum();
        if pr < 1.0 - delta - 1e-12 {
            continue;
        }
        let mut ineqs = Vec::new();
        let mut tags = Vec::new();
        for j in 0..k {
            if mask & (1 << j) == 0 {
                continue;
            }
            let xi = spec.scenarios.point(j);
            for (i, c) in spec.constraints.iter().enumerate() {
                if !c.active_at(j) {
                    continue;
                }
                ineqs.push(lower_row(c, j, &xi, n, None)?);
                tags.push((i, j));
            }
        }
        let prog = ConvexProgram {
            hess: spec.objective.hessian(),
            lin: spec.objective.linear.clone(),
            offset: spec.objective.offset,
            ineqs,
        };
        let r = solver::solve(&prog, &IpmOptions::default())?;
        if r.status != IpmStatus::Converged {
            continue;
        }
        let replace = match &best {
            None => true,
            Some((bv, bp, _, _)) => {
                r.value < bv - TIE_TOL || (r.value <= bv + TIE_TOL && pr > *bp)
            }
        };
        if replace {
            let mut duals = DualMap::zeros(spec.num_constraints(), k);
            for (&(i, j), &mu) in tags.iter().zip(r.lambda.iter()) {
                duals.set(i, j, mu / spec.scenarios.volume(j));
            }
            let z = r.x.clone();
            let report = SolveReport {
                status: SolveStatus::Converged,
                decision: z.as_slice().to_vec(),
                duals,
                slacks: SlackMap::zeros(spec.num_constraints(), k),
                objective: r.value,
                penalty: 0.0,
                value: r.value,
                residual: KktResidual {
                    stationarity: 0.0,
                    complementarity: 0.0,
                    feasibility: 0.0,
                },
                iterations: r.iterations,
            };
            best = Some((r.value, pr, mask, report));
        }
    }
    let (_, pr, mask, mut report) = best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no scenario subset of probability at least {:.6} is feasible",
            1.0 - delta
        ))
    })?;
    let z = report.decision_vector();
    let mut complementarity = 0.0_f64;
    let mut feasibility = 0.0_f64;
    for j in (0..k).filter(|j| mask & (1 << j) != 0) {
        for i in 0..spec.num_constraints() {
            if let Some(g) = spec.constraint_value(i, j, &z)? {
                let lam = report.duals.get(i, j);
                complementarity = complementarity.max((lam * g).abs());
                feasibility = feasibility.max(g).max(-lam);
            }
        }
    }
    report.residual = KktResidual {
        stationarity: duality::lagrangian_gradient(spec, &z, &report.duals)?.amax(),
        complementarity,
        feasibility,
    };
    Ok(ChanceSolution {
        report,
        achieved_probability: pr,
        kept: (0..k).filter(|j| mask & (1 << j) != 0).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Objective;
    use crate::scenario::ScenarioSet;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn unit_spec() -> ProblemSpec {
        let objective = Objective::quadratic(dmatrix![1.0]).unwrap();
        let c = Constraint::affine(DVector::from_vec(vec![-1.0]), -1.0);
        ProblemSpec::new(objective, vec![c], ScenarioSet::singleton(DVector::zeros(1)))
    }

    #[test]
    fn quadratic_cost_roundtrip() {
        let cost = ViolationCost::quadratic(dmatrix![2.0]).unwrap();
        let s = DVector::from_vec(vec![1.5]);
        assert_abs_diff_eq!(cost.value(&s).unwrap(), 4.5, epsilon = 1e-12);
        let g = cost.gradient(&s).unwrap();
        assert_abs_diff_eq!(g[0], 6.0, epsilon = 1e-12);
        let back = cost.grad_h_inverse(&g).unwrap();
        assert_abs_diff_eq!(back[0], 1.5, epsilon = 1e-12);
    }

    #[test]
    fn quadratic_cost_rejects_indefinite() {
        assert!(ViolationCost::quadratic(dmatrix![1.0, 0.0; 0.0, -1.0]).is_err());
        assert!(ViolationCost::quadratic(dmatrix![1.0, 0.5; 0.0, 1.0]).is_err());
    }

    #[test]
    fn conjugate_matches_closed_form_diagonal() {
        let cost = ViolationCost::identity_quadratic(2);
        let y = DVector::from_vec(vec![1.0, -3.0]);
        // positive part only: -1/4
        assert_abs_diff_eq!(cost.conjugate_inner(&y).unwrap(), -0.25, epsilon = 1e-12);
    }

    #[test]
    fn conjugate_matches_interior_solution_off_diagonal() {
        let cost = ViolationCost::quadratic(dmatrix![2.0, 0.5; 0.5, 1.0]).unwrap();
        let y = DVector::from_vec(vec![1.0, 1.0]);
        // unconstrained stationary point s = (2 Gamma)^{-1} y is positive,
        // so the value is -y's*/2 = -2/7
        let got = cost.conjugate_inner(&y).unwrap();
        assert_abs_diff_eq!(got, -2.0 / 7.0, epsilon = 1e-7);
    }

    #[test]
    fn linear_conjugate_detects_unboundedness() {
        let cost = ViolationCost::linear(1.0).unwrap();
        let ok = DVector::from_vec(vec![0.5, 1.0]);
        assert_abs_diff_eq!(cost.conjugate_inner(&ok).unwrap(), 0.0);
        let bad = DVector::from_vec(vec![0.5, 1.5]);
        assert_eq!(cost.conjugate_inner(&bad).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn projection_gates_descent_at_zero() {
        let x = DVector::from_vec(vec![0.0, 0.0, 2.0, 2.0]);
        let v = DVector::from_vec(vec![-1.0, 1.0, -1.0, 1.0]);
        let p = positive_projection(&x, &v);
        assert_eq!(p.as_slice(), &[0.0, 1.0, -1.0, 1.0]);
    }

    #[test]
    fn joint_solver_finds_the_closed_form_saddle() {
        let spec = unit_spec();
        let cost = ViolationCost::identity_quadratic(1);
        let r = solve_resilient_joint(&spec, &cost).unwrap();
        assert!(r.status.is_converged());
        assert_abs_diff_eq!(r.decision[0], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(r.slacks.get(0, 0), 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(r.duals.get(0, 0), 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.value, 0.5, epsilon = 1e-8);
        assert!(r.residual.max() < 1e-6);
    }

    #[test]
    fn joint_solver_respects_the_density_convention() {
        // same constraint at two scenarios, w = (3/4, 1/4), f = (3, 1);
        // the saddle has lambda_j = f_j and s_j = 1/2
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
        let r = solve_resilient_joint(&spec, &cost).unwrap();
        assert_abs_diff_eq!(r.decision[0], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(r.duals.get(0, 0), 3.0, epsilon = 1e-5);
        assert_abs_diff_eq!(r.duals.get(0, 1), 1.0, epsilon = 1e-5);
        assert_abs_diff_eq!(r.value, 0.5, epsilon = 1e-8);
    }

    #[test]
    fn hard_rows_stay_hard_in_the_joint_solve() {
        // soft row 1 - z <= s, hard row z <= 0.3
        let objective = Objective::quadratic(dmatrix![1.0]).unwrap();
        let soft = Constraint::affine(DVector::from_vec(vec![-1.0]), -1.0);
        let hard = Constraint::affine(DVector::from_vec(vec![1.0]), 0.3).with_slack(false);
        let spec = ProblemSpec::new(
            objective,
            vec![soft, hard],
            ScenarioSet::singleton(DVector::zeros(1)),
        );
        let cost = ViolationCost::identity_quadratic(1);
        let r = solve_resilient_joint(&spec, &cost).unwrap();
        assert!(r.decision[0] <= 0.3 + 1e-8);
        // with z pinned at 0.3 the slack settles at (1 - z) * 1/2... the
        // optimum balances s^2 + z^2 under 1 - z <= s, z <= 0.3: s = 0.7
        assert_abs_diff_eq!(r.decision[0], 0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(r.slacks.get(0, 0), 0.7, epsilon = 1e-6);
    }

    #[test]
    fn pre_fixed_slack_reproduces_the_sensitivity() {
        let spec = unit_spec();
        let slacks = SlackMap::from_rows(vec![vec![0.5]]).unwrap();
        let r = solve_pre_fixed_slack(&spec, &slacks).unwrap();
        // min z^2 s.t. 1 - z <= 0.5: z = 0.5, value 0.25, density dual 1
        assert_abs_diff_eq!(r.value, 0.25, epsilon = 1e-9);
        assert_abs_diff_eq!(r.duals.get(0, 0), 1.0, epsilon = 1e-6);
        let est = duality::sensitivity_check(&spec, &slacks, 1e-5).unwrap();
        assert_abs_diff_eq!(est.get(0, 0), 1.0, epsilon = 1e-4);
    }

    #[test]
    fn saddle_iteration_agrees_with_the_joint_solver() {
        let spec = unit_spec();
        let cost = ViolationCost::identity_quadratic(1);
        let opts = AhOptions {
            tol: 1e-9,
            ..AhOptions::default()
        };
        let r = run_arrow_hurwicz(&spec, &cost, &opts).unwrap();
        assert!(r.status.is_converged(), "residual {:?}", r.residual);
        assert_abs_diff_eq!(r.decision[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(r.duals.get(0, 0), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn lattice_search_brackets_the_optimum() {
        let spec = unit_spec();
        let cost = ViolationCost::identity_quadratic(1);
        let (z, v) = brute_force_oracle(
            &spec,
            &cost,
            &DVector::from_vec(vec![-1.0]),
            &DVector::from_vec(vec![2.0]),
            601,
        )
        .unwrap();
        assert_abs_diff_eq!(z[0], 0.5, epsilon = 5e-3);
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-4);
    }

    fn two_scenario_hard_spec() -> ProblemSpec {
        // J = z^2; hard rows z >= xi_j with xi = (1, 2), w = (0.6, 0.4)
        let scen = ScenarioSet::from_masses(
            vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.0])],
            vec![0.6, 0.4],
        )
        .unwrap();
        let c = Constraint::affine_disturbed(
            DVector::from_vec(vec![-1.0]),
            0.0,
            DVector::from_vec(vec![-1.0]),
        )
        .with_slack(false);
        ProblemSpec::new(Objective::quadratic(dmatrix![1.0]).unwrap(), vec![c], scen)
    }

    #[test]
    fn enumeration_picks_the_cheapest_subset() {
        let spec = two_scenario_hard_spec();
        // gamma = 2: empty -> 2; {xi=1} -> 1 + 0.8; {xi=2} -> 4 + 1.2;
        // both -> 4. Best keeps only the first scenario.
        let hard = ViolationCost::heaviside(2.0).unwrap();
        let m = solve_mixed_enumeration(&spec, &hard, None).unwrap();
        assert_eq!(m.satisfied, vec![0]);
        assert_abs_diff_eq!(m.achieved_delta, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(m.report.value, 1.8, epsilon = 1e-6);
        assert_abs_diff_eq!(m.report.decision[0], 1.0, epsilon = 1e-6);
        // dropped scenario's diagnostic slack is the signed violation
        assert_abs_diff_eq!(m.report.slacks.get(0, 1), 1.0, epsilon = 1e-6);
        assert!(m.report.slacks.get(0, 0) <= 1e-6);
    }

    #[test]
    fn enumeration_matches_the_chance_program() {
        let spec = two_scenario_hard_spec();
        let hard = ViolationCost::heaviside(2.0).unwrap();
        let m = solve_mixed_enumeration(&spec, &hard, None).unwrap();
        let c = solve_chance_finite(&spec, m.achieved_delta).unwrap();
        assert_abs_diff_eq!(c.report.objective, m.report.objective, epsilon = 1e-6);
        assert_abs_diff_eq!(c.achieved_probability, 0.6, epsilon = 1e-12);
        assert_eq!(c.kept, vec![0]);
    }

    #[test]
    fn chance_with_zero_budget_keeps_everything() {
        let spec = two_scenario_hard_spec();
        let c = solve_chance_finite(&spec, 0.0).unwrap();
        assert_eq!(c.kept, vec![0, 1]);
        assert_abs_diff_eq!(c.report.objective, 4.0, epsilon = 1e-6);
    }
}
