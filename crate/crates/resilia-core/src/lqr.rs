//! Finite-horizon linear-quadratic trajectory problems lowered to the
//! scenario form solved by the rest of the crate.
//!
//! A trajectory problem `x_{k+1} = A x_k + B u_k + W w` with box
//! constraints, waypoints, and a terminal set is condensed into an
//! inequality-only program over the stacked input sequence: every state is
//! an affine function of the inputs, so state constraints become dense
//! affine rows and no equality constraints survive the lowering.
//!
//! Scenario branching models an uncertain plant change at a known step
//! (for instance a payload picked up mid-flight): inputs and pre-branch
//! states are shared across scenarios, while states from the branch step on
//! evolve under each variant's dynamics. Constraint rows on states are
//! tabulated per scenario; rows on inputs apply identically at every
//! scenario. The objective is the expected quadratic cost over scenarios.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::duality::{SlackMap, SolveReport};
use crate::error::{Error, Result};
use crate::problem::{AffineRow, Constraint, Objective, ProblemSpec};
use crate::resilient::{self, ViolationCost};
use crate::scenario::ScenarioSet;

/// Axis-aligned box; infinite entries disable the corresponding side.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                context: "box bounds",
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for i in 0..lower.len() {
            if lower[i] > upper[i] {
                return Err(Error::invalid(format!(
                    "box is empty at coordinate {i}: [{}, {}]",
                    lower[i], upper[i]
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// Box bounding `|x_i| <= r` on the given coordinates only.
    pub fn symmetric_on(dim: usize, coords: &[usize], r: f64) -> Self {
        let mut lower = DVector::from_element(dim, f64::NEG_INFINITY);
        let mut upper = DVector::from_element(dim, f64::INFINITY);
        for &c in coords {
            lower[c] = -r;
            upper[c] = r;
        }
        Self { lower, upper }
    }

    fn dim(&self) -> usize {
        self.lower.len()
    }
}

/// A box constraint pinned to one trajectory step.
#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub step: usize,
    pub set: BoxSet,
}

/// Which constraint groups the resilient solver may relax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SlackFlags {
    pub input: bool,
    pub state: bool,
    pub waypoint: bool,
    pub terminal: bool,
}

/// Finite-horizon problem data. `terminal_cost` defaults to the solution of
/// the discrete algebraic Riccati equation for `(A, B, Q, R)`.
#[derive(Debug, Clone)]
pub struct LqrProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub terminal_cost: Option<DMatrix<f64>>,
    pub x0: DVector<f64>,
    pub horizon: usize,
    /// Constant planned disturbance entering through `W` at every step.
    pub disturbance: DVector<f64>,
    pub state_bounds: Option<BoxSet>,
    pub input_bounds: Option<BoxSet>,
    pub waypoints: Vec<Waypoint>,
    pub terminal_set: Option<BoxSet>,
    pub slack: SlackFlags,
}

impl LqrProblem {
    /// Unconstrained template; add bounds and flags field by field.
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        x0: DVector<f64>,
        horizon: usize,
    ) -> Self {
        let nx = a.nrows();
        Self {
            w: DMatrix::zeros(nx, 1),
            disturbance: DVector::zeros(1),
            a,
            b,
            q,
            r,
            terminal_cost: None,
            x0,
            horizon,
            state_bounds: None,
            input_bounds: None,
            waypoints: Vec::new(),
            terminal_set: None,
            slack: SlackFlags::default(),
        }
    }

    pub fn num_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn num_inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let nx = self.num_states();
        let nu = self.num_inputs();
        if !self.a.is_square() {
            return Err(Error::invalid("dynamics matrix must be square"));
        }
        for (name, rows, expect) in [
            ("input matrix", self.b.nrows(), nx),
            ("disturbance matrix", self.w.nrows(), nx),
            ("initial state", self.x0.len(), nx),
        ] {
            if rows != expect {
                return Err(Error::invalid(format!(
                    "{name} has {rows} rows, expected {expect}"
                )));
            }
        }
        if self.w.ncols() != self.disturbance.len() {
            return Err(Error::DimensionMismatch {
                context: "planned disturbance",
                expected: self.w.ncols(),
                got: self.disturbance.len(),
            });
        }
        if self.q.nrows() != nx || self.q.ncols() != nx {
            return Err(Error::invalid("state cost must be square of state dimension"));
        }
        if self.r.nrows() != nu || self.r.ncols() != nu {
            return Err(Error::invalid("input cost must be square of input dimension"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least one step"));
        }
        if let Some(p) = &self.terminal_cost {
            if p.nrows() != nx || p.ncols() != nx {
                return Err(Error::invalid("terminal cost must be square of state dimension"));
            }
        }
        for (name, set, expect) in [
            ("state bounds", &self.state_bounds, nx),
            ("input bounds", &self.input_bounds, nu),
            ("terminal set", &self.terminal_set, nx),
        ] {
            if let Some(s) = set {
                if s.dim() != expect {
                    return Err(Error::invalid(format!(
                        "{name} dimension {} does not match {expect}",
                        s.dim()
                    )));
                }
            }
        }
        for wp in &self.waypoints {
            if wp.step == 0 || wp.step > self.horizon {
                return Err(Error::invalid(format!(
                    "waypoint step {} outside 1..={}",
                    wp.step, self.horizon
                )));
            }
            if wp.set.dim() != nx {
                return Err(Error::invalid("waypoint box must match the state dimension"));
            }
        }
        Ok(())
    }

    fn terminal_cost_matrix(&self) -> Result<DMatrix<f64>> {
        match &self.terminal_cost {
            Some(p) => Ok(p.clone()),
            None => solve_dare(&self.a, &self.b, &self.q, &self.r),
        }
    }
}

/// One plant variant after the branch step.
#[derive(Debug, Clone)]
pub struct BranchVariant {
    /// Scalar tag identifying the variant; becomes the scenario point.
    pub label: f64,
    pub weight: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w: DMatrix<f64>,
    /// Linear state map applied once to `x_l`, modeling an impulsive
    /// interaction with the realized variant (identity if absent).
    pub jump: Option<DMatrix<f64>>,
}

/// Plant uncertainty realized at a known step `l`: the transition into
/// `x_l` still follows the nominal dynamics, then `jump` rewrites `x_l`,
/// and transitions into `x_{l+1}, ..., x_N` follow the variant dynamics.
/// Inputs `u_0 .. u_{l-1}` are decided before the realization and shared
/// across scenarios; inputs from `u_l` on branch with the states.
#[derive(Debug, Clone)]
pub struct ScenarioBranching {
    /// First branched state index `l` in `1..=N`.
    pub branch_step: usize,
    pub variants: Vec<BranchVariant>,
}

impl ScenarioBranching {
    pub fn validate(&self, lqr: &LqrProblem) -> Result<()> {
        if self.variants.is_empty() {
            return Err(Error::invalid("branching needs at least one variant"));
        }
        if self.branch_step == 0 || self.branch_step > lqr.horizon {
            return Err(Error::invalid(format!(
                "branch step {} outside 1..={}",
                self.branch_step, lqr.horizon
            )));
        }
        let total: f64 = self.variants.iter().map(|v| v.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "variant weights sum to {total}, expected 1"
            )));
        }
        let nx = lqr.num_states();
        let nu = lqr.num_inputs();
        for v in &self.variants {
            if !(v.weight > 0.0) {
                return Err(Error::invalid("variant weights must be positive"));
            }
            if v.a.nrows() != nx || v.a.ncols() != nx || v.b.nrows() != nx || v.b.ncols() != nu {
                return Err(Error::invalid("variant dynamics must match the nominal shapes"));
            }
            if v.w.nrows() != nx || v.w.ncols() != lqr.w.ncols() {
                return Err(Error::invalid("variant disturbance map must match the nominal shape"));
            }
            if let Some(jump) = &v.jump {
                if jump.nrows() != nx || jump.ncols() != nx {
                    return Err(Error::invalid("variant jump must be square in the state dimension"));
                }
            }
        }
        Ok(())
    }
}

/// Constraint group a lowered row belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RowKind {
    Input,
    State,
    Waypoint,
    Terminal,
}

impl RowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::Input => "input",
            RowKind::State => "state",
            RowKind::Waypoint => "waypoint",
            RowKind::Terminal => "terminal",
        }
    }
}

/// Provenance of one lowered constraint row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RowLabel {
    pub kind: RowKind,
    /// Trajectory step: input rows use the input index `k`, state-like rows
    /// the state index.
    pub step: usize,
    pub coord: usize,
    /// True for the upper-bound side of a box row.
    pub upper: bool,
}

impl std::fmt::Display for RowLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}[k={},c={},{}]",
            self.kind.as_str(),
            self.step,
            self.coord,
            if self.upper { "hi" } else { "lo" }
        )
    }
}

/// Affine state maps of the condensed lowering: for scenario `j`,
/// `stack(x_1..x_N) = S_j u + c_j` over the stacked inputs.
#[derive(Debug, Clone)]
pub struct TrajectoryLayout {
    pub nx: usize,
    pub nu: usize,
    pub horizon: usize,
    pub num_scenarios: usize,
    /// Input steps `0..shared_steps` are decided before the branch and
    /// shared by every scenario; later steps carry one copy per scenario.
    pub shared_steps: usize,
    state_maps: Vec<(DMatrix<f64>, DVector<f64>)>,
    x0: DVector<f64>,
}

impl TrajectoryLayout {
    /// Length of the stacked decision vector.
    pub fn num_decision_vars(&self) -> usize {
        let branched = self.horizon - self.shared_steps;
        (self.shared_steps + self.num_scenarios * branched) * self.nu
    }

    /// Index of input coordinate `i` at step `k` of scenario `j` in the
    /// decision vector.
    pub fn u_index(&self, j: usize, k: usize, i: usize) -> usize {
        if k < self.shared_steps {
            k * self.nu + i
        } else {
            let branched = self.horizon - self.shared_steps;
            (self.shared_steps + j * branched + (k - self.shared_steps)) * self.nu + i
        }
    }

    /// Input vector at step `k` of scenario `j` out of a decision vector.
    pub fn input(&self, j: usize, k: usize, u: &DVector<f64>) -> DVector<f64> {
        u.rows(self.u_index(j, k, 0), self.nu).into_owned()
    }

    /// State `x_k` of scenario `j` under the stacked inputs `u`; `k = 0`
    /// returns the initial state.
    pub fn state(&self, j: usize, k: usize, u: &DVector<f64>) -> DVector<f64> {
        if k == 0 {
            return self.x0.clone();
        }
        let (s, c) = &self.state_maps[j];
        let row0 = (k - 1) * self.nx;
        s.rows(row0, self.nx) * u + c.rows(row0, self.nx)
    }

    /// Full trajectory `x_0..x_N` of scenario `j`.
    pub fn trajectory(&self, j: usize, u: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..=self.horizon).map(|k| self.state(j, k, u)).collect()
    }
}

/// Result of the condensed lowering.
pub struct LoweredTrajectory {
    pub spec: ProblemSpec,
    pub layout: TrajectoryLayout,
    /// One label per constraint of `spec`, in order.
    pub labels: Vec<RowLabel>,
}

/// Condenses the trajectory problem into a [`ProblemSpec`] over the stacked
/// inputs. Scenario points are the variant labels (a single nominal
/// scenario when `branching` is absent); scenario weights are probability
/// masses, so multipliers read as per-scenario masses downstream.
pub fn lower_to_problem_spec(
    lqr: &LqrProblem,
    branching: Option<&ScenarioBranching>,
) -> Result<LoweredTrajectory> {
    lqr.validate()?;
    if let Some(br) = branching {
        br.validate(lqr)?;
    }
    let nx = lqr.num_states();
    let nu = lqr.num_inputs();
    let n = lqr.horizon;

    let (points, weights, branch_step) = match branching {
        None => (vec![DVector::from_vec(vec![0.0])], vec![1.0], n + 1),
        Some(br) => (
            br.variants.iter().map(|v| DVector::from_vec(vec![v.label])).collect(),
            br.variants.iter().map(|v| v.weight).collect(),
            br.branch_step,
        ),
    };
    let k_scen = weights.len();
    let scenarios = ScenarioSet::from_masses(points, weights.clone())?;

    // inputs before the branch are shared; from the branch step on each
    // scenario drives its own copy
    let shared_steps = branch_step.min(n);
    let branched_steps = n - shared_steps;
    let num_u = (shared_steps + k_scen * branched_steps) * nu;
    let u_col = |j: usize, k: usize| {
        if k < shared_steps {
            k * nu
        } else {
            (shared_steps + j * branched_steps + (k - shared_steps)) * nu
        }
    };

    // per-scenario forward maps: x_{k+1} = A_k x_k + B_k u_k + W_k w,
    // with the variant's jump rewriting the state entered at the branch step
    let mut state_maps = Vec::with_capacity(k_scen);
    for j in 0..k_scen {
        let mut s = DMatrix::zeros(n * nx, num_u);
        let mut c = DVector::zeros(n * nx);
        let mut prev_s = DMatrix::zeros(nx, num_u);
        let mut prev_c = lqr.x0.clone();
        for k in 0..n {
            let into = k + 1;
            let (a, b, w) = if into > branch_step {
                let v = &branching.unwrap().variants[j];
                (&v.a, &v.b, &v.w)
            } else {
                (&lqr.a, &lqr.b, &lqr.w)
            };
            let mut next_s = a * &prev_s;
            {
                let mut blk = next_s.view_mut((0, u_col(j, k)), (nx, nu));
                blk += b;
            }
            let mut next_c = a * &prev_c + w * &lqr.disturbance;
            if into == branch_step {
                if let Some(jump) = branching.unwrap().variants[j].jump.as_ref() {
                    next_s = jump * next_s;
                    next_c = jump * next_c;
                }
            }
            s.rows_mut(k * nx, nx).copy_from(&next_s);
            c.rows_mut(k * nx, nx).copy_from(&next_c);
            prev_s = next_s;
            prev_c = next_c;
        }
        state_maps.push((s, c));
    }

    // expected quadratic cost over the stacked inputs
    let p = lqr.terminal_cost_matrix()?;
    let mut qbar = DMatrix::zeros(n * nx, n * nx);
    for k in 1..n {
        qbar.view_mut(((k - 1) * nx, (k - 1) * nx), (nx, nx))
            .copy_from(&lqr.q);
    }
    qbar.view_mut(((n - 1) * nx, (n - 1) * nx), (nx, nx))
        .copy_from(&p);
    let mut h = DMatrix::zeros(num_u, num_u);
    for k in 0..shared_steps {
        h.view_mut((k * nu, k * nu), (nu, nu)).copy_from(&lqr.r);
    }
    for j in 0..k_scen {
        for k in shared_steps..n {
            let col = u_col(j, k);
            let wr = weights[j] * &lqr.r;
            h.view_mut((col, col), (nu, nu)).copy_from(&wr);
        }
    }
    let mut lin = DVector::zeros(num_u);
    let mut offset = (&lqr.q * &lqr.x0).dot(&lqr.x0);
    for (j, (s, c)) in state_maps.iter().enumerate() {
        let w = weights[j];
        let qs = &qbar * s;
        h += w * s.transpose() * &qs;
        lin += 2.0 * w * qs.transpose() * c;
        offset += w * (&qbar * c).dot(c);
    }
    let objective = Objective::new(h, lin, offset)?;

    // constraint rows
    let mut constraints = Vec::new();
    let mut labels = Vec::new();

    if let Some(ib) = &lqr.input_bounds {
        for k in 0..n {
            for i in 0..nu {
                for (upper, sign) in [(true, 1.0_f64), (false, -1.0_f64)] {
                    let raw = if upper { ib.upper[i] } else { ib.lower[i] };
                    if !raw.is_finite() {
                        continue;
                    }
                    let rhs = sign * raw;
                    let con = if k < shared_steps {
                        let mut a = DVector::zeros(num_u);
                        a[k * nu + i] = sign;
                        Constraint::affine(a, rhs)
                    } else {
                        let rows = (0..k_scen)
                            .map(|j| {
                                let mut a = DVector::zeros(num_u);
                                a[u_col(j, k) + i] = sign;
                                Some(AffineRow { a, b: rhs })
                            })
                            .collect();
                        Constraint::per_scenario(rows, 0.0)
                    };
                    constraints.push(con.with_slack(lqr.slack.input));
                    labels.push(RowLabel { kind: RowKind::Input, step: k, coord: i, upper });
                }
            }
        }
    }

    let push_state_rows = |set: &BoxSet,
                               k: usize,
                               kind: RowKind,
                               slack: bool,
                               constraints: &mut Vec<Constraint>,
                               labels: &mut Vec<RowLabel>| {
        // pre-branch states are shared, so a hard row is identical at every
        // scenario and one copy is enough; slacked rows keep per-scenario
        // entries because each carries its own violation account
        let dedupe = !slack && k < branch_step;
        for i in 0..nx {
            for (upper, bound) in [(true, set.upper[i]), (false, set.lower[i])] {
                if !bound.is_finite() {
                    continue;
                }
                let rows: Vec<Option<AffineRow>> = (0..k_scen)
                    .map(|j| {
                        if dedupe && j > 0 {
                            return None;
                        }
                        let (s, c) = &state_maps[j];
                        let row = s.row((k - 1) * nx + i).transpose();
                        let cv = c[(k - 1) * nx + i];
                        let (a, b) = if upper {
                            (row.clone_owned(), bound - cv)
                        } else {
                            (-row.clone_owned(), cv - bound)
                        };
                        Some(AffineRow { a, b })
                    })
                    .collect();
                constraints.push(Constraint::per_scenario(rows, 0.0).with_slack(slack));
                labels.push(RowLabel { kind, step: k, coord: i, upper });
            }
        }
    };

    if let Some(sb) = &lqr.state_bounds {
        let last_plain = if lqr.terminal_set.is_some() { n - 1 } else { n };
        for k in 1..=last_plain {
            push_state_rows(sb, k, RowKind::State, lqr.slack.state, &mut constraints, &mut labels);
        }
    }
    for wp in &lqr.waypoints {
        push_state_rows(
            &wp.set,
            wp.step,
            RowKind::Waypoint,
            lqr.slack.waypoint,
            &mut constraints,
            &mut labels,
        );
    }
    if let Some(ts) = &lqr.terminal_set {
        push_state_rows(ts, n, RowKind::Terminal, lqr.slack.terminal, &mut constraints, &mut labels);
    }

    let spec = ProblemSpec::new(objective, constraints, scenarios);
    Ok(LoweredTrajectory {
        spec,
        layout: TrajectoryLayout {
            nx,
            nu,
            horizon: n,
            num_scenarios: k_scen,
            shared_steps,
            state_maps,
            x0: lqr.x0.clone(),
        },
        labels,
    })
}

/// Solves the discrete algebraic Riccati equation
/// `P = Q + A'PA - A'PB (R + B'PB)^{-1} B'PA` by fixed-point iteration,
/// verifying the residual to `1e-9`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let nx = a.nrows();
    if !a.is_square() || b.nrows() != nx || q.nrows() != nx || !q.is_square() {
        return Err(Error::invalid("Riccati data shapes are inconsistent"));
    }
    if r.nrows() != b.ncols() || !r.is_square() {
        return Err(Error::invalid("input cost must be square of input dimension"));
    }
    let riccati_map = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let btp = b.transpose() * p;
        let gram = r + &btp * b;
        let chol = nalgebra::Cholesky::new(gram)
            .ok_or_else(|| Error::Numerical("Riccati input Gram matrix not positive definite".into()))?;
        let gain = chol.solve(&(&btp * a));
        let next = q + a.transpose() * p * a - (a.transpose() * btp.transpose()) * &gain;
        // symmetrize against roundoff drift
        Ok((&next + next.transpose()) * 0.5)
    };
    let mut p = q.clone();
    for _ in 0..20_000 {
        let next = riccati_map(&p)?;
        let diff = (&next - &p).amax();
        let scale = 1.0 + next.amax();
        p = next;
        if diff <= 1e-12 * scale {
            break;
        }
    }
    let residual = (&riccati_map(&p)? - &p).amax();
    if residual > 1e-9 * (1.0 + p.amax()) {
        return Err(Error::Numerical(format!(
            "Riccati iteration stalled at residual {residual:.3e}"
        )));
    }
    Ok(p)
}

/// How a receding-horizon step solves its trajectory program.
pub enum TrajectorySolve {
    /// Enforce every constraint with no slack.
    Robust,
    /// Slack-coupled resilient solve with the given violation cost applied
    /// to the slack-enabled rows.
    Resilient(ViolationCost),
}

/// Output of one receding-horizon step.
pub struct MpcStep {
    pub u0: DVector<f64>,
    pub report: SolveReport,
    pub layout: TrajectoryLayout,
    pub labels: Vec<RowLabel>,
}

/// Solves the trajectory program from the problem's current initial state
/// and returns the first input with the full report.
pub fn mpc_step(
    lqr: &LqrProblem,
    branching: Option<&ScenarioBranching>,
    solve: &TrajectorySolve,
) -> Result<MpcStep> {
    let lowered = lower_to_problem_spec(lqr, branching)?;
    let report = match solve {
        TrajectorySolve::Robust => {
            let zeros = SlackMap::zeros(lowered.spec.num_constraints(), lowered.spec.num_scenarios());
            resilient::solve_pre_fixed_slack(&lowered.spec, &zeros)?
        }
        TrajectorySolve::Resilient(cost) => resilient::solve_resilient_joint(&lowered.spec, cost)?,
    };
    let u0 = if report.status == crate::duality::SolveStatus::Infeasible {
        DVector::zeros(lqr.num_inputs())
    } else {
        lowered.layout.input(0, 0, &report.decision_vector())
    };
    Ok(MpcStep {
        u0,
        report,
        layout: lowered.layout,
        labels: lowered.labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;
    use rand::{Rng, SeedableRng};

    #[test]
    fn dare_scalar_fixture_is_the_golden_ratio() {
        let one = dmatrix![1.0];
        let p = solve_dare(&one, &one, &one, &one).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], (1.0 + 5.0_f64.sqrt()) / 2.0, epsilon = 1e-9);
    }

    #[test]
    fn dare_residual_holds_for_a_two_state_plant() {
        let a = dmatrix![1.0, 0.1; 0.0, 1.0];
        let b = DMatrix::from_column_slice(2, 1, &[0.005, 0.1]);
        let q = DMatrix::identity(2, 2);
        let r = dmatrix![0.5];
        let p = solve_dare(&a, &b, &q, &r).unwrap();
        let btp = b.transpose() * &p;
        let gram = &r + &btp * &b;
        let gain = gram.clone().cholesky().unwrap().solve(&(&btp * &a));
        let res = (&q + a.transpose() * &p * &a
            - (a.transpose() * btp.transpose()) * gain
            - &p)
            .amax();
        assert!(res <= 1e-9 * (1.0 + p.amax()), "residual {res}");
    }

    fn single_integrator(n: usize) -> LqrProblem {
        LqrProblem::new(
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            dmatrix![1.0],
            DVector::zeros(1),
            n,
        )
    }

    #[test]
    fn condensed_maps_match_forward_simulation() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let nx = 3;
        let nu = 2;
        let n = 6;
        let a = DMatrix::from_fn(nx, nx, |_, _| rng.gen_range(-0.5..0.5));
        let b = DMatrix::from_fn(nx, nu, |_, _| rng.gen_range(-1.0..1.0));
        let mut lqr = LqrProblem::new(
            a.clone(),
            b.clone(),
            DMatrix::identity(nx, nx),
            DMatrix::identity(nu, nu),
            DVector::from_fn(nx, |_, _| rng.gen_range(-1.0..1.0)),
            n,
        );
        lqr.terminal_cost = Some(DMatrix::identity(nx, nx));
        lqr.w = DMatrix::from_fn(nx, 1, |_, _| rng.gen_range(-1.0..1.0));
        lqr.disturbance = DVector::from_vec(vec![0.3]);

        let a2 = DMatrix::from_fn(nx, nx, |_, _| rng.gen_range(-0.5..0.5));
        let jump2 = DMatrix::from_fn(nx, nx, |_, _| rng.gen_range(-1.0..1.0));
        let branching = ScenarioBranching {
            branch_step: 4,
            variants: vec![
                BranchVariant {
                    label: 0.0,
                    weight: 0.7,
                    a: a.clone(),
                    b: b.clone(),
                    w: lqr.w.clone(),
                    jump: None,
                },
                BranchVariant {
                    label: 1.0,
                    weight: 0.3,
                    a: a2.clone(),
                    b: b.clone(),
                    w: lqr.w.clone(),
                    jump: Some(jump2.clone()),
                },
            ],
        };
        let lowered = lower_to_problem_spec(&lqr, Some(&branching)).unwrap();
        assert_eq!(lowered.layout.shared_steps, 4);
        let u = DVector::from_fn(lowered.layout.num_decision_vars(), |_, _| {
            rng.gen_range(-1.0..1.0)
        });

        let eye = DMatrix::identity(nx, nx);
        for (j, var_a, jump) in [(0usize, &a, &eye), (1usize, &a2, &jump2)] {
            let mut x = lqr.x0.clone();
            for k in 0..n {
                let ak = if k + 1 > 4 { var_a } else { &a };
                x = ak * &x + &b * lowered.layout.input(j, k, &u) + &lqr.w * &lqr.disturbance;
                if k + 1 == 4 {
                    x = jump * x;
                }
                let got = lowered.layout.state(j, k + 1, &u);
                assert_abs_diff_eq!((&got - &x).amax(), 0.0, epsilon = 1e-12);
            }
        }
        // the transition into the branch step is still nominal and driven by
        // shared inputs, so scenarios agree strictly before it
        for k in 1..4 {
            let d = (lowered.layout.state(0, k, &u) - lowered.layout.state(1, k, &u)).amax();
            assert_abs_diff_eq!(d, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn pinned_waypoint_reaches_the_hand_solution() {
        // x_{k+1} = x_k + u_k, x0 = 0, N = 2, P = Q = R = 1, x_2 pinned at 1:
        // min x1^2 + x2^2 + u0^2 + u1^2 = 2 u0^2 + (1 - u0)^2 + 1
        // gives u = (1/3, 2/3) and value 5/3.
        let mut lqr = single_integrator(2);
        lqr.terminal_cost = Some(dmatrix![1.0]);
        lqr.waypoints.push(Waypoint {
            step: 2,
            set: BoxSet::new(DVector::from_vec(vec![1.0]), DVector::from_vec(vec![1.0])).unwrap(),
        });
        let lowered = lower_to_problem_spec(&lqr, None).unwrap();
        let zeros = SlackMap::zeros(lowered.spec.num_constraints(), 1);
        let r = resilient::solve_pre_fixed_slack(&lowered.spec, &zeros).unwrap();
        assert!(r.status.is_converged());
        assert_abs_diff_eq!(r.decision[0], 1.0 / 3.0, epsilon = 1e-7);
        assert_abs_diff_eq!(r.decision[1], 2.0 / 3.0, epsilon = 1e-7);
        assert_abs_diff_eq!(r.value, 5.0 / 3.0, epsilon = 1e-7);
    }

    #[test]
    fn input_bounds_clip_the_first_move() {
        // from x0 = 10 toward 0 with |u| <= 1, the first input saturates
        let mut lqr = single_integrator(3);
        lqr.x0 = DVector::from_vec(vec![10.0]);
        lqr.terminal_cost = Some(dmatrix![10.0]);
        lqr.input_bounds = Some(BoxSet::symmetric_on(1, &[0], 1.0));
        let step = mpc_step(&lqr, None, &TrajectorySolve::Robust).unwrap();
        assert!(step.report.status.is_converged());
        assert_abs_diff_eq!(step.u0[0], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn slacked_input_rows_show_up_in_the_tables() {
        // target far away with a tiny input box and slack on inputs: the
        // solver buys extra control authority
        let mut lqr = single_integrator(2);
        lqr.x0 = DVector::from_vec(vec![4.0]);
        lqr.terminal_cost = Some(dmatrix![50.0]);
        lqr.input_bounds = Some(BoxSet::symmetric_on(1, &[0], 0.1));
        lqr.slack.input = true;
        let cost = ViolationCost::identity_quadratic(
            2 * lqr.horizon, // one row per side per step
        );
        let step = mpc_step(&lqr, None, &TrajectorySolve::Resilient(cost)).unwrap();
        assert!(step.report.status.is_converged());
        let max_slack = step.report.slacks.max_abs();
        assert!(max_slack > 0.5, "expected active slacks, max {max_slack}");
        // labels line up with constraints
        assert_eq!(step.labels.len(), step.report.slacks.num_constraints());
        assert!(step.labels.iter().all(|l| l.kind == RowKind::Input));
    }

    #[test]
    fn branched_terminal_rows_are_tabulated_per_scenario() {
        let mut lqr = single_integrator(2);
        lqr.terminal_cost = Some(dmatrix![1.0]);
        lqr.terminal_set = Some(BoxSet::new(
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![f64::INFINITY]),
        ).unwrap());
        let branching = ScenarioBranching {
            branch_step: 2,
            variants: vec![
                BranchVariant {
                    label: 0.0,
                    weight: 0.5,
                    a: dmatrix![1.0],
                    b: dmatrix![1.0],
                    w: lqr.w.clone(),
                    jump: None,
                },
                BranchVariant {
                    label: 1.0,
                    weight: 0.5,
                    a: dmatrix![1.0],
                    b: dmatrix![1.0],
                    w: lqr.w.clone(),
                    jump: Some(dmatrix![2.0]),
                },
            ],
        };
        let lowered = lower_to_problem_spec(&lqr, Some(&branching)).unwrap();
        // terminal row present at both scenarios with different coefficients
        let c = lowered
            .spec
            .constraints
            .iter()
            .zip(&lowered.labels)
            .find(|(_, l)| l.kind == RowKind::Terminal)
            .map(|(c, _)| c)
            .unwrap();
        assert!(c.active_at(0) && c.active_at(1));
        let z = DVector::from_vec(vec![1.0, 0.0]);
        let g0 = c.eval_scenario(&z, 0, &DVector::zeros(1)).unwrap().unwrap();
        let g1 = c.eval_scenario(&z, 1, &DVector::zeros(1)).unwrap().unwrap();
        // x2 = x1 + u1 with x1 = u0: scenario 0 gives 1; scenario 1's jump
        // doubles the state entered at the branch step
        assert_abs_diff_eq!(g0, 1.0 - 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g1, 1.0 - 2.0, epsilon = 1e-12);
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let mut lqr = single_integrator(3);
        lqr.b = DMatrix::zeros(2, 1);
        assert!(lqr.validate().is_err());
        let mut lqr = single_integrator(3);
        lqr.waypoints.push(Waypoint {
            step: 9,
            set: BoxSet::new(DVector::zeros(1), DVector::zeros(1)).unwrap(),
        });
        assert!(lqr.validate().is_err());
    }
}
