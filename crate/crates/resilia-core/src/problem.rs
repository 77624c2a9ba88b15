//! Problem representation: strongly convex quadratic objective, disturbance
//! dependent constraints, and the scenario quadrature they are enforced on.
//!
//! A constraint is a scalar requirement `g(z, xi) <= 0` on the decision
//! vector `z`, parameterized by the disturbance `xi`. Two shapes are
//! supported:
//!
//! * affine: `g = a' z - b(xi)`, with `b` affine in the disturbance, or with
//!   tabulated per-scenario coefficients for problems whose structure changes
//!   discretely with the scenario (post-disruption dynamics, say);
//! * ball: `g = ||S z - c(xi)||^2 - radius_sq`, with an affine center map.
//!
//! Per-scenario tabulated rows may be absent at some scenarios (`None`),
//! meaning the row does not apply there; this is how trajectories that only
//! exist in one branch of a scenario tree are lowered.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{Scenario, ScenarioSet};

/// Quadratic objective `J(z) = z' Q z + linear' z + offset` with `Q`
/// symmetric positive definite, so `J` is strongly convex with modulus twice
/// the smallest eigenvalue of `Q`.
#[derive(Debug, Clone)]
pub struct Objective {
    pub q: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub offset: f64,
}

impl Objective {
    pub fn new(q: DMatrix<f64>, linear: DVector<f64>, offset: f64) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::invalid("objective matrix must be square"));
        }
        if q.nrows() != linear.len() {
            return Err(Error::DimensionMismatch {
                context: "objective linear term",
                expected: q.nrows(),
                got: linear.len(),
            });
        }
        Ok(Self { q, linear, offset })
    }

    /// Pure quadratic form `z' Q z`.
    pub fn quadratic(q: DMatrix<f64>) -> Result<Self> {
        let n = q.nrows();
        Self::new(q, DVector::zeros(n), 0.0)
    }

    /// Squared distance `||z - target||^2`.
    pub fn squared_distance(target: &DVector<f64>) -> Self {
        let n = target.len();
        Self {
            q: DMatrix::identity(n, n),
            linear: -2.0 * target,
            offset: target.dot(target),
        }
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn value(&self, z: &DVector<f64>) -> f64 {
        (self.q.clone() * z).dot(z) + self.linear.dot(z) + self.offset
    }

    pub fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let qz = &self.q * z;
        let qtz = self.q.transpose() * z;
        qz + qtz + &self.linear
    }

    /// Hessian `Q + Q'` (equals `2Q` for symmetric `Q`).
    pub fn hessian(&self) -> DMatrix<f64> {
        &self.q + self.q.transpose()
    }
}

/// Tabulated affine row for one scenario: `g = a' z - b`.
#[derive(Debug, Clone)]
pub struct AffineRow {
    pub a: DVector<f64>,
    pub b: f64,
}

/// Coefficients of an affine constraint, either as an explicit function of
/// the disturbance or tabulated per scenario.
#[derive(Debug, Clone)]
pub enum AffineCoeffs {
    /// `g(z, xi) = a' z - (b0 + b_xi' xi)`; `b_xi = None` means no
    /// disturbance dependence.
    Parametric {
        a: DVector<f64>,
        b0: f64,
        b_xi: Option<DVector<f64>>,
    },
    /// One row per scenario; `None` marks scenarios where the row does not
    /// apply.
    PerScenario { rows: Vec<Option<AffineRow>> },
}

/// Scalar constraint `g(z, xi) <= 0` with a declared Lipschitz bound in the
/// disturbance (sup-norm) and a flag deciding whether the resilient solver
/// may relax it with a slack.
#[derive(Debug, Clone)]
pub enum Constraint {
    Affine {
        coeffs: AffineCoeffs,
        lipschitz: f64,
        slack: bool,
    },
    Ball {
        selector: DMatrix<f64>,
        center0: DVector<f64>,
        center_xi: Option<DMatrix<f64>>,
        radius_sq: f64,
        lipschitz: f64,
        slack: bool,
    },
}

impl Constraint {
    /// Affine row with no disturbance dependence: `a' z - b <= 0`.
    pub fn affine(a: DVector<f64>, b: f64) -> Self {
        Constraint::Affine {
            coeffs: AffineCoeffs::Parametric { a, b0: b, b_xi: None },
            lipschitz: 0.0,
            slack: true,
        }
    }

    /// Affine row whose right-hand side shifts with the disturbance:
    /// `a' z <= b0 + b_xi' xi`. The declared bound is `|b_xi|_1`, attained.
    pub fn affine_disturbed(a: DVector<f64>, b0: f64, b_xi: DVector<f64>) -> Self {
        let lipschitz = b_xi.iter().map(|v| v.abs()).sum();
        Constraint::Affine {
            coeffs: AffineCoeffs::Parametric {
                a,
                b0,
                b_xi: Some(b_xi),
            },
            lipschitz,
            slack: true,
        }
    }

    /// Tabulated affine rows, one per scenario.
    pub fn per_scenario(rows: Vec<Option<AffineRow>>, lipschitz: f64) -> Self {
        Constraint::Affine {
            coeffs: AffineCoeffs::PerScenario { rows },
            lipschitz,
            slack: true,
        }
    }

    /// Ball constraint whose center is the disturbance itself:
    /// `||S z - xi||^2 <= radius_sq`.
    pub fn ball_tracking(selector: DMatrix<f64>, radius_sq: f64, lipschitz: f64) -> Self {
        let d = selector.nrows();
        Constraint::Ball {
            selector,
            center0: DVector::zeros(d),
            center_xi: Some(DMatrix::identity(d, d)),
            radius_sq,
            lipschitz,
            slack: true,
        }
    }

    /// Ball constraint with a fixed center.
    pub fn ball_fixed(selector: DMatrix<f64>, center: DVector<f64>, radius_sq: f64) -> Self {
        Constraint::Ball {
            selector,
            center0: center,
            center_xi: None,
            radius_sq,
            lipschitz: 0.0,
            slack: true,
        }
    }

    pub fn with_slack(mut self, flag: bool) -> Self {
        match &mut self {
            Constraint::Affine { slack, .. } | Constraint::Ball { slack, .. } => *slack = flag,
        }
        self
    }

    pub fn slack_allowed(&self) -> bool {
        match self {
            Constraint::Affine { slack, .. } | Constraint::Ball { slack, .. } => *slack,
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match self {
            Constraint::Affine { lipschitz, .. } | Constraint::Ball { lipschitz, .. } => *lipschitz,
        }
    }

    /// Whether the constraint applies at scenario `j`.
    pub fn active_at(&self, j: usize) -> bool {
        match self {
            Constraint::Affine {
                coeffs: AffineCoeffs::PerScenario { rows },
                ..
            } => rows.get(j).is_some_and(|r| r.is_some()),
            _ => true,
        }
    }

    fn rhs_at(b0: f64, b_xi: &Option<DVector<f64>>, xi: &DVector<f64>) -> Result<f64> {
        match b_xi {
            None => Ok(b0),
            Some(bx) => {
                if bx.len() != xi.len() {
                    return Err(Error::DimensionMismatch {
                        context: "constraint disturbance coefficient",
                        expected: bx.len(),
                        got: xi.len(),
                    });
                }
                Ok(b0 + bx.dot(xi))
            }
        }
    }

    fn center_at(
        center0: &DVector<f64>,
        center_xi: &Option<DMatrix<f64>>,
        xi: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        match center_xi {
            None => Ok(center0.clone()),
            Some(cx) => {
                if cx.ncols() != xi.len() {
                    return Err(Error::DimensionMismatch {
                        context: "ball center disturbance map",
                        expected: cx.ncols(),
                        got: xi.len(),
                    });
                }
                Ok(center0 + cx * xi)
            }
        }
    }

    /// Evaluates `g(z, xi)` for an arbitrary disturbance. Tabulated
    /// constraints have no closed form off the scenario grid and are
    /// rejected; use [`Constraint::eval_scenario`] for those.
    pub fn evaluate(&self, z: &DVector<f64>, xi: &DVector<f64>) -> Result<f64> {
        match self {
            Constraint::Affine { coeffs, .. } => match coeffs {
                AffineCoeffs::Parametric { a, b0, b_xi } => {
                    check_len("affine coefficient", a.len(), z.len())?;
                    Ok(a.dot(z) - Self::rhs_at(*b0, b_xi, xi)?)
                }
                AffineCoeffs::PerScenario { .. } => Err(Error::invalid(
                    "per-scenario constraint can only be evaluated at a scenario index",
                )),
            },
            Constraint::Ball {
                selector,
                center0,
                center_xi,
                radius_sq,
                ..
            } => {
                check_len("ball selector", selector.ncols(), z.len())?;
                let c = Self::center_at(center0, center_xi, xi)?;
                let r = selector * z - c;
                Ok(r.dot(&r) - radius_sq)
            }
        }
    }

    /// Evaluates `g(z, xi_j)` at scenario `j` with point `xi`. Inactive
    /// tabulated rows evaluate to `None`.
    pub fn eval_scenario(&self, z: &DVector<f64>, j: usize, xi: &DVector<f64>) -> Result<Option<f64>> {
        match self {
            Constraint::Affine {
                coeffs: AffineCoeffs::PerScenario { rows },
                ..
            } => match rows.get(j) {
                None => Err(Error::invalid(format!("scenario index {j} out of range"))),
                Some(None) => Ok(None),
                Some(Some(row)) => {
                    check_len("affine coefficient", row.a.len(), z.len())?;
                    Ok(Some(row.a.dot(z) - row.b))
                }
            },
            _ => self.evaluate(z, xi).map(Some),
        }
    }

    /// Gradient of `g` in `z` at scenario `j`.
    pub fn grad_scenario(
        &self,
        z: &DVector<f64>,
        j: usize,
        xi: &DVector<f64>,
    ) -> Result<Option<DVector<f64>>> {
        match self {
            Constraint::Affine { coeffs, .. } => match coeffs {
                AffineCoeffs::Parametric { a, .. } => Ok(Some(a.clone())),
                AffineCoeffs::PerScenario { rows } => match rows.get(j) {
                    None => Err(Error::invalid(format!("scenario index {j} out of range"))),
                    Some(None) => Ok(None),
                    Some(Some(row)) => Ok(Some(row.a.clone())),
                },
            },
            Constraint::Ball {
                selector,
                center0,
                center_xi,
                ..
            } => {
                let c = Self::center_at(center0, center_xi, xi)?;
                let r = selector * z - c;
                Ok(Some(2.0 * selector.transpose() * r))
            }
        }
    }

    /// Constant Hessian of `g` in `z` (`2 S' S` for balls, zero for affine
    /// rows, in which case `None` is returned).
    pub fn curvature(&self) -> Option<DMatrix<f64>> {
        match self {
            Constraint::Affine { .. } => None,
            Constraint::Ball { selector, .. } => {
                Some(2.0 * selector.transpose() * selector)
            }
        }
    }
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

/// A complete problem instance: objective, constraints, scenario quadrature,
/// and an optional interior-point certificate.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub objective: Objective,
    pub constraints: Vec<Constraint>,
    pub scenarios: ScenarioSet,
    pub slater_point: Option<DVector<f64>>,
}

impl ProblemSpec {
    pub fn new(objective: Objective, constraints: Vec<Constraint>, scenarios: ScenarioSet) -> Self {
        Self {
            objective,
            constraints,
            scenarios,
            slater_point: None,
        }
    }

    pub fn with_slater_point(mut self, z: DVector<f64>) -> Self {
        self.slater_point = Some(z);
        self
    }

    pub fn num_vars(&self) -> usize {
        self.objective.dim()
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.len()
    }

    pub fn num_scenarios(&self) -> usize {
        self.scenarios.len()
    }

    /// `g_i(z, xi_j)`, or `None` when row `i` does not apply at scenario `j`.
    pub fn constraint_value(&self, i: usize, j: usize, z: &DVector<f64>) -> Result<Option<f64>> {
        let xi = self.scenarios.point(j);
        self.constraints[i].eval_scenario(z, j, &xi)
    }

    /// Structural validation; returns human-readable descriptions of every
    /// violated invariant, empty when the spec is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let p = self.num_vars();
        let d = self.scenarios.dim();
        let k = self.num_scenarios();

        let q = &self.objective.q;
        if !q.is_square() || q.nrows() != p {
            issues.push("objective matrix is not square of the decision dimension".into());
        } else {
            let asym = (q - q.transpose()).abs().max();
            if asym > 1e-10 {
                issues.push(format!("objective matrix is not symmetric (deviation {asym:.3e})"));
            }
            let min_eig = q
                .clone()
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if !(min_eig > 0.0) {
                issues.push(format!(
                    "objective matrix is not positive definite (smallest eigenvalue {min_eig:.3e})"
                ));
            }
        }
        if self.objective.linear.len() != p {
            issues.push("objective linear term has wrong dimension".into());
        }

        for (i, c) in self.constraints.iter().enumerate() {
            if !(c.lipschitz() >= 0.0) || !c.lipschitz().is_finite() {
                issues.push(format!("constraint {i}: Lipschitz bound must be finite and nonnegative"));
            }
            match c {
                Constraint::Affine { coeffs, .. } => match coeffs {
                    AffineCoeffs::Parametric { a, b_xi, .. } => {
                        if a.len() != p {
                            issues.push(format!("constraint {i}: coefficient dimension {} != {p}", a.len()));
                        }
                        if let Some(bx) = b_xi {
                            if bx.len() != d {
                                issues.push(format!(
                                    "constraint {i}: disturbance coefficient dimension {} != {d}",
                                    bx.len()
                                ));
                            }
                        }
                    }
                    AffineCoeffs::PerScenario { rows } => {
                        if rows.len() != k {
                            issues.push(format!(
                                "constraint {i}: per-scenario table has {} rows for {k} scenarios",
                                rows.len()
                            ));
                        }
                        if rows.iter().all(|r| r.is_none()) {
                            issues.push(format!("constraint {i}: active at no scenario"));
                        }
                        for (j, row) in rows.iter().enumerate() {
                            if let Some(r) = row {
                                if r.a.len() != p {
                                    issues.push(format!(
                                        "constraint {i}: scenario {j} coefficient dimension {} != {p}",
                                        r.a.len()
                                    ));
                                }
                            }
                        }
                    }
                },
                Constraint::Ball {
                    selector,
                    center0,
                    center_xi,
                    radius_sq,
                    ..
                } => {
                    if selector.ncols() != p {
                        issues.push(format!("constraint {i}: selector has {} columns for {p} variables", selector.ncols()));
                    }
                    if center0.len() != selector.nrows() {
                        issues.push(format!("constraint {i}: center dimension mismatch"));
                    }
                    if let Some(cx) = center_xi {
                        if cx.nrows() != selector.nrows() || cx.ncols() != d {
                            issues.push(format!("constraint {i}: center disturbance map has wrong shape"));
                        }
                    }
                    if !(*radius_sq > 0.0) {
                        issues.push(format!("constraint {i}: squared radius must be positive"));
                    }
                }
            }
        }

        if let Some(zs) = &self.slater_point {
            if zs.len() != p {
                issues.push("interior-point certificate has wrong dimension".into());
            } else {
                'outer: for (i, c) in self.constraints.iter().enumerate() {
                    for j in 0..k {
                        let xi = self.scenarios.point(j);
                        match c.eval_scenario(zs, j, &xi) {
                            Ok(Some(g)) if g >= 0.0 => {
                                issues.push(format!(
                                    "interior-point certificate is not strictly feasible at constraint {i}, scenario {j} (g = {g:.3e})"
                                ));
                                break 'outer;
                            }
                            Ok(_) => {}
                            Err(e) => {
                                issues.push(format!("interior-point certificate check failed: {e}"));
                                break 'outer;
                            }
                        }
                    }
                }
            }
        }

        issues
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(json: &str) -> Result<Self> {
        Ok(serde_json::from_str(json)?)
    }
}

/// Evaluates the objective at `z`.
pub fn evaluate_objective(obj: &Objective, z: &DVector<f64>) -> f64 {
    obj.value(z)
}

/// Evaluates a constraint at an arbitrary disturbance point.
pub fn evaluate_constraint(c: &Constraint, z: &DVector<f64>, xi: &DVector<f64>) -> Result<f64> {
    c.evaluate(z, xi)
}

/// Builds a validated scenario set.
pub fn build_scenario_set(
    points: Vec<DVector<f64>>,
    weights: Vec<f64>,
    densities: Vec<f64>,
) -> Result<ScenarioSet> {
    ScenarioSet::new(points, weights, densities)
}

/// Structural validation of a problem instance.
pub fn validate_problem(ps: &ProblemSpec) -> Vec<String> {
    ps.validate()
}

pub(crate) fn mat_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

pub(crate) fn mat_from_rows(rows: &[Vec<f64>], context: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::invalid(format!("{context}: empty matrix")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid(format!("{context}: ragged matrix rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

// --- JSON layer -----------------------------------------------------------
//
// Matrices are serialized row-major as nested arrays. Deserialization goes
// through the validating constructors so a parsed spec satisfies the same
// invariants as a programmatically built one.

#[derive(Serialize, Deserialize)]
struct ObjectiveDto {
    kind: String,
    #[serde(rename = "Q_obj")]
    q_obj: Vec<Vec<f64>>,
    linear: Vec<f64>,
    offset: f64,
}

#[derive(Serialize, Deserialize)]
struct AffineRowDto {
    a: Vec<f64>,
    b: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind")]
enum ConstraintDto {
    #[serde(rename = "affine")]
    Affine {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        b_xi: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        per_scenario: Option<Vec<Option<AffineRowDto>>>,
        lipschitz: f64,
        #[serde(default = "default_true")]
        slack: bool,
    },
    #[serde(rename = "ball")]
    Ball {
        selector: Vec<Vec<f64>>,
        center0: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center_xi: Option<Vec<Vec<f64>>>,
        radius_sq: f64,
        lipschitz: f64,
        #[serde(default = "default_true")]
        slack: bool,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Serialize, Deserialize)]
struct ScenarioSetDto {
    scenarios: Vec<Scenario>,
    density_values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProblemSpecDto {
    objective: ObjectiveDto,
    constraints: Vec<ConstraintDto>,
    scenarios: ScenarioSetDto,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slater_point: Option<Vec<f64>>,
}

impl From<&ProblemSpec> for ProblemSpecDto {
    fn from(ps: &ProblemSpec) -> Self {
        let objective = ObjectiveDto {
            kind: "quadratic-form".into(),
            q_obj: mat_to_rows(&ps.objective.q),
            linear: ps.objective.linear.as_slice().to_vec(),
            offset: ps.objective.offset,
        };
        let constraints = ps
            .constraints
            .iter()
            .map(|c| match c {
                Constraint::Affine {
                    coeffs,
                    lipschitz,
                    slack,
                } => match coeffs {
                    AffineCoeffs::Parametric { a, b0, b_xi } => ConstraintDto::Affine {
                        a: Some(a.as_slice().to_vec()),
                        b0: Some(*b0),
                        b_xi: b_xi.as_ref().map(|v| v.as_slice().to_vec()),
                        per_scenario: None,
                        lipschitz: *lipschitz,
                        slack: *slack,
                    },
                    AffineCoeffs::PerScenario { rows } => ConstraintDto::Affine {
                        a: None,
                        b0: None,
                        b_xi: None,
                        per_scenario: Some(
                            rows.iter()
                                .map(|r| {
                                    r.as_ref().map(|row| AffineRowDto {
                                        a: row.a.as_slice().to_vec(),
                                        b: row.b,
                                    })
                                })
                                .collect(),
                        ),
                        lipschitz: *lipschitz,
                        slack: *slack,
                    },
                },
                Constraint::Ball {
                    selector,
                    center0,
                    center_xi,
                    radius_sq,
                    lipschitz,
                    slack,
                } => ConstraintDto::Ball {
                    selector: mat_to_rows(selector),
                    center0: center0.as_slice().to_vec(),
                    center_xi: center_xi.as_ref().map(|m| mat_to_rows(m)),
                    radius_sq: *radius_sq,
                    lipschitz: *lipschitz,
                    slack: *slack,
                },
            })
            .collect();
        ProblemSpecDto {
            objective,
            constraints,
            scenarios: ScenarioSetDto {
                scenarios: (0..ps.scenarios.len())
                    .map(|j| Scenario {
                        xi: ps.scenarios.point(j).as_slice().to_vec(),
                        weight: ps.scenarios.weight(j),
                    })
                    .collect(),
                density_values: ps.scenarios.densities().to_vec(),
            },
            slater_point: ps.slater_point.as_ref().map(|v| v.as_slice().to_vec()),
        }
    }
}

impl TryFrom<ProblemSpecDto> for ProblemSpec {
    type Error = Error;

    fn try_from(dto: ProblemSpecDto) -> Result<Self> {
        if dto.objective.kind != "quadratic-form" {
            return Err(Error::invalid(format!(
                "unknown objective kind {:?}",
                dto.objective.kind
            )));
        }
        let q = mat_from_rows(&dto.objective.q_obj, "objective matrix")?;
        let objective = Objective::new(
            q,
            DVector::from_vec(dto.objective.linear),
            dto.objective.offset,
        )?;
        let mut constraints = Vec::with_capacity(dto.constraints.len());
        for (i, c) in dto.constraints.into_iter().enumerate() {
            constraints.push(match c {
                ConstraintDto::Affine {
                    a,
                    b0,
                    b_xi,
                    per_scenario,
                    lipschitz,
                    slack,
                } => {
                    let coeffs = match (a, per_scenario) {
                        (Some(a), None) => AffineCoeffs::Parametric {
                            a: DVector::from_vec(a),
                            b0: b0.ok_or_else(|| {
                                Error::invalid(format!("constraint {i}: missing b0"))
                            })?,
                            b_xi: b_xi.map(DVector::from_vec),
                        },
                        (None, Some(rows)) => AffineCoeffs::PerScenario {
                            rows: rows
                                .into_iter()
                                .map(|r| {
                                    r.map(|row| AffineRow {
                                        a: DVector::from_vec(row.a),
                                        b: row.b,
                                    })
                                })
                                .collect(),
                        },
                        _ => {
                            return Err(Error::invalid(format!(
                                "constraint {i}: exactly one of `a` or `per_scenario` must be given"
                            )))
                        }
                    };
                    Constraint::Affine {
                        coeffs,
                        lipschitz,
                        slack,
                    }
                }
                ConstraintDto::Ball {
                    selector,
                    center0,
                    center_xi,
                    radius_sq,
                    lipschitz,
                    slack,
                } => Constraint::Ball {
                    selector: mat_from_rows(&selector, "ball selector")?,
                    center0: DVector::from_vec(center0),
                    center_xi: center_xi
                        .map(|m| mat_from_rows(&m, "ball center map"))
                        .transpose()?,
                    radius_sq,
                    lipschitz,
                    slack,
                },
            });
        }
        let points = dto
            .scenarios
            .scenarios
            .iter()
            .map(|s| DVector::from_column_slice(&s.xi))
            .collect();
        let weights = dto.scenarios.scenarios.iter().map(|s| s.weight).collect();
        let scenarios = ScenarioSet::new(points, weights, dto.scenarios.density_values)?;
        Ok(ProblemSpec {
            objective,
            constraints,
            scenarios,
            slater_point: dto.slater_point.map(DVector::from_vec),
        })
    }
}

impl Serialize for ProblemSpec {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ProblemSpecDto::from(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ProblemSpec {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let dto = ProblemSpecDto::deserialize(deserializer)?;
        ProblemSpec::try_from(dto).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_d_spec() -> ProblemSpec {
        // J = z^2, one scenario, constraint 1 - z <= 0.
        let objective = Objective::quadratic(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let c = Constraint::affine(DVector::from_vec(vec![-1.0]), -1.0);
        ProblemSpec::new(
            objective,
            vec![c],
            ScenarioSet::singleton(DVector::from_vec(vec![0.0])),
        )
    }

    #[test]
    fn objective_value_and_gradient() {
        let obj = Objective::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]),
            DVector::from_vec(vec![1.0, -1.0]),
            3.0,
        )
        .unwrap();
        let z = DVector::from_vec(vec![1.0, 2.0]);
        // 2*1 + 4 + 1 - 2 + 3
        assert_abs_diff_eq!(obj.value(&z), 8.0, epsilon = 1e-14);
        let g = obj.gradient(&z);
        assert_abs_diff_eq!(g[0], 5.0, epsilon = 1e-14);
        assert_abs_diff_eq!(g[1], 3.0, epsilon = 1e-14);
    }

    #[test]
    fn affine_evaluation_matches_definition() {
        let c = Constraint::affine(DVector::from_vec(vec![1.0]), 1.0);
        let z = DVector::from_vec(vec![0.0]);
        let xi = DVector::from_vec(vec![0.0]);
        assert_abs_diff_eq!(c.evaluate(&z, &xi).unwrap(), -1.0, epsilon = 1e-15);
    }

    #[test]
    fn ball_evaluation_matches_definition() {
        let c = Constraint::ball_fixed(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![3.0, 4.0]),
            1.0,
        );
        let z = DVector::zeros(2);
        let xi = DVector::zeros(1);
        assert_abs_diff_eq!(c.evaluate(&z, &xi).unwrap(), 24.0, epsilon = 1e-12);
    }

    #[test]
    fn disturbed_rhs_shifts_with_xi() {
        let c = Constraint::affine_disturbed(
            DVector::from_vec(vec![1.0, 0.0]),
            1.0,
            DVector::from_vec(vec![0.5, -0.5]),
        );
        let z = DVector::from_vec(vec![1.0, 7.0]);
        let xi = DVector::from_vec(vec![1.0, 1.0]);
        // b(xi) = 1 + 0.5 - 0.5 = 1, so g = 0; declared bound is |b_xi|_1.
        assert_abs_diff_eq!(c.evaluate(&z, &xi).unwrap(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(c.lipschitz(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn validate_flags_asymmetric_objective() {
        let mut ps = one_d_spec();
        ps.objective.q = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let issues = ps.validate();
        assert!(issues.iter().any(|m| m.contains("positive definite")));
    }

    #[test]
    fn validate_accepts_well_formed_spec() {
        let ps = one_d_spec().with_slater_point(DVector::from_vec(vec![2.0]));
        assert!(ps.validate().is_empty(), "{:?}", ps.validate());
    }

    #[test]
    fn validate_rejects_non_interior_certificate() {
        let ps = one_d_spec().with_slater_point(DVector::from_vec(vec![0.0]));
        let issues = ps.validate();
        assert!(issues.iter().any(|m| m.contains("strictly feasible")));
    }

    #[test]
    fn json_round_trip_preserves_evaluation() {
        let ps = one_d_spec().with_slater_point(DVector::from_vec(vec![2.0]));
        let json = ps.to_json_string().unwrap();
        assert!(json.contains("\"Q_obj\""));
        assert!(json.contains("\"scenarios\""));
        let back = ProblemSpec::from_json_str(&json).unwrap();
        let z = DVector::from_vec(vec![0.25]);
        assert_abs_diff_eq!(
            back.objective.value(&z),
            ps.objective.value(&z),
            epsilon = 1e-15
        );
        let g0 = back.constraint_value(0, 0, &z).unwrap().unwrap();
        assert_abs_diff_eq!(g0, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn json_rejects_bad_weights() {
        let ps = one_d_spec();
        let mut json: serde_json::Value = serde_json::from_str(&ps.to_json_string().unwrap()).unwrap();
        json["scenarios"]["scenarios"][0]["weight"] = serde_json::json!(0.7);
        let err = serde_json::from_value::<ProblemSpec>(json);
        assert!(err.is_err());
    }

    #[test]
    fn per_scenario_rows_respect_mask() {
        let rows = vec![
            Some(AffineRow {
                a: DVector::from_vec(vec![1.0]),
                b: 0.0,
            }),
            None,
        ];
        let c = Constraint::per_scenario(rows, 0.0);
        assert!(c.active_at(0));
        assert!(!c.active_at(1));
        let z = DVector::from_vec(vec![2.0]);
        let xi = DVector::zeros(1);
        assert_eq!(c.eval_scenario(&z, 1, &xi).unwrap(), None);
        assert_abs_diff_eq!(
            c.eval_scenario(&z, 0, &xi).unwrap().unwrap(),
            2.0,
            epsilon = 1e-15
        );
        assert!(c.evaluate(&z, &xi).is_err());
    }
}
