//! Robust surrogates: margin-tightened and worst-case formulations with no
//! constraint violation tolerated.
//!
//! [`solve_robust_surrogate`] collapses the scenario set to its mean and
//! tightens every constraint by a concentration margin
//! `epsilon = L sigma sqrt(2 ln(2 m d / delta))`, where `L` bounds the
//! constraint sensitivity to the disturbance (sup-norm), `sigma` is a
//! sub-Gaussian scale of the disturbance about its mean, `m` counts
//! constraints and `d` the disturbance dimension. A minimizer of the
//! tightened single-scenario program violates any constraint with
//! probability at most `delta`. The margin is conservative by design;
//! [`estimate_violation_probability`] measures the realized rate by Monte
//! Carlo so the slack between guarantee and reality is visible.
//!
//! [`solve_worst_case`] instead enforces every row at every scenario of a
//! finite set, and [`retain_most_likely`] reduces a scenario set to its
//! most probable core of mass `1 - delta` for robust solves that tolerate a
//! small violation probability.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::duality::{SlackMap, SolveReport, SolveStatus};
use crate::error::{Error, Result};
use crate::problem::{AffineCoeffs, Constraint, ProblemSpec};
use crate::resilient;
use crate::sampler::DisturbanceSampler;
use crate::scenario::ScenarioSet;

/// Parameters of the margin-tightened surrogate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustConfig {
    /// Admissible violation probability, in (0, 1).
    pub delta: f64,
    /// Bound on every constraint's disturbance sensitivity (sup-norm).
    pub lipschitz_max: f64,
    /// Sub-Gaussian scale of the disturbance about its mean; for a
    /// distribution supported on a box, half the largest half-width.
    pub sigma: f64,
    /// Disturbance value the surrogate scenario is pinned to.
    pub mean_xi: Vec<f64>,
}

impl RobustConfig {
    pub fn new(delta: f64, lipschitz_max: f64, sigma: f64, mean_xi: DVector<f64>) -> Result<Self> {
        let cfg = Self {
            delta,
            lipschitz_max,
            sigma,
            mean_xi: mean_xi.as_slice().to_vec(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the Lipschitz bound and mean off the spec itself.
    pub fn for_spec(spec: &ProblemSpec, delta: f64, sigma: f64) -> Result<Self> {
        let l = spec
            .constraints
            .iter()
            .map(Constraint::lipschitz)
            .fold(0.0, f64::max);
        Self::new(delta, l, sigma, spec.scenarios.mean())
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid("violation budget must lie in (0, 1)"));
        }
        if !(self.lipschitz_max >= 0.0 && self.lipschitz_max.is_finite()) {
            return Err(Error::invalid("sensitivity bound must be finite and nonnegative"));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid("disturbance scale must be positive"));
        }
        Ok(())
    }

    pub fn mean_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.mean_xi.clone())
    }

    /// Margin `epsilon = L sigma sqrt(2 ln(2 m d / delta))` for `m`
    /// constraints in a `d`-dimensional disturbance.
    pub fn epsilon(&self, num_constraints: usize, dim: usize) -> Result<f64> {
        self.validate()?;
        if num_constraints == 0 || dim == 0 {
            return Err(Error::invalid("margin needs at least one constraint and dimension"));
        }
        let ratio = 2.0 * num_constraints as f64 * dim as f64 / self.delta;
        Ok(self.lipschitz_max * self.sigma * (2.0 * ratio.ln()).sqrt())
    }
}

/// Margin as a free function.
pub fn compute_epsilon(config: &RobustConfig, num_constraints: usize, dim: usize) -> Result<f64> {
    config.epsilon(num_constraints, dim)
}

fn tighten(c: &Constraint, eps: f64) -> Result<Constraint> {
    match c {
        Constraint::Affine {
            coeffs: AffineCoeffs::Parametric { a, b0, b_xi },
            lipschitz,
            ..
        } => Ok(Constraint::Affine {
            coeffs: AffineCoeffs::Parametric {
                a: a.clone(),
                b0: b0 - eps,
                b_xi: b_xi.clone(),
            },
            lipschitz: *lipschitz,
            slack: false,
        }),
        Constraint::Affine {
            coeffs: AffineCoeffs::PerScenario { .. },
            ..
        } => Err(Error::invalid(
            "tabulated rows have no closed form off the scenario grid; \
             the margin surrogate needs parametric constraints",
        )),
        Constraint::Ball {
            selector,
            center0,
            center_xi,
            radius_sq,
            lipschitz,
            ..
        } => Ok(Constraint::Ball {
            selector: selector.clone(),
            center0: center0.clone(),
            center_xi: center_xi.clone(),
            radius_sq: radius_sq - eps,
            lipschitz: *lipschitz,
            slack: false,
        }),
    }
}

/// Solves the margin-tightened surrogate: one scenario at the configured
/// mean, every constraint tightened by `epsilon` and enforced outright.
/// The report is indexed against that single surrogate scenario.
pub fn solve_robust_surrogate(spec: &ProblemSpec, config: &RobustConfig) -> Result<SolveReport> {
    let eps = config.epsilon(spec.num_constraints(), spec.scenarios.dim())?;
    let mean = config.mean_vector();
    if mean.len() != spec.scenarios.dim() {
        return Err(Error::DimensionMismatch {
            context: "surrogate mean disturbance",
            expected: spec.scenarios.dim(),
            got: mean.len(),
        });
    }
    let mut constraints = Vec::with_capacity(spec.num_constraints());
    for c in &spec.constraints {
        let t = tighten(c, eps)?;
        if let Constraint::Ball { radius_sq, .. } = &t {
            if *radius_sq <= 0.0 {
                // the margin exceeds the ball entirely; nothing is feasible
                let one = ProblemSpec::new(
                    spec.objective.clone(),
                    vec![],
                    ScenarioSet::singleton(mean.clone()),
                );
                let mut rep = infeasible_like(&one, spec.num_constraints());
                rep.iterations = 0;
                return Ok(rep);
            }
        }
        constraints.push(t);
    }
    let surrogate = ProblemSpec::new(
        spec.objective.clone(),
        constraints,
        ScenarioSet::singleton(mean),
    );
    let zeros = SlackMap::zeros(surrogate.num_constraints(), 1);
    resilient::solve_pre_fixed_slack(&surrogate, &zeros)
}

fn infeasible_like(spec: &ProblemSpec, m: usize) -> SolveReport {
    use crate::duality::{DualMap, KktResidual};
    SolveReport {
        status: SolveStatus::Infeasible,
        decision: vec![0.0; spec.num_vars()],
        duals: DualMap::zeros(m, 1),
        slacks: SlackMap::zeros(m, 1),
        objective: f64::INFINITY,
        penalty: 0.0,
        value: f64::INFINITY,
        residual: KktResidual {
            stationarity: f64::INFINITY,
            complementarity: f64::INFINITY,
            feasibility: f64::INFINITY,
        },
        iterations: 0,
    }
}

/// Enforces every constraint row at every scenario with no slack: the
/// worst-case program over the finite scenario set. Slack flags on the
/// spec are ignored.
pub fn solve_worst_case(spec: &ProblemSpec) -> Result<SolveReport> {
    let zeros = SlackMap::zeros(spec.num_constraints(), spec.num_scenarios());
    resilient::solve_pre_fixed_slack(spec, &zeros)
}

/// Monte Carlo estimate of a violation probability.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ViolationEstimate {
    /// Fraction of samples violating at least one constraint.
    pub p_hat: f64,
    /// Normal-approximation 95% half-width `1.96 sqrt(p(1-p)/n)`.
    pub half_width: f64,
    pub samples: usize,
}

/// Draws `samples` disturbances and reports the fraction under which `z`
/// violates any of the given constraints. Sampling is stream-indexed, so
/// the estimate is reproducible for a fixed seed regardless of chunking.
pub fn estimate_violation_probability(
    constraints: &[Constraint],
    z: &DVector<f64>,
    sampler: &DisturbanceSampler,
    samples: usize,
    seed: u64,
) -> Result<ViolationEstimate> {
    if samples == 0 {
        return Err(Error::invalid("violation estimate needs at least one sample"));
    }
    sampler.validate()?;
    let mut violations = 0usize;
    for t in 0..samples {
        let xi = sampler.draw(seed, t as u64);
        let mut violated = false;
        for c in constraints {
            if c.evaluate(z, &xi)? > 0.0 {
                violated = true;
                break;
            }
        }
        if violated {
            violations += 1;
        }
    }
    let p = violations as f64 / samples as f64;
    Ok(ViolationEstimate {
        p_hat: p,
        half_width: 1.96 * (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
    })
}

/// Indices of a most-probable scenario core of mass at least `1 - delta`:
/// scenarios are taken by decreasing weight (ties by index) until the mass
/// target is reached. The returned indices are sorted.
pub fn retain_most_likely(set: &ScenarioSet, delta: f64) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::invalid("violation budget must lie in [0, 1)"));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| {
        set.weight(b)
            .partial_cmp(&set.weight(a))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for j in order {
        kept.push(j);
        mass += set.weight(j);
        if mass >= 1.0 - delta - 1e-12 {
            break;
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Objective;
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    #[test]
    fn margin_closed_form_case() {
        // delta = 2/e^2 makes ln(2md/delta) = 2, so eps = L sigma * 2
        let cfg = RobustConfig::new(
            2.0 * (-2.0_f64).exp(),
            1.0,
            0.5,
            DVector::zeros(1),
        )
        .unwrap();
        assert_abs_diff_eq!(cfg.epsilon(1, 1).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn margin_grows_with_rows_and_dimension() {
        let cfg = RobustConfig::new(0.1, 1.0, 1.0, DVector::zeros(1)).unwrap();
        let e1 = cfg.epsilon(1, 1).unwrap();
        let e2 = cfg.epsilon(4, 1).unwrap();
        let e3 = cfg.epsilon(4, 3).unwrap();
        assert!(e1 < e2 && e2 < e3);
    }

    #[test]
    fn surrogate_tightens_the_feasible_set() {
        // min z^2 s.t. z >= 1 + xi, xi with mean 0: eps = 0.5 pushes the
        // bound to 1.5
        let c = Constraint::affine_disturbed(
            DVector::from_vec(vec![-1.0]),
            -1.0,
            DVector::from_vec(vec![-1.0]),
        );
        let spec = ProblemSpec::new(
            Objective::quadratic(dmatrix![1.0]).unwrap(),
            vec![c],
            ScenarioSet::singleton(DVector::zeros(1)),
        );
        let cfg = RobustConfig::new(2.0 * (-2.0_f64).exp(), 1.0, 0.25, DVector::zeros(1)).unwrap();
        assert_abs_diff_eq!(cfg.epsilon(1, 1).unwrap(), 0.5, epsilon = 1e-12);
        let r = solve_robust_surrogate(&spec, &cfg).unwrap();
        assert!(r.status.is_converged());
        assert_abs_diff_eq!(r.decision[0], 1.5, epsilon = 1e-7);
    }

    #[test]
    fn surrogate_detects_an_overtightened_ball() {
        let c = Constraint::ball_fixed(dmatrix![1.0], DVector::zeros(1), 0.25);
        let spec = ProblemSpec::new(
            Objective::quadratic(dmatrix![1.0]).unwrap(),
            vec![c],
            ScenarioSet::singleton(DVector::zeros(1)),
        );
        let cfg = RobustConfig::new(0.1, 2.0, 1.0, DVector::zeros(1)).unwrap();
        let r = solve_robust_surrogate(&spec, &cfg).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn worst_case_binds_at_the_worst_scenario() {
        let scen = ScenarioSet::from_masses(
            vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![2.0])],
            vec![0.6, 0.4],
        )
        .unwrap();
        let c = Constraint::affine_disturbed(
            DVector::from_vec(vec![-1.0]),
            0.0,
            DVector::from_vec(vec![-1.0]),
        );
        let spec = ProblemSpec::new(Objective::quadratic(dmatrix![1.0]).unwrap(), vec![c], scen);
        let r = solve_worst_case(&spec).unwrap();
        assert_abs_diff_eq!(r.decision[0], 2.0, epsilon = 1e-7);
    }

    #[test]
    fn violation_estimate_approximates_the_tail() {
        // g = xi - z with xi uniform on [0, 1]: P[violation] = 1 - z
        let c = Constraint::affine_disturbed(
            DVector::from_vec(vec![-1.0]),
            0.0,
            DVector::from_vec(vec![-1.0]),
        );
        let sampler = DisturbanceSampler::UniformBox {
            lower: DVector::from_vec(vec![0.0]),
            upper: DVector::from_vec(vec![1.0]),
        };
        let z = DVector::from_vec(vec![0.7]);
        let est = estimate_violation_probability(&[c], &z, &sampler, 20_000, 7).unwrap();
        assert!((est.p_hat - 0.3).abs() < 0.02, "p_hat {}", est.p_hat);
        assert!(est.half_width < 0.01);
    }

    #[test]
    fn reduction_keeps_the_probable_core() {
        let scen = ScenarioSet::from_masses(
            vec![
                DVector::from_vec(vec![0.0]),
                DVector::from_vec(vec![1.0]),
                DVector::from_vec(vec![2.0]),
                DVector::from_vec(vec![3.0]),
            ],
            vec![0.5, 0.4, 0.05, 0.05],
        )
        .unwrap();
        let kept = retain_most_likely(&scen, 0.1).unwrap();
        assert_eq!(kept, vec![0, 1]);
        let restricted = scen.restrict(&kept).unwrap();
        assert_abs_diff_eq!(restricted.weight(0), 0.5 / 0.9, epsilon = 1e-12);
    }
}
