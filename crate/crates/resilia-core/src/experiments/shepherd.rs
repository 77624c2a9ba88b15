//! Herding case study in the plane.
//!
//! A shepherd picks a standing position `z` near a gate at `target` while
//! keeping a flock grazing at an uncertain position `xi`, uniform over a
//! disc of radius `field_radius`, within herding range: the coverage
//! constraint is `||z - xi||^2 <= range^2` with
//! `range = field_radius * sqrt(coverage_fraction)`.
//!
//! The robust baseline enforces coverage for every flock position of
//! probability mass `1 - delta`, i.e. for the concentric sub-disc of radius
//! `field_radius * sqrt(1 - delta)`; the constraint then reduces to a ball
//! around the field center. The resilient mode discretizes the disc into a
//! ring grid and buys coverage violations at the quadratic cost
//! `flock_weight * s^2` per cell.

use nalgebra::{DMatrix, DVector};

use super::{slack_table, timed, ExperimentMode, ExperimentOutput, ExperimentResult};
use crate::duality::{SlackMap, SolveStatus};
use crate::error::Result;
use crate::problem::{Constraint, Objective, ProblemSpec};
use crate::resilient::{self, ViolationCost};
use crate::robust::estimate_violation_probability;
use crate::sampler::DisturbanceSampler;
use crate::scenario::ScenarioSet;

#[derive(Debug, Clone)]
pub struct ShepherdParams {
    pub field_radius: f64,
    pub target: [f64; 2],
    /// Fraction of the field diameter the herding range covers:
    /// `range = field_radius * sqrt(coverage_fraction)`.
    pub coverage_fraction: f64,
    /// Probability mass the robust baseline may leave uncovered.
    pub delta: f64,
    /// Quadratic weight on the coverage shortfall, which is measured in
    /// squared-distance units; scales with the flock size.
    pub flock_weight: f64,
    pub rings: usize,
    pub sectors: usize,
    pub samples: usize,
    pub seed: u64,
}

impl Default for ShepherdParams {
    fn default() -> Self {
        Self {
            field_radius: 5.0,
            target: [6.0, 0.0],
            coverage_fraction: 0.9,
            delta: 0.2,
            flock_weight: 0.5,
            rings: 8,
            sectors: 25,
            samples: 100_000,
            seed: 7,
        }
    }
}

impl ShepherdParams {
    pub fn range(&self) -> f64 {
        self.field_radius * self.coverage_fraction.sqrt()
    }

    fn target_vector(&self) -> DVector<f64> {
        DVector::from_vec(self.target.to_vec())
    }

    /// Coarse bound on how fast the coverage margin moves with the flock
    /// position over the relevant region.
    fn coverage_lipschitz(&self) -> f64 {
        let target_dist = (self.target[0].powi(2) + self.target[1].powi(2)).sqrt();
        2.0 * (self.field_radius + target_dist + self.range())
    }
}

/// Area-centroid ring grid over the disc; weights are exact cell
/// probabilities and densities the uniform density.
pub fn disc_grid(radius: f64, rings: usize, sectors: usize) -> Result<ScenarioSet> {
    let density = 1.0 / (std::f64::consts::PI * radius * radius);
    let mut points = Vec::with_capacity(rings * sectors);
    let mut weights = Vec::with_capacity(rings * sectors);
    let mut densities = Vec::with_capacity(rings * sectors);
    for i in 0..rings {
        let r_in = radius * i as f64 / rings as f64;
        let r_out = radius * (i + 1) as f64 / rings as f64;
        let r_c = 2.0 / 3.0 * (r_out.powi(3) - r_in.powi(3)) / (r_out.powi(2) - r_in.powi(2));
        let cell_weight = (r_out.powi(2) - r_in.powi(2)) / (radius * radius * sectors as f64);
        for k in 0..sectors {
            let theta = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / sectors as f64;
            points.push(DVector::from_vec(vec![r_c * theta.cos(), r_c * theta.sin()]));
            weights.push(cell_weight);
            densities.push(density);
        }
    }
    ScenarioSet::new(points, weights, densities)
}

/// Slack-coupled herding problem over the ring grid.
pub fn coverage_spec(p: &ShepherdParams) -> Result<ProblemSpec> {
    let objective = Objective::squared_distance(&p.target_vector());
    let range_sq = p.range() * p.range();
    let coverage = Constraint::ball_tracking(
        DMatrix::identity(2, 2),
        range_sq,
        p.coverage_lipschitz(),
    );
    let scenarios = disc_grid(p.field_radius, p.rings, p.sectors)?;
    Ok(ProblemSpec::new(objective, vec![coverage], scenarios))
}

pub fn run_shepherd(mode: ExperimentMode, p: &ShepherdParams) -> Result<ExperimentOutput> {
    let ((report, spec), runtime_ms) = match mode {
        ExperimentMode::Robust => {
            let (out, ms) = timed(|| robust_solve(p));
            (out?, ms)
        }
        ExperimentMode::Resilient => {
            let (out, ms) = timed(|| {
                let spec = coverage_spec(p)?;
                let cost = ViolationCost::scaled_identity(1, p.flock_weight)?;
                let report = resilient::solve_resilient_joint(&spec, &cost)?;
                Ok::<_, crate::error::Error>((report, spec))
            });
            (out?, ms)
        }
    };

    let z = report.decision_vector();
    let (violation, half_width) = if report.status == SolveStatus::Infeasible {
        (None, None)
    } else {
        let true_coverage = Constraint::ball_tracking(
            DMatrix::identity(2, 2),
            p.range() * p.range(),
            p.coverage_lipschitz(),
        );
        let sampler = DisturbanceSampler::UniformDisc { radius: p.field_radius };
        let est = estimate_violation_probability(&[true_coverage], &z, &sampler, p.samples, p.seed)?;
        (Some(est.p_hat), Some(est.half_width))
    };

    let labels = vec!["coverage".to_string()];
    let table = slack_table(&spec, &labels, &report);

    // trace: one row per grid cell with its local multiplier and slack
    let mut trace = Vec::new();
    for j in 0..spec.num_scenarios() {
        let xi = spec.scenarios.point(j);
        trace.push(vec![
            j as f64,
            xi[0],
            xi[1],
            spec.scenarios.weight(j),
            report.duals.get(0, j),
            report.slacks.get(0, j),
        ]);
    }

    Ok(ExperimentOutput {
        result: ExperimentResult {
            experiment: "shepherd".into(),
            mode,
            status: report.status,
            decision: report.decision.clone(),
            objective_value: report.value,
            penalty: report.penalty,
            violation_probability: violation,
            violation_half_width: half_width,
            violation_samples: Some(p.samples),
            slack_table: table,
            runtime_ms,
        },
        trace_header: ["cell", "xi_x", "xi_y", "weight", "lambda", "slack"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        trace,
    })
}

fn robust_solve(p: &ShepherdParams) -> Result<(crate::duality::SolveReport, ProblemSpec)> {
    // covering the sub-disc of radius rho from one point means standing
    // within range - rho of its center; a negative margin leaves nothing
    let rho = p.field_radius * (1.0 - p.delta).sqrt();
    let effective = p.range() - rho;
    let center = DVector::zeros(2);
    let ball = Constraint::ball_fixed(
        DMatrix::identity(2, 2),
        center.clone(),
        effective * effective.abs(),
    )
    .with_slack(false);
    let spec = ProblemSpec::new(
        Objective::squared_distance(&p.target_vector()),
        vec![ball],
        ScenarioSet::singleton(center),
    );
    if effective <= 0.0 {
        return Ok((resilient::infeasible_report(&spec, 0), spec));
    }
    let report = resilient::solve_pre_fixed_slack(&spec, &SlackMap::zeros(1, 1))?;
    Ok((report, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_weights_sum_to_one() {
        let g = disc_grid(5.0, 8, 25).unwrap();
        let total: f64 = (0..g.len()).map(|j| g.weight(j)).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        // all cells inside the disc
        for j in 0..g.len() {
            assert!(g.point(j).norm() < 5.0);
        }
    }

    #[test]
    fn robust_stand_point_sits_on_the_reduced_ball() {
        let p = ShepherdParams::default();
        let out = run_shepherd(ExperimentMode::Robust, &p).unwrap();
        assert_eq!(out.result.status, SolveStatus::Converged);
        let effective = p.range() - p.field_radius * (1.0 - p.delta).sqrt();
        // closest point of the ball to the target lies on the x axis
        assert_abs_diff_eq!(out.result.decision[0], effective, epsilon = 1e-6);
        assert_abs_diff_eq!(out.result.decision[1], 0.0, epsilon = 1e-6);
        let v = out.result.violation_probability.unwrap();
        assert!(v <= p.delta, "robust violation {v} exceeds the budget");
    }

    #[test]
    fn full_coverage_demand_is_infeasible_for_the_robust_baseline() {
        let p = ShepherdParams {
            delta: 0.0,
            coverage_fraction: 0.5,
            ..ShepherdParams::default()
        };
        let out = run_shepherd(ExperimentMode::Robust, &p).unwrap();
        assert_eq!(out.result.status, SolveStatus::Infeasible);
    }

    #[test]
    fn resilient_moves_toward_the_gate_and_pays_in_coverage() {
        let p = ShepherdParams {
            samples: 20_000,
            ..ShepherdParams::default()
        };
        let robust = run_shepherd(ExperimentMode::Robust, &p).unwrap();
        let resilient = run_shepherd(ExperimentMode::Resilient, &p).unwrap();
        assert_eq!(resilient.result.status, SolveStatus::Converged);
        // strictly closer to the gate
        let d = |r: &ExperimentResult| {
            ((r.decision[0] - p.target[0]).powi(2) + (r.decision[1] - p.target[1]).powi(2)).sqrt()
        };
        assert!(
            d(&resilient.result) < d(&robust.result) - 1e-3,
            "resilient stand {:?} is no closer than robust stand {:?}",
            resilient.result.decision,
            robust.result.decision
        );
        // and strictly more likely to lose a sheep
        assert!(
            resilient.result.violation_probability.unwrap()
                > robust.result.violation_probability.unwrap()
        );
        // slack activates somewhere on the far side of the field
        assert!(resilient.result.slack_table.iter().any(|r| r.slack > 1e-4));
    }
}
