//! Waypoint navigation with a mid-flight payload pickup.
//!
//! A quadrotor flies from six meters south of a gate through three timed
//! waypoints to a tight terminal box, under hard corridor and attitude
//! limits and a small input box. At a known step it picks up a payload of
//! uncertain mass: momentum conservation knocks the velocity down by
//! m/(m+dm) on attachment, and thrust and torque respond more weakly from
//! then on. Inputs and states before the pickup are shared across the
//! scenarios; from the pickup on both branch per payload.
//!
//! The robust mode drops the least likely payloads up to the probability
//! budget `delta` and enforces everything on the rest. The resilient mode
//! keeps all payloads and buys terminal and input violations at a
//! quadratic cost, so the heavy, unlikely payloads show up as slack
//! instead of infeasibility.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;

use super::{slack_table, timed, ExperimentMode, ExperimentOutput, ExperimentResult};
use crate::duality::{slacked_indices, SlackMap, SolveReport};
use crate::error::{Error, Result};
use crate::lqr::{
    lower_to_problem_spec, BoxSet, BranchVariant, LoweredTrajectory, LqrProblem,
    ScenarioBranching, SlackFlags, Waypoint,
};
use crate::problem::ProblemSpec;
use crate::quadrotor::{QuadrotorModel, QuadrotorParams, NUM_STATES};
use crate::resilient::{self, ViolationCost};
use crate::robust::retain_most_likely;
use crate::scenario::ScenarioSet;

#[derive(Debug, Clone)]
pub struct NavigationParams {
    pub sample_time: f64,
    pub horizon: usize,
    /// Step at which the payload attaches; states branch from here on.
    pub pickup_step: usize,
    /// Possible payload masses with their probabilities.
    pub payloads: Vec<(f64, f64)>,
    /// Box half-width on every input channel.
    pub input_limit: f64,
    /// Hard roll and pitch limit.
    pub angle_limit: f64,
    /// Probability budget the robust mode may drop.
    pub delta: f64,
    /// Quadratic violation weight for the resilient mode.
    pub gamma: f64,
}

impl Default for NavigationParams {
    fn default() -> Self {
        Self {
            sample_time: 0.4,
            horizon: 15,
            pickup_step: 13,
            payloads: vec![(0.0, 0.5), (0.1, 0.4), (1.0, 0.05), (10.0, 0.05)],
            input_limit: 0.005,
            angle_limit: PI / 9.0,
            delta: 0.1,
            gamma: 8000.0,
        }
    }
}

/// Trajectory problem and payload branching for the given parameters.
pub fn navigation_problem(p: &NavigationParams) -> Result<(LqrProblem, ScenarioBranching)> {
    let nominal = QuadrotorModel::new(QuadrotorParams::with_sample_time(p.sample_time))?;
    let nx = NUM_STATES;

    let mut x0 = DVector::zeros(nx);
    x0[1] = -6.0;
    x0[5] = FRAC_PI_2;

    let mut lqr = LqrProblem::new(
        nominal.a.clone(),
        nominal.b.clone(),
        nalgebra::DMatrix::identity(nx, nx),
        nalgebra::DMatrix::identity(4, 4),
        x0,
        p.horizon,
    );
    lqr.w = nominal.w.clone();
    lqr.disturbance = DVector::zeros(nominal.w.ncols());
    lqr.terminal_cost = Some(crate::lqr::solve_dare(&lqr.a, &lqr.b, &lqr.q, &lqr.r)?);

    let inf = f64::INFINITY;
    let finite = |lo: f64, hi: f64| (lo, hi);
    // corridor and attitude limits during flight
    let mut lo = DVector::from_element(nx, -inf);
    let mut hi = DVector::from_element(nx, inf);
    for (c, (l, h)) in [
        (0, finite(-1.0, 1.0)),
        (1, finite(-7.0, 1.0)),
        (2, finite(-1.0, 1.0)),
        (3, finite(-p.angle_limit, p.angle_limit)),
        (4, finite(-p.angle_limit, p.angle_limit)),
        (5, finite(-PI, PI)),
    ] {
        lo[c] = l;
        hi[c] = h;
    }
    lqr.state_bounds = Some(BoxSet::new(lo, hi)?);

    lqr.input_bounds = Some(BoxSet::symmetric_on(4, &[0, 1, 2, 3], p.input_limit));

    // timed gates on the approach axis
    for (step, center) in [(5usize, -4.2), (10, -1.5), (13, -0.5)] {
        if step <= p.horizon {
            let mut wlo = DVector::from_element(nx, -inf);
            let mut whi = DVector::from_element(nx, inf);
            wlo[1] = center - 0.1;
            whi[1] = center + 0.1;
            lqr.waypoints.push(Waypoint { step, set: BoxSet::new(wlo, whi)? });
        }
    }

    // tight arrival box with a low-speed requirement; attitude limits carry
    // over since the flight corridor no longer applies at the last step
    let mut tlo = DVector::from_element(nx, -inf);
    let mut thi = DVector::from_element(nx, inf);
    for (c, (l, h)) in [
        (0, finite(-0.1, 1.0)),
        (1, finite(-0.1, 0.5)),
        (2, finite(-0.1, 0.1)),
        (3, finite(-p.angle_limit, p.angle_limit)),
        (4, finite(-p.angle_limit, p.angle_limit)),
        (5, finite(-PI, PI)),
        (6, finite(-0.1, 0.1)),
        (7, finite(-0.1, 0.1)),
        (8, finite(-0.1, 0.1)),
        (9, finite(-0.1, 0.1)),
        (10, finite(-0.1, 0.1)),
        (11, finite(-0.1, 0.1)),
    ] {
        tlo[c] = l;
        thi[c] = h;
    }
    lqr.terminal_set = Some(BoxSet::new(tlo, thi)?);

    lqr.slack = SlackFlags {
        input: true,
        state: false,
        waypoint: false,
        terminal: true,
    };

    let variants = p
        .payloads
        .iter()
        .map(|&(mass, prob)| {
            let m = nominal.with_payload(mass)?;
            // the pickup conserves linear momentum: velocities scale by
            // m/(m+dm) on attachment while position and attitude carry over
            let scale = nominal.params.m / (nominal.params.m + mass);
            let mut jump = nalgebra::DMatrix::identity(nx, nx);
            for c in 6..9 {
                jump[(c, c)] = scale;
            }
            Ok(BranchVariant {
                label: mass,
                weight: prob,
                a: m.a,
                b: m.b,
                w: m.w,
                jump: Some(jump),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok((
        lqr,
        ScenarioBranching {
            branch_step: p.pickup_step,
            variants,
        },
    ))
}

pub fn run_navigation(mode: ExperimentMode, p: &NavigationParams) -> Result<ExperimentOutput> {
    let (lqr, full_branching) = navigation_problem(p)?;
    let full = lower_to_problem_spec(&lqr, Some(&full_branching))?;

    let ((report, solved, u_full), runtime_ms) = match mode {
        ExperimentMode::Robust => {
            let (out, ms) = timed(|| robust_solve(&lqr, &full_branching, &full, p.delta));
            (out?, ms)
        }
        ExperimentMode::Resilient => {
            let (out, ms) = timed(|| {
                let dim = slacked_indices(&full.spec).len();
                let cost = ViolationCost::scaled_identity(dim, p.gamma)?;
                let report = resilient::solve_resilient_joint(&full.spec, &cost)?;
                let u = report.decision_vector();
                Ok::<_, Error>((report, None, u))
            });
            (out?, ms)
        }
    };
    let solved_lowered = solved.as_ref().unwrap_or(&full);

    let labels: Vec<String> = solved_lowered.labels.iter().map(|l| l.to_string()).collect();
    let table = slack_table(&solved_lowered.spec, &labels, &report);

    // exact violated probability mass against the full payload set
    let violation = if report.status.is_converged() {
        Some(violated_mass(&full.spec, &u_full)?)
    } else {
        None
    };

    // branched trajectories under each payload
    let mut trace = Vec::new();
    for (j, &(mass, _)) in p.payloads.iter().enumerate() {
        for k in 0..=p.horizon {
            let x = full.layout.state(j, k, &u_full);
            let mut row = Vec::with_capacity(2 + NUM_STATES);
            row.push(mass);
            row.push(k as f64);
            row.extend(x.iter());
            trace.push(row);
        }
    }
    let mut header: Vec<String> = vec!["payload".into(), "step".into()];
    for name in ["x", "y", "z", "roll", "pitch", "yaw", "vx", "vy", "vz", "p", "q", "r"] {
        header.push(name.into());
    }

    Ok(ExperimentOutput {
        result: ExperimentResult {
            experiment: "navigation".into(),
            mode,
            status: report.status,
            decision: report.decision.clone(),
            objective_value: report.value,
            penalty: report.penalty,
            violation_probability: violation,
            violation_half_width: None,
            violation_samples: None,
            slack_table: table,
            runtime_ms,
        },
        trace_header: header,
        trace,
    })
}

fn robust_solve(
    lqr: &LqrProblem,
    full_branching: &ScenarioBranching,
    full: &LoweredTrajectory,
    delta: f64,
) -> Result<(SolveReport, Option<LoweredTrajectory>, DVector<f64>)> {
    let masses = ScenarioSet::from_masses(
        full_branching.variants.iter().map(|v| DVector::from_vec(vec![v.label])).collect(),
        full_branching.variants.iter().map(|v| v.weight).collect(),
    )?;
    let kept = retain_most_likely(&masses, delta)?;
    let kept_mass: f64 = kept.iter().map(|&j| full_branching.variants[j].weight).sum();
    let kept_labels: Vec<f64> = kept.iter().map(|&j| full_branching.variants[j].label).collect();
    let variants = kept
        .iter()
        .map(|&j| {
            let mut v = full_branching.variants[j].clone();
            v.weight /= kept_mass;
            v
        })
        .collect();
    let reduced = ScenarioBranching {
        branch_step: full_branching.branch_step,
        variants,
    };
    let lowered = lower_to_problem_spec(lqr, Some(&reduced))?;
    let zeros = SlackMap::zeros(lowered.spec.num_constraints(), lowered.spec.num_scenarios());
    let report = resilient::solve_pre_fixed_slack(&lowered.spec, &zeros)?;

    // express the reduced plan in the full branching's input layout: shared
    // steps copy over, and a dropped payload flies the branch planned for
    // the nearest retained mass, since the controller has no branch of its
    // own for it
    let u_red = report.decision_vector();
    let rl = &lowered.layout;
    let fl = &full.layout;
    let mut u_full = DVector::zeros(fl.num_decision_vars());
    for k in 0..fl.shared_steps {
        for i in 0..fl.nu {
            u_full[fl.u_index(0, k, i)] = u_red[rl.u_index(0, k, i)];
        }
    }
    for (jf, v) in full_branching.variants.iter().enumerate() {
        let jr = kept_labels
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                (*a - v.label).abs().partial_cmp(&(*b - v.label).abs()).unwrap()
            })
            .map(|(idx, _)| idx)
            .unwrap();
        for k in fl.shared_steps..fl.horizon {
            for i in 0..fl.nu {
                u_full[fl.u_index(jf, k, i)] = u_red[rl.u_index(jr, k, i)];
            }
        }
    }
    Ok((report, Some(lowered), u_full))
}

/// Probability mass of scenarios with any constraint violated beyond 1e-6.
fn violated_mass(spec: &ProblemSpec, z: &DVector<f64>) -> Result<f64> {
    let mut mass = 0.0;
    for j in 0..spec.num_scenarios() {
        let mut violated = false;
        for i in 0..spec.num_constraints() {
            if let Some(g) = spec.constraint_value(i, j, z)? {
                if g > 1e-6 {
                    violated = true;
                    break;
                }
            }
        }
        if violated {
            mass += spec.scenarios.weight(j);
        }
    }
    Ok(mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqr::RowKind;

    #[test]
    fn problem_shapes_line_up() {
        let p = NavigationParams::default();
        let (lqr, branching) = navigation_problem(&p).unwrap();
        lqr.validate().unwrap();
        branching.validate(&lqr).unwrap();
        let lowered = lower_to_problem_spec(&lqr, Some(&branching)).unwrap();
        assert_eq!(lowered.spec.num_scenarios(), 4);
        assert_eq!(lowered.labels.len(), lowered.spec.num_constraints());
        // inputs and terminal rows are slacked, corridor and waypoints hard
        for (c, l) in lowered.spec.constraints.iter().zip(&lowered.labels) {
            let expect = matches!(l.kind, RowKind::Input | RowKind::Terminal);
            assert_eq!(c.slack_allowed(), expect, "row {l}");
        }
        // terminal rows branch: tabulated at every scenario
        let terminal = lowered
            .labels
            .iter()
            .zip(&lowered.spec.constraints)
            .find(|(l, _)| l.kind == RowKind::Terminal)
            .unwrap()
            .1;
        for j in 0..4 {
            assert!(terminal.active_at(j));
        }
    }

    #[test]
    fn robust_mode_keeps_the_two_likely_payloads() {
        let p = NavigationParams::default();
        let out = run_navigation(ExperimentMode::Robust, &p).unwrap();
        assert!(out.result.status.is_converged(), "status {:?}", out.result.status);
        // slack table covers two scenarios only
        let max_scen = out.result.slack_table.iter().map(|r| r.scenario).max().unwrap();
        assert_eq!(max_scen, 1);
        // hard solve carries no slack anywhere
        assert!(out.result.slack_table.iter().all(|r| r.slack == 0.0));
    }
}
