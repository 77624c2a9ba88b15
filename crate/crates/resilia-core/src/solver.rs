//! Dense primal-dual interior-point engine.
//!
//! Solves `min 1/2 x'Hx + q'x  s.t.  c_k(x) <= 0` with `c_k` affine or
//! convex quadratic, to high accuracy on the small dense programs produced by
//! the rest of the crate. Three ingredients matter for how it is used here:
//!
//! * **Equality presolve.** Upstream lowerings encode equalities (dynamics)
//!   as paired inequalities `a'x <= b`, `-a'x <= -b`. Such pairs have no
//!   strict interior, which would defeat any barrier, so exact negation
//!   pairs are detected bitwise and merged into equality rows handled
//!   natively by the KKT system. The equality multiplier is split back onto
//!   the original pair as its positive and negative parts, so callers see
//!   duals for the rows they wrote.
//!
//! * **Phase one.** When no strictly feasible start is known, an auxiliary
//!   program `min t  s.t.  c_k(x) <= t` is solved first; it terminates early
//!   as soon as an interior point is found and certifies infeasibility when
//!   the optimal `t` is nonnegative.
//!
//! * **Accuracy.** Termination demands per-row complementarity, not just an
//!   aggregate surrogate gap, because downstream checks bound
//!   `max |lambda_k c_k|` directly.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// One inequality `c(x) <= 0`.
#[derive(Debug, Clone)]
pub(crate) enum Ineq {
    /// `a'x - b <= 0`
    Affine { a: DVector<f64>, b: f64 },
    /// `||sel x - center||^2 + a'x - b <= 0`; plain balls have `a = 0`,
    /// `b = radius_sq`. The linear part exists for the phase-one lift.
    Quad {
        sel: DMatrix<f64>,
        center: DVector<f64>,
        a: DVector<f64>,
        b: f64,
    },
}

impl Ineq {
    #[cfg(test)]
    pub(crate) fn ball(sel: DMatrix<f64>, center: DVector<f64>, r2: f64) -> Self {
        let n = sel.ncols();
        Ineq::Quad {
            sel,
            center,
            a: DVector::zeros(n),
            b: r2,
        }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        match self {
            Ineq::Affine { a, b } => a.dot(x) - b,
            Ineq::Quad { sel, center, a, b } => {
                let r = sel * x - center;
                r.dot(&r) + a.dot(x) - b
            }
        }
    }

    fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Ineq::Affine { a, .. } => a.clone(),
            Ineq::Quad { sel, center, a, .. } => {
                let r = sel * x - center;
                2.0 * sel.transpose() * r + a
            }
        }
    }

    fn curvature(&self) -> Option<DMatrix<f64>> {
        match self {
            Ineq::Affine { .. } => None,
            Ineq::Quad { sel, .. } => Some(2.0 * sel.transpose() * sel),
        }
    }

    /// Coefficient of `alpha^2` in `c(x + alpha d)`.
    fn step_curvature(&self, d: &DVector<f64>) -> f64 {
        match self {
            Ineq::Affine { .. } => 0.0,
            Ineq::Quad { sel, .. } => (sel * d).norm_squared(),
        }
    }

    /// Lifts the row into `(x, t)` space as `c(x) - t <= 0`.
    fn lift(&self) -> Ineq {
        match self {
            Ineq::Affine { a, b } => {
                let mut ext = DVector::zeros(a.len() + 1);
                ext.rows_mut(0, a.len()).copy_from(a);
                ext[a.len()] = -1.0;
                Ineq::Affine { a: ext, b: *b }
            }
            Ineq::Quad { sel, center, a, b } => {
                let mut sel_ext = DMatrix::zeros(sel.nrows(), sel.ncols() + 1);
                sel_ext.columns_mut(0, sel.ncols()).copy_from(sel);
                let mut a_ext = DVector::zeros(a.len() + 1);
                a_ext.rows_mut(0, a.len()).copy_from(a);
                a_ext[a.len()] = -1.0;
                Ineq::Quad {
                    sel: sel_ext,
                    center: center.clone(),
                    a: a_ext,
                    b: *b,
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvexProgram {
    /// Hessian of the objective (`1/2 x'Hx + lin'x + offset`).
    pub hess: DMatrix<f64>,
    pub lin: DVector<f64>,
    pub offset: f64,
    pub ineqs: Vec<Ineq>,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmOptions {
    pub max_iter: usize,
    /// Per-row complementarity target `max_k |lambda_k c_k|`.
    pub comp_tol: f64,
    /// Residual target for stationarity and equality feasibility.
    pub res_tol: f64,
    pub warm_start: Option<DVector<f64>>,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            comp_tol: 1e-10,
            res_tol: 1e-10,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Converged,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmResult {
    pub x: DVector<f64>,
    /// Multipliers for the original inequality list (merged pairs included).
    pub lambda: Vec<f64>,
    pub status: IpmStatus,
    pub iterations: usize,
    pub value: f64,
}

/// Exact-negation pairs among affine rows, found bitwise. `-0.0` is
/// normalized so a zero coefficient matches its negation.
fn find_equality_pairs(ineqs: &[Ineq]) -> (Vec<usize>, Vec<(usize, usize)>) {
    use std::collections::HashMap;

    fn key(a: &DVector<f64>, b: f64, negate: bool) -> Vec<u64> {
        let sgn = if negate { -1.0 } else { 1.0 };
        let mut k: Vec<u64> = Vec::with_capacity(a.len() + 1);
        for &v in a.iter().chain(std::iter::once(&b)) {
            let w = sgn * v;
            let w = if w == 0.0 { 0.0 } else { w };
            k.push(w.to_bits());
        }
        k
    }

    let mut open: HashMap<Vec<u64>, Vec<usize>> = HashMap::new();
    let mut pairs = Vec::new();
    let mut merged = vec![false; ineqs.len()];
    for (i, q) in ineqs.iter().enumerate() {
        let Ineq::Affine { a, b } = q else { continue };
        // does an earlier row equal our negation?
        if let Some(list) = open.get_mut(&key(a, *b, true)) {
            if let Some(prev) = list.pop() {
                pairs.push((prev, i));
                merged[prev] = true;
                merged[i] = true;
                continue;
            }
        }
        open.entry(key(a, *b, false)).or_default().push(i);
    }
    let kept = (0..ineqs.len()).filter(|&i| !merged[i]).collect();
    (kept, pairs)
}

struct KktSystem {
    n: usize,
    eq_a: DMatrix<f64>,
    eq_b: DVector<f64>,
}

impl KktSystem {
    /// Factors `[[m, E'], [E, 0]]` once for reuse across several right-hand sides.
    fn factor(&self, m: &DMatrix<f64>) -> FactoredKkt {
        let n = self.n;
        let ne = self.eq_a.nrows();
        let dim = n + ne;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(m);
        if ne > 0 {
            kkt.view_mut((n, 0), (ne, n)).copy_from(&self.eq_a);
            kkt.view_mut((0, n), (n, ne)).copy_from(&self.eq_a.transpose());
        }
        // symmetric equilibration tames the enormous dynamic range the
        // barrier term induces near convergence, keeping the factorization
        // and the residual correction meaningful
        let mut d = DVector::from_element(dim, 1.0);
        for _ in 0..2 {
            let mut f = DVector::from_element(dim, 1.0);
            for i in 0..dim {
                let r = kkt.row(i).amax();
                if r.is_finite() && r > 0.0 {
                    f[i] = 1.0 / r.sqrt();
                }
            }
            for i in 0..dim {
                for j in 0..dim {
                    kkt[(i, j)] *= f[i] * f[j];
                }
            }
            d.component_mul_assign(&f);
        }
        FactoredKkt {
            lu: kkt.clone().lu(),
            mat: kkt,
            d,
            n,
            ne,
        }
    }

    /// Solves `[[m, E'], [E, 0]] [dx; dnu] = [r1; r2]`.
    fn solve(&self, m: &DMatrix<f64>, r1: &DVector<f64>, r2: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        self.factor(m).solve(r1, r2)
    }
}

struct FactoredKkt {
    mat: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    d: DVector<f64>,
    n: usize,
    ne: usize,
}

impl FactoredKkt {
    fn solve(&self, r1: &DVector<f64>, r2: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
        let mut rhs = DVector::zeros(self.n + self.ne);
        rhs.rows_mut(0, self.n).copy_from(r1);
        rhs.rows_mut(self.n, self.ne).copy_from(r2);
        rhs.component_mul_assign(&self.d);
        let mut sol = match self.lu.solve(&rhs) {
            Some(sol) => sol,
            None => self
                .mat
                .clone()
                .full_piv_lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numerical("singular KKT system".into()))?,
        };
        // residual correction on the equilibrated system claws back digits
        // the factorization loses; each round is kept only if it helps
        let scale = rhs.amax().max(1.0);
        let mut res = &rhs - &self.mat * &sol;
        for _ in 0..3 {
            let res_max = res.amax();
            if res_max <= 1e-15 * scale || res_max >= scale {
                break;
            }
            let Some(e) = self.lu.solve(&res) else { break };
            let cand = &sol + &e;
            let cand_res = &rhs - &self.mat * &cand;
            if cand_res.amax() >= res_max {
                break;
            }
            sol = cand;
            res = cand_res;
        }
        sol.component_mul_assign(&self.d);
        Ok((
            sol.rows(0, self.n).into_owned(),
            sol.rows(self.n, self.ne).into_owned(),
        ))
    }
}

struct CoreOutcome {
    x: DVector<f64>,
    lambda: Vec<f64>,
    nu: DVector<f64>,
    iterations: usize,
    converged: bool,
}

/// Primal-dual interior-point core; `x0` must satisfy every inequality
/// strictly. Equality residuals may start nonzero (infeasible-start Newton).
#[allow(clippy::too_many_arguments)]
fn pd_core(
    hess: &DMatrix<f64>,
    lin: &DVector<f64>,
    ineqs: &[Ineq],
    kkt: &KktSystem,
    x0: DVector<f64>,
    opts: &IpmOptions,
    // early exit once the final coordinate drops below the threshold
    t_stop: Option<f64>,
) -> Result<CoreOutcome> {
    let n = x0.len();
    let nk = ineqs.len();
    let ne = kkt.eq_a.nrows();

    let mut x = x0;
    // no inequalities: the program is an equality-constrained QP, one solve
    if nk == 0 {
        let r1 = -(hess * &x + lin + kkt.eq_a.transpose() * DVector::<f64>::zeros(ne));
        let r2 = &kkt.eq_b - &kkt.eq_a * &x;
        let (dx, nu) = kkt.solve(hess, &r1, &r2)?;
        x += dx;
        return Ok(CoreOutcome {
            x,
            lambda: vec![],
            nu,
            iterations: 1,
            converged: true,
        });
    }

    let mut lambda = DVector::from_fn(nk, |k, _| {
        let c = ineqs[k].value(&x);
        (1.0 / (-c)).clamp(1e-6, 1e6)
    });
    let mut nu = DVector::zeros(ne);

    let residuals = |x: &DVector<f64>, lambda: &DVector<f64>, nu: &DVector<f64>| {
        let mut r_dual = hess * x + lin;
        if ne > 0 {
            r_dual += kkt.eq_a.transpose() * nu;
        }
        for k in 0..nk {
            r_dual += ineqs[k].grad(x) * lambda[k];
        }
        let r_pri = if ne > 0 {
            &kkt.eq_a * x - &kkt.eq_b
        } else {
            DVector::zeros(0)
        };
        (r_dual, r_pri)
    };

    // tolerances are taken relative to the magnitudes summed into each
    // residual before cancellation, so the stopping test stays meaningful
    // when roundoff floors the achievable absolute residual on large or
    // badly scaled data
    let scales = |x: &DVector<f64>, lambda: &DVector<f64>, nu: &DVector<f64>| {
        let mut dual_scale = (hess * x).amax().max(lin.amax_checked().unwrap_or(0.0));
        if ne > 0 {
            dual_scale = dual_scale.max((kkt.eq_a.transpose() * nu).amax());
        }
        for k in 0..nk {
            dual_scale = dual_scale.max(lambda[k] * ineqs[k].grad(x).amax());
        }
        let value_scale = 0.5 * (hess * x).dot(x).abs() + lin.dot(x).abs();
        let pri_scale = if ne > 0 {
            (&kkt.eq_a * x).amax().max(kkt.eq_b.amax_checked().unwrap_or(0.0))
        } else {
            0.0
        };
        (dual_scale, value_scale, pri_scale)
    };
    // worst residual-to-tolerance ratio; the iterate is optimal when <= 1
    let merit_at = |x: &DVector<f64>,
                    lambda: &DVector<f64>,
                    nu: &DVector<f64>,
                    c: &[f64],
                    r_dual: &DVector<f64>,
                    r_pri: &DVector<f64>| {
        let (dual_scale, value_scale, pri_scale) = scales(x, lambda, nu);
        let comp_max = (0..nk).map(|k| (lambda[k] * c[k]).abs()).fold(0.0, f64::max);
        let pri_max = r_pri.amax_checked().unwrap_or(0.0);
        (r_dual.amax() / (opts.res_tol * (1.0 + dual_scale)))
            .max(pri_max / (opts.res_tol * (1.0 + pri_scale)))
            .max(comp_max / (opts.comp_tol * (1.0 + value_scale)))
    };

    let mut iterations = 0;
    let mut converged = false;
    let mut best: Option<(DVector<f64>, DVector<f64>, DVector<f64>)> = None;
    let mut best_merit = f64::INFINITY;
    let mut stall = 0usize;
    for _ in 0..opts.max_iter {
        iterations += 1;

        if let Some(th) = t_stop {
            if x[n - 1] < th {
                return Ok(CoreOutcome {
                    x,
                    lambda: lambda.iter().cloned().collect(),
                    nu,
                    iterations,
                    converged: true,
                });
            }
        }

        let c: Vec<f64> = ineqs.iter().map(|q| q.value(&x)).collect();
        let s: Vec<f64> = c.iter().map(|&ck| -ck).collect();
        let grads: Vec<DVector<f64>> = (0..nk).map(|k| ineqs[k].grad(&x)).collect();
        let mu_bar: f64 = (0..nk).map(|k| lambda[k] * s[k]).sum::<f64>() / nk as f64;
        if !mu_bar.is_finite() || mu_bar <= 0.0 {
            break; // barrier exhausted; the post-loop check decides what to report
        }

        let (r_dual, r_pri) = residuals(&x, &lambda, &nu);
        if std::env::var("RESILIA_IPM_TRACE").is_ok() {
            let (ds, vs, ps) = scales(&x, &lambda, &nu);
            eprintln!(
                "iter {iterations}: r_dual={:.3e} pri={:.3e} mu={:.3e} scales=({ds:.3e},{vs:.3e},{ps:.3e})",
                r_dual.amax(),
                r_pri.amax_checked().unwrap_or(0.0),
                mu_bar
            );
        }
        let merit = merit_at(&x, &lambda, &nu, &c, &r_dual, &r_pri);
        if merit <= 1.0 {
            converged = true;
            break;
        }
        if merit < 0.9999 * best_merit {
            best_merit = merit;
            best = Some((x.clone(), lambda.clone(), nu.clone()));
            stall = 0;
        } else {
            // a merit that no longer improves has hit its numerical floor;
            // further iterations only degrade the iterate
            stall += 1;
            if stall >= 12 {
                break;
            }
        }

        // reduced Newton matrix; a single factorization serves the predictor
        // and corrector solves
        let mut m = hess.clone();
        for k in 0..nk {
            if let Some(curv) = ineqs[k].curvature() {
                m += curv * lambda[k];
            }
            // rank-one barrier term (lambda/s) g g'
            m.ger(lambda[k] / s[k], &grads[k], &grads[k], 1.0);
        }
        let factored = kkt.factor(&m);
        let r2 = -&r_pri;

        // condensed dual rhs and multiplier recovery for a per-row
        // complementarity target tau
        let rhs_for = |tau: &DVector<f64>| {
            let mut r1 = -&r_dual;
            for k in 0..nk {
                r1 += &grads[k] * ((lambda[k] * s[k] - tau[k]) / s[k]);
            }
            r1
        };
        let dlam_for = |tau: &DVector<f64>, dx: &DVector<f64>| {
            DVector::from_fn(nk, |k, _| {
                (tau[k] - lambda[k] * s[k] + lambda[k] * grads[k].dot(dx)) / s[k]
            })
        };
        // largest multiple of d keeping every inequality satisfied, from the
        // exact affine or quadratic restriction of each row to the ray
        let primal_reach = |d: &DVector<f64>| {
            let mut a = f64::INFINITY;
            for k in 0..nk {
                let gd = grads[k].dot(d);
                let q = ineqs[k].step_curvature(d);
                let reach = if q > 0.0 {
                    (-gd + (gd * gd - 4.0 * q * c[k]).sqrt()) / (2.0 * q)
                } else if gd > 0.0 {
                    s[k] / gd
                } else {
                    f64::INFINITY
                };
                a = a.min(reach);
            }
            a
        };
        let dual_reach = |dlam: &DVector<f64>| {
            let mut a = f64::INFINITY;
            for k in 0..nk {
                if dlam[k] < 0.0 {
                    a = a.min(-lambda[k] / dlam[k]);
                }
            }
            a
        };

        // predictor: pure Newton step toward zero complementarity, used only
        // to pick the centering weight
        let zero_tau = DVector::zeros(nk);
        let (dx_aff, _) = factored.solve(&rhs_for(&zero_tau), &r2)?;
        let dlam_aff = dlam_for(&zero_tau, &dx_aff);
        let ap_aff = primal_reach(&dx_aff).min(1.0);
        let ad_aff = dual_reach(&dlam_aff).min(1.0);
        let mu_aff = (0..nk)
            .map(|k| {
                (lambda[k] + ad_aff * dlam_aff[k]) * (s[k] - ap_aff * grads[k].dot(&dx_aff))
            })
            .sum::<f64>()
            / nk as f64;
        let sigma = (mu_aff / mu_bar).clamp(0.0, 1.0).powi(3);

        // corrector: recenter and compensate the predictor's second-order slip
        let tau = DVector::from_fn(nk, |k, _| {
            sigma * mu_bar + dlam_aff[k] * grads[k].dot(&dx_aff)
        });
        let (dx, dnu) = factored.solve(&rhs_for(&tau), &r2)?;
        let dlam = dlam_for(&tau, &dx);

        let alpha_p = (0.99 * primal_reach(&dx)).min(1.0);
        let alpha_d = (0.99 * dual_reach(&dlam)).min(1.0);
        if std::env::var("RESILIA_IPM_TRACE").is_ok() {
            eprintln!(
                "  sigma={sigma:.3e} alpha_p={alpha_p:.3e} alpha_d={alpha_d:.3e} dx={:.3e}",
                dx.amax()
            );
        }
        let step_ok = alpha_p.is_finite()
            && alpha_d.is_finite()
            && dx.iter().chain(dlam.iter()).chain(dnu.iter()).all(|v| v.is_finite());
        if !step_ok || alpha_p <= 0.0 {
            break; // no usable step; the post-loop check decides what to report
        }
        x += &dx * alpha_p;
        lambda += &dlam * alpha_d;
        nu += &dnu * alpha_d;
    }

    if !converged {
        let c: Vec<f64> = ineqs.iter().map(|q| q.value(&x)).collect();
        let (r_dual, r_pri) = residuals(&x, &lambda, &nu);
        let mut merit = merit_at(&x, &lambda, &nu, &c, &r_dual, &r_pri);
        // a degraded tail must not poison the answer: fall back to the best
        // iterate seen when the last one is worse
        if let Some((bx, bl, bn)) = best {
            if best_merit < merit {
                x = bx;
                lambda = bl;
                nu = bn;
                merit = best_merit;
            }
        }
        converged = merit <= 1.0;
    }

    if !converged {
        // active-set polish: the rows the barrier pinned identify a candidate
        // optimal face, and one well-conditioned equality solve on that face
        // can finish what the barrier path cannot; every acceptance check is
        // recomputed from scratch, so a wrong guess is simply discarded
        let c: Vec<f64> = ineqs.iter().map(|q| q.value(&x)).collect();
        let mut act: Vec<usize> = Vec::new();
        let mut polishable = true;
        for k in 0..nk {
            if lambda[k] >= -c[k] {
                if matches!(&ineqs[k], Ineq::Affine { .. }) {
                    act.push(k);
                } else {
                    polishable = false;
                    break;
                }
            }
        }
        // a wrongly pinned row shows up as a negative multiplier; drop such
        // rows and re-solve, a few rounds at most
        let trace = std::env::var("RESILIA_IPM_TRACE").is_ok();
        for _round in 0..4 {
            if !polishable || act.is_empty() || converged {
                break;
            }
            let na = act.len();
            // candidate face rows, equalities first since they cannot be dropped
            let m_rows = ne + na;
            let mut ea = DMatrix::zeros(m_rows, n);
            let mut eb = DVector::zeros(m_rows);
            if ne > 0 {
                ea.view_mut((0, 0), (ne, n)).copy_from(&kkt.eq_a);
                eb.rows_mut(0, ne).copy_from(&kkt.eq_b);
            }
            for (r, &k) in act.iter().enumerate() {
                let Ineq::Affine { a, b } = &ineqs[k] else {
                    unreachable!("active set screened to affine rows")
                };
                ea.row_mut(ne + r).copy_from(&a.transpose());
                eb[ne + r] = *b;
            }
            // degenerate programs pin more rows than the face has dimensions;
            // a pivoted QR on the normalized rows picks a full-rank basis, and
            // the feasibility check below catches any inconsistent drop
            let mut unit = ea.clone();
            for r in 0..m_rows {
                let s = unit.row(r).norm();
                if s > 0.0 {
                    unit.row_mut(r).scale_mut(1.0 / s);
                }
            }
            let qr = unit.transpose().col_piv_qr();
            let diag = qr.r();
            let dmax = diag[(0, 0)].abs().max(f64::MIN_POSITIVE);
            let mut rank = 0;
            for i in 0..n.min(m_rows) {
                if diag[(i, i)].abs() > 1e-10 * dmax {
                    rank = i + 1;
                } else {
                    break;
                }
            }
            let mut order = nalgebra::RowDVector::<f64>::from_fn(m_rows, |_, j| j as f64);
            qr.p().permute_columns(&mut order);
            let kept: Vec<usize> = order.iter().take(rank).map(|&v| v as usize).collect();
            if kept.iter().filter(|&&r| r < ne).count() != ne {
                break;
            }
            let mut ea2 = DMatrix::zeros(rank, n);
            let mut eb2 = DVector::zeros(rank);
            for (pos, &r) in kept.iter().enumerate() {
                ea2.row_mut(pos).copy_from(&ea.row(r));
                eb2[pos] = eb[r];
            }
            let face = KktSystem {
                n,
                eq_a: ea2,
                eq_b: eb2,
            };
            let Ok((xp, mults)) = face.factor(hess).solve(&(-lin), &face.eq_b.clone()) else {
                if trace {
                    eprintln!("polish: face solve failed (na={na} rank={rank})");
                }
                break;
            };
            let mut lp = DVector::zeros(nk);
            let mut np = DVector::zeros(ne);
            for (pos, &r) in kept.iter().enumerate() {
                if r < ne {
                    np[r] = mults[pos];
                } else {
                    lp[act[r - ne]] = mults[pos];
                }
            }
            // clamping a multiplier perturbs the dual residual by its size,
            // so only materially negative ones force another round
            let clamp_tol = 0.01 * opts.res_tol * (1.0 + lp.amax());
            let drop: Vec<usize> = act
                .iter()
                .cloned()
                .filter(|&k| lp[k] < -clamp_tol)
                .collect();
            if !drop.is_empty() {
                if trace {
                    eprintln!(
                        "polish: dropping {} negative rows (lam_min={:.3e})",
                        drop.len(),
                        lp.iter().cloned().fold(f64::INFINITY, f64::min)
                    );
                }
                act.retain(|k| !drop.contains(k));
                continue;
            }
            let cp: Vec<f64> = ineqs.iter().map(|q| q.value(&xp)).collect();
            let feas_tol = 1e-9 * (1.0 + xp.amax());
            let feasible = cp.iter().all(|&v| v <= feas_tol);
            for v in lp.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            let (rd, rp) = residuals(&xp, &lp, &np);
            let mp = merit_at(&xp, &lp, &np, &cp, &rd, &rp);
            if trace {
                eprintln!(
                    "polish: na={na} rank={rank} feas={:.3e} merit={mp:.3e}",
                    cp.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                );
            }
            if feasible && mp <= 1.0 {
                x = xp;
                lambda = lp;
                nu = np;
                converged = true;
            }
            break;
        }
    }

    Ok(CoreOutcome {
        x,
        lambda: lambda.iter().cloned().collect(),
        nu,
        iterations,
        converged,
    })
}

trait AmaxChecked {
    fn amax_checked(&self) -> Option<f64>;
}

impl AmaxChecked for DVector<f64> {
    fn amax_checked(&self) -> Option<f64> {
        if self.is_empty() {
            None
        } else {
            Some(self.amax())
        }
    }
}

/// Solves the program. Inequality multipliers are returned for every row of
/// `prog.ineqs`, including rows that were merged into equalities.
pub(crate) fn solve(prog: &ConvexProgram, opts: &IpmOptions) -> Result<IpmResult> {
    let n = prog.lin.len();
    if prog.hess.nrows() != n || prog.hess.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "program Hessian",
            expected: n,
            got: prog.hess.nrows(),
        });
    }

    let (kept, pairs) = find_equality_pairs(&prog.ineqs);
    let ne = pairs.len();
    let mut eq_a = DMatrix::zeros(ne, n);
    let mut eq_b = DVector::zeros(ne);
    for (r, &(ip, _)) in pairs.iter().enumerate() {
        let Ineq::Affine { a, b } = &prog.ineqs[ip] else {
            unreachable!("pairs are affine by construction")
        };
        eq_a.row_mut(r).copy_from(&a.transpose());
        eq_b[r] = *b;
    }
    let kkt = KktSystem { n, eq_a, eq_b };
    let active: Vec<Ineq> = kept.iter().map(|&i| prog.ineqs[i].clone()).collect();

    // strictly feasible start: warm start, unconstrained minimizer, or zero
    let mut start = None;
    let mut candidates: Vec<DVector<f64>> = Vec::new();
    if let Some(w) = &opts.warm_start {
        candidates.push(w.clone());
    }
    if let Some(chol) = nalgebra::Cholesky::new(prog.hess.clone()) {
        candidates.push(chol.solve(&(-&prog.lin)));
    }
    candidates.push(DVector::zeros(n));
    for cand in candidates {
        if cand.len() == n && active.iter().all(|q| q.value(&cand) < -1e-6) {
            start = Some(cand);
            break;
        }
    }

    let mut phase1_iters = 0;
    let x0 = match start {
        Some(x) => x,
        None => {
            // phase one over (x, t): min t + (sigma/2)||x||^2, c_k(x) <= t
            let lifted: Vec<Ineq> = active.iter().map(|q| q.lift()).collect();
            let mut h1 = DMatrix::zeros(n + 1, n + 1);
            for i in 0..n {
                h1[(i, i)] = 1e-8;
            }
            let mut l1 = DVector::zeros(n + 1);
            l1[n] = 1.0;
            let mut eq1_a = DMatrix::zeros(ne, n + 1);
            eq1_a.view_mut((0, 0), (ne, n)).copy_from(&kkt.eq_a);
            let kkt1 = KktSystem {
                n: n + 1,
                eq_a: eq1_a,
                eq_b: kkt.eq_b.clone(),
            };
            let xb = DVector::zeros(n);
            let worst = active
                .iter()
                .map(|q| q.value(&xb))
                .fold(f64::NEG_INFINITY, f64::max);
            let mut y0 = DVector::zeros(n + 1);
            y0[n] = worst + 1.0;
            let out = pd_core(&h1, &l1, &lifted, &kkt1, y0, opts, Some(-1e-6))?;
            phase1_iters = out.iterations;
            let t_final = out.x[n];
            if t_final >= -1e-9 {
                return Ok(IpmResult {
                    x: out.x.rows(0, n).into_owned(),
                    lambda: vec![0.0; prog.ineqs.len()],
                    status: IpmStatus::Infeasible,
                    iterations: phase1_iters,
                    value: f64::INFINITY,
                });
            }
            out.x.rows(0, n).into_owned()
        }
    };

    let out = pd_core(&prog.hess, &prog.lin, &active, &kkt, x0, opts, None)?;

    let mut lambda = vec![0.0; prog.ineqs.len()];
    for (pos, &i) in kept.iter().enumerate() {
        lambda[i] = out.lambda[pos];
    }
    for (r, &(ip, im)) in pairs.iter().enumerate() {
        lambda[ip] = out.nu[r].max(0.0);
        lambda[im] = (-out.nu[r]).max(0.0);
    }

    let value = 0.5 * (&prog.hess * &out.x).dot(&out.x) + prog.lin.dot(&out.x) + prog.offset;
    Ok(IpmResult {
        x: out.x,
        lambda,
        status: if out.converged {
            IpmStatus::Converged
        } else {
            IpmStatus::MaxIterations
        },
        iterations: out.iterations + phase1_iters,
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ident(n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n)
    }

    #[test]
    fn unconstrained_quadratic() {
        let prog = ConvexProgram {
            hess: 2.0 * ident(2),
            lin: DVector::from_vec(vec![-2.0, -4.0]),
            offset: 0.0,
            ineqs: vec![],
        };
        let r = solve(&prog, &IpmOptions::default()).unwrap();
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.x[1], 2.0, epsilon = 1e-9);
    }

    #[test]
    fn active_affine_bound() {
        // min z^2 s.t. z >= 1  (written as -z <= -1)
        let prog = ConvexProgram {
            hess: 2.0 * ident(1),
            lin: DVector::zeros(1),
            offset: 0.0,
            ineqs: vec![Ineq::Affine {
                a: DVector::from_vec(vec![-1.0]),
                b: -1.0,
            }],
        };
        let r = solve(&prog, &IpmOptions::default()).unwrap();
        assert_eq!(r.status, IpmStatus::Converged);
        assert_abs_diff_eq!(r.x[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(r.lambda[0], 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(r.value, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn ball_projection() {
        // min ||z - (3,4)||^2 s.t. ||z|| <= 1: optimum on the boundary at
        // (0.6, 0.8), value 16.
        let prog = ConvexProgram {
            hess: 2.0 * ident(2),
            lin: DVector::from_vec(vec![-6.0, -8.0]),
            offset: 25.0,
            ineqs: vec![Ineq::ball(ident(2), DVector::zeros(2), 1.0)],
        };
        let r = solve(&prog, &IpmOptions::default()).unwrap();
        assert_abs_diff_eq!(r.x[0], 0.6, epsilon = 1e-7);
        assert_abs_diff_eq!(r.x[1], 0.8, epsilon = 1e-7);
        assert_abs_diff_eq!(r.value, 16.0, epsilon = 1e-6);
    }

    #[test]
    fn paired_rows_become_an_equality() {
        // min ||z||^2 s.t. z1 + z2 = 1 via the +/- pair
        let a = DVector::from_vec(vec![1.0, 1.0]);
        let prog = ConvexProgram {
            hess: 2.0 * ident(2),
            lin: DVector::zeros(2),
            offset: 0.0,
            ineqs: vec![
                Ineq::Affine { a: a.clone(), b: 1.0 },
                Ineq::Affine { a: -a, b: -1.0 },
            ],
        };
        let r = solve(&prog, &IpmOptions::default()).unwrap();
        assert_abs_diff_eq!(r.x[0], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(r.x[1], 0.5, epsilon = 1e-10);
        // exactly one side of the pair carries the multiplier
        assert!(r.lambda[0] == 0.0 || r.lambda[1] == 0.0);
        assert_abs_diff_eq!(r.lambda[0] - r.lambda[1], -1.0, epsilon = 1e-8);
    }

    #[test]
    fn phase_one_detects_infeasibility() {
        // z <= -1 and z >= 1 cannot hold together
        let prog = ConvexProgram {
            hess: 2.0 * ident(1),
            lin: DVector::zeros(1),
            offset: 0.0,
            ineqs: vec![
                Ineq::Affine {
                    a: DVector::from_vec(vec![1.0]),
                    b: -1.0,
                },
                Ineq::Affine {
                    a: DVector::from_vec(vec![-1.0]),
                    b: -1.0,
                },
            ],
        };
        let r = solve(&prog, &IpmOptions::default()).unwrap();
        assert_eq!(r.status, IpmStatus::Infeasible);
    }

    #[test]
    fn phase_one_finds_a_remote_interior() {
        // feasible set far from the origin so every default start fails
        let prog = ConvexProgram {
            hess: 2.0 * ident(1),
            lin: DVector::zeros(1),
            offset: 0.0,
            ineqs: vec![Ineq::Affine {
                a: DVector::from_vec(vec![-1.0]),
                b: -50.0,
            }],
        };
        let r = solve(&prog, &IpmOptions::default()).unwrap();
        assert_eq!(r.status, IpmStatus::Converged);
        assert_abs_diff_eq!(r.x[0], 50.0, epsilon = 1e-7);
    }

    #[test]
    fn high_accuracy_complementarity() {
        let prog = ConvexProgram {
            hess: 2.0 * ident(1),
            lin: DVector::zeros(1),
            offset: 0.0,
            ineqs: vec![
                Ineq::Affine {
                    a: DVector::from_vec(vec![-1.0]),
                    b: -1.0,
                },
                Ineq::Affine {
                    a: DVector::from_vec(vec![1.0]),
                    b: 5.0,
                },
            ],
        };
        let r = solve(&prog, &IpmOptions::default()).unwrap();
        // inactive row: tiny multiplier; active row: |lambda c| tiny
        let c0 = r.x[0] - 5.0; // inactive, -4
        assert!((r.lambda[1] * c0).abs() <= 1e-9);
        let c1 = 1.0 - r.x[0];
        assert!((r.lambda[0] * c1).abs() <= 1e-9);
    }
}
