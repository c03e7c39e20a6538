//! Bounded trust-region Gauss–Newton for `min ½‖r(x)‖²`, `l ≤ x ≤ u`.
//!
//! Variables sitting on a bound whose descent direction points outward are
//! frozen for the iteration. The dogleg step on the remaining variables is
//! truncated at the first bound it crosses; the remainder is reflected off that
//! bound. The truncated, reflected and projected candidates are compared on
//! the quadratic model and the cheapest one is tried.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TrSettings {
    pub gtol: f64,
    pub xtol: f64,
    pub max_iterations: usize,
    pub initial_radius: f64,
    pub expand: f64,
    pub shrink: f64,
    pub accept: f64,
}

impl Default for TrSettings {
    fn default() -> Self {
        TrSettings {
            gtol: 1e-8,
            xtol: 1e-12,
            max_iterations: 500,
            initial_radius: 1.0,
            expand: 2.0,
            shrink: 0.25,
            accept: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum StopReason {
    Gradient,
    StepSize,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TrIteration {
    pub iteration: usize,
    /// `‖r‖₂` at the accepted iterate.
    pub residual_norm: f64,
    pub radius: f64,
    pub step_norm: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct TrOutcome {
    pub x: DVector<f64>,
    pub residual: DVector<f64>,
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
    pub reason: StopReason,
    pub trace: Vec<TrIteration>,
}

/// Residual and its Jacobian at `x`; an `Err` marks the point as infeasible.
pub(crate) trait LeastSquares {
    fn residual(&self, x: &DVector<f64>) -> Result<DVector<f64>, String>;
    fn residual_and_jacobian(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>), String>;
}

fn projected_gradient(x: &DVector<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        if (x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0) {
            0.0
        } else {
            g[i]
        }
    })
}

/// Dogleg step for `min ‖r + J p‖` with `‖p‖ ≤ radius`.
fn dogleg(j: &DMatrix<f64>, r: &DVector<f64>, g: &DVector<f64>, radius: f64) -> DVector<f64> {
    let n = j.ncols();
    let svd = j.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let eps = smax * (j.nrows().max(n) as f64) * f64::EPSILON;
    let gn = svd.solve(&(-r), eps).unwrap_or_else(|_| DVector::zeros(n));
    if gn.norm() <= radius {
        return gn;
    }
    let jg = j * g;
    let gg = g.norm_squared();
    let jgjg = jg.norm_squared();
    if gg == 0.0 || jgjg == 0.0 {
        let scale = radius / gn.norm();
        return gn * scale;
    }
    let cauchy = g * (-gg / jgjg);
    let cn = cauchy.norm();
    if cn >= radius {
        return cauchy * (radius / cn);
    }
    // point on the segment cauchy + t (gn − cauchy) with norm = radius
    let d = &gn - &cauchy;
    let a = d.norm_squared();
    let b = 2.0 * cauchy.dot(&d);
    let c = cn * cn - radius * radius;
    let t = (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a);
    cauchy + d * t.clamp(0.0, 1.0)
}

fn cauchy_step(j: &DMatrix<f64>, g: &DVector<f64>, radius: f64) -> Option<DVector<f64>> {
    let gg = g.norm_squared();
    let jgjg = (j * g).norm_squared();
    if gg == 0.0 || jgjg == 0.0 {
        return None;
    }
    let t = (gg / jgjg).min(radius / gg.sqrt());
    Some(g * -t)
}

fn model_cost(j: &DMatrix<f64>, r: &DVector<f64>, s: &DVector<f64>) -> f64 {
    (r + j * s).norm_squared()
}

/// Turns the unconstrained step `p` into a feasible one.
fn feasible_step(
    x: &DVector<f64>,
    p: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    j: &DMatrix<f64>,
    r: &DVector<f64>,
) -> DVector<f64> {
    let n = x.len();
    let mut t_hit = 1.0;
    let mut hit = None;
    for i in 0..n {
        let t = if p[i] > 0.0 {
            (hi[i] - x[i]) / p[i]
        } else if p[i] < 0.0 {
            (lo[i] - x[i]) / p[i]
        } else {
            f64::INFINITY
        };
        if t < t_hit {
            t_hit = t.max(0.0);
            hit = Some(i);
        }
    }
    let Some(i_hit) = hit else {
        return p.clone();
    };
    let clip = |s: DVector<f64>| -> DVector<f64> {
        DVector::from_fn(n, |i, _| (x[i] + s[i]).clamp(lo[i], hi[i]) - x[i])
    };
    let truncated = clip(p * t_hit);
    let mut reflected_dir = p.clone();
    reflected_dir[i_hit] = -reflected_dir[i_hit];
    let reflected = clip(p * t_hit + reflected_dir * (1.0 - t_hit));
    let projected = clip(p.clone());
    [truncated, reflected, projected]
        .into_iter()
        .map(|s| (model_cost(j, r, &s), s))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, s)| s)
        .unwrap()
}

pub(crate) fn solve(
    problem: &dyn LeastSquares,
    x0: &DVector<f64>,
    lo: &DVector<f64>,
    hi: &DVector<f64>,
    settings: &TrSettings,
) -> Result<TrOutcome, String> {
    let mut x = DVector::from_fn(x0.len(), |i, _| x0[i].clamp(lo[i], hi[i]));
    let (mut r, mut j) = problem.residual_and_jacobian(&x)?;
    let mut cost = r.norm_squared();
    let mut radius = settings.initial_radius;
    let mut trace = vec![TrIteration {
        iteration: 0,
        residual_norm: cost.sqrt(),
        radius,
        step_norm: 0.0,
    }];
    let mut iteration = 0;
    let reason = loop {
        let g = j.transpose() * &r;
        let pg = projected_gradient(&x, &g, lo, hi);
        if pg.amax() < settings.gtol {
            break StopReason::Gradient;
        }
        if iteration >= settings.max_iterations {
            break StopReason::MaxIterations;
        }
        iteration += 1;
        let free: Vec<usize> = (0..x.len()).filter(|&i| pg[i] != 0.0 || (x[i] > lo[i] && x[i] < hi[i])).collect();
        let jf = j.select_columns(&free);
        let gf = DVector::from_fn(free.len(), |k, _| g[free[k]]);
        let mut accepted = false;
        let x_scale = 1.0 + x.norm();
        while !accepted {
            let pf = dogleg(&jf, &r, &gf, radius);
            let mut p = DVector::zeros(x.len());
            for (k, &i) in free.iter().enumerate() {
                p[i] = pf[k];
            }
            let s = feasible_step(&x, &p, lo, hi, &j, &r);
            // a Gauss–Newton direction pointing out of the box can collapse to
            // nothing after truncation; the projected Cauchy step still descends
            let s = match cauchy_step(&j, &pg, radius) {
                Some(c) => {
                    let c = feasible_step(&x, &c, lo, hi, &j, &r);
                    if model_cost(&j, &r, &c) < model_cost(&j, &r, &s) { c } else { s }
                }
                None => s,
            };
            let s_norm = s.norm();
            let predicted = cost - model_cost(&j, &r, &s);
            if s_norm < settings.xtol * x_scale || !(predicted > 0.0) {
                return Ok(TrOutcome {
                    x,
                    residual: r,
                    jacobian: j,
                    iterations: iteration,
                    reason: StopReason::StepSize,
                    trace,
                });
            }
            let x_new = &x + &s;
            let new_cost = problem.residual(&x_new).map(|rn| rn.norm_squared()).unwrap_or(f64::INFINITY);
            let new_cost = if new_cost.is_finite() { new_cost } else { f64::INFINITY };
            let rho = (cost - new_cost) / predicted;
            if rho < 0.25 {
                radius = settings.shrink * s_norm;
            } else if rho > 0.75 && s_norm >= 0.99 * radius {
                radius = (settings.expand * s_norm).max(radius);
            }
            if rho > settings.accept {
                let (rn, jn) = problem.residual_and_jacobian(&x_new)?;
                x = x_new;
                r = rn;
                j = jn;
                cost = r.norm_squared();
                accepted = true;
                trace.push(TrIteration {
                    iteration,
                    residual_norm: cost.sqrt(),
                    radius,
                    step_norm: s_norm,
                });
                if s_norm < settings.xtol * x_scale {
                    return Ok(TrOutcome {
                        x,
                        residual: r,
                        jacobian: j,
                        iterations: iteration,
                        reason: StopReason::StepSize,
                        trace,
                    });
                }
            }
        }
    };
    Ok(TrOutcome {
        x,
        residual: r,
        jacobian: j,
        iterations: iteration,
        reason,
        trace,
    })
}
