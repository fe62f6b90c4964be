//! Parameter optimization: the convex per-layer error allocation, exhaustive
//! integer search over grouping caps and user-group widths across a weight
//! sweep, and lower-left Pareto hulls with time-sharing.

use rayon::prelude::*;

use crate::bound::Scenario;
use crate::error::{Error, Result};
use crate::fbl::{inverse_q, q_func, FblContext};
use crate::protocols::{
    fixed_eval, fixed_eval_with_contexts, genie_eval, variable_eval, variable_eval_with_contexts,
    EvalResult, ProtocolKind, ProtocolParams,
};

/// One operating point of a protocol sweep.
#[derive(Debug, Clone)]
pub struct TradeoffPoint {
    pub et: f64,
    pub ep1: f64,
    pub beta: f64,
    pub params: ProtocolParams,
}

/// Sweep result: points sorted by E[T] plus the indices of the lower-left
/// convex hull (everything on the hull is achievable by time-sharing).
#[derive(Debug, Clone)]
pub struct Curve {
    pub points: Vec<TradeoffPoint>,
    pub hull: Vec<usize>,
}

/// Error allocation across the three packet layers.
#[derive(Debug, Clone, Copy)]
pub struct EpsAllocation {
    pub eps: [f64; 3],
    /// Set when every weight was zero and the allocation is arbitrary.
    pub degenerate: bool,
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Minimize `sum a_i * Qinv(eps_i)` subject to `prod (1 - eps_i) >= 1 - eps_total`.
///
/// Solved through the substitution `u_i = ln(1 - eps_i)`, which makes the
/// constraint linear and active at the optimum. The KKT system decouples per
/// layer given the multiplier, so a double bisection (outer on the log
/// multiplier, inner per layer on `Qinv(eps_i)`) pins the optimum; layers
/// with zero weight absorb no budget.
pub fn optimize_eps(a: [f64; 3], eps_total: f64) -> Result<EpsAllocation> {
    if !(eps_total > 0.0 && eps_total < 1.0) {
        return Err(Error::Domain("eps budget must lie in (0, 1)".into()));
    }
    if a.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
        return Err(Error::Domain("weights must be finite and nonnegative".into()));
    }
    let active: Vec<usize> = (0..3).filter(|&i| a[i] > 0.0).collect();
    if active.is_empty() {
        let e = 1.0 - (1.0 - eps_total).powf(1.0 / 3.0);
        return Ok(EpsAllocation { eps: [e, e, e], degenerate: true });
    }
    let l_budget = (-eps_total).ln_1p();

    // stationarity: ln a_i + u_i - ln pdf(x_i) = ln lambda, with x = Qinv(eps);
    // the left side is increasing in x, so bisect per layer
    let x_for = |i: usize, t: f64| -> f64 {
        let g = |x: f64| a[i].ln() + (-q_func(x)).ln_1p() + 0.5 * x * x + LN_SQRT_2PI - t;
        let (mut lo, mut hi) = (-8.0f64, 60.0f64);
        for _ in 0..90 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let budget_used = |t: f64| -> f64 {
        active.iter().map(|&i| (-q_func(x_for(i, t))).ln_1p()).sum()
    };
    // outer bisection on the log multiplier: budget_used is increasing in t
    let (mut t_lo, mut t_hi) = (-3000.0f64, 60.0f64);
    for _ in 0..110 {
        let mid = 0.5 * (t_lo + t_hi);
        if budget_used(mid) < l_budget {
            t_lo = mid;
        } else {
            t_hi = mid;
        }
    }
    let t = 0.5 * (t_lo + t_hi);
    let mut eps = [0.0f64; 3];
    let mut u = [0.0f64; 3];
    for &i in &active {
        let x = x_for(i, t);
        eps[i] = q_func(x);
        u[i] = (-eps[i]).ln_1p();
    }
    // close the budget exactly on the last active layer so the constraint is
    // tight to machine precision
    let last = *active.last().unwrap();
    let residual = l_budget - u.iter().sum::<f64>() + u[last];
    eps[last] = -residual.exp_m1();
    Ok(EpsAllocation { eps, degenerate: false })
}

/// Candidate grid for the integer search.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    /// Grouping-cap vectors, one entry per size class.
    pub v_candidates: Vec<Vec<u32>>,
    /// User-group widths (ignored by the genie kind).
    pub w_candidates: Vec<u32>,
}

impl SearchSpace {
    /// Defaults: every per-class cap in 1..=K (cartesian across classes), and
    /// widths restricted to powers of two plus K to keep large sweeps fast.
    pub fn default_for(scenario: &Scenario) -> Self {
        let k = scenario.k;
        let s = scenario.num_classes();
        let mut v_candidates: Vec<Vec<u32>> = vec![Vec::new()];
        for _ in 0..s {
            v_candidates = v_candidates
                .into_iter()
                .flat_map(|prefix| {
                    (1..=k).map(move |v| {
                        let mut c = prefix.clone();
                        c.push(v);
                        c
                    })
                })
                .collect();
        }
        let mut w_candidates: Vec<u32> = Vec::new();
        let mut w = 1u32;
        while w <= k {
            w_candidates.push(w);
            w = match w.checked_mul(2) {
                Some(n) => n,
                None => break,
            };
        }
        if *w_candidates.last().unwrap() != k {
            w_candidates.push(k);
        }
        Self { v_candidates, w_candidates }
    }
}

/// Affine model of (E[T], E[P1]) in the per-layer `Qinv` values, extracted by
/// finite differences. Exact as long as the integer layout (pointer widths)
/// does not change across the probed range, since code lengths are affine in
/// `Qinv` at fixed payload.
#[derive(Debug, Clone, Copy)]
struct AffineModel {
    at: [f64; 3],
    ap: [f64; 3],
}

fn eval_with_qinvs(
    scenario: &Scenario,
    kind: ProtocolKind,
    v: &[u32],
    w: u32,
    qinvs: [f64; 3],
) -> Result<EvalResult> {
    let ctxs = qinvs.map(|x| FblContext::with_qinv(scenario.channel, x).expect("finite qinv"));
    match kind {
        ProtocolKind::Fixed => fixed_eval_with_contexts(scenario, v[0], w, &ctxs),
        ProtocolKind::Variable => variable_eval_with_contexts(scenario, v, w, &ctxs),
        ProtocolKind::Genie => Err(Error::Unsupported("genie has no layer split".into())),
    }
}

fn affine_model(
    scenario: &Scenario,
    kind: ProtocolKind,
    v: &[u32],
    w: u32,
) -> Result<AffineModel> {
    let eps_eq = 1.0 - (1.0 - scenario.eps).powf(1.0 / 3.0);
    let qinv0 = inverse_q(eps_eq)?;
    let delta = 0.25;
    let base = eval_with_qinvs(scenario, kind, v, w, [qinv0; 3])?;
    let mut at = [0.0f64; 3];
    let mut ap = [0.0f64; 3];
    for i in 0..3 {
        let mut qs = [qinv0; 3];
        qs[i] += delta;
        let r = eval_with_qinvs(scenario, kind, v, w, qs)?;
        at[i] = ((r.et - base.et) / delta).max(0.0);
        ap[i] = ((r.ep1 - base.ep1) / delta).max(0.0);
    }
    Ok(AffineModel { at, ap })
}

fn equal_split(eps: f64) -> [f64; 3] {
    let e = 1.0 - (1.0 - eps).powf(1.0 / 3.0);
    [e, e, e]
}

/// Sweep the integer candidates over a weight grid. For the fixed and
/// variable kinds with `opt_eps`, the per-layer budgets are re-optimized at
/// every (candidate, beta) pair through the affine weight model; otherwise
/// the three layers split the budget equally. The genie kind codes every
/// packet at the scenario reliability.
pub fn sweep(
    scenario: &Scenario,
    kind: ProtocolKind,
    betas: &[f64],
    space: &SearchSpace,
    opt_eps: bool,
) -> Result<Curve> {
    if betas.is_empty() {
        return Err(Error::Domain("beta grid must be nonempty".into()));
    }
    if space.v_candidates.is_empty() || (kind != ProtocolKind::Genie && space.w_candidates.is_empty())
    {
        return Err(Error::Domain("search space must be nonempty".into()));
    }

    // candidate enumeration in a fixed deterministic order: V lexicographic,
    // then W ascending (ties in objective resolve to the earliest candidate)
    let mut v_sorted = space.v_candidates.clone();
    v_sorted.sort();
    v_sorted.dedup();
    let mut w_sorted = space.w_candidates.clone();
    w_sorted.sort_unstable();
    w_sorted.dedup();

    struct Candidate {
        v: Vec<u32>,
        w: u32,
        fixed_result: Option<EvalResult>,
        model: Option<AffineModel>,
        eps_layers: [f64; 3],
    }

    let candidates: Vec<(Vec<u32>, u32)> = if kind == ProtocolKind::Genie {
        v_sorted.iter().map(|v| (v.clone(), 0)).collect()
    } else {
        v_sorted
            .iter()
            .flat_map(|v| w_sorted.iter().map(move |&w| (v.clone(), w)))
            .collect()
    };

    let prepared: Vec<Result<Candidate>> = candidates
        .into_par_iter()
        .map(|(v, w)| -> Result<Candidate> {
            match kind {
                ProtocolKind::Genie => {
                    let r = genie_eval(scenario, &v, scenario.eps)?;
                    Ok(Candidate {
                        v,
                        w,
                        fixed_result: Some(r),
                        model: None,
                        eps_layers: [scenario.eps; 3],
                    })
                }
                _ if !opt_eps => {
                    let eps_layers = equal_split(scenario.eps);
                    let r = match kind {
                        ProtocolKind::Fixed => fixed_eval(scenario, v[0], w, eps_layers)?,
                        _ => variable_eval(scenario, &v, w, eps_layers)?,
                    };
                    Ok(Candidate { v, w, fixed_result: Some(r), model: None, eps_layers })
                }
                _ => {
                    let model = affine_model(scenario, kind, &v, w)?;
                    Ok(Candidate {
                        v,
                        w,
                        fixed_result: None,
                        model: Some(model),
                        eps_layers: equal_split(scenario.eps),
                    })
                }
            }
        })
        .collect();
    let prepared: Vec<Candidate> = prepared.into_iter().collect::<Result<_>>()?;

    let mut points: Vec<TradeoffPoint> = Vec::with_capacity(betas.len());
    for &beta in betas {
        // per-candidate objective at this beta, computed in parallel but
        // reduced in candidate order
        let evals: Vec<Result<(f64, f64, [f64; 3])>> = prepared
            .par_iter()
            .map(|cand| -> Result<(f64, f64, [f64; 3])> {
                if let Some(r) = &cand.fixed_result {
                    return Ok((r.et, r.ep1, cand.eps_layers));
                }
                let model = cand.model.as_ref().expect("prepared candidate");
                let a: [f64; 3] = std::array::from_fn(|i| model.at[i] + beta * model.ap[i]);
                let alloc = optimize_eps(a, scenario.eps)?;
                let r = match kind {
                    ProtocolKind::Fixed => fixed_eval(scenario, cand.v[0], cand.w, alloc.eps)?,
                    _ => variable_eval(scenario, &cand.v, cand.w, alloc.eps)?,
                };
                Ok((r.et, r.ep1, alloc.eps))
            })
            .collect();
        let mut best: Option<(f64, usize, f64, f64, [f64; 3])> = None;
        for (idx, e) in evals.into_iter().enumerate() {
            let (et, ep1, eps_layers) = e?;
            let obj = et + beta * ep1;
            let improves = match &best {
                None => true,
                Some((b, ..)) => obj < b - 1e-9,
            };
            if improves {
                best = Some((obj, idx, et, ep1, eps_layers));
            }
        }
        let (_, idx, et, ep1, eps_layers) = best.expect("nonempty candidates");
        let cand = &prepared[idx];
        points.push(TradeoffPoint {
            et,
            ep1,
            beta,
            params: ProtocolParams {
                kind,
                v: cand.v.clone(),
                w: if kind == ProtocolKind::Genie { None } else { Some(cand.w) },
                eps_layers,
            },
        });
    }
    points.sort_by(|a, b| a.et.partial_cmp(&b.et).unwrap());
    let hull = lower_left_hull(&points);
    Ok(Curve { points, hull })
}

/// Indices of the lower-left convex hull of a set of points sorted by E[T]:
/// the convex frontier with nondecreasing E[T] and nonincreasing E[P1].
pub fn lower_left_hull(points: &[TradeoffPoint]) -> Vec<usize> {
    if points.is_empty() {
        return Vec::new();
    }
    // lower convex hull by monotone chain over (et, ep1)
    let mut hull: Vec<usize> = Vec::new();
    for (i, p) in points.iter().enumerate() {
        if let Some(&last) = hull.last() {
            if (points[last].et - p.et).abs() < 1e-12 && (points[last].ep1 - p.ep1).abs() < 1e-12 {
                continue;
            }
        }
        while hull.len() >= 2 {
            let a = &points[hull[hull.len() - 2]];
            let b = &points[hull[hull.len() - 1]];
            let cross = (b.et - a.et) * (p.ep1 - a.ep1) - (b.ep1 - a.ep1) * (p.et - a.et);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    // keep only the frontier down to the global E[P1] minimum: beyond it the
    // hull climbs back up and is dominated
    let mut cut = 0;
    let mut min_ep1 = f64::INFINITY;
    for (pos, &i) in hull.iter().enumerate() {
        if points[i].ep1 < min_ep1 - 1e-12 {
            min_ep1 = points[i].ep1;
            cut = pos;
        }
    }
    hull.truncate(cut + 1);
    hull
}

/// Piecewise-linear interpolation of a hull at a frame duration; `None`
/// outside the hull's E[T] range.
pub fn hull_ep1_at(curve: &Curve, et: f64) -> Option<f64> {
    let h = &curve.hull;
    if h.is_empty() {
        return None;
    }
    let pts: Vec<(f64, f64)> = h.iter().map(|&i| (curve.points[i].et, curve.points[i].ep1)).collect();
    if et < pts[0].0 - 1e-9 || et > pts[pts.len() - 1].0 + 1e-9 {
        return None;
    }
    if pts.len() == 1 {
        return Some(pts[0].1);
    }
    let mut i = 0;
    while i + 2 < pts.len() && pts[i + 1].0 <= et {
        i += 1;
    }
    let (x0, y0) = pts[i];
    let (x1, y1) = pts[i + 1];
    if (x1 - x0).abs() < 1e-12 {
        return Some(y0.min(y1));
    }
    Some(y0 + (y1 - y0) * (et - x0) / (x1 - x0))
}
