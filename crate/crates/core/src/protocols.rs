//! Exact analytic evaluation of average frame duration E[T], average per-user
//! receive time E[P1], and reliability for the three framing protocols:
//! genie-aided, fixed message size, and variable message size.

use crate::bound::Scenario;
use crate::error::{Error, Result};
use crate::fbl::FblContext;

/// Protocol family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    Genie,
    Fixed,
    Variable,
}

impl ProtocolKind {
    pub fn name(self) -> &'static str {
        match self {
            ProtocolKind::Genie => "genie",
            ProtocolKind::Fixed => "fixed",
            ProtocolKind::Variable => "variable",
        }
    }
}

/// Concrete protocol parameters: grouping caps per size class, user-group
/// width (absent for genie), and the per-layer error budgets.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    pub kind: ProtocolKind,
    /// Max messages packed per jointly encoded packet, one cap per size class.
    pub v: Vec<u32>,
    /// Users per user group; `None` for the genie protocol.
    pub w: Option<u32>,
    /// [eps1, eps2, eps3]: header/pointer, activity/size-map, message layers.
    /// The genie protocol uses only eps3 as its single code reliability.
    pub eps_layers: [f64; 3],
}

/// Outcome of an analytic evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalResult {
    /// Average frame duration in channel uses.
    pub et: f64,
    /// Average per-user receive-ON time in channel uses.
    pub ep1: f64,
    /// Worst-case single-frame receive time (all users active at the largest
    /// size); charged with weight eps against undetected control errors.
    pub p_worst: f64,
    /// Guaranteed per-active-user error bound.
    pub err_active: f64,
}

/// Ceiling with a small guard so values within float noise of an integer are
/// not bumped to the next one.
pub(crate) fn ceil_guard(x: f64) -> u64 {
    (x - 1e-9).ceil().max(0.0) as u64
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut lf = vec![0.0; n + 1];
    for i in 1..=n {
        lf[i] = lf[i - 1] + (i as f64).ln();
    }
    lf
}

/// ceil(log2 C(n, u)) via log-factorials, guarded at exact powers of two.
pub fn activity_bits(n: u64, u: u64) -> u64 {
    debug_assert!(u <= n);
    let lf = ln_factorials(n as usize);
    let ln_binom = lf[n as usize] - lf[u as usize] - lf[(n - u) as usize];
    ceil_guard(ln_binom / std::f64::consts::LN_2)
}

/// Binomial pmf over 0..=n, computed in log space.
fn binom_pmf(n: u64, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        let mut v = vec![0.0; n as usize + 1];
        v[0] = 1.0;
        return v;
    }
    if p >= 1.0 {
        let mut v = vec![0.0; n as usize + 1];
        v[n as usize] = 1.0;
        return v;
    }
    let lf = ln_factorials(n as usize);
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    (0..=n)
        .map(|u| {
            (lf[n as usize] - lf[u as usize] - lf[(n - u) as usize]
                + u as f64 * lp
                + (n - u) as f64 * lq)
                .exp()
        })
        .collect()
}

/// Split `m` messages into groups of at most `v`: G = ceil(m/v) groups whose
/// sizes differ by at most one, largest first.
pub fn partition_groups(m: u64, v: u64) -> Result<Vec<u64>> {
    if v < 1 {
        return Err(Error::Domain("group cap must be at least 1".into()));
    }
    if m == 0 {
        return Ok(Vec::new());
    }
    let g = m.div_ceil(v);
    let base = m / g;
    let rem = m % g;
    Ok((0..g).map(|i| if i < rem { base + 1 } else { base }).collect())
}

/// Total channel uses of the message packets carrying `m` messages of `alpha`
/// bits grouped with cap `v`.
pub(crate) fn group_cost(m: u64, v: u64, alpha: u64, ctx: &FblContext) -> f64 {
    partition_groups(m, v)
        .expect("v >= 1")
        .iter()
        .map(|&g| ctx.n_code((alpha * g) as f64))
        .sum()
}

/// Sum over the `m` users of the length of their own message packet.
fn group_power(m: u64, v: u64, alpha: u64, ctx: &FblContext) -> f64 {
    partition_groups(m, v)
        .expect("v >= 1")
        .iter()
        .map(|&g| g as f64 * ctx.n_code((alpha * g) as f64))
        .sum()
}

fn check_v(scenario: &Scenario, v: &[u32]) -> Result<()> {
    if v.len() != scenario.num_classes() {
        return Err(Error::Params(format!(
            "expected {} grouping caps, got {}",
            scenario.num_classes(),
            v.len()
        )));
    }
    if v.iter().any(|&c| c < 1 || c > scenario.k) {
        return Err(Error::Params("grouping caps must lie in 1..=K".into()));
    }
    Ok(())
}

fn check_w(scenario: &Scenario, w: u32) -> Result<()> {
    if w < 1 || w > scenario.k {
        return Err(Error::Params("user-group width must lie in 1..=K".into()));
    }
    Ok(())
}

fn check_reliability(scenario: &Scenario, eps_layers: &[f64; 3]) -> Result<()> {
    if eps_layers.iter().any(|&e| !(0.0..1.0).contains(&e)) {
        return Err(Error::Params("layer error budgets must lie in [0, 1)".into()));
    }
    let ok: f64 = eps_layers.iter().map(|&e| 1.0 - e).product();
    if ok < 1.0 - scenario.eps - 1e-12 {
        return Err(Error::Params(format!(
            "layer budgets {eps_layers:?} violate the reliability target {}",
            scenario.eps
        )));
    }
    Ok(())
}

/// Build one context per layer. A layer with eps = 0 gets a placeholder that
/// must never be evaluated; evaluators only touch contexts of layers that
/// carry bits.
fn layer_contexts(scenario: &Scenario, eps_layers: &[f64; 3]) -> [FblContext; 3] {
    eps_layers.map(|e| {
        let e = if e > 0.0 { e } else { scenario.eps };
        FblContext::new(scenario.channel, e).expect("validated eps")
    })
}

/// Genie-aided protocol: every user knows all message sizes, so no control
/// information is sent. `v[s]` caps the messages jointly encoded per packet
/// of size class `s`.
pub fn genie_eval(scenario: &Scenario, v: &[u32], eps_code: f64) -> Result<EvalResult> {
    if !(eps_code > 0.0 && eps_code <= scenario.eps) {
        return Err(Error::Params(
            "genie code reliability must lie in (0, scenario eps]".into(),
        ));
    }
    let ctx = FblContext::new(scenario.channel, eps_code)?;
    genie_eval_with_context(scenario, v, &ctx)
}

/// Genie evaluation against an explicit code-length context. The result is
/// affine in the context's `qinv`, which the optimizer exploits.
pub fn genie_eval_with_context(
    scenario: &Scenario,
    v: &[u32],
    ctx: &FblContext,
) -> Result<EvalResult> {
    check_v(scenario, v)?;
    let k = scenario.k as u64;
    let mut et = 0.0;
    let mut power = 0.0;
    for (s, (&alpha, &p_s)) in scenario.alphas.iter().zip(&scenario.ps).enumerate() {
        let p_act = (1.0 - scenario.q) * p_s;
        let pmf = binom_pmf(k, p_act);
        let cap = v[s] as u64;
        for (m, &pm) in pmf.iter().enumerate() {
            if pm == 0.0 {
                continue;
            }
            et += pm * group_cost(m as u64, cap, alpha, ctx);
            power += pm * group_power(m as u64, cap, alpha, ctx);
        }
    }
    let alpha_max = *scenario.alphas.last().unwrap();
    let p_worst = group_cost(k, v[scenario.num_classes() - 1] as u64, alpha_max, ctx);
    Ok(EvalResult {
        et,
        ep1: power / k as f64,
        p_worst,
        err_active: ctx.eps,
    })
}

/// Fixed-message-size protocol (single size class): a header packet locating
/// the user groups, one activity packet per user group, then grouped message
/// packets.
pub fn fixed_eval(
    scenario: &Scenario,
    v: u32,
    w: u32,
    eps_layers: [f64; 3],
) -> Result<EvalResult> {
    check_reliability(scenario, &eps_layers)?;
    let ctxs = layer_contexts(scenario, &eps_layers);
    fixed_eval_with_contexts(scenario, v, w, &ctxs)
}

pub fn fixed_eval_with_contexts(
    scenario: &Scenario,
    v: u32,
    w: u32,
    ctxs: &[FblContext; 3],
) -> Result<EvalResult> {
    if scenario.num_classes() != 1 {
        return Err(Error::Unsupported(
            "the fixed protocol requires a single message size".into(),
        ));
    }
    check_v(scenario, &[v])?;
    check_w(scenario, w)?;
    let alpha = scenario.alphas[0];
    let k = scenario.k as u64;
    let ug_sizes = partition_groups(k, w as u64)?;
    let b = ug_sizes.len() as u64;
    // header: which of the W slots of each UG hold active users' indices
    let k1 = ceil_guard(b as f64 * (w as f64).log2());
    let n1 = ctxs[0].n_code(k1 as f64);

    let mut et = n1;
    let mut power = 0.0; // sum over users of expected ON time
    let mut p_worst = n1;
    for &c in &ug_sizes {
        let pmf = binom_pmf(c, 1.0 - scenario.q);
        let mut ug_et = 0.0;
        let mut ug_power = 0.0;
        for (u, &pu) in pmf.iter().enumerate() {
            if pu == 0.0 {
                continue;
            }
            let u = u as u64;
            let n2 = ctxs[1].n_code(activity_bits(c, u) as f64);
            ug_et += pu * (n2 + group_cost(u, v as u64, alpha, &ctxs[2]));
            // every user of the UG decodes the header and its activity
            // packet; active users additionally decode their own message
            // packet
            ug_power += pu * (c as f64 * (n1 + n2) + group_power(u, v as u64, alpha, &ctxs[2]));
        }
        et += ug_et;
        power += ug_power;
        p_worst += ctxs[1].n_code(activity_bits(c, c) as f64)
            + group_cost(c, v as u64, alpha, &ctxs[2]);
    }
    let err_active = 1.0 - ctxs.iter().map(|c| 1.0 - c.eps).product::<f64>();
    Ok(EvalResult {
        et,
        ep1: power / k as f64 + scenario.eps * p_worst,
        p_worst,
        err_active,
    })
}

/// Pointer widths for the variable protocol: UG `i >= 2` is located by a
/// separately encoded pointer of `ceil(log2(worst-case start offset))` bits.
/// Widths and offsets are mutually dependent, so iterate to a fixed point.
pub(crate) fn pointer_bits(
    ug_sizes: &[u64],
    worst_sections: &[f64],
    ctx1: &FblContext,
) -> Vec<u64> {
    let b = ug_sizes.len();
    if b <= 1 {
        return Vec::new();
    }
    let mut bits = vec![1u64; b - 1];
    for _ in 0..64 {
        let ptr_total: f64 = bits.iter().map(|&p| ctx1.n_code(p as f64)).sum();
        let mut offset = ptr_total;
        let mut next = Vec::with_capacity(b - 1);
        for i in 0..b - 1 {
            offset += worst_sections[i];
            next.push(ceil_guard(offset.max(2.0).log2()));
        }
        if next == bits {
            break;
        }
        bits = next;
    }
    bits
}

/// Variable-message-size protocol: a pointer layer locating user groups, a
/// per-UG size map of `ceil(|K_i| log2(S+1))` bits, and per-class grouped
/// message packets within each UG.
pub fn variable_eval(
    scenario: &Scenario,
    v: &[u32],
    w: u32,
    eps_layers: [f64; 3],
) -> Result<EvalResult> {
    check_reliability(scenario, &eps_layers)?;
    let ctxs = layer_contexts(scenario, &eps_layers);
    variable_eval_with_contexts(scenario, v, w, &ctxs)
}

pub fn variable_eval_with_contexts(
    scenario: &Scenario,
    v: &[u32],
    w: u32,
    ctxs: &[FblContext; 3],
) -> Result<EvalResult> {
    check_v(scenario, v)?;
    check_w(scenario, w)?;
    let s_classes = scenario.num_classes();
    let k = scenario.k as u64;
    let alpha_max = *scenario.alphas.last().unwrap();
    let v_max = v[s_classes - 1] as u64;
    let ug_sizes = partition_groups(k, w as u64)?;

    // size-map bits and worst-case section length per UG
    let map_bits: Vec<u64> = ug_sizes
        .iter()
        .map(|&c| ceil_guard(c as f64 * ((s_classes + 1) as f64).log2()))
        .collect();
    let worst_sections: Vec<f64> = ug_sizes
        .iter()
        .zip(&map_bits)
        .map(|(&c, &mb)| ctxs[1].n_code(mb as f64) + group_cost(c, v_max, alpha_max, &ctxs[2]))
        .collect();
    let ptr_bits = pointer_bits(&ug_sizes, &worst_sections, &ctxs[0]);
    let ptr_lens: Vec<f64> = ptr_bits.iter().map(|&p| ctxs[0].n_code(p as f64)).collect();
    let ptr_total: f64 = ptr_lens.iter().sum();

    let mut et = ptr_total;
    let mut power = 0.0;
    for (i, (&c, &mb)) in ug_sizes.iter().zip(&map_bits).enumerate() {
        let n2 = ctxs[1].n_code(mb as f64);
        et += n2;
        // users of UG 1 skip the pointer layer entirely
        let ptr_own = if i == 0 { 0.0 } else { ptr_lens[i - 1] };
        power += c as f64 * (ptr_own + n2);
        // message packets: the multinomial class profile of the UG splits
        // into independent binomial marginals under linearity
        for (s, (&alpha, &p_s)) in scenario.alphas.iter().zip(&scenario.ps).enumerate() {
            let pmf = binom_pmf(c, (1.0 - scenario.q) * p_s);
            for (m, &pm) in pmf.iter().enumerate() {
                if pm == 0.0 {
                    continue;
                }
                et += pm * group_cost(m as u64, v[s] as u64, alpha, &ctxs[2]);
                power += pm * group_power(m as u64, v[s] as u64, alpha, &ctxs[2]);
            }
        }
    }
    let p_worst = ptr_total + worst_sections.iter().sum::<f64>();
    let err_active = 1.0 - ctxs.iter().map(|c| 1.0 - c.eps).product::<f64>();
    Ok(EvalResult {
        et,
        ep1: power / k as f64 + scenario.eps * p_worst,
        p_worst,
        err_active,
    })
}

/// Worst-case single-frame receive time for the given parameters: every user
/// active with the largest message size.
pub fn worst_case_power(scenario: &Scenario, params: &ProtocolParams) -> Result<f64> {
    let r = evaluate(scenario, params)?;
    Ok(r.p_worst)
}

/// Dispatch an evaluation by protocol kind.
pub fn evaluate(scenario: &Scenario, params: &ProtocolParams) -> Result<EvalResult> {
    match params.kind {
        ProtocolKind::Genie => genie_eval(scenario, &params.v, params.eps_layers[2]),
        ProtocolKind::Fixed => {
            let w = params.w.ok_or_else(|| Error::Params("fixed protocol needs W".into()))?;
            if params.v.len() != 1 {
                return Err(Error::Params("fixed protocol takes a single V".into()));
            }
            fixed_eval(scenario, params.v[0], w, params.eps_layers)
        }
        ProtocolKind::Variable => {
            let w = params.w.ok_or_else(|| Error::Params("variable protocol needs W".into()))?;
            variable_eval(scenario, &params.v, w, params.eps_layers)
        }
    }
}
