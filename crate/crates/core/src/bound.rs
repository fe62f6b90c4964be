//! Genie-aided lower bound on the weighted cost E[T] + beta*E[P1], and its
//! conversion into a curve in the (E[T], E[P1]) plane.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::Binomial;

use crate::envelope::{PhiBreve, DEFAULT_GRID};
use crate::error::{Error, Result};
use crate::fbl::{ChannelParams, FblContext};

/// Compositions threshold below which the multinomial expectation is
/// enumerated exactly.
const ENUM_LIMIT: u128 = 200_000;

/// Monte Carlo draw count used when exact enumeration is infeasible.
const MC_DRAWS: u64 = 1_000_000;

/// Default weight grid: log-spaced over six decades.
pub fn default_betas() -> Vec<f64> {
    let n = 61;
    (0..n)
        .map(|i| 10f64.powf(-3.0 + 6.0 * i as f64 / (n - 1) as f64))
        .collect()
}

/// Problem instance: channel, reliability target, user population, and the
/// message-size distribution.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub channel: ChannelParams,
    pub eps: f64,
    pub k: u32,
    pub q: f64,
    pub alphas: Vec<u64>,
    pub ps: Vec<f64>,
}

impl Scenario {
    pub fn new(
        channel: ChannelParams,
        eps: f64,
        k: u32,
        q: f64,
        alphas: Vec<u64>,
        ps: Vec<f64>,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Scenario("eps must lie in (0, 1)".into()));
        }
        if k == 0 {
            return Err(Error::Scenario("K must be positive".into()));
        }
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::Scenario("q must lie in [0, 1]".into()));
        }
        if alphas.is_empty() || alphas[0] == 0 {
            return Err(Error::Scenario("alphas must be positive".into()));
        }
        if alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Scenario("alphas must be strictly increasing".into()));
        }
        if ps.len() != alphas.len() {
            return Err(Error::Scenario("ps and alphas must have equal length".into()));
        }
        if ps.iter().any(|&p| p < 0.0) {
            return Err(Error::Scenario("ps must be nonnegative".into()));
        }
        if (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Scenario("ps must sum to 1".into()));
        }
        Ok(Self { channel, eps, k, q, alphas, ps })
    }

    pub fn num_classes(&self) -> usize {
        self.alphas.len()
    }

    pub fn fbl_context(&self) -> FblContext {
        FblContext::new(self.channel, self.eps).expect("validated scenario")
    }
}

/// One evaluated point of the lower bound.
#[derive(Debug, Clone, Copy)]
pub struct BoundPoint {
    pub beta: f64,
    pub value: f64,
}

/// The bound rendered as a piecewise boundary in the (E[T], E[P1]) plane.
#[derive(Debug, Clone)]
pub struct BoundCurve {
    pub points: Vec<BoundPoint>,
    /// Pointwise maximum of the half-plane boundaries, sampled over E[T].
    pub envelope: Vec<(f64, f64)>,
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut lf = vec![0.0; n + 1];
    for i in 1..=n {
        lf[i] = lf[i - 1] + (i as f64).ln();
    }
    lf
}

fn composition_count(k: u32, parts: u32) -> u128 {
    // C(k + parts - 1, parts - 1)
    let mut num = 1u128;
    let r = (parts - 1) as u128;
    for i in 1..=r {
        num = num * (k as u128 + i) / i;
    }
    num
}

/// Category probabilities of the multinomial message-count vector: the S
/// active classes followed by the inactive category.
fn category_probs(scenario: &Scenario) -> Vec<f64> {
    let mut probs: Vec<f64> = scenario.ps.iter().map(|p| (1.0 - scenario.q) * p).collect();
    probs.push(scenario.q);
    probs
}

fn expectation_term(phi: &PhiBreve, counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Ok(0.0);
    }
    let x: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(total as f64 * phi.eval(&x)?)
}

fn enumerate_expectation(phi: &PhiBreve, scenario: &Scenario) -> Result<f64> {
    let s = scenario.num_classes();
    let k = scenario.k as usize;
    let probs = category_probs(scenario);
    let ln_p: Vec<f64> = probs.iter().map(|&p| p.ln()).collect();
    let lf = ln_factorials(k);

    let mut total = 0.0;
    let mut counts = vec![0u64; s];
    // iterate over all compositions of <= k into the s active categories;
    // the remainder is the inactive count
    loop {
        let active: u64 = counts.iter().sum();
        if active <= k as u64 {
            let inactive = k as u64 - active;
            let mut ln_pmf = lf[k];
            let mut feasible = true;
            for (i, &c) in counts.iter().chain(std::iter::once(&inactive)).enumerate() {
                ln_pmf -= lf[c as usize];
                if c > 0 {
                    if probs[i] == 0.0 {
                        feasible = false;
                        break;
                    }
                    ln_pmf += c as f64 * ln_p[i];
                }
            }
            if feasible {
                total += ln_pmf.exp() * expectation_term(phi, &counts)?;
            }
        }
        // odometer over [0, k]^s
        let mut pos = 0;
        loop {
            if pos == s {
                return Ok(total);
            }
            counts[pos] += 1;
            if counts[pos] <= k as u64 {
                break;
            }
            counts[pos] = 0;
            pos += 1;
        }
    }
}

fn sample_multinomial(rng: &mut ChaCha8Rng, k: u32, probs: &[f64]) -> Vec<u64> {
    // chain of conditional binomials
    let mut counts = Vec::with_capacity(probs.len());
    let mut remaining = k as u64;
    let mut mass = 1.0;
    for (i, &p) in probs.iter().enumerate() {
        if i + 1 == probs.len() {
            counts.push(remaining);
            break;
        }
        if remaining == 0 || mass <= 0.0 {
            counts.push(0);
            continue;
        }
        let cond = (p / mass).clamp(0.0, 1.0);
        let draw = if cond >= 1.0 {
            remaining
        } else if cond <= 0.0 {
            0
        } else {
            let b = Binomial::new(cond, remaining).expect("valid binomial");
            rand::distributions::Distribution::sample(&b, rng) as u64
        };
        counts.push(draw);
        remaining -= draw;
        mass -= p;
    }
    counts
}

/// Monte Carlo estimate of the bound expectation: returns (mean, standard
/// error). Exposed for cross-checking against exact enumeration.
pub fn lower_bound_mc(
    beta: f64,
    scenario: &Scenario,
    n_draws: u64,
    seed: u64,
) -> Result<(f64, f64)> {
    if beta < 0.0 {
        return Err(Error::Domain("beta must be nonnegative".into()));
    }
    let ctx = scenario.fbl_context();
    let phi = PhiBreve::new(&scenario.alphas, beta, scenario.k, &ctx, DEFAULT_GRID)?;
    let probs = category_probs(scenario);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_draws {
        let mut counts = sample_multinomial(&mut rng, scenario.k, &probs);
        counts.pop(); // drop the inactive category
        let v = expectation_term(&phi, &counts)?;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / n_draws as f64;
    let var = (sum_sq / n_draws as f64 - mean * mean).max(0.0);
    let se = (var / n_draws as f64).sqrt();
    Ok((mean, se))
}

/// Lower bound on E[T] + beta*E[P1] over all protocols in the packet-schedule
/// class: the expectation over the multinomial message-count vector of the
/// convexified grouped packing cost.
pub fn lower_bound_point(beta: f64, scenario: &Scenario) -> Result<BoundPoint> {
    if beta < 0.0 {
        return Err(Error::Domain("beta must be nonnegative".into()));
    }
    let s = scenario.num_classes() as u32;
    let value = if composition_count(scenario.k, s + 1) <= ENUM_LIMIT {
        let ctx = scenario.fbl_context();
        let phi = PhiBreve::new(&scenario.alphas, beta, scenario.k, &ctx, DEFAULT_GRID)?;
        enumerate_expectation(&phi, scenario)?
    } else {
        lower_bound_mc(beta, scenario, MC_DRAWS, 0x5eed)?.0
    };
    Ok(BoundPoint { beta, value })
}

/// Closed form of the bound for a single message size: (1-q)*K times the
/// envelope value at one message per user-slot. Must agree with
/// [`lower_bound_point`] whenever S = 1.
pub fn closed_form_s1(beta: f64, scenario: &Scenario) -> Result<BoundPoint> {
    if scenario.num_classes() != 1 {
        return Err(Error::Unsupported(
            "closed form requires a single message size".into(),
        ));
    }
    if beta < 0.0 {
        return Err(Error::Domain("beta must be nonnegative".into()));
    }
    let ctx = scenario.fbl_context();
    let phi = PhiBreve::new(&scenario.alphas, beta, scenario.k, &ctx, DEFAULT_GRID)?;
    let value = (1.0 - scenario.q) * scenario.k as f64 * phi.eval(&[1.0])?;
    Ok(BoundPoint { beta, value })
}

/// Evaluate the bound over a beta grid and combine the resulting half-planes
/// E[P1] >= (value - E[T]) / beta into their pointwise maximum over a frame
/// duration grid.
pub fn bound_curve(betas: &[f64], scenario: &Scenario) -> Result<BoundCurve> {
    if betas.is_empty() {
        return Err(Error::Domain("beta grid must be nonempty".into()));
    }
    if betas.iter().any(|&b| b <= 0.0) {
        return Err(Error::Domain("beta grid must be positive".into()));
    }
    let mut points = Vec::with_capacity(betas.len());
    for &beta in betas {
        points.push(lower_bound_point(beta, scenario)?);
    }
    let t_min = points.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
    let t_max = points.iter().map(|p| p.value).fold(0.0, f64::max);
    let n_grid = 200;
    let span = (t_max - t_min).max(1.0);
    let envelope = (0..=n_grid)
        .map(|i| {
            let t = t_min + span * i as f64 / n_grid as f64;
            let p = points
                .iter()
                .map(|bp| (bp.value - t) / bp.beta)
                .fold(0.0f64, f64::max);
            (t, p)
        })
        .collect();
    Ok(BoundCurve { points, envelope })
}
