//! Seeded Monte Carlo frame simulator: draws message sizes, lays out the
//! exact packet schedule the analytic evaluators cost, draws per-packet
//! decode outcomes, and accounts ON-OFF receive time and stopping times.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bound::Scenario;
use crate::error::{Error, Result};
use crate::fbl::FblContext;
use crate::protocols::{
    activity_bits, ceil_guard, evaluate, group_cost, partition_groups, pointer_bits,
    ProtocolKind, ProtocolParams,
};

const BATCH: u64 = 4096;

/// One scheduled packet.
#[derive(Debug, Clone)]
pub struct Packet {
    pub start: f64,
    pub len: f64,
    pub eps: f64,
    /// 1 = header/pointer, 2 = activity/size map, 3 = message.
    pub layer: u8,
    pub audience: Vec<u32>,
}

/// Full realization of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTrace {
    /// Drawn message size per user in bits; 0 marks an inactive user.
    pub sizes: Vec<u64>,
    pub t: f64,
    /// Per-user receive-ON time (worst-case charge on control failure).
    pub on_time: Vec<f64>,
    /// Per-user message-decode success; inactive users count as successful.
    pub decoded: Vec<bool>,
    /// Per-user stopping time: end of the last packet the user receives.
    pub stop: Vec<f64>,
    /// Users charged the worst-case receive time this frame.
    pub worst_charged: Vec<bool>,
}

/// Aggregated Monte Carlo estimates.
#[derive(Debug, Clone)]
pub struct SimReport {
    pub n_frames: u64,
    pub seed: u64,
    pub et_hat: f64,
    pub et_se: f64,
    pub ep1_hat: f64,
    pub ep1_se: f64,
    /// Empirical message-failure rate among active users.
    pub err_rate_active: f64,
    pub active_users: u64,
    pub worst_case_charges: u64,
    /// Set when too few frames were drawn for a finite confidence interval.
    pub infinite_ci: bool,
}

/// Reusable simulator: precomputed contexts, layout constants, and the
/// worst-case receive-time charge.
pub struct Simulator {
    scenario: Scenario,
    params: ProtocolParams,
    ctxs: [FblContext; 3],
    ug_sizes: Vec<u64>,
    /// Fixed kind: header bits. Variable kind: unused.
    k1: u64,
    /// Variable kind: per-UG size-map bits.
    map_bits: Vec<u64>,
    /// Variable kind: pointer bits for UGs 2..B.
    ptr_bits: Vec<u64>,
    p_worst: f64,
}

impl Simulator {
    pub fn new(scenario: &Scenario, params: &ProtocolParams) -> Result<Self> {
        // run the analytic evaluator once: validates parameters and yields
        // the worst-case charge
        let analytic = evaluate(scenario, params)?;
        let ctxs: [FblContext; 3] = std::array::from_fn(|i| {
            let e = params.eps_layers[i];
            let e = if e > 0.0 { e } else { scenario.eps };
            FblContext::new(scenario.channel, e).expect("validated eps")
        });
        let k = scenario.k as u64;
        let (ug_sizes, k1, map_bits, ptr_bits) = match params.kind {
            ProtocolKind::Genie => (Vec::new(), 0, Vec::new(), Vec::new()),
            ProtocolKind::Fixed => {
                let w = params.w.unwrap() as u64;
                let ug = partition_groups(k, w)?;
                let k1 = ceil_guard(ug.len() as f64 * (w as f64).log2());
                (ug, k1, Vec::new(), Vec::new())
            }
            ProtocolKind::Variable => {
                let w = params.w.unwrap() as u64;
                let ug = partition_groups(k, w)?;
                let s1 = (scenario.num_classes() + 1) as f64;
                let map_bits: Vec<u64> =
                    ug.iter().map(|&c| ceil_guard(c as f64 * s1.log2())).collect();
                let alpha_max = *scenario.alphas.last().unwrap();
                let v_max = *params.v.last().unwrap() as u64;
                let worst: Vec<f64> = ug
                    .iter()
                    .zip(&map_bits)
                    .map(|(&c, &mb)| {
                        ctxs[1].n_code(mb as f64) + group_cost(c, v_max, alpha_max, &ctxs[2])
                    })
                    .collect();
                let ptr = pointer_bits(&ug, &worst, &ctxs[0]);
                (ug, 0, map_bits, ptr)
            }
        };
        Ok(Self {
            scenario: scenario.clone(),
            params: params.clone(),
            ctxs,
            ug_sizes,
            k1,
            map_bits,
            ptr_bits,
            p_worst: analytic.p_worst,
        })
    }

    fn draw_sizes(&self, rng: &mut ChaCha8Rng) -> Vec<u64> {
        let sc = &self.scenario;
        (0..sc.k)
            .map(|_| {
                if rng.gen::<f64>() < sc.q {
                    return 0;
                }
                let mut u: f64 = rng.gen();
                for (s, &p) in sc.ps.iter().enumerate() {
                    if u < p {
                        return sc.alphas[s];
                    }
                    u -= p;
                }
                *sc.alphas.last().unwrap()
            })
            .collect()
    }

    /// Simulate one frame with the given RNG state.
    pub fn frame(&self, rng: &mut ChaCha8Rng) -> FrameTrace {
        let sizes = self.draw_sizes(rng);
        let schedule = self.schedule(&sizes);
        self.receive(&sizes, &schedule, rng)
    }

    /// Lay out the packet schedule for a size realization.
    pub fn schedule(&self, sizes: &[u64]) -> Vec<Packet> {
        let sc = &self.scenario;
        let mut packets: Vec<Packet> = Vec::new();
        let mut cursor = 0.0f64;
        let mut push = |cursor: &mut f64, len: f64, eps: f64, layer: u8, audience: Vec<u32>| {
            if len > 0.0 {
                packets.push(Packet { start: *cursor, len, eps, layer, audience });
                *cursor += len;
            }
        };
        match self.params.kind {
            ProtocolKind::Genie => {
                for (s, &alpha) in sc.alphas.iter().enumerate() {
                    let members: Vec<u32> = (0..sc.k).filter(|&u| sizes[u as usize] == alpha).collect();
                    let vcap = self.params.v[s] as u64;
                    let mut off = 0usize;
                    for g in partition_groups(members.len() as u64, vcap).expect("v >= 1") {
                        let aud = members[off..off + g as usize].to_vec();
                        off += g as usize;
                        push(
                            &mut cursor,
                            self.ctxs[2].n_code((alpha * g) as f64),
                            self.ctxs[2].eps,
                            3,
                            aud,
                        );
                    }
                }
            }
            ProtocolKind::Fixed => {
                let alpha = sc.alphas[0];
                let vcap = self.params.v[0] as u64;
                push(
                    &mut cursor,
                    self.ctxs[0].n_code(self.k1 as f64),
                    self.ctxs[0].eps,
                    1,
                    (0..sc.k).collect(),
                );
                let mut first = 0u32;
                for &c in &self.ug_sizes {
                    let ug: Vec<u32> = (first..first + c as u32).collect();
                    first += c as u32;
                    let actives: Vec<u32> =
                        ug.iter().copied().filter(|&u| sizes[u as usize] > 0).collect();
                    let bits = activity_bits(c, actives.len() as u64);
                    push(
                        &mut cursor,
                        self.ctxs[1].n_code(bits as f64),
                        self.ctxs[1].eps,
                        2,
                        ug,
                    );
                    let mut off = 0usize;
                    for g in partition_groups(actives.len() as u64, vcap).expect("v >= 1") {
                        let aud = actives[off..off + g as usize].to_vec();
                        off += g as usize;
                        push(
                            &mut cursor,
                            self.ctxs[2].n_code((alpha * g) as f64),
                            self.ctxs[2].eps,
                            3,
                            aud,
                        );
                    }
                }
            }
            ProtocolKind::Variable => {
                // pointer layer first, one separately coded pointer per UG >= 2
                let mut first = 0u32;
                let ug_members: Vec<Vec<u32>> = self
                    .ug_sizes
                    .iter()
                    .map(|&c| {
                        let m: Vec<u32> = (first..first + c as u32).collect();
                        first += c as u32;
                        m
                    })
                    .collect();
                for (i, &pb) in self.ptr_bits.iter().enumerate() {
                    push(
                        &mut cursor,
                        self.ctxs[0].n_code(pb as f64),
                        self.ctxs[0].eps,
                        1,
                        ug_members[i + 1].clone(),
                    );
                }
                for (i, members) in ug_members.iter().enumerate() {
                    push(
                        &mut cursor,
                        self.ctxs[1].n_code(self.map_bits[i] as f64),
                        self.ctxs[1].eps,
                        2,
                        members.clone(),
                    );
                    for (s, &alpha) in sc.alphas.iter().enumerate() {
                        let actives: Vec<u32> = members
                            .iter()
                            .copied()
                            .filter(|&u| sizes[u as usize] == alpha)
                            .collect();
                        let vcap = self.params.v[s] as u64;
                        let mut off = 0usize;
                        for g in partition_groups(actives.len() as u64, vcap).expect("v >= 1") {
                            let aud = actives[off..off + g as usize].to_vec();
                            off += g as usize;
                            push(
                                &mut cursor,
                                self.ctxs[2].n_code((alpha * g) as f64),
                                self.ctxs[2].eps,
                                3,
                                aud,
                            );
                        }
                    }
                }
            }
        }
        packets
    }

    /// Draw decode outcomes and account ON time per user. Decode events are
    /// independent Bernoulli draws per (packet, listening user); a failed
    /// control packet charges the worst-case receive time and fails the
    /// user's message if active.
    fn receive(&self, sizes: &[u64], schedule: &[Packet], rng: &mut ChaCha8Rng) -> FrameTrace {
        let k = self.scenario.k as usize;
        let t: f64 = schedule.iter().map(|p| p.len).sum();
        let mut on_time = vec![0.0f64; k];
        let mut decoded = vec![true; k];
        let mut stop = vec![0.0f64; k];
        let mut worst_charged = vec![false; k];
        for p in schedule {
            for &u in &p.audience {
                let u = u as usize;
                if worst_charged[u] {
                    continue;
                }
                on_time[u] += p.len;
                stop[u] = p.start + p.len;
                let ok = rng.gen::<f64>() >= p.eps;
                if !ok {
                    if p.layer == 3 {
                        decoded[u] = false;
                    } else {
                        worst_charged[u] = true;
                        on_time[u] = self.p_worst;
                        stop[u] = t;
                        if sizes[u] > 0 {
                            decoded[u] = false;
                        }
                    }
                }
            }
        }
        FrameTrace { sizes: sizes.to_vec(), t, on_time, decoded, stop, worst_charged }
    }
}

/// Simulate a single frame from a deterministic RNG state.
pub fn simulate_frame(
    scenario: &Scenario,
    params: &ProtocolParams,
    rng: &mut ChaCha8Rng,
) -> Result<FrameTrace> {
    Ok(Simulator::new(scenario, params)?.frame(rng))
}

#[derive(Default, Clone, Copy)]
struct Partial {
    n: u64,
    sum_t: f64,
    sum_t2: f64,
    sum_p: f64,
    sum_p2: f64,
    active: u64,
    errors: u64,
    charges: u64,
}

/// Estimate E[T], E[P1], and the active-user error rate over `n_frames`
/// seeded frames. Frames are drawn in fixed-size batches, each on its own
/// RNG stream, so results do not depend on thread count.
pub fn mc_estimate(
    scenario: &Scenario,
    params: &ProtocolParams,
    n_frames: u64,
    seed: u64,
) -> Result<SimReport> {
    if n_frames < 1 {
        return Err(Error::Domain("need at least one frame".into()));
    }
    let sim = Simulator::new(scenario, params)?;
    let k = scenario.k as f64;
    let n_batches = n_frames.div_ceil(BATCH);
    let partials: Vec<Partial> = (0..n_batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b + 1);
            let count = BATCH.min(n_frames - b * BATCH);
            let mut acc = Partial::default();
            for _ in 0..count {
                let tr = sim.frame(&mut rng);
                let p1 = tr.on_time.iter().sum::<f64>() / k;
                acc.n += 1;
                acc.sum_t += tr.t;
                acc.sum_t2 += tr.t * tr.t;
                acc.sum_p += p1;
                acc.sum_p2 += p1 * p1;
                for u in 0..tr.sizes.len() {
                    if tr.sizes[u] > 0 {
                        acc.active += 1;
                        if !tr.decoded[u] {
                            acc.errors += 1;
                        }
                    }
                    if tr.worst_charged[u] {
                        acc.charges += 1;
                    }
                }
            }
            acc
        })
        .collect();
    // deterministic sequential reduction in batch order
    let mut tot = Partial::default();
    for p in partials {
        tot.n += p.n;
        tot.sum_t += p.sum_t;
        tot.sum_t2 += p.sum_t2;
        tot.sum_p += p.sum_p;
        tot.sum_p2 += p.sum_p2;
        tot.active += p.active;
        tot.errors += p.errors;
        tot.charges += p.charges;
    }
    let n = tot.n as f64;
    let et_hat = tot.sum_t / n;
    let ep1_hat = tot.sum_p / n;
    let infinite_ci = tot.n < 2;
    let se = |sum: f64, sum_sq: f64, mean: f64| -> f64 {
        if infinite_ci {
            f64::INFINITY
        } else {
            let var = ((sum_sq - sum * mean) / (n - 1.0)).max(0.0);
            (var / n).sqrt()
        }
    };
    Ok(SimReport {
        n_frames: tot.n,
        seed,
        et_hat,
        et_se: se(tot.sum_t, tot.sum_t2, et_hat),
        ep1_hat,
        ep1_se: se(tot.sum_p, tot.sum_p2, ep1_hat),
        err_rate_active: if tot.active > 0 { tot.errors as f64 / tot.active as f64 } else { 0.0 },
        active_users: tot.active,
        worst_case_charges: tot.charges,
        infinite_ci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbl::ChannelParams;
    use crate::protocols::{fixed_eval, genie_eval, variable_eval};

    fn scenario(k: u32, q: f64, alphas: Vec<u64>, ps: Vec<f64>) -> Scenario {
        Scenario::new(ChannelParams::new(1.0).unwrap(), 1e-4, k, q, alphas, ps).unwrap()
    }

    fn eq_split(eps: f64) -> f64 {
        1.0 - (1.0 - eps).powf(1.0 / 3.0)
    }

    fn fixed_params(v: u32, w: u32, e: f64) -> ProtocolParams {
        ProtocolParams { kind: ProtocolKind::Fixed, v: vec![v], w: Some(w), eps_layers: [e, e, e] }
    }

    #[test]
    fn identical_seed_identical_trace() {
        let sc = scenario(4, 0.5, vec![100], vec![1.0]);
        let params = fixed_params(2, 2, eq_split(sc.eps));
        let mut r1 = ChaCha8Rng::seed_from_u64(7);
        let mut r2 = ChaCha8Rng::seed_from_u64(7);
        let a = simulate_frame(&sc, &params, &mut r1).unwrap();
        let b = simulate_frame(&sc, &params, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn schedule_consistency() {
        let sc = scenario(8, 0.5, vec![50, 150], vec![0.5, 0.5]);
        let e = eq_split(sc.eps);
        let params = ProtocolParams {
            kind: ProtocolKind::Variable,
            v: vec![2, 2],
            w: Some(4),
            eps_layers: [e, e, e],
        };
        let sim = Simulator::new(&sc, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let sizes = sim.draw_sizes(&mut rng);
            let schedule = sim.schedule(&sizes);
            // packets are contiguous and T is their total length
            let mut cursor = 0.0;
            for p in &schedule {
                assert!((p.start - cursor).abs() < 1e-12);
                assert!(p.len > 0.0);
                cursor += p.len;
            }
            let tr = sim.receive(&sizes, &schedule, &mut rng);
            assert!((tr.t - cursor).abs() < 1e-12);
            for u in 0..sizes.len() {
                assert!(tr.on_time[u] <= tr.t.max(sim.p_worst) + 1e-9);
                assert!(tr.stop[u] <= tr.t + 1e-9);
                if !tr.worst_charged[u] {
                    // ON time is exactly the audience packets of this user
                    let expect: f64 = schedule
                        .iter()
                        .filter(|p| p.audience.contains(&(u as u32)))
                        .map(|p| p.len)
                        .sum();
                    assert!((tr.on_time[u] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn all_inactive_frame_is_control_only() {
        let sc = scenario(4, 0.5, vec![100], vec![1.0]);
        let e = eq_split(sc.eps);
        let params = fixed_params(2, 2, e);
        let sim = Simulator::new(&sc, &params).unwrap();
        let sizes = vec![0, 0, 0, 0];
        let schedule = sim.schedule(&sizes);
        assert!(schedule.iter().all(|p| p.layer != 3));
        // header of ceil(2 log2 2) = 2 bits only: activity packets carry
        // log2 C(2,0) = 0 bits and vanish
        let c1 = FblContext::new(sc.channel, e).unwrap();
        let t: f64 = schedule.iter().map(|p| p.len).sum();
        assert!((t - c1.n_code(2.0)).abs() < 1e-12);
    }

    #[test]
    fn single_frame_report() {
        let sc = scenario(4, 0.5, vec![100], vec![1.0]);
        let params = fixed_params(2, 2, eq_split(sc.eps));
        let rep = mc_estimate(&sc, &params, 1, 11).unwrap();
        assert!(rep.infinite_ci);
        assert!(rep.et_se.is_infinite() && rep.ep1_se.is_infinite());
        let sim = Simulator::new(&sc, &params).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        rng.set_stream(1);
        let tr = sim.frame(&mut rng);
        assert_eq!(rep.et_hat, tr.t);
        assert_eq!(rep.ep1_hat, tr.on_time.iter().sum::<f64>() / 4.0);
    }

    #[test]
    fn mc_estimate_deterministic() {
        let sc = scenario(4, 0.5, vec![100], vec![1.0]);
        let params = fixed_params(2, 2, eq_split(sc.eps));
        let a = mc_estimate(&sc, &params, 10_000, 5).unwrap();
        let b = mc_estimate(&sc, &params, 10_000, 5).unwrap();
        assert_eq!(a.et_hat.to_bits(), b.et_hat.to_bits());
        assert_eq!(a.ep1_hat.to_bits(), b.ep1_hat.to_bits());
        assert_eq!(a.worst_case_charges, b.worst_case_charges);
    }

    #[test]
    fn fixed_mc_matches_hand_enumerated_expectation() {
        // the K=2 closed form is the oracle for both the analytic evaluator
        // and the simulator
        let sc = scenario(2, 0.5, vec![100], vec![1.0]);
        let e = eq_split(sc.eps);
        let params = fixed_params(1, 2, e);
        let analytic = fixed_eval(&sc, 1, 2, [e, e, e]).unwrap();
        let rep = mc_estimate(&sc, &params, 200_000, 17).unwrap();
        assert!(
            (rep.et_hat - analytic.et).abs() <= 4.0 * rep.et_se,
            "ET {} vs {} (se {})",
            rep.et_hat,
            analytic.et,
            rep.et_se
        );
        assert!(
            (rep.ep1_hat - analytic.ep1).abs() <= 4.0 * rep.ep1_se,
            "EP1 {} vs {} (se {})",
            rep.ep1_hat,
            analytic.ep1,
            rep.ep1_se
        );
    }

    #[test]
    fn genie_mc_matches_analytic() {
        let sc = scenario(8, 0.5, vec![100], vec![1.0]);
        let params = ProtocolParams {
            kind: ProtocolKind::Genie,
            v: vec![4],
            w: None,
            eps_layers: [sc.eps; 3],
        };
        let analytic = genie_eval(&sc, &[4], sc.eps).unwrap();
        let rep = mc_estimate(&sc, &params, 100_000, 23).unwrap();
        assert!((rep.et_hat - analytic.et).abs() <= 4.0 * rep.et_se);
        assert!((rep.ep1_hat - analytic.ep1).abs() <= 4.0 * rep.ep1_se);
        assert!(rep.err_rate_active <= sc.eps * 1.2 + 4.0 * (sc.eps / 1e5f64).sqrt());
    }

    #[test]
    fn variable_mc_matches_analytic() {
        let sc = scenario(8, 0.5, vec![50, 150], vec![0.5, 0.5]);
        let e = eq_split(sc.eps);
        let params = ProtocolParams {
            kind: ProtocolKind::Variable,
            v: vec![2, 2],
            w: Some(4),
            eps_layers: [e, e, e],
        };
        let analytic = variable_eval(&sc, &[2, 2], 4, [e, e, e]).unwrap();
        let rep = mc_estimate(&sc, &params, 100_000, 31).unwrap();
        assert!(
            (rep.et_hat - analytic.et).abs() <= 4.0 * rep.et_se,
            "ET {} vs {}",
            rep.et_hat,
            analytic.et
        );
        assert!(
            (rep.ep1_hat - analytic.ep1).abs() <= 4.0 * rep.ep1_se,
            "EP1 {} vs {}",
            rep.ep1_hat,
            analytic.ep1
        );
    }

    #[test]
    fn error_rate_within_reliability_budget() {
        let sc = scenario(4, 0.5, vec![100], vec![1.0]);
        let e = eq_split(sc.eps);
        let params = fixed_params(2, 2, e);
        let rep = mc_estimate(&sc, &params, 200_000, 41).unwrap();
        let bound = 1.0 - (1.0 - e).powi(3);
        let se = (bound * (1.0 - bound) / rep.active_users as f64).sqrt();
        assert!(rep.err_rate_active <= bound + 4.0 * se, "{}", rep.err_rate_active);
    }
}
