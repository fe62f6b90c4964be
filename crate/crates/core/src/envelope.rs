//! Convex/concave envelope machinery: piecewise-linear envelopes of sampled
//! 1-D functions, the per-size-class packing cost and its lower convex
//! envelope, and the simplex decomposition that evaluates the multivariate
//! envelope from the 1-D ones.

use crate::error::{Error, Result};
use crate::fbl::FblContext;

/// Number of grid intervals used when discretizing a packing-cost function.
/// Doubling it must move downstream results by less than 0.1%.
pub const DEFAULT_GRID: usize = 2048;

const ZETA_FLOOR: f64 = 1e-6;

/// A function sampled on a strictly increasing grid.
#[derive(Debug, Clone)]
pub struct SampledFunction {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl SampledFunction {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::Domain("sample grids must have equal length".into()));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("sample grid must be strictly increasing".into()));
        }
        Ok(Self { xs, ys })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Lower convex envelope: slopes nondecreasing, envelope <= samples.
    Lower,
    /// Upper concave envelope: slopes nonincreasing, envelope >= samples.
    Upper,
}

/// Piecewise-linear envelope. Evaluation between knots interpolates linearly;
/// beyond the outermost knots the end segments are extended.
#[derive(Debug, Clone)]
pub struct EnvelopeFn {
    pub knots: Vec<(f64, f64)>,
    pub direction: Direction,
}

impl EnvelopeFn {
    pub fn eval(&self, x: f64) -> f64 {
        let k = &self.knots;
        debug_assert!(k.len() >= 2);
        // index of the segment [k[i], k[i+1]] used for interpolation
        let i = match k.binary_search_by(|&(kx, _)| kx.partial_cmp(&x).unwrap()) {
            Ok(j) => return k[j].1,
            Err(0) => 0,
            Err(j) if j >= k.len() => k.len() - 2,
            Err(j) => j - 1,
        };
        let (x0, y0) = k[i];
        let (x1, y1) = k[i + 1];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    /// Slope of the final segment (used for arguments beyond the last knot).
    pub fn final_slope(&self) -> f64 {
        let n = self.knots.len();
        let (x0, y0) = self.knots[n - 2];
        let (x1, y1) = self.knots[n - 1];
        (y1 - y0) / (x1 - x0)
    }
}

/// Convex (lower) or concave (upper) hull of a sample set, by monotone chain.
pub fn envelope_1d(f: &SampledFunction, direction: Direction) -> Result<EnvelopeFn> {
    if f.xs.len() < 2 {
        return Err(Error::Domain("envelope needs at least 2 samples".into()));
    }
    let mut knots: Vec<(f64, f64)> = Vec::with_capacity(f.xs.len());
    for (&x, &y) in f.xs.iter().zip(&f.ys) {
        while knots.len() >= 2 {
            let (ax, ay) = knots[knots.len() - 2];
            let (bx, by) = knots[knots.len() - 1];
            let cross = (bx - ax) * (y - ay) - (by - ay) * (x - ax);
            let pop = match direction {
                Direction::Lower => cross <= 0.0,
                Direction::Upper => cross >= 0.0,
            };
            if pop {
                knots.pop();
            } else {
                break;
            }
        }
        knots.push((x, y));
    }
    Ok(EnvelopeFn { knots, direction })
}

/// Per-size-class packing cost: channel-use cost of carrying `x` messages of
/// `alpha` bits each, weighted for the latency-power trade-off at `beta`.
pub fn phi_class(x: f64, alpha: u64, beta: f64, k_users: u32, ctx: &FblContext) -> f64 {
    ctx.n_code(alpha as f64 * x) * (1.0 + beta * x / k_users as f64)
}

/// Lower convex envelope of [`phi_class`] on `[0, k_users]`, sampled on a
/// uniform grid with `grid` intervals (endpoints included).
pub fn phi_class_envelope(
    alpha: u64,
    beta: f64,
    k_users: u32,
    ctx: &FblContext,
    grid: usize,
) -> Result<EnvelopeFn> {
    if grid < 2 {
        return Err(Error::Domain("grid must have at least 2 intervals".into()));
    }
    let cap = k_users as f64;
    let xs: Vec<f64> = (0..=grid).map(|i| cap * i as f64 / grid as f64).collect();
    let ys: Vec<f64> = xs.iter().map(|&x| phi_class(x, alpha, beta, k_users, ctx)).collect();
    envelope_1d(&SampledFunction::new(xs, ys)?, Direction::Lower)
}

/// Evaluator for the multivariate lower convex envelope of the grouped
/// packing cost, via its decomposition into per-class 1-D envelopes and a
/// convex search over the class-weight simplex.
#[derive(Debug, Clone)]
pub struct PhiBreve {
    pub envs: Vec<EnvelopeFn>,
    pub k_users: u32,
    pub beta: f64,
}

impl PhiBreve {
    pub fn new(alphas: &[u64], beta: f64, k_users: u32, ctx: &FblContext, grid: usize) -> Result<Self> {
        let envs = alphas
            .iter()
            .map(|&a| phi_class_envelope(a, beta, k_users, ctx, grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { envs, k_users, beta })
    }

    fn term(&self, s: usize, x: f64, zeta: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else {
            zeta * self.envs[s].eval(x / zeta)
        }
    }

    /// Envelope value at a nonnegative class-count vector.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.envs.len() {
            return Err(Error::Domain(format!(
                "expected {} components, got {}",
                self.envs.len(),
                x.len()
            )));
        }
        if x.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("negative component".into()));
        }
        if x.iter().all(|&v| v == 0.0) {
            return Ok(0.0);
        }
        match x.len() {
            1 => Ok(self.envs[0].eval(x[0])),
            2 => {
                let f = |z: f64| self.term(0, x[0], z) + self.term(1, x[1], 1.0 - z);
                let (_, v) = golden_min(f, ZETA_FLOOR, 1.0 - ZETA_FLOOR, 1e-12);
                Ok(v)
            }
            s => {
                // coordinate descent over simplex pairs from the uniform start
                let mut zeta = vec![1.0 / s as f64; s];
                let obj = |z: &[f64]| -> f64 {
                    z.iter().enumerate().map(|(i, &zi)| self.term(i, x[i], zi)).sum()
                };
                let mut best = obj(&zeta);
                for _ in 0..100 {
                    let before = best;
                    for i in 0..s {
                        for j in (i + 1)..s {
                            let mass = zeta[i] + zeta[j];
                            if mass <= 2.0 * ZETA_FLOOR {
                                continue;
                            }
                            let rest: f64 = (0..s)
                                .filter(|&t| t != i && t != j)
                                .map(|t| self.term(t, x[t], zeta[t]))
                                .sum();
                            let f = |t: f64| {
                                rest + self.term(i, x[i], t) + self.term(j, x[j], mass - t)
                            };
                            let (t, v) =
                                golden_min(f, ZETA_FLOOR, mass - ZETA_FLOOR, 1e-12);
                            if v < best {
                                zeta[i] = t;
                                zeta[j] = mass - t;
                                best = v;
                            }
                        }
                    }
                    if before - best <= 1e-9 * best.abs().max(1.0) {
                        break;
                    }
                }
                Ok(best)
            }
        }
    }
}

/// Convenience wrapper building the per-class envelopes on the fly.
pub fn phi_breve(
    x: &[f64],
    beta: f64,
    alphas: &[u64],
    k_users: u32,
    ctx: &FblContext,
) -> Result<f64> {
    PhiBreve::new(alphas, beta, k_users, ctx, DEFAULT_GRID)?.eval(x)
}

/// Direct two-class envelope oracle: the exact lower convex hull of the
/// packing cost sampled on a `grid_n` x `grid_n` grid over `[0, K]^2`,
/// evaluated by linear programming over hull facets. Brute force; used to
/// cross-check the simplex decomposition.
pub fn phi_breve_direct_2d(
    x: [f64; 2],
    beta: f64,
    alphas: &[u64],
    k_users: u32,
    ctx: &FblContext,
    grid_n: usize,
) -> Result<f64> {
    if alphas.len() != 2 {
        return Err(Error::Unsupported(
            "direct envelope oracle only supports two size classes".into(),
        ));
    }
    if grid_n < 2 {
        return Err(Error::Domain("grid_n must be >= 2".into()));
    }
    let cap = k_users as f64;
    if x.iter().any(|&v| v < 0.0 || v > cap) {
        return Err(Error::Domain("query outside [0, K]^2".into()));
    }
    let mut cols: Vec<[f64; 3]> = Vec::with_capacity(grid_n * grid_n);
    let mut costs: Vec<f64> = Vec::with_capacity(grid_n * grid_n);
    for i in 0..grid_n {
        for j in 0..grid_n {
            let g1 = cap * i as f64 / (grid_n - 1) as f64;
            let g2 = cap * j as f64 / (grid_n - 1) as f64;
            let k_bits = alphas[0] as f64 * g1 + alphas[1] as f64 * g2;
            let f = ctx.n_code(k_bits) * (1.0 + beta * (g1 + g2) / cap);
            cols.push([g1, g2, 1.0]);
            costs.push(f);
        }
    }
    lp_min(&cols, &costs, [x[0], x[1], 1.0])
}

/// Minimize `c . lambda` over `lambda >= 0` with `A lambda = b` (A has three
/// rows, given column-wise). Dense big-M simplex with Bland's rule; adequate
/// for the oracle's problem sizes.
fn lp_min(cols: &[[f64; 3]], costs: &[f64], b: [f64; 3]) -> Result<f64> {
    let n = cols.len();
    let scale = costs.iter().cloned().fold(1.0f64, f64::max);
    let big_m = 1e9 * scale;
    // columns 0..n are the samples, n..n+3 the artificial identity
    let col = |j: usize| -> [f64; 3] {
        if j < n {
            cols[j]
        } else {
            let mut e = [0.0; 3];
            e[j - n] = 1.0;
            e
        }
    };
    let cost = |j: usize| if j < n { costs[j] } else { big_m };
    let mut basis = [n, n + 1, n + 2];
    for iter in 0..50_000 {
        // basis inverse via adjugate of the 3x3 basis matrix
        let m: [[f64; 3]; 3] = {
            let c0 = col(basis[0]);
            let c1 = col(basis[1]);
            let c2 = col(basis[2]);
            [[c0[0], c1[0], c2[0]], [c0[1], c1[1], c2[1]], [c0[2], c1[2], c2[2]]]
        };
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        if det.abs() < 1e-300 {
            return Err(Error::Domain("singular basis in envelope LP".into()));
        }
        let inv = [
            [
                (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det,
                (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det,
                (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det,
            ],
            [
                (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det,
                (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det,
                (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det,
            ],
            [
                (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det,
                (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det,
                (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det,
            ],
        ];
        let apply = |v: [f64; 3]| -> [f64; 3] {
            [
                inv[0][0] * v[0] + inv[0][1] * v[1] + inv[0][2] * v[2],
                inv[1][0] * v[0] + inv[1][1] * v[1] + inv[1][2] * v[2],
                inv[2][0] * v[0] + inv[2][1] * v[1] + inv[2][2] * v[2],
            ]
        };
        let xb = apply(b);
        // simplex multipliers y = cB^T B^{-1}
        let cb = [cost(basis[0]), cost(basis[1]), cost(basis[2])];
        let y = [
            cb[0] * inv[0][0] + cb[1] * inv[1][0] + cb[2] * inv[2][0],
            cb[0] * inv[0][1] + cb[1] * inv[1][1] + cb[2] * inv[2][1],
            cb[0] * inv[0][2] + cb[1] * inv[1][2] + cb[2] * inv[2][2],
        ];
        // Dantzig's rule at first for speed; Bland's rule (first negative
        // reduced cost) after a while to guarantee termination
        let bland = iter >= 2_000;
        let mut entering = None;
        let mut most_negative = 0.0f64;
        for j in 0..n {
            if basis.contains(&j) {
                continue;
            }
            let a = cols[j];
            let reduced = costs[j] - (y[0] * a[0] + y[1] * a[1] + y[2] * a[2]);
            if reduced < -1e-9 * scale.max(1.0) {
                if bland {
                    entering = Some(j);
                    break;
                }
                if reduced < most_negative {
                    most_negative = reduced;
                    entering = Some(j);
                }
            }
        }
        let Some(j) = entering else {
            let mut value = 0.0;
            for r in 0..3 {
                if basis[r] >= n {
                    // artificials may linger at a degenerate zero level, but
                    // positive flow means the query is outside the hull
                    if xb[r] > 1e-7 {
                        return Err(Error::Domain("envelope LP query outside hull".into()));
                    }
                } else {
                    value += costs[basis[r]] * xb[r];
                }
            }
            return Ok(value);
        };
        let d = apply(col(j));
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for r in 0..3 {
            if d[r] > 1e-12 {
                let ratio = xb[r].max(0.0) / d[r];
                // Bland's rule: break ratio ties toward the smallest basis
                // index, which rules out cycling on degenerate pivots.
                let better = match leave {
                    None => true,
                    Some(lr) => {
                        ratio < best_ratio - 1e-15
                            || ((ratio - best_ratio).abs() <= 1e-15 && basis[r] < basis[lr])
                    }
                };
                if better {
                    best_ratio = ratio;
                    leave = Some(r);
                }
            }
        }
        let Some(r) = leave else {
            return Err(Error::Domain("unbounded envelope LP".into()));
        };
        basis[r] = j;
    }
    Err(Error::Domain("envelope LP failed to converge".into()))
}

/// Golden-section minimization of a unimodal function on `[a, b]`.
pub(crate) fn golden_min<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (a, b);
    let mut c = b - (b - a) * INVPHI;
    let mut d = a + (b - a) * INVPHI;
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > tol * (a.abs() + b.abs()).max(1.0) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - (b - a) * INVPHI;
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + (b - a) * INVPHI;
            fd = f(d);
        }
    }
    let xm = 0.5 * (a + b);
    (xm, f(xm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbl::ChannelParams;

    fn ctx() -> FblContext {
        FblContext::new(ChannelParams::new(1.0).unwrap(), 1e-4).unwrap()
    }

    #[test]
    fn convex_samples_pass_through() {
        let xs = vec![0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let env = envelope_1d(&SampledFunction::new(xs.clone(), ys.clone()).unwrap(), Direction::Lower)
            .unwrap();
        assert_eq!(env.knots.len(), 4);
        for (&x, &y) in xs.iter().zip(&ys) {
            assert!((env.eval(x) - y).abs() < 1e-12);
        }
    }

    #[test]
    fn concave_function_collapses_to_chord() {
        let xs: Vec<f64> = (0..=100).map(|i| i as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.sqrt()).collect();
        let last = *ys.last().unwrap();
        let env =
            envelope_1d(&SampledFunction::new(xs, ys).unwrap(), Direction::Lower).unwrap();
        assert_eq!(env.knots.len(), 2);
        assert!((env.eval(5.0) - last / 2.0).abs() < 1e-12);
    }

    #[test]
    fn envelope_below_samples_with_nondecreasing_slopes() {
        let xs: Vec<f64> = (0..=50).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (x * 0.3).sin() * 5.0 + 0.05 * x * x).collect();
        let sf = SampledFunction::new(xs.clone(), ys.clone()).unwrap();
        let env = envelope_1d(&sf, Direction::Lower).unwrap();
        for (&x, &y) in xs.iter().zip(&ys) {
            assert!(env.eval(x) <= y + 1e-9);
        }
        let slopes: Vec<f64> = env
            .knots
            .windows(2)
            .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
            .collect();
        for w in slopes.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn extrapolation_extends_final_slope() {
        let env = envelope_1d(
            &SampledFunction::new(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 3.0]).unwrap(),
            Direction::Lower,
        )
        .unwrap();
        assert!((env.eval(4.0) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples_rejected() {
        let sf = SampledFunction::new(vec![0.0], vec![0.0]).unwrap();
        assert!(envelope_1d(&sf, Direction::Lower).is_err());
        assert!(SampledFunction::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn packing_cost_chord_value() {
        // One class, beta = 0, alpha = 100, K = 16: the cost is concave so the
        // envelope on [0, 16] is the chord to (16, n_code(1600)). Endpoint from
        // the direct three-term formula: n_code(1600) = 3560.1.
        let ctx = ctx();
        let n1600 = ctx.n_code(1600.0);
        assert!((n1600 - 3560.1).abs() < 0.1);
        let env = phi_class_envelope(100, 0.0, 16, &ctx, DEFAULT_GRID).unwrap();
        assert!((env.eval(1.0) - n1600 / 16.0).abs() < 0.2);
        assert!((env.eval(1.0) - 222.5).abs() < 0.2);
    }

    #[test]
    fn single_class_simplex_is_forced() {
        let ctx = ctx();
        let pb = PhiBreve::new(&[100], 0.0, 16, &ctx, DEFAULT_GRID).unwrap();
        let direct = pb.envs[0].eval(0.7);
        assert_eq!(pb.eval(&[0.7]).unwrap(), direct);
    }

    #[test]
    fn equal_sizes_reduce_to_single_class() {
        // Two classes with the same size: the cost depends only on the total,
        // so at (1/2, 1/2) the decomposition must match the one-class value at 1.
        let ctx = ctx();
        let two = PhiBreve::new(&[100, 100], 0.3, 16, &ctx, DEFAULT_GRID).unwrap();
        let one = PhiBreve::new(&[100], 0.3, 16, &ctx, DEFAULT_GRID).unwrap();
        let a = two.eval(&[0.5, 0.5]).unwrap();
        let b = one.eval(&[1.0]).unwrap();
        assert!((a - b).abs() <= 1e-4 * b, "{a} vs {b}");
    }

    #[test]
    fn zero_component_boundary_limit() {
        let ctx = ctx();
        let two = PhiBreve::new(&[50, 150], 0.2, 16, &ctx, DEFAULT_GRID).unwrap();
        let v2 = two.eval(&[0.8, 0.0]).unwrap();
        let one = PhiBreve::new(&[50], 0.2, 16, &ctx, DEFAULT_GRID).unwrap();
        let v1 = one.eval(&[0.8]).unwrap();
        assert!((v2 - v1).abs() <= 1e-4 * v1.max(1.0), "{v2} vs {v1}");
    }

    #[test]
    fn negative_component_rejected() {
        let ctx = ctx();
        let pb = PhiBreve::new(&[50, 150], 0.2, 16, &ctx, 64).unwrap();
        assert!(pb.eval(&[-0.1, 0.2]).is_err());
    }

    #[test]
    fn direct_oracle_trivial_points() {
        let ctx = ctx();
        let v = phi_breve_direct_2d([0.0, 0.0], 0.2, &[50, 150], 16, &ctx, 17).unwrap();
        assert!(v.abs() < 1e-9);
        assert!(phi_breve_direct_2d([0.0, 0.0], 0.2, &[50], 16, &ctx, 17).is_err());
    }

    #[test]
    fn direct_oracle_below_cost_at_grid_points() {
        let ctx = ctx();
        let grid_n = 9;
        for i in 0..grid_n {
            for j in 0..grid_n {
                let x1 = 16.0 * i as f64 / (grid_n - 1) as f64;
                let x2 = 16.0 * j as f64 / (grid_n - 1) as f64;
                let cost = ctx.n_code(50.0 * x1 + 150.0 * x2) * (1.0 + 0.2 * (x1 + x2) / 16.0);
                let hull =
                    phi_breve_direct_2d([x1, x2], 0.2, &[50, 150], 16, &ctx, grid_n).unwrap();
                assert!(hull <= cost + 1e-6 * cost.max(1.0), "({x1}, {x2})");
            }
        }
    }

    #[test]
    fn decomposition_matches_direct_oracle() {
        // Mutual agreement at random simplex-scaled points for K=16,
        // alphas (50, 150). Both routes approximate the same envelope.
        use rand::{Rng, SeedableRng};
        let ctx = ctx();
        let beta = 0.1;
        let pb = PhiBreve::new(&[50, 150], beta, 16, &ctx, DEFAULT_GRID).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..25 {
            let w: f64 = rng.gen();
            let scale: f64 = rng.gen::<f64>() * 15.0 + 0.5;
            let x = [scale * w, scale * (1.0 - w)];
            let a = pb.eval(&x).unwrap();
            let b = phi_breve_direct_2d(x, beta, &[50, 150], 16, &ctx, 65).unwrap();
            assert!((a - b).abs() <= 0.01 * b.max(1e-9), "x = {x:?}: {a} vs {b}");
        }
    }

    #[test]
    fn decomposition_convex_along_segments() {
        use rand::{Rng, SeedableRng};
        let ctx = ctx();
        let pb = PhiBreve::new(&[50, 150], 0.25, 16, &ctx, DEFAULT_GRID).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = [rng.gen::<f64>() * 16.0, rng.gen::<f64>() * 16.0];
            let b = [rng.gen::<f64>() * 16.0, rng.gen::<f64>() * 16.0];
            let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let fa = pb.eval(&a).unwrap();
            let fb = pb.eval(&b).unwrap();
            let fm = pb.eval(&mid).unwrap();
            assert!(
                fm <= 0.5 * (fa + fb) + 1e-6 * (fa + fb).max(1.0),
                "midpoint convexity at {a:?}-{b:?}"
            );
        }
    }

    #[test]
    fn decomposition_below_raw_cost() {
        use rand::{Rng, SeedableRng};
        let ctx = ctx();
        let beta = 0.25;
        let pb = PhiBreve::new(&[50, 150], beta, 16, &ctx, DEFAULT_GRID).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let x = [rng.gen::<f64>() * 16.0, rng.gen::<f64>() * 16.0];
            let raw = ctx.n_code(50.0 * x[0] + 150.0 * x[1]) * (1.0 + beta * (x[0] + x[1]) / 16.0);
            let env = pb.eval(&x).unwrap();
            assert!(env <= raw + 1e-6 * raw.max(1.0), "x = {x:?}");
        }
    }

    #[test]
    fn grid_refinement_is_stable() {
        let ctx = ctx();
        let coarse = PhiBreve::new(&[50, 150], 0.1, 16, &ctx, DEFAULT_GRID).unwrap();
        let fine = PhiBreve::new(&[50, 150], 0.1, 16, &ctx, 2 * DEFAULT_GRID).unwrap();
        for x in [[1.0, 2.0], [0.3, 0.3], [7.5, 4.2], [15.0, 0.5]] {
            let a = coarse.eval(&x).unwrap();
            let b = fine.eval(&x).unwrap();
            assert!((a - b).abs() <= 1e-3 * b.max(1.0), "x = {x:?}");
        }
    }

    #[test]
    fn beyond_last_knot_is_eventually_linear() {
        // For beta > 0 the packing cost is eventually convex, so the envelope
        // coincides with its final linear extension past the last knot.
        let ctx = ctx();
        let env = phi_class_envelope(100, 0.5, 16, &ctx, DEFAULT_GRID).unwrap();
        let x0 = env.knots.last().unwrap().0;
        let mut prev_diff = None;
        for i in 0..10 {
            let x = x0 + i as f64 * 0.5;
            let diff = env.eval(x + 0.5) - env.eval(x);
            if let Some(p) = prev_diff {
                let d2: f64 = diff - p;
                assert!(d2.abs() < 1e-9);
            }
            prev_diff = Some(diff);
        }
    }
}
