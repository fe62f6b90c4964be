//! Finite-blocklength numerics for the real AWGN channel: capacity,
//! dispersion, the inverse Q-function, and the code-length approximation
//! `N(k, eps)` together with its upper concave envelope.

use std::f64::consts::{LN_2, PI, SQRT_2};

use statrs::function::erf;

use crate::error::{Error, Result};

/// Gaussian tail probability Q(x) = P[N(0,1) > x].
pub fn q_func(x: f64) -> f64 {
    0.5 * erf::erfc(x / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Inverse of [`q_func`], accurate to better than 1e-10 absolute.
///
/// A rational initial guess (via the inverse complementary error function)
/// is polished with two Newton steps on `Q(x) = p`.
pub fn inverse_q(p: f64) -> Result<f64> {
    if !p.is_finite() || p <= 0.0 || p >= 1.0 {
        return Err(Error::Domain(format!("inverse_q: p = {p} outside (0, 1)")));
    }
    let mut x = SQRT_2 * erf::erfc_inv(2.0 * p);
    for _ in 0..2 {
        let d = normal_pdf(x);
        if d > 0.0 {
            x += (q_func(x) - p) / d;
        }
    }
    Ok(x)
}

/// AWGN broadcast channel parameters. All users share the same unit gain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    /// Linear SNR (short-term power constraint), dimensionless.
    pub snr: f64,
    /// Per-user gain, fixed to 1.
    pub gain: f64,
}

impl ChannelParams {
    pub fn new(snr: f64) -> Result<Self> {
        if !snr.is_finite() || snr <= 0.0 {
            return Err(Error::Domain(format!("channel SNR must be positive, got {snr}")));
        }
        Ok(Self { snr, gain: 1.0 })
    }

    /// SNR given in dB, converted once at the boundary.
    pub fn from_db(snr_db: f64) -> Result<Self> {
        Self::new(10f64.powf(snr_db / 10.0))
    }
}

/// Derived channel constants for code-length evaluation at one target error
/// probability (or, equivalently, one fixed `Q^{-1}` value).
///
/// Immutable after construction and safe to share across threads.
#[derive(Debug, Clone)]
pub struct FblContext {
    /// Capacity in bits per channel use: `C = log2(1 + P) / 2`.
    pub c: f64,
    /// Dispersion in bits^2 per channel use.
    pub v: f64,
    /// Block error probability this context encodes lengths for.
    pub eps: f64,
    /// `Q^{-1}(eps)`.
    pub qinv: f64,
    /// Below this payload (bits) the three-term length formula is not concave.
    pub k_threshold: f64,
    /// Tangency point and slope of the envelope's origin chord, present only
    /// when the concavity threshold is at least one bit.
    tangent: Option<(f64, f64)>,
}

impl FblContext {
    pub fn new(channel: ChannelParams, eps: f64) -> Result<Self> {
        let qinv = inverse_q(eps)?;
        Self::from_parts(channel, eps, qinv)
    }

    /// Context with an explicit `Q^{-1}` value. The length formula is affine
    /// in this value, which the epsilon-allocation solver exploits.
    pub fn with_qinv(channel: ChannelParams, qinv: f64) -> Result<Self> {
        Self::from_parts(channel, q_func(qinv), qinv)
    }

    fn from_parts(channel: ChannelParams, eps: f64, qinv: f64) -> Result<Self> {
        let p = channel.snr;
        let c = 0.5 * (1.0 + p).log2();
        let v = p * (p + 2.0) / (2.0 * (p + 1.0) * (p + 1.0)) * std::f64::consts::LOG2_E.powi(2);
        let k_threshold = if qinv > 0.0 {
            4.0 * c / (qinv * qinv * v * LN_2 * LN_2)
        } else {
            f64::INFINITY
        };
        let mut ctx = Self { c, v, eps, qinv, k_threshold, tangent: None };
        if qinv > 0.0 && k_threshold >= 1.0 {
            ctx.tangent = Some(ctx.origin_tangent());
        }
        Ok(ctx)
    }

    /// Steepest chord from the origin through an integer sample of the length
    /// formula. The per-bit cost `n_approx(j)/j` rises to an interior maximum
    /// and then decays toward `1/C`, so the maximizer is finite.
    fn origin_tangent(&self) -> (f64, f64) {
        let per_bit = |j: f64| self.n_approx(j) / j;
        let mut best_j = 1.0;
        let mut best = per_bit(1.0);
        for j in 2..=200_000u64 {
            let g = per_bit(j as f64);
            if g > best {
                best = g;
                best_j = j as f64;
            }
        }
        if best_j >= 199_999.0 {
            // maximum beyond the scanned range: continue on a geometric grid
            let mut j = best_j;
            let mut below = 0;
            while below < 64 && j < 1e18 {
                j *= 1.001;
                let g = per_bit(j);
                if g > best {
                    best = g;
                    best_j = j;
                    below = 0;
                } else {
                    below += 1;
                }
            }
        }
        (best_j, best)
    }

    /// Three-term code-length approximation: channel uses needed to carry
    /// `k` bits at the context's error probability. `n_approx(0) = 0`.
    pub fn n_approx(&self, k: f64) -> f64 {
        if k <= 0.0 {
            return 0.0;
        }
        k / self.c + (self.v * k / self.c.powi(3)).sqrt() * self.qinv
            - (k / self.c).log2() / (2.0 * self.c)
    }

    /// Upper concave envelope of [`Self::n_approx`], anchored at the origin.
    ///
    /// When the concavity threshold is below one bit (true for every scenario
    /// this crate ships), the envelope coincides with `n_approx` on `k >= 1`.
    /// Otherwise the length formula is convex below the threshold and concave
    /// above it, so the envelope is the steepest chord from the origin up to
    /// its tangency point and the formula itself beyond.
    pub fn n_code(&self, k: f64) -> f64 {
        if k <= 0.0 {
            return 0.0;
        }
        if self.qinv <= 0.0 {
            // without the dispersion backoff the per-bit cost approaches 1/C
            // from below, so the concave majorant is the capacity line
            return k / self.c;
        }
        match self.tangent {
            None => self.n_approx(k),
            Some((t, slope)) => {
                if k >= t {
                    self.n_approx(k)
                } else {
                    slope * k
                }
            }
        }
    }
}
