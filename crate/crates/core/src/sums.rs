//! Binary-sum randomizers (randomized response, zsum) and bounded-value sums
//! built from split-and-mix secure aggregation plus infinitely divisible
//! discrete-Laplace noise.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::accounting::{binomial_delta_exact, AccountantConfig, PrivacyBudget};
use crate::error::{Error, Result};
use crate::model::{MessageBundle, Symbol, Transcript};

/// Randomized response: with probability `p` emit a fair coin, otherwise the
/// data bit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RRParams {
    pub p: f64,
    pub n: u64,
}

/// zsum: each user sends (x, Ber(r)). With `small_n_fallback` active, honest
/// users report (0,0) instead.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZsumParams {
    pub r: f64,
    pub n: u64,
    pub small_n_fallback: bool,
}

/// Split-and-mix secure aggregation over Z_q with `m` shares per user, plus
/// fixed-point encoding at granularity `scale` and discrete-Laplace noise
/// with decay `alpha = e^(-eps)` distributed across `n` users.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitMixParams {
    pub q: u64,
    pub m: u32,
    pub scale: u64,
    pub alpha: f64,
    pub n: u64,
}

impl SplitMixParams {
    /// Defaults: scale = ceil(sqrt(n)), q = smallest power of two > 4*n*scale.
    pub fn defaults(n: u64, alpha: f64, m: u32) -> Self {
        let scale = (n as f64).sqrt().ceil() as u64;
        let q = (4 * n * scale + 1).next_power_of_two();
        SplitMixParams { q, m, scale, alpha, n }
    }
}

pub fn rr_randomize<R: Rng>(x: u8, params: &RRParams, rng: &mut R) -> MessageBundle {
    let bit = if rng.gen_bool(params.p) {
        u32::from(rng.gen_bool(0.5))
    } else {
        u32::from(x)
    };
    MessageBundle::new(vec![Symbol::new(&[bit])])
}

/// Unbiased estimator `(sum of bits - n*p/2) / (1-p)`.
pub fn rr_analyze(t: &Transcript, params: &RRParams) -> Result<f64> {
    if params.p >= 1.0 {
        return Err(Error::UndefinedEstimator("rr estimator requires p < 1".into()));
    }
    let sum: u64 = t.entries().iter().map(|s| u64::from(s.parts()[0])).sum();
    Ok((sum as f64 - params.n as f64 * params.p / 2.0) / (1.0 - params.p))
}

pub fn zsum_randomize<R: Rng>(x: u8, params: &ZsumParams, rng: &mut R) -> MessageBundle {
    if params.small_n_fallback {
        return MessageBundle::new(vec![Symbol::new(&[0]), Symbol::new(&[0])]);
    }
    let noise = u32::from(rng.gen_bool(params.r));
    MessageBundle::new(vec![Symbol::new(&[u32::from(x)]), Symbol::new(&[noise])])
}

/// Truncating estimator: 0 when the total bit count is at most n, otherwise
/// total - n*r rounded, clamped at zero.
pub fn zsum_analyze(t: &Transcript, params: &ZsumParams) -> i64 {
    let total: u64 = t.entries().iter().map(|s| u64::from(s.parts()[0])).sum();
    zsum_estimate_from_total(total, params)
}

pub(crate) fn zsum_estimate_from_total(total: u64, params: &ZsumParams) -> i64 {
    if total <= params.n {
        return 0;
    }
    let est = (total as f64 - params.n as f64 * params.r).round() as i64;
    est.max(0)
}

/// Solves for the zsum noise bias `r = 1 - kappa*ln(1/delta)/(eps^2 n)` and
/// verifies it with the exact binomial accountant on the honest half
/// population; activates the (0,0) fallback when no r in (1/2, 1) certifies.
pub fn solve_zsum_r(n: u64, budget: &PrivacyBudget, config: &AccountantConfig) -> ZsumParams {
    let eps = budget.epsilon;
    let formula =
        1.0 - config.kappa * (1.0 / budget.delta).ln() / (eps * eps * n as f64);
    let certify = |r: f64| binomial_delta_exact(n / 2, r, eps) <= budget.delta;
    if formula > 0.5 && formula < 1.0 && certify(formula) {
        return ZsumParams { r: formula, n, small_n_fallback: false };
    }
    if formula > 0.5 && formula < 1.0 {
        // Formula value failed the exact check; search downward for the
        // largest certifying r above 1/2.
        if certify(0.5 + 1e-9) {
            let (mut lo, mut hi) = (0.5, formula);
            while hi - lo > 1e-6 {
                let mid = 0.5 * (lo + hi);
                if certify(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return ZsumParams { r: lo, n, small_n_fallback: false };
        }
    }
    ZsumParams { r: 0.5, n, small_n_fallback: true }
}

/// Splits `v` into `m` additive shares, uniform over the tuples in Z_q^m that
/// sum to `v` mod q.
pub fn splitmix_encode<R: Rng>(v: u64, params: &SplitMixParams, rng: &mut R) -> MessageBundle {
    debug_assert!(v < params.q, "residue out of range");
    let q = params.q;
    let mut rest = v % q;
    let mut shares = Vec::with_capacity(params.m as usize);
    for _ in 1..params.m {
        let s = rng.gen_range(0..q);
        shares.push(s);
        rest = (rest + q - s) % q;
    }
    shares.push(rest);
    MessageBundle::new(shares.into_iter().map(|s| Symbol::new(&[s as u32])).collect())
}

/// Sum of all shares mod q; empty transcript decodes to 0.
pub fn splitmix_decode(t: &Transcript, q: u64) -> u64 {
    t.entries()
        .iter()
        .fold(0u64, |acc, s| (acc + u64::from(s.parts()[0])) % q)
}

/// One share of discrete-Laplace noise: X - Y with X, Y independent
/// negative binomials of shape 1/n and success parameter alpha. Summing n
/// independent shares yields exactly the symmetric geometric distribution
/// with decay alpha (PMF proportional to alpha^|k|).
pub fn polya_divisible_sample<R: Rng>(alpha: f64, n: u64, rng: &mut R) -> i64 {
    negative_binomial_sample(1.0 / n as f64, alpha, rng)
        - negative_binomial_sample(1.0 / n as f64, alpha, rng)
}

/// NB(shape, alpha) via the Gamma-Poisson mixture: Poisson(G) with
/// G ~ Gamma(shape, alpha/(1-alpha)).
fn negative_binomial_sample<R: Rng>(shape: f64, alpha: f64, rng: &mut R) -> i64 {
    debug_assert!(alpha > 0.0 && alpha < 1.0);
    let gamma = Gamma::new(shape, alpha / (1.0 - alpha)).expect("valid gamma");
    let lambda = gamma.sample(rng);
    if lambda <= 0.0 || !lambda.is_finite() {
        return 0;
    }
    Poisson::new(lambda).expect("valid poisson").sample(rng) as i64
}

/// PMF of the negative binomial NB(shape, alpha) on 0..=kmax.
pub fn negative_binomial_pmf(shape: f64, alpha: f64, kmax: usize) -> Vec<f64> {
    use statrs::function::gamma::ln_gamma;
    (0..=kmax)
        .map(|k| {
            let kf = k as f64;
            (ln_gamma(kf + shape) - ln_gamma(kf + 1.0) - ln_gamma(shape)
                + shape * (1.0 - alpha).ln()
                + kf * alpha.ln())
            .exp()
        })
        .collect()
}

/// Exact PMF of one noise share (X - Y) on -kmax..=kmax, index k+kmax.
pub fn polya_share_pmf(alpha: f64, n: u64, kmax: usize) -> Vec<f64> {
    // Tail guard: extend the NB truncation well past kmax.
    let ext = 4 * kmax + 64;
    let nb = negative_binomial_pmf(1.0 / n as f64, alpha, ext);
    let mut out = vec![0.0; 2 * kmax + 1];
    for (x, &px) in nb.iter().enumerate() {
        for (y, &py) in nb.iter().enumerate() {
            let k = x as i64 - y as i64;
            if k.unsigned_abs() as usize <= kmax {
                out[(k + kmax as i64) as usize] += px * py;
            }
        }
    }
    out
}

/// PMF of the symmetric geometric distribution with decay alpha on
/// -kmax..=kmax: P[k] = (1-alpha)/(1+alpha) * alpha^|k|.
pub fn symmetric_geometric_pmf(alpha: f64, kmax: usize) -> Vec<f64> {
    let norm = (1.0 - alpha) / (1.0 + alpha);
    (-(kmax as i64)..=kmax as i64)
        .map(|k| norm * alpha.powi(k.unsigned_abs() as i32))
        .collect()
}

/// Unbiased randomized rounding of `x * scale`.
pub fn randomized_round<R: Rng>(x: f64, scale: u64, rng: &mut R) -> i64 {
    let scaled = x * scale as f64;
    let floor = scaled.floor();
    let frac = scaled - floor;
    floor as i64 + i64::from(frac > 0.0 && rng.gen_bool(frac))
}

/// Randomizer for bounded-value sums: fixed-point round, add one noise share,
/// reduce mod q, and split-and-mix encode. `alpha <= 0` is the debug
/// zero-noise path.
pub fn bounded_sum_randomize<R: Rng>(
    x: f64,
    params: &SplitMixParams,
    rng: &mut R,
) -> Result<MessageBundle> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("bounded-sum input must lie in [0,1], got {x}")));
    }
    let mut y = randomized_round(x, params.scale, rng);
    if params.alpha > 0.0 {
        y += polya_divisible_sample(params.alpha, params.n, rng);
    }
    let residue = y.rem_euclid(params.q as i64) as u64;
    Ok(splitmix_encode(residue, params, rng))
}

/// Decodes the modular sum and interprets it in the window of width q
/// centered at the a-priori midpoint n*scale/2, then rescales.
pub fn bounded_sum_analyze(t: &Transcript, params: &SplitMixParams) -> f64 {
    let s = splitmix_decode(t, params.q) as i64;
    let q = params.q as i64;
    let mid = (params.n * params.scale) as i64 / 2;
    let lo = mid - q / 2;
    let value = lo + (s - lo).rem_euclid(q);
    value as f64 / params.scale as f64
}
