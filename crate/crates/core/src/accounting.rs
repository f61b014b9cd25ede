//! Privacy accountant: exact hockey-stick divergence of the binomial
//! mechanism, the matching asymptotic check, parameter solvers, and
//! amplification-by-shuffling formulas.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Target or measured (epsilon, delta) guarantee.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::Precondition(format!("epsilon must be >= 0, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::Precondition(format!("delta must lie in [0,1), got {delta}")));
        }
        Ok(PrivacyBudget { epsilon, delta })
    }
}

/// Noise family added to a 1-sensitive statistic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NoiseSpec {
    Binomial { trials: u64, p: f64 },
    SymmetricGeometric { alpha: f64 },
    PolyaDifference { alpha: f64, order: u64 },
}

/// Accountant constants. `kappa` is the constant of the binomial-mechanism
/// asymptotic check; the default is calibrated so that a passing asymptotic
/// check is never contradicted by the exact accountant on the unit-test grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountantConfig {
    pub kappa: f64,
}

pub const DEFAULT_KAPPA: f64 = 8.0;

impl Default for AccountantConfig {
    fn default() -> Self {
        AccountantConfig { kappa: DEFAULT_KAPPA }
    }
}

fn ln_binom_pmf(trials: u64, k: u64, p: f64) -> f64 {
    let n = trials as f64;
    let kf = k as f64;
    ln_gamma(n + 1.0) - ln_gamma(kf + 1.0) - ln_gamma(n - kf + 1.0)
        + kf * p.ln()
        + (n - kf) * (1.0 - p).ln()
}

/// PMF of Bin(trials, p) over 0..=trials.
pub fn binomial_pmf(trials: u64, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        let mut v = vec![0.0; trials as usize + 1];
        v[0] = 1.0;
        return v;
    }
    if p >= 1.0 {
        let mut v = vec![0.0; trials as usize + 1];
        v[trials as usize] = 1.0;
        return v;
    }
    if trials <= 64 {
        // Small counts: exact integer binomial coefficients avoid the float
        // noise of the log-gamma route.
        let mut coeffs = vec![1u128; trials as usize + 1];
        for k in 1..=trials as usize {
            coeffs[k] = coeffs[k - 1] * (trials as u128 - k as u128 + 1) / k as u128;
        }
        return (0..=trials as usize)
            .map(|k| coeffs[k] as f64 * p.powi(k as i32) * (1.0 - p).powi((trials as usize - k) as i32))
            .collect();
    }
    (0..=trials).map(|k| ln_binom_pmf(trials, k, p).exp()).collect()
}

fn hockey_stick_shift(pmf: &[f64], eps: f64, shift: i64) -> f64 {
    // sum_k max(P(k) - e^eps * P(k - shift), 0)
    let e = eps.exp();
    let mut total = 0.0;
    let len = pmf.len() as i64;
    let lo = 0.min(shift);
    let hi = (len - 1).max(len - 1 + shift);
    for k in lo..=hi {
        let p = if (0..len).contains(&k) { pmf[k as usize] } else { 0.0 };
        let ks = k - shift;
        let q = if (0..len).contains(&ks) { pmf[ks as usize] } else { 0.0 };
        let diff = p - e * q;
        if diff > 0.0 {
            total += diff;
        }
    }
    total.min(1.0)
}

/// Tight delta at `eps` for the binomial mechanism on a 1-sensitive statistic:
/// the worst hockey-stick divergence between Bin(trials, p) and its +-1
/// shifts. `trials = 0` means no noise at all, so disjoint shifted supports
/// and delta = 1.
pub fn binomial_delta_exact(trials: u64, p: f64, eps: f64) -> f64 {
    assert!(eps >= 0.0, "eps must be nonnegative");
    if trials == 0 {
        return 1.0;
    }
    assert!(p > 0.0 && p < 1.0, "p must lie in (0,1)");
    let pmf = binomial_pmf(trials, p);
    hockey_stick_shift(&pmf, eps, 1).max(hockey_stick_shift(&pmf, eps, -1))
}

/// Asymptotic sufficiency check `trials * min(p, 1-p) >= kappa/eps^2 * ln(1/delta)`
/// (boundary inclusive). Valid only for eps, delta in (0,1).
pub fn binomial_check_asymptotic(
    trials: u64,
    p: f64,
    budget: &PrivacyBudget,
    config: &AccountantConfig,
) -> Result<bool> {
    if !(budget.epsilon > 0.0 && budget.epsilon < 1.0) {
        return Err(Error::Precondition(format!(
            "asymptotic check requires epsilon in (0,1), got {}",
            budget.epsilon
        )));
    }
    if !(budget.delta > 0.0 && budget.delta < 1.0) {
        return Err(Error::Precondition(format!(
            "asymptotic check requires delta in (0,1), got {}",
            budget.delta
        )));
    }
    let lhs = trials as f64 * p.min(1.0 - p);
    let rhs = config.kappa / (budget.epsilon * budget.epsilon) * (1.0 / budget.delta).ln();
    Ok(lhs >= rhs)
}

/// Largest `t` such that `P[Bin(trials, p) < t] <= delta`, i.e. a
/// (1-delta)-lower-confidence bound on the binomial count.
pub fn binomial_lcb(trials: u64, p: f64, delta: f64) -> u64 {
    if p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return trials;
    }
    let pmf = binomial_pmf(trials, p);
    let mut cdf = 0.0;
    let mut t = 0u64;
    for (k, prob) in pmf.iter().enumerate() {
        // After adding pmf[k], cdf = P[Bin <= k] = P[Bin < k+1].
        cdf += prob;
        if cdf <= delta {
            t = k as u64 + 1;
        } else {
            break;
        }
    }
    t
}

/// Smallest randomized-response noise probability `p` (bisection to 1e-6)
/// whose realized blanket certifies the budget on the honest half-population:
/// the (1-delta)-lower bound on |H| ~ Bin(n/2, p) must make the exact binomial
/// accountant report delta' <= delta at the target epsilon. When no p <= 1/2
/// suffices, falls back to p = 1 (full noise).
pub fn solve_rr_p(n: u64, budget: &PrivacyBudget) -> Result<f64> {
    if n < 2 {
        return Err(Error::Precondition(format!("solve_rr_p requires n >= 2, got {n}")));
    }
    let half = n / 2;
    let certify = |p: f64| -> bool {
        let t = binomial_lcb(half, p, budget.delta);
        t >= 1 && binomial_delta_exact(t, 0.5, budget.epsilon) <= budget.delta
    };
    if !certify(0.5) {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 0.5f64);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if certify(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Amplification by shuffling via subsampling and advanced composition:
/// `eps' = 12 * eps * sqrt(ln(1/delta) / n)`, valid for eps < 1/2, n > 1000,
/// delta <= 1/100.
pub fn amplify_subsampling(eps: f64, n: u64, delta: f64) -> Result<f64> {
    if eps >= 0.5 {
        return Err(Error::Precondition(format!("requires eps < 1/2, got {eps}")));
    }
    if n <= 1000 {
        return Err(Error::Precondition(format!("requires n > 1000, got {n}")));
    }
    if delta > 0.01 {
        return Err(Error::Precondition(format!("requires delta <= 1/100, got {delta}")));
    }
    Ok(12.0 * eps * ((1.0 / delta).ln() / n as f64).sqrt())
}

/// Blanket-decomposition amplification:
/// `eps' = c * min(eps,1) * e^eps * sqrt(ln(1/delta) / n)`, valid while
/// `e^eps < sqrt(n / ln(1/delta))`. The bound is only known up to a
/// constant, so `c` is caller-supplied.
pub fn amplify_blanket(eps: f64, n: u64, delta: f64, c: f64) -> Result<f64> {
    let bound = (n as f64 / (1.0 / delta).ln()).sqrt();
    if eps.exp() >= bound {
        return Err(Error::Precondition(format!(
            "requires e^eps < sqrt(n/ln(1/delta)) = {bound}, got e^eps = {}",
            eps.exp()
        )));
    }
    Ok(c * eps.min(1.0) * eps.exp() * ((1.0 / delta).ln() / n as f64).sqrt())
}

/// Splits a finite-alphabet randomizer into an input-independent blanket and
/// a data-dependent remainder. `dists[x][y]` is P[R(x) = y]. Returns the
/// maximal blanket weight `gamma = sum_y min_x P[R(x)=y]` and the blanket
/// distribution (None when gamma = 0).
pub fn blanket_decompose(dists: &[Vec<f64>]) -> (f64, Option<Vec<f64>>) {
    assert!(!dists.is_empty());
    let width = dists[0].len();
    let mins: Vec<f64> = (0..width)
        .map(|y| dists.iter().map(|row| row[y]).fold(f64::INFINITY, f64::min))
        .collect();
    let gamma: f64 = mins.iter().sum();
    if gamma <= 0.0 {
        return (0.0, None);
    }
    (gamma, Some(mins.iter().map(|m| m / gamma).collect()))
}
