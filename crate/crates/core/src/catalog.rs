//! The protocol catalog: one enum dispatching every randomizer/analyzer pair
//! in the library, plus per-user exact output distributions for the auditor.

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::audit::{brittle1_bundle_dist, brittle2_bundle_dist, rr_bundle_dist, BundleDist};
use crate::error::{Error, Result};
use crate::histograms::{
    countmin_analyze, countmin_params, countmin_randomize, optin_analyze, optin_randomize,
    parallel_hist_analyze, parallel_hist_randomize, HistogramEstimate, OptInParams,
};
use crate::model::{MessageBundle, PublicRandomness, Symbol, Transcript};
use crate::sums::{
    bounded_sum_analyze, bounded_sum_randomize, rr_analyze, rr_randomize, splitmix_decode,
    splitmix_encode, zsum_analyze, zsum_randomize, RRParams, SplitMixParams, ZsumParams,
};

/// One user's input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Row {
    Bit(u8),
    Value(u64),
    Real(f64),
}

/// Analyzer output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Output {
    Scalar(f64),
    Histogram(HistogramEstimate),
}

/// Every protocol the harness can run. Parameters are the exact structs the
/// underlying modules consume, so a deserialized config is runnable as-is.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "protocol", rename_all = "snake_case")]
pub enum Protocol {
    RandomizedResponse(RRParams),
    Zsum(ZsumParams),
    ParallelHist { d: u64, zsum: ZsumParams },
    OptInHist(OptInParams),
    CountMin { n: u64, d: u64, t_reps: u32, zsum: ZsumParams },
    SplitMix { q: u64, m: u32, n: u64 },
    BoundedSum(SplitMixParams),
    Brittle1 { n: u64 },
    Brittle2 { n: u64 },
}

fn bit_of(row: &Row) -> Result<u8> {
    match row {
        Row::Bit(b) if *b <= 1 => Ok(*b),
        other => Err(Error::Domain(format!("expected a bit, got {other:?}"))),
    }
}

fn value_of(row: &Row, lo: u64, hi: u64) -> Result<u64> {
    match row {
        Row::Value(v) if (lo..=hi).contains(v) => Ok(*v),
        other => Err(Error::Domain(format!("expected a value in [{lo}, {hi}], got {other:?}"))),
    }
}

fn real_of(row: &Row) -> Result<f64> {
    match row {
        Row::Real(x) => Ok(*x),
        other => Err(Error::Domain(format!("expected a real, got {other:?}"))),
    }
}

impl Protocol {
    /// The population size the parameters were solved for.
    pub fn n(&self) -> u64 {
        match self {
            Protocol::RandomizedResponse(p) => p.n,
            Protocol::Zsum(p) => p.n,
            Protocol::ParallelHist { zsum, .. } => zsum.n,
            Protocol::OptInHist(p) => p.n,
            Protocol::CountMin { n, .. } => *n,
            Protocol::SplitMix { n, .. } => *n,
            Protocol::BoundedSum(p) => p.n,
            Protocol::Brittle1 { n } | Protocol::Brittle2 { n } => *n,
        }
    }

    pub fn randomize(
        &self,
        row: &Row,
        rng: &mut ChaCha12Rng,
        public: &PublicRandomness,
    ) -> Result<MessageBundle> {
        match self {
            Protocol::RandomizedResponse(p) => Ok(rr_randomize(bit_of(row)?, p, rng)),
            Protocol::Zsum(p) => Ok(zsum_randomize(bit_of(row)?, p, rng)),
            Protocol::ParallelHist { d, zsum } => {
                parallel_hist_randomize(value_of(row, 1, *d)?, *d, zsum, rng)
            }
            Protocol::OptInHist(p) => optin_randomize(value_of(row, 1, p.d)?, p, rng),
            Protocol::CountMin { n, d, t_reps, zsum } => {
                let family = countmin_params(*n, *d, *t_reps, public);
                let d_hat = family.d_hat;
                countmin_randomize(
                    value_of(row, 1, *d)?,
                    &family,
                    |hashed, r| parallel_hist_randomize(hashed, d_hat, zsum, r),
                    rng,
                )
            }
            Protocol::SplitMix { q, m, n } => {
                let v = value_of(row, 0, q - 1)?;
                let params = SplitMixParams { q: *q, m: *m, scale: 1, alpha: 0.0, n: *n };
                Ok(splitmix_encode(v, &params, rng))
            }
            Protocol::BoundedSum(p) => bounded_sum_randomize(real_of(row)?, p, rng),
            Protocol::Brittle1 { n } => {
                let len = match bit_of(row)? {
                    0 => rng.gen_range(0..=n + 2),
                    _ => [0, 1, n + 1, n + 2][rng.gen_range(0..4usize)],
                };
                Ok(unary(len))
            }
            Protocol::Brittle2 { n } => {
                let len = match bit_of(row)? {
                    0 => rng.gen_range(0..=1),
                    _ => rng.gen_range(*n..=n + 1),
                };
                Ok(unary(len))
            }
        }
    }

    pub fn analyze(&self, t: &Transcript, public: &PublicRandomness) -> Result<Output> {
        match self {
            Protocol::RandomizedResponse(p) => Ok(Output::Scalar(rr_analyze(t, p)?)),
            Protocol::Zsum(p) => Ok(Output::Scalar(zsum_analyze(t, p) as f64)),
            Protocol::ParallelHist { d, zsum } => {
                Ok(Output::Histogram(parallel_hist_analyze(t, *d, zsum)?))
            }
            Protocol::OptInHist(p) => Ok(Output::Histogram(optin_analyze(t, p)?)),
            Protocol::CountMin { n, d, t_reps, zsum } => {
                let family = countmin_params(*n, *d, *t_reps, public);
                let d_hat = family.d_hat;
                let est = countmin_analyze(t, &family, *d, |rep_t| {
                    parallel_hist_analyze(rep_t, d_hat, zsum)
                })?;
                Ok(Output::Histogram(est))
            }
            Protocol::SplitMix { q, .. } => Ok(Output::Scalar(splitmix_decode(t, *q) as f64)),
            Protocol::BoundedSum(p) => Ok(Output::Scalar(bounded_sum_analyze(t, p))),
            Protocol::Brittle1 { .. } | Protocol::Brittle2 { .. } => {
                Ok(Output::Scalar(t.len() as f64))
            }
        }
    }

    /// The exact distribution of one user's bundle, for enumeration-based
    /// audits. Protocols with unbounded or oversized per-user supports
    /// return an enumeration error.
    pub fn bundle_distribution(&self, row: &Row) -> Result<BundleDist> {
        match self {
            Protocol::RandomizedResponse(p) => Ok(rr_bundle_dist(bit_of(row)?, p.p)),
            Protocol::Zsum(p) => Ok(crate::audit::zsum_bundle_dist(
                bit_of(row)?,
                p.r,
                p.small_n_fallback,
            )),
            Protocol::ParallelHist { d, zsum } => {
                parallel_hist_dist(value_of(row, 1, *d)?, *d, zsum)
            }
            Protocol::OptInHist(p) => optin_dist(value_of(row, 1, p.d)?, p),
            Protocol::SplitMix { q, m, .. } => splitmix_dist(value_of(row, 0, q - 1)?, *q, *m),
            Protocol::Brittle1 { n } => Ok(brittle1_bundle_dist(bit_of(row)?, *n)),
            Protocol::Brittle2 { n } => Ok(brittle2_bundle_dist(bit_of(row)?, *n)),
            Protocol::CountMin { .. } => Err(Error::EnumerationBudget(
                "count-min audits go through the inner histogram directly".into(),
            )),
            Protocol::BoundedSum(_) => Err(Error::EnumerationBudget(
                "bounded-sum noise has unbounded support".into(),
            )),
        }
    }
}

use rand::Rng;

fn unary(len: u64) -> MessageBundle {
    MessageBundle::new((0..len).map(|_| Symbol::new(&[1])).collect())
}

fn parallel_hist_dist(x: u64, d: u64, zsum: &ZsumParams) -> Result<BundleDist> {
    if d > 16 {
        return Err(Error::EnumerationBudget(format!("2^{d} noise patterns is too many")));
    }
    if zsum.small_n_fallback {
        let mut b = MessageBundle::default();
        for j in 1..=d {
            b.push(Symbol::new(&[j as u32, 0]));
            b.push(Symbol::new(&[j as u32, 0]));
        }
        return Ok(vec![(b, 1.0)]);
    }
    let mut dist: BundleDist = vec![(MessageBundle::default(), 1.0)];
    for j in 1..=d {
        let data = Symbol::new(&[j as u32, u32::from(x == j)]);
        let mut next = Vec::with_capacity(dist.len() * 2);
        for (bundle, p) in dist {
            for (noise, pn) in [(0u32, 1.0 - zsum.r), (1u32, zsum.r)] {
                if pn == 0.0 {
                    continue;
                }
                let mut b = bundle.clone();
                b.push(data.clone());
                b.push(Symbol::new(&[j as u32, noise]));
                next.push((b, p * pn));
            }
        }
        dist = next;
    }
    Ok(dist)
}

fn optin_dist(x: u64, params: &OptInParams) -> Result<BundleDist> {
    if params.d > 16 {
        return Err(Error::EnumerationBudget(format!(
            "2^{} noise patterns is too many",
            params.d
        )));
    }
    use crate::histograms::{NS_DATA, NS_FLAG, NS_NOISE};
    let data = Symbol::new(&[NS_DATA, x as u32]);
    let mut dist = Vec::new();
    if params.p_opt < 1.0 {
        dist.push((
            MessageBundle::new(vec![data.clone(), Symbol::new(&[NS_FLAG, 0])]),
            1.0 - params.p_opt,
        ));
    }
    if params.p_opt > 0.0 {
        let base = MessageBundle::new(vec![data, Symbol::new(&[NS_FLAG, 1])]);
        let mut branch: BundleDist = vec![(base, params.p_opt)];
        for j in 1..=params.d {
            let mut next = Vec::with_capacity(branch.len() * 2);
            for (bundle, p) in branch {
                next.push((bundle.clone(), p * 0.5));
                let mut with = bundle;
                with.push(Symbol::new(&[NS_NOISE, j as u32]));
                next.push((with, p * 0.5));
            }
            branch = next;
        }
        dist.extend(branch);
    }
    Ok(dist)
}

fn splitmix_dist(v: u64, q: u64, m: u32) -> Result<BundleDist> {
    let free = m.saturating_sub(1);
    let combos = (q as f64).powi(free as i32);
    if combos > 4096.0 {
        return Err(Error::EnumerationBudget(format!(
            "{q}^{free} share tuples is too many"
        )));
    }
    let combos = combos as u64;
    let p = 1.0 / combos as f64;
    let mut out = Vec::with_capacity(combos as usize);
    for mut code in 0..combos {
        let mut shares = Vec::with_capacity(m as usize);
        let mut rest = v % q;
        for _ in 0..free {
            let s = code % q;
            code /= q;
            shares.push(s);
            rest = (rest + q - s) % q;
        }
        shares.push(rest);
        out.push((
            MessageBundle::new(shares.into_iter().map(|s| Symbol::new(&[s as u32])).collect()),
            p,
        ));
    }
    Ok(out)
}
