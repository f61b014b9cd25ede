//! Frequency estimation: the parallel-count histogram over zsum, the opt-in
//! histogram, and the Count-Min template that runs an inner histogram
//! protocol on hashed data.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MessageBundle, PublicRandomness, Symbol, Transcript};
use crate::sums::{zsum_estimate_from_total, zsum_randomize, ZsumParams};

/// Length-d vector of frequency estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramEstimate {
    pub values: Vec<f64>,
}

impl HistogramEstimate {
    pub fn d(&self) -> usize {
        self.values.len()
    }

    pub fn linf_error(&self, truth: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(truth)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Opt-in histogram parameters: each user opts into noise with probability
/// `p_opt` and, when opted in, flips one fair coin per bin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptInParams {
    pub d: u64,
    pub p_opt: f64,
    pub n: u64,
}

/// Message namespaces for the opt-in randomizer; the tags are the minimal
/// disambiguation the analyzer needs between data, flags, and noise.
pub const NS_DATA: u32 = 0;
pub const NS_FLAG: u32 = 1;
pub const NS_NOISE: u32 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum HashKind {
    Seeded { subseeds: Vec<u64> },
    Explicit { tables: Vec<Vec<u64>> },
}

/// T seeded hash functions [d] -> [d_hat], derived from public randomness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HashFamily {
    pub t_reps: u32,
    pub d_hat: u64,
    kind: HashKind,
}

impl HashFamily {
    /// Explicit assignment tables, used by exhaustive tests. `tables[t][j-1]`
    /// is the hashed bin (1-based) of element j.
    pub fn from_tables(d_hat: u64, tables: Vec<Vec<u64>>) -> Self {
        HashFamily { t_reps: tables.len() as u32, d_hat, kind: HashKind::Explicit { tables } }
    }

    /// Hash of element `j` in [1, d] under repetition `t` in [1, T]; output
    /// lies in [1, d_hat].
    pub fn hash(&self, t: u32, j: u64) -> u64 {
        match &self.kind {
            HashKind::Seeded { subseeds } => {
                let mut z = subseeds[(t - 1) as usize] ^ j.wrapping_mul(0x9e37_79b9_7f4a_7c15);
                z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
                (z ^ (z >> 31)) % self.d_hat + 1
            }
            HashKind::Explicit { tables } => tables[(t - 1) as usize][(j - 1) as usize],
        }
    }
}

/// Count-Min parameters: `d_hat = ceil(n * (100 d)^(1/T))`, hash subseeds
/// drawn from public randomness.
pub fn countmin_params(n: u64, d: u64, t_reps: u32, public: &PublicRandomness) -> HashFamily {
    assert!(t_reps >= 1);
    let x = n as f64 * (100.0 * d as f64).powf(1.0 / f64::from(t_reps));
    // Guard against powf landing a hair above an exact integer.
    let d_hat = (x - 1e-9).ceil().max(2.0) as u64;
    let subseeds = (0..t_reps).map(|t| public.subseed(100 + u64::from(t))).collect();
    HashFamily { t_reps, d_hat, kind: HashKind::Seeded { subseeds } }
}

/// Runs zsum once per bin on the indicator [x = j], labelling the two
/// messages of bin j with j. Bundle size is always 2d.
pub fn parallel_hist_randomize<R: Rng>(
    x: u64,
    d: u64,
    zsum: &ZsumParams,
    rng: &mut R,
) -> Result<MessageBundle> {
    if x < 1 || x > d {
        return Err(Error::Domain(format!("value {x} outside [1, {d}]")));
    }
    let mut bundle = MessageBundle::default();
    for j in 1..=d {
        let inner = zsum_randomize(u8::from(x == j), zsum, rng);
        for s in inner.messages {
            bundle.push(Symbol::new(&[j as u32, s.parts()[0]]));
        }
    }
    Ok(bundle)
}

/// Per-bin zsum analysis of label-filtered messages.
pub fn parallel_hist_analyze(
    t: &Transcript,
    d: u64,
    zsum: &ZsumParams,
) -> Result<HistogramEstimate> {
    let mut totals = vec![0u64; d as usize];
    for s in t.entries() {
        let parts = s.parts();
        if parts.len() != 2 {
            return Err(Error::Format(format!("expected (label, bit) message, got {parts:?}")));
        }
        let label = u64::from(parts[0]);
        if label < 1 || label > d {
            return Err(Error::Format(format!("label {label} outside [1, {d}]")));
        }
        totals[(label - 1) as usize] += u64::from(parts[1]);
    }
    let values = totals
        .iter()
        .map(|&total| zsum_estimate_from_total(total, zsum) as f64)
        .collect();
    Ok(HistogramEstimate { values })
}

/// Opt-in randomizer: (DATA, x), (FLAG, b) with b ~ Ber(p_opt), and when
/// b = 1 one (NOISE, j) message per bin j with probability 1/2 each.
pub fn optin_randomize<R: Rng>(x: u64, params: &OptInParams, rng: &mut R) -> Result<MessageBundle> {
    if x < 1 || x > params.d {
        return Err(Error::Domain(format!("value {x} outside [1, {}]", params.d)));
    }
    let mut bundle = MessageBundle::default();
    bundle.push(Symbol::new(&[NS_DATA, x as u32]));
    let opted = rng.gen_bool(params.p_opt);
    bundle.push(Symbol::new(&[NS_FLAG, u32::from(opted)]));
    if opted {
        for j in 1..=params.d {
            if rng.gen_bool(0.5) {
                bundle.push(Symbol::new(&[NS_NOISE, j as u32]));
            }
        }
    }
    Ok(bundle)
}

/// Raw tallies of an opt-in transcript: opted-in count |H|, per-bin data
/// counts, per-bin noise counts.
pub fn optin_tallies(t: &Transcript, d: u64) -> Result<(u64, Vec<u64>, Vec<u64>)> {
    let mut h = 0u64;
    let mut data = vec![0u64; d as usize];
    let mut noise = vec![0u64; d as usize];
    for s in t.entries() {
        let parts = s.parts();
        if parts.len() != 2 {
            return Err(Error::Format(format!("expected tagged pair, got {parts:?}")));
        }
        let v = u64::from(parts[1]);
        match parts[0] {
            NS_DATA | NS_NOISE => {
                if v < 1 || v > d {
                    return Err(Error::Format(format!("bin {v} outside [1, {d}]")));
                }
                if parts[0] == NS_DATA {
                    data[(v - 1) as usize] += 1;
                } else {
                    noise[(v - 1) as usize] += 1;
                }
            }
            NS_FLAG => h += v,
            other => return Err(Error::Format(format!("unknown namespace {other}"))),
        }
    }
    Ok((h, data, noise))
}

/// Opt-in analyzer: raw_j = data_j + noise_j; estimates truncate to 0 when
/// raw_j <= |H| and otherwise debias by the Bin(|H|, 1/2) mean.
pub fn optin_analyze(t: &Transcript, params: &OptInParams) -> Result<HistogramEstimate> {
    let (h, data, noise) = optin_tallies(t, params.d)?;
    let values = data
        .iter()
        .zip(&noise)
        .map(|(&c, &eta)| {
            let raw = c + eta;
            if raw <= h {
                0.0
            } else {
                raw as f64 - h as f64 / 2.0
            }
        })
        .collect();
    Ok(HistogramEstimate { values })
}

/// Count-Min randomizer: for each repetition t, run the inner randomizer on
/// the hashed value and prefix every message with t.
pub fn countmin_randomize<R, F>(
    x: u64,
    family: &HashFamily,
    mut inner: F,
    rng: &mut R,
) -> Result<MessageBundle>
where
    R: Rng,
    F: FnMut(u64, &mut R) -> Result<MessageBundle>,
{
    let mut bundle = MessageBundle::default();
    for t in 1..=family.t_reps {
        let hashed = family.hash(t, x);
        for s in inner(hashed, rng)?.messages {
            let mut parts = vec![t];
            parts.extend_from_slice(s.parts());
            bundle.push(Symbol::new(&parts));
        }
    }
    Ok(bundle)
}

/// Count-Min analyzer: per repetition, strip the prefix, run the inner
/// analyzer over [d_hat], and report z_j = min over t of the estimate at
/// h^(t)(j).
pub fn countmin_analyze<F>(
    t: &Transcript,
    family: &HashFamily,
    d: u64,
    mut inner: F,
) -> Result<HistogramEstimate>
where
    F: FnMut(&Transcript) -> Result<HistogramEstimate>,
{
    let mut per_rep: Vec<Vec<Symbol>> = vec![Vec::new(); family.t_reps as usize];
    for s in t.entries() {
        let parts = s.parts();
        let rep = parts[0];
        if rep < 1 || rep > family.t_reps {
            return Err(Error::Format(format!("repetition prefix {rep} outside range")));
        }
        per_rep[(rep - 1) as usize].push(Symbol::new(&parts[1..]));
    }
    let mut values = vec![f64::INFINITY; d as usize];
    for (idx, symbols) in per_rep.into_iter().enumerate() {
        let rep = idx as u32 + 1;
        let estimate = inner(&Transcript::from_unsorted(symbols))?;
        for j in 1..=d {
            let hashed = family.hash(rep, j);
            let candidate = estimate.values[(hashed - 1) as usize];
            let slot = &mut values[(j - 1) as usize];
            *slot = slot.min(candidate);
        }
    }
    Ok(HistogramEstimate { values })
}
