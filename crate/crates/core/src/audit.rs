//! Exact privacy audits for small instances. Transcript distributions are
//! enumerated by convolving per-user bundle distributions over a shared
//! symbol alphabet; hockey-stick divergence between neighboring datasets is
//! then computed in closed form. Also hosts the online wrapper that turns a
//! robustly private protocol into an internally private streaming algorithm.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::accounting::binomial_pmf;
use crate::catalog::{Output, Protocol, Row};
use crate::error::{Error, Result};
use crate::model::{derive_rng, shuffle, MessageBundle, Symbol, Transcript};

/// Enumeration budget: alphabets beyond this and the count-vector space
/// explodes.
pub const MAX_AUDIT_ALPHABET: usize = 6;
/// Enumeration budget on the total message count across all users.
pub const MAX_AUDIT_MESSAGES: usize = 64;

/// A per-user output distribution: bundles with their probabilities.
pub type BundleDist = Vec<(MessageBundle, f64)>;

/// Exact distribution over canonical transcripts. A transcript is stored as
/// its count vector over `alphabet` (sorted symbols), which is exactly the
/// information surviving the shuffler.
#[derive(Clone, Debug, PartialEq)]
pub struct DistributionTable {
    pub alphabet: Vec<Symbol>,
    pub probs: BTreeMap<Vec<u32>, f64>,
}

impl DistributionTable {
    /// Convolves the users' bundle distributions into the transcript law.
    pub fn from_users(users: &[BundleDist]) -> Result<Self> {
        let mut alphabet: Vec<Symbol> = users
            .iter()
            .flat_map(|d| d.iter().flat_map(|(b, _)| b.messages.iter().cloned()))
            .collect();
        alphabet.sort_unstable();
        alphabet.dedup();
        if alphabet.len() > MAX_AUDIT_ALPHABET {
            return Err(Error::EnumerationBudget(format!(
                "alphabet size {} exceeds {MAX_AUDIT_ALPHABET}",
                alphabet.len()
            )));
        }
        let total_max: usize = users
            .iter()
            .map(|d| d.iter().map(|(b, _)| b.len()).max().unwrap_or(0))
            .sum();
        if total_max > MAX_AUDIT_MESSAGES {
            return Err(Error::EnumerationBudget(format!(
                "up to {total_max} messages exceeds {MAX_AUDIT_MESSAGES}"
            )));
        }
        let mut probs = BTreeMap::new();
        probs.insert(vec![0u32; alphabet.len()], 1.0);
        for dist in users {
            let mass: f64 = dist.iter().map(|(_, p)| p).sum();
            if (mass - 1.0).abs() > 1e-9 {
                return Err(Error::Precondition(format!(
                    "bundle distribution sums to {mass}, not 1"
                )));
            }
            let mut next: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
            for (counts, p) in &probs {
                for (bundle, q) in dist {
                    if *q == 0.0 {
                        continue;
                    }
                    let mut c = counts.clone();
                    for s in &bundle.messages {
                        let idx = alphabet.binary_search(s).expect("symbol in alphabet");
                        c[idx] += 1;
                    }
                    *next.entry(c).or_insert(0.0) += p * q;
                }
            }
            probs = next;
        }
        Ok(DistributionTable { alphabet, probs })
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.values().sum()
    }

    /// Expands a count vector back into the canonical transcript it encodes.
    pub fn transcript_for(&self, counts: &[u32]) -> Transcript {
        let mut entries = Vec::new();
        for (s, &c) in self.alphabet.iter().zip(counts) {
            for _ in 0..c {
                entries.push(s.clone());
            }
        }
        Transcript::from_unsorted(entries)
    }

    fn lookup(&self, alphabet: &[Symbol], counts: &[u32]) -> f64 {
        // Re-expresses a count vector over a foreign alphabet in terms of
        // this table's own alphabet.
        let mut own = vec![0u32; self.alphabet.len()];
        for (s, &c) in alphabet.iter().zip(counts) {
            if c == 0 {
                continue;
            }
            match self.alphabet.binary_search(s) {
                Ok(idx) => own[idx] = c,
                Err(_) => return 0.0,
            }
        }
        self.probs.get(&own).copied().unwrap_or(0.0)
    }
}

/// Union alphabet plus every count vector carrying mass in either table,
/// expressed over that union.
fn aligned_support(p: &DistributionTable, q: &DistributionTable) -> (Vec<Symbol>, Vec<Vec<u32>>) {
    let mut alphabet: Vec<Symbol> = p.alphabet.iter().chain(&q.alphabet).cloned().collect();
    alphabet.sort_unstable();
    alphabet.dedup();
    let reindex = |table: &DistributionTable, counts: &[u32]| -> Vec<u32> {
        let mut out = vec![0u32; alphabet.len()];
        for (s, &c) in table.alphabet.iter().zip(counts) {
            out[alphabet.binary_search(s).unwrap()] = c;
        }
        out
    };
    let mut keys: Vec<Vec<u32>> = p
        .probs
        .keys()
        .map(|c| reindex(p, c))
        .chain(q.probs.keys().map(|c| reindex(q, c)))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    (alphabet, keys)
}

/// Hockey-stick divergence sum over transcripts of max(P - e^eps Q, 0),
/// together with the transcript contributing the most.
pub fn hockey_stick_witness(
    p: &DistributionTable,
    q: &DistributionTable,
    eps: f64,
) -> (f64, Option<Transcript>) {
    let (alphabet, keys) = aligned_support(p, q);
    let scale = eps.exp();
    let mut delta = 0.0;
    let mut best = 0.0;
    let mut witness = None;
    for counts in keys {
        let gap = p.lookup(&alphabet, &counts) - scale * q.lookup(&alphabet, &counts);
        if gap > 0.0 {
            delta += gap;
            if gap > best {
                best = gap;
                let mut entries = Vec::new();
                for (s, &c) in alphabet.iter().zip(&counts) {
                    for _ in 0..c {
                        entries.push(s.clone());
                    }
                }
                witness = Some(Transcript::from_unsorted(entries));
            }
        }
    }
    (delta, witness)
}

pub fn hockey_stick(p: &DistributionTable, q: &DistributionTable, eps: f64) -> f64 {
    hockey_stick_witness(p, q, eps).0
}

/// Worst-case log likelihood ratio over the union support; infinite when the
/// supports differ.
pub fn pure_epsilon(p: &DistributionTable, q: &DistributionTable) -> f64 {
    let (alphabet, keys) = aligned_support(p, q);
    let mut worst: f64 = 0.0;
    for counts in keys {
        let a = p.lookup(&alphabet, &counts);
        let b = q.lookup(&alphabet, &counts);
        if (a == 0.0) != (b == 0.0) {
            return f64::INFINITY;
        }
        if a > 0.0 {
            worst = worst.max((a / b).ln().abs());
        }
    }
    worst
}

pub fn total_variation_tables(p: &DistributionTable, q: &DistributionTable) -> f64 {
    hockey_stick(p, q, 0.0)
}

/// Pushforward of a transcript distribution through an analyzer-style map;
/// used to confirm post-processing cannot worsen the audit.
pub fn pushforward<F: Fn(&Transcript) -> u64>(
    table: &DistributionTable,
    f: F,
) -> BTreeMap<u64, f64> {
    let mut out = BTreeMap::new();
    for (counts, &p) in &table.probs {
        *out.entry(f(&table.transcript_for(counts))).or_insert(0.0) += p;
    }
    out
}

pub fn hockey_stick_discrete(p: &BTreeMap<u64, f64>, q: &BTreeMap<u64, f64>, eps: f64) -> f64 {
    let scale = eps.exp();
    let keys: std::collections::BTreeSet<u64> = p.keys().chain(q.keys()).copied().collect();
    keys.iter()
        .map(|k| {
            (p.get(k).copied().unwrap_or(0.0) - scale * q.get(k).copied().unwrap_or(0.0)).max(0.0)
        })
        .sum()
}

/// Result of auditing one neighboring pair at a fixed epsilon. `delta` is
/// the larger of the two hockey-stick directions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AuditReport {
    pub epsilon: f64,
    pub delta: f64,
    pub pure_epsilon: f64,
    pub participants: usize,
    #[serde(skip)]
    pub witness: Option<Transcript>,
}

/// Audits two per-user distribution stacks directly.
pub fn audit_pair(p_users: &[BundleDist], q_users: &[BundleDist], eps: f64) -> Result<AuditReport> {
    let p = DistributionTable::from_users(p_users)?;
    let q = DistributionTable::from_users(q_users)?;
    let (d_pq, w_pq) = hockey_stick_witness(&p, &q, eps);
    let (d_qp, w_qp) = hockey_stick_witness(&q, &p, eps);
    let (delta, witness) = if d_pq >= d_qp { (d_pq, w_pq) } else { (d_qp, w_qp) };
    Ok(AuditReport {
        epsilon: eps,
        delta,
        pure_epsilon: pure_epsilon(&p, &q),
        participants: p_users.len(),
        witness,
    })
}

/// Audits a protocol on a neighboring dataset pair with every user present.
pub fn audit_neighbors(
    protocol: &Protocol,
    x: &[Row],
    x_prime: &[Row],
    eps: f64,
) -> Result<AuditReport> {
    if x.len() != x_prime.len() {
        return Err(Error::Precondition("neighboring datasets must have equal length".into()));
    }
    let dists = |rows: &[Row]| -> Result<Vec<BundleDist>> {
        rows.iter().map(|r| protocol.bundle_distribution(r)).collect()
    };
    audit_pair(&dists(x)?, &dists(x_prime)?, eps)
}

/// Robustness audit: only the first half of each dataset participates while
/// the protocol keeps its full-population parameters.
pub fn audit_robustness(
    protocol: &Protocol,
    x: &[Row],
    x_prime: &[Row],
    eps: f64,
) -> Result<AuditReport> {
    let half = x.len() / 2;
    if half == 0 {
        return Err(Error::Precondition("robustness audit needs at least 2 users".into()));
    }
    audit_neighbors(protocol, &x[..half], &x_prime[..half], eps)
}

/// The canonical worst-case pairs for bit-sum protocols.
pub fn default_binary_neighbors(n: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let zeros = vec![0u8; n];
    let ones = vec![1u8; n];
    let mut pair0 = zeros.clone();
    let mut pair1 = ones.clone();
    pair0[n - 1] = 1;
    pair1[n - 1] = 0;
    vec![(zeros, pair0), (ones, pair1)]
}

/// Every pair of bit vectors differing in exactly one coordinate.
pub fn all_binary_neighbors(n: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut out = Vec::new();
    for code in 0..(1u32 << n) {
        let x: Vec<u8> = (0..n).map(|i| ((code >> i) & 1) as u8).collect();
        for i in 0..n {
            if x[i] == 0 {
                let mut y = x.clone();
                y[i] = 1;
                out.push((x.clone(), y));
            }
        }
    }
    out
}

fn unary_bundle(len: u64) -> MessageBundle {
    MessageBundle::new((0..len).map(|_| Symbol::new(&[1])).collect())
}

fn uniform_unary(lengths: &[u64]) -> BundleDist {
    let p = 1.0 / lengths.len() as f64;
    lengths.iter().map(|&l| (unary_bundle(l), p)).collect()
}

/// First drop-out-brittle randomizer: message count uniform over {0..n+2}
/// on input 0 and over {0, 1, n+1, n+2} on input 1.
pub fn brittle1_bundle_dist(bit: u8, n: u64) -> BundleDist {
    if bit == 0 {
        uniform_unary(&(0..=n + 2).collect::<Vec<_>>())
    } else {
        uniform_unary(&[0, 1, n + 1, n + 2])
    }
}

/// Second drop-out-brittle randomizer: message count uniform over {0, 1} on
/// input 0 and over {n, n+1} on input 1.
pub fn brittle2_bundle_dist(bit: u8, n: u64) -> BundleDist {
    if bit == 0 {
        uniform_unary(&[0, 1])
    } else {
        uniform_unary(&[n, n + 1])
    }
}

/// Local pure DP of a single-message randomizer from its per-input message
/// pmfs: the worst log ratio across input pairs and outputs.
pub fn local_epsilon(dists: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for a in dists {
        for b in dists {
            for (pa, pb) in a.iter().zip(b) {
                if (*pa == 0.0) != (*pb == 0.0) {
                    return f64::INFINITY;
                }
                if *pa > 0.0 {
                    worst = worst.max((pa / pb).ln());
                }
            }
        }
    }
    worst
}

/// The streaming wrapper's state trace: one canonical transcript per step,
/// starting with the decoy-seeded initial state, plus the final output.
#[derive(Clone, Debug)]
pub struct OnlineTrace {
    pub states: Vec<Transcript>,
    pub replaced: usize,
    pub output: Output,
}

const TAG_OL_INIT: u64 = 41;
const TAG_OL_STREAM: u64 = 42;
const TAG_OL_SAMPLE: u64 = 43;
const TAG_OL_SHUFFLE: u64 = 44;

/// Runs a protocol tuned for n users over a stream of n/2 rows. The initial
/// state is the shuffled output of n/2 decoy rows drawn from `uniform`; the
/// first Binomial(n/2, q) stream rows are also replaced by decoys so the
/// final state matches the protocol run on a diluted mixture.
pub fn online_wrap<F>(
    protocol: &Protocol,
    stream: &[Row],
    uniform: F,
    q: f64,
    seed: u64,
) -> Result<OnlineTrace>
where
    F: Fn(&mut rand_chacha::ChaCha12Rng) -> Row,
{
    let half = stream.len();
    if protocol.n() != 2 * half as u64 {
        return Err(Error::Precondition(format!(
            "protocol is tuned for {} users but the stream has {half}",
            protocol.n()
        )));
    }
    let public = crate::model::PublicRandomness::new(seed);
    let mut sample_rng = derive_rng(seed, TAG_OL_SAMPLE, 0);
    let init_bundles: Result<Vec<MessageBundle>> = (0..half)
        .map(|i| {
            let row = uniform(&mut sample_rng);
            protocol.randomize(&row, &mut derive_rng(seed, TAG_OL_INIT, i as u64), &public)
        })
        .collect();
    let mut state = shuffle(&init_bundles?, &mut derive_rng(seed, TAG_OL_SHUFFLE, 0));
    let mut states = vec![state.clone()];
    let replaced = (0..half).filter(|_| sample_rng.gen_bool(q)).count();
    for (i, row) in stream.iter().enumerate() {
        let effective = if i < replaced { uniform(&mut sample_rng) } else { *row };
        let bundle = protocol.randomize(
            &effective,
            &mut derive_rng(seed, TAG_OL_STREAM, i as u64),
            &public,
        )?;
        let mut entries = state.entries().to_vec();
        entries.extend(bundle.messages);
        state = Transcript::from_unsorted(entries);
        states.push(state.clone());
    }
    let output = protocol.analyze(&state, &public)?;
    Ok(OnlineTrace { states, replaced, output })
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn rr_marginal(p: f64, theta: f64) -> f64 {
    p / 2.0 + (1.0 - p) * theta
}

/// Exact law of the number of 1-bits when randomized response with flip
/// probability p runs on n i.i.d. Bernoulli(theta) inputs.
pub fn rr_bitcount_direct(n: u64, p: f64, theta: f64) -> Vec<f64> {
    binomial_pmf(n, rr_marginal(p, theta))
}

/// Exact law of the wrapper's final bit count: n/2 decoys from
/// Bernoulli(u_theta), then a stream of n/2 Bernoulli(stream_theta) rows
/// whose first Binomial(n/2, q) entries are replaced by decoys.
pub fn rr_bitcount_wrapped(n: u64, p: f64, u_theta: f64, stream_theta: f64, q: f64) -> Vec<f64> {
    assert!(n % 2 == 0, "wrapper needs an even population");
    let half = n / 2;
    let init = binomial_pmf(half, rr_marginal(p, u_theta));
    let k_law = binomial_pmf(half, q);
    let mut streamed = vec![0.0; half as usize + 1];
    for (k, &pk) in k_law.iter().enumerate() {
        if pk == 0.0 {
            continue;
        }
        let decoys = binomial_pmf(k as u64, rr_marginal(p, u_theta));
        let real = binomial_pmf(half - k as u64, rr_marginal(p, stream_theta));
        for (v, mass) in convolve(&decoys, &real).into_iter().enumerate() {
            streamed[v] += pk * mass;
        }
    }
    convolve(&init, &streamed)
}

pub fn total_variation_pmf(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    (0..len)
        .map(|i| {
            (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).max(0.0)
        })
        .sum()
}

/// Per-user bundle distribution of randomized response with flip
/// probability p.
pub fn rr_bundle_dist(bit: u8, p: f64) -> BundleDist {
    let one = rr_marginal(p, f64::from(bit));
    vec![
        (MessageBundle::new(vec![Symbol::new(&[0])]), 1.0 - one),
        (MessageBundle::new(vec![Symbol::new(&[1])]), one),
    ]
}

/// Per-user bundle distribution of the zsum randomizer.
pub fn zsum_bundle_dist(bit: u8, r: f64, small_n_fallback: bool) -> BundleDist {
    if small_n_fallback {
        return vec![(
            MessageBundle::new(vec![Symbol::new(&[0]), Symbol::new(&[0])]),
            1.0,
        )];
    }
    let data = Symbol::new(&[u32::from(bit)]);
    vec![
        (MessageBundle::new(vec![data.clone(), Symbol::new(&[0])]), 1.0 - r),
        (MessageBundle::new(vec![data, Symbol::new(&[1])]), r),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::subseed;

    fn rr_users(bits: &[u8], p: f64) -> Vec<BundleDist> {
        bits.iter().map(|&b| rr_bundle_dist(b, p)).collect()
    }

    #[test]
    fn rr_two_user_tables_exact() {
        let p = DistributionTable::from_users(&rr_users(&[0, 0], 0.5)).unwrap();
        let q = DistributionTable::from_users(&rr_users(&[0, 1], 0.5)).unwrap();
        // Count vectors are (zeros, ones); x = 00 gives ones ~ Bin(2, 1/4).
        assert!((p.probs[&vec![2, 0]] - 9.0 / 16.0).abs() < 1e-12);
        assert!((p.probs[&vec![1, 1]] - 6.0 / 16.0).abs() < 1e-12);
        assert!((p.probs[&vec![0, 2]] - 1.0 / 16.0).abs() < 1e-12);
        assert!((q.probs[&vec![2, 0]] - 3.0 / 16.0).abs() < 1e-12);
        assert!((q.probs[&vec![1, 1]] - 10.0 / 16.0).abs() < 1e-12);
        assert!((q.probs[&vec![0, 2]] - 3.0 / 16.0).abs() < 1e-12);
        assert!((p.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rr_pure_epsilon_is_ln3() {
        let p = DistributionTable::from_users(&rr_users(&[0, 0], 0.5)).unwrap();
        let q = DistributionTable::from_users(&rr_users(&[0, 1], 0.5)).unwrap();
        assert!((pure_epsilon(&p, &q) - 3.0f64.ln()).abs() < 1e-12);
        // At eps = ln 3 the hockey stick closes exactly.
        assert!(hockey_stick(&p, &q, 3.0f64.ln()) < 1e-12);
        let d = hockey_stick(&p, &q, 0.5);
        assert!(d > 0.0 && d < 1.0);
    }

    #[test]
    fn hockey_stick_witness_points_at_heaviest_gap() {
        let p = DistributionTable::from_users(&rr_users(&[0, 0], 0.5)).unwrap();
        let q = DistributionTable::from_users(&rr_users(&[0, 1], 0.5)).unwrap();
        let (_, witness) = hockey_stick_witness(&p, &q, 0.0);
        // The all-zeros transcript has the largest P - Q gap: 9/16 vs 3/16.
        let w = witness.unwrap();
        assert_eq!(w.entries(), &[Symbol::new(&[0]), Symbol::new(&[0])]);
    }

    #[test]
    fn zsum_degenerate_noise_leaks() {
        let mk = |bits: &[u8]| -> Vec<BundleDist> {
            bits.iter().map(|&b| zsum_bundle_dist(b, 1.0, false)).collect()
        };
        let p = DistributionTable::from_users(&mk(&[0, 0, 0])).unwrap();
        let q = DistributionTable::from_users(&mk(&[0, 0, 1])).unwrap();
        // With r = 1 the one-count is data + n exactly; supports are disjoint.
        assert_eq!(pure_epsilon(&p, &q), f64::INFINITY);
        assert_eq!(total_variation_tables(&p, &q), 1.0);
    }

    #[test]
    fn zsum_fallback_is_perfectly_private() {
        let mk = |bits: &[u8]| -> Vec<BundleDist> {
            bits.iter().map(|&b| zsum_bundle_dist(b, 0.9, true)).collect()
        };
        let p = DistributionTable::from_users(&mk(&[0, 0])).unwrap();
        let q = DistributionTable::from_users(&mk(&[1, 0])).unwrap();
        assert_eq!(pure_epsilon(&p, &q), 0.0);
    }

    #[test]
    fn enumeration_budget_enforced() {
        // Seven distinct symbols.
        let users: Vec<BundleDist> = (0..7u32)
            .map(|i| vec![(MessageBundle::new(vec![Symbol::new(&[i])]), 1.0)])
            .collect();
        assert!(matches!(
            DistributionTable::from_users(&users),
            Err(Error::EnumerationBudget(_))
        ));
        // 65 total messages on a unary alphabet.
        let users: Vec<BundleDist> = vec![vec![(unary_bundle(65), 1.0)]];
        assert!(matches!(
            DistributionTable::from_users(&users),
            Err(Error::EnumerationBudget(_))
        ));
    }

    #[test]
    fn unnormalized_user_rejected() {
        let users = vec![vec![(unary_bundle(1), 0.7)]];
        assert!(matches!(
            DistributionTable::from_users(&users),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn exact_table_matches_monte_carlo() {
        let p = 0.5;
        let table = DistributionTable::from_users(&rr_users(&[0, 1], p)).unwrap();
        let params = crate::sums::RRParams { p, n: 2 };
        let mut counts: BTreeMap<Vec<u32>, u64> = BTreeMap::new();
        let trials = 200_000u64;
        let mut rng = derive_rng(3, 61, 0);
        for _ in 0..trials {
            let ones: u32 = [0u8, 1]
                .iter()
                .map(|&b| {
                    crate::sums::rr_randomize(b, &params, &mut rng).messages[0].parts()[0]
                })
                .sum();
            *counts.entry(vec![2 - ones, ones]).or_insert(0) += 1;
        }
        for (key, &prob) in &table.probs {
            let freq = *counts.get(key).unwrap_or(&0) as f64 / trials as f64;
            assert!((freq - prob).abs() < 0.005, "key {key:?}: {freq} vs {prob}");
        }
    }

    #[test]
    fn post_processing_never_hurts() {
        let p = DistributionTable::from_users(&rr_users(&[0, 0], 0.5)).unwrap();
        let q = DistributionTable::from_users(&rr_users(&[0, 1], 0.5)).unwrap();
        let ones = |t: &Transcript| -> u64 {
            t.entries().iter().map(|s| u64::from(s.parts()[0])).sum()
        };
        let parity = |t: &Transcript| ones(t) % 2;
        for eps in [0.0, 0.3, 1.0] {
            let raw = hockey_stick(&p, &q, eps);
            for f in [&ones as &dyn Fn(&Transcript) -> u64, &parity] {
                let post = hockey_stick_discrete(&pushforward(&p, f), &pushforward(&q, f), eps);
                assert!(post <= raw + 1e-12, "eps {eps}");
            }
        }
    }

    #[test]
    fn neighbor_generators() {
        let defaults = default_binary_neighbors(3);
        assert_eq!(defaults[0], (vec![0, 0, 0], vec![0, 0, 1]));
        assert_eq!(defaults[1], (vec![1, 1, 1], vec![1, 1, 0]));
        let all = all_binary_neighbors(3);
        // 8 vectors, 3 flips each, counted once per 0 -> 1 direction.
        assert_eq!(all.len(), 12);
        for (x, y) in &all {
            let diff: usize = x.iter().zip(y).filter(|(a, b)| a != b).count();
            assert_eq!(diff, 1);
        }
    }

    #[test]
    fn brittle1_private_with_everyone_but_not_one_short() {
        let n = 2u64;
        let mk = |bits: &[u8]| -> Vec<BundleDist> {
            bits.iter().map(|&b| brittle1_bundle_dist(b, n)).collect()
        };
        // Full population: both supports are every length in [0, n^2 + 2n].
        let p = DistributionTable::from_users(&mk(&[0, 0])).unwrap();
        let q = DistributionTable::from_users(&mk(&[0, 1])).unwrap();
        assert_eq!(p.probs.len(), (n * n + 2 * n + 1) as usize);
        assert_eq!(q.probs.len(), (n * n + 2 * n + 1) as usize);
        let eps = pure_epsilon(&p, &q);
        assert!(eps.is_finite() && eps > 0.0);
        // One user short (a single remaining user): length 2 is reachable
        // from input 0 but not from input 1, whose lengths skip {2, ..., n}.
        let p = DistributionTable::from_users(&mk(&[0])).unwrap();
        let q = DistributionTable::from_users(&mk(&[1])).unwrap();
        assert!(p.probs.contains_key(&vec![n as u32]));
        assert!(!q.probs.contains_key(&vec![n as u32]));
        assert_eq!(pure_epsilon(&p, &q), f64::INFINITY);
    }

    #[test]
    fn brittle1_gap_needs_single_survivor() {
        // With two or more remaining users the zero-input users fill in the
        // missing lengths, so the supports coincide again and the pure audit
        // comes back finite. The drop-out failure is specific to shrinking
        // the population to one.
        let n = 3u64;
        let mk = |bits: &[u8]| -> Vec<BundleDist> {
            bits.iter().map(|&b| brittle1_bundle_dist(b, n)).collect()
        };
        let p = DistributionTable::from_users(&mk(&[0, 0])).unwrap();
        let q = DistributionTable::from_users(&mk(&[0, 1])).unwrap();
        assert!(pure_epsilon(&p, &q).is_finite());
    }

    #[test]
    fn brittle2_approximate_with_everyone_but_nothing_one_short() {
        let n = 4u64;
        let mk = |bits: &[u8]| -> Vec<BundleDist> {
            bits.iter().map(|&b| brittle2_bundle_dist(b, n)).collect()
        };
        for (x, y) in all_binary_neighbors(n as usize) {
            let p = DistributionTable::from_users(&mk(&x)).unwrap();
            let q = DistributionTable::from_users(&mk(&y)).unwrap();
            // Supports intersect, so delta < 1 at every finite epsilon.
            assert!(total_variation_tables(&p, &q) < 1.0, "{x:?} vs {y:?}");
        }
        let p = DistributionTable::from_users(&mk(&[0, 0, 0])).unwrap();
        let q = DistributionTable::from_users(&mk(&[0, 0, 1])).unwrap();
        // Max length of 0^3 is 3; min length of 0^2 1 is n = 4: disjoint.
        assert_eq!(total_variation_tables(&p, &q), 1.0);
        assert_eq!(hockey_stick(&p, &q, 20.0), 1.0);
    }

    #[test]
    fn local_epsilon_cases() {
        assert!((local_epsilon(&[vec![0.75, 0.25], vec![0.25, 0.75]]) - 3.0f64.ln()).abs() < 1e-12);
        assert_eq!(local_epsilon(&[vec![1.0, 0.0], vec![0.0, 1.0]]), f64::INFINITY);
        assert_eq!(local_epsilon(&[vec![0.5, 0.5], vec![0.5, 0.5]]), 0.0);
    }

    #[test]
    fn wrapped_bitcount_matches_direct_on_decoy_distribution() {
        // Streaming i.i.d. decoy-distributed rows is indistinguishable from
        // the one-shot protocol, exactly.
        for n in [4u64, 8] {
            for theta in [0.3, 0.5] {
                let direct = rr_bitcount_direct(n, 0.4, theta);
                let wrapped = rr_bitcount_wrapped(n, 0.4, theta, theta, 0.5);
                assert_eq!(direct.len(), wrapped.len());
                for (a, b) in direct.iter().zip(&wrapped) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn wrapped_bitcount_close_to_diluted_mixture() {
        // A stream of all-ones rows looks like the protocol on the 1/4-heavy
        // mixture, up to total variation 1/6.
        let n = 8u64;
        let p = 0.5;
        let wrapped = rr_bitcount_wrapped(n, p, 0.5, 1.0, 0.5);
        let mix_theta = 0.25 * 1.0 + 0.75 * 0.5;
        let direct = rr_bitcount_direct(n, p, mix_theta);
        let tv = total_variation_pmf(&wrapped, &direct);
        assert!(tv < 1.0 / 6.0, "tv={tv}");
    }

    #[test]
    fn bitcount_laws_are_distributions() {
        for pmf in [
            rr_bitcount_direct(8, 0.3, 0.7),
            rr_bitcount_wrapped(8, 0.3, 0.5, 0.7, 0.5),
        ] {
            assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(pmf.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn audit_pair_reports_symmetric_delta() {
        let p_users = rr_users(&[0, 0], 0.5);
        let q_users = rr_users(&[0, 1], 0.5);
        let fwd = audit_pair(&p_users, &q_users, 0.2).unwrap();
        let rev = audit_pair(&q_users, &p_users, 0.2).unwrap();
        assert!((fwd.delta - rev.delta).abs() < 1e-12);
        assert!(fwd.witness.is_some());
        assert_eq!(fwd.participants, 2);
        assert!((fwd.pure_epsilon - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn delta_decreases_in_epsilon() {
        let p = DistributionTable::from_users(&rr_users(&[0, 0, 0, 0], 0.5)).unwrap();
        let q = DistributionTable::from_users(&rr_users(&[0, 0, 0, 1], 0.5)).unwrap();
        let mut last = f64::INFINITY;
        for step in 0..10 {
            let eps = 0.15 * step as f64;
            let d = hockey_stick(&p, &q, eps);
            assert!(d <= last + 1e-15);
            last = d;
        }
    }

    #[test]
    fn subseed_streams_disjoint_smoke() {
        // Online wrapper tags must not collide with model-level tags.
        assert_ne!(subseed(7, TAG_OL_INIT, 0), subseed(7, TAG_OL_STREAM, 0));
        assert_ne!(subseed(7, TAG_OL_INIT, 0), subseed(7, TAG_OL_SAMPLE, 0));
    }
}
