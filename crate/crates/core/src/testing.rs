//! Distribution testing over shuffled messages: a chi-square style
//! uniformity tester with Poissonized sampling and opt-in noise, domain
//! compression for large alphabets, and a pointer-chasing solver used to
//! probe how much the tester can be squeezed.

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::Rng;
use rand_distr::Poisson;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histograms::{optin_randomize, optin_tallies, HistogramEstimate, OptInParams};
use crate::histograms::{parallel_hist_analyze, parallel_hist_randomize};
use crate::model::{derive_rng, shuffle, subseed, MessageBundle, PublicRandomness};
use crate::sums::ZsumParams;

/// Uniformity tester configuration. `m` is the expected sample count; the
/// actual count is Poisson(m). `p_opt` is the per-user opt-in probability
/// for the noise messages; 0 runs the tester without privacy noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TesterConfig {
    pub d: u64,
    pub alpha: f64,
    pub m: f64,
    pub p_opt: f64,
    pub threshold: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Uniform,
    Far,
}

/// Where the tester's samples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SampleSource {
    Probabilities(Vec<f64>),
    Data(Vec<u64>),
}

impl SampleSource {
    pub fn uniform(d: u64) -> Self {
        SampleSource::Probabilities(vec![1.0 / d as f64; d as usize])
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            SampleSource::Probabilities(p) => {
                let dist = WeightedIndex::new(p).expect("non-negative weights");
                dist.sample(rng) as u64 + 1
            }
            SampleSource::Data(rows) => rows[rng.gen_range(0..rows.len())],
        }
    }
}

/// Draws N ~ Poisson(m).
pub fn poissonize<R: Rng>(m: f64, rng: &mut R) -> u64 {
    if m <= 0.0 {
        return 0;
    }
    Poisson::new(m).expect("positive mean").sample(rng) as u64
}

/// The collision statistic: Z = (d/m) * sum_j [(c_j - m/d)^2 - c_j]. Under a
/// uniform source with Poissonized counts this has mean 0.
pub fn z_statistic(counts: &[f64], m: f64) -> f64 {
    let d = counts.len() as f64;
    let mean = m / d;
    let sum: f64 = counts.iter().map(|&c| (c - mean).powi(2) - c).sum();
    d / m * sum
}

/// Runs the opt-in randomizer over the samples and returns the debiased,
/// untruncated counts c_j = raw_j - |H|/2 along with the opted-in count |H|.
/// The tester needs signed fluctuations around zero, so unlike the histogram
/// estimator nothing is clamped here.
pub fn noisy_counts(samples: &[u64], d: u64, p_opt: f64, seed: u64) -> Result<(Vec<f64>, u64)> {
    let params = OptInParams { d, p_opt, n: samples.len() as u64 };
    let bundles: Result<Vec<MessageBundle>> = samples
        .iter()
        .enumerate()
        .map(|(i, &x)| optin_randomize(x, &params, &mut derive_rng(seed, TAG_TESTER_USER, i as u64)))
        .collect();
    let t = shuffle(&bundles?, &mut derive_rng(seed, TAG_TESTER_SHUFFLE, 0));
    let (h, data, noise) = optin_tallies(&t, d)?;
    let counts = data
        .iter()
        .zip(&noise)
        .map(|(&c, &eta)| c as f64 + eta as f64 - h as f64 / 2.0)
        .collect();
    Ok((counts, h))
}

const TAG_TESTER_SAMPLE: u64 = 21;
const TAG_TESTER_USER: u64 = 22;
const TAG_TESTER_SHUFFLE: u64 = 23;
const TAG_TESTER_TRIAL: u64 = 24;
const TAG_PARTITION: u64 = 25;
const TAG_PC_USER: u64 = 26;
const TAG_PC_SHUFFLE: u64 = 27;
const TAG_PC_SAMPLE: u64 = 28;

/// One end-to-end run of the tester pipeline, returning the statistic.
pub fn core_statistic(config: &TesterConfig, source: &SampleSource, seed: u64) -> Result<f64> {
    if config.d < 2 {
        return Err(Error::Precondition("tester needs d >= 2".into()));
    }
    let mut sample_rng = derive_rng(seed, TAG_TESTER_SAMPLE, 0);
    let n = poissonize(config.m, &mut sample_rng);
    let samples: Vec<u64> = (0..n).map(|_| source.draw(&mut sample_rng)).collect();
    let (counts, _) = noisy_counts(&samples, config.d, config.p_opt, seed)?;
    Ok(z_statistic(&counts, config.m))
}

/// Accepts (Uniform) when the statistic is at or below the calibrated
/// threshold. Returns the statistic alongside the verdict.
pub fn uniformity_core_test(
    config: &TesterConfig,
    source: &SampleSource,
    seed: u64,
) -> Result<(Verdict, f64)> {
    let threshold = config.threshold.ok_or(Error::Uncalibrated)?;
    let z = core_statistic(config, source, seed)?;
    let verdict = if z <= threshold { Verdict::Uniform } else { Verdict::Far };
    Ok((verdict, z))
}

/// Empirical null calibration: runs the pipeline on a uniform source and
/// returns the 5/6 quantile of the statistic, leaving at most a 1/6 false
/// rejection rate before any slack from the alternative's separation.
pub fn calibrate_threshold(config: &TesterConfig, trials: u64, seed: u64) -> Result<f64> {
    if trials < 200 {
        return Err(Error::Precondition(format!(
            "calibration needs >= 200 trials, got {trials}"
        )));
    }
    let uniform = SampleSource::uniform(config.d);
    let mut stats = Vec::with_capacity(trials as usize);
    for t in 0..trials {
        stats.push(core_statistic(config, &uniform, subseed(seed, TAG_TESTER_TRIAL, t))?);
    }
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((trials as f64 * 5.0 / 6.0).ceil() as usize).min(trials as usize) - 1;
    Ok(stats[idx])
}

/// A map from [1, d] onto [1, d_hat] used for domain compression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionMap {
    pub d: u64,
    pub d_hat: u64,
    assignment: Vec<u64>,
}

impl PartitionMap {
    pub fn identity(d: u64) -> Self {
        PartitionMap { d, d_hat: d, assignment: (1..=d).collect() }
    }

    pub fn from_assignment(d_hat: u64, assignment: Vec<u64>) -> Self {
        assert!(assignment.iter().all(|&g| (1..=d_hat).contains(&g)));
        PartitionMap { d: assignment.len() as u64, d_hat, assignment }
    }

    pub fn map(&self, j: u64) -> u64 {
        self.assignment[(j - 1) as usize]
    }
}

/// Uniformly random partition: each element of [1, d] lands in an
/// independent uniform bin of [1, d_hat].
pub fn random_partition<R: Rng>(d: u64, d_hat: u64, rng: &mut R) -> Result<PartitionMap> {
    if d_hat < 2 || d_hat > d {
        return Err(Error::Precondition(format!("need 2 <= d_hat <= d, got {d_hat} vs {d}")));
    }
    let assignment = (0..d).map(|_| rng.gen_range(1..=d_hat)).collect();
    Ok(PartitionMap { d, d_hat, assignment })
}

/// Pushforward of a distribution on [1, d] through a partition.
pub fn compress_distribution(probs: &[f64], partition: &PartitionMap) -> Vec<f64> {
    let mut out = vec![0.0; partition.d_hat as usize];
    for (j, &p) in probs.iter().enumerate() {
        out[(partition.map(j as u64 + 1) - 1) as usize] += p;
    }
    out
}

/// Compressed domain size: ceil(min(d, max(2, d^(2/3) alpha^(2/3)))).
pub fn choose_d_hat(d: u64, alpha: f64) -> u64 {
    let raw = (d as f64).powf(2.0 / 3.0) * alpha.powf(2.0 / 3.0);
    (raw.max(2.0).min(d as f64)).ceil() as u64
}

/// Distance surviving compression: alpha * sqrt(d_hat) / (477 * sqrt(10 d)).
pub fn compressed_alpha(alpha: f64, d: u64, d_hat: u64) -> f64 {
    alpha * (d_hat as f64).sqrt() / (477.0 * (10.0 * d as f64).sqrt())
}

/// Large-alphabet tester: compresses the domain through a public random
/// partition, calibrates on the compressed domain, and runs the core test.
/// Returns the verdict, the statistic, and the compressed domain size.
pub fn uniformity_full_test(
    config: &TesterConfig,
    source: &SampleSource,
    calibration_trials: u64,
    seed: u64,
    public: &PublicRandomness,
) -> Result<(Verdict, f64, u64)> {
    let d_hat = choose_d_hat(config.d, config.alpha);
    let partition = if d_hat == config.d {
        PartitionMap::identity(config.d)
    } else {
        random_partition(config.d, d_hat, &mut public.rng_at(TAG_PARTITION))?
    };
    let compressed_source = match source {
        SampleSource::Probabilities(p) => {
            SampleSource::Probabilities(compress_distribution(p, &partition))
        }
        SampleSource::Data(rows) => {
            SampleSource::Data(rows.iter().map(|&x| partition.map(x)).collect())
        }
    };
    let mut compressed = TesterConfig {
        d: d_hat,
        alpha: compressed_alpha(config.alpha, config.d, d_hat),
        m: config.m,
        p_opt: config.p_opt,
        threshold: None,
    };
    compressed.threshold = Some(calibrate_threshold(&compressed, calibration_trials, seed)?);
    let (verdict, z) = uniformity_core_test(&compressed, &compressed_source, seed)?;
    Ok((verdict, z, d_hat))
}

pub fn factorial(n: u64) -> u64 {
    (1..=n).product::<u64>().max(1)
}

/// Rank of a permutation of [1, ell] in lexicographic order, in [0, ell!).
pub fn lehmer_rank(perm: &[u64]) -> u64 {
    let ell = perm.len();
    let mut rank = 0;
    for i in 0..ell {
        let smaller = perm[i + 1..].iter().filter(|&&x| x < perm[i]).count() as u64;
        rank += smaller * factorial((ell - 1 - i) as u64);
    }
    rank
}

pub fn lehmer_unrank(mut rank: u64, ell: u64) -> Vec<u64> {
    let mut pool: Vec<u64> = (1..=ell).collect();
    let mut perm = Vec::with_capacity(ell as usize);
    for i in (0..ell).rev() {
        let f = factorial(i);
        let idx = (rank / f) as usize;
        rank %= f;
        perm.push(pool.remove(idx));
    }
    perm
}

/// A two-round pointer chasing instance: permutations a and b of [1, ell];
/// the answer is b[a[1]].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PCInstance {
    pub ell: u64,
    pub a: Vec<u64>,
    pub b: Vec<u64>,
}

impl PCInstance {
    pub fn random<R: Rng>(ell: u64, rng: &mut R) -> Self {
        let a = lehmer_unrank(rng.gen_range(0..factorial(ell)), ell);
        let b = lehmer_unrank(rng.gen_range(0..factorial(ell)), ell);
        PCInstance { ell, a, b }
    }

    pub fn answer(&self) -> u64 {
        self.b[(self.a[0] - 1) as usize]
    }

    /// Universe {1,2} x perms(ell) flattened to [1, 2 * ell!].
    pub fn encode(tag: u64, perm: &[u64]) -> u64 {
        (tag - 1) * factorial(perm.len() as u64) + lehmer_rank(perm) + 1
    }

    pub fn decode(idx: u64, ell: u64) -> (u64, Vec<u64>) {
        let f = factorial(ell);
        let tag = (idx - 1) / f + 1;
        (tag, lehmer_unrank((idx - 1) % f, ell))
    }
}

/// Solves pointer chasing from shuffled messages: each of n holders sends
/// its half of the instance through the per-bin histogram, and the analyzer
/// reads off the unique positive bin per tag. Non-instance bins come back
/// exactly zero thanks to the estimator's truncation.
pub fn pc_solve(
    instance: &PCInstance,
    n: u64,
    r: f64,
    seed: u64,
) -> Result<(u64, HistogramEstimate)> {
    if instance.ell > 7 {
        return Err(Error::EnumerationBudget(format!(
            "ell = {} makes the universe too large",
            instance.ell
        )));
    }
    let d = 2 * factorial(instance.ell);
    let zsum = ZsumParams { r, n, small_n_fallback: false };
    let enc_a = PCInstance::encode(1, &instance.a);
    let enc_b = PCInstance::encode(2, &instance.b);
    let mut sample_rng = derive_rng(seed, TAG_PC_SAMPLE, 0);
    let bundles: Result<Vec<MessageBundle>> = (0..n)
        .map(|i| {
            let x = if sample_rng.gen_bool(0.5) { enc_a } else { enc_b };
            parallel_hist_randomize(x, d, &zsum, &mut derive_rng(seed, TAG_PC_USER, i))
        })
        .collect();
    let t = shuffle(&bundles?, &mut derive_rng(seed, TAG_PC_SHUFFLE, 0));
    let est = parallel_hist_analyze(&t, d, &zsum)?;
    let half = factorial(instance.ell) as usize;
    let argmax = |lo: usize, hi: usize| -> Result<u64> {
        let (idx, &best) = est.values[lo..hi]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        if best <= 0.0 {
            return Err(Error::Indeterminate("no positive bin for this tag".into()));
        }
        Ok((lo + idx) as u64 + 1)
    };
    let (_, a) = PCInstance::decode(argmax(0, half)?, instance.ell);
    let (_, b) = PCInstance::decode(argmax(half, 2 * half)?, instance.ell);
    let recovered = PCInstance { ell: instance.ell, a, b };
    Ok((recovered.answer(), est))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn z_statistic_small_cases() {
        assert_eq!(z_statistic(&[3.0, 1.0], 4.0), -1.0);
        assert_eq!(z_statistic(&[2.0, 2.0], 4.0), -2.0);
        // Counts exactly at the mean: only the self-terms survive.
        assert_eq!(z_statistic(&[2.0, 2.0, 2.0], 6.0), -3.0);
    }

    #[test]
    fn z_statistic_null_mean_near_zero() {
        let config =
            TesterConfig { d: 4, alpha: 0.0, m: 100.0, p_opt: 0.0, threshold: None };
        let uniform = SampleSource::uniform(4);
        let trials = 2000u64;
        let mean: f64 = (0..trials)
            .map(|t| core_statistic(&config, &uniform, subseed(7, 1, t)).unwrap())
            .sum::<f64>()
            / trials as f64;
        // Var(Z) is O(1) here, so the empirical mean sits within a few
        // standard errors of zero.
        assert!(mean.abs() < 0.3, "mean={mean}");
    }

    #[test]
    fn poissonize_mean_and_guard() {
        let mut rng = derive_rng(11, 1, 0);
        assert_eq!(poissonize(0.0, &mut rng), 0);
        let trials = 20_000;
        let total: u64 = (0..trials).map(|_| poissonize(50.0, &mut rng)).sum();
        let mean = total as f64 / trials as f64;
        assert!((mean - 50.0).abs() < 0.3, "mean={mean}");
    }

    #[test]
    fn sample_sources_draw_in_domain() {
        let mut rng = derive_rng(12, 1, 0);
        let point = SampleSource::Probabilities(vec![0.0, 1.0, 0.0]);
        for _ in 0..100 {
            assert_eq!(point.draw(&mut rng), 2);
        }
        let data = SampleSource::Data(vec![5]);
        assert_eq!(data.draw(&mut rng), 5);
    }

    #[test]
    fn noisy_counts_noiseless_is_exact_histogram() {
        let samples = [1u64, 1, 3, 2, 1];
        let (counts, h) = noisy_counts(&samples, 3, 0.0, 99).unwrap();
        assert_eq!(h, 0);
        assert_eq!(counts, vec![3.0, 1.0, 1.0]);
    }

    #[test]
    fn noisy_counts_debias_centers_empty_bins() {
        // With full opt-in, empty-bin counts are Bin(n, 1/2) - n/2: mean 0.
        let samples = vec![1u64; 40];
        let trials = 5000;
        let mean: f64 = (0..trials)
            .map(|t| noisy_counts(&samples, 2, 1.0, t).unwrap().0[1])
            .sum::<f64>()
            / trials as f64;
        assert!(mean.abs() < 0.15, "mean={mean}");
    }

    #[test]
    fn core_test_requires_calibration() {
        let config =
            TesterConfig { d: 4, alpha: 0.5, m: 100.0, p_opt: 0.0, threshold: None };
        let err = uniformity_core_test(&config, &SampleSource::uniform(4), 0);
        assert!(matches!(err, Err(Error::Uncalibrated)));
    }

    #[test]
    fn calibrate_rejects_thin_trials() {
        let config =
            TesterConfig { d: 4, alpha: 0.5, m: 100.0, p_opt: 0.0, threshold: None };
        assert!(matches!(calibrate_threshold(&config, 50, 0), Err(Error::Precondition(_))));
    }

    #[test]
    fn core_test_separates_point_mass_from_uniform() {
        let mut config =
            TesterConfig { d: 4, alpha: 0.5, m: 200.0, p_opt: 0.0, threshold: None };
        config.threshold = Some(calibrate_threshold(&config, 200, 31).unwrap());
        let uniform = SampleSource::uniform(4);
        let point = SampleSource::Probabilities(vec![1.0, 0.0, 0.0, 0.0]);
        let mut accepts = 0;
        let mut rejects = 0;
        for t in 0..200u64 {
            if uniformity_core_test(&config, &uniform, subseed(32, 1, t)).unwrap().0
                == Verdict::Uniform
            {
                accepts += 1;
            }
            if uniformity_core_test(&config, &point, subseed(33, 1, t)).unwrap().0
                == Verdict::Far
            {
                rejects += 1;
            }
        }
        assert!(accepts >= 120, "accepts={accepts}");
        assert_eq!(rejects, 200);
    }

    #[test]
    fn partition_bounds_and_identity() {
        let mut rng = derive_rng(14, 1, 0);
        let p = random_partition(10, 3, &mut rng).unwrap();
        for j in 1..=10 {
            assert!((1..=3).contains(&p.map(j)));
        }
        assert!(random_partition(10, 1, &mut rng).is_err());
        assert!(random_partition(3, 5, &mut rng).is_err());

        let id = PartitionMap::identity(4);
        let probs = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(compress_distribution(&probs, &id), probs.to_vec());
    }

    #[test]
    fn compress_preserves_mass() {
        let p = PartitionMap::from_assignment(2, vec![1, 2, 1, 2, 1]);
        let probs = [0.1, 0.15, 0.2, 0.25, 0.3];
        let out = compress_distribution(&probs, &p);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((out[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn choose_d_hat_cases() {
        assert_eq!(choose_d_hat(4, 0.01), 2);
        assert_eq!(choose_d_hat(3, 1.0), 3);
        // d^(2/3) alpha^(2/3) = (1000 * 0.5)^(2/3) ~ 62.996, ceil to 63.
        assert_eq!(choose_d_hat(1000, 0.5), 63);
    }

    #[test]
    fn random_partition_keeps_distance_on_average() {
        // Exhaustive over all 16 maps [1,4] -> [1,2]: the expected distance
        // of the compressed pair dominates the guaranteed floor.
        let d = 4u64;
        let probs = [0.5, 0.5, 0.0, 0.0];
        let uniform = [0.25; 4];
        let alpha = 0.5;
        let mut total = 0.0;
        for code in 0..16usize {
            let assignment: Vec<u64> =
                (0..4).map(|i| ((code >> i) & 1) as u64 + 1).collect();
            let p = PartitionMap::from_assignment(2, assignment);
            let cd = compress_distribution(&probs, &p);
            let cu = compress_distribution(&uniform, &p);
            total += cd
                .iter()
                .zip(&cu)
                .map(|(a, b)| (a - b).max(0.0))
                .sum::<f64>();
        }
        let expected = total / 16.0;
        let floor = compressed_alpha(alpha, d, 2);
        assert!(expected >= floor, "expected={expected} floor={floor}");
    }

    #[test]
    fn lehmer_roundtrip_exhaustive() {
        let ell = 4u64;
        for rank in 0..factorial(ell) {
            let perm = lehmer_unrank(rank, ell);
            assert_eq!(lehmer_rank(&perm), rank);
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![1, 2, 3, 4]);
        }
        assert_eq!(lehmer_unrank(0, 3), vec![1, 2, 3]);
        assert_eq!(lehmer_unrank(5, 3), vec![3, 2, 1]);
    }

    #[test]
    fn pc_encode_decode_roundtrip() {
        let ell = 3u64;
        for tag in 1..=2u64 {
            for rank in 0..factorial(ell) {
                let perm = lehmer_unrank(rank, ell);
                let idx = PCInstance::encode(tag, &perm);
                assert!((1..=2 * factorial(ell)).contains(&idx));
                assert_eq!(PCInstance::decode(idx, ell), (tag, perm));
            }
        }
    }

    #[test]
    fn pc_answer_definition() {
        let inst = PCInstance { ell: 3, a: vec![2, 3, 1], b: vec![3, 1, 2] };
        // a[1] = 2, so the answer is b[2] = 1.
        assert_eq!(inst.answer(), 1);
    }

    #[test]
    fn pc_solve_recovers_answer() {
        let inst = PCInstance { ell: 3, a: vec![2, 3, 1], b: vec![3, 1, 2] };
        let mut correct = 0;
        for seed in 0..20u64 {
            let (ans, est) = pc_solve(&inst, 80, 0.73, seed).unwrap();
            if ans == inst.answer() {
                correct += 1;
            }
            // Bins untouched by the instance are exactly zero unless the
            // Bernoulli noise alone exceeds n, which has negligible mass.
            let enc_a = PCInstance::encode(1, &inst.a) as usize;
            let enc_b = PCInstance::encode(2, &inst.b) as usize;
            for (i, &v) in est.values.iter().enumerate() {
                if i + 1 != enc_a && i + 1 != enc_b {
                    assert_eq!(v, 0.0, "seed {seed} bin {}", i + 1);
                }
            }
        }
        assert!(correct >= 19, "correct={correct}");
    }

    #[test]
    fn pc_solve_guards_universe_size() {
        let inst = PCInstance::random(8, &mut derive_rng(15, 1, 0));
        assert!(matches!(pc_solve(&inst, 10, 0.7, 0), Err(Error::EnumerationBudget(_))));
    }
}
