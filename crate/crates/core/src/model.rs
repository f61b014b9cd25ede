//! Core shuffle-model abstractions: messages, transcripts, derived randomness,
//! and the execution engine that runs a randomizer per user, shuffles, and
//! feeds the result to an analyzer.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use smallvec::SmallVec;

use crate::catalog::{Output, Protocol, Row};
use crate::error::{Error, Result};

/// One message drawn from a finite alphabet. The payload is a short tuple of
/// label components (execution index, bin index, bit value, ...); equality and
/// ordering are componentwise.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Symbol(pub SmallVec<[u32; 4]>);

impl Symbol {
    pub fn new(parts: &[u32]) -> Self {
        Symbol(SmallVec::from_slice(parts))
    }

    pub fn parts(&self) -> &[u32] {
        &self.0
    }
}

/// The messages one user hands to the shuffler. Order carries no meaning once
/// shuffled.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MessageBundle {
    pub messages: Vec<Symbol>,
}

impl MessageBundle {
    pub fn new(messages: Vec<Symbol>) -> Self {
        MessageBundle { messages }
    }

    pub fn push(&mut self, s: Symbol) {
        self.messages.push(s);
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

/// The shuffled multiset the adversary and analyzer see, stored in canonical
/// (lexicographically sorted) order so that multiset equality is plain
/// equality.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Transcript {
    entries: Vec<Symbol>,
}

impl Transcript {
    pub fn from_unsorted(mut entries: Vec<Symbol>) -> Self {
        entries.sort_unstable();
        Transcript { entries }
    }

    pub fn empty() -> Self {
        Transcript { entries: Vec::new() }
    }

    pub fn entries(&self) -> &[Symbol] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) const TAG_USER: u64 = 1;
pub(crate) const TAG_PUBLIC: u64 = 2;
pub(crate) const TAG_SHUFFLE: u64 = 3;

/// Mixes `(seed, tag, index)` into a single 64-bit subseed. Distinct tags and
/// indices give independent-looking streams from one top-level seed.
pub fn subseed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut state = seed ^ tag.wrapping_mul(0xd6e8_feb8_6659_fd93) ^ index.wrapping_mul(GOLDEN);
    splitmix64(&mut state)
}

/// Derives a dedicated RNG for `(seed, tag, index)`. Identical arguments give
/// bit-identical draw sequences.
pub fn derive_rng(seed: u64, tag: u64, index: u64) -> ChaCha12Rng {
    let mut state = subseed(seed, tag, index);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

/// Public random string shared by randomizer, analyzer, and any partition or
/// hash sampling. The stream position selects independent substreams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PublicRandomness {
    pub seed: u64,
}

impl PublicRandomness {
    pub fn new(seed: u64) -> Self {
        PublicRandomness { seed: subseed(seed, TAG_PUBLIC, 0) }
    }

    /// Subseed for stream position `position`.
    pub fn subseed(&self, position: u64) -> u64 {
        subseed(self.seed, TAG_PUBLIC, position)
    }

    pub fn rng_at(&self, position: u64) -> ChaCha12Rng {
        derive_rng(self.seed, TAG_PUBLIC, position)
    }
}

/// Concatenates the bundles and applies a uniformly random permutation,
/// returning the pre-canonical ordering. Exposed so uniformity of the
/// permutation itself is testable.
pub fn permute<R: Rng>(bundles: &[MessageBundle], rng: &mut R) -> Vec<Symbol> {
    let mut all: Vec<Symbol> = bundles
        .iter()
        .flat_map(|b| b.messages.iter().cloned())
        .collect();
    all.shuffle(rng);
    all
}

/// Shuffles the bundles into a canonical transcript.
pub fn shuffle<R: Rng>(bundles: &[MessageBundle], rng: &mut R) -> Transcript {
    Transcript::from_unsorted(permute(bundles, rng))
}

fn randomize_all(protocol: &Protocol, dataset: &[Row], seed: u64) -> Result<Vec<MessageBundle>> {
    let public = PublicRandomness::new(seed);
    dataset
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut rng = derive_rng(seed, TAG_USER, i as u64);
            protocol.randomize(row, &mut rng, &public)
        })
        .collect()
}

/// Runs the full protocol: per-user randomization, shuffle, analysis. All
/// randomness derives from `seed`, so identical `(protocol, dataset, seed)`
/// triples produce identical outputs.
pub fn execute(protocol: &Protocol, dataset: &[Row], seed: u64) -> Result<Output> {
    let n = protocol.n() as usize;
    if dataset.len() != n {
        return Err(Error::Precondition(format!(
            "dataset length {} != protocol n {}",
            dataset.len(),
            n
        )));
    }
    let bundles = randomize_all(protocol, dataset, seed)?;
    let mut shuffle_rng = derive_rng(seed, TAG_SHUFFLE, 0);
    let transcript = shuffle(&bundles, &mut shuffle_rng);
    let public = PublicRandomness::new(seed);
    protocol.analyze(&transcript, &public)
}

/// Runs the randomize-and-shuffle stage for the first `participants` users
/// only, with parameters still computed for the full `n`. This is the
/// adversary's view for robustness (drop-out) audits.
pub fn execute_partial(
    protocol: &Protocol,
    dataset: &[Row],
    participants: usize,
    seed: u64,
) -> Result<Transcript> {
    let n = protocol.n() as usize;
    if participants > n || participants > dataset.len() {
        return Err(Error::Precondition(format!(
            "participant count {participants} exceeds n {n} or dataset size"
        )));
    }
    let bundles = randomize_all(protocol, &dataset[..participants], seed)?;
    let mut shuffle_rng = derive_rng(seed, TAG_SHUFFLE, 0);
    Ok(shuffle(&bundles, &mut shuffle_rng))
}

/// Transcript stage of [`execute`] for all users.
pub fn execute_transcript(protocol: &Protocol, dataset: &[Row], seed: u64) -> Result<Transcript> {
    let n = protocol.n() as usize;
    if dataset.len() != n {
        return Err(Error::Precondition(format!(
            "dataset length {} != protocol n {}",
            dataset.len(),
            n
        )));
    }
    execute_partial(protocol, dataset, n, seed)
}
