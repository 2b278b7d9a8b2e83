//! Class-independent random descriptors and the descriptor-shuffling
//! variants (interchanged, scrambled, resampled).

use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{round_half_up_min1, CategorySet, ClassDescriptors, DescriptorSet};
use crate::error::{Error, Result};
use crate::rng::stream;

/// 62 ASCII alphanumerics followed by ten punctuation symbols.
pub const DEFAULT_ALPHABET: &str =
    "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789!@#$%&*?;:";

const BUNDLED_WORDLIST: &str = include_str!("../data/wordlist.txt");

/// Words per descriptor and characters per word, derived from classnames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NameStats {
    pub n_words: usize,
    pub word_len: usize,
}

impl NameStats {
    pub fn new(n_words: usize, word_len: usize) -> Result<Self> {
        if n_words == 0 || word_len == 0 {
            return Err(Error::invalid("name stats must be at least 1"));
        }
        Ok(Self { n_words, word_len })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum WaffleMode {
    CharsOnly,
    WordsOnly,
    #[default]
    Joint,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wordlist(Arc<[String]>);

impl Wordlist {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::invalid("wordlist is empty"));
        }
        Ok(Self(words.into()))
    }

    /// The lowercase English list shipped with the crate.
    pub fn bundled() -> Self {
        static BUNDLED: OnceLock<Wordlist> = OnceLock::new();
        BUNDLED
            .get_or_init(|| Self::parse(BUNDLED_WORDLIST).expect("bundled wordlist is non-empty"))
            .clone()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|w| !w.is_empty())
                .map(str::to_owned)
                .collect(),
        )
    }

    pub fn words(&self) -> &[String] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaffleConfig {
    pub mode: WaffleMode,
    /// Descriptors per mode branch; joint mode emits twice this many.
    pub pair_count: usize,
    pub seed: u64,
    pub alphabet: Vec<char>,
    pub wordlist: Wordlist,
}

impl WaffleConfig {
    pub fn new(mode: WaffleMode, pair_count: usize, seed: u64) -> Self {
        Self {
            mode,
            pair_count,
            seed,
            alphabet: DEFAULT_ALPHABET.chars().collect(),
            wordlist: Wordlist::bundled(),
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.pair_count == 0 {
            return Err(Error::invalid("pair_count must be positive"));
        }
        if self.alphabet.is_empty() {
            return Err(Error::invalid("alphabet is empty"));
        }
        Ok(())
    }
}

/// One descriptor list shared by every class.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RandomDescriptorSet {
    pub descriptors: Vec<String>,
}

impl RandomDescriptorSet {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    /// Expands to a per-class set where every class carries the same list.
    pub fn assign_to_all(&self, categories: &CategorySet) -> DescriptorSet {
        DescriptorSet::from_ordered_unchecked(
            categories
                .names()
                .map(|name| ClassDescriptors {
                    class: name.to_owned(),
                    descriptors: self.descriptors.clone(),
                })
                .collect(),
        )
    }
}

pub fn name_stats(categories: &CategorySet) -> Result<NameStats> {
    if categories.is_empty() {
        return Err(Error::invalid("name stats need at least one class"));
    }
    let mut words = 0;
    let mut chars = 0;
    for name in categories.names() {
        for word in name.split_whitespace() {
            words += 1;
            chars += word.chars().count();
        }
    }
    Ok(NameStats {
        n_words: round_half_up_min1(words, categories.len()),
        word_len: round_half_up_min1(chars, words.max(1)),
    })
}

/// `n_words` groups of `word_len` characters, joined by ", ".
pub fn gen_char_descriptor<R: Rng + ?Sized>(rng: &mut R, stats: NameStats, alphabet: &[char]) -> Result<String> {
    if alphabet.is_empty() {
        return Err(Error::invalid("alphabet is empty"));
    }
    let groups: Vec<String> = (0..stats.n_words)
        .map(|_| {
            (0..stats.word_len)
                .map(|_| alphabet[rng.random_range(0..alphabet.len())])
                .collect()
        })
        .collect();
    Ok(groups.join(", "))
}

/// `n_words` distinct wordlist entries, space separated.
pub fn gen_word_descriptor<R: Rng + ?Sized>(rng: &mut R, stats: NameStats, wordlist: &[String]) -> Result<String> {
    if wordlist.len() < stats.n_words {
        return Err(Error::WordlistTooSmall {
            needed: stats.n_words,
            available: wordlist.len(),
        });
    }
    let picked: Vec<&str> = index::sample(rng, wordlist.len(), stats.n_words)
        .into_iter()
        .map(|i| wordlist[i].as_str())
        .collect();
    Ok(picked.join(" "))
}

/// Character descriptors first, then word descriptors, each in generation
/// order.
pub fn gen_waffle_set(config: &WaffleConfig, categories: &CategorySet) -> Result<RandomDescriptorSet> {
    config.validate()?;
    let stats = name_stats(categories)?;
    let mut descriptors = Vec::new();
    if matches!(config.mode, WaffleMode::CharsOnly | WaffleMode::Joint) {
        let mut rng = stream(config.seed, "waffle/chars");
        for _ in 0..config.pair_count {
            descriptors.push(gen_char_descriptor(&mut rng, stats, &config.alphabet)?);
        }
    }
    if matches!(config.mode, WaffleMode::WordsOnly | WaffleMode::Joint) {
        let mut rng = stream(config.seed, "waffle/words");
        for _ in 0..config.pair_count {
            descriptors.push(gen_word_descriptor(&mut rng, stats, config.wordlist.words())?);
        }
    }
    Ok(RandomDescriptorSet { descriptors })
}

/// Uniform random derangement of `n` positions (rejection from uniform
/// permutations; expected e tries).
fn random_derangement<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        perm.shuffle(rng);
        if perm.iter().enumerate().all(|(i, &p)| i != p) {
            return perm;
        }
    }
}

/// Swaps whole descriptor lists between classes so no class keeps its own.
pub fn interchange(set: &DescriptorSet, seed: u64) -> Result<DescriptorSet> {
    let entries = set.entries();
    if entries.len() < 2 {
        return Err(Error::TooFewClasses(entries.len()));
    }
    let perm = random_derangement(&mut stream(seed, "interchange"), entries.len());
    Ok(DescriptorSet::from_ordered_unchecked(
        entries
            .iter()
            .zip(&perm)
            .map(|(entry, &src)| ClassDescriptors {
                class: entry.class.clone(),
                descriptors: entries[src].descriptors.clone(),
            })
            .collect(),
    ))
}

/// Shuffles the words of each class across that class's descriptors,
/// keeping every descriptor's word count.
pub fn scramble(set: &DescriptorSet, seed: u64) -> Result<DescriptorSet> {
    if set.is_empty() {
        return Err(Error::invalid("cannot scramble an empty descriptor set"));
    }
    let mut rng = stream(seed, "scramble");
    let entries = set
        .entries()
        .iter()
        .map(|entry| {
            let counts: Vec<usize> = entry
                .descriptors
                .iter()
                .map(|d| d.split_whitespace().count())
                .collect();
            let mut words: Vec<&str> = entry
                .descriptors
                .iter()
                .flat_map(|d| d.split_whitespace())
                .collect();
            words.shuffle(&mut rng);
            let mut rest = words.as_slice();
            let descriptors = counts
                .iter()
                .map(|&n| {
                    let (head, tail) = rest.split_at(n);
                    rest = tail;
                    head.join(" ")
                })
                .collect();
            ClassDescriptors {
                class: entry.class.clone(),
                descriptors,
            }
        })
        .collect();
    Ok(DescriptorSet::from_ordered_unchecked(entries))
}

/// Redraws each class's list from the global pool, `ceil(multiplier * |D_c|)`
/// items per class. Draws are without replacement unless the request is
/// larger than the pool.
pub fn subsample_random(set: &DescriptorSet, seed: u64, multiplier: f64) -> Result<DescriptorSet> {
    if !(multiplier.is_finite() && multiplier > 0.0) {
        return Err(Error::invalid(format!("multiplier must be positive, got {multiplier}")));
    }
    let pool = set.pool();
    if pool.is_empty() {
        return Err(Error::invalid("descriptor pool is empty"));
    }
    let mut rng = stream(seed, "subsample_random");
    let entries = set
        .entries()
        .iter()
        .map(|entry| {
            let want = (multiplier * entry.descriptors.len() as f64).ceil() as usize;
            let picks: Vec<usize> = if want <= pool.len() {
                index::sample(&mut rng, pool.len(), want).into_vec()
            } else {
                (0..want).map(|_| rng.random_range(0..pool.len())).collect()
            };
            ClassDescriptors {
                class: entry.class.clone(),
                descriptors: picks.into_iter().map(|i| pool[i].to_owned()).collect(),
            }
        })
        .collect();
    Ok(DescriptorSet::from_ordered_unchecked(entries))
}

/// One draw of `k` pool descriptors, shared by all classes.
pub fn subsample_same(set: &DescriptorSet, seed: u64, k: usize) -> Result<RandomDescriptorSet> {
    let pool = set.pool();
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    if k > pool.len() {
        return Err(Error::PoolTooSmall {
            requested: k,
            available: pool.len(),
        });
    }
    let mut rng = stream(seed, "subsample_same");
    Ok(RandomDescriptorSet {
        descriptors: index::sample(&mut rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i].to_owned())
            .collect(),
    })
}
