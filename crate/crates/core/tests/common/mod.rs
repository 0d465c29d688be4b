#![allow(dead_code)]

use std::collections::HashSet;
use std::path::PathBuf;

use charprobe::bpe::TokenizationScheme;
use charprobe::embedding::EmbeddingTable;
use charprobe::rng;
use charprobe::vocab::{VocabEntry, Vocabulary};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn gpt2_fixture() -> TokenizationScheme {
    let d = fixture_dir().join("gpt2_style");
    TokenizationScheme::load(d.join("merges.txt"), d.join("vocab.json")).unwrap()
}

/// `n` distinct random lowercase words of length 2..=8, each its own lemma,
/// with random corpus frequencies.
pub fn random_words(n: usize, seed: u64) -> Vocabulary {
    let mut r = rng::seeded(seed);
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(n);
    while entries.len() < n {
        let len = r.random_range(2..9);
        let w: String = (0..len).map(|_| (b'a' + r.random_range(0..26u8)) as char).collect();
        if seen.insert(w.clone()) {
            entries.push(VocabEntry {
                id: entries.len() as u32,
                surface: w.clone(),
                lemma: w,
                frequency: r.random_range(1..5000),
            });
        }
    }
    Vocabulary::new(entries).unwrap()
}

/// One row per vocabulary id holding the token's letter counts plus
/// Gaussian noise of standard deviation `noise`.
pub fn letter_count_table(vocab: &Vocabulary, noise: f64, seed: u64) -> EmbeddingTable {
    let n = vocab.max_id().map_or(0, |m| m as usize + 1);
    let mut rows = vec![0f32; n * 26];
    let mut r = rng::seeded(seed);
    let normal = Normal::new(0.0, noise).unwrap();
    for v in rows.iter_mut() {
        *v = normal.sample(&mut r) as f32;
    }
    for e in vocab.iter() {
        for c in e.surface.chars().filter(char::is_ascii_lowercase) {
            rows[e.id as usize * 26 + (c as u8 - b'a') as usize] += 1.0;
        }
    }
    EmbeddingTable::from_rows(n, 26, rows, "letter-counts").unwrap()
}

/// Bag of character unigrams, bigrams and trigrams (with word boundaries)
/// hashed into `dim` buckets.
pub fn ngram_table(vocab: &Vocabulary, dim: usize) -> EmbeddingTable {
    let n = vocab.max_id().map_or(0, |m| m as usize + 1);
    let mut rows = vec![0f32; n * dim];
    for e in vocab.iter() {
        let chars: Vec<char> = e.surface.chars().collect();
        for k in 1..=3 {
            for w in chars.windows(k) {
                let g: String = w.iter().collect();
                let h = rng::derive(k as u64, &[fnv(&g)]) as usize % dim;
                rows[e.id as usize * dim + h] += 1.0;
            }
        }
    }
    EmbeddingTable::from_rows(n, dim, rows, "char-ngrams").unwrap()
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

pub fn tempdir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}
