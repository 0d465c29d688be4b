//! Tokenization with controllable variability: each word is, with
//! probability rho, replaced by a uniformly drawn two-way split.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{pre_tokenize, BpeError, TokenizationScheme};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariabilityStats {
    pub words: u64,
    /// Words with at least one valid two-way split.
    pub eligible: u64,
    /// Words emitted as a random split.
    pub split: u64,
}

impl VariabilityStats {
    pub fn merge(&mut self, other: &Self) {
        self.words += other.words;
        self.eligible += other.eligible;
        self.split += other.split;
    }

    pub fn split_fraction(&self) -> f64 {
        if self.eligible == 0 {
            0.0
        } else {
            self.split as f64 / self.eligible as f64
        }
    }
}

struct Entry {
    ids: Vec<u32>,
    splits: Vec<(u32, u32)>,
}

type Cache = HashMap<String, Entry>;

impl TokenizationScheme {
    fn entry<'c>(&self, cache: &'c mut Cache, text: &str, is_word: bool) -> Result<&'c Entry, BpeError> {
        if !cache.contains_key(text) {
            let mut ids = Vec::new();
            self.encode_piece(text, &mut ids)?;
            let splits = if is_word { self.two_way_splits(text) } else { Vec::new() };
            cache.insert(text.to_string(), Entry { ids, splits });
        }
        Ok(&cache[text])
    }

    fn variable_into(
        &self,
        text: &str,
        rng: &mut Rng,
        cache: &mut Cache,
        out: &mut Vec<u32>,
        stats: &mut VariabilityStats,
    ) -> Result<(), BpeError> {
        for piece in pre_tokenize(text) {
            let entry = self.entry(cache, piece.text, piece.is_word)?;
            if !piece.is_word {
                out.extend_from_slice(&entry.ids);
                continue;
            }
            // both draws happen for every word so streams stay aligned across rho
            let u: f64 = rng.random();
            let pick: f64 = rng.random();
            stats.words += 1;
            let n = entry.splits.len();
            if n > 0 {
                stats.eligible += 1;
            }
            if u < self.rho && n > 0 {
                let (l, r) = entry.splits[((pick * n as f64) as usize).min(n - 1)];
                out.extend([l, r]);
                stats.split += 1;
            } else {
                out.extend_from_slice(&entry.ids);
            }
        }
        Ok(())
    }

    /// Tokenizes `text` with the scheme's rho, drawing from `rng`.
    pub fn variable_tokenize(&self, text: &str, rng: &mut Rng) -> Result<(Vec<u32>, VariabilityStats), BpeError> {
        let mut out = Vec::new();
        let mut stats = VariabilityStats::default();
        self.variable_into(text, rng, &mut Cache::new(), &mut out, &mut stats)?;
        Ok((out, stats))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedCorpus {
    pub lines: Vec<Vec<u32>>,
    pub stats: VariabilityStats,
}

impl TokenizedCorpus {
    pub fn detokenize(&self, scheme: &TokenizationScheme) -> Result<String, BpeError> {
        let lines = self
            .lines
            .iter()
            .map(|l| scheme.detokenize(l))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(lines.join("\n"))
    }

    pub fn n_tokens(&self) -> usize {
        self.lines.iter().map(Vec::len).sum()
    }
}

const CHUNK_LINES: usize = 2048;

/// Tokenizes each newline-separated line with its own stream seeded by
/// `scheme.seed() ^ line_index`, so the output does not depend on how the
/// work is spread over threads.
pub fn tokenize_corpus(scheme: &TokenizationScheme, text: &str) -> Result<TokenizedCorpus, BpeError> {
    let lines: Vec<&str> = text.split('\n').collect();
    let chunks: Vec<(Vec<Vec<u32>>, VariabilityStats)> = lines
        .par_chunks(CHUNK_LINES)
        .enumerate()
        .map(|(c, chunk)| {
            let mut cache = Cache::new();
            let mut stats = VariabilityStats::default();
            let mut out = Vec::with_capacity(chunk.len());
            for (k, line) in chunk.iter().enumerate() {
                let index = (c * CHUNK_LINES + k) as u64;
                let mut r = rng::seeded(scheme.seed() ^ index);
                let mut ids = Vec::new();
                scheme.variable_into(line, &mut r, &mut cache, &mut ids, &mut stats)?;
                out.push(ids);
            }
            Ok((out, stats))
        })
        .collect::<Result<_, BpeError>>()?;
    let mut result = TokenizedCorpus {
        lines: Vec::with_capacity(lines.len()),
        stats: VariabilityStats::default(),
    };
    for (l, s) in chunks {
        result.lines.extend(l);
        result.stats.merge(&s);
    }
    Ok(result)
}

/// One space-separated id sequence per line.
pub fn write_id_lines(w: &mut impl Write, lines: &[Vec<u32>]) -> io::Result<()> {
    for line in lines {
        let mut first = true;
        for id in line {
            if !first {
                w.write_all(b" ")?;
            }
            write!(w, "{id}")?;
            first = false;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_id_lines(r: impl BufRead) -> io::Result<Vec<Vec<u32>>> {
    r.lines()
        .enumerate()
        .map(|(i, line)| {
            line?
                .split_ascii_whitespace()
                .map(|t| {
                    t.parse::<u32>()
                        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::tests_support::fixture;
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn rho_zero_is_plain_bpe() {
        let s = fixture();
        let text = " the schematics of a dictionary, 42 times\n\tand dicionary";
        let (ids, stats) = s.variable_tokenize(text, &mut rng::seeded(3)).unwrap();
        assert_eq!(ids, s.encode(text).unwrap());
        assert_eq!(stats.split, 0);
        assert_eq!(stats.words, 8);
    }

    #[test]
    fn rho_one_only_emits_valid_splits() {
        let s = fixture().with_variability(1.0, 0).unwrap();
        let allowed: HashSet<Vec<u32>> = s
            .two_way_splits(" schematics")
            .into_iter()
            .map(|(l, r)| vec![l, r])
            .collect();
        let mut seen = HashSet::new();
        for seed in 0..200 {
            let (ids, _) = s.variable_tokenize(" schematics", &mut rng::seeded(seed)).unwrap();
            assert!(allowed.contains(&ids));
            seen.insert(ids);
        }
        assert_eq!(seen, allowed);
    }

    #[test]
    fn unsplittable_words_fall_through() {
        let s = fixture().with_variability(1.0, 0).unwrap();
        let (ids, stats) = s.variable_tokenize(" quiz", &mut rng::seeded(0)).unwrap();
        assert_eq!(ids, s.encode(" quiz").unwrap());
        assert_eq!((stats.eligible, stats.split), (0, 0));
    }

    #[test]
    fn rho_out_of_range() {
        assert!(matches!(fixture().with_variability(1.5, 0), Err(BpeError::BadRho(_))));
    }

    #[test]
    fn corpus_round_trip_and_id_files() {
        let s = fixture().with_variability(0.5, 11).unwrap();
        let text = " the cats\nand the hand\n\n the best story ends";
        let t = tokenize_corpus(&s, text).unwrap();
        assert_eq!(t.lines.len(), 4);
        assert_eq!(t.detokenize(&s).unwrap(), text);
        assert_eq!(tokenize_corpus(&s, text).unwrap(), t);
        let mut buf = Vec::new();
        write_id_lines(&mut buf, &t.lines).unwrap();
        assert_eq!(read_id_lines(&buf[..]).unwrap(), t.lines);
        assert!(read_id_lines(&b"1 x\n"[..]).is_err());
    }
}
