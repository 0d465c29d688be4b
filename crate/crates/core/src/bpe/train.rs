//! Learning a merge list from raw text.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{byte_alphabet, pre_tokenize, to_byte_level, BpeError, TokenizationScheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BpeTrainOptions {
    /// Final vocabulary size including the 256 byte symbols.
    pub vocab_size: usize,
    /// Pairs seen fewer times than this are never merged.
    pub min_frequency: u64,
}

impl Default for BpeTrainOptions {
    fn default() -> Self {
        Self {
            vocab_size: 8192,
            min_frequency: 2,
        }
    }
}

type Pair = (u32, u32);

fn pairs(word: &[u32]) -> impl Iterator<Item = Pair> + '_ {
    word.windows(2).map(|w| (w[0], w[1]))
}

/// Standard BPE training over pre-tokens: repeatedly merge the most
/// frequent adjacent pair, ties going to the pair of smaller ids.
pub fn train_bpe(text: &str, opts: &BpeTrainOptions) -> Result<TokenizationScheme, BpeError> {
    let mut tokens: Vec<String> = byte_alphabet().into_iter().map(String::from).collect();
    let mut vocab: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();

    let mut piece_counts: HashMap<&str, u64> = HashMap::new();
    for p in pre_tokenize(text) {
        *piece_counts.entry(p.text).or_default() += 1;
    }
    let mut pieces: Vec<(&str, u64)> = piece_counts.into_iter().collect();
    pieces.sort_unstable();
    let mut words: Vec<Vec<u32>> = Vec::with_capacity(pieces.len());
    let mut counts: Vec<i64> = Vec::with_capacity(pieces.len());
    for (p, c) in pieces {
        words.push(
            to_byte_level(p)
                .chars()
                .map(|ch| vocab[ch.to_string().as_str()])
                .collect(),
        );
        counts.push(c as i64);
    }

    let mut pair_counts: HashMap<Pair, i64> = HashMap::new();
    let mut occurs: HashMap<Pair, HashSet<u32>> = HashMap::new();
    for (w, word) in words.iter().enumerate() {
        for p in pairs(word) {
            *pair_counts.entry(p).or_default() += counts[w];
            occurs.entry(p).or_default().insert(w as u32);
        }
    }
    let mut heap: BinaryHeap<(i64, Reverse<Pair>)> = pair_counts.iter().map(|(&p, &c)| (c, Reverse(p))).collect();

    let mut merges = Vec::new();
    while vocab.len() < opts.vocab_size {
        let Some((c, Reverse(pair))) = heap.pop() else { break };
        if pair_counts.get(&pair) != Some(&c) {
            continue;
        }
        if (c as u64) < opts.min_frequency {
            break;
        }
        let merged = format!("{}{}", tokens[pair.0 as usize], tokens[pair.1 as usize]);
        merges.push((tokens[pair.0 as usize].clone(), tokens[pair.1 as usize].clone()));
        let new_id = *vocab.entry(merged.clone()).or_insert_with(|| {
            tokens.push(merged);
            (tokens.len() - 1) as u32
        });

        let mut touched: HashSet<Pair> = HashSet::new();
        let mut ws: Vec<u32> = occurs.remove(&pair).unwrap_or_default().into_iter().collect();
        ws.sort_unstable();
        for w in ws {
            let word = &words[w as usize];
            if !pairs(word).any(|p| p == pair) {
                continue;
            }
            let n = counts[w as usize];
            for p in pairs(word) {
                *pair_counts.get_mut(&p).expect("counted") -= n;
                touched.insert(p);
            }
            let mut next = Vec::with_capacity(word.len());
            let mut i = 0;
            while i < word.len() {
                if i + 1 < word.len() && (word[i], word[i + 1]) == pair {
                    next.push(new_id);
                    i += 2;
                } else {
                    next.push(word[i]);
                    i += 1;
                }
            }
            for p in pairs(&next) {
                *pair_counts.entry(p).or_default() += n;
                occurs.entry(p).or_default().insert(w);
                touched.insert(p);
            }
            words[w as usize] = next;
        }
        pair_counts.remove(&pair);
        let mut touched: Vec<Pair> = touched.into_iter().collect();
        touched.sort_unstable();
        for p in touched {
            match pair_counts.get(&p) {
                Some(&c) if c > 0 => heap.push((c, Reverse(p))),
                Some(_) => {
                    pair_counts.remove(&p);
                }
                None => {}
            }
        }
    }
    TokenizationScheme::new(merges, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_frequent_words() {
        let text = " the cat the cat the cat the dog".repeat(20);
        let s = train_bpe(
            &text,
            &BpeTrainOptions {
                vocab_size: 270,
                min_frequency: 2,
            },
        )
        .unwrap();
        assert_eq!(s.encode(" the").unwrap().len(), 1);
        assert_eq!(s.encode(" cat").unwrap().len(), 1);
        assert_eq!(s.detokenize(&s.encode(&text).unwrap()).unwrap(), text);
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let s = train_bpe(
            "abab abab xy",
            &BpeTrainOptions {
                vocab_size: 257,
                min_frequency: 1,
            },
        )
        .unwrap();
        assert_eq!(s.merges(), [("a".to_string(), "b".to_string())]);
    }

    #[test]
    fn min_frequency_stops_training() {
        let s = train_bpe(
            "ab cd",
            &BpeTrainOptions {
                vocab_size: 400,
                min_frequency: 2,
            },
        )
        .unwrap();
        assert!(s.merges().is_empty());
        assert_eq!(s.vocab_size(), 256);
    }

    /// Quadratic reference: recount every pair from scratch each round.
    fn naive(text: &str, rounds: usize) -> Vec<(String, String)> {
        let mut words: Vec<Vec<String>> = pre_tokenize(text)
            .iter()
            .map(|p| to_byte_level(p.text).chars().map(String::from).collect())
            .collect();
        let order: HashMap<String, usize> = byte_alphabet()
            .into_iter()
            .enumerate()
            .map(|(i, c)| (c.to_string(), i))
            .collect();
        let mut order = order;
        let mut out = Vec::new();
        for _ in 0..rounds {
            let mut counts: HashMap<(String, String), i64> = HashMap::new();
            for w in &words {
                for p in w.windows(2) {
                    *counts.entry((p[0].clone(), p[1].clone())).or_default() += 1;
                }
            }
            let Some(best) = counts
                .into_iter()
                .filter(|&(_, c)| c >= 2)
                .max_by_key(|((a, b), c)| (*c, Reverse((order[a], order[b]))))
            else {
                break;
            };
            let (a, b) = best.0;
            let m = format!("{a}{b}");
            let next_id = order.len();
            order.entry(m.clone()).or_insert(next_id);
            for w in words.iter_mut() {
                let mut next = Vec::new();
                let mut i = 0;
                while i < w.len() {
                    if i + 1 < w.len() && w[i] == a && w[i + 1] == b {
                        next.push(m.clone());
                        i += 2;
                    } else {
                        next.push(w[i].clone());
                        i += 1;
                    }
                }
                *w = next;
            }
            out.push((a, b));
        }
        out
    }

    #[test]
    fn matches_naive_trainer() {
        let text = "the theme of these themes: then, there, the other 123 1234 aaaa aaa\n ababab";
        let s = train_bpe(
            text,
            &BpeTrainOptions {
                vocab_size: 300,
                min_frequency: 2,
            },
        )
        .unwrap();
        assert_eq!(s.merges(), naive(text, 44).as_slice());
    }
}
