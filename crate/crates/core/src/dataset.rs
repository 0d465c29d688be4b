//! Balanced probe datasets and leakage-free grouped splits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;
use crate::vocab::{fold_char, lemma_key, Markers, Vocabulary};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("no token contains {0:?}")]
    NoPositives(char),
    #[error("every token contains {0:?}")]
    NoNegatives(char),
    #[error("split ratio must lie strictly between 0 and 1 (got {0})")]
    BadRatio(f64),
    #[error("cannot split {total} examples at ratio {ratio}: {reason}")]
    UnsatisfiableRatio { ratio: f64, total: usize, reason: String },
    #[error("token id {0} is not in the vocabulary")]
    UnknownToken(u32),
    #[error("dataset dump line {line}: {reason}")]
    BadDump { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Allowed deviation of the realised train fraction from the target ratio.
pub const SPLIT_TOLERANCE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    /// Tokens sharing a lemma stay together.
    Lemma,
    /// All pairs sharing a superstring token stay together.
    Superstring,
    /// No grouping; every example is its own group.
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharExample {
    pub token_id: u32,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharDataset {
    pub target: char,
    pub examples: Vec<CharExample>,
    pub case_sensitive: bool,
    pub seed: u64,
    pub grouping: GroupKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    /// Candidate substring.
    pub u: u32,
    /// Superstring.
    pub v: u32,
    pub label: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubstringDataset {
    pub examples: Vec<PairExample>,
    pub seed: u64,
    /// Superstrings whose negatives had to be drawn with replacement, or
    /// positives dropped for want of any same-length negative.
    pub warnings: Vec<String>,
}

/// Does `surface` (marker-stripped) contain `target`?
pub fn contains_char(surface: &str, target: char, case_sensitive: bool, markers: &Markers) -> bool {
    let body = markers.strip(surface);
    if case_sensitive {
        body.contains(target)
    } else {
        let t = fold_char(target);
        body.chars().any(|c| fold_char(c) == t)
    }
}

/// Builds the balanced dataset for one target character. All examples of the
/// minority class are kept; the majority class is undersampled uniformly
/// without replacement.
pub fn build_char_dataset(
    vocab: &Vocabulary,
    target: char,
    case_sensitive: bool,
    markers: &Markers,
    seed: u64,
) -> Result<CharDataset, DatasetError> {
    let (pos, neg): (Vec<u32>, Vec<u32>) = {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for e in vocab.iter() {
            if contains_char(&e.surface, target, case_sensitive, markers) {
                pos.push(e.id);
            } else {
                neg.push(e.id);
            }
        }
        (pos, neg)
    };
    if pos.is_empty() {
        return Err(DatasetError::NoPositives(target));
    }
    if neg.is_empty() {
        return Err(DatasetError::NoNegatives(target));
    }
    let mut r = rng::seeded(rng::derive(seed, &[target as u64, 0xDA7A]));
    let n = pos.len().min(neg.len());
    let undersample = |ids: &[u32], r: &mut rng::Rng| -> HashSet<u32> {
        if ids.len() == n {
            ids.iter().copied().collect()
        } else {
            rand::seq::index::sample(r, ids.len(), n)
                .into_iter()
                .map(|i| ids[i])
                .collect()
        }
    };
    let keep_pos = undersample(&pos, &mut r);
    let keep_neg = undersample(&neg, &mut r);
    let examples = vocab
        .iter()
        .filter_map(|e| {
            if keep_pos.contains(&e.id) {
                Some(CharExample {
                    token_id: e.id,
                    label: true,
                })
            } else if keep_neg.contains(&e.id) {
                Some(CharExample {
                    token_id: e.id,
                    label: false,
                })
            } else {
                None
            }
        })
        .collect();
    Ok(CharDataset {
        target,
        examples,
        case_sensitive,
        seed,
        grouping: GroupKind::Lemma,
    })
}

impl CharDataset {
    pub fn with_grouping(mut self, grouping: GroupKind) -> Self {
        self.grouping = grouping;
        self
    }

    pub fn positives(&self) -> usize {
        self.examples.iter().filter(|e| e.label).count()
    }
}

/// Proper contiguous substring test on marker-stripped surfaces.
pub fn is_proper_substring(u: &str, v: &str) -> bool {
    u.len() < v.len() && !u.is_empty() && v.contains(u)
}

/// For every superstring `v`, every in-vocabulary token `u` whose stripped
/// surface is a proper substring of `v`'s becomes a positive; each positive
/// gets one negative of the same character length that is not a substring.
pub fn build_substring_dataset(vocab: &Vocabulary, markers: &Markers, seed: u64) -> SubstringDataset {
    let stripped: Vec<(u32, &str)> = vocab.iter().map(|e| (e.id, markers.strip(&e.surface))).collect();
    let mut by_surface: HashMap<&str, Vec<u32>> = HashMap::new();
    let mut by_len: BTreeMap<usize, Vec<(u32, &str)>> = BTreeMap::new();
    for &(id, s) in &stripped {
        if s.is_empty() {
            continue;
        }
        by_surface.entry(s).or_default().push(id);
        by_len.entry(s.chars().count()).or_default().push((id, s));
    }

    let mut r = rng::seeded(rng::derive(seed, &[0x5B57]));
    let mut examples = Vec::new();
    let mut warnings = Vec::new();
    for &(v_id, v) in &stripped {
        let chars: Vec<(usize, char)> = v.char_indices().collect();
        let n = chars.len();
        if n < 2 {
            continue;
        }
        let mut subs: Vec<&str> = Vec::new();
        let mut seen: HashSet<&str> = HashSet::new();
        for i in 0..n {
            for j in (i + 1)..=n {
                if i == 0 && j == n {
                    continue;
                }
                let start = chars[i].0;
                let end = if j == n { v.len() } else { chars[j].0 };
                let s = &v[start..end];
                if by_surface.contains_key(s) && seen.insert(s) {
                    subs.push(s);
                }
            }
        }
        // positives grouped by character length, in discovery order
        let mut positives_by_len: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        for s in subs {
            let len = s.chars().count();
            positives_by_len
                .entry(len)
                .or_default()
                .extend(by_surface[s].iter().copied());
        }
        for (len, positives) in positives_by_len {
            let pool: Vec<u32> = by_len
                .get(&len)
                .map(|c| c.iter().filter(|(_, w)| !v.contains(w)).map(|&(id, _)| id).collect())
                .unwrap_or_default();
            if pool.is_empty() {
                warnings.push(format!(
                    "token {v_id}: no length-{len} non-substring available, dropped {} positives",
                    positives.len()
                ));
                continue;
            }
            let negatives: Vec<u32> = if pool.len() >= positives.len() {
                rand::seq::index::sample(&mut r, pool.len(), positives.len())
                    .into_iter()
                    .map(|i| pool[i])
                    .collect()
            } else {
                warnings.push(format!(
                    "token {v_id}: only {} length-{len} negatives for {} positives, sampling with replacement",
                    pool.len(),
                    positives.len()
                ));
                (0..positives.len()).map(|_| *pool.choose(&mut r).unwrap()).collect()
            };
            for (u, neg) in positives.into_iter().zip(negatives) {
                examples.push(PairExample {
                    u,
                    v: v_id,
                    label: true,
                });
                examples.push(PairExample {
                    u: neg,
                    v: v_id,
                    label: false,
                });
            }
        }
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    SubstringDataset {
        examples,
        seed,
        warnings,
    }
}

/// Train/test partition over example indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub ratio_target: f64,
    pub group_key: GroupKind,
    /// Group index of every example.
    pub groups: Vec<usize>,
}

impl SplitPlan {
    pub fn train_fraction(&self) -> f64 {
        self.train.len() as f64 / (self.train.len() + self.test.len()).max(1) as f64
    }

    /// Splits the train side again (by the same groups) into an inner train
    /// side and a held-out side of roughly `holdout` fraction.
    pub fn holdout(&self, holdout: f64, seed: u64) -> Result<SplitPlan, DatasetError> {
        let keys: Vec<usize> = self.train.iter().map(|&i| self.groups[i]).collect();
        let inner = split_by_keys(&keys, 1.0 - holdout, seed, self.group_key)?;
        let map = |v: &[usize]| v.iter().map(|&k| self.train[k]).collect::<Vec<_>>();
        let mut groups = self.groups.clone();
        // examples outside the train side are excluded from both inner sides
        for &i in &self.test {
            groups[i] = usize::MAX;
        }
        Ok(SplitPlan {
            train: map(&inner.train),
            test: map(&inner.test),
            ratio_target: 1.0 - holdout,
            group_key: self.group_key,
            groups,
        })
    }
}

/// Anything that can be partitioned by group keys.
pub trait Splittable {
    fn grouping(&self) -> GroupKind;
    /// One key per example; examples with equal keys share a side.
    fn group_keys(&self, vocab: &Vocabulary) -> Result<Vec<String>, DatasetError>;
}

impl Splittable for CharDataset {
    fn grouping(&self) -> GroupKind {
        self.grouping
    }

    fn group_keys(&self, vocab: &Vocabulary) -> Result<Vec<String>, DatasetError> {
        self.examples
            .iter()
            .map(|e| match self.grouping {
                GroupKind::Lemma => {
                    let entry = vocab.get(e.token_id).ok_or(DatasetError::UnknownToken(e.token_id))?;
                    Ok(format!("{:?}", lemma_key(entry)))
                }
                _ => Ok(e.token_id.to_string()),
            })
            .collect()
    }
}

impl Splittable for SubstringDataset {
    fn grouping(&self) -> GroupKind {
        GroupKind::Superstring
    }

    fn group_keys(&self, _vocab: &Vocabulary) -> Result<Vec<String>, DatasetError> {
        Ok(self.examples.iter().map(|e| e.v.to_string()).collect())
    }
}

/// Grouped split: groups are shuffled with `seed`, then packed whole into the
/// train side while it stays below `ratio * total` and the group still fits
/// within the tolerance band; the remaining groups form the test side.
pub fn split_grouped(
    dataset: &impl Splittable,
    vocab: &Vocabulary,
    ratio: f64,
    seed: u64,
) -> Result<SplitPlan, DatasetError> {
    let keys = dataset.group_keys(vocab)?;
    split_by_keys(&keys, ratio, seed, dataset.grouping())
}

pub fn split_by_keys<K: std::hash::Hash + Eq + Clone>(
    keys: &[K],
    ratio: f64,
    seed: u64,
    kind: GroupKind,
) -> Result<SplitPlan, DatasetError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DatasetError::BadRatio(ratio));
    }
    let total = keys.len();
    let mut index: HashMap<K, usize> = HashMap::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut groups = Vec::with_capacity(total);
    for (i, k) in keys.iter().enumerate() {
        let g = *index.entry(k.clone()).or_insert_with(|| {
            members.push(Vec::new());
            members.len() - 1
        });
        members[g].push(i);
        groups.push(g);
    }
    let largest = members.iter().map(Vec::len).max().unwrap_or(0);
    if largest as f64 > ratio.max(1.0 - ratio) * total as f64 {
        return Err(DatasetError::UnsatisfiableRatio {
            ratio,
            total,
            reason: format!("a single group holds {largest} examples"),
        });
    }

    let mut order: Vec<usize> = (0..members.len()).collect();
    order.shuffle(&mut rng::seeded(rng::derive(seed, &[0x5971])));
    let target = ratio * total as f64;
    let ceiling = target + SPLIT_TOLERANCE * total as f64;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for g in order {
        let size = members[g].len();
        if (train.len() as f64) < target && (train.len() + size) as f64 <= ceiling + 1e-9 {
            train.extend_from_slice(&members[g]);
        } else {
            test.extend_from_slice(&members[g]);
        }
    }
    let frac = train.len() as f64 / total.max(1) as f64;
    if (frac - ratio).abs() > SPLIT_TOLERANCE + 1e-9 {
        return Err(DatasetError::UnsatisfiableRatio {
            ratio,
            total,
            reason: format!("group sizes only allow a train fraction of {frac:.3}"),
        });
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitPlan {
        train,
        test,
        ratio_target: ratio,
        group_key: kind,
        groups,
    })
}

/// `token_id<TAB>label<TAB>split` lines for auditing.
pub fn dump_char_dataset(dataset: &CharDataset, split: &SplitPlan) -> String {
    let mut side = vec!["none"; dataset.examples.len()];
    for &i in &split.train {
        side[i] = "train";
    }
    for &i in &split.test {
        side[i] = "test";
    }
    let mut out = String::new();
    for (e, s) in dataset.examples.iter().zip(side) {
        writeln!(out, "{}\t{}\t{}", e.token_id, u8::from(e.label), s).unwrap();
    }
    out
}

/// Inverse of [`dump_char_dataset`]. Group indices are rebuilt from the
/// vocabulary under `grouping`.
pub fn parse_char_dump(
    text: &str,
    target: char,
    case_sensitive: bool,
    seed: u64,
    ratio: f64,
    grouping: GroupKind,
    vocab: &Vocabulary,
) -> Result<(CharDataset, SplitPlan), DatasetError> {
    let mut examples = Vec::new();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let bad = |reason: &str| DatasetError::BadDump {
            line: i + 1,
            reason: reason.to_string(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        let token_id: u32 = cols[0].parse().map_err(|_| bad("bad token id"))?;
        let label = match cols[1] {
            "1" => true,
            "0" => false,
            _ => return Err(bad("bad label")),
        };
        match cols[2] {
            "train" => train.push(examples.len()),
            "test" => test.push(examples.len()),
            _ => return Err(bad("bad split")),
        }
        examples.push(CharExample { token_id, label });
    }
    let dataset = CharDataset {
        target,
        examples,
        case_sensitive,
        seed,
        grouping,
    };
    let keys = dataset.group_keys(vocab)?;
    let mut index: HashMap<&String, usize> = HashMap::new();
    let groups = keys
        .iter()
        .map(|k| {
            let n = index.len();
            *index.entry(k).or_insert(n)
        })
        .collect();
    let split = SplitPlan {
        train,
        test,
        ratio_target: ratio,
        group_key: grouping,
        groups,
    };
    Ok((dataset, split))
}

pub fn write_char_dump(dataset: &CharDataset, split: &SplitPlan, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    std::fs::write(path, dump_char_dataset(dataset, split))?;
    Ok(())
}

/// Draws a uniformly random subset of `k` groups' worth of pair examples;
/// used to cap substring datasets on very large vocabularies.
pub fn cap_superstrings(dataset: &SubstringDataset, max_superstrings: usize, seed: u64) -> SubstringDataset {
    let mut vs: Vec<u32> = dataset.examples.iter().map(|e| e.v).collect();
    vs.sort_unstable();
    vs.dedup();
    if vs.len() <= max_superstrings {
        return dataset.clone();
    }
    let mut r = rng::seeded(rng::derive(seed, &[0xCA9]));
    let keep: HashSet<u32> = vs.choose_multiple(&mut r, max_superstrings).copied().collect();
    SubstringDataset {
        examples: dataset
            .examples
            .iter()
            .filter(|e| keep.contains(&e.v))
            .copied()
            .collect(),
        seed: dataset.seed,
        warnings: dataset.warnings.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::{VocabEntry, Vocabulary};

    fn vocab_of(surfaces: &[&str]) -> Vocabulary {
        Vocabulary::new(
            surfaces
                .iter()
                .enumerate()
                .map(|(i, s)| VocabEntry {
                    id: i as u32,
                    surface: s.to_string(),
                    lemma: String::new(),
                    frequency: 0,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn balanced_char_dataset() {
        let v = vocab_of(&["cat", "dog", "act", "zzz"]);
        let d = build_char_dataset(&v, 'a', false, &Markers::standard(), 1).unwrap();
        assert_eq!(d.examples.len(), 4);
        assert_eq!(d.positives(), 2);
        let pos: Vec<u32> = d.examples.iter().filter(|e| e.label).map(|e| e.token_id).collect();
        assert_eq!(pos, [0, 2]);
    }

    #[test]
    fn case_modes() {
        let v = vocab_of(&["Cat", "cot", "dog", "pig"]);
        let m = Markers::standard();
        let ins = build_char_dataset(&v, 'c', false, &m, 0).unwrap();
        assert_eq!(ins.positives(), 2);
        let sen = build_char_dataset(&v, 'c', true, &m, 0).unwrap();
        let pos: Vec<u32> = sen.examples.iter().filter(|e| e.label).map(|e| e.token_id).collect();
        assert_eq!(pos, [1]);
    }

    #[test]
    fn markers_are_not_characters() {
        let v = vocab_of(&["Ġab", "ab", "##x"]);
        assert!(!contains_char("##x", '#', true, &Markers::standard()));
        let d = build_char_dataset(&v, 'x', false, &Markers::standard(), 0).unwrap();
        assert_eq!(d.positives(), 1);
    }

    #[test]
    fn missing_class_errors() {
        let v = vocab_of(&["aa", "ab"]);
        let m = Markers::standard();
        assert!(matches!(
            build_char_dataset(&v, 'z', false, &m, 0),
            Err(DatasetError::NoPositives('z'))
        ));
        assert!(matches!(
            build_char_dataset(&v, 'a', false, &m, 0),
            Err(DatasetError::NoNegatives('a'))
        ));
    }

    #[test]
    fn singleton_groups_split_80_20() {
        let keys: Vec<u32> = (0..10).collect();
        let s = split_by_keys(&keys, 0.8, 3, GroupKind::Token).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (8, 2));
    }

    #[test]
    fn lemma_groups_stay_together() {
        let mut entries: Vec<VocabEntry> = [
            "run", "runs", "running", "cat", "cats", "dog", "bird", "fish", "cow", "ant", "bee", "elk",
        ]
        .iter()
        .enumerate()
        .map(|(i, s)| VocabEntry {
            id: i as u32,
            surface: s.to_string(),
            lemma: String::new(),
            frequency: 0,
        })
        .collect();
        for e in entries.iter_mut().take(3) {
            e.lemma = "run".into();
        }
        let v = Vocabulary::new(entries).unwrap();
        let d = CharDataset {
            target: 'x',
            examples: v
                .iter()
                .map(|e| CharExample {
                    token_id: e.id,
                    label: e.id % 2 == 0,
                })
                .collect(),
            case_sensitive: false,
            seed: 0,
            grouping: GroupKind::Lemma,
        };
        for seed in 0..20 {
            let s = split_grouped(&d, &v, 0.8, seed).unwrap();
            let in_train = |i: usize| s.train.contains(&i);
            assert_eq!(in_train(0), in_train(1));
            assert_eq!(in_train(1), in_train(2));
        }
    }

    #[test]
    fn oversized_group_is_unsatisfiable() {
        let keys = ["a", "a", "a", "a", "a", "a", "a", "a", "a", "b"];
        assert!(matches!(
            split_by_keys(&keys, 0.8, 0, GroupKind::Lemma),
            Err(DatasetError::UnsatisfiableRatio { .. })
        ));
        assert!(matches!(
            split_by_keys(&keys, 1.0, 0, GroupKind::Lemma),
            Err(DatasetError::BadRatio(_))
        ));
    }

    #[test]
    fn substring_positives_for_some() {
        let v = vocab_of(&["some", "ome", "so", "me", "xyz", "abc", "qq", "zz"]);
        let d = build_substring_dataset(&v, &Markers::standard(), 0);
        let pos: HashSet<(u32, u32)> = d.examples.iter().filter(|e| e.label).map(|e| (e.u, e.v)).collect();
        // "me" also sits inside "ome"
        assert_eq!(pos, HashSet::from([(1, 0), (2, 0), (3, 0), (3, 1)]));
    }

    #[test]
    fn substring_negatives_with_replacement() {
        let v = vocab_of(&["ab", "a", "b", "c"]);
        let d = build_substring_dataset(&v, &Markers::standard(), 0);
        let pos: Vec<_> = d.examples.iter().filter(|e| e.label).map(|e| (e.u, e.v)).collect();
        let neg: Vec<_> = d.examples.iter().filter(|e| !e.label).map(|e| (e.u, e.v)).collect();
        assert_eq!(pos, [(1, 0), (2, 0)]);
        assert_eq!(neg, [(3, 0), (3, 0)]);
        assert_eq!(d.warnings.len(), 1);
    }

    #[test]
    fn dump_round_trip() {
        let v = vocab_of(&["cat", "dog", "act", "zzz", "tab", "bat", "ox", "yak", "eel", "emu"]);
        let d = build_char_dataset(&v, 'a', false, &Markers::standard(), 4).unwrap();
        let s = split_grouped(&d, &v, 0.8, 4).unwrap();
        let text = dump_char_dataset(&d, &s);
        let (d2, s2) = parse_char_dump(&text, 'a', false, 4, 0.8, GroupKind::Lemma, &v).unwrap();
        assert_eq!(d2.examples, d.examples);
        assert_eq!((s2.train, s2.test), (s.train, s.test));
    }

    #[test]
    fn holdout_stays_inside_train() {
        let keys: Vec<u32> = (0..200).map(|i| i / 2).collect();
        let s = split_by_keys(&keys, 0.8, 1, GroupKind::Lemma).unwrap();
        let h = s.holdout(0.1, 2).unwrap();
        let train: HashSet<usize> = s.train.iter().copied().collect();
        assert!(h.train.iter().chain(&h.test).all(|i| train.contains(i)));
        assert_eq!(h.train.len() + h.test.len(), s.train.len());
        assert!(!h.test.is_empty());
    }
}
