//! Per-token tag distributions and the `tags.tsv` format.
//!
//! Each row is `token_id<TAB>feature<TAB>label:prob[,label:prob...]`.
//! Backslash escapes `\\`, `\,`, `\:`, `\t` and `\n` allow labels such as
//! `,` or `:` that occur in Penn Treebank tag sets.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SyntaxError, TagFeature};

/// Tolerance on a parsed row's probability mass before renormalising.
const MASS_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagDistribution {
    pub token_id: u32,
    pub feature: TagFeature,
    pub probs: Vec<f64>,
}

/// Distributions of one feature over its label set, for every covered token.
#[derive(Debug, Clone, PartialEq)]
pub struct TagTable {
    pub feature: TagFeature,
    pub labels: Vec<String>,
    rows: HashMap<u32, Vec<f32>>,
}

impl TagTable {
    pub fn new(feature: TagFeature, labels: Vec<String>) -> Self {
        Self {
            feature,
            labels,
            rows: HashMap::new(),
        }
    }

    pub fn insert(&mut self, token_id: u32, probs: Vec<f32>) {
        assert_eq!(probs.len(), self.labels.len());
        self.rows.insert(token_id, probs);
    }

    pub fn get(&self, token_id: u32) -> Option<&[f32]> {
        self.rows.get(&token_id).map(|v| v.as_slice())
    }

    pub fn covers(&self, token_id: u32) -> bool {
        self.rows.contains_key(&token_id)
    }

    pub fn n_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn token_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.rows.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    /// Every row puts all its mass on one label.
    pub fn is_one_hot(&self) -> bool {
        self.rows.values().all(|r| r.iter().all(|&p| p == 0.0 || p == 1.0))
    }

    pub fn distribution(&self, token_id: u32) -> Option<TagDistribution> {
        self.get(token_id).map(|p| TagDistribution {
            token_id,
            feature: self.feature,
            probs: p.iter().map(|&x| x as f64).collect(),
        })
    }

    /// Reassigns rows: token `to` receives what token `from` had.
    pub fn remapped(&self, mapping: &[(u32, u32)]) -> Self {
        let mut out = Self::new(self.feature, self.labels.clone());
        for &(from, to) in mapping {
            if let Some(r) = self.rows.get(&from) {
                out.rows.insert(to, r.clone());
            }
        }
        out
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            ',' => out.push_str("\\,"),
            ':' => out.push_str("\\:"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out
}

/// Splits on unescaped `sep`, keeping escapes in the pieces.
fn split_unescaped(s: &str, sep: char) -> Vec<&str> {
    let mut parts = Vec::new();
    let mut start = 0;
    let mut escaped = false;
    for (i, c) in s.char_indices() {
        if escaped {
            escaped = false;
        } else if c == '\\' {
            escaped = true;
        } else if c == sep {
            parts.push(&s[start..i]);
            start = i + c.len_utf8();
        }
    }
    parts.push(&s[start..]);
    parts
}

fn unescape(s: &str) -> Option<String> {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        out.push(match it.next()? {
            '\\' => '\\',
            ',' => ',',
            ':' => ':',
            't' => '\t',
            'n' => '\n',
            _ => return None,
        });
    }
    Some(out)
}

/// Parses a tags file into one table per feature, in canonical feature
/// order. Labels of each feature are sorted; rows are renormalised.
pub fn parse_tags(text: &str) -> Result<Vec<TagTable>, SyntaxError> {
    let mut raw: BTreeMap<TagFeature, Vec<(u32, Vec<(String, f64)>)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = |reason: String| SyntaxError::BadTags { line: i + 1, reason };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad(format!("expected 3 columns, found {}", cols.len())));
        }
        let id: u32 = cols[0]
            .parse()
            .map_err(|_| bad(format!("bad token id {:?}", cols[0])))?;
        let feature: TagFeature = cols[1].parse().map_err(bad)?;
        let mut items = Vec::new();
        for item in split_unescaped(cols[2], ',') {
            let parts = split_unescaped(item, ':');
            if parts.len() != 2 {
                return Err(bad(format!("bad label:prob item {item:?}")));
            }
            let label = unescape(parts[0]).ok_or_else(|| bad(format!("bad escape in {:?}", parts[0])))?;
            let p: f64 = parts[1]
                .parse()
                .map_err(|_| bad(format!("bad probability {:?}", parts[1])))?;
            if !(p >= 0.0 && p.is_finite()) {
                return Err(bad(format!("probability {p} out of range")));
            }
            items.push((label, p));
        }
        let mass: f64 = items.iter().map(|(_, p)| p).sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(bad(format!("probabilities sum to {mass}")));
        }
        raw.entry(feature).or_default().push((id, items));
    }
    let mut tables = Vec::new();
    for (feature, rows) in raw {
        let mut labels: Vec<String> = rows
            .iter()
            .flat_map(|(_, it)| it.iter().map(|(l, _)| l.clone()))
            .collect();
        labels.sort();
        labels.dedup();
        let index: HashMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut table = TagTable::new(feature, labels.clone());
        for (id, items) in rows {
            if table.covers(id) {
                return Err(SyntaxError::DuplicateTag { token_id: id, feature });
            }
            let mass: f64 = items.iter().map(|(_, p)| p).sum();
            let mut probs = vec![0f64; labels.len()];
            for (l, p) in &items {
                probs[index[l.as_str()]] += p / mass;
            }
            table.insert(id, probs.into_iter().map(|p| p as f32).collect());
        }
        tables.push(table);
    }
    Ok(tables)
}

pub fn load_tags(path: impl AsRef<Path>) -> Result<Vec<TagTable>, SyntaxError> {
    parse_tags(&std::fs::read_to_string(path)?)
}

/// Writes rows sorted by token id; zero-probability labels are omitted.
pub fn format_tags(tables: &[TagTable]) -> String {
    let mut out = String::new();
    for t in tables {
        for id in t.token_ids() {
            let row = t.get(id).expect("listed id");
            let items: Vec<String> = t
                .labels
                .iter()
                .zip(row)
                .filter(|(_, &p)| p > 0.0)
                .map(|(l, p)| format!("{}:{}", escape(l), p))
                .collect();
            let _ = writeln!(out, "{id}\t{}\t{}", t.feature, items.join(","));
        }
    }
    out
}

pub fn write_tags(tables: &[TagTable], path: impl AsRef<Path>) -> Result<(), SyntaxError> {
    std::fs::write(path, format_tags(tables))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_one_hot_and_distributions() {
        let text = "3\tPOS\tNN:1\n4\tPOS\t,:1\n3\tNER\tO:0.75,B-PER:0.25\n";
        let t = parse_tags(&text.replace(",:1", "\\,:1")).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t[0].feature, TagFeature::Pos);
        assert_eq!(t[0].labels, vec![",", "NN"]);
        assert_eq!(t[0].get(4).unwrap(), &[1.0, 0.0]);
        assert!(t[0].is_one_hot());
        assert_eq!(t[1].feature, TagFeature::Ner);
        assert_eq!(t[1].get(3).unwrap(), &[0.25, 0.75]);
        assert!(!t[1].is_one_hot());
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            parse_tags("1\tPOS\tNN:0.5\n"),
            Err(SyntaxError::BadTags { line: 1, .. })
        ));
        assert!(matches!(parse_tags("1\tFOO\tNN:1\n"), Err(SyntaxError::BadTags { .. })));
        assert!(matches!(parse_tags("1\tPOS\tNN\n"), Err(SyntaxError::BadTags { .. })));
        assert!(matches!(
            parse_tags("1\tPOS\tNN:1\n1\tPOS\tVB:1\n"),
            Err(SyntaxError::DuplicateTag { .. })
        ));
    }

    proptest! {
        #[test]
        fn format_parse_round_trip(labels in proptest::collection::btree_set("[A-Z,:\\\\$]{1,4}", 1..5), seed in 0u64..1000) {
            let labels: Vec<String> = labels.into_iter().collect();
            let mut t = TagTable::new(TagFeature::Pos, labels.clone());
            for id in 0..5u32 {
                let k = (seed as usize + id as usize) % labels.len();
                let mut row = vec![0f32; labels.len()];
                row[k] = 1.0;
                t.insert(id, row);
            }
            let back = parse_tags(&format_tags(std::slice::from_ref(&t))).unwrap();
            prop_assert_eq!(back.len(), 1);
            for id in 0..5u32 {
                let k = t.get(id).unwrap().iter().position(|&p| p == 1.0).unwrap();
                let j = back[0].get(id).unwrap().iter().position(|&p| p == 1.0).unwrap();
                prop_assert_eq!(&t.labels[k], &back[0].labels[j]);
            }
        }
    }
}
