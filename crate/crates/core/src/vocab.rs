//! Tokenizer vocabularies, marker handling and target alphabets.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// GPT-2 / RoBERTa leading-space marker.
pub const GPT_SPACE: &str = "\u{0120}";
/// SentencePiece leading-space marker.
pub const SP_SPACE: &str = "\u{2581}";
/// WordPiece continuation marker.
pub const WORDPIECE_CONT: &str = "##";

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("line {line}: duplicate token id {id}")]
    DuplicateId { line: usize, id: u32 },
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("no character occurs in at least {min_tokens} tokens")]
    EmptyAlphabet { min_tokens: usize },
    #[error("alphabet must contain at least one character and no duplicates")]
    InvalidAlphabet,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabEntry {
    pub id: u32,
    /// Surface form with marker characters kept literally.
    pub surface: String,
    /// Lowercase lemma, empty when unknown.
    pub lemma: String,
    /// Corpus frequency, 0 when unknown.
    pub frequency: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    by_id: HashMap<u32, usize>,
}

impl Vocabulary {
    pub fn new(entries: Vec<VocabEntry>) -> Result<Self, VocabError> {
        let mut by_id = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.surface.is_empty() {
                return Err(VocabError::MalformedRow {
                    line: i + 1,
                    reason: "empty surface".into(),
                });
            }
            if by_id.insert(e.id, i).is_some() {
                return Err(VocabError::DuplicateId { line: i + 1, id: e.id });
            }
        }
        Ok(Self { entries, by_id })
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&VocabEntry> {
        self.by_id.get(&id).map(|&i| &self.entries[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &VocabEntry> {
        self.entries.iter()
    }

    pub fn max_id(&self) -> Option<u32> {
        self.entries.iter().map(|e| e.id).max()
    }

    /// Keeps the `k` most frequent entries (ties by id), in original order.
    pub fn top_by_frequency(&self, k: usize) -> Vocabulary {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| {
            let (ea, eb) = (&self.entries[a], &self.entries[b]);
            eb.frequency.cmp(&ea.frequency).then(ea.id.cmp(&eb.id))
        });
        let mut keep: Vec<usize> = order.into_iter().take(k).collect();
        keep.sort_unstable();
        self.subset(keep)
    }

    fn subset(&self, indices: Vec<usize>) -> Vocabulary {
        let entries: Vec<VocabEntry> = indices.into_iter().map(|i| self.entries[i].clone()).collect();
        Vocabulary::new(entries).expect("subset of a valid vocabulary is valid")
    }
}

fn unescape(field: &str, line: usize) -> Result<String, VocabError> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some('\\') => out.push('\\'),
            other => {
                return Err(VocabError::MalformedRow {
                    line,
                    reason: format!("bad escape \\{}", other.map(String::from).unwrap_or_default()),
                })
            }
        }
    }
    Ok(out)
}

fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

pub fn parse_vocab(text: &str) -> Result<Vocabulary, VocabError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 4 {
            return Err(VocabError::MalformedRow {
                line,
                reason: format!("expected 4 tab-separated columns, found {}", cols.len()),
            });
        }
        let id: u32 = cols[0].parse().map_err(|_| VocabError::MalformedRow {
            line,
            reason: format!("bad id {:?}", cols[0]),
        })?;
        let surface = unescape(cols[1], line)?;
        if surface.is_empty() {
            return Err(VocabError::MalformedRow {
                line,
                reason: "empty surface".into(),
            });
        }
        let frequency: u64 = cols[3].parse().map_err(|_| VocabError::MalformedRow {
            line,
            reason: format!("bad frequency {:?}", cols[3]),
        })?;
        if !seen.insert(id) {
            return Err(VocabError::DuplicateId { line, id });
        }
        entries.push(VocabEntry {
            id,
            surface,
            lemma: unescape(cols[2], line)?,
            frequency,
        });
    }
    Vocabulary::new(entries)
}

pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocabulary, VocabError> {
    parse_vocab(&fs::read_to_string(path)?)
}

pub fn write_vocab(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<(), VocabError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for e in vocab.iter() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            e.id,
            escape(&e.surface),
            escape(&e.lemma),
            e.frequency
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Prefix markers a tokenizer attaches to surfaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Markers(Vec<String>);

impl Markers {
    pub fn new<I, S>(markers: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut m: Vec<String> = markers.into_iter().map(Into::into).filter(|s| !s.is_empty()).collect();
        // longest first so "##" wins over "#"
        m.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        m.dedup();
        Self(m)
    }

    pub fn none() -> Self {
        Self(Vec::new())
    }

    /// Ġ, ## and ▁.
    pub fn standard() -> Self {
        Self::new([GPT_SPACE, WORDPIECE_CONT, SP_SPACE])
    }

    /// Removes at most one leading marker.
    pub fn strip<'a>(&self, surface: &'a str) -> &'a str {
        self.0
            .iter()
            .find_map(|m| surface.strip_prefix(m.as_str()))
            .unwrap_or(surface)
    }

    pub fn leading<'a>(&self, surface: &'a str) -> Option<&'a str> {
        self.0
            .iter()
            .find(|m| surface.starts_with(m.as_str()))
            .map(|m| &surface[..m.len()])
    }

    pub fn contains_char(&self, c: char) -> bool {
        self.0.iter().any(|m| m.contains(c))
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }
}

impl Default for Markers {
    fn default() -> Self {
        Self::standard()
    }
}

/// Simple per-character lowercasing; characters whose lowercase form is not a
/// single code point are left unchanged.
pub fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

pub fn fold_str(s: &str) -> String {
    s.chars().map(fold_char).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alphabet {
    script_name: String,
    characters: Vec<char>,
    case_sensitive: bool,
}

impl Alphabet {
    pub fn new(
        script_name: impl Into<String>,
        characters: impl IntoIterator<Item = char>,
        case_sensitive: bool,
    ) -> Result<Self, VocabError> {
        let characters: Vec<char> = characters.into_iter().collect();
        let unique: HashSet<char> = characters.iter().copied().collect();
        if characters.is_empty() || unique.len() != characters.len() {
            return Err(VocabError::InvalidAlphabet);
        }
        Ok(Self {
            script_name: script_name.into(),
            characters,
            case_sensitive,
        })
    }

    /// Lowercase a-z, case-insensitive.
    pub fn english() -> Self {
        Self::new("latin", 'a'..='z', false).unwrap()
    }

    pub fn script_name(&self) -> &str {
        &self.script_name
    }

    pub fn characters(&self) -> &[char] {
        &self.characters
    }

    pub fn case_sensitive(&self) -> bool {
        self.case_sensitive
    }

    pub fn with_case_sensitivity(&self, case_sensitive: bool) -> Self {
        Self {
            case_sensitive,
            ..self.clone()
        }
    }

    pub fn contains(&self, c: char) -> bool {
        let c = if self.case_sensitive { c } else { fold_char(c) };
        self.characters.contains(&c)
    }
}

/// Keeps entries whose marker-stripped surface is a nonempty string of
/// alphabet characters. Order is preserved.
pub fn filter_alphabetic(vocab: &Vocabulary, alphabet: &Alphabet, markers: &Markers) -> Vocabulary {
    let allowed: HashSet<char> = alphabet.characters().iter().copied().collect();
    let keep: Vec<usize> = vocab
        .entries()
        .iter()
        .enumerate()
        .filter(|(_, e)| {
            let body = markers.strip(&e.surface);
            !body.is_empty()
                && body.chars().all(|c| {
                    let c = if alphabet.case_sensitive() { c } else { fold_char(c) };
                    allowed.contains(&c)
                })
        })
        .map(|(i, _)| i)
        .collect();
    vocab.subset(keep)
}

#[derive(Debug, Clone)]
pub struct DeriveOptions {
    pub min_tokens: usize,
    pub markers: Markers,
    /// When false, surfaces are lowercased before counting.
    pub case_sensitive: bool,
    pub script_name: String,
}

impl Default for DeriveOptions {
    fn default() -> Self {
        Self {
            min_tokens: 250,
            markers: Markers::standard(),
            case_sensitive: false,
            script_name: "derived".into(),
        }
    }
}

/// Characters occurring in at least `min_tokens` distinct (marker-stripped)
/// surfaces, in ascending code point order.
pub fn derive_alphabet(vocab: &Vocabulary, opts: &DeriveOptions) -> Result<Alphabet, VocabError> {
    let min_tokens = opts.min_tokens.max(1);
    let mut surfaces: HashSet<String> = HashSet::new();
    for e in vocab.iter() {
        let body = opts.markers.strip(&e.surface);
        let body = if opts.case_sensitive {
            body.to_string()
        } else {
            fold_str(body)
        };
        surfaces.insert(body);
    }
    let mut doc_freq: BTreeMap<char, usize> = BTreeMap::new();
    for s in &surfaces {
        let distinct: HashSet<char> = s
            .chars()
            .filter(|&c| !c.is_whitespace() && !opts.markers.contains_char(c))
            .collect();
        for c in distinct {
            *doc_freq.entry(c).or_default() += 1;
        }
    }
    let chars: Vec<char> = doc_freq
        .into_iter()
        .filter(|&(_, n)| n >= min_tokens)
        .map(|(c, _)| c)
        .collect();
    if chars.is_empty() {
        return Err(VocabError::EmptyAlphabet { min_tokens });
    }
    Alphabet::new(opts.script_name.clone(), chars, opts.case_sensitive)
}

/// Split-group key for a token: its lemma, or its own id when the lemma is empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LemmaKey {
    Lemma(String),
    Token(u32),
}

pub fn lemma_key(entry: &VocabEntry) -> LemmaKey {
    if entry.lemma.is_empty() {
        LemmaKey::Token(entry.id)
    } else {
        LemmaKey::Lemma(entry.lemma.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn vocab_of(surfaces: &[&str]) -> Vocabulary {
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

    fn surfaces(v: &Vocabulary) -> Vec<&str> {
        v.iter().map(|e| e.surface.as_str()).collect()
    }

    #[test]
    fn parses_well_formed_rows() {
        let v = parse_vocab("0\tĠcat\tcat\t10\n1\tdog\t\t0\n2\ta\\tb\t\t3\n").unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.get(2).unwrap().surface, "a\tb");
        assert_eq!(v.get(0).unwrap().lemma, "cat");
    }

    #[test]
    fn duplicate_id() {
        let err = parse_vocab("7\ta\t\t0\n7\tb\t\t0\n").unwrap_err();
        assert!(matches!(err, VocabError::DuplicateId { line: 2, id: 7 }));
    }

    #[test]
    fn malformed_row_reports_line() {
        let err = parse_vocab("0\ta\t\t0\n1\tb\n").unwrap_err();
        assert!(matches!(err, VocabError::MalformedRow { line: 2, .. }));
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.tsv");
        let v = parse_vocab("0\tx\\ny\tl\\\\m\t4\n5\tĠz\t\t0\n").unwrap();
        write_vocab(&v, &p).unwrap();
        assert_eq!(load_vocab(&p).unwrap(), v);
    }

    #[test]
    fn filter_example() {
        let v = vocab_of(&["Ġcat", "cat", "c4t", "Ġ", "##ing"]);
        let f = filter_alphabetic(&v, &Alphabet::english(), &Markers::new([GPT_SPACE, WORDPIECE_CONT]));
        assert_eq!(surfaces(&f), ["Ġcat", "cat", "##ing"]);
    }

    #[test]
    fn filter_keeps_subword_pieces() {
        let v = vocab_of(&["d", "ictionary"]);
        let f = filter_alphabetic(&v, &Alphabet::english(), &Markers::standard());
        assert_eq!(f.len(), 2);
    }

    #[test]
    fn filter_case_modes() {
        let v = vocab_of(&["Cat", "cot"]);
        let insensitive = filter_alphabetic(&v, &Alphabet::english(), &Markers::standard());
        assert_eq!(insensitive.len(), 2);
        let sensitive = filter_alphabetic(
            &v,
            &Alphabet::english().with_case_sensitivity(true),
            &Markers::standard(),
        );
        assert_eq!(surfaces(&sensitive), ["cot"]);
    }

    #[test]
    fn strips_only_one_marker() {
        let m = Markers::standard();
        assert_eq!(m.strip("ĠĠa"), "Ġa");
        assert_eq!(m.strip("##ing"), "ing");
        assert_eq!(m.strip("▁x"), "x");
        assert_eq!(m.leading("Ġx"), Some("Ġ"));
    }

    #[test]
    fn derive_counts_documents() {
        let v = vocab_of(&["ab", "ba", "aa"]);
        let mut o = DeriveOptions {
            min_tokens: 3,
            ..Default::default()
        };
        assert_eq!(derive_alphabet(&v, &o).unwrap().characters(), &['a']);
        o.min_tokens = 2;
        assert_eq!(derive_alphabet(&v, &o).unwrap().characters(), &['a', 'b']);
        o.min_tokens = 4;
        assert!(matches!(derive_alphabet(&v, &o), Err(VocabError::EmptyAlphabet { .. })));
    }

    #[test]
    fn derive_ignores_markers_and_whitespace() {
        let v = vocab_of(&["Ġab", "▁a b", "##a"]);
        let o = DeriveOptions {
            min_tokens: 1,
            ..Default::default()
        };
        assert_eq!(derive_alphabet(&v, &o).unwrap().characters(), &['a', 'b']);
    }

    #[test]
    fn top_by_frequency_keeps_order() {
        let mut v = vocab_of(&["a", "b", "c", "d"]);
        let freqs = [5, 9, 1, 9];
        let entries: Vec<_> = v
            .entries()
            .iter()
            .zip(freqs)
            .map(|(e, f)| VocabEntry {
                frequency: f,
                ..e.clone()
            })
            .collect();
        v = Vocabulary::new(entries).unwrap();
        assert_eq!(surfaces(&v.top_by_frequency(3)), ["a", "b", "d"]);
    }
}
