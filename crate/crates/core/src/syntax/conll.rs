//! CoNLL-2003 style files and word-to-token alignment.

use std::collections::HashMap;

use super::{SyntaxError, TagFeature};
use crate::vocab::{Markers, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConllWord {
    pub word: String,
    pub pos: String,
    pub chunk: String,
    pub ner: String,
}

impl ConllWord {
    pub fn label(&self, feature: TagFeature) -> Result<&str, SyntaxError> {
        match feature {
            TagFeature::Pos => Ok(&self.pos),
            TagFeature::Ner => Ok(&self.ner),
            TagFeature::CoarsePos => Err(SyntaxError::UnsupportedFeature(feature)),
        }
    }
}

pub type Sentence = Vec<ConllWord>;

/// Whitespace-separated `word POS chunk NER` rows, blank lines between
/// sentences; `-DOCSTART-` rows are skipped.
pub fn parse_conll(text: &str) -> Result<Vec<Sentence>, SyntaxError> {
    let mut sentences = Vec::new();
    let mut current = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.is_empty() {
            if !current.is_empty() {
                sentences.push(std::mem::take(&mut current));
            }
            continue;
        }
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        if cols.len() < 4 {
            return Err(SyntaxError::BadConll {
                line: i + 1,
                reason: format!("expected 4 columns, found {}", cols.len()),
            });
        }
        current.push(ConllWord {
            word: cols[0].to_string(),
            pos: cols[1].to_string(),
            chunk: cols[2].to_string(),
            ner: cols[cols.len() - 1].to_string(),
        });
    }
    if !current.is_empty() {
        sentences.push(current);
    }
    if sentences.is_empty() {
        return Err(SyntaxError::EmptyConll);
    }
    Ok(sentences)
}

/// Greedy longest-match segmentation of words into vocabulary pieces,
/// compared on marker-stripped surfaces.
pub struct Aligner {
    by_surface: HashMap<String, Vec<u32>>,
    max_chars: usize,
}

impl Aligner {
    pub fn new(vocab: &Vocabulary, markers: &Markers) -> Self {
        let mut by_surface: HashMap<String, Vec<u32>> = HashMap::new();
        let mut max_chars = 0;
        for e in vocab.iter() {
            let body = markers.strip(&e.surface);
            if body.is_empty() {
                continue;
            }
            max_chars = max_chars.max(body.chars().count());
            by_surface.entry(body.to_string()).or_default().push(e.id);
        }
        Self { by_surface, max_chars }
    }

    /// Pieces covering `word` left to right; each piece lists every token
    /// whose stripped surface equals it. `None` when some position has no
    /// matching piece.
    pub fn align(&self, word: &str) -> Option<Vec<&[u32]>> {
        let bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
        let n = bounds.len() - 1;
        let mut pieces = Vec::new();
        let mut i = 0;
        while i < n {
            let hit = (1..=self.max_chars.min(n - i))
                .rev()
                .find_map(|k| self.by_surface.get(&word[bounds[i]..bounds[i + k]]).map(|ids| (k, ids)));
            let (k, ids) = hit?;
            pieces.push(ids.as_slice());
            i += k;
        }
        (!pieces.is_empty()).then_some(pieces)
    }
}
