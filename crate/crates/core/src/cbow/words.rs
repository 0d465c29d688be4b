//! Whole-word tokenization, the baseline against subword schemes.

use std::collections::HashMap;

use crate::bpe::pre_tokenize;

/// Every pre-token with its leading space removed is one vocabulary item;
/// whitespace-only pieces are dropped.
#[derive(Debug, Clone, Default)]
pub struct WordScheme {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl WordScheme {
    /// Tokenizes newline-separated lines, growing the vocabulary as words
    /// are first seen.
    pub fn tokenize_corpus(text: &str) -> (Self, Vec<Vec<u32>>) {
        let mut scheme = Self::default();
        let lines = text
            .split('\n')
            .map(|line| {
                pre_tokenize(line)
                    .into_iter()
                    .filter_map(|p| {
                        let w = p.text.strip_prefix(' ').unwrap_or(p.text);
                        (!w.trim().is_empty()).then(|| scheme.intern(w))
                    })
                    .collect()
            })
            .collect();
        (scheme, lines)
    }

    fn intern(&mut self, w: &str) -> u32 {
        if let Some(&id) = self.index.get(w) {
            return id;
        }
        let id = self.words.len() as u32;
        self.words.push(w.to_string());
        self.index.insert(w.to_string(), id);
        id
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}
