//! Byte-level BPE in the GPT-2 style, with a random two-way split wrapper
//! and exact detokenization.
//!
//! Text is cut into pre-tokens (an optional single leading space followed by
//! a run of letters, digits or other symbols; whitespace runs stand alone),
//! every byte is mapped to a printable stand-in character (a space becomes
//! `Ġ`), and the merge list is applied lowest rank first.

mod pretokenize;
mod train;
mod variability;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::Path;
use std::sync::OnceLock;

use thiserror::Error;

pub use pretokenize::{pre_tokenize, Piece};
pub use train::{train_bpe, BpeTrainOptions};
pub use variability::{read_id_lines, tokenize_corpus, write_id_lines, TokenizedCorpus, VariabilityStats};

#[derive(Debug, Error)]
pub enum BpeError {
    #[error("byte 0x{byte:02x} has no token in the vocabulary")]
    UnencodableByte { byte: u8 },
    #[error("token id {0} is not in the vocabulary")]
    UnknownId(u32),
    #[error("decoded bytes are not valid UTF-8")]
    InvalidUtf8,
    #[error("merges line {line}: {reason}")]
    MalformedMerge { line: usize, reason: String },
    #[error("merge output {token:?} (line {line}) is missing from the token map")]
    MergeOutputMissing { line: usize, token: String },
    #[error("token id {id} is used by both {first:?} and {second:?}")]
    DuplicateId { id: u32, first: String, second: String },
    #[error("rho must lie in [0, 1], got {0}")]
    BadRho(f64),
    #[error("token map: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

struct ByteMap {
    encode: [char; 256],
    decode: HashMap<char, u8>,
}

/// The GPT-2 byte to printable-character table.
fn byte_map() -> &'static ByteMap {
    static MAP: OnceLock<ByteMap> = OnceLock::new();
    MAP.get_or_init(|| {
        let printable = |b: u32| (0x21..=0x7E).contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b);
        let mut encode = ['\0'; 256];
        let mut extra = 0;
        for b in 0..256u32 {
            let c = if printable(b) {
                b
            } else {
                extra += 1;
                255 + extra
            };
            encode[b as usize] = char::from_u32(c).expect("valid scalar");
        }
        let decode = encode.iter().enumerate().map(|(b, &c)| (c, b as u8)).collect();
        ByteMap { encode, decode }
    })
}

/// Maps raw text to its byte-level symbol string.
pub fn to_byte_level(text: &str) -> String {
    let map = byte_map();
    text.bytes().map(|b| map.encode[b as usize]).collect()
}

/// Inverse of [`to_byte_level`]; `None` for characters outside the table.
pub fn from_byte_level(symbols: &str) -> Option<Vec<u8>> {
    let map = byte_map();
    symbols.chars().map(|c| map.decode.get(&c).copied()).collect()
}

/// The 256 single-byte symbols in GPT-2 id order.
pub fn byte_alphabet() -> Vec<char> {
    let map = byte_map();
    let mut bytes: Vec<u8> = (0..=255).collect();
    bytes.sort_by_key(|&b| map.encode[b as usize] as u32);
    bytes.into_iter().map(|b| map.encode[b as usize]).collect()
}

#[derive(Debug, Clone)]
pub struct TokenizationScheme {
    merges: Vec<(String, String)>,
    ranks: HashMap<(u32, u32), (u32, u32)>,
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<Option<String>>,
    byte_ids: [Option<u32>; 256],
    marker: char,
    rho: f64,
    seed: u64,
}

impl TokenizationScheme {
    pub fn new(merges: Vec<(String, String)>, vocab: HashMap<String, u32>) -> Result<Self, BpeError> {
        let max_id = vocab.values().copied().max().map_or(0, |m| m as usize + 1);
        let mut id_to_token: Vec<Option<String>> = vec![None; max_id];
        for (tok, &id) in &vocab {
            if let Some(prev) = &id_to_token[id as usize] {
                let (first, second) = if prev < tok {
                    (prev.clone(), tok.clone())
                } else {
                    (tok.clone(), prev.clone())
                };
                return Err(BpeError::DuplicateId { id, first, second });
            }
            id_to_token[id as usize] = Some(tok.clone());
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, (a, b)) in merges.iter().enumerate() {
            let line = rank + 1;
            let lookup = |t: &str| {
                vocab.get(t).copied().ok_or_else(|| BpeError::MalformedMerge {
                    line,
                    reason: format!("{t:?} is not in the token map"),
                })
            };
            let (ia, ib) = (lookup(a)?, lookup(b)?);
            let merged = format!("{a}{b}");
            let out = *vocab
                .get(&merged)
                .ok_or(BpeError::MergeOutputMissing { line, token: merged })?;
            ranks.entry((ia, ib)).or_insert((rank as u32, out));
        }
        let map = byte_map();
        let mut byte_ids = [None; 256];
        for (b, slot) in byte_ids.iter_mut().enumerate() {
            *slot = vocab.get(map.encode[b].to_string().as_str()).copied();
        }
        Ok(Self {
            merges,
            ranks,
            token_to_id: vocab,
            id_to_token,
            byte_ids,
            marker: map.encode[b' ' as usize],
            rho: 0.0,
            seed: 0,
        })
    }

    pub fn load(merges_path: impl AsRef<Path>, vocab_path: impl AsRef<Path>) -> Result<Self, BpeError> {
        let merges = parse_merges(&fs::read_to_string(merges_path)?)?;
        let vocab: HashMap<String, u32> = serde_json::from_str(&fs::read_to_string(vocab_path)?)?;
        Self::new(merges, vocab)
    }

    pub fn save(&self, merges_path: impl AsRef<Path>, vocab_path: impl AsRef<Path>) -> Result<(), BpeError> {
        let mut text = String::from("#version: 0.2\n");
        for (a, b) in &self.merges {
            text.push_str(a);
            text.push(' ');
            text.push_str(b);
            text.push('\n');
        }
        fs::write(merges_path, text)?;
        let ordered: BTreeMap<&str, u32> = self.token_to_id.iter().map(|(t, &i)| (t.as_str(), i)).collect();
        fs::write(vocab_path, serde_json::to_string_pretty(&ordered)?)?;
        Ok(())
    }

    pub fn with_variability(mut self, rho: f64, seed: u64) -> Result<Self, BpeError> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(BpeError::BadRho(rho));
        }
        self.rho = rho;
        self.seed = seed;
        Ok(self)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Leading-space marker as it appears in token surfaces.
    pub fn marker(&self) -> char {
        self.marker
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn vocab_size(&self) -> usize {
        self.token_to_id.len()
    }

    /// Byte-level surface of a token, e.g. `"Ġschema"`.
    pub fn token(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize)?.as_deref()
    }

    pub fn token_id(&self, surface: &str) -> Option<u32> {
        self.token_to_id.get(surface).copied()
    }

    /// Tokens ordered by id, gaps skipped.
    pub fn tokens(&self) -> impl Iterator<Item = (u32, &str)> {
        self.id_to_token
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.as_deref().map(|t| (i as u32, t)))
    }

    /// Encodes a single pre-token.
    pub fn encode_piece(&self, piece: &str, out: &mut Vec<u32>) -> Result<(), BpeError> {
        let mut symbols = Vec::with_capacity(piece.len());
        for b in piece.bytes() {
            symbols.push(self.byte_ids[b as usize].ok_or(BpeError::UnencodableByte { byte: b })?);
        }
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| {
                    self.ranks
                        .get(&(w[0], w[1]))
                        .map(|&(rank, out)| (rank, w[0], w[1], out))
                })
                .min_by_key(|&(rank, ..)| rank);
            let Some((_, a, b, merged)) = best else { break };
            let mut next = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
                    next.push(merged);
                    i += 2;
                } else {
                    next.push(symbols[i]);
                    i += 1;
                }
            }
            symbols = next;
        }
        out.extend_from_slice(&symbols);
        Ok(())
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, BpeError> {
        let mut out = Vec::with_capacity(text.len() / 3);
        for piece in pre_tokenize(text) {
            self.encode_piece(piece.text, &mut out)?;
        }
        Ok(out)
    }

    pub fn detokenize(&self, ids: &[u32]) -> Result<String, BpeError> {
        let map = byte_map();
        let mut bytes = Vec::with_capacity(ids.len() * 4);
        for &id in ids {
            let tok = self.token(id).ok_or(BpeError::UnknownId(id))?;
            for c in tok.chars() {
                bytes.push(*map.decode.get(&c).ok_or(BpeError::UnknownId(id))?);
            }
        }
        String::from_utf8(bytes).map_err(|_| BpeError::InvalidUtf8)
    }

    fn is_alphabetic_token(&self, id: u32) -> bool {
        self.token(id).is_some_and(|t| {
            let core = t.strip_prefix(self.marker).unwrap_or(t);
            from_byte_level(core)
                .and_then(|b| String::from_utf8(b).ok())
                .is_some_and(|s| !s.is_empty() && s.chars().all(char::is_alphabetic))
        })
    }

    /// Every way of cutting `word` (optionally led by one space) into two
    /// alphabetic in-vocabulary tokens, the space staying on the left piece.
    pub fn two_way_splits(&self, word: &str) -> Vec<(u32, u32)> {
        let (lead, core) = match word.strip_prefix(' ') {
            Some(rest) => (" ", rest),
            None => ("", word),
        };
        if core.is_empty() || !core.chars().all(char::is_alphabetic) {
            return Vec::new();
        }
        let mut out = Vec::new();
        for (i, _) in core.char_indices().skip(1) {
            let left = to_byte_level(&format!("{lead}{}", &core[..i]));
            let right = to_byte_level(&core[i..]);
            if let (Some(l), Some(r)) = (self.token_id(&left), self.token_id(&right)) {
                if self.is_alphabetic_token(l) && self.is_alphabetic_token(r) {
                    out.push((l, r));
                }
            }
        }
        out
    }
}

pub fn parse_merges(text: &str) -> Result<Vec<(String, String)>, BpeError> {
    let mut merges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with("#version") || line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => merges.push((a.to_string(), b.to_string())),
            _ => {
                return Err(BpeError::MalformedMerge {
                    line: i + 1,
                    reason: "expected two space-separated symbols".into(),
                })
            }
        }
    }
    Ok(merges)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::TokenizationScheme;

    pub(crate) fn fixture() -> TokenizationScheme {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/gpt2_style");
        TokenizationScheme::load(format!("{dir}/merges.txt"), format!("{dir}/vocab.json")).unwrap()
    }
}
