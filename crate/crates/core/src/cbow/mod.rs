//! Continuous bag-of-words embeddings trained with negative sampling.

mod words;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use rand::Rng as _;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{write_embeddings, EmbeddingError, EmbeddingTable};
use crate::neural::Float;
use crate::rng::{self, Rng};
use crate::vocab::{write_vocab, VocabEntry, VocabError, Vocabulary};

pub use words::WordScheme;

#[derive(Debug, Error)]
pub enum CbowError {
    #[error("no token reaches the minimum count of {min_count}")]
    EmptyCorpusAfterFiltering { min_count: u64 },
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CbowConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Starting learning rate, decayed linearly to `lr * 1e-4`.
    pub lr: f64,
    pub min_count: u64,
    /// Frequent-token subsampling threshold; 0 disables it.
    pub subsample: f64,
    pub seed: u64,
    /// 1 gives bit-reproducible training; more threads race on updates.
    pub threads: usize,
}

impl Default for CbowConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
            min_count: 5,
            subsample: 1e-4,
            seed: 0,
            threads: 1,
        }
    }
}

impl CbowConfig {
    pub fn validate(&self) -> Result<(), CbowError> {
        let bad = |m: &str| Err(CbowError::BadConfig(m.into()));
        if self.dim == 0 {
            return bad("dim must be at least 1");
        }
        if self.window == 0 {
            return bad("window must be at least 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be at least 1");
        }
        if self.threads == 0 {
            return bad("threads must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.subsample < 0.0 {
            return bad("lr must be positive and subsample non-negative");
        }
        Ok(())
    }
}

/// Tokens surviving the count filter, most frequent first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusVocab {
    /// Original token id of each row.
    pub ids: Vec<u32>,
    pub counts: Vec<u64>,
    index: HashMap<u32, u32>,
}

impl CorpusVocab {
    pub fn build(lines: &[Vec<u32>], min_count: u64) -> Self {
        let mut counts: HashMap<u32, u64> = HashMap::new();
        for id in lines.iter().flatten() {
            *counts.entry(*id).or_default() += 1;
        }
        let mut kept: Vec<(u32, u64)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let index = kept.iter().enumerate().map(|(i, &(id, _))| (id, i as u32)).collect();
        Self {
            ids: kept.iter().map(|&(id, _)| id).collect(),
            counts: kept.iter().map(|&(_, c)| c).collect(),
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row_of(&self, id: u32) -> Option<u32> {
        self.index.get(&id).copied()
    }
}

/// Dense f32 matrix that several threads may update without locks.
/// Relaxed loads and stores make lost updates possible but never tear a
/// value.
struct SharedMatrix {
    cols: usize,
    data: Vec<AtomicU32>,
}

impl SharedMatrix {
    fn from_vec(cols: usize, v: Vec<f32>) -> Self {
        Self {
            cols,
            data: v.into_iter().map(|x| AtomicU32::new(x.to_bits())).collect(),
        }
    }

    fn load(&self, row: usize, out: &mut [f32]) {
        let r = &self.data[row * self.cols..(row + 1) * self.cols];
        for (o, a) in out.iter_mut().zip(r) {
            *o = f32::from_bits(a.load(Ordering::Relaxed));
        }
    }

    fn add(&self, row: usize, delta: &[f32], scale: f32) {
        let r = &self.data[row * self.cols..(row + 1) * self.cols];
        for (a, d) in r.iter().zip(delta) {
            let v = f32::from_bits(a.load(Ordering::Relaxed)) + scale * d;
            a.store(v.to_bits(), Ordering::Relaxed);
        }
    }

    fn into_vec(self) -> Vec<f32> {
        self.data.into_iter().map(|a| f32::from_bits(a.into_inner())).collect()
    }
}

fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// `ln(1 + e^x)` without overflow.
fn softplus<F: Float>(x: F) -> F {
    if x > F::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// One output-side term of the negative-sampling loss,
/// `-ln σ(±h·v)`. Adds dL/dh into `dh`, writes dL/dv into `dv`, and
/// returns the loss.
pub fn ns_term<F: Float>(h: &[F], v: &[F], label: bool, dh: &mut [F], dv: &mut [F]) -> F {
    let score = dot(h, v);
    let sig = F::one() / (F::one() + (-score).exp());
    let g = if label { sig - F::one() } else { sig };
    for (d, &x) in dh.iter_mut().zip(v) {
        *d += g * x;
    }
    for (d, &x) in dv.iter_mut().zip(h) {
        *d = g * x;
    }
    softplus(if label { -score } else { score })
}

/// Loss for one centre position: mean of the context rows against the
/// target (first output) and negatives.
pub fn ns_loss<F: Float>(contexts: &[&[F]], outputs: &[&[F]], labels: &[bool]) -> F {
    let dim = contexts[0].len();
    let n = F::from_usize(contexts.len()).expect("small count");
    let h: Vec<F> = (0..dim)
        .map(|k| contexts.iter().fold(F::zero(), |a, c| a + c[k]) / n)
        .collect();
    let mut dh = vec![F::zero(); dim];
    let mut dv = vec![F::zero(); dim];
    outputs
        .iter()
        .zip(labels)
        .fold(F::zero(), |acc, (v, &y)| acc + ns_term(&h, v, y, &mut dh, &mut dv))
}

/// Analytic gradients of [`ns_loss`]: one vector shared by every context
/// row, and one per output row.
pub fn ns_grads<F: Float>(contexts: &[&[F]], outputs: &[&[F]], labels: &[bool]) -> (Vec<F>, Vec<Vec<F>>) {
    let dim = contexts[0].len();
    let n = F::from_usize(contexts.len()).expect("small count");
    let h: Vec<F> = (0..dim)
        .map(|k| contexts.iter().fold(F::zero(), |a, c| a + c[k]) / n)
        .collect();
    let mut dh = vec![F::zero(); dim];
    let mut douts = Vec::with_capacity(outputs.len());
    for (v, &y) in outputs.iter().zip(labels) {
        let mut dv = vec![F::zero(); dim];
        ns_term(&h, v, y, &mut dh, &mut dv);
        douts.push(dv);
    }
    (dh.into_iter().map(|d| d / n).collect(), douts)
}

#[derive(Debug, Clone)]
pub struct CbowModel {
    pub vocab: CorpusVocab,
    pub dim: usize,
    /// Context-side vectors, one row per vocabulary entry.
    pub input: Vec<f32>,
    pub output: Vec<f32>,
    /// Mean loss per trained position, one value per epoch.
    pub epoch_losses: Vec<f64>,
}

impl CbowModel {
    pub fn embeddings(&self, name: &str) -> Result<EmbeddingTable, CbowError> {
        Ok(EmbeddingTable::from_rows(
            self.vocab.len(),
            self.dim,
            self.input.clone(),
            name,
        )?)
    }

    pub fn vector(&self, id: u32) -> Option<&[f32]> {
        let r = self.vocab.row_of(id)? as usize;
        Some(&self.input[r * self.dim..(r + 1) * self.dim])
    }
}

struct Shared<'a> {
    cfg: &'a CbowConfig,
    input: SharedMatrix,
    output: SharedMatrix,
    keep_prob: Vec<f32>,
    negatives: WeightedAliasIndex<f64>,
    total_positions: u64,
    done: AtomicU64,
}

fn train_lines(s: &Shared, lines: &[Vec<u32>], r: &mut Rng) -> (f64, u64) {
    let cfg = s.cfg;
    let dim = cfg.dim;
    let (mut h, mut dh, mut v, mut dv, mut ctx) = (
        vec![0f32; dim],
        vec![0f32; dim],
        vec![0f32; dim],
        vec![0f32; dim],
        vec![0f32; dim],
    );
    let mut sentence = Vec::new();
    let (mut loss, mut positions) = (0.0f64, 0u64);
    let min_lr = cfg.lr * 1e-4;
    for line in lines {
        sentence.clear();
        for &row in line {
            if row == u32::MAX {
                continue;
            }
            if s.keep_prob[row as usize] >= 1.0 || r.random::<f32>() < s.keep_prob[row as usize] {
                sentence.push(row as usize);
            }
        }
        let done = s.done.fetch_add(line.len() as u64, Ordering::Relaxed);
        let progress = done as f64 / (s.total_positions as f64 + 1.0);
        let lr = (cfg.lr * (1.0 - progress)).max(min_lr) as f32;
        for i in 0..sentence.len() {
            let shrink = r.random_range(0..cfg.window);
            let span = cfg.window - shrink;
            let lo = i.saturating_sub(span);
            let hi = (i + span + 1).min(sentence.len());
            let cw = hi - lo - 1;
            if cw == 0 {
                continue;
            }
            h.fill(0.0);
            for j in (lo..hi).filter(|&j| j != i) {
                s.input.load(sentence[j], &mut ctx);
                for (a, b) in h.iter_mut().zip(&ctx) {
                    *a += b;
                }
            }
            let inv = 1.0 / cw as f32;
            h.iter_mut().for_each(|x| *x *= inv);
            dh.fill(0.0);
            let target = sentence[i];
            for k in 0..=cfg.negatives {
                let (row, label) = if k == 0 {
                    (target, true)
                } else {
                    let n = s.negatives.sample(r);
                    if n == target {
                        continue;
                    }
                    (n, false)
                };
                s.output.load(row, &mut v);
                loss += f64::from(ns_term(&h, &v, label, &mut dh, &mut dv));
                s.output.add(row, &dv, -lr);
            }
            for j in (lo..hi).filter(|&j| j != i) {
                s.input.add(sentence[j], &dh, -lr * inv);
            }
            positions += 1;
        }
    }
    (loss, positions)
}

/// Trains on token-id lines. Tokens below `min_count` are removed before
/// windows are formed.
pub fn train_cbow(lines: &[Vec<u32>], cfg: &CbowConfig) -> Result<CbowModel, CbowError> {
    cfg.validate()?;
    let vocab = CorpusVocab::build(lines, cfg.min_count);
    if vocab.is_empty() {
        return Err(CbowError::EmptyCorpusAfterFiltering {
            min_count: cfg.min_count,
        });
    }
    let rows: Vec<Vec<u32>> = lines
        .iter()
        .map(|l| l.iter().map(|id| vocab.row_of(*id).unwrap_or(u32::MAX)).collect())
        .collect();
    let total: u64 = vocab.counts.iter().sum();
    let keep_prob: Vec<f32> = vocab
        .counts
        .iter()
        .map(|&c| {
            if cfg.subsample <= 0.0 {
                return 1.0;
            }
            let t = cfg.subsample * total as f64;
            (((c as f64 / t).sqrt() + 1.0) * t / c as f64) as f32
        })
        .collect();
    let negatives = WeightedAliasIndex::new(vocab.counts.iter().map(|&c| (c as f64).powf(0.75)).collect())
        .map_err(|e| CbowError::BadConfig(format!("negative sampling table: {e}")))?;

    let (n, dim) = (vocab.len(), cfg.dim);
    let mut init = rng::seeded(rng::derive(cfg.seed, &[0xCB0]));
    let bound = 0.5 / dim as f32;
    let input: Vec<f32> = (0..n * dim).map(|_| init.random_range(-bound..bound)).collect();
    let shared = Shared {
        cfg,
        input: SharedMatrix::from_vec(dim, input),
        output: SharedMatrix::from_vec(dim, vec![0.0; n * dim]),
        keep_prob,
        negatives,
        total_positions: cfg.epochs as u64 * rows.iter().map(|l| l.len() as u64).sum::<u64>(),
        done: AtomicU64::new(0),
    };

    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let (loss, positions) = if cfg.threads == 1 {
            let mut r = rng::seeded(rng::derive(cfg.seed, &[epoch as u64]));
            train_lines(&shared, &rows, &mut r)
        } else {
            let per = rows.len().div_ceil(cfg.threads).max(1);
            std::thread::scope(|scope| {
                let handles: Vec<_> = rows
                    .chunks(per)
                    .enumerate()
                    .map(|(t, part)| {
                        let shared = &shared;
                        scope.spawn(move || {
                            let mut r = rng::seeded(rng::derive(cfg.seed, &[epoch as u64, t as u64]));
                            train_lines(shared, part, &mut r)
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker panicked"))
                    .fold((0.0, 0), |a, b| (a.0 + b.0, a.1 + b.1))
            })
        };
        let mean = if positions == 0 { 0.0 } else { loss / positions as f64 };
        log::debug!("cbow epoch {epoch}: mean loss {mean:.4} over {positions} positions");
        epoch_losses.push(mean);
    }
    Ok(CbowModel {
        vocab,
        dim,
        input: shared.input.into_vec(),
        output: shared.output.into_vec(),
        epoch_losses,
    })
}

/// Writes the context vectors and a matching vocab file whose ids are row
/// indices and whose frequencies are corpus counts.
pub fn export_embeddings(
    model: &CbowModel,
    surface: impl Fn(u32) -> String,
    embeddings_path: impl AsRef<Path>,
    vocab_path: impl AsRef<Path>,
    name: &str,
) -> Result<(EmbeddingTable, Vocabulary), CbowError> {
    let table = model.embeddings(name)?;
    let entries = model
        .vocab
        .ids
        .iter()
        .zip(&model.vocab.counts)
        .enumerate()
        .map(|(row, (&id, &count))| VocabEntry {
            id: row as u32,
            surface: surface(id),
            lemma: String::new(),
            frequency: count,
        })
        .collect();
    let vocab = Vocabulary::new(entries)?;
    write_embeddings(&table, embeddings_path)?;
    write_vocab(&vocab, vocab_path)?;
    Ok((table, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::load_embeddings;
    use crate::vocab::load_vocab;

    fn cosine(a: &[f32], b: &[f32]) -> f32 {
        dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
    }

    /// "aa" and "ab" appear between the same neighbours; "zz" never does.
    fn toy_corpus() -> Vec<Vec<u32>> {
        let mut r = rng::seeded(7);
        (0..3000)
            .map(|_| {
                let (a, b) = if r.random::<bool>() { (10, 11) } else { (20, 21) };
                let mid = match (a, r.random_range(0..2)) {
                    (10, 0) => 1,
                    (10, _) => 2,
                    _ => 3,
                };
                vec![a, b, mid, b, a]
            })
            .collect()
    }

    fn small() -> CbowConfig {
        CbowConfig {
            dim: 16,
            window: 2,
            negatives: 3,
            epochs: 5,
            min_count: 1,
            subsample: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn shared_contexts_give_similar_vectors() {
        let m = train_cbow(&toy_corpus(), &small()).unwrap();
        let (aa, ab, zz) = (m.vector(1).unwrap(), m.vector(2).unwrap(), m.vector(3).unwrap());
        assert!(
            cosine(aa, ab) > cosine(aa, zz),
            "{} vs {}",
            cosine(aa, ab),
            cosine(aa, zz)
        );
    }

    #[test]
    fn loss_goes_down_and_runs_repeat() {
        let cfg = small();
        let a = train_cbow(&toy_corpus(), &cfg).unwrap();
        assert!(a.epoch_losses.last() < a.epoch_losses.first(), "{:?}", a.epoch_losses);
        let b = train_cbow(&toy_corpus(), &cfg).unwrap();
        assert_eq!(a.input, b.input);
    }

    #[test]
    fn threaded_mode_trains() {
        let cfg = CbowConfig { threads: 3, ..small() };
        let m = train_cbow(&toy_corpus(), &cfg).unwrap();
        assert!(m.input.iter().all(|x| x.is_finite()));
        assert!(m.epoch_losses.last() < m.epoch_losses.first());
    }

    #[test]
    fn below_min_count() {
        let r = train_cbow(&[vec![1, 2, 3]], &CbowConfig::default());
        assert!(matches!(r, Err(CbowError::EmptyCorpusAfterFiltering { min_count: 5 })));
        assert!(matches!(
            train_cbow(&[vec![1]], &CbowConfig { window: 0, ..small() }),
            Err(CbowError::BadConfig(_))
        ));
    }

    fn refs(v: &[Vec<f64>]) -> Vec<&[f64]> {
        v.iter().map(Vec::as_slice).collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng::seeded(3);
        let dim = 6;
        let mut rand_row = || (0..dim).map(|_| r.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let contexts: Vec<Vec<f64>> = (0..4).map(|_| rand_row()).collect();
        let outputs: Vec<Vec<f64>> = (0..4).map(|_| rand_row()).collect();
        let labels = [true, false, false, false];
        let (dc, douts) = ns_grads(&refs(&contexts), &refs(&outputs), &labels);
        let eps = 1e-6;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        for c in 0..contexts.len() {
            for k in 0..dim {
                let mut p = contexts.clone();
                p[c][k] += eps;
                let mut m = contexts.clone();
                m[c][k] -= eps;
                let num = (ns_loss(&refs(&p), &refs(&outputs), &labels) - ns_loss(&refs(&m), &refs(&outputs), &labels))
                    / (2.0 * eps);
                assert!(rel(num, dc[k]) < 1e-4, "context {c}/{k}: {num} vs {}", dc[k]);
            }
        }
        for o in 0..outputs.len() {
            for k in 0..dim {
                let mut p = outputs.clone();
                p[o][k] += eps;
                let mut m = outputs.clone();
                m[o][k] -= eps;
                let num = (ns_loss(&refs(&contexts), &refs(&p), &labels)
                    - ns_loss(&refs(&contexts), &refs(&m), &labels))
                    / (2.0 * eps);
                assert!(rel(num, douts[o][k]) < 1e-4, "output {o}/{k}: {num} vs {}", douts[o][k]);
            }
        }
    }

    #[test]
    fn export_round_trip() {
        let lines = toy_corpus();
        let m = train_cbow(&lines, &small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (e, v) = (dir.path().join("e.bin"), dir.path().join("v.tsv"));
        let (table, _) = export_embeddings(&m, |id| format!("t{id}"), &e, &v, "toy").unwrap();
        let loaded = load_embeddings(&e).unwrap();
        assert_eq!(loaded.as_slice(), table.as_slice());
        let vocab = load_vocab(&v).unwrap();
        assert_eq!(vocab.len(), loaded.vocab_size());
        let mut counts: HashMap<String, u64> = HashMap::new();
        for id in lines.iter().flatten() {
            *counts.entry(format!("t{id}")).or_default() += 1;
        }
        for e in vocab.iter() {
            assert_eq!(counts[&e.surface], e.frequency);
        }
    }
}
