//! MLP tagger from static embeddings to PoS or NER labels.

use std::collections::BTreeSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::conll::{Aligner, Sentence};
use super::tags::{TagDistribution, TagTable};
use super::{SyntaxError, TagFeature};
use crate::embedding::{EmbeddingTable, FeatureProvider};
use crate::neural::mlp::{softmax_cross_entropy, softmax_rows};
use crate::neural::{multiclass_f1, Mlp, MulticlassMetrics, TrainConfig};
use crate::probe::{search_grid, LrSearch};
use crate::rng;
use crate::vocab::{Markers, Vocabulary};

#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub feature: TagFeature,
    pub labels: Vec<String>,
    pub model: Mlp<f32>,
}

/// 20 epochs, batch 64, learning rate 1e-4.
pub fn tagger_config() -> TrainConfig {
    TrainConfig {
        epochs: 20,
        batch_size: 64,
        learning_rate: 1e-4,
        ..Default::default()
    }
}

/// (token id, label index) pairs: every piece of every aligned word, once
/// per token sharing the piece's stripped surface.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaggedTokens {
    pub token_ids: Vec<u32>,
    pub labels: Vec<usize>,
    pub words: usize,
    pub unaligned_words: usize,
}

pub fn label_set(sentences: &[Sentence], feature: TagFeature) -> Result<Vec<String>, SyntaxError> {
    let mut set = BTreeSet::new();
    for w in sentences.iter().flatten() {
        set.insert(w.label(feature)?.to_string());
    }
    Ok(set.into_iter().collect())
}

pub fn tagged_tokens(
    sentences: &[Sentence],
    feature: TagFeature,
    labels: &[String],
    aligner: &Aligner,
) -> Result<TaggedTokens, SyntaxError> {
    let mut out = TaggedTokens::default();
    for w in sentences.iter().flatten() {
        let label = w.label(feature)?;
        let k = labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| SyntaxError::UnknownLabel(label.to_string()))?;
        out.words += 1;
        let Some(pieces) = aligner.align(&w.word) else {
            out.unaligned_words += 1;
            continue;
        };
        for ids in pieces {
            for &id in ids {
                out.token_ids.push(id);
                out.labels.push(k);
            }
        }
    }
    Ok(out)
}

fn rows(table: &EmbeddingTable, ids: &[u32]) -> Array2<f32> {
    let mut x = Array2::zeros((ids.len(), table.dim()));
    for (r, &id) in ids.iter().enumerate() {
        table.write_features(id, x.row_mut(r).as_slice_mut().expect("contiguous"));
    }
    x
}

fn fit(
    table: &EmbeddingTable,
    data: &TaggedTokens,
    n_labels: usize,
    config: &TrainConfig,
) -> Result<(Mlp<f32>, Vec<f64>), SyntaxError> {
    config.validate()?;
    if data.token_ids.is_empty() {
        return Err(SyntaxError::EmptyConll);
    }
    if let Some(&id) = data.token_ids.iter().find(|&&id| !table.covers(id)) {
        return Err(SyntaxError::CoverageGap(id));
    }
    let d = table.dim();
    let (h1, h2) = config.hidden.unwrap_or((d, d));
    let mut model = Mlp::new(
        d,
        h1,
        h2,
        n_labels,
        config.dropout,
        &mut rng::seeded(rng::derive(config.seed, &[0x7A6])),
    );
    let mut r = rng::seeded(rng::derive(config.seed, &[0x7A7]));
    let mut opt = config.optimizer::<f32>();
    let mut order: Vec<usize> = (0..data.token_ids.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let ids: Vec<u32> = idx.iter().map(|&i| data.token_ids[i]).collect();
            let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let cache = model.forward(rows(table, &ids).view(), Some(&mut r));
            let (loss, d_out) = softmax_cross_entropy(cache.out.view(), &y);
            if !loss.is_finite() {
                return Err(SyntaxError::NonFiniteLoss { epoch, batch });
            }
            total += loss as f64 * idx.len() as f64;
            let (g, _) = model.backward(&cache, d_out.view());
            opt.step(&mut model.tensors_mut(), &g.tensors());
        }
        losses.push(total / order.len() as f64);
    }
    Ok((model, losses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerRun {
    pub feature: TagFeature,
    pub labels: Vec<String>,
    pub epoch_losses: Vec<f64>,
    pub learning_rate: LrSearch,
    pub train_tokens: usize,
    pub unaligned_words: usize,
    pub dev: Option<MulticlassMetrics>,
    pub test: Option<MulticlassMetrics>,
}

/// Trains a tagger on `train`, choosing the learning rate on `dev` when
/// the config carries a grid, and scores dev and test.
pub fn train_tagger(
    table: &EmbeddingTable,
    vocab: &Vocabulary,
    markers: &Markers,
    train: &[Sentence],
    dev: Option<&[Sentence]>,
    test: Option<&[Sentence]>,
    feature: TagFeature,
    config: &TrainConfig,
) -> Result<(TaggerModel, TaggerRun), SyntaxError> {
    let aligner = Aligner::new(vocab, markers);
    let labels = label_set(train, feature)?;
    let tr = tagged_tokens(train, feature, &labels, &aligner)?;
    let dv = dev.map(|s| tagged_tokens(s, feature, &labels, &aligner)).transpose()?;
    let ts = test.map(|s| tagged_tokens(s, feature, &labels, &aligner)).transpose()?;
    let search = match &dv {
        Some(dv) if !dv.token_ids.is_empty() => search_grid(&config.lr_grid, 1, |lr, _| {
            fit(table, &tr, labels.len(), &config.with_lr(lr))
                .ok()
                .and_then(|(m, _)| score(&m, table, dv, labels.len()).ok())
                .map_or(0.0, |s| s.macro_f1)
        }),
        _ => None,
    }
    .unwrap_or(LrSearch {
        chosen: config.learning_rate,
        scores: Vec::new(),
    });
    let (model, epoch_losses) = fit(table, &tr, labels.len(), &config.with_lr(search.chosen))?;
    let score_opt = |d: &Option<TaggedTokens>| -> Result<Option<MulticlassMetrics>, SyntaxError> {
        match d {
            Some(d) if !d.token_ids.is_empty() => Ok(Some(score(&model, table, d, labels.len())?)),
            _ => Ok(None),
        }
    };
    let run = TaggerRun {
        feature,
        labels: labels.clone(),
        epoch_losses,
        learning_rate: search,
        train_tokens: tr.token_ids.len(),
        unaligned_words: tr.unaligned_words,
        dev: score_opt(&dv)?,
        test: score_opt(&ts)?,
    };
    Ok((TaggerModel { feature, labels, model }, run))
}

fn predict_all(model: &Mlp<f32>, table: &EmbeddingTable, ids: &[u32]) -> Array2<f32> {
    let mut out = Array2::zeros((ids.len(), model.d_out()));
    for (c, chunk) in ids.chunks(1024).enumerate() {
        let p = softmax_rows(model.predict(rows(table, chunk).view()).view());
        out.slice_mut(ndarray::s![c * 1024..c * 1024 + chunk.len(), ..])
            .assign(&p);
    }
    out
}

fn score(
    model: &Mlp<f32>,
    table: &EmbeddingTable,
    data: &TaggedTokens,
    n_labels: usize,
) -> Result<MulticlassMetrics, SyntaxError> {
    let probs = predict_all(model, table, &data.token_ids);
    let preds: Vec<usize> = probs.rows().into_iter().map(argmax).collect();
    Ok(multiclass_f1(&preds, &data.labels, n_labels)?)
}

fn argmax(row: ndarray::ArrayView1<f32>) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl TaggerModel {
    /// Label the tagger predicts for a token: the argmax of its distribution.
    pub fn predict_label(&self, table: &EmbeddingTable, token_id: u32) -> usize {
        argmax(predict_all(&self.model, table, &[token_id]).row(0))
    }
}

/// Softmax of the tagger's logits for one token, computed in f64.
pub fn infer_tag_distribution(model: &TaggerModel, table: &EmbeddingTable, token_id: u32) -> TagDistribution {
    let logits = model
        .model
        .cast::<f64>()
        .predict(rows(table, &[token_id]).mapv(|v| v as f64).view());
    let probs = softmax_rows(logits.view()).row(0).to_vec();
    TagDistribution {
        token_id,
        feature: model.feature,
        probs,
    }
}

/// Tag distributions for every vocabulary token the table covers.
pub fn tag_vocabulary(model: &TaggerModel, table: &EmbeddingTable, vocab: &Vocabulary) -> TagTable {
    let ids: Vec<u32> = vocab.iter().map(|e| e.id).filter(|&id| table.covers(id)).collect();
    let m64 = model.model.cast::<f64>();
    let mut out = TagTable::new(model.feature, model.labels.clone());
    for chunk in ids.chunks(1024) {
        let x = rows(table, chunk).mapv(|v| v as f64);
        let p = softmax_rows(m64.predict(x.view()).view());
        for (id, row) in chunk.iter().zip(p.rows()) {
            out.insert(*id, row.iter().map(|&v| v as f32).collect());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::conll::ConllWord;
    use crate::vocab::VocabEntry;
    use rand::Rng as _;

    /// Tokens w0..wN with random 6-dim embeddings; the PoS label is the
    /// argmax of the first three dimensions.
    fn synthetic(n: usize) -> (EmbeddingTable, Vocabulary, Vec<Sentence>, Vec<Sentence>) {
        let mut r = rng::seeded(11);
        let mut rows_ = Vec::new();
        let mut entries = Vec::new();
        let mut label = Vec::new();
        for i in 0..n {
            let v: Vec<f32> = (0..6).map(|_| r.random::<f32>() * 2.0 - 1.0).collect();
            let k = (0..3).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
            label.push(["A", "B", "C"][k].to_string());
            rows_.extend(v);
            // distinct letters so alignment never splits a word
            let word: String = format!("{i:04}")
                .chars()
                .map(|c| (b'a' + c.to_digit(10).unwrap() as u8) as char)
                .collect();
            entries.push(VocabEntry {
                id: i as u32,
                surface: word,
                lemma: String::new(),
                frequency: 1,
            });
        }
        let table = EmbeddingTable::from_rows(n, 6, rows_, "synthetic").unwrap();
        let vocab = Vocabulary::new(entries).unwrap();
        let sent = |range: std::ops::Range<usize>| -> Vec<Sentence> {
            range
                .collect::<Vec<_>>()
                .chunks(10)
                .map(|c| {
                    c.iter()
                        .map(|&i| ConllWord {
                            word: vocab.get(i as u32).unwrap().surface.clone(),
                            pos: label[i].clone(),
                            chunk: "O".into(),
                            ner: "O".into(),
                        })
                        .collect()
                })
                .collect()
        };
        let train = sent(0..n * 4 / 5);
        let test = sent(n * 4 / 5..n);
        (table, vocab, train, test)
    }

    #[test]
    fn learns_argmax_labels() {
        let (table, vocab, train, test) = synthetic(3000);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-2,
            ..Default::default()
        };
        let (model, run) = train_tagger(
            &table,
            &vocab,
            &Markers::standard(),
            &train,
            None,
            Some(&test),
            TagFeature::Pos,
            &cfg,
        )
        .unwrap();
        let f1 = run.test.unwrap().macro_f1;
        assert!(f1 >= 95.0, "{f1}");
        assert_eq!(model.model.d_out(), 3);
        let d = infer_tag_distribution(&model, &table, 5);
        assert!((d.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(d.probs.iter().all(|&p| p >= 0.0));
        let arg = (0..3).max_by(|&a, &b| d.probs[a].total_cmp(&d.probs[b])).unwrap();
        assert_eq!(arg, model.predict_label(&table, 5));
        let tags = tag_vocabulary(&model, &table, &vocab);
        assert_eq!(tags.len(), 3000);
    }

    #[test]
    fn unknown_dev_label_is_an_error() {
        let (table, vocab, train, mut test) = synthetic(50);
        test[0][0].pos = "Z".into();
        let r = train_tagger(
            &table,
            &vocab,
            &Markers::standard(),
            &train,
            Some(&test),
            None,
            TagFeature::Pos,
            &tagger_config(),
        );
        assert!(matches!(r, Err(SyntaxError::UnknownLabel(l)) if l == "Z"));
    }

    #[test]
    fn uniform_logits_give_uniform_distribution() {
        let p = softmax_rows(ndarray::arr2(&[[0.0f64, 0.0, 0.0]]).view());
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }
}
