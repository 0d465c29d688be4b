//! Character probes over syntactic features: each feature's distribution
//! is projected by its own trainable embedding, the projections are
//! concatenated and fed to the standard probe MLP.

use ndarray::{s, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::tags::TagTable;
use super::SyntaxError;
use crate::dataset::{CharDataset, SplitPlan};
use crate::neural::mlp::{bce_with_logits, sigmoid, ForwardCache, MlpGrads};
use crate::neural::{macro_f1, Float, Metrics, Mlp, TrainConfig};
use crate::probe::{run_char_grid, CharProbeTrainer, ControlFactory, ExperimentReport, ProbeConfig};
use crate::rng::{self, Rng};
use crate::vocab::{Alphabet, Vocabulary};

/// Width of each feature's trainable embedding.
pub const FEATURE_EMBED_DIM: usize = 64;

/// Learning rates searched for syntactic probes.
pub const SYNTAX_LR_GRID: [f64; 7] = [1e-5, 3e-5, 1e-4, 3e-4, 1e-3, 3e-3, 1e-2];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntaxModel<F> {
    /// One `n_labels x embed_dim` table per feature.
    pub embeddings: Vec<Array2<F>>,
    pub mlp: Mlp<F>,
}

impl<F: Float> SyntaxModel<F> {
    pub fn new(
        label_counts: &[usize],
        embed_dim: usize,
        hidden: Option<(usize, usize)>,
        dropout: f64,
        r: &mut Rng,
    ) -> Self {
        let embeddings = label_counts
            .iter()
            .map(|&n| {
                Array2::from_shape_simple_fn((n, embed_dim), || {
                    let z: f64 = StandardNormal.sample(r);
                    F::from_f64(z).unwrap()
                })
            })
            .collect();
        let d_in = embed_dim * label_counts.len();
        let (h1, h2) = hidden.unwrap_or((d_in, d_in));
        Self {
            embeddings,
            mlp: Mlp::new(d_in, h1, h2, 1, dropout, r),
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.embeddings.first().map_or(0, |e| e.ncols())
    }

    /// `[x1 E1; x2 E2; ...]` for a batch of per-feature distributions.
    pub fn input(&self, xs: &[ArrayView2<F>]) -> Array2<F> {
        let k = self.embed_dim();
        let mut out = Array2::zeros((xs[0].nrows(), k * xs.len()));
        for (j, (x, e)) in xs.iter().zip(&self.embeddings).enumerate() {
            out.slice_mut(s![.., j * k..(j + 1) * k]).assign(&x.dot(e));
        }
        out
    }

    pub fn forward(&self, xs: &[ArrayView2<F>], dropout_rng: Option<&mut Rng>) -> ForwardCache<F> {
        self.mlp.forward(self.input(xs).view(), dropout_rng)
    }

    pub fn backward(
        &self,
        xs: &[ArrayView2<F>],
        cache: &ForwardCache<F>,
        d_out: ArrayView2<F>,
    ) -> (MlpGrads<F>, Vec<Array2<F>>) {
        let (g, dx) = self.mlp.backward(cache, d_out);
        let k = self.embed_dim();
        let ge = xs
            .iter()
            .enumerate()
            .map(|(j, x)| x.t().dot(&dx.slice(s![.., j * k..(j + 1) * k])))
            .collect();
        (g, ge)
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut v: Vec<&mut [F]> = self.mlp.tensors_mut().into_iter().collect();
        v.extend(
            self.embeddings
                .iter_mut()
                .map(|e| e.as_slice_mut().expect("contiguous")),
        );
        v
    }
}

/// Batch size used for a feature set: 128 when every feature is one-hot,
/// 64 otherwise.
pub fn syntax_batch_size(tables: &[TagTable]) -> usize {
    if tables.iter().all(TagTable::is_one_hot) {
        128
    } else {
        64
    }
}

fn gather(tables: &[TagTable], dataset: &CharDataset, idx: &[usize]) -> Vec<Array2<f32>> {
    tables
        .iter()
        .map(|t| {
            let mut x = Array2::zeros((idx.len(), t.n_labels()));
            for (r, &i) in idx.iter().enumerate() {
                let row = t.get(dataset.examples[i].token_id).expect("coverage checked");
                x.row_mut(r).assign(&ndarray::ArrayView1::from(row));
            }
            x
        })
        .collect()
}

fn views(xs: &[Array2<f32>]) -> Vec<ArrayView2<'_, f32>> {
    xs.iter().map(|x| x.view()).collect()
}

#[derive(Debug, Clone)]
pub struct SyntaxProbeResult {
    pub model: SyntaxModel<f32>,
    pub metrics: Metrics,
    pub epoch_losses: Vec<f64>,
    pub test_predictions: Vec<(usize, f32)>,
}

/// Trains the feature embeddings and MLP jointly with BCE and scores the
/// test side.
pub fn train_syntax_probe(
    tables: &[TagTable],
    dataset: &CharDataset,
    split: &SplitPlan,
    config: &TrainConfig,
) -> Result<SyntaxProbeResult, SyntaxError> {
    config.validate()?;
    if tables.is_empty() {
        return Err(SyntaxError::NoFeatures);
    }
    for &i in split.train.iter().chain(&split.test) {
        let id = dataset.examples[i].token_id;
        if tables.iter().any(|t| !t.covers(id)) {
            return Err(SyntaxError::CoverageGap(id));
        }
    }
    let counts: Vec<usize> = tables.iter().map(TagTable::n_labels).collect();
    let mut init = rng::seeded(rng::derive(config.seed, &[0x5E1]));
    let mut model = SyntaxModel::<f32>::new(&counts, FEATURE_EMBED_DIM, config.hidden, config.dropout, &mut init);
    let mut r = rng::seeded(rng::derive(config.seed, &[0x5E2]));
    let mut opt = config.optimizer::<f32>();
    let mut order = split.train.clone();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut r);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let xs = gather(tables, dataset, idx);
            let xv = views(&xs);
            let y: Vec<f32> = idx
                .iter()
                .map(|&i| f32::from(u8::from(dataset.examples[i].label)))
                .collect();
            let cache = model.forward(&xv, Some(&mut r));
            let (loss, d_out) = bce_with_logits(cache.out.view(), &y);
            if !loss.is_finite() {
                return Err(SyntaxError::NonFiniteLoss { epoch, batch });
            }
            total += loss as f64 * idx.len() as f64;
            let (g, ge) = model.backward(&xv, &cache, d_out.view());
            let mut grads: Vec<&[f32]> = g.tensors().to_vec();
            grads.extend(ge.iter().map(|e| e.as_slice().expect("contiguous")));
            opt.step(&mut model.tensors_mut(), &grads);
        }
        epoch_losses.push(total / order.len() as f64);
    }
    let mut probs = Vec::with_capacity(split.test.len());
    for chunk in split.test.chunks(1024) {
        let xs = gather(tables, dataset, chunk);
        let out = model.forward(&views(&xs), None).out;
        probs.extend(out.column(0).iter().map(|&z| sigmoid(z)));
    }
    let preds: Vec<bool> = probs.iter().map(|&p| p >= 0.5).collect();
    let labels: Vec<bool> = split.test.iter().map(|&i| dataset.examples[i].label).collect();
    let metrics = macro_f1(&preds, &labels)?;
    Ok(SyntaxProbeResult {
        model,
        metrics,
        epoch_losses,
        test_predictions: split.test.iter().copied().zip(probs).collect(),
    })
}

/// A feature set in canonical order (POS, COARSE_POS, NER).
#[derive(Debug, Clone)]
pub struct SyntaxFeatures {
    pub tables: Vec<TagTable>,
}

impl SyntaxFeatures {
    pub fn new(mut tables: Vec<TagTable>) -> Result<Self, SyntaxError> {
        if tables.is_empty() {
            return Err(SyntaxError::NoFeatures);
        }
        tables.sort_by_key(|t| t.feature);
        Ok(Self { tables })
    }

    pub fn order(&self) -> Vec<String> {
        self.tables.iter().map(|t| t.feature.to_string()).collect()
    }

    pub fn covers(&self, token_id: u32) -> bool {
        self.tables.iter().all(|t| t.covers(token_id))
    }

    /// Tokens covered by every feature, ascending.
    pub fn covered_ids(&self) -> Vec<u32> {
        self.tables[0]
            .token_ids()
            .into_iter()
            .filter(|&id| self.covers(id))
            .collect()
    }

    /// Control features: every covered token takes the full feature bundle
    /// of another, under one random permutation.
    pub fn permuted(&self, seed: u64) -> Self {
        let ids = self.covered_ids();
        let mut shuffled = ids.clone();
        shuffled.shuffle(&mut rng::seeded(rng::derive(seed, &[0x9E7])));
        let mapping: Vec<(u32, u32)> = shuffled.into_iter().zip(ids).collect();
        Self {
            tables: self.tables.iter().map(|t| t.remapped(&mapping)).collect(),
        }
    }
}

impl CharProbeTrainer for SyntaxFeatures {
    fn name(&self) -> String {
        format!("syntax:{}", self.order().join("+"))
    }

    fn fit(
        &self,
        dataset: &CharDataset,
        split: &SplitPlan,
        config: &TrainConfig,
    ) -> Result<(Metrics, Vec<(usize, f32)>), String> {
        train_syntax_probe(&self.tables, dataset, split, config)
            .map(|r| (r.metrics, r.test_predictions))
            .map_err(|e| e.to_string())
    }
}

/// Character probing from syntactic features alone, against a control
/// whose feature assignment is randomly permuted per seed. Only tokens
/// covered by every feature enter the datasets.
pub fn run_syntax_experiment(
    features: &SyntaxFeatures,
    vocab: &Vocabulary,
    alphabet: &Alphabet,
    config: &ProbeConfig,
) -> Result<ExperimentReport, SyntaxError> {
    let covered = Vocabulary::new(vocab.iter().filter(|e| features.covers(e.id)).cloned().collect())
        .expect("subset of a valid vocabulary");
    let mut cfg = config.clone();
    cfg.train.batch_size = syntax_batch_size(&features.tables);
    let factory = |s: usize| -> Result<Box<dyn CharProbeTrainer>, String> {
        Ok(Box::new(features.permuted(rng::derive(cfg.seed_of(s), &[0xC047]))))
    };
    let control = cfg.run_control.then_some(&factory as &ControlFactory);
    let mut report = run_char_grid(features, control, &covered, alphabet, &cfg)?;
    report.feature_order = Some(features.order());
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{split_by_keys, CharExample, GroupKind};
    use crate::syntax::TagFeature;
    use rand::Rng as _;

    fn loss_of(m: &SyntaxModel<f64>, xs: &[Array2<f64>], y: &[f64]) -> f64 {
        let v: Vec<ArrayView2<f64>> = xs.iter().map(|x| x.view()).collect();
        bce_with_logits(m.forward(&v, None).out.view(), y).0
    }

    #[test]
    fn feature_embedding_gradients_match_finite_differences() {
        let mut r = rng::seeded(3);
        let mut m = SyntaxModel::<f64>::new(&[3, 4], 5, None, 0.0, &mut r);
        let xs: Vec<Array2<f64>> = [3usize, 4]
            .iter()
            .map(|&n| {
                let mut x = Array2::from_shape_simple_fn((6, n), || r.random::<f64>());
                for mut row in x.rows_mut() {
                    let s = row.sum();
                    row /= s;
                }
                x
            })
            .collect();
        let y = [1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let v: Vec<ArrayView2<f64>> = xs.iter().map(|x| x.view()).collect();
        let cache = m.forward(&v, None);
        let (_, d_out) = bce_with_logits(cache.out.view(), &y);
        let (g, ge) = m.backward(&v, &cache, d_out.view());
        let h = 1e-6;
        for j in 0..2 {
            for idx in [(0, 0), (1, 3), (2, 4)] {
                let orig = m.embeddings[j][idx];
                m.embeddings[j][idx] = orig + h;
                let up = loss_of(&m, &xs, &y);
                m.embeddings[j][idx] = orig - h;
                let down = loss_of(&m, &xs, &y);
                m.embeddings[j][idx] = orig;
                let num = (up - down) / (2.0 * h);
                let ana = ge[j][idx];
                assert!(
                    (num - ana).abs() <= 1e-6 * num.abs().max(ana.abs()).max(1e-3),
                    "{j} {idx:?}: {num} vs {ana}"
                );
            }
        }
        let orig = m.mlp.w1[[2, 7]];
        m.mlp.w1[[2, 7]] = orig + h;
        let up = loss_of(&m, &xs, &y);
        m.mlp.w1[[2, 7]] = orig - h;
        let down = loss_of(&m, &xs, &y);
        m.mlp.w1[[2, 7]] = orig;
        let num = (up - down) / (2.0 * h);
        assert!((num - g.w1[[2, 7]]).abs() < 1e-8, "{num} vs {}", g.w1[[2, 7]]);
    }

    fn one_hot_table(feature: TagFeature, labels: &[&str], assign: &[(u32, usize)]) -> TagTable {
        let mut t = TagTable::new(feature, labels.iter().map(|s| s.to_string()).collect());
        for &(id, k) in assign {
            let mut row = vec![0f32; labels.len()];
            row[k] = 1.0;
            t.insert(id, row);
        }
        t
    }

    #[test]
    fn leaked_label_is_learned() {
        let n = 600u32;
        let examples: Vec<CharExample> = (0..n)
            .map(|i| CharExample {
                token_id: i,
                label: i % 2 == 0,
            })
            .collect();
        let assign: Vec<(u32, usize)> = (0..n).map(|i| (i, (i % 2) as usize)).collect();
        let noise: Vec<(u32, usize)> = (0..n).map(|i| (i, (i as usize * 7) % 3)).collect();
        let tables = vec![
            one_hot_table(TagFeature::Ner, &["X", "Y", "Z"], &noise),
            one_hot_table(TagFeature::Pos, &["HAS", "NOT"], &assign),
        ];
        let features = SyntaxFeatures::new(tables).unwrap();
        assert_eq!(features.order(), vec!["POS", "NER"]);
        let ds = CharDataset {
            target: 'a',
            examples,
            case_sensitive: false,
            seed: 0,
            grouping: GroupKind::Token,
        };
        let keys: Vec<u32> = (0..n).collect();
        let split = split_by_keys(&keys, 0.8, 1, GroupKind::Token).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            batch_size: syntax_batch_size(&features.tables),
            ..Default::default()
        };
        assert_eq!(cfg.batch_size, 128);
        let r = train_syntax_probe(&features.tables, &ds, &split, &cfg).unwrap();
        assert!(r.metrics.macro_f1 >= 99.0, "{}", r.metrics.macro_f1);
    }

    #[test]
    fn coverage_gap_is_reported() {
        let t = one_hot_table(TagFeature::Pos, &["A"], &[(0, 0)]);
        let ds = CharDataset {
            target: 'a',
            examples: vec![
                CharExample {
                    token_id: 0,
                    label: true,
                },
                CharExample {
                    token_id: 1,
                    label: false,
                },
            ],
            case_sensitive: false,
            seed: 0,
            grouping: GroupKind::Token,
        };
        let split = SplitPlan {
            train: vec![0],
            test: vec![1],
            ratio_target: 0.5,
            group_key: GroupKind::Token,
            groups: vec![0, 1],
        };
        let r = train_syntax_probe(&[t], &ds, &split, &TrainConfig::default());
        assert!(matches!(r, Err(SyntaxError::CoverageGap(1))));
    }

    #[test]
    fn permutation_keeps_bundles_together() {
        let assign: Vec<(u32, usize)> = (0..50).map(|i| (i, (i % 5) as usize)).collect();
        let f = SyntaxFeatures::new(vec![
            one_hot_table(TagFeature::Pos, &["a", "b", "c", "d", "e"], &assign),
            one_hot_table(TagFeature::CoarsePos, &["a", "b", "c", "d", "e"], &assign),
        ])
        .unwrap();
        let p = f.permuted(4);
        assert_eq!(p.covered_ids(), f.covered_ids());
        let moved = (0..50).filter(|&i| p.tables[0].get(i) != f.tables[0].get(i)).count();
        assert!(moved > 20);
        for i in 0..50 {
            assert_eq!(p.tables[0].get(i), p.tables[1].get(i));
        }
    }
}
