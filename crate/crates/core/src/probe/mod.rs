//! Character and substring probing experiments: the (character, seed) grid,
//! learning-rate search, control runs, aggregation and reports.

pub mod breakdown;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use breakdown::{
    breakdowns, first_position, frequency_bin, regressions, BinScore, BreakdownTable, Breakdowns, Regression,
    Regressions, ScoredExample, SkippedBin, MIN_BIN_SIZE,
};

use crate::dataset::{
    build_char_dataset, build_substring_dataset, cap_superstrings, dump_char_dataset, parse_char_dump, split_grouped,
    CharDataset, DatasetError, GroupKind, SplitPlan, SubstringDataset,
};
use crate::embedding::{make_control, ControlShape, EmbeddingTable, FeatureProvider};
use crate::neural::{macro_f1, predict_proba, train_binary_probe, Metrics, Mlp, ProbeInputs, TrainConfig};
use crate::rng;
use crate::vocab::{Alphabet, Markers, Vocabulary};

const TAG_SPLIT: u64 = 0x5971;
const TAG_TRAIN: u64 = 0x7241;
const TAG_CONTROL: u64 = 0xC047;
const TAG_HOLDOUT: u64 = 0x401D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub train: TrainConfig,
    pub n_seeds: usize,
    pub split_ratio: f64,
    /// Fraction of the train side held out for learning-rate search.
    pub holdout: f64,
    pub grouping: GroupKind,
    pub markers: Vec<String>,
    pub control: ControlShape,
    pub run_control: bool,
    pub top_k: usize,
    pub min_bin_size: usize,
    /// Caps the number of superstrings in substring datasets.
    pub max_superstrings: Option<usize>,
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                lr_grid: crate::neural::LR_GRID.to_vec(),
                ..Default::default()
            },
            n_seeds: 5,
            split_ratio: 0.8,
            holdout: 0.1,
            grouping: GroupKind::Lemma,
            markers: Markers::standard().as_slice().to_vec(),
            control: ControlShape::Matched,
            run_control: true,
            top_k: 10,
            min_bin_size: MIN_BIN_SIZE,
            max_superstrings: None,
            cache_dir: None,
        }
    }
}

impl ProbeConfig {
    pub fn markers(&self) -> Markers {
        Markers::new(self.markers.iter())
    }

    /// Base seed of repetition `s`.
    pub fn seed_of(&self, s: usize) -> u64 {
        rng::derive(self.train.seed, &[s as u64])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrScore {
    pub learning_rate: f64,
    /// Held-out macro-F1 averaged over tasks.
    pub mean_f1: f64,
    pub n_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSearch {
    pub chosen: f64,
    pub scores: Vec<LrScore>,
}

/// Evaluates every (grid rate, task) pair in parallel with `score` and picks
/// the rate with the best mean. Ties go to the earlier rate.
pub fn search_grid<F>(grid: &[f64], n_tasks: usize, score: F) -> Option<LrSearch>
where
    F: Fn(f64, usize) -> f64 + Sync,
{
    if grid.is_empty() || n_tasks == 0 {
        return None;
    }
    let jobs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|l| (0..n_tasks).map(move |t| (l, t)))
        .collect();
    let f1s: Vec<f64> = jobs.par_iter().map(|&(l, t)| score(grid[l], t)).collect();
    let scores: Vec<LrScore> = grid
        .iter()
        .enumerate()
        .map(|(l, &lr)| LrScore {
            learning_rate: lr,
            mean_f1: f1s[l * n_tasks..(l + 1) * n_tasks].iter().sum::<f64>() / n_tasks as f64,
            n_tasks,
        })
        .collect();
    let mut best = &scores[0];
    for s in &scores[1..] {
        if s.mean_f1 > best.mean_f1 {
            best = s;
        }
    }
    Some(LrSearch {
        chosen: best.learning_rate,
        scores,
    })
}

/// Held-out sides for learning-rate search; tasks whose train side cannot
/// be split again are dropped.
fn holdout_tasks<'a, D>(tasks: &[(&'a D, &SplitPlan)], train: &TrainConfig, holdout: f64) -> Vec<(&'a D, SplitPlan)> {
    let hseed = rng::derive(train.seed, &[TAG_HOLDOUT]);
    tasks
        .iter()
        .filter_map(|(d, s)| s.holdout(holdout, hseed).ok().map(|h| (*d, h)))
        .filter(|(_, h)| !h.train.is_empty() && !h.test.is_empty())
        .collect()
}

fn tuning_config(train: &TrainConfig, lr: f64, task: usize) -> TrainConfig {
    train
        .with_lr(lr)
        .with_seed(rng::derive(train.seed, &[TAG_HOLDOUT, task as u64]))
}

fn fallback(train: &TrainConfig) -> LrSearch {
    LrSearch {
        chosen: train.learning_rate,
        scores: Vec::new(),
    }
}

/// Picks the grid learning rate with the best held-out macro-F1 averaged
/// over `tasks`. Diverging runs score 0. With an empty grid, or no task
/// that admits a holdout, the configured rate is kept.
pub fn tune_learning_rate<D: ProbeInputs>(
    features: &dyn FeatureProvider,
    tasks: &[(&D, &SplitPlan)],
    train: &TrainConfig,
    holdout: f64,
) -> LrSearch {
    let inner = holdout_tasks(tasks, train, holdout);
    search_grid(&train.lr_grid, inner.len(), |lr, t| {
        let (d, h) = &inner[t];
        train_binary_probe(features, *d, h, &tuning_config(train, lr, t))
            .map(|p| p.metrics.macro_f1)
            .unwrap_or(0.0)
    })
    .unwrap_or_else(|| fallback(train))
}

/// Anything that can fit and score a character probe on a split: frozen
/// embeddings, or syntactic features with their own trainable layers.
pub trait CharProbeTrainer: Sync {
    fn name(&self) -> String;
    /// Test metrics and (example index, probability) for the test side.
    fn fit(
        &self,
        dataset: &CharDataset,
        split: &SplitPlan,
        config: &TrainConfig,
    ) -> Result<(Metrics, Vec<(usize, f32)>), String>;
}

impl CharProbeTrainer for EmbeddingTable {
    fn name(&self) -> String {
        self.source_name().to_string()
    }

    fn fit(
        &self,
        dataset: &CharDataset,
        split: &SplitPlan,
        config: &TrainConfig,
    ) -> Result<(Metrics, Vec<(usize, f32)>), String> {
        train_binary_probe(self, dataset, split, config)
            .map(|p| (p.metrics, p.test_predictions))
            .map_err(|e| e.to_string())
    }
}

pub fn tune_char_trainer(
    trainer: &dyn CharProbeTrainer,
    tasks: &[(&CharDataset, &SplitPlan)],
    train: &TrainConfig,
    holdout: f64,
) -> LrSearch {
    let inner = holdout_tasks(tasks, train, holdout);
    search_grid(&train.lr_grid, inner.len(), |lr, t| {
        let (d, h) = &inner[t];
        trainer
            .fit(d, h, &tuning_config(train, lr, t))
            .map(|(m, _)| m.macro_f1)
            .unwrap_or(0.0)
    })
    .unwrap_or_else(|| fallback(train))
}

/// Mean and sample standard deviation; the deviation is absent for fewer
/// than two values.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
    (mean, std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopToken {
    pub token_id: u32,
    pub surface: String,
    pub prob: f32,
    pub label: bool,
}

/// The `k` highest-probability predictions, descending, ties by token id.
/// `k` larger than the list returns all of it.
pub fn rank_predictions(scored: &[(u32, f32, bool)], k: usize) -> Vec<(u32, f32, bool)> {
    let mut v = scored.to_vec();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.truncate(k);
    v
}

/// Scores the test side of `split` with `model` and returns the `k` tokens
/// the probe is most confident contain the target.
pub fn top_confidence_tokens(
    model: &Mlp<f32>,
    features: &dyn FeatureProvider,
    dataset: &CharDataset,
    split: &SplitPlan,
    k: usize,
) -> Vec<(u32, f32, bool)> {
    let probs = predict_proba(model, features, dataset, &split.test);
    let scored: Vec<(u32, f32, bool)> = split
        .test
        .iter()
        .zip(probs)
        .map(|(&i, p)| (dataset.examples[i].token_id, p, dataset.examples[i].label))
        .collect();
    rank_predictions(&scored, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub target: Option<char>,
    pub seed_index: usize,
    pub side: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharResult {
    pub char: char,
    pub f1_mean: f64,
    pub f1_std: Option<f64>,
    pub control_f1: Option<f64>,
    pub control_std: Option<f64>,
    pub f1_per_seed: Vec<f64>,
    pub control_per_seed: Vec<f64>,
    /// PLM metrics of every successful seed.
    pub metrics: Vec<Metrics>,
    pub control_metrics: Vec<Metrics>,
    pub n_examples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    /// Mean over characters of the per-character means.
    pub f1_mean: f64,
    /// Sample deviation over seeds of the character-averaged F1.
    pub f1_std: Option<f64>,
    pub control_f1: Option<f64>,
    pub control_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model: String,
    /// Concatenation order of syntactic features, for syntax probes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_order: Option<Vec<String>>,
    pub alphabet: Alphabet,
    pub seeds_count: usize,
    pub overall: Summary,
    pub per_char: Vec<CharResult>,
    pub breakdowns: Option<Breakdowns>,
    pub regressions: Option<Regressions>,
    /// Highest-confidence test tokens of each character's first-seed probe.
    pub top_tokens: Vec<(char, Vec<TopToken>)>,
    pub learning_rate: LrSearch,
    pub control_learning_rate: Option<LrSearch>,
    pub failures: Vec<Failure>,
    pub config: ProbeConfig,
}

struct Cell {
    char_idx: usize,
    seed_idx: usize,
    dataset: CharDataset,
    split: SplitPlan,
}

struct CellOutcome {
    f1: f64,
    metrics: Metrics,
    scored: Vec<ScoredExample>,
}

/// Content hash of a vocabulary and marker set, used to key cached splits.
pub fn vocab_fingerprint(vocab: &Vocabulary, markers: &Markers) -> String {
    let mut h = Sha256::new();
    for m in markers.as_slice() {
        h.update(m.as_bytes());
        h.update([0]);
    }
    for e in vocab.iter() {
        h.update(format!("{}\t{}\t{}\t{}\n", e.id, e.surface, e.lemma, e.frequency).as_bytes());
    }
    hex::encode(&h.finalize()[..12])
}

pub(crate) fn prepare_cell(
    vocab: &Vocabulary,
    target: char,
    case_sensitive: bool,
    seed: u64,
    config: &ProbeConfig,
    markers: &Markers,
    cache: Option<(&Path, &str)>,
) -> Result<(CharDataset, SplitPlan), DatasetError> {
    let path = cache.map(|(dir, fp)| {
        dir.join(format!(
            "chars-{fp}-{:?}-{}-{:x}-{seed:016x}-{}.tsv",
            config.grouping, case_sensitive as u8, target as u32, config.split_ratio
        ))
    });
    if let Some(p) = &path {
        if let Ok(text) = std::fs::read_to_string(p) {
            return parse_char_dump(
                &text,
                target,
                case_sensitive,
                seed,
                config.split_ratio,
                config.grouping,
                vocab,
            );
        }
    }
    let dataset = build_char_dataset(vocab, target, case_sensitive, markers, seed)?.with_grouping(config.grouping);
    let split = split_grouped(&dataset, vocab, config.split_ratio, rng::derive(seed, &[TAG_SPLIT]))?;
    if let Some(p) = &path {
        if let Err(e) = std::fs::create_dir_all(p.parent().unwrap_or(Path::new(".")))
            .and_then(|_| std::fs::write(p, dump_char_dataset(&dataset, &split)))
        {
            log::warn!("could not cache {}: {e}", p.display());
        }
    }
    Ok((dataset, split))
}

fn run_cells(
    trainer: &dyn CharProbeTrainer,
    cells: &[&Cell],
    train: &TrainConfig,
    alphabet: &Alphabet,
    config: &ProbeConfig,
    side: &str,
) -> Vec<Result<CellOutcome, Failure>> {
    cells
        .par_iter()
        .map(|c| {
            let target = alphabet.characters()[c.char_idx];
            let seed = rng::derive(config.seed_of(c.seed_idx), &[TAG_TRAIN, target as u64]);
            let (metrics, preds) = trainer
                .fit(&c.dataset, &c.split, &train.with_seed(seed))
                .map_err(|e| Failure {
                    target: Some(target),
                    seed_index: c.seed_idx,
                    side: side.to_string(),
                    error: e,
                })?;
            let scored = preds
                .iter()
                .map(|&(i, prob)| ScoredExample {
                    token_id: c.dataset.examples[i].token_id,
                    target,
                    label: c.dataset.examples[i].label,
                    prob,
                })
                .collect();
            Ok(CellOutcome {
                f1: metrics.macro_f1,
                metrics,
                scored,
            })
        })
        .collect()
}

fn tune_cells(trainer: &dyn CharProbeTrainer, cells: &[Cell], config: &ProbeConfig) -> LrSearch {
    let tasks: Vec<(&CharDataset, &SplitPlan)> = cells
        .iter()
        .filter(|c| c.seed_idx == 0)
        .map(|c| (&c.dataset, &c.split))
        .collect();
    tune_char_trainer(trainer, &tasks, &config.train, config.holdout)
}

/// Builds the control trainer of one seed index.
pub type ControlFactory<'a> = dyn Fn(usize) -> Result<Box<dyn CharProbeTrainer>, String> + 'a;

/// Runs every (character, seed) probe on `table` and on matched random
/// controls, then aggregates per character and overall.
pub fn run_char_experiment(
    table: &EmbeddingTable,
    vocab: &Vocabulary,
    alphabet: &Alphabet,
    config: &ProbeConfig,
) -> Result<ExperimentReport, ProbeError> {
    let (cv, cd) = config.control.shape_for(table);
    let factory = |s: usize| -> Result<Box<dyn CharProbeTrainer>, String> {
        make_control(cv, cd, rng::derive(config.seed_of(s), &[TAG_CONTROL]))
            .map(|t| Box::new(t) as Box<dyn CharProbeTrainer>)
            .map_err(|e| e.to_string())
    };
    run_char_grid(
        table,
        config.run_control.then_some(&factory as &ControlFactory),
        vocab,
        alphabet,
        config,
    )
}

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("could not build control: {0}")]
    Control(String),
}

/// The (character, seed) grid shared by embedding and syntactic probes.
/// Datasets and splits are built once and reused for the control side;
/// controls are built one seed at a time.
pub fn run_char_grid(
    plm: &dyn CharProbeTrainer,
    control: Option<&ControlFactory>,
    vocab: &Vocabulary,
    alphabet: &Alphabet,
    config: &ProbeConfig,
) -> Result<ExperimentReport, ProbeError> {
    let markers = config.markers();
    let n_seeds = config.n_seeds.max(1);
    let case_sensitive = alphabet.case_sensitive();
    let fp = config.cache_dir.as_ref().map(|_| vocab_fingerprint(vocab, &markers));
    let cache = config.cache_dir.as_deref().zip(fp.as_deref());
    let chars = alphabet.characters();

    let grid: Vec<(usize, usize)> = (0..chars.len())
        .flat_map(|c| (0..n_seeds).map(move |s| (c, s)))
        .collect();
    let prepared: Vec<Result<Cell, Failure>> = grid
        .par_iter()
        .map(|&(ci, si)| {
            prepare_cell(
                vocab,
                chars[ci],
                case_sensitive,
                config.seed_of(si),
                config,
                &markers,
                cache,
            )
            .map(|(dataset, split)| Cell {
                char_idx: ci,
                seed_idx: si,
                dataset,
                split,
            })
            .map_err(|e| Failure {
                target: Some(chars[ci]),
                seed_index: si,
                side: "dataset".into(),
                error: e.to_string(),
            })
        })
        .collect();
    let mut failures = Vec::new();
    let mut cells = Vec::new();
    for p in prepared {
        match p {
            Ok(c) => cells.push(c),
            Err(f) => failures.push(f),
        }
    }

    let lr = tune_cells(plm, &cells, config);
    log::info!("{}: learning rate {}", plm.name(), lr.chosen);
    let refs: Vec<&Cell> = cells.iter().collect();
    let plm_out = run_cells(plm, &refs, &config.train.with_lr(lr.chosen), alphabet, config, "plm");

    let mut control_out: Vec<Option<Result<CellOutcome, Failure>>> = (0..cells.len()).map(|_| None).collect();
    let mut control_lr: Option<LrSearch> = None;
    if let Some(factory) = control {
        for s in 0..n_seeds {
            let trainer = factory(s).map_err(ProbeError::Control)?;
            let chosen = control_lr
                .get_or_insert_with(|| tune_cells(trainer.as_ref(), &cells, config))
                .chosen;
            let idx: Vec<usize> = (0..cells.len()).filter(|&i| cells[i].seed_idx == s).collect();
            let picked: Vec<&Cell> = idx.iter().map(|&i| &cells[i]).collect();
            let results = run_cells(
                trainer.as_ref(),
                &picked,
                &config.train.with_lr(chosen),
                alphabet,
                config,
                "control",
            );
            for (i, r) in idx.into_iter().zip(results) {
                control_out[i] = Some(r);
            }
        }
    }

    let mut per_char = Vec::with_capacity(chars.len());
    let mut pooled = Vec::new();
    let mut per_seed_plm = vec![Vec::new(); n_seeds];
    let mut per_seed_ctl = vec![Vec::new(); n_seeds];
    let mut top_tokens = Vec::new();
    for (ci, &ch) in chars.iter().enumerate() {
        let mut f1s = Vec::new();
        let mut metrics = Vec::new();
        let mut cf1s = Vec::new();
        let mut cmetrics = Vec::new();
        let mut n_examples = 0;
        for (k, cell) in cells.iter().enumerate().filter(|(_, c)| c.char_idx == ci) {
            n_examples = n_examples.max(cell.dataset.examples.len());
            match &plm_out[k] {
                Ok(o) => {
                    f1s.push(o.f1);
                    metrics.push(o.metrics);
                    per_seed_plm[cell.seed_idx].push(o.f1);
                    pooled.extend_from_slice(&o.scored);
                    if cell.seed_idx == 0 {
                        let flat: Vec<(u32, f32, bool)> =
                            o.scored.iter().map(|s| (s.token_id, s.prob, s.label)).collect();
                        let top = rank_predictions(&flat, config.top_k)
                            .into_iter()
                            .map(|(token_id, prob, label)| TopToken {
                                token_id,
                                surface: vocab.get(token_id).map(|e| e.surface.clone()).unwrap_or_default(),
                                prob,
                                label,
                            })
                            .collect();
                        top_tokens.push((ch, top));
                    }
                }
                Err(f) => failures.push(f.clone()),
            }
            match &control_out[k] {
                Some(Ok(o)) => {
                    cf1s.push(o.f1);
                    cmetrics.push(o.metrics);
                    per_seed_ctl[cell.seed_idx].push(o.f1);
                }
                Some(Err(f)) => failures.push(f.clone()),
                None => {}
            }
        }
        let (f1_mean, f1_std) = mean_std(&f1s);
        let (cm, cs) = mean_std(&cf1s);
        per_char.push(CharResult {
            char: ch,
            f1_mean,
            f1_std,
            control_f1: (!cf1s.is_empty()).then_some(cm),
            control_std: cs,
            f1_per_seed: f1s,
            control_per_seed: cf1s,
            metrics,
            control_metrics: cmetrics,
            n_examples,
        });
    }

    let char_means: Vec<f64> = per_char
        .iter()
        .filter(|c| !c.f1_per_seed.is_empty())
        .map(|c| c.f1_mean)
        .collect();
    let ctl_means: Vec<f64> = per_char.iter().filter_map(|c| c.control_f1).collect();
    let seed_avg = |v: &[Vec<f64>]| -> Vec<f64> { v.iter().filter(|s| !s.is_empty()).map(|s| mean_std(s).0).collect() };
    let overall = Summary {
        f1_mean: mean_std(&char_means).0,
        f1_std: mean_std(&seed_avg(&per_seed_plm)).1,
        control_f1: (!ctl_means.is_empty()).then(|| mean_std(&ctl_means).0),
        control_std: mean_std(&seed_avg(&per_seed_ctl)).1,
    };
    let (bd, reg) = if pooled.is_empty() {
        (None, None)
    } else {
        let b = breakdowns(&pooled, vocab, &markers, case_sensitive, config.min_bin_size);
        let r = regressions(&b);
        (Some(b), Some(r))
    };
    Ok(ExperimentReport {
        model: plm.name(),
        feature_order: None,
        alphabet: alphabet.clone(),
        seeds_count: n_seeds,
        overall,
        per_char,
        breakdowns: bd,
        regressions: reg,
        top_tokens,
        learning_rate: lr,
        control_learning_rate: control_lr,
        failures,
        config: config.clone(),
    })
}

/// Macro-F1 of predicting, for each test pair, the majority train label of
/// its candidate substring `u`; unseen or tied `u` fall back to the overall
/// train majority (ties there predict negative).
pub fn majority_baseline(data: &SubstringDataset, split: &SplitPlan) -> Result<Metrics, crate::neural::MetricsError> {
    let mut votes: std::collections::HashMap<u32, i64> = std::collections::HashMap::new();
    let mut total = 0i64;
    for &i in &split.train {
        let e = &data.examples[i];
        let v = if e.label { 1 } else { -1 };
        *votes.entry(e.u).or_default() += v;
        total += v;
    }
    let (preds, labels): (Vec<bool>, Vec<bool>) = split
        .test
        .iter()
        .map(|&i| {
            let e = &data.examples[i];
            let p = match votes.get(&e.u) {
                Some(&v) if v != 0 => v > 0,
                _ => total > 0,
            };
            (p, e.label)
        })
        .unzip();
    macro_f1(&preds, &labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstringReport {
    pub model: String,
    pub seeds_count: usize,
    pub f1_mean: f64,
    pub f1_std: Option<f64>,
    pub f1_per_seed: Vec<f64>,
    pub control_f1: Option<f64>,
    pub control_std: Option<f64>,
    pub control_per_seed: Vec<f64>,
    /// Majority-label-per-candidate baseline on the same splits.
    pub majority_f1: f64,
    pub majority_per_seed: Vec<f64>,
    pub n_examples_per_seed: Vec<usize>,
    pub learning_rate: LrSearch,
    pub control_learning_rate: Option<LrSearch>,
    /// Dataset warnings of the first seed.
    pub warnings: Vec<String>,
    pub failures: Vec<Failure>,
    pub config: ProbeConfig,
}

fn failure(seed_index: usize, side: &str, e: impl ToString) -> Failure {
    Failure {
        target: None,
        seed_index,
        side: side.to_string(),
        error: e.to_string(),
    }
}

/// Substring probing: does token `u` occur inside token `v`? Inputs are the
/// two embeddings concatenated.
pub fn run_substring_experiment(
    table: &EmbeddingTable,
    vocab: &Vocabulary,
    config: &ProbeConfig,
) -> Result<SubstringReport, ProbeError> {
    let markers = config.markers();
    let n_seeds = config.n_seeds.max(1);
    let prepared: Vec<Result<(SubstringDataset, SplitPlan), Failure>> = (0..n_seeds)
        .into_par_iter()
        .map(|s| {
            let seed = config.seed_of(s);
            let mut d = build_substring_dataset(vocab, &markers, seed);
            if let Some(cap) = config.max_superstrings {
                d = cap_superstrings(&d, cap, seed);
            }
            let split = split_grouped(&d, vocab, config.split_ratio, rng::derive(seed, &[TAG_SPLIT]))
                .map_err(|e| failure(s, "dataset", e))?;
            Ok((d, split))
        })
        .collect();
    let mut failures = Vec::new();
    let mut tasks: Vec<(usize, SubstringDataset, SplitPlan)> = Vec::new();
    for (s, p) in prepared.into_iter().enumerate() {
        match p {
            Ok((d, sp)) => tasks.push((s, d, sp)),
            Err(f) => failures.push(f),
        }
    }
    let first: Vec<(&SubstringDataset, &SplitPlan)> = tasks.iter().take(1).map(|(_, d, s)| (d, s)).collect();
    let lr = tune_learning_rate(table, &first, &config.train, config.holdout);
    let train_one = |features: &dyn FeatureProvider, lr: f64, s: usize, d: &SubstringDataset, sp: &SplitPlan| {
        let cfg = config
            .train
            .with_lr(lr)
            .with_seed(rng::derive(config.seed_of(s), &[TAG_TRAIN]));
        train_binary_probe(features, d, sp, &cfg).map(|p| p.metrics.macro_f1)
    };
    let plm: Vec<Result<f64, Failure>> = tasks
        .par_iter()
        .map(|(s, d, sp)| train_one(table, lr.chosen, *s, d, sp).map_err(|e| failure(*s, "plm", e)))
        .collect();
    let mut control_lr = None;
    let mut control_per_seed = Vec::new();
    if config.run_control {
        let (cv, cd) = config.control.shape_for(table);
        for (s, d, sp) in &tasks {
            let ctable = make_control(cv, cd, rng::derive(config.seed_of(*s), &[TAG_CONTROL]))
                .map_err(|e| ProbeError::Control(e.to_string()))?;
            if control_lr.is_none() {
                control_lr = Some(tune_learning_rate(&ctable, &first, &config.train, config.holdout));
            }
            let clr = control_lr.as_ref().expect("set above").chosen;
            match train_one(&ctable, clr, *s, d, sp) {
                Ok(f) => control_per_seed.push(f),
                Err(e) => failures.push(failure(*s, "control", e)),
            }
        }
    }
    let mut f1_per_seed = Vec::new();
    for r in plm {
        match r {
            Ok(f) => f1_per_seed.push(f),
            Err(f) => failures.push(f),
        }
    }
    let mut majority_per_seed = Vec::new();
    for (s, d, sp) in &tasks {
        match majority_baseline(d, sp) {
            Ok(m) => majority_per_seed.push(m.macro_f1),
            Err(e) => failures.push(failure(*s, "majority", e)),
        }
    }
    let (f1_mean, f1_std) = mean_std(&f1_per_seed);
    let (cm, control_std) = mean_std(&control_per_seed);
    Ok(SubstringReport {
        model: table.source_name().to_string(),
        seeds_count: n_seeds,
        f1_mean,
        f1_std,
        f1_per_seed,
        control_f1: (!control_per_seed.is_empty()).then_some(cm),
        control_std,
        control_per_seed,
        majority_f1: mean_std(&majority_per_seed).0,
        majority_per_seed,
        n_examples_per_seed: tasks.iter().map(|(_, d, _)| d.examples.len()).collect(),
        learning_rate: lr,
        control_learning_rate: control_lr,
        warnings: tasks.first().map(|(_, d, _)| d.warnings.clone()).unwrap_or_default(),
        failures,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PairExample;
    use crate::vocab::VocabEntry;

    /// Letter-count features over a small synthetic vocabulary.
    pub(crate) fn letter_count_fixture(n: usize, seed: u64) -> (EmbeddingTable, Vocabulary) {
        use rand::Rng as _;
        let mut r = rng::seeded(seed);
        let mut entries = Vec::new();
        let mut rows = Vec::new();
        let mut seen = std::collections::HashSet::new();
        while entries.len() < n {
            let len = r.random_range(2..9);
            let w: String = (0..len).map(|_| (b'a' + r.random_range(0..26u8)) as char).collect();
            if !seen.insert(w.clone()) {
                continue;
            }
            let mut counts = [0f32; 26];
            for c in w.bytes() {
                counts[(c - b'a') as usize] += 1.0;
            }
            rows.extend(counts);
            entries.push(VocabEntry {
                id: entries.len() as u32,
                surface: w.clone(),
                lemma: w,
                frequency: r.random_range(0..5000),
            });
        }
        (
            EmbeddingTable::from_rows(n, 26, rows, "letter-counts").unwrap(),
            Vocabulary::new(entries).unwrap(),
        )
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s.unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(mean_std(&[4.0]).1, None);
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        let scored = [(5, 0.9, true), (2, 0.9, false), (7, 0.1, false), (1, 0.95, true)];
        let top = rank_predictions(&scored, 3);
        assert_eq!(top.iter().map(|t| t.0).collect::<Vec<_>>(), vec![1, 2, 5]);
        assert_eq!(rank_predictions(&scored, 0), vec![]);
        assert_eq!(rank_predictions(&scored, 10).len(), 4);
    }

    #[test]
    fn majority_baseline_votes_per_candidate() {
        let ex = |u, v, label| PairExample { u, v, label };
        let data = SubstringDataset {
            examples: vec![
                ex(1, 10, true),
                ex(1, 11, true),
                ex(2, 12, false),
                ex(1, 13, true),
                ex(2, 14, true),
                ex(3, 15, false),
            ],
            seed: 0,
            warnings: vec![],
        };
        let split = SplitPlan {
            train: vec![0, 1, 2],
            test: vec![3, 4, 5],
            ratio_target: 0.5,
            group_key: GroupKind::Superstring,
            groups: (0..6).collect(),
        };
        // predictions: u=1 -> true, u=2 -> false, u=3 unseen -> train majority true
        let m = majority_baseline(&data, &split).unwrap();
        let expected = macro_f1(&[true, false, true], &[true, true, false]).unwrap();
        assert_eq!(m, expected);
    }

    #[test]
    fn char_experiment_separates_plm_from_control() {
        let (table, vocab) = letter_count_fixture(1500, 3);
        let alphabet = Alphabet::new("latin", ['a', 'e', 'q'], false).unwrap();
        let config = ProbeConfig {
            n_seeds: 2,
            train: TrainConfig {
                learning_rate: 1e-2,
                epochs: 8,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = run_char_experiment(&table, &vocab, &alphabet, &config).unwrap();
        assert_eq!(report.per_char.len(), 3);
        for c in &report.per_char {
            assert_eq!(c.f1_per_seed.len(), 2);
            let (m, _) = mean_std(&c.f1_per_seed);
            assert_eq!(m, c.f1_mean);
            assert!(c.f1_mean > 90.0, "{c:?}");
            assert!(c.control_f1.unwrap() < 70.0, "{c:?}");
        }
        assert!(report.failures.is_empty(), "{:?}", report.failures);
        assert_eq!(report.top_tokens.len(), 3);
        assert!(report
            .top_tokens
            .iter()
            .all(|(_, t)| t.len() == 10 && t.iter().all(|x| x.label)));
        let b = report.breakdowns.unwrap();
        assert!(!b.position.rows.is_empty());
        assert!(b.position.rows.iter().all(|r| r.n >= MIN_BIN_SIZE));
    }

    #[test]
    fn missing_character_is_a_recorded_failure() {
        let (table, vocab) = letter_count_fixture(300, 4);
        let alphabet = Alphabet::new("mixed", ['a', 'é'], false).unwrap();
        let config = ProbeConfig {
            n_seeds: 1,
            run_control: false,
            train: TrainConfig {
                epochs: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = run_char_experiment(&table, &vocab, &alphabet, &config).unwrap();
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].target, Some('é'));
        assert_eq!(report.per_char[1].f1_per_seed, Vec::<f64>::new());
        assert_eq!(report.per_char[0].f1_per_seed.len(), 1);
    }

    #[test]
    fn learning_rate_search_prefers_working_rates() {
        let (table, vocab) = letter_count_fixture(800, 5);
        let d = build_char_dataset(&vocab, 'e', false, &Markers::standard(), 1).unwrap();
        let s = split_grouped(&d, &vocab, 0.8, 1).unwrap();
        let train = TrainConfig {
            lr_grid: vec![1e-5, 1e-2],
            ..Default::default()
        };
        let search = tune_learning_rate(&table, &[(&d, &s)], &train, 0.1);
        assert_eq!(search.scores.len(), 2);
        assert_eq!(search.chosen, 1e-2, "{search:?}");
    }

    #[test]
    fn cached_splits_are_reused() {
        let (table, vocab) = letter_count_fixture(400, 6);
        let dir = tempfile::tempdir().unwrap();
        let alphabet = Alphabet::new("latin", ['a'], false).unwrap();
        let config = ProbeConfig {
            n_seeds: 1,
            run_control: false,
            cache_dir: Some(dir.path().to_path_buf()),
            train: TrainConfig {
                epochs: 1,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = run_char_experiment(&table, &vocab, &alphabet, &config).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let b = run_char_experiment(&table, &vocab, &alphabet, &config).unwrap();
        assert_eq!(a.per_char, b.per_char);
    }
}
