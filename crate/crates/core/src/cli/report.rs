//! Report files written by the subcommands, and merging several of them
//! into mean/std tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::bpe::VariabilityStats as SplitStats;
use crate::corpus::{VariabilityStats, CATEGORIES};
use crate::probe::{mean_std, ExperimentReport, SubstringReport};
use crate::syntax::TaggerRun;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizationReport {
    pub rho: f64,
    pub seed: u64,
    pub lines: usize,
    pub tokens: usize,
    pub stats: SplitStats,
    pub split_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub stats: VariabilityStats,
    /// Targets removed as near-duplicates of another target.
    pub dropped_targets: Vec<String>,
    pub shards: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbowReport {
    pub rows: usize,
    pub dim: usize,
    pub epoch_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReportFile {
    CharProbe(ExperimentReport),
    SyntaxProbe(ExperimentReport),
    SubstringProbe(SubstringReport),
    Tagger(TaggerRuns),
    Tokenization(TokenizationReport),
    CorpusVariability(CorpusReport),
    Cbow(CbowReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerRuns {
    pub runs: Vec<TaggerRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharRow {
    pub char: char,
    /// Per-seed values pooled over every merged run.
    pub n_values: usize,
    pub f1_mean: f64,
    pub f1_std: Option<f64>,
    pub control_f1: Option<f64>,
    pub control_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelTable {
    pub kind: String,
    pub model: String,
    pub runs: usize,
    pub per_char: Vec<CharRow>,
    /// Mean over characters of the per-character means.
    pub f1_mean: f64,
    /// Deviation over (run, seed) of the character-averaged F1.
    pub f1_std: Option<f64>,
    pub control_f1: Option<f64>,
    pub control_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstringRow {
    pub model: String,
    pub runs: usize,
    pub f1_mean: f64,
    pub f1_std: Option<f64>,
    pub control_f1: Option<f64>,
    pub control_std: Option<f64>,
    pub majority_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityRow {
    pub source: String,
    pub n_words: usize,
    pub mean: [f64; 5],
    pub std: [f64; 5],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MergedReport {
    pub probes: Vec<ModelTable>,
    pub substring: Vec<SubstringRow>,
    pub taggers: Vec<TaggerRun>,
    pub tokenization: Vec<TokenizationReport>,
    pub variability: Vec<VariabilityRow>,
}

fn merge_probe(kind: &str, model: &str, runs: &[&ExperimentReport]) -> ModelTable {
    let mut order: Vec<char> = Vec::new();
    let mut plm: BTreeMap<char, Vec<f64>> = BTreeMap::new();
    let mut ctl: BTreeMap<char, Vec<f64>> = BTreeMap::new();
    let mut seed_avgs = Vec::new();
    let mut ctl_seed_avgs = Vec::new();
    for r in runs {
        for c in &r.per_char {
            if !order.contains(&c.char) {
                order.push(c.char);
            }
            plm.entry(c.char).or_default().extend(&c.f1_per_seed);
            ctl.entry(c.char).or_default().extend(&c.control_per_seed);
        }
        let per_seed = |pick: &dyn Fn(&crate::probe::CharResult) -> &Vec<f64>| -> Vec<f64> {
            let n = r.per_char.iter().map(|c| pick(c).len()).max().unwrap_or(0);
            (0..n)
                .filter_map(|s| {
                    let v: Vec<f64> = r.per_char.iter().filter_map(|c| pick(c).get(s).copied()).collect();
                    (!v.is_empty()).then(|| mean_std(&v).0)
                })
                .collect()
        };
        seed_avgs.extend(per_seed(&|c| &c.f1_per_seed));
        ctl_seed_avgs.extend(per_seed(&|c| &c.control_per_seed));
    }
    let per_char: Vec<CharRow> = order
        .iter()
        .map(|ch| {
            let (m, s) = mean_std(&plm[ch]);
            let (cm, cs) = mean_std(&ctl[ch]);
            CharRow {
                char: *ch,
                n_values: plm[ch].len(),
                f1_mean: m,
                f1_std: s,
                control_f1: (!ctl[ch].is_empty()).then_some(cm),
                control_std: cs,
            }
        })
        .collect();
    let means: Vec<f64> = per_char.iter().filter(|r| r.n_values > 0).map(|r| r.f1_mean).collect();
    let cmeans: Vec<f64> = per_char.iter().filter_map(|r| r.control_f1).collect();
    ModelTable {
        kind: kind.to_string(),
        model: model.to_string(),
        runs: runs.len(),
        per_char,
        f1_mean: mean_std(&means).0,
        f1_std: mean_std(&seed_avgs).1,
        control_f1: (!cmeans.is_empty()).then(|| mean_std(&cmeans).0),
        control_std: mean_std(&ctl_seed_avgs).1,
    }
}

/// Groups probe reports by (kind, model) and pools their per-seed values.
pub fn merge_reports(files: &[(String, ReportFile)]) -> MergedReport {
    let mut out = MergedReport::default();
    let mut probe_groups: Vec<((String, String), Vec<&ExperimentReport>)> = Vec::new();
    let mut sub_groups: Vec<(String, Vec<&SubstringReport>)> = Vec::new();
    for (source, f) in files {
        match f {
            ReportFile::CharProbe(r) | ReportFile::SyntaxProbe(r) => {
                let kind = if matches!(f, ReportFile::CharProbe(_)) {
                    "char_probe"
                } else {
                    "syntax_probe"
                };
                let key = (kind.to_string(), r.model.clone());
                match probe_groups.iter_mut().find(|(k, _)| *k == key) {
                    Some((_, v)) => v.push(r),
                    None => probe_groups.push((key, vec![r])),
                }
            }
            ReportFile::SubstringProbe(r) => match sub_groups.iter_mut().find(|(k, _)| *k == r.model) {
                Some((_, v)) => v.push(r),
                None => sub_groups.push((r.model.clone(), vec![r])),
            },
            ReportFile::Tagger(t) => out.taggers.extend(t.runs.iter().cloned()),
            ReportFile::Tokenization(t) => out.tokenization.push(t.clone()),
            ReportFile::CorpusVariability(c) => out.variability.push(VariabilityRow {
                source: source.clone(),
                n_words: c.stats.aggregate.n_words,
                mean: c.stats.aggregate.mean,
                std: c.stats.aggregate.std,
            }),
            ReportFile::Cbow(_) => {}
        }
    }
    out.probes = probe_groups
        .iter()
        .map(|((k, m), runs)| merge_probe(k, m, runs))
        .collect();
    out.substring = sub_groups
        .iter()
        .map(|(model, runs)| {
            let f1: Vec<f64> = runs.iter().flat_map(|r| r.f1_per_seed.iter().copied()).collect();
            let ctl: Vec<f64> = runs.iter().flat_map(|r| r.control_per_seed.iter().copied()).collect();
            let maj: Vec<f64> = runs.iter().flat_map(|r| r.majority_per_seed.iter().copied()).collect();
            let (m, s) = mean_std(&f1);
            let (cm, cs) = mean_std(&ctl);
            SubstringRow {
                model: model.clone(),
                runs: runs.len(),
                f1_mean: m,
                f1_std: s,
                control_f1: (!ctl.is_empty()).then_some(cm),
                control_std: cs,
                majority_f1: mean_std(&maj).0,
            }
        })
        .collect();
    out
}

fn pm(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{m:.2} ± {s:.2}"),
        (Some(m), None) => format!("{m:.2}"),
        _ => "-".into(),
    }
}

/// Plain-text tables for the terminal.
pub fn render(m: &MergedReport) -> String {
    let mut s = String::new();
    for t in &m.probes {
        let _ = writeln!(s, "{} {} ({} run(s))", t.kind, t.model, t.runs);
        let _ = writeln!(s, "| char | F1 | control |");
        let _ = writeln!(s, "|---|---|---|");
        for r in &t.per_char {
            let _ = writeln!(
                s,
                "| {} | {} | {} |",
                r.char,
                pm(Some(r.f1_mean), r.f1_std),
                pm(r.control_f1, r.control_std)
            );
        }
        let _ = writeln!(
            s,
            "| all | {} | {} |\n",
            pm(Some(t.f1_mean), t.f1_std),
            pm(t.control_f1, t.control_std)
        );
    }
    if !m.substring.is_empty() {
        let _ = writeln!(s, "| substring model | F1 | control | majority |\n|---|---|---|---|");
        for r in &m.substring {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.2} |",
                r.model,
                pm(Some(r.f1_mean), r.f1_std),
                pm(r.control_f1, r.control_std),
                r.majority_f1
            );
        }
        s.push('\n');
    }
    if !m.taggers.is_empty() {
        let _ = writeln!(
            s,
            "| tagger | dev wtd | dev macro | test wtd | test macro |\n|---|---|---|---|---|"
        );
        for t in &m.taggers {
            let f = |x: &Option<crate::neural::MulticlassMetrics>| {
                x.as_ref().map_or(("-".to_string(), "-".to_string()), |m| {
                    (format!("{:.2}", m.weighted_f1), format!("{:.2}", m.macro_f1))
                })
            };
            let (dw, dm) = f(&t.dev);
            let (tw, tm) = f(&t.test);
            let _ = writeln!(s, "| {} | {dw} | {dm} | {tw} | {tm} |", t.feature);
        }
        s.push('\n');
    }
    if !m.tokenization.is_empty() {
        let _ = writeln!(s, "| rho | seed | words | split fraction |\n|---|---|---|---|");
        for t in &m.tokenization {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.4} |",
                t.rho, t.seed, t.stats.words, t.split_fraction
            );
        }
        s.push('\n');
    }
    if !m.variability.is_empty() {
        let _ = writeln!(s, "| source | words | {} |", CATEGORIES.join(" | "));
        let _ = writeln!(s, "|---|---|{}", "---|".repeat(5));
        for v in &m.variability {
            let cells: Vec<String> = (0..5).map(|k| format!("{:.2} ± {:.2}", v.mean[k], v.std[k])).collect();
            let _ = writeln!(s, "| {} | {} | {} |", v.source, v.n_words, cells.join(" | "));
        }
    }
    s
}
