mod common;

use std::collections::BTreeSet;

use charprobe::bpe::{from_byte_level, tokenize_corpus, train_bpe, BpeTrainOptions, TokenizationScheme};
use charprobe::probe::{breakdowns, regressions, ScoredExample};
use charprobe::rng;
use charprobe::vocab::Markers;
use rand::Rng as _;

fn scored(
    vocab: &charprobe::vocab::Vocabulary,
    target: char,
    correct: impl Fn(usize, &mut rng::Rng) -> bool,
) -> Vec<ScoredExample> {
    let markers = Markers::standard();
    let mut r = rng::seeded(11);
    vocab
        .iter()
        .map(|e| {
            let pos = charprobe::probe::first_position(&e.surface, target, false, &markers);
            let label = pos.is_some();
            let ok = correct(pos.unwrap_or(0), &mut r);
            ScoredExample {
                token_id: e.id,
                target,
                label,
                prob: if ok == label { 0.9 } else { 0.1 },
            }
        })
        .collect()
}

#[test]
fn position_slope_is_flat_when_errors_ignore_position() {
    let vocab = common::random_words(20_000, 8);
    let markers = Markers::standard();
    let flat = scored(&vocab, 'e', |_, r| r.random_bool(0.8));
    let b = breakdowns(&flat, &vocab, &markers, false, 50);
    let fit = regressions(&b).position_recall.fit.unwrap();
    assert!(b.position.rows.len() >= 6, "{:?}", b.position);
    for row in &b.position.rows {
        assert!((row.score - 80.0).abs() < 8.0, "{row:?}");
    }
    assert!(fit.slope.abs() < 1.0 && fit.p_value > 0.01, "{fit:?}");

    let falling = scored(&vocab, 'e', |pos, r| r.random_bool((1.0 - 0.1 * pos as f64).max(0.05)));
    let fit = regressions(&breakdowns(&falling, &vocab, &markers, false, 50))
        .position_recall
        .fit
        .unwrap();
    assert!(fit.slope < -5.0 && fit.p_value < 0.01, "{fit:?}");
}

fn syllable_text(n_words: usize, seed: u64) -> String {
    const SYL: [&str; 12] = ["ka", "lo", "mi", "ten", "ra", "su", "ve", "dor", "pi", "an", "es", "tu"];
    let mut r = rng::seeded(seed);
    let mut out = String::new();
    for i in 0..n_words {
        let n = r.random_range(1..4);
        for _ in 0..n {
            out.push_str(SYL[r.random_range(0..SYL.len())]);
        }
        out.push(if i % 12 == 11 { '\n' } else { ' ' });
    }
    out
}

fn scheme() -> (TokenizationScheme, String) {
    let text = syllable_text(30_000, 1);
    let s = train_bpe(
        &text,
        &BpeTrainOptions {
            vocab_size: 600,
            min_frequency: 2,
        },
    )
    .unwrap();
    (s, text)
}

#[test]
fn split_fraction_tracks_rho() {
    let (plain, text) = scheme();
    let mut last = -1.0;
    for rho in [0.0, 0.05, 0.1, 0.2, 0.5] {
        let v = plain.clone().with_variability(rho, 3).unwrap();
        let out = tokenize_corpus(&v, &text).unwrap();
        let f = out.stats.split_fraction();
        assert!(out.stats.eligible > 5000, "{:?}", out.stats);
        assert!((f - rho).abs() <= 0.02, "rho {rho}: fraction {f}");
        assert!(f > last || rho == 0.0, "rho {rho}: fraction {f} after {last}");
        last = f;
        assert_eq!(out.detokenize(&v).unwrap(), text);
    }
}

#[test]
fn two_way_splits_match_token_pairs() {
    let (scheme, _) = scheme();
    let words: Vec<String> = syllable_text(200, 9).split_whitespace().map(str::to_string).collect();
    let decoded: Vec<(u32, String)> = scheme
        .tokens()
        .filter_map(|(id, t)| Some((id, String::from_utf8(from_byte_level(t)?).ok()?)))
        .collect();
    let alphabetic = |s: &str| {
        let core = s.strip_prefix(' ').unwrap_or(s);
        !core.is_empty() && core.chars().all(char::is_alphabetic)
    };
    let mut total = 0;
    for w in &words {
        let spaced = format!(" {w}");
        let expected: BTreeSet<(u32, u32)> = decoded
            .iter()
            .filter(|(_, l)| alphabetic(l) && l.len() < spaced.len() && spaced.starts_with(l.as_str()))
            .flat_map(|(li, l)| {
                let rest = &spaced[l.len()..];
                decoded
                    .iter()
                    .filter(move |(_, r)| r == rest && !r.starts_with(' ') && alphabetic(r))
                    .map(move |(ri, _)| (*li, *ri))
            })
            .collect();
        let got: BTreeSet<(u32, u32)> = scheme.two_way_splits(&spaced).into_iter().collect();
        assert_eq!(got, expected, "{w}");
        total += got.len();
    }
    assert!(total > 100, "{total}");
}
