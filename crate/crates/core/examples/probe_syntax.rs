//! Character probing from tag distributions alone. Tags here are a noisy
//! function of the first letter, so letters near the start are predictable.

use charprobe::probe::ProbeConfig;
use charprobe::rng;
use charprobe::syntax::{run_syntax_experiment, SyntaxFeatures, TagFeature, TagTable};
use charprobe::vocab::{Alphabet, VocabEntry, Vocabulary};
use rand::Rng as _;

fn main() {
    let mut r = rng::seeded(5);
    let entries: Vec<VocabEntry> = (0..1500u32)
        .map(|id| {
            let w: String = (0..r.random_range(3..7))
                .map(|_| (b'a' + r.random_range(0..6u8)) as char)
                .collect();
            VocabEntry {
                id,
                surface: w.clone(),
                lemma: format!("{w}{id}"),
                frequency: 1,
            }
        })
        .collect();
    let labels = |n: usize| (0..n).map(|i| format!("T{i}")).collect::<Vec<_>>();
    let mut pos = TagTable::new(TagFeature::Pos, labels(6));
    let mut ner = TagTable::new(TagFeature::Ner, labels(2));
    for e in &entries {
        let first = (e.surface.as_bytes()[0] - b'a') as usize;
        let mut p = vec![0.02f32; 6];
        p[first] = 0.9;
        pos.insert(e.id, p);
        let flag = e.surface.contains('b') as usize;
        ner.insert(e.id, if flag == 1 { vec![0.2, 0.8] } else { vec![0.8, 0.2] });
    }
    let vocab = Vocabulary::new(entries).unwrap();
    let features = SyntaxFeatures::new(vec![ner, pos]).unwrap();
    let alphabet = Alphabet::new("first-six", "abcdef".chars(), false).unwrap();
    let mut config = ProbeConfig {
        n_seeds: 2,
        ..Default::default()
    };
    config.train.epochs = 10;
    config.train.lr_grid = vec![1e-3, 1e-2];
    let report = run_syntax_experiment(&features, &vocab, &alphabet, &config).unwrap();
    println!("feature order {:?}", report.feature_order.unwrap_or_default());
    for c in &report.per_char {
        println!(
            "{}: F1 {:.2}  permuted control {:.2}",
            c.char,
            c.f1_mean,
            c.control_f1.unwrap_or(f64::NAN)
        );
    }
}
