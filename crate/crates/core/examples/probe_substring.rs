//! Substring probing on letter-count embeddings: is `u` inside `v`?

use charprobe::embedding::EmbeddingTable;
use charprobe::probe::{run_substring_experiment, ProbeConfig};
use charprobe::rng;
use charprobe::vocab::{VocabEntry, Vocabulary};
use rand::seq::IndexedRandom;
use rand::Rng as _;

fn main() {
    let mut r = rng::seeded(3);
    let stems: Vec<String> = (0..40)
        .map(|_| {
            (0..r.random_range(2..5))
                .map(|_| (b'a' + r.random_range(0..26u8)) as char)
                .collect()
        })
        .collect();
    let mut seen = std::collections::HashSet::new();
    let mut entries = Vec::new();
    while entries.len() < 600 {
        let w: String = (0..r.random_range(1..4))
            .map(|_| stems.choose(&mut r).unwrap().as_str())
            .collect();
        if seen.insert(w.clone()) {
            entries.push(VocabEntry {
                id: entries.len() as u32,
                surface: w.clone(),
                lemma: w,
                frequency: 1,
            });
        }
    }
    let vocab = Vocabulary::new(entries).unwrap();
    let mut rows = vec![0f32; vocab.len() * 26];
    for e in vocab.iter() {
        for b in e.surface.bytes() {
            rows[e.id as usize * 26 + (b - b'a') as usize] += 1.0;
        }
    }
    let table = EmbeddingTable::from_rows(vocab.len(), 26, rows, "letter-counts").unwrap();
    let mut config = ProbeConfig {
        n_seeds: 2,
        ..Default::default()
    };
    config.train.epochs = 30;
    config.train.batch_size = 32;
    let report = run_substring_experiment(&table, &vocab, &config).unwrap();
    println!(
        "F1 {:.2}  control {:.2}  majority {:.2}  pairs per seed {:?}",
        report.f1_mean,
        report.control_f1.unwrap_or(f64::NAN),
        report.majority_f1,
        report.n_examples_per_seed
    );
}
