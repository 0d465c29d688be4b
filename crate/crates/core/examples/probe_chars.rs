//! Probes letter-count embeddings for the vowels, with random controls.

use charprobe::embedding::EmbeddingTable;
use charprobe::probe::{run_char_experiment, ProbeConfig};
use charprobe::rng;
use charprobe::vocab::{Alphabet, VocabEntry, Vocabulary};
use rand::Rng as _;

fn words(n: usize, seed: u64) -> Vocabulary {
    let mut r = rng::seeded(seed);
    let mut seen = std::collections::HashSet::new();
    let mut entries = Vec::new();
    while entries.len() < n {
        let w: String = (0..r.random_range(2..9))
            .map(|_| (b'a' + r.random_range(0..26u8)) as char)
            .collect();
        if seen.insert(w.clone()) {
            entries.push(VocabEntry {
                id: entries.len() as u32,
                surface: w.clone(),
                lemma: w,
                frequency: r.random_range(1..1000),
            });
        }
    }
    Vocabulary::new(entries).unwrap()
}

fn main() {
    let vocab = words(2000, 1);
    let mut rows = vec![0f32; vocab.len() * 26];
    for e in vocab.iter() {
        for b in e.surface.bytes() {
            rows[e.id as usize * 26 + (b - b'a') as usize] += 1.0;
        }
    }
    let table = EmbeddingTable::from_rows(vocab.len(), 26, rows, "letter-counts").unwrap();
    let alphabet = Alphabet::new("vowels", "aeiou".chars(), false).unwrap();
    let mut config = ProbeConfig {
        n_seeds: 2,
        ..Default::default()
    };
    config.train.epochs = 20;
    let report = run_char_experiment(&table, &vocab, &alphabet, &config).unwrap();
    for c in &report.per_char {
        println!(
            "{}: F1 {:.2}  control {:.2}",
            c.char,
            c.f1_mean,
            c.control_f1.unwrap_or(f64::NAN)
        );
    }
    println!(
        "overall {:.2}  control {:.2}  lr {}",
        report.overall.f1_mean,
        report.overall.control_f1.unwrap_or(f64::NAN),
        report.learning_rate.chosen
    );
}
