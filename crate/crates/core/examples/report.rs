//! Runs two small character probes and merges them into one table.

use charprobe::cli::report::{merge_reports, render, ReportFile};
use charprobe::embedding::{make_control, EmbeddingTable};
use charprobe::probe::{run_char_experiment, ProbeConfig};
use charprobe::vocab::{Alphabet, VocabEntry, Vocabulary};

fn main() {
    let entries: Vec<VocabEntry> = (0..600u32)
        .map(|i| {
            let w: String = (0..4).map(|k| (b'a' + ((i / 6u32.pow(k)) % 6) as u8) as char).collect();
            VocabEntry {
                id: i,
                surface: w.clone(),
                lemma: w,
                frequency: 1 + i as u64,
            }
        })
        .collect();
    let vocab = Vocabulary::new(entries).unwrap();
    let mut rows = vec![0f32; 600 * 6];
    for e in vocab.iter() {
        for b in e.surface.bytes() {
            rows[e.id as usize * 6 + (b - b'a') as usize] = 1.0;
        }
    }
    let counts = EmbeddingTable::from_rows(600, 6, rows, "presence").unwrap();
    let random = make_control(600, 6, 9).unwrap();
    let alphabet = Alphabet::new("abc", "abc".chars(), false).unwrap();
    let mut config = ProbeConfig {
        n_seeds: 2,
        run_control: false,
        ..Default::default()
    };
    config.train.epochs = 10;
    config.train.lr_grid = vec![1e-2];
    let files: Vec<(String, ReportFile)> = [("presence", &counts), ("random", &random)]
        .into_iter()
        .map(|(name, t)| {
            let r = run_char_experiment(t, &vocab, &alphabet, &config).unwrap();
            (name.to_string(), ReportFile::CharProbe(r))
        })
        .collect();
    print!("{}", render(&merge_reports(&files)));
}
