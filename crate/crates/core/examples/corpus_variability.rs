//! Counts the distinct tokenizations of target words and their near misses
//! in a small corpus.

use charprobe::bpe::TokenizationScheme;
use charprobe::corpus::{analyze_corpus, TargetSet, CATEGORIES};
use std::path::PathBuf;

fn main() {
    let fixture = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/gpt2_style");
    let scheme = TokenizationScheme::load(fixture.join("merges.txt"), fixture.join("vocab.json")).unwrap();
    let text = "The schematics were clear. Schematic drawings, a schematc sketch and \
                schematics again.\nThe schemtics of a schematic.";
    let dictionary = vec!["schematic".to_string(), "schematics".to_string()];
    let (targets, dropped) = TargetSet::new(&["schematic".to_string()], &dictionary).unwrap();
    println!("dropped targets: {dropped:?}");
    let (stats, _) = analyze_corpus(text, &targets, &scheme, 2).unwrap();
    for t in &stats.per_target {
        println!("{} ({} occurrences)", t.word, t.occurrences);
        for (name, n) in CATEGORIES.iter().zip(t.counts) {
            println!("  {name:<14} {n} tokenizations");
        }
    }
}
