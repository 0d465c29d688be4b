//! Trains a small byte-level BPE and shows how variability re-splits words.

use charprobe::bpe::{tokenize_corpus, train_bpe, BpeTrainOptions};

fn main() {
    let text = "the schematic shows schematics of the machine\n".repeat(50)
        + &"machines and schemas are shown in the schematic\n".repeat(50);
    let scheme = train_bpe(
        &text,
        &BpeTrainOptions {
            vocab_size: 320,
            min_frequency: 2,
        },
    )
    .unwrap();
    let show = |ids: &[u32]| {
        ids.iter()
            .map(|&i| scheme.token(i).unwrap().to_string())
            .collect::<Vec<_>>()
            .join(" | ")
    };
    println!("plain: {}", show(&scheme.encode(" schematics machines").unwrap()));
    for (a, b) in scheme.two_way_splits(" schematic") {
        println!(
            "split of schematic: {} + {}",
            scheme.token(a).unwrap(),
            scheme.token(b).unwrap()
        );
    }
    for rho in [0.1, 0.5] {
        let v = scheme.clone().with_variability(rho, 7).unwrap();
        let out = tokenize_corpus(&v, &text).unwrap();
        assert_eq!(out.detokenize(&v).unwrap(), text);
        println!(
            "rho {rho}: split fraction {:.3}, {} tokens, first line: {}",
            out.stats.split_fraction(),
            out.n_tokens(),
            show(&out.lines[0])
        );
    }
}
