//! Derives a script from a vocabulary and filters the vocabulary to it.

use charprobe::vocab::{derive_alphabet, filter_alphabetic, parse_vocab, DeriveOptions, Markers};

fn main() {
    let vocab = parse_vocab(
        "0\tĠhund\thund\t9\n1\tund\tund\t8\n2\tĠrund\trund\t7\n3\tĠhunde\thunde\t6\n4\tüber\tüber\t5\n5\tĠgrün\tgrün\t4\n6\tĠbrüder\tbrüder\t3\n7\t42\t42\t2\n8\t##ße\tße\t1\n",
    )
    .unwrap();
    let opts = DeriveOptions {
        min_tokens: 2,
        script_name: "german".into(),
        ..Default::default()
    };
    let alphabet = derive_alphabet(&vocab, &opts).unwrap();
    println!("characters in at least 2 tokens: {:?}", alphabet.characters());
    let kept = filter_alphabetic(&vocab, &alphabet, &Markers::standard());
    println!(
        "tokens written only in that script: {:?}",
        kept.iter().map(|e| &e.surface).collect::<Vec<_>>()
    );
}
