//! Trains a POS tagger on embeddings from a tiny CoNLL corpus and tags the
//! whole vocabulary.

use charprobe::embedding::EmbeddingTable;
use charprobe::neural::TrainConfig;
use charprobe::syntax::{format_tags, parse_conll, tag_vocabulary, train_tagger, TagFeature};
use charprobe::vocab::{Markers, VocabEntry, Vocabulary};

const CONLL: &str = "\
-DOCSTART- -X- -X- O

the DT B-NP O
cat NN I-NP O
sat VBD B-VP O

a DT B-NP O
dog NN I-NP O
ran VBD B-VP O

the DT B-NP O
dog NN I-NP O
sat VBD B-VP O
";

fn main() {
    let words = ["the", "a", "cat", "dog", "sat", "ran"];
    let vocab = Vocabulary::new(
        words
            .iter()
            .enumerate()
            .map(|(i, w)| VocabEntry {
                id: i as u32,
                surface: w.to_string(),
                lemma: w.to_string(),
                frequency: 1,
            })
            .collect(),
    )
    .unwrap();
    // one cluster per word class
    let rows: Vec<f32> = [
        [1., 0., 0.],
        [0.9, 0.1, 0.],
        [0., 1., 0.],
        [0.1, 0.9, 0.],
        [0., 0., 1.],
        [0., 0.1, 0.9],
    ]
    .concat();
    let table = EmbeddingTable::from_rows(6, 3, rows, "toy").unwrap();
    let sentences = parse_conll(CONLL).unwrap();
    let config = TrainConfig {
        epochs: 200,
        batch_size: 4,
        learning_rate: 1e-2,
        dropout: 0.0,
        ..Default::default()
    };
    let (model, run) = train_tagger(
        &table,
        &vocab,
        &Markers::standard(),
        &sentences,
        None,
        Some(&sentences),
        TagFeature::Pos,
        &config,
    )
    .unwrap();
    println!(
        "labels {:?}, test accuracy {:.2}",
        run.labels,
        run.test.unwrap().accuracy
    );
    print!("{}", format_tags(&[tag_vocabulary(&model, &table, &vocab)]));
}
