//! Word-level CBOW on a toy corpus where two word families share contexts.

use charprobe::cbow::{train_cbow, CbowConfig, WordScheme};

fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f32]| v.iter().map(|x| x * x).sum::<f32>().sqrt();
    dot / (norm(a) * norm(b))
}

fn main() {
    let mut text = String::new();
    for i in 0..400 {
        let animal = ["cat", "dog"][i % 2];
        let fruit = ["apple", "pear"][i % 2];
        text.push_str(&format!(
            "the {animal} runs and the {animal} sleeps\nwe eat a {fruit} with a ripe {fruit}\n"
        ));
    }
    let (words, lines) = WordScheme::tokenize_corpus(&text);
    let config = CbowConfig {
        dim: 20,
        epochs: 5,
        min_count: 1,
        subsample: 0.0,
        threads: 1,
        ..Default::default()
    };
    let model = train_cbow(&lines, &config).unwrap();
    let id = |w: &str| (0..words.len() as u32).find(|&i| words.surface(i) == Some(w)).unwrap();
    let v = |w: &str| model.vector(id(w)).unwrap();
    println!("cos(cat, dog)   = {:.3}", cosine(v("cat"), v("dog")));
    println!("cos(cat, apple) = {:.3}", cosine(v("cat"), v("apple")));
}
