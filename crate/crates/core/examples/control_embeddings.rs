//! Writes a random control table, reads it back and checks it is seeded.

use charprobe::embedding::{load_embeddings, make_control, write_embeddings};

fn main() {
    let dir = std::env::temp_dir().join(format!("charprobe-control-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("control.npy");
    let table = make_control(1000, 64, 42).unwrap();
    write_embeddings(&table, &path).unwrap();
    let back = load_embeddings(&path).unwrap();
    assert_eq!(back.as_slice(), make_control(1000, 64, 42).unwrap().as_slice());
    let mean = back.as_slice().iter().map(|&x| x as f64).sum::<f64>() / back.as_slice().len() as f64;
    println!(
        "{} x {} control at {}, control flag {}, mean {mean:.4}",
        back.vocab_size(),
        back.dim(),
        path.display(),
        back.is_control()
    );
    std::fs::remove_dir_all(&dir).unwrap();
}
