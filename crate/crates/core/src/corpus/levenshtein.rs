//! Edit distances over characters.

/// Full dynamic-programming Levenshtein distance.
pub fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Distance when it is at most one, checked along the single alignment a
/// distance-one edit can take.
pub fn within_one(a: &[char], b: &[char]) -> Option<u8> {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    match long.len() - short.len() {
        0 => {
            let mut diff = short.iter().zip(long).filter(|(x, y)| x != y);
            match (diff.next(), diff.next()) {
                (None, _) => Some(0),
                (Some(_), None) => Some(1),
                _ => None,
            }
        }
        1 => {
            let i = short.iter().zip(long).position(|(x, y)| x != y).unwrap_or(short.len());
            (short[i..] == long[i + 1..]).then_some(1)
        }
        _ => None,
    }
}
