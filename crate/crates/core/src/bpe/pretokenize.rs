//! Splitting raw text into the pieces BPE merges never cross.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Piece<'a> {
    pub text: &'a str,
    /// An optional single space followed by a maximal run of letters.
    pub is_word: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Letter,
    Digit,
    Space,
    Other,
}

fn class(c: char) -> Class {
    if c.is_alphabetic() {
        Class::Letter
    } else if c.is_numeric() {
        Class::Digit
    } else if c.is_whitespace() {
        Class::Space
    } else {
        Class::Other
    }
}

fn run_end(text: &str, from: usize, cls: Class) -> usize {
    text[from..]
        .char_indices()
        .find(|&(_, c)| class(c) != cls)
        .map_or(text.len(), |(i, _)| from + i)
}

/// GPT-2 style pre-tokenization without the contraction rules. The last
/// space of a whitespace run joins the following non-space piece.
pub fn pre_tokenize(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let c = text[i..].chars().next().expect("in bounds");
        let mut start = i;
        if class(c) == Class::Space {
            let end = run_end(text, i, Class::Space);
            if end == text.len() {
                out.push(Piece {
                    text: &text[i..],
                    is_word: false,
                });
                break;
            }
            let (last_at, last) = text[i..end]
                .char_indices()
                .last()
                .map(|(k, c)| (i + k, c))
                .expect("non-empty run");
            if last_at > i {
                out.push(Piece {
                    text: &text[i..last_at],
                    is_word: false,
                });
            }
            if last != ' ' {
                out.push(Piece {
                    text: &text[last_at..end],
                    is_word: false,
                });
                i = end;
                continue;
            }
            start = last_at;
        }
        let body = if text[start..].starts_with(' ') {
            start + 1
        } else {
            start
        };
        let cls = class(text[body..].chars().next().expect("non-space follows"));
        let end = run_end(text, body, cls);
        out.push(Piece {
            text: &text[start..end],
            is_word: cls == Class::Letter,
        });
        i = end;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(s: &str) -> Vec<&str> {
        pre_tokenize(s).into_iter().map(|p| p.text).collect()
    }

    #[test]
    fn gpt2_shapes() {
        assert_eq!(
            texts("Hello  world\n\n the cats!! 123 ab"),
            ["Hello", " ", " world", "\n\n", " the", " cats", "!!", " 123", " ab"]
        );
        assert_eq!(texts("a  "), ["a", "  "]);
        assert_eq!(texts(" x"), [" x"]);
        assert_eq!(texts("\tx"), ["\t", "x"]);
        assert_eq!(texts(""), Vec::<&str>::new());
        assert_eq!(texts("naïve café"), ["naïve", " café"]);
    }

    #[test]
    fn word_flags() {
        let p = pre_tokenize("go, 4 it");
        let words: Vec<_> = p.iter().filter(|p| p.is_word).map(|p| p.text).collect();
        assert_eq!(words, ["go", " it"]);
    }

    proptest! {
        #[test]
        fn pieces_cover_text(text in "\\PC{0,60}") {
            let joined: String = texts(&text).concat();
            prop_assert_eq!(joined, text);
        }
    }
}
