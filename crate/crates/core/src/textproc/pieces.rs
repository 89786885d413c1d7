/// Subword-style splitter used only to estimate how many tokens a spelled-out
/// schema phrase costs under a typical sentencepiece tokenizer.
///
/// Each whitespace-separated word is cut at boundaries between letters,
/// digits and punctuation; every punctuation character is its own piece and
/// the first piece of a word carries the `▁` word-start marker. Pieces longer
/// than `max_piece_chars` (when set) are chunked further.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PieceSplitter {
    pub max_piece_chars: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Letter,
    Digit,
    Other,
}

fn class(c: char) -> Class {
    if c.is_numeric() {
        Class::Digit
    } else if c.is_alphabetic() {
        Class::Letter
    } else {
        Class::Other
    }
}

impl PieceSplitter {
    pub fn split(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            let mut runs: Vec<String> = Vec::new();
            let mut prev: Option<Class> = None;
            for c in word.chars() {
                let cls = class(c);
                if prev == Some(cls) && cls != Class::Other {
                    runs.last_mut().expect("run exists").push(c);
                } else {
                    runs.push(c.to_string());
                }
                prev = Some(cls);
            }
            let mut first = true;
            for run in runs {
                let chars: Vec<char> = run.chars().collect();
                let step = self.max_piece_chars.unwrap_or(chars.len()).max(1);
                for chunk in chars.chunks(step) {
                    let mut piece: String = chunk.iter().collect();
                    if first {
                        piece.insert(0, '▁');
                        first = false;
                    }
                    out.push(piece);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_g_related_technique_is_five_pieces() {
        let p = PieceSplitter::default().split("6G-related technique");
        assert_eq!(p, vec!["▁6", "G", "-", "related", "▁technique"]);
    }

    #[test]
    fn single_word_is_one_piece() {
        assert_eq!(PieceSplitter::default().split("Benefits").len(), 1);
        assert!(PieceSplitter::default().split("   ").is_empty());
    }

    #[test]
    fn chunking_long_runs() {
        let p = PieceSplitter { max_piece_chars: Some(4) }.split("beamforming");
        assert_eq!(p, vec!["▁beam", "form", "ing"]);
    }
}
