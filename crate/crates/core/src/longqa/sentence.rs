//! Rule-based sentence splitting.
//!
//! A boundary falls after `.`, `?` or `!` (plus any closing quotes or
//! brackets) when whitespace follows and the next visible character opens
//! a sentence (uppercase letter, digit, or opening quote/bracket).
//! Whitespace attaches to the *following* sentence, so concatenating the
//! pieces reproduces the input byte for byte — the property subpart
//! selection depends on.

const TERMINATORS: [char; 3] = ['.', '?', '!'];
const CLOSERS: [char; 6] = ['"', '\'', '”', '’', ')', ']'];
const OPENERS: [char; 6] = ['"', '\'', '“', '‘', '(', '['];

/// Splits text into sentences whose concatenation equals the input.
pub fn split_sentences(text: &str) -> Vec<&str> {
    if text.is_empty() {
        return Vec::new();
    }

    let mut cuts = Vec::new();
    let mut iter = text.char_indices().peekable();
    while let Some((_, c)) = iter.next() {
        if !TERMINATORS.contains(&c) {
            continue;
        }
        // Absorb closing quotes/brackets after the terminator.
        let mut rest = iter.clone();
        let mut cut_at = None;
        while let Some(&(i, c)) = rest.peek() {
            if CLOSERS.contains(&c) {
                rest.next();
            } else {
                cut_at = Some(i);
                break;
            }
        }
        let Some(cut_at) = cut_at else { continue };

        // Whitespace must follow, then a sentence opener.
        let mut saw_ws = false;
        let mut opener = false;
        for (_, c) in rest {
            if c.is_whitespace() {
                saw_ws = true;
            } else {
                opener = c.is_uppercase() || c.is_ascii_digit() || OPENERS.contains(&c);
                break;
            }
        }
        if saw_ws && opener {
            cuts.push(cut_at);
        }
    }

    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut prev = 0;
    for cut in cuts {
        out.push(&text[prev..cut]);
        prev = cut;
    }
    out.push(&text[prev..]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_attaches_to_the_following_sentence() {
        assert_eq!(split_sentences("A. B."), vec!["A.", " B."]);
    }

    #[test]
    fn empty_text_has_no_sentences() {
        assert!(split_sentences("").is_empty());
    }

    #[test]
    fn no_terminator_is_one_sentence() {
        assert_eq!(split_sentences("no terminator here"), vec!["no terminator here"]);
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        // "e.g. lowercase" keeps going; "See Fig. 3" splits before a digit.
        assert_eq!(split_sentences("This is e.g. an example."), vec!["This is e.g. an example."]);
        assert_eq!(split_sentences("See Fig. 3 for details."), vec!["See Fig.", " 3 for details."]);
    }

    #[test]
    fn closing_quote_stays_with_its_sentence() {
        let text = "He said \"Stop.\" Then he left.";
        assert_eq!(split_sentences(text), vec!["He said \"Stop.\"", " Then he left."]);
    }

    #[test]
    fn question_and_exclamation_terminate() {
        let text = "Really? Yes! Good.";
        assert_eq!(split_sentences(text), vec!["Really?", " Yes!", " Good."]);
    }

    #[test]
    fn concatenation_is_lossless() {
        let texts = [
            "A. B. C.",
            "Dr. Smith went home. The (quick) fox!  \"Hm?\" No.",
            "multi\nline. Next\tline. ok",
            "Ünïcödé sentences. Ärger folgt! 'Quoted start.' End",
        ];
        for text in texts {
            let joined: String = split_sentences(text).concat();
            assert_eq!(joined, text);
        }
    }
}
