//! Synthetic-store construction shared by integration tests.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use dataforge_core::store::{Store, TokenizerSpec};

/// Deterministic sentence-structured ASCII text of exactly `len` bytes.
/// Sentences start uppercase and end with `. `, so the sentence splitter
/// sees real boundaries; the tag/index prefix makes every document unique.
pub fn synth_text(tag: &str, index: usize, len: usize) -> String {
    assert!(len >= 16, "documents below 16 bytes are not useful here");
    let mut text = String::with_capacity(len);
    write!(text, "Doc {tag} {index}.").unwrap();
    let mut word = 0usize;
    while text.len() < len {
        let remaining = len - text.len();
        if remaining <= 2 {
            // Too little room for a fresh sentence: extend the last one.
            text.truncate(text.len() - 1);
            while text.len() < len - 1 {
                text.push('x');
            }
            text.push('.');
            break;
        }
        // A ~90-byte sentence, or whatever space remains.
        let sentence_len = remaining.min(90).max(3);
        text.push(' ');
        text.push(char::from(b'A' + (word % 26) as u8));
        word += 1;
        while text.len() < (len - remaining) + sentence_len {
            text.push(if text.len() % 7 == 0 { ' ' } else { 'q' });
        }
        // No trailing-whitespace sentences; close with a period.
        if text.ends_with(' ') {
            text.pop();
            text.push('q');
        }
        text.push('.');
    }
    text.truncate(len);
    if !text.ends_with('.') {
        text.pop();
        text.push('.');
    }
    assert_eq!(text.len(), len);
    text
}

/// Builds a byte-tokenizer store with the given (source, doc token
/// lengths) layout. Token length equals byte length.
pub fn build_store(dir: &Path, sources: &[(&str, &[usize])]) -> Store {
    let mut store = Store::create(dir, TokenizerSpec::ByteV1).expect("create store");
    for (source, lens) in sources {
        let jsonl = dir.join(format!("{source}.jsonl"));
        let mut f = std::io::BufWriter::new(std::fs::File::create(&jsonl).expect("create jsonl"));
        for (i, len) in lens.iter().enumerate() {
            let line = serde_json::json!({ "text": synth_text(source, i, *len) });
            writeln!(f, "{line}").expect("write line");
        }
        f.flush().unwrap();
        store.ingest_jsonl(&jsonl, source).expect("ingest");
    }
    store
}

/// `count` copies of `len`.
pub fn docs(count: usize, len: usize) -> Vec<usize> {
    vec![len; count]
}
