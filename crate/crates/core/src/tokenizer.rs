//! Byte-level tokenizer.
//!
//! Each UTF-8 byte maps to its own id (0–255), with BOS/EOS/PAD reserved
//! above the byte range for a vocabulary of 259. Token counts therefore
//! equal byte counts, which is all the downstream packing and windowing
//! procedures depend on. `tokenize` never inserts framing tokens; padding
//! is the packer's job.

use thiserror::Error;

pub type TokenId = u32;

pub const BOS: TokenId = 256;
pub const EOS: TokenId = 257;
pub const PAD: TokenId = 258;
pub const BYTE_VOCAB_SIZE: u32 = 259;
pub const BYTE_TOKENIZER_ID: &str = "byte-v1";

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("token {token} at position {index} is not a text byte")]
    NonTextToken { index: usize, token: TokenId },
    #[error("token bytes are not valid UTF-8 at byte {valid_up_to}")]
    InvalidUtf8 { valid_up_to: usize },
}

/// Byte tokenization: one token per UTF-8 byte.
pub fn tokenize(text: &str) -> Vec<TokenId> {
    text.bytes().map(TokenId::from).collect()
}

/// Inverse of [`tokenize`]. Fails on reserved ids or malformed UTF-8.
pub fn detokenize(tokens: &[TokenId]) -> Result<String, TokenizerError> {
    let bytes = to_bytes(tokens)?;
    String::from_utf8(bytes)
        .map_err(|e| TokenizerError::InvalidUtf8 { valid_up_to: e.utf8_error().valid_up_to() })
}

/// Decodes a token slice that may have been cut mid-character, dropping an
/// incomplete trailing character (at most 3 bytes). Errors only if the
/// bytes are malformed elsewhere.
pub fn detokenize_prefix(tokens: &[TokenId]) -> Result<String, TokenizerError> {
    let mut bytes = to_bytes(tokens)?;
    match String::from_utf8(bytes) {
        Ok(s) => Ok(s),
        Err(e) => {
            let err = e.utf8_error();
            let valid = err.valid_up_to();
            // error_len() == None means the tail is an incomplete sequence.
            if err.error_len().is_none() {
                bytes = e.into_bytes();
                bytes.truncate(valid);
                Ok(String::from_utf8(bytes).expect("prefix validated"))
            } else {
                Err(TokenizerError::InvalidUtf8 { valid_up_to: valid })
            }
        }
    }
}

fn to_bytes(tokens: &[TokenId]) -> Result<Vec<u8>, TokenizerError> {
    tokens
        .iter()
        .enumerate()
        .map(|(index, &token)| {
            u8::try_from(token).map_err(|_| TokenizerError::NonTextToken { index, token })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text() {
        assert!(tokenize("").is_empty());
    }

    #[test]
    fn ascii_identity() {
        assert_eq!(tokenize("AB"), vec![65, 66]);
    }

    #[test]
    fn multibyte_decomposes_to_utf8_bytes() {
        // "é" is 0xC3 0xA9 in UTF-8.
        assert_eq!(tokenize("é"), vec![195, 169]);
    }

    #[test]
    fn round_trip() {
        let text = "héllo, wörld — 日本語";
        assert_eq!(detokenize(&tokenize(text)).unwrap(), text);
    }

    #[test]
    fn reserved_ids_do_not_decode() {
        assert!(matches!(
            detokenize(&[65, PAD]),
            Err(TokenizerError::NonTextToken { index: 1, token: PAD })
        ));
    }

    #[test]
    fn prefix_decode_drops_cut_character() {
        let tokens = tokenize("ab日"); // 2 + 3 bytes
        let cut = &tokens[..4]; // mid-character
        assert_eq!(detokenize_prefix(cut).unwrap(), "ab");
        assert!(detokenize(cut).is_err());
    }

    #[test]
    fn prefix_decode_still_rejects_interior_garbage() {
        // 0xFF is never valid UTF-8.
        assert!(detokenize_prefix(&[0xFF, 65]).is_err());
    }
}
