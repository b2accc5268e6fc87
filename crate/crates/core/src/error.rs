//! Crate-level error type.
//!
//! Each subsystem defines its own error enum; this wrapper exists so the
//! CLI and the recipe driver can funnel everything into one `Result` and
//! map it to an exit code (1 for validation failures, 2 for I/O).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Store(#[from] crate::store::StoreError),
    #[error(transparent)]
    Pack(#[from] crate::pack::PackError),
    #[error(transparent)]
    Mixture(#[from] crate::mixture::MixtureError),
    #[error(transparent)]
    Batch(#[from] crate::batch::BatchError),
    #[error(transparent)]
    Rope(#[from] crate::rope::RopeError),
    #[error(transparent)]
    Math(#[from] crate::mathgen::MathError),
    #[error(transparent)]
    LongQa(#[from] crate::longqa::LongQaError),
    #[error(transparent)]
    Ckpt(#[from] crate::ensemble::CkptError),
    #[error(transparent)]
    Tokenizer(#[from] crate::tokenizer::TokenizerError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl From<std::io::Error> for Error {
    fn from(source: std::io::Error) -> Self {
        Error::Io { context: "i/o error".into(), source }
    }
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    /// Exit code contract: 1 for validation errors, 2 for I/O errors.
    /// An error counts as I/O if any cause in its chain is `std::io::Error`.
    pub fn exit_code(&self) -> i32 {
        let mut cur: Option<&(dyn std::error::Error + 'static)> = Some(self);
        while let Some(e) = cur {
            if e.downcast_ref::<std::io::Error>().is_some() {
                return 2;
            }
            cur = e.source();
        }
        1
    }
}
