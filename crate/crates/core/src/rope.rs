//! RoPE base-frequency extension.
//!
//! When the training context grows from `T0` to `T`, the rotary-embedding
//! base must grow so the slowest rotation still spans the window. The
//! scaling law here is the closed form `base(T) = (T / 2π)^κ` with the
//! exponent anchored at the original configuration,
//! `κ = ln(base0) / ln(T0 / 2π)`, which makes `base(T0) = base0` an exact
//! fixed point. For the 10,000 @ 4,096 starting point this reproduces the
//! published extended bases 514,640 (64K) and 3,691,950 (256K) to within
//! a few parts in 10⁵; the published integers are also carried verbatim so
//! downstream manifests can be bit-faithful while the computed value is
//! reported alongside for audit.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RopeError {
    #[error("base0 must exceed 1 (got {0})")]
    BadBase(f64),
    #[error("original context length must exceed 2π tokens (got {0})")]
    BadContext(f64),
    #[error("target context {target} is shorter than the original {original}; shrinking context is out of scope")]
    ShrinkingContext { target: u64, original: u64 },
}

/// Original RoPE configuration plus optional published constants for
/// specific targets.
#[derive(Debug, Clone)]
pub struct RopeConfig {
    pub base0: f64,
    pub original_context: u64,
    pub kappa: f64,
    /// target context length → published base, returned verbatim when the
    /// target matches.
    pub published: BTreeMap<u64, u64>,
}

impl RopeConfig {
    pub fn new(base0: f64, original_context: u64) -> Result<RopeConfig, RopeError> {
        Ok(RopeConfig {
            base0,
            original_context,
            kappa: derive_kappa(base0, original_context as f64)?,
            published: BTreeMap::new(),
        })
    }

    /// The 10,000 @ 4,096 configuration with the published 64K/256K bases.
    pub fn instella() -> RopeConfig {
        let mut config = RopeConfig::new(10_000.0, 4_096).expect("valid constants");
        config.published.insert(65_536, 514_640);
        config.published.insert(262_144, 3_691_950);
        config
    }
}

/// The unique exponent κ with `base0 = (T0 / 2π)^κ`.
pub fn derive_kappa(base0: f64, original_context: f64) -> Result<f64, RopeError> {
    if !(base0 > 1.0) {
        return Err(RopeError::BadBase(base0));
    }
    if !(original_context > TAU) {
        return Err(RopeError::BadContext(original_context));
    }
    Ok(base0.ln() / (original_context / TAU).ln())
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtendedBase {
    pub target_context: u64,
    pub kappa: f64,
    pub computed: f64,
    /// `round(computed)` — the integer a config file would carry when no
    /// published constant exists.
    pub rounded: u64,
    /// Published constant for this target, when one is on record. Callers
    /// wanting bit-faithful manifests should prefer it; `computed` stays
    /// available for audit.
    pub published: Option<u64>,
}

impl ExtendedBase {
    /// The value to put in a config: published when available, else rounded.
    pub fn effective(&self) -> u64 {
        self.published.unwrap_or(self.rounded)
    }
}

/// Extends the base frequency to a target context length.
pub fn extend_base(target_context: u64, config: &RopeConfig) -> Result<ExtendedBase, RopeError> {
    if target_context < config.original_context {
        return Err(RopeError::ShrinkingContext {
            target: target_context,
            original: config.original_context,
        });
    }
    let computed = (target_context as f64 / TAU).powf(config.kappa);
    Ok(ExtendedBase {
        target_context,
        kappa: config.kappa,
        computed,
        rounded: computed.round() as u64,
        published: config.published.get(&target_context).copied(),
    })
}
