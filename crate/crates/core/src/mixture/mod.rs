//! Declarative data mixtures.
//!
//! A [`MixtureSpec`] lists (source, bucket, fraction) entries whose exact
//! rational fractions sum to 1, plus a token budget. Planning turns
//! fractions into integer token targets with largest-remainder rounding
//! (targets sum to the budget exactly); realization consumes store
//! documents through the bucket's packing regime until each entry meets
//! its target. The built-in specs encode the two continued-pre-training
//! stages and the long-SFT mixture, with short:long token ratios of
//! 37:63, 38:62 and 40:60 respectively.

mod realize;

pub use realize::{realize_mixture, RealizeConfig, RealizedMixture};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::longqa::LongQaError;
use crate::pack::PackError;
use crate::store::{DocId, StoreError};

/// Window length of the 64K long bucket.
pub const LONG_64K: usize = 65_536;
/// Window length of the 256K long bucket.
pub const LONG_256K: usize = 262_144;

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Pack(#[from] PackError),
    #[error(transparent)]
    LongQa(#[from] LongQaError),
    #[error("invalid mixture spec: {0}")]
    BadSpec(String),
    #[error("fractions sum to {sum}, not 1 (off by {deficit})")]
    FractionSum { sum: String, deficit: String },
    #[error("sources exhausted before targets were met:\n{}", format_shortfalls(.shortfalls))]
    PartialPlan { shortfalls: Vec<EntryShortfall> },
    #[error("unknown recipe {0:?} (expected instella-long-stage1, instella-long-stage2, or instella-long-sft)")]
    UnknownRecipe(String),
    #[error("mixture i/o: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn format_shortfalls(shortfalls: &[EntryShortfall]) -> String {
    shortfalls
        .iter()
        .map(|s| {
            format!(
                "  {} [{}]: realized {} of {} tokens (short {})",
                s.source, s.bucket, s.realized_tokens, s.target_tokens, s.shortfall
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Serialize)]
pub struct EntryShortfall {
    pub source: String,
    pub bucket: Bucket,
    pub target_tokens: u64,
    pub realized_tokens: u64,
    pub shortfall: u64,
}

/// Exact fraction, serialized as a string (`"3/10"`, `"0.3"`, or `"1"`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Frac(Ratio<i64>);

impl Frac {
    pub fn new(num: i64, den: i64) -> Frac {
        Frac(Ratio::new(num, den))
    }

    pub fn percent(p: i64) -> Frac {
        Frac(Ratio::new(p, 100))
    }

    pub fn zero() -> Frac {
        Frac(Ratio::new(0, 1))
    }

    pub fn one() -> Frac {
        Frac(Ratio::new(1, 1))
    }

    pub fn ratio(&self) -> Ratio<i64> {
        self.0
    }

    pub fn to_f64(&self) -> f64 {
        *self.0.numer() as f64 / *self.0.denom() as f64
    }
}

impl fmt::Display for Frac {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Frac {
    type Err = String;

    fn from_str(s: &str) -> Result<Frac, String> {
        let s = s.trim();
        if let Some((num, den)) = s.split_once('/') {
            let num: i64 = num.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
            let den: i64 = den.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
            if den == 0 {
                return Err(format!("zero denominator in {s:?}"));
            }
            return Ok(Frac(Ratio::new(num, den)));
        }
        if let Some((whole, frac)) = s.split_once('.') {
            let whole: i64 = if whole.is_empty() {
                0
            } else {
                whole.parse().map_err(|_| format!("bad number {s:?}"))?
            };
            if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(format!("bad decimal {s:?}"));
            }
            let scale = 10i64
                .checked_pow(frac.len() as u32)
                .ok_or(format!("too many decimals in {s:?}"))?;
            let frac_value: i64 = frac.parse().map_err(|_| format!("bad decimal {s:?}"))?;
            return Ok(Frac(Ratio::new(whole * scale + frac_value, scale)));
        }
        let whole: i64 = s.parse().map_err(|_| format!("bad number {s:?}"))?;
        Ok(Frac(Ratio::from_integer(whole)))
    }
}

impl Serialize for Frac {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Frac {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Frac, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    /// Short documents, concat-truncate packed at the stage length.
    Short,
    /// Documents of at least 64K tokens, cut into 64K windows.
    Long64k,
    /// Documents of at least 256K tokens, cut into 256K windows.
    Long256k,
    /// Short instruction samples, pack-and-pad at the stage length.
    SftShort,
    /// Synthesized long-context QA samples, pack-and-pad.
    SftLong,
}

impl Bucket {
    pub fn is_short_side(self) -> bool {
        matches!(self, Bucket::Short | Bucket::SftShort)
    }

    pub fn is_sft(self) -> bool {
        matches!(self, Bucket::SftShort | Bucket::SftLong)
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Bucket::Short => "short",
            Bucket::Long64k => "long64k",
            Bucket::Long256k => "long256k",
            Bucket::SftShort => "sft_short",
            Bucket::SftLong => "sft_long",
        };
        write!(f, "{name}")
    }
}

/// How an SFT entry turns documents into instruction samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftKind {
    /// Each document is one sample (ingested instruction corpora).
    Plain,
    /// One long document per sample with a teacher QA appended.
    SingleDoc,
    /// Short documents concatenated to 128K with one member's QA appended.
    Concat,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub source: String,
    pub bucket: Bucket,
    pub fraction: Frac,
    /// Sample synthesis for SFT buckets; defaults to `plain` for
    /// `sft_short` and `single_doc` for `sft_long`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sft_kind: Option<SftKind>,
}

impl MixtureEntry {
    pub fn new(source: &str, bucket: Bucket, fraction: Frac) -> MixtureEntry {
        MixtureEntry { source: source.into(), bucket, fraction, sft_kind: None }
    }

    pub fn with_kind(mut self, kind: SftKind) -> MixtureEntry {
        self.sft_kind = Some(kind);
        self
    }

    pub fn effective_sft_kind(&self) -> SftKind {
        self.sft_kind.unwrap_or(match self.bucket {
            Bucket::SftLong => SftKind::SingleDoc,
            _ => SftKind::Plain,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub name: String,
    pub entries: Vec<MixtureEntry>,
    pub token_budget: u64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn validate(&self) -> Result<(), MixtureError> {
        if self.token_budget < 1 {
            return Err(MixtureError::BadSpec("token_budget must be >= 1".into()));
        }
        if self.entries.is_empty() {
            return Err(MixtureError::BadSpec("no entries".into()));
        }
        for e in &self.entries {
            if e.fraction < Frac::zero() {
                return Err(MixtureError::BadSpec(format!(
                    "negative fraction {} for {}",
                    e.fraction, e.source
                )));
            }
        }
        let sum: Ratio<i64> = self.entries.iter().map(|e| e.fraction.ratio()).sum();
        if sum != Ratio::from_integer(1) {
            let deficit = Ratio::from_integer(1) - sum;
            return Err(MixtureError::FractionSum {
                sum: sum.to_string(),
                deficit: deficit.to_string(),
            });
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<MixtureSpec, MixtureError> {
        let data = std::fs::read(path)
            .map_err(|source| MixtureError::Io { path: path.to_path_buf(), source })?;
        let spec: MixtureSpec = serde_json::from_slice(&data)
            .map_err(|e| MixtureError::BadSpec(format!("{}: {e}", path.display())))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Integer token targets per entry: `round(fraction · budget)` with
/// largest-remainder correction so the targets sum to the budget exactly.
/// Remainder ties break toward earlier entries.
pub fn plan_mixture(spec: &MixtureSpec) -> Result<Vec<u64>, MixtureError> {
    spec.validate()?;
    let budget = Ratio::<i128>::from_integer(spec.token_budget as i128);
    let mut targets = Vec::with_capacity(spec.entries.len());
    let mut remainders = Vec::with_capacity(spec.entries.len());
    let mut floor_sum: i128 = 0;
    for (i, e) in spec.entries.iter().enumerate() {
        let exact = Ratio::<i128>::new(
            *e.fraction.ratio().numer() as i128,
            *e.fraction.ratio().denom() as i128,
        ) * budget;
        let floor = exact.floor().to_integer();
        floor_sum += floor;
        targets.push(floor as u64);
        remainders.push((exact - exact.floor(), i));
    }
    let mut leftover = spec.token_budget as i128 - floor_sum;
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut k = 0;
    while leftover > 0 {
        targets[remainders[k].1] += 1;
        leftover -= 1;
        k += 1;
    }
    Ok(targets)
}

/// Accounting for one realized entry.
#[derive(Debug, Clone, Serialize)]
pub struct EntryPlan {
    pub source: String,
    pub bucket: Bucket,
    pub fraction: Frac,
    pub target_tokens: u64,
    pub realized_tokens: u64,
    pub sequence_count: u64,
    /// Whole instruction samples drawn, for SFT buckets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_count: Option<u64>,
    pub docs_used: u64,
    /// SHA-256 over the sorted document ids this entry consumed.
    pub doc_digest: String,
    #[serde(skip)]
    pub doc_ids: Vec<DocId>,
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PlanTotals {
    pub target_tokens: u64,
    pub realized_tokens: u64,
    pub sequences: u64,
    pub pad_tokens: u64,
    pub discarded_tokens: u64,
}

/// Realized short:long split, over realized (non-pad) tokens.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct RatioReport {
    pub short_tokens: u64,
    pub long_tokens: u64,
    pub short_fraction: f64,
    pub long_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MixturePlan {
    pub name: String,
    pub token_budget: u64,
    pub seed: u64,
    pub stage_len: u64,
    pub entries: Vec<EntryPlan>,
    pub totals: PlanTotals,
    pub short_long_ratio: RatioReport,
}

impl MixturePlan {
    /// Every document id any entry consumed. Exclusivity checks compare
    /// these sets across stage runs.
    pub fn all_doc_ids(&self) -> Vec<DocId> {
        let mut ids: Vec<DocId> = self.entries.iter().flat_map(|e| e.doc_ids.clone()).collect();
        ids.sort_unstable();
        ids
    }
}

/// The built-in mixture specs. Budgets default to the production token
/// counts; runs override them with a desk-scale budget.
pub fn builtin_spec(name: &str) -> Result<MixtureSpec, MixtureError> {
    use Bucket::*;
    let spec = match name {
        "instella-long-stage1" => MixtureSpec {
            name: name.into(),
            entries: vec![
                MixtureEntry::new("code_repos", Long64k, Frac::percent(30)),
                MixtureEntry::new("books", Long64k, Frac::percent(30)),
                MixtureEntry::new("textbooks", Long64k, Frac::percent(3)),
                MixtureEntry::new("fineweb_edu", Short, Frac::percent(10)),
                MixtureEntry::new("fineweb", Short, Frac::percent(10)),
                MixtureEntry::new("wikipedia", Short, Frac::percent(5)),
                MixtureEntry::new("openwebmath", Short, Frac::percent(5)),
                MixtureEntry::new("stackexchange", Short, Frac::percent(4)),
                MixtureEntry::new("arxiv", Short, Frac::percent(3)),
            ],
            token_budget: 20_000_000_000,
            seed: 0,
        },
        "instella-long-stage2" => MixtureSpec {
            name: name.into(),
            entries: vec![
                MixtureEntry::new("code_repos", Long64k, Frac::percent(10)),
                MixtureEntry::new("books", Long64k, Frac::percent(15)),
                MixtureEntry::new("code_repos", Long256k, Frac::percent(20)),
                MixtureEntry::new("books", Long256k, Frac::percent(15)),
                MixtureEntry::new("textbooks", Long256k, Frac::percent(2)),
                MixtureEntry::new("fineweb_edu", Short, Frac::percent(10)),
                MixtureEntry::new("fineweb", Short, Frac::percent(10)),
                MixtureEntry::new("wikipedia", Short, Frac::percent(5)),
                MixtureEntry::new("openwebmath", Short, Frac::percent(5)),
                MixtureEntry::new("stackexchange", Short, Frac::percent(4)),
                MixtureEntry::new("arxiv", Short, Frac::percent(4)),
            ],
            token_budget: 20_000_000_000,
            seed: 0,
        },
        "instella-long-sft" => MixtureSpec {
            name: name.into(),
            entries: vec![
                MixtureEntry::new("ultrachat", SftShort, Frac::percent(25)),
                MixtureEntry::new("openmathinstruct2", SftShort, Frac::percent(10)),
                MixtureEntry::new("mmlu_auxiliary", SftShort, Frac::percent(3)),
                MixtureEntry::new("tulu3_if", SftShort, Frac::percent(2)),
                MixtureEntry::new("books", SftLong, Frac::percent(44))
                    .with_kind(SftKind::SingleDoc),
                MixtureEntry::new("dclm", SftLong, Frac::percent(10)).with_kind(SftKind::Concat),
                MixtureEntry::new("arxiv", SftLong, Frac::percent(6)).with_kind(SftKind::Concat),
            ],
            token_budget: 1_000_000_000,
            seed: 0,
        },
        other => return Err(MixtureError::UnknownRecipe(other.into())),
    };
    debug_assert!(spec.validate().is_ok());
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(entries: Vec<MixtureEntry>, budget: u64) -> MixtureSpec {
        MixtureSpec { name: "test".into(), entries, token_budget: budget, seed: 0 }
    }

    #[test]
    fn frac_parses_decimals_and_ratios() {
        assert_eq!("0.30".parse::<Frac>().unwrap(), Frac::percent(30));
        assert_eq!("3/10".parse::<Frac>().unwrap(), Frac::percent(30));
        assert_eq!("1".parse::<Frac>().unwrap(), Frac::one());
        assert_eq!(".5".parse::<Frac>().unwrap(), Frac::new(1, 2));
        assert!("1/0".parse::<Frac>().is_err());
        assert!("abc".parse::<Frac>().is_err());
    }

    #[test]
    fn stage1_plan_matches_hand_arithmetic() {
        let mut s = builtin_spec("instella-long-stage1").unwrap();
        s.token_budget = 20_000_000;
        let targets = plan_mixture(&s).unwrap();
        // code_repos at 30% of 20M.
        assert_eq!(targets[0], 6_000_000);
        // The long bucket totals 63%.
        let long_total: u64 = s
            .entries
            .iter()
            .zip(&targets)
            .filter(|(e, _)| !e.bucket.is_short_side())
            .map(|(_, t)| t)
            .sum();
        assert_eq!(long_total, 12_600_000);
        assert_eq!(targets.iter().sum::<u64>(), 20_000_000);
    }

    #[test]
    fn single_entry_takes_whole_budget() {
        let s = spec(vec![MixtureEntry::new("a", Bucket::Short, Frac::one())], 12345);
        assert_eq!(plan_mixture(&s).unwrap(), vec![12345]);
    }

    #[test]
    fn largest_remainder_breaks_ties_by_entry_order() {
        let third = Frac::new(1, 3);
        let s = spec(
            vec![
                MixtureEntry::new("a", Bucket::Short, third),
                MixtureEntry::new("b", Bucket::Short, third),
                MixtureEntry::new("c", Bucket::Short, third),
            ],
            10,
        );
        assert_eq!(plan_mixture(&s).unwrap(), vec![4, 3, 3]);
    }

    #[test]
    fn fraction_sum_error_reports_deficit() {
        let s = spec(
            vec![
                MixtureEntry::new("a", Bucket::Short, Frac::percent(50)),
                MixtureEntry::new("b", Bucket::Short, Frac::percent(45)),
            ],
            100,
        );
        match plan_mixture(&s).unwrap_err() {
            MixtureError::FractionSum { sum, deficit } => {
                assert_eq!(sum, "19/20");
                assert_eq!(deficit, "1/20");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn builtin_ratios_are_as_published() {
        for (name, short_pct) in [
            ("instella-long-stage1", 37),
            ("instella-long-stage2", 38),
            ("instella-long-sft", 40),
        ] {
            let s = builtin_spec(name).unwrap();
            s.validate().unwrap();
            let short: Ratio<i64> = s
                .entries
                .iter()
                .filter(|e| e.bucket.is_short_side())
                .map(|e| e.fraction.ratio())
                .sum();
            assert_eq!(short, Ratio::new(short_pct, 100), "{name}");
        }
    }

    #[test]
    fn unknown_recipe_is_an_error() {
        assert!(matches!(builtin_spec("nope"), Err(MixtureError::UnknownRecipe(_))));
    }

    #[test]
    fn spec_json_round_trip() {
        let s = builtin_spec("instella-long-sft").unwrap();
        let json = serde_json::to_string_pretty(&s).unwrap();
        let back: MixtureSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back.entries.len(), s.entries.len());
        assert_eq!(back.entries[4].effective_sft_kind(), SftKind::SingleDoc);
        assert_eq!(back.entries[5].effective_sft_kind(), SftKind::Concat);
        back.validate().unwrap();
    }
}
