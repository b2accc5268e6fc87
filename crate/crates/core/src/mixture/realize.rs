//! Mixture realization: targets → packed dataset.
//!
//! Each entry draws documents from a per-source pool (seed-shuffled,
//! shared between entries of the same source so no document lands in two
//! entries) and feeds its bucket's packing regime until the realized
//! token count reaches the target:
//!
//! - pre-training buckets stop at whole-sequence granularity;
//! - SFT buckets stop at whole-sample granularity, and all SFT samples
//!   are then packed together so sequences can mix sources and padding is
//!   paid once.
//!
//! Entries are realized most-constrained first (256K documents are
//! scarcer than 64K ones, which are scarcer than short ones) so a greedy
//! draw cannot starve a pickier entry; the reported plan stays in spec
//! order. Sequences stream to the output dataset as they are produced.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{
    plan_mixture, Bucket, EntryPlan, EntryShortfall, MixtureError, MixturePlan, MixtureSpec,
    PlanTotals, RatioReport, SftKind, LONG_256K, LONG_64K,
};
use crate::hash::{fnv1a64, sha256_hex};
use crate::longqa::{
    self, build_concat_sample, generate_doc_qa, DocQa, LongQaSample, SkipReport, TeacherConfig,
    MIN_SINGLE_DOC_TOKENS,
};
use crate::pack::{
    make_long_sequences, pack_grouped, pack_sft, PackStats, PackedDatasetWriter, PackedSequence,
    SegmentRef, SegmentRole, SftLossMode, SftSample, TokenSource,
};
use crate::rng::keyed_rng;
use crate::store::{DocId, StageTag, Store};
use rand::seq::SliceRandom;

/// Per-run packing configuration. The stage length is the L every emitted
/// sequence has; bucket window lengths are fixed by the bucket.
#[derive(Debug, Clone)]
pub struct RealizeConfig {
    pub seed: u64,
    /// L of the stage: 65,536 for the first long stage, 262,144 for the
    /// second and for SFT.
    pub stage_len: usize,
    /// Restrict document pools to one stage tag (stage recipes).
    pub stage: Option<StageTag>,
    /// Group 64K windows four-into-one when the stage length is 256K.
    /// Off, 64K windows are emitted as standalone short sequences.
    pub nest_64k: bool,
    pub superlong_factor: usize,
    pub max_segments: usize,
    pub loss_mode: SftLossMode,
    pub teacher: TeacherConfig,
    pub teacher_concurrency: usize,
}

impl RealizeConfig {
    pub fn new(seed: u64, stage_len: usize) -> RealizeConfig {
        RealizeConfig {
            seed,
            stage_len,
            stage: None,
            nest_64k: true,
            superlong_factor: 4,
            max_segments: 4,
            loss_mode: SftLossMode::AnswerOnly,
            teacher: TeacherConfig::default(),
            teacher_concurrency: 8,
        }
    }

    /// Packing defaults for a built-in recipe name.
    pub fn for_recipe(name: &str, seed: u64) -> Result<RealizeConfig, MixtureError> {
        let mut config = match name {
            "instella-long-stage1" => RealizeConfig::new(seed, LONG_64K),
            "instella-long-stage2" | "instella-long-sft" => RealizeConfig::new(seed, LONG_256K),
            other => return Err(MixtureError::UnknownRecipe(other.into())),
        };
        config.stage = match name {
            "instella-long-stage1" => Some(StageTag::Stage1),
            "instella-long-stage2" => Some(StageTag::Stage2),
            _ => None,
        };
        Ok(config)
    }
}

#[derive(Debug)]
pub struct RealizedMixture {
    pub plan: MixturePlan,
    pub dataset_dir: PathBuf,
    /// Synthesized long-QA samples, when the spec has `sft_long` entries.
    pub samples_path: Option<PathBuf>,
    pub skips: Vec<SkipReport>,
}

/// A source's shuffled, shared document pool.
struct Pool {
    docs: Vec<(DocId, u64)>,
    used: Vec<bool>,
}

impl Pool {
    fn build(store: &Store, source: &str, stage: Option<StageTag>, seed: u64) -> Pool {
        let mut docs: Vec<(DocId, u64)> = store
            .entries_for_source(source)
            .filter(|e| stage.is_none_or(|s| e.stage_tag == s))
            .map(|e| (e.doc_id, e.length))
            .collect();
        docs.shuffle(&mut keyed_rng(seed, "mixture/pool", &[fnv1a64(source.as_bytes())]));
        let used = vec![false; docs.len()];
        Pool { docs, used }
    }

    fn take(&mut self, pred: impl Fn(u64) -> bool) -> Option<(DocId, u64)> {
        for i in 0..self.docs.len() {
            if !self.used[i] && pred(self.docs[i].1) {
                self.used[i] = true;
                return Some(self.docs[i]);
            }
        }
        None
    }

    /// Up to `n` documents matching `pred`.
    fn take_batch(&mut self, n: usize, pred: impl Fn(u64) -> bool) -> Vec<(DocId, u64)> {
        let mut out = Vec::new();
        while out.len() < n {
            match self.take(&pred) {
                Some(doc) => out.push(doc),
                None => break,
            }
        }
        out
    }
}

/// Pending 64K windows per document, for four-into-one nesting.
struct WindowBank {
    by_doc: BTreeMap<DocId, VecDeque<PackedSequence>>,
    total: usize,
}

impl WindowBank {
    fn new() -> WindowBank {
        WindowBank { by_doc: BTreeMap::new(), total: 0 }
    }

    fn push(&mut self, seq: PackedSequence) {
        let doc = seq.segments[0].doc_id.expect("window has a source doc");
        self.by_doc.entry(doc).or_default().push_back(seq);
        self.total += 1;
    }

    /// Pops one window from each of `k` distinct documents, preferring
    /// documents with the most pending windows so no document's backlog
    /// can block grouping. Group members are ordered by document id.
    fn take_group(&mut self, k: usize) -> Option<Vec<PackedSequence>> {
        if self.by_doc.len() < k {
            return None;
        }
        let mut candidates: Vec<(usize, DocId)> =
            self.by_doc.iter().map(|(doc, q)| (q.len(), *doc)).collect();
        candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<DocId> = candidates[..k].iter().map(|&(_, d)| d).collect();
        chosen.sort_unstable();
        let mut group = Vec::with_capacity(k);
        for doc in chosen {
            let queue = self.by_doc.get_mut(&doc).expect("chosen doc present");
            group.push(queue.pop_front().expect("chosen doc has a window"));
            if queue.is_empty() {
                self.by_doc.remove(&doc);
            }
            self.total -= 1;
        }
        Some(group)
    }
}

/// What an SFT entry accumulated before the joint pack.
enum PendingSample {
    PlainDoc { doc_id: DocId },
    Long(Box<LongQaSample>),
}

struct EntryState {
    realized: u64,
    sequences: u64,
    samples: u64,
    doc_ids: Vec<DocId>,
}

/// Realizes a spec against a store, writing the packed dataset, the
/// synthesized samples, and `plan.json` under `out_dir`.
pub fn realize_mixture(
    spec: &MixtureSpec,
    store: &Store,
    config: &RealizeConfig,
    out_dir: &Path,
) -> Result<RealizedMixture, MixtureError> {
    let targets = plan_mixture(spec)?;
    validate_config(spec, config)?;

    std::fs::create_dir_all(out_dir)
        .map_err(|source| MixtureError::Io { path: out_dir.to_path_buf(), source })?;
    let dataset_dir = out_dir.join("data");
    let mut writer = PackedDatasetWriter::create(&dataset_dir)?;

    let mut pools: BTreeMap<String, Pool> = BTreeMap::new();
    for e in &spec.entries {
        pools.entry(e.source.clone()).or_insert_with(|| {
            Pool::build(store, &e.source, config.stage, config.seed)
        });
    }

    // Most-constrained first; ties keep spec order.
    let mut order: Vec<usize> = (0..spec.entries.len()).collect();
    order.sort_by_key(|&i| {
        let rank = match spec.entries[i].bucket {
            Bucket::Long256k => 0,
            Bucket::Long64k => 1,
            Bucket::SftLong => 2,
            Bucket::Short => 3,
            Bucket::SftShort => 4,
        };
        (rank, i)
    });

    let teacher = config.teacher.build_client()?;
    let mut states: Vec<EntryState> = spec
        .entries
        .iter()
        .map(|_| EntryState { realized: 0, sequences: 0, samples: 0, doc_ids: Vec::new() })
        .collect();
    let mut shortfalls = Vec::new();
    let mut pending: Vec<(usize, PendingSample)> = Vec::new();
    let mut skips: Vec<SkipReport> = Vec::new();

    for &i in &order {
        let entry = &spec.entries[i];
        let target = targets[i];
        let state = &mut states[i];
        let pool = pools.get_mut(&entry.source).expect("pool built");
        let outcome = match entry.bucket {
            Bucket::Short => realize_short(store, pool, target, config, state, &mut writer),
            Bucket::Long64k => realize_long(
                store,
                pool,
                target,
                LONG_64K,
                config,
                state,
                &mut writer,
            ),
            Bucket::Long256k => realize_long(
                store,
                pool,
                target,
                LONG_256K,
                config,
                state,
                &mut writer,
            ),
            Bucket::SftShort | Bucket::SftLong => realize_sft_entry(
                store,
                pool,
                target,
                entry.effective_sft_kind(),
                config,
                teacher.as_ref(),
                i,
                state,
                &mut pending,
                &mut skips,
            ),
        };
        outcome?;
        if state.realized < target {
            shortfalls.push(EntryShortfall {
                source: entry.source.clone(),
                bucket: entry.bucket,
                target_tokens: target,
                realized_tokens: state.realized,
                shortfall: target - state.realized,
            });
        }
    }

    if !shortfalls.is_empty() {
        return Err(MixtureError::PartialPlan { shortfalls });
    }

    // Joint SFT pack: samples in spec-entry order, sources sharing
    // sequences, one padded tail.
    let samples_path = if pending.is_empty() {
        None
    } else {
        Some(pack_pending_sft(store, config, &mut pending, &mut states, &mut writer, out_dir)?)
    };

    let stats = writer.finish()?;
    let plan = assemble_plan(spec, &targets, states, stats, config);
    write_plan(out_dir, &plan)?;
    if !skips.is_empty() {
        write_skips(out_dir, &skips)?;
    }

    Ok(RealizedMixture { plan, dataset_dir, samples_path, skips })
}

fn validate_config(spec: &MixtureSpec, config: &RealizeConfig) -> Result<(), MixtureError> {
    if config.stage_len == 0 {
        return Err(MixtureError::BadSpec("stage_len must be >= 1".into()));
    }
    for e in &spec.entries {
        // Nesting packs stage_len/window_len windows per sequence; the
        // stage length must be a whole multiple.
        if e.bucket == Bucket::Long64k
            && config.nest_64k
            && config.stage_len > LONG_64K
            && config.stage_len % LONG_64K != 0
        {
            return Err(MixtureError::BadSpec(format!(
                "stage_len {} is not a multiple of the 64K window; cannot nest",
                config.stage_len
            )));
        }
    }
    Ok(())
}

/// Short regime: concatenate pool documents, truncate at the boundary,
/// discard remainders; stop once the target is covered by whole
/// sequences. Mirrors `pack_short` exactly, but draws documents lazily so
/// the pool is only consumed as far as the target requires.
fn realize_short(
    store: &Store,
    pool: &mut Pool,
    target: u64,
    config: &RealizeConfig,
    state: &mut EntryState,
    writer: &mut PackedDatasetWriter,
) -> Result<(), MixtureError> {
    let target_len = config.stage_len;
    let mut stats = PackStats::default();
    let mut tokens = Vec::with_capacity(target_len);
    let mut segments: Vec<SegmentRef> = Vec::new();

    while state.realized < target {
        let Some((doc_id, doc_len)) = pool.take(|_| true) else {
            // Unfinished buffer is discarded, like a stream tail.
            stats.tokens_discarded += tokens.len() as u64;
            writer.absorb_stats(&stats);
            return Ok(());
        };
        state.doc_ids.push(doc_id);
        stats.tokens_consumed += doc_len;

        let needed = target_len - tokens.len();
        let take = (doc_len as usize).min(needed);
        segments.push(SegmentRef {
            doc_id: Some(doc_id),
            doc_start: 0,
            seq_start: tokens.len() as u64,
            length: take as u64,
            loss_flag: true,
            role: SegmentRole::Pretrain,
            group: segments.len() as u32,
        });
        tokens.extend(store.window(doc_id, 0, take as u64)?);

        if tokens.len() == target_len {
            stats.tokens_discarded += doc_len - take as u64;
            stats.tokens_emitted += target_len as u64;
            stats.sequences_emitted += 1;
            state.realized += target_len as u64;
            state.sequences += 1;
            writer.write_sequence(&PackedSequence {
                tokens: std::mem::replace(&mut tokens, Vec::with_capacity(target_len)),
                segments: std::mem::take(&mut segments),
            })?;
        }
    }
    writer.absorb_stats(&stats);
    Ok(())
}

/// Long regime: window eligible documents at the bucket length; nest 64K
/// windows four-into-one when configured.
fn realize_long(
    store: &Store,
    pool: &mut Pool,
    target: u64,
    window_len: usize,
    config: &RealizeConfig,
    state: &mut EntryState,
    writer: &mut PackedDatasetWriter,
) -> Result<(), MixtureError> {
    let nested = window_len < config.stage_len && config.nest_64k;
    let group_size = if nested { config.stage_len / window_len } else { 1 };
    let mut stats = PackStats::default();
    let mut bank = WindowBank::new();

    while state.realized < target {
        let Some((doc_id, _)) = pool.take(|len| len >= window_len as u64) else {
            writer.absorb_stats(&stats);
            return Ok(());
        };
        let windows = make_long_sequences(
            store,
            &[doc_id],
            window_len,
            config.superlong_factor,
            config.max_segments,
            config.seed,
        )?;
        state.doc_ids.push(doc_id);

        if !nested {
            for seq in windows.sequences {
                stats.sequences_emitted += 1;
                stats.tokens_emitted += window_len as u64;
                stats.tokens_consumed += window_len as u64;
                state.realized += window_len as u64;
                state.sequences += 1;
                writer.write_sequence(&seq)?;
                if state.realized >= target {
                    break;
                }
            }
        } else {
            for seq in windows.sequences {
                bank.push(seq);
            }
            while state.realized < target {
                let Some(group) = bank.take_group(group_size) else { break };
                let grouped = pack_grouped(group, config.stage_len)?;
                stats.sequences_emitted += 1;
                stats.tokens_emitted += config.stage_len as u64;
                stats.tokens_consumed += config.stage_len as u64;
                state.realized += config.stage_len as u64;
                state.sequences += 1;
                writer.write_sequence(&grouped)?;
            }
        }
    }
    writer.absorb_stats(&stats);
    Ok(())
}

/// SFT regime: accumulate whole samples until the target; packing happens
/// jointly afterwards.
#[allow(clippy::too_many_arguments)]
fn realize_sft_entry(
    store: &Store,
    pool: &mut Pool,
    target: u64,
    kind: SftKind,
    config: &RealizeConfig,
    teacher: &dyn longqa::TeacherClient,
    entry_index: usize,
    state: &mut EntryState,
    pending: &mut Vec<(usize, PendingSample)>,
    skips: &mut Vec<SkipReport>,
) -> Result<(), MixtureError> {
    let stage_len = config.stage_len as u64;
    match kind {
        SftKind::Plain => {
            while state.realized < target {
                let Some((doc_id, len)) = pool.take(|len| len <= stage_len) else {
                    return Ok(());
                };
                state.doc_ids.push(doc_id);
                state.realized += len;
                state.samples += 1;
                pending.push((entry_index, PendingSample::PlainDoc { doc_id }));
            }
        }
        SftKind::SingleDoc => {
            while state.realized < target {
                let remaining = target - state.realized;
                let batch_cap = (remaining / MIN_SINGLE_DOC_TOKENS + 1) as usize;
                let batch = pool.take_batch(
                    batch_cap.min(config.teacher_concurrency.max(1) * 4),
                    |len| len >= MIN_SINGLE_DOC_TOKENS,
                );
                if batch.is_empty() {
                    return Ok(());
                }
                let ids: Vec<DocId> = batch.iter().map(|&(d, _)| d).collect();
                let (samples, skipped) = longqa::build_single_doc_samples(
                    store,
                    &ids,
                    teacher,
                    &config.teacher,
                    config.seed,
                    config.teacher_concurrency,
                );
                skips.extend(skipped);
                for sample in samples {
                    if state.realized >= target {
                        break;
                    }
                    state.realized += sample.total_tokens();
                    state.samples += 1;
                    state.doc_ids.extend(&sample.source_doc_ids);
                    pending.push((entry_index, PendingSample::Long(Box::new(sample))));
                }
            }
        }
        SftKind::Concat => {
            // Whole documents are concatenated, so restrict members to
            // 64K tokens; the worst-case sample then stays well inside the
            // 256K sequence budget.
            let member_cap = LONG_64K as u64;
            let mut buffer: Vec<DocQa> = Vec::new();
            while state.realized < target {
                match build_concat_sample(&buffer, config.seed) {
                    Ok((sample, used)) => {
                        buffer.drain(..used);
                        state.realized += sample.total_tokens();
                        state.samples += 1;
                        state.doc_ids.extend(&sample.source_doc_ids);
                        pending.push((entry_index, PendingSample::Long(Box::new(sample))));
                        continue;
                    }
                    Err(longqa::LongQaError::Shortfall { .. }) => {
                        let batch = pool.take_batch(
                            config.teacher_concurrency.max(1) * 8,
                            |len| len <= member_cap,
                        );
                        if batch.is_empty() {
                            return Ok(());
                        }
                        let ids: Vec<DocId> = batch.iter().map(|&(d, _)| d).collect();
                        for (id, result) in ids.iter().zip(batched_doc_qa(
                            store,
                            &ids,
                            teacher,
                            config,
                        )) {
                            match result {
                                Ok(doc_qa) => buffer.push(doc_qa),
                                Err(e) => skips
                                    .push(SkipReport { doc_id: *id, error: e.to_string() }),
                            }
                        }
                    }
                    Err(other) => return Err(other.into()),
                }
            }
        }
    }
    Ok(())
}

fn batched_doc_qa(
    store: &Store,
    ids: &[DocId],
    teacher: &dyn longqa::TeacherClient,
    config: &RealizeConfig,
) -> Vec<Result<DocQa, longqa::LongQaError>> {
    // Sequential here: per-id keyed RNG makes order irrelevant, and concat
    // member documents are small.
    ids.iter()
        .map(|&id| generate_doc_qa(store, id, teacher, &config.teacher, config.seed))
        .collect()
}

/// Packs all accumulated SFT samples into stage-length sequences and
/// writes the samples.jsonl provenance file.
fn pack_pending_sft(
    store: &Store,
    config: &RealizeConfig,
    pending: &mut Vec<(usize, PendingSample)>,
    states: &mut [EntryState],
    writer: &mut PackedDatasetWriter,
    out_dir: &Path,
) -> Result<PathBuf, MixtureError> {
    let pad_id = store.meta().pad_id.ok_or_else(|| {
        MixtureError::BadSpec("store metadata has no pad_id; SFT packing needs one".into())
    })?;

    pending.sort_by_key(|&(entry_index, _)| entry_index);

    // Provenance: the synthesized long samples.
    let long_samples: Vec<&LongQaSample> = pending
        .iter()
        .filter_map(|(_, p)| match p {
            PendingSample::Long(s) => Some(s.as_ref()),
            PendingSample::PlainDoc { .. } => None,
        })
        .collect();
    let longqa_dir = out_dir.join("longqa");
    std::fs::create_dir_all(&longqa_dir)
        .map_err(|source| MixtureError::Io { path: longqa_dir.clone(), source })?;
    let samples_path = longqa_dir.join("samples.jsonl");
    let mut buf = Vec::new();
    for s in &long_samples {
        serde_json::to_writer(&mut buf, s)
            .map_err(|e| MixtureError::BadSpec(format!("sample serialization: {e}")))?;
        buf.push(b'\n');
    }
    std::fs::write(&samples_path, buf)
        .map_err(|source| MixtureError::Io { path: samples_path.clone(), source })?;

    // Resolve to token spans and pack jointly.
    let mut doc_entry: HashMap<DocId, usize> = HashMap::new();
    let mut sft_samples: Vec<SftSample> = Vec::with_capacity(pending.len());
    for (entry_index, p) in pending.iter() {
        let sample = match p {
            PendingSample::PlainDoc { doc_id } => {
                doc_entry.insert(*doc_id, *entry_index);
                crate::pack::doc_as_sft_sample(store, *doc_id)?
            }
            PendingSample::Long(sample) => {
                for d in &sample.source_doc_ids {
                    doc_entry.insert(*d, *entry_index);
                }
                longqa::to_sft_sample(store, sample)?
            }
        };
        sft_samples.push(sample);
    }

    let packed = pack_sft(&sft_samples, config.stage_len, pad_id, config.loss_mode)?;
    // Per-entry sequence counts: a sequence counts for every entry that
    // has a document in it.
    for seq in &packed.sequences {
        let mut seen = Vec::new();
        for seg in &seq.segments {
            if let Some(doc) = seg.doc_id {
                if let Some(&entry_index) = doc_entry.get(&doc) {
                    if !seen.contains(&entry_index) {
                        seen.push(entry_index);
                    }
                }
            }
        }
        for entry_index in seen {
            states[entry_index].sequences += 1;
        }
        writer.write_sequence(seq)?;
    }
    writer.absorb_stats(&packed.stats);

    Ok(samples_path)
}

fn assemble_plan(
    spec: &MixtureSpec,
    targets: &[u64],
    states: Vec<EntryState>,
    stats: PackStats,
    config: &RealizeConfig,
) -> MixturePlan {
    let mut entries = Vec::with_capacity(spec.entries.len());
    let mut totals = PlanTotals {
        target_tokens: targets.iter().sum(),
        realized_tokens: 0,
        sequences: stats.sequences_emitted,
        pad_tokens: stats.pad_tokens,
        discarded_tokens: stats.tokens_discarded,
    };
    let mut short_tokens = 0u64;
    let mut long_tokens = 0u64;

    for ((entry, target), state) in spec.entries.iter().zip(targets).zip(states) {
        totals.realized_tokens += state.realized;
        if entry.bucket.is_short_side() {
            short_tokens += state.realized;
        } else {
            long_tokens += state.realized;
        }
        let mut sorted = state.doc_ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        let digest_input: String =
            sorted.iter().map(|d| format!("{d}\n")).collect();
        entries.push(EntryPlan {
            source: entry.source.clone(),
            bucket: entry.bucket,
            fraction: entry.fraction,
            target_tokens: *target,
            realized_tokens: state.realized,
            sequence_count: state.sequences,
            sample_count: entry.bucket.is_sft().then_some(state.samples),
            docs_used: sorted.len() as u64,
            doc_digest: sha256_hex(digest_input.as_bytes()),
            doc_ids: sorted,
        });
    }

    let denom = (short_tokens + long_tokens).max(1) as f64;
    MixturePlan {
        name: spec.name.clone(),
        token_budget: spec.token_budget,
        seed: config.seed,
        stage_len: config.stage_len as u64,
        entries,
        totals,
        short_long_ratio: RatioReport {
            short_tokens,
            long_tokens,
            short_fraction: short_tokens as f64 / denom,
            long_fraction: long_tokens as f64 / denom,
        },
    }
}

fn write_plan(out_dir: &Path, plan: &MixturePlan) -> Result<(), MixtureError> {
    let path = out_dir.join("plan.json");
    let data = serde_json::to_vec_pretty(plan)
        .map_err(|e| MixtureError::BadSpec(format!("plan serialization: {e}")))?;
    std::fs::write(&path, data).map_err(|source| MixtureError::Io { path, source })?;
    Ok(())
}

#[derive(Serialize)]
struct SkipFile<'a> {
    skipped: &'a [SkipReport],
}

fn write_skips(out_dir: &Path, skips: &[SkipReport]) -> Result<(), MixtureError> {
    let path = out_dir.join("skips.json");
    let data = serde_json::to_vec_pretty(&SkipFile { skipped: skips })
        .map_err(|e| MixtureError::BadSpec(format!("skip serialization: {e}")))?;
    std::fs::write(&path, data).map_err(|source| MixtureError::Io { path, source })?;
    Ok(())
}
