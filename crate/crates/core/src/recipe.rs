//! End-to-end recipe driver: stage split, mixture realization, and batch
//! planning in one call, at any token budget.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::batch::{plan_microbatches, KeyKind, SequenceCostInput};
use crate::longqa::TeacherConfig;
use crate::mixture::{
    builtin_spec, realize_mixture, MixturePlan, MixtureSpec, RealizeConfig, RealizedMixture,
};
use crate::pack::{PackedDataset, SftLossMode};
use crate::store::Store;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct RecipeConfig {
    pub name: String,
    pub budget: u64,
    pub seed: u64,
    /// Stage-split parameters shared by the stage-1 and stage-2 runs of
    /// one corpus. The split is keyed by this seed (not the run seed), so
    /// runs with different run seeds still agree on exclusivity.
    pub split_seed: u64,
    pub stage2_num: u64,
    pub stage2_den: u64,
    pub microbatch_size: usize,
    pub key_kind: KeyKind,
    pub nest_64k: bool,
    pub loss_mode: SftLossMode,
    #[serde(skip)]
    pub teacher: TeacherConfig,
}

impl RecipeConfig {
    pub fn new(name: &str, budget: u64, seed: u64) -> RecipeConfig {
        RecipeConfig {
            name: name.into(),
            budget,
            seed,
            split_seed: 0,
            stage2_num: 1,
            stage2_den: 2,
            microbatch_size: 1,
            key_kind: KeyKind::SumLenSq,
            nest_64k: true,
            loss_mode: SftLossMode::AnswerOnly,
            teacher: TeacherConfig::default(),
        }
    }
}

#[derive(Debug)]
pub struct RecipeOutcome {
    pub plan: MixturePlan,
    pub spec: MixtureSpec,
    pub dataset_dir: PathBuf,
    pub batch_plan_path: PathBuf,
}

/// Runs one named recipe end to end: assign stages (stage recipes only),
/// realize the mixture into a packed dataset, then emit the sorted
/// microbatch plan. Everything under `out_dir` is a pure function of
/// (store contents, config).
pub fn run_recipe(store: &mut Store, config: &RecipeConfig, out_dir: &Path) -> Result<RecipeOutcome> {
    let mut spec = builtin_spec(&config.name)?;
    spec.token_budget = config.budget;
    spec.seed = config.seed;

    let mut realize = RealizeConfig::for_recipe(&config.name, config.seed)?;
    realize.nest_64k = config.nest_64k;
    realize.loss_mode = config.loss_mode;
    realize.teacher = config.teacher.clone();

    if realize.stage.is_some() {
        store
            .assign_stages(config.stage2_num, config.stage2_den, config.split_seed)
            .map_err(crate::mixture::MixtureError::from)?;
    }

    let RealizedMixture { plan, dataset_dir, .. } =
        realize_mixture(&spec, store, &realize, out_dir)?;

    let batch_plan_path = out_dir.join("batch_plan.jsonl");
    write_batch_plan(&dataset_dir, &batch_plan_path, config.microbatch_size, config.key_kind, None)?;

    Ok(RecipeOutcome { plan, spec, dataset_dir, batch_plan_path })
}

/// Plans microbatches for a packed dataset and writes one
/// [`crate::batch::MicrobatchPlan`] JSON line per step. `step_sequences`
/// bounds how many sequences form one training step; by default the whole
/// dataset is a single step.
pub fn write_batch_plan(
    dataset_dir: &Path,
    out_path: &Path,
    microbatch_size: usize,
    key_kind: KeyKind,
    step_sequences: Option<usize>,
) -> Result<Vec<crate::batch::MicrobatchPlan>> {
    let dataset = PackedDataset::open(dataset_dir)?;
    let inputs: Vec<SequenceCostInput> = dataset
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| SequenceCostInput::from_index_entry(i as u64, e))
        .collect();

    let step = step_sequences.unwrap_or(inputs.len().max(1));
    let mut plans = Vec::new();
    let file = File::create(out_path).map_err(|e| Error::io(out_path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for (step_id, chunk) in inputs.chunks(step.max(1)).enumerate() {
        let plan = plan_microbatches(step_id as u64, chunk, microbatch_size, key_kind)?;
        serde_json::to_writer(&mut w, &plan)?;
        w.write_all(b"\n").map_err(|e| Error::io(out_path.display().to_string(), e))?;
        plans.push(plan);
    }
    w.flush().map_err(|e| Error::io(out_path.display().to_string(), e))?;
    Ok(plans)
}
