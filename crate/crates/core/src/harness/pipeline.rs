//! Dataset generation, labelling and training stages.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Config;
use crate::datagen::{generate_episode_with_retries, split_scenes, EpisodeRecord, Splits};
use crate::event_tree::{EventTree, TreeError};
use crate::instruction::satisfying_prefix_len;
use crate::model::{featurize, train, GraphMode, GraphSample, TrainError, Trained};
use crate::rng;
use crate::scoring::{label_ablation, LabelRecord, LabelScheme};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub schema: String,
    pub seed: u64,
    pub scenes_requested: usize,
    pub episodes: usize,
    pub failed_scenes: Vec<u64>,
    /// Scenes that needed more than one generation attempt.
    pub retried_scenes: usize,
    pub instructions: usize,
    pub instructions_by_kind: BTreeMap<String, usize>,
    pub hard_instructions: usize,
    pub mean_solution_length: f64,
    pub splits: SplitCounts,
    pub config: Config,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl From<&Splits> for SplitCounts {
    fn from(s: &Splits) -> Self {
        Self {
            train: s.train.len(),
            val: s.val.len(),
            test: s.test.len(),
        }
    }
}

/// Episodes for scene ids `0..cfg.scenes`, in id order. Scenes whose every
/// attempt fails are left out and listed in the manifest.
pub fn generate_dataset(cfg: &Config, seed: u64) -> (Vec<EpisodeRecord>, Splits, DataManifest) {
    let gen = cfg.gen_config();
    let outcomes: Vec<(u64, Option<(EpisodeRecord, usize)>)> = (0..cfg.scenes as u64)
        .into_par_iter()
        .map(|id| (id, generate_episode_with_retries(id, seed, &gen, cfg.scene_attempts)))
        .collect();
    let mut episodes = Vec::with_capacity(outcomes.len());
    let mut failed = Vec::new();
    let mut retried = 0;
    for (id, out) in outcomes {
        match out {
            Some((ep, attempt)) => {
                retried += (attempt > 0) as usize;
                episodes.push(ep);
            }
            None => failed.push(id),
        }
    }
    let splits = dataset_splits(cfg, &episodes, seed);
    let mut by_kind = BTreeMap::new();
    let mut hard = 0;
    for g in episodes.iter().flat_map(|e| &e.instructions) {
        *by_kind.entry(g.kind().label().to_string()).or_insert(0) += 1;
        hard += g.is_hard() as usize;
    }
    let manifest = DataManifest {
        schema: "cascade-manifest".into(),
        seed,
        scenes_requested: cfg.scenes,
        episodes: episodes.len(),
        failed_scenes: failed,
        retried_scenes: retried,
        instructions: by_kind.values().sum(),
        instructions_by_kind: by_kind,
        hard_instructions: hard,
        mean_solution_length: if episodes.is_empty() {
            0.0
        } else {
            episodes.iter().map(|e| e.solution_seq.len() as f64).sum::<f64>() / episodes.len() as f64
        },
        splits: SplitCounts::from(&splits),
        config: cfg.clone(),
    };
    (episodes, splits, manifest)
}

pub fn dataset_splits(cfg: &Config, episodes: &[EpisodeRecord], seed: u64) -> Splits {
    let ids: Vec<u64> = episodes.iter().map(|e| e.scene_id).collect();
    split_scenes(&ids, cfg.val_fraction, cfg.test_fraction, rng::derive_seed(seed, "splits", 0))
}

/// Labels of one instruction of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledInstruction {
    pub scene_id: u64,
    pub instruction: usize,
    /// The labelling tree lost sample support before the target node.
    pub dropped: bool,
    pub labels: Vec<LabelRecord>,
}

/// Labelling tree of an episode: fresh interventions plus the solution
/// intervention itself, so the solution path always has support.
pub fn label_tree(ep: &EpisodeRecord, cfg: &Config, seed: u64) -> Result<EventTree, TreeError> {
    EventTree::init_root_with(
        &ep.scene,
        cfg.tree_config(),
        rng::derive_seed(seed, "label-tree", ep.scene_id),
        &[ep.y_star],
    )
}

/// Label every instruction of `ep` inside `tree`. The target node is the
/// shortest solution prefix that satisfies the instruction.
pub fn label_episode(
    tree: &mut EventTree,
    ep: &EpisodeRecord,
    scheme: LabelScheme,
    seed: u64,
) -> Vec<LabeledInstruction> {
    let mut rng = rng::stream(seed, "label-negatives", ep.scene_id);
    ep.instructions
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let len = satisfying_prefix_len(&ep.solution_seq, g).unwrap_or(ep.solution_seq.len());
            match label_ablation(scheme, tree, &ep.solution_seq[..len], &mut rng) {
                Ok(labels) => LabeledInstruction {
                    scene_id: ep.scene_id,
                    instruction: i,
                    dropped: false,
                    labels: labels.iter().map(LabelRecord::from).collect(),
                },
                Err(_) => LabeledInstruction {
                    scene_id: ep.scene_id,
                    instruction: i,
                    dropped: true,
                    labels: Vec::new(),
                },
            }
        })
        .collect()
}

/// Labels for every instruction of every episode, in episode order.
pub fn label_dataset(
    episodes: &[EpisodeRecord],
    cfg: &Config,
    scheme: LabelScheme,
    seed: u64,
) -> Result<Vec<LabeledInstruction>, TreeError> {
    let per_episode: Result<Vec<Vec<LabeledInstruction>>, TreeError> = episodes
        .par_iter()
        .map(|ep| {
            let mut tree = label_tree(ep, cfg, seed)?;
            Ok(label_episode(&mut tree, ep, scheme, seed))
        })
        .collect();
    Ok(per_episode?.into_iter().flatten().collect())
}

/// Graphs of every labelled non-root node for scenes accepted by `keep`.
/// The root is never scored, so its label is not trained on.
pub fn training_graphs(
    episodes: &[EpisodeRecord],
    labels: &[LabeledInstruction],
    mode: GraphMode,
    keep: impl Fn(u64) -> bool,
) -> Vec<GraphSample> {
    let by_id: BTreeMap<u64, &EpisodeRecord> = episodes.iter().map(|e| (e.scene_id, e)).collect();
    let mut out = Vec::new();
    for l in labels.iter().filter(|l| !l.dropped && keep(l.scene_id)) {
        let Some(ep) = by_id.get(&l.scene_id) else {
            continue;
        };
        let Some(g) = ep.instructions.get(l.instruction) else {
            continue;
        };
        for r in l.labels.iter().filter(|r| !r.node_prefix.is_empty()) {
            let mut s = featurize(&r.node_prefix, g, mode);
            s.label = r.score;
            out.push(s);
        }
    }
    out
}

/// Seed of the `k`-th model.
pub fn model_seed(seed: u64, k: usize) -> u64 {
    rng::derive_seed(seed, "model", k as u64)
}

/// One scorer per model seed, trained on the train split and monitored on
/// the validation split.
pub fn train_models(
    cfg: &Config,
    episodes: &[EpisodeRecord],
    labels: &[LabeledInstruction],
    splits: &Splits,
    seed: u64,
    mut on_epoch: impl FnMut(usize, &crate::model::EpochLoss),
) -> Result<Vec<Trained>, TrainError> {
    let mode = cfg.graph_mode();
    let train_ids: std::collections::BTreeSet<u64> = splits.train.iter().copied().collect();
    let val_ids: std::collections::BTreeSet<u64> = splits.val.iter().copied().collect();
    let data = training_graphs(episodes, labels, mode, |id| train_ids.contains(&id));
    let val = training_graphs(episodes, labels, mode, |id| val_ids.contains(&id));
    let tc = cfg.train_config();
    (0..cfg.model_seeds)
        .map(|k| train(&data, &val, &tc, model_seed(seed, k), |e| on_epoch(k, e)))
        .collect()
}
