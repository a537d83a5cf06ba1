//! Search over held-out episodes and the success metrics built on it.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::Config;
use crate::datagen::{EpisodeRecord, Scene};
use crate::dynamics::{self, simulate_events, SemanticEvent};
use crate::event_tree::{EventTree, Intervention, TreeError};
use crate::instruction::{satisfies, Instruction};
use crate::model::Scorer;
use crate::rng;
use crate::search::{search_in_tree, ModelScorer, RandomBaseline, SearchConfig, SearchMode, TraceRecord};

/// Outcome of one (scene, instruction) evaluation for one model seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub scene_id: u64,
    pub instruction: usize,
    pub seed_index: usize,
    pub kind: String,
    pub hard: bool,
    /// Prefix of the chosen node; empty for the random baseline.
    pub chosen_prefix: Vec<SemanticEvent>,
    pub intervention: Intervention,
    pub expanded: usize,
    /// Event-driven rollout of the chosen intervention.
    pub rollout: Vec<SemanticEvent>,
    pub tree_success: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub scene_id: u64,
    pub instruction: usize,
    pub seed_index: usize,
    pub records: Vec<TraceRecord>,
}

/// Event-driven rollout of `y` in `scene`; an empty sequence if the scene
/// has no pivot or the dynamics fail.
pub fn rollout_of(scene: &Scene, y: &Intervention, cfg: &Config) -> Vec<SemanticEvent> {
    scene
        .with_intervention(y)
        .and_then(|w| dynamics::rollout_events(&w, cfg.max_depth, cfg.horizon).ok())
        .map(|c| dynamics::events_of(&c))
        .unwrap_or_default()
}

/// Search every instruction of the given episodes with every model. One
/// fresh tree per scene is shared by all models and instructions.
pub fn run_search(
    episodes: &[&EpisodeRecord],
    models: &[Scorer],
    cfg: &Config,
    mode: SearchMode,
    seed: u64,
) -> Result<(Vec<EpisodeResult>, Vec<EpisodeTrace>), TreeError> {
    let scfg = SearchConfig {
        mode,
        ..cfg.search_config()
    };
    let graph_mode = cfg.graph_mode();
    let per_scene: Result<Vec<(Vec<EpisodeResult>, Vec<EpisodeTrace>)>, TreeError> = episodes
        .par_iter()
        .map(|ep| {
            let mut tree = EventTree::init_root(&ep.scene, scfg.tree, rng::derive_seed(seed, "search-tree", ep.scene_id))?;
            let mut results = Vec::new();
            let mut traces = Vec::new();
            for (k, scorer) in models.iter().enumerate() {
                for (i, g) in ep.instructions.iter().enumerate() {
                    let observed: &[SemanticEvent] = match mode {
                        SearchMode::Counterfactual => &ep.observed_seq,
                        _ => &[],
                    };
                    let mut ms = ModelScorer {
                        scorer,
                        mode: graph_mode,
                    };
                    let pick = rng::derive_seed(seed, "search-pick", ep.scene_id * 64 + (k * 8 + i) as u64);
                    let r = search_in_tree(&mut tree, g, observed, &mut ms, &scfg, pick).map_err(|e| match e {
                        crate::search::SearchError::Tree(t) => t,
                        crate::search::SearchError::ZeroBudget => TreeError::NoSamples,
                    })?;
                    let rollout = rollout_of(&ep.scene, &r.intervention, cfg);
                    debug_assert!(rollout.starts_with(&r.chosen_prefix));
                    results.push(EpisodeResult {
                        scene_id: ep.scene_id,
                        instruction: i,
                        seed_index: k,
                        kind: g.kind().label().into(),
                        hard: g.is_hard(),
                        chosen_prefix: r.chosen_prefix,
                        intervention: r.intervention,
                        expanded: r.expanded,
                        tree_success: satisfies(&rollout, g),
                        rollout,
                    });
                    traces.push(EpisodeTrace {
                        scene_id: ep.scene_id,
                        instruction: i,
                        seed_index: k,
                        records: r.trace,
                    });
                }
            }
            Ok((results, traces))
        })
        .collect();
    let (results, traces): (Vec<_>, Vec<_>) = per_scene?.into_iter().unzip();
    Ok((results.into_iter().flatten().collect(), traces.into_iter().flatten().collect()))
}

/// Histogram baseline fitted to the training solutions; `seeds` independent
/// draws per instruction.
pub fn run_random_baseline(
    episodes: &[&EpisodeRecord],
    baseline: &RandomBaseline,
    cfg: &Config,
    seeds: usize,
    seed: u64,
) -> Vec<EpisodeResult> {
    let per_scene: Vec<Vec<EpisodeResult>> = episodes
        .par_iter()
        .map(|ep| {
            let mut rng = rng::stream(seed, "random-baseline", ep.scene_id);
            let mut out = Vec::new();
            for k in 0..seeds {
                for (i, g) in ep.instructions.iter().enumerate() {
                    let y = baseline.sample(&mut rng);
                    let rollout = rollout_of(&ep.scene, &y, cfg);
                    out.push(EpisodeResult {
                        scene_id: ep.scene_id,
                        instruction: i,
                        seed_index: k,
                        kind: g.kind().label().into(),
                        hard: g.is_hard(),
                        chosen_prefix: Vec::new(),
                        intervention: y,
                        expanded: 0,
                        tree_success: satisfies(&rollout, g),
                        rollout,
                    });
                }
            }
            out
        })
        .collect();
    per_scene.into_iter().flatten().collect()
}

fn instruction_of<'a>(episodes: &BTreeMap<u64, &'a EpisodeRecord>, r: &EpisodeResult) -> Option<(&'a EpisodeRecord, &'a Instruction)> {
    let ep = *episodes.get(&r.scene_id)?;
    Some((ep, ep.instructions.get(r.instruction)?))
}

/// Tree success recomputed from the stored interventions with the
/// event-driven model only.
pub fn eval_tree_success(results: &[EpisodeResult], episodes: &[EpisodeRecord], cfg: &Config) -> Vec<bool> {
    let by_id: BTreeMap<u64, &EpisodeRecord> = episodes.iter().map(|e| (e.scene_id, e)).collect();
    results
        .par_iter()
        .map(|r| {
            instruction_of(&by_id, r).map_or(false, |(ep, g)| satisfies(&rollout_of(&ep.scene, &r.intervention, cfg), g))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub success: bool,
    /// The integrator reported instability; counted as a failure.
    pub unstable: bool,
}

/// Simulator success: the stored intervention rolled out with the
/// fixed-step integrator, no model involved.
pub fn eval_sim_success(results: &[EpisodeResult], episodes: &[EpisodeRecord], cfg: &Config) -> Vec<SimOutcome> {
    let by_id: BTreeMap<u64, &EpisodeRecord> = episodes.iter().map(|e| (e.scene_id, e)).collect();
    results
        .par_iter()
        .map(|r| {
            let Some((ep, g)) = instruction_of(&by_id, r) else {
                return SimOutcome {
                    success: false,
                    unstable: false,
                };
            };
            let Some(w) = ep.scene.with_intervention(&r.intervention) else {
                return SimOutcome {
                    success: false,
                    unstable: false,
                };
            };
            match simulate_events(&w, cfg.sim_dt, cfg.max_depth, cfg.horizon) {
                Ok(c) => SimOutcome {
                    success: satisfies(&dynamics::events_of(&c), g),
                    unstable: false,
                },
                Err(_) => SimOutcome {
                    success: false,
                    unstable: true,
                },
            }
        })
        .collect()
}

/// Mean over seeds with the standard error of that mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub mean: f64,
    pub stderr: f64,
    pub seeds: usize,
}

impl Rate {
    pub fn across(per_seed: &[f64]) -> Self {
        let n = per_seed.len();
        if n == 0 {
            return Self {
                mean: 0.0,
                stderr: 0.0,
                seeds: 0,
            };
        }
        let mean = per_seed.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = per_seed.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, seeds: n }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed_index: usize,
    pub episodes: usize,
    pub tree_success: f64,
    pub sim_success: Option<f64>,
    pub sim_unstable: usize,
    pub mean_expanded: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    /// Episodes per seed in this group.
    pub count: usize,
    pub tree_success: Rate,
    pub sim_success: Option<Rate>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    /// Episodes per seed.
    pub episodes: usize,
    pub tree_success: Rate,
    pub sim_success: Option<Rate>,
    /// Simulator success over tree success.
    pub conversion: Option<f64>,
    pub breakdown: BTreeMap<String, Breakdown>,
    pub per_seed: Vec<SeedSummary>,
}

fn group_rate(results: &[EpisodeResult], flags: &[bool], seeds: &[usize], keep: impl Fn(&EpisodeResult) -> bool) -> (usize, Rate) {
    let mut per_seed = Vec::new();
    let mut count = 0;
    for &k in seeds {
        let (mut n, mut ok) = (0usize, 0usize);
        for (r, &f) in results.iter().zip(flags) {
            if r.seed_index == k && keep(r) {
                n += 1;
                ok += f as usize;
            }
        }
        count = n;
        if n > 0 {
            per_seed.push(ok as f64 / n as f64);
        }
    }
    (count, Rate::across(&per_seed))
}

/// Aggregate per-episode results (and optional simulator outcomes in the
/// same order) into a report.
pub fn build_report(method: &str, results: &[EpisodeResult], sim: Option<&[SimOutcome]>) -> EvalReport {
    let seeds: Vec<usize> = {
        let mut s: Vec<usize> = results.iter().map(|r| r.seed_index).collect();
        s.sort_unstable();
        s.dedup();
        s
    };
    let tree: Vec<bool> = results.iter().map(|r| r.tree_success).collect();
    let sim_ok: Option<Vec<bool>> = sim.map(|s| s.iter().map(|o| o.success).collect());
    let (episodes, tree_rate) = group_rate(results, &tree, &seeds, |_| true);
    let sim_rate = sim_ok.as_ref().map(|s| group_rate(results, s, &seeds, |_| true).1);

    let mut groups: Vec<(String, Box<dyn Fn(&EpisodeResult) -> bool>)> = Vec::new();
    for kind in ["unconstrained", "bottleneck", "count", "b&c"] {
        groups.push((kind.to_string(), Box::new(move |r: &EpisodeResult| r.kind == kind)));
    }
    groups.push(("hard".into(), Box::new(|r: &EpisodeResult| r.hard)));
    groups.push(("easy".into(), Box::new(|r: &EpisodeResult| !r.hard)));
    let mut breakdown = BTreeMap::new();
    for (name, keep) in groups {
        let (count, tree_success) = group_rate(results, &tree, &seeds, &keep);
        let sim_success = sim_ok.as_ref().map(|s| group_rate(results, s, &seeds, &keep).1);
        breakdown.insert(
            name,
            Breakdown {
                count,
                tree_success,
                sim_success,
            },
        );
    }

    let per_seed = seeds
        .iter()
        .map(|&k| {
            let idx: Vec<usize> = (0..results.len()).filter(|&i| results[i].seed_index == k).collect();
            let n = idx.len();
            let frac = |f: &dyn Fn(usize) -> bool| idx.iter().filter(|&&i| f(i)).count() as f64 / n.max(1) as f64;
            SeedSummary {
                seed_index: k,
                episodes: n,
                tree_success: frac(&|i| results[i].tree_success),
                sim_success: sim.map(|s| frac(&|i| s[i].success)),
                sim_unstable: sim.map_or(0, |s| idx.iter().filter(|&&i| s[i].unstable).count()),
                mean_expanded: idx.iter().map(|&i| results[i].expanded as f64).sum::<f64>() / n.max(1) as f64,
            }
        })
        .collect();
    let conversion = sim_rate.filter(|_| tree_rate.mean > 0.0).map(|s| s.mean / tree_rate.mean);
    EvalReport {
        method: method.to_string(),
        episodes,
        tree_success: tree_rate,
        sim_success: sim_rate,
        conversion,
        breakdown,
        per_seed,
    }
}

/// Interventions of the training solutions, for the histogram baseline.
pub fn training_interventions(episodes: &[EpisodeRecord], train_ids: &[u64]) -> Vec<Intervention> {
    let ids: std::collections::BTreeSet<u64> = train_ids.iter().copied().collect();
    episodes.iter().filter(|e| ids.contains(&e.scene_id)).map(|e| e.y_star).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub node_budget: usize,
    pub test_scenes: usize,
    pub reports: BTreeMap<String, EvalReport>,
    /// Total expansions per search method, summed over episodes and seeds.
    pub total_expanded: BTreeMap<String, usize>,
}

/// Per-method results of an experiment, kept for traces and audits.
#[derive(Clone, Debug, Default)]
pub struct ExperimentRuns {
    pub results: BTreeMap<String, Vec<EpisodeResult>>,
    pub traces: BTreeMap<String, Vec<EpisodeTrace>>,
}

/// Both searches with every model plus the histogram baseline on the test
/// scenes. Simulator success is computed when `with_sim` is set.
pub fn run_experiment(
    cfg: &Config,
    episodes: &[EpisodeRecord],
    train_ids: &[u64],
    test_ids: &[u64],
    models: &[Scorer],
    seed: u64,
    with_sim: bool,
) -> Result<(ExperimentReport, ExperimentRuns), TreeError> {
    let test: std::collections::BTreeSet<u64> = test_ids.iter().copied().collect();
    let held_out: Vec<&EpisodeRecord> = episodes.iter().filter(|e| test.contains(&e.scene_id)).collect();
    let mut runs = ExperimentRuns::default();
    for mode in [SearchMode::MaxLikelihood, SearchMode::Counterfactual] {
        let (results, traces) = run_search(&held_out, models, cfg, mode, seed)?;
        let name = mode_name(mode);
        runs.results.insert(name.into(), results);
        runs.traces.insert(name.into(), traces);
    }
    let train_y = training_interventions(episodes, train_ids);
    if let Some(baseline) = RandomBaseline::fit(&train_y, cfg.histogram_bins) {
        let results = run_random_baseline(&held_out, &baseline, cfg, models.len().max(1), seed);
        runs.results.insert(mode_name(SearchMode::RandomBaseline).into(), results);
    }
    let mut reports = BTreeMap::new();
    let mut total_expanded = BTreeMap::new();
    for (name, results) in &runs.results {
        let sim = with_sim.then(|| eval_sim_success(results, episodes, cfg));
        reports.insert(name.clone(), build_report(name, results, sim.as_deref()));
        if name != mode_name(SearchMode::RandomBaseline) {
            total_expanded.insert(name.clone(), results.iter().map(|r| r.expanded).sum());
        }
    }
    let report = ExperimentReport {
        seed,
        node_budget: cfg.node_budget,
        test_scenes: held_out.len(),
        reports,
        total_expanded,
    };
    Ok((report, runs))
}

pub fn mode_name(mode: SearchMode) -> &'static str {
    match mode {
        SearchMode::MaxLikelihood => "max_likelihood",
        SearchMode::Counterfactual => "counterfactual",
        SearchMode::RandomBaseline => "random_baseline",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ObjectId;

    fn result(seed_index: usize, kind: &str, hard: bool, ok: bool) -> EpisodeResult {
        EpisodeResult {
            scene_id: 0,
            instruction: 0,
            seed_index,
            kind: kind.into(),
            hard,
            chosen_prefix: Vec::new(),
            intervention: Intervention::new(1.0, 0.0),
            expanded: 80,
            rollout: vec![SemanticEvent::new(ObjectId::BALLS[0], ObjectId::WALLS[0])],
            tree_success: ok,
        }
    }

    #[test]
    fn standard_error_across_seeds() {
        let r = Rate::across(&[0.5, 0.7]);
        assert!((r.mean - 0.6).abs() < 1e-15);
        // Sample sd is 0.1414; over sqrt(2) gives 0.1.
        assert!((r.stderr - 0.1).abs() < 1e-12);
        assert_eq!(Rate::across(&[0.4]).stderr, 0.0);
    }

    #[test]
    fn breakdown_counts_sum_to_the_total() {
        let mut results = Vec::new();
        for k in 0..3 {
            results.push(result(k, "unconstrained", false, true));
            results.push(result(k, "count", true, k == 0));
            results.push(result(k, "b&c", true, false));
            results.push(result(k, "bottleneck", false, true));
            results.push(result(k, "bottleneck", false, false));
        }
        let rep = build_report("x", &results, None);
        assert_eq!(rep.episodes, 5);
        let kinds: usize = ["unconstrained", "bottleneck", "count", "b&c"].iter().map(|k| rep.breakdown[*k].count).sum();
        assert_eq!(kinds, rep.episodes);
        assert_eq!(rep.breakdown["hard"].count + rep.breakdown["easy"].count, rep.episodes);
        assert_eq!(rep.breakdown["bottleneck"].tree_success.mean, 0.5);
        assert!((rep.breakdown["count"].tree_success.mean - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(rep.per_seed.len(), 3);
        for s in &rep.per_seed {
            assert!((0.0..=1.0).contains(&s.tree_success));
        }
    }
}
