//! Best-first search over the event tree guided by node scores, its
//! counterfactual variant, and the histogram baseline.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::Scene;
use crate::dynamics::SemanticEvent;
use crate::event_tree::{EventTree, Intervention, NodeId, TreeConfig, TreeError};
use crate::instruction::{satisfies, Instruction};
use crate::model::{featurize, Batch, GraphMode, GraphSample, Scorer};
use crate::rng::{self, Rng};
use crate::scoring::{counterfactual_update, fr_estimate, sample_fraction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    MaxLikelihood,
    Counterfactual,
    RandomBaseline,
}

impl std::str::FromStr for SearchMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "max_likelihood" => Ok(Self::MaxLikelihood),
            "counterfactual" => Ok(Self::Counterfactual),
            "random_baseline" => Ok(Self::RandomBaseline),
            other => Err(format!("unknown search mode {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub node_budget: usize,
    pub n_observed: usize,
    pub mode: SearchMode,
    pub tree: TreeConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            node_budget: 80,
            n_observed: 9,
            mode: SearchMode::MaxLikelihood,
            tree: TreeConfig::default(),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SearchError {
    #[error("node budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceAction {
    /// Node entered the frontier.
    Push,
    /// Node left the frontier and was expanded.
    Expand,
    /// Node was expanded while following the observed sequence.
    FollowObserved,
    /// Node picked as the answer.
    Choose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub node: NodeId,
    pub predicted: Option<f64>,
    pub corrected: Option<f64>,
    pub action: TraceAction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub chosen: NodeId,
    pub chosen_prefix: Vec<SemanticEvent>,
    pub chosen_samples: usize,
    pub intervention: Intervention,
    pub expanded: usize,
    pub tree_nodes: usize,
    /// Deepest node reached along the (trimmed) observed sequence.
    pub observed_node: Option<NodeId>,
    pub trace: Vec<TraceRecord>,
}

/// Scores for tree nodes given an instruction.
pub trait NodeScorer {
    fn score(&mut self, tree: &EventTree, nodes: &[NodeId], g: &Instruction) -> Vec<f64>;
}

/// The learned scorer over prefix graphs.
pub struct ModelScorer<'a> {
    pub scorer: &'a Scorer,
    pub mode: GraphMode,
}

impl NodeScorer for ModelScorer<'_> {
    fn score(&mut self, tree: &EventTree, nodes: &[NodeId], g: &Instruction) -> Vec<f64> {
        if nodes.is_empty() {
            return Vec::new();
        }
        let graphs: Vec<GraphSample> = nodes
            .iter()
            .map(|&u| featurize(&tree.node(u).prefix, g, self.mode))
            .collect();
        let refs: Vec<&GraphSample> = graphs.iter().collect();
        let batch = Batch::new(&refs).expect("featurized graphs are consistent");
        self.scorer.predict(&batch).to_vec()
    }
}

/// Sample-exact scores: the fraction of a node's interventions whose full
/// rollout satisfies the instruction.
pub struct OracleScorer {
    pub satisfied: Vec<bool>,
}

impl NodeScorer for OracleScorer {
    fn score(&mut self, tree: &EventTree, nodes: &[NodeId], _g: &Instruction) -> Vec<f64> {
        nodes.iter().map(|&u| sample_fraction(tree, u, &self.satisfied)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    priority: f64,
    depth: usize,
    node: NodeId,
}

/// Higher priority first, then deeper, then lower id.
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then(self.depth.cmp(&other.depth))
            .then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Eq for Entry {}

struct Search<'t> {
    tree: &'t mut EventTree,
    budget: usize,
    expanded: usize,
    predicted: BTreeMap<NodeId, f64>,
    corrected: BTreeMap<NodeId, f64>,
    frontier: BinaryHeap<Entry>,
    trace: Vec<TraceRecord>,
    /// Nodes expanded by this search; the tree may hold expansions from
    /// earlier searches, which are reused but still charged to the budget.
    opened: BTreeSet<NodeId>,
}

impl Search<'_> {
    fn can_open(&self, u: NodeId) -> bool {
        !self.opened.contains(&u) && self.tree.has_future(u)
    }

    fn priority(&self, u: NodeId) -> f64 {
        if u == EventTree::ROOT {
            return f64::INFINITY;
        }
        self.corrected.get(&u).or(self.predicted.get(&u)).copied().unwrap_or(0.0)
    }

    fn record(&mut self, node: NodeId, action: TraceAction) {
        self.trace.push(TraceRecord {
            step: self.expanded,
            node,
            predicted: self.predicted.get(&node).copied(),
            corrected: self.corrected.get(&node).copied(),
            action,
        });
    }

    fn push(&mut self, u: NodeId) {
        let entry = Entry {
            priority: self.priority(u),
            depth: self.tree.node(u).depth(),
            node: u,
        };
        self.frontier.push(entry);
        self.record(u, TraceAction::Push);
    }

    /// Expand `u` and score its non-terminal children.
    fn expand(&mut self, u: NodeId, action: TraceAction, scorer: &mut dyn NodeScorer, g: &Instruction) -> Vec<NodeId> {
        self.record(u, action);
        let children = self.tree.expand_node(u).expect("caller checked expandability");
        self.opened.insert(u);
        self.expanded += 1;
        let live: Vec<NodeId> = children.into_iter().filter(|&c| !self.tree.node(c).terminal).collect();
        let scores = scorer.score(self.tree, &live, g);
        for (&c, s) in live.iter().zip(scores) {
            self.tree.node_mut(c).predicted_score = Some(s);
            self.predicted.insert(c, s);
        }
        live
    }

    fn run(&mut self, scorer: &mut dyn NodeScorer, g: &Instruction) {
        while self.expanded < self.budget {
            let Some(top) = self.frontier.pop() else {
                break;
            };
            if !self.can_open(top.node) {
                continue;
            }
            for c in self.expand(top.node, TraceAction::Expand, scorer, g) {
                self.push(c);
            }
        }
    }

    /// Highest-priority scored node whose prefix satisfies `g`, else the
    /// highest-priority scored node, else the root.
    fn choose(&self, g: &Instruction) -> NodeId {
        let entries: Vec<Entry> = self
            .predicted
            .keys()
            .map(|&u| Entry {
                priority: self.priority(u),
                depth: self.tree.node(u).depth(),
                node: u,
            })
            .collect();
        let satisfying = entries
            .iter()
            .filter(|e| satisfies(&self.tree.node(e.node).prefix, g))
            .max()
            .copied();
        satisfying
            .or_else(|| entries.iter().max().copied())
            .map_or(EventTree::ROOT, |e| e.node)
    }
}

/// Best-first search inside an existing tree. With a non-empty `observed`
/// sequence the search first expands along it (up to `n_observed` events),
/// corrects the scores on that path, and seeds the frontier from every
/// scored node; otherwise it starts from the root.
pub fn search_in_tree(
    tree: &mut EventTree,
    g: &Instruction,
    observed: &[SemanticEvent],
    scorer: &mut dyn NodeScorer,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<SearchResult, SearchError> {
    if cfg.node_budget == 0 {
        return Err(SearchError::ZeroBudget);
    }
    let mut s = Search {
        tree,
        budget: cfg.node_budget,
        expanded: 0,
        predicted: BTreeMap::new(),
        corrected: BTreeMap::new(),
        frontier: BinaryHeap::new(),
        trace: Vec::new(),
        opened: BTreeSet::new(),
    };
    let trimmed = &observed[..observed.len().min(cfg.n_observed)];
    let mut observed_node = None;
    if trimmed.is_empty() {
        s.push(EventTree::ROOT);
    } else {
        let mut u = EventTree::ROOT;
        for &event in trimmed {
            if !s.opened.contains(&u) {
                if s.expanded >= s.budget || !s.can_open(u) {
                    break;
                }
                s.expand(u, TraceAction::FollowObserved, scorer, g);
            }
            match s.tree.child_with_event(u, event) {
                Some(c) => u = c,
                None => break,
            }
        }
        observed_node = Some(u);
        if u != EventTree::ROOT {
            let v_obs = s.predicted[&u];
            for a in s.tree.path_to(u).into_iter().skip(1) {
                let fr = fr_estimate(s.tree, u, a).expect("tree nodes hold samples");
                let c = counterfactual_update(s.predicted[&a], v_obs, fr);
                s.corrected.insert(a, c.clamped);
            }
        }
        let seeds: Vec<NodeId> = std::iter::once(EventTree::ROOT)
            .chain(s.predicted.keys().copied())
            .filter(|&n| s.can_open(n))
            .collect();
        for n in seeds {
            s.push(n);
        }
    }
    s.run(scorer, g);
    let chosen = s.choose(g);
    s.record(chosen, TraceAction::Choose);
    let mut pick = rng::stream(seed, "search-pick", 0);
    let intervention = s.tree.select_intervention(chosen, &mut pick)?;
    let node = s.tree.node(chosen);
    Ok(SearchResult {
        chosen,
        chosen_prefix: node.prefix.clone(),
        chosen_samples: node.sample_count(),
        intervention,
        expanded: s.expanded,
        tree_nodes: s.tree.len(),
        observed_node,
        trace: s.trace,
    })
}

pub fn max_likelihood_search(
    scene: &Scene,
    g: &Instruction,
    scorer: &mut dyn NodeScorer,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<SearchResult, SearchError> {
    let mut tree = EventTree::init_root(scene, cfg.tree, rng::derive_seed(seed, "search-tree", 0))?;
    search_in_tree(&mut tree, g, &[], scorer, cfg, seed)
}

pub fn counterfactual_search(
    scene: &Scene,
    g: &Instruction,
    observed: &[SemanticEvent],
    scorer: &mut dyn NodeScorer,
    cfg: &SearchConfig,
    seed: u64,
) -> Result<SearchResult, SearchError> {
    let mut tree = EventTree::init_root(scene, cfg.tree, rng::derive_seed(seed, "search-tree", 0))?;
    search_in_tree(&mut tree, g, observed, scorer, cfg, seed)
}

/// Replays a trace and returns the steps at which an expanded node had a
/// lower priority than some node still waiting in the frontier.
pub fn frontier_order_violations(trace: &[TraceRecord]) -> Vec<usize> {
    let key = |r: &TraceRecord| r.corrected.or(r.predicted).unwrap_or(f64::INFINITY);
    let mut waiting: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut bad = Vec::new();
    for (k, r) in trace.iter().enumerate() {
        match r.action {
            TraceAction::Push => {
                waiting.insert(r.node, key(r));
            }
            TraceAction::Expand => {
                let p = waiting.remove(&r.node).unwrap_or(f64::NAN);
                if waiting.values().any(|&q| q > p) {
                    bad.push(k);
                }
            }
            TraceAction::FollowObserved | TraceAction::Choose => {}
        }
    }
    bad
}

/// Intervention sampler from a 2-D histogram of training interventions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomBaseline {
    pub bins: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Row-major over (x bin, y bin), summing to one.
    pub masses: Vec<f64>,
}

impl RandomBaseline {
    pub const DEFAULT_BINS: usize = 30;

    /// `None` for an empty training set.
    pub fn fit(train: &[Intervention], bins: usize) -> Option<Self> {
        if train.is_empty() || bins == 0 {
            return None;
        }
        let range = |f: fn(&Intervention) -> f64| {
            let lo = train.iter().map(f).fold(f64::INFINITY, f64::min);
            let hi = train.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            if hi - lo < 1e-9 {
                (lo - 0.5e-3, hi + 0.5e-3)
            } else {
                (lo, hi)
            }
        };
        let x_range = range(|y| y.velocity.x);
        let y_range = range(|y| y.velocity.y);
        let mut masses = vec![0.0; bins * bins];
        let bin = |v: f64, (lo, hi): (f64, f64)| (((v - lo) / (hi - lo) * bins as f64) as usize).min(bins - 1);
        for y in train {
            masses[bin(y.velocity.x, x_range) * bins + bin(y.velocity.y, y_range)] += 1.0;
        }
        for m in &mut masses {
            *m /= train.len() as f64;
        }
        Some(Self {
            bins,
            x_range,
            y_range,
            masses,
        })
    }

    pub fn bin_of(&self, y: &Intervention) -> usize {
        let b = self.bins;
        let bin = |v: f64, (lo, hi): (f64, f64)| {
            (((v - lo) / (hi - lo) * b as f64).floor().max(0.0) as usize).min(b - 1)
        };
        bin(y.velocity.x, self.x_range) * b + bin(y.velocity.y, self.y_range)
    }

    pub fn sample(&self, rng: &mut Rng) -> Intervention {
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        let mut k = self.masses.iter().rposition(|&m| m > 0.0).unwrap_or(0);
        for (i, &m) in self.masses.iter().enumerate() {
            acc += m;
            if u < acc {
                k = i;
                break;
            }
        }
        let (ix, iy) = (k / self.bins, k % self.bins);
        let width = |(lo, hi): (f64, f64)| (hi - lo) / self.bins as f64;
        let (wx, wy) = (width(self.x_range), width(self.y_range));
        Intervention::new(
            self.x_range.0 + (ix as f64 + rng.gen_range(0.0..1.0)) * wx,
            self.y_range.0 + (iy as f64 + rng.gen_range(0.0..1.0)) * wy,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ObjectId, ObjectState, Vec2};
    use crate::scoring::sample_satisfaction;

    fn scene() -> Scene {
        Scene {
            objects: vec![
                ObjectState::disc(ObjectId::BALLS[0], Vec2::new(-3.0, 0.0), Vec2::new(1.0, 0.0), 0.4),
                ObjectState::disc(ObjectId::BALLS[1], Vec2::new(0.0, 0.5), Vec2::ZERO, 0.4),
                ObjectState::disc(ObjectId::BALLS[2], Vec2::new(2.0, -2.0), Vec2::new(0.0, 0.5), 0.3),
                ObjectState::pin(ObjectId::PINS[0], Vec2::new(0.0, 3.0), 0.4),
            ],
            pivot: Some(ObjectId::BALLS[0]),
        }
    }

    fn instruction() -> Instruction {
        Instruction::new(
            ObjectId::BALLS[0],
            SemanticEvent::new(ObjectId::BALLS[1], ObjectId::WALLS[3]),
        )
    }

    fn cfg(budget: usize, samples: usize) -> SearchConfig {
        SearchConfig {
            node_budget: budget,
            tree: TreeConfig {
                sample_count: samples,
                ..TreeConfig::default()
            },
            ..SearchConfig::default()
        }
    }

    /// Deterministic stand-in for a model: a hash of the node prefix.
    struct HashScorer;

    impl NodeScorer for HashScorer {
        fn score(&mut self, tree: &EventTree, nodes: &[NodeId], _g: &Instruction) -> Vec<f64> {
            nodes
                .iter()
                .map(|&u| {
                    let h = tree.node(u).prefix.iter().fold(17u64, |h, e| {
                        h.wrapping_mul(31).wrapping_add((e.a.index() * 12 + e.b.index()) as u64)
                    });
                    (h % 1000) as f64 / 1000.0
                })
                .collect()
        }
    }

    #[test]
    fn budget_is_respected_and_frontier_is_ordered() {
        for budget in [1, 5, 30] {
            let r = max_likelihood_search(&scene(), &instruction(), &mut HashScorer, &cfg(budget, 2000), 3).unwrap();
            assert!(r.expanded <= budget);
            assert!(frontier_order_violations(&r.trace).is_empty());
        }
    }

    #[test]
    fn budget_one_expands_only_the_root() {
        let r = max_likelihood_search(&scene(), &instruction(), &mut HashScorer, &cfg(1, 500), 3).unwrap();
        assert_eq!(r.expanded, 1);
        assert_eq!(r.chosen_prefix.len(), 1);
        let expands: Vec<_> = r.trace.iter().filter(|t| t.action == TraceAction::Expand).collect();
        assert_eq!(expands.len(), 1);
        assert_eq!(expands[0].node, EventTree::ROOT);
    }

    #[test]
    fn empty_observation_reduces_to_max_likelihood() {
        let c = cfg(20, 1000);
        let ml = max_likelihood_search(&scene(), &instruction(), &mut HashScorer, &c, 8).unwrap();
        let cf = counterfactual_search(&scene(), &instruction(), &[], &mut HashScorer, &c, 8).unwrap();
        assert_eq!(ml, cf);
        let obs = vec![SemanticEvent::new(ObjectId::BALLS[0], ObjectId::BALLS[1])];
        let zero = SearchConfig { n_observed: 0, ..c };
        let cf0 = counterfactual_search(&scene(), &instruction(), &obs, &mut HashScorer, &zero, 8).unwrap();
        assert_eq!(ml, cf0);
    }

    #[test]
    fn counterfactual_counts_observed_expansions_in_the_budget() {
        let tree = EventTree::init_root(&scene(), cfg(1, 1000).tree, 5).unwrap();
        let y = tree.interventions()[0];
        let w = scene().with_intervention(&y).unwrap();
        let obs = crate::dynamics::events_of(&crate::dynamics::rollout_events(&w, 12, 60.0).unwrap());
        for budget in [1, 3, 10, 40] {
            let c = cfg(budget, 1000);
            let r = counterfactual_search(&scene(), &instruction(), &obs, &mut HashScorer, &c, 5).unwrap();
            assert!(r.expanded <= budget);
            let follow = r.trace.iter().filter(|t| t.action == TraceAction::FollowObserved).count();
            let expand = r.trace.iter().filter(|t| t.action == TraceAction::Expand).count();
            assert_eq!(follow + expand, r.expanded);
            assert!(frontier_order_violations(&r.trace).is_empty());
        }
    }

    #[test]
    fn sample_exact_observed_leaf_is_zeroed_and_off_path_untouched() {
        let c = SearchConfig {
            n_observed: 30,
            ..cfg(60, 1500)
        };
        let mut tree = EventTree::init_root(&scene(), c.tree, 2).unwrap();
        let g = instruction();
        let sat = sample_satisfaction(&tree, &g);
        let y = tree.interventions()[0];
        let w = scene().with_intervention(&y).unwrap();
        let obs = crate::dynamics::events_of(&crate::dynamics::rollout_events(&w, 4, 60.0).unwrap());
        let mut oracle = OracleScorer { satisfied: sat };
        let r = search_in_tree(&mut tree, &g, &obs, &mut oracle, &c, 2).unwrap();
        let u_obs = r.observed_node.unwrap();
        let path = tree.path_to(u_obs);
        assert_ne!(u_obs, EventTree::ROOT);
        let sat = oracle.satisfied;
        for t in r.trace.iter().filter(|t| t.action == TraceAction::Push) {
            if !path.contains(&t.node) {
                assert!(t.corrected.is_none());
                continue;
            }
            // Sample-exact scores: the correction removes exactly the
            // satisfying samples that went down the observed branch.
            let a = &tree.node(t.node).samples;
            let obs_samples = &tree.node(u_obs).samples;
            let rest = a.iter().filter(|k| sat[**k as usize] && !obs_samples.contains(k)).count();
            let expect = rest as f64 / a.len() as f64;
            assert!((t.corrected.unwrap() - expect).abs() < 1e-12);
            if t.node == u_obs {
                assert_eq!(t.corrected, Some(0.0));
            }
        }
    }

    #[test]
    fn oracle_search_finds_the_best_node_of_a_small_tree() {
        let small = SearchConfig {
            tree: TreeConfig {
                sample_count: 300,
                max_depth: 3,
                ..TreeConfig::default()
            },
            node_budget: 1000,
            ..SearchConfig::default()
        };
        let g = instruction();
        let mut tree = EventTree::init_root(&scene(), small.tree, 6).unwrap();
        let mut full = tree.clone();
        let sat = sample_satisfaction(&tree, &g);
        let mut oracle = OracleScorer { satisfied: sat.clone() };
        let r = search_in_tree(&mut tree, &g, &[], &mut oracle, &small, 1).unwrap();
        let mut stack = vec![EventTree::ROOT];
        while let Some(u) = stack.pop() {
            if full.is_expandable(u) {
                stack.extend(full.expand_node(u).unwrap());
            }
        }
        let best = full
            .nodes()
            .iter()
            .filter(|n| n.id != EventTree::ROOT && !n.terminal)
            .map(|n| sample_fraction(&full, n.id, &sat))
            .fold(0.0, f64::max);
        assert_eq!(sample_fraction(&tree, r.chosen, &sat), best);
    }

    #[test]
    fn shared_tree_gives_the_same_search() {
        let c = cfg(25, 2000);
        let other = Instruction::new(
            ObjectId::BALLS[2],
            SemanticEvent::new(ObjectId::BALLS[2], ObjectId::WALLS[1]),
        );
        let mut shared = EventTree::init_root(&scene(), c.tree, 9).unwrap();
        search_in_tree(&mut shared, &other, &[], &mut HashScorer, &c, 1).unwrap();
        let reused = search_in_tree(&mut shared, &instruction(), &[], &mut HashScorer, &c, 1).unwrap();
        let mut fresh_tree = EventTree::init_root(&scene(), c.tree, 9).unwrap();
        let fresh = search_in_tree(&mut fresh_tree, &instruction(), &[], &mut HashScorer, &c, 1).unwrap();
        assert_eq!(reused.chosen_prefix, fresh.chosen_prefix);
        assert_eq!(reused.intervention, fresh.intervention);
        assert_eq!(reused.expanded, fresh.expanded);
    }

    #[test]
    fn histogram_baseline() {
        let train: Vec<Intervention> = (0..200).map(|k| Intervention::new(1.0 + (k % 7) as f64 * 0.1, -0.5)).collect();
        let h = RandomBaseline::fit(&train, RandomBaseline::DEFAULT_BINS).unwrap();
        assert!((h.masses.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut rng = rng::stream(1, "h", 0);
        for _ in 0..100 {
            let y = h.sample(&mut rng);
            assert!(h.masses[h.bin_of(&y)] > 0.0);
        }
        let one = RandomBaseline::fit(&[Intervention::new(0.3, 0.4)], 30).unwrap();
        let y = one.sample(&mut rng);
        assert!((y.velocity.x - 0.3).abs() < 1e-3 && (y.velocity.y - 0.4).abs() < 1e-3);
        assert!(RandomBaseline::fit(&[], 30).is_none());
    }

    #[test]
    fn histogram_draw_frequencies_match_masses() {
        let mut rng = rng::stream(4, "train", 0);
        let dist = crate::event_tree::InterventionDistribution::default();
        let train: Vec<Intervention> = (0..5000).map(|_| dist.sample(&mut rng)).collect();
        let h = RandomBaseline::fit(&train, RandomBaseline::DEFAULT_BINS).unwrap();
        let draws = 1_000_000;
        let mut freq = vec![0.0; h.masses.len()];
        for _ in 0..draws {
            freq[h.bin_of(&h.sample(&mut rng))] += 1.0 / draws as f64;
        }
        let tv: f64 = freq.iter().zip(&h.masses).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.02, "tv {tv}");
    }
}
