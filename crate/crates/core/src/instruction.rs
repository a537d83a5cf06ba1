//! Structured instructions, the event DAG of a cascade and the satisfaction
//! check.
//!
//! In the DAG every event is a node and an edge `i -> j` labelled with ball
//! `o` means `o`'s previous event before `j` was `i`. Pins and walls carry no
//! state between events, so they never link events.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ObjectId, SemanticEvent};
use crate::rng::Rng;

/// Length of [`embed`]'s output: five one-hot objects and three scalars.
pub const EMBEDDING_DIM: usize = 5 * ObjectId::COUNT + 3;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub pivot: ObjectId,
    pub target: SemanticEvent,
    pub bottleneck: Option<SemanticEvent>,
    pub count: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionKind {
    Unconstrained,
    Bottleneck,
    Count,
    BottleneckAndCount,
}

impl InstructionKind {
    pub fn label(self) -> &'static str {
        match self {
            InstructionKind::Unconstrained => "unconstrained",
            InstructionKind::Bottleneck => "bottleneck",
            InstructionKind::Count => "count",
            InstructionKind::BottleneckAndCount => "b&c",
        }
    }
}

impl Instruction {
    pub fn new(pivot: ObjectId, target: SemanticEvent) -> Self {
        Self {
            pivot,
            target,
            bottleneck: None,
            count: None,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.pivot.is_ball() && self.count.map_or(true, |c| c >= 1)
    }

    pub fn kind(&self) -> InstructionKind {
        match (self.bottleneck.is_some(), self.count.is_some()) {
            (false, false) => InstructionKind::Unconstrained,
            (true, false) => InstructionKind::Bottleneck,
            (false, true) => InstructionKind::Count,
            (true, true) => InstructionKind::BottleneckAndCount,
        }
    }

    pub fn constraint_count(&self) -> usize {
        self.bottleneck.is_some() as usize + self.count.is_some() as usize
    }

    /// Two or more constraints, or a chain count of at least five.
    pub fn is_hard(&self) -> bool {
        self.constraint_count() >= 2 || self.count.map_or(false, |c| c >= 5)
    }

    fn key(&self) -> (SemanticEvent, Option<SemanticEvent>, Option<u32>) {
        (self.target, self.bottleneck, self.count)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct DagEdge {
    pub from: usize,
    pub to: usize,
    pub shared: ObjectId,
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct EventDag {
    pub events: Vec<SemanticEvent>,
    pub edges: Vec<DagEdge>,
    parents: Vec<Vec<usize>>,
    children: Vec<Vec<usize>>,
}

pub fn build_dag(seq: &[SemanticEvent]) -> EventDag {
    let mut last: [Option<usize>; ObjectId::COUNT] = [None; ObjectId::COUNT];
    let mut edges = Vec::new();
    let mut parents = vec![Vec::new(); seq.len()];
    let mut children = vec![Vec::new(); seq.len()];
    for (j, e) in seq.iter().enumerate() {
        for o in e.objects() {
            if !o.is_ball() {
                continue;
            }
            if let Some(i) = last[o.index()] {
                edges.push(DagEdge {
                    from: i,
                    to: j,
                    shared: o,
                });
                if !parents[j].contains(&i) {
                    parents[j].push(i);
                    children[i].push(j);
                }
            }
            last[o.index()] = Some(j);
        }
    }
    EventDag {
        events: seq.to_vec(),
        edges,
        parents,
        children,
    }
}

impl EventDag {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn parents(&self, j: usize) -> &[usize] {
        &self.parents[j]
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// Strict ancestors of `j`, as a membership mask.
    pub fn ancestors(&self, j: usize) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        let mut stack = self.parents[j].clone();
        while let Some(i) = stack.pop() {
            if !mask[i] {
                mask[i] = true;
                stack.extend_from_slice(&self.parents[i]);
            }
        }
        mask
    }

    /// Strict descendants of `i`, as a membership mask.
    pub fn descendants(&self, i: usize) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        let mut stack = self.children[i].clone();
        while let Some(j) = stack.pop() {
            if !mask[j] {
                mask[j] = true;
                stack.extend_from_slice(&self.children[j]);
            }
        }
        mask
    }

    /// Number of distinct events lying on some path from `from` to `to`,
    /// both ends included; zero when `to` is unreachable.
    pub fn chain_count(&self, from: usize, to: usize) -> u32 {
        if from == to {
            return 1;
        }
        if from > to {
            return 0;
        }
        let down = self.descendants(from);
        if !down[to] {
            return 0;
        }
        let up = self.ancestors(to);
        2 + (0..self.len()).filter(|&k| down[k] && up[k]).count() as u32
    }
}

/// Index of the first event involving `pivot`.
pub fn first_pivot_event(seq: &[SemanticEvent], pivot: ObjectId) -> Option<usize> {
    seq.iter().position(|e| e.involves(pivot))
}

/// Whether the occurrence of the target at index `j` meets every constraint.
fn occurrence_satisfies(dag: &EventDag, j: usize, pivot_start: Option<usize>, g: &Instruction) -> bool {
    if let Some(b) = g.bottleneck {
        let up = dag.ancestors(j);
        if !(0..j).any(|i| up[i] && dag.events[i] == b) {
            return false;
        }
    }
    if let Some(count) = g.count {
        let chain = pivot_start.map_or(0, |s| dag.chain_count(s, j));
        if chain != count {
            return false;
        }
    }
    true
}

/// Some occurrence of the target event meets the bottleneck and count
/// constraints. Once a prefix satisfies `g`, every extension does too.
pub fn satisfies(seq: &[SemanticEvent], g: &Instruction) -> bool {
    if !seq.contains(&g.target) {
        return false;
    }
    let dag = build_dag(seq);
    let start = first_pivot_event(seq, g.pivot);
    (0..seq.len())
        .filter(|&j| seq[j] == g.target)
        .any(|j| occurrence_satisfies(&dag, j, start, g))
}

/// Length of the shortest prefix of `seq` that satisfies `g`.
pub fn satisfying_prefix_len(seq: &[SemanticEvent], g: &Instruction) -> Option<usize> {
    if !seq.contains(&g.target) {
        return None;
    }
    let dag = build_dag(seq);
    let start = first_pivot_event(seq, g.pivot);
    (0..seq.len())
        .find(|&j| seq[j] == g.target && occurrence_satisfies(&dag, j, start, g))
        .map(|j| j + 1)
}

fn one_hot(out: &mut [f64], id: ObjectId) {
    out[id.index()] = 1.0;
}

/// Fixed-layout vector: target a, target b, pivot, bottleneck a, bottleneck b
/// (one-hot, 12 each), then bottleneck indicator, count, count indicator.
pub fn embed(g: &Instruction) -> [f64; EMBEDDING_DIM] {
    let n = ObjectId::COUNT;
    let mut v = [0.0; EMBEDDING_DIM];
    one_hot(&mut v[0..n], g.target.a);
    one_hot(&mut v[n..2 * n], g.target.b);
    one_hot(&mut v[2 * n..3 * n], g.pivot);
    if let Some(b) = g.bottleneck {
        one_hot(&mut v[3 * n..4 * n], b.a);
        one_hot(&mut v[4 * n..5 * n], b.b);
        v[5 * n] = 1.0;
    }
    if let Some(c) = g.count {
        v[5 * n + 1] = c as f64;
        v[5 * n + 2] = 1.0;
    }
    v
}

/// Up to `max_k` distinct instructions met by `solution` but not by
/// `observed`. Targets are drawn from the solution sequence; bottlenecks from
/// the target's DAG ancestors; counts from the pivot-to-target chain.
pub fn sample_instructions(
    solution: &[SemanticEvent],
    observed: &[SemanticEvent],
    pivot: ObjectId,
    max_k: usize,
    rng: &mut Rng,
) -> Vec<Instruction> {
    let mut out: Vec<Instruction> = Vec::new();
    if solution.is_empty() || max_k == 0 {
        return out;
    }
    let dag = build_dag(solution);
    let start = first_pivot_event(solution, pivot);
    let mut seen = BTreeSet::new();
    let attempts = 20 * max_k;
    for _ in 0..attempts {
        if out.len() >= max_k {
            break;
        }
        let j = rng.gen_range(0..solution.len());
        let up = dag.ancestors(j);
        let bottlenecks: Vec<SemanticEvent> = (0..j).filter(|&i| up[i]).map(|i| solution[i]).collect();
        let chain = start.map_or(0, |s| dag.chain_count(s, j));
        let mut g = Instruction::new(pivot, solution[j]);
        if rng.gen_bool(0.5) {
            g.bottleneck = bottlenecks.choose(rng).copied();
        }
        if rng.gen_bool(0.5) && chain > 0 {
            g.count = Some(chain);
        }
        if !seen.insert(g.key()) {
            continue;
        }
        if satisfies(solution, &g) && !satisfies(observed, &g) {
            out.push(g);
        }
    }
    out
}
