//! Episode generation: build an unperturbed cascade by adding discs that are
//! aimed at existing ones, perturb one disc to get the observed cascade, and
//! sample instructions that separate the two.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    self, contact_distance, DynamicsError, ObjectId, ObjectState, SemanticEvent, Vec2, WorldState,
    DEFAULT_HORIZON, TABLE_HALF_WIDTH,
};
use crate::event_tree::{Intervention, InterventionDistribution, MAX_TREE_DEPTH};
use crate::instruction::{sample_instructions, satisfies, Instruction};
use crate::rng::{self, Rng};

pub const SCHEMA_NAME: &str = "cascade-episodes";
pub const SCHEMA_VERSION: u32 = 1;

/// Minimum clearance kept between objects (and from walls) at `t = 0`.
const PLACEMENT_MARGIN: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// Discs and pins, ordered by id.
    pub objects: Vec<ObjectState>,
    pub pivot: Option<ObjectId>,
}

impl Scene {
    pub fn initial_state(&self) -> WorldState {
        WorldState::new(self.objects.clone())
    }

    /// Initial state with the pivot's velocity replaced by `y`.
    pub fn with_intervention(&self, y: &Intervention) -> Option<WorldState> {
        let mut w = self.initial_state();
        let k = w.find(self.pivot?)?;
        w.objects[k].velocity = y.velocity;
        Some(w)
    }

    pub fn ball_count(&self) -> usize {
        self.objects.iter().filter(|o| o.id.is_ball()).count()
    }

    pub fn pin_count(&self) -> usize {
        self.objects.iter().filter(|o| o.id.is_pin()).count()
    }

    /// Smallest gap between any two objects or between a disc and a wall.
    pub fn min_clearance(&self) -> f64 {
        let mut worst = f64::INFINITY;
        for (i, a) in self.objects.iter().enumerate() {
            let limit = TABLE_HALF_WIDTH - a.radius;
            worst = worst.min(limit - a.position.x.abs()).min(limit - a.position.y.abs());
            for b in &self.objects[i + 1..] {
                worst = worst.min((a.position - b.position).norm() - contact_distance(a.radius, b.radius));
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub min_balls: usize,
    pub max_balls: usize,
    pub min_pins: usize,
    pub max_pins: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Delay of each planned collision after the previous planned one.
    pub min_hit_delay: f64,
    pub max_hit_delay: f64,
    pub speeds: InterventionDistribution,
    pub placement_retries: usize,
    pub perturbation_retries: usize,
    pub max_instructions: usize,
    pub rollout_depth: usize,
    pub horizon: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            min_balls: 4,
            max_balls: 6,
            min_pins: 0,
            max_pins: 2,
            min_radius: 0.3,
            max_radius: 0.5,
            min_hit_delay: 0.3,
            max_hit_delay: 3.0,
            speeds: InterventionDistribution::default(),
            placement_retries: 50,
            perturbation_retries: 20,
            max_instructions: 5,
            rollout_depth: MAX_TREE_DEPTH,
            horizon: DEFAULT_HORIZON,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("could not place disc {0} after the retry budget")]
    Placement(ObjectId),
    #[error("perturbation kept reproducing the solution cascade")]
    Perturbation,
    #[error("no instruction separates the solution from the observed cascade")]
    NoInstruction,
    #[error("bad ball/pin counts: {balls} balls, {pins} pins")]
    Counts { balls: usize, pins: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum PlacementReject {
    #[error("zero hit speed")]
    ZeroSpeed,
    #[error("start position outside the table")]
    OutsideTable,
    #[error("non-positive hit time")]
    BadTime,
}

/// Start position and velocity of a disc of radius `radius` that reaches the
/// target disc (at `target` at time `t_hit`, radius `target_radius`) moving
/// with `speed` along `angle`, assuming both move freely until then.
pub fn solve_initial_conditions(
    target: Vec2,
    target_radius: f64,
    radius: f64,
    t_hit: f64,
    angle: f64,
    speed: f64,
) -> Result<(Vec2, Vec2), PlacementReject> {
    if !(t_hit > 0.0) {
        return Err(PlacementReject::BadTime);
    }
    if !(speed > 0.0) {
        return Err(PlacementReject::ZeroSpeed);
    }
    let dir = Vec2::from_polar(1.0, angle);
    let velocity = dir * speed;
    let contact = target - dir * contact_distance(target_radius, radius);
    let start = contact - velocity * t_hit;
    let limit = TABLE_HALF_WIDTH - radius - PLACEMENT_MARGIN;
    if start.x.abs() > limit || start.y.abs() > limit {
        return Err(PlacementReject::OutsideTable);
    }
    Ok((start, velocity))
}

/// Event-driven state at absolute time `t`.
pub fn state_at(w0: &WorldState, t: f64) -> Result<WorldState, DynamicsError> {
    let mut w = w0.clone();
    loop {
        let mut next = w.clone();
        match dynamics::advance_to_next_event(&mut next, t)? {
            Some(_) => w = next,
            None => return Ok(w.advanced_to(t)),
        }
    }
}

fn clear_of(objects: &[ObjectState], position: Vec2, radius: f64) -> bool {
    objects.iter().all(|o| {
        (o.position - position).norm() >= contact_distance(o.radius, radius) + PLACEMENT_MARGIN
    })
}

fn random_position(rng: &mut Rng, radius: f64) -> Vec2 {
    let limit = TABLE_HALF_WIDTH - radius - PLACEMENT_MARGIN;
    Vec2::new(rng.gen_range(-limit..limit), rng.gen_range(-limit..limit))
}

fn sorted(mut objects: Vec<ObjectState>) -> Vec<ObjectState> {
    objects.sort_by_key(|o| o.id);
    objects
}

/// Build a scene by iteratively adding discs aimed at existing ones.
/// Returns the scene (no pivot yet) and its collision sequence.
pub fn generate_scene(
    n_balls: usize,
    n_pins: usize,
    cfg: &GenConfig,
    rng: &mut Rng,
) -> Result<(Scene, Vec<dynamics::Collision>), GenError> {
    if !(1..=ObjectId::BALLS.len()).contains(&n_balls) || n_pins > ObjectId::PINS.len() {
        return Err(GenError::Counts {
            balls: n_balls,
            pins: n_pins,
        });
    }
    let mut colors = ObjectId::BALLS.to_vec();
    colors.shuffle(rng);
    colors.truncate(n_balls);
    let mut pins = ObjectId::PINS.to_vec();
    pins.shuffle(rng);
    pins.truncate(n_pins);

    let mut objects: Vec<ObjectState> = Vec::new();
    for id in pins {
        let placed = (0..cfg.placement_retries).find_map(|_| {
            let r = rng.gen_range(cfg.min_radius..=cfg.max_radius);
            let p = random_position(rng, r);
            clear_of(&objects, p, r).then(|| ObjectState::pin(id, p, r))
        });
        objects.push(placed.ok_or(GenError::Placement(id))?);
    }

    let first = colors[0];
    let placed = (0..cfg.placement_retries).find_map(|_| {
        let r = rng.gen_range(cfg.min_radius..=cfg.max_radius);
        let p = random_position(rng, r);
        let v = cfg.speeds.sample(rng).velocity;
        clear_of(&objects, p, r).then(|| ObjectState::disc(first, p, v, r))
    });
    objects.push(placed.ok_or(GenError::Placement(first))?);

    // Planned collisions are scheduled one after another on their own clock.
    let mut t_last = 0.0;
    for &id in &colors[1..] {
        let world = WorldState::new(sorted(objects.clone()));
        let mut placed = None;
        for _ in 0..cfg.placement_retries {
            let r = rng.gen_range(cfg.min_radius..=cfg.max_radius);
            let t_hit = t_last + rng.gen_range(cfg.min_hit_delay..=cfg.max_hit_delay);
            let angle = rng.gen_range(0.0..TAU);
            let speed = rng.gen_range(cfg.speeds.min_speed..=cfg.speeds.max_speed);
            let targets: Vec<&ObjectState> = objects.iter().filter(|o| o.mobile).collect();
            let target = **targets.choose(rng).expect("at least one disc placed");
            if t_hit >= cfg.horizon {
                continue;
            }
            let at_hit = state_at(&world, t_hit)?;
            let k = at_hit.find(target.id).expect("target in world");
            let target_pos = at_hit.objects[k].position_at(t_hit);
            let Ok((start, velocity)) =
                solve_initial_conditions(target_pos, target.radius, r, t_hit, angle, speed)
            else {
                continue;
            };
            if clear_of(&objects, start, r) {
                placed = Some(ObjectState::disc(id, start, velocity, r));
                t_last = t_hit;
                break;
            }
        }
        objects.push(placed.ok_or(GenError::Placement(id))?);
    }

    let scene = Scene {
        objects: sorted(objects),
        pivot: None,
    };
    let events = dynamics::rollout_events(&scene.initial_state(), cfg.rollout_depth, cfg.horizon)?;
    Ok((scene, events))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub pivot: ObjectId,
    pub y_star: Intervention,
    pub y_obs: Intervention,
    pub observed: Vec<SemanticEvent>,
    pub attempts: usize,
}

/// Pick a pivot and a new velocity for it whose cascade differs from
/// `solution`.
pub fn perturb_pivot(
    scene: &Scene,
    solution: &[SemanticEvent],
    cfg: &GenConfig,
    rng: &mut Rng,
) -> Result<Perturbation, GenError> {
    let discs: Vec<&ObjectState> = scene.objects.iter().filter(|o| o.mobile).collect();
    let pivot = **discs.choose(rng).ok_or(GenError::Perturbation)?;
    let y_star = Intervention {
        velocity: pivot.velocity,
    };
    let mut probe = scene.clone();
    probe.pivot = Some(pivot.id);
    for attempt in 1..=cfg.perturbation_retries {
        let y_obs = cfg.speeds.sample(rng);
        let w = probe.with_intervention(&y_obs).expect("pivot present");
        let observed = dynamics::events_of(&dynamics::rollout_events(&w, cfg.rollout_depth, cfg.horizon)?);
        if observed != solution {
            return Ok(Perturbation {
                pivot: pivot.id,
                y_star,
                y_obs,
                observed,
                attempts: attempt,
            });
        }
    }
    Err(GenError::Perturbation)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scene_id: u64,
    pub scene: Scene,
    pub instructions: Vec<Instruction>,
    pub y_star: Intervention,
    pub solution_seq: Vec<SemanticEvent>,
    pub y_obs: Intervention,
    pub observed_seq: Vec<SemanticEvent>,
}

impl EpisodeRecord {
    pub fn pivot(&self) -> ObjectId {
        self.scene.pivot.expect("episode scenes carry a pivot")
    }

    /// Re-run both cascades and re-check every instruction. Returns a
    /// description of the first violated invariant.
    pub fn verify(&self, cfg: &GenConfig) -> Result<(), String> {
        let roll = |y: &Intervention| -> Result<Vec<SemanticEvent>, String> {
            let w = self.scene.with_intervention(y).ok_or("scene has no pivot")?;
            dynamics::rollout_events(&w, cfg.rollout_depth, cfg.horizon)
                .map(|c| dynamics::events_of(&c))
                .map_err(|e| e.to_string())
        };
        if roll(&self.y_star)? != self.solution_seq {
            return Err("solution intervention does not reproduce the solution sequence".into());
        }
        if roll(&self.y_obs)? != self.observed_seq {
            return Err("observed intervention does not reproduce the observed sequence".into());
        }
        if self.observed_seq == self.solution_seq {
            return Err("observed and solution sequences coincide".into());
        }
        if self.scene.min_clearance() < 0.0 {
            return Err("initial placement overlaps".into());
        }
        for g in &self.instructions {
            if !satisfies(&self.solution_seq, g) || satisfies(&self.observed_seq, g) {
                return Err(format!("instruction {g:?} does not separate the cascades"));
            }
        }
        Ok(())
    }
}

/// One full episode for scene `scene_id`, drawing everything from `seed`.
pub fn generate_episode(scene_id: u64, seed: u64, cfg: &GenConfig) -> Result<EpisodeRecord, GenError> {
    let mut rng = rng::stream(seed, "datagen", scene_id);
    let n_balls = rng.gen_range(cfg.min_balls..=cfg.max_balls);
    let n_pins = rng.gen_range(cfg.min_pins..=cfg.max_pins);
    let (mut scene, collisions) = generate_scene(n_balls, n_pins, cfg, &mut rng)?;
    let solution = dynamics::events_of(&collisions);
    let p = perturb_pivot(&scene, &solution, cfg, &mut rng)?;
    scene.pivot = Some(p.pivot);
    let instructions = sample_instructions(&solution, &p.observed, p.pivot, cfg.max_instructions, &mut rng);
    if instructions.is_empty() {
        return Err(GenError::NoInstruction);
    }
    Ok(EpisodeRecord {
        scene_id,
        scene,
        instructions,
        y_star: p.y_star,
        solution_seq: solution,
        y_obs: p.y_obs,
        observed_seq: p.observed,
    })
}

/// Episode for `scene_id`, retrying with later attempt indices when a draw
/// fails. `None` only if every attempt fails.
pub fn generate_episode_with_retries(
    scene_id: u64,
    seed: u64,
    cfg: &GenConfig,
    attempts: usize,
) -> Option<(EpisodeRecord, usize)> {
    (0..attempts as u64).find_map(|k| {
        let sub = rng::derive_seed(seed, "scene-attempt", k);
        generate_episode(scene_id, sub, cfg).ok().map(|r| (r, k as usize))
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("missing schema header")]
    MissingHeader,
    #[error("unsupported schema {found}, expected {expected}")]
    Schema { found: String, expected: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

pub fn write_dataset(records: &[EpisodeRecord], path: &Path) -> Result<(), DatasetError> {
    let mut out = BufWriter::new(File::create(path)?);
    write_jsonl(SCHEMA_NAME, records, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Header line naming `schema`, then one JSON record per line.
pub fn write_jsonl<T: Serialize, W: Write>(schema: &str, records: &[T], out: &mut W) -> Result<(), DatasetError> {
    let header = Header {
        schema: schema.into(),
        version: SCHEMA_VERSION,
    };
    serde_json::to_writer(&mut *out, &header).map_err(io::Error::from)?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut *out, r).map_err(io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<EpisodeRecord>, DatasetError> {
    read_jsonl(SCHEMA_NAME, BufReader::new(File::open(path)?))
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>, R: BufRead>(schema: &str, input: R) -> Result<Vec<T>, DatasetError> {
    let mut lines = input.lines();
    let first = lines.next().ok_or(DatasetError::MissingHeader)??;
    let header: Header = serde_json::from_str(&first).map_err(|_| DatasetError::MissingHeader)?;
    if header.schema != schema || header.version != SCHEMA_VERSION {
        return Err(DatasetError::Schema {
            found: format!("{} v{}", header.schema, header.version),
            expected: format!("{schema} v{SCHEMA_VERSION}"),
        });
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| DatasetError::Malformed {
            line: k + 2,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
}

/// Test and validation fractions of the full-scale corpus (470 and 69 of
/// 46K scenes).
pub const TEST_FRACTION: f64 = 470.0 / 46_000.0;
pub const VAL_FRACTION: f64 = 69.0 / 46_000.0;

/// Disjoint split of scene ids, shuffled with `seed`. Validation and test
/// each get at least one scene when at least three are available.
pub fn split_scenes(scene_ids: &[u64], val_fraction: f64, test_fraction: f64, seed: u64) -> Splits {
    let mut ids: Vec<u64> = scene_ids.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut rng = rng::stream(seed, "splits", 0);
    ids.shuffle(&mut rng);
    let n = ids.len();
    let at_least = |f: f64| {
        let k = (f * n as f64).round() as usize;
        if n >= 3 {
            k.max(1)
        } else {
            k
        }
    };
    let n_test = at_least(test_fraction).min(n);
    let n_val = at_least(val_fraction).min(n - n_test);
    let mut splits = Splits {
        test: ids[..n_test].to_vec(),
        val: ids[n_test..n_test + n_val].to_vec(),
        train: ids[n_test + n_val..].to_vec(),
    };
    splits.train.sort_unstable();
    splits.val.sort_unstable();
    splits.test.sort_unstable();
    splits
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn back_solve_head_on() {
        let (start, v) = solve_initial_conditions(Vec2::ZERO, 0.5, 0.5, 1.0, 0.0, 1.0).unwrap();
        assert!((start - Vec2::new(-2.0, 0.0)).norm() < 1e-12);
        assert_eq!(v, Vec2::new(1.0, 0.0));
        assert_eq!(
            solve_initial_conditions(Vec2::ZERO, 0.5, 0.5, 1.0, 0.0, 0.0),
            Err(PlacementReject::ZeroSpeed)
        );
        assert_eq!(
            solve_initial_conditions(Vec2::ZERO, 0.5, 0.5, 10.0, 0.0, 3.0),
            Err(PlacementReject::OutsideTable)
        );
    }

    #[test]
    fn back_solved_disc_hits_a_resting_target_on_time() {
        let mut rng = rng::stream(1, "ic", 0);
        let mut checked = 0;
        for _ in 0..200 {
            let target = ObjectState::disc(ObjectId::BALLS[0], Vec2::new(0.5, -1.0), Vec2::ZERO, 0.4);
            let t_hit = rng.gen_range(0.3..3.0);
            let Ok((start, v)) = solve_initial_conditions(
                target.position,
                target.radius,
                0.35,
                t_hit,
                rng.gen_range(0.0..TAU),
                rng.gen_range(0.5..3.0),
            ) else {
                continue;
            };
            let shooter = ObjectState::disc(ObjectId::BALLS[1], start, v, 0.35);
            let t = dynamics::pair_collision_time(&shooter, &target, 60.0).unwrap();
            assert!((t - t_hit).abs() < 1e-9);
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn four_ball_scene_has_collisions() {
        let cfg = GenConfig::default();
        for seed in 0..10 {
            let mut rng = rng::stream(seed, "scene", 0);
            let Ok((scene, events)) = generate_scene(4, 0, &cfg, &mut rng) else {
                continue;
            };
            assert_eq!(scene.ball_count(), 4);
            assert!(scene.min_clearance() >= 0.0);
            assert!(events.len() >= 3);
            assert!(events.iter().filter(|c| !c.event.a.is_ball() || !c.event.b.is_ball()).count() <= events.len());
        }
    }

    #[test]
    fn episodes_are_reproducible_and_valid() {
        let cfg = GenConfig::default();
        let mut made = 0;
        for id in 0..20 {
            let a = generate_episode(id, 7, &cfg);
            let b = generate_episode(id, 7, &cfg);
            assert_eq!(a, b);
            if let Ok(r) = a {
                r.verify(&cfg).unwrap();
                assert!(r.instructions.len() <= 5);
                made += 1;
            }
        }
        assert!(made >= 10, "{made}");
    }

    #[test]
    fn perturbation_equal_to_original_is_rejected() {
        let cfg = GenConfig {
            speeds: InterventionDistribution {
                min_speed: 1.0,
                max_speed: 1.0,
            },
            ..GenConfig::default()
        };
        let scene = Scene {
            objects: vec![ObjectState::disc(ObjectId::BALLS[0], Vec2::ZERO, Vec2::ZERO, 0.4)],
            pivot: None,
        };
        // A lone disc hitting walls: only the first wall differs by heading, so
        // an empty solution never equals a moving observation.
        let mut rng = rng::stream(2, "p", 0);
        let p = perturb_pivot(&scene, &[], &cfg, &mut rng).unwrap();
        assert!(!p.observed.is_empty());
        let still = Scene {
            objects: vec![ObjectState::pin(ObjectId::PINS[0], Vec2::ZERO, 0.4)],
            pivot: None,
        };
        assert_eq!(perturb_pivot(&still, &[], &cfg, &mut rng), Err(GenError::Perturbation));
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let mut buf = Vec::new();
        write_jsonl::<EpisodeRecord, _>(SCHEMA_NAME, &[], &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(read_jsonl::<EpisodeRecord, _>(SCHEMA_NAME, &buf[..]).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let text = format!("{{\"schema\":\"{SCHEMA_NAME}\",\"version\":1}}\n{{}}\n");
        match read_jsonl::<EpisodeRecord, _>(SCHEMA_NAME, text.as_bytes()) {
            Err(DatasetError::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        let wrong = format!("{{\"schema\":\"{SCHEMA_NAME}\",\"version\":9}}\n");
        assert!(matches!(
            read_jsonl::<EpisodeRecord, _>(SCHEMA_NAME, wrong.as_bytes()),
            Err(DatasetError::Schema { .. })
        ));
    }

    #[test]
    fn splits_are_disjoint_and_cover() {
        let ids: Vec<u64> = (0..2000).collect();
        let s = split_scenes(&ids, VAL_FRACTION, TEST_FRACTION, 3);
        assert_eq!(s.test.len(), 20);
        assert_eq!(s.val.len(), 3);
        let mut all: Vec<u64> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, ids);
        assert_eq!(split_scenes(&ids, VAL_FRACTION, TEST_FRACTION, 3), s);
    }
}
