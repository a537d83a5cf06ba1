//! Event-driven dynamics for discs on a frictionless walled table.
//!
//! Objects move ballistically between collisions. Each [`ObjectState`] keeps
//! its position at the time of its own last collision (`epoch`), so objects
//! untouched by an event keep bit-identical state. The batched event query
//! relies on that to share pair work between world states whose objects
//! have not diverged.
//!
//! Contact between two discs resting on the table happens at planar center
//! distance `2 * sqrt(r_a * r_b)`.

mod integrator;
mod vec2;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use integrator::{simulate_events, step_simulator, step_with_events};
pub use vec2::Vec2;

/// Half side of the square table; walls sit at `x = ±5` and `y = ±5`.
pub const TABLE_HALF_WIDTH: f64 = 5.0;
/// Distance slack for contact checks, in table units.
pub const CONTACT_TOLERANCE: f64 = 1e-7;
/// Events closer than this in time are simultaneous and ordered by object ids.
pub const TIE_EPSILON: f64 = 1e-9;
/// Contacts closing slower than this along the normal count as grazing.
pub const GRAZING_SPEED: f64 = 1e-3;
/// Default simulated time budget for one rollout, in seconds.
pub const DEFAULT_HORIZON: f64 = 60.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("degenerate contact between {a} and {b}: center distance {distance:.3e} below contact distance {contact:.3e}")]
    DegenerateContact {
        a: ObjectId,
        b: ObjectId,
        distance: f64,
        contact: f64,
    },
    #[error("integrator unstable: penetration {depth:.3e} exceeds radius {radius:.3e} (time step too large)")]
    Instability { depth: f64, radius: f64 },
    #[error("invalid time step {0}")]
    InvalidStep(f64),
}

/// One of the twelve object kinds: six coloured balls, two pins, four walls.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct ObjectId(u8);

impl ObjectId {
    pub const COUNT: usize = 12;
    pub const BALLS: [ObjectId; 6] = [
        ObjectId(0),
        ObjectId(1),
        ObjectId(2),
        ObjectId(3),
        ObjectId(4),
        ObjectId(5),
    ];
    pub const PINS: [ObjectId; 2] = [ObjectId(6), ObjectId(7)];
    pub const WALLS: [ObjectId; 4] = [ObjectId(8), ObjectId(9), ObjectId(10), ObjectId(11)];

    pub fn new(index: u8) -> Option<Self> {
        ((index as usize) < Self::COUNT).then_some(Self(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn is_ball(self) -> bool {
        self.0 < 6
    }

    pub fn is_pin(self) -> bool {
        (6..8).contains(&self.0)
    }

    pub fn is_wall(self) -> bool {
        self.0 >= 8
    }

    /// Walls and pins never move.
    pub fn is_stationary(self) -> bool {
        !self.is_ball()
    }

    pub fn wall(self) -> Option<Wall> {
        match self.0 {
            8 => Some(Wall::Left),
            9 => Some(Wall::Right),
            10 => Some(Wall::Bottom),
            11 => Some(Wall::Top),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        const NAMES: [&str; 12] = [
            "red",
            "green",
            "blue",
            "yellow",
            "purple",
            "cyan",
            "grey pin",
            "black pin",
            "left wall",
            "right wall",
            "bottom wall",
            "top wall",
        ];
        NAMES[self.index()]
    }
}

impl TryFrom<u8> for ObjectId {
    type Error = String;
    fn try_from(value: u8) -> Result<Self, Self::Error> {
        ObjectId::new(value).ok_or_else(|| format!("object id {value} out of range [0, 12)"))
    }
}

impl From<ObjectId> for u8 {
    fn from(id: ObjectId) -> u8 {
        id.0
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Wall {
    Left,
    Right,
    Bottom,
    Top,
}

impl Wall {
    pub const ALL: [Wall; 4] = [Wall::Left, Wall::Right, Wall::Bottom, Wall::Top];

    pub fn id(self) -> ObjectId {
        match self {
            Wall::Left => ObjectId(8),
            Wall::Right => ObjectId(9),
            Wall::Bottom => ObjectId(10),
            Wall::Top => ObjectId(11),
        }
    }
}

/// Kinematic state of one disc or pin.
///
/// `position` is where the object sits at time `epoch`; at any later time
/// `t` (before its next collision) it is at `position + velocity * (t - epoch)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: ObjectId,
    pub position: Vec2,
    pub velocity: Vec2,
    #[serde(default)]
    pub epoch: f64,
    pub radius: f64,
    /// Infinite for pins; stored as `null` in JSON.
    #[serde(with = "mass_serde")]
    pub mass: f64,
    pub mobile: bool,
}

mod mass_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &f64, s: S) -> Result<S::Ok, S::Error> {
        if m.is_finite() {
            s.serialize_some(m)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl ObjectState {
    pub fn disc(id: ObjectId, position: Vec2, velocity: Vec2, radius: f64) -> Self {
        Self {
            id,
            position,
            velocity,
            epoch: 0.0,
            radius,
            mass: 1.0,
            mobile: true,
        }
    }

    pub fn pin(id: ObjectId, position: Vec2, radius: f64) -> Self {
        Self {
            id,
            position,
            velocity: Vec2::ZERO,
            epoch: 0.0,
            radius,
            mass: f64::INFINITY,
            mobile: false,
        }
    }

    #[inline]
    pub fn position_at(&self, t: f64) -> Vec2 {
        self.position + self.velocity * (t - self.epoch)
    }

    /// Same trajectory, bit for bit.
    #[inline]
    pub fn same_trajectory(&self, other: &ObjectState) -> bool {
        self.position.bits_eq(other.position)
            && self.velocity.bits_eq(other.velocity)
            && self.epoch.to_bits() == other.epoch.to_bits()
    }

    fn rebased(&self, t: f64) -> ObjectState {
        ObjectState {
            position: self.position_at(t),
            epoch: t,
            ..*self
        }
    }

    fn kinetic_energy(&self) -> f64 {
        if self.mobile {
            0.5 * self.mass * self.velocity.norm_sq()
        } else {
            0.0
        }
    }
}

/// Planar center distance at which two resting spheres touch.
#[inline]
pub fn contact_distance(radius_a: f64, radius_b: f64) -> f64 {
    2.0 * (radius_a * radius_b).sqrt()
}

/// All objects of an episode at simulated time `time`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub objects: Vec<ObjectState>,
    pub time: f64,
}

impl WorldState {
    pub fn new(objects: Vec<ObjectState>) -> Self {
        Self { objects, time: 0.0 }
    }

    pub fn find(&self, id: ObjectId) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    /// Copy with every object rebased to the current time.
    pub fn snapshot(&self) -> WorldState {
        WorldState {
            objects: self.objects.iter().map(|o| o.rebased(self.time)).collect(),
            time: self.time,
        }
    }

    /// Ballistic state at time `t >= self.time`, assuming no event in between.
    pub fn advanced_to(&self, t: f64) -> WorldState {
        WorldState {
            objects: self.objects.iter().map(|o| o.rebased(t)).collect(),
            time: t,
        }
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.objects.iter().map(ObjectState::kinetic_energy).sum()
    }

    /// Largest pairwise overlap and wall excursion at the current time.
    pub fn max_penetration(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, a) in self.objects.iter().enumerate() {
            let pa = a.position_at(self.time);
            if a.mobile {
                let limit = TABLE_HALF_WIDTH - a.radius;
                worst = worst.max(pa.x.abs() - limit).max(pa.y.abs() - limit);
            }
            for b in &self.objects[i + 1..] {
                if !a.mobile && !b.mobile {
                    continue;
                }
                let pb = b.position_at(self.time);
                worst = worst.max(contact_distance(a.radius, b.radius) - (pa - pb).norm());
            }
        }
        worst
    }
}

/// Unordered pair of objects taking part in a collision; the smaller id is
/// always stored first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "[ObjectId; 2]", into = "[ObjectId; 2]")]
pub struct SemanticEvent {
    pub a: ObjectId,
    pub b: ObjectId,
}

impl SemanticEvent {
    /// Panics if `a == b`.
    pub fn new(a: ObjectId, b: ObjectId) -> Self {
        assert_ne!(a, b, "an event needs two distinct objects");
        if a < b {
            Self { a, b }
        } else {
            Self { a: b, b: a }
        }
    }

    pub fn involves(&self, id: ObjectId) -> bool {
        self.a == id || self.b == id
    }

    pub fn objects(&self) -> [ObjectId; 2] {
        [self.a, self.b]
    }
}

impl TryFrom<[ObjectId; 2]> for SemanticEvent {
    type Error = String;
    fn try_from(pair: [ObjectId; 2]) -> Result<Self, Self::Error> {
        if pair[0] == pair[1] {
            return Err(format!("event pairs {} with itself", pair[0]));
        }
        if pair[0].is_stationary() && pair[1].is_stationary() {
            return Err(format!("{} and {} can never collide", pair[0], pair[1]));
        }
        Ok(SemanticEvent::new(pair[0], pair[1]))
    }
}

impl From<SemanticEvent> for [ObjectId; 2] {
    fn from(e: SemanticEvent) -> Self {
        [e.a, e.b]
    }
}

impl fmt::Display for SemanticEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} hits {}", self.a, self.b)
    }
}

/// A semantic event together with the time it happened.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Collision {
    pub event: SemanticEvent,
    pub time: f64,
    /// Closing speed along the contact normal just before impact.
    pub normal_speed: f64,
}

/// Strip timing from a collision list.
pub fn events_of(collisions: &[Collision]) -> Vec<SemanticEvent> {
    collisions.iter().map(|c| c.event).collect()
}

/// Time until two freely moving objects touch, measured from the later of
/// their epochs. `None` when they never touch within `horizon`.
pub fn pair_collision_time(a: &ObjectState, b: &ObjectState, horizon: f64) -> Option<f64> {
    let t_ref = a.epoch.max(b.epoch);
    pair_contact_time(a, b).and_then(|t| {
        let dt = t - t_ref;
        (dt > 0.0 && dt <= horizon).then_some(dt)
    })
}

/// Absolute time of first approaching contact at or after `max(epoch_a, epoch_b)`.
#[inline]
fn pair_contact_time(a: &ObjectState, b: &ObjectState) -> Option<f64> {
    if !a.mobile && !b.mobile {
        return None;
    }
    let t_ref = a.epoch.max(b.epoch);
    let dr = a.position_at(t_ref) - b.position_at(t_ref);
    let dv = a.velocity - b.velocity;
    let closing = dr.dot(dv);
    if closing >= 0.0 {
        return None;
    }
    let d = contact_distance(a.radius, b.radius);
    let speed_sq = dv.norm_sq();
    let gap = dr.norm_sq() - d * d;
    let disc = closing * closing - speed_sq * gap;
    if disc < 0.0 {
        return None;
    }
    // Smaller root of |dr + dv t|^2 = d^2, in the cancellation-free form.
    let tau = gap / (-closing + disc.sqrt());
    Some(t_ref + tau.max(0.0))
}

/// Absolute time at which a mobile disc reaches `wall`, at or after its epoch.
#[inline]
fn wall_contact_time(o: &ObjectState, wall: Wall) -> Option<f64> {
    if !o.mobile {
        return None;
    }
    let limit = TABLE_HALF_WIDTH - o.radius;
    let (p, v, sign) = match wall {
        Wall::Left => (o.position.x, o.velocity.x, -1.0),
        Wall::Right => (o.position.x, o.velocity.x, 1.0),
        Wall::Bottom => (o.position.y, o.velocity.y, -1.0),
        Wall::Top => (o.position.y, o.velocity.y, 1.0),
    };
    let toward = v * sign;
    if toward <= 0.0 {
        return None;
    }
    let distance = limit - p * sign;
    Some(o.epoch + (distance / toward).max(0.0))
}

fn reflect_off_wall(v: Vec2, wall: Wall) -> Vec2 {
    match wall {
        Wall::Left | Wall::Right => Vec2::new(-v.x, v.y),
        Wall::Bottom | Wall::Top => Vec2::new(v.x, -v.y),
    }
}

/// Time until `o` reaches `wall` and its velocity after bouncing.
pub fn wall_collision(o: &ObjectState, wall: ObjectId, horizon: f64) -> Option<(f64, Vec2)> {
    let wall = wall.wall()?;
    let t = wall_contact_time(o, wall)? - o.epoch;
    (t > 0.0 && t <= horizon).then(|| (t, reflect_off_wall(o.velocity, wall)))
}

/// Post-collision velocities of two touching objects (positions taken at
/// the later epoch). Elastic; an immobile partner acts as infinite mass.
pub fn resolve_disc_collision(
    a: &ObjectState,
    b: &ObjectState,
) -> Result<(Vec2, Vec2), DynamicsError> {
    let t = a.epoch.max(b.epoch);
    let dy = a.position_at(t) - b.position_at(t);
    let dist_sq = dy.norm_sq();
    let contact = contact_distance(a.radius, b.radius);
    let distance = dist_sq.sqrt();
    if distance + CONTACT_TOLERANCE < contact || dist_sq == 0.0 {
        return Err(DynamicsError::DegenerateContact {
            a: a.id,
            b: b.id,
            distance,
            contact,
        });
    }
    let projection = (a.velocity - b.velocity).dot(dy) / dist_sq;
    Ok(match (a.mobile, b.mobile) {
        (true, true) => {
            let total = a.mass + b.mass;
            let va = a.velocity - (2.0 * b.mass / total * projection) * dy;
            let vb = b.velocity + (2.0 * a.mass / total * projection) * dy;
            (va, vb)
        }
        (true, false) => (a.velocity - (2.0 * projection) * dy, b.velocity),
        (false, true) => (a.velocity, b.velocity + (2.0 * projection) * dy),
        (false, false) => (a.velocity, b.velocity),
    })
}

#[derive(Clone, Copy, Debug)]
enum Contact {
    Pair(usize, usize),
    Wall(usize, Wall),
}

#[derive(Clone, Copy, Debug)]
struct Candidate {
    time: f64,
    event: SemanticEvent,
    contact: Contact,
}

/// Earliest candidate; candidates within [`TIE_EPSILON`] of the earliest
/// time are ordered by their (min id, max id) pair.
fn pick_earliest(candidates: &[Candidate]) -> Option<Candidate> {
    let t_min = candidates.iter().map(|c| c.time).fold(f64::INFINITY, f64::min);
    candidates
        .iter()
        .filter(|c| c.time <= t_min + TIE_EPSILON)
        .min_by(|x, y| x.event.cmp(&y.event))
        .copied()
}

#[inline]
fn admissible(t: f64, now: f64, horizon: f64) -> bool {
    t >= now - TIE_EPSILON && t <= horizon
}

fn collect_candidates(w: &WorldState, horizon: f64, out: &mut Vec<Candidate>) {
    out.clear();
    let objects = &w.objects;
    for i in 0..objects.len() {
        let a = &objects[i];
        for (j, b) in objects.iter().enumerate().skip(i + 1) {
            if let Some(t) = pair_contact_time(a, b) {
                if admissible(t, w.time, horizon) {
                    out.push(Candidate {
                        time: t,
                        event: SemanticEvent::new(a.id, b.id),
                        contact: Contact::Pair(i, j),
                    });
                }
            }
        }
        for wall in Wall::ALL {
            if let Some(t) = wall_contact_time(a, wall) {
                if admissible(t, w.time, horizon) {
                    out.push(Candidate {
                        time: t,
                        event: SemanticEvent::new(a.id, wall.id()),
                        contact: Contact::Wall(i, wall),
                    });
                }
            }
        }
    }
}

fn apply(w: &mut WorldState, c: Candidate) -> Result<Collision, DynamicsError> {
    let t = c.time.max(w.time);
    let normal_speed = match c.contact {
        Contact::Pair(i, j) => {
            let a = w.objects[i].rebased(t);
            let b = w.objects[j].rebased(t);
            let dy = a.position - b.position;
            let normal_speed = -(a.velocity - b.velocity).dot(dy) / dy.norm().max(f64::MIN_POSITIVE);
            let (va, vb) = resolve_disc_collision(&a, &b)?;
            w.objects[i] = ObjectState { velocity: va, ..a };
            w.objects[j] = ObjectState { velocity: vb, ..b };
            normal_speed
        }
        Contact::Wall(i, wall) => {
            let mut o = w.objects[i].rebased(t);
            // Pin the centre exactly on the wall line.
            let limit = TABLE_HALF_WIDTH - o.radius;
            match wall {
                Wall::Left => o.position.x = -limit,
                Wall::Right => o.position.x = limit,
                Wall::Bottom => o.position.y = -limit,
                Wall::Top => o.position.y = limit,
            }
            let normal_speed = match wall {
                Wall::Left | Wall::Right => o.velocity.x.abs(),
                Wall::Bottom | Wall::Top => o.velocity.y.abs(),
            };
            o.velocity = reflect_off_wall(o.velocity, wall);
            w.objects[i] = o;
            normal_speed
        }
    };
    w.time = t;
    Ok(Collision {
        event: c.event,
        time: t,
        normal_speed,
    })
}

/// Advance `w` in place to just after its next event (absolute time bound
/// `horizon`). Returns `None`, leaving `w` untouched, when nothing happens.
pub fn advance_to_next_event(
    w: &mut WorldState,
    horizon: f64,
) -> Result<Option<Collision>, DynamicsError> {
    let mut scratch = Vec::with_capacity(64);
    advance_with(w, horizon, &mut scratch)
}

fn advance_with(
    w: &mut WorldState,
    horizon: f64,
    scratch: &mut Vec<Candidate>,
) -> Result<Option<Collision>, DynamicsError> {
    collect_candidates(w, horizon, scratch);
    match pick_earliest(scratch) {
        Some(c) => apply(w, c).map(Some),
        None => Ok(None),
    }
}

/// The event-driven forward model: next semantic event and the state right
/// after it, or `None` if nothing happens before `horizon` (absolute time).
pub fn next_event(
    w: &WorldState,
    horizon: f64,
) -> Result<Option<(Collision, WorldState)>, DynamicsError> {
    let mut next = w.clone();
    Ok(advance_to_next_event(&mut next, horizon)?.map(|c| (c, next)))
}

/// Event sequence produced from `w0`, stopping after `max_depth` events, at
/// the horizon, or when the scene goes quiet.
pub fn rollout_events(
    w0: &WorldState,
    max_depth: usize,
    horizon: f64,
) -> Result<Vec<Collision>, DynamicsError> {
    let mut w = w0.clone();
    let mut scratch = Vec::with_capacity(64);
    let mut out = Vec::new();
    while out.len() < max_depth {
        match advance_with(&mut w, horizon, &mut scratch)? {
            Some(c) => out.push(c),
            None => break,
        }
    }
    Ok(out)
}

/// Candidate contacts between objects whose trajectory is identical across
/// the whole batch, computed once.
struct SharedCandidates {
    shared: Vec<bool>,
    pairs: Vec<Option<f64>>,
    walls: Vec<[Option<f64>; 4]>,
    n: usize,
}

impl SharedCandidates {
    fn build(states: &[&WorldState]) -> Self {
        let first = states[0];
        let n = first.objects.len();
        let shared: Vec<bool> = (0..n)
            .map(|k| {
                states
                    .iter()
                    .all(|w| w.objects.len() == n && w.objects[k].same_trajectory(&first.objects[k]))
            })
            .collect();
        let mut pairs = vec![None; n * n];
        let mut walls = vec![[None; 4]; n];
        for i in 0..n {
            if !shared[i] {
                continue;
            }
            let a = &first.objects[i];
            for (slot, wall) in Wall::ALL.iter().enumerate() {
                walls[i][slot] = wall_contact_time(a, *wall);
            }
            for j in i + 1..n {
                if shared[j] {
                    pairs[i * n + j] = pair_contact_time(a, &first.objects[j]);
                }
            }
        }
        Self {
            shared,
            pairs,
            walls,
            n,
        }
    }

    fn collect(&self, w: &WorldState, horizon: f64, out: &mut Vec<Candidate>) {
        out.clear();
        let objects = &w.objects;
        for i in 0..self.n {
            let a = &objects[i];
            for (j, b) in objects.iter().enumerate().skip(i + 1) {
                let t = if self.shared[i] && self.shared[j] {
                    self.pairs[i * self.n + j]
                } else {
                    pair_contact_time(a, b)
                };
                if let Some(t) = t {
                    if admissible(t, w.time, horizon) {
                        out.push(Candidate {
                            time: t,
                            event: SemanticEvent::new(a.id, b.id),
                            contact: Contact::Pair(i, j),
                        });
                    }
                }
            }
            for (slot, wall) in Wall::ALL.iter().enumerate() {
                let t = if self.shared[i] {
                    self.walls[i][slot]
                } else {
                    wall_contact_time(a, *wall)
                };
                if let Some(t) = t {
                    if admissible(t, w.time, horizon) {
                        out.push(Candidate {
                            time: t,
                            event: SemanticEvent::new(a.id, wall.id()),
                            contact: Contact::Wall(i, *wall),
                        });
                    }
                }
            }
        }
    }
}

/// Advance every state of a batch to just after its next event, in place.
///
/// Equivalent to calling [`advance_to_next_event`] on each element, but
/// contacts among objects that share a trajectory across the batch are
/// solved once. All states must list the same objects in the same order.
pub fn batched_advance(
    states: &mut [WorldState],
    horizon: f64,
) -> Vec<Result<Option<Collision>, DynamicsError>> {
    if states.is_empty() {
        return Vec::new();
    }
    let refs: Vec<&WorldState> = states.iter().collect();
    let shared = SharedCandidates::build(&refs);
    let mut scratch = Vec::with_capacity(64);
    states
        .iter_mut()
        .map(|w| {
            shared.collect(w, horizon, &mut scratch);
            match pick_earliest(&scratch) {
                Some(c) => apply(w, c).map(Some),
                None => Ok(None),
            }
        })
        .collect()
}

/// Batched forward model over a set of world states (same object roster).
pub fn batched_next_event(
    states: &[WorldState],
    horizon: f64,
) -> Vec<Result<Option<(Collision, WorldState)>, DynamicsError>> {
    let mut next: Vec<WorldState> = states.to_vec();
    let events = batched_advance(&mut next, horizon);
    events
        .into_iter()
        .zip(next)
        .map(|(e, w)| e.map(|c| c.map(|c| (c, w))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(i: u8, x: f64, y: f64, vx: f64, vy: f64, r: f64) -> ObjectState {
        ObjectState::disc(ObjectId::new(i).unwrap(), Vec2::new(x, y), Vec2::new(vx, vy), r)
    }

    #[test]
    fn head_on_symmetric_collision_time() {
        let a = ball(0, 0.0, 0.0, 1.0, 0.0, 0.5);
        let b = ball(1, 4.0, 0.0, -1.0, 0.0, 0.5);
        let t = pair_collision_time(&a, &b, 60.0).unwrap();
        assert!((t - 1.5).abs() < 1e-12, "{t}");
    }

    #[test]
    fn parallel_discs_never_meet() {
        let a = ball(0, 0.0, 0.0, 1.0, 1.0, 0.5);
        let b = ball(1, 2.0, 0.0, 1.0, 1.0, 0.5);
        assert_eq!(pair_collision_time(&a, &b, 60.0), None);
    }

    #[test]
    fn unequal_radii_use_planar_contact_distance() {
        let a = ball(0, 0.0, 0.0, 1.0, 0.0, 0.3);
        let b = ball(1, 3.0, 0.0, 0.0, 0.0, 0.48);
        let d = contact_distance(0.3, 0.48);
        let t = pair_collision_time(&a, &b, 60.0).unwrap();
        assert!((t - (3.0 - d)).abs() < 1e-12);
        assert!(d < 0.78);
    }

    #[test]
    fn collision_beyond_horizon_is_none() {
        let a = ball(0, 0.0, 0.0, 1.0, 0.0, 0.5);
        let b = ball(1, 4.0, 0.0, -1.0, 0.0, 0.5);
        assert_eq!(pair_collision_time(&a, &b, 1.0), None);
    }

    #[test]
    fn equal_mass_head_on_exchanges_velocities() {
        let a = ball(0, 0.0, 0.0, 1.0, 0.0, 0.5);
        let b = ball(1, 1.0, 0.0, -1.0, 0.0, 0.5);
        let (va, vb) = resolve_disc_collision(&a, &b).unwrap();
        assert!((va - Vec2::new(-1.0, 0.0)).norm() < 1e-15);
        assert!((vb - Vec2::new(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn grazing_contact_leaves_velocities_unchanged() {
        let a = ball(0, 0.0, 0.0, 0.0, 1.0, 0.5);
        let b = ball(1, 1.0, 0.0, 0.0, -1.0, 0.5);
        let (va, vb) = resolve_disc_collision(&a, &b).unwrap();
        assert_eq!(va, a.velocity);
        assert_eq!(vb, b.velocity);
    }

    #[test]
    fn pin_reflects_normal_component() {
        let a = ball(0, 0.0, 0.0, 1.0, 0.5, 0.5);
        let pin = ObjectState::pin(ObjectId::PINS[0], Vec2::new(1.0, 0.0), 0.5);
        let (va, vp) = resolve_disc_collision(&a, &pin).unwrap();
        assert_eq!(vp, Vec2::ZERO);
        assert!((va - Vec2::new(-1.0, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn overlapping_input_is_degenerate() {
        let a = ball(0, 0.0, 0.0, 1.0, 0.0, 0.5);
        let b = ball(1, 0.5, 0.0, -1.0, 0.0, 0.5);
        assert!(matches!(
            resolve_disc_collision(&a, &b),
            Err(DynamicsError::DegenerateContact { .. })
        ));
    }

    #[test]
    fn wall_hit_time_and_reflection() {
        let o = ball(0, 0.0, 0.0, 0.0, 2.0, 0.5);
        let (t, v) = wall_collision(&o, Wall::Top.id(), 60.0).unwrap();
        assert!((t - 2.25).abs() < 1e-12);
        assert_eq!(v, Vec2::new(0.0, -2.0));
        assert_eq!(wall_collision(&o, Wall::Bottom.id(), 60.0), None);
    }

    #[test]
    fn single_disc_hits_the_wall_it_heads_to() {
        let w = WorldState::new(vec![ball(0, 0.0, 0.0, 1.0, 0.0, 0.5)]);
        let (c, next) = next_event(&w, 60.0).unwrap().unwrap();
        assert_eq!(c.event, SemanticEvent::new(ObjectId::BALLS[0], Wall::Right.id()));
        assert!((c.time - 4.5).abs() < 1e-12);
        assert_eq!(next.objects[0].velocity, Vec2::new(-1.0, 0.0));
    }

    #[test]
    fn earliest_of_two_pending_collisions_wins() {
        let w = WorldState::new(vec![
            ball(0, -2.0, 2.0, 1.0, 0.0, 0.5),
            ball(1, 0.0, 2.0, 0.0, 0.0, 0.5),
            ball(2, -3.0, -2.0, 1.0, 0.0, 0.5),
            ball(3, 0.0, -2.0, 0.0, 0.0, 0.5),
        ]);
        let (c, _) = next_event(&w, 60.0).unwrap().unwrap();
        assert_eq!(c.event, SemanticEvent::new(ObjectId::BALLS[0], ObjectId::BALLS[1]));
        assert!((c.time - 1.0).abs() < 1e-12);
    }

    #[test]
    fn simultaneous_events_break_ties_by_object_ids() {
        let w = WorldState::new(vec![
            ball(3, -2.0, 2.0, 1.0, 0.0, 0.5),
            ball(4, 0.0, 2.0, 0.0, 0.0, 0.5),
            ball(0, -2.0, -2.0, 1.0, 0.0, 0.5),
            ball(5, 0.0, -2.0, 0.0, 0.0, 0.5),
        ]);
        let events = rollout_events(&w, 2, 60.0).unwrap();
        assert_eq!(events[0].event, SemanticEvent::new(ObjectId::BALLS[0], ObjectId::BALLS[5]));
        assert_eq!(events[1].event, SemanticEvent::new(ObjectId::BALLS[3], ObjectId::BALLS[4]));
    }

    #[test]
    fn quiescent_scene_and_zero_depth_produce_nothing() {
        let w = WorldState::new(vec![
            ball(0, -2.0, 2.0, 0.0, 0.0, 0.5),
            ball(1, 1.0, 1.0, 0.0, 0.0, 0.5),
        ]);
        assert!(rollout_events(&w, 10, 60.0).unwrap().is_empty());
        let moving = WorldState::new(vec![ball(0, 0.0, 0.0, 1.0, 0.3, 0.5)]);
        assert!(rollout_events(&moving, 0, 60.0).unwrap().is_empty());
    }

    #[test]
    fn just_resolved_pair_does_not_refire() {
        let w = WorldState::new(vec![
            ball(0, -1.0, 0.0, 1.0, 0.0, 0.5),
            ball(1, 1.0, 0.0, -1.0, 0.0, 0.5),
        ]);
        let events = rollout_events(&w, 3, 60.0).unwrap();
        let first = SemanticEvent::new(ObjectId::BALLS[0], ObjectId::BALLS[1]);
        assert_eq!(events[0].event, first);
        assert_ne!(events[1].event, first);
    }

    #[test]
    fn batch_of_one_and_duplicates_match_sequential() {
        let w = WorldState::new(vec![
            ball(0, -2.0, 0.3, 1.2, 0.1, 0.4),
            ball(1, 1.0, 0.0, -0.5, 0.2, 0.35),
            ObjectState::pin(ObjectId::PINS[1], Vec2::new(3.0, 3.0), 0.3),
        ]);
        let single = next_event(&w, 60.0).unwrap();
        let batch = batched_next_event(std::slice::from_ref(&w), 60.0);
        assert_eq!(batch[0].as_ref().unwrap(), &single);
        let dup = batched_next_event(&[w.clone(), w.clone()], 60.0);
        assert_eq!(dup[0], dup[1]);
    }

    #[test]
    fn serde_shapes() {
        let e = SemanticEvent::new(ObjectId::WALLS[3], ObjectId::BALLS[0]);
        assert_eq!(serde_json::to_string(&e).unwrap(), "[0,11]");
        assert!(serde_json::from_str::<ObjectId>("12").is_err());
        assert!(serde_json::from_str::<SemanticEvent>("[3,3]").is_err());
        assert!(serde_json::from_str::<SemanticEvent>("[6,8]").is_err());
        assert_eq!(serde_json::from_str::<SemanticEvent>("[11,0]").unwrap(), e);
        let pin = ObjectState::pin(ObjectId::PINS[0], Vec2::new(1.0, 2.0), 0.3);
        let text = serde_json::to_string(&pin).unwrap();
        assert!(text.contains("\"mass\":null"));
        assert_eq!(serde_json::from_str::<ObjectState>(&text).unwrap(), pin);
    }
}
