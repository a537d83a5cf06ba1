//! Fixed-timestep reference integrator.
//!
//! Independent of the analytic event search: it advances every object by a
//! fixed step, detects penetrations after the step, locates each contact
//! inside the step by bisection, and resolves the earliest one before
//! continuing with the rest of the step.

use super::{
    contact_distance, resolve_disc_collision, Collision, DynamicsError, ObjectState,
    SemanticEvent, Vec2, Wall, WorldState, TABLE_HALF_WIDTH, TIE_EPSILON,
};

const BISECTION_STEPS: usize = 64;
const MAX_EVENTS_PER_STEP: usize = 1024;

#[derive(Clone, Copy)]
enum Hit {
    Pair(usize, usize),
    Wall(usize, Wall),
}

fn moved(o: &ObjectState, s: f64) -> Vec2 {
    o.position + o.velocity * s
}

fn wall_excess(o: &ObjectState, wall: Wall, s: f64) -> f64 {
    let p = moved(o, s);
    let limit = TABLE_HALF_WIDTH - o.radius;
    match wall {
        Wall::Left => -p.x - limit,
        Wall::Right => p.x - limit,
        Wall::Bottom => -p.y - limit,
        Wall::Top => p.y - limit,
    }
}

fn toward_wall(o: &ObjectState, wall: Wall) -> bool {
    match wall {
        Wall::Left => o.velocity.x < 0.0,
        Wall::Right => o.velocity.x > 0.0,
        Wall::Bottom => o.velocity.y < 0.0,
        Wall::Top => o.velocity.y > 0.0,
    }
}

/// Largest `s` in `[0, hi]` with `inside(s)` still true, assuming a single
/// crossing.
fn bisect(hi: f64, inside: impl Fn(f64) -> bool) -> f64 {
    if !inside(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, hi);
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if inside(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Earliest penetration within the next `span` seconds, as (offset, event, hit).
fn first_penetration(
    objects: &[ObjectState],
    span: f64,
) -> Result<Option<(f64, SemanticEvent, Hit)>, DynamicsError> {
    let mut hits: Vec<(f64, SemanticEvent, Hit)> = Vec::new();
    for (i, a) in objects.iter().enumerate() {
        if a.mobile {
            for wall in Wall::ALL {
                if !toward_wall(a, wall) {
                    continue;
                }
                let excess = wall_excess(a, wall, span);
                if excess > 0.0 {
                    if excess > a.radius {
                        return Err(DynamicsError::Instability {
                            depth: excess,
                            radius: a.radius,
                        });
                    }
                    let s = bisect(span, |s| wall_excess(a, wall, s) <= 0.0);
                    hits.push((s, SemanticEvent::new(a.id, wall.id()), Hit::Wall(i, wall)));
                }
            }
        }
        for (j, b) in objects.iter().enumerate().skip(i + 1) {
            if !a.mobile && !b.mobile {
                continue;
            }
            let d = contact_distance(a.radius, b.radius);
            let gap_end = (moved(a, span) - moved(b, span)).norm() - d;
            if gap_end >= 0.0 {
                continue;
            }
            let dr = a.position - b.position;
            if dr.dot(a.velocity - b.velocity) >= 0.0 {
                continue;
            }
            let depth = -gap_end;
            if depth > a.radius.min(b.radius) {
                return Err(DynamicsError::Instability {
                    depth,
                    radius: a.radius.min(b.radius),
                });
            }
            let s = bisect(span, |s| (moved(a, s) - moved(b, s)).norm() >= d);
            hits.push((s, SemanticEvent::new(a.id, b.id), Hit::Pair(i, j)));
        }
    }
    let s_min = hits.iter().map(|h| h.0).fold(f64::INFINITY, f64::min);
    Ok(hits
        .into_iter()
        .filter(|h| h.0 <= s_min + TIE_EPSILON)
        .min_by(|x, y| x.1.cmp(&y.1)))
}

fn drift(objects: &mut [ObjectState], s: f64, t: f64) {
    for o in objects.iter_mut() {
        o.position += o.velocity * s;
        o.epoch = t;
    }
}

/// One fixed step of length `dt`, returning the new state and every contact
/// resolved inside the step.
pub fn step_with_events(
    w: &WorldState,
    dt: f64,
) -> Result<(WorldState, Vec<Collision>), DynamicsError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(DynamicsError::InvalidStep(dt));
    }
    let mut state = w.snapshot();
    let mut events = Vec::new();
    let mut remaining = dt;
    let end = w.time + dt;
    loop {
        let Some((s, event, hit)) = first_penetration(&state.objects, remaining)? else {
            drift(&mut state.objects, remaining, end);
            state.time = end;
            return Ok((state, events));
        };
        if events.len() >= MAX_EVENTS_PER_STEP {
            return Err(DynamicsError::Instability {
                depth: f64::NAN,
                radius: f64::NAN,
            });
        }
        let t = state.time + s;
        drift(&mut state.objects, s, t);
        state.time = t;
        remaining -= s;
        let normal_speed = match hit {
            Hit::Pair(i, j) => {
                let (a, b) = (state.objects[i], state.objects[j]);
                let dy = a.position - b.position;
                let closing = -(a.velocity - b.velocity).dot(dy) / dy.norm();
                let (va, vb) = resolve_disc_collision(&a, &b)?;
                state.objects[i].velocity = va;
                state.objects[j].velocity = vb;
                closing
            }
            Hit::Wall(i, wall) => {
                let v = &mut state.objects[i].velocity;
                match wall {
                    Wall::Left | Wall::Right => {
                        v.x = -v.x;
                        v.x.abs()
                    }
                    Wall::Bottom | Wall::Top => {
                        v.y = -v.y;
                        v.y.abs()
                    }
                }
            }
        };
        events.push(Collision {
            event,
            time: t,
            normal_speed,
        });
    }
}

/// Ballistic advance by `dt` with in-step contact handling.
pub fn step_simulator(w: &WorldState, dt: f64) -> Result<WorldState, DynamicsError> {
    step_with_events(w, dt).map(|(state, _)| state)
}

/// Contact sequence seen by the fixed-step integrator from `w0`.
pub fn simulate_events(
    w0: &WorldState,
    dt: f64,
    max_depth: usize,
    horizon: f64,
) -> Result<Vec<Collision>, DynamicsError> {
    let mut w = w0.snapshot();
    let mut out = Vec::new();
    while out.len() < max_depth && w.time < horizon {
        let step = dt.min(horizon - w.time);
        let (next, events) = step_with_events(&w, step)?;
        out.extend(events);
        w = next;
    }
    out.truncate(max_depth);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{pair_collision_time, ObjectId};

    fn ball(i: u8, x: f64, y: f64, vx: f64, vy: f64) -> ObjectState {
        ObjectState::disc(ObjectId::new(i).unwrap(), Vec2::new(x, y), Vec2::new(vx, vy), 0.5)
    }

    #[test]
    fn free_disc_moves_by_velocity() {
        let w = WorldState::new(vec![ball(0, 0.0, 0.0, 1.0, -0.5)]);
        let next = step_simulator(&w, 1.0).unwrap();
        assert_eq!(next.objects[0].position, Vec2::new(1.0, -0.5));
        assert_eq!(next.time, 1.0);
    }

    #[test]
    fn no_tunnelling_through_wall() {
        let w = WorldState::new(vec![ball(0, 4.3, 0.0, 1.0, 0.0)]);
        let (next, events) = step_with_events(&w, 0.4).unwrap();
        assert_eq!(events.len(), 1);
        assert!((events[0].time - 0.2).abs() < 1e-12);
        assert!((next.objects[0].position.x - 4.3).abs() < 1e-12);
        assert_eq!(next.objects[0].velocity.x, -1.0);
    }

    #[test]
    fn oversized_step_is_unstable() {
        let w = WorldState::new(vec![ball(0, 4.0, 0.0, 10.0, 0.0)]);
        assert!(matches!(
            step_simulator(&w, 1.0),
            Err(DynamicsError::Instability { .. })
        ));
        assert!(matches!(step_simulator(&w, 0.0), Err(DynamicsError::InvalidStep(_))));
    }

    #[test]
    fn integrator_contact_time_matches_analytic() {
        let a = ball(0, -2.0, 0.1, 1.0, 0.0);
        let b = ball(1, 1.0, 0.0, -0.5, 0.0);
        let w = WorldState::new(vec![a, b]);
        let events = simulate_events(&w, 1e-3, 1, 60.0).unwrap();
        let analytic = pair_collision_time(&a, &b, 60.0).unwrap();
        assert!((events[0].time - analytic).abs() < 1e-9);
    }
}
