use cascade_core::dynamics::{
    contact_distance, events_of, resolve_disc_collision, rollout_events, wall_collision, ObjectId, ObjectState,
    SemanticEvent, Vec2, WorldState,
};
use cascade_core::harness::Config;
use cascade_core::instruction::{build_dag, satisfies, satisfying_prefix_len, Instruction};
use cascade_core::model::{featurize, GraphMode, Scorer, ScorerConfig};
use cascade_core::rng;
use cascade_core::scoring::counterfactual_update;
use proptest::prelude::*;

fn event() -> impl Strategy<Value = SemanticEvent> {
    (0u8..6, 0u8..12)
        .prop_filter("distinct objects", |(a, b)| a != b)
        .prop_map(|(a, b)| SemanticEvent::new(ObjectId::new(a).unwrap(), ObjectId::new(b).unwrap()))
}

fn instruction() -> impl Strategy<Value = Instruction> {
    (0u8..6, event(), proptest::option::of(event()), proptest::option::of(2u32..7)).prop_map(
        |(pivot, target, bottleneck, count)| Instruction {
            pivot: ObjectId::new(pivot).unwrap(),
            target,
            bottleneck,
            count,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn disc_collisions_conserve_momentum_and_energy(
        ra in 0.3f64..0.5, rb in 0.3f64..0.5, angle in 0.0f64..6.283,
        va in (-3.0f64..3.0, -3.0f64..3.0), vb in (-3.0f64..3.0, -3.0f64..3.0),
        ma in 0.5f64..2.0, mb in 0.5f64..2.0,
    ) {
        let n = Vec2::from_polar(1.0, angle);
        let mut a = ObjectState::disc(ObjectId::BALLS[0], Vec2::ZERO, Vec2::new(va.0, va.1), ra);
        let mut b = ObjectState::disc(ObjectId::BALLS[1], n * contact_distance(ra, rb), Vec2::new(vb.0, vb.1), rb);
        a.mass = ma;
        b.mass = mb;
        let (ua, ub) = resolve_disc_collision(&a, &b).unwrap();
        let dp = (a.velocity * ma + b.velocity * mb) - (ua * ma + ub * mb);
        prop_assert!(dp.norm() < 1e-12);
        let before = ma * a.velocity.norm_sq() + mb * b.velocity.norm_sq();
        let after = ma * ua.norm_sq() + mb * ub.norm_sq();
        prop_assert!((after - before).abs() <= 1e-10 * before.max(1e-12));
    }

    #[test]
    fn wall_bounce_keeps_speed(x in -4.0f64..4.0, y in -4.0f64..4.0, vx in -3.0f64..3.0, vy in -3.0f64..3.0) {
        let o = ObjectState::disc(ObjectId::BALLS[2], Vec2::new(x, y), Vec2::new(vx, vy), 0.4);
        for wall in ObjectId::WALLS {
            if let Some((t, v)) = wall_collision(&o, wall, 1e3) {
                prop_assert!(t > 0.0);
                prop_assert!((v.norm() - o.velocity.norm()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rollouts_are_ordered_and_keep_discs_apart(
        seed in 0u64..1000,
    ) {
        let mut r = rng::stream(seed, "prop-rollout", 0);
        let cfg = cascade_core::datagen::GenConfig::default();
        let Ok((scene, _)) = cascade_core::datagen::generate_scene(4, 1, &cfg, &mut r) else {
            return Ok(());
        };
        let w: WorldState = scene.initial_state();
        let collisions = rollout_events(&w, 30, 60.0).unwrap();
        prop_assert!(collisions.windows(2).all(|c| c[0].time <= c[1].time));
        prop_assert!(collisions.iter().all(|c| c.event.a.is_ball()));
        // Replaying gives the identical sequence.
        prop_assert_eq!(events_of(&rollout_events(&w, 30, 60.0).unwrap()), events_of(&collisions));
    }

    #[test]
    fn dag_edges_point_forward_through_shared_balls(seq in proptest::collection::vec(event(), 0..12)) {
        let dag = build_dag(&seq);
        for e in &dag.edges {
            prop_assert!(e.from < e.to);
            prop_assert!(e.shared.is_ball());
            prop_assert!(seq[e.from].involves(e.shared) && seq[e.to].involves(e.shared));
        }
    }

    #[test]
    fn satisfying_prefix_is_the_shortest(seq in proptest::collection::vec(event(), 0..12), g in instruction()) {
        match satisfying_prefix_len(&seq, &g) {
            Some(k) => {
                prop_assert!(satisfies(&seq[..k], &g));
                prop_assert!(k == 0 || !satisfies(&seq[..k - 1], &g));
            }
            None => prop_assert!(!satisfies(&seq, &g)),
        }
    }

    #[test]
    fn scorer_ignores_node_order(
        seq in proptest::collection::vec(event(), 1..8), g in instruction(), seed in 0u64..100,
    ) {
        let s = featurize(&seq, &g, GraphMode::Dag);
        let n = s.n_nodes();
        let perm: Vec<usize> = (0..n).map(|k| (k * 5 + 3) % n).collect();
        if {
            let mut p = perm.clone();
            p.sort_unstable();
            p != (0..n).collect::<Vec<_>>()
        } {
            return Ok(());
        }
        let scorer = Scorer::init(ScorerConfig { layers: 2, hidden: 6 }, &mut rng::stream(seed, "prop-scorer", 0));
        let a = scorer.forward(&s).unwrap();
        let b = scorer.forward(&s.permuted(&perm)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a > 0.0 && a < 1.0);
    }

    #[test]
    fn counterfactual_update_bounds(v in 0.0f64..=1.0, v_obs in 0.0f64..=1.0, fr in 0.0f64..=1.0) {
        let c = counterfactual_update(v, v_obs, fr);
        prop_assert!((0.0..=1.0).contains(&c.clamped));
        prop_assert!(c.raw <= v);
        prop_assert_eq!(counterfactual_update(v, v_obs, 0.0).raw, v);
    }

    #[test]
    fn rng_streams_are_reproducible(root in any::<u64>(), index in any::<u64>()) {
        use rand::Rng;
        let a: u64 = rng::stream(root, "prop", index).gen();
        let b: u64 = rng::stream(root, "prop", index).gen();
        let c: u64 = rng::stream(root, "other", index).gen();
        prop_assert_eq!(a, b);
        prop_assert_ne!(a, c);
    }
}

#[test]
fn config_round_trips_through_toml() {
    for cfg in [Config::desk(), Config::full()] {
        let back = Config::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        back.validate().unwrap();
    }
}
