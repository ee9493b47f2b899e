use std::collections::HashSet;

use frogsim_core::frogs::{good_vertices, local_activation, restricted_activation};
use frogsim_core::{build_graph, BoundaryMode, FrogParams, Graph, GraphSpec, ParticleField, Schedule, StopRule};
use proptest::prelude::*;

fn tree() -> Graph {
    build_graph(&GraphSpec::regular_tree(3, 9)).unwrap()
}

fn z2() -> Graph {
    build_graph(&GraphSpec::lattice_box(2, 10, BoundaryMode::Absorbing)).unwrap()
}

fn cluster(g: &Graph, seed: u64, params: FrogParams, schedule: Schedule) -> HashSet<usize> {
    frogsim_core::frogs::explore_cluster(g, &ParticleField::new(seed, params), StopRule::exhaust(), schedule)
        .activated()
}

fn params() -> impl Strategy<Value = FrogParams> {
    (0.0f64..2.5, 0.0f64..2.0).prop_map(|(l, t)| FrogParams::new(l, t).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedules_reach_the_same_cluster(seed in any::<u64>(), p in params()) {
        for g in [tree(), z2()] {
            let reference = cluster(&g, seed, p, Schedule::Fifo);
            for s in [Schedule::Lifo, Schedule::Random] {
                prop_assert_eq!(&cluster(&g, seed, p, s), &reference);
            }
        }
    }

    #[test]
    fn cluster_is_monotone_in_lambda(seed in any::<u64>(), p in params(), extra in 0.0f64..2.0) {
        let g = tree();
        let small = cluster(&g, seed, p, Schedule::Fifo);
        let field = ParticleField::new(seed, p).with_params(FrogParams::new(p.lambda + extra, p.t).unwrap());
        let big = frogsim_core::frogs::explore_cluster(&g, &field, StopRule::exhaust(), Schedule::Fifo).activated();
        prop_assert!(small.is_subset(&big));
    }

    #[test]
    fn cluster_is_monotone_in_lifespan(seed in any::<u64>(), p in params(), extra in 0.0f64..2.0) {
        let g = z2();
        let small = cluster(&g, seed, p, Schedule::Fifo);
        let field = ParticleField::new(seed, p).with_params(FrogParams::new(p.lambda, p.t + extra).unwrap());
        let big = frogsim_core::frogs::explore_cluster(&g, &field, StopRule::exhaust(), Schedule::Fifo).activated();
        prop_assert!(small.is_subset(&big));
    }

    #[test]
    fn activated_vertices_are_reached_by_earlier_walks(seed in any::<u64>(), p in params()) {
        let g = tree();
        let field = ParticleField::new(seed, p);
        let c = frogsim_core::frogs::explore_cluster(&g, &field, StopRule::exhaust(), Schedule::Fifo);
        prop_assert_eq!(c.activation_order[0], g.origin());
        let mut reached: HashSet<usize> = HashSet::from([g.origin()]);
        for &v in &c.activation_order {
            prop_assert!(reached.contains(&v));
            for w in field.particles(&g, v) {
                reached.extend(w.visits());
            }
        }
        prop_assert_eq!(reached, c.activated());
        prop_assert_eq!(c.total_particles, c.activation_order.iter().map(|&v| field.count(&g, v)).sum::<usize>());
    }

    #[test]
    fn harpoon_set_lies_in_the_cluster(seed in any::<u64>(), p in params(), r in 0usize..4) {
        let g = tree();
        let field = ParticleField::new(seed, p);
        let set: HashSet<usize> = g.ball(g.origin(), r).unwrap().into_iter().collect();
        let act = restricted_activation(&g, &set, g.origin(), &field).unwrap();
        let full = frogsim_core::frogs::explore_cluster(&g, &field, StopRule::exhaust(), Schedule::Fifo).activated();
        prop_assert_eq!(act.harpoon[0], g.origin());
        for x in &act.harpoon {
            prop_assert!(set.contains(x));
            prop_assert!(full.contains(x));
        }
        for w in &act.exiting {
            prop_assert!(w.leaves(|v| set.contains(&v)));
        }
    }

    #[test]
    fn local_activation_stays_in_ball(seed in any::<u64>(), p in params()) {
        let g = z2();
        let ball: HashSet<usize> = g.ball(g.origin(), 3).unwrap().into_iter().collect();
        let field = ParticleField::new(seed, p);
        let reached = local_activation(&g, &ball, g.origin(), &field);
        prop_assert!(reached.contains(&g.origin()));
        prop_assert!(reached.iter().all(|v| ball.contains(v)));
    }

    #[test]
    fn stopped_exploration_is_a_prefix(seed in any::<u64>(), p in params(), n in 1usize..8) {
        let g = tree();
        let field = ParticleField::new(seed, p);
        let full = frogsim_core::frogs::explore_cluster(&g, &field, StopRule::exhaust(), Schedule::Fifo);
        let stopped = frogsim_core::frogs::explore_cluster(&g, &field, StopRule::radius(n), Schedule::Fifo);
        prop_assert!(stopped.activated().is_subset(&full.activated()));
    }
}

#[test]
fn good_vertices_on_a_lattice_ball() {
    let g = build_graph(&GraphSpec::lattice_box(2, 30, BoundaryMode::Absorbing)).unwrap();
    let ball = g.ball(g.origin(), 8).unwrap();
    let params = FrogParams::new(1.0, 64.0).unwrap();
    let hits = (0..200u64).filter(|&s| !good_vertices(&g, &ball, params, s).is_empty()).count();
    assert!(hits >= 190, "{hits}/200");
    assert!(good_vertices(&g, &ball, FrogParams::new(0.0, 64.0).unwrap(), 1).is_empty());
}
