mod common;

use proptest::prelude::*;
use wormsim::detection::{geographic_leash_check, hop_lower_bound, temporal_leash_check, LeashConfig, LeashVerdict};
use wormsim::dv::converge;
use wormsim::engine::{resolve_collisions, Simulator};
use wormsim::topology::{build_unit_disk, NodeId, Position};
use wormsim::trace::Trace;

fn layout() -> impl Strategy<Value = (Vec<Position>, f64)> {
    (prop::collection::vec((0.0..500.0f64, 0.0..500.0f64), 2..30), 20.0..200.0f64)
        .prop_map(|(pts, r)| (pts.into_iter().map(|(x, y)| Position::new(x, y)).collect(), r))
}

proptest! {
    #[test]
    fn unit_disk_edges_follow_distance((pts, r) in layout()) {
        let g = build_unit_disk(&pts, r).unwrap();
        for a in g.node_ids() {
            for b in g.node_ids() {
                if a == b {
                    continue;
                }
                let adjacent = g.honest_neighbors(a).contains(&b);
                prop_assert_eq!(adjacent, pts[a.index()].distance(&pts[b.index()]) <= r);
                prop_assert_eq!(adjacent, g.honest_neighbors(b).contains(&a));
            }
        }
    }

    #[test]
    fn honest_hops_never_beat_the_geometric_bound((pts, r) in layout()) {
        let g = build_unit_disk(&pts, r).unwrap();
        for s in g.node_ids() {
            for (d, hops) in g.bfs_all(s, false).unwrap().into_iter().enumerate() {
                if let Some(h) = hops {
                    prop_assert!(h >= hop_lower_bound(pts[s.index()], pts[d], r));
                }
            }
        }
    }

    #[test]
    fn synchronous_dv_matches_bfs((pts, r) in layout()) {
        let g = build_unit_disk(&pts, r).unwrap();
        let (tables, _) = converge(&g, 64).unwrap();
        for s in g.node_ids() {
            for (d, hops) in g.bfs_all(s, false).unwrap().into_iter().enumerate() {
                let d = NodeId(d as u32);
                prop_assert_eq!(tables[s.index()].cost(d), hops);
                if let (Some(h), Some(next)) = (hops, tables[s.index()].next_hop(d)) {
                    if h > 0 {
                        prop_assert!(g.honest_neighbors(s).contains(&next));
                        prop_assert_eq!(tables[next.index()].cost(d), Some(h - 1));
                    }
                }
            }
        }
    }

    #[test]
    fn honest_transmissions_pass_both_leashes(d in 0.0..250.0f64, t in 0.0..100.0f64) {
        let cfg = LeashConfig::default();
        let (a, b) = (Position::new(0.0, 0.0), Position::new(d, 0.0));
        prop_assert_eq!(geographic_leash_check(a, b, 250.0), LeashVerdict::Pass);
        prop_assert_eq!(temporal_leash_check(t, t + d / cfg.signal_speed, 250.0, &cfg), LeashVerdict::Pass);
    }

    #[test]
    fn collision_survivors_are_isolated(arrivals in prop::collection::vec(0.0..1.0f64, 0..12), window in 0.0..0.1f64) {
        let alive = resolve_collisions(&arrivals, window);
        prop_assert_eq!(resolve_collisions(&arrivals, 0.0), vec![true; arrivals.len()]);
        for (i, ok) in alive.iter().enumerate() {
            let isolated = arrivals.iter().enumerate().all(|(j, u)| i == j || (u - arrivals[i]).abs() >= window);
            prop_assert_eq!(*ok, window <= 0.0 || isolated);
        }
        let mut reversed = arrivals.clone();
        reversed.reverse();
        let mut back = resolve_collisions(&reversed, window);
        back.reverse();
        prop_assert_eq!(back, alive);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn traces_round_trip_through_jsonl(case in 0u64..1000) {
        let c = common::honest_case(case, false);
        let trace = Simulator::new(&c.scenario, case).run().trace;
        let text = trace.to_jsonl();
        let back = Trace::read_jsonl(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &trace);
        prop_assert_eq!(back.to_jsonl(), text);
    }

    #[test]
    fn running_dv_reaches_the_synchronous_fixed_point(case in 0u64..1000) {
        let c = common::honest_case(case, true);
        let out = Simulator::new(&c.scenario, case).run();
        let (oracle, _) = converge(&c.scenario.graph, 35).unwrap();
        for (run, want) in out.dv_tables.iter().zip(&oracle) {
            prop_assert_eq!(run.snapshot(), want.snapshot());
        }
    }
}
