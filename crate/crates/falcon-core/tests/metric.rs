//! The closed-form design distance must behave like a metric and agree
//! with shortest paths over the materialized design graph, including on
//! spaces with dependency groups and gates.

use std::collections::{BTreeSet, VecDeque};

use falcon_core::graph::DesignGraph;
use falcon_core::space::{DependencyGroup, DesignSpace, Dimension, Gate};
use falcon_core::SpaceIndex;
use proptest::prelude::*;

/// mp and loop share a value grid so a `loop <= mp` gate is always
/// satisfiable; `n_loop <= n_mp` keeps even the smallest mp feasible.
fn build_index(n_mp: usize, n_types: usize, n_loop: usize, gated: bool) -> SpaceIndex {
    let mp_vals: Vec<f64> = (1..=n_mp).map(|i| 2.0 * i as f64).collect();
    let loop_vals: Vec<f64> = (1..=n_loop).map(|i| 2.0 * i as f64).collect();
    let mut pool = vec!["off".to_string()];
    pool.extend((1..=n_types).map(|i| format!("t{i}")));
    let pool_refs: Vec<&str> = pool.iter().map(String::as_str).collect();
    let gates = if gated {
        vec![Gate { dimension: "loop".into(), bound: "mp".into() }]
    } else {
        vec![]
    };
    let space = DesignSpace::new(
        vec![
            Dimension::numerical("mp", &mp_vals),
            Dimension::categorical("pool", &pool_refs),
            Dimension::numerical("loop", &loop_vals),
        ],
        vec![DependencyGroup {
            flag: "pool".into(),
            inactive_choice: "off".into(),
            members: vec!["loop".into()],
            gates,
        }],
    )
    .unwrap();
    SpaceIndex::new(space).unwrap()
}

fn bfs_distance(graph: &DesignGraph, from: usize, to: usize) -> Option<u32> {
    let mut dist = vec![u32::MAX; graph.node_count()];
    let mut queue = VecDeque::new();
    dist[from] = 0;
    queue.push_back(from);
    while let Some(u) = queue.pop_front() {
        if u == to {
            return Some(dist[u]);
        }
        for (v, _) in graph.neighbors(u) {
            if dist[v] == u32::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    None
}

fn shape() -> impl Strategy<Value = (usize, usize, usize, bool)> {
    (2usize..=4, 1usize..=3, 2usize..=3, any::<bool>())
        .prop_filter("gate needs loop grid inside mp grid", |&(mp, _, lp, _)| lp <= mp)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn distance_is_a_metric((n_mp, n_types, n_loop, gated) in shape(), seed in any::<u64>()) {
        let index = build_index(n_mp, n_types, n_loop, gated);
        let n = index.len();
        for i in 0..n {
            prop_assert_eq!(index.distance_ids(i, i).unwrap(), 0);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let d = index.distance_ids(i, j).unwrap();
                prop_assert!(d > 0);
                prop_assert_eq!(d, index.distance_ids(j, i).unwrap());
            }
        }
        // Triangle inequality over pseudo-random triples.
        let mut state = seed;
        for _ in 0..300 {
            let mut draw = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 33) as usize % n
            };
            let (a, b, c) = (draw(), draw(), draw());
            let ab = index.distance_ids(a, b).unwrap();
            let bc = index.distance_ids(b, c).unwrap();
            let ac = index.distance_ids(a, c).unwrap();
            prop_assert!(ac <= ab + bc, "d({a},{c}) = {ac} > {ab} + {bc}");
        }
    }

    #[test]
    fn distance_equals_shortest_path((n_mp, n_types, n_loop, gated) in shape(), seed in any::<u64>()) {
        let index = build_index(n_mp, n_types, n_loop, gated);
        let graph = DesignGraph::build(&index);
        let n = index.len();
        let mut state = seed;
        for _ in 0..60 {
            let mut draw = || {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 33) as usize % n
            };
            let (u, v) = (draw(), draw());
            let closed_form = index.distance_ids(u, v).unwrap();
            let walked = bfs_distance(&graph, u, v).expect("design graphs are connected");
            prop_assert_eq!(closed_form, walked, "between {} and {}", u, v);
        }
    }

    #[test]
    fn neighbors_are_exactly_the_unit_sphere((n_mp, n_types, n_loop, gated) in shape()) {
        let index = build_index(n_mp, n_types, n_loop, gated);
        let n = index.len();
        for u in 0..n {
            let listed: BTreeSet<usize> =
                index.neighbors(u).unwrap().into_iter().map(|(v, _)| v).collect();
            let sphere: BTreeSet<usize> =
                (0..n).filter(|&v| index.distance_ids(u, v).unwrap() == 1).collect();
            prop_assert_eq!(&listed, &sphere, "around design {}", u);
        }
    }

    #[test]
    fn encodings_stay_in_the_unit_box((n_mp, n_types, n_loop, gated) in shape()) {
        let index = build_index(n_mp, n_types, n_loop, gated);
        let space = index.space();
        for id in 0..index.len() {
            let design = index.design(id).unwrap();
            let enc = space.encode(&design);
            prop_assert_eq!(enc.len(), space.encoding_width());
            for &x in &enc {
                prop_assert!((0.0..=1.0).contains(&x));
            }
            // An inactive group zeroes its member features.
            if !space.group_is_active(&design, 0) {
                let loop_dim = space.dimension_index("loop").unwrap();
                prop_assert_eq!(design.choice(loop_dim), None);
            }
        }
    }
}
