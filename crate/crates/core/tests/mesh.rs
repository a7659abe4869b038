mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sb_core::meshnet::{MeshConfig, MeshError, MeshNet, ReadingPayload, SINK};
use sb_core::model::Metric;
use sb_core::protosim::FixedPoint;

#[test]
fn discovered_routes_are_shortest() {
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..=10);
        let topo = common::random_connected(&mut rng, n, false);
        let edges = topo.edge_count();
        let origin = rng.random_range(2..=n);
        let want = common::bfs_hops(&topo, origin, SINK).unwrap();

        let mut net = MeshNet::new(topo, MeshConfig { seed, ..MeshConfig::default() }, 0);
        let route = net.discover_route(origin, SINK).unwrap();
        assert_eq!(route.hop_count, want, "seed {seed}: hop count");
        assert!(route.rreq_frames <= 2 * edges, "seed {seed}: {} RREQ frames on {edges} edges", route.rreq_frames);

        let d = net.send_data(origin, SINK, b"x").unwrap();
        assert_eq!(d.hops, want, "seed {seed}: data hops");
        assert_eq!(d.path.len(), want as usize + 1);
        for w in d.path.windows(2) {
            assert!(net.topology().link(w[0], w[1]).is_some(), "seed {seed}: path uses a missing link");
        }
    }
}

#[test]
fn every_pair_matches_bfs() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let n = rng.random_range(2..=8);
        let topo = common::random_connected(&mut rng, n, false);
        for a in 1..=n {
            for b in 1..=n {
                let mut net = MeshNet::new(topo.clone(), MeshConfig::default(), 0);
                let r = net.discover_route(a, b).unwrap();
                assert_eq!(Some(r.hop_count), common::bfs_hops(&topo, a, b), "{a} -> {b}");
            }
        }
    }
}

/// Each node forwards only the first copy it hears, so with uneven link
/// latency the flood may settle on a longer path; it must still be a real one.
#[test]
fn jittered_latency_gives_valid_routes() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..50 {
        let n = rng.random_range(2..=10);
        let topo = common::random_connected(&mut rng, n, true);
        let origin = rng.random_range(2..=n);
        let shortest = common::bfs_hops(&topo, origin, SINK).unwrap();
        let mut net = MeshNet::new(topo, MeshConfig::default(), 0);
        let d = net.send_data(origin, SINK, b"x").unwrap();
        assert!(d.hops >= shortest);
        assert!(d.path.windows(2).all(|w| net.topology().link(w[0], w[1]).is_some()));
    }
}

#[test]
fn partitioned_target_has_no_route() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut topo = common::random_connected(&mut rng, 5, false);
    topo.add_node(42).unwrap();
    let mut net = MeshNet::new(topo, MeshConfig::default(), 0);
    assert_eq!(net.discover_route(42, SINK), Err(MeshError::NoRoute));
}

#[test]
fn readings_cross_the_mesh_intact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let topo = common::random_connected(&mut rng, 9, true);
    let mut net = MeshNet::new(topo, MeshConfig::default(), 0);
    for node in 2..=9u16 {
        let p = ReadingPayload {
            metric: Metric::Humidity,
            value: FixedPoint::from_f64(28.25).unwrap(),
            ts: 1_488_326_400 + node as u32,
        };
        net.send_data(node, SINK, &p.encode().unwrap()).unwrap();
    }
    let got = net.drain_sink();
    assert_eq!(got.len(), 8);
    for d in got {
        let p = ReadingPayload::decode(&d.payload).unwrap();
        assert_eq!(p.value.to_f64(), 28.25);
        assert_eq!(p.ts, 1_488_326_400 + d.src as u32);
    }
}

#[test]
fn lossy_links_are_retried_deterministically() {
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut topo = common::random_connected(&mut rng, 7, true);
        topo.set_loss(0.2);
        let mut net = MeshNet::new(topo, MeshConfig { seed, ..MeshConfig::default() }, 0);
        let outcomes: Vec<_> = (2..=7u16).map(|n| net.send_data(n, SINK, b"ping").map(|d| d.path)).collect();
        (outcomes, net.stats())
    };
    assert_eq!(run(1), run(1));
}
