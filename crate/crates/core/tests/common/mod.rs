//! Oracles and generators shared by the integration suites. Nothing here
//! calls into the code under test except to build inputs.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::{Rng, RngCore};
use sb_core::meshnet::{LinkParams, MeshFrame, MeshKind, NodeId, Topology};
use sb_core::model::MacAddr;
use sb_core::protosim::{BleFrame, BleOp, BleStatus, FixedPoint, ZwaveCommand, ZwaveFrame};

/// CRC-8/SMBUS as a literal shift register: feed each message bit in MSB
/// first, then flush eight zero bits; the register holds the remainder.
pub fn crc8_oracle(data: &[u8]) -> u8 {
    const POLY: u16 = 0x107;
    let mut reg: u16 = 0;
    let bits = data
        .iter()
        .flat_map(|b| (0..8).rev().map(move |i| (b >> i) & 1))
        .chain(std::iter::repeat_n(0, 8));
    for bit in bits {
        reg = (reg << 1) | bit as u16;
        if reg & 0x100 != 0 {
            reg ^= POLY;
        }
    }
    reg as u8
}

pub fn random_mac(rng: &mut impl Rng) -> MacAddr {
    let mut b = [0u8; 6];
    rng.fill_bytes(&mut b);
    MacAddr(b)
}

pub fn random_ble(rng: &mut impl Rng) -> BleFrame {
    match rng.random_range(0..3) {
        0 => BleFrame::Request {
            op: BleOp::from(rng.random::<u8>()),
            char_id: rng.random(),
        },
        1 => BleFrame::Response {
            char_id: rng.random(),
            status: BleStatus::from(rng.random::<u8>()),
            value: FixedPoint(rng.random()),
            ts: rng.random(),
        },
        _ => {
            let n = rng.random_range(0..8);
            BleFrame::ScanResponse {
                macs: (0..n).map(|_| random_mac(rng)).collect(),
            }
        }
    }
}

pub fn random_zwave(rng: &mut impl Rng) -> ZwaveFrame {
    ZwaveFrame {
        node_id: rng.random(),
        cmd: ZwaveCommand::from(rng.random::<u8>()),
        value: rng.random(),
        seq: rng.random(),
    }
}

pub fn random_mesh(rng: &mut impl Rng) -> MeshFrame {
    let len = rng.random_range(0..=64);
    let mut payload = vec![0u8; len];
    rng.fill_bytes(&mut payload);
    MeshFrame {
        kind: MeshKind::from(rng.random::<u8>()),
        src: rng.random(),
        dst: rng.random(),
        seq: rng.random(),
        ttl: rng.random(),
        hops: rng.random(),
        payload,
    }
}

/// A connected lossless graph on nodes `1..=n`: a random spanning tree plus
/// extra edges. Links share one latency unless `jitter` draws one per link.
pub fn random_connected(rng: &mut impl Rng, n: u16, jitter: bool) -> Topology {
    let mut t = Topology::new();
    let shared = rng.random_range(0..20u64);
    let link = |rng: &mut dyn RngCore| LinkParams {
        loss: 0.0,
        latency: Duration::from_millis(if jitter { rng.next_u32() as u64 % 40 } else { shared }),
    };
    t.add_node(1).unwrap();
    for v in 2..=n {
        let parent = rng.random_range(1..v);
        t.add_link(parent, v, link(rng)).unwrap();
    }
    let extra = rng.random_range(0..=n as usize);
    for _ in 0..extra {
        let a = rng.random_range(1..=n);
        let b = rng.random_range(1..=n);
        if a != b {
            t.add_link(a, b, link(rng)).unwrap();
        }
    }
    t
}

/// Hop distance by breadth-first search over an adjacency list rebuilt from the link set.
pub fn bfs_hops(t: &Topology, from: NodeId, to: NodeId) -> Option<u8> {
    let mut adj: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for (a, b, _) in t.links() {
        adj.entry(a).or_default().insert(b);
        adj.entry(b).or_default().insert(a);
    }
    let mut dist = BTreeMap::from([(from, 0u8)]);
    let mut queue = VecDeque::from([from]);
    while let Some(v) = queue.pop_front() {
        if v == to {
            return dist.get(&v).copied();
        }
        for &w in adj.get(&v).into_iter().flatten() {
            if !dist.contains_key(&w) {
                dist.insert(w, dist[&v] + 1);
                queue.push_back(w);
            }
        }
    }
    None
}

/// Every regular file under `root`, relative path first, in sorted order.
pub fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_path_buf();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out
}

pub fn copy_tree(from: &Path, to: &Path) {
    for (rel, bytes) in tree(from) {
        let dst = to.join(rel);
        std::fs::create_dir_all(dst.parent().unwrap()).unwrap();
        std::fs::write(dst, bytes).unwrap();
    }
}
