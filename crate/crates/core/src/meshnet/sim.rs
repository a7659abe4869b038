//! Single-threaded discrete-event simulation of the mesh.
//!
//! Route discovery floods RREQ frames (one rebroadcast per node per
//! `(src, seq)`), the target answers each copy that is no longer than its
//! best answer so far with a unicast RREP along the reverse path, and the
//! origin installs the first hop of the best reply ordered by
//! `(hop count, arrival time, first-hop id)`.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tracing::debug;

use super::frame::{MeshFrame, MeshKind, NodeId, MAX_PAYLOAD};
use super::topology::Topology;

pub const SINK: NodeId = 0x0001;

#[derive(Debug, Clone, PartialEq)]
pub struct MeshConfig {
    pub ttl: u8,
    pub discovery_timeout: Duration,
    pub route_ttl: Duration,
    pub dedupe_window: Duration,
    /// Link-layer retransmissions for unicast frames.
    pub retries: u8,
    pub seed: u64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            ttl: 8,
            discovery_timeout: Duration::from_secs(5),
            route_ttl: Duration::from_secs(300),
            dedupe_window: Duration::from_secs(30),
            retries: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MeshError {
    #[error("NO_ROUTE")]
    NoRoute,
    #[error("DROPPED_TTL")]
    DroppedTtl,
    #[error("DROPPED_LOSS")]
    DroppedLoss,
    #[error("routing loop detected")]
    RoutingLoop,
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("payload larger than {MAX_PAYLOAD} bytes")]
    PayloadTooLarge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteEntry {
    pub next_hop: NodeId,
    pub hop_count: u8,
    pub learned_at_ms: i64,
}

#[derive(Debug, Clone, Default)]
pub struct RouteTable {
    entries: BTreeMap<NodeId, RouteEntry>,
}

impl RouteTable {
    pub fn lookup(&self, dst: NodeId, now_ms: i64, ttl: Duration) -> Option<RouteEntry> {
        self.entries
            .get(&dst)
            .copied()
            .filter(|e| now_ms - e.learned_at_ms <= ttl.as_millis() as i64)
    }

    pub fn insert(&mut self, dst: NodeId, e: RouteEntry) {
        self.entries.insert(dst, e);
    }

    /// Keeps the existing entry unless it expired or `e` is strictly shorter.
    fn offer(&mut self, dst: NodeId, e: RouteEntry, ttl: Duration) {
        match self.lookup(dst, e.learned_at_ms, ttl) {
            Some(cur) if cur.hop_count <= e.hop_count => {}
            _ => {
                self.entries.insert(dst, e);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freshness {
    Fresh,
    Duplicate,
}

/// Flood suppression cache: `(src, seq)` pairs remembered for one window.
#[derive(Debug, Clone)]
pub struct SeenCache {
    window_ms: i64,
    entries: HashMap<(NodeId, u8), i64>,
}

impl SeenCache {
    pub fn new(window: Duration) -> Self {
        SeenCache {
            window_ms: window.as_millis() as i64,
            entries: HashMap::new(),
        }
    }

    pub fn check(&mut self, src: NodeId, seq: u8, now_ms: i64) -> Freshness {
        let window = self.window_ms;
        self.entries.retain(|_, t| now_ms - *t <= window);
        match self.entries.get(&(src, seq)) {
            Some(_) => Freshness::Duplicate,
            None => {
                self.entries.insert((src, seq), now_ms);
                Freshness::Fresh
            }
        }
    }
}

#[derive(Debug, Clone)]
struct NodeState {
    routes: RouteTable,
    seen: SeenCache,
    seq: u8,
    best_reply: HashMap<(NodeId, u8), u8>,
}

impl NodeState {
    fn next_seq(&mut self) -> u8 {
        let s = self.seq;
        self.seq = self.seq.wrapping_add(1);
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Route {
    pub next_hop: NodeId,
    pub hop_count: u8,
    /// RREQ transmissions spent on this discovery.
    pub rreq_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub src: NodeId,
    pub dst: NodeId,
    pub seq: u8,
    pub hops: u8,
    pub payload: Vec<u8>,
    pub at_ms: i64,
    /// Nodes visited, origin first.
    pub path: Vec<NodeId>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct MeshStats {
    pub rreq_frames: usize,
    pub rrep_frames: usize,
    pub data_frames: usize,
    pub lost_attempts: usize,
    pub ttl_drops: usize,
}

#[derive(Debug)]
struct Arrival {
    from: NodeId,
    to: NodeId,
    frame: MeshFrame,
    trace: Vec<NodeId>,
}

#[derive(Debug)]
struct Scheduled {
    at_ms: i64,
    order: u64,
    arrival: Arrival,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.at_ms, self.order) == (other.at_ms, other.order)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.at_ms, self.order).cmp(&(other.at_ms, other.order))
    }
}

#[derive(Debug, Clone, Copy)]
struct Reply {
    origin: NodeId,
    seq: u8,
    hops: u8,
    at_ms: i64,
    first_hop: NodeId,
}

pub struct MeshNet {
    topo: Topology,
    cfg: MeshConfig,
    now_ms: i64,
    rng: ChaCha8Rng,
    nodes: BTreeMap<NodeId, NodeState>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    order: u64,
    stats: MeshStats,
    replies: Vec<Reply>,
    data_outcome: Option<Result<Delivery, MeshError>>,
    sink: NodeId,
    outbox: VecDeque<Delivery>,
}

impl MeshNet {
    pub fn new(topo: Topology, cfg: MeshConfig, start_ms: i64) -> Self {
        let nodes = topo
            .nodes()
            .map(|n| {
                (
                    n,
                    NodeState {
                        routes: RouteTable::default(),
                        seen: SeenCache::new(cfg.dedupe_window),
                        seq: 0,
                        best_reply: HashMap::new(),
                    },
                )
            })
            .collect();
        MeshNet {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            topo,
            cfg,
            now_ms: start_ms,
            nodes,
            queue: BinaryHeap::new(),
            order: 0,
            stats: MeshStats::default(),
            replies: Vec::new(),
            data_outcome: None,
            sink: SINK,
            outbox: VecDeque::new(),
        }
    }

    pub fn with_sink(mut self, sink: NodeId) -> Self {
        self.sink = sink;
        self
    }

    pub fn now_ms(&self) -> i64 {
        self.now_ms
    }

    pub fn stats(&self) -> MeshStats {
        self.stats
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn topology_mut(&mut self) -> &mut Topology {
        &mut self.topo
    }

    pub fn config(&self) -> &MeshConfig {
        &self.cfg
    }

    pub fn route(&self, at: NodeId, dst: NodeId) -> Option<RouteEntry> {
        self.nodes
            .get(&at)?
            .routes
            .lookup(dst, self.now_ms, self.cfg.route_ttl)
    }

    /// Flood-suppression check at `node`, exposed for direct testing.
    pub fn dedupe_seen(&mut self, node: NodeId, src: NodeId, seq: u8) -> Result<Freshness, MeshError> {
        let now = self.now_ms;
        let st = self.nodes.get_mut(&node).ok_or(MeshError::UnknownNode(node))?;
        Ok(st.seen.check(src, seq, now))
    }

    /// Processes every pending event up to `t_ms`, then moves the clock there.
    pub fn advance_to(&mut self, t_ms: i64) {
        self.run_until(t_ms, |_| false);
        self.now_ms = self.now_ms.max(t_ms);
    }

    /// Payloads that reached the sink, oldest first.
    pub fn drain_sink(&mut self) -> Vec<Delivery> {
        self.outbox.drain(..).collect()
    }

    fn node(&mut self, n: NodeId) -> Result<&mut NodeState, MeshError> {
        self.nodes.get_mut(&n).ok_or(MeshError::UnknownNode(n))
    }

    pub fn discover_route(&mut self, origin: NodeId, target: NodeId) -> Result<Route, MeshError> {
        self.node(target)?;
        let now = self.now_ms;
        let ttl = self.cfg.ttl;
        let st = self.node(origin)?;
        if origin == target {
            return Ok(Route {
                next_hop: origin,
                hop_count: 0,
                rreq_frames: 0,
            });
        }
        let seq = st.next_seq();
        st.seen.check(origin, seq, now);
        let before = self.stats.rreq_frames;
        let rreq = MeshFrame {
            kind: MeshKind::Rreq,
            src: origin,
            dst: target,
            seq,
            ttl,
            hops: 0,
            payload: Vec::new(),
        };
        for nb in self.topo.neighbors(origin) {
            self.transmit(origin, nb, &rreq, false, Vec::new());
        }
        let deadline = now + self.cfg.discovery_timeout.as_millis() as i64;
        self.run_until(deadline, |_| false);

        let best = self
            .replies
            .iter()
            .filter(|r| r.origin == origin && r.seq == seq && r.at_ms <= deadline)
            .min_by_key(|r| (r.hops, r.at_ms, r.first_hop))
            .copied();
        self.replies.retain(|r| !(r.origin == origin && r.seq == seq));
        let rreq_frames = self.stats.rreq_frames - before;
        match best {
            Some(r) => {
                let entry = RouteEntry {
                    next_hop: r.first_hop,
                    hop_count: r.hops,
                    learned_at_ms: r.at_ms,
                };
                self.node(origin)?.routes.insert(target, entry);
                Ok(Route {
                    next_hop: r.first_hop,
                    hop_count: r.hops,
                    rreq_frames,
                })
            }
            None => {
                self.now_ms = self.now_ms.max(deadline);
                Err(MeshError::NoRoute)
            }
        }
    }

    /// Sends `payload` from `origin` to `target`, discovering a route on a miss.
    pub fn send_data(&mut self, origin: NodeId, target: NodeId, payload: &[u8]) -> Result<Delivery, MeshError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(MeshError::PayloadTooLarge);
        }
        self.node(target)?;
        self.node(origin)?;
        if self.route(origin, target).is_none() && origin != target {
            self.discover_route(origin, target)?;
        }
        let seq = self.node(origin)?.next_seq();
        let frame = MeshFrame {
            kind: MeshKind::Data,
            src: origin,
            dst: target,
            seq,
            ttl: self.cfg.ttl,
            hops: 0,
            payload: payload.to_vec(),
        };
        self.inject(origin, frame)
    }

    /// Hands `frame` to `node` as if it had just arrived there, and runs the
    /// simulation until the frame is delivered or dropped.
    pub fn inject(&mut self, node: NodeId, frame: MeshFrame) -> Result<Delivery, MeshError> {
        self.node(node)?;
        self.data_outcome = None;
        self.forward_data(node, frame, vec![node]);
        self.run_until(i64::MAX, |net| net.data_outcome.is_some());
        self.data_outcome.take().unwrap_or(Err(MeshError::NoRoute))
    }

    fn run_until(&mut self, deadline: i64, mut stop: impl FnMut(&Self) -> bool) {
        while !stop(self) {
            let due = matches!(self.queue.peek(), Some(Reverse(s)) if s.at_ms <= deadline);
            if !due {
                break;
            }
            let Some(Reverse(s)) = self.queue.pop() else { break };
            self.now_ms = self.now_ms.max(s.at_ms);
            self.handle(s.arrival);
        }
    }

    /// One link hop, with retransmissions for unicast frames. Returns whether
    /// some attempt got through.
    fn transmit(&mut self, from: NodeId, to: NodeId, frame: &MeshFrame, unicast: bool, trace: Vec<NodeId>) -> bool {
        let Some(link) = self.topo.link(from, to) else {
            return false;
        };
        let attempts = if unicast { 1 + self.cfg.retries as u32 } else { 1 };
        for attempt in 1..=attempts {
            match frame.kind {
                MeshKind::Rreq => self.stats.rreq_frames += 1,
                MeshKind::Rrep => self.stats.rrep_frames += 1,
                _ => self.stats.data_frames += 1,
            }
            let lost = link.loss > 0.0 && self.rng.random::<f64>() < link.loss;
            if lost {
                self.stats.lost_attempts += 1;
                continue;
            }
            let mut next = frame.clone();
            next.ttl = next.ttl.saturating_sub(1);
            next.hops = next.hops.saturating_add(1);
            let at_ms = self.now_ms + (link.latency.as_millis() as i64) * attempt as i64;
            self.order += 1;
            self.queue.push(Reverse(Scheduled {
                at_ms,
                order: self.order,
                arrival: Arrival {
                    from,
                    to,
                    frame: next,
                    trace,
                },
            }));
            return true;
        }
        false
    }

    fn handle(&mut self, a: Arrival) {
        match a.frame.kind {
            MeshKind::Rreq => self.on_rreq(a.from, a.to, a.frame),
            MeshKind::Rrep => self.on_rrep(a.from, a.to, a.frame),
            MeshKind::Data => self.forward_data(a.to, a.frame, a.trace),
            MeshKind::Other(k) => debug!(kind = k, "unknown mesh frame dropped"),
        }
    }

    fn on_rreq(&mut self, from: NodeId, at: NodeId, f: MeshFrame) {
        if at == f.src {
            return;
        }
        let now = self.now_ms;
        let (route_ttl, reply_ttl) = (self.cfg.route_ttl, self.cfg.ttl);
        let Some(st) = self.nodes.get_mut(&at) else { return };
        let fresh = st.seen.check(f.src, f.seq, now) == Freshness::Fresh;
        st.routes.offer(
            f.src,
            RouteEntry {
                next_hop: from,
                hop_count: f.hops,
                learned_at_ms: now,
            },
            route_ttl,
        );
        if at == f.dst {
            let best = st.best_reply.get(&(f.src, f.seq)).copied();
            if best.is_none_or(|b| f.hops <= b) {
                st.best_reply.insert((f.src, f.seq), f.hops);
                let rrep = MeshFrame {
                    kind: MeshKind::Rrep,
                    src: at,
                    dst: f.src,
                    seq: f.seq,
                    ttl: reply_ttl,
                    hops: 0,
                    payload: Vec::new(),
                };
                self.transmit(at, from, &rrep, true, Vec::new());
            }
            return;
        }
        if !fresh {
            return;
        }
        if f.ttl == 0 {
            self.stats.ttl_drops += 1;
            return;
        }
        for nb in self.topo.neighbors(at) {
            self.transmit(at, nb, &f, false, Vec::new());
        }
    }

    fn on_rrep(&mut self, from: NodeId, at: NodeId, f: MeshFrame) {
        let now = self.now_ms;
        let route_ttl = self.cfg.route_ttl;
        let Some(st) = self.nodes.get_mut(&at) else { return };
        st.routes.offer(
            f.src,
            RouteEntry {
                next_hop: from,
                hop_count: f.hops,
                learned_at_ms: now,
            },
            route_ttl,
        );
        if at == f.dst {
            self.replies.push(Reply {
                origin: at,
                seq: f.seq,
                hops: f.hops,
                at_ms: now,
                first_hop: from,
            });
            return;
        }
        let Some(next) = st.routes.lookup(f.dst, now, route_ttl) else {
            debug!(node = at, dst = f.dst, "RREP without reverse route dropped");
            return;
        };
        if f.ttl == 0 {
            self.stats.ttl_drops += 1;
            return;
        }
        self.transmit(at, next.next_hop, &f, true, Vec::new());
    }

    fn forward_data(&mut self, at: NodeId, f: MeshFrame, trace: Vec<NodeId>) {
        if at == f.dst {
            let d = Delivery {
                src: f.src,
                dst: f.dst,
                seq: f.seq,
                hops: f.hops,
                payload: f.payload,
                at_ms: self.now_ms,
                path: trace,
            };
            if d.dst == self.sink {
                self.outbox.push_back(d.clone());
            }
            self.data_outcome = Some(Ok(d));
            return;
        }
        let Some(next) = self.route(at, f.dst) else {
            self.data_outcome = Some(Err(MeshError::NoRoute));
            return;
        };
        if f.ttl == 0 {
            self.stats.ttl_drops += 1;
            self.data_outcome = Some(Err(MeshError::DroppedTtl));
            return;
        }
        if trace.contains(&next.next_hop) {
            self.data_outcome = Some(Err(MeshError::RoutingLoop));
            return;
        }
        let mut next_trace = trace;
        next_trace.push(next.next_hop);
        if !self.transmit(at, next.next_hop, &f, true, next_trace) {
            self.data_outcome = Some(Err(MeshError::DroppedLoss));
        }
    }
}
