//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sb_core::analytics::comfort::{ComfortFlag, LightClass, MetricComfort};
use sb_core::analytics::HourlyProfile;
use sb_core::automation::relay::MANUAL_TTL;
use sb_core::automation::{Comparator, Condition, Engine, RelayBoard, RelayCommand, Rule, Snapshot, Switch};
use sb_core::meshnet::{decode_mesh, encode_mesh, MeshConfig, MeshNet, SINK};
use sb_core::model::{ts_from_epoch, Metric, Protocol, Reading};
use sb_core::protosim::{crc8, decode_ble, decode_zwave, encode_ble, encode_zwave, FrameError};
use sb_core::runtime::{room_report, run, RoomReport, RunOptions};
use sb_core::scenario::Scenario;
use sb_core::tstore::Store;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn corruption_accepted<T>(wire: &[u8], decode: impl Fn(&[u8]) -> Result<T, FrameError>) -> usize {
    let mut buf = wire.to_vec();
    let mut accepted = 0;
    for pos in 0..wire.len() {
        for delta in 1..=255u8 {
            buf[pos] = wire[pos] ^ delta;
            accepted += decode(&buf).is_ok() as usize;
        }
        buf[pos] = wire[pos];
    }
    accepted
}

fn codec_soundness() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..10_000 {
        let f = common::random_ble(&mut rng);
        check(decode_ble(&encode_ble(&f).unwrap()) == Ok(f.clone()), || format!("ble round trip {f:?}"))?;
        let z = common::random_zwave(&mut rng);
        check(decode_zwave(&encode_zwave(&z)) == Ok(z), || format!("zwave round trip {z:?}"))?;
        let m = common::random_mesh(&mut rng);
        check(decode_mesh(&encode_mesh(&m).unwrap()) == Ok(m.clone()), || format!("mesh round trip {m:?}"))?;
    }
    let mut variants = 0usize;
    let mut accepted = 0usize;
    for _ in 0..100 {
        let b = encode_ble(&common::random_ble(&mut rng)).unwrap();
        let z = encode_zwave(&common::random_zwave(&mut rng));
        let m = encode_mesh(&common::random_mesh(&mut rng)).unwrap();
        variants += 255 * (b.len() + z.len() + m.len());
        accepted += corruption_accepted(&b, decode_ble);
        accepted += corruption_accepted(&z, decode_zwave);
        accepted += corruption_accepted(&m, decode_mesh);
    }
    let secs = t.elapsed().as_secs_f64();
    check(accepted == 0, || format!("{accepted} corrupted frames accepted"))?;
    check(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!("3x10000 round trips, {variants} corrupted variants, 0 accepted, {secs:.1} s"))
}

fn crc_oracle() -> Outcome {
    let check_value = common::crc8_oracle(b"123456789");
    check(check_value == 0xF4, || format!("oracle gives {check_value:#04x}"))?;
    check(crc8(b"123456789") == check_value, || format!("crc8 gives {:#04x}", crc8(b"123456789")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    for i in 0..1000 {
        let len = rng.random_range(0..128);
        let data: Vec<u8> = (0..len).map(|_| rng.random()).collect();
        check(crc8(&data) == common::crc8_oracle(&data), || format!("input {i} differs"))?;
    }
    Ok("check value 0xF4, 1000/1000 random inputs agree".into())
}

fn mesh_optimality() -> Outcome {
    let t = Instant::now();
    let mut max_ratio = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.random_range(2..=10);
        let topo = common::random_connected(&mut rng, n, false);
        let edges = topo.edge_count();
        let origin = rng.random_range(2..=n);
        let want = common::bfs_hops(&topo, origin, SINK).unwrap();
        let mut net = MeshNet::new(topo, MeshConfig { seed, ..MeshConfig::default() }, 0);
        let route = net.discover_route(origin, SINK).map_err(|e| format!("seed {seed}: {e}"))?;
        check(route.hop_count == want, || format!("seed {seed}: {} hops, BFS {want}", route.hop_count))?;
        check(route.rreq_frames <= 2 * edges, || format!("seed {seed}: {} frames > 2x{edges}", route.rreq_frames))?;
        max_ratio = max_ratio.max(route.rreq_frames as f64 / edges as f64);
    }
    let secs = t.elapsed().as_secs_f64();
    check(secs < 30.0, || format!("took {secs:.1} s"))?;
    Ok(format!("100/100 shortest, max flood {max_ratio:.2}x edges, {secs:.2} s"))
}

/// Two concurrent runs of the bundled scenario, kept for the claims below.
struct EndToEnd {
    dirs: [tempfile::TempDir; 2],
    outcome: Outcome,
}

fn end_to_end() -> EndToEnd {
    let sc = Scenario::bundled();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let t = Instant::now();
    let (a, b) = rt.block_on(async {
        tokio::join!(
            run(&sc, RunOptions::simulate(dirs[0].path()), std::future::pending()),
            run(&sc, RunOptions::simulate(dirs[1].path()), std::future::pending()),
        )
    });
    let secs = t.elapsed().as_secs_f64();
    let outcome = (|| {
        let a = a.map_err(|e| format!("run 1: {e}"))?;
        b.map_err(|e| format!("run 2: {e}"))?;
        check(secs < 120.0, || format!("took {secs:.1} s"))?;
        let (store, _) = Store::open(dirs[0].path()).map_err(|e| e.to_string())?;
        let mut counts: BTreeMap<(String, Metric), usize> = BTreeMap::new();
        for r in store.all().map_err(|e| e.to_string())? {
            *counts.entry((r.device_id, r.metric)).or_default() += 1;
        }
        let polled: Vec<_> = sc
            .devices
            .iter()
            .filter(|d| d.descriptor().protocol == Protocol::BleSim)
            .flat_map(|d| d.descriptor().metrics.iter().map(move |m| (d.id().to_string(), *m)))
            .collect();
        check(sc.rooms.len() == 3, || format!("{} rooms", sc.rooms.len()))?;
        check(polled.len() == 12, || format!("{} polled streams", polled.len()))?;
        for key in &polled {
            let n = counts.get(key).copied().unwrap_or(0);
            check(n.abs_diff(1440) <= 1, || format!("{}/{}: {n} rows", key.0, key.1))?;
        }
        let ta = common::tree(dirs[0].path());
        let tb = common::tree(dirs[1].path());
        check(ta == tb, || "stores differ".into())?;
        Ok(format!(
            "3 rooms, 12 polled streams x 1440 rows, {} files byte-identical, {} relay commands, {secs:.1} s",
            ta.len(),
            a.commands.len()
        ))
    })();
    EndToEnd { dirs, outcome }
}

fn report(store_root: &Path, room: &str) -> Result<(RoomReport, Vec<Reading>), String> {
    let sc = Scenario::bundled();
    let (store, _) = Store::open(store_root).map_err(|e| e.to_string())?;
    let r = room_report(&store, room, sc.start, sc.end(), &sc.bands, sc.light_threshold).map_err(|e| e.to_string())?;
    let rows = store.all().map_err(|e| e.to_string())?.into_iter().filter(|x| x.room_id == room).collect();
    Ok((r, rows))
}

fn humidity_claim(store_root: &Path) -> Outcome {
    let mut parts = Vec::new();
    for room in ["dorm-1", "dorm-2"] {
        let (r, rows) = report(store_root, room)?;
        let peak = rows.iter().filter(|x| x.metric == Metric::Humidity).map(|x| x.value).fold(f64::MIN, f64::max);
        check(peak < 30.0, || format!("{room}: humidity reached {peak}"))?;
        match r.comfort.metrics.get(&Metric::Humidity) {
            Some(MetricComfort::Scored { mean_value, score, flag, .. }) => {
                check(*flag == ComfortFlag::BelowBand, || format!("{room}: flag {flag:?}"))?;
                check(*score <= 0.34, || format!("{room}: score {score:.3}"))?;
                parts.push(format!("{room} mean {mean_value:.1} %RH score {score:.3} below_band"));
            }
            other => return Err(format!("{room}: {other:?}")),
        }
    }
    Ok(parts.join(", "))
}

fn light_claim(store_root: &Path) -> Outcome {
    let (lab, _) = report(store_root, "lab")?;
    check(lab.light == Some(LightClass::Adequate), || format!("lab: {:?}", lab.light))?;
    let (dorm, rows) = report(store_root, "dorm-2")?;
    let peak = rows.iter().filter(|x| x.metric == Metric::Light).map(|x| x.value).fold(f64::MIN, f64::max);
    check(peak <= 200.0, || format!("dorm-2 light reached {peak}"))?;
    check(dorm.light == Some(LightClass::Dim), || format!("dorm-2: {:?}", dorm.light))?;
    Ok(format!(
        "lab {:.0} lux adequate, dorm-2 {:.0} lux (max {peak:.0}) dim",
        lab.mean_lux.unwrap_or_default(),
        dorm.mean_lux.unwrap_or_default()
    ))
}

fn predictor() -> Outcome {
    const STEP: i64 = 60;
    const DAY: i64 = 86_400;
    let noise = Normal::new(0.0, 0.5).unwrap();
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sample = |t: i64| 22.0 + 4.0 * (2.0 * PI * t as f64 / DAY as f64).sin() + noise.sample(&mut rng);
        let t0 = 1_488_326_400;
        let mut model = HourlyProfile::new(0.3);
        let mut oracle: [Option<f64>; 24] = [None; 24];
        for t in (0..7 * DAY).step_by(STEP as usize) {
            let v = sample(t);
            model.update(&Reading::new("s", "room", Metric::Temperature, v, ts_from_epoch(t0 + t)));
            let h = ((t % DAY) / 3600) as usize;
            oracle[h] = Some(oracle[h].map_or(v, |s| 0.3 * v + 0.7 * s));
        }
        for (h, want) in oracle.iter().enumerate() {
            let got = model.predict("room", Metric::Temperature, h as u8).ok();
            check(got == *want, || format!("seed {seed} hour {h}: {got:?} vs oracle {want:?}"))?;
        }
        let (mut err, mut n) = (0.0, 0.0);
        for t in (7 * DAY..8 * DAY).step_by(STEP as usize) {
            let h = ((t % DAY) / 3600) as usize;
            err += (oracle[h].unwrap() - sample(t)).abs();
            n += 1.0;
        }
        let mae = err / n;
        check(mae <= 1.0, || format!("seed {seed}: MAE {mae:.3}"))?;
        worst = worst.max(mae);
    }
    Ok(format!("20/20 seeds, model equals oracle, worst day-8 MAE {worst:.3}"))
}

fn rule(id: &str, target: Switch, release: Option<Switch>, hold_s: u64, when: Vec<Condition>) -> Rule {
    Rule {
        id: id.into(),
        room: "r".into(),
        relay: "relay".into(),
        target,
        release_state: release,
        hold_s,
        when,
    }
}

/// Evaluates once per minute; every command is acknowledged at once.
fn drive(engine: &mut Engine, board: &mut RelayBoard, minutes: std::ops::Range<i64>, snap: impl Fn(i64) -> Snapshot) -> Vec<(i64, RelayCommand)> {
    let mut out = Vec::new();
    for m in minutes {
        for c in engine.evaluate(&snap(m), board) {
            board.reconcile_ack(&c.relay_id, c.on).unwrap();
            out.push((m, c));
        }
    }
    out
}

fn board(on: bool) -> RelayBoard {
    let mut b = RelayBoard::new();
    b.register("relay", 4).unwrap();
    b.command_auto("relay", on, "init", ts_from_epoch(0)).unwrap();
    b.reconcile_ack("relay", on).unwrap();
    b
}

fn automation() -> Outcome {
    const T0: i64 = 1_488_326_400;
    let at = |m: i64| ts_from_epoch(T0 + m * 60);
    let empty_for_10 = || rule("off", Switch::Off, None, 600, vec![Condition::Occupancy { op: Comparator::Eq, value: 0 }]);

    // occupancy 2 until minute 30, then 0
    let occ = |m: i64| Snapshot::new(at(m)).with_occupancy("r", if m < 30 { 2 } else { 0 });
    let mut b = board(true);
    let cmds = drive(&mut Engine::new(vec![empty_for_10()]), &mut b, 0..120, occ);
    check(cmds.len() == 1, || format!("{} commands: {cmds:?}", cmds.len()))?;
    check(cmds[0].0 == 40 && !cmds[0].1.on, || format!("got {:?}", cmds[0]))?;

    // a manual override holds until it expires
    let ttl_min = MANUAL_TTL.as_secs() as i64 / 60;
    let mut b = board(true);
    b.apply_manual("relay", true, at(0)).unwrap();
    let cmds = drive(&mut Engine::new(vec![empty_for_10()]), &mut b, 0..ttl_min + 30, |m| {
        Snapshot::new(at(m)).with_occupancy("r", 0)
    });
    check(cmds.len() == 1 && cmds[0].0 == ttl_min, || format!("override expiry: {cmds:?}"))?;

    // ... or until it is cleared
    let mut b = board(true);
    let mut e = Engine::new(vec![empty_for_10()]);
    b.apply_manual("relay", true, at(0)).unwrap();
    let snap = |m: i64| Snapshot::new(at(m)).with_occupancy("r", 0);
    let before = drive(&mut e, &mut b, 0..20, snap);
    b.clear("relay").unwrap();
    let after = drive(&mut e, &mut b, 20..40, snap);
    check(before.is_empty(), || format!("commands during override: {before:?}"))?;
    check(after.len() == 1 && after[0].0 == 20, || format!("after clear: {after:?}"))?;

    // triangle wave 22..30 with a +-0.3 zig-zag riding on it, period 80 minutes
    let wave = |m: i64| {
        let p = (m % 80) as f64;
        let tri = if p < 40.0 { 22.0 + p * 0.2 } else { 30.0 - (p - 40.0) * 0.2 };
        tri + if m % 2 == 0 { 0.3 } else { -0.3 }
    };
    let fan = |h: f64| {
        rule(
            "fan",
            Switch::On,
            Some(Switch::Off),
            0,
            vec![Condition::Metric { metric: Metric::Temperature, op: Comparator::Gt, value: 26.0, hysteresis: h }],
        )
    };
    let snap = |m: i64| Snapshot::new(at(m)).with_metric("r", Metric::Temperature, wave(m));
    let cycles = 6;
    let with = drive(&mut Engine::new(vec![fan(0.5)]), &mut board(false), 0..cycles * 80, snap);
    let without = drive(&mut Engine::new(vec![fan(0.0)]), &mut board(false), 0..cycles * 80, snap);
    check(with.len() == 2 * cycles as usize, || format!("{} commands over {cycles} cycles", with.len()))?;
    check(with.windows(2).all(|w| w[0].1.on != w[1].1.on), || "repeated state".into())?;
    check(without.len() > with.len(), || "zig-zag too small to provoke chatter".into())?;
    Ok(format!(
        "one off at t+10 min, override held {ttl_min} min and released on clear, {} switches in {cycles} cycles ({} without hysteresis)",
        with.len(),
        without.len()
    ))
}

fn crash_consistency(store_root: &Path) -> Outcome {
    let (store, _) = Store::open(store_root).map_err(|e| e.to_string())?;
    let total = store.all().map_err(|e| e.to_string())?.len();
    let daily: Vec<_> = common::tree(store_root)
        .into_iter()
        .filter(|(p, b)| p.extension().is_some_and(|e| e == "csv") && p.components().count() == 2 && b.iter().filter(|&&c| c == b'\n').count() > 1)
        .collect();
    let mut trials = 0;
    for (rel, bytes) in &daily {
        let last_start = bytes[..bytes.len() - 1].iter().rposition(|&b| b == b'\n').unwrap() + 1;
        let mid = last_start + (bytes.len() - last_start) / 2;
        for cut in [bytes.len() - 1, mid, last_start + 1] {
            let copy = tempfile::tempdir().unwrap();
            common::copy_tree(store_root, copy.path());
            let f = fs::OpenOptions::new().write(true).open(copy.path().join(rel)).unwrap();
            f.set_len(cut as u64).unwrap();
            drop(f);
            let (s, rep) = Store::open(copy.path()).map_err(|e| format!("{}: {e}", rel.display()))?;
            let n = s.all().map_err(|e| format!("{}: {e}", rel.display()))?.len();
            check(n + 1 == total, || format!("{} cut at {cut}: {n} of {total} rows", rel.display()))?;
            check(rep.torn_rows_dropped == 1, || format!("{}: {rep:?}", rel.display()))?;
            trials += 1;
        }
    }
    check(!daily.is_empty(), || "no daily files".into())?;
    Ok(format!("{} daily files x 3 cut points, {trials}/{trials} lost exactly one of {total} rows", daily.len()))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("codec soundness", guarded(codec_soundness)),
        ("crc oracle", guarded(crc_oracle)),
        ("mesh optimality", guarded(mesh_optimality)),
    ];
    let e2e = end_to_end();
    let ok = e2e.outcome.is_ok();
    let root = e2e.dirs[0].path();
    let needs_run = |f: &dyn Fn(&Path) -> Outcome| if ok { guarded(|| f(root)) } else { Err("end-to-end run failed".into()) };
    let humidity = needs_run(&humidity_claim);
    let light = needs_run(&light_claim);
    let crash = needs_run(&crash_consistency);
    results.push(("end-to-end scenario", e2e.outcome.clone()));
    results.push(("humidity claim", humidity));
    results.push(("light claim", light));
    results.push(("predictor", guarded(predictor)));
    results.push(("automation", guarded(automation)));
    results.push(("store crash consistency", crash));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
