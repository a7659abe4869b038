use sb_core::scenario::{Scenario, ScenarioError, DEFAULT_SCENARIO};

/// Applies one textual edit to the bundled scenario and expects exactly one
/// diagnostic, reported on the first line the edit changed.
fn expect_diag(find: &str, replace: &str, want: &str) {
    assert!(DEFAULT_SCENARIO.contains(find), "fixture text `{find}` missing");
    let src = DEFAULT_SCENARIO.replacen(find, replace, 1);
    let at = src.bytes().zip(DEFAULT_SCENARIO.bytes()).position(|(a, b)| a != b).unwrap();
    let line = src[..at].matches('\n').count() + 1;
    match Scenario::parse(&src) {
        Err(ScenarioError::Invalid(d)) => {
            assert_eq!(d.len(), 1, "{find} -> {replace}: {d:?}");
            assert!(d[0].message.contains(want), "{:?} lacks `{want}`", d[0].message);
            assert_eq!(d[0].line, line, "{}", d[0]);
            assert!(d[0].column >= 1);
        }
        other => panic!("{find} -> {replace}: expected diagnostics, got {other:?}"),
    }
}

#[test]
fn bundled_scenario_is_valid() {
    let sc = Scenario::bundled();
    assert_eq!(sc.room_ids().collect::<Vec<_>>(), ["dorm-1", "dorm-2", "lab"]);
    assert!(sc.device("dorm2-mote").is_some());
}

#[test]
fn dangling_references_are_reported_with_position() {
    let cases = [
        (r#"room = "dorm-2"
metrics = ["temperature", "humidity", "light""#, r#"room = "dorm-9"
metrics = ["temperature", "humidity", "light""#, "unknown room `dorm-9`"),
        (r#"id = "lab-cam"
room = "lab""#, r#"id = "lab-cam"
room = "attic""#, "camera `lab-cam` references unknown room `attic`"),
        (r#"room = "lab"
relay = "lab-socket""#, r#"room = "cellar"
relay = "lab-socket""#, "rule `lab-socket-night` references unknown room `cellar`"),
        (r#"relay = "lab-socket""#, r#"relay = "lab-plug""#, "unknown relay `lab-plug`"),
        (r#"relay = "lab-socket""#, r#"relay = "lab-door""#, "lab-door"),
        (r#"scanner = "dorm1-tag""#, r#"scanner = "hall-tag""#, "unknown scanner `hall-tag`"),
        (r#"scanner = "dorm1-tag""#, r#"scanner = "lab-door""#, "is not a ble_sim device"),
        (r#"protocol = "zigbee_sim"
address = 3"#, r#"protocol = "zigbee_sim"
address = 9"#, "unknown mesh node 9"),
        (r#"id = "lab-cam""#, r#"id = "lab-tag""#, "duplicate device id `lab-tag`"),
        (r#"address = 5"#, r#"address = 4"#, "duplicate z-wave node id 4"),
        (r#"id = "lab-socket-night""#, r#"id = "dorm1-lights-on""#, "duplicate rule id"),
        (r#"mac = "C8:0F:10:00:00:2A"
scanner"#, r#"mac = "C8:0F:10:00:00:ZZ"
scanner"#, "C8:0F:10:00:00:ZZ"),
        (r#"alpha = 0.3"#, r#"alpha = 1.5"#, "alpha must lie strictly between 0 and 1"),
    ];
    for (find, replace, want) in cases {
        expect_diag(find, replace, want);
    }
}

#[test]
fn duplicate_room_is_rejected() {
    let src = DEFAULT_SCENARIO.replacen("[[rooms]]", "[[rooms]]\nid = \"lab\"\n\n[[rooms]]", 1);
    let Err(ScenarioError::Invalid(d)) = Scenario::parse(&src) else {
        panic!("accepted a duplicate room");
    };
    assert_eq!(d.len(), 1, "{d:?}");
    assert!(d[0].message.contains("duplicate room id `lab`"));
}

#[test]
fn mesh_without_sink_is_rejected() {
    let src = DEFAULT_SCENARIO
        .replace("{ a = 1, b = 2, latency_ms = 15 },\n", "")
        .replace("{ a = 1, b = 4, latency_ms = 20 },\n", "");
    let Err(ScenarioError::Invalid(d)) = Scenario::parse(&src) else {
        panic!("accepted a mesh with no sink");
    };
    assert!(d.iter().any(|d| d.message.contains("no sink node 1")), "{d:?}");
}

#[test]
fn syntax_errors_carry_a_position() {
    let src = DEFAULT_SCENARIO.replacen("compression = 1440", "compression = ", 1);
    let Err(ScenarioError::Invalid(d)) = Scenario::parse(&src) else {
        panic!("accepted broken TOML");
    };
    assert_eq!(d[0].line, 8);
}

#[test]
fn unknown_keys_are_rejected() {
    let src = DEFAULT_SCENARIO.replacen("duration_hours = 24", "duration_hours = 24\nspeed = 2", 1);
    assert!(matches!(Scenario::parse(&src), Err(ScenarioError::Invalid(_))));
}

#[test]
fn several_errors_come_back_together_in_file_order() {
    let src = DEFAULT_SCENARIO
        .replacen(r#"room = "dorm-1""#, r#"room = "nowhere""#, 1)
        .replacen(r#"scanner = "dorm1-tag""#, r#"scanner = "ghost""#, 1);
    let Err(ScenarioError::Invalid(d)) = Scenario::parse(&src) else {
        panic!("accepted two dangling references");
    };
    assert_eq!(d.len(), 2, "{d:?}");
    assert!(d[0].line < d[1].line);
}
