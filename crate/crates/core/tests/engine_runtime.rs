use std::path::{Path, PathBuf};
use std::time::Duration;

use blendsonic::engine::*;
use blendsonic::osc::*;
use blendsonic::robot::standoff_error;
use nalgebra::Vector3;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn demo() -> SessionConfig {
    load_config(&configs().join("demo.toml")).unwrap()
}

fn approach() -> TrajectoryScript {
    load_script(&configs().join("approach.toml")).unwrap()
}

fn read_wav(bytes: &[u8]) -> (hound::WavSpec, Vec<f32>) {
    let r = hound::WavReader::new(std::io::Cursor::new(bytes)).unwrap();
    let spec = r.spec();
    (spec, r.into_samples::<f32>().map(Result::unwrap).collect())
}

#[test]
fn shipped_config_is_the_default() {
    assert_eq!(demo(), SessionConfig::default());
}

#[test]
fn save_load_is_idempotent() {
    let golden = std::fs::read_to_string(configs().join("demo.normalized.toml")).unwrap();
    assert_eq!(config_to_string(&demo()), golden);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("saved.toml");
    save_config(&demo(), &path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), golden);
    assert_eq!(load_config(&path).unwrap(), demo());
}

#[test]
fn config_validation_errors() {
    match parse_config("block_size = 0\n") {
        Err(EngineError::ConfigInvalid(errors)) => assert!(errors.iter().any(|e| e.path == "block_size")),
        other => panic!("{other:?}"),
    }
    match parse_config("control_rate = 500\n") {
        Err(EngineError::ConfigInvalid(errors)) => assert!(errors.iter().any(|e| e.path == "control_rate")),
        other => panic!("{other:?}"),
    }
    let bad_route = "[[mapping.routes]]\nsource = \"proximity\"\nin_range = [0.0, 2.0]\nout_range = [0.0, 1.0]\nsink = \"nowhere.x\"\n";
    match parse_config(bad_route) {
        Err(EngineError::ConfigInvalid(errors)) => {
            assert!(errors.iter().any(|e| e.path == "mapping.routes[0].sink"), "{errors:?}")
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        parse_config("sample_rate = 48000\nbogus = 1\n"),
        Err(EngineError::ConfigSyntax { line: 2, .. })
    ));
    assert!(matches!(
        parse_config("seed = 1\n[synth]\nbase_hz = \"x\"\n"),
        Err(EngineError::ConfigSyntax { line: 3, .. })
    ));
}

#[test]
fn silent_render_has_exact_length() {
    let mut config = SessionConfig::default();
    for v in &mut config.voices {
        v.idle_floor = 0.0;
    }
    let duration = 1.234;
    let bytes = render_offline(&config, &TrajectoryScript::default(), duration).unwrap();
    let (spec, samples) = read_wav(&bytes);
    assert_eq!(spec.channels, 5);
    assert_eq!(spec.sample_rate, 48_000);
    assert_eq!(spec.sample_format, hound::SampleFormat::Float);
    assert_eq!(spec.bits_per_sample, 32);
    assert_eq!(samples.len(), 59_232 * 5);
    assert!(samples.iter().all(|&s| s == 0.0));
}

#[test]
fn render_is_deterministic() {
    let a = render_offline(&demo(), &approach(), 2.0).unwrap();
    let b = render_offline(&demo(), &approach(), 2.0).unwrap();
    assert_eq!(a, b);
    let mut other = demo();
    other.seed = 2;
    assert_ne!(render_offline(&other, &approach(), 2.0).unwrap(), a);
}

#[test]
fn render_errors() {
    let mut bad = demo();
    bad.block_size = 0;
    assert!(matches!(
        render_offline(&bad, &TrajectoryScript::default(), 1.0),
        Err(EngineError::ConfigInvalid(_))
    ));
    let mut script = approach();
    script.events.push(ScriptEvent {
        t: -1.0,
        kind: EventKind::CollaboratorPos([1.0, 0.0, 0.0]),
    });
    script.events.push(ScriptEvent {
        t: 0.5,
        kind: EventKind::CollaboratorPos([1.0, 0.0, 0.0]),
    });
    assert!(render_offline(&demo(), &script, 1.0).is_err());
    let unordered = parse_script("[[events]]\nt = 2.0\ncollaborator_pos = [1.0, 0.0, 0.0]\n[[events]]\nt = 1.0\ncollaborator_pos = [1.0, 0.0, 0.0]\n");
    assert!(matches!(unordered, Err(EngineError::ScriptUnordered { index: 1, .. })));
}

#[test]
fn fake_clock_matches_offline_render() {
    let offline = render_offline(&demo(), &approach(), 3.0).unwrap();
    let options = RunOptions {
        clock: ClockKind::Fake,
        device: DeviceKind::Memory,
        duration: Some(3.0),
        ..RunOptions::default()
    };
    let out = Engine::start(&demo(), &approach(), options).unwrap().wait().unwrap();
    assert_eq!(out.wav.unwrap(), offline);
    assert_eq!(out.blocks, 563);
}

#[test]
fn wav_file_device_writes_capture() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.wav");
    let options = RunOptions {
        clock: ClockKind::Fake,
        device: DeviceKind::WavFile(path.clone()),
        duration: Some(0.5),
        ..RunOptions::default()
    };
    let out = Engine::start(&demo(), &approach(), options).unwrap().wait().unwrap();
    assert!(out.wav.is_none());
    let bytes = std::fs::read(path).unwrap();
    assert_eq!(bytes, render_offline(&demo(), &approach(), 0.5).unwrap());
}

#[test]
fn sample_grid_ordering() {
    let g = SampleGrid::of(&SessionConfig::default());
    // tick k starts at sample 480k, block b at sample 256b
    for b in 0..200u64 {
        let ticks = g.ticks_before_block(b);
        assert!((ticks - 1) * 480 <= b * 256 && ticks * 480 > b * 256);
    }
    for k in 0..100u64 {
        let blocks = g.blocks_before_tick(k);
        assert!(blocks * 256 >= k * 480 && (blocks == 0 || (blocks - 1) * 256 < k * 480));
    }
}

fn context() -> ControlContext {
    ControlContext::new(&demo(), Queues::new()).unwrap()
}

#[test]
fn osc_ingress_examples() {
    let mut c = context();
    c.osc_ingress(&OscMessage::floats("/collab/pos", &[1.0, 0.0, 1.0]).into());
    assert_eq!(c.collaborator().unwrap().position, [1.0, 0.0, 1.0]);

    let before = c.snapshot();
    c.osc_ingress(&OscMessage::floats("/unknown", &[1.0]).into());
    assert_eq!(c.stats.unknown, 1);
    let after = c.snapshot();
    assert_eq!((before.collaborator, before.env), (after.collaborator, after.env));

    c.osc_ingress(&OscMessage::floats("/env/light", &[0.5]).into());
    assert_eq!(c.signals().env["light"], 0.5);
    c.osc_ingress(&OscMessage::floats("/env/humidity", &[0.5]).into());
    assert_eq!(c.stats.unknown, 2);

    c.osc_ingress(&OscMessage::floats("/collab/pos", &[1.0, 2.0]).into());
    c.osc_ingress(&OscMessage::new("/env/light", vec![OscArg::String("x".into())]).into());
    assert_eq!(c.stats.malformed, 2);
    assert_eq!(c.collaborator().unwrap().position, [1.0, 0.0, 1.0]);

    let bundle = OscBundle {
        timetag: TimeTag(12345),
        elements: vec![
            OscMessage::floats("/collab/pos", &[0.5, 0.5, 0.5]).into(),
            OscMessage::new("/collab/pos", vec![OscArg::Int(2), OscArg::Int(0), OscArg::Int(1)]).into(),
        ],
    };
    c.osc_ingress(&bundle.into());
    assert_eq!(c.collaborator().unwrap().position, [2.0, 0.0, 1.0]);
}

#[test]
fn osc_egress_schema() {
    let mut c = context();
    c.tick();
    let first: Vec<OscPacket> = c.osc_egress().to_vec();
    assert_eq!(first.len(), 7);
    let OscPacket::Message(pose) = &first[0] else { panic!() };
    assert_eq!(pose.address, "/tcp/pose");
    assert_eq!(pose.type_tags(), ",ffffff");
    for (i, p) in first[1..].iter().enumerate() {
        let OscPacket::Message(m) = p else { panic!() };
        assert_eq!(m.address, format!("/link/{i}/rpy"));
        assert_eq!(m.type_tags(), ",fff");
    }
    for p in &first {
        assert_eq!(&decode_packet(&encode_packet(p).unwrap()).unwrap(), p);
    }
    c.tick();
    assert_eq!(c.osc_egress(), first.as_slice());
    let tcp = c.poses().tcp;
    assert_eq!(pose.args[0], OscArg::Float(tcp.position[0] as f32));
}

#[test]
fn tick_is_deterministic() {
    let run = || {
        let mut c = context();
        c.set_collaborator([0.4, 0.9, 0.6]).unwrap();
        for _ in 0..50 {
            c.tick();
        }
        c.set_env("light", 0.3).unwrap();
        c.tick();
        (c.snapshot(), c.osc_egress().to_vec())
    };
    assert_eq!(run(), run());
}

#[test]
fn step_change_converges() {
    let mut c = context();
    let tcp = Vector3::from(c.poses().tcp.position);
    let target = tcp + Vector3::new(0.25, 0.3, 0.2);
    c.set_collaborator(target.into()).unwrap();
    let standoff = demo().robot.steer.standoff;
    let mut errors = Vec::new();
    for _ in 0..200 {
        c.tick();
        errors.push(standoff_error(&Vector3::from(c.poses().tcp.position), &target, standoff));
    }
    // speed-limited transient first, then strictly decreasing until within tolerance
    let settled = errors.iter().position(|&e| e < 0.02).expect("converges within 200 ticks");
    assert!(errors[..=settled].windows(2).all(|w| w[1] < w[0]), "{:?}", &errors[..=settled]);
}

#[test]
fn rest_has_no_parameter_deltas() {
    let mut l = Lockstep::new(&demo(), &TrajectoryScript::default()).unwrap();
    for _ in 0..40 {
        l.step_block();
    }
    let settled = l.control.snapshot();
    let targets: Vec<Option<f64>> = ["lp1.cutoff_hz", "voice0.mix", "voice5.mix"]
        .iter()
        .map(|a| l.control.sent_target(a))
        .collect();
    for _ in 0..200 {
        l.step_block();
    }
    let later = l.control.snapshot();
    assert_eq!(settled.joints, later.joints);
    assert_eq!(settled.tcp, later.tcp);
    let again: Vec<Option<f64>> = ["lp1.cutoff_hz", "voice0.mix", "voice5.mix"]
        .iter()
        .map(|a| l.control.sent_target(a))
        .collect();
    assert_eq!(targets, again);
    let cutoff = l.audio.graph().resolve("lp1.cutoff_hz").unwrap();
    assert_eq!(l.audio.graph().param_value(cutoff), l.audio.graph().param_target(cutoff));
}

#[test]
fn collaborator_update_reaches_targets_within_one_tick() {
    let mut l = Lockstep::new(&demo(), &TrajectoryScript::default()).unwrap();
    for _ in 0..10 {
        l.step_block();
    }
    assert_eq!(l.control.sent_target("master.gain_db"), None);
    l.control.osc_ingress(&OscMessage::floats("/collab/pos", &[0.0, 1.0, 0.5]).into());
    let tick = l.control.tick_count();
    l.tick();
    assert_eq!(l.control.tick_count(), tick + 1);
    let expected = demo().mapping.route_for_sink("master.gain_db").unwrap().map(1.25f64.sqrt());
    assert_eq!(l.control.sent_target("master.gain_db"), Some(expected));
    l.step_block();
    let h = l.audio.graph().resolve("master.gain_db").unwrap();
    assert_eq!(l.audio.graph().param_target(h), expected);
}

#[test]
fn engine_reports_progress_and_stops() {
    let options = RunOptions {
        clock: ClockKind::Fake,
        ..RunOptions::default()
    };
    let engine = Engine::start(&demo(), &TrajectoryScript::default(), options).unwrap();
    while engine.ticks() < 20 {
        std::thread::sleep(Duration::from_millis(1));
    }
    engine.stop();
    let out = engine.wait().unwrap();
    assert!(out.ticks >= 20 && out.blocks >= 37);
}

#[test]
fn osc_over_udp() {
    let listen = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    listen.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    let probe = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    let in_port = {
        let s = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
        s.local_addr().unwrap().port()
    };
    let options = RunOptions {
        clock: ClockKind::Wall,
        osc_in: Some(in_port),
        osc_out: Some(listen.local_addr().unwrap().to_string()),
        ..RunOptions::default()
    };
    let engine = Engine::start(&demo(), &TrajectoryScript::default(), options).unwrap();
    let mut buf = [0u8; 1024];
    let n = listen.recv(&mut buf).unwrap();
    let packet = decode_packet(&buf[..n]).unwrap();
    assert!(matches!(packet, OscPacket::Message(ref m) if m.address == "/tcp/pose" && m.args.len() == 6));

    let bytes = encode_packet(&OscMessage::floats("/collab/pos", &[0.0, 1.0, 0.5]).into()).unwrap();
    let client = engine.client();
    let mut seen = None;
    for _ in 0..200 {
        probe.send_to(&bytes, ("127.0.0.1", in_port)).unwrap();
        let reply = client.request(blendsonic::api::ApiCommand::GetState, Duration::from_secs(2)).unwrap();
        let v: serde_json::Value = serde_json::from_str(&reply).unwrap();
        if !v["result"]["collaborator"].is_null() {
            seen = Some(v);
            break;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    engine.stop();
    engine.wait().unwrap();
    let v = seen.expect("collaborator arrived over UDP");
    assert_eq!(v["result"]["collaborator"], serde_json::json!([0.0, 1.0, 0.5]));
}
