use std::io::{Read, Write};
use std::net::TcpStream;
use std::thread;
use std::time::{Duration, Instant};

use flexsim_core::acsi::{AcsiClient, AcsiError, AcsiServer, ReportControl, ReportMode, Status, TcpAcsiClient};
use flexsim_core::model::{build_home_model, paths, DataValue, ObjectReference, SharedModel, WriteChannel};
use flexsim_core::PlantConfig;

fn server() -> (SharedModel, AcsiServer) {
    let model = SharedModel::new(build_home_model(&PlantConfig::default()).unwrap());
    let server = AcsiServer::serve(model.clone(), "127.0.0.1:0").unwrap();
    (model, server)
}

fn r(path: &str) -> ObjectReference {
    path.parse().unwrap()
}

fn status(e: AcsiError) -> Option<Status> {
    e.status()
}

#[test]
fn browse_read_write() {
    let (model, server) = server();
    let mut c = TcpAcsiClient::connect(server.local_addr()).unwrap();
    let all = c.browse("").unwrap();
    assert_eq!(all.len(), 17);
    assert_eq!(all, model.lock().references());
    let bat = c.browse("BAT1").unwrap();
    assert!(!bat.is_empty());
    assert!(bat.iter().all(|r| r.ld() == "BAT1"));

    c.write(&r(paths::BAT_SETPOINT), DataValue::Float32(-750.0)).unwrap();
    let (v, _) = c.read(&r(paths::BAT_SETPOINT)).unwrap();
    assert_eq!(v, DataValue::Float32(-750.0));
    assert_eq!(model.read(&r(paths::BAT_SETPOINT)).unwrap().0, DataValue::Float32(-750.0));

    // measurements belong to the plant, not to clients
    let denied = c.write(&r(paths::BAT_SOC_PCT), DataValue::Float32(1.0)).unwrap_err();
    assert_eq!(status(denied), Some(Status::AccessDenied));
    let mismatch = c.write(&r(paths::BAT_SETPOINT), DataValue::Bool(true)).unwrap_err();
    assert_eq!(status(mismatch), Some(Status::TypeMismatch));
    let missing = c.read(&r("BAT1/ZBTC1.Nope.mag")).unwrap_err();
    assert_eq!(status(missing), Some(Status::NotFound));
}

#[test]
fn concurrent_clients_see_consistent_values() {
    let (_model, server) = server();
    let addr = server.local_addr();
    let writers: Vec<_> = [paths::BAT_SETPOINT, paths::INV_SETPOINT]
        .into_iter()
        .map(|path| {
            thread::spawn(move || {
                let mut c = TcpAcsiClient::connect(addr).unwrap();
                for i in 0..200 {
                    c.write(&r(path), DataValue::Float32(i as f32)).unwrap();
                    let (v, _) = c.read(&r(path)).unwrap();
                    // nobody else writes this path
                    assert_eq!(v, DataValue::Float32(i as f32));
                }
            })
        })
        .collect();
    let readers: Vec<_> = (0..6)
        .map(|_| {
            thread::spawn(move || {
                let mut c = TcpAcsiClient::connect(addr).unwrap();
                let mut last = -1.0;
                for _ in 0..200 {
                    let (v, _) = c.read(&r(paths::BAT_SETPOINT)).unwrap();
                    let x = v.as_f64().unwrap();
                    assert!(x >= last || x == 0.0, "value went backwards: {last} -> {x}");
                    last = x;
                }
            })
        })
        .collect();
    for t in writers.into_iter().chain(readers) {
        t.join().unwrap();
    }
    let mut c = TcpAcsiClient::connect(addr).unwrap();
    assert_eq!(c.read(&r(paths::INV_SETPOINT)).unwrap().0, DataValue::Float32(199.0));
}

#[test]
fn malformed_envelope_gets_protocol_error_and_close() {
    let (_model, server) = server();
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    // one byte body with an unknown opcode
    s.write_all(&[0, 0, 0, 1, 0x7E]).unwrap();
    let mut len = [0u8; 4];
    s.read_exact(&mut len).unwrap();
    let mut body = vec![0u8; u32::from_be_bytes(len) as usize];
    s.read_exact(&mut body).unwrap();
    assert_eq!(body, [0xFF, Status::ProtocolError as u8]);
    let mut rest = Vec::new();
    assert_eq!(s.read_to_end(&mut rest).unwrap(), 0, "connection stays open");

    // an oversized length is rejected the same way
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    s.write_all(&u32::MAX.to_be_bytes()).unwrap();
    let mut reply = Vec::new();
    s.read_to_end(&mut reply).unwrap();
    assert_eq!(reply, [0, 0, 0, 2, 0xFF, Status::ProtocolError as u8]);

    // the server keeps serving other clients
    let mut c = TcpAcsiClient::connect(server.local_addr()).unwrap();
    assert!(c.read(&r(paths::BAT_SOC_PCT)).is_ok());
}

#[test]
fn on_change_reports_once_per_change() {
    let (model, server) = server();
    model
        .define_dataset("Battery", vec![r(paths::BAT_W), r(paths::BAT_SOC_PCT)])
        .unwrap();
    let mut c = TcpAcsiClient::connect(server.local_addr()).unwrap();
    let reports = c.take_reports().unwrap();
    c.subscribe_report(ReportControl {
        dataset: "Battery".into(),
        mode: ReportMode::OnChange,
    })
    .unwrap();
    let write = |path: &str, v: f32| {
        model.write(&r(path), DataValue::Float32(v), WriteChannel::Plant).unwrap();
    };
    write(paths::BAT_W, 300.0);
    write(paths::BAT_W, 300.0); // same value, no change
    write(paths::PV_AC_W, 1234.0); // not in the data set
    write(paths::BAT_SOC_PCT, 61.5);

    let mut got = Vec::new();
    let deadline = Instant::now() + Duration::from_millis(600);
    while let Ok(rep) = reports.recv_timeout(deadline.saturating_duration_since(Instant::now())) {
        got.push(rep);
    }
    assert_eq!(got.len(), 2, "{got:?}");
    assert_eq!(got.iter().map(|r| r.seq).collect::<Vec<_>>(), [1, 2]);
    let last = &got[1];
    assert_eq!(last.dataset, "Battery");
    assert_eq!(last.entries.len(), 2);
    assert_eq!(last.entries[0].value, DataValue::Float32(300.0));
    assert_eq!(last.entries[1].value, DataValue::Float32(61.5));
}

#[test]
fn periodic_reports_follow_the_period() {
    let (model, server) = server();
    model.define_dataset("Grid", vec![r(paths::GRID_W)]).unwrap();
    let mut c = TcpAcsiClient::connect(server.local_addr()).unwrap();
    let reports = c.take_reports().unwrap();
    let too_fast = c
        .subscribe_report(ReportControl {
            dataset: "Grid".into(),
            mode: ReportMode::Periodic { period_ms: 1 },
        })
        .unwrap_err();
    assert_eq!(status(too_fast), Some(Status::InvalidArgument));
    let unknown = c
        .subscribe_report(ReportControl {
            dataset: "Nope".into(),
            mode: ReportMode::OnChange,
        })
        .unwrap_err();
    assert_eq!(status(unknown), Some(Status::NotFound));

    let start = Instant::now();
    c.subscribe_report(ReportControl {
        dataset: "Grid".into(),
        mode: ReportMode::Periodic { period_ms: 100 },
    })
    .unwrap();
    let window = Duration::from_millis(1000);
    let mut n = 0;
    while let Ok(_rep) = reports.recv_timeout(window.saturating_sub(start.elapsed())) {
        if start.elapsed() > window {
            break;
        }
        n += 1;
    }
    assert!((9..=11).contains(&n), "{n} reports in 1 s");
}
