use std::sync::Arc;
use std::time::{Duration, Instant};

use aromagen_core::{to_schedule, DispenseSchedule, Palette, RatioVector, ScheduleStep};
use aromagen_device::{
    disjoint, handle_connection, serve, ClientError, Clock, Command, Device, DeviceClient,
    ErrorCode, ManualClock, Reply, VirtualClock,
};
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::TcpStream;

fn schedule(steps: &[(u8, u64)]) -> DispenseSchedule {
    DispenseSchedule {
        steps: steps
            .iter()
            .map(|&(channel, duration_ms)| ScheduleStep {
                channel,
                odorant: format!("ch{channel}"),
                volatility: 5,
                duration_ms,
            })
            .collect(),
        total_ms: steps.iter().map(|s| s.1).sum(),
    }
}

/// Raw line-level conversation for protocol checks.
async fn raw(addr: std::net::SocketAddr, lines: &[&str]) -> Vec<String> {
    let stream = TcpStream::connect(addr).await.unwrap();
    let (r, mut w) = stream.into_split();
    let mut r = BufReader::new(r);
    let mut out = Vec::new();
    for l in lines {
        w.write_all(format!("{l}\n").as_bytes()).await.unwrap();
        let mut reply = String::new();
        r.read_line(&mut reply).await.unwrap();
        out.push(reply.trim_end().to_owned());
    }
    out
}

#[tokio::test]
async fn fresh_device_is_idle() {
    let sim = serve("127.0.0.1:0", VirtualClock::new()).await.unwrap();
    let replies = raw(sim.local_addr(), &["STATUS", "HELLO", "ABORT"]).await;
    assert_eq!(replies, ["OK IDLE", "OK HELLO aromagen-sim 12", "OK IDLE"]);
}

#[tokio::test]
async fn malformed_commands_get_syntax_errors() {
    let sim = serve("127.0.0.1:0", VirtualClock::new()).await.unwrap();
    let long = "X".repeat(400);
    let replies = raw(
        sim.local_addr(),
        &[
            "JUMP",
            "DISPENSE two 100",
            &long,
            "DISPENSE 12 100",
            "STATUS",
        ],
    )
    .await;
    assert!(replies[0].starts_with("ERR SYNTAX "), "{}", replies[0]);
    assert!(replies[1].starts_with("ERR SYNTAX "));
    assert!(replies[2].starts_with("ERR SYNTAX "));
    assert!(replies[3].starts_with("ERR RANGE "));
    assert_eq!(replies[4], "OK IDLE");
}

#[tokio::test]
async fn three_step_cycle_is_contiguous() {
    let sim = serve("127.0.0.1:0", VirtualClock::new()).await.unwrap();
    let mut client = DeviceClient::connect(sim.local_addr()).await.unwrap();
    let report = client
        .play_schedule(&schedule(&[(9, 30_000), (1, 15_000), (8, 15_000)]))
        .await
        .unwrap();
    assert!(report.completed);
    assert_eq!(report.aborted_at_step, None);
    let spans: Vec<_> = report
        .steps
        .iter()
        .map(|s| (s.channel, s.started_at_ms, s.ended_at_ms))
        .collect();
    assert_eq!(
        spans,
        [(9, 0, 30_000), (1, 30_000, 45_000), (8, 45_000, 60_000)]
    );
    assert_eq!(report.dispensed_ms(), 60_000);
    assert_eq!(client.status().await.unwrap(), Reply::Idle);
}

#[tokio::test]
async fn full_cycle_under_virtual_time_is_fast() {
    let palette = Palette::bundled();
    let ratios = RatioVector::from_hundredths(
        &palette,
        [
            ("Onion", 40),
            ("Thyme", 20),
            ("Sage", 15),
            ("Cumin", 15),
            ("Isovaleric Acid", 10),
        ],
    )
    .unwrap();
    let plan = to_schedule(&ratios, &palette).unwrap();
    let sim = serve("127.0.0.1:0", VirtualClock::new()).await.unwrap();
    let started = Instant::now();
    let mut client = DeviceClient::connect(sim.local_addr()).await.unwrap();
    let report = client.play_schedule(&plan).await.unwrap();
    assert!(started.elapsed() < Duration::from_millis(100));
    assert!(report.completed && report.is_contiguous());
    assert_eq!(report.dispensed_ms(), 60_000);
    let order: Vec<u8> = report.steps.iter().map(|s| s.channel).collect();
    let planned: Vec<u8> = plan.steps.iter().map(|s| s.channel).collect();
    assert_eq!(order, planned);
    assert_eq!(sim.device().clock().now_ms(), 60_000);
}

#[tokio::test]
async fn empty_schedule_rejected() {
    let sim = serve("127.0.0.1:0", VirtualClock::new()).await.unwrap();
    let mut client = DeviceClient::connect(sim.local_addr()).await.unwrap();
    let err = client.play_schedule(&schedule(&[])).await.unwrap_err();
    assert!(matches!(err, ClientError::EmptySchedule));
    assert_eq!(err.to_string(), "empty schedule");
}

#[tokio::test]
async fn second_connection_is_busy_during_cycle() {
    let clock = Arc::new(ManualClock::new());
    let sim = serve("127.0.0.1:0", Arc::clone(&clock)).await.unwrap();
    let addr = sim.local_addr();
    let first = tokio::spawn(async move {
        let mut c = DeviceClient::connect(addr).await.unwrap();
        c.play_schedule(&schedule(&[(0, 1_000), (1, 1_000)])).await
    });
    clock.sleeper().await;
    let mut second = DeviceClient::connect(addr).await.unwrap();
    let err = second
        .play_schedule(&schedule(&[(2, 500)]))
        .await
        .unwrap_err();
    assert!(matches!(err, ClientError::Busy(_)), "{err}");
    let raw_reply = second
        .request(Command::Dispense { channel: 3, ms: 10 })
        .await
        .unwrap();
    assert!(matches!(raw_reply, Reply::Error(e) if e.code == ErrorCode::Busy));

    clock.advance(1_000);
    assert_eq!(clock.sleeper().await, 2_000);
    clock.advance(1_000);
    assert!(first.await.unwrap().unwrap().completed);
    // Freed once the first cycle ends.
    assert_eq!(
        second.request(Command::Play { steps: 1 }).await.unwrap(),
        Reply::Playing { steps: 1 }
    );
}

#[tokio::test]
async fn abort_during_step_two() {
    let clock = Arc::new(ManualClock::new());
    let sim = serve("127.0.0.1:0", Arc::clone(&clock)).await.unwrap();
    let addr = sim.local_addr();
    let player = tokio::spawn(async move {
        let mut c = DeviceClient::connect(addr).await.unwrap();
        c.play_schedule(&schedule(&[(9, 1_000), (1, 1_000), (8, 1_000), (4, 1_000)]))
            .await
    });
    let mut observer = DeviceClient::connect(addr).await.unwrap();
    // Let steps 0 and 1 run out, then cut step 2 halfway.
    for deadline in [1_000, 2_000] {
        assert_eq!(clock.sleeper().await, deadline);
        clock.advance(1_000);
    }
    assert_eq!(clock.sleeper().await, 3_000);
    clock.advance(250);
    assert_eq!(
        observer.status().await.unwrap(),
        Reply::Dispensing {
            channel: 8,
            remaining_ms: 750
        }
    );
    assert_eq!(observer.abort().await.unwrap(), Reply::Aborted);

    let report = player.await.unwrap().unwrap();
    assert!(!report.completed);
    assert_eq!(report.aborted_at_step, Some(2));
    assert_eq!(report.steps.len(), 3);
    assert_eq!(
        (report.steps[2].started_at_ms, report.steps[2].ended_at_ms),
        (2_000, 2_250)
    );
    assert_eq!(observer.status().await.unwrap(), Reply::Idle);
    assert!(disjoint(&sim.device().trace()));
}

#[tokio::test]
async fn pipelined_abort_on_same_connection() {
    let clock = Arc::new(ManualClock::new());
    let sim = serve("127.0.0.1:0", Arc::clone(&clock)).await.unwrap();
    let stream = TcpStream::connect(sim.local_addr()).await.unwrap();
    let (r, mut w) = stream.into_split();
    let mut r = BufReader::new(r);
    w.write_all(b"DISPENSE 3 5000\n").await.unwrap();
    clock.sleeper().await;
    clock.advance(100);
    w.write_all(b"ABORT\nSTATUS\n").await.unwrap();
    let mut lines = Vec::new();
    for _ in 0..3 {
        let mut l = String::new();
        r.read_line(&mut l).await.unwrap();
        lines.push(l.trim_end().to_owned());
    }
    assert_eq!(lines, ["ERR ABORTED 3 0 100", "OK ABORTED", "OK IDLE"]);
}

#[tokio::test]
async fn dropped_connection_releases_device() {
    let clock = Arc::new(ManualClock::new());
    let sim = serve("127.0.0.1:0", Arc::clone(&clock)).await.unwrap();
    {
        let mut c = DeviceClient::connect(sim.local_addr()).await.unwrap();
        c.send(Command::Play { steps: 2 }).await.unwrap();
        assert_eq!(c.receive().await.unwrap(), Reply::Playing { steps: 2 });
        c.send(Command::Dispense {
            channel: 0,
            ms: 1_000,
        })
        .await
        .unwrap();
        clock.sleeper().await;
        clock.advance(300);
    }
    let mut other = DeviceClient::connect(sim.local_addr()).await.unwrap();
    loop {
        if other.status().await.unwrap() == Reply::Idle {
            break;
        }
        tokio::time::sleep(Duration::from_millis(1)).await;
    }
    let trace = sim.device().trace();
    assert_eq!(trace.len(), 1);
    assert_eq!((trace[0].start_ms, trace[0].end_ms), (0, 300));
}

#[tokio::test]
async fn device_drop_mid_cycle_reports_step() {
    let clock = Arc::new(ManualClock::new());
    let sim = serve("127.0.0.1:0", Arc::clone(&clock)).await.unwrap();
    let addr = sim.local_addr();
    let player = tokio::spawn(async move {
        let mut c = DeviceClient::connect(addr).await.unwrap();
        c.play_schedule(&schedule(&[(0, 1_000), (1, 1_000)])).await
    });
    clock.sleeper().await;
    clock.advance(1_000);
    assert_eq!(clock.sleeper().await, 2_000);
    sim.shutdown();
    let report = player.await.unwrap().unwrap();
    assert!(!report.completed);
    assert_eq!(report.aborted_at_step, Some(1));
    assert_eq!(report.steps.len(), 1);
}

#[tokio::test]
async fn in_memory_streams_speak_the_protocol() {
    let device = Arc::new(Device::new(VirtualClock::new()));
    let (a, b) = tokio::io::duplex(1024);
    tokio::spawn(handle_connection(Arc::clone(&device), b));
    let mut client = DeviceClient::new(a);
    let report = client
        .play_schedule(&schedule(&[(2, 100), (5, 200)]))
        .await
        .unwrap();
    assert!(report.completed && report.is_contiguous());
    assert_eq!(device.trace().len(), 2);
}
