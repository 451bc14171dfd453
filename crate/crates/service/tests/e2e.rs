mod support;

use std::sync::Arc;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use rtvc_core::runtime::{ManualClock, Session};
use rtvc_service::protocol::{decode_frame, encode_frame};
use rtvc_service::{serve, AppState, QueueConfig, ServerConfig, ServerEvent, SpeakerInfo, FRAME_SAMPLES};
use support::{compact_pipeline, test_catalog};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Ws = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn start(clock: ManualClock) -> String {
    let config = ServerConfig {
        queue: QueueConfig { max_connections: 2, ..QueueConfig::default() },
        admin: false,
        tick_ms: 5,
    };
    let state = AppState::new(compact_pipeline(0.1), test_catalog(&["p225", "p226"]), config, Arc::new(clock)).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    tokio::spawn(serve(listener, Arc::new(state)));
    addr
}

async fn next_msg(ws: &mut Ws) -> Option<Message> {
    loop {
        let m = tokio::time::timeout(Duration::from_secs(20), ws.next()).await.expect("timed out")?;
        match m.ok()? {
            Message::Ping(_) | Message::Pong(_) => continue,
            m => return Some(m),
        }
    }
}

async fn event(ws: &mut Ws) -> ServerEvent {
    match next_msg(ws).await {
        Some(Message::Text(t)) => serde_json::from_str(t.as_str()).unwrap(),
        other => panic!("expected an event, got {other:?}"),
    }
}

async fn send_event(ws: &mut Ws, json: &str) {
    ws.send(Message::Text(json.into())).await.unwrap();
}

async fn http_get(addr: &str, path: &str) -> String {
    let mut s = TcpStream::connect(addr).await.unwrap();
    s.write_all(format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").as_bytes()).await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    buf.split("\r\n\r\n").nth(1).unwrap_or_default().to_string()
}

#[tokio::test]
async fn queue_stream_swap_and_expiry() {
    let clock = ManualClock::default();
    let addr = start(clock.clone()).await;
    let url = format!("ws://{addr}/ws");

    let speakers: Vec<SpeakerInfo> = serde_json::from_str(&http_get(&addr, "/speakers").await).unwrap();
    assert_eq!(speakers.iter().map(|s| s.id.as_str()).collect::<Vec<_>>(), ["p225", "p226"]);

    let (mut a, _) = connect_async(&url).await.unwrap();
    assert_eq!(event(&mut a).await, ServerEvent::Active);
    let (mut b, _) = connect_async(&url).await.unwrap();
    assert_eq!(event(&mut b).await, ServerEvent::Queue { position: 1 });
    let (mut c, _) = connect_async(&url).await.unwrap();
    assert!(matches!(event(&mut c).await, ServerEvent::Refused { retry_after_s: 300 }));

    send_event(&mut a, r#"{"type":"hello"}"#).await;
    send_event(&mut a, r#"{"type":"select_speaker","id":"p225"}"#).await;
    assert_eq!(event(&mut a).await, ServerEvent::Ack { id: "p225".into() });

    // 100 frames in, 100 frames out, matching a local session frame for frame
    let catalog = test_catalog(&["p225"]);
    let (emb, m_tgt) = catalog.get("p225").unwrap();
    let mut reference = Session::with_target(compact_pipeline(0.1), emb.clone(), m_tgt).unwrap();
    let frames: Vec<Vec<u8>> = (0..100)
        .map(|i| {
            let x: Vec<f32> =
                (0..FRAME_SAMPLES).map(|n| (((i * FRAME_SAMPLES + n) as f32) * 0.07).sin() * 0.3).collect();
            encode_frame(&x)
        })
        .collect();
    for f in &frames {
        a.send(Message::Binary(f.clone().into())).await.unwrap();
    }
    for (i, f) in frames.iter().enumerate() {
        let want = encode_frame(&reference.process_chunk(&decode_frame(f).unwrap()).unwrap());
        match next_msg(&mut a).await {
            Some(Message::Binary(got)) => assert_eq!(got.as_ref(), want.as_slice(), "frame {i}"),
            other => panic!("frame {i}: {other:?}"),
        }
    }
    send_event(&mut a, r#"{"type":"stats"}"#).await;
    assert_eq!(event(&mut a).await, ServerEvent::Stats {
        frames_in: 100,
        frames_out: 100,
        active_speaker: Some("p225".into())
    });

    // unknown speaker: error, stream continues
    send_event(&mut a, r#"{"type":"select_speaker","id":"nope"}"#).await;
    assert!(matches!(event(&mut a).await, ServerEvent::Error { .. }));
    a.send(Message::Binary(frames[0].clone().into())).await.unwrap();
    assert!(matches!(next_msg(&mut a).await, Some(Message::Binary(_))));

    // queued clients may not stream
    b.send(Message::Binary(frames[0].clone().into())).await.unwrap();
    assert!(matches!(event(&mut b).await, ServerEvent::Error { .. }));

    // a leaves, b is promoted
    send_event(&mut a, r#"{"type":"bye"}"#).await;
    assert!(matches!(next_msg(&mut a).await, Some(Message::Close(_)) | None));
    assert_eq!(event(&mut b).await, ServerEvent::Active);

    // b's session expires after the time limit
    clock.advance_ns(299_000_000_000);
    tokio::time::sleep(Duration::from_millis(50)).await;
    send_event(&mut b, r#"{"type":"stats"}"#).await;
    assert!(matches!(event(&mut b).await, ServerEvent::Stats { .. }));
    clock.advance_ns(2_000_000_000);
    assert_eq!(event(&mut b).await, ServerEvent::Expired);
    assert!(matches!(next_msg(&mut b).await, Some(Message::Close(_)) | None));

    // idle again: the next client goes straight to active
    tokio::time::sleep(Duration::from_millis(50)).await;
    let (mut d, _) = connect_async(&url).await.unwrap();
    assert_eq!(event(&mut d).await, ServerEvent::Active);
}

#[tokio::test]
async fn partial_frame_closes_only_that_stream() {
    let addr = start(ManualClock::default()).await;
    let url = format!("ws://{addr}/ws");
    let (mut a, _) = connect_async(&url).await.unwrap();
    assert_eq!(event(&mut a).await, ServerEvent::Active);
    a.send(Message::Binary(vec![0u8; 100].into())).await.unwrap();
    assert!(matches!(event(&mut a).await, ServerEvent::Error { .. }));
    assert!(matches!(next_msg(&mut a).await, Some(Message::Close(_)) | None));
    tokio::time::sleep(Duration::from_millis(50)).await;
    let (mut b, _) = connect_async(&url).await.unwrap();
    assert_eq!(event(&mut b).await, ServerEvent::Active);
}

#[tokio::test]
async fn enrollment_requires_admin() {
    let addr = start(ManualClock::default()).await;
    let mut s = TcpStream::connect(&addr).await.unwrap();
    s.write_all(b"POST /enroll?id=x HTTP/1.1\r\nHost: x\r\nContent-Length: 0\r\nConnection: close\r\n\r\n").await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    assert!(buf.starts_with("HTTP/1.1 403"), "{buf}");
}

#[tokio::test]
async fn admin_enrollment_adds_a_persisted_speaker() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("catalog.json");
    let seed = test_catalog(&["p225"]);
    seed.get("p225").unwrap().0.save(dir.path().join("p225.spke")).unwrap();
    let entry = rtvc_service::CatalogEntry {
        id: "p225".into(),
        display_name: "P225".into(),
        embedding: "p225.spke".into(),
        m_tgt: 100.0,
    };
    std::fs::write(&path, serde_json::to_vec(&[entry]).unwrap()).unwrap();
    let catalog = rtvc_service::Catalog::load(&path).unwrap();

    let config = ServerConfig { admin: true, ..ServerConfig::default() };
    let state = AppState::new(compact_pipeline(0.1), catalog, config, Arc::new(ManualClock::default())).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    tokio::spawn(serve(listener, Arc::new(state)));

    let voice: Vec<f32> = (0..24_000)
        .map(|n| {
            let t = n as f32 / 16_000.0;
            0.3 * (std::f32::consts::TAU * 140.0 * t).sin() + 0.1 * (std::f32::consts::TAU * 280.0 * t).sin()
        })
        .collect();
    let wav = rtvc_core::wav::wav_bytes(&voice).unwrap();
    let mut s = TcpStream::connect(&addr).await.unwrap();
    let head = format!(
        "POST /enroll?id=new1&name=Newcomer HTTP/1.1\r\nHost: x\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        wav.len()
    );
    s.write_all(head.as_bytes()).await.unwrap();
    s.write_all(&wav).await.unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).await.unwrap();
    assert!(buf.starts_with("HTTP/1.1 200"), "{buf}");
    assert!(buf.ends_with(r#"{"id":"new1"}"#), "{buf}");

    let speakers: Vec<SpeakerInfo> = serde_json::from_str(&http_get(&addr, "/speakers").await).unwrap();
    assert_eq!(speakers.len(), 2);
    assert_eq!(speakers[1].display_name, "Newcomer");
    let reloaded = rtvc_service::Catalog::load(&path).unwrap();
    assert!(reloaded.get("new1").is_some());
}
