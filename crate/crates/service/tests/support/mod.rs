//! Reference checks shared by the service tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};
use std::sync::{Arc, RwLock};

use proptest::prelude::*;
use rtvc_core::runtime::{Pipeline, PipelineConfig};
use rtvc_core::speaker::SpeakerEmbedding;
use rtvc_service::{
    Catalog, CatalogEntry, ClientMessage, Connection, Notice, Outbound, QueueConfig, TicketId, TicketQueue,
    TicketState, FRAME_BYTES,
};

#[derive(Debug, Clone)]
pub enum QueueOp {
    Connect,
    /// Index into the live tickets, modulo their count.
    Disconnect(usize),
    Advance(u64),
    Tick,
}

pub fn queue_op() -> impl Strategy<Value = QueueOp> {
    prop_oneof![
        3 => Just(QueueOp::Connect),
        2 => any::<usize>().prop_map(QueueOp::Disconnect),
        3 => prop_oneof![0u64..10_000, 290_000u64..310_000, 0u64..700_000].prop_map(QueueOp::Advance),
        3 => Just(QueueOp::Tick),
    ]
}

pub fn queue_ops() -> impl Strategy<Value = Vec<QueueOp>> {
    prop::collection::vec(queue_op(), 1..120)
}

/// Replay `ops` against the queue and a reference model, checking mutual
/// exclusion, FIFO promotion and the expiry bound after every step.
pub fn check_queue_sequence(ops: &[QueueOp], cfg: QueueConfig) -> Result<(), String> {
    let mut q = TicketQueue::new(cfg);
    let mut now = 0u64;
    // reference: waiting tickets in arrival order, active ticket and its start
    let mut waiting: VecDeque<TicketId> = VecDeque::new();
    let mut active: Option<(TicketId, u64)> = None;
    let mut gone: BTreeSet<TicketId> = BTreeSet::new();

    let promote = |waiting: &mut VecDeque<TicketId>, active: &mut Option<(TicketId, u64)>, now: u64, notices: &[Notice]| {
        if active.is_none() {
            if let Some(next) = waiting.pop_front() {
                if !notices.contains(&Notice::Active(next)) {
                    return Err(format!("ticket {next} promoted without notice"));
                }
                *active = Some((next, now));
            }
        }
        Ok(())
    };

    for (step, op) in ops.iter().enumerate() {
        match *op {
            QueueOp::Connect => {
                let live = waiting.len() + active.is_some() as usize;
                match q.connect(now) {
                    Ok((id, notice)) => {
                        if live >= cfg.max_connections {
                            return Err(format!("step {step}: admitted past the cap"));
                        }
                        if gone.contains(&id) || waiting.contains(&id) || active.map(|a| a.0) == Some(id) {
                            return Err(format!("step {step}: ticket id {id} reused"));
                        }
                        if active.is_none() {
                            if notice != Notice::Active(id) {
                                return Err(format!("step {step}: idle server queued {id}"));
                            }
                            active = Some((id, now));
                        } else {
                            waiting.push_back(id);
                            if notice != (Notice::Queued { id, position: waiting.len() }) {
                                return Err(format!("step {step}: wrong queue notice {notice:?}"));
                            }
                        }
                    }
                    Err(r) => {
                        if live < cfg.max_connections {
                            return Err(format!("step {step}: refused below the cap"));
                        }
                        if r.retry_after_s == 0 {
                            return Err(format!("step {step}: zero retry hint"));
                        }
                    }
                }
            }
            QueueOp::Disconnect(k) => {
                let live: Vec<TicketId> = active.iter().map(|a| a.0).chain(waiting.iter().copied()).collect();
                if live.is_empty() {
                    continue;
                }
                let id = live[k % live.len()];
                let notices = q.disconnect(id, now);
                gone.insert(id);
                if active.map(|a| a.0) == Some(id) {
                    active = None;
                    promote(&mut waiting, &mut active, now, &notices).map_err(|e| format!("step {step}: {e}"))?;
                } else {
                    waiting.retain(|&w| w != id);
                }
            }
            QueueOp::Advance(dt) => now += dt,
            QueueOp::Tick => {
                let notices = q.tick(now);
                for n in &notices {
                    if let Notice::Expired(id) = n {
                        match active {
                            Some((a, started)) if a == *id => {
                                if now - started < cfg.ttl_ms {
                                    return Err(format!("step {step}: {id} expired at age {}", now - started));
                                }
                                gone.insert(a);
                                active = None;
                            }
                            _ => return Err(format!("step {step}: expired non-active ticket {id}")),
                        }
                    }
                }
                promote(&mut waiting, &mut active, now, &notices).map_err(|e| format!("step {step}: {e}"))?;
                if let Some((a, started)) = active {
                    if now - started >= cfg.ttl_ms {
                        return Err(format!("step {step}: {a} still active at age {}", now - started));
                    }
                }
            }
        }

        // the queue agrees with the reference
        if q.active() != active.map(|a| a.0) {
            return Err(format!("step {step}: active {:?}, expected {:?}", q.active(), active));
        }
        let got: Vec<TicketId> = q.waiting().collect();
        if got != waiting.iter().copied().collect::<Vec<_>>() {
            return Err(format!("step {step}: waiting {got:?}, expected {waiting:?}"));
        }
        if !got.windows(2).all(|w| w[0] < w[1]) {
            return Err(format!("step {step}: waiting order is not arrival order"));
        }
        let mut n_active = 0;
        for id in active.iter().map(|a| a.0).chain(waiting.iter().copied()).chain(gone.iter().copied()) {
            match q.state(id) {
                Some(TicketState::Active { .. }) => n_active += 1,
                Some(TicketState::Queued { position }) if waiting.get(position - 1) != Some(&id) => {
                    return Err(format!("step {step}: {id} reports position {position}"));
                }
                None if !gone.contains(&id) => return Err(format!("step {step}: live ticket {id} unknown")),
                _ => {}
            }
        }
        if n_active > 1 {
            return Err(format!("step {step}: {n_active} active tickets"));
        }
        if active.is_none() && !waiting.is_empty() {
            return Err(format!("step {step}: idle with a non-empty queue"));
        }
    }
    Ok(())
}

pub fn small_cap() -> QueueConfig {
    QueueConfig { max_connections: 5, ..QueueConfig::default() }
}

/// Compact-registry pipeline; fast enough for fuzzing.
pub fn compact_pipeline(bias_scale: f32) -> Pipeline {
    let cfg = PipelineConfig { registry: "compact".into(), init_bias_scale: bias_scale, ..PipelineConfig::default() };
    Pipeline::new(cfg).unwrap()
}

pub fn test_catalog(ids: &[&str]) -> Catalog {
    let entries = ids
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let vec: Vec<f32> = (0..128).map(|j| ((i * 131 + j) as f32 * 0.37).sin() * 0.5).collect();
            let entry = CatalogEntry {
                id: id.to_string(),
                display_name: id.to_uppercase(),
                embedding: format!("{id}.spke").into(),
                m_tgt: 100.0 + 20.0 * i as f64,
            };
            (entry, SpeakerEmbedding::new(vec, *id).unwrap())
        })
        .collect();
    Catalog::from_entries(entries).unwrap()
}

#[derive(Debug, Clone)]
pub enum Inbound {
    Binary(Vec<u8>),
    Text(String),
    Control(ClientMessage),
    Notice(Notice),
}

pub fn inbound(ticket: TicketId) -> impl Strategy<Value = Inbound> {
    let frame = prop::collection::vec(any::<u8>(), FRAME_BYTES..=FRAME_BYTES).prop_map(Inbound::Binary);
    let junk = prop::collection::vec(any::<u8>(), 0..1200).prop_map(Inbound::Binary);
    let ids = prop_oneof![Just("p225".to_string()), Just("p226".to_string()), "[a-z0-9]{0,6}"];
    prop_oneof![
        6 => frame,
        1 => junk,
        1 => ".{0,40}".prop_map(Inbound::Text),
        1 => "\\{\"type\":\"[a-z_]{0,14}\"(,\"id\":\"[a-z0-9]{0,5}\")?\\}".prop_map(Inbound::Text),
        2 => ids.prop_map(|id| Inbound::Control(ClientMessage::SelectSpeaker { id })),
        1 => prop_oneof![Just(ClientMessage::Hello), Just(ClientMessage::Stats), Just(ClientMessage::Bye)]
            .prop_map(Inbound::Control),
        1 => prop_oneof![
            Just(Notice::Active(ticket)),
            (1usize..5).prop_map(move |p| Notice::Queued { id: ticket, position: p }),
            Just(Notice::Expired(ticket)),
            Just(Notice::Active(ticket + 1)),
        ]
        .prop_map(Inbound::Notice),
    ]
}

/// Drive a connection with arbitrary traffic. Checks that every well-sized
/// frame on an active, speaker-bound connection yields exactly one frame
/// and that a closed connection stays silent.
pub fn fuzz_connection(pipeline: &Pipeline, catalog: &Arc<RwLock<Catalog>>, inputs: &[Inbound]) -> Result<(), String> {
    let mut conn = Connection::new(7, pipeline.clone(), catalog.clone());
    for (i, input) in inputs.iter().enumerate() {
        let was_closed = conn.is_closed();
        let expect_audio = matches!(input, Inbound::Binary(b) if b.len() == FRAME_BYTES)
            && conn.is_active()
            && conn.speaker().is_some()
            && !was_closed;
        let out = match input {
            Inbound::Binary(b) => conn.on_binary(b),
            Inbound::Text(t) => conn.on_text(t),
            Inbound::Control(m) => conn.on_text(&serde_json::to_string(m).unwrap()),
            Inbound::Notice(n) => conn.on_notice(*n),
        };
        if was_closed && !out.is_empty() {
            return Err(format!("input {i}: closed connection answered {out:?}"));
        }
        let audio: Vec<&Vec<u8>> =
            out.iter().filter_map(|o| if let Outbound::Audio(a) = o { Some(a) } else { None }).collect();
        if expect_audio && (audio.len() != 1 || audio[0].len() != FRAME_BYTES) {
            return Err(format!("input {i}: expected one output frame, got {out:?}"));
        }
        if !expect_audio && !audio.is_empty() {
            return Err(format!("input {i}: unexpected audio"));
        }
        if let Some(p) = out.iter().position(|o| *o == Outbound::Close) {
            if p + 1 != out.len() || !conn.is_closed() {
                return Err(format!("input {i}: close is not final"));
            }
        }
    }
    Ok(())
}
