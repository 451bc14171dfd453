//! Per-connection protocol logic, independent of the transport.

use std::sync::{Arc, RwLock};

use rtvc_core::runtime::{Pipeline, Session};

use crate::catalog::Catalog;
use crate::protocol::{decode_frame, encode_frame, ClientMessage, ErrorCode, ServerEvent};
use crate::queue::{Notice, TicketId};

#[derive(Debug, Clone, PartialEq)]
pub enum Outbound {
    Event(ServerEvent),
    Audio(Vec<u8>),
    /// Close the stream after everything before it is sent.
    Close,
}

/// State of one client. Feed it inbound messages and queue notices; it
/// answers with what to send back.
pub struct Connection {
    ticket: TicketId,
    pipeline: Pipeline,
    catalog: Arc<RwLock<Catalog>>,
    session: Option<Session>,
    speaker: Option<String>,
    frames_in: u64,
    frames_out: u64,
    closed: bool,
}

impl Connection {
    pub fn new(ticket: TicketId, pipeline: Pipeline, catalog: Arc<RwLock<Catalog>>) -> Self {
        Self { ticket, pipeline, catalog, session: None, speaker: None, frames_in: 0, frames_out: 0, closed: false }
    }

    pub fn ticket(&self) -> TicketId {
        self.ticket
    }

    pub fn is_active(&self) -> bool {
        self.session.is_some()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn speaker(&self) -> Option<&str> {
        self.speaker.as_deref()
    }

    fn close(&mut self, mut out: Vec<Outbound>) -> Vec<Outbound> {
        self.closed = true;
        self.session = None;
        out.push(Outbound::Close);
        out
    }

    fn stage_speaker(&mut self, id: &str) -> Result<(), ServerEvent> {
        let catalog = self.catalog.read().unwrap_or_else(|e| e.into_inner());
        let (emb, m_tgt) =
            catalog.get(id).ok_or_else(|| ServerEvent::error(ErrorCode::NotFound, format!("unknown speaker {id}")))?;
        if let Some(session) = &mut self.session {
            session
                .swap_speaker(emb.clone(), m_tgt)
                .map_err(|e| ServerEvent::error(ErrorCode::Internal, e.to_string()))?;
        }
        Ok(())
    }

    pub fn on_notice(&mut self, notice: Notice) -> Vec<Outbound> {
        if self.closed {
            return Vec::new();
        }
        match notice {
            Notice::Queued { id, position } if id == self.ticket => {
                vec![Outbound::Event(ServerEvent::Queue { position })]
            }
            Notice::Active(id) if id == self.ticket => match Session::new(self.pipeline.clone()) {
                Ok(s) => {
                    self.session = Some(s);
                    let mut out = vec![Outbound::Event(ServerEvent::Active)];
                    if let Some(id) = self.speaker.clone() {
                        if let Err(e) = self.stage_speaker(&id) {
                            self.speaker = None;
                            out.push(Outbound::Event(e));
                        }
                    }
                    out
                }
                Err(e) => self.close(vec![Outbound::Event(ServerEvent::error(ErrorCode::Internal, e.to_string()))]),
            },
            Notice::Expired(id) if id == self.ticket => self.close(vec![Outbound::Event(ServerEvent::Expired)]),
            _ => Vec::new(),
        }
    }

    pub fn on_text(&mut self, text: &str) -> Vec<Outbound> {
        if self.closed {
            return Vec::new();
        }
        let msg = match serde_json::from_str::<ClientMessage>(text) {
            Ok(m) => m,
            Err(e) => return vec![Outbound::Event(ServerEvent::error(ErrorCode::Protocol, e.to_string()))],
        };
        match msg {
            // greeting carries no state
            ClientMessage::Hello => Vec::new(),
            ClientMessage::SelectSpeaker { id } => match self.stage_speaker(&id) {
                Ok(()) => {
                    self.speaker = Some(id.clone());
                    vec![Outbound::Event(ServerEvent::Ack { id })]
                }
                Err(e) => vec![Outbound::Event(e)],
            },
            ClientMessage::Stats => vec![Outbound::Event(ServerEvent::Stats {
                frames_in: self.frames_in,
                frames_out: self.frames_out,
                active_speaker: self.speaker.clone(),
            })],
            ClientMessage::Bye => self.close(Vec::new()),
        }
    }

    pub fn on_binary(&mut self, bytes: &[u8]) -> Vec<Outbound> {
        if self.closed {
            return Vec::new();
        }
        let samples = match decode_frame(bytes) {
            Ok(s) => s,
            Err(e) => return self.close(vec![Outbound::Event(ServerEvent::error(ErrorCode::Protocol, e.to_string()))]),
        };
        let Some(session) = &mut self.session else {
            return vec![Outbound::Event(ServerEvent::error(ErrorCode::Unauthorized, "session is not active"))];
        };
        if self.speaker.is_none() {
            return vec![Outbound::Event(ServerEvent::error(ErrorCode::NoSpeaker, "select a speaker first"))];
        }
        self.frames_in += 1;
        match session.process_chunk(&samples) {
            Ok(y) => {
                self.frames_out += 1;
                vec![Outbound::Audio(encode_frame(&y))]
            }
            Err(e) => vec![Outbound::Event(ServerEvent::error(ErrorCode::Internal, e.to_string()))],
        }
    }
}
