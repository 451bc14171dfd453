//! Single-active-session ticket queue. Pure state: callers pass the time in.

use std::collections::VecDeque;

pub type TicketId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TicketState {
    /// `position` is 1 for the head of the queue.
    Queued { position: usize },
    Active { started_at_ms: u64 },
    Expired,
}

/// Something a connection must be told.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Notice {
    Active(TicketId),
    Queued { id: TicketId, position: usize },
    Expired(TicketId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueConfig {
    pub ttl_ms: u64,
    /// Active plus queued tickets allowed at once.
    pub max_connections: usize,
    pub position_interval_ms: u64,
}

impl Default for QueueConfig {
    fn default() -> Self {
        Self { ttl_ms: 300_000, max_connections: 16, position_interval_ms: 5_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Refused {
    pub retry_after_s: u64,
}

#[derive(Debug, Clone)]
pub struct TicketQueue {
    cfg: QueueConfig,
    active: Option<(TicketId, u64)>,
    waiting: VecDeque<TicketId>,
    next_id: TicketId,
    last_positions_ms: u64,
}

impl TicketQueue {
    pub fn new(cfg: QueueConfig) -> Self {
        Self { cfg, active: None, waiting: VecDeque::new(), next_id: 1, last_positions_ms: 0 }
    }

    pub fn config(&self) -> &QueueConfig {
        &self.cfg
    }

    pub fn active(&self) -> Option<TicketId> {
        self.active.map(|(id, _)| id)
    }

    pub fn waiting(&self) -> impl Iterator<Item = TicketId> + '_ {
        self.waiting.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.waiting.len() + self.active.is_some() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// State of a live ticket; `None` once it has left the queue.
    pub fn state(&self, id: TicketId) -> Option<TicketState> {
        match self.active {
            Some((a, t)) if a == id => return Some(TicketState::Active { started_at_ms: t }),
            _ => {}
        }
        self.waiting.iter().position(|&w| w == id).map(|p| TicketState::Queued { position: p + 1 })
    }

    pub fn connect(&mut self, now_ms: u64) -> Result<(TicketId, Notice), Refused> {
        if self.len() >= self.cfg.max_connections {
            let remaining = self.active.map_or(self.cfg.ttl_ms, |(_, t)| (t + self.cfg.ttl_ms).saturating_sub(now_ms));
            return Err(Refused { retry_after_s: remaining.div_ceil(1000).max(1) });
        }
        let id = self.next_id;
        self.next_id += 1;
        if self.active.is_none() {
            self.active = Some((id, now_ms));
            Ok((id, Notice::Active(id)))
        } else {
            self.waiting.push_back(id);
            Ok((id, Notice::Queued { id, position: self.waiting.len() }))
        }
    }

    fn promote(&mut self, now_ms: u64, out: &mut Vec<Notice>) {
        if self.active.is_none() {
            if let Some(next) = self.waiting.pop_front() {
                self.active = Some((next, now_ms));
                out.push(Notice::Active(next));
                out.extend(self.positions());
            }
        }
    }

    fn positions(&self) -> impl Iterator<Item = Notice> + '_ {
        self.waiting.iter().enumerate().map(|(i, &id)| Notice::Queued { id, position: i + 1 })
    }

    /// Remove a ticket, promoting the queue head if it was active.
    pub fn disconnect(&mut self, id: TicketId, now_ms: u64) -> Vec<Notice> {
        let mut out = Vec::new();
        if self.active() == Some(id) {
            self.active = None;
            self.promote(now_ms, &mut out);
        } else if let Some(p) = self.waiting.iter().position(|&w| w == id) {
            self.waiting.remove(p);
            out.extend(self.positions().skip(p));
        }
        out
    }

    /// Expire an active session whose age has reached the TTL.
    pub fn expire(&mut self, now_ms: u64) -> Vec<Notice> {
        let mut out = Vec::new();
        if let Some((id, started)) = self.active {
            if now_ms.saturating_sub(started) >= self.cfg.ttl_ms {
                self.active = None;
                out.push(Notice::Expired(id));
                self.promote(now_ms, &mut out);
            }
        }
        out
    }

    /// Periodic position reminders for everyone waiting.
    pub fn position_updates(&mut self, now_ms: u64) -> Vec<Notice> {
        if now_ms.saturating_sub(self.last_positions_ms) < self.cfg.position_interval_ms {
            return Vec::new();
        }
        self.last_positions_ms = now_ms;
        self.positions().collect()
    }

    /// Expiry then position reminders.
    pub fn tick(&mut self, now_ms: u64) -> Vec<Notice> {
        let mut out = self.expire(now_ms);
        out.extend(self.position_updates(now_ms));
        out
    }
}
