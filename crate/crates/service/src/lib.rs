//! Streaming conversion server: one active session at a time, a FIFO
//! queue for everyone else, and a speaker catalog.
//!
//! Clients talk over a single WebSocket at `/ws`. Text messages carry JSON
//! control ([`ClientMessage`] in, [`ServerEvent`] out); binary messages are
//! 480-byte frames of 240 little-endian `i16` samples at 16 kHz, answered one
//! for one.

pub mod catalog;
pub mod connection;
pub mod protocol;
pub mod queue;
pub mod server;

pub use catalog::{Catalog, CatalogEntry, SpeakerInfo};
pub use connection::{Connection, Outbound};
pub use protocol::{ClientMessage, ErrorCode, ServerEvent, FRAME_BYTES, FRAME_SAMPLES};
pub use queue::{Notice, QueueConfig, TicketId, TicketQueue, TicketState};
pub use server::{router, serve, AppState, ServerConfig};
