//! Wire format: JSON text control messages and fixed-size s16le audio frames.

use serde::{Deserialize, Serialize};

use rtvc_core::wav::{from_i16, to_i16};

/// 240 samples of 16-bit mono audio.
pub const FRAME_SAMPLES: usize = 240;
pub const FRAME_BYTES: usize = FRAME_SAMPLES * 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Hello,
    SelectSpeaker { id: String },
    Stats,
    Bye,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerEvent {
    Queue { position: usize },
    Active,
    Expired,
    Refused { retry_after_s: u64 },
    Ack { id: String },
    Error { code: ErrorCode, message: String },
    /// Frame counters; `frames_out` equals the index the next output frame will carry.
    Stats { frames_in: u64, frames_out: u64, active_speaker: Option<String> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Audio from a connection that does not hold the active session.
    Unauthorized,
    /// Audio before a speaker was selected.
    NoSpeaker,
    NotFound,
    /// Malformed message; binary framing errors also close the stream.
    Protocol,
    Internal,
}

impl ServerEvent {
    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        ServerEvent::Error { code, message: message.into() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("events serialise")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("audio frame has {0} bytes, expected {FRAME_BYTES}")]
pub struct FrameSizeError(pub usize);

pub fn decode_frame(bytes: &[u8]) -> Result<Vec<f32>, FrameSizeError> {
    if bytes.len() != FRAME_BYTES {
        return Err(FrameSizeError(bytes.len()));
    }
    Ok(bytes.chunks_exact(2).map(|b| from_i16(i16::from_le_bytes([b[0], b[1]]))).collect())
}

pub fn encode_frame(samples: &[f32]) -> Vec<u8> {
    samples.iter().flat_map(|&x| to_i16(x).to_le_bytes()).collect()
}
