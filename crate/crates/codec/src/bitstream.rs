//! Bitstream container: a fixed header followed by per-frame chunk lists.
//!
//! Every chunk is a little-endian `u32` byte length plus payload, so a
//! decoder can skip or validate structure without entropy-decoding. An
//! I-frame carries two chunks (hyper, main); a P-frame carries three
//! (motion, residual hyper, residual main).

use crate::error::{CodecError, Result};

pub const MAGIC: [u8; 4] = *b"ENVC";
pub const VERSION: u8 = 1;
pub const FLAG_AR: u8 = 0x01;

pub const FRAME_INTRA: u8 = b'I';
pub const FRAME_PREDICTED: u8 = b'P';

/// Sequence-level header written once at the start of the stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub ar: bool,
    pub width: u16,
    pub height: u16,
    pub gop: u8,
    pub frame_count: u32,
    pub lambda_index: u8,
    pub checkpoint_id: u64,
}

pub const HEADER_LEN: usize = 4 + 1 + 1 + 2 + 2 + 1 + 4 + 1 + 8;

impl Header {
    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(if self.ar { FLAG_AR } else { 0 });
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.gop);
        out.extend_from_slice(&self.frame_count.to_le_bytes());
        out.push(self.lambda_index);
        out.extend_from_slice(&self.checkpoint_id.to_le_bytes());
    }

    pub fn parse(buf: &[u8]) -> Result<Header> {
        if buf.len() < HEADER_LEN {
            return Err(CodecError::format(format!(
                "stream header needs {HEADER_LEN} bytes, got {}",
                buf.len()
            )));
        }
        if buf[0..4] != MAGIC {
            return Err(CodecError::format("bad magic, not an ENVC stream"));
        }
        if buf[4] != VERSION {
            return Err(CodecError::format(format!(
                "unsupported stream version {} (expected {VERSION})",
                buf[4]
            )));
        }
        let flags = buf[5];
        if flags & !FLAG_AR != 0 {
            return Err(CodecError::format(format!("unknown flag bits {flags:#04x}")));
        }
        Ok(Header {
            ar: flags & FLAG_AR != 0,
            width: u16::from_le_bytes([buf[6], buf[7]]),
            height: u16::from_le_bytes([buf[8], buf[9]]),
            gop: buf[10],
            frame_count: u32::from_le_bytes([buf[11], buf[12], buf[13], buf[14]]),
            lambda_index: buf[15],
            checkpoint_id: u64::from_le_bytes(buf[16..24].try_into().unwrap()),
        })
    }
}

pub fn write_chunk(out: &mut Vec<u8>, payload: &[u8]) {
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
}

/// Cursor over an encoded stream.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn header(&mut self) -> Result<Header> {
        let h = Header::parse(&self.buf[self.pos..])?;
        self.pos += HEADER_LEN;
        Ok(h)
    }

    pub fn frame_type(&mut self) -> Result<u8> {
        let b = *self
            .buf
            .get(self.pos)
            .ok_or_else(|| CodecError::stream("stream ends before a frame type byte"))?;
        if b != FRAME_INTRA && b != FRAME_PREDICTED {
            return Err(CodecError::stream(format!(
                "unknown frame type {b:#04x} at byte {}",
                self.pos
            )));
        }
        self.pos += 1;
        Ok(b)
    }

    pub fn chunk(&mut self) -> Result<&'a [u8]> {
        if self.remaining() < 4 {
            return Err(CodecError::stream(format!(
                "stream ends inside a chunk length at byte {}",
                self.pos
            )));
        }
        let len = u32::from_le_bytes(self.buf[self.pos..self.pos + 4].try_into().unwrap()) as usize;
        self.pos += 4;
        if self.remaining() < len {
            return Err(CodecError::stream(format!(
                "chunk of {len} bytes at byte {} overruns the stream",
                self.pos
            )));
        }
        let payload = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(payload)
    }

    pub fn expect_end(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(CodecError::stream(format!(
                "{} trailing bytes after the last frame",
                self.remaining()
            )));
        }
        Ok(())
    }
}
