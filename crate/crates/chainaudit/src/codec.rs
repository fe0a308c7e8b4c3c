//! Canonical byte encoding.
//!
//! One encoding serves four jobs: signature messages, content digests,
//! contract call bodies, and on-disk trace records. Fields appear in a fixed
//! order, variable-length fields carry a big-endian `u32` length prefix, and
//! enums are single tag bytes, so encoding is injective and stable across
//! runs and platforms.
//!
//! Layouts, with all integers big-endian:
//!
//! ```text
//! operation   := nonce:u128 address:[u8;20] role:u8 kind:u8
//!                key_len:u32 key value_digest:[u8;32]
//!                t_begin:u64 t_end:u64 sig_flags:u8
//!                [client_sig:[u8;32]] [server_sig:[u8;32]]
//! attestation := epoch:u64 address:[u8;20] role:u8 total_order:u8
//!                op_count:u32 operation* sig:[u8;32]
//! trace file  := "CATRACE1" (record_len:u32 operation)*
//! ```

use thiserror::Error;

use crate::sig::Signature;
use crate::types::{Address, Attestation, Digest, Epoch, OpKind, Operation, PartyId, Role};

/// Magic bytes opening a trace file.
pub const TRACE_MAGIC: &[u8; 8] = b"CATRACE1";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("input ended after {0} bytes, needed more")]
    UnexpectedEof(usize),
    #[error("unknown tag {value} for {field}")]
    BadTag { field: &'static str, value: u8 },
    #[error("{0} trailing bytes after a complete record")]
    TrailingBytes(usize),
    #[error("missing trace file magic")]
    BadMagic,
    #[error("declared length {0} exceeds remaining input")]
    BadLength(u32),
}

pub struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    pub fn new() -> Self {
        Encoder { buf: Vec::new() }
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u128(&mut self, v: u128) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn fixed(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

impl Default for Encoder {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Decoder<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        Decoder { input, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.input.len() {
            return Err(CodecError::UnexpectedEof(self.pos));
        }
        let s = &self.input[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn u128(&mut self) -> Result<u128, CodecError> {
        Ok(u128::from_be_bytes(self.take(16)?.try_into().unwrap()))
    }

    pub fn fixed<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, CodecError> {
        let len = self.u32()?;
        if self.pos + len as usize > self.input.len() {
            return Err(CodecError::BadLength(len));
        }
        Ok(self.take(len as usize)?.to_vec())
    }

    pub fn remaining(&self) -> usize {
        self.input.len() - self.pos
    }

    /// Reads a u32 element count, rejecting values the remaining input
    /// could not possibly hold at `min_element` bytes apiece, so a
    /// corrupted count fails here instead of driving a huge preallocation.
    pub fn count(&mut self, min_element: usize) -> Result<usize, CodecError> {
        let n = self.u32()?;
        if n as usize > self.remaining() / min_element.max(1) {
            return Err(CodecError::BadLength(n));
        }
        Ok(n as usize)
    }

    /// Consumes and returns everything left in the input.
    pub fn take_rest(&mut self) -> Vec<u8> {
        let rest = self.input[self.pos..].to_vec();
        self.pos = self.input.len();
        rest
    }

    pub fn expect_end(&self) -> Result<(), CodecError> {
        if self.remaining() > 0 {
            return Err(CodecError::TrailingBytes(self.remaining()));
        }
        Ok(())
    }
}

fn role_from_tag(v: u8) -> Result<Role, CodecError> {
    match v {
        0 => Ok(Role::Client),
        1 => Ok(Role::Server),
        2 => Ok(Role::IdentityProvider),
        _ => Err(CodecError::BadTag {
            field: "role",
            value: v,
        }),
    }
}

fn kind_from_tag(v: u8) -> Result<OpKind, CodecError> {
    match v {
        0 => Ok(OpKind::Read),
        1 => Ok(OpKind::Write),
        _ => Err(CodecError::BadTag {
            field: "kind",
            value: v,
        }),
    }
}

pub fn encode_operation_into(enc: &mut Encoder, op: &Operation) {
    enc.u128(op.nonce);
    enc.fixed(&op.client.address.0);
    enc.u8(op.client.role.tag());
    enc.u8(op.kind.tag());
    enc.bytes(&op.key);
    enc.fixed(&op.value_digest.0);
    enc.u64(op.t_begin);
    enc.u64(op.t_end);
    let flags =
        (op.client_sig.is_some() as u8) | ((op.server_sig.is_some() as u8) << 1);
    enc.u8(flags);
    if let Some(s) = &op.client_sig {
        enc.fixed(&s.0);
    }
    if let Some(s) = &op.server_sig {
        enc.fixed(&s.0);
    }
}

pub fn encode_operation(op: &Operation) -> Vec<u8> {
    let mut enc = Encoder::new();
    encode_operation_into(&mut enc, op);
    enc.finish()
}

pub fn decode_operation_from(dec: &mut Decoder) -> Result<Operation, CodecError> {
    let nonce = dec.u128()?;
    let address = Address(dec.fixed::<20>()?);
    let role = role_from_tag(dec.u8()?)?;
    let kind = kind_from_tag(dec.u8()?)?;
    let key = dec.bytes()?;
    let value_digest = Digest(dec.fixed::<32>()?);
    let t_begin = dec.u64()?;
    let t_end = dec.u64()?;
    let flags = dec.u8()?;
    if flags > 3 {
        return Err(CodecError::BadTag {
            field: "sig_flags",
            value: flags,
        });
    }
    let client_sig = if flags & 1 != 0 {
        Some(Signature(dec.fixed::<32>()?))
    } else {
        None
    };
    let server_sig = if flags & 2 != 0 {
        Some(Signature(dec.fixed::<32>()?))
    } else {
        None
    };
    Ok(Operation {
        nonce,
        client: PartyId::new(address, role),
        kind,
        key,
        value_digest,
        t_begin,
        t_end,
        client_sig,
        server_sig,
    })
}

pub fn decode_operation(bytes: &[u8]) -> Result<Operation, CodecError> {
    let mut dec = Decoder::new(bytes);
    let op = decode_operation_from(&mut dec)?;
    dec.expect_end()?;
    Ok(op)
}

/// Bytes covered by the attestation signature: everything except the
/// signature itself, under an `attest` domain prefix.
pub fn attestation_message(a: &Attestation) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.fixed(b"attest\0");
    encode_attestation_body(&mut enc, a);
    enc.finish()
}

fn encode_attestation_body(enc: &mut Encoder, a: &Attestation) {
    enc.u64(a.epoch);
    enc.fixed(&a.party.address.0);
    enc.u8(a.party.role.tag());
    enc.u8(a.total_order_declared as u8);
    enc.u32(a.ops.len() as u32);
    for op in &a.ops {
        encode_operation_into(enc, op);
    }
}

pub fn encode_attestation(a: &Attestation) -> Vec<u8> {
    let mut enc = Encoder::new();
    encode_attestation_body(&mut enc, a);
    enc.fixed(&a.sig.0);
    enc.finish()
}

pub fn decode_attestation(bytes: &[u8]) -> Result<Attestation, CodecError> {
    let mut dec = Decoder::new(bytes);
    let epoch: Epoch = dec.u64()?;
    let address = Address(dec.fixed::<20>()?);
    let role = role_from_tag(dec.u8()?)?;
    let total_order_declared = match dec.u8()? {
        0 => false,
        1 => true,
        v => {
            return Err(CodecError::BadTag {
                field: "total_order",
                value: v,
            })
        }
    };
    let count = dec.count(32)?;
    let mut ops = Vec::with_capacity(count);
    for _ in 0..count {
        ops.push(decode_operation_from(&mut dec)?);
    }
    let sig = Signature(dec.fixed::<32>()?);
    dec.expect_end()?;
    Ok(Attestation {
        epoch,
        party: PartyId::new(address, role),
        ops,
        total_order_declared,
        sig,
    })
}

/// Writes a trace file: magic followed by length-prefixed operation records.
pub fn encode_trace(ops: &[Operation]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(TRACE_MAGIC);
    for op in ops {
        let rec = encode_operation(op);
        out.extend_from_slice(&(rec.len() as u32).to_be_bytes());
        out.extend_from_slice(&rec);
    }
    out
}

pub fn decode_trace(bytes: &[u8]) -> Result<Vec<Operation>, CodecError> {
    if bytes.len() < TRACE_MAGIC.len() || &bytes[..TRACE_MAGIC.len()] != TRACE_MAGIC {
        return Err(CodecError::BadMagic);
    }
    let mut dec = Decoder::new(&bytes[TRACE_MAGIC.len()..]);
    let mut ops = Vec::new();
    while dec.remaining() > 0 {
        let rec = dec.bytes()?;
        ops.push(decode_operation(&rec)?);
    }
    Ok(ops)
}
